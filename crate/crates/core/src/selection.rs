//! Multiple-play beam-pair selection: greedy UCB and its risk-aware variant.
//!
//! Arms are addressed by their position in the candidate list; the list maps
//! them back to beam-pair indices.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::from_db;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub budget: usize,
    pub risk_threshold_db: f64,
    pub risk_aware: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { budget: 30, risk_threshold_db: 5.0, risk_aware: true }
    }
}

impl SelectionConfig {
    pub fn validate(&self, n_arms: usize) -> Result<()> {
        if self.budget == 0 || self.budget > n_arms {
            return Err(Error::Config(format!("budget {} must lie in 1..={n_arms}", self.budget)));
        }
        if !(self.risk_threshold_db > 0.0) {
            return Err(Error::Config("risk_threshold_db must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    /// Beam-pair index of each arm, ascending.
    pub candidates: Vec<usize>,
    pub x_tot: Vec<u64>,
    pub z_tot: Vec<u64>,
    pub t: Vec<u64>,
    /// Running average strength, seeded with the offline averages.
    pub gamma_bar: Vec<f64>,
    /// Number of samples behind each running average.
    pub gamma_weight: Vec<f64>,
    /// Completed steps.
    pub n: u64,
}

/// How a UCB proposal is vetted in the risk-aware selector.
#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    /// Never reject; the selector reduces to plain greedy UCB.
    Never,
    /// Draw the risk from the Beta posterior and scale it by the margin.
    BetaPosterior,
    /// Accept arm `i` with the fixed probability `accept[i]`.
    Fixed(Vec<f64>),
}

/// One UCB proposal and what became of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Proposal {
    pub arm: usize,
    pub accepted: bool,
    /// Arm that took the slot (the proposal itself when accepted).
    pub placed: usize,
}

impl SelectionState {
    /// Fresh state: every arm trained once, the arm with the strongest
    /// offline average holds the only reward.
    pub fn new(candidates: Vec<usize>, offline_averages: &[f64], offline_weight: f64) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Invalid("empty candidate set".into()));
        }
        if offline_averages.len() != candidates.len() {
            return Err(Error::Invalid("one offline average per candidate required".into()));
        }
        let k = candidates.len();
        let mut x_tot = vec![0; k];
        x_tot[argmax(offline_averages.iter().copied())] = 1;
        Ok(Self {
            candidates,
            x_tot,
            z_tot: vec![0; k],
            t: vec![1; k],
            gamma_bar: offline_averages.to_vec(),
            gamma_weight: vec![offline_weight; k],
            n: 0,
        })
    }

    pub fn n_arms(&self) -> usize {
        self.candidates.len()
    }

    /// Step number used by the next selection (1-based).
    pub fn next_step(&self) -> u64 {
        self.n + 1
    }

    pub fn p_opt_hat(&self, i: usize) -> f64 {
        self.x_tot[i] as f64 / self.t[i] as f64
    }

    pub fn ucb_index(&self, i: usize, n: u64) -> f64 {
        ucb(self.x_tot[i], self.t[i], n)
    }

    /// Records a training round with measured strengths: the strongest arm
    /// is rewarded and every arm more than `risk_threshold_db` below it
    /// collects a risk count. An all-zero round only counts the training.
    pub fn update_after_training(&mut self, selected: &[usize], gammas: &[f64], risk_threshold_db: f64) {
        assert_eq!(selected.len(), gammas.len(), "one measurement per selected arm");
        for (&i, &g) in selected.iter().zip(gammas) {
            self.t[i] += 1;
            let w = self.gamma_weight[i];
            self.gamma_bar[i] = (self.gamma_bar[i] * w + g) / (w + 1.0);
            self.gamma_weight[i] = w + 1.0;
        }
        let best = gammas.iter().copied().fold(0.0, f64::max);
        if best > 0.0 {
            // lowest arm index wins ties
            let winner = selected
                .iter()
                .zip(gammas)
                .filter(|(_, &g)| g == best)
                .map(|(&i, _)| i)
                .min()
                .expect("a maximum exists");
            self.x_tot[winner] += 1;
            let limit = from_db(risk_threshold_db);
            for (&i, &g) in selected.iter().zip(gammas) {
                if g == 0.0 || best / g > limit {
                    self.z_tot[i] += 1;
                }
            }
        }
        self.n += 1;
    }

    /// Records a round under the ideal reward: only the true best arm, if it
    /// was trained, is rewarded.
    pub fn update_with_ideal_reward(&mut self, selected: &[usize], best_arm: Option<usize>) {
        for &i in selected {
            self.t[i] += 1;
        }
        if let Some(b) = best_arm {
            if selected.contains(&b) {
                self.x_tot[b] += 1;
            }
        }
        self.n += 1;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Invalid(e.to_string()))
    }
}

pub fn ucb(x_tot: u64, t: u64, n: u64) -> f64 {
    x_tot as f64 / t as f64 + (2.0 * (n as f64).ln() / t as f64).sqrt()
}

/// Index of the largest value; the first one wins ties.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Best arm by `score` among arms where `allowed` holds; lowest index on ties.
fn best_among(n: usize, allowed: impl Fn(usize) -> bool, score: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in (0..n).filter(|&i| allowed(i)) {
        let s = score(i);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|b| b.0)
}

/// The `budget` arms with the highest UCB, picked one at a time.
pub fn select_greedy_ucb(state: &SelectionState, budget: usize) -> Vec<usize> {
    let n = state.next_step();
    let mut order: Vec<usize> = (0..state.n_arms()).collect();
    let u: Vec<f64> = order.iter().map(|&i| state.ucb_index(i, n)).collect();
    order.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
    order.truncate(budget);
    order
}

/// Risk-aware greedy selection. Each slot takes the UCB leader among arms
/// not yet placed or rejected this step; a rejected leader's slot goes to
/// the unplaced arm with the best empirical win rate (or, when no unplaced
/// arm has won yet, the best running-average strength).
pub fn select_risk_aware<R: Rng + ?Sized>(
    state: &SelectionState,
    budget: usize,
    rejection: &Rejection,
    rng: &mut R,
) -> (Vec<usize>, Vec<Proposal>) {
    let k = state.n_arms();
    let n = state.next_step();
    let ln_n = (n as f64).ln();
    let ucb: Vec<f64> = (0..k).map(|i| state.ucb_index(i, n)).collect();
    let mut placed = vec![false; k];
    let mut rejected = vec![false; k];
    let mut selected = Vec::with_capacity(budget);
    let mut proposals = Vec::with_capacity(budget);
    while selected.len() < budget {
        let leader = best_among(k, |i| !placed[i] && !rejected[i], |i| ucb[i]);
        let accepted = match leader {
            None => false,
            Some(l) => match rejection {
                Rejection::Never => true,
                Rejection::Fixed(accept) => !rng.random_bool((1.0 - accept[l]).clamp(0.0, 1.0)),
                Rejection::BetaPosterior => {
                    let (z, t) = (state.z_tot[l] as f64, state.t[l] as f64);
                    let draw = Beta::new(1.0 + z, 1.0 + t - z).expect("positive shape parameters").sample(rng);
                    let risk = if state.x_tot[l] > 0 { draw * (2.0 * ln_n / t).sqrt() } else { draw };
                    !rng.random_bool(risk.clamp(0.0, 1.0))
                }
            },
        };
        let slot = if accepted {
            leader.expect("accepted implies a leader")
        } else {
            if let Some(l) = leader {
                rejected[l] = true;
            }
            let any_won = (0..k).any(|i| !placed[i] && state.x_tot[i] > 0);
            if any_won {
                best_among(k, |i| !placed[i], |i| state.p_opt_hat(i))
            } else {
                best_among(k, |i| !placed[i], |i| state.gamma_bar[i])
            }
            .expect("budget does not exceed the arm count")
        };
        placed[slot] = true;
        selected.push(slot);
        if let Some(l) = leader {
            proposals.push(Proposal { arm: l, accepted, placed: slot });
        }
    }
    (selected, proposals)
}
