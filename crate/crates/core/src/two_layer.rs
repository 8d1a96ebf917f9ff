//! Per-bin learner combining beam-pair selection with per-pair refinement.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array_codebook::Codebook;
use crate::channel::{pair_beams, PairEvaluator};
use crate::error::{Error, Result};
use crate::metrics::StepRecord;
use crate::offline_db::{screen_candidates, OfflineDatabase};
use crate::refinement::{LeafBandit, PairBeamwidths, PairDirections, RefinementConfig, RefinementTree, TreeSnapshot};
use crate::selection::{select_greedy_ucb, select_risk_aware, Rejection, SelectionConfig, SelectionState};

/// When a selected pair starts being refined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RefinePolicy {
    /// From the first time it is selected.
    All,
    /// Once it has collected a reward.
    AfterReward,
    /// From step `n0` on.
    AfterN(u64),
}

impl std::str::FromStr for RefinePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "after-reward" => Ok(Self::AfterReward),
            other => other
                .strip_prefix("after-n:")
                .and_then(|n| n.parse().ok())
                .map(Self::AfterN)
                .ok_or_else(|| Error::Config(format!("unknown policy {other:?}; use all, after-reward or after-n:<steps>"))),
        }
    }
}

impl TryFrom<String> for RefinePolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RefinePolicy> for String {
    fn from(p: RefinePolicy) -> String {
        p.to_string()
    }
}

impl std::fmt::Display for RefinePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::All => write!(f, "all"),
            Self::AfterReward => write!(f, "after-reward"),
            Self::AfterN(n) => write!(f, "after-n:{n}"),
        }
    }
}

/// Search strategy used inside each pair's refinement region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefinerKind {
    Hoo,
    /// Norm-UCB over the deepest tree nodes, ignoring the hierarchy.
    Flat,
}

#[derive(Debug, Clone)]
pub enum Refiner {
    Hoo(RefinementTree),
    Flat(LeafBandit),
}

impl Refiner {
    fn step(&mut self, measure: impl FnOnce(&PairDirections) -> f64) -> f64 {
        match self {
            Self::Hoo(t) => t.step(measure).1,
            Self::Flat(b) => b.step(measure).1,
        }
    }

    /// Current exploitation choice.
    pub fn best_arm(&self, root: PairDirections) -> PairDirections {
        match self {
            Self::Hoo(t) => t.best_arm(),
            Self::Flat(b) => b.best_arm().map_or(root, |i| b.arms[i]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RefinerSnapshot {
    Hoo(TreeSnapshot),
    Flat { pair: usize, bandit: LeafBandit },
}

/// Transmit and receive codebooks shared by every learner.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSpace {
    pub tx: Codebook,
    pub rx: Codebook,
}

impl BeamSpace {
    pub fn n_pairs(&self) -> usize {
        self.tx.len() * self.rx.len()
    }

    pub fn directions(&self, pair: usize) -> PairDirections {
        let (t, r) = pair_beams(pair, self.rx.len());
        PairDirections { tx: self.tx.beams[t].direction, rx: self.rx.beams[r].direction }
    }

    pub fn beamwidths(&self, pair: usize) -> PairBeamwidths {
        let (t, r) = pair_beams(pair, self.rx.len());
        PairBeamwidths::of(&self.tx.beams[t], &self.rx.beams[r])
    }
}

#[derive(Debug, Clone)]
pub struct BinLearner {
    pub space: Arc<BeamSpace>,
    pub selection: SelectionState,
    pub trees: BTreeMap<usize, Refiner>,
    pub kind: RefinerKind,
    pub sel_cfg: SelectionConfig,
    pub ref_cfg: RefinementConfig,
    pub policy: RefinePolicy,
    pub refine: bool,
}

/// Per-step result: the logged record and every measurement taken.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub record: StepRecord,
    /// `(pair, strength, refined)` per selected pair, in selection order.
    pub measurements: Vec<(usize, f64, bool)>,
}

impl BinLearner {
    /// Screens the database down to the pairs appearing in the top `c` of
    /// some observation and seeds the selector with their averages.
    pub fn from_database(
        space: Arc<BeamSpace>,
        db: &OfflineDatabase,
        c: usize,
        sel_cfg: SelectionConfig,
        ref_cfg: RefinementConfig,
        policy: RefinePolicy,
        refine: bool,
    ) -> Result<Self> {
        if db.n_pairs != space.n_pairs() {
            return Err(Error::Invalid("database and codebooks cover different pairs".into()));
        }
        let candidates = screen_candidates(db, c);
        let avg = db.averages();
        let seeds: Vec<f64> = candidates.iter().map(|&p| avg[p]).collect();
        let selection = SelectionState::new(candidates, &seeds, db.rows.len() as f64)?;
        sel_cfg.validate(selection.n_arms())?;
        ref_cfg.validate()?;
        Ok(Self { space, selection, trees: BTreeMap::new(), kind: RefinerKind::Hoo, sel_cfg, ref_cfg, policy, refine })
    }

    fn eligible(&self, arm: usize, step: u64) -> bool {
        self.refine
            && match self.policy {
                RefinePolicy::All => true,
                RefinePolicy::AfterReward => self.selection.x_tot[arm] > 0,
                RefinePolicy::AfterN(n0) => step >= n0,
            }
    }

    /// One alignment attempt against the realization behind `ev`.
    /// `gamma_best` is the unrefined exhaustive-search optimum.
    pub fn alignment_step<R: Rng + ?Sized>(&mut self, ev: &PairEvaluator, gamma_best: f64, rng: &mut R) -> StepOutcome {
        let step = self.selection.next_step();
        let selected = if self.sel_cfg.risk_aware {
            select_risk_aware(&self.selection, self.sel_cfg.budget, &Rejection::BetaPosterior, rng).0
        } else {
            select_greedy_ucb(&self.selection, self.sel_cfg.budget)
        };
        let mut gammas = Vec::with_capacity(selected.len());
        let mut measurements = Vec::with_capacity(selected.len());
        for &arm in &selected {
            let pair = self.selection.candidates[arm];
            let refined = self.eligible(arm, step);
            let gamma = if refined {
                let (space, cfg, kind) = (&self.space, self.ref_cfg, self.kind);
                let refiner = self.trees.entry(pair).or_insert_with(|| {
                    let (root, bw) = (space.directions(pair), space.beamwidths(pair));
                    match kind {
                        RefinerKind::Hoo => Refiner::Hoo(
                            RefinementTree::new(pair, root, bw, cfg, &space.tx.geometry, &space.rx.geometry)
                                .expect("configuration validated at construction"),
                        ),
                        RefinerKind::Flat => Refiner::Flat(LeafBandit::on_tree_leaves(&root, &bw, cfg)),
                    }
                });
                refiner.step(|d| ev.strength(d.tx, d.rx))
            } else {
                let d = self.space.directions(pair);
                ev.strength(d.tx, d.rx)
            };
            gammas.push(gamma);
            measurements.push((pair, gamma, refined));
        }
        self.selection.update_after_training(&selected, &gammas, self.sel_cfg.risk_threshold_db);
        let served = measurements.iter().fold(measurements[0], |a, m| if m.1 > a.1 { *m } else { a });
        StepOutcome {
            record: StepRecord { step: step as usize, selected_pair: served.0, gamma_selected: served.1, gamma_best },
            measurements,
        }
    }

    /// Pairs ranked by learned win rate, best first, lowest index on ties.
    pub fn ranked_pairs(&self) -> Vec<usize> {
        let s = &self.selection;
        let mut arms: Vec<usize> = (0..s.n_arms()).collect();
        arms.sort_by(|&a, &b| s.p_opt_hat(b).total_cmp(&s.p_opt_hat(a)).then(a.cmp(&b)));
        arms.into_iter().map(|a| s.candidates[a]).collect()
    }

    pub fn checkpoint(&self) -> LearnerCheckpoint {
        LearnerCheckpoint {
            selection: self.selection.clone(),
            trees: self
                .trees
                .iter()
                .map(|(&pair, r)| match r {
                    Refiner::Hoo(t) => RefinerSnapshot::Hoo(t.snapshot()),
                    Refiner::Flat(b) => RefinerSnapshot::Flat { pair, bandit: b.clone() },
                })
                .collect(),
            kind: self.kind,
            policy: self.policy,
            refine: self.refine,
        }
    }

    pub fn restore(&mut self, cp: &LearnerCheckpoint) -> Result<()> {
        self.selection = cp.selection.clone();
        self.trees = cp
            .trees
            .iter()
            .map(|snap| match snap {
                RefinerSnapshot::Hoo(t) => RefinementTree::from_snapshot(t).map(|tree| (tree.pair, Refiner::Hoo(tree))),
                RefinerSnapshot::Flat { pair, bandit } => Ok((*pair, Refiner::Flat(bandit.clone()))),
            })
            .collect::<Result<_>>()?;
        self.kind = cp.kind;
        self.policy = cp.policy;
        self.refine = cp.refine;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerCheckpoint {
    pub selection: SelectionState,
    pub trees: Vec<RefinerSnapshot>,
    pub kind: RefinerKind,
    pub policy: RefinePolicy,
    pub refine: bool,
}
