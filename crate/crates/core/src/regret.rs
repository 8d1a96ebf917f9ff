//! Synthetic multiple-play bandit with ideal one-hot rewards, used to check
//! the empirical regret of both selectors against their logarithmic bounds.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::{select_risk_aware, Rejection, SelectionState};

/// Lower-tail Chernoff constant used by the risk-aware bound.
pub fn chernoff_delta() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBanditSpec {
    pub p_opt: Vec<f64>,
    pub budget: usize,
    pub horizon: usize,
    /// Acceptance probability of each suboptimal arm; optimal arms are
    /// always accepted. `None` runs plain greedy UCB.
    pub acceptance: Option<Vec<f64>>,
    /// Replacement gap as a fraction of the rejected arm's gap.
    pub replacement_ratio: f64,
}

impl SyntheticBanditSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p_opt.iter().any(|p| !(0.0..=1.0).contains(p)) || self.p_opt.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Config("probabilities must lie in [0,1] and sum to at most 1".into()));
        }
        if self.budget == 0 || self.budget > self.p_opt.len() {
            return Err(Error::Config("budget must lie in 1..=arms".into()));
        }
        if let Some(z) = &self.acceptance {
            if z.len() != self.p_opt.len() || z.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
                return Err(Error::Config("one acceptance probability in (0,1] per arm".into()));
            }
        }
        Ok(())
    }

    /// Arms sorted by decreasing probability, lowest index first on ties;
    /// the first `budget` are the optimal set.
    fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.p_opt.len()).collect();
        idx.sort_by(|&a, &b| self.p_opt[b].total_cmp(&self.p_opt[a]).then(a.cmp(&b)));
        idx
    }

    pub fn optimal_set(&self) -> Vec<usize> {
        let mut s = self.ranking();
        s.truncate(self.budget);
        s
    }

    pub fn suboptimal_set(&self) -> Vec<usize> {
        self.ranking().split_off(self.budget)
    }

    /// All gaps between an optimal and a suboptimal arm.
    pub fn gaps(&self) -> Vec<(usize, usize, f64)> {
        let opt = self.optimal_set();
        let mut out = Vec::new();
        for &l in &self.suboptimal_set() {
            for &i in &opt {
                out.push((l, i, self.p_opt[i] - self.p_opt[l]));
            }
        }
        out
    }

    fn zeta(&self, arm: usize) -> f64 {
        self.acceptance.as_ref().map_or(1.0, |z| z[arm])
    }
}

/// Categorical draw of the round's best arm; `None` with the leftover mass.
pub fn ideal_reward_draw<R: Rng + ?Sized>(spec: &SyntheticBanditSpec, rng: &mut R) -> Option<usize> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in spec.p_opt.iter().enumerate() {
        acc += p;
        if u < acc {
            return Some(i);
        }
    }
    None
}

fn checked_gaps(spec: &SyntheticBanditSpec) -> Result<Vec<(usize, usize, f64)>> {
    let gaps = spec.gaps();
    if gaps.iter().any(|g| !(g.2 > 0.0)) {
        return Err(Error::Invalid("zero optimality gap: the bound diverges".into()));
    }
    Ok(gaps)
}

pub fn theorem1_bound(spec: &SyntheticBanditSpec, n: f64) -> Result<f64> {
    let gaps = checked_gaps(spec)?;
    let inv: f64 = gaps.iter().map(|g| 1.0 / g.2).sum();
    let lin: f64 = gaps.iter().map(|g| g.2).sum();
    Ok(8.0 * n.ln() * inv + (1.0 + PI * PI / 3.0) * lin)
}

pub fn theorem2_bound(spec: &SyntheticBanditSpec, n: f64) -> Result<f64> {
    let gaps = checked_gaps(spec)?;
    let d2 = chernoff_delta().powi(2);
    let ln_n = n.ln();
    let (mut first, mut second, mut third) = (0.0, 0.0, 0.0);
    for &(l, _, d) in &gaps {
        let z = spec.zeta(l);
        if z <= 0.0 {
            return Err(Error::Invalid("zero acceptance probability".into()));
        }
        let dt = spec.replacement_ratio * d;
        first += 1.0 / d;
        second += (1.0 - z) * dt / (z * d * d);
        third += z * d + (1.0 - z) * dt;
    }
    Ok(8.0 * ln_n / d2 * first + 8.0 * ln_n / d2 * second + (1.0 + PI * PI / 2.0) * third)
}

/// Regret of one round. Suboptimal proposals are matched in order with the
/// optimal arms that were not proposed (smallest gap first); an accepted
/// proposal costs its gap and a rejected one the replacement gap.
fn round_regret(spec: &SyntheticBanditSpec, optimal: &[bool], proposals: &[(usize, bool)]) -> f64 {
    let proposed: Vec<usize> = proposals.iter().map(|p| p.0).collect();
    let mut missing: Vec<usize> = (0..spec.p_opt.len()).filter(|&i| optimal[i] && !proposed.contains(&i)).collect();
    missing.sort_by(|&a, &b| spec.p_opt[a].total_cmp(&spec.p_opt[b]).then(a.cmp(&b)));
    let mut missing = missing.into_iter();
    let mut cost = 0.0;
    for &(l, accepted) in proposals.iter().filter(|p| !optimal[p.0]) {
        let i = missing.next().expect("each suboptimal proposal displaces one optimal arm");
        let d = spec.p_opt[i] - spec.p_opt[l];
        cost += if accepted { d } else { spec.replacement_ratio * d };
    }
    cost
}

/// Cumulative regret of one run, one entry per step.
pub fn run_once(spec: &SyntheticBanditSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = spec.p_opt.len();
    let mut optimal = vec![false; k];
    for i in spec.optimal_set() {
        optimal[i] = true;
    }
    let rejection = match &spec.acceptance {
        None => Rejection::Never,
        Some(z) => Rejection::Fixed((0..k).map(|i| if optimal[i] { 1.0 } else { z[i] }).collect()),
    };
    let mut state = SelectionState::new((0..k).collect(), &spec.p_opt, 1.0).expect("non-empty arm set");
    let mut total = 0.0;
    let mut trace = Vec::with_capacity(spec.horizon);
    for _ in 0..spec.horizon {
        let (selected, proposals) = select_risk_aware(&state, spec.budget, &rejection, rng);
        let props: Vec<(usize, bool)> = proposals.iter().map(|p| (p.arm, p.accepted)).collect();
        total += round_regret(spec, &optimal, &props);
        let winner = ideal_reward_draw(spec, rng);
        state.update_with_ideal_reward(&selected, winner);
        trace.push(total);
    }
    trace
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundTrace {
    pub n: Vec<u64>,
    pub mean_regret: Vec<f64>,
    pub bound_t1: Vec<f64>,
    pub bound_t2: Vec<f64>,
}

impl BoundTrace {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n,mean_regret,bound_t1,bound_t2")?;
        for k in 0..self.n.len() {
            writeln!(out, "{},{:.6},{:.6},{:.6}", self.n[k], self.mean_regret[k], self.bound_t1[k], self.bound_t2[k])?;
        }
        Ok(())
    }

    /// Least-squares slope of `regret / ln n` against `log10 n` over
    /// `[lo, hi]`, with the mean of `regret / ln n` there.
    pub fn log_slope(&self, lo: u64, hi: u64) -> (f64, f64) {
        let pts: Vec<(f64, f64)> = self
            .n
            .iter()
            .zip(&self.mean_regret)
            .filter(|(&n, _)| n >= lo && n <= hi && n > 1)
            .map(|(&n, &r)| ((n as f64).log10(), r / (n as f64).ln()))
            .collect();
        let m = pts.len() as f64;
        let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / m, a.1 + p.1 / m));
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        (sxy / sxx, my)
    }
}

/// Averages `n_runs` independent runs; run `r` draws from stream `r` of
/// `seed`, so the result does not depend on thread scheduling.
pub fn run_bound_check(spec: &SyntheticBanditSpec, n_runs: usize, seed: u64) -> Result<BoundTrace> {
    spec.validate()?;
    let traces: Vec<Vec<f64>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r);
            run_once(spec, &mut rng)
        })
        .collect();
    let mean = crate::metrics::mean_trace(&traces);
    let n: Vec<u64> = (1..=spec.horizon as u64).collect();
    let all_optimal = spec.budget == spec.p_opt.len();
    let bound = |f: fn(&SyntheticBanditSpec, f64) -> Result<f64>| -> Result<Vec<f64>> {
        if all_optimal {
            return Ok(vec![0.0; n.len()]);
        }
        n.iter().map(|&k| f(spec, k as f64)).collect()
    };
    Ok(BoundTrace { bound_t1: bound(theorem1_bound)?, bound_t2: bound(theorem2_bound)?, n: n.clone(), mean_regret: mean })
}

/// Ten arms, three optimal, gaps between 0.05 and 0.40.
pub fn reference_spec(horizon: usize) -> SyntheticBanditSpec {
    SyntheticBanditSpec {
        p_opt: vec![0.40, 0.20, 0.15, 0.10, 0.05, 0.04, 0.03, 0.02, 0.01, 0.0],
        budget: 3,
        horizon,
        acceptance: None,
        replacement_ratio: 0.5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec(p: Vec<f64>, budget: usize) -> SyntheticBanditSpec {
        SyntheticBanditSpec { p_opt: p, budget, horizon: 100, acceptance: None, replacement_ratio: 0.5 }
    }

    #[test]
    fn draws_follow_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = spec(vec![1.0, 0.0, 0.0], 1);
        assert!((0..100).all(|_| ideal_reward_draw(&s, &mut rng) == Some(0)));
        let trials = 10_000;
        let half = spec(vec![0.5, 0.5], 1);
        let zeros = (0..trials).filter(|_| ideal_reward_draw(&half, &mut rng) == Some(0)).count() as f64;
        let sd = (trials as f64 * 0.25).sqrt();
        assert!((zeros - 5000.0).abs() < 3.0 * sd);
        let short = spec(vec![0.5, 0.3], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let none = (0..trials).filter(|_| ideal_reward_draw(&short, &mut rng).is_none()).count() as f64;
        assert!((none - 2000.0).abs() < 3.0 * (trials as f64 * 0.16).sqrt(), "{none}");
    }

    #[test]
    fn theorem1_values() {
        let s = spec(vec![0.6, 0.1], 1);
        assert_relative_eq!(theorem1_bound(&s, std::f64::consts::E).unwrap(), 18.14, epsilon = 5e-3);
        assert_relative_eq!(theorem1_bound(&s, 1.0).unwrap(), (1.0 + PI * PI / 3.0) * 0.5, epsilon = 1e-12);
        let d = theorem1_bound(&s, 200.0).unwrap() - theorem1_bound(&s, 100.0).unwrap();
        assert_relative_eq!(d, 8.0 * 2f64.ln() / 0.5, epsilon = 1e-9);
        assert_relative_eq!(theorem1_bound(&s, 3.0).unwrap(), 8.0 * 3f64.ln() * 2.0 + (1.0 + PI * PI / 3.0) * 0.5, epsilon = 1e-12);
        assert!(theorem1_bound(&spec(vec![0.3, 0.3], 1), 10.0).is_err());
    }

    #[test]
    fn theorem2_values() {
        assert_relative_eq!(chernoff_delta().powi(2), 0.382, epsilon = 1e-3);
        let mut s = spec(vec![0.6, 0.1, 0.2], 1);
        s.acceptance = Some(vec![1.0; 3]);
        let n = 50.0;
        let inv: f64 = 1.0 / 0.5 + 1.0 / 0.4;
        let want = 8.0 * f64::ln(n) / chernoff_delta().powi(2) * inv + (1.0 + PI * PI / 2.0) * 0.9;
        assert_relative_eq!(theorem2_bound(&s, n).unwrap(), want, epsilon = 1e-9);
        for n in 3..200 {
            let n = n as f64;
            assert!(theorem2_bound(&s, n).unwrap() >= theorem1_bound(&s, n).unwrap());
        }
    }

    #[test]
    fn all_optimal_has_no_regret() {
        let mut s = spec(vec![0.5, 0.3, 0.2], 3);
        s.horizon = 300;
        let t = run_bound_check(&s, 4, 1).unwrap();
        assert!(t.mean_regret.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn greedy_round_regret_is_probability_shortfall() {
        let s = spec(vec![0.4, 0.3, 0.2, 0.1], 2);
        let optimal = [true, true, false, false];
        let r = round_regret(&s, &optimal, &[(0, true), (3, true)]);
        assert_relative_eq!(r, (0.4 + 0.3) - (0.4 + 0.1), epsilon = 1e-12);
        let rejected = round_regret(&s, &optimal, &[(0, true), (3, false)]);
        assert_relative_eq!(rejected, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn csv_header() {
        let s = reference_spec(20);
        let mut buf = Vec::new();
        run_bound_check(&s, 2, 3).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("n,mean_regret,bound_t1,bound_t2"));
        assert_eq!(text.lines().count(), 21);
    }

    proptest! {
        #[test]
        fn regret_is_monotone(seed in 0u64..50) {
            let mut s = reference_spec(400);
            if seed % 2 == 0 {
                s.acceptance = Some(vec![0.7; 10]);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = run_once(&s, &mut rng);
            prop_assert!(t.windows(2).all(|w| w[1] >= w[0]));
        }

        #[test]
        fn gaps_lie_in_unit_interval(p in proptest::collection::vec(0.0f64..1.0, 2..8), b in 1usize..7) {
            let total: f64 = p.iter().sum();
            let p: Vec<f64> = p.iter().map(|x| x / (total + 1e-9)).collect();
            let s = spec(p.clone(), b.min(p.len() - 1));
            for (_, i, d) in s.gaps() {
                if s.p_opt[i] > 0.0 {
                    prop_assert!((0.0..1.0).contains(&d));
                }
            }
        }
    }
}
