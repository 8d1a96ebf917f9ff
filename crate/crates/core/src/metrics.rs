//! Power loss, power-loss probability and probability of being optimal.

use std::io::Write;

use serde::{Deserialize, Serialize};

/// `best / selected`. A dead selection against a live best is an infinite
/// loss; two zeros count as no loss.
pub fn power_loss(best_strength: f64, selected_strength: f64) -> f64 {
    if selected_strength > 0.0 {
        best_strength / selected_strength
    } else if best_strength > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub selected_pair: usize,
    pub gamma_selected: f64,
    pub gamma_best: f64,
}

impl StepRecord {
    pub fn xi(&self) -> f64 {
        power_loss(self.gamma_best, self.gamma_selected)
    }
}

/// Per-step log of one run. `thresholds_db` are the `c` values (in dB)
/// reported as exceedance flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricLog {
    pub thresholds_db: Vec<f64>,
    pub records: Vec<StepRecord>,
}

impl MetricLog {
    pub fn new(thresholds_db: Vec<f64>) -> Self {
        Self { thresholds_db, records: Vec::new() }
    }

    pub fn push(&mut self, r: StepRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with columns `step, selected_pair, gamma_selected, gamma_best,
    /// xi_db` and one `loss_gt_<c>db` 0/1 flag per threshold.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "step,selected_pair,gamma_selected,gamma_best,xi_db")?;
        for c in &self.thresholds_db {
            write!(out, ",loss_gt_{c}db")?;
        }
        writeln!(out)?;
        for r in &self.records {
            let xi = r.xi();
            write!(out, "{},{},{:e},{:e},{:.6}", r.step, r.selected_pair, r.gamma_selected, r.gamma_best, to_db(xi))?;
            for &c in &self.thresholds_db {
                write!(out, ",{}", u8::from(xi > from_db(c)))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Fraction of records in `window` whose power loss exceeds `c` (linear).
pub fn power_loss_probability(records: &[StepRecord], c: f64) -> f64 {
    assert!(!records.is_empty(), "empty window");
    records.iter().filter(|r| r.xi() > c).count() as f64 / records.len() as f64
}

/// Fraction of observations won by `pair`, given the winner of each
/// observation. No observations gives 0.
pub fn estimate_p_opt(winners: &[usize], pair: usize) -> f64 {
    if winners.is_empty() {
        return 0.0;
    }
    winners.iter().filter(|&&w| w == pair).count() as f64 / winners.len() as f64
}

/// Probability that the winner falls inside `set`.
pub fn estimate_p_opt_set(winners: &[usize], set: &[usize]) -> f64 {
    if winners.is_empty() {
        return 0.0;
    }
    winners.iter().filter(|w| set.contains(w)).count() as f64 / winners.len() as f64
}

/// Trailing moving average: entry `k` averages the last `min(k+1, window)` values.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1);
    (0..xs.len())
        .map(|k| {
            let w = &xs[(k + 1).saturating_sub(window)..=k];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// Element-wise mean of equally long traces.
pub fn mean_trace(traces: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = traces.first() else { return Vec::new() };
    let mut out = vec![0.0; first.len()];
    for t in traces {
        assert_eq!(t.len(), out.len(), "traces differ in length");
        for (o, x) in out.iter_mut().zip(t) {
            *o += x;
        }
    }
    let n = traces.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}
