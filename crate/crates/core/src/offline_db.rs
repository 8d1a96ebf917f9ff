//! Offline observation database, candidate screening and the two offline
//! subset selectors (average strength and minimum misalignment probability).

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;

use crate::array_codebook::Codebook;
use crate::channel::{PairEvaluator, PairTable, Scenario};
use crate::metrics::{estimate_p_opt, to_db};

/// One exhaustive measurement, strongest pair first. Equal strengths are
/// ordered by ascending pair index.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRow {
    pub entries: Vec<(usize, f64)>,
}

impl ObservationRow {
    pub fn from_strengths(strengths: &[f64]) -> Self {
        let mut entries: Vec<(usize, f64)> = strengths.iter().copied().enumerate().collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { entries }
    }

    pub fn winner(&self) -> usize {
        self.entries[0].0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDatabase {
    pub location_bin: usize,
    pub n_pairs: usize,
    pub rows: Vec<ObservationRow>,
}

impl OfflineDatabase {
    /// Builds from raw per-pair strength vectors, one per observation.
    pub fn from_measurements(location_bin: usize, measurements: &[Vec<f64>]) -> Self {
        let n_pairs = measurements.first().map_or(0, Vec::len);
        assert!(measurements.iter().all(|m| m.len() == n_pairs), "rows cover different pair sets");
        let rows = measurements.iter().map(|m| ObservationRow::from_strengths(m)).collect();
        Self { location_bin, n_pairs, rows }
    }

    pub fn winners(&self) -> Vec<usize> {
        self.rows.iter().map(ObservationRow::winner).collect()
    }

    /// Sample-average strength per pair.
    pub fn averages(&self) -> Vec<f64> {
        let mut avg = vec![0.0; self.n_pairs];
        for row in &self.rows {
            for &(i, g) in &row.entries {
                avg[i] += g;
            }
        }
        let n = self.rows.len().max(1) as f64;
        avg.iter_mut().for_each(|a| *a /= n);
        avg
    }

    /// Estimated probability of being optimal for every pair.
    pub fn p_opt(&self) -> Vec<f64> {
        let winners = self.winners();
        let mut p = vec![0.0; self.n_pairs];
        for w in &winners {
            p[*w] += 1.0;
        }
        let n = winners.len().max(1) as f64;
        p.iter_mut().for_each(|x| *x /= n);
        p
    }

    pub fn p_opt_of(&self, pair: usize) -> f64 {
        estimate_p_opt(&self.winners(), pair)
    }

    /// Table layout: observation number, then alternating pair index and
    /// strength in dB, strongest first.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "observation")?;
        for k in 1..=self.n_pairs {
            write!(out, ",pair_{k},gamma_db_{k}")?;
        }
        writeln!(out)?;
        for (n, row) in self.rows.iter().enumerate() {
            write!(out, "{}", n + 1)?;
            for &(i, g) in &row.entries {
                write!(out, ",{i},{:.4}", to_db(g))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Exhaustively measures draws `first_draw .. first_draw + n` of the scenario.
pub fn build_database(
    scenario: &Scenario,
    cb_tx: &Codebook,
    cb_rx: &Codebook,
    n: usize,
    first_draw: u64,
) -> OfflineDatabase {
    assert!(n >= 1, "database needs at least one observation");
    let t = scenario.cfg.symbol_period_s();
    let measurements: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let ch = scenario.draw(first_draw + k);
            let ev = PairEvaluator::new(&ch, &cb_tx.geometry, &cb_rx.geometry, t);
            PairTable::measure(&ev, cb_tx, cb_rx).strengths
        })
        .collect();
    OfflineDatabase::from_measurements(0, &measurements)
}

/// Unique pairs among the first `c` entries of every row, ascending.
pub fn screen_candidates(db: &OfflineDatabase, c: usize) -> Vec<usize> {
    let set: BTreeSet<usize> = db.rows.iter().flat_map(|r| r.entries.iter().take(c).map(|e| e.0)).collect();
    set.into_iter().collect()
}

/// Top `m` pairs by average strength; ascending index on ties.
pub fn select_avg_pow(averages: &[f64], m: usize) -> Vec<usize> {
    assert!(m <= averages.len());
    let mut idx: Vec<usize> = (0..averages.len()).collect();
    idx.sort_by(|&a, &b| averages[b].total_cmp(&averages[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

/// Top `m` pairs by probability of being optimal, then by average strength,
/// then by ascending index.
pub fn select_min_mis_prob(db: &OfflineDatabase, m: usize) -> Vec<usize> {
    assert!(m <= db.n_pairs);
    let p = db.p_opt();
    let avg = db.averages();
    let mut idx: Vec<usize> = (0..db.n_pairs).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(avg[b].total_cmp(&avg[a])).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}
