//! Wideband geometric channel: paths, the filtered per-tap effective channel
//! of a beam pair, channel strength and exhaustive beam-pair search.

mod scenario;

pub use scenario::{realize_at, BlockerLayout, Scenario, ScenarioConfig, Truck};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array_codebook::{array_response, ArrayGeometry, Codebook, PointingDirection};

/// Raised-cosine roll-off of the combined transmit/receive filter.
pub const ROLL_OFF: f64 = 0.25;
/// The pulse is truncated to this many symbol periods on each side.
pub const PULSE_HALF_SPAN: i64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    /// Complex amplitude referenced to a single antenna.
    pub gain: Complex64,
    pub delay_s: f64,
    pub aoa: PointingDirection,
    pub aod: PointingDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// Sorted by ascending delay.
    pub paths: Vec<PathComponent>,
    pub position_m: f64,
    pub los_blocked: bool,
}

impl ChannelRealization {
    pub fn new(mut paths: Vec<PathComponent>, position_m: f64) -> Self {
        paths.sort_by(|a, b| a.delay_s.total_cmp(&b.delay_s));
        Self { paths, position_m, los_blocked: false }
    }

    pub fn delay_spread_s(&self) -> f64 {
        match (self.paths.first(), self.paths.last()) {
            (Some(a), Some(b)) => b.delay_s - a.delay_s,
            _ => 0.0,
        }
    }

    /// Taps needed to hold every path's pulse: the delay spread plus the
    /// truncated tails on both sides.
    pub fn n_taps(&self, symbol_period_s: f64) -> usize {
        (self.delay_spread_s() / symbol_period_s).ceil() as usize + 2 * PULSE_HALF_SPAN as usize
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Raised-cosine pulse with unit peak, zero outside `±4T`.
pub fn pulse(t_s: f64, symbol_period_s: f64) -> f64 {
    let x = t_s / symbol_period_s;
    if x.abs() > PULSE_HALF_SPAN as f64 {
        return 0.0;
    }
    let d = 1.0 - (2.0 * ROLL_OFF * x).powi(2);
    if d.abs() < 1e-10 {
        return std::f64::consts::FRAC_PI_4 * sinc(1.0 / (2.0 * ROLL_OFF));
    }
    sinc(x) * (std::f64::consts::PI * ROLL_OFF * x).cos() / d
}

/// Symbol offset of the first tap relative to the earliest path.
pub const FIRST_TAP: i64 = -PULSE_HALF_SPAN;

/// Coefficient `sqrt(Nr Nt) * alpha * (w_r^H a_r) * (a_t^H f_t)` of one path.
fn path_coefficient(
    p: &PathComponent,
    tx_dir: PointingDirection,
    rx_dir: PointingDirection,
    geom_tx: &ArrayGeometry,
    geom_rx: &ArrayGeometry,
) -> Complex64 {
    let scale = ((geom_tx.elements() * geom_rx.elements()) as f64).sqrt();
    let rx = array_response(geom_rx, rx_dir, p.aoa);
    let tx = array_response(geom_tx, tx_dir, p.aod).conj();
    p.gain * rx * tx * scale
}

/// Per-tap effective channel of the beam pair `(tx_dir, rx_dir)`.
///
/// Tap `k` sits at `(k + FIRST_TAP) * T` relative to the earliest path, so
/// the leading tail of the first pulse is kept.
pub fn effective_channel(
    ch: &ChannelRealization,
    tx_dir: PointingDirection,
    rx_dir: PointingDirection,
    geom_tx: &ArrayGeometry,
    geom_rx: &ArrayGeometry,
    symbol_period_s: f64,
    n_taps: usize,
) -> Vec<Complex64> {
    let mut h = vec![Complex64::new(0.0, 0.0); n_taps];
    let Some(tau0) = ch.paths.first().map(|p| p.delay_s) else { return h };
    for p in &ch.paths {
        let c = path_coefficient(p, tx_dir, rx_dir, geom_tx, geom_rx);
        for (k, tap) in h.iter_mut().enumerate() {
            let t = (k as i64 + FIRST_TAP) as f64 * symbol_period_s + tau0 - p.delay_s;
            *tap += c * pulse(t, symbol_period_s);
        }
    }
    h
}

/// Squared norm of the effective channel.
pub fn channel_strength(h: &[Complex64]) -> f64 {
    h.iter().map(|z| z.norm_sqr()).sum()
}

/// Strength evaluator for one realization. Path responses are cached per
/// beam and the tap structure is folded into the path Gram matrix
/// `A[l][l'] = sum_m g_l[m] g_l'[m]`, so `gamma = c^H A c`.
#[derive(Debug, Clone)]
pub struct PairEvaluator {
    geom_tx: ArrayGeometry,
    geom_rx: ArrayGeometry,
    paths: Vec<PathComponent>,
    gram: Vec<f64>,
    scale: f64,
}

impl PairEvaluator {
    pub fn new(ch: &ChannelRealization, geom_tx: &ArrayGeometry, geom_rx: &ArrayGeometry, symbol_period_s: f64) -> Self {
        let lp = ch.paths.len();
        let n_taps = ch.n_taps(symbol_period_s);
        let tau0 = ch.paths.first().map_or(0.0, |p| p.delay_s);
        let shapes: Vec<Vec<f64>> = ch
            .paths
            .iter()
            .map(|p| {
                (0..n_taps)
                    .map(|k| pulse((k as i64 + FIRST_TAP) as f64 * symbol_period_s + tau0 - p.delay_s, symbol_period_s))
                    .collect()
            })
            .collect();
        let mut gram = vec![0.0; lp * lp];
        for a in 0..lp {
            for b in 0..lp {
                gram[a * lp + b] = shapes[a].iter().zip(&shapes[b]).map(|(x, y)| x * y).sum();
            }
        }
        Self {
            geom_tx: *geom_tx,
            geom_rx: *geom_rx,
            paths: ch.paths.clone(),
            gram,
            scale: ((geom_tx.elements() * geom_rx.elements()) as f64).sqrt(),
        }
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    /// `a_t^H f_t` per path for a transmit beam.
    pub fn tx_responses(&self, tx_dir: PointingDirection) -> Vec<Complex64> {
        self.paths.iter().map(|p| array_response(&self.geom_tx, tx_dir, p.aod).conj()).collect()
    }

    /// `w_r^H a_r` per path for a receive beam.
    pub fn rx_responses(&self, rx_dir: PointingDirection) -> Vec<Complex64> {
        self.paths.iter().map(|p| array_response(&self.geom_rx, rx_dir, p.aoa)).collect()
    }

    /// Strength from cached per-path responses.
    pub fn strength_from(&self, tx: &[Complex64], rx: &[Complex64]) -> f64 {
        let lp = self.paths.len();
        let mut c = [Complex64::new(0.0, 0.0); 8];
        let mut heap;
        let c: &mut [Complex64] = if lp <= 8 {
            &mut c[..lp]
        } else {
            heap = vec![Complex64::new(0.0, 0.0); lp];
            &mut heap
        };
        for l in 0..lp {
            c[l] = self.paths[l].gain * rx[l] * tx[l] * self.scale;
        }
        let mut g = 0.0;
        for a in 0..lp {
            g += self.gram[a * lp + a] * c[a].norm_sqr();
            for b in a + 1..lp {
                g += 2.0 * self.gram[a * lp + b] * (c[a] * c[b].conj()).re;
            }
        }
        g.max(0.0)
    }

    pub fn strength(&self, tx_dir: PointingDirection, rx_dir: PointingDirection) -> f64 {
        self.strength_from(&self.tx_responses(tx_dir), &self.rx_responses(rx_dir))
    }
}

/// All beam-pair strengths of a realization, indexed `t * |rx| + r`.
#[derive(Debug, Clone)]
pub struct PairTable {
    pub n_rx: usize,
    pub strengths: Vec<f64>,
}

impl PairTable {
    pub fn measure(ev: &PairEvaluator, cb_tx: &Codebook, cb_rx: &Codebook) -> Self {
        let tx: Vec<Vec<Complex64>> = cb_tx.beams.iter().map(|b| ev.tx_responses(b.direction)).collect();
        let rx: Vec<Vec<Complex64>> = cb_rx.beams.iter().map(|b| ev.rx_responses(b.direction)).collect();
        let mut strengths = Vec::with_capacity(tx.len() * rx.len());
        for t in &tx {
            for r in &rx {
                strengths.push(ev.strength_from(t, r));
            }
        }
        Self { n_rx: rx.len(), strengths }
    }

    /// Strongest pair, lowest index on ties.
    pub fn best(&self) -> (usize, f64) {
        let mut best = (0, self.strengths.first().copied().unwrap_or(0.0));
        for (i, &g) in self.strengths.iter().enumerate() {
            if g > best.1 {
                best = (i, g);
            }
        }
        best
    }
}

/// Splits a pair index into (transmit beam, receive beam).
pub fn pair_beams(pair: usize, n_rx: usize) -> (usize, usize) {
    (pair / n_rx, pair % n_rx)
}

/// Brute-force strongest beam pair over two codebooks; lowest index wins ties.
pub fn exhaustive_best(
    ch: &ChannelRealization,
    cb_tx: &Codebook,
    cb_rx: &Codebook,
    symbol_period_s: f64,
) -> (usize, f64) {
    let ev = PairEvaluator::new(ch, &cb_tx.geometry, &cb_rx.geometry, symbol_period_s);
    PairTable::measure(&ev, cb_tx, cb_rx).best()
}
