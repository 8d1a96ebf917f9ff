//! Hierarchical optimistic refinement of one beam pair's pointing directions
//! on a finite 16-ary tree, a flat leaf bandit baseline, and the smoothness
//! inequality sweep.

use serde::{Deserialize, Serialize};

use crate::array_codebook::{beam_power_gain, half_power_beamwidth, ArrayGeometry, Axis, Beam, PointingDirection};
use crate::error::{Error, Result};

pub const CHILDREN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub max_depth: usize,
    pub k_min: u64,
    pub k_expand: u64,
    pub alpha_norm: f64,
    pub smoothness_a: f64,
    pub smoothness: bool,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self { max_depth: 3, k_min: 3, k_expand: 10, alpha_norm: 0.0, smoothness_a: 1.0, smoothness: false }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 || self.k_min < 1 || self.k_expand < 1 {
            return Err(Error::Config("max_depth, k_min and k_expand must be at least 1".into()));
        }
        if !(self.smoothness_a >= 1.0) || !(self.alpha_norm >= 0.0) {
            return Err(Error::Config("smoothness_a must be >= 1 and alpha_norm >= 0".into()));
        }
        Ok(())
    }
}

/// Transmit and receive pointing directions of one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDirections {
    pub tx: PointingDirection,
    pub rx: PointingDirection,
}

/// Azimuth and elevation 3 dB widths of both beams, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairBeamwidths {
    pub tx_az: f64,
    pub tx_el: f64,
    pub rx_az: f64,
    pub rx_el: f64,
}

impl PairBeamwidths {
    pub fn of(tx: &Beam, rx: &Beam) -> Self {
        Self { tx_az: tx.az_beamwidth_deg, tx_el: tx.el_beamwidth_deg, rx_az: rx.az_beamwidth_deg, rx_el: rx.el_beamwidth_deg }
    }
}

fn perturb(dir: PointingDirection, which: usize, az_step: f64, el_step: f64) -> PointingDirection {
    let (az, el) = (dir.azimuth_deg, dir.elevation_deg);
    match which {
        0 => PointingDirection::on_meridian(az + az_step, el),
        1 => PointingDirection::on_meridian(az - az_step, el),
        2 => PointingDirection::on_meridian(az, el + el_step),
        _ => PointingDirection::on_meridian(az, el - el_step),
    }
}

/// The 16 children of a node at `depth`: every transmit perturbation
/// (+az, -az, +el, -el by a `2^depth` fraction of the beamwidth) paired with
/// every receive perturbation, transmit-major.
pub fn children_of(
    node: &PairDirections,
    depth: usize,
    max_depth: usize,
    bw: &PairBeamwidths,
) -> Result<[PairDirections; CHILDREN]> {
    if depth >= max_depth {
        return Err(Error::Invalid(format!("node at depth {depth} cannot be expanded (max {max_depth})")));
    }
    let scale = 0.5f64.powi(depth as i32);
    let mut out = [*node; CHILDREN];
    for (i, c) in out.iter_mut().enumerate() {
        c.tx = perturb(node.tx, i / 4, bw.tx_az * scale, bw.tx_el * scale);
        c.rx = perturb(node.rx, i % 4, bw.rx_az * scale, bw.rx_el * scale);
    }
    Ok(out)
}

/// Normalized power of the broadside beam `dev_deg` off its peak.
pub fn broadside_pattern(geom: &ArrayGeometry, dev_deg: f64) -> f64 {
    let peak = PointingDirection::on_meridian(0.0, 0.0);
    beam_power_gain(geom, peak, PointingDirection::on_meridian(0.0, dev_deg)) / geom.elements() as f64
}

pub fn broadside_beamwidth(geom: &ArrayGeometry) -> Result<f64> {
    half_power_beamwidth(geom, PointingDirection::on_meridian(0.0, 0.0), Axis::Elevation)
}

/// Multiplicative margin for nodes at `depth`: the correction factor over
/// the product of both broadside patterns at a `2^depth` fraction of their
/// beamwidths. 1 when smoothness is disabled.
pub fn smoothness_coefficient(
    depth: usize,
    geom_tx: &ArrayGeometry,
    geom_rx: &ArrayGeometry,
    cfg: &RefinementConfig,
) -> Result<f64> {
    if !cfg.smoothness {
        return Ok(1.0);
    }
    let scale = 0.5f64.powi(depth as i32);
    let gt = broadside_pattern(geom_tx, broadside_beamwidth(geom_tx)? * scale);
    let gr = broadside_pattern(geom_rx, broadside_beamwidth(geom_rx)? * scale);
    Ok(cfg.smoothness_a / (gt * gr))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HooNode {
    pub depth: usize,
    /// Position among the nodes at this depth, 1-based in creation order.
    pub k: usize,
    pub dirs: PairDirections,
    pub t: u64,
    pub mean: f64,
    pub sum_sq: f64,
    pub var: f64,
    pub u: f64,
    pub b: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

impl HooNode {
    fn fresh(depth: usize, k: usize, dirs: PairDirections, parent: Option<usize>) -> Self {
        Self {
            depth,
            k,
            dirs,
            t: 0,
            mean: 0.0,
            sum_sq: 0.0,
            var: 0.0,
            u: f64::INFINITY,
            b: f64::INFINITY,
            parent,
            children: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTree {
    pub pair: usize,
    pub beamwidths: PairBeamwidths,
    pub cfg: RefinementConfig,
    /// Smoothness coefficient per depth, index 0 unused.
    pub nu: Vec<f64>,
    /// Arena; index 0 is the root at (1, 1).
    pub nodes: Vec<HooNode>,
    per_depth: Vec<usize>,
}

impl RefinementTree {
    /// Tree with the root and its 16 children active.
    pub fn new(
        pair: usize,
        root: PairDirections,
        beamwidths: PairBeamwidths,
        cfg: RefinementConfig,
        geom_tx: &ArrayGeometry,
        geom_rx: &ArrayGeometry,
    ) -> Result<Self> {
        cfg.validate()?;
        let nu = (0..=cfg.max_depth)
            .map(|d| if d == 0 { Ok(1.0) } else { smoothness_coefficient(d, geom_tx, geom_rx, &cfg) })
            .collect::<Result<Vec<_>>>()?;
        let mut tree = Self {
            pair,
            beamwidths,
            cfg,
            nu,
            nodes: vec![HooNode::fresh(1, 1, root, None)],
            per_depth: vec![0, 1],
        };
        if cfg.max_depth > 1 {
            tree.expand(0);
        }
        Ok(tree)
    }

    pub fn root(&self) -> &HooNode {
        &self.nodes[0]
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(1)
    }

    fn expand(&mut self, id: usize) {
        let depth = self.nodes[id].depth;
        let kids = children_of(&self.nodes[id].dirs, depth, self.cfg.max_depth, &self.beamwidths)
            .expect("expansion is guarded by the depth limit");
        if self.per_depth.len() <= depth + 1 {
            self.per_depth.resize(depth + 2, 0);
        }
        for dirs in kids {
            self.per_depth[depth + 1] += 1;
            let child = HooNode::fresh(depth + 1, self.per_depth[depth + 1], dirs, Some(id));
            self.nodes.push(child);
            let cid = self.nodes.len() - 1;
            self.nodes[id].children.push(cid);
        }
    }

    /// Path from the root following the largest child B-value (first child
    /// on ties) until a node without active children or the last
    /// expandable depth.
    pub fn select_node(&self) -> Vec<usize> {
        let mut path = vec![0];
        let mut cur = 0;
        let limit = self.depth().min(self.cfg.max_depth.saturating_sub(1));
        for _ in 1..=limit {
            let kids = &self.nodes[cur].children;
            if kids.is_empty() {
                break;
            }
            let mut best = kids[0];
            for &c in &kids[1..] {
                if self.nodes[c].b > self.nodes[best].b {
                    best = c;
                }
            }
            cur = best;
            path.push(cur);
        }
        path
    }

    fn u_value(&self, node: &HooNode, n: u64) -> f64 {
        let ln_n = (n as f64).ln();
        let forced = (self.cfg.alpha_norm * ln_n).ceil();
        if node.t < self.cfg.k_min || (node.t as f64) < forced {
            return f64::INFINITY;
        }
        (node.mean + (16.0 * node.var * ln_n / node.t as f64).sqrt()) * self.nu[node.depth]
    }

    /// Feeds one measurement `gamma` taken at the last node of `path`, at
    /// global sample count `n`.
    pub fn update_after_sample(&mut self, path: &[usize], gamma: f64, n: u64) {
        for &id in path {
            let node = &mut self.nodes[id];
            node.t += 1;
            let t = node.t as f64;
            node.mean = (1.0 - 1.0 / t) * node.mean + gamma / t;
            node.sum_sq += gamma * gamma;
            node.var = ((node.sum_sq - node.mean * node.mean * t) / t).max(0.0);
        }
        for id in 0..self.nodes.len() {
            self.nodes[id].u = self.u_value(&self.nodes[id], n);
        }
        let s = *path.last().expect("path starts at the root");
        let s_depth = self.nodes[s].depth;
        if s_depth < self.cfg.max_depth && self.nodes[s].t > self.cfg.k_expand && self.nodes[s].is_leaf() {
            self.expand(s);
        }
        for depth in (2..=s_depth).rev() {
            for id in 0..self.nodes.len() {
                if self.nodes[id].depth != depth {
                    continue;
                }
                let kids = self.nodes[id].children.iter().map(|&c| self.nodes[c].b).fold(None, |m: Option<f64>, b| {
                    Some(m.map_or(b, |m| m.max(b)))
                });
                self.nodes[id].b = self.nodes[id].u.min(kids.unwrap_or(f64::INFINITY));
            }
        }
    }

    /// One full iteration: choose a node, measure it, update. Uses the
    /// tree's own sample count as the time index. Returns the node sampled
    /// and the measurement.
    pub fn step(&mut self, measure: impl FnOnce(&PairDirections) -> f64) -> (usize, f64) {
        let path = self.select_node();
        let s = *path.last().expect("non-empty path");
        let gamma = measure(&self.nodes[s].dirs);
        let n = self.root().t + 1;
        self.update_after_sample(&path, gamma, n);
        (s, gamma)
    }

    /// Directions of the node with the highest sample mean among those with
    /// at least `k_min` samples, or the root.
    pub fn best_arm(&self) -> PairDirections {
        let mut best: Option<&HooNode> = None;
        for node in self.nodes.iter().filter(|n| n.t >= self.cfg.k_min) {
            if best.is_none_or(|b| node.mean > b.mean) {
                best = Some(node);
            }
        }
        best.unwrap_or(self.root()).dirs
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        TreeSnapshot {
            pair: self.pair,
            beamwidths: self.beamwidths,
            cfg: self.cfg,
            nu: self.nu.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    depth: n.depth,
                    k: n.k,
                    dirs: n.dirs,
                    t: n.t,
                    mean: n.mean,
                    sum_sq: n.sum_sq,
                    u: finite(n.u),
                    b: finite(n.b),
                    parent: n.parent,
                })
                .collect(),
        }
    }

    pub fn from_snapshot(s: &TreeSnapshot) -> Result<Self> {
        let mut nodes: Vec<HooNode> = Vec::with_capacity(s.nodes.len());
        let mut per_depth = vec![0usize; 2];
        for (id, r) in s.nodes.iter().enumerate() {
            if let Some(p) = r.parent {
                if p >= id {
                    return Err(Error::Invalid(format!("node {id} listed before its parent")));
                }
                nodes[p].children.push(id);
            } else if id != 0 {
                return Err(Error::Invalid("only the first node may be the root".into()));
            }
            if per_depth.len() <= r.depth {
                per_depth.resize(r.depth + 1, 0);
            }
            per_depth[r.depth] = per_depth[r.depth].max(r.k);
            let t = r.t as f64;
            let var = if r.t == 0 { 0.0 } else { ((r.sum_sq - r.mean * r.mean * t) / t).max(0.0) };
            nodes.push(HooNode {
                depth: r.depth,
                k: r.k,
                dirs: r.dirs,
                t: r.t,
                mean: r.mean,
                sum_sq: r.sum_sq,
                var,
                u: r.u.unwrap_or(f64::INFINITY),
                b: r.b.unwrap_or(f64::INFINITY),
                parent: r.parent,
                children: Vec::new(),
            });
        }
        if nodes.is_empty() {
            return Err(Error::Invalid("snapshot has no nodes".into()));
        }
        Ok(Self { pair: s.pair, beamwidths: s.beamwidths, cfg: s.cfg, nu: s.nu.clone(), nodes, per_depth })
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Serializable node table. Infinite U and B values are stored as null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub pair: usize,
    pub beamwidths: PairBeamwidths,
    pub cfg: RefinementConfig,
    pub nu: Vec<f64>,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub depth: usize,
    pub k: usize,
    pub dirs: PairDirections,
    pub t: u64,
    pub mean: f64,
    pub sum_sq: f64,
    pub u: Option<f64>,
    pub b: Option<f64>,
    pub parent: Option<usize>,
}

/// Every node at `max_depth` reachable from `root`, in tree order.
pub fn tree_leaves(root: &PairDirections, bw: &PairBeamwidths, max_depth: usize) -> Vec<PairDirections> {
    let mut level = vec![*root];
    for depth in 1..max_depth {
        level = level
            .iter()
            .flat_map(|d| children_of(d, depth, max_depth, bw).expect("depth below the limit"))
            .collect();
    }
    level
}

/// Norm-UCB run directly on a fixed set of arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafBandit {
    pub arms: Vec<PairDirections>,
    pub t: Vec<u64>,
    pub mean: Vec<f64>,
    pub sum_sq: Vec<f64>,
    pub cfg: RefinementConfig,
    pub n: u64,
}

impl LeafBandit {
    pub fn new(arms: Vec<PairDirections>, cfg: RefinementConfig) -> Self {
        let k = arms.len();
        Self { arms, t: vec![0; k], mean: vec![0.0; k], sum_sq: vec![0.0; k], cfg, n: 0 }
    }

    pub fn on_tree_leaves(root: &PairDirections, bw: &PairBeamwidths, cfg: RefinementConfig) -> Self {
        Self::new(tree_leaves(root, bw, cfg.max_depth), cfg)
    }

    fn index(&self, i: usize, n: u64) -> f64 {
        let ln_n = (n as f64).ln();
        if self.t[i] < self.cfg.k_min || (self.t[i] as f64) < (self.cfg.alpha_norm * ln_n).ceil() {
            return f64::INFINITY;
        }
        let t = self.t[i] as f64;
        let var = ((self.sum_sq[i] - self.mean[i] * self.mean[i] * t) / t).max(0.0);
        self.mean[i] + (16.0 * var * ln_n / t).sqrt()
    }

    pub fn select(&self) -> usize {
        let n = self.n + 1;
        let mut best = 0;
        let mut best_v = self.index(0, n);
        for i in 1..self.arms.len() {
            let v = self.index(i, n);
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        best
    }

    pub fn update(&mut self, i: usize, gamma: f64) {
        self.n += 1;
        self.t[i] += 1;
        let t = self.t[i] as f64;
        self.mean[i] += (gamma - self.mean[i]) / t;
        self.sum_sq[i] += gamma * gamma;
    }

    pub fn step(&mut self, measure: impl FnOnce(&PairDirections) -> f64) -> (usize, f64) {
        let i = self.select();
        let g = measure(&self.arms[i]);
        self.update(i, g);
        (i, g)
    }

    pub fn best_arm(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for i in (0..self.arms.len()).filter(|&i| self.t[i] >= self.cfg.k_min) {
            if best.is_none_or(|b| self.mean[i] > self.mean[b]) {
                best = Some(i);
            }
        }
        best
    }
}

/// One point of the smoothness-inequality sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaPoint {
    /// Pointing offset from the path, degrees.
    pub phi0_deg: f64,
    pub delta_deg: f64,
    /// Received power at the offset pointing divided by the pattern at the
    /// edge of the neighbourhood.
    pub lhs: f64,
    /// Received power when pointing at the path.
    pub rhs: f64,
}

impl LemmaPoint {
    pub fn slack(&self) -> f64 {
        self.lhs - self.rhs
    }
}

/// Sweeps the pointing offset over half a beamwidth either side of a
/// single path, for neighbourhoods of 1/8, 1/4 and 1/2 beamwidth, keeping
/// the offsets that fall inside each neighbourhood. Uses a shift-invariant
/// broadside pattern along one cut.
pub fn lemma_sweep(geom: &ArrayGeometry, grid: usize) -> Result<Vec<LemmaPoint>> {
    let bw = broadside_beamwidth(geom)?;
    let g = |dev: f64| broadside_pattern(geom, dev);
    let mut out = Vec::new();
    for frac in [0.125, 0.25, 0.5] {
        let delta = bw * frac;
        for j in 0..=grid {
            let phi0 = -bw / 2.0 + bw * j as f64 / grid as f64;
            if phi0.abs() > delta {
                continue;
            }
            out.push(LemmaPoint { phi0_deg: phi0, delta_deg: delta, lhs: g(-phi0) / g(delta), rhs: g(0.0) });
        }
    }
    Ok(out)
}
