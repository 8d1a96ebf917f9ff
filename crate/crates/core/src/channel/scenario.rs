//! Synthetic street canyon standing in for ray-traced channel samples.
//!
//! World frame: the street runs along +x, `y` is across the street, `z` is up.
//! The base station hangs at `(0, bs_lateral, bs_height)` facing +x. The mobile sits in
//! a car in the far lane at `(d, mu_lateral, mu_height)`, its array facing
//! back toward the base station. Both walls are specular reflectors. Trucks
//! park in both lanes with Erlang-distributed gaps; a truck cutting the
//! line-of-sight segment attenuates the direct path by a fixed amount.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Uniform};
use serde::{Deserialize, Serialize};

use super::{ChannelRealization, PathComponent};
use crate::array_codebook::PointingDirection;
use crate::error::{Error, Result};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub bin_center_m: f64,
    pub bin_half_width_m: f64,
    pub carrier_ghz: f64,
    pub bandwidth_ghz: f64,
    pub bs_height_m: f64,
    /// Lateral position of the base station mast (sidewalk side).
    pub bs_lateral_m: f64,
    pub mu_height_m: f64,
    /// Lateral offset of the mobile from the base station.
    pub mu_lateral_m: f64,
    pub near_wall_y_m: f64,
    pub far_wall_y_m: f64,
    pub reflection_loss_db: f64,
    pub blockage_loss_db: f64,
    /// Lane centre lines (y) where trucks park.
    pub lane_centers_m: Vec<f64>,
    pub truck_length_m: f64,
    pub truck_width_m: f64,
    pub truck_height_m: f64,
    /// Half length of the mobile's own car; far-lane trucks overlapping it are dropped.
    pub car_half_length_m: f64,
    pub blocker_gap_shape: f64,
    /// Erlang scale of the bumper-to-bumper gap. Zero disables trucks.
    pub blocker_gap_scale_m: f64,
    /// Street segment over which trucks are laid out.
    pub street_start_m: f64,
    pub street_end_m: f64,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            bin_center_m: 30.0,
            bin_half_width_m: 2.5,
            carrier_ghz: 60.0,
            bandwidth_ghz: 1.76,
            bs_height_m: 7.0,
            bs_lateral_m: -3.0,
            mu_height_m: 1.5,
            mu_lateral_m: 5.25,
            near_wall_y_m: -4.0,
            far_wall_y_m: 11.0,
            reflection_loss_db: 6.0,
            blockage_loss_db: 25.0,
            lane_centers_m: vec![1.75, 5.25],
            truck_length_m: 12.0,
            truck_width_m: 2.5,
            truck_height_m: 3.8,
            car_half_length_m: 2.25,
            blocker_gap_shape: 2.0,
            blocker_gap_scale_m: DEFAULT_GAP_SCALE_M,
            street_start_m: -20.0,
            street_end_m: 60.0,
            rng_seed: 1,
        }
    }
}

/// Erlang scale giving a line-of-sight blockage rate near 38% with the
/// default layout (found by sweeping the scale and counting blocked draws).
pub const DEFAULT_GAP_SCALE_M: f64 = 17.0;

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.bandwidth_ghz > 0.0) {
            return bad("bandwidth_ghz must be positive");
        }
        if !(self.carrier_ghz > 0.0) {
            return bad("carrier_ghz must be positive");
        }
        if !(self.bin_half_width_m >= 0.0) {
            return bad("bin_half_width_m must be non-negative");
        }
        if !(self.blocker_gap_shape >= 1.0) || self.blocker_gap_shape.fract() != 0.0 {
            return bad("blocker_gap_shape must be a positive integer (Erlang)");
        }
        if !(self.blocker_gap_scale_m >= 0.0) {
            return bad("blocker_gap_scale_m must be non-negative");
        }
        if !(self.far_wall_y_m > self.mu_lateral_m && self.near_wall_y_m < self.bs_lateral_m) {
            return bad("walls must enclose the base station and the mobile");
        }
        if !(self.street_end_m > self.street_start_m) {
            return bad("street_end_m must exceed street_start_m");
        }
        Ok(())
    }

    pub fn symbol_period_s(&self) -> f64 {
        1.0 / (self.bandwidth_ghz * 1e9)
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / (self.carrier_ghz * 1e9)
    }

    fn bs(&self) -> [f64; 3] {
        [0.0, self.bs_lateral_m, self.bs_height_m]
    }

    fn mu(&self, position_m: f64) -> [f64; 3] {
        [position_m, self.mu_lateral_m, self.mu_height_m]
    }
}

/// Axis-aligned truck body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truck {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Truck {
    /// Whether the segment `a -> b` passes through the box (slab test).
    pub fn cuts(&self, a: [f64; 3], b: [f64; 3]) -> bool {
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for k in 0..3 {
            let d = b[k] - a[k];
            if d.abs() < 1e-12 {
                if a[k] < self.min[k] || a[k] > self.max[k] {
                    return false;
                }
                continue;
            }
            let (mut u, mut v) = ((self.min[k] - a[k]) / d, (self.max[k] - a[k]) / d);
            if u > v {
                std::mem::swap(&mut u, &mut v);
            }
            t0 = t0.max(u);
            t1 = t1.min(v);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockerLayout {
    pub trucks: Vec<Truck>,
}

impl BlockerLayout {
    /// Lays trucks bumper to bumper along every lane with Erlang gaps.
    pub fn draw<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Self {
        let mut trucks = Vec::new();
        if cfg.blocker_gap_scale_m <= 0.0 {
            return Self { trucks };
        }
        let gap = Gamma::new(cfg.blocker_gap_shape, cfg.blocker_gap_scale_m).expect("validated Erlang parameters");
        for &yc in &cfg.lane_centers_m {
            // random phase of the truck stream relative to the street start
            let mut x = cfg.street_start_m - rng.random_range(0.0..cfg.truck_length_m) + gap.sample(rng);
            while x < cfg.street_end_m {
                trucks.push(Truck {
                    min: [x, yc - 0.5 * cfg.truck_width_m, 0.0],
                    max: [x + cfg.truck_length_m, yc + 0.5 * cfg.truck_width_m, cfg.truck_height_m],
                });
                x += cfg.truck_length_m + gap.sample(rng);
            }
        }
        Self { trucks }
    }

    /// Drops trucks that would overlap the mobile's car.
    fn clear_car(&mut self, cfg: &ScenarioConfig, position_m: f64) {
        let half_w = 0.5 * cfg.truck_width_m;
        self.trucks.retain(|t| {
            let same_lane = t.min[1] <= cfg.mu_lateral_m + half_w && t.max[1] >= cfg.mu_lateral_m - half_w;
            let overlaps =
                t.min[0] < position_m + cfg.car_half_length_m && t.max[0] > position_m - cfg.car_half_length_m;
            !(same_lane && overlaps)
        });
    }
}

/// Orthonormal array frame: boresight is local +z, `up` fixes local +x.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x: [f64; 3],
    y: [f64; 3],
    z: [f64; 3],
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

impl Frame {
    fn new(boresight: [f64; 3], up: [f64; 3]) -> Self {
        let z = boresight;
        let k = dot(up, z);
        let x0 = [up[0] - k * z[0], up[1] - k * z[1], up[2] - k * z[2]];
        let n = norm(x0);
        let x = [x0[0] / n, x0[1] / n, x0[2] / n];
        let y = [z[1] * x[2] - z[2] * x[1], z[2] * x[0] - z[0] * x[2], z[0] * x[1] - z[1] * x[0]];
        Self { x, y, z }
    }

    fn direction(&self, world: [f64; 3]) -> PointingDirection {
        PointingDirection::from_vector([dot(world, self.x), dot(world, self.y), dot(world, self.z)])
    }
}

const BS_FRAME: ([f64; 3], [f64; 3]) = ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
const MU_FRAME: ([f64; 3], [f64; 3]) = ([-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]);

/// Vertical wall at a fixed `y`, reflecting specularly.
#[derive(Debug, Clone, Copy)]
struct Wall(f64);

impl Wall {
    fn reflect(&self, p: [f64; 3]) -> [f64; 3] {
        [p[0], 2.0 * self.0 - p[1], p[2]]
    }

    /// Parameter along `a -> b` where the segment meets the wall plane.
    fn hit(&self, a: [f64; 3], b: [f64; 3]) -> Option<f64> {
        let d = b[1] - a[1];
        if d.abs() < 1e-12 {
            return None;
        }
        let t = (self.0 - a[1]) / d;
        (t > 0.0 && t < 1.0).then_some(t)
    }
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

/// Bounce points of the ray from `src` to `dst` via `chain` (in order), or
/// `None` if the unfolded ray does not meet the mirrors in that order.
fn bounce_points(src: [f64; 3], dst: [f64; 3], chain: &[Wall]) -> Option<Vec<[f64; 3]>> {
    let mut points = vec![src];
    let mut from = src;
    for (k, m) in chain.iter().enumerate() {
        let target = chain[k..].iter().rev().fold(dst, |p, m| m.reflect(p));
        let t = m.hit(from, target)?;
        from = lerp(from, target, t);
        points.push(from);
    }
    points.push(dst);
    Some(points)
}

/// Deterministic channel at a given mobile position and blocker layout.
///
/// Paths: line of sight plus one specular bounce off each wall.
/// `reflection_phases` are the extra phases picked up at the near and far
/// wall. A truck cutting the direct path attenuates it by `blockage_loss_db`.
pub fn realize_at(
    cfg: &ScenarioConfig,
    position_m: f64,
    layout: &BlockerLayout,
    reflection_phases: [f64; 2],
) -> ChannelRealization {
    let lambda = cfg.wavelength_m();
    let bs = cfg.bs();
    let mu = cfg.mu(position_m);
    let bs_frame = Frame::new(BS_FRAME.0, BS_FRAME.1);
    let mu_frame = Frame::new(MU_FRAME.0, MU_FRAME.1);
    let near = Wall(cfg.near_wall_y_m);
    let far = Wall(cfg.far_wall_y_m);
    let chains: [(Vec<Wall>, f64); 3] =
        [(vec![], 0.0), (vec![near], reflection_phases[0]), (vec![far], reflection_phases[1])];

    let mut paths = Vec::with_capacity(chains.len());
    let mut los_blocked = false;
    for (k, (chain, phase)) in chains.iter().enumerate() {
        let Some(points) = bounce_points(bs, mu, chain) else { continue };
        let length: f64 = points.windows(2).map(|w| norm(sub(w[1], w[0]))).sum();
        // only the direct path is tested against the trucks
        let blocked = k == 0 && layout.trucks.iter().any(|t| t.cuts(bs, mu));
        los_blocked |= blocked;
        let mut loss_db = chain.len() as f64 * cfg.reflection_loss_db;
        if blocked {
            loss_db += cfg.blockage_loss_db;
        }
        let amp = lambda / (4.0 * std::f64::consts::PI * length) * 10f64.powf(-loss_db / 20.0);
        let n = points.len();
        paths.push(PathComponent {
            gain: Complex64::from_polar(amp, -2.0 * std::f64::consts::PI * length / lambda + phase),
            delay_s: length / SPEED_OF_LIGHT,
            aod: bs_frame.direction(sub(points[1], points[0])),
            aoa: mu_frame.direction(sub(points[n - 2], points[n - 1])),
        });
    }
    let mut ch = ChannelRealization::new(paths, position_m);
    ch.los_blocked = los_blocked;
    ch
}

/// Seeded generator of realizations in one location bin.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
}

impl Scenario {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    /// Realization number `index` of this scenario's seed. Each index owns a
    /// separate ChaCha stream, so draws can be produced in any order.
    pub fn draw(&self, index: u64) -> ChannelRealization {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.rng_seed);
        rng.set_stream(index);
        generate_realization(&self.cfg, &mut rng)
    }
}

/// One realization: uniform position in the bin, fresh truck layout and
/// reflection phases, then the deterministic geometry.
pub fn generate_realization<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> ChannelRealization {
    let lo = cfg.bin_center_m - cfg.bin_half_width_m;
    let hi = cfg.bin_center_m + cfg.bin_half_width_m;
    let position = if hi > lo { Uniform::new(lo, hi).expect("valid bin").sample(rng) } else { lo };
    let mut layout = BlockerLayout::draw(cfg, rng);
    layout.clear_car(cfg, position);
    let phases = [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)];
    realize_at(cfg, position, &layout, phases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scenario(f: impl FnOnce(&mut ScenarioConfig)) -> Scenario {
        let mut cfg = ScenarioConfig::default();
        f(&mut cfg);
        Scenario::new(cfg).unwrap()
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Scenario::new(ScenarioConfig { bandwidth_ghz: 0.0, ..Default::default() }).is_err());
        assert!(Scenario::new(ScenarioConfig { blocker_gap_shape: 1.5, ..Default::default() }).is_err());
    }

    #[test]
    fn replay_is_identical() {
        let s = scenario(|_| {});
        for i in [0, 7, 123] {
            assert_eq!(s.draw(i), s.draw(i));
        }
        assert_ne!(s.draw(0), s.draw(1));
    }

    #[test]
    fn no_trucks_means_no_blockage() {
        let s = scenario(|c| c.blocker_gap_scale_m = 0.0);
        assert!((0..500).all(|i| !s.draw(i).los_blocked));
    }

    #[test]
    fn fixed_position_fixes_angles() {
        let s = scenario(|c| c.bin_half_width_m = 0.0);
        let a = s.draw(0);
        for i in 1..50 {
            let b = s.draw(i);
            for (p, q) in a.paths.iter().zip(&b.paths) {
                assert_eq!(p.aoa, q.aoa);
                assert_eq!(p.aod, q.aod);
            }
        }
    }

    #[test]
    fn los_path_geometry() {
        let cfg = ScenarioConfig::default();
        let ch = realize_at(&cfg, 30.0, &BlockerLayout::default(), [0.0, 0.0]);
        assert_eq!(ch.paths.len(), 3);
        let los = ch.paths[0];
        // the base station frame is boresight +x, local x = world up, local y = world -y
        let v = [30.0f64, 8.25, -5.5];
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let expect = PointingDirection::new((-8.25f64).atan2(-5.5).to_degrees(), (v[0] / r).acos().to_degrees()).unwrap();
        assert!(los.aod.angle_to(&expect) < 1e-9);
        assert!(ch.paths.iter().all(|p| p.aod.elevation_deg < 90.0 && p.aoa.elevation_deg < 90.0));
        // bounce lengths equal the distance to the mirrored receiver
        let c = SPEED_OF_LIGHT;
        let images = [[30.0, -13.25, 1.5], [30.0, 16.75, 1.5]];
        let mut want: Vec<f64> = images.iter().map(|m| norm(sub(*m, [0.0, -3.0, 7.0])) / c).collect();
        want.push(norm(v) / c);
        want.sort_by(f64::total_cmp);
        for (p, d) in ch.paths.iter().zip(&want) {
            assert!((p.delay_s - d).abs() < 1e-15, "{} vs {}", p.delay_s, d);
        }
    }

    #[test]
    fn slab_test_cases() {
        let t = Truck { min: [0.0, 0.0, 0.0], max: [1.0, 1.0, 1.0] };
        assert!(t.cuts([-1.0, 0.5, 0.5], [2.0, 0.5, 0.5]));
        assert!(!t.cuts([-1.0, 0.5, 1.5], [2.0, 0.5, 1.5]));
        assert!(!t.cuts([-1.0, -1.0, 0.5], [-0.5, 2.0, 0.5]));
    }

    #[test]
    fn nlos_fraction_near_target() {
        let s = scenario(|_| {});
        let n = 4000;
        let blocked = (0..n).filter(|&i| s.draw(i).los_blocked).count();
        let frac = blocked as f64 / n as f64;
        assert!((frac - 0.38).abs() <= 0.10, "nlos fraction {frac}");
    }

    proptest! {
        #[test]
        fn nearby_positions_are_consistent(seed in 0u64..500, x in 27.5f64..32.49, eps in 0.0f64..0.01) {
            let cfg = ScenarioConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layout = BlockerLayout::draw(&cfg, &mut rng);
            let a = realize_at(&cfg, x, &layout, [0.0, 0.0]);
            let b = realize_at(&cfg, x + eps, &layout, [0.0, 0.0]);
            prop_assert_eq!(a.paths.len(), b.paths.len());
            for (p, q) in a.paths.iter().zip(&b.paths) {
                prop_assert!(p.aoa.angle_to(&q.aoa) < 0.1);
                prop_assert!(p.aod.angle_to(&q.aod) < 0.1);
            }
        }
    }
}
