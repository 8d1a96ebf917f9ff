//! Uniform planar arrays: steering vectors, beam patterns, half-power
//! beamwidths and the tiered beam codebook.
//!
//! Angles are in degrees. Elevation `0` is the array boresight (+z of the
//! array frame) and `90` is the array plane; azimuth is measured from the
//! array x-axis.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bisection tolerance for half-power crossings, in degrees.
pub const CROSSING_TOL_DEG: f64 = 1e-4;

/// Coarse step used to bracket a crossing before bisecting.
const SCAN_STEP_DEG: f64 = 0.05;

/// Largest elevation treated as inside the front hemisphere when searching
/// for crossings. The element pattern drops to zero at 90 degrees, and that
/// edge is not a half-power crossing.
const FRONT_EDGE_DEG: f64 = 90.0 - 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_x: usize,
    pub n_y: usize,
    /// Element spacing in wavelengths.
    pub spacing_x: f64,
    pub spacing_y: f64,
}

impl ArrayGeometry {
    pub fn new(n_x: usize, n_y: usize, spacing_x: f64, spacing_y: f64) -> Result<Self> {
        if n_x == 0 || n_y == 0 {
            return Err(Error::Geometry(format!("element counts must be >= 1, got {n_x}x{n_y}")));
        }
        if !(spacing_x > 0.0 && spacing_y > 0.0) || !spacing_x.is_finite() || !spacing_y.is_finite() {
            return Err(Error::Geometry(format!("spacings must be positive, got {spacing_x}, {spacing_y}")));
        }
        Ok(Self { n_x, n_y, spacing_x, spacing_y })
    }

    /// Half-wavelength spaced `n_x` by `n_y` array.
    pub fn half_wave(n_x: usize, n_y: usize) -> Result<Self> {
        Self::new(n_x, n_y, 0.5, 0.5)
    }

    pub fn elements(&self) -> usize {
        self.n_x * self.n_y
    }

    fn omegas(&self, dir: PointingDirection) -> (f64, f64) {
        let (st, ct) = (dir.elevation_deg.to_radians().sin(), dir.azimuth_deg.to_radians().cos());
        let sp = dir.azimuth_deg.to_radians().sin();
        (2.0 * PI * self.spacing_x * st * ct, 2.0 * PI * self.spacing_y * st * sp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointingDirection {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl PointingDirection {
    /// Builds a direction, wrapping azimuth into (-180, 180].
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        if !azimuth_deg.is_finite() || !(0.0..=180.0).contains(&elevation_deg) {
            return Err(Error::Direction(format!("az {azimuth_deg}, el {elevation_deg}")));
        }
        Ok(Self { azimuth_deg: wrap_azimuth(azimuth_deg), elevation_deg })
    }

    /// Point on the great circle through boresight in the plane of
    /// `azimuth_deg`. Negative `t` lands on the opposite half of that plane.
    pub fn on_meridian(azimuth_deg: f64, t_deg: f64) -> Self {
        let (az, el) = if t_deg >= 0.0 { (azimuth_deg, t_deg) } else { (azimuth_deg + 180.0, -t_deg) };
        Self { azimuth_deg: wrap_azimuth(az), elevation_deg: el.min(180.0) }
    }

    /// Unit vector in the array frame.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (t, p) = (self.elevation_deg.to_radians(), self.azimuth_deg.to_radians());
        [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]
    }

    /// Direction of a unit (or any nonzero) vector in the array frame.
    pub fn from_vector(v: [f64; 3]) -> Self {
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let el = (v[2] / r).clamp(-1.0, 1.0).acos().to_degrees();
        let az = if v[0] == 0.0 && v[1] == 0.0 { 0.0 } else { v[1].atan2(v[0]).to_degrees() };
        Self { azimuth_deg: wrap_azimuth(az), elevation_deg: el }
    }

    /// Great-circle angle to `other`, degrees.
    pub fn angle_to(&self, other: &PointingDirection) -> f64 {
        let (a, b) = (self.unit_vector(), other.unit_vector());
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        dot.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

pub fn wrap_azimuth(az: f64) -> f64 {
    let mut a = az % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Element power pattern: radiates only into the front hemisphere.
pub fn element_gain(dir: PointingDirection) -> f64 {
    if dir.elevation_deg < 90.0 {
        1.0
    } else {
        0.0
    }
}

/// `sum_{m=0}^{n-1} exp(j m delta)` in closed form.
fn dirichlet(n: usize, delta: f64) -> Complex64 {
    let half = 0.5 * delta;
    let s = half.sin();
    if s.abs() < 1e-12 {
        // delta is a multiple of 2pi: every term equals exp(j m delta) = (+-1)^m
        let sign = if (half / PI).round() as i64 % 2 == 0 { 1.0 } else { -1.0 };
        if sign > 0.0 {
            return Complex64::new(n as f64, 0.0);
        }
        return Complex64::new(if n % 2 == 1 { 1.0 } else { 0.0 }, 0.0);
    }
    let mag = (n as f64 * half).sin() / s;
    Complex64::from_polar(mag, (n as f64 - 1.0) * half)
}

/// Progressive-phase vector without the element pattern, unit norm.
pub fn phase_vector(geom: &ArrayGeometry, dir: PointingDirection) -> Vec<Complex64> {
    let (ox, oy) = geom.omegas(dir);
    let norm = 1.0 / (geom.elements() as f64).sqrt();
    let mut v = Vec::with_capacity(geom.elements());
    for n in 0..geom.n_y {
        for m in 0..geom.n_x {
            v.push(Complex64::from_polar(norm, n as f64 * oy + m as f64 * ox));
        }
    }
    v
}

/// Steering vector: the phase vector scaled by the element pattern.
pub fn steering_vector(geom: &ArrayGeometry, dir: PointingDirection) -> Vec<Complex64> {
    let g = element_gain(dir);
    phase_vector(geom, dir).into_iter().map(|z| z * g).collect()
}

/// `w(beam)^H a(path)`, with `w` the unit-norm beam pointing at `beam` and `a`
/// the steering vector of a plane wave from `path`.
pub fn array_response(geom: &ArrayGeometry, beam: PointingDirection, path: PointingDirection) -> Complex64 {
    let g = element_gain(beam) * element_gain(path);
    if g == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let (bx, by) = geom.omegas(beam);
    let (px, py) = geom.omegas(path);
    dirichlet(geom.n_x, px - bx) * dirichlet(geom.n_y, py - by) * (g / geom.elements() as f64)
}

/// Same as [`array_response`] but ignoring the element pattern; used when
/// searching for crossings right up to the array plane.
fn array_factor_gain(geom: &ArrayGeometry, beam: PointingDirection, eval: PointingDirection) -> f64 {
    let (bx, by) = geom.omegas(beam);
    let (px, py) = geom.omegas(eval);
    (dirichlet(geom.n_x, px - bx) * dirichlet(geom.n_y, py - by)).norm_sqr() / geom.elements() as f64
}

/// Power gain of the beam pointing at `beam_dir`, observed from `eval_dir`.
/// Peaks at `n_x * n_y` when the two coincide.
pub fn beam_power_gain(geom: &ArrayGeometry, beam_dir: PointingDirection, eval_dir: PointingDirection) -> f64 {
    array_response(geom, beam_dir, eval_dir).norm_sqr() * geom.elements() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Azimuth,
    Elevation,
}

/// Distances from the peak to the half-power points along a cut, on the
/// increasing and decreasing side. `None` where the cut has no crossing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfWidths {
    pub upper: Option<f64>,
    pub lower: Option<f64>,
}

impl HalfWidths {
    fn full(&self) -> Option<f64> {
        match (self.upper, self.lower) {
            (Some(u), Some(l)) => Some(u + l),
            (Some(w), None) | (None, Some(w)) => Some(2.0 * w),
            (None, None) => None,
        }
    }
}

/// Walks `f` from 0 outward in steps of `SCAN_STEP_DEG` up to `limit` and
/// bisects the first sign change of `f - 0.5`.
fn first_crossing(f: impl Fn(f64) -> f64, limit: f64) -> Option<f64> {
    let mut lo = 0.0;
    loop {
        let hi = (lo + SCAN_STEP_DEG).min(limit);
        if f(hi) < 0.5 {
            let (mut a, mut b) = (lo, hi);
            while b - a > CROSSING_TOL_DEG {
                let m = 0.5 * (a + b);
                if f(m) < 0.5 {
                    b = m;
                } else {
                    a = m;
                }
            }
            return Some(0.5 * (a + b));
        }
        if hi >= limit {
            return None;
        }
        lo = hi;
    }
}

/// Half-power distances on either side of `beam_dir`.
///
/// The elevation cut is the great circle through boresight and the beam. The
/// azimuth cut holds elevation fixed; for a boresight beam, where that circle
/// degenerates, it is the great circle in the plane of azimuth 90.
pub fn half_widths(geom: &ArrayGeometry, beam_dir: PointingDirection, axis: Axis) -> HalfWidths {
    let peak = array_factor_gain(geom, beam_dir, beam_dir);
    let th0 = beam_dir.elevation_deg;
    let phi0 = beam_dir.azimuth_deg;
    let meridian = |phi: f64, t0: f64, sign: f64| {
        let t_edge = if sign > 0.0 { FRONT_EDGE_DEG - t0 } else { FRONT_EDGE_DEG + t0 };
        let f = move |x: f64| {
            let d = PointingDirection::on_meridian(phi, t0 + sign * x);
            array_factor_gain(geom, beam_dir, d) / peak
        };
        first_crossing(f, t_edge.max(0.0))
    };
    match axis {
        Axis::Elevation => HalfWidths { upper: meridian(phi0, th0, 1.0), lower: meridian(phi0, th0, -1.0) },
        Axis::Azimuth if th0 == 0.0 => {
            HalfWidths { upper: meridian(phi0 + 90.0, 0.0, 1.0), lower: meridian(phi0 + 90.0, 0.0, -1.0) }
        }
        Axis::Azimuth => {
            let ring = |sign: f64| {
                let f = move |x: f64| {
                    let d = PointingDirection { azimuth_deg: wrap_azimuth(phi0 + sign * x), elevation_deg: th0 };
                    array_factor_gain(geom, beam_dir, d) / peak
                };
                first_crossing(f, 180.0)
            };
            HalfWidths { upper: ring(1.0), lower: ring(-1.0) }
        }
    }
}

/// Full 3 dB width of the beam along `axis`, degrees. When only one side of
/// the cut crosses half power (the other runs into the array plane) the width
/// is twice that side.
pub fn half_power_beamwidth(geom: &ArrayGeometry, beam_dir: PointingDirection, axis: Axis) -> Result<f64> {
    if beam_dir.elevation_deg >= 90.0 {
        return Err(Error::Direction(format!("beam elevation {} is not in the front hemisphere", beam_dir.elevation_deg)));
    }
    half_widths(geom, beam_dir, axis).full().ok_or(Error::NoHalfPowerCrossing {
        az: beam_dir.azimuth_deg,
        el: beam_dir.elevation_deg,
        axis: match axis {
            Axis::Azimuth => "azimuth",
            Axis::Elevation => "elevation",
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub direction: PointingDirection,
    pub az_beamwidth_deg: f64,
    pub el_beamwidth_deg: f64,
    /// Elevation tier, 0 for the boresight beam.
    pub tier: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub geometry: ArrayGeometry,
    pub beams: Vec<Beam>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    /// Consecutive beam index pairs `(j, j+1)` sharing a tier. The pair that
    /// would close the azimuth ring (last beam back to the first) is not
    /// included.
    pub fn adjacent_same_tier(&self) -> Vec<(usize, usize)> {
        (1..self.beams.len())
            .filter(|&j| j > 0 && self.beams[j - 1].tier == self.beams[j].tier)
            .map(|j| (j - 1, j))
            .collect()
    }

    /// Tab-separated table: index, azimuth, elevation, az width, el width.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index\tazimuth_deg\televation_deg\taz_beamwidth_deg\tel_beamwidth_deg")?;
        for (i, b) in self.beams.iter().enumerate() {
            writeln!(
                out,
                "{i}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                b.direction.azimuth_deg, b.direction.elevation_deg, b.az_beamwidth_deg, b.el_beamwidth_deg
            )?;
        }
        Ok(())
    }
}

fn make_beam(geom: &ArrayGeometry, direction: PointingDirection, tier: usize) -> Result<Beam> {
    Ok(Beam {
        direction,
        az_beamwidth_deg: half_power_beamwidth(geom, direction, Axis::Azimuth)?,
        el_beamwidth_deg: half_power_beamwidth(geom, direction, Axis::Elevation)?,
        tier,
    })
}

/// Tiles the front hemisphere with beams spaced one 3 dB beamwidth apart.
///
/// Starting at boresight, each new tier sits one full elevation beamwidth
/// above the previous tier's azimuth-0 beam (twice its upper half-width, the
/// side facing the new tier). Within a tier, beams step in azimuth from 0 by
/// their own azimuth 3 dB width; a beam is kept only if its whole width fits
/// before 360. Tiers stop once the next elevation reaches 90.
pub fn generate_codebook(geom: &ArrayGeometry) -> Result<Codebook> {
    if geom.n_x < 2 || geom.n_y < 2 {
        return Err(Error::Geometry(format!("codebook needs at least 2x2 elements, got {}x{}", geom.n_x, geom.n_y)));
    }
    let boresight = PointingDirection { azimuth_deg: 0.0, elevation_deg: 0.0 };
    let mut beams = vec![make_beam(geom, boresight, 0)?];
    let mut theta = 0.0;
    let mut tier = 0;
    loop {
        let anchor = PointingDirection { azimuth_deg: 0.0, elevation_deg: theta };
        let Some(up) = half_widths(geom, anchor, Axis::Elevation).upper else { break };
        let next = theta + 2.0 * up;
        if next >= 90.0 {
            break;
        }
        theta = next;
        tier += 1;
        let mut phi = 0.0;
        loop {
            let dir = PointingDirection { azimuth_deg: wrap_azimuth(phi), elevation_deg: theta };
            let hw = half_widths(geom, dir, Axis::Azimuth);
            let (Some(a), Some(b)) = (hw.upper, hw.lower) else {
                return Err(Error::NoHalfPowerCrossing { az: phi, el: theta, axis: "azimuth" });
            };
            if phi + a + b >= 360.0 {
                break;
            }
            beams.push(make_beam(geom, dir, tier)?);
            phi += a + b;
        }
    }
    Ok(Codebook { geometry: *geom, beams })
}

/// Gain (relative to peak, dB) where the patterns of two beams on the same
/// elevation ring intersect, searched along the ring between them.
pub fn ring_crossover_db(geom: &ArrayGeometry, a: PointingDirection, b: PointingDirection) -> f64 {
    let th = a.elevation_deg;
    let mut span = wrap_azimuth(b.azimuth_deg - a.azimuth_deg);
    if span < 0.0 {
        span += 360.0;
    }
    let at = |x: f64| PointingDirection { azimuth_deg: wrap_azimuth(a.azimuth_deg + x), elevation_deg: th };
    let diff = |x: f64| beam_power_gain(geom, a, at(x)) - beam_power_gain(geom, b, at(x));
    let (mut lo, mut hi) = (0.0, span);
    while hi - lo > 1e-9 {
        let m = 0.5 * (lo + hi);
        if diff(m) > 0.0 {
            lo = m;
        } else {
            hi = m;
        }
    }
    let x = 0.5 * (lo + hi);
    10.0 * (beam_power_gain(geom, a, at(x)) / geom.elements() as f64).log10()
}
