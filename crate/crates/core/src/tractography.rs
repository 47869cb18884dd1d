//! Deterministic streamline tractography through an orientation field.
//!
//! Fiber vectors are orientations, so every interpolation flips neighbor
//! vectors onto the hemisphere of a reference direction (the previous step)
//! before weighting. Streamlines are integrated with fixed-step RK4 in both
//! directions from each seed.

use rayon::prelude::*;

use crate::cardiac_frame::{helical_angle, local_basis, AxisModel, DEFAULT_R_MIN, SENTINEL};
use crate::error::{Error, Result};
use crate::structure_tensor::{dot, sign_normalize, OrientationField, Vec3};
use crate::volume_io::MaskBlock;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TractoParams {
    /// Integration step, voxels.
    pub step: f64,
    /// Stop (and do not seed) where FA falls below this.
    pub fa_min: f64,
    /// Largest allowed turn between consecutive steps, degrees.
    pub max_angle_deg: f64,
    /// Step budget per direction.
    pub max_steps: usize,
    pub seed_spacing: usize,
    /// Shorter streamlines (arc length, voxels) are dropped.
    pub min_length: f64,
}

impl Default for TractoParams {
    fn default() -> Self {
        TractoParams {
            step: 0.5,
            fa_min: 0.1,
            max_angle_deg: 60.0,
            max_steps: 10_000,
            seed_spacing: 4,
            min_length: 10.0,
        }
    }
}

impl TractoParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 2.0) {
            return Err(Error::invalid("step must lie in (0, 2]"));
        }
        if !(0.0..1.0).contains(&self.fa_min) {
            return Err(Error::invalid("fa_threshold must lie in [0, 1)"));
        }
        if !(self.max_angle_deg > 0.0 && self.max_angle_deg <= 90.0) {
            return Err(Error::invalid("max_angle must lie in (0, 90]"));
        }
        if self.seed_spacing < 1 {
            return Err(Error::invalid("seed_spacing must be ≥ 1"));
        }
        if !(self.min_length >= 0.0) {
            return Err(Error::invalid("min_length must be ≥ 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Streamline {
    /// Voxel-space positions.
    pub points: Vec<Vec3>,
    /// Helical angle of the local tangent at each point, degrees
    /// ([`SENTINEL`] where undefined).
    pub ha: Vec<f64>,
    pub seed_index: usize,
}

impl Streamline {
    pub fn arc_length(&self, step: f64) -> f64 {
        step * self.points.len().saturating_sub(1) as f64
    }
}

/// Why interpolation could not produce a direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpError {
    OutsideField,
    AllDegenerate,
    Vanishing,
}

/// Lattice seeds at voxel centers, `seed_spacing` apart and offset by half a
/// spacing, kept where the mask is set, the fiber is defined and FA reaches
/// `fa_min`. Ordered z-major.
pub fn seed_grid(
    mask: Option<&MaskBlock>,
    field: &OrientationField,
    params: &TractoParams,
) -> Result<Vec<Vec3>> {
    if let Some(m) = mask {
        if m.bbox != field.bbox {
            return Err(Error::BoxMismatch(format!(
                "mask covers {}, field covers {}",
                m.bbox, field.bbox
            )));
        }
    }
    let b = field.bbox;
    let s = params.seed_spacing as i64;
    let off = s / 2;
    let mut seeds = Vec::new();
    for z in (b.lo[2] + off..b.hi[2]).step_by(s as usize) {
        for y in (b.lo[1] + off..b.hi[1]).step_by(s as usize) {
            for x in (b.lo[0] + off..b.hi[0]).step_by(s as usize) {
                let i = b.index([x, y, z]);
                let in_mask = mask.map_or(true, |m| m.values[i] != 0);
                if in_mask && field.is_defined(i) && field.fa[i] as f64 >= params.fa_min {
                    seeds.push([x as f64, y as f64, z as f64]);
                }
            }
        }
    }
    Ok(seeds)
}

/// Trilinear cell of `p`: lower corner and fractional offsets.
fn cell(field: &OrientationField, p: Vec3) -> Option<([i64; 3], [i64; 3], Vec3)> {
    let b = field.bbox;
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    let mut t = [0.0; 3];
    for k in 0..3 {
        let first = b.lo[k] as f64;
        let last = (b.hi[k] - 1) as f64;
        if !(p[k] >= first && p[k] <= last) {
            return None;
        }
        let f = p[k].floor();
        lo[k] = f as i64;
        hi[k] = (lo[k] + 1).min(b.hi[k] - 1);
        t[k] = p[k] - f;
    }
    Some((lo, hi, t))
}

fn corners(lo: [i64; 3], hi: [i64; 3], t: Vec3) -> [([i64; 3], f64); 8] {
    std::array::from_fn(|c| {
        let pick = |k: usize| (c >> k) & 1 == 1;
        let q = [
            if pick(0) { hi[0] } else { lo[0] },
            if pick(1) { hi[1] } else { lo[1] },
            if pick(2) { hi[2] } else { lo[2] },
        ];
        let w = (0..3)
            .map(|k| if pick(k) { t[k] } else { 1.0 - t[k] })
            .product::<f64>();
        (q, w)
    })
}

/// Sign-coherent trilinear interpolation of the fiber field at `p`.
pub fn interpolate_direction(
    field: &OrientationField,
    p: Vec3,
    reference: Vec3,
) -> std::result::Result<Vec3, InterpError> {
    let (lo, hi, t) = cell(field, p).ok_or(InterpError::OutsideField)?;
    let mut acc = [0.0; 3];
    let mut any = false;
    for (q, w) in corners(lo, hi, t) {
        let f = field.fiber[field.bbox.index(q)];
        if f == [0.0; 3] {
            continue;
        }
        any = true;
        let f = f.map(|v| v as f64);
        let s = if dot(&f, &reference) < 0.0 { -w } else { w };
        for k in 0..3 {
            acc[k] += s * f[k];
        }
    }
    if !any {
        return Err(InterpError::AllDegenerate);
    }
    let n = dot(&acc, &acc).sqrt();
    if n < 1e-6 {
        return Err(InterpError::Vanishing);
    }
    Ok(acc.map(|v| v / n))
}

/// Trilinear FA at `p`, `None` outside the field.
pub fn interpolate_fa(field: &OrientationField, p: Vec3) -> Option<f64> {
    let (lo, hi, t) = cell(field, p)?;
    Some(
        corners(lo, hi, t)
            .iter()
            .map(|(q, w)| w * field.fa[field.bbox.index(*q)] as f64)
            .sum(),
    )
}

/// Everything a single integration needs besides the seed.
pub struct Tracker<'a> {
    pub field: &'a OrientationField,
    pub mask: Option<&'a MaskBlock>,
    pub axis: Option<&'a AxisModel>,
    pub params: TractoParams,
}

fn add(p: Vec3, d: Vec3, h: f64) -> Vec3 {
    [p[0] + h * d[0], p[1] + h * d[1], p[2] + h * d[2]]
}

impl Tracker<'_> {
    fn admissible(&self, p: Vec3) -> bool {
        let b = self.field.bbox;
        if let Some(m) = self.mask {
            let q = p.map(|v| v.round() as i64);
            if !b.contains(q) || m.get(q) == 0 {
                return false;
            }
        }
        interpolate_fa(self.field, p).is_some_and(|fa| fa >= self.params.fa_min)
    }

    /// One RK4 step from `p`, all stages referenced to `dir`.
    fn rk4(&self, p: Vec3, dir: Vec3) -> std::result::Result<Vec3, InterpError> {
        let h = self.params.step;
        let k1 = interpolate_direction(self.field, p, dir)?;
        let k2 = interpolate_direction(self.field, add(p, k1, h / 2.0), dir)?;
        let k3 = interpolate_direction(self.field, add(p, k2, h / 2.0), dir)?;
        let k4 = interpolate_direction(self.field, add(p, k3, h), dir)?;
        let v: Vec3 = std::array::from_fn(|k| (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]) / 6.0);
        let n = dot(&v, &v).sqrt();
        if n < 1e-6 {
            return Err(InterpError::Vanishing);
        }
        Ok(v.map(|c| c / n))
    }

    /// Points (excluding `start`) and their tangents along one direction.
    fn track(&self, start: Vec3, dir0: Vec3) -> (Vec<Vec3>, Vec<Vec3>) {
        let cos_limit = self.params.max_angle_deg.to_radians().cos();
        let mut pts = Vec::new();
        let mut tangents = Vec::new();
        let (mut p, mut d) = (start, dir0);
        for _ in 0..self.params.max_steps {
            let Ok(v) = self.rk4(p, d) else { break };
            if dot(&v, &d) < cos_limit {
                break;
            }
            let q = add(p, v, self.params.step);
            if !self.admissible(q) {
                break;
            }
            pts.push(q);
            tangents.push(v);
            p = q;
            d = v;
        }
        (pts, tangents)
    }

    fn ha_of(&self, p: Vec3, tangent: Vec3) -> f64 {
        self.axis
            .and_then(|a| local_basis(a, p, DEFAULT_R_MIN))
            .and_then(|b| helical_angle(tangent, &b))
            .unwrap_or(SENTINEL as f64)
    }

    /// Trace both ways from `seed`; `Ok(None)` when the result is rejected.
    pub fn integrate(&self, seed: Vec3, seed_index: usize) -> Result<Option<Streamline>> {
        let b = self.field.bbox;
        let q = seed.map(|v| v.round() as i64);
        if cell(self.field, seed).is_none() || !b.contains(q) {
            return Err(Error::invalid(format!("seed {seed:?} outside field {b}")));
        }
        let i = b.index(q);
        if !self.field.is_defined(i) || (self.field.fa[i] as f64) < self.params.fa_min {
            return Ok(None);
        }
        if self.mask.is_some_and(|m| m.values[i] == 0) {
            return Ok(None);
        }
        let d0 = sign_normalize(self.field.fiber[i].map(|v| v as f64));
        let n0 = dot(&d0, &d0).sqrt();
        let d0 = d0.map(|v| v / n0);
        let (fwd, fwd_t) = self.track(seed, d0);
        let (bwd, bwd_t) = self.track(seed, d0.map(|v| -v));

        let mut points = Vec::with_capacity(fwd.len() + bwd.len() + 1);
        let mut tangents = Vec::with_capacity(points.capacity());
        points.extend(bwd.iter().rev());
        tangents.extend(bwd_t.iter().rev());
        points.push(seed);
        tangents.push(d0);
        points.extend(&fwd);
        tangents.extend(&fwd_t);

        let line = Streamline {
            ha: points
                .iter()
                .zip(&tangents)
                .map(|(p, t)| self.ha_of(*p, *t))
                .collect(),
            points,
            seed_index,
        };
        if line.points.len() < 2 || line.arc_length(self.params.step) < self.params.min_length {
            return Ok(None);
        }
        Ok(Some(line))
    }

    /// Integrate every seed in parallel; results keep seed order.
    pub fn integrate_all(&self, seeds: &[Vec3]) -> Result<Vec<Streamline>> {
        let out: Result<Vec<Option<Streamline>>> = seeds
            .par_iter()
            .enumerate()
            .map(|(i, s)| self.integrate(*s, i))
            .collect();
        Ok(out?.into_iter().flatten().collect())
    }
}

/// Convenience wrapper around [`Tracker::integrate`].
pub fn integrate_streamline(
    field: &OrientationField,
    seed: Vec3,
    params: &TractoParams,
    axis: Option<&AxisModel>,
    mask: Option<&MaskBlock>,
) -> Result<Option<Streamline>> {
    Tracker {
        field,
        mask,
        axis,
        params: *params,
    }
    .integrate(seed, 0)
}

/// Drop streamlines shorter than `min_length`, order by seed, and optionally
/// keep `target` of them at a fixed stride (`i * n / target`).
pub fn filter_streamlines(
    mut lines: Vec<Streamline>,
    params: &TractoParams,
    target: Option<usize>,
) -> Vec<Streamline> {
    lines.retain(|l| l.arc_length(params.step) >= params.min_length);
    lines.sort_by_key(|l| l.seed_index);
    match target {
        Some(t) if t < lines.len() => {
            let n = lines.len();
            let mut keep = vec![false; n];
            for i in 0..t {
                keep[i * n / t] = true;
            }
            lines
                .into_iter()
                .zip(keep)
                .filter_map(|(l, k)| k.then_some(l))
                .collect()
        }
        _ => lines,
    }
}
