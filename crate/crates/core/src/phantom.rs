//! Synthetic volumes whose fiber orientation is known in closed form.
//!
//! Two fixtures are provided: a separable sinusoid with a single
//! axis-aligned fiber direction, and a cylindrical annulus filled with short
//! rods that follow a helical field whose angle varies linearly across the
//! wall. Random draws come from ChaCha8 seeded with a `u64`, so a spec and
//! seed always produce the same bytes.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::structure_tensor::Vec3;
use crate::volume_io::{Block, MaskBlock, ScalarBlock, VoxelBox};

/// Helical annulus around a z-parallel axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnulusPhantomSpec {
    pub dims: [usize; 3],
    /// Axis position (cx, cy) in voxel coordinates.
    pub axis: [f64; 2],
    pub r_inner: f64,
    pub r_outer: f64,
    /// Helical angle in degrees at the inner wall.
    pub ha_endo: f64,
    /// Helical angle in degrees at the outer wall.
    pub ha_epi: f64,
    pub rod_count: usize,
    /// Rod half-length in voxels (traced this far each way from its seed).
    pub rod_length: f64,
    pub rod_sigma: f64,
    /// Standard deviation of additive Gaussian noise before normalization.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl AnnulusPhantomSpec {
    /// Annulus centered in the xy-plane with radii at 15% and 40% of the
    /// smaller in-plane extent, ±60° transmural law, 0.5 rods per voxel.
    pub fn centered(dims: [usize; 3]) -> Self {
        let m = dims[0].min(dims[1]) as f64;
        let mut spec = AnnulusPhantomSpec {
            dims,
            axis: [dims[0] as f64 / 2.0, dims[1] as f64 / 2.0],
            r_inner: (0.15 * m).round(),
            r_outer: (0.4 * m).round(),
            ha_endo: 60.0,
            ha_epi: -60.0,
            rod_count: 1,
            rod_length: 6.0,
            rod_sigma: 1.0,
            noise_sigma: 0.0,
            seed: 1,
        };
        spec.rod_count = spec.rods_for_density(0.5);
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let [nx, ny, nz] = self.dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::invalid("phantom dims must be ≥ 1"));
        }
        let half = nx.min(ny) as f64 / 2.0;
        if !(0.0 < self.r_inner && self.r_inner < self.r_outer && self.r_outer < half) {
            return Err(Error::invalid(format!(
                "need 0 < r_inner < r_outer < {half}, got {} and {}",
                self.r_inner, self.r_outer
            )));
        }
        for (name, v) in [("ha_endo", self.ha_endo), ("ha_epi", self.ha_epi)] {
            if !(-90.0..=90.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [-90, 90]")));
            }
        }
        if self.rod_count < 1 {
            return Err(Error::invalid("rod_count must be ≥ 1"));
        }
        if !(self.rod_length >= 0.0 && self.rod_sigma >= 0.5 && self.noise_sigma >= 0.0) {
            return Err(Error::invalid(
                "rod_length ≥ 0, rod_sigma ≥ 0.5 and noise_sigma ≥ 0 required",
            ));
        }
        Ok(())
    }

    pub fn annulus_volume(&self) -> f64 {
        PI * (self.r_outer.powi(2) - self.r_inner.powi(2)) * self.dims[2] as f64
    }

    /// Rod count giving `density` rods per voxel of annulus.
    pub fn rods_for_density(&self, density: f64) -> usize {
        (density * self.annulus_volume()).ceil().max(1.0) as usize
    }

    pub fn radius(&self, p: Vec3) -> f64 {
        (p[0] - self.axis[0]).hypot(p[1] - self.axis[1])
    }

    /// Normalized wall depth, 0 at the inner surface, 1 at the outer.
    pub fn depth(&self, p: Vec3) -> f64 {
        (self.radius(p) - self.r_inner) / (self.r_outer - self.r_inner)
    }

    pub fn ha_at_depth(&self, d: f64) -> f64 {
        self.ha_endo + d * (self.ha_epi - self.ha_endo)
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let r = self.radius(p);
        r >= self.r_inner && r <= self.r_outer
    }

    /// Fiber at `p` with depth clamped to the wall, defined everywhere off
    /// the axis.
    fn field(&self, p: Vec3) -> Vec3 {
        let (rx, ry) = (p[0] - self.axis[0], p[1] - self.axis[1]);
        let r = rx.hypot(ry);
        let d = ((r - self.r_inner) / (self.r_outer - self.r_inner)).clamp(0.0, 1.0);
        let theta = self.ha_at_depth(d).to_radians();
        let (c, s) = (theta.cos(), theta.sin());
        [-ry / r * c, rx / r * c, s]
    }

    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        let [nx, ny, nz] = self.dims;
        let _ = writeln!(s, "# helical annulus phantom");
        let _ = writeln!(s, "dims = {nx},{ny},{nz}");
        let _ = writeln!(s, "axis = {},{}", self.axis[0], self.axis[1]);
        let _ = writeln!(s, "r_inner = {}", self.r_inner);
        let _ = writeln!(s, "r_outer = {}", self.r_outer);
        let _ = writeln!(s, "ha_endo = {}", self.ha_endo);
        let _ = writeln!(s, "ha_epi = {}", self.ha_epi);
        let _ = writeln!(s, "rod_count = {}", self.rod_count);
        let _ = writeln!(s, "rod_length = {}", self.rod_length);
        let _ = writeln!(s, "rod_sigma = {}", self.rod_sigma);
        let _ = writeln!(s, "noise_sigma = {}", self.noise_sigma);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(
            s,
            "orientation = cos(theta)*c_hat + sin(theta)*z_hat, theta = ha_endo + d*(ha_epi - ha_endo)"
        );
        s
    }
}

/// Closed-form orientation truth for a generated phantom.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Uniform { direction: Vec3 },
    Annulus(AnnulusPhantomSpec),
}

impl GroundTruth {
    /// Unit fiber direction at `p`, `None` where the truth is undefined.
    pub fn orientation(&self, p: Vec3) -> Option<Vec3> {
        match self {
            GroundTruth::Uniform { direction } => Some(*direction),
            GroundTruth::Annulus(spec) => analytic_orientation(spec, p).ok(),
        }
    }

    /// Helical angle in degrees; for the annulus this depends on depth only.
    pub fn ha(&self, p: Vec3) -> Option<f64> {
        match self {
            GroundTruth::Uniform { direction } => {
                Some(if direction[2] != 0.0 { 90.0 } else { 0.0 })
            }
            GroundTruth::Annulus(spec) => spec.contains(p).then(|| spec.ha_at_depth(spec.depth(p))),
        }
    }

    /// Intrusion angle; the annulus field never has a radial component.
    pub fn ia(&self, p: Vec3) -> Option<f64> {
        match self {
            GroundTruth::Uniform { .. } => None,
            GroundTruth::Annulus(spec) => spec.contains(p).then_some(0.0),
        }
    }
}

/// Separable sinusoid texture whose only invariant direction is a coordinate
/// axis. For `direction = z`: `I = sin(2πx/px)·sin(2πy/py)`; for x:
/// `I = sin(2πy/py)·sin(2πz/px)`; for y: `I = sin(2πz/px)·sin(2πx/py)`.
pub fn generate_uniform_fiber(
    dims: [usize; 3],
    direction: Vec3,
    periods: [f64; 2],
) -> Result<(ScalarBlock, GroundTruth)> {
    let axis = match direction {
        [d, 0.0, 0.0] if d.abs() == 1.0 => 0,
        [0.0, d, 0.0] if d.abs() == 1.0 => 1,
        [0.0, 0.0, d] if d.abs() == 1.0 => 2,
        _ => {
            return Err(Error::invalid(
                "uniform fiber phantom needs a coordinate-axis direction",
            ))
        }
    };
    if dims.contains(&0) || !(periods[0] > 0.0 && periods[1] > 0.0) {
        return Err(Error::invalid("dims must be ≥ 1 and periods > 0"));
    }
    let [px, py] = periods;
    let wave = |t: i64, period: f64| (2.0 * PI * t as f64 / period).sin();
    let block = Block::from_fn(VoxelBox::whole(dims), |p| {
        let [x, y, z] = p;
        let v = match axis {
            2 => wave(x, px) * wave(y, py),
            0 => wave(y, py) * wave(z, px),
            _ => wave(z, px) * wave(x, py),
        };
        v as f32
    });
    let mut unit = [0.0; 3];
    unit[axis] = 1.0;
    Ok((block, GroundTruth::Uniform { direction: unit }))
}

/// Closed-form fiber `cos θ·ĉ + sin θ·ẑ` at a point inside the annulus.
pub fn analytic_orientation(spec: &AnnulusPhantomSpec, p: Vec3) -> Result<Vec3> {
    if !spec.contains(p) {
        return Err(Error::invalid(format!(
            "point {p:?} lies outside the annulus"
        )));
    }
    Ok(spec.field(p))
}

/// Annulus occupancy at voxel centers.
pub fn annulus_mask(spec: &AnnulusPhantomSpec) -> MaskBlock {
    Block::from_fn(VoxelBox::whole(spec.dims), |p| {
        u8::from(spec.contains([p[0] as f64, p[1] as f64, p[2] as f64]))
    })
}

const ROD_STEP: f64 = 0.5;

/// Rod-textured annulus: volume normalized to `[0, 1]`, its mask, and the
/// analytic truth.
pub fn generate_helical_annulus(
    spec: &AnnulusPhantomSpec,
) -> Result<(ScalarBlock, MaskBlock, GroundTruth)> {
    spec.validate()?;
    let [nx, ny, nz] = spec.dims;
    let mut acc = vec![0.0f64; nx * ny * nz];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let steps = (spec.rod_length / ROD_STEP).round() as usize;
    let mut points = Vec::with_capacity(2 * steps + 1);

    for _ in 0..spec.rod_count {
        let seed = sample_annulus(spec, &mut rng);
        points.clear();
        trace(spec, seed, -1.0, steps, &mut points);
        points.reverse();
        points.push(seed);
        trace(spec, seed, 1.0, steps, &mut points);
        for p in &points {
            deposit(&mut acc, spec.dims, *p);
        }
    }
    // The trilinear deposit already spreads each point by variance 1/6.
    blur(
        &mut acc,
        spec.dims,
        (spec.rod_sigma.powi(2) - 1.0 / 6.0).sqrt(),
    );

    if spec.noise_sigma > 0.0 {
        let normal =
            Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for v in acc.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    let (lo, hi) = acc
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let range = hi - lo;
    let values = acc
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range) as f32
            } else {
                0.0
            }
        })
        .collect();
    let bbox = VoxelBox::whole(spec.dims);
    Ok((
        Block { bbox, values },
        annulus_mask(spec),
        GroundTruth::Annulus(spec.clone()),
    ))
}

fn sample_annulus(spec: &AnnulusPhantomSpec, rng: &mut ChaCha8Rng) -> Vec3 {
    let ro = spec.r_outer;
    loop {
        let x = spec.axis[0] + ro * (2.0 * rng.gen::<f64>() - 1.0);
        let y = spec.axis[1] + ro * (2.0 * rng.gen::<f64>() - 1.0);
        let z = rng.gen::<f64>() * (spec.dims[2] as f64 - 1.0);
        let p = [x, y, z];
        if spec.contains(p) {
            return p;
        }
    }
}

fn trace(spec: &AnnulusPhantomSpec, start: Vec3, sign: f64, steps: usize, out: &mut Vec<Vec3>) {
    let mut p = start;
    for _ in 0..steps {
        let f = spec.field(p);
        p = [
            p[0] + sign * ROD_STEP * f[0],
            p[1] + sign * ROD_STEP * f[1],
            p[2] + sign * ROD_STEP * f[2],
        ];
        out.push(p);
    }
}

/// Trilinear deposit of unit mass at `p`; corners outside the volume are
/// dropped.
fn deposit(acc: &mut [f64], dims: [usize; 3], p: Vec3) {
    let base = p.map(|v| v.floor());
    let t = [p[0] - base[0], p[1] - base[1], p[2] - base[2]];
    let b = base.map(|v| v as i64);
    let [nx, ny, nz] = dims.map(|v| v as i64);
    for c in 0..8 {
        let q = [b[0] + (c & 1), b[1] + ((c >> 1) & 1), b[2] + ((c >> 2) & 1)];
        if q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= nx || q[1] >= ny || q[2] >= nz {
            continue;
        }
        let w: f64 = (0..3)
            .map(|k| if (c >> k) & 1 == 1 { t[k] } else { 1.0 - t[k] })
            .product();
        acc[((q[2] * ny + q[1]) * nx + q[0]) as usize] += w;
    }
}

/// In-place separable Gaussian blur with zeros beyond the volume.
fn blur(acc: &mut [f64], dims: [usize; 3], sigma: f64) {
    let radius = (4.0 * sigma).ceil() as i64;
    let mut w: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut line = Vec::new();
    for axis in 0..3 {
        let n = dims[axis] as i64;
        let stride = strides[axis];
        for start in 0..acc.len() {
            if (start / stride) % dims[axis] != 0 {
                continue;
            }
            line.clear();
            line.extend((0..dims[axis]).map(|i| acc[start + i * stride]));
            for i in 0..n {
                let lo = (i - radius).max(0);
                let hi = (i + radius).min(n - 1);
                let v: f64 = (lo..=hi)
                    .map(|j| w[(j - i + radius) as usize] * line[j as usize])
                    .sum();
                acc[start + i as usize * stride] = v;
            }
        }
    }
}
