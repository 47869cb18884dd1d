//! Cylindrical frame around the long axis and the angle maps derived in it.
//!
//! For a voxel at `p`, `r̂` points from the axis to `p` in the slice plane,
//! `ẑ` is the volume +z direction and `ĉ = ẑ × r̂`. Fibers are orientations,
//! so every angle is computed after folding the fiber onto the half-space
//! `f·ĉ ≥ 0` (ties broken on `f·ẑ`, then `f·r̂`):
//!
//! * helical angle `HA = atan2(f·ẑ, f·ĉ)`
//! * intrusion angle `IA = atan2(f·r̂, f·ĉ)`, measured in the
//!   circumferential–radial plane.

use std::path::Path;

use crate::error::{Error, Result};
use crate::structure_tensor::{cross, dot, OrientationField, Vec3};
use crate::volume_io::{MaskBlock, VoxelBox};

/// Marker stored in float maps at invalid voxels.
pub const SENTINEL: f32 = -999.0;

/// Default on-axis exclusion radius, voxels.
pub const DEFAULT_R_MIN: f64 = 2.0;

/// Long axis as per-slice centers, interpolated linearly in z and clamped
/// beyond the first and last entries.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisModel {
    /// `(z, cx, cy)`, strictly increasing in z.
    centers: Vec<[f64; 3]>,
}

impl AxisModel {
    pub fn new(centers: Vec<[f64; 3]>) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::invalid("axis needs at least two centers"));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("axis centers must be finite"));
        }
        if centers.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::invalid(
                "axis center z values must strictly increase",
            ));
        }
        Ok(AxisModel { centers })
    }

    /// Axis through two voxel-space points `(x, y, z)` with distinct z.
    pub fn from_points(a: Vec3, b: Vec3) -> Result<Self> {
        let (lo, hi) = if a[2] <= b[2] { (a, b) } else { (b, a) };
        AxisModel::new(vec![[lo[2], lo[0], lo[1]], [hi[2], hi[0], hi[1]]])
    }

    /// Straight axis parallel to z through `(cx, cy)` spanning `nz` slices.
    pub fn vertical(cx: f64, cy: f64, nz: usize) -> Self {
        let top = (nz.max(2) - 1) as f64;
        AxisModel {
            centers: vec![[0.0, cx, cy], [top, cx, cy]],
        }
    }

    /// CSV lines `z,cx,cy`; blank lines and `#` comments are skipped.
    pub fn parse_centers(text: &str) -> Result<Self> {
        let mut centers = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: Option<Vec<f64>> = line.split(',').map(|t| t.trim().parse().ok()).collect();
            match vals.as_deref() {
                Some(&[z, cx, cy]) => centers.push([z, cx, cy]),
                _ => {
                    return Err(Error::Config {
                        line: n + 1,
                        message: format!("expected `z,cx,cy`, got `{line}`"),
                    })
                }
            }
        }
        AxisModel::new(centers)
    }

    pub fn read_centers(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        AxisModel::parse_centers(&text)
    }

    pub fn centers(&self) -> &[[f64; 3]] {
        &self.centers
    }

    /// Interpolated `(cx, cy)` at slice position `z`.
    pub fn center(&self, z: f64) -> [f64; 2] {
        let c = &self.centers;
        let first = c[0];
        let last = c[c.len() - 1];
        if z <= first[0] {
            return [first[1], first[2]];
        }
        if z >= last[0] {
            return [last[1], last[2]];
        }
        let i = c.partition_point(|e| e[0] <= z) - 1;
        let (a, b) = (c[i], c[i + 1]);
        let t = (z - a[0]) / (b[0] - a[0]);
        [a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
    }

    /// Cylindrical coordinates `(r, φ in degrees [0, 360), z)` of `p`.
    pub fn cylindrical(&self, p: Vec3) -> (f64, f64, f64) {
        let [cx, cy] = self.center(p[2]);
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        let phi = dy.atan2(dx).to_degrees();
        let phi = if phi < 0.0 { phi + 360.0 } else { phi };
        (dx.hypot(dy), phi % 360.0, p[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalBasis {
    pub r_hat: Vec3,
    pub c_hat: Vec3,
    pub z_hat: Vec3,
}

/// Radial, circumferential and longitudinal unit vectors at `p`, or `None`
/// within `r_min` of the axis.
pub fn local_basis(axis: &AxisModel, p: Vec3, r_min: f64) -> Option<LocalBasis> {
    let [cx, cy] = axis.center(p[2]);
    let (dx, dy) = (p[0] - cx, p[1] - cy);
    let d = dx.hypot(dy);
    if !(d >= r_min) || d == 0.0 {
        return None;
    }
    let r_hat = [dx / d, dy / d, 0.0];
    let z_hat = [0.0, 0.0, 1.0];
    Some(LocalBasis {
        r_hat,
        c_hat: cross(&z_hat, &r_hat),
        z_hat,
    })
}

/// Fiber components `(f·r̂, f·ĉ, f·ẑ)` after the orientation fold.
/// Negative zeros are normalized so `f` and `-f` give identical bits.
fn folded(f: Vec3, b: &LocalBasis) -> (f64, f64, f64) {
    let (fr, fc, fz) = (dot(&f, &b.r_hat), dot(&f, &b.c_hat), dot(&f, &b.z_hat));
    let flip = fc < 0.0 || (fc == 0.0 && (fz < 0.0 || (fz == 0.0 && fr < 0.0)));
    let (fr, fc, fz) = if flip { (-fr, -fc, -fz) } else { (fr, fc, fz) };
    (fr + 0.0, fc + 0.0, fz + 0.0)
}

/// Helical angle in degrees, `None` for a purely radial fiber.
pub fn helical_angle(f: Vec3, basis: &LocalBasis) -> Option<f64> {
    let (_, fc, fz) = folded(f, basis);
    if fc == 0.0 && fz == 0.0 {
        return None;
    }
    Some(fz.atan2(fc).to_degrees())
}

/// Intrusion angle in degrees, in the circumferential–radial plane.
pub fn intrusion_angle(f: Vec3, basis: &LocalBasis) -> f64 {
    let (fr, fc, _) = folded(f, basis);
    fr.atan2(fc).to_degrees()
}

/// Voxel-wise HA / IA / FA over a box with a validity bitmap.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleMaps {
    pub bbox: VoxelBox,
    pub ha: Vec<f32>,
    pub ia: Vec<f32>,
    pub fa: Vec<f32>,
    pub valid: Vec<u8>,
}

impl AngleMaps {
    pub fn invalid(bbox: VoxelBox) -> Self {
        let n = bbox.len();
        AngleMaps {
            bbox,
            ha: vec![SENTINEL; n],
            ia: vec![SENTINEL; n],
            fa: vec![SENTINEL; n],
            valid: vec![0; n],
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v != 0).count()
    }
}

/// Angles for every voxel that is inside the mask, has a defined fiber, is
/// at least `r_min` from the axis and is not purely radial. All other
/// voxels get [`SENTINEL`] and `valid = 0`.
pub fn compute_angle_maps(
    field: &OrientationField,
    axis: &AxisModel,
    mask: Option<&MaskBlock>,
    r_min: f64,
) -> Result<AngleMaps> {
    if let Some(m) = mask {
        if m.bbox != field.bbox {
            return Err(Error::BoxMismatch(format!(
                "mask covers {}, field covers {}",
                m.bbox, field.bbox
            )));
        }
    }
    let mut maps = AngleMaps::invalid(field.bbox);
    for (i, p) in field.bbox.iter().enumerate() {
        if mask.is_some_and(|m| m.values[i] == 0) || !field.is_defined(i) {
            continue;
        }
        let pos = [p[0] as f64, p[1] as f64, p[2] as f64];
        let Some(basis) = local_basis(axis, pos, r_min) else {
            continue;
        };
        let f = field.fiber[i].map(|v| v as f64);
        let Some(ha) = helical_angle(f, &basis) else {
            continue;
        };
        maps.ha[i] = ha as f32;
        maps.ia[i] = intrusion_angle(f, &basis) as f32;
        maps.fa[i] = field.fa[i];
        maps.valid[i] = 1;
    }
    Ok(maps)
}
