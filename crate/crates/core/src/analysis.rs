//! Regional quantification of angle maps: transmural profiles across the
//! wall and summary statistics over boxes.
//!
//! Helical angles are orientations with period 180°, so means and spreads use
//! doubled-angle circular statistics.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::cardiac_frame::{AngleMaps, AxisModel};
use crate::error::{Error, Result};
use crate::volume_io::{MaskBlock, VoxelBox};

/// Running doubled-angle sums for period-180° statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OrientationStats {
    sin: f64,
    cos: f64,
    count: usize,
}

impl OrientationStats {
    pub fn push(&mut self, degrees: f64) {
        let t = (2.0 * degrees).to_radians();
        self.sin += t.sin();
        self.cos += t.cos();
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Circular mean in degrees, in (-90, 90].
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| 0.5 * self.sin.atan2(self.cos).to_degrees())
    }

    /// Mean resultant length of the doubled angles, in [0, 1].
    pub fn resultant(&self) -> Option<f64> {
        (self.count > 0).then(|| (self.sin.hypot(self.cos) / self.count as f64).min(1.0))
    }

    /// Circular standard deviation in degrees, halved back from the
    /// doubled-angle domain.
    pub fn std(&self) -> Option<f64> {
        self.resultant().map(|r| {
            if r >= 1.0 {
                0.0
            } else {
                0.5 * (-2.0 * r.ln()).sqrt().to_degrees()
            }
        })
    }
}

/// Circular mean (period 180°) of a slice of angles in degrees.
pub fn orientation_mean(angles: &[f64]) -> Option<f64> {
    let mut s = OrientationStats::default();
    angles.iter().for_each(|&a| s.push(a));
    s.mean()
}

/// Selection of voxels for a transmural profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorSpec {
    /// Half-open slice range `[z0, z1)`.
    pub z_range: [i64; 2],
    /// Half-open azimuth range in degrees; wraps through 0 when the start
    /// exceeds the end. `[0, 360]` selects the full circle.
    pub azimuth: [f64; 2],
    pub n_bins: usize,
}

impl SectorSpec {
    pub fn full(nz: usize) -> Self {
        SectorSpec {
            z_range: [0, nz as i64],
            azimuth: [0.0, 360.0],
            n_bins: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_range[1] <= self.z_range[0] {
            return Err(Error::invalid("sector z range is empty"));
        }
        let [a, b] = self.azimuth;
        if !a.is_finite() || !b.is_finite() || a == b {
            return Err(Error::invalid("sector azimuth range is empty"));
        }
        if self.n_bins < 2 {
            return Err(Error::invalid("n_bins must be ≥ 2"));
        }
        Ok(())
    }

    fn width(&self) -> f64 {
        let [a, b] = self.azimuth;
        let w = (b - a).rem_euclid(360.0);
        if w == 0.0 {
            360.0
        } else {
            w
        }
    }

    pub fn contains(&self, phi: f64, z: i64) -> bool {
        z >= self.z_range[0]
            && z < self.z_range[1]
            && (phi - self.azimuth[0]).rem_euclid(360.0) < self.width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileBin {
    pub depth: f64,
    pub mean_ha: Option<f64>,
    pub std_ha: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmuralProfile {
    pub bins: Vec<ProfileBin>,
}

impl TransmuralProfile {
    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// `depth,mean_ha,std_ha,count` with 6-decimal fields; empty bins write
    /// `nan` for the statistics.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("depth,mean_ha,std_ha,count\n");
        let f = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
        for b in &self.bins {
            let _ = writeln!(
                s,
                "{:.6},{},{},{}",
                b.depth,
                f(b.mean_ha),
                f(b.std_ha),
                b.count
            );
        }
        s
    }
}

fn ray_key(phi: f64, z: i64) -> (u16, i64) {
    ((phi.floor() as i64).rem_euclid(360) as u16, z)
}

const RAY_STEP: f64 = 0.25;

/// Smallest and largest radius at which the ray through the middle of
/// azimuth bin `deg` in slice `z` meets the mask (nearest-voxel sampling).
fn ray_extent(mask: &MaskBlock, axis: &AxisModel, (deg, z): (u16, i64)) -> Option<(f64, f64)> {
    let b = mask.bbox;
    let [cx, cy] = axis.center(z as f64);
    let theta = (deg as f64 + 0.5).to_radians();
    let (dx, dy) = (theta.cos(), theta.sin());
    let reach = {
        let far = |lo: i64, hi: i64, c: f64| (lo as f64 - c).abs().max((hi as f64 - c).abs());
        far(b.lo[0], b.hi[0], cx).hypot(far(b.lo[1], b.hi[1], cy)) + 1.0
    };
    let mut hit: Option<(f64, f64)> = None;
    for k in 0..=(reach / RAY_STEP) as usize {
        let r = k as f64 * RAY_STEP;
        let q = [
            (cx + r * dx).round() as i64,
            (cy + r * dy).round() as i64,
            z,
        ];
        if b.contains(q) && mask.get(q) != 0 {
            hit = Some(hit.map_or((r, r), |(lo, _)| (lo, r)));
        }
    }
    hit
}

/// Profile of HA against normalized wall depth over a sector. Each ray (1° of
/// azimuth within one slice) takes its endocardial and epicardial radii from
/// where it enters and last leaves the mask; rays with zero wall thickness
/// are skipped.
pub fn transmural_profile(
    maps: &AngleMaps,
    mask: &MaskBlock,
    axis: &AxisModel,
    sector: &SectorSpec,
) -> Result<TransmuralProfile> {
    sector.validate()?;
    if mask.bbox != maps.bbox {
        return Err(Error::BoxMismatch(format!(
            "mask covers {}, maps cover {}",
            mask.bbox, maps.bbox
        )));
    }
    let bbox = maps.bbox;
    let mut extents: HashMap<(u16, i64), Option<(f64, f64)>> = HashMap::new();

    let n = sector.n_bins;
    let mut stats = vec![OrientationStats::default(); n];
    let mut in_sector = 0usize;
    for (i, p) in bbox.iter().enumerate() {
        if maps.valid[i] == 0 || mask.values[i] == 0 {
            continue;
        }
        let (r, phi, _) = axis.cylindrical([p[0] as f64, p[1] as f64, p[2] as f64]);
        if !sector.contains(phi, p[2]) {
            continue;
        }
        in_sector += 1;
        let key = ray_key(phi, p[2]);
        let ext = *extents
            .entry(key)
            .or_insert_with(|| ray_extent(mask, axis, key));
        let Some((r_endo, r_epi)) = ext.filter(|(a, b)| b > a) else {
            continue;
        };
        let d = ((r - r_endo) / (r_epi - r_endo)).clamp(0.0, 1.0);
        let b = ((d * n as f64) as usize).min(n - 1);
        stats[b].push(maps.ha[i] as f64);
    }
    if in_sector == 0 {
        return Err(Error::invalid("sector contains no valid voxels"));
    }
    Ok(TransmuralProfile {
        bins: stats
            .iter()
            .enumerate()
            .map(|(b, s)| ProfileBin {
                depth: (b as f64 + 0.5) / n as f64,
                mean_ha: s.mean(),
                std_ha: s.std(),
                count: s.count(),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionStats {
    pub mean_ha: f64,
    pub std_ha: f64,
    pub mean_fa: f64,
    pub valid_count: usize,
}

/// Statistics over valid voxels inside `region` (and the mask, if given).
/// `Ok(None)` when no voxel qualifies.
pub fn regional_stats(
    maps: &AngleMaps,
    mask: Option<&MaskBlock>,
    region: VoxelBox,
) -> Result<Option<RegionStats>> {
    if mask.is_some_and(|m| m.bbox != maps.bbox) {
        return Err(Error::BoxMismatch("mask and maps differ in extent".into()));
    }
    let Some(sub) = maps.bbox.intersect(&region) else {
        return Err(Error::invalid(format!(
            "region {region} does not intersect maps {}",
            maps.bbox
        )));
    };
    let mut ha = OrientationStats::default();
    let mut fa_sum = 0.0;
    for p in sub.iter() {
        let i = maps.bbox.index(p);
        if maps.valid[i] == 0 || mask.is_some_and(|m| m.values[i] == 0) {
            continue;
        }
        ha.push(maps.ha[i] as f64);
        fa_sum += maps.fa[i] as f64;
    }
    Ok(ha.mean().map(|mean_ha| RegionStats {
        mean_ha,
        std_ha: ha.std().unwrap_or(0.0),
        mean_fa: fa_sum / ha.count() as f64,
        valid_count: ha.count(),
    }))
}
