//! Sampled Gaussian kernels and the separable "valid-mode" correlation they
//! run through.
//!
//! Every stage accumulates in `f64` over taps in ascending offset order and
//! casts to `f32` once per output voxel. Stages only produce voxels whose
//! whole window lies inside the source block, so a value never depends on
//! where the block was cut from a larger volume.

use crate::error::{Error, Result};
use crate::volume_io::{ScalarBlock, VoxelBox};

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub radius: usize,
    /// `weights[k + radius]` multiplies the sample at offset `k`.
    pub weights: Vec<f64>,
}

impl Kernel {
    pub fn identity() -> Self {
        Kernel {
            radius: 0,
            weights: vec![1.0],
        }
    }
}

/// `ceil(truncate * sigma)`, zero for `sigma == 0`.
pub fn kernel_radius(sigma: f64, truncate: f64) -> usize {
    (truncate * sigma).ceil() as usize
}

/// Plain Gaussian sampled at integer offsets, renormalized to sum 1 after
/// truncation.
pub fn gaussian_kernel(sigma: f64, truncate: f64) -> Kernel {
    let radius = kernel_radius(sigma, truncate);
    if radius == 0 {
        return Kernel::identity();
    }
    let r = radius as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    Kernel {
        radius,
        weights: raw.iter().map(|w| w / sum).collect(),
    }
}

/// First-derivative-of-Gaussian kernel in correlation form, scaled so a unit
/// ramp `I(x) = x` maps to exactly 1 (`sum k * w[k] = 1`).
pub fn gaussian_derivative_kernel(sigma: f64, truncate: f64) -> Kernel {
    let radius = kernel_radius(sigma, truncate).max(1);
    let r = radius as i64;
    let g = |k: i64| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp();
    let moment: f64 = (-r..=r).map(|k| (k * k) as f64 * g(k)).sum();
    Kernel {
        radius,
        weights: (-r..=r).map(|k| k as f64 * g(k) / moment).collect(),
    }
}

/// Correlate `src` with `kernel` along `axis`, producing values on `out`.
/// `out` expanded by the kernel radius along `axis` must lie inside
/// `src.bbox`. The accumulated sum is divided by `divisor` before the cast.
pub fn correlate_axis(
    src: &ScalarBlock,
    kernel: &Kernel,
    axis: usize,
    out: &VoxelBox,
    divisor: f64,
) -> Result<ScalarBlock> {
    let r = kernel.radius as i64;
    let mut need = [0i64; 3];
    need[axis] = r;
    let window = out.expand(need);
    if !src.bbox.contains_box(&window) {
        return Err(Error::InsufficientPadding {
            needed: kernel.radius,
            roi: out.to_string(),
            block: src.bbox.to_string(),
        });
    }
    let [ox, _, _] = out.shape();
    let [sx, sy, _] = src.bbox.shape();
    // stride between consecutive taps along `axis`, in source elements
    let stride = match axis {
        0 => 1,
        1 => sx,
        _ => sx * sy,
    };
    let mut values = Vec::with_capacity(out.len());
    let mut acc = vec![0.0f64; ox];
    for z in out.lo[2]..out.hi[2] {
        for y in out.lo[1]..out.hi[1] {
            let mut first = [out.lo[0], y, z];
            first[axis] -= r;
            let base = src.bbox.index(first);
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (t, &w) in kernel.weights.iter().enumerate() {
                let start = base + t * stride;
                let row = &src.values[start..start + ox];
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += w * v as f64;
                }
            }
            if divisor == 1.0 {
                values.extend(acc.iter().map(|&a| a as f32));
            } else {
                values.extend(acc.iter().map(|&a| (a / divisor) as f32));
            }
        }
    }
    Ok(ScalarBlock { bbox: *out, values })
}

/// Apply one kernel per axis in the order x, y, z, producing `roi`.
/// `divisors[k]` divides the stage-k sum (spacing for a derivative stage).
pub fn separable(
    src: &ScalarBlock,
    kernels: [&Kernel; 3],
    divisors: [f64; 3],
    roi: &VoxelBox,
) -> Result<ScalarBlock> {
    let [rx, ry, rz] = kernels.map(|k| k.radius as i64);
    let needed = roi.expand([rx, ry, rz]);
    if !src.bbox.contains_box(&needed) {
        return Err(Error::InsufficientPadding {
            needed: rx.max(ry).max(rz) as usize,
            roi: roi.to_string(),
            block: src.bbox.to_string(),
        });
    }
    let sx = correlate_axis(src, kernels[0], 0, &roi.expand([0, ry, rz]), divisors[0])?;
    let sy = correlate_axis(&sx, kernels[1], 1, &roi.expand([0, 0, rz]), divisors[1])?;
    drop(sx);
    correlate_axis(&sy, kernels[2], 2, roi, divisors[2])
}
