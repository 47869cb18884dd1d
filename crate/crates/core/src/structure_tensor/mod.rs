//! Gradient structure tensor, its eigenstructure, and the per-voxel fiber
//! direction (eigenvector of the smallest eigenvalue).

mod eigen;
mod kernel;

pub use eigen::{cross, dot, eigendecompose, jacobi, norm, EigenTriple, Sym3, Vec3};
pub use kernel::{
    correlate_axis, gaussian_derivative_kernel, gaussian_kernel, kernel_radius, separable, Kernel,
};

use crate::error::{Error, Result};
use crate::volume_io::{ScalarBlock, VoxelBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureTensorParams {
    /// Gaussian derivative scale, voxels.
    pub sigma_gradient: f64,
    /// Tensor smoothing scale, voxels. Zero disables smoothing.
    pub sigma_tensor: f64,
    pub truncate: f64,
}

impl Default for StructureTensorParams {
    fn default() -> Self {
        StructureTensorParams {
            sigma_gradient: 1.0,
            sigma_tensor: 3.0,
            truncate: 4.0,
        }
    }
}

impl StructureTensorParams {
    pub fn new(sigma_gradient: f64, sigma_tensor: f64, truncate: f64) -> Result<Self> {
        let p = StructureTensorParams {
            sigma_gradient,
            sigma_tensor,
            truncate,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_gradient > 0.0 && self.sigma_gradient.is_finite()) {
            return Err(Error::invalid("sigma_gradient must be > 0"));
        }
        if !(self.sigma_tensor >= 0.0 && self.sigma_tensor.is_finite()) {
            return Err(Error::invalid("sigma_tensor must be ≥ 0"));
        }
        if !(self.truncate >= 2.0 && self.truncate.is_finite()) {
            return Err(Error::invalid("truncate must be ≥ 2"));
        }
        Ok(())
    }

    pub fn gradient_radius(&self) -> usize {
        self.derivative_kernel().radius
    }

    pub fn tensor_radius(&self) -> usize {
        kernel_radius(self.sigma_tensor, self.truncate)
    }

    /// Padding a block needs around its output region: `R_g + R_t`.
    pub fn halo(&self) -> usize {
        self.gradient_radius() + self.tensor_radius()
    }

    fn derivative_kernel(&self) -> Kernel {
        gaussian_derivative_kernel(self.sigma_gradient, self.truncate)
    }
}

/// Gaussian derivative of `block` along `axis` (0 = x, 1 = y, 2 = z) at
/// `sigma_gradient`, evaluated on `roi`. The block must extend at least the
/// gradient radius beyond `roi` on every face.
pub fn gaussian_derivative(
    block: &ScalarBlock,
    axis: usize,
    params: &StructureTensorParams,
    spacing: [f64; 3],
    roi: &VoxelBox,
) -> Result<ScalarBlock> {
    if axis > 2 {
        return Err(Error::invalid(format!("axis {axis} out of range")));
    }
    let smooth = gaussian_kernel(params.sigma_gradient, params.truncate);
    let deriv = params.derivative_kernel();
    // the derivative kernel never has radius 0; pad the smoothing one to match
    let radius = deriv.radius;
    let smooth = pad_kernel(&smooth, radius);
    require_padding(block, roi, radius)?;
    let mut kernels = [&smooth, &smooth, &smooth];
    kernels[axis] = &deriv;
    let mut divisors = [1.0; 3];
    divisors[axis] = spacing[axis];
    separable(block, kernels, divisors, roi)
}

/// Zero-extend a kernel to `radius` taps. Exact: the added taps contribute
/// `0.0 * v`, which leaves each f64 sum unchanged.
fn pad_kernel(k: &Kernel, radius: usize) -> Kernel {
    if k.radius >= radius {
        return k.clone();
    }
    let extra = radius - k.radius;
    let mut weights = vec![0.0; extra];
    weights.extend_from_slice(&k.weights);
    weights.extend(std::iter::repeat(0.0).take(extra));
    Kernel { radius, weights }
}

fn require_padding(block: &ScalarBlock, roi: &VoxelBox, radius: usize) -> Result<()> {
    if !block.bbox.contains_box(&roi.expand_uniform(radius as i64)) {
        return Err(Error::InsufficientPadding {
            needed: radius,
            roi: roi.to_string(),
            block: block.bbox.to_string(),
        });
    }
    Ok(())
}

/// All three gradient components on `roi`; identical values to three
/// [`gaussian_derivative`] calls, with the shared x-smoothing pass reused.
pub fn gradients(
    block: &ScalarBlock,
    params: &StructureTensorParams,
    spacing: [f64; 3],
    roi: &VoxelBox,
) -> Result<[ScalarBlock; 3]> {
    let deriv = params.derivative_kernel();
    let r = deriv.radius as i64;
    let smooth = pad_kernel(
        &gaussian_kernel(params.sigma_gradient, params.truncate),
        deriv.radius,
    );
    require_padding(block, roi, deriv.radius)?;

    let gx_smoothed = correlate_axis(block, &smooth, 0, &roi.expand([0, r, r]), 1.0)?;
    let gy = {
        let s = correlate_axis(&gx_smoothed, &deriv, 1, &roi.expand([0, 0, r]), spacing[1])?;
        correlate_axis(&s, &smooth, 2, roi, 1.0)?
    };
    let gz = {
        let s = correlate_axis(&gx_smoothed, &smooth, 1, &roi.expand([0, 0, r]), 1.0)?;
        correlate_axis(&s, &deriv, 2, roi, spacing[2])?
    };
    drop(gx_smoothed);
    let gx = separable(
        block,
        [&deriv, &smooth, &smooth],
        [spacing[0], 1.0, 1.0],
        roi,
    )?;
    Ok([gx, gy, gz])
}

/// Six structure-tensor component planes over `bbox`, x-fastest.
/// Component order: xx, yy, zz, xy, xz, yz.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlock {
    pub bbox: VoxelBox,
    pub components: [Vec<f32>; 6],
}

impl TensorBlock {
    pub fn get(&self, i: usize) -> Sym3 {
        let c = &self.components;
        Sym3 {
            xx: c[0][i] as f64,
            yy: c[1][i] as f64,
            zz: c[2][i] as f64,
            xy: c[3][i] as f64,
            xz: c[4][i] as f64,
            yz: c[5][i] as f64,
        }
    }
}

/// Smoothed gradient outer products on `roi`. `block` must extend
/// `R_g + R_t` beyond `roi` on every face.
pub fn compute_tensor(
    block: &ScalarBlock,
    params: &StructureTensorParams,
    spacing: [f64; 3],
    roi: &VoxelBox,
) -> Result<TensorBlock> {
    let halo = params.halo();
    require_padding(block, roi, halo)?;
    let rt = params.tensor_radius() as i64;
    let grad_roi = roi.expand_uniform(rt);
    let [gx, gy, gz] = gradients(block, params, spacing, &grad_roi)?;
    let smooth = gaussian_kernel(params.sigma_tensor, params.truncate);
    let pairs: [(&[f32], &[f32]); 6] = [
        (&gx.values, &gx.values),
        (&gy.values, &gy.values),
        (&gz.values, &gz.values),
        (&gx.values, &gy.values),
        (&gx.values, &gz.values),
        (&gy.values, &gz.values),
    ];
    let mut components: [Vec<f32>; 6] = Default::default();
    for (slot, (a, b)) in components.iter_mut().zip(pairs) {
        let product = ScalarBlock {
            bbox: grad_roi,
            values: a.iter().zip(b).map(|(&u, &v)| u * v).collect(),
        };
        *slot = separable(&product, [&smooth; 3], [1.0; 3], roi)?.values;
    }
    Ok(TensorBlock {
        bbox: *roi,
        components,
    })
}

/// `e3` with a deterministic sign: the component of largest magnitude is made
/// positive, ties resolved in favor of z, then y, then x.
pub fn fiber_direction(t: &EigenTriple) -> Vec3 {
    sign_normalize(t.e3())
}

pub fn sign_normalize(v: Vec3) -> Vec3 {
    let mut k = 2;
    for i in [1, 0] {
        if v[i].abs() > v[k].abs() {
            k = i;
        }
    }
    if v[k] < 0.0 {
        [-v[0], -v[1], -v[2]]
    } else {
        v
    }
}

/// Tolerance for treating a slightly negative eigenvalue as zero.
const NEGATIVE_TOLERANCE: f64 = 1e-6;

/// Standard FA of a descending eigenvalue triple; 0 for a vanishing tensor.
pub fn fractional_anisotropy(lambda: [f64; 3]) -> Result<f64> {
    let floor = -NEGATIVE_TOLERANCE * lambda[0].abs().max(f64::MIN_POSITIVE);
    if lambda.iter().any(|&l| l < floor) {
        return Err(Error::invalid(format!("negative eigenvalue in {lambda:?}")));
    }
    let l = lambda.map(|v| v.max(0.0));
    let sq = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
    if sq < 1e-12 {
        return Ok(0.0);
    }
    let mean = (l[0] + l[1] + l[2]) / 3.0;
    let dev: f64 = l.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(((1.5f64).sqrt() * dev.sqrt() / sq.sqrt()).clamp(0.0, 1.0))
}

/// Whether an eigenvalue triple is too flat to define an orientation.
pub fn is_degenerate(lambda: [f64; 3]) -> bool {
    let sq: f64 = lambda.iter().map(|l| l * l).sum();
    sq < 1e-12 || lambda[0] - lambda[2] < 1e-9 * lambda[0].max(1.0)
}

/// Per-voxel orientation over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationField {
    pub bbox: VoxelBox,
    /// Sign-normalized fiber vector; `[0, 0, 0]` marks a degenerate voxel.
    pub fiber: Vec<[f32; 3]>,
    pub lambda: Vec<[f32; 3]>,
    pub fa: Vec<f32>,
}

impl OrientationField {
    pub fn filled(bbox: VoxelBox, fiber: [f32; 3], fa: f32) -> Self {
        let n = bbox.len();
        OrientationField {
            bbox,
            fiber: vec![fiber; n],
            lambda: vec![[0.0; 3]; n],
            fa: vec![fa; n],
        }
    }

    pub fn is_defined(&self, i: usize) -> bool {
        self.fiber[i] != [0.0; 3]
    }
}

/// Orientation of a single tensor: (fiber, λ, FA). Degenerate tensors give
/// a zero fiber and FA 0.
pub fn orient_tensor(s: &Sym3) -> Result<([f32; 3], [f32; 3], f32)> {
    let t = eigendecompose(s)?;
    let lambda = t.lambda.map(|v| v.max(0.0));
    let l32 = lambda.map(|v| v as f32);
    if is_degenerate(lambda) {
        return Ok(([0.0; 3], l32, 0.0));
    }
    let f = fiber_direction(&t);
    let fa = fractional_anisotropy(lambda)?;
    Ok((f.map(|v| v as f32), l32, fa as f32))
}

/// tensor → eigendecomposition → fiber direction and FA over `roi`.
pub fn orientation_block(
    block: &ScalarBlock,
    params: &StructureTensorParams,
    spacing: [f64; 3],
    roi: &VoxelBox,
) -> Result<OrientationField> {
    let tensor = compute_tensor(block, params, spacing, roi)?;
    orientation_from_tensor(&tensor)
}

pub fn orientation_from_tensor(tensor: &TensorBlock) -> Result<OrientationField> {
    let n = tensor.bbox.len();
    let mut fiber = Vec::with_capacity(n);
    let mut lambda = Vec::with_capacity(n);
    let mut fa = Vec::with_capacity(n);
    for i in 0..n {
        let (f, l, a) = orient_tensor(&tensor.get(i))?;
        fiber.push(f);
        lambda.push(l);
        fa.push(a);
    }
    Ok(OrientationField {
        bbox: tensor.bbox,
        fiber,
        lambda,
        fa,
    })
}
