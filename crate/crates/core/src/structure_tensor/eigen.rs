//! Symmetric 3×3 eigendecomposition.
//!
//! The fast path solves the characteristic cubic in trigonometric form,
//! recovers the eigenvector of the best-isolated eigenvalue from row cross
//! products, and resolves the remaining pair exactly with a single 2×2
//! rotation in the orthogonal complement. If the reconstruction residual is
//! poor the whole matrix is handed to cyclic Jacobi instead.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Symmetric tensor, six unique components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym3 {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub xz: f64,
    pub yz: f64,
}

impl Sym3 {
    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Self {
        Sym3 {
            xx: m[0][0],
            yy: m[1][1],
            zz: m[2][2],
            xy: m[0][1],
            xz: m[0][2],
            yz: m[1][2],
        }
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn is_finite(&self) -> bool {
        [self.xx, self.yy, self.zz, self.xy, self.xz, self.yz]
            .iter()
            .all(|v| v.is_finite())
    }

    fn mul_vec(&self, v: &Vec3) -> Vec3 {
        let m = self.to_matrix();
        [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
    }

    fn quad(&self, u: &Vec3, v: &Vec3) -> f64 {
        dot(u, &self.mul_vec(v))
    }
}

/// Eigenvalues sorted descending with matching unit eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenTriple {
    pub lambda: [f64; 3],
    pub vectors: [Vec3; 3],
}

impl EigenTriple {
    pub fn e1(&self) -> Vec3 {
        self.vectors[0]
    }

    pub fn e3(&self) -> Vec3 {
        self.vectors[2]
    }

    /// Max-norm of `sum λi ei eiᵀ − s`.
    pub fn residual(&self, s: &Sym3) -> f64 {
        let m = s.to_matrix();
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3)
                    .map(|k| self.lambda[k] * self.vectors[k][i] * self.vectors[k][j])
                    .sum();
                worst = worst.max((r - m[i][j]).abs());
            }
        }
        worst
    }
}

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Some unit vector orthogonal to unit `v`.
fn any_orthogonal(v: &Vec3) -> Vec3 {
    let u = if v[0].abs() > v[1].abs() {
        [-v[2], 0.0, v[0]]
    } else {
        [0.0, v[2], -v[1]]
    };
    scale(&u, 1.0 / norm(&u))
}

/// Unit null vector of a rank-2 symmetric matrix via the largest row cross
/// product.
fn null_vector(m: &[[f64; 3]; 3]) -> Option<Vec3> {
    let c = [
        cross(&m[0], &m[1]),
        cross(&m[0], &m[2]),
        cross(&m[1], &m[2]),
    ];
    let (best, n2) = c
        .iter()
        .map(|v| (v, dot(v, v)))
        .fold((&c[0], -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    if n2 <= f64::MIN_POSITIVE {
        None
    } else {
        Some(scale(best, 1.0 / n2.sqrt()))
    }
}

const REL_RESIDUAL_LIMIT: f64 = 1e-4;
const NEGATIVE_CLAMP: f64 = 1e-6;

/// Eigendecomposition of a finite symmetric tensor. Eigenvalues are sorted
/// `λ1 ≥ λ2 ≥ λ3`; small negatives within `1e-6·λ1` are clamped to zero.
pub fn eigendecompose(s: &Sym3) -> Result<EigenTriple> {
    if !s.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut t = analytic(s);
    let tol = REL_RESIDUAL_LIMIT * t.lambda[0].abs().max(1.0);
    if !(t.residual(s) <= tol) {
        t = jacobi(s);
    }
    let floor = -NEGATIVE_CLAMP * t.lambda[0].max(0.0);
    for l in t.lambda.iter_mut() {
        if *l < 0.0 && *l >= floor {
            *l = 0.0;
        }
    }
    Ok(t)
}

fn sorted(mut pairs: [(f64, Vec3); 3]) -> EigenTriple {
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    EigenTriple {
        lambda: [pairs[0].0, pairs[1].0, pairs[2].0],
        vectors: [pairs[0].1, pairs[1].1, pairs[2].1],
    }
}

fn analytic(s: &Sym3) -> EigenTriple {
    let m = s.to_matrix();
    let amax = m.iter().flatten().fold(0.0f64, |a, &v| a.max(v.abs()));
    if amax == 0.0 {
        return EigenTriple {
            lambda: [0.0; 3],
            vectors: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        };
    }
    // work on a unit-scaled copy
    let inv = 1.0 / amax;
    let a = Sym3 {
        xx: s.xx * inv,
        yy: s.yy * inv,
        zz: s.zz * inv,
        xy: s.xy * inv,
        xz: s.xz * inv,
        yz: s.yz * inv,
    };
    let q = a.trace() / 3.0;
    let off = a.xy * a.xy + a.xz * a.xz + a.yz * a.yz;
    let (dx, dy, dz) = (a.xx - q, a.yy - q, a.zz - q);
    let p = ((dx * dx + dy * dy + dz * dz + 2.0 * off) / 6.0).sqrt();
    if p < 1e-300 {
        return EigenTriple {
            lambda: [q * amax; 3],
            vectors: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        };
    }
    // det((A - qI) / p) / 2
    let (bxx, byy, bzz) = (dx / p, dy / p, dz / p);
    let (bxy, bxz, byz) = (a.xy / p, a.xz / p, a.yz / p);
    let det = bxx * (byy * bzz - byz * byz) - bxy * (bxy * bzz - byz * bxz)
        + bxz * (bxy * byz - byy * bxz);
    let r = (det / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let l2 = 3.0 * q - l1 - l3;

    let iso = if l1 - l2 >= l2 - l3 { l1 } else { l3 };
    let am = a.to_matrix();
    let shifted = [
        [am[0][0] - iso, am[0][1], am[0][2]],
        [am[1][0], am[1][1] - iso, am[1][2]],
        [am[2][0], am[2][1], am[2][2] - iso],
    ];
    let v = null_vector(&shifted).unwrap_or([0.0, 0.0, 1.0]);
    let u = any_orthogonal(&v);
    let w = cross(&v, &u);
    let (pa, pb, pc) = (a.quad(&u, &u), a.quad(&u, &w), a.quad(&w, &w));
    let (t, first, second) = rotate_pair(pa, pb, pc);
    let cs = 1.0 / (1.0 + t * t).sqrt();
    let sn = t * cs;
    let x1 = [
        cs * u[0] - sn * w[0],
        cs * u[1] - sn * w[1],
        cs * u[2] - sn * w[2],
    ];
    let x2 = [
        sn * u[0] + cs * w[0],
        sn * u[1] + cs * w[1],
        sn * u[2] + cs * w[2],
    ];
    let iso_val = a.quad(&v, &v);
    sorted([(iso_val * amax, v), (first * amax, x1), (second * amax, x2)])
}

/// Jacobi rotation for `[[a, b], [b, c]]`: returns `tan θ` and the two
/// diagonal entries after rotation.
fn rotate_pair(a: f64, b: f64, c: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        return (0.0, a, c);
    }
    let tau = (c - a) / (2.0 * b);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    (t, a - t * b, c + t * b)
}

/// Cyclic Jacobi sweeps until the off-diagonal part vanishes.
pub fn jacobi(s: &Sym3) -> EigenTriple {
    let mut a = s.to_matrix();
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        if off == 0.0 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let (t, _, _) = rotate_pair(a[p][p], a[p][q], a[q][q]);
            let c = 1.0 / (1.0 + t * t).sqrt();
            let sn = t * c;
            // A <- Jᵀ A J with J the (p,q) rotation
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - sn * akq;
                a[k][q] = sn * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - sn * aqk;
                a[q][k] = sn * apk + c * aqk;
            }
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - sn * vq;
                row[q] = sn * vp + c * vq;
            }
        }
    }
    let col = |j: usize| [v[0][j], v[1][j], v[2][j]];
    sorted([(a[0][0], col(0)), (a[1][1], col(1)), (a[2][2], col(2))])
}
