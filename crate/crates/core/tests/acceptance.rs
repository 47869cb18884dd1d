//! Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
//! Exits non-zero on failure only when `MYOFIBER_STRICT=1` is set, so the
//! report never hides behind a test-runner abort.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use myofiber::analysis::{transmural_profile, SectorSpec};
use myofiber::cardiac_frame::{compute_angle_maps, AxisModel, DEFAULT_R_MIN};
use myofiber::chunk_engine::{monolithic_field, run_pipeline, PipelineConfig, RunOptions};
use myofiber::export::{read_vector_field, vtk_polylines, write_vtk_polylines};
use myofiber::phantom::{generate_helical_annulus, AnnulusPhantomSpec, GroundTruth};
use myofiber::structure_tensor::{
    dot, eigendecompose, fractional_anisotropy, gaussian_derivative, OrientationField,
    StructureTensorParams, Sym3, Vec3,
};
use myofiber::tractography::{
    filter_streamlines, integrate_streamline, seed_grid, Streamline, Tracker, TractoParams,
};
use myofiber::volume_io::{write_volume, Block, DType, MaskBlock, ScalarBlock, VoxelBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// per-thread allocation accounting

struct Counting;

thread_local! {
    static TRACKED: Cell<bool> = const { Cell::new(true) };
    static LIVE: Cell<isize> = const { Cell::new(0) };
    static PEAK: Cell<isize> = const { Cell::new(0) };
}

static WORKER_PEAK: AtomicUsize = AtomicUsize::new(0);

fn note(delta: isize) {
    let _ = TRACKED.try_with(|t| {
        if !t.get() {
            return;
        }
        let live = LIVE.with(|l| {
            let v = l.get() + delta;
            l.set(v);
            v
        });
        PEAK.with(|p| {
            if live > p.get() {
                p.set(live);
                WORKER_PEAK.fetch_max(live.max(0) as usize, Ordering::Relaxed);
            }
        });
    });
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            note(layout.size() as isize);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        note(-(layout.size() as isize));
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            note(new_size as isize - layout.size() as isize);
        }
        p
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

// ---------------------------------------------------------------------------
// shared fixtures

struct Fixture {
    dir: tempfile::TempDir,
    spec: AnnulusPhantomSpec,
    volume: ScalarBlock,
    mask: MaskBlock,
    truth: GroundTruth,
}

impl Fixture {
    fn new(n: usize) -> Fixture {
        let spec = AnnulusPhantomSpec::centered([n; 3]);
        let (volume, mask, truth) = generate_helical_annulus(&spec).expect("phantom");
        let dir = tempfile::tempdir().expect("tempdir");
        write_volume(
            &dir.path().join("volume"),
            &volume,
            DType::F32,
            [1.0; 3],
            true,
        )
        .expect("write volume");
        let m = Block {
            bbox: mask.bbox,
            values: mask.values.iter().map(|&v| v as f32).collect(),
        };
        write_volume(&dir.path().join("mask"), &m, DType::U8, [1.0; 3], true).expect("mask");
        Fixture {
            dir,
            spec,
            volume,
            mask,
            truth,
        }
    }

    fn axis(&self) -> AxisModel {
        AxisModel::vertical(self.spec.axis[0], self.spec.axis[1], self.spec.dims[2])
    }

    fn config(&self, out: &str, chunk: usize, workers: usize) -> PipelineConfig {
        let mut c = PipelineConfig::new(
            self.dir.path().join("volume"),
            self.axis(),
            self.dir.path().join(out),
        );
        c.mask = Some(self.dir.path().join("mask"));
        c.chunk = [chunk; 3];
        c.workers = workers;
        c
    }
}

/// Every file under `dir` (ledger and fingerprint excluded) with its bytes.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).expect("read_dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "raw" || x == "meta") {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn run_ok(cfg: &PipelineConfig, limit: Option<usize>) -> Result<usize, String> {
    let r = run_pipeline(
        cfg,
        &RunOptions {
            chunk_limit: limit,
            progress: None,
        },
    )
    .map_err(|e| e.to_string())?;
    if !r.failed.is_empty() {
        return Err(format!("failed chunks {:?}", r.failed));
    }
    Ok(r.computed.len())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

type Outcome = Result<String, String>;

// ---------------------------------------------------------------------------
// 1

fn chunk_invariance(fx: &Fixture) -> Outcome {
    let t = Instant::now();
    let reference = fx.config("ref", 128, 1);
    run_ok(&reference, None)?;
    let want = snapshot(&reference.output_dir);

    let (_, field) =
        read_vector_field(&reference.output_dir.join("vectors")).map_err(|e| e.to_string())?;
    let mono = monolithic_field(&fx.volume, &StructureTensorParams::default(), [1.0; 3])
        .map_err(|e| e.to_string())?;
    for (i, &m) in fx.mask.values.iter().enumerate() {
        let (f, g) = (field.fiber[i], mono.fiber[i]);
        let same = if m != 0 {
            f.map(f32::to_bits) == g.map(f32::to_bits)
                && field.fa[i].to_bits() == mono.fa[i].to_bits()
        } else {
            f == [0.0; 3]
        };
        if !same {
            return Err(format!(
                "voxel {i} differs from in-memory whole-volume pass"
            ));
        }
    }

    let mut runs = 0;
    for chunk in [48, 64, 128] {
        for workers in [1, 4] {
            if chunk == 128 && workers == 1 {
                continue;
            }
            let cfg = fx.config(&format!("c{chunk}w{workers}"), chunk, workers);
            run_ok(&cfg, None)?;
            let got = snapshot(&cfg.output_dir);
            if got.len() != want.len() {
                return Err(format!("chunk {chunk} workers {workers}: file sets differ"));
            }
            for (k, v) in &want {
                if got.get(k) != Some(v) {
                    return Err(format!(
                        "chunk {chunk} workers {workers}: {} differs",
                        k.display()
                    ));
                }
            }
            runs += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    if secs >= 120.0 {
        return Err(format!("bit-identical but took {secs:.1} s (limit 120 s)"));
    }
    Ok(format!(
        "{runs} chunk/worker combinations byte-identical across {} datasets, {secs:.1} s",
        want.len() / 2
    ))
}

// ---------------------------------------------------------------------------
// 2

/// Voxels whose whole radius-2 ball lies inside the mask (the volume edge
/// counts as mask boundary).
fn eroded(mask: &MaskBlock, radius: i64) -> Vec<bool> {
    let b = mask.bbox;
    let mut offsets = Vec::new();
    for dz in -radius..=radius {
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy + dz * dz <= radius * radius {
                    offsets.push([dx, dy, dz]);
                }
            }
        }
    }
    b.iter()
        .map(|p| {
            offsets.iter().all(|o| {
                let q = [p[0] + o[0], p[1] + o[1], p[2] + o[2]];
                b.contains(q) && mask.get(q) != 0
            })
        })
        .collect()
}

fn orientation_recovery(fx: &Fixture) -> Outcome {
    let dir = fx.dir.path().join("ref");
    let (_, field) = read_vector_field(&dir.join("vectors")).map_err(|e| e.to_string())?;
    let inner = eroded(&fx.mask, 2);
    let mut errs = Vec::new();
    for (i, p) in field.bbox.iter().enumerate() {
        if !inner[i] || !field.is_defined(i) || field.fa[i] < 0.2 {
            continue;
        }
        let x = [p[0] as f64, p[1] as f64, p[2] as f64];
        let Some(t) = fx.truth.orientation(x) else {
            continue;
        };
        let f = field.fiber[i].map(|v| v as f64);
        errs.push(dot(&t, &f).abs().min(1.0).acos().to_degrees());
    }
    if errs.is_empty() {
        return Err("no voxels qualified".into());
    }
    errs.sort_by(f64::total_cmp);
    let (med, p90) = (percentile(&errs, 0.5), percentile(&errs, 0.9));
    let msg = format!(
        "median {med:.2}° (< 3), p90 {p90:.2}° (< 10) over {} voxels",
        errs.len()
    );
    if med < 3.0 && p90 < 10.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------------------
// 3

fn ha_law(fx: &Fixture) -> Outcome {
    let dir = fx.dir.path().join("ref");
    let (_, maps) = myofiber::export::read_angle_maps(&dir).map_err(|e| e.to_string())?;
    let axis = fx.axis();
    // slices within the filter reach of the top and bottom faces see
    // edge-replicated data, not wall texture
    let halo = StructureTensorParams::default().halo() as i64;
    let nz = fx.spec.dims[2] as i64;
    let sector = SectorSpec {
        z_range: [halo, nz - halo],
        ..SectorSpec::full(fx.spec.dims[2])
    };
    let ha = transmural_profile(&maps, &fx.mask, &axis, &sector).map_err(|e| e.to_string())?;
    let mut ia_maps = maps.clone();
    ia_maps.ha = maps.ia.clone();
    let ia = transmural_profile(&ia_maps, &fx.mask, &axis, &sector).map_err(|e| e.to_string())?;

    let n = ha.n_bins();
    let central = (n / 10)..(n - n / 10);
    let mut worst_ha = 0.0f64;
    let mut worst_ia = 0.0f64;
    for b in central {
        let bin = &ha.bins[b];
        let law = fx.spec.ha_at_depth(bin.depth);
        let m = bin.mean_ha.ok_or(format!("HA bin {b} empty"))?;
        worst_ha = worst_ha.max((m - law).abs());
        worst_ia = worst_ia.max(ia.bins[b].mean_ha.ok_or(format!("IA bin {b} empty"))?.abs());
    }
    let msg = format!(
        "max |HA − (60 − 120d)| {worst_ha:.2}° (≤ 5), max |IA| {worst_ia:.2}° (≤ 5), central {} of {n} bins, slices {}..{}",
        n - 2 * (n / 10),
        sector.z_range[0],
        sector.z_range[1]
    );
    if worst_ha <= 5.0 && worst_ia <= 5.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------------------
// 4

/// Cyclic Jacobi on a dense 3×3; eigenvalues descending, columns as vectors.
fn jacobi_oracle(a: [[f64; 3]; 3]) -> ([f64; 3], [Vec3; 3]) {
    let mut a = a;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..100 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        if off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut idx = [0, 1, 2];
    idx.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    (
        idx.map(|i| a[i][i]),
        idx.map(|i| [v[0][i], v[1][i], v[2][i]]),
    )
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [Vec3; 3] {
    loop {
        let a: Vec3 = std::array::from_fn(|_| rng.gen::<f64>() * 2.0 - 1.0);
        let b: Vec3 = std::array::from_fn(|_| rng.gen::<f64>() * 2.0 - 1.0);
        let na = dot(&a, &a).sqrt();
        if na < 1e-3 {
            continue;
        }
        let u = a.map(|x| x / na);
        let bp: Vec3 = std::array::from_fn(|k| b[k] - dot(&b, &u) * u[k]);
        let nb = dot(&bp, &bp).sqrt();
        if nb < 1e-3 {
            continue;
        }
        let v = bp.map(|x| x / nb);
        let w = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        return [u, v, w];
    }
}

fn random_psd(rng: &mut ChaCha8Rng, case: usize) -> Sym3 {
    let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
    let mut l: [f64; 3] = std::array::from_fn(|_| rng.gen::<f64>() * scale);
    match case % 5 {
        1 => l[1] = l[0],
        2 => l[2] = 0.0,
        3 => l = [l[0]; 3],
        4 => l[2] = l[1] * (1.0 + 1e-7),
        _ => {}
    }
    let r = random_rotation(rng);
    let m: [[f64; 3]; 3] = std::array::from_fn(|i| {
        std::array::from_fn(|j| (0..3).map(|k| l[k] * r[k][i] * r[k][j]).sum())
    });
    // symmetrize exactly
    Sym3 {
        xx: m[0][0],
        yy: m[1][1],
        zz: m[2][2],
        xy: 0.5 * (m[0][1] + m[1][0]),
        xz: 0.5 * (m[0][2] + m[2][0]),
        yz: 0.5 * (m[1][2] + m[2][1]),
    }
}

fn eigensolver() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let t = Instant::now();
    let mut worst_val = 0.0f64;
    let mut worst_orth = 0.0f64;
    let mut worst_rec = 0.0f64;
    let mut worst_align = 0.0f64;
    let mut aligned_cases = 0;
    for case in 0..10_000 {
        let s = random_psd(&mut rng, case);
        let e = eigendecompose(&s).map_err(|e| format!("case {case}: {e}"))?;
        let (ol, ov) = jacobi_oracle(s.to_matrix());
        let scale = ol[0].max(1.0);
        for k in 0..3 {
            worst_val = worst_val.max((e.lambda[k] - ol[k].max(0.0)).abs() / scale);
        }
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(&e.vectors[i], &e.vectors[j]) - if i == j { 1.0 } else { 0.0 };
                worst_orth = worst_orth.max(d.abs());
            }
        }
        worst_rec = worst_rec.max(e.residual(&s) / scale);
        let gap = (ol[0] - ol[1]).min(ol[1] - ol[2]);
        if gap > 1e-3 * ol[0] {
            aligned_cases += 1;
            for k in 0..3 {
                worst_align = worst_align.max(1.0 - dot(&e.vectors[k], &ov[k]).abs());
            }
        }
    }
    let msg = format!(
        "eigenvalue err {worst_val:.1e}·max(1,λ1) (≤ 1e-8), orthonormality {worst_orth:.1e}, reconstruction {worst_rec:.1e}·max(1,λ1), alignment 1−|e·e*| {worst_align:.1e} (< 1e-8) on {aligned_cases} gapped cases, {:.2} s",
        t.elapsed().as_secs_f64()
    );
    if worst_val <= 1e-8 && worst_orth <= 1e-9 && worst_rec <= 1e-9 && worst_align < 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------------------
// 5

fn fa_fixed_points() -> Outcome {
    let fa = |l| fractional_anisotropy(l).map_err(|e| e.to_string());
    let a = fa([1.0, 1.0, 1.0])?;
    let b = fa([1.0, 0.0, 0.0])?;
    let c = fa([1.0, 1.0, 0.0])?;
    let msg = format!(
        "FA(1,1,1) = {a}, |FA(1,0,0) − 1| = {:.1e}, |FA(1,1,0) − √½| = {:.1e}",
        (b - 1.0).abs(),
        (c - 0.5f64.sqrt()).abs()
    );
    if a == 0.0 && (b - 1.0).abs() <= 1e-12 && (c - 0.5f64.sqrt()).abs() <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------------------
// 6

/// Gaussian and derivative weights from their definitions, plain sums in
/// ascending tap order.
fn oracle_kernels(sigma: f64) -> (Vec<f64>, Vec<f64>, i64) {
    let r = ((4.0 * sigma).ceil() as i64).max(1);
    let g = |k: i64| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp();
    let mut total = 0.0;
    for k in -r..=r {
        total += g(k);
    }
    let mut moment = 0.0;
    for k in -r..=r {
        moment += (k * k) as f64 * g(k);
    }
    let smooth = (-r..=r).map(|k| g(k) / total).collect();
    let deriv = (-r..=r).map(|k| k as f64 * g(k) / moment).collect();
    (smooth, deriv, r)
}

/// Direct nested sum for one output voxel, rounding to f32 after each axis
/// (x innermost), the documented arithmetic of the separable filter.
fn direct(src: &ScalarBlock, p: [i64; 3], w: [&[f64]; 3], r: i64) -> f32 {
    let mut sz = 0.0f64;
    for (kz, wz) in (-r..=r).zip(w[2]) {
        let mut sy = 0.0f64;
        for (ky, wy) in (-r..=r).zip(w[1]) {
            let mut sx = 0.0f64;
            for (kx, wx) in (-r..=r).zip(w[0]) {
                sx += wx * src.get([p[0] + kx, p[1] + ky, p[2] + kz]) as f64;
            }
            sy += wy * (sx as f32) as f64;
        }
        sz += wz * (sy as f32) as f64;
    }
    sz as f32
}

/// Unrounded triple sum, for a tolerance check independent of evaluation
/// order.
fn direct_f64(src: &ScalarBlock, p: [i64; 3], w: [&[f64]; 3], r: i64) -> f64 {
    let mut s = 0.0;
    for (kz, wz) in (-r..=r).zip(w[2]) {
        for (ky, wy) in (-r..=r).zip(w[1]) {
            for (kx, wx) in (-r..=r).zip(w[0]) {
                s += wx * wy * wz * src.get([p[0] + kx, p[1] + ky, p[2] + kz]) as f64;
            }
        }
    }
    s
}

fn convolution_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut checked = 0usize;
    let mut worst_rel = 0.0f64;
    for sigma in [0.7, 1.0, 2.0] {
        let (smooth, deriv, r) = oracle_kernels(sigma);
        let params = StructureTensorParams::new(sigma, 0.0, 4.0).map_err(|e| e.to_string())?;
        for block_no in 0..20 {
            let roi = VoxelBox::new([0; 3], [16; 3]).unwrap();
            let padded = roi.expand_uniform(r);
            let src = Block::from_fn(padded, |_| rng.gen::<f32>() * 2.0 - 1.0);
            for axis in 0..3 {
                let got = gaussian_derivative(&src, axis, &params, [1.0; 3], &roi)
                    .map_err(|e| e.to_string())?;
                let mut w: [&[f64]; 3] = [&smooth, &smooth, &smooth];
                w[axis] = &deriv;
                let peak = got.values.iter().fold(0.0f64, |m, v| m.max(v.abs() as f64));
                for (i, p) in roi.iter().enumerate() {
                    let want = direct(&src, p, w, r);
                    if got.values[i].to_bits() != want.to_bits() {
                        return Err(format!(
                            "σ {sigma} block {block_no} axis {axis} voxel {p:?}: {} vs {}",
                            got.values[i], want
                        ));
                    }
                    let exact = direct_f64(&src, p, w, r);
                    worst_rel =
                        worst_rel.max((got.values[i] as f64 - exact).abs() / peak.max(1e-30));
                    checked += 1;
                }
            }
        }
    }
    let msg = format!(
        "{checked} derivative samples bit-identical to nested direct sums; unrounded triple sum within {worst_rel:.1e} of peak"
    );
    if worst_rel < 1e-5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------------------
// 7

fn circle_field(n: i64, c: f64) -> OrientationField {
    let bbox = VoxelBox::new([0, 0, 0], [n, n, 3]).unwrap();
    let mut f = OrientationField::filled(bbox, [0.0; 3], 1.0);
    for (i, p) in bbox.iter().enumerate() {
        let (dx, dy) = (p[0] as f64 - c, p[1] as f64 - c);
        let r = dx.hypot(dy);
        if r == 0.0 {
            f.fa[i] = 0.0;
            continue;
        }
        f.fiber[i] = [(-dy / r) as f32, (dx / r) as f32, 0.0];
    }
    f
}

fn tractography_geometry() -> Outcome {
    // straight line in a uniform field
    let bbox = VoxelBox::whole([16; 3]);
    let uniform = OrientationField::filled(bbox, [0.0, 0.0, 1.0], 1.0);
    let p = TractoParams {
        min_length: 0.0,
        ..Default::default()
    };
    let line = integrate_streamline(&uniform, [8.0; 3], &p, None, None)
        .map_err(|e| e.to_string())?
        .ok_or("uniform seed rejected")?;
    let lateral = line
        .points
        .iter()
        .map(|q| (q[0] - 8.0).hypot(q[1] - 8.0))
        .fold(0.0, f64::max);
    let zs = (line.points[0][2], line.points[line.points.len() - 1][2]);
    if lateral >= 1e-9 || zs != (0.0, 15.0) {
        return Err(format!(
            "uniform field: lateral {lateral:.1e}, z span {zs:?}"
        ));
    }

    // circular orbit
    let (n, c, r0) = (64, 32.0, 20.0);
    let circle = circle_field(n, c);
    let p = TractoParams {
        step: 0.25,
        min_length: 0.0,
        max_steps: 600,
        ..Default::default()
    };
    let line = integrate_streamline(&circle, [c + r0, c, 1.0], &p, None, None)
        .map_err(|e| e.to_string())?
        .ok_or("circle seed rejected")?;
    let seed_at = line
        .points
        .iter()
        .position(|q| *q == [c + r0, c, 1.0])
        .ok_or("seed missing")?;
    let mut turned = 0.0;
    let mut prev = 0.0f64;
    let mut drift = 0.0f64;
    for q in &line.points[seed_at..] {
        let a = (q[1] - c).atan2(q[0] - c);
        let mut d = a - prev;
        if d > std::f64::consts::PI {
            d -= 2.0 * std::f64::consts::PI;
        } else if d < -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        turned += d.abs();
        prev = a;
        drift = drift.max(((q[0] - c).hypot(q[1] - c) - r0).abs());
        if turned >= 2.0 * std::f64::consts::PI {
            break;
        }
    }
    if turned < 2.0 * std::f64::consts::PI || drift >= 0.02 {
        return Err(format!(
            "circle: turned {turned:.3} rad, radial drift {drift:.4}"
        ));
    }

    // sign gauge
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut flipped = circle.clone();
    for f in flipped.fiber.iter_mut() {
        if rng.gen::<bool>() {
            *f = f.map(|v| -v);
        }
    }
    let p = TractoParams {
        max_steps: 200,
        min_length: 0.0,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    let mut lines = 0;
    for seed in [
        [52.0, 32.0, 1.0],
        [40.0, 45.0, 1.0],
        [20.0, 20.0, 1.0],
        [33.0, 60.0, 1.0],
    ] {
        let a = integrate_streamline(&circle, seed, &p, None, None).map_err(|e| e.to_string())?;
        let b = integrate_streamline(&flipped, seed, &p, None, None).map_err(|e| e.to_string())?;
        match (a, b) {
            (Some(a), Some(b)) if a.points.len() == b.points.len() => {
                for (x, y) in a.points.iter().zip(&b.points) {
                    for k in 0..3 {
                        worst = worst.max((x[k] - y[k]).abs());
                    }
                }
                lines += 1;
            }
            (None, None) => {}
            _ => return Err("re-signing changed a streamline's length".into()),
        }
    }
    if worst > 1e-9 {
        return Err(format!("re-signing moved points by {worst:.1e}"));
    }
    Ok(format!(
        "uniform lateral {lateral:.1e} (< 1e-9); circle drift {drift:.2e} voxels over one turn (< 0.02); re-signing moved {lines} lines by {worst:.1e} (≤ 1e-9)"
    ))
}

// ---------------------------------------------------------------------------
// 8

fn sign_fold(fx: &Fixture) -> Outcome {
    let (_, field) =
        read_vector_field(&fx.dir.path().join("ref").join("vectors")).map_err(|e| e.to_string())?;
    let axis = fx.axis();
    let a = compute_angle_maps(&field, &axis, Some(&fx.mask), DEFAULT_R_MIN)
        .map_err(|e| e.to_string())?;
    let mut neg = field.clone();
    neg.fiber.iter_mut().for_each(|f| *f = f.map(|v| -v));
    let b = compute_angle_maps(&neg, &axis, Some(&fx.mask), DEFAULT_R_MIN)
        .map_err(|e| e.to_string())?;
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    if bits(&a.ha) == bits(&b.ha) && bits(&a.ia) == bits(&b.ia) && a.valid == b.valid {
        Ok(format!(
            "HA/IA byte-identical over {} valid voxels",
            a.valid_count()
        ))
    } else {
        Err("negated field changed the angle maps".into())
    }
}

// ---------------------------------------------------------------------------
// 9

fn resume(fx: &Fixture) -> Outcome {
    let whole = fx.config("resume_whole", 64, 1);
    run_ok(&whole, None)?;
    let cfg = fx.config("resume_killed", 64, 1);
    let first = run_ok(&cfg, Some(3))?;
    if first != 3 {
        return Err(format!("interrupted run computed {first} chunks"));
    }
    // garbage where an unfinished chunk was being written
    let ha = cfg.output_dir.join("ha.raw");
    let mut bytes = fs::read(&ha).map_err(|e| e.to_string())?;
    let len = bytes.len();
    bytes[len - 4096..].iter_mut().for_each(|b| *b = 0xAB);
    fs::write(&ha, bytes).map_err(|e| e.to_string())?;

    let second = run_pipeline(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
    if second.skipped.len() != 3 || second.computed.len() != 5 {
        return Err(format!(
            "rerun skipped {:?}, computed {:?}",
            second.skipped, second.computed
        ));
    }
    if snapshot(&whole.output_dir) != snapshot(&cfg.output_dir) {
        return Err("resumed outputs differ from the uninterrupted run".into());
    }
    Ok("killed after 3 of 8 chunks; rerun skipped 3, computed 5, outputs byte-identical".into())
}

// ---------------------------------------------------------------------------
// 10

struct ParsedVtk {
    points: Vec<[f64; 3]>,
    lines: Vec<Vec<usize>>,
    scalars: Vec<f64>,
}

/// Minimal reader for the legacy ASCII polydata subset.
fn parse_vtk(text: &str) -> Result<ParsedVtk, String> {
    let mut it = text.lines();
    let mut next = || it.next().ok_or_else(|| "truncated file".to_string());
    if !next()?.starts_with("# vtk DataFile Version") {
        return Err("bad magic".into());
    }
    next()?;
    if next()? != "ASCII" || next()? != "DATASET POLYDATA" {
        return Err("not ASCII polydata".into());
    }
    let head: Vec<String> = next()?.split_whitespace().map(String::from).collect();
    if head.len() != 3 || head[0] != "POINTS" {
        return Err("missing POINTS".into());
    }
    let n: usize = head[1].parse().map_err(|_| "bad point count")?;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let v: Vec<f64> = next()?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| format!("bad coordinate `{t}`")))
            .collect::<Result<_, _>>()?;
        points.push([v[0], v[1], v[2]]);
    }
    let head: Vec<String> = next()?.split_whitespace().map(String::from).collect();
    if head.len() != 3 || head[0] != "LINES" {
        return Err("missing LINES".into());
    }
    let m: usize = head[1].parse().map_err(|_| "bad line count")?;
    let total: usize = head[2].parse().map_err(|_| "bad size")?;
    let mut lines = Vec::with_capacity(m);
    let mut seen = 0;
    for _ in 0..m {
        let v: Vec<usize> = next()?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| format!("bad index `{t}`")))
            .collect::<Result<_, _>>()?;
        if v[0] + 1 != v.len() {
            return Err("line length mismatch".into());
        }
        seen += v.len();
        lines.push(v[1..].to_vec());
    }
    if seen != total {
        return Err(format!("LINES size {total}, counted {seen}"));
    }
    if next()? != format!("POINT_DATA {n}") {
        return Err("bad POINT_DATA".into());
    }
    if !next()?.starts_with("SCALARS ") || next()? != "LOOKUP_TABLE default" {
        return Err("bad SCALARS header".into());
    }
    let scalars = (0..n)
        .map(|_| {
            next()?
                .trim()
                .parse::<f64>()
                .map_err(|_| "bad scalar".to_string())
        })
        .collect::<Result<_, _>>()?;
    Ok(ParsedVtk {
        points,
        lines,
        scalars,
    })
}

fn vtk_round_trip(fx: &Fixture) -> Outcome {
    let (meta, field) =
        read_vector_field(&fx.dir.path().join("ref").join("vectors")).map_err(|e| e.to_string())?;
    let params = TractoParams {
        seed_spacing: 12,
        max_steps: 200,
        ..Default::default()
    };
    let axis = fx.axis();
    let seeds = seed_grid(Some(&fx.mask), &field, &params).map_err(|e| e.to_string())?;
    let tracker = Tracker {
        field: &field,
        mask: Some(&fx.mask),
        axis: Some(&axis),
        params,
    };
    let lines: Vec<Streamline> = filter_streamlines(
        tracker.integrate_all(&seeds).map_err(|e| e.to_string())?,
        &params,
        None,
    );
    if lines.is_empty() {
        return Err("no streamlines".into());
    }
    let path = fx.dir.path().join("lines.vtk");
    write_vtk_polylines(&lines, &path, meta.spacing).map_err(|e| e.to_string())?;
    let text = fs::read_to_string(&path).map_err(|e| e.to_string())?;
    if text != vtk_polylines(&lines, meta.spacing).map_err(|e| e.to_string())? {
        return Err("file differs from in-memory serialization".into());
    }
    let parsed = parse_vtk(&text)?;
    let mut k = 0usize;
    let mut worst = 0.0f64;
    if parsed.lines.len() != lines.len() {
        return Err("line count differs".into());
    }
    for (l, idx) in lines.iter().zip(&parsed.lines) {
        let want: Vec<usize> = (k..k + l.points.len()).collect();
        if *idx != want {
            return Err("connectivity differs".into());
        }
        for (p, h) in l.points.iter().zip(&l.ha) {
            let q = parsed.points[k];
            for a in 0..3 {
                worst = worst.max((q[a] - p[a] * meta.spacing[a]).abs());
            }
            worst = worst.max((parsed.scalars[k] - h).abs());
            k += 1;
        }
    }
    if k != parsed.points.len() {
        return Err("point count differs".into());
    }
    // six decimals: exact up to half a unit in the last printed place
    if worst > 5e-7 + 1e-12 {
        return Err(format!("values differ by {worst:.2e}"));
    }
    Ok(format!(
        "{} streamlines, {k} points: connectivity exact, coordinates and HA within {worst:.1e} (6-decimal text)",
        lines.len()
    ))
}

// ---------------------------------------------------------------------------
// 11

fn performance() -> Outcome {
    TRACKED.with(|t| t.set(false));
    let n = 256;
    let t0 = Instant::now();
    let fx = Fixture::new(n);
    let gen = t0.elapsed().as_secs_f64();
    let cfg = fx.config("perf", 128, 4);
    WORKER_PEAK.store(0, Ordering::Relaxed);
    let t = Instant::now();
    let computed = run_ok(&cfg, None)?;
    let secs = t.elapsed().as_secs_f64();
    let peak = WORKER_PEAK.load(Ordering::Relaxed);
    let halo = StructureTensorParams::default().halo();
    let padded = (128 + 2 * halo).pow(3) * 4;
    let ratio = peak as f64 / padded as f64;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let msg = format!(
        "{n}³ pipeline {secs:.1} s (< 120) on {cores} core(s), {computed} chunks, 4 workers; peak worker memory {:.1} MB = {ratio:.2}× padded chunk (≤ 12); phantom generation {gen:.1} s",
        peak as f64 / 1e6
    );
    if secs < 120.0 && ratio <= 12.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------------------

fn main() {
    // the shared 128³ fixture is built on the main thread; only worker
    // threads count toward the memory budget
    TRACKED.with(|t| t.set(false));
    let strict = std::env::var("MYOFIBER_STRICT").is_ok_and(|v| v == "1");
    let t = Instant::now();
    let fx = Fixture::new(128);
    println!(
        "fixture: 128³ annulus phantom in {:.1} s",
        t.elapsed().as_secs_f64()
    );

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 chunk invariance", Box::new(|| chunk_invariance(&fx))),
        (
            "2 orientation recovery",
            Box::new(|| orientation_recovery(&fx)),
        ),
        ("3 helical-angle law", Box::new(|| ha_law(&fx))),
        ("4 eigensolver oracle", Box::new(eigensolver)),
        ("5 FA fixed points", Box::new(fa_fixed_points)),
        ("6 convolution oracle", Box::new(convolution_oracle)),
        ("7 tractography geometry", Box::new(tractography_geometry)),
        ("8 sign-fold invariance", Box::new(|| sign_fold(&fx))),
        ("9 resume correctness", Box::new(|| resume(&fx))),
        ("10 VTK round trip", Box::new(|| vtk_round_trip(&fx))),
        ("11 performance budget", Box::new(performance)),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>())));
        match outcome {
            Ok(msg) => println!("PASS criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg}");
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
