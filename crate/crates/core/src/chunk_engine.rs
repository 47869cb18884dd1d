//! Out-of-core execution of the orientation pipeline.
//!
//! The volume is tiled into chunk cores; each chunk reads its core plus a
//! halo of `R_g + R_t` voxels (edge-replicated at the volume border), runs
//! the structure tensor and angle computations, and writes only its core.
//! Because every filter stage computes a voxel from the same inputs in the
//! same order no matter where the chunk boundary falls, the output is
//! bit-identical for any chunk shape and worker count.
//!
//! Finished chunks are appended to `chunks.done` so an interrupted run can
//! be resumed.

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::cardiac_frame::{compute_angle_maps, AxisModel};
use crate::error::{Error, Result};
use crate::export::{dataset_path, names, plane};
use crate::structure_tensor::{orientation_block, StructureTensorParams};
use crate::volume_io::{
    create_dataset, read_mask_region, read_metadata, read_region, write_region, Block, DType,
    VolumeMeta, VoxelBox,
};

pub const LEDGER_FILE: &str = "chunks.done";
pub const FINGERPRINT_FILE: &str = "plan.fingerprint";
pub const MIN_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkSpec {
    pub index: usize,
    /// Output region, always inside the volume.
    pub core: VoxelBox,
    /// Region read from disk: core grown by `halo` on every face.
    pub padded: VoxelBox,
    pub halo: usize,
}

/// Tile `dims` with `chunk_shape` cores in z-major order; the last chunk on
/// each axis shrinks to fit.
pub fn plan_chunks(
    dims: [usize; 3],
    chunk_shape: [usize; 3],
    halo: usize,
) -> Result<Vec<ChunkSpec>> {
    if chunk_shape.iter().any(|&c| c < MIN_CHUNK) {
        return Err(Error::invalid(format!(
            "chunk shape {chunk_shape:?} below the {MIN_CHUNK}³ minimum"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::invalid("volume dims must be ≥ 1"));
    }
    let starts = |k: usize| (0..dims[k]).step_by(chunk_shape[k]).collect::<Vec<_>>();
    let (xs, ys, zs) = (starts(0), starts(1), starts(2));
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                let lo = [x, y, z];
                let hi: [i64; 3] =
                    std::array::from_fn(|k| (lo[k] + chunk_shape[k]).min(dims[k]) as i64);
                let core = VoxelBox {
                    lo: lo.map(|v| v as i64),
                    hi,
                };
                out.push(ChunkSpec {
                    index: out.len(),
                    core,
                    padded: core.expand_uniform(halo as i64),
                    halo,
                });
            }
        }
    }
    Ok(out)
}

/// Chunks assigned to job `job_index` of `job_count`: every chunk whose
/// position `i` satisfies `i mod job_count == job_index`.
pub fn job_slice(
    chunks: &[ChunkSpec],
    job_index: usize,
    job_count: usize,
) -> Result<Vec<ChunkSpec>> {
    if job_count == 0 || job_index >= job_count {
        return Err(Error::invalid(format!(
            "job index {job_index} out of range for {job_count} jobs"
        )));
    }
    Ok(chunks
        .iter()
        .enumerate()
        .filter(|(i, _)| i % job_count == job_index)
        .map(|(_, c)| *c)
        .collect())
}

/// Which result groups the pipeline writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputSet {
    pub ha: bool,
    pub ia: bool,
    pub fa: bool,
    pub vectors: bool,
    pub eigenvalues: bool,
}

impl Default for OutputSet {
    fn default() -> Self {
        OutputSet {
            ha: true,
            ia: true,
            fa: true,
            vectors: true,
            eigenvalues: true,
        }
    }
}

impl OutputSet {
    pub fn none() -> Self {
        OutputSet {
            ha: false,
            ia: false,
            fa: false,
            vectors: false,
            eigenvalues: false,
        }
    }

    /// Comma-separated list of `ha, ia, fa, vectors, eigenvalues`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut set = OutputSet::none();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "ha" => set.ha = true,
                "ia" => set.ia = true,
                "fa" => set.fa = true,
                "vectors" => set.vectors = true,
                "eigenvalues" => set.eigenvalues = true,
                other => return Err(Error::invalid(format!("unknown output `{other}`"))),
            }
        }
        Ok(set)
    }

    pub fn to_list(&self) -> String {
        let mut v = Vec::new();
        for (on, name) in [
            (self.ha, "ha"),
            (self.ia, "ia"),
            (self.fa, "fa"),
            (self.vectors, "vectors"),
            (self.eigenvalues, "eigenvalues"),
        ] {
            if on {
                v.push(name);
            }
        }
        v.join(",")
    }
}

/// Everything `run_pipeline` needs, already validated.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub volume: PathBuf,
    pub mask: Option<PathBuf>,
    pub params: StructureTensorParams,
    pub axis: AxisModel,
    pub r_min: f64,
    pub chunk: [usize; 3],
    pub workers: usize,
    pub job_index: usize,
    pub job_count: usize,
    pub output_dir: PathBuf,
    pub save: OutputSet,
}

impl PipelineConfig {
    pub fn new(volume: PathBuf, axis: AxisModel, output_dir: PathBuf) -> Self {
        PipelineConfig {
            volume,
            mask: None,
            params: StructureTensorParams::default(),
            axis,
            r_min: crate::cardiac_frame::DEFAULT_R_MIN,
            chunk: [128; 3],
            workers: 1,
            job_index: 0,
            job_count: 1,
            output_dir,
            save: OutputSet::default(),
        }
    }
}

/// One output dataset written per chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDataset {
    pub kind: OutputKind,
    pub path: PathBuf,
    pub dtype: DType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    Ha,
    Ia,
    Fa,
    Valid,
    Fiber(usize),
    FieldFa,
    Lambda(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelinePlan {
    pub meta: VolumeMeta,
    pub params: StructureTensorParams,
    pub chunk_shape: [usize; 3],
    pub chunks: Vec<ChunkSpec>,
    /// This job's share of `chunks`.
    pub job_chunks: Vec<ChunkSpec>,
    pub workers: usize,
    pub outputs: Vec<OutputDataset>,
}

impl PipelinePlan {
    pub fn output(&self, kind: OutputKind) -> Option<&OutputDataset> {
        self.outputs.iter().find(|o| o.kind == kind)
    }
}

fn output_datasets(dir: &Path, save: &OutputSet) -> Vec<OutputDataset> {
    let mut out = Vec::new();
    let mut push = |kind, group: Option<&str>, name: &str, dtype| {
        out.push(OutputDataset {
            kind,
            path: dataset_path(dir, group, name),
            dtype,
        })
    };
    if save.ha {
        push(OutputKind::Ha, None, names::HA, DType::F32);
    }
    if save.ia {
        push(OutputKind::Ia, None, names::IA, DType::F32);
    }
    if save.fa {
        push(OutputKind::Fa, None, names::FA, DType::F32);
    }
    if save.ha || save.ia || save.fa {
        push(OutputKind::Valid, None, names::VALID, DType::U8);
    }
    if save.vectors {
        let g = Some(names::VECTORS_DIR);
        push(OutputKind::Fiber(0), g, names::FX, DType::F32);
        push(OutputKind::Fiber(1), g, names::FY, DType::F32);
        push(OutputKind::Fiber(2), g, names::FZ, DType::F32);
        push(OutputKind::FieldFa, g, names::FIELD_FA, DType::F32);
    }
    if save.eigenvalues {
        for (k, name) in names::LAMBDA.iter().enumerate() {
            push(
                OutputKind::Lambda(k),
                Some(names::EIGEN_DIR),
                name,
                DType::F32,
            );
        }
    }
    out
}

/// Validate inputs and lay out the chunk plan. Touches nothing on disk.
pub fn plan_pipeline(cfg: &PipelineConfig) -> Result<PipelinePlan> {
    cfg.params.validate()?;
    if cfg.workers == 0 {
        return Err(Error::invalid("workers must be ≥ 1"));
    }
    let meta = read_metadata(&cfg.volume)?;
    if let Some(m) = &cfg.mask {
        let mm = read_metadata(m)?;
        if mm.dims != meta.dims {
            return Err(Error::invalid(format!(
                "mask dims {:?} differ from volume dims {:?}",
                mm.dims, meta.dims
            )));
        }
    }
    let chunks = plan_chunks(meta.dims, cfg.chunk, cfg.params.halo())?;
    let job_chunks = job_slice(&chunks, cfg.job_index, cfg.job_count)?;
    Ok(PipelinePlan {
        meta,
        params: cfg.params,
        chunk_shape: cfg.chunk,
        chunks,
        job_chunks,
        workers: cfg.workers,
        outputs: output_datasets(&cfg.output_dir, &cfg.save),
    })
}

/// Knobs that do not affect results.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Stop claiming new chunks after this many (simulates an interruption).
    pub chunk_limit: Option<usize>,
    /// Called with `(done, total)` after each chunk of this job finishes.
    pub progress: Option<&'a (dyn Fn(usize, usize) + Sync)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub total: usize,
    pub computed: Vec<usize>,
    pub skipped: Vec<usize>,
    pub failed: Vec<(usize, String)>,
}

impl RunReport {
    pub fn is_complete(&self) -> bool {
        self.failed.is_empty() && self.computed.len() + self.skipped.len() == self.total
    }
}

fn fingerprint(cfg: &PipelineConfig, plan: &PipelinePlan) -> String {
    format!(
        "volume = {}\nmask = {:?}\ndims = {:?}\nspacing = {:?}\nparams = {:?}\naxis = {:?}\nr_min = {}\nchunk = {:?}\njob_count = {}\nsave = {}\n",
        cfg.volume.display(),
        cfg.mask,
        plan.meta.dims,
        plan.meta.spacing,
        cfg.params,
        cfg.axis.centers(),
        cfg.r_min,
        cfg.chunk,
        cfg.job_count,
        cfg.save.to_list()
    )
}

/// Completed chunk indices recorded in the ledger. A torn last line is
/// ignored.
pub fn read_ledger(dir: &Path) -> Result<BTreeSet<usize>> {
    let p = dir.join(LEDGER_FILE);
    match fs::read_to_string(&p) {
        Ok(text) => Ok(text.lines().filter_map(|l| l.trim().parse().ok()).collect()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeSet::new()),
        Err(e) => Err(Error::io(p, e)),
    }
}

/// Create output datasets (reusing any with matching geometry) and decide
/// which chunks are already done.
fn prepare_outputs(cfg: &PipelineConfig, plan: &PipelinePlan) -> Result<BTreeSet<usize>> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let fp_path = dir.join(FINGERPRINT_FILE);
    let fp = fingerprint(cfg, plan);
    let resume = fs::read_to_string(&fp_path).is_ok_and(|old| old == fp);
    if !resume {
        let ledger = dir.join(LEDGER_FILE);
        if ledger.exists() {
            fs::remove_file(&ledger).map_err(|e| Error::io(&ledger, e))?;
        }
        fs::write(&fp_path, &fp).map_err(|e| Error::io(&fp_path, e))?;
    }
    for out in &plan.outputs {
        if let Some(parent) = out.path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let meta = VolumeMeta::new(plan.meta.dims, out.dtype, plan.meta.spacing)?;
        let matches = read_metadata(&out.path).is_ok_and(|m| m == meta)
            && fs::metadata(out.path.with_extension("raw"))
                .is_ok_and(|m| m.len() == meta.byte_len());
        if !matches {
            create_dataset(&meta, &out.path, true)?;
        }
    }
    if resume {
        read_ledger(dir)
    } else {
        Ok(BTreeSet::new())
    }
}

/// Run this job's chunks across `workers` threads. Outputs do not depend on
/// worker count, chunk shape or completion order.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunReport> {
    let plan = plan_pipeline(cfg)?;
    let done = prepare_outputs(cfg, &plan)?;
    let ledger_path = cfg.output_dir.join(LEDGER_FILE);
    let ledger = Mutex::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&ledger_path)
            .map_err(|e| Error::io(&ledger_path, e))?,
    );

    let todo: Vec<ChunkSpec> = plan
        .job_chunks
        .iter()
        .filter(|c| !done.contains(&c.index))
        .copied()
        .collect();
    let skipped: Vec<usize> = plan
        .job_chunks
        .iter()
        .filter(|c| done.contains(&c.index))
        .map(|c| c.index)
        .collect();
    let total = plan.job_chunks.len();
    let next = AtomicUsize::new(0);
    let finished = AtomicUsize::new(skipped.len());
    let results = Mutex::new(Vec::new());
    let limit = opts.chunk_limit.unwrap_or(usize::MAX);

    std::thread::scope(|s| {
        for _ in 0..plan.workers.min(todo.len().max(1)) {
            s.spawn(|| loop {
                let ticket = next.fetch_add(1, Ordering::SeqCst);
                if ticket >= todo.len() || ticket >= limit {
                    break;
                }
                let chunk = &todo[ticket];
                let outcome = process_chunk(cfg, &plan, chunk).and_then(|()| {
                    let mut f = ledger.lock().unwrap_or_else(|p| p.into_inner());
                    writeln!(f, "{}", chunk.index)
                        .and_then(|()| f.flush())
                        .map_err(|e| Error::io(&ledger_path, e))
                });
                let n = finished.fetch_add(1, Ordering::SeqCst) + 1;
                if let Some(cb) = opts.progress {
                    cb(n, total);
                }
                results
                    .lock()
                    .unwrap_or_else(|p| p.into_inner())
                    .push((chunk.index, outcome.map_err(|e| e.to_string())));
            });
        }
    });

    let mut results = results.into_inner().unwrap_or_else(|p| p.into_inner());
    results.sort_by_key(|r| r.0);
    let mut report = RunReport {
        total,
        skipped,
        ..Default::default()
    };
    for (idx, r) in results {
        match r {
            Ok(()) => report.computed.push(idx),
            Err(msg) => report.failed.push((idx, msg)),
        }
    }
    Ok(report)
}

/// Read, compute and write one chunk.
pub fn process_chunk(cfg: &PipelineConfig, plan: &PipelinePlan, chunk: &ChunkSpec) -> Result<()> {
    let meta = &plan.meta;
    let core = chunk.core;
    let mut field = {
        let block = read_region(meta, &cfg.volume, &chunk.padded)?;
        orientation_block(&block, &plan.params, meta.spacing, &core)?
    };
    let mask = match &cfg.mask {
        Some(p) => {
            let mm = read_metadata(p)?;
            Some(read_mask_region(&mm, p, &core)?)
        }
        None => None,
    };
    if let Some(m) = &mask {
        for (i, &inside) in m.values.iter().enumerate() {
            if inside == 0 {
                field.fiber[i] = [0.0; 3];
                field.lambda[i] = [0.0; 3];
                field.fa[i] = 0.0;
            }
        }
    }
    let maps = compute_angle_maps(&field, &cfg.axis, mask.as_ref(), cfg.r_min)?;
    drop(mask);

    for out in &plan.outputs {
        let values: Vec<f32> = match out.kind {
            OutputKind::Ha => maps.ha.clone(),
            OutputKind::Ia => maps.ia.clone(),
            OutputKind::Fa => maps.fa.clone(),
            OutputKind::Valid => maps.valid.iter().map(|&v| v as f32).collect(),
            OutputKind::Fiber(k) => field.fiber.iter().map(|f| f[k]).collect(),
            OutputKind::FieldFa => field.fa.clone(),
            OutputKind::Lambda(k) => field.lambda.iter().map(|l| l[k]).collect(),
        };
        let out_meta = VolumeMeta::new(meta.dims, out.dtype, meta.spacing)?;
        write_region(&out_meta, &out.path, &core, &plane(core, values))?;
    }
    Ok(())
}

/// Whole-volume single-block computation of the same outputs, used as the
/// reference the chunked run must reproduce.
pub fn monolithic_field(
    volume: &Block<f32>,
    params: &StructureTensorParams,
    spacing: [f64; 3],
) -> Result<crate::structure_tensor::OrientationField> {
    let core = volume.bbox;
    let halo = params.halo() as i64;
    let padded = core.expand_uniform(halo);
    let dims = core.shape();
    let last = dims.map(|d| d as i64 - 1);
    let block = Block::from_fn(padded, |p| {
        volume.get([
            (p[0] - core.lo[0]).clamp(0, last[0]) + core.lo[0],
            (p[1] - core.lo[1]).clamp(0, last[1]) + core.lo[1],
            (p[2] - core.lo[2]).clamp(0, last[2]) + core.lo[2],
        ])
    });
    orientation_block(&block, params, spacing, &core)
}
