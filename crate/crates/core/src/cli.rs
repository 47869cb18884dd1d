//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime failure (including any failed chunk),
//! 2 configuration or usage error. Progress lines go to stdout, diagnostics
//! to stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{transmural_profile, SectorSpec};
use crate::chunk_engine::{plan_pipeline, run_pipeline, RunOptions};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::export::{names, read_angle_maps, read_vector_field, write_vtk_polylines};
use crate::phantom::{generate_helical_annulus, generate_uniform_fiber, AnnulusPhantomSpec};
use crate::tractography::{filter_streamlines, seed_grid, Tracker};
use crate::volume_io::{read_mask_region, read_metadata, write_volume, Block, DType, MaskBlock};

#[derive(Parser, Debug)]
#[command(
    name = "myofiber",
    version,
    about = "Fiber orientation analysis for 3D volumes"
)]
struct Cli {
    /// INI configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, `SECTION.KEY=VALUE` (repeatable).
    #[arg(long = "set", global = true, value_name = "SEC.KEY=VAL")]
    set: Vec<String>,
    /// Worker threads (overrides `chunking.workers`).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    job_index: usize,
    #[arg(long, global = true, default_value_t = 1)]
    job_count: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic test volume with known orientation.
    Phantom(PhantomArgs),
    /// Run the chunked orientation pipeline.
    Orientation,
    /// Trace streamlines through a computed vector field and export VTK.
    Tractography(TractArgs),
    /// Write a transmural helical-angle profile as CSV.
    Profile(ProfileArgs),
    /// Print dataset metadata.
    Info { path: PathBuf },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PhantomKind {
    Annulus,
    Uniform,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "annulus")]
    kind: PhantomKind,
    /// Edge length of the cubic volume.
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Rods per annulus voxel.
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    #[arg(long, default_value_t = 1.0)]
    rod_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args, Debug)]
struct TractArgs {
    /// Output VTK file (default: `streamlines.vtk` in the output directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep at most this many streamlines, evenly strided by seed.
    #[arg(long)]
    max_lines: Option<usize>,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Half-open slice range `z0,z1` (default: all slices).
    #[arg(long, value_parser = pair::<i64>)]
    z_range: Option<(i64, i64)>,
    /// Half-open azimuth range in degrees `a0,a1`, wrapping through 0.
    #[arg(long, value_parser = pair::<f64>)]
    azimuth: Option<(f64, f64)>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

fn pair<T: std::str::FromStr>(s: &str) -> std::result::Result<(T, T), String> {
    let (a, b) = s.split_once(',').ok_or("expected `a,b`")?;
    let p = |t: &str| {
        t.trim()
            .parse::<T>()
            .map_err(|_| format!("bad number `{t}`"))
    };
    Ok((p(a)?, p(b)?))
}

/// Error tagged with the exit code it should produce.
struct Failure(i32, String);

fn usage(e: Error) -> Failure {
    Failure(2, e.to_string())
}

fn runtime(e: Error) -> Failure {
    Failure(1, e.to_string())
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

fn dispatch(cli: &Cli) -> std::result::Result<(), Failure> {
    match &cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Orientation => orientation(cli),
        Command::Tractography(a) => tractography(cli, a),
        Command::Profile(a) => profile(cli, a),
        Command::Info { path } => info(path),
    }
}

fn load_config(cli: &Cli) -> std::result::Result<Config, Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure(2, "this command needs --config".into()))?;
    let mut cfg = Config::load(path, &cli.set).map_err(usage)?;
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Failure(2, "--workers must be ≥ 1".into()));
        }
        cfg.workers = w;
    }
    Ok(cfg)
}

fn phantom(a: &PhantomArgs) -> std::result::Result<(), Failure> {
    if a.size < 8 {
        return Err(Failure(2, "--size must be ≥ 8".into()));
    }
    let dims = [a.size; 3];
    fs::create_dir_all(&a.out).map_err(|e| runtime(Error::io(&a.out, e)))?;
    let volume = a.out.join("volume");
    let mut cfg = String::from("[input]\nvolume = volume\n");
    match a.kind {
        PhantomKind::Annulus => {
            let mut spec = AnnulusPhantomSpec::centered(dims);
            spec.seed = a.seed;
            spec.rod_sigma = a.rod_sigma;
            spec.noise_sigma = a.noise;
            spec.rod_count = spec.rods_for_density(a.density);
            spec.validate().map_err(usage)?;
            let (vol, mask, _) = generate_helical_annulus(&spec).map_err(runtime)?;
            write_volume(&volume, &vol, DType::F32, [1.0; 3], true).map_err(runtime)?;
            let m = Block {
                bbox: mask.bbox,
                values: mask.values.iter().map(|&v| v as f32).collect(),
            };
            write_volume(&a.out.join("mask"), &m, DType::U8, [1.0; 3], true).map_err(runtime)?;
            let manifest = a.out.join("phantom.txt");
            fs::write(&manifest, spec.to_manifest())
                .map_err(|e| runtime(Error::io(&manifest, e)))?;
            cfg.push_str("mask = mask\n");
            let [cx, cy] = spec.axis;
            cfg.push_str(&format!(
                "\n[frame]\naxis_point_a = {cx},{cy},0\naxis_point_b = {cx},{cy},{}\n",
                a.size - 1
            ));
        }
        PhantomKind::Uniform => {
            let (vol, _) =
                generate_uniform_fiber(dims, [0.0, 0.0, 1.0], [8.0, 8.0]).map_err(usage)?;
            write_volume(&volume, &vol, DType::F32, [1.0; 3], true).map_err(runtime)?;
            let c = a.size as f64 / 2.0;
            cfg.push_str(&format!(
                "\n[frame]\naxis_point_a = {c},{c},0\naxis_point_b = {c},{c},{}\n",
                a.size - 1
            ));
        }
    }
    cfg.push_str("\n[output]\ndirectory = output\n");
    let cfg_path = a.out.join("config.ini");
    fs::write(&cfg_path, cfg).map_err(|e| runtime(Error::io(&cfg_path, e)))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn orientation(cli: &Cli) -> std::result::Result<(), Failure> {
    let cfg = load_config(cli)?;
    let pc = cfg.pipeline(cli.job_index, cli.job_count).map_err(usage)?;
    plan_pipeline(&pc).map_err(usage)?;
    let progress = |done: usize, total: usize| {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "chunk {done}/{total} done");
        let _ = out.flush();
    };
    let report = run_pipeline(
        &pc,
        &RunOptions {
            chunk_limit: None,
            progress: Some(&progress),
        },
    )
    .map_err(runtime)?;
    let effective = cfg.output_dir.join("config.effective.ini");
    fs::write(&effective, cfg.to_ini()).map_err(|e| runtime(Error::io(&effective, e)))?;
    if !report.failed.is_empty() {
        for (i, msg) in &report.failed {
            eprintln!("chunk {i} failed: {msg}");
        }
        return Err(Failure(
            1,
            format!("{} chunk(s) failed", report.failed.len()),
        ));
    }
    Ok(())
}

fn read_mask(path: &Path) -> Result<MaskBlock> {
    let meta = read_metadata(path)?;
    read_mask_region(&meta, path, &meta.whole_box())
}

fn tractography(cli: &Cli, a: &TractArgs) -> std::result::Result<(), Failure> {
    let cfg = load_config(cli)?;
    let axis = cfg.axis_model().map_err(usage)?;
    let (meta, field) =
        read_vector_field(&cfg.output_dir.join(names::VECTORS_DIR)).map_err(runtime)?;
    let mask = cfg
        .mask
        .as_deref()
        .map(read_mask)
        .transpose()
        .map_err(runtime)?;
    let seeds = seed_grid(mask.as_ref(), &field, &cfg.tracto).map_err(runtime)?;
    let tracker = Tracker {
        field: &field,
        mask: mask.as_ref(),
        axis: Some(&axis),
        params: cfg.tracto,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Failure(1, e.to_string()))?;
    let lines = pool
        .install(|| tracker.integrate_all(&seeds))
        .map_err(runtime)?;
    let lines = filter_streamlines(lines, &cfg.tracto, a.max_lines);
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("streamlines.vtk"));
    write_vtk_polylines(&lines, &out, meta.spacing).map_err(runtime)?;
    println!(
        "{} seeds, {} streamlines -> {}",
        seeds.len(),
        lines.len(),
        out.display()
    );
    Ok(())
}

fn profile(cli: &Cli, a: &ProfileArgs) -> std::result::Result<(), Failure> {
    let cfg = load_config(cli)?;
    let axis = cfg.axis_model().map_err(usage)?;
    let (meta, maps) = read_angle_maps(&cfg.output_dir).map_err(runtime)?;
    let mask = match cfg.mask.as_deref() {
        Some(p) => read_mask(p).map_err(runtime)?,
        None => MaskBlock {
            bbox: maps.bbox,
            values: maps.valid.clone(),
        },
    };
    let mut sector = SectorSpec::full(meta.dims[2]);
    if let Some((z0, z1)) = a.z_range {
        sector.z_range = [z0, z1];
    }
    if let Some((a0, a1)) = a.azimuth {
        sector.azimuth = [a0, a1];
    }
    sector.n_bins = a.bins;
    sector.validate().map_err(usage)?;
    let csv = transmural_profile(&maps, &mask, &axis, &sector)
        .map_err(runtime)?
        .to_csv();
    match &a.out {
        Some(p) => fs::write(p, csv).map_err(|e| runtime(Error::io(p, e)))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn info(path: &Path) -> std::result::Result<(), Failure> {
    let meta = read_metadata(path).map_err(runtime)?;
    let [nx, ny, nz] = meta.dims;
    let [sx, sy, sz] = meta.spacing;
    println!("dims     {nx} x {ny} x {nz}");
    println!("dtype    {}", meta.dtype.name());
    println!("spacing  {sx} {sy} {sz}");
    println!("voxels   {}", meta.voxel_count());
    println!("bytes    {}", meta.byte_len());
    Ok(())
}
