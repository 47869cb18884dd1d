//! Run the chunked orientation pipeline on a phantom written to a temporary
//! directory, then compare the recovered fibers with the analytic field.
//!
//! ```text
//! cargo run --release --example orientation -- [size] [chunk] [workers]
//! ```

use myofiber::cardiac_frame::AxisModel;
use myofiber::chunk_engine::{run_pipeline, PipelineConfig, RunOptions};
use myofiber::export::read_vector_field;
use myofiber::phantom::{generate_helical_annulus, AnnulusPhantomSpec};
use myofiber::structure_tensor::dot;
use myofiber::volume_io::{write_volume, Block, DType};

fn main() -> myofiber::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|s| s.parse().ok())
        .collect();
    let n = args.first().copied().unwrap_or(64);
    let chunk = args.get(1).copied().unwrap_or(32);
    let workers = args.get(2).copied().unwrap_or(2);

    let dir = std::env::temp_dir().join(format!("myofiber-orientation-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| myofiber::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let spec = AnnulusPhantomSpec::centered([n; 3]);
    let (volume, mask, truth) = generate_helical_annulus(&spec)?;
    write_volume(&dir.join("volume"), &volume, DType::F32, [1.0; 3], true)?;
    let m = Block {
        bbox: mask.bbox,
        values: mask.values.iter().map(|&v| v as f32).collect(),
    };
    write_volume(&dir.join("mask"), &m, DType::U8, [1.0; 3], true)?;

    let axis = AxisModel::vertical(spec.axis[0], spec.axis[1], n);
    let mut cfg = PipelineConfig::new(dir.join("volume"), axis, dir.join("out"));
    cfg.mask = Some(dir.join("mask"));
    cfg.chunk = [chunk; 3];
    cfg.workers = workers;

    let progress = |done: usize, total: usize| println!("chunk {done}/{total} done");
    let report = run_pipeline(
        &cfg,
        &RunOptions {
            chunk_limit: None,
            progress: Some(&progress),
        },
    )?;
    println!(
        "computed {} chunks, {} failed",
        report.computed.len(),
        report.failed.len()
    );

    let (_, field) = read_vector_field(&cfg.output_dir.join("vectors"))?;
    let mut errs: Vec<f64> = field
        .bbox
        .iter()
        .enumerate()
        .filter(|&(i, _)| mask.values[i] != 0 && field.is_defined(i) && field.fa[i] >= 0.2)
        .filter_map(|(i, p)| {
            let t = truth.orientation([p[0] as f64, p[1] as f64, p[2] as f64])?;
            let f = field.fiber[i].map(|v| v as f64);
            Some(dot(&t, &f).abs().min(1.0).acos().to_degrees())
        })
        .collect();
    errs.sort_by(f64::total_cmp);
    if !errs.is_empty() {
        let q = |f: f64| errs[((errs.len() - 1) as f64 * f) as usize];
        println!(
            "angular error over {} voxels: median {:.2}°, p90 {:.2}°",
            errs.len(),
            q(0.5),
            q(0.9)
        );
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
