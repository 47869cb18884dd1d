//! Generate a rod-textured annulus and check the sampled texture against the
//! analytic fiber field.
//!
//! ```text
//! cargo run --example phantom -- [size] [out_dir]
//! ```

use std::path::PathBuf;

use myofiber::phantom::{generate_helical_annulus, AnnulusPhantomSpec};
use myofiber::volume_io::{write_volume, DType};

fn main() -> myofiber::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(64);
    let out = args.next().map(PathBuf::from);

    let spec = AnnulusPhantomSpec::centered([n; 3]);
    println!("{}", spec.to_manifest());
    let (volume, mask, truth) = generate_helical_annulus(&spec)?;

    let inside = mask.values.iter().filter(|&&m| m != 0).count();
    let mean = volume.values.iter().map(|&v| v as f64).sum::<f64>() / volume.values.len() as f64;
    println!("annulus voxels {inside}, mean intensity {mean:.4}");

    let mid = n as f64 / 2.0;
    for depth in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let r = spec.r_inner + depth * (spec.r_outer - spec.r_inner);
        let p = [spec.axis[0] + r, spec.axis[1], mid];
        if let Some(ha) = truth.ha(p) {
            println!("depth {depth:.2}: HA {ha:+.1}°");
        }
    }

    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| myofiber::Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        write_volume(&dir.join("volume"), &volume, DType::F32, [1.0; 3], true)?;
        println!("wrote {}", dir.join("volume").display());
    }
    Ok(())
}
