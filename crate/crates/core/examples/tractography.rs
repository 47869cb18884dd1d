//! Trace streamlines through an analytic helical field and export them as
//! legacy VTK polylines.
//!
//! ```text
//! cargo run --release --example tractography -- [out.vtk]
//! ```

use myofiber::cardiac_frame::AxisModel;
use myofiber::export::write_vtk_polylines;
use myofiber::phantom::{analytic_orientation, annulus_mask, AnnulusPhantomSpec};
use myofiber::structure_tensor::OrientationField;
use myofiber::tractography::{filter_streamlines, seed_grid, Tracker, TractoParams};
use myofiber::volume_io::VoxelBox;

fn main() -> myofiber::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("helix.vtk").display().to_string());
    let n = 48;
    let spec = AnnulusPhantomSpec::centered([n; 3]);
    let mask = annulus_mask(&spec);

    let bbox = VoxelBox::whole([n; 3]);
    let mut field = OrientationField::filled(bbox, [0.0; 3], 0.0);
    for (i, p) in bbox.iter().enumerate() {
        if let Ok(f) = analytic_orientation(&spec, [p[0] as f64, p[1] as f64, p[2] as f64]) {
            field.fiber[i] = f.map(|v| v as f32);
            field.fa[i] = 0.8;
        }
    }

    let params = TractoParams {
        seed_spacing: 6,
        max_steps: 400,
        ..Default::default()
    };
    let axis = AxisModel::vertical(spec.axis[0], spec.axis[1], n);
    let seeds = seed_grid(Some(&mask), &field, &params)?;
    let tracker = Tracker {
        field: &field,
        mask: Some(&mask),
        axis: Some(&axis),
        params,
    };
    let lines = filter_streamlines(tracker.integrate_all(&seeds)?, &params, Some(200));
    let points: usize = lines.iter().map(|l| l.points.len()).sum();
    println!(
        "{} seeds, {} streamlines, {points} points",
        seeds.len(),
        lines.len()
    );
    if let Some(l) = lines.first() {
        let mean = l.ha.iter().sum::<f64>() / l.ha.len() as f64;
        println!(
            "first line: {:.1} voxels long, mean HA {mean:+.1}°",
            l.arc_length(params.step)
        );
    }
    write_vtk_polylines(&lines, std::path::Path::new(&out), [1.0; 3])?;
    println!("wrote {out}");
    Ok(())
}
