//! Helical-angle and intrusion-angle maps from an analytic field, then a
//! transmural profile and a few regional statistics.

use myofiber::analysis::{regional_stats, transmural_profile, SectorSpec};
use myofiber::cardiac_frame::{compute_angle_maps, AxisModel, DEFAULT_R_MIN};
use myofiber::phantom::{analytic_orientation, annulus_mask, AnnulusPhantomSpec};
use myofiber::structure_tensor::OrientationField;
use myofiber::volume_io::VoxelBox;

fn main() -> myofiber::Result<()> {
    let n = 64;
    let spec = AnnulusPhantomSpec::centered([n; 3]);
    let mask = annulus_mask(&spec);
    let bbox = VoxelBox::whole([n; 3]);
    let mut field = OrientationField::filled(bbox, [0.0; 3], 0.0);
    for (i, p) in bbox.iter().enumerate() {
        if let Ok(f) = analytic_orientation(&spec, [p[0] as f64, p[1] as f64, p[2] as f64]) {
            field.fiber[i] = f.map(|v| v as f32);
            field.fa[i] = 0.7;
        }
    }

    let axis = AxisModel::vertical(spec.axis[0], spec.axis[1], n);
    let maps = compute_angle_maps(&field, &axis, Some(&mask), DEFAULT_R_MIN)?;
    println!("{} valid voxels", maps.valid_count());

    let sector = SectorSpec {
        n_bins: 10,
        ..SectorSpec::full(n)
    };
    print!(
        "{}",
        transmural_profile(&maps, &mask, &axis, &sector)?.to_csv()
    );

    // a septal-ish wedge, wrapping through 0°
    let wedge = SectorSpec {
        azimuth: [315.0, 45.0],
        n_bins: 5,
        ..SectorSpec::full(n)
    };
    let p = transmural_profile(&maps, &mask, &axis, &wedge)?;
    println!("wedge 315°..45°: {} voxels", p.total_count());

    let c = n as i64 / 2;
    let region = VoxelBox::new([c + 18, c - 3, c - 3], [c + 24, c + 3, c + 3])?;
    if let Some(s) = regional_stats(&maps, Some(&mask), region)? {
        println!(
            "region {region}: mean HA {:+.1}°, std {:.1}°, mean FA {:.2}, n {}",
            s.mean_ha, s.std_ha, s.mean_fa, s.valid_count
        );
    }
    Ok(())
}
