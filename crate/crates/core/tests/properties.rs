use std::path::Path;

use proptest::prelude::*;

use myofiber::analysis::{orientation_mean, OrientationStats, SectorSpec};
use myofiber::cardiac_frame::{helical_angle, intrusion_angle, local_basis, AxisModel};
use myofiber::config::Config;
use myofiber::structure_tensor::{dot, eigendecompose, fractional_anisotropy, Sym3};
use myofiber::tractography::{filter_streamlines, Streamline, TractoParams};

fn unit() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-1.0f64..1.0).prop_filter_map("zero", |v| {
        let n = dot(&v, &v).sqrt();
        (n > 1e-3).then(|| v.map(|x| x / n))
    })
}

/// Signed angle difference folded into (-90, 90].
fn axial_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    if d > 90.0 {
        d - 180.0
    } else {
        d
    }
}

proptest! {
    #[test]
    fn angles_ignore_fiber_sign(f in unit(), x in -50.0f64..50.0, y in -50.0f64..50.0) {
        let axis = AxisModel::vertical(0.0, 0.0, 10);
        if let Some(b) = local_basis(&axis, [x, y, 3.0], 2.0) {
            let g = f.map(|v| -v);
            prop_assert_eq!(helical_angle(f, &b).map(f64::to_bits), helical_angle(g, &b).map(f64::to_bits));
            prop_assert_eq!(intrusion_angle(f, &b).to_bits(), intrusion_angle(g, &b).to_bits());
            if let Some(h) = helical_angle(f, &b) {
                prop_assert!((-90.0..=90.0).contains(&h));
            }
        }
    }

    #[test]
    fn axial_mean_has_period_180(base in -90.0f64..90.0, spread in 0.0f64..20.0, shifts in prop::collection::vec(-3i32..3, 1..20)) {
        let angles: Vec<f64> = shifts.iter().enumerate()
            .map(|(i, &k)| base + spread * ((i as f64) * 0.37).sin() + 180.0 * k as f64)
            .collect();
        let folded: Vec<f64> = angles.iter().map(|a| a - 180.0 * ((a - base) / 180.0).round()).collect();
        let m1 = orientation_mean(&angles).unwrap();
        let m2 = orientation_mean(&folded).unwrap();
        prop_assert!(axial_diff(m1, m2).abs() < 1e-9);
        prop_assert!(m1 > -90.0 && m1 <= 90.0);
    }

    #[test]
    fn concentrated_stats_have_small_spread(a in -89.0f64..89.0, n in 1usize..50) {
        let mut s = OrientationStats::default();
        (0..n).for_each(|_| s.push(a));
        prop_assert!(axial_diff(s.mean().unwrap(), a).abs() < 1e-9);
        prop_assert!(s.std().unwrap() < 1e-5);
        prop_assert!((s.resultant().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sector_wrap_matches_split_ranges(a in 0.0f64..360.0, w in 1.0f64..359.0, phi in 0.0f64..360.0) {
        let b = (a + w) % 360.0;
        let s = SectorSpec { z_range: [0, 1], azimuth: [a, b], n_bins: 4 };
        let inside = if a < b { phi >= a && phi < b } else { phi >= a || phi < b };
        prop_assert_eq!(s.contains(phi, 0), inside);
        prop_assert!(!s.contains(phi, 1));
    }

    #[test]
    fn eigen_reconstructs_random_symmetric(m in prop::array::uniform6(-100.0f64..100.0)) {
        let s = Sym3 { xx: m[0], yy: m[1], zz: m[2], xy: m[3], xz: m[4], yz: m[5] };
        let e = eigendecompose(&s).unwrap();
        prop_assert!(e.lambda[0] >= e.lambda[1] && e.lambda[1] >= e.lambda[2]);
        let scale = e.lambda.iter().fold(1.0f64, |a, l| a.max(l.abs()));
        prop_assert!(e.residual(&s) <= 1e-9 * scale);
        prop_assert!((e.lambda.iter().sum::<f64>() - s.trace()).abs() <= 1e-9 * scale);
    }

    #[test]
    fn fa_is_bounded_and_scale_free(l in prop::array::uniform3(0.0f64..1e3), k in 1e-3f64..1e3) {
        prop_assume!(l.iter().any(|&x| x > 0.0));
        let a = fractional_anisotropy(l).unwrap();
        let b = fractional_anisotropy(l.map(|x| x * k)).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn filter_keeps_seed_order(n in 0usize..60, target in 1usize..30) {
        let lines: Vec<Streamline> = (0..n).rev().map(|i| Streamline {
            points: vec![[0.0; 3]; 40],
            ha: vec![0.0; 40],
            seed_index: i,
        }).collect();
        let kept = filter_streamlines(lines, &TractoParams::default(), Some(target));
        prop_assert_eq!(kept.len(), n.min(target));
        prop_assert!(kept.windows(2).all(|w| w[0].seed_index < w[1].seed_index));
    }

    #[test]
    fn config_ini_round_trips(sg in 0.5f64..3.0, st in 0.5f64..6.0, chunk in 8usize..300, workers in 1usize..16) {
        let text = format!(
            "[input]\nvolume = v\n[structure_tensor]\nsigma_gradient = {sg}\nsigma_tensor = {st}\n\
             [frame]\naxis_point_a = 1,2,0\naxis_point_b = 1,2,9\n[chunking]\nchunk = {chunk}\nworkers = {workers}\n"
        );
        let base = Path::new("/data");
        let c = Config::parse_with(&text, base, &[]).unwrap();
        let again = Config::parse_with(&c.to_ini(), base, &[]).unwrap();
        prop_assert_eq!(c, again);
    }
}

#[test]
fn later_override_wins() {
    let text = "[input]\nvolume = v\n[frame]\naxis_point_a = 0,0,0\naxis_point_b = 0,0,1\n";
    let sets = [
        "chunking.workers=2".to_string(),
        "chunking.workers=5".to_string(),
    ];
    let c = Config::parse_with(text, Path::new("."), &sets).unwrap();
    assert_eq!(c.workers, 5);
}
