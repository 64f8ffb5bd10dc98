use drillsim::specimen::{make_specimen, DrillTool, SpecimenConfig};
use drillsim::Vec3;
use proptest::prelude::*;

fn small_config() -> SpecimenConfig {
    SpecimenConfig {
        grid: 96,
        ..SpecimenConfig::default()
    }
}

fn tip(x: f64, y: f64, depth: f64) -> Vec3 {
    Vec3::new(x, y, -depth)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn removal_never_decreases(
        seed in 0u64..1000,
        cuts in prop::collection::vec((-8e-3..8e-3f64, -8e-3..8e-3f64, 0.0..400e-6f64), 1..12),
    ) {
        let mut s = make_specimen(&small_config(), seed).unwrap();
        let mut last = s.removal_field().to_vec();
        for &(x, y, d) in &cuts {
            s.apply_drill(&DrillTool { tip: tip(x, y, d), burr_radius: 0.7e-3, active: true });
            for (now, before) in s.removal_field().iter().zip(&last) {
                prop_assert!(now >= before);
            }
            for (r, h) in s.removal_field().iter().zip(s.thickness_field()) {
                prop_assert!(*r <= h + s.membrane_tolerance() + 1e-15);
            }
            last = s.removal_field().to_vec();
        }
    }

    #[test]
    fn same_seed_same_fields(seed in 0u64..10_000) {
        let a = make_specimen(&small_config(), seed).unwrap();
        let b = make_specimen(&small_config(), seed).unwrap();
        prop_assert_eq!(a.thickness_field(), b.thickness_field());
        prop_assert_eq!(a.outer_field(), b.outer_field());
    }

    #[test]
    fn finer_sampling_of_a_line_cuts_the_same(
        x0 in -5e-3..5e-3f64, y0 in -5e-3..5e-3f64,
        x1 in -5e-3..5e-3f64, y1 in -5e-3..5e-3f64,
        d0 in 0.0..250e-6f64, d1 in 0.0..250e-6f64,
    ) {
        let config = SpecimenConfig::uniform(300e-6);
        let mut coarse = make_specimen(&SpecimenConfig { grid: 96, ..config.clone() }, 1).unwrap();
        let mut fine = coarse.clone();
        let a = tip(x0, y0, d0);
        let b = tip(x1, y1, d1);
        coarse.sweep(&[a, b], 0.7e-3);
        let steps: Vec<Vec3> = (0..=16).map(|k| a + (b - a) * (k as f64 / 16.0)).collect();
        fine.sweep(&steps, 0.7e-3);
        for (p, q) in coarse.removal_field().iter().zip(fine.removal_field()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }
}

#[test]
fn rupture_stays_latched() {
    let mut s = make_specimen(&SpecimenConfig::uniform(300e-6), 3).unwrap();
    assert!(s.apply_drill(&DrillTool { tip: tip(0.0, 0.0, 400e-6), burr_radius: 0.7e-3, active: true }));
    let first = s.rupture();
    s.apply_drill(&DrillTool { tip: tip(3e-3, 0.0, 10e-6), burr_radius: 0.7e-3, active: true });
    assert!(s.membrane_ruptured());
    assert_eq!(s.rupture(), first);
}
