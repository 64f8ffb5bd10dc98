use drillsim::perception::{
    render_map, corrupt_with, BinGeometry, BoundingBox, ProgressBar, SensorNoise, SensorNoiseModel,
};
use drillsim::specimen::{make_specimen, SpecimenConfig};
use drillsim::Vec3;
use proptest::prelude::*;

fn ring(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / n as f64;
            (8e-3 * a.cos(), 8e-3 * a.sin())
        })
        .collect()
}

proptest! {
    #[test]
    fn bar_never_decreases(
        frames in prop::collection::vec(prop::collection::vec(prop::option::of(-0.5..1.5f64), 30), 1..40),
    ) {
        let mut bar = ProgressBar::new(30);
        let mut last = bar.values().to_vec();
        for f in &frames {
            bar.absorb(f).unwrap();
            for (now, before) in bar.values().iter().zip(&last) {
                prop_assert!(now >= before);
                prop_assert!((0.0..=1.0).contains(now));
            }
            last = bar.values().to_vec();
        }
    }

    #[test]
    fn sparse_readings_match_full_render(seed in 0u64..500, angle in 0.0..std::f64::consts::TAU, depth in 0.0..300e-6f64) {
        let mut specimen = make_specimen(&SpecimenConfig { grid: 128, ..SpecimenConfig::default() }, seed).unwrap();
        let drill = (8e-3 * angle.cos(), 8e-3 * angle.sin());
        let path: Vec<Vec3> = ring(60).iter().map(|&(x, y)| Vec3::new(x, y, -depth)).collect();
        specimen.sweep(&path, 0.7e-3);
        let bbox = BoundingBox::square(0.0, 0.0, 9.4e-3).unwrap();
        let geometry = BinGeometry::new(bbox, &ring(30), 2.0);
        let model = SensorNoiseModel { sigma: 0.2, ..SensorNoiseModel::default() };
        let frame = SensorNoise::new(model, seed).next_frame();
        let map = render_map(&specimen, Some(drill), bbox, 1.5e-3).unwrap();
        let full = geometry.readings(&corrupt_with(&map, &frame));
        let sparse = geometry.observe(&specimen, Some(drill), 1.5e-3, &frame).unwrap();
        prop_assert_eq!(full, sparse);
    }
}
