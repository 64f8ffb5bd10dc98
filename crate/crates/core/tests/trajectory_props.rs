use drillsim::trajectory::{lowering_velocity, phase_to_segment, setpoint_at, PathState};
use drillsim::Vec3;
use proptest::prelude::*;

fn path(n: usize) -> PathState {
    PathState::new(Vec3::new(0.0, 0.0, 1e-3), 8e-3, n, 6e-6, 30.0).unwrap()
}

proptest! {
    #[test]
    fn points_only_move_down(
        n in 3usize..60,
        frames in prop::collection::vec(prop::collection::vec(-0.5..1.5f64, 60), 1..30),
    ) {
        let mut state = path(n);
        let mut last: Vec<f64> = state.points().iter().map(|p| p.z()).collect();
        for frame in &frames {
            state.integrate_depths(&frame[..n]).unwrap();
            for (p, z) in state.points().iter().zip(&mut last) {
                prop_assert!(p.z() <= *z);
                prop_assert!(*z - p.z() <= 6e-6 / 30.0 + 1e-18);
                *z = p.z();
            }
        }
    }

    #[test]
    fn point_order_and_plan_position_are_fixed(n in 3usize..60, c in 0.0..1.0f64, ticks in 1usize..50) {
        let mut state = path(n);
        let before: Vec<(usize, f64, f64)> = state.points().iter().map(|p| (p.index(), p.x(), p.y())).collect();
        for _ in 0..ticks {
            state.integrate_depths(&vec![c; n]).unwrap();
        }
        let after: Vec<(usize, f64, f64)> = state.points().iter().map(|p| (p.index(), p.x(), p.y())).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn velocity_is_linear_in_remaining_work(c in 0.0..=1.0f64, v0 in 1e-7..1e-4f64) {
        let v = lowering_velocity(c, v0);
        prop_assert!((v - (1.0 - c) * v0).abs() <= 1e-15 * v0);
        prop_assert!(v >= 0.0 && v <= v0);
    }

    #[test]
    fn setpoints_lie_on_the_fitted_path(n in 3usize..60, phase in -3.0..3.0f64) {
        let state = path(n);
        let spline = state.rebuild_path().unwrap();
        let (i, u) = phase_to_segment(&spline, phase);
        prop_assert!(i < n);
        prop_assert!((0.0..=1.0).contains(&u));
        let p = setpoint_at(&spline, phase);
        prop_assert_eq!(p, spline.evaluate(i, u).unwrap());
    }
}

#[test]
fn uniform_completion_descends_at_the_law_rate() {
    let mut state = path(30);
    let z0 = state.points()[0].z();
    for _ in 0..300 {
        state.integrate_depths(&[0.25; 30]).unwrap();
    }
    let expected = 300.0 * 0.75 * 6e-6 / 30.0;
    assert!((z0 - state.points()[0].z() - expected).abs() < 1e-15);
    assert!((state.elapsed() - 10.0).abs() < 1e-12);
}
