use std::f64::consts::PI;

use bubblelab_core::diagnostics::{fit_decay, log_factor, loj_ratios, ode_ratio_check, DecayModel};
use bubblelab_core::sphere_maps::{project_to_sphere, stereographic, tension, RotationParam};
use bubblelab_core::torus_geometry::{energy, translate_coords, translate_coords_inv};
use bubblelab_core::vec3::{dot, norm};
use bubblelab_core::{ToroidalField3, ToroidalGrid};
use proptest::prelude::*;

fn smooth_map(n: usize, c: [f64; 4]) -> ToroidalField3 {
    let g = ToroidalGrid::new(n).unwrap();
    let u = ToroidalField3::from_fn(g, |p| {
        let (s1, c1) = (2.0 * PI * p[0]).sin_cos();
        let (s2, c2) = (2.0 * PI * p[1]).sin_cos();
        [c[0] * s1 + c[1] * c2, c[2] * s2 * c1, 1.0 + c[3] * c1]
    });
    bubblelab_core::sphere_maps::project_field(&u).unwrap()
}

proptest! {
    #[test]
    fn translation_round_trip(a1 in 0.0..1.0f64, a2 in 0.0..1.0f64, p1 in 0.0..1.0f64, p2 in 0.0..1.0f64) {
        let x = translate_coords([a1, a2], [p1, p2]);
        prop_assert!(x[0] >= -0.5 && x[0] < 0.5 && x[1] >= -0.5 && x[1] < 0.5);
        let q = translate_coords_inv([a1, a2], x);
        let d = translate_coords([p1, p2], q);
        prop_assert!(d[0].abs() < 1e-14 && d[1].abs() < 1e-14);
    }

    #[test]
    fn stereographic_is_unit(lambda in 0.1..200.0f64, x1 in -0.5..0.5f64, x2 in -0.5..0.5f64) {
        prop_assert!((norm(stereographic(lambda, [x1, x2])) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn projection_is_idempotent(v in prop::array::uniform3(-3.0..3.0f64)) {
        prop_assume!(norm(v) > 0.2);
        let p = project_to_sphere(v).unwrap().get();
        prop_assert!((norm(p) - 1.0).abs() < 1e-15);
        let q = project_to_sphere(p).unwrap().get();
        prop_assert!(norm([p[0] - q[0], p[1] - q[1], p[2] - q[2]]) < 1e-15);
    }

    #[test]
    fn rotations_preserve_length(r in prop::array::uniform3(-3.0..3.0f64), y in prop::array::uniform3(-1.0..1.0f64)) {
        let rot = RotationParam::new(r);
        prop_assert!((norm(rot.apply(y)) - norm(y)).abs() < 1e-13);
    }

    #[test]
    fn energy_is_shift_and_rotation_invariant(
        c in prop::array::uniform4(-0.8..0.8f64),
        di in -20isize..20,
        dj in -20isize..20,
        r in prop::array::uniform3(-2.0..2.0f64),
    ) {
        let u = smooth_map(32, c);
        let e = energy(&u);
        prop_assert!((energy(&u.shifted(di, dj)) - e).abs() <= 1e-12 * e.max(1.0));
        let rot = RotationParam::new(r);
        let rotated = ToroidalField3::new(u.grid(), u.values().iter().map(|v| rot.apply(*v)).collect()).unwrap();
        prop_assert!((energy(&rotated) - e).abs() <= 1e-12 * e.max(1.0));
    }

    #[test]
    fn tension_is_tangent(c in prop::array::uniform4(-0.8..0.8f64)) {
        let u = smooth_map(24, c);
        let t = tension(&u);
        for (a, b) in t.values().iter().zip(u.values()) {
            prop_assert!(dot(*a, *b).abs() < 1e-11);
        }
    }

    #[test]
    fn exact_scale_law_gives_unit_ratio(t in 1e-4..50.0f64) {
        let lambda = 1.0 / (t * log_factor(t));
        let (rs, _) = loj_ratios(lambda, 20.0, 4.0 * PI, t);
        prop_assert!((rs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ode_ratio_is_finite_down_to_tiny_energies(e_d in 1e-14..0.9f64, t in 1e-6..10.0f64) {
        let r = ode_ratio_check(&[(e_d, t)]);
        prop_assert!(r[0].is_finite() && r[0] > 0.0);
    }

    #[test]
    fn model_choice_is_invariant_under_time_rescaling(s in 0.5..5.0f64, exponential in any::<bool>()) {
        let series = |scale: f64| -> Vec<(f64, f64)> {
            (0..60)
                .map(|k| {
                    let t = 3.0 * 1000f64.powf(k as f64 / 59.0);
                    let e = if exponential { (-0.3 * t.sqrt()).exp() } else { t.ln() / (t * t) };
                    (t * scale, e)
                })
                .collect()
        };
        let base = fit_decay(&series(1.0)).unwrap();
        let scaled = fit_decay(&series(s)).unwrap();
        prop_assert_eq!(base.selected.model, scaled.selected.model);
        if base.selected.model == DecayModel::Exponential {
            let ratio = scaled.rate().unwrap() / base.rate().unwrap();
            prop_assert!((ratio * s.sqrt() - 1.0).abs() < 1e-6);
        }
    }
}
