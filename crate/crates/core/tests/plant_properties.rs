use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

use telewalk::robot::{ContactId, RobotParams};
use telewalk::srbm::{cop, integrate, CopError, SrbState, SrbmPlant, Wrench};

#[test]
fn tumbling_body_stays_orthonormal_over_long_runs() {
    let params = RobotParams::default();
    let mut s = SrbState { omega_body: Vector3::new(2.0, -0.7, 1.3), ..SrbState::at_rest(Vector3::new(0.0, 0.0, 1.0)) };
    let mut worst: f64 = 0.0;
    for k in 0..100_000 {
        // A slowly varying torque keeps the rotation from settling into a pattern.
        let torque = Vector3::new((k as f64 * 1e-3).sin(), 0.5, -(k as f64 * 7e-4).cos());
        s = integrate(&s, |_| Wrench { force: Vector3::zeros(), torque }, 1e-3, &params);
        worst = worst.max(s.orthonormality_error());
    }
    assert!(worst <= 1e-9, "drift {worst:e}");
    assert!((s.rot_r.determinant() - 1.0).abs() <= 1e-9);
}

#[test]
fn torque_free_spin_conserves_angular_momentum() {
    let params = RobotParams::default();
    let inertia = params.inertia();
    let mut s = SrbState { omega_body: Vector3::new(0.4, 3.0, 0.2), ..SrbState::at_rest(Vector3::zeros()) };
    let l0 = s.rot_r * inertia * s.omega_body;
    for _ in 0..10_000 {
        s = integrate(&s, |_| Wrench::default(), 1e-3, &params);
    }
    let l = s.rot_r * inertia * s.omega_body;
    assert!((l - l0).norm() <= 1e-6 * l0.norm(), "{l:?} vs {l0:?}");
}

/// Andrew's monotone chain, counter-clockwise, collinear points dropped.
fn convex_hull(mut pts: Vec<Vector2<f64>>) -> Vec<Vector2<f64>> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>| (a - o).perp(&(b - o));
    let mut hull: Vec<Vector2<f64>> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Distance by which `q` lies outside the hull (0 when inside).
fn outside_distance(hull: &[Vector2<f64>], q: Vector2<f64>) -> f64 {
    let seg = |a: Vector2<f64>, b: Vector2<f64>| {
        let d = b - a;
        let t = if d.norm_squared() > 0.0 { ((q - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
        (a + d * t - q).norm()
    };
    match hull.len() {
        0 => f64::INFINITY,
        1 => (hull[0] - q).norm(),
        2 => seg(hull[0], hull[1]),
        n => {
            let inside = (0..n).all(|i| (hull[(i + 1) % n] - hull[i]).perp(&(q - hull[i])) >= 0.0);
            if inside {
                0.0
            } else {
                (0..n).map(|i| seg(hull[i], hull[(i + 1) % n])).fold(f64::INFINITY, f64::min)
            }
        }
    }
}

fn contact() -> impl Strategy<Value = (Vector3<f64>, Vector3<f64>)> {
    ((-0.5f64..0.5, -0.3f64..0.3, -0.01f64..0.01), (-50.0f64..50.0, -50.0f64..50.0, 0.0f64..200.0))
        .prop_map(|((x, y, z), (fx, fy, fz))| (Vector3::new(x, y, z), Vector3::new(fx, fy, fz)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ballistic_flight_matches_closed_form(
        v0 in (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..3.0),
        w0 in (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0),
    ) {
        let params = RobotParams::default();
        let v0 = Vector3::new(v0.0, v0.1, v0.2);
        let p0 = Vector3::new(0.1, -0.2, 1.0);
        let mut s = SrbState { pdot: v0, omega_body: Vector3::new(w0.0, w0.1, w0.2), ..SrbState::at_rest(p0) };
        let dt = 1e-3;
        for _ in 0..1000 {
            s = integrate(&s, |_| Wrench::default(), dt, &params);
        }
        let t = s.time;
        let g = params.gravity_vector();
        let expected = p0 + v0 * t + 0.5 * g * t * t;
        prop_assert!((s.p - expected).norm() <= 1e-9, "{:e}", (s.p - expected).norm());
        prop_assert!((s.pdot - (v0 + g * t)).norm() <= 1e-9);
    }

    #[test]
    fn cop_lies_in_support_polygon(contacts in prop::collection::vec(contact(), 1..=4)) {
        let total: f64 = contacts.iter().map(|(_, f)| f.z).sum();
        match cop(&contacts) {
            Ok(c) => {
                let hull = convex_hull(contacts.iter().filter(|(_, f)| f.z > 0.0).map(|(p, _)| p.xy()).collect());
                prop_assert!(outside_distance(&hull, c) <= 1e-12, "cop {c:?} outside {hull:?}");
            }
            Err(CopError::NoVerticalLoad(fz)) => {
                prop_assert!(total <= 0.0);
                prop_assert_eq!(fz, total);
            }
        }
    }

    #[test]
    fn plant_only_applies_pinned_forces(fz in 0.0f64..300.0, fx in -20.0f64..20.0) {
        let params = RobotParams::default();
        let start = SrbState::at_rest(Vector3::new(0.0, 0.0, 0.5));
        let mut plant = SrbmPlant::new(start);
        plant.pin(ContactId::ALL[0], Vector3::new(0.05, 0.1, 0.02));
        let grfs = [(ContactId::ALL[0], Vector3::new(fx, 0.0, fz)), (ContactId::ALL[1], Vector3::new(0.0, 0.0, 1e3))];
        let applied = plant.step(&grfs, 1e-3, &params);
        prop_assert_eq!(applied.force, Vector3::new(fx, 0.0, fz));
        // Pinned points sit on the ground plane.
        prop_assert_eq!(plant.pinned(ContactId::ALL[0]).unwrap().z, 0.0);
        let friction_ok = fx.abs() <= params.friction_mu * fz + 1e-6;
        prop_assert_eq!(plant.violations.friction == 0, friction_ok);
    }
}

#[test]
fn unloaded_contacts_leave_cop_undefined() {
    let c = [(Vector3::new(0.0, 0.1, 0.0), Vector3::new(1.0, 0.0, 0.0))];
    assert_eq!(cop(&c), Err(CopError::NoVerticalLoad(0.0)));
}
