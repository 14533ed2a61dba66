use nalgebra::UnitQuaternion;
use proptest::prelude::*;

use vlnmine::dataset::explicit_geometry;
use vlnmine::geometry::{rms_residual, umeyama_align, SimilarityTransform, Vec3, ViewState};
use vlnmine::metrics::{self, PathRecord};
use vlnmine::mining::{dbscan, NOISE};

fn arb_vec(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn arb_rotation() -> impl Strategy<Value = UnitQuaternion<f64>> {
    (-3.1f64..3.1, -1.5f64..1.5, -3.1f64..3.1).prop_map(|(r, p, y)| UnitQuaternion::from_euler_angles(r, p, y))
}

fn arb_similarity() -> impl Strategy<Value = SimilarityTransform> {
    (-2.0f64..2.0, arb_rotation(), arb_vec(100.0)).prop_map(|(ls, q, t)| SimilarityTransform::new(ls.exp(), q, t))
}

fn arb_path() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(arb_vec(20.0).prop_map(<[f64; 3]>::from), 1..6)
}

fn arb_record() -> impl Strategy<Value = PathRecord> {
    (arb_path(), arb_vec(20.0), arb_vec(3.0), any::<bool>()).prop_map(|(mut pred, a, b, near)| {
        let reference = vec![<[f64; 3]>::from(a), <[f64; 3]>::from(a + Vec3::new(5.0, 1.0, 0.0))];
        if near {
            pred.push((Vec3::from(reference[1]) + b).into());
        }
        PathRecord {
            episode_id: "p".into(),
            goal: reference[1],
            predicted_path: pred,
            reference_path: reference,
            success_threshold_m: 3.0,
        }
    })
}

fn rigid(r: &PathRecord, q: &UnitQuaternion<f64>, t: &Vec3) -> PathRecord {
    let f = |p: &[f64; 3]| <[f64; 3]>::from(q * Vec3::from(*p) + t);
    PathRecord {
        episode_id: r.episode_id.clone(),
        predicted_path: r.predicted_path.iter().map(f).collect(),
        reference_path: r.reference_path.iter().map(f).collect(),
        goal: f(&r.goal),
        success_threshold_m: r.success_threshold_m,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn umeyama_recovers_generating_similarity(
        sim in arb_similarity(),
        pts in prop::collection::vec(arb_vec(10.0), 3..1000),
    ) {
        let dst: Vec<Vec3> = pts.iter().map(|p| sim.apply_point(p)).collect();
        // Skip near-collinear draws; those are rejected by design.
        let c = pts.iter().sum::<Vec3>() / pts.len() as f64;
        let spread = pts.iter().map(|p| (p - c) * (p - c).transpose()).sum::<nalgebra::Matrix3<f64>>();
        let eig = spread.symmetric_eigenvalues();
        prop_assume!(eig.iter().filter(|&&e| e > 1e-3 * eig.max()).count() >= 2);
        let got = umeyama_align(&pts, &dst).unwrap();
        prop_assert!((got.scale - sim.scale).abs() < 1e-8 * sim.scale);
        prop_assert!(got.rotation.angle_to(&sim.rotation) < 1e-8);
        prop_assert!((got.translation - sim.translation).norm() < 1e-7 * (1.0 + sim.translation.norm()));
        prop_assert!(rms_residual(&got, &pts, &dst) < 1e-8 * sim.scale * 10.0);
    }

    #[test]
    fn metrics_are_rigid_invariant_and_spl_bounded(
        records in prop::collection::vec(arb_record(), 1..10),
        q in arb_rotation(),
        t in arb_vec(50.0),
    ) {
        let a = metrics::summarize(&records).unwrap();
        let moved: Vec<PathRecord> = records.iter().map(|r| rigid(r, &q, &t)).collect();
        let b = metrics::summarize(&moved).unwrap();
        prop_assert!(0.0 <= a.spl && a.spl <= a.success_rate + 1e-12);
        prop_assert!((a.spl - b.spl).abs() < 1e-9);
        prop_assert!((a.goal_progress_m - b.goal_progress_m).abs() < 1e-9);
        for (r, m) in records.iter().zip(&moved) {
            let end = Vec3::from(*r.predicted_path.last().unwrap()) - Vec3::from(r.goal);
            if (end.norm() - r.success_threshold_m).abs() > 1e-9 {
                prop_assert_eq!(metrics::success(r), metrics::success(m));
            }
        }
    }

    #[test]
    fn explicit_geometry_invariant_under_rigid_motion(
        cur in arb_vec(20.0), dir in arb_vec(1.0), cand in arb_vec(20.0),
        q in arb_rotation(), t in arb_vec(50.0), s in 0.1f64..10.0,
    ) {
        prop_assume!(dir.norm() > 0.1);
        let a = ViewState::new(cur, dir);
        let b = ViewState::new(cand, dir);
        let (d, h) = explicit_geometry(&a, &b);
        prop_assert!(d >= 0.0 && (0.0..=180.0).contains(&h));
        let sim = SimilarityTransform::new(s, q, t);
        let (d2, h2) = explicit_geometry(&sim.apply_view(&a), &sim.apply_view(&b));
        if d > 1e-2 && d * s > 1e-2 {
            prop_assert!((d2 - s * d).abs() < 1e-9 * (1.0 + s * d));
            prop_assert!((h2 - h).abs() < 1e-6);
        }
    }

    #[test]
    fn dbscan_labels_independent_of_translation(
        pts in prop::collection::vec((0i32..6, 0i32..6), 0..40),
        min_pts in 1usize..5,
        shift in arb_vec(100.0),
    ) {
        let a: Vec<Vec3> = pts.iter().map(|&(x, y)| Vec3::new(x as f64, y as f64, 0.0)).collect();
        let moved: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(shift.x.round(), shift.y.round(), 0.0)).collect();
        let la = dbscan(&a, 1.0, min_pts);
        prop_assert_eq!(&la, &dbscan(&moved, 1.0, min_pts));
        prop_assert!(la.iter().all(|&l| l == NOISE || l >= 0));
    }
}
