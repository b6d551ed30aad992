use graspsplat_core::contact::instantaneous_contact;
use graspsplat_core::gaussian::{concat, covariance, Gaussian, GaussianCloud};
use graspsplat_core::image::Mask;
use graspsplat_core::kinematics::{default_hand, forward_kinematics, joint_positions, Pose};
use graspsplat_core::metrics::{f1, iou};
use graspsplat_core::pose_fit::{OneEuroFilter, OneEuroParams};
use graspsplat_core::raster::render;
use graspsplat_core::synthetic::random_splat_scene;
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-0.02f64..0.02)
}

fn cloud(points: &[[f64; 3]]) -> GaussianCloud {
    let items: Vec<Gaussian> = points.iter().map(|p| Gaussian::isotropic(*p, 1e-3, 0.5, [0.5; 3])).collect();
    GaussianCloud::from_gaussians(0, &items).unwrap()
}

fn mask() -> impl Strategy<Value = (usize, usize, Vec<bool>, Vec<bool>)> {
    (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
        (Just(w), Just(h), prop::collection::vec(any::<bool>(), w * h), prop::collection::vec(any::<bool>(), w * h))
    })
}

proptest! {
    #[test]
    fn covariance_is_symmetric_positive_definite(
        q in prop::array::uniform4(-1.0f64..1.0).prop_filter("non-zero", |q| q.iter().map(|v| v * v).sum::<f64>() > 1e-3),
        s in prop::array::uniform3(-4.0f64..0.0),
    ) {
        let c = covariance(q, s);
        prop_assert!((c - c.transpose()).abs().max() < 1e-15);
        let eig = c.symmetric_eigen().eigenvalues;
        prop_assert!(eig.iter().all(|e| *e > 0.0));
        let mut want: Vec<f64> = s.iter().map(|l| (2.0 * l).exp()).collect();
        let mut got: Vec<f64> = eig.iter().copied().collect();
        want.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        for (a, b) in want.iter().zip(&got) {
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
        }
    }

    #[test]
    fn contact_is_symmetric_under_swapping_clouds(
        a in prop::collection::vec(point(), 1..60),
        b in prop::collection::vec(point(), 1..60),
    ) {
        let (ca, cb) = (cloud(&a), cloud(&b));
        let ab = instantaneous_contact(&ca, &cb, 0.004).unwrap();
        let ba = instantaneous_contact(&cb, &ca, 0.004).unwrap();
        prop_assert_eq!(&ab.hand_flags, &ba.object_flags);
        prop_assert_eq!(&ab.hand_values, &ba.object_values);
        prop_assert_eq!(ab.hand_contacts() > 0, ab.object_contacts() > 0);
        prop_assert!(ab.hand_values.iter().all(|d| *d < 0.004));
    }

    #[test]
    fn concat_keeps_both_parts(a in prop::collection::vec(point(), 0..20), b in prop::collection::vec(point(), 0..20)) {
        let joined = concat(&cloud(&a), &cloud(&b)).unwrap();
        prop_assert_eq!(joined.boundary, a.len());
        prop_assert_eq!(joined.cloud.len(), a.len() + b.len());
        for (i, p) in a.iter().chain(&b).enumerate() {
            prop_assert_eq!(joined.cloud.positions[i], *p);
        }
    }

    #[test]
    fn mask_scores_are_bounded_and_related((w, h, a, b) in mask()) {
        let ma = Mask::from_fn(w, h, |x, y| a[y * w + x]);
        let mb = Mask::from_fn(w, h, |x, y| b[y * w + x]);
        let (i, f) = (iou(&ma, &mb).unwrap(), f1(&ma, &mb).unwrap());
        prop_assert!((0.0..=1.0).contains(&i) && (0.0..=1.0).contains(&f));
        prop_assert!(f >= i);
        prop_assert!((f - 2.0 * i / (1.0 + i)).abs() < 1e-12);
        prop_assert_eq!(i, iou(&mb, &ma).unwrap());
    }

    #[test]
    fn rigid_motion_of_the_root_moves_every_joint_rigidly(
        axis in prop::array::uniform3(-1.0f64..1.0),
        t in prop::array::uniform3(-0.5f64..0.5),
    ) {
        let skel = default_hand();
        let rest = joint_positions(&skel, &forward_kinematics(&skel, &Pose::rest(&skel)).unwrap()).unwrap();
        let mut pose = Pose::rest(&skel);
        pose.global_rotation = UnitQuaternion::from_scaled_axis(Vector3::from(axis));
        pose.global_translation = Vector3::from(t);
        let moved = joint_positions(&skel, &forward_kinematics(&skel, &pose).unwrap()).unwrap();
        for (p, q) in rest.iter().zip(&moved) {
            let expect = pose.global_rotation * p + pose.global_translation;
            prop_assert!((expect - q).norm() < 1e-12);
        }
    }

    #[test]
    fn rendered_values_stay_in_range(seed in 0u64..500, count in 0usize..12, degree in 0u8..4) {
        let s = random_splat_scene(seed, count, degree, false, 16, 12);
        let out = render(&s.cloud, &[], &s.camera, [0.5, 0.1, 0.9]).unwrap();
        prop_assert!(out.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(out.alpha.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn one_euro_output_stays_within_input_range(samples in prop::collection::vec(-5.0f64..5.0, 2..100)) {
        let mut f = OneEuroFilter::new(OneEuroParams::default()).unwrap();
        let (lo, hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        for (i, v) in samples.iter().enumerate() {
            let y = f.filter(&[*v], i as f64 / 60.0).unwrap()[0];
            prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
        }
    }
}
