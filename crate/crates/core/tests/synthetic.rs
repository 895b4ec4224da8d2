use nalgebra::{DMatrix, Matrix2x3, Matrix3xX};

use smsr::shape::{centering_projector, rearrange_shape};
use smsr::synth::*;
use smsr::{CameraPoseSequence, ShapeSequence, TrackTable};

fn sorted_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

#[test]
fn rigid_scene_has_identical_shapes() {
    let scene = generate_low_rank_scene(&SceneParams { deform_scale: 0.0, ..SceneParams::new(20, 15, 3) }).unwrap();
    let first = scene.shapes.get(0);
    assert!(scene.shapes.shapes().iter().all(|s| s == first));
}

#[test]
fn generation_is_deterministic() {
    let p = SceneParams { seed: 11, ..SceneParams::new(30, 20, 2) };
    let (a, b) = (generate_low_rank_scene(&p).unwrap(), generate_low_rank_scene(&p).unwrap());
    assert_eq!(a.shapes, b.shapes);
    assert_eq!(a.poses, b.poses);
    let c = generate_low_rank_scene(&SceneParams { seed: 12, ..p }).unwrap();
    assert_ne!(a.shapes, c.shapes);
}

#[test]
fn centered_shape_matrix_rank_bounded_by_k() {
    for k in 1..=4 {
        let scene = generate_low_rank_scene(&SceneParams { seed: k as u64, ..SceneParams::new(40, 25, k) }).unwrap();
        let raw = rearrange_shape(&scene.shapes);
        let s = sorted_singular_values(&(centering_projector(40) * &raw));
        let rank = s.iter().filter(|v| **v > 1e-10 * raw.norm()).count();
        assert!(rank <= k, "K={k}: rank {rank}");
    }
}

#[test]
fn rigid_tracks_have_rank_three() {
    let scene = generate_low_rank_scene(&SceneParams { deform_scale: 0.0, ..SceneParams::new(30, 25, 1) }).unwrap();
    let w = orthographic_project(&scene.shapes, &scene.poses).unwrap();
    let s = sorted_singular_values(w.data());
    assert!(s[3] / s[0] <= 1e-10);
}

#[test]
fn poses_are_orthonormal() {
    let scene = generate_low_rank_scene(&SceneParams { max_angle_deg: 80.0, ..SceneParams::new(64, 10, 2) }).unwrap();
    assert!(scene.poses.max_orthonormality_error() <= 1e-12);
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(generate_low_rank_scene(&SceneParams::new(10, 10, 0)).is_err());
    assert!(generate_low_rank_scene(&SceneParams { d_motion: 1, ..SceneParams::new(10, 10, 2) }).is_err());
    assert!(generate_low_rank_scene(&SceneParams { d_motion: 11, ..SceneParams::new(10, 10, 2) }).is_err());
    assert!(generate_low_rank_scene(&SceneParams { deform_scale: -1.0, ..SceneParams::new(10, 10, 2) }).is_err());
}

#[test]
fn canonical_pose_projects_xy_rows() {
    let s = ShapeSequence::new(vec![Matrix3xX::from_fn(4, |r, c| (r * 4 + c * c) as f64)]).unwrap();
    let r = CameraPoseSequence::new(vec![Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)]).unwrap();
    let w = orthographic_project(&s, &r).unwrap();
    for row in 0..2 {
        let src = s.get(0).row(row);
        let mean = src.mean();
        for c in 0..4 {
            assert!((w.data()[(row, c)] - (src[c] - mean)).abs() <= 1e-15);
        }
    }
    let zero = ShapeSequence::new(vec![Matrix3xX::zeros(4)]).unwrap();
    assert!(orthographic_project(&zero, &r).unwrap().data().iter().all(|v| *v == 0.0));
    let two = CameraPoseSequence::new(vec![*r.get(0); 2]).unwrap();
    assert!(orthographic_project(&s, &two).is_err());
}

#[test]
fn noise_statistics_and_determinism() {
    let scene = generate_low_rank_scene(&SceneParams::new(100, 100, 2)).unwrap();
    let w = orthographic_project(&scene.shapes, &scene.poses).unwrap();
    assert_eq!(add_noise(&w, 0.0, 1).unwrap(), w);
    let sigma = 0.05;
    let noisy = add_noise(&w, sigma, 3).unwrap();
    assert_eq!(noisy, add_noise(&w, sigma, 3).unwrap());
    let rms = (w.data().norm_squared() / w.data().len() as f64).sqrt();
    let diff = noisy.data() - w.data();
    let std = (diff.norm_squared() / diff.len() as f64).sqrt();
    assert!((std / (sigma * rms) - 1.0).abs() <= 0.05, "ratio {}", std / (sigma * rms));
    assert!(noisy.is_centered());
    assert!(add_noise(&w, -0.1, 3).is_err());
}

#[test]
fn projection_is_centered() {
    let scene = generate_low_rank_scene(&SceneParams::new(12, 9, 2)).unwrap();
    let w: TrackTable = orthographic_project(&scene.shapes, &scene.poses).unwrap();
    assert!(w.is_centered());
}
