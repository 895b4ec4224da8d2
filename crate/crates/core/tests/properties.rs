use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3xX, Rotation3};
use proptest::prelude::*;

use smsr::io::{parse_poses, parse_shapes, parse_tracks, register_to_centroid, write_poses, write_shapes, write_tracks};
use smsr::linalg::{kron_row, unvec, vec};
use smsr::pose::project_rank3_trace;
use smsr::shape::{centering_projector, svt};
use smsr::trajectory::dct_basis;
use smsr::{CameraPoseSequence, ShapeSequence, TrackTable};

fn matrix(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = DMatrix<f64>> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0..10.0f64, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
    })
}

fn round_trip<T>(value: &T, write: impl Fn(&T, &mut Vec<u8>) -> std::io::Result<()>) -> String {
    let mut buf = Vec::new();
    write(value, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

proptest! {
    #[test]
    fn vec_unvec_round_trip(m in matrix(1..=6, 1..=6)) {
        let v = vec(&m);
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                prop_assert_eq!(v[j * m.nrows() + i], m[(i, j)]);
            }
        }
        prop_assert_eq!(unvec(&v, m.nrows(), m.ncols()).unwrap(), m);
    }

    #[test]
    fn kron_row_evaluates_bilinear_form(p in 1usize..=6, seed in prop::collection::vec(-1.0..1.0f64, 48)) {
        let a: Vec<f64> = seed[..p].to_vec();
        let b: Vec<f64> = seed[6..6 + p].to_vec();
        let f = DMatrix::from_fn(p, p, |i, j| seed[12 + (i * p + j) % 36]);
        let direct = (DVector::from_vec(a.clone()).transpose() * &f * DVector::from_vec(b.clone()))[(0, 0)];
        let via = (kron_row(&a, &b).unwrap() * vec(&f))[(0, 0)];
        prop_assert!((direct - via).abs() <= 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn registration_is_idempotent(m in matrix(1..=4, 1..=8)) {
        let w = TrackTable::new(DMatrix::from_fn(2 * m.nrows(), m.ncols(), |r, c| m[(r / 2, c)] + r as f64)).unwrap();
        let once = register_to_centroid(&w);
        prop_assert!(once.is_centered());
        let twice = register_to_centroid(&once);
        prop_assert!((once.data() - twice.data()).abs().max() <= 1e-12);
    }

    #[test]
    fn tracks_round_trip(m in matrix(1..=4, 1..=8)) {
        let w = TrackTable::new(DMatrix::from_fn(2 * m.nrows(), m.ncols(), |r, c| m[(r / 2, c)] * (r + 1) as f64)).unwrap();
        let text = round_trip(&w, |w, b| write_tracks(w, b));
        prop_assert_eq!(parse_tracks(&text).unwrap(), w);
    }

    #[test]
    fn shapes_round_trip(frames in 1usize..=4, m in matrix(3..=3, 1..=7)) {
        let s = ShapeSequence::new((0..frames).map(|t| Matrix3xX::from_fn(m.ncols(), |r, c| m[(r, c)] - t as f64)).collect()).unwrap();
        let text = round_trip(&s, |s, b| write_shapes(s, b));
        prop_assert_eq!(parse_shapes(&text).unwrap(), s);
    }

    #[test]
    fn poses_round_trip(angles in prop::collection::vec((-3.1..3.1f64, -1.5..1.5f64, -3.1..3.1f64), 1..6)) {
        let blocks: Vec<Matrix2x3<f64>> = angles
            .iter()
            .map(|&(a, b, c)| Rotation3::from_euler_angles(a, b, c).matrix().fixed_rows::<2>(0).into_owned())
            .collect();
        let poses = CameraPoseSequence::new(blocks).unwrap();
        let text = round_trip(&poses, |p, b| write_poses(p, b));
        prop_assert_eq!(parse_poses(&text).unwrap(), poses);
    }

    #[test]
    fn svt_is_nonexpansive(pair in (1usize..=6, 1usize..=6).prop_flat_map(|(r, c)| (matrix(r..=r, c..=c), matrix(r..=r, c..=c))), tau in 0.0..5.0f64) {
        let (a, b) = pair;
        prop_assert!((svt(&a, tau) - svt(&b, tau)).norm() <= (&a - &b).norm() + 1e-9);
    }

    #[test]
    fn gram_projection_is_idempotent(m in matrix(6..=6, 6..=6)) {
        let sym = (&m + m.transpose()) * 0.5;
        let once = project_rank3_trace(&sym);
        prop_assert!((once.trace() - 3.0).abs() <= 1e-9);
        let twice = project_rank3_trace(&once);
        prop_assert!((&once - twice).abs().max() <= 1e-9);
    }

    #[test]
    fn centering_projector_is_idempotent(t in 1usize..=20) {
        let p = centering_projector(t);
        prop_assert!((&p * &p - &p).abs().max() <= 1e-12);
    }

    #[test]
    fn dct_basis_is_orthonormal(t in 1usize..=60, frac in 0.0..1.0f64) {
        let d = 1 + ((t - 1) as f64 * frac) as usize;
        let omega = dct_basis(t, d).unwrap();
        prop_assert_eq!(omega.shape(), (t, d));
        prop_assert!((omega.transpose() * &omega - DMatrix::identity(d, d)).abs().max() <= 1e-12);
    }
}
