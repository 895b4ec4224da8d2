use std::fs::File;
use std::io::BufReader;

use nalgebra::{DMatrix, Matrix3xX};
use ply_rs::parser::Parser;
use ply_rs::ply::{DefaultElement, Property};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smsr::io::*;
use smsr::{Error, ShapeSequence, TrackTable};

fn random_tracks(rng: &mut ChaCha8Rng, t: usize, n: usize) -> TrackTable {
    TrackTable::new(DMatrix::from_fn(2 * t, n, |_, _| rng.random_range(-1e3..1e3) * rng.random::<f64>().powi(7))).unwrap()
}

fn random_shapes(rng: &mut ChaCha8Rng, t: usize, n: usize) -> ShapeSequence {
    ShapeSequence::new((0..t).map(|_| Matrix3xX::from_fn(n, |_, _| rng.random_range(-1.0..1.0) / 3.0)).collect()).unwrap()
}

#[test]
fn minimal_tracks_file() {
    let w = parse_tracks("NRSFM-TRACKS v1 1 2\n0 1\n0 0\n").unwrap();
    assert_eq!((w.frames(), w.points()), (1, 2));
    assert_eq!(w.data(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
    assert!(!w.is_centered());
}

#[test]
fn short_row_names_its_line() {
    match parse_tracks("NRSFM-TRACKS v1 1 3\n1 2 3\n4 5\n") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn tracks_round_trip_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dir = tempfile::tempdir().unwrap();
    for (t, n) in [(1, 1), (4, 7), (13, 5)] {
        let w = random_tracks(&mut rng, t, n);
        let path = dir.path().join("w.txt");
        save_tracks(&w, &path).unwrap();
        assert_eq!(load_tracks(&path).unwrap().data(), w.data());
    }
}

#[test]
fn shapes_minimal_and_round_trip() {
    let s = parse_shapes("NRSFM-SHAPES v1 1 1\n1\n2\n3\n").unwrap();
    assert_eq!(s.get(0), &Matrix3xX::from_column_slice(&[1.0, 2.0, 3.0]));
    assert!(parse_shapes("NRSFM-SHAPES v1 2 1\n1\n2\n3\n").is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dir = tempfile::tempdir().unwrap();
    let s = random_shapes(&mut rng, 6, 9);
    let path = dir.path().join("s.txt");
    save_shapes(&s, &path).unwrap();
    assert_eq!(load_shapes(&path).unwrap(), s);
}

#[test]
fn missing_file_names_path() {
    let err = load_tracks("/definitely/not/here.txt").unwrap_err();
    assert!(err.to_string().contains("/definitely/not/here.txt"));
}

#[test]
fn registration() {
    let w = TrackTable::new(DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0])).unwrap();
    let r = register_to_centroid(&w);
    assert_eq!(r.data(), &DMatrix::from_row_slice(2, 3, &[-1.0, 0.0, 1.0, 0.0, 0.0, 0.0]));
    assert!(r.is_centered());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = random_tracks(&mut rng, 8, 11);
    let r = register_to_centroid(&w);
    for (row, orig) in r.data().row_iter().zip(w.data().row_iter()) {
        assert!(row.sum().abs() <= 1e-9 * 11.0 * (1.0 + orig.amax()));
        assert!(row.norm() <= orig.norm() * (1.0 + 1e-15));
    }
    let again = register_to_centroid(&r);
    assert!((again.data() - r.data()).abs().max() <= 1e-15 * (1.0 + r.data().amax()));
}

fn read_ply(path: &std::path::Path) -> Vec<[f64; 3]> {
    let mut reader = BufReader::new(File::open(path).unwrap());
    let ply = Parser::<DefaultElement>::new().read_ply(&mut reader).unwrap();
    ply.payload["vertex"]
        .iter()
        .map(|v| {
            let get = |k: &str| match v[k] {
                Property::Double(x) => x,
                ref other => panic!("unexpected property {other:?}"),
            };
            [get("x"), get("y"), get("z")]
        })
        .collect()
}

#[test]
fn ply_export_reparses() {
    let dir = tempfile::tempdir().unwrap();
    let single = ShapeSequence::new(vec![Matrix3xX::from_column_slice(&[0.5, -1.0, 2.0])]).unwrap();
    let paths = export_ply(&single, dir.path().join("one")).unwrap();
    let text = std::fs::read_to_string(&paths[0]).unwrap();
    assert!(text.contains("element vertex 1\n"));
    assert_eq!(read_ply(&paths[0]), vec![[0.5, -1.0, 2.0]]);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = random_shapes(&mut rng, 3, 25);
    let paths = export_ply(&s, dir.path().join("many")).unwrap();
    assert_eq!(paths.len(), 3);
    assert!(paths[2].ends_with("frame_0002.ply"));
    for (t, path) in paths.iter().enumerate() {
        for (j, p) in read_ply(path).iter().enumerate() {
            for (axis, v) in p.iter().enumerate() {
                assert!((v - s.get(t)[(axis, j)]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn oversized_headers_fail_without_allocating() {
    let big = format!("NRSFM-TRACKS v1 {} 1\n1\n", 1usize << 27);
    assert!(matches!(smsr::io::parse_tracks(&big), Err(smsr::Error::Parse { .. })));
    let big = format!("NRSFM-SHAPES v1 {} 2\n1 2\n", 1usize << 27);
    assert!(matches!(smsr::io::parse_shapes(&big), Err(smsr::Error::Parse { .. })));
    let big = format!("NRSFM-POSES v1 {}\n1 0 0\n", 1usize << 28);
    assert!(matches!(smsr::io::parse_poses(&big), Err(smsr::Error::Parse { .. })));
    assert!(smsr::io::parse_tracks(&format!("NRSFM-TRACKS v1 {} 2\n", usize::MAX)).is_err());
}
