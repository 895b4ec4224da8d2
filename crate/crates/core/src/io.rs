//! Text formats for tracks, shapes and poses, centroid registration, and
//! PLY export.
//!
//! All numeric formats are line oriented: a versioned header line followed
//! by whitespace-separated decimals. Blank lines and lines starting with `#`
//! are ignored anywhere in the file. Values are written with 17 significant
//! digits so that a save/load cycle reproduces every `f64` exactly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix2x3, Matrix3xX};

use crate::error::{Error, Result};
use crate::model::{CameraPoseSequence, ShapeSequence, TrackTable};

pub const TRACKS_MAGIC: &str = "NRSFM-TRACKS";
pub const SHAPES_MAGIC: &str = "NRSFM-SHAPES";
pub const POSES_MAGIC: &str = "NRSFM-POSES";
pub const FORMAT_VERSION: &str = "v1";

/// Upper bound on declared element counts.
const MAX_DECLARED_VALUES: usize = 1 << 28;

struct DataLines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> DataLines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
        }
    }
}

impl<'a> Iterator for DataLines<'a> {
    /// 1-based line number and the trimmed line content.
    type Item = (usize, &'a str);

    fn next(&mut self) -> Option<Self::Item> {
        for (idx, line) in self.inner.by_ref() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Some((idx + 1, trimmed));
        }
        None
    }
}

fn parse_header(lines: &mut DataLines<'_>, magic: &str, counts: usize) -> Result<Vec<usize>> {
    let Some((line_no, line)) = lines.next() else {
        return Err(Error::parse(1, format!("missing `{magic}` header")));
    };
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(magic) {
        return Err(Error::parse(line_no, format!("expected `{magic}` header")));
    }
    match tokens.next() {
        Some(FORMAT_VERSION) => {}
        Some(other) => {
            return Err(Error::parse(line_no, format!("unsupported version `{other}`")));
        }
        None => return Err(Error::parse(line_no, "missing format version")),
    }
    let mut out = Vec::with_capacity(counts);
    for _ in 0..counts {
        let tok = tokens
            .next()
            .ok_or_else(|| Error::parse(line_no, "header is missing a count"))?;
        let value: usize = tok
            .parse()
            .map_err(|_| Error::parse(line_no, format!("invalid count `{tok}`")))?;
        if value == 0 {
            return Err(Error::parse(line_no, "counts must be positive"));
        }
        out.push(value);
    }
    if let Some(extra) = tokens.next() {
        return Err(Error::parse(line_no, format!("unexpected header token `{extra}`")));
    }
    let within_limit = out
        .iter()
        .try_fold(1usize, |acc, &v| acc.checked_mul(v))
        .is_some_and(|total| total <= MAX_DECLARED_VALUES);
    if !within_limit {
        return Err(Error::parse(line_no, "declared size is too large"));
    }
    Ok(out)
}

/// Appends exactly `expected` values from the next data line to `dest`.
fn parse_row(lines: &mut DataLines<'_>, expected: usize, what: &str, dest: &mut Vec<f64>) -> Result<()> {
    let Some((line_no, line)) = lines.next() else {
        // Line number is filled in by `fix_eof_line`.
        return Err(Error::parse(usize::MAX, format!("unexpected end of file, expected {what}")));
    };
    let mut count = 0;
    for tok in line.split_whitespace() {
        if count == expected {
            return Err(Error::parse(
                line_no,
                format!("{what}: more than {expected} values"),
            ));
        }
        let value: f64 = tok
            .parse()
            .map_err(|_| Error::parse(line_no, format!("{what}: invalid number `{tok}`")))?;
        if !value.is_finite() {
            return Err(Error::parse(line_no, format!("{what}: non-finite value `{tok}`")));
        }
        dest.push(value);
        count += 1;
    }
    if count != expected {
        return Err(Error::parse(
            line_no,
            format!("{what}: expected {expected} values, found {count}"),
        ));
    }
    Ok(())
}

fn expect_end(lines: &mut DataLines<'_>) -> Result<()> {
    match lines.next() {
        None => Ok(()),
        Some((line_no, _)) => Err(Error::parse(line_no, "unexpected data after the last row")),
    }
}

fn fix_eof_line(text: &str, err: Error) -> Error {
    match err {
        Error::Parse { line: usize::MAX, msg } => Error::Parse {
            line: text.lines().count() + 1,
            msg,
        },
        other => other,
    }
}

/// Parses an `NRSFM-TRACKS v1` document. The result is not registered.
pub fn parse_tracks(text: &str) -> Result<TrackTable> {
    parse_tracks_inner(text).map_err(|e| fix_eof_line(text, e))
}

fn parse_tracks_inner(text: &str) -> Result<TrackTable> {
    let mut lines = DataLines::new(text);
    let dims = parse_header(&mut lines, TRACKS_MAGIC, 2)?;
    let (t, n) = (dims[0], dims[1]);
    let rows = 2 * t;
    let mut row_major = Vec::new();
    for r in 0..rows {
        let axis = if r % 2 == 0 { 'x' } else { 'y' };
        let what = format!("frame {} {axis}-row", r / 2 + 1);
        parse_row(&mut lines, n, &what, &mut row_major)?;
    }
    expect_end(&mut lines)?;
    TrackTable::new(DMatrix::from_row_slice(rows, n, &row_major))
}

pub fn write_tracks<W: Write>(tracks: &TrackTable, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "{TRACKS_MAGIC} {FORMAT_VERSION} {} {}",
        tracks.frames(),
        tracks.points()
    )?;
    for row in tracks.data().row_iter() {
        write_values(&mut out, row.iter())?;
    }
    out.flush()
}

pub fn load_tracks(path: impl AsRef<Path>) -> Result<TrackTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tracks(&text)
}

pub fn save_tracks(tracks: &TrackTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_tracks(tracks, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Parses an `NRSFM-SHAPES v1` document.
pub fn parse_shapes(text: &str) -> Result<ShapeSequence> {
    parse_shapes_inner(text).map_err(|e| fix_eof_line(text, e))
}

fn parse_shapes_inner(text: &str) -> Result<ShapeSequence> {
    let mut lines = DataLines::new(text);
    let dims = parse_header(&mut lines, SHAPES_MAGIC, 2)?;
    let (t, n) = (dims[0], dims[1]);
    let mut values = Vec::new();
    for frame in 0..t {
        for axis in ['X', 'Y', 'Z'] {
            let what = format!("frame {} {axis}-row", frame + 1);
            parse_row(&mut lines, n, &what, &mut values)?;
        }
    }
    expect_end(&mut lines)?;
    ShapeSequence::new(
        values
            .chunks_exact(3 * n)
            .map(Matrix3xX::from_row_slice)
            .collect(),
    )
}

pub fn write_shapes<W: Write>(shapes: &ShapeSequence, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "{SHAPES_MAGIC} {FORMAT_VERSION} {} {}",
        shapes.frames(),
        shapes.points()
    )?;
    for s in shapes.shapes() {
        for row in s.row_iter() {
            write_values(&mut out, row.iter())?;
        }
    }
    out.flush()
}

pub fn load_shapes(path: impl AsRef<Path>) -> Result<ShapeSequence> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_shapes(&text)
}

pub fn save_shapes(shapes: &ShapeSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_shapes(shapes, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Parses an `NRSFM-POSES v1 <T>` document: two lines of three values per
/// frame. Rows are re-checked for orthonormality.
pub fn parse_poses(text: &str) -> Result<CameraPoseSequence> {
    parse_poses_inner(text).map_err(|e| fix_eof_line(text, e))
}

fn parse_poses_inner(text: &str) -> Result<CameraPoseSequence> {
    let mut lines = DataLines::new(text);
    let dims = parse_header(&mut lines, POSES_MAGIC, 1)?;
    let mut values = Vec::new();
    for frame in 0..dims[0] {
        for i in 0..2 {
            parse_row(&mut lines, 3, &format!("pose {} row {}", frame + 1, i + 1), &mut values)?;
        }
    }
    expect_end(&mut lines)?;
    CameraPoseSequence::new(values.chunks_exact(6).map(Matrix2x3::from_row_slice).collect())
}

pub fn write_poses<W: Write>(poses: &CameraPoseSequence, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{POSES_MAGIC} {FORMAT_VERSION} {}", poses.frames())?;
    for r in poses.blocks() {
        for row in r.row_iter() {
            write_values(&mut out, row.iter())?;
        }
    }
    out.flush()
}

pub fn load_poses(path: impl AsRef<Path>) -> Result<CameraPoseSequence> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text)
}

pub fn save_poses(poses: &CameraPoseSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_poses(poses, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

fn write_values<'a, W: Write>(out: &mut W, values: impl Iterator<Item = &'a f64>) -> std::io::Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            out.write_all(b" ")?;
        }
        write!(out, "{v:.16e}")?;
        first = false;
    }
    out.write_all(b"\n")
}

/// Translates each row of the measurement matrix by its own mean.
pub fn register_to_centroid(tracks: &TrackTable) -> TrackTable {
    let mut data = tracks.data().clone();
    for mut row in data.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    TrackTable::with_centered(data, true).expect("registration preserves shape and finiteness")
}

/// Writes one ASCII PLY point cloud per frame (`frame_0000.ply`, ...) into
/// `dir`, creating it if necessary. Returns the written paths in frame order.
pub fn export_ply(shapes: &ShapeSequence, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(shapes.frames());
    for (t, s) in shapes.shapes().iter().enumerate() {
        let path = dir.join(format!("frame_{t:04}.ply"));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_ply(s, BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_ply<W: Write>(shape: &Matrix3xX<f64>, mut out: W) -> std::io::Result<()> {
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", shape.ncols())?;
    writeln!(out, "property double x")?;
    writeln!(out, "property double y")?;
    writeln!(out, "property double z")?;
    writeln!(out, "end_header")?;
    for p in shape.column_iter() {
        writeln!(out, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2])?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_tracks_file() {
        let t = parse_tracks("NRSFM-TRACKS v1 1 2\n0 1\n0 0\n").unwrap();
        assert_eq!((t.frames(), t.points()), (1, 2));
        assert_eq!(t.data(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert!(!t.is_centered());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# produced by hand\n\nNRSFM-TRACKS v1 1 2\n# x\n0 1\n\n0 0\n# trailing\n";
        assert!(parse_tracks(text).is_ok());
    }

    #[test]
    fn short_row_reports_its_line() {
        let err = parse_tracks("NRSFM-TRACKS v1 1 3\n0 1 2\n0 0\n").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("expected 3 values, found 2"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        for text in [
            "",
            "NRSFM-SHAPES v1 1 1\n1\n2\n3\n",
            "NRSFM-TRACKS v2 1 1\n0\n0\n",
            "NRSFM-TRACKS v1 1\n0\n0\n",
            "NRSFM-TRACKS v1 0 1\n",
            "NRSFM-TRACKS v1 1 1 7\n0\n0\n",
            "NRSFM-TRACKS v1 1 1\n0\n",
            "NRSFM-TRACKS v1 1 1\n0\n0\n0\n",
            "NRSFM-TRACKS v1 1 1\nnan\n0\n",
            "NRSFM-TRACKS v1 1 1\ninf\n0\n",
            "NRSFM-TRACKS v1 1 1\n0x1\n0\n",
            "NRSFM-TRACKS v1 99999999999 99999999999\n",
        ] {
            assert!(parse_tracks(text).is_err(), "accepted {text:?}");
        }
    }

    #[test]
    fn truncated_file_reports_line_past_end() {
        let err = parse_tracks("NRSFM-TRACKS v1 1 1\n0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn minimal_shapes_file() {
        let s = parse_shapes("NRSFM-SHAPES v1 1 1\n1\n2\n3\n").unwrap();
        assert_eq!(s.get(0).as_slice(), &[1.0, 2.0, 3.0]);
        assert!(parse_shapes("NRSFM-SHAPES v1 1 2\n1\n2\n3\n").is_err());
    }

    #[test]
    fn poses_parse_and_validate() {
        let p = parse_poses("NRSFM-POSES v1 1\n1 0 0\n0 1 0\n").unwrap();
        assert_eq!(p.frames(), 1);
        assert!(parse_poses("NRSFM-POSES v1 1\n1 0 0\n0 2 0\n").is_err());
    }

    #[test]
    fn registration_removes_row_means() {
        let t = TrackTable::new(DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0])).unwrap();
        let c = register_to_centroid(&t);
        assert!(c.is_centered());
        assert_eq!(c.data().row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(c.data().row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0]);
        let again = register_to_centroid(&c);
        assert!((again.data() - c.data()).abs().max() <= 1e-15);
    }

    #[test]
    fn ply_header_and_single_vertex() {
        let s = Matrix3xX::from_column_slice(&[1.0, 2.0, 3.0]);
        let mut buf = Vec::new();
        write_ply(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("element vertex 1\n"));
        let body: Vec<&str> = text.split("end_header\n").nth(1).unwrap().lines().collect();
        assert_eq!(body.len(), 1);
    }
}
