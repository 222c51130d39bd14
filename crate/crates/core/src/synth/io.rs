//! Dataset directories: binary PGM images, a CSV of joint annotations and a
//! plain-text manifest.
//!
//! ```text
//! DIR/manifest.txt      # structpose-dataset v1 tree=<name> size=<px>
//!                       images/000000.pgm 0 14     (image, first row, end row)
//! DIR/annotations.csv   sample_id,joint_name,x,y,visible,mixture_type
//! DIR/images/*.pgm      P5, maxval 255
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::render::PoseSample;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::structured::JointTree;

pub const MANIFEST: &str = "manifest.txt";
pub const ANNOTATIONS: &str = "annotations.csv";
const HEADER: &str = "sample_id,joint_name,x,y,visible,mixture_type";
const MAGIC: &str = "# structpose-dataset v1";

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary PGM with maxval 255; returns `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8], name: &str) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Data(format!("{name}: {m}"));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad PGM header"))?);
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM dimensions"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != w * h {
        return Err(bad(&format!("expected {} pixels, found {}", w * h, raster.len())));
    }
    Ok((w, h, raster.to_vec()))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    fsutil::write_atomic(path, &encode_pgm(width, height, pixels))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode_pgm(&fsutil::read(path)?, &path.display().to_string())
}

/// Writes `samples` under `dir`. Coordinates are printed in shortest
/// round-trip form, so reading back yields identical values.
pub fn write_dataset(dir: &Path, tree: &JointTree, size: usize, samples: &[PoseSample]) -> Result<()> {
    let tree_name = tree_id(tree)?;
    fsutil::create_dir_all(&dir.join("images"))?;
    let mut manifest = format!("{MAGIC} tree={tree_name} size={size}\n");
    let mut csv = format!("{HEADER}\n");
    let mut row = 0;
    for (i, s) in samples.iter().enumerate() {
        s.validate(tree.len())?;
        if s.size != size {
            return Err(Error::Data(format!("sample {i} is {}px, dataset is {size}px", s.size)));
        }
        let image = format!("images/{i:06}.pgm");
        write_pgm(&dir.join(&image), size, size, &s.image)?;
        let _ = writeln!(manifest, "{image} {row} {}", row + tree.len());
        for j in 0..tree.len() {
            let [x, y] = s.joints[j];
            let _ = writeln!(csv, "{i},{},{x:?},{y:?},{},{}", tree.name(j), s.visible[j] as u8, s.mixture[j]);
        }
        row += tree.len();
    }
    fsutil::write_atomic(&dir.join(ANNOTATIONS), csv.as_bytes())?;
    fsutil::write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

/// Name under which [`JointTree::by_name`] rebuilds `tree`.
fn tree_id(tree: &JointTree) -> Result<String> {
    for name in ["desk14", "desk26", "chain2", "chain3"] {
        if JointTree::by_name(name)? == *tree {
            return Ok(name.into());
        }
    }
    Err(Error::Config("only built-in trees can be written to a dataset".into()))
}

/// A dataset as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub tree: String,
    pub size: usize,
    pub samples: Vec<PoseSample>,
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    let manifest = fsutil::read_to_string(&manifest_path)?;
    let bad = |line: usize, m: String| Error::Data(format!("{}:{}: {m}", manifest_path.display(), line + 1));
    let mut lines = manifest.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(0, "empty manifest".into()))?;
    let rest = header.strip_prefix(MAGIC).ok_or_else(|| bad(0, "missing dataset header".into()))?;
    let (mut tree_name, mut size) = (None, None);
    for kv in rest.split_whitespace() {
        match kv.split_once('=') {
            Some(("tree", v)) => tree_name = Some(v.to_string()),
            Some(("size", v)) => size = v.parse::<usize>().ok(),
            _ => return Err(bad(0, format!("unknown header field {kv:?}"))),
        }
    }
    let (Some(tree_name), Some(size)) = (tree_name, size) else {
        return Err(bad(0, "header needs tree= and size=".into()));
    };
    let tree = JointTree::by_name(&tree_name)?;
    let k = tree.len();

    let csv_path = dir.join(ANNOTATIONS);
    let csv = fsutil::read_to_string(&csv_path)?;
    let mut csv_lines = csv.lines();
    if csv_lines.next() != Some(HEADER) {
        return Err(Error::Data(format!("{}: expected header {HEADER:?}", csv_path.display())));
    }
    let rows: Vec<&str> = csv_lines.collect();

    let mut samples = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [image, start, end] = parts[..] else {
            return Err(bad(ln, format!("expected `image start end`, got {line:?}")));
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(ln, format!("bad row index {s:?}")));
        let (start, end) = (parse(start)?, parse(end)?);
        if end < start || end > rows.len() {
            return Err(bad(ln, format!("row range {start}..{end} outside {} annotation rows", rows.len())));
        }
        if end - start != k {
            return Err(bad(ln, format!("{} coordinate rows for a {k}-joint tree", end - start)));
        }
        let id = samples.len();
        let (w, h, pixels) = read_pgm(&dir.join(image))?;
        if w != size || h != size {
            return Err(bad(ln, format!("{image} is {w}x{h}, dataset is {size}px")));
        }
        let mut s = PoseSample {
            size,
            image: pixels,
            joints: vec![[0.0; 2]; k],
            visible: vec![false; k],
            mixture: vec![0; k],
        };
        for (j, row) in rows[start..end].iter().enumerate() {
            let row_err = |m: &str| Error::Data(format!("{} row {}: {m}", csv_path.display(), start + j + 2));
            let f: Vec<&str> = row.split(',').collect();
            if f.len() != 6 {
                return Err(row_err("expected 6 fields"));
            }
            if f[0].parse::<usize>().ok() != Some(id) {
                return Err(row_err(&format!("sample_id {} does not match manifest entry {id}", f[0])));
            }
            if f[1] != tree.name(j) {
                return Err(row_err(&format!("joint {} where {} was expected", f[1], tree.name(j))));
            }
            let num = |v: &str| v.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| row_err("bad coordinate"));
            s.joints[j] = [num(f[2])?, num(f[3])?];
            s.visible[j] = match f[4] {
                "1" => true,
                "0" => false,
                _ => return Err(row_err("visible must be 0 or 1")),
            };
            s.mixture[j] = f[5].parse().map_err(|_| row_err("bad mixture_type"))?;
        }
        samples.push(s);
    }
    Ok(Dataset { tree: tree_name, size, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SkeletonSpec};

    #[test]
    fn pgm_round_trip_and_comments() {
        let px: Vec<u8> = (0..12).map(|v| v * 20).collect();
        assert_eq!(decode_pgm(&encode_pgm(4, 3, &px), "t").unwrap(), (4, 3, px.clone()));
        let mut with_comment = b"P5\n# made by hand\n4 3\n255\n".to_vec();
        with_comment.extend_from_slice(&px);
        assert_eq!(decode_pgm(&with_comment, "t").unwrap().2, px);
        assert!(decode_pgm(b"P2\n1 1\n255\n0", "t").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x01", "t").is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SkeletonSpec::preset("desk14", 64).unwrap();
        let mut samples = generate(&spec, 4, 11).unwrap();
        samples[1].visible[2] = false;
        samples[2].mixture[5] = 7;
        samples[3].joints[0] = [0.1 + 0.2, 1.0 / 3.0];
        let tree = JointTree::desk14();
        write_dataset(dir.path(), &tree, 64, &samples).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.tree, "desk14");
        assert_eq!(back.samples, samples);
    }

    #[test]
    fn empty_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &JointTree::chain(3).unwrap(), 16, &[]).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert!(back.samples.is_empty());
        assert_eq!(back.size, 16);
    }

    #[test]
    fn missing_image_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SkeletonSpec::preset("desk14", 64).unwrap();
        write_dataset(dir.path(), &JointTree::desk14(), 64, &generate(&spec, 2, 0).unwrap()).unwrap();
        std::fs::remove_file(dir.path().join("images/000001.pgm")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
        assert!(err.to_string().contains("000001.pgm"), "{err}");
    }

    #[test]
    fn wrong_coordinate_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SkeletonSpec::preset("desk14", 64).unwrap();
        write_dataset(dir.path(), &JointTree::desk14(), 64, &generate(&spec, 1, 0).unwrap()).unwrap();
        let m = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&m).unwrap().replace(" 0 14", " 0 13");
        std::fs::write(&m, text).unwrap();
        assert!(read_dataset(dir.path()).unwrap_err().to_string().contains("13 coordinate rows"));
    }
}
