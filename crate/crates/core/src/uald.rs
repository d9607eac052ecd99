//! `.uald` tensor files and the on-disk dataset layout.
//!
//! A `.uald` file is: magic `UALD`, little-endian `u32` rank, `rank` little-endian
//! `u32` dims, then `product(dims)` little-endian `f32` values in row-major order.
//!
//! A dataset is a directory of sample directories, each holding
//! `{t1,t2,dwi,ce_a,ce_pv,ce_d,mask}.uald` and a `meta.json` with either
//! `{"cls":c,"cx":x,"cy":y,"side":s}` or `{"cls":0,"box":null}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{Result, UalError};
use crate::grid::{BoxTuple, Grid};
use crate::phantom::Sample;

pub const MAGIC: &[u8; 4] = b"UALD";
pub const META_FILE: &str = "meta.json";

/// Serialize dims and values into `.uald` bytes.
pub fn encode(dims: &[usize], values: &[f64]) -> Vec<u8> {
    debug_assert_eq!(dims.iter().product::<usize>(), values.len());
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Parse `.uald` bytes; `file` only labels errors.
pub fn decode(bytes: &[u8], file: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    if bytes.len() < 8 {
        return Err(UalError::format(file, format!("header needs 8 bytes, file has {}", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(UalError::format(
            file,
            format!("bad magic {:?}, expected \"UALD\"", String::from_utf8_lossy(&bytes[..4])),
        ));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let rank = word(4);
    let header = 8 + 4 * rank;
    if bytes.len() < header {
        return Err(UalError::format(file, format!("rank {rank} header truncated")));
    }
    let dims: Vec<usize> = (0..rank).map(|k| word(8 + 4 * k)).collect();
    let expected = dims.iter().product::<usize>();
    let payload = &bytes[header..];
    if payload.len() != 4 * expected {
        return Err(UalError::format(
            file,
            format!(
                "payload holds {} bytes ({} values), expected {expected} values for dims {dims:?}",
                payload.len(),
                payload.len() / 4
            ),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((dims, values))
}

pub fn write_grid(grid: &Grid, path: &Path) -> Result<()> {
    let bytes = encode(&[grid.height, grid.width], &grid.data);
    fs::write(path, bytes).map_err(|e| UalError::io(path, e))
}

pub fn read_grid(path: &Path) -> Result<Grid> {
    let bytes = fs::read(path).map_err(|e| UalError::io(path, e))?;
    let (dims, values) = decode(&bytes, path)?;
    if dims.len() != 2 {
        return Err(UalError::format(path, format!("expected a rank-2 plane, found rank {}", dims.len())));
    }
    Grid::from_vec(dims[0], dims[1], values).map_err(|e| UalError::format(path, e.to_string()))
}

/// Write one sample's planes and metadata into `dir` (created if missing).
pub fn write_sample(sample: &Sample, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| UalError::io(dir, e))?;
    for (name, grid) in sample.planes() {
        write_grid(grid, &dir.join(format!("{name}.uald")))?;
    }
    let meta = match sample.bbox {
        Some(b) => json!({"cls": sample.cls, "cx": b.cx, "cy": b.cy, "side": b.side}),
        None => json!({"cls": sample.cls, "box": Value::Null}),
    };
    let path = dir.join(META_FILE);
    let mut f = fs::File::create(&path).map_err(|e| UalError::io(&path, e))?;
    writeln!(f, "{meta}").map_err(|e| UalError::io(&path, e))
}

/// Read a sample directory written by [`write_sample`]; the sample id is the directory name.
pub fn read_sample(dir: &Path) -> Result<Sample> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| UalError::io(&meta_path, e))?;
    let meta: Value = serde_json::from_str(&text).map_err(|e| UalError::format(&meta_path, e.to_string()))?;
    let cls = meta
        .get("cls")
        .and_then(Value::as_u64)
        .filter(|&c| c <= 2)
        .ok_or_else(|| UalError::format(&meta_path, "missing or invalid \"cls\""))? as u8;
    let num = |key: &str| {
        meta.get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| UalError::format(&meta_path, format!("missing numeric \"{key}\"")))
    };
    let bbox = if meta.get("box").is_some_and(Value::is_null) {
        None
    } else {
        let b = BoxTuple::new(num("cx")?, num("cy")?, num("side")?)
            .map_err(|e| UalError::format(&meta_path, e.to_string()))?;
        Some(b)
    };

    let plane = |name: &str| read_grid(&dir.join(format!("{name}.uald")));
    let sample = Sample {
        t1: plane("t1")?,
        t2: plane("t2")?,
        dwi: plane("dwi")?,
        cemri_arterial: plane("ce_a")?,
        cemri_pv: plane("ce_pv")?,
        cemri_delay: plane("ce_d")?,
        mask: plane("mask")?,
        bbox,
        cls,
        sample_id: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let shape = sample.shape();
    for (name, g) in sample.planes() {
        if g.shape() != shape {
            return Err(UalError::format(
                dir.join(format!("{name}.uald")),
                format!("shape {:?} does not match t1 shape {shape:?}", g.shape()),
            ));
        }
    }
    sample.validate().map_err(|e| UalError::format(dir, e.to_string()))?;
    Ok(sample)
}

/// Write every sample under `root/<sample_id>/`.
pub fn write_dataset(samples: &[Sample], root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| UalError::io(root, e))?;
    for s in samples {
        write_sample(s, &root.join(&s.sample_id))?;
    }
    Ok(())
}

/// Sample directories under `root` in lexicographic order.
pub fn list_dataset(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| UalError::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| UalError::io(root, e))?;
        let path = entry.path();
        if path.is_dir() && path.join(META_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn read_dataset(root: &Path) -> Result<Vec<Sample>> {
    list_dataset(root)?.iter().map(|d| read_sample(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_corpus, ClassMix, CorpusSpec};

    #[test]
    fn header_layout_is_exact() {
        let bytes = encode(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.5]);
        assert_eq!(&bytes[..4], b"UALD");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[36..40], &5.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 24);
    }

    #[test]
    fn sample_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_corpus(&CorpusSpec::new(9, 3, 32, 32, ClassMix([0.34, 0.33, 0.33]))).unwrap();
        for s in &corpus {
            let d = dir.path().join(&s.sample_id);
            write_sample(s, &d).unwrap();
            assert_eq!(&read_sample(&d).unwrap(), s);
        }
        write_dataset(&corpus, &dir.path().join("set")).unwrap();
        assert_eq!(read_dataset(&dir.path().join("set")).unwrap(), corpus);
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let mut bytes = encode(&[1, 1], &[0.5]);
        bytes[..4].copy_from_slice(b"NOPE");
        let err = decode(&bytes, Path::new("x.uald")).unwrap_err();
        assert!(matches!(err, UalError::Format { .. }));
        assert!(err.to_string().contains("x.uald"));
    }

    #[test]
    fn truncated_payload_reports_counts() {
        let mut bytes = encode(&[4, 4], &[0.25; 16]);
        bytes.truncate(bytes.len() - 8);
        let err = decode(&bytes, Path::new("t1.uald")).unwrap_err().to_string();
        assert!(err.contains("t1.uald"), "{err}");
        assert!(err.contains("14 values"), "{err}");
        assert!(err.contains("expected 16"), "{err}");
    }

    #[test]
    fn mismatched_plane_shape_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let s = &generate_corpus(&CorpusSpec::new(1, 1, 32, 32, ClassMix([0.0, 1.0, 0.0]))).unwrap()[0];
        write_sample(s, dir.path()).unwrap();
        write_grid(&Grid::zeros(16, 32), &dir.path().join("dwi.uald")).unwrap();
        let err = read_sample(dir.path()).unwrap_err().to_string();
        assert!(err.contains("dwi.uald"), "{err}");
    }
}
