//! Binary PGM (P5) reading and writing.
//!
//! Only the canonical form is accepted: magic `P5`, single whitespace
//! separators, no comments, maxval 255. Pixel byte p maps to the float
//! p/255, so writing a freshly read file reproduces it byte for byte.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Read a binary PGM into a `1x1xHxW` tensor scaled to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_pgm(path, &bytes)
}

fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0usize;
    let fail = |pos: usize, detail: String| Error::format(path, pos as u64, detail);

    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        let detail = if magic == "P2" {
            "ASCII PGM (P2) not supported, expected binary P5".to_string()
        } else {
            format!("bad magic {magic:?}, expected P5")
        };
        return Err(fail(0, detail));
    }
    pos += 2;

    let token = |pos: &mut usize, what: &str| -> Result<u64> {
        // exactly one whitespace byte, then digits
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                return Err(fail(*pos, "comments are not supported".to_string()));
            }
            _ => return Err(fail(*pos, format!("expected whitespace before {what}"))),
        }
        if bytes.get(*pos) == Some(&b'#') {
            return Err(fail(*pos, "comments are not supported".to_string()));
        }
        let start = *pos;
        while let Some(b) = bytes.get(*pos) {
            if b.is_ascii_digit() {
                *pos += 1;
            } else {
                break;
            }
        }
        if *pos == start {
            return Err(fail(start, format!("expected digits for {what}")));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .unwrap()
            .parse::<u64>()
            .map_err(|_| fail(start, format!("{what} out of range")))
    };

    let width = token(&mut pos, "width")?;
    let height = token(&mut pos, "height")?;
    let maxval_at = pos;
    let maxval = token(&mut pos, "maxval")?;
    if maxval != 255 {
        return Err(fail(maxval_at + 1, format!("maxval {maxval}, expected 255")));
    }
    if width == 0 || height == 0 || width > 1 << 16 || height > 1 << 16 {
        return Err(fail(2, format!("unreasonable dimensions {width}x{height}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(fail(pos, "expected single whitespace after maxval".to_string())),
    }

    let numel = (width * height) as usize;
    let avail = bytes.len() - pos;
    if avail < numel {
        return Err(fail(
            bytes.len(),
            format!("payload truncated: {avail} of {numel} pixel bytes"),
        ));
    }
    if avail > numel {
        return Err(fail(
            pos + numel,
            format!("{} trailing bytes after pixel data", avail - numel),
        ));
    }
    let data: Vec<f64> = bytes[pos..pos + numel].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(Shape::new(1, 1, height as usize, width as usize), data)
}

/// Write a `1x1xHxW` tensor as a canonical binary PGM. Values are clamped
/// to `[0, 1]` and rounded to the nearest of 256 levels.
pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::shape(
            "write_pgm",
            format!("expected 1x1xHxW, got {s}"),
        ));
    }
    let mut buf = Vec::with_capacity(32 + s.h * s.w);
    buf.extend_from_slice(format!("P5\n{} {}\n255\n", s.w, s.h).as_bytes());
    for &v in image.data() {
        buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn reads_definitional_scaling() {
        let dir = tmp();
        let path = dir.path().join("t.pgm");
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        std::fs::write(&path, &bytes).unwrap();
        let t = read_pgm(&path).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 1, 2, 2));
        let want = [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0];
        for (a, b) in t.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((t.data()[2] - 0.50196).abs() < 1e-5);
        assert!((t.data()[3] - 0.25098).abs() < 1e-5);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tmp();
        let path = dir.path().join("t.pgm");
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 17, 255, 128, 64, 200]);
        std::fs::write(&path, &bytes).unwrap();
        let t = read_pgm(&path).unwrap();
        let out = dir.path().join("o.pgm");
        write_pgm(&out, &t).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&out).unwrap());
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tmp();
        let path = dir.path().join("t.pgm");
        let header = b"P5\n4 4\n255\n";
        let mut bytes = header.to_vec();
        bytes.extend_from_slice(&[7u8; 15]); // 15 of 16 bytes
        std::fs::write(&path, &bytes).unwrap();
        let err = read_pgm(&path).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains(&format!("offset {}", header.len() + 15)),
            "{msg}"
        );
        assert!(msg.contains("truncated"), "{msg}");
    }

    #[test]
    fn rejects_p2_and_wrong_maxval() {
        let dir = tmp();
        let p2 = dir.path().join("a.pgm");
        std::fs::write(&p2, b"P2\n2 2\n255\n0 1 2 3").unwrap();
        let err = read_pgm(&p2).unwrap_err();
        assert!(err.to_string().contains("P2"), "{err}");

        let badmax = dir.path().join("b.pgm");
        let mut bytes = b"P5\n2 2\n65535\n".to_vec();
        bytes.extend_from_slice(&[0; 4]);
        std::fs::write(&badmax, &bytes).unwrap();
        let err = read_pgm(&badmax).unwrap_err();
        assert!(err.to_string().contains("maxval"), "{err}");
    }

    #[test]
    fn rejects_comments() {
        let dir = tmp();
        let path = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0; 4]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_pgm(&path).is_err());
    }

    #[test]
    fn mask_levels_survive_round_trip_exactly() {
        let dir = tmp();
        let path = dir.path().join("m.pgm");
        let mask = Tensor::from_vec(
            Shape::new(1, 1, 2, 2),
            vec![0.0, 1.0, 1.0, 0.0],
        )
        .unwrap();
        write_pgm(&path, &mask).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.data(), mask.data());
    }
}
