//! Checkpoint files.
//!
//! Little-endian layout: magic `MUN1`, version u32 = 1, tensor_count u32,
//! then per tensor: name_len u16, name UTF-8, dtype u8 (0 = f32), ndim u8,
//! dims u32 x ndim, payload f32 x numel. No padding or alignment. The
//! first record is a one-element `meta.input_size` tensor; parameters
//! follow in definition order with ndim = 4. Values are stored at 32-bit
//! precision.

use std::io::{Read, Write};
use std::path::Path;

use super::{build_model, Model, UNetConfig, NUM_STAGES};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const MAGIC: &[u8; 4] = b"MUN1";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
/// Upper bound on any single dimension; guards dims products against
/// overflow before allocation.
const MAX_DIM: u32 = 1 << 24;

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let count = model.params().len() as u32 + 1;
    buf.extend_from_slice(&count.to_le_bytes());

    write_record(
        &mut buf,
        "meta.input_size",
        &[1],
        &[model.config().input_size as f32],
    );
    for p in model.params().iter() {
        let s = p.value().shape();
        let dims = [s.n as u32, s.c as u32, s.h as u32, s.w as u32];
        let payload: Vec<f32> = p.value().data().iter().map(|&v| v as f32).collect();
        write_record(&mut buf, p.name(), &dims, &payload);
    }

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_record(buf: &mut Vec<u8>, name: &str, dims: &[u32], payload: &[f32]) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(DTYPE_F32);
    buf.push(dims.len() as u8);
    for &d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Record {
    name: String,
    dims: Vec<u32>,
    payload: Vec<f32>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.path,
                self.bytes.len() as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Load a checkpoint and reconstruct the model. The architecture is
/// recovered from the stored tensor shapes plus the `meta.input_size`
/// record; every parameter must match the rebuilt structure exactly.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };

    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(
            path,
            0,
            format!(
                "bad magic {:?}, expected \"MUN1\"",
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            path,
            4,
            format!("unsupported version {version}"),
        ));
    }
    let count = r.u32("tensor count")?;

    let mut records = Vec::with_capacity(count as usize);
    for i in 0..count {
        let rec_start = r.pos as u64;
        let name_len = r.u16("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec()).map_err(|_| {
            Error::format(path, rec_start, format!("tensor {i}: name is not UTF-8"))
        })?;
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::format(
                path,
                (r.pos - 1) as u64,
                format!("{name}: unsupported dtype {dtype}"),
            ));
        }
        let ndim = r.u8("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim);
        let mut numel: u64 = 1;
        for _ in 0..ndim {
            let at = r.pos as u64;
            let d = r.u32("dimension")?;
            if d == 0 || d > MAX_DIM {
                return Err(Error::format(
                    path,
                    at,
                    format!("{name}: dimension {d} out of range 1..={MAX_DIM}"),
                ));
            }
            dims.push(d);
            numel *= d as u64;
            if numel > (MAX_DIM as u64) * 16 {
                return Err(Error::format(
                    path,
                    at,
                    format!("{name}: element count overflows"),
                ));
            }
        }
        let raw = r.take(numel as usize * 4, "payload")?;
        let payload = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(Record {
            name,
            dims,
            payload,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            path,
            r.pos as u64,
            format!("{} trailing bytes after last tensor", bytes.len() - r.pos),
        ));
    }

    rebuild(path, records)
}

fn rebuild(path: &Path, records: Vec<Record>) -> Result<Model> {
    let get = |name: &str| -> Result<&Record> {
        records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::format(path, 0, format!("missing tensor {name}")))
    };

    let meta = get("meta.input_size")?;
    if meta.payload.len() != 1 {
        return Err(Error::format(path, 0, "malformed meta.input_size".to_string()));
    }
    let input_size = meta.payload[0] as usize;

    let mut stage_channels = [0usize; NUM_STAGES];
    for (s, c) in stage_channels.iter_mut().enumerate() {
        let w = get(&format!("enc{}.conv1.w", s + 1))?;
        if w.dims.len() != 4 {
            return Err(Error::format(
                path,
                0,
                format!("enc{}.conv1.w: expected 4 dims", s + 1),
            ));
        }
        *c = w.dims[0] as usize;
    }
    let in_channels = get("enc1.conv1.w")?.dims[1] as usize;
    let out_channels = get("head.w")?.dims[0] as usize;

    let cfg = UNetConfig {
        input_size,
        stage_channels,
        in_channels,
        out_channels,
        seed: 0,
    };
    cfg.validate()
        .map_err(|e| Error::format(path, 0, format!("reconstructed config invalid: {e}")))?;
    let mut model = build_model(&cfg)?;

    if records.len() != model.params().len() + 1 {
        return Err(Error::format(
            path,
            0,
            format!(
                "{} tensors, expected {} for this architecture",
                records.len(),
                model.params().len() + 1
            ),
        ));
    }
    for p in model.params_mut().iter_mut() {
        let rec = records
            .iter()
            .find(|r| r.name == p.name())
            .ok_or_else(|| Error::format(path, 0, format!("missing tensor {}", p.name())))?;
        let s = p.value().shape();
        let expect = [s.n as u32, s.c as u32, s.h as u32, s.w as u32];
        if rec.dims != expect {
            return Err(Error::format(
                path,
                0,
                format!("{}: dims {:?}, expected {:?}", p.name(), rec.dims, expect),
            ));
        }
        let data: Vec<f64> = rec.payload.iter().map(|&v| v as f64).collect();
        *p.value_mut() = Tensor::from_vec(Shape::new(s.n, s.c, s.h, s.w), data)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    fn reduced() -> Model {
        build_model(&UNetConfig {
            input_size: 16,
            stage_channels: [2, 2, 4, 4, 4],
            in_channels: 1,
            out_channels: 1,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_reproduces_parameters_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = reduced();
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config().input_size, 16);
        assert_eq!(loaded.config().stage_channels, [2, 2, 4, 4, 4]);
        for (a, b) in model.params().iter().zip(loaded.params().iter()) {
            assert_eq!(a.name(), b.name());
            for (&x, &y) in a.value().data().iter().zip(b.value().data()) {
                assert_eq!(x as f32, y as f32);
                assert_eq!(y, (y as f32) as f64); // loaded value is exactly the f32
            }
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let model = reduced();
        save_checkpoint(&model, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupt_magic_names_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&reduced(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[..4].copy_from_slice(b"XNET");
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("offset 0"), "{msg}");
        assert!(msg.contains("XNET"), "{msg}");
    }

    #[test]
    fn truncated_file_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&reduced(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn file_size_matches_format_arithmetic() {
        // header + per-record (2 + name_len + 1 + 1 + 4*ndim + 4*numel)
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = build_model(&UNetConfig::default()).unwrap();
        save_checkpoint(&model, &path).unwrap();
        let mut expect = 4 + 4 + 4;
        expect += 2 + "meta.input_size".len() + 1 + 1 + 4 + 4;
        for p in model.params().iter() {
            expect += 2 + p.name().len() + 1 + 1 + 4 * 4 + 4 * p.value().numel();
        }
        assert_eq!(std::fs::read(&path).unwrap().len(), expect);
    }
}
