//! Binary model file.
//!
//! ```text
//! magic      8 bytes  "HPMLP\0\r\n"
//! version    u32 LE
//! layers     u32 LE
//! per layer  rows u32 LE, cols u32 LE
//! per layer  rows*cols weights (row-major), then rows biases, f64 LE
//! checksum   32 bytes SHA-256 of everything above
//! ```

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Dense, GestureError, MlpModel};

pub const MODEL_MAGIC: &[u8; 8] = b"HPMLP\0\r\n";
pub const MODEL_VERSION: u32 = 1;

const CHECKSUM_LEN: usize = 32;
/// Guards allocation when reading corrupt headers.
const MAX_LAYER_WIDTH: usize = 1 << 16;

pub fn write_model<W: Write>(model: &MlpModel, mut w: W) -> Result<(), GestureError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for l in &model.layers {
        buf.extend_from_slice(&(l.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(l.cols as u32).to_le_bytes());
    }
    for l in &model.layers {
        for v in l.weights.iter().chain(&l.biases) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<(), GestureError> {
    let mut f = File::create(path)?;
    write_model(model, &mut f)?;
    f.sync_all()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<MlpModel, GestureError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    parse(&buf)
}

pub fn load_model(path: &Path) -> Result<MlpModel, GestureError> {
    read_model(File::open(path)?)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], GestureError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| GestureError::Format(format!("truncated while reading {what}")))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, GestureError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, GestureError> {
        let bytes = self.take(n * 8, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn parse(data: &[u8]) -> Result<MlpModel, GestureError> {
    let fmt = |m: String| GestureError::Format(m);
    if data.len() < MODEL_MAGIC.len() + CHECKSUM_LEN {
        return Err(fmt("truncated file".into()));
    }
    if &data[..MODEL_MAGIC.len()] != MODEL_MAGIC {
        return Err(fmt("bad magic".into()));
    }
    let (body, checksum) = data.split_at(data.len() - CHECKSUM_LEN);
    let mut cur = Cursor { data: body, pos: MODEL_MAGIC.len() };
    let version = cur.u32("version")?;
    if version != MODEL_VERSION {
        return Err(fmt(format!("unsupported version {version}")));
    }
    let count = cur.u32("layer count")? as usize;
    if count == 0 || count > 64 {
        return Err(fmt(format!("implausible layer count {count}")));
    }
    let mut shapes = Vec::with_capacity(count);
    for i in 0..count {
        let rows = cur.u32("layer header")? as usize;
        let cols = cur.u32("layer header")? as usize;
        if rows == 0 || cols == 0 || rows > MAX_LAYER_WIDTH || cols > MAX_LAYER_WIDTH {
            return Err(fmt(format!("layer {i} has shape {rows}x{cols}")));
        }
        if let Some(&(prev_rows, _)) = shapes.last() {
            if prev_rows != cols {
                return Err(fmt(format!(
                    "dimension mismatch: layer {} outputs {prev_rows} but layer {i} expects {cols}",
                    i - 1
                )));
            }
        }
        shapes.push((rows, cols));
    }
    let mut layers = Vec::with_capacity(count);
    for &(rows, cols) in &shapes {
        let weights = cur.f64s(rows * cols, "weights")?;
        let biases = cur.f64s(rows, "biases")?;
        layers.push(Dense {
            rows,
            cols,
            weights,
            biases,
        });
    }
    if cur.pos != body.len() {
        return Err(fmt(format!("{} trailing bytes before checksum", body.len() - cur.pos)));
    }
    if Sha256::digest(body).as_slice() != checksum {
        return Err(fmt("checksum mismatch".into()));
    }
    let model = MlpModel { layers };
    if !model.is_finite() {
        return Err(fmt("non-finite parameter".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> MlpModel {
        MlpModel::new(&[42, 10, 8], &mut ChaCha8Rng::seed_from_u64(2))
    }

    fn bytes(m: &MlpModel) -> Vec<u8> {
        let mut b = Vec::new();
        write_model(m, &mut b).unwrap();
        b
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = read_model(bytes(&m).as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.layer_sizes(), vec![42, 10, 8]);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let b = bytes(&model());
        for cut in [0, 7, 20, b.len() / 2, b.len() - 1] {
            assert!(matches!(read_model(&b[..cut]), Err(GestureError::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn bad_magic_and_flipped_bits_are_rejected() {
        let mut b = bytes(&model());
        b[0] = b'X';
        assert!(matches!(read_model(b.as_slice()), Err(GestureError::Format(m)) if m.contains("magic")));
        let mut b = bytes(&model());
        let mid = b.len() / 2;
        b[mid] ^= 0x40;
        assert!(matches!(read_model(b.as_slice()), Err(GestureError::Format(m)) if m.contains("checksum")));
    }

    #[test]
    fn mismatched_layer_chain_is_rejected() {
        let mut m = model();
        m.layers[1] = Dense::zeros(8, 11);
        let b = bytes(&m);
        assert!(matches!(read_model(b.as_slice()), Err(GestureError::Format(m)) if m.contains("mismatch")));
    }
}
