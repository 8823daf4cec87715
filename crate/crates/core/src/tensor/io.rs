//! `DSD1` tensor files: 4 magic bytes, u32 LE rank, rank x u32 LE dims,
//! then the row-major f32 LE payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Tensor, MAX_RANK};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"DSD1";

impl Tensor {
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&(self.rank() as u32).to_le_bytes())?;
        for &d in self.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in self.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.rank() + 4 * self.len());
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    /// Parses a complete `DSD1` buffer; trailing bytes are an error.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = bytes;
        let mut word = |what: &str| -> std::result::Result<u32, String> {
            if cur.len() < 4 {
                return Err(format!("truncated while reading {what}"));
            }
            let (head, rest) = cur.split_at(4);
            cur = rest;
            Ok(u32::from_le_bytes(head.try_into().unwrap()))
        };
        if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
            return Err("missing DSD1 magic".into());
        }
        word("magic")?;
        let rank = word("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(format!("rank {rank} outside 1..={MAX_RANK}"));
        }
        let mut shape = Vec::with_capacity(rank);
        for i in 0..rank {
            shape.push(word(&format!("dim {i}"))? as usize);
        }
        let n: usize = shape.iter().product();
        if cur.len() != 4 * n {
            return Err(format!(
                "payload is {} bytes, shape {shape:?} needs {}",
                cur.len(),
                4 * n
            ));
        }
        let data = cur
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data).map_err(|e| e.to_string())
    }
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    t.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    Tensor::from_bytes(&buf).map_err(|reason| Error::TensorFile {
        path: path.to_path_buf(),
        reason,
    })
}
