//! Binary checkpoint format.
//!
//! Header: magic `TMCK`, format version (u32), config JSON length (u32) and
//! bytes, tensor count (u32). Each tensor: name length (u32), UTF-8 name,
//! rank (u32), dims (u64 each), component tag (u8), values as f32.
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::ModelConfig;
use crate::params::{Layout, Tag, Transformer};
use crate::ModelError;

const MAGIC: &[u8; 4] = b"TMCK";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &Transformer, mut w: W) -> Result<(), ModelError> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(model.config())?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;
    let specs = model.layout().specs();
    w.write_all(&(specs.len() as u32).to_le_bytes())?;
    for spec in specs {
        w.write_all(&(spec.name.len() as u32).to_le_bytes())?;
        w.write_all(spec.name.as_bytes())?;
        w.write_all(&(spec.shape.len() as u32).to_le_bytes())?;
        for &d in &spec.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&[spec.tag as u8])?;
        for &x in &model.params()[spec.range()] {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a checkpoint, rejecting unknown versions and any tensor whose
/// name, shape or tag disagrees with the layout implied by its config.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Transformer, ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Version(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Version(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let len = read_u32(&mut r)? as usize;
    let mut cfg = vec![0u8; len];
    r.read_exact(&mut cfg)?;
    let config: ModelConfig = serde_json::from_slice(&cfg)?;
    config.validate()?;
    let layout = Layout::new(&config);
    let count = read_u32(&mut r)? as usize;
    if count != layout.specs().len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{count} tensors, config implies {}",
            layout.specs().len()
        )));
    }
    let mut data = vec![0.0; layout.total()];
    for spec in layout.specs() {
        let n = read_u32(&mut r)? as usize;
        if n > 4096 {
            return Err(ModelError::Corrupt(format!("tensor name length {n}")));
        }
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| ModelError::Corrupt("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(ModelError::Corrupt(format!("tensor rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let tag = Tag::from_u8(tag[0]).ok_or_else(|| ModelError::Corrupt(format!("component tag {}", tag[0])))?;
        if name != spec.name || shape != spec.shape || tag != spec.tag {
            return Err(ModelError::ShapeMismatch(format!(
                "found {name} {shape:?} {tag:?}, expected {} {:?} {:?}",
                spec.name, spec.shape, spec.tag
            )));
        }
        let mut buf = vec![0u8; spec.len() * 4];
        r.read_exact(&mut buf)?;
        for (dst, chunk) in data[spec.range()].iter_mut().zip(buf.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        }
    }
    Transformer::from_parts(config, data)
}

pub fn save_checkpoint(model: &Transformer, path: &Path) -> Result<(), ModelError> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<Transformer, ModelError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
