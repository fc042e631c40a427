//! `AOTM` model checkpoint format (little-endian):
//!
//! ```text
//! "AOTM" u32 version=1 u32 input_dim u32 n_hidden u32[n_hidden] widths
//! u32 num_classes u8 activation u64 epoch_counter f64[...] parameters
//! ```
//!
//! The initialization seed is not stored; loaded specs carry `rng_seed = 0`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::mlp::{Activation, MlpModel, MlpSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AOTM";
const VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &MlpModel, mut w: W) -> Result<()> {
    let spec = model.spec();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&to_u32(spec.input_dim)?.to_le_bytes())?;
    w.write_all(&to_u32(spec.hidden_layers.len())?.to_le_bytes())?;
    for &h in &spec.hidden_layers {
        w.write_all(&to_u32(h)?.to_le_bytes())?;
    }
    w.write_all(&to_u32(spec.num_classes)?.to_le_bytes())?;
    w.write_all(&[spec.activation.code()])?;
    w.write_all(&model.epoch_counter().to_le_bytes())?;
    for p in model.parameters() {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<MlpModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let input_dim = read_u32(&mut r)? as usize;
    let n_hidden = read_u32(&mut r)? as usize;
    if n_hidden > 1024 {
        return Err(Error::Format("implausible hidden layer count".into()));
    }
    let hidden = (0..n_hidden)
        .map(|_| read_u32(&mut r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let num_classes = read_u32(&mut r)? as usize;
    let mut code = [0u8; 1];
    r.read_exact(&mut code)?;
    let activation = Activation::from_code(code[0])
        .ok_or_else(|| Error::Format(format!("unknown activation code {}", code[0])))?;
    let mut epoch = [0u8; 8];
    r.read_exact(&mut epoch)?;
    let spec = MlpSpec {
        input_dim,
        hidden_layers: hidden,
        num_classes,
        activation,
        rng_seed: 0,
    };
    spec.validate().map_err(|e| Error::Format(e.to_string()))?;
    let mut params = Vec::with_capacity(spec.parameter_count());
    let mut buf = [0u8; 8];
    for _ in 0..spec.parameter_count() {
        r.read_exact(&mut buf)?;
        params.push(f64::from_le_bytes(buf));
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    MlpModel::from_parameters(spec, params, u64::from_le_bytes(epoch))
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    read_model(BufReader::new(File::open(path)?))
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::input(format!("{v} does not fit in u32")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
