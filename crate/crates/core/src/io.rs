//! Binary and CSV serialization of datasets and models.
//!
//! Dataset file: magic `ILABDS01`, then little-endian u64 `d` and `N`, then
//! `N` label bytes (i8), `N` environment bytes, then the `N×d` samples as
//! row-major f64. Model file: magic `ILABMD01`, u64 `d`, then `d` f64.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{LabeledDataset, LinearModel, Vector};

const DATA_MAGIC: &[u8; 8] = b"ILABDS01";
const MODEL_MAGIC: &[u8; 8] = b"ILABMD01";

pub fn write_dataset(data: &LabeledDataset, out: &mut impl Write) -> Result<()> {
    out.write_all(DATA_MAGIC)?;
    out.write_all(&(data.d() as u64).to_le_bytes())?;
    out.write_all(&(data.n() as u64).to_le_bytes())?;
    let labels: Vec<u8> = data.labels().iter().map(|&v| v as u8).collect();
    out.write_all(&labels)?;
    out.write_all(data.envs())?;
    let mut buf = Vec::with_capacity(8 * data.d());
    for i in 0..data.n() {
        buf.clear();
        for v in data.xt().column(i).iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_u64(input: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_magic(input: &mut impl Read, magic: &[u8; 8]) -> Result<()> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    if &b != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub fn read_dataset(input: &mut impl Read) -> Result<LabeledDataset> {
    read_magic(input, DATA_MAGIC)?;
    let d = read_u64(input)? as usize;
    let n = read_u64(input)? as usize;
    let mut labels = vec![0u8; n];
    input.read_exact(&mut labels)?;
    let mut env = vec![0u8; n];
    input.read_exact(&mut env)?;
    let mut raw = vec![0u8; 8 * d];
    let mut xt = DMatrix::zeros(d, n);
    for i in 0..n {
        input.read_exact(&mut raw)?;
        for (k, chunk) in raw.chunks_exact(8).enumerate() {
            xt[(k, i)] = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    LabeledDataset::new(xt, labels.into_iter().map(|v| v as i8).collect(), env)
}

pub fn write_model(model: &LinearModel, out: &mut impl Write) -> Result<()> {
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&(model.d() as u64).to_le_bytes())?;
    for v in model.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_model(input: &mut impl Read) -> Result<LinearModel> {
    read_magic(input, MODEL_MAGIC)?;
    let d = read_u64(input)? as usize;
    let mut w = Vector::zeros(d);
    for k in 0..d {
        w[k] = f64::from_bits(read_u64(input)?);
    }
    LinearModel::new(w)
}

/// Inspection CSV: `env,y,x0,...,x{d-1}`, values in shortest round-trip form.
pub fn dataset_to_csv(data: &LabeledDataset, out: &mut impl Write) -> Result<()> {
    let mut header = String::from("env,y");
    for k in 0..data.d() {
        header.push_str(&format!(",x{k}"));
    }
    writeln!(out, "{header}")?;
    for i in 0..data.n() {
        let mut line = format!("{},{}", data.envs()[i], data.labels()[i]);
        for v in data.xt().column(i).iter() {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
