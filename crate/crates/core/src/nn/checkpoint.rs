//! Self-describing binary checkpoints.
//!
//! Layout (all integers little-endian `u64` unless noted):
//!
//! ```text
//! "OBNETCK1"
//! encoder mlp
//! u8 has_basis, u8 trainable_basis, [basis in projection binary format]
//! head count, then per head: name length, UTF-8 name bytes, mlp
//! ```
//!
//! An mlp is a layer count followed per layer by `in`, `out`, `u8`
//! activation, `u8` has_bias, `out*in` weights and `out` biases as `f64`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, BottleneckedNetwork, DenseLayer, MlpNetwork, NnError};
use crate::linalg::Matrix;
use crate::projection::{read_f64, read_u64, ProjectionBasis};

const MAGIC: &[u8; 8] = b"OBNETCK1";

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<(), NnError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_mlp<W: Write>(w: &mut W, net: &MlpNetwork) -> Result<(), NnError> {
    write_u64(w, net.layers().len() as u64)?;
    for layer in net.layers() {
        write_u64(w, layer.in_dim() as u64)?;
        write_u64(w, layer.out_dim() as u64)?;
        w.write_all(&[layer.activation().code(), layer.bias().is_some() as u8])?;
        for v in layer.weight().as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(b) = layer.bias() {
            for v in b {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_byte<R: Read>(r: &mut R) -> Result<u8, NnError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_len<R: Read>(r: &mut R, what: &str) -> Result<usize, NnError> {
    let v = read_u64(r)?;
    // Anything this large is corruption, not a real network.
    if v > (1 << 28) {
        return Err(NnError::Format(format!("implausible {what} {v}")));
    }
    Ok(v as usize)
}

fn read_mlp<R: Read>(r: &mut R) -> Result<MlpNetwork, NnError> {
    let n = read_len(r, "layer count")?;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let inp = read_len(r, "layer input width")?;
        let out = read_len(r, "layer output width")?;
        let act = read_byte(r)?;
        let activation = Activation::from_code(act)
            .ok_or_else(|| NnError::Format(format!("unknown activation code {act}")))?;
        let has_bias = read_byte(r)? != 0;
        let mut w = Vec::with_capacity(out * inp);
        for _ in 0..out * inp {
            w.push(read_f64(r)?);
        }
        let weight = Matrix::new(out, inp, w).map_err(|e| NnError::Format(e.to_string()))?;
        let bias = if has_bias {
            let mut b = Vec::with_capacity(out);
            for _ in 0..out {
                b.push(read_f64(r)?);
            }
            Some(b)
        } else {
            None
        };
        layers.push(DenseLayer::new(weight, bias, activation)?);
    }
    MlpNetwork::new(layers)
}

pub fn write_checkpoint<W: Write>(net: &BottleneckedNetwork, mut w: W) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    write_mlp(&mut w, net.encoder())?;
    match net.basis() {
        Some(b) => {
            w.write_all(&[1, net.trainable_basis() as u8])?;
            b.write_binary(&mut w)?;
        }
        None => w.write_all(&[0, 0])?,
    }
    write_u64(&mut w, net.heads().len() as u64)?;
    for (name, head) in net.heads() {
        write_u64(&mut w, name.len() as u64)?;
        w.write_all(name.as_bytes())?;
        write_mlp(&mut w, head)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<BottleneckedNetwork, NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format("not a network checkpoint".into()));
    }
    let encoder = read_mlp(&mut r)?;
    let has_basis = read_byte(&mut r)? != 0;
    let trainable = read_byte(&mut r)? != 0;
    let basis = if has_basis {
        Some(ProjectionBasis::read_binary(&mut r)?)
    } else {
        None
    };
    let n_heads = read_len(&mut r, "head count")?;
    let mut heads = BTreeMap::new();
    for _ in 0..n_heads {
        let len = read_len(&mut r, "head name length")?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| NnError::Format(e.to_string()))?;
        heads.insert(name, read_mlp(&mut r)?);
    }
    BottleneckedNetwork::new(encoder, basis, heads, trainable)
}

pub fn save_checkpoint(net: &BottleneckedNetwork, path: &Path) -> Result<(), NnError> {
    write_checkpoint(net, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<BottleneckedNetwork, NnError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
