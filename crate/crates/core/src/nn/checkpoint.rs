//! Binary weight files.
//!
//! Layout, all little-endian: magic `EVQN`, `u32` version, `u8` scalar width
//! (4 or 8), `u8` head code (0 linear, 1 dueling-mean, 2 dueling-max), `u32`
//! input width, `u32` hidden count, one `u32` per hidden width, `u32` output
//! count, then for every layer its weights row-major (`in x out`) followed by
//! its biases.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

use super::{Aggregation, Architecture, Dense, Head, Network, Scalar};

const MAGIC: &[u8; 4] = b"EVQN";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight file version {0}")]
    Version(u32),
    #[error("unsupported scalar width {0}")]
    Width(u8),
    #[error("unknown head code {0}")]
    HeadCode(u8),
    #[error("weight file contains a non-finite value")]
    NonFinite,
}

fn head_code(head: Head) -> u8 {
    match head {
        Head::Linear => 0,
        Head::Dueling(Aggregation::Mean) => 1,
        Head::Dueling(Aggregation::Max) => 2,
    }
}

pub fn write_checkpoint<F: Scalar, W: Write>(net: &Network<F>, mut w: W) -> Result<(), CheckpointError> {
    let arch = net.architecture();
    let width = std::mem::size_of::<F>() as u8;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[width, head_code(arch.head)])?;
    w.write_all(&(arch.input as u32).to_le_bytes())?;
    w.write_all(&(arch.hidden.len() as u32).to_le_bytes())?;
    for &h in &arch.hidden {
        w.write_all(&(h as u32).to_le_bytes())?;
    }
    w.write_all(&(arch.outputs as u32).to_le_bytes())?;
    for layer in net.layers() {
        for &v in layer.weight.iter().chain(layer.bias.iter()) {
            if width == 4 {
                w.write_all(&(v.f64() as f32).to_le_bytes())?;
            } else {
                w.write_all(&v.f64().to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Read a weight file into a network of any scalar type.
pub fn read_checkpoint<F: Scalar, R: Read>(mut r: R) -> Result<Network<F>, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut tags = [0u8; 2];
    r.read_exact(&mut tags)?;
    let width = tags[0];
    if width != 4 && width != 8 {
        return Err(CheckpointError::Width(width));
    }
    let head = match tags[1] {
        0 => Head::Linear,
        1 => Head::Dueling(Aggregation::Mean),
        2 => Head::Dueling(Aggregation::Max),
        c => return Err(CheckpointError::HeadCode(c)),
    };
    let input = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let hidden = (0..count)
        .map(|_| read_u32(&mut r).map(|h| h as usize))
        .collect::<io::Result<Vec<_>>>()?;
    let outputs = read_u32(&mut r)? as usize;
    let arch = Architecture::new(input, &hidden, outputs, head);

    let mut read_scalar = || -> Result<F, CheckpointError> {
        let v = if width == 4 {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            f32::from_le_bytes(b) as f64
        } else {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            f64::from_le_bytes(b)
        };
        if !v.is_finite() {
            return Err(CheckpointError::NonFinite);
        }
        Ok(F::of(v))
    };
    let mut layers = Vec::new();
    for (fan_in, fan_out) in arch.layer_shapes() {
        let weight = (0..fan_in * fan_out)
            .map(|_| read_scalar())
            .collect::<Result<Vec<_>, _>>()?;
        let bias = (0..fan_out).map(|_| read_scalar()).collect::<Result<Vec<_>, _>>()?;
        layers.push(Dense {
            weight: Array2::from_shape_vec((fan_in, fan_out), weight).expect("sized"),
            bias: Array1::from(bias),
        });
    }
    Ok(Network::from_layers(arch, layers).expect("shapes come from the architecture"))
}

pub fn save_checkpoint<F: Scalar>(net: &Network<F>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    write_checkpoint(net, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint<F: Scalar>(path: impl AsRef<Path>) -> Result<Network<F>, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
