//! Flat binary checkpoint format for [`MlpParams`].
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic  b"SPNN"
//! u32    version (1)
//! u32    layer count
//! per layer:
//!   u32 in_dim, u32 out_dim, u8 activation (0 tanh, 1 relu, 2 identity)
//!   f64 × (out_dim·in_dim)   weights, row-major [out × in]
//!   f64 × out_dim            biases
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, Dense, MlpParams};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPNN";
pub const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stream>", e)
}

pub fn write_params<W: Write>(params: &MlpParams, w: &mut W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.layers().len() as u32).to_le_bytes());
    for l in params.layers() {
        buf.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
        buf.push(l.activation.code());
        for v in l.weight.iter().chain(&l.bias) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw).map_err(io_err)?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_params<R: Read>(r: &mut R) -> Result<MlpParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Validation("not an SPNN checkpoint".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Validation(format!("unsupported SPNN version {version}")));
    }
    let count = read_u32(r)? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let in_dim = read_u32(r)? as usize;
        let out_dim = read_u32(r)? as usize;
        let mut code = [0u8; 1];
        r.read_exact(&mut code).map_err(io_err)?;
        let activation = Activation::from_code(code[0])
            .ok_or_else(|| Error::Validation(format!("unknown activation code {}", code[0])))?;
        let weight = read_f64s(r, in_dim * out_dim)?;
        let bias = read_f64s(r, out_dim)?;
        layers.push(Dense {
            in_dim,
            out_dim,
            weight,
            bias,
            activation,
        });
    }
    MlpParams::new(layers)
}

pub fn save_params(params: &MlpParams, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_params(params, &mut f)
}

pub fn load_params(path: &Path) -> Result<MlpParams> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
    read_params(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn header_layout_and_round_trip() {
        let mut rng = seeded_rng(9, 0);
        let net = MlpParams::init(&[4, 3, 2], &[Activation::Tanh, Activation::Identity], &mut rng).unwrap();
        let mut buf = Vec::new();
        write_params(&net, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SPNN");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 12 + 2 * 9 + 8 * (12 + 3 + 6 + 2));
        let back = read_params(&mut buf.as_slice()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn truncated_or_foreign_data_is_rejected() {
        assert!(read_params(&mut &b"NOPE\x01\x00\x00\x00"[..]).is_err());
        assert!(read_params(&mut &b"SPNN\x01\x00\x00\x00\x01\x00\x00\x00"[..]).is_err());
    }
}
