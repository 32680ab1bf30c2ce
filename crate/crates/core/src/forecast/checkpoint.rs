//! MoE checkpoints built on the SPNN network format.
//!
//! ```text
//! magic  b"SPMO"
//! u32    version (1)
//! u8     embedding kind (0 table, 1 soliton)
//! u32    k, u32 expert count
//! f64    output shift, f64 output scale
//! soliton only: u8 tail, u8 profile, f64 input scale
//! embedding: table as one SPNN network with a single [366 × d] identity
//!            layer, or two SPNN networks (amplitude, phase)
//! SPNN gate, then one SPNN network per expert
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::embed::{Embedding, SolitonEmbed, SolitonProfile, SolitonTail, TableEmbed, TABLE_ROWS};
use super::moe::MoeModel;
use crate::nn::{read_params, write_params, Activation, Dense, MlpParams};
use crate::{Error, Result};

pub const MOE_MAGIC: &[u8; 4] = b"SPMO";
pub const MOE_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stream>", e)
}

fn read_bytes<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(b)
}

pub fn write_moe<W: Write>(model: &MoeModel, w: &mut W) -> Result<()> {
    let mut head = Vec::new();
    head.extend_from_slice(MOE_MAGIC);
    head.extend_from_slice(&MOE_VERSION.to_le_bytes());
    head.push(match model.embedding {
        Embedding::Table(_) => 0,
        Embedding::Soliton(_) => 1,
    });
    head.extend_from_slice(&(model.k as u32).to_le_bytes());
    head.extend_from_slice(&(model.experts.len() as u32).to_le_bytes());
    head.extend_from_slice(&model.output_shift.to_le_bytes());
    head.extend_from_slice(&model.output_scale.to_le_bytes());
    if let Embedding::Soliton(s) = &model.embedding {
        head.push(s.tail.code());
        head.push(s.profile.code());
        head.extend_from_slice(&s.input_scale.to_le_bytes());
    }
    w.write_all(&head).map_err(io_err)?;
    match &model.embedding {
        Embedding::Table(t) => {
            let layer = Dense {
                in_dim: t.dim(),
                out_dim: TABLE_ROWS,
                weight: t.table().to_vec(),
                bias: vec![0.0; TABLE_ROWS],
                activation: Activation::Identity,
            };
            write_params(&MlpParams::new(vec![layer])?, w)?;
        }
        Embedding::Soliton(s) => {
            write_params(&s.amplitude, w)?;
            write_params(&s.phase, w)?;
        }
    }
    write_params(&model.gate, w)?;
    for e in &model.experts {
        write_params(e, w)?;
    }
    Ok(())
}

pub fn read_moe<R: Read>(r: &mut R) -> Result<MoeModel> {
    if &read_bytes::<_, 4>(r)? != MOE_MAGIC {
        return Err(Error::Validation("not a MoE checkpoint".into()));
    }
    let version = u32::from_le_bytes(read_bytes(r)?);
    if version != MOE_VERSION {
        return Err(Error::Validation(format!(
            "unsupported MoE checkpoint version {version}"
        )));
    }
    let [kind] = read_bytes::<_, 1>(r)?;
    let k = u32::from_le_bytes(read_bytes(r)?) as usize;
    let n_experts = u32::from_le_bytes(read_bytes(r)?) as usize;
    let output_shift = f64::from_le_bytes(read_bytes(r)?);
    let output_scale = f64::from_le_bytes(read_bytes(r)?);
    let embedding = match kind {
        0 => {
            let net = read_params(r)?;
            let l = &net.layers()[0];
            if net.layers().len() != 1 || l.out_dim != TABLE_ROWS {
                return Err(Error::Validation("table embedding block has the wrong shape".into()));
            }
            Embedding::Table(TableEmbed::from_table(l.in_dim, l.weight.clone())?)
        }
        1 => {
            let [tail, profile] = read_bytes::<_, 2>(r)?;
            let input_scale = f64::from_le_bytes(read_bytes(r)?);
            let tail = SolitonTail::from_code(tail)
                .ok_or_else(|| Error::Validation(format!("unknown soliton tail code {tail}")))?;
            let profile = SolitonProfile::from_code(profile)
                .ok_or_else(|| Error::Validation(format!("unknown soliton profile code {profile}")))?;
            Embedding::Soliton(SolitonEmbed {
                amplitude: read_params(r)?,
                phase: read_params(r)?,
                input_scale,
                tail,
                profile,
            })
        }
        other => return Err(Error::Validation(format!("unknown embedding kind tag {other}"))),
    };
    let gate = read_params(r)?;
    let experts = (0..n_experts).map(|_| read_params(r)).collect::<Result<Vec<_>>>()?;
    let d = embedding.dim();
    if k == 0 || k > n_experts || gate.in_dim() != d || gate.out_dim() != n_experts {
        return Err(Error::Validation("MoE checkpoint has inconsistent gate or k".into()));
    }
    if experts.iter().any(|e| e.in_dim() != d || e.out_dim() != 1) {
        return Err(Error::Validation("MoE checkpoint has a malformed expert".into()));
    }
    Ok(MoeModel {
        embedding,
        gate,
        experts,
        k,
        output_shift,
        output_scale,
    })
}

pub fn save_moe(model: &MoeModel, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    write_moe(model, &mut f)?;
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn load_moe(path: &Path) -> Result<MoeModel> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
    read_moe(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::{EmbeddingKind, MoeConfig};

    #[test]
    fn round_trip_both_kinds() {
        for kind in [EmbeddingKind::Table, EmbeddingKind::Soliton] {
            let cfg = MoeConfig {
                embedding: kind,
                dim: 4,
                experts: 3,
                expert_hidden: 5,
                soliton_hidden: 3,
                ..MoeConfig::default()
            };
            let mut m = cfg.build().unwrap();
            m.output_shift = 12.5;
            m.output_scale = 3.25;
            let mut buf = Vec::new();
            write_moe(&m, &mut buf).unwrap();
            assert_eq!(&buf[..4], MOE_MAGIC);
            assert_eq!(buf[8], if kind == EmbeddingKind::Table { 0 } else { 1 });
            let back = read_moe(&mut buf.as_slice()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn rejects_bad_tag_and_truncation() {
        let m = MoeConfig {
            dim: 2,
            experts: 2,
            k: 1,
            expert_hidden: 2,
            soliton_hidden: 2,
            ..MoeConfig::default()
        }
        .build()
        .unwrap();
        let mut buf = Vec::new();
        write_moe(&m, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(read_moe(&mut bad.as_slice()).is_err());
        assert!(read_moe(&mut &buf[..buf.len() - 3]).is_err());
    }
}
