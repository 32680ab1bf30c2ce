//! Day-of-year embeddings: a trainable lookup table and the soliton embedding.
//!
//! The soliton embedding maps a scalar `x` (scaled by `input_scale`) through
//! two small MLPs: one predicts an amplitude `A_i` per output dimension, the
//! other a phase whose `tanh` gives `θ_i ∈ (-1, 1)`. Each output is
//!
//! ```text
//! out_i = A_i · (1 / cos θ_i)^2 + sin(θ_i / cos θ_i)
//! ```
//!
//! Since `|θ| < 1 < π/2`, `cos θ > 0.54` and the profile has no singularity.

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::nn::{Activation, ForwardCache, Grads, MlpParams, ParamTensors};
use crate::{Error, Result, Rng};

/// Rows in a table embedding: day-of-year 0..=365.
pub const TABLE_ROWS: usize = 366;

/// Training-time augmentation: `day + u`, `u ~ U[0, 0.99)`.
pub fn augment_long(day: u32, rng: &mut Rng) -> f64 {
    day as f64 + rng.random_range(0.0..0.99)
}

/// How the second soliton term is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolitonTail {
    /// `sin(θ / c(θ))`
    #[default]
    SinOfRatio,
    /// `s(θ) / c(θ)`, i.e. `tan θ` for the trigonometric profile.
    Tan,
}

/// Trigonometric (`cos`) or hyperbolic (`cosh`, giving `sech²`) profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolitonProfile {
    #[default]
    Trig,
    Hyperbolic,
}

macro_rules! str_enum {
    ($t:ty, $key:literal, $($s:literal => $v:expr),+) => {
        impl std::str::FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($s => Ok($v),)+
                    other => Err(Error::Config(format!(concat!($key, ": unknown value `{}`"), other))),
                }
            }
        }
        impl std::fmt::Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                $(if *self == $v { return f.write_str($s); })+
                unreachable!()
            }
        }
    };
}

str_enum!(SolitonTail, "soliton_tail", "sin_of_ratio" => SolitonTail::SinOfRatio, "tan" => SolitonTail::Tan);
str_enum!(SolitonProfile, "soliton_profile", "trig" => SolitonProfile::Trig, "sech" => SolitonProfile::Hyperbolic);

impl SolitonTail {
    pub(crate) fn code(self) -> u8 {
        match self {
            SolitonTail::SinOfRatio => 0,
            SolitonTail::Tan => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(SolitonTail::SinOfRatio),
            1 => Some(SolitonTail::Tan),
            _ => None,
        }
    }
}

impl SolitonProfile {
    pub(crate) fn code(self) -> u8 {
        match self {
            SolitonProfile::Trig => 0,
            SolitonProfile::Hyperbolic => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(SolitonProfile::Trig),
            1 => Some(SolitonProfile::Hyperbolic),
            _ => None,
        }
    }

    /// `(s, s', c, c')` with `c = cos|cosh` and `s = sin|sinh`.
    fn parts(self, theta: f64) -> (f64, f64, f64, f64) {
        match self {
            SolitonProfile::Trig => (theta.sin(), theta.cos(), theta.cos(), -theta.sin()),
            SolitonProfile::Hyperbolic => (theta.sinh(), theta.cosh(), theta.cosh(), theta.sinh()),
        }
    }
}

/// Profile value and its partial derivatives `(value, ∂/∂A, ∂/∂θ)`.
pub fn soliton_profile(a: f64, theta: f64, tail: SolitonTail, profile: SolitonProfile) -> (f64, f64, f64) {
    let (s, ds, c, dc) = profile.parts(theta);
    let inv_c2 = 1.0 / (c * c);
    let main = a * inv_c2;
    let d_main = -2.0 * a * dc / (c * c * c);
    let (t, dt) = match tail {
        SolitonTail::SinOfRatio => {
            let q = theta / c;
            let dq = (c - theta * dc) * inv_c2;
            (q.sin(), q.cos() * dq)
        }
        SolitonTail::Tan => (s / c, (ds * c - s * dc) * inv_c2),
    };
    (main + t, inv_c2, d_main + dt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolitonEmbed {
    pub amplitude: MlpParams,
    pub phase: MlpParams,
    pub input_scale: f64,
    pub tail: SolitonTail,
    pub profile: SolitonProfile,
}

#[derive(Debug, Clone)]
pub struct SolitonCache {
    amp_cache: ForwardCache,
    phase_cache: ForwardCache,
    amplitude: Vec<f64>,
    theta: Vec<f64>,
}

impl SolitonEmbed {
    pub fn new(dim: usize, hidden: usize, input_scale: f64, rng: &mut Rng) -> Result<Self> {
        let acts = [Activation::Tanh, Activation::Identity];
        Ok(Self {
            amplitude: MlpParams::init(&[1, hidden, dim], &acts, rng)?,
            phase: MlpParams::init(&[1, hidden, dim], &acts, rng)?,
            input_scale,
            tail: SolitonTail::default(),
            profile: SolitonProfile::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.amplitude.out_dim()
    }

    pub fn forward(&self, x: f64) -> Vec<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: f64) -> (Vec<f64>, SolitonCache) {
        let u = [x * self.input_scale];
        let (amplitude, amp_cache) = self.amplitude.forward_cached(&u).expect("1-d input");
        let (z, phase_cache) = self.phase.forward_cached(&u).expect("1-d input");
        let theta: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        let out = amplitude
            .iter()
            .zip(&theta)
            .map(|(&a, &t)| soliton_profile(a, t, self.tail, self.profile).0)
            .collect();
        (
            out,
            SolitonCache {
                amp_cache,
                phase_cache,
                amplitude,
                theta,
            },
        )
    }

    pub fn backward(&self, cache: &SolitonCache, upstream: &[f64]) -> Result<SolitonGrads> {
        let mut d_amp = Vec::with_capacity(upstream.len());
        let mut d_z = Vec::with_capacity(upstream.len());
        for ((&g, &a), &t) in upstream.iter().zip(&cache.amplitude).zip(&cache.theta) {
            let (_, da, dt) = soliton_profile(a, t, self.tail, self.profile);
            d_amp.push(g * da);
            d_z.push(g * dt * (1.0 - t * t));
        }
        Ok(SolitonGrads {
            amplitude: self.amplitude.backward(&cache.amp_cache, &d_amp)?.grads,
            phase: self.phase.backward(&cache.phase_cache, &d_z)?.grads,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolitonGrads {
    pub amplitude: Grads,
    pub phase: Grads,
}

/// Trainable `[366 × d]` lookup table indexed by day of year.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEmbed {
    dim: usize,
    table: Vec<f64>,
}

impl TableEmbed {
    /// Rows drawn from `U(-1, 1)`.
    pub fn new(dim: usize, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let table = (0..TABLE_ROWS * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Ok(Self { dim, table })
    }

    pub fn from_table(dim: usize, table: Vec<f64>) -> Result<Self> {
        if dim == 0 || table.len() != TABLE_ROWS * dim {
            return Err(Error::Validation(format!(
                "table embedding needs {TABLE_ROWS}×{dim} values, got {}",
                table.len()
            )));
        }
        Ok(Self { dim, table })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    pub fn row(&self, day: usize) -> Result<&[f64]> {
        if day >= TABLE_ROWS {
            return Err(Error::Validation(format!("day {day} outside table rows 0..=365")));
        }
        Ok(&self.table[day * self.dim..(day + 1) * self.dim])
    }
}

/// Either embedding behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    Table(TableEmbed),
    Soliton(SolitonEmbed),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbeddingKind {
    Table,
    #[default]
    Soliton,
}

str_enum!(EmbeddingKind, "embedding", "table" => EmbeddingKind::Table, "soliton" => EmbeddingKind::Soliton);

#[derive(Debug, Clone)]
pub enum EmbedCache {
    Table(usize),
    Soliton(SolitonCache),
}

/// Gradients for an embedding; table gradients are stored per touched row.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbedGrads {
    Table(BTreeMap<usize, Vec<f64>>),
    Soliton(SolitonGrads),
}

impl Embedding {
    pub fn kind(&self) -> EmbeddingKind {
        match self {
            Embedding::Table(_) => EmbeddingKind::Table,
            Embedding::Soliton(_) => EmbeddingKind::Soliton,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedding::Table(t) => t.dim(),
            Embedding::Soliton(s) => s.dim(),
        }
    }

    /// Table embeddings require `x` to be an integer day in `0..=365`.
    pub fn forward_cached(&self, x: f64) -> Result<(Vec<f64>, EmbedCache)> {
        match self {
            Embedding::Table(t) => {
                if x.fract() != 0.0 || x < 0.0 {
                    return Err(Error::Validation(format!(
                        "table embedding needs an integer day, got {x}"
                    )));
                }
                let day = x as usize;
                Ok((t.row(day)?.to_vec(), EmbedCache::Table(day)))
            }
            Embedding::Soliton(s) => {
                let (y, c) = s.forward_cached(x);
                Ok((y, EmbedCache::Soliton(c)))
            }
        }
    }

    pub fn backward(&self, cache: &EmbedCache, upstream: &[f64]) -> Result<EmbedGrads> {
        match (self, cache) {
            (Embedding::Table(_), EmbedCache::Table(day)) => {
                Ok(EmbedGrads::Table(BTreeMap::from([(*day, upstream.to_vec())])))
            }
            (Embedding::Soliton(s), EmbedCache::Soliton(c)) => Ok(EmbedGrads::Soliton(s.backward(c, upstream)?)),
            _ => Err(Error::Contract("embedding cache does not match embedding kind".into())),
        }
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Embedding::Table(t) => vec![t.table()],
            Embedding::Soliton(s) => {
                let mut v = s.amplitude.tensors();
                v.extend(s.phase.tensors());
                v
            }
        }
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Embedding::Table(t) => vec![t.table_mut()],
            Embedding::Soliton(s) => {
                let mut v = s.amplitude.tensors_mut();
                v.extend(s.phase.tensors_mut());
                v
            }
        }
    }
}

impl EmbedGrads {
    pub fn add_assign(&mut self, other: &EmbedGrads) {
        match (self, other) {
            (EmbedGrads::Table(a), EmbedGrads::Table(b)) => {
                for (row, g) in b {
                    let e = a.entry(*row).or_insert_with(|| vec![0.0; g.len()]);
                    e.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            (EmbedGrads::Soliton(a), EmbedGrads::Soliton(b)) => {
                a.amplitude.add_assign(&b.amplitude);
                a.phase.add_assign(&b.phase);
            }
            _ => panic!("mixing table and soliton gradients"),
        }
    }

    pub fn scale(&mut self, f: f64) {
        match self {
            EmbedGrads::Table(rows) => rows.values_mut().for_each(|g| g.iter_mut().for_each(|x| *x *= f)),
            EmbedGrads::Soliton(s) => {
                s.amplitude.scale(f);
                s.phase.scale(f);
            }
        }
    }

    /// Dense flat layout matching [`Embedding::tensors`].
    pub fn flatten(&self, embedding: &Embedding) -> Vec<f64> {
        match (self, embedding) {
            (EmbedGrads::Table(rows), Embedding::Table(t)) => {
                let mut flat = vec![0.0; t.table().len()];
                for (row, g) in rows {
                    flat[row * t.dim()..(row + 1) * t.dim()].copy_from_slice(g);
                }
                flat
            }
            (EmbedGrads::Soliton(g), Embedding::Soliton(_)) => {
                let mut v = g.amplitude.flatten();
                v.extend(g.phase.flatten());
                v
            }
            _ => panic!("gradient kind does not match embedding"),
        }
    }
}
