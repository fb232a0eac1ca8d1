//! Slice encoder/decoders behind one interface.
//!
//! Two codec families live here: a deterministic linear codec (truncated SVD
//! of the centered training slices) and a fully connected VAE trained with
//! Adam. Both map slices to L-dimensional latent vectors and back; the rest of
//! the pipeline only sees [`CodecModel`].
//!
//! Model file format (`.scdc`, little-endian): magic "SCDC", version u16 = 1,
//! kind u16 (1 = linear, 2 = vae), latent dim u32, slice dims 2×u32, then
//! length-prefixed f32 arrays (u32 count, then values). Array order for the
//! linear kind: mean slice (H·W), basis (H·W × L, column-major). For the vae
//! kind: weights then bias per layer, encoder layers first, in forward order
//! (enc 1..3, dec 1..3); weights are row-major (out × in). The hidden width is
//! recovered from the first encoder bias length.

mod linear;
mod vae;

pub use linear::{train_linear_codec, LinearCodec};
pub use vae::{train_vae_codec, Dense, SweepEntry, TrainConfig, TrainingReport, VaeCodec};

use crate::error::{Error, Result};
use crate::io::{push_f32, push_u16, push_u32, read_bytes, write_bytes, Cursor};
use crate::latent::LatentSequence;
use crate::real::Real;
use crate::rng::NormalSource;
use crate::volume::{Axis, Slice, Volume};
use std::path::Path;

/// Whether encoding returns the posterior mean or a reparameterized sample.
/// The linear codec is deterministic and ignores the mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    Mean,
    Sample,
}

#[derive(Debug, Clone)]
pub enum CodecModel<T = f64> {
    Linear(LinearCodec<T>),
    Vae(VaeCodec<T>),
}

impl<T: Real> CodecModel<T> {
    pub fn slice_dims(&self) -> [usize; 2] {
        match self {
            CodecModel::Linear(m) => m.slice_dims(),
            CodecModel::Vae(m) => m.slice_dims(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            CodecModel::Linear(m) => m.latent_dim(),
            CodecModel::Vae(m) => m.latent_dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            CodecModel::Linear(_) => "linear",
            CodecModel::Vae(_) => "vae",
        }
    }

    fn check_slice(&self, s: &Slice<T>) -> Result<()> {
        if s.dims() != self.slice_dims() {
            return Err(Error::validation(format!(
                "slice dims {:?} do not match codec dims {:?}",
                s.dims(),
                self.slice_dims()
            )));
        }
        Ok(())
    }

    pub fn encode_slice(
        &self,
        s: &Slice<T>,
        mode: EncodeMode,
        rng: &mut impl NormalSource,
    ) -> Result<Vec<T>> {
        self.check_slice(s)?;
        Ok(match self {
            CodecModel::Linear(m) => m.encode(s.data()),
            CodecModel::Vae(m) => m.encode(s.data(), mode, rng),
        })
    }

    /// Posterior-mean encode; the deterministic path used for model fitting.
    pub fn encode_mean(&self, s: &Slice<T>) -> Result<Vec<T>> {
        self.encode_slice(s, EncodeMode::Mean, &mut crate::rng::ZeroNoise)
    }

    pub fn decode_latent(&self, y: &[T]) -> Result<Slice<T>> {
        if y.len() != self.latent_dim() {
            return Err(Error::validation(format!(
                "latent vector length {} does not match codec latent dim {}",
                y.len(),
                self.latent_dim()
            )));
        }
        let data = match self {
            CodecModel::Linear(m) => m.decode(y),
            CodecModel::Vae(m) => m.decode(y),
        };
        Slice::new(self.slice_dims(), data)
    }
}

/// Encodes every slice of `v` along `axis` with the posterior mean; row t of
/// the result is the code of slice t.
pub fn encode_volume<T: Real, V: Real>(
    m: &CodecModel<T>,
    v: &Volume<V>,
    axis: Axis,
) -> Result<LatentSequence<T>> {
    let slices = v.slices(axis);
    let mut rows = Vec::with_capacity(slices.len());
    for s in &slices {
        let s_t = s.map(|x| T::of(x.into_f64()));
        rows.push(m.encode_mean(&s_t)?);
    }
    LatentSequence::from_rows(&rows)
}

const SCDC_MAGIC: &[u8; 4] = b"SCDC";
const SCDC_VERSION: u16 = 1;
const KIND_LINEAR: u16 = 1;
const KIND_VAE: u16 = 2;

fn push_array<T: Real>(out: &mut Vec<u8>, values: &[T]) {
    push_u32(out, values.len() as u32);
    for v in values {
        push_f32(out, v.into_f64() as f32);
    }
}

fn read_array(c: &mut Cursor, expect_len: usize, what: &str) -> Result<Vec<f64>> {
    let n = c.u32()? as usize;
    if n != expect_len {
        return Err(Error::format(format!(
            "codec file: array {what} has length {n}, expected {expect_len}"
        )));
    }
    let vals = c.f32_vec(n)?;
    if let Some(bad) = vals.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("codec file: non-finite value {bad} in {what}")));
    }
    Ok(vals.into_iter().map(|v| v as f64).collect())
}

/// Parameters are stored as f32; saving a freshly loaded model reproduces the
/// file bit-for-bit because the truncation is idempotent.
pub fn save_codec<T: Real>(m: &CodecModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(SCDC_MAGIC);
    push_u16(&mut out, SCDC_VERSION);
    let [h, w] = m.slice_dims();
    match m {
        CodecModel::Linear(lin) => {
            push_u16(&mut out, KIND_LINEAR);
            push_u32(&mut out, m.latent_dim() as u32);
            push_u32(&mut out, h as u32);
            push_u32(&mut out, w as u32);
            push_array(&mut out, lin.mean());
            push_array(&mut out, lin.basis());
        }
        CodecModel::Vae(vae) => {
            push_u16(&mut out, KIND_VAE);
            push_u32(&mut out, m.latent_dim() as u32);
            push_u32(&mut out, h as u32);
            push_u32(&mut out, w as u32);
            for layer in vae.layers() {
                push_array(&mut out, &layer.w);
                push_array(&mut out, &layer.b);
            }
        }
    }
    write_bytes(path.as_ref(), &out)
}

pub fn load_codec(path: impl AsRef<Path>) -> Result<CodecModel<f64>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let what = format!("codec {}", path.display());
    let mut c = Cursor::new(&bytes, &what);
    c.magic(SCDC_MAGIC)?;
    let version = c.u16()?;
    if version != SCDC_VERSION {
        return Err(Error::format(format!("{what}: unsupported version {version}")));
    }
    let kind = c.u16()?;
    let latent_dim = c.u32()? as usize;
    let dims = [c.u32()? as usize, c.u32()? as usize];
    if latent_dim == 0 || dims[0] == 0 || dims[1] == 0 {
        return Err(Error::format(format!("{what}: zero dimension in header")));
    }
    let p = dims[0] * dims[1];
    let model = match kind {
        KIND_LINEAR => {
            let mean = read_array(&mut c, p, "mean")?;
            let basis = read_array(&mut c, p * latent_dim, "basis")?;
            CodecModel::Linear(LinearCodec::from_parts(dims, latent_dim, mean, basis)?)
        }
        KIND_VAE => {
            // hidden width comes from the first encoder bias
            let w1 = {
                let n = c.u32()? as usize;
                if n % p != 0 || n == 0 {
                    return Err(Error::format(format!(
                        "{what}: encoder weight length {n} not a multiple of slice size {p}"
                    )));
                }
                let vals = c.f32_vec(n)?;
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation(format!("{what}: non-finite parameter")));
                }
                vals.into_iter().map(|v| v as f64).collect::<Vec<_>>()
            };
            let hidden = w1.len() / p;
            let b1 = read_array(&mut c, hidden, "enc1 bias")?;
            let w2 = read_array(&mut c, hidden * hidden, "enc2 weight")?;
            let b2 = read_array(&mut c, hidden, "enc2 bias")?;
            let w3 = read_array(&mut c, 2 * latent_dim * hidden, "enc3 weight")?;
            let b3 = read_array(&mut c, 2 * latent_dim, "enc3 bias")?;
            let v1 = read_array(&mut c, hidden * latent_dim, "dec1 weight")?;
            let c1 = read_array(&mut c, hidden, "dec1 bias")?;
            let v2 = read_array(&mut c, hidden * hidden, "dec2 weight")?;
            let c2 = read_array(&mut c, hidden, "dec2 bias")?;
            let v3 = read_array(&mut c, p * hidden, "dec3 weight")?;
            let c3 = read_array(&mut c, p, "dec3 bias")?;
            let layers = [
                Dense::from_parts(p, hidden, w1, b1),
                Dense::from_parts(hidden, hidden, w2, b2),
                Dense::from_parts(hidden, 2 * latent_dim, w3, b3),
                Dense::from_parts(latent_dim, hidden, v1, c1),
                Dense::from_parts(hidden, hidden, v2, c2),
                Dense::from_parts(hidden, p, v3, c3),
            ];
            CodecModel::Vae(VaeCodec::from_layers(dims, latent_dim, hidden, layers)?)
        }
        other => return Err(Error::format(format!("{what}: unknown codec kind {other}"))),
    };
    c.finish()?;
    Ok(model)
}
