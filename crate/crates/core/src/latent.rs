//! Per-dimension Gaussian models over the slice axis.
//!
//! A volume encoded slice-by-slice becomes a T×L latent sequence. Treating
//! each latent dimension l independently, the T-vector y_l collected across N
//! training volumes gets a Gaussian: mean μ_l and a low-rank factor W_l built
//! from the SVD of the centered data so that W_l·W_lᵀ equals the N-denominator
//! sample covariance exactly. Sequences are drawn as y_l = W_l·z_l + μ_l with
//! standard normal z_l, independent across dimensions, and decoded slice-wise
//! back into volumes.
//!
//! Model file format (`.slgm`, little-endian): magic "SLGM", version u16 = 1,
//! L u32, T u32, N u32, ridge f64, then per dimension: μ_l (T f64), r_l u32,
//! W_l (T·r_l f64, column-major).

use crate::codec::CodecModel;
use crate::error::{Error, Result};
use crate::io::{push_f64, push_u16, push_u32, read_bytes, write_bytes, Cursor};
use crate::real::Real;
use crate::rng::NormalSource;
use crate::volume::{Axis, Volume};
use nalgebra::DMatrix;
use std::path::Path;

/// Singular values at or below this fraction of the largest are treated as
/// zero variance and dropped from the factor.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// T×L matrix of latent codes, row t = code of slice t.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence<T = f64> {
    t_len: usize,
    latent_dim: usize,
    /// Row-major T×L.
    values: Vec<T>,
}

impl<T: Real> LatentSequence<T> {
    pub fn new(t_len: usize, latent_dim: usize, values: Vec<T>) -> Result<Self> {
        if t_len == 0 || latent_dim == 0 {
            return Err(Error::validation("latent sequence needs T >= 1 and L >= 1"));
        }
        if values.len() != t_len * latent_dim {
            return Err(Error::length(format!(
                "latent sequence of {}x{} needs {} values, got {}",
                t_len,
                latent_dim,
                t_len * latent_dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("latent sequence entries must be finite"));
        }
        Ok(LatentSequence {
            t_len,
            latent_dim,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let t_len = rows.len();
        let latent_dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != latent_dim) {
            return Err(Error::validation("latent sequence rows have mixed lengths"));
        }
        LatentSequence::new(t_len, latent_dim, rows.concat())
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn value(&self, t: usize, l: usize) -> T {
        self.values[t * self.latent_dim + l]
    }

    pub fn row(&self, t: usize) -> &[T] {
        &self.values[t * self.latent_dim..(t + 1) * self.latent_dim]
    }

    /// The paper's y_l: this dimension's value at every slice.
    pub fn column(&self, l: usize) -> Vec<T> {
        (0..self.t_len).map(|t| self.value(t, l)).collect()
    }
}

#[derive(Debug, Clone)]
struct DimModel<T> {
    /// Sample mean over training volumes, length T.
    mu: Vec<T>,
    /// T×r factor, column-major; r = 0 for zero-variance dimensions.
    w: Vec<T>,
    rank: usize,
}

/// Per-dimension Gaussians over the slice axis; the product over dimensions is
/// the block-diagonal model for a whole sequence.
#[derive(Debug, Clone)]
pub struct SliceLatentModel<T = f64> {
    t_len: usize,
    n_train: usize,
    ridge_eps: T,
    dims: Vec<DimModel<T>>,
}

impl<T: Real> SliceLatentModel<T> {
    fn from_parts(
        t_len: usize,
        n_train: usize,
        ridge_eps: T,
        dims: Vec<DimModel<T>>,
    ) -> Result<Self> {
        if t_len == 0 || dims.is_empty() {
            return Err(Error::validation("latent model needs T >= 1 and L >= 1"));
        }
        for d in &dims {
            if d.mu.len() != t_len || d.w.len() != t_len * d.rank || d.rank > t_len.min(n_train) {
                return Err(Error::validation("latent model factor shapes inconsistent"));
            }
            if d.mu.iter().chain(&d.w).any(|v| !v.is_finite()) {
                return Err(Error::validation("latent model parameters must be finite"));
            }
        }
        if !ridge_eps.is_finite() || ridge_eps < T::zero() {
            return Err(Error::validation("ridge must be finite and non-negative"));
        }
        Ok(SliceLatentModel {
            t_len,
            n_train,
            ridge_eps,
            dims,
        })
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn latent_dim(&self) -> usize {
        self.dims.len()
    }

    /// Number of training volumes the fit saw.
    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn ridge_eps(&self) -> T {
        self.ridge_eps
    }

    pub fn mean(&self, l: usize) -> &[T] {
        &self.dims[l].mu
    }

    /// Column-major T×rank(l) factor.
    pub fn factor(&self, l: usize) -> &[T] {
        &self.dims[l].w
    }

    pub fn rank(&self, l: usize) -> usize {
        self.dims[l].rank
    }

    /// W_l·W_lᵀ + ridge·I as a dense matrix, the covariance the log-density
    /// integrates against.
    fn covariance(&self, l: usize) -> DMatrix<f64> {
        let t = self.t_len;
        let d = &self.dims[l];
        let w = DMatrix::<f64>::from_fn(t, d.rank, |i, k| d.w[k * t + i].into_f64());
        let mut c = &w * w.transpose();
        let ridge = self.ridge_eps.into_f64();
        for i in 0..t {
            c[(i, i)] += ridge;
        }
        c
    }
}

/// Fits one Gaussian per latent dimension from N encoded training volumes.
///
/// For dimension l the columns y_l of all sequences form a T×N matrix X; its
/// row mean is μ_l, and the SVD of the centered matrix gives W_l = U·diag(s)/√N
/// over the singular values above `rank_tol`·s_max, so W_l·W_lᵀ reproduces the
/// N-denominator sample covariance exactly. Each kept factor's first
/// non-negligible component is made positive, which pins its sign.
///
/// The factorization goes through the symmetric eigendecomposition of the
/// smaller of X·Xᵀ and Xᵀ·X rather than a direct SVD of X: on exactly
/// rank-deficient fits (fewer training volumes than positions, the usual
/// case) a bidiagonalization SVD can stall short of full accuracy, while the
/// Gram route keeps W·Wᵀ faithful to the sample covariance at machine
/// precision. Singular values are taken as the projection amplitudes ‖Xᵀ·u_k‖
/// or ‖X·v_k‖, not as √λ_k: the products are exact even where the
/// eigensolver reports noise-level λ for an exactly zero direction, so rank
/// detection does not inflate on degenerate fits.
///
/// The stored ridge, used only by the log-density, is 1e-6 times the average
/// per-slice variance, with a tiny floor so fully degenerate fits still score.
///
/// Besides the relative cut, singular values indistinguishable from zero at
/// machine precision (relative to the uncentered data norm) are dropped even
/// when they are the largest: identical training sequences must fit to rank 0,
/// and centering noise alone would otherwise promote them to rank 1.
pub fn fit_latent_model<T: Real>(
    sequences: &[LatentSequence<T>],
    rank_tol: f64,
) -> Result<SliceLatentModel<T>> {
    let n = sequences.len();
    if n < 2 {
        return Err(Error::validation(format!(
            "fitting needs at least 2 sequences, got {n}"
        )));
    }
    let t = sequences[0].t_len();
    let l_dim = sequences[0].latent_dim();
    if sequences.iter().any(|s| s.t_len() != t || s.latent_dim() != l_dim) {
        return Err(Error::validation("sequences have mixed shapes"));
    }
    if !(rank_tol.is_finite() && rank_tol >= 0.0) {
        return Err(Error::validation("rank tolerance must be finite and non-negative"));
    }

    let sqrt_n = (n as f64).sqrt();
    let mut dims = Vec::with_capacity(l_dim);
    let mut trace_sum = 0.0f64;
    for l in 0..l_dim {
        let mut y = DMatrix::<f64>::from_fn(t, n, |i, j| sequences[j].value(i, l).into_f64());
        let data_scale = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let zero_floor = f64::EPSILON * data_scale * t.max(n) as f64;
        let mut mu = vec![0.0f64; t];
        for (i, m) in mu.iter_mut().enumerate() {
            *m = y.row(i).sum() / n as f64;
        }
        for j in 0..n {
            for i in 0..t {
                y[(i, j)] -= mu[i];
            }
        }
        trace_sum += y.iter().map(|v| v * v).sum::<f64>() / (n as f64 * t as f64);

        // factor columns w_k = u_k·s_k/√N, from the smaller Gram matrix:
        // X·Xᵀ directly yields u_k; Xᵀ·X yields v_k with u_k·s_k = X·v_k
        let mut cands: Vec<(f64, Vec<f64>)> = Vec::with_capacity(t.min(n));
        if t <= n {
            let eig = (&y * y.transpose()).symmetric_eigen();
            for k in 0..t {
                let u = eig.eigenvectors.column(k);
                let s = (y.transpose() * u).norm();
                cands.push((s, u.iter().map(|&c| c * s / sqrt_n).collect()));
            }
        } else {
            let eig = (y.transpose() * &y).symmetric_eigen();
            for k in 0..n {
                let r = &y * eig.eigenvectors.column(k);
                let s = r.norm();
                cands.push((s, r.iter().map(|&c| c / sqrt_n).collect()));
            }
        }
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let s_max = cands[0].0;

        let mut w = Vec::new();
        let mut rank = 0;
        for (s, col) in &cands {
            if *s <= rank_tol * s_max || *s <= zero_floor {
                break;
            }
            let scale = s / sqrt_n;
            let sign = col
                .iter()
                .find(|c| c.abs() > 1e-9 * scale)
                .map_or(1.0, |&c| if c < 0.0 { -1.0 } else { 1.0 });
            w.extend(col.iter().map(|&c| T::of(sign * c)));
            rank += 1;
        }
        dims.push(DimModel {
            mu: mu.into_iter().map(T::of).collect(),
            w,
            rank,
        });
    }

    let mean_var = trace_sum / l_dim as f64;
    let ridge = if mean_var > 0.0 { 1e-6 * mean_var } else { 1e-12 };
    SliceLatentModel::from_parts(t, n, T::of(ridge), dims)
}

/// Draws one sequence: column l = W_l·z_l + μ_l with z_l standard normal,
/// dimensions in order and z components in factor-column order, so a given rng
/// state maps to exactly one sequence.
pub fn sample_latent<T: Real>(
    m: &SliceLatentModel<T>,
    rng: &mut impl NormalSource,
) -> LatentSequence<T> {
    let t = m.t_len;
    let mut values = vec![T::zero(); t * m.latent_dim()];
    for (l, d) in m.dims.iter().enumerate() {
        let mut col: Vec<T> = d.mu.clone();
        for k in 0..d.rank {
            let z = T::of(rng.next_standard_normal());
            let wcol = &d.w[k * t..(k + 1) * t];
            for i in 0..t {
                col[i] += wcol[i] * z;
            }
        }
        for i in 0..t {
            values[i * m.latent_dim() + l] = col[i];
        }
    }
    LatentSequence {
        t_len: t,
        latent_dim: m.latent_dim(),
        values,
    }
}

/// Σ_l log N(y_l | μ_l, W_l·W_lᵀ + ridge·I), the log-density of the sequence
/// under the block-diagonal Gaussian.
pub fn latent_log_density<T: Real>(m: &SliceLatentModel<T>, seq: &LatentSequence<T>) -> Result<T> {
    if seq.t_len() != m.t_len || seq.latent_dim() != m.latent_dim() {
        return Err(Error::validation(format!(
            "sequence is {}x{} but the model is {}x{}",
            seq.t_len(),
            seq.latent_dim(),
            m.t_len,
            m.latent_dim()
        )));
    }
    let t = m.t_len;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0f64;
    for (l, d) in m.dims.iter().enumerate() {
        let cov = m.covariance(l);
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::validation("covariance block is not positive definite"))?;
        let resid = nalgebra::DVector::<f64>::from_fn(t, |i, _| {
            (seq.value(i, l) - d.mu[i]).into_f64()
        });
        let solved = chol.solve(&resid);
        let quad = resid.dot(&solved);
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        total += -0.5 * (t as f64 * ln_2pi + logdet + quad);
    }
    Ok(T::of(total))
}

/// Samples a latent sequence and decodes it slice-by-slice into a volume laid
/// out along `axis`.
pub fn synthesize_volume<T: Real>(
    m: &SliceLatentModel<T>,
    codec: &CodecModel<T>,
    rng: &mut impl NormalSource,
    axis: Axis,
    spacing: [f32; 3],
) -> Result<Volume<f32>> {
    if codec.latent_dim() != m.latent_dim() {
        return Err(Error::validation(format!(
            "codec latent dim {} does not match model latent dim {}",
            codec.latent_dim(),
            m.latent_dim()
        )));
    }
    let seq = sample_latent(m, rng);
    let mut slices = Vec::with_capacity(seq.t_len());
    for t in 0..seq.t_len() {
        let decoded = codec.decode_latent(seq.row(t))?;
        slices.push(decoded.map(|v| v.into_f64() as f32));
    }
    Volume::from_slices(&slices, axis, spacing)
}

/// Encodes every volume along `axis` and fits the latent model at the default
/// rank tolerance.
pub fn fit_pipeline<T: Real, V: Real>(
    volumes: &[Volume<V>],
    codec: &CodecModel<T>,
    axis: Axis,
) -> Result<SliceLatentModel<T>> {
    let mut sequences = Vec::with_capacity(volumes.len());
    for v in volumes {
        sequences.push(crate::codec::encode_volume(codec, v, axis)?);
    }
    fit_latent_model(&sequences, DEFAULT_RANK_TOL)
}

const SLGM_MAGIC: &[u8; 4] = b"SLGM";
const SLGM_VERSION: u16 = 1;

pub fn save_latent_model<T: Real>(m: &SliceLatentModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(SLGM_MAGIC);
    push_u16(&mut out, SLGM_VERSION);
    push_u32(&mut out, m.latent_dim() as u32);
    push_u32(&mut out, m.t_len as u32);
    push_u32(&mut out, m.n_train as u32);
    push_f64(&mut out, m.ridge_eps.into_f64());
    for d in &m.dims {
        for &v in &d.mu {
            push_f64(&mut out, v.into_f64());
        }
        push_u32(&mut out, d.rank as u32);
        for &v in &d.w {
            push_f64(&mut out, v.into_f64());
        }
    }
    write_bytes(path.as_ref(), &out)
}

pub fn load_latent_model(path: impl AsRef<Path>) -> Result<SliceLatentModel<f64>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let what = format!("latent model {}", path.display());
    let mut c = Cursor::new(&bytes, &what);
    c.magic(SLGM_MAGIC)?;
    let version = c.u16()?;
    if version != SLGM_VERSION {
        return Err(Error::format(format!("{what}: unsupported version {version}")));
    }
    let l_dim = c.u32()? as usize;
    let t = c.u32()? as usize;
    let n = c.u32()? as usize;
    let ridge = c.f64()?;
    if l_dim == 0 || t == 0 {
        return Err(Error::format(format!("{what}: zero dimension in header")));
    }
    let mut dims = Vec::with_capacity(l_dim);
    for _ in 0..l_dim {
        let mu = c.f64_vec(t)?;
        let rank = c.u32()? as usize;
        if rank > t.min(n) {
            return Err(Error::format(format!(
                "{what}: factor rank {rank} exceeds min(T = {t}, N = {n})"
            )));
        }
        let w = c.f64_vec(t * rank)?;
        dims.push(DimModel { mu, w, rank });
    }
    c.finish()?;
    SliceLatentModel::from_parts(t, n, ridge, dims)
}
