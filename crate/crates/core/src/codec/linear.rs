//! Deterministic linear slice codec: mean + truncated SVD basis.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::volume::Slice;
use nalgebra::DMatrix;

/// Rank-L linear codec. `basis` holds L orthonormal columns of length H·W
/// (column-major); encode projects the centered slice onto them, decode is the
/// adjoint, so decode∘encode is the best rank-L linear reconstruction of the
/// training distribution.
#[derive(Debug, Clone)]
pub struct LinearCodec<T = f64> {
    slice_dims: [usize; 2],
    latent_dim: usize,
    mean: Vec<T>,
    basis: Vec<T>,
}

impl<T: Real> LinearCodec<T> {
    pub(crate) fn from_parts(
        slice_dims: [usize; 2],
        latent_dim: usize,
        mean: Vec<f64>,
        basis: Vec<f64>,
    ) -> Result<Self> {
        let p = slice_dims[0] * slice_dims[1];
        if mean.len() != p || basis.len() != p * latent_dim {
            return Err(Error::validation("linear codec parameter lengths inconsistent"));
        }
        Ok(LinearCodec {
            slice_dims,
            latent_dim,
            mean: mean.into_iter().map(T::of).collect(),
            basis: basis.into_iter().map(T::of).collect(),
        })
    }

    pub fn slice_dims(&self) -> [usize; 2] {
        self.slice_dims
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    /// Column-major (H·W) × L basis.
    pub fn basis(&self) -> &[T] {
        &self.basis
    }

    pub fn encode(&self, data: &[T]) -> Vec<T> {
        let p = self.mean.len();
        let mut out = vec![T::zero(); self.latent_dim];
        for (j, o) in out.iter_mut().enumerate() {
            let col = &self.basis[j * p..(j + 1) * p];
            let mut acc = T::zero();
            for i in 0..p {
                acc += col[i] * (data[i] - self.mean[i]);
            }
            *o = acc;
        }
        out
    }

    pub fn decode(&self, y: &[T]) -> Vec<T> {
        let p = self.mean.len();
        let mut out = self.mean.clone();
        for (j, &yj) in y.iter().enumerate() {
            let col = &self.basis[j * p..(j + 1) * p];
            for i in 0..p {
                out[i] += col[i] * yj;
            }
        }
        out
    }

    /// ‖basisᵀ·basis − I‖∞, which the training contract keeps below 1e-6.
    pub fn orthonormality_defect(&self) -> f64 {
        let p = self.mean.len();
        let mut worst: f64 = 0.0;
        for a in 0..self.latent_dim {
            for b in 0..self.latent_dim {
                let ca = &self.basis[a * p..(a + 1) * p];
                let cb = &self.basis[b * p..(b + 1) * p];
                let dot: f64 = ca
                    .iter()
                    .zip(cb)
                    .map(|(&x, &y)| x.into_f64() * y.into_f64())
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Fits the codec: mean slice plus the top-L left singular vectors of the
/// centered slice matrix.
///
/// The factorization runs in f64 through the Gram matrix of the smaller side
/// (eigendecomposition of X·Xᵀ or XᵀX, whichever is smaller), which is
/// equivalent to the SVD for the retained leading subspace. Degenerate
/// directions (zero variance) are completed with orthonormalized canonical
/// vectors so the basis always has exactly L orthonormal columns; each column's
/// first non-negligible component is made positive so training is
/// bit-reproducible.
pub fn train_linear_codec<T: Real>(slices: &[Slice<T>], latent_dim: usize) -> Result<LinearCodec<T>> {
    let m = slices.len();
    let first = slices
        .first()
        .ok_or_else(|| Error::validation("cannot train a codec on an empty slice list"))?;
    let dims = first.dims();
    let p = dims[0] * dims[1];
    if slices.iter().any(|s| s.dims() != dims) {
        return Err(Error::validation("training slices have mixed dims"));
    }
    if latent_dim == 0 {
        return Err(Error::validation("latent dim must be at least 1"));
    }
    if latent_dim > m.min(p) {
        return Err(Error::validation(format!(
            "latent dim {latent_dim} exceeds min(#slices = {m}, pixels = {p})"
        )));
    }

    let mut mean = vec![0.0f64; p];
    for s in slices {
        for (acc, &v) in mean.iter_mut().zip(s.data()) {
            *acc += v.into_f64();
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }

    // centered data, column i = slice i
    let xc = DMatrix::<f64>::from_fn(p, m, |i, j| slices[j].data()[i].into_f64() - mean[i]);

    let mut basis_cols: Vec<Vec<f64>> = Vec::with_capacity(latent_dim);
    if p <= m {
        let cov = &xc * xc.transpose();
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let scale = eig.eigenvalues[order[0]].max(0.0);
        for &i in order.iter().take(latent_dim) {
            if eig.eigenvalues[i].max(0.0) > scale * 1e-24 {
                basis_cols.push(eig.eigenvectors.column(i).iter().cloned().collect());
            }
        }
    } else {
        let gram = xc.transpose() * &xc;
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let smax = eig.eigenvalues[order[0]].max(0.0).sqrt();
        for &i in order.iter().take(latent_dim) {
            let s = eig.eigenvalues[i].max(0.0).sqrt();
            if s > smax * 1e-12 {
                let u = (&xc * eig.eigenvectors.column(i)) / s;
                basis_cols.push(u.iter().cloned().collect());
            }
        }
    }
    complete_basis(&mut basis_cols, p, latent_dim);
    for col in &mut basis_cols {
        fix_sign(col);
    }

    let mut basis = Vec::with_capacity(p * latent_dim);
    for col in &basis_cols {
        basis.extend_from_slice(col);
    }
    LinearCodec::from_parts(dims, latent_dim, mean, basis)
}

/// Extends `cols` to `want` orthonormal columns using canonical vectors
/// orthogonalized against the current set (two Gram-Schmidt passes).
fn complete_basis(cols: &mut Vec<Vec<f64>>, p: usize, want: usize) {
    let mut candidate = 0usize;
    while cols.len() < want && candidate < p {
        let mut v = vec![0.0f64; p];
        v[candidate] = 1.0;
        candidate += 1;
        for _ in 0..2 {
            for col in cols.iter() {
                let dot: f64 = v.iter().zip(col).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(col) {
                    *vi -= dot * ci;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.5 {
            for vi in &mut v {
                *vi /= norm;
            }
            cols.push(v);
        }
    }
    assert_eq!(cols.len(), want, "basis completion failed");
}

fn fix_sign(col: &mut [f64]) {
    if let Some(&lead) = col.iter().find(|c| c.abs() > 1e-9) {
        if lead < 0.0 {
            for c in col.iter_mut() {
                *c = -*c;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_slices(n: usize, dims: [usize; 2], seed: u64) -> Vec<Slice<f64>> {
        let mut rng = SplitMix64::new(seed);
        (0..n)
            .map(|_| {
                let data = (0..dims[0] * dims[1]).map(|_| rng.next_f64()).collect();
                Slice::new(dims, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn identical_slices_give_zero_codes_and_mean_decode() {
        let s = Slice::new([3, 3], (0..9).map(|i| i as f64 / 9.0).collect()).unwrap();
        let slices = vec![s.clone(); 10];
        let m = train_linear_codec(&slices, 4).unwrap();
        assert!(m.orthonormality_defect() < 1e-6);
        let code = m.encode(s.data());
        assert!(code.iter().all(|&c| c.abs() < 1e-12), "{code:?}");
        let back = m.decode(&vec![0.0; 4]);
        for (a, b) in back.iter().zip(s.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn full_rank_training_set_reconstructs_exactly() {
        // #slices = L, independent after centering
        let slices = random_slices(6, [4, 4], 5);
        let m = train_linear_codec(&slices, 6).unwrap();
        for s in &slices {
            let back = m.decode(&m.encode(s.data()));
            for (a, b) in back.iter().zip(s.data()) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn reconstruction_error_matches_svd_oracle() {
        // 50 random 8x8 slices at L = 5: MSE must equal the discarded spectral
        // mass (sum of dropped squared singular values over 50·64), with the
        // singular values taken from an independent full SVD.
        let slices = random_slices(50, [8, 8], 11);
        let l = 5usize;
        let m = train_linear_codec(&slices, l).unwrap();

        let mut mse = 0.0f64;
        for s in &slices {
            let back = m.decode(&m.encode(s.data()));
            mse += back
                .iter()
                .zip(s.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        mse /= (50 * 64) as f64;

        // oracle: full SVD of the centered slice matrix
        let p = 64;
        let mut mean = vec![0.0f64; p];
        for s in &slices {
            for (acc, &v) in mean.iter_mut().zip(s.data()) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= 50.0;
        }
        let xc = DMatrix::<f64>::from_fn(p, 50, |i, j| slices[j].data()[i] - mean[i]);
        let svd = xc.svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().cloned().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let discarded: f64 = sv.iter().skip(l).map(|s| s * s).sum();
        let expect = discarded / (50.0 * 64.0);

        assert!((mse - expect).abs() < 1e-8, "mse {mse} vs oracle {expect}");
    }

    #[test]
    fn encode_of_mean_plus_basis_column_is_unit_vector() {
        let slices = random_slices(20, [4, 5], 3);
        let m = train_linear_codec(&slices, 3).unwrap();
        let p = 20;

        let zero = m.encode(m.mean());
        assert!(zero.iter().all(|&c| c.abs() < 1e-12));

        for j in 0..3 {
            let col = &m.basis()[j * p..(j + 1) * p];
            let probe: Vec<f64> = m.mean().iter().zip(col).map(|(a, b)| a + b).collect();
            let code = m.encode(&probe);
            for (i, &c) in code.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((c - want).abs() < 1e-10, "dim {i}: {c}");
            }
        }
    }

    #[test]
    fn residual_is_orthogonal_to_basis() {
        let slices = random_slices(30, [6, 6], 17);
        let m = train_linear_codec(&slices, 4).unwrap();
        let p = 36;
        for s in slices.iter().take(5) {
            let back = m.decode(&m.encode(s.data()));
            let resid: Vec<f64> = s.data().iter().zip(&back).map(|(a, b)| a - b).collect();
            for j in 0..4 {
                let col = &m.basis()[j * p..(j + 1) * p];
                let dot: f64 = resid.iter().zip(col).map(|(a, b)| a * b).sum();
                assert!(dot.abs() < 1e-6, "column {j} dot {dot}");
            }
        }
    }

    #[test]
    fn training_mse_is_monotone_in_latent_dim() {
        let slices = random_slices(25, [5, 5], 23);
        let mse_at = |l: usize| {
            let m = train_linear_codec(&slices, l).unwrap();
            let mut mse = 0.0f64;
            for s in &slices {
                let back = m.decode(&m.encode(s.data()));
                mse += back
                    .iter()
                    .zip(s.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
            mse
        };
        let mut prev = f64::INFINITY;
        for l in 1..=8 {
            let cur = mse_at(l);
            assert!(cur <= prev + 1e-9, "L={l}: {cur} > {prev}");
            prev = cur;
        }
    }

    #[test]
    fn oversized_latent_dim_is_rejected() {
        let slices = random_slices(4, [3, 3], 1);
        assert!(train_linear_codec(&slices, 5).is_err());
        assert!(train_linear_codec(&slices, 0).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let slices = random_slices(15, [4, 4], 9);
        let a = train_linear_codec(&slices, 3).unwrap();
        let b = train_linear_codec(&slices, 3).unwrap();
        assert_eq!(a.basis(), b.basis());
        assert_eq!(a.mean(), b.mean());
    }
}
