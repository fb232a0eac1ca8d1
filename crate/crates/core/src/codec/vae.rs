//! Fully connected VAE codec and its Adam trainer.
//!
//! Encoder layers are sized [H·W, h, h, 2L] and the decoder mirrors them as
//! [L, h, h, H·W]; hidden layers use a leaky rectifier with slope 0.2 (the
//! derivative at 0 is taken as 0.2). The encoder output splits into a
//! posterior mean and a log-variance, sampling uses z = μ + σ⊙ε, and the loss
//! is per-pixel reconstruction MSE plus `beta_kl` times the mean KL divergence
//! ½Σ(μ² + σ² − log σ² − 1) to the standard normal.

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::real::Real;
use crate::rng::{NormalSource, SplitMix64};
use crate::volume::Slice;

use super::EncodeMode;

const LEAKY_SLOPE: f64 = 0.2;

// Substream tags for the trainer; each derived stream is independent of the
// raw seed stream and of the phantom generator's tags.
const TAG_SPLIT: u64 = 0xC0DE_0001;
const TAG_INIT: u64 = 0xC0DE_0002;
const TAG_SHUFFLE: u64 = 0xC0DE_0100;
const TAG_EPS: u64 = 0xC0DE_0200;

/// One affine layer; `w` is row-major (out × in).
#[derive(Debug, Clone)]
pub struct Dense<T = f64> {
    pub w: Vec<T>,
    pub b: Vec<T>,
    in_dim: usize,
    out_dim: usize,
}

impl<T: Real> Dense<T> {
    pub(crate) fn from_parts(in_dim: usize, out_dim: usize, w: Vec<f64>, b: Vec<f64>) -> Self {
        assert_eq!(w.len(), in_dim * out_dim);
        assert_eq!(b.len(), out_dim);
        Dense {
            w: w.into_iter().map(T::of).collect(),
            b: b.into_iter().map(T::of).collect(),
            in_dim,
            out_dim,
        }
    }

    fn random(in_dim: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        // symmetric uniform at scale 1/sqrt(fan_in), zero biases
        let scale = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| T::of((rng.next_f64() * 2.0 - 1.0) * scale))
            .collect();
        Dense {
            w,
            b: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn forward(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut out = self.b.clone();
        for (o, acc) in out.iter_mut().enumerate() {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                *acc += row[i] * x[i];
            }
        }
        out
    }

    /// Accumulates parameter gradients and the gradient w.r.t. the input.
    /// `g_out` is dL/d(affine output); `g_in` must be zeroed by the caller.
    fn backward(&self, x: &[T], g_out: &[T], gw: &mut [T], gb: &mut [T], g_in: &mut [T]) {
        for o in 0..self.out_dim {
            let go = g_out[o];
            gb[o] += go;
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += go * x[i];
                g_in[i] += go * row[i];
            }
        }
    }
}

fn leaky_relu<T: Real>(v: &mut [T]) {
    let slope = T::of(LEAKY_SLOPE);
    for x in v {
        if *x < T::zero() {
            *x *= slope;
        }
    }
}

/// Derivative recovered from the post-activation value: the rectifier
/// preserves sign, so `a > 0` iff the pre-activation was positive, and 0 maps
/// to the sub-gradient choice 0.2.
fn leaky_slope_at<T: Real>(a: T) -> T {
    if a > T::zero() {
        T::one()
    } else {
        T::of(LEAKY_SLOPE)
    }
}

/// Fully connected VAE. Layers in order: encoder 1..3, decoder 1..3; the
/// flattened parameter vector interleaves weights and biases in that order.
#[derive(Debug, Clone)]
pub struct VaeCodec<T = f64> {
    slice_dims: [usize; 2],
    latent_dim: usize,
    hidden: usize,
    layers: [Dense<T>; 6],
}

impl<T: Real> VaeCodec<T> {
    pub(crate) fn from_layers(
        slice_dims: [usize; 2],
        latent_dim: usize,
        hidden: usize,
        layers: [Dense<T>; 6],
    ) -> Result<Self> {
        let p = slice_dims[0] * slice_dims[1];
        let want = [
            (p, hidden),
            (hidden, hidden),
            (hidden, 2 * latent_dim),
            (latent_dim, hidden),
            (hidden, hidden),
            (hidden, p),
        ];
        for (layer, (i, o)) in layers.iter().zip(want) {
            if layer.in_dim != i || layer.out_dim != o {
                return Err(Error::validation("vae layer shapes inconsistent with header"));
            }
            if layer.w.iter().chain(&layer.b).any(|v| !v.is_finite()) {
                return Err(Error::validation("vae parameters must be finite"));
            }
        }
        Ok(VaeCodec {
            slice_dims,
            latent_dim,
            hidden,
            layers,
        })
    }

    /// Seeded fan-in-scaled uniform initialization, the starting point of
    /// every training run and a stable evaluation point for gradient checks.
    pub fn random(slice_dims: [usize; 2], latent_dim: usize, hidden: usize, seed: u64) -> Self {
        let p = slice_dims[0] * slice_dims[1];
        let mut rng = SplitMix64::derive(seed, TAG_INIT);
        let layers = [
            Dense::random(p, hidden, &mut rng),
            Dense::random(hidden, hidden, &mut rng),
            Dense::random(hidden, 2 * latent_dim, &mut rng),
            Dense::random(latent_dim, hidden, &mut rng),
            Dense::random(hidden, hidden, &mut rng),
            Dense::random(hidden, p, &mut rng),
        ];
        VaeCodec {
            slice_dims,
            latent_dim,
            hidden,
            layers,
        }
    }

    pub fn slice_dims(&self) -> [usize; 2] {
        self.slice_dims
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn layers(&self) -> &[Dense<T>; 6] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, p: &[T]) {
        assert_eq!(p.len(), self.param_count());
        let mut at = 0;
        for l in &mut self.layers {
            let wn = l.w.len();
            l.w.copy_from_slice(&p[at..at + wn]);
            at += wn;
            let bn = l.b.len();
            l.b.copy_from_slice(&p[at..at + bn]);
            at += bn;
        }
    }

    /// Posterior mean and log-variance for one slice.
    pub fn posterior(&self, data: &[T]) -> (Vec<T>, Vec<T>) {
        assert_eq!(data.len(), self.slice_dims[0] * self.slice_dims[1]);
        let mut h1 = self.layers[0].forward(data);
        leaky_relu(&mut h1);
        let mut h2 = self.layers[1].forward(&h1);
        leaky_relu(&mut h2);
        let o = self.layers[2].forward(&h2);
        let (mu, lv) = o.split_at(self.latent_dim);
        (mu.to_vec(), lv.to_vec())
    }

    pub fn encode(&self, data: &[T], mode: EncodeMode, rng: &mut impl NormalSource) -> Vec<T> {
        let (mut mu, lv) = self.posterior(data);
        if mode == EncodeMode::Sample {
            for (m, &l) in mu.iter_mut().zip(&lv) {
                let sigma = (l * T::of(0.5)).exp();
                *m += sigma * T::of(rng.next_standard_normal());
            }
        }
        mu
    }

    pub fn decode(&self, y: &[T]) -> Vec<T> {
        assert_eq!(y.len(), self.latent_dim);
        let mut d1 = self.layers[3].forward(y);
        leaky_relu(&mut d1);
        let mut d2 = self.layers[4].forward(&d1);
        leaky_relu(&mut d2);
        self.layers[5].forward(&d2)
    }

    /// Mean reconstruction MSE and mean KL over the batch, with the
    /// reparameterization noise supplied explicitly (one ε per sample and
    /// latent dim; all zeros gives the deterministic z = μ pass used for
    /// validation).
    pub fn loss_parts(&self, batch: &[&[T]], eps: &[T]) -> (T, T) {
        assert_eq!(eps.len(), batch.len() * self.latent_dim);
        let p = self.slice_dims[0] * self.slice_dims[1];
        let bn = T::of(batch.len() as f64);
        let mut recon = T::zero();
        let mut kl = T::zero();
        let half = T::of(0.5);
        for (s, x) in batch.iter().enumerate() {
            let (mu, lv) = self.posterior(x);
            let mut z = mu.clone();
            for l in 0..self.latent_dim {
                let sigma = (lv[l] * half).exp();
                z[l] += sigma * eps[s * self.latent_dim + l];
                kl += half * (mu[l] * mu[l] + lv[l].exp() - lv[l] - T::one());
            }
            let xh = self.decode(&z);
            for i in 0..p {
                let d = xh[i] - x[i];
                recon += d * d;
            }
        }
        (recon / (bn * T::of(p as f64)), kl / bn)
    }

    /// Total loss and its gradient in flat parameter order.
    pub fn loss_and_grad(&self, batch: &[&[T]], eps: &[T], beta_kl: T) -> (T, Vec<T>) {
        assert_eq!(eps.len(), batch.len() * self.latent_dim);
        let p = self.slice_dims[0] * self.slice_dims[1];
        let l_dim = self.latent_dim;
        let h = self.hidden;
        let bn = T::of(batch.len() as f64);
        let half = T::of(0.5);
        let recon_norm = T::of(2.0) / (bn * T::of(p as f64));

        let mut gw: Vec<Vec<T>> = self.layers.iter().map(|l| vec![T::zero(); l.w.len()]).collect();
        let mut gb: Vec<Vec<T>> = self.layers.iter().map(|l| vec![T::zero(); l.b.len()]).collect();
        let mut loss = T::zero();

        for (s, x) in batch.iter().enumerate() {
            // forward, keeping post-activation values for backprop
            let mut h1 = self.layers[0].forward(x);
            leaky_relu(&mut h1);
            let mut h2 = self.layers[1].forward(&h1);
            leaky_relu(&mut h2);
            let o = self.layers[2].forward(&h2);
            let (mu, lv) = o.split_at(l_dim);
            let e = &eps[s * l_dim..(s + 1) * l_dim];
            let mut z = vec![T::zero(); l_dim];
            let mut sig = vec![T::zero(); l_dim];
            for l in 0..l_dim {
                sig[l] = (lv[l] * half).exp();
                z[l] = mu[l] + sig[l] * e[l];
                loss += beta_kl * half / bn * (mu[l] * mu[l] + lv[l].exp() - lv[l] - T::one());
            }
            let mut d1 = self.layers[3].forward(&z);
            leaky_relu(&mut d1);
            let mut d2 = self.layers[4].forward(&d1);
            leaky_relu(&mut d2);
            let xh = self.layers[5].forward(&d2);
            for i in 0..p {
                let d = xh[i] - x[i];
                loss += d * d / (bn * T::of(p as f64));
            }

            // backward
            let g_xh: Vec<T> = xh.iter().zip(x.iter()).map(|(&a, &b)| recon_norm * (a - b)).collect();
            let mut g_d2 = vec![T::zero(); h];
            self.layers[5].backward(&d2, &g_xh, &mut gw[5], &mut gb[5], &mut g_d2);
            for i in 0..h {
                g_d2[i] *= leaky_slope_at(d2[i]);
            }
            let mut g_d1 = vec![T::zero(); h];
            self.layers[4].backward(&d1, &g_d2, &mut gw[4], &mut gb[4], &mut g_d1);
            for i in 0..h {
                g_d1[i] *= leaky_slope_at(d1[i]);
            }
            let mut g_z = vec![T::zero(); l_dim];
            self.layers[3].backward(&z, &g_d1, &mut gw[3], &mut gb[3], &mut g_z);

            // z = μ + σ⊙ε with σ = exp(lv/2), plus the KL terms
            let mut g_o = vec![T::zero(); 2 * l_dim];
            for l in 0..l_dim {
                g_o[l] = g_z[l] + beta_kl / bn * mu[l];
                g_o[l_dim + l] =
                    g_z[l] * half * sig[l] * e[l] + beta_kl * half / bn * (lv[l].exp() - T::one());
            }
            let mut g_h2 = vec![T::zero(); h];
            self.layers[2].backward(&h2, &g_o, &mut gw[2], &mut gb[2], &mut g_h2);
            for i in 0..h {
                g_h2[i] *= leaky_slope_at(h2[i]);
            }
            let mut g_h1 = vec![T::zero(); h];
            self.layers[1].backward(&h1, &g_h2, &mut gw[1], &mut gb[1], &mut g_h1);
            for i in 0..h {
                g_h1[i] *= leaky_slope_at(h1[i]);
            }
            let mut g_x = vec![T::zero(); p];
            self.layers[0].backward(x, &g_h1, &mut gw[0], &mut gb[0], &mut g_x);
        }

        let mut grad = Vec::with_capacity(self.param_count());
        for (w, b) in gw.into_iter().zip(gb) {
            grad.extend(w);
            grad.extend(b);
        }
        (loss, grad)
    }
}

/// Adam trainer settings. The defaults follow the module contract: sweep
/// {1e-3, 1e-4, 1e-5}, KL weight 0.2, the usual Adam moments.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rates: Vec<f64>,
    pub beta_kl: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_width: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rates: vec![1e-3, 1e-4, 1e-5],
            beta_kl: 0.2,
            epochs: 200,
            batch_size: 8,
            hidden_width: 64,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

/// Outcome of one learning rate in the sweep.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub learning_rate: f64,
    /// Per-epoch mean training loss (reconstruction + β·KL).
    pub train_losses: Vec<f64>,
    /// Per-epoch validation loss at z = μ.
    pub val_losses: Vec<f64>,
    /// Reconstruction part of the final validation loss.
    pub final_val_recon_mse: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub entries: Vec<SweepEntry>,
    /// Index into `entries` of the model that was returned.
    pub selected: usize,
}

impl TrainingReport {
    pub fn selected_entry(&self) -> &SweepEntry {
        &self.entries[self.selected]
    }
}

/// Trains one model per learning rate from a shared random initialization and
/// returns the one with the lowest final validation loss.
///
/// A 5% holdout (at least one slice) serves as the validation split.
/// Validation always decodes z = μ. A sweep entry whose loss turns non-finite
/// is marked diverged and skipped at selection; every entry diverging is a
/// training error. Fixed seeds make the whole sweep bit-reproducible.
pub fn train_vae_codec<T: Real>(
    slices: &[Slice<T>],
    latent_dim: usize,
    cfg: &TrainConfig,
) -> Result<(VaeCodec<T>, TrainingReport)> {
    let n = slices.len();
    if n < 2 {
        return Err(Error::validation("vae training needs at least 2 slices"));
    }
    let dims = slices[0].dims();
    if slices.iter().any(|s| s.dims() != dims) {
        return Err(Error::validation("training slices have mixed dims"));
    }
    if latent_dim == 0 {
        return Err(Error::validation("latent dim must be at least 1"));
    }
    if cfg.hidden_width == 0 || cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::validation("hidden width, batch size and epochs must be positive"));
    }
    if cfg.beta_kl < 0.0 {
        return Err(Error::validation("beta_kl must be non-negative"));
    }
    if cfg.learning_rates.is_empty() || cfg.learning_rates.iter().any(|&lr| lr <= 0.0) {
        return Err(Error::validation("learning rates must be a non-empty list of positives"));
    }

    let n_val = (n / 20).max(1);
    let mut val_idx = SplitMix64::derive(cfg.seed, TAG_SPLIT).sample_indices(n, n_val);
    val_idx.sort_unstable();
    let is_val = {
        let mut mask = vec![false; n];
        for &i in &val_idx {
            mask[i] = true;
        }
        mask
    };
    let train_idx: Vec<usize> = (0..n).filter(|&i| !is_val[i]).collect();
    let val_refs: Vec<&[T]> = val_idx.iter().map(|&i| slices[i].data()).collect();
    let val_zero_eps = vec![T::zero(); n_val * latent_dim];

    let init = VaeCodec::<T>::random(dims, latent_dim, cfg.hidden_width, cfg.seed);
    let init_params = init.params();
    let mut model = init;

    let beta = T::of(cfg.beta_kl);
    let mut entries = Vec::with_capacity(cfg.learning_rates.len());
    let mut best: Option<(f64, usize, Vec<T>)> = None;

    for (run, &lr) in cfg.learning_rates.iter().enumerate() {
        model.set_params(&init_params);
        let mut adam = Adam::<T>::with_hyper(
            init_params.len(),
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
        );
        let mut order_rng = SplitMix64::derive(cfg.seed, TAG_SHUFFLE + run as u64);
        let mut eps_rng = SplitMix64::derive(cfg.seed, TAG_EPS + run as u64);
        let mut order = train_idx.clone();
        let mut train_losses = Vec::with_capacity(cfg.epochs);
        let mut val_losses = Vec::with_capacity(cfg.epochs);
        let mut final_recon = f64::NAN;
        let mut diverged = false;

        'epochs: for _ in 0..cfg.epochs {
            order_rng.shuffle(&mut order);
            let mut epoch_loss = 0.0f64;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&[T]> = chunk.iter().map(|&i| slices[i].data()).collect();
                let eps: Vec<T> = (0..batch.len() * latent_dim)
                    .map(|_| T::of(eps_rng.next_standard_normal()))
                    .collect();
                let (loss, grad) = model.loss_and_grad(&batch, &eps, beta);
                if !loss.is_finite() {
                    diverged = true;
                    break 'epochs;
                }
                epoch_loss += loss.into_f64() * batch.len() as f64;
                let mut params = model.params();
                adam.step(&mut params, &grad, T::of(lr));
                model.set_params(&params);
            }
            train_losses.push(epoch_loss / train_idx.len() as f64);

            let (recon, kl) = model.loss_parts(&val_refs, &val_zero_eps);
            let val = recon + beta * kl;
            if !val.is_finite() {
                diverged = true;
                break;
            }
            val_losses.push(val.into_f64());
            final_recon = recon.into_f64();
        }

        if !diverged {
            let final_val = *val_losses.last().expect("epochs is positive");
            match &best {
                Some((v, _, _)) if *v <= final_val => {}
                _ => best = Some((final_val, run, model.params())),
            }
        }
        entries.push(SweepEntry {
            learning_rate: lr,
            train_losses,
            val_losses,
            final_val_recon_mse: if diverged { f64::NAN } else { final_recon },
            diverged,
        });
    }

    let (_, selected, params) = best.ok_or_else(|| {
        Error::training("every learning rate in the sweep diverged to a non-finite loss")
    })?;
    model.set_params(&params);
    Ok((model, TrainingReport { entries, selected }))
}
