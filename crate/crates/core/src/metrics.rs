//! Distribution and overlap metrics: minibatch kernel MMD², 3D multi-scale
//! SSIM with a pair-sampling diversity protocol, Dice overlap, and the
//! adjacent-slice NCC statistic used to quantify slice coherence.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::SplitMix64;
use crate::volume::{Axis, LabelMap, Volume};

/// Kernel for the MMD² estimator. The dot product on flattened volumes is the
/// default; its biased MMD² reduces to the squared distance between the two
/// batch means, so values scale with volume size. The rbf option exponentiates
/// squared distances at a fixed or median-heuristic bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MmdKernel {
    Dot,
    Rbf(Bandwidth),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// σ² = median of the pooled pairwise squared distances, halved; the
    /// kernel is exp(−d²/(2σ²)).
    MedianHeuristic,
    /// σ directly.
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct MmdConfig {
    pub kernel: MmdKernel,
    pub num_tests: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MmdConfig {
    fn default() -> Self {
        MmdConfig {
            kernel: MmdKernel::Dot,
            num_tests: 100,
            batch_size: 8,
            seed: 0,
        }
    }
}

fn flatten<T: Real>(vols: &[Volume<T>]) -> Result<Vec<Vec<f64>>> {
    let dims = vols
        .first()
        .ok_or_else(|| Error::validation("volume list is empty"))?
        .dims();
    vols.iter()
        .map(|v| {
            if v.dims() != dims {
                return Err(Error::validation(format!(
                    "volume dims {:?} do not match the first volume's {:?}",
                    v.dims(),
                    dims
                )));
            }
            Ok(v.data().iter().map(|&x| x.into_f64()).collect())
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Biased estimator over one pair of batches: every pair enters the sums,
/// diagonal included, so identical batches score exactly zero.
fn mmd2_biased(xs: &[&[f64]], ys: &[&[f64]], kernel: &MmdKernel) -> f64 {
    let sigma2 = match kernel {
        MmdKernel::Dot => 0.0,
        MmdKernel::Rbf(Bandwidth::Fixed(s)) => (s * s).max(1e-12),
        MmdKernel::Rbf(Bandwidth::MedianHeuristic) => {
            let pool: Vec<&[f64]> = xs.iter().chain(ys.iter()).copied().collect();
            let mut d2: Vec<f64> = (0..pool.len())
                .flat_map(|i| (i + 1..pool.len()).map(move |j| (i, j)))
                .map(|(i, j)| sq_dist(pool[i], pool[j]))
                .collect();
            d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (d2[d2.len() / 2] / 2.0).max(1e-12)
        }
    };
    let k = |a: &[f64], b: &[f64]| match kernel {
        MmdKernel::Dot => dot(a, b),
        MmdKernel::Rbf(_) => (-sq_dist(a, b) / (2.0 * sigma2)).exp(),
    };
    let mean_kernel = |us: &[&[f64]], vs: &[&[f64]]| {
        let mut acc = 0.0;
        for u in us {
            for v in vs {
                acc += k(u, v);
            }
        }
        acc / (us.len() * vs.len()) as f64
    };
    mean_kernel(xs, xs) + mean_kernel(ys, ys) - 2.0 * mean_kernel(xs, ys)
}

/// Minibatch MMD²: `num_tests` times, draw one batch from each set without
/// replacement (seeded independently per test and side) and average the biased
/// per-test estimates. Returns the mean and the per-test values.
pub fn mmd2_batch<T: Real>(
    gen: &[Volume<T>],
    real: &[Volume<T>],
    cfg: &MmdConfig,
) -> Result<(f64, Vec<f64>)> {
    if cfg.batch_size < 2 || cfg.num_tests == 0 {
        return Err(Error::validation("mmd needs batch_size >= 2 and num_tests >= 1"));
    }
    if gen.len() < cfg.batch_size || real.len() < cfg.batch_size {
        return Err(Error::validation(format!(
            "both sets must hold at least batch_size = {} volumes (got {} and {})",
            cfg.batch_size,
            gen.len(),
            real.len()
        )));
    }
    let gv = flatten(gen)?;
    let rv = flatten(real)?;
    if gv[0].len() != rv[0].len() {
        return Err(Error::validation("generated and real volume dims differ"));
    }

    let mut per_test = Vec::with_capacity(cfg.num_tests);
    for test in 0..cfg.num_tests {
        let mut rng_g = SplitMix64::derive(cfg.seed, (test as u64) << 1);
        let mut rng_r = SplitMix64::derive(cfg.seed, ((test as u64) << 1) | 1);
        let xi = rng_g.sample_indices(gv.len(), cfg.batch_size);
        let yi = rng_r.sample_indices(rv.len(), cfg.batch_size);
        let xs: Vec<&[f64]> = xi.iter().map(|&i| gv[i].as_slice()).collect();
        let ys: Vec<&[f64]> = yi.iter().map(|&i| rv[i].as_slice()).collect();
        per_test.push(mmd2_biased(&xs, &ys, &cfg.kernel));
    }
    let mean = per_test.iter().sum::<f64>() / per_test.len() as f64;
    Ok((mean, per_test))
}

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone)]
pub struct MsSsimConfig {
    pub scale_weights: [f64; 5],
    pub window_size: usize,
    pub window_sigma: f64,
    pub dynamic_range: f64,
    /// Pair budget of [`ms_ssim_diversity`].
    pub num_pairs: usize,
    pub seed: u64,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        MsSsimConfig {
            scale_weights: MS_SSIM_WEIGHTS,
            window_size: 11,
            window_sigma: 1.5,
            dynamic_range: 1.0,
            num_pairs: 50,
            seed: 0,
        }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c) * (i as f64 - c)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Valid convolution along one axis; the output loses window−1 entries there.
fn conv_axis(data: &[f64], dims: [usize; 3], axis: usize, win: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let k = win.len();
    let mut out_dims = dims;
    out_dims[axis] = dims[axis] - (k - 1);
    let mut out = vec![0.0f64; out_dims[0] * out_dims[1] * out_dims[2]];
    let idx = |d: usize, h: usize, w: usize, dm: [usize; 3]| (d * dm[1] + h) * dm[2] + w;
    for d in 0..out_dims[0] {
        for h in 0..out_dims[1] {
            for w in 0..out_dims[2] {
                let mut acc = 0.0;
                for (t, &g) in win.iter().enumerate() {
                    let (sd, sh, sw) = match axis {
                        0 => (d + t, h, w),
                        1 => (d, h + t, w),
                        _ => (d, h, w + t),
                    };
                    acc += g * data[idx(sd, sh, sw, dims)];
                }
                out[idx(d, h, w, out_dims)] = acc;
            }
        }
    }
    (out, out_dims)
}

fn blur(data: &[f64], dims: [usize; 3], win: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let (a, d1) = conv_axis(data, dims, 0, win);
    let (b, d2) = conv_axis(&a, d1, 1, win);
    conv_axis(&b, d2, 2, win)
}

/// 2×2×2 mean pooling with floor semantics; odd tails are dropped.
fn pool2(data: &[f64], dims: [usize; 3]) -> (Vec<f64>, [usize; 3]) {
    let od = [dims[0] / 2, dims[1] / 2, dims[2] / 2];
    let mut out = vec![0.0f64; od[0] * od[1] * od[2]];
    let idx = |d: usize, h: usize, w: usize, dm: [usize; 3]| (d * dm[1] + h) * dm[2] + w;
    for d in 0..od[0] {
        for h in 0..od[1] {
            for w in 0..od[2] {
                let mut acc = 0.0;
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            acc += data[idx(2 * d + dz, 2 * h + dy, 2 * w + dx, dims)];
                        }
                    }
                }
                out[idx(d, h, w, od)] = acc / 8.0;
            }
        }
    }
    (out, od)
}

/// Mean contrast-structure term and mean luminance·contrast-structure term of
/// one scale. Negative structure values clamp to zero so the geometric
/// combination across scales stays real.
fn ssim_scale(
    a: &[f64],
    b: &[f64],
    dims: [usize; 3],
    win: &[f64],
    c1: f64,
    c2: f64,
) -> (f64, f64) {
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let (ma, od) = blur(a, dims, win);
    let (mb, _) = blur(b, dims, win);
    let (maa, _) = blur(&aa, dims, win);
    let (mbb, _) = blur(&bb, dims, win);
    let (mab, _) = blur(&prod, dims, win);

    let n = od[0] * od[1] * od[2];
    let mut cs_sum = 0.0;
    let mut lcs_sum = 0.0;
    for i in 0..n {
        let va = (maa[i] - ma[i] * ma[i]).max(0.0);
        let vb = (mbb[i] - mb[i] * mb[i]).max(0.0);
        let cab = mab[i] - ma[i] * mb[i];
        let cs = ((2.0 * cab + c2) / (va + vb + c2)).max(0.0);
        let lum = (2.0 * ma[i] * mb[i] + c1) / (ma[i] * ma[i] + mb[i] * mb[i] + c1);
        cs_sum += cs;
        lcs_sum += lum * cs;
    }
    (cs_sum / n as f64, lcs_sum / n as f64)
}

/// How many scales the volume supports: each scale needs every dim to still
/// cover the window after the preceding poolings.
fn usable_scales(dims: [usize; 3], window: usize, max_scales: usize) -> usize {
    let mut d = dims;
    let mut scales = 0;
    while scales < max_scales && d.iter().all(|&x| x >= window) {
        scales += 1;
        d = [d[0] / 2, d[1] / 2, d[2] / 2];
    }
    scales
}

/// Multi-scale SSIM of two equally sized volumes, computed natively in 3D:
/// Gaussian-window SSIM per scale with 2×2×2 mean pooling in between,
/// contrast-structure terms at every scale, luminance only at the coarsest,
/// combined as a weighted geometric mean. Volumes too small for all five
/// scales use the leading scales with renormalized weights; the window must
/// fit at least once.
pub fn ms_ssim<T: Real>(a: &Volume<T>, b: &Volume<T>, cfg: &MsSsimConfig) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::validation(format!(
            "ms-ssim needs equal dims, got {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    // the canonical weights sum to 1.0001, so the gate is loose; the weights
    // actually applied are renormalized over the usable scales and sum to 1
    let weight_sum: f64 = cfg.scale_weights.iter().sum();
    if (weight_sum - 1.0).abs() > 1e-3 {
        return Err(Error::validation("scale weights must sum to 1"));
    }
    let scales = usable_scales(a.dims(), cfg.window_size, cfg.scale_weights.len());
    if scales == 0 {
        return Err(Error::validation(format!(
            "dims {:?} cannot fit the {}-voxel ssim window",
            a.dims(),
            cfg.window_size
        )));
    }
    let win = gaussian_window(cfg.window_size, cfg.window_sigma);
    let c1 = (0.01 * cfg.dynamic_range) * (0.01 * cfg.dynamic_range);
    let c2 = (0.03 * cfg.dynamic_range) * (0.03 * cfg.dynamic_range);
    let renorm: f64 = cfg.scale_weights[..scales].iter().sum();

    let mut xa: Vec<f64> = a.data().iter().map(|&v| v.into_f64()).collect();
    let mut xb: Vec<f64> = b.data().iter().map(|&v| v.into_f64()).collect();
    let mut dims = a.dims();
    let mut result = 1.0f64;
    for s in 0..scales {
        let (mean_cs, mean_lcs) = ssim_scale(&xa, &xb, dims, &win, c1, c2);
        let term = if s + 1 == scales { mean_lcs } else { mean_cs }.max(0.0);
        result *= term.powf(cfg.scale_weights[s] / renorm);
        if s + 1 < scales {
            let (pa, pd) = pool2(&xa, dims);
            let (pb, _) = pool2(&xb, dims);
            xa = pa;
            xb = pb;
            dims = pd;
        }
    }
    Ok(result)
}

/// Mean MS-SSIM over seeded random unordered pairs of distinct samples; low
/// values mean a diverse set.
pub fn ms_ssim_diversity<T: Real>(
    samples: &[Volume<T>],
    cfg: &MsSsimConfig,
) -> Result<(f64, Vec<f64>)> {
    if samples.len() < 2 {
        return Err(Error::validation("diversity needs at least 2 samples"));
    }
    if cfg.num_pairs == 0 {
        return Err(Error::validation("diversity needs at least 1 pair"));
    }
    let mut rng = SplitMix64::derive(cfg.seed, 0x3551_AB);
    let mut per_pair = Vec::with_capacity(cfg.num_pairs);
    for _ in 0..cfg.num_pairs {
        let i = rng.index(samples.len());
        let mut j = rng.index(samples.len() - 1);
        if j >= i {
            j += 1;
        }
        per_pair.push(ms_ssim(&samples[i], &samples[j], cfg)?);
    }
    let mean = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    Ok((mean, per_pair))
}

/// Per-label and mean Dice overlap.
#[derive(Debug, Clone)]
pub struct DiceScore {
    /// (label, score) for every foreground label present in at least one map.
    pub per_label: Vec<(u16, f64)>,
    /// Mean over `per_label`; 0 when both maps are pure background.
    pub mean: f64,
}

/// Dice overlap per foreground label: 2|A∩B| / (|A| + |B|). Background label
/// 0 is excluded, labels absent from both maps are skipped, and the mean runs
/// over the remaining labels.
pub fn dice(a: &LabelMap, b: &LabelMap) -> Result<DiceScore> {
    if a.dims() != b.dims() {
        return Err(Error::validation(format!(
            "dice needs equal dims, got {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if a.num_classes() != b.num_classes() {
        return Err(Error::validation(format!(
            "dice needs equal class counts, got {} and {}",
            a.num_classes(),
            b.num_classes()
        )));
    }
    let k = a.num_classes() as usize;
    let mut size_a = vec![0u64; k];
    let mut size_b = vec![0u64; k];
    let mut inter = vec![0u64; k];
    for (&la, &lb) in a.labels().iter().zip(b.labels()) {
        size_a[la as usize] += 1;
        size_b[lb as usize] += 1;
        if la == lb {
            inter[la as usize] += 1;
        }
    }
    let mut per_label = Vec::new();
    for label in 1..k {
        let denom = size_a[label] + size_b[label];
        if denom == 0 {
            continue;
        }
        per_label.push((label as u16, 2.0 * inter[label] as f64 / denom as f64));
    }
    let mean = if per_label.is_empty() {
        0.0
    } else {
        per_label.iter().map(|(_, s)| s).sum::<f64>() / per_label.len() as f64
    };
    Ok(DiceScore { per_label, mean })
}

/// Pearson correlation of two equally long samples; 0 when either side has no
/// variance.
pub fn ncc(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut va = 0.0;
    let mut vb = 0.0;
    let mut cov = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Mean NCC over adjacent slice pairs along `axis`, restricted to pairs where
/// both slices carry signal (mean intensity above `support_threshold`).
/// Pure-background pairs would measure noise correlation rather than
/// structural coherence, so they are excluded; a volume with no supported pair
/// is an error.
pub fn adjacent_slice_ncc<T: Real>(
    v: &Volume<T>,
    axis: Axis,
    support_threshold: f64,
) -> Result<f64> {
    let slices = v.slices(axis);
    let data: Vec<Vec<f64>> = slices
        .iter()
        .map(|s| s.data().iter().map(|&x| x.into_f64()).collect())
        .collect();
    let means: Vec<f64> = data
        .iter()
        .map(|d| d.iter().sum::<f64>() / d.len() as f64)
        .collect();
    let mut acc = 0.0;
    let mut count = 0usize;
    for t in 0..data.len().saturating_sub(1) {
        if means[t] > support_threshold && means[t + 1] > support_threshold {
            acc += ncc(&data[t], &data[t + 1]);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::validation(
            "no adjacent slice pair exceeds the support threshold",
        ));
    }
    Ok(acc / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::NormalSource;
    use proptest::prelude::*;

    fn vol(dims: [usize; 3], data: Vec<f32>) -> Volume<f32> {
        Volume::new(dims, [1.0; 3], data).unwrap()
    }

    fn noise_volume(dims: [usize; 3], seed: u64, offset: f32) -> Volume<f32> {
        let mut rng = SplitMix64::new(seed);
        let n = dims[0] * dims[1] * dims[2];
        vol(
            dims,
            (0..n)
                .map(|_| rng.next_standard_normal() as f32 + offset)
                .collect(),
        )
    }

    fn phantom32(seed: u64) -> Volume<f32> {
        let p = crate::phantom::PhantomParams::new([32, 32, 32], seed).with_classes(3);
        crate::phantom::generate_phantom(&p).unwrap().0
    }

    #[test]
    fn dot_kernel_matches_hand_double_loop() {
        // 2-voxel volumes so the oracle is a tiny explicit sum
        let xs = vec![
            vol([1, 1, 2], vec![1.0, 0.0]),
            vol([1, 1, 2], vec![0.0, 2.0]),
            vol([1, 1, 2], vec![1.0, 1.0]),
        ];
        let ys = vec![
            vol([1, 1, 2], vec![2.0, 1.0]),
            vol([1, 1, 2], vec![1.0, 3.0]),
            vol([1, 1, 2], vec![0.0, 0.0]),
        ];
        let cfg = MmdConfig {
            num_tests: 1,
            batch_size: 3,
            ..MmdConfig::default()
        };
        let (mean, per_test) = mmd2_batch(&xs, &ys, &cfg).unwrap();
        assert_eq!(per_test.len(), 1);

        let xv: Vec<Vec<f64>> = xs.iter().map(|v| v.to_f64().data().to_vec()).collect();
        let yv: Vec<Vec<f64>> = ys.iter().map(|v| v.to_f64().data().to_vec()).collect();
        let mut kxx = 0.0;
        let mut kyy = 0.0;
        let mut kxy = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                kxx += dot(&xv[i], &xv[j]);
                kyy += dot(&yv[i], &yv[j]);
                kxy += dot(&xv[i], &yv[j]);
            }
        }
        let oracle = kxx / 9.0 + kyy / 9.0 - 2.0 * kxy / 9.0;
        assert!((mean - oracle).abs() < 1e-12, "{mean} vs {oracle}");
    }

    #[test]
    fn identical_sets_with_full_batches_score_zero() {
        let vols: Vec<Volume<f32>> = (0..5).map(|i| noise_volume([2, 3, 3], i, 0.0)).collect();
        // batch = whole set makes both sides draw the same multiset, which the
        // biased estimator maps to exactly zero
        let cfg = MmdConfig {
            num_tests: 4,
            batch_size: 5,
            ..MmdConfig::default()
        };
        let (mean, per_test) = mmd2_batch(&vols, &vols, &cfg).unwrap();
        assert!(mean.abs() < 1e-9, "{mean}");
        assert!(per_test.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn shifted_gaussians_separate_by_many_standard_errors() {
        let xs: Vec<Volume<f32>> = (0..30).map(|i| noise_volume([2, 4, 4], i, 0.0)).collect();
        let ys: Vec<Volume<f32>> = (0..30).map(|i| noise_volume([2, 4, 4], 100 + i, 1.0)).collect();
        let cfg = MmdConfig {
            num_tests: 20,
            batch_size: 8,
            seed: 3,
            ..MmdConfig::default()
        };
        let (mean, per_test) = mmd2_batch(&xs, &ys, &cfg).unwrap();
        let var = per_test.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (per_test.len() - 1) as f64;
        let stderr = (var / per_test.len() as f64).sqrt();
        assert!(mean > 5.0 * stderr, "mean {mean}, stderr {stderr}");
    }

    #[test]
    fn rbf_kernel_is_nonnegative_and_detects_shift() {
        let xs: Vec<Volume<f32>> = (0..10).map(|i| noise_volume([2, 3, 3], i, 0.0)).collect();
        let ys: Vec<Volume<f32>> = (0..10).map(|i| noise_volume([2, 3, 3], 50 + i, 2.0)).collect();
        let cfg = MmdConfig {
            kernel: MmdKernel::Rbf(Bandwidth::MedianHeuristic),
            num_tests: 10,
            batch_size: 4,
            ..MmdConfig::default()
        };
        let (mean, per_test) = mmd2_batch(&xs, &ys, &cfg).unwrap();
        assert!(per_test.iter().all(|&v| v >= -1e-12));
        assert!(mean > 0.0);
        let (self_mean, _) = mmd2_batch(&xs, &xs, &MmdConfig {
            kernel: MmdKernel::Rbf(Bandwidth::MedianHeuristic),
            num_tests: 10,
            batch_size: 10,
            ..MmdConfig::default()
        })
        .unwrap();
        assert!(self_mean.abs() < 1e-9);
    }

    #[test]
    fn undersized_lists_are_rejected() {
        let vols: Vec<Volume<f32>> = (0..3).map(|i| noise_volume([2, 2, 2], i, 0.0)).collect();
        let cfg = MmdConfig {
            batch_size: 4,
            ..MmdConfig::default()
        };
        assert!(mmd2_batch(&vols, &vols, &cfg).is_err());
        let other = vec![noise_volume([2, 2, 3], 9, 0.0); 3];
        let cfg2 = MmdConfig {
            batch_size: 2,
            num_tests: 1,
            ..MmdConfig::default()
        };
        assert!(mmd2_batch(&vols, &other, &cfg2).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn dot_mmd_equals_double_loop_and_mean_gap(
            nx in 2usize..=6,
            ny in 2usize..=6,
            seed in 0u64..1000,
        ) {
            let mut rng = SplitMix64::new(seed);
            let dims = [2usize, 2, 2];
            let mk = |rng: &mut SplitMix64| {
                let data: Vec<f32> = (0..8).map(|_| rng.next_standard_normal() as f32).collect();
                vol(dims, data)
            };
            let xs: Vec<Volume<f32>> = (0..nx).map(|_| mk(&mut rng)).collect();
            let ys: Vec<Volume<f32>> = (0..ny).map(|_| mk(&mut rng)).collect();
            let b = nx.min(ny).min(3).max(2);
            let cfg = MmdConfig { num_tests: 3, batch_size: b, seed, ..MmdConfig::default() };
            let (_, per_test) = mmd2_batch(&xs, &ys, &cfg).unwrap();

            // replay the seeded index draws to rebuild each test's batches
            for (t, &got) in per_test.iter().enumerate() {
                let xi = SplitMix64::derive(seed, (t as u64) << 1).sample_indices(nx, b);
                let yi = SplitMix64::derive(seed, ((t as u64) << 1) | 1).sample_indices(ny, b);
                let xf: Vec<Vec<f64>> = xi.iter().map(|&i| xs[i].to_f64().data().to_vec()).collect();
                let yf: Vec<Vec<f64>> = yi.iter().map(|&i| ys[i].to_f64().data().to_vec()).collect();
                let mut oracle = 0.0;
                for a in &xf { for c in &xf { oracle += dot(a, c) / (b * b) as f64; } }
                for a in &yf { for c in &yf { oracle += dot(a, c) / (b * b) as f64; } }
                for a in &xf { for c in &yf { oracle -= 2.0 * dot(a, c) / (b * b) as f64; } }
                prop_assert!((got - oracle).abs() <= 1e-12);

                // analytic identity: dot-kernel MMD^2 is the squared gap of means
                let mut gap = 0.0;
                for i in 0..8 {
                    let mx = xf.iter().map(|v| v[i]).sum::<f64>() / b as f64;
                    let my = yf.iter().map(|v| v[i]).sum::<f64>() / b as f64;
                    gap += (mx - my) * (mx - my);
                }
                prop_assert!((got - gap).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn ms_ssim_of_a_volume_with_itself_is_one() {
        let v = phantom32(1);
        let cfg = MsSsimConfig::default();
        let s = ms_ssim(&v, &v, &cfg).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn ms_ssim_is_bit_symmetric() {
        let a = phantom32(2);
        let b = phantom32(3);
        let cfg = MsSsimConfig::default();
        let ab = ms_ssim(&a, &b, &cfg).unwrap();
        let ba = ms_ssim(&b, &a, &cfg).unwrap();
        assert_eq!(ab.to_bits(), ba.to_bits());
        assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn ms_ssim_decreases_with_growing_noise() {
        let v = phantom32(4);
        let cfg = MsSsimConfig::default();
        let noisy = |sigma: f32, seed: u64| {
            let mut rng = SplitMix64::new(seed);
            let data: Vec<f32> = v
                .data()
                .iter()
                .map(|&x| x + sigma * rng.next_standard_normal() as f32)
                .collect();
            vol(v.dims(), data)
        };
        let s1 = ms_ssim(&v, &noisy(0.01, 7), &cfg).unwrap();
        let s2 = ms_ssim(&v, &noisy(0.05, 7), &cfg).unwrap();
        let s3 = ms_ssim(&v, &noisy(0.10, 7), &cfg).unwrap();
        assert!(s1 > s2 && s2 > s3, "{s1} {s2} {s3}");
    }

    #[test]
    fn ms_ssim_shift_invariance_on_near_identical_pairs() {
        // the stabilised luminance term is only approximately shift-invariant,
        // so the check uses pairs whose local means differ by O(1e-3)
        let v = phantom32(5);
        let mut rng = SplitMix64::new(11);
        let jittered: Vec<f32> = v
            .data()
            .iter()
            .map(|&x| x + 0.001 * rng.next_standard_normal() as f32)
            .collect();
        let w = vol(v.dims(), jittered);
        let shift = |x: &Volume<f32>| vol(x.dims(), x.data().iter().map(|&v| v + 0.25).collect());
        let cfg = MsSsimConfig::default();
        let base = ms_ssim(&v, &w, &cfg).unwrap();
        let shifted = ms_ssim(&shift(&v), &shift(&w), &cfg).unwrap();
        assert!((base - shifted).abs() < 1e-6, "{base} vs {shifted}");
    }

    #[test]
    fn ms_ssim_truncates_scales_on_small_volumes() {
        // 16^3 supports exactly one scale at window 11; 8^3 none
        let a = noise_volume([16, 16, 16], 1, 0.5);
        let b = noise_volume([16, 16, 16], 2, 0.5);
        let cfg = MsSsimConfig::default();
        ms_ssim(&a, &b, &cfg).unwrap();
        let tiny = noise_volume([8, 8, 8], 3, 0.5);
        assert!(ms_ssim(&tiny, &tiny, &cfg).is_err());
    }

    #[test]
    fn diversity_of_identical_samples_is_one() {
        let v = phantom32(6);
        let samples = vec![v.clone(), v.clone(), v];
        let cfg = MsSsimConfig {
            num_pairs: 10,
            ..MsSsimConfig::default()
        };
        let (d, per_pair) = ms_ssim_diversity(&samples, &cfg).unwrap();
        assert!((d - 1.0).abs() < 1e-9, "{d}");
        assert_eq!(per_pair.len(), 10);
        for p in per_pair {
            assert!((p - 1.0).abs() < 1e-9, "{p}");
        }
    }

    #[test]
    fn diversity_of_white_noise_is_near_zero() {
        let samples: Vec<Volume<f32>> =
            (0..8).map(|i| noise_volume([32, 32, 32], 20 + i, 0.0)).collect();
        let cfg = MsSsimConfig {
            num_pairs: 50,
            seed: 2,
            ..MsSsimConfig::default()
        };
        let (d, _) = ms_ssim_diversity(&samples, &cfg).unwrap();
        assert!(d < 0.1, "{d}");
    }

    #[test]
    fn diversity_needs_two_samples() {
        let v = phantom32(7);
        assert!(ms_ssim_diversity(&[v], &MsSsimConfig::default()).is_err());
    }

    fn labels(dims: [usize; 3], k: u16, vals: Vec<u16>) -> LabelMap {
        LabelMap::new(dims, k, vals).unwrap()
    }

    #[test]
    fn dice_identity_disjoint_and_half_overlap() {
        let dims = [1, 1, 300];
        let mut a = vec![0u16; 300];
        let mut b = vec![0u16; 300];
        // |A_1| = |B_1| = 100 with 50 shared
        for i in 0..100 {
            a[i] = 1;
        }
        for i in 50..150 {
            b[i] = 1;
        }
        // label 2 disjoint
        for i in 200..210 {
            a[i] = 2;
        }
        for i in 210..220 {
            b[i] = 2;
        }
        let la = labels(dims, 3, a);
        let lb = labels(dims, 3, b);
        let d = dice(&la, &lb).unwrap();
        assert_eq!(d.per_label.len(), 2);
        assert_eq!(d.per_label[0], (1, 0.5));
        assert_eq!(d.per_label[1], (2, 0.0));
        assert!((d.mean - 0.25).abs() < 1e-12);

        let same = dice(&la, &la).unwrap();
        assert!(same.per_label.iter().all(|&(_, s)| s == 1.0));
        assert_eq!(same.mean, 1.0);
    }

    #[test]
    fn dice_skips_labels_absent_from_both() {
        let dims = [1, 1, 4];
        let a = labels(dims, 4, vec![0, 1, 1, 0]);
        let b = labels(dims, 4, vec![0, 1, 0, 0]);
        let d = dice(&a, &b).unwrap();
        // labels 2 and 3 appear nowhere and are skipped
        assert_eq!(d.per_label.len(), 1);
        assert!((d.mean - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dice_is_symmetric_and_relabel_invariant() {
        let dims = [2, 2, 2];
        let a = labels(dims, 3, vec![0, 1, 2, 1, 0, 2, 1, 0]);
        let b = labels(dims, 3, vec![1, 1, 2, 0, 0, 2, 2, 0]);
        let ab = dice(&a, &b).unwrap();
        let ba = dice(&b, &a).unwrap();
        assert_eq!(ab.mean, ba.mean);

        // swap labels 1 and 2 in both maps identically
        let swap = |m: &LabelMap| {
            let vals = m
                .labels()
                .iter()
                .map(|&v| match v {
                    1 => 2,
                    2 => 1,
                    other => other,
                })
                .collect();
            labels(dims, 3, vals)
        };
        let swapped = dice(&swap(&a), &swap(&b)).unwrap();
        assert!((swapped.mean - ab.mean).abs() < 1e-12);
    }

    #[test]
    fn dice_rejects_mismatched_maps() {
        let a = labels([1, 1, 2], 2, vec![0, 1]);
        let b = labels([1, 2, 1], 2, vec![0, 1]);
        assert!(dice(&a, &b).is_err());
        let c = labels([1, 1, 2], 3, vec![0, 2]);
        assert!(dice(&a, &c).is_err());
    }

    #[test]
    fn adjacent_ncc_high_on_phantoms_low_on_noise() {
        let v = phantom32(8);
        let coherent = adjacent_slice_ncc(&v, Axis::Z, 0.05).unwrap();
        assert!(coherent > 0.9, "{coherent}");

        let noise = noise_volume([16, 16, 16], 5, 0.5);
        let incoherent = adjacent_slice_ncc(&noise, Axis::Z, 0.05).unwrap();
        assert!(incoherent < 0.2, "{incoherent}");

        // a volume below the support threshold everywhere has no valid pair
        let dark = vol([4, 4, 4], vec![0.0; 64]);
        assert!(adjacent_slice_ncc(&dark, Axis::Z, 0.05).is_err());
    }

    #[test]
    fn ncc_handles_degenerate_inputs() {
        assert_eq!(ncc(&[1.0, 1.0, 1.0], &[0.0, 0.5, 1.0]), 0.0);
        let a = [0.0, 1.0, 2.0, 3.0];
        let up: Vec<f64> = a.iter().map(|x| 2.0 * x + 1.0).collect();
        let down: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((ncc(&a, &up) - 1.0).abs() < 1e-12);
        assert!((ncc(&a, &down) + 1.0).abs() < 1e-12);
    }
}
