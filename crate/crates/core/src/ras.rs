//! Realistic atlas scoring: how well do generated volumes stand in for real
//! ones when pushed through a segment-register-overlap pipeline?
//!
//! Each generated volume is segmented, affinely registered onto a real
//! volume, its labels warped along, and the overlap with the real volume's
//! reference segmentation measured as mean Dice. The score aggregates that
//! over pairs. The built-in segmenter is a per-class intensity Gaussian
//! classifier with a majority-vote cleanup; anything that produces label maps
//! can replace it.
//!
//! Segmenter file format (`.sseg`): magic "SSEG", version u16, class count K
//! u16, smoothing window u16, then K triples (mean, sigma, prior) as f64,
//! little-endian.

use crate::error::{Error, Result};
use crate::io::{push_f64, push_u16, read_bytes, write_bytes, Cursor};
use crate::metrics::{dice, DiceScore};
use crate::real::Real;
use crate::registration::{register_affine, warp_labels, RegConfig};
use crate::rng::SplitMix64;
use crate::volume::{LabelMap, Volume};
use std::path::Path;

const SSEG_MAGIC: &[u8; 4] = b"SSEG";
const SSEG_VERSION: u16 = 1;

/// Lower bound applied to fitted class sigmas so degenerate (constant)
/// classes still give a usable likelihood.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Per-class intensity Gaussian classifier with empirical class priors.
///
/// `smoothing_radius` is the odd side length of the majority-vote window
/// applied after classification; 1 disables smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySegmenter {
    means: Vec<f64>,
    sigmas: Vec<f64>,
    priors: Vec<f64>,
    smoothing_radius: usize,
}

impl IntensitySegmenter {
    pub fn new(
        means: Vec<f64>,
        sigmas: Vec<f64>,
        priors: Vec<f64>,
        smoothing_radius: usize,
    ) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(Error::validation("segmenter needs at least one class"));
        }
        if sigmas.len() != k || priors.len() != k {
            return Err(Error::validation(format!(
                "class parameter lengths disagree: {k} means, {} sigmas, {} priors",
                sigmas.len(),
                priors.len()
            )));
        }
        if means
            .iter()
            .chain(&sigmas)
            .chain(&priors)
            .any(|v| !v.is_finite())
        {
            return Err(Error::validation("segmenter parameters must be finite"));
        }
        if sigmas.iter().any(|&s| s <= 0.0) {
            return Err(Error::validation("class sigmas must be positive"));
        }
        if priors.iter().any(|&p| p < 0.0) {
            return Err(Error::validation("class priors must be nonnegative"));
        }
        let sum: f64 = priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "class priors must sum to 1, got {sum}"
            )));
        }
        if smoothing_radius % 2 == 0 || smoothing_radius == 0 {
            return Err(Error::validation(format!(
                "smoothing radius must be odd, got {smoothing_radius}"
            )));
        }
        Ok(IntensitySegmenter {
            means,
            sigmas,
            priors,
            smoothing_radius,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn smoothing_radius(&self) -> usize {
        self.smoothing_radius
    }

    pub fn class_mean(&self, k: usize) -> f64 {
        self.means[k]
    }

    pub fn class_sigma(&self, k: usize) -> f64 {
        self.sigmas[k]
    }

    pub fn class_prior(&self, k: usize) -> f64 {
        self.priors[k]
    }
}

/// Fits per-class Gaussians by maximum likelihood over all labeled voxels
/// pooled across the training set, with empirical priors. Every class `0..k`
/// must appear at least 10 times somewhere in the set.
pub fn train_segmenter<T: Real>(
    training: &[(Volume<T>, LabelMap)],
    k: usize,
    smoothing_radius: usize,
) -> Result<IntensitySegmenter> {
    if training.is_empty() {
        return Err(Error::validation("segmenter training set is empty"));
    }
    if k == 0 {
        return Err(Error::validation("segmenter needs at least one class"));
    }
    for (v, m) in training {
        if v.dims() != m.dims() {
            return Err(Error::validation(format!(
                "volume dims {:?} do not match label dims {:?}",
                v.dims(),
                m.dims()
            )));
        }
        v.ensure_finite()?;
        if let Some(&bad) = m.labels().iter().find(|&&l| l as usize >= k) {
            return Err(Error::validation(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
    }

    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0f64; k];
    for (v, m) in training {
        for (&x, &l) in v.data().iter().zip(m.labels()) {
            counts[l as usize] += 1;
            sums[l as usize] += x.into_f64();
        }
    }
    if let Some((class, &c)) = counts.iter().enumerate().find(|(_, &c)| c < 10) {
        return Err(Error::validation(format!(
            "class {class} has only {c} training voxels, need at least 10"
        )));
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| s / c as f64)
        .collect();

    let mut sq = vec![0.0f64; k];
    for (v, m) in training {
        for (&x, &l) in v.data().iter().zip(m.labels()) {
            let d = x.into_f64() - means[l as usize];
            sq[l as usize] += d * d;
        }
    }
    let sigmas: Vec<f64> = sq
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (s / c as f64).sqrt().max(SIGMA_FLOOR))
        .collect();
    let total: usize = counts.iter().sum();
    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    IntensitySegmenter::new(means, sigmas, priors, smoothing_radius)
}

/// Classifies every voxel to the class maximizing log prior plus Gaussian
/// log likelihood, then cleans speckle with a majority vote over the
/// smoothing window. Ties go to the smaller label.
pub fn segment<T: Real>(s: &IntensitySegmenter, v: &Volume<T>) -> Result<LabelMap> {
    v.ensure_finite()?;
    let k = s.num_classes();
    // constant per class; the quadratic term supplies the data dependence
    let offsets: Vec<f64> = (0..k)
        .map(|c| s.priors[c].max(f64::MIN_POSITIVE).ln() - s.sigmas[c].ln())
        .collect();
    let raw: Vec<u16> = v
        .data()
        .iter()
        .map(|&x| {
            let x = x.into_f64();
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for c in 0..k {
                let d = (x - s.means[c]) / s.sigmas[c];
                let score = offsets[c] - 0.5 * d * d;
                if score > best_score {
                    best_score = score;
                    best = c;
                }
            }
            best as u16
        })
        .collect();
    let smoothed = if s.smoothing_radius > 1 {
        mode_filter(&raw, v.dims(), k, s.smoothing_radius)
    } else {
        raw
    };
    LabelMap::new(v.dims(), k as u16, smoothed)
}

fn mode_filter(labels: &[u16], dims: [usize; 3], k: usize, window: usize) -> Vec<u16> {
    let [d, h, w] = dims;
    let half = (window / 2) as i64;
    let mut out = Vec::with_capacity(labels.len());
    let mut counts = vec![0usize; k];
    for z in 0..d as i64 {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                counts.iter_mut().for_each(|c| *c = 0);
                for nz in (z - half).max(0)..=(z + half).min(d as i64 - 1) {
                    for ny in (y - half).max(0)..=(y + half).min(h as i64 - 1) {
                        for nx in (x - half).max(0)..=(x + half).min(w as i64 - 1) {
                            let i = ((nz as usize) * h + ny as usize) * w + nx as usize;
                            counts[labels[i] as usize] += 1;
                        }
                    }
                }
                let mut best = 0usize;
                for c in 1..k {
                    if counts[c] > counts[best] {
                        best = c;
                    }
                }
                out.push(best as u16);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Every generated volume against every real volume.
    AllPairs,
    /// A seeded random subset of that product, without replacement.
    KRandom(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    /// Real volumes are segmented by the same segmenter (symmetric
    /// treatment; the default).
    Predicted,
    /// Ground-truth label maps are used where provided; real volumes
    /// without one fall back to predicted.
    GroundTruth,
}

#[derive(Debug, Clone)]
pub struct RasConfig {
    pub pairing: Pairing,
    pub reference_mode: ReferenceMode,
    /// Seeds the k-random pair selection; unused for all-pairs.
    pub seed: u64,
}

impl Default for RasConfig {
    fn default() -> Self {
        RasConfig {
            pairing: Pairing::AllPairs,
            reference_mode: ReferenceMode::Predicted,
            seed: 0,
        }
    }
}

/// One evaluated (generated, real) pair, identified by input list indices.
#[derive(Debug, Clone)]
pub struct PairRecord {
    pub generated: usize,
    pub real: usize,
    /// Registration similarity as reported by the objective.
    pub objective: Option<f64>,
    pub dice: Option<DiceScore>,
    pub failure: Option<String>,
}

impl PairRecord {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct RasReport {
    /// Per-pair records in deterministic (generated, real) index order.
    pub pairs: Vec<PairRecord>,
    /// Mean Dice over successful pairs.
    pub ras: f64,
    pub failed: usize,
    pub config: RasConfig,
}

/// Scores generated volumes against real ones: segment the generated volume,
/// register it onto the real one, carry the labels through the transform and
/// measure mean Dice against the real volume's reference segmentation. The
/// score is the mean over pairs.
///
/// Pairs whose registration or overlap step fails are recorded and excluded;
/// more than half failing is an error.
pub fn ras_score<T: Real>(
    generated: &[Volume<T>],
    real: &[(Volume<T>, Option<LabelMap>)],
    seg: &IntensitySegmenter,
    reg: &RegConfig,
    cfg: &RasConfig,
) -> Result<RasReport> {
    if generated.is_empty() || real.is_empty() {
        return Err(Error::validation("need at least one generated and one real volume"));
    }
    if cfg.reference_mode == ReferenceMode::GroundTruth {
        for (i, (_, labels)) in real.iter().enumerate() {
            if let Some(m) = labels {
                if m.num_classes() as usize != seg.num_classes() {
                    return Err(Error::validation(format!(
                        "real volume {i}: ground-truth labels have {} classes, segmenter has {}",
                        m.num_classes(),
                        seg.num_classes()
                    )));
                }
            }
        }
    }

    let total = generated.len() * real.len();
    let selected: Vec<(usize, usize)> = match cfg.pairing {
        Pairing::AllPairs => (0..generated.len())
            .flat_map(|g| (0..real.len()).map(move |r| (g, r)))
            .collect(),
        Pairing::KRandom(k) => {
            if k == 0 {
                return Err(Error::validation("k-random pairing needs k >= 1"));
            }
            let mut rng = SplitMix64::derive(cfg.seed, 0x5A5_0001);
            let mut flat = rng.sample_indices(total, k.min(total));
            flat.sort_unstable();
            flat.into_iter()
                .map(|i| (i / real.len(), i % real.len()))
                .collect()
        }
    };

    // segmentations are reused across pairs
    let mut gen_labels: Vec<Option<LabelMap>> = vec![None; generated.len()];
    let mut ref_labels: Vec<Option<LabelMap>> = vec![None; real.len()];

    let mut pairs = Vec::with_capacity(selected.len());
    let mut failed = 0usize;
    let mut score_sum = 0.0;
    for (g, r) in selected {
        if gen_labels[g].is_none() {
            gen_labels[g] = Some(segment(seg, &generated[g])?);
        }
        if ref_labels[r].is_none() {
            let gt = match cfg.reference_mode {
                ReferenceMode::GroundTruth => real[r].1.clone(),
                ReferenceMode::Predicted => None,
            };
            ref_labels[r] = Some(match gt {
                Some(m) => m,
                None => segment(seg, &real[r].0)?,
            });
        }
        let s_g = gen_labels[g].as_ref().unwrap();
        let reference = ref_labels[r].as_ref().unwrap();

        let outcome = register_affine(&generated[g], &real[r].0, reg).and_then(|(t, obj)| {
            let warped = warp_labels(s_g, &t, real[r].0.dims())?;
            let d = dice(&warped, reference)?;
            Ok((obj, d))
        });
        match outcome {
            Ok((obj, d)) => {
                score_sum += d.mean;
                pairs.push(PairRecord {
                    generated: g,
                    real: r,
                    objective: Some(obj),
                    dice: Some(d),
                    failure: None,
                });
            }
            Err(e) => {
                failed += 1;
                pairs.push(PairRecord {
                    generated: g,
                    real: r,
                    objective: None,
                    dice: None,
                    failure: Some(e.to_string()),
                });
            }
        }
    }

    if 2 * failed > pairs.len() {
        return Err(Error::validation(format!(
            "{failed} of {} pairs failed registration",
            pairs.len()
        )));
    }
    let ras = score_sum / (pairs.len() - failed) as f64;
    Ok(RasReport {
        pairs,
        ras,
        failed,
        config: cfg.clone(),
    })
}

pub fn save_segmenter(s: &IntensitySegmenter, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(SSEG_MAGIC);
    push_u16(&mut out, SSEG_VERSION);
    push_u16(&mut out, s.num_classes() as u16);
    push_u16(&mut out, s.smoothing_radius as u16);
    for k in 0..s.num_classes() {
        push_f64(&mut out, s.means[k]);
        push_f64(&mut out, s.sigmas[k]);
        push_f64(&mut out, s.priors[k]);
    }
    write_bytes(path.as_ref(), &out)
}

pub fn load_segmenter(path: impl AsRef<Path>) -> Result<IntensitySegmenter> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let what = format!("segmenter {}", path.display());
    let mut c = Cursor::new(&bytes, &what);
    c.magic(SSEG_MAGIC)?;
    let version = c.u16()?;
    if version != SSEG_VERSION {
        return Err(Error::format(format!(
            "segmenter {}: unsupported version {version}",
            path.display()
        )));
    }
    let k = c.u16()? as usize;
    let smoothing = c.u16()? as usize;
    let mut means = Vec::with_capacity(k);
    let mut sigmas = Vec::with_capacity(k);
    let mut priors = Vec::with_capacity(k);
    for _ in 0..k {
        means.push(c.f64()?);
        sigmas.push(c.f64()?);
        priors.push(c.f64()?);
    }
    c.finish()?;
    IntensitySegmenter::new(means, sigmas, priors, smoothing)
}
