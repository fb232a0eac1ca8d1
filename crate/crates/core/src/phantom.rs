//! Deterministic synthetic phantoms with ground-truth labels.
//!
//! Each phantom is a stack of nested ellipsoid shells inside a zero background,
//! warped per subject by a smooth random radial deformation, shaded by a
//! multiplicative low-frequency bias field, and finished with additive Gaussian
//! noise. Every random quantity comes from a tagged splitmix64 stream derived
//! from the seed (tag 1 deformation coefficients, tag 2 bias phases, tag 3
//! voxel noise, consumed in slice-major order), so a given parameter set
//! produces the same bits on every run and platform.
//!
//! Geometry: voxel p is mapped to normalized ellipsoid coordinates
//! u = (p − center)/semi_axes and radius rho = |u|. The subject deformation
//! rescales rho by 1/(1 + d(direction)) where d is a seeded combination of the
//! eight lowest real spherical-harmonic modes in (degree, order) enumeration,
//! normalized so |d| never exceeds `deform_amplitude`. The degree-0 constant
//! mode gives subjects a global size jitter; the rest bend the shells. Shell
//! boundaries sit at b_k = sqrt(1 − k/(K−1)), which keeps the inner structures
//! thick enough to survive at desk-scale grids.

use crate::error::{Error, Result};
use crate::rng::{NormalSource, SplitMix64};
use crate::volume::{LabelMap, Volume};

const TAG_DEFORM: u64 = 1;
const TAG_BIAS: u64 = 2;
const TAG_NOISE: u64 = 3;

/// Outer ellipsoid semi-axes as fractions of the half-extent per axis.
/// Slightly anisotropic so no axis is privileged by symmetry.
const SEMI_AXIS_FRACTION: [f64; 3] = [0.80, 0.84, 0.76];

#[derive(Debug, Clone)]
pub struct PhantomParams {
    pub dims: [usize; 3],
    /// K−1; the label map uses K classes counting background 0.
    pub num_foreground_classes: u16,
    /// Strictly increasing, in (0, 1], one per foreground class.
    pub class_mean_intensities: Vec<f64>,
    pub noise_sigma: f64,
    pub bias_amplitude: f64,
    /// Radial deformation as a fraction of radius, must stay below 0.5.
    pub deform_amplitude: f64,
    pub seed: u64,
}

impl PhantomParams {
    pub fn new(dims: [usize; 3], seed: u64) -> Self {
        PhantomParams {
            dims,
            num_foreground_classes: 4,
            class_mean_intensities: vec![0.25, 0.5, 0.75, 1.0],
            noise_sigma: 0.02,
            bias_amplitude: 0.1,
            deform_amplitude: 0.08,
            seed,
        }
    }

    /// Evenly spaced class means i/m for m foreground classes.
    pub fn with_classes(mut self, foreground: u16) -> Self {
        self.num_foreground_classes = foreground;
        let m = foreground as f64;
        self.class_mean_intensities = (1..=foreground).map(|i| i as f64 / m).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::validation(format!("dims must be positive, got {:?}", self.dims)));
        }
        let m = self.num_foreground_classes as usize;
        if m < 1 {
            return Err(Error::validation("need at least one foreground class"));
        }
        if self.class_mean_intensities.len() != m {
            return Err(Error::validation(format!(
                "{} class means for {} foreground classes",
                self.class_mean_intensities.len(),
                m
            )));
        }
        let means = &self.class_mean_intensities;
        if means.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::validation("class means must lie in (0, 1]"));
        }
        for w in means.windows(2) {
            if w[1] - w[0] <= 4.0 * self.noise_sigma {
                return Err(Error::validation(format!(
                    "class means {} and {} closer than 4 noise sigmas",
                    w[0], w[1]
                )));
            }
        }
        if means[0] <= 4.0 * self.noise_sigma {
            return Err(Error::validation(
                "first class mean not separated from background by 4 noise sigmas",
            ));
        }
        if self.noise_sigma < 0.0 || self.bias_amplitude < 0.0 || self.deform_amplitude < 0.0 {
            return Err(Error::validation("noise, bias and deform amplitudes must be >= 0"));
        }
        if self.deform_amplitude >= 0.5 {
            return Err(Error::validation(format!(
                "deform_amplitude must be < 0.5, got {}",
                self.deform_amplitude
            )));
        }
        // Undeformed shell thickness in voxels along the thinnest semi-axis.
        let min_semi = (0..3)
            .map(|a| SEMI_AXIS_FRACTION[a] * (self.dims[a] as f64 - 1.0) / 2.0)
            .fold(f64::INFINITY, f64::min);
        let bounds = shell_bounds(m);
        for k in 1..=m {
            let width = (bounds[k - 1] - bounds[k]) * min_semi;
            if width < 1.0 {
                return Err(Error::validation(format!(
                    "shell {k} is {width:.2} voxels thick at dims {:?}; fewer classes or a larger \
                     grid is needed",
                    self.dims
                )));
            }
        }
        Ok(())
    }
}

/// Normalized shell boundaries b_0 = 1 > b_1 > ... > b_m = 0 for m foreground
/// classes; label k occupies b_k <= rho < b_{k-1}. The 3/4 exponent balances
/// two needs: near-equal thickness so the default five classes fit 1-voxel
/// shells into a 16-cube, and a core large enough to segment reliably.
/// x^(3/4) is written with square roots to stay correctly rounded everywhere.
fn shell_bounds(m: usize) -> Vec<f64> {
    (0..=m)
        .map(|k| {
            let x = 1.0 - k as f64 / m as f64;
            (x * x.sqrt()).sqrt()
        })
        .collect()
}

/// The eight lowest real spherical-harmonic modes, unnormalized, each bounded
/// by 1 in magnitude. Enumeration is (l, m) for l = 0, 1, 2 and m = −l..l,
/// truncated after eight entries: 1; sinθ sinφ, cosθ, sinθ cosφ;
/// sin²θ sin2φ, sinθ cosθ sinφ, (3cos²θ−1)/2, sinθ cosθ cosφ.
fn harmonic_modes(cos_t: f64, sin_t: f64, phi: f64) -> [f64; 8] {
    let (s1, c1) = phi.sin_cos();
    let s2 = (2.0 * phi).sin();
    [
        1.0,
        sin_t * s1,
        cos_t,
        sin_t * c1,
        sin_t * sin_t * s2,
        sin_t * cos_t * s1,
        0.5 * (3.0 * cos_t * cos_t - 1.0),
        sin_t * cos_t * c1,
    ]
}

struct Subject {
    center: [f64; 3],
    semi: [f64; 3],
    bounds: Vec<f64>,
    deform_amplitude: f64,
    deform_coef: [f64; 8],
    deform_norm: f64,
    bias_phase: [f64; 3],
}

impl Subject {
    fn from_params(p: &PhantomParams) -> Subject {
        let mut deform_rng = SplitMix64::derive(p.seed, TAG_DEFORM);
        let mut coef = [0.0f64; 8];
        for c in &mut coef {
            *c = deform_rng.uniform(-1.0, 1.0);
        }
        // Normalizing by the coefficient l1-norm bounds |d| by the amplitude,
        // which keeps 1 + d positive for every valid parameter set.
        let norm: f64 = coef.iter().map(|c| c.abs()).sum();
        let mut bias_rng = SplitMix64::derive(p.seed, TAG_BIAS);
        let bias_phase = [
            bias_rng.uniform(0.0, std::f64::consts::TAU),
            bias_rng.uniform(0.0, std::f64::consts::TAU),
            bias_rng.uniform(0.0, std::f64::consts::TAU),
        ];
        Subject {
            center: [
                (p.dims[0] as f64 - 1.0) / 2.0,
                (p.dims[1] as f64 - 1.0) / 2.0,
                (p.dims[2] as f64 - 1.0) / 2.0,
            ],
            semi: [
                SEMI_AXIS_FRACTION[0] * (p.dims[0] as f64 - 1.0) / 2.0,
                SEMI_AXIS_FRACTION[1] * (p.dims[1] as f64 - 1.0) / 2.0,
                SEMI_AXIS_FRACTION[2] * (p.dims[2] as f64 - 1.0) / 2.0,
            ],
            bounds: shell_bounds(p.num_foreground_classes as usize),
            deform_amplitude: p.deform_amplitude,
            deform_coef: coef,
            deform_norm: norm,
            bias_phase,
        }
    }

    fn label_at(&self, z: usize, y: usize, x: usize) -> u16 {
        let u = (z as f64 - self.center[0]) / self.semi[0];
        let v = (y as f64 - self.center[1]) / self.semi[1];
        let w = (x as f64 - self.center[2]) / self.semi[2];
        let rho = (u * u + v * v + w * w).sqrt();
        let rho = if rho > 0.0 && self.deform_amplitude > 0.0 && self.deform_norm > 0.0 {
            let cos_t = (u / rho).clamp(-1.0, 1.0);
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            let phi = w.atan2(v);
            let modes = harmonic_modes(cos_t, sin_t, phi);
            let mix: f64 = modes
                .iter()
                .zip(&self.deform_coef)
                .map(|(m, c)| m * c)
                .sum();
            let d = self.deform_amplitude * mix / self.deform_norm;
            rho / (1.0 + d)
        } else {
            rho
        };
        if rho >= 1.0 {
            return 0;
        }
        // bounds is descending; label k covers [b_k, b_{k-1})
        let m = self.bounds.len() - 1;
        for k in 1..=m {
            if rho >= self.bounds[k] {
                return k as u16;
            }
        }
        m as u16
    }

    fn bias_at(&self, z: usize, y: usize, x: usize, dims: [usize; 3]) -> f64 {
        let f = |idx: usize, d: usize, phase: f64| {
            let t = if d > 1 { idx as f64 / (d as f64 - 1.0) } else { 0.0 };
            (std::f64::consts::PI * t + phase).sin()
        };
        f(z, dims[0], self.bias_phase[0])
            * f(y, dims[1], self.bias_phase[1])
            * f(x, dims[2], self.bias_phase[2])
    }
}

/// Generates one phantom volume with its ground-truth label map.
///
/// The label map is the noise-free class assignment; the volume only adds the
/// bias field and voxel noise on top of the per-class mean intensities.
pub fn generate_phantom(params: &PhantomParams) -> Result<(Volume<f32>, LabelMap)> {
    params.validate()?;
    let subject = Subject::from_params(params);
    let [d, h, w] = params.dims;
    let n = d * h * w;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n);
    let mut noise_rng = SplitMix64::derive(params.seed, TAG_NOISE);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let label = subject.label_at(z, y, x);
                labels.push(label);
                let mean = if label == 0 {
                    0.0
                } else {
                    params.class_mean_intensities[label as usize - 1]
                };
                let mut value = mean;
                if params.bias_amplitude > 0.0 {
                    value = mean * (1.0 + params.bias_amplitude * subject.bias_at(z, y, x, params.dims));
                }
                if params.noise_sigma > 0.0 {
                    value += params.noise_sigma * noise_rng.next_standard_normal();
                }
                data.push(value as f32);
            }
        }
    }
    let volume = Volume::new(params.dims, [1.0; 3], data)?;
    let map = LabelMap::new(params.dims, params.num_foreground_classes + 1, labels)?;
    Ok((volume, map))
}

/// Cohort of phantoms where item i is generated with seed `base.seed + i`.
pub fn generate_cohort(base: &PhantomParams, count: usize) -> Result<Vec<(Volume<f32>, LabelMap)>> {
    if count == 0 {
        return Err(Error::validation("cohort size must be at least 1"));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut p = base.clone();
        p.seed = base.seed.wrapping_add(i as u64);
        out.push(generate_phantom(&p)?);
    }
    Ok(out)
}
