//! 12-parameter affine registration by multi-resolution gradient descent,
//! plus intensity and label warping.
//!
//! A transform maps fixed-grid coordinates to moving-grid coordinates (the
//! pull-back convention: resampling evaluates the moving image at transformed
//! fixed coordinates). Optimization runs coarse-to-fine over a mean-pooled
//! pyramid, parameterized center-relative (matrix acting about the volume
//! centers) which keeps the translation and matrix parts comparably scaled.
//! Gradients flow analytically through the trilinear sampler; an adaptive
//! moment scheme takes the steps, halving any step that would flip the
//! orientation, and the best objective seen per level is what advances.
//!
//! Transform file format (`.saff`): header line `SAFF 1`, then 12 decimal
//! numbers row-major (matrix rows, then translation), printed with enough
//! digits to round-trip f64 exactly.

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::real::Real;
use crate::volume::{LabelMap, Volume};
use std::path::Path;

/// Affine map p ↦ matrix·p + translation in voxel coordinates, fixed grid to
/// moving grid. The matrix must preserve orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    matrix: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl AffineTransform {
    pub fn new(matrix: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let t = AffineTransform { matrix, translation };
        if !t
            .matrix
            .iter()
            .flatten()
            .chain(&t.translation)
            .all(|v| v.is_finite())
        {
            return Err(Error::validation("affine parameters must be finite"));
        }
        if t.det() <= 0.0 {
            return Err(Error::validation(format!(
                "affine matrix must preserve orientation, det = {}",
                t.det()
            )));
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        AffineTransform {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn translation_by(d: [f64; 3]) -> Self {
        AffineTransform {
            matrix: AffineTransform::identity().matrix,
            translation: d,
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.matrix
    }

    pub fn translation(&self) -> &[f64; 3] {
        &self.translation
    }

    pub fn det(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + self.translation[0],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + self.translation[1],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + self.translation[2],
        ]
    }

    /// self ∘ inner: applies `inner` first. Warping by `inner` and then by
    /// `self` resamples like a single warp by this composition.
    pub fn compose(&self, inner: &AffineTransform) -> AffineTransform {
        let mut matrix = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for (k, inner_row) in inner.matrix.iter().enumerate() {
                    matrix[i][j] += self.matrix[i][k] * inner_row[j];
                }
            }
        }
        let translation = self.apply(inner.translation);
        AffineTransform {
            matrix,
            translation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Negative normalized cross-correlation; robust to intensity scaling.
    Ncc,
    /// Mean squared difference.
    Ssd,
}

#[derive(Debug, Clone)]
pub struct RegConfig {
    pub pyramid_levels: usize,
    pub iters_per_level: usize,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub objective: Objective,
    /// Early stop when the relative objective change over 10 iterations drops
    /// below this.
    pub convergence_tol: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            pyramid_levels: 3,
            iters_per_level: 200,
            step_size: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            objective: Objective::Ncc,
            convergence_tol: 1e-6,
        }
    }
}

struct Level {
    data: Vec<f64>,
    dims: [usize; 3],
}

impl Level {
    fn center(&self) -> [f64; 3] {
        [
            (self.dims[0] as f64 - 1.0) / 2.0,
            (self.dims[1] as f64 - 1.0) / 2.0,
            (self.dims[2] as f64 - 1.0) / 2.0,
        ]
    }

    fn variance(&self) -> f64 {
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }

    /// Trilinear sample with zero padding (cells beyond the grid read 0, so
    /// the interpolant decays continuously to zero) and its spatial gradient.
    fn sample_grad(&self, q: [f64; 3]) -> (f64, [f64; 3]) {
        let [d, h, w] = self.dims;
        let f0 = [q[0].floor(), q[1].floor(), q[2].floor()];
        let fz = q[0] - f0[0];
        let fy = q[1] - f0[1];
        let fx = q[2] - f0[2];
        let iz = f0[0] as i64;
        let iy = f0[1] as i64;
        let ix = f0[2] as i64;
        let at = |z: i64, y: i64, x: i64| -> f64 {
            if z < 0 || y < 0 || x < 0 || z >= d as i64 || y >= h as i64 || x >= w as i64 {
                0.0
            } else {
                self.data[(z as usize * h + y as usize) * w + x as usize]
            }
        };
        let mut value = 0.0;
        let mut grad = [0.0f64; 3];
        for dz in 0..2i64 {
            let wz = if dz == 0 { 1.0 - fz } else { fz };
            let dwz = if dz == 0 { -1.0 } else { 1.0 };
            for dy in 0..2i64 {
                let wy = if dy == 0 { 1.0 - fy } else { fy };
                let dwy = if dy == 0 { -1.0 } else { 1.0 };
                for dx in 0..2i64 {
                    let wx = if dx == 0 { 1.0 - fx } else { fx };
                    let dwx = if dx == 0 { -1.0 } else { 1.0 };
                    let c = at(iz + dz, iy + dy, ix + dx);
                    value += wz * wy * wx * c;
                    grad[0] += dwz * wy * wx * c;
                    grad[1] += wz * dwy * wx * c;
                    grad[2] += wz * wy * dwx * c;
                }
            }
        }
        (value, grad)
    }
}

/// 2×2×2 mean pooling with ceil dims; odd tails average the voxels they have.
fn pool_level(level: &Level) -> Level {
    let [d, h, w] = level.dims;
    let od = [d.div_ceil(2), h.div_ceil(2), w.div_ceil(2)];
    let mut data = vec![0.0f64; od[0] * od[1] * od[2]];
    for z in 0..od[0] {
        for y in 0..od[1] {
            for x in 0..od[2] {
                let mut acc = 0.0;
                let mut count = 0.0;
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (sz, sy, sx) = (2 * z + dz, 2 * y + dy, 2 * x + dx);
                            if sz < d && sy < h && sx < w {
                                acc += level.data[(sz * h + sy) * w + sx];
                                count += 1.0;
                            }
                        }
                    }
                }
                data[(z * od[1] + y) * od[2] + x] = acc / count;
            }
        }
    }
    Level { data, dims: od }
}

fn pyramid<T: Real>(v: &Volume<T>, levels: usize) -> Vec<Level> {
    let mut out = vec![Level {
        data: v.data().iter().map(|&x| x.into_f64()).collect(),
        dims: v.dims(),
    }];
    while out.len() < levels {
        let next = pool_level(out.last().unwrap());
        // stop before levels degenerate below any useful structure
        if next.dims.iter().any(|&d| d < 4) {
            break;
        }
        out.push(next);
    }
    out
}

/// Parameter layout of the optimizer: row-major matrix then translation. The
/// internal map is q = M·(p − c_fixed) + c_moving + t.
fn params_to_transform(p: &[f64; 12], c_fixed: [f64; 3], c_moving: [f64; 3]) -> AffineTransform {
    let matrix = [
        [p[0], p[1], p[2]],
        [p[3], p[4], p[5]],
        [p[6], p[7], p[8]],
    ];
    let mut translation = [p[9], p[10], p[11]];
    for i in 0..3 {
        translation[i] += c_moving[i]
            - (matrix[i][0] * c_fixed[0] + matrix[i][1] * c_fixed[1] + matrix[i][2] * c_fixed[2]);
    }
    AffineTransform {
        matrix,
        translation,
    }
}

fn param_det(p: &[f64; 12]) -> f64 {
    p[0] * (p[4] * p[8] - p[5] * p[7]) - p[1] * (p[3] * p[8] - p[5] * p[6])
        + p[2] * (p[3] * p[7] - p[4] * p[6])
}

/// Objective (to minimize) and its gradient over the 12 parameters at one
/// pyramid level. NCC returns −ncc so both objectives minimize; a warped image
/// with no variance (moving pushed fully off-grid) scores 0 with zero
/// gradient rather than failing.
fn objective_and_grad(
    moving: &Level,
    fixed: &Level,
    params: &[f64; 12],
    objective: Objective,
) -> (f64, [f64; 12]) {
    let c_f = fixed.center();
    let c_m = moving.center();
    let [d, h, w] = fixed.dims;
    let n = d * h * w;

    let mut warped = vec![0.0f64; n];
    let mut grads = vec![[0.0f64; 3]; n];
    let mut offsets = vec![[0.0f64; 3]; n];
    let mut i = 0;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let dp = [z as f64 - c_f[0], y as f64 - c_f[1], x as f64 - c_f[2]];
                let q = [
                    params[0] * dp[0] + params[1] * dp[1] + params[2] * dp[2] + c_m[0] + params[9],
                    params[3] * dp[0] + params[4] * dp[1] + params[5] * dp[2] + c_m[1] + params[10],
                    params[6] * dp[0] + params[7] * dp[1] + params[8] * dp[2] + c_m[2] + params[11],
                ];
                let (value, grad) = moving.sample_grad(q);
                warped[i] = value;
                grads[i] = grad;
                offsets[i] = dp;
                i += 1;
            }
        }
    }

    let nf = n as f64;
    let mean_w = warped.iter().sum::<f64>() / nf;
    let mean_f = fixed.data.iter().sum::<f64>() / nf;
    let mut s_ww = 0.0;
    let mut s_ff = 0.0;
    let mut s_fw = 0.0;
    for i in 0..n {
        let dw = warped[i] - mean_w;
        let df = fixed.data[i] - mean_f;
        s_ww += dw * dw;
        s_ff += df * df;
        s_fw += df * dw;
    }

    let mut grad_out = [0.0f64; 12];
    // d(objective)/d(warped voxel), folded with the chain rule below
    let dobj_dw = |i: usize| -> f64 {
        match objective {
            Objective::Ssd => 2.0 * (warped[i] - fixed.data[i]) / nf,
            Objective::Ncc => {
                let denom = (s_ff * s_ww).sqrt();
                -((fixed.data[i] - mean_f) / denom
                    - s_fw * (warped[i] - mean_w) / (s_ww * denom))
            }
        }
    };
    let obj = match objective {
        Objective::Ssd => {
            warped
                .iter()
                .zip(&fixed.data)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / nf
        }
        Objective::Ncc => {
            if s_ww <= 1e-20 || s_ff <= 1e-20 {
                return (0.0, grad_out);
            }
            -(s_fw / (s_ff * s_ww).sqrt())
        }
    };
    for i in 0..n {
        let g = dobj_dw(i);
        if g == 0.0 {
            continue;
        }
        for r in 0..3 {
            let gr = g * grads[i][r];
            grad_out[9 + r] += gr;
            grad_out[3 * r] += gr * offsets[i][0];
            grad_out[3 * r + 1] += gr * offsets[i][1];
            grad_out[3 * r + 2] += gr * offsets[i][2];
        }
    }
    (obj, grad_out)
}

/// Evaluates the registration objective and its gradient at a given transform,
/// at full resolution. NCC is returned negated (both objectives are minimized,
/// matching what `register_affine` optimizes; its reported similarity flips
/// the sign back). The gradient is ordered as the nine row-major matrix
/// entries then the three translation components.
///
/// An NCC evaluation where either image has no variance under the transform
/// returns 0 with a zero gradient.
pub fn registration_objective<T: Real>(
    moving: &Volume<T>,
    fixed: &Volume<T>,
    t: &AffineTransform,
    objective: Objective,
) -> Result<(f64, [f64; 12])> {
    moving.ensure_finite()?;
    fixed.ensure_finite()?;
    let level_m = Level {
        data: moving.data().iter().map(|&x| x.into_f64()).collect(),
        dims: moving.dims(),
    };
    let level_f = Level {
        data: fixed.data().iter().map(|&x| x.into_f64()).collect(),
        dims: fixed.dims(),
    };
    let c_f = level_f.center();
    let c_m = level_m.center();
    // external t(p) = A·p + b rewritten in the internal center-relative layout
    let a = t.matrix();
    let b = t.translation();
    let mut params = [0.0f64; 12];
    for r in 0..3 {
        for j in 0..3 {
            params[3 * r + j] = a[r][j];
        }
        params[9 + r] = b[r] - c_m[r] + a[r][0] * c_f[0] + a[r][1] * c_f[1] + a[r][2] * c_f[2];
    }
    let (obj, g) = objective_and_grad(&level_m, &level_f, &params, objective);
    // varying A with b held fixed also moves the internal translation
    let mut grad = [0.0f64; 12];
    for r in 0..3 {
        for j in 0..3 {
            grad[3 * r + j] = g[3 * r + j] + g[9 + r] * c_f[j];
        }
        grad[9 + r] = g[9 + r];
    }
    Ok((obj, grad))
}

/// Registers `moving` onto `fixed`: finds the affine map that makes the moving
/// image, resampled at transformed fixed coordinates, match the fixed image.
///
/// Returns the transform and the final similarity: NCC (higher is better)
/// under the ncc objective, mean squared difference (lower is better) under
/// ssd.
pub fn register_affine<T: Real>(
    moving: &Volume<T>,
    fixed: &Volume<T>,
    cfg: &RegConfig,
) -> Result<(AffineTransform, f64)> {
    if cfg.pyramid_levels == 0 || cfg.iters_per_level == 0 {
        return Err(Error::validation("registration needs at least 1 level and 1 iteration"));
    }
    moving.ensure_finite()?;
    fixed.ensure_finite()?;
    let pyr_m = pyramid(moving, cfg.pyramid_levels);
    let pyr_f = pyramid(fixed, cfg.pyramid_levels);
    let levels = pyr_m.len().min(pyr_f.len());
    if cfg.objective == Objective::Ncc
        && (pyr_m[0].variance() <= 0.0 || pyr_f[0].variance() <= 0.0)
    {
        return Err(Error::validation(
            "ncc is undefined on a constant image; use the ssd objective",
        ));
    }

    let mut params: [f64; 12] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
    let mut best_obj = f64::INFINITY;
    for level in (0..levels).rev() {
        let m = &pyr_m[level];
        let f = &pyr_f[level];
        // The optimizer normalizes per-parameter step magnitudes, so matrix
        // entries are rescaled to displacement units: a unit change in a
        // scaled entry moves edge voxels about one voxel, same as a unit
        // translation change. Without this the matrix drifts along the
        // near-flat directions of symmetric subjects.
        let c_f = f.center();
        let c_scale = ((c_f[0] + c_f[1] + c_f[2]) / 3.0).max(1.0);
        let to_params = |u: &[f64; 12]| -> [f64; 12] {
            let mut p = *u;
            for v in p.iter_mut().take(9) {
                *v /= c_scale;
            }
            p
        };
        let mut u = params;
        for v in u.iter_mut().take(9) {
            *v *= c_scale;
        }

        let mut adam = Adam::<f64>::with_hyper(12, cfg.beta1, cfg.beta2, 1e-8);
        let mut best = u;
        best_obj = objective_and_grad(m, f, &to_params(&u), cfg.objective).0;
        let mut recent = vec![best_obj];

        for _ in 0..cfg.iters_per_level {
            let (obj, mut grad) = objective_and_grad(m, f, &to_params(&u), cfg.objective);
            for g in grad.iter_mut().take(9) {
                *g /= c_scale;
            }
            if obj < best_obj {
                best_obj = obj;
                best = u;
            }
            let prev = u;
            let mut stepped = u.to_vec();
            adam.step(&mut stepped, &grad, cfg.step_size);
            u.copy_from_slice(&stepped);
            // halve the step toward the previous iterate until orientation
            // is preserved again
            let mut halvings = 0;
            while param_det(&to_params(&u)) <= 1e-9 && halvings < 60 {
                for i in 0..12 {
                    u[i] = 0.5 * (u[i] + prev[i]);
                }
                halvings += 1;
            }

            recent.push(obj);
            if recent.len() > 10 {
                let old = recent[recent.len() - 11];
                if (old - obj).abs() <= cfg.convergence_tol * obj.abs().max(1e-12) {
                    break;
                }
            }
        }
        // re-check the last iterate before moving on
        let (obj, _) = objective_and_grad(m, f, &to_params(&u), cfg.objective);
        if obj < best_obj {
            best_obj = obj;
            best = u;
        }
        params = to_params(&best);

        if level > 0 {
            // one level finer doubles the voxel coordinates; the matrix is
            // scale-free and the translation doubles (the half-voxel grid
            // offset of the pooling is left to the finer level to absorb)
            params[9] *= 2.0;
            params[10] *= 2.0;
            params[11] *= 2.0;
        }
    }

    let c_f = pyr_f[0].center();
    let c_m = pyr_m[0].center();
    let transform = params_to_transform(&params, c_f, c_m);
    let final_value = match cfg.objective {
        Objective::Ncc => -best_obj,
        Objective::Ssd => best_obj,
    };
    Ok((transform, final_value))
}

/// Resamples `v` through the transform: output voxel p reads the trilinear
/// sample of `v` at t(p), zero outside the grid.
pub fn warp_volume<T: Real>(
    v: &Volume<T>,
    t: &AffineTransform,
    out_dims: [usize; 3],
) -> Result<Volume<T>> {
    let n = out_dims[0] * out_dims[1] * out_dims[2];
    let mut data = Vec::with_capacity(n);
    for z in 0..out_dims[0] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[2] {
                let q = t.apply([z as f64, y as f64, x as f64]);
                data.push(T::of(v.trilinear_zero(q[0], q[1], q[2])));
            }
        }
    }
    Volume::new(out_dims, v.spacing(), data)
}

/// Nearest-neighbor label resampling; outside samples become background 0.
pub fn warp_labels(m: &LabelMap, t: &AffineTransform, out_dims: [usize; 3]) -> Result<LabelMap> {
    let [d, h, w] = m.dims();
    let n = out_dims[0] * out_dims[1] * out_dims[2];
    let mut labels = Vec::with_capacity(n);
    for z in 0..out_dims[0] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[2] {
                let q = t.apply([z as f64, y as f64, x as f64]);
                let r = [q[0].round(), q[1].round(), q[2].round()];
                let inside = r[0] >= 0.0
                    && r[1] >= 0.0
                    && r[2] >= 0.0
                    && r[0] < d as f64
                    && r[1] < h as f64
                    && r[2] < w as f64;
                labels.push(if inside {
                    m.at(r[0] as usize, r[1] as usize, r[2] as usize)
                } else {
                    0
                });
            }
        }
    }
    LabelMap::new(out_dims, m.num_classes(), labels)
}

pub fn save_transform(t: &AffineTransform, path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("SAFF 1\n");
    for row in t.matrix() {
        text.push_str(&format!("{:.16e} {:.16e} {:.16e}\n", row[0], row[1], row[2]));
    }
    let b = t.translation();
    text.push_str(&format!("{:.16e} {:.16e} {:.16e}\n", b[0], b[1], b[2]));
    std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_transform(path: impl AsRef<Path>) -> Result<AffineTransform> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header.trim() != "SAFF 1" {
        return Err(Error::format(format!(
            "transform {}: expected header 'SAFF 1', found {header:?}",
            path.display()
        )));
    }
    let values: Vec<f64> = lines
        .flat_map(|l| l.split_whitespace())
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| {
                Error::format(format!(
                    "transform {}: {tok:?} is not a number",
                    path.display()
                ))
            })
        })
        .collect::<Result<_>>()?;
    if values.len() != 12 {
        return Err(Error::format(format!(
            "transform {}: expected 12 numbers, found {}",
            path.display(),
            values.len()
        )));
    }
    AffineTransform::new(
        [
            [values[0], values[1], values[2]],
            [values[3], values[4], values[5]],
            [values[6], values[7], values[8]],
        ],
        [values[9], values[10], values[11]],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ncc;
    use crate::rng::{NormalSource, SplitMix64};

    fn phantom32(seed: u64) -> Volume<f32> {
        let p = crate::phantom::PhantomParams::new([32, 32, 32], seed).with_classes(3);
        crate::phantom::generate_phantom(&p).unwrap().0
    }

    /// Smooth random volume: white noise mean-pooled twice, then upsampled by
    /// nearest neighbor; enough structure for NCC, no grid-scale texture.
    fn smooth_volume(dims: [usize; 3], seed: u64) -> Volume<f64> {
        let mut rng = SplitMix64::new(seed);
        let coarse = [dims[0] / 4, dims[1] / 4, dims[2] / 4];
        let n = coarse[0] * coarse[1] * coarse[2];
        let values: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        Volume::from_fn(dims, [1.0; 3], |z, y, x| {
            let i = ((z / 4).min(coarse[0] - 1) * coarse[1] + (y / 4).min(coarse[1] - 1))
                * coarse[2]
                + (x / 4).min(coarse[2] - 1);
            values[i]
        })
        .unwrap()
    }

    #[test]
    fn identity_warp_reproduces_the_volume() {
        let v = phantom32(1);
        let w = warp_volume(&v, &AffineTransform::identity(), v.dims()).unwrap();
        for (a, b) in v.data().iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let (_, labels) = crate::phantom::generate_phantom(
            &crate::phantom::PhantomParams::new([16, 16, 16], 2).with_classes(3),
        )
        .unwrap();
        let warped = warp_labels(&labels, &AffineTransform::identity(), labels.dims()).unwrap();
        assert_eq!(warped.labels(), labels.labels());
    }

    #[test]
    fn integer_translation_shifts_exactly() {
        // constant-interior block: a region of one value whose shifted copy
        // must be voxel-exact
        let v = Volume::from_fn([12, 12, 12], [1.0; 3], |z, y, x| {
            if (3..9).contains(&z) && (3..9).contains(&y) && (3..9).contains(&x) {
                1.0f32
            } else {
                0.0
            }
        })
        .unwrap();
        let t = AffineTransform::translation_by([2.0, -1.0, 3.0]);
        let w = warp_volume(&v, &t, v.dims()).unwrap();
        for z in 0..12usize {
            for y in 0..12usize {
                for x in 0..12usize {
                    let sz = z as i64 + 2;
                    let sy = y as i64 - 1;
                    let sx = x as i64 + 3;
                    let want = if (3..9).contains(&sz) && (3..9).contains(&sy) && (3..9).contains(&sx)
                    {
                        1.0
                    } else {
                        0.0
                    };
                    assert_eq!(w.at(z, y, x), want, "at ({z},{y},{x})");
                }
            }
        }

        let labels = LabelMap::new(
            [4, 4, 4],
            2,
            (0..64).map(|i| if i % 7 == 0 { 1 } else { 0 }).collect(),
        )
        .unwrap();
        let shift = AffineTransform::translation_by([1.0, 0.0, 0.0]);
        let moved = warp_labels(&labels, &shift, [4, 4, 4]).unwrap();
        for z in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(moved.at(z, y, x), labels.at(z + 1, y, x));
                }
            }
        }
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(moved.at(3, y, x), 0);
            }
        }
    }

    #[test]
    fn composition_applies_inner_first() {
        let t1 = AffineTransform::new(
            [[1.02, 0.01, 0.0], [0.0, 0.98, 0.02], [0.01, 0.0, 1.01]],
            [0.5, -0.3, 0.2],
        )
        .unwrap();
        let t2 = AffineTransform::new(
            [[0.99, 0.0, 0.02], [0.01, 1.03, 0.0], [0.0, 0.01, 0.97]],
            [-0.4, 0.6, 0.1],
        )
        .unwrap();
        let composed = t1.compose(&t2);
        let mut rng = SplitMix64::new(9);
        for _ in 0..50 {
            let p = [
                30.0 * rng.next_f64(),
                30.0 * rng.next_f64(),
                30.0 * rng.next_f64(),
            ];
            let direct = t1.apply(t2.apply(p));
            let via = composed.apply(p);
            for i in 0..3 {
                assert!((direct[i] - via[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn warp_composition_matches_single_warp() {
        // low-frequency field: two resampling passes cost at most a few 1e-3
        // of trilinear interpolation error, well inside the gate
        let dims = [24usize, 24, 24];
        let v = Volume::from_fn(dims, [1.0; 3], |z, y, x| {
            let s = std::f64::consts::TAU / 24.0;
            0.5 + 0.15 * (s * z as f64 + 0.3).sin()
                + 0.15 * (s * y as f64 + 1.1).sin()
                + 0.15 * (s * x as f64 + 2.4).sin()
                + 0.1 * (s * (z + y + x) as f64 * 0.5).sin()
        })
        .unwrap();
        let t1 = AffineTransform::new(
            [[1.02, 0.01, 0.0], [0.0, 0.98, 0.02], [0.01, 0.0, 1.01]],
            [0.5, -0.3, 0.2],
        )
        .unwrap();
        let t2 = AffineTransform::new(
            [[0.99, 0.0, 0.02], [0.01, 1.03, 0.0], [0.0, 0.01, 0.97]],
            [-0.4, 0.6, 0.1],
        )
        .unwrap();
        let two_step = warp_volume(&warp_volume(&v, &t1, v.dims()).unwrap(), &t2, v.dims()).unwrap();
        let one_step = warp_volume(&v, &t1.compose(&t2), v.dims()).unwrap();
        // compare away from the boundary where zero fill differs
        for z in 4..20 {
            for y in 4..20 {
                for x in 4..20 {
                    let a = two_step.at(z, y, x);
                    let b = one_step.at(z, y, x);
                    assert!((a - b).abs() < 2e-2, "({z},{y},{x}): {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn near_identity_label_warp_preserves_counts() {
        let p = crate::phantom::PhantomParams::new([32, 32, 32], 5).with_classes(3);
        let (_, labels) = crate::phantom::generate_phantom(&p).unwrap();
        // mild warp about the volume center so displacements stay subvoxel
        let m = [[1.01, 0.0, 0.0], [0.0, 0.99, 0.01], [0.0, 0.0, 1.0]];
        let c = 15.5;
        let t = AffineTransform::new(
            m,
            [
                c - (m[0][0] + m[0][1] + m[0][2]) * c + 0.1,
                c - (m[1][0] + m[1][1] + m[1][2]) * c - 0.1,
                c - (m[2][0] + m[2][1] + m[2][2]) * c + 0.1,
            ],
        )
        .unwrap();
        let warped = warp_labels(&labels, &t, labels.dims()).unwrap();
        let before = labels.class_counts();
        let after = warped.class_counts();
        for k in 1..before.len() {
            let b = before[k] as f64;
            let a = after[k] as f64;
            assert!((a - b).abs() / b < 0.05, "label {k}: {b} -> {a}");
        }
    }

    #[test]
    fn transform_file_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.saff");
        let t = AffineTransform::new(
            [
                [1.0 / 3.0, 0.01, -0.02],
                [0.0, 0.97, 1e-17],
                [0.03, -0.001, 1.05],
            ],
            [2.5, -3.25, 0.1 + 0.2],
        )
        .unwrap();
        save_transform(&t, &path).unwrap();
        let back = load_transform(&path).unwrap();
        assert_eq!(t, back);

        std::fs::write(&path, "AFFX 1\n1 0 0 0 1 0 0 0 1 0 0 0\n").unwrap();
        assert!(load_transform(&path).is_err());
        std::fs::write(&path, "SAFF 1\n-1 0 0 0 1 0 0 0 1 0 0 0\n").unwrap();
        assert!(load_transform(&path).is_err());
        std::fs::write(&path, "SAFF 1\n1 0 0 0 1 0 0 0 1 0 0\n").unwrap();
        assert!(load_transform(&path).is_err());
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        // frozen seeds keep every probe off the interpolation kinks
        for (case, seed) in [3u64, 17, 29, 41, 53].into_iter().enumerate() {
            let moving = smooth_volume([8, 8, 8], seed);
            let fixed = smooth_volume([8, 8, 8], seed ^ 0xF00D);
            let pm = pyramid(&moving, 1);
            let pf = pyramid(&fixed, 1);
            let mut rng = SplitMix64::new(seed);
            let mut params = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
            for p in params.iter_mut().take(9) {
                *p += 0.02 * rng.next_standard_normal();
            }
            for p in params.iter_mut().skip(9) {
                *p += 0.3 + 0.1 * rng.next_f64();
            }
            for objective in [Objective::Ncc, Objective::Ssd] {
                let (_, grad) = objective_and_grad(&pm[0], &pf[0], &params, objective);
                let step = 1e-4;
                for i in 0..12 {
                    let mut up = params;
                    up[i] += step;
                    let mut down = params;
                    down[i] -= step;
                    let fd = (objective_and_grad(&pm[0], &pf[0], &up, objective).0
                        - objective_and_grad(&pm[0], &pf[0], &down, objective).0)
                        / (2.0 * step);
                    let rel = (fd - grad[i]).abs() / grad[i].abs().max(fd.abs()).max(1e-4);
                    assert!(rel < 1e-3, "case {case} {objective:?} param {i}: rel {rel}");
                }
            }
        }
    }

    #[test]
    fn self_registration_stays_at_identity() {
        let v = phantom32(7);
        let (t, final_ncc) = register_affine(&v, &v, &RegConfig::default()).unwrap();
        assert!(final_ncc > 0.999, "ncc {final_ncc}");
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (t.matrix()[i][j] - want).abs() < 1e-2,
                    "matrix[{i}][{j}] = {}",
                    t.matrix()[i][j]
                );
            }
            assert!(t.translation()[i].abs() < 0.1, "translation {:?}", t.translation());
        }
    }

    #[test]
    fn integer_shift_is_recovered() {
        let fixed = phantom32(11);
        let shift = AffineTransform::translation_by([3.0, -2.0, 1.0]);
        let moving = warp_volume(&fixed, &shift, fixed.dims()).unwrap();
        // moving(p) = fixed(p + d), so the registration must sample moving at
        // p - d: recovered translation = -d
        let (t, final_ncc) = register_affine(&moving, &fixed, &RegConfig::default()).unwrap();
        assert!(final_ncc > 0.98, "ncc {final_ncc}");
        let want = [-3.0, 2.0, -1.0];
        for i in 0..3 {
            assert!(
                (t.translation()[i] - want[i]).abs() < 0.5,
                "translation {:?} vs {want:?}",
                t.translation()
            );
        }
    }

    #[test]
    fn center_scaling_is_recovered() {
        let fixed = phantom32(13);
        let c = 15.5;
        let scale = [1.1, 0.95, 1.05];
        // q = S(p - c) + c
        let t_true = AffineTransform::new(
            [[scale[0], 0.0, 0.0], [0.0, scale[1], 0.0], [0.0, 0.0, scale[2]]],
            [
                c * (1.0 - scale[0]),
                c * (1.0 - scale[1]),
                c * (1.0 - scale[2]),
            ],
        )
        .unwrap();
        let moving = warp_volume(&fixed, &t_true, fixed.dims()).unwrap();
        let (t, _) = register_affine(&moving, &fixed, &RegConfig::default()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 / scale[i] } else { 0.0 };
                assert!(
                    (t.matrix()[i][j] - want).abs() < 0.02,
                    "matrix[{i}][{j}] = {} vs {want}",
                    t.matrix()[i][j]
                );
            }
        }
    }

    #[test]
    fn constant_images_need_ssd() {
        let flat = Volume::constant([8, 8, 8], [1.0; 3], 0.5f32).unwrap();
        let v = phantom32(17);
        let small = warp_volume(&v, &AffineTransform::identity(), [8, 8, 8]).unwrap();
        assert!(register_affine(&flat, &small, &RegConfig::default()).is_err());
        let cfg = RegConfig {
            objective: Objective::Ssd,
            pyramid_levels: 1,
            iters_per_level: 5,
            ..RegConfig::default()
        };
        register_affine(&flat, &small, &cfg).unwrap();
    }

    #[test]
    fn registration_improves_over_identity() {
        let fixed = phantom32(19);
        let t_small = AffineTransform::new(
            [[1.03, 0.01, 0.0], [0.0, 0.97, 0.02], [0.01, 0.0, 1.02]],
            [1.5, -1.0, 0.5],
        )
        .unwrap();
        let moving = warp_volume(&fixed, &t_small, fixed.dims()).unwrap();
        let before = ncc(
            &moving.data().iter().map(|&v| v as f64).collect::<Vec<_>>(),
            &fixed.data().iter().map(|&v| v as f64).collect::<Vec<_>>(),
        );
        let (_, after) = register_affine(&moving, &fixed, &RegConfig::default()).unwrap();
        assert!(after > before, "ncc {before} -> {after}");
        assert!(after > 0.98, "{after}");
    }

    #[test]
    fn determinant_is_guarded() {
        assert!(AffineTransform::new(
            [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [0.0; 3]
        )
        .is_err());
        let t = AffineTransform::identity();
        assert_eq!(t.det(), 1.0);
    }

    #[test]
    fn public_objective_agrees_with_registration_and_itself() {
        let fixed = phantom32(23);
        let t_small = AffineTransform::new(
            [[1.02, 0.0, 0.01], [0.01, 0.98, 0.0], [0.0, 0.01, 1.01]],
            [1.0, -0.5, 0.8],
        )
        .unwrap();
        let moving = warp_volume(&fixed, &t_small, fixed.dims()).unwrap();
        let (t_hat, similarity) = register_affine(&moving, &fixed, &RegConfig::default()).unwrap();
        let (obj, _) = registration_objective(&moving, &fixed, &t_hat, Objective::Ncc).unwrap();
        assert!(
            (obj + similarity).abs() < 1e-9,
            "objective {obj} vs reported similarity {similarity}"
        );
        // identity on identical volumes is perfect correlation
        let (self_obj, _) =
            registration_objective(&fixed, &fixed, &AffineTransform::identity(), Objective::Ncc)
                .unwrap();
        assert!((self_obj + 1.0).abs() < 1e-12, "{self_obj}");
    }
}
