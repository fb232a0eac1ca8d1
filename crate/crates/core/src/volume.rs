//! Volumetric containers and the preprocessing operations applied to them.
//!
//! A [`Volume`] stores `D·H·W` intensities slice-major (the slice index varies
//! slowest), matching the on-disk layout, so slice extraction along axis 0 is
//! a straight memcpy. Intensities are `f32` in the storage type; the container
//! is generic so the same operations run at `f64` where tests need the extra
//! headroom.

use crate::error::{Error, Result};
use crate::real::Real;

/// Slicing direction, indexing into dims (D, H, W).
///
/// `Z` is axis 0, the slice-major direction and the default slicing axis of
/// the whole pipeline; `Y` and `X` index H and W.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Z,
    Y,
    X,
}

impl Axis {
    pub fn from_index(i: usize) -> Result<Axis> {
        match i {
            0 => Ok(Axis::Z),
            1 => Ok(Axis::Y),
            2 => Ok(Axis::X),
            _ => Err(Error::validation(format!("axis must be 0, 1 or 2, got {i}"))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Axis::Z => 0,
            Axis::Y => 1,
            Axis::X => 2,
        }
    }
}

impl Default for Axis {
    fn default() -> Self {
        Axis::Z
    }
}

/// 3D intensity grid with voxel spacing in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T = f32> {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<T>,
}

impl<T: Real> Volume<T> {
    /// Validates the container invariants: positive dims, positive finite
    /// spacing, data length equal to the voxel count.
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<T>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::validation(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::validation(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::validation(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                n
            )));
        }
        Ok(Volume { dims, spacing, data })
    }

    pub fn constant(dims: [usize; 3], spacing: [f32; 3], value: T) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        Volume::new(dims, spacing, vec![value; n])
    }

    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f32; 3],
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Volume::new(dims, spacing, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> T {
        self.data[(z * self.dims[1] + y) * self.dims[2] + x]
    }

    /// Fails on any non-finite voxel; file I/O and registration require
    /// finite data.
    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::validation(format!("non-finite voxel at linear index {i}"))),
        }
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_f64(&self) -> Volume<f64> {
        self.map(|v| v.into_f64())
    }

    /// Nearest-rank percentile of the voxel distribution: the sorted value at
    /// 1-based index ceil(p/100 · n), clamped to the first element for p = 0.
    pub fn percentile(&self, p: f64) -> Result<T> {
        if self.data.is_empty() {
            return Err(Error::validation("percentile of an empty volume"));
        }
        if !(0.0..=100.0).contains(&p) {
            return Err(Error::validation(format!("percentile must be in [0, 100], got {p}")));
        }
        let mut sorted = self.data.clone();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let n = sorted.len();
        let rank = ((p / 100.0 * n as f64).ceil() as usize).max(1).min(n);
        Ok(sorted[rank - 1])
    }

    /// Clips to the [lo_pct, hi_pct] nearest-rank percentile window and maps
    /// it linearly onto [0, 1]. A constant window (b = a) maps to all zeros so
    /// blank inputs survive batch runs.
    pub fn percentile_normalized(&self, lo_pct: f64, hi_pct: f64) -> Result<Volume<T>> {
        if self.data.is_empty() {
            return Err(Error::validation("percentile_normalize of an empty volume"));
        }
        if !(0.0 <= lo_pct && lo_pct < hi_pct && hi_pct <= 100.0) {
            return Err(Error::validation(format!(
                "need 0 <= lo < hi <= 100, got lo={lo_pct} hi={hi_pct}"
            )));
        }
        let a = self.percentile(lo_pct)?;
        let b = self.percentile(hi_pct)?;
        let data = if b <= a {
            vec![T::zero(); self.data.len()]
        } else {
            let span = b - a;
            self.data
                .iter()
                .map(|&v| {
                    let t = (v - a) / span;
                    if t < T::zero() {
                        T::zero()
                    } else if t > T::one() {
                        T::one()
                    } else {
                        t
                    }
                })
                .collect()
        };
        Ok(Volume {
            dims: self.dims,
            spacing: self.spacing,
            data,
        })
    }

    /// Trilinear resampling with corner-aligned coordinates: output index i'
    /// maps to input coordinate i'·(n−1)/(n'−1), so the corner voxels of the
    /// two grids coincide and resampling to identical dims is exact. Spacing
    /// is rescaled to preserve the physical extent between corner voxels.
    pub fn resampled(&self, new_dims: [usize; 3]) -> Result<Volume<T>> {
        if new_dims.iter().any(|&d| d == 0) {
            return Err(Error::validation(format!(
                "resample dims must be positive, got {new_dims:?}"
            )));
        }
        let scale = |axis: usize| -> f64 {
            if new_dims[axis] > 1 {
                (self.dims[axis] as f64 - 1.0) / (new_dims[axis] as f64 - 1.0)
            } else {
                0.0
            }
        };
        let (sz, sy, sx) = (scale(0), scale(1), scale(2));
        let mut data = Vec::with_capacity(new_dims[0] * new_dims[1] * new_dims[2]);
        for z in 0..new_dims[0] {
            for y in 0..new_dims[1] {
                for x in 0..new_dims[2] {
                    data.push(T::of(self.trilinear_clamped(
                        z as f64 * sz,
                        y as f64 * sy,
                        x as f64 * sx,
                    )));
                }
            }
        }
        let mut spacing = [0.0f32; 3];
        for a in 0..3 {
            // Extent between corner voxels is spacing·(n−1); a single-voxel
            // output keeps the full input extent in its one step.
            spacing[a] = if new_dims[a] > 1 {
                (self.spacing[a] as f64 * (self.dims[a] as f64 - 1.0).max(1.0)
                    / (new_dims[a] as f64 - 1.0)) as f32
            } else {
                self.spacing[a] * self.dims[a] as f32
            };
        }
        Volume::new(new_dims, spacing, data)
    }

    /// Trilinear interpolation at a continuous voxel coordinate, with the
    /// coordinate clamped into the grid. Exact at integer coordinates.
    pub fn trilinear_clamped(&self, z: f64, y: f64, x: f64) -> f64 {
        let z = z.clamp(0.0, (self.dims[0] - 1) as f64);
        let y = y.clamp(0.0, (self.dims[1] - 1) as f64);
        let x = x.clamp(0.0, (self.dims[2] - 1) as f64);
        self.trilinear_inner(z, y, x)
    }

    /// Trilinear interpolation that returns 0 outside the grid, used as the
    /// warping boundary condition.
    pub fn trilinear_zero(&self, z: f64, y: f64, x: f64) -> f64 {
        if z < 0.0
            || y < 0.0
            || x < 0.0
            || z > (self.dims[0] - 1) as f64
            || y > (self.dims[1] - 1) as f64
            || x > (self.dims[2] - 1) as f64
        {
            return 0.0;
        }
        self.trilinear_inner(z, y, x)
    }

    fn trilinear_inner(&self, z: f64, y: f64, x: f64) -> f64 {
        let z0 = z.floor() as usize;
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let fz = z - z0 as f64;
        let fy = y - y0 as f64;
        let fx = x - x0 as f64;
        let z1 = (z0 + 1).min(self.dims[0] - 1);
        let y1 = (y0 + 1).min(self.dims[1] - 1);
        let x1 = (x0 + 1).min(self.dims[2] - 1);
        let v = |zz: usize, yy: usize, xx: usize| self.at(zz, yy, xx).into_f64();
        let c00 = v(z0, y0, x0) * (1.0 - fx) + v(z0, y0, x1) * fx;
        let c01 = v(z0, y1, x0) * (1.0 - fx) + v(z0, y1, x1) * fx;
        let c10 = v(z1, y0, x0) * (1.0 - fx) + v(z1, y0, x1) * fx;
        let c11 = v(z1, y1, x0) * (1.0 - fx) + v(z1, y1, x1) * fx;
        let c0 = c00 * (1.0 - fy) + c01 * fy;
        let c1 = c10 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }

    /// Cuts the volume into its 2D sections along `axis`; the t-th slice is
    /// the section at index t. Inverse of [`Volume::from_slices`].
    pub fn slices(&self, axis: Axis) -> Vec<Slice<T>> {
        let [d, h, w] = self.dims;
        match axis {
            Axis::Z => (0..d)
                .map(|t| Slice {
                    dims: [h, w],
                    data: self.data[t * h * w..(t + 1) * h * w].to_vec(),
                })
                .collect(),
            Axis::Y => (0..h)
                .map(|t| {
                    let mut data = Vec::with_capacity(d * w);
                    for z in 0..d {
                        let row = (z * h + t) * w;
                        data.extend_from_slice(&self.data[row..row + w]);
                    }
                    Slice { dims: [d, w], data }
                })
                .collect(),
            Axis::X => (0..w)
                .map(|t| {
                    let mut data = Vec::with_capacity(d * h);
                    for z in 0..d {
                        for y in 0..h {
                            data.push(self.at(z, y, t));
                        }
                    }
                    Slice { dims: [d, h], data }
                })
                .collect(),
        }
    }

    /// Stacks equally-sized slices back into a volume along `axis`, the
    /// inverse of [`Volume::slices`] on that axis.
    pub fn from_slices(slices: &[Slice<T>], axis: Axis, spacing: [f32; 3]) -> Result<Volume<T>> {
        let first = slices
            .first()
            .ok_or_else(|| Error::validation("cannot assemble a volume from an empty slice list"))?;
        let sdims = first.dims;
        if let Some(bad) = slices.iter().find(|s| s.dims != sdims) {
            return Err(Error::validation(format!(
                "mixed slice dims: {:?} vs {:?}",
                sdims, bad.dims
            )));
        }
        let t_len = slices.len();
        let dims = match axis {
            Axis::Z => [t_len, sdims[0], sdims[1]],
            Axis::Y => [sdims[0], t_len, sdims[1]],
            Axis::X => [sdims[0], sdims[1], t_len],
        };
        let mut data = vec![T::zero(); dims[0] * dims[1] * dims[2]];
        let [_, h, w] = dims;
        for (t, s) in slices.iter().enumerate() {
            match axis {
                Axis::Z => {
                    data[t * h * w..(t + 1) * h * w].copy_from_slice(&s.data);
                }
                Axis::Y => {
                    for z in 0..sdims[0] {
                        let dst = (z * h + t) * w;
                        data[dst..dst + w].copy_from_slice(&s.data[z * w..(z + 1) * w]);
                    }
                }
                Axis::X => {
                    for z in 0..sdims[0] {
                        for y in 0..sdims[1] {
                            data[(z * h + y) * w + t] = s.data[z * sdims[1] + y];
                        }
                    }
                }
            }
        }
        Volume::new(dims, spacing, data)
    }
}

/// 2D section of a volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice<T = f32> {
    dims: [usize; 2],
    data: Vec<T>,
}

impl<T: Real> Slice<T> {
    pub fn new(dims: [usize; 2], data: Vec<T>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] {
            return Err(Error::validation(format!(
                "slice data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Slice { dims, data })
    }

    pub fn constant(dims: [usize; 2], value: T) -> Self {
        Slice {
            dims,
            data: vec![value; dims[0] * dims[1]],
        }
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Slice<U> {
        Slice {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_f64(&self) -> Slice<f64> {
        self.map(|v| v.into_f64())
    }
}

/// Integer class assignment over a voxel grid; label 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    dims: [usize; 3],
    num_classes: u16,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(dims: [usize; 3], num_classes: u16, labels: Vec<u16>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::validation(format!("dims must be positive, got {dims:?}")));
        }
        if num_classes < 2 {
            return Err(Error::validation(format!(
                "need at least 2 classes (background + 1), got {num_classes}"
            )));
        }
        if labels.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::validation(format!(
                "label count {} does not match dims {:?}",
                labels.len(),
                dims
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::validation(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabelMap {
            dims,
            num_classes,
            labels,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> u16 {
        self.labels[(z * self.dims[1] + y) * self.dims[2] + x]
    }

    /// Voxel count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes as usize];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}
