//! Histogram estimate of the target/source feature density ratio.

use std::collections::HashMap;

use crate::data::Dataset;
use crate::dyadic::{axis_coord, TreeIndex, TreeKind, MAX_AXIS_SPLITS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dimensions up to which point weights are multilinearly interpolated
/// between cell centres; above it the containing cell's weight is used.
pub const MAX_INTERPOLATION_DIM: usize = 10;

/// Importance weight `q_X(x) / p_X(x)` at a point.
pub trait DensityRatio<T>: Sync {
    fn weight(&self, x: &[T]) -> T;
}

impl<T, F> DensityRatio<T> for F
where
    F: Fn(&[T]) -> T + Sync,
{
    fn weight(&self, x: &[T]) -> T {
        self(x)
    }
}

/// Per-cell ratio of smoothed target and source frequencies on a regular
/// dyadic grid.
#[derive(Debug, Clone)]
pub struct RatioEstimate<T> {
    level: u32,
    dim: usize,
    pseudo_count: T,
    cell_weights: HashMap<Box<[u32]>, T>,
    /// Weight of a cell holding neither sample.
    empty_weight: T,
}

impl<T: Scalar> RatioEstimate<T> {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn pseudo_count(&self) -> T {
        self.pseudo_count
    }

    /// Weights of the cells occupied by either sample.
    pub fn cell_weights(&self) -> impl Iterator<Item = (&[u32], T)> + '_ {
        self.cell_weights.iter().map(|(k, &v)| (k.as_ref(), v))
    }

    /// Weight of the cell with the given coordinates.
    pub fn cell_weight(&self, coords: &[u32]) -> T {
        self.cell_weights.get(coords).copied().unwrap_or(self.empty_weight)
    }

    /// Weight of the cell containing `x`, without interpolation.
    pub fn cell_weight_at(&self, x: &[T]) -> T {
        let key: Vec<u32> = x.iter().map(|&v| axis_coord(v, self.level)).collect();
        self.cell_weight(&key)
    }

    fn interpolated(&self, x: &[T]) -> T {
        let m = 1i64 << self.level;
        let mut lo = Vec::with_capacity(self.dim);
        let mut frac = Vec::with_capacity(self.dim);
        for &v in x {
            let u = v.as_f64() * m as f64 - 0.5;
            let i0 = (u.floor() as i64).clamp(0, m - 1);
            let t = (u - i0 as f64).clamp(0.0, 1.0);
            lo.push(i0);
            frac.push(if i0 + 1 >= m { 0.0 } else { t });
        }
        let mut total = 0.0;
        let mut key = vec![0u32; self.dim];
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            for j in 0..self.dim {
                let up = (corner >> j) & 1 == 1;
                w *= if up { frac[j] } else { 1.0 - frac[j] };
                key[j] = (lo[j] + i64::from(up)).min(m - 1) as u32;
            }
            if w > 0.0 {
                total += w * self.cell_weight(&key).as_f64();
            }
        }
        T::of(total)
    }
}

impl<T: Scalar> DensityRatio<T> for RatioEstimate<T> {
    /// Multilinear interpolation of the cell weights between cell centres
    /// (clamped at the cube boundary) for `D <= 10`.
    fn weight(&self, x: &[T]) -> T {
        if self.dim <= MAX_INTERPOLATION_DIM {
            self.interpolated(x)
        } else {
            self.cell_weight_at(x)
        }
    }
}

/// Histogram density-ratio estimate at a regular dyadic level.
///
/// With `k` the number of cells occupied by either sample and `a` the
/// pseudo-count, a cell with target count `t` and source count `s` gets
/// weight `((t + a) / (n_Q + a k)) / ((s + a) / (n_P + a k))`. With `a = 0`
/// a target-occupied cell without source samples is an error.
pub fn estimate_density_ratio<T: Scalar>(
    source: &Dataset<T>,
    target: &Dataset<T>,
    level: u32,
    pseudo_count: T,
) -> Result<RatioEstimate<T>> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            found: target.dim(),
        });
    }
    if level > MAX_AXIS_SPLITS {
        return Err(Error::LevelOutOfRange {
            level,
            max: MAX_AXIS_SPLITS,
        });
    }
    if pseudo_count < T::zero() {
        return Err(Error::Config("pseudo-count must be non-negative".into()));
    }
    let src = TreeIndex::build(source, level, TreeKind::Regular)?;
    let tgt = TreeIndex::build(target, level, TreeKind::Regular)?;

    let mut counts: HashMap<Box<[u32]>, (u64, u64)> = HashMap::new();
    for (cell, st) in src.level_cells(level)? {
        counts.entry(cell.coords.into_boxed_slice()).or_default().0 = st.count;
    }
    for (cell, st) in tgt.level_cells(level)? {
        counts.entry(cell.coords.into_boxed_slice()).or_default().1 = st.count;
    }
    let k = T::of_count(counts.len());
    let a = pseudo_count;
    let src_norm = T::of_count(source.len()) + a * k;
    let tgt_norm = T::of_count(target.len()) + a * k;

    let mut cell_weights = HashMap::with_capacity(counts.len());
    for (key, (s, t)) in counts {
        let s = T::of(s as f64) + a;
        let t = T::of(t as f64) + a;
        if s <= T::zero() {
            return Err(Error::ZeroSourceMass);
        }
        cell_weights.insert(key, (t / tgt_norm) / (s / src_norm));
    }
    let empty_weight = if a > T::zero() {
        src_norm / tgt_norm
    } else {
        T::one()
    };
    Ok(RatioEstimate {
        level,
        dim: source.dim(),
        pseudo_count,
        cell_weights,
        empty_weight,
    })
}

/// Deepest regular level at which the pooled sample averages at least
/// `min_mean` points per occupied cell.
pub fn auto_ratio_level<T: Scalar>(source: &Dataset<T>, target: &Dataset<T>, min_mean: f64) -> Result<u32> {
    let pooled = source.concat(target)?;
    if pooled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cap = (20 / pooled.dim().max(1)).max(1) as u32;
    let idx = TreeIndex::build(&pooled, cap, TreeKind::Regular)?;
    let n = pooled.len() as f64;
    let mut best = 0;
    for level in 0..=cap {
        if n / idx.occupied_count(level) as f64 >= min_mean {
            best = level;
        } else {
            break;
        }
    }
    Ok(best)
}
