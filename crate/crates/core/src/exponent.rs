//! Estimators of transfer exponents from mass-ratio sums and ball integrals.

use std::io::Write;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::dyadic::{CellId, TreeIndex, TreeKind};
use crate::error::{Error, Result};
use crate::measure::Measure;
use crate::scalar::Scalar;
use crate::synth::stream_rng;

/// Largest number of cells enumerated by the analytic cell sums.
pub const MAX_ENUMERATED_CELLS: u64 = 1 << 24;

/// Least-squares slope of `ln value` against `ln(1/r)` and the RMS residual.
pub fn exponent_slope(radii: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    if radii.len() != values.len() {
        return Err(Error::LengthMismatch {
            expected: radii.len(),
            found: values.len(),
        });
    }
    if radii.len() < 3 {
        return Err(Error::BadCurve(format!("{} points", radii.len())));
    }
    if let Some(v) = values.iter().chain(radii).find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::BadCurve(format!("non-positive or non-finite entry {v}")));
    }
    let xs: Vec<f64> = radii.iter().map(|r| -r.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::BadCurve("all radii equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok((slope, (rss / n).sqrt()))
}

/// Values of an exponent estimator on a decreasing list of radii, with the
/// fitted power-law slope.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentCurve {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub residual: f64,
}

impl ExponentCurve {
    pub fn fit(radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if radii.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::BadCurve("radii must be strictly decreasing".into()));
        }
        let (slope, residual) = exponent_slope(&radii, &values)?;
        Ok(ExponentCurve {
            radii,
            values,
            slope,
            residual,
        })
    }

    /// Curve over dyadic levels, `r = 2^-level`.
    pub fn from_levels(levels: &[u32], values: Vec<f64>) -> Result<Self> {
        Self::fit(levels.iter().map(|&l| 0.5f64.powi(l as i32)).collect(), values)
    }

    /// Columns `r,value,logr,logvalue`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["r", "value", "logr", "logvalue"])?;
        for (r, v) in self.radii.iter().zip(&self.values) {
            out.write_record([r.to_string(), v.to_string(), r.ln().to_string(), v.ln().to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<curve>", e))?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!("slope={:.6} residual={:.6} points={}", self.slope, self.residual, self.radii.len())
    }
}

/// Dyadic radii `2^-from, ..., 2^-to`.
pub fn dyadic_radii(from: u32, to: u32) -> Vec<f64> {
    (from..=to).map(|l| 0.5f64.powi(l as i32)).collect()
}

fn for_each_cell(dim: usize, level: u32, mut f: impl FnMut(&[u32]) -> Result<()>) -> Result<()> {
    let per_axis = 1u64 << level;
    let total = per_axis
        .checked_pow(dim as u32)
        .filter(|&t| t <= MAX_ENUMERATED_CELLS)
        .ok_or_else(|| Error::Unsupported(format!("level {level} in dimension {dim} has too many cells")))?;
    let mut coords = vec![0u32; dim];
    for _ in 0..total {
        f(&coords)?;
        for c in coords.iter_mut() {
            *c += 1;
            if u64::from(*c) < per_axis {
                break;
            }
            *c = 0;
        }
    }
    Ok(())
}

fn cell_box(coords: &[u32], level: u32, dilate: bool) -> (Vec<f64>, Vec<f64>) {
    let h = 0.5f64.powi(level as i32);
    let grow = if dilate { 1.0 } else { 0.0 };
    let lo = coords.iter().map(|&c| ((c as f64 - grow) * h).max(0.0)).collect();
    let hi = coords.iter().map(|&c| ((c as f64 + 1.0 + grow) * h).min(1.0)).collect();
    (lo, hi)
}

/// `sum over C in D^level of Q(C)/P(C)` over the full regular dyadic
/// partition; cells without target mass contribute 0.
pub fn lambda_dyadic_ambient(source: &dyn Measure, target: &dyn Measure, level: u32) -> Result<f64> {
    check_dims(source, target)?;
    let mut total = 0.0;
    for_each_cell(target.dim(), level, |coords| {
        let (lo, hi) = cell_box(coords, level, false);
        let q = target.box_mass(&lo, &hi);
        if q > 0.0 {
            let p = source.box_mass(&lo, &hi);
            if !(p > 0.0) {
                return Err(Error::ZeroSourceMass);
            }
            total += q / p;
        }
        Ok(())
    })?;
    Ok(total)
}

/// `sum over target-charged cells C of Q(C~)/P(C~)`, `C~` being the block
/// of same-level neighbours of `C`.
pub fn lambda_occupied_cells_analytic(source: &dyn Measure, target: &dyn Measure, level: u32) -> Result<f64> {
    check_dims(source, target)?;
    let mut total = 0.0;
    let mut occupied = 0usize;
    for_each_cell(target.dim(), level, |coords| {
        let (lo, hi) = cell_box(coords, level, false);
        if target.box_mass(&lo, &hi) > 0.0 {
            occupied += 1;
            let (lo, hi) = cell_box(coords, level, true);
            let p = source.box_mass(&lo, &hi);
            if !(p > 0.0) {
                return Err(Error::ZeroSourceMass);
            }
            total += target.box_mass(&lo, &hi) / p;
        }
        Ok(())
    })?;
    if occupied == 0 {
        return Err(Error::NoOccupiedCells);
    }
    Ok(total)
}

/// Empirical version of [`lambda_occupied_cells_analytic`] on a regular
/// dyadic level. Source-empty envelopes use `pseudo_count` in place of the
/// zero count and are an error when it is `None`.
pub fn lambda_occupied_cells<T: Scalar>(
    source: &Dataset<T>,
    target: &Dataset<T>,
    level: u32,
    pseudo_count: Option<f64>,
) -> Result<f64> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let src = TreeIndex::build(source, level, TreeKind::Regular)?;
    let tgt = TreeIndex::build(target, level, TreeKind::Regular)?;
    let (np, nq) = (source.len() as f64, target.len() as f64);
    let mut total = 0.0;
    let mut cells: Vec<CellId> = tgt.level_cells(level)?.map(|(c, _)| c).collect();
    if cells.is_empty() {
        return Err(Error::NoOccupiedCells);
    }
    cells.sort_by(|a, b| a.coords.cmp(&b.coords));
    for cell in cells {
        let t = tgt.envelope_stats(&cell)?.count as f64;
        let s = match src.envelope_stats(&cell)?.count {
            0 => pseudo_count.filter(|&a| a > 0.0).ok_or(Error::ZeroSourceMass)?,
            c => c as f64,
        };
        total += (t / nq) / (s / np);
    }
    Ok(total)
}

fn check_dims(source: &dyn Measure, target: &dyn Measure) -> Result<()> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            found: source.dim(),
        });
    }
    Ok(())
}

fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(r) = radii.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::Config(format!("radius {r} outside (0, 1]")));
    }
    Ok(())
}

fn check_monotone(radii: &[f64], values: &[f64]) -> Result<()> {
    for i in 0..radii.len() {
        for j in 0..radii.len() {
            if radii[i] < radii[j] && values[i] < values[j] * (1.0 - 1e-12) {
                return Err(Error::BadCurve(format!(
                    "integral increases with the radius between r={} and r={}",
                    radii[i], radii[j]
                )));
            }
        }
    }
    Ok(())
}

/// `int P(B(x, r))^-1 Q(dx)` with closed-form `l_inf` ball masses, the
/// integral over `Q` being a jittered stratified Monte Carlo sum with
/// `n_mc` points shared by all radii.
pub fn phi_integrated_analytic(
    source: &dyn Measure,
    target: &dyn Measure,
    radii: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_dims(source, target)?;
    check_radii(radii)?;
    let mut rng = stream_rng(seed, 7);
    let points = target.stratified_points(n_mc, &mut rng);
    let per_point: Vec<Vec<f64>> = points
        .par_iter()
        .map(|(x, w)| {
            radii
                .iter()
                .map(|&r| {
                    let lo: Vec<f64> = x.iter().map(|v| (v - r).max(0.0)).collect();
                    let hi: Vec<f64> = x.iter().map(|v| (v + r).min(1.0)).collect();
                    let p = source.box_mass(&lo, &hi);
                    if *w == 0.0 {
                        Ok(0.0)
                    } else if p > 0.0 {
                        Ok(w / p)
                    } else {
                        Err(Error::ZeroSourceMass)
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = (0..radii.len())
        .map(|k| per_point.iter().map(|v| v[k]).sum())
        .collect();
    check_monotone(radii, &values)?;
    Ok(values)
}

/// Empirical `int P(B(x, r))^-1 Q(dx)`: mean over target points of the
/// inverse source frequency of the ball, floored at `0.5 / n_P`.
pub fn phi_integrated<T: Scalar>(source: &Dataset<T>, target: &Dataset<T>, radii: &[f64]) -> Result<Vec<f64>> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_radii(radii)?;
    let src: Vec<Vec<f64>> = source.iter().map(|s| s.features.iter().map(|v| v.as_f64()).collect()).collect();
    let np = src.len() as f64;
    let per_point: Vec<Vec<f64>> = target
        .samples()
        .par_iter()
        .map(|t| {
            let x: Vec<f64> = t.features.iter().map(|v| v.as_f64()).collect();
            radii
                .iter()
                .map(|&r| {
                    let hits = src
                        .iter()
                        .filter(|s| s.iter().zip(&x).all(|(a, b)| (a - b).abs() <= r))
                        .count() as f64;
                    1.0 / (hits / np).max(0.5 / np)
                })
                .collect()
        })
        .collect();
    let nq = per_point.len() as f64;
    let values: Vec<f64> = (0..radii.len())
        .map(|k| per_point.iter().map(|v| v[k]).sum::<f64>() / nq)
        .collect();
    check_monotone(radii, &values)?;
    Ok(values)
}
