//! Leveled dyadic partition index over a pooled sample.
//!
//! Level `i` of a regular tree partitions `[0,1]^D` into cubes of side
//! `2^-i`. A cyclical tree splits one axis per level in round-robin order
//! (axis `i mod D` is halved when going from level `i` to `i + 1`), so
//! level `i * D` of a cyclical tree coincides with level `i` of the
//! regular tree.
//!
//! Cells are half-open `[a, b)` along each axis except the last cell of an
//! axis, which also holds the coordinate `1.0`. Only occupied cells are
//! stored; queries for absent cells see zero statistics.

use std::collections::HashMap;
use std::io::Write;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest number of halvings along a single axis.
pub const MAX_AXIS_SPLITS: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TreeKind {
    #[default]
    Regular,
    Cyclical,
}

impl TreeKind {
    /// Number of halvings of `axis` at `level`.
    pub fn axis_splits(self, level: u32, dim: usize, axis: usize) -> u32 {
        match self {
            TreeKind::Regular => level,
            TreeKind::Cyclical => {
                let d = dim as u32;
                level / d + u32::from((axis as u32) < level % d)
            }
        }
    }

    /// Number of binary splits separating a level-`level` cell from the root.
    pub fn binary_depth(self, level: u32, dim: usize) -> u32 {
        match self {
            TreeKind::Regular => level * dim as u32,
            TreeKind::Cyclical => level,
        }
    }

    /// Deepest level whose smallest side is `2^-i` where `i` is the deepest
    /// admissible regular level for `n` samples.
    pub fn deepest_level(self, dim: usize, n: usize) -> Result<u32> {
        let i = deepest_admissible(n)?;
        Ok(match self {
            TreeKind::Regular => i,
            TreeKind::Cyclical => i * dim as u32,
        })
    }

    /// Shallowest level at or below `level` whose cells are cubes.
    pub fn complete_level(self, level: u32, dim: usize) -> u32 {
        match self {
            TreeKind::Regular => level,
            TreeKind::Cyclical => level.div_ceil(dim as u32) * dim as u32,
        }
    }

    pub fn max_supported_level(self, dim: usize) -> u32 {
        match self {
            TreeKind::Regular => MAX_AXIS_SPLITS,
            TreeKind::Cyclical => MAX_AXIS_SPLITS * dim as u32,
        }
    }
}

impl std::str::FromStr for TreeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "regular" => Ok(TreeKind::Regular),
            "cyclical" | "cyclic" => Ok(TreeKind::Cyclical),
            other => Err(Error::Config(format!("unknown tree kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellId {
    pub level: u32,
    pub coords: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CellStats {
    pub count: u64,
    pub label_sum: u64,
}

impl CellStats {
    pub fn add(&mut self, other: CellStats) {
        self.count += other.count;
        self.label_sum += other.label_sum;
    }

    /// Mean label, or zero for an empty cell.
    pub fn mean<T: Scalar>(&self) -> T {
        if self.count == 0 {
            T::zero()
        } else {
            T::of(self.label_sum as f64) / T::of(self.count as f64)
        }
    }
}

type LevelMap = HashMap<Box<[u32]>, CellStats>;

/// Per-level occupancy statistics of a pooled sample.
#[derive(Debug, Clone)]
pub struct TreeIndex {
    kind: TreeKind,
    dim: usize,
    max_level: u32,
    /// Levels are stored down to the first level at or below `max_level`
    /// where every axis has the same number of splits.
    levels: Vec<LevelMap>,
    n_source: usize,
    n_target: usize,
}

impl TreeIndex {
    /// Counts every sample once per level `0..=max_level`.
    pub fn build<T: Scalar>(data: &Dataset<T>, max_level: u32, kind: TreeKind) -> Result<Self> {
        data.check_unit_cube()?;
        let dim = data.dim();
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        let cap = kind.max_supported_level(dim);
        if max_level > cap {
            return Err(Error::LevelOutOfRange {
                level: max_level,
                max: cap,
            });
        }
        let stored = kind.complete_level(max_level, dim);
        let mut levels: Vec<LevelMap> = (0..=stored).map(|_| HashMap::new()).collect();
        let mut key = vec![0u32; dim];
        for s in data.iter() {
            // deepest coordinates first; shallower ones are right shifts
            let deep: Vec<u32> = (0..dim)
                .map(|j| axis_coord(s.features[j], kind.axis_splits(stored, dim, j)))
                .collect();
            for (level, map) in levels.iter_mut().enumerate() {
                let level = level as u32;
                for j in 0..dim {
                    let shift = kind.axis_splits(stored, dim, j) - kind.axis_splits(level, dim, j);
                    key[j] = deep[j] >> shift;
                }
                let stats = match map.get_mut(key.as_slice()) {
                    Some(st) => st,
                    None => map.entry(key.clone().into_boxed_slice()).or_default(),
                };
                stats.count += 1;
                stats.label_sum += u64::from(s.label);
            }
        }
        Ok(TreeIndex {
            kind,
            dim,
            max_level,
            levels,
            n_source: data.n_source(),
            n_target: data.n_target(),
        })
    }

    pub fn kind(&self) -> TreeKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    /// `(n_P, n_Q)`.
    pub fn total_counts(&self) -> (usize, usize) {
        (self.n_source, self.n_target)
    }

    pub fn n_total(&self) -> usize {
        self.n_source + self.n_target
    }

    fn check_level(&self, level: u32) -> Result<()> {
        if level > self.max_level {
            Err(Error::LevelOutOfRange {
                level,
                max: self.max_level,
            })
        } else {
            Ok(())
        }
    }

    /// Occupied cells of a level.
    pub fn level_cells(&self, level: u32) -> Result<impl Iterator<Item = (CellId, CellStats)> + '_> {
        self.check_level(level)?;
        Ok(self.levels[level as usize].iter().map(move |(k, v)| {
            (
                CellId {
                    level,
                    coords: k.to_vec(),
                },
                *v,
            )
        }))
    }

    pub fn occupied_count(&self, level: u32) -> usize {
        if level > self.max_level {
            return 0;
        }
        self.levels[level as usize].len()
    }

    /// Number of cells along `axis` at `level`.
    pub fn cells_per_axis(&self, level: u32, axis: usize) -> u64 {
        1u64 << self.kind.axis_splits(level, self.dim, axis)
    }

    /// Cell of `level` containing `x`.
    pub fn cell_of<T: Scalar>(&self, x: &[T], level: u32) -> CellId {
        let coords = (0..self.dim)
            .map(|j| axis_coord(x[j], self.kind.axis_splits(level, self.dim, j)))
            .collect();
        CellId { level, coords }
    }

    fn validate(&self, cell: &CellId) -> Result<()> {
        self.check_level(cell.level)?;
        if cell.coords.len() != self.dim {
            return Err(Error::InvalidCell(format!(
                "{} coordinates for dimension {}",
                cell.coords.len(),
                self.dim
            )));
        }
        for (j, &c) in cell.coords.iter().enumerate() {
            if u64::from(c) >= self.cells_per_axis(cell.level, j) {
                return Err(Error::InvalidCell(format!(
                    "coordinate {c} on axis {j} out of range at level {}",
                    cell.level
                )));
            }
        }
        Ok(())
    }

    /// Statistics of a single cell.
    pub fn cell_stats(&self, cell: &CellId) -> Result<CellStats> {
        self.validate(cell)?;
        Ok(self.levels[cell.level as usize]
            .get(cell.coords.as_slice())
            .copied()
            .unwrap_or_default())
    }

    /// Geometric extent `[lo_j, hi_j)` of a cell along each axis.
    pub fn cell_bounds(&self, cell: &CellId) -> Vec<(f64, f64)> {
        (0..self.dim)
            .map(|j| {
                let side = 1.0 / self.cells_per_axis(cell.level, j) as f64;
                let lo = f64::from(cell.coords[j]) * side;
                (lo, lo + side)
            })
            .collect()
    }

    /// Children of a cell at the next level (2^D for regular trees, 2 for
    /// cyclical trees).
    pub fn children(&self, cell: &CellId) -> Vec<CellId> {
        let level = cell.level + 1;
        let split: Vec<bool> = (0..self.dim)
            .map(|j| self.kind.axis_splits(level, self.dim, j) > self.kind.axis_splits(cell.level, self.dim, j))
            .collect();
        let mut out = vec![CellId {
            level,
            coords: Vec::with_capacity(self.dim),
        }];
        for j in 0..self.dim {
            let base = cell.coords[j];
            if split[j] {
                out = out
                    .into_iter()
                    .flat_map(|c| {
                        (0..2).map(move |b| {
                            let mut c = c.clone();
                            c.coords.push(2 * base + b);
                            c
                        })
                    })
                    .collect();
            } else {
                for c in &mut out {
                    c.coords.push(base);
                }
            }
        }
        out
    }

    /// Pooled statistics over the envelope of `cell`: the cell dilated in
    /// the sup norm by its smallest side, clipped to the cube.
    ///
    /// For regular trees this is the block of `3^D` same-level neighbours.
    /// A cyclical cell is a union of cubes of its smallest side at the next
    /// level where all axes are split equally, and the envelope adds one
    /// such cube on every side.
    pub fn envelope_stats(&self, cell: &CellId) -> Result<CellStats> {
        self.validate(cell)?;
        Ok(self.envelope_unchecked(cell.level, &cell.coords))
    }

    fn envelope_unchecked(&self, level: u32, coords: &[u32]) -> CellStats {
        let fine = self.kind.complete_level(level, self.dim);
        let map = &self.levels[fine as usize];
        let mut acc = CellStats::default();
        if map.is_empty() {
            return acc;
        }
        // inclusive coordinate ranges at the fine level
        let mut lo = Vec::with_capacity(self.dim);
        let mut hi = Vec::with_capacity(self.dim);
        let mut block = 1u64;
        for (j, &c) in coords.iter().enumerate() {
            let extra = self.kind.axis_splits(fine, self.dim, j) - self.kind.axis_splits(level, self.dim, j);
            let last = self.cells_per_axis(fine, j) - 1;
            let a = (u64::from(c) << extra).saturating_sub(1);
            let b = ((u64::from(c) + 1) << extra).min(last);
            lo.push(a);
            hi.push(b);
            block = block.saturating_mul(b - a + 1);
        }
        if block > map.len() as u64 {
            for (key, st) in map {
                if key
                    .iter()
                    .enumerate()
                    .all(|(j, &k)| lo[j] <= u64::from(k) && u64::from(k) <= hi[j])
                {
                    acc.add(*st);
                }
            }
            return acc;
        }
        let mut key: Vec<u32> = lo.iter().map(|&v| v as u32).collect();
        'outer: loop {
            if let Some(st) = map.get(key.as_slice()) {
                acc.add(*st);
            }
            for j in 0..self.dim {
                if u64::from(key[j]) < hi[j] {
                    key[j] += 1;
                    continue 'outer;
                }
                key[j] = lo[j] as u32;
            }
            break;
        }
        acc
    }

    /// Envelope statistics of the level-`level` cell containing `x`.
    pub fn envelope_at<T: Scalar>(&self, x: &[T], level: u32) -> Result<CellStats> {
        self.check_level(level)?;
        let cell = self.cell_of(x, level);
        Ok(self.envelope_unchecked(level, &cell.coords))
    }

    /// Envelope mean label at `x`; zero when the envelope holds no sample.
    pub fn eta_hat<T: Scalar>(&self, x: &[T], level: u32) -> Result<T> {
        Ok(self.envelope_at(x, level)?.mean())
    }

    /// Plug-in label `1{eta_hat >= 1/2}`.
    pub fn classify_at_level<T: Scalar>(&self, x: &[T], level: u32) -> Result<u8> {
        let eta: T = self.eta_hat(x, level)?;
        Ok(u8::from(eta >= T::half()))
    }

    /// Writes the occupied cells of one level as CSV with columns
    /// `level,coord_0..coord_{D-1},count,labelSum`, sorted by coordinates.
    pub fn write_level_csv<W: Write>(&self, level: u32, w: W) -> Result<()> {
        self.check_level(level)?;
        let mut cells: Vec<_> = self.levels[level as usize].iter().collect();
        cells.sort_by(|a, b| a.0.cmp(b.0));
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["level".to_string()];
        header.extend((0..self.dim).map(|j| format!("coord_{j}")));
        header.push("count".into());
        header.push("labelSum".into());
        wtr.write_record(&header)?;
        for (key, st) in cells {
            let mut rec = vec![level.to_string()];
            rec.extend(key.iter().map(u32::to_string));
            rec.push(st.count.to_string());
            rec.push(st.label_sum.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Index of the half-open cell holding `v` among `2^splits` cells of
/// `[0,1]`; `1.0` goes to the last cell.
pub(crate) fn axis_coord<T: Scalar>(v: T, splits: u32) -> u32 {
    let cells = 1u64 << splits;
    let scaled = (v * T::of(cells as f64)).floor();
    let c = scaled.to_u64().unwrap_or(0);
    c.min(cells - 1) as u32
}

/// Deepest admissible regular level: the smallest `i` with `4^i >= n`,
/// i.e. `ceil(log2(n) / 2)`.
fn deepest_admissible(n: usize) -> Result<u32> {
    if n == 0 {
        return Err(Error::ZeroSamples);
    }
    let mut i = 0u32;
    while 4u128.pow(i) < n as u128 {
        i += 1;
    }
    Ok(i)
}

/// Admissible regular levels `0..=ceil(log2(n_P + n_Q) / 2)`; level `i`
/// has cell side `r = 2^-i`, and the deepest level has `r <= (n_P + n_Q)^-1/2`.
pub fn admissible_levels(n_source: usize, n_target: usize) -> Result<Vec<u32>> {
    let deepest = deepest_admissible(n_source + n_target)?;
    Ok((0..=deepest).collect())
}

/// Admissible levels for a tree kind: regular levels as above, or every
/// cyclical level down to the matching regular depth.
pub fn admissible_depths(kind: TreeKind, dim: usize, n_source: usize, n_target: usize) -> Result<Vec<u32>> {
    let deepest = kind.deepest_level(dim, n_source + n_target)?;
    Ok((0..=deepest).collect())
}
