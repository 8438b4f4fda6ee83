//! Probability measures on the unit cube with closed-form box masses.
//!
//! Boxes are half-open `[lo, hi)` except that an upper face at 1 is closed,
//! matching how points are assigned to dyadic cells. Only atoms are
//! sensitive to this convention.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Measure with computable box masses and a weighted stratified sampler.
pub trait Measure: Sync {
    fn dim(&self) -> usize;

    /// Mass of the box `[lo, hi)` intersected with the unit cube.
    fn box_mass(&self, lo: &[f64], hi: &[f64]) -> f64;

    /// Weighted points `(x, w)` with `sum w` equal to the total mass, drawn by
    /// jittered stratification so that `sum w f(x)` estimates `int f`.
    fn stratified_points(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<f64>, f64)>;

    fn total_mass(&self) -> f64 {
        let d = self.dim();
        self.box_mass(&vec![0.0; d], &vec![1.0; d])
    }
}

fn overlap(lo: f64, hi: f64, a: f64, b: f64) -> (f64, f64) {
    (lo.max(a), hi.min(b))
}

fn contains_atom(lo: &[f64], hi: &[f64], a: &[f64]) -> bool {
    a.iter()
        .zip(lo.iter().zip(hi))
        .all(|(&v, (&l, &h))| l <= v && (v < h || (h >= 1.0 && v <= 1.0)))
}

/// `int_0^T (1 + t^2)^(nu/2) dt`.
fn h_integral(t: f64, nu: f64) -> f64 {
    let two_p = nu;
    if two_p.fract() == 0.0 && (0.0..=64.0).contains(&two_p) {
        let steps = two_p as u32;
        let s = 1.0 + t * t;
        // I_p = (T s^p + 2p I_{p-1}) / (2p + 1)
        let (mut p, mut acc) = if steps.is_multiple_of(2) { (0.0, t) } else { (-0.5, t.asinh()) };
        while p < nu / 2.0 - 1e-12 {
            p += 1.0;
            acc = (t * s.powf(p) + 2.0 * p * acc) / (2.0 * p + 1.0);
        }
        acc
    } else {
        composite_gauss(|u| (1.0 + u * u).powf(nu / 2.0), 0.0, t, 64)
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn composite_gauss(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let rule = gauss_legendre(16);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * h;
        for &(x, w) in &rule {
            total += w * f(mid + 0.5 * h * x);
        }
    }
    total * 0.5 * h
}

/// `int_0^a int_0^b (y1^2 + y2^2)^(nu/2) dy`.
fn corner_integral_2d(a: f64, b: f64, nu: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    (a.powf(nu + 2.0) * h_integral(b / a, nu) + b.powf(nu + 2.0) * h_integral(a / b, nu)) / (nu + 2.0)
}

/// `int over [lo, hi] of ||y||^nu` for a box in the non-negative orthant of
/// dimension 1 or 2.
pub fn power_box_integral(lo: &[f64], hi: &[f64], nu: f64) -> Result<f64> {
    if lo.iter().chain(hi).any(|&v| v < 0.0) {
        return Err(Error::Config("box must lie in the non-negative orthant".into()));
    }
    if lo.iter().zip(hi).any(|(l, h)| h <= l) {
        return Ok(0.0);
    }
    match lo.len() {
        0 => Ok(1.0),
        1 => Ok((hi[0].powf(nu + 1.0) - lo[0].powf(nu + 1.0)) / (nu + 1.0)),
        2 => {
            let f = |a, b| corner_integral_2d(a, b, nu);
            let v = f(hi[0], hi[1]) - f(lo[0], hi[1]) - f(hi[0], lo[1]) + f(lo[0], lo[1]);
            Ok(v.max(0.0))
        }
        m => Err(Error::Unsupported(format!(
            "closed-form masses need at most 2 singular coordinates, got {m}"
        ))),
    }
}

/// One jittered point per cell of a `g^d` grid over the box, `g^d <= n`.
fn jittered_box(lo: &[f64], hi: &[f64], n: usize, rng: &mut ChaCha8Rng, mut emit: impl FnMut(Vec<f64>, f64)) {
    let d = lo.len();
    let mut g = (n.max(1) as f64).powf(1.0 / d as f64).floor().max(1.0) as usize;
    while g.checked_pow(d as u32).is_none_or(|c| c > n.max(1)) && g > 1 {
        g -= 1;
    }
    let cells = g.pow(d as u32);
    let vol = 1.0 / cells as f64;
    let mut idx = vec![0usize; d];
    for _ in 0..cells {
        let x: Vec<f64> = (0..d)
            .map(|j| {
                let u: f64 = rng.random();
                lo[j] + (hi[j] - lo[j]) * (idx[j] as f64 + u) / g as f64
            })
            .collect();
        emit(x, vol);
        for j in 0..d {
            idx[j] += 1;
            if idx[j] < g {
                break;
            }
            idx[j] = 0;
        }
    }
}

/// Uniform measure on `[0,1]^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Uniform {
    pub dim: usize,
}

impl Measure for Uniform {
    fn dim(&self) -> usize {
        self.dim
    }

    fn box_mass(&self, lo: &[f64], hi: &[f64]) -> f64 {
        lo.iter()
            .zip(hi)
            .map(|(&l, &h)| {
                let (a, b) = overlap(l, h, 0.0, 1.0);
                (b - a).max(0.0)
            })
            .product()
    }

    fn stratified_points(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<f64>, f64)> {
        let mut out = Vec::with_capacity(n);
        jittered_box(&vec![0.0; self.dim], &vec![1.0; self.dim], n, rng, |x, w| out.push((x, w)));
        out
    }
}

/// Density proportional to `d(x, A_k)^nu` where `A_k` is the set where the
/// last `dim - k` coordinates vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct DistancePower {
    dim: usize,
    singular_dim: usize,
    nu: f64,
    norm: f64,
}

impl DistancePower {
    pub fn new(dim: usize, singular_dim: usize, nu: f64) -> Result<Self> {
        if dim == 0 || singular_dim >= dim || nu.is_nan() || nu < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "need 0 <= k < d and nu >= 0, got d={dim}, k={singular_dim}, nu={nu}"
            )));
        }
        let m = dim - singular_dim;
        let norm = power_box_integral(&vec![0.0; m], &vec![1.0; m], nu)?;
        Ok(DistancePower {
            dim,
            singular_dim,
            nu,
            norm,
        })
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        let r2: f64 = x[self.singular_dim..].iter().map(|v| v * v).sum();
        r2.powf(self.nu / 2.0) / self.norm
    }
}

impl Measure for DistancePower {
    fn dim(&self) -> usize {
        self.dim
    }

    fn box_mass(&self, lo: &[f64], hi: &[f64]) -> f64 {
        let mut lo_c = Vec::with_capacity(self.dim);
        let mut hi_c = Vec::with_capacity(self.dim);
        for j in 0..self.dim {
            let (a, b) = overlap(lo[j], hi[j], 0.0, 1.0);
            if b <= a {
                return 0.0;
            }
            lo_c.push(a);
            hi_c.push(b);
        }
        let flat: f64 = (0..self.singular_dim).map(|j| hi_c[j] - lo_c[j]).product();
        let k = self.singular_dim;
        // dimension was validated at construction
        let radial = power_box_integral(&lo_c[k..], &hi_c[k..], self.nu).unwrap_or(f64::NAN);
        flat * radial / self.norm
    }

    fn stratified_points(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<f64>, f64)> {
        let mut out = Vec::with_capacity(n);
        jittered_box(&vec![0.0; self.dim], &vec![1.0; self.dim], n, rng, |x, w| {
            let p = self.density(&x);
            out.push((x, w * p));
        });
        out
    }
}

/// Unit point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub at: Vec<f64>,
}

impl Measure for PointMass {
    fn dim(&self) -> usize {
        self.at.len()
    }

    fn box_mass(&self, lo: &[f64], hi: &[f64]) -> f64 {
        if contains_atom(lo, hi, &self.at) {
            1.0
        } else {
            0.0
        }
    }

    fn stratified_points(&self, _n: usize, _rng: &mut ChaCha8Rng) -> Vec<(Vec<f64>, f64)> {
        vec![(self.at.clone(), 1.0)]
    }
}

/// Number of box pairs kept in [`NonDoublingPair`]; the neglected target
/// mass is `4^-12 < 1e-7`.
pub const NON_DOUBLING_DEPTH: u32 = 12;

/// Pair of planar measures whose dyadic and grid mass-ratio exponents
/// differ.
///
/// For `i >= 1`, `B_i` is the square of side `2^-i` with top-right corner
/// `x_i = (1 - 2^-i, 2^-i)` and `B'_i` the square of side `4^-i` with
/// bottom-left corner `x_i`. The target is uniform on each `B_i u B'_i` with
/// total mass `3 * 4^-i`. The source agrees with it on `B_i`, has density
/// `q_i ||x - x_i||^nu` on `B'_i`, and puts the remaining mass on an atom at
/// `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonDoublingPair {
    nu: f64,
    depth: u32,
}

/// Target side of a [`NonDoublingPair`].
#[derive(Debug, Clone, PartialEq)]
pub struct NonDoublingTarget(pub NonDoublingPair);

/// Source side of a [`NonDoublingPair`].
#[derive(Debug, Clone, PartialEq)]
pub struct NonDoublingSource(pub NonDoublingPair);

impl NonDoublingPair {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::InvalidSpec(format!("singularity strength must be positive, got {nu}")));
        }
        Ok(NonDoublingPair {
            nu,
            depth: NON_DOUBLING_DEPTH,
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn corner(i: u32) -> [f64; 2] {
        let s = 0.5f64.powi(i as i32);
        [1.0 - s, s]
    }

    /// `(lo, hi)` of `B_i`.
    pub fn big_box(i: u32) -> ([f64; 2], [f64; 2]) {
        let c = Self::corner(i);
        let s = 0.5f64.powi(i as i32);
        ([c[0] - s, c[1] - s], c)
    }

    /// `(lo, hi)` of `B'_i`.
    pub fn small_box(i: u32) -> ([f64; 2], [f64; 2]) {
        let c = Self::corner(i);
        let s = 0.25f64.powi(i as i32);
        (c, [c[0] + s, c[1] + s])
    }

    /// Target density on `B_i u B'_i`.
    pub fn q_density(i: u32) -> f64 {
        let a = 0.25f64.powi(i as i32);
        3.0 * a / (a + a * a)
    }

    pub fn target(&self) -> NonDoublingTarget {
        NonDoublingTarget(self.clone())
    }

    pub fn source(&self) -> NonDoublingSource {
        NonDoublingSource(self.clone())
    }

    pub fn atom() -> [f64; 2] {
        [0.0, 1.0]
    }

    /// Source mass of `B'_i`.
    pub fn source_small_mass(&self, i: u32) -> f64 {
        let (lo, hi) = Self::small_box(i);
        self.source_singular_mass(i, &lo, &hi)
    }

    fn source_singular_mass(&self, i: u32, lo: &[f64], hi: &[f64]) -> f64 {
        let (blo, bhi) = Self::small_box(i);
        let c = Self::corner(i);
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        for j in 0..2 {
            let (l, h) = overlap(lo[j], hi[j], blo[j], bhi[j]);
            if h <= l {
                return 0.0;
            }
            a[j] = l - c[j];
            b[j] = h - c[j];
        }
        Self::q_density(i) * power_box_integral(&a, &b, self.nu).unwrap_or(0.0)
    }

    /// Mass of the source atom.
    pub fn atom_mass(&self) -> f64 {
        let cont: f64 = (1..=self.depth)
            .map(|i| {
                let s = 0.25f64.powi(i as i32);
                Self::q_density(i) * s + self.source_small_mass(i)
            })
            .sum();
        1.0 - cont
    }
}

fn area(lo: &[f64], hi: &[f64], blo: &[f64; 2], bhi: &[f64; 2]) -> f64 {
    (0..2)
        .map(|j| {
            let (a, b) = overlap(lo[j], hi[j], blo[j], bhi[j]);
            (b - a).max(0.0)
        })
        .product()
}

impl Measure for NonDoublingTarget {
    fn dim(&self) -> usize {
        2
    }

    fn box_mass(&self, lo: &[f64], hi: &[f64]) -> f64 {
        (1..=self.0.depth)
            .map(|i| {
                let (bl, bh) = NonDoublingPair::big_box(i);
                let (sl, sh) = NonDoublingPair::small_box(i);
                NonDoublingPair::q_density(i) * (area(lo, hi, &bl, &bh) + area(lo, hi, &sl, &sh))
            })
            .sum()
    }

    fn stratified_points(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<f64>, f64)> {
        let mut out = Vec::with_capacity(n + 64);
        for i in 1..=self.0.depth {
            let q = NonDoublingPair::q_density(i);
            for (lo, hi) in [NonDoublingPair::big_box(i), NonDoublingPair::small_box(i)] {
                let mass = q * (hi[0] - lo[0]) * (hi[1] - lo[1]);
                let m = ((n as f64 * mass).round() as usize).max(16);
                jittered_box(&lo, &hi, m, rng, |x, w| out.push((x, w * mass)));
            }
        }
        out
    }
}

impl Measure for NonDoublingSource {
    fn dim(&self) -> usize {
        2
    }

    fn box_mass(&self, lo: &[f64], hi: &[f64]) -> f64 {
        let p = &self.0;
        let mut total: f64 = (1..=p.depth)
            .map(|i| {
                let (bl, bh) = NonDoublingPair::big_box(i);
                NonDoublingPair::q_density(i) * area(lo, hi, &bl, &bh) + p.source_singular_mass(i, lo, hi)
            })
            .sum();
        if contains_atom(lo, hi, &NonDoublingPair::atom()) {
            total += p.atom_mass();
        }
        total
    }

    fn stratified_points(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<f64>, f64)> {
        let p = &self.0;
        let mut out = Vec::with_capacity(n + 64);
        out.push((NonDoublingPair::atom().to_vec(), p.atom_mass()));
        for i in 1..=p.depth {
            let q = NonDoublingPair::q_density(i);
            let (lo, hi) = NonDoublingPair::big_box(i);
            let mass = q * (hi[0] - lo[0]) * (hi[1] - lo[1]);
            let m = ((n as f64 * mass).round() as usize).max(16);
            jittered_box(&lo, &hi, m, rng, |x, w| out.push((x, w * mass)));

            let (lo, hi) = NonDoublingPair::small_box(i);
            let c = NonDoublingPair::corner(i);
            let vol = (hi[0] - lo[0]) * (hi[1] - lo[1]);
            let m = ((n as f64 * p.source_small_mass(i)).round() as usize).max(16);
            jittered_box(&lo, &hi, m, rng, |x, w| {
                let r = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt();
                out.push((x, w * vol * q * r.powf(p.nu)));
            });
        }
        out
    }
}
