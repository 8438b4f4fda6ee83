//! Synthetic covariate-shift distributions with known regression function.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, LabeledSample, Origin};
use crate::error::{Error, Result};
use crate::measure::{NonDoublingPair, NON_DOUBLING_DEPTH};
use crate::scalar::Scalar;

/// Number of independent RNG streams used by Monte Carlo estimates.
pub const MC_SHARDS: u64 = 64;

/// SplitMix64 mixing of a seed with a list of indices.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in parts.iter().chain(std::iter::once(&0x9e37_79b9_7f4a_7c15)) {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Seeded generator on a numbered stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaKind {
    /// `(1 + sin(pi ||x||_1)) / 2`
    Sine,
    /// `eta(x) = x`, one-dimensional only
    Linear,
    Constant(f64),
}

impl EtaKind {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            EtaKind::Sine => {
                let l1: f64 = x.iter().map(|v| v.abs()).sum();
                0.5 * (1.0 + (std::f64::consts::PI * l1).sin())
            }
            EtaKind::Linear => x[0],
            EtaKind::Constant(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Source density proportional to the Euclidean distance to
    /// `A_k = {x : x_{k+1} = ... = x_d = 0}` raised to `strength`; uniform
    /// target.
    DistancePower,
    /// One-dimensional source density proportional to `x^strength`,
    /// uniform target and `eta(x) = x`.
    PowerLine,
    /// The planar pair of [`NonDoublingPair`].
    NonDoubling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dim: usize,
    /// `k`: dimension of the singular set.
    pub singular_dim: usize,
    /// `nu >= 0`.
    pub strength: f64,
    pub eta: EtaKind,
    pub family: Family,
}

impl SyntheticSpec {
    /// Uniform target on `[0,1]^dim`, source density `d(x, A_k)^nu`, sine
    /// regression function.
    pub fn distance_power(dim: usize, singular_dim: usize, strength: f64) -> Result<Self> {
        let spec = SyntheticSpec {
            dim,
            singular_dim,
            strength,
            eta: EtaKind::Sine,
            family: Family::DistancePower,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Singularity of strength `nu - k` on a set of dimension `k`, which
    /// keeps the aggregate transfer exponent at `max(nu, dim)` for every `k`.
    pub fn compensated(dim: usize, singular_dim: usize, nu: f64) -> Result<Self> {
        Self::distance_power(dim, singular_dim, nu - singular_dim as f64)
    }

    pub fn power_line(gamma: f64) -> Result<Self> {
        let spec = SyntheticSpec {
            dim: 1,
            singular_dim: 0,
            strength: gamma,
            eta: EtaKind::Linear,
            family: Family::PowerLine,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn non_doubling(nu: f64) -> Result<Self> {
        let spec = SyntheticSpec {
            dim: 2,
            singular_dim: 0,
            strength: nu,
            eta: EtaKind::Sine,
            family: Family::NonDoubling,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_eta(mut self, eta: EtaKind) -> Result<Self> {
        self.eta = eta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        if self.singular_dim >= self.dim {
            return bad(format!("singular dimension {} must be below {}", self.singular_dim, self.dim));
        }
        if !(self.strength >= 0.0) || !self.strength.is_finite() {
            return bad(format!("strength must be a finite non-negative number, got {}", self.strength));
        }
        match self.family {
            Family::PowerLine if self.dim != 1 => return bad("the power-line family is one-dimensional".into()),
            Family::NonDoubling if self.dim != 2 => return bad("the non-doubling pair is planar".into()),
            Family::NonDoubling if self.strength <= 0.0 => {
                return bad("the non-doubling pair needs a positive strength".into())
            }
            _ => {}
        }
        match self.eta {
            EtaKind::Linear if self.dim != 1 => bad("linear regression function needs dimension 1".into()),
            EtaKind::Constant(c) if !(0.0..=1.0).contains(&c) => bad(format!("constant eta {c} outside [0,1]")),
            _ => Ok(()),
        }
    }

    /// `sup_x d(x, A_k)^nu` on the cube.
    pub fn rejection_bound(&self) -> f64 {
        ((self.dim - self.singular_dim) as f64).sqrt().powf(self.strength)
    }

    fn distance_weight(&self, x: &[f64]) -> f64 {
        let r2: f64 = x[self.singular_dim..].iter().map(|v| v * v).sum();
        r2.powf(self.strength / 2.0)
    }
}

/// Regression function of the spec at `x`.
pub fn eta_true(spec: &SyntheticSpec, x: &[f64]) -> f64 {
    spec.eta.eval(x)
}

fn uniform_point(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

fn uniform_in(lo: &[f64; 2], hi: &[f64; 2], rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..2).map(|j| lo[j] + (hi[j] - lo[j]) * rng.random::<f64>()).collect()
}

/// Draws one feature vector; returns the number of proposals used.
fn draw_point(spec: &SyntheticSpec, role: Role, pair: Option<&NonDoublingPair>, rng: &mut ChaCha8Rng) -> (Vec<f64>, u64) {
    match (spec.family, role) {
        (Family::NonDoubling, _) => (draw_non_doubling(pair.expect("pair built"), role, rng), 1),
        (_, Role::Target) => (uniform_point(spec.dim, rng), 1),
        (_, Role::Source) => {
            let bound = spec.rejection_bound();
            let mut tries = 0;
            loop {
                tries += 1;
                let x = uniform_point(spec.dim, rng);
                if spec.strength == 0.0 || rng.random::<f64>() * bound < spec.distance_weight(&x) {
                    return (x, tries);
                }
            }
        }
    }
}

fn draw_non_doubling(pair: &NonDoublingPair, role: Role, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // pieces: (mass, box, singular?)
    let mut u: f64 = rng.random();
    if role == Role::Source {
        let atom = pair.atom_mass();
        if u < atom {
            return NonDoublingPair::atom().to_vec();
        }
        u -= atom;
    } else {
        u *= 1.0 - 0.25f64.powi(NON_DOUBLING_DEPTH as i32);
    }
    for i in 1..=NON_DOUBLING_DEPTH {
        let q = NonDoublingPair::q_density(i);
        let (blo, bhi) = NonDoublingPair::big_box(i);
        let big = q * 0.25f64.powi(i as i32);
        if u < big {
            return uniform_in(&blo, &bhi, rng);
        }
        u -= big;
        let (slo, shi) = NonDoublingPair::small_box(i);
        let small = match role {
            Role::Target => q * 0.0625f64.powi(i as i32),
            Role::Source => pair.source_small_mass(i),
        };
        if u < small || i == NON_DOUBLING_DEPTH {
            if role == Role::Target {
                return uniform_in(&slo, &shi, rng);
            }
            let c = NonDoublingPair::corner(i);
            let side = shi[0] - slo[0];
            let bound = (2f64.sqrt() * side).powf(pair.nu());
            loop {
                let x = uniform_in(&slo, &shi, rng);
                let r = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt();
                if rng.random::<f64>() * bound < r.powf(pair.nu()) {
                    return x;
                }
            }
        }
        u -= small;
    }
    unreachable!("last piece always returns")
}

fn pair_of(spec: &SyntheticSpec) -> Result<Option<NonDoublingPair>> {
    Ok(match spec.family {
        Family::NonDoubling => Some(NonDoublingPair::new(spec.strength)?),
        _ => None,
    })
}

/// Draws `n` labelled samples from the source or target distribution.
/// Target samples are tagged `Q`, source samples `P`.
pub fn sample_synthetic<T: Scalar>(spec: &SyntheticSpec, role: Role, n: usize, seed: u64) -> Result<Dataset<T>> {
    Ok(sample_with_acceptance(spec, role, n, seed)?.0)
}

/// Like [`sample_synthetic`], also returning the fraction of accepted
/// proposals.
pub fn sample_with_acceptance<T: Scalar>(
    spec: &SyntheticSpec,
    role: Role,
    n: usize,
    seed: u64,
) -> Result<(Dataset<T>, f64)> {
    spec.validate()?;
    let pair = pair_of(spec)?;
    let stream = match role {
        Role::Target => 1,
        Role::Source => 2,
    };
    let origin = match role {
        Role::Target => Origin::Target,
        Role::Source => Origin::Source(1),
    };
    let mut rng = stream_rng(seed, stream);
    let mut proposals = 0u64;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, tries) = draw_point(spec, role, pair.as_ref(), &mut rng);
        proposals += tries;
        let y = u8::from(rng.random::<f64>() < spec.eta.eval(&x));
        samples.push(LabeledSample::new(x.into_iter().map(T::of).collect(), y, origin));
    }
    let rate = if proposals == 0 { 1.0 } else { n as f64 / proposals as f64 };
    Ok((Dataset::new(spec.dim, samples)?, rate))
}

/// Analytic acceptance probability of the source rejection sampler,
/// `int d(x, A_k)^nu dx / sup d^nu`, when the singular part has at most two
/// coordinates.
pub fn acceptance_probability(spec: &SyntheticSpec) -> Result<f64> {
    let m = spec.dim - spec.singular_dim;
    let integral = crate::measure::power_box_integral(&vec![0.0; m], &vec![1.0; m], spec.strength)?;
    Ok(integral / spec.rejection_bound())
}

/// Monte Carlo mean of `f(X)` over `X ~ Q_X`, split over fixed shards.
fn target_mean(spec: &SyntheticSpec, n_mc: usize, seed: u64, f: impl Fn(&[f64]) -> f64 + Sync) -> Result<f64> {
    if n_mc == 0 {
        return Err(Error::EmptyInput);
    }
    spec.validate()?;
    let pair = pair_of(spec)?;
    let total: f64 = (0..MC_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let lo = n_mc as u64 * shard / MC_SHARDS;
            let hi = n_mc as u64 * (shard + 1) / MC_SHARDS;
            let mut rng = stream_rng(seed, 100 + shard);
            let mut acc = 0.0;
            for _ in lo..hi {
                let (x, _) = draw_point(spec, Role::Target, pair.as_ref(), &mut rng);
                acc += f(&x);
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(total / n_mc as f64)
}

/// `E_Q min(eta, 1 - eta)`.
pub fn bayes_risk_mc(spec: &SyntheticSpec, n_mc: usize, seed: u64) -> Result<f64> {
    target_mean(spec, n_mc, seed, |x| {
        let e = spec.eta.eval(x);
        e.min(1.0 - e)
    })
}

/// `E_Q 2 |eta - 1/2| 1{f != 1{eta >= 1/2}}`.
pub fn excess_risk_mc(
    classifier: &(dyn Fn(&[f64]) -> u8 + Sync),
    spec: &SyntheticSpec,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    target_mean(spec, n_mc, seed, |x| {
        let e = spec.eta.eval(x);
        let bayes = u8::from(e >= 0.5);
        if classifier(x) != bayes {
            2.0 * (e - 0.5).abs()
        } else {
            0.0
        }
    })
}
