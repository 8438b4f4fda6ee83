//! Local depth selection by intersecting confidence intervals.
//!
//! Starting at a deep level of the tree, the walk towards the root keeps the
//! running intersection of the intervals `eta_r(x) ± 2 sigma_r(x)` and stops
//! as soon as the intersection is empty or lies strictly on one side of
//! `1/2`, or when the cap level is reached.

use std::io::Write;

use rayon::prelude::*;

use crate::dyadic::TreeIndex;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Constant in `sigma_r = C / sqrt(|envelope|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WidthConstant<T> {
    Fixed(T),
    /// `C = (1 + 2 sqrt(ln(n / delta))) / 2` with `delta = 1/n`, natural log.
    Theoretical,
}

impl<T: Scalar> WidthConstant<T> {
    /// Numeric constant for a pooled sample of size `n`.
    pub fn value(self, n: usize) -> T {
        match self {
            WidthConstant::Fixed(c) => c,
            WidthConstant::Theoretical => theoretical_constant(n, 1.0 / n.max(1) as f64),
        }
    }
}

/// `(1 + 2 sqrt(ln(n / delta))) / 2`.
pub fn theoretical_constant<T: Scalar>(n: usize, delta: f64) -> T {
    let arg = (n.max(1) as f64 / delta).ln().max(0.0);
    T::of(0.5 * (1.0 + 2.0 * arg.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IciConfig<T> {
    pub width: WidthConstant<T>,
    /// Level the walk starts from; defaults to the deepest admissible level.
    pub start_level: Option<u32>,
    /// Shallowest level visited; defaults to 1 (cell side 1/2).
    pub cap_level: Option<u32>,
}

impl<T: Scalar> Default for IciConfig<T> {
    fn default() -> Self {
        IciConfig {
            width: WidthConstant::Fixed(T::of(0.25)),
            start_level: None,
            cap_level: None,
        }
    }
}

impl<T: Scalar> IciConfig<T> {
    pub fn with_constant(c: T) -> Self {
        IciConfig {
            width: WidthConstant::Fixed(c),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let WidthConstant::Fixed(c) = self.width {
            if !(c > T::zero()) {
                return Err(Error::Config(format!("width constant must be positive, got {c}")));
            }
        }
        if let (Some(s), Some(c)) = (self.start_level, self.cap_level) {
            if s < c {
                return Err(Error::Config(format!(
                    "start level {s} is shallower than cap level {c}"
                )));
            }
        }
        Ok(())
    }

    /// `(start, cap)` levels for an index.
    pub fn levels(&self, index: &TreeIndex) -> Result<(u32, u32)> {
        self.validate()?;
        let start = match self.start_level {
            Some(s) => s,
            None => index
                .kind()
                .deepest_level(index.dim(), index.n_total().max(1))?
                .min(index.max_level()),
        };
        if start > index.max_level() {
            return Err(Error::LevelOutOfRange {
                level: start,
                max: index.max_level(),
            });
        }
        let cap = self.cap_level.unwrap_or(1).min(start);
        Ok((start, cap))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Running intersection became empty.
    Disjoint,
    /// Running interval lies strictly above or below 1/2.
    OneSided,
    /// Reached the cap level.
    Cap,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Disjoint => "disjoint",
            StopReason::OneSided => "oneSided",
            StopReason::Cap => "cap",
        }
    }
}

/// State after visiting one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStep<T> {
    pub level: u32,
    pub eta: T,
    /// Infinite for an empty envelope.
    pub sigma: T,
    pub lower: T,
    pub upper: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IciTrace<T> {
    pub steps: Vec<LevelStep<T>>,
    pub lower: T,
    pub upper: T,
    pub stop: StopReason,
    pub estimate: T,
    pub label: u8,
}

impl<T: Scalar> IciTrace<T> {
    pub fn visited_levels(&self) -> Vec<u32> {
        self.steps.iter().map(|s| s.level).collect()
    }

    /// Level where the walk stopped.
    pub fn final_level(&self) -> u32 {
        self.steps.last().map_or(0, |s| s.level)
    }
}

/// `C / sqrt(|envelope|)`, infinite when the envelope is empty.
pub fn sigma_hat<T: Scalar>(index: &TreeIndex, x: &[T], level: u32, cfg: &IciConfig<T>) -> Result<T> {
    let count = index.envelope_at(x, level)?.count;
    Ok(sigma_from_count(cfg.width.value(index.n_total()), count))
}

fn sigma_from_count<T: Scalar>(c: T, count: u64) -> T {
    if count == 0 {
        T::infinity()
    } else {
        c / T::of(count as f64).sqrt()
    }
}

fn one_sided<T: Scalar>(lower: T, upper: T) -> bool {
    lower > T::half() || upper < T::half()
}

/// Runs the depth selection walk at `x`.
pub fn ici_classify<T: Scalar>(index: &TreeIndex, x: &[T], cfg: &IciConfig<T>) -> Result<IciTrace<T>> {
    let (start, cap) = cfg.levels(index)?;
    let c = cfg.width.value(index.n_total());
    let two = T::of(2.0);

    let visit = |level: u32| -> LevelStep<T> {
        let st = index
            .envelope_at(x, level)
            .expect("level validated against the index");
        let eta = st.mean();
        let sigma = sigma_from_count(c, st.count);
        let (lower, upper) = if st.count == 0 {
            (T::neg_infinity(), T::infinity())
        } else {
            (eta - two * sigma, eta + two * sigma)
        };
        LevelStep {
            level,
            eta,
            sigma,
            lower,
            upper,
        }
    };

    let first = visit(start);
    let mut lower = first.lower;
    let mut upper = first.upper;
    let mut steps = vec![first];
    let mut level = start;

    let (stop, estimate) = loop {
        let eta_here = steps.last().expect("non-empty").eta;
        if one_sided(lower, upper) {
            break (StopReason::OneSided, eta_here);
        }
        if level <= cap {
            break (StopReason::Cap, eta_here);
        }
        level -= 1;
        let mut step = visit(level);
        lower = lower.max(step.lower);
        upper = upper.min(step.upper);
        step.lower = lower;
        step.upper = upper;
        steps.push(step);
        if upper <= lower {
            break (StopReason::Disjoint, (upper + lower) / two);
        }
    };

    Ok(IciTrace {
        steps,
        lower,
        upper,
        stop,
        estimate,
        label: u8::from(estimate >= T::half()),
    })
}

/// Labels for a batch of points, in input order.
pub fn ici_predict_batch<T: Scalar>(index: &TreeIndex, points: &[&[T]], cfg: &IciConfig<T>) -> Result<Vec<u8>> {
    cfg.levels(index)?;
    points
        .par_iter()
        .map(|x| ici_classify(index, x, cfg).map(|t| t.label))
        .collect()
}

/// Writes traces as CSV: `point,level,eta,sigma,lower,upper,stop`, one row
/// per visited level. The stop reason is repeated on every row of a point.
pub fn write_traces_csv<T: Scalar, W: Write>(traces: &[IciTrace<T>], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["point", "level", "eta", "sigma", "lower", "upper", "stop"])?;
    for (id, tr) in traces.iter().enumerate() {
        for s in &tr.steps {
            wtr.write_record([
                id.to_string(),
                s.level.to_string(),
                s.eta.to_string(),
                s.sigma.to_string(),
                s.lower.to_string(),
                s.upper.to_string(),
                tr.stop.as_str().to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, LabeledSample, Origin};
    use crate::dyadic::TreeKind;

    fn line(points: &[(f64, u8)]) -> Dataset<f64> {
        Dataset::new(
            1,
            points
                .iter()
                .map(|&(x, y)| LabeledSample::new(vec![x], y, Origin::Target))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn theoretical_constant_values() {
        let c1: f64 = theoretical_constant(1, 1.0);
        assert_eq!(c1, 0.5);
        let c100: f64 = WidthConstant::Theoretical.value(100);
        let expected = 0.5 * (1.0 + 2.0 * (10000f64).ln().sqrt());
        assert!((c100 - expected).abs() < 1e-12);
        assert!((c100 - 3.535).abs() < 1e-3);
        assert!((c100 / 7.0 - 0.505).abs() < 1e-3);
    }

    #[test]
    fn sigma_examples() {
        // a single sample: theoretical constant is 1/2
        let idx = TreeIndex::build(&line(&[(0.5, 1)]), 2, TreeKind::Regular).unwrap();
        let cfg = IciConfig {
            width: WidthConstant::Theoretical,
            ..IciConfig::default()
        };
        assert_eq!(sigma_hat(&idx, &[0.5], 0, &cfg).unwrap(), 0.5);
        assert_eq!(sigma_from_count(0.5, 4), 0.25);
        assert_eq!(sigma_from_count(0.25, 16), 1.0 / 16.0);
        let empty: f64 = sigma_from_count(0.25, 0);
        assert!(empty.is_infinite());
    }

    #[test]
    fn pure_labels_stop_one_sided() {
        let pts: Vec<(f64, u8)> = (0..64).map(|i| ((i as f64 + 0.5) / 64.0, 1)).collect();
        let idx = TreeIndex::build(&line(&pts), 3, TreeKind::Regular).unwrap();
        let tr = ici_classify(&idx, &[0.4], &IciConfig::with_constant(0.25)).unwrap();
        assert_eq!(tr.stop, StopReason::OneSided);
        assert_eq!(tr.label, 1);
        assert!(tr.lower > 0.5);
    }

    #[test]
    fn tiny_sample_hits_cap() {
        let idx = TreeIndex::build(&line(&[(0.1, 1), (0.9, 0)]), 1, TreeKind::Regular).unwrap();
        let tr = ici_classify(&idx, &[0.2], &IciConfig::with_constant(0.25)).unwrap();
        assert_eq!(tr.stop, StopReason::Cap);
        assert_eq!(tr.final_level(), 1);
        let eta_cap = idx.eta_hat(&[0.2], 1).unwrap();
        assert_eq!(tr.label, u8::from(eta_cap >= 0.5));
    }

    #[test]
    fn batch_matches_pointwise() {
        let pts: Vec<(f64, u8)> = (0..40).map(|i| (i as f64 / 40.0, u8::from(i % 3 == 0))).collect();
        let idx = TreeIndex::build(&line(&pts), 3, TreeKind::Regular).unwrap();
        let cfg = IciConfig::with_constant(0.25);
        let empty: Vec<&[f64]> = Vec::new();
        assert!(ici_predict_batch(&idx, &empty, &cfg).unwrap().is_empty());
        let one = [0.3];
        assert_eq!(
            ici_predict_batch(&idx, &[&one[..]], &cfg).unwrap(),
            vec![ici_classify(&idx, &one, &cfg).unwrap().label]
        );
    }

    #[test]
    fn rejects_bad_config() {
        let idx = TreeIndex::build(&line(&[(0.1, 1)]), 2, TreeKind::Regular).unwrap();
        let cfg = IciConfig::with_constant(0.0);
        assert!(ici_classify(&idx, &[0.1], &cfg).is_err());
        let cfg = IciConfig {
            start_level: Some(3),
            ..IciConfig::with_constant(0.25)
        };
        assert!(matches!(ici_classify(&idx, &[0.1], &cfg), Err(Error::LevelOutOfRange { .. })));
    }

    #[test]
    fn trace_dump_has_row_per_level() {
        let idx = TreeIndex::build(&line(&[(0.1, 1), (0.6, 0)]), 2, TreeKind::Regular).unwrap();
        let cfg = IciConfig {
            start_level: Some(2),
            ..IciConfig::with_constant(0.25)
        };
        let tr = ici_classify(&idx, &[0.1], &cfg).unwrap();
        let mut buf = Vec::new();
        write_traces_csv(&[tr.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + tr.steps.len());
        assert!(text.starts_with("point,level,eta,sigma,lower,upper,stop\n0,2,"));
    }
}
