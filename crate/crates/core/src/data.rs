//! Labelled samples, CSV ingestion, min-max normalization and the seeded
//! splitting/subsampling protocol used by the experiments.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Population a sample was drawn from.
///
/// Sources are numbered from 1, matching the `P1..Pk` tags of the CSV
/// format. Ordering places the target first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Origin {
    Target,
    Source(u16),
}

impl Origin {
    pub fn is_target(self) -> bool {
        matches!(self, Origin::Target)
    }

    pub fn is_source(self) -> bool {
        !self.is_target()
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Target => write!(f, "Q"),
            Origin::Source(1) => write!(f, "P"),
            Origin::Source(k) => write!(f, "P{k}"),
        }
    }
}

impl FromStr for Origin {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.trim() {
            "Q" => Ok(Origin::Target),
            "P" => Ok(Origin::Source(1)),
            t => {
                let k: u16 = t.strip_prefix('P').ok_or(())?.parse().map_err(|_| ())?;
                if k == 0 {
                    Err(())
                } else {
                    Ok(Origin::Source(k))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample<T> {
    pub features: Vec<T>,
    pub label: u8,
    pub origin: Origin,
}

impl<T: Scalar> LabeledSample<T> {
    pub fn new(features: Vec<T>, label: u8, origin: Origin) -> Self {
        LabeledSample {
            features,
            label,
            origin,
        }
    }
}

/// An ordered collection of samples of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    samples: Vec<LabeledSample<T>>,
    dim: usize,
    counts: BTreeMap<Origin, usize>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(dim: usize, samples: Vec<LabeledSample<T>>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for s in &samples {
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.features.len(),
                });
            }
            if s.label > 1 {
                return Err(Error::InvalidLabel(s.label));
            }
            *counts.entry(s.origin).or_insert(0) += 1;
        }
        Ok(Dataset {
            samples,
            dim,
            counts,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Dataset {
            samples: Vec::new(),
            dim,
            counts: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[LabeledSample<T>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSample<T>> {
        self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledSample<T>> {
        self.samples.iter()
    }

    /// Per-origin sample counts.
    pub fn counts(&self) -> &BTreeMap<Origin, usize> {
        &self.counts
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.counts.get(&origin).copied().unwrap_or(0)
    }

    /// Number of target samples, `n_Q`.
    pub fn n_target(&self) -> usize {
        self.count(Origin::Target)
    }

    /// Number of source samples pooled over all sources, `n_P`.
    pub fn n_source(&self) -> usize {
        self.len() - self.n_target()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn points(&self) -> Vec<&[T]> {
        self.samples.iter().map(|s| s.features.as_slice()).collect()
    }

    /// Whether every coordinate lies in `[0,1]`.
    pub fn is_normalized(&self) -> bool {
        self.samples.iter().all(|s| {
            s.features
                .iter()
                .all(|&v| v >= T::zero() && v <= T::one())
        })
    }

    /// Returns the first coordinate outside the unit cube, if any.
    pub(crate) fn check_unit_cube(&self) -> Result<()> {
        for (index, s) in self.samples.iter().enumerate() {
            for (coord, &v) in s.features.iter().enumerate() {
                if !(v >= T::zero() && v <= T::one()) {
                    return Err(Error::FeatureOutOfRange {
                        index,
                        coord,
                        value: v.as_f64(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Keeps the samples for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(&LabeledSample<T>) -> bool) -> Self {
        let samples: Vec<_> = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        Dataset::new(self.dim, samples).expect("subset of a valid dataset")
    }

    pub fn targets(&self) -> Self {
        self.filter(|s| s.origin.is_target())
    }

    pub fn sources(&self) -> Self {
        self.filter(|s| s.origin.is_source())
    }

    /// Samples at the given positions, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Dataset::new(self.dim, samples).expect("subset of a valid dataset")
    }

    /// Concatenates two datasets of the same dimension.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if other.dim != self.dim && !other.is_empty() && !self.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let dim = if self.is_empty() { other.dim } else { self.dim };
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Dataset::new(dim, samples)
    }

    /// Returns a copy with every origin replaced by `origin`.
    pub fn with_origin(&self, origin: Origin) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| LabeledSample::new(s.features.clone(), s.label, origin))
            .collect();
        Dataset::new(self.dim, samples).expect("relabelled copy of a valid dataset")
    }

    /// Writes the dataset with header `f0..f{D-1},label,origin`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        header.push("origin".into());
        wtr.write_record(&header)?;
        for s in &self.samples {
            let mut rec: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
            rec.push(s.label.to_string());
            rec.push(s.origin.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Threshold rule selecting candidate target rows: every listed feature
/// must exceed `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRule {
    pub feature_indices: Vec<usize>,
    pub threshold: f64,
    pub accept_prob: f64,
}

impl SplitRule {
    pub fn new(feature_indices: Vec<usize>, threshold: f64, accept_prob: f64) -> Result<Self> {
        let mut seen = feature_indices.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != feature_indices.len() {
            return Err(Error::InvalidRule("feature indices must be distinct".into()));
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidRule(format!("threshold {threshold} not in [0,1]")));
        }
        if !(0.0..=1.0).contains(&accept_prob) {
            return Err(Error::InvalidRule(format!("probability {accept_prob} not in [0,1]")));
        }
        Ok(SplitRule {
            feature_indices,
            threshold,
            accept_prob,
        })
    }

    /// True when the row is a candidate for the target set.
    pub fn is_target_candidate<T: Scalar>(&self, x: &[T]) -> bool {
        let t = T::of(self.threshold);
        self.feature_indices.iter().all(|&j| x[j] > t)
    }
}

/// Reads a headed CSV file. Every column other than the label and origin
/// columns is a numeric feature, in file order.
pub fn load_dataset<T: Scalar>(
    path: impl AsRef<Path>,
    label_column: &str,
    origin_column: Option<&str>,
) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, label_column, origin_column)
}

pub fn read_dataset<T: Scalar, R: std::io::Read>(
    reader: R,
    label_column: &str,
    origin_column: Option<&str>,
) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let label_idx = find(label_column)?;
    let origin_idx = origin_column.map(find).transpose()?;
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&c| c != label_idx && Some(c) != origin_idx)
        .collect();

    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != header.len() {
            return Err(Error::RaggedRow {
                row,
                expected: header.len(),
                found: rec.len(),
            });
        }
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let cell = &rec[c];
            let v: T = cell.parse().map_err(|_| Error::NonNumericFeature {
                row,
                column: header[c].clone(),
                value: cell.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumericFeature {
                    row,
                    column: header[c].clone(),
                    value: cell.to_owned(),
                });
            }
            features.push(v);
        }
        let origin = match origin_idx {
            None => Origin::Target,
            Some(c) => rec[c].parse().map_err(|_| Error::BadOrigin {
                row,
                value: rec[c].to_owned(),
            })?,
        };
        raw_labels.push(rec[label_idx].to_owned());
        rows.push((features, origin));
    }

    let coding = LabelCoding::infer(&raw_labels)?;
    let samples = rows
        .into_iter()
        .zip(&raw_labels)
        .map(|((features, origin), raw)| LabeledSample::new(features, coding.code(raw), origin))
        .collect();
    Dataset::new(feature_cols.len(), samples)
}

/// Maps the raw label strings onto {0, 1}.
///
/// Numeric labels drawn from {0, 1} keep their value; otherwise the two
/// distinct values are ordered (numerically when both parse, else
/// lexically) and the smaller becomes 0.
struct LabelCoding {
    map: HashMap<String, u8>,
}

impl LabelCoding {
    fn infer(raw: &[String]) -> Result<Self> {
        let mut distinct: Vec<String> = raw.to_vec();
        distinct.sort();
        distinct.dedup();
        if distinct.len() > 2 {
            distinct.truncate(5);
            return Err(Error::TooManyLabels(distinct));
        }
        let numeric: Option<Vec<f64>> = distinct.iter().map(|s| s.parse().ok()).collect();
        let mut map = HashMap::new();
        match numeric {
            Some(vals) if vals.iter().all(|&v| v == 0.0 || v == 1.0) => {
                for (s, v) in distinct.iter().zip(vals) {
                    map.insert(s.clone(), v as u8);
                }
            }
            Some(vals) => {
                let mut pairs: Vec<_> = distinct.iter().zip(vals).collect();
                pairs.sort_by(|a, b| a.1.total_cmp(&b.1));
                for (code, (s, _)) in pairs.into_iter().enumerate() {
                    map.insert(s.clone(), code as u8);
                }
            }
            None => {
                for (code, s) in distinct.iter().enumerate() {
                    map.insert(s.clone(), code as u8);
                }
            }
        }
        Ok(LabelCoding { map })
    }

    fn code(&self, raw: &str) -> u8 {
        self.map[raw]
    }
}

/// Min-max scales every coordinate to `[0,1]` using the pooled sample.
/// Constant coordinates map to 0.
pub fn normalize_features<T: Scalar>(data: &Dataset<T>) -> Result<Dataset<T>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = data.dim();
    let mut lo = vec![T::infinity(); d];
    let mut hi = vec![T::neg_infinity(); d];
    for s in data.iter() {
        for j in 0..d {
            lo[j] = lo[j].min(s.features[j]);
            hi[j] = hi[j].max(s.features[j]);
        }
    }
    let samples = data
        .iter()
        .map(|s| {
            let features = (0..d)
                .map(|j| {
                    let span = hi[j] - lo[j];
                    if span > T::zero() {
                        ((s.features[j] - lo[j]) / span).min(T::one())
                    } else {
                        T::zero()
                    }
                })
                .collect();
            LabeledSample::new(features, s.label, s.origin)
        })
        .collect();
    Dataset::new(d, samples)
}

/// Splits normalized data into `(source, target)` by the threshold rule.
///
/// Candidate rows are kept with probability `rule.accept_prob` and
/// discarded otherwise. Output origins are `Source(1)` and `Target`.
pub fn threshold_split<T: Scalar>(
    data: &Dataset<T>,
    rule: &SplitRule,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    for &j in &rule.feature_indices {
        if j >= data.dim() {
            return Err(Error::RuleIndexOutOfRange {
                index: j,
                dim: data.dim(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut source = Vec::new();
    let mut target = Vec::new();
    for s in data.iter() {
        // one draw per row keeps the stream aligned with row order
        let u: f64 = rng.random();
        if u >= rule.accept_prob {
            continue;
        }
        if rule.is_target_candidate(&s.features) {
            target.push(LabeledSample::new(s.features.clone(), s.label, Origin::Target));
        } else {
            source.push(LabeledSample::new(s.features.clone(), s.label, Origin::Source(1)));
        }
    }
    Ok((Dataset::new(data.dim(), source)?, Dataset::new(data.dim(), target)?))
}

/// Uniform without-replacement draw of `n_target` target rows and
/// `n_source` rows from the pooled sources. The original row order is
/// preserved.
pub fn subsample<T: Scalar>(
    data: &Dataset<T>,
    n_target: usize,
    n_source: usize,
    seed: u64,
) -> Result<Dataset<T>> {
    let target_pos: Vec<usize> = positions(data, |o| o.is_target());
    let source_pos: Vec<usize> = positions(data, |o| o.is_source());
    if n_target > target_pos.len() {
        return Err(Error::InsufficientSamples {
            origin: Origin::Target,
            requested: n_target,
            available: target_pos.len(),
        });
    }
    if n_source > source_pos.len() {
        return Err(Error::InsufficientSamples {
            origin: Origin::Source(1),
            requested: n_source,
            available: source_pos.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = index::sample(&mut rng, target_pos.len(), n_target)
        .into_iter()
        .map(|i| target_pos[i])
        .collect();
    chosen.extend(
        index::sample(&mut rng, source_pos.len(), n_source)
            .into_iter()
            .map(|i| source_pos[i]),
    );
    chosen.sort_unstable();
    Ok(data.select(&chosen))
}

/// Reserves `n_test` target rows as a test set; returns `(rest, test)`.
pub fn hold_out_targets<T: Scalar>(
    data: &Dataset<T>,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    let target_pos = positions(data, |o| o.is_target());
    if n_test > target_pos.len() {
        return Err(Error::InsufficientSamples {
            origin: Origin::Target,
            requested: n_test,
            available: target_pos.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; data.len()];
    for i in index::sample(&mut rng, target_pos.len(), n_test) {
        in_test[target_pos[i]] = true;
    }
    let (test, rest): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| in_test[i]);
    Ok((data.select(&rest), data.select(&test)))
}

fn positions<T: Scalar>(data: &Dataset<T>, pred: impl Fn(Origin) -> bool) -> Vec<usize> {
    data.iter()
        .enumerate()
        .filter(|(_, s)| pred(s.origin))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[(&[f64], u8, Origin)]) -> Dataset<f64> {
        let dim = rows.first().map_or(0, |r| r.0.len());
        Dataset::new(
            dim,
            rows.iter()
                .map(|(f, l, o)| LabeledSample::new(f.to_vec(), *l, *o))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn parses_plain_csv() {
        let csv = "f0,f1,label\n0.1,0.2,1\n0.3,0.4,0\n0.5,0.6,1\n";
        let d: Dataset<f64> = read_dataset(csv.as_bytes(), "label", None).unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.len(), 3);
        assert_eq!(d.n_target(), 3);
        assert_eq!(d.labels(), vec![1, 0, 1]);
        assert_eq!(d.samples()[1].features, vec![0.3, 0.4]);
    }

    #[test]
    fn maps_origin_tags() {
        let csv = "a,origin,y,b\n1,P,0,2\n3,Q,1,4\n5,P2,1,6\n";
        let d: Dataset<f64> = read_dataset(csv.as_bytes(), "y", Some("origin")).unwrap();
        let origins: Vec<_> = d.iter().map(|s| s.origin).collect();
        assert_eq!(origins, vec![Origin::Source(1), Origin::Target, Origin::Source(2)]);
        // label and origin columns excluded, feature order kept
        assert_eq!(d.samples()[0].features, vec![1.0, 2.0]);
        assert_eq!(d.n_source(), 2);
    }

    #[test]
    fn rejects_non_numeric_feature() {
        let csv = "f0,label\nabc,1\n";
        let err = read_dataset::<f64, _>(csv.as_bytes(), "label", None).unwrap_err();
        assert!(err.to_string().contains("non-numeric feature"), "{err}");
    }

    #[test]
    fn rejects_three_labels_and_ragged_rows() {
        let csv = "f0,label\n1,a\n2,b\n3,c\n";
        assert!(matches!(
            read_dataset::<f64, _>(csv.as_bytes(), "label", None),
            Err(Error::TooManyLabels(_))
        ));
        let csv = "f0,f1,label\n1,2,0\n3,1\n";
        assert!(matches!(
            read_dataset::<f64, _>(csv.as_bytes(), "label", None),
            Err(Error::RaggedRow { row: 2, .. })
        ));
        assert!(matches!(
            load_dataset::<f64>("/nonexistent/file.csv", "label", None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn codes_string_and_signed_labels() {
        let csv = "f0,label\n1,yes\n2,no\n";
        let d: Dataset<f64> = read_dataset(csv.as_bytes(), "label", None).unwrap();
        assert_eq!(d.labels(), vec![1, 0]);
        let csv = "f0,label\n1,1\n2,-1\n";
        let d: Dataset<f64> = read_dataset(csv.as_bytes(), "label", None).unwrap();
        assert_eq!(d.labels(), vec![1, 0]);
    }

    #[test]
    fn min_max_scaling() {
        let d = ds(&[
            (&[2.0, 5.0, 0.0], 0, Origin::Target),
            (&[4.0, 5.0, 1.0], 1, Origin::Target),
            (&[6.0, 5.0, 0.5], 0, Origin::Target),
        ]);
        let n = normalize_features(&d).unwrap();
        let col = |j: usize| n.iter().map(|s| s.features[j]).collect::<Vec<_>>();
        assert_eq!(col(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(col(1), vec![0.0, 0.0, 0.0]);
        assert_eq!(col(2), vec![0.0, 1.0, 0.5]);
        assert!(matches!(
            normalize_features(&Dataset::<f64>::empty(2)),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn split_degenerate_probabilities() {
        let rows: Vec<LabeledSample<f64>> = (0..50)
            .map(|i| LabeledSample::new(vec![i as f64 / 49.0, 0.5], (i % 2) as u8, Origin::Target))
            .collect();
        let d = Dataset::new(2, rows).unwrap();
        let rule = SplitRule::new(vec![0], 0.3, 1.0).unwrap();
        let (s, t) = threshold_split(&d, &rule, 3).unwrap();
        assert_eq!(s.len() + t.len(), d.len());
        assert!(t.iter().all(|x| x.features[0] > 0.3 && x.origin.is_target()));
        assert!(s.iter().all(|x| x.features[0] <= 0.3 && x.origin == Origin::Source(1)));

        let rule = SplitRule::new(vec![0], 0.3, 0.0).unwrap();
        let (s, t) = threshold_split(&d, &rule, 3).unwrap();
        assert!(s.is_empty() && t.is_empty());

        let rule = SplitRule::new(vec![2], 0.3, 1.0).unwrap();
        assert!(matches!(
            threshold_split(&d, &rule, 3),
            Err(Error::RuleIndexOutOfRange { index: 2, dim: 2 })
        ));
        assert!(SplitRule::new(vec![1, 1], 0.3, 1.0).is_err());
    }

    #[test]
    fn subsample_contracts() {
        let mut rows = Vec::new();
        for i in 0..20 {
            rows.push(LabeledSample::new(vec![i as f64 / 20.0], 0, Origin::Target));
        }
        for i in 0..30 {
            rows.push(LabeledSample::new(vec![i as f64 / 30.0], 1, Origin::Source(1)));
        }
        let d = Dataset::new(1, rows).unwrap();
        let all_t = subsample(&d, 20, 0, 1).unwrap();
        assert_eq!(all_t, d.targets());
        let a = subsample(&d, 5, 7, 42).unwrap();
        let b = subsample(&d, 5, 7, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.n_target(), a.n_source()), (5, 7));
        assert!(matches!(
            subsample(&d, 21, 0, 1),
            Err(Error::InsufficientSamples { requested: 21, available: 20, .. })
        ));
    }

    #[test]
    fn hold_out_is_disjoint() {
        let rows = (0..40)
            .map(|i| {
                let o = if i % 2 == 0 { Origin::Target } else { Origin::Source(1) };
                LabeledSample::new(vec![i as f64 / 40.0], 0, o)
            })
            .collect();
        let d = Dataset::new(1, rows).unwrap();
        let (rest, test) = hold_out_targets(&d, 8, 5).unwrap();
        assert_eq!(test.len(), 8);
        assert_eq!(rest.len(), 32);
        assert!(test.iter().all(|s| s.origin.is_target()));
        for t in test.iter() {
            assert!(!rest.iter().any(|r| r.features == t.features));
        }
    }

    #[test]
    fn origin_roundtrip_display() {
        for o in [Origin::Target, Origin::Source(1), Origin::Source(7)] {
            assert_eq!(o.to_string().parse::<Origin>(), Ok(o));
        }
        assert!("P0".parse::<Origin>().is_err());
        assert!("X".parse::<Origin>().is_err());
    }
}
