//! Benchmark harness: fits every method over a grid of sample sizes and
//! scores it on held-out target data.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{hold_out_targets, load_dataset, normalize_features, subsample, threshold_split, Dataset, SplitRule};
use crate::dyadic::{admissible_depths, TreeIndex, TreeKind};
use crate::error::{Error, Result};
use crate::ici::{ici_predict_batch, IciConfig};
use crate::select::{
    auto_ratio_level, default_penalty_grid, estimate_density_ratio, level_cv, make_folds, sn_prune, tune_penalty,
    DensityRatio, RiskKind, SnVariant,
};
use crate::synth::{derive_seed, sample_synthetic, Role, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Adaptive local depth selection.
    Ad,
    Cv,
    Fcv,
    Iwcv,
    Sn,
    Snq,
    /// Best fixed level as scored on the test set; not an honest method.
    OracleLevel,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ad,
        Method::Cv,
        Method::Fcv,
        Method::Iwcv,
        Method::Sn,
        Method::Snq,
        Method::OracleLevel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ad => "AD",
            Method::Cv => "CV",
            Method::Fcv => "FCV",
            Method::Iwcv => "IWCV",
            Method::Sn => "SN",
            Method::Snq => "SNQ",
            Method::OracleLevel => "ORACLE_LEVEL",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
        label_column: String,
        rule: SplitRule,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub data: DataSource,
    pub methods: Vec<Method>,
    /// `(n_P, n_Q)` training sizes.
    pub grid: Vec<(usize, usize)>,
    pub repetitions: usize,
    pub test_size: usize,
    pub seed: u64,
    pub ici: IciConfig<f64>,
    pub tree_kind: TreeKind,
    pub folds: usize,
    /// Record wall time per fit; disabling it makes the output reproducible
    /// byte for byte.
    pub timing: bool,
}

impl BenchConfig {
    pub fn new(data: DataSource) -> Self {
        BenchConfig {
            data,
            methods: vec![Method::Ad, Method::Cv],
            grid: vec![(1000, 100)],
            repetitions: 10,
            test_size: 5000,
            seed: 0,
            ici: IciConfig::default(),
            tree_kind: TreeKind::Cyclical,
            folds: 2,
            timing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.methods.is_empty() {
            return bad("no methods selected");
        }
        if self.grid.is_empty() {
            return bad("sample-size grid is empty");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.test_size == 0 {
            return bad("test size must be positive");
        }
        if self.folds < 2 {
            return bad("at least 2 folds are needed");
        }
        if self.grid.iter().any(|&(p, q)| p + q == 0 || q == 0) {
            return bad("every grid point needs target samples");
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        self.ici.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub n_p: usize,
    pub n_q: usize,
    pub rep: usize,
    pub risk: f64,
    pub excess: Option<f64>,
    pub wall_ms: Option<f64>,
    pub selected_level: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
}

/// Misclassification rate.
pub fn empirical_risk(predictions: &[u8], truth: &[u8]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            found: predictions.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let wrong = predictions.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / truth.len() as f64)
}

struct Job<'a> {
    train: Dataset<f64>,
    test: &'a Dataset<f64>,
    spec: Option<&'a SyntheticSpec>,
    seed: u64,
}

struct Fit {
    predictions: Vec<u8>,
    level: Option<u32>,
}

fn fit_method(cfg: &BenchConfig, method: Method, job: &Job) -> Result<Fit> {
    let kind = cfg.tree_kind;
    let train = &job.train;
    let dim = train.dim();
    let levels = admissible_depths(kind, dim, train.n_source(), train.n_target())?;
    let deepest = *levels.last().expect("level 0 is always admissible");
    let test_points = job.test.points();
    let fixed_level = |level: u32| -> Result<Fit> {
        let index = TreeIndex::build(train, level, kind)?;
        let predictions = test_points
            .iter()
            .map(|x| index.classify_at_level(x, level))
            .collect::<Result<_>>()?;
        Ok(Fit {
            predictions,
            level: Some(level),
        })
    };
    match method {
        Method::Ad => {
            let index = TreeIndex::build(train, deepest, kind)?;
            Ok(Fit {
                predictions: ici_predict_batch(&index, &test_points, &cfg.ici)?,
                level: None,
            })
        }
        Method::Cv | Method::Fcv | Method::Iwcv => {
            let folds = make_folds(train, cfg.folds, job.seed)?;
            let (risk, ratio) = match method {
                Method::Cv => (RiskKind::Cv, None),
                Method::Fcv => (RiskKind::Fcv, None),
                _ => {
                    let (src, tgt) = (train.sources(), train.targets());
                    let ratio = if src.is_empty() {
                        None
                    } else {
                        let level = auto_ratio_level(&src, &tgt, 10.0)?;
                        Some(estimate_density_ratio(&src, &tgt, level, 0.5)?)
                    };
                    (RiskKind::Iwcv, ratio)
                }
            };
            let unit = |_: &[f64]| 1.0;
            let ratio_ref: Option<&dyn DensityRatio<f64>> = match (&ratio, risk) {
                (Some(r), _) => Some(r),
                (None, RiskKind::Iwcv) => Some(&unit),
                (None, _) => None,
            };
            let sel = level_cv(train, &folds, risk, ratio_ref, &levels, kind)?;
            fixed_level(sel.selected)
        }
        Method::Sn | Method::Snq => {
            let variant = if method == Method::Sn { SnVariant::Sn } else { SnVariant::Snq };
            let (c, _) = tune_penalty(train, kind, deepest, variant, &default_penalty_grid(), cfg.folds, job.seed)?;
            let index = TreeIndex::build(train, deepest, kind)?;
            let pruned = sn_prune(&index, train, c, variant)?;
            Ok(Fit {
                predictions: test_points.iter().map(|x| pruned.predict(x)).collect(),
                level: None,
            })
        }
        Method::OracleLevel => {
            let index = TreeIndex::build(train, deepest, kind)?;
            let truth = job.test.labels();
            let mut best: Option<(f64, Fit)> = None;
            for &level in &levels {
                let predictions: Vec<u8> = test_points
                    .iter()
                    .map(|x| index.classify_at_level(x, level))
                    .collect::<Result<_>>()?;
                let risk = empirical_risk(&predictions, &truth)?;
                if best.as_ref().is_none_or(|(b, _)| risk < *b) {
                    best = Some((
                        risk,
                        Fit {
                            predictions,
                            level: Some(level),
                        },
                    ));
                }
            }
            Ok(best.expect("levels are non-empty").1)
        }
    }
}

/// Fits `method` on `train` with the settings of `cfg` and labels the
/// points of `test`. Returns the predictions and the selected level, if the
/// method picks a single one.
pub fn fit_predict(
    cfg: &BenchConfig,
    method: Method,
    train: &Dataset<f64>,
    test: &Dataset<f64>,
    seed: u64,
) -> Result<(Vec<u8>, Option<u32>)> {
    let job = Job {
        train: train.clone(),
        test,
        spec: None,
        seed,
    };
    let fit = fit_method(cfg, method, &job)?;
    Ok((fit.predictions, fit.level))
}

fn excess_on_test(spec: &SyntheticSpec, test: &Dataset<f64>, predictions: &[u8]) -> f64 {
    let total: f64 = test
        .iter()
        .zip(predictions)
        .map(|(s, &p)| {
            let eta = spec.eta.eval(&s.features);
            if p != u8::from(eta >= 0.5) {
                2.0 * (eta - 0.5).abs()
            } else {
                0.0
            }
        })
        .sum();
    total / test.len() as f64
}

/// Target pool and reserved test set of a CSV source.
fn prepare_csv(path: &Path, label: &str, rule: &SplitRule, test_size: usize, seed: u64) -> Result<(Dataset<f64>, Dataset<f64>)> {
    let raw: Dataset<f64> = load_dataset(path, label, None)?;
    let data = normalize_features(&raw)?;
    let (source, target) = threshold_split(&data, rule, derive_seed(seed, &[0xc5]))?;
    let (target_rest, test) = hold_out_targets(&target, test_size, derive_seed(seed, &[0x7e57]))?;
    Ok((source.concat(&target_rest)?, test))
}

/// Runs every `(method, grid point, repetition)` combination. Rows are
/// ordered by grid point, repetition and method.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchResult> {
    cfg.validate()?;
    let csv_data = match &cfg.data {
        DataSource::Csv { path, label_column, rule } => Some(prepare_csv(path, label_column, rule, cfg.test_size, cfg.seed)?),
        DataSource::Synthetic(_) => None,
    };
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let jobs: Vec<(usize, usize)> = (0..cfg.grid.len())
        .flat_map(|g| (0..cfg.repetitions).map(move |r| (g, r)))
        .collect();

    let per_job: Vec<Vec<BenchRow>> = jobs
        .par_iter()
        .map(|&(g, rep)| {
            let (n_p, n_q) = cfg.grid[g];
            let seed = derive_seed(cfg.seed, &[g as u64, rep as u64]);
            let (train, test, spec) = match (&cfg.data, &csv_data) {
                (DataSource::Synthetic(spec), _) => {
                    let src = sample_synthetic::<f64>(spec, Role::Source, n_p, derive_seed(seed, &[1]))?;
                    let tgt = sample_synthetic::<f64>(spec, Role::Target, n_q, derive_seed(seed, &[2]))?;
                    let test = sample_synthetic::<f64>(spec, Role::Target, cfg.test_size, derive_seed(seed, &[3]))?;
                    (src.concat(&tgt)?, test, Some(spec))
                }
                (DataSource::Csv { .. }, Some((pool, test))) => {
                    (subsample(pool, n_q, n_p, derive_seed(seed, &[4]))?, test.clone(), None)
                }
                _ => unreachable!("csv data prepared above"),
            };
            let job = Job {
                train,
                test: &test,
                spec,
                seed: derive_seed(seed, &[5]),
            };
            let truth = test.labels();
            methods
                .iter()
                .map(|&method| {
                    let start = Instant::now();
                    let fit = fit_method(cfg, method, &job)?;
                    let elapsed = start.elapsed().as_secs_f64() * 1e3;
                    Ok(BenchRow {
                        method,
                        n_p,
                        n_q,
                        rep,
                        risk: empirical_risk(&fit.predictions, &truth)?,
                        excess: job.spec.map(|s| excess_on_test(s, &test, &fit.predictions)),
                        wall_ms: cfg.timing.then_some(elapsed),
                        selected_level: fit.level,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(BenchResult {
        rows: per_job.into_iter().flatten().collect(),
    })
}

pub const BENCH_HEADER: [&str; 8] = ["method", "nP", "nQ", "rep", "risk", "excess", "wall_ms", "selected_level"];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the rows with columns
/// `method,nP,nQ,rep,risk,excess,wall_ms,selected_level`.
pub fn write_bench_csv<W: Write>(result: &BenchResult, w: W) -> Result<()> {
    if result.rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(BENCH_HEADER)?;
    for r in &result.rows {
        out.write_record([
            r.method.name().to_string(),
            r.n_p.to_string(),
            r.n_q.to_string(),
            r.rep.to_string(),
            r.risk.to_string(),
            opt(r.excess),
            opt(r.wall_ms),
            opt(r.selected_level),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<bench>", e))?;
    Ok(())
}

pub fn emit_csv(result: &BenchResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if result.rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_bench_csv(result, std::io::BufWriter::new(file))
}

/// Parses a file written by [`emit_csv`].
pub fn read_bench_csv(path: impl AsRef<Path>) -> Result<BenchResult> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let parse_err = |field: &str, v: &str| Error::Config(format!("bad value `{v}` in column {field}"));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| get(i).parse::<f64>().map_err(|_| parse_err(BENCH_HEADER[i], get(i)));
        let int = |i: usize| get(i).parse::<usize>().map_err(|_| parse_err(BENCH_HEADER[i], get(i)));
        let maybe = |i: usize| -> Result<Option<f64>> { if get(i).is_empty() { Ok(None) } else { num(i).map(Some) } };
        rows.push(BenchRow {
            method: get(0).parse()?,
            n_p: int(1)?,
            n_q: int(2)?,
            rep: int(3)?,
            risk: num(4)?,
            excess: maybe(5)?,
            wall_ms: maybe(6)?,
            selected_level: if get(7).is_empty() { None } else { Some(int(7)? as u32) },
        });
    }
    Ok(BenchResult { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotAxis {
    SourceSize,
    TargetSize,
}

impl FromStr for PlotAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nP" | "np" => Ok(PlotAxis::SourceSize),
            "nQ" | "nq" => Ok(PlotAxis::TargetSize),
            _ => Err(Error::Config(format!("plot axis must be nP or nQ, got `{s}`"))),
        }
    }
}

/// Mean and standard error of the risk per method and x value.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub method: Method,
    /// `(x, mean, stderr)` sorted by x.
    pub points: Vec<(f64, f64, f64)>,
}

pub fn summarize(result: &BenchResult, axis: PlotAxis) -> Vec<Series> {
    let mut methods: Vec<Method> = result.rows.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    methods
        .into_iter()
        .map(|method| {
            let mut xs: Vec<usize> = result
                .rows
                .iter()
                .filter(|r| r.method == method)
                .map(|r| match axis {
                    PlotAxis::SourceSize => r.n_p,
                    PlotAxis::TargetSize => r.n_q,
                })
                .collect();
            xs.sort_unstable();
            xs.dedup();
            let points = xs
                .into_iter()
                .map(|x| {
                    let risks: Vec<f64> = result
                        .rows
                        .iter()
                        .filter(|r| {
                            r.method == method
                                && match axis {
                                    PlotAxis::SourceSize => r.n_p == x,
                                    PlotAxis::TargetSize => r.n_q == x,
                                }
                        })
                        .map(|r| r.risk)
                        .collect();
                    let n = risks.len() as f64;
                    let mean = risks.iter().sum::<f64>() / n;
                    let se = if risks.len() > 1 {
                        (risks.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
                    } else {
                        0.0
                    };
                    (x as f64, mean, se)
                })
                .collect();
            Series { method, points }
        })
        .collect()
}

const PALETTE: [&str; 7] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#7f7f7f"];

/// SVG line plot of mean risk against the chosen sample size, one polyline
/// per method with one-standard-error bars.
pub fn render_plot(result: &BenchResult, axis: PlotAxis) -> Result<String> {
    let series = summarize(result, axis);
    if series.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 20.0, 50.0);
    let all = series.iter().flat_map(|s| s.points.iter());
    let xmin = all.clone().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let xmax = all.clone().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let ymin = all.clone().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min).max(0.0);
    let ymax = all.map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max);
    let log_x = xmin > 0.0 && xmax / xmin >= 10.0;
    let tx = |x: f64| if log_x { x.ln() } else { x };
    let (x0, x1) = (tx(xmin), tx(xmax));
    let xspan = if x1 > x0 { x1 - x0 } else { 1.0 };
    let yspan = if ymax > ymin { ymax - ymin } else { 1.0 };
    let px = |x: f64| left + (tx(x) - x0) / xspan * (w - left - right);
    let py = |y: f64| h - bottom - (y - ymin) / yspan * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (ax0, ax1, ay0, ay1) = (left, w - right, top, h - bottom);
    let _ = writeln!(s, r#"<line x1="{ax0}" y1="{ay1}" x2="{ax1}" y2="{ay1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{ax0}" y1="{ay0}" x2="{ax0}" y2="{ay1}" stroke="black"/>"#);
    let label = match axis {
        PlotAxis::SourceSize => "nP",
        PlotAxis::TargetSize => "nQ",
    };
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}{}</text>"#,
        (ax0 + ax1) / 2.0,
        h - 12.0,
        if log_x { " (log scale)" } else { "" }
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">target risk</text>"#,
        (ay0 + ay1) / 2.0,
        (ay0 + ay1) / 2.0
    );
    for (v, y) in [(ymin, ay1), (ymax, ay0)] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, ax0 - 6.0, y + 4.0);
    }
    let mut ticks: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#, px(x), ay1 + 16.0);
    }
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser.points.iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        for &(x, m, se) in &ser.points {
            if se > 0.0 {
                let _ = writeln!(
                    s,
                    r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{color}"/>"#,
                    px(x),
                    py(m - se),
                    py(m + se)
                );
            }
        }
        let ly = top + 16.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            w - right + 12.0,
            w - right + 36.0
        );
        let _ = writeln!(
            s,
            r#"<text class="legend" x="{:.1}" y="{:.1}">{}</text>"#,
            w - right + 42.0,
            ly + 4.0,
            ser.method.name()
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot(result: &BenchResult, axis: PlotAxis, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let svg = render_plot(result, axis)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
