use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use covshift::bench::{emit_csv, emit_plot, empirical_risk, fit_predict, run_benchmark, summarize, BenchConfig, DataSource, Method, PlotAxis};
use covshift::data::{load_dataset, normalize_features, threshold_split};
use covshift::exponent::{
    dyadic_radii, lambda_dyadic_ambient, lambda_occupied_cells, lambda_occupied_cells_analytic, phi_integrated,
    phi_integrated_analytic, ExponentCurve,
};
use covshift::measure::{DistancePower, Measure, NonDoublingPair, Uniform};
use covshift::synth::{sample_synthetic, EtaKind, Family, Role, SyntheticSpec};
use covshift::{Dataset, IciConfig, SplitRule, TreeKind, WidthConstant};

use crate::{BenchArgs, CliError, ExponentArgs, FitArgs, FitSettings, GenArgs, SpecArgs, SplitArgs};

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("cannot write {}: {e}", path.display()))
}

fn parse_eta(s: &str) -> Result<EtaKind> {
    match s.trim() {
        "sine" => Ok(EtaKind::Sine),
        "linear" => Ok(EtaKind::Linear),
        t => t
            .strip_prefix("constant:")
            .and_then(|v| v.parse().ok())
            .map(EtaKind::Constant)
            .ok_or_else(|| usage(format!("unknown eta `{s}` (sine, linear or constant:<value>)"))),
    }
}

pub fn build_spec(a: &SpecArgs) -> Result<SyntheticSpec> {
    let spec = match a.family.as_str() {
        "distance-power" => SyntheticSpec::distance_power(a.dim, a.singular_dim, a.nu)?,
        "compensated" => SyntheticSpec::compensated(a.dim, a.singular_dim, a.nu)?,
        "power-line" => SyntheticSpec::power_line(a.nu)?,
        "non-doubling" => SyntheticSpec::non_doubling(a.nu)?,
        f => return Err(usage(format!("unknown family `{f}`"))),
    };
    match &a.eta {
        Some(e) => Ok(spec.with_eta(parse_eta(e)?)?),
        None => Ok(spec),
    }
}

fn parse_indices(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| usage(format!("bad feature index `{t}`"))))
        .collect()
}

fn parse_grid(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|pair| {
            let bad = || usage(format!("bad grid point `{pair}` (expected nPxnQ)"));
            let (p, q) = pair.trim().split_once(['x', 'X']).ok_or_else(bad)?;
            Ok((p.trim().parse().map_err(|_| bad())?, q.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

fn parse_methods(s: &str) -> Result<Vec<Method>> {
    s.split(',').map(|m| m.parse().map_err(CliError::from)).collect()
}

fn ici_config(s: &FitSettings) -> Result<IciConfig<f64>> {
    let width = match s.width.trim() {
        "theoretical" => WidthConstant::Theoretical,
        w => WidthConstant::Fixed(w.parse().map_err(|_| usage(format!("bad width `{w}`")))?),
    };
    let cfg = IciConfig {
        width,
        start_level: s.start_level,
        cap_level: s.cap_level,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a CSV in the dataset layout. The `origin` column is used when
/// present; otherwise every row is a target row.
fn load(path: &Path, label: &str) -> Result<Dataset<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let has_origin = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .iter()
        .any(|h| h.trim() == "origin");
    Ok(load_dataset(path, label, has_origin.then_some("origin"))?)
}

fn write_dataset(data: &Dataset<f64>, path: &Path) -> Result<()> {
    if path == Path::new("-") {
        let stdout = std::io::stdout();
        data.write_csv_to(stdout.lock())?;
        Ok(())
    } else {
        Ok(data.write_csv(path)?)
    }
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let spec = build_spec(&a.spec)?;
    let source = sample_synthetic::<f64>(&spec, Role::Source, a.n_source, a.seed)?;
    let target = sample_synthetic::<f64>(&spec, Role::Target, a.n_target, a.seed)?;
    write_dataset(&source.concat(&target)?, &a.output)
}

pub fn split(a: &SplitArgs) -> Result<()> {
    let rule = SplitRule::new(parse_indices(&a.features)?, a.threshold, a.accept_prob)?;
    let raw: Dataset<f64> = load_dataset(&a.input, &a.label, None)?;
    let data = normalize_features(&raw)?;
    let (source, target) = threshold_split(&data, &rule, a.seed)?;
    source.write_csv(&a.source_out)?;
    target.write_csv(&a.target_out)?;
    println!("source={} target={}", source.len(), target.len());
    Ok(())
}

fn base_config(settings: &FitSettings, data: DataSource) -> Result<BenchConfig> {
    let mut cfg = BenchConfig::new(data);
    cfg.tree_kind = settings.tree.parse::<TreeKind>()?;
    cfg.ici = ici_config(settings)?;
    cfg.folds = settings.folds;
    cfg.seed = settings.seed;
    Ok(cfg)
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let method: Method = a.method.parse()?;
    let train = load(&a.train, &a.label)?;
    let test = load(&a.test, &a.label)?;
    if train.dim() != test.dim() {
        return Err(CliError::Data(format!(
            "train has {} features, test has {}",
            train.dim(),
            test.dim()
        )));
    }
    // the data source is unused by a single fit
    let cfg = base_config(&a.settings, DataSource::Synthetic(SyntheticSpec::power_line(0.0)?))?;
    let (predictions, level) = fit_predict(&cfg, method, &train, &test, a.settings.seed)?;
    let risk = empirical_risk(&predictions, &test.labels())?;
    if let Some(path) = &a.predictions {
        let mut w = BufWriter::new(File::create(path).map_err(|e| io_error(path, e))?);
        for p in &predictions {
            writeln!(w, "{p}").map_err(|e| io_error(path, e))?;
        }
        w.flush().map_err(|e| io_error(path, e))?;
    }
    let level = level.map_or_else(|| "-".to_string(), |l| l.to_string());
    println!("method={} risk={risk:.6} n_train={} n_test={} level={level}", method.name(), train.len(), test.len());
    Ok(())
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let data = match &a.data {
        Some(path) => {
            let features = a
                .features
                .as_deref()
                .ok_or_else(|| usage("--data needs --features for the split rule"))?;
            DataSource::Csv {
                path: path.clone(),
                label_column: a.label.clone(),
                rule: SplitRule::new(parse_indices(features)?, a.threshold, a.accept_prob)?,
            }
        }
        None => DataSource::Synthetic(build_spec(&a.spec)?),
    };
    let mut cfg = base_config(&a.settings, data)?;
    cfg.methods = parse_methods(&a.methods)?;
    cfg.grid = parse_grid(&a.grid)?;
    cfg.repetitions = a.repetitions;
    cfg.test_size = a.test_size;
    cfg.timing = a.timing;
    cfg.validate()?;
    let axis: PlotAxis = a.plot_x.parse()?;

    let result = run_benchmark(&cfg)?;
    std::fs::create_dir_all(&a.output_dir).map_err(|e| io_error(&a.output_dir, e))?;
    emit_csv(&result, a.output_dir.join("bench.csv"))?;
    emit_plot(&result, axis, a.output_dir.join("bench.svg"))?;
    for series in summarize(&result, axis) {
        for p in &series.points {
            println!("{} x={} mean={:.4} se={:.4}", series.method.name(), p.0, p.1, p.2);
        }
    }
    Ok(())
}

fn analytic_pair(spec: &SyntheticSpec) -> Result<(Box<dyn Measure>, Box<dyn Measure>)> {
    Ok(match spec.family {
        Family::DistancePower | Family::PowerLine => (
            Box::new(DistancePower::new(spec.dim, spec.singular_dim, spec.strength)?),
            Box::new(Uniform { dim: spec.dim }),
        ),
        Family::NonDoubling => {
            let pair = NonDoublingPair::new(spec.strength)?;
            (Box::new(pair.source()), Box::new(pair.target()))
        }
    })
}

pub fn exponent(a: &ExponentArgs) -> Result<()> {
    if a.from >= a.to {
        return Err(usage("--from must be smaller than --to"));
    }
    let levels: Vec<u32> = (a.from..=a.to).collect();
    let radii = dyadic_radii(a.from, a.to);
    let values = match (&a.source, &a.target) {
        (Some(s), Some(t)) => {
            let source = load(s, &a.label)?;
            let target = load(t, &a.label)?;
            match a.estimator.as_str() {
                "phi" => phi_integrated(&source, &target, &radii)?,
                "lambda-occupied" => levels
                    .iter()
                    .map(|&l| lambda_occupied_cells(&source, &target, l, Some(0.5)))
                    .collect::<covshift::Result<_>>()?,
                "lambda-ambient" => return Err(usage("lambda-ambient needs an analytic spec")),
                e => return Err(usage(format!("unknown estimator `{e}`"))),
            }
        }
        _ => {
            let spec = build_spec(&a.spec)?;
            let (p, q) = analytic_pair(&spec)?;
            match a.estimator.as_str() {
                "phi" => phi_integrated_analytic(p.as_ref(), q.as_ref(), &radii, a.n_mc, a.seed)?,
                "lambda-occupied" => levels
                    .iter()
                    .map(|&l| lambda_occupied_cells_analytic(p.as_ref(), q.as_ref(), l))
                    .collect::<covshift::Result<_>>()?,
                "lambda-ambient" => levels
                    .iter()
                    .map(|&l| lambda_dyadic_ambient(p.as_ref(), q.as_ref(), l))
                    .collect::<covshift::Result<_>>()?,
                e => return Err(usage(format!("unknown estimator `{e}`"))),
            }
        }
    };
    let curve = ExponentCurve::fit(radii, values)?;
    if a.output == Path::new("-") {
        curve.write_csv(std::io::stdout().lock())?;
        eprintln!("{}", curve.summary());
    } else {
        let file = File::create(&a.output).map_err(|e| io_error(&a.output, e))?;
        curve.write_csv(BufWriter::new(file))?;
        println!("{}", curve.summary());
    }
    Ok(())
}
