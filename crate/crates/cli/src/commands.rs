use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use pltanh_core::gradcheck::{activation_suite, check_activation_with, check_architecture, CheckReport};
use pltanh_core::train::{alpha_sweep, run_experiment};
use pltanh_core::{ActivationKind, Architecture, FoldMetrics};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::datasets;
use crate::error::CliError;
use crate::results::{append_json, sidecar_path, CsvAppender, ResultRow, HEADER};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub subset: Option<usize>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig, CliError> {
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(n) = self.subset {
            cfg.subset = Some(n);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// What the JSON sidecar records for each row.
#[derive(Debug, Serialize)]
struct Provenance<'a> {
    command: &'static str,
    row: &'a ResultRow,
    best: Option<bool>,
    folds: &'a [FoldMetrics],
    losses: &'a [Vec<f64>],
    config: &'a ExperimentConfig,
}

/// Trains every configured activation in turn, appending one row per
/// activation to `cfg.out` and its sidecar as soon as it finishes.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, CliError> {
    let kinds = cfg.activation_kinds()?;
    let dataset = datasets::load(cfg)?;
    info!("{}: {} samples, {} classes", cfg.dataset_label(), dataset.len(), dataset.classes);
    let mut table = CsvAppender::open(&cfg.out, &HEADER)?;
    let sidecar = sidecar_path(&cfg.out);
    let mut rows = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let result = run_experiment(&cfg.train_config(kind)?, &dataset)?;
        let row = ResultRow::new(&cfg.dataset_label(), kind, cfg.seed, &result);
        info!("{kind}: accuracy {:.4} in {:.1}s", row.accuracy, row.seconds);
        table.append(&row.to_record())?;
        append_json(
            &sidecar,
            &Provenance {
                command: "run",
                row: &row,
                best: None,
                folds: &result.report.folds,
                losses: &result.losses,
                config: cfg,
            },
        )?;
        rows.push(row);
    }
    Ok(rows)
}

/// Header of the sweep table: the results schema plus a `best` flag.
pub fn sweep_header() -> Vec<&'static str> {
    HEADER.iter().copied().chain(["best"]).collect()
}

/// Where `sweep` writes when `--out` is not given: `results.csv` becomes
/// `results-sweep.csv`.
pub fn default_sweep_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    out.with_file_name(format!("{stem}-sweep.csv"))
}

/// Splits a comma separated list of slopes. An empty list is a usage error.
pub fn parse_alphas(list: &str) -> Result<Vec<f64>, CliError> {
    let alphas = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| CliError::Usage(format!("alpha {s:?}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if alphas.is_empty() {
        return Err(CliError::Usage("alpha list is empty".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(CliError::Usage(format!("alpha {a} must be finite and non-negative")));
    }
    Ok(alphas)
}

/// Sweeps the slope of the first configured activation that has one. Returns
/// the rows and the index of the best.
pub fn sweep(cfg: &ExperimentConfig, alphas: &[f64], out: &Path) -> Result<(Vec<ResultRow>, usize), CliError> {
    if alphas.is_empty() {
        return Err(CliError::Usage("alpha list is empty".into()));
    }
    let kind = cfg
        .activation_kinds()?
        .into_iter()
        .find(|k| k.alpha().is_some())
        .ok_or_else(|| CliError::Config("no configured activation has an alpha to sweep".into()))?;
    let dataset = datasets::load(cfg)?;
    let header = sweep_header();
    let mut table = CsvAppender::open(out, &header)?;
    let sweep = alpha_sweep(&cfg.train_config(kind)?, &dataset, alphas)?;
    let sidecar = sidecar_path(out);
    let mut rows = Vec::with_capacity(sweep.rows.len());
    for (i, (alpha, result)) in sweep.rows.iter().enumerate() {
        let row = ResultRow::new(&cfg.dataset_label(), kind.with_alpha(*alpha), cfg.seed, result);
        let best = i == sweep.best;
        let mut record = row.to_record();
        record.push(best.to_string());
        table.append(&record)?;
        append_json(
            &sidecar,
            &Provenance {
                command: "sweep",
                row: &row,
                best: Some(best),
                folds: &result.report.folds,
                losses: &result.losses,
                config: cfg,
            },
        )?;
        rows.push(row);
    }
    info!("best alpha {}", alphas[sweep.best]);
    Ok((rows, sweep.best))
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    /// Random points per activation.
    pub points: usize,
    /// Slopes for the activation suite.
    pub alphas: Vec<f64>,
    /// Slope used inside the toy networks.
    pub network_alpha: f64,
    /// Checked coordinates per parameter tensor; `None` checks all.
    pub coords: Option<usize>,
    pub networks: bool,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            points: 1000,
            alphas: vec![1e-9, 0.01, 0.4],
            network_alpha: 0.01,
            coords: None,
            networks: true,
            seed: 0,
        }
    }
}

/// Activation suite then every activation in every toy architecture.
/// `derivative` stands in for the analytic activation derivative.
pub fn gradcheck_with(
    opts: &GradcheckOptions,
    derivative: &dyn Fn(&ActivationKind, f64) -> f64,
    mut report: impl FnMut(&CheckReport),
) -> Result<Vec<CheckReport>, CliError> {
    let mut all = Vec::new();
    for (i, kind) in activation_suite(&opts.alphas).into_iter().enumerate() {
        let r = check_activation_with(kind, |x| derivative(&kind, x), opts.points, opts.seed.wrapping_add(i as u64));
        report(&r);
        all.push(r);
    }
    if opts.networks {
        for arch in Architecture::ALL {
            for (i, kind) in ActivationKind::all(opts.network_alpha).into_iter().enumerate() {
                let r = check_architecture(arch, kind, opts.seed.wrapping_add(i as u64), opts.coords)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                report(&r);
                all.push(r);
            }
        }
    }
    Ok(all)
}

/// One line per check.
pub fn format_check(r: &CheckReport) -> String {
    format!(
        "{} {:<28} worst {:.3e} (tolerance {:.0e}) at {}; {} checked, {} skipped",
        if r.passed() { "PASS" } else { "FAIL" },
        r.name,
        r.worst_relative_error,
        r.tolerance,
        r.worst_at,
        r.checked,
        r.skipped
    )
}

/// Prints every check and fails if any did.
pub fn gradcheck(opts: &GradcheckOptions, out: &mut impl Write) -> Result<Vec<CheckReport>, CliError> {
    let mut io_error = None;
    let reports = gradcheck_with(opts, &|k, x| k.derivative(x), |r| {
        if let Err(e) = writeln!(out, "{}", format_check(r)) {
            io_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_error {
        return Err(CliError::output("stdout", e));
    }
    match reports.iter().filter(|r| !r.passed()).count() {
        0 => Ok(reports),
        n => Err(CliError::GradCheck(n)),
    }
}

/// Samples `(x, f(x), f'(x))` at `samples` evenly spaced points of `[lo, hi]`.
pub fn activation_table(kind: ActivationKind, lo: f64, hi: f64, samples: usize) -> Result<Vec<[f64; 3]>, CliError> {
    kind.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if samples < 2 {
        return Err(CliError::Usage(format!("need at least 2 samples, got {samples}")));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(CliError::Usage(format!("bad range [{lo}, {hi}]")));
    }
    let step = (hi - lo) / (samples - 1) as f64;
    Ok((0..samples)
        .map(|i| {
            let x = if i == samples - 1 { hi } else { lo + step * i as f64 };
            [x, kind.forward(x), kind.derivative(x)]
        })
        .collect())
}

/// Writes the table as `x,f,df` CSV.
pub fn write_activation_table(rows: &[[f64; 3]], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "f", "df"])?;
    for r in rows {
        w.write_record(r.map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
