//! Benchmark harness: runs reconstruction methods over a ladder of
//! training-set sizes, selects hyperparameters on each size's validation
//! split, evaluates every method on one shared test set, and renders the
//! report as CSV plus a PSNR-versus-size plot.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use tomo_autodiff::network::NetworkConfig;
use tomo_core::dataset::{generate_pair, DataPair, DatasetProfile, Split};
use tomo_core::fbp::{fbp_reconstruct, FbpFilter, FilterKind};
use tomo_core::geometry::{Image, ParallelGeometry};
use tomo_core::metrics::{psnr, ssim};
use tomo_core::noise::NoiseModel;
use tomo_core::variational::{select_alpha, tv_reconstruct, Discrepancy, Metric, TvConfig};

use crate::dip::{dip_reconstruct, dip_with_initial, diptv_reconstruct, DipConfig};
use crate::error::{ReconError, Result};
use crate::plot::{render_plot, Series};
use crate::postproc::{apply_postprocessor, train_postprocessor, TrainConfig};

/// Training/validation ladder used for the ellipse benchmark
/// (0.1% .. 100% of the full 32000-pair corpus).
pub const ELLIPSES_SIZE_LADDER: [(usize, usize); 10] = [
    (32, 3),
    (64, 6),
    (160, 16),
    (320, 32),
    (640, 64),
    (1600, 160),
    (3200, 320),
    (8000, 800),
    (16000, 1600),
    (32000, 3200),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum MethodSpec {
    /// Filtered back-projection; filter and cutoff searched on validation.
    Fbp { filters: Vec<FbpFilter> },
    /// TV-regularized inversion; the weight is searched on validation.
    Tv { alphas: Vec<f64>, iterations: usize },
    /// Plain deep image prior (data-free, early-stopped by budget).
    Dip { net: NetworkConfig, lr: f64, iterations: usize, seed: u64 },
    /// DIP with TV; the weight is searched on validation.
    DipTv { net: NetworkConfig, lr: f64, iterations: usize, alphas: Vec<f64>, seed: u64 },
    /// DIP warm-started from a TV reconstruction.
    DipInit {
        net: NetworkConfig,
        lr: f64,
        init_iterations: usize,
        iterations: usize,
        alpha: f64,
        tv_alpha: f64,
        tv_iterations: usize,
        seed: u64,
    },
    /// Learned FBP post-processing (the one data-dependent method here).
    FbpUnet {
        net: NetworkConfig,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        filter: FbpFilter,
        seed: u64,
    },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Fbp { .. } => "fbp",
            MethodSpec::Tv { .. } => "tv",
            MethodSpec::Dip { .. } => "dip",
            MethodSpec::DipTv { .. } => "diptv",
            MethodSpec::DipInit { .. } => "dip-init",
            MethodSpec::FbpUnet { .. } => "fbp-unet",
        }
    }

    pub fn is_data_free(&self) -> bool {
        !matches!(self, MethodSpec::FbpUnet { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub profile: DatasetProfile,
    /// (n_train, n_val) ladder entries for data-dependent methods.
    pub sizes: Vec<(usize, usize)>,
    pub methods: Vec<MethodSpec>,
    pub n_test_samples: usize,
    pub seed: u64,
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(ReconError::Config("benchmark needs at least one method".into()));
        }
        if self.sizes.iter().any(|&(t, v)| t == 0 || v == 0) {
            return Err(ReconError::Config("ladder sizes must be positive".into()));
        }
        if self.sizes.is_empty() {
            return Err(ReconError::Config("benchmark needs at least one size".into()));
        }
        if self.n_test_samples == 0 {
            return Err(ReconError::Config("n_test_samples must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    /// 0 marks a data-free (size-independent) row.
    pub train_size: usize,
    pub mean_psnr: f64,
    pub std_psnr: f64,
    pub mean_ssim: f64,
    pub std_ssim: f64,
    pub seconds_per_recon: f64,
    pub hyperparams: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<ReportRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

struct EvalOutcome {
    mean_psnr: f64,
    std_psnr: f64,
    mean_ssim: f64,
    std_ssim: f64,
    seconds_per_recon: f64,
}

fn evaluate<F>(test: &[DataPair], mut reconstruct: F) -> Result<EvalOutcome>
where
    F: FnMut(&DataPair) -> Result<Image>,
{
    let mut psnrs = Vec::with_capacity(test.len());
    let mut ssims = Vec::with_capacity(test.len());
    let t0 = Instant::now();
    for pair in test {
        let rec = reconstruct(pair)?;
        psnrs.push(psnr(&rec, &pair.ground_truth)?);
        ssims.push(ssim(&rec, &pair.ground_truth)?);
    }
    let wall = t0.elapsed().as_secs_f64() / test.len() as f64;
    let (mp, sp) = mean_std(&psnrs);
    let (ms, ss) = mean_std(&ssims);
    Ok(EvalOutcome {
        mean_psnr: mp,
        std_psnr: sp,
        mean_ssim: ms,
        std_ssim: ss,
        seconds_per_recon: wall,
    })
}

fn gen_split(
    geom: &ParallelGeometry,
    noise: &NoiseModel,
    seed: u64,
    split: Split,
    n: usize,
) -> Result<Vec<DataPair>> {
    (0..n)
        .map(|i| {
            generate_pair(geom, noise, seed, tomo_core::dataset::DEFAULT_MAX_ELLIPSES, split, i)
                .map_err(ReconError::from)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    /// Measure wall time per reconstruction. Disable for byte-reproducible
    /// reports (the seconds column is then written as 0).
    pub measure_timing: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { measure_timing: true }
    }
}

/// Run every benchmark cell. Data-free methods are tuned on the first
/// size's validation split and contribute one size-independent row; the
/// learned method contributes one row per ladder size. All rows share the
/// same `n_test_samples` test pairs.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkReport> {
    run_benchmark_with(spec, &BenchOptions::default())
}

pub fn run_benchmark_with(spec: &BenchmarkSpec, opts: &BenchOptions) -> Result<BenchmarkReport> {
    spec.validate()?;
    let geom = spec.profile.default_geometry();
    let noise = spec.profile.default_noise(&geom);
    let disc = match noise {
        NoiseModel::Poisson { photons_per_pixel, mu_max } => {
            Discrepancy::Poisson { photons_per_pixel, mu_max }
        }
        _ => Discrepancy::L2,
    };
    let test = gen_split(&geom, &noise, spec.seed, Split::Test, spec.n_test_samples)?;
    let first_val = gen_split(&geom, &noise, spec.seed, Split::Validation, spec.sizes[0].1)?;

    let mut report = BenchmarkReport::default();
    for method in &spec.methods {
        log::info!("benchmark: running method '{}'", method.name());
        match method {
            MethodSpec::Fbp { filters } => {
                let filter = select_fbp_filter(filters, &first_val, &geom)?;
                let out = evaluate(&test, |pair| {
                    Ok(fbp_reconstruct(&pair.observation, &geom, &filter)?)
                })?;
                report.rows.push(row(method.name(), 0, &out, format!(
                    "filter={} scaling={}",
                    filter.kind.name(),
                    filter.frequency_scaling
                )));
            }
            MethodSpec::Tv { alphas, iterations } => {
                let (alpha, _) = select_alpha::<_, ReconError>(
                    alphas,
                    &first_val,
                    |obs, a| {
                        Ok(tv_reconstruct(obs, &geom, &disc, &TvConfig::new(a, *iterations))?.image)
                    },
                    Metric::Psnr,
                )?;
                let cfg = TvConfig::new(alpha, *iterations);
                let out = evaluate(&test, |pair| {
                    Ok(tv_reconstruct(&pair.observation, &geom, &disc, &cfg)?.image)
                })?;
                report.rows.push(row(
                    method.name(),
                    0,
                    &out,
                    format!("alpha={alpha} iterations={iterations}"),
                ));
            }
            MethodSpec::Dip { net, lr, iterations, seed } => {
                let mut cfg = DipConfig::new(net.clone(), *lr, *iterations, 0.0);
                cfg.discrepancy = disc;
                cfg.seed = *seed;
                let out = evaluate(&test, |pair| {
                    Ok(dip_reconstruct(&pair.observation, &geom, &cfg, None)?.image)
                })?;
                report.rows.push(row(
                    method.name(),
                    0,
                    &out,
                    format!("lr={lr} iterations={iterations}"),
                ));
            }
            MethodSpec::DipTv { net, lr, iterations, alphas, seed } => {
                let (alpha, _) = select_alpha::<_, ReconError>(
                    alphas,
                    &first_val,
                    |obs, a| {
                        let mut cfg = DipConfig::new(net.clone(), *lr, *iterations, a);
                        cfg.discrepancy = disc;
                        cfg.seed = *seed;
                        Ok(diptv_reconstruct(obs, &geom, &cfg, None)?.image)
                    },
                    Metric::Psnr,
                )?;
                let mut cfg = DipConfig::new(net.clone(), *lr, *iterations, alpha);
                cfg.discrepancy = disc;
                cfg.seed = *seed;
                let out = evaluate(&test, |pair| {
                    Ok(diptv_reconstruct(&pair.observation, &geom, &cfg, None)?.image)
                })?;
                report.rows.push(row(
                    method.name(),
                    0,
                    &out,
                    format!("alpha={alpha} lr={lr} iterations={iterations}"),
                ));
            }
            MethodSpec::DipInit {
                net,
                lr,
                init_iterations,
                iterations,
                alpha,
                tv_alpha,
                tv_iterations,
                seed,
            } => {
                let tv_cfg = TvConfig::new(*tv_alpha, *tv_iterations);
                let mut cfg = DipConfig::new(net.clone(), *lr, *iterations, *alpha);
                cfg.discrepancy = disc;
                cfg.seed = *seed;
                cfg.init_iterations = *init_iterations;
                let out = evaluate(&test, |pair| {
                    let x0 = tv_reconstruct(&pair.observation, &geom, &disc, &tv_cfg)?.image;
                    Ok(dip_with_initial(&pair.observation, &geom, &x0, &cfg, None)?.result.image)
                })?;
                report.rows.push(row(
                    method.name(),
                    0,
                    &out,
                    format!("alpha={alpha} lr={lr} init={init_iterations} radon={iterations}"),
                ));
            }
            MethodSpec::FbpUnet { net, epochs, batch_size, lr, filter, seed } => {
                for &(n_train, n_val) in &spec.sizes {
                    log::info!("benchmark: fbp-unet at train size {n_train}");
                    let ds = tomo_core::dataset::Dataset {
                        train: gen_split(&geom, &noise, spec.seed, Split::Train, n_train)?,
                        validation: gen_split(&geom, &noise, spec.seed, Split::Validation, n_val)?,
                        test: Vec::new(),
                        geometry: geom.clone(),
                        noise,
                        seed: spec.seed,
                        profile: spec.profile,
                        max_ellipses: tomo_core::dataset::DEFAULT_MAX_ELLIPSES,
                    };
                    let cfg = TrainConfig {
                        net: net.clone(),
                        epochs: *epochs,
                        batch_size: *batch_size,
                        lr: *lr,
                        seed: *seed,
                        filter: *filter,
                    };
                    let (params, _log) = train_postprocessor(&ds, &cfg)?;
                    let out = evaluate(&test, |pair| {
                        apply_postprocessor(net, &params, &pair.observation, &geom, filter)
                    })?;
                    report.rows.push(row(
                        method.name(),
                        n_train,
                        &out,
                        format!("epochs={epochs} lr={lr} batch={batch_size}"),
                    ));
                }
            }
        }
    }
    if !opts.measure_timing {
        for r in &mut report.rows {
            r.seconds_per_recon = 0.0;
        }
    }
    Ok(report)
}

fn row(method: &str, train_size: usize, out: &EvalOutcome, hyper: String) -> ReportRow {
    ReportRow {
        method: method.into(),
        train_size,
        mean_psnr: out.mean_psnr,
        std_psnr: out.std_psnr,
        mean_ssim: out.mean_ssim,
        std_ssim: out.std_ssim,
        seconds_per_recon: out.seconds_per_recon,
        hyperparams: hyper,
    }
}

/// Validation line search over FBP filters, best mean PSNR wins; ties go to
/// the earlier candidate in (kind, scaling) order.
pub fn select_fbp_filter(
    filters: &[FbpFilter],
    val: &[DataPair],
    geom: &ParallelGeometry,
) -> Result<FbpFilter> {
    if filters.is_empty() {
        return Err(ReconError::Config("fbp needs at least one filter candidate".into()));
    }
    let mut sorted = filters.to_vec();
    sorted.sort_by(|a, b| {
        (a.kind.name(), a.frequency_scaling)
            .partial_cmp(&(b.kind.name(), b.frequency_scaling))
            .unwrap()
    });
    let mut best: Option<(f64, FbpFilter)> = None;
    for f in sorted {
        let mut total = 0.0;
        for pair in val {
            let rec = fbp_reconstruct(&pair.observation, geom, &f)?;
            total += psnr(&rec, &pair.ground_truth)?;
        }
        let mean = total / val.len() as f64;
        if best.as_ref().map_or(true, |(b, _)| mean > *b) {
            best = Some((mean, f));
        }
    }
    Ok(best.unwrap().1)
}

/// Default FBP filter grid for validation search.
pub fn default_fbp_filters() -> Vec<FbpFilter> {
    let mut filters = vec![FbpFilter::ram_lak()];
    for scaling in [0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0] {
        filters.push(FbpFilter::new(FilterKind::Hann, scaling).unwrap());
    }
    filters
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "method",
    "train_size",
    "mean_psnr",
    "std_psnr",
    "mean_ssim",
    "std_ssim",
    "seconds_per_recon",
    "hyperparams",
];

/// Write the report as CSV (8 fixed columns) plus the PSNR/size plot.
pub fn render_report(report: &BenchmarkReport, csv_path: &Path, plot_path: Option<&Path>) -> Result<()> {
    if report.rows.is_empty() {
        return Err(ReconError::Config("report is empty".into()));
    }
    let mut text = String::new();
    text.push_str(&REPORT_COLUMNS.join(","));
    text.push('\n');
    for r in &report.rows {
        // hyperparams never contain commas by construction
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method,
            r.train_size,
            r.mean_psnr,
            r.std_psnr,
            r.mean_ssim,
            r.std_ssim,
            r.seconds_per_recon,
            r.hyperparams
        ));
    }
    std::fs::write(csv_path, text)?;
    if let Some(plot_path) = plot_path {
        let series = report_series(report);
        render_plot(plot_path, &series).map_err(ReconError::Format)?;
    }
    Ok(())
}

fn report_series(report: &BenchmarkReport) -> Vec<Series> {
    let mut series: Vec<Series> = Vec::new();
    for r in &report.rows {
        let entry = series.iter_mut().find(|s| s.name == r.method);
        let point = (r.train_size.max(1) as f64, r.mean_psnr);
        match entry {
            Some(s) => s.points.push(point),
            None => series.push(Series {
                name: r.method.clone(),
                points: vec![point],
                size_independent: r.train_size == 0,
            }),
        }
    }
    series
}

/// Parse a CSV produced by [`render_report`].
pub fn parse_report(csv_path: &Path) -> Result<BenchmarkReport> {
    let text = std::fs::read_to_string(csv_path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| ReconError::Format("empty csv".into()))?;
    if header != REPORT_COLUMNS.join(",") {
        return Err(ReconError::Format(format!("unexpected header '{header}'")));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(8, ',').collect();
        if parts.len() != 8 {
            return Err(ReconError::Format(format!("bad row '{line}'")));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| ReconError::Format(format!("bad number '{s}'")))
        };
        rows.push(ReportRow {
            method: parts[0].into(),
            train_size: parts[1]
                .parse()
                .map_err(|_| ReconError::Format(format!("bad size '{}'", parts[1])))?,
            mean_psnr: parse_f(parts[2])?,
            std_psnr: parse_f(parts[3])?,
            mean_ssim: parse_f(parts[4])?,
            std_ssim: parse_f(parts[5])?,
            seconds_per_recon: parse_f(parts[6])?,
            hyperparams: parts[7].into(),
        });
    }
    Ok(BenchmarkReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn spec_fbp_only() -> BenchmarkSpec {
        BenchmarkSpec {
            profile: DatasetProfile::Ellipses,
            sizes: vec![(2, 1)],
            methods: vec![MethodSpec::Fbp { filters: default_fbp_filters() }],
            n_test_samples: 2,
            seed: 3,
        }
    }

    #[test]
    fn fbp_only_benchmark_produces_one_finite_row() {
        let report = run_benchmark(&spec_fbp_only()).unwrap();
        assert_eq!(report.rows.len(), 1);
        let r = &report.rows[0];
        assert_eq!(r.method, "fbp");
        assert_eq!(r.train_size, 0);
        assert!(r.mean_psnr.is_finite());
    }

    #[test]
    fn benchmark_is_deterministic() {
        let opts = BenchOptions { measure_timing: false };
        let a = run_benchmark_with(&spec_fbp_only(), &opts).unwrap();
        let b = run_benchmark_with(&spec_fbp_only(), &opts).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn unknown_or_invalid_specs_are_rejected() {
        let mut spec = spec_fbp_only();
        spec.methods.clear();
        assert!(run_benchmark(&spec).is_err());
        let mut spec = spec_fbp_only();
        spec.n_test_samples = 0;
        assert!(run_benchmark(&spec).is_err());
    }

    #[test]
    fn report_csv_roundtrip_and_plot() {
        let report = BenchmarkReport {
            rows: vec![
                ReportRow {
                    method: "fbp".into(),
                    train_size: 0,
                    mean_psnr: 21.25,
                    std_psnr: 0.5,
                    mean_ssim: 0.71,
                    std_ssim: 0.05,
                    seconds_per_recon: 0.02,
                    hyperparams: "filter=hann scaling=0.7".into(),
                },
                ReportRow {
                    method: "fbp-unet".into(),
                    train_size: 32,
                    mean_psnr: 25.0,
                    std_psnr: 0.6,
                    mean_ssim: 0.82,
                    std_ssim: 0.04,
                    seconds_per_recon: 0.08,
                    hyperparams: "epochs=100 lr=0.001 batch=8".into(),
                },
                ReportRow {
                    method: "fbp-unet".into(),
                    train_size: 320,
                    mean_psnr: 27.5,
                    std_psnr: 0.4,
                    mean_ssim: 0.88,
                    std_ssim: 0.03,
                    seconds_per_recon: 0.08,
                    hyperparams: "epochs=100 lr=0.001 batch=8".into(),
                },
            ],
        };
        let dir = tempdir().unwrap();
        let csv = dir.path().join("report.csv");
        let png = dir.path().join("report.png");
        render_report(&report, &csv, Some(&png)).unwrap();
        // 8 fixed columns
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().next().unwrap().split(',').count(), 8);
        // round-trip
        let back = parse_report(&csv).unwrap();
        assert_eq!(back, report);
        // plot exists and is non-empty
        assert!(std::fs::metadata(&png).unwrap().len() > 0);
    }
}
