//! `mpfbm` — batch experiment runner for the mpfBm numerical laboratory.
//!
//! Every subcommand resolves a flat experiment configuration (TOML or JSON
//! file, overridden by command-line flags), derives a deterministic hash of
//! the resolved configuration, and writes its artifacts under
//! `<output_dir>/<subcommand>/<hash>/` together with a `manifest.json`.
//!
//! Exit codes: 0 — all checks passed; 1 — a numerical assertion failed (the
//! failing check is named on stderr); 2 — configuration error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand::Rng;
use serde::{Deserialize, Serialize};

use mpfbm::geometry::{self, HurstParam, Point};
use mpfbm::rng::stream_rng;
use mpfbm::{entropy, field, lil, rkhs, smallball, spectral, stats};

const ARTIFACT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Flat experiment configuration. Subcommands read the fields they need and
/// ignore the rest; every field can come from the config file or a flag.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExperimentConfig {
    h: Option<f64>,
    nu: Option<usize>,
    grid_n: Option<usize>,
    grid_m: Option<usize>,
    replicates: Option<usize>,
    corner: Option<f64>,
    count: Option<usize>,
    r_list: Option<Vec<f64>>,
    eps_list: Option<Vec<f64>>,
    quantiles: Option<Vec<f64>>,
    rho_list: Option<Vec<f64>>,
    ks: Option<Vec<u32>>,
    location: Option<Vec<f64>>,
    metric: Option<String>,
    eta: Option<f64>,
    k_count: Option<usize>,
    n_spectral: Option<usize>,
    alpha: Option<f64>,
    mc_samples: Option<usize>,
    level: Option<u32>,
    phi_norm: Option<f64>,
    tolerance: Option<f64>,
    master_seed: Option<u64>,
    output_dir: Option<String>,
    workers: Option<usize>,
}

impl ExperimentConfig {
    /// File values overlaid with CLI values; CLI wins.
    fn merged(file: ExperimentConfig, cli: ExperimentConfig) -> ExperimentConfig {
        macro_rules! pick {
            ($($f:ident),*) => {
                ExperimentConfig { $($f: cli.$f.or(file.$f)),* }
            };
        }
        pick!(
            h, nu, grid_n, grid_m, replicates, corner, count, r_list, eps_list, quantiles,
            rho_list, ks, location, metric, eta, k_count, n_spectral, alpha, mc_samples, level,
            phi_norm, tolerance, master_seed, output_dir, workers
        )
    }

    /// Copy with the execution-only fields cleared; this is what gets hashed
    /// and recorded, so results are addressed by the numerical inputs alone.
    fn hashable(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.output_dir = None;
        c.workers = None;
        c
    }
}

#[derive(Parser, Debug)]
#[command(name = "mpfbm", version, about = "mpfBm numerical laboratory batch runner")]
struct Cli {
    /// Config file (TOML or JSON); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    h: Option<f64>,
    #[arg(long, global = true)]
    nu: Option<usize>,
    #[arg(long, global = true)]
    grid_n: Option<usize>,
    #[arg(long, global = true)]
    grid_m: Option<usize>,
    #[arg(long, global = true)]
    replicates: Option<usize>,
    #[arg(long, global = true)]
    corner: Option<f64>,
    #[arg(long, global = true)]
    count: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    r_list: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    eps_list: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    quantiles: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    rho_list: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    ks: Option<Vec<u32>>,
    /// Ball/expansion center; omit for the origin.
    #[arg(long, global = true, value_delimiter = ',')]
    location: Option<Vec<f64>>,
    /// Covering metric: "lambda" or "euclid".
    #[arg(long, global = true)]
    metric: Option<String>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    k_count: Option<usize>,
    #[arg(long, global = true)]
    n_spectral: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    mc_samples: Option<usize>,
    #[arg(long, global = true)]
    level: Option<u32>,
    #[arg(long, global = true)]
    phi_norm: Option<f64>,
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[arg(long, global = true)]
    master_seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<String>,
    /// Rayon worker threads; results are identical for any value.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Randomized covariance-kernel identity checks.
    KernelEval,
    /// Covering numbers, entropy slope, and the metric-comparison example.
    Entropy,
    /// Exact Gaussian field simulation on a grid; per-replicate CSV paths.
    Simulate,
    /// Small-ball probability estimates and scaling fits.
    Smallball,
    /// Stable-sandbox spectral representation and truncation checks.
    SpectralVerify,
    /// Decay-function table and modulus tables with exact structure checks.
    Modulus,
    /// Kernel-span element export, reproducing-property and Hölder checks.
    RkhsCheck,
    /// Chung-type lower-modulus sweep across dyadic scales.
    Lil,
    /// Functional sweep toward a target element of the unit ball.
    Flil,
    /// Hölder-exponent estimation at the origin or an interior point.
    Holder,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::KernelEval => "kernel-eval",
            Command::Entropy => "entropy",
            Command::Simulate => "simulate",
            Command::Smallball => "smallball",
            Command::SpectralVerify => "spectral-verify",
            Command::Modulus => "modulus",
            Command::RkhsCheck => "rkhs-check",
            Command::Lil => "lil",
            Command::Flil => "flil",
            Command::Holder => "holder",
        }
    }
}

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum CliError {
    /// Bad inputs, unreadable config, I/O trouble: exit 2.
    Config(String),
    /// A numerical check failed: exit 1.
    Assertion(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Assertion(m) => write!(f, "check failed: {m}"),
        }
    }
}

macro_rules! config_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Config(e.to_string())
            }
        }
    )*};
}
config_from!(
    std::io::Error,
    geometry::GeometryError,
    entropy::EntropyError,
    field::FieldError,
    smallball::SmallBallError,
    spectral::SpectralError,
    rkhs::RkhsError,
    lil::LilError,
    stats::StatsError,
    serde_json::Error
);

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn json_line(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// One pass/fail record; mirrors the library's check report shape.
fn check(name: &str, lhs: f64, rhs: f64, tol: f64, inputs: serde_json::Value) -> spectral::CheckReport {
    spectral::CheckReport {
        check: name.to_string(),
        inputs,
        lhs,
        rhs,
        tolerance: tol,
        pass: (lhs - rhs).abs() <= tol,
    }
}

fn collect_failures(checks: &[spectral::CheckReport]) -> Vec<String> {
    checks.iter().filter(|c| !c.pass).map(|c| c.check.clone()).collect()
}

fn random_point(rng: &mut impl Rng, nu: usize, lo: f64, hi: f64) -> Point {
    Point::new((0..nu).map(|_| rng.gen_range(lo..hi)).collect()).expect("coords in range")
}

fn resolve_location(cfg: &ExperimentConfig, nu: usize) -> Result<Option<Point>, CliError> {
    match &cfg.location {
        None => Ok(None),
        Some(c) if c.is_empty() => Ok(None),
        Some(c) => {
            if c.len() != nu {
                return Err(CliError::Config(format!(
                    "location has {} coordinates but nu = {nu}",
                    c.len()
                )));
            }
            if c.iter().all(|&x| x == 0.0) {
                return Ok(None);
            }
            Ok(Some(Point::new(c.clone())?))
        }
    }
}

fn quantiles_of(sorted: &[f64]) -> serde_json::Value {
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    serde_json::json!({
        "q05": q(0.05), "q25": q(0.25), "q50": q(0.5), "q75": q(0.75), "q95": q(0.95),
    })
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn run_kernel_eval(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, CliError> {
    let h = HurstParam::new(cfg.h.unwrap_or(0.3))?;
    let nu = cfg.nu.unwrap_or(2);
    let count = cfg.count.unwrap_or(20);
    let tol = cfg.tolerance.unwrap_or(1e-12);
    let seed = cfg.master_seed.unwrap_or(0);
    let mut rng = stream_rng(seed, 0);
    let mut checks = Vec::new();
    for i in 0..count {
        let s = random_point(&mut rng, nu, 0.05, 1.0);
        let t = random_point(&mut rng, nu, 0.05, 1.0);
        let r: f64 = rng.gen_range(0.1..1.0);
        let kst = geometry::covariance(&s, &t, h)?;
        let inputs = serde_json::json!({"i": i, "s": s.coords(), "t": t.coords()});
        checks.push(check("symmetry", kst, geometry::covariance(&t, &s, h)?, tol, inputs.clone()));
        checks.push(check(
            "diagonal_volume",
            geometry::covariance(&t, &t, h)?,
            geometry::pow_measure(geometry::rect_volume(&t), 2.0 * h.h()),
            tol,
            inputs.clone(),
        ));
        let d = geometry::dist_h(&s, &t, h)?;
        let incr_var = geometry::covariance(&s, &s, h)? + geometry::covariance(&t, &t, h)? - 2.0 * kst;
        checks.push(check("increment_variance", d * d, incr_var, tol, inputs.clone()));
        let rs = Point::new(s.coords().iter().map(|&c| r * c).collect())?;
        let rt = Point::new(t.coords().iter().map(|&c| r * c).collect())?;
        checks.push(check(
            "self_similarity",
            geometry::covariance(&rs, &rt, h)?,
            r.powf(2.0 * nu as f64 * h.h()) * kst,
            tol,
            serde_json::json!({"i": i, "r": r}),
        ));
        checks.push(check(
            "dist_is_symdiff_power",
            d,
            geometry::pow_measure(geometry::sym_diff_measure(&s, &t)?, h.h()),
            tol,
            inputs,
        ));
    }
    write_artifact(dir, "checks.json", &json_line(&serde_json::to_value(&checks)?))?;
    Ok(collect_failures(&checks))
}

fn run_entropy(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, CliError> {
    let nu = cfg.nu.unwrap_or(2);
    let m = cfg.grid_m.unwrap_or(401);
    let metric_name = cfg.metric.clone().unwrap_or_else(|| "lambda".to_string());
    // Defaults sit past the pre-asymptotic regime: coverings with a handful
    // of balls drag the fitted slope well below nu.
    let eps_list = cfg.eps_list.clone().unwrap_or_else(|| {
        vec![0.15, 0.12, 0.1, 0.08, 0.06, 0.05, 0.04, 0.03, 0.024, 0.02, 0.015, 0.012]
    });
    let tol = cfg.tolerance.unwrap_or(0.15);
    let metric: fn(&Point, &Point) -> f64 = match metric_name.as_str() {
        "lambda" => entropy::d_lambda,
        "euclid" => entropy::d_euclid,
        other => return Err(CliError::Config(format!("unknown metric {other:?}"))),
    };
    for &eps in &eps_list {
        entropy::check_grid_resolution(nu, m, metric, eps)?;
    }
    let grid = entropy::unit_grid(nu, m);
    let mut csv = String::from("epsilon,count,method,nu,metric\n");
    let mut results = Vec::new();
    for &eps in &eps_list {
        let res = entropy::covering_number(&grid, metric, eps)?;
        let _ = writeln!(csv, "{:.17e},{},greedy,{nu},{metric_name}", res.epsilon, res.count);
        results.push(res);
    }
    write_artifact(dir, "covering.csv", &csv)?;
    let slope = entropy::entropy_slope(&results)?;
    let mut checks = vec![spectral::CheckReport {
        check: "entropy_slope".into(),
        inputs: serde_json::json!({"nu": nu, "metric": metric_name, "grid_m": m}),
        lhs: slope,
        rhs: nu as f64,
        tolerance: tol * nu as f64,
        pass: (slope - nu as f64).abs() <= tol * nu as f64,
    }];
    let mut summary = serde_json::json!({"slope": slope, "nu": nu, "metric": metric_name});
    if nu >= 2 {
        // The axes example: the measure distance collapses while the
        // Euclidean distance stays bounded away from zero.
        let b = 0.5;
        let (_, _, d8, e8) = entropy::compdist_counterexample(nu, b, 8)?;
        let (_, _, d16, e16) = entropy::compdist_counterexample(nu, b, 16)?;
        checks.push(spectral::CheckReport {
            check: "metric_non_equivalence".into(),
            inputs: serde_json::json!({"b": b, "n": [8, 16]}),
            lhs: d16 / d8,
            rhs: 0.0,
            tolerance: 0.51,
            pass: d16 < 0.5 * d8 && (e16 - std::f64::consts::SQRT_2 * b).abs() < 0.01,
        });
        summary["compdist"] = serde_json::json!({
            "delta_n8": d8, "delta_n16": d16, "euclid_n8": e8, "euclid_n16": e16,
        });
    }
    summary["checks"] = serde_json::to_value(&checks)?;
    write_artifact(dir, "summary.json", &json_line(&summary))?;
    Ok(collect_failures(&checks))
}

fn run_simulate(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, CliError> {
    let h = HurstParam::new_simulable(cfg.h.unwrap_or(0.3))?;
    let nu = cfg.nu.unwrap_or(2);
    let grid_n = cfg.grid_n.unwrap_or(9);
    let corner = cfg.corner.unwrap_or(1.0);
    let replicates = cfg.replicates.unwrap_or(3);
    let seed = cfg.master_seed.unwrap_or(0);
    let grid = field::GridSpec::new(nu, grid_n, corner, true)?;
    let points = Arc::new(grid.points());
    let matrix = field::covariance_matrix(&points, h)?;
    let min_eig = field::min_eigenvalue(&matrix);
    let factor = field::factorize(&matrix)?;
    let samples = field::sample_paths(&factor, &points, Some(&grid), h, replicates, seed);
    for (i, s) in samples.iter().enumerate() {
        write_artifact(dir, &format!("sample_{i}.csv"), &field::sample_to_csv(s))?;
    }
    let checks = vec![spectral::CheckReport {
        check: "covariance_psd".into(),
        inputs: serde_json::json!({"nu": nu, "grid_n": grid_n, "h": h.h()}),
        lhs: min_eig,
        rhs: 0.0,
        tolerance: 1e-10,
        pass: min_eig >= -1e-10,
    }];
    let summary = serde_json::json!({
        "min_eigenvalue": min_eig,
        "points": points.len(),
        "replicates": replicates,
        "checks": serde_json::to_value(&checks)?,
    });
    write_artifact(dir, "summary.json", &json_line(&summary))?;
    Ok(collect_failures(&checks))
}

fn run_smallball(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, CliError> {
    let h = HurstParam::new(cfg.h.unwrap_or(0.3))?;
    let nu = cfg.nu.unwrap_or(1);
    let grid_n = cfg.grid_n.unwrap_or(24);
    let replicates = cfg.replicates.unwrap_or(4000);
    let seed = cfg.master_seed.unwrap_or(0);
    let rs = cfg
        .r_list
        .clone()
        .unwrap_or_else(|| vec![0.25, 0.35, 0.5, 0.7, 1.0]);
    // Wide quantile spread: the steep nu/h exponent compresses the epsilon
    // window, and the fit needs at least half a decade of informative span.
    let quantiles = cfg.quantiles.clone().unwrap_or_else(|| {
        vec![0.02, 0.05, 0.1, 0.2, 0.35, 0.5, 0.65, 0.8, 0.9, 0.95, 0.98]
    });
    let center = resolve_location(cfg, nu)?;
    let pool = match &center {
        None => smallball::origin_pool(h, nu, &rs, grid_n, replicates, seed)?,
        Some(c) => smallball::interior_pool(h, c, &rs, grid_n, replicates, seed)?,
    };
    let r_top = pool.rs.len() - 1;
    let eps_list = match cfg.eps_list.clone() {
        Some(e) => e,
        None => pool.quantile_epsilons(r_top, &quantiles),
    };
    let mut csv =
        String::from("r,epsilon,location,p_hat,ci_low,ci_high,replicates,grid_n\n");
    let loc_name = if center.is_none() { "origin" } else { "interior" };
    // Epsilon sweep at the largest radius (the exponent in epsilon), plus a
    // radius sweep at the median epsilon (the exponent in r).
    let eps_sweep: Vec<smallball::SmallBallEstimate> =
        eps_list.iter().map(|&e| pool.estimate(r_top, e)).collect();
    let eps_mid = eps_list[eps_list.len() / 2];
    let r_sweep: Vec<smallball::SmallBallEstimate> =
        (0..pool.rs.len()).map(|i| pool.estimate(i, eps_mid)).collect();
    for e in eps_sweep.iter().chain(&r_sweep) {
        let _ = writeln!(
            csv,
            "{:.17e},{:.17e},{loc_name},{:.17e},{:.17e},{:.17e},{},{}",
            e.r, e.epsilon, e.p_hat, e.ci_low, e.ci_high, e.replicates, e.grid_n
        );
    }
    write_artifact(dir, "estimates.csv", &csv)?;
    let min_decades = 0.5;
    let mut fits = serde_json::json!({"location": loc_name, "h": h.h(), "nu": nu});
    let mut failures = Vec::new();
    match smallball::fit_eps_exponent(&eps_sweep, min_decades) {
        Ok(f) => {
            fits["eps_exponent"] =
                serde_json::json!({"slope": f.slope, "stderr": f.stderr, "points": f.points.len()});
            if let Some(tol) = cfg.tolerance {
                let target = nu as f64 / h.h();
                if (f.slope - target).abs() > tol * target {
                    failures.push(format!(
                        "eps_exponent: slope {:.4} vs target {target:.4} (tol {tol})",
                        f.slope
                    ));
                }
            }
        }
        Err(e) => fits["eps_exponent"] = serde_json::json!({"error": e.to_string()}),
    }
    match smallball::fit_r_exponent(&r_sweep) {
        Ok(f) => {
            fits["r_exponent"] =
                serde_json::json!({"slope": f.slope, "stderr": f.stderr, "points": f.points.len()})
        }
        Err(e) => fits["r_exponent"] = serde_json::json!({"error": e.to_string()}),
    }
    write_artifact(dir, "fits.json", &json_line(&fits))?;
    Ok(failures)
}

fn run_spectral_verify(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, CliError> {
    let nu = cfg.nu.unwrap_or(2);
    let level = cfg.level.unwrap_or(2);
    let n = cfg.n_spectral.unwrap_or(1usize << (level * nu as u32));
    if n != 1usize << (level * nu as u32) {
        return Err(CliError::Config(format!(
            "n_spectral must equal 2^(level*nu) = {}, got {n}",
            1usize << (level * nu as u32)
        )));
    }
    let alpha = cfg.alpha.unwrap_or(1.2);
    let mc = cfg.mc_samples.unwrap_or(100_000);
    let seed = cfg.master_seed.unwrap_or(0);
    let count = cfg.count.unwrap_or(20);
    let tol = cfg.tolerance.unwrap_or(0.02);
    let model = spectral::SpectralModel::new(n, alpha, mc, seed)?;
    let mut rng = stream_rng(seed, 1);
    let mut fs = Vec::new();
    for _ in 0..count {
        let s = random_point(&mut rng, nu, 0.05, 1.0);
        let t = random_point(&mut rng, nu, 0.05, 1.0);
        let f = spectral::TestFunction::rect_increment(&s, &t, level)?;
        if f.h_norm() > 1e-9 {
            fs.push(f);
        }
    }
    let rep = spectral::verify_spec_rep(&model, &fs, tol)?;
    write_artifact(dir, "spec_rep.json", &json_line(&serde_json::to_value(&rep)?))?;
    let mut failures = Vec::new();
    if !rep.pass {
        failures.push(format!(
            "spec_rep: worst relative error {:.4e} exceeds {tol}",
            rep.worst_rel_err
        ));
    }
    // Truncation inequalities over random discretized increments and cutoffs.
    let grid = spectral::a1_grid(nu, level)?;
    let fm = spectral::FMachine::new(&model, &grid)?;
    let mut trunc = Vec::new();
    for _ in 0..cfg.count.unwrap_or(20) {
        let phi = &grid.phis[rng.gen_range(0..grid.phis.len())];
        let a = (10.0f64).powf(rng.gen_range(-2.0..2.0));
        let b = (10.0f64).powf(rng.gen_range(-2.0..2.0));
        let r = spectral::truncation_bounds_check(&model, &fm, phi, a, b)?;
        if !r.pass {
            failures.push(format!("truncation: a={a:.3e} b={b:.3e}"));
        }
        trunc.push(r);
    }
    write_artifact(dir, "truncation.json", &json_line(&serde_json::to_value(&trunc)?))?;
    Ok(failures)
}

fn run_modulus(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, CliError> {
    let h = cfg.h.unwrap_or(0.3);
    let nu = cfg.nu.unwrap_or(2);
    let level = cfg.level.unwrap_or(2);
    let n = cfg.n_spectral.unwrap_or(16);
    let alpha = cfg.alpha.unwrap_or(4.0 * h);
    let mc = cfg.mc_samples.unwrap_or(256);
    let seed = cfg.master_seed.unwrap_or(0);
    let eta = cfg.eta.unwrap_or(1.5);
    let k_count = cfg.k_count.unwrap_or(40);
    let model = spectral::SpectralModel::new(n, alpha, mc, seed)?;
    let grid = spectral::a1_grid(nu, level)?;
    let fm = spectral::FMachine::new(&model, &grid)?;
    let ftab = fm.table(1e-6, 1e4, 256);
    let mut csv = String::from("x,F\n");
    for (x, f) in ftab.xs.iter().zip(&ftab.fs) {
        let _ = writeln!(csv, "{x:.17e},{f:.17e}");
    }
    write_artifact(dir, "f_table.csv", &csv)?;
    let tables = spectral::build_modulus(&model, &ftab, h, nu, eta, k_count)?;
    let tables_json = serde_json::json!({
        "eta": tables.eta, "h": tables.h, "nu": tables.nu,
        "ks": tables.ks, "eps_seq": tables.eps_seq,
        "log_r_seq": tables.log_r_seq, "log_a_seq": tables.log_a_seq,
        "f_eps": tables.f_eps,
    });
    write_artifact(dir, "tables.json", &json_line(&tables_json))?;
    // Exact structure checks: the defining quantile, the node condition, the
    // coupling identity, and monotone decay of the scales.
    let mut checks = Vec::new();
    for (i, &k) in tables.ks.iter().enumerate() {
        let target = (k as f64).ln().powf(-2.0 * h / nu as f64 - 2.0 * eta);
        checks.push(check(
            "eps_quantile",
            tables.f_eps[i] / target,
            1.0,
            1e-6,
            serde_json::json!({"k": k}),
        ));
        checks.push(spectral::CheckReport {
            check: "node_condition".into(),
            inputs: serde_json::json!({"k": k}),
            lhs: tables.log_r_seq[i],
            rhs: -(k as f64),
            tolerance: 1e-12,
            pass: tables.log_r_seq[i] <= -(k as f64) + 1e-12,
        });
        if i + 1 < tables.len() {
            // a_{k+1} r_k^{nu/2} = F(eps_k)^{-1/4h}, in logs.
            let lhs = tables.log_a_seq[i + 1] + 0.5 * nu as f64 * tables.log_r_seq[i];
            let rhs = -tables.f_eps[i].ln() / (4.0 * h);
            checks.push(check("coupling_identity", lhs, rhs, 1e-9 * rhs.abs().max(1.0), serde_json::json!({"k": k})));
            checks.push(spectral::CheckReport {
                check: "scales_decreasing".into(),
                inputs: serde_json::json!({"k": k}),
                lhs: tables.log_r_seq[i + 1],
                rhs: tables.log_r_seq[i],
                tolerance: 0.0,
                pass: tables.log_r_seq[i + 1] < tables.log_r_seq[i]
                    && tables.eps_seq[i + 1] < tables.eps_seq[i],
            });
        }
    }
    write_artifact(dir, "checks.json", &json_line(&serde_json::to_value(&checks)?))?;
    Ok(collect_failures(&checks))
}

fn run_rkhs_check(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, CliError> {
    let h = HurstParam::new(cfg.h.unwrap_or(0.3))?;
    let nu = cfg.nu.unwrap_or(2);
    let count = cfg.count.unwrap_or(50);
    let seed = cfg.master_seed.unwrap_or(0);
    let tol = cfg.tolerance.unwrap_or(1e-10);
    let mut rng = stream_rng(seed, 0);
    let mut checks = Vec::new();
    let mut first_element = None;
    for i in 0..count {
        let anchors: Vec<Point> = (0..3).map(|_| random_point(&mut rng, nu, 0.05, 1.0)).collect();
        let coeffs: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = match rkhs::RkhsElement::new(anchors, coeffs, h) {
            Ok(f) => f,
            Err(_) => continue, // coincident random anchors: skip the draw
        };
        let t = random_point(&mut rng, nu, 0.05, 1.0);
        let k_t = rkhs::RkhsElement::new(vec![t.clone()], vec![1.0], h)
            .expect("single anchor is distinct");
        checks.push(check(
            "reproducing_property",
            rkhs::inner(&f, &k_t)?,
            f.evaluate(&t)?,
            tol,
            serde_json::json!({"i": i}),
        ));
        let norm2 = f.norm()?.powi(2);
        checks.push(spectral::CheckReport {
            check: "norm_nonnegative".into(),
            inputs: serde_json::json!({"i": i}),
            lhs: norm2,
            rhs: 0.0,
            tolerance: 0.0,
            pass: norm2 >= 0.0,
        });
        if first_element.is_none() {
            first_element = Some(f.to_json());
        } else {
            // Hölder continuity of span elements against the global metric
            // equivalence constant.
            let m_hat = entropy::global_upper_constant(nu, 2000, seed);
            let pairs: Vec<(Point, Point)> = (0..20)
                .map(|_| (random_point(&mut rng, nu, 0.0, 1.0), random_point(&mut rng, nu, 0.0, 1.0)))
                .collect();
            let rep = rkhs::holder_bound_check(&f, &pairs, m_hat)?;
            checks.push(spectral::CheckReport {
                check: "holder_bound".into(),
                inputs: serde_json::json!({"i": i, "m_hat": m_hat}),
                lhs: rep.violations.len() as f64,
                rhs: 0.0,
                tolerance: 0.0,
                pass: rep.pass,
            });
        }
    }
    if let Some(e) = first_element {
        write_artifact(dir, "element.json", &format!("{e}\n"))?;
    }
    write_artifact(dir, "report.json", &json_line(&serde_json::to_value(&checks)?))?;
    Ok(collect_failures(&checks))
}

fn lil_config(
    cfg: &ExperimentConfig,
) -> Result<(HurstParam, usize, Vec<u32>, usize, usize, u64), CliError> {
    let h = HurstParam::new_simulable(cfg.h.unwrap_or(0.3))?;
    let nu = cfg.nu.unwrap_or(2);
    let ks = cfg.ks.clone().unwrap_or_else(|| (2..=13).collect());
    let grid_n = cfg.grid_n.unwrap_or(33);
    let replicates = cfg.replicates.unwrap_or(200);
    let seed = cfg.master_seed.unwrap_or(0);
    Ok((h, nu, ks, grid_n, replicates, seed))
}

fn run_lil(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, CliError> {
    let (h, nu, ks, grid_n, replicates, seed) = lil_config(cfg)?;
    let sweep = lil::chung_sweep(h, nu, &ks, grid_n, replicates, seed, lil::ModulusKind::Lower, None)?;
    write_artifact(dir, "sweep.csv", &sweep.to_csv())?;
    write_artifact(dir, "summary.json", &format!("{}\n", sweep.summary_json()))?;
    let mut failures = Vec::new();
    if !sweep.liminf_proxy.iter().all(|v| v.is_finite() && *v > 0.0) {
        failures.push("liminf_positive: a replicate produced a non-positive proxy".into());
    }
    if replicates >= 100 {
        let mut sorted = sweep.liminf_proxy.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        if !(1e-2..=1e2).contains(&median) {
            failures.push(format!("liminf_median: {median:.4e} outside [1e-2, 1e2]"));
        }
    }
    Ok(failures)
}

fn run_flil(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, CliError> {
    let (h, nu, ks, grid_n, replicates, seed) = lil_config(cfg)?;
    let phi_norm = cfg.phi_norm.unwrap_or(0.5);
    let phi = if phi_norm == 0.0 {
        rkhs::RkhsElement::zero(h, nu)
    } else {
        let a = Point::new(vec![0.3; nu])?;
        let b = Point::new(vec![0.7; nu])?;
        rkhs::RkhsElement::new(vec![a, b], vec![1.0, -0.5], h)?.with_norm(phi_norm)?
    };
    let sweep = lil::flil_sweep(
        h, nu, &phi, &ks, grid_n, replicates, seed, lil::ModulusKind::Lower, None,
    )?;
    let mut csv = String::from("replicate,k,r,stat\n");
    for (rep, stats) in sweep.stats.iter().enumerate() {
        for (i, (&k, &r)) in sweep.ks.iter().zip(&sweep.scales).enumerate() {
            let _ = writeln!(csv, "{rep},{k},{r:.17e},{:.17e}", stats[i]);
        }
    }
    write_artifact(dir, "sweep.csv", &csv)?;
    let mut sorted = sweep.liminf_proxy.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let summary = serde_json::json!({
        "phi_norm": sweep.phi_norm,
        "replicates": sweep.liminf_proxy.len(),
        "liminf_proxy_quantiles": quantiles_of(&sorted),
    });
    write_artifact(dir, "summary.json", &json_line(&summary))?;
    let mut failures = Vec::new();
    if !sweep
        .stats
        .iter()
        .all(|row| row.iter().all(|v| v.is_finite() && *v >= 0.0))
    {
        failures.push("flil_stats_finite: non-finite or negative deviation statistic".into());
    }
    Ok(failures)
}

fn run_holder(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>, CliError> {
    let h = HurstParam::new_simulable(cfg.h.unwrap_or(0.25))?;
    let nu = cfg.nu.unwrap_or(2);
    let grid_n = cfg.grid_n.unwrap_or(33);
    let replicates = cfg.replicates.unwrap_or(150);
    let seed = cfg.master_seed.unwrap_or(0);
    let rhos = cfg
        .rho_list
        .clone()
        .unwrap_or_else(|| (0..6).map(|i| 0.15 * (2.0f64).powi(-i)).collect());
    let location = resolve_location(cfg, nu)?.unwrap_or_else(|| Point::origin(nu));
    let precheck = lil::holder_metric_precheck(h, nu, &rhos)?;
    let target = nu as f64 * h.h();
    let mut checks = vec![spectral::CheckReport {
        check: "metric_precheck".into(),
        inputs: serde_json::json!({"nu": nu, "h": h.h()}),
        lhs: precheck,
        rhs: target,
        tolerance: 0.02 * target,
        pass: (precheck - target).abs() <= 0.02 * target,
    }];
    let est = lil::holder_exponents(h, nu, &location, &rhos, grid_n, replicates, seed)?;
    checks.push(spectral::CheckReport {
        check: "exponents_in_range".into(),
        inputs: serde_json::json!({"location": location.coords()}),
        lhs: est.exponent_pointwise,
        rhs: est.exponent_local,
        tolerance: 0.0,
        pass: (0.0..2.0).contains(&est.exponent_pointwise)
            && (0.0..2.0).contains(&est.exponent_local),
    });
    let results = serde_json::json!({
        "location": est.location,
        "exponent_pointwise": est.exponent_pointwise,
        "exponent_local": est.exponent_local,
        "rho_range": est.rho_range,
        "metric_precheck_slope": precheck,
        "checks": serde_json::to_value(&checks)?,
    });
    write_artifact(dir, "results.json", &json_line(&results))?;
    Ok(collect_failures(&checks))
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

fn load_config_file(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let is_json = path.extension().map(|e| e == "json").unwrap_or(false)
        || text.trim_start().starts_with('{');
    if is_json {
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("bad JSON config: {e}")))
    } else {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("bad TOML config: {e}")))
    }
}

fn cli_overrides(cli: &Cli) -> ExperimentConfig {
    ExperimentConfig {
        h: cli.h,
        nu: cli.nu,
        grid_n: cli.grid_n,
        grid_m: cli.grid_m,
        replicates: cli.replicates,
        corner: cli.corner,
        count: cli.count,
        r_list: cli.r_list.clone(),
        eps_list: cli.eps_list.clone(),
        quantiles: cli.quantiles.clone(),
        rho_list: cli.rho_list.clone(),
        ks: cli.ks.clone(),
        location: cli.location.clone(),
        metric: cli.metric.clone(),
        eta: cli.eta,
        k_count: cli.k_count,
        n_spectral: cli.n_spectral,
        alpha: cli.alpha,
        mc_samples: cli.mc_samples,
        level: cli.level,
        phi_norm: cli.phi_norm,
        tolerance: cli.tolerance,
        master_seed: cli.master_seed,
        output_dir: cli.output_dir.clone(),
        workers: cli.workers,
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let file_cfg = match &cli.config {
        Some(p) => load_config_file(p)?,
        None => ExperimentConfig::default(),
    };
    let cfg = ExperimentConfig::merged(file_cfg, cli_overrides(cli));
    if cfg.replicates == Some(0) {
        return Err(CliError::Config("replicates must be positive".into()));
    }
    if let Some(w) = cfg.workers {
        if w == 0 {
            return Err(CliError::Config("workers must be positive".into()));
        }
        // Ignored when a global pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let name = cli.command.name();
    let hashed = cfg.hashable();
    let hash_input = format!("{name}\n{}", serde_json::to_string(&hashed)?);
    let hash = format!("{:016x}", fnv1a64(hash_input.as_bytes()));
    let dir = PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| "out".into()))
        .join(name)
        .join(&hash);
    fs::create_dir_all(&dir)?;
    let manifest = serde_json::json!({
        "subcommand": name,
        "artifact_version": ARTIFACT_VERSION,
        "config": serde_json::to_value(&hashed)?,
        "config_hash": hash,
    });
    write_artifact(&dir, "manifest.json", &json_line(&manifest))?;
    let failures = match cli.command {
        Command::KernelEval => run_kernel_eval(&cfg, &dir)?,
        Command::Entropy => run_entropy(&cfg, &dir)?,
        Command::Simulate => run_simulate(&cfg, &dir)?,
        Command::Smallball => run_smallball(&cfg, &dir)?,
        Command::SpectralVerify => run_spectral_verify(&cfg, &dir)?,
        Command::Modulus => run_modulus(&cfg, &dir)?,
        Command::RkhsCheck => run_rkhs_check(&cfg, &dir)?,
        Command::Lil => run_lil(&cfg, &dir)?,
        Command::Flil => run_flil(&cfg, &dir)?,
        Command::Holder => run_holder(&cfg, &dir)?,
    };
    println!("{name}: artifacts in {}", dir.display());
    if failures.is_empty() {
        println!("{name}: all checks passed");
        Ok(())
    } else {
        Err(CliError::Assertion(format!("{name}: {}", failures.join("; "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Assertion(_)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e @ CliError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
