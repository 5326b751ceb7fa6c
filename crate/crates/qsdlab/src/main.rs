//! Command-line front door: sweeps, gap checks and Monte Carlo validation,
//! emitting CSV tables plus JSON run manifests.
//!
//! Exit codes: 0 on success, 1 on input or integrability errors, 2 when a
//! checked inequality fails beyond its certified error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use qsdlab::analytic::{bessel3_cdf, survival_probability};
use qsdlab::distances::DistanceKind;
use qsdlab::laws::{self, GridSpec, LawSidecar};
use qsdlab::mc::{self, McConfig};
use qsdlab::rates::{self, FunctionSpec};
use qsdlab::report::{self, RunManifest, SCHEMA_VERSION};
use qsdlab::{DriftParams, InitialMeasure, QsdError, Result};

#[derive(Parser)]
#[command(name = "qsdlab", version, about = "Quasi-stationary rate laboratory for drifted Brownian motion absorbed at 0")]
struct Cli {
    /// TOML config file; command-line flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for CSV and JSON artifacts
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Drift rate r > 0
    #[arg(long)]
    r: Option<f64>,

    /// Initial measure: dirac:x | mix:x1:w1,x2:w2,... | expdensity:rate | yaglom | file:<path>
    #[arg(long)]
    measure: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the limit law r^2 x e^{-rx} as CSV
    Yaglom {
        #[command(flatten)]
        common: Common,
    },
    /// Check the gap bound |gamma(f) - K_t mu Q_t f| <= (c_f mu(x^2) + c_f')/t
    Lemma1 {
        #[command(flatten)]
        common: Common,
        /// Test function: one-plus-x | hinge | exp-decay | y-exp-decay | indicator:a,b
        #[arg(long)]
        f: Option<String>,
        /// Comma-separated t grid
        #[arg(long)]
        t: Option<String>,
    },
    /// Sweep t -> distance(conditional law, limit law), with proof envelope
    SweepThm1 {
        #[command(flatten)]
        common: Common,
        /// w1 | tv | kolmogorov
        #[arg(long)]
        distance: Option<String>,
        #[arg(long)]
        t: Option<String>,
    },
    /// Sweep t -> W1(time-s conditional law, Q-process marginal)
    SweepThm2 {
        #[command(flatten)]
        common: Common,
        /// Intermediate time s, 0 < s < min(t)
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        t: Option<String>,
    },
    /// Evaluate the correction functional psi and the 1/t coefficient
    Psi {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        f: Option<String>,
    },
    /// Cross-validate densities and constants by seeded Monte Carlo
    McValidate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        n_paths: Option<usize>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// TOML mirror of the flag set; any field may be omitted.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    r: Option<f64>,
    measure: Option<String>,
    f: Option<String>,
    distance: Option<String>,
    t_grid: Option<Vec<f64>>,
    s: Option<f64>,
    t: Option<f64>,
    seed: Option<u64>,
    n_paths: Option<usize>,
    step: Option<f64>,
    out: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text)
                .map_err(|e| QsdError::InvalidArgument(format!("config {}: {e}", p.display())))
        }
    }
}

fn parse_measure(spec: &str, params: DriftParams) -> Result<InitialMeasure> {
    if let Some(x) = spec.strip_prefix("dirac:") {
        let x: f64 = x
            .parse()
            .map_err(|_| QsdError::InvalidArgument(format!("bad dirac location '{x}'")))?;
        return InitialMeasure::dirac(x);
    }
    if let Some(rest) = spec.strip_prefix("mix:") {
        let mut atoms = Vec::new();
        for part in rest.split(',') {
            let mut it = part.split(':');
            let (x, w) = (it.next(), it.next());
            match (x, w, it.next()) {
                (Some(x), Some(w), None) => {
                    let x: f64 = x.parse().map_err(|_| {
                        QsdError::InvalidArgument(format!("bad mix atom '{part}'"))
                    })?;
                    let w: f64 = w.parse().map_err(|_| {
                        QsdError::InvalidArgument(format!("bad mix weight '{part}'"))
                    })?;
                    atoms.push((x, w));
                }
                _ => {
                    return Err(QsdError::InvalidArgument(format!(
                        "mix atoms must be x:w pairs, got '{part}'"
                    )))
                }
            }
        }
        return InitialMeasure::atomic(atoms);
    }
    if let Some(rate) = spec.strip_prefix("expdensity:") {
        let rate: f64 = rate
            .parse()
            .map_err(|_| QsdError::InvalidArgument(format!("bad density rate '{rate}'")))?;
        if !(rate > 0.0) {
            return Err(QsdError::InvalidArgument(format!("density rate {rate} must be > 0")));
        }
        return InitialMeasure::exp_density(rate, 40.0 / rate, 800);
    }
    if spec == "yaglom" {
        return InitialMeasure::yaglom_grid(params, 40.0 / params.r(), 800);
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let text = std::fs::read_to_string(path)?;
        return InitialMeasure::from_json(&text);
    }
    Err(QsdError::InvalidArgument(format!("unknown measure spec '{spec}'")))
}

fn parse_t_grid(flag: &Option<String>, cfg: &FileConfig) -> Result<Vec<f64>> {
    if let Some(s) = flag {
        let mut grid = Vec::new();
        for part in s.split(',') {
            grid.push(part.trim().parse().map_err(|_| {
                QsdError::InvalidArgument(format!("bad t value '{part}'"))
            })?);
        }
        return Ok(grid);
    }
    Ok(cfg.t_grid.clone().unwrap_or_else(rates::default_t_grid))
}

fn parse_distance(s: &str) -> Result<DistanceKind> {
    match s {
        "w1" => Ok(DistanceKind::W1),
        "tv" => Ok(DistanceKind::Tv),
        "kolmogorov" => Ok(DistanceKind::Kolmogorov),
        _ => Err(QsdError::InvalidArgument(format!(
            "unknown distance '{s}' (expected w1 | tv | kolmogorov)"
        ))),
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("QSDLAB_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
            }
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

struct Resolved {
    params: DriftParams,
    measure_spec: String,
    measure: InitialMeasure,
    out: PathBuf,
}

fn resolve(common: &Common, cfg: &FileConfig, out: &Option<PathBuf>) -> Result<Resolved> {
    let r = common.r.or(cfg.r).unwrap_or(1.0);
    let params = DriftParams::new(r)?;
    let measure_spec = common
        .measure
        .clone()
        .or_else(|| cfg.measure.clone())
        .unwrap_or_else(|| "dirac:1".to_string());
    let measure = parse_measure(&measure_spec, params)?;
    let out_dir = out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Resolved { params, measure_spec, measure, out: out_dir })
}

fn write_table(
    dir: &Path,
    stem: &str,
    table: &rates::RateTable,
    manifest: &RunManifest,
) -> Result<()> {
    report::write_atomic(&dir.join(format!("{stem}.csv")), &table.to_csv())?;
    report::write_json(&dir.join(format!("{stem}_manifest.json")), manifest)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli.config)?;
    match &cli.command {
        Command::Yaglom { common } => {
            let rs = resolve(common, &cfg, &cli.out)?;
            let spec = GridSpec::default_for(rs.params, 1.0, 0.0);
            let law = laws::yaglom_law(rs.params, &spec)?;
            report::write_atomic(&rs.out.join("yaglom.csv"), &law.to_csv())?;
            let sidecar = LawSidecar {
                schema_version: SCHEMA_VERSION,
                tail_mass_bound: law.tail_mass_bound(),
                r: rs.params.r(),
                t: None,
                s: None,
                measure_hash: rs.measure.hash(),
            };
            report::write_json(&rs.out.join("yaglom_sidecar.json"), &sidecar)?;
            println!("yaglom: wrote {} rows to {}", law.grid().len(), rs.out.display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Lemma1 { common, f, t } => {
            let rs = resolve(common, &cfg, &cli.out)?;
            let fname = f.clone().or_else(|| cfg.f.clone()).unwrap_or_else(|| "exp-decay".into());
            let fspec = FunctionSpec::from_name(&fname)?;
            let t_grid = parse_t_grid(t, &cfg)?;
            let report_out = rates::lemma1_check(&rs.measure, &fspec, &t_grid)?;
            let mut manifest = RunManifest::new("lemma1", rs.params.r(), &rs.measure);
            manifest.t_grid = Some(t_grid);
            manifest.tolerances = serde_json::json!({
                "bound_constant": report_out.bound_constant,
                "f": fname,
                "ratio_max": 1.0,
            });
            write_table(&rs.out, "lemma1", &report_out.table, &manifest)?;
            for row in &report_out.table.rows {
                println!(
                    "lemma1 t={:<8} gap={:.6e} t*gap={:.6}",
                    row.t, row.distance, row.t_x_distance
                );
            }
            if report_out.violations.is_empty() {
                println!("lemma1: bound holds at all {} t values", report_out.table.rows.len());
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("lemma1: bound violated at t = {:?}", report_out.violations);
                Ok(ExitCode::from(2))
            }
        }

        Command::SweepThm1 { common, distance, t } => {
            let rs = resolve(common, &cfg, &cli.out)?;
            let dname = distance
                .clone()
                .or_else(|| cfg.distance.clone())
                .unwrap_or_else(|| "w1".into());
            let kind = parse_distance(&dname)?;
            let t_grid = parse_t_grid(t, &cfg)?;
            let sweep = rates::theorem1_sweep(&rs.measure, rs.params, kind, &t_grid)?;
            let mut manifest = RunManifest::new("sweep-thm1", rs.params.r(), &rs.measure);
            manifest.t_grid = Some(t_grid);
            manifest.distance = Some(dname);
            manifest.tolerances = serde_json::json!({
                "envelope": sweep.envelope,
                "envelope_from_t": sweep.envelope_from_t,
                "conjectured_limit": sweep.conjectured_limit,
            });
            write_table(&rs.out, "sweep_thm1", &sweep.table, &manifest)?;
            for row in &sweep.table.rows {
                println!(
                    "thm1 t={:<8} {}={:.6e} t*d={:.6}",
                    row.t, kind, row.distance, row.t_x_distance
                );
            }
            if let Some(l) = sweep.table.richardson() {
                println!("thm1: extrapolated t*d -> {l:.6}");
            }
            if sweep.violations.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("thm1: envelope violated at t = {:?}", sweep.violations);
                Ok(ExitCode::from(2))
            }
        }

        Command::SweepThm2 { common, s, t } => {
            let rs = resolve(common, &cfg, &cli.out)?;
            let s = s.or(cfg.s).unwrap_or(2.0);
            let t_grid = parse_t_grid(t, &cfg)?;
            let sweep = rates::theorem2_sweep(&rs.measure, rs.params, s, &t_grid)?;
            let mut manifest = RunManifest::new("sweep-thm2", rs.params.r(), &rs.measure);
            manifest.s = Some(s);
            manifest.t_grid = Some(t_grid);
            manifest.distance = Some("w1".into());
            manifest.tolerances =
                serde_json::json!({ "envelope_from_t": sweep.envelope_from_t });
            write_table(&rs.out, "sweep_thm2", &sweep.table, &manifest)?;
            for row in &sweep.table.rows {
                println!(
                    "thm2 t={:<8} w1={:.6e} t*d={:.6}",
                    row.t, row.distance, row.t_x_distance
                );
            }
            if sweep.violations.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("thm2: envelope violated at t = {:?}", sweep.violations);
                Ok(ExitCode::from(2))
            }
        }

        Command::Psi { common, f } => {
            let rs = resolve(common, &cfg, &cli.out)?;
            let fname =
                f.clone().or_else(|| cfg.f.clone()).unwrap_or_else(|| "one-plus-x".into());
            let fspec = FunctionSpec::from_name(&fname)?;
            let psi_f = rates::psi(&rs.measure, &fspec, rs.params)?;
            let psi_one = rates::psi(&rs.measure, &FunctionSpec::one(), rs.params)?;
            let coeff = rates::first_order_constant(&fspec, &rs.measure, rs.params)?;
            let payload = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "r": rs.params.r(),
                "measure": rs.measure_spec,
                "f": fname,
                "psi_f": psi_f,
                "psi_one": psi_one,
                "first_order_coefficient": coeff,
            });
            println!("{}", serde_json::to_string_pretty(&payload)?);
            report::write_json(&rs.out.join("psi.json"), &payload)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::McValidate { common, t, n_paths, step, seed } => {
            let rs = resolve(common, &cfg, &cli.out)?;
            let t = t.or(cfg.t).unwrap_or(1.0);
            let n = n_paths.or(cfg.n_paths).unwrap_or(100_000);
            let h = step.or(cfg.step).unwrap_or(1e-3);
            let seed = seed.or(cfg.seed).unwrap_or(0x5eed_0001);
            let mc_cfg = McConfig::new(n, h, seed)?;

            let batch = mc::simulate_killed(rs.params, &rs.measure, t, &mc_cfg)?;
            let est = batch.survival_estimate();
            let exact = rs.measure.integrate(|x| survival_probability(rs.params, t, x))?;
            let surv_ok = (est.mean - exact).abs() <= 3.0 * est.std_error + 2.0 * h;

            let b3 = mc::simulate_bessel3(1.0, t, &mc_cfg)?;
            let ks = mc::ks_statistic(&b3.endpoints, |y| bessel3_cdf(t, 1.0, y));
            let ks_crit = mc::ks_critical_1pct(b3.n() as f64);
            let ks_ok = ks < ks_crit;
            let second = mc::estimate_expectation(&b3, |y| y * y)?;
            let second_exact = 1.0 + 3.0 * t;
            let second_ok = (second.mean - second_exact).abs() <= 3.0 * second.std_error;

            let payload = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "r": rs.params.r(),
                "t": t,
                "seed": seed,
                "h": h,
                "n": n,
                "killed": batch.summary()?,
                "survival": { "estimate": est.mean, "se": est.std_error, "closed_form": exact, "ok": surv_ok },
                "bessel3_ks": { "statistic": ks, "critical_1pct": ks_crit, "ok": ks_ok },
                "bessel3_second_moment": { "estimate": second.mean, "se": second.std_error, "exact": second_exact, "ok": second_ok },
            });
            println!("{}", serde_json::to_string_pretty(&payload)?);
            report::write_json(&rs.out.join("mc_validate.json"), &payload)?;
            let mut manifest = RunManifest::new("mc-validate", rs.params.r(), &rs.measure);
            manifest.seed = Some(seed);
            manifest.tolerances = serde_json::json!({ "sigma": 3.0, "ks_level": 0.01 });
            report::write_json(&rs.out.join("mc_validate_manifest.json"), &manifest)?;
            if surv_ok && ks_ok && second_ok {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("mc-validate: a stochastic check fell outside its tolerance");
                Ok(ExitCode::from(2))
            }
        }
    }
}
