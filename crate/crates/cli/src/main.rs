use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use naeth::harness::{self, ExperimentConfig};
use naeth::spectral::{cache_path, load_or_decompose_with_limit, SpectrumTable};
use naeth::spin_algebra::{cg_asymptotic, cg_exact, CGKey, HalfInteger};
use naeth::report::{fmt_f64, write_csv};
use naeth::Error;

#[derive(Parser, Debug)]
#[command(name = "naeth", version, about = "Non-Abelian ETH diagnostics for SU(2)-symmetric spin chains")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Spectrum cache directory; overrides the configuration.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Coupling and state seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: NAETH_THREADS, else one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Diagonalize every configured size and store the spectra in the cache.
    Spectrum,
    /// Print an exact Clebsch-Gordan coefficient <s m|s' m'; k q> and its large-s form.
    Cg(CgArgs),
    /// Diagonal and off-diagonal reduced-element statistics.
    EthStats,
    /// Thermal-state parameters and averages at the configured charge densities.
    Thermal,
    /// Infinite-time averages for the configured initial state.
    TimeAvg,
    /// Time versus thermal averages across sizes, with a log-log slope.
    Sweep,
    /// Anomalous-state averages with the Clebsch-Gordan decomposition.
    Anomaly,
    /// Exact rank-0 thermal averages against the Laplace-style estimate.
    Laplace,
}

#[derive(Args, Debug)]
struct CgArgs {
    #[arg(long, allow_hyphen_values = true)]
    s: HalfInteger,
    #[arg(long, allow_hyphen_values = true)]
    m: HalfInteger,
    #[arg(long, allow_hyphen_values = true)]
    sp: HalfInteger,
    #[arg(long, allow_hyphen_values = true)]
    mp: HalfInteger,
    #[arg(long, allow_hyphen_values = true)]
    k: HalfInteger,
    #[arg(long, allow_hyphen_values = true)]
    q: HalfInteger,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    harness::configure_threads(cli.global.threads)?;
    if let Command::Cg(args) = &cli.command {
        return print_cg(args);
    }
    let config = load_config(&cli.global)?;
    let out = config.output_dir.clone();
    match cli.command {
        Command::Cg(_) => unreachable!("handled above"),
        Command::Spectrum => spectrum(&config),
        Command::EthStats => {
            let records = harness::run_eth_stats(&config)?;
            for r in &records {
                println!(
                    "N={} {} mid_spectrum_std={} max_spread={:.3e} residual_variance={:.6}",
                    r.n_sites,
                    r.operator,
                    r.diagonal.mid_spectrum_std().map_or("n/a".into(), |v| format!("{v:.6}")),
                    r.max_spread,
                    r.offdiagonal.residual_variance
                );
            }
            report_paths(&harness::write_eth_csv(&out, &records)?);
            Ok(())
        }
        Command::Thermal => {
            let records = harness::run_thermal(&config)?;
            for r in &records {
                println!(
                    "N={} {} beta={:.10} mu={:.10} value={}",
                    r.n_sites,
                    r.operator,
                    r.params.beta,
                    r.params.mu,
                    fmt_f64(r.value)
                );
            }
            let path = out.join("thermal.csv");
            harness::write_thermal_csv(&path, &records)?;
            report_paths(&[path]);
            Ok(())
        }
        Command::TimeAvg => {
            let result = harness::run_thermalization_sweep(&config)?;
            let path = out.join("time_avg.csv");
            write_csv(
                &path,
                &["n_sites", "operator", "q", "energy", "magnetization", "time_avg_re", "time_avg_im"],
                result.records.iter().map(|r| {
                    println!("N={} {} time_avg={}", r.n_sites, r.operator, r.time_avg);
                    vec![
                        r.n_sites.to_string(),
                        r.operator.clone(),
                        r.q.to_string(),
                        fmt_f64(r.energy),
                        fmt_f64(r.magnetization),
                        fmt_f64(r.time_avg.re),
                        fmt_f64(r.time_avg.im),
                    ]
                }),
            )?;
            report_skipped(&result.skipped);
            report_paths(&[path]);
            Ok(())
        }
        Command::Sweep => scaling(&out, "sweep", harness::run_thermalization_sweep(&config)?),
        Command::Anomaly => scaling(&out, "anomaly", harness::run_anomaly_experiment(&config)?),
        Command::Laplace => {
            let records = harness::run_suppl7_thermal(&config)?;
            for r in &records {
                println!(
                    "N={} {} exact={} estimate={} gap={:.3e}",
                    r.n_sites,
                    r.operator,
                    fmt_f64(r.exact),
                    fmt_f64(r.estimate),
                    r.gap
                );
            }
            let path = out.join("laplace.csv");
            harness::write_laplace_csv(&path, &records)?;
            report_paths(&[path]);
            Ok(())
        }
    }
}

fn load_config(global: &Global) -> Result<ExperimentConfig, Error> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this subcommand needs --config <path>".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(dir) = &global.cache_dir {
        config.cache_dir = Some(dir.clone());
    }
    if let Some(dir) = &global.out_dir {
        config.output_dir = dir.clone();
    }
    if let Some(seed) = global.seed {
        config.rng_seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn print_cg(a: &CgArgs) -> Result<(), Error> {
    let key = CGKey::new(a.s, a.m, a.sp, a.mp, a.k, a.q);
    let exact = cg_exact(&key)?;
    println!("{exact}");
    println!("decimal    {}", fmt_f64(exact.to_f64()));
    // The large-s form applies to <s, m+q|s, m; k, q>.
    if a.s == a.sp && a.m == a.mp + a.q {
        match cg_asymptotic(a.sp, a.mp, a.k, a.q) {
            Ok(asym) => println!(
                "asymptotic {}  (relative error estimate {:.3e}{})",
                fmt_f64(asym.value),
                asym.relative_error_estimate,
                if asym.regime_warning { ", outside s >> s-m" } else { "" }
            ),
            Err(e) => println!("asymptotic n/a ({e})"),
        }
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn spectrum(config: &ExperimentConfig) -> Result<(), Error> {
    let cache_dir = config
        .cache_dir
        .clone()
        .unwrap_or_else(|| config.output_dir.join("cache"));
    let mut rows = Vec::new();
    for &n in &config.sizes {
        let spec = config.model_for(n)?;
        let table: SpectrumTable = load_or_decompose_with_limit(&spec, Some(&cache_dir), config.max_sites)?;
        let counts = table
            .multiplet_counts()
            .iter()
            .map(|(s, c)| format!("{s}:{c}"))
            .collect::<Vec<_>>()
            .join(" ");
        println!(
            "N={n} multiplets={} digest={} cache={}",
            table.len(),
            hex(&table.digest()),
            cache_path(&cache_dir, &spec.digest()).display()
        );
        println!("  multiplets by spin: {counts}");
        for m in table.multiplets() {
            rows.push(vec![n.to_string(), m.label().to_string(), fmt_f64(m.energy()), m.spin().to_string()]);
        }
    }
    let path = config.output_dir.join("spectrum.csv");
    write_csv(&path, &["n_sites", "label", "energy", "spin"], rows)?;
    report_paths(&[path]);
    Ok(())
}

fn scaling(out: &Path, stem: &str, result: harness::ScalingResult) -> Result<(), Error> {
    for r in &result.records {
        println!(
            "N={} {} time={:.6e} thermal={:.6e} |deviation|={:.6e}",
            r.n_sites,
            r.operator,
            r.time_avg.re,
            r.thermal_avg,
            r.deviation.norm()
        );
    }
    for f in &result.fits {
        match f.fit {
            Some(fit) => println!(
                "{}: slope {:.4} +/- {:.4} over {} sizes ({} zero deviations excluded)",
                f.operator, fit.slope, fit.slope_std_error, fit.samples, f.excluded_zero
            ),
            None => println!("{}: no slope ({} zero deviations excluded)", f.operator, f.excluded_zero),
        }
    }
    report_skipped(&result.skipped);
    report_paths(&harness::write_scaling_csv(out, stem, &result)?);
    Ok(())
}

fn report_skipped(skipped: &[(usize, String)]) {
    for (n, why) in skipped {
        eprintln!("skipped N={n}: {why}");
    }
}

fn report_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}
