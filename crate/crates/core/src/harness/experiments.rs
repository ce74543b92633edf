use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::ensembles::{
    build_state, energy_at_fraction, solve_nats, thermal_average, time_average, time_average_pairs,
    NatsParams, StateCoefficients, StateKind,
};
use crate::error::{Error, Result};
use crate::model::SpinModelSpec;
use crate::report::{fmt_f64, fmt_opt, write_csv};
use crate::spectral::{entropy_surface, load_or_decompose_with_limit, SpectrumTable};
use crate::spin_algebra::{cg_exact, CGKey, HalfInteger};
use crate::stats::{log_log_fit, LinearFit};
use crate::tensor::{
    build_tensor, eth_diagonal_fit, eth_offdiagonal_stats, reduced_elements, write_diagonal_csv,
    write_offdiagonal_csv, DiagonalFit, OffDiagonalStats, ReducedElementTable, ReductionMode,
    TensorKind,
};

use super::config::{tensor_label, ExperimentConfig, OperatorSpec};

/// Model and spectrum at one size, loaded from the cache when possible.
pub fn prepare_size(
    config: &ExperimentConfig,
    n_sites: usize,
) -> Result<(SpinModelSpec, SpectrumTable)> {
    let spec = config.model_for(n_sites)?;
    let table = load_or_decompose_with_limit(&spec, config.cache_dir.as_deref(), config.max_sites)?;
    Ok((spec, table))
}

/// `(<H>, <S_z>)` of a state from its multiplet amplitudes.
pub fn state_charges(state: &StateCoefficients, table: &SpectrumTable) -> (f64, f64) {
    let mut e = 0.0;
    let mut m = 0.0;
    for (a, mm, p) in state.probabilities() {
        e += p * table.energy(a);
        m += p * mm.value();
    }
    (e, m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRecord {
    pub n_sites: usize,
    pub operator: String,
    pub q: i32,
    pub energy: f64,
    pub magnetization: f64,
    pub beta: f64,
    pub mu: f64,
    pub time_avg: Complex64,
    pub thermal_avg: f64,
    pub deviation: Complex64,
    /// Anomaly runs only: the multiplet `A`, its spin, the exact CG prefactor,
    /// `<A||T||A>` and `|time_avg - prefactor * <A||T||A>|`.
    pub anomaly: Option<AnomalyColumns>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyColumns {
    pub label: usize,
    pub spin: HalfInteger,
    pub cg_prefactor: f64,
    pub reduced: f64,
    pub decomposition_residual: f64,
}

/// Log-log slope of `|deviation|` against `N` for one operator.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingFit {
    pub operator: String,
    pub q: i32,
    pub fit: Option<LinearFit>,
    pub excluded_zero: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingResult {
    pub records: Vec<ScalingRecord>,
    pub fits: Vec<ScalingFit>,
    /// Sizes dropped with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// Deviations at or below this are rounding around an exact zero and stay out of fits.
pub const ZERO_DEVIATION: f64 = 1e-12;

impl ScalingResult {
    fn new(
        operators: &[OperatorSpec],
        records: Vec<ScalingRecord>,
        skipped: Vec<(usize, String)>,
    ) -> Self {
        let fits = operators
            .iter()
            .map(|op| {
                let label = op.label();
                let (n, dev): (Vec<f64>, Vec<f64>) = records
                    .iter()
                    .filter(|r| r.operator == label)
                    .map(|r| (r.n_sites as f64, r.deviation.norm()))
                    .unzip();
                let sizes = n.len();
                let (n, dev): (Vec<f64>, Vec<f64>) = n
                    .into_iter()
                    .zip(dev)
                    .filter(|(_, d)| *d > ZERO_DEVIATION)
                    .unzip();
                let excluded_zero = sizes - n.len();
                let fit = if n.len() >= 2 {
                    log_log_fit(&n, &dev).ok().map(|(f, _)| f)
                } else {
                    None
                };
                ScalingFit {
                    operator: label,
                    q: op.q,
                    fit,
                    excluded_zero,
                }
            })
            .collect();
        ScalingResult {
            records,
            fits,
            skipped,
        }
    }
}

fn skip_or_fail(e: Error, n: usize, skipped: &mut Vec<(usize, String)>) -> Result<()> {
    match e {
        Error::Infeasible { .. } | Error::NoMultiplet(_) => {
            log::warn!("skipping N={n}: {e}");
            skipped.push((n, e.to_string()));
            Ok(())
        }
        other => Err(other),
    }
}

fn record(
    n: usize,
    op: &OperatorSpec,
    charges: (f64, f64),
    params: &NatsParams,
    time_avg: Complex64,
    thermal_avg: f64,
) -> ScalingRecord {
    ScalingRecord {
        n_sites: n,
        operator: op.label(),
        q: op.q,
        energy: charges.0,
        magnetization: charges.1,
        beta: params.beta,
        mu: params.mu,
        time_avg,
        thermal_avg,
        deviation: time_avg - thermal_avg,
        anomaly: None,
    }
}

/// Time versus thermal averages of the configured operators for a short-range-correlated
/// initial state, at every configured size.
pub fn run_thermalization_sweep(config: &ExperimentConfig) -> Result<ScalingResult> {
    config.require_operators()?;
    let kind = config.sweep_state();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for &n in &config.sizes {
        let (spec, table) = prepare_size(config, n)?;
        let outcome = (|| -> Result<Vec<ScalingRecord>> {
            let state = build_state(&kind, &table, Some(&spec))?;
            let charges = state_charges(&state, &table);
            let params = solve_nats(&table, charges.0, charges.1)?;
            let tol = table.default_degeneracy_tol();
            let mode = ReductionMode::Pairs(time_average_pairs(&table, tol));
            let mut out = Vec::new();
            for op in &config.operators {
                let tensor = build_tensor(&op.tensor, n)?;
                let r = reduced_elements(&tensor, &table, &mode)?;
                let t = time_average(&r, op.q, &state, &table, tol)?;
                let th = thermal_average(&r, op.q, &table, &params)?;
                out.push(record(n, op, charges, &params, t, th));
            }
            Ok(out)
        })();
        match outcome {
            Ok(rs) => records.extend(rs),
            Err(e) => skip_or_fail(e, n, &mut skipped)?,
        }
    }
    Ok(ScalingResult::new(&config.operators, records, skipped))
}

/// `sum_{m,m'} C*_{A,m} C_{A,m'} <s_A m|s_A m'; k q>` with exact CG coefficients, for a
/// state supported on the single multiplet `A`.
pub fn anomaly_prefactor(state: &StateCoefficients, label: usize, k: u32, q: i32) -> Result<f64> {
    let s = state.spin(label);
    let kh = HalfInteger::from_int(k as i32);
    let qh = HalfInteger::from_int(q);
    let mut total = Complex64::new(0.0, 0.0);
    for mp in s.projections() {
        let m = mp + qh;
        if !s.admits(m) {
            continue;
        }
        let amp = state.get(label, m).conj() * state.get(label, mp);
        if amp == Complex64::new(0.0, 0.0) {
            continue;
        }
        total += amp * cg_exact(&CGKey::new(s, m, s, mp, kh, qh))?.to_f64();
    }
    if total.im.abs() > 1e-14 {
        return Err(Error::InvalidArgument(format!(
            "complex CG prefactor {total}"
        )));
    }
    Ok(total.re)
}

fn single_multiplet(state: &StateCoefficients) -> Result<usize> {
    let mut occupied =
        (0..state.len()).filter(|&a| state.multiplet(a).iter().any(|c| c.norm_sqr() > 0.0));
    match (occupied.next(), occupied.next()) {
        (Some(a), None) => Ok(a),
        _ => Err(Error::InvalidArgument(
            "anomaly states must occupy exactly one multiplet".into(),
        )),
    }
}

/// Time and thermal averages for the anomalous single-multiplet states, with the
/// Clebsch-Gordan prefactor and reduced element reported separately.
pub fn run_anomaly_experiment(config: &ExperimentConfig) -> Result<ScalingResult> {
    config.require_operators()?;
    let kind = match &config.state {
        Some(
            k @ (StateKind::AnomalousA { .. }
            | StateKind::AnomalousB { .. }
            | StateKind::Singlet { .. }),
        ) => k.clone(),
        other => return Err(Error::Config(format!(
            "anomaly experiment needs an anomalous_a, anomalous_b or singlet state, got {other:?}"
        ))),
    };
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for &n in &config.sizes {
        let (spec, table) = prepare_size(config, n)?;
        let outcome = (|| -> Result<Vec<ScalingRecord>> {
            let state = build_state(&kind, &table, Some(&spec))?;
            let label = single_multiplet(&state)?;
            let charges = state_charges(&state, &table);
            let params = solve_nats(&table, charges.0, charges.1)?;
            let tol = table.default_degeneracy_tol();
            let mut out = Vec::new();
            for op in &config.operators {
                let tensor = build_tensor(&op.tensor, n)?;
                let r = reduced_elements(&tensor, &table, &ReductionMode::Diagonal)?;
                let t = time_average(&r, op.q, &state, &table, tol)?;
                let th = thermal_average(&r, op.q, &table, &params)?;
                let prefactor = anomaly_prefactor(&state, label, tensor.rank(), op.q)?;
                let reduced = r.diagonal(label).unwrap_or(0.0);
                let mut rec = record(n, op, charges, &params, t, th);
                rec.anomaly = Some(AnomalyColumns {
                    label,
                    spin: table.spin(label),
                    cg_prefactor: prefactor,
                    reduced,
                    decomposition_residual: (t - prefactor * reduced).norm(),
                });
                out.push(rec);
            }
            Ok(out)
        })();
        match outcome {
            Ok(rs) => records.extend(rs),
            Err(e) => skip_or_fail(e, n, &mut skipped)?,
        }
    }
    Ok(ScalingResult::new(&config.operators, records, skipped))
}

/// Exact thermal average of a rank-0 operator at `M = 0` next to its Laplace-style
/// estimate `T(E, 0) + b <S>`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplaceRecord {
    pub n_sites: usize,
    pub operator: String,
    pub energy: f64,
    pub beta: f64,
    pub exact: f64,
    /// Local fit `T(E_a, s_a) ~ a + b_E (E_a - E) + b_s s_a` near the target energy.
    pub intercept: f64,
    pub spin_slope: f64,
    /// Mean spin under the binned weights `(2S+1) exp(S_th(E,S) - beta E)`.
    pub mean_spin: f64,
    pub estimate: f64,
    pub gap: f64,
}

/// Local linear fit of diagonal reduced elements in `(E - energy, s)` over multiplets
/// within `window` of `energy`. Returns `(a, b_E, b_s)`.
pub fn local_fit(
    r: &ReducedElementTable,
    table: &SpectrumTable,
    energy: f64,
    window: f64,
) -> Result<(f64, f64, f64)> {
    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    let mut count = 0usize;
    let mut spins = std::collections::BTreeSet::new();
    for a in 0..table.len() {
        let de = table.energy(a) - energy;
        if de.abs() > window {
            continue;
        }
        let Some(v) = r.diagonal(a) else { continue };
        let x = Vector3::new(1.0, de, table.spin(a).value());
        normal += x * x.transpose();
        rhs += x * v;
        count += 1;
        spins.insert(table.spin(a));
    }
    if count < 4 || spins.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "entropy surface too sparse near E={energy:.4}: {count} multiplets, {} spins",
            spins.len()
        )));
    }
    let sol = normal.cholesky().map(|c| c.solve(&rhs)).ok_or_else(|| {
        Error::InvalidArgument(format!("degenerate local fit near E={energy:.4}"))
    })?;
    Ok((sol[0], sol[1], sol[2]))
}

/// Exact versus Laplace-style thermal averages of rank-0 operators at `M = 0`.
pub fn run_suppl7_thermal(config: &ExperimentConfig) -> Result<Vec<LaplaceRecord>> {
    config.require_operators()?;
    if config.targets.m_density != 0.0 {
        return Err(Error::Config(
            "the rank-0 thermal study needs m_density = 0".into(),
        ));
    }
    if let Some(op) = config.operators.iter().find(|o| o.tensor.rank() != 0) {
        return Err(Error::Config(format!(
            "{} is not a rank-0 operator",
            op.label()
        )));
    }
    let mut out = Vec::new();
    for &n in &config.sizes {
        let (_, table) = prepare_size(config, n)?;
        let energy = match config.targets.energy_density {
            Some(d) => d * n as f64,
            None => energy_at_fraction(&table, config.targets.energy_fraction),
        };
        let params = solve_nats(&table, energy, 0.0)?;
        let e_min = table
            .energies()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let e_max = table
            .energies()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let window = config.eth.fit_window * (e_max - e_min);
        let surface = entropy_surface(&table, (config.eth.energy_bin, config.eth.spin_bin))?;
        let mean_spin = binned_mean_spin(&surface, params.beta)?;
        for op in &config.operators {
            let tensor = build_tensor(&op.tensor, n)?;
            let r = reduced_elements(&tensor, &table, &ReductionMode::Diagonal)?;
            let exact = thermal_average(&r, 0, &table, &params)?;
            let (intercept, _, spin_slope) = local_fit(&r, &table, energy, window)?;
            let estimate = intercept + spin_slope * mean_spin;
            out.push(LaplaceRecord {
                n_sites: n,
                operator: op.label(),
                energy,
                beta: params.beta,
                exact,
                intercept,
                spin_slope,
                mean_spin,
                estimate,
                gap: exact - estimate,
            });
        }
    }
    Ok(out)
}

fn binned_mean_spin(surface: &crate::spectral::EntropySurface, beta: f64) -> Result<f64> {
    let (ne, ns) = surface.shape();
    let mut terms = Vec::new();
    for ie in 0..ne {
        for is in 0..ns {
            if let Some(entropy) = surface.bin_value(ie, is) {
                let (e, s) = surface.bin_center(ie, is);
                terms.push((entropy - beta * e + (2.0 * s + 1.0).ln(), s));
            }
        }
    }
    let peak = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    if terms.len() < 2 || !peak.is_finite() {
        return Err(Error::InvalidArgument("entropy surface too sparse".into()));
    }
    let (num, den) = terms.iter().fold((0.0, 0.0), |(n, d), &(l, s)| {
        let w = (l - peak).exp();
        (n + w * s, d + w)
    });
    Ok(num / den)
}

/// Per-size ETH diagnostics of one operator.
#[derive(Clone, Debug)]
pub struct EthRecord {
    pub n_sites: usize,
    pub operator: String,
    pub diagonal: DiagonalFit,
    pub offdiagonal: OffDiagonalStats,
    pub max_spread: f64,
    pub selection_zero_max: f64,
}

pub fn run_eth_stats(config: &ExperimentConfig) -> Result<Vec<EthRecord>> {
    config.require_operators()?;
    let mut out = Vec::new();
    let widths = (config.eth.energy_bin, config.eth.spin_bin);
    for &n in &config.sizes {
        let (_, table) = prepare_size(config, n)?;
        let surface = entropy_surface(&table, widths)?;
        let mut seen: Vec<&TensorKind> = Vec::new();
        for op in &config.operators {
            if seen.contains(&&op.tensor) {
                continue;
            }
            seen.push(&op.tensor);
            let tensor = build_tensor(&op.tensor, n)?;
            let r = reduced_elements(&tensor, &table, &ReductionMode::All)?;
            out.push(EthRecord {
                n_sites: n,
                operator: tensor_label(&op.tensor),
                diagonal: eth_diagonal_fit(&r, &table, widths, config.eth.min_count)?,
                offdiagonal: eth_offdiagonal_stats(&r, &table, &surface, config.eth.min_count)?,
                max_spread: r.max_spread(),
                selection_zero_max: r.selection_zero_max(),
            });
        }
    }
    Ok(out)
}

/// Thermal state parameters and averages at the configured charge densities.
#[derive(Clone, Debug, PartialEq)]
pub struct ThermalRecord {
    pub n_sites: usize,
    pub operator: String,
    pub params: NatsParams,
    pub value: f64,
}

pub fn run_thermal(config: &ExperimentConfig) -> Result<Vec<ThermalRecord>> {
    config.require_operators()?;
    let mut out = Vec::new();
    for &n in &config.sizes {
        let (_, table) = prepare_size(config, n)?;
        let energy = match config.targets.energy_density {
            Some(d) => d * n as f64,
            None => energy_at_fraction(&table, config.targets.energy_fraction),
        };
        let params = solve_nats(&table, energy, config.targets.m_density * n as f64)?;
        for op in &config.operators {
            let tensor = build_tensor(&op.tensor, n)?;
            let r = reduced_elements(&tensor, &table, &ReductionMode::Diagonal)?;
            out.push(ThermalRecord {
                n_sites: n,
                operator: op.label(),
                params: params.clone(),
                value: thermal_average(&r, op.q, &table, &params)?,
            });
        }
    }
    Ok(out)
}

pub const SCALING_HEADER: &[&str] = &[
    "n_sites",
    "operator",
    "q",
    "energy",
    "magnetization",
    "beta",
    "mu",
    "time_avg_re",
    "time_avg_im",
    "thermal_avg",
    "deviation_re",
    "deviation_im",
    "abs_deviation",
    "multiplet",
    "spin",
    "cg_prefactor",
    "reduced_element",
    "decomposition_residual",
];

pub fn write_scaling_csv(dir: &Path, stem: &str, result: &ScalingResult) -> Result<Vec<PathBuf>> {
    let records_path = dir.join(format!("{stem}.csv"));
    write_csv(
        &records_path,
        SCALING_HEADER,
        result.records.iter().map(|r| {
            let a = r.anomaly.as_ref();
            vec![
                r.n_sites.to_string(),
                r.operator.clone(),
                r.q.to_string(),
                fmt_f64(r.energy),
                fmt_f64(r.magnetization),
                fmt_f64(r.beta),
                fmt_f64(r.mu),
                fmt_f64(r.time_avg.re),
                fmt_f64(r.time_avg.im),
                fmt_f64(r.thermal_avg),
                fmt_f64(r.deviation.re),
                fmt_f64(r.deviation.im),
                fmt_f64(r.deviation.norm()),
                a.map(|a| a.label.to_string()).unwrap_or_default(),
                a.map(|a| a.spin.to_string()).unwrap_or_default(),
                fmt_opt(a.map(|a| a.cg_prefactor)),
                fmt_opt(a.map(|a| a.reduced)),
                fmt_opt(a.map(|a| a.decomposition_residual)),
            ]
        }),
    )?;
    let fits_path = dir.join(format!("{stem}_fit.csv"));
    write_csv(
        &fits_path,
        &[
            "operator",
            "q",
            "slope",
            "slope_std_error",
            "intercept",
            "points",
            "excluded_zero",
        ],
        result.fits.iter().map(|f| {
            vec![
                f.operator.clone(),
                f.q.to_string(),
                fmt_opt(f.fit.map(|x| x.slope)),
                fmt_opt(f.fit.map(|x| x.slope_std_error)),
                fmt_opt(f.fit.map(|x| x.intercept)),
                f.fit
                    .map(|x| x.samples.to_string())
                    .unwrap_or_else(|| "0".into()),
                f.excluded_zero.to_string(),
            ]
        }),
    )?;
    let mut paths = vec![records_path, fits_path];
    if !result.skipped.is_empty() {
        let skipped_path = dir.join(format!("{stem}_skipped.csv"));
        write_csv(
            &skipped_path,
            &["n_sites", "reason"],
            result
                .skipped
                .iter()
                .map(|(n, why)| vec![n.to_string(), why.clone()]),
        )?;
        paths.push(skipped_path);
    }
    Ok(paths)
}

pub fn write_laplace_csv(path: &Path, records: &[LaplaceRecord]) -> Result<()> {
    write_csv(
        path,
        &[
            "n_sites",
            "operator",
            "energy",
            "beta",
            "exact",
            "intercept",
            "spin_slope",
            "mean_spin",
            "estimate",
            "gap",
        ],
        records.iter().map(|r| {
            vec![
                r.n_sites.to_string(),
                r.operator.clone(),
                fmt_f64(r.energy),
                fmt_f64(r.beta),
                fmt_f64(r.exact),
                fmt_f64(r.intercept),
                fmt_f64(r.spin_slope),
                fmt_f64(r.mean_spin),
                fmt_f64(r.estimate),
                fmt_f64(r.gap),
            ]
        }),
    )
}

pub fn write_thermal_csv(path: &Path, records: &[ThermalRecord]) -> Result<()> {
    write_csv(
        path,
        &[
            "n_sites",
            "operator",
            "beta",
            "mu",
            "target_energy",
            "target_magnetization",
            "value",
        ],
        records.iter().map(|r| {
            vec![
                r.n_sites.to_string(),
                r.operator.clone(),
                fmt_f64(r.params.beta),
                fmt_f64(r.params.mu),
                fmt_f64(r.params.target_e),
                fmt_f64(r.params.target_m),
                fmt_f64(r.value),
            ]
        }),
    )
}

/// Writes the per-bin diagonal and off-diagonal tables of each record into `dir`.
pub fn write_eth_csv(dir: &Path, records: &[EthRecord]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for r in records {
        let diag = dir.join(format!("eth_diagonal_{}_n{}.csv", r.operator, r.n_sites));
        let off = dir.join(format!("eth_offdiagonal_{}_n{}.csv", r.operator, r.n_sites));
        write_diagonal_csv(&diag, &r.diagonal)?;
        write_offdiagonal_csv(&off, &r.offdiagonal)?;
        paths.push(diag);
        paths.push(off);
    }
    let summary = dir.join("eth_summary.csv");
    write_csv(
        &summary,
        &[
            "n_sites",
            "operator",
            "mid_spectrum_std",
            "max_spread",
            "selection_zero_max",
            "residual_variance",
            "residual_kurtosis",
        ],
        records.iter().map(|r| {
            vec![
                r.n_sites.to_string(),
                r.operator.clone(),
                fmt_opt(r.diagonal.mid_spectrum_std()),
                fmt_f64(r.max_spread),
                fmt_f64(r.selection_zero_max),
                fmt_f64(r.offdiagonal.residual_variance),
                fmt_f64(r.offdiagonal.residual_kurtosis),
            ]
        }),
    )?;
    paths.push(summary);
    Ok(paths)
}
