//! Configuration, experiment orchestration and CSV output.

mod config;
mod experiments;

pub use config::{tensor_label, EthSettings, ExperimentConfig, ModelFamily, OperatorSpec, Targets};
pub use experiments::{
    anomaly_prefactor, local_fit, prepare_size, run_anomaly_experiment, run_eth_stats,
    run_suppl7_thermal, run_thermal, run_thermalization_sweep, state_charges, write_eth_csv,
    write_laplace_csv, write_scaling_csv, write_thermal_csv, AnomalyColumns, EthRecord,
    LaplaceRecord, ScalingFit, ScalingRecord, ScalingResult, ThermalRecord, SCALING_HEADER,
    ZERO_DEVIATION,
};

use crate::error::{Error, Result};

/// Environment variable consulted when no explicit thread count is given.
pub const THREADS_ENV: &str = "NAETH_THREADS";

/// Sizes the global worker pool. An explicit count wins over [`THREADS_ENV`];
/// with neither, rayon picks one thread per core.
pub fn configure_threads(explicit: Option<usize>) -> Result<usize> {
    let requested = match explicit {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    if requested == Some(0) {
        return Err(Error::Config("thread count must be positive".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = requested {
        builder = builder.num_threads(n);
    }
    // A pool that already exists keeps its size.
    if let Err(e) = builder.build_global() {
        log::debug!("thread pool already initialised: {e}");
    }
    Ok(rayon::current_num_threads())
}
