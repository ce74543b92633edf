//! Thermal ensembles, initial states and time averages.

mod average;
mod moments;
mod nats;
mod state;

pub use average::{time_average, time_average_dephasing, time_average_pairs};
pub use moments::{
    amc_check, amc_scaling, moment_check, moment_scaling, AmcReport, AmcScaling, LevelDistribution,
    Moment, MomentReport, MomentSlope,
};
pub use nats::{
    attainable_energy, nats_expectations, solve_nats, thermal_average, thermal_average_direct,
    thermal_weights, DenseThermalState, NatsParams, ThermalWeights, DIRECT_MAX_SITES,
};
pub use state::{
    anomalous_multiplet, build_state, energy_at_fraction, nearest_multiplet, nearest_spin,
    product_state, ProductStateSpec, StateCoefficients, StateKind,
};
