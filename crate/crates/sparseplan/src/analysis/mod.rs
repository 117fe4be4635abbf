//! Analysis instruments: nHSIC dependence sweeps, attentive probing,
//! relative prediction error, and the noise-injection robustness harness.

mod hsic;
mod noise;
mod prederr;
mod probe;
mod sweep;

pub use hsic::{hsic, median_bandwidth, nhsic, KernelSpec};
pub use noise::{
    noise_robustness, random_action_baseline, sample_task, success_rate, NoiseCell,
};
pub use prederr::{prediction_error, relative_errors, validation_sequences, PredErrStats};
pub use probe::{
    init_probe, mean_baseline_mse, probe_mse, probe_predict, train_probe, ProbeConfig,
};
pub use sweep::{collect_samples, hsic_sweep, SweepRow, SWEEP_MASKS, SWEEP_SAMPLES};
