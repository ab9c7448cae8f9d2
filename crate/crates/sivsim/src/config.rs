//! Experiment configuration: one JSON document that pins everything a run
//! needs, seed included, so a dataset can be reproduced from its config alone.
//!
//! Parsing is strict. Unknown keys are rejected rather than ignored (a typo
//! must not silently fall back to a default), `master_seed` is mandatory, and
//! cross-field checks name both offending keys. Every scalar key carries its
//! unit as a suffix.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::correlator::CorrelatorConfig;
use crate::dataset::{atomic_write, sha256_hex};
use crate::emitter::{
    DriveScheme, Emitter, EmitterConfig, SpectralDynamics, BASE_JUMP_SIGMA_HZ,
};
use crate::error::{Error, Result};
use crate::physics::{BackgroundModel, OpticalTransition};
use crate::stream::PulsedDecayConfig;
use crate::survey::{G2SurveyConfig, SurveyConfig};
use crate::sweep::SweepPlan;

/// Root of a run configuration document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed behind every random draw of the run. Required: omitting it is a
    /// schema error, not a silent default.
    pub master_seed: u64,
    #[serde(default)]
    pub pillar: PillarConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub pulses: PulseConfig,
    #[serde(default)]
    pub drive: DriveConfig,
    #[serde(default)]
    pub lifetime: LifetimeConfig,
    #[serde(default)]
    pub survey: SurveySection,
}

/// The emitters under the collection spot and the light they sit on.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PillarConfig {
    pub emitters: Vec<EmitterSpec>,
    /// Power-independent detector background.
    pub dark_rate_cps: f64,
    /// Background that scales with excitation power.
    pub background_cps_per_nw: f64,
}

impl Default for PillarConfig {
    fn default() -> Self {
        PillarConfig {
            emitters: vec![EmitterSpec::default()],
            dark_rate_cps: 120.0,
            background_cps_per_nw: 0.0,
        }
    }
}

/// Named spectral-dynamics presets an emitter can start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationClass {
    /// Narrow slow wander; lines resolve near the natural width.
    Stable,
    /// Wide fast wander; single-pass lines smear across hundreds of MHz.
    Diffusive,
    /// Wide wander plus charge-state toggling under resonant drive.
    Blinking,
}

impl PopulationClass {
    pub fn dynamics(self) -> SpectralDynamics {
        match self {
            PopulationClass::Stable => SpectralDynamics::stable(),
            PopulationClass::Diffusive => SpectralDynamics::diffusive(),
            PopulationClass::Blinking => SpectralDynamics::blinking(),
        }
    }
}

/// One emitter: a population preset plus optional per-field overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmitterSpec {
    pub population: PopulationClass,
    /// Fixed strain offset from the pillar's nominal line center.
    pub static_detuning_hz: f64,
    pub brightness: f64,
    /// Marks an emitter that already received the stabilizing treatment.
    pub stabilized: bool,
    // Transition overrides; unset fields keep the library defaults.
    pub center_freq_hz: Option<f64>,
    pub lifetime_s: Option<f64>,
    pub saturation_power_nw: Option<f64>,
    pub max_signal_rate_cps: Option<f64>,
    pub zpl_branching: Option<f64>,
    // Dynamics overrides on top of the population preset.
    pub ou_sigma_hz: Option<f64>,
    pub ou_tau_s: Option<f64>,
    pub ionize_rate_at_sat_hz: Option<f64>,
    pub recovery_rate_hz: Option<f64>,
    pub repump_recovery_prob: Option<f64>,
}

impl Default for EmitterSpec {
    fn default() -> Self {
        EmitterSpec {
            population: PopulationClass::Stable,
            static_detuning_hz: 0.0,
            brightness: 1.0,
            stabilized: false,
            center_freq_hz: None,
            lifetime_s: None,
            saturation_power_nw: None,
            max_signal_rate_cps: None,
            zpl_branching: None,
            ou_sigma_hz: None,
            ou_tau_s: None,
            ionize_rate_at_sat_hz: None,
            recovery_rate_hz: None,
            repump_recovery_prob: None,
        }
    }
}

impl EmitterSpec {
    pub fn transition(&self) -> Result<OpticalTransition> {
        let base = OpticalTransition::siv();
        OpticalTransition::from_lifetime(
            self.center_freq_hz.unwrap_or(base.center_freq_hz),
            self.lifetime_s.unwrap_or(base.lifetime_s),
            self.saturation_power_nw.unwrap_or(base.saturation_power_nw),
            self.max_signal_rate_cps.unwrap_or(base.max_signal_rate_cps),
            self.zpl_branching.unwrap_or(base.zpl_branching),
        )
    }

    pub fn dynamics(&self) -> SpectralDynamics {
        let mut d = self.population.dynamics();
        if let Some(v) = self.ou_sigma_hz {
            d.ou_sigma_hz = v;
        }
        if let Some(v) = self.ou_tau_s {
            d.ou_tau_s = v;
        }
        if let Some(v) = self.ionize_rate_at_sat_hz {
            d.ionize_rate_at_sat_hz = v;
        }
        if let Some(v) = self.recovery_rate_hz {
            d.recovery_rate_hz = v;
        }
        if let Some(v) = self.repump_recovery_prob {
            d.repump_recovery_prob = v;
        }
        d
    }

    /// Builds the emitter at its rest position (no wander drawn yet).
    pub fn build(&self) -> Result<Emitter> {
        let mut cfg = EmitterConfig::new(self.transition()?, self.static_detuning_hz, self.dynamics());
        cfg.brightness = self.brightness;
        let mut emitter = Emitter::new(cfg)?;
        if self.stabilized {
            // Replay the treatment well above both thresholds.
            emitter.stabilize(
                2.0 * crate::emitter::STABILIZATION_MIN_POWER_MW,
                2.0 * crate::emitter::STABILIZATION_MIN_DURATION_H,
            );
        }
        Ok(emitter)
    }
}

/// Scan geometry and timing of a resonant-excitation sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub center_hz: f64,
    pub span_hz: f64,
    pub n_points: usize,
    pub dwell_s: f64,
    /// Leading fraction of each dwell dropped while the laser settles.
    pub settle_fraction: f64,
    pub turnaround_s: f64,
    pub n_passes: usize,
    pub bin_s: f64,
    pub laser_jitter_hz: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let p = SweepPlan::default();
        SweepConfig {
            center_hz: p.center_hz,
            span_hz: p.span_hz,
            n_points: p.n_points,
            dwell_s: p.dwell_s,
            settle_fraction: p.settle_fraction,
            turnaround_s: p.turnaround_s,
            n_passes: p.n_passes,
            bin_s: p.bin_s,
            laser_jitter_hz: p.laser_jitter_hz,
        }
    }
}

impl SweepConfig {
    pub fn plan(&self, power_nw: f64, scheme: DriveScheme) -> SweepPlan {
        SweepPlan {
            center_hz: self.center_hz,
            span_hz: self.span_hz,
            n_points: self.n_points,
            dwell_s: self.dwell_s,
            settle_fraction: self.settle_fraction,
            turnaround_s: self.turnaround_s,
            n_passes: self.n_passes,
            bin_s: self.bin_s,
            laser_jitter_hz: self.laser_jitter_hz,
            power_nw,
            scheme,
        }
    }
}

/// Excitation scheme names as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeName {
    /// Continuous resonant drive, no repump.
    #[serde(rename = "crf")]
    Crf,
    /// Resonant windows interleaved with green repump pulses.
    #[serde(rename = "cr_515")]
    Cr515,
    /// Resonant windows interleaved with blue repump pulses.
    #[serde(rename = "cr_445")]
    Cr445,
}

/// Drive scheme selection plus the interleaving clock.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseConfig {
    pub scheme: SchemeName,
    /// Repump pulse length within one interleave cycle.
    pub repump_length_s: f64,
    /// Resonant probe window within one interleave cycle.
    pub resonant_window_s: f64,
    /// Override of the per-pulse spectral kick width.
    pub jump_sigma_hz: Option<f64>,
    /// Override of the accumulated-wander cap.
    pub walk_cap_hz: Option<f64>,
}

impl Default for PulseConfig {
    fn default() -> Self {
        PulseConfig {
            scheme: SchemeName::Crf,
            repump_length_s: 1.0e-6,
            resonant_window_s: 7.0e-6,
            jump_sigma_hz: None,
            walk_cap_hz: None,
        }
    }
}

impl PulseConfig {
    pub fn drive_scheme(&self) -> Result<DriveScheme> {
        let cycle = self.repump_length_s + self.resonant_window_s;
        let mut scheme = match self.scheme {
            SchemeName::Crf => DriveScheme::continuous_resonant(),
            SchemeName::Cr515 | SchemeName::Cr445 => {
                if !(self.repump_length_s > 0.0) || !(self.resonant_window_s > 0.0) {
                    return Err(Error::Schema(
                        "interleaved schemes need positive repump_length_s and resonant_window_s"
                            .into(),
                    ));
                }
                let jump = match self.scheme {
                    SchemeName::Cr515 => BASE_JUMP_SIGMA_HZ,
                    _ => 3.0 * BASE_JUMP_SIGMA_HZ,
                };
                let cap = match self.scheme {
                    SchemeName::Cr515 => f64::INFINITY,
                    _ => 2.0e9,
                };
                DriveScheme {
                    pulses_per_second: 1.0 / cycle,
                    resonant_duty: self.resonant_window_s / cycle,
                    jump_sigma_hz: jump,
                    walk_cap_hz: cap,
                }
            }
        };
        if let Some(v) = self.jump_sigma_hz {
            if !(v >= 0.0) {
                return Err(Error::Schema("jump_sigma_hz must be >= 0".into()));
            }
            scheme.jump_sigma_hz = v;
        }
        if let Some(v) = self.walk_cap_hz {
            if !(v > 0.0) {
                return Err(Error::Schema("walk_cap_hz must be positive".into()));
            }
            scheme.walk_cap_hz = v;
        }
        Ok(scheme)
    }
}

/// Powers and durations of the optical measurements.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveConfig {
    /// Resonant probe power for sweeps and correlation runs.
    pub power_nw: f64,
    /// Optional power ladder for saturation measurements.
    pub powers_nw: Vec<f64>,
    /// When set, drive through the repump band at this fraction of
    /// saturation instead of resonantly.
    pub off_resonant_fraction: Option<f64>,
    /// Stream length of a coincidence acquisition.
    pub hbt_duration_s: f64,
    /// Lag-histogram bin of the coincidence analysis.
    pub lag_bin_s: f64,
    pub max_lag_s: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig {
            power_nw: 1.2,
            powers_nw: Vec::new(),
            off_resonant_fraction: None,
            hbt_duration_s: 600.0,
            lag_bin_s: 0.2e-9,
            max_lag_s: 20.0e-9,
        }
    }
}

impl DriveConfig {
    pub fn correlator(&self) -> CorrelatorConfig {
        CorrelatorConfig::new(self.lag_bin_s, self.max_lag_s)
    }
}

/// Pulsed-excitation decay measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifetimeConfig {
    pub lifetime_s: f64,
    pub n_photons: u64,
    pub irf_sigma_s: f64,
    pub window_s: f64,
    pub bin_s: f64,
    pub background_fraction: f64,
}

impl Default for LifetimeConfig {
    fn default() -> Self {
        LifetimeConfig {
            lifetime_s: crate::physics::SIV_LIFETIME_S,
            n_photons: 100_000,
            irf_sigma_s: 0.05e-9,
            window_s: 12.0e-9,
            bin_s: 0.016e-9,
            background_fraction: 0.01,
        }
    }
}

impl LifetimeConfig {
    pub fn pulsed(&self) -> PulsedDecayConfig {
        PulsedDecayConfig {
            lifetime_s: self.lifetime_s,
            n_photons: self.n_photons,
            irf_sigma_s: self.irf_sigma_s,
            window_s: self.window_s,
            bin_s: self.bin_s,
            background_fraction: self.background_fraction,
        }
    }
}

/// How a many-site array is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountingMode {
    /// Count per site from the coincidence-dip depth.
    Dip,
    /// Count per site from the detected rate alone.
    Rate,
}

/// Array-survey shape and per-site budgets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurveySection {
    pub n_sites: usize,
    pub mean_occupancy: f64,
    pub counting: CountingMode,
    /// Coincidence time per occupied site.
    pub dwell_s: f64,
    /// Rate-screen time per site.
    pub screen_dwell_s: f64,
    pub detection_threshold_cps: f64,
}

impl Default for SurveySection {
    fn default() -> Self {
        SurveySection {
            n_sites: 220,
            mean_occupancy: 0.53,
            counting: CountingMode::Dip,
            dwell_s: 6.0,
            screen_dwell_s: 1.0,
            detection_threshold_cps: 1000.0,
        }
    }
}

impl SurveySection {
    pub fn g2_config(&self) -> G2SurveyConfig {
        let mut cfg = G2SurveyConfig::new(self.n_sites, self.mean_occupancy);
        cfg.hbt_dwell_s = self.dwell_s;
        cfg.screen_dwell_s = self.screen_dwell_s;
        cfg.detection_threshold_cps = self.detection_threshold_cps;
        cfg
    }

    pub fn rate_config(&self) -> SurveyConfig {
        let mut cfg = SurveyConfig::new(self.n_sites, self.mean_occupancy);
        cfg.dwell_s = self.dwell_s;
        cfg
    }
}

impl ExperimentConfig {
    /// Everything at defaults under the given seed.
    pub fn with_seed(master_seed: u64) -> Self {
        ExperimentConfig {
            master_seed,
            pillar: PillarConfig::default(),
            sweep: SweepConfig::default(),
            pulses: PulseConfig::default(),
            drive: DriveConfig::default(),
            lifetime: LifetimeConfig::default(),
            survey: SurveySection::default(),
        }
    }

    pub fn background(&self) -> BackgroundModel {
        BackgroundModel::new(self.pillar.dark_rate_cps, self.pillar.background_cps_per_nw)
    }

    pub fn emitters(&self) -> Result<Vec<Emitter>> {
        self.pillar.emitters.iter().map(EmitterSpec::build).collect()
    }

    pub fn drive_scheme(&self) -> Result<DriveScheme> {
        self.pulses.drive_scheme()
    }

    pub fn sweep_plan(&self) -> Result<SweepPlan> {
        let plan = self.sweep.plan(self.drive.power_nw, self.drive_scheme()?);
        plan.validate()?;
        Ok(plan)
    }

    /// Cross-field checks beyond what serde enforces.
    pub fn validate(&self) -> Result<()> {
        if self.sweep.dwell_s < self.sweep.bin_s {
            return Err(Error::Schema(format!(
                "sweep.dwell_s ({}) must be at least sweep.bin_s ({})",
                self.sweep.dwell_s, self.sweep.bin_s
            )));
        }
        self.sweep_plan()?;
        if self.pillar.emitters.is_empty() {
            return Err(Error::Schema("pillar.emitters must not be empty".into()));
        }
        self.emitters()?;
        if !(self.pillar.dark_rate_cps >= 0.0) || !(self.pillar.background_cps_per_nw >= 0.0) {
            return Err(Error::Schema(
                "pillar background rates must be >= 0".into(),
            ));
        }
        if !(self.drive.power_nw > 0.0) {
            return Err(Error::Schema("drive.power_nw must be positive".into()));
        }
        for &p in &self.drive.powers_nw {
            if !(p > 0.0) {
                return Err(Error::Schema(
                    "drive.powers_nw entries must be positive".into(),
                ));
            }
        }
        if let Some(s) = self.drive.off_resonant_fraction {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::Schema(
                    "drive.off_resonant_fraction must lie in [0, 1)".into(),
                ));
            }
        }
        if !(self.drive.hbt_duration_s > 0.0) {
            return Err(Error::Schema("drive.hbt_duration_s must be positive".into()));
        }
        if !(self.drive.lag_bin_s > 0.0) || self.drive.max_lag_s < self.drive.lag_bin_s {
            return Err(Error::Schema(format!(
                "drive.max_lag_s ({}) must be at least drive.lag_bin_s ({}), both positive",
                self.drive.max_lag_s, self.drive.lag_bin_s
            )));
        }
        self.lifetime.pulsed().validate()?;
        if self.survey.n_sites == 0 {
            return Err(Error::Schema("survey.n_sites must be positive".into()));
        }
        if !(self.survey.mean_occupancy > 0.0) {
            return Err(Error::Schema(
                "survey.mean_occupancy must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Canonical serialized form: pretty JSON with every field present, so
    /// two configs agree byte-wise exactly when they agree field-wise.
    pub fn canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Hash of the canonical form; recorded in manifests and data headers.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

/// Parses and validates a config document. Syntax damage and schema
/// violations come back as distinct errors, both naming the source.
pub fn parse_config(text: &str, source: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
        if e.is_syntax() || e.is_eof() {
            Error::Parse {
                path: source.to_path_buf(),
                reason: e.to_string(),
            }
        } else {
            Error::Schema(format!("{}: {e}", source.display()))
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, path)
}

/// Writes the canonical form, atomically.
pub fn save_config(path: &Path, cfg: &ExperimentConfig) -> Result<()> {
    atomic_write(path, cfg.canonical_json().as_bytes())
}
