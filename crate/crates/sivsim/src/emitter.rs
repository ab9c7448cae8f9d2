//! Emitter state machine: spectral diffusion, charge blinking, and the
//! response to charge-repump pulse trains.
//!
//! Time advances in fixed bins (20 ms by default). Within a bin the optical
//! rates are constant; between bins the line center diffuses and the charge
//! state may flip. Two diffusion channels are modeled separately because they
//! respond differently to the drive:
//!
//! * an Ornstein-Uhlenbeck offset with stationary sigma `ou_sigma_hz` and
//!   correlation time `ou_tau_s`, always active;
//! * a random-walk offset kicked once per repump pulse, so it freezes under
//!   purely resonant drive and grows with the pulse count otherwise. A finite
//!   `walk_cap_hz` turns the walk into a mean-reverting process with that
//!   stationary sigma, leaving per-pulse kicks unchanged.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{lorentzian, BackgroundModel, OpticalTransition};

/// Stochastic line-center and charge dynamics of one emitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDynamics {
    /// Stationary sigma of the mean-reverting diffusion offset.
    pub ou_sigma_hz: f64,
    /// Correlation time of the mean-reverting offset.
    pub ou_tau_s: f64,
    /// Ionization rate under saturating resonant drive; scales with
    /// `P/(P+Psat)` at finite power. Zero disables blinking.
    pub ionize_rate_at_sat_hz: f64,
    /// Spontaneous recovery rate from the dark charge state.
    pub recovery_rate_hz: f64,
    /// Recovery probability per repump pulse while dark.
    pub repump_recovery_prob: f64,
}

impl SpectralDynamics {
    /// Narrow, non-blinking line.
    pub fn stable() -> Self {
        SpectralDynamics {
            ou_sigma_hz: 85.0e6,
            ou_tau_s: 10.0,
            ionize_rate_at_sat_hz: 0.0,
            recovery_rate_hz: 0.0,
            repump_recovery_prob: 0.9,
        }
    }

    /// Strongly diffusing line, no blinking.
    pub fn diffusive() -> Self {
        SpectralDynamics {
            ou_sigma_hz: 800.0e6,
            ou_tau_s: 60.0,
            ionize_rate_at_sat_hz: 0.0,
            recovery_rate_hz: 0.0,
            repump_recovery_prob: 0.9,
        }
    }

    /// Diffusing line that ionizes under resonant drive and only recovers by
    /// repump, so it goes permanently dark under purely resonant excitation.
    pub fn blinking() -> Self {
        SpectralDynamics {
            ou_sigma_hz: 600.0e6,
            ou_tau_s: 60.0,
            ionize_rate_at_sat_hz: 1.0 / 30.0,
            recovery_rate_hz: 0.0,
            repump_recovery_prob: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ou_sigma_hz < 0.0 {
            return Err(Error::invalid("ou_sigma_hz", "must be >= 0"));
        }
        if self.ou_sigma_hz > 0.0 && self.ou_tau_s <= 0.0 {
            return Err(Error::invalid("ou_tau_s", "must be positive"));
        }
        if self.ionize_rate_at_sat_hz < 0.0 || self.recovery_rate_hz < 0.0 {
            return Err(Error::invalid("rates", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.repump_recovery_prob) {
            return Err(Error::invalid("repump_recovery_prob", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Excitation scheme: how resonant drive is interleaved with repump pulses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveScheme {
    /// Repump pulse rate; 0 means purely resonant drive.
    pub pulses_per_second: f64,
    /// Fraction of wall time spent on resonant drive and collection.
    pub resonant_duty: f64,
    /// Walk kick per repump pulse (sigma of a Gaussian frequency jump).
    pub jump_sigma_hz: f64,
    /// Stationary sigma the walk saturates at; infinite leaves it unbounded.
    pub walk_cap_hz: f64,
}

/// Base per-pulse kick for the gentler repump wavelength.
pub const BASE_JUMP_SIGMA_HZ: f64 = 0.05e6;
/// Interleaved repump cycle: 1 us pulse, 7 us resonant.
pub const REPUMP_CYCLE_S: f64 = 8e-6;
/// Exposure power above which the stabilizing treatment takes hold.
pub const STABILIZATION_MIN_POWER_MW: f64 = 5.0;
/// Exposure duration above which the stabilizing treatment takes hold.
pub const STABILIZATION_MIN_DURATION_H: f64 = 1.0;

impl DriveScheme {
    /// Resonant drive only: no repump pulses, full duty, frozen walk.
    pub fn continuous_resonant() -> Self {
        DriveScheme {
            pulses_per_second: 0.0,
            resonant_duty: 1.0,
            jump_sigma_hz: 0.0,
            walk_cap_hz: f64::INFINITY,
        }
    }

    /// Green repump interleaved with resonant drive: gentle unbounded walk.
    pub fn green_interleaved() -> Self {
        DriveScheme {
            pulses_per_second: 1.0 / REPUMP_CYCLE_S,
            resonant_duty: 7.0 / 8.0,
            jump_sigma_hz: BASE_JUMP_SIGMA_HZ,
            walk_cap_hz: f64::INFINITY,
        }
    }

    /// Blue repump: kicks three times harder but bounded, so the line wanders
    /// inside a fixed envelope instead of diffusing without limit.
    pub fn blue_interleaved() -> Self {
        DriveScheme {
            pulses_per_second: 1.0 / REPUMP_CYCLE_S,
            resonant_duty: 7.0 / 8.0,
            jump_sigma_hz: 3.0 * BASE_JUMP_SIGMA_HZ,
            walk_cap_hz: 2.0e9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pulses_per_second < 0.0 {
            return Err(Error::invalid("pulses_per_second", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.resonant_duty) || self.resonant_duty == 0.0 {
            return Err(Error::invalid("resonant_duty", "must be in (0, 1]"));
        }
        if self.jump_sigma_hz < 0.0 {
            return Err(Error::invalid("jump_sigma_hz", "must be >= 0"));
        }
        if !(self.walk_cap_hz > 0.0) {
            return Err(Error::invalid("walk_cap_hz", "must be positive (may be infinite)"));
        }
        if self.walk_cap_hz.is_finite() && self.jump_sigma_hz >= self.walk_cap_hz {
            return Err(Error::invalid(
                "jump_sigma_hz",
                "per-pulse kick must be smaller than the walk cap",
            ));
        }
        Ok(())
    }
}

/// Static description of one emitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterConfig {
    pub transition: OpticalTransition,
    /// Fixed strain offset of this emitter's line from the nominal center.
    pub static_detuning_hz: f64,
    pub dynamics: SpectralDynamics,
    /// Relative brightness (scales the saturated rate).
    pub brightness: f64,
}

impl EmitterConfig {
    pub fn new(transition: OpticalTransition, static_detuning_hz: f64, dynamics: SpectralDynamics) -> Self {
        EmitterConfig {
            transition,
            static_detuning_hz,
            dynamics,
            brightness: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transition.validate()?;
        self.dynamics.validate()?;
        if !(self.brightness > 0.0) {
            return Err(Error::invalid("brightness", "must be positive"));
        }
        Ok(())
    }
}

/// Live emitter: configuration plus evolving state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    pub config: EmitterConfig,
    /// Mean-reverting diffusion offset.
    pub ou_offset_hz: f64,
    /// Repump-induced walk offset.
    pub walk_offset_hz: f64,
    /// Dark (ionized) charge state; emits nothing while set.
    pub ionized: bool,
    /// Feedback lock applied: dynamics pinned, repump response suppressed.
    pub stabilized: bool,
}

impl Emitter {
    /// Emitter starting exactly at its static line position.
    pub fn new(config: EmitterConfig) -> Result<Self> {
        config.validate()?;
        Ok(Emitter {
            config,
            ou_offset_hz: 0.0,
            walk_offset_hz: 0.0,
            ionized: false,
            stabilized: false,
        })
    }

    /// Emitter with the diffusion offset drawn from its stationary law, the
    /// state an emitter relaxes to when left alone.
    pub fn new_stationary<R: Rng + ?Sized>(config: EmitterConfig, rng: &mut R) -> Result<Self> {
        let mut e = Emitter::new(config)?;
        let z: f64 = StandardNormal.sample(rng);
        e.ou_offset_hz = e.config.dynamics.ou_sigma_hz * z;
        Ok(e)
    }

    /// Instantaneous line center.
    pub fn center_hz(&self) -> f64 {
        self.config.transition.center_freq_hz
            + self.config.static_detuning_hz
            + self.ou_offset_hz
            + self.walk_offset_hz
    }

    /// Detected signal rate under resonant drive at `laser_hz`, `power_nw`.
    /// Zero while dark. The line is power-broadened and the peak rate
    /// saturates with power.
    pub fn signal_rate_cps(&self, laser_hz: f64, power_nw: f64) -> f64 {
        if self.ionized {
            return 0.0;
        }
        let t = &self.config.transition;
        let peak = self.config.brightness * t.saturation_rate(power_nw);
        let fwhm = t.power_broadened_fwhm(power_nw);
        lorentzian(laser_hz - self.center_hz(), fwhm, peak, 0.0)
    }

    /// Emission correlation time at this drive power (sets the antibunching
    /// recovery in photon streams).
    pub fn correlation_time_s(&self, power_nw: f64) -> f64 {
        self.config.transition.antibunching_time(power_nw)
    }

    /// Advance the stochastic state by one bin of `dt` seconds under `scheme`
    /// at `power_nw`. Rates for the elapsing bin should be read *before*
    /// calling this; state changes land on the next bin boundary.
    pub fn advance_bin<R: Rng + ?Sized>(
        &mut self,
        dt: f64,
        scheme: &DriveScheme,
        power_nw: f64,
        rng: &mut R,
    ) {
        debug_assert!(dt > 0.0);
        let pulses = if self.stabilized {
            0.0
        } else {
            scheme.pulses_per_second * dt
        };

        // mean-reverting diffusion: exact one-step update
        let d = &self.config.dynamics;
        if d.ou_sigma_hz > 0.0 {
            let decay = (-dt / d.ou_tau_s).exp();
            let z: f64 = StandardNormal.sample(rng);
            self.ou_offset_hz = self.ou_offset_hz * decay
                + d.ou_sigma_hz * (1.0 - decay * decay).sqrt() * z;
        }

        // repump walk, aggregated over the bin's pulse train
        if pulses > 0.0 && scheme.jump_sigma_hz > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            if scheme.walk_cap_hz.is_finite() {
                let ratio = scheme.jump_sigma_hz / scheme.walk_cap_hz;
                // per-pulse retention chosen so the stationary sigma is the cap
                let retention = (1.0 - ratio * ratio).sqrt().powf(pulses);
                self.walk_offset_hz = self.walk_offset_hz * retention
                    + scheme.walk_cap_hz * (1.0 - retention * retention).sqrt() * z;
            } else {
                self.walk_offset_hz += scheme.jump_sigma_hz * pulses.sqrt() * z;
            }
        }

        // charge telegraph: at most one flip per bin (bins are far shorter
        // than the blink timescales)
        if self.stabilized {
            self.ionized = false;
        } else if self.ionized {
            let spontaneous = 1.0 - (-d.recovery_rate_hz * dt).exp();
            let repump = if pulses > 0.0 {
                1.0 - (1.0 - d.repump_recovery_prob).powf(pulses)
            } else {
                0.0
            };
            let p_recover = 1.0 - (1.0 - spontaneous) * (1.0 - repump);
            if rng.gen_bool(p_recover.clamp(0.0, 1.0)) {
                self.ionized = false;
            }
        } else if d.ionize_rate_at_sat_hz > 0.0 {
            let s = self.config.transition.saturation_fraction(power_nw);
            let hazard = d.ionize_rate_at_sat_hz * s * scheme.resonant_duty;
            let p_ionize = 1.0 - (-hazard * dt).exp();
            if rng.gen_bool(p_ionize.clamp(0.0, 1.0)) {
                self.ionized = true;
            }
        }
    }

    /// High-power blue exposure that permanently calms the charge
    /// environment. Takes hold only above both thresholds (power AND
    /// duration): pins the charge state, suppresses the repump response, and
    /// narrows the diffusion to the stable-class level, without decay.
    /// Below either threshold the emitter is left exactly as it was.
    /// Returns whether anything changed.
    pub fn stabilize(&mut self, exposure_power_mw: f64, exposure_duration_h: f64) -> bool {
        if !(exposure_power_mw > STABILIZATION_MIN_POWER_MW)
            || !(exposure_duration_h > STABILIZATION_MIN_DURATION_H)
            || self.stabilized
        {
            return false;
        }
        let stable = SpectralDynamics::stable();
        let d = &self.config.dynamics;
        self.config.dynamics = SpectralDynamics {
            ou_sigma_hz: stable.ou_sigma_hz.min(d.ou_sigma_hz),
            ou_tau_s: stable.ou_tau_s,
            ionize_rate_at_sat_hz: 0.0,
            recovery_rate_hz: 0.0,
            repump_recovery_prob: d.repump_recovery_prob,
        };
        self.ou_offset_hz = self
            .ou_offset_hz
            .clamp(-3.0 * stable.ou_sigma_hz, 3.0 * stable.ou_sigma_hz);
        self.ionized = false;
        self.stabilized = true;
        true
    }
}

/// Total detected rate of a collection of emitters over a common background.
pub fn total_rate_cps(
    emitters: &[Emitter],
    background: &BackgroundModel,
    laser_hz: f64,
    power_nw: f64,
) -> f64 {
    let signal: f64 = emitters
        .iter()
        .map(|e| e.signal_rate_cps(laser_hz, power_nw))
        .sum();
    signal + background.rate(power_nw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::SIV_SATURATION_POWER_NW;
    use crate::rng::{domain, task_rng};
    use approx::assert_relative_eq;

    fn emitter(dynamics: SpectralDynamics) -> Emitter {
        Emitter::new(EmitterConfig::new(OpticalTransition::siv(), 0.0, dynamics)).unwrap()
    }

    #[test]
    fn resonant_rate_saturates_and_broadens() {
        let e = emitter(SpectralDynamics::stable());
        let p = SIV_SATURATION_POWER_NW;
        assert_relative_eq!(
            e.signal_rate_cps(e.center_hz(), p),
            0.5 * 9.7e3,
            max_relative = 1e-12
        );
        // half the power-broadened width off resonance: half the peak rate
        let fwhm = e.config.transition.power_broadened_fwhm(p);
        // absolute-frequency arithmetic rounds at the 0.1 Hz level
        assert_relative_eq!(
            e.signal_rate_cps(e.center_hz() + 0.5 * fwhm, p),
            0.25 * 9.7e3,
            max_relative = 1e-9
        );
    }

    #[test]
    fn dark_emitter_is_silent() {
        let mut e = emitter(SpectralDynamics::blinking());
        e.ionized = true;
        assert_eq!(e.signal_rate_cps(e.center_hz(), 10.0), 0.0);
    }

    #[test]
    fn ou_offset_has_stationary_spread() {
        // long trajectory: sample sigma must match the configured sigma
        let mut e = emitter(SpectralDynamics::stable());
        let scheme = DriveScheme::continuous_resonant();
        let mut rng = task_rng(7, domain::EMITTER, 0);
        let mut samples = Vec::new();
        // step = tau/5 decorrelates quickly; 40_000 steps ~ 8000 tau
        for _ in 0..40_000 {
            e.advance_bin(2.0, &scheme, 1.2, &mut rng);
            samples.push(e.ou_offset_hz);
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / samples.len() as f64;
        let sigma = var.sqrt();
        assert!(
            (sigma / 60.0e6 - 1.0).abs() < 0.05,
            "stationary sigma {sigma:.3e}"
        );
        assert!(mean.abs() < 3.0e6, "mean {mean:.3e}");
    }

    #[test]
    fn walk_freezes_without_repump_and_grows_with_it() {
        let mut rng = task_rng(8, domain::EMITTER, 0);
        let mut frozen = emitter(SpectralDynamics::stable());
        for _ in 0..100 {
            frozen.advance_bin(0.02, &DriveScheme::continuous_resonant(), 1.2, &mut rng);
        }
        assert_eq!(frozen.walk_offset_hz, 0.0);

        // diffusion of the walk alone: variance grows like sigma^2 * pulses
        let scheme = DriveScheme::green_interleaved();
        let n_bins = 2000;
        let pulses_per_bin = scheme.pulses_per_second * 0.02;
        let mut sq = 0.0;
        let n_rep = 200;
        for rep in 0..n_rep {
            let mut e = emitter(SpectralDynamics {
                ou_sigma_hz: 0.0,
                ..SpectralDynamics::stable()
            });
            let mut rng = task_rng(9, domain::EMITTER, rep);
            for _ in 0..n_bins {
                e.advance_bin(0.02, &scheme, 1.2, &mut rng);
            }
            sq += e.walk_offset_hz * e.walk_offset_hz;
        }
        let sigma = (sq / n_rep as f64).sqrt();
        let expect = scheme.jump_sigma_hz * (pulses_per_bin * n_bins as f64).sqrt();
        assert!(
            (sigma / expect - 1.0).abs() < 0.15,
            "walk sigma {sigma:.3e} vs {expect:.3e}"
        );
    }

    #[test]
    fn capped_walk_saturates_at_the_cap() {
        let scheme = DriveScheme {
            jump_sigma_hz: 50.0e6,
            walk_cap_hz: 2.0e9,
            ..DriveScheme::blue_interleaved()
        };
        let mut sq = 0.0;
        let n_rep = 400;
        for rep in 0..n_rep {
            let mut e = emitter(SpectralDynamics {
                ou_sigma_hz: 0.0,
                ..SpectralDynamics::stable()
            });
            let mut rng = task_rng(10, domain::EMITTER, rep);
            // enough pulses that the retention has fully relaxed
            for _ in 0..200 {
                e.advance_bin(0.02, &scheme, 1.2, &mut rng);
            }
            sq += e.walk_offset_hz * e.walk_offset_hz;
        }
        let sigma = (sq / n_rep as f64).sqrt();
        assert!(
            (sigma / 2.0e9 - 1.0).abs() < 0.1,
            "capped walk sigma {sigma:.3e}"
        );
    }

    #[test]
    fn blinking_ionizes_under_drive_and_recovers_by_repump() {
        let mut e = emitter(SpectralDynamics::blinking());
        let mut rng = task_rng(11, domain::EMITTER, 0);
        let resonant = DriveScheme::continuous_resonant();
        // saturating drive, 1/ionize_rate = 30 s: 600 s is 20 mean lifetimes
        let mut went_dark = false;
        for _ in 0..30_000 {
            e.advance_bin(0.02, &resonant, 1e6, &mut rng);
            if e.ionized {
                went_dark = true;
                break;
            }
        }
        assert!(went_dark, "never ionized under saturating resonant drive");
        // no repump, no spontaneous recovery: stays dark forever
        for _ in 0..10_000 {
            e.advance_bin(0.02, &resonant, 1e6, &mut rng);
            assert!(e.ionized);
        }
        // one repumped bin recovers it almost surely
        e.advance_bin(0.02, &DriveScheme::green_interleaved(), 1e6, &mut rng);
        assert!(!e.ionized);
    }

    #[test]
    fn stabilize_is_an_exact_noop_below_either_threshold() {
        let cases = [(1.0, 10.0), (6.0, 0.5), (5.0, 2.0), (6.0, 1.0), (0.0, 0.0)];
        for (power_mw, duration_h) in cases {
            let mut e = emitter(SpectralDynamics::blinking());
            e.ionized = true;
            e.ou_offset_hz = 4.0e8;
            let before = e.clone();
            assert!(
                !e.stabilize(power_mw, duration_h),
                "({power_mw} mW, {duration_h} h) should not take hold"
            );
            assert_eq!(e, before, "({power_mw} mW, {duration_h} h) changed state");
        }
    }

    #[test]
    fn stabilize_locks_a_diffusive_emitter() {
        let mut e = emitter(SpectralDynamics::diffusive());
        e.ionized = true;
        e.walk_offset_hz = 5.0e8;
        assert!(e.stabilize(6.0, 2.0));
        assert!(e.stabilized);
        assert!(!e.ionized);
        assert_eq!(
            e.config.dynamics.ou_sigma_hz,
            SpectralDynamics::stable().ou_sigma_hz
        );
        assert_eq!(e.config.dynamics.ionize_rate_at_sat_hz, 0.0);
        // locked emitters ignore repump kicks entirely
        let walk_before = e.walk_offset_hz;
        let mut rng = task_rng(12, domain::EMITTER, 0);
        for _ in 0..100 {
            e.advance_bin(0.02, &DriveScheme::blue_interleaved(), 1.2, &mut rng);
            assert!(!e.ionized);
        }
        assert_eq!(e.walk_offset_hz, walk_before);
        // applying the treatment twice changes nothing further
        assert!(!e.stabilize(6.0, 2.0));
    }

    #[test]
    fn stabilize_flags_an_already_quiet_emitter_without_touching_its_width() {
        let mut e = emitter(SpectralDynamics {
            ou_sigma_hz: 30.0e6,
            ..SpectralDynamics::stable()
        });
        assert!(e.stabilize(6.0, 2.0));
        assert!(e.stabilized);
        // already narrower than the stable class: width is not degraded
        assert_eq!(e.config.dynamics.ou_sigma_hz, 30.0e6);
    }

    #[test]
    fn scheme_validation_rejects_bad_parameters() {
        let mut s = DriveScheme::green_interleaved();
        s.resonant_duty = 0.0;
        assert!(s.validate().is_err());
        let mut s = DriveScheme::blue_interleaved();
        s.jump_sigma_hz = s.walk_cap_hz;
        assert!(s.validate().is_err());
        assert!(DriveScheme::continuous_resonant().validate().is_ok());
    }
}
