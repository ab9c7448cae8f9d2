//! Photon time-tag synthesis.
//!
//! Signal photons from each emitter form a renewal process whose hazard
//! recovers after every detection, `h(t) = R (1 - exp(-(t - t_last)/tau_c))`:
//! that is what produces the antibunching dip in the intensity correlation.
//! Sampling is by thinning against the ceiling rate `R`, which is exact for
//! piecewise-constant `R`. Background photons are an independent Poisson
//! process. Every tag lands on one of two detector channels at random, the
//! splitter geometry used by coincidence measurements.
//!
//! The mean detected rate of the renewal process sits slightly below `R`
//! (one `tau_c` of dead weight per emission, a relative deficit `~R tau_c`);
//! callers that need exact rates should measure them from the stream.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::emitter::{DriveScheme, Emitter};
use crate::error::{Error, Result};
use crate::physics::BackgroundModel;
use crate::rng::{domain, task_rng};

/// One detected photon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeTag {
    /// Detector channel, 1 or 2.
    pub channel: u8,
    pub time_s: f64,
}

/// How the emitters are driven during tag acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Drive {
    /// Narrow-band drive at a fixed frequency: each emitter's rate follows
    /// its (possibly diffusing) lineshape.
    Resonant { laser_hz: f64, power_nw: f64 },
    /// Broadband drive pumping every emitter at the same fraction of its
    /// saturated rate, with the correspondingly shortened recovery time.
    OffResonant { saturation_fraction: f64 },
}

impl Drive {
    /// Power that produces the same saturation fraction on the resonant
    /// scale; drives the shared charge and diffusion dynamics.
    fn equivalent_power_nw(&self, saturation_power_nw: f64) -> f64 {
        match *self {
            Drive::Resonant { power_nw, .. } => power_nw,
            Drive::OffResonant { saturation_fraction: s } => {
                saturation_power_nw * s / (1.0 - s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonStreamConfig {
    pub duration_s: f64,
    /// Dynamics step; rates are constant within one bin.
    pub bin_s: f64,
    pub drive: Drive,
    pub scheme: DriveScheme,
    pub background: BackgroundModel,
    /// Probability that a tag lands on channel 1.
    pub splitter: f64,
}

impl PhotonStreamConfig {
    pub fn new(duration_s: f64, drive: Drive) -> Self {
        PhotonStreamConfig {
            duration_s,
            bin_s: 0.02,
            drive,
            scheme: DriveScheme::continuous_resonant(),
            background: BackgroundModel::none(),
            splitter: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) {
            return Err(Error::invalid("duration_s", "must be positive"));
        }
        if !(self.bin_s > 0.0) {
            return Err(Error::invalid("bin_s", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.splitter) {
            return Err(Error::invalid("splitter", "must be in [0, 1]"));
        }
        if let Drive::OffResonant { saturation_fraction: s } = self.drive {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::invalid("saturation_fraction", "must be in [0, 1)"));
            }
        }
        self.scheme.validate()
    }
}

struct EmitterChannel {
    emitter: Emitter,
    rng: ChaCha12Rng,
    /// Last accepted emission time; hazard suppression references this.
    t_last: f64,
}

/// Chunked generator of merged, time-ordered photon tags.
///
/// Each call to [`next_chunk`](PhotonStream::next_chunk) advances a fixed
/// wall-clock span and returns its tags, so arbitrarily long acquisitions
/// run in constant memory.
pub struct PhotonStream {
    config: PhotonStreamConfig,
    channels: Vec<EmitterChannel>,
    background_rng: ChaCha12Rng,
    t: f64,
    chunk_bins: usize,
    total: u64,
}

impl PhotonStream {
    pub fn new(emitters: Vec<Emitter>, config: PhotonStreamConfig, master_seed: u64) -> Result<Self> {
        config.validate()?;
        let channels = emitters
            .into_iter()
            .enumerate()
            .map(|(i, emitter)| EmitterChannel {
                emitter,
                rng: task_rng(master_seed, domain::EMITTER, i as u64),
                t_last: f64::NEG_INFINITY,
            })
            .collect();
        Ok(PhotonStream {
            config,
            channels,
            background_rng: task_rng(master_seed, domain::BACKGROUND, 0),
            t: 0.0,
            chunk_bins: 1000,
            total: 0,
        })
    }

    /// Total tags produced so far.
    pub fn total_tags(&self) -> u64 {
        self.total
    }

    pub fn elapsed_s(&self) -> f64 {
        self.t
    }

    pub fn finished(&self) -> bool {
        self.t >= self.config.duration_s
    }

    /// Tags of the next wall-clock span, time-ordered; `None` once the
    /// configured duration is exhausted.
    pub fn next_chunk(&mut self) -> Option<Vec<TimeTag>> {
        if self.finished() {
            return None;
        }
        let bin = self.config.bin_s;
        let mut tags: Vec<TimeTag> = Vec::new();
        for _ in 0..self.chunk_bins {
            if self.finished() {
                break;
            }
            let t0 = self.t;
            let t1 = (t0 + bin).min(self.config.duration_s);
            self.sample_bin(t0, t1, &mut tags);
            self.t = t0 + bin;
        }
        tags.sort_unstable_by(|a, b| a.time_s.total_cmp(&b.time_s));
        self.total += tags.len() as u64;
        Some(tags)
    }

    /// Run the stream to completion, delivering every tag to `f` in time
    /// order.
    pub fn for_each_tag(mut self, mut f: impl FnMut(TimeTag)) -> u64 {
        while let Some(chunk) = self.next_chunk() {
            for tag in chunk {
                f(tag);
            }
        }
        self.total
    }

    /// Collect the whole stream; only sensible for short acquisitions.
    pub fn collect_all(mut self) -> Vec<TimeTag> {
        let mut out = Vec::new();
        while let Some(chunk) = self.next_chunk() {
            out.extend(chunk);
        }
        out
    }

    fn sample_bin(&mut self, t0: f64, t1: f64, tags: &mut Vec<TimeTag>) {
        let cfg = &self.config;
        let duty = cfg.scheme.resonant_duty;
        for ch in &mut self.channels {
            let sat_p = ch.emitter.config.transition.saturation_power_nw;
            let power = cfg.drive.equivalent_power_nw(sat_p);
            let (rate, tau_c) = match cfg.drive {
                Drive::Resonant { laser_hz, power_nw } => (
                    ch.emitter.signal_rate_cps(laser_hz, power_nw),
                    ch.emitter.correlation_time_s(power_nw),
                ),
                Drive::OffResonant { saturation_fraction: s } => {
                    let r = if ch.emitter.ionized {
                        0.0
                    } else {
                        s * ch.emitter.config.brightness
                            * ch.emitter.config.transition.max_signal_rate_cps
                    };
                    (r, ch.emitter.config.transition.lifetime_s / (1.0 - s))
                }
            };
            let rate = rate * duty;
            if rate > 0.0 {
                let mut t = t0;
                loop {
                    t += exp_sample(&mut ch.rng) / rate;
                    if t >= t1 {
                        break;
                    }
                    let gap = t - ch.t_last;
                    let accept = 1.0 - (-gap / tau_c).exp();
                    if ch.rng.gen::<f64>() < accept {
                        ch.t_last = t;
                        tags.push(TimeTag {
                            channel: pick_channel(&mut ch.rng, cfg.splitter),
                            time_s: t,
                        });
                    }
                }
            }
            ch.emitter.advance_bin(t1 - t0, &cfg.scheme, power, &mut ch.rng);
        }

        let bg_rate = cfg.background.rate(match cfg.drive {
            Drive::Resonant { power_nw, .. } => power_nw,
            Drive::OffResonant { .. } => 0.0,
        }) * duty;
        if bg_rate > 0.0 {
            let mut t = t0;
            loop {
                t += exp_sample(&mut self.background_rng) / bg_rate;
                if t >= t1 {
                    break;
                }
                tags.push(TimeTag {
                    channel: pick_channel(&mut self.background_rng, cfg.splitter),
                    time_s: t,
                });
            }
        }
    }
}

fn exp_sample<R: Rng>(rng: &mut R) -> f64 {
    // inverse transform; gen() is in [0, 1), so the argument never hits 0
    -(1.0 - rng.gen::<f64>()).ln()
}

fn pick_channel<R: Rng>(rng: &mut R, splitter: f64) -> u8 {
    if rng.gen::<f64>() < splitter {
        1
    } else {
        2
    }
}

/// Pulsed-excitation decay histogram.
///
/// Delays are exponential with Gaussian timing jitter from the instrument
/// response, over a uniform background floor. The histogram starts at zero
/// delay with the pulse placed a few jitter widths in, so the full rising
/// edge is visible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulsedDecayConfig {
    pub lifetime_s: f64,
    pub n_photons: u64,
    /// Gaussian sigma of the instrument response.
    pub irf_sigma_s: f64,
    /// Histogram span; must hold many lifetimes.
    pub window_s: f64,
    pub bin_s: f64,
    /// Fraction of detected photons that are uniform background.
    pub background_fraction: f64,
}

impl PulsedDecayConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lifetime_s > 0.0) {
            return Err(Error::invalid("lifetime_s", "must be positive"));
        }
        if self.n_photons == 0 {
            return Err(Error::invalid("n_photons", "must be positive"));
        }
        if !(self.irf_sigma_s >= 0.0) {
            return Err(Error::invalid("irf_sigma_s", "must be >= 0"));
        }
        if !(self.bin_s > 0.0) || !(self.window_s > 10.0 * self.bin_s) {
            return Err(Error::invalid("window_s", "must span many bins"));
        }
        if self.window_s < 5.0 * self.lifetime_s {
            return Err(Error::invalid("window_s", "must hold several lifetimes"));
        }
        if !(0.0..=1.0).contains(&self.background_fraction) {
            return Err(Error::invalid("background_fraction", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Simulate a pulsed decay measurement; returns bin centers and counts.
pub fn pulsed_decay_histogram(
    cfg: &PulsedDecayConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let n_bins = (cfg.window_s / cfg.bin_s).round() as usize;
    let mut counts = vec![0.0; n_bins];
    let pulse_t = 5.0 * cfg.irf_sigma_s + cfg.bin_s;
    for _ in 0..cfg.n_photons {
        let t = if rng.gen::<f64>() < cfg.background_fraction {
            rng.gen::<f64>() * cfg.window_s
        } else {
            let jitter: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * cfg.irf_sigma_s;
            pulse_t + exp_sample(rng) * cfg.lifetime_s + jitter
        };
        if t >= 0.0 && t < cfg.window_s {
            counts[(t / cfg.bin_s) as usize] += 1.0;
        }
    }
    let centers = (0..n_bins)
        .map(|i| (i as f64 + 0.5) * cfg.bin_s)
        .collect();
    Ok((centers, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emitter::{EmitterConfig, SpectralDynamics};
    use crate::physics::OpticalTransition;
    use crate::rng::{domain, task_rng};

    fn quiet_emitter(rate_limit: f64, lifetime_s: f64) -> Emitter {
        let mut t = OpticalTransition::siv();
        t.max_signal_rate_cps = rate_limit;
        t.lifetime_s = lifetime_s;
        t.natural_fwhm_hz = crate::physics::lifetime_limited_fwhm(lifetime_s);
        let dyn_off = SpectralDynamics {
            ou_sigma_hz: 0.0,
            ..SpectralDynamics::stable()
        };
        Emitter::new(EmitterConfig::new(t, 0.0, dyn_off)).unwrap()
    }

    #[test]
    fn mean_rate_matches_the_renewal_prediction() {
        // R tau_c = 0.01: the detected rate sits 1% below the ceiling
        let rate = 2.0e5;
        let tau_c = 50.0e-9;
        let e = quiet_emitter(2.0 * rate, tau_c); // half saturation at Psat
        let drive = Drive::Resonant {
            laser_hz: e.center_hz(),
            power_nw: e.config.transition.saturation_power_nw,
        };
        // at Psat the correlation time halves
        assert!((e.correlation_time_s(23.0) - 0.5 * tau_c).abs() < 1e-12);
        let cfg = PhotonStreamConfig::new(30.0, drive);
        let stream = PhotonStream::new(vec![e], cfg, 101).unwrap();
        let n = stream.for_each_tag(|_| {});
        let r_ceiling = rate; // 2e5 * 0.5 saturation
        let r_expected = r_ceiling / (1.0 + r_ceiling * 0.5 * tau_c);
        let r_measured = n as f64 / 30.0;
        assert!(
            (r_measured / r_expected - 1.0).abs() < 0.005,
            "measured {r_measured:.1} vs {r_expected:.1}"
        );
        // and the deficit really is there: more than half a percent below R
        assert!(r_measured < 0.998 * r_ceiling);
    }

    #[test]
    fn close_pairs_are_suppressed() {
        let rate = 1.0e5;
        let tau_c = 200.0e-9;
        let e = quiet_emitter(2.0 * rate, tau_c);
        let drive = Drive::Resonant {
            laser_hz: e.center_hz(),
            power_nw: e.config.transition.saturation_power_nw,
        };
        let tags = PhotonStream::new(vec![e], PhotonStreamConfig::new(20.0, drive), 7)
            .unwrap()
            .collect_all();
        let tau_eff = 0.5 * tau_c;
        let mut close = 0_u64;
        let mut pairs = 0_u64;
        for w in tags.windows(2) {
            let gap = w[1].time_s - w[0].time_s;
            assert!(gap >= 0.0);
            pairs += 1;
            if gap < 0.1 * tau_eff {
                close += 1;
            }
        }
        // Poisson would give rate * 0.1 tau_eff per pair; the renewal hazard
        // suppresses that by ~20x (1 - exp(-gap/tau) ~ gap/tau, mean 0.05)
        let poisson_expect = pairs as f64 * rate * 0.1 * tau_eff;
        assert!(
            (close as f64) < 0.2 * poisson_expect,
            "close pairs {close} vs Poisson {poisson_expect:.1}"
        );
    }

    #[test]
    fn off_resonant_drive_sets_rate_and_shortens_recovery() {
        let e = quiet_emitter(1.0e5, 1.0e-6);
        let drive = Drive::OffResonant {
            saturation_fraction: 0.5,
        };
        let cfg = PhotonStreamConfig::new(40.0, drive);
        let stream = PhotonStream::new(vec![e], cfg, 3).unwrap();
        let n = stream.for_each_tag(|_| {});
        // rate 5e4, tau_c = 2e-6: deficit factor 1/(1 + 0.1) = 0.909
        let expected = 5.0e4 / (1.0 + 5.0e4 * 2.0e-6);
        let measured = n as f64 / 40.0;
        assert!(
            (measured / expected - 1.0).abs() < 0.01,
            "measured {measured:.1} vs {expected:.1}"
        );
    }

    #[test]
    fn background_is_poisson_and_channels_balance() {
        let cfg = PhotonStreamConfig {
            background: BackgroundModel {
                dark_rate_cps: 5.0e4,
                linear_cps_per_nw: 0.0,
            },
            ..PhotonStreamConfig::new(
                20.0,
                Drive::Resonant {
                    laser_hz: 0.0,
                    power_nw: 1.0,
                },
            )
        };
        let tags = PhotonStream::new(vec![], cfg, 55).unwrap().collect_all();
        let n = tags.len() as f64;
        assert!((n / (5.0e4 * 20.0) - 1.0).abs() < 0.01, "{n} tags");
        let ones = tags.iter().filter(|t| t.channel == 1).count() as f64;
        // binomial: 3 sigma is ~1.5e-3 of the total
        assert!((ones / n - 0.5).abs() < 0.005, "channel-1 fraction {}", ones / n);
        // Fano factor of 1 s counting bins close to 1
        let mut bins = vec![0.0_f64; 20];
        for t in &tags {
            bins[(t.time_s as usize).min(19)] += 1.0;
        }
        let mean = bins.iter().sum::<f64>() / 20.0;
        let var = bins.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / 19.0;
        assert!((var / mean - 1.0).abs() < 0.5, "Fano {}", var / mean);
    }

    #[test]
    fn streams_are_reproducible_and_seed_sensitive() {
        let e = quiet_emitter(1.0e4, 1.0e-6);
        let mk = |seed| {
            let drive = Drive::Resonant {
                laser_hz: e.center_hz(),
                power_nw: 23.0,
            };
            PhotonStream::new(vec![e.clone()], PhotonStreamConfig::new(5.0, drive), seed)
                .unwrap()
                .collect_all()
        };
        let a = mk(1);
        let b = mk(1);
        let c = mk(2);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn chunks_concatenate_in_time_order() {
        let e = quiet_emitter(5.0e4, 1.0e-6);
        let drive = Drive::Resonant {
            laser_hz: e.center_hz(),
            power_nw: 23.0,
        };
        let mut stream =
            PhotonStream::new(vec![e], PhotonStreamConfig::new(60.0, drive), 9).unwrap();
        let mut last = f64::NEG_INFINITY;
        let mut n_chunks = 0;
        while let Some(chunk) = stream.next_chunk() {
            n_chunks += 1;
            for tag in &chunk {
                assert!(tag.time_s >= last);
                last = tag.time_s;
            }
        }
        assert!(n_chunks >= 3, "expected several chunks, got {n_chunks}");
        assert!(last <= 60.0);
    }

    #[test]
    fn decay_histogram_recovers_the_lifetime() {
        use crate::fit::{fit_exponential_decay, Weighting};
        let cfg = PulsedDecayConfig {
            lifetime_s: 1.69e-9,
            n_photons: 200_000,
            irf_sigma_s: 0.05e-9,
            window_s: 40.0e-9,
            bin_s: 0.1e-9,
            background_fraction: 0.02,
        };
        let mut rng = task_rng(17, domain::LIFETIME, 0);
        let (t, counts) = pulsed_decay_histogram(&cfg, &mut rng).unwrap();
        assert_eq!(t.len(), 400);
        let total: f64 = counts.iter().sum();
        assert!(total > 0.99 * 200_000.0);
        let fit = fit_exponential_decay(&t, &counts, &Weighting::PoissonCounts).unwrap();
        let tau = fit.value("lifetime").unwrap();
        assert!(
            (tau / 1.69e-9 - 1.0).abs() < 0.02,
            "lifetime {tau:.4e}"
        );
    }
}
