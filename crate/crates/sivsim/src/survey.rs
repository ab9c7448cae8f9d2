//! Array surveys: many fabricated sites, each hosting a random number of
//! emitters, measured site by site to estimate per-site counts and from
//! those counts the mean occupancy of the process that created them.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::correlator::{g2, CorrelatorConfig, StartStopAccumulator};
use crate::emitter::{Emitter, EmitterConfig, SpectralDynamics};
use crate::error::{Error, Result};
use crate::fit::{fit_lorentzian, fit_poisson_mean, PoissonFit, Weighting};
use crate::physics::{lorentzian, BackgroundModel, OpticalTransition};
use crate::rng::{domain, task_rng};
use crate::stream::{Drive, PhotonStream, PhotonStreamConfig};

/// One measured site.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteRecord {
    pub site: usize,
    /// Number of emitters actually placed.
    pub true_emitters: u32,
    pub measured_rate_cps: f64,
    /// Count inferred from the measurement.
    pub estimated_emitters: u32,
    /// Dip depth of the correlation measurement, when one was made.
    pub g2_zero: Option<f64>,
}

/// Survey outcome: per-site records plus the occupancy estimate rebuilt
/// from the estimated counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurveyResult {
    pub sites: Vec<SiteRecord>,
    /// Mean of the true per-site counts actually placed.
    pub realized_mean: f64,
    /// Occupancy fitted to the estimated counts.
    pub occupancy: PoissonFit,
    /// Fraction of sites whose estimated count equals the true count.
    pub classification_accuracy: f64,
}

impl SurveyResult {
    /// Fraction of sites with at least one estimated emitter.
    pub fn detected_fraction(&self) -> f64 {
        let hits = self
            .sites
            .iter()
            .filter(|s| s.estimated_emitters > 0)
            .count();
        hits as f64 / self.sites.len() as f64
    }

    fn assemble(sites: Vec<SiteRecord>) -> Result<SurveyResult> {
        let estimated: Vec<u64> = sites
            .iter()
            .map(|s| u64::from(s.estimated_emitters))
            .collect();
        let occupancy = fit_poisson_mean(&estimated)?;
        let true_total: u64 = sites.iter().map(|s| u64::from(s.true_emitters)).sum();
        let correct = sites
            .iter()
            .filter(|s| s.estimated_emitters == s.true_emitters)
            .count();
        Ok(SurveyResult {
            realized_mean: true_total as f64 / sites.len() as f64,
            occupancy,
            classification_accuracy: correct as f64 / sites.len() as f64,
            sites,
        })
    }
}

/// Rate-threshold survey: counts are read off the background-subtracted
/// rate in units of one emitter's brightness. Fast screening mode; blind to
/// emitters hiding behind one another in brightness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurveyConfig {
    pub n_sites: usize,
    /// Mean of the Poisson law placing emitters on sites.
    pub mean_occupancy: f64,
    /// Counting time per site.
    pub dwell_s: f64,
    /// Detected rate contributed by one emitter.
    pub rate_per_emitter_cps: f64,
    pub background: BackgroundModel,
    /// Excitation power used only to evaluate the background rate.
    pub power_nw: f64,
}

impl SurveyConfig {
    pub fn new(n_sites: usize, mean_occupancy: f64) -> Self {
        SurveyConfig {
            n_sites,
            mean_occupancy,
            dwell_s: 6.0,
            rate_per_emitter_cps: 0.6 * OpticalTransition::siv().max_signal_rate_cps,
            background: BackgroundModel::new(120.0, 0.0),
            power_nw: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 {
            return Err(Error::invalid("n_sites", "must be positive"));
        }
        if !(self.mean_occupancy > 0.0) || !self.mean_occupancy.is_finite() {
            return Err(Error::invalid("mean_occupancy", "must be positive"));
        }
        if !(self.dwell_s > 0.0) {
            return Err(Error::invalid("dwell_s", "must be positive"));
        }
        if !(self.rate_per_emitter_cps > 0.0) {
            return Err(Error::invalid("rate_per_emitter_cps", "must be positive"));
        }
        Ok(())
    }
}

/// Populate and measure a site array by rate alone.
pub fn run_survey(config: &SurveyConfig, master_seed: u64) -> Result<SurveyResult> {
    config.validate()?;
    let occupancy_law = Poisson::new(config.mean_occupancy)
        .map_err(|_| Error::invalid("mean_occupancy", "not a valid Poisson mean"))?;
    let bg_rate = config.background.rate(config.power_nw);

    let mut sites = Vec::with_capacity(config.n_sites);
    for site in 0..config.n_sites {
        let mut rng = task_rng(master_seed, domain::PILLAR, site as u64);
        let n_true = occupancy_law.sample(&mut rng) as u32;
        let mean_counts =
            (f64::from(n_true) * config.rate_per_emitter_cps + bg_rate) * config.dwell_s;
        let counts = sample_poisson(mean_counts, &mut rng);
        let rate = counts as f64 / config.dwell_s;
        let net = (rate - bg_rate).max(0.0);
        let n_est = (net / config.rate_per_emitter_cps).round() as u32;
        sites.push(SiteRecord {
            site,
            true_emitters: n_true,
            measured_rate_cps: rate,
            estimated_emitters: n_est,
            g2_zero: None,
        });
    }
    SurveyResult::assemble(sites)
}

/// Correlation survey: sites above the detection threshold get a two-channel
/// photon stream and their count comes from the antibunching dip depth,
/// which resolves emitters that a pure rate measurement cannot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct G2SurveyConfig {
    pub n_sites: usize,
    pub mean_occupancy: f64,
    /// Transition shared by every placed emitter.
    pub transition: OpticalTransition,
    pub brightness: f64,
    /// Resonant drive power for the correlation measurement.
    pub power_nw: f64,
    /// Photon-stream length per occupied site.
    pub hbt_dwell_s: f64,
    /// Rate-screen length deciding which sites get a stream at all.
    pub screen_dwell_s: f64,
    pub detection_threshold_cps: f64,
    pub background: BackgroundModel,
    pub correlator: CorrelatorConfig,
    /// Upper bound on a dip-derived count (the dip saturates near 1).
    pub max_emitters: u32,
}

impl G2SurveyConfig {
    /// Defaults sized so one emitter yields about 10 kc/s with a recovery
    /// time of 1.5 us, enough dip contrast in a few seconds per site.
    pub fn new(n_sites: usize, mean_occupancy: f64) -> Self {
        let transition = OpticalTransition::from_lifetime(
            crate::physics::SIV_ZPL_HZ,
            3.0e-6,
            23.0,
            20_000.0,
            0.8,
        )
        .expect("defaults are valid");
        G2SurveyConfig {
            n_sites,
            mean_occupancy,
            transition,
            brightness: 1.0,
            power_nw: 23.0,
            hbt_dwell_s: 6.0,
            screen_dwell_s: 1.0,
            detection_threshold_cps: 1_000.0,
            background: BackgroundModel::new(50.0, 0.0),
            correlator: CorrelatorConfig::new(0.15e-6, 6.0e-6),
            max_emitters: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 {
            return Err(Error::invalid("n_sites", "must be positive"));
        }
        if !(self.mean_occupancy > 0.0) || !self.mean_occupancy.is_finite() {
            return Err(Error::invalid("mean_occupancy", "must be positive"));
        }
        if !(self.hbt_dwell_s > 0.0) || !(self.screen_dwell_s > 0.0) {
            return Err(Error::invalid("dwell", "dwell times must be positive"));
        }
        if !(self.brightness > 0.0) {
            return Err(Error::invalid("brightness", "must be positive"));
        }
        if self.max_emitters == 0 {
            return Err(Error::invalid("max_emitters", "must be positive"));
        }
        self.transition.validate()
    }
}

/// Populate a site array and count emitters per site through antibunching.
pub fn run_g2_survey(config: &G2SurveyConfig, master_seed: u64) -> Result<SurveyResult> {
    config.validate()?;
    let occupancy_law = Poisson::new(config.mean_occupancy)
        .map_err(|_| Error::invalid("mean_occupancy", "not a valid Poisson mean"))?;
    let bg_rate = config.background.rate(config.power_nw);

    let mut sites = Vec::with_capacity(config.n_sites);
    for site in 0..config.n_sites {
        let mut rng = task_rng(master_seed, domain::PILLAR, site as u64);
        let n_true = occupancy_law.sample(&mut rng) as u32;
        let site_seed: u64 = rng.gen();

        // rate screen: cheap closed-form counting decides occupancy
        let per_emitter = unit_rate(config);
        let mean_counts =
            (f64::from(n_true) * per_emitter + bg_rate) * config.screen_dwell_s;
        let screen_counts = sample_poisson(mean_counts, &mut rng);
        let screen_rate = screen_counts as f64 / config.screen_dwell_s;
        if screen_rate < config.detection_threshold_cps {
            sites.push(SiteRecord {
                site,
                true_emitters: n_true,
                measured_rate_cps: screen_rate,
                estimated_emitters: 0,
                g2_zero: None,
            });
            continue;
        }

        let (rate, g2_zero, estimate) = correlate_site(config, n_true, site_seed)?;
        sites.push(SiteRecord {
            site,
            true_emitters: n_true,
            measured_rate_cps: rate,
            estimated_emitters: estimate,
            g2_zero: Some(g2_zero),
        });
    }
    SurveyResult::assemble(sites)
}

/// Detected rate of a single emitter on resonance at the survey power.
fn unit_rate(config: &G2SurveyConfig) -> f64 {
    let fwhm = config.transition.power_broadened_fwhm(config.power_nw);
    config.brightness
        * config.transition.max_signal_rate_cps
        * config.transition.saturation_fraction(config.power_nw)
        * lorentzian(0.0, fwhm, 1.0, 0.0)
}

fn correlate_site(
    config: &G2SurveyConfig,
    n_true: u32,
    site_seed: u64,
) -> Result<(f64, f64, u32)> {
    let emitters: Vec<Emitter> = (0..n_true)
        .map(|_| {
            let cfg = EmitterConfig {
                brightness: config.brightness,
                ..EmitterConfig::new(
                    config.transition,
                    0.0,
                    SpectralDynamics {
                        ou_sigma_hz: 0.0,
                        ..SpectralDynamics::stable()
                    },
                )
            };
            Emitter::new(cfg)
        })
        .collect::<Result<_>>()?;
    let mut stream_cfg = PhotonStreamConfig::new(
        config.hbt_dwell_s,
        Drive::Resonant {
            laser_hz: config.transition.center_freq_hz,
            power_nw: config.power_nw,
        },
    );
    stream_cfg.background = config.background.clone();
    let mut stream = PhotonStream::new(emitters, stream_cfg, site_seed)?;
    let mut acc = StartStopAccumulator::new(config.correlator.clone())?;
    let mut n_tags = 0_u64;
    while let Some(chunk) = stream.next_chunk() {
        n_tags += chunk.len() as u64;
        acc.feed(&chunk)?;
    }
    let histogram = acc.finish()?;
    let rate = n_tags as f64 / config.hbt_dwell_s;
    let rho = ((rate - bg_of(config)) / rate).clamp(1e-3, 1.0);
    let analysis = g2(&histogram, rho)?;
    let estimate = analysis
        .estimated_emitters
        .unwrap_or_else(|| rate_estimate(config, rate))
        .min(config.max_emitters);
    Ok((rate, analysis.g2_zero, estimate))
}

fn bg_of(config: &G2SurveyConfig) -> f64 {
    config.background.rate(config.power_nw)
}

fn rate_estimate(config: &G2SurveyConfig, rate: f64) -> u32 {
    let net = (rate - bg_of(config)).max(0.0);
    (net / unit_rate(config)).round().max(1.0) as u32
}

/// Poisson sampler that stays exact for small means and switches to the
/// normal limit where the discreteness is invisible.
fn sample_poisson<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < 1.0e6 {
        Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
    } else {
        let g: f64 = rand_distr::StandardNormal.sample(rng);
        (mean + mean.sqrt() * g).round().max(0.0) as u64
    }
}

/// Broadband-spectrum survey of an array at ambient conditions: each
/// occupied site yields one emission spectrum whose line position and width
/// are fitted, feeding position/width histograms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralSurveyConfig {
    pub n_sites: usize,
    /// Line position law across sites.
    pub position_mean_nm: f64,
    pub position_sd_nm: f64,
    /// Linewidth law across sites (ambient widths are nm scale).
    pub fwhm_mean_nm: f64,
    pub fwhm_sd_nm: f64,
    /// Peak and flat background level of one spectrum, in counts.
    pub peak_counts: f64,
    pub background_counts: f64,
    pub span_nm: f64,
    pub n_points: usize,
}

impl SpectralSurveyConfig {
    pub fn new(n_sites: usize) -> Self {
        SpectralSurveyConfig {
            n_sites,
            position_mean_nm: 738.0,
            position_sd_nm: 0.1,
            fwhm_mean_nm: 1.5,
            fwhm_sd_nm: 0.25,
            peak_counts: 2_000.0,
            background_counts: 150.0,
            span_nm: 12.0,
            n_points: 240,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 {
            return Err(Error::invalid("n_sites", "must be positive"));
        }
        if !(self.position_sd_nm >= 0.0) || !(self.fwhm_sd_nm >= 0.0) {
            return Err(Error::invalid("sd", "spreads must be non-negative"));
        }
        if !(self.fwhm_mean_nm > 0.0) || !(self.peak_counts > 0.0) {
            return Err(Error::invalid("spectrum", "peak and width must be positive"));
        }
        if self.span_nm < 4.0 * self.fwhm_mean_nm {
            return Err(Error::invalid(
                "span_nm",
                "grid must cover several linewidths",
            ));
        }
        if self.n_points < 16 {
            return Err(Error::invalid("n_points", "need at least 16 grid points"));
        }
        Ok(())
    }
}

/// Fitted line collection from a spectral survey.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralSurvey {
    pub positions_nm: Vec<f64>,
    pub fwhms_nm: Vec<f64>,
    pub n_failed: usize,
}

/// Simulate and fit one spectrum per site.
pub fn run_spectral_survey(
    config: &SpectralSurveyConfig,
    master_seed: u64,
) -> Result<SpectralSurvey> {
    config.validate()?;
    let grid: Vec<f64> = (0..config.n_points)
        .map(|i| {
            config.span_nm * (i as f64 / (config.n_points - 1) as f64 - 0.5)
        })
        .collect();
    let mut positions = Vec::new();
    let mut fwhms = Vec::new();
    let mut failed = 0_usize;
    for site in 0..config.n_sites {
        let mut rng = task_rng(master_seed, domain::PILLAR, site as u64);
        let gauss = |rng: &mut rand_chacha::ChaCha12Rng| -> f64 {
            rand_distr::StandardNormal.sample(rng)
        };
        let offset_nm = config.position_sd_nm * gauss(&mut rng);
        let fwhm_nm = (config.fwhm_mean_nm + config.fwhm_sd_nm * gauss(&mut rng))
            .max(0.2 * config.fwhm_mean_nm);
        let counts: Vec<f64> = grid
            .iter()
            .map(|&x| {
                let mean = lorentzian(
                    x - offset_nm,
                    fwhm_nm,
                    config.peak_counts,
                    config.background_counts,
                );
                sample_poisson(mean, &mut rng) as f64
            })
            .collect();
        match fit_lorentzian(&grid, &counts, &Weighting::PoissonCounts) {
            Ok(fit) => {
                let center = fit.value("center").unwrap_or(f64::NAN);
                let width = fit.value("fwhm").unwrap_or(f64::NAN);
                if fit.converged && center.is_finite() && width.is_finite() {
                    positions.push(config.position_mean_nm + center);
                    fwhms.push(width);
                } else {
                    failed += 1;
                }
            }
            Err(_) => failed += 1,
        }
    }
    if positions.is_empty() {
        return Err(Error::NoPeak("no site produced a usable spectrum".into()));
    }
    Ok(SpectralSurvey {
        positions_nm: positions,
        fwhms_nm: fwhms,
        n_failed: failed,
    })
}
