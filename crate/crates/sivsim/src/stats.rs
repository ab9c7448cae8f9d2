//! Statistics over repeated sweeps: per-sweep line parameters and their
//! scatter, linewidth convergence with averaging depth, scheme comparisons,
//! and histogram summaries of survey-scale fit collections.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_lorentzian, FitResult, Weighting};
use crate::rng::{domain, task_rng};
use crate::sweep::PleTrace;

/// Line fit of one (possibly window-averaged) sweep. Fields are `None` when
/// no usable line was found, so dark sweeps stay in the record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingleSweepLine {
    pub index: usize,
    pub ok: bool,
    pub center_hz: Option<f64>,
    pub fwhm_hz: Option<f64>,
    /// Fitted peak height as a live-time rate per unit excitation power.
    pub peak_rate_per_power_cps_per_nw: Option<f64>,
}

/// Per-sweep line parameters and their scatter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepLineStats {
    /// Rows averaged per single (1 = raw passes).
    pub window: usize,
    pub n_singles: usize,
    /// Singles with no detectable line (dark emitter, drifted off the grid)
    /// or an unusable fit; excluded from every aggregate below.
    pub n_failed: usize,
    /// `n_failed / n_singles`.
    pub off_fraction: f64,
    /// One record per single, acquisition order, failures included.
    pub singles: Vec<SingleSweepLine>,
    pub center_mean_hz: f64,
    pub center_sd_hz: f64,
    pub fwhm_mean_hz: f64,
    pub fwhm_sd_hz: f64,
    pub peak_rate_per_power_mean: f64,
    pub power_nw: f64,
}

impl SweepLineStats {
    pub fn centers_hz(&self) -> Vec<f64> {
        self.singles.iter().filter_map(|s| s.center_hz).collect()
    }

    pub fn fwhms_hz(&self) -> Vec<f64> {
        self.singles.iter().filter_map(|s| s.fwhm_hz).collect()
    }

    /// Centers relative to their own mean; sums to zero by construction.
    pub fn centers_relative_hz(&self) -> Vec<f64> {
        self.centers_hz()
            .iter()
            .map(|c| c - self.center_mean_hz)
            .collect()
    }

    pub fn peak_rates_per_power(&self) -> Vec<f64> {
        self.singles
            .iter()
            .filter_map(|s| s.peak_rate_per_power_cps_per_nw)
            .collect()
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Whether a fitted line is usable for per-sweep statistics: converged, on
/// the grid, and narrower than the grid itself.
fn usable_line(fit: &FitResult, span_hz: f64) -> Option<(f64, f64, f64)> {
    let center = fit.value("center")?;
    let fwhm = fit.value("fwhm")?;
    let amplitude = fit.value("amplitude")?;
    if !fit.converged || !center.is_finite() || !fwhm.is_finite() {
        return None;
    }
    if center.abs() > 0.6 * span_hz || fwhm > span_hz {
        return None;
    }
    Some((center, fwhm, amplitude))
}

/// Fit every overlapping `window`-pass average of `trace` and summarize the
/// per-single line parameters. `window = 1` fits raw passes.
pub fn sweep_line_stats(trace: &PleTrace, window: usize) -> Result<SweepLineStats> {
    let singles = singles_of(trace, window)?;
    let span = trace.detunings_hz.last().unwrap() - trace.detunings_hz[0];
    let mut records = Vec::with_capacity(singles.len());
    let mut centers = Vec::new();
    let mut fwhms = Vec::new();
    let mut peaks = Vec::new();
    for (index, single) in singles.iter().enumerate() {
        let line = fit_lorentzian(&trace.detunings_hz, single, &Weighting::PoissonCounts)
            .ok()
            .and_then(|fit| usable_line(&fit, span));
        match line {
            Some((c, f, amp)) => {
                let peak = amp / trace.live_time_s / trace.power_nw;
                centers.push(c);
                fwhms.push(f);
                peaks.push(peak);
                records.push(SingleSweepLine {
                    index,
                    ok: true,
                    center_hz: Some(c),
                    fwhm_hz: Some(f),
                    peak_rate_per_power_cps_per_nw: Some(peak),
                });
            }
            None => records.push(SingleSweepLine {
                index,
                ok: false,
                center_hz: None,
                fwhm_hz: None,
                peak_rate_per_power_cps_per_nw: None,
            }),
        }
    }
    if centers.is_empty() {
        return Err(Error::NoPeak("no sweep produced a usable line fit".into()));
    }
    let n_failed = singles.len() - centers.len();
    let (center_mean, center_sd) = mean_sd(&centers);
    let (fwhm_mean, fwhm_sd) = mean_sd(&fwhms);
    let (peak_mean, _) = mean_sd(&peaks);
    Ok(SweepLineStats {
        window,
        n_singles: singles.len(),
        n_failed,
        off_fraction: n_failed as f64 / singles.len() as f64,
        singles: records,
        center_mean_hz: center_mean,
        center_sd_hz: center_sd,
        fwhm_mean_hz: fwhm_mean,
        fwhm_sd_hz: fwhm_sd,
        peak_rate_per_power_mean: peak_mean,
        power_nw: trace.power_nw,
    })
}

fn singles_of(trace: &PleTrace, window: usize) -> Result<Vec<Vec<f64>>> {
    if window == 0 {
        return Err(Error::invalid("window", "must be at least 1"));
    }
    if trace.n_passes() < window {
        return Err(Error::InsufficientData(format!(
            "{} passes cannot form a window of {window}",
            trace.n_passes()
        )));
    }
    Ok(trace.overlapping_windows(window))
}

/// Averaged-linewidth convergence with the number of singles averaged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub window: usize,
    /// Singles counts the curve is evaluated at.
    pub k: Vec<usize>,
    /// Linewidth of the average of the *first* `k` singles, acquisition
    /// order: the curve an experiment watches live. NaN where the fit fails.
    pub cumulative_fwhm_hz: Vec<f64>,
    /// Mean linewidth of averages of `k` singles drawn at random, over
    /// `n_shuffles` permutations: the order-free expectation. NaN where no
    /// shuffle produced a usable fit.
    pub resampled_fwhm_hz: Vec<f64>,
    /// Spread across the permutations: the standard error of a linewidth
    /// measured with `k` singles.
    pub resampled_sd_hz: Vec<f64>,
    pub n_shuffles: usize,
    /// Linewidth of the average of every single.
    pub full_average_fwhm_hz: f64,
}

/// Compute linewidth-versus-averaging curves; needs at least 10 singles.
///
/// For each requested `k` the resampled value averages the fitted linewidth
/// of `n_shuffles` random `k`-subsets, which estimates the expected
/// linewidth after `k` singles independent of acquisition order; the spread
/// across subsets is the resampled standard error.
pub fn convergence_curve(
    trace: &PleTrace,
    window: usize,
    ks: &[usize],
    n_shuffles: usize,
    seed: u64,
) -> Result<ConvergenceCurve> {
    let singles = singles_of(trace, window)?;
    let n = singles.len();
    if n < 10 {
        return Err(Error::InsufficientData(format!(
            "convergence needs at least 10 singles, got {n}"
        )));
    }
    if ks.is_empty() {
        return Err(Error::invalid("ks", "need at least one averaging depth"));
    }
    if ks.iter().any(|&k| k == 0 || k > n) {
        return Err(Error::OutOfRange(format!(
            "averaging depths must lie in 1..={n}"
        )));
    }
    if n_shuffles == 0 {
        return Err(Error::invalid("n_shuffles", "must be at least 1"));
    }

    let x = &trace.detunings_hz;
    let fwhm_of_mean = |acc: &[f64], k: usize| -> Option<f64> {
        let mean: Vec<f64> = acc.iter().map(|s| s / k as f64).collect();
        let fit = fit_lorentzian(x, &mean, &Weighting::PoissonCounts).ok()?;
        let span = x[x.len() - 1] - x[0];
        usable_line(&fit, span).map(|(_, f, _)| f)
    };

    // cumulative curve in acquisition order
    let mut acc = vec![0.0; x.len()];
    let mut cumulative = vec![f64::NAN; ks.len()];
    for (i, single) in singles.iter().enumerate() {
        for (a, &v) in acc.iter_mut().zip(single) {
            *a += v;
        }
        let k = i + 1;
        for (slot, &kq) in cumulative.iter_mut().zip(ks) {
            if kq == k {
                if let Some(f) = fwhm_of_mean(&acc, k) {
                    *slot = f;
                }
            }
        }
    }
    let full_average = {
        let mut a = vec![0.0; x.len()];
        for s in &singles {
            for (ai, &v) in a.iter_mut().zip(s) {
                *ai += v;
            }
        }
        fwhm_of_mean(&a, n).unwrap_or(f64::NAN)
    };

    // resampled expectation: prefix means along random permutations
    let mut rng = task_rng(seed, domain::SHUFFLE, 0);
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); ks.len()];
    let mut order: Vec<usize> = (0..n).collect();
    let k_max = *ks.iter().max().unwrap();
    for _ in 0..n_shuffles {
        order.shuffle(&mut rng);
        let mut acc = vec![0.0; x.len()];
        for (i, &idx) in order.iter().take(k_max).enumerate() {
            for (a, &v) in acc.iter_mut().zip(&singles[idx]) {
                *a += v;
            }
            let k = i + 1;
            for (j, &kq) in ks.iter().enumerate() {
                if kq == k {
                    if let Some(f) = fwhm_of_mean(&acc, k) {
                        samples[j].push(f);
                    }
                }
            }
        }
    }
    let mut resampled = vec![f64::NAN; ks.len()];
    let mut resampled_sd = vec![f64::NAN; ks.len()];
    for (j, s) in samples.iter().enumerate() {
        if !s.is_empty() {
            let (m, sd) = mean_sd(s);
            resampled[j] = m;
            resampled_sd[j] = sd;
        }
    }

    Ok(ConvergenceCurve {
        window,
        k: ks.to_vec(),
        cumulative_fwhm_hz: cumulative,
        resampled_fwhm_hz: resampled,
        resampled_sd_hz: resampled_sd,
        n_shuffles,
        full_average_fwhm_hz: full_average,
    })
}

/// Mean of the first `k` singles with a per-point standard error, the shaded
/// band around an averaged spectrum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AveragedSpectrum {
    pub k: usize,
    pub values: Vec<f64>,
    /// Standard error of each point: spread over the k singles / sqrt(k).
    pub std_error: Vec<f64>,
}

pub fn average_spectrum(singles: &[Vec<f64>], k: usize) -> Result<AveragedSpectrum> {
    if k == 0 || k > singles.len() {
        return Err(Error::invalid(
            "k",
            format!("must lie in 1..={}", singles.len()),
        ));
    }
    let width = singles[0].len();
    if singles.iter().any(|s| s.len() != width) {
        return Err(Error::invalid("singles", "rows must share one grid"));
    }
    let mut values = vec![0.0; width];
    for s in &singles[..k] {
        for (v, &y) in values.iter_mut().zip(s) {
            *v += y;
        }
    }
    values.iter_mut().for_each(|v| *v /= k as f64);
    let mut std_error = vec![0.0; width];
    if k > 1 {
        for s in &singles[..k] {
            for ((e, &y), &m) in std_error.iter_mut().zip(s).zip(&values) {
                *e += (y - m) * (y - m);
            }
        }
        let norm = (k * (k - 1)) as f64;
        std_error.iter_mut().for_each(|e| *e = (*e / norm).sqrt());
    }
    Ok(AveragedSpectrum {
        k,
        values,
        std_error,
    })
}

/// Before/after comparison of per-sweep center scatter, the figure of merit
/// for a feedback lock.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilizationComparison {
    pub before: SweepLineStats,
    pub after: SweepLineStats,
    /// `before.center_sd / after.center_sd`.
    pub center_sd_ratio: f64,
}

impl StabilizationComparison {
    pub fn new(before: SweepLineStats, after: SweepLineStats) -> Self {
        let ratio = before.center_sd_hz / after.center_sd_hz;
        StabilizationComparison {
            before,
            after,
            center_sd_ratio: ratio,
        }
    }
}

/// Paired scatter record comparing the same emitter under two drive
/// schemes, sided against the y = x diagonal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeComparison {
    pub center_sd_a_hz: f64,
    pub center_sd_b_hz: f64,
    pub peak_rate_per_power_a: f64,
    pub peak_rate_per_power_b: f64,
    pub off_fraction_a: f64,
    pub off_fraction_b: f64,
    /// Center scatter smaller under scheme A.
    pub quieter_under_a: bool,
    /// Power-normalized intensity larger under scheme A.
    pub brighter_under_a: bool,
}

pub fn compare_schemes(a: &SweepLineStats, b: &SweepLineStats) -> SchemeComparison {
    SchemeComparison {
        center_sd_a_hz: a.center_sd_hz,
        center_sd_b_hz: b.center_sd_hz,
        peak_rate_per_power_a: a.peak_rate_per_power_mean,
        peak_rate_per_power_b: b.peak_rate_per_power_mean,
        off_fraction_a: a.off_fraction,
        off_fraction_b: b.off_fraction,
        quieter_under_a: a.center_sd_hz < b.center_sd_hz,
        brighter_under_a: a.peak_rate_per_power_mean > b.peak_rate_per_power_mean,
    }
}

/// Equal-width binned summary of a value collection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram1D {
    /// `counts.len() + 1` ascending bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Bin `values` with `bin_width`, or with the Freedman-Diaconis width when
/// `None`. Degenerate inputs (one value, zero spread) yield one bin.
pub fn histogram(values: &[f64], bin_width: Option<f64>) -> Result<Histogram1D> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::InsufficientData(
            "histogram needs at least one finite value".into(),
        ));
    }
    if let Some(w) = bin_width {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::invalid("bin_width", "must be positive and finite"));
        }
    }
    let (mean, sd) = mean_sd(&finite);
    let n = finite.len();
    let mut sorted = finite.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = sorted[0];
    let hi = sorted[n - 1];
    let span = hi - lo;

    let width = bin_width.unwrap_or_else(|| {
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let fd = 2.0 * iqr / (n as f64).cbrt();
        if fd > 0.0 {
            fd
        } else {
            3.49 * sd / (n as f64).cbrt()
        }
    });

    if !(width > 0.0) || span == 0.0 {
        // all values identical (or spread invisible at this width)
        let pad = 0.5
            * if width > 0.0 {
                width
            } else {
                lo.abs().max(1.0) * 1e-3
            };
        return Ok(Histogram1D {
            edges: vec![lo - pad, hi + pad],
            counts: vec![n as u64],
            n,
            mean,
            sd,
        });
    }

    let n_bins = (span / width).ceil().max(1.0) as usize;
    let edges: Vec<f64> = (0..=n_bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0_u64; n_bins];
    for &v in &finite {
        let idx = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram1D {
        edges,
        counts,
        n,
        mean,
        sd,
    })
}

/// Linear-interpolation quantile of an already sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < n {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[n - 1]
    }
}

/// Position and width histograms of a fitted spectrum collection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurveyHistograms {
    pub position: Histogram1D,
    pub width: Histogram1D,
}

pub fn survey_histograms(positions: &[f64], widths: &[f64]) -> Result<SurveyHistograms> {
    Ok(SurveyHistograms {
        position: histogram(positions, None)?,
        width: histogram(widths, None)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emitter::{Emitter, EmitterConfig, SpectralDynamics};
    use crate::physics::{BackgroundModel, OpticalTransition};
    use crate::sweep::{run_sweep, SweepPlan};

    fn trace_with(ou_sigma_hz: f64, ou_tau_s: f64, n_passes: usize, seed: u64) -> PleTrace {
        trace_at_power(ou_sigma_hz, ou_tau_s, n_passes, 23.0, seed)
    }

    fn trace_at_power(
        ou_sigma_hz: f64,
        ou_tau_s: f64,
        n_passes: usize,
        power_nw: f64,
        seed: u64,
    ) -> PleTrace {
        let dynamics = SpectralDynamics {
            ou_sigma_hz,
            ou_tau_s,
            ..SpectralDynamics::stable()
        };
        let mut cfg = EmitterConfig::new(OpticalTransition::siv(), 0.0, dynamics);
        cfg.brightness = 25.0;
        let mut emitters = [Emitter::new(cfg).unwrap()];
        let plan = SweepPlan {
            span_hz: 3.0e9,
            n_passes,
            power_nw,
            ..SweepPlan::default()
        };
        run_sweep(&mut emitters, &BackgroundModel::new(100.0, 10.0), &plan, seed).unwrap()
    }

    #[test]
    fn per_sweep_scatter_tracks_the_diffusion_scale() {
        let trace = trace_with(400.0e6, 20.0, 28, 71);
        let stats = sweep_line_stats(&trace, 4).unwrap();
        assert_eq!(stats.n_singles, 25); // 28 passes, window 4
        assert!(stats.off_fraction < 0.2, "off {}", stats.off_fraction);
        // scatter must be in the diffusion ballpark: well above shot noise,
        // below the full stationary spread times a generous margin
        assert!(
            stats.center_sd_hz > 100.0e6 && stats.center_sd_hz < 800.0e6,
            "center sd {:.3e}",
            stats.center_sd_hz
        );
        assert_eq!(stats.singles.len(), stats.n_singles);
        assert_eq!(stats.centers_hz().len() + stats.n_failed, stats.n_singles);
    }

    #[test]
    fn quiet_emitter_is_never_off_and_barely_moves() {
        let trace = trace_with(0.0, 10.0, 12, 72);
        let stats = sweep_line_stats(&trace, 4).unwrap();
        assert_eq!(stats.n_failed, 0);
        assert_eq!(stats.off_fraction, 0.0);
        // pure shot noise on a bright line: a few MHz at most
        assert!(
            stats.center_sd_hz < 10.0e6,
            "center sd {:.3e}",
            stats.center_sd_hz
        );
        let expected = OpticalTransition::siv().power_broadened_fwhm(23.0);
        assert!(
            (stats.fwhm_mean_hz / expected - 1.0).abs() < 0.05,
            "fwhm {:.3e} vs {expected:.3e}",
            stats.fwhm_mean_hz
        );
    }

    #[test]
    fn relative_centers_sum_to_zero() {
        let trace = trace_with(300.0e6, 20.0, 16, 78);
        let stats = sweep_line_stats(&trace, 4).unwrap();
        let rel = stats.centers_relative_hz();
        assert!(!rel.is_empty());
        let sum: f64 = rel.iter().sum();
        assert!(sum.abs() < 1.0, "relative centers sum to {sum}");
    }

    #[test]
    fn center_scatter_ignores_a_common_detuning_offset() {
        let trace = trace_with(250.0e6, 20.0, 12, 79);
        let mut shifted = trace.clone();
        for d in &mut shifted.detunings_hz {
            *d += 150.0e6;
        }
        let a = sweep_line_stats(&trace, 4).unwrap();
        let b = sweep_line_stats(&shifted, 4).unwrap();
        assert!(
            ((a.center_sd_hz - b.center_sd_hz) / a.center_sd_hz).abs() < 1e-6,
            "sd {:.6e} vs {:.6e}",
            a.center_sd_hz,
            b.center_sd_hz
        );
        assert!(((b.center_mean_hz - a.center_mean_hz) / 150.0e6 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn normalized_intensity_is_power_invariant_below_saturation() {
        // both powers at most 1/20 of the saturation power: response linear
        let a = sweep_line_stats(&trace_at_power(0.0, 10.0, 12, 0.5, 80), 4).unwrap();
        let b = sweep_line_stats(&trace_at_power(0.0, 10.0, 12, 1.0, 80), 4).unwrap();
        let ratio = a.peak_rate_per_power_mean / b.peak_rate_per_power_mean;
        assert!(
            (ratio - 1.0).abs() < 0.05,
            "per-power peaks {:.1} vs {:.1}",
            a.peak_rate_per_power_mean,
            b.peak_rate_per_power_mean
        );
    }

    #[test]
    fn convergence_curve_grows_toward_the_full_average() {
        // diffusion much slower than a pass: averaging more singles widens
        // the line toward the inhomogeneous limit
        let trace = trace_with(500.0e6, 60.0, 40, 73);
        let ks = [1, 5, 10, 20, 37];
        let curve = convergence_curve(&trace, 4, &ks, 30, 5).unwrap();
        assert_eq!(curve.k, ks);
        let first = curve.resampled_fwhm_hz[0];
        let last = *curve.resampled_fwhm_hz.last().unwrap();
        assert!(
            last > 1.2 * first,
            "expected growth: k=1 {first:.3e}, k=37 {last:.3e}"
        );
        // at the top of the grid the resampled curve matches the full mean
        assert!(
            (last / curve.full_average_fwhm_hz - 1.0).abs() < 0.05,
            "resampled top {last:.3e} vs full {:.3e}",
            curve.full_average_fwhm_hz
        );
        // the cumulative curve ends exactly at the full average
        let cum_last = *curve.cumulative_fwhm_hz.last().unwrap();
        assert!((cum_last / curve.full_average_fwhm_hz - 1.0).abs() < 1e-9);
        // standard errors shrink as subsets grow toward the full set
        assert!(curve.resampled_sd_hz[1] > *curve.resampled_sd_hz.last().unwrap());
    }

    #[test]
    fn resampled_curve_is_reproducible() {
        let trace = trace_with(300.0e6, 30.0, 16, 74);
        let ks = [2, 6, 13];
        let a = convergence_curve(&trace, 4, &ks, 10, 9).unwrap();
        let b = convergence_curve(&trace, 4, &ks, 10, 9).unwrap();
        assert_eq!(a.resampled_fwhm_hz, b.resampled_fwhm_hz);
        let c = convergence_curve(&trace, 4, &ks, 10, 10).unwrap();
        assert!(a
            .resampled_fwhm_hz
            .iter()
            .zip(&c.resampled_fwhm_hz)
            .any(|(x, y)| x != y));
    }

    #[test]
    fn invalid_depths_are_rejected() {
        let trace = trace_with(0.0, 10.0, 14, 75); // 11 singles at window 4
        assert!(convergence_curve(&trace, 4, &[0], 5, 1).is_err());
        assert!(convergence_curve(&trace, 4, &[12], 5, 1).is_err());
        assert!(convergence_curve(&trace, 4, &[], 5, 1).is_err());
        assert!(convergence_curve(&trace, 4, &[2], 0, 1).is_err());
        // fewer than 10 singles is not enough for a convergence statement
        let short = trace_with(0.0, 10.0, 8, 75);
        assert!(convergence_curve(&short, 4, &[2], 5, 1).is_err());
        assert!(sweep_line_stats(&trace, 0).is_err());
        assert!(sweep_line_stats(&trace, 15).is_err());
    }

    #[test]
    fn averaged_spectrum_mean_and_error() {
        let singles = vec![vec![1.0, 10.0], vec![3.0, 30.0], vec![5.0, 20.0]];
        let one = average_spectrum(&singles, 1).unwrap();
        assert_eq!(one.values, singles[0]);
        assert_eq!(one.std_error, vec![0.0, 0.0]);
        let all = average_spectrum(&singles, 3).unwrap();
        assert!((all.values[0] - 3.0).abs() < 1e-12);
        assert!((all.values[1] - 20.0).abs() < 1e-12);
        // sd of {1,3,5} is 2, over sqrt(3)
        assert!((all.std_error[0] - 2.0 / 3.0_f64.sqrt()).abs() < 1e-12);
        assert!(average_spectrum(&singles, 0).is_err());
        assert!(average_spectrum(&singles, 4).is_err());
        // identical singles: average is any row, zero error at every k
        let same = vec![vec![2.0, 4.0]; 5];
        for k in 1..=5 {
            let avg = average_spectrum(&same, k).unwrap();
            assert_eq!(avg.values, same[0]);
            assert!(avg.std_error.iter().all(|&e| e == 0.0));
        }
    }

    #[test]
    fn stabilization_comparison_reports_the_scatter_ratio() {
        let before = sweep_line_stats(&trace_with(500.0e6, 30.0, 16, 76), 4).unwrap();
        let after = sweep_line_stats(&trace_with(50.0e6, 10.0, 16, 77), 4).unwrap();
        let cmp = StabilizationComparison::new(before, after);
        assert!(
            cmp.center_sd_ratio > 3.0,
            "ratio {:.2}",
            cmp.center_sd_ratio
        );
    }

    #[test]
    fn scheme_comparison_sides_of_the_diagonal() {
        let quiet = sweep_line_stats(&trace_with(50.0e6, 10.0, 16, 81), 4).unwrap();
        let noisy = sweep_line_stats(&trace_with(500.0e6, 30.0, 16, 82), 4).unwrap();
        let cmp = compare_schemes(&quiet, &noisy);
        assert!(cmp.quieter_under_a);
        assert!(cmp.center_sd_a_hz < cmp.center_sd_b_hz);
        let same = compare_schemes(&quiet, &quiet);
        assert_eq!(same.center_sd_a_hz, same.center_sd_b_hz);
        assert!(!same.quieter_under_a && !same.brighter_under_a);
    }

    #[test]
    fn histogram_covers_every_value_once() {
        let values: Vec<f64> = (0..500).map(|i| (i as f64 * 0.7919).sin() * 3.0).collect();
        let h = histogram(&values, None).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 500);
        assert_eq!(h.edges.len(), h.counts.len() + 1);
        assert!(h.edges.windows(2).all(|w| w[1] > w[0]));
        // explicit width is honored
        let h2 = histogram(&values, Some(0.5)).unwrap();
        assert!((h2.edges[1] - h2.edges[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_histograms_collapse_to_one_bin() {
        let one = histogram(&[737.9], None).unwrap();
        assert_eq!(one.counts, vec![1]);
        let same = histogram(&[2.0, 2.0, 2.0], None).unwrap();
        assert_eq!(same.counts, vec![3]);
        assert!(histogram(&[], None).is_err());
        assert!(histogram(&[f64::NAN], None).is_err());
        assert!(histogram(&[1.0, 2.0], Some(-1.0)).is_err());
    }
}
