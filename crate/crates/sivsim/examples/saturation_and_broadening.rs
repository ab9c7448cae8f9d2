//! Power dependence in both observables: the detected rate saturates while
//! the linewidth keeps growing as sqrt(1 + P/Psat).

use rand::Rng;
use sivsim::fit::{
    fit_power_broadening, fit_saturation, saturation_rho, Weighting,
};
use sivsim::physics::OpticalTransition;
use sivsim::rng::{domain, task_rng};

fn main() {
    let t = OpticalTransition::siv();
    let mut rng = task_rng(5, domain::MISC, 0);

    // one-second dwell per power step; background scales with power
    let powers: Vec<f64> = (0..16).map(|i| 0.5 * 1.55_f64.powi(i)).collect();
    let rates: Vec<f64> = powers
        .iter()
        .map(|&p| {
            let mean = t.saturation_rate(p) + 12.0 * p + 80.0;
            mean + mean.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)
        })
        .collect();

    let sat = fit_saturation(&powers, &rates, &Weighting::PoissonCounts).unwrap();
    println!(
        "saturation fit: max rate {:.2} kc/s (true {:.2}), Psat {:.1} nW (true {:.1})",
        sat.value("max_rate").unwrap() / 1e3,
        t.max_signal_rate_cps / 1e3,
        sat.value("saturation_power").unwrap(),
        t.saturation_power_nw
    );
    println!(
        "linear background {:.1} c/s/nW (true 12.0)",
        sat.value("linear_background").unwrap()
    );
    for p in [1.2, 23.0, 200.0] {
        println!(
            "  signal purity at {p:>5.1} nW: rho = {:.2}",
            saturation_rho(&sat, p)
        );
    }

    // linewidth versus power from the same transition
    let fwhms: Vec<f64> = powers
        .iter()
        .map(|&p| {
            t.power_broadened_fwhm(p)
                + 2.0e6 * rng.sample::<f64, _>(rand_distr::StandardNormal)
        })
        .collect();
    let broad = fit_power_broadening(&powers, &fwhms).unwrap();
    println!();
    println!(
        "broadening fit: natural width {:.1} MHz (true {:.1}), Psat {:.1} nW",
        broad.value("natural_fwhm").unwrap() / 1e6,
        t.natural_fwhm_hz / 1e6,
        broad.value("saturation_power").unwrap()
    );
}
