//! Zero-field fine structure of the modeled defect: four optical lines from
//! a split ground and excited doublet, and the sanity identities that let a
//! measured four-line spectrum be read back into the two splittings.

use sivsim::physics::{lifetime_limited_fwhm, LevelStructure, OpticalTransition};

fn main() {
    let levels = LevelStructure::siv();
    let lines = levels.transition_frequencies().unwrap();

    println!("zero-phonon line center: {:.4} THz", levels.zpl_center_hz / 1e12);
    println!(
        "splittings: ground {:.0} GHz, excited {:.0} GHz",
        levels.ground_splitting_hz / 1e9,
        levels.excited_splitting_hz / 1e9
    );
    println!();
    println!("transition   frequency (THz)   offset from center (GHz)");
    for (label, f) in ["a", "b", "c", "d"].iter().zip(lines.as_array()) {
        println!(
            "{label:>10}   {:.6}        {:+.1}",
            f / 1e12,
            (f - levels.zpl_center_hz) / 1e9
        );
    }

    let (ground, excited) = LevelStructure::splittings_from_lines(&lines);
    println!();
    println!(
        "read back from line positions: a-b = {:.0} GHz, a-c = {:.0} GHz",
        ground / 1e9,
        excited / 1e9
    );

    let t = OpticalTransition::siv();
    println!();
    println!("lifetime {:.2} ns", t.lifetime_s * 1e9);
    println!(
        "lifetime-limited linewidth {:.1} MHz",
        lifetime_limited_fwhm(t.lifetime_s) / 1e6
    );
    println!("saturation power {:.0} nW", t.saturation_power_nw);
    println!(
        "saturated count rate {:.1} kc/s",
        t.max_signal_rate_cps / 1e3
    );
    println!();
    println!("power (nW)   rate (kc/s)   broadened fwhm (MHz)");
    for p in [1.0, 5.0, 23.0, 100.0, 500.0] {
        println!(
            "{p:>10.0}   {:>11.2}   {:>20.1}",
            t.saturation_rate(p) / 1e3,
            t.power_broadened_fwhm(p) / 1e6
        );
    }
}
