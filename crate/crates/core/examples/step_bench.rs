//! Throughput of the Crank-Nicolson stepper on the default grid.

use std::time::Instant;

use jjswitch::absorber::{padded_grid, AbsorberProfile};
use jjswitch::initial::{periodic_ground_state, truncate_to_open_grid};
use jjswitch::potential::{Bias, BiasRamp};
use jjswitch::propagate::Propagator;
use jjswitch::state::{DEFAULT_INTERIOR_END, DEFAULT_MAX_SPACING, DEFAULT_PHI_MIN};

fn main() {
    let absorber = AbsorberProfile::default();
    let grid = padded_grid(
        DEFAULT_PHI_MIN,
        DEFAULT_INTERIOR_END,
        DEFAULT_MAX_SPACING,
        &absorber,
    )
    .unwrap();
    let gs = periodic_ground_state(4.0, 2048).unwrap();
    let mut psi = truncate_to_open_grid(&gs, grid).unwrap();
    let mut prop = Propagator::new(grid, 4.0, 0.01, &absorber).unwrap();
    let steps = 20_000;
    for (label, bias) in [
        ("ramp", Bias::Ramp(BiasRamp::new(800.0).unwrap())),
        ("fixed", Bias::Fixed(0.5)),
    ] {
        let start = Instant::now();
        prop.evolve(&mut psi, 0.0, steps as f64 * 0.01, &bias, usize::MAX)
            .unwrap();
        let el = start.elapsed().as_secs_f64();
        println!(
            "{label}: {} points, {steps} steps in {el:.3} s -> {:.1} ns/point-step",
            grid.n,
            el * 1e9 / (steps as f64 * grid.n as f64)
        );
    }
}
