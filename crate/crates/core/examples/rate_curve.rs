//! Prints fitted decay rates against the semiclassical rate.
//!
//! Usage: `rate_curve [horizon] [v0] [max_spacing]`

use jjswitch::absorber::{padded_grid, AbsorberProfile};
use jjswitch::ratefit::{rate_curve, DecaySetup};
use jjswitch::state::{DEFAULT_INTERIOR_END, DEFAULT_MAX_SPACING, DEFAULT_PHI_MIN};

fn main() {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().unwrap())
        .collect();
    let horizon = args.first().copied().unwrap_or(2000.0);
    let v0 = args.get(1).copied().unwrap_or(4.0);
    let spacing = args.get(2).copied().unwrap_or(DEFAULT_MAX_SPACING);
    let absorber = AbsorberProfile::default();
    let grid = padded_grid(DEFAULT_PHI_MIN, DEFAULT_INTERIOR_END, spacing, &absorber).unwrap();
    let setup = DecaySetup {
        v0,
        grid,
        absorber,
        dt: 0.01,
        trace_stride: 50,
    };
    let start = std::time::Instant::now();
    for p in rate_curve(&setup, &[0.45, 0.5, 0.55, 0.6], horizon) {
        match p.fit {
            Ok(f) => {
                println!(
                "γ={:.2} Γ_num={:.4e} Γ_wkb={:.4e} ratio={:.3} τ={:.2} rms={:.2e} plateau={:.3e}",
                p.gamma, f.rate, p.wkb_rate, f.rate / p.wkb_rate, f.relaxation_time, f.residual,
                f.log_plateau
            )
            }
            Err(e) => println!("γ={:.2} failed: {e}", p.gamma),
        }
    }
    eprintln!("{:?}", start.elapsed());
}
