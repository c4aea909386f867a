//! Reflection of the absorbing layer versus packet energy and strength.
//!
//! `cargo run --release -p jjswitch --example absorber_sweep [width] [order]`

use jjswitch::absorber::AbsorberProfile;
use jjswitch::propagate::reflection_test;
use rayon::prelude::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let width: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20.0);
    let order: u32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let energies = [0.5, 1.0, 2.0, 5.0, 10.0, 30.0, 60.0];
    let strengths = [0.5, 2.0, 4.0, 8.0, 16.0, 64.0, 256.0];
    println!("width {width} order {order}");
    print!("{:>10}", "strength");
    for e in energies {
        print!("{e:>10}");
    }
    println!();
    let rows: Vec<(f64, Vec<f64>)> = strengths
        .par_iter()
        .map(|&s| {
            let a = AbsorberProfile {
                width,
                strength: s,
                order,
                left: false,
            };
            (
                s,
                energies
                    .iter()
                    .map(|&e| reflection_test(e, &a).unwrap())
                    .collect(),
            )
        })
        .collect();
    for (s, r) in rows {
        print!("{s:>10}");
        for x in r {
            print!("{x:>10.1e}");
        }
        println!();
    }
}
