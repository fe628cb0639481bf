//! Verifies every layer's backward pass against central finite differences,
//! then checks a composed generate-then-discriminate probe.
//!
//! Run: cargo run --example grad_check

use exprgan::model::composed_grad_check;
use exprgan::nn::{layer_suite, FD_STEP, FD_TOL};

fn main() -> exprgan::error::Result<()> {
    let report = layer_suite(5, FD_STEP)?;
    for b in &report.blocks {
        println!("{:<24} max rel err {:.3e}", b.name, b.max_rel_err);
    }
    let mut worst = report.max_rel_err();
    for seed in 0..5 {
        let composed = composed_grad_check(seed, FD_STEP)?;
        worst = worst.max(composed.max_rel_err());
        println!("composed probe seed {seed:<6} max rel err {:.3e}", composed.max_rel_err());
    }
    println!(
        "worst {:.3e} against tolerance {:.0e}: {}",
        worst,
        FD_TOL,
        if worst <= FD_TOL { "pass" } else { "FAIL" }
    );
    Ok(())
}
