//! Itemized total-energy balance of every step of the shear pulse.

use thermovisco::diagnostics::step_ledger;
use thermovisco::scheme::{run, Scenario};

fn main() -> thermovisco::Result<()> {
    let sc = Scenario::shear_pulse(8);
    let model = sc.model()?;
    let traj = run(&model, &sc, sc.steps, sc.eps)?;
    println!(
        "{:>4} {:>11} {:>11} {:>11} {:>11} {:>11} {:>10}",
        "k", "dE", "ext", "bheat", "xi gap", "cvx gap", "remainder"
    );
    let mut worst: f64 = 0.0;
    for k in 1..traj.snapshots.len() {
        let l = step_ledger(&model, &traj, k)?;
        let rel = l.energy_gap_total.abs() / l.scale;
        worst = worst.max(rel);
        if k % 5 == 0 {
            println!(
                "{k:>4} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>10.1e}",
                l.d_e, l.ext_power, l.boundary_heat, l.xi_gap, l.convexity_gap, rel
            );
        }
    }
    println!("largest relative remainder: {worst:.2e}");
    Ok(())
}
