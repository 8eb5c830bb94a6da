//! Creep under constant tension without thermal coupling and with eps = 0: the
//! mechanical energy balance closes on its own.

use thermovisco::diagnostics::step_ledger;
use thermovisco::scheme::{run, Scenario};

fn main() -> thermovisco::Result<()> {
    let sc = Scenario::isothermal_creep(8);
    let model = sc.model()?;
    let traj = run(&model, &sc, sc.steps, sc.eps)?;
    for k in (5..traj.snapshots.len()).step_by(5) {
        let l = step_ledger(&model, &traj, k)?;
        println!(
            "k = {k:>3}  dM = {:>11.4e}  work = {:>11.4e}  dissipated = {:>11.4e}  remainder = {:>9.1e}",
            l.d_m,
            l.ext_power,
            l.xi_step,
            l.mech_gap_total.abs() / l.scale
        );
    }
    let last = &traj.snapshots.last().expect("non-empty").y;
    let tip = model
        .grid
        .deformation_at_bqp(last)
        .iter()
        .map(|x| x[0])
        .fold(f64::MIN, f64::max);
    println!("right end at x = {tip:.6}");
    Ok(())
}
