//! Runs the shear pulse and prints energies, entropy and temperature over time.

use thermovisco::diagnostics::{run_diagnostics, DiagOptions};
use thermovisco::scheme::{run, Scenario};

fn main() -> thermovisco::Result<()> {
    env_logger::init();
    let sc = Scenario::shear_pulse(12);
    let model = sc.model()?;
    let traj = run(&model, &sc, sc.steps, sc.eps)?;
    let rows = run_diagnostics(
        &model,
        &traj,
        &DiagOptions {
            hk: false,
            korn_every: 0,
        },
    )?;
    println!(
        "{:>5} {:>6} {:>12} {:>12} {:>12} {:>12} {:>10}",
        "step", "t", "M", "W", "E", "S", "max th"
    );
    for (r, s) in rows.iter().zip(&traj.snapshots).step_by(5) {
        let max_th = s.theta.values.iter().cloned().fold(f64::MIN, f64::max);
        let e = &r.energies;
        println!(
            "{:>5} {:>6.3} {:>12.6} {:>12.6} {:>12.6} {:>12.8} {:>10.6}",
            r.step, r.t, e.m, e.w, e.e, e.entropy, max_th
        );
    }
    Ok(())
}
