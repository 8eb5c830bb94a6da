//! Weak-form residuals of the shear pulse on a fixed test bank under time-step halving.

use thermovisco::diagnostics::weak_residuals;
use thermovisco::scheme::{run, Scenario};

fn main() -> thermovisco::Result<()> {
    let sc = Scenario::shear_pulse(8);
    let model = sc.model()?;
    for steps in [10, 20, 40, 80] {
        let traj = run(&model, &sc, steps, sc.eps)?;
        let wr = weak_residuals(&model, &traj)?;
        println!(
            "tau = {:<8} mechanical {:.4e}  thermal {:.4e}",
            1.0 / steps as f64,
            wr.mech_norm,
            wr.heat_norm
        );
    }
    Ok(())
}
