//! One staggered time step done by hand: mechanics at frozen temperature, then heat.

use thermovisco::heat_step::{solve_heat, HeatIncrement};
use thermovisco::mech_step::{solve_mech, MechIncrement};
use thermovisco::scheme::{initial_snapshot, Scenario};

fn main() -> thermovisco::Result<()> {
    let sc = Scenario::shear_pulse(8);
    let model = sc.model()?;
    let prev = initial_snapshot(&model, sc.theta0, sc.eps);
    let tau = 0.1;
    let loads = sc.loads.averaged(0.0, tau, sc.eps);

    let minc = MechIncrement::new(
        &model,
        &prev.y,
        &prev.theta,
        tau,
        sc.eps,
        loads.bulk_qp(&model),
        loads.traction_bqp(&model),
    );
    let mech = solve_mech(&model, &minc)?;
    println!(
        "mechanics: {} Newton steps, residual {:.2e} -> {:.2e}, J {:.8} -> {:.8}, min det {:.4}",
        mech.iterations,
        mech.initial_residual,
        mech.residual,
        mech.initial_functional,
        mech.functional,
        mech.min_det
    );

    let f_new = mech.kin.f.clone();
    let hinc = HeatIncrement::new(
        &model,
        &prev.theta,
        minc.f_prev,
        f_new,
        prev.w.clone(),
        tau,
        sc.eps,
        loads.theta_b_bqp(&model),
    )?;
    let heat = solve_heat(&model, &hinc)?;
    println!(
        "heat: {} Newton steps, residual {:.2e} -> {:.2e}, min theta {:.6}, max theta {:.6}",
        heat.iterations,
        heat.initial_residual,
        heat.residual,
        heat.min_theta,
        heat.theta.values.iter().cloned().fold(f64::MIN, f64::max)
    );
    Ok(())
}
