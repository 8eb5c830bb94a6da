//! Determinant lower bound and Korn constant along a loaded trajectory, then the
//! run-level certificate table.

use thermovisco::cli_io::certificate_lines;
use thermovisco::diagnostics::{certificates, run_diagnostics, CertTolerances, DiagOptions};
use thermovisco::scheme::{run, Scenario};

fn main() -> thermovisco::Result<()> {
    let sc = Scenario::shear_pulse(8);
    let model = sc.model()?;
    let traj = run(&model, &sc, sc.steps, sc.eps)?;
    let rows = run_diagnostics(
        &model,
        &traj,
        &DiagOptions {
            hk: true,
            korn_every: 10,
        },
    )?;
    for r in rows.iter().filter(|r| r.korn.is_some()) {
        let hk = r.hk.expect("enabled");
        println!(
            "t = {:.2}  min det = {:.5}  bound = {:.3e} (C1 {:.3}, Holder {:.3})  Korn = {:.5}",
            r.t,
            r.energies.min_det,
            hk.bound,
            hk.c1,
            hk.c2,
            r.korn.unwrap_or(f64::NAN)
        );
    }
    print!(
        "{}",
        certificate_lines(&certificates(&rows, &CertTolerances::default()))
    );
    Ok(())
}
