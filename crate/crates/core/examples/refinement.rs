//! Refinement study: Cauchy differences under time-step halving and the vanishing
//! regularization sweep.

use thermovisco::scheme::{refinement_study, Scenario};

fn main() -> thermovisco::Result<()> {
    let sc = Scenario::refine_tau(8);
    let (report, _, _) = refinement_study(&sc, &[10, 20, 40], &[])?;
    for (c, d) in report.tau_cells.iter().skip(1).zip(&report.tau_cauchy) {
        println!(
            "tau = {:<7} |grad y diff| = {:.3e}  |theta diff| = {:.3e}",
            c.tau, d.grad_y, d.theta
        );
    }
    // a tension pulse: mostly stretch, so the eps term tracks the dissipation closely
    let sc = Scenario::refine_eps(8);
    let (report, _, _) = refinement_study(&sc, &[sc.steps], &[1e-1, 1e-2, 1e-3])?;
    for c in &report.eps_cells {
        println!(
            "eps = {:<6} eps rate / dissipation = {:.3e}  xi gap = {:.3e}",
            c.eps,
            c.eps_rate / c.dissipation,
            c.xi_gap
        );
    }
    Ok(())
}
