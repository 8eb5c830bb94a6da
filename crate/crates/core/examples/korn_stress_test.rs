//! Korn constant of the frozen pencil for smooth and discontinuous deformation gradients.

use thermovisco::diagnostics::{korn_constant, korn_constant_with};
use thermovisco::scheme::Scenario;
use thermovisco::tensor::Tensor2;

fn main() -> thermovisco::Result<()> {
    for n in [4, 8, 16] {
        let model = Scenario::steady(n).model()?;
        let pos = model.grid.qp_positions();
        let identity = vec![Tensor2::identity(2); pos.len()];
        let jump: Vec<Tensor2> = pos
            .iter()
            .map(|x| {
                if x[0] > 0.5 {
                    Tensor2::rotation(2, std::f64::consts::FRAC_PI_2)
                } else {
                    Tensor2::identity(2)
                }
            })
            .collect();
        let k_id = korn_constant(&model, &identity)?;
        let k_semi = korn_constant_with(&model, &identity, 0.0)?;
        let k_jump = korn_constant(&model, &jump)?;
        println!("n = {n:>2}  F = I: {k_id:.8}  (no mass term {k_semi:.8})  rotated half: {k_jump:.8}  ratio {:.4}", k_jump / k_id);
    }
    Ok(())
}
