//! Evaluates the constitutive functions at a sheared, stretched state and checks
//! that superimposed rotations leave energies and dissipation unchanged.

use thermovisco::material::MaterialModel;
use thermovisco::tensor::Tensor2;

fn main() {
    let m = MaterialModel::default_for_dim(2);
    let f = Tensor2::from_rows(&[&[1.1, 0.2], &[0.0, 0.95]]);
    let fdot = Tensor2::from_rows(&[&[0.3, -0.1], &[0.05, 0.2]]);
    let theta = 1.5;

    println!("det F            {:.6}", f.det());
    println!("phi(F)           {:.6}", m.elastic_energy(&f));
    println!("coupling energy  {:.6}", m.coupling_energy(&f, theta));
    println!("dissipation rate {:.6}", m.dissipation_rate(&f, &fdot));
    let st = m.thermal_state(&f, theta);
    println!(
        "enthalpy w       {:.6}  heat capacity {:.6}  entropy {:.6}",
        st.enthalpy, st.heat_capacity, st.entropy
    );
    println!("w(F, 0)          {:e}", m.enthalpy(&f, 0.0));
    println!(
        "inverse of w     {:.15}",
        m.enthalpy_inverse(&f, st.enthalpy)
    );

    // y -> R(t) y with R(t) = exp(t W): F -> R F and F' -> R F' + W R F.
    let r = Tensor2::rotation(2, 0.7);
    let spin = Tensor2::from_rows(&[&[0.0, -0.4], &[0.4, 0.0]]);
    let rf = r.matmul(&f);
    let rfdot = r.matmul(&fdot).add(&spin.matmul(&rf));
    println!(
        "rotated: |d phi| = {:.1e}  |d w| = {:.1e}  |d xi| = {:.1e}",
        (m.elastic_energy(&rf) - m.elastic_energy(&f)).abs(),
        (m.enthalpy(&rf, theta) - m.enthalpy(&f, theta)).abs(),
        (m.dissipation_rate(&rf, &rfdot) - m.dissipation_rate(&f, &fdot)).abs(),
    );
    println!(
        "xi under a pure spin rate: {:e}",
        m.dissipation_rate(&rf, &spin.matmul(&rf))
    );
}
