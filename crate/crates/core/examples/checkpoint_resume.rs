//! Stops a run halfway, stores a checkpoint and finishes from it.

use thermovisco::cli_io::{parse_config, Checkpoint};
use thermovisco::scheme::{resume, run};

fn main() -> thermovisco::Result<()> {
    let cfg =
        parse_config("scenario = \"shear_pulse\"\n[grid]\ncells = [6, 6]\n[time]\nsteps = 20\n")?;
    let sc = &cfg.scenario;
    let model = sc.model()?;

    let full = run(&model, sc, sc.steps, sc.eps)?;
    let mut half = run(&model, sc, sc.steps, sc.eps)?;
    half.snapshots.truncate(11);
    half.steps.truncate(10);

    let path = std::env::temp_dir().join("thermovisco_checkpoint.json");
    Checkpoint::new(&cfg, &half).save(&path)?;
    let restored = Checkpoint::load(&path)?.into_trajectory(&cfg)?;
    let finished = resume(&model, restored, sc.steps)?;

    let a = full.snapshots.last().expect("non-empty");
    let b = finished.snapshots.last().expect("non-empty");
    println!(
        "max |y diff| = {:e}, max |theta diff| = {:e}",
        a.y.max_abs_diff(&b.y),
        a.theta.max_abs_diff(&b.theta)
    );
    Ok(())
}
