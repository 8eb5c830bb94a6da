//! Parses a configuration, runs it and reads the written outputs back.

use thermovisco::cli_io::{emit_outputs, parse_config, read_field_dump, simulate, to_toml};

const CONFIG: &str = r#"
scenario = "shear_pulse"
name = "small_shear"

[grid]
cells = [6, 6]

[time]
steps = 20

[output]
fields = "all"
korn_every = 5
"#;

fn main() -> thermovisco::Result<()> {
    let cfg = parse_config(CONFIG)?;
    println!(
        "expanded configuration (hash {}):\n{}",
        &cfg.hash()[..12],
        to_toml(&cfg)
    );
    assert_eq!(parse_config(&to_toml(&cfg))?, cfg);

    let outcome = simulate(&cfg)?;
    let dir = std::env::temp_dir().join("thermovisco_config_outputs");
    emit_outputs(&cfg, &outcome, &dir)?;
    let dump = read_field_dump(&dir.join("fields/snap_00020.bin"))?;
    let det = dump.array("det_f").expect("det_f is written");
    println!(
        "final dump: t = {}, {} Hermite coefficients, min det F = {:.6}",
        dump.t,
        dump.array("y").map_or(0, |y| y.len()),
        det.iter().cloned().fold(f64::MAX, f64::min)
    );
    println!("all certificates passed: {}", outcome.report.passed);
    println!("outputs in {}", dir.display());
    Ok(())
}
