//! Configuration parsing, on-disk formats and the command line.

use std::fs;
use std::process::Command;

use proptest::prelude::*;
use thermovisco::cli_io::{
    emit_outputs, fmt_f64, parse_config, parse_field_dump, read_field_dump, refine,
    refinement_checks, simulate, simulate_from, timeseries_csv, to_toml, Checkpoint,
    DiagnosticsLevel, FieldDumps, DEFAULT_CELLS, FIELD_MAGIC, TIMESERIES_COLUMNS,
};
use thermovisco::error::Error;
use thermovisco::scheme::Scenario;

fn config_errors(text: &str) -> Vec<String> {
    match parse_config(text) {
        Err(Error::Config(v)) => v,
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("accepted:\n{text}"),
    }
}

#[test]
fn empty_document_is_the_steady_preset() {
    let cfg = parse_config("").unwrap();
    assert_eq!(cfg.base, "steady");
    assert_eq!(cfg.scenario, Scenario::steady(DEFAULT_CELLS));
    assert_eq!(cfg.output.diagnostics, DiagnosticsLevel::Full);
    assert_eq!(cfg.output.fields, FieldDumps::Final);
}

#[test]
fn unknown_keys_get_a_suggestion() {
    let errs = config_errors("[grid]\ncels = [4, 4]\n");
    assert_eq!(errs.len(), 1);
    assert!(
        errs[0].contains("grid.cels") && errs[0].contains("did you mean `cells`"),
        "{errs:?}"
    );
}

#[test]
fn weak_coercivity_exponent_is_rejected() {
    let errs = config_errors("[material]\nq = 3.0\n");
    assert!(errs.iter().any(|e| e.contains("q ≥ pd/(p−d)")), "{errs:?}");
}

#[test]
fn every_violation_is_reported_at_once() {
    let errs = config_errors(
        "[grid]\ncells = [0, 4]\n[material]\ns = 1.0\nnu = -1.0\n[time]\nt_final = 1.0\ntau = 0.3\n[solvr]\n",
    );
    assert!(errs.len() >= 4, "{errs:?}");
    assert!(errs.iter().any(|e| e.contains("solvr")));
    assert!(errs.iter().any(|e| e.contains("tau")));
}

#[test]
fn section_overrides_apply_to_the_named_preset() {
    let cfg = parse_config(
        "scenario = \"shear_pulse\"\n[grid]\ncells = [6, 6]\n[time]\nsteps = 7\neps = 0.05\n[material]\nq = 6.0\n",
    )
    .unwrap();
    let mut expect = Scenario::shear_pulse(6);
    expect.steps = 7;
    expect.eps = 0.05;
    expect.material.q = 6.0;
    expect.material.c2 =
        thermovisco::material::stress_free_c2(2, expect.material.c1, expect.material.s, 6.0);
    assert_eq!(cfg.scenario, expect);
}

#[test]
fn canonical_form_round_trips() {
    for name in Scenario::PRESETS {
        let cfg =
            parse_config(&format!("scenario = \"{name}\"\n[grid]\ncells = [5, 5]\n")).unwrap();
        let text = to_toml(&cfg);
        let back = parse_config(&text).unwrap();
        assert_eq!(back, cfg, "{name}");
        assert_eq!(to_toml(&back), text);
        assert_eq!(back.hash(), cfg.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn perturbed_configs_round_trip(
        c1 in 0.1f64..10.0, q in 5.0f64..9.0, nu in 0.01f64..5.0, kappa in 1e-6f64..10.0,
        steps in 1usize..200, eps in 0.0f64..0.5, n in 2usize..20, theta0 in 0.0f64..3.0,
    ) {
        let text = format!(
            "scenario = \"shear_pulse\"\n[grid]\ncells = [{n}, {n}]\n[material]\nc1 = {c1:?}\nq = {q:?}\nnu = {nu:?}\nkappa = {kappa:?}\n[time]\nsteps = {steps}\neps = {eps:?}\ntheta0 = {theta0:?}\n"
        );
        let cfg = parse_config(&text).unwrap();
        prop_assert_eq!(cfg.scenario.material.c1, c1);
        prop_assert_eq!(cfg.scenario.steps, steps);
        let back = parse_config(&to_toml(&cfg)).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn float_format_round_trips(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }
}

#[test]
fn steady_timeseries_has_zero_rates() {
    let cfg = parse_config("[grid]\ncells = [3, 3]\n[time]\nsteps = 3\n[output]\nkorn_every = 2\n")
        .unwrap();
    let out = simulate(&cfg).unwrap();
    assert!(out.report.passed);
    let csv = timeseries_csv(&out.rows).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# thermovisco timeseries v1"));
    let body = lines.collect::<Vec<_>>().join("\n");
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, TIMESERIES_COLUMNS);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    for (k, r) in rows.iter().enumerate() {
        for name in [
            "xi_step",
            "xi_reg_step",
            "ext_power",
            "boundary_heat",
            "entropy_prod",
            "energy_gap_total",
        ] {
            let v: f64 = r[col(name)].parse().unwrap();
            assert!(v.abs() <= 1e-12, "{name} = {v}");
        }
        let korn: f64 = r[col("korn_const")].parse().unwrap();
        assert_eq!(korn.is_nan(), k % 2 == 1);
        assert!(r[col("hk_bound")].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let cfg = parse_config("scenario = \"shear_pulse\"\n[grid]\ncells = [3, 3]\n[time]\nsteps = 4\n[output]\nfields = \"all\"\n")
        .unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        emit_outputs(&cfg, &simulate(&cfg).unwrap(), d.path()).unwrap();
    }
    let mut names = vec![
        "config.toml",
        "timeseries.csv",
        "report.json",
        "checkpoint.json",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    names.extend((0..=4).map(|k| format!("fields/snap_{k:05}.bin")));
    for n in &names {
        let a = fs::read(dirs[0].path().join(n)).unwrap();
        let b = fs::read(dirs[1].path().join(n)).unwrap();
        assert!(!a.is_empty() && a == b, "{n} differs");
    }
    let written =
        parse_config(&fs::read_to_string(dirs[0].path().join("config.toml")).unwrap()).unwrap();
    assert_eq!(written, cfg);
}

#[test]
fn field_dump_round_trip() {
    let cfg =
        parse_config("scenario = \"shear_pulse\"\n[grid]\ncells = [3, 4]\n[time]\nsteps = 2\n")
            .unwrap();
    let out = simulate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&cfg, &out, dir.path()).unwrap();
    let dump = read_field_dump(&dir.path().join("fields/snap_00002.bin")).unwrap();
    let last = out.trajectory.snapshots.last().unwrap();
    assert_eq!(
        (dump.d, dump.cells.clone(), dump.step, dump.t),
        (2, vec![3, 4], 2, last.t)
    );
    assert_eq!(dump.array("y").unwrap(), &last.y.values[..]);
    assert_eq!(dump.array("theta").unwrap(), &last.theta.values[..]);
    assert_eq!(dump.array("w").unwrap(), &last.w[..]);
    assert!(dump.array("det_f").unwrap().iter().all(|j| *j > 0.0));
    let bytes = fs::read(dir.path().join("fields/snap_00002.bin")).unwrap();
    assert!(bytes.starts_with(FIELD_MAGIC.as_bytes()));
    assert!(parse_field_dump(&bytes[..bytes.len() - 8]).is_err());
}

#[test]
fn checkpoint_resume_matches_a_straight_run_and_checks_the_hash() {
    let base = "scenario = \"shear_pulse\"\n[grid]\ncells = [3, 3]\n";
    let short = parse_config(&format!("{base}[time]\nsteps = 6\n")).unwrap();
    let full = simulate(&short).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    let mut head = full.trajectory.clone();
    head.snapshots.truncate(4);
    head.steps.truncate(3);
    Checkpoint::new(&short, &head).save(&path).unwrap();
    let resumed = simulate_from(&short, Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(resumed.trajectory.snapshots, full.trajectory.snapshots);

    let other = parse_config(&format!("{base}[time]\nsteps = 6\neps = 0.02\n")).unwrap();
    assert!(matches!(
        simulate_from(&other, Checkpoint::load(&path).unwrap()),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn refinement_outputs() {
    let cfg = parse_config(
        "scenario = \"refine_tau\"\n[grid]\ncells = [3, 3]\n[time]\ntau_list = [0.25, 0.125, 0.0625]\neps_list = [0.1, 0.01]\n",
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rep = refine(&cfg, Some(dir.path())).unwrap();
    assert_eq!(rep.tau_cells.len(), 3);
    assert_eq!(rep.tau_cauchy.len(), 2);
    assert_eq!(rep.eps_cells.len(), 2);
    let names: Vec<String> = refinement_checks(&rep)
        .into_iter()
        .map(|c| c.name)
        .collect();
    assert_eq!(
        names,
        [
            "tau_cauchy_grad_y",
            "tau_cauchy_theta",
            "eps_xi_gap",
            "eps_rate"
        ]
    );
    let cells = fs::read_to_string(dir.path().join("refinement_cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1 + 3 + 2);
    let cauchy = fs::read_to_string(dir.path().join("refinement_cauchy.csv")).unwrap();
    assert_eq!(cauchy.lines().count(), 1 + 2 + 1);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("refinement.json")).unwrap())
            .unwrap();
    assert!(json["tau_cells"].is_array());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_thermovisco"))
}

#[test]
fn command_line_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    fs::write(&good, "[grid]\ncells = [3, 3]\n[time]\nsteps = 2\n").unwrap();
    let st = bin()
        .args(["validate", good.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        st.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&st.stderr)
    );
    assert!(String::from_utf8_lossy(&st.stdout).contains("energy_ledger"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[grid]\ncels = [3, 3]\n").unwrap();
    let st = bin()
        .args(["validate", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("did you mean `cells`"));

    let out = dir.path().join("run");
    let st = bin()
        .args([
            "simulate",
            good.to_str().unwrap(),
            "--tau",
            "0.5",
            "--isothermal",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        st.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&st.stderr)
    );
    let written = parse_config(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert!(written.scenario.isothermal);
    assert_eq!(written.scenario.steps, 2);

    let st = bin()
        .args(["simulate", good.to_str().unwrap(), "--tau", "0.3"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
}
