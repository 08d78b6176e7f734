use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hamflow::datagen::load_dataset;
use hamflow::models::exact_mass_spring_model;
use hamflow::systems::MassSpringParams;

fn hamflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hamflow")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hamflow(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    hamflow(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_csv(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().to_string();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    (header, rows)
}

fn small_dataset(dir: &Path, seed: &str) {
    ok(&[
        "generate", "--system", "mass_spring", "--n-train", "10", "--n-test", "2", "--seed", seed, "--image-size", "16",
        "--out", p(dir),
    ]);
}

#[test]
fn generate_round_trips_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    small_dataset(&a, "7");
    small_dataset(&b, "7");
    let ds = load_dataset(&a).unwrap();
    assert_eq!((ds.train.clean.len(), ds.test.clean.len()), (10, 2));
    assert!(a.join("train/frames/traj000009/step030.ppm").is_file());
    let strip = |dir: &Path| {
        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("created_unix");
        v
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(
        fs::read(a.join("train/states_noisy.f64")).unwrap(),
        fs::read(b.join("train/states_noisy.f64")).unwrap()
    );
    // the echoed config regenerates the same data
    let c = tmp.path().join("c");
    ok(&["generate", "--config", p(&a.join("config.json")), "--out", p(&c)]);
    assert_eq!(
        fs::read(a.join("test/states_clean.f64")).unwrap(),
        fs::read(c.join("test/states_clean.f64")).unwrap()
    );
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&["generate", "--system", "nope", "--out", p(&out)]), 2);
    assert_eq!(code(&["generate", "--n-train", "5"]), 2);
    assert_eq!(code(&["train", "--mode", "rollout", "--data", p(&tmp.path().join("missing")), "--out", p(&out)]), 2);
    assert_eq!(code(&["train", "--mode", "hnn", "--out", p(&out)]), 2);
    assert_eq!(code(&["eval", "--checkpoint", p(&tmp.path().join("none.ckpt")), "--out", p(&out)]), 2);
    assert_eq!(code(&["simulate", "--q", "1.0", "--out", p(&out)]), 2);
    assert_eq!(code(&["simulate", "--dt", "0", "--out", p(&out)]), 2);
    assert_eq!(code(&["bogus"]), 2);
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"dataset": {"n_train": "many"}}"#).unwrap();
    assert_eq!(code(&["generate", "--config", p(&cfg), "--out", p(&out)]), 2);
}

#[test]
fn io_failures_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain");
    fs::write(&file, b"").unwrap();
    assert_eq!(code(&["simulate", "--out", p(&file.join("sub"))]), 4);
}

#[test]
fn numerical_failures_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sim.json");
    // coincident bodies without softening have no finite force
    fs::write(
        &cfg,
        r#"{"system": "two_body",
            "params": {"system": "n_body", "masses": [1.0, 1.0], "g": 1.0, "softening": 0.0},
            "q": [0.0, 0.0, 0.0, 0.0], "p": [0.0, 0.0, 0.0, 0.0]}"#,
    )
    .unwrap();
    let out = hamflow(&["simulate", "--config", p(&cfg), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("g.json");
    fs::write(&cfg, r#"{"dataset": {"n_train": 3, "n_test": 2, "render": false, "n_steps": 5}}"#).unwrap();
    let out = tmp.path().join("d");
    ok(&["generate", "--config", p(&cfg), "--n-train", "4", "--out", p(&out)]);
    let echoed: serde_json::Value = serde_json::from_slice(&fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["dataset"]["n_train"], 4);
    assert_eq!(echoed["dataset"]["n_test"], 2);
    assert_eq!(echoed["dataset"]["dt"], 0.125);
    assert_eq!(echoed["dataset"]["noise_std"], 0.1);
}

fn last_state(dir: &Path) -> (f64, f64) {
    let (_, rows) = read_csv(&dir.join("trajectory.csv"));
    let r = rows.last().unwrap();
    (r[2], r[3])
}

#[test]
fn simulate_rows_reversal_and_speed() {
    let tmp = tempfile::tempdir().unwrap();
    let fwd = tmp.path().join("fwd");
    ok(&["simulate", "--system", "pendulum", "--integrator", "leapfrog", "--steps", "30", "--dt", "0.125", "--q", "1.0", "--p", "0.5", "--out", p(&fwd)]);
    let (header, rows) = read_csv(&fwd.join("trajectory.csv"));
    assert_eq!(header, "step,t,q0,p0");
    assert_eq!(rows.len(), 31);
    let (eh, energy) = read_csv(&fwd.join("energy.csv"));
    assert_eq!((eh.as_str(), energy.len()), ("step,t,energy", 31));

    let (q, pm) = last_state(&fwd);
    let back = tmp.path().join("back");
    ok(&["simulate", "--system", "pendulum", "--steps", "30", "--dt", "-0.125", &format!("--q={q}"), &format!("--p={pm}"), "--out", p(&back)]);
    let (q0, p0) = last_state(&back);
    assert!((q0 - 1.0).abs() < 1e-9 && (p0 - 0.5).abs() < 1e-9);

    let slow = tmp.path().join("slow");
    let fast = tmp.path().join("fast");
    ok(&["simulate", "--system", "pendulum", "--integrator", "rk4", "--steps", "30", "--q", "1.0", "--p", "0.5", "--out", p(&slow)]);
    ok(&["simulate", "--system", "pendulum", "--integrator", "rk4", "--steps", "15", "--dt-scale", "2.0", "--q", "1.0", "--p", "0.5", "--out", p(&fast)]);
    let (a, b) = (last_state(&slow), last_state(&fast));
    assert!((a.0 - b.0).abs().max((a.1 - b.1).abs()) < 1e-2, "{a:?} {b:?}");
}

#[test]
fn simulate_without_state_is_seeded_and_renders() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["simulate", "--system", "three_body", "--steps", "4", "--seed", "3", "--frames", "--out", p(d)]);
    }
    assert_eq!(fs::read(a.join("trajectory.csv")).unwrap(), fs::read(b.join("trajectory.csv")).unwrap());
    assert!(a.join("frames/step004.ppm").is_file());
    let (header, _) = read_csv(&a.join("trajectory.csv"));
    assert_eq!(header.split(',').count(), 2 + 12);
}

#[test]
fn train_dynamics_is_thread_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, "1");
    let run = |threads: &str, out: &Path| {
        ok(&[
            "--threads", threads, "train", "--mode", "rollout", "--data", p(&data), "--steps", "40", "--eval-every", "20",
            "--hidden", "8", "--truncation", "5", "--out", p(out),
        ])
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let header = run("1", &a);
    assert!(header.contains("threads: 1"));
    run("3", &b);
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    let (h, rows) = read_csv(&a.join("metrics.csv"));
    assert_eq!(h, "step_index,train_mse,test_mse,hamiltonian_variance");
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![20.0, 40.0]);
    let (h, rows) = read_csv(&a.join("mse.csv"));
    assert_eq!((h.as_str(), rows.len()), ("step,mean,std", 31));
}

#[test]
fn eval_of_the_exact_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, "2");
    let ckpt = tmp.path().join("exact.ckpt");
    exact_mass_spring_model(MassSpringParams::default()).to_checkpoint().save(&ckpt).unwrap();
    let out = tmp.path().join("eval");
    ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&out)]);

    let text = fs::read_to_string(out.join("hvar.csv")).unwrap();
    assert!(text.starts_with("# "));
    let var = |split: &str, integ: &str| -> f64 {
        text.lines()
            .find(|l| l.starts_with(&format!("{split},mass_spring,{integ},")))
            .unwrap()
            .rsplit(',')
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    for split in ["train", "test"] {
        assert!(var(split, "reference") < 1e-10);
        assert!(var(split, "leapfrog") < 1e-4);
        assert!(var(split, "euler") > 10.0 * var(split, "leapfrog"));
    }
    let (h, rows) = read_csv(&out.join("mse.csv"));
    assert_eq!(h, "step,mean,std");
    assert_eq!(rows[0][1], 0.0);
    let (h, rows) = read_csv(&out.join("energy.csv"));
    assert_eq!((h.as_str(), rows.len()), ("x,y,energy", 100 * 100));
    // exact model: H = q² + p²
    assert!(rows.iter().all(|r| (r[2] - r[0] * r[0] - r[1] * r[1]).abs() < 1e-9));
    assert_eq!(read_csv(&out.join("kinetic.csv")).0, "p,kinetic");
    assert_eq!(read_csv(&out.join("potential.csv")).0, "q,potential");
    let (h, rows) = read_csv(&out.join("vector_field.csv"));
    assert_eq!((h.as_str(), rows.len()), ("q,p,dq,dp", 400));
    let pgm = fs::read(out.join("energy.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n100 100\n255\n") && pgm.len() == 15 + 100 * 100);
    assert!(out.join("config.json").is_file());
}

#[test]
fn train_and_eval_a_density_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("nhf.json");
    fs::write(&cfg, r#"{"n_test_samples": 100, "nhf": {"train": {"encoder_hidden": [16]}}}"#).unwrap();
    let run = tmp.path().join("nhf");
    ok(&[
        "train", "--config", p(&cfg), "--mode", "nhf", "--density", "mixture2", "--steps", "150", "--lr", "1e-2",
        "--hidden", "16", "--eval-every", "50", "--n-samples", "300", "--out", p(&run),
    ]);
    let (h, curve) = read_csv(&run.join("curve.csv"));
    assert_eq!((h.as_str(), curve.len()), ("step,negative_elbo", 150));
    for f in ["flow.ckpt", "encoder.ckpt", "flow.json", "config.json", "summary.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let out = tmp.path().join("eval");
    let stdout = ok(&["eval", "--checkpoint", p(&run.join("flow.ckpt")), "--n-samples", "300", "--out", p(&out)]);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    let window = summary["grid_mass"].as_f64().unwrap();
    let mass = summary["total_mass"].as_f64().unwrap();
    assert!(window <= mass + 1e-9 && (mass - 1.0).abs() < 0.02, "{stdout}");
    let (h, rows) = read_csv(&out.join("density.csv"));
    assert_eq!((h.as_str(), rows.len()), ("x,y,density", 100 * 100));
    assert_eq!(read_csv(&out.join("kde.csv")).0, "x,y,density");
    assert_eq!(read_csv(&out.join("marginal.csv")).0, "q,model,target");
    assert_eq!(read_csv(&out.join("vector_field.csv")).0, "q,p,dq,dp");

    let rnvp = tmp.path().join("rnvp");
    ok(&[
        "train", "--config", p(&cfg), "--mode", "rnvp", "--steps", "20", "--hidden", "8", "--n-samples", "100", "--out",
        p(&rnvp),
    ]);
    ok(&["eval", "--checkpoint", p(&rnvp.join("flow.ckpt")), "--grid", "40", "--n-samples", "100", "--out", p(&tmp.path().join("re"))]);
}
