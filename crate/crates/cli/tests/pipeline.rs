use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use buildloss_cli::stages::{cmd_eval, cmd_label, cmd_run, cmd_synth, cmd_train, files};
use buildloss_cli::{Mode, PipelineConfig, PipelineError};

fn small(out: &Path, seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };
    c.paths.out = out.to_path_buf();
    c.synth.scenario.n_buildings = 60;
    c.synth.scenario.samples_per_building = 40.0;
    c.boost.n_rounds = 60;
    c
}

/// Every file in `dir`, name to bytes.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p: PathBuf = e.unwrap().path();
        out.insert(
            p.file_name().unwrap().to_string_lossy().into_owned(),
            fs::read(&p).unwrap(),
        );
    }
    out
}

#[test]
fn full_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        let c = small(d, 7);
        cmd_synth(&c).unwrap();
        cmd_run(&c).unwrap();
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert!(sa.len() > 20);
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (name, bytes) in &sa {
        assert!(bytes == &sb[name], "{name} differs between runs");
    }
    // Every text output names the config hash.
    let hash = small(a.path(), 7).hash();
    for (name, bytes) in &sa {
        let text = String::from_utf8_lossy(bytes);
        assert!(text.contains(&hash), "{name} lacks the provenance header");
    }
}

#[test]
fn truth_replay_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path(), 3);
    cmd_synth(&c).unwrap();
    let truth = fs::read_to_string(dir.path().join(files::TRUTH_BUILDINGS)).unwrap();
    let mut splits = String::from("building,role\n");
    let mut labels: BTreeMap<&str, String> = BTreeMap::new();
    let header = "building,band,class,p_low,p_medium,p_high\n";
    for line in truth.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if !splits.contains(&format!("\n{},", f[0])) {
            splits.push_str(&format!("{},test\n", f[0]));
        }
        for (task, class) in [("o2i", f[2]), ("i2i", f[3])] {
            let p = match class {
                "low" => "1,0,0",
                "medium" => "0,1,0",
                _ => "0,0,1",
            };
            labels
                .entry(task)
                .or_insert_with(|| header.to_string())
                .push_str(&format!("{},{},{class},{p}\n", f[0], f[1]));
        }
    }
    fs::write(dir.path().join(files::SPLITS), splits).unwrap();
    for (task, body) in &labels {
        fs::write(dir.path().join(format!("building_labels_{task}.csv")), body).unwrap();
    }
    let run = cmd_eval(&c).unwrap();
    assert_eq!(run.tasks.len(), 2);
    for t in &run.tasks {
        let r = &t.reports["test"];
        assert_eq!(r.accuracy, 1.0);
        assert!((r.macro_f1 - 1.0).abs() < 1e-12);
        assert_eq!(r.mean_building_entropy, Some(0.0));
    }
}

#[test]
fn sl_and_ssl_runs_both_report_on_hidden_buildings() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path(), 5);
    c.synth.hidden_fraction = 0.5;
    cmd_synth(&c).unwrap();
    let hidden = fs::read_to_string(dir.path().join(files::HIDDEN)).unwrap();
    assert_eq!(
        hidden.lines().filter(|l| !l.starts_with('#')).count() - 1,
        30
    );

    let mut reports = Vec::new();
    for mode in [Mode::Sl, Mode::Ssl] {
        c.mode = mode;
        let run = cmd_run(&c).unwrap();
        for t in &run.tasks {
            assert!(
                t.reports.contains_key("hidden"),
                "{mode:?} lacks a hidden report"
            );
        }
        let eval: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("eval_o2i.json")).unwrap())
                .unwrap();
        assert!(eval["roles"]["hidden"]["accuracy"].is_number());
        reports.push(run);
    }
    assert!(dir.path().join("ssl_ledger_o2i.csv").is_file());
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("train_report_o2i.json")).unwrap(),
    )
    .unwrap();
    assert!(report["pseudo_labels"].is_number());
}

#[test]
fn stages_fail_cleanly_without_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path(), 1);
    // A referenced input that does not exist is a configuration error.
    let err = cmd_label(&c).unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)), "{err}");
    assert!(err.to_string().contains("buildings.geojson"));
    cmd_synth(&c).unwrap();
    let err = cmd_train(&c).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");

    // Malformed content is a data error that names the file and line.
    let samples = dir.path().join(files::SAMPLES);
    let mut text = fs::read_to_string(&samples).unwrap();
    let line = text.lines().count() + 1;
    text.push_str("s999999,not-a-number,52.6,3.0,101,1300,-90,1700000000\n");
    fs::write(&samples, text).unwrap();
    let err = cmd_label(&c).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    let msg = err.to_string();
    assert!(
        msg.contains("samples.csv") && msg.contains(&format!(":{line}:")),
        "{msg}"
    );
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_buildloss"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_eq!(
        cli(&["label", "--config", bad.to_str().unwrap(), "--out", out])
            .status
            .code(),
        Some(2)
    );
    let bad_ssl = dir.path().join("ssl.toml");
    fs::write(&bad_ssl, "[ssl]\nthreshold = 0.2\n").unwrap();
    assert_eq!(
        cli(&["train", "--config", bad_ssl.to_str().unwrap(), "--out", out])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(cli(&["eval", "--out", out]).status.code(), Some(2));

    let cfg = dir.path().join("small.toml");
    fs::write(
        &cfg,
        "seed = 2\n[synth]\nn_buildings = 40\nsamples_per_building = 30\n[boost]\nn_rounds = 30\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    assert!(cli(&["synth", "--config", c, "--out", out])
        .status
        .success());
    let run = cli(&[
        "run", "--config", c, "--out", out, "--task", "o2i", "--model", "rf",
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(dir.path().join("loss_map_o2i.geojson").is_file());
    assert!(!dir.path().join("model_i2i.json").exists());
    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("model_o2i.json")).unwrap())
            .unwrap();
    assert_eq!(model["metadata"]["model"], "rf");
}
