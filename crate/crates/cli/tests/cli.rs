use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flowpce::datagen::SyntheticSpec;
use flowpce::dynsim::SwingSystem;
use flowpce::flow::{Arch, FlowConfig};
use flowpce::nataf::MarginalKind;
use flowpce::pipeline::{DataSource, EvalOptions, ExperimentConfig, MapperSpec, Seeds};

fn flowpce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowpce")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small(out: &Path, name: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::mixture(Seeds { data: 1, train: 2, eval: 3 });
    cfg.name = name.into();
    cfg.out_dir = out.to_path_buf();
    cfg.dataset = DataSource::Synthetic { spec: SyntheticSpec::mixture_benchmark(1).with_samples(1500) };
    cfg.mapper = MapperSpec::Copula { marginals: vec![MarginalKind::Empirical; 3] };
    cfg.degree = 2;
    cfg.regression_samples = 80;
    cfg.mc_samples = 200;
    cfg.output_points = 40;
    cfg.eval = EvalOptions { kl_samples: 1000, msi_samples: 1000, projections: 32, model_samples: 500, surrogate_samples: 500 };
    cfg
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let p = dir.join(format!("{}.json", cfg.name));
    std::fs::write(&p, cfg.to_json().unwrap()).unwrap();
    p
}

#[test]
fn help_lists_every_subcommand() {
    let o = flowpce(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for c in ["gen-data", "train-flow", "fit-copula", "build-pce", "mc-ref", "evaluate", "arch-compare", "bins-sweep", "report"] {
        assert!(text.contains(c), "{c}");
    }
}

#[test]
fn staged_commands_chain_into_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "staged");
    let path = write_config(dir.path(), &cfg);
    let p = path.to_str().unwrap();
    for cmd in ["gen-data", "fit-copula", "build-pce", "mc-ref", "evaluate"] {
        let o = flowpce(&[cmd, "--config", p]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let run = cfg.run_dir();
    for f in ["data.csv", "copula.json", "surrogate.json", "reference.json", "metrics.json", "report.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    // the staged result equals the one-shot run
    let once = small(&dir.path().join("once"), "staged");
    let cfg_dir = dir.path().join("once_cfg");
    std::fs::create_dir_all(&cfg_dir).unwrap();
    let o = flowpce(&["run", "--config", write_config(&cfg_dir, &once).to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(once.run_dir().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(a["nirmse"], b["nirmse"]);
    assert_eq!(a["msi"], b["msi"]);

    let o = flowpce(&["report", "--out", dir.path().to_str().unwrap(), "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("table.json")).unwrap()).unwrap();
    assert_eq!(table.as_array().unwrap().len(), 1);
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "flags");
    let path = write_config(dir.path(), &cfg);
    let out = dir.path().join("elsewhere");
    let o = flowpce(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--seed-data",
        "11",
        "--seed-train",
        "12",
        "--seed-eval",
        "13",
        "--lambda",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let saved = ExperimentConfig::load(&out.join("flags").join("config.json")).unwrap();
    assert_eq!(saved.seeds, Seeds { data: 11, train: 12, eval: 13 });
    assert_eq!(saved.lambda, Some(0.0));
}

#[test]
fn configuration_problems_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&flowpce(&["run"])), 2);
    assert_eq!(code(&flowpce(&["run", "--config", dir.path().join("nope.json").to_str().unwrap()])), 2);
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "{ not json").unwrap();
    assert_eq!(code(&flowpce(&["evaluate", "--config", junk.to_str().unwrap()])), 2);
    let cfg = small(dir.path(), "copula-cfg");
    let p = write_config(dir.path(), &cfg);
    assert_eq!(code(&flowpce(&["train-flow", "--config", p.to_str().unwrap()])), 2);
    // evaluating before anything was built
    assert_eq!(code(&flowpce(&["evaluate", "--config", p.to_str().unwrap()])), 2);
    assert_eq!(code(&flowpce(&["bogus-command"])), 2);
}

fn with_range(dir: &Path, name: &str, low: f64, high: f64) -> ExperimentConfig {
    let mut sim = SwingSystem::benchmark().config().clone();
    sim.uncertain[1].low = low;
    sim.uncertain[1].high = high;
    let sim_path = dir.join(format!("{name}-sim.json"));
    std::fs::write(&sim_path, sim.to_json().unwrap()).unwrap();
    let mut cfg = small(dir, name);
    cfg.simulator = Some(sim_path);
    cfg
}

#[test]
fn partly_failing_batches_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    // the upper part of this range has no stable operating point
    let cfg = with_range(dir.path(), "partial", 1.5, 5.0);
    let p = write_config(dir.path(), &cfg);
    let o = flowpce(&["run", "--config", p.to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(cfg.run_dir().join("metrics.json")).unwrap()).unwrap();
    assert!(!m["failed_regression_samples"].as_array().unwrap().is_empty());
}

#[test]
fn numerical_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    // no operating point exists anywhere in this range
    let cfg = with_range(dir.path(), "hopeless", 6.0, 8.0);
    let p = write_config(dir.path(), &cfg);
    let p = p.to_str().unwrap();
    assert_eq!(code(&flowpce(&["fit-copula", "--config", p])), 0);
    let o = flowpce(&["build-pce", "--config", p]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    // artifacts of the completed stage stay for inspection
    assert!(cfg.run_dir().join("copula.json").is_file());
}

#[test]
fn sweeps_write_tables_in_the_requested_format() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), "sweep");
    cfg.mapper = MapperSpec::Flow {
        config: FlowConfig { arch: Arch::Nsf, layers: 2, hidden: vec![8], bins: 4, epochs: 2, ..FlowConfig::default() },
    };
    let p = write_config(dir.path(), &cfg);
    let p = p.to_str().unwrap();
    let o = flowpce(&["bins-sweep", "--config", p, "--bins", "2,3", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(cfg.run_dir().join("bins_sweep.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);

    let o = flowpce(&["arch-compare", "--config", p]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(cfg.run_dir().join("arch_compare.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["NSF", "MAF", "NICE"]);
}
