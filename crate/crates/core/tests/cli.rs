use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mspr::cli::{emit_plot, PlotKind, RunConfig};
use tempfile::TempDir;

const TINY: [&str; 14] = [
    "--set", "latent_dim=4",
    "--set", "hidden=8",
    "--set", "agent_hidden=8",
    "--set", "rl_batch=16",
    "--set", "chunk_batch=8",
    "--set", "period=5",
    "--set", "repr_updates=1",
];

fn mspr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mspr"))
        .args(args)
        .current_dir(dir)
        .env_remove("MSPR_SEED")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = mspr(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn dataset(dir: &Path) {
    ok(dir, &["gen-data", "--env", "pointmaze_medium", "--mode", "navigate", "--sigma", "0", "--n", "1500", "--seed", "0", "--out", "d.csv"]);
}

fn train_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["train", "--data", "d.csv", "--steps", "12", "--out", out];
    v.extend(TINY);
    v.extend(extra);
    v
}

#[test]
fn gen_data_writes_the_dataset_format() {
    let tmp = TempDir::new().unwrap();
    dataset(tmp.path());
    let text = fs::read_to_string(tmp.path().join("d.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("# mspr-dataset v1"));
    let manifest = fs::read_to_string(tmp.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed=0") && manifest.contains("output d.csv sha256="));
    let resolved = fs::read_to_string(tmp.path().join("config.resolved")).unwrap();
    assert!(resolved.contains("env=pointmaze_medium\n") && resolved.contains("transitions=1500\n"));
}

#[test]
fn training_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    dataset(d);
    ok(d, &train_args("a", &[]));
    ok(d, &train_args("b", &[]));
    for f in ["metrics.csv", "checkpoint.ckpt", "config.resolved", "manifest.txt"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let metrics = fs::read_to_string(d.join("a/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 13);

    ok(d, &["train", "--config", "a/config.resolved", "--out", "c"]);
    assert_eq!(fs::read(d.join("a/metrics.csv")).unwrap(), fs::read(d.join("c/metrics.csv")).unwrap());
    assert_eq!(fs::read(d.join("a/config.resolved")).unwrap(), fs::read(d.join("c/config.resolved")).unwrap());
}

#[test]
fn resume_continues_a_run() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    dataset(d);
    ok(d, &train_args("full", &[]));
    let mut half = train_args("half", &[]);
    half[4] = "6";
    ok(d, &half);
    ok(d, &train_args("rest", &["--resume", "half/checkpoint.ckpt"]));
    assert_eq!(fs::read(d.join("full/checkpoint.ckpt")).unwrap(), fs::read(d.join("rest/checkpoint.ckpt")).unwrap());
    let o = mspr(d, &train_args("bad", &["--resume", "half/checkpoint.ckpt", "--set", "gamma=0.9"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_and_diag_produce_reports() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    dataset(d);
    ok(d, &train_args("run", &[]));
    let o = ok(d, &["eval", "--env", "pointmaze_medium", "--checkpoint", "run/checkpoint.ckpt", "--episodes", "2", "--out", "ev"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean_success="));
    let eval = fs::read_to_string(d.join("ev/eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 6);
    ok(
        d,
        &[
            "diag", "--config", "run/config.resolved", "--checkpoint", "run/checkpoint.ckpt", "--checkpoint",
            "run/checkpoint.ckpt", "--episodes", "1", "--chunks", "8", "--out", "dg",
        ],
    );
    for f in ["value_map.csv", "value_map.svg", "traces.csv", "trace_task0.csv", "rank.csv", "gdyn.csv"] {
        assert!(d.join("dg").join(f).is_file(), "{f}");
    }
    let gdyn = fs::read_to_string(d.join("dg/gdyn.csv")).unwrap();
    let rows: Vec<&str> = gdyn.lines().skip(1).map(|l| l.split_once(',').unwrap().1).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], rows[1]);
}

#[test]
fn ablate_records_the_masked_config() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    dataset(d);
    let mut args = vec!["ablate", "--variant", "D", "--data", "d.csv", "--seeds", "0,1", "--episodes", "1", "--jobs", "2", "--out", "ab", "--set", "steps=6"];
    args.extend(TINY);
    ok(d, &args);
    let resolved = fs::read_to_string(d.join("ab/config.resolved")).unwrap();
    for k in ["lambda_inv", "lambda_gdyn", "lambda_gact", "lambda_rew"] {
        assert!(resolved.contains(&format!("{k}=0\n")), "{k}");
    }
    assert!(resolved.contains("lambda_dyn=1\n"));
    let csv = fs::read_to_string(d.join("ab/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(d.join("ab/checkpoint_seed1.ckpt").is_file());
}

#[test]
fn robust_writes_tables_and_plots() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let mut args = vec![
        "robust", "--env", "pointmaze_medium", "--seeds", "0", "--transitions", "400", "--episodes", "1", "--out", "rb",
        "--set", "steps=2",
    ];
    args.extend(TINY);
    ok(d, &args);
    let rows = fs::read_to_string(d.join("rb/robust.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 12);
    for f in ["summary.csv", "noise.svg", "fraction.svg"] {
        assert!(d.join("rb").join(f).is_file(), "{f}");
    }
}

#[test]
fn seed_falls_back_to_the_environment() {
    let tmp = TempDir::new().unwrap();
    let run = |seed_flag: Option<&str>, out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_mspr"));
        c.args(["gen-data", "--env", "pushbox", "--n", "200", "--out", out]).current_dir(tmp.path()).env("MSPR_SEED", "7");
        if let Some(s) = seed_flag {
            c.args(["--seed", s]);
        }
        assert!(c.output().unwrap().status.success());
        fs::read_to_string(tmp.path().join("config.resolved")).unwrap()
    };
    assert!(run(None, "a.csv").contains("\nseed=7\n"));
    assert!(run(Some("3"), "b.csv").contains("\nseed=3\n"));
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    for args in [
        vec!["frobnicate"],
        vec!["train", "--bogus-flag"],
        vec!["gen-data", "--out", "x.csv"],
        vec!["train", "--data", "d.csv", "--out", "r", "--set", "nope=1"],
        vec!["train", "--data", "d.csv", "--out", "r", "--set", "gamma=1.5"],
    ] {
        let o = mspr(d, &args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
    fs::write(d.join("broken.ckpt"), b"garbage").unwrap();
    let o = mspr(d, &["eval", "--env", "pointmaze_medium", "--checkpoint", "broken.ckpt", "--out", "e"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!d.join("e").exists());

    fs::create_dir(d.join("full")).unwrap();
    fs::write(d.join("full/keep.txt"), b"x").unwrap();
    dataset(d);
    let o = mspr(d, &train_args("full", &[]));
    assert_eq!(o.status.code(), Some(1));
    ok(d, &train_args("full", &["--force"]));
    assert!(d.join("full/keep.txt").is_file() && d.join("full/metrics.csv").is_file());
}

#[test]
fn help_and_layout_succeed() {
    let tmp = TempDir::new().unwrap();
    let o = ok(tmp.path(), &["--help"]);
    let help = String::from_utf8_lossy(&o.stdout);
    for c in ["gen-data", "train", "eval", "ablate", "robust", "diag", "layout"] {
        assert!(help.contains(c), "{c}");
    }
    let o = ok(tmp.path(), &["layout", "--env", "pointmaze_medium"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().all(|l| l.len() == 7));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let mut rc = RunConfig::default();
    rc.apply_text("steps=5\nq_weight=0.5\n").unwrap();
    rc.set("steps", "9").unwrap();
    let c = rc.train_config().unwrap();
    assert_eq!((c.steps, c.q_weight), (9, 0.5));
}

const CURVE: &str = "protocol,variant,mode,sigma,fraction,mean_success,std_success,seeds\n\
noise,FULL,navigate,0.2,1,0.9,0.05,3\n\
noise,FULL,navigate,0.5,1,0.6,0.1,3\n\
fraction,FULL,navigate,0.2,0.5,0.7,0.0,3\n";

#[test]
fn plots_are_deterministic() {
    let a = emit_plot(CURVE, PlotKind::Noise, "noise").unwrap();
    assert_eq!(a, emit_plot(CURVE, PlotKind::Noise, "noise").unwrap());
    assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
    let f = emit_plot(CURVE, PlotKind::Fraction, "fraction").unwrap();
    let line = f.lines().find(|l| l.starts_with("<polyline")).unwrap();
    let pts = line.split('"').nth(1).unwrap();
    assert_eq!(pts.split(' ').count(), 1);
}

#[test]
fn plot_schema_errors_name_missing_columns() {
    let e = emit_plot("sigma,foo\n0.1,2\n", PlotKind::Noise, "x").unwrap_err().to_string();
    assert!(e.contains("mean_success") && e.contains("std_success") && !e.contains("sigma,"), "{e}");
    assert!(emit_plot("", PlotKind::Trace, "x").is_err());
    assert!(emit_plot("t,q,latent_dist\n", PlotKind::Trace, "x").is_err());
}

#[test]
fn zero_error_value_map_is_uniform_mid_scale() {
    let csv = "x,y,q,mc,error,rollout_len\n1.5,1.5,0,0,0,0\n2.5,1.5,-3,-3,0,4\n1.5,2.5,-1,-1,0,1\n";
    let svg = emit_plot(csv, PlotKind::ValueMap, "v").unwrap();
    let cells: Vec<&str> = svg.lines().filter(|l| l.starts_with("<rect") && !l.contains("stroke") && !l.contains("x=\"0\"")).collect();
    assert_eq!(cells.len(), 3);
    assert!(cells.iter().all(|l| l.contains("fill=\"#ffffff\"")));
}
