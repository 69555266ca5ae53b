use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use motseg::annotation::parse_labels;
use motseg::config::RunConfig;
use motseg::datasets::synthetic::generate_sequences;

const CONFIG: &str = r#"
seed = 3

[model]
width = 0.25
fpn_channels = 8
num_prototypes = 4
input_size = [64, 64]

[train]
iterations = 4
batch_size = 2
lr0 = 0.001

[eval]
bench_warmup = 1
bench_runs = 3

[synthetic]
image_size = [64, 64]
shape_size = [12, 20]
frames_per_sequence = 5
num_sequences = 1
"#;

fn motseg(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_motseg"));
    cmd.args(args).env_remove("MOTSEG_OUT");
    if let Some(p) = env_out {
        cmd.env("MOTSEG_OUT", p);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("run.toml");
    fs::write(&config, CONFIG).unwrap();
    let data = root.join("data");
    ok(&motseg(&["synth", "--config", s(&config), "--out", s(&data)], None));
    Fixture {
        _dir: dir,
        root,
        config,
        data,
    }
}

fn train(f: &Fixture, out: &Path) {
    ok(&motseg(
        &["train", "--config", s(&f.config), "--dataset", s(&f.data), "--out", s(out)],
        None,
    ));
}

fn read_dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_reproducible_and_records_config() {
    let f = fixture();
    let again = f.root.join("again");
    ok(&motseg(&["synth", "--config", s(&f.config), "--out", s(&again)], None));
    assert_eq!(read_dir_bytes(&f.data), read_dir_bytes(&again));
    let resolved = RunConfig::load(&f.data.join("config.toml")).unwrap();
    assert_eq!(resolved.synthetic.frames_per_sequence, 5);
    let fp = fs::read_to_string(f.data.join("fingerprint.txt")).unwrap();
    assert_eq!(fp.trim(), resolved.fingerprint());
}

#[test]
fn annotate_recovers_generator_motion() {
    let f = fixture();
    let seq = f.data.join("sequences").join("seq000");
    let out = f.root.join("labels");
    ok(&motseg(
        &[
            "annotate",
            "--poses",
            s(&seq.join("poses.txt")),
            "--tracklets",
            s(&seq.join("tracklets.txt")),
            "--out",
            s(&out),
        ],
        None,
    ));
    let path = out.join("labels.txt");
    let (_, labels) = parse_labels(&fs::read_to_string(&path).unwrap(), &path).unwrap();
    let cfg = RunConfig::load(&f.config).unwrap();
    let truth = generate_sequences(&cfg.synthetic).unwrap().remove(0);
    assert!(!labels.is_empty());
    for l in &labels {
        let shape = truth.shapes.iter().find(|s| s.instance_id == l.object_id).unwrap();
        assert_eq!(l.moving, shape.moving(), "object {}", l.object_id);
    }
}

#[test]
fn train_eval_bench_viz_round_trip() {
    let f = fixture();
    let run = f.root.join("run");
    train(&f, &run);
    let ck = run.join("checkpoint.bin");
    assert!(ck.exists());
    assert_eq!(fs::read_to_string(run.join("metrics.log")).unwrap().lines().count(), 4);

    let eval = f.root.join("eval");
    let out = motseg(&["eval", "--checkpoint", s(&ck), "--split", "all", "--out", s(&eval)], None);
    ok(&out);
    let records = fs::read_to_string(eval.join("report.records")).unwrap();
    for key in ["motion.mask.ap50 ", "semantic.box.ap ", "pixel.miou ", "params_m "] {
        assert!(records.contains(key), "{key} missing from\n{records}");
    }
    assert!(eval.join("report.txt").exists());
    assert!(eval.join("fingerprint.txt").exists());

    let bench = f.root.join("bench");
    ok(&motseg(&["bench", "--checkpoint", s(&ck), "--out", s(&bench)], None));
    let b = fs::read_to_string(bench.join("bench.records")).unwrap();
    assert!(b.contains("fps ") && b.contains("time_ms "));

    let frame = f.data.join("sequences/seq000");
    let viz = |dir: &Path| {
        ok(&motseg(
            &[
                "viz",
                "--checkpoint",
                s(&ck),
                "--image",
                s(&frame.join("image_t/000000.png")),
                "--flow",
                s(&frame.join("flow/000000.flo")),
                "--out",
                s(dir),
            ],
            None,
        ))
    };
    let (v1, v2) = (f.root.join("viz1"), f.root.join("viz2"));
    viz(&v1);
    viz(&v2);
    assert!(v1.join("prototypes.png").exists());
    assert_eq!(read_dir_bytes(&v1), read_dir_bytes(&v2));
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let f = fixture();
    let (a, b) = (f.root.join("a"), f.root.join("b"));
    train(&f, &a);
    train(&f, &b);
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(b.join("checkpoint.bin")).unwrap());
    assert_eq!(fs::read(a.join("metrics.log")).unwrap(), fs::read(b.join("metrics.log")).unwrap());
}

#[test]
fn flags_override_config_file() {
    let f = fixture();
    let run = f.root.join("run");
    ok(&motseg(
        &[
            "train",
            "--config",
            s(&f.config),
            "--dataset",
            s(&f.data),
            "--iterations",
            "2",
            "--seed",
            "9",
            "--out",
            s(&run),
        ],
        None,
    ));
    let resolved = RunConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(resolved.train.iterations, Some(2));
    assert_eq!(resolved.seed, 9);
    // file value kept where no flag was given
    assert_eq!(resolved.train.batch_size, 2);
}

#[test]
fn output_root_comes_from_environment() {
    let f = fixture();
    let root = f.root.join("envroot");
    ok(&motseg(&["synth", "--config", s(&f.config)], Some(&root)));
    assert!(root.join("synth").join("index.jsonl").exists());
}

#[test]
fn missing_checkpoint_fails_without_report() {
    let f = fixture();
    let eval = f.root.join("eval");
    let out = motseg(
        &["eval", "--checkpoint", s(&f.root.join("nope.bin")), "--dataset", s(&f.data), "--out", s(&eval)],
        None,
    );
    assert!(!out.status.success());
    assert!(!eval.exists());
}

#[test]
fn unknown_config_key_is_named() {
    let f = fixture();
    let bad = f.root.join("bad.toml");
    fs::write(&bad, "[model]\nbakbone = \"tiny_conv\"\n").unwrap();
    let out = motseg(&["train", "--config", s(&bad), "--out", s(&f.root.join("x"))], None);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bakbone") && err.contains("backbone"), "{err}");
}

#[test]
fn bad_enum_flag_lists_accepted_values() {
    let out = motseg(&["train", "--input-mode", "depth"], None);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("rgb_flow"), "{err}");
}
