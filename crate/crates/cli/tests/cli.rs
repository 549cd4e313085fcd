use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_blxam");

const TINY: &str = r#"
seed = 5

[corpus]
n_words = 12
words_per_utterance = [1, 2]

[corpus.sizes.train]
mono_a = 6
mono_b = 6
code_mixed = 4

[corpus.sizes.dev]
mono_a = 0
mono_b = 0
code_mixed = 0

[corpus.sizes.test]
mono_a = 4
mono_b = 4
code_mixed = 3

[model]
model_dim = 8
heads = 2
ff_dim = 12
n_shared_layers = 1
n_pe_layers = 1
n_lid_layers = 1
chunk_frames = 4

[training]
epochs = 2
batch_utterances = 4
warmup_steps = 2
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str], code: i32) -> String {
    let out = run(dir, args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn lexicon_writes_files_and_sharing() {
    let ws = workspace();
    let d = ws.path();
    std::fs::write(d.join("it.txt"), "casa\nper\ndi\n").unwrap();
    std::fs::write(d.join("en.txt"), "house\nthe\ndi\n").unwrap();
    let out = ok(
        d,
        &[
            "lexicon", "--words", "it.txt", "--words", "en.txt", "--out", "lex",
        ],
    );
    assert!(out.contains("sharing: 0.2000"), "{out}");
    for f in [
        "lexicon.a.txt",
        "lexicon.b.txt",
        "inventory.a.txt",
        "inventory.b.txt",
        "inventory.bilingual.txt",
    ] {
        assert!(d.join("lex").join(f).is_file(), "{f}");
    }
    let lex = std::fs::read_to_string(d.join("lex/lexicon.a.txt")).unwrap();
    assert!(lex.contains("casa") && lex.contains("_c a s a_"), "{lex}");

    let out = ok(
        d,
        &[
            "lexicon", "--words", "it.txt", "--words", "it.txt", "--out", "same",
        ],
    );
    assert!(out.contains("sharing: 1.0000"), "{out}");
}

#[test]
fn lexicon_reports_every_bad_line() {
    let ws = workspace();
    let d = ws.path();
    std::fs::write(
        d.join("bad.txt"),
        b"casa\n\xff\xfeoops\ndi\nstra\xc3\x9fe\n",
    )
    .unwrap();
    let err = fails(d, &["lexicon", "--words", "bad.txt", "--out", "lex"], 2);
    assert!(err.contains("bad.txt:2") && err.contains("UTF-8"), "{err}");
    assert!(err.contains("bad.txt:4"), "{err}");
    assert!(!d.join("lex").exists());
}

#[test]
fn config_errors_are_listed_together() {
    let ws = workspace();
    let d = ws.path();
    std::fs::write(
        d.join("typo.toml"),
        "sede = 1\n[model]\nmodel_dimm = 3\n[decode]\nbeam = 2\n",
    )
    .unwrap();
    let err = fails(d, &["-c", "typo.toml", "config"], 1);
    for k in ["sede", "model.model_dimm", "decode.beam"] {
        assert!(err.contains(k), "{k}: {err}");
    }
    std::fs::write(
        d.join("bad.toml"),
        "[model]\nheads = 0\n[training]\nepochs = 0\n",
    )
    .unwrap();
    let err = fails(d, &["-c", "bad.toml", "config"], 1);
    assert!(
        err.contains("model.heads") && err.contains("training.epochs"),
        "{err}"
    );
    fails(d, &["frobnicate"], 1);
    fails(d, &["-c", "missing.toml", "config"], 1);
    let cfg = ok(d, &["-c", "tiny.toml", "--seed", "42", "config"]);
    assert!(cfg.starts_with("seed = 42"), "{cfg}");
}

#[test]
fn missing_prerequisites_are_named() {
    let ws = workspace();
    let d = ws.path();
    let err = fails(d, &["-c", "tiny.toml", "train", "--stage", "aux-joint"], 2);
    assert!(err.contains("blxam gen"), "{err}");
    ok(d, &["-c", "tiny.toml", "gen"]);
    let err = fails(
        d,
        &["-c", "tiny.toml", "train", "--stage", "lid-finetune"],
        2,
    );
    assert!(err.contains("pretrain"), "{err}");
    let err = fails(d, &["-c", "tiny.toml", "eval", "--model", "aux"], 2);
    assert!(err.contains("aux"), "{err}");
}

#[test]
fn a_held_lock_blocks_other_commands() {
    let ws = workspace();
    let d = ws.path();
    std::fs::create_dir_all(d.join("run")).unwrap();
    std::fs::write(d.join("run/.blxam.lock"), "1").unwrap();
    let err = fails(d, &["-c", "tiny.toml", "gen"], 2);
    assert!(err.contains(".blxam.lock"), "{err}");
    assert!(!d.join("run/corpus").exists());
}

fn pipeline(d: &Path, out: &str, seed: &str) {
    let base = ["-c", "tiny.toml", "--out-dir", out, "--seed", seed];
    let with = |extra: &[&str]| -> Vec<String> {
        base.iter().chain(extra).map(|s| s.to_string()).collect()
    };
    let go = |extra: &[&str]| {
        let args = with(extra);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(d, &refs)
    };
    go(&["gen"]);
    go(&["train", "--stage", "aux-joint"]);
    go(&["train", "--stage", "bilingual-pretrain"]);
    go(&["train", "--stage", "lid-finetune"]);
    go(&[
        "train",
        "--stage",
        "bilingual-pretrain",
        "--name",
        "mono-a",
        "--conditions",
        "mono-a",
    ]);
    let table = go(&["eval", "--model", "aux", "--mode", "bilingual"]);
    assert!(table.contains("code-mixed"), "{table}");
    go(&["eval", "--model", "aux", "--mode", "mono-a"]);
    go(&["eval", "--model", "lid", "--mode", "lid-combined"]);
    go(&["eval", "--model", "mono-a", "--mode", "mono-a"]);
}

#[test]
fn full_pipeline_is_reproducible() {
    let ws = workspace();
    let d = ws.path();
    let snapshot = |root: &Path| -> Vec<(PathBuf, Vec<u8>)> {
        files_under(root)
            .into_iter()
            .map(|f| (f.clone(), std::fs::read(root.join(&f)).unwrap()))
            .collect()
    };
    pipeline(d, "one", "5");
    let first = snapshot(&d.join("one"));
    pipeline(d, "one", "5");
    let second = snapshot(&d.join("one"));
    let files: Vec<PathBuf> = first.iter().map(|(f, _)| f.clone()).collect();
    for f in [
        "models/aux/params.blxam",
        "reports/aux-bilingual/report.json",
        "corpus/manifest.tsv",
    ] {
        assert!(files.contains(&PathBuf::from(f)), "{f}");
    }
    assert_eq!(files.len(), second.len());
    for ((f, a), (g, b)) in first.iter().zip(&second) {
        assert_eq!(f, g);
        assert!(a == b, "{} differs between identical runs", f.display());
    }
    assert!(!files
        .iter()
        .any(|f| f.to_string_lossy().contains(".tmp-") || f.ends_with(".blxam.lock")));
    let echoed = std::fs::read_to_string(d.join("one/models/aux/run.toml")).unwrap();
    assert!(
        echoed.contains("seed = 5") && echoed.contains("out_dir = \"one\""),
        "{echoed}"
    );
    let log = std::fs::read_to_string(d.join("one/models/lid/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.contains("\"stage\":\"lid-finetune\"") && !log.contains("wall_seconds"));

    let table = ok(
        d,
        &[
            "trends",
            "one/reports/mono-a-mono-a",
            "one/reports/aux-bilingual",
            "one/reports/lid-lid-combined",
            "--out",
            "trends.txt",
        ],
    );
    assert!(table.contains("WERR aux-bilingual/bilingual"), "{table}");
    assert_eq!(
        std::fs::read_to_string(d.join("trends.txt")).unwrap(),
        table
    );
    let json = ok(
        d,
        &[
            "trends",
            "one/reports/aux-bilingual",
            "one/reports/aux-mono-a",
            "--json",
        ],
    );
    assert!(json.contains("\"systems\""), "{json}");

    // A different seed changes the corpus, so test sets no longer match.
    ok(
        d,
        &[
            "-c",
            "tiny.toml",
            "--out-dir",
            "three",
            "--seed",
            "6",
            "gen",
        ],
    );
    ok(
        d,
        &[
            "-c",
            "tiny.toml",
            "--out-dir",
            "three",
            "--seed",
            "6",
            "train",
            "--stage",
            "aux-joint",
        ],
    );
    ok(
        d,
        &[
            "-c",
            "tiny.toml",
            "--out-dir",
            "three",
            "--seed",
            "6",
            "eval",
            "--model",
            "aux",
        ],
    );
    let a = std::fs::read(d.join("one/models/aux/params.blxam")).unwrap();
    let b = std::fs::read(d.join("three/models/aux/params.blxam")).unwrap();
    assert_ne!(a, b);
    let err = fails(
        d,
        &[
            "trends",
            "one/reports/aux-bilingual",
            "three/reports/aux-bilingual",
        ],
        2,
    );
    assert!(err.contains("test set"), "{err}");
}

#[test]
fn eval_rejects_modes_the_model_lacks() {
    let ws = workspace();
    let d = ws.path();
    ok(d, &["-c", "tiny.toml", "gen"]);
    ok(d, &["-c", "tiny.toml", "train", "--stage", "aux-joint"]);
    let err = fails(
        d,
        &[
            "-c",
            "tiny.toml",
            "eval",
            "--model",
            "aux",
            "--mode",
            "lid-combined",
        ],
        1,
    );
    assert!(err.contains("lid-combined"), "{err}");
}
