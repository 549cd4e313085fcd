//! Subcommand implementations.
//!
//! Every command validates its inputs, then builds its artifact in a
//! temporary directory under the output directory and moves it into place
//! on success. Artifacts live at fixed places under `out_dir`:
//!
//! - `corpus/`: the synthetic corpus (`blxam gen`)
//! - `models/<name>/`: a checkpoint and its training log (`blxam train`)
//! - `reports/<label>/`: an evaluation report (`blxam eval`)
//!
//! Each artifact directory also holds `run.toml`, the effective
//! configuration that produced it.

use std::path::{Path, PathBuf};

use anyhow::Context;
use blxam::decode::{compare_modes, evaluate, wer, EvalReport};
use blxam::lexicon::{build_lexicon, merge_inventories, romanize, word_to_units, InventoryKind};
use blxam::synthdata::{build_corpus, gen_locale_specs, Condition, Corpus, Split};
use blxam::training::{load_checkpoint, save_checkpoint, train_stage, TrainExample, TrainLog};
use blxam::{
    AcousticModel, BilingualSpaceMap, CombinationMode, DecodeMode, Locale, LocaleId, Stage,
    UnitInventory,
};

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::fsutil::{commit_dir, write_atomic, DirLock};

pub const RUN_CONFIG_FILE: &str = "run.toml";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_JSONL: &str = "report.jsonl";
pub const REPORT_TABLE: &str = "report.txt";

type CmdResult<T = ()> = Result<T, Failure>;

fn data_err(e: blxam::Error) -> Failure {
    Failure::from(e)
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::from)
}

pub fn corpus_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("corpus")
}

pub fn model_dir(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join("models").join(name)
}

fn open_corpus(cfg: &RunConfig) -> CmdResult<Corpus> {
    let dir = corpus_dir(cfg);
    Corpus::open(&dir).map_err(|e| match e {
        blxam::Error::MissingPrerequisite(m) => {
            Failure::from(blxam::Error::MissingPrerequisite(format!(
                "{m}; run `blxam gen` with out_dir = {} first",
                cfg.out_dir.display()
            )))
        }
        other => data_err(other),
    })
}

/// Reads one word per line, skipping blank lines and `#` comments, and
/// returns the romanized words or every bad line.
fn read_word_list(path: &Path) -> CmdResult<Vec<String>> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::from)?;
    let mut words = Vec::new();
    let mut problems = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = i + 1;
        let text = match std::str::from_utf8(raw) {
            Ok(t) => t.trim(),
            Err(e) => {
                problems.push(format!("{}:{line}: invalid UTF-8 ({e})", path.display()));
                continue;
            }
        };
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        match romanize(text).and_then(|w| word_to_units(&w).map(|_| w)) {
            Ok(w) => words.push(w),
            Err(e) => problems.push(format!("{}:{line}: {e}", path.display())),
        }
    }
    if !problems.is_empty() {
        return Err(Failure::data(format!(
            "{} bad word list lines:\n  {}",
            problems.len(),
            problems.join("\n  ")
        )));
    }
    if words.is_empty() {
        return Err(Failure::data(format!(
            "{} contains no words",
            path.display()
        )));
    }
    Ok(words)
}

/// Builds lexicons from one or two word lists; with two, also the bilingual
/// inventory and its sharing statistic.
pub fn cmd_lexicon(word_lists: &[PathBuf], locales: &[LocaleId], out: &Path) -> CmdResult {
    if word_lists.is_empty() || word_lists.len() > 2 {
        return Err(Failure::usage(format!(
            "expected 1 or 2 word lists, got {}",
            word_lists.len()
        )));
    }
    if locales.len() < word_lists.len() {
        return Err(Failure::usage("give one --locale per word list"));
    }
    let mut problems = Vec::new();
    let mut lists = Vec::new();
    for p in word_lists {
        match read_word_list(p) {
            Ok(w) => lists.push(w),
            Err(f) => problems.push(f.to_string()),
        }
    }
    if !problems.is_empty() {
        return Err(Failure::data(problems.join("\n")));
    }
    let lexicons = lists
        .iter()
        .zip(locales)
        .map(|(w, l)| build_lexicon(w, l.clone()))
        .collect::<blxam::Result<Vec<_>>>()
        .map_err(data_err)?;
    let map = match lexicons.as_slice() {
        [a, b] => Some(merge_inventories(a, b).map_err(data_err)?),
        _ => None,
    };
    let (parent, name) = split_target(out)?;
    let _lock = DirLock::acquire(&parent)?;
    commit_dir(&parent, &name, |dir| {
        for (lex, locale) in lexicons.iter().zip(Locale::BOTH) {
            write_file(
                &dir.join(format!("lexicon.{}.txt", locale.tag())),
                &lex.to_text(),
            )?;
        }
        match &map {
            Some(m) => m.write_dir(dir).map_err(data_err)?,
            None => {
                let inv =
                    UnitInventory::new(InventoryKind::PerLocale, lexicons[0].rendered_units())
                        .map_err(data_err)?;
                write_file(
                    &dir.join(BilingualSpaceMap::locale_file(Locale::A)),
                    &inv.to_text(),
                )?;
            }
        }
        Ok(())
    })?;
    for (lex, locale) in lexicons.iter().zip(Locale::BOTH) {
        println!(
            "lexicon {} ({}): {} words, {} units",
            locale.tag(),
            locales[locale.index()].as_str(),
            lex.len(),
            lex.unit_set().len()
        );
    }
    if let Some(m) = &map {
        println!(
            "sharing: {:.4} of {} bilingual letter units occur in both locales",
            m.sharing(),
            m.bilingual.len() - 1
        );
    }
    Ok(())
}

fn split_target(out: &Path) -> CmdResult<(PathBuf, String)> {
    let name = out
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| {
            Failure::usage(format!(
                "{} is not a usable output directory",
                out.display()
            ))
        })?
        .to_string();
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    Ok((parent, name))
}

/// Generates the synthetic corpus into `out_dir/corpus`.
pub fn cmd_gen(cfg: &RunConfig) -> CmdResult {
    let _lock = DirLock::acquire(&cfg.out_dir)?;
    let c = &cfg.corpus;
    let (a, b, map) =
        gen_locale_specs(cfg.seed, c.n_words, c.shared_fraction, c).map_err(data_err)?;
    let (dir, manifest) = commit_dir(&cfg.out_dir, "corpus", |dir| {
        let m = build_corpus(
            (&a, &b),
            &map,
            &c.sizes,
            c.words_per_utterance,
            cfg.seed,
            dir,
        )
        .map_err(data_err)?;
        write_file(&dir.join(RUN_CONFIG_FILE), &cfg.to_toml())?;
        Ok(m)
    })?;
    println!("corpus: {}", dir.display());
    for split in Split::ALL {
        let counts: Vec<String> = Condition::ALL
            .iter()
            .map(|&cond| format!("{cond} {}", manifest.count(split, cond)))
            .collect();
        println!("  {split}: {}", counts.join(", "));
    }
    println!(
        "  inventory {} (sharing {:.4})",
        manifest.inventory_hash,
        map.sharing()
    );
    Ok(())
}

/// Options of `blxam train` beyond the run configuration.
#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub stage: Stage,
    /// Output model name; defaults per stage.
    pub name: Option<String>,
    /// Starting checkpoint: a model name under `models/` or a path.
    pub init: Option<String>,
    /// Train-split conditions to use; all by default.
    pub conditions: Option<Vec<Condition>>,
}

pub fn default_model_name(stage: Stage) -> &'static str {
    match stage {
        Stage::BilingualPretrain => "pretrain",
        Stage::LidFinetune => "lid",
        Stage::AuxJoint => "aux",
    }
}

fn resolve_checkpoint(cfg: &RunConfig, name_or_path: &str) -> PathBuf {
    let p = Path::new(name_or_path);
    if p.components().count() > 1 || p.is_absolute() {
        p.to_path_buf()
    } else {
        model_dir(cfg, name_or_path)
    }
}

fn load_model(cfg: &RunConfig, name_or_path: &str) -> CmdResult<AcousticModel> {
    let dir = resolve_checkpoint(cfg, name_or_path);
    load_checkpoint(&dir).map(|(m, _)| m).map_err(|e| match e {
        blxam::Error::MissingPrerequisite(m) => Failure::from(blxam::Error::MissingPrerequisite(
            format!("{m}; train model {name_or_path:?} first"),
        )),
        other => data_err(other),
    })
}

/// Runs one training stage and writes `models/<name>/`.
pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> CmdResult {
    let plan = cfg.plan(args.stage);
    let name = args
        .name
        .clone()
        .unwrap_or_else(|| default_model_name(args.stage).to_string());
    let _lock = DirLock::acquire(&cfg.out_dir)?;
    let corpus = open_corpus(cfg)?;
    let init = args.init.clone().or_else(|| {
        (args.stage == Stage::LidFinetune)
            .then(|| default_model_name(Stage::BilingualPretrain).to_string())
    });
    let mut model = match &init {
        Some(src) => load_model(cfg, src)?,
        None => {
            let combination = match args.stage {
                Stage::AuxJoint => CombinationMode::Aux,
                Stage::BilingualPretrain | Stage::LidFinetune => CombinationMode::Lid,
            };
            let mc = blxam::ModelConfig {
                combination_mode: combination,
                ..cfg.model.clone()
            };
            AcousticModel::new(mc, corpus.map.clone(), cfg.seed).map_err(data_err)?
        }
    };
    if model.map().hash() != corpus.manifest.inventory_hash {
        return Err(data_err(blxam::Error::InventoryMismatch {
            model: model.map().hash(),
            corpus: corpus.manifest.inventory_hash.clone(),
        }));
    }
    let conditions = args
        .conditions
        .clone()
        .unwrap_or_else(|| corpus.manifest.conditions(Split::Train));
    let mut data = Vec::new();
    for c in conditions {
        for u in corpus.load(Split::Train, c).map_err(data_err)? {
            data.push(TrainExample::from_utterance(&u, &corpus.map).map_err(data_err)?);
        }
    }
    eprintln!(
        "training {name}: {} on {} utterances, {} epochs",
        args.stage,
        data.len(),
        plan.epochs
    );
    let log = train_stage(&mut model, &data, &plan).map_err(data_err)?;
    for r in &log.records {
        eprintln!(
            "  epoch {:>3}: loss {:.5}  lr {:.2e}  {:.1}s",
            r.epoch, r.total_loss, r.learning_rate, r.wall_seconds
        );
    }
    let (dir, _) = commit_dir(&cfg.out_dir.join("models"), &name, |dir| {
        save_checkpoint(&model, Some(&plan), dir).map_err(data_err)?;
        write_file(&dir.join(TRAIN_LOG_FILE), &reproducible_log(&log))?;
        write_file(&dir.join(RUN_CONFIG_FILE), &cfg.to_toml())?;
        Ok(())
    })?;
    println!(
        "model {name}: {} ({})",
        dir.display(),
        model.store().checksum()
    );
    Ok(())
}

/// The training log without wall-clock timings, so reruns are byte-identical.
fn reproducible_log(log: &TrainLog) -> String {
    let mut out = String::new();
    for r in &log.records {
        let mut v = serde_json::to_value(r).expect("record serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_seconds");
        }
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}

/// Options of `blxam eval` beyond the run configuration.
#[derive(Debug, Clone)]
pub struct EvalArgs {
    /// Model name under `models/` or a checkpoint path.
    pub model: String,
    pub mode: Option<DecodeMode>,
    pub split: Split,
    pub label: Option<String>,
}

/// Scores a checkpoint and writes `reports/<label>/`.
pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> CmdResult {
    let mut decode = cfg.decode.clone();
    if let Some(m) = args.mode {
        decode.mode = m;
    }
    let base = Path::new(&args.model)
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("model")
        .to_string();
    let label = args
        .label
        .clone()
        .unwrap_or_else(|| format!("{base}-{}", decode.mode));
    let _lock = DirLock::acquire(&cfg.out_dir)?;
    let corpus = open_corpus(cfg)?;
    let model = load_model(cfg, &args.model)?;
    let report = evaluate(&model, &corpus, args.split, &decode, &label).map_err(data_err)?;
    let violations = check_report(&report);
    if !violations.is_empty() {
        return Err(Failure::invariant(format!(
            "report {label} failed {} checks:\n  {}",
            violations.len(),
            violations.join("\n  ")
        )));
    }
    let effective = RunConfig {
        decode,
        ..cfg.clone()
    };
    let (dir, _) = commit_dir(&cfg.out_dir.join("reports"), &label, |dir| {
        write_file(&dir.join(REPORT_JSON), &report.to_json())?;
        write_file(&dir.join(REPORT_JSONL), &report.to_jsonl())?;
        write_file(&dir.join(REPORT_TABLE), &report.to_table())?;
        write_file(&dir.join(RUN_CONFIG_FILE), &effective.to_toml())?;
        Ok(())
    })?;
    print!("{}", report.to_table());
    println!("report: {}", dir.display());
    Ok(())
}

/// Consistency checks between a report's rows and its utterance scores.
pub fn check_report(report: &EvalReport) -> Vec<String> {
    let mut out = Vec::new();
    for u in &report.utterances {
        if u.reference.is_empty() {
            continue;
        }
        match wer(&u.reference, &u.hypothesis) {
            Ok(c) if c == u.counts => {}
            Ok(c) => out.push(format!(
                "{}: stored counts {:?} but rescoring gives {:?}",
                u.id, u.counts, c
            )),
            Err(e) => out.push(format!("{}: {e}", u.id)),
        }
    }
    for row in &report.rows {
        let utts: Vec<_> = report
            .utterances
            .iter()
            .filter(|u| u.condition == row.condition)
            .collect();
        if utts.len() != row.utterances {
            out.push(format!(
                "{}: row counts {} utterances, report holds {}",
                row.condition,
                row.utterances,
                utts.len()
            ));
        }
        let mut sum = blxam::decode::ErrorCounts::default();
        for u in &utts {
            sum.add(&u.counts);
        }
        if sum != row.counts {
            out.push(format!(
                "{}: row totals {:?} differ from the utterance sum {:?}",
                row.condition, row.counts, sum
            ));
        }
        if row.counts.reference_words > 0 && (row.counts.wer() - row.wer).abs() > 0.005 + 1e-9 {
            out.push(format!(
                "{}: WER {} does not match its counts ({:.4})",
                row.condition,
                row.wer,
                row.counts.wer()
            ));
        }
    }
    out
}

/// Reads a report from a `report.json` path or a report directory.
pub fn read_report(path: &Path) -> CmdResult<EvalReport> {
    let file = if path.is_dir() {
        path.join(REPORT_JSON)
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&file)
        .with_context(|| format!("reading report {}", file.display()))
        .map_err(Failure::from)?;
    EvalReport::from_json(&text)
        .with_context(|| format!("parsing report {}", file.display()))
        .map_err(Failure::from)
}

/// Prints the WER/WERR table over several reports; the first is the base.
pub fn cmd_trends(reports: &[PathBuf], out: Option<&Path>, json: bool) -> CmdResult {
    if reports.is_empty() {
        return Err(Failure::usage("trends needs at least one report"));
    }
    let loaded = reports
        .iter()
        .map(|p| read_report(p))
        .collect::<CmdResult<Vec<_>>>()?;
    let refs: Vec<&EvalReport> = loaded.iter().collect();
    let summary = compare_modes(&refs).map_err(data_err)?;
    let text = if json {
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"
    } else {
        summary.to_table()
    };
    print!("{text}");
    if let Some(p) = out {
        write_atomic(p, &text)?;
    }
    Ok(())
}
