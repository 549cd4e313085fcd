use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::stage_loss;
use super::plan::{Stage, TrainingPlan};
use super::targets::{make_frame_targets, FrameTargets};
use crate::error::{Error, Result};
use crate::lexicon::BilingualSpaceMap;
use crate::locale::Locale;
use crate::model::{AcousticModel, CombinationMode, ForwardOutput, Outputs};
use crate::numcore::{Tape, Tensor};
use crate::synthdata::Utterance;

/// An utterance prepared for training.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub id: String,
    pub features: Tensor,
    pub targets: FrameTargets,
    /// The locale of a monolingual utterance, `None` for code-mixed ones.
    pub locale: Option<Locale>,
}

impl TrainExample {
    pub fn from_utterance(utt: &Utterance, map: &BilingualSpaceMap) -> Result<Self> {
        Ok(Self {
            id: utt.id.clone(),
            features: utt.features.clone(),
            targets: make_frame_targets(utt, map)?,
            locale: utt.mono_locale(),
        })
    }

    pub fn frames(&self) -> usize {
        self.targets.frames()
    }
}

/// Summary of one training epoch.
///
/// JSON keys: `stage`, `epoch`, `steps`, `utterances`, `frames`,
/// `learning_rate` (at the last step), `total_loss`, `losses` (unweighted
/// per-component means, e.g. `main`, `lid`, `aux_a`, `routed_a`), `accuracy`
/// (frame accuracy per head: `bilingual`, `locale_a`, `locale_b`, `lid`),
/// `wall_seconds` (optional when reading, so logs stored without timings
/// still parse), `param_checksum`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub steps: usize,
    pub utterances: usize,
    pub frames: usize,
    pub learning_rate: f64,
    pub total_loss: f64,
    pub losses: BTreeMap<String, f64>,
    pub accuracy: BTreeMap<String, f64>,
    #[serde(default)]
    pub wall_seconds: f64,
    pub param_checksum: String,
}

impl PartialEq for EpochRecord {
    /// Wall time is excluded so that reproducible runs compare equal.
    fn eq(&self, o: &Self) -> bool {
        self.stage == o.stage
            && self.epoch == o.epoch
            && self.steps == o.steps
            && self.utterances == o.utterances
            && self.frames == o.frames
            && self.learning_rate == o.learning_rate
            && self.total_loss == o.total_loss
            && self.losses == o.losses
            && self.accuracy == o.accuracy
            && self.param_checksum == o.param_checksum
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Invalid(format!("train log line {}: {e}", i + 1)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

fn outputs_for(plan: &TrainingPlan, route: Option<Locale>) -> Outputs {
    match plan.stage {
        Stage::BilingualPretrain => Outputs::routed(route.unwrap_or(Locale::A)),
        Stage::LidFinetune => Outputs::lid(),
        Stage::AuxJoint => {
            let mut o = Outputs::aux();
            for l in Locale::BOTH {
                o.locale_heads[l.index()] = plan.aux_loss_weights[l.index()] > 0.0;
            }
            o
        }
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn correct(tape: &Tape, v: Option<crate::numcore::Var>, targets: &[usize]) -> Option<usize> {
    let t = tape.value(v?);
    Some(
        t.argmax_rows()
            .iter()
            .zip(targets)
            .filter(|(a, b)| a == b)
            .count(),
    )
}

fn head_hits(tape: &Tape, out: &ForwardOutput, t: &FrameTargets) -> Vec<(&'static str, usize)> {
    let mut hits = Vec::new();
    if let Some(c) = correct(tape, out.bilingual, &t.bilingual) {
        hits.push(("bilingual", c));
    }
    for (name, l) in [("locale_a", Locale::A), ("locale_b", Locale::B)] {
        if let Some(c) = correct(tape, out.locale[l.index()], &t.locale[l.index()]) {
            hits.push((name, c));
        }
    }
    if let Some(c) = correct(tape, out.lid, &t.lid) {
        hits.push(("lid", c));
    }
    hits
}

/// Checks that `model` can run `plan.stage`.
pub fn check_stage_prerequisites(model: &AcousticModel, plan: &TrainingPlan) -> Result<()> {
    match plan.stage {
        Stage::BilingualPretrain => Ok(()),
        Stage::LidFinetune => {
            if model.combination_mode() != CombinationMode::Lid {
                return Err(Error::Config(
                    "lid-finetune needs a model with combination_mode = \"lid\"".into(),
                ));
            }
            if !model.stages().contains(&Stage::BilingualPretrain) {
                return Err(Error::MissingPrerequisite(
                    "lid-finetune needs a model that completed bilingual-pretrain".into(),
                ));
            }
            Ok(())
        }
        Stage::AuxJoint => {
            if model.combination_mode() != CombinationMode::Aux {
                return Err(Error::Config(
                    "aux-joint needs a model with combination_mode = \"aux\"".into(),
                ));
            }
            Ok(())
        }
    }
}

/// One optimizer step over `batch` at learning rate `lr`; returns
/// per-component frame sums, head hit counts and the batch frame count.
pub fn train_step(
    model: &mut AcousticModel,
    batch: &[&TrainExample],
    plan: &TrainingPlan,
    lr: f64,
) -> Result<StepStats> {
    let frozen = plan.frozen_prefixes();
    model.store_mut().zero_grads(|n| plan.is_trainable(n));
    let frames: usize = batch.iter().map(|e| e.frames()).sum();
    let denom = frames as f64;
    let mut stats = StepStats {
        frames,
        ..StepStats::default()
    };
    for ex in batch {
        let mut tape = Tape::new().with_frozen(frozen.iter().cloned());
        let out = model.forward(&mut tape, &ex.features, outputs_for(plan, ex.locale))?;
        let loss = stage_loss(&mut tape, &out, &ex.targets, plan, ex.locale, Some(denom))?;
        let total = tape.value(loss.total).item();
        if !total.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        stats.total += total * denom;
        for &(name, _, v) in &loss.components {
            *stats.losses.entry(name.to_string()).or_default() += tape.value(v).item() * denom;
        }
        for (name, c) in head_hits(&tape, &out, &ex.targets) {
            let e = stats.hits.entry(name.to_string()).or_default();
            e.0 += c;
            e.1 += ex.frames();
        }
        tape.backward(loss.total)?
            .accumulate_into(model.store_mut())?;
    }
    model
        .store_mut()
        .adam_step(lr, &plan.adam, |n| plan.is_trainable(n))?;
    stats.learning_rate = lr;
    Ok(stats)
}

/// Frame-summed statistics of one optimizer step.
#[derive(Debug, Clone, Default)]
pub struct StepStats {
    pub frames: usize,
    pub learning_rate: f64,
    pub total: f64,
    pub losses: BTreeMap<String, f64>,
    /// Head name to (correct frames, scored frames).
    pub hits: BTreeMap<String, (usize, usize)>,
}

/// Runs `plan.epochs` epochs of `plan.stage` and records the stage on the model.
///
/// Pretraining skips code-mixed examples since they cannot be hard-routed.
pub fn train_stage(
    model: &mut AcousticModel,
    data: &[TrainExample],
    plan: &TrainingPlan,
) -> Result<TrainLog> {
    plan.validate()?;
    check_stage_prerequisites(model, plan)?;
    let examples: Vec<&TrainExample> = data
        .iter()
        .filter(|e| plan.stage != Stage::BilingualPretrain || e.locale.is_some())
        .collect();
    if examples.is_empty() {
        return Err(Error::Invalid(format!(
            "no usable training utterances for {}",
            plan.stage
        )));
    }
    let mut log = TrainLog::default();
    let mut step = 0;
    let total_steps = plan.epochs * examples.len().div_ceil(plan.batch_utterances);
    for epoch in 0..plan.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(plan.seed, epoch)));
        let mut sum = StepStats::default();
        for chunk in order.chunks(plan.batch_utterances) {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| examples[i]).collect();
            let s = train_step(model, &batch, plan, plan.lr_at(step, total_steps))?;
            step += 1;
            sum.frames += s.frames;
            sum.total += s.total;
            sum.learning_rate = s.learning_rate;
            for (k, v) in s.losses {
                *sum.losses.entry(k).or_default() += v;
            }
            for (k, (c, n)) in s.hits {
                let e = sum.hits.entry(k).or_default();
                e.0 += c;
                e.1 += n;
            }
        }
        let frames = sum.frames.max(1) as f64;
        log.records.push(EpochRecord {
            stage: plan.stage,
            epoch,
            steps: step,
            utterances: examples.len(),
            frames: sum.frames,
            learning_rate: sum.learning_rate,
            total_loss: sum.total / frames,
            losses: sum
                .losses
                .into_iter()
                .map(|(k, v)| (k, v / frames))
                .collect(),
            accuracy: sum
                .hits
                .into_iter()
                .map(|(k, (c, n))| (k, c as f64 / n.max(1) as f64))
                .collect(),
            wall_seconds: started.elapsed().as_secs_f64(),
            param_checksum: model.store().checksum(),
        });
    }
    model.record_stage(plan.stage);
    Ok(log)
}
