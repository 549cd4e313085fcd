//! Frame cross-entropy losses over [`ForwardOutput`] heads.
//!
//! Each loss is a mean over the utterance's frames. The `*_over` variants
//! divide the frame sum by an explicit denominator instead, so that summing
//! per-utterance losses gives the mean over a whole batch.

use super::plan::{Stage, TrainingPlan};
use super::targets::FrameTargets;
use crate::error::{Error, Result};
use crate::locale::Locale;
use crate::model::ForwardOutput;
use crate::numcore::{Tape, Var};

fn ce(tape: &mut Tape, logp: Var, targets: &[usize], denom: Option<f64>) -> Result<Var> {
    match denom {
        Some(d) => tape.nll_over(logp, targets, d),
        None => tape.nll(logp, targets, None),
    }
}

fn need(v: Option<Var>, what: &str) -> Result<Var> {
    v.ok_or_else(|| Error::Invalid(format!("forward output lacks {what}")))
}

/// Mean frame cross-entropy of the bilingual posteriors.
pub fn loss_bilingual(tape: &mut Tape, out: &ForwardOutput, t: &FrameTargets) -> Result<Var> {
    ce(
        tape,
        need(out.bilingual, "bilingual posteriors")?,
        &t.bilingual,
        None,
    )
}

/// Mean frame cross-entropy of the LID head; unweighted.
pub fn loss_lid(tape: &mut Tape, out: &ForwardOutput, t: &FrameTargets) -> Result<Var> {
    let logits = need(out.lid_logits, "LID logits")?;
    let logp = tape.log_softmax(logits)?;
    ce(tape, logp, &t.lid, None)
}

/// `main·CE(bilingual) + Σ aux_l·CE(locale l)`.
pub fn loss_aux(
    tape: &mut Tape,
    out: &ForwardOutput,
    t: &FrameTargets,
    plan: &TrainingPlan,
) -> Result<Var> {
    Ok(stage_loss(tape, out, t, plan, None, None)?.total)
}

/// A stage's weighted total loss and its named, unweighted components.
#[derive(Debug, Clone)]
pub struct StageLoss {
    pub total: Var,
    pub components: Vec<(&'static str, f64, Var)>,
}

/// Builds the loss for `plan.stage`.
///
/// `route` names the utterance's locale and is required for pretraining.
/// Components with zero weight are skipped entirely.
pub fn stage_loss(
    tape: &mut Tape,
    out: &ForwardOutput,
    t: &FrameTargets,
    plan: &TrainingPlan,
    route: Option<Locale>,
    denom: Option<f64>,
) -> Result<StageLoss> {
    let mut components = Vec::new();
    match plan.stage {
        Stage::BilingualPretrain => {
            let l = route.ok_or_else(|| {
                Error::Invalid("pretraining needs a monolingual utterance".into())
            })?;
            let logp = need(out.locale[l.index()], "routed locale posteriors")?;
            let name = match l {
                Locale::A => "routed_a",
                Locale::B => "routed_b",
            };
            components.push((name, 1.0, ce(tape, logp, &t.locale[l.index()], denom)?));
        }
        Stage::LidFinetune => {
            let logp = need(out.bilingual, "combined posteriors")?;
            components.push((
                "main",
                plan.main_loss_weight,
                ce(tape, logp, &t.bilingual, denom)?,
            ));
            if plan.lid_loss_weight > 0.0 {
                let logits = need(out.lid_logits, "LID logits")?;
                let lp = tape.log_softmax(logits)?;
                components.push(("lid", plan.lid_loss_weight, ce(tape, lp, &t.lid, denom)?));
            }
        }
        Stage::AuxJoint => {
            let logp = need(out.bilingual, "bilingual posteriors")?;
            components.push((
                "main",
                plan.main_loss_weight,
                ce(tape, logp, &t.bilingual, denom)?,
            ));
            for l in Locale::BOTH {
                let w = plan.aux_loss_weights[l.index()];
                if w > 0.0 {
                    let lp = need(out.locale[l.index()], "per-locale posteriors")?;
                    let name = match l {
                        Locale::A => "aux_a",
                        Locale::B => "aux_b",
                    };
                    components.push((name, w, ce(tape, lp, &t.locale[l.index()], denom)?));
                }
            }
        }
    }
    let terms: Vec<(Var, f64)> = components.iter().map(|&(_, w, v)| (v, w)).collect();
    let total = tape.linear_combination(&terms)?;
    Ok(StageLoss { total, components })
}
