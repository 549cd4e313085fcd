//! The bilingual streaming Transformer acoustic model.
//!
//! Features go through an input projection with sinusoidal positions and a
//! shared pre-norm Transformer stack, then through one parallel encoder (PE)
//! stack per locale. From there:
//!
//! - each PE feeds its own per-locale head, whose targets include FOREIGN;
//! - in [`CombinationMode::Aux`] the two PE outputs are concatenated into a
//!   shared projection over the bilingual inventory;
//! - in [`CombinationMode::Lid`] a small LID stack on the shared output
//!   predicts {A, B, SIL}, the PE outputs are mixed with the silence class
//!   normalized out, and a linear head maps the mix to the bilingual inventory.
//!
//! All attention uses the chunked streaming mask, so [`StreamState`] can
//! reproduce full-utterance outputs bit for bit.

mod config;
mod stream;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{CombinationMode, DecodeMode, ModelConfig};
pub use stream::{StreamChunk, StreamState};

use crate::error::{Error, Result};
use crate::lexicon::{BilingualSpaceMap, UnitInventory};
use crate::locale::Locale;
use crate::numcore::{AttentionMask, ParameterStore, Tape, Tensor, Var};
use crate::training::Stage;

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// LID classes in output order.
pub const LID_CLASSES: usize = 3;
pub const LID_SIL: usize = 2;

/// Attention mask for query frames `q_start..q_start+q_len` over keys
/// `0..k_len`.
pub fn streaming_mask(
    q_start: usize,
    q_len: usize,
    k_len: usize,
    chunk_frames: usize,
    left_context: Option<usize>,
) -> AttentionMask {
    AttentionMask::from_fn(q_len, k_len, |i, j| {
        let t = q_start + i;
        let chunk_start = t - t % chunk_frames;
        let chunk_end = chunk_start.saturating_add(chunk_frames - 1);
        let first = left_context.map_or(0, |l| chunk_start.saturating_sub(l));
        j <= chunk_end && j >= first
    })
}

/// Sinusoidal position encodings for absolute frames `start..start+len`.
pub fn sinusoid_positions(start: usize, len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for r in 0..len {
        let t = (start + r) as f64;
        for c in 0..dim {
            let pair = (c / 2) as f64;
            let angle = t / 10000f64.powf(2.0 * pair / dim as f64);
            data[r * dim + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, dim], data).expect("sized")
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Xavier(usize, usize),
    Zeros(usize),
    Ones(usize),
}

/// Which parts of the network to evaluate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Outputs {
    pub pe: [bool; 2],
    pub locale_heads: [bool; 2],
    pub shared_head: bool,
    pub lid: bool,
    pub combined: bool,
}

impl Outputs {
    /// One locale's PE and head, used by hard-routed pretraining.
    pub fn routed(locale: Locale) -> Self {
        let mut o = Self::default();
        o.pe[locale.index()] = true;
        o.locale_heads[locale.index()] = true;
        o
    }

    /// Everything trained jointly in aux mode.
    pub fn aux() -> Self {
        Self {
            pe: [true; 2],
            locale_heads: [true; 2],
            shared_head: true,
            ..Self::default()
        }
    }

    /// Everything trained in LID finetuning.
    pub fn lid() -> Self {
        Self {
            pe: [true; 2],
            lid: true,
            combined: true,
            ..Self::default()
        }
    }

    pub fn for_decode(mode: DecodeMode, combination: CombinationMode) -> Self {
        let mut o = match mode {
            DecodeMode::Bilingual => Self {
                pe: [true; 2],
                shared_head: true,
                ..Self::default()
            },
            DecodeMode::MonoA => Self::routed(Locale::A),
            DecodeMode::MonoB => Self::routed(Locale::B),
            DecodeMode::LidCombined => Self::lid(),
        };
        if combination == CombinationMode::Lid {
            o.lid = true;
        }
        o
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub shared: Var,
    /// PE hidden states per locale.
    pub hidden: [Option<Var>; 2],
    /// Bilingual log-posteriors from the shared head (aux) or combined head (lid).
    pub bilingual: Option<Var>,
    /// Per-locale log-posteriors, including SIL and FOREIGN.
    pub locale: [Option<Var>; 2],
    pub lid_logits: Option<Var>,
    /// LID probabilities over {A, B, SIL}.
    pub lid: Option<Var>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LayerCache {
    k: Vec<f64>,
    v: Vec<f64>,
}

/// Key/value history of every stack, used by streaming inference.
#[derive(Debug, Clone, Default)]
pub(crate) struct StackCaches {
    shared: Vec<LayerCache>,
    pe: [Vec<LayerCache>; 2],
    lid: Vec<LayerCache>,
}

#[derive(Debug, Clone, Copy)]
enum StackId {
    Shared,
    Pe(Locale),
    Lid,
}

/// Frames being evaluated: absolute start, mask, and optional KV history.
struct Pass<'a> {
    start: usize,
    mask: Arc<AttentionMask>,
    cache: Option<&'a mut StackCaches>,
}

#[derive(Debug, Clone)]
pub struct AcousticModel {
    config: ModelConfig,
    map: BilingualSpaceMap,
    store: ParameterStore,
    stages: Vec<Stage>,
}

impl AcousticModel {
    /// A freshly initialized model; parameter draws depend only on `seed`.
    pub fn new(config: ModelConfig, map: BilingualSpaceMap, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        for (name, init) in layout(&config, &map) {
            match init {
                Init::Xavier(i, o) => store.register_xavier(name, i, o, &mut rng)?,
                Init::Zeros(n) => store.register(name, Tensor::zeros(&[n]))?,
                Init::Ones(n) => store.register(name, Tensor::filled(&[n], 1.0))?,
            }
        }
        Ok(Self {
            config,
            map,
            store,
            stages: Vec::new(),
        })
    }

    /// Reassembles a model, checking that `store` has exactly the expected
    /// parameters in the expected order.
    pub fn from_parts(
        config: ModelConfig,
        map: BilingualSpaceMap,
        store: ParameterStore,
        stages: Vec<Stage>,
    ) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config, &map);
        if expected.len() != store.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                expected.len(),
                store.len()
            )));
        }
        for ((name, init), (got, t)) in expected.iter().zip(store.iter()) {
            let shape = match *init {
                Init::Xavier(i, o) => vec![i, o],
                Init::Zeros(n) | Init::Ones(n) => vec![n],
            };
            if name != got || t.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {got:?} {:?} does not match expected {name:?} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            config,
            map,
            store,
            stages,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn map(&self) -> &BilingualSpaceMap {
        &self.map
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    /// Training stages completed so far, in order.
    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn record_stage(&mut self, stage: Stage) {
        self.stages.push(stage);
    }

    pub fn combination_mode(&self) -> CombinationMode {
        self.config.combination_mode
    }

    /// Output inventory of a decode mode.
    pub fn output_space(&self, mode: DecodeMode) -> &UnitInventory {
        match mode.mono_locale() {
            Some(l) => self.map.locale(l),
            None => &self.map.bilingual,
        }
    }

    /// Names of the parameters belonging to `locale`'s PE stack.
    pub fn pe_param_names(&self, locale: Locale) -> Vec<String> {
        let prefix = format!("pe.{}.", locale.tag());
        self.store
            .names()
            .filter(|n| n.starts_with(&prefix))
            .map(str::to_string)
            .collect()
    }

    fn full_pass(&self, frames: usize) -> Pass<'static> {
        Pass {
            start: 0,
            mask: Arc::new(streaming_mask(
                0,
                frames,
                frames,
                self.config.chunk_frames,
                self.config.left_context_frames,
            )),
            cache: None,
        }
    }

    fn check_features(&self, features: &Tensor) -> Result<()> {
        if features.rank() != 2 || features.cols() != self.config.feature_dim {
            return Err(Error::ShapeMismatch {
                op: "features",
                left: vec![features.rows(), self.config.feature_dim],
                right: features.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn linear(&self, tape: &mut Tape, x: Var, prefix: &str) -> Result<Var> {
        let w = tape.param(&self.store, &format!("{prefix}.w"))?;
        let b = tape.param(&self.store, &format!("{prefix}.b"))?;
        let h = tape.matmul(x, w)?;
        tape.add_bias(h, b)
    }

    fn layer_norm(&self, tape: &mut Tape, x: Var, prefix: &str) -> Result<Var> {
        let g = tape.param(&self.store, &format!("{prefix}.g"))?;
        let b = tape.param(&self.store, &format!("{prefix}.b"))?;
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }

    fn block(
        &self,
        tape: &mut Tape,
        x: Var,
        prefix: &str,
        mask: &Arc<AttentionMask>,
        cache: Option<&mut LayerCache>,
    ) -> Result<Var> {
        let h = self.layer_norm(tape, x, &format!("{prefix}.ln1"))?;
        let q = self.linear(tape, h, &format!("{prefix}.attn.q"))?;
        let k = self.linear(tape, h, &format!("{prefix}.attn.k"))?;
        let v = self.linear(tape, h, &format!("{prefix}.attn.v"))?;
        let (k, v) = match cache {
            Some(c) => {
                let d = self.config.model_dim;
                c.k.extend_from_slice(tape.value(k).data());
                c.v.extend_from_slice(tape.value(v).data());
                let rows = c.k.len() / d;
                let k = tape.constant(Tensor::new(vec![rows, d], c.k.clone())?);
                let v = tape.constant(Tensor::new(vec![rows, d], c.v.clone())?);
                (k, v)
            }
            None => (k, v),
        };
        let a = tape.attention(q, k, v, self.config.heads, Arc::clone(mask))?;
        let a = self.linear(tape, a, &format!("{prefix}.attn.o"))?;
        let x = tape.add(x, a)?;
        let h = self.layer_norm(tape, x, &format!("{prefix}.ln2"))?;
        let h = self.linear(tape, h, &format!("{prefix}.ff.1"))?;
        let h = tape.gelu(h);
        let h = self.linear(tape, h, &format!("{prefix}.ff.2"))?;
        tape.add(x, h)
    }

    fn stack(&self, tape: &mut Tape, x: Var, id: StackId, pass: &mut Pass<'_>) -> Result<Var> {
        let (prefix, n) = match id {
            StackId::Shared => ("shared".to_string(), self.config.n_shared_layers),
            StackId::Pe(l) => (format!("pe.{}", l.tag()), self.config.n_pe_layers),
            StackId::Lid => ("lid".to_string(), self.config.n_lid_layers),
        };
        let mut caches = pass.cache.as_deref_mut().map(|c| {
            let v = match id {
                StackId::Shared => &mut c.shared,
                StackId::Pe(l) => &mut c.pe[l.index()],
                StackId::Lid => &mut c.lid,
            };
            if v.len() < n {
                v.resize_with(n, LayerCache::default);
            }
            v
        });
        let mut x = x;
        for i in 0..n {
            let cache = caches.as_mut().map(|c| &mut c[i]);
            x = self.block(tape, x, &format!("{prefix}.{i}"), &pass.mask, cache)?;
        }
        self.layer_norm(tape, x, &format!("{prefix}.ln"))
    }

    fn shared_impl(&self, tape: &mut Tape, features: Var, pass: &mut Pass<'_>) -> Result<Var> {
        let rows = tape.value(features).rows();
        let h = self.linear(tape, features, "input")?;
        let pos = tape.constant(sinusoid_positions(pass.start, rows, self.config.model_dim));
        let h = tape.add(h, pos)?;
        self.stack(tape, h, StackId::Shared, pass)
    }

    fn lid_impl(&self, tape: &mut Tape, hidden: Var, pass: &mut Pass<'_>) -> Result<(Var, Var)> {
        if self.config.combination_mode != CombinationMode::Lid {
            return Err(Error::Config(
                "LID head exists only in lid combination mode".into(),
            ));
        }
        let h = self.stack(tape, hidden, StackId::Lid, pass)?;
        let logits = self.linear(tape, h, "lid.out")?;
        let probs = tape.softmax(logits, 1)?;
        Ok((logits, probs))
    }

    /// Input projection, positions and the shared stack on a full utterance.
    pub fn forward_shared(&self, tape: &mut Tape, features: &Tensor) -> Result<Var> {
        self.check_features(features)?;
        let mut pass = self.full_pass(features.rows());
        let x = tape.constant(features.clone());
        self.shared_impl(tape, x, &mut pass)
    }

    /// One locale's PE stack on shared-stack output.
    pub fn forward_pe(&self, tape: &mut Tape, locale: Locale, hidden: Var) -> Result<Var> {
        let mut pass = self.full_pass(tape.value(hidden).rows());
        self.stack(tape, hidden, StackId::Pe(locale), &mut pass)
    }

    /// LID probabilities over {A, B, SIL} from shared-stack output.
    pub fn lid_forward(&self, tape: &mut Tape, hidden: Var) -> Result<Var> {
        let mut pass = self.full_pass(tape.value(hidden).rows());
        Ok(self.lid_impl(tape, hidden, &mut pass)?.1)
    }

    /// Shared projection over concatenated PE outputs, as log-posteriors.
    pub fn project_bilingual(&self, tape: &mut Tape, h_a: Var, h_b: Var) -> Result<Var> {
        if self.config.combination_mode != CombinationMode::Aux {
            return Err(Error::Config(
                "shared projection exists only in aux combination mode".into(),
            ));
        }
        let cat = tape.concat_cols(h_a, h_b)?;
        let logits = self.linear(tape, cat, "head.shared")?;
        tape.log_softmax(logits)
    }

    /// A locale's own projection head, as log-posteriors.
    pub fn project_monolingual(&self, tape: &mut Tape, locale: Locale, h: Var) -> Result<Var> {
        let logits = self.linear(tape, h, &format!("head.{}", locale.tag()))?;
        tape.log_softmax(logits)
    }

    /// Output head after soft combination, as log-posteriors.
    pub fn project_combined(&self, tape: &mut Tape, combined: Var) -> Result<Var> {
        if self.config.combination_mode != CombinationMode::Lid {
            return Err(Error::Config(
                "combined head exists only in lid combination mode".into(),
            ));
        }
        let logits = self.linear(tape, combined, "head.combined")?;
        tape.log_softmax(logits)
    }

    /// Full-utterance forward pass computing the requested outputs.
    pub fn forward(
        &self,
        tape: &mut Tape,
        features: &Tensor,
        outputs: Outputs,
    ) -> Result<ForwardOutput> {
        self.check_features(features)?;
        let mut pass = self.full_pass(features.rows());
        let x = tape.constant(features.clone());
        self.forward_impl(tape, x, outputs, &mut pass)
    }

    fn forward_impl(
        &self,
        tape: &mut Tape,
        features: Var,
        outputs: Outputs,
        pass: &mut Pass<'_>,
    ) -> Result<ForwardOutput> {
        let mode = self.config.combination_mode;
        if outputs.shared_head && mode != CombinationMode::Aux {
            return Err(Error::Config(
                "shared projection exists only in aux combination mode".into(),
            ));
        }
        if (outputs.lid || outputs.combined) && mode != CombinationMode::Lid {
            return Err(Error::Config(
                "LID head exists only in lid combination mode".into(),
            ));
        }
        let shared = self.shared_impl(tape, features, pass)?;
        let mut hidden = [None, None];
        for l in Locale::BOTH {
            let needed = outputs.pe[l.index()]
                || outputs.locale_heads[l.index()]
                || outputs.shared_head
                || outputs.combined;
            if needed {
                hidden[l.index()] = Some(self.stack(tape, shared, StackId::Pe(l), pass)?);
            }
        }
        let mut locale = [None, None];
        for l in Locale::BOTH {
            if outputs.locale_heads[l.index()] {
                let h = hidden[l.index()].expect("computed above");
                locale[l.index()] = Some(self.project_monolingual(tape, l, h)?);
            }
        }
        let (mut lid_logits, mut lid) = (None, None);
        if outputs.lid || outputs.combined {
            let (lg, p) = self.lid_impl(tape, shared, pass)?;
            lid_logits = Some(lg);
            lid = Some(p);
        }
        let bilingual = if outputs.shared_head {
            let (a, b) = (hidden[0].expect("pe a"), hidden[1].expect("pe b"));
            Some(self.project_bilingual(tape, a, b)?)
        } else if outputs.combined {
            let (a, b) = (hidden[0].expect("pe a"), hidden[1].expect("pe b"));
            let mix = tape.soft_combine(a, b, lid.expect("lid"))?;
            Some(self.project_combined(tape, mix)?)
        } else {
            None
        };
        Ok(ForwardOutput {
            shared,
            hidden,
            bilingual,
            locale,
            lid_logits,
            lid,
        })
    }

    /// Frame log-posteriors for `mode` over a full utterance, plus LID
    /// probabilities when the model has a LID head.
    pub fn posteriors(
        &self,
        features: &Tensor,
        mode: DecodeMode,
    ) -> Result<(Tensor, Option<Tensor>)> {
        self.check_mode(mode)?;
        let mut tape = Tape::inference();
        let out = self.forward(
            &mut tape,
            features,
            Outputs::for_decode(mode, self.config.combination_mode),
        )?;
        Ok(extract(&tape, &out, mode))
    }

    fn check_mode(&self, mode: DecodeMode) -> Result<()> {
        if mode.supported_by(self.config.combination_mode) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "decode mode {mode} is not available for a {} model",
                self.config.combination_mode
            )))
        }
    }
}

fn extract(tape: &Tape, out: &ForwardOutput, mode: DecodeMode) -> (Tensor, Option<Tensor>) {
    let post = match mode.mono_locale() {
        Some(l) => out.locale[l.index()],
        None => out.bilingual,
    }
    .expect("requested output");
    (
        tape.value(post).clone(),
        out.lid.map(|v| tape.value(v).clone()),
    )
}

fn layout(cfg: &ModelConfig, map: &BilingualSpaceMap) -> Vec<(String, Init)> {
    let d = cfg.model_dim;
    let mut out = vec![
        ("input.w".to_string(), Init::Xavier(cfg.feature_dim, d)),
        ("input.b".to_string(), Init::Zeros(d)),
    ];
    let push_stack = |out: &mut Vec<(String, Init)>, prefix: &str, n: usize| {
        for i in 0..n {
            let p = format!("{prefix}.{i}");
            out.push((format!("{p}.ln1.g"), Init::Ones(d)));
            out.push((format!("{p}.ln1.b"), Init::Zeros(d)));
            for m in ["q", "k", "v", "o"] {
                out.push((format!("{p}.attn.{m}.w"), Init::Xavier(d, d)));
                out.push((format!("{p}.attn.{m}.b"), Init::Zeros(d)));
            }
            out.push((format!("{p}.ln2.g"), Init::Ones(d)));
            out.push((format!("{p}.ln2.b"), Init::Zeros(d)));
            out.push((format!("{p}.ff.1.w"), Init::Xavier(d, cfg.ff_dim)));
            out.push((format!("{p}.ff.1.b"), Init::Zeros(cfg.ff_dim)));
            out.push((format!("{p}.ff.2.w"), Init::Xavier(cfg.ff_dim, d)));
            out.push((format!("{p}.ff.2.b"), Init::Zeros(d)));
        }
        out.push((format!("{prefix}.ln.g"), Init::Ones(d)));
        out.push((format!("{prefix}.ln.b"), Init::Zeros(d)));
    };
    push_stack(&mut out, "shared", cfg.n_shared_layers);
    for l in Locale::BOTH {
        push_stack(&mut out, &format!("pe.{}", l.tag()), cfg.n_pe_layers);
    }
    if cfg.combination_mode == CombinationMode::Lid {
        push_stack(&mut out, "lid", cfg.n_lid_layers);
        out.push(("lid.out.w".into(), Init::Xavier(d, LID_CLASSES)));
        out.push(("lid.out.b".into(), Init::Zeros(LID_CLASSES)));
    }
    for l in Locale::BOTH {
        let n = map.locale(l).len();
        out.push((format!("head.{}.w", l.tag()), Init::Xavier(d, n)));
        out.push((format!("head.{}.b", l.tag()), Init::Zeros(n)));
    }
    let nb = map.bilingual.len();
    match cfg.combination_mode {
        CombinationMode::Aux => {
            out.push(("head.shared.w".into(), Init::Xavier(2 * d, nb)));
            out.push(("head.shared.b".into(), Init::Zeros(nb)));
        }
        CombinationMode::Lid => {
            out.push(("head.combined.w".into(), Init::Xavier(d, nb)));
            out.push(("head.combined.b".into(), Init::Zeros(nb)));
        }
    }
    out
}

#[cfg(test)]
mod tests;
