//! Fixtures shared by the benchmarks.

use blxam::synthdata::{gen_locale_specs, synth_utterance, CorpusConfig};
use blxam::training::TrainExample;
use blxam::{
    AcousticModel, BilingualSpaceMap, CombinationMode, ModelConfig, SyntheticLocaleSpec, Utterance,
};

/// Locale specs and bilingual map at the default corpus settings.
pub fn specs(seed: u64) -> (SyntheticLocaleSpec, SyntheticLocaleSpec, BilingualSpaceMap) {
    gen_locale_specs(seed, 50, 0.1, &CorpusConfig::default()).expect("default specs are feasible")
}

/// A monolingual utterance of `words` words from `spec`.
pub fn utterance(spec: &SyntheticLocaleSpec, words: usize, seed: u64) -> Utterance {
    let w: Vec<&str> = spec.words.iter().take(words).map(String::as_str).collect();
    synth_utterance(spec, &w, "bench", seed).expect("words come from the locale word list")
}

/// A freshly initialized default-shape model.
pub fn model(map: &BilingualSpaceMap, mode: CombinationMode) -> AcousticModel {
    let cfg = ModelConfig {
        combination_mode: mode,
        ..ModelConfig::default()
    };
    AcousticModel::new(cfg, map.clone(), 1).expect("default config is valid")
}

pub fn example(utt: &Utterance, map: &BilingualSpaceMap) -> TrainExample {
    TrainExample::from_utterance(utt, map).expect("synthetic utterances are consistent")
}
