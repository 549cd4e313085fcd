use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::synthdata::{gen_locale_specs, CorpusConfig};

fn map() -> BilingualSpaceMap {
    gen_locale_specs(4, 12, 0.1, &CorpusConfig::default())
        .unwrap()
        .2
}

fn small(mode: CombinationMode) -> ModelConfig {
    ModelConfig {
        model_dim: 8,
        heads: 2,
        ff_dim: 12,
        n_shared_layers: 1,
        n_pe_layers: 1,
        n_lid_layers: 1,
        chunk_frames: 4,
        combination_mode: mode,
        ..ModelConfig::default()
    }
}

fn features(rng: &mut ChaCha8Rng, frames: usize) -> Tensor {
    Tensor::new(
        vec![frames, 16],
        (0..frames * 16)
            .map(|_| rng.random_range(-1.5..1.5))
            .collect(),
    )
    .unwrap()
}

fn rows_are_log_distributions(t: &Tensor) -> bool {
    (0..t.rows()).all(|r| (t.row(r).iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-12)
}

#[test]
fn parameter_layout_depends_on_combination_mode() {
    let map = map();
    let aux = AcousticModel::new(small(CombinationMode::Aux), map.clone(), 1).unwrap();
    let lid = AcousticModel::new(small(CombinationMode::Lid), map.clone(), 1).unwrap();
    let nb = map.bilingual.len();
    assert_eq!(aux.store().get("head.shared.w").unwrap().shape(), [16, nb]);
    assert!(!aux.store().contains("lid.out.w"));
    assert!(!aux.store().contains("head.combined.w"));
    assert_eq!(
        lid.store().get("lid.out.w").unwrap().shape(),
        [8, LID_CLASSES]
    );
    assert_eq!(lid.store().get("head.combined.w").unwrap().shape(), [8, nb]);
    assert!(!lid.store().contains("head.shared.w"));
    for l in Locale::BOTH {
        let w = aux.store().get(&format!("head.{}.w", l.tag())).unwrap();
        assert_eq!(w.shape(), [8, map.locale(l).len()]);
        assert!(aux
            .pe_param_names(l)
            .iter()
            .all(|n| n.starts_with(&format!("pe.{}.", l.tag()))));
        assert!(!aux.pe_param_names(l).is_empty());
    }
}

#[test]
fn initialization_is_seeded() {
    let map = map();
    let a = AcousticModel::new(small(CombinationMode::Aux), map.clone(), 7).unwrap();
    let b = AcousticModel::new(small(CombinationMode::Aux), map.clone(), 7).unwrap();
    let c = AcousticModel::new(small(CombinationMode::Aux), map, 8).unwrap();
    assert_eq!(a.store().checksum(), b.store().checksum());
    assert_ne!(a.store().checksum(), c.store().checksum());
}

#[test]
fn from_parts_rejects_a_foreign_store() {
    let map = map();
    let aux = AcousticModel::new(small(CombinationMode::Aux), map.clone(), 1).unwrap();
    let rebuilt = AcousticModel::from_parts(
        small(CombinationMode::Aux),
        map.clone(),
        aux.store().clone(),
        vec![],
    );
    assert!(rebuilt.is_ok());
    let err = AcousticModel::from_parts(
        small(CombinationMode::Lid),
        map,
        aux.store().clone(),
        vec![],
    );
    assert!(err.is_err());
}

#[test]
fn every_output_has_the_right_shape_and_normalization() {
    let map = map();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = features(&mut rng, 11);
    let aux = AcousticModel::new(small(CombinationMode::Aux), map.clone(), 1).unwrap();
    let lid = AcousticModel::new(small(CombinationMode::Lid), map.clone(), 1).unwrap();
    for (model, modes) in [
        (
            &aux,
            [DecodeMode::Bilingual, DecodeMode::MonoA, DecodeMode::MonoB],
        ),
        (
            &lid,
            [
                DecodeMode::LidCombined,
                DecodeMode::MonoA,
                DecodeMode::MonoB,
            ],
        ),
    ] {
        for mode in modes {
            let (post, lid_probs) = model.posteriors(&x, mode).unwrap();
            assert_eq!(post.shape(), [11, model.output_space(mode).len()], "{mode}");
            assert!(rows_are_log_distributions(&post));
            match model.combination_mode() {
                CombinationMode::Aux => assert!(lid_probs.is_none()),
                CombinationMode::Lid => {
                    let p = lid_probs.unwrap();
                    assert_eq!(p.shape(), [11, LID_CLASSES]);
                    assert!((0..11).all(|r| (p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12));
                }
            }
        }
    }
    assert!(aux.posteriors(&x, DecodeMode::LidCombined).is_err());
    assert!(lid.posteriors(&x, DecodeMode::Bilingual).is_err());
    assert!(aux
        .posteriors(
            &features(&mut rng, 3).slice_rows(0, 3),
            DecodeMode::Bilingual
        )
        .is_ok());
    let wrong = Tensor::zeros(&[4, 15]);
    assert!(aux.posteriors(&wrong, DecodeMode::Bilingual).is_err());
}

#[test]
fn streaming_mask_blocks_future_chunks() {
    let m = streaming_mask(0, 10, 10, 4, None);
    for i in 0..10 {
        for j in 0..10 {
            assert_eq!(m.allows(i, j), j < (i / 4 + 1) * 4, "{i} {j}");
        }
    }
    let m = streaming_mask(0, 12, 12, 4, Some(2));
    assert!(m.allows(9, 6) && !m.allows(9, 5) && m.allows(9, 11));
    // An offset query block uses absolute frame indices.
    let m = streaming_mask(8, 4, 12, 4, None);
    assert!(m.allows(0, 0) && m.allows(0, 11));
}

#[test]
fn streaming_is_bit_identical_to_full_forward() {
    let map = map();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (mode_cfg, mode) in [
        (CombinationMode::Aux, DecodeMode::Bilingual),
        (CombinationMode::Aux, DecodeMode::MonoB),
        (CombinationMode::Lid, DecodeMode::LidCombined),
    ] {
        for left in [None, Some(3)] {
            let cfg = ModelConfig {
                left_context_frames: left,
                ..small(mode_cfg)
            };
            let model = AcousticModel::new(cfg, map.clone(), 5).unwrap();
            let x = features(&mut rng, 19);
            let full = model.posteriors(&x, mode).unwrap();
            for feed in [1, 3, 4, 8, 19, 64] {
                let streamed = model.stream_utterance(&x, mode, feed).unwrap();
                assert_eq!(
                    streamed.0.data(),
                    full.0.data(),
                    "{mode} feed {feed} left {left:?}"
                );
                assert_eq!(streamed.1, full.1);
            }
        }
    }
}

#[test]
fn outputs_never_depend_on_later_chunks() {
    let map = map();
    let model = AcousticModel::new(small(CombinationMode::Lid), map, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = features(&mut rng, 12);
    let mut y = x.clone();
    for v in &mut y.data_mut()[8 * 16..] {
        *v += 1.0;
    }
    let (px, lx) = model.posteriors(&x, DecodeMode::LidCombined).unwrap();
    let (py, ly) = model.posteriors(&y, DecodeMode::LidCombined).unwrap();
    assert_eq!(px.slice_rows(0, 8), py.slice_rows(0, 8));
    assert_eq!(lx.unwrap().slice_rows(0, 8), ly.unwrap().slice_rows(0, 8));
    assert_ne!(px.slice_rows(8, 4), py.slice_rows(8, 4));
}

#[test]
fn stream_emits_whole_chunks_and_rejects_misuse() {
    let map = map();
    let model = AcousticModel::new(small(CombinationMode::Aux), map, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = features(&mut rng, 10);
    assert!(model.start_stream(DecodeMode::Bilingual, 0).is_err());
    assert!(model.start_stream(DecodeMode::LidCombined, 4).is_err());
    let mut s = model.start_stream(DecodeMode::Bilingual, 6).unwrap();
    let out = model
        .streaming_forward(&mut s, 0, &x.slice_rows(0, 6))
        .unwrap();
    assert_eq!((out.start_frame, out.frames()), (0, 4));
    assert!(model
        .streaming_forward(&mut s, 0, &x.slice_rows(6, 1))
        .is_err());
    assert!(model
        .streaming_forward(&mut s, 6, &x.slice_rows(0, 7))
        .is_err());
    let out = model
        .streaming_forward(&mut s, 6, &x.slice_rows(6, 4))
        .unwrap();
    assert_eq!((out.start_frame, out.frames()), (4, 4));
    assert_eq!((s.frames_fed(), s.frames_emitted()), (10, 8));
    let out = model.finish_stream(&mut s).unwrap();
    assert_eq!((out.start_frame, out.frames()), (8, 2));
    assert!(s.is_finished());
    assert!(model.finish_stream(&mut s).is_err());
    assert!(model
        .streaming_forward(&mut s, 10, &x.slice_rows(0, 1))
        .is_err());
}

#[test]
fn model_config_lists_every_problem() {
    let cfg = ModelConfig {
        model_dim: 10,
        heads: 4,
        chunk_frames: 0,
        locales: [
            crate::locale::LocaleId::new("it"),
            crate::locale::LocaleId::new("it"),
        ],
        ..ModelConfig::default()
    };
    let p = cfg.problems();
    assert_eq!(p.len(), 3, "{p:?}");
    assert!(ModelConfig::default().validate().is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn any_feed_split_reproduces_the_full_pass(frames in 1usize..14, cuts in proptest::collection::vec(1usize..6, 1..8)) {
        let map = map();
        let model = AcousticModel::new(small(CombinationMode::Aux), map, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(frames as u64);
        let x = features(&mut rng, frames);
        let full = model.posteriors(&x, DecodeMode::Bilingual).unwrap().0;
        let mut s = model.start_stream(DecodeMode::Bilingual, 8).unwrap();
        let mut parts = Vec::new();
        let (mut start, mut i) = (0, 0);
        while start < frames {
            let n = cuts[i % cuts.len()].min(frames - start);
            parts.push(model.streaming_forward(&mut s, start, &x.slice_rows(start, n)).unwrap().log_posteriors);
            start += n;
            i += 1;
        }
        parts.push(model.finish_stream(&mut s).unwrap().log_posteriors);
        let refs: Vec<&Tensor> = parts.iter().collect();
        prop_assert_eq!(Tensor::vstack(&refs).unwrap(), full);
    }
}
