mod common;

use common::*;
use proptest::prelude::*;
use tvr_core::datagen::{gen_corpus, CorpusConfig};
use tvr_core::eval::{evaluate, retrieval_metrics};
use tvr_core::index::RetrievalResult;
use tvr_core::interaction::{score_wti_batch, uniform_level_weights, Scorer, TiForm};
use tvr_core::numerics::{dot, Modality};

fn small(seed: u64) -> CorpusConfig {
    CorpusConfig { num_docs: 40, dim: 64, seed, ..Default::default() }
}

#[test]
fn same_seed_same_corpus() {
    let a = gen_corpus(&small(11)).unwrap();
    let b = gen_corpus(&small(11)).unwrap();
    assert_eq!(a, b);
    let c = gen_corpus(&small(12)).unwrap();
    assert_ne!(a.videos, c.videos);
}

#[test]
fn shapes_follow_config() {
    let cfg = CorpusConfig { num_docs: 30, dim: 16, scenes_per_doc: (1, 3), ..Default::default() };
    let c = gen_corpus(&cfg).unwrap();
    assert_eq!((c.videos.len(), c.queries.len()), (30, 30));
    for (v, lat) in c.videos.iter().zip(&c.scene_latents) {
        assert_eq!((v.len(), v.dim()), (12, 16));
        assert_eq!(v.valid_count(), lat.len() * cfg.tokens_per_scene);
        assert!((1..=3).contains(&lat.len()));
    }
    for q in &c.queries {
        assert_eq!(q.len(), 32);
        assert!((8..=16).contains(&q.valid_count()));
        assert_eq!(c.truth[&q.id], q.id);
    }
}

#[test]
fn scene_latents_within_a_video_are_orthonormal() {
    let c = gen_corpus(&CorpusConfig { num_docs: 10, dim: 64, scenes_per_doc: (3, 5), video_tokens: 20, ..Default::default() }).unwrap();
    for lats in &c.scene_latents {
        for (i, a) in lats.iter().enumerate() {
            assert!((dot(a, a) - 1.0).abs() < 1e-9);
            for b in &lats[..i] {
                assert!(dot(a, b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn nearest_latent_recovers_every_target() {
    let c = gen_corpus(&CorpusConfig { noise_sigma: 0.1, ..small(5) }).unwrap();
    for (k, q) in c.queries.iter().enumerate() {
        let mean = q.valid_mean();
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (doc, lats) in c.scene_latents.iter().enumerate() {
            for l in lats {
                let s = dot(&mean, l);
                if s > best.0 {
                    best = (s, doc);
                }
            }
        }
        assert_eq!(best.1 as u32, c.truth[&q.id], "query {k}");
    }
}

#[test]
fn overlap_reuses_earlier_latents() {
    let c = gen_corpus(&CorpusConfig { distractor_overlap: 1.0, ..small(3) }).unwrap();
    for (k, lats) in c.scene_latents.iter().enumerate().skip(1) {
        for l in lats {
            assert!(c.scene_latents[..k].iter().flatten().any(|e| e == l));
        }
    }
}

#[test]
fn noiseless_single_scene_is_an_exact_match() {
    let cfg = CorpusConfig { noise_sigma: 0.0, scenes_per_doc: (1, 1), ..small(8) };
    let c = gen_corpus(&cfg).unwrap();
    let mut r = rng(1);
    let th = random_head(&mut r, Modality::Text, 64, 8);
    let vh = random_head(&mut r, Modality::Video, 64, 8);
    let s = score_wti_batch(&c.queries, &c.videos, &th, &vh).unwrap();
    for (a, q) in c.queries.iter().enumerate() {
        let target = c.truth[&q.id] as usize;
        assert!((s.scores[(a, target)] - 1.0).abs() < 1e-6);
        for b in (0..c.videos.len()).filter(|&b| b != target) {
            assert!(s.scores[(a, b)] < s.scores[(a, target)] - 0.5);
        }
    }
    for scorer in [
        Scorer::Dp,
        Scorer::Hi { level_weights: uniform_level_weights(3) },
        Scorer::Ti { form: TiForm::Mean, path: Default::default() },
        Scorer::Wti { text: th.clone(), video: vh.clone(), path: Default::default() },
    ] {
        let m = retrieval_metrics(&c.queries, &c.videos, &c.truth, &scorer, None).unwrap();
        assert_eq!(m.r_at_1, 100.0, "{:?}", scorer.mechanism());
    }
}

#[test]
fn token_matching_beats_pooling_on_multi_scene_videos() {
    let cfg = CorpusConfig { num_docs: 300, dim: 64, noise_sigma: 1.0, ..CorpusConfig::training_demo() };
    let c = gen_corpus(&cfg).unwrap();
    let dp = retrieval_metrics(&c.queries, &c.videos, &c.truth, &Scorer::Dp, None).unwrap();
    let ti = Scorer::Ti { form: TiForm::Mean, path: Default::default() };
    let ti = retrieval_metrics(&c.queries, &c.videos, &c.truth, &ti, None).unwrap();
    assert!(ti.r_at_1 >= dp.r_at_1, "TI {} vs DP {}", ti.r_at_1, dp.r_at_1);
}

fn results(ranks: &[usize]) -> Vec<RetrievalResult> {
    ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| RetrievalResult { query_id: i as u32, hits: vec![], rank_of_truth: Some(r) })
        .collect()
}

proptest! {
    #[test]
    fn metric_ranges(ranks in proptest::collection::vec(1usize..100, 1..50)) {
        let m = evaluate(&results(&ranks)).unwrap();
        prop_assert!(0.0 <= m.r_at_1 && m.r_at_1 <= m.r_at_5 && m.r_at_5 <= m.r_at_10 && m.r_at_10 <= 100.0);
        prop_assert!(m.mdr >= 1 && m.mnr >= 1.0);
    }

    #[test]
    fn worse_ranks_never_raise_recall(ranks in proptest::collection::vec(1usize..30, 1..40),
                                      bumps in proptest::collection::vec(0usize..10, 40)) {
        let worse: Vec<usize> = ranks.iter().zip(&bumps).map(|(r, b)| r + b).collect();
        let (a, b) = (evaluate(&results(&ranks)).unwrap(), evaluate(&results(&worse)).unwrap());
        prop_assert!(b.r_at_1 <= a.r_at_1 && b.r_at_5 <= a.r_at_5 && b.r_at_10 <= a.r_at_10);
        prop_assert!(b.mdr >= a.mdr && b.mnr >= a.mnr);
    }
}
