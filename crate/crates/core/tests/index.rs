mod common;

use common::*;
use tvr_core::index::{
    build_index, hit_order, load_shard, load_tokens, manifest_path, query_topk, query_topk_with, save_shard,
    save_tokens, scan_scores, DrleFile, Hit, IndexShard, Manifest, QueryOptions,
};
use tvr_core::interaction::{score_wti_batch, HeadInit, Mechanism, Scorer, ScorerConfig};
use tvr_core::numerics::{Modality, RngSeed, TokenMatrix};
use tvr_core::Error;

fn docs(seed: u64, count: usize, n: usize, d: usize, modality: Modality) -> Vec<TokenMatrix> {
    let mut r = rng(seed);
    (0..count as u32).map(|id| random_tokens(&mut r, id, n, d, modality)).collect()
}

fn all_scorers(d: usize) -> Vec<Scorer> {
    let cfg = ScorerConfig { layers: 2, head_init: HeadInit::Uniform, ..ScorerConfig::new(d) };
    Mechanism::ALL.into_iter().map(|m| Scorer::build(m, &cfg, RngSeed(17)).unwrap()).collect()
}

fn shard_for(vs: &[TokenMatrix], scorer: &Scorer) -> IndexShard {
    build_index(vs, scorer.video_head()).unwrap()
}

#[test]
fn scan_equals_sorting_every_score() {
    let d = 8;
    let vs = docs(1, 50, 6, d, Modality::Video);
    let qs = docs(2, 5, 7, d, Modality::Text);
    for scorer in all_scorers(d) {
        let shard = shard_for(&vs, &scorer);
        for q in &qs {
            let mut brute: Vec<Hit> = shard
                .docs()
                .iter()
                .map(|doc| Hit { id: doc.id(), score: scorer.score_pair(q, &doc.tokens).unwrap() })
                .collect();
            brute.sort_by(hit_order);
            let r = query_topk(q, &shard, 50, &scorer).unwrap();
            assert_eq!(r.hits.len(), 50);
            for (a, b) in r.hits.iter().zip(&brute) {
                assert_eq!(a.id, b.id, "{}", scorer.mechanism());
                assert!((a.score - b.score).abs() < 1e-6, "{}", scorer.mechanism());
            }
            let top = query_topk(q, &shard, 7, &scorer).unwrap();
            assert_eq!(top.hits, r.hits[..7]);
        }
    }
}

#[test]
fn precomputed_weights_match_from_scratch_scores() {
    let d = 12;
    let vs = docs(3, 100, 12, d, Modality::Video);
    let qs = docs(4, 8, 10, d, Modality::Text);
    let scorer = &all_scorers(d)[Mechanism::Wti as usize];
    let Scorer::Wti { text, video, .. } = scorer else { unreachable!() };
    let shard = shard_for(&vs, scorer);
    let scratch = score_wti_batch(&qs, &vs, text, video).unwrap();
    for (a, q) in qs.iter().enumerate() {
        let s = scan_scores(q, &shard, scorer, None).unwrap();
        for (b, x) in s.iter().enumerate() {
            assert!((x - scratch.scores[(a, b)]).abs() < 1e-6);
        }
    }
}

#[test]
fn worker_pool_gives_identical_rankings() {
    let d = 8;
    let vs = docs(5, 300, 6, d, Modality::Video);
    let qs = docs(6, 4, 6, d, Modality::Text);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    for scorer in all_scorers(d) {
        let shard = shard_for(&vs, &scorer);
        for q in &qs {
            let a = query_topk_with(q, &shard, 20, &scorer, QueryOptions { truth: Some(3), pool: None }).unwrap();
            let b =
                query_topk_with(q, &shard, 20, &scorer, QueryOptions { truth: Some(3), pool: Some(&pool) }).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn rank_of_truth_counts_strictly_better_docs() {
    let d = 6;
    let vs = docs(7, 30, 5, d, Modality::Video);
    let q = &docs(8, 1, 5, d, Modality::Text)[0];
    let scorer = Scorer::Dp;
    let shard = shard_for(&vs, &scorer);
    let all = query_topk(q, &shard, 30, &scorer).unwrap();
    for (pos, h) in all.hits.iter().enumerate() {
        let r = query_topk_with(q, &shard, 1, &scorer, QueryOptions { truth: Some(h.id), pool: None }).unwrap();
        assert_eq!(r.rank_of_truth, Some(pos + 1));
    }
    let missing = query_topk_with(q, &shard, 1, &scorer, QueryOptions { truth: Some(999), pool: None }).unwrap();
    assert_eq!(missing.rank_of_truth, None);
}

#[test]
fn saved_shard_round_trips_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let d = 16;
    let vs = docs(9, 100, 12, d, Modality::Video);
    let qs = docs(10, 10, 9, d, Modality::Text);
    let scorers = all_scorers(d);
    let wti = &scorers[Mechanism::Wti as usize];
    let shard = shard_for(&vs, wti);
    let p1 = dir.path().join("a.drle");
    let p2 = dir.path().join("b.drle");
    save_shard(&shard, &p1, &Manifest::new()).unwrap();
    let loaded = load_shard(&p1).unwrap();
    assert_eq!(loaded, shard);
    save_shard(&loaded, &p2, &Manifest::new()).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    for scorer in &scorers {
        for q in &qs {
            assert_eq!(query_topk(q, &shard, 10, scorer).unwrap(), query_topk(q, &loaded, 10, scorer).unwrap());
        }
    }
    let m = Manifest::read(&manifest_path(&p1)).unwrap();
    assert_eq!(m.get("docs"), Some("100"));
    assert_eq!(m.get("weights"), Some("true"));
    assert_eq!(m.get("mechanism_support"), Some("dp,hi,mlp,xti,ti,wti"));
}

#[test]
fn shard_without_weights_rejects_wti() {
    let vs = docs(11, 5, 4, 4, Modality::Video);
    let shard = build_index(&vs, None).unwrap();
    assert!(!shard.supports(Mechanism::Wti));
    let q = &docs(12, 1, 4, 4, Modality::Text)[0];
    let wti = &all_scorers(4)[Mechanism::Wti as usize];
    assert!(matches!(query_topk(q, &shard, 1, wti), Err(Error::Unsupported(_))));
}

#[test]
fn token_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.drle");
    let qs: Vec<TokenMatrix> = docs(13, 20, 9, 5, Modality::Text)
        .into_iter()
        .map(|t| {
            let (id, m, mask, modality) = t.into_parts();
            let m = tvr_core::numerics::Matrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)] as f32 as f64);
            TokenMatrix::new(id, m, mask, modality).unwrap()
        })
        .collect();
    let mut man = Manifest::new();
    man.set("seed", 13);
    save_tokens(&qs, &p, &man).unwrap();
    assert_eq!(load_tokens(&p, Modality::Text).unwrap(), qs);
    assert_eq!(Manifest::read(&manifest_path(&p)).unwrap().get("seed"), Some("13"));
}

#[test]
fn corrupted_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.drle");
    let vs = docs(14, 20, 6, 4, Modality::Video);
    save_shard(&shard_for(&vs, &all_scorers(4)[Mechanism::Wti as usize]), &p, &Manifest::new()).unwrap();
    let good = std::fs::read(&p).unwrap();
    assert!(DrleFile::decode(&good).is_ok());

    for cut in [0, 3, 4, 13, 14, 20, good.len() / 2, good.len() - 5, good.len() - 1] {
        assert!(matches!(DrleFile::decode(&good[..cut]), Err(Error::Format(_))), "cut at {cut}");
    }
    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(DrleFile::decode(&bad), Err(Error::Format(_))));
    let mut bad = good.clone();
    bad[4] = 9;
    assert!(matches!(DrleFile::decode(&bad), Err(Error::Format(_))));
    let mut bad = good.clone();
    bad[good.len() / 2] ^= 0x10;
    assert!(matches!(DrleFile::decode(&bad), Err(Error::Checksum { .. }) | Err(Error::Format(_))));
    let mut bad = good.clone();
    bad.push(0);
    assert!(matches!(DrleFile::decode(&bad), Err(Error::Format(_))));

    std::fs::write(&p, &good[..good.len() - 2]).unwrap();
    assert!(matches!(load_shard(&p), Err(Error::Format(_))));
}
