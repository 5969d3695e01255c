//! Synthetic text/video corpora with planted ground truth.
//!
//! Every video is a run of scenes. A scene is a block of tokens scattered
//! around one latent unit direction, and a video's latents are mutually
//! orthogonal when `D` allows. Each query describes exactly one scene of its
//! target video: its tokens scatter around that scene's latent, and its
//! first row (the global row) is the normalized mean of those tokens.
//!
//! Optional knobs make the task harder in ways that learned weights can
//! undo: filler query tokens drawn around a few shared "stopword" latents,
//! and a shared nuisance subspace added to every token.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Matrix, Modality, RngSeed, TokenMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub num_docs: usize,
    /// Inclusive range of scenes per video.
    pub scenes_per_doc: (usize, usize),
    pub tokens_per_scene: usize,
    /// Padded text length `N_t`.
    pub text_tokens: usize,
    /// Padded video length `N_v`.
    pub video_tokens: usize,
    pub dim: usize,
    /// Expected norm of the noise added to each token.
    pub noise_sigma: f64,
    /// Probability that a scene reuses a latent of an earlier video.
    pub distractor_overlap: f64,
    /// Inclusive range of valid query tokens, global row included.
    pub query_len: (usize, usize),
    /// Probability that a non-global query token is filler.
    pub filler_fraction: f64,
    pub filler_latents: usize,
    pub nuisance_dims: usize,
    /// Per-direction standard deviation of the nuisance component.
    pub nuisance_sigma: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_docs: 1000,
            scenes_per_doc: (3, 3),
            tokens_per_scene: 4,
            text_tokens: 32,
            video_tokens: 12,
            dim: 512,
            noise_sigma: 0.5,
            distractor_overlap: 0.0,
            query_len: (8, 16),
            filler_fraction: 0.0,
            filler_latents: 4,
            nuisance_dims: 0,
            nuisance_sigma: 0.0,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    /// Corpus of the training demonstration: 1000 videos of 3 scenes at
    /// `D = 64`, heavy token noise, 40% filler query tokens and a
    /// 4-dimensional nuisance subspace.
    pub fn training_demo() -> Self {
        Self {
            dim: 64,
            noise_sigma: 1.0,
            filler_fraction: 0.4,
            nuisance_dims: 4,
            nuisance_sigma: 0.5,
            seed: 1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let (smin, smax) = self.scenes_per_doc;
        let (qmin, qmax) = self.query_len;
        if self.num_docs == 0 {
            return bad("num_docs must be positive".into());
        }
        if self.dim == 0 || self.dim > u16::MAX as usize {
            return bad(format!("dim {} out of range", self.dim));
        }
        if smin == 0 || smin > smax {
            return bad(format!("scenes_per_doc range {smin}..={smax} is empty or starts at 0"));
        }
        if self.tokens_per_scene == 0 || smax * self.tokens_per_scene > self.video_tokens {
            return bad(format!(
                "{smax} scenes of {} tokens do not fit in {} video tokens",
                self.tokens_per_scene, self.video_tokens
            ));
        }
        if self.video_tokens > u16::MAX as usize || self.text_tokens > u16::MAX as usize {
            return bad("sequence lengths must fit in u16".into());
        }
        if qmin < 2 || qmin > qmax || qmax > self.text_tokens {
            return bad(format!("query_len {qmin}..={qmax} must satisfy 2 <= min <= max <= {}", self.text_tokens));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.distractor_overlap) {
            return bad(format!("distractor_overlap {} outside [0, 1]", self.distractor_overlap));
        }
        if !(0.0..1.0).contains(&self.filler_fraction) {
            return bad(format!("filler_fraction {} outside [0, 1)", self.filler_fraction));
        }
        if self.filler_fraction > 0.0 && self.filler_latents == 0 {
            return bad("filler needs at least one filler latent".into());
        }
        if self.nuisance_dims >= self.dim {
            return bad(format!("nuisance_dims {} must be below dim {}", self.nuisance_dims, self.dim));
        }
        if !(self.nuisance_sigma >= 0.0 && self.nuisance_sigma.is_finite()) {
            return bad(format!("nuisance_sigma {} must be finite and >= 0", self.nuisance_sigma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub videos: Vec<TokenMatrix>,
    pub queries: Vec<TokenMatrix>,
    /// Query id → target video id.
    pub truth: BTreeMap<u32, u32>,
    /// Latent direction of every scene of every video.
    pub scene_latents: Vec<Vec<Vec<f64>>>,
    /// Which scene of its target each query describes.
    pub query_scene: Vec<usize>,
}

fn unit<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rand_distr::StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Orthogonalizes `v` against `basis` (assumed unit length) and renormalizes.
/// Leaves `v` untouched if nothing of it would remain.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    let mut w = v.to_vec();
    for b in basis {
        let p = dot(&w, b);
        w.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
    let n = norm(&w);
    if n > 1e-6 {
        v.iter_mut().zip(&w).for_each(|(x, y)| *x = y / n);
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    nuisance: Vec<Vec<f64>>,
    nuisance_coef: Normal<f64>,
}

impl Sampler {
    fn token(&mut self, center: &[f64]) -> Vec<f64> {
        let mut t: Vec<f64> = center.iter().map(|c| c + self.noise.sample(&mut self.rng)).collect();
        for u in &self.nuisance {
            let c = self.nuisance_coef.sample(&mut self.rng);
            t.iter_mut().zip(u).for_each(|(x, y)| *x += c * y);
        }
        t
    }
}

fn quantized(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
    Matrix::from_vec(rows, cols, data.into_iter().map(|x| x as f32 as f64).collect()).expect("sized buffer")
}

/// Generates a corpus; identical configs give bit-identical corpora. Token
/// values are rounded to 32-bit precision so they survive a DRLE round trip.
pub fn gen_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut rng = RngSeed(cfg.seed).rng();
    let nuisance_basis: Vec<Vec<f64>> = {
        let mut basis = Vec::with_capacity(cfg.nuisance_dims);
        for _ in 0..cfg.nuisance_dims {
            let mut u = unit(&mut rng, d);
            orthogonalize(&mut u, &basis);
            basis.push(u);
        }
        basis
    };
    let fillers: Vec<Vec<f64>> =
        if cfg.filler_fraction > 0.0 { (0..cfg.filler_latents).map(|_| unit(&mut rng, d)).collect() } else { vec![] };

    let per_coord = cfg.noise_sigma / (d as f64).sqrt();
    let mut s = Sampler {
        rng,
        noise: Normal::new(0.0, per_coord).map_err(|e| Error::Config(e.to_string()))?,
        nuisance: nuisance_basis,
        nuisance_coef: Normal::new(0.0, cfg.nuisance_sigma).map_err(|e| Error::Config(e.to_string()))?,
    };

    let mut scene_latents: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.num_docs);
    let mut videos = Vec::with_capacity(cfg.num_docs);
    for k in 0..cfg.num_docs {
        let scenes = s.rng.random_range(cfg.scenes_per_doc.0..=cfg.scenes_per_doc.1);
        let reuse: Vec<bool> = (0..scenes).map(|_| k > 0 && s.rng.random_bool(cfg.distractor_overlap)).collect();
        let mut latents: Vec<Option<Vec<f64>>> = vec![None; scenes];
        for (slot, &r) in latents.iter_mut().zip(&reuse) {
            if r {
                let donor = &scene_latents[s.rng.random_range(0..k)];
                *slot = Some(donor.choose(&mut s.rng).expect("videos have scenes").clone());
            }
        }
        let mut basis: Vec<Vec<f64>> = latents.iter().flatten().cloned().collect();
        for slot in latents.iter_mut().filter(|l| l.is_none()) {
            let mut v = unit(&mut s.rng, d);
            if basis.len() < d {
                orthogonalize(&mut v, &basis);
            }
            basis.push(v.clone());
            *slot = Some(v);
        }
        let latents: Vec<Vec<f64>> = latents.into_iter().flatten().collect();

        let mut data = vec![0.0; cfg.video_tokens * d];
        let mut mask = vec![false; cfg.video_tokens];
        for (sc, lat) in latents.iter().enumerate() {
            for t in 0..cfg.tokens_per_scene {
                let row = sc * cfg.tokens_per_scene + t;
                data[row * d..(row + 1) * d].copy_from_slice(&s.token(lat));
                mask[row] = true;
            }
        }
        videos.push(TokenMatrix::new(k as u32, quantized(cfg.video_tokens, d, data), mask, Modality::Video)?);
        scene_latents.push(latents);
    }

    let mut queries = Vec::with_capacity(cfg.num_docs);
    let mut query_scene = Vec::with_capacity(cfg.num_docs);
    let mut truth = BTreeMap::new();
    for (k, latents) in scene_latents.iter().enumerate() {
        let scene = s.rng.random_range(0..latents.len());
        let valid = s.rng.random_range(cfg.query_len.0..=cfg.query_len.1);
        let mut data = vec![0.0; cfg.text_tokens * d];
        let mut cluster = vec![0.0; d];
        for row in 1..valid {
            // row 1 always describes the scene, so the global row is defined
            let filler = row > 1 && s.rng.random_bool(cfg.filler_fraction);
            let tok = if filler {
                let f = fillers.choose(&mut s.rng).expect("filler latents exist").clone();
                s.token(&f)
            } else {
                let t = s.token(&latents[scene]);
                cluster.iter_mut().zip(&t).for_each(|(a, b)| *a += b);
                t
            };
            data[row * d..(row + 1) * d].copy_from_slice(&tok);
        }
        let n = norm(&cluster);
        let global: Vec<f64> = if n > 1e-12 { cluster.iter().map(|x| x / n).collect() } else { latents[scene].clone() };
        data[..d].copy_from_slice(&global);
        let mask = (0..cfg.text_tokens).map(|r| r < valid).collect();
        queries.push(TokenMatrix::new(k as u32, quantized(cfg.text_tokens, d, data), mask, Modality::Text)?);
        query_scene.push(scene);
        truth.insert(k as u32, k as u32);
    }

    Ok(Corpus { videos, queries, truth, scene_latents, query_scene })
}

/// Seeded split of `0..n` into (train, validation) index lists.
pub fn split_indices(n: usize, validation_fraction: f64, seed: RngSeed) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::Config(format!("validation fraction {validation_fraction} outside [0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut seed.rng());
    let nv = (n as f64 * validation_fraction).round() as usize;
    let mut validation = idx[..nv].to_vec();
    let mut train = idx[nv..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    Ok((train, validation))
}
