//! Minibatch gradient descent on the WTI weight heads (and optional token
//! adapters) over a generated corpus.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::datagen::{split_indices, Corpus};
use crate::error::{Error, Result};
use crate::eval::{retrieval_metrics, Metrics};
use crate::interaction::{HeadInit, Mechanism, Path, Scorer, TiForm, WeightHead};
use crate::losses::{LossBreakdown, LossConfig, WtiModel};
use crate::numerics::{Modality, RngSeed, TokenMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub loss: LossConfig,
    pub seed: u64,
    /// Hidden width of both heads; `None` means `ceil(D/2)`.
    pub head_hidden: Option<usize>,
    pub head_depth: usize,
    /// Also learn a `D × D` linear map per modality, starting at identity.
    pub adapters: bool,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 32,
            step_size: 0.05,
            loss: LossConfig::default(),
            seed: 0,
            head_hidden: None,
            head_depth: 2,
            adapters: true,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Loss on the fixed monitor batch before this step's update.
    pub monitor: LossBreakdown,
    /// Loss on this step's minibatch before the update.
    pub batch: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// Monitor-batch loss after the last update.
    pub final_monitor: LossBreakdown,
    /// Held-out metrics for DP, TI (mean) and the trained WTI model.
    pub held_out: Vec<(Mechanism, Metrics)>,
    pub model: WtiModel,
}

impl TrainReport {
    pub fn initial_monitor(&self) -> LossBreakdown {
        self.steps.first().map_or(self.final_monitor, |s| s.monitor)
    }

    pub fn held_out(&self, m: Mechanism) -> Option<&Metrics> {
        self.held_out.iter().find(|(k, _)| *k == m).map(|(_, v)| v)
    }

    /// One tab-separated `key:value` record per line.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.steps {
            let _ = writeln!(
                s,
                "record:step\tstep:{}\ttotal:{:.9}\tinfo_nce:{:.9}\tcdcr:{:.9}\tbatch_total:{:.9}\tbatch_info_nce:{:.9}\tbatch_cdcr:{:.9}",
                r.step, r.monitor.total, r.monitor.info_nce, r.monitor.cdcr, r.batch.total, r.batch.info_nce, r.batch.cdcr
            );
        }
        let f = self.final_monitor;
        let _ = writeln!(
            s,
            "record:final\tsteps:{}\ttotal:{:.9}\tinfo_nce:{:.9}\tcdcr:{:.9}\tinfo_nce_ratio:{:.6}\tseed:{}",
            self.steps.len(),
            f.total,
            f.info_nce,
            f.cdcr,
            f.info_nce / self.initial_monitor().info_nce,
            self.seed
        );
        for (m, x) in &self.held_out {
            let _ = writeln!(s, "{}", metrics_line(&format!("record:held_out\tmechanism:{m}"), x));
        }
        s
    }
}

pub fn metrics_line(prefix: &str, m: &Metrics) -> String {
    format!(
        "{prefix}\tr@1:{:.2}\tr@5:{:.2}\tr@10:{:.2}\tmdr:{}\tmnr:{:.3}",
        m.r_at_1, m.r_at_5, m.r_at_10, m.mdr, m.mnr
    )
}

fn pick(items: &[TokenMatrix], idx: &[usize]) -> Vec<TokenMatrix> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Queries and videos with ids `0..n` where query `i` targets video `i`.
fn check_pairing(corpus: &Corpus) -> Result<()> {
    let n = corpus.videos.len();
    let paired = corpus.queries.len() == n
        && corpus.queries.iter().enumerate().all(|(i, q)| corpus.truth.get(&q.id) == Some(&corpus.videos[i].id));
    if paired {
        Ok(())
    } else {
        Err(Error::Config("training expects query i to target video i".into()))
    }
}

/// Fresh model: output layers zero so training starts exactly at TI (mean).
pub fn initial_model(dim: usize, cfg: &TrainConfig) -> WtiModel {
    let mut rng = RngSeed(cfg.seed).derive(1).rng();
    let hidden = cfg.head_hidden.unwrap_or(dim.div_ceil(2));
    let tw = WeightHead::init(Modality::Text, dim, hidden, cfg.head_depth, HeadInit::ZeroOutput, &mut rng);
    let vw = WeightHead::init(Modality::Video, dim, hidden, cfg.head_depth, HeadInit::ZeroOutput, &mut rng);
    let m = WtiModel::new(tw, vw);
    if cfg.adapters {
        m.with_identity_adapters()
    } else {
        m
    }
}

/// Scorer for the trained model over tokens already passed through its adapters.
pub fn wti_scorer(model: &WtiModel) -> Scorer {
    Scorer::Wti { text: model.text_head.clone(), video: model.video_head.clone(), path: Path::Both }
}

pub fn adapt_all(model: &WtiModel, items: &[TokenMatrix]) -> Result<Vec<TokenMatrix>> {
    items
        .iter()
        .map(|t| match t.modality {
            Modality::Text => model.adapt_text(t),
            Modality::Video => model.adapt_video(t),
        })
        .collect()
}

/// Trains on a seeded split of `corpus` and reports held-out metrics.
pub fn train_heads(corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.loss.validate()?;
    check_pairing(corpus)?;
    if cfg.head_depth == 0 {
        return Err(Error::Config("weight head needs at least one layer".into()));
    }
    if !(cfg.step_size >= 0.0 && cfg.step_size.is_finite()) {
        return Err(Error::Config(format!("step size {} must be finite and >= 0", cfg.step_size)));
    }
    let seed = RngSeed(cfg.seed);
    let (train, held) = split_indices(corpus.videos.len(), cfg.validation_fraction, seed.derive(2))?;
    if cfg.batch_size < 2 || cfg.batch_size > train.len() {
        return Err(Error::Config(format!(
            "batch size {} must be in 2..={} (training pairs)",
            cfg.batch_size,
            train.len()
        )));
    }
    if held.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let dim = corpus.videos[0].dim();
    let mut model = initial_model(dim, cfg);

    let mut rng = seed.derive(3).rng();
    let monitor: Vec<usize> = sample(&mut rng, train.len(), cfg.batch_size).into_iter().map(|i| train[i]).collect();
    let (mt, mv) = (pick(&corpus.queries, &monitor), pick(&corpus.videos, &monitor));

    let mut steps = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<usize> = sample(&mut rng, train.len(), cfg.batch_size).into_iter().map(|i| train[i]).collect();
        let (bt, bv) = (pick(&corpus.queries, &batch), pick(&corpus.videos, &batch));
        let monitor_loss = model.loss(&mt, &mv, &cfg.loss)?;
        let (batch_loss, grads) = model.loss_and_grad(&bt, &bv, &cfg.loss)?;
        if !batch_loss.total.is_finite() {
            return Err(Error::Config(format!("loss diverged at step {step}")));
        }
        model.descend(&grads, cfg.step_size);
        steps.push(StepRecord { step, monitor: monitor_loss, batch: batch_loss });
    }
    let final_monitor = model.loss(&mt, &mv, &cfg.loss)?;

    let hq = pick(&corpus.queries, &held);
    let hv = pick(&corpus.videos, &held);
    let truth: BTreeMap<u32, u32> = hq.iter().map(|q| (q.id, corpus.truth[&q.id])).collect();
    let ti = Scorer::Ti { form: TiForm::Mean, path: Path::Both };
    let held_out = vec![
        (Mechanism::Dp, retrieval_metrics(&hq, &hv, &truth, &Scorer::Dp, None)?),
        (Mechanism::Ti, retrieval_metrics(&hq, &hv, &truth, &ti, None)?),
        (
            Mechanism::Wti,
            retrieval_metrics(&adapt_all(&model, &hq)?, &adapt_all(&model, &hv)?, &truth, &wti_scorer(&model), None)?,
        ),
    ];
    Ok(TrainReport { seed: cfg.seed, steps, final_monitor, held_out, model })
}
