//! The six text–video interaction mechanisms behind one [`Scorer`] enum.
//!
//! | mechanism | representation | parameters |
//! |-----------|----------------|------------|
//! | DP        | single vector  | none       |
//! | HI        | S levels       | level weights |
//! | MLP       | single vector  | black-box MLP |
//! | XTI       | token-wise     | black-box attention |
//! | TI        | token-wise     | none       |
//! | WTI       | token-wise     | per-modality weight heads |

pub mod dense;
pub mod single;
pub mod token;
pub mod weight_head;
pub mod xti;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dense::Dense;
pub use single::{
    score_dp, score_hi, score_mlp, score_mlp_pair, text_global, uniform_level_weights, video_mean, HiLevels,
    MlpScorerParams,
};
pub use token::{
    score_path, score_ti_batch, score_ti_path, score_wti_batch, token_match, weighted_pair_score, Path, TiForm,
    TokenMatch,
};
pub use weight_head::{token_weights, HeadInit, WeightHead};
pub use xti::{score_xti, AttentionBlock, XtiParams};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Modality, RngSeed, TokenMatrix};

/// Pairwise scores for a text batch against a video batch.
///
/// Token-wise scorers also record, for pair `(a, b)` at position
/// `a * B_v + b`, the best-matching video token of every text token
/// (`t2v_argmax`) and vice versa. Masked tokens have `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub scores: Matrix,
    pub t2v_argmax: Option<Vec<Vec<Option<usize>>>>,
    pub v2t_argmax: Option<Vec<Vec<Option<usize>>>>,
}

impl ScoreMatrix {
    pub fn without_assignments(scores: Matrix) -> Self {
        Self { scores, t2v_argmax: None, v2t_argmax: None }
    }
}

/// Argmax assignments of the positive pairs, one entry per batch item.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignments {
    /// For text item `b`, each text token's matched video token in video `b`.
    pub t2v: Vec<Vec<Option<usize>>>,
    /// For video item `b`, each video token's matched text token in text `b`.
    pub v2t: Vec<Vec<Option<usize>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mechanism {
    Dp,
    Hi,
    Mlp,
    Xti,
    Ti,
    Wti,
}

impl Mechanism {
    pub const ALL: [Mechanism; 6] =
        [Mechanism::Dp, Mechanism::Hi, Mechanism::Mlp, Mechanism::Xti, Mechanism::Ti, Mechanism::Wti];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Dp => "dp",
            Mechanism::Hi => "hi",
            Mechanism::Mlp => "mlp",
            Mechanism::Xti => "xti",
            Mechanism::Ti => "ti",
            Mechanism::Wti => "wti",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown mechanism {s:?}")))
    }
}

/// Hyper-parameters for building a scorer with freshly initialized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerConfig {
    pub dim: usize,
    /// Feature levels `S` for HI.
    pub levels: usize,
    /// Layer count `L` for the MLP scorer and the cross transformer.
    pub layers: usize,
    pub xti_heads: Option<usize>,
    pub head_hidden: usize,
    pub head_depth: usize,
    pub head_init: HeadInit,
    pub ti_form: TiForm,
    pub path: Path,
}

impl ScorerConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            levels: 3,
            layers: 4,
            xti_heads: None,
            head_hidden: dim.div_ceil(2),
            head_depth: 2,
            head_init: HeadInit::Zero,
            ti_form: TiForm::Mean,
            path: Path::Both,
        }
    }
}

/// A ready-to-use interaction mechanism with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    Dp,
    Hi { level_weights: Vec<f64> },
    Mlp(MlpScorerParams),
    Xti(XtiParams),
    Ti { form: TiForm, path: Path },
    Wti { text: WeightHead, video: WeightHead, path: Path },
}

impl Scorer {
    /// Builds a scorer, drawing any parameters from `seed`.
    pub fn build(mechanism: Mechanism, cfg: &ScorerConfig, seed: RngSeed) -> Result<Scorer> {
        let mut rng = seed.derive(mechanism as u64 + 1).rng();
        Ok(match mechanism {
            Mechanism::Dp => Scorer::Dp,
            Mechanism::Hi => {
                if cfg.levels == 0 {
                    return Err(Error::Config("HI needs at least one level".into()));
                }
                Scorer::Hi { level_weights: uniform_level_weights(cfg.levels) }
            }
            Mechanism::Mlp => Scorer::Mlp(MlpScorerParams::random(cfg.dim, cfg.layers, &mut rng)?),
            Mechanism::Xti => {
                let heads = cfg.xti_heads.unwrap_or_else(|| xti::default_heads(cfg.dim));
                Scorer::Xti(XtiParams::random(cfg.dim, heads, cfg.layers, &mut rng)?)
            }
            Mechanism::Ti => Scorer::Ti { form: cfg.ti_form, path: cfg.path },
            Mechanism::Wti => {
                if cfg.head_depth == 0 {
                    return Err(Error::Config("weight head needs at least one layer".into()));
                }
                let text = WeightHead::init(Modality::Text, cfg.dim, cfg.head_hidden, cfg.head_depth, cfg.head_init, &mut rng);
                let video =
                    WeightHead::init(Modality::Video, cfg.dim, cfg.head_hidden, cfg.head_depth, cfg.head_init, &mut rng);
                Scorer::Wti { text, video, path: cfg.path }
            }
        })
    }

    pub fn mechanism(&self) -> Mechanism {
        match self {
            Scorer::Dp => Mechanism::Dp,
            Scorer::Hi { .. } => Mechanism::Hi,
            Scorer::Mlp(_) => Mechanism::Mlp,
            Scorer::Xti(_) => Mechanism::Xti,
            Scorer::Ti { .. } => Mechanism::Ti,
            Scorer::Wti { .. } => Mechanism::Wti,
        }
    }

    /// Score of a single text/video pair.
    pub fn score_pair(&self, t: &TokenMatrix, v: &TokenMatrix) -> Result<f64> {
        let s = self.score_batch(std::slice::from_ref(t), std::slice::from_ref(v))?;
        Ok(s.scores[(0, 0)])
    }

    /// Scores of every text item against every video item.
    pub fn score_batch(&self, ts: &[TokenMatrix], vs: &[TokenMatrix]) -> Result<ScoreMatrix> {
        match self {
            Scorer::Ti { form, path } => score_ti_path(ts, vs, *form, *path),
            Scorer::Wti { text, video, path } => score_path(ts, vs, text, video, *path),
            Scorer::Dp => {
                let (tn, vn) = token::normalize_pair_batches(ts, vs)?;
                let g = tn.iter().map(text_global).collect::<Result<Vec<_>>>()?;
                let m: Vec<_> = vn.iter().map(TokenMatrix::valid_mean).collect();
                pairwise(ts.len(), vs.len(), |a, b| {
                    crate::numerics::cosine(&g[a], &m[b]).ok_or(Error::ZeroNormRow { row: 0, norm: 0.0 })
                })
            }
            Scorer::Hi { level_weights } => {
                single::validate_level_weights(level_weights)?;
                let (tn, vn) = token::normalize_pair_batches(ts, vs)?;
                let s = level_weights.len();
                let tl: Vec<_> = tn.iter().map(|t| single::segment_means(t, s)).collect();
                let vl: Vec<_> = vn.iter().map(|v| single::segment_means(v, s)).collect();
                pairwise(ts.len(), vs.len(), |a, b| {
                    let levels = tl[a].iter().cloned().zip(vl[b].iter().cloned()).collect();
                    score_hi(&HiLevels::new(levels, level_weights.clone())?)
                })
            }
            Scorer::Mlp(p) => {
                let (tn, vn) = token::normalize_pair_batches(ts, vs)?;
                let g = tn.iter().map(text_global).collect::<Result<Vec<_>>>()?;
                let m: Vec<_> = vn.iter().map(TokenMatrix::valid_mean).collect();
                pairwise(ts.len(), vs.len(), |a, b| score_mlp(&g[a], &m[b], p))
            }
            Scorer::Xti(p) => {
                token::normalize_pair_batches(ts, vs)?;
                pairwise(ts.len(), vs.len(), |a, b| score_xti(&ts[a], &vs[b], p))
            }
        }
    }

    /// The video weight head, for mechanisms that precompute video weights.
    pub fn video_head(&self) -> Option<&WeightHead> {
        match self {
            Scorer::Wti { video, .. } => Some(video),
            _ => None,
        }
    }
}

fn pairwise(bt: usize, bv: usize, mut f: impl FnMut(usize, usize) -> Result<f64>) -> Result<ScoreMatrix> {
    let mut scores = Matrix::zeros(bt, bv);
    for a in 0..bt {
        for b in 0..bv {
            scores[(a, b)] = f(a, b)?;
        }
    }
    Ok(ScoreMatrix::without_assignments(scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mechanism_names_round_trip() {
        for m in Mechanism::ALL {
            assert_eq!(m.name().parse::<Mechanism>().unwrap(), m);
        }
        assert!("colbert".parse::<Mechanism>().is_err());
    }

    #[test]
    fn built_scorers_report_their_mechanism() {
        let cfg = ScorerConfig::new(8);
        for m in Mechanism::ALL {
            assert_eq!(Scorer::build(m, &cfg, RngSeed(1)).unwrap().mechanism(), m);
        }
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = ScorerConfig::new(8);
        let a = Scorer::build(Mechanism::Xti, &cfg, RngSeed(5)).unwrap();
        let b = Scorer::build(Mechanism::Xti, &cfg, RngSeed(5)).unwrap();
        assert_eq!(a, b);
    }
}
