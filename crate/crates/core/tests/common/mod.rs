//! Random instances and naive-loop reference implementations shared by the
//! integration tests.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tvr_core::interaction::{Dense, HeadInit, WeightHead, XtiParams};
use tvr_core::numerics::{dot, l2_normalize_rows, Matrix, Modality, RngSeed, TokenMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    RngSeed(seed).rng()
}

/// Random sequence with at least one valid row; every row has norm well
/// away from zero.
pub fn random_tokens(rng: &mut ChaCha8Rng, id: u32, n: usize, d: usize, modality: Modality) -> TokenMatrix {
    let mut tokens = Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    for i in 0..n {
        if tokens.row(i).iter().map(|x| x * x).sum::<f64>() < 0.05 {
            tokens.row_mut(i)[0] += 1.0;
        }
    }
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.75)).collect();
    if !mask.contains(&true) {
        let k = rng.random_range(0..n);
        mask[k] = true;
    }
    TokenMatrix::new(id, tokens, mask, modality).unwrap()
}

pub fn dense_tokens(rng: &mut ChaCha8Rng, id: u32, n: usize, d: usize, modality: Modality) -> TokenMatrix {
    let t = random_tokens(rng, id, n, d, modality);
    let (id, tokens, _, m) = t.into_parts();
    TokenMatrix::new(id, tokens, vec![true; n], m).unwrap()
}

/// A batch of `b` text and `b` video items with sizes drawn per item.
pub struct Instance {
    pub d: usize,
    pub ts: Vec<TokenMatrix>,
    pub vs: Vec<TokenMatrix>,
}

pub fn random_instance(seed: u64, max_b: usize, max_n: usize, max_d: usize) -> Instance {
    let mut r = rng(seed);
    let d = r.random_range(2..=max_d);
    let bt = r.random_range(1..=max_b);
    let bv = r.random_range(1..=max_b);
    let ts = (0..bt)
        .map(|i| {
            let n = r.random_range(1..=max_n);
            random_tokens(&mut r, i as u32, n, d, Modality::Text)
        })
        .collect();
    let vs = (0..bv)
        .map(|i| {
            let n = r.random_range(1..=max_n);
            random_tokens(&mut r, i as u32, n, d, Modality::Video)
        })
        .collect();
    Instance { d, ts, vs }
}

pub fn random_head(rng: &mut ChaCha8Rng, side: Modality, d: usize, hidden: usize) -> WeightHead {
    WeightHead::init(side, d, hidden, 2, HeadInit::Uniform, rng)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Within `tol` relative error, or `tol` absolute error near zero.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub const MIN_GAP: f64 = 1e-6;
pub const KINK_MARGIN: f64 = 1e-3;

/// Smallest gap between the best and second-best similarity of any valid
/// token, over every pair in the batch.
pub fn min_argmax_gap(ts: &[TokenMatrix], vs: &[TokenMatrix]) -> f64 {
    let mut gap = f64::INFINITY;
    for t in ts {
        let tn = l2_normalize_rows(t).unwrap();
        for v in vs {
            let vn = l2_normalize_rows(v).unwrap();
            let sims = |a: &TokenMatrix, b: &TokenMatrix, i: usize| -> Vec<f64> {
                b.valid_indices().map(|j| dot(a.row(i), b.row(j))).collect()
            };
            for (a, b) in [(&tn, &vn), (&vn, &tn)] {
                for i in a.valid_indices() {
                    let mut s = sims(a, b, i);
                    if s.len() < 2 {
                        continue;
                    }
                    s.sort_by(|x, y| y.total_cmp(x));
                    gap = gap.min(s[0] - s[1]);
                }
            }
        }
    }
    gap
}

/// Distance of the closest hidden pre-activation to the rectifier kink.
pub fn min_kink_distance(head: &WeightHead, items: &[TokenMatrix]) -> f64 {
    let mut best = f64::INFINITY;
    for m in items {
        let mn = l2_normalize_rows(m).unwrap();
        for i in mn.valid_indices() {
            let mut h = mn.row(i).to_vec();
            for (li, l) in head.layers.iter().enumerate() {
                let pre = l.forward(&h);
                if li + 1 < head.layers.len() {
                    best = pre.iter().fold(best, |b, x| b.min(x.abs()));
                }
                h = pre.iter().map(|x| x.max(0.0)).collect();
            }
        }
    }
    best
}

pub struct Case {
    pub ts: Vec<TokenMatrix>,
    pub vs: Vec<TokenMatrix>,
    pub tw: WeightHead,
    pub vw: WeightHead,
}

/// Draws instances from `seed` onward until one has no argmax ties and no
/// hidden unit sitting on its kink.
pub fn clean_case(mut seed: u64) -> Case {
    loop {
        let mut r = rng(seed);
        let b = r.random_range(2..=4);
        let d = r.random_range(2..=8);
        let ts: Vec<_> = (0..b)
            .map(|i| {
                let n = r.random_range(1..=5);
                random_tokens(&mut r, i as u32, n, d, Modality::Text)
            })
            .collect();
        let vs: Vec<_> = (0..b)
            .map(|i| {
                let n = r.random_range(1..=5);
                random_tokens(&mut r, i as u32, n, d, Modality::Video)
            })
            .collect();
        let tw = random_head(&mut r, Modality::Text, d, 4);
        let vw = random_head(&mut r, Modality::Video, d, 4);
        if min_argmax_gap(&ts, &vs) > MIN_GAP
            && min_kink_distance(&tw, &ts) > KINK_MARGIN
            && min_kink_distance(&vw, &vs) > KINK_MARGIN
        {
            return Case { ts, vs, tw, vw };
        }
        seed += 1_000_003;
    }
}

// ---- reference implementations ----

fn unit(x: &[f64]) -> Vec<f64> {
    let mut s = 0.0;
    for v in x {
        s += v * v;
    }
    let n = s.sqrt();
    x.iter().map(|v| v / n).collect()
}

fn valid_rows(t: &TokenMatrix) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..t.len() {
        if t.mask()[i] {
            out.push(unit(t.row(i)));
        }
    }
    out
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    inner(a, b) / (inner(a, a).sqrt() * inner(b, b).sqrt())
}

fn mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            m[k] += r[k];
        }
    }
    for v in m.iter_mut() {
        *v /= rows.len() as f64;
    }
    m
}

pub fn oracle_dp(t: &TokenMatrix, v: &TokenMatrix) -> f64 {
    let g = valid_rows(t)[0].clone();
    cos(&g, &mean(&valid_rows(v)))
}

/// Valid rows split into `s` contiguous runs of near-equal length; a run
/// that would be empty takes the single row at its start (clamped).
fn segments(rows: &[Vec<f64>], s: usize) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut out = Vec::new();
    for k in 0..s {
        let lo = (k * n / s).min(n - 1);
        let hi = ((k + 1) * n / s).max(lo + 1);
        out.push(mean(&rows[lo..hi]));
    }
    out
}

pub fn oracle_hi(t: &TokenMatrix, v: &TokenMatrix, level_weights: &[f64]) -> f64 {
    let s = level_weights.len();
    let a = segments(&valid_rows(t), s);
    let b = segments(&valid_rows(v), s);
    let mut total = 0.0;
    for k in 0..s {
        total += level_weights[k] * cos(&a[k], &b[k]);
    }
    total
}

fn mlp_forward(layers: &[Dense], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (li, l) in layers.iter().enumerate() {
        let mut next = vec![0.0; l.outputs()];
        for o in 0..l.outputs() {
            let mut acc = l.bias[o];
            for i in 0..l.inputs() {
                acc += l.weight[(o, i)] * h[i];
            }
            next[o] = if li + 1 < layers.len() { acc.max(0.0) } else { acc };
        }
        h = next;
    }
    h
}

pub fn oracle_mlp(t: &TokenMatrix, v: &TokenMatrix, layers: &[Dense]) -> f64 {
    let mut x = valid_rows(t)[0].clone();
    x.extend(mean(&valid_rows(v)));
    mlp_forward(layers, &x)[0]
}

/// Attention over the full padded sequence with masked keys set to `-inf`
/// and masked rows excluded from the pooled mean.
pub fn oracle_xti(t: &TokenMatrix, v: &TokenMatrix, p: &XtiParams) -> f64 {
    let d = p.dim();
    let heads = p.heads();
    let dh = d / heads;
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut mask = Vec::new();
    for m in [t, v] {
        for i in 0..m.len() {
            xs.push(unit(m.row(i)));
            mask.push(m.mask()[i]);
        }
    }
    let n = xs.len();
    let apply = |w: &Matrix, x: &[f64]| -> Vec<f64> { (0..d).map(|r| inner(w.row(r), x)).collect() };
    for b in p.blocks() {
        let q: Vec<_> = xs.iter().map(|x| apply(&b.query, x)).collect();
        let k: Vec<_> = xs.iter().map(|x| apply(&b.key, x)).collect();
        let vv: Vec<_> = xs.iter().map(|x| apply(&b.value, x)).collect();
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let mut cat = vec![0.0; d];
            for h in 0..heads {
                let mut logits = vec![f64::NEG_INFINITY; n];
                for j in 0..n {
                    if mask[j] {
                        let mut s = 0.0;
                        for c in h * dh..(h + 1) * dh {
                            s += q[i][c] * k[j][c];
                        }
                        logits[j] = s / (dh as f64).sqrt();
                    }
                }
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
                for j in 0..n {
                    let a = (logits[j] - mx).exp() / z;
                    for c in h * dh..(h + 1) * dh {
                        cat[c] += a * vv[j][c];
                    }
                }
            }
            next.push(apply(&b.output, &cat));
        }
        xs = next;
    }
    let mut pooled = vec![0.0; d];
    let mut count = 0.0;
    for i in 0..n {
        if mask[i] {
            count += 1.0;
            for c in 0..d {
                pooled[c] += xs[i][c];
            }
        }
    }
    let mut s = p.score_bias();
    for c in 0..d {
        s += pooled[c] / count * p.score_weight()[c];
    }
    s
}

fn maxima(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    a.iter()
        .map(|x| b.iter().map(|y| inner(x, y)).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// `(t2v, v2t)` with the given per-valid-token weights.
fn directions(t: &TokenMatrix, v: &TokenMatrix, wt: &[f64], wv: &[f64]) -> (f64, f64) {
    let (a, b) = (valid_rows(t), valid_rows(v));
    let (mt, mv) = (maxima(&a, &b), maxima(&b, &a));
    let t2v: f64 = mt.iter().zip(wt).map(|(m, w)| m * w).sum();
    let v2t: f64 = mv.iter().zip(wv).map(|(m, w)| m * w).sum();
    (t2v, v2t)
}

pub fn oracle_ti_mean(t: &TokenMatrix, v: &TokenMatrix) -> f64 {
    let (nt, nv) = (t.valid_count(), v.valid_count());
    let (a, b) = directions(t, v, &vec![1.0 / nt as f64; nt], &vec![1.0 / nv as f64; nv]);
    (a + b) / 2.0
}

pub fn oracle_ti_sum(t: &TokenMatrix, v: &TokenMatrix) -> f64 {
    let (a, b) = directions(t, v, &vec![1.0; t.valid_count()], &vec![1.0; v.valid_count()]);
    (a + b) / 2.0
}

/// Softmax of head logits over the valid (unit-normalized) rows.
pub fn oracle_weights(m: &TokenMatrix, head: &WeightHead) -> Vec<f64> {
    let logits: Vec<f64> = valid_rows(m).iter().map(|r| mlp_forward(&head.layers, r)[0]).collect();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

pub fn oracle_wti(t: &TokenMatrix, v: &TokenMatrix, th: &WeightHead, vh: &WeightHead) -> f64 {
    let (a, b) = directions(t, v, &oracle_weights(t, th), &oracle_weights(v, vh));
    (a + b) / 2.0
}

/// Symmetric InfoNCE over a square score matrix, summed term by term.
pub fn oracle_info_nce(s: &[Vec<f64>], scale: f64) -> f64 {
    let b = s.len();
    let mut total = 0.0;
    for i in 0..b {
        let mut row = 0.0;
        let mut col = 0.0;
        for j in 0..b {
            row += (scale * s[i][j]).exp();
            col += (scale * s[j][i]).exp();
        }
        total += -(scale * s[i][i] - row.ln()) - (scale * s[i][i] - col.ln());
    }
    total / b as f64
}

/// Penalty of a given cross-correlation matrix by double loop.
pub fn oracle_penalty(c: &[Vec<f64>], alpha: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..c.len() {
        for j in 0..c.len() {
            s += if i == j { (1.0 - c[i][j]).powi(2) } else { alpha * c[i][j].powi(2) };
        }
    }
    s
}

/// Cross-correlation of column-standardized (population std) features.
pub fn oracle_correlation(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len() as f64;
    let d = a[0].len();
    let stats = |x: &[Vec<f64>], c: usize| {
        let m = x.iter().map(|r| r[c]).sum::<f64>() / n;
        let v = x.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / n;
        (m, v.sqrt())
    };
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        let (ma, sa) = stats(a, i);
        for j in 0..d {
            let (mb, sb) = stats(b, j);
            let mut acc = 0.0;
            for r in 0..a.len() {
                acc += (a[r][i] - ma) / sa * (b[r][j] - mb) / sb;
            }
            out[i][j] = acc / n;
        }
    }
    out
}
