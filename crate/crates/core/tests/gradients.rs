mod common;

use common::*;
use rand::Rng;
use tvr_core::interaction::{Dense, ScoreMatrix, WeightHead};
use tvr_core::losses::{
    cdcr, cdcr_single, fd_check, grad_wti_heads, info_nce, CdcrMode, CorrelationMatrix, LossConfig, WtiModel,
};
use tvr_core::numerics::Matrix;

const FD_STEP: f64 = 1e-4;

fn flat_heads(tw: &WeightHead, vw: &WeightHead) -> Vec<f64> {
    let mut p = tw.flatten();
    p.extend(vw.flatten());
    p
}

fn flat_grads(t: &[Dense], v: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in t.iter().chain(v) {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}

fn head_fd_error(c: &Case, cfg: &LossConfig) -> f64 {
    let (_, g) = grad_wti_heads(&c.ts, &c.vs, &c.tw, &c.vw, cfg).unwrap();
    let params = flat_heads(&c.tw, &c.vw);
    let split = c.tw.param_count();
    let report = fd_check(
        |p| {
            let (mut tw, mut vw) = (c.tw.clone(), c.vw.clone());
            tw.assign_flat(&p[..split]);
            vw.assign_flat(&p[split..]);
            WtiModel::new(tw, vw).loss(&c.ts, &c.vs, cfg).unwrap().total
        },
        &params,
        &flat_grads(&g.text, &g.video),
        FD_STEP,
    );
    report.max_rel_error
}

#[test]
fn head_gradients_match_central_differences() {
    for i in 0..20 {
        let c = clean_case(i);
        let e = head_fd_error(&c, &LossConfig::default());
        assert!(e < 1e-4, "instance {i}: max relative error {e}");
    }
}

#[test]
fn head_gradients_at_unit_scale_and_every_mode() {
    for mode in [CdcrMode::None, CdcrMode::Single, CdcrMode::Sequential] {
        for i in 0..5 {
            let cfg = LossConfig { logit_scale: 1.0, cdcr_mode: mode, lambda: 0.5, ..Default::default() };
            let e = head_fd_error(&clean_case(100 + i), &cfg);
            assert!(e < 1e-4, "{mode:?} instance {i}: {e}");
        }
    }
}

#[test]
fn adapter_gradients_match_central_differences() {
    for mode in [CdcrMode::None, CdcrMode::Single, CdcrMode::Sequential] {
        for i in 0..4 {
            let c = clean_case(200 + i);
            let mut m = WtiModel::new(c.tw.clone(), c.vw.clone()).with_identity_adapters();
            let mut r = rng(300 + i);
            for a in [&mut m.text_adapter, &mut m.video_adapter].into_iter().flatten() {
                a.as_mut_slice().iter_mut().for_each(|x| *x += r.random_range(-0.1..0.1));
            }
            let cfg = LossConfig { logit_scale: 5.0, cdcr_mode: mode, lambda: 0.1, ..Default::default() };
            let (_, g) = m.loss_and_grad(&c.ts, &c.vs, &cfg).unwrap();
            let report = fd_check(
                |p| {
                    let mut q = m.clone();
                    q.assign_flat(p);
                    q.loss(&c.ts, &c.vs, &cfg).unwrap().total
                },
                &m.flatten(),
                &g.flatten(),
                1e-5,
            );
            assert!(report.max_rel_error < 1e-4, "{mode:?} instance {i}: {}", report.max_rel_error);
        }
    }
}

#[test]
fn info_nce_matches_term_by_term_oracle() {
    for seed in 0..30 {
        let mut r = rng(seed);
        let b = r.random_range(2..=6);
        let rows: Vec<Vec<f64>> = (0..b).map(|_| (0..b).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let scale = [1.0, 10.0, 100.0][seed as usize % 3];
        let s = ScoreMatrix::without_assignments(Matrix::from_rows(&rows).unwrap());
        let got = info_nce(&s, &LossConfig { logit_scale: scale, ..Default::default() }).unwrap();
        let want = oracle_info_nce(&rows, scale);
        assert!(close(got, want, 1e-10), "{got} vs {want}");
    }
}

#[test]
fn all_equal_scores_give_two_log_b() {
    for b in 2..7 {
        let s = ScoreMatrix::without_assignments(Matrix::from_fn(b, b, |_, _| 0.3));
        let got = info_nce(&s, &LossConfig::default()).unwrap();
        assert!((got - 2.0 * (b as f64).ln()).abs() < 1e-9);
    }
}

#[test]
fn correlation_matches_double_loop() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let (n, d) = (r.random_range(3..10), r.random_range(1..6));
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let b: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let c = CorrelationMatrix::from_features(&Matrix::from_rows(&a).unwrap(), &Matrix::from_rows(&b).unwrap())
            .unwrap();
        let o = oracle_correlation(&a, &b);
        for i in 0..d {
            for j in 0..d {
                assert!((c.c[(i, j)] - o[i][j]).abs() < 1e-12);
            }
        }
        for alpha in [0.0, 0.06, 1.0] {
            assert!((c.penalty(alpha) - oracle_penalty(&o, alpha)).abs() < 1e-10);
        }
    }
}

#[test]
fn penalty_closed_forms() {
    let id = CorrelationMatrix { c: Matrix::identity(5) };
    assert!(id.penalty(0.06).abs() < 1e-12);
    let c = CorrelationMatrix { c: Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]).unwrap() };
    assert!((c.penalty(0.06) - 0.12).abs() < 1e-9);
    assert!((oracle_penalty(&[vec![1.0, -1.0], vec![-1.0, 1.0]], 0.06) - 0.12).abs() < 1e-9);
}

#[test]
fn perfectly_correlated_features_have_zero_single_penalty() {
    let e = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]).unwrap();
    assert!(cdcr_single(&e, &e, &LossConfig::default()).unwrap().abs() < 1e-12);
}

#[test]
fn regularizer_is_zero_when_disabled() {
    let c = clean_case(7);
    let s = tvr_core::interaction::score_wti_batch(&c.ts, &c.vs, &c.tw, &c.vw).unwrap();
    let a = s.diagonal_assignments().unwrap();
    let cfg = LossConfig { cdcr_mode: CdcrMode::None, ..Default::default() };
    assert_eq!(cdcr(&c.ts, &c.vs, &a, &cfg).unwrap(), 0.0);
}
