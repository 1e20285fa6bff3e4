//! Finite-difference verification of every analytic backward path: the
//! kernel ops, the projection, the full network graph, and all loss
//! formulations, over many random shapes and seeds.

mod common;

use common::{assert_grad_close, fd_matrix, random_matrix};
use fopkit::loss::{
    build_contrastive_pairs, ce_loss, center_loss, contrastive_loss, fop_joint, git_loss,
    mine_hard_negatives, oc_loss, triplet_loss, CenterBank, Triplet,
};
use fopkit::matrix::{Matrix, Parameter};
use fopkit::model::{self, FopConfig, FopParams, FusionKind, GradTaps};
use fopkit::ops;
use fopkit::rng::domain_rng;
use rand::Rng as _;

/// Scalar probe of a matrix-valued op: L = sum(G ⊙ f(x)).
fn probe(out: &Matrix, upstream: &Matrix) -> f64 {
    out.data()
        .iter()
        .zip(upstream.data())
        .map(|(a, b)| a * b)
        .sum()
}

#[test]
fn affine_backward_matches_fd_over_20_shapes() {
    let mut rng = domain_rng(1, "shapes");
    for seed in 0..20u64 {
        let b = rng.random_range(1..6);
        let i = rng.random_range(1..7);
        let o = rng.random_range(1..5);
        let x = random_matrix(b, i, 100 + seed);
        let w = Parameter::new("w", random_matrix(i, o, 200 + seed));
        let bias = Parameter::new("b", random_matrix(1, o, 300 + seed));
        let upstream = random_matrix(b, o, 400 + seed);

        let mut w2 = w.clone();
        let mut b2 = bias.clone();
        let dx = ops::affine_backward(&x, &mut w2, &mut b2, &upstream).unwrap();

        let nx = fd_matrix(&x, &mut |xp| {
            probe(&ops::affine(xp, &w, &bias).unwrap(), &upstream)
        });
        assert_grad_close(&dx, &nx, 1e-6, "affine dx");

        let nw = fd_matrix(&w.value, &mut |wp| {
            let wp = Parameter::new("w", wp.clone());
            probe(&ops::affine(&x, &wp, &bias).unwrap(), &upstream)
        });
        assert_grad_close(&w2.grad, &nw, 1e-6, "affine dw");

        let nb = fd_matrix(&bias.value, &mut |bp| {
            let bp = Parameter::new("b", bp.clone());
            probe(&ops::affine(&x, &w, &bp).unwrap(), &upstream)
        });
        assert_grad_close(&b2.grad, &nb, 1e-6, "affine db");
    }
}

#[test]
fn l2_normalize_backward_matches_fd() {
    // the documented 5x8 case at 1e-5, then 20 random shapes at 1e-4
    let x = random_matrix(5, 8, 11);
    let upstream = random_matrix(5, 8, 12);
    let dx = ops::l2_normalize_backward(&x, ops::L2_NORM_EPS, &upstream).unwrap();
    let nx = fd_matrix(&x, &mut |xp| {
        probe(&ops::l2_normalize(xp, ops::L2_NORM_EPS), &upstream)
    });
    assert_grad_close(&dx, &nx, 1e-5, "l2_normalize 5x8");

    let mut rng = domain_rng(2, "shapes");
    for seed in 0..20u64 {
        let b = rng.random_range(1..6);
        let d = rng.random_range(1..9);
        let x = random_matrix(b, d, 500 + seed);
        let upstream = random_matrix(b, d, 600 + seed);
        let dx = ops::l2_normalize_backward(&x, ops::L2_NORM_EPS, &upstream).unwrap();
        let nx = fd_matrix(&x, &mut |xp| {
            probe(&ops::l2_normalize(xp, ops::L2_NORM_EPS), &upstream)
        });
        assert_grad_close(&dx, &nx, 1e-4, "l2_normalize");
    }
}

#[test]
fn pointwise_backwards_match_fd() {
    for seed in 0..20u64 {
        let x = random_matrix(3, 4, 700 + seed);
        let y = random_matrix(3, 4, 800 + seed);
        let upstream = random_matrix(3, 4, 900 + seed);

        let s = ops::sigmoid(&x);
        let ds = ops::sigmoid_backward(&s, &upstream).unwrap();
        let ns = fd_matrix(&x, &mut |xp| probe(&ops::sigmoid(xp), &upstream));
        assert_grad_close(&ds, &ns, 1e-4, "sigmoid");

        let t = ops::tanh(&x);
        let dt = ops::tanh_backward(&t, &upstream).unwrap();
        let nt = fd_matrix(&x, &mut |xp| probe(&ops::tanh(xp), &upstream));
        assert_grad_close(&dt, &nt, 1e-4, "tanh");

        // hadamard: dL/dx = upstream ⊙ y
        let dh = ops::hadamard(&upstream, &y).unwrap();
        let nh = fd_matrix(&x, &mut |xp| probe(&ops::hadamard(xp, &y).unwrap(), &upstream));
        assert_grad_close(&dh, &nh, 1e-4, "hadamard");

        // concat: gradient splits back to the inputs
        let up2 = random_matrix(3, 8, 950 + seed);
        let (gl, _gr) = ops::split_cols(&up2, 4).unwrap();
        let nl = fd_matrix(&x, &mut |xp| probe(&ops::concat_cols(xp, &y).unwrap(), &up2));
        assert_grad_close(&gl, &nl, 1e-4, "concat left");
    }
}

#[test]
fn cosine_backward_matches_fd() {
    for seed in 0..20u64 {
        let a = random_matrix(1, 5, 1000 + seed);
        let b = random_matrix(1, 5, 1100 + seed);
        let mut da = vec![0.0; 5];
        let mut db = vec![0.0; 5];
        ops::cosine_sim_backward(a.row(0), b.row(0), 1.0, &mut da, &mut db);
        let na = fd_matrix(&a, &mut |ap| ops::cosine_sim(ap.row(0), b.row(0)).0);
        let nb = fd_matrix(&b, &mut |bp| ops::cosine_sim(a.row(0), bp.row(0)).0);
        let da = Matrix::from_vec(1, 5, da).unwrap();
        let db = Matrix::from_vec(1, 5, db).unwrap();
        assert_grad_close(&da, &na, 1e-4, "cosine da");
        assert_grad_close(&db, &nb, 1e-4, "cosine db");
    }
}

#[test]
fn softmax_ce_backward_matches_fd() {
    for seed in 0..20u64 {
        let logits = random_matrix(4, 5, 1200 + seed);
        let labels = [0usize, 2, 4, 1];
        let (_, grad) = ops::softmax_cross_entropy(&logits, &labels).unwrap();
        let numeric = fd_matrix(&logits, &mut |lp| {
            ops::softmax_cross_entropy(lp, &labels).unwrap().0
        });
        assert_grad_close(&grad, &numeric, 1e-4, "softmax ce");
    }
}

#[test]
fn project_gradient_matches_fd() {
    let cfg = FopConfig {
        face_dim: 5,
        voice_dim: 4,
        embed_dim: 3,
        num_identities: 2,
        fusion: FusionKind::Gated,
    };
    for seed in 0..5u64 {
        let params = FopParams::init(&cfg, 40 + seed).unwrap();
        let x = random_matrix(4, 5, 1300 + seed);
        let upstream = random_matrix(4, 3, 1400 + seed);

        let raw = ops::affine(&x, &params.face_w, &params.face_b).unwrap();
        let d_raw = ops::l2_normalize_backward(&raw, ops::L2_NORM_EPS, &upstream).unwrap();
        let mut w2 = params.face_w.clone();
        let mut b2 = params.face_b.clone();
        ops::affine_backward(&x, &mut w2, &mut b2, &d_raw).unwrap();

        let nw = fd_matrix(&params.face_w.value, &mut |wp| {
            let wp = Parameter::new("w", wp.clone());
            probe(
                &model::project(&x, &wp, &params.face_b).unwrap(),
                &upstream,
            )
        });
        assert_grad_close(&w2.grad, &nw, 1e-4, "project dw");
    }
}

// ── Full-graph checks: loss as a function of every parameter ────────────────

/// Loss kinds checked through the whole network. Pair and triplet index
/// lists are frozen from the unperturbed forward pass so the probed function
/// stays smooth under finite perturbation.
#[derive(Clone)]
enum GraphLoss {
    Ce,
    Oc,
    Joint(f64),
    Center(CenterBank),
    Git(CenterBank),
    Contrastive(Vec<(usize, usize, bool)>),
    Triplet(Vec<Triplet>),
}

impl GraphLoss {
    fn name(&self) -> &'static str {
        match self {
            GraphLoss::Ce => "ce",
            GraphLoss::Oc => "oc",
            GraphLoss::Joint(_) => "fop_joint",
            GraphLoss::Center(_) => "center",
            GraphLoss::Git(_) => "git",
            GraphLoss::Contrastive(_) => "contrastive",
            GraphLoss::Triplet(_) => "triplet",
        }
    }

    fn value(&self, cache: &model::ForwardCache, labels: &[usize]) -> f64 {
        match self {
            GraphLoss::Ce => ce_loss(&cache.logits, labels).unwrap().0.value,
            GraphLoss::Oc => oc_loss(&cache.fused, labels).unwrap().0.value,
            GraphLoss::Joint(alpha) => {
                fop_joint(&cache.logits, &cache.fused, labels, *alpha)
                    .unwrap()
                    .0
                    .value
            }
            GraphLoss::Center(bank) => center_loss(&cache.fused, labels, bank).unwrap().0.value,
            GraphLoss::Git(bank) => git_loss(&cache.fused, labels, bank).unwrap().0.value,
            GraphLoss::Contrastive(pairs) => {
                let u_idx: Vec<usize> = pairs.iter().map(|p| p.0).collect();
                let v_idx: Vec<usize> = pairs.iter().map(|p| p.1).collect();
                let flags: Vec<bool> = pairs.iter().map(|p| p.2).collect();
                contrastive_loss(
                    &cache.u.gather_rows(&u_idx),
                    &cache.v.gather_rows(&v_idx),
                    &flags,
                    0.6,
                )
                .unwrap()
                .0
                .value
            }
            GraphLoss::Triplet(triplets) => {
                let a: Vec<usize> = triplets.iter().map(|t| t.anchor).collect();
                let p: Vec<usize> = triplets.iter().map(|t| t.positive).collect();
                let n: Vec<usize> = triplets.iter().map(|t| t.negative).collect();
                triplet_loss(
                    &cache.v.gather_rows(&a),
                    &cache.u.gather_rows(&p),
                    &cache.u.gather_rows(&n),
                    0.6,
                )
                .unwrap()
                .0
                .value
            }
        }
    }

    fn taps(&self, cache: &model::ForwardCache, labels: &[usize]) -> GradTaps {
        let mut taps = GradTaps::default();
        match self {
            GraphLoss::Ce => {
                taps.logits = Some(ce_loss(&cache.logits, labels).unwrap().1);
            }
            GraphLoss::Oc => {
                taps.fused = Some(oc_loss(&cache.fused, labels).unwrap().1);
            }
            GraphLoss::Joint(alpha) => {
                let (_, d_logits, d_fused) =
                    fop_joint(&cache.logits, &cache.fused, labels, *alpha).unwrap();
                taps.logits = Some(d_logits);
                taps.fused = d_fused;
            }
            GraphLoss::Center(bank) => {
                taps.fused = Some(center_loss(&cache.fused, labels, bank).unwrap().1);
            }
            GraphLoss::Git(bank) => {
                taps.fused = Some(git_loss(&cache.fused, labels, bank).unwrap().1);
            }
            GraphLoss::Contrastive(pairs) => {
                let u_idx: Vec<usize> = pairs.iter().map(|p| p.0).collect();
                let v_idx: Vec<usize> = pairs.iter().map(|p| p.1).collect();
                let flags: Vec<bool> = pairs.iter().map(|p| p.2).collect();
                let (_, du_p, dv_p) = contrastive_loss(
                    &cache.u.gather_rows(&u_idx),
                    &cache.v.gather_rows(&v_idx),
                    &flags,
                    0.6,
                )
                .unwrap();
                let mut du = Matrix::zeros(cache.u.rows(), cache.u.cols());
                let mut dv = Matrix::zeros(cache.v.rows(), cache.v.cols());
                for (row, &(ui, vi, _)) in pairs.iter().enumerate() {
                    for k in 0..du.cols() {
                        du.set(ui, k, du.get(ui, k) + du_p.get(row, k));
                        dv.set(vi, k, dv.get(vi, k) + dv_p.get(row, k));
                    }
                }
                taps.u = Some(du);
                taps.v = Some(dv);
            }
            GraphLoss::Triplet(triplets) => {
                let a: Vec<usize> = triplets.iter().map(|t| t.anchor).collect();
                let p: Vec<usize> = triplets.iter().map(|t| t.positive).collect();
                let n: Vec<usize> = triplets.iter().map(|t| t.negative).collect();
                let (_, da, dp, dn) = triplet_loss(
                    &cache.v.gather_rows(&a),
                    &cache.u.gather_rows(&p),
                    &cache.u.gather_rows(&n),
                    0.6,
                )
                .unwrap();
                let mut du = Matrix::zeros(cache.u.rows(), cache.u.cols());
                let mut dv = Matrix::zeros(cache.v.rows(), cache.v.cols());
                for (row, t) in triplets.iter().enumerate() {
                    for k in 0..du.cols() {
                        dv.set(t.anchor, k, dv.get(t.anchor, k) + da.get(row, k));
                        du.set(t.positive, k, du.get(t.positive, k) + dp.get(row, k));
                        du.set(t.negative, k, du.get(t.negative, k) + dn.get(row, k));
                    }
                }
                taps.u = Some(du);
                taps.v = Some(dv);
            }
        }
        taps
    }
}

#[test]
fn full_graph_gradients_every_loss_ten_configs() {
    let cfg = FopConfig {
        face_dim: 8,
        voice_dim: 6,
        embed_dim: 4,
        num_identities: 3,
        fusion: FusionKind::Gated,
    };
    let labels = [0usize, 1, 2, 0, 1, 2];

    for config_seed in 0..10u64 {
        let params = FopParams::init(&cfg, 1000 + config_seed).unwrap();
        let face = random_matrix(6, 8, 2000 + config_seed);
        let voice = random_matrix(6, 6, 3000 + config_seed);
        let cache = model::forward(&face, &voice, &params, &cfg).unwrap();

        let mut bank = CenterBank::new(3, 4);
        bank.centers = random_matrix(3, 4, 4000 + config_seed);
        let mut pair_rng = domain_rng(5000 + config_seed, "pairs");
        let pairs = build_contrastive_pairs(&labels, &mut pair_rng);
        let (triplets, _, none) = mine_hard_negatives(&cache.u, &cache.v, &labels).unwrap();
        assert!(!none);

        let losses = [
            GraphLoss::Ce,
            GraphLoss::Oc,
            GraphLoss::Joint(1.0),
            GraphLoss::Center(bank.clone()),
            GraphLoss::Git(bank),
            GraphLoss::Contrastive(pairs),
            GraphLoss::Triplet(triplets),
        ];

        for loss in losses {
            let mut params_mut = params.clone();
            params_mut.zero_grads();
            let taps = loss.taps(&cache, &labels);
            model::backward(&cache, &mut params_mut, &taps).unwrap();

            // numeric gradient of the loss wrt every parameter matrix
            for which in 0..7 {
                let analytic = params_mut.params()[which].grad.clone();
                let base_value = params.params()[which].value.clone();
                let numeric = fd_matrix(&base_value, &mut |perturbed| {
                    let mut p2 = params.clone();
                    p2.params_mut()[which].value = perturbed.clone();
                    let c = model::forward(&face, &voice, &p2, &cfg).unwrap();
                    loss.value(&c, &labels)
                });
                assert_grad_close(
                    &analytic,
                    &numeric,
                    1e-4,
                    &format!("{} / param {}", loss.name(), params.params()[which].name),
                );
            }
        }
    }
}

#[test]
fn full_graph_gradients_linear_fusion() {
    let cfg = FopConfig {
        face_dim: 8,
        voice_dim: 6,
        embed_dim: 4,
        num_identities: 3,
        fusion: FusionKind::Linear,
    };
    let labels = [0usize, 1, 2, 0, 1, 2];
    for config_seed in 0..3u64 {
        let params = FopParams::init(&cfg, 6000 + config_seed).unwrap();
        let face = random_matrix(6, 8, 7000 + config_seed);
        let voice = random_matrix(6, 6, 8000 + config_seed);
        let cache = model::forward(&face, &voice, &params, &cfg).unwrap();
        let loss = GraphLoss::Joint(1.0);
        let mut params_mut = params.clone();
        params_mut.zero_grads();
        let taps = loss.taps(&cache, &labels);
        model::backward(&cache, &mut params_mut, &taps).unwrap();
        for which in [0usize, 1, 2, 3, 6] {
            // attention parameters are unused under linear fusion
            let analytic = params_mut.params()[which].grad.clone();
            let base_value = params.params()[which].value.clone();
            let numeric = fd_matrix(&base_value, &mut |perturbed| {
                let mut p2 = params.clone();
                p2.params_mut()[which].value = perturbed.clone();
                let c = model::forward(&face, &voice, &p2, &cfg).unwrap();
                loss.value(&c, &labels)
            });
            assert_grad_close(
                &analytic,
                &numeric,
                1e-4,
                &format!("linear fusion / param {}", params.params()[which].name),
            );
        }
    }
}
