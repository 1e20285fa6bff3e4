//! Training-complexity benchmark: one instrumented epoch per loss kind over
//! the same data, reporting wall seconds and the exact pair/triplet term
//! counters.
//!
//! The in-batch losses (ce, fop_joint, center, git) run a standard training
//! epoch. Contrastive runs in its classic all-pairs regime: every unordered
//! instance pair is constructed once per epoch and consumed in pair-batches.
//! Triplet runs with exhaustive in-batch mining over identity-grouped
//! batches, the composition that makes the candidate scan worst-case cubic
//! in the batch size.

use std::time::Instant;

use crate::error::Result;
use crate::loss::{
    contrastive_loss, count_work, mine_hard_negatives, triplet_loss, LossConfig, LossKind,
};
use crate::matrix::Matrix;
use crate::model::{FopConfig, FopParams};
use crate::ops;
use crate::train::{adam_step, fit, AdamState, TrainConfig, TrainData};

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub kind: LossKind,
    pub seconds: f64,
    /// Terms actually evaluated by the instrumented epoch.
    pub measured: u64,
    /// count_work prediction (exact for ce/fop_joint/contrastive, worst case
    /// for the label-dependent kinds).
    pub predicted: u64,
}

/// Unordered instance pairs (i < j) with genuine = same identity; the
/// all-pairs set the classic contrastive regime trains on.
pub fn all_pairs(labels: &[usize]) -> Vec<(usize, usize, bool)> {
    let n = labels.len();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push((i, j, labels[i] == labels[j]));
        }
    }
    pairs
}

/// Batches grouped by identity: instances sorted by label, then chunked.
/// Balanced identity groups make every batch hold few identities with many
/// members each, the exhaustive-mining worst case.
pub fn identity_grouped_batches(labels: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&i| (labels[i], i));
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// One contrastive epoch over the all-pairs set, consumed in pair-batches of
/// `batch_size`; returns the pair-term counter (exactly n(n-1)/2).
fn contrastive_all_pairs_epoch(
    data: &TrainData,
    params: &mut FopParams,
    adam: &mut AdamState,
    lr: f64,
    margin: f64,
    batch_size: usize,
) -> Result<u64> {
    let pairs = all_pairs(&data.labels);
    let mut counter = 0u64;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let face_idx: Vec<usize> = chunk.iter().map(|p| p.0).collect();
        let voice_idx: Vec<usize> = chunk.iter().map(|p| p.1).collect();
        let flags: Vec<bool> = chunk.iter().map(|p| p.2).collect();
        let face = data.face.gather_rows(&face_idx);
        let voice = data.voice.gather_rows(&voice_idx);

        let u_raw = ops::affine(&face, &params.face_w, &params.face_b)?;
        let v_raw = ops::affine(&voice, &params.voice_w, &params.voice_b)?;
        let u = ops::l2_normalize(&u_raw, ops::L2_NORM_EPS);
        let v = ops::l2_normalize(&v_raw, ops::L2_NORM_EPS);

        let (out, du, dv) = contrastive_loss(&u, &v, &flags, margin)?;
        counter += out.work;

        params.zero_grads();
        let du_raw = ops::l2_normalize_backward(&u_raw, ops::L2_NORM_EPS, &du)?;
        let dv_raw = ops::l2_normalize_backward(&v_raw, ops::L2_NORM_EPS, &dv)?;
        ops::affine_backward(&face, &mut params.face_w, &mut params.face_b, &du_raw)?;
        ops::affine_backward(&voice, &mut params.voice_w, &mut params.voice_b, &dv_raw)?;
        adam_step(params, adam, lr)?;
    }
    Ok(counter)
}

/// One triplet epoch with exhaustive in-batch mining over identity-grouped
/// batches; returns the candidate-scan counter.
fn triplet_exhaustive_epoch(
    data: &TrainData,
    params: &mut FopParams,
    adam: &mut AdamState,
    lr: f64,
    margin: f64,
    batch_size: usize,
) -> Result<u64> {
    let batches = identity_grouped_batches(&data.labels, batch_size);
    let mut counter = 0u64;
    for idx in &batches {
        let face = data.face.gather_rows(idx);
        let voice = data.voice.gather_rows(idx);
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();

        let u_raw = ops::affine(&face, &params.face_w, &params.face_b)?;
        let v_raw = ops::affine(&voice, &params.voice_w, &params.voice_b)?;
        let u = ops::l2_normalize(&u_raw, ops::L2_NORM_EPS);
        let v = ops::l2_normalize(&v_raw, ops::L2_NORM_EPS);

        let (triplets, candidates, none) = mine_hard_negatives(&u, &v, &labels)?;
        counter += candidates;
        if none {
            continue;
        }
        let a_idx: Vec<usize> = triplets.iter().map(|t| t.anchor).collect();
        let p_idx: Vec<usize> = triplets.iter().map(|t| t.positive).collect();
        let n_idx: Vec<usize> = triplets.iter().map(|t| t.negative).collect();
        let (_, da, dp, dn) = triplet_loss(
            &v.gather_rows(&a_idx),
            &u.gather_rows(&p_idx),
            &u.gather_rows(&n_idx),
            margin,
        )?;
        let mut du = Matrix::zeros(u.rows(), u.cols());
        let mut dv = Matrix::zeros(v.rows(), v.cols());
        for (row, t) in triplets.iter().enumerate() {
            for k in 0..du.cols() {
                dv.set(t.anchor, k, dv.get(t.anchor, k) + da.get(row, k));
                du.set(t.positive, k, du.get(t.positive, k) + dp.get(row, k));
                du.set(t.negative, k, du.get(t.negative, k) + dn.get(row, k));
            }
        }
        params.zero_grads();
        let du_raw = ops::l2_normalize_backward(&u_raw, ops::L2_NORM_EPS, &du)?;
        let dv_raw = ops::l2_normalize_backward(&v_raw, ops::L2_NORM_EPS, &dv)?;
        ops::affine_backward(&face, &mut params.face_w, &mut params.face_b, &du_raw)?;
        ops::affine_backward(&voice, &mut params.voice_w, &mut params.voice_b, &dv_raw)?;
        adam_step(params, adam, lr)?;
    }
    Ok(counter)
}

/// Run one instrumented epoch for a single loss kind.
pub fn bench_one(
    data: &TrainData,
    model_cfg: &FopConfig,
    kind: LossKind,
    batch_size: usize,
    seed: u64,
) -> Result<BenchRow> {
    let predicted = count_work(kind, batch_size, data.len())?;
    let tcfg = TrainConfig {
        epochs: 1,
        batch_size,
        lr0: 1e-4,
        seed,
        loss: LossConfig {
            kind,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut params = FopParams::init(model_cfg, seed)?;
    let start = Instant::now();
    let measured = match kind {
        LossKind::Contrastive => {
            let mut adam = AdamState::new(&params, &tcfg);
            contrastive_all_pairs_epoch(data, &mut params, &mut adam, tcfg.lr0, tcfg.loss.margin, batch_size)?
        }
        LossKind::Triplet => {
            let mut adam = AdamState::new(&params, &tcfg);
            triplet_exhaustive_epoch(data, &mut params, &mut adam, tcfg.lr0, tcfg.loss.margin, batch_size)?
        }
        _ => fit(data, None, &tcfg, model_cfg, &mut params)?.work,
    };
    Ok(BenchRow {
        kind,
        seconds: start.elapsed().as_secs_f64(),
        measured,
        predicted,
    })
}

/// Benchmark every loss kind over the same data.
pub fn bench_losses(
    data: &TrainData,
    model_cfg: &FopConfig,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    [
        LossKind::CeOnly,
        LossKind::FopJoint,
        LossKind::Center,
        LossKind::Git,
        LossKind::Contrastive,
        LossKind::Triplet,
    ]
    .into_iter()
    .map(|kind| bench_one(data, model_cfg, kind, batch_size, seed))
    .collect()
}
