//! Mini-batch training: Adam with exponentially decaying learning rate,
//! seeded shuffling, per-epoch diagnostics, and optional best-on-validation
//! checkpointing.
//!
//! Only the fusion module's parameters train; the input feature matrices are
//! never modified. One call to [`fit`] owns the parameters exclusively;
//! everything it records is a pure function of (seed, config, data).

use std::time::Instant;

use rand::seq::SliceRandom as _;

use crate::error::{Error, Result};
use crate::loss::{
    self, build_contrastive_pairs, ce_loss, center_loss, contrastive_loss, fop_joint, git_loss,
    mine_hard_negatives, triplet_loss, CenterBank, LossConfig, LossKind,
};
use crate::matrix::Matrix;
use crate::model::{self, FopConfig, FopParams, GradTaps};
use crate::ops;
use crate::rng::domain_rng;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate.
    pub lr0: f64,
    /// Per-epoch exponential decay factor in (0, 1].
    pub lr_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Track the best parameters on validation loss (off by default; the
    /// reference schedule trains a fixed number of epochs).
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 128,
            lr0: 1e-5,
            lr_decay: 0.95,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            loss: LossConfig::default(),
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.batch_size < 2 && self.loss.kind.needs_pairs() {
            return Err(Error::Config(format!(
                "batch_size must be >= 2 for {} loss",
                self.loss.kind.as_str()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.lr0 <= 0.0 || !self.lr0.is_finite() {
            return Err(Error::Config(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        self.loss.validate()
    }
}

/// Learning rate for a (zero-based) epoch: lr0 * decay^epoch.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 * config.lr_decay.powi(epoch as i32)
}

/// Per-parameter first/second moment estimates plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    moments: Vec<(Matrix, Matrix)>,
    pub t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(params: &FopParams, config: &TrainConfig) -> Self {
        let moments = params
            .params()
            .iter()
            .map(|p| {
                (
                    Matrix::zeros(p.value.rows(), p.value.cols()),
                    Matrix::zeros(p.value.rows(), p.value.cols()),
                )
            })
            .collect();
        AdamState {
            moments,
            t: 0,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
        }
    }
}

/// One bias-corrected Adam update over all parameters; zeroes the gradients
/// afterwards. Aborts with the parameter name on a non-finite gradient.
pub fn adam_step(params: &mut FopParams, state: &mut AdamState, lr: f64) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (p, (m, v)) in params.params_mut().into_iter().zip(&mut state.moments) {
        if !p.grad.all_finite() {
            return Err(Error::NonFinite {
                what: "gradient",
                context: format!("parameter {}", p.name),
            });
        }
        for i in 0..p.value.data().len() {
            let g = p.grad.data()[i];
            let mi = state.beta1 * m.data()[i] + (1.0 - state.beta1) * g;
            let vi = state.beta2 * v.data()[i] + (1.0 - state.beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            p.value.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        p.zero_grad();
    }
    Ok(())
}

/// Row-aligned training view: face and voice feature matrices plus dense
/// identity labels in 0..num_identities.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub face: Matrix,
    pub voice: Matrix,
    pub labels: Vec<usize>,
}

impl TrainData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validate(&self, config: &FopConfig) -> Result<()> {
        if self.face.rows() != self.voice.rows() || self.face.rows() != self.labels.len() {
            return Err(Error::dim(
                "TrainData",
                format!("{} aligned rows", self.labels.len()),
                format!("face {} / voice {}", self.face.rows(), self.voice.rows()),
            ));
        }
        if self.face.cols() != config.face_dim || self.voice.cols() != config.voice_dim {
            return Err(Error::dim(
                "TrainData (modality dims)",
                format!("face {} / voice {}", config.face_dim, config.voice_dim),
                format!("face {} / voice {}", self.face.cols(), self.voice.cols()),
            ));
        }
        for &y in &self.labels {
            if y >= config.num_identities {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes: config.num_identities,
                });
            }
        }
        Ok(())
    }
}

/// One diagnostics row per epoch. The cosine statistics are taken over the
/// fused embeddings of every training batch of that epoch: mean cosine over
/// same-identity pairs, mean absolute cosine over different-identity pairs,
/// and mean absolute off-diagonal cosine over all pairs (the feature
/// orthogonality measure).
#[derive(Clone, Debug)]
pub struct EpochDiagnostics {
    /// 1-based epoch number as written to the CSV.
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub same_cos: f64,
    pub diff_cos: f64,
    pub orth: f64,
    pub seconds: f64,
}

pub const DIAGNOSTICS_HEADER: &str = "epoch,loss,lr,same_cos,diff_cos,orth,seconds";

/// Render diagnostics as CSV with the fixed header.
pub fn diagnostics_csv(rows: &[EpochDiagnostics]) -> String {
    let mut out = String::from(DIAGNOSTICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.loss, r.lr, r.same_cos, r.diff_cos, r.orth, r.seconds
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub diagnostics: Vec<EpochDiagnostics>,
    /// (epoch, validation loss, parameters) of the best validation epoch;
    /// present only when keep_best was set and a validation set was given.
    pub best: Option<(usize, f64, FopParams)>,
    /// Total pair/triplet/instance terms evaluated, per the instrumented
    /// loss counters (mining candidates for the triplet kind).
    pub work: u64,
    /// Warnings raised by degenerate batches, if any.
    pub warnings: Vec<String>,
}

struct StepResult {
    value: f64,
    work: u64,
    warning: Option<&'static str>,
}

/// Evaluate the configured loss on one forward cache, push gradients through
/// the model, and report the instrumented work.
fn loss_step(
    cache: &model::ForwardCache,
    labels: &[usize],
    cfg: &LossConfig,
    bank: Option<&CenterBank>,
    pair_rng: &mut crate::rng::Rng,
    params: &mut FopParams,
) -> Result<StepResult> {
    let mut taps = GradTaps::default();
    let (value, work, warning) = match cfg.kind {
        LossKind::CeOnly => {
            let (out, d_logits) = ce_loss(&cache.logits, labels)?;
            taps.logits = Some(d_logits);
            (out.value, out.work, None)
        }
        LossKind::FopJoint => {
            let (out, d_logits, d_fused) = fop_joint(&cache.logits, &cache.fused, labels, cfg.alpha)?;
            taps.logits = Some(d_logits);
            taps.fused = d_fused;
            (out.value, out.work, None)
        }
        LossKind::Center => {
            let bank = bank.expect("center loss requires a center bank");
            let (ce, d_logits) = ce_loss(&cache.logits, labels)?;
            let (ct, mut d_fused) = center_loss(&cache.fused, labels, bank)?;
            d_fused.scale(cfg.alpha_c);
            taps.logits = Some(d_logits);
            taps.fused = Some(d_fused);
            (ce.value + cfg.alpha_c * ct.value, ce.work + ct.work, None)
        }
        LossKind::Git => {
            let bank = bank.expect("git loss requires a center bank");
            let (ce, d_logits) = ce_loss(&cache.logits, labels)?;
            let (ct, mut d_center) = center_loss(&cache.fused, labels, bank)?;
            let (gt, d_git) = git_loss(&cache.fused, labels, bank)?;
            d_center.scale(cfg.alpha_c);
            d_center.axpy(cfg.alpha_g, &d_git)?;
            taps.logits = Some(d_logits);
            taps.fused = Some(d_center);
            (
                ce.value + cfg.alpha_c * ct.value + cfg.alpha_g * gt.value,
                ce.work + ct.work + gt.work,
                None,
            )
        }
        LossKind::Contrastive => {
            let pairs = build_contrastive_pairs(labels, pair_rng);
            let warning = if pairs.iter().all(|p| p.2) {
                Some(loss::WARN_NO_NEGATIVE_PAIRS)
            } else {
                None
            };
            let u_idx: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let v_idx: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let flags: Vec<bool> = pairs.iter().map(|p| p.2).collect();
            let (out, du_pairs, dv_pairs) = contrastive_loss(
                &cache.u.gather_rows(&u_idx),
                &cache.v.gather_rows(&v_idx),
                &flags,
                cfg.margin,
            )?;
            let mut du = Matrix::zeros(cache.u.rows(), cache.u.cols());
            let mut dv = Matrix::zeros(cache.v.rows(), cache.v.cols());
            for (row, &(ui, vi, _)) in pairs.iter().enumerate() {
                for k in 0..du.cols() {
                    let gu = du_pairs.get(row, k);
                    let gv = dv_pairs.get(row, k);
                    du.set(ui, k, du.get(ui, k) + gu);
                    dv.set(vi, k, dv.get(vi, k) + gv);
                }
            }
            taps.u = Some(du);
            taps.v = Some(dv);
            (out.value, out.work, warning)
        }
        LossKind::Triplet => {
            let (triplets, candidates, none) = mine_hard_negatives(&cache.u, &cache.v, labels)?;
            if none {
                return Ok(StepResult {
                    value: 0.0,
                    work: candidates,
                    warning: Some(loss::WARN_NO_TRIPLETS),
                });
            }
            let a_idx: Vec<usize> = triplets.iter().map(|t| t.anchor).collect();
            let p_idx: Vec<usize> = triplets.iter().map(|t| t.positive).collect();
            let n_idx: Vec<usize> = triplets.iter().map(|t| t.negative).collect();
            let (out, da, dp, dn) = triplet_loss(
                &cache.v.gather_rows(&a_idx),
                &cache.u.gather_rows(&p_idx),
                &cache.u.gather_rows(&n_idx),
                cfg.margin,
            )?;
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
            // candidate count is the instrumented counter for this kind
            (out.value, candidates, out.warning)
        }
    };
    model::backward(cache, params, &taps)?;
    Ok(StepResult {
        value,
        work,
        warning,
    })
}

/// Fused-embedding pair statistics accumulated across an epoch.
#[derive(Default)]
struct PairStats {
    same_sum: f64,
    same_cnt: u64,
    diff_abs_sum: f64,
    diff_cnt: u64,
    all_abs_sum: f64,
    all_cnt: u64,
}

impl PairStats {
    fn absorb(&mut self, fused: &Matrix, labels: &[usize]) {
        let b = fused.rows();
        for i in 0..b {
            for j in (i + 1)..b {
                let (c, _) = ops::cosine_sim(fused.row(i), fused.row(j));
                self.all_abs_sum += c.abs();
                self.all_cnt += 1;
                if labels[i] == labels[j] {
                    self.same_sum += c;
                    self.same_cnt += 1;
                } else {
                    self.diff_abs_sum += c.abs();
                    self.diff_cnt += 1;
                }
            }
        }
    }

    fn summary(&self) -> (f64, f64, f64) {
        let mean = |sum: f64, cnt: u64| if cnt > 0 { sum / cnt as f64 } else { 0.0 };
        (
            mean(self.same_sum, self.same_cnt),
            mean(self.diff_abs_sum, self.diff_cnt),
            mean(self.all_abs_sum, self.all_cnt),
        )
    }
}

/// Loss of the configured kind over a frozen parameter snapshot (no
/// gradients); used for validation tracking.
pub fn evaluate_loss(
    data: &TrainData,
    config: &TrainConfig,
    model_cfg: &FopConfig,
    params: &FopParams,
    bank: Option<&CenterBank>,
) -> Result<f64> {
    let cache = model::forward(&data.face, &data.voice, params, model_cfg)?;
    let cfg = &config.loss;
    let value = match cfg.kind {
        LossKind::CeOnly => ce_loss(&cache.logits, &data.labels)?.0.value,
        LossKind::FopJoint => {
            fop_joint(&cache.logits, &cache.fused, &data.labels, cfg.alpha)?
                .0
                .value
        }
        LossKind::Center => {
            let bank = bank.expect("center loss requires a center bank");
            let (ce, _) = ce_loss(&cache.logits, &data.labels)?;
            let (ct, _) = center_loss(&cache.fused, &data.labels, bank)?;
            ce.value + cfg.alpha_c * ct.value
        }
        LossKind::Git => {
            let bank = bank.expect("git loss requires a center bank");
            let (ce, _) = ce_loss(&cache.logits, &data.labels)?;
            let (ct, _) = center_loss(&cache.fused, &data.labels, bank)?;
            let (gt, _) = git_loss(&cache.fused, &data.labels, bank)?;
            ce.value + cfg.alpha_c * ct.value + cfg.alpha_g * gt.value
        }
        LossKind::Contrastive => {
            // deterministic validation pairing, independent of training draws
            let mut rng = domain_rng(config.seed, "val-pairs");
            let pairs = build_contrastive_pairs(&data.labels, &mut rng);
            let u_idx: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let v_idx: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let flags: Vec<bool> = pairs.iter().map(|p| p.2).collect();
            contrastive_loss(
                &cache.u.gather_rows(&u_idx),
                &cache.v.gather_rows(&v_idx),
                &flags,
                cfg.margin,
            )?
            .0
            .value
        }
        LossKind::Triplet => {
            let (triplets, _, none) = mine_hard_negatives(&cache.u, &cache.v, &data.labels)?;
            if none {
                0.0
            } else {
                let a_idx: Vec<usize> = triplets.iter().map(|t| t.anchor).collect();
                let p_idx: Vec<usize> = triplets.iter().map(|t| t.positive).collect();
                let n_idx: Vec<usize> = triplets.iter().map(|t| t.negative).collect();
                triplet_loss(
                    &cache.v.gather_rows(&a_idx),
                    &cache.u.gather_rows(&p_idx),
                    &cache.u.gather_rows(&n_idx),
                    cfg.margin,
                )?
                .0
                .value
            }
        }
    };
    Ok(value)
}

/// Train the model over the given data. Returns per-epoch diagnostics and,
/// when configured, the best-on-validation parameter snapshot.
pub fn fit(
    train: &TrainData,
    val: Option<&TrainData>,
    config: &TrainConfig,
    model_cfg: &FopConfig,
    params: &mut FopParams,
) -> Result<FitOutcome> {
    config.validate()?;
    model_cfg.validate()?;
    train.validate(model_cfg)?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if let Some(v) = val {
        v.validate(model_cfg)?;
    }

    let mut shuffle_rng = domain_rng(config.seed, "shuffle");
    let mut pair_rng = domain_rng(config.seed, "pairs");
    let mut adam = AdamState::new(params, config);
    let mut bank = config
        .loss
        .kind
        .needs_centers()
        .then(|| CenterBank::new(model_cfg.num_identities, model_cfg.embed_dim));

    let n = train.len();
    let sizes = loss::batch_sizes(n, config.batch_size, config.loss.kind.needs_pairs())?;

    let mut diagnostics = Vec::with_capacity(config.epochs);
    let mut warnings: Vec<String> = Vec::new();
    let mut best: Option<(usize, f64, FopParams)> = None;
    let mut total_work = 0u64;

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = lr_at(epoch, config);
        order.shuffle(&mut shuffle_rng);

        let mut stats = PairStats::default();
        let mut loss_sum = 0.0;
        let mut offset = 0;
        for (step, &size) in sizes.iter().enumerate() {
            let idx = &order[offset..offset + size];
            offset += size;
            let face = train.face.gather_rows(idx);
            let voice = train.voice.gather_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();

            let cache = model::forward(&face, &voice, params, model_cfg)?;
            params.zero_grads();
            let result = loss_step(
                &cache,
                &labels,
                &config.loss,
                bank.as_ref(),
                &mut pair_rng,
                params,
            )?;
            if !result.value.is_finite() {
                return Err(Error::NonFinite {
                    what: "loss",
                    context: format!("epoch {}, batch {}", epoch + 1, step),
                });
            }
            adam_step(params, &mut adam, lr)?;
            if let Some(bank) = &mut bank {
                total_work += bank.update(&cache.fused, &labels, config.loss.center_beta)?;
            }
            if let Some(w) = result.warning {
                let msg = format!("epoch {}, batch {}: {}", epoch + 1, step, w);
                if !warnings.contains(&msg) {
                    warnings.push(msg);
                }
            }
            loss_sum += result.value;
            total_work += result.work;
            stats.absorb(&cache.fused, &labels);
        }

        let (same_cos, diff_cos, orth) = stats.summary();
        diagnostics.push(EpochDiagnostics {
            epoch: epoch + 1,
            loss: loss_sum / sizes.len() as f64,
            lr,
            same_cos,
            diff_cos,
            orth,
            seconds: start.elapsed().as_secs_f64(),
        });

        if config.keep_best {
            if let Some(v) = val {
                let val_loss = evaluate_loss(v, config, model_cfg, params, bank.as_ref())?;
                let better = best.as_ref().is_none_or(|(_, b, _)| val_loss < *b);
                if better {
                    best = Some((epoch + 1, val_loss, params.clone()));
                }
            }
        }
    }

    Ok(FitOutcome {
        diagnostics,
        best,
        work: total_work,
        warnings,
    })
}
