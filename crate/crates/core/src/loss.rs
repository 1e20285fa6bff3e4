//! Supervision objectives and their analytic gradients.
//!
//! The joint objective combines softmax cross-entropy over identity logits
//! with orthogonality constraints on the fused embeddings (same identity
//! pulled toward cosine 1, different identities toward cosine 0). The four
//! comparison losses used by earlier face-voice systems are implemented
//! behind the same interface: center, git, contrastive, and triplet with
//! in-batch hard negative mining.
//!
//! Every loss reports a `work` counter — the number of instance/pair/triplet
//! terms it evaluated — which feeds the training-complexity benchmark.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ops;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    FopJoint,
    CeOnly,
    Center,
    Git,
    Contrastive,
    Triplet,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "fop_joint" => LossKind::FopJoint,
            "ce_only" => LossKind::CeOnly,
            "center" => LossKind::Center,
            "git" => LossKind::Git,
            "contrastive" => LossKind::Contrastive,
            "triplet" => LossKind::Triplet,
            other => {
                return Err(Error::Config(format!(
                    "unknown loss kind {other:?} (expected fop_joint, ce_only, center, git, contrastive or triplet)"
                )))
            }
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::FopJoint => "fop_joint",
            LossKind::CeOnly => "ce_only",
            LossKind::Center => "center",
            LossKind::Git => "git",
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
        }
    }

    /// Losses that degenerate on a singleton batch (pair/triplet based).
    pub fn needs_pairs(self) -> bool {
        matches!(
            self,
            LossKind::FopJoint | LossKind::Contrastive | LossKind::Triplet
        )
    }

    /// Losses that maintain an identity centroid bank.
    pub fn needs_centers(self) -> bool {
        matches!(self, LossKind::Center | LossKind::Git)
    }
}

#[derive(Clone, Debug)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight of the orthogonality term in the joint loss.
    pub alpha: f64,
    /// Weight of the center term (center and git objectives).
    pub alpha_c: f64,
    /// Weight of the git push term.
    pub alpha_g: f64,
    /// Margin for contrastive and triplet losses.
    pub margin: f64,
    /// Centroid update rate beta in (0, 1].
    pub center_beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::FopJoint,
            alpha: 1.0,
            alpha_c: 1.0,
            alpha_g: 1.0,
            margin: 0.6,
            center_beta: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if matches!(self.kind, LossKind::Contrastive | LossKind::Triplet) && self.margin <= 0.0 {
            return Err(Error::Config(format!(
                "margin must be > 0 for {} loss, got {}",
                self.kind.as_str(),
                self.margin
            )));
        }
        if self.kind.needs_centers() && !(self.center_beta > 0.0 && self.center_beta <= 1.0) {
            return Err(Error::Config(format!(
                "center_beta must be in (0, 1], got {}",
                self.center_beta
            )));
        }
        Ok(())
    }
}

/// Warning conditions a loss can signal without failing the step.
pub const WARN_NO_TRIPLETS: &str = "no valid triplets: batch has fewer than 2 identities";
pub const WARN_NO_NEGATIVE_PAIRS: &str = "no negative pairs: batch has fewer than 2 identities";

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub value: f64,
    /// Number of instance/pair/triplet terms evaluated.
    pub work: u64,
    pub warning: Option<&'static str>,
}

impl LossOutput {
    fn new(value: f64, work: u64) -> Self {
        LossOutput {
            value,
            work,
            warning: None,
        }
    }
}

/// Mean softmax cross-entropy over identity logits.
///
/// Returns the logit gradient (softmax - onehot)/B alongside the value.
pub fn ce_loss(logits: &Matrix, labels: &[usize]) -> Result<(LossOutput, Matrix)> {
    let (value, grad) = ops::softmax_cross_entropy(logits, labels)?;
    Ok((LossOutput::new(value, logits.rows() as u64), grad))
}

/// Orthogonality constraints on fused embeddings.
///
/// L = 1 - mean cos over same-identity pairs + |mean cos over different-identity
/// pairs|, pairs taken unordered within the batch. An empty pair class
/// contributes its neutral value: no same-class pairs leaves the constant 1,
/// no different-class pairs drops the second term. Per-pair means keep the
/// value batch-size invariant and bounded.
pub fn oc_loss(fused: &Matrix, labels: &[usize]) -> Result<(LossOutput, Matrix)> {
    let b = fused.rows();
    if b < 2 {
        return Err(Error::BatchTooSmall {
            context: "oc_loss",
            min: 2,
            got: b,
        });
    }
    if labels.len() != b {
        return Err(Error::dim(
            "oc_loss",
            format!("{} labels", b),
            format!("{} labels", labels.len()),
        ));
    }

    let mut same_sum = 0.0;
    let mut same_cnt = 0u64;
    let mut diff_sum = 0.0;
    let mut diff_cnt = 0u64;
    for i in 0..b {
        for j in (i + 1)..b {
            let (c, _) = ops::cosine_sim(fused.row(i), fused.row(j));
            if labels[i] == labels[j] {
                same_sum += c;
                same_cnt += 1;
            } else {
                diff_sum += c;
                diff_cnt += 1;
            }
        }
    }
    let same_mean = if same_cnt > 0 { same_sum / same_cnt as f64 } else { 0.0 };
    let diff_mean = if diff_cnt > 0 { diff_sum / diff_cnt as f64 } else { 0.0 };
    let value = 1.0 - same_mean + diff_mean.abs();

    // d|D|/dD: subgradient 0 at exactly D = 0.
    let diff_sign = if diff_mean > 0.0 {
        1.0
    } else if diff_mean < 0.0 {
        -1.0
    } else {
        0.0
    };
    let mut grad = Matrix::zeros(b, fused.cols());
    for i in 0..b {
        for j in (i + 1)..b {
            let upstream = if labels[i] == labels[j] {
                -1.0 / same_cnt as f64
            } else {
                diff_sign / diff_cnt as f64
            };
            if upstream == 0.0 {
                continue;
            }
            // Safe: i != j, so the two row borrows are disjoint.
            let (gi, gj) = {
                let (a, rest) = grad.data_mut().split_at_mut(j * fused.cols());
                (
                    &mut a[i * fused.cols()..(i + 1) * fused.cols()],
                    &mut rest[..fused.cols()],
                )
            };
            ops::cosine_sim_backward(fused.row(i), fused.row(j), upstream, gi, gj);
        }
    }
    Ok((
        LossOutput::new(value, (b * (b - 1) / 2) as u64),
        grad,
    ))
}

/// Joint objective: cross-entropy plus alpha times the orthogonality term.
///
/// With alpha = 0 the orthogonality branch is skipped entirely, so value,
/// gradients and the whole training trajectory are bit-identical to plain
/// cross-entropy.
pub fn fop_joint(
    logits: &Matrix,
    fused: &Matrix,
    labels: &[usize],
    alpha: f64,
) -> Result<(LossOutput, Matrix, Option<Matrix>)> {
    if alpha < 0.0 {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let (ce, d_logits) = ce_loss(logits, labels)?;
    if alpha == 0.0 {
        return Ok((ce, d_logits, None));
    }
    let (oc, mut d_fused) = oc_loss(fused, labels)?;
    d_fused.scale(alpha);
    Ok((
        LossOutput::new(ce.value + alpha * oc.value, ce.work + oc.work),
        d_logits,
        Some(d_fused),
    ))
}

/// Identity centroids maintained by the center and git objectives.
#[derive(Clone, Debug)]
pub struct CenterBank {
    pub centers: Matrix,
    /// How many update cycles have included each identity.
    pub touched: Vec<u64>,
}

impl CenterBank {
    pub fn new(num_classes: usize, dim: usize) -> Self {
        CenterBank {
            centers: Matrix::zeros(num_classes, dim),
            touched: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.centers.rows()
    }

    /// Centroid maintenance after an optimizer step:
    /// c_j <- c_j - beta * (sum_{i: y_i = j} (c_j - l_i)) / (1 + n_j).
    ///
    /// The damped mean-residual rule; the scan covers the whole bank (classes
    /// absent from the batch have a zero residual), which is what the
    /// reported maintenance work counts.
    pub fn update(&mut self, fused: &Matrix, labels: &[usize], beta: f64) -> Result<u64> {
        let c = self.centers.rows();
        let d = self.centers.cols();
        if fused.cols() != d {
            return Err(Error::dim("CenterBank::update", format!("dim {d}"), fused.shape_str()));
        }
        let mut counts = vec![0u64; c];
        let mut sums = Matrix::zeros(c, d);
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes: c,
                });
            }
            counts[y] += 1;
            let row = fused.row(i);
            let dst = sums.row_mut(y);
            for (a, &b) in dst.iter_mut().zip(row) {
                *a += b;
            }
        }
        for j in 0..c {
            let n = counts[j] as f64;
            let denom = 1.0 + n;
            let center = self.centers.row_mut(j);
            let sum = &sums.data()[j * d..(j + 1) * d];
            for k in 0..d {
                // residual sum = n * c_j - sum(l_i)
                let delta = (n * center[k] - sum[k]) / denom;
                center[k] -= beta * delta;
            }
            if counts[j] > 0 {
                self.touched[j] += 1;
            }
        }
        Ok(c as u64)
    }
}

/// Center pull term: L = 1/2 * sum over the batch of ||l_i - c_{y_i}||^2.
///
/// Centroids are constants for this gradient; they move only through
/// [`CenterBank::update`].
pub fn center_loss(
    fused: &Matrix,
    labels: &[usize],
    bank: &CenterBank,
) -> Result<(LossOutput, Matrix)> {
    let b = fused.rows();
    let d = fused.cols();
    if d != bank.centers.cols() {
        return Err(Error::dim("center_loss", format!("dim {}", bank.centers.cols()), fused.shape_str()));
    }
    let mut value = 0.0;
    let mut grad = Matrix::zeros(b, d);
    for i in 0..b {
        let y = labels[i];
        if y >= bank.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: bank.num_classes(),
            });
        }
        let li = fused.row(i);
        let cy = bank.centers.row(y);
        let g = grad.row_mut(i);
        for k in 0..d {
            let r = li[k] - cy[k];
            value += 0.5 * r * r;
            g[k] = r;
        }
    }
    Ok((LossOutput::new(value, b as u64), grad))
}

/// Git push term: L = sum over ordered pairs i != j of 1/(1 + ||l_i - c_{y_j}||^2).
pub fn git_loss(fused: &Matrix, labels: &[usize], bank: &CenterBank) -> Result<(LossOutput, Matrix)> {
    let b = fused.rows();
    let d = fused.cols();
    if d != bank.centers.cols() {
        return Err(Error::dim("git_loss", format!("dim {}", bank.centers.cols()), fused.shape_str()));
    }
    for &y in labels {
        if y >= bank.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: bank.num_classes(),
            });
        }
    }
    let mut value = 0.0;
    let mut grad = Matrix::zeros(b, d);
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            let li = fused.row(i);
            let cj = bank.centers.row(labels[j]);
            let mut dist2 = 0.0;
            for k in 0..d {
                let r = li[k] - cj[k];
                dist2 += r * r;
            }
            let t = 1.0 / (1.0 + dist2);
            value += t;
            let coeff = -2.0 * t * t;
            let g = grad.row_mut(i);
            for k in 0..d {
                g[k] += coeff * (li[k] - cj[k]);
            }
        }
    }
    Ok((LossOutput::new(value, (b * (b - 1)) as u64), grad))
}

/// Margin-based contrastive loss over row-aligned (u, v) pairs.
///
/// L = mean over pairs of y * D^2 + (1-y) * max(0, m - D)^2 with
/// D = ||u_i - v_i||, genuine pairs labelled true.
pub fn contrastive_loss(
    u: &Matrix,
    v: &Matrix,
    pair_labels: &[bool],
    margin: f64,
) -> Result<(LossOutput, Matrix, Matrix)> {
    if margin <= 0.0 {
        return Err(Error::Config(format!("margin must be > 0, got {margin}")));
    }
    if u.shape() != v.shape() {
        return Err(Error::dim("contrastive_loss", u.shape_str(), v.shape_str()));
    }
    let p = u.rows();
    if pair_labels.len() != p {
        return Err(Error::dim(
            "contrastive_loss",
            format!("{} labels", p),
            format!("{} labels", pair_labels.len()),
        ));
    }
    if p == 0 {
        return Ok((LossOutput::new(0.0, 0), Matrix::zeros(0, u.cols()), Matrix::zeros(0, u.cols())));
    }
    let d = u.cols();
    let inv_p = 1.0 / p as f64;
    let mut value = 0.0;
    let mut du = Matrix::zeros(p, d);
    let mut dv = Matrix::zeros(p, d);
    for i in 0..p {
        let ui = u.row(i);
        let vi = v.row(i);
        let mut dist2 = 0.0;
        for k in 0..d {
            let r = ui[k] - vi[k];
            dist2 += r * r;
        }
        let dist = dist2.sqrt();
        if pair_labels[i] {
            value += dist2;
            let gu = du.row_mut(i);
            for k in 0..d {
                gu[k] = 2.0 * (ui[k] - vi[k]) * inv_p;
            }
            let gv = dv.row_mut(i);
            for k in 0..d {
                gv[k] = -2.0 * (ui[k] - vi[k]) * inv_p;
            }
        } else if dist < margin {
            let gap = margin - dist;
            value += gap * gap;
            if dist > 1e-12 {
                let coeff = -2.0 * gap / dist * inv_p;
                let gu = du.row_mut(i);
                for k in 0..d {
                    gu[k] = coeff * (ui[k] - vi[k]);
                }
                let gv = dv.row_mut(i);
                for k in 0..d {
                    gv[k] = -coeff * (ui[k] - vi[k]);
                }
            }
        }
    }
    Ok((LossOutput::new(value * inv_p, p as u64), du, dv))
}

/// Pair construction for contrastive training within a batch: every instance
/// contributes its genuine pair plus one negative against a randomly chosen
/// different-identity partner (1:1 positive:negative), seeded.
///
/// Returned tuples are (u row, v row, genuine). Batches holding a single
/// identity yield positives only.
pub fn build_contrastive_pairs(labels: &[usize], rng: &mut Rng) -> Vec<(usize, usize, bool)> {
    let b = labels.len();
    let mut pairs = Vec::with_capacity(2 * b);
    for i in 0..b {
        pairs.push((i, i, true));
    }
    for i in 0..b {
        let candidates: Vec<usize> = (0..b).filter(|&j| labels[j] != labels[i]).collect();
        if candidates.is_empty() {
            continue;
        }
        let pick = candidates[rng.random_range(0..candidates.len())];
        pairs.push((i, pick, false));
    }
    pairs
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    /// Voice anchor row.
    pub anchor: usize,
    /// Same-identity face row (the anchor's own instance counts).
    pub positive: usize,
    /// Hardest different-identity face row.
    pub negative: usize,
}

/// In-batch hard negative mining over voice anchors and face candidates.
///
/// For every (voice anchor a, same-identity face positive p) the negative is
/// the different-identity face minimizing ||v_a - u_n||^2; ties break toward
/// the lowest batch index, making mining deterministic. The hardest negative
/// does not depend on p, so the argmin is computed once per anchor, but the
/// candidate counter reports the full (a, p, n) set an exhaustive scan
/// examines.
pub fn mine_hard_negatives(
    u: &Matrix,
    v: &Matrix,
    labels: &[usize],
) -> Result<(Vec<Triplet>, u64, bool)> {
    if u.shape() != v.shape() {
        return Err(Error::dim("mine_hard_negatives", u.shape_str(), v.shape_str()));
    }
    let b = u.rows();
    if labels.len() != b {
        return Err(Error::dim(
            "mine_hard_negatives",
            format!("{} labels", b),
            format!("{} labels", labels.len()),
        ));
    }
    let d = u.cols();
    let mut triplets = Vec::new();
    let mut candidates = 0u64;
    for a in 0..b {
        let va = v.row(a);
        let mut hardest: Option<(usize, f64)> = None;
        let mut n_diff = 0u64;
        for n in 0..b {
            if labels[n] == labels[a] {
                continue;
            }
            n_diff += 1;
            let un = u.row(n);
            let mut dist2 = 0.0;
            for k in 0..d {
                let r = va[k] - un[k];
                dist2 += r * r;
            }
            match hardest {
                Some((_, best)) if dist2 >= best => {}
                _ => hardest = Some((n, dist2)),
            }
        }
        let Some((neg, _)) = hardest else { continue };
        let mut n_same = 0u64;
        for p in 0..b {
            if labels[p] != labels[a] {
                continue;
            }
            n_same += 1;
            triplets.push(Triplet {
                anchor: a,
                positive: p,
                negative: neg,
            });
        }
        candidates += n_same * n_diff;
    }
    let no_triplets = triplets.is_empty();
    Ok((triplets, candidates, no_triplets))
}

/// Hinged triplet loss over aligned (anchor, positive, negative) rows:
/// mean of max(0, ||a - p||^2 - ||a - n||^2 + m).
pub fn triplet_loss(
    anchors: &Matrix,
    positives: &Matrix,
    negatives: &Matrix,
    margin: f64,
) -> Result<(LossOutput, Matrix, Matrix, Matrix)> {
    if margin <= 0.0 {
        return Err(Error::Config(format!("margin must be > 0, got {margin}")));
    }
    if anchors.shape() != positives.shape() || anchors.shape() != negatives.shape() {
        return Err(Error::dim(
            "triplet_loss",
            anchors.shape_str(),
            format!("{} / {}", positives.shape_str(), negatives.shape_str()),
        ));
    }
    let t = anchors.rows();
    let d = anchors.cols();
    let mut da = Matrix::zeros(t, d);
    let mut dp = Matrix::zeros(t, d);
    let mut dn = Matrix::zeros(t, d);
    if t == 0 {
        let mut out = LossOutput::new(0.0, 0);
        out.warning = Some(WARN_NO_TRIPLETS);
        return Ok((out, da, dp, dn));
    }
    let inv_t = 1.0 / t as f64;
    let mut value = 0.0;
    for i in 0..t {
        let a = anchors.row(i);
        let p = positives.row(i);
        let n = negatives.row(i);
        let mut dap = 0.0;
        let mut dan = 0.0;
        for k in 0..d {
            let rp = a[k] - p[k];
            let rn = a[k] - n[k];
            dap += rp * rp;
            dan += rn * rn;
        }
        let hinge = dap - dan + margin;
        if hinge > 0.0 {
            value += hinge;
            let ga = da.row_mut(i);
            for k in 0..d {
                ga[k] = 2.0 * (n[k] - p[k]) * inv_t;
            }
            let gp = dp.row_mut(i);
            for k in 0..d {
                gp[k] = 2.0 * (p[k] - a[k]) * inv_t;
            }
            let gn = dn.row_mut(i);
            for k in 0..d {
                gn[k] = 2.0 * (a[k] - n[k]) * inv_t;
            }
        }
    }
    Ok((LossOutput::new(value * inv_t, t as u64), da, dp, dn))
}

/// Batch partition for one epoch: chunks of `batch_size` in order, keeping the
/// final partial batch unless the loss needs pairs and the remainder is a
/// singleton, in which case it merges into the previous batch.
pub fn batch_sizes(n: usize, batch_size: usize, needs_pairs: bool) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let full = n / batch_size;
    let rem = n % batch_size;
    let mut sizes = vec![batch_size; full];
    if rem > 0 {
        if rem == 1 && needs_pairs {
            match sizes.last_mut() {
                Some(last) => *last += 1,
                None => {
                    return Err(Error::BatchTooSmall {
                        context: "batch partition (pairwise loss)",
                        min: 2,
                        got: 1,
                    })
                }
            }
        } else {
            sizes.push(rem);
        }
    }
    Ok(sizes)
}

/// Theoretical per-epoch work-counter prediction for `n` instances at batch
/// size `batch_size`.
///
/// Exact for the label-independent regimes: cross-entropy (one term per
/// instance), the joint loss (instances plus in-batch pairs), and the
/// all-pairs contrastive epoch (every unordered instance pair once). The
/// label-dependent kinds return their worst case: center/git assume centroid
/// maintenance over n identities, triplet assumes the most adversarial batch
/// composition (an even two-way identity split, giving
/// floor(b/2)*ceil(b/2)*b candidates per batch of b).
pub fn count_work(kind: LossKind, batch_size: usize, n: usize) -> Result<u64> {
    if batch_size > n {
        return Err(Error::Config(format!(
            "count_work expects batch_size <= n, got B={batch_size}, n={n}"
        )));
    }
    let n64 = n as u64;
    Ok(match kind {
        LossKind::CeOnly => n64,
        LossKind::FopJoint => {
            let sizes = batch_sizes(n, batch_size, true)?;
            n64 + sizes
                .iter()
                .map(|&b| (b * (b - 1) / 2) as u64)
                .sum::<u64>()
        }
        LossKind::Center => {
            let steps = batch_sizes(n, batch_size, false)?.len() as u64;
            2 * n64 + steps * n64
        }
        LossKind::Git => {
            let sizes = batch_sizes(n, batch_size, false)?;
            let pair_terms: u64 = sizes.iter().map(|&b| (b * (b - 1)) as u64).sum();
            2 * n64 + pair_terms + sizes.len() as u64 * n64
        }
        LossKind::Contrastive => n64 * (n64 - 1) / 2,
        LossKind::Triplet => {
            let sizes = batch_sizes(n, batch_size, true)?;
            sizes
                .iter()
                .map(|&b| ((b / 2) * b.div_ceil(2) * b) as u64)
                .sum()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::domain_rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = domain_rng(seed, "test-matrix");
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Central finite differences on a scalar function of one matrix input.
    fn fd_grad(x: &Matrix, f: &mut dyn FnMut(&Matrix) -> f64) -> Matrix {
        let h = 1e-5;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for idx in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            g.data_mut()[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_grad_close(analytic: &Matrix, numeric: &Matrix, tol: f64) {
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            let denom = a.abs().max(n.abs()).max(1e-6);
            assert!(
                (a - n).abs() / denom <= tol,
                "gradient mismatch: analytic {a}, numeric {n}"
            );
        }
    }

    #[test]
    fn ce_uniform_and_hand_value() {
        let logits = Matrix::zeros(3, 4);
        let (out, _) = ce_loss(&logits, &[0, 1, 3]).unwrap();
        assert!((out.value - 4.0_f64.ln()).abs() < 1e-12);
        assert_eq!(out.work, 3);

        let logits = Matrix::from_vec(1, 2, vec![2.0, 0.0]).unwrap();
        let (out, _) = ce_loss(&logits, &[0]).unwrap();
        assert!((out.value - (1.0 + (-2.0_f64).exp()).ln()).abs() < 1e-9);
        assert!((out.value - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn ce_saturates_to_zero() {
        let logits = Matrix::from_vec(1, 2, vec![30.0, 0.0]).unwrap();
        let (out, _) = ce_loss(&logits, &[0]).unwrap();
        assert!(out.value < 1e-12);
    }

    #[test]
    fn oc_two_identical_same_class() {
        let l = Matrix::from_vec(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let (out, _) = oc_loss(&l, &[0, 0]).unwrap();
        assert!(out.value.abs() < 1e-12);
    }

    #[test]
    fn oc_two_orthogonal_diff_class() {
        let l = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (out, _) = oc_loss(&l, &[0, 1]).unwrap();
        assert!((out.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oc_batch_too_small() {
        let l = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            oc_loss(&l, &[0]).unwrap_err(),
            Error::BatchTooSmall { .. }
        ));
    }

    #[test]
    fn oc_matches_brute_force_pairs() {
        let l = random_matrix(6, 5, 31);
        let labels = [0usize, 1, 2, 0, 1, 2];
        let (out, _) = oc_loss(&l, &labels).unwrap();

        // independent double loop
        let mut same = Vec::new();
        let mut diff = Vec::new();
        for i in 0..6 {
            for j in (i + 1)..6 {
                let (c, _) = ops::cosine_sim(l.row(i), l.row(j));
                if labels[i] == labels[j] {
                    same.push(c);
                } else {
                    diff.push(c);
                }
            }
        }
        let s = same.iter().sum::<f64>() / same.len() as f64;
        let d = diff.iter().sum::<f64>() / diff.len() as f64;
        assert!((out.value - (1.0 - s + d.abs())).abs() < 1e-12);
        assert_eq!(out.work, 15);
    }

    #[test]
    fn oc_gradient_matches_fd() {
        let l = random_matrix(6, 4, 57);
        let labels = [0usize, 0, 1, 1, 2, 2];
        let (_, grad) = oc_loss(&l, &labels).unwrap();
        let numeric = fd_grad(&l, &mut |x| oc_loss(x, &labels).unwrap().0.value);
        assert_grad_close(&grad, &numeric, 1e-4);
    }

    #[test]
    fn oc_scale_invariance_single_row() {
        let l = random_matrix(5, 4, 71);
        let labels = [0usize, 1, 0, 2, 1];
        let (base, _) = oc_loss(&l, &labels).unwrap();
        for lambda in [0.5, 2.0, 10.0] {
            let mut scaled = l.clone();
            for v in scaled.row_mut(2) {
                *v *= lambda;
            }
            let (out, _) = oc_loss(&scaled, &labels).unwrap();
            assert!((out.value - base.value).abs() <= 1e-9);
        }
    }

    #[test]
    fn fop_joint_alpha_zero_is_ce_bitwise() {
        let logits = random_matrix(5, 3, 83);
        let fused = random_matrix(5, 4, 89);
        let labels = [0usize, 1, 2, 0, 1];
        let (joint, d_logits, d_fused) = fop_joint(&logits, &fused, &labels, 0.0).unwrap();
        let (ce, ce_grad) = ce_loss(&logits, &labels).unwrap();
        assert_eq!(joint.value.to_bits(), ce.value.to_bits());
        assert_eq!(d_logits, ce_grad);
        assert!(d_fused.is_none());
    }

    #[test]
    fn fop_joint_accepts_alpha_grid() {
        let logits = random_matrix(4, 3, 97);
        let fused = random_matrix(4, 4, 101);
        let labels = [0usize, 1, 2, 0];
        for alpha in [0.0, 0.1, 0.5, 1.0, 2.0, 5.0] {
            let (out, _, _) = fop_joint(&logits, &fused, &labels, alpha).unwrap();
            assert!(out.value.is_finite() && out.value >= 0.0);
        }
        assert!(fop_joint(&logits, &fused, &labels, -1.0).is_err());
    }

    #[test]
    fn center_loss_trivials_and_brute_force() {
        let mut bank = CenterBank::new(2, 3);
        let l = Matrix::from_vec(2, 3, vec![0.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        // every embedding exactly at its (zero) center except row 1 at distance 2
        let (out, _) = center_loss(&l, &[0, 1], &bank).unwrap();
        assert!((out.value - 2.0).abs() < 1e-12);

        bank.centers = random_matrix(2, 3, 5);
        let l = random_matrix(4, 3, 7);
        let labels = [0usize, 1, 0, 1];
        let (out, grad) = center_loss(&l, &labels, &bank).unwrap();
        let mut brute = 0.0;
        for i in 0..4 {
            for k in 0..3 {
                let r = l.get(i, k) - bank.centers.get(labels[i], k);
                brute += 0.5 * r * r;
            }
        }
        assert!((out.value - brute).abs() < 1e-12);
        let numeric = fd_grad(&l, &mut |x| center_loss(x, &labels, &bank).unwrap().0.value);
        assert_grad_close(&grad, &numeric, 1e-4);
    }

    #[test]
    fn center_at_centers_is_zero() {
        let mut bank = CenterBank::new(2, 2);
        bank.centers = Matrix::from_vec(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let l = Matrix::from_vec(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let (out, _) = center_loss(&l, &[0, 1], &bank).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn git_singleton_batch_is_zero() {
        let bank = CenterBank::new(2, 3);
        let l = random_matrix(1, 3, 11);
        let (out, _) = git_loss(&l, &[0], &bank).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.work, 0);
    }

    #[test]
    fn git_far_embedding_term_vanishes() {
        let bank = CenterBank::new(2, 2);
        let l = Matrix::from_vec(2, 2, vec![1e4, 0.0, 0.0, 1e4]).unwrap();
        let (out, _) = git_loss(&l, &[0, 1], &bank).unwrap();
        // two ordered pair terms, each 1/(1 + 1e8)
        assert!(out.value < 1e-7);
    }

    #[test]
    fn git_matches_brute_force_and_fd() {
        let mut bank = CenterBank::new(2, 3);
        bank.centers = random_matrix(2, 3, 13);
        let l = random_matrix(4, 3, 17);
        let labels = [0usize, 0, 1, 1];
        let (out, grad) = git_loss(&l, &labels, &bank).unwrap();
        let mut brute = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let mut d2 = 0.0;
                for k in 0..3 {
                    let r = l.get(i, k) - bank.centers.get(labels[j], k);
                    d2 += r * r;
                }
                brute += 1.0 / (1.0 + d2);
            }
        }
        assert!((out.value - brute).abs() < 1e-12);
        assert_eq!(out.work, 12);
        let numeric = fd_grad(&l, &mut |x| git_loss(x, &labels, &bank).unwrap().0.value);
        assert_grad_close(&grad, &numeric, 1e-4);
    }

    #[test]
    fn contrastive_trivials() {
        let u = Matrix::from_vec(1, 2, vec![0.6, 0.8]).unwrap();
        // positive pair with u = v
        let (out, _, _) = contrastive_loss(&u, &u, &[true], 0.6).unwrap();
        assert_eq!(out.value, 0.0);
        // negative pair with D >= m
        let v = Matrix::from_vec(1, 2, vec![-0.6, -0.8]).unwrap();
        let (out, _, _) = contrastive_loss(&u, &v, &[false], 0.6).unwrap();
        assert_eq!(out.value, 0.0);
        // negative pair at D = 0 pays m^2
        let (out, _, _) = contrastive_loss(&u, &u, &[false], 0.6).unwrap();
        assert!((out.value - 0.36).abs() < 1e-12);
        // margin must be positive
        assert!(contrastive_loss(&u, &u, &[true], 0.0).is_err());
    }

    #[test]
    fn contrastive_gradient_matches_fd() {
        let u = random_matrix(6, 4, 19);
        let v = random_matrix(6, 4, 23);
        let labels = [true, false, true, false, true, false];
        let (_, du, dv) = contrastive_loss(&u, &v, &labels, 0.6).unwrap();
        let nu = fd_grad(&u, &mut |x| contrastive_loss(x, &v, &labels, 0.6).unwrap().0.value);
        let nv = fd_grad(&v, &mut |x| contrastive_loss(&u, x, &labels, 0.6).unwrap().0.value);
        assert_grad_close(&du, &nu, 1e-4);
        assert_grad_close(&dv, &nv, 1e-4);
    }

    #[test]
    fn triplet_trivials() {
        // margin satisfied: d(a,n)^2 >= d(a,p)^2 + m
        let a = Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let p = Matrix::from_vec(1, 2, vec![0.1, 0.0]).unwrap();
        let n = Matrix::from_vec(1, 2, vec![2.0, 0.0]).unwrap();
        let (out, _, _, _) = triplet_loss(&a, &p, &n, 0.6).unwrap();
        assert_eq!(out.value, 0.0);
        // a = p and d(a, n) = 0 pays exactly m
        let (out, _, _, _) = triplet_loss(&a, &a, &a, 0.6).unwrap();
        assert!((out.value - 0.6).abs() < 1e-15);
    }

    #[test]
    fn triplet_gradient_matches_fd() {
        let a = random_matrix(5, 3, 29);
        let p = random_matrix(5, 3, 37);
        let n = random_matrix(5, 3, 41);
        let (_, da, dp, dn) = triplet_loss(&a, &p, &n, 0.6).unwrap();
        let na = fd_grad(&a, &mut |x| triplet_loss(x, &p, &n, 0.6).unwrap().0.value);
        let np = fd_grad(&p, &mut |x| triplet_loss(&a, x, &n, 0.6).unwrap().0.value);
        let nn = fd_grad(&n, &mut |x| triplet_loss(&a, &p, x, 0.6).unwrap().0.value);
        assert_grad_close(&da, &na, 1e-4);
        assert_grad_close(&dp, &np, 1e-4);
        assert_grad_close(&dn, &nn, 1e-4);
    }

    /// Exhaustive O(B^3) mining oracle: for every (a, p) same-identity pair,
    /// scan every different-identity face for the minimum distance.
    fn mine_oracle(u: &Matrix, v: &Matrix, labels: &[usize]) -> (Vec<Triplet>, u64) {
        let b = labels.len();
        let mut triplets = Vec::new();
        let mut candidates = 0u64;
        for a in 0..b {
            for p in 0..b {
                if labels[p] != labels[a] {
                    continue;
                }
                let mut best: Option<(usize, f64)> = None;
                for n in 0..b {
                    if labels[n] == labels[a] {
                        continue;
                    }
                    candidates += 1;
                    let mut d2 = 0.0;
                    for k in 0..u.cols() {
                        let r = v.get(a, k) - u.get(n, k);
                        d2 += r * r;
                    }
                    match best {
                        Some((_, bd)) if d2 >= bd => {}
                        _ => best = Some((n, d2)),
                    }
                }
                if let Some((neg, _)) = best {
                    triplets.push(Triplet {
                        anchor: a,
                        positive: p,
                        negative: neg,
                    });
                }
            }
        }
        (triplets, candidates)
    }

    #[test]
    fn mining_matches_exhaustive_scan() {
        let u = random_matrix(8, 4, 43);
        let v = random_matrix(8, 4, 47);
        let labels = [0usize, 0, 0, 1, 1, 1, 2, 2];
        let (mined, candidates, none) = mine_hard_negatives(&u, &v, &labels).unwrap();
        let (oracle, oracle_candidates) = mine_oracle(&u, &v, &labels);
        let mut mined_sorted = mined.clone();
        mined_sorted.sort_by_key(|t| (t.anchor, t.positive));
        let mut oracle_sorted = oracle;
        oracle_sorted.sort_by_key(|t| (t.anchor, t.positive));
        assert_eq!(mined_sorted, oracle_sorted);
        assert_eq!(candidates, oracle_candidates);
        assert!(!none);

        // loss over mined triplets matches a brute-force evaluation
        let idx_a: Vec<usize> = mined.iter().map(|t| t.anchor).collect();
        let idx_p: Vec<usize> = mined.iter().map(|t| t.positive).collect();
        let idx_n: Vec<usize> = mined.iter().map(|t| t.negative).collect();
        let (out, _, _, _) = triplet_loss(
            &v.gather_rows(&idx_a),
            &u.gather_rows(&idx_p),
            &u.gather_rows(&idx_n),
            0.6,
        )
        .unwrap();
        let mut brute = 0.0;
        for t in &mined {
            let mut dap = 0.0;
            let mut dan = 0.0;
            for k in 0..4 {
                let rp = v.get(t.anchor, k) - u.get(t.positive, k);
                let rn = v.get(t.anchor, k) - u.get(t.negative, k);
                dap += rp * rp;
                dan += rn * rn;
            }
            brute += (dap - dan + 0.6).max(0.0);
        }
        brute /= mined.len() as f64;
        assert!((out.value - brute).abs() < 1e-12);
    }

    #[test]
    fn mining_single_identity_flags_no_triplets() {
        let u = random_matrix(4, 3, 53);
        let v = random_matrix(4, 3, 59);
        let (triplets, candidates, none) = mine_hard_negatives(&u, &v, &[0, 0, 0, 0]).unwrap();
        assert!(triplets.is_empty());
        assert_eq!(candidates, 0);
        assert!(none);
    }

    #[test]
    fn mining_permutation_invariant_up_to_tiebreak() {
        let u = random_matrix(6, 3, 61);
        let v = random_matrix(6, 3, 67);
        let labels = [0usize, 1, 0, 2, 1, 2];
        let (base, _, _) = mine_hard_negatives(&u, &v, &labels).unwrap();

        let perm = [3usize, 0, 5, 1, 4, 2];
        let up = u.gather_rows(&perm);
        let vp = v.gather_rows(&perm);
        let lp: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let (permuted, _, _) = mine_hard_negatives(&up, &vp, &lp).unwrap();

        // map permuted indices back to original rows and compare as sets
        let mut mapped: Vec<Triplet> = permuted
            .iter()
            .map(|t| Triplet {
                anchor: perm[t.anchor],
                positive: perm[t.positive],
                negative: perm[t.negative],
            })
            .collect();
        mapped.sort_by_key(|t| (t.anchor, t.positive, t.negative));
        let mut base_sorted = base;
        base_sorted.sort_by_key(|t| (t.anchor, t.positive, t.negative));
        assert_eq!(mapped, base_sorted);
    }

    #[test]
    fn contrastive_pair_construction_balanced_and_seeded() {
        let labels = [0usize, 0, 1, 1, 2, 2];
        let mut rng = domain_rng(9, "pairs");
        let pairs = build_contrastive_pairs(&labels, &mut rng);
        assert_eq!(pairs.len(), 12);
        let pos = pairs.iter().filter(|p| p.2).count();
        assert_eq!(pos, 6);
        for &(i, j, genuine) in &pairs {
            if genuine {
                assert_eq!(i, j);
            } else {
                assert_ne!(labels[i], labels[j]);
            }
        }
        let mut rng2 = domain_rng(9, "pairs");
        assert_eq!(pairs, build_contrastive_pairs(&labels, &mut rng2));
    }

    #[test]
    fn count_work_examples() {
        assert_eq!(count_work(LossKind::Contrastive, 32, 100).unwrap(), 4950);
        assert_eq!(count_work(LossKind::CeOnly, 32, 100).unwrap(), 100);
        // joint loss: instances plus in-batch unordered pairs
        let expected = 100 + 3 * (32 * 31 / 2) + (4 * 3 / 2);
        assert_eq!(count_work(LossKind::FopJoint, 32, 100).unwrap() as usize, expected);
        assert!(count_work(LossKind::CeOnly, 200, 100).is_err());
    }

    #[test]
    fn batch_partition_policy() {
        assert_eq!(batch_sizes(256, 128, true).unwrap(), vec![128, 128]);
        assert_eq!(batch_sizes(100, 32, false).unwrap(), vec![32, 32, 32, 4]);
        // singleton remainder merges into the previous batch for pairwise losses
        assert_eq!(batch_sizes(129, 128, true).unwrap(), vec![129]);
        assert_eq!(batch_sizes(129, 128, false).unwrap(), vec![128, 1]);
        assert!(batch_sizes(1, 128, true).is_err());
    }

    #[test]
    fn all_losses_nonnegative_on_random_inputs() {
        for seed in 0..5u64 {
            let logits = random_matrix(6, 3, 100 + seed);
            let fused = random_matrix(6, 4, 200 + seed);
            let labels = [0usize, 1, 2, 0, 1, 2];
            let bank = {
                let mut b = CenterBank::new(3, 4);
                b.centers = random_matrix(3, 4, 300 + seed);
                b
            };
            assert!(ce_loss(&logits, &labels).unwrap().0.value >= 0.0);
            assert!(oc_loss(&fused, &labels).unwrap().0.value >= 0.0);
            assert!(fop_joint(&logits, &fused, &labels, 1.0).unwrap().0.value >= 0.0);
            assert!(center_loss(&fused, &labels, &bank).unwrap().0.value >= 0.0);
            assert!(git_loss(&fused, &labels, &bank).unwrap().0.value >= 0.0);
        }
    }
}
