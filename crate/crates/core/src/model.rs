//! The fusion-and-orthogonal-projection network.
//!
//! Two modality-specific affine projections map face and voice features into
//! a shared d-dimensional space, both are L2-normalized, and the pair is
//! fused into a single embedding. Gated fusion computes per-coordinate
//! attention scores k = sigmoid(affine([u, v])) and blends
//! l = k ⊙ tanh(u) + (1-k) ⊙ tanh(v); the linear baseline just sums u + v.
//! A bias-free linear classifier over identities produces logits from l.
//!
//! The graph is fixed, so backward is a hand-composed chain over the op
//! backward functions. Losses feed gradients in at any of the taps (logits,
//! fused embedding, projected u/v) and everything upstream of a tap receives
//! the correctly accumulated gradient.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Parameter};
use crate::ops;
use crate::rng::domain_rng;

const CHECKPOINT_MAGIC: [u8; 4] = *b"FOPC";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionKind {
    Gated,
    Linear,
}

impl FusionKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gated" => Ok(FusionKind::Gated),
            "linear" => Ok(FusionKind::Linear),
            other => Err(Error::Config(format!(
                "unknown fusion kind {other:?} (expected gated or linear)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Gated => "gated",
            FusionKind::Linear => "linear",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FopConfig {
    pub face_dim: usize,
    pub voice_dim: usize,
    pub embed_dim: usize,
    pub num_identities: usize,
    pub fusion: FusionKind,
}

impl FopConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("face_dim", self.face_dim),
            ("voice_dim", self.voice_dim),
            ("embed_dim", self.embed_dim),
            ("num_identities", self.num_identities),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// All trainable weights: two projections, the attention layer, and the
/// identity classifier (bias-free).
#[derive(Clone, Debug)]
pub struct FopParams {
    pub face_w: Parameter,
    pub face_b: Parameter,
    pub voice_w: Parameter,
    pub voice_b: Parameter,
    pub att_w: Parameter,
    pub att_b: Parameter,
    pub classifier: Parameter,
}

impl FopParams {
    /// Seeded init: weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
    pub fn init(config: &FopConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = domain_rng(seed, "init");
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Matrix::from_vec(rows, cols, data).expect("sized by construction")
        };
        let (f, v, d, c) = (
            config.face_dim,
            config.voice_dim,
            config.embed_dim,
            config.num_identities,
        );
        Ok(FopParams {
            face_w: Parameter::new("face_w", uniform(f, d)),
            face_b: Parameter::new("face_b", Matrix::zeros(1, d)),
            voice_w: Parameter::new("voice_w", uniform(v, d)),
            voice_b: Parameter::new("voice_b", Matrix::zeros(1, d)),
            att_w: Parameter::new("att_w", uniform(2 * d, d)),
            att_b: Parameter::new("att_b", Matrix::zeros(1, d)),
            classifier: Parameter::new("classifier", uniform(d, c)),
        })
    }

    pub fn params(&self) -> [&Parameter; 7] {
        [
            &self.face_w,
            &self.face_b,
            &self.voice_w,
            &self.voice_b,
            &self.att_w,
            &self.att_b,
            &self.classifier,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 7] {
        [
            &mut self.face_w,
            &mut self.face_b,
            &mut self.voice_w,
            &mut self.voice_b,
            &mut self.att_w,
            &mut self.att_b,
            &mut self.classifier,
        ]
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Infer the config this parameter set was built for.
    pub fn config(&self, fusion: FusionKind) -> FopConfig {
        FopConfig {
            face_dim: self.face_w.value.rows(),
            voice_dim: self.voice_w.value.rows(),
            embed_dim: self.face_w.value.cols(),
            num_identities: self.classifier.value.cols(),
            fusion,
        }
    }
}

/// Every intermediate of one forward pass, retained for backward.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub face_in: Matrix,
    pub voice_in: Matrix,
    /// Projection outputs before normalization.
    pub u_raw: Matrix,
    pub v_raw: Matrix,
    /// Unit-norm projected embeddings.
    pub u: Matrix,
    pub v: Matrix,
    /// Gated-fusion intermediates; None under linear fusion.
    pub gate: Option<GateCache>,
    /// Fused embedding l.
    pub fused: Matrix,
    pub logits: Matrix,
}

#[derive(Clone, Debug)]
pub struct GateCache {
    pub concat: Matrix,
    pub k: Matrix,
    pub tanh_u: Matrix,
    pub tanh_v: Matrix,
}

/// Upstream gradients entering the graph at the loss attachment points.
#[derive(Clone, Debug, Default)]
pub struct GradTaps {
    pub logits: Option<Matrix>,
    pub fused: Option<Matrix>,
    pub u: Option<Matrix>,
    pub v: Option<Matrix>,
}

/// Project one modality batch: affine then row-wise L2 normalization.
pub fn project(batch: &Matrix, w: &Parameter, b: &Parameter) -> Result<Matrix> {
    Ok(ops::l2_normalize(&ops::affine(batch, w, b)?, ops::L2_NORM_EPS))
}

/// Attention scores k = sigmoid(affine([u, v])); entries strictly in (0, 1).
pub fn attention_scores(u: &Matrix, v: &Matrix, params: &FopParams) -> Result<Matrix> {
    let concat = ops::concat_cols(u, v)?;
    Ok(ops::sigmoid(&ops::affine(
        &concat,
        &params.att_w,
        &params.att_b,
    )?))
}

/// Gated fusion l = k ⊙ tanh(u) + (1-k) ⊙ tanh(v).
pub fn gated_fuse(u: &Matrix, v: &Matrix, k: &Matrix) -> Result<Matrix> {
    let tu = ops::tanh(u);
    let tv = ops::tanh(v);
    let a = ops::hadamard(k, &tu)?;
    let b = k.zip_map(&tv, |kk, t| (1.0 - kk) * t)?;
    a.zip_map(&b, |x, y| x + y)
}

/// Linear fusion baseline: element-wise sum.
pub fn linear_fuse(u: &Matrix, v: &Matrix) -> Result<Matrix> {
    if u.shape() != v.shape() {
        return Err(Error::dim("linear_fuse", u.shape_str(), v.shape_str()));
    }
    u.zip_map(v, |a, b| a + b)
}

/// Full forward pass; the cache retains every intermediate for backward.
pub fn forward(
    face_batch: &Matrix,
    voice_batch: &Matrix,
    params: &FopParams,
    config: &FopConfig,
) -> Result<ForwardCache> {
    if face_batch.rows() == 0 {
        return Err(Error::BatchTooSmall {
            context: "forward",
            min: 1,
            got: 0,
        });
    }
    if face_batch.rows() != voice_batch.rows() {
        return Err(Error::dim(
            "forward (row-aligned batches)",
            format!("{} rows", face_batch.rows()),
            format!("{} rows", voice_batch.rows()),
        ));
    }
    if face_batch.cols() != config.face_dim || voice_batch.cols() != config.voice_dim {
        return Err(Error::dim(
            "forward (modality dims)",
            format!("face {} / voice {}", config.face_dim, config.voice_dim),
            format!("face {} / voice {}", face_batch.cols(), voice_batch.cols()),
        ));
    }

    let u_raw = ops::affine(face_batch, &params.face_w, &params.face_b)?;
    let v_raw = ops::affine(voice_batch, &params.voice_w, &params.voice_b)?;
    let u = ops::l2_normalize(&u_raw, ops::L2_NORM_EPS);
    let v = ops::l2_normalize(&v_raw, ops::L2_NORM_EPS);

    let (gate, fused) = match config.fusion {
        FusionKind::Gated => {
            let concat = ops::concat_cols(&u, &v)?;
            let k = ops::sigmoid(&ops::affine(&concat, &params.att_w, &params.att_b)?);
            let tanh_u = ops::tanh(&u);
            let tanh_v = ops::tanh(&v);
            let weighted_u = ops::hadamard(&k, &tanh_u)?;
            let weighted_v = k.zip_map(&tanh_v, |kk, t| (1.0 - kk) * t)?;
            let fused = weighted_u.zip_map(&weighted_v, |a, b| a + b)?;
            (
                Some(GateCache {
                    concat,
                    k,
                    tanh_u,
                    tanh_v,
                }),
                fused,
            )
        }
        FusionKind::Linear => (None, u.zip_map(&v, |a, b| a + b)?),
    };

    let logits = fused.matmul(&params.classifier.value)?;

    Ok(ForwardCache {
        face_in: face_batch.clone(),
        voice_in: voice_batch.clone(),
        u_raw,
        v_raw,
        u,
        v,
        gate,
        fused,
        logits,
    })
}

/// Reverse pass: accumulates parameter gradients from the supplied taps.
pub fn backward(cache: &ForwardCache, params: &mut FopParams, taps: &GradTaps) -> Result<()> {
    let (b, d) = cache.fused.shape();

    // dL/dl from the logits tap plus any direct fused-embedding tap.
    let mut d_fused = Matrix::zeros(b, d);
    if let Some(d_logits) = &taps.logits {
        let dw = cache.fused.matmul_tn(d_logits)?;
        params.classifier.grad.axpy(1.0, &dw)?;
        d_fused.axpy(1.0, &d_logits.matmul_nt(&params.classifier.value)?)?;
    }
    if let Some(g) = &taps.fused {
        d_fused.axpy(1.0, g)?;
    }

    // Through the fusion into the normalized embeddings.
    let mut d_u = Matrix::zeros(b, d);
    let mut d_v = Matrix::zeros(b, d);
    match &cache.gate {
        Some(gate) => {
            // l = k ⊙ tanh(u) + (1-k) ⊙ tanh(v)
            let mut d_k = Matrix::zeros(b, d);
            for r in 0..b {
                let g = d_fused.row(r);
                let tu = gate.tanh_u.row(r);
                let tv = gate.tanh_v.row(r);
                let dst = d_k.row_mut(r);
                for c in 0..d {
                    dst[c] = g[c] * (tu[c] - tv[c]);
                }
            }
            let d_tanh_u = ops::hadamard(&d_fused, &gate.k)?;
            let d_tanh_v = d_fused.zip_map(&gate.k, |g, kk| g * (1.0 - kk))?;
            d_u.axpy(1.0, &ops::tanh_backward(&gate.tanh_u, &d_tanh_u)?)?;
            d_v.axpy(1.0, &ops::tanh_backward(&gate.tanh_v, &d_tanh_v)?)?;

            // k = sigmoid(affine(concat))
            let d_att_pre = ops::sigmoid_backward(&gate.k, &d_k)?;
            let d_concat =
                ops::affine_backward(&gate.concat, &mut params.att_w, &mut params.att_b, &d_att_pre)?;
            let (d_cu, d_cv) = ops::split_cols(&d_concat, d)?;
            d_u.axpy(1.0, &d_cu)?;
            d_v.axpy(1.0, &d_cv)?;
        }
        None => {
            d_u.axpy(1.0, &d_fused)?;
            d_v.axpy(1.0, &d_fused)?;
        }
    }

    // External taps directly on the projected embeddings.
    if let Some(g) = &taps.u {
        d_u.axpy(1.0, g)?;
    }
    if let Some(g) = &taps.v {
        d_v.axpy(1.0, g)?;
    }

    // Through normalization and the projections.
    let d_u_raw = ops::l2_normalize_backward(&cache.u_raw, ops::L2_NORM_EPS, &d_u)?;
    let d_v_raw = ops::l2_normalize_backward(&cache.v_raw, ops::L2_NORM_EPS, &d_v)?;
    ops::affine_backward(&cache.face_in, &mut params.face_w, &mut params.face_b, &d_u_raw)?;
    ops::affine_backward(
        &cache.voice_in,
        &mut params.voice_w,
        &mut params.voice_b,
        &d_v_raw,
    )?;
    Ok(())
}

// ── Checkpoint format ───────────────────────────────────────────────────────
//
// Binary layout, all integers little-endian:
//   magic "FOPC", version u32, face_dim u32, voice_dim u32, embed_dim u32,
//   num_identities u32, fusion u8 (0 gated, 1 linear), then the 7 parameters
//   in fixed order, each as: name_len u32, name bytes, rows u32, cols u32,
//   rows*cols f64 values. Round-trips bit-exactly.

pub fn save_checkpoint(path: &Path, config: &FopConfig, params: &FopParams) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let werr = |e| Error::io(path, e);
    w.write_all(&CHECKPOINT_MAGIC).map_err(werr)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(werr)?;
    for dim in [
        config.face_dim,
        config.voice_dim,
        config.embed_dim,
        config.num_identities,
    ] {
        w.write_all(&(dim as u32).to_le_bytes()).map_err(werr)?;
    }
    w.write_all(&[match config.fusion {
        FusionKind::Gated => 0u8,
        FusionKind::Linear => 1u8,
    }])
    .map_err(werr)?;
    for p in params.params() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(werr)?;
        w.write_all(name).map_err(werr)?;
        w.write_all(&(p.value.rows() as u32).to_le_bytes()).map_err(werr)?;
        w.write_all(&(p.value.cols() as u32).to_le_bytes()).map_err(werr)?;
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes()).map_err(werr)?;
        }
    }
    w.flush().map_err(werr)?;
    Ok(())
}

struct Reader<'a, R> {
    inner: R,
    pos: u64,
    path: &'a Path,
}

impl<'a, R: Read> Reader<'a, R> {
    fn new(inner: R, path: &'a Path) -> Self {
        Reader { inner, pos: 0, path }
    }

    fn bytes(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| Error::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos,
            message: format!("reading {what}: {e}"),
        })?;
        self.pos += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.bytes(&mut b, what)?;
        Ok(b[0])
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        if len > 1 << 20 {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                offset: self.pos,
                message: format!("{what} length {len} is implausible"),
            });
        }
        let mut buf = vec![0u8; len];
        self.bytes(&mut buf, what)?;
        String::from_utf8(buf).map_err(|e| Error::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos,
            message: format!("{what} is not utf-8: {e}"),
        })
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(FopConfig, FopParams)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(BufReader::new(file), path);

    let mut magic = [0u8; 4];
    r.bytes(&mut magic, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: CHECKPOINT_MAGIC,
            got: magic,
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadVersion {
            path: path.to_path_buf(),
            expected: CHECKPOINT_VERSION,
            got: version,
        });
    }
    let face_dim = r.u32("face_dim")? as usize;
    let voice_dim = r.u32("voice_dim")? as usize;
    let embed_dim = r.u32("embed_dim")? as usize;
    let num_identities = r.u32("num_identities")? as usize;
    let fusion = match r.u8("fusion kind")? {
        0 => FusionKind::Gated,
        1 => FusionKind::Linear,
        other => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: r.pos,
                message: format!("unknown fusion code {other}"),
            })
        }
    };
    let config = FopConfig {
        face_dim,
        voice_dim,
        embed_dim,
        num_identities,
        fusion,
    };
    config.validate()?;

    let expected: [(&str, usize, usize); 7] = [
        ("face_w", face_dim, embed_dim),
        ("face_b", 1, embed_dim),
        ("voice_w", voice_dim, embed_dim),
        ("voice_b", 1, embed_dim),
        ("att_w", 2 * embed_dim, embed_dim),
        ("att_b", 1, embed_dim),
        ("classifier", embed_dim, num_identities),
    ];
    let mut loaded = Vec::with_capacity(7);
    for (name, rows, cols) in expected {
        let got_name = r.string("parameter name")?;
        if got_name != name {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: r.pos,
                message: format!("expected parameter {name}, found {got_name}"),
            });
        }
        let got_rows = r.u32("rows")? as usize;
        let got_cols = r.u32("cols")? as usize;
        if (got_rows, got_cols) != (rows, cols) {
            return Err(Error::dim(
                format!("checkpoint parameter {name}"),
                format!("{rows}x{cols}"),
                format!("{got_rows}x{got_cols}"),
            ));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64("parameter value")?);
        }
        loaded.push(Parameter::new(name, Matrix::from_vec(rows, cols, data)?));
    }
    let mut it = loaded.into_iter();
    let params = FopParams {
        face_w: it.next().unwrap(),
        face_b: it.next().unwrap(),
        voice_w: it.next().unwrap(),
        voice_b: it.next().unwrap(),
        att_w: it.next().unwrap(),
        att_b: it.next().unwrap(),
        classifier: it.next().unwrap(),
    };
    Ok((config, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(fusion: FusionKind) -> FopConfig {
        FopConfig {
            face_dim: 2,
            voice_dim: 2,
            embed_dim: 2,
            num_identities: 2,
            fusion,
        }
    }

    fn ones(rows: usize, cols: usize, v: f64) -> Matrix {
        Matrix::from_vec(rows, cols, vec![v; rows * cols]).unwrap()
    }

    #[test]
    fn project_identity_projection() {
        let cfg = tiny_config(FusionKind::Gated);
        let mut params = FopParams::init(&cfg, 1).unwrap();
        params.face_w.value = Matrix::identity(2);
        params.face_b.value = Matrix::zeros(1, 2);
        let x = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let u = project(&x, &params.face_w, &params.face_b).unwrap();
        assert_eq!(u, x);
    }

    #[test]
    fn project_rows_unit_norm() {
        let cfg = FopConfig {
            face_dim: 5,
            voice_dim: 3,
            embed_dim: 4,
            num_identities: 3,
            fusion: FusionKind::Gated,
        };
        let params = FopParams::init(&cfg, 3).unwrap();
        let x = Matrix::from_vec(4, 5, (1..=20).map(f64::from).collect()).unwrap();
        let u = project(&x, &params.face_w, &params.face_b).unwrap();
        for r in 0..u.rows() {
            let norm: f64 = u.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_zero_weights_give_half() {
        let cfg = tiny_config(FusionKind::Gated);
        let mut params = FopParams::init(&cfg, 5).unwrap();
        params.att_w.value.fill(0.0);
        params.att_b.value.fill(0.0);
        let u = ones(3, 2, 0.4);
        let v = ones(3, 2, -0.2);
        let k = attention_scores(&u, &v, &params).unwrap();
        for &x in k.data() {
            assert_eq!(x, 0.5);
        }
    }

    #[test]
    fn attention_saturates_with_large_bias() {
        let cfg = tiny_config(FusionKind::Gated);
        let mut params = FopParams::init(&cfg, 5).unwrap();
        params.att_w.value.fill(0.0);
        params.att_b.value.fill(20.0);
        let u = ones(1, 2, 0.1);
        let v = ones(1, 2, 0.1);
        let k = attention_scores(&u, &v, &params).unwrap();
        for &x in k.data() {
            assert!(x > 1.0 - 1e-8);
        }
    }

    #[test]
    fn attention_scores_in_open_unit_interval() {
        let cfg = FopConfig {
            face_dim: 4,
            voice_dim: 4,
            embed_dim: 6,
            num_identities: 3,
            fusion: FusionKind::Gated,
        };
        let params = FopParams::init(&cfg, 11).unwrap();
        let u = Matrix::from_vec(5, 6, (0..30).map(|i| (i as f64).sin()).collect()).unwrap();
        let v = Matrix::from_vec(5, 6, (0..30).map(|i| (i as f64).cos()).collect()).unwrap();
        let k = attention_scores(&u, &v, &params).unwrap();
        for &x in k.data() {
            assert!(x > 0.0 && x < 1.0);
        }
    }

    #[test]
    fn gated_fuse_gate_extremes_and_cancellation() {
        let u = Matrix::from_vec(1, 3, vec![0.3, -0.8, 2.0]).unwrap();
        let v = Matrix::from_vec(1, 3, vec![-1.0, 0.5, 0.1]).unwrap();
        let open = ones(1, 3, 1.0);
        let closed = ones(1, 3, 0.0);
        assert_eq!(gated_fuse(&u, &v, &open).unwrap(), ops::tanh(&u));
        assert_eq!(gated_fuse(&u, &v, &closed).unwrap(), ops::tanh(&v));
        // u = v: the gate cancels for any k.
        let k = Matrix::from_vec(1, 3, vec![0.2, 0.7, 0.9]).unwrap();
        let fused = gated_fuse(&u, &u, &k).unwrap();
        for (a, b) in fused.data().iter().zip(ops::tanh(&u).data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gated_fuse_half_gate_is_mean() {
        let u = Matrix::from_vec(1, 2, vec![0.9, -0.4]).unwrap();
        let v = Matrix::from_vec(1, 2, vec![-0.3, 1.2]).unwrap();
        let half = ones(1, 2, 0.5);
        let fused = gated_fuse(&u, &v, &half).unwrap();
        let tu = ops::tanh(&u);
        let tv = ops::tanh(&v);
        for c in 0..2 {
            assert!((fused.get(0, c) - 0.5 * (tu.get(0, c) + tv.get(0, c))).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_fuse_trivials() {
        let u = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let v = Matrix::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
        let zero = Matrix::zeros(1, 2);
        assert_eq!(linear_fuse(&u, &zero).unwrap(), u);
        let neg = u.map(|x| -x);
        assert_eq!(linear_fuse(&u, &neg).unwrap(), zero);
        assert_eq!(linear_fuse(&u, &v).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn forward_zero_weights_zero_logits() {
        let cfg = tiny_config(FusionKind::Gated);
        let mut params = FopParams::init(&cfg, 9).unwrap();
        for p in params.params_mut() {
            p.value.fill(0.0);
        }
        let face = ones(1, 2, 0.5);
        let voice = ones(1, 2, -0.5);
        let cache = forward(&face, &voice, &params, &cfg).unwrap();
        assert_eq!(cache.logits.data(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_logit_shape_law() {
        let cfg = FopConfig {
            face_dim: 7,
            voice_dim: 4,
            embed_dim: 5,
            num_identities: 9,
            fusion: FusionKind::Gated,
        };
        let params = FopParams::init(&cfg, 2).unwrap();
        let face = ones(6, 7, 0.3);
        let voice = ones(6, 4, 0.7);
        let cache = forward(&face, &voice, &params, &cfg).unwrap();
        assert_eq!(cache.logits.shape(), (6, 9));
    }

    #[test]
    fn gate_convexity_and_range() {
        let cfg = FopConfig {
            face_dim: 3,
            voice_dim: 3,
            embed_dim: 4,
            num_identities: 2,
            fusion: FusionKind::Gated,
        };
        let params = FopParams::init(&cfg, 21).unwrap();
        let face = Matrix::from_vec(5, 3, (0..15).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let voice = Matrix::from_vec(5, 3, (0..15).map(|i| (i as f64 * 1.3).cos()).collect()).unwrap();
        let cache = forward(&face, &voice, &params, &cfg).unwrap();
        let gate = cache.gate.as_ref().unwrap();
        for r in 0..5 {
            for c in 0..4 {
                let l = cache.fused.get(r, c);
                let lo = gate.tanh_u.get(r, c).min(gate.tanh_v.get(r, c));
                let hi = gate.tanh_u.get(r, c).max(gate.tanh_v.get(r, c));
                assert!(l >= lo - 1e-15 && l <= hi + 1e-15);
                assert!(l > -1.0 && l < 1.0);
            }
        }
    }

    #[test]
    fn forward_deterministic_bitwise() {
        let cfg = tiny_config(FusionKind::Gated);
        let face = Matrix::from_vec(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let voice = Matrix::from_vec(3, 2, vec![0.6, 0.5, 0.4, 0.3, 0.2, 0.1]).unwrap();
        let p1 = FopParams::init(&cfg, 77).unwrap();
        let p2 = FopParams::init(&cfg, 77).unwrap();
        let c1 = forward(&face, &voice, &p1, &cfg).unwrap();
        let c2 = forward(&face, &voice, &p2, &cfg).unwrap();
        assert_eq!(c1.fused, c2.fused);
        assert_eq!(c1.logits, c2.logits);
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fopc");
        let cfg = FopConfig {
            face_dim: 6,
            voice_dim: 5,
            embed_dim: 4,
            num_identities: 3,
            fusion: FusionKind::Linear,
        };
        let params = FopParams::init(&cfg, 13).unwrap();
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        for (a, b) in params.params().iter().zip(params2.params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        // Bytes themselves round-trip.
        save_checkpoint(&dir.path().join("again.fopc"), &cfg2, &params2).unwrap();
        let b1 = std::fs::read(&path).unwrap();
        let b2 = std::fs::read(dir.path().join("again.fopc")).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn checkpoint_truncation_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fopc");
        let cfg = tiny_config(FusionKind::Gated);
        let params = FopParams::init(&cfg, 1).unwrap();
        save_checkpoint(&path, &cfg, &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match load_checkpoint(&path).unwrap_err() {
            Error::Parse { offset, .. } => assert!(offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fopc");
        std::fs::write(&path, b"NOPExxxxxxxxxxxxxxxx").unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            Error::BadMagic { .. }
        ));
    }
}
