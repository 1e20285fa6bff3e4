//! Flat key=value run configuration.
//!
//! One scalar per line, `#` comments, unknown keys rejected. Every knob in
//! the toolkit is a scalar (lists are comma-joined scalars), so a flat file
//! round-trips exactly: `defaults` prints the full schema and feeding that
//! back reproduces the defaults. A manifest is the same document with
//! `command` and `config_hash` filled in, which makes every manifest a
//! valid `--config` input for the re-run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fopkit::data::{Modality, SplitKind};
use fopkit::error::{Error, Result};
use fopkit::eval::Scorer;
use fopkit::loss::{LossConfig, LossKind};
use fopkit::model::FusionKind;
use fopkit::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    pub synth_identities: usize,
    pub synth_instances_per_identity: usize,
    pub synth_latent_dim: usize,
    pub synth_face_dim: usize,
    pub synth_voice_dim: usize,
    pub synth_noise_sigma: f64,
    pub synth_correlation: f64,
    /// Magnitude of the latent-space language shift; 0 disables the second
    /// voice store. The shift direction is drawn from the seed.
    pub synth_language_shift_mag: f64,

    pub split_kind: SplitKind,
    pub split_train_frac: f64,
    pub split_val_frac: f64,

    pub trials_verification: usize,
    pub trials_matching_per_nc: usize,
    pub trials_gallery_sizes: Vec<usize>,
    pub trials_probe: Modality,

    pub model_embed_dim: usize,
    pub model_fusion: FusionKind,

    pub loss_kind: LossKind,
    pub loss_alpha: f64,
    pub loss_alpha_c: f64,
    pub loss_alpha_g: f64,
    pub loss_margin: f64,
    pub loss_center_beta: f64,

    pub train_epochs: usize,
    pub train_batch_size: usize,
    pub train_lr0: f64,
    pub train_lr_decay: f64,
    pub train_adam_beta1: f64,
    pub train_adam_beta2: f64,
    pub train_adam_eps: f64,
    pub train_keep_best: bool,

    pub eval_task: String,
    pub eval_scorer: Scorer,
    /// none, G, N, A, or GNA (GNA emits all four sub-reports).
    pub eval_strata: String,
    /// Checkpoint path; empty means <out_dir>/checkpoint.fopc.
    pub eval_checkpoint: String,

    pub ablate_alpha_grid: Vec<f64>,
    pub ablate_epochs: usize,

    pub bench_identities: usize,
    pub bench_instances_per_identity: usize,
    pub bench_batch_size: usize,
    pub bench_embed_dim: usize,

    /// Heard/unheard voice store paths; empty means the synth outputs in
    /// out_dir (voice.fvem / voice_alt.fvem).
    pub crosslang_voice_heard: String,
    pub crosslang_voice_unheard: String,

    /// Manifest bookkeeping; absent in user configs.
    pub command: Option<String>,
    pub config_hash: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            synth_identities: 32,
            synth_instances_per_identity: 20,
            synth_latent_dim: 8,
            synth_face_dim: 64,
            synth_voice_dim: 48,
            synth_noise_sigma: 0.1,
            synth_correlation: 0.9,
            synth_language_shift_mag: 0.0,
            split_kind: SplitKind::UnseenUnheard,
            split_train_frac: 0.6,
            split_val_frac: 0.1,
            trials_verification: 2000,
            trials_matching_per_nc: 500,
            trials_gallery_sizes: vec![2, 4, 6, 8, 10],
            trials_probe: Modality::Voice,
            model_embed_dim: 128,
            model_fusion: FusionKind::Gated,
            loss_kind: LossKind::FopJoint,
            loss_alpha: 1.0,
            loss_alpha_c: 1.0,
            loss_alpha_g: 1.0,
            loss_margin: 0.6,
            loss_center_beta: 0.5,
            train_epochs: 50,
            train_batch_size: 128,
            train_lr0: 1e-5,
            train_lr_decay: 0.95,
            train_adam_beta1: 0.9,
            train_adam_beta2: 0.999,
            train_adam_eps: 1e-8,
            train_keep_best: false,
            eval_task: "verify".into(),
            eval_scorer: Scorer::Cosine,
            eval_strata: "none".into(),
            eval_checkpoint: String::new(),
            ablate_alpha_grid: vec![0.0, 0.1, 0.5, 1.0, 2.0, 5.0],
            ablate_epochs: 50,
            bench_identities: 25,
            bench_instances_per_identity: 8,
            bench_batch_size: 32,
            bench_embed_dim: 32,
            crosslang_voice_heard: String::new(),
            crosslang_voice_unheard: String::new(),
            command: None,
            config_hash: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Config(format!("bad value for {key}: {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| parse_num::<T>(key, s.trim()))
        .collect()
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "synth.identities" => self.synth_identities = parse_num(key, value)?,
            "synth.instances_per_identity" => {
                self.synth_instances_per_identity = parse_num(key, value)?
            }
            "synth.latent_dim" => self.synth_latent_dim = parse_num(key, value)?,
            "synth.face_dim" => self.synth_face_dim = parse_num(key, value)?,
            "synth.voice_dim" => self.synth_voice_dim = parse_num(key, value)?,
            "synth.noise_sigma" => self.synth_noise_sigma = parse_num(key, value)?,
            "synth.correlation" => self.synth_correlation = parse_num(key, value)?,
            "synth.language_shift_mag" => self.synth_language_shift_mag = parse_num(key, value)?,
            "split.kind" => self.split_kind = SplitKind::parse(value)?,
            "split.train_frac" => self.split_train_frac = parse_num(key, value)?,
            "split.val_frac" => self.split_val_frac = parse_num(key, value)?,
            "trials.verification" => self.trials_verification = parse_num(key, value)?,
            "trials.matching_per_nc" => self.trials_matching_per_nc = parse_num(key, value)?,
            "trials.gallery_sizes" => self.trials_gallery_sizes = parse_list(key, value)?,
            "trials.probe" => {
                self.trials_probe = Modality::parse(value).map_err(|_| {
                    Error::Config(format!(
                        "bad value for trials.probe: {value:?} (expected face or voice)"
                    ))
                })?
            }
            "model.embed_dim" => self.model_embed_dim = parse_num(key, value)?,
            "model.fusion" => self.model_fusion = FusionKind::parse(value)?,
            "loss.kind" => self.loss_kind = LossKind::parse(value)?,
            "loss.alpha" => self.loss_alpha = parse_num(key, value)?,
            "loss.alpha_c" => self.loss_alpha_c = parse_num(key, value)?,
            "loss.alpha_g" => self.loss_alpha_g = parse_num(key, value)?,
            "loss.margin" => self.loss_margin = parse_num(key, value)?,
            "loss.center_beta" => self.loss_center_beta = parse_num(key, value)?,
            "train.epochs" => self.train_epochs = parse_num(key, value)?,
            "train.batch_size" => self.train_batch_size = parse_num(key, value)?,
            "train.lr0" => self.train_lr0 = parse_num(key, value)?,
            "train.lr_decay" => self.train_lr_decay = parse_num(key, value)?,
            "train.adam_beta1" => self.train_adam_beta1 = parse_num(key, value)?,
            "train.adam_beta2" => self.train_adam_beta2 = parse_num(key, value)?,
            "train.adam_eps" => self.train_adam_eps = parse_num(key, value)?,
            "train.keep_best" => self.train_keep_best = parse_num(key, value)?,
            "eval.task" => match value {
                "verify" | "match" => self.eval_task = value.into(),
                other => {
                    return Err(Error::Config(format!(
                        "bad value for eval.task: {other:?} (expected verify or match)"
                    )))
                }
            },
            "eval.scorer" => self.eval_scorer = Scorer::parse(value)?,
            "eval.strata" => match value {
                "none" | "G" | "N" | "A" | "GNA" => self.eval_strata = value.into(),
                other => {
                    return Err(Error::Config(format!(
                        "bad value for eval.strata: {other:?} (expected none, G, N, A or GNA)"
                    )))
                }
            },
            "eval.checkpoint" => self.eval_checkpoint = value.into(),
            "ablate.alpha_grid" => self.ablate_alpha_grid = parse_list(key, value)?,
            "ablate.epochs" => self.ablate_epochs = parse_num(key, value)?,
            "bench.identities" => self.bench_identities = parse_num(key, value)?,
            "bench.instances_per_identity" => {
                self.bench_instances_per_identity = parse_num(key, value)?
            }
            "bench.batch_size" => self.bench_batch_size = parse_num(key, value)?,
            "bench.embed_dim" => self.bench_embed_dim = parse_num(key, value)?,
            "crosslang.voice_heard" => self.crosslang_voice_heard = value.into(),
            "crosslang.voice_unheard" => self.crosslang_voice_unheard = value.into(),
            "command" => self.command = Some(value.into()),
            "config_hash" => self.config_hash = Some(value.into()),
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                offset: (lineno + 1) as u64,
                message: format!("expected key=value, got {raw:?}"),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    /// Canonical serialization: fixed key order, shortest round-trip floats.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("seed", self.seed.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("synth.identities", self.synth_identities.to_string());
        put(
            "synth.instances_per_identity",
            self.synth_instances_per_identity.to_string(),
        );
        put("synth.latent_dim", self.synth_latent_dim.to_string());
        put("synth.face_dim", self.synth_face_dim.to_string());
        put("synth.voice_dim", self.synth_voice_dim.to_string());
        put("synth.noise_sigma", self.synth_noise_sigma.to_string());
        put("synth.correlation", self.synth_correlation.to_string());
        put(
            "synth.language_shift_mag",
            self.synth_language_shift_mag.to_string(),
        );
        put("split.kind", self.split_kind.as_str().into());
        put("split.train_frac", self.split_train_frac.to_string());
        put("split.val_frac", self.split_val_frac.to_string());
        put("trials.verification", self.trials_verification.to_string());
        put(
            "trials.matching_per_nc",
            self.trials_matching_per_nc.to_string(),
        );
        put("trials.gallery_sizes", join(&self.trials_gallery_sizes));
        put("trials.probe", self.trials_probe.as_str().into());
        put("model.embed_dim", self.model_embed_dim.to_string());
        put("model.fusion", self.model_fusion.as_str().into());
        put("loss.kind", self.loss_kind.as_str().into());
        put("loss.alpha", self.loss_alpha.to_string());
        put("loss.alpha_c", self.loss_alpha_c.to_string());
        put("loss.alpha_g", self.loss_alpha_g.to_string());
        put("loss.margin", self.loss_margin.to_string());
        put("loss.center_beta", self.loss_center_beta.to_string());
        put("train.epochs", self.train_epochs.to_string());
        put("train.batch_size", self.train_batch_size.to_string());
        put("train.lr0", self.train_lr0.to_string());
        put("train.lr_decay", self.train_lr_decay.to_string());
        put("train.adam_beta1", self.train_adam_beta1.to_string());
        put("train.adam_beta2", self.train_adam_beta2.to_string());
        put("train.adam_eps", self.train_adam_eps.to_string());
        put("train.keep_best", self.train_keep_best.to_string());
        put("eval.task", self.eval_task.clone());
        put("eval.scorer", self.eval_scorer.as_str().into());
        put("eval.strata", self.eval_strata.clone());
        put("eval.checkpoint", self.eval_checkpoint.clone());
        put("ablate.alpha_grid", join(&self.ablate_alpha_grid));
        put("ablate.epochs", self.ablate_epochs.to_string());
        put("bench.identities", self.bench_identities.to_string());
        put(
            "bench.instances_per_identity",
            self.bench_instances_per_identity.to_string(),
        );
        put("bench.batch_size", self.bench_batch_size.to_string());
        put("bench.embed_dim", self.bench_embed_dim.to_string());
        put("crosslang.voice_heard", self.crosslang_voice_heard.clone());
        put(
            "crosslang.voice_unheard",
            self.crosslang_voice_unheard.clone(),
        );
        s
    }

    /// FNV-1a hash of the canonical serialization (command/hash excluded).
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.serialize().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        format!("{h:016x}")
    }

    /// Manifest: canonical config plus command and hash; itself a valid
    /// config file.
    pub fn manifest(&self, command: &str) -> String {
        format!(
            "# fopkit manifest: re-run with `fopkit {} --config <this file>`\ncommand={}\nconfig_hash={}\n{}",
            command,
            command,
            self.hash(),
            self.serialize()
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train_epochs,
            batch_size: self.train_batch_size,
            lr0: self.train_lr0,
            lr_decay: self.train_lr_decay,
            adam_beta1: self.train_adam_beta1,
            adam_beta2: self.train_adam_beta2,
            adam_eps: self.train_adam_eps,
            seed: self.seed,
            loss: self.loss_config(),
            keep_best: self.train_keep_best,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            kind: self.loss_kind,
            alpha: self.loss_alpha,
            alpha_c: self.loss_alpha_c,
            alpha_g: self.loss_alpha_g,
            margin: self.loss_margin,
            center_beta: self.loss_center_beta,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        if self.eval_checkpoint.is_empty() {
            self.out_dir.join("checkpoint.fopc")
        } else {
            PathBuf::from(&self.eval_checkpoint)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_exactly() {
        let d = RunConfig::default();
        let text = d.serialize();
        let parsed = RunConfig::parse_str(&text, Path::new("<defaults>")).unwrap();
        assert_eq!(parsed, d);
        assert_eq!(parsed.serialize(), text);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse_str("nope=1\n", Path::new("<t>")).unwrap_err();
        assert!(err.to_string().contains("unknown configuration key"));
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = RunConfig::parse_str("# comment\n\nseed=7 # trailing\n", Path::new("<t>")).unwrap();
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn manifest_is_a_valid_config() {
        let cfg = RunConfig {
            seed: 9,
            ..RunConfig::default()
        };
        let manifest = cfg.manifest("train");
        let parsed = RunConfig::parse_str(&manifest, Path::new("<m>")).unwrap();
        assert_eq!(parsed.seed, 9);
        assert_eq!(parsed.command.as_deref(), Some("train"));
        assert_eq!(parsed.config_hash.as_deref(), Some(cfg.hash().as_str()));
        // hash ignores the bookkeeping keys
        assert_eq!(parsed.hash(), cfg.hash());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 43,
            ..RunConfig::default()
        };
        assert_ne!(a.hash(), b.hash());
    }
}
