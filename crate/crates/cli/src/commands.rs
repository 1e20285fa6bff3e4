//! Command implementations: synth, train, eval, ablate-alpha, bench-losses,
//! crosslang. Every command records a manifest (the fully resolved config
//! plus its hash) next to its outputs; re-running a command from its
//! manifest reproduces the outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fopkit::bench;
use fopkit::data::{
    load_split, load_store_binary, make_split, save_split, save_store_binary, synthesize,
    EmbeddingStore, SplitFractions, SplitSpec, SyntheticSpec,
};
use fopkit::error::{Error, Result};
use fopkit::eval::{
    build_matching_trials, build_verification_trials, cross_language_eval,
    load_matching_trials, load_verification_trials, match_trials_with_model, per_class_stats,
    project_store, save_matching_trials, save_verification_trials, score_verification_trials,
    stratify, verify_summary, StratKey, VerifySummary,
};
use fopkit::loss::LossKind;
use fopkit::matrix::Matrix;
use fopkit::model::{load_checkpoint, save_checkpoint, FopConfig, FopParams};
use fopkit::train::{diagnostics_csv, fit, TrainData};

use crate::config::RunConfig;

/// Evaluation worker cap from the FOPKIT_THREADS environment variable.
pub fn workers() -> usize {
    std::env::var("FOPKIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn write_manifest(cfg: &RunConfig, command: &str, filename: &str) -> Result<()> {
    write_text(&cfg.out_dir.join(filename), &cfg.manifest(command))
}

struct Stores {
    face: EmbeddingStore,
    voice: EmbeddingStore,
}

fn load_stores(cfg: &RunConfig) -> Result<Stores> {
    Ok(Stores {
        face: load_store_binary(&cfg.out_dir.join("face.fvem"))?,
        voice: load_store_binary(&cfg.out_dir.join("voice.fvem"))?,
    })
}

fn load_split_file(cfg: &RunConfig) -> Result<SplitSpec> {
    load_split(&cfg.out_dir.join("split.txt"))
}

/// Row-aligned training view over the listed instance ids with identities
/// re-coded densely (the classifier covers exactly the training identities).
fn build_train_data(
    face: &EmbeddingStore,
    voice: &EmbeddingStore,
    ids: &[String],
) -> Result<(TrainData, usize)> {
    let mut face_idx = Vec::with_capacity(ids.len());
    let mut voice_idx = Vec::with_capacity(ids.len());
    for id in ids {
        face_idx.push(
            face.index_of(id)
                .ok_or_else(|| Error::Data(format!("instance {id} missing from face store")))?,
        );
        voice_idx.push(
            voice
                .index_of(id)
                .ok_or_else(|| Error::Data(format!("instance {id} missing from voice store")))?,
        );
    }
    let mut labels_seen: Vec<usize> = face_idx.iter().map(|&i| face.record(i).label).collect();
    labels_seen.sort_unstable();
    labels_seen.dedup();
    let remap: std::collections::BTreeMap<usize, usize> = labels_seen
        .iter()
        .enumerate()
        .map(|(dense, &orig)| (orig, dense))
        .collect();
    let labels: Vec<usize> = face_idx
        .iter()
        .map(|&i| remap[&face.record(i).label])
        .collect();
    Ok((
        TrainData {
            face: face.matrix_of(&face_idx),
            voice: voice.matrix_of(&voice_idx),
            labels,
        },
        labels_seen.len(),
    ))
}

fn model_config(cfg: &RunConfig, face: &EmbeddingStore, voice: &EmbeddingStore, c: usize) -> FopConfig {
    FopConfig {
        face_dim: face.dim,
        voice_dim: voice.dim,
        embed_dim: cfg.model_embed_dim,
        num_identities: c,
        fusion: cfg.model_fusion,
    }
}

fn synth_spec(cfg: &RunConfig) -> SyntheticSpec {
    let language_shift = fopkit::data::seeded_language_shift(
        cfg.synth_latent_dim,
        cfg.synth_language_shift_mag,
        cfg.seed,
    );
    SyntheticSpec {
        num_identities: cfg.synth_identities,
        instances_per_identity: cfg.synth_instances_per_identity,
        latent_dim: cfg.synth_latent_dim,
        face_dim: cfg.synth_face_dim,
        voice_dim: cfg.synth_voice_dim,
        noise_sigma: cfg.synth_noise_sigma,
        correlation: cfg.synth_correlation,
        language_shift,
        seed: cfg.seed,
    }
}

// ── synth ───────────────────────────────────────────────────────────────────

pub fn cmd_synth(cfg: &RunConfig, force: bool) -> Result<()> {
    let out = &cfg.out_dir;
    if out.exists() && !force {
        return Err(Error::Data(format!(
            "output directory {} exists; pass --force to overwrite",
            out.display()
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let spec = synth_spec(cfg);
    let synth = synthesize(&spec)?;
    save_store_binary(&synth.face, &out.join("face.fvem"))?;
    save_store_binary(&synth.voice, &out.join("voice.fvem"))?;
    if let Some(shifted) = &synth.voice_shifted {
        save_store_binary(shifted, &out.join("voice_alt.fvem"))?;
    }

    let fractions = SplitFractions {
        train: cfg.split_train_frac,
        val: cfg.split_val_frac,
    };
    let split = make_split(&synth.face, &synth.voice, cfg.split_kind, fractions, cfg.seed)?;
    save_split(&split, &out.join("split.txt"))?;

    let (trials, warnings) = build_verification_trials(
        &synth.face,
        &synth.voice,
        &split.test,
        cfg.trials_verification,
        cfg.seed,
    )?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    save_verification_trials(&trials, &synth.face, &synth.voice, &out.join("trials_verify.txt"))?;

    for &n_c in &cfg.trials_gallery_sizes {
        let matching = build_matching_trials(
            &synth.face,
            &synth.voice,
            &split.test,
            n_c,
            cfg.trials_matching_per_nc,
            cfg.trials_probe,
            cfg.seed.wrapping_add(n_c as u64),
        )?;
        save_matching_trials(
            &matching,
            &synth.face,
            &synth.voice,
            &out.join(format!("trials_match_nc{n_c}.txt")),
        )?;
    }

    write_manifest(cfg, "synth", "manifest_synth.txt")?;
    println!(
        "synth: {} instances x 2 modalities ({} identities), split {} train/{} val/{} test, {} verification trials",
        synth.face.len(),
        cfg.synth_identities,
        split.train.len(),
        split.val.len(),
        split.test.len(),
        trials.len()
    );
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────────────

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let stores = load_stores(cfg)?;
    let split = load_split_file(cfg)?;
    let (train_data, c_train) = build_train_data(&stores.face, &stores.voice, &split.train)?;
    let model_cfg = model_config(cfg, &stores.face, &stores.voice, c_train);
    let tcfg = cfg.train_config();

    // validation snapshots need labels the classifier covers, so the
    // validation view only exists when its identities appear in training
    let val_data = if tcfg.keep_best && !split.val.is_empty() {
        let (val, _) = build_train_data(&stores.face, &stores.voice, &split.val)?;
        let compatible = {
            let train_label_of = |id: &String| stores.face.record(stores.face.index_of(id).unwrap()).label;
            let train_set: std::collections::BTreeSet<usize> =
                split.train.iter().map(train_label_of).collect();
            split.val.iter().all(|id| train_set.contains(&train_label_of(id)))
        };
        if compatible {
            Some(val)
        } else {
            eprintln!("warning: validation identities are disjoint from training; best-checkpoint tracking skipped");
            None
        }
    } else {
        None
    };

    let start = std::time::Instant::now();
    let mut params = FopParams::init(&model_cfg, cfg.seed)?;
    let outcome = fit(&train_data, val_data.as_ref(), &tcfg, &model_cfg, &mut params)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }

    let to_save = match &outcome.best {
        Some((epoch, loss, best_params)) => {
            println!("best validation loss {loss} at epoch {epoch}");
            best_params
        }
        None => &params,
    };
    save_checkpoint(&cfg.out_dir.join("checkpoint.fopc"), &model_cfg, to_save)?;
    write_text(
        &cfg.out_dir.join("diagnostics.csv"),
        &diagnostics_csv(&outcome.diagnostics),
    )?;
    write_manifest(cfg, "train", "manifest_train.txt")?;

    let last = outcome.diagnostics.last().expect("at least one epoch");
    println!(
        "train: {} loss over {} instances ({} identities), {} epochs in {:.1}s; final loss {:.6}",
        cfg.loss_kind.as_str(),
        train_data.len(),
        c_train,
        tcfg.epochs,
        start.elapsed().as_secs_f64(),
        last.loss
    );
    Ok(())
}

// ── eval ────────────────────────────────────────────────────────────────────

fn strata_keys(strata: &str) -> Vec<StratKey> {
    match strata {
        "GNA" => vec![
            StratKey::Gender,
            StratKey::Nationality,
            StratKey::AgeGroup,
            StratKey::All,
        ],
        "G" => vec![StratKey::Gender],
        "N" => vec![StratKey::Nationality],
        "A" => vec![StratKey::AgeGroup],
        _ => vec![],
    }
}

fn summary_csv_row(scope: &str, s: &VerifySummary, excluded: usize) -> String {
    format!(
        "{scope},{},{},{},{},{}\n",
        s.auc, s.eer, s.genuine, s.impostor, excluded
    )
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let stores = load_stores(cfg)?;
    let (ckpt_cfg, params) = load_checkpoint(&cfg.checkpoint_path())?;
    if ckpt_cfg.face_dim != stores.face.dim || ckpt_cfg.voice_dim != stores.voice.dim {
        return Err(Error::dim(
            "checkpoint vs stores",
            format!("face {} / voice {}", stores.face.dim, stores.voice.dim),
            format!("face {} / voice {}", ckpt_cfg.face_dim, ckpt_cfg.voice_dim),
        ));
    }
    match cfg.eval_task.as_str() {
        "verify" => eval_verify(cfg, &stores, &params),
        "match" => eval_match(cfg, &stores, &params),
        other => Err(Error::Config(format!("unknown eval task {other:?}"))),
    }
}

fn eval_verify(cfg: &RunConfig, stores: &Stores, params: &FopParams) -> Result<()> {
    let trials_path = cfg.out_dir.join("trials_verify.txt");
    if !trials_path.exists() {
        return Err(Error::Data(format!(
            "missing trial list {} (run synth first)",
            trials_path.display()
        )));
    }
    let trials = load_verification_trials(&trials_path, &stores.face, &stores.voice)?;
    let face_proj = project_store(&stores.face, params)?;
    let voice_proj = project_store(&stores.voice, params)?;
    let n_workers = workers();
    let (scores, degenerate) =
        score_verification_trials(&trials, &face_proj, &voice_proj, cfg.eval_scorer, n_workers);
    let overall = verify_summary(&scores, &trials, degenerate)?;

    let mut csv = String::from("scope,auc,eer,genuine,impostor,excluded\n");
    csv.push_str(&summary_csv_row("overall", &overall, 0));
    let mut table = String::new();
    let _ = writeln!(table, "cross-modal verification ({} trials, scorer {})", trials.len(), cfg.eval_scorer.as_str());
    let _ = writeln!(table, "  {:8} {:>8} {:>8} {:>9} {:>9} {:>9}", "scope", "auc", "eer", "genuine", "impostor", "excluded");
    let _ = writeln!(table, "  {:8} {:>8.4} {:>8.4} {:>9} {:>9} {:>9}", "overall", overall.auc, overall.eer, overall.genuine, overall.impostor, 0);

    for key in strata_keys(&cfg.eval_strata) {
        let (subset, excluded) = stratify(&trials, key);
        let genuine = subset.iter().filter(|t| t.genuine).count();
        let impostor = subset.len() - genuine;
        // a stratum can end up empty or single-class; report it as undefined
        if genuine == 0 || impostor == 0 {
            eprintln!(
                "warning: stratum {} has {} genuine / {} impostor trials; metrics undefined",
                key.as_str(),
                genuine,
                impostor
            );
            let _ = writeln!(table, "  {:8} {:>8} {:>8} {:>9} {:>9} {:>9}", key.as_str(), "-", "-", genuine, impostor, excluded);
            csv.push_str(&format!("{},,,{},{},{}\n", key.as_str(), genuine, impostor, excluded));
            continue;
        }
        let (sub_scores, sub_degen) =
            score_verification_trials(&subset, &face_proj, &voice_proj, cfg.eval_scorer, n_workers);
        let summary = verify_summary(&sub_scores, &subset, sub_degen)?;
        csv.push_str(&summary_csv_row(key.as_str(), &summary, excluded));
        let _ = writeln!(table, "  {:8} {:>8.4} {:>8.4} {:>9} {:>9} {:>9}", key.as_str(), summary.auc, summary.eer, summary.genuine, summary.impostor, excluded);
    }

    write_text(&cfg.out_dir.join("report_verify.csv"), &csv)?;
    write_text(&cfg.out_dir.join("report_verify.txt"), &table)?;
    write_manifest(cfg, "eval", "manifest_eval_verify.txt")?;
    print!("{table}");
    Ok(())
}

fn eval_match(cfg: &RunConfig, stores: &Stores, params: &FopParams) -> Result<()> {
    let face_proj = project_store(&stores.face, params)?;
    let voice_proj = project_store(&stores.voice, params)?;

    let mut csv = String::from("nc,accuracy,ties,evaluated,rejected\n");
    let mut table = String::from("cross-modal matching accuracy\n");
    let _ = writeln!(table, "  {:>4} {:>10} {:>6} {:>10} {:>9}", "nc", "accuracy", "ties", "evaluated", "rejected");
    for &n_c in &cfg.trials_gallery_sizes {
        let path = cfg.out_dir.join(format!("trials_match_nc{n_c}.txt"));
        if !path.exists() {
            return Err(Error::Data(format!(
                "missing trial list {} (run synth first)",
                path.display()
            )));
        }
        let trials = load_matching_trials(&path, &stores.face, &stores.voice)?;
        let result = match_trials_with_model(
            &trials,
            &stores.face,
            &stores.voice,
            &face_proj,
            &voice_proj,
            cfg.eval_scorer,
        );
        for (index, reason) in &result.rejected {
            eprintln!("warning: rejected matching trial {index}: {reason}");
        }
        csv.push_str(&format!(
            "{n_c},{},{},{},{}\n",
            result.accuracy(),
            result.ties,
            result.evaluated,
            result.rejected.len()
        ));
        let _ = writeln!(table, "  {:>4} {:>10.4} {:>6} {:>10} {:>9}", n_c, result.accuracy(), result.ties, result.evaluated, result.rejected.len());
    }
    write_text(&cfg.out_dir.join("report_match.csv"), &csv)?;
    write_text(&cfg.out_dir.join("report_match.txt"), &table)?;
    write_manifest(cfg, "eval", "manifest_eval_match.txt")?;
    print!("{table}");
    Ok(())
}

// ── ablate-alpha ────────────────────────────────────────────────────────────

pub fn cmd_ablate_alpha(cfg: &RunConfig) -> Result<()> {
    if cfg.ablate_alpha_grid.is_empty() {
        return Err(Error::Config("ablate.alpha_grid must be nonempty".into()));
    }
    if let Some(bad) = cfg.ablate_alpha_grid.iter().find(|&&a| a < 0.0 || !a.is_finite()) {
        return Err(Error::Config(format!("negative alpha {bad} rejected")));
    }
    let stores = load_stores(cfg)?;
    let split = load_split_file(cfg)?;
    let (train_data, c_train) = build_train_data(&stores.face, &stores.voice, &split.train)?;
    let model_cfg = model_config(cfg, &stores.face, &stores.voice, c_train);
    let trials = load_verification_trials(
        &cfg.out_dir.join("trials_verify.txt"),
        &stores.face,
        &stores.voice,
    )?;

    let mut eers = Vec::new();
    let mut aucs = Vec::new();
    for &alpha in &cfg.ablate_alpha_grid {
        let mut tcfg = cfg.train_config();
        tcfg.epochs = cfg.ablate_epochs;
        tcfg.loss.kind = LossKind::FopJoint;
        tcfg.loss.alpha = alpha;
        let mut params = FopParams::init(&model_cfg, cfg.seed)?;
        fit(&train_data, None, &tcfg, &model_cfg, &mut params)?;
        let face_proj = project_store(&stores.face, &params)?;
        let voice_proj = project_store(&stores.voice, &params)?;
        let (scores, degenerate) =
            score_verification_trials(&trials, &face_proj, &voice_proj, cfg.eval_scorer, workers());
        let summary = verify_summary(&scores, &trials, degenerate)?;
        println!("alpha {alpha}: eer {:.4} auc {:.4}", summary.eer, summary.auc);
        eers.push(summary.eer);
        aucs.push(summary.auc);
    }

    // grid layout: one column per alpha
    let mut csv = String::from("alpha");
    for a in &cfg.ablate_alpha_grid {
        let _ = write!(csv, ",{a}");
    }
    csv.push_str("\neer");
    for e in &eers {
        let _ = write!(csv, ",{e}");
    }
    csv.push_str("\nauc");
    for a in &aucs {
        let _ = write!(csv, ",{a}");
    }
    csv.push('\n');
    write_text(&cfg.out_dir.join("ablate_alpha.csv"), &csv)?;
    write_manifest(cfg, "ablate-alpha", "manifest_ablate-alpha.txt")?;
    Ok(())
}

// ── bench-losses ────────────────────────────────────────────────────────────

pub fn cmd_bench_losses(cfg: &RunConfig) -> Result<()> {
    let spec = SyntheticSpec {
        num_identities: cfg.bench_identities,
        instances_per_identity: cfg.bench_instances_per_identity,
        latent_dim: cfg.synth_latent_dim,
        face_dim: cfg.synth_face_dim,
        voice_dim: cfg.synth_voice_dim,
        noise_sigma: cfg.synth_noise_sigma,
        correlation: cfg.synth_correlation,
        language_shift: None,
        seed: cfg.seed,
    };
    let synth = synthesize(&spec)?;
    let ids: Vec<String> = synth.face.records().iter().map(|r| r.id.clone()).collect();
    let (data, c) = build_train_data(&synth.face, &synth.voice, &ids)?;
    let model_cfg = FopConfig {
        face_dim: spec.face_dim,
        voice_dim: spec.voice_dim,
        embed_dim: cfg.bench_embed_dim,
        num_identities: c,
        fusion: cfg.model_fusion,
    };
    let rows = bench::bench_losses(&data, &model_cfg, cfg.bench_batch_size, cfg.seed)?;

    let n = data.len() as u64;
    let counter = |kind: LossKind| rows.iter().find(|r| r.kind == kind).unwrap().measured;
    // self-checks against the count_work predictions
    if counter(LossKind::CeOnly) != n {
        return Err(Error::SelfCheck(format!(
            "ce counter {} != n {}",
            counter(LossKind::CeOnly),
            n
        )));
    }
    let contrastive_row = rows.iter().find(|r| r.kind == LossKind::Contrastive).unwrap();
    let rel = (contrastive_row.measured as f64 - contrastive_row.predicted as f64).abs()
        / contrastive_row.predicted as f64;
    if rel > 0.01 {
        return Err(Error::SelfCheck(format!(
            "contrastive counter {} deviates {rel:.3} from quadratic prediction {}",
            contrastive_row.measured, contrastive_row.predicted
        )));
    }
    let joint_row = rows.iter().find(|r| r.kind == LossKind::FopJoint).unwrap();
    if joint_row.measured != joint_row.predicted {
        return Err(Error::SelfCheck(format!(
            "joint counter {} != prediction {}",
            joint_row.measured, joint_row.predicted
        )));
    }
    let ordered = counter(LossKind::CeOnly) < counter(LossKind::Center)
        && counter(LossKind::CeOnly) < counter(LossKind::Git)
        && counter(LossKind::Center) < counter(LossKind::Contrastive)
        && counter(LossKind::Git) < counter(LossKind::Contrastive)
        && counter(LossKind::Contrastive) < counter(LossKind::Triplet);
    if !ordered {
        return Err(Error::SelfCheck(
            "complexity ordering ce < center/git < contrastive < triplet violated".into(),
        ));
    }

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut csv = String::from("kind,seconds,measured_terms,predicted_terms\n");
    let mut table = format!("loss complexity over one epoch (n={n}, B={})\n", cfg.bench_batch_size);
    let _ = writeln!(table, "  {:12} {:>9} {:>14} {:>15}", "kind", "seconds", "measured", "predicted");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{}", r.kind.as_str(), r.seconds, r.measured, r.predicted);
        let _ = writeln!(table, "  {:12} {:>9.4} {:>14} {:>15}", r.kind.as_str(), r.seconds, r.measured, r.predicted);
    }
    write_text(&cfg.out_dir.join("bench_losses.csv"), &csv)?;
    write_manifest(cfg, "bench-losses", "manifest_bench-losses.txt")?;
    print!("{table}");
    Ok(())
}

// ── crosslang ───────────────────────────────────────────────────────────────

pub fn cmd_crosslang(cfg: &RunConfig) -> Result<()> {
    let stores = load_stores(cfg)?;
    let heard_path = if cfg.crosslang_voice_heard.is_empty() {
        cfg.out_dir.join("voice.fvem")
    } else {
        PathBuf::from(&cfg.crosslang_voice_heard)
    };
    let unheard_path = if cfg.crosslang_voice_unheard.is_empty() {
        cfg.out_dir.join("voice_alt.fvem")
    } else {
        PathBuf::from(&cfg.crosslang_voice_unheard)
    };
    if !unheard_path.exists() {
        return Err(Error::Data(format!(
            "missing unheard-language store {} (synth with synth.language_shift_mag > 0, or set crosslang.voice_unheard)",
            unheard_path.display()
        )));
    }
    let heard = load_store_binary(&heard_path)?;
    let unheard = load_store_binary(&unheard_path)?;
    let (ckpt_cfg, params) = load_checkpoint(&cfg.checkpoint_path())?;
    if ckpt_cfg.voice_dim != heard.dim || ckpt_cfg.voice_dim != unheard.dim {
        return Err(Error::dim(
            "checkpoint vs voice stores",
            format!("voice {}", ckpt_cfg.voice_dim),
            format!("heard {} / unheard {}", heard.dim, unheard.dim),
        ));
    }

    let trials = load_verification_trials(
        &cfg.out_dir.join("trials_verify.txt"),
        &stores.face,
        &heard,
    )?;
    let face_proj = project_store(&stores.face, &params)?;
    let heard_proj = project_store(&heard, &params)?;
    // align the unheard projection to the heard store's row order
    let unheard_proj_raw = project_store(&unheard, &params)?;
    let mut aligned = Matrix::zeros(heard.len(), unheard_proj_raw.cols());
    for (row, rec) in heard.records().iter().enumerate() {
        let idx = unheard.index_of(&rec.id).ok_or_else(|| {
            Error::Data(format!(
                "instance {} missing from unheard-language store",
                rec.id
            ))
        })?;
        aligned.row_mut(row).copy_from_slice(unheard_proj_raw.row(idx));
    }

    let report = cross_language_eval(
        &trials,
        &face_proj,
        &heard_proj,
        &aligned,
        cfg.eval_scorer,
        workers(),
    )?;

    let mut csv = String::from("config,heard_eer,unheard_eer,pct_change\n");
    let _ = writeln!(
        csv,
        "{},{},{},{}",
        cfg.hash(),
        report.heard.eer,
        report.unheard.eer,
        report.pct_change
    );
    write_text(&cfg.out_dir.join("crosslang.csv"), &csv)?;

    let mut stats_csv = String::from("store,class,count,centroid_norm,cov_trace,mean_intra_cos\n");
    for (tag, store, proj) in [
        ("face", &stores.face, &face_proj),
        ("voice_heard", &heard, &heard_proj),
        ("voice_unheard", &unheard, &unheard_proj_raw),
    ] {
        let labels: Vec<usize> = store.records().iter().map(|r| r.label).collect();
        for s in per_class_stats(&labels, proj) {
            let _ = writeln!(
                stats_csv,
                "{tag},{},{},{},{},{}",
                s.label, s.count, s.centroid_norm, s.cov_trace, s.mean_intra_cos
            );
        }
    }
    write_text(&cfg.out_dir.join("class_stats.csv"), &stats_csv)?;
    write_manifest(cfg, "crosslang", "manifest_crosslang.txt")?;

    println!(
        "cross-language verification: heard EER {:.4}, unheard EER {:.4}, change {:+.1}%",
        report.heard.eer, report.unheard.eer, report.pct_change
    );
    Ok(())
}

// ── defaults ────────────────────────────────────────────────────────────────

pub fn cmd_defaults() {
    print!("{}", RunConfig::default().serialize());
}
