//! Evaluation protocols: cross-modal verification (ROC, AUC, EER), 1:n
//! gallery matching in both directions, demographic stratification, and the
//! heard/unheard cross-language comparison.
//!
//! All metrics are pure functions of frozen model snapshots. AUC is the
//! pair-ordering statistic (ties count one half) computed by exact integer
//! counting; EER comes from linear interpolation between the two adjacent
//! operating points where the false-accept and false-reject rates cross.
//! Trial scoring can fan out across worker threads; chunks merge in index
//! order so the result is identical at any worker count.
//!
//! Trial list files are plain text, one trial per line:
//! verification `face_id,voice_id,genuine|impostor`, matching
//! `probe_id,gallery_id_1,...,gallery_id_n,true_pos`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom as _;
use rand::Rng as _;

use crate::data::{Attributes, EmbeddingStore, Modality, ATTR_MISSING};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{self, FopParams};
use crate::ops;
use crate::rng::domain_rng;

// ── Scoring ─────────────────────────────────────────────────────────────────

/// How a (face, voice) pair is scored at test time. Both scorers work on the
/// projected, L2-normalized embeddings u and v.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scorer {
    /// Cosine similarity of u and v (the default).
    Cosine,
    /// Negative Euclidean distance between u and v.
    NegEuclidean,
}

impl Scorer {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Scorer::Cosine),
            "neg_euclidean" => Ok(Scorer::NegEuclidean),
            other => Err(Error::Config(format!(
                "unknown scorer {other:?} (expected cosine or neg_euclidean)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scorer::Cosine => "cosine",
            Scorer::NegEuclidean => "neg_euclidean",
        }
    }
}

/// Score two projected embedding rows. The flag marks a degenerate (zero
/// norm) cosine input, which scores a neutral 0.
pub fn score_projected(u: &[f64], v: &[f64], scorer: Scorer) -> (f64, bool) {
    match scorer {
        Scorer::Cosine => ops::cosine_sim(u, v),
        Scorer::NegEuclidean => {
            let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2.sqrt(), false)
        }
    }
}

/// Project an entire store through the matching modality projection,
/// yielding one unit-norm row per record.
pub fn project_store(store: &EmbeddingStore, params: &FopParams) -> Result<Matrix> {
    let idx: Vec<usize> = (0..store.len()).collect();
    let features = store.matrix_of(&idx);
    match store.modality {
        Modality::Face => model::project(&features, &params.face_w, &params.face_b),
        Modality::Voice => model::project(&features, &params.voice_w, &params.voice_b),
    }
}

/// Score a single raw (face, voice) feature pair through the model.
pub fn score_pair(
    face_vec: &[f64],
    voice_vec: &[f64],
    params: &FopParams,
    scorer: Scorer,
) -> Result<(f64, bool)> {
    let face = Matrix::from_vec(1, face_vec.len(), face_vec.to_vec())?;
    let voice = Matrix::from_vec(1, voice_vec.len(), voice_vec.to_vec())?;
    let u = model::project(&face, &params.face_w, &params.face_b)?;
    let v = model::project(&voice, &params.voice_w, &params.voice_b)?;
    Ok(score_projected(u.row(0), v.row(0), scorer))
}

// ── Trials ──────────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerificationTrial {
    pub face_idx: usize,
    pub voice_idx: usize,
    pub genuine: bool,
    pub face_attrs: Attributes,
    pub voice_attrs: Attributes,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchingTrial {
    /// Modality of the probe; the gallery holds the other modality.
    pub probe: Modality,
    pub probe_idx: usize,
    /// Ordered gallery of candidate indices; identities are distinct and
    /// exactly one matches the probe identity.
    pub gallery: Vec<usize>,
    pub true_pos: usize,
}

fn resolve_test_indices(store: &EmbeddingStore, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            store
                .index_of(id)
                .ok_or_else(|| Error::Data(format!("instance {id} not found in store")))
        })
        .collect()
}

fn group_by_identity(store: &EmbeddingStore, indices: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut map: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for &i in indices {
        map.entry(store.record(i).label).or_default().push(i);
    }
    map.into_iter().collect()
}

/// Balanced verification trial list over the given test instances: half
/// genuine (face and voice from different instances of one identity), half
/// impostor, shuffled, seeded. Identities with a single test instance cannot
/// form genuine trials and are skipped with a warning.
pub fn build_verification_trials(
    face: &EmbeddingStore,
    voice: &EmbeddingStore,
    test_ids: &[String],
    count: usize,
    seed: u64,
) -> Result<(Vec<VerificationTrial>, Vec<String>)> {
    let indices = resolve_test_indices(face, test_ids)?;
    for id in test_ids {
        if voice.index_of(id).is_none() {
            return Err(Error::Data(format!("instance {id} not found in voice store")));
        }
    }
    let groups = group_by_identity(face, &indices);
    let mut warnings = Vec::new();
    let eligible: Vec<&(usize, Vec<usize>)> = groups
        .iter()
        .filter(|(label, members)| {
            if members.len() < 2 {
                warnings.push(format!(
                    "identity {label} has a single instance and cannot form genuine trials; skipped"
                ));
                false
            } else {
                true
            }
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::Data(
            "no identity has >= 2 test instances; cannot form genuine trials".into(),
        ));
    }
    if groups.len() < 2 {
        return Err(Error::Data(
            "need >= 2 test identities to form impostor trials".into(),
        ));
    }

    let mut rng = domain_rng(seed, "trials");
    let n_genuine = count.div_ceil(2);
    let n_impostor = count - n_genuine;
    let voice_idx_of = |face_idx: usize| voice.index_of(&face.record(face_idx).id).unwrap();

    let mut trials = Vec::with_capacity(count);
    for _ in 0..n_genuine {
        let (_, members) = eligible[rng.random_range(0..eligible.len())];
        let a = rng.random_range(0..members.len());
        let b = loop {
            let b = rng.random_range(0..members.len());
            if b != a {
                break b;
            }
        };
        let face_idx = members[a];
        let voice_idx = voice_idx_of(members[b]);
        trials.push(VerificationTrial {
            face_idx,
            voice_idx,
            genuine: true,
            face_attrs: face.record(face_idx).attrs,
            voice_attrs: voice.record(voice_idx).attrs,
        });
    }
    for _ in 0..n_impostor {
        let ga = rng.random_range(0..groups.len());
        let gb = loop {
            let gb = rng.random_range(0..groups.len());
            if gb != ga {
                break gb;
            }
        };
        let face_idx = groups[ga].1[rng.random_range(0..groups[ga].1.len())];
        let voice_member = groups[gb].1[rng.random_range(0..groups[gb].1.len())];
        let voice_idx = voice_idx_of(voice_member);
        trials.push(VerificationTrial {
            face_idx,
            voice_idx,
            genuine: false,
            face_attrs: face.record(face_idx).attrs,
            voice_attrs: voice.record(voice_idx).attrs,
        });
    }
    trials.shuffle(&mut rng);
    Ok((trials, warnings))
}

/// Matching galleries: one true-identity candidate plus n_c - 1 impostors
/// drawn from distinct other identities without replacement, order shuffled,
/// seeded. The true candidate prefers a different instance than the probe
/// when the identity has one.
pub fn build_matching_trials(
    face: &EmbeddingStore,
    voice: &EmbeddingStore,
    test_ids: &[String],
    n_c: usize,
    count: usize,
    probe: Modality,
    seed: u64,
) -> Result<Vec<MatchingTrial>> {
    if n_c < 2 {
        return Err(Error::Config(format!("gallery size must be >= 2, got {n_c}")));
    }
    let (probe_store, gallery_store) = match probe {
        Modality::Voice => (voice, face),
        Modality::Face => (face, voice),
    };
    let probe_indices = resolve_test_indices(probe_store, test_ids)?;
    let gallery_indices = resolve_test_indices(gallery_store, test_ids)?;
    let probe_groups = group_by_identity(probe_store, &probe_indices);
    let gallery_groups = group_by_identity(gallery_store, &gallery_indices);
    if gallery_groups.len() < n_c {
        return Err(Error::Data(format!(
            "matching needs >= {n_c} test identities for a gallery of {n_c}, got {}",
            gallery_groups.len()
        )));
    }

    let mut rng = domain_rng(seed, "trials");
    let mut trials = Vec::with_capacity(count);
    for _ in 0..count {
        let (label, probe_members) = &probe_groups[rng.random_range(0..probe_groups.len())];
        let probe_idx = probe_members[rng.random_range(0..probe_members.len())];
        let probe_id = &probe_store.record(probe_idx).id;

        let same_group = gallery_groups
            .iter()
            .find(|(l, _)| l == label)
            .expect("aligned stores share identities");
        let others: Vec<usize> = same_group
            .1
            .iter()
            .copied()
            .filter(|&g| &gallery_store.record(g).id != probe_id)
            .collect();
        let true_idx = if others.is_empty() {
            same_group.1[rng.random_range(0..same_group.1.len())]
        } else {
            others[rng.random_range(0..others.len())]
        };

        // impostor identities without replacement
        let mut other_groups: Vec<usize> = (0..gallery_groups.len())
            .filter(|&g| &gallery_groups[g].0 != label)
            .collect();
        other_groups.shuffle(&mut rng);
        let mut gallery = vec![true_idx];
        for &g in other_groups.iter().take(n_c - 1) {
            let members = &gallery_groups[g].1;
            gallery.push(members[rng.random_range(0..members.len())]);
        }
        gallery.shuffle(&mut rng);
        let true_pos = gallery.iter().position(|&g| g == true_idx).unwrap();
        trials.push(MatchingTrial {
            probe,
            probe_idx,
            gallery,
            true_pos,
        });
    }
    Ok(trials)
}

// ── Trial list files ────────────────────────────────────────────────────────

pub fn save_verification_trials(
    trials: &[VerificationTrial],
    face: &EmbeddingStore,
    voice: &EmbeddingStore,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let werr = |e| Error::io(path, e);
    writeln!(w, "#fvtrials,version=1,task=verification").map_err(werr)?;
    for t in trials {
        writeln!(
            w,
            "{},{},{}",
            face.record(t.face_idx).id,
            voice.record(t.voice_idx).id,
            if t.genuine { "genuine" } else { "impostor" }
        )
        .map_err(werr)?;
    }
    w.flush().map_err(werr)?;
    Ok(())
}

pub fn load_verification_trials(
    path: &Path,
    face: &EmbeddingStore,
    voice: &EmbeddingStore,
) -> Result<Vec<VerificationTrial>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message: "empty trial file".into(),
        })?
        .map_err(|e| Error::io(path, e))?;
    if header != "#fvtrials,version=1,task=verification" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("bad verification trial header {header:?}"),
        });
    }
    let mut trials = Vec::new();
    for (index, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::BadTrial {
                index,
                message: format!("expected face_id,voice_id,label; got {line:?}"),
            });
        }
        let face_idx = face.index_of(fields[0]).ok_or_else(|| Error::BadTrial {
            index,
            message: format!("unknown face instance {}", fields[0]),
        })?;
        let voice_idx = voice.index_of(fields[1]).ok_or_else(|| Error::BadTrial {
            index,
            message: format!("unknown voice instance {}", fields[1]),
        })?;
        let genuine = match fields[2] {
            "genuine" => true,
            "impostor" => false,
            other => {
                return Err(Error::BadTrial {
                    index,
                    message: format!("unknown label {other:?}"),
                })
            }
        };
        let same = face.record(face_idx).label == voice.record(voice_idx).label;
        if same != genuine {
            return Err(Error::BadTrial {
                index,
                message: format!(
                    "label {:?} contradicts store identities",
                    fields[2]
                ),
            });
        }
        trials.push(VerificationTrial {
            face_idx,
            voice_idx,
            genuine,
            face_attrs: face.record(face_idx).attrs,
            voice_attrs: voice.record(voice_idx).attrs,
        });
    }
    Ok(trials)
}

pub fn save_matching_trials(
    trials: &[MatchingTrial],
    face: &EmbeddingStore,
    voice: &EmbeddingStore,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let werr = |e| Error::io(path, e);
    let probe = trials.first().map_or(Modality::Voice, |t| t.probe);
    let n_c = trials.first().map_or(0, |t| t.gallery.len());
    writeln!(
        w,
        "#fvtrials,version=1,task=matching,probe={},nc={}",
        probe.as_str(),
        n_c
    )
    .map_err(werr)?;
    for t in trials {
        let (probe_store, gallery_store) = match t.probe {
            Modality::Voice => (voice, face),
            Modality::Face => (face, voice),
        };
        write!(w, "{}", probe_store.record(t.probe_idx).id).map_err(werr)?;
        for &g in &t.gallery {
            write!(w, ",{}", gallery_store.record(g).id).map_err(werr)?;
        }
        writeln!(w, ",{}", t.true_pos).map_err(werr)?;
    }
    w.flush().map_err(werr)?;
    Ok(())
}

pub fn load_matching_trials(
    path: &Path,
    face: &EmbeddingStore,
    voice: &EmbeddingStore,
) -> Result<Vec<MatchingTrial>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message: "empty trial file".into(),
        })?
        .map_err(|e| Error::io(path, e))?;
    let rest = header
        .strip_prefix("#fvtrials,version=1,task=matching,probe=")
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("bad matching trial header {header:?}"),
        })?;
    let (probe_str, nc_str) = rest.split_once(",nc=").ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        message: format!("bad matching trial header {header:?}"),
    })?;
    let probe = Modality::parse(probe_str)?;
    let n_c: usize = nc_str.parse().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        message: format!("bad gallery size: {e}"),
    })?;
    let (probe_store, gallery_store) = match probe {
        Modality::Voice => (voice, face),
        Modality::Face => (face, voice),
    };
    let mut trials = Vec::new();
    for (index, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_c + 2 {
            return Err(Error::BadTrial {
                index,
                message: format!("expected probe, {n_c} gallery ids and true_pos; got {line:?}"),
            });
        }
        let probe_idx = probe_store.index_of(fields[0]).ok_or_else(|| Error::BadTrial {
            index,
            message: format!("unknown probe instance {}", fields[0]),
        })?;
        let mut gallery = Vec::with_capacity(n_c);
        for id in &fields[1..=n_c] {
            gallery.push(gallery_store.index_of(id).ok_or_else(|| Error::BadTrial {
                index,
                message: format!("unknown gallery instance {id}"),
            })?);
        }
        let true_pos: usize = fields[n_c + 1].parse().map_err(|e| Error::BadTrial {
            index,
            message: format!("bad true_pos: {e}"),
        })?;
        trials.push(MatchingTrial {
            probe,
            probe_idx,
            gallery,
            true_pos,
        });
    }
    Ok(trials)
}

// ── Verification metrics ────────────────────────────────────────────────────

/// ROC operating points swept over every distinct score threshold, from
/// accept-none to accept-all. FAR is non-decreasing along the curve and the
/// endpoints (0,0) and (1,1) are always present.
#[derive(Clone, Debug)]
pub struct RocCurve {
    /// (false-accept rate, true-accept rate) per operating point.
    pub points: Vec<(f64, f64)>,
    /// Decision threshold of each point (accept when score >= threshold);
    /// +inf for the first point.
    pub thresholds: Vec<f64>,
}

fn class_counts(genuine: &[bool]) -> Result<(usize, usize)> {
    let g = genuine.iter().filter(|&&x| x).count();
    let i = genuine.len() - g;
    if g == 0 || i == 0 {
        return Err(Error::UndefinedMetric(format!(
            "need both classes: {g} genuine, {i} impostor trials"
        )));
    }
    Ok((g, i))
}

pub fn compute_roc(scores: &[f64], genuine: &[bool]) -> Result<RocCurve> {
    if scores.len() != genuine.len() {
        return Err(Error::dim(
            "compute_roc",
            format!("{} labels", scores.len()),
            format!("{} labels", genuine.len()),
        ));
    }
    let (g, i) = class_counts(genuine)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut pos = 0usize;
    while pos < order.len() {
        let threshold = scores[order[pos]];
        // absorb the whole tie group at this threshold
        while pos < order.len() && scores[order[pos]] == threshold {
            if genuine[order[pos]] {
                tp += 1;
            } else {
                fp += 1;
            }
            pos += 1;
        }
        points.push((fp as f64 / i as f64, tp as f64 / g as f64));
        thresholds.push(threshold);
    }
    Ok(RocCurve { points, thresholds })
}

/// AUC as the Mann-Whitney pair-ordering statistic: the fraction of
/// (genuine, impostor) score pairs ranked correctly, ties counting one half.
///
/// Counting is exact integer arithmetic; the final quotient is taken on
/// whichever side of 1/2 is smaller so that swapping the labels yields
/// exactly 1 - AUC.
pub fn compute_auc(scores: &[f64], genuine: &[bool]) -> Result<f64> {
    if scores.len() != genuine.len() {
        return Err(Error::dim(
            "compute_auc",
            format!("{} labels", scores.len()),
            format!("{} labels", genuine.len()),
        ));
    }
    class_counts(genuine)?;
    let mut impostors: Vec<f64> = scores
        .iter()
        .zip(genuine)
        .filter(|(_, &g)| !g)
        .map(|(&s, _)| s)
        .collect();
    impostors.sort_by(f64::total_cmp);

    // concordant pairs in half units: 2 per win, 1 per tie
    let mut half_units: u128 = 0;
    for (s, _) in scores.iter().zip(genuine).filter(|(_, &g)| g) {
        let below = impostors.partition_point(|&x| x < *s);
        let below_or_equal = impostors.partition_point(|&x| x <= *s);
        half_units += 2 * below as u128 + (below_or_equal - below) as u128;
    }
    let total: u128 = 2
        * impostors.len() as u128
        * (scores.len() - impostors.len()) as u128;
    // Build an exactly complementary (low, high) float pair: 1 - high is
    // exact for high in [1/2, 1], so swapping the labels always returns the
    // other member of the pair and AUC' = 1 - AUC holds bitwise.
    let small = half_units.min(total - half_units);
    let high = 1.0 - small as f64 / total as f64;
    let low = 1.0 - high;
    Ok(if 2 * half_units <= total { low } else { high })
}

/// Equal error rate: the rate where false-accept equals false-reject, by
/// linear interpolation between the two adjacent operating points where
/// FAR - FRR changes sign.
pub fn compute_eer(scores: &[f64], genuine: &[bool]) -> Result<f64> {
    let roc = compute_roc(scores, genuine)?;
    Ok(eer_from_points(&roc.points))
}

/// EER on an operating-point polyline ordered from accept-none to accept-all.
pub fn eer_from_points(points: &[(f64, f64)]) -> f64 {
    let diff = |p: &(f64, f64)| p.0 - (1.0 - p.1); // FAR - FRR
    let mut prev = points[0];
    for p in points.iter().skip(1) {
        if diff(p) >= 0.0 {
            let a1 = diff(&prev);
            let a2 = diff(p);
            if a2 == a1 {
                return p.0; // both zero: exact crossing at this point
            }
            let t = a1 / (a1 - a2);
            return prev.0 + t * (p.0 - prev.0);
        }
        prev = *p;
    }
    // no crossing: everything accepted still rejects no genuine
    1.0
}

#[derive(Clone, Copy, Debug)]
pub struct VerifySummary {
    pub auc: f64,
    pub eer: f64,
    pub genuine: usize,
    pub impostor: usize,
    /// Trials that hit a degenerate (zero-norm) embedding.
    pub degenerate: u64,
}

/// Score a verification trial list against projected stores, fanning out to
/// `workers` threads; chunk results merge in index order, so the output is
/// independent of the worker count.
pub fn score_verification_trials(
    trials: &[VerificationTrial],
    face_proj: &Matrix,
    voice_proj: &Matrix,
    scorer: Scorer,
    workers: usize,
) -> (Vec<f64>, u64) {
    let workers = workers.max(1).min(trials.len().max(1));
    let chunk_size = trials.len().div_ceil(workers);
    if workers == 1 || trials.len() < 2 {
        return score_chunk(trials, face_proj, voice_proj, scorer);
    }
    let chunks: Vec<&[VerificationTrial]> = trials.chunks(chunk_size).collect();
    let mut scores = Vec::with_capacity(trials.len());
    let mut degenerate = 0u64;
    std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| scope.spawn(move || score_chunk(chunk, face_proj, voice_proj, scorer)))
            .collect();
        for h in handles {
            let (s, d) = h.join().expect("scoring worker panicked");
            scores.extend(s);
            degenerate += d;
        }
    });
    (scores, degenerate)
}

fn score_chunk(
    trials: &[VerificationTrial],
    face_proj: &Matrix,
    voice_proj: &Matrix,
    scorer: Scorer,
) -> (Vec<f64>, u64) {
    let mut degenerate = 0u64;
    let scores = trials
        .iter()
        .map(|t| {
            let (s, flag) = score_projected(face_proj.row(t.face_idx), voice_proj.row(t.voice_idx), scorer);
            if flag {
                degenerate += 1;
            }
            s
        })
        .collect();
    (scores, degenerate)
}

pub fn verify_summary(scores: &[f64], trials: &[VerificationTrial], degenerate: u64) -> Result<VerifySummary> {
    let labels: Vec<bool> = trials.iter().map(|t| t.genuine).collect();
    let auc = compute_auc(scores, &labels)?;
    let eer = compute_eer(scores, &labels)?;
    let genuine = labels.iter().filter(|&&g| g).count();
    Ok(VerifySummary {
        auc,
        eer,
        genuine,
        impostor: labels.len() - genuine,
        degenerate,
    })
}

// ── Matching ────────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct MatchResult {
    pub gallery_size: usize,
    pub evaluated: usize,
    pub correct: usize,
    /// Trials whose best score was shared by more than one gallery position
    /// (broken toward the lowest position).
    pub ties: u64,
    /// (trial index, reason) for rejected malformed trials.
    pub rejected: Vec<(usize, String)>,
}

impl MatchResult {
    pub fn accuracy(&self) -> f64 {
        if self.evaluated == 0 {
            0.0
        } else {
            self.correct as f64 / self.evaluated as f64
        }
    }
}

fn validate_matching_trial(
    t: &MatchingTrial,
    face: &EmbeddingStore,
    voice: &EmbeddingStore,
) -> std::result::Result<(), String> {
    let (probe_store, gallery_store) = match t.probe {
        Modality::Voice => (voice, face),
        Modality::Face => (face, voice),
    };
    if t.probe_idx >= probe_store.len() {
        return Err(format!("probe index {} out of range", t.probe_idx));
    }
    if t.true_pos >= t.gallery.len() {
        return Err(format!("true_pos {} out of range", t.true_pos));
    }
    let probe_label = probe_store.record(t.probe_idx).label;
    let mut seen = std::collections::BTreeSet::new();
    let mut matches = 0usize;
    for (pos, &g) in t.gallery.iter().enumerate() {
        if g >= gallery_store.len() {
            return Err(format!("gallery index {g} out of range"));
        }
        let label = gallery_store.record(g).label;
        if !seen.insert(label) {
            return Err(format!("duplicate identity {label} in gallery"));
        }
        if label == probe_label {
            matches += 1;
            if pos != t.true_pos {
                return Err(format!("true match at position {pos}, declared {}", t.true_pos));
            }
        }
    }
    if matches != 1 {
        return Err(format!("gallery holds {matches} true matches, expected exactly 1"));
    }
    Ok(())
}

/// Run 1:n matching: per trial, the gallery member with the highest score is
/// predicted; ties break toward the lowest gallery position and are counted.
/// Malformed trials (no or duplicate true match, bad indices) are rejected
/// with their index and do not affect accuracy.
pub fn match_trials(
    trials: &[MatchingTrial],
    face: &EmbeddingStore,
    voice: &EmbeddingStore,
    score: &mut dyn FnMut(&MatchingTrial, usize) -> f64,
) -> MatchResult {
    let mut result = MatchResult {
        gallery_size: trials.first().map_or(0, |t| t.gallery.len()),
        evaluated: 0,
        correct: 0,
        ties: 0,
        rejected: Vec::new(),
    };
    for (index, t) in trials.iter().enumerate() {
        if let Err(reason) = validate_matching_trial(t, face, voice) {
            result.rejected.push((index, reason));
            continue;
        }
        let mut best_pos = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        let mut tie = false;
        for (pos, &g) in t.gallery.iter().enumerate() {
            let s = score(t, g);
            if s > best_score {
                best_score = s;
                best_pos = pos;
                tie = false;
            } else if s == best_score {
                tie = true;
            }
        }
        if tie {
            result.ties += 1;
        }
        result.evaluated += 1;
        if best_pos == t.true_pos {
            result.correct += 1;
        }
    }
    result
}

/// Model-backed matching over projected stores.
pub fn match_trials_with_model(
    trials: &[MatchingTrial],
    face: &EmbeddingStore,
    voice: &EmbeddingStore,
    face_proj: &Matrix,
    voice_proj: &Matrix,
    scorer: Scorer,
) -> MatchResult {
    let mut score = |t: &MatchingTrial, g: usize| match t.probe {
        Modality::Voice => score_projected(face_proj.row(g), voice_proj.row(t.probe_idx), scorer).0,
        Modality::Face => score_projected(face_proj.row(t.probe_idx), voice_proj.row(g), scorer).0,
    };
    match_trials(trials, face, voice, &mut score)
}

// ── Stratification ──────────────────────────────────────────────────────────

/// Demographic stratification keys: trials where both members share gender
/// (G), nationality (N), age group (A), or all three (GNA).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StratKey {
    Gender,
    Nationality,
    AgeGroup,
    All,
}

impl StratKey {
    pub fn as_str(self) -> &'static str {
        match self {
            StratKey::Gender => "G",
            StratKey::Nationality => "N",
            StratKey::AgeGroup => "A",
            StratKey::All => "GNA",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "G" => Ok(StratKey::Gender),
            "N" => Ok(StratKey::Nationality),
            "A" => Ok(StratKey::AgeGroup),
            "GNA" => Ok(StratKey::All),
            other => Err(Error::Config(format!(
                "unknown stratification key {other:?} (expected G, N, A or GNA)"
            ))),
        }
    }
}

/// Filter to trials where both members share the keyed attributes. Returns
/// the subset and the number of trials excluded for missing annotations.
pub fn stratify(trials: &[VerificationTrial], key: StratKey) -> (Vec<VerificationTrial>, usize) {
    let relevant = |a: &Attributes| -> Vec<u16> {
        match key {
            StratKey::Gender => vec![a.gender],
            StratKey::Nationality => vec![a.nationality],
            StratKey::AgeGroup => vec![a.age_group],
            StratKey::All => vec![a.gender, a.nationality, a.age_group],
        }
    };
    let mut excluded = 0usize;
    let mut subset = Vec::new();
    for t in trials {
        let fa = relevant(&t.face_attrs);
        let va = relevant(&t.voice_attrs);
        if fa.iter().chain(va.iter()).any(|&x| x == ATTR_MISSING) {
            excluded += 1;
            continue;
        }
        if fa == va {
            subset.push(t.clone());
        }
    }
    (subset, excluded)
}

// ── Cross-language protocol ─────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct CrossLangReport {
    pub heard: VerifySummary,
    pub unheard: VerifySummary,
    /// 100 * (EER_unheard - EER_heard) / EER_heard.
    pub pct_change: f64,
}

/// Evaluate the same trial list against the heard-language and
/// unheard-language voice projections and report the EER degradation.
pub fn cross_language_eval(
    trials: &[VerificationTrial],
    face_proj: &Matrix,
    voice_heard_proj: &Matrix,
    voice_unheard_proj: &Matrix,
    scorer: Scorer,
    workers: usize,
) -> Result<CrossLangReport> {
    if trials.is_empty() {
        return Err(Error::Data("empty trial list".into()));
    }
    let (scores_a, degen_a) =
        score_verification_trials(trials, face_proj, voice_heard_proj, scorer, workers);
    let (scores_b, degen_b) =
        score_verification_trials(trials, face_proj, voice_unheard_proj, scorer, workers);
    let heard = verify_summary(&scores_a, trials, degen_a)?;
    let unheard = verify_summary(&scores_b, trials, degen_b)?;
    let pct_change = if heard.eer == 0.0 {
        if unheard.eer == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        100.0 * (unheard.eer - heard.eer) / heard.eer
    };
    Ok(CrossLangReport {
        heard,
        unheard,
        pct_change,
    })
}

/// Per-identity embedding statistics for distribution-shift inspection.
#[derive(Clone, Debug)]
pub struct ClassStats {
    pub label: usize,
    pub count: usize,
    /// L2 norm of the class centroid.
    pub centroid_norm: f64,
    /// Trace of the class covariance (total variance around the centroid).
    pub cov_trace: f64,
    /// Mean pairwise cosine among the class members.
    pub mean_intra_cos: f64,
}

pub fn per_class_stats(labels: &[usize], projected: &Matrix) -> Vec<ClassStats> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        groups.entry(y).or_default().push(i);
    }
    let d = projected.cols();
    groups
        .into_iter()
        .map(|(label, members)| {
            let count = members.len();
            let mut centroid = vec![0.0; d];
            for &i in &members {
                for (c, &v) in centroid.iter_mut().zip(projected.row(i)) {
                    *c += v;
                }
            }
            for c in &mut centroid {
                *c /= count as f64;
            }
            let centroid_norm = centroid.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut cov_trace = 0.0;
            for &i in &members {
                for (k, &v) in projected.row(i).iter().enumerate() {
                    let r = v - centroid[k];
                    cov_trace += r * r;
                }
            }
            cov_trace /= count as f64;
            let mut cos_sum = 0.0;
            let mut cos_cnt = 0u64;
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    let (c, _) = ops::cosine_sim(projected.row(i), projected.row(j));
                    cos_sum += c;
                    cos_cnt += 1;
                }
            }
            ClassStats {
                label,
                count,
                centroid_norm,
                cov_trace,
                mean_intra_cos: if cos_cnt > 0 { cos_sum / cos_cnt as f64 } else { 0.0 },
            }
        })
        .collect()
}
