//! File-backed pipeline stages shared by the CLI: scan, split, preprocess,
//! train, evaluate and report, all inside one run directory.
//!
//! Layout under `out/`:
//! `manifest.csv`, `folds.csv`, `stats/fold<f>.toml`,
//! `cache/fold<f>/<key>.f32` (+ `.hdr`), `models/fold<f>.ckpt`,
//! `logs/fold<f>.csv`, `metrics/fold<f>.csv`, `plots/fold<f>_R<r>_n<n>_{roc,hist}.csv`,
//! `hpo/history.csv`, `provenance/<stage>.toml`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::batcher::Pool;
use crate::config::{HyperParams, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{self, mean_sd, MetricsRow, RecordingEmbedding};
use crate::hpo;
use crate::folds::{make_splits, subject_weights, FoldAssignment, Split};
use crate::ingest::{read_recording, scan_manifest, ColumnMap, Manifest, ManifestEntry, NamingRule, RawRecording, NATIVE_RATE_HZ};
use crate::model::{self, Network};
use crate::seed::derive_seed;
use crate::signal::{
    decimate, differentiate, fit_stats, preprocess as transform_recording, read_cached, windows_from, write_cached,
    CacheHeader, ChannelStats, TransformedSequence,
};
use crate::trainer::{self, TrainOutcome, TrainSetup, ValRecording, ValidationSet};

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn file(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(p)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }
    pub fn folds(&self) -> PathBuf {
        self.root.join("folds.csv")
    }
    pub fn stats(&self, fold: u8) -> PathBuf {
        self.root.join(format!("stats/fold{fold}.toml"))
    }
    pub fn cache_dir(&self, fold: u8) -> PathBuf {
        self.root.join(format!("cache/fold{fold}"))
    }
    pub fn checkpoint(&self, fold: u8) -> PathBuf {
        self.root.join(format!("models/fold{fold}.ckpt"))
    }
    pub fn train_log(&self, fold: u8) -> PathBuf {
        self.root.join(format!("logs/fold{fold}.csv"))
    }
    pub fn metrics(&self, fold: u8) -> PathBuf {
        self.root.join(format!("metrics/fold{fold}.csv"))
    }

    fn write(&self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.file(rel)?;
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    /// Records config hash, seed and inputs of one stage.
    pub fn provenance(&self, stage: &str, cfg: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "stage = \"{stage}\"");
        let _ = writeln!(s, "config_hash = \"{}\"", cfg.hash());
        let _ = writeln!(s, "seed = {}", cfg.seed);
        let list: Vec<String> = inputs.iter().map(|p| format!("{:?}", p.display().to_string())).collect();
        let _ = writeln!(s, "inputs = [{}]", list.join(", "));
        self.write(&format!("provenance/{stage}.toml"), s)?;
        self.write("provenance/config.toml", cfg.to_toml())?;
        Ok(())
    }
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

fn cache_name(e: &ManifestEntry) -> String {
    format!("{}.f32", e.key())
}

pub fn scan(cfg: &RunConfig, run: &RunDir) -> Result<Manifest> {
    let manifest = scan_manifest(&cfg.data.root, &NamingRule::gazebase())?;
    manifest.write(&run.file("manifest.csv")?)?;
    run.provenance("scan", cfg, &[cfg.data.root.clone()])?;
    Ok(manifest)
}

pub fn split(cfg: &RunConfig, run: &RunDir) -> Result<FoldAssignment> {
    let manifest = Manifest::read(&require(run.manifest())?)?;
    let folds = make_splits(&subject_weights(&manifest, cfg.data.task), cfg.data.n_folds)?;
    folds.write(&run.file("folds.csv")?)?;
    run.provenance("split", cfg, &[run.manifest()])?;
    Ok(folds)
}

/// Reads one recording and brings it to the configured rate.
pub fn load_raw(entry: &ManifestEntry, rate: f64) -> Result<RawRecording> {
    let rec = read_recording(&entry.path, &ColumnMap::gazebase(), entry.key(), NATIVE_RATE_HZ)?;
    if (rate - NATIVE_RATE_HZ).abs() < 1e-9 {
        Ok(rec)
    } else {
        decimate(&rec, rate)
    }
}

/// Fits channel statistics on the training folds of `fold` and caches the
/// transformed sequence of every recording of the task.
pub fn preprocess(cfg: &RunConfig, run: &RunDir, fold: u8) -> Result<ChannelStats> {
    let manifest = Manifest::read(&require(run.manifest())?)?;
    let folds = FoldAssignment::read(&require(run.folds())?)?;
    let entries: Vec<&ManifestEntry> = manifest.for_task(cfg.data.task).collect();
    let raws: Vec<RawRecording> = entries
        .par_iter()
        .map(|e| load_raw(e, cfg.data.rate))
        .collect::<Result<_>>()?;
    let training = folds.training_subjects(fold);
    let velocities: Vec<_> = raws
        .iter()
        .filter(|r| training.contains(&r.key.subject_id))
        .filter_map(|r| differentiate(r).ok())
        .collect();
    let stats = fit_stats(&velocities)?;
    std::fs::write(run.file(&format!("stats/fold{fold}.toml"))?, stats.to_toml())
        .map_err(|e| Error::io(run.stats(fold), e))?;

    let dir = run.cache_dir(fold);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let stats_id = stats.id();
    raws.par_iter().zip(&entries).try_for_each(|(raw, e)| {
        let seq = transform_recording(raw, &stats)?;
        let header = CacheHeader {
            subject: e.subject.clone(),
            round: e.round,
            session: e.session,
            task: e.task,
            rate: cfg.data.rate,
            length: seq.len,
            stats_id: stats_id.clone(),
        };
        write_cached(&dir.join(cache_name(e)), &header, &seq)
    })?;
    run.provenance(&format!("preprocess_fold{fold}"), cfg, &[run.manifest(), run.folds()])?;
    Ok(stats)
}

/// Cached sequences for `subjects`, keyed by manifest order.
fn load_cached(
    cfg: &RunConfig,
    run: &RunDir,
    manifest: &Manifest,
    fold: u8,
    keep: impl Fn(&ManifestEntry) -> bool,
) -> Result<Vec<(ManifestEntry, TransformedSequence)>> {
    let stats_path = require(run.stats(fold))?;
    let stats =
        ChannelStats::from_toml(&std::fs::read_to_string(&stats_path).map_err(|e| Error::io(&stats_path, e))?)?;
    let dir = run.cache_dir(fold);
    manifest
        .for_task(cfg.data.task)
        .filter(|e| keep(e))
        .map(|e| {
            let (h, seq) = read_cached(&dir.join(cache_name(e)))?;
            if h.stats_id != stats.id() {
                return Err(Error::InvalidInput(format!("stale cache for {}", e.key())));
            }
            Ok((e.clone(), seq))
        })
        .collect()
}

/// Training pool and validation set for one fold.
pub fn fold_data(cfg: &RunConfig, run: &RunDir, fold: u8) -> Result<(Pool, ValidationSet)> {
    let manifest = Manifest::read(&require(run.manifest())?)?;
    let folds = FoldAssignment::read(&require(run.folds())?)?;
    let training = folds.training_subjects(fold);
    let val_subjects = folds.subjects_in(Split::Fold(fold)).clone();
    let train_recs = load_cached(cfg, run, &manifest, fold, |e| training.contains(&e.subject))?;
    let pool = Pool::new(train_recs.into_iter().map(|(e, s)| (e.key(), s)));
    let n = cfg.train.n_val_windows;
    let val_recs = load_cached(cfg, run, &manifest, fold, |e| val_subjects.contains(&e.subject) && e.round <= 5)?;
    let val = ValidationSet::from_recordings(
        val_recs
            .into_iter()
            .map(|(e, s)| ValRecording {
                subject_id: e.subject,
                round: e.round,
                session: e.session,
                windows: windows_from(&s, n),
            })
            .collect(),
        &[1, 2, 3, 4, 5],
    );
    Ok((pool, val))
}

pub fn train(cfg: &RunConfig, run: &RunDir, fold: u8) -> Result<TrainOutcome> {
    let (pool, val) = fold_data(cfg, run, fold)?;
    let setup = TrainSetup {
        model: cfg.model.config(),
        optim: cfg.hparams.optim(),
        loss: cfg.hparams.loss(),
        train: cfg.train,
        seed: derive_seed(cfg.seed, &format!("train/fold{fold}")),
    };
    let outcome = trainer::train(&pool, &val, &setup)?;
    model::save(&outcome.best, &run.file(&format!("models/fold{fold}.ckpt"))?)?;
    run.write(&format!("logs/fold{fold}.csv"), outcome.log_csv(true))?;
    run.provenance(&format!("train_fold{fold}"), cfg, &[run.stats(fold), run.folds()])?;
    Ok(outcome)
}

/// Test-set metrics for every requested (round, n).
pub fn evaluate(cfg: &RunConfig, run: &RunDir, fold: u8, rounds: &[u8], ns: &[usize]) -> Result<Vec<MetricsRow>> {
    let manifest = Manifest::read(&require(run.manifest())?)?;
    let folds = FoldAssignment::read(&require(run.folds())?)?;
    let net: Network<f32> = model::load(&require(run.checkpoint(fold))?)?;
    let n_max = *ns.iter().max().ok_or_else(|| Error::InvalidInput("no n values".into()))?;
    let recs = load_cached(cfg, run, &manifest, fold, |e| {
        folds.test_subjects.contains(&e.subject)
            && ((e.round == 1 && e.session == 1) || (e.session == 2 && rounds.contains(&e.round)))
    })?;
    let val_recs: Vec<ValRecording> = recs
        .into_iter()
        .map(|(e, s)| ValRecording {
            subject_id: e.subject,
            round: e.round,
            session: e.session,
            windows: windows_from(&s, n_max),
        })
        .collect();
    let embedded = trainer::embed_recordings(&net, &val_recs, n_max)?;
    let (enroll, auth): (Vec<RecordingEmbedding>, Vec<RecordingEmbedding>) =
        embedded.into_iter().partition(|r| r.round == 1 && r.session == 1);

    let mut rows = Vec::new();
    for &round in rounds {
        let set: Vec<RecordingEmbedding> = auth.iter().filter(|a| a.round == round).cloned().collect();
        if set.is_empty() {
            log::warn!("no test recordings for round {round}");
            continue;
        }
        for &n in ns {
            let seed = derive_seed(cfg.seed, &format!("eval/fold{fold}/R{round}/n{n}"));
            let (metrics, scores) = eval::evaluate_round(&enroll, &set, n, seed)?;
            let stem = format!("plots/fold{fold}_R{round}_n{n}");
            run.write(&format!("{stem}_roc.csv"), eval::roc_points_text(&eval::roc(&scores.genuine, &scores.impostor)?))?;
            run.write(&format!("{stem}_hist.csv"), eval::histogram_text(&scores))?;
            rows.push(MetricsRow {
                task: cfg.data.task,
                rate_hz: cfg.data.rate,
                round,
                n,
                metrics,
            });
        }
    }
    run.write(&format!("metrics/fold{fold}.csv"), eval::metrics_csv(&rows))?;
    run.provenance(&format!("evaluate_fold{fold}"), cfg, &[run.checkpoint(fold)])?;
    Ok(rows)
}

/// Cells formatted as "mean (sd)" across folds, one line per (round, n).
pub fn report(metric_files: &[PathBuf]) -> Result<String> {
    let mut by_key: BTreeMap<(u8, usize), Vec<eval::Metrics>> = BTreeMap::new();
    let mut label = None;
    for p in metric_files {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        for row in eval::parse_metrics_csv(&text)? {
            label.get_or_insert((row.task, row.rate_hz));
            by_key.entry((row.round, row.n)).or_default().push(row.metrics);
        }
    }
    let mut s = String::new();
    if let Some((task, rate)) = label {
        let _ = writeln!(s, "# {task} @ {rate} Hz, {} folds", metric_files.len());
    }
    s.push_str("round,n,eer,frr_far_1e-1,frr_far_1e-2,frr_far_1e-3,frr_far_1e-4\n");
    let cell = |v: Vec<f64>| {
        let (m, sd) = mean_sd(&v);
        format!("{m:.4} ({sd:.4})")
    };
    for ((round, n), ms) in by_key {
        let mut line = format!("{round},{n},{}", cell(ms.iter().map(|m| m.eer).collect()));
        for i in 0..4 {
            let _ = write!(line, ",{}", cell(ms.iter().map(|m| m.frr_at_far[i]).collect()));
        }
        s.push_str(&line);
        s.push('\n');
    }
    Ok(s)
}

/// Convenience: every stage for one fold (scan and split included).
pub fn run_fold(cfg: &RunConfig, run: &RunDir, fold: u8) -> Result<Vec<MetricsRow>> {
    if !run.manifest().exists() {
        scan(cfg, run)?;
    }
    if !run.folds().exists() {
        split(cfg, run)?;
    }
    preprocess(cfg, run, fold)?;
    train(cfg, run, fold)?;
    evaluate(cfg, run, fold, &cfg.eval.rounds, &cfg.eval.n_values)
}

pub fn metrics_paths(run: &RunDir, n_folds: usize) -> Vec<PathBuf> {
    (1..=n_folds as u8).map(|f| run.metrics(f)).filter(|p| Path::exists(p)).collect()
}

/// Hyperparameter search over `cfg.data.n_folds` folds. Each point trains
/// one model per fold and scores it by that fold's best validation EER.
/// Caches must already exist for every fold.
pub fn hpo(cfg: &RunConfig, run: &RunDir, budget: usize) -> Result<hpo::SearchResult> {
    let n_folds = cfg.data.n_folds;
    let data: Vec<(Pool, ValidationSet)> = (1..=n_folds as u8).map(|f| fold_data(cfg, run, f)).collect::<Result<_>>()?;
    let search = hpo::SearchConfig {
        space: hpo::SearchSpace::default(),
        fixed: cfg.hparams.to_array(),
        budget,
        kappa: cfg.hpo.kappa,
        seed: cfg.seed,
    };
    let history_path = run.file("hpo/history.csv")?;
    let mut history = hpo::history_header(n_folds);
    let objective = |p: &hpo::Point| -> Result<Vec<f64>> {
        let h = HyperParams::from_array(*p);
        data.par_iter()
            .enumerate()
            .map(|(i, (pool, val))| {
                let setup = TrainSetup {
                    model: cfg.model.config(),
                    optim: h.optim(),
                    loss: h.loss(),
                    train: cfg.train,
                    seed: derive_seed(cfg.seed, &format!("train/fold{}", i + 1)),
                };
                trainer::train(pool, val, &setup)?
                    .best_score
                    .ok_or(Error::NonFinite { layer: 0 })
            })
            .collect()
    };
    let result = hpo::run_search(&search, objective, |o| {
        log::info!("hpo iteration {} ({}): valuation {:.4}", o.iteration, o.strategy, o.valuation);
        history.push_str(&hpo::history_row(o, n_folds));
        if let Err(e) = std::fs::write(&history_path, &history) {
            log::warn!("could not write {}: {e}", history_path.display());
        }
    })?;
    let best = result.best_hparams();
    run.write("hpo/best.toml", toml::to_string(&best).expect("hyperparameters serialize"))?;
    run.provenance("hpo", cfg, &[run.folds()])?;
    Ok(result)
}
