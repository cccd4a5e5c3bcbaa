//! AdamW training loop with periodic validation EER, early stopping and
//! best-checkpoint retention.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::batcher::{sample_minibatch, BatchSpec, Pool};
use crate::error::{Error, Result};
use crate::eval::{self, RecordingEmbedding};
use crate::model::{Mode, ModelConfig, Network};
use crate::msloss::{cosine_matrix, loss_grad, mine, LossConfig};
use crate::numeric::Scalar;
use crate::seed::{component_rng, derive_seed};
use crate::signal::TransformedWindow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub log10_lr: f64,
    pub log10_wd: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimConfig {
    pub fn new(log10_lr: f64, log10_wd: f64) -> Self {
        Self {
            log10_lr,
            log10_wd,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        10f64.powf(self.log10_lr)
    }

    pub fn wd(&self) -> f64 {
        10f64.powf(self.log10_wd)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient entry was not finite; nothing changed.
    Skipped,
}

/// One AdamW update with decoupled weight decay:
/// θ ← θ − lr·(m̂/(√v̂ + eps) + wd·θ).
pub fn adamw_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut OptimState<T>,
    lr: f64,
    wd: f64,
    cfg: &OptimConfig,
) -> StepOutcome {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    if grads.iter().any(|g| !g.is_finite()) {
        return StepOutcome::Skipped;
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powi(t));
    let c2 = T::of(1.0 - cfg.beta2.powi(t));
    let (lr, wd, eps) = (T::of(lr), T::of(wd), T::of(cfg.eps));
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] = params[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * params[i]);
    }
    StepOutcome::Applied
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_iterations: usize,
    pub eval_every: usize,
    /// In evaluations.
    pub patience: usize,
    pub k: usize,
    pub n_val_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            eval_every: 100,
            patience: 200,
            k: 8,
            n_val_windows: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience counted in evaluations; only a strictly lower score resets it.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    /// 1-based index of the best evaluation.
    pub best_index: usize,
    pub evaluations: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_index: 0,
            evaluations: 0,
        }
    }

    pub fn observe(&mut self, score: f64) -> Verdict {
        self.evaluations += 1;
        if self.best.map_or(true, |b| score < b) {
            self.best = Some(score);
            self.best_index = self.evaluations;
            return Verdict::Improved;
        }
        if self.evaluations - self.best_index >= self.patience {
            Verdict::Stop
        } else {
            Verdict::NoImprovement
        }
    }
}

/// Windows of one validation recording.
#[derive(Debug, Clone)]
pub struct ValRecording {
    pub subject_id: String,
    pub round: u8,
    pub session: u8,
    pub windows: Vec<TransformedWindow>,
}

/// Enrollment = round 1 session 1; authentication = session 2 of each
/// round.
#[derive(Debug, Clone, Default)]
pub struct ValidationSet {
    pub enroll: Vec<ValRecording>,
    pub auth: Vec<ValRecording>,
}

impl ValidationSet {
    /// Sorts recordings into enrollment and authentication sets.
    pub fn from_recordings(recs: Vec<ValRecording>, rounds: &[u8]) -> Self {
        let mut out = Self::default();
        for r in recs {
            if r.round == 1 && r.session == 1 {
                out.enroll.push(r);
            } else if r.session == 2 && rounds.contains(&r.round) {
                out.auth.push(r);
            }
        }
        out
    }
}

/// Eval-mode embeddings of the first `n` windows of each recording.
pub fn embed_recordings<T: Scalar>(
    net: &Network<T>,
    recs: &[ValRecording],
    n: usize,
) -> Result<Vec<RecordingEmbedding>> {
    let dim = net.embedding_dim();
    let mut input = Vec::new();
    for r in recs {
        if r.windows.len() < n {
            return Err(Error::InvalidInput(format!("recording of {} has {} windows < {n}", r.subject_id, r.windows.len())));
        }
        for w in &r.windows[..n] {
            input.extend(w.data.iter().map(|v| T::of(f64::from(*v))));
        }
    }
    if recs.is_empty() {
        return Ok(Vec::new());
    }
    let emb = net.embed(&input, 64)?;
    Ok(recs
        .iter()
        .enumerate()
        .map(|(i, r)| RecordingEmbedding {
            subject_id: r.subject_id.clone(),
            round: r.round,
            session: r.session,
            dim,
            windows: emb[i * n * dim..(i + 1) * n * dim].iter().map(|v| v.as_f64() as f32).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationScore {
    pub mean: f64,
    /// EER for rounds 1..=5; `None` where the round had no usable pairs.
    pub per_round: [Option<f64>; 5],
}

/// Mean empirical EER over the rounds that have both genuine and impostor
/// pairs.
pub fn validation_score<T: Scalar>(net: &Network<T>, val: &ValidationSet, n: usize) -> Result<ValidationScore> {
    let enroll = embed_recordings(net, &val.enroll, n)?;
    let auth = embed_recordings(net, &val.auth, n)?;
    score_embeddings(&enroll, &auth, n)
}

pub fn score_embeddings(enroll: &[RecordingEmbedding], auth: &[RecordingEmbedding], n: usize) -> Result<ValidationScore> {
    let mut per_round = [None; 5];
    for (i, slot) in per_round.iter_mut().enumerate() {
        let round = i as u8 + 1;
        let set: Vec<RecordingEmbedding> = auth.iter().filter(|a| a.round == round).cloned().collect();
        if set.is_empty() || enroll.is_empty() {
            continue;
        }
        let pairs = eval::build_pairs(enroll, &set, n)?;
        if pairs.genuine.is_empty() || pairs.impostor.is_empty() {
            continue;
        }
        *slot = Some(eval::eer(&eval::roc(&pairs.genuine, &pairs.impostor)?));
    }
    let found: Vec<f64> = per_round.iter().flatten().copied().collect();
    if found.is_empty() {
        return Err(Error::NoGenuinePairs);
    }
    Ok(ValidationScore {
        mean: found.iter().sum::<f64>() / found.len() as f64,
        per_round,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub score: ValidationScore,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    EarlyStopped,
    /// A non-finite loss or activation ended training.
    Diverged,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Network<f32>,
    pub best_score: Option<f64>,
    pub best_iteration: usize,
    pub log: Vec<LogRow>,
    pub stop: StopReason,
    pub iterations: usize,
    pub skipped_steps: usize,
}

impl TrainOutcome {
    /// Training log as delimited text; `with_time` adds the wall-clock
    /// column, which is the only non-deterministic field.
    pub fn log_csv(&self, with_time: bool) -> String {
        let mut s = String::from("iteration,loss,mean_val_eer,eer_r1,eer_r2,eer_r3,eer_r4,eer_r5");
        s.push_str(if with_time { ",wall_seconds\n" } else { "\n" });
        for r in &self.log {
            let _ = write!(s, "{},{:.8},{:.8}", r.iteration, r.loss, r.score.mean);
            for e in r.score.per_round {
                match e {
                    Some(v) => {
                        let _ = write!(s, ",{v:.8}");
                    }
                    None => s.push(','),
                }
            }
            if with_time {
                let _ = write!(s, ",{:.3}", r.wall_seconds);
            }
            s.push('\n');
        }
        s
    }
}

/// Everything `train` needs besides data.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

/// sample → forward → loss → backward → AdamW, with validation every
/// `eval_every` iterations.
pub fn train(pool: &Pool, val: &ValidationSet, setup: &TrainSetup) -> Result<TrainOutcome> {
    let TrainSetup {
        model,
        optim,
        loss: loss_cfg,
        train: tc,
        seed,
    } = setup;
    loss_cfg.validate()?;
    let spec = BatchSpec { k: tc.k };
    spec.validate()?;
    pool.check_composition()?;
    if tc.eval_every == 0 || tc.patience == 0 {
        return Err(Error::Config("eval_every and patience must be positive".into()));
    }

    let mut net = Network::<f32>::init(model, derive_seed(*seed, "model-init"))?;
    let mut state = OptimState::new(net.parameter_count());
    let dim = net.embedding_dim();
    let (lr, wd) = (optim.lr(), optim.wd());
    let mut stopper = EarlyStopping::new(tc.patience);
    let mut best = net.clone();
    let mut best_iteration = 0;
    let mut log = Vec::new();
    let mut loss_acc = (0.0, 0usize);
    let mut skipped = 0;
    let started = Instant::now();
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    for it in 1..=tc.max_iterations {
        iterations = it;
        let mut rng = component_rng(*seed, &format!("batch/{it}"));
        let batch = sample_minibatch(pool, &spec, &mut rng)?;
        let fwd = match net.forward(&batch.windows, Mode::Train) {
            Ok(f) => f,
            Err(Error::NonFinite { layer }) => {
                log::warn!("iteration {it}: non-finite activation in layer {layer}");
                stop = StopReason::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        let sim = cosine_matrix(&fwd.embeddings, dim);
        let mined = mine(&sim, &batch.labels, loss_cfg.epsilon);
        let (loss, grad) = loss_grad(&sim, &mined, loss_cfg, &fwd.embeddings, dim);
        if !loss.is_finite() {
            log::warn!("iteration {it}: non-finite loss");
            stop = StopReason::Diverged;
            break;
        }
        let grads = net.backward(fwd.cache.as_ref(), &grad)?;
        if adamw_step(net.params_mut(), &grads.params, &mut state, lr, wd, optim) == StepOutcome::Skipped {
            log::warn!("iteration {it}: non-finite gradient, step skipped");
            skipped += 1;
        }
        net.commit_running(fwd.running_update.expect("train mode"));
        loss_acc.0 += loss;
        loss_acc.1 += 1;

        if it % tc.eval_every == 0 {
            let score = match validation_score(&net, val, tc.n_val_windows) {
                Ok(s) => s,
                Err(Error::NonFinite { .. }) => {
                    stop = StopReason::Diverged;
                    break;
                }
                Err(e) => return Err(e),
            };
            let verdict = stopper.observe(score.mean);
            log::info!("iteration {it}: loss {:.5}, validation EER {:.4}", loss_acc.0 / loss_acc.1 as f64, score.mean);
            log.push(LogRow {
                iteration: it,
                loss: loss_acc.0 / loss_acc.1 as f64,
                score,
                wall_seconds: started.elapsed().as_secs_f64(),
            });
            loss_acc = (0.0, 0);
            match verdict {
                Verdict::Improved => {
                    best = net.clone();
                    best_iteration = it;
                }
                Verdict::Stop => {
                    stop = StopReason::EarlyStopped;
                    break;
                }
                Verdict::NoImprovement => {}
            }
        }
    }
    best.lineage = format!("seed={seed} iteration={best_iteration}");
    Ok(TrainOutcome {
        best,
        best_score: stopper.best,
        best_iteration,
        log,
        stop,
        iterations,
        skipped_steps: skipped,
    })
}
