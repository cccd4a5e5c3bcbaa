//! Exponentially-dilated 1-D CNN embedding network with exact gradients.
//!
//! Each convolution (kernel 3, stride 1, no padding) is followed by ReLU and
//! then batch normalization. The last feature map is flattened and passed
//! through fully-connected layers; every one but the last is followed by
//! ReLU and the last one's output is the embedding.

mod checkpoint;
mod config;
pub mod layers;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load, save, to_bytes, from_bytes, CHECKPOINT_VERSION};
pub use config::{ConvSpec, ModelConfig};

use crate::error::{Error, Result};
use crate::numeric::Scalar;
use layers::{BnBatchStats, ConvShape, BN_MOMENTUM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct ConvLayout {
    weight: Range<usize>,
    bias: Range<usize>,
    gamma: Range<usize>,
    beta: Range<usize>,
    running_mean: Range<usize>,
    running_var: Range<usize>,
    shape: ConvShape,
}

#[derive(Debug, Clone)]
struct FcLayout {
    weight: Range<usize>,
    bias: Range<usize>,
    fin: usize,
    fout: usize,
}

/// Offsets of every tensor inside the flat parameter and running-state
/// vectors, in declaration order.
#[derive(Debug, Clone)]
struct Layout {
    conv: Vec<ConvLayout>,
    fc: Vec<FcLayout>,
    n_params: usize,
    n_running: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let mut p = 0;
        let mut r = 0;
        let take = |n: usize, at: &mut usize| {
            let range = *at..*at + n;
            *at += n;
            range
        };
        let mut cin = cfg.in_channels;
        let mut lin = cfg.input_len;
        let mut conv = Vec::new();
        for spec in &cfg.conv {
            let cout = spec.out_channels;
            let shape = ConvShape {
                batch: 0,
                cin,
                cout,
                lin,
                kernel: cfg.kernel,
                dilation: spec.dilation,
            };
            conv.push(ConvLayout {
                weight: take(cout * cin * cfg.kernel, &mut p),
                bias: take(cout, &mut p),
                gamma: take(cout, &mut p),
                beta: take(cout, &mut p),
                running_mean: take(cout, &mut r),
                running_var: take(cout, &mut r),
                shape,
            });
            cin = cout;
            lin = shape.lout();
        }
        let mut fin = cin * lin;
        let mut fc = Vec::new();
        for &fout in &cfg.fc_sizes {
            fc.push(FcLayout {
                weight: take(fout * fin, &mut p),
                bias: take(fout, &mut p),
                fin,
                fout,
            });
            fin = fout;
        }
        Layout {
            conv,
            fc,
            n_params: p,
            n_running: r,
        }
    }
}

/// All learnable weights (one flat vector) plus batch-norm running state.
#[derive(Debug, Clone)]
pub struct Network<T> {
    config: ModelConfig,
    params: Vec<T>,
    running: Vec<T>,
    layout: Layout,
    /// Free-form provenance (seed, training run) carried into checkpoints.
    pub lineage: String,
}

impl<T: Scalar> PartialEq for Network<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params && self.running == other.running
    }
}

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    batch: usize,
    input: Vec<T>,
    /// Post-ReLU (pre-norm) activations per conv layer.
    relu: Vec<Vec<T>>,
    /// Batch-norm outputs per conv layer (input to the next layer).
    normed: Vec<Vec<T>>,
    bn: Vec<BnBatchStats<T>>,
    /// Input of each fully-connected layer.
    fc_in: Vec<Vec<T>>,
    /// Pre-activation output of each fully-connected layer.
    fc_pre: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub embeddings: Vec<T>,
    pub batch: usize,
    pub cache: Option<Cache<T>>,
    /// Running statistics after this batch (train mode only); apply with
    /// [`Network::commit_running`].
    pub running_update: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// Same layout as [`Network::params`].
    pub params: Vec<T>,
    /// Same shape as the forward input.
    pub input: Vec<T>,
}

impl<T: Scalar> Network<T> {
    /// Fan-in-scaled uniform weights, batch-norm scale 1 / shift 0, running
    /// mean 0 / variance 1. Draws happen in `f64` so `f32` and `f64`
    /// networks from one seed agree up to rounding.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); layout.n_params];
        let mut running = vec![T::zero(); layout.n_running];
        let mut fill = |range: &Range<usize>, fan_in: usize, params: &mut [T]| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut params[range.clone()] {
                *v = T::of(rng.gen_range(-bound..bound));
            }
        };
        for l in &layout.conv {
            let fan_in = l.shape.cin * l.shape.kernel;
            fill(&l.weight, fan_in, &mut params);
            fill(&l.bias, fan_in, &mut params);
            params[l.gamma.clone()].iter_mut().for_each(|v| *v = T::one());
            running[l.running_var.clone()].iter_mut().for_each(|v| *v = T::one());
        }
        for l in &layout.fc {
            fill(&l.weight, l.fin, &mut params);
            fill(&l.bias, l.fin, &mut params);
        }
        Ok(Self {
            config: config.clone(),
            params,
            running,
            layout,
            lineage: format!("init seed={seed}"),
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<T>, running: Vec<T>, lineage: String) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.n_params || running.len() != layout.n_running {
            return Err(Error::Config(format!(
                "tensor sizes {}/{} do not match config ({}/{})",
                params.len(),
                running.len(),
                layout.n_params,
                layout.n_running
            )));
        }
        if running
            .iter()
            .enumerate()
            .any(|(i, v)| layout.conv.iter().any(|l| l.running_var.contains(&i)) && !(*v > T::zero()))
        {
            return Err(Error::Config("running variance must be positive".into()));
        }
        Ok(Self {
            config,
            params,
            running,
            layout,
            lineage,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn running(&self) -> &[T] {
        &self.running
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_size(&self) -> usize {
        self.config.in_channels * self.config.input_len
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim()
    }

    /// Named parameter tensors and their ranges in [`Network::params`],
    /// e.g. `conv0.weight`, `bn0.gamma`, `fc1.bias`.
    pub fn param_groups(&self) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        for (l, c) in self.layout.conv.iter().enumerate() {
            out.push((format!("conv{l}.weight"), c.weight.clone()));
            out.push((format!("conv{l}.bias"), c.bias.clone()));
            out.push((format!("bn{l}.gamma"), c.gamma.clone()));
            out.push((format!("bn{l}.beta"), c.beta.clone()));
        }
        for (l, f) in self.layout.fc.iter().enumerate() {
            out.push((format!("fc{l}.weight"), f.weight.clone()));
            out.push((format!("fc{l}.bias"), f.bias.clone()));
        }
        out
    }

    /// Batch-norm scale vector of conv layer `l` (0-based).
    pub fn bn_scale(&self, l: usize) -> &[T] {
        &self.params[self.layout.conv[l].gamma.clone()]
    }

    /// Converts to another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self.params.iter().map(|v| U::of(v.as_f64())).collect(),
            running: self.running.iter().map(|v| U::of(v.as_f64())).collect(),
            layout: self.layout.clone(),
            lineage: self.lineage.clone(),
        }
    }

    fn check_finite(v: &[T], layer: usize) -> Result<()> {
        if v.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { layer })
        }
    }

    /// Runs the convolution stack only, returning the last feature map
    /// (`batch × channels × length`).
    pub fn conv_features(&self, input: &[T], mode: Mode) -> Result<Vec<T>> {
        let batch = self.batch_of(input)?;
        let (features, _, _) = self.run_conv(input, batch, mode)?;
        Ok(features)
    }

    fn batch_of(&self, input: &[T]) -> Result<usize> {
        let size = self.input_size();
        if input.is_empty() || input.len() % size != 0 {
            return Err(Error::InvalidInput(format!(
                "input length {} is not a positive multiple of {size}",
                input.len()
            )));
        }
        Ok(input.len() / size)
    }

    #[allow(clippy::type_complexity)]
    fn run_conv(
        &self,
        input: &[T],
        batch: usize,
        mode: Mode,
    ) -> Result<(Vec<T>, Option<(Vec<Vec<T>>, Vec<Vec<T>>, Vec<BnBatchStats<T>>)>, Option<Vec<T>>)> {
        Self::check_finite(input, 0)?;
        let train = mode == Mode::Train;
        let mut relu_cache = Vec::new();
        let mut normed_cache = Vec::new();
        let mut bn_cache = Vec::new();
        let mut running = train.then(|| self.running.clone());
        let mut x: Vec<T> = input.to_vec();
        let momentum = T::of(BN_MOMENTUM);

        for (li, l) in self.layout.conv.iter().enumerate() {
            let shape = ConvShape { batch, ..l.shape };
            let lout = shape.lout();
            let mut a = layers::conv_forward(&x, &self.params[l.weight.clone()], &self.params[l.bias.clone()], shape);
            layers::relu_inplace(&mut a);
            let gamma = &self.params[l.gamma.clone()];
            let beta = &self.params[l.beta.clone()];
            let y = match mode {
                Mode::Train => {
                    let (y, stats) = layers::bn_train(&a, gamma, beta, batch, shape.cout, lout);
                    let run = running.as_mut().expect("train mode");
                    for c in 0..shape.cout {
                        let rm = &mut run[l.running_mean.start + c];
                        *rm = (T::one() - momentum) * *rm + momentum * stats.mean[c];
                        let rv = &mut run[l.running_var.start + c];
                        *rv = (T::one() - momentum) * *rv + momentum * stats.var_unbiased[c];
                    }
                    bn_cache.push(stats);
                    y
                }
                Mode::Eval => {
                    let mut y = a.clone();
                    layers::bn_eval(
                        &mut y,
                        gamma,
                        beta,
                        &self.running[l.running_mean.clone()],
                        &self.running[l.running_var.clone()],
                        shape.cout,
                        lout,
                    );
                    y
                }
            };
            Self::check_finite(&y, li + 1)?;
            if train {
                relu_cache.push(a);
                normed_cache.push(y.clone());
            }
            x = y;
        }
        let cache = train.then_some((relu_cache, normed_cache, bn_cache));
        Ok((x, cache, running))
    }

    /// Embeds a batch (`batch × in_channels × input_len`). Train mode uses
    /// batch statistics and returns a cache plus updated running stats;
    /// eval mode is a pure function of parameters and input.
    pub fn forward(&self, input: &[T], mode: Mode) -> Result<Forward<T>> {
        let batch = self.batch_of(input)?;
        let (mut x, conv_cache, running_update) = self.run_conv(input, batch, mode)?;
        let n_conv = self.layout.conv.len();
        let mut fc_in = Vec::new();
        let mut fc_pre = Vec::new();
        let last = self.layout.fc.len() - 1;
        for (fi, l) in self.layout.fc.iter().enumerate() {
            let mut h = layers::fc_forward(
                &x,
                &self.params[l.weight.clone()],
                &self.params[l.bias.clone()],
                batch,
                l.fin,
                l.fout,
            );
            Self::check_finite(&h, n_conv + fi + 1)?;
            if mode == Mode::Train {
                fc_in.push(std::mem::take(&mut x));
                fc_pre.push(h.clone());
            }
            if fi != last {
                layers::relu_inplace(&mut h);
            }
            x = h;
        }
        let cache = conv_cache.map(|(relu, normed, bn)| Cache {
            batch,
            input: input.to_vec(),
            relu,
            normed,
            bn,
            fc_in,
            fc_pre,
        });
        Ok(Forward {
            embeddings: x,
            batch,
            cache,
            running_update,
        })
    }

    /// Adopts the running statistics produced by a train-mode forward.
    pub fn commit_running(&mut self, update: Vec<T>) {
        assert_eq!(update.len(), self.running.len());
        self.running = update;
    }

    /// Exact reverse-mode gradient of `Σ grad_out · embeddings` with
    /// respect to every parameter and the input.
    pub fn backward(&self, cache: Option<&Cache<T>>, grad_out: &[T]) -> Result<Gradients<T>> {
        let cache = cache.ok_or(Error::MissingCache)?;
        let batch = cache.batch;
        if grad_out.len() != batch * self.embedding_dim() {
            return Err(Error::InvalidInput(format!(
                "gradient length {} != {}",
                grad_out.len(),
                batch * self.embedding_dim()
            )));
        }
        let mut grads = vec![T::zero(); self.params.len()];
        let mut dy = grad_out.to_vec();
        let last = self.layout.fc.len() - 1;
        for (fi, l) in self.layout.fc.iter().enumerate().rev() {
            if fi != last {
                for (d, pre) in dy.iter_mut().zip(&cache.fc_pre[fi]) {
                    if !(*pre > T::zero()) {
                        *d = T::zero();
                    }
                }
            }
            let (dx, dw, db) = layers::fc_backward(
                &cache.fc_in[fi],
                &self.params[l.weight.clone()],
                &dy,
                batch,
                l.fin,
                l.fout,
            );
            grads[l.weight.clone()].copy_from_slice(&dw);
            grads[l.bias.clone()].copy_from_slice(&db);
            dy = dx;
        }

        for (li, l) in self.layout.conv.iter().enumerate().rev() {
            let shape = ConvShape { batch, ..l.shape };
            let lout = shape.lout();
            let a = &cache.relu[li];
            let (mut da, dgamma, dbeta) = layers::bn_backward(
                a,
                &dy,
                &self.params[l.gamma.clone()],
                &cache.bn[li],
                batch,
                shape.cout,
                lout,
            );
            grads[l.gamma.clone()].copy_from_slice(&dgamma);
            grads[l.beta.clone()].copy_from_slice(&dbeta);
            for (d, av) in da.iter_mut().zip(a) {
                if !(*av > T::zero()) {
                    *d = T::zero();
                }
            }
            let x = if li == 0 { &cache.input } else { &cache.normed[li - 1] };
            let (dx, dw, db) = layers::conv_backward(x, &self.params[l.weight.clone()], &da, shape, true);
            grads[l.weight.clone()].copy_from_slice(&dw);
            grads[l.bias.clone()].copy_from_slice(&db);
            dy = dx;
        }
        Ok(Gradients {
            params: grads,
            input: dy,
        })
    }

    /// Eval-mode embeddings for any number of inputs, in chunks.
    pub fn embed(&self, input: &[T], chunk: usize) -> Result<Vec<T>> {
        let size = self.input_size();
        let mut out = Vec::with_capacity(input.len() / size.max(1) * self.embedding_dim());
        for part in input.chunks(size * chunk.max(1)) {
            out.extend(self.forward(part, Mode::Eval)?.embeddings);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig::uniform(3, 3, vec![5, 4]).with_input(2, 20)
    }

    #[test]
    fn init_is_deterministic_with_unit_bn_scale() {
        let a = Network::<f32>::init(&tiny(), 9).unwrap();
        let b = Network::<f32>::init(&tiny(), 9).unwrap();
        assert_eq!(a.params(), b.params());
        let c = Network::<f32>::init(&tiny(), 10).unwrap();
        assert_ne!(a.params(), c.params());
        for l in 0..3 {
            assert!(a.bn_scale(l).iter().all(|g| *g == 1.0));
        }
        assert_eq!(a.parameter_count(), tiny().parameter_count());
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = ModelConfig::uniform(2, 5, vec![4]).with_input(1, 60);
        assert!(matches!(Network::<f64>::init(&cfg, 0), Err(Error::Config(_))));
        let mut cfg = tiny();
        cfg.conv[1].dilation = 3;
        assert!(Network::<f64>::init(&cfg, 0).is_err());
    }

    #[test]
    fn eval_rows_are_independent() {
        let net = Network::<f64>::init(&tiny(), 1).unwrap();
        let row: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let other: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).cos()).collect();
        let batch = [row.clone(), other, row].concat();
        let out = net.forward(&batch, Mode::Eval).unwrap();
        assert_eq!(out.embeddings.len(), 3 * 4);
        assert_eq!(out.embeddings[..4], out.embeddings[8..]);
        assert!(out.cache.is_none());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let net = Network::<f64>::init(&tiny(), 2).unwrap();
        let x: Vec<f64> = (0..80).map(|i| (i as f64).sin()).collect();
        let f = net.forward(&x, Mode::Train).unwrap();
        let g = net.backward(f.cache.as_ref(), &vec![0.0; 8]).unwrap();
        assert!(g.params.iter().all(|v| *v == 0.0));
        assert!(g.input.iter().all(|v| *v == 0.0));
        assert!(matches!(net.backward(None, &[0.0; 8]), Err(Error::MissingCache)));
    }

    #[test]
    fn non_finite_input_reports_layer() {
        let net = Network::<f64>::init(&tiny(), 2).unwrap();
        let mut x = vec![0.0; 40];
        x[3] = f64::NAN;
        assert!(matches!(net.forward(&x, Mode::Eval), Err(Error::NonFinite { layer: 0 })));
    }

    #[test]
    fn train_forward_updates_running_stats_only_on_commit() {
        let mut net = Network::<f64>::init(&tiny(), 3).unwrap();
        let x: Vec<f64> = (0..120).map(|i| (i as f64 * 0.21).sin() * 3.0).collect();
        let before = net.running().to_vec();
        let f = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(net.running(), &before[..]);
        let update = f.running_update.unwrap();
        assert_ne!(update, before);
        net.commit_running(update.clone());
        assert_eq!(net.running(), &update[..]);
    }
}
