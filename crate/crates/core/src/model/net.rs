//! Encoder-decoder network: configuration, parameters, forward pass with a
//! tape, and reverse-mode gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, BnCache};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::tiler::AUX_CHANNELS;
use crate::voxel::{Shape3, CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub scales: usize,
    /// Width of the first scale; doubled at each deeper scale.
    pub base_channels: usize,
    pub in_channels: usize,
    pub aux_channels: usize,
    /// 26 for connectivity output, 1 for a plain mask head.
    pub out_channels: usize,
    /// When false every batch norm is replaced by identity and convolutions get a bias.
    pub batchnorm: bool,
    pub bn_eps: f64,
    /// Weight of the old running statistic in each update.
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            scales: 4,
            base_channels: 8,
            in_channels: 1,
            aux_channels: AUX_CHANNELS,
            out_channels: CHANNELS,
            batchnorm: true,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales < 2 {
            return Err(Error::invalid(format!("need at least 2 scales, got {}", self.scales)));
        }
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if !(self.bn_eps > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid("batch norm needs eps > 0 and momentum in [0, 1)"));
        }
        Ok(())
    }

    pub fn width(&self, scale: usize) -> usize {
        self.base_channels << scale
    }

    /// Spatial dims must halve cleanly down to the deepest scale.
    pub fn check_input(&self, s: Shape3) -> Result<()> {
        let f = 1usize << (self.scales - 1);
        if s.as_array().iter().any(|d| *d == 0 || d % f != 0) {
            return Err(Error::invalid(format!(
                "input {s} is not divisible by {f} for a {}-scale network",
                self.scales
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Running statistics are stored here too but never see gradients.
    pub trainable: bool,
}

/// Indices into [`ModelParams::tensors`] for one conv → BN → ReLU unit.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Unit {
    in_c: usize,
    out_c: usize,
    weight: usize,
    bias: Option<usize>,
    /// gamma, beta, running mean, running var
    bn: Option<[usize; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    enc: Vec<[Unit; 2]>,
    /// `dec[l]` produces scale `l`; `dec[scales - 1]` is unused.
    dec: Vec<[Unit; 2]>,
    head_w: usize,
    head_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub tensors: Vec<ParamTensor<T>>,
    layout: Layout,
}

struct Builder<'a, T> {
    tensors: Vec<ParamTensor<T>>,
    rng: &'a mut ChaCha8Rng,
    batchnorm: bool,
}

impl<T: Scalar> Builder<'_, T> {
    fn push(&mut self, name: String, shape: Vec<usize>, value: Vec<T>, trainable: bool) -> usize {
        let n = value.len();
        self.tensors.push(ParamTensor {
            name,
            shape,
            value,
            grad: vec![T::zero(); if trainable { n } else { 0 }],
            trainable,
        });
        self.tensors.len() - 1
    }

    fn he(&mut self, fan_in: usize, n: usize) -> Vec<T> {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        (0..n).map(|_| T::from_f64(normal.sample(self.rng))).collect()
    }

    fn unit(&mut self, name: &str, in_c: usize, out_c: usize) -> Unit {
        let w = self.he(in_c * 27, out_c * in_c * 27);
        let weight = self.push(format!("{name}.conv.weight"), vec![out_c, in_c, 3, 3, 3], w, true);
        let (bias, bn) = if self.batchnorm {
            let one = vec![T::one(); out_c];
            let zero = vec![T::zero(); out_c];
            let g = self.push(format!("{name}.bn.gamma"), vec![out_c], one.clone(), true);
            let b = self.push(format!("{name}.bn.beta"), vec![out_c], zero.clone(), true);
            let m = self.push(format!("{name}.bn.running_mean"), vec![out_c], zero, false);
            let v = self.push(format!("{name}.bn.running_var"), vec![out_c], one, false);
            (None, Some([g, b, m, v]))
        } else {
            let b = self.push(format!("{name}.conv.bias"), vec![out_c], vec![T::zero(); out_c], true);
            (Some(b), None)
        };
        Unit {
            in_c,
            out_c,
            weight,
            bias,
            bn,
        }
    }
}

/// Builds the tensor list in a fixed order.
fn build<T: Scalar>(config: &ModelConfig, rng: &mut ChaCha8Rng) -> (Vec<ParamTensor<T>>, Layout) {
    let mut b = Builder {
        tensors: Vec::new(),
        rng,
        batchnorm: config.batchnorm,
    };
    let s = config.scales;
    let mut enc = Vec::with_capacity(s);
    for l in 0..s {
        let in_c = if l == 0 { config.in_channels } else { config.width(l - 1) };
        let w = config.width(l);
        enc.push([b.unit(&format!("enc{l}.0"), in_c, w), b.unit(&format!("enc{l}.1"), w, w)]);
    }
    let mut dec = vec![enc[0]; s];
    for l in (0..s - 1).rev() {
        let aux = if l == 0 { config.aux_channels } else { 0 };
        let in_c = config.width(l + 1) + config.width(l) + aux;
        let w = config.width(l);
        dec[l] = [b.unit(&format!("dec{l}.0"), in_c, w), b.unit(&format!("dec{l}.1"), w, w)];
    }
    let c0 = config.width(0);
    let hw = b.he(c0, config.out_channels * c0);
    let head_w = b.push("head.weight".into(), vec![config.out_channels, c0, 1, 1, 1], hw, true);
    let head_b = b.push("head.bias".into(), vec![config.out_channels], vec![T::zero(); config.out_channels], true);
    (b.tensors, Layout { enc, dec, head_w, head_b })
}

impl<T: Scalar> ModelParams<T> {
    /// He-initialized parameters from a seeded generator.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (tensors, layout) = build(config, &mut rng);
        Ok(Self {
            config: config.clone(),
            tensors,
            layout,
        })
    }

    /// Zeroes the output convolution so every prediction is exactly 0.5.
    /// Only meant for tests: a zero head cannot break symmetry in training.
    pub fn zero_head(&mut self) {
        for i in [self.layout.head_w, self.layout.head_b] {
            self.tensors[i].value.fill(T::zero());
        }
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn trainable_count(&self) -> usize {
        self.tensors.iter().filter(|t| t.trainable).map(|t| t.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.fill(T::zero());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.value.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.to_f64().unwrap())).collect();
        ModelParams {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    value: conv(&t.value),
                    grad: conv(&t.grad),
                    trainable: t.trainable,
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    /// Folds the batch statistics of a training pass into the running stats.
    pub fn apply_bn_updates(&mut self, updates: &BnUpdates) {
        let m = self.config.bn_momentum;
        for (idx, stats) in &updates.0 {
            let [_, _, mean_i, var_i] = *idx;
            for (c, (mu, var)) in stats.iter().enumerate() {
                let rm = &mut self.tensors[mean_i].value[c];
                *rm = T::from_f64(m * rm.to_f64().unwrap() + (1.0 - m) * mu);
                let rv = &mut self.tensors[var_i].value[c];
                *rv = T::from_f64(m * rv.to_f64().unwrap() + (1.0 - m) * var);
            }
        }
    }
}

/// Per-BN-layer batch `(mean, unbiased variance)` from a training pass.
#[derive(Debug, Clone, Default)]
pub struct BnUpdates(Vec<([usize; 4], Vec<(f64, f64)>)>);

struct UnitCache<T> {
    input: Tensor<T>,
    bn: Option<BnCache<T>>,
    out: Tensor<T>,
}

/// Everything the backward pass needs from a training forward pass.
pub struct Tape<T> {
    enc: Vec<[UnitCache<T>; 2]>,
    pools: Vec<(Vec<u8>, Shape3)>,
    dec: Vec<Option<[UnitCache<T>; 2]>>,
    head_input: Tensor<T>,
    pub probs: Tensor<T>,
    mode: Mode,
}

impl<T: Scalar> Tape<T> {
    /// Every ReLU on/off decision and pooling choice made by the pass. Two
    /// passes with equal patterns evaluate the same smooth branch of the
    /// network, which is what finite-difference checks require.
    pub fn activation_pattern(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let units = self.enc.iter().chain(self.dec.iter().flatten());
        for pair in units {
            for u in pair {
                out.extend(u.out.data.iter().map(|v| (*v > T::zero()) as u8));
            }
        }
        for (arg, _) in &self.pools {
            out.extend_from_slice(arg);
        }
        out
    }
}

fn unit_forward<T: Scalar>(
    p: &ModelParams<T>,
    u: &Unit,
    x: Tensor<T>,
    mode: Mode,
    updates: &mut BnUpdates,
) -> UnitCache<T> {
    debug_assert_eq!(x.c, u.in_c);
    let w = &p.tensors[u.weight].value;
    let bias = u.bias.map(|b| p.tensors[b].value.as_slice());
    let z = ops::conv_forward(&x, w, bias, u.out_c, 3);
    let (mut out, bn) = match (u.bn, mode) {
        (None, _) => (z, None),
        (Some(idx), Mode::Train) => {
            let [g, b, _, _] = idx;
            let (y, cache, stats) = ops::bn_train_forward(&z, &p.tensors[g].value, &p.tensors[b].value, p.config.bn_eps);
            updates.0.push((idx, stats));
            (y, Some(cache))
        }
        (Some([g, b, m, v]), Mode::Eval) => {
            let t = &p.tensors;
            let y = ops::bn_eval_forward(&z, &t[g].value, &t[b].value, &t[m].value, &t[v].value, p.config.bn_eps);
            (y, None)
        }
    };
    ops::relu_inplace(&mut out);
    UnitCache { input: x, bn, out }
}

fn unit_backward<T: Scalar>(
    p: &mut ModelParams<T>,
    u: &Unit,
    cache: &UnitCache<T>,
    mut dy: Tensor<T>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    ops::relu_backward_inplace(&mut dy, &cache.out);
    let dz = match (u.bn, &cache.bn) {
        (Some([g, b, _, _]), Some(bc)) => {
            let (dz, dg, db) = ops::bn_backward(&dy, bc, &p.tensors[g].value);
            accumulate(&mut p.tensors[g].grad, &dg);
            accumulate(&mut p.tensors[b].grad, &db);
            dz
        }
        _ => dy,
    };
    let (dx, dw, db) = ops::conv_backward(&cache.input, &p.tensors[u.weight].value, &dz, 3, u.bias.is_some(), need_dx);
    accumulate(&mut p.tensors[u.weight].grad, &dw);
    if let (Some(b), Some(db)) = (u.bias, db) {
        accumulate(&mut p.tensors[b].grad, &db);
    }
    dx
}

fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Runs the network on `image` (`N × in × Z × H × W`) with context channels
/// `aux` (`N × 4 × Z × H × W`). Returns sigmoid outputs inside the tape plus
/// the running-stat updates a training pass implies; `params` is untouched.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    image: &Tensor<T>,
    aux: &Tensor<T>,
    mode: Mode,
) -> Result<(Tape<T>, BnUpdates)> {
    let cfg = &params.config;
    cfg.check_input(image.shape)?;
    if image.c != cfg.in_channels || aux.c != cfg.aux_channels {
        return Err(Error::invalid(format!(
            "expected {} image and {} context channels, got {} and {}",
            cfg.in_channels, cfg.aux_channels, image.c, aux.c
        )));
    }
    if aux.n != image.n || aux.shape != image.shape {
        return Err(Error::invalid("context channels must match the image in batch and spatial size"));
    }
    let layout = &params.layout;
    let s = cfg.scales;
    let mut updates = BnUpdates::default();
    let mut enc = Vec::with_capacity(s);
    let mut pools = Vec::new();
    let mut h = image.clone();
    for l in 0..s {
        let [u0, u1] = layout.enc[l];
        let a = unit_forward(params, &u0, h, mode, &mut updates);
        let b = unit_forward(params, &u1, a.out.clone(), mode, &mut updates);
        if l + 1 < s {
            let (pooled, arg) = ops::maxpool_forward(&b.out);
            pools.push((arg, b.out.shape));
            h = pooled;
        } else {
            h = b.out.clone();
        }
        enc.push([a, b]);
    }
    let mut dec: Vec<Option<[UnitCache<T>; 2]>> = (0..s).map(|_| None).collect();
    for l in (0..s - 1).rev() {
        let up = ops::upsample_forward(&h);
        let skip = &enc[l][1].out;
        let cat = if l == 0 {
            Tensor::concat(&[&up, skip, aux])?
        } else {
            Tensor::concat(&[&up, skip])?
        };
        let [u0, u1] = layout.dec[l];
        let a = unit_forward(params, &u0, cat, mode, &mut updates);
        let b = unit_forward(params, &u1, a.out.clone(), mode, &mut updates);
        h = b.out.clone();
        dec[l] = Some([a, b]);
    }
    let logits = ops::conv_forward(
        &h,
        &params.tensors[layout.head_w].value,
        Some(&params.tensors[layout.head_b].value),
        cfg.out_channels,
        1,
    );
    let probs = logits.map(sigmoid);
    if !probs.is_finite() {
        return Err(Error::Numeric("non-finite network output".into()));
    }
    Ok((
        Tape {
            enc,
            pools,
            dec,
            head_input: h,
            probs,
            mode,
        },
        updates,
    ))
}

/// Reverse pass from `dprobs = dL/dp`. Gradients are accumulated into the
/// `grad` buffers of `params`; call [`ModelParams::zero_grad`] first.
pub fn backward<T: Scalar>(params: &mut ModelParams<T>, tape: &Tape<T>, dprobs: &Tensor<T>) -> Result<()> {
    if tape.mode != Mode::Train {
        return Err(Error::invalid("backward needs a training-mode forward pass"));
    }
    if dprobs.data.len() != tape.probs.data.len() {
        return Err(Error::invalid("gradient does not match the network output"));
    }
    let layout = params.layout.clone();
    let s = params.config.scales;
    let mut dlogits = dprobs.clone();
    for (g, p) in dlogits.data.iter_mut().zip(&tape.probs.data) {
        *g = *g * *p * (T::one() - *p);
    }
    let hw = params.tensors[layout.head_w].value.clone();
    let (dh, dw, db) = ops::conv_backward(&tape.head_input, &hw, &dlogits, 1, true, true);
    accumulate(&mut params.tensors[layout.head_w].grad, &dw);
    accumulate(&mut params.tensors[layout.head_b].grad, &db.expect("head has a bias"));
    let mut dh = dh.expect("requested");
    let mut dskips: Vec<Option<Tensor<T>>> = (0..s).map(|_| None).collect();
    for l in 0..s - 1 {
        let [u0, u1] = layout.dec[l];
        let [c0, c1] = tape.dec[l].as_ref().expect("decoder scale ran");
        let d = unit_backward(params, &u1, c1, dh, true).expect("requested");
        let dcat = unit_backward(params, &u0, c0, d, true).expect("requested");
        let cfg = &params.config;
        let mut sizes = vec![cfg.width(l + 1), cfg.width(l)];
        if l == 0 {
            sizes.push(cfg.aux_channels);
        }
        let mut parts = dcat.split(&sizes).into_iter();
        let dup = parts.next().expect("split");
        dskips[l] = parts.next();
        dh = ops::upsample_backward(&dup);
    }
    for l in (0..s).rev() {
        if l + 1 < s {
            let (arg, full) = &tape.pools[l];
            let mut g = ops::maxpool_backward(&dh, arg, *full);
            accumulate(&mut g.data, &dskips[l].take().expect("skip gradient").data);
            dh = g;
        }
        let [u0, u1] = layout.enc[l];
        let [c0, c1] = &tape.enc[l];
        let d = unit_backward(params, &u1, c1, dh, true).expect("requested");
        match unit_backward(params, &u0, c0, d, l > 0) {
            Some(d) => dh = d,
            None => break,
        }
    }
    if params.tensors.iter().any(|t| t.grad.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(())
}
