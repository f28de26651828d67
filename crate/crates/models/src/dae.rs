//! Denoising autoencoder over binary masks.
//!
//! Encoder: five stride-2 conv stages (the first four followed by a
//! stride-1 conv), a linear code layer, then a ReLU layer producing a
//! `(n/32)²` grid (optionally several channels deep). Decoder: five stages of nearest ×2 upsampling and two
//! 3×3 convs; the final conv yields one sigmoid channel.

use log::info;
use postdae_core::mask::{degrade, DegradationConfig};
use postdae_core::metrics::{soft_dice_with_grad, SOFT_DICE_EPSILON};
use postdae_core::seed::{derive_seed, rng_for};
use postdae_core::{BinaryMask, ProbabilityMap};
use postdae_nn::layers::{relu_backward, relu_inplace, sigmoid_backward, sigmoid_inplace, upsample2, upsample2_backward};
use postdae_nn::{Adam, AdamConfig, ArchitectureDescriptor, Checkpoint, Conv2d, Linear, Param, Real, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

pub const DAE_KIND: &str = "post-dae";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaeSpec {
    pub input_size: usize,
    pub code_width: usize,
    pub encoder_channels: [usize; 5],
    pub decoder_channels: usize,
    /// Channels of the grid the code is expanded onto (1 reproduces the
    /// single-plane layout; more widens the bottleneck at small inputs).
    pub expand_channels: usize,
}

impl Default for DaeSpec {
    fn default() -> Self {
        Self {
            input_size: 1024,
            code_width: 512,
            encoder_channels: [16, 32, 32, 32, 32],
            decoder_channels: 16,
            expand_channels: 1,
        }
    }
}

impl DaeSpec {
    pub fn with_input_size(input_size: usize) -> Self {
        Self {
            input_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return Err(ModelError::InvalidSpec(format!(
                "input size {} is not a positive multiple of 32",
                self.input_size
            )));
        }
        if self.code_width == 0 || self.decoder_channels == 0 || self.expand_channels == 0 || self.encoder_channels.contains(&0) {
            return Err(ModelError::InvalidSpec("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Side of the grid the code is expanded onto.
    pub fn grid(&self) -> usize {
        self.input_size / 32
    }
}

/// Intermediate activations kept for the backward pass.
struct Trace<T> {
    /// Input to every encoder conv; the last entry is the final encoder
    /// activation.
    enc: Vec<Tensor<T>>,
    code: Vec<T>,
    expanded: Vec<T>,
    /// Input to every decoder conv (after upsampling where applicable).
    dec_in: Vec<Tensor<T>>,
    /// Activated output of every decoder conv.
    dec_out: Vec<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Dae<T> {
    pub spec: DaeSpec,
    encoder: Vec<Conv2d<T>>,
    fc_code: Linear<T>,
    fc_expand: Linear<T>,
    decoder: Vec<Conv2d<T>>,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
}

impl<T: Real> Dae<T> {
    pub fn build(spec: &DaeSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_for(seed, &[0xDAE]);
        let mut encoder = Vec::new();
        let mut c_in = 1;
        for (s, &c) in spec.encoder_channels.iter().enumerate() {
            encoder.push(Conv2d::new(&format!("enc{}.down", s + 1), c_in, c, 3, 2, &mut rng));
            if s < 4 {
                encoder.push(Conv2d::new(&format!("enc{}.conv", s + 1), c, c, 3, 1, &mut rng));
            }
            c_in = c;
        }
        let g = spec.grid();
        let fc_code = Linear::new("code", g * g * c_in, spec.code_width, &mut rng);
        let fc_expand = Linear::new("expand", spec.code_width, spec.expand_channels * g * g, &mut rng);
        let d = spec.decoder_channels;
        let mut decoder = Vec::new();
        let mut c_in = spec.expand_channels;
        for s in 0..5 {
            decoder.push(Conv2d::new(&format!("dec{}.up", s + 1), c_in, d, 3, 1, &mut rng));
            let out = if s == 4 { 1 } else { d };
            decoder.push(Conv2d::new(&format!("dec{}.conv", s + 1), d, out, 3, 1, &mut rng));
            c_in = d;
        }
        Ok(Self {
            spec: spec.clone(),
            encoder,
            fc_code,
            fc_expand,
            decoder,
            epoch: 0,
            loss_history: Vec::new(),
        })
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = Vec::new();
        self.encoder.iter().for_each(|c| v.extend(c.params()));
        v.extend(self.fc_code.params());
        v.extend(self.fc_expand.params());
        self.decoder.iter().for_each(|c| v.extend(c.params()));
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = Vec::new();
        self.encoder.iter_mut().for_each(|c| v.extend(c.params_mut()));
        v.extend(self.fc_code.params_mut());
        v.extend(self.fc_expand.params_mut());
        self.decoder.iter_mut().for_each(|c| v.extend(c.params_mut()));
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn input_tensor(&self, mask: &BinaryMask) -> Result<Tensor<T>> {
        let n = self.spec.input_size;
        if mask.dims() != (n, n) {
            return Err(ModelError::DimensionMismatch {
                expected: (n, n),
                found: mask.dims(),
            });
        }
        let data = mask.pixels().iter().map(|&p| if p { T::one() } else { T::zero() }).collect();
        Ok(Tensor::from_vec(1, n, n, data))
    }

    fn encode_tensor(&self, x: Tensor<T>, enc: &mut Vec<Tensor<T>>) -> Vec<T> {
        let mut h = x;
        for conv in &self.encoder {
            let mut y = conv.forward(&h);
            relu_inplace(&mut y.data);
            enc.push(h);
            h = y;
        }
        let code = self.fc_code.forward(&h.data);
        enc.push(h);
        code
    }

    fn decode_code(&self, code: &[T], trace: Option<&mut Trace<T>>) -> (Vec<T>, Tensor<T>) {
        let g = self.spec.grid();
        let mut expanded = self.fc_expand.forward(code);
        relu_inplace(&mut expanded);
        let mut h = Tensor::from_vec(self.spec.expand_channels, g, g, expanded.clone());
        let mut dec_in = Vec::with_capacity(self.decoder.len());
        let mut dec_out = Vec::with_capacity(self.decoder.len());
        let last = self.decoder.len() - 1;
        for (i, conv) in self.decoder.iter().enumerate() {
            let x = if i % 2 == 0 { upsample2(&h) } else { h };
            let mut y = conv.forward(&x);
            if i == last {
                sigmoid_inplace(&mut y.data);
            } else {
                relu_inplace(&mut y.data);
            }
            dec_in.push(x);
            dec_out.push(y.clone());
            h = y;
        }
        if let Some(t) = trace {
            t.dec_in = dec_in;
            t.dec_out = dec_out;
        }
        (expanded, h)
    }

    fn forward_trace(&self, x: Tensor<T>) -> Trace<T> {
        let mut enc = Vec::with_capacity(self.encoder.len() + 1);
        let code = self.encode_tensor(x, &mut enc);
        let mut trace = Trace {
            enc,
            code: Vec::new(),
            expanded: Vec::new(),
            dec_in: Vec::new(),
            dec_out: Vec::new(),
        };
        let (expanded, _) = self.decode_code(&code, Some(&mut trace));
        trace.code = code;
        trace.expanded = expanded;
        trace
    }

    /// Backpropagates `d_out` (gradient w.r.t. the sigmoid output) and
    /// accumulates parameter gradients.
    fn backward(&mut self, trace: &Trace<T>, d_out: &[T]) {
        let last = self.decoder.len() - 1;
        let mut dy = Tensor::from_vec(1, self.spec.input_size, self.spec.input_size, d_out.to_vec());
        sigmoid_backward(&trace.dec_out[last].data, &mut dy.data);
        for i in (0..self.decoder.len()).rev() {
            let mut dx = self.decoder[i]
                .backward(&trace.dec_in[i], &dy, true)
                .expect("dx requested");
            if i % 2 == 0 {
                dx = upsample2_backward(&dx);
                if i > 0 {
                    relu_backward(&trace.dec_out[i - 1].data, &mut dx.data);
                }
            } else {
                relu_backward(&trace.dec_out[i - 1].data, &mut dx.data);
            }
            dy = dx;
        }
        let mut d_expanded = dy.data;
        relu_backward(&trace.expanded, &mut d_expanded);
        let d_code = self.fc_expand.backward(&trace.code, &d_expanded);
        let top = trace.enc.last().expect("encoder activations");
        let mut d_top = self.fc_code.backward(&top.data, &d_code);
        relu_backward(&top.data, &mut d_top);
        let mut dy = Tensor::from_vec(top.channels, top.height, top.width, d_top);
        for i in (0..self.encoder.len()).rev() {
            let x = &trace.enc[i];
            match self.encoder[i].backward(x, &dy, i > 0) {
                Some(mut dx) => {
                    relu_backward(&x.data, &mut dx.data);
                    dy = dx;
                }
                None => break,
            }
        }
    }

    pub fn encode(&self, mask: &BinaryMask) -> Result<Vec<T>> {
        let x = self.input_tensor(mask)?;
        Ok(self.encode_tensor(x, &mut Vec::new()))
    }

    pub fn decode_raw(&self, code: &[T]) -> Result<Vec<T>> {
        if code.len() != self.spec.code_width {
            return Err(ModelError::DimensionMismatch {
                expected: (self.spec.code_width, 1),
                found: (code.len(), 1),
            });
        }
        Ok(self.decode_code(code, None).1.data)
    }

    pub fn decode(&self, code: &[T]) -> Result<ProbabilityMap> {
        let n = self.spec.input_size;
        let values = self.decode_raw(code)?.into_iter().map(|v| v.as_f64() as f32).collect();
        Ok(ProbabilityMap::new(n, n, values)?)
    }

    pub fn reconstruct(&self, mask: &BinaryMask) -> Result<ProbabilityMap> {
        self.decode(&self.encode(mask)?)
    }

    /// Projects `mask` through the autoencoder and binarises at
    /// `threshold` (`p >= threshold` is foreground).
    pub fn postprocess(&self, mask: &BinaryMask, threshold: f64) -> Result<BinaryMask> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(ModelError::InvalidConfig(format!("threshold {threshold} outside (0, 1)")));
        }
        Ok(self
            .reconstruct(mask)?
            .threshold(threshold as f32)
            .with_spacing(mask.spacing()))
    }

    /// Soft Dice loss of reconstructing `clean` from `input`; accumulates
    /// gradients scaled by `scale` when `train` is set.
    pub fn loss_and_grad(&mut self, input: &BinaryMask, clean: &BinaryMask, epsilon: f64, scale: T) -> Result<f64> {
        let x = self.input_tensor(input)?;
        input.same_dims(clean)?;
        let trace = self.forward_trace(x);
        let out = &trace.dec_out.last().expect("decoder output").data;
        let mut grad = vec![T::zero(); out.len()];
        let loss = soft_dice_with_grad(out, clean.pixels(), epsilon, Some(&mut grad));
        grad.iter_mut().for_each(|g| *g *= scale);
        self.backward(&trace, &grad);
        Ok(loss.as_f64())
    }

    pub fn loss(&self, input: &BinaryMask, clean: &BinaryMask, epsilon: f64) -> Result<f64> {
        let p = self.decode_raw(&self.encode(input)?)?;
        input.same_dims(clean)?;
        Ok(soft_dice_with_grad(&p, clean.pixels(), epsilon, None).as_f64())
    }

    /// Number of expand units that fire for at least one of `masks`.
    pub fn active_expand_units(&self, masks: &[BinaryMask]) -> usize {
        let mut alive = vec![false; self.fc_expand.outputs];
        for m in masks {
            if let Ok(code) = self.encode(m) {
                for (a, v) in alive.iter_mut().zip(self.fc_expand.forward(&code)) {
                    *a |= v > T::zero();
                }
            }
        }
        alive.iter().filter(|&&a| a).count()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let arch = ArchitectureDescriptor {
            kind: DAE_KIND.into(),
            spec: serde_json::to_value(&self.spec).expect("spec serialises"),
            epoch: self.epoch,
            loss_history: self.loss_history.clone(),
            extra: serde_json::Value::Null,
        };
        Checkpoint::from_params(arch, self.params())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(DAE_KIND)?;
        let spec: DaeSpec = serde_json::from_value(ckpt.architecture.spec.clone())?;
        let mut model = Self::build(&spec, 0)?;
        ckpt.load_into(model.params_mut())?;
        model.epoch = ckpt.architecture.epoch;
        model.loss_history = ckpt.architecture.loss_history.clone();
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaeTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning-rate factor applied after every epoch (1 keeps it constant).
    pub lr_decay: f64,
    /// Stop after this many optimiser steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub dice_epsilon: f64,
    pub degradation: DegradationConfig,
    pub seed: u64,
}

impl Default for DaeTrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: 1e-4,
            batch_size: 15,
            epochs: 150,
            lr_decay: 1.0,
            max_steps: None,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            dice_epsilon: SOFT_DICE_EPSILON,
            degradation: DegradationConfig::default(),
            seed: 0,
        }
    }
}

impl DaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(ModelError::InvalidConfig(
                "learning_rate > 0, batch_size >= 1 and epochs >= 1 required".into(),
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(ModelError::InvalidConfig("lr_decay must lie in (0, 1]".into()));
        }
        self.degradation.validate()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Trains on masks only: each epoch visits the masks in a seeded order and
/// corrupts every sample afresh from `(seed, epoch, index)`. Records the
/// epoch-mean loss in `loss_history`.
pub fn train_dae<T: Real>(
    model: &mut Dae<T>,
    masks: &[BinaryMask],
    cfg: &DaeTrainConfig,
    mut on_epoch: impl FnMut(&Dae<T>, usize, f64),
) -> Result<()> {
    cfg.validate()?;
    if masks.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let n = model.spec.input_size;
    if let Some(m) = masks.iter().find(|m| m.dims() != (n, n)) {
        return Err(ModelError::DimensionMismatch {
            expected: (n, n),
            found: m.dims(),
        });
    }
    let mut adam = Adam::new(cfg.adam());
    let mut order: Vec<usize> = (0..masks.len()).collect();
    let mut steps = 0usize;
    'epochs: for _ in 0..cfg.epochs {
        let epoch = model.epoch + 1;
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, &[epoch as u64]));
        let (mut total, mut seen) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let scale = T::of(1.0 / batch.len() as f64);
            for &i in batch {
                let seed = derive_seed(cfg.seed ^ cfg.degradation.seed, &[epoch as u64, i as u64]);
                let corrupted = degrade(&masks[i], &cfg.degradation, &mut rng_for(seed, &[]));
                total += model.loss_and_grad(&corrupted, &masks[i], cfg.dice_epsilon, scale)?;
                seen += 1;
            }
            adam.step(model.params_mut());
            steps += 1;
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
        }
        let mean = total / seen as f64;
        model.epoch = epoch;
        model.loss_history.push(mean);
        adam.config.learning_rate *= cfg.lr_decay;
        info!("dae epoch {epoch}: loss {mean:.5}");
        on_epoch(model, epoch, mean);
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break 'epochs;
        }
    }
    Ok(())
}
