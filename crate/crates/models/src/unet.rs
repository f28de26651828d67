//! UNet baseline: four down blocks, a bottleneck followed by dropout, four
//! up blocks with skip concatenation, and a two-layer head ending in one
//! sigmoid channel.

use log::info;
use postdae_core::metrics::{dice, soft_dice_with_grad, SOFT_DICE_EPSILON};
use postdae_core::seed::rng_for;
use postdae_core::{BinaryMask, GrayImage, ProbabilityMap};
use postdae_nn::layers::{
    dropout, maxpool2, maxpool2_backward, relu_backward, relu_inplace, sigmoid_backward, sigmoid_inplace,
};
use postdae_nn::tensor::{concat, split_channels};
use postdae_nn::{Adam, AdamConfig, ArchitectureDescriptor, Checkpoint, Conv2d, ConvTranspose2, Param, Real, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

pub const UNET_KIND: &str = "unet";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnetSpec {
    pub input_size: usize,
    /// Width of the first block; each level below doubles it.
    pub base_channels: usize,
    pub dropout_keep: f64,
}

impl Default for UnetSpec {
    fn default() -> Self {
        Self {
            input_size: 1024,
            base_channels: 16,
            dropout_keep: 0.5,
        }
    }
}

impl UnetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(16) {
            return Err(ModelError::InvalidSpec(format!(
                "input size {} is not a positive multiple of 16",
                self.input_size
            )));
        }
        if self.base_channels == 0 {
            return Err(ModelError::InvalidSpec("base_channels must be positive".into()));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(ModelError::InvalidSpec("dropout_keep must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

struct Block<T> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
}

impl<T: Real> Block<T> {
    fn new<R: Rng>(name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self {
            conv1: Conv2d::new(&format!("{name}.conv1"), c_in, c_out, 3, 1, rng),
            conv2: Conv2d::new(&format!("{name}.conv2"), c_out, c_out, 3, 1, rng),
        }
    }
}

impl<T: Clone> Clone for Block<T> {
    fn clone(&self) -> Self {
        Self {
            conv1: self.conv1.clone(),
            conv2: self.conv2.clone(),
        }
    }
}

/// Activations of one two-conv block: input, first and second outputs.
struct BlockTrace<T> {
    x: Tensor<T>,
    y1: Tensor<T>,
    y2: Tensor<T>,
}

fn block_forward<T: Real>(b: &Block<T>, x: Tensor<T>) -> BlockTrace<T> {
    let mut y1 = b.conv1.forward(&x);
    relu_inplace(&mut y1.data);
    let mut y2 = b.conv2.forward(&y1);
    relu_inplace(&mut y2.data);
    BlockTrace { x, y1, y2 }
}

/// `d` is the gradient w.r.t. the block's activated output.
fn block_backward<T: Real>(b: &mut Block<T>, t: &BlockTrace<T>, mut d: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
    relu_backward(&t.y2.data, &mut d.data);
    let mut d1 = b.conv2.backward(&t.y1, &d, true).expect("dx requested");
    relu_backward(&t.y1.data, &mut d1.data);
    b.conv1.backward(&t.x, &d1, need_dx)
}

struct Trace<T> {
    down: Vec<BlockTrace<T>>,
    pool_arg: Vec<Vec<usize>>,
    bottom: BlockTrace<T>,
    drop_mask: Option<Vec<T>>,
    up_x: Vec<Tensor<T>>,
    up_y: Vec<Tensor<T>>,
    up: Vec<BlockTrace<T>>,
    head_y: Tensor<T>,
    out: Tensor<T>,
}

pub struct Unet<T> {
    pub spec: UnetSpec,
    down: Vec<Block<T>>,
    bottom: Block<T>,
    upconv: Vec<ConvTranspose2<T>>,
    up: Vec<Block<T>>,
    head: Conv2d<T>,
    out: Conv2d<T>,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
}

impl<T: Real> Clone for Unet<T> {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            down: self.down.clone(),
            bottom: self.bottom.clone(),
            upconv: self.upconv.clone(),
            up: self.up.clone(),
            head: self.head.clone(),
            out: self.out.clone(),
            epoch: self.epoch,
            loss_history: self.loss_history.clone(),
        }
    }
}

impl<T: Real> Unet<T> {
    pub fn build(spec: &UnetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_for(seed, &[0x0E7]);
        let mut down = Vec::new();
        let mut c_in = 1;
        for l in 0..4 {
            down.push(Block::new(&format!("down{}", l + 1), c_in, spec.width(l), &mut rng));
            c_in = spec.width(l);
        }
        let bottom = Block::new("bottleneck", c_in, spec.width(4), &mut rng);
        let mut upconv = Vec::new();
        let mut up = Vec::new();
        for j in 0..4 {
            let l = 3 - j;
            upconv.push(ConvTranspose2::new(
                &format!("up{}.upconv", j + 1),
                spec.width(l + 1),
                spec.width(l),
                &mut rng,
            ));
            up.push(Block::new(&format!("up{}", j + 1), 2 * spec.width(l), spec.width(l), &mut rng));
        }
        let head = Conv2d::new("head.conv", spec.width(0), 2, 3, 1, &mut rng);
        let out = Conv2d::new("head.out", 2, 1, 1, 1, &mut rng);
        Ok(Self {
            spec: spec.clone(),
            down,
            bottom,
            upconv,
            up,
            head,
            out,
            epoch: 0,
            loss_history: Vec::new(),
        })
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = Vec::new();
        for b in self.down.iter().chain(std::iter::once(&self.bottom)) {
            v.extend(b.conv1.params());
            v.extend(b.conv2.params());
        }
        for (u, b) in self.upconv.iter().zip(&self.up) {
            v.extend(u.params());
            v.extend(b.conv1.params());
            v.extend(b.conv2.params());
        }
        v.extend(self.head.params());
        v.extend(self.out.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = Vec::new();
        for b in self.down.iter_mut().chain(std::iter::once(&mut self.bottom)) {
            v.extend(b.conv1.params_mut());
            v.extend(b.conv2.params_mut());
        }
        for (u, b) in self.upconv.iter_mut().zip(self.up.iter_mut()) {
            v.extend(u.params_mut());
            v.extend(b.conv1.params_mut());
            v.extend(b.conv2.params_mut());
        }
        v.extend(self.head.params_mut());
        v.extend(self.out.params_mut());
        v
    }

    fn input_tensor(&self, image: &GrayImage) -> Result<Tensor<T>> {
        let n = self.spec.input_size;
        if image.dims() != (n, n) {
            return Err(ModelError::DimensionMismatch {
                expected: (n, n),
                found: image.dims(),
            });
        }
        Ok(Tensor::from_vec(1, n, n, image.values.iter().map(|&v| T::of(v as f64)).collect()))
    }

    /// Full forward pass. Dropout is applied only when `rng` is given
    /// (training mode).
    fn forward_trace<R: Rng>(&self, x: Tensor<T>, rng: Option<&mut R>) -> Trace<T> {
        let mut down = Vec::with_capacity(4);
        let mut pool_arg = Vec::with_capacity(4);
        let mut h = x;
        for b in &self.down {
            let t = block_forward(b, h);
            let (p, arg) = maxpool2(&t.y2);
            down.push(t);
            pool_arg.push(arg);
            h = p;
        }
        let bottom = block_forward(&self.bottom, h);
        let mut h = bottom.y2.clone();
        let drop_mask = match rng {
            Some(r) if self.spec.dropout_keep < 1.0 => Some(dropout(&mut h.data, self.spec.dropout_keep, r)),
            _ => None,
        };
        let mut up_x = Vec::with_capacity(4);
        let mut up_y = Vec::with_capacity(4);
        let mut up = Vec::with_capacity(4);
        for (j, (u, b)) in self.upconv.iter().zip(&self.up).enumerate() {
            let mut y = u.forward(&h);
            relu_inplace(&mut y.data);
            let cat = concat(&down[3 - j].y2, &y);
            up_x.push(h);
            up_y.push(y);
            let t = block_forward(b, cat);
            h = t.y2.clone();
            up.push(t);
        }
        let mut head_y = self.head.forward(&h);
        relu_inplace(&mut head_y.data);
        let mut out = self.out.forward(&head_y);
        sigmoid_inplace(&mut out.data);
        Trace {
            down,
            pool_arg,
            bottom,
            drop_mask,
            up_x,
            up_y,
            up,
            head_y,
            out,
        }
    }

    fn backward(&mut self, t: &Trace<T>, d_out: &[T]) {
        let mut d = Tensor::from_vec(1, t.out.height, t.out.width, d_out.to_vec());
        sigmoid_backward(&t.out.data, &mut d.data);
        let mut d = self.out.backward(&t.head_y, &d, true).expect("dx requested");
        relu_backward(&t.head_y.data, &mut d.data);
        let last = &t.up[3].y2;
        let mut d = self.head.backward(last, &d, true).expect("dx requested");
        let mut d_skip: Vec<Option<Tensor<T>>> = vec![None, None, None, None];
        for j in (0..4).rev() {
            let l = 3 - j;
            let d_cat = block_backward(&mut self.up[j], &t.up[j], d, true).expect("dx requested");
            let (ds, mut du) = split_channels(&d_cat, self.spec.width(l));
            d_skip[l] = Some(ds);
            relu_backward(&t.up_y[j].data, &mut du.data);
            d = self.upconv[j].backward(&t.up_x[j], &du, true).expect("dx requested");
        }
        if let Some(m) = &t.drop_mask {
            for (g, &k) in d.data.iter_mut().zip(m) {
                *g *= k;
            }
        }
        let mut d = block_backward(&mut self.bottom, &t.bottom, d, true).expect("dx requested");
        for l in (0..4).rev() {
            let mut dy = maxpool2_backward(&d, &t.pool_arg[l], t.down[l].y2.shape());
            let ds = d_skip[l].take().expect("skip gradient");
            for (a, &b) in dy.data.iter_mut().zip(&ds.data) {
                *a += b;
            }
            match block_backward(&mut self.down[l], &t.down[l], dy, l > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }

    /// Eval-mode prediction (dropout disabled).
    pub fn predict(&self, image: &GrayImage) -> Result<ProbabilityMap> {
        let x = self.input_tensor(image)?;
        let t = self.forward_trace::<rand_chacha::ChaCha8Rng>(x, None);
        let n = self.spec.input_size;
        Ok(ProbabilityMap::new(n, n, t.out.data.iter().map(|v| v.as_f64() as f32).collect())?)
    }

    /// Training-mode output with dropout drawn from `rng`.
    pub fn forward_train<R: Rng>(&self, image: &GrayImage, rng: &mut R) -> Result<Vec<T>> {
        let x = self.input_tensor(image)?;
        Ok(self.forward_trace(x, Some(rng)).out.data)
    }

    /// Soft Dice loss of one sample in training mode; gradients scaled by
    /// `scale` accumulate into the parameters.
    pub fn loss_and_grad<R: Rng>(
        &mut self,
        image: &GrayImage,
        mask: &BinaryMask,
        epsilon: f64,
        scale: T,
        rng: &mut R,
    ) -> Result<f64> {
        if image.dims() != mask.dims() {
            return Err(ModelError::DimensionMismatch {
                expected: image.dims(),
                found: mask.dims(),
            });
        }
        let x = self.input_tensor(image)?;
        let t = self.forward_trace(x, Some(rng));
        let mut grad = vec![T::zero(); t.out.data.len()];
        let loss = soft_dice_with_grad(&t.out.data, mask.pixels(), epsilon, Some(&mut grad));
        grad.iter_mut().for_each(|g| *g *= scale);
        self.backward(&t, &grad);
        Ok(loss.as_f64())
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let arch = ArchitectureDescriptor {
            kind: UNET_KIND.into(),
            spec: serde_json::to_value(&self.spec).expect("spec serialises"),
            epoch: self.epoch,
            loss_history: self.loss_history.clone(),
            extra,
        };
        Checkpoint::from_params(arch, self.params())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(UNET_KIND)?;
        let spec: UnetSpec = serde_json::from_value(ckpt.architecture.spec.clone())?;
        let mut model = Self::build(&spec, 0)?;
        ckpt.load_into(model.params_mut())?;
        model.epoch = ckpt.architecture.epoch;
        model.loss_history = ckpt.architecture.loss_history.clone();
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnetTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub checkpoint_period: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-Dice improvement before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub dice_epsilon: f64,
    pub seed: u64,
}

impl Default for UnetTrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: 1e-5,
            batch_size: 4,
            checkpoint_period: 5,
            max_epochs: 200,
            patience: 20,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            dice_epsilon: SOFT_DICE_EPSILON,
            seed: 0,
        }
    }
}

impl UnetTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(ModelError::InvalidConfig(
                "learning_rate > 0, batch_size >= 1 and max_epochs >= 1 required".into(),
            ));
        }
        if self.checkpoint_period == 0 || self.patience == 0 {
            return Err(ModelError::InvalidConfig("checkpoint_period and patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// A model state captured during training.
pub struct UnetSnapshot<T> {
    pub epoch: usize,
    pub val_dice: f64,
    pub model: Unet<T>,
}

impl<T: Real> Clone for UnetSnapshot<T> {
    fn clone(&self) -> Self {
        Self {
            epoch: self.epoch,
            val_dice: self.val_dice,
            model: self.model.clone(),
        }
    }
}

pub struct UnetTrainOutcome<T> {
    /// Snapshots at every multiple of the checkpoint period.
    pub periodic: Vec<UnetSnapshot<T>>,
    /// Best validation-Dice state under the early-stopping rule.
    pub converged: UnetSnapshot<T>,
    pub epochs_run: usize,
}

/// Mean hard Dice (threshold 0.5) over a labelled set.
pub fn mean_dice<T: Real>(model: &Unet<T>, images: &[GrayImage], masks: &[BinaryMask]) -> Result<f64> {
    if images.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut total = 0.0;
    for (im, m) in images.iter().zip(masks) {
        total += dice(&model.predict(im)?.threshold(0.5), m)?;
    }
    Ok(total / images.len() as f64)
}

fn check_pairs(images: &[GrayImage], masks: &[BinaryMask], n: usize) -> Result<()> {
    if images.len() != masks.len() {
        return Err(ModelError::InvalidConfig(format!(
            "{} images but {} masks",
            images.len(),
            masks.len()
        )));
    }
    for (im, m) in images.iter().zip(masks) {
        for dims in [im.dims(), m.dims()] {
            if dims != (n, n) {
                return Err(ModelError::DimensionMismatch {
                    expected: (n, n),
                    found: dims,
                });
            }
        }
    }
    Ok(())
}

/// Trains with early stopping on validation Dice (the training set stands
/// in when no validation data is given). `on_snapshot` sees every periodic
/// snapshot as it is taken.
pub fn train_unet<T: Real>(
    mut model: Unet<T>,
    images: &[GrayImage],
    masks: &[BinaryMask],
    val_images: &[GrayImage],
    val_masks: &[BinaryMask],
    cfg: &UnetTrainConfig,
    mut on_snapshot: impl FnMut(&UnetSnapshot<T>),
) -> Result<UnetTrainOutcome<T>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let n = model.spec.input_size;
    check_pairs(images, masks, n)?;
    check_pairs(val_images, val_masks, n)?;
    let (vi, vm) = if val_images.is_empty() {
        (images, masks)
    } else {
        (val_images, val_masks)
    };
    let mut adam = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        epsilon: cfg.adam_epsilon,
    });
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut periodic = Vec::new();
    let mut best: Option<UnetSnapshot<T>> = None;
    let mut epochs_run = 0;
    for _ in 0..cfg.max_epochs {
        let epoch = model.epoch + 1;
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, &[epoch as u64]));
        let mut drop_rng = rng_for(cfg.seed, &[epoch as u64, 1]);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = T::of(1.0 / batch.len() as f64);
            for &i in batch {
                total += model.loss_and_grad(&images[i], &masks[i], cfg.dice_epsilon, scale, &mut drop_rng)?;
            }
            adam.step(model.params_mut());
        }
        model.epoch = epoch;
        model.loss_history.push(total / images.len() as f64);
        epochs_run += 1;
        let val = mean_dice(&model, vi, vm)?;
        info!("unet epoch {epoch}: loss {:.5} val dice {val:.4}", total / images.len() as f64);
        if best.as_ref().is_none_or(|b| val > b.val_dice) {
            best = Some(UnetSnapshot {
                epoch,
                val_dice: val,
                model: model.clone(),
            });
        }
        if epoch.is_multiple_of(cfg.checkpoint_period) {
            let snap = UnetSnapshot {
                epoch,
                val_dice: val,
                model: model.clone(),
            };
            on_snapshot(&snap);
            periodic.push(snap);
        }
        if best.as_ref().is_some_and(|b| epoch - b.epoch >= cfg.patience) {
            break;
        }
    }
    Ok(UnetTrainOutcome {
        periodic,
        converged: best.expect("at least one epoch"),
        epochs_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> UnetSpec {
        UnetSpec {
            input_size: 16,
            base_channels: 2,
            dropout_keep: 0.5,
        }
    }

    fn disc_sample(n: usize) -> (GrayImage, BinaryMask) {
        let c = n as f64 / 2.0;
        let mask = BinaryMask::from_fn(n, n, |r, col| {
            let (dr, dc) = (r as f64 - c, col as f64 - c);
            dr * dr + dc * dc <= (n as f64 / 4.0).powi(2)
        });
        let values = mask.pixels().iter().map(|&p| if p { 0.2 } else { 0.8 }).collect();
        (GrayImage::new(n, n, values).unwrap(), mask)
    }

    #[test]
    fn rejects_bad_input_size() {
        let spec = UnetSpec {
            input_size: 40,
            ..UnetSpec::default()
        };
        assert!(Unet::<f32>::build(&spec, 0).is_err());
    }

    #[test]
    fn output_is_probability_map_of_input_size() {
        let spec = UnetSpec {
            input_size: 32,
            base_channels: 4,
            dropout_keep: 0.5,
        };
        let net = Unet::<f32>::build(&spec, 1).unwrap();
        let (im, _) = disc_sample(32);
        let p = net.predict(&im).unwrap();
        assert_eq!(p.dims(), (32, 32));
        assert!(p.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn eval_mode_is_deterministic_and_training_mode_is_not() {
        let net = Unet::<f64>::build(&tiny(), 2).unwrap();
        let (im, _) = disc_sample(16);
        assert_eq!(net.predict(&im).unwrap(), net.predict(&im).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = net.forward_train(&im, &mut rng).unwrap();
        let b = net.forward_train(&im, &mut rng).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec = UnetSpec {
            dropout_keep: 1.0,
            ..tiny()
        };
        let mut net = Unet::<f64>::build(&spec, 3).unwrap();
        let (im, mask) = disc_sample(16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        net.loss_and_grad(&im, &mask, 1.0, 1.0, &mut rng).unwrap();
        let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();
        let loss_of = |net: &Unet<f64>| -> f64 {
            let out = net.forward_train(&im, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            soft_dice_with_grad(&out, mask.pixels(), 1.0, None)
        };
        let h = 1e-6;
        let mut pick = ChaCha8Rng::seed_from_u64(9);
        let n_params = analytic.len();
        for _ in 0..60 {
            let pi = pick.random_range(0..n_params);
            let k = pick.random_range(0..analytic[pi].len());
            let mut plus = net.clone();
            plus.params_mut()[pi].value[k] += h;
            let mut minus = net.clone();
            minus.params_mut()[pi].value[k] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let a = analytic[pi][k];
            let scale = a.abs().max(fd.abs());
            assert!(
                (a - fd).abs() <= 1e-4 * scale || (a - fd).abs() < 1e-9,
                "param {pi}[{k}]: analytic {a} vs numeric {fd}"
            );
        }
    }

    #[test]
    fn periodic_snapshots_are_multiples_of_the_period() {
        let net = Unet::<f32>::build(&tiny(), 4).unwrap();
        let (im, mask) = disc_sample(16);
        let cfg = UnetTrainConfig {
            learning_rate: 1e-3,
            checkpoint_period: 3,
            max_epochs: 10,
            patience: 100,
            ..UnetTrainConfig::default()
        };
        let mut seen = Vec::new();
        let out = train_unet(net, &[im], &[mask], &[], &[], &cfg, |s| seen.push(s.epoch)).unwrap();
        assert_eq!(seen, vec![3, 6, 9]);
        assert_eq!(out.periodic.iter().map(|s| s.epoch).collect::<Vec<_>>(), seen);
        assert_eq!(out.epochs_run, 10);
    }

    #[test]
    fn early_stopping_respects_patience() {
        let net = Unet::<f32>::build(&tiny(), 5).unwrap();
        let (im, mask) = disc_sample(16);
        let cfg = UnetTrainConfig {
            learning_rate: 1e-12,
            max_epochs: 50,
            patience: 2,
            ..UnetTrainConfig::default()
        };
        let out = train_unet(net, &[im], &[mask], &[], &[], &cfg, |_| {}).unwrap();
        // a negligible step size cannot improve validation Dice
        assert!(out.epochs_run <= out.converged.epoch + 2);
        assert!(out.epochs_run < 50);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Unet::<f32>::build(&tiny(), 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        net.to_checkpoint(serde_json::json!({"stage": "unet-epoch-5"})).save(dir.path()).unwrap();
        let ck = Checkpoint::load(dir.path()).unwrap();
        let back = Unet::<f32>::from_checkpoint(&ck).unwrap();
        let (im, _) = disc_sample(16);
        assert_eq!(back.predict(&im).unwrap(), net.predict(&im).unwrap());
        assert!(crate::dae::Dae::<f32>::from_checkpoint(&ck).is_err());
    }
}
