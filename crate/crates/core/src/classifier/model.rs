//! Residual CNN over single-channel constellation images.

use serde::{Deserialize, Serialize};

use super::ops::*;
use super::scalar::Scalar;
use crate::error::{invalid, Error, Result};
use crate::featurize::{ConstellationImage, FrameLabel, NUM_LABELS};
use crate::rng::{stream, Rng};

pub const RUNNING_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Batch statistics while training, running statistics at inference.
    Batch,
    /// Learned per-channel scale and offset only; outputs do not depend on
    /// batch composition.
    Affine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_resolution: usize,
    pub stem_width: usize,
    pub stem_stride: usize,
    /// 3×3 stride-2 max pool after the stem.
    pub stem_pool: bool,
    /// Channel width of each stage.
    pub widths: Vec<usize>,
    /// Residual blocks per stage.
    pub blocks: Vec<usize>,
    pub num_classes: usize,
    pub norm: NormMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_resolution: 128,
            stem_width: 8,
            stem_stride: 2,
            stem_pool: true,
            widths: vec![16, 32, 64],
            blocks: vec![2, 2, 2],
            num_classes: NUM_LABELS,
            norm: NormMode::Batch,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Resolution 16, one block per stage; small enough for exhaustive
    /// finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            input_resolution: 16,
            stem_width: 4,
            widths: vec![4, 8],
            blocks: vec![1, 1],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfiguration(m));
        if self.num_classes != NUM_LABELS {
            return bad(format!("num_classes must be {NUM_LABELS}, got {}", self.num_classes));
        }
        if self.input_resolution < 16 {
            return bad(format!("input_resolution {} below 16", self.input_resolution));
        }
        if self.widths.is_empty() || self.widths.len() != self.blocks.len() {
            return bad("widths and blocks must be non-empty and of equal length".into());
        }
        if self.widths.iter().chain(&self.blocks).any(|&v| v == 0) || self.stem_width == 0 {
            return bad("widths and block counts must be positive".into());
        }
        if !(1..=4).contains(&self.stem_stride) {
            return bad(format!("stem_stride {} outside 1..=4", self.stem_stride));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ParamKind {
    ConvWeight { fan_in: usize },
    NormScale,
    NormShift,
    HeadWeight { fan_in: usize },
    HeadBias,
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamSpec {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub kind: ParamKind,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    geom: ConvGeom,
    w: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    c: usize,
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Debug)]
struct Block {
    conv1: Conv,
    bn1: Norm,
    conv2: Conv,
    bn2: Norm,
    proj: Option<(Conv, Norm)>,
}

#[derive(Clone, Debug)]
struct Layout {
    stem: Conv,
    stem_bn: Norm,
    blocks: Vec<Block>,
    feat: usize,
    head_w: usize,
    head_b: usize,
    params: Vec<ParamSpec>,
    buffer_names: Vec<String>,
    n_params: usize,
    n_buffers: usize,
}

struct LayoutBuilder {
    params: Vec<ParamSpec>,
    buffer_names: Vec<String>,
    n_params: usize,
    n_buffers: usize,
}

impl LayoutBuilder {
    fn param(&mut self, name: String, len: usize, kind: ParamKind) -> usize {
        let offset = self.n_params;
        self.params.push(ParamSpec { name, offset, len, kind });
        self.n_params += len;
        offset
    }

    fn buffer(&mut self, name: String, len: usize) -> usize {
        let offset = self.n_buffers;
        self.buffer_names.push(name);
        self.n_buffers += len;
        offset
    }

    fn conv(&mut self, name: &str, geom: ConvGeom) -> Conv {
        let fan_in = geom.cin * geom.k * geom.k;
        let w = self.param(format!("{name}.weight"), geom.weights(), ParamKind::ConvWeight { fan_in });
        Conv { geom, w }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        Norm {
            c,
            gamma: self.param(format!("{name}.scale"), c, ParamKind::NormScale),
            beta: self.param(format!("{name}.shift"), c, ParamKind::NormShift),
            mean: self.buffer(format!("{name}.running_mean"), c),
            var: self.buffer(format!("{name}.running_var"), c),
        }
    }
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Layout {
        let mut lb = LayoutBuilder {
            params: Vec::new(),
            buffer_names: Vec::new(),
            n_params: 0,
            n_buffers: 0,
        };
        let stem = lb.conv(
            "stem.conv",
            ConvGeom { cin: 1, cout: cfg.stem_width, k: 3, stride: cfg.stem_stride, pad: 1 },
        );
        let stem_bn = lb.norm("stem.norm", cfg.stem_width);
        let mut blocks = Vec::new();
        let mut cin = cfg.stem_width;
        for (s, (&width, &count)) in cfg.widths.iter().zip(&cfg.blocks).enumerate() {
            for b in 0..count {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let p = format!("stage{}.block{}", s + 1, b);
                let conv1 = lb.conv(&format!("{p}.conv1"), ConvGeom { cin, cout: width, k: 3, stride, pad: 1 });
                let bn1 = lb.norm(&format!("{p}.norm1"), width);
                let conv2 = lb.conv(&format!("{p}.conv2"), ConvGeom { cin: width, cout: width, k: 3, stride: 1, pad: 1 });
                let bn2 = lb.norm(&format!("{p}.norm2"), width);
                let proj = (stride != 1 || cin != width).then(|| {
                    let c = lb.conv(&format!("{p}.proj.conv"), ConvGeom { cin, cout: width, k: 1, stride, pad: 0 });
                    (c, lb.norm(&format!("{p}.proj.norm"), width))
                });
                blocks.push(Block { conv1, bn1, conv2, bn2, proj });
                cin = width;
            }
        }
        let feat = cin;
        let head_w = lb.param("head.weight".into(), cfg.num_classes * feat, ParamKind::HeadWeight { fan_in: feat });
        let head_b = lb.param("head.bias".into(), cfg.num_classes, ParamKind::HeadBias);
        Layout {
            stem,
            stem_bn,
            blocks,
            feat,
            head_w,
            head_b,
            params: lb.params,
            buffer_names: lb.buffer_names,
            n_params: lb.n_params,
            n_buffers: lb.n_buffers,
        }
    }

    fn norms(&self) -> Vec<Norm> {
        let mut v = vec![self.stem_bn];
        for b in &self.blocks {
            v.push(b.bn1);
            v.push(b.bn2);
            if let Some((_, n)) = b.proj {
                v.push(n);
            }
        }
        v
    }
}

/// Number of trainable scalars implied by a configuration.
pub fn param_count(cfg: &ModelConfig) -> usize {
    Layout::new(cfg).n_params
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<T>,
    buffers: Vec<T>,
}

struct ConvRec<T> {
    cols: Vec<T>,
    x_shape: Shape,
}

enum NormRec<T> {
    Batch(BnCache<T>),
    Affine(Vec<T>),
}

struct BlockRec<T> {
    x_shape: Shape,
    c1: ConvRec<T>,
    n1: NormRec<T>,
    r1: Vec<T>,
    c2: ConvRec<T>,
    n2: NormRec<T>,
    proj: Option<(ConvRec<T>, NormRec<T>)>,
    out: Vec<T>,
}

struct Tape<T> {
    stem: ConvRec<T>,
    stem_n: NormRec<T>,
    stem_out: Vec<T>,
    stem_shape: Shape,
    pool: Option<Vec<u32>>,
    blocks: Vec<BlockRec<T>>,
    last_shape: Shape,
    pooled: Vec<T>,
}

/// Batch means and variances observed during a training pass, in
/// normalization-layer order.
#[derive(Clone, Debug, Default)]
pub struct BatchStats<T> {
    entries: Vec<(usize, Vec<T>, Vec<T>)>,
}

pub struct LossGrad<T> {
    pub loss: T,
    pub grad: Vec<T>,
    pub logits: Vec<T>,
    pub stats: BatchStats<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = Rng::new(config.seed, stream::INIT);
        let mut params = vec![T::zero(); layout.n_params];
        for spec in &layout.params {
            let dst = &mut params[spec.offset..spec.offset + spec.len];
            match spec.kind {
                ParamKind::ConvWeight { fan_in } => {
                    let sd = (2.0 / fan_in as f64).sqrt();
                    dst.iter_mut().for_each(|v| *v = T::of_f64(sd * rng.standard_normal()));
                }
                ParamKind::NormScale => dst.iter_mut().for_each(|v| *v = T::one()),
                ParamKind::HeadWeight { fan_in } => {
                    let a = 1.0 / (fan_in as f64).sqrt();
                    dst.iter_mut().for_each(|v| *v = T::of_f64(rng.uniform_in(-a, a)));
                }
                ParamKind::NormShift | ParamKind::HeadBias => {}
            }
        }
        let mut buffers = vec![T::zero(); layout.n_buffers];
        for n in layout.norms() {
            buffers[n.var..n.var + n.c].iter_mut().for_each(|v| *v = T::one());
        }
        Ok(Self { config, layout, params, buffers })
    }

    /// Rebuilds a model from stored values; lengths must match the layout.
    pub fn from_parts(config: ModelConfig, params: Vec<T>, buffers: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.n_params || buffers.len() != layout.n_buffers {
            return Err(invalid(format!(
                "expected {} parameters and {} buffers, got {} and {}",
                layout.n_params,
                layout.n_buffers,
                params.len(),
                buffers.len()
            )));
        }
        Ok(Self { config, layout, params, buffers })
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

    pub fn buffers(&self) -> &[T] {
        &self.buffers
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.layout.params
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.layout.buffer_names
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|v| U::of_f64(v.as_f64())).collect(),
            buffers: self.buffers.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }

    /// Zeroes the classification head so every input yields uniform logits.
    pub fn zero_head(&mut self) {
        let l = &self.layout;
        let n = self.config.num_classes;
        self.params[l.head_w..l.head_w + n * l.feat].iter_mut().for_each(|v| *v = T::zero());
        self.params[l.head_b..l.head_b + n].iter_mut().for_each(|v| *v = T::zero());
    }

    fn pixels(&self) -> usize {
        self.config.input_resolution * self.config.input_resolution
    }

    fn check_input(&self, images: &[T], batch: usize) -> Result<()> {
        if batch == 0 {
            return Err(invalid("empty batch"));
        }
        if images.len() != batch * self.pixels() {
            return Err(invalid(format!(
                "batch of {batch} needs {} values at resolution {}, got {}",
                batch * self.pixels(),
                self.config.input_resolution,
                images.len()
            )));
        }
        Ok(())
    }

    fn p(&self, off: usize, len: usize) -> &[T] {
        &self.params[off..off + len]
    }

    fn conv_fwd(&self, c: &Conv, x: &Tensor<T>, keep: bool) -> (Tensor<T>, Option<ConvRec<T>>) {
        let (y, cols) = conv_forward(x, self.p(c.w, c.geom.weights()), &c.geom);
        (y, keep.then(|| ConvRec { cols, x_shape: x.shape }))
    }

    fn norm_fwd(&self, n: &Norm, x: Tensor<T>, train: bool, stats: &mut BatchStats<T>) -> (Tensor<T>, Option<NormRec<T>>) {
        let gamma = self.p(n.gamma, n.c);
        let beta = self.p(n.beta, n.c);
        match (self.config.norm, train) {
            (NormMode::Batch, true) => {
                let (y, cache, means, vars) = bn_forward_train(&x, gamma, beta);
                stats.entries.push((n.mean, means, vars));
                (y, Some(NormRec::Batch(cache)))
            }
            (NormMode::Batch, false) => {
                let y = bn_forward_fixed(
                    &x,
                    gamma,
                    beta,
                    &self.buffers[n.mean..n.mean + n.c],
                    &self.buffers[n.var..n.var + n.c],
                    T::of_f64(BN_EPS),
                );
                (y, None)
            }
            (NormMode::Affine, _) => {
                let zeros = vec![T::zero(); n.c];
                let ones = vec![T::one(); n.c];
                let y = bn_forward_fixed(&x, gamma, beta, &zeros, &ones, T::zero());
                (y, train.then(|| NormRec::Affine(x.data)))
            }
        }
    }

    /// Forward pass over `batch` row-major images stored back to back.
    /// Returns `[batch][num_classes]` logits and, in training mode, the tape.
    fn run(&self, images: &[T], batch: usize, train: bool, stats: &mut BatchStats<T>) -> (Vec<T>, Option<Tape<T>>) {
        let l = &self.layout;
        let res = self.config.input_resolution;
        let x = Tensor {
            shape: Shape { c: 1, b: batch, h: res, w: res },
            data: images.to_vec(),
        };
        let (a, stem) = self.conv_fwd(&l.stem, &x, train);
        let (mut h, stem_n) = self.norm_fwd(&l.stem_bn, a, train, stats);
        relu_in_place(&mut h);
        let stem_shape = h.shape;
        let stem_out = if train { h.data.clone() } else { Vec::new() };
        let mut pool = None;
        if self.config.stem_pool {
            let (p, arg) = maxpool_forward(&h);
            h = p;
            if train {
                pool = Some(arg);
            }
        }
        let mut recs = Vec::new();
        for b in &l.blocks {
            let x_shape = h.shape;
            let (a1, c1) = self.conv_fwd(&b.conv1, &h, train);
            let (mut r1, n1) = self.norm_fwd(&b.bn1, a1, train, stats);
            relu_in_place(&mut r1);
            let (a2, c2) = self.conv_fwd(&b.conv2, &r1, train);
            let (mut out, n2) = self.norm_fwd(&b.bn2, a2, train, stats);
            let proj = match &b.proj {
                Some((pc, pn)) => {
                    let (ap, cp) = self.conv_fwd(pc, &h, train);
                    let (sp, np) = self.norm_fwd(pn, ap, train, stats);
                    for (o, s) in out.data.iter_mut().zip(&sp.data) {
                        *o = *o + *s;
                    }
                    cp.zip(np)
                }
                None => {
                    for (o, s) in out.data.iter_mut().zip(&h.data) {
                        *o = *o + *s;
                    }
                    None
                }
            };
            relu_in_place(&mut out);
            if train {
                recs.push(BlockRec {
                    x_shape,
                    c1: c1.unwrap(),
                    n1: n1.unwrap(),
                    r1: r1.data,
                    c2: c2.unwrap(),
                    n2: n2.unwrap(),
                    proj,
                    out: out.data.clone(),
                });
            }
            h = out;
        }
        let pooled = gap_forward(&h);
        let k = self.config.num_classes;
        let w = self.p(l.head_w, k * l.feat);
        let bias = self.p(l.head_b, k);
        let mut logits = vec![T::zero(); batch * k];
        for bi in 0..batch {
            for j in 0..k {
                let mut acc = bias[j];
                for c in 0..l.feat {
                    acc = acc + w[j * l.feat + c] * pooled[c * batch + bi];
                }
                logits[bi * k + j] = acc;
            }
        }
        let tape = train.then(|| Tape {
            stem: stem.unwrap(),
            stem_n: stem_n.unwrap(),
            stem_out,
            stem_shape,
            pool,
            blocks: recs,
            last_shape: h.shape,
            pooled,
        });
        (logits, tape)
    }

    fn norm_bwd(&self, n: &Norm, dy: &Tensor<T>, rec: &NormRec<T>, grad: &mut [T]) -> Tensor<T> {
        let gamma = self.p(n.gamma, n.c);
        let (gs, bs) = (n.gamma, n.beta);
        let mut dg = grad[gs..gs + n.c].to_vec();
        let mut db = grad[bs..bs + n.c].to_vec();
        let dx = match rec {
            NormRec::Batch(cache) => bn_backward_train(dy, cache, gamma, &mut dg, &mut db),
            NormRec::Affine(x) => affine_backward(dy, x, gamma, &mut dg, &mut db),
        };
        grad[gs..gs + n.c].copy_from_slice(&dg);
        grad[bs..bs + n.c].copy_from_slice(&db);
        dx
    }

    fn conv_bwd(&self, c: &Conv, dy: &Tensor<T>, rec: &ConvRec<T>, grad: &mut [T], need_dx: bool) -> Option<Tensor<T>> {
        let n = c.geom.weights();
        conv_backward(dy, &rec.cols, self.p(c.w, n), rec.x_shape, &c.geom, &mut grad[c.w..c.w + n], need_dx)
    }

    fn backward(&self, tape: &Tape<T>, dlogits: &[T], batch: usize) -> Vec<T> {
        let l = &self.layout;
        let k = self.config.num_classes;
        let mut grad = vec![T::zero(); l.n_params];
        let w = self.p(l.head_w, k * l.feat);
        let mut dpooled = vec![T::zero(); l.feat * batch];
        for bi in 0..batch {
            for j in 0..k {
                let d = dlogits[bi * k + j];
                grad[l.head_b + j] = grad[l.head_b + j] + d;
                for c in 0..l.feat {
                    let gi = l.head_w + j * l.feat + c;
                    grad[gi] = grad[gi] + d * tape.pooled[c * batch + bi];
                    dpooled[c * batch + bi] = dpooled[c * batch + bi] + d * w[j * l.feat + c];
                }
            }
        }
        let mut dh = gap_backward(&dpooled, tape.last_shape);
        for (b, rec) in l.blocks.iter().zip(&tape.blocks).rev() {
            relu_backward_in_place(&mut dh, &rec.out);
            let d2 = self.norm_bwd(&b.bn2, &dh, &rec.n2, &mut grad);
            let mut dr1 = self.conv_bwd(&b.conv2, &d2, &rec.c2, &mut grad, true).unwrap();
            relu_backward_in_place(&mut dr1, &rec.r1);
            let d1 = self.norm_bwd(&b.bn1, &dr1, &rec.n1, &mut grad);
            let mut dx = self.conv_bwd(&b.conv1, &d1, &rec.c1, &mut grad, true).unwrap();
            match (&b.proj, &rec.proj) {
                (Some((pc, pn)), Some((cr, nr))) => {
                    let dp = self.norm_bwd(pn, &dh, nr, &mut grad);
                    let ds = self.conv_bwd(pc, &dp, cr, &mut grad, true).unwrap();
                    for (a, s) in dx.data.iter_mut().zip(&ds.data) {
                        *a = *a + *s;
                    }
                }
                _ => {
                    for (a, s) in dx.data.iter_mut().zip(&dh.data) {
                        *a = *a + *s;
                    }
                }
            }
            debug_assert_eq!(dx.shape, rec.x_shape);
            dh = dx;
        }
        if let Some(arg) = &tape.pool {
            dh = maxpool_backward(&dh, arg, tape.stem_shape);
        }
        relu_backward_in_place(&mut dh, &tape.stem_out);
        let ds = self.norm_bwd(&l.stem_bn, &dh, &tape.stem_n, &mut grad);
        self.conv_bwd(&l.stem, &ds, &tape.stem, &mut grad, false);
        grad
    }

    /// Inference logits, `[batch][num_classes]`.
    pub fn logits(&self, images: &[T], batch: usize) -> Result<Vec<T>> {
        self.check_input(images, batch)?;
        Ok(self.run(images, batch, false, &mut BatchStats::default()).0)
    }

    /// Mean cross-entropy over the batch and its gradient with respect to
    /// every parameter, using training-mode normalization.
    pub fn loss_and_grad(&self, images: &[T], labels: &[FrameLabel]) -> Result<LossGrad<T>> {
        let batch = labels.len();
        self.check_input(images, batch)?;
        if let Some(l) = labels.iter().find(|l| l.index() >= self.config.num_classes) {
            return Err(invalid(format!("label {} outside model classes", l.code())));
        }
        let mut stats = BatchStats::default();
        let (logits, tape) = self.run(images, batch, true, &mut stats);
        let k = self.config.num_classes;
        let bf = T::of_f64(batch as f64);
        let mut loss = T::zero();
        let mut dlogits = vec![T::zero(); logits.len()];
        for (bi, label) in labels.iter().enumerate() {
            let row = &logits[bi * k..(bi + 1) * k];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + z.ln();
            loss = loss + (lse - row[label.index()]);
            for j in 0..k {
                let p = (row[j] - lse).exp();
                let onehot = if j == label.index() { T::one() } else { T::zero() };
                dlogits[bi * k + j] = (p - onehot) / bf;
            }
        }
        let grad = self.backward(tape.as_ref().unwrap(), &dlogits, batch);
        Ok(LossGrad {
            loss: loss / bf,
            grad,
            logits,
            stats,
        })
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &BatchStats<T>) {
        let m = T::of_f64(RUNNING_MOMENTUM);
        let keep = T::one() - m;
        let var_of: std::collections::HashMap<usize, usize> =
            self.layout.norms().iter().map(|n| (n.mean, n.var)).collect();
        for (mean_off, means, vars) in &stats.entries {
            let var_off = var_of[mean_off];
            for (i, (&bm, &bv)) in means.iter().zip(vars).enumerate() {
                let rm = &mut self.buffers[mean_off + i];
                *rm = keep * *rm + m * bm;
                let rv = &mut self.buffers[var_off + i];
                *rv = keep * *rv + m * bv;
            }
        }
    }

    fn image_values(&self, image: &ConstellationImage) -> Result<Vec<T>> {
        if image.resolution != self.config.input_resolution || image.grid.len() != self.pixels() {
            return Err(invalid(format!(
                "image resolution {} does not match model input {}",
                image.resolution, self.config.input_resolution
            )));
        }
        Ok(image.grid.iter().map(|&v| T::of_f64(v as f64)).collect())
    }

    /// Inference logits for one image.
    pub fn forward(&self, image: &ConstellationImage) -> Result<Vec<T>> {
        let x = self.image_values(image)?;
        self.logits(&x, 1)
    }

    pub fn predict(&self, image: &ConstellationImage) -> Result<(FrameLabel, f64)> {
        let logits = self.forward(image)?;
        Ok(decide(&logits.iter().map(|v| v.as_f64()).collect::<Vec<_>>()))
    }

    /// Predictions for many images, evaluated in chunks of `chunk`.
    pub fn predict_many(&self, images: &[&ConstellationImage], chunk: usize) -> Result<Vec<(FrameLabel, f64)>> {
        let k = self.config.num_classes;
        let mut out = Vec::with_capacity(images.len());
        for group in images.chunks(chunk.max(1)) {
            let mut x = Vec::with_capacity(group.len() * self.pixels());
            for im in group {
                x.extend(self.image_values(im)?);
            }
            let logits = self.logits(&x, group.len())?;
            for row in logits.chunks(k) {
                out.push(decide(&row.iter().map(|v| v.as_f64()).collect::<Vec<_>>()));
            }
        }
        Ok(out)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Argmax label (ties go to the smallest code) and its softmax probability.
pub fn decide(logits: &[f64]) -> (FrameLabel, f64) {
    let p = softmax(logits);
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    (FrameLabel::new(best as u8).expect("eight classes"), p[best])
}
