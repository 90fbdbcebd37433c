//! The miniature VGG-backbone U-Net: configuration, parameter ownership,
//! forward/backward passes and checkpoint serialization.
//!
//! Encoder: five stages of two 3x3 same-padded convolutions with ReLU,
//! 2x2 max-pooling between stages. Decoder: four up-blocks, each nearest
//! 2x upsampling, concatenation with the matching encoder stage (upsampled
//! channels first), then two conv+ReLU pairs. Head: 1x1 convolution and
//! sigmoid for pixel-wise probabilities.

mod checkpoint;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use params::{Param, ParamGroup, ParamStore};

use crate::error::{Error, Result};
use crate::rng::Xoshiro256pp;
use crate::tensor::{
    concat_backward, concat_channels, conv2d_backward, conv2d_forward, maxpool2x2,
    maxpool2x2_backward, relu, relu_backward, sigmoid, sigmoid_backward, upsample2x_backward,
    upsample2x_nearest, PoolIndex, Shape, Tensor,
};

pub const NUM_STAGES: usize = 5;

/// Model configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    /// Square input side length; must be divisible by 16 (four poolings).
    pub input_size: usize,
    /// Channel width of the five encoder stages.
    pub stage_channels: [usize; NUM_STAGES],
    pub in_channels: usize,
    pub out_channels: usize,
    /// Seed for He initialization.
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            input_size: 64,
            stage_channels: [16, 32, 64, 128, 128],
            in_channels: 1,
            out_channels: 1,
            seed: 0,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return Err(Error::InvalidConfig(format!(
                "input_size {} must be a positive multiple of 16",
                self.input_size
            )));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig(
                "stage_channels entries must be >= 1".to_string(),
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig(
                "in_channels and out_channels must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Indices of one convolution's weight and bias inside the ParamStore.
#[derive(Clone, Copy, Debug)]
struct ConvRef {
    w: usize,
    b: usize,
}

/// One recorded forward step, with the context its backward needs.
enum TraceOp {
    Conv { conv: ConvRef, x: Tensor },
    Relu { x: Tensor },
    Pool { idx: PoolIndex },
    Upsample,
    /// Current activation was saved as skip source `slot`.
    StoreSkip { slot: usize },
    /// Activation became concat(up, skips[slot]); `up_channels` is the
    /// channel count of the upsampled half.
    ConcatSkip { slot: usize, up_channels: usize },
    Sigmoid { y: Tensor },
}

pub struct Model {
    cfg: UNetConfig,
    params: ParamStore,
    enc: [[ConvRef; 2]; NUM_STAGES],
    dec: [[ConvRef; 2]; NUM_STAGES - 1],
    head: ConvRef,
    trace: Option<Vec<TraceOp>>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("cfg", &self.cfg)
            .field("params", &self.params.len())
            .finish()
    }
}

impl Clone for Model {
    fn clone(&self) -> Self {
        // The activation trace is per-batch scratch state; replicas start
        // quiescent.
        Model {
            cfg: self.cfg.clone(),
            params: self.params.clone(),
            enc: self.enc,
            dec: self.dec,
            head: self.head,
            trace: None,
        }
    }
}

/// Build a model with He-initialized weights and zero biases, drawn from a
/// deterministic xoshiro256++ stream seeded by `cfg.seed`. Parameter
/// definition order: encoder stages 1..5, decoder blocks 1..4 (deepest
/// first), head; within a convolution the weight precedes the bias.
pub fn build_model(cfg: &UNetConfig) -> Result<Model> {
    cfg.validate()?;
    let mut rng = Xoshiro256pp::seeded(cfg.seed);
    let mut params = ParamStore::new();

    let conv = |params: &mut ParamStore,
                    rng: &mut Xoshiro256pp,
                    name: String,
                    group: ParamGroup,
                    out_c: usize,
                    in_c: usize,
                    k: usize|
     -> Result<ConvRef> {
        let fan_in = in_c * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let shape = Shape::new(out_c, in_c, k, k);
        let data = (0..shape.numel()).map(|_| std * rng.next_normal()).collect();
        let w = params.push(
            format!("{name}.w"),
            group,
            Tensor::from_vec(shape, data)?,
        )?;
        let b = params.push(
            format!("{name}.b"),
            group,
            Tensor::zeros(Shape::new(out_c, 1, 1, 1)),
        )?;
        Ok(ConvRef { w, b })
    };

    let ch = cfg.stage_channels;
    let mut enc = [[ConvRef { w: 0, b: 0 }; 2]; NUM_STAGES];
    let mut in_c = cfg.in_channels;
    for s in 0..NUM_STAGES {
        let out_c = ch[s];
        enc[s][0] = conv(
            &mut params,
            &mut rng,
            format!("enc{}.conv1", s + 1),
            ParamGroup::Backbone,
            out_c,
            in_c,
            3,
        )?;
        enc[s][1] = conv(
            &mut params,
            &mut rng,
            format!("enc{}.conv2", s + 1),
            ParamGroup::Backbone,
            out_c,
            out_c,
            3,
        )?;
        in_c = out_c;
    }

    let mut dec = [[ConvRef { w: 0, b: 0 }; 2]; NUM_STAGES - 1];
    let mut up_c = ch[NUM_STAGES - 1];
    for d in 0..NUM_STAGES - 1 {
        let skip_c = ch[NUM_STAGES - 2 - d];
        let out_c = skip_c;
        dec[d][0] = conv(
            &mut params,
            &mut rng,
            format!("dec{}.conv1", d + 1),
            ParamGroup::Decoder,
            out_c,
            up_c + skip_c,
            3,
        )?;
        dec[d][1] = conv(
            &mut params,
            &mut rng,
            format!("dec{}.conv2", d + 1),
            ParamGroup::Decoder,
            out_c,
            out_c,
            3,
        )?;
        up_c = out_c;
    }

    let head = conv(
        &mut params,
        &mut rng,
        "head".to_string(),
        ParamGroup::Head,
        cfg.out_channels,
        ch[0],
        1,
    )?;

    Ok(Model {
        cfg: cfg.clone(),
        params,
        enc,
        dec,
        head,
        trace: None,
    })
}

impl Model {
    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Freeze or thaw every backbone (encoder) parameter.
    pub fn set_backbone_frozen(&mut self, frozen: bool) {
        self.params.set_group_frozen(ParamGroup::Backbone, frozen);
    }

    /// Spatial side length and channel count at each encoder level,
    /// deepest last.
    pub fn level_shapes(&self) -> Vec<(usize, usize)> {
        let mut side = self.cfg.input_size;
        let mut out = Vec::with_capacity(NUM_STAGES);
        for s in 0..NUM_STAGES {
            out.push((self.cfg.stage_channels[s], side));
            if s < NUM_STAGES - 1 {
                side /= 2;
            }
        }
        out
    }

    fn conv_forward(
        &self,
        conv: ConvRef,
        x: Tensor,
        pad: usize,
        trace: &mut Vec<TraceOp>,
    ) -> Result<Tensor> {
        let w = self.params.get(conv.w).value();
        let b = self.params.get(conv.b).value();
        let y = conv2d_forward(&x, w, b.data(), 1, pad)?;
        trace.push(TraceOp::Conv { conv, x });
        Ok(y)
    }

    fn conv_relu(
        &self,
        conv: ConvRef,
        x: Tensor,
        trace: &mut Vec<TraceOp>,
    ) -> Result<Tensor> {
        let pre = self.conv_forward(conv, x, 1, trace)?;
        let y = relu(&pre);
        trace.push(TraceOp::Relu { x: pre });
        Ok(y)
    }

    /// Run the network on a batch. Activations are cached for a following
    /// [`Model::backward`] call.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if s.c != self.cfg.in_channels || s.h != self.cfg.input_size || s.w != self.cfg.input_size {
            return Err(Error::shape(
                "forward",
                format!(
                    "input {} does not match model input {}x{}x{}",
                    s, self.cfg.in_channels, self.cfg.input_size, self.cfg.input_size
                ),
            ));
        }

        let mut trace = Vec::new();
        let mut skips: Vec<Tensor> = Vec::with_capacity(NUM_STAGES - 1);
        let mut a = x.clone();

        for stage in 0..NUM_STAGES {
            a = self.conv_relu(self.enc[stage][0], a, &mut trace)?;
            a = self.conv_relu(self.enc[stage][1], a, &mut trace)?;
            if stage < NUM_STAGES - 1 {
                trace.push(TraceOp::StoreSkip { slot: stage });
                skips.push(a.clone());
                let (pooled, idx) = maxpool2x2(&a)?;
                trace.push(TraceOp::Pool { idx });
                a = pooled;
            }
        }

        for d in 0..NUM_STAGES - 1 {
            let up = upsample2x_nearest(&a);
            trace.push(TraceOp::Upsample);
            let slot = NUM_STAGES - 2 - d;
            let skip = &skips[slot];
            debug_assert_eq!(up.shape().h, skip.shape().h, "skip spatial mismatch");
            let up_channels = up.shape().c;
            a = concat_channels(&up, skip)?;
            trace.push(TraceOp::ConcatSkip { slot, up_channels });
            a = self.conv_relu(self.dec[d][0], a, &mut trace)?;
            a = self.conv_relu(self.dec[d][1], a, &mut trace)?;
        }

        let logits = self.conv_forward(self.head, a, 0, &mut trace)?;
        let probs = sigmoid(&logits);
        trace.push(TraceOp::Sigmoid { y: probs.clone() });
        self.trace = Some(trace);
        Ok(probs)
    }

    /// Backpropagate `dprobs` (the gradient of a scalar loss w.r.t. the
    /// forward output), accumulating into each non-frozen parameter's
    /// gradient buffer. Frozen parameters receive nothing. Consumes the
    /// cached activations, so each forward pays for one backward.
    pub fn backward(&mut self, dprobs: &Tensor) -> Result<()> {
        let trace = self.trace.take().ok_or_else(|| {
            Error::InvalidData("backward called without a preceding forward".to_string())
        })?;

        // Nothing earlier in the tape than the first non-frozen conv can
        // need a gradient, so the reverse walk may stop there.
        let stop = trace
            .iter()
            .position(|op| match op {
                TraceOp::Conv { conv, .. } => !self.params.get(conv.w).frozen(),
                _ => false,
            })
            .unwrap_or(trace.len());

        let mut skip_cot: Vec<Option<Tensor>> = (0..NUM_STAGES - 1).map(|_| None).collect();
        let mut d = dprobs.clone();

        for (i, op) in trace.iter().enumerate().rev() {
            if i < stop {
                break;
            }
            match op {
                TraceOp::Sigmoid { y } => {
                    d = sigmoid_backward(y, &d)?;
                }
                TraceOp::Conv { conv, x } => {
                    let w = self.params.get(conv.w).value();
                    let pad = (w.shape().h - 1) / 2;
                    let (dx, dw, db) = conv2d_backward(x, w, &d, 1, pad)?;
                    if !self.params.get(conv.w).frozen() {
                        self.params.get_mut(conv.w).grad_mut().add_assign(&dw)?;
                        let bgrad = self.params.get_mut(conv.b).grad_mut();
                        for (g, v) in bgrad.data_mut().iter_mut().zip(&db) {
                            *g += v;
                        }
                    }
                    d = dx;
                }
                TraceOp::Relu { x } => {
                    d = relu_backward(x, &d)?;
                }
                TraceOp::Pool { idx } => {
                    d = maxpool2x2_backward(idx, &d)?;
                }
                TraceOp::Upsample => {
                    d = upsample2x_backward(&d)?;
                }
                TraceOp::ConcatSkip { slot, up_channels } => {
                    let (dup, dskip) = concat_backward(&d, *up_channels)?;
                    skip_cot[*slot] = Some(dskip);
                    d = dup;
                }
                TraceOp::StoreSkip { slot } => {
                    if let Some(extra) = skip_cot[*slot].take() {
                        d.add_assign(&extra)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.zero_grads();
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save_checkpoint(self, path)
    }
}
