//! The candidate-prediction network: a small residual conv trunk with a
//! CBAM block after every stage, a state-conditioning branch and a head
//! that emits K raw terminal states plus confidence logits.

use super::attention::CbamBlock;
use super::layers::{global_avg_pool, global_avg_pool_backward, Conv2d, Linear, MapShape, Relu};
use super::tensor::Tensor;
use super::MicronetError;
use crate::camera::DepthImage;
use crate::objectives::sigmoid;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Architecture hyperparameters. Everything is desk-scale by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub input_width: usize,
    pub input_height: usize,
    /// Number of candidates K.
    pub candidates: usize,
    /// Channel widths of the three residual stages.
    pub widths: [usize; 3],
    /// Channel-attention bottleneck ratio.
    pub reduction: usize,
    pub state_hidden: usize,
    pub head_hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            input_width: 96,
            input_height: 72,
            candidates: 5,
            widths: [8, 16, 32],
            reduction: 8,
            state_hidden: 32,
            head_hidden: 64,
        }
    }
}

/// Conditioning vector length: body-frame velocity, acceleration and unit
/// goal direction.
pub const STATE_DIM: usize = 9;

struct ResidualBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    skip: Conv2d,
    relu1: Relu,
    relu2: Relu,
    input_cache: Option<(Vec<f64>, MapShape)>,
}

impl ResidualBlock {
    fn new(in_channels: usize, out_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv1: Conv2d::new(in_channels, out_channels, 3, 2, 1, rng),
            conv2: Conv2d::new(out_channels, out_channels, 3, 1, 1, rng),
            skip: Conv2d::new(in_channels, out_channels, 1, 2, 0, rng),
            relu1: Relu::default(),
            relu2: Relu::default(),
            input_cache: None,
        }
    }

    fn forward(&mut self, input: &[f64], shape: MapShape) -> (Vec<f64>, MapShape) {
        let (mid, mid_shape) = self.conv1.forward(input, shape);
        let mid = self.relu1.forward(&mid);
        let (main, out_shape) = self.conv2.forward(&mid, mid_shape);
        let (shortcut, skip_shape) = self.skip.forward(input, shape);
        debug_assert_eq!(out_shape, skip_shape);
        let summed: Vec<f64> = main.iter().zip(&shortcut).map(|(a, b)| a + b).collect();
        let out = self.relu2.forward(&summed);
        self.input_cache = Some((input.to_vec(), shape));
        (out, out_shape)
    }

    fn backward(&mut self, grad_out: &[f64]) -> Vec<f64> {
        let _ = self.input_cache.take();
        let grad_sum = self.relu2.backward(grad_out);
        let grad_mid = self.conv2.backward(&grad_sum);
        let grad_mid = self.relu1.backward(&grad_mid);
        let grad_in_main = self.conv1.backward(&grad_mid);
        let grad_in_skip = self.skip.backward(&grad_sum);
        grad_in_main
            .iter()
            .zip(&grad_in_skip)
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// Raw network output: unbounded terminal parameters plus confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub h_kin: Vec<[f64; 9]>,
    pub confidences: Vec<f64>,
}

pub struct PolicyNet {
    pub config: PolicyConfig,
    stem: Conv2d,
    stem_relu: Relu,
    blocks: Vec<(ResidualBlock, CbamBlock)>,
    state_fc: Linear,
    state_relu: Relu,
    head1: Linear,
    head2: Linear,
    head_relu: Relu,
    forward_cache: Option<ForwardCache>,
}

struct ForwardCache {
    trunk_shape: MapShape,
    confidences: Vec<f64>,
}

impl PolicyNet {
    /// Deterministic construction from a seed.
    pub fn new(config: PolicyConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2, c3] = config.widths;
        let stem = Conv2d::new(1, c1, 3, 1, 1, &mut rng);
        let blocks = vec![
            (
                ResidualBlock::new(c1, c1, &mut rng),
                CbamBlock::new(c1, config.reduction.min(c1), &mut rng),
            ),
            (
                ResidualBlock::new(c1, c2, &mut rng),
                CbamBlock::new(c2, config.reduction.min(c2), &mut rng),
            ),
            (
                ResidualBlock::new(c2, c3, &mut rng),
                CbamBlock::new(c3, config.reduction, &mut rng),
            ),
        ];
        let state_fc = Linear::new(STATE_DIM, config.state_hidden, &mut rng);
        let head_in = c3 + config.state_hidden;
        let head1 = Linear::new(head_in, config.head_hidden, &mut rng);
        let head2 = Linear::new(config.head_hidden, config.candidates * 10, &mut rng);
        Self {
            config,
            stem,
            stem_relu: Relu::default(),
            blocks,
            state_fc,
            state_relu: Relu::default(),
            head1,
            head2,
            head_relu: Relu::default(),
            forward_cache: None,
        }
    }

    /// Named parameters in a fixed order (checkpoint and optimizer order).
    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut params: Vec<(String, &mut Tensor)> = vec![
            ("stem.weight".into(), &mut self.stem.weight),
            ("stem.bias".into(), &mut self.stem.bias),
        ];
        for (i, (res, cbam)) in self.blocks.iter_mut().enumerate() {
            let b = format!("block{}", i + 1);
            params.push((format!("{b}.conv1.weight"), &mut res.conv1.weight));
            params.push((format!("{b}.conv1.bias"), &mut res.conv1.bias));
            params.push((format!("{b}.conv2.weight"), &mut res.conv2.weight));
            params.push((format!("{b}.conv2.bias"), &mut res.conv2.bias));
            params.push((format!("{b}.skip.weight"), &mut res.skip.weight));
            params.push((format!("{b}.skip.bias"), &mut res.skip.bias));
            params.push((format!("{b}.ca.w0"), &mut cbam.channel.w0));
            params.push((format!("{b}.ca.w1"), &mut cbam.channel.w1));
            params.push((format!("{b}.sa.weight"), &mut cbam.spatial.weight));
            params.push((format!("{b}.sa.bias"), &mut cbam.spatial.bias));
        }
        params.push(("state_fc.weight".into(), &mut self.state_fc.weight));
        params.push(("state_fc.bias".into(), &mut self.state_fc.bias));
        params.push(("head1.weight".into(), &mut self.head1.weight));
        params.push(("head1.bias".into(), &mut self.head1.bias));
        params.push(("head2.weight".into(), &mut self.head2.weight));
        params.push(("head2.bias".into(), &mut self.head2.bias));
        params
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.parameters_mut() {
            p.zero_grad();
        }
    }

    /// Forward pass: depth image plus conditioning vector to K raw
    /// candidates with confidences in (0, 1).
    pub fn forward(
        &mut self,
        image: &DepthImage,
        state: &[f64; STATE_DIM],
    ) -> Result<PolicyOutput, MicronetError> {
        if image.width != self.config.input_width || image.height != self.config.input_height {
            return Err(MicronetError::ResolutionMismatch {
                expected: (self.config.input_width, self.config.input_height),
                got: (image.width, image.height),
            });
        }
        // Normalize depth to (0, 1].
        let input: Vec<f64> = image.values.iter().map(|&d| d / image.max_range).collect();
        let shape = (1, image.height, image.width);
        let (x, shape) = self.stem.forward(&input, shape);
        let mut x = self.stem_relu.forward(&x);
        let mut shape = shape;
        for (res, cbam) in self.blocks.iter_mut() {
            let (y, s) = res.forward(&x, shape);
            x = cbam.forward(&y, s);
            shape = s;
        }
        let pooled = global_avg_pool(&x, shape);
        let state_feat = self.state_fc.forward(state.as_slice());
        let state_feat = self.state_relu.forward(&state_feat);
        let mut joint = pooled.clone();
        joint.extend_from_slice(&state_feat);
        let hidden = self.head1.forward(&joint);
        let hidden = self.head_relu.forward(&hidden);
        let raw = self.head2.forward(&hidden);

        let k = self.config.candidates;
        let mut h_kin = Vec::with_capacity(k);
        let mut confidences = Vec::with_capacity(k);
        for c in 0..k {
            let base = c * 10;
            let mut v = [0.0; 9];
            v.copy_from_slice(&raw[base..base + 9]);
            h_kin.push(v);
            confidences.push(sigmoid(raw[base + 9]));
        }
        self.forward_cache = Some(ForwardCache {
            trunk_shape: shape,
            confidences: confidences.clone(),
        });
        Ok(PolicyOutput { h_kin, confidences })
    }

    /// Backward pass from gradients on raw candidate parameters and
    /// confidences (post-sigmoid). Accumulates parameter gradients.
    pub fn backward(&mut self, grad_h_kin: &[[f64; 9]], grad_confidence: &[f64]) {
        let cache = self
            .forward_cache
            .take()
            .expect("forward before backward");
        let k = self.config.candidates;
        let mut grad_raw = vec![0.0; k * 10];
        for c in 0..k {
            let base = c * 10;
            grad_raw[base..base + 9].copy_from_slice(&grad_h_kin[c]);
            let s = cache.confidences[c];
            grad_raw[base + 9] = grad_confidence[c] * s * (1.0 - s);
        }
        let grad_hidden = self.head2.backward(&grad_raw);
        let grad_hidden = self.head_relu.backward(&grad_hidden);
        let grad_joint = self.head1.backward(&grad_hidden);

        let trunk_channels = self.config.widths[2];
        let grad_pooled = &grad_joint[..trunk_channels];
        let grad_state_feat = &grad_joint[trunk_channels..];
        let grad_state_feat = self.state_relu.backward(grad_state_feat);
        let _ = self.state_fc.backward(&grad_state_feat);

        let mut grad_map = global_avg_pool_backward(grad_pooled, cache.trunk_shape);
        for (res, cbam) in self.blocks.iter_mut().rev() {
            let g = cbam.backward(&grad_map);
            grad_map = res.backward(&g);
        }
        let grad_map = self.stem_relu.backward(&grad_map);
        let _ = self.stem.backward(&grad_map);
    }
}
