//! Channel and spatial attention blocks.
//!
//! Channel attention pools each channel over space (average and max), runs
//! both pooled vectors through one shared bottleneck MLP, sums and applies
//! a sigmoid. Spatial attention pools across channels into a two-plane map,
//! convolves it with a single 7x7 kernel and applies a sigmoid. The block
//! refines a feature map multiplicatively in that order.

use super::layers::{global_avg_pool, global_avg_pool_backward, global_max_pool, MapShape};
use super::tensor::Tensor;
use crate::objectives::sigmoid;
use rand_chacha::ChaCha8Rng;

pub struct ChannelAttention {
    pub w0: Tensor,
    pub w1: Tensor,
    pub channels: usize,
    pub ratio: usize,
    cache: Option<ChannelCache>,
}

struct ChannelCache {
    input: Vec<f64>,
    shape: MapShape,
    avg: Vec<f64>,
    max: Vec<f64>,
    max_arg: Vec<usize>,
    hidden_avg: Vec<f64>,
    hidden_max: Vec<f64>,
    gate: Vec<f64>,
}

impl ChannelAttention {
    pub fn new(channels: usize, ratio: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(ratio > 0 && channels % ratio == 0, "ratio must divide C");
        let hidden = channels / ratio;
        let bound0 = (6.0 / channels as f64).sqrt();
        let bound1 = (6.0 / hidden as f64).sqrt();
        Self {
            w0: Tensor::uniform(&[hidden, channels], bound0, rng),
            w1: Tensor::uniform(&[channels, hidden], bound1, rng),
            channels,
            ratio,
            cache: None,
        }
    }

    fn hidden(&self) -> usize {
        self.channels / self.ratio
    }

    fn mlp(&self, pooled: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hidden_len = self.hidden();
        let mut hidden = vec![0.0; hidden_len];
        for o in 0..hidden_len {
            let row = o * self.channels;
            let mut acc = 0.0;
            for i in 0..self.channels {
                acc += self.w0.values[row + i] * pooled[i];
            }
            hidden[o] = acc.max(0.0);
        }
        let mut out = vec![0.0; self.channels];
        for o in 0..self.channels {
            let row = o * hidden_len;
            let mut acc = 0.0;
            for i in 0..hidden_len {
                acc += self.w1.values[row + i] * hidden[i];
            }
            out[o] = acc;
        }
        (out, hidden)
    }

    /// Per-channel attention gate in (0, 1).
    pub fn forward(&mut self, input: &[f64], shape: MapShape) -> Vec<f64> {
        assert_eq!(shape.0, self.channels, "channel mismatch");
        assert_eq!(input.len(), shape.0 * shape.1 * shape.2, "shape mismatch");
        let avg = global_avg_pool(input, shape);
        let (max, max_arg) = global_max_pool(input, shape);
        let (logit_avg, hidden_avg) = self.mlp(&avg);
        let (logit_max, hidden_max) = self.mlp(&max);
        let gate: Vec<f64> = logit_avg
            .iter()
            .zip(&logit_max)
            .map(|(a, b)| sigmoid(a + b))
            .collect();
        self.cache = Some(ChannelCache {
            input: input.to_vec(),
            shape,
            avg,
            max,
            max_arg,
            hidden_avg,
            hidden_max,
            gate: gate.clone(),
        });
        gate
    }

    /// Backward from gate gradients to the input feature map.
    pub fn backward(&mut self, grad_gate: &[f64]) -> Vec<f64> {
        let cache = self.cache.take().expect("forward before backward");
        let hidden_len = self.hidden();
        // Through the sigmoid.
        let grad_logit: Vec<f64> = grad_gate
            .iter()
            .zip(&cache.gate)
            .map(|(&g, &s)| g * s * (1.0 - s))
            .collect();

        // Shared MLP: both branches see the same logit gradient.
        let mut grad_avg = vec![0.0; self.channels];
        let mut grad_max = vec![0.0; self.channels];
        for (branch, hidden, pooled, grad_pooled) in [
            (&cache.hidden_avg, &cache.hidden_avg, &cache.avg, &mut grad_avg),
            (&cache.hidden_max, &cache.hidden_max, &cache.max, &mut grad_max),
        ] {
            let _ = branch;
            // grad through w1.
            let mut grad_hidden = vec![0.0; hidden_len];
            {
                let grad_w1 = self.w1.grad_mut();
                for o in 0..self.channels {
                    let row = o * hidden_len;
                    for i in 0..hidden_len {
                        grad_w1[row + i] += grad_logit[o] * hidden[i];
                    }
                }
            }
            for i in 0..hidden_len {
                let mut acc = 0.0;
                for o in 0..self.channels {
                    acc += self.w1.values[o * hidden_len + i] * grad_logit[o];
                }
                // Rectifier mask: hidden is already rectified.
                grad_hidden[i] = if hidden[i] > 0.0 { acc } else { 0.0 };
            }
            // grad through w0.
            {
                let grad_w0 = self.w0.grad_mut();
                for o in 0..hidden_len {
                    let row = o * self.channels;
                    for i in 0..self.channels {
                        grad_w0[row + i] += grad_hidden[o] * pooled[i];
                    }
                }
            }
            for i in 0..self.channels {
                let mut acc = 0.0;
                for o in 0..hidden_len {
                    acc += self.w0.values[o * self.channels + i] * grad_hidden[o];
                }
                grad_pooled[i] += acc;
            }
        }

        // Pooling backward.
        let mut grad_in = global_avg_pool_backward(&grad_avg, cache.shape);
        for (c, &idx) in cache.max_arg.iter().enumerate() {
            grad_in[idx] += grad_max[c];
        }
        let _ = cache.input;
        grad_in
    }
}

pub struct SpatialAttention {
    /// 7x7 kernel over the two pooled planes, flattened [2, 7, 7].
    pub weight: Tensor,
    pub bias: Tensor,
    cache: Option<SpatialCache>,
}

struct SpatialCache {
    shape: MapShape,
    mean_map: Vec<f64>,
    max_map: Vec<f64>,
    max_arg: Vec<usize>,
    gate: Vec<f64>,
}

pub const SPATIAL_KERNEL: usize = 7;
const SPATIAL_PAD: usize = 3;

impl SpatialAttention {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (2 * SPATIAL_KERNEL * SPATIAL_KERNEL) as f64;
        let bound = (6.0 / fan_in).sqrt();
        Self {
            weight: Tensor::uniform(&[2, SPATIAL_KERNEL, SPATIAL_KERNEL], bound, rng),
            bias: Tensor::zeros(&[1]),
            cache: None,
        }
    }

    /// Per-pixel attention gate in (0, 1), shape (H, W).
    pub fn forward(&mut self, input: &[f64], shape: MapShape) -> Vec<f64> {
        let (c, h, w) = shape;
        assert_eq!(input.len(), c * h * w, "shape mismatch");
        let area = h * w;
        let mut mean_map = vec![0.0; area];
        let mut max_map = vec![f64::NEG_INFINITY; area];
        let mut max_arg = vec![0usize; area];
        for ch in 0..c {
            for i in 0..area {
                let x = input[ch * area + i];
                mean_map[i] += x;
                if x > max_map[i] {
                    max_map[i] = x;
                    max_arg[i] = ch * area + i;
                }
            }
        }
        for m in mean_map.iter_mut() {
            *m /= c as f64;
        }

        let mut gate = vec![0.0; area];
        let k = SPATIAL_KERNEL;
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = self.bias.values[0];
                for (plane, map) in [(0usize, &mean_map), (1usize, &max_map)] {
                    let wk = plane * k * k;
                    for ky in 0..k {
                        let iy = (oy + ky) as isize - SPATIAL_PAD as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox + kx) as isize - SPATIAL_PAD as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += self.weight.values[wk + ky * k + kx]
                                * map[iy as usize * w + ix as usize];
                        }
                    }
                }
                gate[oy * w + ox] = sigmoid(acc);
            }
        }
        self.cache = Some(SpatialCache {
            shape,
            mean_map,
            max_map,
            max_arg,
            gate: gate.clone(),
        });
        gate
    }

    pub fn backward(&mut self, grad_gate: &[f64]) -> Vec<f64> {
        let cache = self.cache.take().expect("forward before backward");
        let (c, h, w) = cache.shape;
        let area = h * w;
        let k = SPATIAL_KERNEL;
        let grad_logit: Vec<f64> = grad_gate
            .iter()
            .zip(&cache.gate)
            .map(|(&g, &s)| g * s * (1.0 - s))
            .collect();

        let mut grad_mean = vec![0.0; area];
        let mut grad_max = vec![0.0; area];
        {
            let weight_values = &self.weight.values;
            let grad_maps = [&mut grad_mean, &mut grad_max];
            let maps = [&cache.mean_map, &cache.max_map];
            let mut grad_w = vec![0.0; self.weight.len()];
            let mut grad_b = 0.0;
            for oy in 0..h {
                for ox in 0..w {
                    let go = grad_logit[oy * w + ox];
                    if go == 0.0 {
                        continue;
                    }
                    grad_b += go;
                    for plane in 0..2 {
                        let wk = plane * k * k;
                        for ky in 0..k {
                            let iy = (oy + ky) as isize - SPATIAL_PAD as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox + kx) as isize - SPATIAL_PAD as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let idx = iy as usize * w + ix as usize;
                                grad_w[wk + ky * k + kx] += go * maps[plane][idx];
                            }
                        }
                    }
                }
            }
            // Input-map gradients need a second pass over the kernel.
            for plane in 0..2 {
                let wk = plane * k * k;
                for oy in 0..h {
                    for ox in 0..w {
                        let go = grad_logit[oy * w + ox];
                        if go == 0.0 {
                            continue;
                        }
                        for ky in 0..k {
                            let iy = (oy + ky) as isize - SPATIAL_PAD as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox + kx) as isize - SPATIAL_PAD as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                grad_maps[plane.min(1)][iy as usize * w + ix as usize] +=
                                    go * weight_values[wk + ky * k + kx];
                            }
                        }
                    }
                }
            }
            let acc_w = self.weight.grad_mut();
            for (a, b) in acc_w.iter_mut().zip(&grad_w) {
                *a += b;
            }
            self.bias.grad_mut()[0] += grad_b;
        }

        let mut grad_in = vec![0.0; c * area];
        for ch in 0..c {
            for i in 0..area {
                grad_in[ch * area + i] += grad_mean[i] / c as f64;
            }
        }
        for (i, &idx) in cache.max_arg.iter().enumerate() {
            grad_in[idx] += grad_max[i];
        }
        grad_in
    }
}

/// CBAM block: channel attention then spatial attention, both applied
/// multiplicatively. Output shape equals input shape.
pub struct CbamBlock {
    pub channel: ChannelAttention,
    pub spatial: SpatialAttention,
    cache: Option<CbamCache>,
}

struct CbamCache {
    input: Vec<f64>,
    refined: Vec<f64>,
    channel_gate: Vec<f64>,
    spatial_gate: Vec<f64>,
    shape: MapShape,
}

impl CbamBlock {
    pub fn new(channels: usize, ratio: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            channel: ChannelAttention::new(channels, ratio, rng),
            spatial: SpatialAttention::new(rng),
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &[f64], shape: MapShape) -> Vec<f64> {
        let (c, h, w) = shape;
        let area = h * w;
        let channel_gate = self.channel.forward(input, shape);
        let mut refined = vec![0.0; input.len()];
        for ch in 0..c {
            for i in 0..area {
                refined[ch * area + i] = input[ch * area + i] * channel_gate[ch];
            }
        }
        let spatial_gate = self.spatial.forward(&refined, shape);
        let mut out = vec![0.0; input.len()];
        for ch in 0..c {
            for i in 0..area {
                out[ch * area + i] = refined[ch * area + i] * spatial_gate[i];
            }
        }
        self.cache = Some(CbamCache {
            input: input.to_vec(),
            refined,
            channel_gate,
            spatial_gate,
            shape,
        });
        out
    }

    pub fn backward(&mut self, grad_out: &[f64]) -> Vec<f64> {
        let cache = self.cache.take().expect("forward before backward");
        let (c, h, w) = cache.shape;
        let area = h * w;

        // F'' = F' * Ms: split into dF' (direct) and dMs.
        let mut grad_refined = vec![0.0; grad_out.len()];
        let mut grad_spatial_gate = vec![0.0; area];
        for ch in 0..c {
            for i in 0..area {
                let idx = ch * area + i;
                grad_refined[idx] = grad_out[idx] * cache.spatial_gate[i];
                grad_spatial_gate[i] += grad_out[idx] * cache.refined[idx];
            }
        }
        let grad_refined_from_spatial = self.spatial.backward(&grad_spatial_gate);
        for (a, b) in grad_refined.iter_mut().zip(&grad_refined_from_spatial) {
            *a += b;
        }

        // F' = F * Mc.
        let mut grad_in = vec![0.0; grad_out.len()];
        let mut grad_channel_gate = vec![0.0; c];
        for ch in 0..c {
            for i in 0..area {
                let idx = ch * area + i;
                grad_in[idx] = grad_refined[idx] * cache.channel_gate[ch];
                grad_channel_gate[ch] += grad_refined[idx] * cache.input[idx];
            }
        }
        let grad_in_from_channel = self.channel.backward(&grad_channel_gate);
        for (a, b) in grad_in.iter_mut().zip(&grad_in_from_channel) {
            *a += b;
        }
        grad_in
    }
}
