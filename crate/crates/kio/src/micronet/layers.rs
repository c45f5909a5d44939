//! Dense and convolutional layers with hand-written backward passes.
//!
//! Each layer caches whatever its backward pass needs during forward; the
//! policy graph is static, so forward and backward calls alternate
//! one-to-one per sample. Gradients accumulate into the parameter tensors
//! until the optimizer consumes them.

use super::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

/// Feature map shape (channels, height, width).
pub type MapShape = (usize, usize, usize);

pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    cache: Option<(Vec<f64>, MapShape)>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        // He-style bound for the fan-in of one output unit.
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        Self {
            weight: Tensor::uniform(&[out_channels, in_channels, kernel, kernel], bound, rng),
            bias: Tensor::zeros(&[out_channels]),
            stride,
            padding,
            in_channels,
            out_channels,
            kernel,
            cache: None,
        }
    }

    pub fn output_shape(&self, input: MapShape) -> MapShape {
        let (_, h, w) = input;
        (
            self.out_channels,
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    pub fn forward(&mut self, input: &[f64], shape: MapShape) -> (Vec<f64>, MapShape) {
        let (c_in, h, w) = shape;
        debug_assert_eq!(c_in, self.in_channels);
        let (c_out, h_out, w_out) = self.output_shape(shape);
        let mut out = vec![0.0; c_out * h_out * w_out];
        let k = self.kernel;
        for oc in 0..c_out {
            let w_base = oc * self.in_channels * k * k;
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = self.bias.values[oc];
                    for ic in 0..c_in {
                        let wk = w_base + ic * k * k;
                        let x_base = ic * h * w;
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = x_base + iy as usize * w;
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += self.weight.values[wk + ky * k + kx]
                                    * input[row + ix as usize];
                            }
                        }
                    }
                    out[(oc * h_out + oy) * w_out + ox] = acc;
                }
            }
        }
        self.cache = Some((input.to_vec(), shape));
        (out, (c_out, h_out, w_out))
    }

    pub fn backward(&mut self, grad_out: &[f64]) -> Vec<f64> {
        let (input, (c_in, h, w)) = self.cache.take().expect("forward before backward");
        let (c_out, h_out, w_out) = self.output_shape((c_in, h, w));
        let mut grad_in = vec![0.0; input.len()];
        let mut grad_w = vec![0.0; self.weight.len()];
        let k = self.kernel;
        for oc in 0..c_out {
            let w_base = oc * c_in * k * k;
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let go = grad_out[(oc * h_out + oy) * w_out + ox];
                    if go == 0.0 {
                        continue;
                    }
                    for ic in 0..c_in {
                        let wk = w_base + ic * k * k;
                        let x_base = ic * h * w;
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = x_base + iy as usize * w;
                            for kx in 0..k {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                grad_w[wk + ky * k + kx] += go * input[row + ix as usize];
                                grad_in[row + ix as usize] +=
                                    go * self.weight.values[wk + ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
        {
            let acc = self.weight.grad_mut();
            for (a, g) in acc.iter_mut().zip(&grad_w) {
                *a += g;
            }
        }
        {
            let grad_b = self.bias.grad_mut();
            for oc in 0..c_out {
                let mut acc = 0.0;
                for oy in 0..h_out {
                    for ox in 0..w_out {
                        acc += grad_out[(oc * h_out + oy) * w_out + ox];
                    }
                }
                grad_b[oc] += acc;
            }
        }
        grad_in
    }
}

pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
    pub in_features: usize,
    pub out_features: usize,
    cache: Option<Vec<f64>>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / in_features as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[out_features, in_features], bound, rng),
            bias: Tensor::zeros(&[out_features]),
            in_features,
            out_features,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.in_features);
        let mut out = vec![0.0; self.out_features];
        for o in 0..self.out_features {
            let row = o * self.in_features;
            let mut acc = self.bias.values[o];
            for i in 0..self.in_features {
                acc += self.weight.values[row + i] * input[i];
            }
            out[o] = acc;
        }
        self.cache = Some(input.to_vec());
        out
    }

    /// Forward without caching: used by attention MLPs that share weights
    /// across two pooled branches and handle gradients themselves.
    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_features];
        for o in 0..self.out_features {
            let row = o * self.in_features;
            let mut acc = self.bias.values[o];
            for i in 0..self.in_features {
                acc += self.weight.values[row + i] * input[i];
            }
            out[o] = acc;
        }
        out
    }

    pub fn backward(&mut self, grad_out: &[f64]) -> Vec<f64> {
        let input = self.cache.take().expect("forward before backward");
        self.accumulate(&input, grad_out)
    }

    /// Accumulate parameter gradients for an explicit (input, grad) pair
    /// and return the input gradient.
    pub fn accumulate(&mut self, input: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.in_features];
        {
            let grad_w = self.weight.grad_mut();
            for o in 0..self.out_features {
                let row = o * self.in_features;
                for i in 0..self.in_features {
                    grad_w[row + i] += grad_out[o] * input[i];
                }
            }
        }
        {
            let grad_b = self.bias.grad_mut();
            for o in 0..self.out_features {
                grad_b[o] += grad_out[o];
            }
        }
        for i in 0..self.in_features {
            let mut acc = 0.0;
            for o in 0..self.out_features {
                acc += self.weight.values[o * self.in_features + i] * grad_out[o];
            }
            grad_in[i] = acc;
        }
        grad_in
    }
}

/// Rectifier with cached mask.
#[derive(Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward(&mut self, input: &[f64]) -> Vec<f64> {
        self.mask = input.iter().map(|&x| x > 0.0).collect();
        input.iter().map(|&x| x.max(0.0)).collect()
    }

    pub fn backward(&self, grad_out: &[f64]) -> Vec<f64> {
        grad_out
            .iter()
            .zip(&self.mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect()
    }
}

pub fn relu_slice(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&x| x.max(0.0)).collect()
}

pub fn sigmoid_slice(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&x| crate::objectives::sigmoid(x)).collect()
}

/// Global average pooling (C, H, W) -> C.
pub fn global_avg_pool(input: &[f64], shape: MapShape) -> Vec<f64> {
    let (c, h, w) = shape;
    let area = (h * w) as f64;
    (0..c)
        .map(|ch| input[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / area)
        .collect()
}

pub fn global_avg_pool_backward(grad_out: &[f64], shape: MapShape) -> Vec<f64> {
    let (c, h, w) = shape;
    let area = (h * w) as f64;
    let mut grad_in = vec![0.0; c * h * w];
    for ch in 0..c {
        let g = grad_out[ch] / area;
        for i in 0..h * w {
            grad_in[ch * h * w + i] = g;
        }
    }
    grad_in
}

/// Global max pooling (C, H, W) -> C with argmax indices for backward.
pub fn global_max_pool(input: &[f64], shape: MapShape) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = shape;
    let mut out = Vec::with_capacity(c);
    let mut arg = Vec::with_capacity(c);
    for ch in 0..c {
        let slice = &input[ch * h * w..(ch + 1) * h * w];
        let (mut best_i, mut best) = (0, slice[0]);
        for (i, &x) in slice.iter().enumerate().skip(1) {
            if x > best {
                best = x;
                best_i = i;
            }
        }
        out.push(best);
        arg.push(ch * h * w + best_i);
    }
    (out, arg)
}
