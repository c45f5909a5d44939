//! Flat row-major tensors for the micro network.
//!
//! Parameter values are kept exactly representable in f32 at all times
//! (initialization and every optimizer update round through f32), so the
//! 32-bit checkpoint format round-trips bit-exactly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; len],
            grad: None,
        }
    }

    /// Uniform init in [-bound, bound], rounded through f32.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let len: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: (0..len)
                .map(|_| (rng.random_range(-bound..bound) as f32) as f64)
                .collect(),
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Gradient accumulator, allocated on first use.
    pub fn grad_mut(&mut self) -> &mut Vec<f64> {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.values.len()]);
        }
        self.grad.as_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Round every value through f32 (parameter quantization invariant).
    pub fn quantize_f32(&mut self) {
        for v in self.values.iter_mut() {
            *v = (*v as f32) as f64;
        }
    }
}
