use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use crate::error::{dim_check, Result};

/// A named trainable block with its gradient buffer.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
    pub fn uniform<R: Rng>(name: impl Into<String>, shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Param::new(name, Tensor::new(shape, data).expect("finite init"))
    }
}

/// Anything holding trainable parameters.
///
/// Visiting order must be stable: optimizers and checkpoints rely on it.
pub trait Module {
    fn visit_params(&self, f: &mut dyn FnMut(&Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.grad.fill(0.0));
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    /// Copy parameter values from a structurally identical module.
    fn copy_params_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let mut values = Vec::new();
        other.visit_params(&mut |p| values.push(p.value.clone()));
        let mut it = values.into_iter();
        self.visit_params_mut(&mut |p| {
            p.value = it.next().expect("identical structure");
        });
    }

    fn grad_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit_params(&mut |p| s += p.grad.norm_sq());
        s.sqrt()
    }

    fn scale_grads(&mut self, factor: f64) {
        self.visit_params_mut(&mut |p| p.grad.data_mut().iter_mut().for_each(|g| *g *= factor));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => v.iter_mut().for_each(|x| {
                if *x < 0.0 {
                    *x = 0.0
                }
            }),
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
        }
    }

    /// Multiply `grad` in place by the derivative, expressed through the
    /// activation output.
    fn backprop(self, output: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for (g, y) in grad.iter_mut().zip(output) {
                    if *y <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (g, y) in grad.iter_mut().zip(output) {
                    *g *= 1.0 - y * y;
                }
            }
        }
    }
}

/// Fully connected layer `activation(x · W + b)` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: Param,
    pub bias: Param,
    pub activation: Activation,
}

/// Saved activations for [`DenseLayer::backward`].
#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Tensor,
    output: Tensor,
}

impl DenseCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

impl DenseLayer {
    pub fn new<R: Rng>(name: &str, in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        DenseLayer {
            weight: Param::uniform(format!("{name}.weight"), vec![in_dim, out_dim], in_dim, rng),
            bias: Param::uniform(format!("{name}.bias"), vec![out_dim], in_dim, rng),
            activation,
        }
    }

    pub fn zeros(name: &str, in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            weight: Param::new(format!("{name}.weight"), Tensor::zeros(vec![in_dim, out_dim])),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(vec![out_dim])),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        dim_check("dense input width", self.in_dim(), input.cols())?;
        let rows = input.rows();
        let out_dim = self.out_dim();
        let mut out = Vec::with_capacity(rows * out_dim);
        for _ in 0..rows {
            out.extend_from_slice(self.bias.value.data());
        }
        gemm(
            rows,
            self.in_dim(),
            out_dim,
            input.data(),
            false,
            self.weight.value.data(),
            false,
            &mut out,
            true,
        );
        self.activation.apply(&mut out);
        let shape = if input.shape().len() == 1 {
            vec![out_dim]
        } else {
            vec![rows, out_dim]
        };
        Ok(Tensor::new_unchecked(shape, out))
    }

    pub fn forward_cached(&self, input: Tensor) -> Result<(Tensor, DenseCache)> {
        let output = self.forward(&input)?;
        Ok((
            output.clone(),
            DenseCache {
                input,
                output,
            },
        ))
    }

    /// Accumulate parameter gradients and return the gradient w.r.t. the input.
    pub fn backward(&mut self, cache: &DenseCache, grad_output: &Tensor) -> Tensor {
        let rows = cache.input.rows();
        let (in_dim, out_dim) = (self.in_dim(), self.out_dim());
        let mut g = grad_output.data().to_vec();
        self.activation.backprop(cache.output.data(), &mut g);

        gemm(
            in_dim,
            rows,
            out_dim,
            cache.input.data(),
            true,
            &g,
            false,
            self.weight.grad.data_mut(),
            true,
        );
        let bias_grad = self.bias.grad.data_mut();
        for r in 0..rows {
            for (b, v) in bias_grad.iter_mut().zip(&g[r * out_dim..(r + 1) * out_dim]) {
                *b += v;
            }
        }
        let mut grad_in = vec![0.0; rows * in_dim];
        gemm(
            rows,
            out_dim,
            in_dim,
            &g,
            false,
            self.weight.value.data(),
            true,
            &mut grad_in,
            false,
        );
        Tensor::new_unchecked(cache.input.shape().to_vec(), grad_in)
    }
}

impl Module for DenseLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Free-function form of [`DenseLayer::forward`].
pub fn dense_forward(layer: &DenseLayer, input: &Tensor) -> Result<Tensor> {
    layer.forward(input)
}
