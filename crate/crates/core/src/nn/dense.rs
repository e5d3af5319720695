use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gemm, Activation, ParamRange, ParameterSet, Tensor};

/// Fully connected layer `y = act(W x + b)` with `W` stored `[out x in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weight: ParamRange,
    pub bias: ParamRange,
}

/// Glorot-uniform weights, zero bias.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl DenseLayer {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let limit = glorot_limit(in_dim, out_dim);
        let weight = params.alloc(format!("{name}.w"), &[out_dim, in_dim], || {
            rng.gen_range(-limit..limit)
        });
        let bias = params.alloc(format!("{name}.b"), &[out_dim], || 0.0);
        DenseLayer {
            in_dim,
            out_dim,
            activation,
            weight,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len + self.bias.len
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        if x.cols() != self.in_dim {
            return Err(Error::dim(format!(
                "dense layer expects {} inputs per row, got {}",
                self.in_dim,
                x.cols()
            )));
        }
        Ok(x.rows())
    }

    /// Pre-activation `X W^T + b`.
    fn affine(&self, params: &[f64], x: &Tensor) -> Result<Vec<f64>> {
        let batch = self.check_input(x)?;
        let w = self.weight.slice(params);
        let b = self.bias.slice(params);
        let mut out = vec![0.0; batch * self.out_dim];
        for row in out.chunks_exact_mut(self.out_dim) {
            row.copy_from_slice(b);
        }
        gemm(
            batch,
            self.in_dim,
            self.out_dim,
            1.0,
            x.data(),
            false,
            w,
            true,
            1.0,
            &mut out,
        );
        Ok(out)
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> Result<Tensor> {
        let mut out = self.affine(params, x)?;
        if self.activation != Activation::Linear {
            for v in &mut out {
                *v = self.activation.eval(*v);
            }
        }
        Tensor::new(vec![x.rows(), self.out_dim], out)
    }

    /// Returns `(activation slope, output)`; the slope is empty for a
    /// linear layer.
    fn forward_with_slope(&self, params: &[f64], x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let mut out = self.affine(params, x)?;
        let mut slope = Vec::new();
        if self.activation != Activation::Linear {
            slope.reserve_exact(out.len());
            for v in &mut out {
                let (h, d) = self.activation.eval_with_slope(*v);
                *v = h;
                slope.push(d);
            }
        }
        Ok((slope, Tensor::new(vec![x.rows(), self.out_dim], out)?))
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the layer input when `want_input` is set. `slope` holds
    /// the activation derivative at every output entry and may be empty for a
    /// linear layer.
    pub fn backward(
        &self,
        params: &[f64],
        input: &Tensor,
        slope: &[f64],
        mut d_out: Vec<f64>,
        grad: &mut [f64],
        want_input: bool,
    ) -> Option<Tensor> {
        let batch = input.rows();
        if self.activation != Activation::Linear {
            assert_eq!(slope.len(), d_out.len(), "activation slope missing");
            for (d, &s) in d_out.iter_mut().zip(slope) {
                *d *= s;
            }
        }
        gemm(
            self.out_dim,
            batch,
            self.in_dim,
            1.0,
            &d_out,
            true,
            input.data(),
            false,
            1.0,
            self.weight.slice_mut(grad),
        );
        let gb = self.bias.slice_mut(grad);
        for row in d_out.chunks_exact(self.out_dim) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if !want_input {
            return None;
        }
        let mut dx = vec![0.0; batch * self.in_dim];
        gemm(
            batch,
            self.out_dim,
            self.in_dim,
            1.0,
            &d_out,
            false,
            self.weight.slice(params),
            false,
            0.0,
            &mut dx,
        );
        Some(Tensor::new(vec![batch, self.in_dim], dx).expect("shape"))
    }
}

/// Stored activations of a [`DenseStack`] forward pass.
#[derive(Debug, Clone)]
pub struct StackCache {
    /// `acts[0]` is the stack input, `acts[l + 1]` the output of layer `l`.
    pub acts: Vec<Tensor>,
    slopes: Vec<Vec<f64>>,
}

impl StackCache {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("nonempty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseStack {
    pub layers: Vec<DenseLayer>,
}

impl DenseStack {
    /// Builds `in -> widths[0] -> ... -> widths[last]` with one activation per layer.
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        in_dim: usize,
        widths: &[usize],
        activations: &[Activation],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if widths.is_empty() || widths.len() != activations.len() {
            return Err(Error::config(format!(
                "{name}: {} widths but {} activations",
                widths.len(),
                activations.len()
            )));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = in_dim;
        for (l, (&w, &a)) in widths.iter().zip(activations).enumerate() {
            layers.push(DenseLayer::new(params, &format!("{name}.{l}"), prev, w, a, rng));
            prev = w;
        }
        Ok(DenseStack { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn forward(&self, params: &[f64], x: &Tensor) -> Result<Tensor> {
        let mut h = self.layers[0].forward(params, x)?;
        for layer in &self.layers[1..] {
            h = layer.forward(params, &h)?;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, params: &[f64], x: Tensor) -> Result<StackCache> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut slopes = Vec::with_capacity(self.layers.len());
        acts.push(x);
        for layer in &self.layers {
            let (s, h) = layer.forward_with_slope(params, acts.last().expect("nonempty"))?;
            slopes.push(s);
            acts.push(h);
        }
        Ok(StackCache { acts, slopes })
    }

    pub fn backward(
        &self,
        params: &[f64],
        cache: &StackCache,
        d_out: Tensor,
        grad: &mut [f64],
        want_input: bool,
    ) -> Option<Tensor> {
        let mut d = d_out.into_data();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let need = l > 0 || want_input;
            let dx = layer.backward(params, &cache.acts[l], &cache.slopes[l], d, grad, need);
            if l == 0 {
                return dx;
            }
            d = dx.expect("input gradient requested").into_data();
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer_with(w: &[f64], b: &[f64], in_dim: usize, act: Activation) -> (DenseLayer, ParameterSet) {
        let mut p = ParameterSet::new();
        let mut wi = w.iter().copied();
        let mut bi = b.iter().copied();
        let out_dim = b.len();
        let weight = p.alloc("w", &[out_dim, in_dim], || wi.next().unwrap());
        let bias = p.alloc("b", &[out_dim], || bi.next().unwrap());
        (
            DenseLayer {
                in_dim,
                out_dim,
                activation: act,
                weight,
                bias,
            },
            p,
        )
    }

    #[test]
    fn identity_layer() {
        let (l, p) = layer_with(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2, Activation::Linear);
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(l.forward(p.values(), &x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn direct_arithmetic() {
        let (l, p) = layer_with(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], 2, Activation::Linear);
        let x = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(l.forward(p.values(), &x).unwrap().data(), &[4.0, 8.0]);
    }

    #[test]
    fn swish_single_unit() {
        let (l, p) = layer_with(&[1.0, 0.0], &[0.0], 2, Activation::Swish);
        let x = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let y = l.forward(p.values(), &x).unwrap().data()[0];
        assert!((y - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let (l, p) = layer_with(&[1.0, 0.0], &[0.0], 2, Activation::Linear);
        let x = Tensor::from_rows(&[vec![1.0, 0.0, 3.0]]).unwrap();
        assert!(matches!(l.forward(p.values(), &x), Err(Error::Dimension(_))));
    }

    #[test]
    fn stack_requires_matching_activation_list() {
        let mut p = ParameterSet::new();
        let mut rng = crate::rng::seeded(0);
        assert!(DenseStack::new(&mut p, "s", 2, &[3, 4], &[Activation::Swish], &mut rng).is_err());
    }
}
