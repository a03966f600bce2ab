//! Fully connected tanh network over a flat parameter vector.
//!
//! Layer `i` maps `dims[i] -> dims[i + 1]`; its weights are stored column-major
//! (`dims[i + 1]` rows) followed by its biases. Every hidden layer applies
//! `tanh`; the last layer is affine. Batches are matrices with one sample per
//! column.

use nalgebra::{DMatrix, DMatrixView};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept by [`Mlp::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[last]` the output.
    activations: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations.last().expect("cache holds at least the input")
    }
}

pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Usage(format!("invalid layer dimensions {dims:?}")));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; param_count(dims)],
        })
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        if params.len() != net.params.len() {
            return Err(Error::Usage(format!(
                "expected {} parameters for {dims:?}, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::fault("non-finite network parameter"));
        }
        net.params = params;
        Ok(net)
    }

    /// Uniform `+-1/sqrt(fan_in)` initialization; the output layer is further
    /// scaled by `output_scale`.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], output_scale: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        let n_layers = dims.len() - 1;
        let mut offset = 0;
        for (layer, w) in dims.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let scale = if layer + 1 == n_layers { output_scale } else { 1.0 };
            let n = w[0] * w[1] + w[1];
            for p in &mut net.params[offset..offset + n] {
                *p = rng.random_range(-bound..bound) * scale;
            }
            offset += n;
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.dims.windows(2).map(move |w| {
            let o = offset;
            offset += w[0] * w[1] + w[1];
            (o, w[0], w[1])
        })
    }

    fn weights(&self, offset: usize, n_in: usize, n_out: usize) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.params[offset..offset + n_in * n_out], n_out, n_in)
    }

    fn biases(&self, offset: usize, n_in: usize, n_out: usize) -> &[f64] {
        let start = offset + n_in * n_out;
        &self.params[start..start + n_out]
    }

    pub fn forward_batch(&self, input: &DMatrix<f64>) -> Result<ForwardCache> {
        if input.nrows() != self.input_dim() {
            return Err(Error::Usage(format!(
                "input has {} rows, network expects {}",
                input.nrows(),
                self.input_dim()
            )));
        }
        let n_layers = self.dims.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.clone());
        for (layer, (offset, n_in, n_out)) in self.layer_offsets().enumerate() {
            let w = self.weights(offset, n_in, n_out);
            let b = self.biases(offset, n_in, n_out);
            let mut z = w * activations.last().expect("non-empty");
            for mut col in z.column_iter_mut() {
                for (v, bias) in col.iter_mut().zip(b) {
                    *v += bias;
                }
            }
            if layer + 1 < n_layers {
                z.apply(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        Ok(self.forward_batch(&x)?.output().as_slice().to_vec())
    }

    /// Reverse pass. `upstream` holds dL/d(output) per sample (same shape as
    /// the output). Returns the parameter gradient summed over the batch and
    /// dL/d(input) per sample.
    pub fn backward(&self, cache: &ForwardCache, upstream: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let out = cache.output();
        if upstream.shape() != out.shape() {
            return Err(Error::Usage(format!(
                "upstream gradient shape {:?} does not match output {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        let layers: Vec<_> = self.layer_offsets().collect();
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = upstream.clone();
        for (layer, &(offset, n_in, n_out)) in layers.iter().enumerate().rev() {
            let a_prev = &cache.activations[layer];
            let dw = &delta * a_prev.transpose();
            grad[offset..offset + n_in * n_out].copy_from_slice(dw.as_slice());
            let db_start = offset + n_in * n_out;
            for (g, row) in grad[db_start..db_start + n_out].iter_mut().zip(delta.row_iter()) {
                *g = row.sum();
            }
            let w = self.weights(offset, n_in, n_out);
            let mut prev = w.transpose() * &delta;
            if layer > 0 {
                // a_prev = tanh(z_prev)
                prev.zip_apply(a_prev, |d, a| *d *= 1.0 - a * a);
            }
            delta = prev;
        }
        Ok((grad, delta))
    }
}

/// Exact reverse-mode gradient of `<upstream, net(input)>` with respect to
/// every parameter.
pub fn mlp_gradient(net: &Mlp, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    let x = DMatrix::from_column_slice(input.len(), 1, input);
    let cache = net.forward_batch(&x)?;
    let g = DMatrix::from_column_slice(upstream.len(), 1, upstream);
    Ok(net.backward(&cache, &g)?.0)
}
