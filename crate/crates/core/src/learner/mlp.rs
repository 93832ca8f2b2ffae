use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected network with tanh hidden layers and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    /// `weights[k]` maps layer k to k+1 and has shape `(sizes[k], sizes[k+1])`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Activations kept for the backward pass.
pub struct MlpCache {
    activations: Vec<Array2<f64>>,
}

/// Gradient with the same shapes as the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrad {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    let (big, small) = (rows.max(cols), rows.min(cols));
    let gauss = DMatrix::from_fn(big, small, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut out = Array2::zeros((rows, cols));
    for i in 0..big {
        for j in 0..small {
            let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
            let v = gain * sign * q[(i, j)];
            if rows >= cols {
                out[(i, j)] = v;
            } else {
                out[(j, i)] = v;
            }
        }
    }
    out
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        let weights = sizes.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect();
        let biases = sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    /// Orthogonal weights with gain √2 on hidden layers and `output_gain` on the last one; zero biases.
    pub fn orthogonal<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let last = net.weights.len() - 1;
        for (k, w) in net.weights.iter_mut().enumerate() {
            let gain = if k == last {
                output_gain
            } else {
                std::f64::consts::SQRT_2
            };
            let (r, c) = w.dim();
            *w = orthogonal(r, c, gain, rng);
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.weights.len() != self.sizes.len() - 1 || self.biases.len() != self.weights.len()
        {
            return Err(Error::Config("network layer count mismatch".into()));
        }
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.dim() != (self.sizes[k], self.sizes[k + 1]) {
                return Err(Error::Dimension {
                    expected: self.sizes[k] * self.sizes[k + 1],
                    got: w.len(),
                });
            }
            if b.len() != self.sizes[k + 1] {
                return Err(Error::Dimension {
                    expected: self.sizes[k + 1],
                    got: b.len(),
                });
            }
        }
        if self.flat_params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                field: "network_weights",
            });
        }
        Ok(())
    }

    /// Single-input forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let last = self.weights.len() - 1;
        let mut h = x.to_vec();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut next = b.to_vec();
            for (i, &hi) in h.iter().enumerate() {
                if hi == 0.0 {
                    continue;
                }
                for (n, &wij) in next.iter_mut().zip(w.row(i)) {
                    *n += hi * wij;
                }
            }
            if k != last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = next;
        }
        Ok(h)
    }

    /// Row-batched forward pass.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let last = self.weights.len() - 1;
        let mut activations = vec![x.clone()];
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = activations[k].dot(w) + b;
            if k != last {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(z);
        }
        let out = activations.pop().unwrap();
        Ok((out, MlpCache { activations }))
    }

    /// Gradient of `sum(d_out ⊙ output)` with respect to the parameters.
    pub fn backward(&self, cache: &MlpCache, d_out: &Array2<f64>) -> MlpGrad {
        let n = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); n];
        let mut gb = vec![Array1::zeros(0); n];
        let mut delta = d_out.clone();
        for k in (0..n).rev() {
            let input = &cache.activations[k];
            gw[k] = input.t().dot(&delta);
            gb[k] = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut back = delta.dot(&self.weights[k].t());
                back.zip_mut_with(input, |d, &a| *d *= 1.0 - a * a);
                delta = back;
            }
        }
        MlpGrad {
            weights: gw,
            biases: gb,
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v = *it.next().unwrap());
        }
        Ok(())
    }
}
