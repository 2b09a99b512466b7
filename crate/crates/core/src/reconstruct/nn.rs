//! Fully connected network with SiLU hidden units, trained by Adam.
//!
//! All parameters live in one flat buffer: for every layer the weights
//! (`inputs x outputs`, row-major) followed by the biases.

use matrixmultiply::dgemm;
use rand::Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Row-major matrix view: `data[r * rs + c * cs]`.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

impl<'a> View<'a> {
    fn rows(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `c = a * b + beta * c` with `a` m x k and `b` k x n.
fn gemm(m: usize, k: usize, n: usize, a: View, b: View, beta: f64, c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the views were built from slices whose lengths cover every
    // index the strides can reach for these dimensions.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache {
    batch: usize,
    /// Input to each layer, `batch x dims[j]`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|d| *d > 0));
        let mut params = Vec::with_capacity(Self::param_count(dims));
        for w in dims.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self {
            dims: dims.to_vec(),
            params,
        }
    }

    pub fn from_params(dims: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        (dims.len() >= 2 && Self::param_count(&dims) == params.len()).then_some(Self { dims, params })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_ranges(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut off = 0;
        self.dims
            .windows(2)
            .map(|w| {
                let r = (off, w[0], w[1], off + w[0] * w[1]);
                off += w[0] * w[1] + w[1];
                r
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> (Vec<f64>, ForwardCache) {
        assert_eq!(x.len(), batch * self.input_dim());
        let layers = self.layer_ranges();
        let mut cache = ForwardCache {
            batch,
            inputs: Vec::with_capacity(layers.len()),
            pre: Vec::with_capacity(layers.len() - 1),
        };
        let mut cur = x.to_vec();
        for (j, &(w_off, n_in, n_out, b_off)) in layers.iter().enumerate() {
            let w = &self.params[w_off..w_off + n_in * n_out];
            let b = &self.params[b_off..b_off + n_out];
            let mut h: Vec<f64> = b.iter().copied().cycle().take(batch * n_out).collect();
            gemm(batch, n_in, n_out, View::rows(&cur, n_in), View::rows(w, n_out), 1.0, &mut h);
            cache.inputs.push(cur);
            if j + 1 < layers.len() {
                cur = h.iter().map(|v| silu(*v)).collect();
                cache.pre.push(h);
            } else {
                cur = h;
            }
        }
        (cur, cache)
    }

    pub fn predict(&self, x: &[f64], batch: usize) -> Vec<f64> {
        self.forward(x, batch).0
    }

    /// Gradient of a loss with respect to all parameters, given its
    /// gradient with respect to the network output.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64]) -> Vec<f64> {
        let layers = self.layer_ranges();
        let batch = cache.batch;
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = d_out.to_vec();
        for (j, &(w_off, n_in, n_out, b_off)) in layers.iter().enumerate().rev() {
            let input = &cache.inputs[j];
            gemm(
                n_in,
                batch,
                n_out,
                View::transposed(input, n_in),
                View::rows(&delta, n_out),
                0.0,
                &mut grad[w_off..w_off + n_in * n_out],
            );
            for r in 0..batch {
                for (g, d) in grad[b_off..b_off + n_out]
                    .iter_mut()
                    .zip(&delta[r * n_out..(r + 1) * n_out])
                {
                    *g += d;
                }
            }
            if j == 0 {
                break;
            }
            let w = &self.params[w_off..w_off + n_in * n_out];
            let mut prev = vec![0.0; batch * n_in];
            gemm(batch, n_out, n_in, View::rows(&delta, n_out), View::transposed(w, n_out), 0.0, &mut prev);
            for (p, z) in prev.iter_mut().zip(&cache.pre[j - 1]) {
                *p *= silu_grad(*z);
            }
            delta = prev;
        }
        grad
    }

    /// Mean squared error over every output element, and its gradient.
    pub fn mse_loss_grad(&self, x: &[f64], target: &[f64], batch: usize) -> (f64, Vec<f64>) {
        let (out, cache) = self.forward(x, batch);
        let n = out.len() as f64;
        let mut loss = 0.0;
        let d_out: Vec<f64> = out
            .iter()
            .zip(target)
            .map(|(o, t)| {
                let e = o - t;
                loss += e * e;
                2.0 * e / n
            })
            .collect();
        (loss / n, self.backward(&cache, &d_out))
    }

    pub fn mse_loss(&self, x: &[f64], target: &[f64], batch: usize) -> f64 {
        let out = self.predict(x, batch);
        out.iter().zip(target).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / out.len() as f64
    }

    /// Squared error where every element of row `r` counts `weights[r]`
    /// times, averaged over all elements.
    pub fn weighted_mse_loss_grad(
        &self,
        x: &[f64],
        target: &[f64],
        weights: &[f64],
        batch: usize,
    ) -> (f64, Vec<f64>) {
        let (out, cache) = self.forward(x, batch);
        let n = out.len() as f64;
        let width = self.output_dim();
        let mut loss = 0.0;
        let mut d_out = Vec::with_capacity(out.len());
        for (r, (o, t)) in out.chunks_exact(width).zip(target.chunks_exact(width)).enumerate() {
            for (o, t) in o.iter().zip(t) {
                let e = o - t;
                loss += weights[r] * e * e;
                d_out.push(2.0 * weights[r] * e / n);
            }
        }
        (loss / n, self.backward(&cache, &d_out))
    }

    pub fn weighted_mse_loss(&self, x: &[f64], target: &[f64], weights: &[f64], batch: usize) -> f64 {
        let out = self.predict(x, batch);
        let width = self.output_dim();
        out.chunks_exact(width)
            .zip(target.chunks_exact(width))
            .zip(weights)
            .map(|((o, t), w)| w * o.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
            / out.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
