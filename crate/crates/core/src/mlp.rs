//! Fully connected rectifier networks with exact backpropagation and Adam.
//!
//! Hidden layers use ReLU; the output layer is either identity (regressors,
//! critics) or tanh (the TD3 actor). Inputs are batched row-wise: a batch is an
//! `n x input_dim` matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textfmt::{join_f17, Lines};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Identity,
    Tanh,
}

impl OutputActivation {
    fn name(self) -> &'static str {
        match self {
            OutputActivation::Identity => "identity",
            OutputActivation::Tanh => "tanh",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `in x out`, so a layer maps a batch as `x.dot(w) + b`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output: OutputActivation,
}

/// Gradients with the same layout as the network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub dw: Vec<Array2<f64>>,
    pub db: Vec<Array1<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Grads {
            dw: net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            db: net.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.dw.iter().zip(&self.db) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Intermediate values of a batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer (`activations[0]` is the network input).
    pub activations: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pub pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    /// Random initialization: He-uniform hidden layers, a small uniform output
    /// layer, zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], output: OutputActivation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer widths {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (widths[i], widths[i + 1]);
                let lim = if i + 1 < n { (6.0 / fan_in as f64).sqrt() } else { (1.0 / fan_in as f64).sqrt() };
                let dist = Uniform::new_inclusive(-lim, lim).expect("finite limits");
                let w = Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng));
                Dense { w, b: Array1::zeros(fan_out) }
            })
            .collect();
        Ok(Mlp { layers, output })
    }

    /// Sets the output layer to zero so the network initially predicts 0.
    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.w.fill(0.0);
            last.b.fill(0.0);
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].w.nrows()];
        w.extend(self.layers.iter().map(|l| l.w.ncols()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.ncols())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn activate_output(&self, z: &mut Array2<f64>) {
        if self.output == OutputActivation::Tanh {
            z.mapv_inplace(f64::tanh);
        }
    }

    /// Batched forward pass.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.w) + &l.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            } else {
                self.activate_output(&mut z);
            }
            h = z;
        }
        h
    }

    /// Forward pass of a single input row.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let v = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        self.forward(v).into_raw_vec_and_offset().0
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> ForwardCache {
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.w) + &l.b;
            let next = if i < last {
                z.mapv(|v| v.max(0.0))
            } else {
                let mut o = z.clone();
                self.activate_output(&mut o);
                o
            };
            activations.push(h);
            pre.push(z);
            h = next;
        }
        ForwardCache { activations, pre, output: h }
    }

    /// Backpropagates `d_out = dL/d(output)` through a cached pass, returning
    /// parameter gradients and `dL/d(input)`.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>) -> (Grads, Array2<f64>) {
        let n = self.layers.len();
        let mut dw = Vec::with_capacity(n);
        let mut db = Vec::with_capacity(n);
        let mut delta = d_out.to_owned();
        if self.output == OutputActivation::Tanh {
            Zip::from(&mut delta).and(&cache.output).for_each(|d, &y| *d *= 1.0 - y * y);
        }
        for i in (0..n).rev() {
            dw.push(cache.activations[i].t().dot(&delta));
            db.push(delta.sum_axis(Axis(0)));
            let mut d_in = delta.dot(&self.layers[i].w.t());
            if i > 0 {
                Zip::from(&mut d_in).and(&cache.pre[i - 1]).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = d_in;
        }
        dw.reverse();
        db.reverse();
        (Grads { dw, db }, delta)
    }

    /// Mean squared error over a batch and its exact parameter gradients.
    pub fn mse_gradients(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>) -> (f64, Grads) {
        let cache = self.forward_cached(x);
        let diff = &cache.output - &targets;
        let count = diff.len().max(1) as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
        let d_out = diff.mapv(|d| 2.0 * d / count);
        let (g, _) = self.backward(&cache, d_out.view());
        (loss, g)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::InvalidArgument(format!("expected {} parameters, got {}", self.num_params(), p.len())));
        }
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = p[k];
                k += 1;
            }
        }
        Ok(())
    }

    /// `self <- rho * self + (1 - rho) * source`.
    pub fn polyak_from(&mut self, source: &Mlp, rho: f64) {
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            Zip::from(&mut t.w).and(&s.w).for_each(|a, &b| *a = rho * *a + (1.0 - rho) * b);
            Zip::from(&mut t.b).and(&s.b).for_each(|a, &b| *a = rho * *a + (1.0 - rho) * b);
        }
    }

    /// Exact affine restriction of a single-output identity network to input
    /// coordinate `which` on the activation region containing `x`: within
    /// that region `forward(x') = slope * x'[which] + intercept` whenever `x'`
    /// differs from `x` only in that coordinate. Inactive units include the
    /// boundary `z = 0`.
    pub fn local_affine(&self, x: &[f64], which: usize) -> Result<(f64, f64)> {
        if self.output != OutputActivation::Identity || self.output_dim() != 1 {
            return Err(Error::InvalidArgument("local_affine needs a single identity output".into()));
        }
        if which >= x.len() || x.len() != self.input_dim() {
            return Err(Error::InvalidArgument(format!("input index {which} for {} features", x.len())));
        }
        let last = self.layers.len() - 1;
        let mut h = Array1::from(x.to_vec());
        let mut dir = self.layers[0].w.row(which).to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                dir = dir.dot(&l.w);
            }
            let z = h.dot(&l.w) + &l.b;
            if i < last {
                Zip::from(&mut dir).and(&z).for_each(|d, &zz| {
                    if zz <= 0.0 {
                        *d = 0.0;
                    }
                });
                h = z.mapv(|v| v.max(0.0));
            } else {
                h = z;
            }
        }
        let slope = dir[0];
        Ok((slope, h[0] - slope * x[which]))
    }

    /// Activation pattern of the hidden units at `x`.
    pub fn activation_pattern(&self, x: &[f64]) -> Vec<bool> {
        let mut h = Array1::from(x.to_vec());
        let mut pattern = Vec::new();
        for l in &self.layers[..self.layers.len() - 1] {
            let z = h.dot(&l.w) + &l.b;
            pattern.extend(z.iter().map(|&v| v > 0.0));
            h = z.mapv(|v| v.max(0.0));
        }
        pattern
    }

    pub fn to_text(&self) -> String {
        let widths: Vec<String> = self.widths().iter().map(|w| w.to_string()).collect();
        let mut s = format!("mlp v1\nwidths {}\noutput {}\n", widths.join(" "), self.output.name());
        for (i, l) in self.layers.iter().enumerate() {
            let w: Vec<f64> = l.w.iter().copied().collect();
            s.push_str(&format!("w{i} {}\n", join_f17(&w)));
            s.push_str(&format!("b{i} {}\n", join_f17(l.b.as_slice().expect("contiguous"))));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        Self::read_text(&mut lines)
    }

    pub(crate) fn read_text(lines: &mut Lines<'_>) -> Result<Self> {
        let (_, header) = lines.next_line()?;
        if header != "mlp v1" {
            return Err(Error::Parse(format!("unsupported network header {header:?}")));
        }
        let widths = lines
            .keyed("widths")?
            .split_whitespace()
            .map(|w| w.parse::<usize>().map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if widths.len() < 2 {
            return Err(Error::Parse("need at least two widths".into()));
        }
        let output = match lines.keyed("output")? {
            "identity" => OutputActivation::Identity,
            "tanh" => OutputActivation::Tanh,
            other => return Err(Error::Parse(format!("unknown output activation {other:?}"))),
        };
        let mut layers = Vec::new();
        for i in 0..widths.len() - 1 {
            let w = lines.floats(&format!("w{i}"))?;
            let b = lines.floats(&format!("b{i}"))?;
            let w = Array2::from_shape_vec((widths[i], widths[i + 1]), w).map_err(|e| Error::Parse(e.to_string()))?;
            if b.len() != widths[i + 1] {
                return Err(Error::Parse(format!("layer {i}: bias length {}", b.len())));
            }
            layers.push(Dense { w, b: Array1::from(b) });
        }
        Ok(Mlp { layers, output })
    }
}

/// Adam with bias correction (β1 = 0.9, β2 = 0.999, ε = 1e-8 by default).
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Grads::zeros_like(net), v: Grads::zeros_like(net) }
    }

    pub fn step(&mut self, net: &mut Mlp, g: &Grads) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = self.lr / c1;
        let c2s = c2.sqrt();
        for (i, l) in net.layers.iter_mut().enumerate() {
            Zip::from(&mut l.w).and(&mut self.m.dw[i]).and(&mut self.v.dw[i]).and(&g.dw[i]).for_each(|p, m, v, &gr| {
                *m = b1 * *m + (1.0 - b1) * gr;
                *v = b2 * *v + (1.0 - b2) * gr * gr;
                *p -= step * *m / (v.sqrt() / c2s + eps);
            });
            Zip::from(&mut l.b).and(&mut self.m.db[i]).and(&mut self.v.db[i]).and(&g.db[i]).for_each(|p, m, v, &gr| {
                *m = b1 * *m + (1.0 - b1) * gr;
                *v = b2 * *v + (1.0 - b2) * gr * gr;
                *p -= step * *m / (v.sqrt() / c2s + eps);
            });
        }
    }
}

/// Halves the learning rate after two consecutive epochs without an
/// improvement of at least `min_delta`, down to `floor`.
#[derive(Clone, Debug)]
pub struct PlateauSchedule {
    pub min_delta: f64,
    pub floor: f64,
    best: f64,
    misses: u32,
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        PlateauSchedule { min_delta: 1e-4, floor: 1e-5, best: f64::INFINITY, misses: 0 }
    }
}

impl PlateauSchedule {
    pub fn observe(&mut self, epoch_loss: f64, adam: &mut Adam) {
        if epoch_loss < self.best - self.min_delta {
            self.best = epoch_loss;
            self.misses = 0;
        } else {
            self.misses += 1;
            if self.misses >= 2 {
                adam.lr = (adam.lr * 0.5).max(self.floor);
                self.misses = 0;
            }
        }
    }
}

/// Stacks feature rows into a batch matrix.
pub fn batch_from_rows(rows: &[Vec<f64>]) -> Array2<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((rows.len(), cols), flat).expect("rectangular rows")
}

pub fn column(values: ArrayView1<f64>) -> Array2<f64> {
    values.to_owned().insert_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(widths: &[usize], out: OutputActivation, seed: u64) -> Mlp {
        Mlp::new(widths, out, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let mut m = net(&[3, 8, 1], OutputActivation::Identity, 1);
        m.zero_output_layer();
        assert_eq!(m.forward_one(&[0.3, -2.0, 5.0]), vec![0.0]);
    }

    #[test]
    fn zero_residual_gives_zero_gradients() {
        let m = net(&[2, 6, 6, 1], OutputActivation::Identity, 2);
        let x = batch_from_rows(&[vec![0.1, 0.2], vec![-0.5, 1.0]]);
        let y = m.forward(x.view());
        let (loss, g) = m.mse_gradients(x.view(), y.view());
        assert_eq!(loss, 0.0);
        assert!(g.flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_batch_has_identical_gradients() {
        let m = net(&[2, 5, 1], OutputActivation::Identity, 3);
        let rows = vec![vec![0.1, 0.2], vec![-0.5, 1.0], vec![0.7, -0.3]];
        let t = batch_from_rows(&[vec![1.0], vec![-1.0], vec![0.5]]);
        let (_, g1) = m.mse_gradients(batch_from_rows(&rows).view(), t.view());
        let rows2: Vec<Vec<f64>> = rows.iter().chain(rows.iter()).cloned().collect();
        let t2 = ndarray::concatenate(Axis(0), &[t.view(), t.view()]).unwrap();
        let (_, g2) = m.mse_gradients(batch_from_rows(&rows2).view(), t2.view());
        for (a, b) in g1.flat().iter().zip(g2.flat()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut m = net(&[1, 1], OutputActivation::Identity, 4);
        let before = m.params_flat();
        let mut g = Grads::zeros_like(&m);
        g.dw[0][[0, 0]] = 3.7;
        let mut adam = Adam::new(&m, 0.01);
        adam.step(&mut m, &g);
        let after = m.params_flat();
        assert!((before[0] - after[0] - 0.01).abs() < 1e-9);
        // zero gradient component leaves the bias untouched
        assert_eq!(before[1], after[1]);
    }

    #[test]
    fn plateau_halves_after_two_misses() {
        let m = net(&[1, 1], OutputActivation::Identity, 5);
        let mut adam = Adam::new(&m, 1e-3);
        let mut s = PlateauSchedule::default();
        s.observe(1.0, &mut adam);
        s.observe(1.0, &mut adam);
        assert_eq!(adam.lr, 1e-3);
        s.observe(1.0, &mut adam);
        assert_eq!(adam.lr, 5e-4);
        for _ in 0..100 {
            s.observe(1.0, &mut adam);
        }
        assert_eq!(adam.lr, 1e-5);
    }

    #[test]
    fn fully_active_network_slope_is_weight_product() {
        let mut m = net(&[2, 3, 1], OutputActivation::Identity, 6);
        m.layers[0].w = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 0.5, -1.0, 0.3, 0.2]).unwrap();
        m.layers[0].b = Array1::from(vec![10.0, 10.0, 10.0]);
        m.layers[1].w = Array2::from_shape_vec((3, 1), vec![0.5, -1.0, 2.0]).unwrap();
        m.layers[1].b = Array1::from(vec![0.25]);
        let (slope, intercept) = m.local_affine(&[0.4, 0.1], 0).unwrap();
        assert!((slope - (1.0 * 0.5 + 2.0 * -1.0 + 0.5 * 2.0)).abs() < 1e-15);
        let y = m.forward_one(&[0.4, 0.1])[0];
        assert!((slope * 0.4 + intercept - y).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = net(&[4, 7, 3, 2], OutputActivation::Tanh, 7);
        assert_eq!(Mlp::from_text(&m.to_text()).unwrap(), m);
        assert!(Mlp::from_text("mlp v0\n").is_err());
    }

    #[test]
    fn polyak_interpolates() {
        let a = net(&[2, 3, 1], OutputActivation::Identity, 8);
        let b = net(&[2, 3, 1], OutputActivation::Identity, 9);
        let mut t = a.clone();
        t.polyak_from(&b, 0.75);
        for ((x, y), z) in a.params_flat().iter().zip(b.params_flat()).zip(t.params_flat()) {
            assert!((0.75 * x + 0.25 * y - z).abs() < 1e-15);
        }
    }
}
