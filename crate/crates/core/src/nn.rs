//! Small dense networks with hand-written backpropagation.
//!
//! Parameters live in one flat vector per model so that the optimizer and
//! gradient checks can treat them uniformly. Layer structs only describe
//! shapes and offsets into that vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::pit::CalibrationSet;
use crate::{Error, Real, Result};

/// Layer sizes of a ReLU perceptron, input first, output last.
/// Hidden layers use ReLU; the output layer is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache<T> {
    /// `acts[0]` is the input; `acts[l]` the output of layer `l`.
    acts: Vec<Vec<T>>,
}

impl<T: Real> MlpCache<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::param("hidden sizes", "layer sizes must be positive"));
        }
        Ok(Self { sizes })
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// He-uniform weights, zero biases.
    pub fn init<T: Real, R: Rng>(&self, params: &mut [T], rng: &mut R) {
        let mut off = 0;
        for w in self.sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = (6.0 / n_in as f64).sqrt();
            for p in &mut params[off..off + n_in * n_out] {
                *p = T::of(rng.gen_range(-bound..bound));
            }
            off += n_in * n_out;
            for p in &mut params[off..off + n_out] {
                *p = T::zero();
            }
            off += n_out;
        }
    }

    /// Offset of the final layer's weights and biases.
    pub fn last_layer_offsets(&self) -> (usize, usize) {
        let mut off = 0;
        let layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            if l + 1 == layers {
                return (off, off + w[0] * w[1]);
            }
            off += w[0] * w[1] + w[1];
        }
        unreachable!()
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &[T], cache: &mut MlpCache<T>) {
        let layers = self.sizes.len() - 1;
        cache.acts.resize(layers + 1, Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, rest) = params[off..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let (head, tail) = cache.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            out.clear();
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let mut s = b[j];
                for (wi, xi) in row.iter().zip(input) {
                    s += *wi * *xi;
                }
                if l + 1 < layers && s < T::zero() {
                    s = T::zero();
                }
                out.push(s);
            }
            off += n_in * n_out + n_out;
        }
    }

    /// Accumulates parameter gradients into `grads` and, if requested, the
    /// gradient with respect to the input into `grad_in`.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        cache: &MlpCache<T>,
        grad_out: &[T],
        grads: &mut [T],
        grad_in: Option<&mut [T]>,
    ) {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta: Vec<T> = grad_out.to_vec();
        let mut next = Vec::new();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &cache.acts[l];
            let w = &params[off..off + n_in * n_out];
            {
                let (gw, gb) = grads[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for j in 0..n_out {
                    let d = delta[j];
                    if d == T::zero() {
                        continue;
                    }
                    gb[j] += d;
                    let row = &mut gw[j * n_in..(j + 1) * n_in];
                    for (g, xi) in row.iter_mut().zip(input) {
                        *g += d * *xi;
                    }
                }
            }
            if l == 0 && grad_in.is_none() {
                break;
            }
            next.clear();
            next.resize(n_in, T::zero());
            for j in 0..n_out {
                let d = delta[j];
                if d == T::zero() {
                    continue;
                }
                let row = &w[j * n_in..(j + 1) * n_in];
                for (n, wi) in next.iter_mut().zip(row) {
                    *n += d * *wi;
                }
            }
            if l > 0 {
                // ReLU derivative of the layer below.
                for (n, a) in next.iter_mut().zip(&cache.acts[l]) {
                    if *a <= T::zero() {
                        *n = T::zero();
                    }
                }
            }
            std::mem::swap(&mut delta, &mut next);
        }
        if let Some(g) = grad_in {
            for (gi, d) in g.iter_mut().zip(&delta) {
                *gi += *d;
            }
        }
    }
}

/// Learned linear mixing along the time axis, shared across channels.
///
/// Input is `steps × channels` in timestep-major order; output is
/// `filters × channels`: `out[k, c] = Σₛ w[k, s]·x[s, c] + b[k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalMixer {
    pub steps: usize,
    pub channels: usize,
    pub filters: usize,
}

impl TemporalMixer {
    pub fn inputs(&self) -> usize {
        self.steps * self.channels
    }

    pub fn outputs(&self) -> usize {
        self.filters * self.channels
    }

    pub fn param_count(&self) -> usize {
        self.filters * self.steps + self.filters
    }

    /// Starts near a pass-through of the most recent timesteps.
    pub fn init<T: Real, R: Rng>(&self, params: &mut [T], rng: &mut R) {
        for k in 0..self.filters {
            for s in 0..self.steps {
                let base = if self.steps >= self.filters && s == self.steps - self.filters + k {
                    1.0
                } else {
                    0.0
                };
                params[k * self.steps + s] = T::of(base + rng.gen_range(-0.1..0.1));
            }
        }
        for p in &mut params[self.filters * self.steps..self.param_count()] {
            *p = T::zero();
        }
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &[T], out: &mut Vec<T>) {
        let (s_n, c_n) = (self.steps, self.channels);
        let bias = &params[self.filters * s_n..];
        out.clear();
        for k in 0..self.filters {
            let w = &params[k * s_n..(k + 1) * s_n];
            for c in 0..c_n {
                let mut v = bias[k];
                for s in 0..s_n {
                    v += w[s] * x[s * c_n + c];
                }
                out.push(v);
            }
        }
    }

    pub fn backward<T: Real>(&self, params: &[T], x: &[T], grad_out: &[T], grads: &mut [T]) {
        let (s_n, c_n) = (self.steps, self.channels);
        let _ = params;
        for k in 0..self.filters {
            let mut gb = T::zero();
            for c in 0..c_n {
                let d = grad_out[k * c_n + c];
                gb += d;
                for s in 0..s_n {
                    grads[k * s_n + s] += d * x[s * c_n + c];
                }
            }
            grads[self.filters * s_n + k] += gb;
        }
    }
}

/// Optional temporal mixer followed by a perceptron.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureNet {
    pub mixer: Option<TemporalMixer>,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, Default)]
pub struct FeatureCache<T> {
    input: Vec<T>,
    mixed: Vec<T>,
    mlp: MlpCache<T>,
}

impl<T: Real> FeatureCache<T> {
    pub fn output(&self) -> &[T] {
        self.mlp.output()
    }
}

impl FeatureNet {
    /// Builds `input → [mixer] → hidden… → outputs`.
    pub fn new(
        inputs: usize,
        mixer: Option<TemporalMixer>,
        hidden: &[usize],
        outputs: usize,
    ) -> Result<Self> {
        let mlp_in = match mixer {
            Some(m) => {
                if m.inputs() != inputs {
                    return Err(Error::DimensionMismatch {
                        expected: m.inputs(),
                        got: inputs,
                    });
                }
                if m.filters == 0 || m.steps == 0 || m.channels == 0 {
                    return Err(Error::param("temporal", "mixer dimensions must be positive"));
                }
                m.outputs()
            }
            None => inputs,
        };
        let mut sizes = vec![mlp_in];
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        Ok(Self {
            mixer,
            mlp: Mlp::new(sizes)?,
        })
    }

    pub fn inputs(&self) -> usize {
        match self.mixer {
            Some(m) => m.inputs(),
            None => self.mlp.inputs(),
        }
    }

    pub fn outputs(&self) -> usize {
        self.mlp.outputs()
    }

    fn mixer_params(&self) -> usize {
        self.mixer.map_or(0, |m| m.param_count())
    }

    pub fn param_count(&self) -> usize {
        self.mixer_params() + self.mlp.param_count()
    }

    pub fn init<T: Real, R: Rng>(&self, params: &mut [T], rng: &mut R) {
        let k = self.mixer_params();
        if let Some(m) = self.mixer {
            m.init(&mut params[..k], rng);
        }
        self.mlp.init(&mut params[k..], rng);
    }

    /// Offsets of the output layer weights/biases within the full vector.
    pub fn last_layer_offsets(&self) -> (usize, usize) {
        let (w, b) = self.mlp.last_layer_offsets();
        let k = self.mixer_params();
        (k + w, k + b)
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &[T], cache: &mut FeatureCache<T>) {
        let k = self.mixer_params();
        match self.mixer {
            Some(m) => {
                cache.input.clear();
                cache.input.extend_from_slice(x);
                m.forward(&params[..k], x, &mut cache.mixed);
                self.mlp.forward(&params[k..], &cache.mixed, &mut cache.mlp);
            }
            None => self.mlp.forward(&params[k..], x, &mut cache.mlp),
        }
    }

    pub fn backward<T: Real>(
        &self,
        params: &[T],
        cache: &FeatureCache<T>,
        grad_out: &[T],
        grads: &mut [T],
    ) {
        let k = self.mixer_params();
        match self.mixer {
            Some(m) => {
                let mut g_mixed = vec![T::zero(); m.outputs()];
                let (g_mix, g_mlp) = grads.split_at_mut(k);
                self.mlp
                    .backward(&params[k..], &cache.mlp, grad_out, g_mlp, Some(&mut g_mixed));
                m.backward(&params[..k], &cache.input, &g_mixed, g_mix);
            }
            None => self
                .mlp
                .backward(&params[k..], &cache.mlp, grad_out, &mut grads[k..], None),
        }
    }
}

/// Adaptive-moment gradient descent.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize, lr: T) -> Self {
        Self {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (one - self.beta1) * *g;
            *v = self.beta2 * *v + (one - self.beta2) * *g * *g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Per-dimension centring and scaling learned from calibration features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Standardizer<T: Real> {
    pub mean: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Real> Standardizer<T> {
    pub fn fit(calib: &CalibrationSet<T>) -> Self {
        let d = calib.dim();
        let n = T::of_usize(calib.len());
        let mut mean = vec![T::zero(); d];
        for row in calib.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += *v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![T::zero(); d];
        for row in calib.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (*v - *m) * (*v - *m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > T::of(1e-12) {
                    sd
                } else {
                    T::one()
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_into(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(
            x.iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .map(|((v, m), s)| (*v - *m) / *s),
        );
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(x.len());
        self.apply_into(x, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn loss(net: &FeatureNet, params: &[f64], x: &[f64]) -> f64 {
        let mut c = FeatureCache::default();
        net.forward(params, x, &mut c);
        c.output().iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum::<f64>() / 2.0
    }

    fn check_gradients(net: &FeatureNet) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut params = vec![0.0; net.param_count()];
        net.init(&mut params, &mut rng);
        let x: Vec<f64> = (0..net.inputs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut c = FeatureCache::default();
        net.forward(&params, &x, &mut c);
        let g_out: Vec<f64> = c.output().iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v).collect();
        let mut grads = vec![0.0; params.len()];
        net.backward(&params, &c, &g_out, &mut grads);
        let h = 1e-6;
        let (mut num, mut den) = (0.0_f64, 0.0_f64);
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = loss(net, &p, &x);
            p[i] -= 2.0 * h;
            let dn = loss(net, &p, &x);
            let fd = (up - dn) / (2.0 * h);
            num += (fd - grads[i]).powi(2);
            den += fd.powi(2).max(grads[i].powi(2));
        }
        assert!((num / den).sqrt() < 1e-6, "relative error {}", (num / den).sqrt());
    }

    #[test]
    fn mlp_gradients() {
        check_gradients(&FeatureNet::new(4, None, &[8, 8], 2).unwrap());
    }

    #[test]
    fn mixer_gradients() {
        let m = TemporalMixer {
            steps: 3,
            channels: 5,
            filters: 3,
        };
        check_gradients(&FeatureNet::new(15, Some(m), &[6], 2).unwrap());
    }

    #[test]
    fn mixer_shape_mismatch() {
        let m = TemporalMixer {
            steps: 3,
            channels: 5,
            filters: 3,
        };
        assert!(FeatureNet::new(14, Some(m), &[6], 2).is_err());
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0_f64, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g = vec![2.0 * p[0], 2.0 * p[1]];
            opt.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-2 && p[1].abs() < 1e-2);
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let c = CalibrationSet::new(vec![vec![1.0, 5.0], vec![3.0, 5.0]], vec![0.0, 0.0]).unwrap();
        let s = Standardizer::fit(&c);
        assert_eq!(s.apply(&[3.0, 5.0]), vec![1.0, 0.0]);
    }
}
