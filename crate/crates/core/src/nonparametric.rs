//! Nonparametric PIT map: a network monotone in α regressing `1{Z ≤ α}`
//! on `(α, x)` under the Brier score.
//!
//! Every path from α to the output carries a softplus-transformed
//! (nonnegative) weight and passes through increasing activations, so the
//! raw output `h(α|x)` is nondecreasing in α for every parameter value. The
//! covariates only enter as unconstrained per-layer offsets. The reported
//! map is the endpoint-normalized
//! `Ĝ(α|x) = (h(α|x) − h(0|x)) / (h(1|x) − h(0|x))`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Adam, FeatureCache, FeatureNet, Standardizer};
use crate::parametric::{check_fit_inputs, Checkpoint, TrainConfig};
use crate::pit::{check_alpha, check_dim, CalibrationSet, LocalPitMap, PitMap, PitSample};
use crate::rng;
use crate::{Error, Real, Result};

/// Normalizers below this are treated as degenerate.
const MIN_SPAN: f64 = 1e-12;

/// α draws per calibration pair and epoch: 6 uniform, one near each end.
pub const ALPHAS_PER_PAIR: usize = 8;

/// Hidden width as a function of the calibration size.
pub fn capacity_for(n: usize) -> usize {
    match n {
        0..=49 => 8,
        50..=199 => 16,
        200..=999 => 32,
        _ => 64,
    }
}

/// Offsets of the monotone head's parameter blocks.
#[derive(Debug, Clone, Copy)]
struct Layout {
    width: usize,
    embed: usize,
    rho1: usize,
    u1: usize,
    c1: usize,
    rho2: usize,
    u2: usize,
    c2: usize,
    rho_o: usize,
    u_o: usize,
    c_o: usize,
    end: usize,
}

impl Layout {
    fn new(start: usize, width: usize, embed: usize) -> Self {
        let rho1 = start;
        let u1 = rho1 + width;
        let c1 = u1 + width * embed;
        let rho2 = c1 + width;
        let u2 = rho2 + width * width;
        let c2 = u2 + width * embed;
        let rho_o = c2 + width;
        let u_o = rho_o + width;
        let c_o = u_o + embed;
        Self {
            width,
            embed,
            rho1,
            u1,
            c1,
            rho2,
            u2,
            c2,
            rho_o,
            u_o,
            c_o,
            end: c_o + 1,
        }
    }
}

/// Monotone network with its standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MonotoneNet<T: Real> {
    /// Covariate sub-network producing the embedding.
    pub covariate: FeatureNet,
    pub width: usize,
    pub params: Vec<T>,
    pub standardizer: Standardizer<T>,
    pub config: TrainConfig,
    pub history: Vec<Checkpoint>,
}

/// Nonnegative α-path weights, shared by every evaluation.
struct PathWeights<T> {
    w1: Vec<T>,
    w2: Vec<T>,
    wo: Vec<T>,
}

/// Covariate-dependent offsets at one x.
#[derive(Clone)]
struct Offsets<T> {
    b1: Vec<T>,
    b2: Vec<T>,
    bo: T,
}

/// Activations of one α pass.
#[derive(Clone, Default)]
struct Pass<T> {
    s: T,
    h1: Vec<T>,
    h2: Vec<T>,
    /// Pre-sigmoid output.
    r: T,
    out: T,
}

/// `σ(a) − σ(b)`, taken through the complements when both saturate near 1.
fn sigmoid_diff<T: Real>(a: T, b: T) -> T {
    if a > T::zero() && b > T::zero() {
        (-b).sigmoid() - (-a).sigmoid()
    } else {
        a.sigmoid() - b.sigmoid()
    }
}

/// `σ'(r) = σ(r)·σ(−r)` without the cancellation in `σ(1 − σ)`.
fn sigmoid_slope<T: Real>(r: T) -> T {
    r.sigmoid() * (-r).sigmoid()
}

impl<T: Real> MonotoneNet<T> {
    /// Freshly initialized network for `inputs` covariates at calibration size `n`.
    pub fn init(
        inputs: usize,
        n: usize,
        config: &TrainConfig,
        standardizer: Standardizer<T>,
    ) -> Result<Self> {
        let width = capacity_for(n);
        let covariate = FeatureNet::new(inputs, config.temporal, &[width], width)?;
        let layout = Layout::new(covariate.param_count(), width, width);
        let mut params = vec![T::zero(); layout.end];
        let mut r = rng::stream(config.seed, "nonparametric/init", &[]);
        covariate.init(&mut params[..layout.rho1], &mut r);

        let scale_u = 0.1 * (6.0 / width as f64).sqrt();
        let w = width as f64;
        for j in 0..width {
            let w1: f64 = r.gen_range(1.0..4.0);
            params[layout.rho1 + j] = T::of(w1).softplus_inv();
            params[layout.c1 + j] = T::of(w1 * r.gen_range(-0.8..0.8));
            params[layout.c2 + j] = T::of(r.gen_range(-0.5..0.5));
            params[layout.rho_o + j] = T::of(r.gen_range(0.5..1.5) * 2.0 / w.sqrt()).softplus_inv();
        }
        for p in &mut params[layout.rho2..layout.rho2 + width * width] {
            *p = T::of(r.gen_range(0.5..1.5) / w.sqrt()).softplus_inv();
        }
        for block in [layout.u1, layout.u2] {
            for p in &mut params[block..block + width * width] {
                *p = T::of(r.gen_range(-scale_u..scale_u));
            }
        }
        for p in &mut params[layout.u_o..layout.c_o] {
            *p = T::of(r.gen_range(-scale_u..scale_u));
        }
        params[layout.c_o] = T::zero();

        Ok(Self {
            covariate,
            width,
            params,
            standardizer,
            config: config.clone(),
            history: Vec::new(),
        })
    }

    fn layout(&self) -> Layout {
        Layout::new(self.covariate.param_count(), self.width, self.covariate.outputs())
    }

    fn path_weights(&self, l: &Layout) -> PathWeights<T> {
        let sp = |r: &[T]| r.iter().map(|v| v.softplus()).collect::<Vec<T>>();
        PathWeights {
            w1: sp(&self.params[l.rho1..l.u1]),
            w2: sp(&self.params[l.rho2..l.u2]),
            wo: sp(&self.params[l.rho_o..l.u_o]),
        }
    }

    fn offsets(&self, l: &Layout, x_std: &[T], cache: &mut FeatureCache<T>) -> Offsets<T> {
        self.covariate.forward(&self.params[..l.rho1], x_std, cache);
        let e = cache.output();
        let p = &self.params;
        let affine = |u: usize, c: usize, j: usize| {
            let row = &p[u + j * l.embed..u + (j + 1) * l.embed];
            row.iter().zip(e).fold(p[c + j], |s, (w, v)| s + *w * *v)
        };
        Offsets {
            b1: (0..l.width).map(|j| affine(l.u1, l.c1, j)).collect(),
            b2: (0..l.width).map(|j| affine(l.u2, l.c2, j)).collect(),
            bo: affine(l.u_o, l.c_o, 0),
        }
    }

    fn pass(l: &Layout, w: &PathWeights<T>, off: &Offsets<T>, alpha: T, out: &mut Pass<T>) {
        let s = T::of(2.0) * alpha - T::one();
        out.s = s;
        out.h1.clear();
        out.h1
            .extend((0..l.width).map(|j| (w.w1[j] * s + off.b1[j]).tanh()));
        out.h2.clear();
        for j in 0..l.width {
            let row = &w.w2[j * l.width..(j + 1) * l.width];
            let v = row.iter().zip(&out.h1).fold(off.b2[j], |a, (wi, hi)| a + *wi * *hi);
            out.h2.push(v.tanh());
        }
        let r = w.wo.iter().zip(&out.h2).fold(off.bo, |a, (wi, hi)| a + *wi * *hi);
        out.r = r;
        out.out = r.sigmoid();
    }

    /// Raw monotone output `h(α|x)` for a raw (unstandardized) x.
    pub fn raw_output(&self, alpha: T, x: &[T]) -> Result<T> {
        check_alpha(alpha)?;
        check_dim(Some(self.standardizer.dim()), x)?;
        let l = self.layout();
        let w = self.path_weights(&l);
        let off = self.offsets(&l, &self.standardizer.apply(x), &mut FeatureCache::default());
        let mut p = Pass::default();
        Self::pass(&l, &w, &off, alpha, &mut p);
        Ok(p.out)
    }

    /// Normalized Ĝ(α|x) with the fallback flag.
    pub fn g_nonparametric(&self, alpha: T, x: &[T]) -> Result<NormalizedValue<T>> {
        check_alpha(alpha)?;
        let local = self.bind(x)?;
        Ok(NormalizedValue {
            value: local.g(alpha),
            fallback: local.fallback,
        })
    }

    fn bind(&self, x: &[T]) -> Result<BoundMonotone<T>> {
        check_dim(Some(self.standardizer.dim()), x)?;
        let layout = self.layout();
        let weights = self.path_weights(&layout);
        let offsets = self.offsets(&layout, &self.standardizer.apply(x), &mut FeatureCache::default());
        let mut p = Pass::default();
        Self::pass(&layout, &weights, &offsets, T::zero(), &mut p);
        let r0 = p.r;
        Self::pass(&layout, &weights, &offsets, T::one(), &mut p);
        let span = sigmoid_diff(p.r, r0);
        Ok(BoundMonotone {
            layout,
            weights,
            offsets,
            r0,
            span,
            fallback: !(span > T::of(MIN_SPAN)),
        })
    }

    /// Mean squared error against `1{z ≤ α}` over an evenly spaced α grid.
    pub fn brier(&self, calib: &CalibrationSet<T>, pit: &PitSample<T>, grid_size: usize) -> Result<T> {
        brier_score(self, calib, pit, grid_size)
    }
}

/// Ĝ(α|x) together with whether the identity fallback was used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedValue<T> {
    pub value: T,
    pub fallback: bool,
}

struct BoundMonotone<T: Real> {
    layout: Layout,
    weights: PathWeights<T>,
    offsets: Offsets<T>,
    /// Pre-sigmoid output at α = 0.
    r0: T,
    span: T,
    fallback: bool,
}

impl<T: Real> LocalPitMap<T> for BoundMonotone<T> {
    fn g(&self, alpha: T) -> T {
        if self.fallback {
            return alpha;
        }
        if alpha <= T::zero() {
            return T::zero();
        }
        if alpha >= T::one() {
            return T::one();
        }
        let mut p = Pass::default();
        MonotoneNet::pass(&self.layout, &self.weights, &self.offsets, alpha, &mut p);
        (sigmoid_diff(p.r, self.r0) / self.span).clamp_unit()
    }

    /// Exact `∂Ĝ/∂α` by forward-mode differentiation of the network.
    fn density(&self, alpha: T) -> Option<T> {
        if self.fallback {
            return Some(T::one());
        }
        if !(T::zero()..=T::one()).contains(&alpha) {
            return Some(T::zero());
        }
        let (l, w) = (&self.layout, &self.weights);
        let mut p = Pass::default();
        MonotoneNet::pass(l, w, &self.offsets, alpha, &mut p);
        let one = T::one();
        // ds/dα = 2.
        let dh1: Vec<T> = (0..l.width)
            .map(|k| (one - p.h1[k] * p.h1[k]) * w.w1[k] * T::of(2.0))
            .collect();
        let mut dr = T::zero();
        for j in 0..l.width {
            let row = &w.w2[j * l.width..(j + 1) * l.width];
            let dv = row.iter().zip(&dh1).fold(T::zero(), |a, (wi, di)| a + *wi * *di);
            dr += w.wo[j] * (one - p.h2[j] * p.h2[j]) * dv;
        }
        Some((sigmoid_slope(p.r) * dr / self.span).max(T::zero()))
    }

    fn is_fallback(&self) -> bool {
        self.fallback
    }
}

impl<T: Real> PitMap<T> for MonotoneNet<T> {
    fn input_dim(&self) -> Option<usize> {
        Some(self.standardizer.dim())
    }

    fn localize(&self, x: &[T]) -> Result<Box<dyn LocalPitMap<T> + '_>> {
        Ok(Box::new(self.bind(x)?))
    }
}

/// Brier score of any PIT map on an α grid of `grid_size` points.
pub fn brier_score<T: Real, M: PitMap<T> + ?Sized>(
    model: &M,
    calib: &CalibrationSet<T>,
    pit: &PitSample<T>,
    grid_size: usize,
) -> Result<T> {
    if pit.len() != calib.len() {
        return Err(Error::DimensionMismatch {
            expected: calib.len(),
            got: pit.len(),
        });
    }
    let grid = crate::pit::unit_grid::<T>(grid_size);
    let mut total = T::zero();
    for (x, &z) in calib.rows().zip(pit.values()) {
        let local = model.localize(x)?;
        for &a in &grid {
            let target = if z <= a { T::one() } else { T::zero() };
            let d = local.g(a) - target;
            total += d * d;
        }
    }
    Ok(total / T::of_usize(calib.len() * grid.len()))
}

/// Gradient accumulators for one optimizer step.
struct Grads<T> {
    all: Vec<T>,
    w1: Vec<T>,
    w2: Vec<T>,
    wo: Vec<T>,
}

impl<T: Real> MonotoneNet<T> {
    /// Mean Brier loss over `(x, α, target)` triples of one batch, with
    /// gradients accumulated into `grads` when given.
    fn batch_loss(
        &self,
        inputs: &[Vec<T>],
        alphas: &[[T; ALPHAS_PER_PAIR]],
        z: &[T],
        mut grads: Option<&mut Grads<T>>,
    ) -> T {
        let l = self.layout();
        let w = self.path_weights(&l);
        let m = T::of_usize(inputs.len() * ALPHAS_PER_PAIR);
        let mut cache = FeatureCache::default();
        let mut total = T::zero();
        let mut p0 = Pass::default();
        let mut p1 = Pass::default();
        let mut passes: Vec<Pass<T>> = vec![Pass::default(); ALPHAS_PER_PAIR];
        let mut gh = [T::zero(); ALPHAS_PER_PAIR];
        for ((x, al), &zi) in inputs.iter().zip(alphas).zip(z) {
            let off = self.offsets(&l, x, &mut cache);
            Self::pass(&l, &w, &off, T::zero(), &mut p0);
            Self::pass(&l, &w, &off, T::one(), &mut p1);
            let span = sigmoid_diff(p1.r, p0.r);
            let degenerate = !(span > T::of(MIN_SPAN));
            let (mut g0, mut g1) = (T::zero(), T::zero());
            for (k, &a) in al.iter().enumerate() {
                let target = if zi <= a { T::one() } else { T::zero() };
                let ghat = if degenerate {
                    a
                } else {
                    Self::pass(&l, &w, &off, a, &mut passes[k]);
                    sigmoid_diff(passes[k].r, p0.r) / span
                };
                let d = ghat - target;
                total += d * d;
                if !degenerate {
                    let dl = T::of(2.0) * d / m;
                    gh[k] = dl / span;
                    g0 += dl * sigmoid_diff(passes[k].r, p1.r) / (span * span);
                    g1 -= dl * ghat / span;
                }
            }
            let Some(g) = grads.as_deref_mut() else { continue };
            if degenerate {
                continue;
            }
            let mut gb1 = vec![T::zero(); l.width];
            let mut gb2 = vec![T::zero(); l.width];
            let mut gbo = T::zero();
            for (k, pass) in passes.iter().enumerate() {
                self.backward_pass(&l, &w, pass, gh[k], g, &mut gb1, &mut gb2, &mut gbo);
            }
            self.backward_pass(&l, &w, &p0, g0, g, &mut gb1, &mut gb2, &mut gbo);
            self.backward_pass(&l, &w, &p1, g1, g, &mut gb1, &mut gb2, &mut gbo);

            // Offsets are affine in the embedding.
            let e = cache.output().to_vec();
            let mut ge = vec![T::zero(); l.embed];
            let params = &self.params;
            let mut affine_back = |u: usize, c: usize, gb: &[T]| {
                for (j, &d) in gb.iter().enumerate() {
                    g.all[c + j] += d;
                    let row = u + j * l.embed;
                    for (i, ei) in e.iter().enumerate() {
                        g.all[row + i] += d * *ei;
                        ge[i] += d * params[row + i];
                    }
                }
            };
            affine_back(l.u1, l.c1, &gb1);
            affine_back(l.u2, l.c2, &gb2);
            affine_back(l.u_o, l.c_o, &[gbo]);
            self.covariate
                .backward(&self.params[..l.rho1], &cache, &ge, &mut g.all[..l.rho1]);
        }
        total / m
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_pass(
        &self,
        l: &Layout,
        w: &PathWeights<T>,
        pass: &Pass<T>,
        g_out: T,
        g: &mut Grads<T>,
        gb1: &mut [T],
        gb2: &mut [T],
        gbo: &mut T,
    ) {
        if g_out == T::zero() {
            return;
        }
        let one = T::one();
        let dr = g_out * sigmoid_slope(pass.r);
        *gbo += dr;
        let mut dp2 = vec![T::zero(); l.width];
        for j in 0..l.width {
            g.wo[j] += dr * pass.h2[j];
            dp2[j] = dr * w.wo[j] * (one - pass.h2[j] * pass.h2[j]);
            gb2[j] += dp2[j];
        }
        let mut dh1 = vec![T::zero(); l.width];
        for j in 0..l.width {
            let d = dp2[j];
            let row = j * l.width;
            for i in 0..l.width {
                g.w2[row + i] += d * pass.h1[i];
                dh1[i] += d * w.w2[row + i];
            }
        }
        for i in 0..l.width {
            let dp1 = dh1[i] * (one - pass.h1[i] * pass.h1[i]);
            g.w1[i] += dp1 * pass.s;
            gb1[i] += dp1;
        }
    }
}

fn draw_alphas<R: Rng, T: Real>(r: &mut R) -> [T; ALPHAS_PER_PAIR] {
    let mut a = [T::zero(); ALPHAS_PER_PAIR];
    for v in a.iter_mut().take(6) {
        *v = T::of(r.gen::<f64>());
    }
    a[6] = T::of(r.gen_range(0.0..0.1));
    a[7] = T::of(r.gen_range(0.9..1.0));
    a
}

/// Fits the monotone network by Adam on the Brier loss.
///
/// `config.hidden` is ignored: the width follows [`capacity_for`].
pub fn fit_nonparametric<T: Real>(
    calib: &CalibrationSet<T>,
    pit: &PitSample<T>,
    config: &TrainConfig,
) -> Result<MonotoneNet<T>> {
    config.validate()?;
    check_fit_inputs(calib, pit)?;
    let standardizer = Standardizer::fit(calib);
    let all_inputs: Vec<Vec<T>> = calib.rows().map(|r| standardizer.apply(r)).collect();
    let (train_idx, hold_idx) = config.holdout_split(pit.len(), "nonparametric/holdout")?;
    let pick = |idx: &[usize]| -> (Vec<Vec<T>>, Vec<T>) {
        (
            idx.iter().map(|&i| all_inputs[i].clone()).collect(),
            idx.iter().map(|&i| pit.values()[i]).collect(),
        )
    };
    let (inputs, z) = pick(&train_idx);
    let (hold_x, hold_z) = pick(&hold_idx);
    let z = &z[..];
    let n = z.len();
    let mut net = MonotoneNet::init(calib.dim(), n, config, standardizer)?;
    let l = net.layout();

    let mut alpha_rng = rng::stream(config.seed, "nonparametric/alpha", &[]);
    let mut shuffle_rng = rng::stream(config.seed, "nonparametric/shuffle", &[]);
    let batch = config.effective_batch(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut opt = Adam::new(net.params.len(), T::of(config.learning_rate));
    let mut grads = Grads {
        all: vec![T::zero(); net.params.len()],
        w1: vec![T::zero(); l.width],
        w2: vec![T::zero(); l.width * l.width],
        wo: vec![T::zero(); l.width],
    };
    let decay = T::of(config.weight_decay) / T::of_usize(n) + T::of(config.l2_penalty);
    let mut eval_rng = rng::stream(config.seed, "nonparametric/eval", &[]);
    let eval_alphas: Vec<[T; ALPHAS_PER_PAIR]> = (0..n).map(|_| draw_alphas(&mut eval_rng)).collect();
    let hold_alphas: Vec<[T; ALPHAS_PER_PAIR]> = hold_z.iter().map(|_| draw_alphas(&mut eval_rng)).collect();
    let mut history = Vec::new();
    let mut best: Option<(T, Vec<T>)> = None;

    for epoch in 1..=config.epochs {
        if batch < n {
            order.shuffle(&mut shuffle_rng);
        }
        let epoch_alphas: Vec<[T; ALPHAS_PER_PAIR]> = (0..n).map(|_| draw_alphas(&mut alpha_rng)).collect();
        for chunk in order.chunks(batch) {
            let bx: Vec<Vec<T>> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let ba: Vec<[T; ALPHAS_PER_PAIR]> = chunk.iter().map(|&i| epoch_alphas[i]).collect();
            let bz: Vec<T> = chunk.iter().map(|&i| z[i]).collect();
            for v in grads
                .all
                .iter_mut()
                .chain(grads.w1.iter_mut())
                .chain(grads.w2.iter_mut())
                .chain(grads.wo.iter_mut())
            {
                *v = T::zero();
            }
            let loss = net.batch_loss(&bx, &ba, &bz, Some(&mut grads));
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss became {loss} at epoch {epoch}")));
            }
            // Chain rule through the softplus reparameterization.
            for (blocks, start) in [(&grads.w1, l.rho1), (&grads.w2, l.rho2), (&grads.wo, l.rho_o)] {
                for (i, gw) in blocks.iter().enumerate() {
                    grads.all[start + i] += *gw * net.params[start + i].sigmoid();
                }
            }
            if decay > T::zero() {
                for (g, p) in grads.all.iter_mut().zip(&net.params) {
                    *g += decay * *p;
                }
                // α-path weights are penalized on softplus(ρ), not on ρ, so the
                // prior shrinks them toward 0.
                for (start, len) in [(l.rho1, l.width), (l.rho2, l.width * l.width), (l.rho_o, l.width)] {
                    for i in start..start + len {
                        let p = net.params[i];
                        grads.all[i] += decay * (p.softplus() * p.sigmoid() - p);
                    }
                }
            }
            opt.step(&mut net.params, &grads.all);
        }
        if epoch % config.checkpoint_every == 0 || epoch == config.epochs {
            let loss = net.batch_loss(&inputs, &eval_alphas, z, None);
            let validation_loss = if hold_z.is_empty() {
                None
            } else {
                let v = net.batch_loss(&hold_x, &hold_alphas, &hold_z, None);
                if v.is_finite() && best.as_ref().map_or(true, |(b, _)| v < *b) {
                    best = Some((v, net.params.clone()));
                }
                Some(v.as_f64())
            };
            history.push(Checkpoint {
                epoch,
                loss: loss.as_f64(),
                validation_loss,
            });
        }
    }
    if let Some((_, params)) = best {
        net.params = params;
    }
    net.history = history;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pit::diagnostic_curve;
    use rand::SeedableRng;

    fn uniform_data(n: usize, seed: u64) -> (CalibrationSet<f64>, PitSample<f64>) {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![r.gen_range(-1.0..1.0), r.gen()]).collect();
        let z: Vec<f64> = (0..n).map(|_| r.gen()).collect();
        (
            CalibrationSet::new(rows, vec![0.0; n]).unwrap(),
            PitSample::new(z).unwrap(),
        )
    }

    #[test]
    fn capacity_schedule() {
        assert_eq!(capacity_for(10), 8);
        assert_eq!(capacity_for(50), 16);
        assert_eq!(capacity_for(199), 16);
        assert_eq!(capacity_for(200), 32);
        assert_eq!(capacity_for(999), 32);
        assert_eq!(capacity_for(1000), 64);
        let mut prev = 0;
        for n in 1..3000 {
            assert!(capacity_for(n) >= prev);
            prev = capacity_for(n);
        }
    }

    #[test]
    fn fresh_network_is_monotone_and_normalized() {
        let (c, _) = uniform_data(300, 1);
        let net =
            MonotoneNet::init(2, 300, &TrainConfig::default(), Standardizer::fit(&c)).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = [r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)];
            let curve = diagnostic_curve(&net, &x, 101).unwrap();
            assert!(curve.values.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(curve.values[0], 0.0);
            assert_eq!(curve.values[100], 1.0);
            let raw: Vec<f64> = (0..=100).map(|i| net.raw_output(i as f64 / 100.0, &x).unwrap()).collect();
            assert!(raw.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn closed_form_density_matches_finite_differences() {
        let (c, p) = uniform_data(200, 5);
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::nonparametric()
        };
        let net = fit_nonparametric(&c, &p, &cfg).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let x = [r.gen_range(-1.0..1.0), r.gen()];
            let local = net.localize(&x).unwrap();
            for alpha in [0.05, 0.3, 0.5, 0.77, 0.95] {
                let h = 1e-6;
                let fd = (local.g(alpha + h) - local.g(alpha - h)) / (2.0 * h);
                let d = local.density(alpha).unwrap();
                assert!((d - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{alpha}: {d} vs {fd}");
            }
        }
    }

    #[test]
    fn degenerate_normalizer_falls_back_to_identity() {
        let (c, _) = uniform_data(20, 1);
        let mut net = MonotoneNet::init(2, 20, &TrainConfig::default(), Standardizer::fit(&c)).unwrap();
        let l = net.layout();
        // Saturate the output so h(0) = h(1).
        net.params[l.c_o] = 1e4;
        let v = net.g_nonparametric(0.3, &[0.0, 0.0]).unwrap();
        assert!(v.fallback);
        assert_eq!(v.value, 0.3);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (c, p) = uniform_data(6, 3);
        let cfg = TrainConfig::default();
        let mut net = MonotoneNet::init(2, 6, &cfg, Standardizer::fit(&c)).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for v in &mut net.params {
            *v += r.gen_range(-0.2..0.2);
        }
        let inputs: Vec<Vec<f64>> = c.rows().map(|x| net.standardizer.apply(x)).collect();
        let alphas: Vec<[f64; ALPHAS_PER_PAIR]> = (0..6).map(|_| draw_alphas(&mut r)).collect();
        let l = net.layout();
        let mut g = Grads {
            all: vec![0.0; net.params.len()],
            w1: vec![0.0; l.width],
            w2: vec![0.0; l.width * l.width],
            wo: vec![0.0; l.width],
        };
        net.batch_loss(&inputs, &alphas, p.values(), Some(&mut g));
        for (blocks, start) in [(&g.w1, l.rho1), (&g.w2, l.rho2), (&g.wo, l.rho_o)] {
            for (i, gw) in blocks.iter().enumerate() {
                g.all[start + i] += gw * net.params[start + i].sigmoid();
            }
        }
        let h = 1e-6;
        let (mut num, mut den) = (0.0_f64, 0.0_f64);
        for i in 0..net.params.len() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = net.batch_loss(&inputs, &alphas, p.values(), None);
            net.params[i] = orig - h;
            let dn = net.batch_loss(&inputs, &alphas, p.values(), None);
            net.params[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            num += (fd - g.all[i]).powi(2);
            den += fd.powi(2);
        }
        assert!((num / den).sqrt() < 1e-5, "relative error {}", (num / den).sqrt());
    }

    #[test]
    fn deterministic_given_seed() {
        let (c, p) = uniform_data(60, 4);
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let a = fit_nonparametric(&c, &p, &cfg).unwrap();
        let b = fit_nonparametric(&c, &p, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.width, 16);
    }
}
