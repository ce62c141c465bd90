//! Parametric PIT map: a network predicts Kumaraswamy parameters
//! `θ(x) = (a(x), b(x))` and is fit by minimizing the PIT negative
//! log-likelihood.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::distributions::{Kumaraswamy, PIT_CLAMP};
use crate::nn::{Adam, FeatureCache, FeatureNet, Standardizer, TemporalMixer};
use crate::pit::{check_alpha, check_dim, CalibrationSet, LocalPitMap, PitMap, PitSample};
use crate::rng;
use crate::{Error, Real, Result};

/// Optimizer and architecture settings shared by both map estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Mini-batch size; data sets smaller than 512 are always full-batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Hidden widths of the parametric network.
    pub hidden: Vec<usize>,
    /// Lower bound added to the softplus outputs.
    pub param_floor: f64,
    /// Epochs between recorded training-loss checkpoints.
    pub checkpoint_every: usize,
    /// Gaussian prior precision on the network parameters; the penalty
    /// added to the mean training loss is `weight_decay / N · ‖w‖² / 2`.
    pub weight_decay: f64,
    /// Sample-size-free L2 coefficient adding `l2_penalty · ‖w‖² / 2` to the
    /// mean loss. Unlike the prior term it does not fade with N, which keeps
    /// large fits from growing spurious covariate dependence.
    pub l2_penalty: f64,
    /// Optional temporal mixing stage in front of the network.
    pub temporal: Option<TemporalMixer>,
    /// Share of the calibration pairs held out for early stopping. With a
    /// positive value the returned parameters are those with the lowest
    /// holdout loss among the checkpoints; 0 trains on everything.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 300,
            batch_size: 512,
            seed: 0,
            hidden: vec![64, 64, 64],
            param_floor: 1e-3,
            checkpoint_every: 10,
            weight_decay: 0.0,
            l2_penalty: 0.0,
            temporal: None,
            validation_fraction: 0.0,
        }
    }
}

/// Prior precision used by [`TrainConfig::parametric`].
pub const PARAMETRIC_PRIOR_PRECISION: f64 = 3.0;
/// Sample-size-free L2 coefficient used by [`TrainConfig::parametric`].
pub const PARAMETRIC_L2_PENALTY: f64 = 0.004;

impl TrainConfig {
    /// Defaults for the Kumaraswamy network: a weak Gaussian prior on the
    /// weights that keeps small-sample fits stable, plus a small fixed L2
    /// term that dominates once `N` reaches the thousands.
    pub fn parametric() -> Self {
        Self {
            weight_decay: PARAMETRIC_PRIOR_PRECISION,
            l2_penalty: PARAMETRIC_L2_PENALTY,
            ..Self::default()
        }
    }

    /// Defaults for the monotone network (no weight penalty).
    pub fn nonparametric() -> Self {
        Self::default()
    }
}

/// Below this many samples every step uses the whole data set.
pub const FULL_BATCH_BELOW: usize = 512;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::param("hidden", "hidden sizes must be positive"));
        }
        if !(self.param_floor > 0.0 && self.param_floor.is_finite()) {
            return Err(Error::param("param_floor", "must be positive"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::param("checkpoint_every", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::param("weight_decay", "must be non-negative"));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::param("l2_penalty", "must be non-negative"));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::param("validation_fraction", "must lie in [0, 0.5)"));
        }
        Ok(())
    }

    pub(crate) fn effective_batch(&self, n: usize) -> usize {
        if n < FULL_BATCH_BELOW {
            n
        } else {
            self.batch_size.min(n)
        }
    }

    /// Training and holdout indices; the holdout is empty when
    /// `validation_fraction` is 0.
    pub(crate) fn holdout_split(&self, n: usize, label: &str) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut idx: Vec<usize> = (0..n).collect();
        if self.validation_fraction == 0.0 {
            return Ok((idx, Vec::new()));
        }
        idx.shuffle(&mut rng::stream(self.seed, label, &[]));
        let hold = ((n as f64 * self.validation_fraction).ceil() as usize).max(1);
        if n - hold < 2 {
            return Err(Error::DegenerateData(format!(
                "{n} pairs leave fewer than 2 for training after the holdout"
            )));
        }
        let train = idx.split_off(hold);
        Ok((train, idx))
    }
}

/// Mean training loss after a given epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub loss: f64,
    /// Holdout loss, when a holdout is used.
    #[serde(default)]
    pub validation_loss: Option<f64>,
}

pub(crate) fn check_fit_inputs<T: Real>(calib: &CalibrationSet<T>, pit: &PitSample<T>) -> Result<()> {
    if pit.len() != calib.len() {
        return Err(Error::DimensionMismatch {
            expected: calib.len(),
            got: pit.len(),
        });
    }
    if calib.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "need at least 2 calibration pairs, got {}",
            calib.len()
        )));
    }
    let eps = T::of(PIT_CLAMP);
    let z = pit.values();
    if z.iter().all(|&v| v <= eps) {
        return Err(Error::DegenerateData(
            "every PIT value sits at 0: the base CDF lies entirely above the data".into(),
        ));
    }
    if z.iter().all(|&v| v >= T::one() - eps) {
        return Err(Error::DegenerateData(
            "every PIT value sits at 1: the base CDF lies entirely below the data".into(),
        ));
    }
    Ok(())
}

/// Network `x ↦ raw outputs ∈ ℝ²`, mapped to `θ = floor + softplus(raw)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ThetaNetwork<T: Real> {
    pub net: FeatureNet,
    pub params: Vec<T>,
    pub floor: T,
}

impl<T: Real> ThetaNetwork<T> {
    pub fn new<R: rand::Rng>(
        inputs: usize,
        hidden: &[usize],
        temporal: Option<TemporalMixer>,
        floor: T,
        rng: &mut R,
    ) -> Result<Self> {
        let net = FeatureNet::new(inputs, temporal, hidden, 2)?;
        let mut params = vec![T::zero(); net.param_count()];
        net.init(&mut params, rng);
        // Start at the uniform member θ = (1, 1), constant in x. Hidden
        // activations are nonzero, so the output weights still get gradient.
        let (w_off, b_off) = net.last_layer_offsets();
        for p in &mut params[w_off..b_off] {
            *p = T::zero();
        }
        let bias = (T::one() - floor).softplus_inv();
        params[b_off] = bias;
        params[b_off + 1] = bias;
        Ok(Self { net, params, floor })
    }

    /// Moves the output biases so that the network's x-independent part is
    /// the member `k`.
    pub fn center_at(&mut self, k: Kumaraswamy<T>) {
        let (_, b_off) = self.net.last_layer_offsets();
        let tiny = T::of(1e-6);
        self.params[b_off] = (k.a - self.floor).max(tiny).softplus_inv();
        self.params[b_off + 1] = (k.b - self.floor).max(tiny).softplus_inv();
    }

    pub fn inputs(&self) -> usize {
        self.net.inputs()
    }

    /// θ(x) for an already standardized input.
    pub fn theta(&self, x_std: &[T]) -> Kumaraswamy<T> {
        let mut cache = FeatureCache::default();
        self.theta_cached(x_std, &mut cache)
    }

    fn theta_cached(&self, x_std: &[T], cache: &mut FeatureCache<T>) -> Kumaraswamy<T> {
        self.net.forward(&self.params, x_std, cache);
        let raw = cache.output();
        Kumaraswamy {
            a: self.floor + raw[0].softplus(),
            b: self.floor + raw[1].softplus(),
        }
    }

    /// Mean NLL over `(inputs, z)` and, when `grads` is given, its gradient
    /// with respect to `params` accumulated into it.
    pub fn loss_and_gradient(&self, inputs: &[Vec<T>], z: &[T], mut grads: Option<&mut [T]>) -> T {
        let n = T::of_usize(z.len());
        let mut cache = FeatureCache::default();
        let mut total = T::zero();
        for (x, &zi) in inputs.iter().zip(z) {
            let theta = self.theta_cached(x, &mut cache);
            let (nll, ga, gb) = theta.nll_with_grad(zi);
            total += nll;
            if let Some(g) = grads.as_deref_mut() {
                let raw = cache.output();
                let g_out = [ga * raw[0].sigmoid() / n, gb * raw[1].sigmoid() / n];
                self.net.backward(&self.params, &cache, &g_out, g);
            }
        }
        total / n
    }
}

/// Fitted parametric map `Ĝ(α|x) = G_{θ̂(x)}(α)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ParametricPitModel<T: Real> {
    pub network: ThetaNetwork<T>,
    pub standardizer: Standardizer<T>,
    pub config: TrainConfig,
    pub history: Vec<Checkpoint>,
}

impl<T: Real> ParametricPitModel<T> {
    pub fn theta(&self, x: &[T]) -> Result<Kumaraswamy<T>> {
        check_dim(Some(self.standardizer.dim()), x)?;
        let t = self.network.theta(&self.standardizer.apply(x));
        if t.a.is_finite() && t.b.is_finite() {
            Ok(t)
        } else {
            Err(Error::Diverged(format!("non-finite θ(x) = ({}, {})", t.a, t.b)))
        }
    }

    /// Ĝ(α|x).
    pub fn g_parametric(&self, alpha: T, x: &[T]) -> Result<T> {
        check_alpha(alpha)?;
        Ok(LocalPitMap::g(&self.theta(x)?, alpha))
    }

    /// Mean NLL of `pit` under the fitted map.
    pub fn mean_nll(&self, calib: &CalibrationSet<T>, pit: &PitSample<T>) -> Result<T> {
        check_fit_inputs(calib, pit)?;
        let inputs: Vec<Vec<T>> = calib.rows().map(|r| self.standardizer.apply(r)).collect();
        Ok(self.network.loss_and_gradient(&inputs, pit.values(), None))
    }
}

impl<T: Real> PitMap<T> for ParametricPitModel<T> {
    fn input_dim(&self) -> Option<usize> {
        Some(self.standardizer.dim())
    }

    fn localize(&self, x: &[T]) -> Result<Box<dyn LocalPitMap<T> + '_>> {
        Ok(Box::new(self.theta(x)?))
    }
}

/// Fits `x ↦ θ(x)` by Adam on the mean Kumaraswamy NLL of the PIT values.
pub fn fit_parametric<T: Real>(
    calib: &CalibrationSet<T>,
    pit: &PitSample<T>,
    config: &TrainConfig,
) -> Result<ParametricPitModel<T>> {
    config.validate()?;
    check_fit_inputs(calib, pit)?;
    let standardizer = Standardizer::fit(calib);
    let all_inputs: Vec<Vec<T>> = calib.rows().map(|r| standardizer.apply(r)).collect();
    let (train_idx, hold_idx) = config.holdout_split(pit.len(), "parametric/holdout")?;
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

    let mut init_rng = rng::stream(config.seed, "parametric/init", &[]);
    let mut shuffle_rng = rng::stream(config.seed, "parametric/shuffle", &[]);
    let mut network = ThetaNetwork::new(
        calib.dim(),
        &config.hidden,
        config.temporal,
        T::of(config.param_floor),
        &mut init_rng,
    )?;
    // Starting from the pooled MLE leaves the optimizer only the
    // x-dependence to learn.
    network.center_at(Kumaraswamy::fit_mle(z)?);

    let batch = config.effective_batch(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut opt = Adam::new(network.params.len(), T::of(config.learning_rate));
    let mut grads = vec![T::zero(); network.params.len()];
    let mut bx: Vec<Vec<T>> = Vec::with_capacity(batch);
    let mut bz: Vec<T> = Vec::with_capacity(batch);
    let decay = T::of(config.weight_decay) / T::of_usize(n) + T::of(config.l2_penalty);
    let out_bias = network.net.last_layer_offsets().1;
    let mut history = Vec::new();
    let mut best: Option<(T, Vec<T>)> = None;

    for epoch in 1..=config.epochs {
        if batch < n {
            order.shuffle(&mut shuffle_rng);
        }
        for chunk in order.chunks(batch) {
            bx.clear();
            bz.clear();
            for &i in chunk {
                bx.push(inputs[i].clone());
                bz.push(z[i]);
            }
            grads.iter_mut().for_each(|g| *g = T::zero());
            let loss = network.loss_and_gradient(&bx, &bz, Some(&mut grads));
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss became {loss} at epoch {epoch}")));
            }
            if decay > T::zero() {
                for (g, p) in grads.iter_mut().zip(&network.params) {
                    *g += decay * *p;
                }
                // The output bias sets the x-independent fit and stays unpenalized.
                grads[out_bias] -= decay * network.params[out_bias];
                grads[out_bias + 1] -= decay * network.params[out_bias + 1];
            }
            opt.step(&mut network.params, &grads);
        }
        if epoch % config.checkpoint_every == 0 || epoch == config.epochs {
            let loss = network.loss_and_gradient(&inputs, z, None);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss became {loss} at epoch {epoch}")));
            }
            let validation_loss = if hold_z.is_empty() {
                None
            } else {
                let v = network.loss_and_gradient(&hold_x, &hold_z, None);
                if v.is_finite() && best.as_ref().map_or(true, |(b, _)| v < *b) {
                    best = Some((v, network.params.clone()));
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
        network.params = params;
    }

    Ok(ParametricPitModel {
        network,
        standardizer,
        config: config.clone(),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::ScalarDistribution;
    use rand::{Rng, SeedableRng};

    fn data(n: usize, k: Kumaraswamy<f64>, seed: u64) -> (CalibrationSet<f64>, PitSample<f64>) {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![r.gen_range(-1.0..1.0), r.gen()]).collect();
        let z: Vec<f64> = (0..n).map(|_| k.quantile(r.gen()).unwrap()).collect();
        (
            CalibrationSet::new(rows, vec![0.0; n]).unwrap(),
            PitSample::new(z).unwrap(),
        )
    }

    fn small() -> TrainConfig {
        TrainConfig {
            hidden: vec![8, 8],
            epochs: 50,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn starts_at_uniform_member() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let net = ThetaNetwork::<f64>::new(3, &[16], None, 1e-3, &mut r).unwrap();
        let t = net.theta(&[0.0, 0.0, 0.0]);
        assert!((t.a - 1.0).abs() < 1e-9 && (t.b - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (c, p) = data(10, Kumaraswamy::uniform(), 1);
        let short = PitSample::new(p.values()[..5].to_vec()).unwrap();
        assert!(matches!(fit_parametric(&c, &short, &small()), Err(Error::DimensionMismatch { .. })));
        let zeros = PitSample::new(vec![0.0; 10]).unwrap();
        assert!(matches!(fit_parametric(&c, &zeros, &small()), Err(Error::DegenerateData(_))));
        let ones = PitSample::new(vec![1.0; 10]).unwrap();
        assert!(matches!(fit_parametric(&c, &ones, &small()), Err(Error::DegenerateData(_))));
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..small()
        };
        assert!(fit_parametric(&c, &p, &bad).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let (c, p) = data(100, Kumaraswamy::new(2.0, 3.0).unwrap(), 4);
        let a = fit_parametric(&c, &p, &small()).unwrap();
        let b = fit_parametric(&c, &p, &small()).unwrap();
        assert_eq!(a.network.params, b.network.params);
        let other = TrainConfig { seed: 9, ..small() };
        let d = fit_parametric(&c, &p, &other).unwrap();
        assert_ne!(a.network.params, d.network.params);
    }

    #[test]
    fn map_endpoints_and_domain() {
        let (c, p) = data(100, Kumaraswamy::new(2.0, 3.0).unwrap(), 5);
        let m = fit_parametric(&c, &p, &small()).unwrap();
        let x = [0.3, 0.2];
        assert_eq!(m.g_parametric(0.0, &x).unwrap(), 0.0);
        assert_eq!(m.g_parametric(1.0, &x).unwrap(), 1.0);
        assert!(m.g_parametric(1.1, &x).is_err());
        assert!(m.g_parametric(0.5, &[0.0]).is_err());
        let t = m.theta(&x).unwrap();
        assert!(t.a >= 1e-3 && t.b >= 1e-3);
    }

    #[test]
    fn full_batch_loss_decreases() {
        let (c, p) = data(300, Kumaraswamy::new(2.0, 3.0).unwrap(), 6);
        let m = fit_parametric(&c, &p, &TrainConfig::default()).unwrap();
        assert!(m.history.windows(2).all(|w| w[1].loss <= w[0].loss), "{:?}", m.history);
    }

    #[test]
    fn network_gradient_matches_finite_differences() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut net = ThetaNetwork::<f64>::new(3, &[6, 5], None, 1e-3, &mut r).unwrap();
        for p in &mut net.params {
            *p += r.gen_range(-0.3..0.3);
        }
        let xs: Vec<Vec<f64>> = (0..7).map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let z: Vec<f64> = (0..7).map(|_| r.gen_range(0.01..0.99)).collect();
        let mut g = vec![0.0; net.params.len()];
        net.loss_and_gradient(&xs, &z, Some(&mut g));
        let h = 1e-6;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..net.params.len() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = net.loss_and_gradient(&xs, &z, None);
            net.params[i] = orig - h;
            let dn = net.loss_and_gradient(&xs, &z, None);
            net.params[i] = orig;
            let fd: f64 = (up - dn) / (2.0 * h);
            num += (fd - g[i]).powi(2);
            den += fd.powi(2);
        }
        assert!((num / den).sqrt() < 1e-5);
    }
}
