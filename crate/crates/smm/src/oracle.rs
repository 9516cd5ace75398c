//! Closed-form reference quantities for the training objectives.
//!
//! With discrete real/fake distributions the combined score objective is a
//! pointwise quadratic in the net output, so its minimizer has a closed
//! form: a posterior-weighted average in which real support points vote for
//! their noise residual and fake support points vote for zero. These
//! oracles let tests pin trained networks and loss values against exact
//! targets instead of against the implementation itself.

use crate::error::{Result, SmmError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::rng::stream_seed;

/// A finite distribution over points in `R^d`.
#[derive(Clone, Debug)]
pub struct DiscreteDistribution {
    pub points: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(points: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != probs.len() {
            return Err(SmmError::InvalidArgument(
                "need equally many support points and probabilities".into(),
            ));
        }
        let d = points[0].len();
        if d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(SmmError::InvalidArgument(
                "support points must share a nonzero dimension".into(),
            ));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(SmmError::InvalidArgument("probabilities must be >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SmmError::InvalidArgument(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(DiscreteDistribution { points, probs })
    }

    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len().max(1);
        let probs = vec![1.0 / n as f64; points.len()];
        DiscreteDistribution::new(points, probs)
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> &[f64] {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (p, point) in self.probs.iter().zip(&self.points) {
            acc += p;
            if u < acc {
                return point;
            }
        }
        self.points.last().unwrap()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The exact minimizer of the combined score objective at one corrupted
/// point: each real support point `x` contributes the residual
/// `(x_tilde - x) / sigma` weighted by its posterior mass under the
/// Gaussian corruption, and each fake support point contributes zero with
/// its own posterior mass. Errors when the total posterior weight
/// underflows, i.e. `x_tilde` is effectively outside both supports.
pub fn optimal_score_posterior(
    x_tilde: &[f64],
    real: &DiscreteDistribution,
    fake: &DiscreteDistribution,
    sigma: f64,
) -> Result<Vec<f64>> {
    if sigma <= 0.0 {
        return Err(SmmError::InvalidArgument("sigma must be positive".into()));
    }
    let d = x_tilde.len();
    if real.dim() != d || fake.dim() != d {
        return Err(SmmError::InvalidArgument(format!(
            "dimension mismatch: point has {d}, real {}, fake {}",
            real.dim(),
            fake.dim()
        )));
    }
    let weight = |x: &[f64], p: f64| p * (-sq_dist(x_tilde, x) / (2.0 * sigma * sigma)).exp();
    let mut total = 0.0;
    let mut numer = vec![0.0; d];
    for (x, &p) in real.points.iter().zip(&real.probs) {
        let w = weight(x, p);
        total += w;
        for (acc, (&xt, &xi)) in numer.iter_mut().zip(x_tilde.iter().zip(x)) {
            *acc += w * (xt - xi) / sigma;
        }
    }
    for (x, &p) in fake.points.iter().zip(&fake.probs) {
        // fake targets are independent zero-mean noise: zero contribution
        // to the numerator, full contribution to the normalizer
        total += weight(x, p);
    }
    if total < 1e-300 {
        return Err(SmmError::InvalidArgument(format!(
            "posterior weight underflow at point {x_tilde:?} (sigma {sigma})"
        )));
    }
    for v in &mut numer {
        *v /= total;
    }
    Ok(numer)
}

/// Deviation of a candidate score function from the closed-form optimum,
/// measured on Monte-Carlo draws of the corrupted mixture.
#[derive(Clone, Copy, Debug)]
pub struct ScoreDeviation {
    pub mean: f64,
    pub max: f64,
    pub evaluated: usize,
}

/// Sample corrupted points from the half-real/half-fake mixture and compare
/// `score` against the posterior optimum in Euclidean norm.
pub fn verify_prop1<F>(
    score: F,
    real: &DiscreteDistribution,
    fake: &DiscreteDistribution,
    sigma: f64,
    n_points: usize,
    seed: u64,
) -> Result<ScoreDeviation>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if n_points == 0 {
        return Err(SmmError::InvalidArgument("need at least one point".into()));
    }
    let mut rng = ChaCha8Rng::from_seed(stream_seed(seed, "prop1-verify"));
    let d = real.dim();
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for i in 0..n_points {
        let base = if i % 2 == 0 {
            real.draw(&mut rng)
        } else {
            fake.draw(&mut rng)
        }
        .to_vec();
        let x_tilde: Vec<f64> = base
            .iter()
            .map(|&x| x + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let opt = optimal_score_posterior(&x_tilde, real, fake, sigma)?;
        let got = score(&x_tilde)?;
        if got.len() != d {
            return Err(SmmError::InvalidArgument(format!(
                "score returned {} components, expected {d}",
                got.len()
            )));
        }
        let dev = sq_dist(&got, &opt).sqrt();
        sum += dev;
        max = max.max(dev);
    }
    Ok(ScoreDeviation {
        mean: sum / n_points as f64,
        max,
        evaluated: n_points,
    })
}

/// Result of the zero-mean noise-cancellation experiment: plain SGD pulls
/// an iterate toward corrupted targets `x + sigma * (eps + noise_mean)`.
/// With `noise_mean = 0` the noise cancels and the tail average recovers
/// `x`; a nonzero mean shifts the fixed point by `sigma * noise_mean`.
#[derive(Clone, Debug)]
pub struct NoiseCancellation {
    /// Tail average of the iterate (last tenth of the trajectory).
    pub estimate: Vec<f64>,
    /// Max-norm distance from the clean target `x`.
    pub error: f64,
}

pub fn noise_cancellation_experiment(
    x: &[f64],
    sigma: f64,
    noise_mean: f64,
    n_steps: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<NoiseCancellation> {
    if x.is_empty() || sigma <= 0.0 || n_steps < 10 || learning_rate <= 0.0 || learning_rate >= 1.0
    {
        return Err(SmmError::InvalidArgument(
            "need nonempty x, sigma > 0, n_steps >= 10, learning rate in (0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::from_seed(stream_seed(seed, "noise-cancellation"));
    let mut y = vec![0.0; x.len()];
    let tail_start = n_steps - n_steps / 10;
    let mut tail_sum = vec![0.0; x.len()];
    let mut tail_n = 0usize;
    for step in 0..n_steps {
        for (yi, &xi) in y.iter_mut().zip(x) {
            let eps: f64 = rng.sample(StandardNormal);
            let target = xi + sigma * (eps + noise_mean);
            // gradient of 0.5 * (y - target)^2
            *yi -= learning_rate * (*yi - target);
        }
        if step >= tail_start {
            for (s, &yi) in tail_sum.iter_mut().zip(&y) {
                *s += yi;
            }
            tail_n += 1;
        }
    }
    let estimate: Vec<f64> = tail_sum.iter().map(|s| s / tail_n as f64).collect();
    let error = estimate
        .iter()
        .zip(x)
        .map(|(e, xi)| (e - xi).abs())
        .fold(0.0f64, f64::max);
    Ok(NoiseCancellation { estimate, error })
}

/// Monte-Carlo estimate of the generator objective evaluated at the
/// closed-form optimal score: `E || S*(x_g + eps sigma) - eps ||^2` with
/// `x_g` drawn from `fake`. Theorem-level claim: this is minimized (over
/// fake distributions) exactly when fake equals real.
pub fn theorem1_bound_estimate(
    real: &DiscreteDistribution,
    fake: &DiscreteDistribution,
    sigma: f64,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if n_mc == 0 {
        return Err(SmmError::InvalidArgument("need at least one MC draw".into()));
    }
    let mut rng = ChaCha8Rng::from_seed(stream_seed(seed, "theorem1"));
    let d = fake.dim();
    let mut sum = 0.0;
    for _ in 0..n_mc {
        let xg = fake.draw(&mut rng).to_vec();
        let eps: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let x_tilde: Vec<f64> = xg.iter().zip(&eps).map(|(x, e)| x + sigma * e).collect();
        let s = optimal_score_posterior(&x_tilde, real, fake, sigma)?;
        sum += sq_dist(&s, &eps);
    }
    Ok(sum / n_mc as f64)
}
