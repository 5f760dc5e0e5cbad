//! Gaussian-process regression with an anisotropic Matérn-5/2 kernel,
//! constant mean and optional observation noise.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::neldermead::NelderMead;
use crate::SeededRng;

const SQRT5: f64 = 2.236_067_977_499_79;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
const JITTERS: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Matérn-5/2 correlation at scaled distance `r`.
pub fn matern52(r: f64) -> f64 {
    let a = SQRT5 * r;
    (1.0 + a + a * a / 3.0) * (-a).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Known observation variance.
    Fixed(f64),
    /// Variance estimated with the other hyperparameters.
    Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    pub noise: NoiseModel,
    pub n_starts: usize,
    /// Nelder-Mead budget per start; 0 picks `60 * dim + 200`.
    pub max_evals_per_start: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            noise: NoiseModel::Fixed(0.0),
            n_starts: 10,
            max_evals_per_start: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

/// Hyperparameters, size and fit quality, for trace records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSummary {
    pub n: usize,
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
    pub mean: f64,
    pub log_likelihood: f64,
    pub jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub sd: f64,
}

/// Pairwise squared coordinate differences of the training inputs.
struct PairCache {
    n: usize,
    p: usize,
    sq: Vec<f64>,
}

impl PairCache {
    fn new(inputs: &[Vec<f64>]) -> Self {
        let n = inputs.len();
        let p = inputs[0].len();
        let mut sq = Vec::with_capacity(n * (n - 1) / 2 * p);
        for i in 0..n {
            for j in i + 1..n {
                sq.extend(inputs[i].iter().zip(&inputs[j]).map(|(a, b)| (a - b) * (a - b)));
            }
        }
        Self { n, p, sq }
    }

    /// Correlation matrix with `diag` added on the diagonal.
    fn correlation(&self, inv_ls_sq: &[f64], diag: f64) -> DMatrix<f64> {
        let n = self.n;
        let mut c = DMatrix::from_element(n, n, 0.0);
        let mut pair = 0;
        for i in 0..n {
            c[(i, i)] = 1.0 + diag;
            for j in i + 1..n {
                let r2: f64 = self.sq[pair * self.p..(pair + 1) * self.p]
                    .iter()
                    .zip(inv_ls_sq)
                    .map(|(s, w)| s * w)
                    .sum();
                let v = matern52(r2.sqrt());
                c[(i, j)] = v;
                c[(j, i)] = v;
                pair += 1;
            }
        }
        c
    }
}

/// Cholesky with escalating diagonal jitter; returns the factor and jitter.
fn factorize(mut m: DMatrix<f64>, scale: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let mut added = 0.0;
    for j in JITTERS {
        let extra = j * scale - added;
        if extra > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += extra;
            }
            added = j * scale;
        }
        if let Some(ch) = m.clone().cholesky() {
            return Some((ch, j));
        }
    }
    None
}

struct Evaluated {
    log_likelihood: f64,
    signal_var: f64,
    noise_var: f64,
}

/// Evaluates the marginal likelihood at a parameter vector; `None` if the
/// covariance cannot be factorized.
fn evaluate(cache: &PairCache, y: &DVector<f64>, noise: NoiseModel, z: &[f64]) -> Option<Evaluated> {
    let p = cache.p;
    let n = cache.n as f64;
    let inv_ls_sq: Vec<f64> = z[..p].iter().map(|l| (-2.0 * l).exp()).collect();
    let ones = DVector::from_element(cache.n, 1.0);
    let gls = |ch: &Cholesky<f64, Dyn>| {
        let kinv_one = ch.solve(&ones);
        let kinv_y = ch.solve(y);
        let beta = kinv_one.dot(y) / kinv_one.sum();
        let resid = y - DVector::from_element(y.len(), beta);
        let quad = resid.dot(&(kinv_y - kinv_one * beta));
        let logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        (quad, logdet)
    };
    match noise {
        NoiseModel::Fixed(tau2) if tau2 > 0.0 => {
            let s2 = z[p].exp();
            let r = cache.correlation(&inv_ls_sq, tau2 / s2) * s2;
            let (ch, _) = factorize(r, s2)?;
            let (quad, logdet) = gls(&ch);
            Some(Evaluated {
                log_likelihood: -0.5 * (quad + logdet + n * LN_2PI),
                signal_var: s2,
                noise_var: tau2,
            })
        }
        NoiseModel::Fixed(_) | NoiseModel::Estimate => {
            let ratio = if matches!(noise, NoiseModel::Estimate) { z[p].exp() } else { 0.0 };
            let r = cache.correlation(&inv_ls_sq, ratio);
            let (ch, _) = factorize(r, 1.0)?;
            let (quad, logdet) = gls(&ch);
            let s2 = (quad / n).max(1e-300);
            Some(Evaluated {
                log_likelihood: -0.5 * (n * s2.ln() + logdet + n * (1.0 + LN_2PI)),
                signal_var: s2,
                noise_var: ratio * s2,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpSurrogate {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    hyper: Hyperparameters,
    mean: f64,
    chol: Cholesky<f64, Dyn>,
    weights: DVector<f64>,
    kinv_ones: DVector<f64>,
    ones_kinv_ones: f64,
    log_likelihood: f64,
    jitter: f64,
    start_log_likelihoods: Vec<f64>,
}

fn validate(inputs: &[Vec<f64>], outputs: &[f64]) -> Result<usize> {
    if inputs.len() < 2 {
        return Err(Error::DegenerateData(format!("GP needs at least 2 points, got {}", inputs.len())));
    }
    check_dim(inputs.len(), outputs.len())?;
    let p = inputs[0].len();
    for x in inputs {
        check_dim(p, x.len())?;
    }
    if inputs.iter().flatten().chain(outputs).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("non-finite training data".into()));
    }
    Ok(p)
}

fn find_duplicate(inputs: &[Vec<f64>]) -> Option<(usize, usize)> {
    for i in 0..inputs.len() {
        for j in i + 1..inputs.len() {
            if inputs[i] == inputs[j] {
                return Some((i, j));
            }
        }
    }
    None
}

impl GpSurrogate {
    /// Maximum-likelihood fit with multistart Nelder-Mead in log parameters.
    pub fn fit(inputs: Vec<Vec<f64>>, outputs: Vec<f64>, config: &GpConfig) -> Result<Self> {
        let p = validate(&inputs, &outputs)?;
        if let NoiseModel::Fixed(t) = config.noise {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("noise variance must be >= 0, got {t}")));
            }
            if t == 0.0 {
                if let Some((i, j)) = find_duplicate(&inputs) {
                    return Err(Error::DuplicateInputs(i, j));
                }
            }
        }

        let ranges: Vec<f64> = (0..p)
            .map(|d| {
                let (lo, hi) = inputs
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[d]), hi.max(x[d])));
                if hi > lo {
                    hi - lo
                } else {
                    1.0
                }
            })
            .collect();
        let n = outputs.len() as f64;
        let ybar = outputs.iter().sum::<f64>() / n;
        let yvar = (outputs.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / n).max(1e-12);

        let mut lower: Vec<f64> = ranges.iter().map(|r| (1e-3 * r).ln()).collect();
        let mut upper: Vec<f64> = ranges.iter().map(|r| (1e3 * r).ln()).collect();
        let extra = match config.noise {
            NoiseModel::Fixed(t) if t > 0.0 => {
                let v = yvar.max(t);
                Some(((1e-4 * v).ln(), (1e3 * v).ln(), yvar.max(t).ln()))
            }
            NoiseModel::Estimate => Some(((1e-8f64).ln(), 0.0, (1e-3f64).ln())),
            NoiseModel::Fixed(_) => None,
        };
        if let Some((lo, hi, _)) = extra {
            lower.push(lo);
            upper.push(hi);
        }
        let dim = lower.len();

        let mut rng = SeededRng::seed_from_u64(config.seed);
        let starts: Vec<Vec<f64>> = (0..config.n_starts.max(1))
            .map(|s| {
                let mut z: Vec<f64> = ranges
                    .iter()
                    .map(|r| {
                        if s == 0 {
                            r.ln()
                        } else {
                            r.ln() + rng.random_range((0.1f64).ln()..(10.0f64).ln())
                        }
                    })
                    .collect();
                if let Some((lo, hi, mid)) = extra {
                    z.push(if s == 0 { mid } else { rng.random_range(lo..hi) });
                }
                z
            })
            .collect();

        let cache = PairCache::new(&inputs);
        let y = DVector::from_column_slice(&outputs);
        let max_evals = if config.max_evals_per_start == 0 {
            60 * dim + 200
        } else {
            config.max_evals_per_start
        };
        let nm = NelderMead::new(lower, upper).max_evals(max_evals).f_tol(1e-7);
        let objective = |z: &[f64]| match evaluate(&cache, &y, config.noise, z) {
            Some(e) => -e.log_likelihood,
            None => f64::INFINITY,
        };

        let results: Vec<(f64, Vec<f64>, f64)> = starts
            .par_iter()
            .map(|start| {
                let at_start = -objective(start);
                let m = nm.minimize(objective, start, &vec![0.5; dim]);
                (at_start, m.x, -m.value)
            })
            .collect();
        let start_log_likelihoods: Vec<f64> = results.iter().map(|r| r.0).collect();
        let mut best = 0;
        for (i, r) in results.iter().enumerate() {
            if r.2 > results[best].2 {
                best = i;
            }
        }
        let z = &results[best].1;
        let ev = evaluate(&cache, &y, config.noise, z).ok_or(Error::IllConditioned(JITTERS[JITTERS.len() - 1]))?;
        let hyper = Hyperparameters {
            lengthscales: z[..p].iter().map(|l| l.exp()).collect(),
            signal_var: ev.signal_var,
            noise_var: ev.noise_var,
        };
        let mut model = Self::assemble(inputs, outputs, hyper)?;
        model.start_log_likelihoods = start_log_likelihoods;
        Ok(model)
    }

    /// Builds the predictor for given hyperparameters; the constant mean is
    /// the generalized least squares estimate.
    pub fn with_hyperparameters(inputs: Vec<Vec<f64>>, outputs: Vec<f64>, hyper: Hyperparameters) -> Result<Self> {
        let p = validate(&inputs, &outputs)?;
        check_dim(p, hyper.lengthscales.len())?;
        if hyper.noise_var == 0.0 {
            if let Some((i, j)) = find_duplicate(&inputs) {
                return Err(Error::DuplicateInputs(i, j));
            }
        }
        Self::assemble(inputs, outputs, hyper)
    }

    fn assemble(inputs: Vec<Vec<f64>>, outputs: Vec<f64>, hyper: Hyperparameters) -> Result<Self> {
        let n = inputs.len();
        let cache = PairCache::new(&inputs);
        let inv_ls_sq: Vec<f64> = hyper.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
        let s2 = hyper.signal_var;
        let k = cache.correlation(&inv_ls_sq, hyper.noise_var / s2) * s2;
        let (chol, jitter) = factorize(k, s2).ok_or(Error::IllConditioned(JITTERS[JITTERS.len() - 1]))?;
        let ones = DVector::from_element(n, 1.0);
        let y = DVector::from_column_slice(&outputs);
        let kinv_ones = chol.solve(&ones);
        let ones_kinv_ones = kinv_ones.sum();
        let mean = kinv_ones.dot(&y) / ones_kinv_ones;
        let resid = &y - DVector::from_element(n, mean);
        let weights = chol.solve(&resid);
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_likelihood = -0.5 * (resid.dot(&weights) + logdet + n as f64 * LN_2PI);
        Ok(Self {
            inputs,
            outputs,
            hyper,
            mean,
            chol,
            weights,
            kinv_ones,
            ones_kinv_ones,
            log_likelihood,
            jitter,
            start_log_likelihoods: Vec::new(),
        })
    }

    fn cross_cov(&self, x: &[f64]) -> DVector<f64> {
        let s2 = self.hyper.signal_var;
        DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|xi| {
                let r2: f64 = xi
                    .iter()
                    .zip(x)
                    .zip(&self.hyper.lengthscales)
                    .map(|((a, b), l)| ((a - b) / l).powi(2))
                    .sum();
                s2 * matern52(r2.sqrt())
            }),
        )
    }

    /// Mean and standard deviation of the latent function at `x`.
    pub fn predict(&self, x: &[f64]) -> Prediction {
        let k = self.cross_cov(x);
        let mean = self.mean + k.dot(&self.weights);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("nonsingular factor");
        let u = 1.0 - self.kinv_ones.dot(&k);
        let var = self.hyper.signal_var - v.norm_squared() + u * u / self.ones_kinv_ones;
        Prediction {
            mean,
            sd: var.max(0.0).sqrt(),
        }
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    /// Generalized least squares estimate of the constant mean.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Log likelihood at each multistart initial point (empty for fixed
    /// hyperparameters).
    pub fn start_log_likelihoods(&self) -> &[f64] {
        &self.start_log_likelihoods
    }

    pub fn summary(&self) -> GpSummary {
        GpSummary {
            n: self.inputs.len(),
            lengthscales: self.hyper.lengthscales.clone(),
            signal_var: self.hyper.signal_var,
            noise_var: self.hyper.noise_var,
            mean: self.mean,
            log_likelihood: self.log_likelihood,
            jitter: self.jitter,
        }
    }
}
