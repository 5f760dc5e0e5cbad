//! Product-Gaussian kernel density over projection coefficients, with
//! leave-one-out bandwidths and a distance-based admissibility threshold.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisConfig, SplineBasis};
use crate::curves::{csv_io, CurveSet};
use crate::error::{check_dim, Error, Result};
use crate::neldermead::NelderMead;
use crate::SeededRng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log of the density with bandwidths `lambdas` centred on `centers` at `alpha`.
pub fn log_density(centers: &[Vec<f64>], lambdas: &[f64], alpha: &[f64]) -> f64 {
    let k = lambdas.len();
    let norm = -(centers.len() as f64).ln()
        - lambdas.iter().map(|l| l.ln()).sum::<f64>()
        - 0.5 * k as f64 * LN_2PI;
    let terms = centers.iter().map(|c| {
        -0.5 * c
            .iter()
            .zip(alpha)
            .zip(lambdas)
            .map(|((c, a), l)| ((a - c) / l).powi(2))
            .sum::<f64>()
    });
    norm + log_sum_exp(terms)
}

/// Settings of the leave-one-out bandwidth search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandwidthConfig {
    pub n_starts: usize,
    pub max_evals_per_start: usize,
    pub seed: u64,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        Self {
            n_starts: 5,
            max_evals_per_start: 600,
            seed: 0,
        }
    }
}

/// Pairwise squared coordinate differences, cached for repeated LOO evaluation.
struct LooData {
    n: usize,
    k: usize,
    /// For pair `p` (i < j in row-major order), `sq[p * k + d]`.
    sq: Vec<f64>,
    pairs: Vec<(u32, u32)>,
}

impl LooData {
    fn new(alphas: &[Vec<f64>]) -> Self {
        let n = alphas.len();
        let k = alphas[0].len();
        let mut sq = Vec::with_capacity(n * (n - 1) / 2 * k);
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((i as u32, j as u32));
                sq.extend(alphas[i].iter().zip(&alphas[j]).map(|(a, b)| (a - b) * (a - b)));
            }
        }
        Self { n, k, sq, pairs }
    }

    /// Sum over i of log rho^{-i}(alpha_i).
    fn objective(&self, lambdas: &[f64], exponents: &mut [f64]) -> f64 {
        let w: Vec<f64> = lambdas.iter().map(|l| 0.5 / (l * l)).collect();
        let mut row_min = vec![f64::INFINITY; self.n];
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let e: f64 = self.sq[p * self.k..(p + 1) * self.k]
                .iter()
                .zip(&w)
                .map(|(s, w)| s * w)
                .sum();
            exponents[p] = e;
            let (i, j) = (i as usize, j as usize);
            row_min[i] = row_min[i].min(e);
            row_min[j] = row_min[j].min(e);
        }
        let mut row_sum = vec![0.0; self.n];
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let (i, j) = (i as usize, j as usize);
            let e = exponents[p];
            row_sum[i] += (row_min[i] - e).exp();
            row_sum[j] += (row_min[j] - e).exp();
        }
        let norm = -((self.n - 1) as f64).ln()
            - lambdas.iter().map(|l| l.ln()).sum::<f64>()
            - 0.5 * self.k as f64 * LN_2PI;
        (0..self.n)
            .map(|i| norm - row_min[i] + row_sum[i].ln())
            .sum()
    }
}

/// Leave-one-out log likelihood `sum_i log rho^{-i}(alpha_i)`.
pub fn loo_log_likelihood(alphas: &[Vec<f64>], lambdas: &[f64]) -> f64 {
    let data = LooData::new(alphas);
    let mut buf = vec![0.0; data.pairs.len()];
    data.objective(lambdas, &mut buf)
}

/// Multivariate Silverman rule of thumb, per dimension.
pub fn silverman(alphas: &[Vec<f64>]) -> Vec<f64> {
    let n = alphas.len() as f64;
    let k = alphas[0].len();
    let factor = (4.0 / ((k as f64 + 2.0) * n)).powf(1.0 / (k as f64 + 4.0));
    (0..k)
        .map(|d| {
            let mean = alphas.iter().map(|a| a[d]).sum::<f64>() / n;
            let var = alphas.iter().map(|a| (a[d] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            var.sqrt() * factor
        })
        .collect()
}

/// Bandwidths maximizing the leave-one-out log likelihood.
///
/// The search runs Nelder-Mead in log-bandwidth space from the Silverman
/// rule and from jittered copies of it. Each bandwidth is kept above
/// `1e-6` times the pooled coefficient range; a constant coefficient column
/// is pinned at that floor.
pub fn fit_bandwidths(alphas: &[Vec<f64>], config: &BandwidthConfig) -> Result<Vec<f64>> {
    let n = alphas.len();
    if n < 3 {
        return Err(Error::DegenerateData(format!("bandwidth selection needs n >= 3, got {n}")));
    }
    let k = alphas[0].len();
    for a in alphas {
        check_dim(k, a.len())?;
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("non-finite coefficient".into()));
        }
    }
    let (lo, hi) = alphas
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let pooled = if hi > lo { hi - lo } else { 1.0 };
    let floor = 1e-6 * pooled;

    let ranges: Vec<f64> = (0..k)
        .map(|d| {
            let (lo, hi) = alphas
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a[d]), hi.max(a[d])));
            hi - lo
        })
        .collect();
    let free: Vec<usize> = (0..k).filter(|&d| ranges[d] > 0.0).collect();
    if free.len() < k {
        log::warn!("{} constant coefficient column(s); bandwidth pinned at {floor:e}", k - free.len());
    }
    let start_full: Vec<f64> = silverman(alphas)
        .into_iter()
        .map(|l| if l > floor { l } else { floor })
        .collect();
    if free.is_empty() {
        return Ok(vec![floor; k]);
    }

    let data = LooData::new(alphas);
    let mut buf = vec![0.0; data.pairs.len()];
    let mut lambdas = start_full.clone();
    let mut neg_objective = |z: &[f64]| {
        for (slot, &d) in free.iter().enumerate() {
            lambdas[d] = z[slot].exp();
        }
        -data.objective(&lambdas, &mut buf)
    };

    let lower: Vec<f64> = free.iter().map(|_| floor.ln()).collect();
    let upper: Vec<f64> = free.iter().map(|&d| (10.0 * ranges[d]).max(floor).ln()).collect();
    let nm = NelderMead::new(lower, upper)
        .max_evals(config.max_evals_per_start)
        .f_tol(1e-9);
    let silverman_z: Vec<f64> = free.iter().map(|&d| start_full[d].ln()).collect();
    let mut rng = SeededRng::seed_from_u64(config.seed);

    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in 0..config.n_starts.max(1) {
        let start: Vec<f64> = if s == 0 {
            silverman_z.clone()
        } else {
            silverman_z
                .iter()
                .map(|z| z + 0.5 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let m = nm.minimize(&mut neg_objective, &start, &vec![0.3; free.len()]);
        if best.as_ref().is_none_or(|(_, v)| m.value < *v) {
            best = Some((m.x, m.value));
        }
    }
    let (z, _) = best.expect("at least one start");
    let mut out = start_full;
    for (slot, &d) in free.iter().enumerate() {
        out[d] = z[slot].exp();
    }
    Ok(out)
}

/// Largest generalized eigenvalue of `(diag(1 / lambda^2), gram)`.
pub fn max_generalized_eigenvalue(lambdas: &[f64], gram: &DMatrix<f64>) -> Result<f64> {
    let k = lambdas.len();
    check_dim(k, gram.nrows())?;
    check_dim(k, gram.ncols())?;
    let chol = gram.clone().cholesky().ok_or(Error::SingularGram)?;
    let l = chol.l();
    // M = L^{-1} D L^{-T}
    let mut d_half = DMatrix::zeros(k, k);
    for (i, lam) in lambdas.iter().enumerate() {
        d_half[(i, i)] = 1.0 / lam;
    }
    let x = l
        .solve_lower_triangular(&d_half)
        .ok_or(Error::SingularGram)?;
    let m = &x * x.transpose();
    let eig = m.symmetric_eigen();
    Ok(eig.eigenvalues.max())
}

/// Smallest single-kernel density over coefficient offsets whose spline has
/// L2 norm at most `delta`. Underflows to zero for narrow bandwidths; see
/// [`compute_log_threshold`].
pub fn compute_threshold(lambdas: &[f64], gram: &DMatrix<f64>, n: usize, delta: f64) -> Result<f64> {
    compute_log_threshold(lambdas, gram, n, delta).map(f64::exp)
}

/// Natural log of [`compute_threshold`].
pub fn compute_log_threshold(lambdas: &[f64], gram: &DMatrix<f64>, n: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!("delta must be > 0, got {delta}")));
    }
    let mu = max_generalized_eigenvalue(lambdas, gram)?;
    let k = lambdas.len() as f64;
    let log_t = -(n as f64).ln()
        - 0.5 * k * LN_2PI
        - lambdas.iter().map(|l| l.ln()).sum::<f64>()
        - 0.5 * delta * delta * mu;
    Ok(log_t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    alphas: Vec<Vec<f64>>,
    lambdas: Vec<f64>,
    log_threshold: f64,
    delta: f64,
    basis: BasisConfig,
}

/// On-disk form: coefficients live in a sibling CSV file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KdeDocument {
    alphas: String,
    n: usize,
    lambdas: Vec<f64>,
    threshold: f64,
    log_threshold: f64,
    delta: f64,
    basis: BasisConfig,
}

impl KdeModel {
    /// Projects every curve onto `basis`, selects bandwidths and threshold.
    pub fn fit(history: &CurveSet, basis: &SplineBasis, delta: f64, config: &BandwidthConfig) -> Result<Self> {
        let alphas = history
            .curves()
            .iter()
            .map(|c| basis.project_curve(c).map(|a| a.into_inner()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_coefficients(alphas, basis, delta, config)
    }

    pub fn from_coefficients(
        alphas: Vec<Vec<f64>>,
        basis: &SplineBasis,
        delta: f64,
        config: &BandwidthConfig,
    ) -> Result<Self> {
        let lambdas = fit_bandwidths(&alphas, config)?;
        Self::from_parts(alphas, lambdas, basis, delta)
    }

    pub fn from_parts(alphas: Vec<Vec<f64>>, lambdas: Vec<f64>, basis: &SplineBasis, delta: f64) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::EmptySet);
        }
        check_dim(basis.len(), lambdas.len())?;
        for a in &alphas {
            check_dim(basis.len(), a.len())?;
        }
        if lambdas.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::DegenerateData("bandwidths must be positive".into()));
        }
        let log_threshold = compute_log_threshold(&lambdas, basis.gram(), alphas.len(), delta)?;
        Ok(Self {
            alphas,
            lambdas,
            log_threshold,
            delta,
            basis: basis.config(),
        })
    }

    pub fn alphas(&self) -> &[Vec<f64>] {
        &self.alphas
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn threshold(&self) -> f64 {
        self.log_threshold.exp()
    }

    pub fn log_threshold(&self) -> f64 {
        self.log_threshold
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn basis_config(&self) -> &BasisConfig {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn log_density_at(&self, alpha: &[f64]) -> f64 {
        log_density(&self.alphas, &self.lambdas, alpha)
    }

    pub fn density_at(&self, alpha: &[f64]) -> f64 {
        self.log_density_at(alpha).exp()
    }

    pub fn is_admissible(&self, alpha: &[f64]) -> bool {
        alpha.len() == self.dim() && self.log_density_at(alpha) >= self.log_threshold
    }

    /// One draw from the fitted mixture.
    pub fn sample(&self, rng: &mut SeededRng) -> Vec<f64> {
        let center = &self.alphas[rng.random_range(0..self.alphas.len())];
        center
            .iter()
            .zip(&self.lambdas)
            .map(|(c, l)| c + l * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Writes the model JSON to `json_path` and coefficients to `csv_path`.
    pub fn save(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path).map_err(csv_io)?;
        let mut header = vec!["id".to_owned()];
        header.extend((1..=self.dim()).map(|k| format!("alpha_{k}")));
        w.write_record(&header).map_err(csv_io)?;
        for (i, a) in self.alphas.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(a.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;

        let rel = match (csv_path.parent(), json_path.parent()) {
            (Some(a), Some(b)) if a == b => csv_path.file_name().map(|f| f.to_string_lossy().into_owned()),
            _ => None,
        }
        .unwrap_or_else(|| csv_path.to_string_lossy().into_owned());
        let doc = KdeDocument {
            alphas: rel,
            n: self.alphas.len(),
            lambdas: self.lambdas.clone(),
            threshold: self.threshold(),
            log_threshold: self.log_threshold,
            delta: self.delta,
            basis: self.basis.clone(),
        };
        std::fs::write(json_path, serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn load(json_path: &Path) -> Result<Self> {
        let doc: KdeDocument = serde_json::from_str(&std::fs::read_to_string(json_path)?)?;
        let csv_path = json_path
            .parent()
            .map(|p| p.join(&doc.alphas))
            .unwrap_or_else(|| doc.alphas.clone().into());
        let mut rdr = csv::Reader::from_path(&csv_path).map_err(csv_io)?;
        let mut alphas = Vec::with_capacity(doc.n);
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_io)?;
            let row = rec
                .iter()
                .skip(1)
                .map(|f| {
                    f.parse::<f64>().map_err(|e| Error::Parse {
                        line: line + 2,
                        msg: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            check_dim(doc.lambdas.len(), row.len())?;
            alphas.push(row);
        }
        check_dim(doc.n, alphas.len())?;
        Ok(Self {
            alphas,
            lambdas: doc.lambdas,
            log_threshold: doc.log_threshold,
            delta: doc.delta,
            basis: doc.basis,
        })
    }
}

/// Plain sum of kernel terms; reference for tests.
pub fn naive_density(centers: &[Vec<f64>], lambdas: &[f64], alpha: &[f64]) -> f64 {
    let n = centers.len() as f64;
    centers
        .iter()
        .map(|c| {
            c.iter()
                .zip(alpha)
                .zip(lambdas)
                .map(|((c, a), l)| (-0.5 * ((a - c) / l).powi(2)).exp() / (l * (2.0 * PI).sqrt()))
                .product::<f64>()
        })
        .sum::<f64>()
        / n
}
