//! Reference computations shared by the integration and acceptance tests.
//! Each one is written independently of the library code it checks.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use curvopt::SeededRng;

/// Textbook recursive Cox-de Boor; the last basis function is 1 at the
/// right end of the knot vector.
pub fn cox_de_boor(knots: &[f64], order: usize, i: usize, t: f64) -> f64 {
    let last = *knots.last().unwrap();
    if order == 1 {
        let (a, b) = (knots[i], knots[i + 1]);
        let inside = (a <= t && t < b) || (t == last && b == last && a < b);
        return if inside { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[i + order - 1] - knots[i];
    if d1 > 0.0 {
        v += (t - knots[i]) / d1 * cox_de_boor(knots, order - 1, i, t);
    }
    let d2 = knots[i + order] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + order] - t) / d2 * cox_de_boor(knots, order - 1, i + 1, t);
    }
    v
}

pub fn basis_values(knots: &[f64], order: usize, t: f64) -> Vec<f64> {
    (0..knots.len() - order).map(|i| cox_de_boor(knots, order, i, t)).collect()
}

/// Gram matrix by the composite trapezoid rule on `points` equispaced nodes.
pub fn trapezoid_gram(knots: &[f64], order: usize, points: usize) -> DMatrix<f64> {
    let k = knots.len() - order;
    let h = 1.0 / (points - 1) as f64;
    let mut g = DMatrix::zeros(k, k);
    for j in 0..points {
        let t = j as f64 * h;
        let w = if j == 0 || j == points - 1 { 0.5 * h } else { h };
        let b = basis_values(knots, order, t);
        for p in 0..k {
            if b[p] == 0.0 {
                continue;
            }
            for q in 0..k {
                g[(p, q)] += w * b[p] * b[q];
            }
        }
    }
    g
}

/// Discrete least squares fit of `f` sampled at `points` cell midpoints.
pub fn dense_least_squares(knots: &[f64], order: usize, f: impl Fn(f64) -> f64, points: usize) -> Vec<f64> {
    let k = knots.len() - order;
    let mut a = DMatrix::zeros(points, k);
    let mut y = DVector::zeros(points);
    for j in 0..points {
        let t = (j as f64 + 0.5) / points as f64;
        for (p, v) in basis_values(knots, order, t).into_iter().enumerate() {
            a[(j, p)] = v;
        }
        y[j] = f(t);
    }
    let svd = a.svd(true, true);
    svd.solve(&y, 1e-14).unwrap().iter().copied().collect()
}

pub fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
}

pub fn kernel(a: &[f64], b: &[f64], ls: &[f64], s2: f64) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    s2 * matern52(r2.sqrt())
}

/// Kriging predictor with a GLS constant mean, via an explicit LU inverse.
pub struct DenseGp {
    pub kinv: DMatrix<f64>,
    pub beta: f64,
    pub x: Vec<Vec<f64>>,
    pub y: DVector<f64>,
    pub ls: Vec<f64>,
    pub s2: f64,
}

impl DenseGp {
    pub fn new(x: Vec<Vec<f64>>, y: &[f64], ls: &[f64], s2: f64, noise: f64) -> Self {
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j], ls, s2) + if i == j { noise } else { 0.0 });
        let kinv = k.lu().try_inverse().unwrap();
        let ones = DVector::from_element(n, 1.0);
        let y = DVector::from_column_slice(y);
        let beta = (ones.transpose() * &kinv * &y)[(0, 0)] / (ones.transpose() * &kinv * &ones)[(0, 0)];
        Self {
            kinv,
            beta,
            x,
            y,
            ls: ls.to_vec(),
            s2,
        }
    }

    pub fn predict(&self, t: &[f64]) -> (f64, f64) {
        let n = self.x.len();
        let k = DVector::from_fn(n, |i, _| kernel(&self.x[i], t, &self.ls, self.s2));
        let ones = DVector::from_element(n, 1.0);
        let resid = &self.y - &ones * self.beta;
        let mean = self.beta + (k.transpose() * &self.kinv * resid)[(0, 0)];
        let one_kinv_one = (ones.transpose() * &self.kinv * &ones)[(0, 0)];
        let u = 1.0 - (ones.transpose() * &self.kinv * &k)[(0, 0)];
        let var = self.s2 - (k.transpose() * &self.kinv * &k)[(0, 0)] + u * u / one_kinv_one;
        (mean, var.max(0.0).sqrt())
    }

    /// Variance far from every training point.
    pub fn prior_sd(&self) -> f64 {
        let n = self.x.len();
        let ones = DVector::from_element(n, 1.0);
        (self.s2 + 1.0 / (ones.transpose() * &self.kinv * &ones)[(0, 0)]).sqrt()
    }
}

/// Sample mean and standard error of `max(y_plugin - Y, 0)`, `Y ~ N(yhat, s^2)`.
pub fn ei_monte_carlo(y_plugin: f64, yhat: f64, s: f64, draws: usize, rng: &mut SeededRng) -> (f64, f64) {
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..draws {
        let z: f64 = rng.sample(StandardNormal);
        let v = (y_plugin - (yhat + s * z)).max(0.0);
        sum += v;
        sum2 += v * v;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Log of one Gaussian kernel term `(1/n) prod N(u_k; 0, lambda_k^2)`.
pub fn log_kernel_term(u: &[f64], lambdas: &[f64], n: usize) -> f64 {
    -(n as f64).ln()
        + u.iter()
            .zip(lambdas)
            .map(|(x, l)| -0.5 * (x / l).powi(2) - l.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln())
            .sum::<f64>()
}

/// Point on `{u : u' G u = delta^2}` in the direction of `w` (any nonzero).
pub fn to_ellipsoid(w: &[f64], chol_l: &DMatrix<f64>, delta: f64) -> Vec<f64> {
    let v = DVector::from_column_slice(w);
    let v = &v * (delta / v.norm());
    // u = L^{-T} v gives u' L L' u = |v|^2
    let u = chol_l.transpose().solve_upper_triangular(&v).unwrap();
    u.iter().copied().collect()
}

/// Smallest log kernel term over the Delta-ellipsoid by adaptive random
/// search: uniform directions first, then shrinking perturbations of the
/// incumbent, `evals` evaluations in total.
pub fn ellipsoid_random_search(
    lambdas: &[f64],
    gram: &DMatrix<f64>,
    n: usize,
    delta: f64,
    evals: usize,
    rng: &mut SeededRng,
) -> f64 {
    let k = lambdas.len();
    let l = gram.clone().cholesky().unwrap().l();
    let draw = |rng: &mut SeededRng| -> Vec<f64> { (0..k).map(|_| rng.sample(StandardNormal)).collect() };
    let score = |w: &[f64]| log_kernel_term(&to_ellipsoid(w, &l, delta), lambdas, n);
    let uniform = evals / 10;
    let mut best_w = draw(rng);
    let mut best = score(&best_w);
    for _ in 1..uniform {
        let w = draw(rng);
        let v = score(&w);
        if v < best {
            best = v;
            best_w = w;
        }
    }
    let mut step = 0.3;
    let mut fails = 0;
    for _ in uniform..evals {
        let norm = best_w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let w: Vec<f64> = best_w
            .iter()
            .map(|x| x / norm + step * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let v = score(&w);
        if v < best {
            best = v;
            best_w = w;
            fails = 0;
        } else {
            fails += 1;
            if fails > 50 {
                step = (step * 0.5).max(1e-9);
                fails = 0;
            }
        }
    }
    best
}

/// Random symmetric positive definite matrix, shifted away from singularity.
pub fn random_spd(k: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let m = &a * a.transpose();
    let scale = m.trace() / k as f64;
    m + DMatrix::identity(k, k) * (0.05 * scale)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
