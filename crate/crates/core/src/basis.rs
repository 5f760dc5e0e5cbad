//! B-spline bases on [0, 1], their Gram matrices, and L2 projection.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curves::{Curve, Grid, MonotoneCubic};
use crate::error::{check_dim, Error, Result};

const MAX_ORDER: usize = 16;

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and its derivative
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Order and knot vector of a spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisConfig {
    pub order: usize,
    pub knots: Vec<f64>,
}

impl Default for BasisConfig {
    /// Order 5 with interior knots at quarters: 8 basis functions.
    fn default() -> Self {
        Self {
            order: 5,
            knots: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0],
        }
    }
}

/// Coefficients of a curve in a spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefVector(Vec<f64>);

impl CoefVector {
    pub fn new(alpha: Vec<f64>) -> Self {
        Self(alpha)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for CoefVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Synthesized curve plus the grid positions that had to be clamped at zero.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub curve: Curve,
    pub clamped: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SplineBasis {
    order: usize,
    knots: Vec<f64>,
    gram: DMatrix<f64>,
    gram_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Nonempty knot spans as (left knot index, left, right).
    spans: Vec<(usize, f64, f64)>,
}

impl SplineBasis {
    pub fn new(order: usize, knots: Vec<f64>) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::BadKnots(format!("order must be in 1..={MAX_ORDER}")));
        }
        if knots.len() < 2 * order {
            return Err(Error::BadKnots(format!(
                "need at least {} knots for order {order}",
                2 * order
            )));
        }
        if knots.iter().any(|t| !t.is_finite()) || knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::BadKnots("knots must be finite and nondecreasing".into()));
        }
        let last = knots.len() - 1;
        if knots[0] != 0.0 || knots[last] != 1.0 {
            return Err(Error::BadKnots("knot vector must run from 0 to 1".into()));
        }
        if knots[..order].iter().any(|&t| t != 0.0) || knots[last + 1 - order..].iter().any(|&t| t != 1.0) {
            return Err(Error::BadKnots(format!("endpoint knots need multiplicity >= {order}")));
        }
        for i in 0..knots.len() {
            let mult = knots[i..].iter().take_while(|&&t| t == knots[i]).count();
            if knots[i] > 0.0 && knots[i] < 1.0 && mult > order {
                return Err(Error::BadKnots(format!("interior knot {} repeated {mult} times", knots[i])));
            }
        }
        let spans: Vec<(usize, f64, f64)> = (0..knots.len() - 1)
            .filter(|&i| knots[i + 1] > knots[i])
            .map(|i| (i, knots[i], knots[i + 1]))
            .collect();

        let k = knots.len() - order;
        let mut basis = Self {
            order,
            knots,
            gram: DMatrix::zeros(k, k),
            gram_chol: DMatrix::<f64>::identity(1, 1).cholesky().expect("identity"),
            spans,
        };
        let (nodes, weights) = gauss_legendre(order);
        let mut gram = DMatrix::zeros(k, k);
        let mut vals = vec![0.0; order];
        for &(span, a, b) in &basis.spans {
            let half = 0.5 * (b - a);
            for (x, w) in nodes.iter().zip(&weights) {
                let t = a + half * (x + 1.0);
                basis.eval_span(span, t, &mut vals);
                let first = span + 1 - order;
                for p in 0..order {
                    for q in 0..order {
                        gram[(first + p, first + q)] += w * half * vals[p] * vals[q];
                    }
                }
            }
        }
        // exact symmetry; accumulation order differs across the diagonal
        for i in 0..k {
            for j in i + 1..k {
                gram[(j, i)] = gram[(i, j)];
            }
        }
        basis.gram_chol = gram.clone().cholesky().ok_or(Error::SingularGram)?;
        basis.gram = gram;
        Ok(basis)
    }

    pub fn from_config(cfg: &BasisConfig) -> Result<Self> {
        Self::new(cfg.order, cfg.knots.clone())
    }

    pub fn config(&self) -> BasisConfig {
        BasisConfig {
            order: self.order,
            knots: self.knots.clone(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.knots.len() - self.order
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    fn span_of(&self, t: f64) -> usize {
        let t = t.clamp(0.0, 1.0);
        // last nonempty span with left knot <= t; t = 1 falls in the final span
        let mut lo = self.spans[0].0;
        for &(i, a, _) in &self.spans {
            if a <= t {
                lo = i;
            } else {
                break;
            }
        }
        lo
    }

    /// Values of the `order` functions that are nonzero on knot span `span`.
    fn eval_span(&self, span: usize, t: f64, out: &mut [f64]) {
        let p = self.order - 1;
        let u = &self.knots;
        let mut left = [0.0; MAX_ORDER + 1];
        let mut right = [0.0; MAX_ORDER + 1];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Values of every basis function at `t`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut all = vec![0.0; self.len()];
        self.eval_into(t, &mut all);
        all
    }

    pub fn eval_into(&self, t: f64, all: &mut [f64]) {
        all.iter_mut().for_each(|v| *v = 0.0);
        let span = self.span_of(t);
        let mut vals = vec![0.0; self.order];
        self.eval_span(span, t.clamp(0.0, 1.0), &mut vals);
        let first = span + 1 - self.order;
        all[first..first + self.order].copy_from_slice(&vals);
    }

    pub fn eval_combination(&self, alpha: &[f64], t: f64) -> f64 {
        let span = self.span_of(t);
        let mut buf = [0.0; MAX_ORDER];
        let vals = &mut buf[..self.order];
        self.eval_span(span, t.clamp(0.0, 1.0), vals);
        let first = span + 1 - self.order;
        vals.iter().zip(&alpha[first..first + self.order]).map(|(b, a)| b * a).sum()
    }

    /// Squared L2 norm of `sum alpha_k B_k` on [0, 1].
    pub fn l2_norm_sq(&self, alpha: &[f64]) -> f64 {
        let a = DVector::from_column_slice(alpha);
        (a.transpose() * &self.gram * &a)[(0, 0)]
    }

    /// Inner products `int f B_k` by composite Gauss-Legendre over the basis
    /// spans refined by `breakpoints`.
    pub fn moments(&self, f: impl Fn(f64) -> f64, breakpoints: &[f64], nodes_per_piece: usize) -> DVector<f64> {
        let mut cuts: Vec<f64> = self.spans.iter().flat_map(|&(_, a, b)| [a, b]).collect();
        cuts.extend(breakpoints.iter().copied().filter(|t| (0.0..=1.0).contains(t)));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let (nodes, weights) = gauss_legendre(nodes_per_piece);
        let mut b = DVector::zeros(self.len());
        let mut vals = vec![0.0; self.order];
        for w in cuts.windows(2) {
            let (a, c) = (w[0], w[1]);
            let half = 0.5 * (c - a);
            let mid = 0.5 * (a + c);
            let span = self.span_of(mid);
            let first = span + 1 - self.order;
            for (x, wt) in nodes.iter().zip(&weights) {
                let t = mid + half * x;
                self.eval_span(span, t, &mut vals);
                let ft = f(t);
                for p in 0..self.order {
                    b[first + p] += wt * half * ft * vals[p];
                }
            }
        }
        b
    }

    /// L2 projection of `f`, integrating on the basis spans refined by
    /// `breakpoints` (where `f` may lose smoothness).
    pub fn project_with_breakpoints(&self, f: impl Fn(f64) -> f64, breakpoints: &[f64]) -> Result<CoefVector> {
        let b = self.moments(f, breakpoints, self.order + 2);
        let alpha = self.gram_chol.solve(&b);
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::SingularGram);
        }
        Ok(CoefVector(alpha.as_slice().to_vec()))
    }

    /// L2 projection of a smooth function, integrated on 256 equal pieces.
    pub fn project_fn(&self, f: impl Fn(f64) -> f64) -> Result<CoefVector> {
        let cuts: Vec<f64> = (0..=256).map(|i| i as f64 / 256.0).collect();
        self.project_with_breakpoints(f, &cuts)
    }

    pub fn project_interpolant(&self, interp: &MonotoneCubic) -> Result<CoefVector> {
        self.project_with_breakpoints(|t| interp.eval(t), interp.breakpoints())
    }

    /// Interpolates `curve` and projects the interpolant.
    pub fn project_curve(&self, curve: &Curve) -> Result<CoefVector> {
        self.project_interpolant(&curve.interpolate()?)
    }

    /// Evaluates `sum alpha_k B_k` at the grid knots, clamps negatives at
    /// zero and normalizes to mean one.
    pub fn synthesize_detailed(&self, alpha: &[f64], grid: &Arc<Grid>) -> Result<Synthesis> {
        check_dim(self.len(), alpha.len())?;
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonPositiveMean);
        }
        let mut clamped = Vec::new();
        let raw: Vec<f64> = grid
            .knots()
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                let v = self.eval_combination(alpha, t);
                if v < 0.0 {
                    clamped.push(j);
                    0.0
                } else {
                    v
                }
            })
            .collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        if !(mean > 0.0) {
            return Err(Error::NonPositiveMean);
        }
        if !clamped.is_empty() {
            log::debug!("clamped {} negative synthesized values", clamped.len());
        }
        let curve = Curve::new(grid.clone(), &raw)?;
        Ok(Synthesis { curve, clamped })
    }

    pub fn synthesize(&self, alpha: &[f64], grid: &Arc<Grid>) -> Result<Curve> {
        self.synthesize_detailed(alpha, grid).map(|s| s.curve)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    use crate::SeededRng;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for n in 1..8 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn piecewise_constant_basis() {
        let b = SplineBasis::new(1, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(b.len(), 2);
        assert!((b.gram() - DMatrix::from_diagonal_element(2, 2, 0.5)).amax() < 1e-15);
        assert_eq!(b.eval(0.25), vec![1.0, 0.0]);
        assert_eq!(b.eval(0.75), vec![0.0, 1.0]);
        assert_eq!(b.eval(1.0), vec![0.0, 1.0]);
    }

    #[test]
    fn default_basis_has_eight_functions() {
        let b = SplineBasis::from_config(&BasisConfig::default()).unwrap();
        assert_eq!(b.order(), 5);
        assert_eq!(b.len(), 8);
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(SplineBasis::new(0, vec![0.0, 1.0]).is_err());
        assert!(SplineBasis::new(2, vec![0.0, 0.5, 1.0, 1.0]).is_err());
        assert!(SplineBasis::new(2, vec![0.0, 0.0, 0.7, 0.5, 1.0, 1.0]).is_err());
        assert!(SplineBasis::new(2, vec![0.0, 0.0, 0.5, 0.5, 0.5, 1.0, 1.0]).is_err());
        assert!(SplineBasis::new(2, vec![0.0, 0.0, 0.5, 1.0, 1.2]).is_err());
    }

    #[test]
    fn partition_of_unity_and_nonnegativity() {
        let b = SplineBasis::from_config(&BasisConfig::default()).unwrap();
        let mut rng = SeededRng::seed_from_u64(5);
        for _ in 0..100 {
            let t: f64 = rng.random();
            let v = b.eval(t);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            assert!(v.iter().all(|x| *x >= 0.0));
        }
        assert!((b.eval(1.0).iter().sum::<f64>() - 1.0).abs() < 1e-13);
        assert!((b.eval(0.0).iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn gram_is_spd() {
        let b = SplineBasis::from_config(&BasisConfig::default()).unwrap();
        let eig = b.gram().clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        assert!(eig.eigenvalues.min() > 1e-12 * max);
        assert!((b.gram() - b.gram().transpose()).amax() == 0.0);
    }

    #[test]
    fn projection_reproduces_span_and_constants() {
        let b = SplineBasis::from_config(&BasisConfig::default()).unwrap();
        let c = b.project_fn(|_| 2.5).unwrap();
        assert!(c.as_slice().iter().all(|a| (a - 2.5).abs() < 1e-12));

        let mut rng = SeededRng::seed_from_u64(9);
        let beta: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..2.0)).collect();
        let alpha = b.project_fn(|t| b.eval_combination(&beta, t)).unwrap();
        for (a, e) in alpha.as_slice().iter().zip(&beta) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_is_orthogonal_to_basis() {
        let b = SplineBasis::from_config(&BasisConfig::default()).unwrap();
        let grid = Grid::uniform(21).unwrap();
        let values: Vec<f64> = grid.knots().iter().map(|t| 1.0 + (9.0 * t).cos() * 0.4 + t).collect();
        let curve = Curve::new(Arc::new(grid), &values).unwrap();
        let interp = curve.interpolate().unwrap();
        let alpha = b.project_interpolant(&interp).unwrap();
        let resid = |t: f64| interp.eval(t) - b.eval_combination(alpha.as_slice(), t);
        let m = b.moments(resid, interp.breakpoints(), b.order() + 2);
        let norm = b.moments(|t| interp.eval(t).powi(2), interp.breakpoints(), 7).sum().sqrt();
        assert!(m.amax() <= 1e-8 * norm);
    }

    #[test]
    fn synthesis_normalizes_and_ignores_scale() {
        let b = SplineBasis::from_config(&BasisConfig::default()).unwrap();
        let grid = Arc::new(Grid::uniform(18).unwrap());
        let ones = b.synthesize(&[1.0; 8], &grid).unwrap();
        assert!(ones.values().iter().all(|v| (v - 1.0).abs() < 1e-13));
        let alpha = [0.5, 0.9, 1.2, 1.0, 1.1, 1.3, 0.8, 0.6];
        let scaled: Vec<f64> = alpha.iter().map(|a| 3.7 * a).collect();
        let x = b.synthesize(&alpha, &grid).unwrap();
        let y = b.synthesize(&scaled, &grid).unwrap();
        for (p, q) in x.values().iter().zip(y.values()) {
            assert!((p - q).abs() < 1e-13);
        }
        assert!(matches!(b.synthesize(&[-1.0; 8], &grid), Err(Error::NonPositiveMean)));
        let s = b.synthesize_detailed(&[-0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0], &grid).unwrap();
        assert_eq!(s.clamped, vec![0]);
    }

    #[test]
    fn synthesis_round_trip() {
        let b = SplineBasis::from_config(&BasisConfig::default()).unwrap();
        let grid = Arc::new(Grid::uniform(101).unwrap());
        let alpha = [0.6, 0.8, 1.0, 1.1, 1.15, 1.1, 0.95, 0.8];
        let curve = b.synthesize(&alpha, &grid).unwrap();
        let raw_mean = grid
            .knots()
            .iter()
            .map(|&t| b.eval_combination(&alpha, t))
            .sum::<f64>()
            / 101.0;
        let back = b.project_curve(&curve).unwrap();
        for (a, e) in back.as_slice().iter().zip(&alpha) {
            assert!((a - e / raw_mean).abs() < 1e-2);
        }
    }
}
