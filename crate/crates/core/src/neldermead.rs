//! Box-constrained Nelder-Mead used for hyperparameter searches.

#[derive(Debug, Clone)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

impl NelderMead {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self {
            max_evals: 200 * lower.len().max(1),
            f_tol: 1e-8,
            lower,
            upper,
        }
    }

    pub fn max_evals(mut self, n: usize) -> Self {
        self.max_evals = n;
        self
    }

    pub fn f_tol(mut self, tol: f64) -> Self {
        self.f_tol = tol;
        self
    }

    fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Minimizes `f` from `start`. Non-finite values count as +inf. The
    /// returned point is never worse than `start`.
    pub fn minimize(&self, mut f: impl FnMut(&[f64]) -> f64, start: &[f64], step: &[f64]) -> Minimum {
        let n = start.len();
        let mut evals = 0;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };

        let mut x0 = start.to_vec();
        self.clamp(&mut x0);
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let f0 = eval(&x0, &mut evals);
        simplex.push((x0.clone(), f0));
        for i in 0..n {
            let mut x = x0.clone();
            x[i] += step[i];
            self.clamp(&mut x);
            if x[i] == x0[i] {
                x[i] -= step[i];
                self.clamp(&mut x);
            }
            let fx = eval(&x, &mut evals);
            simplex.push((x, fx));
        }

        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        let point = |c: &[f64], d: &[f64], t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = c.iter().zip(d).map(|(c, d)| c + t * (d - c)).collect();
            self.clamp(&mut p);
            p
        };
        while evals < self.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[n].1;
            if worst.is_finite() && (worst - best).abs() <= self.f_tol * (1.0 + best.abs()) {
                break;
            }
            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v / n as f64;
                }
            }
            let worst_x = simplex[n].0.clone();
            let xr = point(&centroid, &worst_x, -alpha);
            let fr = eval(&xr, &mut evals);
            if fr < simplex[0].1 {
                let xe = point(&centroid, &worst_x, -gamma);
                let fe = eval(&xe, &mut evals);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[n].1 {
                    let xc = point(&centroid, &xr, rho);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                } else {
                    let xc = point(&centroid, &worst_x, rho);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                };
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let best_x = simplex[0].0.clone();
                    for entry in simplex.iter_mut().skip(1) {
                        let xs = point(&best_x, &entry.0, sigma);
                        let fs = eval(&xs, &mut evals);
                        *entry = (xs, fs);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, value) = simplex.swap_remove(0);
        Minimum { x, value, evals }
    }
}
