//! Analytic objectives and synthetic curve families with known optima.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::curves::{Curve, CurveSet, Grid};
use crate::error::{check_dim, Result};
use crate::SeededRng;

/// `-r - sin(3 r)^2` with `r = |x - anchor|_2`. Maximal (zero) at the anchor.
#[derive(Debug, Clone)]
pub struct DistanceSine {
    anchor: Curve,
}

impl DistanceSine {
    pub fn new(anchor: Curve) -> Self {
        Self { anchor }
    }

    pub fn anchor(&self) -> &Curve {
        &self.anchor
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.anchor.len(), x.len())?;
        let r = x
            .iter()
            .zip(self.anchor.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Ok(-r - (3.0 * r).sin().powi(2))
    }

    /// Value plus Gaussian noise of standard deviation `noise_sd`.
    pub fn eval(&self, x: &Curve, noise_sd: f64, rng: &mut SeededRng) -> Result<f64> {
        let v = self.value(x.values())?;
        if noise_sd > 0.0 {
            Ok(v + noise_sd * rng.sample::<f64, _>(StandardNormal))
        } else {
            Ok(v)
        }
    }
}

/// Curves `(1 + cos(a t) + b t + exp(c t)) / C` normalized on a grid.
#[derive(Debug, Clone)]
pub struct AbcFamily {
    grid: Arc<Grid>,
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub c: (f64, f64),
}

impl Default for AbcFamily {
    /// a in [4, 12], b in [2, 5], c in [0.8, 1.2] on 21 equispaced knots.
    fn default() -> Self {
        Self {
            grid: Arc::new(Grid::uniform(21).expect("valid grid")),
            a: (4.0, 12.0),
            b: (2.0, 5.0),
            c: (0.8, 1.2),
        }
    }
}

impl AbcFamily {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn raw(&self, a: f64, b: f64, c: f64) -> Vec<f64> {
        self.grid
            .knots()
            .iter()
            .map(|&t| 1.0 + (a * t).cos() + b * t + (c * t).exp())
            .collect()
    }

    pub fn curve(&self, a: f64, b: f64, c: f64) -> Result<Curve> {
        Curve::new(self.grid.clone(), &self.raw(a, b, c))
    }

    /// Parameters drawn uniformly over the box.
    pub fn sample_params(&self, rng: &mut SeededRng) -> (f64, f64, f64) {
        (
            rng.random_range(self.a.0..=self.a.1),
            rng.random_range(self.b.0..=self.b.1),
            rng.random_range(self.c.0..=self.c.1),
        )
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Result<Curve> {
        let (a, b, c) = self.sample_params(rng);
        self.curve(a, b, c)
    }

    pub fn history(&self, n: usize, rng: &mut SeededRng) -> Result<CurveSet> {
        let curves = (0..n).map(|_| self.sample(rng)).collect::<Result<Vec<_>>>()?;
        CurveSet::new(self.grid.clone(), curves)
    }
}

/// `n` curves of the default family with uniformly drawn parameters.
pub fn gen_abc_history(n: usize, rng: &mut SeededRng) -> Result<CurveSet> {
    AbcFamily::default().history(n, rng)
}

/// The family member at (12, 6, 1), just outside the sampled box.
pub fn make_abc_anchor() -> Curve {
    AbcFamily::default().curve(12.0, 6.0, 1.0).expect("positive curve")
}

/// Best value over `n_samples` draws from `sampler`, with the arg max.
pub fn brute_force_max<T>(
    n_samples: usize,
    rng: &mut SeededRng,
    mut sampler: impl FnMut(&mut SeededRng) -> T,
    mut objective: impl FnMut(&T) -> f64,
) -> (f64, T) {
    assert!(n_samples >= 1);
    let first = sampler(rng);
    let mut best = (objective(&first), first);
    for _ in 1..n_samples {
        let x = sampler(rng);
        let v = objective(&x);
        if v > best.0 {
            best = (v, x);
        }
    }
    best
}

/// Brute-force maximum of the distance-sine objective anchored at
/// [`make_abc_anchor`] over uniformly sampled family members.
pub fn abc_brute_force(n_samples: usize, rng: &mut SeededRng) -> (f64, (f64, f64, f64)) {
    let family = AbcFamily::default();
    let anchor = make_abc_anchor();
    let obj = DistanceSine::new(anchor);
    let mut buf = vec![0.0; family.grid().len()];
    brute_force_max(
        n_samples,
        rng,
        |r| family.sample_params(r),
        |&(a, b, c)| {
            let raw = family.raw(a, b, c);
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            for (slot, v) in buf.iter_mut().zip(&raw) {
                *slot = v / mean;
            }
            obj.value(&buf).expect("matching grid")
        },
    )
}
