//! Discretized positive curves on a shared grid of knots.
//!
//! Every curve is stored normalized to component-mean one, which places it on
//! the mean-one hyperplane that the rest of the crate works on.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Deviation from mean one below which a curve is taken as already normalized.
const MEAN_ONE_TOL: f64 = 1e-12;
/// Deviation above which renormalization is reported in the log.
const RENORMALIZE_NOTE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid {
    knots: Vec<f64>,
}

impl Grid {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::BadGrid(format!("need at least 2 knots, got {}", knots.len())));
        }
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::BadGrid("non-finite knot".into()));
        }
        if knots[0] < 0.0 || knots[knots.len() - 1] > 1.0 {
            return Err(Error::BadGrid("knots must lie in [0, 1]".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::BadGrid("knots must be strictly increasing".into()));
        }
        Ok(Self { knots })
    }

    /// `d` equispaced knots covering [0, 1].
    pub fn uniform(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::BadGrid(format!("need at least 2 knots, got {d}")));
        }
        let last = (d - 1) as f64;
        Self::new((0..d).map(|j| j as f64 / last).collect())
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = Error;

    fn try_from(knots: Vec<f64>) -> Result<Self> {
        Grid::new(knots)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(grid: Grid) -> Self {
        grid.knots
    }
}

/// Divides `values` by their mean so that the result averages to one.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeValue { index, value });
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::AllZero);
    }
    if (mean - 1.0).abs() <= MEAN_ONE_TOL {
        return Ok(values.to_vec());
    }
    if (mean - 1.0).abs() > RENORMALIZE_NOTE_TOL {
        log::debug!("renormalizing curve with mean {mean}");
    }
    Ok(values.iter().map(|v| v / mean).collect())
}

/// A nonnegative curve with component mean one.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Curve {
    /// Builds a curve, normalizing `values` to mean one.
    pub fn new(grid: Arc<Grid>, values: &[f64]) -> Result<Self> {
        check_dim(grid.len(), values.len())?;
        let values = normalize(values)?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Monotonicity-preserving C1 interpolant through the knot values.
    pub fn interpolate(&self) -> Result<MonotoneCubic> {
        MonotoneCubic::new(self.grid.knots(), &self.values)
    }
}

/// Historical curves sharing one grid, with optional observed outputs.
#[derive(Debug, Clone)]
pub struct CurveSet {
    grid: Arc<Grid>,
    curves: Vec<Curve>,
    outputs: Option<Vec<f64>>,
}

impl CurveSet {
    pub fn new(grid: Arc<Grid>, curves: Vec<Curve>) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::EmptySet);
        }
        for c in &curves {
            if **c.grid() != *grid {
                return Err(Error::BadGrid("curve set members must share one grid".into()));
            }
        }
        Ok(Self {
            grid,
            curves,
            outputs: None,
        })
    }

    /// Normalizes each row of `rows` into a curve on `grid`.
    pub fn from_rows(grid: Arc<Grid>, rows: &[Vec<f64>]) -> Result<Self> {
        let curves = rows
            .iter()
            .map(|r| Curve::new(grid.clone(), r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, curves)
    }

    pub fn with_outputs(mut self, outputs: Vec<f64>) -> Result<Self> {
        check_dim(self.curves.len(), outputs.len())?;
        self.outputs = Some(outputs);
        Ok(self)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn outputs(&self) -> Option<&[f64]> {
        self.outputs.as_deref()
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.grid.len()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.curves.iter().map(|c| c.values.clone()).collect()
    }
}

/// How the first CSV row is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeaderMode {
    /// First row is a header when it is strictly increasing from 0 to 1.
    #[default]
    Auto,
    Present,
    Absent,
}

fn looks_like_knots(row: &[f64]) -> bool {
    row.len() >= 2
        && row[0] == 0.0
        && row[row.len() - 1] == 1.0
        && row.windows(2).all(|w| w[1] > w[0])
}

/// Reads one curve per row; an optional header row carries the grid knots.
pub fn load_curveset(path: impl AsRef<Path>, header: HeaderMode) -> Result<CurveSet> {
    let file = std::fs::File::open(path.as_ref())?;
    read_curveset(file, header)
}

pub fn read_curveset<R: std::io::Read>(reader: R, header: HeaderMode) -> Result<CurveSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    msg: format!("`{f}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some((_, first)) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Shape {
                    line,
                    expected: first.len(),
                    found: row.len(),
                });
            }
        }
        rows.push((line, row));
    }
    if rows.is_empty() {
        return Err(Error::EmptySet);
    }

    let has_header = match header {
        HeaderMode::Present => true,
        HeaderMode::Absent => false,
        HeaderMode::Auto => rows.len() > 1 && looks_like_knots(&rows[0].1),
    };
    let grid = if has_header {
        let (_, knots) = rows.remove(0);
        Grid::new(knots)?
    } else {
        Grid::uniform(rows[0].1.len())?
    };
    let grid = Arc::new(grid);

    let mut curves = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Value {
                line,
                msg: format!("entry {v} is NaN, infinite or negative"),
            });
        }
        let curve = Curve::new(grid.clone(), &row).map_err(|e| Error::Value {
            line,
            msg: e.to_string(),
        })?;
        curves.push(curve);
    }
    CurveSet::new(grid, curves)
}

/// Writes a curve set as CSV with the knots as header row.
pub fn write_curveset<W: std::io::Write>(set: &CurveSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = set.grid.knots().iter().map(|t| t.to_string()).collect();
    w.write_record(&header).map_err(csv_io)?;
    for c in &set.curves {
        let row: Vec<String> = c.values.iter().map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Piecewise cubic Hermite interpolant with Fritsch-Carlson slopes.
///
/// Outside the knot range the interpolant is extended by the end values.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(knots: &[f64], values: &[f64]) -> Result<Self> {
        check_dim(knots.len(), values.len())?;
        let n = knots.len();
        if n < 3 {
            return Err(Error::TooFewKnots(n));
        }
        let secants: Vec<f64> = (0..n - 1)
            .map(|k| (values[k + 1] - values[k]) / (knots[k + 1] - knots[k]))
            .collect();

        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for k in 1..n - 1 {
            slopes[k] = if secants[k - 1] * secants[k] > 0.0 {
                0.5 * (secants[k - 1] + secants[k])
            } else {
                0.0
            };
        }
        for k in 0..n - 1 {
            if secants[k] == 0.0 {
                slopes[k] = 0.0;
                slopes[k + 1] = 0.0;
                continue;
            }
            let a = slopes[k] / secants[k];
            let b = slopes[k + 1] / secants[k];
            let r2 = a * a + b * b;
            if r2 > 9.0 {
                let tau = 3.0 / r2.sqrt();
                slopes[k] = tau * a * secants[k];
                slopes[k + 1] = tau * b * secants[k];
            }
        }
        Ok(Self {
            knots: knots.to_vec(),
            values: values.to_vec(),
            slopes,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.knots.len();
        if t <= self.knots[0] {
            return self.values[0];
        }
        if t >= self.knots[n - 1] {
            return self.values[n - 1];
        }
        let k = self.knots.partition_point(|&s| s <= t) - 1;
        let h = self.knots[k + 1] - self.knots[k];
        let s = (t - self.knots[k]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.values[k]
            + h10 * h * self.slopes[k]
            + h01 * self.values[k + 1]
            + h11 * h * self.slopes[k + 1]
    }

    /// Points where the interpolant is not a single polynomial.
    pub fn breakpoints(&self) -> &[f64] {
        &self.knots
    }
}
