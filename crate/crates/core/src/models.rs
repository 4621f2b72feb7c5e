//! Descriptor ↔ shot-parameter models.
//!
//! D2P maps a descriptor vector to shot parameters plus a one-hot shot type;
//! P2D goes the other way. Both are per-output Lasso fits in a [-1, 1]
//! normalized space. A Gaussian prior over descriptor vectors fills in
//! descriptors the user left unspecified.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::shot::{ClampRanges, ShotParam, ShotParameters, ShotType};
use crate::stats::linspace;
use crate::{Error, Result};

/// 6 shot parameters followed by the 5-way shot-type one-hot block.
pub const FEATURE_DIM: usize = 11;
pub const ONE_HOT_START: usize = 6;

/// Shot parameters and one-hot shot type as one feature vector.
pub fn encode_features(shot: &ShotParameters, shot_type: ShotType) -> [f64; FEATURE_DIM] {
    let mut f = [0.0; FEATURE_DIM];
    f[..6].copy_from_slice(&shot.to_array());
    f[ONE_HOT_START + shot_type.index()] = 1.0;
    f
}

/// Argmax over the one-hot block. Ties go to the lowest index and are
/// reported in the second element.
pub fn decode_shot_type(block: &[f64]) -> Result<(ShotType, bool)> {
    if block.len() != ShotType::ALL.len() {
        return Err(Error::DimensionMismatch {
            expected: ShotType::ALL.len(),
            got: block.len(),
        });
    }
    if block.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("shot-type block".into()));
    }
    let max = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = block.iter().position(|&v| v == max).expect("nonempty block");
    let tied = block.iter().filter(|&&v| v == max).count() > 1;
    Ok((ShotType::from_index(first).expect("index in range"), tied))
}

/// Per-dimension training range for the map `x ↦ 2(x − min)/(max − min) − 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl NormalizationSpec {
    pub fn new(mins: Vec<f64>, maxs: Vec<f64>) -> Result<Self> {
        if mins.len() != maxs.len() {
            return Err(Error::DimensionMismatch {
                expected: mins.len(),
                got: maxs.len(),
            });
        }
        for (i, (lo, hi)) in mins.iter().zip(&maxs).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NonFinite(format!("normalization range {i}")));
            }
            if hi <= lo {
                return Err(Error::ConstantDimension(i));
            }
        }
        Ok(NormalizationSpec { mins, maxs })
    }

    /// Column ranges of `data`. Dimensions listed in `fixed` take the given
    /// range instead, which keeps one-hot columns on [0, 1] even when a
    /// category is absent from the data.
    pub fn fit(data: &DMatrix<f64>, fixed: &[(usize, (f64, f64))]) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::invalid("normalization needs at least two rows"));
        }
        let mut mins = Vec::with_capacity(data.ncols());
        let mut maxs = Vec::with_capacity(data.ncols());
        for j in 0..data.ncols() {
            if let Some(&(_, (lo, hi))) = fixed.iter().find(|(k, _)| *k == j) {
                mins.push(lo);
                maxs.push(hi);
                continue;
            }
            let col = data.column(j);
            mins.push(col.iter().copied().fold(f64::INFINITY, f64::min));
            maxs.push(col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        NormalizationSpec::new(mins, maxs)
    }

    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    /// Normalized values and whether any input fell outside the training range.
    pub fn normalize(&self, x: &[f64]) -> Result<(Vec<f64>, bool)> {
        self.check(x)?;
        let mut outside = false;
        let v = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| {
                outside |= xi < self.mins[i] || xi > self.maxs[i];
                2.0 * (xi - self.mins[i]) / (self.maxs[i] - self.mins[i]) - 1.0
            })
            .collect();
        Ok((v, outside))
    }

    pub fn denormalize(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z)?;
        Ok(z.iter()
            .enumerate()
            .map(|(i, &zi)| (zi + 1.0) * 0.5 * (self.maxs[i] - self.mins[i]) + self.mins[i])
            .collect())
    }

    pub fn normalize_rows(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: data.ncols(),
            });
        }
        Ok(DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| {
            2.0 * (data[(i, j)] - self.mins[j]) / (self.maxs[j] - self.mins[j]) - 1.0
        }))
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("normalization input".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    /// Converged once no standardized coefficient moves more than this in a sweep.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

/// Multi-output Lasso solution on the original feature scale.
#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    /// `outputs × inputs`
    pub coefficients: DMatrix<f64>,
    pub intercepts: Vec<f64>,
    pub lambda: f64,
    /// Objective after each coordinate sweep, per output.
    pub objective_history: Vec<Vec<f64>>,
    pub converged: bool,
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

struct Standardized {
    x: DMatrix<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

/// Centers and scales each column to unit (1/n) variance. Constant columns
/// get scale 0 and are left out of the fit.
fn standardize(x: &DMatrix<f64>) -> Standardized {
    let n = x.nrows() as f64;
    let mut xs = x.clone();
    let mut means = Vec::with_capacity(x.ncols());
    let mut scales = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let mut col = xs.column_mut(j);
        let m = col.sum() / n;
        col.iter_mut().for_each(|v| *v -= m);
        let sd = (col.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        if sd > 0.0 {
            col.iter_mut().for_each(|v| *v /= sd);
        }
        means.push(m);
        scales.push(sd);
    }
    Standardized { x: xs, means, scales }
}

fn check_design(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    if x.nrows() < 2 {
        return Err(Error::invalid("lasso needs at least two samples"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lasso data".into()));
    }
    Ok(())
}

fn centered(y: &DMatrix<f64>, k: usize) -> DVector<f64> {
    let yk = y.column(k);
    let ym = yk.sum() / y.nrows() as f64;
    yk.map(|v| v - ym)
}

/// Smallest penalty at which every coefficient is zero, over all outputs.
pub fn lambda_max(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_design(x, y)?;
    let s = standardize(x);
    let n = x.nrows() as f64;
    let mut best = 0.0f64;
    for k in 0..y.ncols() {
        let yc = centered(y, k);
        for j in 0..x.ncols() {
            best = best.max((s.x.column(j).dot(&yc) / n).abs());
        }
    }
    Ok(best)
}

/// Cyclic coordinate descent on `(1/2n)‖y − Xβ‖² + λ‖β‖₁`, independently
/// per output column, with standardized columns and an unpenalized
/// intercept.
pub fn lasso_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64, options: &LassoOptions) -> Result<LassoFit> {
    check_design(x, y)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let (n, p, q) = (x.nrows(), x.ncols(), y.ncols());
    let nf = n as f64;
    let s = standardize(x);
    let active: Vec<usize> = (0..p).filter(|&j| s.scales[j] > 0.0).collect();

    let mut coefficients = DMatrix::zeros(q, p);
    let mut intercepts = Vec::with_capacity(q);
    let mut histories = Vec::with_capacity(q);
    let mut all_converged = true;

    for k in 0..q {
        let ym = y.column(k).sum() / nf;
        let yc = centered(y, k);
        let mut beta = vec![0.0; p];
        let mut resid = yc.clone();
        let objective = |resid: &DVector<f64>, beta: &[f64]| {
            resid.norm_squared() / (2.0 * nf) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
        };
        let mut history = vec![objective(&resid, &beta)];
        let mut converged = false;
        for _ in 0..options.max_iter {
            let mut max_change = 0.0f64;
            for &j in &active {
                let col = s.x.column(j);
                let rho = col.dot(&resid) / nf + beta[j];
                let new = soft_threshold(rho, lambda);
                let change = new - beta[j];
                if change != 0.0 {
                    resid.axpy(-change, &col, 1.0);
                    beta[j] = new;
                }
                max_change = max_change.max(change.abs());
            }
            // recompute from scratch so rounding does not accumulate
            resid = yc.clone();
            for &j in &active {
                if beta[j] != 0.0 {
                    resid.axpy(-beta[j], &s.x.column(j), 1.0);
                }
            }
            let obj = objective(&resid, &beta);
            let prev = *history.last().expect("history starts nonempty");
            debug_assert!(obj <= prev * (1.0 + (n + p) as f64 * f64::EPSILON), "lasso objective rose: {prev} -> {obj}");
            history.push(obj);
            if max_change < options.tol {
                converged = true;
                break;
            }
        }
        all_converged &= converged;
        let mut intercept = ym;
        for &j in &active {
            let b = beta[j] / s.scales[j];
            coefficients[(k, j)] = b;
            intercept -= b * s.means[j];
        }
        intercepts.push(intercept);
        histories.push(history);
    }
    Ok(LassoFit {
        coefficients,
        intercepts,
        lambda,
        objective_history: histories,
        converged: all_converged,
    })
}

impl LassoFit {
    pub fn predict_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * self.coefficients.transpose();
        for mut row in out.row_iter_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v += self.intercepts[k];
            }
        }
        out
    }
}

/// Coefficient of determination per output column.
pub fn r_squared_per_output(pred: &DMatrix<f64>, actual: &DMatrix<f64>) -> Result<Vec<f64>> {
    if pred.shape() != actual.shape() {
        return Err(Error::DimensionMismatch {
            expected: actual.len(),
            got: pred.len(),
        });
    }
    let n = actual.nrows() as f64;
    (0..actual.ncols())
        .map(|k| {
            let a = actual.column(k);
            let m = a.sum() / n;
            let ss_tot: f64 = a.iter().map(|v| (v - m).powi(2)).sum();
            if ss_tot == 0.0 {
                return Err(Error::ConstantColumn(format!("output {k}")));
            }
            let ss_res: f64 = a.iter().zip(pred.column(k).iter()).map(|(y, f)| (y - f).powi(2)).sum();
            Ok(1.0 - ss_res / ss_tot)
        })
        .collect()
}

/// Mean of the per-output R² values.
pub fn r_squared(pred: &DMatrix<f64>, actual: &DMatrix<f64>) -> Result<f64> {
    let r = r_squared_per_output(pred, actual)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// `count` log-spaced penalties from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    linspace(lo.log10(), hi.log10(), count).into_iter().map(|e| 10f64.powf(e)).collect()
}

/// The default penalty grid: 1e-4 … 1, three points per decade.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-4, 1.0, 13)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub lambda: f64,
    /// Mean held-out squared error in normalized output space.
    pub mse: f64,
}

/// Seeded k-fold split of `n` rows: fold index per row.
pub fn kfold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

fn take_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// k-fold cross-validated penalty choice. Returns the selected λ (smallest
/// error; ties go to the larger λ) and the score for every grid point.
pub fn cv_select_lambda(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    grid: &[f64],
    folds: usize,
    seed: u64,
    options: &LassoOptions,
) -> Result<(f64, Vec<CvScore>)> {
    check_design(x, y)?;
    if grid.is_empty() {
        return Err(Error::Empty("lambda grid".into()));
    }
    if folds < 2 || folds > x.nrows() {
        return Err(Error::invalid(format!("cannot split {} rows into {folds} folds", x.nrows())));
    }
    let assignment = kfold_assignment(x.nrows(), folds, seed);
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut se = 0.0;
        let mut count = 0usize;
        for f in 0..folds {
            let train: Vec<usize> = (0..x.nrows()).filter(|&i| assignment[i] != f).collect();
            let test: Vec<usize> = (0..x.nrows()).filter(|&i| assignment[i] == f).collect();
            let fit = lasso_fit(&take_rows(x, &train), &take_rows(y, &train), lambda, options)?;
            let pred = fit.predict_rows(&take_rows(x, &test));
            let actual = take_rows(y, &test);
            se += (pred - actual).norm_squared();
            count += test.len() * y.ncols();
        }
        scores.push(CvScore {
            lambda,
            mse: se / count as f64,
        });
    }
    let best = scores
        .iter()
        .fold(None::<CvScore>, |best, s| match best {
            Some(b) if b.mse < s.mse || (b.mse == s.mse && b.lambda >= s.lambda) => Some(b),
            _ => Some(*s),
        })
        .expect("nonempty grid");
    Ok((best.lambda, scores))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    D2P,
    P2D,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::D2P => "D2P",
            Direction::P2D => "P2D",
        }
    }
}

/// Linear map in normalized coordinates: `ŷ = W x̂ + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub direction: Direction,
    /// `outputs × inputs`
    pub coefficients: DMatrix<f64>,
    pub intercepts: Vec<f64>,
    pub lambda: f64,
    pub norm_in: NormalizationSpec,
    pub norm_out: NormalizationSpec,
}

impl LinearModel {
    pub fn n_inputs(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.coefficients.nrows()
    }

    /// Prediction in original units.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (z, _) = self.norm_in.normalize(x)?;
        let zv = DVector::from_vec(z);
        let out = &self.coefficients * zv;
        let y: Vec<f64> = out.iter().zip(&self.intercepts).map(|(v, b)| v + b).collect();
        self.norm_out.denormalize(&y)
    }

    pub fn predict_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(x.nrows(), self.n_outputs());
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            for (k, v) in self.predict(&row)?.into_iter().enumerate() {
                out[(i, k)] = v;
            }
        }
        Ok(out)
    }
}

/// Ranges pinned for the one-hot block, given the column offset where it starts.
pub fn one_hot_ranges(offset: usize) -> Vec<(usize, (f64, f64))> {
    (0..ShotType::ALL.len()).map(|i| (offset + i, (0.0, 1.0))).collect()
}

/// Fits normalization on the data, then a Lasso in normalized space.
pub fn train_linear(
    direction: Direction,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    options: &LassoOptions,
) -> Result<LinearModel> {
    check_direction_shape(direction, x.ncols(), y.ncols())?;
    let (fixed_in, fixed_out) = fixed_ranges(direction);
    let norm_in = NormalizationSpec::fit(x, &fixed_in)?;
    let norm_out = NormalizationSpec::fit(y, &fixed_out)?;
    let fit = lasso_fit(&norm_in.normalize_rows(x)?, &norm_out.normalize_rows(y)?, lambda, options)?;
    Ok(LinearModel {
        direction,
        coefficients: fit.coefficients,
        intercepts: fit.intercepts,
        lambda,
        norm_in,
        norm_out,
    })
}

/// Cross-validates λ in normalized space, then trains on all rows.
pub fn train_linear_cv(
    direction: Direction,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    grid: &[f64],
    folds: usize,
    seed: u64,
    options: &LassoOptions,
) -> Result<(LinearModel, Vec<CvScore>)> {
    check_direction_shape(direction, x.ncols(), y.ncols())?;
    let (fixed_in, fixed_out) = fixed_ranges(direction);
    let norm_in = NormalizationSpec::fit(x, &fixed_in)?;
    let norm_out = NormalizationSpec::fit(y, &fixed_out)?;
    let (lambda, scores) =
        cv_select_lambda(&norm_in.normalize_rows(x)?, &norm_out.normalize_rows(y)?, grid, folds, seed, options)?;
    Ok((train_linear(direction, x, y, lambda, options)?, scores))
}

fn fixed_ranges(direction: Direction) -> (Vec<(usize, (f64, f64))>, Vec<(usize, (f64, f64))>) {
    match direction {
        Direction::D2P => (vec![], one_hot_ranges(ONE_HOT_START)),
        Direction::P2D => (one_hot_ranges(ONE_HOT_START), vec![]),
    }
}

fn check_direction_shape(direction: Direction, inputs: usize, outputs: usize) -> Result<()> {
    let features = match direction {
        Direction::D2P => outputs,
        Direction::P2D => inputs,
    };
    if features != FEATURE_DIM {
        return Err(Error::DimensionMismatch {
            expected: FEATURE_DIM,
            got: features,
        });
    }
    Ok(())
}

/// Multivariate normal over descriptor vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    /// Set when the covariance needed an eigenvalue floor to stay positive definite.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub floored: bool,
}

pub const EIGEN_FLOOR: f64 = 1e-10;

impl GaussianPrior {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn std_dev(&self, i: usize) -> f64 {
        self.sigma[i][i].sqrt()
    }

    pub fn std_devs(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.std_dev(i)).collect()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let k = self.dim();
        DMatrix::from_fn(k, k, |i, j| self.sigma[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.dim();
        if k == 0 {
            return Err(Error::Empty("prior".into()));
        }
        if self.sigma.len() != k || self.sigma.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: self.sigma.len(),
            });
        }
        if self.mu.iter().chain(self.sigma.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prior".into()));
        }
        Ok(())
    }
}

/// Sample mean and covariance (denominator n − 1) of the rows of `scores`.
pub fn fit_gaussian_prior(scores: &DMatrix<f64>) -> Result<GaussianPrior> {
    let (n, k) = scores.shape();
    if k == 0 {
        return Err(Error::Empty("descriptor columns".into()));
    }
    if n <= k {
        return Err(Error::invalid(format!("need more than {k} rows to fit a {k}-dimensional prior, got {n}")));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prior data".into()));
    }
    let mu: Vec<f64> = (0..k).map(|j| scores.column(j).sum() / n as f64).collect();
    let centered = DMatrix::from_fn(n, k, |i, j| scores[(i, j)] - mu[j]);
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(cov.clone());
    let floored = eig.eigenvalues.iter().any(|&l| l < EIGEN_FLOOR);
    if floored {
        let lam = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR)));
        cov = &eig.eigenvectors * lam * eig.eigenvectors.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
    }
    Ok(GaussianPrior {
        mu,
        sigma: (0..k).map(|i| (0..k).map(|j| cov[(i, j)]).collect()).collect(),
        floored,
    })
}

/// Conditional mean of the unspecified descriptors given the specified ones:
/// `d₁ = μ₁ + Σ₁₂ Σ₂₂⁻¹ (d₂ − μ₂)`. Specified entries pass through unchanged.
pub fn complete_descriptors(prior: &GaussianPrior, known: &[(usize, f64)]) -> Result<Vec<f64>> {
    prior.validate()?;
    let k = prior.dim();
    let mut seen = vec![false; k];
    for &(i, v) in known {
        if i >= k {
            return Err(Error::invalid(format!("descriptor index {i} out of range for {k} descriptors")));
        }
        if seen[i] {
            return Err(Error::invalid(format!("descriptor {i} specified twice")));
        }
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("descriptor {i}")));
        }
        seen[i] = true;
    }
    let mut out = prior.mu.clone();
    for &(i, v) in known {
        out[i] = v;
    }
    if known.is_empty() || known.len() == k {
        return Ok(out);
    }
    let obs: Vec<usize> = {
        let mut o: Vec<usize> = known.iter().map(|&(i, _)| i).collect();
        o.sort_unstable();
        o
    };
    let free: Vec<usize> = (0..k).filter(|i| !seen[*i]).collect();
    let s22 = DMatrix::from_fn(obs.len(), obs.len(), |a, b| prior.sigma[obs[a]][obs[b]]);
    let chol = Cholesky::new(s22).ok_or_else(|| Error::SingularBlock(obs.clone()))?;
    let diff = DVector::from_iterator(obs.len(), obs.iter().map(|&i| out[i] - prior.mu[i]));
    let w = chol.solve(&diff);
    for &f in &free {
        let adj: f64 = obs.iter().enumerate().map(|(a, &i)| prior.sigma[f][i] * w[a]).sum();
        out[f] = prior.mu[f] + adj;
    }
    Ok(out)
}

/// `n` descriptor vectors sweeping descriptor `index` linearly over
/// μ ± 2σ, with the rest conditionally completed.
pub fn expression_sweep(prior: &GaussianPrior, index: usize, n: usize) -> Result<Vec<Vec<f64>>> {
    prior.validate()?;
    if n < 2 {
        return Err(Error::invalid("an expression sweep needs at least two points"));
    }
    if index >= prior.dim() {
        return Err(Error::invalid(format!("descriptor index {index} out of range")));
    }
    let (m, s) = (prior.mu[index], prior.std_dev(index));
    linspace(m - 2.0 * s, m + 2.0 * s, n)
        .into_iter()
        .map(|v| complete_descriptors(prior, &[(index, v)]))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShotFlags {
    pub clamped: bool,
    pub tie_broken: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clamped_params: Vec<ShotParam>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedShot {
    pub shot: ShotParameters,
    pub shot_type: ShotType,
    pub flags: ShotFlags,
}

/// Shot parameters and type for a descriptor vector.
pub fn d2p(model: &LinearModel, descriptors: &[f64], ranges: &ClampRanges) -> Result<GeneratedShot> {
    if model.direction != Direction::D2P {
        return Err(Error::invalid("model is not a D2P model"));
    }
    let y = model.predict(descriptors)?;
    let raw = ShotParameters::from_array([y[0], y[1], y[2], y[3], y[4], y[5]]);
    let (shot_type, tie_broken) = decode_shot_type(&y[ONE_HOT_START..])?;
    let (shot, clamped_params) = ranges.clamp(&raw);
    Ok(GeneratedShot {
        shot,
        shot_type,
        flags: ShotFlags {
            clamped: !clamped_params.is_empty(),
            tie_broken,
            clamped_params,
        },
    })
}

/// Descriptor vector predicted for a shot.
pub fn p2d(model: &LinearModel, shot: &ShotParameters, shot_type: ShotType) -> Result<Vec<f64>> {
    if model.direction != Direction::P2D {
        return Err(Error::invalid("model is not a P2D model"));
    }
    model.predict(&encode_features(shot, shot_type))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormKeys {
    /// Input ranges followed by output ranges.
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub seed: u64,
    #[serde(default)]
    pub cv_scores: Vec<CvScore>,
    #[serde(default)]
    pub descriptors: Vec<String>,
}

/// On-disk model document shared with the service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub direction: Direction,
    pub lambda: f64,
    pub norm: NormKeys,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub prior: GaussianPrior,
    pub metadata: ArtifactMetadata,
}

impl ModelArtifact {
    pub fn new(model: &LinearModel, prior: &GaussianPrior, metadata: ArtifactMetadata) -> Self {
        let mut mins = model.norm_in.mins.clone();
        mins.extend(&model.norm_out.mins);
        let mut maxs = model.norm_in.maxs.clone();
        maxs.extend(&model.norm_out.maxs);
        ModelArtifact {
            direction: model.direction,
            lambda: model.lambda,
            norm: NormKeys { mins, maxs },
            w: (0..model.n_outputs())
                .map(|k| model.coefficients.row(k).iter().copied().collect())
                .collect(),
            b: model.intercepts.clone(),
            prior: prior.clone(),
            metadata,
        }
    }

    pub fn model(&self) -> Result<LinearModel> {
        let outputs = self.w.len();
        let inputs = self.w.first().map_or(0, Vec::len);
        if outputs == 0 || inputs == 0 || self.w.iter().any(|r| r.len() != inputs) {
            return Err(Error::invalid("model weights must be a nonempty rectangular matrix"));
        }
        if self.b.len() != outputs {
            return Err(Error::DimensionMismatch {
                expected: outputs,
                got: self.b.len(),
            });
        }
        if self.norm.mins.len() != inputs + outputs || self.norm.maxs.len() != inputs + outputs {
            return Err(Error::DimensionMismatch {
                expected: inputs + outputs,
                got: self.norm.mins.len(),
            });
        }
        if self.w.iter().flatten().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model weights".into()));
        }
        check_direction_shape(self.direction, inputs, outputs)?;
        self.prior.validate()?;
        Ok(LinearModel {
            direction: self.direction,
            coefficients: DMatrix::from_fn(outputs, inputs, |i, j| self.w[i][j]),
            intercepts: self.b.clone(),
            lambda: self.lambda,
            norm_in: NormalizationSpec::new(self.norm.mins[..inputs].to_vec(), self.norm.maxs[..inputs].to_vec())?,
            norm_out: NormalizationSpec::new(self.norm.mins[inputs..].to_vec(), self.norm.maxs[inputs..].to_vec())?,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: ModelArtifact = serde_json::from_str(text)?;
        a.model()?;
        Ok(a)
    }
}

/// Fully connected network with tanh hidden layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    /// Layer `l` maps `sizes[l]` to `sizes[l + 1]`.
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Hidden widths for the descriptor/parameter networks.
pub const MLP_HIDDEN: [usize; 3] = [32, 16, 8];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpOptions {
    fn default() -> Self {
        MlpOptions {
            epochs: 500,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

struct Gradients {
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights and zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-limit..limit))
            })
            .collect();
        let biases = sizes[1..].iter().map(|&s| DVector::zeros(s)).collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect(),
            biases: sizes[1..].iter().map(|&s| DVector::zeros(s)).collect(),
        })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid("an MLP needs at least two nonzero layer sizes"));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Activations of every layer, input first.
    fn forward_all(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut acts = vec![x.clone()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = w * acts.last().expect("input present") + b;
            acts.push(if l == last { z } else { z.map(f64::tanh) });
        }
        acts
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.sizes[0] {
            return Err(Error::DimensionMismatch {
                expected: self.sizes[0],
                got: x.len(),
            });
        }
        let acts = self.forward_all(&DVector::from_column_slice(x));
        Ok(acts.last().expect("output present").iter().copied().collect())
    }

    pub fn predict_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let out = *self.sizes.last().expect("sizes nonempty");
        let mut y = DMatrix::zeros(x.nrows(), out);
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            for (k, v) in self.predict(&row)?.into_iter().enumerate() {
                y[(i, k)] = v;
            }
        }
        Ok(y)
    }

    fn check_data(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.sizes[0] {
            return Err(Error::DimensionMismatch {
                expected: self.sizes[0],
                got: x.ncols(),
            });
        }
        let out = *self.sizes.last().expect("sizes nonempty");
        if y.ncols() != out {
            return Err(Error::DimensionMismatch { expected: out, got: y.ncols() });
        }
        if x.nrows() != y.nrows() || x.nrows() == 0 {
            return Err(Error::invalid("inputs and targets need the same nonzero row count"));
        }
        Ok(())
    }

    /// Mean over rows of the squared error summed over outputs, halved.
    pub fn loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
        self.check_data(x, y)?;
        let pred = self.predict_rows(x)?;
        Ok((pred - y).norm_squared() / (2.0 * x.nrows() as f64))
    }

    fn gradients(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, rows: &[usize]) -> Gradients {
        let mut gw: Vec<DMatrix<f64>> = self.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
        let mut gb: Vec<DVector<f64>> = self.biases.iter().map(|b| DVector::zeros(b.len())).collect();
        let scale = 1.0 / rows.len() as f64;
        let last = self.weights.len() - 1;
        for &i in rows {
            let xi = DVector::from_iterator(x.ncols(), x.row(i).iter().copied());
            let yi = DVector::from_iterator(y.ncols(), y.row(i).iter().copied());
            let acts = self.forward_all(&xi);
            let mut delta = (&acts[last + 1] - yi) * scale;
            for l in (0..=last).rev() {
                gw[l] += &delta * acts[l].transpose();
                gb[l] += &delta;
                if l > 0 {
                    let back = self.weights[l].transpose() * &delta;
                    delta = back.component_mul(&acts[l].map(|a| 1.0 - a * a));
                }
            }
        }
        Gradients { weights: gw, biases: gb }
    }

    /// Flattened parameter `idx`: weights layer by layer (column-major), then biases.
    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for w in &mut self.weights {
            if idx < w.len() {
                return &mut w.as_mut_slice()[idx];
            }
            idx -= w.len();
        }
        for b in &mut self.biases {
            if idx < b.len() {
                return &mut b.as_mut_slice()[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    fn flat_gradient(g: &Gradients, mut idx: usize) -> f64 {
        for w in &g.weights {
            if idx < w.len() {
                return w.as_slice()[idx];
            }
            idx -= w.len();
        }
        for b in &g.biases {
            if idx < b.len() {
                return b.as_slice()[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Mini-batch Adam on the halved mean squared error. Returns the loss
    /// on the full training set after every epoch.
    pub fn fit(&mut self, x: &DMatrix<f64>, y: &DMatrix<f64>, options: &MlpOptions) -> Result<Vec<f64>> {
        self.check_data(x, y)?;
        if options.batch_size == 0 || !(options.learning_rate > 0.0) {
            return Err(Error::invalid("batch size and learning rate must be positive"));
        }
        let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut m_w: Vec<DMatrix<f64>> = self.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
        let mut v_w = m_w.clone();
        let mut m_b: Vec<DVector<f64>> = self.biases.iter().map(|b| DVector::zeros(b.len())).collect();
        let mut v_b = m_b.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let mut order: Vec<usize> = (0..x.nrows()).collect();
        let mut step = 0i32;
        let mut history = Vec::with_capacity(options.epochs);
        for _ in 0..options.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(options.batch_size) {
                step += 1;
                let g = self.gradients(x, y, batch);
                let c1 = 1.0 - beta1.powi(step);
                let c2 = 1.0 - beta2.powi(step);
                let lr = options.learning_rate;
                for l in 0..self.weights.len() {
                    m_w[l] = &m_w[l] * beta1 + &g.weights[l] * (1.0 - beta1);
                    v_w[l] = &v_w[l] * beta2 + g.weights[l].map(|v| v * v) * (1.0 - beta2);
                    let upd = m_w[l].zip_map(&v_w[l], |m, v| lr * (m / c1) / ((v / c2).sqrt() + eps));
                    self.weights[l] -= upd;
                    m_b[l] = &m_b[l] * beta1 + &g.biases[l] * (1.0 - beta1);
                    v_b[l] = &v_b[l] * beta2 + g.biases[l].map(|v| v * v) * (1.0 - beta2);
                    let upd = m_b[l].zip_map(&v_b[l], |m, v| lr * (m / c1) / ((v / c2).sqrt() + eps));
                    self.biases[l] -= upd;
                }
            }
            history.push(self.loss(x, y)?);
        }
        Ok(history)
    }

    /// Largest relative error between backpropagated and central-difference
    /// gradients over `coords` randomly chosen parameters.
    pub fn gradient_check(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, coords: usize, step: f64, seed: u64) -> Result<f64> {
        self.check_data(x, y)?;
        let rows: Vec<usize> = (0..x.nrows()).collect();
        let g = self.gradients(x, y, &rows);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut probe = self.clone();
        let mut worst = 0.0f64;
        for _ in 0..coords {
            let idx = rng.random_range(0..self.n_params());
            let orig = *probe.param_mut(idx);
            *probe.param_mut(idx) = orig + step;
            let up = probe.loss(x, y)?;
            *probe.param_mut(idx) = orig - step;
            let down = probe.loss(x, y)?;
            *probe.param_mut(idx) = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = Self::flat_gradient(&g, idx);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
        Ok(worst)
    }
}
