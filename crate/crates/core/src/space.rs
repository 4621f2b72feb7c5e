//! Descriptor space construction.
//!
//! Per-clip descriptor scores are correlated, the descriptors clustered with
//! affinity propagation, augmented with mirrored ("not-X") columns and
//! embedded in 3D with SMACOF stress majorization. Arousal, valence and
//! dominance directions are then fitted in the embedding.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ranking::RatingTable;
use crate::stats::{quantile, snap_unit};
use crate::{Error, Result};

/// Prefix of mirrored descriptor labels.
pub const MIRROR_PREFIX: &str = "not-";

/// Clip × descriptor scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub clips: Vec<String>,
    pub descriptors: Vec<String>,
    /// `clips.len() × descriptors.len()`
    pub values: DMatrix<f64>,
}

impl ScoreMatrix {
    pub fn new(clips: Vec<String>, descriptors: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != clips.len() {
            return Err(Error::DimensionMismatch {
                expected: clips.len(),
                got: values.nrows(),
            });
        }
        if values.ncols() != descriptors.len() {
            return Err(Error::DimensionMismatch {
                expected: descriptors.len(),
                got: values.ncols(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score matrix".into()));
        }
        Ok(ScoreMatrix {
            clips,
            descriptors,
            values,
        })
    }

    /// Rating means laid out with clips in sorted order. Every descriptor
    /// must rate every clip.
    pub fn from_ratings(table: &RatingTable, descriptors: &[String]) -> Result<Self> {
        let first = descriptors
            .first()
            .ok_or_else(|| Error::Empty("no descriptors requested".into()))?;
        let clips: Vec<String> = table
            .ratings(first)
            .ok_or_else(|| Error::Unknown {
                kind: "descriptor",
                name: first.clone(),
            })?
            .keys()
            .cloned()
            .collect();
        let mut values = DMatrix::zeros(clips.len(), descriptors.len());
        for (j, d) in descriptors.iter().enumerate() {
            let ratings = table.ratings(d).ok_or_else(|| Error::Unknown {
                kind: "descriptor",
                name: d.clone(),
            })?;
            if ratings.len() != clips.len() {
                return Err(Error::invalid(format!("descriptor {d} rates a different clip set")));
            }
            for (i, c) in clips.iter().enumerate() {
                let r = ratings
                    .get(c)
                    .ok_or_else(|| Error::invalid(format!("descriptor {d} has no rating for clip {c}")))?;
                values[(i, j)] = r.mu;
            }
        }
        ScoreMatrix::new(clips, descriptors.to_vec(), values)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Restricts to the named descriptors, in the given order.
    pub fn select(&self, descriptors: &[String]) -> Result<Self> {
        let idx = descriptors
            .iter()
            .map(|d| {
                self.descriptors.iter().position(|x| x == d).ok_or_else(|| Error::Unknown {
                    kind: "descriptor",
                    name: d.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let values = DMatrix::from_fn(self.clips.len(), idx.len(), |i, j| self.values[(i, idx[j])]);
        ScoreMatrix::new(self.clips.clone(), descriptors.to_vec(), values)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["clip_id".to_string()];
        header.extend(self.descriptors.iter().cloned());
        wtr.write_record(&header)?;
        for (i, c) in self.clips.iter().enumerate() {
            let mut rec = vec![c.clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("clip_id") {
            return Err(Error::invalid("score CSV must start with a clip_id column"));
        }
        let descriptors: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut clips = Vec::new();
        let mut data = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            clips.push(rec.get(0).unwrap_or_default().to_string());
            for field in rec.iter().skip(1) {
                data.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::invalid(format!("bad score `{field}`: {e}")))?,
                );
            }
        }
        let values = DMatrix::from_row_slice(clips.len(), descriptors.len(), &data);
        ScoreMatrix::new(clips, descriptors, values)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: DMatrix<f64>,
}

/// Pearson correlation between every pair of descriptor columns. The
/// result is exactly symmetric with a unit diagonal.
pub fn correlation_matrix(scores: &ScoreMatrix) -> Result<CorrelationMatrix> {
    let n = scores.values.nrows();
    let k = scores.values.ncols();
    if n < 2 {
        return Err(Error::invalid("correlation needs at least two clips"));
    }
    let mut centered = scores.values.clone();
    let mut norms = vec![0.0; k];
    for j in 0..k {
        let mut col = centered.column_mut(j);
        let m = col.sum() / n as f64;
        // second pass removes residual mean
        let m = m + col.iter().map(|v| v - m).sum::<f64>() / n as f64;
        col.iter_mut().for_each(|v| *v -= m);
        let ss: f64 = col.iter().map(|v| v * v).sum();
        if ss == 0.0 {
            return Err(Error::ConstantColumn(scores.descriptors[j].clone()));
        }
        norms[j] = ss.sqrt();
    }
    let mut values = DMatrix::identity(k, k);
    for a in 0..k {
        for b in (a + 1)..k {
            let dot = centered.column(a).dot(&centered.column(b));
            let r = snap_unit(dot / (norms[a] * norms[b]));
            values[(a, b)] = r;
            values[(b, a)] = r;
        }
    }
    Ok(CorrelationMatrix {
        labels: scores.descriptors.clone(),
        values,
    })
}

/// Reflects one column about its mean.
pub fn mirror_column(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| 2.0 * m - x).collect()
}

/// Appends a mirrored `not-X` column for every descriptor `X`.
pub fn mirror_scores(scores: &ScoreMatrix) -> ScoreMatrix {
    let n = scores.values.nrows();
    let k = scores.values.ncols();
    let mut values = DMatrix::zeros(n, 2 * k);
    for j in 0..k {
        let col = scores.column(j);
        let mirrored = mirror_column(&col);
        for i in 0..n {
            values[(i, j)] = col[i];
            values[(i, k + j)] = mirrored[i];
        }
    }
    let mut descriptors = scores.descriptors.clone();
    descriptors.extend(scores.descriptors.iter().map(|d| format!("{MIRROR_PREFIX}{d}")));
    ScoreMatrix {
        clips: scores.clips.clone(),
        descriptors,
        values,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceTransform {
    /// `1 - r`, in [0, 2].
    #[default]
    OneMinus,
    /// `sqrt(2 (1 - r))`, the Euclidean distance of standardized columns.
    SqrtTwoOneMinus,
    /// `(1 - r) / 2`, in [0, 1].
    HalfOneMinus,
}

impl DistanceTransform {
    pub fn apply(self, r: f64) -> f64 {
        let d = match self {
            DistanceTransform::OneMinus => 1.0 - r,
            DistanceTransform::SqrtTwoOneMinus => (2.0 * (1.0 - r)).max(0.0).sqrt(),
            DistanceTransform::HalfOneMinus => (1.0 - r) / 2.0,
        };
        d.max(0.0)
    }
}

pub fn correlation_distances(corr: &CorrelationMatrix, transform: DistanceTransform) -> DMatrix<f64> {
    let k = corr.values.nrows();
    DMatrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { transform.apply(corr.values[(i, j)]) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApOptions {
    /// In [0.5, 1).
    pub damping: f64,
    pub max_iter: usize,
    /// Iterations the exemplar set must stay fixed to count as converged.
    pub convergence_iter: usize,
    /// Largest message update, relative to the largest similarity, still
    /// counted as settled.
    pub message_tol: f64,
}

impl Default for ApOptions {
    fn default() -> Self {
        ApOptions {
            damping: 0.9,
            max_iter: 1000,
            convergence_iter: 15,
            message_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Exemplar node per cluster, ascending.
    pub exemplars: Vec<usize>,
    /// Cluster index (into `exemplars`) for every node.
    pub labels: Vec<usize>,
    pub preference: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.exemplars.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }

    /// Groups as sorted member lists, ordered by first member.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = (0..self.exemplars.len()).map(|c| self.members(c)).collect();
        groups.sort();
        groups
    }
}

/// Affinity propagation with damped responsibility/availability messages.
///
/// `similarity` is square; its diagonal is replaced by `preference`. Ties
/// are broken by a fixed-seed perturbation of relative size 1e-9.
pub fn affinity_propagation(similarity: &DMatrix<f64>, preference: f64, options: &ApOptions) -> Result<ClusterAssignment> {
    let n = similarity.nrows();
    if n == 0 || similarity.ncols() != n {
        return Err(Error::invalid("similarity matrix must be square and nonempty"));
    }
    if !(0.5..1.0).contains(&options.damping) {
        return Err(Error::invalid(format!("damping must lie in [0.5, 1), got {}", options.damping)));
    }
    if similarity.iter().any(|v| !v.is_finite()) || !preference.is_finite() {
        return Err(Error::NonFinite("similarity".into()));
    }
    if n == 1 {
        return Ok(ClusterAssignment {
            exemplars: vec![0],
            labels: vec![0],
            preference,
            iterations: 0,
            converged: true,
        });
    }

    let mut s = similarity.clone();
    for i in 0..n {
        s[(i, i)] = preference;
    }
    let scale = s.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(0x00a9_f1e7);
    for v in s.iter_mut() {
        *v += 1e-9 * scale * rng.random::<f64>();
    }

    let lambda = options.damping;
    let mut r = DMatrix::<f64>::zeros(n, n);
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut last: Vec<bool> = vec![false; n];
    let mut stable = 0usize;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..options.max_iter {
        iterations = it + 1;
        // responsibilities
        let mut delta = 0.0f64;
        for i in 0..n {
            let (mut best, mut second, mut best_k) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
            for k in 0..n {
                let v = a[(i, k)] + s[(i, k)];
                if v > best {
                    second = best;
                    best = v;
                    best_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == best_k { second } else { best };
                let new = s[(i, k)] - competitor;
                let damped = lambda * r[(i, k)] + (1.0 - lambda) * new;
                delta = delta.max((damped - r[(i, k)]).abs());
                r[(i, k)] = damped;
            }
        }
        // availabilities
        for k in 0..n {
            let positive_sum: f64 = (0..n).filter(|&i| i != k).map(|i| r[(i, k)].max(0.0)).sum();
            for i in 0..n {
                let new = if i == k {
                    positive_sum
                } else {
                    (r[(k, k)] + positive_sum - r[(i, k)].max(0.0)).min(0.0)
                };
                let damped = lambda * a[(i, k)] + (1.0 - lambda) * new;
                delta = delta.max((damped - a[(i, k)]).abs());
                a[(i, k)] = damped;
            }
        }
        let current: Vec<bool> = (0..n).map(|k| a[(k, k)] + r[(k, k)] > 0.0).collect();
        if current == last {
            stable += 1;
        } else {
            stable = 1;
            last = current;
        }
        let count = last.iter().filter(|&&e| e).count();
        // a fixed exemplar set alone can be a transient plateau on
        // symmetric inputs; the messages must have settled too
        if stable >= options.convergence_iter && count > 0 && delta <= options.message_tol * scale {
            converged = true;
            break;
        }
    }

    let mut exemplars: Vec<usize> = (0..n).filter(|&k| last[k]).collect();
    if exemplars.is_empty() {
        converged = false;
        let best = (0..n)
            .max_by(|&x, &y| (a[(x, x)] + r[(x, x)]).total_cmp(&(a[(y, y)] + r[(y, y)])))
            .unwrap_or(0);
        exemplars.push(best);
    }
    let assign = |exemplars: &[usize]| -> Vec<usize> {
        (0..n)
            .map(|i| {
                if let Some(c) = exemplars.iter().position(|&e| e == i) {
                    return c;
                }
                (0..exemplars.len())
                    .max_by(|&x, &y| s[(i, exemplars[x])].total_cmp(&s[(i, exemplars[y])]).then(y.cmp(&x)))
                    .expect("nonempty exemplar set")
            })
            .collect()
    };
    let labels = assign(&exemplars);
    // refine: the member maximizing within-cluster similarity becomes exemplar
    let mut refined: Vec<usize> = (0..exemplars.len())
        .map(|c| {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            *members
                .iter()
                .max_by(|&&x, &&y| {
                    let sx: f64 = members.iter().map(|&j| s[(j, x)]).sum();
                    let sy: f64 = members.iter().map(|&j| s[(j, y)]).sum();
                    sx.total_cmp(&sy).then(y.cmp(&x))
                })
                .expect("cluster has its exemplar")
        })
        .collect();
    refined.sort_unstable();
    let labels = assign(&refined);

    Ok(ClusterAssignment {
        exemplars: refined,
        labels,
        preference,
        iterations,
        converged,
    })
}

/// Median of the off-diagonal similarities, the customary preference.
pub fn median_preference(similarity: &DMatrix<f64>) -> f64 {
    quantile(&off_diagonal(similarity), 0.5)
}

fn off_diagonal(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                v.push(m[(i, j)]);
            }
        }
    }
    v
}

/// Bounds and resolution of the preference search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSweep {
    /// Number of evenly spaced quantiles of the off-diagonal similarities.
    pub quantile_steps: usize,
    /// Bisection steps between bracketing candidates.
    pub refine_steps: usize,
    /// How far below the smallest similarity to extend, in units of the
    /// similarity range.
    pub lower_extension: f64,
}

impl Default for PreferenceSweep {
    fn default() -> Self {
        PreferenceSweep {
            quantile_steps: 101,
            refine_steps: 40,
            lower_extension: 8.0,
        }
    }
}

/// Searches the preference until affinity propagation yields exactly
/// `target` clusters.
pub fn cluster_to_target(
    similarity: &DMatrix<f64>,
    target: usize,
    options: &ApOptions,
    sweep: &PreferenceSweep,
) -> Result<ClusterAssignment> {
    let n = similarity.nrows();
    if target == 0 || target > n {
        return Err(Error::invalid(format!("cannot form {target} clusters from {n} nodes")));
    }
    let off = off_diagonal(similarity);
    if off.is_empty() {
        return affinity_propagation(similarity, 0.0, options);
    }
    let lo = off.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = off.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(1e-12);
    let mut grid: Vec<f64> = (0..sweep.quantile_steps.max(2))
        .map(|i| quantile(&off, i as f64 / (sweep.quantile_steps.max(2) - 1) as f64))
        .collect();
    let mut ext = 0.25;
    while ext <= sweep.lower_extension {
        grid.push(lo - ext * range);
        ext *= 2.0;
    }
    grid.push(hi + range);
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut evaluated: Vec<(f64, ClusterAssignment)> = Vec::with_capacity(grid.len());
    for &p in &grid {
        let c = affinity_propagation(similarity, p, options)?;
        if c.converged && c.n_clusters() == target {
            return Ok(c);
        }
        evaluated.push((p, c));
    }
    // bisect between the last preference below target and the first above
    for w in evaluated.windows(2) {
        let (p_lo, c_lo) = (&w[0].0, &w[0].1);
        let (p_hi, c_hi) = (&w[1].0, &w[1].1);
        if c_lo.n_clusters() < target && c_hi.n_clusters() > target {
            let (mut a, mut b) = (*p_lo, *p_hi);
            for _ in 0..sweep.refine_steps {
                let mid = 0.5 * (a + b);
                let c = affinity_propagation(similarity, mid, options)?;
                if c.converged && c.n_clusters() == target {
                    return Ok(c);
                }
                if c.n_clusters() < target {
                    a = mid;
                } else {
                    b = mid;
                }
            }
        }
    }
    Err(Error::invalid(format!("no preference yields exactly {target} clusters")))
}

/// Coordinates for every (possibly mirrored) descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub labels: Vec<String>,
    pub coords: Vec<Vec<f64>>,
    /// Raw stress `Σ_{i<j} (‖x_i − x_j‖ − d_ij)²`.
    pub stress: f64,
    /// Stress divided by `Σ_{i<j} d_ij²`.
    pub normalized_stress: f64,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stress_history: Vec<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.coords.first().map_or(0, Vec::len)
    }

    pub fn point(&self, label: &str) -> Option<&[f64]> {
        self.labels.iter().position(|l| l == label).map(|i| self.coords[i].as_slice())
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        euclid(&self.coords[i], &self.coords[j])
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MdsInit {
    /// Torgerson scaling of the double-centered squared distances.
    Classical,
    Random { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdsOptions {
    pub init: MdsInit,
    pub max_iter: usize,
    /// Stop once the relative stress decrease falls below this.
    pub rel_tol: f64,
}

impl Default for MdsOptions {
    fn default() -> Self {
        MdsOptions {
            init: MdsInit::Classical,
            max_iter: 500,
            rel_tol: 1e-9,
        }
    }
}

fn validate_distances(d: &DMatrix<f64>) -> Result<()> {
    let m = d.nrows();
    if m == 0 || d.ncols() != m {
        return Err(Error::invalid("distance matrix must be square and nonempty"));
    }
    for i in 0..m {
        if d[(i, i)] != 0.0 {
            return Err(Error::invalid("distance matrix must have a zero diagonal"));
        }
        for j in 0..m {
            let v = d[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid("distances must be finite and nonnegative"));
            }
            if (v - d[(j, i)]).abs() > 1e-12 * v.abs().max(1.0) {
                return Err(Error::invalid("distance matrix must be symmetric"));
            }
        }
    }
    Ok(())
}

fn stress_of(x: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let m = d.nrows();
    let mut s = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let dist = x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            s += (dist - d[(i, j)]).powi(2);
        }
    }
    s
}

/// Classical (Torgerson) scaling.
pub fn classical_mds(d: &DMatrix<f64>, dim: usize) -> Result<DMatrix<f64>> {
    validate_distances(d)?;
    let m = d.nrows();
    let d2 = d.map(|v| v * v);
    let row_means: Vec<f64> = (0..m).map(|i| d2.row(i).sum() / m as f64).collect();
    let grand = row_means.iter().sum::<f64>() / m as f64;
    let b = DMatrix::from_fn(m, m, |i, j| -0.5 * (d2[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let mut x = DMatrix::zeros(m, dim);
    for (c, &k) in order.iter().take(dim).enumerate() {
        let lam = eig.eigenvalues[k].max(0.0).sqrt();
        for i in 0..m {
            x[(i, c)] = eig.eigenvectors[(i, k)] * lam;
        }
    }
    Ok(x)
}

/// SMACOF stress majorization with unit weights.
pub fn smacof(d: &DMatrix<f64>, dim: usize, options: &MdsOptions) -> Result<Embedding> {
    validate_distances(d)?;
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    let m = d.nrows();
    let mut x = match options.init {
        MdsInit::Classical => classical_mds(d, dim)?,
        MdsInit::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = d.iter().copied().fold(0.0, f64::max).max(1e-12);
            DMatrix::from_fn(m, dim, |_, _| scale * (rng.random::<f64>() - 0.5))
        }
    };
    let total: f64 = (0..m).flat_map(|i| ((i + 1)..m).map(move |j| (i, j))).map(|(i, j)| d[(i, j)].powi(2)).sum();

    let mut stress = stress_of(&x, d);
    let mut history = vec![stress];
    let mut iterations = 0;
    while iterations < options.max_iter && stress > 0.0 {
        let mut b = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let dist = x.row(i).iter().zip(x.row(j).iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                if dist > 0.0 {
                    b[(i, j)] = -d[(i, j)] / dist;
                }
            }
            let row_sum: f64 = (0..m).filter(|&j| j != i).map(|j| b[(i, j)]).sum();
            b[(i, i)] = -row_sum;
        }
        let next = (&b * &x) / m as f64;
        let next_stress = stress_of(&next, d);
        iterations += 1;
        if next_stress > stress {
            // rounding noise at the fixed point
            break;
        }
        let rel = (stress - next_stress) / stress;
        x = next;
        stress = next_stress;
        history.push(stress);
        if rel < options.rel_tol {
            break;
        }
    }
    Ok(Embedding {
        labels: (0..m).map(|i| i.to_string()).collect(),
        coords: (0..m).map(|i| x.row(i).iter().copied().collect()).collect(),
        stress,
        normalized_stress: if total > 0.0 { stress / total } else { 0.0 },
        iterations,
        stress_history: history,
    })
}

/// Runs SMACOF from the classical start and from a seeded random start and
/// keeps the lower-stress result.
pub fn mds_embed(distances: &DMatrix<f64>, dim: usize, seed: u64) -> Result<Embedding> {
    let classical = smacof(distances, dim, &MdsOptions::default())?;
    let random = smacof(
        distances,
        dim,
        &MdsOptions {
            init: MdsInit::Random { seed },
            ..MdsOptions::default()
        },
    )?;
    Ok(if random.stress < classical.stress { random } else { classical })
}

/// Mirrors the scores, correlates, converts to distances and embeds.
pub fn embed_descriptors(scores: &ScoreMatrix, transform: DistanceTransform, dim: usize, seed: u64) -> Result<Embedding> {
    let mirrored = mirror_scores(scores);
    let corr = correlation_matrix(&mirrored)?;
    let dist = correlation_distances(&corr, transform);
    let mut e = mds_embed(&dist, dim, seed)?;
    e.labels = corr.labels;
    Ok(e)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffectAxis {
    Arousal,
    Valence,
    Dominance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisAssignment {
    pub descriptor: String,
    pub axis: AffectAxis,
    pub positive: bool,
}

/// Representative descriptors of the seven clusters by axis and direction.
/// No descriptor carries negative valence.
pub fn representative_axes() -> Vec<AxisAssignment> {
    let a = |d: &str, axis, positive| AxisAssignment {
        descriptor: d.to_string(),
        axis,
        positive,
    };
    vec![
        a("exciting", AffectAxis::Arousal, true),
        a("calm", AffectAxis::Arousal, false),
        a("interesting", AffectAxis::Valence, true),
        a("enjoyable", AffectAxis::Valence, true),
        a("establishing", AffectAxis::Dominance, true),
        a("revealing", AffectAxis::Dominance, true),
        a("nervous", AffectAxis::Dominance, false),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmotionBasis {
    pub arousal: [f64; 3],
    pub valence: [f64; 3],
    pub dominance: [f64; 3],
    pub assignment: Vec<AxisAssignment>,
}

impl EmotionBasis {
    pub fn axis(&self, axis: AffectAxis) -> [f64; 3] {
        match axis {
            AffectAxis::Arousal => self.arousal,
            AffectAxis::Valence => self.valence,
            AffectAxis::Dominance => self.dominance,
        }
    }
}

/// Fits one unit vector per affect axis, pointing from the centroid of the
/// negative-direction points to the centroid of the positive-direction
/// points. Mirrored descriptors count on the opposite side.
pub fn fit_vad_basis(embedding: &Embedding, axes: &[AxisAssignment]) -> Result<EmotionBasis> {
    if embedding.dim() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: embedding.dim(),
        });
    }
    let mut sides: BTreeMap<AffectAxis, (Vec<[f64; 3]>, Vec<[f64; 3]>)> = BTreeMap::new();
    for asg in axes {
        let lookup = |label: &str| -> Result<[f64; 3]> {
            let p = embedding.point(label).ok_or_else(|| Error::Unknown {
                kind: "embedded descriptor",
                name: label.to_string(),
            })?;
            Ok([p[0], p[1], p[2]])
        };
        let own = lookup(&asg.descriptor)?;
        let mirror = lookup(&format!("{MIRROR_PREFIX}{}", asg.descriptor))?;
        let entry = sides.entry(asg.axis).or_default();
        if asg.positive {
            entry.0.push(own);
            entry.1.push(mirror);
        } else {
            entry.0.push(mirror);
            entry.1.push(own);
        }
    }
    let centroid = |pts: &[[f64; 3]]| -> [f64; 3] {
        let n = pts.len() as f64;
        let mut c = [0.0; 3];
        for p in pts {
            for k in 0..3 {
                c[k] += p[k] / n;
            }
        }
        c
    };
    let mut fit = |axis: AffectAxis| -> Result<[f64; 3]> {
        let (pos, neg) = sides.remove(&axis).ok_or_else(|| Error::Empty(format!("no descriptors assigned to {axis:?}")))?;
        let (cp, cn) = (centroid(&pos), centroid(&neg));
        let v = [cp[0] - cn[0], cp[1] - cn[1], cp[2] - cn[2]];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n == 0.0 {
            return Err(Error::invalid(format!("{axis:?} centroids coincide")));
        }
        Ok([v[0] / n, v[1] / n, v[2] / n])
    };
    Ok(EmotionBasis {
        arousal: fit(AffectAxis::Arousal)?,
        valence: fit(AffectAxis::Valence)?,
        dominance: fit(AffectAxis::Dominance)?,
        assignment: axes.to_vec(),
    })
}
