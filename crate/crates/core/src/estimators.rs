//! Entropy and mutual-information estimators.
//!
//! Gaussian quantities are in nats, discrete ones in bits. Use
//! [`nats_to_bits`] / [`bits_to_nats`] to move between them.

use std::f64::consts::{E, LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal jitter added to sample covariances of z-scored data.
pub const DEFAULT_JITTER: f64 = 1e-8;

/// Smallest number of aligned samples accepted by [`lagged_covariance`].
pub const MIN_LAGGED_SAMPLES: usize = 8;

/// Negative MI estimates above this are treated as rounding and clamped to zero.
pub const NEGATIVE_MI_TOLERANCE: f64 = -1e-9;

const MAX_GAUSSIAN_DIM: usize = 4;

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / LN_2
}

pub fn bits_to_nats(bits: f64) -> f64 {
    bits * LN_2
}

fn clamp_mi(mi: f64) -> Result<f64> {
    if mi >= 0.0 {
        Ok(mi)
    } else if mi > NEGATIVE_MI_TOLERANCE {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!(
            "negative mutual information {mi:e}"
        )))
    }
}

fn check_blocks(dim: usize, a: &[usize], b: &[usize]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::validation(
            "mutual information needs two non-empty blocks",
        ));
    }
    let mut used = vec![false; dim];
    for &i in a.iter().chain(b) {
        if i >= dim {
            return Err(Error::validation(format!(
                "index {i} out of range for {dim} variables"
            )));
        }
        if std::mem::replace(&mut used[i], true) {
            return Err(Error::validation(format!(
                "index {i} appears twice in the split"
            )));
        }
    }
    Ok(())
}

/// Symmetric covariance matrix of up to four jointly Gaussian variables.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCov {
    dim: usize,
    matrix: Vec<f64>,
    degenerate: bool,
}

impl GaussianCov {
    /// `matrix` is row-major `dim × dim`.
    pub fn new(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if !(1..=MAX_GAUSSIAN_DIM).contains(&dim) {
            return Err(Error::validation(format!(
                "Gaussian dimension must be 1..={MAX_GAUSSIAN_DIM}, got {dim}"
            )));
        }
        if matrix.len() != dim * dim {
            return Err(Error::validation(format!(
                "{dim}x{dim} covariance needs {} entries, got {}",
                dim * dim,
                matrix.len()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("covariance has non-finite entries"));
        }
        for i in 0..dim {
            for j in 0..i {
                if (matrix[i * dim + j] - matrix[j * dim + i]).abs() > 1e-12 {
                    return Err(Error::validation(format!(
                        "covariance asymmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            dim,
            matrix,
            degenerate: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim + j]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// Set when the matrix was not positive definite before jitter was added.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Adds `jitter` to the diagonal, recording whether the original matrix
    /// was singular.
    pub fn regularised(&self, jitter: f64) -> Self {
        let mut matrix = self.matrix.clone();
        for i in 0..self.dim {
            matrix[i * self.dim + i] += jitter;
        }
        Self {
            dim: self.dim,
            matrix,
            degenerate: self.degenerate || log_det(&self.matrix, self.dim).is_err(),
        }
    }

    /// Covariance of the listed variables, in the listed order.
    pub fn sub(&self, idx: &[usize]) -> Self {
        let k = idx.len();
        let mut matrix = Vec::with_capacity(k * k);
        for &i in idx {
            for &j in idx {
                matrix.push(self.get(i, j));
            }
        }
        Self {
            dim: k,
            matrix,
            degenerate: self.degenerate,
        }
    }

    pub fn log_det(&self) -> Result<f64> {
        log_det(&self.matrix, self.dim)
    }
}

/// Log-determinant via Cholesky; errors when a pivot is not positive.
fn log_det(matrix: &[f64], dim: usize) -> Result<f64> {
    let mut l = vec![0.0; dim * dim];
    let mut acc = 0.0;
    for j in 0..dim {
        let mut d = matrix[j * dim + j];
        for k in 0..j {
            d -= l[j * dim + k] * l[j * dim + k];
        }
        if d.is_nan() || d <= 0.0 {
            return Err(Error::Numerical(format!(
                "covariance not positive definite (pivot {j} = {d:e})"
            )));
        }
        let djj = d.sqrt();
        l[j * dim + j] = djj;
        acc += djj.ln();
        for i in j + 1..dim {
            let mut s = matrix[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            l[i * dim + j] = s / djj;
        }
    }
    Ok(2.0 * acc)
}

/// Differential entropy `½·ln((2πe)^d·det Σ)` in nats.
pub fn gaussian_entropy(cov: &GaussianCov) -> Result<f64> {
    let ld = cov.log_det()?;
    Ok(0.5 * (cov.dim as f64 * (2.0 * PI * E).ln() + ld))
}

/// `I(A; B) = H(A) + H(B) − H(A, B)` in nats. Variables in neither block are
/// marginalised out.
pub fn gaussian_mi(joint: &GaussianCov, a: &[usize], b: &[usize]) -> Result<f64> {
    check_blocks(joint.dim, a, b)?;
    let ab: Vec<usize> = a.iter().chain(b).copied().collect();
    // constant terms cancel, so only log-determinants are needed
    let mi =
        0.5 * (joint.sub(a).log_det()? + joint.sub(b).log_det()? - joint.sub(&ab).log_det()?);
    clamp_mi(mi)
}

/// Sample covariance of `(a_t, b_t, a_{t+lag}, b_{t+lag})` pooled over one or
/// more segments. Quadruples never straddle segment boundaries. Divisor is
/// `n − 1`; `jitter` is added to the diagonal.
pub fn lagged_covariance_pooled(
    segments: &[(&[f64], &[f64])],
    lag: usize,
    jitter: f64,
) -> Result<GaussianCov> {
    if lag == 0 {
        return Err(Error::validation("lag must be at least 1"));
    }
    let mut n = 0usize;
    for (a, b) in segments {
        if a.len() != b.len() {
            return Err(Error::validation(format!(
                "series lengths differ ({} vs {})",
                a.len(),
                b.len()
            )));
        }
        n += a.len().saturating_sub(lag);
    }
    if n < MIN_LAGGED_SAMPLES {
        return Err(Error::Estimation(format!(
            "lag {lag} leaves {n} aligned samples, need at least {MIN_LAGGED_SAMPLES}"
        )));
    }
    let quads = || {
        segments.iter().flat_map(move |(a, b)| {
            (0..a.len().saturating_sub(lag)).map(move |t| [a[t], b[t], a[t + lag], b[t + lag]])
        })
    };
    let mut mean = [0.0; 4];
    for q in quads() {
        for k in 0..4 {
            mean[k] += q[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut m = [0.0; 16];
    for q in quads() {
        let d = [
            q[0] - mean[0],
            q[1] - mean[1],
            q[2] - mean[2],
            q[3] - mean[3],
        ];
        for i in 0..4 {
            for j in i..4 {
                m[i * 4 + j] += d[i] * d[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..4 {
        for j in i..4 {
            m[i * 4 + j] /= denom;
            m[j * 4 + i] = m[i * 4 + j];
        }
    }
    Ok(GaussianCov::new(4, m.to_vec())?.regularised(jitter))
}

/// Lagged covariance of a single pair of series, variable order
/// `a_t, b_t, a_{t+lag}, b_{t+lag}`.
pub fn lagged_covariance(a: &[f64], b: &[f64], lag: usize, jitter: f64) -> Result<GaussianCov> {
    lagged_covariance_pooled(&[(a, b)], lag, jitter)
}

/// Joint probability table over discrete variables, row-major with the last
/// variable varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    shape: Vec<usize>,
    probs: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(shape: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::validation("alphabet sizes must be positive"));
        }
        let len: usize = shape.iter().product();
        if probs.len() != len {
            return Err(Error::validation(format!(
                "table for shape {shape:?} needs {len} entries, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::validation(
                "probabilities must be finite and non-negative",
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { shape, probs })
    }

    /// Plug-in estimate from a table of counts.
    pub fn from_counts(shape: Vec<usize>, counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::validation("no observations"));
        }
        let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Self::new(shape, probs)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_vars(&self) -> usize {
        self.shape.len()
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    /// Marginal over `vars`, in the given order.
    pub fn marginal(&self, vars: &[usize]) -> DiscreteJoint {
        let strides = self.strides();
        let shape: Vec<usize> = vars.iter().map(|&v| self.shape[v]).collect();
        let mut out_strides = vec![1; vars.len()];
        for i in (0..vars.len().saturating_sub(1)).rev() {
            out_strides[i] = out_strides[i + 1] * shape[i + 1];
        }
        let mut probs = vec![0.0; shape.iter().product()];
        for (flat, &p) in self.probs.iter().enumerate() {
            let mut idx = 0;
            for (k, &v) in vars.iter().enumerate() {
                idx += (flat / strides[v]) % self.shape[v] * out_strides[k];
            }
            probs[idx] += p;
        }
        DiscreteJoint { shape, probs }
    }
}

/// Plug-in `I(A; B)` in bits with the `0·log 0 = 0` convention. Variables in
/// neither block are marginalised out.
pub fn discrete_mi(joint: &DiscreteJoint, a: &[usize], b: &[usize]) -> Result<f64> {
    check_blocks(joint.n_vars(), a, b)?;
    let ab: Vec<usize> = a.iter().chain(b).copied().collect();
    let pab = joint.marginal(&ab);
    let pa = joint.marginal(a).probs;
    let pb = joint.marginal(b).probs;
    let nb = pb.len();
    let mut mi = 0.0;
    for (k, &p) in pab.probs.iter().enumerate() {
        if p > 0.0 {
            mi += p * (p / (pa[k / nb] * pb[k % nb])).log2();
        }
    }
    clamp_mi(mi)
}

fn check_trivariate(joint: &DiscreteJoint) -> Result<()> {
    if joint.n_vars() != 3 {
        return Err(Error::validation(format!(
            "PID needs a (Y, X1, X2) table, got {} variables",
            joint.n_vars()
        )));
    }
    Ok(())
}

/// Specific information `I(Y = y; X)` for every `y`, in bits, from the
/// two-variable table `(Y, X)`.
fn specific_information(yx: &DiscreteJoint) -> Vec<f64> {
    let (ny, nx) = (yx.shape[0], yx.shape[1]);
    let px = yx.marginal(&[1]).probs;
    (0..ny)
        .map(|y| {
            let row = &yx.probs[y * nx..(y + 1) * nx];
            let py: f64 = row.iter().sum();
            if py <= 0.0 {
                return 0.0;
            }
            row.iter()
                .zip(&px)
                .filter(|(&pxy, _)| pxy > 0.0)
                .map(|(&pxy, &p)| {
                    let p_x_given_y = pxy / py;
                    p_x_given_y * (p_x_given_y / p).log2()
                })
                .sum()
        })
        .collect()
}

/// Williams–Beer `I_min` redundancy of the sources about `Y` in a
/// `(Y, X1, X2)` table, in bits.
pub fn imin_redundancy(joint: &DiscreteJoint) -> Result<f64> {
    check_trivariate(joint)?;
    let py = joint.marginal(&[0]).probs;
    let s1 = specific_information(&joint.marginal(&[0, 1]));
    let s2 = specific_information(&joint.marginal(&[0, 2]));
    let red: f64 = py
        .iter()
        .zip(s1.iter().zip(&s2))
        .map(|(p, (a, b))| p * a.min(*b))
        .sum();
    Ok(red.max(0.0))
}

/// Two-source partial information decomposition, in bits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidAtoms {
    pub redundant: f64,
    pub unique_1: f64,
    pub unique_2: f64,
    pub synergistic: f64,
}

impl PidAtoms {
    pub fn total(&self) -> f64 {
        self.redundant + self.unique_1 + self.unique_2 + self.synergistic
    }
}

/// PID of a `(Y, X1, X2)` table with `I_min` redundancy.
pub fn pid_atoms(joint: &DiscreteJoint) -> Result<PidAtoms> {
    check_trivariate(joint)?;
    let redundant = imin_redundancy(joint)?;
    let i1 = discrete_mi(joint, &[0], &[1])?;
    let i2 = discrete_mi(joint, &[0], &[2])?;
    let i12 = discrete_mi(joint, &[0], &[1, 2])?;
    let unique_1 = i1 - redundant;
    let unique_2 = i2 - redundant;
    Ok(PidAtoms {
        redundant,
        unique_1,
        unique_2,
        synergistic: i12 - redundant - unique_1 - unique_2,
    })
}
