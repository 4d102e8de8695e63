//! Sampling-set selection and the diagnostics that depend on the chosen set.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::eig_sym;
use crate::rng::{self, StreamRng};

/// Eigenvalues at or below this count as zero in the pseudo-determinant.
pub const PSEUDO_DET_EPS: f64 = 1e-12;
/// `recoverable` requires `λ_min(M)` strictly above this.
pub const RECOVERABLE_EPS: f64 = 1e-8;
/// `mu_bound` refuses `λ_max(M)` at or below this.
pub const BAND_VISIBLE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    MaxDet,
    Random,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::MaxDet => "maxdet",
            Strategy::Random => "random",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "maxdet" | "max-det" => Ok(Strategy::MaxDet),
            "random" => Ok(Strategy::Random),
            other => Err(format!("unknown sampling strategy '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub strategy: Strategy,
    pub sample_set: Vec<usize>,
    /// Log-pseudo-determinant reached by the greedy selection.
    pub score: Option<f64>,
    pub seed: Option<u64>,
}

/// Rank and log-pseudo-determinant of `U_Sᵀ U_S`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PseudoDet {
    rank: usize,
    log: f64,
}

impl PseudoDet {
    /// Higher rank wins, then higher log-pseudo-determinant.
    fn cmp(&self, other: &PseudoDet) -> Ordering {
        self.rank
            .cmp(&other.rank)
            .then_with(|| self.log.total_cmp(&other.log))
    }
}

fn pseudo_det(gram: &DMatrix<f64>) -> Result<PseudoDet> {
    let eig = eig_sym(gram)?;
    let mut rank = 0;
    let mut log = 0.0;
    for &v in eig.values.iter() {
        if v > PSEUDO_DET_EPS {
            rank += 1;
            log += v.ln();
        }
    }
    Ok(PseudoDet { rank, log })
}

/// Log-pseudo-determinant of `U_Sᵀ U_S` for the rows `rows` of `u_f`.
pub fn log_pseudo_det(u_f: &DMatrix<f64>, rows: &[usize]) -> Result<f64> {
    let k = u_f.ncols();
    let mut gram = DMatrix::zeros(k, k);
    for &r in rows {
        if r >= u_f.nrows() {
            return Err(Error::IndexOutOfRange {
                index: r,
                size: u_f.nrows(),
            });
        }
        let row = u_f.row(r);
        gram += row.transpose() * row;
    }
    Ok(pseudo_det(&gram)?.log)
}

/// Greedy Max-Det selection over the rows of `U_F`.
///
/// Each step adds the vertex that maximizes the rank of `U_Sᵀ U_S` and,
/// among equal ranks, its log-pseudo-determinant. Ties go to the smallest
/// vertex index.
pub fn maxdet_select(u_f: &DMatrix<f64>, budget: usize) -> Result<SamplingPlan> {
    let n = u_f.nrows();
    check_budget(budget, n)?;
    let k = u_f.ncols();
    let mut gram = DMatrix::zeros(k, k);
    let mut chosen = vec![false; n];
    let mut selected = Vec::with_capacity(budget);
    let mut score = 0.0;

    for _ in 0..budget {
        let mut best: Option<(usize, PseudoDet, DMatrix<f64>)> = None;
        for v in (0..n).filter(|&v| !chosen[v]) {
            let row = u_f.row(v);
            let candidate = &gram + row.transpose() * row;
            let pd = pseudo_det(&candidate)?;
            let better = match &best {
                None => true,
                Some((_, b, _)) => pd.cmp(b) == Ordering::Greater,
            };
            if better {
                best = Some((v, pd, candidate));
            }
        }
        let (v, pd, g) = best.expect("budget <= n leaves a candidate");
        chosen[v] = true;
        selected.push(v);
        gram = g;
        score = pd.log;
    }
    selected.sort_unstable();
    Ok(SamplingPlan {
        strategy: Strategy::MaxDet,
        sample_set: selected,
        score: Some(score),
        seed: None,
    })
}

/// Uniform sample of `budget` vertices without replacement.
pub fn random_select(n: usize, budget: usize, seed: u64) -> Result<SamplingPlan> {
    let mut rng = rng::seeded(seed);
    let mut plan = random_select_with(n, budget, &mut rng)?;
    plan.seed = Some(seed);
    Ok(plan)
}

pub fn random_select_with(n: usize, budget: usize, rng: &mut StreamRng) -> Result<SamplingPlan> {
    check_budget(budget, n)?;
    let mut set = index::sample(rng, n, budget).into_vec();
    set.sort_unstable();
    Ok(SamplingPlan {
        strategy: Strategy::Random,
        sample_set: set,
        score: None,
        seed: None,
    })
}

fn check_budget(budget: usize, n: usize) -> Result<()> {
    if budget == 0 || budget > n {
        return Err(Error::InvalidParameter(format!(
            "sampling budget {budget} not in 1..={n}"
        )));
    }
    Ok(())
}

/// `M = U_Fᵀ D U_F` with `D` the indicator of `sample_set`.
pub fn coupling_matrix(u_f: &DMatrix<f64>, sample_set: &[usize]) -> Result<DMatrix<f64>> {
    let u_s = select_rows_checked(u_f, sample_set)?;
    Ok(u_s.transpose() * u_s)
}

fn select_rows_checked(u_f: &DMatrix<f64>, rows: &[usize]) -> Result<DMatrix<f64>> {
    if let Some(&bad) = rows.iter().find(|&&r| r >= u_f.nrows()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            size: u_f.nrows(),
        });
    }
    Ok(u_f.select_rows(rows))
}

/// Largest admissible step size `1 / (4 λ_max(M))`.
pub fn mu_bound(m: &DMatrix<f64>) -> Result<f64> {
    let lambda_max = eig_sym(m)?.max();
    if lambda_max <= BAND_VISIBLE_EPS {
        return Err(Error::BandNotObserved(lambda_max));
    }
    Ok(1.0 / (4.0 * lambda_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recoverability {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub recoverable: bool,
}

pub fn recoverability_check(m: &DMatrix<f64>) -> Result<Recoverability> {
    let eig = eig_sym(m)?;
    let lambda_min = eig.min();
    Ok(Recoverability {
        lambda_min,
        lambda_max: eig.max(),
        recoverable: lambda_min > RECOVERABLE_EPS,
    })
}
