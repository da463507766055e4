//! Spectral checks behind the batch TD convergence argument.
//!
//! For the visited non-terminal states, the expected presentation update in
//! value space is `D (c - K v)` with `K = I - gamma Q` for plain TD. With
//! features the iteration matrix is `I - alpha M`, `M = X^T X D K`.

use nalgebra::{Complex, DMatrix};
use serde::Serialize;

use crate::empirical::CEMatrixForm;
use crate::error::{Error, Result};

/// Smallest eigenvalue of the symmetric part still accepted as positive.
pub const PD_TOL: f64 = -1e-10;

/// Which presentation update the matrices describe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationKind {
    /// Plain TD: `D (I - gamma Q)`.
    Td,
    /// PSEC weight on the target: `D (I - gamma U)`.
    PsecEstimate,
    /// PSEC weight on the TD-error: `D (diag(sigma) - gamma U)`, with `sigma`
    /// the evaluation-policy mass on observed actions.
    PsecTdError,
}

impl IterationKind {
    pub const ALL: [IterationKind; 3] = [IterationKind::Td, IterationKind::PsecEstimate, IterationKind::PsecTdError];
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralBlock {
    pub kind: IterationKind,
    /// Weak dominance in every row of `S` with strict dominance in one.
    pub diagonally_dominant: bool,
    pub min_symmetric_eigenvalue: f64,
    pub positive_definite: bool,
    /// Eigenvalues of `M` as `[re, im]`.
    pub eigenvalues: Vec<[f64; 2]>,
    pub all_real_parts_positive: bool,
    /// `min 2a / (a^2 + b^2)` over the eigenvalues `a + bi` of `M`.
    pub alpha_ceiling: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub n_states: usize,
    /// False when the batch holds no completed episode, so no row of the
    /// chain leaks to a terminal and the dominance argument does not apply.
    pub premises_met: bool,
    pub blocks: Vec<SpectralBlock>,
}

impl ConvergenceReport {
    pub fn block(&self, kind: IterationKind) -> &SpectralBlock {
        self.blocks.iter().find(|b| b.kind == kind).expect("every kind is analysed")
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct StabilityReport {
    pub stable: bool,
    pub spectral_radius: f64,
    pub alpha_ceiling: f64,
}

/// `D K` for the given update.
pub fn update_matrix(mf: &CEMatrixForm, gamma: f64, kind: IterationKind) -> DMatrix<f64> {
    let n = mf.len();
    let k = match kind {
        IterationKind::Td => DMatrix::identity(n, n) - &mf.q * gamma,
        IterationKind::PsecEstimate => DMatrix::identity(n, n) - &mf.u * gamma,
        IterationKind::PsecTdError => DMatrix::from_diagonal(&mf.eval_support) - &mf.u * gamma,
    };
    DMatrix::from_diagonal(&mf.d) * k
}

/// `M = X^T X D K`.
pub fn iteration_matrix(mf: &CEMatrixForm, gamma: f64, kind: IterationKind) -> DMatrix<f64> {
    mf.x.transpose() * &mf.x * update_matrix(mf, gamma, kind)
}

fn check_features(mf: &CEMatrixForm) -> Result<()> {
    if mf.is_empty() {
        return Err(Error::Precondition("batch visits no non-terminal state".into()));
    }
    let gram = mf.x.transpose() * &mf.x;
    if mf.x.nrows() < mf.len() || gram.rank(1e-10 * gram.norm().max(1.0)) < mf.len() {
        return Err(Error::Precondition("features are linearly dependent on the visited states".into()));
    }
    Ok(())
}

fn ceiling(eigs: &[Complex<f64>]) -> f64 {
    eigs.iter()
        .map(|l| if l.re <= 0.0 { 0.0 } else { 2.0 * l.re / l.norm_sqr() })
        .fold(f64::INFINITY, f64::min)
}

fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut e: Vec<Complex<f64>> = m.complex_eigenvalues().iter().copied().collect();
    e.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    e
}

fn dominance(s: &DMatrix<f64>) -> bool {
    let mut strict = false;
    for i in 0..s.nrows() {
        let off: f64 = (0..s.ncols()).filter(|&j| j != i).map(|j| s[(i, j)].abs()).sum();
        let diag = s[(i, i)];
        let slack = 1e-12 * diag.abs().max(1.0);
        if diag + slack < off {
            return false;
        }
        if diag > off + slack {
            strict = true;
        }
    }
    strict
}

fn block(mf: &CEMatrixForm, gamma: f64, kind: IterationKind) -> SpectralBlock {
    let k = update_matrix(mf, gamma, kind);
    let s = &k + k.transpose();
    let min_sym = s.clone().symmetric_eigen().eigenvalues.min();
    let eigs = eigenvalues(&(mf.x.transpose() * &mf.x * k));
    SpectralBlock {
        kind,
        diagonally_dominant: dominance(&s),
        min_symmetric_eigenvalue: min_sym,
        positive_definite: min_sym > PD_TOL,
        all_real_parts_positive: eigs.iter().all(|l| l.re > 0.0),
        alpha_ceiling: ceiling(&eigs),
        eigenvalues: eigs.iter().map(|l| [l.re, l.im]).collect(),
    }
}

pub fn check_convergence_conditions(mf: &CEMatrixForm, gamma: f64) -> Result<ConvergenceReport> {
    check_features(mf)?;
    Ok(ConvergenceReport {
        n_states: mf.len(),
        premises_met: mf.completed_episodes > 0,
        blocks: IterationKind::ALL.iter().map(|&k| block(mf, gamma, k)).collect(),
    })
}

/// Spectral radius of `I - alpha M` for plain TD.
pub fn alpha_stability(mf: &CEMatrixForm, gamma: f64, alpha: f64) -> Result<StabilityReport> {
    alpha_stability_for(mf, gamma, alpha, IterationKind::Td)
}

pub fn alpha_stability_for(mf: &CEMatrixForm, gamma: f64, alpha: f64, kind: IterationKind) -> Result<StabilityReport> {
    check_features(mf)?;
    let eigs = eigenvalues(&iteration_matrix(mf, gamma, kind));
    Ok(radius_report(&eigs, alpha))
}

fn radius_report(eigs: &[Complex<f64>], alpha: f64) -> StabilityReport {
    let one = Complex::new(1.0, 0.0);
    let radius = eigs.iter().map(|l| (one - l * alpha).norm()).fold(0.0, f64::max);
    StabilityReport { stable: radius < 1.0, spectral_radius: radius, alpha_ceiling: ceiling(eigs) }
}
