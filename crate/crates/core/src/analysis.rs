//! Mean and mean-square convergence theory for the quaternion graph LMS.
//!
//! In the spectral domain the error `ŝ = U_Fᵀ (x − x°)` obeys
//!
//! ```text
//! ŝ₀[n+1] = (I − 8μM) ŝ₀[n] + 8μ U_Fᵀ D v₀[n]
//! ŝ_c[n+1] = (I − 4μM) ŝ_c[n] + 4μ U_Fᵀ D v_c[n],   c ∈ {i, j, k}
//! ```
//!
//! with `M = U_Fᵀ D U_F`. Second moments are propagated through the
//! column-stacked weighting vector `φ` using `Q = A ⊗ A`:
//! `E‖ŝ[n]‖²_φ = E‖ŝ[0]‖²_{Qⁿφ} + g² rᵀ Σ_{l<n} Qˡ φ`, `r = vec(G)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eig_sym, kron, power_spectral_radius, vec_cols};
use crate::quat::QSignal;
use crate::sampling::coupling_matrix;
use crate::spectral::vertex_mask;

/// Largest bandwidth for which the `|F|² × |F|²` recursion is built.
pub const MAX_THEORY_BANDWIDTH: usize = 64;
/// `steady_state_msd` requires spectral radii below `1 − STRICT_STABILITY_MARGIN`.
pub const STRICT_STABILITY_MARGIN: f64 = 1e-10;
/// Slack on the operator-norm test in [`stability_report`].
pub const NORM_SLACK: f64 = 1e-12;

/// Per-vertex noise covariance of the scalar plane and of each imaginary plane.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariance {
    pub scalar: DMatrix<f64>,
    /// Shared by the three imaginary planes.
    pub imag: DMatrix<f64>,
}

impl NoiseCovariance {
    /// `σ² I` on every plane.
    pub fn isotropic(sigma2: f64, n: usize) -> Self {
        let c = DMatrix::identity(n, n) * sigma2;
        NoiseCovariance {
            scalar: c.clone(),
            imag: c,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TheoryModel {
    pub m: DMatrix<f64>,
    pub mu: f64,
    /// `I − 8μM`
    pub a_real: DMatrix<f64>,
    /// `I − 4μM`
    pub a_imag: DMatrix<f64>,
    /// `U_Fᵀ D C_v₀ D U_F`
    pub g: DMatrix<f64>,
    /// Per-imaginary-plane analogue of `g`.
    pub g_imag: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_imag: DMatrix<f64>,
}

fn check_square(m: &DMatrix<f64>, k: usize, context: &'static str) -> Result<()> {
    if m.nrows() != k || m.ncols() != k {
        return Err(Error::DimensionMismatch {
            context,
            expected: k,
            got: if m.nrows() != k { m.nrows() } else { m.ncols() },
        });
    }
    Ok(())
}

/// Builds `M`, `G`, `G′` from the band basis, sampling set and noise covariance.
pub fn build_theory(
    u_f: &DMatrix<f64>,
    sample_set: &[usize],
    mu: f64,
    noise: &NoiseCovariance,
) -> Result<TheoryModel> {
    let n = u_f.nrows();
    check_square(&noise.scalar, n, "build_theory scalar covariance")?;
    check_square(&noise.imag, n, "build_theory imaginary covariance")?;
    let m = coupling_matrix(u_f, sample_set)?;
    let du = vertex_mask(sample_set, n)? * u_f;
    let dut = du.transpose();
    let g = &dut * &noise.scalar * &du;
    let g_imag = &dut * &noise.imag * &du;
    TheoryModel::from_parts(m, mu, g, g_imag)
}

impl TheoryModel {
    /// Builds the recursion matrices from `M`, `G` and `G′` directly.
    pub fn from_parts(
        m: DMatrix<f64>,
        mu: f64,
        g: DMatrix<f64>,
        g_imag: DMatrix<f64>,
    ) -> Result<Self> {
        let k = m.nrows();
        check_square(&m, k, "TheoryModel M")?;
        check_square(&g, k, "TheoryModel G")?;
        check_square(&g_imag, k, "TheoryModel G'")?;
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!("step size {mu} must be > 0")));
        }
        if k > MAX_THEORY_BANDWIDTH {
            return Err(Error::InvalidParameter(format!(
                "bandwidth {k} exceeds the theory limit {MAX_THEORY_BANDWIDTH}"
            )));
        }
        let eye = DMatrix::identity(k, k);
        let a_real = &eye - &m * (8.0 * mu);
        let a_imag = &eye - &m * (4.0 * mu);
        let q = kron(&a_real, &a_real);
        let q_imag = kron(&a_imag, &a_imag);
        Ok(TheoryModel {
            m,
            mu,
            a_real,
            a_imag,
            g,
            g_imag,
            q,
            q_imag,
        })
    }

    pub fn bandwidth(&self) -> usize {
        self.m.nrows()
    }

    /// Spectral radii of `Q` and `Q′` by power iteration.
    pub fn power_iteration_radii(&self) -> (f64, f64) {
        (
            power_spectral_radius(&self.q, 1e-12, 100_000),
            power_spectral_radius(&self.q_imag, 1e-12, 100_000),
        )
    }
}

/// `E ŝ[n]` for `n = 0..=iters`, starting from `s_hat0`.
pub fn mean_trajectory(theory: &TheoryModel, s_hat0: &QSignal, iters: usize) -> Result<Vec<QSignal>> {
    let k = theory.bandwidth();
    if s_hat0.len() != k {
        return Err(Error::DimensionMismatch {
            context: "mean_trajectory initial",
            expected: k,
            got: s_hat0.len(),
        });
    }
    let mut out = Vec::with_capacity(iters + 1);
    let mut cur = s_hat0.clone();
    out.push(cur.clone());
    for _ in 0..iters {
        let planes = std::array::from_fn(|c| {
            let a = if c == 0 { &theory.a_real } else { &theory.a_imag };
            a * cur.plane(c)
        });
        cur = QSignal::from_planes(planes)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Second moments `E[ŝ[0] ŝ[0]ᵀ]` of the initial spectral error.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialMoments {
    pub real: DMatrix<f64>,
    /// Sum over the three imaginary planes.
    pub imag: DMatrix<f64>,
}

impl InitialMoments {
    /// Deterministic initial error `ŝ[0]`.
    pub fn from_signal(s0: &QSignal) -> Self {
        InitialMoments::from_signals(std::slice::from_ref(s0))
    }

    /// Sample average over several initial errors.
    pub fn from_signals(s0: &[QSignal]) -> Self {
        let k = s0.first().map_or(0, QSignal::len);
        let mut real = DMatrix::zeros(k, k);
        let mut imag = DMatrix::zeros(k, k);
        for s in s0 {
            real += s.plane(0) * s.plane(0).transpose();
            for c in 1..4 {
                imag += s.plane(c) * s.plane(c).transpose();
            }
        }
        let scale = 1.0 / s0.len().max(1) as f64;
        InitialMoments {
            real: real * scale,
            imag: imag * scale,
        }
    }

    /// Every spectral component i.i.d. with variance `var` on every plane.
    pub fn isotropic(var: f64, k: usize) -> Self {
        InitialMoments {
            real: DMatrix::identity(k, k) * var,
            imag: DMatrix::identity(k, k) * (3.0 * var),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsePoint {
    pub real: f64,
    pub imag: f64,
    pub total: f64,
}

/// `E‖ŝ[n]‖²` (weighting `Φ = I`) for `n = 0..=iters`.
pub fn mse_trajectory(
    theory: &TheoryModel,
    init: &InitialMoments,
    iters: usize,
) -> Result<Vec<MsePoint>> {
    let k = theory.bandwidth();
    mse_trajectory_weighted(theory, init, &DMatrix::identity(k, k), iters)
}

/// `E‖ŝ[n]‖²_Φ` for a symmetric non-negative weighting `Φ`.
pub fn mse_trajectory_weighted(
    theory: &TheoryModel,
    init: &InitialMoments,
    phi: &DMatrix<f64>,
    iters: usize,
) -> Result<Vec<MsePoint>> {
    let k = theory.bandwidth();
    check_square(phi, k, "mse_trajectory weighting")?;
    check_square(&init.real, k, "mse_trajectory initial moments")?;
    check_square(&init.imag, k, "mse_trajectory initial moments")?;

    let mu2 = theory.mu * theory.mu;
    let gain_real = 64.0 * mu2;
    let gain_imag = 16.0 * mu2;
    let r = vec_cols(&theory.g);
    let r_imag = vec_cols(&theory.g_imag);
    let init_real = vec_cols(&init.real);
    let init_imag = vec_cols(&init.imag);

    let phi0 = vec_cols(phi);
    let mut phi_real = phi0.clone();
    let mut phi_imag = phi0;
    let mut acc_real = DVector::zeros(k * k);
    let mut acc_imag = DVector::zeros(k * k);

    let mut out = Vec::with_capacity(iters + 1);
    for n in 0..=iters {
        let real = init_real.dot(&phi_real) + gain_real * r.dot(&acc_real);
        let imag = init_imag.dot(&phi_imag) + 3.0 * gain_imag * r_imag.dot(&acc_imag);
        out.push(MsePoint {
            real,
            imag,
            total: real + imag,
        });
        if n < iters {
            acc_real += &phi_real;
            acc_imag += &phi_imag;
            phi_real = &theory.q * &phi_real;
            phi_imag = &theory.q_imag * &phi_imag;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub msd_real: f64,
    pub msd_imag_total: f64,
    pub msd_total: f64,
}

/// Limit of [`mse_trajectory`]: `g² rᵀ (I − Q)⁻¹ vec(I)` per plane group.
pub fn steady_state_msd(theory: &TheoryModel) -> Result<SteadyState> {
    let report = stability_report(&theory.m, theory.mu)?;
    let rho = report.rho_q.max(report.rho_q_imag);
    if rho >= 1.0 - STRICT_STABILITY_MARGIN {
        return Err(Error::NotStrictlyStable(rho));
    }
    let k = theory.bandwidth();
    let kk = k * k;
    let target = vec_cols(&DMatrix::identity(k, k));
    let solve = |q: &DMatrix<f64>| -> Result<DVector<f64>> {
        (DMatrix::identity(kk, kk) - q)
            .lu()
            .solve(&target)
            .ok_or(Error::NotStrictlyStable(rho))
    };
    let z_real = solve(&theory.q)?;
    let z_imag = solve(&theory.q_imag)?;
    let mu2 = theory.mu * theory.mu;
    let msd_real = 64.0 * mu2 * vec_cols(&theory.g).dot(&z_real);
    let msd_imag_total = 3.0 * 16.0 * mu2 * vec_cols(&theory.g_imag).dot(&z_imag);
    Ok(SteadyState {
        msd_real,
        msd_imag_total,
        msd_total: msd_real + msd_imag_total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub norm_a_real: f64,
    pub norm_a_imag: f64,
    pub rho_q: f64,
    pub rho_q_imag: f64,
    pub mean_stable: bool,
    pub mse_stable: bool,
}

/// Operator norms of `I − 8μM`, `I − 4μM` and spectral radii of their Kronecker squares.
pub fn stability_report(m: &DMatrix<f64>, mu: f64) -> Result<StabilityReport> {
    let k = m.nrows();
    check_square(m, k, "stability_report M")?;
    let eye = DMatrix::identity(k, k);
    // Symmetric: operator 2-norm = spectral radius, and ρ(A ⊗ A) = ρ(A)².
    let norm_a_real = eig_sym(&(&eye - m * (8.0 * mu)))?.spectral_radius();
    let norm_a_imag = eig_sym(&(&eye - m * (4.0 * mu)))?.spectral_radius();
    let rho_q = norm_a_real * norm_a_real;
    let rho_q_imag = norm_a_imag * norm_a_imag;
    Ok(StabilityReport {
        norm_a_real,
        norm_a_imag,
        rho_q,
        rho_q_imag,
        mean_stable: norm_a_real <= 1.0 + NORM_SLACK && norm_a_imag <= 1.0 + NORM_SLACK,
        mse_stable: rho_q < 1.0 - NORM_SLACK && rho_q_imag < 1.0 - NORM_SLACK,
    })
}
