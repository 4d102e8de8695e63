//! Streaming observation model, the quaternion graph LMS recursion and the
//! four-channel real graph LMS baseline.
//!
//! With `e = y − D B x` the quaternion update is
//! `x ← x + 4μ B D (e₀ + e)`, where `e₀` is the scalar plane of `e` promoted
//! to a quaternion signal. Per plane this is a gain of `8μ` on the scalar
//! plane and `4μ` on each imaginary plane.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quat::QSignal;
use crate::spectral::{mask_diagonal, SpectralGraph, Support};

/// Reference signals with norm below this make NMSE undefined.
pub const MIN_REFERENCE_NORM: f64 = 1e-12;
/// Relative tolerance for `B x° = x°` when building an observation model.
pub const BAND_LIMIT_TOL: f64 = 1e-9;

/// `y[n] = D (x° + v[n])` with i.i.d. Gaussian noise on every real component.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    x_true: QSignal,
    support: Support,
    mask: DVector<f64>,
    b: DMatrix<f64>,
    u_f: DMatrix<f64>,
    noise_sigma2: f64,
}

impl ObservationModel {
    pub fn new(
        sg: &SpectralGraph,
        support: Support,
        x_true: QSignal,
        noise_sigma2: f64,
    ) -> Result<Self> {
        let n = sg.n();
        if x_true.len() != n {
            return Err(Error::DimensionMismatch {
                context: "ObservationModel x_true",
                expected: n,
                got: x_true.len(),
            });
        }
        if !(noise_sigma2 >= 0.0) || !noise_sigma2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise variance {noise_sigma2} must be finite and >= 0"
            )));
        }
        let u_f = sg.u_f(support.freq_set())?;
        let b = &u_f * u_f.transpose();
        let leak = x_true.apply_real_matrix(&b)?.sub(&x_true)?.qnorm();
        if leak > BAND_LIMIT_TOL * x_true.qnorm().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "x_true is not band-limited on F (residual {leak:e})"
            )));
        }
        let mask = mask_diagonal(support.sample_set(), n)?;
        Ok(ObservationModel {
            x_true,
            support,
            mask,
            b,
            u_f,
            noise_sigma2,
        })
    }

    pub fn n(&self) -> usize {
        self.mask.len()
    }

    pub fn x_true(&self) -> &QSignal {
        &self.x_true
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    /// Diagonal of the vertex mask `D`.
    pub fn mask(&self) -> &DVector<f64> {
        &self.mask
    }

    pub fn band_projector(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn u_f(&self) -> &DMatrix<f64> {
        &self.u_f
    }

    pub fn noise_sigma2(&self) -> f64 {
        self.noise_sigma2
    }

    /// Draws one noisy, masked observation. Noise is drawn for every vertex
    /// (plane-major order) so the stream does not depend on the sampling set.
    pub fn observe(&self, rng: &mut impl Rng) -> QSignal {
        let sigma = self.noise_sigma2.sqrt();
        let n = self.n();
        let planes = std::array::from_fn(|c| {
            let x = self.x_true.plane(c);
            DVector::from_fn(n, |v, _| {
                let noise: f64 = rng.sample(StandardNormal);
                if self.mask[v] == 0.0 {
                    0.0
                } else {
                    x[v] + sigma * noise
                }
            })
        });
        QSignal::from_planes(planes).expect("planes share length n")
    }
}

/// Current estimate `x[n]`, step size and iteration count.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x_hat: QSignal,
    pub mu: f64,
    pub iter: usize,
}

impl FilterState {
    /// Zero initial estimate; any positive step size.
    pub fn new(n: usize, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!("step size {mu} must be > 0")));
        }
        Ok(FilterState {
            x_hat: QSignal::zeros(n),
            mu,
            iter: 0,
        })
    }

    /// Like [`new`](Self::new) but rejects `mu` above `bound`.
    pub fn checked(n: usize, mu: f64, bound: f64) -> Result<Self> {
        if mu > bound {
            return Err(Error::StepSizeTooLarge { mu, bound });
        }
        FilterState::new(n, mu)
    }
}

fn check_dims(context: &'static str, n: usize, got: usize) -> Result<()> {
    if n != got {
        return Err(Error::DimensionMismatch {
            context,
            expected: n,
            got,
        });
    }
    Ok(())
}

/// `y − D B x` for one real plane.
fn plane_error(y: &DVector<f64>, mask: &DVector<f64>, b: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    y - (b * x).component_mul(mask)
}

/// `gain · B D r` for one real plane.
fn plane_increment(b: &DMatrix<f64>, mask: &DVector<f64>, r: &DVector<f64>, gain: f64) -> DVector<f64> {
    (b * r.component_mul(mask)) * gain
}

/// Error signal `e = y − D B x̂`.
pub fn error_signal(
    state: &FilterState,
    y: &QSignal,
    mask: &DVector<f64>,
    b: &DMatrix<f64>,
) -> Result<QSignal> {
    let n = mask.len();
    check_dims("error_signal y", n, y.len())?;
    check_dims("error_signal x_hat", n, state.x_hat.len())?;
    check_dims("error_signal B", n, b.nrows())?;
    let planes = std::array::from_fn(|c| plane_error(y.plane(c), mask, b, state.x_hat.plane(c)));
    QSignal::from_planes(planes)
}

/// One quaternion graph LMS step in quaternion form: `x + 4μ B D (e₀ + e)`.
pub fn qglms_step(state: &FilterState, y: &QSignal, model: &ObservationModel) -> Result<FilterState> {
    let e = error_signal(state, y, &model.mask, &model.b)?;
    let driven = e.real_part().add(&e)?;
    let gain = 4.0 * state.mu;
    let planes = std::array::from_fn(|c| {
        state.x_hat.plane(c) + plane_increment(&model.b, &model.mask, driven.plane(c), gain)
    });
    Ok(FilterState {
        x_hat: QSignal::from_planes(planes)?,
        mu: state.mu,
        iter: state.iter + 1,
    })
}

/// The same step written per plane: gain `8μ` on the scalar plane and `4μ` on
/// each imaginary plane. Bit-identical to [`qglms_step`].
pub fn qglms_step_components(
    state: &FilterState,
    y: &QSignal,
    model: &ObservationModel,
) -> Result<FilterState> {
    let e = error_signal(state, y, &model.mask, &model.b)?;
    let planes = std::array::from_fn(|c| {
        let gain = if c == 0 { 8.0 * state.mu } else { 4.0 * state.mu };
        state.x_hat.plane(c) + plane_increment(&model.b, &model.mask, e.plane(c), gain)
    });
    Ok(FilterState {
        x_hat: QSignal::from_planes(planes)?,
        mu: state.mu,
        iter: state.iter + 1,
    })
}

/// Four independent real graph LMS filters, one per plane:
/// `x_c ← x_c + μ_r B D (y_c − D B x_c)`. `states.mu` is ignored in favour of `mu_r`.
pub fn rlms_step(
    states: &FilterState,
    y: &QSignal,
    mask: &DVector<f64>,
    b: &DMatrix<f64>,
    mu_r: f64,
) -> Result<FilterState> {
    let e = error_signal(states, y, mask, b)?;
    let planes =
        std::array::from_fn(|c| states.x_hat.plane(c) + plane_increment(b, mask, e.plane(c), mu_r));
    Ok(FilterState {
        x_hat: QSignal::from_planes(planes)?,
        mu: states.mu,
        iter: states.iter + 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Qglms,
    Rlms,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Qglms => "qglms",
            Algorithm::Rlms => "rlms",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "qglms" => Ok(Algorithm::Qglms),
            "rlms" => Ok(Algorithm::Rlms),
            other => Err(format!("unknown algorithm '{other}'")),
        }
    }
}

/// Per-iteration record of one filter run. Entry `k` describes `x[k+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub nmse: Vec<f64>,
    /// `‖U_Fᵀ (x − x°)‖²` on the scalar plane.
    pub spectral_real: Vec<f64>,
    /// The same summed over the three imaginary planes.
    pub spectral_imag: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.nmse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nmse.is_empty()
    }
}

/// `‖x − x°‖ / ‖x°‖`.
pub fn nmse(x: &QSignal, x_true: &QSignal) -> Result<f64> {
    let r = x_true.qnorm();
    if r < MIN_REFERENCE_NORM {
        return Err(Error::ZeroReference);
    }
    Ok(x.sub(x_true)?.qnorm() / r)
}

pub fn nmse_db(nmse: f64) -> f64 {
    20.0 * nmse.log10()
}

/// Runs `iters` steps from `x[0] = 0`, drawing a fresh observation per step.
///
/// `step` is `μ` for QGLMS and `μ_r` for the RLMS baseline.
pub fn run_filter(
    model: &ObservationModel,
    algorithm: Algorithm,
    step: f64,
    iters: usize,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if iters == 0 {
        return Err(Error::InvalidParameter("iters must be >= 1".into()));
    }
    let reference = model.x_true.qnorm();
    if reference < MIN_REFERENCE_NORM {
        return Err(Error::ZeroReference);
    }
    let mut state = FilterState::new(model.n(), step)?;
    let ut = model.u_f.transpose();
    let mut out = Trajectory {
        nmse: Vec::with_capacity(iters),
        spectral_real: Vec::with_capacity(iters),
        spectral_imag: Vec::with_capacity(iters),
    };
    for _ in 0..iters {
        let y = model.observe(rng);
        state = match algorithm {
            Algorithm::Qglms => qglms_step(&state, &y, model)?,
            Algorithm::Rlms => rlms_step(&state, &y, &model.mask, &model.b, step)?,
        };
        let err = state.x_hat.sub(&model.x_true)?;
        out.nmse.push(err.qnorm() / reference);
        let spec: [f64; 4] = std::array::from_fn(|c| (&ut * err.plane(c)).norm_squared());
        out.spectral_real.push(spec[0]);
        out.spectral_imag.push(spec[1] + spec[2] + spec[3]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::Quaternion;
    use crate::rng::seeded;
    use crate::sampling::{coupling_matrix, maxdet_select, mu_bound};
    use crate::spectral::gen_er_graph;

    struct Setup {
        sg: SpectralGraph,
        f: Vec<usize>,
    }

    fn setup(n: usize, seed: u64) -> Setup {
        Setup {
            sg: SpectralGraph::new(gen_er_graph(n, 0.2, seed).unwrap()).unwrap(),
            f: (0..6).collect(),
        }
    }

    fn band_limited(sg: &SpectralGraph, f: &[usize], seed: u64) -> QSignal {
        let mut rng = seeded(seed);
        let coeffs: Vec<Quaternion> = f
            .iter()
            .map(|_| Quaternion::from(std::array::from_fn(|_| rng.random_range(-2.0..2.0))))
            .collect();
        QSignal::from_entries(&coeffs)
            .unwrap()
            .apply_real_matrix(&sg.u_f(f).unwrap())
            .unwrap()
    }

    fn random_signal(n: usize, seed: u64) -> QSignal {
        let mut rng = seeded(seed);
        let e: Vec<Quaternion> = (0..n)
            .map(|_| Quaternion::from(std::array::from_fn(|_| rng.random_range(-1.0..1.0))))
            .collect();
        QSignal::from_entries(&e).unwrap()
    }

    fn model_with(s: &Setup, sample_set: Vec<usize>, sigma2: f64, seed: u64) -> ObservationModel {
        let x = band_limited(&s.sg, &s.f, seed);
        let support = Support::new(s.f.clone(), sample_set, s.sg.n()).unwrap();
        ObservationModel::new(&s.sg, support, x, sigma2).unwrap()
    }

    #[test]
    fn model_rejects_out_of_band_truth() {
        let s = setup(20, 1);
        let support = Support::new(s.f.clone(), vec![0, 1], 20).unwrap();
        let x = random_signal(20, 3);
        assert!(ObservationModel::new(&s.sg, support.clone(), x, 0.0).is_err());
        let x = band_limited(&s.sg, &s.f, 2);
        assert!(ObservationModel::new(&s.sg, support, x, -1.0).is_err());
    }

    #[test]
    fn noise_free_full_observation_is_exact() {
        let s = setup(20, 1);
        let m = model_with(&s, (0..20).collect(), 0.0, 4);
        assert_eq!(m.observe(&mut seeded(0)), *m.x_true());
    }

    #[test]
    fn observation_is_zero_off_support() {
        let s = setup(20, 1);
        let m = model_with(&s, vec![2, 5, 11], 0.5, 4);
        let y = m.observe(&mut seeded(1));
        for v in (0..20).filter(|v| ![2, 5, 11].contains(v)) {
            assert_eq!(y.entry(v), Quaternion::ZERO);
        }
    }

    #[test]
    fn observation_noise_variance() {
        let s = setup(12, 1);
        let m = model_with(&s, (0..12).collect(), 0.01, 4);
        let mut rng = seeded(2);
        let draws = 100_000 / 12 + 1;
        let mut sum = [0.0; 4];
        let mut sum_sq = [0.0; 4];
        let mut count = 0.0;
        for _ in 0..draws {
            let v = m.observe(&mut rng).sub(m.x_true()).unwrap();
            for c in 0..4 {
                sum[c] += v.plane(c).sum();
                sum_sq[c] += v.plane(c).norm_squared();
            }
            count += 12.0;
        }
        for c in 0..4 {
            let mean = sum[c] / count;
            let var = sum_sq[c] / count - mean * mean;
            assert!((var - 0.01).abs() <= 0.03 * 0.01, "plane {c}: {var}");
        }
    }

    #[test]
    fn error_signal_examples() {
        let s = setup(20, 1);
        let m = model_with(&s, vec![0, 3, 7, 8], 0.0, 4);
        let mut st = FilterState::new(20, 0.1).unwrap();
        st.x_hat = m.x_true().clone();
        let y = m.observe(&mut seeded(1));
        assert!(error_signal(&st, &y, m.mask(), m.band_projector()).unwrap().qnorm() <= 1e-12);

        let zero = FilterState::new(20, 0.1).unwrap();
        assert_eq!(error_signal(&zero, &y, m.mask(), m.band_projector()).unwrap(), y);

        let mut st = FilterState::new(20, 0.1).unwrap();
        st.x_hat = random_signal(20, 5);
        let e = error_signal(&st, &y, m.mask(), m.band_projector()).unwrap();
        for v in (0..20).filter(|v| ![0, 3, 7, 8].contains(v)) {
            assert_eq!(e.entry(v), Quaternion::ZERO);
        }
        assert!(error_signal(&st, &QSignal::zeros(3), m.mask(), m.band_projector()).is_err());
    }

    #[test]
    fn zero_error_is_fixed_point() {
        let s = setup(20, 1);
        let m = model_with(&s, vec![0, 3, 7, 8, 9, 14], 0.0, 4);
        let mut st = FilterState::new(20, 0.05).unwrap();
        st.x_hat = m.x_true().clone();
        let y = m.observe(&mut seeded(1));
        let next = qglms_step(&st, &y, &m).unwrap();
        assert!(next.x_hat.sub(m.x_true()).unwrap().qnorm() <= 1e-12);
        assert_eq!(next.iter, 1);
        let r = rlms_step(&st, &y, m.mask(), m.band_projector(), 0.2).unwrap();
        assert!(r.x_hat.sub(m.x_true()).unwrap().qnorm() <= 1e-12);
    }

    #[test]
    fn one_step_scalar_recovery_with_full_operators() {
        // D = B = I, μ = 1/8: scalar contraction 1 − 8μ = 0, imaginary 1 − 4μ = 1/2.
        let s = setup(10, 2);
        let all: Vec<usize> = (0..10).collect();
        let x = band_limited(&s.sg, &all, 8);
        let support = Support::new(all.clone(), all, 10).unwrap();
        let m = ObservationModel::new(&s.sg, support, x.clone(), 0.0).unwrap();
        let st = FilterState::new(10, 0.125).unwrap();
        let y = m.observe(&mut seeded(0));
        let next = qglms_step(&st, &y, &m).unwrap();
        assert!((next.x_hat.plane(0) - x.plane(0)).amax() <= 1e-12);
        for c in 1..4 {
            assert!((next.x_hat.plane(c) - x.plane(c) * 0.5).amax() <= 1e-12);
        }
        // RLMS with μ_r = 1 recovers every plane in one step.
        let r = rlms_step(&st, &y, m.mask(), m.band_projector(), 1.0).unwrap();
        assert!(r.x_hat.sub(&x).unwrap().qnorm() <= 1e-12);
    }

    #[test]
    fn quaternion_and_component_forms_are_bit_identical() {
        let s = setup(30, 3);
        for seed in 0..10 {
            let m = model_with(&s, vec![1, 4, 6, 9, 13, 17, 21, 22, 28], 0.01, seed);
            let mut st = FilterState::new(30, 0.01 + 0.003 * seed as f64).unwrap();
            st.x_hat = random_signal(30, seed + 100).apply_real_matrix(m.band_projector()).unwrap();
            let y = m.observe(&mut seeded(seed));
            let a = qglms_step(&st, &y, &m).unwrap();
            let b = qglms_step_components(&st, &y, &m).unwrap();
            for c in 0..4 {
                let bits_a: Vec<u64> = a.x_hat.plane(c).iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.x_hat.plane(c).iter().map(|v| v.to_bits()).collect();
                assert_eq!(bits_a, bits_b);
            }
        }
    }

    #[test]
    fn rlms_matches_qglms_imaginary_planes_at_four_mu() {
        let s = setup(30, 3);
        let m = model_with(&s, vec![0, 2, 5, 8, 11, 15, 19, 24], 0.01, 1);
        let mu = 0.03;
        let mut st = FilterState::new(30, mu).unwrap();
        st.x_hat = random_signal(30, 9).apply_real_matrix(m.band_projector()).unwrap();
        let y = m.observe(&mut seeded(3));
        let q = qglms_step(&st, &y, &m).unwrap();
        let r = rlms_step(&st, &y, m.mask(), m.band_projector(), 4.0 * mu).unwrap();
        for c in 1..4 {
            assert_eq!(q.x_hat.plane(c), r.x_hat.plane(c));
        }
        assert_ne!(q.x_hat.plane(0), r.x_hat.plane(0));
    }

    #[test]
    fn rlms_planes_are_independent() {
        let s = setup(25, 4);
        let m = model_with(&s, vec![0, 3, 6, 10, 12, 18, 20], 0.01, 2);
        let st = FilterState::new(25, 0.1).unwrap();
        let y = m.observe(&mut seeded(5));
        let mut y_pert = y.clone();
        *y_pert.plane_mut(2) += DVector::from_element(25, 0.7).component_mul(m.mask());
        let a = rlms_step(&st, &y, m.mask(), m.band_projector(), 0.3).unwrap();
        let b = rlms_step(&st, &y_pert, m.mask(), m.band_projector(), 0.3).unwrap();
        for c in [0, 1, 3] {
            assert_eq!(a.x_hat.plane(c), b.x_hat.plane(c));
        }
        assert_ne!(a.x_hat.plane(2), b.x_hat.plane(2));

        let mut y_zero = y.clone();
        *y_zero.plane_mut(1) = DVector::zeros(25);
        let mut st = st;
        for _ in 0..20 {
            st = rlms_step(&st, &y_zero, m.mask(), m.band_projector(), 0.3).unwrap();
        }
        assert!(st.x_hat.plane(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checked_state_rejects_large_step() {
        assert!(matches!(
            FilterState::checked(5, 0.3, 0.25),
            Err(Error::StepSizeTooLarge { .. })
        ));
        assert!(FilterState::checked(5, 0.25, 0.25).is_ok());
        assert!(FilterState::new(5, 0.0).is_err());
    }

    fn recoverable_model(sigma2: f64) -> (ObservationModel, f64) {
        let s = setup(30, 6);
        let u = s.sg.u_f(&s.f).unwrap();
        let plan = maxdet_select(&u, 10).unwrap();
        let bound = mu_bound(&coupling_matrix(&u, &plan.sample_set).unwrap()).unwrap();
        (model_with(&s, plan.sample_set, sigma2, 7), bound)
    }

    #[test]
    fn noise_free_run_is_monotone_and_converges() {
        let (m, bound) = recoverable_model(0.0);
        let traj = run_filter(&m, Algorithm::Qglms, 0.5 * bound, 5000, &mut seeded(1)).unwrap();
        // above the rounding floor
        for (k, w) in traj.nmse.windows(2).enumerate().filter(|(_, w)| w[0] > 1e-12) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "k={k} {} -> {}", w[0], w[1]);
        }
        assert!(*traj.nmse.last().unwrap() < 1e-8);
    }

    #[test]
    fn run_is_deterministic_and_band_limited() {
        let (m, bound) = recoverable_model(0.01);
        let a = run_filter(&m, Algorithm::Qglms, 0.5 * bound, 200, &mut seeded(3)).unwrap();
        let b = run_filter(&m, Algorithm::Qglms, 0.5 * bound, 200, &mut seeded(3)).unwrap();
        assert_eq!(a, b);

        let mut st = FilterState::new(m.n(), 0.5 * bound).unwrap();
        let mut rng = seeded(4);
        for _ in 0..200 {
            st = qglms_step(&st, &m.observe(&mut rng), &m).unwrap();
            let leak = st.x_hat.apply_real_matrix(m.band_projector()).unwrap().sub(&st.x_hat).unwrap();
            assert!(leak.qnorm() / st.x_hat.qnorm().max(1.0) <= 1e-8);
        }
    }

    #[test]
    fn run_rejects_zero_reference() {
        let s = setup(20, 1);
        let support = Support::new(s.f.clone(), vec![0, 1, 2], 20).unwrap();
        let m = ObservationModel::new(&s.sg, support, QSignal::zeros(20), 0.0).unwrap();
        assert!(matches!(
            run_filter(&m, Algorithm::Qglms, 0.1, 1, &mut seeded(0)),
            Err(Error::ZeroReference)
        ));
    }

    #[test]
    fn nmse_reference_values() {
        let x = random_signal(10, 1);
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);
        assert!((nmse(&QSignal::zeros(10), &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((nmse_db(0.1) + 20.0).abs() < 1e-12);
    }
}
