//! Conditional-state propagation under simultaneous homodyne detection and
//! photon counting behind a beam splitter.
//!
//! The monitored arrangement sends the system output through a beam splitter
//! with amplitude reflectivity r; the transmitted arm (weight sqrt(1-r^2))
//! is homodyned at phase theta, the reflected arm (weight r) is photon
//! counted. The conditional evolution of a state |psi> is
//!
//!   d|psi> = (-iH - L-dag L / 2)|psi> dt + sigma(psi) dt
//!            + delta1(psi) dW + delta2(psi) dN
//!   sigma  = [(1-r^2)/2 m] L psi + [r^2 <L-dag L>/2 - (1-r^2)/8 m^2] psi
//!   delta1 = sqrt(1-r^2) (L - m/2) psi
//!   delta2 = (L / sqrt(<L-dag L>) - 1) psi
//!
//! with m = <e^{-i theta} L-dag + e^{i theta} L>. The comparison stepper
//! drops every r-dependence except the click rate (its sigma and delta1 are
//! the pure-diffusion forms), which is exactly the bias probed by the
//! ensemble comparison. The unnormalized form propagates
//! psi' = [1 + A dt + (B - 1) dN + C dW] psi with
//! A = -iH - L-dag L/2 + (1-r^2) m L, B = r L, C = sqrt(1-r^2) L.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{QtrajError, Result};
use crate::hilbert::{project_physical, renormalize_state, CMatrix, CVector, Tolerances};
use crate::network::{beam_splitter_composite, SlhModel};

/// Predicted jump rates below this excise the jump channel from the update.
pub const RATE_EPS: f64 = 1e-12;

/// A step with rate * dt above this is flagged as too coarse for the
/// Bernoulli jump approximation.
pub const RATE_DT_WARN: f64 = 0.1;

/// Which conditional equation an ensemble propagates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    /// Reflectivity-aware pure-state filter.
    Corrected,
    /// Comparison pure-state filter without the reflectivity scalings.
    Kuramochi,
    /// Density-matrix filter.
    Sme,
}

/// Immutable description of one monitored system.
#[derive(Debug, Clone)]
pub struct FilterSetup {
    l: CMatrix,
    l_dag: CMatrix,
    ldl: CMatrix,
    h: CMatrix,
    h_is_zero: bool,
    /// e^{i theta}.
    phase: Complex64,
    /// e^{i theta} L and its adjoint.
    cl: CMatrix,
    cl_dag: CMatrix,
    /// cl + cl_dag, the measured quadrature.
    quad: CMatrix,
    /// L + L-dag, the comparison stepper's quadrature (theta fixed at 0).
    quad0: CMatrix,
    r: f64,
    r2: f64,
    srt: f64,
    theta: f64,
    tol: Tolerances,
}

impl FilterSetup {
    pub fn new(l: CMatrix, h: CMatrix, r: f64, theta: f64) -> Result<Self> {
        let dim = l.nrows();
        if l.ncols() != dim || h.nrows() != dim || h.ncols() != dim {
            return Err(QtrajError::ShapeMismatch(format!(
                "coupling {}x{} vs hamiltonian {}x{}",
                l.nrows(),
                l.ncols(),
                h.nrows(),
                h.ncols()
            )));
        }
        if !(0.0..=1.0).contains(&r) {
            return Err(QtrajError::Config(format!(
                "reflectivity amplitude must lie in [0, 1], got {r}"
            )));
        }
        let herm = crate::hilbert::hermiticity_defect(&h);
        if herm > crate::network::HERMITICITY_TOL {
            return Err(QtrajError::ShapeMismatch(format!(
                "hamiltonian is not Hermitian (defect {herm:.3e})"
            )));
        }
        let phase = Complex64::new(0.0, theta).exp();
        let cl = l.map(|v| v * phase);
        let cl_dag = cl.adjoint();
        let quad = &cl + &cl_dag;
        let l_dag = l.adjoint();
        let quad0 = &l + &l_dag;
        let ldl = &l_dag * &l;
        let h_is_zero = h.iter().all(|v| v.re == 0.0 && v.im == 0.0);
        Ok(Self {
            l,
            l_dag,
            ldl,
            h,
            h_is_zero,
            phase,
            cl,
            cl_dag,
            quad,
            quad0,
            r2: r * r,
            srt: (1.0 - r * r).sqrt(),
            r,
            theta,
            tol: Tolerances::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn coupling(&self) -> &CMatrix {
        &self.l
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.h
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    /// The network this filter conditions on: (S_bs, S_bs [L; 0], H).
    pub fn composite_slh(&self) -> Result<SlhModel> {
        beam_splitter_composite(&self.l, &self.h, self.r, self.theta)
    }
}

/// Measurement increments for one step. `dw` is the Wiener increment of the
/// homodyne record, `dn` the click indicator of the counting record.
#[derive(Debug, Clone, Copy)]
pub struct Increments {
    pub dw: f64,
    pub dn: bool,
}

/// Per-step log: homodyne record increment, click, innovation, predicted
/// click rate, pre-repair norm and a coarse-step flag.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub dy1: f64,
    pub dn: bool,
    pub dw: f64,
    pub jump_rate: f64,
    pub pre_norm: f64,
    pub rate_warning: bool,
}

/// Predicted record means over one step, as rates:
/// E[dY1] = homodyne_rate * dt, E[dN] = jump_rate * dt, and the record
/// covariance is diag(dt, jump_rate * dt).
#[derive(Debug, Clone, Copy)]
pub struct MeasurementExpectations {
    pub homodyne_rate: f64,
    pub jump_rate: f64,
}

fn expect_state(psi: &CVector, op: &CMatrix) -> Complex64 {
    let num = psi.dotc(&(op * psi));
    let den = psi.dotc(psi).re;
    num / Complex64::new(den, 0.0)
}

fn expect_density(rho: &CMatrix, op: &CMatrix) -> Complex64 {
    let num = crate::hilbert::trace_of_product(rho, op);
    let den = rho.trace().re;
    num / Complex64::new(den, 0.0)
}

/// Draw (dW, dN) for one step. Both draws always happen so paired runs with
/// shared streams stay aligned even when a channel is gated off.
pub fn sample_increments<R: Rng>(jump_rate: f64, dt: f64, rng: &mut R) -> Increments {
    let z: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.gen();
    let p = (jump_rate * dt).min(1.0);
    Increments {
        dw: z * dt.sqrt(),
        dn: u < p,
    }
}

impl FilterSetup {
    pub fn expectations_state(&self, psi: &CVector) -> MeasurementExpectations {
        let m = expect_state(psi, &self.quad).re;
        let rate = self.r2 * expect_state(psi, &self.ldl).re.max(0.0);
        MeasurementExpectations {
            homodyne_rate: self.srt * m,
            jump_rate: rate,
        }
    }

    pub fn expectations_density(&self, rho: &CMatrix) -> MeasurementExpectations {
        let m = expect_density(rho, &self.quad).re;
        let rate = self.r2 * expect_density(rho, &self.ldl).re.max(0.0);
        MeasurementExpectations {
            homodyne_rate: self.srt * m,
            jump_rate: rate,
        }
    }

    /// Conditional-expectation gains (beta1, beta2) of an observable X:
    /// beta1 = sqrt(1-r^2) (<X cL + cL-dag X> - <X><cL + cL-dag>),
    /// beta2 = <L-dag X L> / <L-dag L> - <X> (zero when the click rate
    /// underflows). Expectations are evaluated in ratio form so the identity
    /// gains are exactly zero.
    pub fn filter_gains_state(&self, psi: &CVector, x: &CMatrix) -> Result<(Complex64, Complex64)> {
        if x.nrows() != self.dim() || x.ncols() != self.dim() {
            return Err(QtrajError::ShapeMismatch(format!(
                "observable {}x{} on dim-{} filter",
                x.nrows(),
                x.ncols(),
                self.dim()
            )));
        }
        let cross = x * &self.cl + &self.cl_dag * x;
        let g = expect_state(psi, &cross);
        let m = expect_state(psi, &self.quad);
        let ex = expect_state(psi, x);
        let beta1 = Complex64::new(self.srt, 0.0) * (g - ex * m);

        let ldl_e = expect_state(psi, &self.ldl).re;
        let beta2 = if self.r2 * ldl_e < RATE_EPS {
            Complex64::new(0.0, 0.0)
        } else {
            let num = expect_state(psi, &(&self.l_dag * (x * &self.l)));
            num / Complex64::new(ldl_e, 0.0) - ex
        };
        Ok((beta1, beta2))
    }

    pub fn filter_gains_density(
        &self,
        rho: &CMatrix,
        x: &CMatrix,
    ) -> Result<(Complex64, Complex64)> {
        if x.nrows() != self.dim() || x.ncols() != self.dim() {
            return Err(QtrajError::ShapeMismatch(format!(
                "observable {}x{} on dim-{} filter",
                x.nrows(),
                x.ncols(),
                self.dim()
            )));
        }
        let cross = x * &self.cl + &self.cl_dag * x;
        let g = expect_density(rho, &cross);
        let m = expect_density(rho, &self.quad);
        let ex = expect_density(rho, x);
        let beta1 = Complex64::new(self.srt, 0.0) * (g - ex * m);

        let ldl_e = expect_density(rho, &self.ldl).re;
        let beta2 = if self.r2 * ldl_e < RATE_EPS {
            Complex64::new(0.0, 0.0)
        } else {
            let num = expect_density(rho, &(&self.l_dag * (x * &self.l)));
            num / Complex64::new(ldl_e, 0.0) - ex
        };
        Ok((beta1, beta2))
    }
}

/// Unconditional generator: -i[H, rho] + sum_k L_k rho L_k-dag
/// - (L_k-dag L_k rho + rho L_k-dag L_k) / 2.
pub fn lindblad_rhs(h: &CMatrix, ls: &[CMatrix], rho: &CMatrix) -> CMatrix {
    let minus_i = Complex64::new(0.0, -1.0);
    let mut out = (h * rho - rho * h).map(|v| v * minus_i);
    for l in ls {
        let l_dag = l.adjoint();
        let ldl = &l_dag * l;
        out += l * rho * l_dag;
        out -= (&ldl * rho + rho * ldl).map(|v| v * Complex64::new(0.5, 0.0));
    }
    out
}

/// Fixed-step RK4 integration of the unconditional master equation.
pub fn lindblad_propagate(
    h: &CMatrix,
    ls: &[CMatrix],
    rho0: &CMatrix,
    dt: f64,
    steps: usize,
) -> CMatrix {
    let half = Complex64::new(dt / 2.0, 0.0);
    let full = Complex64::new(dt, 0.0);
    let sixth = Complex64::new(dt / 6.0, 0.0);
    let two = Complex64::new(2.0, 0.0);
    let mut rho = rho0.clone();
    for _ in 0..steps {
        let k1 = lindblad_rhs(h, ls, &rho);
        let k2 = lindblad_rhs(h, ls, &(&rho + k1.map(|v| v * half)));
        let k3 = lindblad_rhs(h, ls, &(&rho + k2.map(|v| v * half)));
        let k4 = lindblad_rhs(h, ls, &(&rho + k3.map(|v| v * full)));
        rho += (k1 + k2.map(|v| v * two) + k3.map(|v| v * two) + k4).map(|v| v * sixth);
    }
    rho
}

fn step_record(
    setup: &FilterSetup,
    homodyne_rate: f64,
    jump_rate: f64,
    dt: f64,
    inc: Increments,
    pre_norm: f64,
) -> StepRecord {
    let _ = setup;
    StepRecord {
        dy1: homodyne_rate * dt + inc.dw,
        dn: inc.dn,
        dw: inc.dw,
        jump_rate,
        pre_norm,
        rate_warning: jump_rate * dt > RATE_DT_WARN,
    }
}

/// One Euler step of the reflectivity-aware pure-state filter with supplied
/// increments. The returned state is renormalized; the record keeps the
/// pre-renormalization norm.
pub fn sse_step(
    psi: &CVector,
    setup: &FilterSetup,
    dt: f64,
    inc: Increments,
) -> Result<(CVector, StepRecord)> {
    if dt <= 0.0 {
        return Err(QtrajError::Config(format!(
            "step size must be positive, got {dt}"
        )));
    }
    let m = expect_state(psi, &setup.quad).re;
    let ldl_e = expect_state(psi, &setup.ldl).re.max(0.0);
    let jump_rate = setup.r2 * ldl_e;
    let jump_active = jump_rate >= RATE_EPS;
    let dn = inc.dn && jump_active;

    let l_psi = &setup.l * psi;
    let ldl_psi = &setup.ldl * psi;
    let h_psi = &setup.h * psi;
    let one_m_r2 = 1.0 - setup.r2;

    // deterministic part: (-iH - L-dag L / 2) psi + sigma(psi)
    let sigma_scalar = setup.r2 * ldl_e / 2.0 - one_m_r2 / 8.0 * m * m;
    let mut next = psi.clone();
    let drift = h_psi.map(|v| v * Complex64::new(0.0, -dt))
        + ldl_psi.map(|v| v * Complex64::new(-0.5 * dt, 0.0))
        + l_psi.map(|v| v * Complex64::new(one_m_r2 / 2.0 * m * dt, 0.0))
        + psi.map(|v| v * Complex64::new(sigma_scalar * dt, 0.0));
    next += drift;

    // diffusive innovation
    let d1 = l_psi.map(|v| v * Complex64::new(setup.srt, 0.0))
        + psi.map(|v| v * Complex64::new(-setup.srt * m / 2.0, 0.0));
    next += d1.map(|v| v * Complex64::new(inc.dw, 0.0));

    // jump
    if dn {
        let scale = 1.0 / ldl_e.sqrt();
        let d2 = l_psi.map(|v| v * Complex64::new(scale, 0.0)) - psi;
        next += d2;
    }

    let pre_norm = next.norm();
    let out = renormalize_state(&next, &setup.tol)?;
    Ok((
        out,
        step_record(
            setup,
            setup.srt * m,
            jump_rate,
            dt,
            Increments { dw: inc.dw, dn },
            pre_norm,
        ),
    ))
}

/// One Euler step of the comparison pure-state filter: pure-diffusion
/// sigma/delta1 (no reflectivity scalings, theta = 0), clicks at the
/// physical rate r^2 <L-dag L>.
pub fn sse_step_kuramochi(
    psi: &CVector,
    setup: &FilterSetup,
    dt: f64,
    inc: Increments,
) -> Result<(CVector, StepRecord)> {
    if dt <= 0.0 {
        return Err(QtrajError::Config(format!(
            "step size must be positive, got {dt}"
        )));
    }
    let m = expect_state(psi, &setup.quad0).re;
    let ldl_e = expect_state(psi, &setup.ldl).re.max(0.0);
    let jump_rate = setup.r2 * ldl_e;
    let jump_active = jump_rate >= RATE_EPS;
    let dn = inc.dn && jump_active;

    let l_psi = &setup.l * psi;
    let ldl_psi = &setup.ldl * psi;
    let h_psi = &setup.h * psi;

    let sigma_scalar = -m * m / 8.0;
    let mut next = psi.clone();
    let drift = h_psi.map(|v| v * Complex64::new(0.0, -dt))
        + ldl_psi.map(|v| v * Complex64::new(-0.5 * dt, 0.0))
        + l_psi.map(|v| v * Complex64::new(m / 2.0 * dt, 0.0))
        + psi.map(|v| v * Complex64::new(sigma_scalar * dt, 0.0));
    next += drift;

    let d1 = l_psi - psi.map(|v| v * Complex64::new(m / 2.0, 0.0));
    next += d1.map(|v| v * Complex64::new(inc.dw, 0.0));

    if dn {
        let scale = 1.0 / ldl_e.sqrt();
        let d2 = (&setup.l * psi).map(|v| v * Complex64::new(scale, 0.0)) - psi;
        next += d2;
    }

    let pre_norm = next.norm();
    let out = renormalize_state(&next, &setup.tol)?;
    Ok((
        out,
        step_record(
            setup,
            m,
            jump_rate,
            dt,
            Increments { dw: inc.dw, dn },
            pre_norm,
        ),
    ))
}

/// One Euler step of the unnormalized filter
/// psi' = [1 + A dt + (B - 1) dN + C dW] psi with
/// A = -iH - L-dag L/2 + (1-r^2) <L + L-dag> L, B = r L,
/// C = sqrt(1-r^2) L (theta = 0 form). Expectations use the ratio form, so
/// the running state may be kept unnormalized between steps. No
/// renormalization is applied.
pub fn sse_step_corrected_unnormalized(
    psi: &CVector,
    setup: &FilterSetup,
    dt: f64,
    inc: Increments,
) -> Result<CVector> {
    if dt <= 0.0 {
        return Err(QtrajError::Config(format!(
            "step size must be positive, got {dt}"
        )));
    }
    let m = expect_state(psi, &setup.quad0).re;
    let one_m_r2 = 1.0 - setup.r2;
    let l_psi = &setup.l * psi;

    let mut next = psi.clone();
    // A psi dt
    next += (&setup.h * psi).map(|v| v * Complex64::new(0.0, -dt));
    next += (&setup.ldl * psi).map(|v| v * Complex64::new(-0.5 * dt, 0.0));
    next += l_psi.map(|v| v * Complex64::new(one_m_r2 * m * dt, 0.0));
    // C psi dW
    next += l_psi.map(|v| v * Complex64::new(setup.srt * inc.dw, 0.0));
    // (B - 1) psi dN
    if inc.dn {
        next += l_psi.map(|v| v * Complex64::new(setup.r, 0.0)) - psi;
    }
    Ok(next)
}

/// Density-filter record: the repair diagnostics replace the norm field.
#[derive(Debug, Clone, Copy)]
pub struct SmeStepRecord {
    pub dy1: f64,
    pub dn: bool,
    pub dw: f64,
    pub jump_rate: f64,
    pub trace_defect: f64,
    pub herm_defect: f64,
    pub most_negative: f64,
    pub rate_warning: bool,
}

/// One Euler step of the density-matrix filter with supplied increments:
/// d rho = Lindblad(rho) dt
///         + sqrt(1-r^2) (cL rho + rho cL-dag - <cL + cL-dag> rho) dW
///         + (L rho L-dag / <L-dag L> - rho)(dN - r^2 <L-dag L> dt).
/// The result is repaired (hermitized, clipped, renormalized).
pub fn sme_step(
    rho: &CMatrix,
    setup: &FilterSetup,
    dt: f64,
    inc: Increments,
) -> Result<(CMatrix, SmeStepRecord)> {
    if dt <= 0.0 {
        return Err(QtrajError::Config(format!(
            "step size must be positive, got {dt}"
        )));
    }
    // Three products feed every term: L rho, L rho L-dag and L-dag L rho
    // (whose adjoint supplies rho L-dag L and whose trace supplies the
    // click-rate expectation).
    let trace = rho.trace().re;
    let m = crate::hilbert::trace_of_product(rho, &setup.quad).re / trace;
    let l_rho = &setup.l * rho;
    let jump_num = &l_rho * &setup.l_dag;
    let ldl_rho = &setup.l_dag * &l_rho;
    let ldl_e = (ldl_rho.trace().re / trace).max(0.0);
    let jump_rate = setup.r2 * ldl_e;
    let jump_active = jump_rate >= RATE_EPS;
    let dn = inc.dn && jump_active;

    let mut next = rho.clone();
    if !setup.h_is_zero {
        let h_rho = &setup.h * rho;
        next += (&h_rho - h_rho.adjoint()).map(|v| v * Complex64::new(0.0, -dt));
    }
    next += jump_num.map(|v| v * Complex64::new(dt, 0.0));
    next -= (&ldl_rho + ldl_rho.adjoint()).map(|v| v * Complex64::new(0.5 * dt, 0.0));

    // diffusive innovation: cl rho + rho cl-dag - m rho, scaled by srt dW
    let cl_rho = l_rho.map(|v| v * setup.phase);
    let diff_w = Complex64::new(setup.srt * inc.dw, 0.0);
    next += (&cl_rho + cl_rho.adjoint()).map(|v| v * diff_w);
    next -= rho.map(|v| v * (diff_w * m));

    // jump innovation: (jump_num / <Ldag L> - rho) (dN - rate dt)
    if jump_active {
        let weight = (if dn { 1.0 } else { 0.0 }) - jump_rate * dt;
        next += jump_num.map(|v| v * Complex64::new(weight / ldl_e, 0.0));
        next -= rho.map(|v| v * Complex64::new(weight, 0.0));
    }

    let (repaired, report) = project_physical(&next, &setup.tol)?;
    Ok((
        repaired,
        SmeStepRecord {
            dy1: setup.srt * m * dt + inc.dw,
            dn,
            dw: inc.dw,
            jump_rate,
            trace_defect: report.trace_defect,
            herm_defect: report.herm_defect,
            most_negative: report.most_negative,
            rate_warning: jump_rate * dt > RATE_DT_WARN,
        },
    ))
}

/// Turn an externally recorded (dY1, dN) pair into step increments by
/// removing the predicted homodyne drift.
pub fn increments_from_record(
    expect: MeasurementExpectations,
    dt: f64,
    dy1: f64,
    dn: bool,
) -> Increments {
    Increments {
        dw: dy1 - expect.homodyne_rate * dt,
        dn,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{annihilation, fock_state, hermiticity_defect, number_operator};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const GAMMA: f64 = 1.0;

    fn decay_setup(dim: usize, r: f64, theta: f64) -> FilterSetup {
        let a = annihilation(dim).unwrap();
        let l = a.map(|v| v * Complex64::new(GAMMA.sqrt(), 0.0));
        let h = CMatrix::zeros(dim, dim);
        FilterSetup::new(l, h, r, theta).unwrap()
    }

    fn superposition(dim: usize, levels: &[usize]) -> CVector {
        let mut v = CVector::zeros(dim);
        for &n in levels {
            v[n] = Complex64::new(1.0, 0.0);
        }
        v.unscale(v.norm())
    }

    #[test]
    fn lindblad_number_decay_rate_on_fock_state() {
        let dim = 8;
        let setup = decay_setup(dim, 0.5, 0.0);
        let n_op = number_operator(dim).unwrap();
        for n in 0..6 {
            let psi = fock_state(dim, n).unwrap();
            let rho = &psi * psi.adjoint();
            let rhs = lindblad_rhs(
                setup.hamiltonian(),
                std::slice::from_ref(setup.coupling()),
                &rho,
            );
            let dn_dt = (&rhs * &n_op).trace().re;
            assert!((dn_dt + GAMMA * n as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn lindblad_propagate_matches_decay_law() {
        let dim = 8;
        let setup = decay_setup(dim, 0.5, 0.0);
        let n_op = number_operator(dim).unwrap();
        let psi = fock_state(dim, 5).unwrap();
        let rho0 = &psi * psi.adjoint();
        let rho = lindblad_propagate(
            setup.hamiltonian(),
            std::slice::from_ref(setup.coupling()),
            &rho0,
            1e-3,
            1000,
        );
        let mean = (&rho * &n_op).trace().re;
        assert!((mean - 5.0 * (-GAMMA).exp()).abs() < 1e-8);
        assert!((rho.trace().re - 1.0).abs() < 1e-10);
        assert!(hermiticity_defect(&rho) < 1e-12);
    }

    #[test]
    fn expectations_on_fock_state() {
        let dim = 8;
        let r2: f64 = 0.5;
        let setup = decay_setup(dim, r2.sqrt(), 0.0);
        let psi = fock_state(dim, 5).unwrap();
        let e = setup.expectations_state(&psi);
        // quadrature mean vanishes on a number state, click rate is r^2 gamma n
        assert_eq!(e.homodyne_rate, 0.0);
        assert!((e.jump_rate - r2 * GAMMA * 5.0).abs() < 1e-12);
    }

    #[test]
    fn identity_gains_are_exactly_zero() {
        let dim = 8;
        let setup = decay_setup(dim, 0.5f64.sqrt(), 0.3);
        let id = CMatrix::identity(dim, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut psi = superposition(dim, &[1, 3, 5]);
        for _ in 0..50 {
            let e = setup.expectations_state(&psi);
            let inc = sample_increments(e.jump_rate, 1e-3, &mut rng);
            let (next, _) = sse_step(&psi, &setup, 1e-3, inc).unwrap();
            psi = next;
            let (b1, b2) = setup.filter_gains_state(&psi, &id).unwrap();
            assert_eq!(b1, Complex64::new(0.0, 0.0));
            assert_eq!(b2, Complex64::new(0.0, 0.0));
            let rho = &psi * psi.adjoint();
            let (c1, c2) = setup.filter_gains_density(&rho, &id).unwrap();
            assert_eq!(c1, Complex64::new(0.0, 0.0));
            assert_eq!(c2, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn number_gains_on_fock_state() {
        let dim = 8;
        let setup = decay_setup(dim, 0.5f64.sqrt(), 0.0);
        let n_op = number_operator(dim).unwrap();
        let psi = fock_state(dim, 5).unwrap();
        let (b1, b2) = setup.filter_gains_state(&psi, &n_op).unwrap();
        // diffusive gain vanishes on a number state; jump gain is -1
        assert!(b1.norm() < 1e-12);
        assert!((b2 - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn jump_sends_fock_state_down_one_level() {
        let dim = 8;
        let setup = decay_setup(dim, 1.0, 0.0);
        let psi = fock_state(dim, 5).unwrap();
        let (next, record) =
            sse_step(&psi, &setup, 1e-3, Increments { dw: 0.0, dn: true }).unwrap();
        let target = fock_state(dim, 4).unwrap();
        let fidelity = next.dotc(&target).norm();
        assert!(fidelity >= 1.0 - 1e-12, "fidelity {fidelity}");
        assert!(record.dn);
    }

    #[test]
    fn fock_state_is_stationary_between_jumps_at_full_reflectivity() {
        let dim = 8;
        let setup = decay_setup(dim, 1.0, 0.0);
        let psi = fock_state(dim, 3).unwrap();
        let (next, record) =
            sse_step(&psi, &setup, 1e-3, Increments { dw: 0.0, dn: false }).unwrap();
        // sigma cancels the damping exactly on a number state
        assert!((&next - &psi).norm() == 0.0);
        assert!((record.pre_norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_reflectivity_never_fires_jumps() {
        let dim = 8;
        let setup = decay_setup(dim, 0.0, 0.0);
        let mut psi = fock_state(dim, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..500 {
            let e = setup.expectations_state(&psi);
            assert_eq!(e.jump_rate, 0.0);
            let inc = sample_increments(e.jump_rate, 1e-3, &mut rng);
            let (next, record) = sse_step(&psi, &setup, 1e-3, inc).unwrap();
            assert!(!record.dn);
            psi = next;
        }
    }

    #[test]
    fn sse_norm_bias_is_higher_order_than_step_noise() {
        // Pathwise the pre-renormalization norm moves at O(dt); its mean
        // moves at O(dt^2). The mean over 2000 draws must sit far below the
        // 10 dt^{3/2} order-check bound.
        let dim = 8;
        let setup = decay_setup(dim, 0.5f64.sqrt(), 0.0);
        let psi = superposition(dim, &[4, 5]);
        let dt: f64 = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut mean_norm = 0.0;
        let trials = 2000;
        for _ in 0..trials {
            let z: f64 = rng.sample(StandardNormal);
            let inc = Increments {
                dw: z * dt.sqrt(),
                dn: false,
            };
            let (_, record) = sse_step(&psi, &setup, dt, inc).unwrap();
            assert!(
                (record.pre_norm - 1.0).abs() < 50.0 * dt,
                "pathwise norm move too large"
            );
            mean_norm += record.pre_norm;
        }
        mean_norm /= trials as f64;
        assert!((mean_norm - 1.0).abs() < 10.0 * dt.powf(1.5));
    }

    #[test]
    fn sme_number_decay_in_expectation() {
        // Mixed diagonal start: every level gap is populated, so one Euler
        // step never dips negative and the innovation means are exact
        // martingales. Mean change must match the unconditional generator.
        let dim = 8;
        let setup = decay_setup(dim, 0.5f64.sqrt(), 0.0);
        let n_op = number_operator(dim).unwrap();
        let weights = [0.04, 0.06, 0.10, 0.15, 0.25, 0.40];
        let mut rho0 = CMatrix::zeros(dim, dim);
        for (n, &w) in weights.iter().enumerate() {
            rho0[(n, n)] = Complex64::new(w, 0.0);
        }
        let n_start = expect_density(&rho0, &n_op).re;
        let dt = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let trials = 20_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..trials {
            let e = setup.expectations_density(&rho0);
            let inc = sample_increments(e.jump_rate, dt, &mut rng);
            let (rho, record) = sme_step(&rho0, &setup, dt, inc).unwrap();
            assert!((rho.trace().re - 1.0).abs() < 1e-8);
            assert!(!record.rate_warning);
            let v = expect_density(&rho, &n_op).re;
            sum += v;
            sum_sq += v * v;
        }
        let mean_next = sum / trials as f64;
        let var = (sum_sq - trials as f64 * mean_next * mean_next) / (trials as f64 - 1.0);
        let se = (var.max(0.0) / trials as f64).sqrt();
        let predicted = n_start * (1.0 - GAMMA * dt);
        assert!(
            (mean_next - predicted).abs() < 4.0 * se + 1e-9,
            "mean {mean_next} vs predicted {predicted}, se {se}"
        );
    }

    #[test]
    fn sme_martingale_means_vanish() {
        let dim = 8;
        let setup = decay_setup(dim, 0.5f64.sqrt(), 0.0);
        let psi = superposition(dim, &[2, 5]);
        let rho0 = &psi * psi.adjoint();
        let dt = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let trials = 20_000;
        let mut sum_dw = 0.0;
        let mut sum_innov = 0.0;
        for _ in 0..trials {
            let e = setup.expectations_density(&rho0);
            let inc = sample_increments(e.jump_rate, dt, &mut rng);
            sum_dw += inc.dw;
            sum_innov += (if inc.dn { 1.0 } else { 0.0 }) - e.jump_rate * dt;
        }
        let mean_dw = sum_dw / trials as f64;
        let mean_innov = sum_innov / trials as f64;
        let se_dw = dt.sqrt() / (trials as f64).sqrt();
        let e0 = setup.expectations_density(&rho0);
        let se_innov = (e0.jump_rate * dt).sqrt() / (trials as f64).sqrt();
        assert!(mean_dw.abs() < 3.0 * se_dw);
        assert!(mean_innov.abs() < 3.0 * se_innov);
    }

    #[test]
    fn record_mode_reproduces_simulation_run() {
        // Recovering dW as dY1 - <rate> dt reintroduces one rounding per
        // step, so the replay tracks the original to rounding accuracy, not
        // bitwise.
        let dim = 8;
        let setup = decay_setup(dim, 0.5f64.sqrt(), 0.0);
        let dt = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut psi = fock_state(dim, 5).unwrap();
        let mut records = Vec::new();
        for _ in 0..400 {
            let e = setup.expectations_state(&psi);
            let inc = sample_increments(e.jump_rate, dt, &mut rng);
            let (next, record) = sse_step(&psi, &setup, dt, inc).unwrap();
            records.push(record);
            psi = next;
        }
        let mut replay = fock_state(dim, 5).unwrap();
        for record in &records {
            let e = setup.expectations_state(&replay);
            let inc = increments_from_record(e, dt, record.dy1, record.dn);
            let (next, _) = sse_step(&replay, &setup, dt, inc).unwrap();
            replay = next;
        }
        assert!((&psi - &replay).norm() < 1e-9);
    }

    #[test]
    fn kuramochi_matches_corrected_at_zero_reflectivity() {
        let dim = 8;
        let setup = decay_setup(dim, 0.0, 0.0);
        let dt = 1e-3;
        let mut rng_a = ChaCha8Rng::seed_from_u64(31);
        let mut rng_b = ChaCha8Rng::seed_from_u64(31);
        let mut psi_a = fock_state(dim, 5).unwrap();
        let mut psi_b = fock_state(dim, 5).unwrap();
        for _ in 0..1000 {
            let ea = setup.expectations_state(&psi_a);
            let inc_a = sample_increments(ea.jump_rate, dt, &mut rng_a);
            psi_a = sse_step(&psi_a, &setup, dt, inc_a).unwrap().0;
            let eb = setup.expectations_state(&psi_b);
            let inc_b = sample_increments(eb.jump_rate, dt, &mut rng_b);
            psi_b = sse_step_kuramochi(&psi_b, &setup, dt, inc_b).unwrap().0;
        }
        assert!((&psi_a - &psi_b).norm() == 0.0);
    }

    #[test]
    fn unnormalized_step_tracks_normalized_direction() {
        let dim = 8;
        let setup = decay_setup(dim, 0.5f64.sqrt(), 0.0);
        let dt: f64 = 1e-4;
        let psi = superposition(dim, &[3, 5]);
        let inc = Increments {
            dw: dt.sqrt(),
            dn: false,
        };
        let raw = sse_step_corrected_unnormalized(&psi, &setup, dt, inc).unwrap();
        let normalized = raw.clone().unscale(raw.norm());
        let (reference, _) = sse_step(&psi, &setup, dt, inc).unwrap();
        assert!((&normalized - &reference).norm() < 50.0 * dt);
    }

    #[test]
    fn unnormalized_jump_matches_normalized_jump_direction() {
        let dim = 8;
        let setup = decay_setup(dim, 0.5f64.sqrt(), 0.0);
        let dt = 1e-5;
        let psi = fock_state(dim, 5).unwrap();
        let inc = Increments { dw: 0.0, dn: true };
        let raw = sse_step_corrected_unnormalized(&psi, &setup, dt, inc).unwrap();
        let normalized = raw.clone().unscale(raw.norm());
        let target = fock_state(dim, 4).unwrap();
        assert!(normalized.dotc(&target).norm() > 1.0 - 1e-6);
    }
}
