//! Closed-form joint-measurability check for mixed quadrature/counting
//! measurement selections.
//!
//! A measurement vector dY = F* dA~* + F dA~ + G diag(dG~) is jointly
//! realizable (self-commutative) for every network iff
//!   F F-dag = F* F^T  (equivalently Re(F) Im(F)^T symmetric), and
//!   for every channel k:  G_ik F*_jk = G_jk F*_ik  and
//!                         G_ik F_jk  = G_jk F_ik   for all i, j.
//! The quadrature-quadrature condition sums over channels because its only
//! increment is the shared dt. The cross conditions must hold channel by
//! channel: each channel carries its own creation/annihilation increments
//! and its own coupling operator, so contributions from different channels
//! can never cancel against each other. (Summed products G F-dag, G F^T can
//! be symmetric while a channelwise term is not; such selections are not
//! realizable on a generic network.) The channelwise complex conditions are
//! primary here; the equivalent channelwise real-part product symmetries are
//! asserted as a redundant check.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{QtrajError, Result};
use crate::hilbert::{max_abs_entry, CMatrix};
use crate::ito::{
    build_dy, is_symmetric, product_table, random_instantiation, PROBE_DIM, SYMMETRY_TOL,
};

type RMatrix = DMatrix<f64>;

/// Quadrature selection F and counting selection G for n output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSpec {
    f: CMatrix,
    g: CMatrix,
}

impl MeasurementSpec {
    pub fn new(f: CMatrix, g: CMatrix) -> Result<Self> {
        let n = f.nrows();
        if n == 0 || f.ncols() != n || g.nrows() != n || g.ncols() != n {
            return Err(QtrajError::ShapeMismatch(format!(
                "F is {}x{}, G is {}x{}; both must be square of equal size >= 1",
                f.nrows(),
                f.ncols(),
                g.nrows(),
                g.ncols()
            )));
        }
        Ok(Self { f, g })
    }

    pub fn channels(&self) -> usize {
        self.f.nrows()
    }

    pub fn f(&self) -> &CMatrix {
        &self.f
    }

    pub fn g(&self) -> &CMatrix {
        &self.g
    }

    /// Default verdict tolerance, scaled quadratically with the entry size.
    pub fn default_tol(&self) -> f64 {
        let scale = max_abs_entry(&self.f).max(max_abs_entry(&self.g)).max(1.0);
        1e-10 * scale * scale
    }
}

/// Per-condition asymmetry magnitudes (max-abs of M - M^T).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViolationNorms {
    pub condition_f: f64,
    pub condition_g_fstar: f64,
    pub condition_g_f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommutativityReport {
    pub commutative: bool,
    pub condition_f: bool,
    pub condition_g_fstar: bool,
    pub condition_g_f: bool,
    pub violations: ViolationNorms,
    pub tol: f64,
}

fn asymmetry(m: &RMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn real_part(m: &CMatrix) -> RMatrix {
    m.map(|c| c.re)
}

fn imag_part(m: &CMatrix) -> RMatrix {
    m.map(|c| c.im)
}

/// Evaluate the closed-form conditions. `tol` defaults to
/// 1e-10 * max(1, |F|, |G|)^2 when not supplied.
pub fn check_self_commutative(spec: &MeasurementSpec, tol: Option<f64>) -> CommutativityReport {
    let tol = tol.unwrap_or_else(|| spec.default_tol());
    let n = spec.channels();
    let fr = real_part(&spec.f);
    let fi = imag_part(&spec.f);

    let v_f = asymmetry(&(&fr * fi.transpose()));

    let mut v_g_fstar = 0.0f64;
    let mut v_g_f = 0.0f64;
    for k in 0..n {
        for i in 0..n {
            for j in (i + 1)..n {
                let (g_i, g_j) = (spec.g[(i, k)], spec.g[(j, k)]);
                let (f_i, f_j) = (spec.f[(i, k)], spec.f[(j, k)]);
                v_g_fstar = v_g_fstar.max((g_i * f_j.conj() - g_j * f_i.conj()).norm());
                v_g_f = v_g_f.max((g_i * f_j - g_j * f_i).norm());
            }
        }
    }

    let condition_f = v_f <= tol;
    let condition_g_fstar = v_g_fstar <= tol;
    let condition_g_f = v_g_f <= tol;
    let commutative = condition_f && condition_g_fstar && condition_g_f;

    // Redundant check: the pair of channelwise complex conditions holds iff
    // the four channelwise real-part products are all symmetric; the
    // magnitudes agree within a factor of 2 sqrt(2).
    let gr = real_part(&spec.g);
    let gi = imag_part(&spec.g);
    let mut v_real = 0.0f64;
    for k in 0..n {
        for i in 0..n {
            for j in (i + 1)..n {
                for (g, f) in [(&gr, &fr), (&gi, &fi), (&gr, &fi), (&gi, &fr)] {
                    v_real = v_real.max((g[(i, k)] * f[(j, k)] - g[(j, k)] * f[(i, k)]).abs());
                }
            }
        }
    }
    let v_cross = v_g_fstar.max(v_g_f);
    let slack = 1e-12 * (1.0 + v_cross);
    debug_assert!(
        v_real <= v_cross + slack && v_cross <= 2.0 * std::f64::consts::SQRT_2 * v_real + slack,
        "real-part route ({v_real}) inconsistent with complex route ({v_cross})"
    );
    // F F-dag - F* F^T has entries -2i times the asymmetry of Re(F) Im(F)^T
    let sym_f =
        max_abs_entry(&(&spec.f * spec.f.adjoint() - spec.f.conjugate() * spec.f.transpose()));
    debug_assert!(
        (sym_f - 2.0 * v_f).abs() <= 1e-12 * (1.0 + sym_f + v_f),
        "quadrature symplectic residual {sym_f} inconsistent with product asymmetry {v_f}"
    );

    CommutativityReport {
        commutative,
        condition_f,
        condition_g_fstar,
        condition_g_f,
        violations: ViolationNorms {
            condition_f: v_f,
            condition_g_fstar: v_g_fstar,
            condition_g_f: v_g_f,
        },
        tol,
    }
}

/// Vector self-commutator with Definition-1 semantics:
/// [x, x] = x x^T - (x x^T)^T, entry (i, j) = x_i x_j - x_j x_i.
pub fn vector_self_commutator(ops: &[CMatrix]) -> Result<Vec<Vec<CMatrix>>> {
    if ops.is_empty() {
        return Err(QtrajError::ShapeMismatch("empty operator vector".into()));
    }
    let dim = ops[0].nrows();
    for op in ops {
        if op.nrows() != dim || op.ncols() != dim {
            return Err(QtrajError::ShapeMismatch(
                "self-commutator entries must share a square dimension".into(),
            ));
        }
    }
    let n = ops.len();
    let mut table = vec![vec![CMatrix::zeros(dim, dim); n]; n];
    for i in 0..n {
        for j in 0..n {
            table[i][j] = &ops[i] * &ops[j] - &ops[j] * &ops[i];
        }
    }
    Ok(table)
}

fn matrix_to_json(m: &CMatrix) -> serde_json::Value {
    serde_json::Value::Array(
        (0..m.nrows())
            .map(|i| {
                serde_json::Value::Array(
                    (0..m.ncols())
                        .map(|j| serde_json::json!([m[(i, j)].re, m[(i, j)].im]))
                        .collect(),
                )
            })
            .collect(),
    )
}

/// Cross-validate the closed form against the Ito-table oracle on `trials`
/// random (S, L) instantiations. Every trial must agree; the first
/// disagreement is reported with the offending instance serialized.
pub fn cross_validate<R: Rng>(spec: &MeasurementSpec, trials: usize, rng: &mut R) -> Result<bool> {
    let closed_form = check_self_commutative(spec, None).commutative;
    for _ in 0..trials {
        let (s, l_ops) = random_instantiation(spec.channels(), PROBE_DIM, rng);
        let dy = build_dy(&spec.f, &spec.g, &s, &l_ops)?;
        let table = product_table(&dy)?;
        let oracle = is_symmetric(&table, SYMMETRY_TOL)?;
        if oracle != closed_form {
            let instance = serde_json::json!({
                "F": matrix_to_json(&spec.f),
                "G": matrix_to_json(&spec.g),
                "S": matrix_to_json(&s),
                "L": l_ops.iter().map(matrix_to_json).collect::<Vec<_>>(),
            });
            return Err(QtrajError::OracleMismatch {
                closed_form,
                oracle,
                instance: instance.to_string(),
            });
        }
    }
    Ok(true)
}
