//! Open-network components (S, L, H) and their composition rules.
//!
//! A component couples a fixed system space (dim) to n bosonic channels:
//! S is the n x n scattering matrix, L the n-vector of coupling operators,
//! H the system Hamiltonian.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QtrajError, Result};
use crate::hilbert::{hermiticity_defect, unitarity_defect, CMatrix};
use crate::ito::UNITARITY_TOL;

/// Hermiticity tolerance for Hamiltonians fed to the composer.
pub const HERMITICITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SlhModel {
    s: CMatrix,
    l: Vec<CMatrix>,
    h: CMatrix,
}

impl SlhModel {
    pub fn new(s: CMatrix, l: Vec<CMatrix>, h: CMatrix) -> Result<Self> {
        let n = s.nrows();
        if s.ncols() != n || n == 0 {
            return Err(QtrajError::ShapeMismatch(format!(
                "scattering matrix {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
        if l.len() != n {
            return Err(QtrajError::ShapeMismatch(format!(
                "{} coupling operators for {n} channels",
                l.len()
            )));
        }
        let dim = h.nrows();
        if h.ncols() != dim || dim == 0 {
            return Err(QtrajError::ShapeMismatch(format!(
                "hamiltonian {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        for op in &l {
            if op.nrows() != dim || op.ncols() != dim {
                return Err(QtrajError::ShapeMismatch(
                    "coupling operators must act on the hamiltonian's space".into(),
                ));
            }
        }
        let s_defect = unitarity_defect(&s);
        if s_defect > UNITARITY_TOL {
            return Err(QtrajError::NotUnitary {
                deviation: s_defect,
                tol: UNITARITY_TOL,
            });
        }
        let h_defect = hermiticity_defect(&h);
        if h_defect > HERMITICITY_TOL {
            return Err(QtrajError::ShapeMismatch(format!(
                "hamiltonian is not Hermitian (defect {h_defect:.3e})"
            )));
        }
        Ok(Self { s, l, h })
    }

    pub fn channels(&self) -> usize {
        self.s.nrows()
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn s(&self) -> &CMatrix {
        &self.s
    }

    pub fn l(&self) -> &[CMatrix] {
        &self.l
    }

    pub fn h(&self) -> &CMatrix {
        &self.h
    }

    /// Passive component on a given space: identity scattering on n channels,
    /// zero coupling, zero Hamiltonian.
    pub fn passive(channels: usize, dim: usize) -> Result<Self> {
        Self::new(
            CMatrix::identity(channels, channels),
            vec![CMatrix::zeros(dim, dim); channels],
            CMatrix::zeros(dim, dim),
        )
    }
}

fn check_same_dim(g1: &SlhModel, g2: &SlhModel) -> Result<()> {
    if g1.dim() != g2.dim() {
        return Err(QtrajError::ShapeMismatch(format!(
            "components act on different spaces ({} vs {})",
            g1.dim(),
            g2.dim()
        )));
    }
    Ok(())
}

/// Parallel composition: block-diagonal scattering, stacked couplings,
/// summed Hamiltonians.
pub fn concatenate(g1: &SlhModel, g2: &SlhModel) -> Result<SlhModel> {
    check_same_dim(g1, g2)?;
    let n1 = g1.channels();
    let n2 = g2.channels();
    let n = n1 + n2;
    let mut s = CMatrix::zeros(n, n);
    s.view_mut((0, 0), (n1, n1)).copy_from(&g1.s);
    s.view_mut((n1, n1), (n2, n2)).copy_from(&g2.s);
    let mut l = Vec::with_capacity(n);
    l.extend(g1.l.iter().cloned());
    l.extend(g2.l.iter().cloned());
    let h = &g1.h + &g2.h;
    SlhModel::new(s, l, h)
}

/// Series composition, g1 feeding into g2:
/// S = S2 S1, L = L2 + S2 L1, H = H1 + H2 + Im(L2-dag S2 L1)
/// with Im(X) = (X - X-dag) / 2i.
pub fn series(g1: &SlhModel, g2: &SlhModel) -> Result<SlhModel> {
    check_same_dim(g1, g2)?;
    if g1.channels() != g2.channels() {
        return Err(QtrajError::ShapeMismatch(format!(
            "series needs matching channel counts ({} vs {})",
            g1.channels(),
            g2.channels()
        )));
    }
    let n = g1.channels();
    let dim = g1.dim();
    let s = &g2.s * &g1.s;
    let mut l = Vec::with_capacity(n);
    for i in 0..n {
        let mut li = g2.l[i].clone();
        for j in 0..n {
            li += g1.l[j].map(|x| x * g2.s[(i, j)]);
        }
        l.push(li);
    }
    // X = L2-dag S2 L1 summed over channel pairs
    let mut x = CMatrix::zeros(dim, dim);
    for i in 0..n {
        let l2i_dag = g2.l[i].adjoint();
        for j in 0..n {
            x += (&l2i_dag * &g1.l[j]).map(|v| v * g2.s[(i, j)]);
        }
    }
    let correction = (&x - x.adjoint()).map(|v| v * Complex64::new(0.0, -0.5));
    let h = &g1.h + &g2.h + correction;
    SlhModel::new(s, l, h)
}

/// Two-port beam splitter with amplitude reflectivity r and phase theta:
/// S = [[t, c], [c, t]] with t = sqrt(1 - r^2) e^{i theta},
/// c = r e^{i(theta + pi/2)}; no coupling, no Hamiltonian.
pub fn beam_splitter(r: f64, theta: f64, dim: usize) -> Result<SlhModel> {
    if !(0.0..=1.0).contains(&r) {
        return Err(QtrajError::Config(format!(
            "beam splitter reflectivity must lie in [0, 1], got {r}"
        )));
    }
    let phase = Complex64::new(0.0, theta).exp();
    let t = phase * Complex64::new((1.0 - r * r).sqrt(), 0.0);
    let c = phase * Complex64::new(0.0, r);
    let mut s = CMatrix::zeros(2, 2);
    s[(0, 0)] = t;
    s[(1, 1)] = t;
    s[(0, 1)] = c;
    s[(1, 0)] = c;
    SlhModel::new(
        s,
        vec![CMatrix::zeros(dim, dim); 2],
        CMatrix::zeros(dim, dim),
    )
}

/// Closed form of the monitored-system arrangement: a single-channel
/// component (I, L, H) concatenated with a passive vacuum port and fed
/// through the beam splitter, which collapses to (S_bs, S_bs [L; 0], H).
pub fn beam_splitter_composite(l: &CMatrix, h: &CMatrix, r: f64, theta: f64) -> Result<SlhModel> {
    let dim = l.nrows();
    let bs = beam_splitter(r, theta, dim)?;
    let s = bs.s().clone();
    let l_out = vec![l.map(|v| v * s[(0, 0)]), l.map(|v| v * s[(1, 0)])];
    SlhModel::new(s, l_out, h.clone())
}

/// JSON wire form: complex entries as [re, im] pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlhJson {
    #[serde(rename = "S")]
    pub s: Vec<Vec<[f64; 2]>>,
    #[serde(rename = "L")]
    pub l: Vec<Vec<Vec<[f64; 2]>>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<[f64; 2]>>,
}

pub fn matrix_to_pairs(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| [m[(i, j)].re, m[(i, j)].im])
                .collect()
        })
        .collect()
}

pub fn matrix_from_pairs(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(QtrajError::ShapeMismatch("empty matrix".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(QtrajError::ShapeMismatch("ragged matrix rows".into()));
    }
    Ok(CMatrix::from_fn(nrows, ncols, |i, j| {
        Complex64::new(rows[i][j][0], rows[i][j][1])
    }))
}

impl SlhJson {
    pub fn from_model(model: &SlhModel) -> Self {
        Self {
            s: matrix_to_pairs(model.s()),
            l: model.l().iter().map(matrix_to_pairs).collect(),
            h: matrix_to_pairs(model.h()),
        }
    }

    pub fn to_model(&self) -> Result<SlhModel> {
        let s = matrix_from_pairs(&self.s)?;
        let l = self
            .l
            .iter()
            .map(|m| matrix_from_pairs(m))
            .collect::<Result<Vec<_>>>()?;
        let h = matrix_from_pairs(&self.h)?;
        SlhModel::new(s, l, h)
    }
}
