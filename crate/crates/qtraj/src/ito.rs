//! Quantum Ito algebra over the fundamental increments dL[k,l].
//!
//! Index 0 is reserved for time: dL[0,0] = dt, dL[0,k] = dA_k,
//! dL[k,0] = dA_k-dagger, dL[k,l] = gauge process between channels.
//! The product rule is dL[k,r] dL[s,l] = d(r,s) dL[k,l] where d(r,s) = 1
//! iff r = s >= 1 and 0 otherwise. Coefficients are adapted system
//! operators and commute with forward increments, so coefficient products
//! keep left-to-right order.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{QtrajError, Result};
use crate::hilbert::{max_abs_entry, unitarity_defect, CMatrix};

/// Unitarity tolerance for scattering matrices fed to the builder.
pub const UNITARITY_TOL: f64 = 1e-8;

/// Relative symmetry tolerance for product tables (scaled by coefficient size).
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Default number of random (S, L) instantiations used by the oracle.
pub const DEFAULT_PROBES: usize = 8;

/// Hilbert dimension of randomly probed system operators.
pub const PROBE_DIM: usize = 4;

/// A finite sum of operator-valued Ito increments: sum c[k,l] dL[k,l].
#[derive(Debug, Clone, PartialEq)]
pub struct ItoExpression {
    channels: usize,
    dim: usize,
    terms: BTreeMap<(usize, usize), CMatrix>,
}

impl ItoExpression {
    pub fn zero(channels: usize, dim: usize) -> Self {
        Self {
            channels,
            dim,
            terms: BTreeMap::new(),
        }
    }

    /// Single increment dL[k,l] with unit coefficient.
    pub fn increment(channels: usize, dim: usize, k: usize, l: usize) -> Result<Self> {
        let mut e = Self::zero(channels, dim);
        e.add_term(k, l, CMatrix::identity(dim, dim))?;
        Ok(e)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add_term(&mut self, k: usize, l: usize, coeff: CMatrix) -> Result<()> {
        if k > self.channels || l > self.channels {
            return Err(QtrajError::InvalidDimension(format!(
                "increment index ({k},{l}) outside channel range 0..={}",
                self.channels
            )));
        }
        if coeff.nrows() != self.dim || coeff.ncols() != self.dim {
            return Err(QtrajError::ShapeMismatch(format!(
                "coefficient {}x{} on dim-{} expression",
                coeff.nrows(),
                coeff.ncols(),
                self.dim
            )));
        }
        match self.terms.get_mut(&(k, l)) {
            Some(existing) => *existing += coeff,
            None => {
                self.terms.insert((k, l), coeff);
            }
        }
        if let Some(c) = self.terms.get(&(k, l)) {
            if max_abs_entry(c) == 0.0 {
                self.terms.remove(&(k, l));
            }
        }
        Ok(())
    }

    pub fn coefficient(&self, k: usize, l: usize) -> Option<&CMatrix> {
        self.terms.get(&(k, l))
    }

    pub fn terms(&self) -> impl Iterator<Item = (&(usize, usize), &CMatrix)> {
        self.terms.iter()
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        if c == Complex64::new(0.0, 0.0) {
            out.terms.clear();
            return out;
        }
        for coeff in out.terms.values_mut() {
            *coeff *= c;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (&(k, l), coeff) in other.terms.iter() {
            out.add_term(k, l, coeff.clone())?;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Ito product: bilinear expansion with dL[k,r] dL[s,l] = d(r,s) dL[k,l].
    pub fn product(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out = Self::zero(self.channels, self.dim);
        for (&(k, r), c1) in self.terms.iter() {
            if r == 0 {
                continue; // d(0, s) = 0 for every s
            }
            for (&(s, l), c2) in other.terms.iter() {
                if s == r {
                    out.add_term(k, l, c1 * c2)?;
                }
            }
        }
        Ok(out)
    }

    /// Expression with the dt term removed (used for drift-free comparisons).
    pub fn dt_free(&self) -> Self {
        let mut out = self.clone();
        out.terms.remove(&(0, 0));
        out
    }

    pub fn max_coefficient_norm(&self) -> f64 {
        self.terms.values().map(max_abs_entry).fold(0.0, f64::max)
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.max_coefficient_norm() <= tol
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.channels != other.channels || self.dim != other.dim {
            return Err(QtrajError::ShapeMismatch(format!(
                "expressions on {} channels dim {} vs {} channels dim {}",
                self.channels, self.dim, other.channels, other.dim
            )));
        }
        Ok(())
    }
}

/// The raw increment blocks of a general measurement on output fields
/// dA~ = S dA + L dt and dG~ = S* dG S^T + S* dA* L^T + L* dA^T S^T + L* L^T dt:
///   a1_i = sum_k S*[i,k] dL[k,0]
///   a2_i = sum_k S[i,k]  dL[0,k]
///   b1_i = sum_{k,k'} S*[i,k] S[i,k'] dL[k,k']
///   b2_i = L_i sum_k S*[i,k] dL[k,0]
///   b3_i = L_i-dagger sum_k S[i,k] dL[0,k]
///   b4_i = L_i-dagger L_i dt
#[derive(Debug, Clone)]
pub struct MeasurementBlocks {
    pub a1: Vec<ItoExpression>,
    pub a2: Vec<ItoExpression>,
    pub b1: Vec<ItoExpression>,
    pub b2: Vec<ItoExpression>,
    pub b3: Vec<ItoExpression>,
    pub b4: Vec<ItoExpression>,
}

pub fn measurement_blocks(s: &CMatrix, l_ops: &[CMatrix]) -> Result<MeasurementBlocks> {
    let n = s.nrows();
    if s.ncols() != n || n == 0 {
        return Err(QtrajError::ShapeMismatch(format!(
            "scattering matrix {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if l_ops.len() != n {
        return Err(QtrajError::ShapeMismatch(format!(
            "{} coupling operators for {} channels",
            l_ops.len(),
            n
        )));
    }
    let dim = l_ops[0].nrows();
    for op in l_ops {
        if op.nrows() != dim || op.ncols() != dim {
            return Err(QtrajError::ShapeMismatch(
                "coupling operators must share a square dimension".into(),
            ));
        }
    }
    let defect = unitarity_defect(s);
    if defect > UNITARITY_TOL {
        return Err(QtrajError::NotUnitary {
            deviation: defect,
            tol: UNITARITY_TOL,
        });
    }

    let id = CMatrix::identity(dim, dim);
    let mut blocks = MeasurementBlocks {
        a1: vec![ItoExpression::zero(n, dim); n],
        a2: vec![ItoExpression::zero(n, dim); n],
        b1: vec![ItoExpression::zero(n, dim); n],
        b2: vec![ItoExpression::zero(n, dim); n],
        b3: vec![ItoExpression::zero(n, dim); n],
        b4: vec![ItoExpression::zero(n, dim); n],
    };
    for i in 0..n {
        let li = &l_ops[i];
        let li_dag = li.adjoint();
        for k in 0..n {
            let s_ik = s[(i, k)];
            blocks.a1[i].add_term(k + 1, 0, id.scale_complex(s_ik.conj()))?;
            blocks.a2[i].add_term(0, k + 1, id.scale_complex(s_ik))?;
            blocks.b2[i].add_term(k + 1, 0, li.scale_complex(s_ik.conj()))?;
            blocks.b3[i].add_term(0, k + 1, li_dag.scale_complex(s_ik))?;
            for k2 in 0..n {
                blocks.b1[i].add_term(k + 1, k2 + 1, id.scale_complex(s_ik.conj() * s[(i, k2)]))?;
            }
        }
        blocks.b4[i].add_term(0, 0, &li_dag * li)?;
    }
    Ok(blocks)
}

trait ScaleComplex {
    fn scale_complex(&self, c: Complex64) -> CMatrix;
}

impl ScaleComplex for CMatrix {
    fn scale_complex(&self, c: Complex64) -> CMatrix {
        self.map(|x| x * c)
    }
}

/// Assemble the measurement vector
///   dY = F* da1 + F da2 + [(FL)* + FL] dt + G (db1 + db2 + db3 + db4)
/// for an instantiated network (S, L).
pub fn build_dy(
    f: &CMatrix,
    g: &CMatrix,
    s: &CMatrix,
    l_ops: &[CMatrix],
) -> Result<Vec<ItoExpression>> {
    let n = f.nrows();
    if f.ncols() != n || g.nrows() != n || g.ncols() != n {
        return Err(QtrajError::ShapeMismatch(format!(
            "quadrature/counting selections must be {n}x{n}"
        )));
    }
    if s.nrows() != n {
        return Err(QtrajError::ShapeMismatch(format!(
            "scattering matrix {}x{} for {} measurement channels",
            s.nrows(),
            s.ncols(),
            n
        )));
    }
    let blocks = measurement_blocks(s, l_ops)?;
    let dim = l_ops[0].nrows();

    let mut dy = Vec::with_capacity(n);
    for i in 0..n {
        let mut expr = ItoExpression::zero(n, dim);
        // F* da1 + F da2
        for k in 0..n {
            expr = expr.add(&blocks.a1[k].scale(f[(i, k)].conj()))?;
            expr = expr.add(&blocks.a2[k].scale(f[(i, k)]))?;
        }
        // drift of the quadrature part: (FL)_i + (FL)_i-dagger
        let mut fl = CMatrix::zeros(dim, dim);
        for k in 0..n {
            fl += l_ops[k].scale_complex(f[(i, k)]);
        }
        expr.add_term(0, 0, &fl + fl.adjoint())?;
        // counting part
        for j in 0..n {
            let gij = g[(i, j)];
            if gij == Complex64::new(0.0, 0.0) {
                continue;
            }
            expr = expr.add(&blocks.b1[j].scale(gij))?;
            expr = expr.add(&blocks.b2[j].scale(gij))?;
            expr = expr.add(&blocks.b3[j].scale(gij))?;
            expr = expr.add(&blocks.b4[j].scale(gij))?;
        }
        dy.push(expr);
    }
    Ok(dy)
}

/// Pairwise Ito products x_i y_j of two expression vectors.
pub fn vector_product_table(
    x: &[ItoExpression],
    y: &[ItoExpression],
) -> Result<Vec<Vec<ItoExpression>>> {
    let mut table = Vec::with_capacity(x.len());
    for xi in x {
        let mut row = Vec::with_capacity(y.len());
        for yj in y {
            row.push(xi.product(yj)?);
        }
        table.push(row);
    }
    Ok(table)
}

/// Product table dY dY^T of an instantiated measurement vector.
pub fn product_table(dy: &[ItoExpression]) -> Result<Vec<Vec<ItoExpression>>> {
    vector_product_table(dy, dy)
}

/// Largest coefficient deviation between table[i][j] and table[j][i],
/// together with the largest coefficient magnitude (for relative scaling).
#[allow(clippy::needless_range_loop)] // cross-indexes table[j][i]
pub fn symmetry_defect(table: &[Vec<ItoExpression>]) -> Result<(f64, f64)> {
    let n = table.len();
    let mut defect = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        if table[i].len() != n {
            return Err(QtrajError::ShapeMismatch(
                "product table must be square".into(),
            ));
        }
        for j in 0..n {
            scale = scale.max(table[i][j].max_coefficient_norm());
            if j > i {
                let diff = table[i][j].sub(&table[j][i])?;
                defect = defect.max(diff.max_coefficient_norm());
            }
        }
    }
    Ok((defect, scale))
}

/// True iff the table equals its transpose entrywise, with coefficient
/// equality decided within `rel_tol` scaled by the table's magnitude.
pub fn is_symmetric(table: &[Vec<ItoExpression>], rel_tol: f64) -> Result<bool> {
    let (defect, scale) = symmetry_defect(table)?;
    Ok(defect <= rel_tol * scale.max(1.0))
}

/// Random (S, L) instantiation for oracle probes: S from the QR factor of an
/// iid complex Gaussian matrix, coupling operators iid complex Gaussian.
pub fn random_instantiation<R: Rng>(
    channels: usize,
    dim: usize,
    rng: &mut R,
) -> (CMatrix, Vec<CMatrix>) {
    let raw = CMatrix::from_fn(channels, channels, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let s = raw.qr().q();
    let l_ops = (0..channels)
        .map(|_| {
            CMatrix::from_fn(dim, dim, |_, _| {
                Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            })
        })
        .collect();
    (s, l_ops)
}

/// Brute-force self-commutativity verdict: the measurement is accepted as
/// self-commutative iff dY dY^T comes out symmetric on every random
/// (S, L) probe.
pub fn oracle_self_commutative<R: Rng>(
    f: &CMatrix,
    g: &CMatrix,
    probes: usize,
    rng: &mut R,
) -> Result<bool> {
    let n = f.nrows();
    for _ in 0..probes {
        let (s, l_ops) = random_instantiation(n, PROBE_DIM, rng);
        let dy = build_dy(f, g, &s, &l_ops)?;
        let table = product_table(&dy)?;
        if !is_symmetric(&table, SYMMETRY_TOL)? {
            return Ok(false);
        }
    }
    Ok(true)
}
