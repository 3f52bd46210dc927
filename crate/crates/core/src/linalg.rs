//! Dense linear-algebra helpers shared by every module: the ambient norms,
//! their induced operator norms, rank decisions and log-scaled products.

use nalgebra::{DMatrix, DVector, Dim, Matrix, RawStorage};
use serde::{Deserialize, Serialize};

pub type Operator = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative singular-value cutoff used for every rank decision.
pub const RANK_TOL: f64 = 1e-10;

/// The norm on the ambient space; operators carry the induced norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OperatorNorm {
    L1,
    #[default]
    L2,
    Linf,
}

impl OperatorNorm {
    pub fn vector<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(&self, v: &Matrix<f64, R, C, S>) -> f64 {
        match self {
            OperatorNorm::L1 => v.iter().map(|x| x.abs()).sum(),
            OperatorNorm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            OperatorNorm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    /// Induced operator norm. l1/linf are exact column/row sums, l2 is the
    /// largest singular value.
    pub fn operator(&self, m: &Operator) -> f64 {
        if m.nrows() == 0 || m.ncols() == 0 {
            return 0.0;
        }
        match self {
            OperatorNorm::L1 => m
                .column_iter()
                .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            OperatorNorm::Linf => m
                .row_iter()
                .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            OperatorNorm::L2 => spectral_norm(m),
        }
    }

    /// The dual exponent: l1 <-> linf, l2 self-dual.
    pub fn dual(&self) -> OperatorNorm {
        match self {
            OperatorNorm::L1 => OperatorNorm::Linf,
            OperatorNorm::L2 => OperatorNorm::L2,
            OperatorNorm::Linf => OperatorNorm::L1,
        }
    }

    /// Constant c with ||M||_self <= c ||M||_2 for d x d matrices.
    pub fn l2_equivalence(&self, dim: usize) -> f64 {
        match self {
            OperatorNorm::L2 => 1.0,
            _ => (dim as f64).sqrt(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OperatorNorm::L1 => "l1",
            OperatorNorm::L2 => "l2",
            OperatorNorm::Linf => "linf",
        }
    }
}

impl std::str::FromStr for OperatorNorm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(OperatorNorm::L1),
            "l2" => Ok(OperatorNorm::L2),
            "linf" => Ok(OperatorNorm::Linf),
            other => Err(format!("unknown norm '{other}'")),
        }
    }
}

pub fn spectral_norm(m: &Operator) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Singular values in decreasing order.
pub fn singular_values(m: &Operator) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn smallest_singular_value(m: &Operator) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

pub fn condition_number(m: &Operator) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Numerical rank with the singular-value cutoff relative to the largest.
pub fn rank(m: &Operator, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let Some(&top) = s.first() else { return 0 };
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel_tol * top).count()
}

/// Orthonormal basis (columns) of the column span, assuming full column rank.
pub fn orthonormalize(b: &Operator) -> Operator {
    let k = b.ncols();
    if k == 0 {
        return Operator::zeros(b.nrows(), 0);
    }
    let q = b.clone().qr().q();
    q.columns(0, k).into_owned()
}

/// Right singular vectors of `m` (rows x d), ordered by decreasing singular
/// value, as the columns of a d x d orthogonal matrix, with the singular
/// values padded by zeros to length d.
pub fn right_singular_basis(m: &Operator) -> (Operator, Vec<f64>) {
    let d = m.ncols();
    let mut padded = Operator::zeros(m.nrows().max(d), d);
    padded.view_mut((0, 0), (m.nrows(), d)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..d).collect();
    let sv = svd.singular_values;
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let mut basis = Operator::zeros(d, d);
    let mut values = Vec::with_capacity(d);
    for (j, &idx) in order.iter().enumerate() {
        basis.set_column(j, &vt.row(idx).transpose());
        values.push(sv[idx]);
    }
    (basis, values)
}

/// Null space of `m` (rows x d): columns of the returned matrix span it.
/// Singular values at or below `rel_tol * max(1, sigma_max)` count as zero.
pub fn null_space(m: &Operator, rel_tol: f64) -> Operator {
    let d = m.ncols();
    if m.nrows() == 0 {
        return Operator::identity(d, d);
    }
    let (basis, values) = right_singular_basis(m);
    let cutoff = rel_tol * values.first().copied().unwrap_or(0.0).max(1.0);
    let keep: Vec<usize> = (0..d).filter(|&j| values[j] <= cutoff).collect();
    let mut out = Operator::zeros(d, keep.len());
    for (c, &j) in keep.iter().enumerate() {
        out.set_column(c, &basis.column(j));
    }
    out
}

/// Orthonormal basis of the orthogonal complement of span(b).
pub fn orthogonal_complement(b: &Operator) -> Operator {
    null_space(&b.transpose(), RANK_TOL)
}

/// Least-squares coordinates of the columns of `v` in the basis `b`.
pub fn coordinates(b: &Operator, v: &Operator) -> Operator {
    let svd = b.clone().svd(true, true);
    svd.solve(v, 1e-14).expect("svd solve with computed u and v_t")
}

pub fn hstack(parts: &[&Operator]) -> Operator {
    let rows = parts.first().map(|p| p.nrows()).unwrap_or(0);
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Operator::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        out.view_mut((0, c), (rows, p.ncols())).copy_from(*p);
        c += p.ncols();
    }
    out
}

pub fn diag(entries: &[f64]) -> Operator {
    Operator::from_diagonal(&Vector::from_column_slice(entries))
}

pub fn try_inverse(m: &Operator) -> Option<Operator> {
    if m.nrows() != m.ncols() {
        return None;
    }
    if m.nrows() == 0 {
        return Some(m.clone());
    }
    let inv = m.clone().try_inverse()?;
    // one step of iterative refinement
    let d = m.nrows();
    let inv = &inv + &inv * (Operator::identity(d, d) - m * &inv);
    inv.iter().all(|x| x.is_finite()).then_some(inv)
}

/// A matrix together with a natural-log scale factor: the represented
/// operator is `exp(log_scale) * matrix`.
#[derive(Debug, Clone)]
pub struct ScaledOperator {
    pub matrix: Operator,
    pub log_scale: f64,
}

impl ScaledOperator {
    pub fn identity(d: usize) -> Self {
        Self { matrix: Operator::identity(d, d), log_scale: 0.0 }
    }

    pub fn from_matrix(matrix: Operator) -> Self {
        Self { matrix, log_scale: 0.0 }
    }

    /// Left-multiply by `m`.
    pub fn push(&mut self, m: &Operator) {
        self.matrix = m * &self.matrix;
    }

    /// Right-multiply by `m`.
    pub fn push_right(&mut self, m: &Operator) {
        self.matrix = &self.matrix * m;
    }

    /// Move the largest entry magnitude into the log accumulator.
    pub fn renormalize(&mut self) {
        let s = self.matrix.amax();
        if s > 0.0 && s.is_finite() {
            self.matrix /= s;
            self.log_scale += s.ln();
        }
    }

    pub fn log_norm(&self, norm: OperatorNorm) -> f64 {
        self.log_scale + norm.operator(&self.matrix).ln()
    }

    pub fn to_operator(&self) -> Operator {
        &self.matrix * self.log_scale.exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn induced_norms_of_a_known_matrix() {
        let m = Operator::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 4.0]);
        assert_eq!(OperatorNorm::L1.operator(&m), 6.0);
        assert_eq!(OperatorNorm::Linf.operator(&m), 7.0);
        let expected = ((30.0 + (900.0f64 - 4.0 * 100.0).sqrt()) / 2.0).sqrt();
        assert!((OperatorNorm::L2.operator(&m) - expected).abs() < 1e-12);
    }

    #[test]
    fn null_space_of_rank_one_rows() {
        let m = Operator::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = null_space(&m, RANK_TOL);
        assert_eq!(n.ncols(), 2);
        assert!((&m * &n).amax() < 1e-14);
    }

    #[test]
    fn scaled_product_matches_plain_product() {
        let a = Operator::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let mut p = ScaledOperator::identity(2);
        let mut plain = Operator::identity(2, 2);
        for k in 0..40 {
            p.push(&a);
            plain = &a * plain;
            if k % 7 == 0 {
                p.renormalize();
            }
        }
        let rel = (p.to_operator() - &plain).amax() / plain.amax();
        assert!(rel < 1e-12);
    }

    #[test]
    fn dual_pairs() {
        assert_eq!(OperatorNorm::L1.dual(), OperatorNorm::Linf);
        assert_eq!(OperatorNorm::Linf.dual(), OperatorNorm::L1);
        assert_eq!(OperatorNorm::L2.dual(), OperatorNorm::L2);
    }
}
