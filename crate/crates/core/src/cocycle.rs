//! Operator fields `A(x)`, the two-sided cocycle they generate, Hölder data
//! and growth rates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{BasePoint, BaseSystem};
use crate::error::{Error, Result};
use crate::linalg::{self, Operator, OperatorNorm, ScaledOperator};

/// Products are renormalized after this many multiplications.
pub const RENORMALIZE_EVERY: usize = 16;

/// Value reported for `alpha_hat` when the tail block is empty.
pub const ALPHA_FLOOR: f64 = -1e6;

const INVERTIBILITY_TOL: f64 = 1e-12;

/// `phi(x) = offset + amp * sum_j w_j |sin(pi x_j)|^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    #[serde(default)]
    pub offset: f64,
    pub amplitude: f64,
    pub weights: Vec<f64>,
    #[serde(default = "one")]
    pub exponent: f64,
}

fn one() -> f64 {
    1.0
}

impl ScalarField {
    pub fn zero() -> Self {
        Self { offset: 0.0, amplitude: 0.0, weights: Vec::new(), exponent: 1.0 }
    }

    pub fn eval(&self, x: &BasePoint) -> f64 {
        let s: f64 = self
            .weights
            .iter()
            .zip(&x.coords)
            .map(|(w, c)| w * (PI * c).sin().abs().powf(self.exponent))
            .sum();
        self.offset + self.amplitude * s
    }

    /// `|phi(x) - phi(y)| <= h d(x, y)^exponent` given per-coordinate moduli.
    pub fn holder_constant(&self, moduli: &[f64]) -> f64 {
        let s: f64 = self
            .weights
            .iter()
            .zip(moduli)
            .map(|(w, c)| w.abs() * c.powf(self.exponent))
            .sum();
        self.amplitude.abs() * PI.powf(self.exponent) * s
    }

    pub fn sup_abs(&self) -> f64 {
        self.offset.abs() + self.amplitude.abs() * self.weights.iter().map(|w| w.abs()).sum::<f64>()
    }

    fn is_constant(&self) -> bool {
        self.amplitude == 0.0 || self.weights.iter().all(|w| *w == 0.0)
    }

    fn validate(&self, coord_len: usize) -> Result<()> {
        if self.weights.len() > coord_len {
            return Err(Error::InvalidInput(format!(
                "scalar field has {} weights for {coord_len} base coordinates",
                self.weights.len()
            )));
        }
        if !(self.exponent > 0.0 && self.exponent <= 1.0) {
            return Err(Error::InvalidInput("field exponent must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    Constant { matrix: Vec<Vec<f64>> },
    /// `A(x) = C(f x) D C(x)^-1` with `C(x) = exp(theta(x) J)(I + sigma(x) N)`.
    Coboundary { angle: ScalarField, shear: ScalarField, diagonal: Vec<f64> },
    /// `A(x) = R(theta(x)) D R(theta(x))^T`.
    RotationConjugated { angle: ScalarField, diagonal: Vec<f64> },
    /// `diag(lead, lead r, lead r^2, ...)` with declared leading block.
    TruncatedDiagonalCompact { lead: f64, decay: f64, dimension: usize, block_size: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CocycleGenerator {
    pub dimension: usize,
    pub field: FieldKind,
    pub holder_exponent: f64,
    pub holder_constant: f64,
    pub norm: OperatorNorm,
    pub invertible: bool,
    rotation_generator: Operator,
}

/// Skew generator `J` with `J^3 = -J` and `||J||_2 = 1`: planar blocks
/// conjugated by a Householder reflection so no axis is preferred.
pub fn rotation_generator(d: usize) -> Operator {
    let mut block = Operator::zeros(d, d);
    for p in 0..d / 2 {
        block[(2 * p + 1, 2 * p)] = 1.0;
        block[(2 * p, 2 * p + 1)] = -1.0;
    }
    let w = linalg::Vector::from_fn(d, |i, _| (i + 1) as f64).normalize();
    let mut v = w.clone();
    v[0] -= 1.0;
    let h = if v.norm() < 1e-12 {
        Operator::identity(d, d)
    } else {
        let v = v.normalize();
        Operator::identity(d, d) - 2.0 * &v * v.transpose()
    };
    &h * block * h.transpose()
}

/// `exp(theta J)` by the Rodrigues formula, valid because `J^3 = -J`.
pub fn rotation(j: &Operator, theta: f64) -> Operator {
    let d = j.nrows();
    Operator::identity(d, d) + theta.sin() * j + (1.0 - theta.cos()) * (j * j)
}

/// Strictly upper superdiagonal of ones.
pub fn nilpotent_shear(d: usize) -> Operator {
    Operator::from_fn(d, d, |i, j| if j == i + 1 { 1.0 } else { 0.0 })
}

fn as_matrix(rows: &[Vec<f64>]) -> Result<Operator> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidInput("constant field needs a square matrix".into()));
    }
    Ok(Operator::from_fn(d, d, |i, j| rows[i][j]))
}

fn sup_norm_of(diag: &[f64]) -> f64 {
    diag.iter().fold(0.0, |m, v| m.max(v.abs()))
}

impl CocycleGenerator {
    /// Builds a generator over `system`, computing the Hölder exponent as the
    /// smallest field exponent and the Hölder constant from the closed forms.
    pub fn new(field: FieldKind, norm: OperatorNorm, system: &BaseSystem) -> Result<Self> {
        let moduli = system.coordinate_moduli();
        let coord_len = moduli.len();
        let lip = system.lipschitz_forward;
        let (dimension, nu, a1_l2, invertible) = match &field {
            FieldKind::Constant { matrix } => {
                let m = as_matrix(matrix)?;
                let inv = linalg::smallest_singular_value(&m) > INVERTIBILITY_TOL;
                (m.nrows(), 1.0, 0.0, inv)
            }
            FieldKind::Coboundary { angle, shear, diagonal } => {
                angle.validate(coord_len)?;
                shear.validate(coord_len)?;
                let d = diagonal.len();
                let nu = match (angle.is_constant(), shear.is_constant()) {
                    (true, true) => 1.0,
                    (false, true) => angle.exponent,
                    (true, false) => shear.exponent,
                    (false, false) => angle.exponent.min(shear.exponent),
                };
                let dn = sup_norm_of(diagonal);
                let n_norm = if d > 1 { 1.0 } else { 0.0 };
                let s = shear.sup_abs();
                let q: f64 = (0..d).map(|k| (s * n_norm).powi(k as i32)).sum();
                let (ht, hs) = (angle.holder_constant(&moduli), shear.holder_constant(&moduli));
                let c_sup = 1.0 + s * n_norm;
                let a1 = dn
                    * ((ht * c_sup + hs * n_norm) * lip.powf(nu) * q
                        + c_sup * (q * ht + q * q * n_norm * hs));
                let inv = diagonal.iter().all(|v| v.abs() > INVERTIBILITY_TOL);
                (d, nu, a1, inv)
            }
            FieldKind::RotationConjugated { angle, diagonal } => {
                angle.validate(coord_len)?;
                let nu = if angle.is_constant() { 1.0 } else { angle.exponent };
                let a1 = 2.0 * sup_norm_of(diagonal) * angle.holder_constant(&moduli);
                let inv = diagonal.iter().all(|v| v.abs() > INVERTIBILITY_TOL);
                (diagonal.len(), nu, a1, inv)
            }
            FieldKind::TruncatedDiagonalCompact { lead, decay, dimension, .. } => {
                let last = (lead * decay.powi(*dimension as i32 - 1)).abs();
                (*dimension, 1.0, 0.0, last > INVERTIBILITY_TOL)
            }
        };
        if dimension < 1 {
            return Err(Error::InvalidInput("generator dimension must be positive".into()));
        }
        let holder_constant = a1_l2 * norm.l2_equivalence(dimension);
        Ok(Self {
            dimension,
            field,
            holder_exponent: nu,
            holder_constant,
            norm,
            invertible,
            rotation_generator: rotation_generator(dimension),
        })
    }

    pub fn constant(matrix: Operator, norm: OperatorNorm, system: &BaseSystem) -> Result<Self> {
        let rows = matrix.row_iter().map(|r| r.iter().copied().collect()).collect();
        Self::new(FieldKind::Constant { matrix: rows }, norm, system)
    }

    /// The same field with negative iterates disabled.
    pub fn forward_only(&self) -> Self {
        Self { invertible: false, ..self.clone() }
    }

    /// Coordinate block whose complement carries the compactness surrogate.
    pub fn block_size(&self) -> usize {
        match &self.field {
            FieldKind::TruncatedDiagonalCompact { block_size, .. } => *block_size,
            _ => self.dimension,
        }
    }

    /// Conjugator `C(x)` of a coboundary field.
    pub fn conjugator(&self, x: &BasePoint) -> Option<Operator> {
        match &self.field {
            FieldKind::Coboundary { angle, shear, .. } => {
                let d = self.dimension;
                let r = rotation(&self.rotation_generator, angle.eval(x));
                Some(r * (Operator::identity(d, d) + shear.eval(x) * nilpotent_shear(d)))
            }
            FieldKind::RotationConjugated { angle, .. } => {
                Some(rotation(&self.rotation_generator, angle.eval(x)))
            }
            _ => None,
        }
    }

    pub fn diagonal(&self) -> Option<Vec<f64>> {
        match &self.field {
            FieldKind::Coboundary { diagonal, .. } | FieldKind::RotationConjugated { diagonal, .. } => {
                Some(diagonal.clone())
            }
            FieldKind::TruncatedDiagonalCompact { lead, decay, dimension, .. } => {
                Some((0..*dimension).map(|j| lead * decay.powi(j as i32)).collect())
            }
            FieldKind::Constant { .. } => None,
        }
    }

    pub fn evaluate(&self, system: &BaseSystem, x: &BasePoint) -> Result<Operator> {
        if x.space != system.space() {
            return Err(Error::SpaceMismatch(x.space.to_string(), system.space().to_string()));
        }
        let m = match &self.field {
            FieldKind::Constant { matrix } => as_matrix(matrix)?,
            FieldKind::Coboundary { diagonal, .. } => {
                let fx = system.evaluate_map(x, 1)?;
                let cx = self.conjugator(x).expect("coboundary");
                let cfx = self.conjugator(&fx).expect("coboundary");
                let cinv = linalg::try_inverse(&cx).ok_or(Error::SingularGenerator(0.0))?;
                cfx * linalg::diag(diagonal) * cinv
            }
            FieldKind::RotationConjugated { diagonal, .. } => {
                let r = self.conjugator(x).expect("rotation");
                &r * linalg::diag(diagonal) * r.transpose()
            }
            FieldKind::TruncatedDiagonalCompact { .. } => {
                linalg::diag(&self.diagonal().expect("diagonal"))
            }
        };
        if self.invertible {
            let s = linalg::smallest_singular_value(&m);
            if s <= INVERTIBILITY_TOL {
                return Err(Error::SingularGenerator(s));
            }
        }
        Ok(m)
    }

    /// `A` at `points[j]` for every `j` but the last, where `points` is an
    /// orbit segment (so `points[j + 1] = f(points[j])`).
    pub fn evaluate_on_orbit(&self, system: &BaseSystem, points: &[BasePoint]) -> Result<Vec<Operator>> {
        let mut out = Vec::with_capacity(points.len().saturating_sub(1));
        for w in points.windows(2) {
            let m = match &self.field {
                FieldKind::Coboundary { diagonal, .. } => {
                    let cx = self.conjugator(&w[0]).expect("coboundary");
                    let cfx = self.conjugator(&w[1]).expect("coboundary");
                    let cinv = linalg::try_inverse(&cx).ok_or(Error::SingularGenerator(0.0))?;
                    cfx * linalg::diag(diagonal) * cinv
                }
                _ => self.evaluate(system, &w[0])?,
            };
            out.push(m);
        }
        Ok(out)
    }

    pub fn evaluate_inverse(&self, system: &BaseSystem, x: &BasePoint) -> Result<Operator> {
        let m = self.evaluate(system, x)?;
        linalg::try_inverse(&m).ok_or(Error::SingularGenerator(linalg::smallest_singular_value(&m)))
    }

    /// Analytic upper bound for `sup_x ||A(x)||` in the generator's norm.
    pub fn sup_norm(&self) -> f64 {
        let eq = self.norm.l2_equivalence(self.dimension);
        match &self.field {
            FieldKind::Constant { matrix } => self.norm.operator(&as_matrix(matrix).expect("validated")),
            FieldKind::Coboundary { shear, diagonal, .. } => {
                let (c, q) = self.shear_bounds(shear);
                eq * sup_norm_of(diagonal) * c * q
            }
            FieldKind::RotationConjugated { diagonal, .. } => eq * sup_norm_of(diagonal),
            FieldKind::TruncatedDiagonalCompact { .. } => {
                sup_norm_of(&self.diagonal().expect("diagonal"))
            }
        }
    }

    /// Analytic upper bound for `sup_x ||A(x)^-1||`.
    pub fn sup_inverse_norm(&self) -> f64 {
        let eq = self.norm.l2_equivalence(self.dimension);
        let inv_diag = |d: &[f64]| d.iter().fold(0.0f64, |m, v| m.max(1.0 / v.abs()));
        match &self.field {
            FieldKind::Constant { matrix } => {
                let m = as_matrix(matrix).expect("validated");
                linalg::try_inverse(&m).map(|i| self.norm.operator(&i)).unwrap_or(f64::INFINITY)
            }
            FieldKind::Coboundary { shear, diagonal, .. } => {
                let (c, q) = self.shear_bounds(shear);
                eq * inv_diag(diagonal) * c * q
            }
            FieldKind::RotationConjugated { diagonal, .. } => eq * inv_diag(diagonal),
            FieldKind::TruncatedDiagonalCompact { .. } => inv_diag(&self.diagonal().expect("diagonal")),
        }
    }

    fn shear_bounds(&self, shear: &ScalarField) -> (f64, f64) {
        let n_norm = if self.dimension > 1 { 1.0 } else { 0.0 };
        let s = shear.sup_abs() * n_norm;
        (1.0 + s, (0..self.dimension).map(|k| s.powi(k as i32)).sum())
    }
}

/// `A(x)` as a `d x d` array.
pub fn evaluate_generator(gen: &CocycleGenerator, system: &BaseSystem, x: &BasePoint) -> Result<Operator> {
    gen.evaluate(system, x)
}

/// `A(x, n)` as a renormalized product.
pub fn cocycle_scaled(gen: &CocycleGenerator, system: &BaseSystem, x: &BasePoint, n: i64) -> Result<ScaledOperator> {
    let d = gen.dimension;
    let mut p = ScaledOperator::identity(d);
    if n == 0 {
        return Ok(p);
    }
    if n < 0 && !(gen.invertible && system.invertible) {
        return Err(Error::NegativeIterateOfNonInvertible);
    }
    if n > 0 {
        let orbit = system.orbit_window(x, 0, n)?;
        for (k, a) in gen.evaluate_on_orbit(system, &orbit)?.iter().enumerate() {
            p.push(a);
            if (k + 1) % RENORMALIZE_EVERY == 0 {
                p.renormalize();
            }
        }
    } else {
        let orbit = system.orbit_window(x, n, 0)?;
        let gens = gen.evaluate_on_orbit(system, &orbit)?;
        for (k, a) in gens.iter().rev().enumerate() {
            let inv = linalg::try_inverse(a).ok_or(Error::SingularGenerator(linalg::smallest_singular_value(a)))?;
            p.push(&inv);
            if (k + 1) % RENORMALIZE_EVERY == 0 {
                p.renormalize();
            }
        }
    }
    Ok(p)
}

/// `A(x, n)`: `A(f^{n-1}x)...A(x)` for `n > 0`, identity at 0, and the
/// inverse products for `n < 0`.
pub fn cocycle(gen: &CocycleGenerator, system: &BaseSystem, x: &BasePoint, n: i64) -> Result<Operator> {
    Ok(cocycle_scaled(gen, system, x, n)?.to_operator())
}

/// `rho(A, B) = ||A - B|| + ||A^-1 - B^-1||`.
pub fn operator_metric(a: &Operator, b: &Operator, norm: OperatorNorm) -> Result<f64> {
    let ai = linalg::try_inverse(a).ok_or(Error::SingularGenerator(linalg::smallest_singular_value(a)))?;
    let bi = linalg::try_inverse(b).ok_or(Error::SingularGenerator(linalg::smallest_singular_value(b)))?;
    Ok(norm.operator(&(a - b)) + norm.operator(&(ai - bi)))
}

/// Norm of `T` restricted to the coordinates after the first `block_size`;
/// zero once the tail is empty.
pub fn kuratowski_estimate(t: &Operator, block_size: usize, norm: OperatorNorm) -> f64 {
    let d = t.ncols();
    if block_size >= d {
        return 0.0;
    }
    norm.operator(&t.columns(block_size, d - block_size).into_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthRates {
    pub lambda_hat: f64,
    pub alpha_hat: f64,
    pub horizon: usize,
}

pub fn growth_rates(
    gen: &CocycleGenerator,
    system: &BaseSystem,
    x: &BasePoint,
    horizon: usize,
    block_size: usize,
) -> Result<GrowthRates> {
    if horizon < 8 {
        return Err(Error::InvalidInput("growth rates need N >= 8".into()));
    }
    let p = cocycle_scaled(gen, system, x, horizon as i64)?;
    let n = horizon as f64;
    let lambda_hat = p.log_norm(gen.norm) / n;
    let k = kuratowski_estimate(&p.matrix, block_size, gen.norm);
    let alpha_hat = if k > 0.0 { (p.log_scale + k.ln()) / n } else { ALPHA_FLOOR };
    Ok(GrowthRates { lambda_hat, alpha_hat: alpha_hat.min(lambda_hat), horizon })
}

/// `a = max{supA L^nu, a1 + supA}`.
pub fn propagated_holder_constant(a1: f64, sup_a: f64, lipschitz: f64, nu: f64) -> f64 {
    (sup_a * lipschitz.powf(nu)).max(a1 + sup_a)
}

/// Propagated constant valid for both time directions: the backward cocycle
/// is generated by `x -> A(f^-1 x)^-1` over `f^-1`.
pub fn two_sided_holder_constant(gen: &CocycleGenerator, system: &BaseSystem) -> f64 {
    let nu = gen.holder_exponent;
    let fwd = propagated_holder_constant(gen.holder_constant, gen.sup_norm(), system.lipschitz_forward, nu);
    match system.lipschitz_backward {
        Some(lb) if gen.invertible => {
            let sinv = gen.sup_inverse_norm();
            let a1_inv = sinv * sinv * gen.holder_constant * lb.powf(nu);
            fwd.max(propagated_holder_constant(a1_inv, sinv, lb, nu))
        }
        _ => fwd,
    }
}

/// Fallback Hölder constant: `1.05 x` the largest audited ratio.
pub fn estimate_holder_constant(
    gen: &CocycleGenerator,
    system: &BaseSystem,
    pairs: &[(BasePoint, BasePoint)],
) -> Result<f64> {
    let mut best = 0.0f64;
    for (x, y) in pairs {
        let d = system.metric(x, y)?;
        if d == 0.0 {
            continue;
        }
        let diff = gen.norm.operator(&(gen.evaluate(system, x)? - gen.evaluate(system, y)?));
        best = best.max(diff / d.powf(gen.holder_exponent));
    }
    Ok(1.05 * best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderPropagationReport {
    pub distance: f64,
    pub a: f64,
    /// `(n, ||A(x,n) - A(y,n)|| / (a^|n| d^nu))`.
    pub ratios: Vec<(i64, f64)>,
    pub pass: bool,
}

pub fn verify_cocycle_holder(
    gen: &CocycleGenerator,
    system: &BaseSystem,
    x: &BasePoint,
    y: &BasePoint,
    n_max: usize,
    a: f64,
) -> Result<HolderPropagationReport> {
    let distance = system.metric(x, y)?;
    if distance == 0.0 {
        return Err(Error::DegeneratePair);
    }
    let two_sided = gen.invertible && system.invertible;
    let lo = if two_sided { -(n_max as i64) } else { 0 };
    let dnu = distance.powf(gen.holder_exponent);
    let mut ratios = Vec::new();
    for n in lo..=n_max as i64 {
        let ax = cocycle_scaled(gen, system, x, n)?;
        let ay = cocycle_scaled(gen, system, y, n)?;
        // compare in log space so that a^|n| never overflows
        let shift = ax.log_scale.max(ay.log_scale);
        let diff = &ax.matrix * (ax.log_scale - shift).exp() - &ay.matrix * (ay.log_scale - shift).exp();
        let num = gen.norm.operator(&diff);
        let ratio = if num == 0.0 {
            0.0
        } else {
            (num.ln() + shift - n.unsigned_abs() as f64 * a.ln() - dnu.ln()).exp()
        };
        ratios.push((n, ratio));
    }
    let pass = ratios.iter().all(|(_, r)| *r <= 1.0 + 1e-9);
    Ok(HolderPropagationReport { distance, a, ratios, pass })
}
