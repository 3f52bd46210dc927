//! Closed-form Hölder constants, the two-sequence lemma lab, pair verifiers
//! for the splitting and the filtration, and log-log exponent fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cocycle::{CocycleGenerator, ALPHA_FLOOR};
use crate::dynamics::{BasePoint, BaseSystem};
use crate::error::{Error, Result};
use crate::geometry::{self, DirectSum, Subspace};
use crate::linalg::{self, Operator, OperatorNorm, ScaledOperator};
use crate::oseledets::{fast_slow, Filtration, LyapunovSpectrum, OseledetsSplitting, SweepCache};

/// Relative slack on every bound comparison.
pub const BOUND_SLACK: f64 = 1e-6;

/// Absolute floor below which a measured distance is rounding noise.
pub const ROUNDOFF: f64 = 1e-14;

/// Inputs shared by every constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantInputs {
    /// `lambda_1, ..., lambda_{k+1}`.
    pub lambdas: Vec<f64>,
    pub epsilon: f64,
    pub ell: f64,
    pub a: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderConstants {
    pub level: usize,
    pub c_minus: f64,
    pub nu_minus: f64,
    pub c_plus: f64,
    pub nu_plus: f64,
    /// Present for `level >= 2`.
    pub c_hat: Option<f64>,
    pub nu_hat: Option<f64>,
    pub c_main: Option<f64>,
    pub nu_main: Option<f64>,
    pub omega: Option<f64>,
    pub inputs: ConstantInputs,
}

/// Constants of level `i` for `lambdas = [lambda_1, ..., lambda_{k+1}]`.
pub fn theoretical_constants_from(i: usize, lambdas: &[f64], epsilon: f64, ell: f64, a: f64, nu: f64) -> Result<HolderConstants> {
    if i == 0 || i >= lambdas.len() {
        return Err(Error::InvalidInput(format!("level {i} outside 1..={}", lambdas.len().saturating_sub(1))));
    }
    if !(epsilon > 0.0) || !(ell >= 1.0) || !(nu > 0.0 && nu <= 1.0) || !(a > 0.0) {
        return Err(Error::ConstraintViolation(format!("need eps > 0, ell >= 1, nu in (0,1], a > 0 (eps {epsilon}, ell {ell}, nu {nu}, a {a})")));
    }
    let lam = |j: usize| lambdas[j - 1];
    let (li, lnext) = (lam(i), lam(i + 1));
    if lnext <= ALPHA_FLOOR {
        return Err(Error::ConstraintViolation(format!("level {i} has a trivial slow space")));
    }
    let la = a.ln();
    let gap = li - lnext;
    if !(gap > 4.0 * epsilon) {
        return Err(Error::ConstraintViolation(format!("gap {gap} at level {i} must exceed 4 eps = {}", 4.0 * epsilon)));
    }
    if !(la > li - epsilon) || !(la > -lnext - 2.0 * epsilon) {
        return Err(Error::ConstraintViolation(format!("log a = {la} too small for level {i}")));
    }
    let k0 = (4.0 + 2.0 * ell) * ell * ell;
    let c_minus = k0 * (gap - 2.0 * epsilon).exp();
    let nu_minus = nu * (gap - 2.0 * epsilon) / (la - lnext - epsilon);
    let c_plus = k0 * (gap - 4.0 * epsilon).exp();
    let nu_plus = nu * (gap - 4.0 * epsilon) / (la + li - 2.0 * epsilon);
    let (mut c_hat, mut nu_hat, mut c_main, mut nu_main, mut omega) = (None, None, None, None, None);
    if i >= 2 {
        let lprev = lam(i - 1);
        let g2 = lprev - li - 2.0 * epsilon;
        if !(g2 > 0.0) || !(la > lprev - epsilon) {
            return Err(Error::ConstraintViolation(format!("level {i}: need lambda_(i-1) - lambda_i > 2 eps and log a > lambda_(i-1) - eps")));
        }
        let ch = (4.0 + 6.0 * ell) * (3.0 * ell).powi(2) * g2.exp();
        let nh = g2 / (la - li - epsilon);
        let cm = 6.0 * ell * c_plus + 2.0 * ch * (ell * c_plus + 1.0);
        let nm = nu_plus * nh;
        c_hat = Some(ch);
        nu_hat = Some(nh);
        c_main = Some(cm);
        nu_main = Some(nm);
        omega = Some(nm / nu);
    }
    Ok(HolderConstants {
        level: i,
        c_minus,
        nu_minus,
        c_plus,
        nu_plus,
        c_hat,
        nu_hat,
        c_main,
        nu_main,
        omega,
        inputs: ConstantInputs { lambdas: lambdas.to_vec(), epsilon, ell, a, nu },
    })
}

pub fn theoretical_constants(i: usize, spectrum: &LyapunovSpectrum, epsilon: f64, ell: f64, a: f64, nu: f64) -> Result<HolderConstants> {
    let lambdas: Vec<f64> = (1..=spectrum.levels() + 1).map(|j| spectrum.lambda(j)).collect();
    theoretical_constants_from(i, &lambdas, epsilon, ell, a, nu)
}

/// `C = (4+2l) l^2 e^{lambda_{i-1} - lambda_i - 2eps}` and
/// `nu_i = nu (lambda_{i-1} - lambda_i - 2eps) / (log a - lambda_i - eps)`.
pub fn filtration_constants(i: usize, spectrum: &LyapunovSpectrum, epsilon: f64, ell: f64, a: f64, nu: f64) -> Result<(f64, f64)> {
    if i < 2 || i > spectrum.levels() + 1 {
        return Err(Error::InvalidInput(format!("filtration level {i} outside 2..={}", spectrum.levels() + 1)));
    }
    let (lprev, li) = (spectrum.lambda(i - 1), spectrum.lambda(i));
    let g = lprev - li - 2.0 * epsilon;
    let la = a.ln();
    if !(g > 0.0) || !(la > lprev - epsilon) || !(ell >= 1.0) {
        return Err(Error::ConstraintViolation(format!("filtration level {i}: gap or log a too small")));
    }
    Ok(((4.0 + 2.0 * ell) * ell * ell * g.exp(), nu * g / (la - li - epsilon)))
}

/// `floor(log delta / log(alpha2 / a))`, the `n` with
/// `(alpha2/a)^{n+1} <= delta < (alpha2/a)^n`.
pub fn bracket_index(delta: f64, alpha2: f64, a: f64) -> i64 {
    let r = (alpha2 / a).ln();
    let mut n = (delta.ln() / r).floor() as i64;
    // guard the floor against rounding at the bracket edges
    let q = alpha2 / a;
    while n > 0 && !(delta < q.powi(n as i32)) {
        n -= 1;
    }
    while q.powi(n as i32 + 1) > delta {
        n += 1;
    }
    n
}

/// Certified instance of the two-sequence lemma at a single time `n_star`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaL5Instance {
    #[serde(skip)]
    pub a_n: Operator,
    #[serde(skip)]
    pub b_n: Operator,
    pub e: Subspace,
    pub e_prime: Subspace,
    pub f: Subspace,
    pub f_prime: Subspace,
    pub alpha1: f64,
    pub alpha2: f64,
    pub ell: f64,
    pub a: f64,
    pub delta: f64,
    pub n_star: usize,
    pub certificates: L5Certificates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct L5Certificates {
    /// `max ||A u|| / (ell alpha2^n ||u||)` over `E`, must be `<= 1`.
    pub a_contract: f64,
    /// `ell ||A v|| / (alpha1^n ||v||)` minimized over `E'`, must be `>= 1`.
    pub a_expand: f64,
    pub b_contract: f64,
    pub b_expand: f64,
    /// Largest projection norm of either splitting, must be `<= ell`.
    pub projection: f64,
    /// `||A_n - B_n|| / (delta a^n)`, must be `<= 1`.
    pub closeness: f64,
    pub bracket: bool,
}

impl L5Certificates {
    pub fn pass(&self) -> bool {
        const T: f64 = 1e-10;
        self.a_contract <= 1.0 + T
            && self.b_contract <= 1.0 + T
            && self.a_expand >= 1.0 - T
            && self.b_expand >= 1.0 - T
            && self.closeness <= 1.0 + T
            && self.bracket
    }
}

fn projection_bound(e: &Subspace, e_prime: &Subspace) -> Result<f64> {
    let s = DirectSum::new(vec![e.clone(), e_prime.clone()])?;
    let p = s.projection(0)?;
    let d = p.nrows();
    let norm = e.norm;
    Ok(norm.operator(&p).max(norm.operator(&(Operator::identity(d, d) - p))))
}

impl LemmaL5Instance {
    /// Picks the smallest admissible `a >= alpha1` and `delta`, then checks
    /// the three hypotheses numerically.
    #[allow(clippy::too_many_arguments)]
    pub fn certify(
        a_n: Operator,
        b_n: Operator,
        e: Subspace,
        e_prime: Subspace,
        f: Subspace,
        f_prime: Subspace,
        alpha1: f64,
        alpha2: f64,
        ell: f64,
        n_star: usize,
    ) -> Result<Self> {
        if !(alpha2 < alpha1 && alpha2 > 0.0) || !(ell >= 1.0) || n_star == 0 {
            return Err(Error::InvalidInput("need 0 < alpha2 < alpha1, ell >= 1 and n >= 1".into()));
        }
        let norm = e.norm;
        let n = n_star as i32;
        let gap = norm.operator(&(&a_n - &b_n));
        let (a, delta) = if gap == 0.0 {
            (alpha1, (alpha2 / alpha1).powi(n + 1))
        } else {
            let a = alpha1.max(alpha2.powi(n + 1) / gap);
            (a, gap / a.powi(n))
        };
        let q = alpha2 / a;
        if !(delta < q.powi(n)) || !(delta < 1.0) {
            return Err(Error::HypothesisSynthesisFailure(format!(
                "||A_n - B_n|| = {gap:e} is too large for alpha2^n = {:e}",
                alpha2.powi(n)
            )));
        }
        let bracket = q.powi(n + 1) <= delta * (1.0 + 1e-12) && delta < q.powi(n);
        let up = ell * alpha2.powi(n);
        let lo = alpha1.powi(n) / ell;
        let certificates = L5Certificates {
            a_contract: geometry::restricted_norm(&a_n, &e) / up,
            a_expand: geometry::restricted_min_stretch(&a_n, &e_prime) / lo,
            b_contract: geometry::restricted_norm(&b_n, &f) / up,
            b_expand: geometry::restricted_min_stretch(&b_n, &f_prime) / lo,
            projection: projection_bound(&e, &e_prime)?.max(projection_bound(&f, &f_prime)?),
            closeness: if gap == 0.0 { 0.0 } else { gap / (delta * a.powi(n)) },
            bracket,
        };
        if !certificates.pass() || certificates.projection > ell * (1.0 + 1e-10) {
            return Err(Error::HypothesisSynthesisFailure(format!("certificates failed: {certificates:?}")));
        }
        Ok(Self { a_n, b_n, e, e_prime, f, f_prime, alpha1, alpha2, ell, a, delta, n_star, certificates })
    }

    /// `(4+2l) l^2 (alpha1/alpha2) delta^{log(alpha2/alpha1)/log(alpha2/a)}`.
    pub fn bound(&self) -> f64 {
        let p = (self.alpha2 / self.alpha1).ln() / (self.alpha2 / self.a).ln();
        (4.0 + 2.0 * self.ell) * self.ell * self.ell * (self.alpha1 / self.alpha2) * self.delta.powf(p)
    }
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Operator {
    let m = Operator::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    m.qr().q()
}

/// Cayley rotation `(I - phi K/2)^-1 (I + phi K/2)` for a unit skew `K`.
fn small_rotation(d: usize, phi: f64, rng: &mut ChaCha8Rng) -> Operator {
    let g = Operator::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let mut k = &g - g.transpose();
    let s = linalg::spectral_norm(&k);
    if s > 0.0 {
        k /= s;
    }
    let id = Operator::identity(d, d);
    let half = &k * (phi / 2.0);
    linalg::try_inverse(&(&id - &half)).expect("cayley factor is invertible") * (&id + half)
}

/// `A_n = S diag(alpha2^n I_p, alpha1^n I_q) S^-1` with an oblique `S` whose
/// projections are bounded by `ell`, and `B_n = R A_n R^T` for a rotation
/// `R` of angle `perturbation`. Checked under l2.
pub fn synthesize_l5_instance(seed: u64, dim: usize, alpha1: f64, alpha2: f64, ell: f64, perturbation: f64) -> Result<LemmaL5Instance> {
    if dim < 2 {
        return Err(Error::InvalidInput("dimension must be at least 2".into()));
    }
    if !(alpha2 < alpha1) || !(ell >= 1.0) || !(perturbation >= 0.0) {
        return Err(Error::InvalidInput("need alpha2 < alpha1, ell >= 1 and perturbation >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.gen_range(1..dim);
    let q = dim - p;
    let n_star = rng.gen_range(1..=6usize);
    let basis = random_orthogonal(dim, &mut rng);
    let mut mix = Operator::from_fn(p, q, |_, _| rng.gen_range(-1.0..1.0));
    let mn = linalg::spectral_norm(&mix);
    let target = 0.9 * rng.gen_range(0.0..1.0) * (ell * ell - 1.0).sqrt();
    if mn > 0.0 {
        mix *= target / mn;
    }
    let mut upper = Operator::identity(dim, dim);
    upper.view_mut((0, p), (p, q)).copy_from(&mix);
    let s = &basis * upper;
    let s_inv = linalg::try_inverse(&s).ok_or(Error::SingularGenerator(0.0))?;
    let n = n_star as i32;
    let mut rates = vec![alpha2.powi(n); p];
    rates.extend(std::iter::repeat(alpha1.powi(n)).take(q));
    let a_n = &s * linalg::diag(&rates) * &s_inv;
    let r = if perturbation == 0.0 { Operator::identity(dim, dim) } else { small_rotation(dim, perturbation, &mut rng) };
    let b_n = &r * &a_n * r.transpose();
    let norm = OperatorNorm::L2;
    let se = s.columns(0, p).into_owned();
    let sp = s.columns(p, q).into_owned();
    let e = Subspace::new(se.clone(), norm)?;
    let e_prime = Subspace::new(sp.clone(), norm)?;
    let f = Subspace::new(&r * se, norm)?;
    let f_prime = Subspace::new(&r * sp, norm)?;
    LemmaL5Instance::certify(a_n, b_n, e, e_prime, f, f_prime, alpha1, alpha2, ell, n_star)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaL5Report {
    pub measured: f64,
    pub resolution: f64,
    pub bound: f64,
    pub pass: bool,
    /// Largest `||A_n v|| / (2 ell alpha2^n ||v||)` over probes of `F`.
    pub cone_ratio: f64,
    pub cone_pass: bool,
    pub probes: usize,
}

pub fn check_lemma_l5(instance: &LemmaL5Instance) -> Result<LemmaL5Report> {
    let sd = geometry::hausdorff_estimate(&instance.e, &instance.f, geometry::DEFAULT_SPHERE_STEP)?;
    let bound = instance.bound();
    let norm = instance.f.norm;
    let q = instance.f.orthonormal();
    let k = q.ncols();
    let mut probes: Vec<linalg::Vector> = (0..k).map(|c| q.column(c).into_owned()).collect();
    for t in 1..=16usize {
        let c = linalg::Vector::from_fn(k, |r, _| ((t * (r + 1)) as f64 * 0.754_877_666).fract() - 0.5);
        if c.norm() > 1e-9 {
            probes.push(q * c);
        }
    }
    let cap = 2.0 * instance.ell * instance.alpha2.powi(instance.n_star as i32);
    let cone_ratio = probes
        .iter()
        .map(|v| norm.vector(&(&instance.a_n * v)) / (cap * norm.vector(v)))
        .fold(0.0, f64::max);
    let measured = sd.value + sd.resolution;
    Ok(LemmaL5Report {
        measured: sd.value,
        resolution: sd.resolution,
        bound,
        pass: measured <= bound * (1.0 + BOUND_SLACK),
        cone_ratio,
        cone_pass: cone_ratio <= 1.0 + 1e-10,
        probes: probes.len(),
    })
}

/// Shared data of a verification run.
#[derive(Debug, Clone)]
pub struct HolderContext<'a> {
    pub gen: &'a CocycleGenerator,
    pub system: &'a BaseSystem,
    pub spectrum: &'a LyapunovSpectrum,
    pub epsilon: f64,
    pub ell: f64,
    pub a: f64,
    pub nu: f64,
    pub sphere_step: f64,
}

/// A sampled point with its splitting or filtration and membership flag.
#[derive(Debug, Clone)]
pub struct PairPoint {
    pub point: BasePoint,
    pub splitting: Option<OseledetsSplitting>,
    pub filtration: Option<Filtration>,
    pub regular: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Minus,
    Plus,
    Graph,
    Main,
    Filtration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundTerm {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

impl BoundTerm {
    fn upper(name: &str, measured: f64, bound: f64) -> Self {
        Self { name: name.into(), measured, bound, pass: measured <= bound * (1.0 + BOUND_SLACK) + ROUNDOFF }
    }

    fn lower(name: &str, measured: f64, bound: f64) -> Self {
        Self { name: name.into(), measured, bound, pass: measured * (1.0 + BOUND_SLACK) >= bound }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderReport {
    pub kind: CheckKind,
    pub level: usize,
    pub distance: f64,
    pub measured: f64,
    pub resolution: f64,
    pub bound: f64,
    pub exponent: f64,
    pub pass: bool,
    /// Which estimate produced the bound (for the degenerate levels).
    pub route: String,
    pub graph_norm: Option<f64>,
    pub bracket_n: Option<i64>,
    pub terms: Vec<BoundTerm>,
}

impl HolderReport {
    fn finish(mut self) -> Self {
        let head = (self.measured + self.resolution) <= self.bound * (1.0 + BOUND_SLACK) + ROUNDOFF;
        self.pass = head && self.terms.iter().all(|t| t.pass);
        self
    }
}

fn pair_setup(ctx: &HolderContext, x: &PairPoint, y: &PairPoint) -> Result<f64> {
    let d = ctx.system.metric(&x.point, &y.point)?;
    if d == 0.0 {
        return Err(Error::DegeneratePair);
    }
    if d >= 1.0 {
        return Err(Error::PairTooFar { distance: d, limit: 1.0 });
    }
    if !(x.regular && y.regular) {
        return Err(Error::PairOutsideRegularSet);
    }
    Ok(d)
}

fn splittings<'p>(x: &'p PairPoint, y: &'p PairPoint) -> Result<(&'p OseledetsSplitting, &'p OseledetsSplitting)> {
    match (&x.splitting, &y.splitting) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::InvalidInput("pair points carry no splitting".into())),
    }
}

fn sphere(ctx: &HolderContext, e: &Subspace, f: &Subspace) -> Result<(f64, f64)> {
    if e.dim() == 0 && f.dim() == 0 {
        return Ok((0.0, 0.0));
    }
    let s = geometry::hausdorff_estimate(e, f, ctx.sphere_step)?;
    Ok((s.value, s.resolution))
}

fn trivial_report(kind: CheckKind, level: usize, distance: f64, route: &str) -> HolderReport {
    HolderReport {
        kind,
        level,
        distance,
        measured: 0.0,
        resolution: 0.0,
        bound: 0.0,
        exponent: 0.0,
        pass: true,
        route: route.into(),
        graph_norm: None,
        bracket_n: None,
        terms: Vec::new(),
    }
}

fn has_slow(split: &OseledetsSplitting, i: usize) -> bool {
    i < split.levels || split.parts.parts.len() > split.levels
}

/// `d_hat(E_i^-(x), E_i^-(y)) <= C_i^- d^{nu_i^-}`.
pub fn verify_minus(ctx: &HolderContext, x: &PairPoint, y: &PairPoint, i: usize) -> Result<HolderReport> {
    let d = pair_setup(ctx, x, y)?;
    let (sx, sy) = splittings(x, y)?;
    if !has_slow(sx, i) {
        return Ok(trivial_report(CheckKind::Minus, i, d, "trivial slow space"));
    }
    let c = theoretical_constants(i, ctx.spectrum, ctx.epsilon, ctx.ell, ctx.a, ctx.nu)?;
    let (_, ex) = fast_slow(sx, i)?;
    let (_, ey) = fast_slow(sy, i)?;
    let (measured, resolution) = sphere(ctx, &ex, &ey)?;
    let alpha2 = (ctx.spectrum.lambda(i + 1) + ctx.epsilon).exp();
    Ok(HolderReport {
        kind: CheckKind::Minus,
        level: i,
        distance: d,
        measured,
        resolution,
        bound: c.c_minus * d.powf(c.nu_minus),
        exponent: c.nu_minus,
        pass: false,
        route: "slow space".into(),
        graph_norm: None,
        bracket_n: Some(bracket_index(d.powf(ctx.nu), alpha2, ctx.a)),
        terms: Vec::new(),
    }
    .finish())
}

/// `d_hat(E_i^+(x), E_i^+(y)) <= C_i^+ d^{nu_i^+}`.
pub fn verify_plus(ctx: &HolderContext, x: &PairPoint, y: &PairPoint, i: usize) -> Result<HolderReport> {
    if !(ctx.gen.invertible && ctx.system.invertible) {
        return Err(Error::NegativeIterateOfNonInvertible);
    }
    let d = pair_setup(ctx, x, y)?;
    let (sx, sy) = splittings(x, y)?;
    if !has_slow(sx, i) {
        return Ok(trivial_report(CheckKind::Plus, i, d, "fast space is everything"));
    }
    let c = theoretical_constants(i, ctx.spectrum, ctx.epsilon, ctx.ell, ctx.a, ctx.nu)?;
    let (ex, _) = fast_slow(sx, i)?;
    let (ey, _) = fast_slow(sy, i)?;
    let (measured, resolution) = sphere(ctx, &ex, &ey)?;
    let alpha2 = (-ctx.spectrum.lambda(i) + 2.0 * ctx.epsilon).exp();
    Ok(HolderReport {
        kind: CheckKind::Plus,
        level: i,
        distance: d,
        measured,
        resolution,
        bound: c.c_plus * d.powf(c.nu_plus),
        exponent: c.nu_plus,
        pass: false,
        route: "fast space".into(),
        graph_norm: None,
        bracket_n: Some(bracket_index(d.powf(ctx.nu), alpha2, ctx.a)),
        terms: Vec::new(),
    }
    .finish())
}

/// Graph operator sandwich `||L|| / (l (1 + ||L||)) <= d_hat(E+x, E+y) <= 2 l ||L||`.
pub fn verify_graph_bounds(ctx: &HolderContext, x: &PairPoint, y: &PairPoint, i: usize) -> Result<HolderReport> {
    let d = pair_setup(ctx, x, y)?;
    let (sx, sy) = splittings(x, y)?;
    if !has_slow(sx, i) {
        return Ok(trivial_report(CheckKind::Graph, i, d, "fast space is everything"));
    }
    let (px, mx) = fast_slow(sx, i)?;
    let (py, _) = fast_slow(sy, i)?;
    graph_sandwich(ctx, &px, &mx, &py, i, d)
}

fn graph_sandwich(ctx: &HolderContext, px: &Subspace, mx: &Subspace, py: &Subspace, i: usize, d: f64) -> Result<HolderReport> {
    let (measured, resolution) = sphere(ctx, px, py)?;
    if measured > 1.0 / ctx.ell {
        return Err(Error::PairTooFar { distance: measured, limit: 1.0 / ctx.ell });
    }
    let g = geometry::graph_operator(px, mx, py)?;
    let l = g.norm_value;
    let lower = l / (ctx.ell * (1.0 + l));
    let upper = 2.0 * ctx.ell * l;
    let terms = vec![
        BoundTerm::lower("graph_lower", measured + resolution, lower),
        BoundTerm::upper("graph_upper", measured, upper),
    ];
    Ok(HolderReport {
        kind: CheckKind::Graph,
        level: i,
        distance: d,
        measured,
        resolution,
        bound: upper,
        exponent: f64::NAN,
        pass: false,
        route: "graph operator".into(),
        graph_norm: Some(l),
        bracket_n: None,
        terms,
    }
    .finish())
}

/// `d_hat(E_i(x), E_i(y)) <= C_i d^{nu_i}` through the pull-back by
/// `Phi^-1`, with each intermediate estimate reported. Level 1 reduces to
/// the fast-space estimate and the top level without `F` to the slow-space
/// estimate of the level below.
pub fn verify_main(ctx: &HolderContext, x: &PairPoint, y: &PairPoint, i: usize) -> Result<HolderReport> {
    let d = pair_setup(ctx, x, y)?;
    let (sx, sy) = splittings(x, y)?;
    let k = sx.levels;
    if i == 0 || i > k {
        return Err(Error::InvalidInput(format!("level {i} outside 1..={k}")));
    }
    let top_without_f = i == k && !has_slow(sx, i);
    let (measured, resolution) = sphere(ctx, sx.level(i), sy.level(i))?;
    if i == 1 && top_without_f {
        return Ok(trivial_report(CheckKind::Main, i, d, "single level"));
    }
    if i == 1 {
        let mut r = verify_plus(ctx, x, y, 1)?;
        r.kind = CheckKind::Main;
        r.route = "level 1 equals its fast space".into();
        return Ok(r.finish());
    }
    if top_without_f {
        let mut r = verify_minus(ctx, x, y, k - 1)?;
        r.kind = CheckKind::Main;
        r.level = k;
        r.route = "top level equals the slow space below".into();
        return Ok(r.finish());
    }
    let c = theoretical_constants(i, ctx.spectrum, ctx.epsilon, ctx.ell, ctx.a, ctx.nu)?;
    let (c_hat, nu_hat, c_main, nu_main) = (c.c_hat.unwrap(), c.nu_hat.unwrap(), c.c_main.unwrap(), c.nu_main.unwrap());
    let dnu = d.powf(ctx.nu);
    if dnu >= 0.25 {
        return Err(Error::PairTooFar { distance: d, limit: 0.25f64.powf(1.0 / ctx.nu) });
    }
    let (px, mx) = fast_slow(sx, i)?;
    let (py, _) = fast_slow(sy, i)?;
    let graph = graph_sandwich(ctx, &px, &mx, &py, i, d)?;
    let g = geometry::graph_operator(&px, &mx, &py)?;
    let l = g.norm_value;
    if l >= 0.5 {
        return Err(Error::PairTooFar { distance: l, limit: 0.5 });
    }
    let phi_inv = Operator::identity(sx.parts.ambient_dim, sx.parts.ambient_dim) + g.neumann_inverse()?;
    let pulled = Subspace::span(&(&phi_inv * sy.level(i).orthonormal()), ctx.gen.norm);
    let (t1, r1) = sphere(ctx, sx.level(i), &pulled)?;
    let (t2, r2) = sphere(ctx, &pulled, sy.level(i))?;
    let (plus_measured, plus_res) = sphere(ctx, &px, &py)?;
    let mut terms = graph.terms.clone();
    terms.push(BoundTerm::upper("fast_space", plus_measured + plus_res, c.c_plus * d.powf(c.nu_plus)));
    terms.push(BoundTerm::upper("transport", t2 + r2, 6.0 * ctx.ell * c.c_plus * d.powf(c.nu_plus)));
    terms.push(BoundTerm::upper("pullback_raw", t1 + r1, c_hat * (l + 2.0 * dnu).powf(nu_hat)));
    terms.push(BoundTerm::upper(
        "pullback",
        t1 + r1,
        2.0 * c_hat * (ctx.ell * c.c_plus + 1.0) * d.powf(c.nu_plus * nu_hat),
    ));
    terms.push(BoundTerm::upper("triangle", measured, t1 + t2 + r1 + r2 + 1e-9));
    let alpha2 = (ctx.spectrum.lambda(i) + ctx.epsilon).exp();
    Ok(HolderReport {
        kind: CheckKind::Main,
        level: i,
        distance: d,
        measured,
        resolution,
        bound: c_main * d.powf(nu_main),
        exponent: nu_main,
        pass: false,
        route: "pullback".into(),
        graph_norm: Some(l),
        bracket_n: Some(bracket_index(l + 2.0 * dnu, alpha2, ctx.a)),
        terms,
    }
    .finish())
}

/// Finite-horizon membership data for the filtration estimate at level `i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiltrationCertificate {
    pub level: usize,
    /// Smallest `n` with both rate bounds holding for `n <= m <= horizon`;
    /// `None` when they fail at the horizon itself.
    pub n_cert: Option<usize>,
    /// `max{||pi^u||, ||pi^v||}` at the point.
    pub projection: f64,
    /// Largest `log ||A(x,m)|V_i|| - m (lambda_i + eps)` over `m >= 1`.
    pub slow_excess: f64,
    /// Largest `m (lambda_{i-1} - eps) - log min stretch on U_i` over `m >= 1`.
    pub fast_deficit: f64,
    pub horizon: usize,
}

/// Rate certificates on `V_i(f^j x)` and `U_i(f^j x)` for `m <= horizon`;
/// the cache must cover `j ..= j + horizon`.
pub fn filtration_certificate(
    cache: &SweepCache,
    spectrum: &LyapunovSpectrum,
    j: i64,
    i: usize,
    epsilon: f64,
    horizon: usize,
) -> Result<FiltrationCertificate> {
    if i < 2 || i > spectrum.levels() + 1 {
        return Err(Error::InvalidInput(format!("filtration level {i} outside 2..={}", spectrum.levels() + 1)));
    }
    if j + horizon as i64 > cache.hi {
        return Err(Error::InvalidInput("cache too short for the certificate horizon".into()));
    }
    let norm = cache.norm;
    let f0 = cache.filtration(j)?;
    let (pu, pv) = f0.projections(i)?;
    let projection = norm.operator(&pu).max(norm.operator(&pv));
    let (li, lprev) = (spectrum.lambda(i), spectrum.lambda(i - 1));
    let v0 = f0.space(i).orthonormal().clone();
    let u0 = f0.u_space(i).orthonormal().clone();
    let mut v_now = v0.clone();
    let mut slow = ScaledOperator::identity(v0.ncols());
    let mut u_now = u0.clone();
    let mut fast_inv = ScaledOperator::identity(u0.ncols());
    let mut failing: Option<usize> = None;
    let mut slow_excess = f64::NEG_INFINITY;
    let mut fast_deficit = f64::NEG_INFINITY;
    for m in 1..=horizon {
        let t = j + m as i64 - 1;
        let a = cache.generator(t);
        let mut ok = true;
        if v0.ncols() > 0 {
            let v_next = cache.filtration(t + 1)?.space(i).orthonormal().clone();
            slow.push(&(v_next.transpose() * a * &v_now));
            slow.renormalize();
            v_now = v_next;
            let lg = log_gain(&v0, &v_now, &slow, norm);
            let ex = lg - m as f64 * (li + epsilon);
            slow_excess = slow_excess.max(ex);
            ok &= ex <= 1e-12;
        }
        if u0.ncols() > 0 {
            let (q, r) = (a * &u_now).qr().unpack();
            let rinv = linalg::try_inverse(&r).ok_or_else(|| Error::BlockSingular(linalg::smallest_singular_value(&r)))?;
            fast_inv.push_right(&rinv);
            fast_inv.renormalize();
            u_now = q;
            let log_min = -log_gain(&u_now, &u0, &fast_inv, norm);
            let def = m as f64 * (lprev - epsilon) - log_min;
            fast_deficit = fast_deficit.max(def);
            ok &= def <= 1e-12;
        }
        if !ok {
            failing = Some(m);
        }
    }
    let n_cert = match failing {
        None => Some(0),
        Some(m) if m < horizon => Some(m + 1),
        Some(_) => None,
    };
    Ok(FiltrationCertificate { level: i, n_cert, projection, slow_excess, fast_deficit, horizon })
}

/// `log sup ||B_dst M c|| / ||B_src c||` for orthonormal bases.
fn log_gain(src: &Operator, dst: &Operator, core: &ScaledOperator, norm: OperatorNorm) -> f64 {
    let e = Subspace::span(src, norm);
    let map = dst * &core.matrix * linalg::coordinates(src, e.orthonormal()) * e.orthonormal().transpose();
    geometry::restricted_norm(&map, &e).ln() + core.log_scale
}

/// `d_hat(V_i(x), V_i(y)) <= (4+2l) l^2 e^{lambda_{i-1}-lambda_i-2eps} d^{nu_i}`
/// for pairs in the certified set with `d^nu < (e^{lambda_i+eps}/a)^{n0}`.
pub fn verify_filtration_holder(ctx: &HolderContext, x: &PairPoint, y: &PairPoint, i: usize, n0: usize) -> Result<HolderReport> {
    let d = pair_setup(ctx, x, y)?;
    let (fx, fy) = match (&x.filtration, &y.filtration) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::InvalidInput("pair points carry no filtration".into())),
    };
    if i < 2 || i > fx.levels() + 1 {
        return Err(Error::InvalidInput(format!("filtration level {i} outside 2..={}", fx.levels() + 1)));
    }
    if fx.space(i).dim() == 0 {
        return Ok(trivial_report(CheckKind::Filtration, i, d, "trivial space"));
    }
    let alpha2 = (ctx.spectrum.lambda(i) + ctx.epsilon).exp();
    let limit = (alpha2 / ctx.a).powi(n0 as i32);
    let dnu = d.powf(ctx.nu);
    if !(dnu < limit) {
        return Err(Error::PairTooFar { distance: d, limit: limit.powf(1.0 / ctx.nu) });
    }
    let (c, nu_i) = filtration_constants(i, ctx.spectrum, ctx.epsilon, ctx.ell, ctx.a, ctx.nu)?;
    let (measured, resolution) = sphere(ctx, fx.space(i), fy.space(i))?;
    let n_prime = bracket_index(dnu, alpha2, ctx.a);
    let q = alpha2 / ctx.a;
    let bracket_ok = q.powi(n_prime as i32 + 1) <= dnu && dnu < q.powi(n_prime as i32) && n_prime >= n0 as i64;
    let terms = vec![BoundTerm { name: "bracket".into(), measured: n_prime as f64, bound: n0 as f64, pass: bracket_ok }];
    Ok(HolderReport {
        kind: CheckKind::Filtration,
        level: i,
        distance: d,
        measured,
        resolution,
        bound: c * d.powf(nu_i),
        exponent: nu_i,
        pass: false,
        route: "slow filtration".into(),
        graph_norm: None,
        bracket_n: Some(n_prime),
        terms,
    }
    .finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderFit {
    pub fitted_exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub pair_count: usize,
}

/// Least squares of `log y` on `log x` over pairs with both positive.
pub fn fit_log_log(pairs: &[(f64, f64)]) -> Result<HolderFit> {
    let pts: Vec<(f64, f64)> = pairs.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 8 {
        return Err(Error::DegenerateDesign(format!("{} usable pairs, need 8", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 1e-24 * n) {
        return Err(Error::DegenerateDesign("all base distances are equal".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(HolderFit { fitted_exponent: slope, intercept, r_squared, pair_count: pts.len() })
}

/// Fit over the reports whose measured distance is above [`ROUNDOFF`].
pub fn fit_holder_exponent(reports: &[HolderReport]) -> Result<HolderFit> {
    let pairs: Vec<(f64, f64)> = reports.iter().filter(|r| r.measured > ROUNDOFF).map(|r| (r.distance, r.measured)).collect();
    fit_log_log(&pairs)
}

/// Largest sampled distance `t` such that every report with distance `<= t`
/// passes; zero if the closest one fails.
pub fn passing_threshold(reports: &[HolderReport]) -> f64 {
    let mut sorted: Vec<(f64, bool)> = reports.iter().map(|r| (r.distance, r.pass)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut t = 0.0;
    for (d, p) in sorted {
        if !p {
            break;
        }
        t = d;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_constant_matches_direct_evaluation() {
        let l2 = 2f64.ln();
        let c = theoretical_constants_from(1, &[l2, -l2], 0.01, 2.0, 10.0, 0.5).unwrap();
        assert!((c.c_minus - 32.0 * (2.0 * l2 - 0.02).exp()).abs() < 1e-12);
        assert!(c.nu_minus < 0.5 && c.nu_plus < 0.5);
    }

    #[test]
    fn bracket_index_brackets() {
        for &(delta, a) in &[(1e-3, 5.0), (0.3, 2.0), (1e-9, 40.0)] {
            let q: f64 = 0.9 / a;
            let n = bracket_index(delta, 0.9, a);
            assert!(q.powi(n as i32 + 1) <= delta && delta < q.powi(n as i32));
        }
    }

    #[test]
    fn fit_recovers_power_law() {
        let pairs: Vec<(f64, f64)> = (1..=10).map(|k| {
            let d = 10f64.powf(-(k as f64) / 3.0);
            (d, 3.0 * d.powf(0.4))
        }).collect();
        let f = fit_log_log(&pairs).unwrap();
        assert!((f.fitted_exponent - 0.4).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    }
}
