//! Lyapunov spectra, Oseledets splittings, fast/slow sums, filtrations with
//! complements, the block decomposition of the non-invertible case, and the
//! closed-form coboundary oracle.
//!
//! Splittings come from two orthonormal frame sweeps along an orbit window.
//! The forward frame at `f^j x` is obtained by pushing a generic frame backwards
//! with `A^T` from time `hi + N`; its leading columns span the fast singular
//! directions of `A(f^j x, N)`, so trailing columns give the slow filtration.
//! The backward frame pushes a generic frame forwards with `A^-T` from time
//! `lo - N`; its leading columns are the fast directions of the inverse
//! cocycle, and the complement of the first `d - s_i` gives `E_i^+`.

use serde::Serialize;

use crate::cocycle::{self, CocycleGenerator, FieldKind};
use crate::dynamics::{BasePoint, BaseSystem};
use crate::error::{Error, Result};
use crate::geometry::{self, DirectSum, Subspace};
use crate::linalg::{self, Operator, OperatorNorm, RANK_TOL};

/// Default exponent merge tolerance without analytic data.
pub const DEFAULT_GROUPING_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovSpectrum {
    pub exponents: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub alpha_floor: f64,
    pub horizon: usize,
    pub grouping_tol: f64,
    /// Ungrouped estimates in decreasing order, one per ambient direction.
    pub raw: Vec<f64>,
}

impl LyapunovSpectrum {
    pub fn levels(&self) -> usize {
        self.exponents.len()
    }

    /// `lambda_i` for `1 <= i <= k + 1`, with `lambda_{k+1}` the alpha floor.
    pub fn lambda(&self, i: usize) -> f64 {
        if i >= 1 && i <= self.levels() {
            self.exponents[i - 1]
        } else {
            self.alpha_floor
        }
    }

    /// `s_i = m_1 + ... + m_i` (`s_0 = 0`).
    pub fn cumulative(&self, i: usize) -> usize {
        self.multiplicities.iter().take(i).sum()
    }

    pub fn ambient_dim(&self) -> usize {
        self.raw.len()
    }

    /// Dimension of the residual space `F`.
    pub fn residual_dim(&self) -> usize {
        self.ambient_dim() - self.cumulative(self.levels())
    }

    /// Smallest gap `lambda_i - lambda_{i+1}` over consecutive exponents,
    /// including the gap to the alpha floor when `F` is nontrivial.
    pub fn min_gap(&self) -> f64 {
        let mut g = f64::INFINITY;
        for w in self.exponents.windows(2) {
            g = g.min(w[0] - w[1]);
        }
        if self.residual_dim() > 0 {
            if let Some(last) = self.exponents.last() {
                g = g.min(last - self.alpha_floor);
            }
        }
        g
    }

    /// Builds a spectrum from known exponents (each with its multiplicity).
    pub fn from_exponents(exponents: Vec<f64>, multiplicities: Vec<usize>, ambient_dim: usize, alpha_floor: f64) -> Result<Self> {
        if exponents.len() != multiplicities.len() || exponents.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidInput("exponents must be strictly decreasing with one multiplicity each".into()));
        }
        let total: usize = multiplicities.iter().sum();
        if total > ambient_dim {
            return Err(Error::InvalidInput("multiplicities exceed the ambient dimension".into()));
        }
        let mut raw: Vec<f64> = exponents
            .iter()
            .zip(&multiplicities)
            .flat_map(|(l, m)| std::iter::repeat(*l).take(*m))
            .collect();
        raw.resize(ambient_dim, alpha_floor);
        Ok(Self { exponents, multiplicities, alpha_floor, horizon: 0, grouping_tol: 0.0, raw })
    }
}

fn group(raw: &[f64], alpha: f64, tol: f64) -> (Vec<f64>, Vec<usize>) {
    let mut exps: Vec<f64> = Vec::new();
    let mut mults: Vec<usize> = Vec::new();
    let mut last = f64::NAN;
    let mut sum = 0.0;
    for &v in raw {
        if v <= alpha + tol {
            break;
        }
        if !exps.is_empty() && (last - v).abs() <= tol {
            let m = mults.last_mut().unwrap();
            *m += 1;
            sum += v;
            *exps.last_mut().unwrap() = sum / *m as f64;
        } else {
            exps.push(v);
            mults.push(1);
            sum = v;
        }
        last = v;
    }
    (exps, mults)
}

/// Exponents by QR re-orthonormalization of an identity frame.
pub fn lyapunov_spectrum(
    gen: &CocycleGenerator,
    system: &BaseSystem,
    x: &BasePoint,
    horizon: usize,
    grouping_tol: f64,
) -> Result<LyapunovSpectrum> {
    if horizon < 64 {
        return Err(Error::InvalidInput("spectrum horizon must be at least 64".into()));
    }
    let d = gen.dimension;
    let orbit = system.orbit_window(x, 0, horizon as i64)?;
    let gens = gen.evaluate_on_orbit(system, &orbit)?;
    let mut q = Operator::identity(d, d);
    let mut sums = vec![0.0; d];
    let mut half = vec![0.0; d];
    for (step, a) in gens.iter().enumerate() {
        let qr = (a * &q).qr();
        let r = qr.r();
        q = qr.q();
        for j in 0..d {
            sums[j] += r[(j, j)].abs().ln();
        }
        if step + 1 == horizon / 2 {
            half.clone_from(&sums);
        }
    }
    let h2 = (horizon / 2) as f64;
    let mut raw: Vec<f64> = sums.iter().map(|s| s / horizon as f64).collect();
    let mut raw_half: Vec<f64> = half.iter().map(|s| s / h2).collect();
    raw.sort_by(|a, b| b.total_cmp(a));
    raw_half.sort_by(|a, b| b.total_cmp(a));
    let diff = raw.iter().zip(&raw_half).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let limit = 10.0 * grouping_tol;
    if diff > limit {
        return Err(Error::HorizonTooShort { diff, limit });
    }
    let alpha = {
        let g = cocycle::growth_rates(gen, system, x, horizon, gen.block_size())?;
        g.alpha_hat
    };
    let (exponents, multiplicities) = group(&raw, alpha, grouping_tol);
    Ok(LyapunovSpectrum { exponents, multiplicities, alpha_floor: alpha, horizon, grouping_tol, raw })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OseledetsSplitting {
    pub at: BasePoint,
    /// `E_1, ..., E_k` followed by `F` when it is nontrivial.
    pub parts: DirectSum,
    pub levels: usize,
    pub horizon: usize,
}

impl OseledetsSplitting {
    /// `E_i` for `1 <= i <= k`.
    pub fn level(&self, i: usize) -> &Subspace {
        &self.parts.parts[i - 1]
    }

    /// `F`, or `{0}`.
    pub fn residual(&self) -> Subspace {
        if self.parts.parts.len() > self.levels {
            self.parts.parts[self.levels].clone()
        } else {
            Subspace::zero(self.parts.ambient_dim, self.level(1).norm)
        }
    }

    pub fn norm(&self) -> OperatorNorm {
        self.level(1).norm
    }

    /// Projection onto `E_i` along the other parts.
    pub fn projection(&self, i: usize) -> Result<Operator> {
        self.parts.projection(i - 1)
    }

    /// `pi_i^+` (onto `E_i^+` along `E_i^-`).
    pub fn fast_projection(&self, i: usize) -> Result<Operator> {
        let idx: Vec<usize> = (0..i).collect();
        self.parts.projection_onto(&idx)
    }
}

/// `(E_i^+, E_i^-) = (E_1 + ... + E_i, E_{i+1} + ... + E_k + F)`.
pub fn fast_slow(splitting: &OseledetsSplitting, i: usize) -> Result<(Subspace, Subspace)> {
    if i == 0 || i > splitting.levels {
        return Err(Error::InvalidInput(format!("level {i} outside 1..={}", splitting.levels)));
    }
    let norm = splitting.norm();
    let cols = |r: std::ops::Range<usize>| {
        let parts: Vec<&Operator> = splitting.parts.parts[r].iter().map(|p| p.orthonormal()).collect();
        if parts.is_empty() {
            Subspace::zero(splitting.parts.ambient_dim, norm)
        } else {
            Subspace::span(&linalg::hstack(&parts), norm)
        }
    };
    Ok((cols(0..i), cols(i..splitting.parts.parts.len())))
}

/// Filtration `V_1 > ... > V_{k+1}` with orthogonal complements.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Filtration {
    pub at: BasePoint,
    /// `V_1, ..., V_{k+1}` (`V_1` is the ambient space).
    pub spaces: Vec<Subspace>,
    pub codims: Vec<usize>,
    /// `U~_1, ..., U~_k` with `V_i = V_{i+1} + U~_i`.
    pub complements: Vec<Subspace>,
    /// `(||pi_i^u||, ||pi_i^v||)` for `i = 1..=k+1`.
    pub projection_norms: Vec<(f64, f64)>,
    pub horizon: usize,
}

impl Filtration {
    pub fn levels(&self) -> usize {
        self.codims.len()
    }

    /// `V_i` for `1 <= i <= k + 1`.
    pub fn space(&self, i: usize) -> &Subspace {
        &self.spaces[i - 1]
    }

    /// `U_i = U~_1 + ... + U~_{i-1}`.
    pub fn u_space(&self, i: usize) -> Subspace {
        let d = self.spaces[0].ambient_dim();
        let norm = self.spaces[0].norm;
        let parts: Vec<&Operator> = self.complements[..i - 1].iter().map(|p| p.orthonormal()).collect();
        if parts.is_empty() {
            Subspace::zero(d, norm)
        } else {
            Subspace::span(&linalg::hstack(&parts), norm)
        }
    }

    /// `(pi_i^u, pi_i^v)`, projections for `U_i + V_i`.
    pub fn projections(&self, i: usize) -> Result<(Operator, Operator)> {
        let d = self.spaces[0].ambient_dim();
        let u = self.u_space(i);
        let v = self.space(i);
        if u.dim() == 0 {
            return Ok((Operator::zeros(d, d), Operator::identity(d, d)));
        }
        if v.dim() == 0 {
            return Ok((Operator::identity(d, d), Operator::zeros(d, d)));
        }
        let sum = DirectSum::new(vec![u, v.clone()])?;
        let pu = sum.projection(0)?;
        let pv = Operator::identity(d, d) - &pu;
        Ok((pu, pv))
    }
}

/// Fills `U~_i` as the orthogonal complement of `V_{i+1}` inside `V_i` and
/// records the projection norms.
pub fn choose_complements(mut filtration: Filtration) -> Result<Filtration> {
    let norm = filtration.spaces[0].norm;
    let k = filtration.levels();
    let mut complements = Vec::with_capacity(k);
    for i in 1..=k {
        let vi = filtration.space(i).orthonormal().clone();
        let next = filtration.space(i + 1).orthogonal_projector();
        let rest = &vi - &next * &vi;
        let u = Subspace::span(&rest, norm);
        complements.push(u);
    }
    filtration.complements = complements;
    let mut norms = Vec::with_capacity(k + 1);
    for i in 1..=k + 1 {
        let (pu, pv) = filtration.projections(i)?;
        norms.push((norm.operator(&pu), norm.operator(&pv)));
    }
    filtration.projection_norms = norms;
    Ok(filtration)
}

/// Largest recorded projection norm, the operational `ell` of a sample.
pub fn operational_ell(filtrations: &[Filtration]) -> f64 {
    filtrations
        .iter()
        .flat_map(|f| f.projection_norms.iter().map(|(a, b)| a.max(*b)))
        .fold(1.0, f64::max)
}

/// Fixed orthonormal start frame in general position with respect to the
/// coordinate axes.
fn generic_frame(d: usize) -> Operator {
    let m = Operator::from_fn(d, d, |i, j| ((1 + i * d + j) as f64 * 1.618_033_988_75).sin() + if i == j { 0.5 } else { 0.0 });
    m.qr().q()
}

/// Orbit window with frames, generators and points, shared read-only by
/// every per-point computation on the window.
#[derive(Debug, Clone)]
pub struct SweepCache {
    pub lo: i64,
    pub hi: i64,
    pub horizon: usize,
    pub norm: OperatorNorm,
    pub multiplicities: Vec<usize>,
    first: i64,
    points: Vec<BasePoint>,
    generators: Vec<Operator>,
    forward: Vec<Operator>,
    backward: Option<Vec<Operator>>,
}

impl SweepCache {
    /// Frames at `f^j x` for `lo <= j <= hi`. Backward frames are built only
    /// when both the base and the cocycle are invertible.
    pub fn build(
        gen: &CocycleGenerator,
        system: &BaseSystem,
        x: &BasePoint,
        lo: i64,
        hi: i64,
        horizon: usize,
        spectrum: &LyapunovSpectrum,
    ) -> Result<Self> {
        if hi < lo {
            return Err(Error::InvalidInput("empty orbit window".into()));
        }
        let d = gen.dimension;
        let n = horizon as i64;
        let two_sided = gen.invertible && system.invertible;
        if lo < 0 && !two_sided {
            return Err(Error::NegativeIterateOfNonInvertible);
        }
        let first = if two_sided { lo - n } else { lo };
        let last = hi + n;
        let points = system.orbit_window(x, first, last)?;
        let generators = gen.evaluate_on_orbit(system, &points)?;
        let idx = |j: i64| (j - first) as usize;

        let width = (hi - lo + 1) as usize;
        let mut forward = vec![Operator::zeros(0, 0); width];
        let mut q = generic_frame(d);
        let mut j = hi + n - 1;
        while j >= lo {
            q = (generators[idx(j)].transpose() * &q).qr().q();
            if j <= hi {
                forward[(j - lo) as usize] = q.clone();
            }
            j -= 1;
        }

        let backward = if two_sided {
            let mut out = vec![Operator::zeros(0, 0); width];
            let mut q = generic_frame(d);
            for j in (lo - n)..hi {
                let a = &generators[idx(j)];
                let ainv = linalg::try_inverse(a).ok_or(Error::SingularGenerator(linalg::smallest_singular_value(a)))?;
                q = (ainv.transpose() * &q).qr().q();
                if j + 1 >= lo {
                    out[(j + 1 - lo) as usize] = q.clone();
                }
            }
            Some(out)
        } else {
            None
        };
        Ok(Self {
            lo,
            hi,
            horizon,
            norm: gen.norm,
            multiplicities: spectrum.multiplicities.clone(),
            first,
            points,
            generators,
            forward,
            backward,
        })
    }

    pub fn point(&self, j: i64) -> &BasePoint {
        &self.points[(j - self.first) as usize]
    }

    /// `A(f^j x)`.
    pub fn generator(&self, j: i64) -> &Operator {
        &self.generators[(j - self.first) as usize]
    }

    fn check(&self, j: i64) -> Result<()> {
        if j < self.lo || j > self.hi {
            return Err(Error::InvalidInput(format!("offset {j} outside the cached window {}..={}", self.lo, self.hi)));
        }
        Ok(())
    }

    fn cumulative(&self, i: usize) -> usize {
        self.multiplicities.iter().take(i).sum()
    }

    pub fn has_backward(&self) -> bool {
        self.backward.is_some()
    }

    /// `A(f^j x, n)` from cached generators (`n >= 0`, within the window).
    pub fn product(&self, j: i64, n: usize) -> Operator {
        let d = self.generators[0].nrows();
        let mut p = Operator::identity(d, d);
        for t in 0..n as i64 {
            p = self.generator(j + t) * p;
        }
        p
    }

    pub fn filtration(&self, j: i64) -> Result<Filtration> {
        self.check(j)?;
        let q = &self.forward[(j - self.lo) as usize];
        let d = q.nrows();
        let k = self.multiplicities.len();
        let mut spaces = Vec::with_capacity(k + 1);
        for i in 1..=k + 1 {
            let s = self.cumulative(i - 1);
            spaces.push(Subspace::span(&q.columns(s, d - s).into_owned(), self.norm));
        }
        let complements = (1..=k)
            .map(|i| {
                let s = self.cumulative(i - 1);
                Subspace::span(&q.columns(s, self.multiplicities[i - 1]).into_owned(), self.norm)
            })
            .collect();
        let mut f = Filtration {
            at: self.point(j).clone(),
            spaces,
            codims: self.multiplicities.clone(),
            complements,
            projection_norms: Vec::new(),
            horizon: self.horizon,
        };
        let mut norms = Vec::with_capacity(k + 1);
        for i in 1..=k + 1 {
            let (pu, pv) = f.projections(i)?;
            norms.push((self.norm.operator(&pu), self.norm.operator(&pv)));
        }
        f.projection_norms = norms;
        Ok(f)
    }

    pub fn splitting(&self, j: i64) -> Result<OseledetsSplitting> {
        self.check(j)?;
        let qb = self.backward.as_ref().ok_or(Error::NegativeIterateOfNonInvertible)?;
        let qf = &self.forward[(j - self.lo) as usize];
        let qb = &qb[(j - self.lo) as usize];
        let d = qf.nrows();
        let k = self.multiplicities.len();
        let mut parts = Vec::with_capacity(k + 1);
        for i in 1..=k {
            let lead = self.cumulative(i - 1);
            let fast_out = d - self.cumulative(i);
            let stacked = linalg::hstack(&[&qf.columns(0, lead).into_owned(), &qb.columns(0, fast_out).into_owned()]);
            let ns = linalg::null_space(&stacked.transpose(), RANK_TOL);
            let expected = self.multiplicities[i - 1];
            if ns.ncols() != expected {
                return Err(Error::IntersectionRankDeficit { expected, found: ns.ncols() });
            }
            parts.push(Subspace::span(&ns, self.norm));
        }
        let sk = self.cumulative(k);
        if sk < d {
            parts.push(Subspace::span(&qf.columns(sk, d - sk).into_owned(), self.norm));
        }
        Ok(OseledetsSplitting {
            at: self.point(j).clone(),
            parts: DirectSum::new(parts)?,
            levels: k,
            horizon: self.horizon,
        })
    }
}

/// `E_i(x)` as forward-slow and backward-fast intersections at horizon `N`.
pub fn oseledets_splitting(
    gen: &CocycleGenerator,
    system: &BaseSystem,
    x: &BasePoint,
    horizon: usize,
    spectrum: &LyapunovSpectrum,
) -> Result<OseledetsSplitting> {
    if !(gen.invertible && system.invertible) {
        return Err(Error::NegativeIterateOfNonInvertible);
    }
    SweepCache::build(gen, system, x, 0, 0, horizon, spectrum)?.splitting(0)
}

/// `V_i(x)` from the slow singular directions of `A(x, N)`.
pub fn filtration(
    gen: &CocycleGenerator,
    system: &BaseSystem,
    x: &BasePoint,
    horizon: usize,
    spectrum: &LyapunovSpectrum,
) -> Result<Filtration> {
    let forward_only = gen.forward_only();
    SweepCache::build(&forward_only, system, x, 0, 0, horizon, spectrum)?.filtration(0)
}

/// Largest `d_hat(A(x) E_i(x), E_i(f x))` over the levels.
pub fn splitting_equivariance(a: &Operator, here: &OseledetsSplitting, there: &OseledetsSplitting) -> Result<f64> {
    let mut worst = 0.0f64;
    for (p, q) in here.parts.parts.iter().zip(&there.parts.parts) {
        worst = worst.max(geometry::hausdorff_distance(&p.image(a), q)?);
    }
    Ok(worst)
}

/// Largest `delta(A(x) V_i(x), V_i(f x))` over the levels.
pub fn filtration_equivariance(a: &Operator, here: &Filtration, there: &Filtration) -> Result<f64> {
    let mut worst = 0.0f64;
    for (p, q) in here.spaces.iter().zip(&there.spaces) {
        if p.dim() > 0 {
            worst = worst.max(geometry::deviation(&p.image(a), q)?);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockDecomposition {
    pub level: usize,
    pub n: usize,
    #[serde(skip)]
    pub b: Operator,
    #[serde(skip)]
    pub c: Operator,
    #[serde(skip)]
    pub d: Operator,
    #[serde(skip)]
    pub b_n: Operator,
    #[serde(skip)]
    pub c_n: Operator,
    #[serde(skip)]
    pub d_n: Operator,
    #[serde(skip)]
    pub product: Operator,
    /// `||A(x) - B - C - D|| / ||A(x)||`.
    pub generator_residual: f64,
    /// `||A(x,n) - B_n - C_n - D_n|| / ||A(x,n)||`.
    pub sum_residual: f64,
    /// `||C_n - pi^v A(x,n) pi^u|| / ||A(x,n)||`.
    pub recursion_residual: f64,
    /// Largest `||pi^u A pi^v|| / ||A||` along the segment.
    pub invariance_defect: f64,
    /// Smallest `sigma_min(B|U_i)` along the segment.
    pub b_min_singular: f64,
}

/// `A = B + C + D` for level `i` along `x, ..., f^{n-1} x`, with `B_n`, `D_n`
/// as ordered products and `C_n` by the recursion.
pub fn block_cocycle(
    gen: &CocycleGenerator,
    system: &BaseSystem,
    x: &BasePoint,
    i: usize,
    n: usize,
    horizon: usize,
    spectrum: &LyapunovSpectrum,
) -> Result<BlockDecomposition> {
    if i == 0 || i > spectrum.levels() + 1 {
        return Err(Error::InvalidInput(format!("level {i} outside 1..={}", spectrum.levels() + 1)));
    }
    let forward_only = gen.forward_only();
    let cache = SweepCache::build(&forward_only, system, x, 0, n.max(1) as i64, horizon, spectrum)?;
    block_cocycle_cached(&cache, i, n)
}

pub fn block_cocycle_cached(cache: &SweepCache, i: usize, n: usize) -> Result<BlockDecomposition> {
    let d = cache.generator(0).nrows();
    let mut pu = Vec::with_capacity(n + 1);
    let mut pv = Vec::with_capacity(n + 1);
    let mut us = Vec::with_capacity(n + 1);
    for j in 0..=n as i64 {
        let f = cache.filtration(j)?;
        let (u, v) = f.projections(i)?;
        pu.push(u);
        pv.push(v);
        us.push(f.u_space(i));
    }
    let norm = cache.norm;
    let mut bs = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    let mut ds = Vec::with_capacity(n);
    let mut defect = 0.0f64;
    let mut b_min = f64::INFINITY;
    for j in 0..n {
        let a = cache.generator(j as i64);
        bs.push(&pu[j + 1] * a * &pu[j]);
        cs.push(&pv[j + 1] * a * &pu[j]);
        ds.push(&pv[j + 1] * a * &pv[j]);
        defect = defect.max(norm.operator(&(&pu[j + 1] * a * &pv[j])) / norm.operator(a));
        if us[j].dim() > 0 {
            let restricted = us[j + 1].orthonormal().transpose() * a * us[j].orthonormal();
            b_min = b_min.min(linalg::smallest_singular_value(&restricted));
        }
    }
    if b_min <= 1e-10 {
        return Err(Error::BlockSingular(b_min));
    }
    // prefix products B_j(x) and suffix products D_m(f^{j+1} x)
    let mut b_prefix = vec![Operator::identity(d, d)];
    for j in 0..n {
        let next = &bs[j] * &b_prefix[j];
        b_prefix.push(next);
    }
    let mut d_suffix = vec![Operator::identity(d, d); n + 1];
    for j in (0..n).rev() {
        d_suffix[j] = &d_suffix[j + 1] * &ds[j];
    }
    // D_{n-j-1}(f^{j+1} x) = ds[n-1] ... ds[j+1] = d_suffix[j+1]
    let mut c_n = Operator::zeros(d, d);
    for j in 0..n {
        c_n += &d_suffix[j + 1] * &cs[j] * &b_prefix[j];
    }
    let b_n = b_prefix[n].clone();
    let d_n = d_suffix[0].clone();
    let product = cache.product(0, n);
    let scale = norm.operator(&product).max(1e-300);
    let sum_residual = norm.operator(&(&product - &b_n - &c_n - &d_n)) / scale;
    let direct = &pv[n] * &product * &pu[0];
    let recursion_residual = norm.operator(&(&c_n - direct)) / scale;
    let (b, c, dd) = if n > 0 {
        (bs[0].clone(), cs[0].clone(), ds[0].clone())
    } else {
        (Operator::zeros(d, d), Operator::zeros(d, d), Operator::zeros(d, d))
    };
    let a0 = cache.generator(0);
    let generator_residual = norm.operator(&(a0 - &b - &c - &dd)) / norm.operator(a0);
    Ok(BlockDecomposition {
        level: i,
        n,
        b,
        c,
        d: dd,
        b_n,
        c_n,
        d_n,
        product,
        generator_residual,
        sum_residual,
        recursion_residual,
        invariance_defect: defect,
        b_min_singular: b_min,
    })
}

/// Axis groups of a diagonal by decreasing `log|d_j|`, merging equal rates.
fn diagonal_groups(diagonal: &[f64]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..diagonal.len()).collect();
    let rate = |j: usize| diagonal[j].abs().ln();
    idx.sort_by(|&a, &b| rate(b).total_cmp(&rate(a)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for j in idx {
        match groups.last_mut() {
            Some(g) if (rate(g[0]) - rate(j)).abs() <= 1e-12 => g.push(j),
            _ => groups.push(vec![j]),
        }
    }
    groups
}

/// Exact splitting and filtration of a coboundary (or constant diagonal)
/// generator: `E_i(x) = C(x) eig_i(D)` and `V_i(x) = C(x)(slow span)`.
pub fn coboundary_oracle(gen: &CocycleGenerator, x: &BasePoint) -> Result<(OseledetsSplitting, Filtration)> {
    let d = gen.dimension;
    let (conj, diagonal) = match &gen.field {
        FieldKind::Coboundary { diagonal, .. } => (gen.conjugator(x).expect("coboundary"), diagonal.clone()),
        FieldKind::Constant { matrix } => {
            let m = Operator::from_fn(d, d, |i, j| matrix[i][j]);
            if (0..d).any(|i| (0..d).any(|j| i != j && m[(i, j)] != 0.0)) {
                return Err(Error::InvalidInput("oracle needs a diagonal constant field".into()));
            }
            (Operator::identity(d, d), (0..d).map(|i| m[(i, i)]).collect())
        }
        _ => return Err(Error::InvalidInput("oracle needs a coboundary or diagonal field".into())),
    };
    if linalg::smallest_singular_value(&conj) <= 1e-12 {
        return Err(Error::SingularGenerator(linalg::smallest_singular_value(&conj)));
    }
    let groups = diagonal_groups(&diagonal);
    let norm = gen.norm;
    let axis_span = |axes: &[usize]| {
        let mut b = Operator::zeros(d, axes.len());
        for (c, &a) in axes.iter().enumerate() {
            b.set_column(c, &conj.column(a));
        }
        Subspace::span(&b, norm)
    };
    let parts: Vec<Subspace> = groups.iter().map(|g| axis_span(g)).collect();
    let k = groups.len();
    let splitting = OseledetsSplitting { at: x.clone(), parts: DirectSum::new(parts)?, levels: k, horizon: 0 };
    let mut spaces = Vec::with_capacity(k + 1);
    for i in 0..=k {
        let axes: Vec<usize> = groups[i..].iter().flatten().copied().collect();
        spaces.push(if axes.is_empty() { Subspace::zero(d, norm) } else { axis_span(&axes) });
    }
    let filt = Filtration {
        at: x.clone(),
        spaces,
        codims: groups.iter().map(|g| g.len()).collect(),
        complements: Vec::new(),
        projection_norms: Vec::new(),
        horizon: 0,
    };
    Ok((splitting, choose_complements(filt)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::ScalarField;

    fn diag_gen(sys: &BaseSystem, entries: &[f64]) -> CocycleGenerator {
        CocycleGenerator::constant(linalg::diag(entries), OperatorNorm::L2, sys).unwrap()
    }

    #[test]
    fn diagonal_spectrum_is_exact() {
        let sys = BaseSystem::cat_map();
        let e = std::f64::consts::E;
        let g = diag_gen(&sys, &[e * e, 1.0, 1.0 / e]);
        let x = sys.point(vec![0.1, 0.2]).unwrap();
        let s = lyapunov_spectrum(&g, &sys, &x, 256, 1e-2).unwrap();
        assert_eq!(s.multiplicities, vec![1, 1, 1]);
        for (got, want) in s.exponents.iter().zip([2.0, 0.0, -1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_rates_are_grouped() {
        let sys = BaseSystem::cat_map();
        let g = diag_gen(&sys, &[2.0, 2.0, 0.5]);
        let x = sys.point(vec![0.1, 0.2]).unwrap();
        let s = lyapunov_spectrum(&g, &sys, &x, 128, 1e-2).unwrap();
        assert_eq!(s.multiplicities, vec![2, 1]);
    }

    #[test]
    fn diagonal_splitting_is_coordinate() {
        let sys = BaseSystem::cat_map();
        let g = diag_gen(&sys, &[4.0, 2.0, 1.0]);
        let x = sys.point(vec![0.3, 0.7]).unwrap();
        let s = lyapunov_spectrum(&g, &sys, &x, 128, 1e-2).unwrap();
        let split = oseledets_splitting(&g, &sys, &x, 128, &s).unwrap();
        for i in 0..3 {
            let axis = Subspace::coordinate_axes(3, &[i], OperatorNorm::L2);
            assert!(geometry::hausdorff_distance(split.level(i + 1), &axis).unwrap() < 1e-12);
        }
        let f = filtration(&g, &sys, &x, 128, &s).unwrap();
        let v2 = Subspace::coordinate_axes(3, &[1, 2], OperatorNorm::L2);
        let v3 = Subspace::coordinate_axes(3, &[2], OperatorNorm::L2);
        assert!(geometry::hausdorff_distance(f.space(2), &v2).unwrap() < 1e-12);
        assert!(geometry::hausdorff_distance(f.space(3), &v3).unwrap() < 1e-12);
        for (a, b) in &f.projection_norms {
            assert!((a - 1.0).abs() < 1e-12 || *a == 0.0);
            assert!((b - 1.0).abs() < 1e-12 || *b == 0.0);
        }
    }

    #[test]
    fn fast_slow_dimensions() {
        let sys = BaseSystem::cat_map();
        let g = diag_gen(&sys, &[4.0, 2.0, 2.0, 1.0]);
        let x = sys.point(vec![0.3, 0.7]).unwrap();
        let s = lyapunov_spectrum(&g, &sys, &x, 128, 1e-2).unwrap();
        let split = oseledets_splitting(&g, &sys, &x, 128, &s).unwrap();
        let (p1, _) = fast_slow(&split, 1).unwrap();
        assert!(geometry::hausdorff_distance(&p1, split.level(1)).unwrap() < 1e-12);
        let (p2, m2) = fast_slow(&split, 2).unwrap();
        assert_eq!((p2.dim(), m2.dim()), (3, 1));
        let (p3, m3) = fast_slow(&split, 3).unwrap();
        assert_eq!((p3.dim(), m3.dim()), (4, 0));
    }

    #[test]
    fn diagonal_blocks_do_not_couple() {
        let sys = BaseSystem::doubling_map();
        let g = diag_gen(&sys, &[3.0, 1.5, 0.5]);
        let x = sys.point(vec![0.3]).unwrap();
        let s = lyapunov_spectrum(&g, &sys, &x, 128, 1e-2).unwrap();
        for i in 2..=3 {
            let b = block_cocycle(&g, &sys, &x, i, 6, 64, &s).unwrap();
            assert!(b.c_n.amax() < 1e-12);
            assert!(b.sum_residual < 1e-12);
        }
        let b1 = block_cocycle(&g, &sys, &x, 2, 1, 64, &s).unwrap();
        assert!(b1.generator_residual < 1e-14);
    }

    #[test]
    fn identity_conjugator_oracle_is_coordinate() {
        let sys = BaseSystem::cat_map();
        let field = FieldKind::Coboundary { angle: ScalarField::zero(), shear: ScalarField::zero(), diagonal: vec![0.5, 2.0] };
        let g = CocycleGenerator::new(field, OperatorNorm::L2, &sys).unwrap();
        let x = sys.point(vec![0.3, 0.7]).unwrap();
        let (split, filt) = coboundary_oracle(&g, &x).unwrap();
        let e1 = Subspace::coordinate_axes(2, &[1], OperatorNorm::L2);
        assert!(geometry::hausdorff_distance(split.level(1), &e1).unwrap() < 1e-15);
        assert_eq!(filt.codims, vec![1, 1]);
    }

    #[test]
    fn rotation_conjugator_oracle_rotates_first_axis() {
        let sys = BaseSystem::cat_map();
        let angle = ScalarField { offset: 0.4, amplitude: 0.2, weights: vec![1.0, 0.0], exponent: 1.0 };
        let field = FieldKind::Coboundary { angle: angle.clone(), shear: ScalarField::zero(), diagonal: vec![2.0, 0.5] };
        let g = CocycleGenerator::new(field, OperatorNorm::L2, &sys).unwrap();
        let x = sys.point(vec![0.3, 0.7]).unwrap();
        let (split, _) = coboundary_oracle(&g, &x).unwrap();
        // in the plane J is a quarter turn up to orientation, so E_1 is e_1
        // rotated by +-theta
        let th = angle.eval(&x);
        let j = crate::cocycle::rotation_generator(2);
        let th = if j[(1, 0)] > 0.0 { th } else { -th };
        let line = Subspace::new(Operator::from_column_slice(2, 1, &[th.cos(), th.sin()]), OperatorNorm::L2).unwrap();
        assert!(geometry::hausdorff_distance(split.level(1), &line).unwrap() < 1e-14);
    }
}
