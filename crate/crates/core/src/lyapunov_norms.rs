//! Truncated Lyapunov norms, the comparison function `D_eps`, the regularity
//! functions `C` and `K`, and regular sets `Lambda_ell`.
//!
//! Everything is evaluated on an [`OrbitBundle`]: the Oseledets splitting at
//! each point of an orbit window together with the coordinate matrices of
//! the cocycle between consecutive splittings. Long products are formed in
//! those coordinates, so growth along one `E_i` never leaks into another.

use serde::Serialize;

use crate::cocycle::CocycleGenerator;
use crate::dynamics::{BasePoint, BaseSystem};
use crate::error::{Error, Result};
use crate::geometry::{self, Subspace};
use crate::linalg::{self, Operator, OperatorNorm, ScaledOperator, Vector};
use crate::oseledets::{LyapunovSpectrum, OseledetsSplitting, SweepCache};

/// Relative size of the dropped series tail.
pub const TAIL_TOLERANCE: f64 = 1e-9;

/// `epsilon` used when the spectrum has a single level and no residual.
pub const FALLBACK_EPSILON: f64 = 1e-2;

/// Iterations of the l2 probe ascent.
const ASCENT_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovNormParams {
    pub epsilon: f64,
    pub truncation: usize,
    pub spectrum: LyapunovSpectrum,
}

/// Smallest `N` with `exp(-N eps / 2) < TAIL_TOLERANCE`.
pub fn default_truncation(epsilon: f64) -> usize {
    (2.0 * (1.0 / TAIL_TOLERANCE).ln() / epsilon).ceil() as usize
}

impl LyapunovNormParams {
    pub fn new(spectrum: LyapunovSpectrum, epsilon: f64) -> Result<Self> {
        let limit = spectrum.min_gap() / 100.0;
        if !(epsilon > 0.0 && epsilon < limit) {
            return Err(Error::ConstraintViolation(format!("epsilon {epsilon} must lie in (0, {limit})")));
        }
        Ok(Self { epsilon, truncation: default_truncation(epsilon), spectrum })
    }

    /// `epsilon = min gap / 200`.
    pub fn with_default_epsilon(spectrum: LyapunovSpectrum) -> Result<Self> {
        let g = spectrum.min_gap();
        let eps = if g.is_finite() { g / 200.0 } else { FALLBACK_EPSILON };
        Self::new(spectrum, eps)
    }

    pub fn with_truncation(mut self, truncation: usize) -> Self {
        self.truncation = truncation;
        self
    }

    /// `exp(-N eps / 2)`.
    pub fn tail_bound(&self) -> f64 {
        (-(self.truncation as f64) * self.epsilon / 2.0).exp()
    }

    /// Growth rate attached to part `p` (0-based; `p = k` is `F`).
    fn rate(&self, p: usize) -> f64 {
        self.spectrum.lambda(p + 1)
    }
}

/// Splittings and coordinate cocycles along `f^j x`, `lo <= j <= hi`.
#[derive(Debug, Clone)]
pub struct OrbitBundle {
    pub lo: i64,
    pub hi: i64,
    pub norm: OperatorNorm,
    levels: usize,
    points: Vec<BasePoint>,
    splittings: Vec<OseledetsSplitting>,
    bases: Vec<Vec<Operator>>,
    /// `G_p(j+1)^T A(f^j x) G_p(j)` for `lo <= j < hi`.
    steps: Vec<Vec<Operator>>,
    generators: Vec<Operator>,
}

impl OrbitBundle {
    pub fn build(
        gen: &CocycleGenerator,
        system: &BaseSystem,
        x: &BasePoint,
        lo: i64,
        hi: i64,
        horizon: usize,
        spectrum: &LyapunovSpectrum,
    ) -> Result<Self> {
        Self::from_cache(&SweepCache::build(gen, system, x, lo, hi, horizon, spectrum)?)
    }

    pub fn from_cache(cache: &SweepCache) -> Result<Self> {
        let (lo, hi) = (cache.lo, cache.hi);
        let splittings = (lo..=hi).map(|j| cache.splitting(j)).collect::<Result<Vec<_>>>()?;
        let bases: Vec<Vec<Operator>> = splittings
            .iter()
            .map(|s| s.parts.parts.iter().map(|p| p.orthonormal().clone()).collect())
            .collect();
        let mut steps = Vec::with_capacity((hi - lo) as usize);
        let mut generators = Vec::with_capacity((hi - lo) as usize);
        for j in lo..hi {
            let a = cache.generator(j);
            let here = &bases[(j - lo) as usize];
            let there = &bases[(j + 1 - lo) as usize];
            steps.push(here.iter().zip(there).map(|(g0, g1)| g1.transpose() * a * g0).collect());
            generators.push(a.clone());
        }
        Ok(Self {
            lo,
            hi,
            norm: cache.norm,
            levels: cache.multiplicities.len(),
            points: (lo..=hi).map(|j| cache.point(j).clone()).collect(),
            splittings,
            bases,
            steps,
            generators,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Number of parts, `k` or `k + 1` with `F`.
    pub fn parts(&self) -> usize {
        self.bases[0].len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.bases[0][0].nrows()
    }

    pub fn contains(&self, j: i64) -> bool {
        j >= self.lo && j <= self.hi
    }

    fn idx(&self, j: i64) -> usize {
        assert!(self.contains(j), "offset {j} outside bundle {}..={}", self.lo, self.hi);
        (j - self.lo) as usize
    }

    pub fn point(&self, j: i64) -> &BasePoint {
        &self.points[self.idx(j)]
    }

    pub fn splitting(&self, j: i64) -> &OseledetsSplitting {
        &self.splittings[self.idx(j)]
    }

    pub fn basis(&self, p: usize, j: i64) -> &Operator {
        &self.bases[self.idx(j)][p]
    }

    pub fn step(&self, p: usize, j: i64) -> &Operator {
        &self.steps[self.idx(j)][p]
    }

    /// `A(f^j x)` for `lo <= j < hi`.
    pub fn generator(&self, j: i64) -> &Operator {
        &self.generators[self.idx(j)]
    }

    /// Coordinates of `A(f^j x, n)` restricted to part `p` (`n` may be
    /// negative), as a scaled matrix.
    pub fn part_product(&self, p: usize, j: i64, n: i64) -> Result<ScaledOperator> {
        let m = self.basis(p, j).ncols();
        let mut out = ScaledOperator::identity(m);
        if n >= 0 {
            for t in 0..n {
                out.push(self.step(p, j + t));
                out.renormalize();
            }
        } else {
            for t in 1..=-n {
                out.push(&invert(self.step(p, j - t))?);
                out.renormalize();
            }
        }
        Ok(out)
    }

    /// `A(f^j x, n) u` for `n >= 0` using the splitting at `f^j x`: each
    /// component is transported in its own coordinates.
    pub fn transport(&self, u: &Vector, j: i64, n: i64) -> Result<Vector> {
        let split = self.splitting(j);
        let mut out = Vector::zeros(u.len());
        for p in 0..self.parts() {
            let c = self.basis(p, j).transpose() * split.parts.projection(p)? * u;
            let m = self.part_product(p, j, n)?;
            out += self.basis(p, j + n) * (&m.matrix * c) * m.log_scale.exp();
        }
        Ok(out)
    }

    /// Log of the largest and smallest stretch of `A(f^j x, n)` on the sum
    /// of the listed parts, `n >= 0`.
    pub fn stretch(&self, parts: &[usize], j: i64, n: usize) -> Result<Stretch> {
        let mut s = StretchTracker::new(self, parts, j);
        for t in 0..n as i64 {
            s.advance(self, j + t)?;
        }
        s.current(self)
    }

    /// `max{||pi_i^+||, ||pi_i^-||}` at `f^j x`.
    pub fn projection_norm(&self, i: usize, j: i64) -> Result<f64> {
        let split = self.splitting(j);
        let pp = split.fast_projection(i)?;
        let d = pp.nrows();
        let pm = Operator::identity(d, d) - &pp;
        Ok(self.norm.operator(&pp).max(self.norm.operator(&pm)))
    }
}

fn invert(m: &Operator) -> Result<Operator> {
    linalg::try_inverse(m).ok_or_else(|| Error::SingularGenerator(linalg::smallest_singular_value(m)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stretch {
    pub log_max: f64,
    pub log_min: f64,
}

/// Incremental forward and inverse coordinate products on a sum of parts.
struct StretchTracker {
    parts: Vec<usize>,
    start: i64,
    now: i64,
    forward: Vec<ScaledOperator>,
    inverse: Vec<ScaledOperator>,
}

impl StretchTracker {
    fn new(bundle: &OrbitBundle, parts: &[usize], j: i64) -> Self {
        let dims: Vec<usize> = parts.iter().map(|&p| bundle.basis(p, j).ncols()).collect();
        Self {
            parts: parts.to_vec(),
            start: j,
            now: j,
            forward: dims.iter().map(|&m| ScaledOperator::identity(m)).collect(),
            inverse: dims.iter().map(|&m| ScaledOperator::identity(m)).collect(),
        }
    }

    fn advance(&mut self, bundle: &OrbitBundle, j: i64) -> Result<()> {
        debug_assert_eq!(j, self.now);
        for (k, &p) in self.parts.iter().enumerate() {
            let h = bundle.step(p, j);
            self.forward[k].push(h);
            self.forward[k].renormalize();
            self.inverse[k].push_right(&invert(h)?);
            self.inverse[k].renormalize();
        }
        self.now += 1;
        Ok(())
    }

    fn current(&self, bundle: &OrbitBundle) -> Result<Stretch> {
        if self.parts.is_empty() {
            return Ok(Stretch { log_max: f64::NEG_INFINITY, log_min: f64::INFINITY });
        }
        let src: Vec<&Operator> = self.parts.iter().map(|&p| bundle.basis(p, self.start)).collect();
        let dst: Vec<&Operator> = self.parts.iter().map(|&p| bundle.basis(p, self.now)).collect();
        let log_max = log_gain(&src, &dst, &self.forward, bundle.norm);
        let log_min = -log_gain(&dst, &src, &self.inverse, bundle.norm);
        Ok(Stretch { log_max, log_min })
    }
}

/// `log sup ||B_dst M c|| / ||B_src c||` with `M` block diagonal.
fn log_gain(src: &[&Operator], dst: &[&Operator], cores: &[ScaledOperator], norm: OperatorNorm) -> f64 {
    let top = cores.iter().map(|c| c.log_scale).fold(f64::NEG_INFINITY, f64::max);
    let m: usize = cores.iter().map(|c| c.matrix.nrows()).sum();
    let mut core = Operator::zeros(m, m);
    let mut at = 0;
    for c in cores {
        let k = c.matrix.nrows();
        let w = (c.log_scale - top).exp();
        core.view_mut((at, at), (k, k)).copy_from(&(&c.matrix * w));
        at += k;
    }
    let b_src = linalg::hstack(src);
    let b_dst = linalg::hstack(dst);
    let e = Subspace::span(&b_src, norm);
    let map = b_dst * core * linalg::coordinates(&b_src, e.orthonormal()) * e.orthonormal().transpose();
    geometry::restricted_norm(&map, &e).ln() + top
}

/// The Lyapunov norm at one point: for each part, the weighted transported
/// basis matrices `W_n` with `||u_p||_x = sum_n ||W_n c_p||`.
#[derive(Debug, Clone)]
pub struct LocalNorm {
    pub norm: OperatorNorm,
    pub truncation: usize,
    components: Vec<Component>,
}

#[derive(Debug, Clone)]
struct Component {
    /// `G_p^T pi_p`, coordinates of the `p`-th component.
    coords: Operator,
    /// Weighted terms, kept only for multi-dimensional parts.
    terms: Vec<Operator>,
    /// `sum_n ||W_n||` for one-dimensional parts.
    weight: Option<f64>,
}

impl Component {
    fn eval(&self, c: &Vector, norm: OperatorNorm) -> f64 {
        match self.weight {
            Some(w) => w * c[0].abs(),
            None => self.terms.iter().map(|t| norm.vector(&(t * c))).sum(),
        }
    }

    /// Subgradient of `c -> sum ||W_n c||_2`.
    fn grad(&self, c: &Vector) -> Vector {
        match self.weight {
            Some(w) => Vector::from_element(1, w * c[0].signum()),
            None => {
                let mut g = Vector::zeros(c.len());
                for t in &self.terms {
                    let v = t * c;
                    let n = v.norm();
                    if n > 0.0 {
                        g += t.transpose() * v / n;
                    }
                }
                g
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DEpsilon {
    pub value: f64,
    pub probes: usize,
    pub exact: bool,
}

impl LocalNorm {
    /// `||u||_x`.
    pub fn eval(&self, u: &Vector) -> f64 {
        self.components.iter().map(|c| c.eval(&(&c.coords * u), self.norm)).sum()
    }

    /// `||u_p||_x` for the `p`-th component of `u`.
    pub fn component(&self, p: usize, u: &Vector) -> f64 {
        let c = &self.components[p];
        c.eval(&(&c.coords * u), self.norm)
    }

    /// `sup ||u||_x / ||u||`. Exact for l1/linf (vertices of the unit
    /// ball) and for l2 with one-dimensional parts (sign patterns of the
    /// dual functional); otherwise a probe maximum refined by ascent.
    pub fn d_epsilon(&self, probe_count: usize) -> Result<DEpsilon> {
        let d = self.components[0].coords.ncols();
        if probe_count < 2 * d {
            return Err(Error::InvalidInput(format!("probe_count {probe_count} below 2 * dim = {}", 2 * d)));
        }
        match self.norm {
            OperatorNorm::L1 | OperatorNorm::Linf => {
                let verts = geometry::Subspace::whole(d, self.norm).ball_vertices();
                let value = verts.iter().map(|v| self.eval(v) / self.norm.vector(v)).fold(1.0, f64::max);
                Ok(DEpsilon { value, probes: verts.len(), exact: true })
            }
            OperatorNorm::L2 if self.components.iter().all(|c| c.weight.is_some()) && self.components.len() <= 20 => {
                let rows: Vec<Vector> = self
                    .components
                    .iter()
                    .map(|c| c.coords.row(0).transpose() * c.weight.unwrap())
                    .collect();
                let k = rows.len();
                let mut best = 0.0f64;
                for mask in 0..(1usize << (k - 1)) {
                    let mut f = rows[0].clone();
                    for (b, r) in rows.iter().enumerate().skip(1) {
                        if mask >> (b - 1) & 1 == 1 {
                            f -= r;
                        } else {
                            f += r;
                        }
                    }
                    best = best.max(f.norm());
                }
                Ok(DEpsilon { value: best.max(1.0), probes: 1 << (k - 1), exact: true })
            }
            OperatorNorm::L2 => {
                let probes = probe_set(d, probe_count);
                let mut scored: Vec<(f64, Vector)> = probes.iter().map(|u| (self.eval(u), u.clone())).collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0));
                let mut best = scored[0].0;
                for (_, start) in scored.iter().take(4) {
                    let mut u = start.clone();
                    for _ in 0..ASCENT_STEPS {
                        let mut g = Vector::zeros(d);
                        for c in &self.components {
                            g += c.coords.transpose() * c.grad(&(&c.coords * &u));
                        }
                        let n = g.norm();
                        if n == 0.0 {
                            break;
                        }
                        let next = g / n;
                        let v = self.eval(&next);
                        best = best.max(v);
                        if (&next - &u).norm() < 1e-13 {
                            break;
                        }
                        u = next;
                    }
                }
                Ok(DEpsilon { value: best.max(1.0), probes: probes.len(), exact: false })
            }
        }
    }
}

/// Basis vectors, normalized pairwise sums and differences, then golden
/// ratio sphere points up to `count` in total (at least the structured set).
pub fn probe_set(d: usize, count: usize) -> Vec<Vector> {
    let mut out = Vec::new();
    for i in 0..d {
        out.push(Vector::from_fn(d, |r, _| if r == i { 1.0 } else { 0.0 }));
    }
    for i in 0..d {
        for j in i + 1..d {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            out.push(Vector::from_fn(d, |r, _| if r == i || r == j { s } else { 0.0 }));
            out.push(Vector::from_fn(d, |r, _| if r == i { s } else if r == j { -s } else { 0.0 }));
        }
    }
    let mut t = 0usize;
    while out.len() < count {
        t += 1;
        // Kronecker sequence mapped through the inverse normal cdf surrogate
        let v = Vector::from_fn(d, |r, _| {
            let alpha = (2.0 + r as f64).sqrt().fract();
            let q = (t as f64 * alpha + 0.5).fract();
            (2.0 * std::f64::consts::PI * q).sin() + (q - 0.5)
        });
        let n = v.norm();
        if n > 1e-12 {
            out.push(v / n);
        }
    }
    out
}

impl OrbitBundle {
    /// The truncated Lyapunov norm at `f^j x`; needs the window to cover
    /// `j - N_tr ..= j + N_tr`.
    pub fn local_norm(&self, j: i64, params: &LyapunovNormParams) -> Result<LocalNorm> {
        let n = params.truncation as i64;
        let k = self.levels;
        let needs_back = (0..self.parts()).any(|p| p < k);
        if j + n > self.hi || (needs_back && j - n < self.lo) {
            return Err(Error::InvalidInput(format!(
                "bundle {}..={} too short for N_tr = {n} around {j}",
                self.lo, self.hi
            )));
        }
        let eps = params.epsilon;
        let split = self.splitting(j);
        let mut components = Vec::with_capacity(self.parts());
        for p in 0..self.parts() {
            let rate = params.rate(p);
            let g = self.basis(p, j);
            let m = g.ncols();
            let mut terms = vec![g.clone()];
            let mut fwd = ScaledOperator::identity(m);
            for t in 1..=n {
                fwd.push(self.step(p, j + t - 1));
                fwd.renormalize();
                let w = (fwd.log_scale - t as f64 * (rate + eps)).exp();
                terms.push(self.basis(p, j + t) * &fwd.matrix * w);
            }
            if p < k {
                let mut back = ScaledOperator::identity(m);
                for t in 1..=n {
                    back.push(&invert(self.step(p, j - t))?);
                    back.renormalize();
                    let w = (back.log_scale + t as f64 * (rate - eps)).exp();
                    terms.push(self.basis(p, j - t) * &back.matrix * w);
                }
            }
            let sizes: Vec<f64> = terms.iter().map(|t| self.norm.operator(t)).collect();
            let total: f64 = sizes.iter().sum();
            if params.truncation >= default_truncation(eps) {
                let edge = sizes[n as usize].max(*sizes.last().unwrap());
                if !(edge <= 1e-6 * total) {
                    return Err(Error::SeriesDivergence(edge / total));
                }
            }
            let coords = g.transpose() * split.parts.projection(p)?;
            let (terms, weight) = if m == 1 {
                (Vec::new(), Some(terms.iter().map(|t| self.norm.vector(t)).sum()))
            } else {
                (terms, None)
            };
            components.push(Component { coords, terms, weight });
        }
        Ok(LocalNorm { norm: self.norm, truncation: params.truncation, components })
    }
}

/// `||u||_x` with the bundle anchored so that `x = f^j x_0`.
pub fn lyapunov_norm(u: &Vector, bundle: &OrbitBundle, j: i64, params: &LyapunovNormParams) -> Result<f64> {
    Ok(bundle.local_norm(j, params)?.eval(u))
}

/// Per-level sandwich ratios for one sampled vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichRow {
    pub part: usize,
    pub n: usize,
    /// `||A(x,n) u_p||_{f^n x} / ||u_p||_x`.
    pub ratio: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub rows: Vec<SandwichRow>,
    pub worst_violation: f64,
    pub pass: bool,
}

/// Relative slack allowed for truncation effects.
pub const SANDWICH_SLACK: f64 = 1e-8;

/// Checks `e^{n(l_p - eps)} <= ratio <= e^{n(l_p + eps)}` (upper bound only
/// for `F`) for each part and `1 <= n <= n_max`, on the basis vectors of
/// every part at `f^j x`.
pub fn lyapunov_sandwich_check(
    bundle: &OrbitBundle,
    j: i64,
    params: &LyapunovNormParams,
    n_max: usize,
) -> Result<SandwichReport> {
    let here = bundle.local_norm(j, params)?;
    let there: Vec<LocalNorm> = (1..=n_max as i64).map(|n| bundle.local_norm(j + n, params)).collect::<Result<_>>()?;
    let eps = params.epsilon;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for p in 0..bundle.parts() {
        let rate = params.rate(p);
        let g = bundle.basis(p, j);
        for col in 0..g.ncols() {
            let u: Vector = g.column(col).into_owned();
            let base = here.component(p, &u);
            for n in 1..=n_max {
                let img = bundle.transport(&u, j, n as i64)?;
                let ratio = there[n - 1].component(p, &img) / base;
                let nf = n as f64;
                let upper = (nf * (rate + eps)).exp();
                let lower = if p < bundle.levels() { (nf * (rate - eps)).exp() } else { 0.0 };
                let v_up = ratio / upper - 1.0;
                let v_lo = if lower > 0.0 { 1.0 - ratio / lower } else { f64::NEG_INFINITY };
                let v = v_up.max(v_lo);
                worst = worst.max(v);
                rows.push(SandwichRow { part: p, n, ratio, lower, upper, pass: v <= SANDWICH_SLACK });
            }
        }
    }
    Ok(SandwichReport { pass: worst <= SANDWICH_SLACK, worst_violation: worst, rows })
}

/// `D_eps(f^j x)` before tempering.
pub fn d_epsilon(bundle: &OrbitBundle, j: i64, params: &LyapunovNormParams, probe_count: usize) -> Result<DEpsilon> {
    bundle.local_norm(j, params)?.d_epsilon(probe_count)
}

/// `g~(m) = max_j g(j) e^{-|j - m| eps}` over a common segment; the result
/// is tempered on that segment by construction and dominates `g`.
pub fn tempered_envelope(values: &[(i64, f64)], epsilon: f64) -> Vec<(i64, f64)> {
    values
        .iter()
        .map(|&(m, _)| {
            let v = values
                .iter()
                .map(|&(j, g)| g * (-((j - m).abs() as f64) * epsilon).exp())
                .fold(f64::NEG_INFINITY, f64::max);
            (m, v)
        })
        .collect()
}

/// Largest `g(m) / (e^{|m - m'| eps} g(m')) - 1` over all pairs.
pub fn temperedness_slack(values: &[(i64, f64)], epsilon: f64) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for &(m, g) in values {
        for &(m2, g2) in values {
            let bound = (((m - m2).abs() as f64) * epsilon).exp() * g2;
            worst = worst.max(g / bound - 1.0);
        }
    }
    worst
}

/// Smallest `C >= 1` with `||A(x,n)|E_i^-|| <= C e^{n(l_{i+1}+eps)}` and
/// `min stretch of A(x,n) on E_i^+ >= e^{n(l_i - eps)} / C` for `n <= horizon`.
pub fn c_function(bundle: &OrbitBundle, j: i64, spectrum: &LyapunovSpectrum, epsilon: f64, i: usize, horizon: usize) -> Result<f64> {
    if i == 0 || i > bundle.levels() {
        return Err(Error::InvalidInput(format!("level {i} outside 1..={}", bundle.levels())));
    }
    if j + horizon as i64 > bundle.hi {
        return Err(Error::InvalidInput("bundle too short for the C horizon".into()));
    }
    let slow: Vec<usize> = (i..bundle.parts()).collect();
    let fast: Vec<usize> = (0..i).collect();
    let (l_fast, l_slow) = (spectrum.lambda(i), spectrum.lambda(i + 1));
    let mut ts = StretchTracker::new(bundle, &slow, j);
    let mut tf = StretchTracker::new(bundle, &fast, j);
    let mut log_c = 0.0f64;
    for n in 0..=horizon {
        if n > 0 {
            ts.advance(bundle, j + n as i64 - 1)?;
            tf.advance(bundle, j + n as i64 - 1)?;
        }
        let nf = n as f64;
        if !slow.is_empty() {
            log_c = log_c.max(ts.current(bundle)?.log_max - nf * (l_slow + epsilon));
        }
        log_c = log_c.max(nf * (l_fast - epsilon) - tf.current(bundle)?.log_min);
    }
    Ok(log_c.exp())
}

/// `sup_{|n| <= horizon} max{||pi_i^-||, ||pi_i^+||}(f^{j+n} x) e^{-|n| eps}`.
pub fn k_function(bundle: &OrbitBundle, j: i64, i: usize, epsilon: f64, horizon: usize) -> Result<f64> {
    let h = horizon as i64;
    if !bundle.contains(j - h) || !bundle.contains(j + h) {
        return Err(Error::InvalidInput("bundle too short for the K horizon".into()));
    }
    let mut k = 1.0f64;
    for n in -h..=h {
        k = k.max(bundle.projection_norm(i, j + n)? * (-(n.abs() as f64) * epsilon).exp());
    }
    Ok(k)
}

/// One row of the regularity table. `level = 0` means the maximum over all
/// levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityRecord {
    pub index: usize,
    pub coords: Vec<f64>,
    pub d_eps: f64,
    pub d_probes: usize,
    pub c_val: f64,
    pub k_val: f64,
    pub level: usize,
    pub horizon: usize,
}

impl RegularityRecord {
    pub fn ell(&self) -> f64 {
        self.c_val.max(self.k_val)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularityConfig {
    pub level: usize,
    /// Horizon for `C` and `K`.
    pub horizon: usize,
    /// Sweep length for the splittings.
    pub splitting_horizon: usize,
    pub probe_count: usize,
    /// Skip `D_eps` (reported as NaN) when only `C` and `K` are needed.
    pub with_d_eps: bool,
}

/// `D_eps`, `C`, `K` at one sampled point.
pub fn regularity_record(
    gen: &CocycleGenerator,
    system: &BaseSystem,
    x: &BasePoint,
    index: usize,
    params: &LyapunovNormParams,
    cfg: &RegularityConfig,
) -> Result<RegularityRecord> {
    let spectrum = &params.spectrum;
    let h = cfg.horizon as i64;
    let reach = if cfg.with_d_eps { h.max(params.truncation as i64) } else { h };
    let bundle = OrbitBundle::build(gen, system, x, -reach, reach, cfg.splitting_horizon, spectrum)?;
    let levels: Vec<usize> = if cfg.level == 0 { (1..=spectrum.levels()).collect() } else { vec![cfg.level] };
    let mut c_val = 1.0f64;
    let mut k_val = 1.0f64;
    for &i in &levels {
        c_val = c_val.max(c_function(&bundle, 0, spectrum, params.epsilon, i, cfg.horizon)?);
        k_val = k_val.max(k_function(&bundle, 0, i, params.epsilon, cfg.horizon)?);
    }
    let (d_eps, d_probes) = if cfg.with_d_eps {
        let d = d_epsilon(&bundle, 0, params, cfg.probe_count)?;
        (d.value, d.probes)
    } else {
        (f64::NAN, 0)
    };
    Ok(RegularityRecord { index, coords: x.coords.clone(), d_eps, d_probes, c_val, k_val, level: cfg.level, horizon: cfg.horizon })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RegularTarget {
    Ell(f64),
    Gamma { gamma: f64, cap: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularSet {
    pub ell: f64,
    /// Indices into the record list.
    pub members: Vec<usize>,
    pub measure_estimate: f64,
    pub gamma_target: Option<f64>,
}

impl RegularSet {
    pub fn contains(&self, index: usize) -> bool {
        self.members.binary_search(&index).is_ok()
    }
}

fn members_at(records: &[RegularityRecord], ell: f64) -> Vec<usize> {
    let mut m: Vec<usize> = records.iter().filter(|r| r.ell() <= ell).map(|r| r.index).collect();
    m.sort_unstable();
    m
}

/// `Lambda_ell = {C <= ell, K <= ell}`, either at a given `ell` or at the
/// smallest integer `ell` whose sample fraction exceeds `1 - gamma`.
pub fn build_regular_set(records: &[RegularityRecord], target: RegularTarget) -> Result<RegularSet> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no regularity records".into()));
    }
    let total = records.len() as f64;
    match target {
        RegularTarget::Ell(ell) => {
            if !(ell >= 1.0) {
                return Err(Error::InvalidInput(format!("ell = {ell} must be at least 1")));
            }
            let members = members_at(records, ell);
            Ok(RegularSet { ell, measure_estimate: members.len() as f64 / total, members, gamma_target: None })
        }
        RegularTarget::Gamma { gamma, cap } => {
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(Error::InvalidInput(format!("gamma = {gamma} must lie in (0, 1)")));
            }
            let mut needed: Vec<f64> = records.iter().map(|r| r.ell().ceil().max(1.0)).collect();
            needed.sort_by(f64::total_cmp);
            for &ell in &needed {
                if ell > cap {
                    break;
                }
                let members = members_at(records, ell);
                let frac = members.len() as f64 / total;
                if frac > 1.0 - gamma {
                    return Ok(RegularSet { ell, members, measure_estimate: frac, gamma_target: Some(gamma) });
                }
            }
            Err(Error::UnreachableGamma { cap, target: 1.0 - gamma })
        }
    }
}
