//! Subspaces of a finite-dimensional normed space, the gap `delta`, its
//! symmetrization, the Hausdorff distance between unit spheres, splittings
//! with their projections, and graph operators.
//!
//! Under l2 everything is closed form. Under l1/linf the unit ball of a
//! subspace is a polytope, so the gap is a bilinear maximum over vertex
//! pairs and is exact. The sphere-to-sphere distance is exact on the inner
//! side when the target has dimension at most 2 and is sampled on the outer
//! side, with a reported resolution.

use itertools::Itertools;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, Operator, OperatorNorm, Vector, RANK_TOL};

/// Subspaces closer than this in `d_hat` are treated as equal.
pub const SUBSPACE_EQ_TOL: f64 = 1e-9;

/// Splittings with a worse concatenated-basis condition number are rejected.
pub const MAX_SPLITTING_CONDITION: f64 = 1e12;

/// Default sampling step along sphere polygons (l1/linf only).
pub const DEFAULT_SPHERE_STEP: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: Operator,
    q: Operator,
    pub norm: OperatorNorm,
}

impl Subspace {
    /// Span of the columns of `basis`, which must be linearly independent.
    pub fn new(basis: Operator, norm: OperatorNorm) -> Result<Self> {
        let d = basis.nrows();
        if d == 0 {
            return Err(Error::InvalidInput("ambient dimension must be positive".into()));
        }
        if basis.ncols() > d {
            return Err(Error::InvalidInput("more basis vectors than ambient dimension".into()));
        }
        if basis.ncols() > 0 {
            let s = linalg::singular_values(&basis);
            let lo = *s.last().unwrap();
            if !(lo > RANK_TOL * s[0].max(1e-300)) || !basis.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!("basis is rank deficient (sigma_min {lo:e})")));
            }
        }
        let q = linalg::orthonormalize(&basis);
        Ok(Self { basis, q, norm })
    }

    /// The trivial subspace `{0}`.
    pub fn zero(ambient_dim: usize, norm: OperatorNorm) -> Self {
        let basis = Operator::zeros(ambient_dim, 0);
        Self { q: basis.clone(), basis, norm }
    }

    pub fn whole(ambient_dim: usize, norm: OperatorNorm) -> Self {
        let basis = Operator::identity(ambient_dim, ambient_dim);
        Self { q: basis.clone(), basis, norm }
    }

    /// Span of the given columns, rank-revealed: near-dependent columns are
    /// dropped rather than rejected.
    pub fn span(columns: &Operator, norm: OperatorNorm) -> Self {
        let d = columns.nrows();
        if columns.ncols() == 0 {
            return Self::zero(d, norm);
        }
        let svd = columns.clone().svd(true, false);
        let u = svd.u.expect("requested u");
        let top = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&j| svd.singular_values[j] > RANK_TOL * top.max(1e-300))
            .collect();
        let mut q = Operator::zeros(d, keep.len());
        for (c, &j) in keep.iter().enumerate() {
            q.set_column(c, &u.column(j));
        }
        Self { basis: q.clone(), q, norm }
    }

    pub fn coordinate_axes(ambient_dim: usize, axes: &[usize], norm: OperatorNorm) -> Self {
        let mut b = Operator::zeros(ambient_dim, axes.len());
        for (c, &a) in axes.iter().enumerate() {
            b[(a, c)] = 1.0;
        }
        Self { q: b.clone(), basis: b, norm }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &Operator {
        &self.basis
    }

    /// Euclidean-orthonormal basis of the same span.
    pub fn orthonormal(&self) -> &Operator {
        &self.q
    }

    pub fn with_norm(&self, norm: OperatorNorm) -> Self {
        Self { norm, ..self.clone() }
    }

    /// `T(E)`, rank-revealed.
    pub fn image(&self, t: &Operator) -> Self {
        Self::span(&(t * &self.q), self.norm)
    }

    /// Euclidean-orthogonal projector onto the span.
    pub fn orthogonal_projector(&self) -> Operator {
        &self.q * self.q.transpose()
    }

    /// Euclidean annihilator `E^perp`.
    pub fn annihilator(&self) -> Self {
        if self.dim() == 0 {
            return Self::whole(self.ambient_dim(), self.norm);
        }
        let c = linalg::orthogonal_complement(&self.q);
        Self { q: c.clone(), basis: c, norm: self.norm }
    }

    /// Vertices of the unit ball of `E` (l1/linf). For l2 the ball is round
    /// and the orthonormal basis vectors are returned instead.
    pub fn ball_vertices(&self) -> Vec<Vector> {
        section_vertices(&self.q, self.norm)
    }
}

impl Serialize for Subspace {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wire {
            ambient_dim: usize,
            norm: OperatorNorm,
            columns: Vec<Vec<f64>>,
        }
        Wire {
            ambient_dim: self.ambient_dim(),
            norm: self.norm,
            columns: self.basis.column_iter().map(|c| c.iter().copied().collect()).collect(),
        }
        .serialize(s)
    }
}

fn check_pair(e: &Subspace, f: &Subspace) -> Result<()> {
    if e.norm != f.norm {
        return Err(Error::NormMismatch);
    }
    if e.ambient_dim() != f.ambient_dim() {
        return Err(Error::AmbientMismatch(e.ambient_dim(), f.ambient_dim()));
    }
    Ok(())
}

/// Vertices of `{B c : ||B c|| <= 1}` for an orthonormal `B` (d x k).
fn section_vertices(b: &Operator, norm: OperatorNorm) -> Vec<Vector> {
    let (d, k) = (b.nrows(), b.ncols());
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    match norm {
        OperatorNorm::L2 => {
            for j in 0..k {
                out.push(b.column(j).into_owned());
            }
        }
        OperatorNorm::Linf => {
            // k independent active faces |row_i . c| = 1
            for rows in (0..d).combinations(k) {
                let sub = Operator::from_fn(k, k, |r, c| b[(rows[r], c)]);
                let Some(inv) = linalg::try_inverse(&sub) else { continue };
                if linalg::smallest_singular_value(&sub) < 1e-12 {
                    continue;
                }
                for signs in 0..(1u32 << k) {
                    let s = Vector::from_fn(k, |r, _| if signs >> r & 1 == 1 { -1.0 } else { 1.0 });
                    let v = b * (&inv * s);
                    if v.amax() <= 1.0 + 1e-9 {
                        out.push(v);
                    }
                }
            }
        }
        OperatorNorm::L1 => {
            // lines where k-1 coordinates vanish, normalized
            for zeros in (0..d).combinations(k - 1) {
                let v = if k == 1 {
                    b.column(0).into_owned()
                } else {
                    let rows = Operator::from_fn(k - 1, k, |r, c| b[(zeros[r], c)]);
                    let ns = linalg::null_space(&rows, 1e-10);
                    if ns.ncols() != 1 {
                        continue;
                    }
                    b * ns.column(0)
                };
                let n = norm.vector(&v);
                if n > 1e-14 {
                    out.push(&v / n);
                    out.push(-&v / n);
                }
            }
        }
    }
    out
}

/// `delta(E, F) = sup_{v in S_E} dist(v, F)`.
pub fn deviation(e: &Subspace, f: &Subspace) -> Result<f64> {
    check_pair(e, f)?;
    if e.dim() == 0 {
        return Ok(0.0);
    }
    if f.dim() == 0 {
        return Ok(1.0);
    }
    let value = match e.norm {
        OperatorNorm::L2 => {
            let r = e.orthonormal() - f.orthogonal_projector() * e.orthonormal();
            linalg::spectral_norm(&r)
        }
        norm => {
            // dist(v, F) = max <w, v> over the dual unit ball of F^perp
            let ann = f.annihilator();
            if ann.dim() == 0 {
                return Ok(0.0);
            }
            let vs = section_vertices(e.orthonormal(), norm);
            let ws = section_vertices(ann.orthonormal(), norm.dual());
            let mut best = 0.0f64;
            for v in &vs {
                for w in &ws {
                    best = best.max(w.dot(v).abs());
                }
            }
            best
        }
    };
    Ok(value.clamp(0.0, 2.0))
}

/// `delta_hat(E, F) = max{delta(E, F), delta(F, E)}`.
pub fn gap(e: &Subspace, f: &Subspace) -> Result<f64> {
    Ok(deviation(e, f)?.max(deviation(f, e)?))
}

/// A sphere distance together with the half-width of its uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SphereDistance {
    pub value: f64,
    pub resolution: f64,
}

/// Distance from `v` to `S_F`, and the amount by which it may overshoot.
fn dist_to_sphere(v: &Vector, f: &Subspace, step: f64, cache: &SphereCache) -> (f64, f64) {
    let norm = f.norm;
    match norm {
        OperatorNorm::L2 => {
            let p = f.orthogonal_projector() * v;
            let pn = p.norm();
            if pn < 1e-300 {
                let any = f.orthonormal().column(0).into_owned();
                return ((v - any).norm(), 0.0);
            }
            ((v - p / pn).norm(), 0.0)
        }
        _ => match &cache.polygon {
            Some(poly) => {
                let mut best = f64::INFINITY;
                for (a, b) in poly.iter().zip(poly.iter().cycle().skip(1)) {
                    best = best.min(segment_distance(v, a, b, norm));
                }
                (best, 0.0)
            }
            None => {
                let _ = step;
                let best = cache.samples.iter().map(|u| norm.vector(&(v - u))).fold(f64::INFINITY, f64::min);
                (best, cache.resolution)
            }
        },
    }
}

/// Exact `min_t ||v - (a + t (b - a))||` for t in [0, 1] under l1/linf: the
/// objective is convex and piecewise linear, so a breakpoint or a crossing
/// of two pieces attains it.
fn segment_distance(v: &Vector, a: &Vector, b: &Vector, norm: OperatorNorm) -> f64 {
    let r = v - a;
    let s = b - a;
    let eval = |t: f64| norm.vector(&(&r - t * &s));
    let mut cands = vec![0.0, 1.0];
    for i in 0..r.len() {
        if s[i].abs() > 1e-15 {
            cands.push(r[i] / s[i]);
        }
    }
    if norm == OperatorNorm::Linf {
        for i in 0..r.len() {
            for j in 0..i {
                for sign in [1.0, -1.0] {
                    let den = s[i] - sign * s[j];
                    if den.abs() > 1e-15 {
                        cands.push((r[i] - sign * r[j]) / den);
                    }
                }
            }
        }
    }
    cands
        .into_iter()
        .filter(|t| (0.0..=1.0).contains(t))
        .map(eval)
        .fold(f64::INFINITY, f64::min)
}

struct SphereCache {
    polygon: Option<Vec<Vector>>,
    samples: Vec<Vector>,
    resolution: f64,
}

/// Ordered boundary polygon of the unit ball of a 2-dimensional subspace.
fn sphere_polygon(e: &Subspace) -> Vec<Vector> {
    let q = e.orthonormal();
    let mut vs = section_vertices(q, e.norm);
    let angle = |v: &Vector| {
        let c = q.transpose() * v;
        c[1].atan2(c[0])
    };
    vs.sort_by(|a, b| angle(a).total_cmp(&angle(b)));
    vs.dedup_by(|a, b| (&*a - &*b).amax() < 1e-12);
    if vs.len() > 1 && (&vs[0] - &vs[vs.len() - 1]).amax() < 1e-12 {
        vs.pop();
    }
    vs
}

/// Points on `S_E` with covering radius at most the returned resolution.
fn sphere_samples(e: &Subspace, step: f64) -> (Vec<Vector>, f64) {
    let norm = e.norm;
    let q = e.orthonormal();
    let k = e.dim();
    match k {
        0 => (Vec::new(), 0.0),
        1 => {
            let v = q.column(0).into_owned();
            let v = &v / norm.vector(&v);
            (vec![v.clone(), -v], 0.0)
        }
        2 if norm != OperatorNorm::L2 => {
            let poly = sphere_polygon(e);
            let mut out = Vec::new();
            let mut res = 0.0f64;
            for (a, b) in poly.iter().zip(poly.iter().cycle().skip(1)) {
                let len = norm.vector(&(b - a));
                let n = (len / step).ceil().max(1.0) as usize;
                res = res.max(len / n as f64 / 2.0);
                for j in 0..n {
                    out.push(a + (b - a) * (j as f64 / n as f64));
                }
            }
            (out, res)
        }
        _ => {
            // grid on the surface of the coefficient cube
            let n = (2.0 / step).ceil().max(1.0) as usize;
            let mut out = Vec::new();
            for axis in 0..k {
                for sign in [1.0, -1.0] {
                    let others: Vec<usize> = (0..k).filter(|&a| a != axis).collect();
                    for idx in (0..others.len()).map(|_| 0..=n).multi_cartesian_product() {
                        let mut c = Vector::zeros(k);
                        c[axis] = sign;
                        for (o, &i) in others.iter().zip(&idx) {
                            c[*o] = -1.0 + 2.0 * i as f64 / n as f64;
                        }
                        let v = q * c;
                        out.push(&v / norm.vector(&v));
                    }
                }
            }
            let col_sum: f64 = (0..k).map(|j| norm.vector(&q.column(j))).sum();
            let lower = match norm {
                OperatorNorm::Linf => 1.0 / (e.ambient_dim() as f64).sqrt(),
                _ => 1.0,
            };
            (out, 2.0 * col_sum * (1.0 / n as f64) / lower)
        }
    }
}

/// `sup_{v in S_E} dist(v, S_F)`.
fn one_sided_sphere(e: &Subspace, f: &Subspace, step: f64) -> SphereDistance {
    if e.norm == OperatorNorm::L2 {
        // chord 2 sin(theta/2) at the largest principal angle; the angle comes
        // from its sine when small and from its cosine otherwise
        let theta = if e.dim() > f.dim() {
            std::f64::consts::FRAC_PI_2
        } else {
            let sine = linalg::spectral_norm(&(e.orthonormal() - f.orthogonal_projector() * e.orthonormal()));
            if sine < 0.7 {
                sine.asin()
            } else {
                let m = f.orthonormal().transpose() * e.orthonormal();
                linalg::smallest_singular_value(&m).min(1.0).acos()
            }
        };
        return SphereDistance { value: 2.0 * (theta / 2.0).sin(), resolution: 0.0 };
    }
    let cache = if f.dim() <= 2 {
        let polygon = if f.dim() == 1 {
            let v = f.orthonormal().column(0).into_owned();
            let v = &v / f.norm.vector(&v);
            vec![v.clone(), -v]
        } else {
            sphere_polygon(f)
        };
        SphereCache { polygon: Some(polygon), samples: Vec::new(), resolution: 0.0 }
    } else {
        let (samples, resolution) = sphere_samples(f, step);
        SphereCache { polygon: None, samples, resolution }
    };
    let (points, outer_res) = sphere_samples(e, step);
    let mut best = 0.0f64;
    let mut inner_res = 0.0f64;
    for v in &points {
        let (d, r) = if f.dim() == 1 {
            let p = cache.polygon.as_ref().unwrap();
            (f.norm.vector(&(v - &p[0])).min(f.norm.vector(&(v - &p[1]))), 0.0)
        } else {
            dist_to_sphere(v, f, step, &cache)
        };
        best = best.max(d);
        inner_res = inner_res.max(r);
    }
    SphereDistance { value: best, resolution: outer_res + inner_res }
}

/// `d_hat(E, F)` with its resolution, sampling polygons at `step`.
pub fn hausdorff_estimate(e: &Subspace, f: &Subspace, step: f64) -> Result<SphereDistance> {
    check_pair(e, f)?;
    match (e.dim(), f.dim()) {
        (0, 0) => return Ok(SphereDistance { value: 0.0, resolution: 0.0 }),
        (0, _) | (_, 0) => {
            return Err(Error::InvalidInput("sphere distance to the trivial subspace is undefined".into()))
        }
        _ => {}
    }
    let a = one_sided_sphere(e, f, step);
    let b = one_sided_sphere(f, e, step);
    Ok(SphereDistance { value: a.value.max(b.value), resolution: a.resolution.max(b.resolution) })
}

/// `d_hat(E, F)`, the Hausdorff distance between unit spheres.
pub fn hausdorff_distance(e: &Subspace, f: &Subspace) -> Result<f64> {
    Ok(hausdorff_estimate(e, f, DEFAULT_SPHERE_STEP)?.value)
}

/// `sup_{v in S_E} ||T v||`, exact for every norm.
pub fn restricted_norm(t: &Operator, e: &Subspace) -> f64 {
    if e.dim() == 0 {
        return 0.0;
    }
    match e.norm {
        OperatorNorm::L2 => linalg::spectral_norm(&(t * e.orthonormal())),
        norm => e.ball_vertices().iter().map(|v| norm.vector(&(t * v))).fold(0.0, f64::max),
    }
}

/// `inf_{v in S_E} ||T v||`, exact for every norm (zero if `T` is not
/// injective on `E`).
pub fn restricted_min_stretch(t: &Operator, e: &Subspace) -> f64 {
    if e.dim() == 0 {
        return f64::INFINITY;
    }
    let img = t * e.orthonormal();
    match e.norm {
        OperatorNorm::L2 => linalg::smallest_singular_value(&img),
        norm => {
            if linalg::rank(&img, RANK_TOL) < e.dim() {
                return 0.0;
            }
            // 1 / sup over the image ball of ||T|_E^-1 w||
            let target = Subspace { basis: img.clone(), q: linalg::orthonormalize(&img), norm };
            let back = linalg::coordinates(&img, target.orthonormal());
            let pullback = e.orthonormal() * back;
            let coords_of = |w: &Vector| linalg::coordinates(target.orthonormal(), &Operator::from_column_slice(w.len(), 1, w.as_slice()));
            let mut worst = 0.0f64;
            for w in target.ball_vertices() {
                let c = coords_of(&w);
                worst = worst.max(norm.vector(&(&pullback * c)));
            }
            1.0 / worst
        }
    }
}

/// Direct sum `E_1 + ... + E_k` of the ambient space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectSum {
    pub parts: Vec<Subspace>,
    pub ambient_dim: usize,
    pub condition: f64,
}

impl DirectSum {
    pub fn new(parts: Vec<Subspace>) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::InvalidInput("direct sum needs at least one part".into()));
        };
        let d = first.ambient_dim();
        for p in &parts {
            check_pair(first, p)?;
        }
        let total: usize = parts.iter().map(|p| p.dim()).sum();
        if total != d {
            return Err(Error::InvalidInput(format!("part dimensions sum to {total}, ambient is {d}")));
        }
        let cols: Vec<&Operator> = parts.iter().map(|p| p.orthonormal()).collect();
        let m = linalg::hstack(&cols);
        let condition = linalg::condition_number(&m);
        Ok(Self { parts, ambient_dim: d, condition })
    }

    fn frame(&self) -> Result<(Operator, Operator)> {
        if !(self.condition <= MAX_SPLITTING_CONDITION) {
            return Err(Error::IllConditionedSplitting(self.condition));
        }
        let cols: Vec<&Operator> = self.parts.iter().map(|p| p.orthonormal()).collect();
        let m = linalg::hstack(&cols);
        let inv = linalg::try_inverse(&m).ok_or(Error::IllConditionedSplitting(self.condition))?;
        Ok((m, inv))
    }

    /// `pi_i`: projection onto part `i` along the others.
    pub fn projection(&self, i: usize) -> Result<Operator> {
        self.projection_onto(&[i])
    }

    /// Projection onto the sum of the listed parts along the rest.
    pub fn projection_onto(&self, idx: &[usize]) -> Result<Operator> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.parts.len()) {
            return Err(Error::InvalidInput(format!("no part {bad} in a sum of {}", self.parts.len())));
        }
        let (m, inv) = self.frame()?;
        let mut sel = Operator::zeros(self.ambient_dim, self.ambient_dim);
        let mut offset = 0;
        for (j, p) in self.parts.iter().enumerate() {
            if idx.contains(&j) {
                for c in offset..offset + p.dim() {
                    sel[(c, c)] = 1.0;
                }
            }
            offset += p.dim();
        }
        Ok(&m * sel * inv)
    }
}

/// Outcome of the complementation-persistence audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplementationCheck {
    pub distance: f64,
    pub resolution: f64,
    pub hypothesis: bool,
    pub conclusion: bool,
    /// Hypothesis held but the conclusion failed.
    pub falsified: bool,
}

/// Whether `d_hat(E, E') <= 1/||pi_{E//F}||`, and independently whether
/// `E' + F` is a direct sum of the ambient space.
pub fn complementation_persists(e: &Subspace, e_prime: &Subspace, f: &Subspace, proj_norm: f64) -> Result<ComplementationCheck> {
    check_pair(e, e_prime)?;
    check_pair(e, f)?;
    let est = hausdorff_estimate(e, e_prime, DEFAULT_SPHERE_STEP)?;
    let hypothesis = est.value + est.resolution <= 1.0 / proj_norm;
    let d = e.ambient_dim();
    let conclusion = e_prime.dim() + f.dim() == d
        && linalg::rank(&linalg::hstack(&[e_prime.orthonormal(), f.orthonormal()]), RANK_TOL) == d;
    Ok(ComplementationCheck {
        distance: est.value,
        resolution: est.resolution,
        hypothesis,
        conclusion,
        falsified: hypothesis && !conclusion,
    })
}

/// `L: E^+(x) -> E^-(x)` whose graph is `E^+(y)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphOperator {
    pub domain: Subspace,
    pub codomain: Subspace,
    /// Coordinates of `L` in the orthonormal bases of domain and codomain.
    #[serde(serialize_with = "ser_matrix")]
    pub matrix: Operator,
    pub norm_value: f64,
    /// `pi^+` of the splitting `domain + codomain`.
    #[serde(skip)]
    pub pi_plus: Operator,
}

fn ser_matrix<S: Serializer>(m: &Operator, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

impl GraphOperator {
    /// `L` as an ambient operator on the domain, `Q^- M Q^+T`.
    pub fn on_domain(&self) -> Operator {
        self.codomain.orthonormal() * &self.matrix * self.domain.orthonormal().transpose()
    }

    /// `L pi^+`, the extension of `L` by zero along the codomain.
    pub fn extended(&self) -> Operator {
        self.on_domain() * &self.pi_plus
    }

    /// The graph `{u + L u : u in domain}`.
    pub fn graph(&self) -> Subspace {
        let q = self.domain.orthonormal();
        Subspace::span(&(q + self.codomain.orthonormal() * &self.matrix), self.domain.norm)
    }
}

pub fn graph_operator(eplus_x: &Subspace, eminus_x: &Subspace, eplus_y: &Subspace) -> Result<GraphOperator> {
    check_pair(eplus_x, eminus_x)?;
    check_pair(eplus_x, eplus_y)?;
    if eplus_y.dim() != eplus_x.dim() {
        return Err(Error::TransversalityFailure);
    }
    let split = DirectSum::new(vec![eplus_x.clone(), eminus_x.clone()])?;
    let (m, inv) = split.frame()?;
    let k = eplus_x.dim();
    let d = split.ambient_dim;
    let c = &inv * eplus_y.orthonormal();
    let a = c.rows(0, k).into_owned();
    let b = c.rows(k, d - k).into_owned();
    let s = linalg::singular_values(&a);
    if s.last().map_or(true, |&lo| lo <= RANK_TOL * s[0].max(1.0)) {
        return Err(Error::TransversalityFailure);
    }
    let a_inv = linalg::try_inverse(&a).ok_or(Error::TransversalityFailure)?;
    let matrix = b * a_inv;
    let mut sel = Operator::zeros(d, d);
    for j in 0..k {
        sel[(j, j)] = 1.0;
    }
    let pi_plus = &m * sel * &inv;
    let mut g = GraphOperator {
        domain: eplus_x.clone(),
        codomain: eminus_x.clone(),
        matrix,
        norm_value: 0.0,
        pi_plus,
    };
    g.norm_value = restricted_norm(&g.on_domain(), eplus_x);
    Ok(g)
}

/// `sum_{k>=1} (-L)^k`, i.e. the `L_hat` with `(I + L)^-1 = I + L_hat`.
pub fn neumann_inverse(l: &Operator, norm: OperatorNorm) -> Result<Operator> {
    let ln = norm.operator(l);
    if ln >= 1.0 {
        return Err(Error::SeriesDivergence(ln));
    }
    Ok(neumann_series(l))
}

fn neumann_series(l: &Operator) -> Operator {
    let mut term = -l;
    let mut sum = term.clone();
    for _ in 0..10_000 {
        term = -l * &term;
        let t = term.amax();
        sum += &term;
        if t <= 1e-18 * sum.amax().max(1e-300) || t == 0.0 {
            break;
        }
    }
    sum
}

impl GraphOperator {
    /// `Phi^-1 - I` for `Phi = I + L pi^+`; requires `||L|| < 1`.
    pub fn neumann_inverse(&self) -> Result<Operator> {
        if self.norm_value >= 1.0 {
            return Err(Error::SeriesDivergence(self.norm_value));
        }
        Ok(neumann_series(&self.extended()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(angle: f64, norm: OperatorNorm) -> Subspace {
        Subspace::new(Operator::from_column_slice(2, 1, &[angle.cos(), angle.sin()]), norm).unwrap()
    }

    #[test]
    fn self_distances_vanish() {
        for norm in [OperatorNorm::L1, OperatorNorm::L2, OperatorNorm::Linf] {
            let e = line(0.3, norm);
            assert!(deviation(&e, &e).unwrap() < 1e-12);
            assert!(gap(&e, &e).unwrap() < 1e-12);
            assert!(hausdorff_distance(&e, &e).unwrap() < 1e-12);
        }
    }

    #[test]
    fn planar_line_formulas() {
        for theta in [0.1, 0.7, 1.3, PI / 2.0] {
            let e = line(0.0, OperatorNorm::L2);
            let f = line(theta, OperatorNorm::L2);
            assert!((deviation(&e, &f).unwrap() - theta.sin()).abs() < 1e-12);
            let expected = 2.0 * (theta / 2.0).sin();
            assert!((hausdorff_distance(&e, &f).unwrap() - expected).abs() < 1e-12);
        }
        let e = line(0.0, OperatorNorm::L2);
        let f = line(PI / 2.0, OperatorNorm::L2);
        assert!((gap(&e, &f).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mismatches_are_rejected() {
        let e = line(0.0, OperatorNorm::L2);
        assert_eq!(deviation(&e, &line(0.0, OperatorNorm::L1)), Err(Error::NormMismatch));
        let g = Subspace::coordinate_axes(3, &[0], OperatorNorm::L2);
        assert_eq!(deviation(&e, &g), Err(Error::AmbientMismatch(2, 3)));
    }

    #[test]
    fn coordinate_projections() {
        let parts = (0..3).map(|a| Subspace::coordinate_axes(3, &[a], OperatorNorm::L2)).collect();
        let s = DirectSum::new(parts).unwrap();
        for i in 0..3 {
            let p = s.projection(i).unwrap();
            let mut expected = Operator::zeros(3, 3);
            expected[(i, i)] = 1.0;
            assert!((p - expected).amax() < 1e-14);
        }
    }

    #[test]
    fn graph_of_planar_line() {
        let t = 0.37;
        let ex = Subspace::coordinate_axes(2, &[0], OperatorNorm::L2);
        let em = Subspace::coordinate_axes(2, &[1], OperatorNorm::L2);
        let ey = Subspace::new(Operator::from_column_slice(2, 1, &[1.0, t]), OperatorNorm::L2).unwrap();
        let g = graph_operator(&ex, &em, &ey).unwrap();
        assert!((g.matrix[(0, 0)].abs() - t).abs() < 1e-14);
        assert!((g.norm_value - t).abs() < 1e-14);
        assert!(hausdorff_distance(&g.graph(), &ey).unwrap() < 1e-9);
        let same = graph_operator(&ex, &em, &ex).unwrap();
        assert!(same.norm_value < 1e-15);
    }

    #[test]
    fn transversality_failure() {
        let ex = Subspace::coordinate_axes(2, &[0], OperatorNorm::L2);
        let em = Subspace::coordinate_axes(2, &[1], OperatorNorm::L2);
        assert_eq!(graph_operator(&ex, &em, &em).unwrap_err(), Error::TransversalityFailure);
    }

    #[test]
    fn scalar_neumann_series() {
        let l = Operator::from_element(1, 1, 0.5);
        let h = neumann_inverse(&l, OperatorNorm::L2).unwrap();
        assert!((h[(0, 0)] + 1.0 / 3.0).abs() < 1e-14);
        assert_eq!(neumann_inverse(&Operator::zeros(2, 2), OperatorNorm::L2).unwrap(), Operator::zeros(2, 2));
        assert!(matches!(neumann_inverse(&Operator::from_element(1, 1, 1.0), OperatorNorm::L2), Err(Error::SeriesDivergence(_))));
    }

    #[test]
    fn l1_and_linf_lines_in_the_plane() {
        // e1 against the diagonal: closed forms from the polygon geometry
        let e = line(0.0, OperatorNorm::Linf);
        let f = line(PI / 4.0, OperatorNorm::Linf);
        // dist_inf(e1, span(1,1)) = min_t max(|1-t|, |t|) = 1/2
        assert!((deviation(&e, &f).unwrap() - 0.5).abs() < 1e-12);
        let e = line(0.0, OperatorNorm::L1);
        let f = line(PI / 4.0, OperatorNorm::L1);
        // dist_1(e1, span(1,1)) = min_t |1-t| + |t| = 1
        assert!((deviation(&e, &f).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn restricted_norms_match_l2_singular_values() {
        let t = Operator::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0]);
        let e = Subspace::new(Operator::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0]), OperatorNorm::L2).unwrap();
        let s = linalg::singular_values(&(&t * e.orthonormal()));
        assert!((restricted_norm(&t, &e) - s[0]).abs() < 1e-12);
        assert!((restricted_min_stretch(&t, &e) - s[1]).abs() < 1e-12);
    }

    #[test]
    fn restricted_linf_norm_of_full_space_is_row_sum() {
        let t = Operator::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 0.5]);
        let e = Subspace::whole(2, OperatorNorm::Linf);
        assert!((restricted_norm(&t, &e) - 3.5).abs() < 1e-12);
        let e1 = Subspace::whole(2, OperatorNorm::L1);
        assert!((restricted_norm(&t, &e1) - 4.0).abs() < 1e-12);
        let inv = t.clone().try_inverse().unwrap();
        assert!((restricted_min_stretch(&t, &e) - 1.0 / OperatorNorm::Linf.operator(&inv)).abs() < 1e-12);
    }
}
