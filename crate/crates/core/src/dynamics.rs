//! Compact base systems `(X, d, f, mu)`: maps, metrics, orbits and
//! measure-distributed samples.
//!
//! Torus points are kept on the dyadic lattice `2^-52 Z^m`, where integer
//! toral maps and quantized rotations act exactly, so `f^(n+k) = f^n f^k`
//! holds bit for bit even on chaotic orbits. The doubling map and the full
//! shift use the same fixed-point idea and refill the vacated lowest digit
//! from a hash of the state, so orbits do not collapse to zero.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Number of discarded transient steps for Birkhoff sampling.
pub const BIRKHOFF_TRANSIENT: usize = 1000;

const LATTICE_BITS: u32 = 52;
const LATTICE_MASK: u64 = (1u64 << LATTICE_BITS) - 1;
const LATTICE_SCALE: f64 = (1u64 << LATTICE_BITS) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceTag {
    /// The m-torus `R^m / Z^m` (m = 1 is the circle).
    Torus(usize),
    /// Two-sided full shift on `k` symbols.
    Shift(u32),
}

impl SpaceTag {
    pub fn coord_len(&self) -> usize {
        match self {
            SpaceTag::Torus(m) => *m,
            SpaceTag::Shift(_) => 2,
        }
    }
}

impl fmt::Display for SpaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceTag::Torus(m) => write!(f, "T{m}"),
            SpaceTag::Shift(k) => write!(f, "shift{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasePoint {
    pub coords: Vec<f64>,
    pub space: SpaceTag,
}

impl BasePoint {
    pub fn new(coords: Vec<f64>, space: SpaceTag) -> Result<Self> {
        if coords.len() != space.coord_len() {
            return Err(Error::InvalidInput(format!(
                "{} coordinates given for space {space}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !(0.0..1.0).contains(c)) {
            return Err(Error::InvalidInput("coordinates must lie in [0, 1)".into()));
        }
        let coords = match space {
            SpaceTag::Torus(_) => coords.into_iter().map(|c| from_lattice(to_lattice(c))).collect(),
            SpaceTag::Shift(_) => coords,
        };
        Ok(Self { coords, space })
    }
}

impl Serialize for BasePoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords.serialize(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    /// `x -> M x mod 1` for an integer matrix `M`.
    ToralAutomorphism { matrix: Vec<Vec<i64>> },
    /// `x -> x + angle mod 1` (angle in turns).
    CircleRotation { angle: f64 },
    DoublingMap,
    /// Two-sided full shift on `symbols` symbols.
    FullShift { symbols: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseSystem {
    pub kind: MapKind,
    pub lipschitz_forward: f64,
    pub lipschitz_backward: Option<f64>,
    pub invertible: bool,
    space: SpaceTag,
    inverse_matrix: Option<Vec<Vec<i64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    OrbitBirkhoff,
    IidUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledMeasure {
    pub points: Vec<BasePoint>,
    pub seed: u64,
    pub scheme: SamplingScheme,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn wrap_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

fn circle_gap(a: f64, b: f64) -> f64 {
    let t = (a - b).abs().rem_euclid(1.0);
    t.min(1.0 - t)
}

fn integer_matrix_inverse(m: &[Vec<i64>]) -> Option<Vec<Vec<i64>>> {
    let n = m.len();
    let a = nalgebra::DMatrix::from_fn(n, n, |i, j| m[i][j] as f64);
    let det = a.determinant().round();
    if det.abs() != 1.0 {
        return None;
    }
    let inv = a.try_inverse()?;
    Some((0..n).map(|i| (0..n).map(|j| inv[(i, j)].round() as i64).collect()).collect())
}

fn integer_matrix_norm(m: &[Vec<i64>]) -> f64 {
    let n = m.len();
    let a = nalgebra::DMatrix::from_fn(n, n, |i, j| m[i][j] as f64);
    crate::linalg::spectral_norm(&a)
}

/// Fixed-point depth for the full shift: `k^depth <= 2^52`.
fn shift_depth(k: u32) -> u32 {
    (52.0 / (k as f64).log2()).floor() as u32
}

impl BaseSystem {
    pub fn toral_automorphism(matrix: Vec<Vec<i64>>) -> Result<Self> {
        let m = matrix.len();
        if m == 0 || matrix.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidInput("toral map needs a square integer matrix".into()));
        }
        let a = nalgebra::DMatrix::from_fn(m, m, |i, j| matrix[i][j] as f64);
        if a.determinant().round() == 0.0 {
            return Err(Error::InvalidInput("toral map matrix is singular".into()));
        }
        let inverse_matrix = integer_matrix_inverse(&matrix);
        let lipschitz_forward = integer_matrix_norm(&matrix).max(1.0);
        let lipschitz_backward = inverse_matrix.as_ref().map(|inv| integer_matrix_norm(inv).max(1.0));
        Ok(Self {
            invertible: inverse_matrix.is_some(),
            kind: MapKind::ToralAutomorphism { matrix },
            lipschitz_forward,
            lipschitz_backward,
            space: SpaceTag::Torus(m),
            inverse_matrix,
        })
    }

    /// The hyperbolic cat map `[[2,1],[1,1]]`.
    pub fn cat_map() -> Self {
        Self::toral_automorphism(vec![vec![2, 1], vec![1, 1]]).expect("cat map is unimodular")
    }

    pub fn circle_rotation(angle: f64) -> Self {
        Self {
            kind: MapKind::CircleRotation { angle },
            lipschitz_forward: 1.0,
            lipschitz_backward: Some(1.0),
            invertible: true,
            space: SpaceTag::Torus(1),
            inverse_matrix: None,
        }
    }

    pub fn doubling_map() -> Self {
        Self {
            kind: MapKind::DoublingMap,
            lipschitz_forward: 2.0,
            lipschitz_backward: None,
            invertible: false,
            space: SpaceTag::Torus(1),
            inverse_matrix: None,
        }
    }

    pub fn full_shift(symbols: u32) -> Result<Self> {
        if !(2..=64).contains(&symbols) {
            return Err(Error::InvalidInput("full shift needs 2..=64 symbols".into()));
        }
        Ok(Self {
            kind: MapKind::FullShift { symbols },
            lipschitz_forward: symbols as f64,
            lipschitz_backward: Some(symbols as f64),
            invertible: true,
            space: SpaceTag::Shift(symbols),
            inverse_matrix: None,
        })
    }

    pub fn from_kind(kind: MapKind) -> Result<Self> {
        match kind {
            MapKind::ToralAutomorphism { matrix } => Self::toral_automorphism(matrix),
            MapKind::CircleRotation { angle } => Ok(Self::circle_rotation(angle)),
            MapKind::DoublingMap => Ok(Self::doubling_map()),
            MapKind::FullShift { symbols } => Self::full_shift(symbols),
        }
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    pub fn point(&self, coords: Vec<f64>) -> Result<BasePoint> {
        BasePoint::new(coords, self.space)
    }

    fn check_space(&self, x: &BasePoint) -> Result<()> {
        if x.space != self.space {
            return Err(Error::SpaceMismatch(x.space.to_string(), self.space.to_string()));
        }
        Ok(())
    }

    fn step_forward(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            MapKind::ToralAutomorphism { matrix } => apply_integer(matrix, x),
            MapKind::CircleRotation { angle } => {
                vec![from_lattice(to_lattice(x[0]).wrapping_add(to_lattice(wrap_unit(*angle))))]
            }
            MapKind::DoublingMap => vec![doubling_step(x[0])],
            MapKind::FullShift { symbols } => shift_step(*symbols, x, true),
        }
    }

    fn step_backward(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            MapKind::ToralAutomorphism { .. } => {
                apply_integer(self.inverse_matrix.as_ref().expect("invertible"), x)
            }
            MapKind::CircleRotation { angle } => {
                vec![from_lattice(to_lattice(x[0]).wrapping_sub(to_lattice(wrap_unit(*angle))))]
            }
            MapKind::DoublingMap => unreachable!("checked by caller"),
            MapKind::FullShift { symbols } => shift_step(*symbols, x, false),
        }
    }

    /// `f^n(x)`; negative `n` requires an invertible system.
    pub fn evaluate_map(&self, x: &BasePoint, n: i64) -> Result<BasePoint> {
        self.check_space(x)?;
        if n < 0 && !self.invertible {
            return Err(Error::NegativeIterateOfNonInvertible);
        }
        let mut c = x.coords.clone();
        for _ in 0..n.unsigned_abs() {
            c = if n > 0 { self.step_forward(&c) } else { self.step_backward(&c) };
        }
        Ok(BasePoint { coords: c, space: self.space })
    }

    /// Points `f^j(x)` for `j` in `lo..=hi`.
    pub fn orbit_window(&self, x: &BasePoint, lo: i64, hi: i64) -> Result<Vec<BasePoint>> {
        self.check_space(x)?;
        if lo < 0 && !self.invertible {
            return Err(Error::NegativeIterateOfNonInvertible);
        }
        if hi < lo {
            return Ok(Vec::new());
        }
        // negative side is generated backwards from x so that chaotic maps
        // never compose a forward sweep with a backward one
        let mut back = Vec::new();
        let mut c = x.coords.clone();
        for j in (lo..0).rev() {
            c = self.step_backward(&c);
            if j <= hi {
                back.push(c.clone());
            }
        }
        back.reverse();
        let mut out: Vec<BasePoint> =
            back.into_iter().map(|coords| BasePoint { coords, space: self.space }).collect();
        let mut c = x.coords.clone();
        for j in 0..=hi {
            if j >= lo {
                out.push(BasePoint { coords: c.clone(), space: self.space });
            }
            if j < hi {
                c = self.step_forward(&c);
            }
        }
        Ok(out)
    }

    /// `[x, f(x), ..., f^{count-1}(x)]`.
    pub fn orbit_segment(&self, x: &BasePoint, count: usize) -> Result<Vec<BasePoint>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        self.orbit_window(x, 0, count as i64 - 1)
    }

    pub fn metric(&self, x: &BasePoint, y: &BasePoint) -> Result<f64> {
        if x.space != y.space {
            return Err(Error::SpaceMismatch(x.space.to_string(), y.space.to_string()));
        }
        self.check_space(x)?;
        Ok(match self.space {
            SpaceTag::Torus(_) => x
                .coords
                .iter()
                .zip(&y.coords)
                .map(|(a, b)| circle_gap(*a, *b).powi(2))
                .sum::<f64>()
                .sqrt(),
            SpaceTag::Shift(k) => shift_metric(k, &x.coords, &y.coords),
        })
    }

    /// Constants `c_j` with `circle_gap(x_j, y_j) <= c_j d(x, y)`.
    pub fn coordinate_moduli(&self) -> Vec<f64> {
        match self.space {
            SpaceTag::Torus(m) => vec![1.0; m],
            SpaceTag::Shift(k) => vec![1.0, k as f64],
        }
    }

    fn random_point(&self, rng: &mut ChaCha8Rng) -> BasePoint {
        let coords = match self.space {
            SpaceTag::Torus(m) => (0..m).map(|_| from_lattice(rng.gen_range(0..=LATTICE_MASK))).collect(),
            SpaceTag::Shift(k) => {
                let scale = (k as u64).pow(shift_depth(k));
                (0..2).map(|_| rng.gen_range(0..scale) as f64 / scale as f64).collect()
            }
        };
        BasePoint { coords, space: self.space }
    }

    pub fn sample_points(&self, scheme: SamplingScheme, count: usize, seed: u64) -> Result<SampledMeasure> {
        if count == 0 {
            return Err(Error::InvalidInput("sample count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = match scheme {
            SamplingScheme::IidUniform => (0..count).map(|_| self.random_point(&mut rng)).collect(),
            SamplingScheme::OrbitBirkhoff => {
                let x0 = self.random_point(&mut rng);
                let start = self.evaluate_map(&x0, BIRKHOFF_TRANSIENT as i64)?;
                self.orbit_segment(&start, count)?
            }
        };
        Ok(SampledMeasure { points, seed, scheme })
    }

    /// A point at distance close to `r` from `x`, in a random direction.
    pub fn point_near(&self, x: &BasePoint, r: f64, rng: &mut ChaCha8Rng) -> Result<BasePoint> {
        self.check_space(x)?;
        match self.space {
            SpaceTag::Torus(m) => {
                let dir: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                let coords = x.coords.iter().zip(&dir).map(|(c, v)| from_lattice(to_lattice(wrap_unit(c + r * v / len)))).collect();
                Ok(BasePoint { coords, space: self.space })
            }
            SpaceTag::Shift(k) => {
                // change the future digit at index n with k^-n ~ r
                let depth = shift_depth(k);
                let n = ((-r.ln() / (k as f64).ln()).round().max(0.0) as u32).min(depth - 1);
                let scale = (k as u64).pow(depth);
                let mut fut = (x.coords[0] * scale as f64).round() as u64 % scale;
                let place = (k as u64).pow(depth - 1 - n);
                let digit = (fut / place) % k as u64;
                let new_digit = (digit + rng.gen_range(1..k as u64)) % k as u64;
                fut = fut - digit * place + new_digit * place;
                Ok(BasePoint { coords: vec![fut as f64 / scale as f64, x.coords[1]], space: self.space })
            }
        }
    }

    /// Empirical forward Lipschitz certificate: `max(1, max ratio)`.
    pub fn forward_lipschitz_estimate(&self, pairs: &[(BasePoint, BasePoint)]) -> Result<f64> {
        self.lipschitz_ratio(pairs, 1)
    }

    /// `(L_fwd, L_bwd)`; fails on non-invertible systems.
    pub fn lipschitz_estimate(&self, pairs: &[(BasePoint, BasePoint)]) -> Result<(f64, f64)> {
        if !self.invertible {
            return Err(Error::NegativeIterateOfNonInvertible);
        }
        Ok((self.lipschitz_ratio(pairs, 1)?, self.lipschitz_ratio(pairs, -1)?))
    }

    fn lipschitz_ratio(&self, pairs: &[(BasePoint, BasePoint)], n: i64) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("lipschitz estimate needs at least one pair".into()));
        }
        let mut best = 1.0f64;
        for (x, y) in pairs {
            let d = self.metric(x, y)?;
            if d == 0.0 {
                return Err(Error::DegeneratePair);
            }
            let dn = self.metric(&self.evaluate_map(x, n)?, &self.evaluate_map(y, n)?)?;
            best = best.max(dn / d);
        }
        Ok(best)
    }
}

fn to_lattice(c: f64) -> u64 {
    ((c * LATTICE_SCALE).round() as u64) & LATTICE_MASK
}

fn from_lattice(s: u64) -> f64 {
    (s & LATTICE_MASK) as f64 / LATTICE_SCALE
}

fn apply_integer(m: &[Vec<i64>], x: &[f64]) -> Vec<f64> {
    let s: Vec<u64> = x.iter().map(|c| to_lattice(*c)).collect();
    m.iter()
        .map(|row| {
            let acc = row
                .iter()
                .zip(&s)
                .fold(0u64, |acc, (a, b)| acc.wrapping_add((*a as u64).wrapping_mul(*b)));
            from_lattice(acc)
        })
        .collect()
}

fn doubling_step(x: f64) -> f64 {
    let k = to_lattice(x);
    if k == 0 {
        return 0.0;
    }
    let refill = splitmix64(k) & 1;
    from_lattice(((k << 1) & LATTICE_MASK) | refill)
}

fn shift_step(k: u32, x: &[f64], forward: bool) -> Vec<f64> {
    let depth = shift_depth(k);
    let k = k as u64;
    let scale = k.pow(depth);
    let top = k.pow(depth - 1);
    let to_int = |c: f64| ((c * scale as f64).round() as u64).min(scale - 1);
    let (fut, past) = (to_int(x[0]), to_int(x[1]));
    let refill = splitmix64(fut.wrapping_mul(0x1000_0000_01B3) ^ past) % k;
    let (fut, past) = if forward {
        let lead = fut / top;
        ((fut % top) * k + refill, lead * top + past / k)
    } else {
        let lead = past / top;
        (lead * top + fut / k, (past % top) * k + refill)
    };
    vec![fut as f64 / scale as f64, past as f64 / scale as f64]
}

fn shift_metric(k: u32, x: &[f64], y: &[f64]) -> f64 {
    if x == y {
        return 0.0;
    }
    let depth = shift_depth(k);
    let kk = k as u64;
    let scale = kk.pow(depth);
    let to_int = |c: f64| ((c * scale as f64).round() as u64).min(scale - 1);
    let digits = |v: u64| -> Vec<u64> {
        (0..depth).map(|t| (v / kk.pow(depth - 1 - t)) % kk).collect()
    };
    let (fx, fy) = (digits(to_int(x[0])), digits(to_int(y[0])));
    let (px, py) = (digits(to_int(x[1])), digits(to_int(y[1])));
    // index i >= 0 is future digit i, index -(t+1) is past digit t
    let fut_first = fx.iter().zip(&fy).position(|(a, b)| a != b).map(|t| t as u32);
    let past_first = px.iter().zip(&py).position(|(a, b)| a != b).map(|t| t as u32 + 1);
    let n = match (fut_first, past_first) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => depth + 1,
    };
    (k as f64).powi(-(n as i32))
}
