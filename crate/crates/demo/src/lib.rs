//! WebAssembly entry points for the static demo page in `www/`.
//!
//! Every exported function returns a JSON string; errors become JS
//! exceptions carrying the message.

use oseledets_core::cocycle::{CocycleGenerator, FieldKind, ScalarField};
use oseledets_core::dynamics::{BaseSystem, SamplingScheme};
use oseledets_core::geometry::hausdorff_distance;
use oseledets_core::holder::{check_lemma_l5, fit_log_log, synthesize_l5_instance};
use oseledets_core::linalg::OperatorNorm;
use oseledets_core::oseledets::{coboundary_oracle, lyapunov_spectrum, oseledets_splitting, DEFAULT_GROUPING_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

type Res<T> = Result<T, String>;

fn err(e: impl ToString) -> String {
    e.to_string()
}

/// Coboundary cocycle over the cat map with the given diagonal and
/// angle amplitude.
pub fn cat_coboundary(diagonal: &[f64], amplitude: f64, exponent: f64) -> Res<(BaseSystem, CocycleGenerator)> {
    if diagonal.len() < 2 {
        return Err("need at least two diagonal entries".into());
    }
    let sys = BaseSystem::cat_map();
    let field = FieldKind::Coboundary {
        angle: ScalarField { offset: 0.3, amplitude, weights: vec![1.0, 0.6], exponent },
        shear: ScalarField { offset: 0.2, amplitude: 0.2, weights: vec![0.4, 1.0], exponent: 0.8 },
        diagonal: diagonal.to_vec(),
    };
    let gen = CocycleGenerator::new(field, OperatorNorm::L2, &sys).map_err(err)?;
    Ok((sys, gen))
}

#[derive(Debug, Serialize)]
pub struct SpectrumView {
    pub exponents: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub raw: Vec<f64>,
    /// `ln |d_j|` sorted decreasingly.
    pub expected: Vec<f64>,
    pub horizon: usize,
}

pub fn spectrum_view(diagonal: &[f64], amplitude: f64, horizon: usize) -> Res<SpectrumView> {
    let (sys, gen) = cat_coboundary(diagonal, amplitude, 0.6)?;
    let x = sys.point(vec![0.2, 0.7]).map_err(err)?;
    let s = lyapunov_spectrum(&gen, &sys, &x, horizon, DEFAULT_GROUPING_TOL).map_err(err)?;
    let mut expected: Vec<f64> = diagonal.iter().map(|d| d.abs().ln()).collect();
    expected.sort_by(|a, b| b.total_cmp(a));
    Ok(SpectrumView { exponents: s.exponents, multiplicities: s.multiplicities, raw: s.raw, expected, horizon })
}

#[derive(Debug, Serialize)]
pub struct RegularityView {
    /// `(log10 d(x, y), log10 dist(E_1(x), E_1(y)))` per pair.
    pub points: Vec<(f64, f64)>,
    pub slope: Option<f64>,
    pub generator_exponent: f64,
    /// Largest distance of the computed `E_1` from the closed form.
    pub oracle_error: f64,
}

/// Distance between top splitting spaces at nearby points, against the
/// base distance.
pub fn regularity_view(amplitude: f64, exponent: f64, pairs: usize, seed: u64) -> Res<RegularityView> {
    if pairs == 0 || pairs > 400 {
        return Err("pairs must lie in 1..=400".into());
    }
    let (sys, gen) = cat_coboundary(&[4.4817, 1.0, 0.2231], amplitude, exponent)?;
    let x0 = sys.point(vec![0.2, 0.7]).map_err(err)?;
    let spec = lyapunov_spectrum(&gen, &sys, &x0, 2048, DEFAULT_GROUPING_TOL).map_err(err)?;
    let xs = sys.sample_points(SamplingScheme::IidUniform, pairs, seed).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (mut raw, mut oracle_error) = (Vec::with_capacity(pairs), 0.0f64);
    for x in &xs.points {
        let r = 10f64.powf(rng.gen_range(-7.0..-1.5));
        let y = sys.point_near(x, r, &mut rng).map_err(err)?;
        let d = sys.metric(x, &y).map_err(err)?;
        let sx = oseledets_splitting(&gen, &sys, x, 512, &spec).map_err(err)?;
        let sy = oseledets_splitting(&gen, &sys, &y, 512, &spec).map_err(err)?;
        let (o, _) = coboundary_oracle(&gen, x).map_err(err)?;
        oracle_error = oracle_error.max(hausdorff_distance(sx.level(1), o.level(1)).map_err(err)?);
        let dist = hausdorff_distance(sx.level(1), sy.level(1)).map_err(err)?;
        if d > 0.0 && dist > 0.0 {
            raw.push((d, dist));
        }
    }
    let slope = fit_log_log(&raw).ok().map(|f| f.fitted_exponent);
    let points = raw.iter().map(|(d, e)| (d.log10(), e.log10())).collect();
    Ok(RegularityView { points, slope, generator_exponent: gen.holder_exponent, oracle_error })
}

#[derive(Debug, Serialize)]
pub struct LemmaRow {
    pub dim: usize,
    pub n_star: usize,
    pub delta: f64,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct LemmaView {
    pub rows: Vec<LemmaRow>,
    pub attempts: usize,
    pub worst_ratio: f64,
}

/// Random two-sequence instances in dimension `dim`, measured distance of
/// the slow spaces against the bound.
pub fn lemma_view(dim: usize, count: usize, seed: u64) -> Res<LemmaView> {
    if !(2..=8).contains(&dim) || count == 0 || count > 500 {
        return Err("need 2 <= dim <= 8 and 1 <= count <= 500".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rows, mut attempts, mut worst_ratio) = (Vec::new(), 0, 0.0f64);
    while rows.len() < count {
        if attempts >= 20 * count {
            return Err(format!("only {} of {count} instances certified", rows.len()));
        }
        attempts += 1;
        let alpha1 = rng.gen_range(1.2..3.0);
        let alpha2 = rng.gen_range(0.1..0.9);
        let ell = rng.gen_range(1.0..3.0);
        let pert = 10f64.powf(rng.gen_range(-9.0..-3.0));
        let Ok(inst) = synthesize_l5_instance(rng.gen(), dim, alpha1, alpha2, ell, pert) else {
            continue;
        };
        let rep = check_lemma_l5(&inst).map_err(err)?;
        if rep.bound > 0.0 {
            worst_ratio = worst_ratio.max(rep.measured / rep.bound);
        }
        rows.push(LemmaRow { dim, n_star: inst.n_star, delta: inst.delta, measured: rep.measured, bound: rep.bound, pass: rep.pass });
    }
    Ok(LemmaView { rows, attempts, worst_ratio })
}

fn to_js<T: Serialize>(r: Res<T>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(err)).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn spectrum(diagonal: Vec<f64>, amplitude: f64, horizon: usize) -> Result<String, JsValue> {
    to_js(spectrum_view(&diagonal, amplitude, horizon))
}

#[wasm_bindgen]
pub fn regularity(amplitude: f64, exponent: f64, pairs: usize, seed: u32) -> Result<String, JsValue> {
    to_js(regularity_view(amplitude, exponent, pairs, seed as u64))
}

#[wasm_bindgen]
pub fn lemma(dim: usize, count: usize, seed: u32) -> Result<String, JsValue> {
    to_js(lemma_view(dim, count, seed as u64))
}
