//! One driver per subcommand. Per-point and per-pair work is pure and runs
//! on the current rayon pool; results are kept in index order.

use std::collections::BTreeMap;

use oseledets_core::cocycle::{two_sided_holder_constant, CocycleGenerator};
use oseledets_core::dynamics::{BasePoint, BaseSystem};
use oseledets_core::geometry::{hausdorff_distance, Subspace};
use oseledets_core::holder::*;
use oseledets_core::lyapunov_norms::*;
use oseledets_core::oseledets::*;
use oseledets_core::Error as CoreError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, LabResult};
use crate::output::{num, opt, RunDir};
use crate::scenario::Scenario;

/// Maps `f` over `items` in parallel; the first error by index wins.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(usize, &T) -> LabResult<R> + Sync) -> LabResult<Vec<R>> {
    let out: Vec<LabResult<R>> = items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    out.into_iter().collect()
}

/// Independent stream for task `k`.
fn task_rng(seed: u64, stream: u64, k: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.set_word_pos(k as u128 * 1024);
    r
}

fn coords(x: &BasePoint) -> String {
    x.coords.iter().map(|c| num(*c)).collect::<Vec<_>>().join(";")
}

fn basis_cell(s: &Subspace) -> String {
    s.orthonormal().iter().map(|v| num(*v)).collect::<Vec<_>>().join(";")
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

struct Setup {
    system: BaseSystem,
    gen: CocycleGenerator,
    points: Vec<BasePoint>,
}

fn setup(s: &Scenario) -> LabResult<Setup> {
    let system = s.system()?;
    let gen = s.generator(&system)?;
    let points = system.sample_points(s.sampling.scheme, s.sampling.points, s.seed)?.points;
    Ok(Setup { system, gen, points })
}

/// Spectrum at the first sample point, shared by the later stages.
fn reference_spectrum(s: &Scenario, st: &Setup) -> LabResult<LyapunovSpectrum> {
    Ok(lyapunov_spectrum(&st.gen, &st.system, &st.points[0], s.spectrum.horizon, s.spectrum.grouping_tol)?)
}

fn norm_params(s: &Scenario, spec: &LyapunovSpectrum) -> LabResult<LyapunovNormParams> {
    let p = match s.norms.epsilon {
        Some(e) => LyapunovNormParams::new(spec.clone(), e)?,
        None => LyapunovNormParams::with_default_epsilon(spec.clone())?,
    };
    Ok(match s.norms.truncation {
        Some(n) => p.with_truncation(n),
        None => p,
    })
}

fn regularity_config(s: &Scenario) -> RegularityConfig {
    RegularityConfig {
        level: 0,
        horizon: s.regular.horizon,
        splitting_horizon: s.regular.splitting_horizon,
        probe_count: s.regular.probe_count,
        with_d_eps: s.regular.with_d_eps,
    }
}

fn regular_target(s: &Scenario) -> RegularTarget {
    match (s.regular.gamma, s.regular.ell) {
        (Some(gamma), _) => RegularTarget::Gamma { gamma, cap: s.regular.cap },
        (None, Some(ell)) => RegularTarget::Ell(ell),
        _ => unreachable!("validated"),
    }
}

#[derive(Serialize)]
struct SpectrumSummary {
    points: usize,
    horizon: usize,
    pooled: Vec<f64>,
    dispersion: Vec<f64>,
    reference: LyapunovSpectrum,
}

pub fn run_spectrum(s: &Scenario, out: &mut RunDir) -> LabResult<()> {
    let st = setup(s)?;
    let specs = out.stage("spectrum", || {
        par_map(&st.points, |_, x| Ok(lyapunov_spectrum(&st.gen, &st.system, x, s.spectrum.horizon, s.spectrum.grouping_tol)?))
    })?;
    let d = st.gen.dimension;
    let n = specs.len() as f64;
    let pooled: Vec<f64> = (0..d).map(|j| specs.iter().map(|sp| sp.raw[j]).sum::<f64>() / n).collect();
    let dispersion: Vec<f64> = (0..d)
        .map(|j| (specs.iter().map(|sp| (sp.raw[j] - pooled[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let mut cols = vec!["index".to_string(), "coords".into(), "levels".into(), "multiplicities".into()];
    cols.extend((1..=d).map(|j| format!("raw_{j}")));
    cols.extend((1..=d).map(|j| format!("grouped_{j}")));
    let rows: Vec<Vec<String>> = st
        .points
        .iter()
        .zip(&specs)
        .enumerate()
        .map(|(i, (x, sp))| {
            let mut r = vec![
                i.to_string(),
                coords(x),
                sp.levels().to_string(),
                sp.multiplicities.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(";"),
            ];
            r.extend(sp.raw.iter().map(|v| num(*v)));
            r.extend((0..d).map(|j| sp.exponents.get(j).map(|v| num(*v)).unwrap_or_default()));
            r
        })
        .collect();
    out.csv("spectrum_points.csv", &cols, &rows)?;
    let dat: Vec<(f64, f64)> = pooled.iter().enumerate().map(|(j, v)| ((j + 1) as f64, *v)).collect();
    out.dat("spectrum.dat", "direction pooled_exponent", &dat)?;
    out.json("spectrum.json", &SpectrumSummary { points: specs.len(), horizon: s.spectrum.horizon, pooled, dispersion, reference: specs[0].clone() })?;
    Ok(())
}

#[derive(Serialize)]
struct SplittingSummary {
    kind: &'static str,
    levels: usize,
    points: usize,
    max_equivariance: f64,
    max_oracle_distance: Option<f64>,
    oracle_tol: f64,
    pass: bool,
}

pub fn run_splitting(s: &Scenario, out: &mut RunDir) -> LabResult<()> {
    let st = setup(s)?;
    let spec = out.stage("spectrum", || reference_spectrum(s, &st))?;
    let two_sided = st.gen.invertible && st.system.invertible;
    let h = s.splitting.horizon;
    let k = spec.levels();
    let has_oracle = coboundary_oracle(&st.gen, &st.points[0]).is_ok();
    // (equivariance, oracle distance, condition or ell, bases)
    let rows = out.stage("subspaces", || {
        par_map(&st.points, |_, x| {
            let fx = st.system.evaluate_map(x, 1)?;
            let a = st.gen.evaluate(&st.system, x)?;
            let oracle = if has_oracle { Some(coboundary_oracle(&st.gen, x)?) } else { None };
            if two_sided {
                let here = oseledets_splitting(&st.gen, &st.system, x, h, &spec)?;
                let there = oseledets_splitting(&st.gen, &st.system, &fx, h, &spec)?;
                let eq = splitting_equivariance(&a, &here, &there)?;
                let dist = match &oracle {
                    Some((o, _)) => Some((1..=k).map(|i| hausdorff_distance(here.level(i), o.level(i))).try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))?),
                    None => None,
                };
                let bases: Vec<String> = here.parts.parts.iter().map(basis_cell).collect();
                Ok((eq, dist, here.parts.condition, bases))
            } else {
                let here = choose_complements(filtration(&st.gen, &st.system, x, h, &spec)?)?;
                let there = filtration(&st.gen, &st.system, &fx, h, &spec)?;
                let eq = filtration_equivariance(&a, &here, &there)?;
                let dist = match &oracle {
                    Some((_, o)) => Some((2..=k).map(|i| hausdorff_distance(here.space(i), o.space(i))).try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))?),
                    None => None,
                };
                let bases: Vec<String> = here.spaces.iter().map(basis_cell).collect();
                Ok((eq, dist, operational_ell(std::slice::from_ref(&here)), bases))
            }
        })
    })?;
    let cols = header(&["index", "coords", "equivariance", "oracle_distance", if two_sided { "condition" } else { "ell" }]);
    let table: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, (eq, dist, c, _))| vec![i.to_string(), coords(&st.points[i]), num(*eq), opt(*dist), num(*c)])
        .collect();
    out.csv("splitting.csv", &cols, &table)?;
    let bases: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .flat_map(|(i, (_, _, _, b))| b.iter().enumerate().map(move |(p, cell)| vec![i.to_string(), (p + 1).to_string(), cell.clone()]))
        .collect();
    out.csv("bases.csv", &header(&["index", "part", "orthonormal_column_major"]), &bases)?;
    let dat: Vec<(f64, f64)> = rows.iter().enumerate().map(|(i, r)| (i as f64, r.1.unwrap_or(r.0))).collect();
    out.dat("splitting.dat", if has_oracle { "index oracle_distance" } else { "index equivariance" }, &dat)?;
    let max_eq = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let max_oracle = has_oracle.then(|| rows.iter().filter_map(|r| r.1).fold(0.0, f64::max));
    let pass = max_oracle.is_none_or(|m| m <= s.splitting.oracle_tol);
    out.json(
        "splitting.json",
        &SplittingSummary {
            kind: if two_sided { "splitting" } else { "filtration" },
            levels: k,
            points: rows.len(),
            max_equivariance: max_eq,
            max_oracle_distance: max_oracle,
            oracle_tol: s.splitting.oracle_tol,
            pass,
        },
    )?;
    if !pass {
        return Err(LabError::Certificate(format!("oracle distance {:e} above {:e}", max_oracle.unwrap(), s.splitting.oracle_tol)));
    }
    Ok(())
}

struct RegularStage {
    spec: LyapunovSpectrum,
    params: LyapunovNormParams,
    records: Vec<RegularityRecord>,
    set: RegularSet,
}

fn regular_stage(s: &Scenario, st: &Setup, out: &mut RunDir) -> LabResult<RegularStage> {
    let spec = out.stage("spectrum", || reference_spectrum(s, st))?;
    let params = norm_params(s, &spec)?;
    let cfg = regularity_config(s);
    let records = out.stage("regularity", || {
        par_map(&st.points, |i, x| Ok(regularity_record(&st.gen, &st.system, x, i, &params, &cfg)?))
    })?;
    let set = build_regular_set(&records, regular_target(s))?;
    Ok(RegularStage { spec, params, records, set })
}

#[derive(Serialize)]
struct RegularSummary<'a> {
    epsilon: f64,
    truncation: usize,
    spectrum: &'a LyapunovSpectrum,
    set: &'a RegularSet,
    /// `(ell, fraction)` at every integer level where membership changes.
    nesting: Vec<(f64, f64)>,
}

pub fn run_regular_set(s: &Scenario, out: &mut RunDir) -> LabResult<()> {
    let st = setup(s)?;
    let rs = regular_stage(s, &st, out)?;
    let cols = header(&["index", "coords", "c", "k", "ell", "d_eps", "d_probes", "horizon", "member"]);
    let rows: Vec<Vec<String>> = rs
        .records
        .iter()
        .map(|r| {
            vec![
                r.index.to_string(),
                coords(&st.points[r.index]),
                num(r.c_val),
                num(r.k_val),
                num(r.ell()),
                num(r.d_eps),
                r.d_probes.to_string(),
                r.horizon.to_string(),
                rs.set.contains(r.index).to_string(),
            ]
        })
        .collect();
    out.csv("regularity.csv", &cols, &rows)?;
    let mut levels: Vec<f64> = rs.records.iter().map(|r| r.ell().ceil()).filter(|l| l.is_finite()).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let n = rs.records.len() as f64;
    let nesting: Vec<(f64, f64)> = levels
        .iter()
        .map(|&l| (l, rs.records.iter().filter(|r| r.ell() <= l).count() as f64 / n))
        .collect();
    out.dat("regular_set.dat", "ell fraction", &nesting)?;
    out.json(
        "regular_set.json",
        &RegularSummary { epsilon: rs.params.epsilon, truncation: rs.params.truncation, spectrum: &rs.spec, set: &rs.set, nesting },
    )?;
    Ok(())
}

fn terms_cell(r: &HolderReport) -> String {
    r.terms
        .iter()
        .map(|t| format!("{}:{}:{}:{}", t.name, num(t.measured), num(t.bound), t.pass))
        .collect::<Vec<_>>()
        .join(";")
}

fn report_row(pair: usize, bin: usize, x: &BasePoint, y: &BasePoint, r: &HolderReport) -> Vec<String> {
    vec![
        pair.to_string(),
        bin.to_string(),
        coords(x),
        coords(y),
        num(r.distance),
        serde_json::to_value(r.kind).unwrap().as_str().unwrap().to_string(),
        r.level.to_string(),
        num(r.measured),
        num(r.resolution),
        num(r.bound),
        num(r.exponent),
        r.pass.to_string(),
        r.route.clone(),
        opt(r.graph_norm),
        r.bracket_n.map(|n| n.to_string()).unwrap_or_default(),
        terms_cell(r),
        "checked".into(),
    ]
}

fn rejected_row(pair: usize, bin: usize, x: &BasePoint, y: &BasePoint, d: f64, kind: &str, level: usize, why: &str) -> Vec<String> {
    let mut r = vec![pair.to_string(), bin.to_string(), coords(x), coords(y), num(d), kind.into(), level.to_string()];
    r.extend(std::iter::repeat_n(String::new(), 9));
    r.push(why.into());
    r
}

const REPORT_COLS: [&str; 17] = [
    "pair", "bin", "x", "y", "distance", "check", "level", "measured", "resolution", "bound", "exponent", "pass", "route",
    "graph_norm", "bracket_n", "terms", "status",
];

/// `Ok(None)` for the pair-level rejections.
fn soft<T>(r: Result<T, CoreError>) -> LabResult<Result<T, String>> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(e @ (CoreError::PairTooFar { .. } | CoreError::DegeneratePair | CoreError::PairOutsideRegularSet)) => Ok(Err(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct LevelSummary {
    level: usize,
    constants: Option<HolderConstants>,
    checked: usize,
    passed: usize,
    rejected: usize,
    threshold: f64,
    exponent: f64,
    fit: Option<HolderFit>,
    /// Pairs left out of the fit because both subspaces coincide up to rounding.
    zero_distance: usize,
    fit_pass: bool,
}

#[derive(Serialize)]
struct VerifySummary {
    epsilon: f64,
    ell: f64,
    a: f64,
    nu: f64,
    pairs: usize,
    outside_regular_set: usize,
    levels: Vec<LevelSummary>,
    /// Pass counts by check kind.
    checks: BTreeMap<String, (usize, usize)>,
    pass: bool,
}

pub fn run_verify(s: &Scenario, out: &mut RunDir) -> LabResult<()> {
    let st = setup(s)?;
    if !(st.gen.invertible && st.system.invertible) {
        return Err(CoreError::NegativeIterateOfNonInvertible.into());
    }
    let rs = regular_stage(s, &st, out)?;
    let k = rs.spec.levels();
    let levels: Vec<usize> = if s.verify.levels.is_empty() { (1..=k).collect() } else { s.verify.levels.clone() };
    if levels.iter().any(|&i| i == 0 || i > k) {
        return Err(LabError::Config(format!("verify.levels must lie in 1..={k}")));
    }
    if rs.set.members.is_empty() {
        return Err(LabError::Certificate("regular set is empty".into()));
    }
    let a = two_sided_holder_constant(&st.gen, &st.system);
    let ctx = HolderContext {
        gen: &st.gen,
        system: &st.system,
        spectrum: &rs.spec,
        epsilon: rs.params.epsilon,
        ell: rs.set.ell,
        a,
        nu: st.gen.holder_exponent,
        sphere_step: s.verify.sphere_step,
    };
    let edges = &s.verify.bin_edges;
    let per = s.verify.pairs_per_bin;
    let tasks: Vec<(usize, usize)> = (0..edges.len() - 1).flat_map(|b| (0..per).map(move |_| b)).enumerate().collect();
    let cfg = regularity_config(s);
    let h = s.regular.splitting_horizon;
    let results = out.stage("pairs", || {
        par_map(&tasks, |_, &(p, bin)| {
            let x = &st.points[rs.set.members[p % rs.set.members.len()]];
            let mut rng = task_rng(s.seed, 1, p);
            let r = 10f64.powf(rng.gen_range(edges[bin]..edges[bin + 1]));
            let y = st.system.point_near(x, r, &mut rng)?;
            let d = st.system.metric(x, &y)?;
            let ry = regularity_record(&st.gen, &st.system, &y, 0, &rs.params, &cfg)?;
            let mut rows = Vec::new();
            let mut reports = Vec::new();
            if ry.ell() > rs.set.ell {
                rows.push(rejected_row(p, bin, x, &y, d, "", 0, "outside_regular_set"));
                return Ok((rows, reports, true));
            }
            let pp = |z: &BasePoint| -> LabResult<PairPoint> {
                Ok(PairPoint { point: z.clone(), splitting: Some(oseledets_splitting(&st.gen, &st.system, z, h, &rs.spec)?), filtration: None, regular: true })
            };
            let (px, py) = (pp(x)?, pp(&y)?);
            for &i in &levels {
                let mut checks: Vec<(&str, LabResult<Result<HolderReport, String>>)> = vec![("main", soft(verify_main(&ctx, &px, &py, i)))];
                if i < k {
                    checks.push(("minus", soft(verify_minus(&ctx, &px, &py, i))));
                    checks.push(("plus", soft(verify_plus(&ctx, &px, &py, i))));
                    checks.push(("graph", soft(verify_graph_bounds(&ctx, &px, &py, i))));
                }
                for (name, c) in checks {
                    match c? {
                        Ok(rep) => {
                            rows.push(report_row(p, bin, x, &y, &rep));
                            reports.push((name, rep));
                        }
                        Err(why) => rows.push(rejected_row(p, bin, x, &y, d, name, i, &why)),
                    }
                }
            }
            Ok((rows, reports, false))
        })
    })?;
    let rows: Vec<Vec<String>> = results.iter().flat_map(|r| r.0.clone()).collect();
    out.csv("pairs.csv", &header(&REPORT_COLS), &rows)?;
    let outside = results.iter().filter(|r| r.2).count();
    let mut checks: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (name, rep) in results.iter().flat_map(|r| r.1.iter()) {
        let e = checks.entry(name.to_string()).or_default();
        e.0 += 1;
        e.1 += rep.pass as usize;
    }
    let mut summaries = Vec::new();
    for &i in &levels {
        let mains: Vec<HolderReport> =
            results.iter().flat_map(|r| r.1.iter()).filter(|(n, r)| *n == "main" && r.level == i).map(|(_, r)| r.clone()).collect();
        let rejected = rows.iter().filter(|r| r[5] == "main" && r[6] == i.to_string() && r[16] != "checked").count();
        let constants = theoretical_constants(i, &rs.spec, ctx.epsilon, ctx.ell, a, ctx.nu).ok();
        let exponent = mains.first().map(|r| r.exponent).unwrap_or(f64::NAN);
        let fit = match fit_holder_exponent(&mains) {
            Ok(f) => Some(f),
            Err(CoreError::DegenerateDesign(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let zero_distance = mains.iter().filter(|r| r.measured <= ROUNDOFF).count();
        let fit_pass = fit.is_none_or(|f| !(f.fitted_exponent < exponent));
        let mut dat: Vec<(f64, f64)> = mains.iter().map(|r| (r.distance, r.measured)).collect();
        dat.sort_by(|a, b| a.0.total_cmp(&b.0));
        out.dat(&format!("verify_level{i}.dat"), "distance subspace_distance", &dat)?;
        summaries.push(LevelSummary {
            level: i,
            constants,
            checked: mains.len(),
            passed: mains.iter().filter(|r| r.pass).count(),
            rejected,
            threshold: passing_threshold(&mains),
            exponent,
            fit,
            zero_distance,
            fit_pass,
        });
    }
    let pass = checks.values().all(|(n, p)| n == p) && summaries.iter().all(|l| l.fit_pass);
    let summary = VerifySummary {
        epsilon: ctx.epsilon,
        ell: ctx.ell,
        a,
        nu: ctx.nu,
        pairs: tasks.len(),
        outside_regular_set: outside,
        levels: summaries,
        checks,
        pass,
    };
    out.json("summary.json", &summary)?;
    if !pass {
        return Err(LabError::Certificate("some pair violates a bound or a fitted exponent is below its floor".into()));
    }
    Ok(())
}

struct FiltrationPoint {
    filtration: Filtration,
    certs: Vec<FiltrationCertificate>,
}

fn filtration_point(s: &Scenario, gen: &CocycleGenerator, system: &BaseSystem, z: &BasePoint, spec: &LyapunovSpectrum) -> LabResult<FiltrationPoint> {
    let f = &s.filtration;
    let cache = SweepCache::build(gen, system, z, 0, f.horizon as i64, f.cache_horizon, spec)?;
    let certs = (2..=spec.levels() + 1)
        .map(|i| filtration_certificate(&cache, spec, 0, i, norm_epsilon(s, spec), f.horizon))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FiltrationPoint { filtration: choose_complements(cache.filtration(0)?)?, certs })
}

fn norm_epsilon(s: &Scenario, spec: &LyapunovSpectrum) -> f64 {
    s.norms.epsilon.unwrap_or(spec.min_gap() / 200.0)
}

#[derive(Serialize)]
struct FiltrationSummary {
    epsilon: f64,
    ell: f64,
    a: f64,
    nu: f64,
    n0: usize,
    pairs: usize,
    uncertified: usize,
    checked: usize,
    passed: usize,
    rejected: usize,
    fits: Vec<(usize, Option<HolderFit>, f64)>,
    max_sum_residual: f64,
    max_recursion_residual: f64,
    pass: bool,
}

pub const BLOCK_SUM_TOL: f64 = 1e-10;
pub const BLOCK_RECURSION_TOL: f64 = 1e-12;

pub fn run_filtration(s: &Scenario, out: &mut RunDir) -> LabResult<()> {
    let st = setup(s)?;
    let gen = st.gen.forward_only();
    let spec = out.stage("spectrum", || reference_spectrum(s, &st))?;
    let eps = norm_epsilon(s, &spec);
    let k = spec.levels();
    let f = &s.filtration;
    let blocks = out.stage("blocks", || -> LabResult<Vec<BlockDecomposition>> {
        let cache = SweepCache::build(&gen, &st.system, &st.points[0], 0, f.block_n.max(1) as i64, f.cache_horizon, &spec)?;
        let tasks: Vec<(usize, usize)> = (2..=k + 1).flat_map(|i| (1..=f.block_n).map(move |n| (i, n))).collect();
        par_map(&tasks, |_, &(i, n)| Ok(block_cocycle_cached(&cache, i, n)?))
    })?;
    let block_rows: Vec<Vec<String>> = blocks
        .iter()
        .map(|b| {
            vec![
                b.level.to_string(),
                b.n.to_string(),
                num(b.generator_residual),
                num(b.sum_residual),
                num(b.recursion_residual),
                num(b.invariance_defect),
                num(b.b_min_singular),
            ]
        })
        .collect();
    out.csv(
        "blocks.csv",
        &header(&["level", "n", "generator_residual", "sum_residual", "recursion_residual", "invariance_defect", "b_min_singular"]),
        &block_rows,
    )?;
    let max_sum = blocks.iter().map(|b| b.sum_residual).fold(0.0, f64::max);
    let max_rec = blocks.iter().filter(|b| b.n <= f.recursion_n).map(|b| b.recursion_residual).fold(0.0, f64::max);

    let idx: Vec<usize> = (0..f.pairs).collect();
    let data = out.stage("certificates", || {
        par_map(&idx, |_, &p| {
            let x = &st.points[p % st.points.len()];
            let mut rng = task_rng(s.seed, 2, p);
            let r = 10f64.powf(rng.gen_range(f.log10_distance.0..f.log10_distance.1));
            let y = st.system.point_near(x, r, &mut rng)?;
            let fx = filtration_point(s, &gen, &st.system, x, &spec)?;
            let fy = filtration_point(s, &gen, &st.system, &y, &spec)?;
            Ok((x.clone(), y, fx, fy))
        })
    })?;
    let certified = |d: &(BasePoint, BasePoint, FiltrationPoint, FiltrationPoint)| d.2.certs.iter().chain(&d.3.certs).all(|c| c.n_cert.is_some());
    let filts: Vec<Filtration> = data.iter().filter(|d| certified(d)).flat_map(|d| [d.2.filtration.clone(), d.3.filtration.clone()]).collect();
    let ell = operational_ell(&filts);
    let n0 = data.iter().filter(|d| certified(d)).flat_map(|d| d.2.certs.iter().chain(&d.3.certs)).filter_map(|c| c.n_cert).max().unwrap_or(0);
    let a = two_sided_holder_constant(&gen, &st.system);
    let ctx = HolderContext { gen: &gen, system: &st.system, spectrum: &spec, epsilon: eps, ell, a, nu: gen.holder_exponent, sphere_step: f.sphere_step };
    let mut rows = Vec::new();
    let mut reports: Vec<HolderReport> = Vec::new();
    let mut uncertified = 0;
    let mut rejected = 0;
    let checked = out.stage("pairs", || {
        par_map(&data, |p, d| {
            if !certified(d) {
                return Ok(None);
            }
            let px = PairPoint { point: d.0.clone(), splitting: None, filtration: Some(d.2.filtration.clone()), regular: true };
            let py = PairPoint { point: d.1.clone(), splitting: None, filtration: Some(d.3.filtration.clone()), regular: true };
            let mut out = Vec::new();
            for i in 2..=k + 1 {
                out.push((p, i, soft(verify_filtration_holder(&ctx, &px, &py, i, n0))?));
            }
            Ok(Some(out))
        })
    })?;
    for (d, c) in data.iter().zip(checked) {
        let Some(list) = c else {
            uncertified += 1;
            let dist = st.system.metric(&d.0, &d.1)?;
            rows.push(rejected_row(0, 0, &d.0, &d.1, dist, "filtration", 0, "uncertified"));
            continue;
        };
        for (p, i, r) in list {
            match r {
                Ok(rep) => {
                    rows.push(report_row(p, 0, &d.0, &d.1, &rep));
                    reports.push(rep);
                }
                Err(why) => {
                    rejected += 1;
                    rows.push(rejected_row(p, 0, &d.0, &d.1, st.system.metric(&d.0, &d.1)?, "filtration", i, &why));
                }
            }
        }
    }
    out.csv("pairs.csv", &header(&REPORT_COLS), &rows)?;
    let cert_rows: Vec<Vec<String>> = data
        .iter()
        .enumerate()
        .flat_map(|(p, d)| {
            [(&d.0, &d.2, "x"), (&d.1, &d.3, "y")].into_iter().flat_map(move |(z, fp, role)| {
                fp.certs.iter().map(move |c| {
                    vec![
                        p.to_string(),
                        role.to_string(),
                        coords(z),
                        c.level.to_string(),
                        c.n_cert.map(|n| n.to_string()).unwrap_or_default(),
                        num(c.projection),
                        num(c.slow_excess),
                        num(c.fast_deficit),
                        c.horizon.to_string(),
                    ]
                })
            })
        })
        .collect();
    out.csv(
        "certificates.csv",
        &header(&["pair", "role", "coords", "level", "n_cert", "projection", "slow_excess", "fast_deficit", "horizon"]),
        &cert_rows,
    )?;
    let mut fits = Vec::new();
    for i in 2..=k + 1 {
        let lvl: Vec<HolderReport> = reports.iter().filter(|r| r.level == i && r.route != "trivial space").cloned().collect();
        if lvl.is_empty() {
            continue;
        }
        let fit = match fit_holder_exponent(&lvl) {
            Ok(f) => Some(f),
            Err(CoreError::DegenerateDesign(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let mut dat: Vec<(f64, f64)> = lvl.iter().map(|r| (r.distance, r.measured)).collect();
        dat.sort_by(|a, b| a.0.total_cmp(&b.0));
        out.dat(&format!("filtration_level{i}.dat"), "distance subspace_distance", &dat)?;
        fits.push((i, fit, lvl[0].exponent));
    }
    let passed = reports.iter().filter(|r| r.pass).count();
    let pass = passed == reports.len() && max_sum <= BLOCK_SUM_TOL && max_rec <= BLOCK_RECURSION_TOL;
    out.json(
        "summary.json",
        &FiltrationSummary {
            epsilon: eps,
            ell,
            a,
            nu: gen.holder_exponent,
            n0,
            pairs: data.len(),
            uncertified,
            checked: reports.len(),
            passed,
            rejected,
            fits,
            max_sum_residual: max_sum,
            max_recursion_residual: max_rec,
            pass,
        },
    )?;
    if !pass {
        return Err(LabError::Certificate("filtration bound or block identity failed".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct LemmaSummary {
    certified: usize,
    attempts: usize,
    synthesis_failures: usize,
    per_dim: BTreeMap<usize, usize>,
    passed: usize,
    cone_passed: usize,
    worst_ratio: f64,
    pass: bool,
}

pub fn run_lemma_lab(s: &Scenario, out: &mut RunDir) -> LabResult<()> {
    let l = &s.lemma;
    let attempt = |t: usize| -> LabResult<Option<(usize, f64, LemmaL5Instance, LemmaL5Report)>> {
        let mut rng = task_rng(s.seed, 3, t);
        let dim = l.dims[t % l.dims.len()];
        let a1 = rng.gen_range(l.alpha1.0..=l.alpha1.1);
        let a2 = rng.gen_range(l.alpha2.0..=l.alpha2.1);
        let ell = rng.gen_range(l.ell.0..=l.ell.1);
        let pert = 10f64.powf(rng.gen_range(l.log10_perturbation.0..=l.log10_perturbation.1));
        match synthesize_l5_instance(rng.gen(), dim, a1, a2, ell, pert) {
            Ok(inst) => {
                let rep = check_lemma_l5(&inst)?;
                Ok(Some((dim, pert, inst, rep)))
            }
            Err(CoreError::HypothesisSynthesisFailure(_)) => Ok(None),
            Err(e) => Err(e.into()),
        }
    };
    let mut found = Vec::new();
    let mut attempts = 0;
    out.stage("instances", || -> LabResult<()> {
        const CHUNK: usize = 64;
        while found.len() < l.instances && attempts < l.max_attempts {
            let hi = (attempts + CHUNK).min(l.max_attempts);
            let ts: Vec<usize> = (attempts..hi).collect();
            for (t, r) in ts.iter().zip(par_map(&ts, |_, &t| attempt(t))?) {
                if found.len() < l.instances {
                    attempts = t + 1;
                    if let Some(v) = r {
                        found.push((*t, v));
                    }
                }
            }
        }
        Ok(())
    })?;
    let rows: Vec<Vec<String>> = found
        .iter()
        .map(|(t, (dim, pert, inst, rep))| {
            let c = &inst.certificates;
            vec![
                t.to_string(),
                dim.to_string(),
                num(inst.alpha1),
                num(inst.alpha2),
                num(inst.ell),
                num(*pert),
                num(inst.a),
                num(inst.delta),
                inst.n_star.to_string(),
                num(c.a_contract),
                num(c.a_expand),
                num(c.b_contract),
                num(c.b_expand),
                num(c.projection),
                num(c.closeness),
                num(rep.measured),
                num(rep.resolution),
                num(rep.bound),
                num(rep.cone_ratio),
                rep.pass.to_string(),
                rep.cone_pass.to_string(),
            ]
        })
        .collect();
    out.csv(
        "instances.csv",
        &header(&[
            "attempt", "dim", "alpha1", "alpha2", "ell", "perturbation", "a", "delta", "n", "a_contract", "a_expand", "b_contract",
            "b_expand", "projection", "closeness", "measured", "resolution", "bound", "cone_ratio", "pass", "cone_pass",
        ]),
        &rows,
    )?;
    let dat: Vec<(f64, f64)> = found.iter().map(|(_, (_, _, inst, rep))| (inst.delta, rep.measured / rep.bound)).collect();
    out.dat("lemma.dat", "delta measured_over_bound", &dat)?;
    let mut per_dim = BTreeMap::new();
    for (_, (dim, ..)) in &found {
        *per_dim.entry(*dim).or_insert(0) += 1;
    }
    let passed = found.iter().filter(|f| f.1 .3.pass).count();
    let cone_passed = found.iter().filter(|f| f.1 .3.cone_pass).count();
    let pass = found.len() == l.instances && passed == found.len() && cone_passed == found.len();
    out.json(
        "summary.json",
        &LemmaSummary {
            certified: found.len(),
            attempts,
            synthesis_failures: attempts - found.len(),
            per_dim,
            passed,
            cone_passed,
            worst_ratio: found.iter().map(|f| f.1 .3.measured / f.1 .3.bound).fold(0.0, f64::max),
            pass,
        },
    )?;
    if !pass {
        return Err(LabError::Certificate(format!("{passed} of {} instances pass (target {})", found.len(), l.instances)));
    }
    Ok(())
}
