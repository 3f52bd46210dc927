mod common;

use oseledets_core::cocycle::*;
use oseledets_core::dynamics::*;
use oseledets_core::holder::*;
use oseledets_core::lyapunov_norms::*;
use oseledets_core::oseledets::*;
use oseledets_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight transcription of the closed forms, for comparison.
fn oracle_constants(i: usize, l: &[f64], eps: f64, ell: f64, a: f64, nu: f64) -> [f64; 9] {
    let la = a.ln();
    let k = (4.0 + 2.0 * ell) * ell.powi(2);
    let (li, ln) = (l[i - 1], l[i]);
    let cm = k * (li - ln - 2.0 * eps).exp();
    let num = nu * (li - ln - 2.0 * eps) / (la - ln - eps);
    let cp = k * (li - ln - 4.0 * eps).exp();
    let nup = nu * (li - ln - 4.0 * eps) / (la + li - 2.0 * eps);
    if i == 1 {
        return [cm, num, cp, nup, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN];
    }
    let lp = l[i - 2];
    let ch = (4.0 + 6.0 * ell) * (3.0 * ell).powi(2) * (lp - li - 2.0 * eps).exp();
    let nh = (lp - li - 2.0 * eps) / (la - li - eps);
    let c = 6.0 * ell * cp + 2.0 * ch * (ell * cp + 1.0);
    [cm, num, cp, nup, ch, nh, c, nup * nh, nup * nh / nu]
}

fn close(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12 * a.abs().max(1.0)
}

#[test]
fn constants_match_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let mut l: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        l.sort_by(|a, b| b.total_cmp(a));
        // keep gaps comfortable
        for j in 1..4 {
            if l[j - 1] - l[j] < 0.3 {
                l[j] = l[j - 1] - 0.3;
            }
        }
        let eps = 0.01;
        let ell = rng.gen_range(1.0..5.0);
        let a = rng.gen_range(20.0..200.0);
        let nu = rng.gen_range(0.2..1.0);
        for i in 1..=3 {
            let c = theoretical_constants_from(i, &l, eps, ell, a, nu).unwrap();
            let o = oracle_constants(i, &l, eps, ell, a, nu);
            let got = [
                c.c_minus,
                c.nu_minus,
                c.c_plus,
                c.nu_plus,
                c.c_hat.unwrap_or(f64::NAN),
                c.nu_hat.unwrap_or(f64::NAN),
                c.c_main.unwrap_or(f64::NAN),
                c.nu_main.unwrap_or(f64::NAN),
                c.omega.unwrap_or(f64::NAN),
            ];
            for (g, w) in got.iter().zip(o) {
                assert!(close(*g, w), "level {i}: {g} vs {w}");
            }
        }
    }
}

#[test]
fn constant_edge_cases() {
    let l = [1.0, 0.0, -1.0];
    assert!(matches!(theoretical_constants_from(1, &l, 0.3, 1.0, 10.0, 1.0), Err(Error::ConstraintViolation(_))));
    assert!(matches!(theoretical_constants_from(1, &l, 0.01, 1.0, 1.5, 1.0), Err(Error::ConstraintViolation(_))));
    assert!(matches!(theoretical_constants_from(3, &l, 0.01, 1.0, 10.0, 1.0), Err(Error::InvalidInput(_))));
    assert!(matches!(theoretical_constants_from(1, &[1.0, ALPHA_FLOOR], 0.01, 1.0, 10.0, 1.0), Err(Error::ConstraintViolation(_))));
    // the exponents vanish as a grows
    let c = theoretical_constants_from(2, &l, 0.01, 2.0, 1e200, 0.7).unwrap();
    assert!(c.nu_minus < 0.01 && c.nu_plus < 0.01 && c.nu_main.unwrap() < 1e-4);
}

proptest! {
    #[test]
    fn constants_grow_with_ell(ell in 1.0f64..10.0, bump in 0.01f64..5.0, i in 1usize..=2) {
        let l = [1.0, 0.0, -1.2];
        let a = theoretical_constants_from(i, &l, 0.01, ell, 30.0, 0.8).unwrap();
        let b = theoretical_constants_from(i, &l, 0.01, ell + bump, 30.0, 0.8).unwrap();
        prop_assert!(b.c_minus > a.c_minus && b.c_plus > a.c_plus);
        if i == 2 {
            prop_assert!(b.c_main.unwrap() > a.c_main.unwrap());
            prop_assert_eq!(a.nu_main, b.nu_main);
        }
    }

    #[test]
    fn exponents_are_ordered(g1 in 0.2f64..3.0, g2 in 0.2f64..3.0, nu in 0.1f64..1.0, extra in 0.1f64..5.0) {
        let l = [g1, 0.0, -g2];
        let a = (g1 + g2 + extra).exp();
        let c = theoretical_constants_from(2, &l, 0.01, 2.0, a, nu).unwrap();
        let main = c.nu_main.unwrap();
        prop_assert!(main < c.nu_plus && c.nu_plus < nu);
        prop_assert!(c.omega.unwrap() < 1.0);
    }

    #[test]
    fn bracket_index_brackets(delta in 1e-12f64..0.99, alpha2 in 0.1f64..2.0, a in 2.5f64..50.0) {
        let n = bracket_index(delta, alpha2, a);
        let q = alpha2 / a;
        prop_assert!(n >= 0);
        prop_assert!(q.powi(n as i32 + 1) <= delta && delta < q.powi(n as i32));
    }
}

#[test]
fn two_sequence_lemma_on_synthesized_instances() {
    let mut done = 0;
    let mut seed = 0u64;
    let dims = [2usize, 3, 4, 6];
    let mut per_dim = [0usize; 4];
    while done < 100 {
        let dim = dims[(seed % 4) as usize];
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let alpha1 = rng.gen_range(1.2..3.0);
        let alpha2 = rng.gen_range(0.1..0.9);
        let ell = rng.gen_range(1.0..3.0);
        let pert = 10f64.powf(rng.gen_range(-9.0..-3.0));
        seed += 1;
        let inst = match synthesize_l5_instance(seed, dim, alpha1, alpha2, ell, pert) {
            Ok(i) => i,
            Err(Error::HypothesisSynthesisFailure(_)) => continue,
            Err(e) => panic!("{e}"),
        };
        assert!(inst.certificates.pass());
        let r = check_lemma_l5(&inst).unwrap();
        assert!(r.pass, "seed {seed} dim {dim}: {} > {}", r.measured, r.bound);
        assert!(r.cone_pass, "seed {seed}: cone {}", r.cone_ratio);
        per_dim[(seed - 1) as usize % 4] += 1;
        done += 1;
        assert!(seed < 1000);
    }
    assert!(per_dim.iter().all(|&c| c > 0));
}

#[test]
fn unperturbed_instance_has_zero_distance() {
    let inst = synthesize_l5_instance(5, 3, 2.0, 0.5, 1.5, 0.0).unwrap();
    let r = check_lemma_l5(&inst).unwrap();
    assert!(r.measured < 1e-12 && r.pass);
    assert!(synthesize_l5_instance(5, 1, 2.0, 0.5, 1.5, 0.0).is_err());
    assert!(synthesize_l5_instance(5, 3, 0.5, 2.0, 1.5, 0.0).is_err());
    // a huge perturbation defeats the closeness hypothesis
    assert!(matches!(synthesize_l5_instance(5, 3, 1.1, 0.9, 1.0, 1.0), Err(Error::HypothesisSynthesisFailure(_))));
}

#[test]
fn fits() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pairs: Vec<(f64, f64)> = (0..50)
        .map(|_| {
            let d = 10f64.powf(rng.gen_range(-6.0..-1.0));
            (d, 2.0 * d.powf(0.35) * rng.gen_range(0.98..1.02))
        })
        .collect();
    let f = fit_log_log(&pairs).unwrap();
    assert!((f.fitted_exponent - 0.35).abs() < 0.01 && f.r_squared > 0.99 && f.pair_count == 50);
    assert!(matches!(fit_log_log(&pairs[..5]), Err(Error::DegenerateDesign(_))));
    let same: Vec<_> = (0..10).map(|k| (1e-3, k as f64 + 1.0)).collect();
    assert!(matches!(fit_log_log(&same), Err(Error::DegenerateDesign(_))));
}

struct Pipeline {
    sys: BaseSystem,
    gen: CocycleGenerator,
    spec: LyapunovSpectrum,
    params: LyapunovNormParams,
    cfg: RegularityConfig,
    set: RegularSet,
    points: Vec<BasePoint>,
    a: f64,
}

fn pipeline() -> Pipeline {
    let sys = BaseSystem::cat_map();
    let gen = common::coboundary_3d(&sys);
    let pts = sys.sample_points(SamplingScheme::IidUniform, 40, 7).unwrap();
    let spec = lyapunov_spectrum(&gen, &sys, &pts.points[0], 4096, 1e-2).unwrap();
    let params = LyapunovNormParams::with_default_epsilon(spec.clone()).unwrap();
    let cfg = RegularityConfig { level: 0, horizon: 64, splitting_horizon: 512, probe_count: 16, with_d_eps: false };
    let recs: Vec<_> = pts.points.iter().enumerate().map(|(i, x)| regularity_record(&gen, &sys, x, i, &params, &cfg).unwrap()).collect();
    let set = build_regular_set(&recs, RegularTarget::Gamma { gamma: 0.1, cap: 1e6 }).unwrap();
    let a = two_sided_holder_constant(&gen, &sys);
    Pipeline { sys, gen, spec, params, cfg, set, points: pts.points, a }
}

#[test]
fn main_pipeline_on_coboundary() {
    let p = pipeline();
    assert_eq!(p.spec.levels(), 3);
    let ctx = HolderContext {
        gen: &p.gen,
        system: &p.sys,
        spectrum: &p.spec,
        epsilon: p.params.epsilon,
        ell: p.set.ell,
        a: p.a,
        nu: p.gen.holder_exponent,
        sphere_step: 1e-2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut by_level = vec![Vec::new(); 4];
    let mut tested = 0;
    for &m in p.set.members.iter().take(12) {
        let x = &p.points[m];
        let r = 10f64.powf(rng.gen_range(-6.0..-2.0));
        let y = p.sys.point_near(x, r, &mut rng).unwrap();
        let ry = regularity_record(&p.gen, &p.sys, &y, 0, &p.params, &p.cfg).unwrap();
        if ry.ell() > p.set.ell {
            continue;
        }
        let px = PairPoint { point: x.clone(), splitting: Some(oseledets_splitting(&p.gen, &p.sys, x, 512, &p.spec).unwrap()), filtration: None, regular: true };
        let py = PairPoint { point: y.clone(), splitting: Some(oseledets_splitting(&p.gen, &p.sys, &y, 512, &p.spec).unwrap()), filtration: None, regular: true };
        tested += 1;
        for i in 1..=3 {
            let rep = verify_main(&ctx, &px, &py, i).unwrap();
            assert!(rep.pass, "level {i}: {rep:?}");
            assert!(rep.terms.iter().all(|t| t.pass));
            if i == 2 {
                assert_eq!(rep.route, "pullback");
                let tri = rep.terms.iter().find(|t| t.name == "triangle").unwrap();
                assert!(tri.measured <= tri.bound);
            }
            by_level[i].push(rep);
        }
        for i in 1..=2 {
            assert!(verify_minus(&ctx, &px, &py, i).unwrap().pass);
            assert!(verify_plus(&ctx, &px, &py, i).unwrap().pass);
            assert!(verify_graph_bounds(&ctx, &px, &py, i).unwrap().pass);
        }
    }
    assert!(tested >= 8);
    for i in 1..=3 {
        let fit = fit_holder_exponent(&by_level[i]).unwrap();
        assert!(fit.fitted_exponent >= by_level[i][0].exponent, "level {i}: {fit:?}");
        assert!(passing_threshold(&by_level[i]) > 0.0);
    }
}

#[test]
fn pair_errors() {
    let p = pipeline();
    let ctx = HolderContext {
        gen: &p.gen,
        system: &p.sys,
        spectrum: &p.spec,
        epsilon: p.params.epsilon,
        ell: p.set.ell,
        a: p.a,
        nu: p.gen.holder_exponent,
        sphere_step: 1e-2,
    };
    let x = &p.points[0];
    let s = oseledets_splitting(&p.gen, &p.sys, x, 512, &p.spec).unwrap();
    let px = PairPoint { point: x.clone(), splitting: Some(s.clone()), filtration: None, regular: true };
    assert!(matches!(verify_main(&ctx, &px, &px, 2), Err(Error::DegeneratePair)));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = p.sys.point_near(x, 1e-4, &mut rng).unwrap();
    let py = PairPoint { point: y, splitting: Some(s), filtration: None, regular: false };
    assert!(matches!(verify_main(&ctx, &px, &py, 2), Err(Error::PairOutsideRegularSet)));
    assert!(matches!(verify_main(&ctx, &px, &px, 4), Err(_)));
}

#[test]
fn filtration_pipeline_on_doubling_coboundary() {
    let sys = BaseSystem::doubling_map();
    let gen = common::doubling_coboundary(&sys);
    let pts = sys.sample_points(SamplingScheme::IidUniform, 30, 5).unwrap();
    let spec = lyapunov_spectrum(&gen, &sys, &pts.points[0], 2048, 1e-2).unwrap();
    assert_eq!(spec.levels(), 2);
    let eps = spec.min_gap() / 200.0;
    let a = two_sided_holder_constant(&gen, &sys);
    let horizon = 32usize;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pairs = Vec::new();
    for x in &pts.points {
        let y = sys.point_near(x, 10f64.powf(rng.gen_range(-7.0..-2.5)), &mut rng).unwrap();
        let mut certs = Vec::new();
        let mut filts = Vec::new();
        for z in [x, &y] {
            let cache = SweepCache::build(&gen, &sys, z, 0, horizon as i64, 1024, &spec).unwrap();
            certs.push(filtration_certificate(&cache, &spec, 0, 2, eps, horizon).unwrap());
            filts.push(choose_complements(cache.filtration(0).unwrap()).unwrap());
        }
        pairs.push((x.clone(), y, certs, filts));
    }
    let all: Vec<Filtration> = pairs.iter().flat_map(|p| p.3.clone()).collect();
    let ell = operational_ell(&all);
    let n0 = pairs.iter().flat_map(|p| p.2.iter()).map(|c| c.n_cert.unwrap()).max().unwrap();
    assert!(n0 <= 2, "n0 {n0}");
    let ctx = HolderContext { gen: &gen, system: &sys, spectrum: &spec, epsilon: eps, ell, a, nu: gen.holder_exponent, sphere_step: 1e-2 };
    let mut reports = Vec::new();
    for (x, y, certs, filts) in pairs {
        assert!(certs.iter().all(|c| c.projection <= ell));
        let px = PairPoint { point: x, splitting: None, filtration: Some(filts[0].clone()), regular: true };
        let py = PairPoint { point: y, splitting: None, filtration: Some(filts[1].clone()), regular: true };
        match verify_filtration_holder(&ctx, &px, &py, 2, n0) {
            Ok(r) => {
                assert!(r.pass, "{r:?}");
                reports.push(r);
            }
            Err(Error::PairTooFar { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }
    assert!(reports.len() >= 20);
    let fit = fit_holder_exponent(&reports).unwrap();
    assert!(fit.fitted_exponent >= reports[0].exponent);
    assert!(matches!(verify_plus(&ctx, &PairPoint { point: pts.points[0].clone(), splitting: None, filtration: None, regular: true }, &PairPoint { point: pts.points[1].clone(), splitting: None, filtration: None, regular: true }, 1), Err(Error::NegativeIterateOfNonInvertible)));
}

#[test]
fn reports_serialize() {
    let inst = synthesize_l5_instance(2, 2, 2.0, 0.5, 1.2, 1e-6).unwrap();
    let j = serde_json::to_value(check_lemma_l5(&inst).unwrap()).unwrap();
    assert!(j["pass"].as_bool().unwrap());
    let c = theoretical_constants_from(2, &[1.0, 0.0, -1.0], 0.01, 2.0, 30.0, 0.5).unwrap();
    let j = serde_json::to_value(&c).unwrap();
    assert_eq!(j["level"], 2);
    assert_eq!(j["inputs"]["lambdas"].as_array().unwrap().len(), 3);
}
