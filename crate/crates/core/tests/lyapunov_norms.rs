mod common;

use oseledets_core::cocycle::*;
use oseledets_core::dynamics::*;
use oseledets_core::linalg::{self, Operator, OperatorNorm, Vector};
use oseledets_core::lyapunov_norms::*;
use oseledets_core::oseledets::*;
use oseledets_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Setup {
    sys: BaseSystem,
    gen: CocycleGenerator,
    spec: LyapunovSpectrum,
    x: BasePoint,
}

fn constant(entries: &[f64], norm: OperatorNorm) -> Setup {
    let sys = BaseSystem::cat_map();
    let gen = CocycleGenerator::constant(linalg::diag(entries), norm, &sys).unwrap();
    let x = sys.point(vec![0.1, 0.2]).unwrap();
    let spec = lyapunov_spectrum(&gen, &sys, &x, 256, 1e-2).unwrap();
    Setup { sys, gen, spec, x }
}

fn coboundary(norm: OperatorNorm, three: bool) -> Setup {
    let sys = BaseSystem::cat_map();
    let gen = if three { common::coboundary_3d(&sys) } else { common::coboundary_2d(&sys, norm) };
    let x = sys.point(vec![0.31, 0.72]).unwrap();
    let spec = lyapunov_spectrum(&gen, &sys, &x, 2048, 1e-2).unwrap();
    Setup { sys, gen, spec, x }
}

fn geometric(eps: f64, n: usize) -> f64 {
    1.0 + 2.0 * (1..=n).map(|k| (-(k as f64) * eps).exp()).sum::<f64>()
}

#[test]
fn params_enforce_epsilon_constraint() {
    let s = coboundary(OperatorNorm::L2, true);
    let gap = s.spec.min_gap();
    assert!(matches!(LyapunovNormParams::new(s.spec.clone(), gap / 50.0), Err(Error::ConstraintViolation(_))));
    assert!(LyapunovNormParams::new(s.spec.clone(), 0.0).is_err());
    let p = LyapunovNormParams::with_default_epsilon(s.spec.clone()).unwrap();
    assert!((p.epsilon - gap / 200.0).abs() < 1e-15);
    assert!(p.tail_bound() < 1e-9);
    assert_eq!(p.truncation, default_truncation(p.epsilon));
}

#[test]
fn scalar_norm_is_geometric_sum() {
    for lambda in [0.5f64, -0.3] {
        let s = constant(&[lambda.exp()], OperatorNorm::L2);
        let params = LyapunovNormParams::new(s.spec.clone(), 0.02).unwrap().with_truncation(400);
        let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, -400, 400, 64, &s.spec).unwrap();
        for u in [1.0, -3.5] {
            let got = lyapunov_norm(&Vector::from_element(1, u), &b, 0, &params).unwrap();
            let want = u.abs() * geometric(0.02, 400);
            assert!((got / want - 1.0).abs() < 1e-12);
        }
        assert_eq!(lyapunov_norm(&Vector::zeros(1), &b, 0, &params).unwrap(), 0.0);
    }
}

#[test]
fn norm_dominates_ambient_and_is_dominated_by_d() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (norm, three) in [(OperatorNorm::L2, true), (OperatorNorm::L1, false), (OperatorNorm::Linf, false)] {
        let s = coboundary(norm, three);
        let params = LyapunovNormParams::with_default_epsilon(s.spec.clone()).unwrap();
        let n = params.truncation as i64;
        let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, -n, n, 512, &s.spec).unwrap();
        let local = b.local_norm(0, &params).unwrap();
        let d = local.d_epsilon(64).unwrap();
        assert!(d.exact);
        for _ in 0..100 {
            let u = Vector::from_fn(s.gen.dimension, |_, _| rng.gen_range(-1.0..1.0));
            let ux = local.eval(&u);
            let un = norm.vector(&u);
            assert!(un <= ux * (1.0 + 1e-12), "{norm:?}");
            assert!(ux <= d.value * un * (1.0 + 1e-12), "{norm:?}");
        }
    }
}

#[test]
fn diagonal_d_epsilon_closed_form() {
    let eps = 0.01;
    let w = geometric(eps, 300);
    for (norm, factor) in [(OperatorNorm::L2, 2f64.sqrt()), (OperatorNorm::L1, 1.0), (OperatorNorm::Linf, 2.0)] {
        let s = constant(&[2.0, 0.5], norm);
        let params = LyapunovNormParams::new(s.spec.clone(), eps).unwrap().with_truncation(300);
        let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, -300, 300, 64, &s.spec).unwrap();
        let d = d_epsilon(&b, 0, &params, 4).unwrap();
        assert!((d.value / (w * factor) - 1.0).abs() < 1e-12, "{norm:?} {} {}", d.value, w * factor);
    }
}

#[test]
fn zero_truncation() {
    // a single level: the norms coincide
    let s = constant(&[2.0, 2.0], OperatorNorm::L2);
    let params = LyapunovNormParams::new(s.spec.clone(), 0.01).unwrap().with_truncation(0);
    let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, 0, 0, 64, &s.spec).unwrap();
    assert!((d_epsilon(&b, 0, &params, 4).unwrap().value - 1.0).abs() < 1e-12);
    // several levels: only the n = 0 terms remain, D is the splitting constant
    let s = constant(&[2.0, 0.5], OperatorNorm::L2);
    let params = LyapunovNormParams::new(s.spec.clone(), 0.01).unwrap().with_truncation(0);
    let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, 0, 0, 64, &s.spec).unwrap();
    assert!((d_epsilon(&b, 0, &params, 4).unwrap().value - 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn probe_count_checked() {
    let s = constant(&[2.0, 0.5, 0.1], OperatorNorm::L2);
    let params = LyapunovNormParams::new(s.spec.clone(), 0.01).unwrap().with_truncation(3);
    let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, -3, 3, 64, &s.spec).unwrap();
    assert!(matches!(d_epsilon(&b, 0, &params, 5), Err(Error::InvalidInput(_))));
    assert_eq!(probe_set(3, 20).len(), 20);
    assert_eq!(probe_set(3, 2), probe_set(3, 9));
}

#[test]
fn multidimensional_part_uses_probes() {
    let s = constant(&[2.0, 2.0, 0.5], OperatorNorm::L2);
    let params = LyapunovNormParams::new(s.spec.clone(), 0.01).unwrap().with_truncation(200);
    let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, -200, 200, 64, &s.spec).unwrap();
    let local = b.local_norm(0, &params).unwrap();
    let d = local.d_epsilon(64).unwrap();
    assert!(!d.exact);
    // closed form: w (||u_12|| + |u_3|), maximized at sqrt(2) w
    let want = geometric(0.01, 200) * 2f64.sqrt();
    assert!(d.value <= want * (1.0 + 1e-12));
    assert!(d.value >= want * (1.0 - 1e-6));
}

#[test]
fn diagonal_sandwich_is_an_equality() {
    let s = constant(&[2.0, 0.5], OperatorNorm::L2);
    let params = LyapunovNormParams::new(s.spec.clone(), 0.01).unwrap().with_truncation(300);
    let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, -300, 316, 64, &s.spec).unwrap();
    let r = lyapunov_sandwich_check(&b, 0, &params, 16).unwrap();
    assert!(r.pass);
    for row in &r.rows {
        let exact = (row.n as f64 * s.spec.lambda(row.part + 1)).exp();
        assert!((row.ratio / exact - 1.0).abs() < 1e-12);
    }
}

#[test]
fn sandwich_on_oracle_scenarios() {
    for (norm, three) in [(OperatorNorm::L2, true), (OperatorNorm::L2, false), (OperatorNorm::L1, false), (OperatorNorm::Linf, false)] {
        let s = coboundary(norm, three);
        let params = LyapunovNormParams::with_default_epsilon(s.spec.clone()).unwrap();
        let n = params.truncation as i64;
        let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, -n, n + 16, 512, &s.spec).unwrap();
        let r = lyapunov_sandwich_check(&b, 0, &params, 16).unwrap();
        assert!(r.pass, "{norm:?} worst {}", r.worst_violation);
        assert_eq!(r.rows.len(), s.gen.dimension * 16);
    }
}

#[test]
fn sandwich_with_residual_part() {
    let sys = BaseSystem::cat_map();
    let f = FieldKind::TruncatedDiagonalCompact { lead: 2.0, decay: 0.5, dimension: 4, block_size: 2 };
    let gen = CocycleGenerator::new(f, OperatorNorm::L2, &sys).unwrap();
    let x = sys.point(vec![0.3, 0.3]).unwrap();
    let spec = lyapunov_spectrum(&gen, &sys, &x, 256, 1e-2).unwrap();
    assert_eq!(spec.levels(), 2);
    assert_eq!(spec.residual_dim(), 2);
    let params = LyapunovNormParams::with_default_epsilon(spec.clone()).unwrap();
    let n = params.truncation as i64;
    let b = OrbitBundle::build(&gen, &sys, &x, -n, n + 8, 64, &spec).unwrap();
    assert_eq!(b.parts(), 3);
    let r = lyapunov_sandwich_check(&b, 0, &params, 8).unwrap();
    assert!(r.pass);
    assert!(r.rows.iter().filter(|row| row.part == 2).all(|row| row.lower == 0.0));
}

#[test]
fn wrong_rates_make_the_series_diverge() {
    let s = constant(&[2.0, 0.5], OperatorNorm::L2);
    let fake = LyapunovSpectrum::from_exponents(vec![0.5, -0.9], vec![1, 1], 2, ALPHA_FLOOR).unwrap();
    let params = LyapunovNormParams::with_default_epsilon(fake.clone()).unwrap();
    let n = params.truncation as i64;
    let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, -n, n, 64, &s.spec).unwrap();
    assert!(matches!(b.local_norm(0, &params), Err(Error::SeriesDivergence(_))));
}

#[test]
fn c_function_examples() {
    let e = std::f64::consts::E;
    let s = constant(&[e, 1.0 / e], OperatorNorm::L2);
    let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, 0, 64, 64, &s.spec).unwrap();
    assert!((c_function(&b, 0, &s.spec, 0.01, 1, 64).unwrap() - 1.0).abs() < 1e-12);

    // conjugation bound: C <= sup ||C(f^n x)|| ||C(x)^-1||
    let s = coboundary(OperatorNorm::L2, true);
    let h = 128usize;
    let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, 0, h as i64, 512, &s.spec).unwrap();
    let cinv = linalg::spectral_norm(&s.gen.conjugator(&s.x).unwrap().try_inverse().unwrap());
    let sup_c = (0..=h as i64)
        .map(|j| linalg::spectral_norm(&s.gen.conjugator(b.point(j)).unwrap()))
        .fold(0.0, f64::max);
    let eps = s.spec.min_gap() / 200.0;
    let mut last = 1.0;
    for hh in [0usize, 8, 32, 128] {
        for i in 1..=3 {
            let c = c_function(&b, 0, &s.spec, eps, i, hh).unwrap();
            assert!(c >= 1.0);
            assert!(c <= sup_c * cinv * (1.0 + 1e-6), "{c} vs {}", sup_c * cinv);
        }
        let c = c_function(&b, 0, &s.spec, eps, 2, hh).unwrap();
        assert!(c >= last);
        last = c;
    }
}

#[test]
fn k_function_examples() {
    let s = constant(&[2.0, 0.5], OperatorNorm::L2);
    let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, -4, 4, 64, &s.spec).unwrap();
    assert!((k_function(&b, 0, 1, 0.01, 0).unwrap() - 1.0).abs() < 1e-12);

    let s = coboundary(OperatorNorm::L2, true);
    let eps = s.spec.min_gap() / 200.0;
    let h = 32usize;
    let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, -(h as i64) - 1, h as i64 + 1, 512, &s.spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 1..=3 {
        let k0 = k_function(&b, 0, i, eps, h).unwrap();
        let k1 = k_function(&b, 1, i, eps, h - 1).unwrap();
        assert!(k1 <= eps.exp() * k0 * (1.0 + 1e-12));
        assert!(k0 >= b.projection_norm(i, 0).unwrap());
        let (ep, em) = fast_slow(b.splitting(0), i).unwrap();
        for _ in 0..50 {
            let v = ep.orthonormal() * Vector::from_fn(ep.dim(), |_, _| rng.gen_range(-1.0..1.0));
            let u = if em.dim() > 0 {
                em.orthonormal() * Vector::from_fn(em.dim(), |_, _| rng.gen_range(-1.0..1.0))
            } else {
                Vector::zeros(3)
            };
            assert!(u.norm().max(v.norm()) <= k0 * (&u + &v).norm() * (1.0 + 1e-12));
        }
    }
}

/// Raw values along the orbit and their tempered envelopes.
#[test]
fn temperedness_of_d_and_k() {
    let s = coboundary(OperatorNorm::L2, true);
    let params = LyapunovNormParams::with_default_epsilon(s.spec.clone()).unwrap();
    let eps = params.epsilon;
    let h = 256i64;
    let kh = 16usize;
    let reach = h + params.truncation as i64;
    let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, -reach, reach, 512, &s.spec).unwrap();
    let mut ds = Vec::new();
    let mut ks = Vec::new();
    for j in -h..=h {
        ds.push((j, d_epsilon(&b, j, &params, 16).unwrap().value));
        ks.push((j, k_function(&b, j, 2, eps, kh).unwrap()));
    }
    for raw in [&ds, &ks] {
        let env = tempered_envelope(raw, eps);
        for ((_, g), (_, t)) in raw.iter().zip(&env) {
            assert!(t >= g);
        }
        assert!(temperedness_slack(&env, eps) <= 1e-6);
    }
    // constant cocycles are tempered without an envelope
    let c = constant(&[2.0, 0.5], OperatorNorm::L2);
    let p = LyapunovNormParams::new(c.spec.clone(), 0.01).unwrap().with_truncation(100);
    let b = OrbitBundle::build(&c.gen, &c.sys, &c.x, -132, 132, 64, &c.spec).unwrap();
    let raw: Vec<(i64, f64)> = (-32..=32).map(|j| (j, d_epsilon(&b, j, &p, 4).unwrap().value)).collect();
    assert!(temperedness_slack(&raw, 0.01) <= 1e-6);
}

fn record(i: usize, c: f64, k: f64) -> RegularityRecord {
    RegularityRecord { index: i, coords: vec![], d_eps: 1.0, d_probes: 0, c_val: c, k_val: k, level: 1, horizon: 0 }
}

#[test]
fn regular_set_nesting_and_exhaustion() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let recs: Vec<_> = (0..200).map(|i| record(i, 1.0 + rng.gen_range(0.0..20.0f64).powi(2), 1.0 + rng.gen_range(0.0..5.0))).collect();
    let mut prev: Vec<usize> = Vec::new();
    let top = recs.iter().map(|r| r.ell()).fold(1.0, f64::max).ceil() as usize;
    for ell in 1..=top {
        let s = build_regular_set(&recs, RegularTarget::Ell(ell as f64)).unwrap();
        assert!(prev.iter().all(|m| s.contains(*m)));
        for r in &recs {
            assert_eq!(s.contains(r.index), r.c_val <= ell as f64 && r.k_val <= ell as f64);
        }
        prev = s.members;
    }
    assert_eq!(prev.len(), recs.len());
    let g = build_regular_set(&recs, RegularTarget::Gamma { gamma: 0.1, cap: 1e6 }).unwrap();
    assert!(g.measure_estimate > 0.9 && g.ell.fract() == 0.0);
    let smaller = build_regular_set(&recs, RegularTarget::Ell(g.ell - 1.0)).unwrap();
    assert!(smaller.measure_estimate <= 0.9);
    assert!(build_regular_set(&recs, RegularTarget::Ell(0.5)).is_err());
}

#[test]
fn constant_cocycle_is_fully_regular() {
    let s = constant(&[3.0, 1.0, 0.2], OperatorNorm::L2);
    let params = LyapunovNormParams::with_default_epsilon(s.spec.clone()).unwrap();
    let cfg = RegularityConfig { level: 0, horizon: 32, splitting_horizon: 64, probe_count: 16, with_d_eps: false };
    let pts = s.sys.sample_points(SamplingScheme::IidUniform, 10, 2).unwrap();
    let recs: Vec<_> = pts.points.iter().enumerate().map(|(i, x)| regularity_record(&s.gen, &s.sys, x, i, &params, &cfg).unwrap()).collect();
    for r in &recs {
        assert!((r.c_val - 1.0).abs() < 1e-9 && (r.k_val - 1.0).abs() < 1e-9);
    }
    let set = build_regular_set(&recs, RegularTarget::Ell(1.0 + 1e-9)).unwrap();
    assert_eq!(set.members.len(), 10);
}

#[test]
fn coboundary_regular_set_reaches_gamma() {
    let s = coboundary(OperatorNorm::L2, true);
    let params = LyapunovNormParams::with_default_epsilon(s.spec.clone()).unwrap();
    let cfg = RegularityConfig { level: 0, horizon: 64, splitting_horizon: 512, probe_count: 16, with_d_eps: false };
    let pts = s.sys.sample_points(SamplingScheme::IidUniform, 40, 3).unwrap();
    let recs: Vec<_> = pts.points.iter().enumerate().map(|(i, x)| regularity_record(&s.gen, &s.sys, x, i, &params, &cfg).unwrap()).collect();
    for r in &recs {
        assert!(r.c_val >= 1.0 && r.k_val >= 1.0 && r.d_eps.is_nan());
    }
    let set = build_regular_set(&recs, RegularTarget::Gamma { gamma: 0.1, cap: 1e3 }).unwrap();
    assert!(set.measure_estimate > 0.9);
    assert!(set.ell.is_finite());
}

#[test]
fn regularity_record_with_d() {
    let s = coboundary(OperatorNorm::L2, false);
    let params = LyapunovNormParams::with_default_epsilon(s.spec.clone()).unwrap();
    let cfg = RegularityConfig { level: 1, horizon: 16, splitting_horizon: 256, probe_count: 8, with_d_eps: true };
    let r = regularity_record(&s.gen, &s.sys, &s.x, 7, &params, &cfg).unwrap();
    assert!(r.d_eps >= 1.0 && r.d_probes > 0);
    assert_eq!(r.index, 7);
    let j = serde_json::to_value(&r).unwrap();
    assert_eq!(j["level"], 1);
}

#[test]
fn transport_is_linear_and_matches_products() {
    let s = coboundary(OperatorNorm::L2, true);
    let b = OrbitBundle::build(&s.gen, &s.sys, &s.x, 0, 6, 512, &s.spec).unwrap();
    let m = Operator::from_fn(3, 1, |i, _| [0.3, -1.0, 0.7][i]);
    let u: Vector = m.column(0).into_owned();
    let raw = cocycle(&s.gen, &s.sys, &s.x, 6).unwrap() * &u;
    assert!((b.transport(&u, 0, 6).unwrap() - raw).amax() < 1e-9);
}
