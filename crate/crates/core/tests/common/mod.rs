#![allow(dead_code)]

use oseledets_core::cocycle::{CocycleGenerator, FieldKind, ScalarField};
use oseledets_core::dynamics::BaseSystem;
use oseledets_core::linalg::OperatorNorm;

pub fn coboundary_2d(sys: &BaseSystem, norm: OperatorNorm) -> CocycleGenerator {
    let field = FieldKind::Coboundary {
        angle: ScalarField { offset: 0.2, amplitude: 0.3, weights: vec![1.0, 0.5], exponent: 0.7 },
        shear: ScalarField { offset: 0.1, amplitude: 0.2, weights: vec![0.5, 1.0], exponent: 0.9 },
        diagonal: vec![2.0, 0.5],
    };
    CocycleGenerator::new(field, norm, sys).unwrap()
}

pub fn coboundary_3d(sys: &BaseSystem) -> CocycleGenerator {
    let field = FieldKind::Coboundary {
        angle: ScalarField { offset: 0.3, amplitude: 0.25, weights: vec![1.0, 0.6], exponent: 0.6 },
        shear: ScalarField { offset: 0.2, amplitude: 0.2, weights: vec![0.4, 1.0], exponent: 0.8 },
        diagonal: vec![4.4817, 1.0, 0.2231],
    };
    CocycleGenerator::new(field, OperatorNorm::L2, sys).unwrap()
}

pub fn rotation_conjugated(sys: &BaseSystem) -> CocycleGenerator {
    let w = vec![1.0; sys.space().coord_len()];
    let field = FieldKind::RotationConjugated {
        angle: ScalarField { offset: 0.1, amplitude: 0.4, weights: w, exponent: 0.5 },
        diagonal: vec![3.0, 1.0, 0.4],
    };
    CocycleGenerator::new(field, OperatorNorm::L2, sys).unwrap()
}

/// Coboundary over the doubling map with a nearly orthogonal conjugator.
pub fn doubling_coboundary(sys: &BaseSystem) -> CocycleGenerator {
    let field = FieldKind::Coboundary {
        angle: ScalarField { offset: 0.1, amplitude: 0.2, weights: vec![1.0], exponent: 0.8 },
        shear: ScalarField { offset: 0.0, amplitude: 0.05, weights: vec![1.0], exponent: 0.8 },
        diagonal: vec![3.0, 1.0],
    };
    CocycleGenerator::new(field, OperatorNorm::L2, sys).unwrap()
}
