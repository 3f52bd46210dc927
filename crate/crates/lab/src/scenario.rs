//! Scenario files: TOML with one table per stage.

use std::path::Path;

use oseledets_core::cocycle::{CocycleGenerator, FieldKind};
use oseledets_core::dynamics::{BaseSystem, MapKind, SamplingScheme};
use oseledets_core::linalg::OperatorNorm;
use oseledets_core::oseledets::DEFAULT_GROUPING_TOL;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub norm: OperatorNorm,
    /// Output directory; `--out` and the environment root take over when absent.
    pub out: Option<String>,
    pub base: MapKind,
    pub generator: FieldKind,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub spectrum: SpectrumParams,
    #[serde(default)]
    pub norms: NormParams,
    #[serde(default)]
    pub regular: RegularParams,
    #[serde(default)]
    pub splitting: SplittingParams,
    #[serde(default)]
    pub verify: VerifyParams,
    #[serde(default)]
    pub filtration: FiltrationParams,
    #[serde(default)]
    pub lemma: LemmaParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sampling {
    pub scheme: SamplingScheme,
    pub points: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Self { scheme: SamplingScheme::IidUniform, points: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumParams {
    pub horizon: usize,
    pub grouping_tol: f64,
}

impl Default for SpectrumParams {
    fn default() -> Self {
        Self { horizon: 4096, grouping_tol: DEFAULT_GROUPING_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct NormParams {
    /// Defaults to `min_gap / 200`.
    pub epsilon: Option<f64>,
    pub truncation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularParams {
    /// Exactly one of `gamma` and `ell`.
    pub gamma: Option<f64>,
    pub ell: Option<f64>,
    pub cap: f64,
    pub horizon: usize,
    pub splitting_horizon: usize,
    pub probe_count: usize,
    pub with_d_eps: bool,
}

impl Default for RegularParams {
    fn default() -> Self {
        Self { gamma: Some(0.1), ell: None, cap: 1e6, horizon: 64, splitting_horizon: 512, probe_count: 16, with_d_eps: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplittingParams {
    pub horizon: usize,
    /// Certificate tolerance against the closed-form oracle when one exists.
    pub oracle_tol: f64,
}

impl Default for SplittingParams {
    fn default() -> Self {
        Self { horizon: 1024, oracle_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyParams {
    /// Levels to check; all levels when empty.
    pub levels: Vec<usize>,
    pub pairs_per_bin: usize,
    /// `log10 d` edges of the distance bins, increasing.
    pub bin_edges: Vec<f64>,
    pub sphere_step: f64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self { levels: Vec::new(), pairs_per_bin: 4, bin_edges: vec![-6.0, -5.0, -4.0, -3.0, -2.0], sphere_step: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiltrationParams {
    /// Window for the rate certificates.
    pub horizon: usize,
    pub cache_horizon: usize,
    pub pairs: usize,
    pub log10_distance: (f64, f64),
    pub block_n: usize,
    pub recursion_n: usize,
    pub sphere_step: f64,
}

impl Default for FiltrationParams {
    fn default() -> Self {
        Self { horizon: 32, cache_horizon: 1024, pairs: 30, log10_distance: (-7.0, -2.5), block_n: 64, recursion_n: 8, sphere_step: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaParams {
    pub instances: usize,
    pub dims: Vec<usize>,
    pub alpha1: (f64, f64),
    pub alpha2: (f64, f64),
    pub ell: (f64, f64),
    pub log10_perturbation: (f64, f64),
    /// Give up after this many synthesis attempts.
    pub max_attempts: usize,
}

impl Default for LemmaParams {
    fn default() -> Self {
        Self {
            instances: 100,
            dims: vec![2, 3, 4, 6],
            alpha1: (1.2, 3.0),
            alpha2: (0.1, 0.9),
            ell: (1.0, 3.0),
            log10_perturbation: (-9.0, -3.0),
            max_attempts: 1000,
        }
    }
}

fn range_ok(r: (f64, f64)) -> bool {
    r.0.is_finite() && r.1.is_finite() && r.0 <= r.1
}

impl Scenario {
    pub fn from_toml(text: &str) -> LabResult<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> LabResult<()> {
        let bad = |m: &str| Err(LabError::Config(m.into()));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name must be a non-empty path segment");
        }
        if self.sampling.points == 0 {
            return bad("sampling.points must be positive");
        }
        if self.spectrum.horizon < 2 || !(self.spectrum.grouping_tol > 0.0) {
            return bad("spectrum needs horizon >= 2 and grouping_tol > 0");
        }
        if let Some(e) = self.norms.epsilon {
            if !(e > 0.0) {
                return bad("norms.epsilon must be positive");
            }
        }
        match (self.regular.gamma, self.regular.ell) {
            (Some(g), None) if g > 0.0 && g < 1.0 => {}
            (None, Some(l)) if l >= 1.0 => {}
            _ => return bad("regular needs exactly one of gamma in (0,1) or ell >= 1"),
        }
        if self.regular.probe_count == 0 {
            return bad("regular.probe_count must be positive");
        }
        let v = &self.verify;
        if v.bin_edges.len() < 2 || v.bin_edges.windows(2).any(|w| !(w[0] < w[1])) || v.bin_edges.iter().any(|e| *e >= 0.0) {
            return bad("verify.bin_edges must increase and stay below 0");
        }
        if !(v.sphere_step > 0.0 && v.sphere_step < 1.0) || !(self.filtration.sphere_step > 0.0 && self.filtration.sphere_step < 1.0) {
            return bad("sphere_step must lie in (0, 1)");
        }
        let f = &self.filtration;
        if !range_ok(f.log10_distance) || f.log10_distance.1 >= 0.0 || f.horizon == 0 {
            return bad("filtration needs horizon > 0 and a negative log10_distance range");
        }
        let l = &self.lemma;
        if l.dims.is_empty() || l.dims.iter().any(|d| *d < 2) {
            return bad("lemma.dims must be at least 2");
        }
        for r in [l.alpha1, l.alpha2, l.ell, l.log10_perturbation] {
            if !range_ok(r) {
                return bad("lemma ranges must be finite and ordered");
            }
        }
        if !(l.alpha2.1 < l.alpha1.0 && l.alpha2.0 > 0.0 && l.ell.0 >= 1.0) {
            return bad("lemma needs 0 < alpha2 < alpha1 and ell >= 1");
        }
        Ok(())
    }

    pub fn system(&self) -> LabResult<BaseSystem> {
        BaseSystem::from_kind(self.base.clone()).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn generator(&self, system: &BaseSystem) -> LabResult<CocycleGenerator> {
        CocycleGenerator::new(self.generator.clone(), self.norm, system).map_err(|e| LabError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, so formatting of the file does
    /// not matter.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(json))
    }
}
