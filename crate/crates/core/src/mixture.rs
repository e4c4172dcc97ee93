//! Analytic noise predictor for isotropic Gaussian mixtures.
//!
//! Scaling contract: the predictor receives the sampler's latent `z` unscaled,
//! in sigma space, i.e. `z = x + σ·ε` with `x` from the data mixture. At noise
//! level `σ` the marginal is the same mixture with component variances
//! `v_k + σ²`, and the ideal noise estimate is `ε*(z, σ) = −σ · ∇_z log p_σ(z)`.
//!
//! Conditioning restricts the mixture to a named subset of components
//! (renormalizing their weights); the unconditional estimate uses all of them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

/// Abstract conditional ε-predictor.
pub trait NoisePredictor: Send + Sync {
    /// `z` is the sigma-space latent (see module docs); output has `z`'s shape.
    fn predict(&self, z: &LatentTensor, sigma: f64, condition: &Condition) -> Result<LatentTensor>;

    fn latent_shape(&self) -> Vec<usize>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionTag {
    Unconditional,
    Prompt,
    Safety,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Condition {
    tag: ConditionTag,
    concept: Option<String>,
}

impl Condition {
    pub fn unconditional() -> Self {
        Self {
            tag: ConditionTag::Unconditional,
            concept: None,
        }
    }

    pub fn prompt(concept: impl Into<String>) -> Self {
        Self {
            tag: ConditionTag::Prompt,
            concept: Some(concept.into()),
        }
    }

    pub fn safety(concept: impl Into<String>) -> Self {
        Self {
            tag: ConditionTag::Safety,
            concept: Some(concept.into()),
        }
    }

    pub fn new(tag: ConditionTag, concept: Option<String>) -> Result<Self> {
        if tag == ConditionTag::Unconditional && concept.is_some() {
            return Err(Error::Invalid(
                "the unconditional condition carries no concept".into(),
            ));
        }
        Ok(Self { tag, concept })
    }

    pub fn tag(&self) -> ConditionTag {
        self.tag
    }

    pub fn concept(&self) -> Option<&str> {
        self.concept.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Isotropic variance.
    pub variance: f64,
}

/// On-disk layout of a model file (TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    prompt_concept: Option<String>,
    safety_concept: Option<String>,
    components: Vec<Component>,
    #[serde(default)]
    concepts: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    components: Vec<Component>,
    concepts: BTreeMap<String, Vec<usize>>,
    prompt_concept: Option<String>,
    safety_concept: Option<String>,
    dim: usize,
}

impl MixtureModel {
    /// Builds a model, normalizing the weights to sum to one.
    pub fn new(components: Vec<Component>, concepts: BTreeMap<String, Vec<usize>>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Model("no components".into()))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::Model("component means must be nonempty".into()));
        }
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(Error::Model(format!(
                    "component {i} has dimension {}, expected {dim}",
                    c.mean.len()
                )));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::Model(format!(
                    "component {i} weight must be positive"
                )));
            }
            if !(c.variance.is_finite() && c.variance > 0.0) {
                return Err(Error::Model(format!(
                    "component {i} variance must be positive"
                )));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::Model(format!("component {i} mean must be finite")));
            }
        }
        for (name, subset) in &concepts {
            if subset.is_empty() {
                return Err(Error::Model(format!(
                    "concept `{name}` selects no components"
                )));
            }
            if let Some(bad) = subset.iter().find(|&&k| k >= components.len()) {
                return Err(Error::Model(format!(
                    "concept `{name}` refers to missing component {bad}"
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        let components = components
            .into_iter()
            .map(|c| Component {
                weight: c.weight / total,
                ..c
            })
            .collect();
        Ok(Self {
            components,
            concepts,
            prompt_concept: None,
            safety_concept: None,
            dim,
        })
    }

    /// Two 2-D modes at `(±2, 0)`, variance 0.25, equal weights. Concepts:
    /// `all` (both), `safe` (the negative mode), `unsafe` (the positive mode).
    /// The prompt concept is `all`, the safety concept `unsafe`.
    pub fn default_two_mode() -> Self {
        let comp = |x: f64| Component {
            weight: 0.5,
            mean: vec![x, 0.0],
            variance: 0.25,
        };
        let concepts = BTreeMap::from([
            ("all".to_string(), vec![0, 1]),
            ("safe".to_string(), vec![0]),
            ("unsafe".to_string(), vec![1]),
        ]);
        Self::new(vec![comp(-2.0), comp(2.0)], concepts)
            .expect("default model is valid")
            .with_default_concepts(Some("all".into()), Some("unsafe".into()))
            .expect("default concepts exist")
    }

    /// Single standard normal mode with concept `all`.
    pub fn standard_normal(dim: usize) -> Self {
        let comp = Component {
            weight: 1.0,
            mean: vec![0.0; dim],
            variance: 1.0,
        };
        Self::new(vec![comp], BTreeMap::from([("all".to_string(), vec![0])]))
            .expect("standard normal model is valid")
            .with_default_concepts(Some("all".into()), Some("all".into()))
            .expect("concept exists")
    }

    pub fn with_default_concepts(
        mut self,
        prompt: Option<String>,
        safety: Option<String>,
    ) -> Result<Self> {
        for name in prompt.iter().chain(&safety) {
            self.subset(name)?;
        }
        self.prompt_concept = prompt;
        self.safety_concept = safety;
        Ok(self)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ModelFile =
            toml::from_str(text).map_err(|e| Error::Model(e.message().to_string()))?;
        Self::new(file.components, file.concepts)?
            .with_default_concepts(file.prompt_concept, file.safety_concept)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Model(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        let file = ModelFile {
            prompt_concept: self.prompt_concept.clone(),
            safety_concept: self.safety_concept.clone(),
            components: self.components.clone(),
            concepts: self.concepts.clone(),
        };
        toml::to_string(&file).expect("model serializes")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn concepts(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.concepts
    }

    pub fn prompt_concept(&self) -> Option<&str> {
        self.prompt_concept.as_deref()
    }

    pub fn safety_concept(&self) -> Option<&str> {
        self.safety_concept.as_deref()
    }

    pub fn subset(&self, concept: &str) -> Result<&[usize]> {
        self.concepts
            .get(concept)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownConcept(concept.to_string()))
    }

    fn components_for(&self, condition: &Condition) -> Result<Vec<usize>> {
        match condition.concept() {
            None => Ok((0..self.components.len()).collect()),
            Some(name) => Ok(self.subset(name)?.to_vec()),
        }
    }

    /// `ε*(z, σ) = σ · Σ_k r_k (z − m_k) / (v_k + σ²)` over the condition's
    /// components, with responsibilities `r_k` from a log-sum-exp.
    pub fn noise_prediction(
        &self,
        z: &LatentTensor,
        sigma: f64,
        condition: &Condition,
    ) -> Result<LatentTensor> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Invalid(format!(
                "sigma must be finite and >= 0, got {sigma}"
            )));
        }
        if z.len() != self.dim {
            return Err(Error::ShapeMismatch {
                left: z.shape().to_vec(),
                right: vec![self.dim],
            });
        }
        let subset = self.components_for(condition)?;
        let zs = z.data();
        let s2 = sigma * sigma;
        let half_dim = 0.5 * self.dim as f64;
        let logits: Vec<f64> = subset
            .iter()
            .map(|&k| {
                let c = &self.components[k];
                let var = c.variance + s2;
                let sq: f64 = zs.iter().zip(&c.mean).map(|(z, m)| (z - m) * (z - m)).sum();
                c.weight.ln() - half_dim * var.ln() - 0.5 * sq / var
            })
            .collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let norm: f64 = unnorm.iter().sum();

        let mut eps = vec![0.0; self.dim];
        for (&k, u) in subset.iter().zip(&unnorm) {
            let c = &self.components[k];
            let r = u / norm;
            let var = c.variance + s2;
            for ((e, z), m) in eps.iter_mut().zip(zs).zip(&c.mean) {
                *e += r * (z - m) / var;
            }
        }
        LatentTensor::new(
            z.shape().to_vec(),
            eps.into_iter().map(|g| sigma * g).collect(),
        )
    }

    /// Index of the closest component mean; ties go to the lowest index.
    pub fn nearest_component(&self, point: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.components.iter().enumerate() {
            let d: f64 = point
                .iter()
                .zip(&c.mean)
                .map(|(p, m)| (p - m) * (p - m))
                .sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }
}

impl NoisePredictor for MixtureModel {
    fn predict(&self, z: &LatentTensor, sigma: f64, condition: &Condition) -> Result<LatentTensor> {
        self.noise_prediction(z, sigma, condition)
    }

    fn latent_shape(&self) -> Vec<usize> {
        vec![self.dim]
    }
}

/// Fraction of samples whose nearest component belongs to `concept`.
pub fn mode_fraction(samples: &[LatentTensor], model: &MixtureModel, concept: &str) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invalid(
            "mode_fraction needs at least one sample".into(),
        ));
    }
    let subset = model.subset(concept)?;
    let hits = samples
        .iter()
        .filter(|s| subset.contains(&model.nearest_component(s.data())))
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> LatentTensor {
        LatentTensor::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn standard_normal_closed_form() {
        let m = MixtureModel::standard_normal(1);
        let u = Condition::unconditional();
        assert_eq!(m.predict(&t(&[0.0]), 3.0, &u).unwrap().data(), &[0.0]);
        assert_eq!(m.predict(&t(&[1.0]), 1.0, &u).unwrap().data(), &[0.5]);
        for (z, s) in [(0.7, 0.3), (-2.0, 14.0), (5.0, 0.01)] {
            let got = m.predict(&t(&[z]), s, &u).unwrap().data()[0];
            assert!((got - s * z / (1.0 + s * s)).abs() <= 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_vanishes_on_axis() {
        let m = MixtureModel::default_two_mode();
        let e = m
            .predict(&t(&[0.0, 0.0]), 0.8, &Condition::prompt("all"))
            .unwrap();
        assert_eq!(e.data()[0], 0.0);
    }

    #[test]
    fn restriction_recovers_single_gaussian() {
        let m = MixtureModel::default_two_mode();
        let z = [1.3, -0.4];
        let s: f64 = 0.6;
        let e = m.predict(&t(&z), s, &Condition::safety("unsafe")).unwrap();
        let var = 0.25 + s * s;
        let expect = [s * (z[0] - 2.0) / var, s * z[1] / var];
        for (a, b) in e.data().iter().zip(expect) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn unknown_concept_rejected() {
        let m = MixtureModel::default_two_mode();
        let err = m
            .predict(&t(&[0.0, 0.0]), 1.0, &Condition::prompt("nope"))
            .unwrap_err();
        assert!(matches!(err, Error::UnknownConcept(_)));
    }

    #[test]
    fn negative_sigma_rejected() {
        let m = MixtureModel::default_two_mode();
        assert!(m
            .predict(&t(&[0.0, 0.0]), -1.0, &Condition::unconditional())
            .is_err());
    }

    #[test]
    fn unconditional_cannot_carry_concept() {
        assert!(Condition::new(ConditionTag::Unconditional, Some("all".into())).is_err());
        assert!(Condition::new(ConditionTag::Safety, Some("all".into())).is_ok());
    }

    #[test]
    fn invalid_models_rejected() {
        let c = |w: f64, v: f64, mean: Vec<f64>| Component {
            weight: w,
            mean,
            variance: v,
        };
        assert!(MixtureModel::new(vec![], BTreeMap::new()).is_err());
        assert!(MixtureModel::new(vec![c(0.0, 1.0, vec![0.0])], BTreeMap::new()).is_err());
        assert!(MixtureModel::new(vec![c(1.0, 0.0, vec![0.0])], BTreeMap::new()).is_err());
        assert!(MixtureModel::new(
            vec![c(1.0, 1.0, vec![0.0]), c(1.0, 1.0, vec![0.0, 1.0])],
            BTreeMap::new()
        )
        .is_err());
        let empty = BTreeMap::from([("x".to_string(), vec![])]);
        assert!(MixtureModel::new(vec![c(1.0, 1.0, vec![0.0])], empty).is_err());
        let oob = BTreeMap::from([("x".to_string(), vec![3])]);
        assert!(MixtureModel::new(vec![c(1.0, 1.0, vec![0.0])], oob).is_err());
    }

    #[test]
    fn weights_are_normalized() {
        let c = |w: f64, x: f64| Component {
            weight: w,
            mean: vec![x],
            variance: 1.0,
        };
        let m = MixtureModel::new(vec![c(3.0, 0.0), c(1.0, 1.0)], BTreeMap::new()).unwrap();
        let total: f64 = m.components().iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() <= 1e-12);
        assert_eq!(m.components()[0].weight, 0.75);
    }

    #[test]
    fn mode_fraction_examples() {
        let m = MixtureModel::default_two_mode();
        let at_unsafe = vec![t(&[2.0, 0.0]); 5];
        assert_eq!(mode_fraction(&at_unsafe, &m, "unsafe").unwrap(), 1.0);
        let safe = vec![t(&[-2.1, 0.3]), t(&[-0.5, 4.0])];
        assert_eq!(mode_fraction(&safe, &m, "unsafe").unwrap(), 0.0);
        let mixed = [
            t(&[1.5, 0.0]),
            t(&[-1.0, 0.0]),
            t(&[-3.0, 1.0]),
            t(&[-0.1, -2.0]),
        ];
        assert_eq!(mode_fraction(&mixed, &m, "unsafe").unwrap(), 0.25);
        // equidistant point goes to component 0
        assert_eq!(mode_fraction(&[t(&[0.0, 1.0])], &m, "safe").unwrap(), 1.0);
        assert!(mode_fraction(&[], &m, "unsafe").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let m = MixtureModel::default_two_mode();
        let back = MixtureModel::from_toml_str(&m.to_toml_string()).unwrap();
        assert_eq!(back, m);
        assert!(MixtureModel::from_toml_str("components = []").is_err());
        let bad = m
            .to_toml_string()
            .replace("safety_concept = \"unsafe\"", "safety_concept = \"nope\"");
        assert!(MixtureModel::from_toml_str(&bad).is_err());
    }
}
