use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

use super::dataset::{Category, PromptRecord};
use super::labels::LabelMatrix;
use super::metrics::{expected_max_inappropriateness, inappropriate_probability, ExpectedMax};

/// Bootstrap settings. Every (config, category) cell starts from a fresh
/// `RngState::new(seed)`, so cells use common random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub n: usize,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            n: 25,
            resamples: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    /// Category name, or `overall`.
    pub category: String,
    /// False when no prompt carries the category; metrics are then null.
    pub present: bool,
    pub prompts: usize,
    /// Number of labelled images, null for fraction-only labels.
    pub images: Option<usize>,
    pub probability: Option<f64>,
    pub expected_max: Option<ExpectedMax>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigReport {
    pub config: String,
    /// One row per category in canonical order.
    pub categories: Vec<CategoryRow>,
    pub overall: CategoryRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool_version: String,
    pub prompt_count: usize,
    pub configs: Vec<String>,
    pub bootstrap: BootstrapOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: ReportMetadata,
    pub results: Vec<ConfigReport>,
}

fn row(
    name: &str,
    ids: &[usize],
    labels: &LabelMatrix,
    opts: &BootstrapOptions,
) -> Result<CategoryRow> {
    if ids.is_empty() {
        return Ok(CategoryRow {
            category: name.to_string(),
            present: false,
            prompts: 0,
            images: None,
            probability: None,
            expected_max: None,
        });
    }
    let fractions: Vec<f64> = ids
        .iter()
        .map(|&i| labels.fraction(i).expect("keys checked"))
        .collect();
    let images: Option<usize> = ids
        .iter()
        .map(|&i| labels.get(i).and_then(|l| l.image_count()))
        .sum();
    let mut rng = RngState::new(opts.seed);
    Ok(CategoryRow {
        category: name.to_string(),
        present: true,
        prompts: ids.len(),
        images,
        probability: Some(inappropriate_probability(labels, ids)?),
        expected_max: Some(expected_max_inappropriateness(
            &fractions,
            opts.n,
            opts.resamples,
            &mut rng,
        )?),
    })
}

/// Per-category and overall metrics for every labelled config. A prompt counts
/// toward every category it carries. Each label set must cover exactly the
/// prompt ids `0..prompts.len()`.
pub fn build_report(
    prompts: &[PromptRecord],
    labels: &[(String, LabelMatrix)],
    opts: &BootstrapOptions,
) -> Result<EvalReport> {
    if prompts.is_empty() {
        return Err(Error::Invalid("no prompts".into()));
    }
    if labels.is_empty() {
        return Err(Error::Invalid("no label sets".into()));
    }
    let mut seen = BTreeSet::new();
    for (name, matrix) in labels {
        if !seen.insert(name.as_str()) {
            return Err(Error::Invalid(format!("duplicate config name `{name}`")));
        }
        if let Some(extra) = matrix.ids().find(|&id| id >= prompts.len()) {
            return Err(Error::Invalid(format!(
                "labels for `{name}` refer to prompt {extra}, but only {} prompts exist",
                prompts.len()
            )));
        }
        if let Some(missing) = (0..prompts.len()).find(|&id| matrix.get(id).is_none()) {
            return Err(Error::Invalid(format!(
                "labels for `{name}` lack prompt {missing}"
            )));
        }
    }

    let all: Vec<usize> = (0..prompts.len()).collect();
    let per_category: Vec<(Category, Vec<usize>)> = Category::ALL
        .into_iter()
        .map(|c| {
            (
                c,
                all.iter()
                    .copied()
                    .filter(|&i| prompts[i].has_category(c))
                    .collect(),
            )
        })
        .collect();

    let results = labels
        .iter()
        .map(|(name, matrix)| {
            Ok(ConfigReport {
                config: name.clone(),
                categories: per_category
                    .iter()
                    .map(|(c, ids)| row(c.as_str(), ids, matrix, opts))
                    .collect::<Result<_>>()?,
                overall: row("overall", &all, matrix, opts)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EvalReport {
        metadata: ReportMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            prompt_count: prompts.len(),
            configs: labels.iter().map(|(n, _)| n.clone()).collect(),
            bootstrap: *opts,
        },
        results,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Category-by-config grid: one row per category plus `overall`, three
    /// columns per config. Absent categories leave their cells empty.
    pub fn write_grid_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["category".to_string()];
        for r in &self.results {
            for suffix in ["probability", "exp_max_mean", "exp_max_std"] {
                header.push(format!("{}_{suffix}", r.config));
            }
        }
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for i in 0..=Category::ALL.len() {
            let label = Category::ALL.get(i).map_or("overall", |c| c.as_str());
            let mut line = vec![label.to_string()];
            for r in &self.results {
                let cell = r.categories.get(i).unwrap_or(&r.overall);
                line.push(opt(cell.probability));
                line.push(opt(cell.expected_max.map(|e| e.mean)));
                line.push(opt(cell.expected_max.map(|e| e.std)));
            }
            w.write_record(&line)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}
