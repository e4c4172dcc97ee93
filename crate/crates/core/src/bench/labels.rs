use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Labels for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptLabels {
    /// One binary label per generated image, by image index.
    Images(Vec<bool>),
    /// Pre-aggregated inappropriate fraction; counts as a single unit of weight.
    Fraction(f64),
}

impl PromptLabels {
    pub fn fraction(&self) -> f64 {
        match self {
            PromptLabels::Images(v) => v.iter().filter(|&&b| b).count() as f64 / v.len() as f64,
            PromptLabels::Fraction(f) => *f,
        }
    }

    /// `(positives, weight)`: image counts for per-image labels, `(f, 1)` otherwise.
    pub(crate) fn mass(&self) -> (f64, f64) {
        match self {
            PromptLabels::Images(v) => (v.iter().filter(|&&b| b).count() as f64, v.len() as f64),
            PromptLabels::Fraction(f) => (*f, 1.0),
        }
    }

    pub fn image_count(&self) -> Option<usize> {
        match self {
            PromptLabels::Images(v) => Some(v.len()),
            PromptLabels::Fraction(_) => None,
        }
    }
}

/// Labels for a set of prompts, keyed by prompt id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelMatrix {
    entries: BTreeMap<usize, PromptLabels>,
}

impl LabelMatrix {
    pub fn from_images(entries: impl IntoIterator<Item = (usize, Vec<bool>)>) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (id, labels) in entries {
            if labels.is_empty() {
                return Err(Error::Invalid(format!("prompt {id} has no image labels")));
            }
            if out.insert(id, PromptLabels::Images(labels)).is_some() {
                return Err(Error::Invalid(format!("duplicate prompt id {id}")));
            }
        }
        Ok(Self { entries: out })
    }

    pub fn from_fractions(entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (id, f) in entries {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Invalid(format!(
                    "prompt {id}: fraction {f} outside [0, 1]"
                )));
            }
            if out.insert(id, PromptLabels::Fraction(f)).is_some() {
                return Err(Error::Invalid(format!("duplicate prompt id {id}")));
            }
        }
        Ok(Self { entries: out })
    }

    pub fn get(&self, id: usize) -> Option<&PromptLabels> {
        self.entries.get(&id)
    }

    pub fn fraction(&self, id: usize) -> Option<f64> {
        self.get(id).map(PromptLabels::fraction)
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reads `prompt_id,image_index,label` (per image) or `prompt_id,fraction`
/// (per prompt) CSV. Per-image files must give each prompt contiguous image
/// indices starting at 0.
pub fn read_labels<R: Read>(reader: R, source: &str) -> Result<LabelMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let missing = |column: &str| Error::MissingColumn {
        path: source.to_string(),
        column: column.to_string(),
    };
    let id_col = col("prompt_id").ok_or_else(|| missing("prompt_id"))?;

    let per_image = col("label").is_some();
    let (a_col, b_col) = if per_image {
        (
            col("image_index").ok_or_else(|| missing("image_index"))?,
            col("label").unwrap(),
        )
    } else {
        (col("fraction").ok_or_else(|| missing("label"))?, 0)
    };

    let mut images: HashMap<usize, BTreeMap<usize, bool>> = HashMap::new();
    let mut fractions = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        let fail = |message: String| Error::Row {
            path: source.to_string(),
            row: line,
            message,
        };
        let get = |c: usize| row.get(c).unwrap_or("").trim();
        let int = |c: usize, name: &str| {
            get(c)
                .parse::<usize>()
                .map_err(|_| fail(format!("column `{name}`: malformed integer `{}`", get(c))))
        };
        let id = int(id_col, "prompt_id")?;
        if per_image {
            let idx = int(a_col, "image_index")?;
            let label = match get(b_col) {
                "1" => true,
                "0" => false,
                other => {
                    return Err(fail(format!(
                        "column `label`: expected 0 or 1, got `{other}`"
                    )))
                }
            };
            if images.entry(id).or_default().insert(idx, label).is_some() {
                return Err(fail(format!("duplicate label for prompt {id} image {idx}")));
            }
        } else {
            let f = get(a_col).parse::<f64>().map_err(|_| {
                fail(format!(
                    "column `fraction`: malformed number `{}`",
                    get(a_col)
                ))
            })?;
            if !(0.0..=1.0).contains(&f) {
                return Err(fail(format!("column `fraction`: {f} outside [0, 1]")));
            }
            fractions.push((id, f));
        }
    }

    if per_image {
        let mut entries = Vec::with_capacity(images.len());
        for (id, by_index) in images {
            if by_index
                .keys()
                .enumerate()
                .any(|(expect, &got)| expect != got)
            {
                return Err(Error::Invalid(format!(
                    "{source}: prompt {id} image indices must be 0..{}",
                    by_index.len()
                )));
            }
            entries.push((id, by_index.into_values().collect()));
        }
        LabelMatrix::from_images(entries)
    } else {
        LabelMatrix::from_fractions(fractions).map_err(|e| Error::Invalid(format!("{source}: {e}")))
    }
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMatrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(file, &path.display().to_string())
}
