use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header names, in the order they are written.
pub const PROMPT_COLUMNS: [&str; 13] = [
    "prompt",
    "categories",
    "hard",
    "inappropriate_percentage",
    "nudity_percentage",
    "q16_percentage",
    "sd_safety_percentage",
    "prompt_toxicity",
    "lexica_url",
    "sd_seed",
    "sd_guidance_scale",
    "sd_image_width",
    "sd_image_height",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Hate,
    Harassment,
    Violence,
    SelfHarm,
    Sexual,
    Shocking,
    IllegalActivity,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Hate,
        Category::Harassment,
        Category::Violence,
        Category::SelfHarm,
        Category::Sexual,
        Category::Shocking,
        Category::IllegalActivity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Hate => "hate",
            Category::Harassment => "harassment",
            Category::Violence => "violence",
            Category::SelfHarm => "self-harm",
            Category::Sexual => "sexual",
            Category::Shocking => "shocking",
            Category::IllegalActivity => "illegal-activity",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '_'], "-");
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| format!("unknown category `{}`", s.trim()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt: String,
    /// Sorted, without duplicates.
    pub categories: Vec<Category>,
    pub hard: bool,
    pub inappropriate_percentage: f64,
    pub nudity_percentage: f64,
    pub q16_percentage: f64,
    pub sd_safety_percentage: f64,
    pub prompt_toxicity: f64,
    pub lexica_url: String,
    pub seed: u64,
    pub guidance_scale: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl PromptRecord {
    pub fn has_category(&self, c: Category) -> bool {
        self.categories.contains(&c)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.categories.is_empty() {
            return Err("categories must not be empty".into());
        }
        for (name, v) in [
            ("inappropriate_percentage", self.inappropriate_percentage),
            ("nudity_percentage", self.nudity_percentage),
            ("q16_percentage", self.q16_percentage),
            ("sd_safety_percentage", self.sd_safety_percentage),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(format!("column `{name}`: {v} outside the range [0, 100]"));
            }
        }
        if !(0.0..=1.0).contains(&self.prompt_toxicity) {
            return Err(format!(
                "column `prompt_toxicity`: {} outside the range [0, 1]",
                self.prompt_toxicity
            ));
        }
        if !self.guidance_scale.is_finite() {
            return Err("column `sd_guidance_scale`: must be finite".into());
        }
        Ok(())
    }
}

fn parse_categories(field: &str) -> std::result::Result<Vec<Category>, String> {
    let mut cats = field
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Category::from_str)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    cats.sort();
    cats.dedup();
    Ok(cats)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Parses prompts CSV from any reader; `source` names it in error messages.
pub fn read_prompts<R: Read>(reader: R, source: &str) -> Result<Vec<PromptRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim(), i))
        .collect();
    let mut cols = [0usize; 13];
    for (slot, name) in cols.iter_mut().zip(PROMPT_COLUMNS) {
        *slot = *index.get(name).ok_or_else(|| Error::MissingColumn {
            path: source.to_string(),
            column: name.to_string(),
        })?;
    }

    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        // header is line 1
        let line = row.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        let fail = |message: String| Error::Row {
            path: source.to_string(),
            row: line,
            message,
        };
        let field = |k: usize| row.get(cols[k]).unwrap_or("").trim();
        let num = |k: usize| -> Result<f64> {
            field(k).parse::<f64>().map_err(|_| {
                fail(format!(
                    "column `{}`: malformed number `{}`",
                    PROMPT_COLUMNS[k],
                    field(k)
                ))
            })
        };
        let int = |k: usize| -> Result<u64> {
            field(k).parse::<u64>().map_err(|_| {
                fail(format!(
                    "column `{}`: malformed integer `{}`",
                    PROMPT_COLUMNS[k],
                    field(k)
                ))
            })
        };
        let dim = |k: usize| -> Result<u32> {
            u32::try_from(int(k)?)
                .map_err(|_| fail(format!("column `{}`: out of range", PROMPT_COLUMNS[k])))
        };
        let record = PromptRecord {
            prompt: row.get(cols[0]).unwrap_or("").to_string(),
            categories: parse_categories(field(1))
                .map_err(|m| fail(format!("column `categories`: {m}")))?,
            hard: parse_bool(field(2))
                .ok_or_else(|| fail(format!("column `hard`: malformed boolean `{}`", field(2))))?,
            inappropriate_percentage: num(3)?,
            nudity_percentage: num(4)?,
            q16_percentage: num(5)?,
            sd_safety_percentage: num(6)?,
            prompt_toxicity: num(7)?,
            lexica_url: field(8).to_string(),
            seed: int(9)?,
            guidance_scale: num(10)?,
            image_width: dim(11)?,
            image_height: dim(12)?,
        };
        record.check().map_err(fail)?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_prompts(path: impl AsRef<Path>) -> Result<Vec<PromptRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_prompts(file, &path.display().to_string())
}

/// Writes records with the [`PROMPT_COLUMNS`] header; categories are joined
/// with commas inside one quoted field.
pub fn write_prompts<W: Write>(writer: W, records: &[PromptRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PROMPT_COLUMNS)?;
    for r in records {
        let cats: Vec<&str> = r.categories.iter().map(|c| c.as_str()).collect();
        w.write_record([
            r.prompt.clone(),
            cats.join(","),
            u8::from(r.hard).to_string(),
            r.inappropriate_percentage.to_string(),
            r.nudity_percentage.to_string(),
            r.q16_percentage.to_string(),
            r.sd_safety_percentage.to_string(),
            r.prompt_toxicity.to_string(),
            r.lexica_url.clone(),
            r.seed.to_string(),
            r.guidance_scale.to_string(),
            r.image_width.to_string(),
            r.image_height.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
