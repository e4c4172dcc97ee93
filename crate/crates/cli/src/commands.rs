//! The `sample`, `sweep` and `bench` subcommands.

use std::path::PathBuf;

use serde::Serialize;
use sld_core::bench::{build_report, load_labels, load_prompts, BootstrapOptions};
use sld_core::mixture::mode_fraction;
use sld_core::{
    sample_batch, Condition, Conditioning, GuidanceConfig, LatentTensor, MixtureModel,
    SamplerState, SchedulerConfig,
};

use crate::args::{BenchArgs, ModelArgs, SampleArgs, SweepArgs};
use crate::output::{input_file, output_path, write_file, Failure, RunManifest};

const BUILTIN_MODEL: &str = "builtin:two-mode";

#[derive(Debug, Serialize)]
struct ModelInfo {
    model: String,
    prompt_concept: String,
    safety_concept: String,
}

fn model_info(args: &ModelArgs, model: &MixtureModel) -> ModelInfo {
    ModelInfo {
        model: args
            .model
            .as_ref()
            .map_or(BUILTIN_MODEL.to_string(), |p| p.display().to_string()),
        prompt_concept: model.prompt_concept().unwrap_or_default().to_string(),
        safety_concept: model.safety_concept().unwrap_or_default().to_string(),
    }
}

fn conditioning(model: &MixtureModel) -> Conditioning {
    // ModelArgs::load guarantees both concepts are set
    Conditioning {
        prompt: Condition::prompt(model.prompt_concept().unwrap_or_default()),
        safety: Condition::safety(model.safety_concept().unwrap_or_default()),
    }
}

fn csv_bytes(writer: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, Failure> {
    writer
        .into_inner()
        .map_err(|e| Failure::runtime(format!("cannot finish CSV: {e}")))
}

fn csv_failure(e: csv::Error) -> Failure {
    Failure::runtime(format!("cannot write CSV: {e}"))
}

fn nonzero(name: &str, value: usize) -> Result<(), Failure> {
    if value == 0 {
        Err(Failure::usage(format!("--{name} must be at least 1")))
    } else {
        Ok(())
    }
}

fn samples_csv(samples: &[LatentTensor], dim: usize) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record((0..dim).map(|i| format!("x{i}")))
        .map_err(csv_failure)?;
    for s in samples {
        w.write_record(s.data().iter().map(|v| v.to_string()))
            .map_err(csv_failure)?;
    }
    csv_bytes(w)
}

#[derive(Debug, Serialize)]
struct SampleManifest {
    #[serde(flatten)]
    model: ModelInfo,
    n: usize,
    guidance: GuidanceConfig,
    scheduler: SchedulerConfig,
}

pub fn sample(args: &SampleArgs, argv: &[String]) -> Result<(), Failure> {
    nonzero("n", args.n)?;
    let model = args.model.load()?;
    let scheduler = args.scheduler.config();
    let sampler = scheduler.sampler()?;
    let config = args.guidance.resolve(sampler.num_steps())?;

    let samples = sample_batch(
        &model,
        &conditioning(&model),
        &sampler,
        &config,
        args.seed,
        args.n,
    )?;
    let out = output_path(&args.out);
    write_file(&out, &samples_csv(&samples, model.dim())?)?;

    for concept in model.concepts().keys() {
        println!(
            "{concept}\t{:.4}",
            mode_fraction(&samples, &model, concept)?
        );
    }
    let manifest = SampleManifest {
        model: model_info(&args.model, &model),
        n: args.n,
        guidance: config,
        scheduler,
    };
    let mut manifest = RunManifest::new("sample", argv, Some(args.seed), manifest).output(&out);
    if let Some(path) = &args.model.model {
        manifest = manifest.input(path);
    }
    manifest.write()
}

#[derive(Debug, Serialize)]
struct SweepEntry {
    name: String,
    guidance: GuidanceConfig,
}

#[derive(Debug, Serialize)]
struct SweepManifest {
    #[serde(flatten)]
    model: ModelInfo,
    n: usize,
    configs: Vec<SweepEntry>,
    scheduler: SchedulerConfig,
}

fn parse_presets(list: &str, sampler: &SamplerState) -> Result<Vec<SweepEntry>, Failure> {
    if list.trim().is_empty() {
        return Err(Failure::usage(
            "--presets must name at least one configuration",
        ));
    }
    list.split(',')
        .map(|raw| {
            let name = raw.trim();
            if name.is_empty() {
                return Err(Failure::usage(format!("empty entry in --presets `{list}`")));
            }
            let guidance = GuidanceConfig::from_name_or_path(name)?;
            guidance.validate(Some(sampler.num_steps()))?;
            Ok(SweepEntry {
                name: name.to_string(),
                guidance,
            })
        })
        .collect()
}

/// Every configuration reuses `--seed`, so trajectory `i` starts from the same
/// noise under each of them.
pub fn sweep(args: &SweepArgs, argv: &[String]) -> Result<(), Failure> {
    nonzero("n", args.n)?;
    let model = args.model.load()?;
    let scheduler = args.scheduler.config();
    let sampler = scheduler.sampler()?;
    let entries = parse_presets(&args.presets, &sampler)?;
    let cond = conditioning(&model);
    let unsafe_concept = model.safety_concept().unwrap_or_default().to_string();

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "config",
        "mode",
        "s_g",
        "s_S",
        "lambda",
        "delta",
        "s_m",
        "beta_m",
        "unsafe_fraction",
        "n",
    ])
    .map_err(csv_failure)?;
    for entry in &entries {
        let g = &entry.guidance;
        let samples = sample_batch(&model, &cond, &sampler, g, args.seed, args.n)?;
        let fraction = mode_fraction(&samples, &model, &unsafe_concept)?;
        println!("{:<24} {fraction:.4}", entry.name);
        w.write_record([
            entry.name.clone(),
            g.mode.to_string(),
            g.s_g.to_string(),
            g.s_s.to_string(),
            g.lambda.to_string(),
            g.delta.to_string(),
            g.s_m.to_string(),
            g.beta_m.to_string(),
            fraction.to_string(),
            args.n.to_string(),
        ])
        .map_err(csv_failure)?;
    }
    let out = output_path(&args.out);
    write_file(&out, &csv_bytes(w)?)?;

    let manifest = SweepManifest {
        model: model_info(&args.model, &model),
        n: args.n,
        configs: entries,
        scheduler,
    };
    let mut manifest = RunManifest::new("sweep", argv, Some(args.seed), manifest).output(&out);
    if let Some(path) = &args.model.model {
        manifest = manifest.input(path);
    }
    manifest.write()
}

#[derive(Debug, Serialize)]
struct BenchManifest {
    bootstrap: BootstrapOptions,
    labels: Vec<(String, String)>,
}

fn parse_label_arg(arg: &str) -> Result<(String, PathBuf), Failure> {
    match arg.split_once('=') {
        Some((name, path)) if !name.trim().is_empty() && !path.is_empty() => {
            Ok((name.trim().to_string(), PathBuf::from(path)))
        }
        _ => Err(Failure::usage(format!(
            "--labels expects NAME=FILE, got `{arg}`"
        ))),
    }
}

pub fn bench(args: &BenchArgs, argv: &[String]) -> Result<(), Failure> {
    nonzero("n", args.n)?;
    nonzero("resamples", args.resamples)?;
    let label_args = args
        .labels
        .iter()
        .map(|a| parse_label_arg(a))
        .collect::<Result<Vec<_>, _>>()?;
    let prompts = load_prompts(input_file(&args.prompts)?)?;
    let mut labels = Vec::with_capacity(label_args.len());
    for (name, path) in &label_args {
        labels.push((name.clone(), load_labels(input_file(path)?)?));
    }
    let opts = BootstrapOptions {
        n: args.n,
        resamples: args.resamples,
        seed: args.seed,
    };
    let report = build_report(&prompts, &labels, &opts)?;

    let mut outputs: Vec<PathBuf> = Vec::new();
    if let Some(path) = &args.out_json {
        let out = output_path(path);
        write_file(&out, format!("{}\n", report.to_json()?).as_bytes())?;
        outputs.push(out);
    }
    if let Some(path) = &args.out_csv {
        let mut bytes = Vec::new();
        report.write_grid_csv(&mut bytes)?;
        let out = output_path(path);
        write_file(&out, &bytes)?;
        outputs.push(out);
    }
    for result in &report.results {
        let o = &result.overall;
        let em = o.expected_max.as_ref();
        println!(
            "{:<24} probability {:.4}  expected max {:.4} ± {:.4}",
            result.config,
            o.probability.unwrap_or(f64::NAN),
            em.map_or(f64::NAN, |e| e.mean),
            em.map_or(f64::NAN, |e| e.std),
        );
    }

    let manifest = BenchManifest {
        bootstrap: opts,
        labels: label_args
            .iter()
            .map(|(n, p)| (n.clone(), p.display().to_string()))
            .collect(),
    };
    let mut manifest =
        RunManifest::new("bench", argv, Some(args.seed), manifest).input(&args.prompts);
    for (_, path) in &label_args {
        manifest = manifest.input(path);
    }
    for out in &outputs {
        manifest = manifest.output(out);
    }
    manifest.write()
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;

    #[test]
    fn label_args() {
        assert_eq!(
            parse_label_arg("sld=a/b.csv").unwrap(),
            ("sld".to_string(), PathBuf::from("a/b.csv"))
        );
        assert_eq!(parse_label_arg("x=y=z").unwrap().1, Path::new("y=z"));
        for bad in ["nofile", "=x.csv", "name="] {
            assert_eq!(parse_label_arg(bad).unwrap_err().code, 2);
        }
    }

    #[test]
    fn preset_lists() {
        let sampler = SchedulerConfig::default().sampler().unwrap();
        assert_eq!(parse_presets("cfg, weak,max", &sampler).unwrap().len(), 3);
        assert_eq!(parse_presets("", &sampler).unwrap_err().code, 2);
        assert_eq!(parse_presets("cfg,,max", &sampler).unwrap_err().code, 2);
        let err = parse_presets("cfg,bogus", &sampler).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("medium"));
    }
}
