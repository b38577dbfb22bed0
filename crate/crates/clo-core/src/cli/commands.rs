//! Pipeline commands. Every command writes its primary artifacts plus a
//! manifest capturing the resolved configuration and content hashes, and
//! `replay` re-executes a manifest and verifies the outputs byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataprep::{build_splits, load_dataset, save_dataset, DatasetSplits};
use crate::error::{Error, Result};
use crate::eval::{data_size_sweep, evaluate, EvalReport, SweepRow};
use crate::nnet::{load_checkpoint, save_checkpoint, PolicyModel};
use crate::objectives::NllMode;
use crate::synthlang::{build_vocabulary, gen_corpus, Vocabulary};
use crate::trainer::{pretrain_base, train, write_train_log_csv, Method, UpdateMask};

use super::config::RunConfig;
use super::manifest::{hash_file, manifest_path_for, Manifest};

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Sft => write!(f, "sft"),
            Method::SftDpo => write!(f, "sft-dpo"),
            Method::Clo => write!(f, "clo"),
        }
    }
}

fn config_snapshot(config: &RunConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(config)?)
}

fn vocab_of(config: &RunConfig) -> Result<Vocabulary> {
    build_vocabulary(config.vocab.total_size, config.vocab.lang_fraction)
}

/// Generates the cross-lingual corpus and writes it as an unsplit dataset
/// file (everything in the train section).
pub fn cmd_gen_data(config: &RunConfig, out: &Path) -> Result<Manifest> {
    let vocab = vocab_of(config)?;
    let corpus = gen_corpus(
        config.corpus.n,
        config.corpus_seed(),
        &config.corpus.task_mix,
        config.corpus.len_range,
        &vocab,
    )?;
    let splits = DatasetSplits {
        train: corpus,
        validation: Vec::new(),
        split_seed: config.split_seed(),
    };
    save_dataset(out, &splits, &vocab)?;
    let mut manifest = Manifest::new(&config.run_id, "gen-data", config_snapshot(config)?);
    manifest.record_output(&file_name(out), out)?;
    manifest.save(&manifest_path_for(out))?;
    Ok(manifest)
}

/// Re-splits a dataset file into train/validation.
pub fn cmd_prepare(
    dataset: &Path,
    val_fraction: f64,
    seed: Option<u64>,
    out: &Path,
) -> Result<Manifest> {
    let (splits, vocab) = load_dataset(dataset)?;
    let seed = seed.unwrap_or(splits.split_seed);
    let mut all = splits.train;
    all.extend(splits.validation);
    let resplit = build_splits(all, val_fraction, seed)?;
    save_dataset(out, &resplit, &vocab)?;
    let mut manifest = Manifest::new(
        "prepare",
        "prepare",
        serde_json::json!({ "val_fraction": val_fraction, "seed": seed }),
    );
    manifest.arg("dataset", dataset.display());
    manifest.arg("val_fraction", val_fraction);
    manifest.arg("seed", seed);
    manifest.record_input(dataset)?;
    manifest.record_output(&file_name(out), out)?;
    manifest.save(&manifest_path_for(out))?;
    Ok(manifest)
}

/// Pretrains the source-language base model and writes its checkpoint plus
/// the training log.
pub fn cmd_pretrain(config: &RunConfig, out: &Path) -> Result<Manifest> {
    let vocab = vocab_of(config)?;
    let (model, log) = pretrain_base(
        &config.model_config(),
        &vocab,
        &config.pretrain_corpus(),
        &config.pretrain_config(),
    )?;
    save_checkpoint(out, &model)?;
    let log_path = sibling(out, ".log.csv");
    write_train_log_csv(&log_path, &log)?;
    let mut manifest = Manifest::new(&config.run_id, "pretrain", config_snapshot(config)?);
    manifest.record_output(&file_name(out), out)?;
    manifest.record_output(&file_name(&log_path), &log_path)?;
    manifest.save(&manifest_path_for(out))?;
    Ok(manifest)
}

/// Flag overrides accepted by the train command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOverrides {
    pub method: Option<Method>,
    pub mask: Option<UpdateMask>,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub nll: Option<NllMode>,
}

impl TrainOverrides {
    pub fn apply(&self, config: &RunConfig) -> RunConfig {
        let mut resolved = config.clone();
        if let Some(m) = self.method {
            resolved.train.method = m;
        }
        if let Some(m) = self.mask {
            resolved.train.update_mask = m;
        }
        if let Some(l) = self.lambda {
            resolved.objective.lambda = l;
        }
        if let Some(b) = self.beta {
            resolved.objective.beta = b;
        }
        if let Some(n) = self.nll {
            resolved.objective.nll_mode = n;
        }
        resolved
    }
}

fn load_base(config: &RunConfig, base: &Path) -> Result<PolicyModel> {
    let model = load_checkpoint(base)?;
    if *model.config() != config.model_config() {
        return Err(Error::Config(format!(
            "checkpoint {} was built with a different model configuration",
            base.display()
        )));
    }
    Ok(model)
}

/// Transfer-trains from a base checkpoint on a prepared dataset.
pub fn cmd_train(
    config: &RunConfig,
    data: &Path,
    base: &Path,
    overrides: &TrainOverrides,
    out: &Path,
) -> Result<Manifest> {
    let resolved = overrides.apply(config);
    resolved.validate()?;
    let (splits, vocab) = load_dataset(data)?;
    if vocab != vocab_of(&resolved)? {
        return Err(Error::Config(
            "dataset vocabulary does not match the run configuration".into(),
        ));
    }
    let base_model = load_base(&resolved, base)?;
    let (model, log) = train(&base_model, &splits, &vocab, &resolved.train_config())?;
    save_checkpoint(out, &model)?;
    let log_path = sibling(out, ".log.csv");
    write_train_log_csv(&log_path, &log)?;
    let mut manifest = Manifest::new(&resolved.run_id, "train", config_snapshot(&resolved)?);
    manifest.arg("data", data.display());
    manifest.arg("base", base.display());
    manifest.record_input(data)?;
    manifest.record_input(base)?;
    manifest.record_output(&file_name(out), out)?;
    manifest.record_output(&file_name(&log_path), &log_path)?;
    manifest.save(&manifest_path_for(out))?;
    Ok(manifest)
}

fn eval_csv(report: &EvalReport, run_id: &str) -> String {
    let mut out = String::from(
        "run_id,model_id,seed,n_items,consistency_a,exact_match_a,mean_nll_a,\
         consistency_b,exact_match_b,mean_nll_b,mc_accuracy\n",
    );
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{}",
        run_id,
        report.model_id,
        report.seed,
        report.n_items,
        report.lang_a.consistency_rate,
        report.lang_a.exact_match,
        report.lang_a.mean_nll,
        report.lang_b.consistency_rate,
        report.lang_b.exact_match,
        report.lang_b.mean_nll,
        report.mc_accuracy
    );
    out
}

/// Evaluates a checkpoint, writing `{run_id}.eval.json` and
/// `{run_id}.eval.csv` into `out_dir`.
pub fn cmd_eval(config: &RunConfig, checkpoint: &Path, out_dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir)?;
    let vocab = vocab_of(config)?;
    let model = load_base(config, checkpoint)?;
    let model_id = hash_file(checkpoint)?[..12].to_string();
    let report = evaluate(&model, &vocab, &config.eval_config(), &model_id)?;
    let json_path = out_dir.join(format!("{}.eval.json", config.run_id));
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")?;
    let csv_path = out_dir.join(format!("{}.eval.csv", config.run_id));
    std::fs::write(&csv_path, eval_csv(&report, &config.run_id))?;
    let mut manifest = Manifest::new(&config.run_id, "eval", config_snapshot(config)?);
    manifest.arg("checkpoint", checkpoint.display());
    manifest.record_input(checkpoint)?;
    manifest.record_output(&file_name(&json_path), &json_path)?;
    manifest.record_output(&file_name(&csv_path), &csv_path)?;
    manifest.save(&manifest_path_for(&json_path))?;
    Ok(manifest)
}

/// Renders sweep rows in ascending-size order as CSV.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "size,method,consistency_b,exact_match_b,mean_nll_b,\
         consistency_a,exact_match_a,mean_nll_a,mc_accuracy\n",
    );
    for row in rows {
        let r = &row.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.size,
            row.method,
            r.lang_b.consistency_rate,
            r.lang_b.exact_match,
            r.lang_b.mean_nll,
            r.lang_a.consistency_rate,
            r.lang_a.exact_match,
            r.lang_a.mean_nll,
            r.mc_accuracy
        );
    }
    out
}

/// Trains SFT and the combined objective at each corpus size and writes
/// `{run_id}.sweep.csv`.
pub fn cmd_sweep(
    config: &RunConfig,
    base: &Path,
    sizes: &[usize],
    out_dir: &Path,
) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir)?;
    let vocab = vocab_of(config)?;
    let base_model = load_base(config, base)?;
    let corpus = gen_corpus(
        config.corpus.n,
        config.corpus_seed(),
        &config.corpus.task_mix,
        config.corpus.len_range,
        &vocab,
    )?;
    let rows = data_size_sweep(
        &base_model,
        &corpus,
        sizes,
        &config.train_config(),
        config.corpus.val_fraction,
        &config.eval_config(),
        &vocab,
    )?;
    let csv_path = out_dir.join(format!("{}.sweep.csv", config.run_id));
    std::fs::write(&csv_path, sweep_csv(&rows))?;
    let mut manifest = Manifest::new(&config.run_id, "sweep", config_snapshot(config)?);
    manifest.arg("base", base.display());
    manifest.arg(
        "sizes",
        sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    manifest.record_input(base)?;
    manifest.record_output(&file_name(&csv_path), &csv_path)?;
    manifest.save(&manifest_path_for(&csv_path))?;
    Ok(manifest)
}

/// Which ablation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblateStudy {
    Mask,
    Nll,
    Lambda,
}

impl std::fmt::Display for AblateStudy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AblateStudy::Mask => write!(f, "mask"),
            AblateStudy::Nll => write!(f, "nll"),
            AblateStudy::Lambda => write!(f, "lambda"),
        }
    }
}

/// Runs one ablation study over the combined objective and writes
/// `{run_id}.ablate-{study}.csv` with one row per arm.
pub fn cmd_ablate(
    config: &RunConfig,
    base: &Path,
    study: AblateStudy,
    out_dir: &Path,
) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir)?;
    let vocab = vocab_of(config)?;
    let base_model = load_base(config, base)?;
    let corpus = gen_corpus(
        config.corpus.n,
        config.corpus_seed(),
        &config.corpus.task_mix,
        config.corpus.len_range,
        &vocab,
    )?;
    let splits = build_splits(corpus, config.corpus.val_fraction, config.split_seed())?;

    let arms: Vec<(String, RunConfig)> = match study {
        AblateStudy::Mask => [UpdateMask::AttentionOnly, UpdateMask::Full]
            .into_iter()
            .map(|mask| {
                let mut c = config.clone();
                c.train.method = Method::Clo;
                c.train.update_mask = mask;
                (
                    match mask {
                        UpdateMask::AttentionOnly => "attention".to_string(),
                        UpdateMask::Full => "full".to_string(),
                    },
                    c,
                )
            })
            .collect(),
        AblateStudy::Nll => [NllMode::TargetOnly, NllMode::TargetAndEnglish]
            .into_iter()
            .map(|mode| {
                let mut c = config.clone();
                c.train.method = Method::Clo;
                c.objective.nll_mode = mode;
                (
                    match mode {
                        NllMode::TargetOnly => "target-only".to_string(),
                        NllMode::TargetAndEnglish => "both".to_string(),
                    },
                    c,
                )
            })
            .collect(),
        AblateStudy::Lambda => [0.0, 0.25, 0.5, 0.75, 1.0]
            .into_iter()
            .map(|lambda| {
                let mut c = config.clone();
                c.train.method = Method::Clo;
                c.objective.lambda = lambda;
                (format!("{lambda}"), c)
            })
            .collect(),
    };

    let mut out = String::from(
        "study,arm,consistency_b,exact_match_b,mean_nll_b,\
         consistency_a,exact_match_a,mean_nll_a,mc_accuracy\n",
    );
    for (arm, arm_config) in &arms {
        let (model, _) = train(
            &base_model,
            &splits,
            &vocab,
            &arm_config.train_config(),
        )?;
        let report = evaluate(
            &model,
            &vocab,
            &arm_config.eval_config(),
            &format!("ablate-{study}-{arm}"),
        )?;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            study,
            arm,
            report.lang_b.consistency_rate,
            report.lang_b.exact_match,
            report.lang_b.mean_nll,
            report.lang_a.consistency_rate,
            report.lang_a.exact_match,
            report.lang_a.mean_nll,
            report.mc_accuracy
        );
    }
    let csv_path = out_dir.join(format!("{}.ablate-{study}.csv", config.run_id));
    std::fs::write(&csv_path, out)?;
    let mut manifest = Manifest::new(&config.run_id, "ablate", config_snapshot(config)?);
    manifest.arg("base", base.display());
    manifest.arg("study", study);
    manifest.record_input(base)?;
    manifest.record_output(&file_name(&csv_path), &csv_path)?;
    manifest.save(&manifest_path_for(&csv_path))?;
    Ok(manifest)
}

/// Re-executes a recorded command into `out_dir` and verifies that every
/// output matches its recorded hash.
pub fn cmd_replay(manifest_path: &Path, out_dir: &Path) -> Result<()> {
    let manifest = Manifest::load(manifest_path)?;
    manifest.verify_inputs()?;
    std::fs::create_dir_all(out_dir)?;
    let primary = |suffix: &str| -> Result<PathBuf> {
        manifest
            .outputs
            .keys()
            .find(|n| n.ends_with(suffix))
            .map(|n| out_dir.join(n))
            .ok_or_else(|| {
                Error::Integrity(format!("manifest lists no {suffix} output"))
            })
    };
    match manifest.command.as_str() {
        "gen-data" => {
            let config: RunConfig = serde_json::from_value(manifest.config.clone())
                .map_err(|e| Error::Integrity(format!("bad config snapshot: {e}")))?;
            cmd_gen_data(&config, &primary(".jsonl")?)?;
        }
        "prepare" => {
            let val_fraction = manifest.config["val_fraction"]
                .as_f64()
                .ok_or_else(|| Error::Integrity("bad prepare snapshot".into()))?;
            let seed = manifest.config["seed"].as_u64();
            let dataset = PathBuf::from(manifest.args.get("dataset").ok_or_else(|| {
                Error::Integrity("prepare manifest is missing its dataset argument".into())
            })?);
            cmd_prepare(&dataset, val_fraction, seed, &primary(".jsonl")?)?;
        }
        "pretrain" => {
            let config: RunConfig = serde_json::from_value(manifest.config.clone())
                .map_err(|e| Error::Integrity(format!("bad config snapshot: {e}")))?;
            cmd_pretrain(&config, &primary(".ckpt")?)?;
        }
        "train" => {
            let config: RunConfig = serde_json::from_value(manifest.config.clone())
                .map_err(|e| Error::Integrity(format!("bad config snapshot: {e}")))?;
            let data = PathBuf::from(manifest.args.get("data").ok_or_else(|| {
                Error::Integrity("train manifest is missing its data argument".into())
            })?);
            let base = PathBuf::from(manifest.args.get("base").ok_or_else(|| {
                Error::Integrity("train manifest is missing its base argument".into())
            })?);
            cmd_train(
                &config,
                &data,
                &base,
                &TrainOverrides::default(),
                &primary(".ckpt")?,
            )?;
        }
        "eval" => {
            let config: RunConfig = serde_json::from_value(manifest.config.clone())
                .map_err(|e| Error::Integrity(format!("bad config snapshot: {e}")))?;
            let checkpoint = PathBuf::from(manifest.args.get("checkpoint").ok_or_else(|| {
                Error::Integrity("eval manifest is missing its checkpoint argument".into())
            })?);
            cmd_eval(&config, &checkpoint, out_dir)?;
        }
        "sweep" => {
            let config: RunConfig = serde_json::from_value(manifest.config.clone())
                .map_err(|e| Error::Integrity(format!("bad config snapshot: {e}")))?;
            let base = PathBuf::from(manifest.args.get("base").ok_or_else(|| {
                Error::Integrity("sweep manifest is missing its base argument".into())
            })?);
            let sizes = parse_sizes(manifest.args.get("sizes").ok_or_else(|| {
                Error::Integrity("sweep manifest is missing its sizes argument".into())
            })?)?;
            cmd_sweep(&config, &base, &sizes, out_dir)?;
        }
        "ablate" => {
            let config: RunConfig = serde_json::from_value(manifest.config.clone())
                .map_err(|e| Error::Integrity(format!("bad config snapshot: {e}")))?;
            let base = PathBuf::from(manifest.args.get("base").ok_or_else(|| {
                Error::Integrity("ablate manifest is missing its base argument".into())
            })?);
            let study = match manifest.args.get("study").map(String::as_str) {
                Some("mask") => AblateStudy::Mask,
                Some("nll") => AblateStudy::Nll,
                Some("lambda") => AblateStudy::Lambda,
                other => {
                    return Err(Error::Integrity(format!(
                        "ablate manifest has an unknown study {other:?}"
                    )))
                }
            };
            cmd_ablate(&config, &base, study, out_dir)?;
        }
        other => {
            return Err(Error::Integrity(format!(
                "manifest records an unknown command {other}"
            )))
        }
    }
    manifest.verify_outputs_in(out_dir)
}

/// Parses a comma-separated size list.
pub fn parse_sizes(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad size {s:?} in size list")))
        })
        .collect()
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = file_name(path);
    name.push_str(suffix);
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_lists_parse_including_the_large_ladder() {
        assert_eq!(parse_sizes("8,16,32").unwrap(), vec![8, 16, 32]);
        assert_eq!(
            parse_sizes("200, 400, 800, 1600").unwrap(),
            vec![200, 400, 800, 1600]
        );
        assert!(parse_sizes("8,x").is_err());
    }

    #[test]
    fn method_names_render_as_flag_values() {
        assert_eq!(Method::Sft.to_string(), "sft");
        assert_eq!(Method::SftDpo.to_string(), "sft-dpo");
        assert_eq!(Method::Clo.to_string(), "clo");
    }
}
