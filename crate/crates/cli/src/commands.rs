use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ifthen_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use ifthen_core::corpus::{
    build_source_text, build_target_vocabulary, clean_examples, encode_pair, load_dataset, split_validation,
    write_dataset, CleanFilters, CleanReport, EncodedPair, Example, LoadMode, SplitSize, Vocabulary,
};
use ifthen_core::inference::{predict_batch, PredictionRecord};
use ifthen_core::training::{evaluate_pairs, train_with_observer};
use ifthen_core::{evaluate as score, DType, EvalReport, Prediction, Scalar, SeqModel, Slot, TrainHistory};

use crate::config::{Precision, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::{EvaluateArgs, PredictArgs, PrepareArgs, ReportFormat, TrainArgs};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALID_FILE: &str = "valid.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const SOURCE_VOCAB_FILE: &str = "src_vocab.txt";
pub const TARGET_VOCAB_FILE: &str = "tgt_vocab.txt";
pub const CLEAN_REPORT_FILE: &str = "clean_report.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const MODEL_FILE: &str = "model.ckpt";

/// Salt separating the test hold-out shuffle from the validation shuffle.
const TEST_SPLIT_SALT: u64 = 0x7e57;

fn say(out: &mut dyn Write, line: impl std::fmt::Display) -> CliResult<()> {
    writeln!(out, "{line}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn to_json<S: serde::Serialize>(value: &S) -> serde_json::Value {
    serde_json::to_value(value).expect("plain data serializes")
}

/// `<stem>.manifest.json` next to a single-file artifact.
fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareOutcome {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub train_report: CleanReport,
    pub test_report: Option<CleanReport>,
    pub skipped_lines: usize,
}

fn load(path: &Path, lenient: bool) -> CliResult<(Vec<Example>, usize)> {
    let mode = if lenient { LoadMode::Lenient } else { LoadMode::Strict };
    let loaded = load_dataset(path, mode)?;
    Ok((loaded.examples, loaded.skipped.len()))
}

pub fn prepare(args: &PrepareArgs, out: &mut dyn Write) -> CliResult<PrepareOutcome> {
    if !(0.0..1.0).contains(&args.valid_fraction) {
        return Err(CliError::validation("--valid-fraction must lie in [0, 1)"));
    }
    let filters = CleanFilters {
        min_title_words: args.min_title_words,
        english_only: args.english_only,
        min_agreement: None,
    };
    let mut inputs = vec![args.input.as_path()];
    inputs.extend(args.test.as_deref());
    if args.dry_run {
        say(out, format!("would prepare {} into {}", args.input.display(), args.output.display()))?;
        return Ok(PrepareOutcome {
            train: 0,
            valid: 0,
            test: 0,
            train_report: CleanReport::default(),
            test_report: None,
            skipped_lines: 0,
        });
    }
    create_dir(&args.output)?;
    let manifest_path = args.output.join(MANIFEST_FILE);
    let mut manifest = RunManifest::start("prepare", to_json(args), Some(args.seed), &inputs)?;
    manifest.write(&manifest_path)?;

    let (examples, mut skipped) = load(&args.input, args.lenient)?;
    let (kept, train_report) = clean_examples(examples, &filters);
    let (pool, test, test_report) = match &args.test {
        Some(path) => {
            let (examples, s) = load(path, args.lenient)?;
            skipped += s;
            let test_filters = CleanFilters {
                min_agreement: args.min_agreement,
                ..filters.clone()
            };
            let (test, report) = clean_examples(examples, &test_filters);
            (kept, test, Some(report))
        }
        None if args.test_count > 0 => {
            let (pool, test) = split_validation(&kept, SplitSize::Count(args.test_count), args.seed ^ TEST_SPLIT_SALT)?;
            (pool, test, None)
        }
        None => (kept, Vec::new(), None),
    };
    if pool.is_empty() {
        return Err(CliError::validation("no training examples remain after cleaning"));
    }
    let size = match args.valid_count {
        Some(c) => SplitSize::Count(c),
        None => SplitSize::Fraction(args.valid_fraction),
    };
    let (train, valid) = split_validation(&pool, size, args.seed)?;

    let texts: Vec<String> = train.iter().map(|e| build_source_text(e, args.use_description)).collect();
    let source_vocab = Vocabulary::build(&texts, None)?;
    let target_vocab = build_target_vocabulary(&train)?;

    let paths = [TRAIN_FILE, VALID_FILE, TEST_FILE, SOURCE_VOCAB_FILE, TARGET_VOCAB_FILE, CLEAN_REPORT_FILE]
        .map(|f| args.output.join(f));
    write_dataset(&paths[0], &train)?;
    write_dataset(&paths[1], &valid)?;
    write_dataset(&paths[2], &test)?;
    source_vocab.write(&paths[3])?;
    target_vocab.write(&paths[4])?;
    let report = serde_json::json!({
        "train": train_report.to_json(),
        "test": test_report.as_ref().map(CleanReport::to_json),
        "skipped_lines": skipped,
    });
    write_text(&paths[5], &(serde_json::to_string_pretty(&report).expect("json") + "\n"))?;
    manifest.finish(&manifest_path, &paths.each_ref().map(PathBuf::as_path))?;

    say(out, format!("cleaned: kept {} of {} ({:.2}% removed)", train_report.kept, train_report.original, train_report.percent_removed()))?;
    say(out, format!("train {} / valid {} / test {}", train.len(), valid.len(), test.len()))?;
    say(out, format!("vocabularies: source {} / target {}", source_vocab.len(), target_vocab.len()))?;
    Ok(PrepareOutcome {
        train: train.len(),
        valid: valid.len(),
        test: test.len(),
        train_report,
        test_report,
        skipped_lines: skipped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub validation: EvalReport,
    pub model_path: PathBuf,
}

/// Whether the data directory was prepared with descriptions.
fn prepared_with_description(data: &Path) -> CliResult<bool> {
    let manifest = RunManifest::read(&data.join(MANIFEST_FILE))?;
    Ok(manifest.config.get("use_description").and_then(|v| v.as_bool()).unwrap_or(false))
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<Option<TrainOutcome>> {
    let config = RunConfig::resolve(args.config.as_deref(), &args.overrides())?;
    say(out, config.to_toml())?;
    if args.dry_run {
        return Ok(None);
    }
    let files = [TRAIN_FILE, VALID_FILE, SOURCE_VOCAB_FILE, TARGET_VOCAB_FILE, MANIFEST_FILE].map(|f| args.data.join(f));
    for f in &files {
        if !f.is_file() {
            return Err(CliError::io(f, "missing prepared data file"));
        }
    }
    let use_description = prepared_with_description(&args.data)?;
    create_dir(&args.out)?;
    let manifest_path = args.out.join(MANIFEST_FILE);
    let inputs = files.each_ref().map(PathBuf::as_path);
    let mut manifest = RunManifest::start("train", to_json(&config), Some(config.train.seed), &inputs)?;
    manifest.write(&manifest_path)?;
    let config_path = args.out.join(CONFIG_FILE);
    write_text(&config_path, &config.to_toml())?;

    let outcome = match config.precision {
        Precision::F32 => train_typed::<f32>(&config, &args.data, &args.out, use_description, out)?,
        Precision::F64 => train_typed::<f64>(&config, &args.data, &args.out, use_description, out)?,
    };
    let history_path = args.out.join("history.jsonl");
    manifest.finish(&manifest_path, &[&config_path, &outcome.model_path, &history_path])?;
    Ok(Some(outcome))
}

fn encode_all<T: Scalar>(model: &SeqModel<T>, examples: &[Example]) -> Vec<EncodedPair> {
    examples
        .iter()
        .map(|e| {
            encode_pair(e, model.source_vocab(), model.target_vocab(), model.max_source_len(), model.use_description())
        })
        .collect()
}

fn train_typed<T: Scalar>(
    config: &RunConfig,
    data: &Path,
    out_dir: &Path,
    use_description: bool,
    out: &mut dyn Write,
) -> CliResult<TrainOutcome> {
    let (train_examples, _) = load(&data.join(TRAIN_FILE), false)?;
    let (valid_examples, _) = load(&data.join(VALID_FILE), false)?;
    let source_vocab = Vocabulary::read(&data.join(SOURCE_VOCAB_FILE))?;
    let target_vocab = Vocabulary::read(&data.join(TARGET_VOCAB_FILE))?;
    let mut model = SeqModel::<T>::new(config.model.clone(), &source_vocab, &target_vocab, config.train.seed)?;
    model.set_use_description(use_description);
    let train_pairs = encode_all(&model, &train_examples);
    let valid_pairs = encode_all(&model, &valid_examples);
    say(
        out,
        format!("{} model, {} parameters, {} train / {} valid pairs", model.family(), model.num_parameters(), train_pairs.len(), valid_pairs.len()),
    )?;
    let train_config = ifthen_core::TrainConfig {
        checkpoint_dir: Some(out_dir.to_path_buf()),
        ..config.train.clone()
    };
    let (model, history) = train_with_observer(model, &train_pairs, &valid_pairs, &train_config, &mut |r| {
        eprintln!(
            "epoch {} step {} train_loss {:.4} valid_loss {:.4} seq_acc {:.4} lr {:.3e}",
            r.epoch, r.step, r.train_loss, r.validation_loss, r.metrics.sequence_acc, r.learning_rate
        );
    })?;
    let best_step = history.best_step.unwrap_or(0);
    let model_path = out_dir.join(MODEL_FILE);
    save_checkpoint(&model_path, &model, best_step)?;
    let eval_pairs = if valid_pairs.is_empty() { &train_pairs } else { &valid_pairs };
    let validation = evaluate_pairs(&model, eval_pairs, config.train.batch_size)?;
    say(out, format!("best step {best_step}: validation sequence accuracy {:.4}", validation.sequence_acc))?;
    say(out, format!("model written to {}", model_path.display()))?;
    Ok(TrainOutcome {
        history,
        validation,
        model_path,
    })
}

/// A checkpoint in the precision it was trained in.
pub enum LoadedModel {
    F32(SeqModel<f32>),
    F64(SeqModel<f64>),
}

macro_rules! with_model {
    ($loaded:expr, |$m:ident| $body:expr) => {
        match $loaded {
            LoadedModel::F32($m) => $body,
            LoadedModel::F64($m) => $body,
        }
    };
}

pub fn load_model(path: &Path) -> CliResult<(LoadedModel, CheckpointMeta)> {
    let (model, meta) = load_checkpoint::<f64>(path)?;
    let model = match meta.dtype {
        DType::F32 => LoadedModel::F32(model.cast()),
        DType::F64 => LoadedModel::F64(model),
    };
    Ok((model, meta))
}

fn write_records(path: Option<&Path>, records: &[PredictionRecord], out: &mut dyn Write) -> CliResult<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.push(b'\n');
    }
    match path {
        Some(p) => fs::write(p, buf).map_err(|e| CliError::io(p, e)),
        None => out.write_all(&buf).map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

pub fn evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> CliResult<EvalReport> {
    let (model, _) = load_model(&args.model)?;
    let (examples, _) = load(&args.data, false)?;
    if examples.is_empty() {
        return Err(CliError::validation(format!("{} contains no examples to evaluate", args.data.display())));
    }
    let manifest_path = sidecar(&args.report);
    let mut manifest = RunManifest::start("evaluate", serde_json::json!({"batch_size": args.batch_size}), None, &[&args.model, &args.data])?;
    manifest.write(&manifest_path)?;
    let preds = with_model!(&model, |m| {
        let texts: Vec<String> = examples.iter().map(|e| build_source_text(e, m.use_description())).collect();
        predict_batch(m, &texts, args.batch_size)?
    });
    let refs: Vec<_> = examples.iter().map(|e| e.recipe.clone()).collect();
    let report = score(&preds, &refs)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_text(&args.report, &json)?;
    let mut outputs = vec![args.report.as_path()];
    if let Some(path) = &args.predictions {
        let records: Vec<_> = preds.iter().zip(&examples).map(|(p, e)| p.to_record(&e.id)).collect();
        write_records(Some(path), &records, out)?;
        outputs.push(path);
    }
    manifest.finish(&manifest_path, &outputs)?;
    match args.format {
        ReportFormat::Table => say(out, report.to_table())?,
        ReportFormat::Json => say(out, json.trim_end())?,
    }
    Ok(report)
}

fn render(p: &Prediction) -> String {
    let mut lines = vec![p.raw.join(" ")];
    if let Err(e) = &p.parsed {
        lines.push(format!("malformed: {e}"));
    }
    for s in Slot::ALL {
        let value = match &p.parsed {
            Ok(r) => match s {
                Slot::TriggerChannel => r.trigger_channel(),
                Slot::TriggerFunction => r.trigger_function(),
                Slot::ActionChannel => r.action_channel(),
                Slot::ActionFunction => r.action_function(),
            },
            Err(_) => p.slots.get(s).unwrap_or("-"),
        };
        lines.push(format!("{:<17} {value}", s.as_str()));
    }
    lines.join("\n")
}

pub fn predict(args: &PredictArgs, out: &mut dyn Write) -> CliResult<Vec<Prediction>> {
    let (model, _) = load_model(&args.model)?;
    if let Some(text) = &args.text {
        let p = with_model!(&model, |m| ifthen_core::predict_recipe(m, text)?);
        say(out, render(&p))?;
        return Ok(vec![p]);
    }
    let path = args.batch.as_ref().expect("clap requires --text or --batch");
    let content = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let texts: Vec<&str> = content.lines().collect();
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(CliError::validation(format!("{}: line {} is empty", path.display(), i + 1)));
    }
    let manifest = match &args.output {
        Some(o) => {
            let m = RunManifest::start("predict", serde_json::json!({"batch_size": args.batch_size}), None, &[&args.model, path])?;
            m.write(&sidecar(o))?;
            Some(m)
        }
        None => None,
    };
    let preds = with_model!(&model, |m| predict_batch(m, &texts, args.batch_size)?);
    let records: Vec<_> = preds.iter().enumerate().map(|(i, p)| p.to_record(&format!("line-{}", i + 1))).collect();
    write_records(args.output.as_deref(), &records, out)?;
    if let (Some(mut m), Some(o)) = (manifest, &args.output) {
        m.finish(&sidecar(o), &[o])?;
    }
    Ok(preds)
}
