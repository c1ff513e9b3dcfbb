//! Implementations of the CLI commands. Every command validates its whole
//! configuration before any compute begins, runs deterministically under the
//! configured seed, and writes its artifacts under one output directory.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayD};
use serde::Serialize;

use octmix::augment::{apply_policy, AugPolicy, LabeledBatch};
use octmix::container::{write_tensor, DType};
use octmix::dataset::{
    generate_synthetic, load_csv_corpus, split_by_subject, window_recordings, write_csv_corpus,
    Corpus, SplitSpec, WindowingSpec,
};
use octmix::metrics::{aggregate_trials, format_summary_table, reports_to_jsonl, SplitSummary};
use octmix::network::ModelConfig;
use octmix::rng::{derive_seed, rng_from, stream};
use octmix::signal::{design_lowpass, frequency_response, FilterSpec};
use octmix::trainer::{
    evaluate_model, run_experiment, save_model, train_single, SplitData, TrainConfig, Variant,
};
use octmix::Error;

use crate::config::{
    load_toml, AugmentFileConfig, DataSource, DatasetSection, EvalFileConfig, GenSynthFileConfig,
    ModelSection, Overrides, SweepFileConfig, TrainFileConfig, TrainSection,
};
use crate::CliError;

fn load_corpus(section: &DatasetSection, seed_override: Option<u64>) -> Result<Corpus, CliError> {
    match section.source {
        DataSource::Synthetic => {
            let mut spec = section
                .synthetic
                .clone()
                .expect("validated synthetic section");
            if let Some(seed) = seed_override {
                spec.seed = seed;
            }
            generate_synthetic(&spec).map_err(CliError::config)
        }
        DataSource::Manifest => {
            let manifest = section.manifest.as_ref().expect("validated manifest path");
            load_csv_corpus(manifest).map_err(CliError::config)
        }
    }
}

fn build_model_config(model: &ModelSection, num_classes: usize) -> Result<ModelConfig, CliError> {
    let cfg = ModelConfig {
        channel_widths: model.channel_widths.clone(),
        kernel_size: model.kernel_size,
        num_classes,
    };
    cfg.validate().map_err(CliError::config)?;
    Ok(cfg)
}

fn check_frame_supports_model(
    windowing: &WindowingSpec,
    model_cfg: &ModelConfig,
) -> Result<(), CliError> {
    if windowing.frame < model_cfg.min_t() {
        return Err(CliError::Config(format!(
            "windowing.frame = {} is shorter than the model's minimum window of {}",
            windowing.frame,
            model_cfg.min_t()
        )));
    }
    Ok(())
}

fn check_split_fits(corpus: &Corpus, split: &SplitSpec) -> Result<(), CliError> {
    let available = corpus.subject_ids().len();
    if available < split.total() {
        return Err(CliError::Config(format!(
            "split needs {} subjects, corpus has {available}",
            split.total()
        )));
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// `gen-synth`: write a synthetic corpus as CSV files plus a manifest.
pub fn cmd_gen_synth(config_path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let mut config: GenSynthFileConfig = load_toml(config_path)?;
    if let Some(seed) = overrides.seed {
        config.synthetic.seed = seed;
    }
    config.synthetic.validate().map_err(CliError::config)?;
    let out = overrides.output_dir(&config.output.dir);

    let corpus = generate_synthetic(&config.synthetic).map_err(CliError::runtime)?;
    ensure_dir(&out)?;
    let manifest = write_csv_corpus(&corpus, &out).map_err(CliError::runtime)?;
    println!(
        "wrote {} recordings and {}",
        corpus.recordings.len(),
        manifest.display()
    );
    Ok(())
}

fn batch_to_tensors(batch: &LabeledBatch) -> (ArrayD<f64>, ArrayD<f64>) {
    let n = batch.len();
    let t_len = batch.t_len();
    let channels = batch.channels();
    let k = batch.num_classes();
    let mut windows = Array3::zeros((n, t_len, channels));
    for (i, w) in batch.windows().iter().enumerate() {
        for t in 0..t_len {
            for c in 0..channels {
                windows[(i, t, c)] = w.samples()[(t, c)];
            }
        }
    }
    let mut labels = Array2::zeros((n, k));
    for (i, l) in batch.labels().iter().enumerate() {
        for c in 0..k {
            labels[(i, c)] = l.probs()[c];
        }
    }
    (windows.into_dyn(), labels.into_dyn())
}

/// `augment`: window the corpus, apply one policy under the configured seed,
/// and dump the resulting windows and labels as tensor containers.
pub fn cmd_augment(config_path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let config: AugmentFileConfig = load_toml(config_path)?;
    config.dataset.validate()?;
    config.augment.policy.validate().map_err(CliError::config)?;
    let seed = overrides.seed.unwrap_or(config.augment.seed);
    let out = overrides.output_dir(&config.output.dir);

    let corpus = load_corpus(&config.dataset, None)?;
    let (batch, report) = window_recordings(
        &corpus.recordings,
        &config.dataset.windowing,
        corpus.num_classes(),
    )
    .map_err(CliError::runtime)?;
    let mut rng = rng_from(seed, &[stream::AUGMENT]);
    let augmented =
        apply_policy(&batch, &config.augment.policy, &mut rng).map_err(CliError::runtime)?;

    ensure_dir(&out)?;
    let (windows, labels) = batch_to_tensors(&augmented);
    write_tensor(&out.join("windows.tensor"), &windows, DType::F64)
        .map_err(CliError::runtime)?;
    write_tensor(&out.join("labels.tensor"), &labels, DType::F64).map_err(CliError::runtime)?;
    println!(
        "augmented {} windows -> {} ({} recordings skipped)",
        batch.len(),
        augmented.len(),
        report.recordings_skipped
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunSummary {
    variant: String,
    policies: Vec<String>,
    trials: usize,
    splits: Vec<SplitSummary>,
}

struct TrainSetup {
    corpus: Corpus,
    model_cfg: ModelConfig,
    variant: Variant,
    train: TrainSection,
    windowing: WindowingSpec,
    split: SplitSpec,
    out: PathBuf,
}

fn prepare_train(
    config: TrainFileConfig,
    overrides: &Overrides,
    require_variant: bool,
) -> Result<TrainSetup, CliError> {
    config.dataset.validate()?;
    config.split.validate().map_err(CliError::config)?;
    let mut train = config.train.clone();
    if let Some(seed) = overrides.seed {
        train.seed = seed;
    }
    if let Some(trials) = overrides.trials {
        train.trials = trials;
    }
    if train.trials == 0 {
        return Err(CliError::Config("train.trials must be at least 1".into()));
    }
    let variant = if require_variant {
        let name = train
            .variant
            .as_deref()
            .ok_or_else(|| CliError::Config("train.variant is required".into()))?;
        Variant::parse(name).map_err(CliError::config)?
    } else {
        Variant::RotOctmix
    };
    for p in &train.policies {
        p.validate().map_err(CliError::config)?;
    }
    if variant == Variant::SimpleEnsemble && !train.policies.is_empty() {
        let prob = train.policies[0].apply_prob;
        if train.policies.iter().any(|p| p.apply_prob != prob) {
            return Err(CliError::Config(
                "simple-ensemble policies must share one apply probability".into(),
            ));
        }
    }
    let corpus = load_corpus(&config.dataset, None)?;
    let model_cfg = build_model_config(&config.model, corpus.num_classes())?;
    check_frame_supports_model(&config.dataset.windowing, &model_cfg)?;
    check_split_fits(&corpus, &config.split)?;
    let out = overrides.output_dir(&config.output.dir);
    Ok(TrainSetup {
        corpus,
        model_cfg,
        variant,
        train,
        windowing: config.dataset.windowing,
        split: config.split,
        out,
    })
}

fn split_data_for_trial(
    setup: &TrainSetup,
    trial_seed: u64,
) -> Result<SplitData, Error> {
    let mut split_rng = rng_from(trial_seed, &[stream::SPLIT]);
    let split = split_by_subject(&setup.corpus.recordings, &setup.split, &mut split_rng)?;
    let classes = setup.corpus.num_classes();
    let (train, _) = window_recordings(&split.train, &setup.windowing, classes)?;
    let (valid, _) = window_recordings(&split.valid, &setup.windowing, classes)?;
    let (test, _) = window_recordings(&split.test, &setup.windowing, classes)?;
    Ok(SplitData { train, valid, test })
}

fn run_training_into(setup: &TrainSetup, out: &Path) -> Result<RunSummary, CliError> {
    ensure_dir(out)?;
    let mut all_reports = Vec::new();
    let mut policies = Vec::new();
    for trial in 0..setup.train.trials {
        let trial_seed = derive_seed(setup.train.seed, &[stream::TRIAL, trial as u64]);
        let data = split_data_for_trial(setup, trial_seed).map_err(CliError::runtime)?;
        let cfg = TrainConfig {
            policies: setup.train.policies.clone(),
            pretrain_epochs: setup.train.pretrain_epochs,
            classifier_epochs: setup.train.classifier_epochs,
            batch_size: setup.train.batch_size,
            seed: trial_seed,
            lr: setup.train.lr,
        };
        let outcome = run_experiment(setup.variant, &data, &setup.model_cfg, &cfg, trial)
            .map_err(CliError::runtime)?;
        let model_dir = out.join(format!("trial_{trial}")).join("model");
        ensure_dir(&model_dir)?;
        save_model(&model_dir, &outcome.model, &setup.model_cfg).map_err(CliError::runtime)?;
        all_reports.extend(outcome.reports);
        policies = outcome.policy_descriptions;
    }

    let summaries = aggregate_trials(&all_reports).map_err(CliError::runtime)?;
    let summary = RunSummary {
        variant: setup.variant.name().to_string(),
        policies: policies
            .iter()
            .enumerate()
            .map(|(i, p)| format!("DA_{} = {p}", i + 1))
            .collect(),
        trials: setup.train.trials,
        splits: summaries,
    };
    write_text(
        &out.join("reports.jsonl"),
        &reports_to_jsonl(&all_reports).map_err(CliError::runtime)?,
    )?;
    write_text(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&summary)
            .map_err(|e| CliError::Runtime(format!("summary encode: {e}")))?,
    )?;
    let mut text = format!("variant: {}\n", summary.variant);
    for p in &summary.policies {
        text.push_str(&format!("{p}\n"));
    }
    text.push('\n');
    text.push_str(&format_summary_table(&summary.splits));
    write_text(&out.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct SubjectSweepEntry {
    train_subjects: usize,
    splits: Vec<SplitSummary>,
}

/// `train`: run the configured variant for the configured number of
/// independent trials (subjects re-sampled each trial), write per-trial
/// reports, trained models, and the aggregate summary. When
/// `train.subject_counts` is set, the whole trial loop repeats once per
/// training-subject count.
pub fn cmd_train(config_path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let config: TrainFileConfig = load_toml(config_path)?;
    let mut setup = prepare_train(config, overrides, true)?;
    let out = setup.out.clone();

    if setup.train.subject_counts.is_empty() {
        run_training_into(&setup, &out)?;
        return Ok(());
    }

    // Subject-count sweep: validate every count before running any.
    let counts = setup.train.subject_counts.clone();
    let available = setup.corpus.subject_ids().len();
    for &count in &counts {
        if count == 0 {
            return Err(CliError::Config("subject_counts entries must be positive".into()));
        }
        let needed = count + setup.split.n_valid_subjects + setup.split.n_test_subjects;
        if needed > available {
            return Err(CliError::Config(format!(
                "subject count {count} needs {needed} subjects, corpus has {available}"
            )));
        }
    }
    ensure_dir(&out)?;
    let mut entries = Vec::new();
    for &count in &counts {
        setup.split.n_train_subjects = count;
        println!("--- {count} training subjects ---");
        let summary = run_training_into(&setup, &out.join(format!("subjects_{count}")))?;
        entries.push(SubjectSweepEntry {
            train_subjects: count,
            splits: summary.splits,
        });
    }
    write_text(
        &out.join("subjects_sweep.json"),
        &serde_json::to_string_pretty(&entries)
            .map_err(|e| CliError::Runtime(format!("sweep encode: {e}")))?,
    )?;
    Ok(())
}

/// `eval`: run a saved model over a corpus and report metrics.
pub fn cmd_eval(config_path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let config: EvalFileConfig = load_toml(config_path)?;
    config.dataset.validate()?;
    if !config.eval.model_dir.join("manifest.json").exists() {
        return Err(CliError::Config(format!(
            "eval.model_dir {} holds no model manifest",
            config.eval.model_dir.display()
        )));
    }
    let out = overrides.output_dir(&config.output.dir);

    let (model, _) = octmix::trainer::load_model(&config.eval.model_dir)
        .map_err(CliError::config)?;
    let corpus = load_corpus(&config.dataset, None)?;
    let (batch, _) = window_recordings(
        &corpus.recordings,
        &config.dataset.windowing,
        corpus.num_classes(),
    )
    .map_err(CliError::runtime)?;
    let report = evaluate_model(&model, &batch, 0, "eval").map_err(CliError::runtime)?;
    ensure_dir(&out)?;
    write_text(
        &out.join("eval.jsonl"),
        &reports_to_jsonl(std::slice::from_ref(&report)).map_err(CliError::runtime)?,
    )?;
    println!(
        "eval: accuracy {:.4}, macro-F1 {:.4} over {} windows",
        report.accuracy,
        report.macro_f1,
        report.confusion.total()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepCell {
    alpha: f64,
    cutoff_hz: f64,
    best_valid_accuracy: f64,
}

#[derive(Debug, Serialize)]
struct SweepReport {
    alphas: Vec<f64>,
    cutoffs_hz: Vec<f64>,
    cells: Vec<SweepCell>,
}

/// `sweep`: train one rotation+octave-mix model per `(alpha, cutoff)` cell
/// and report the best validation accuracy over all epochs per cell.
pub fn cmd_sweep(config_path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let config: SweepFileConfig = load_toml(config_path)?;
    let sweep = config.sweep.clone();
    if sweep.alphas.is_empty() || sweep.cutoffs_hz.is_empty() {
        return Err(CliError::Config("sweep grid is empty".into()));
    }
    for &a in &sweep.alphas {
        if !a.is_finite() || a <= 0.0 {
            return Err(CliError::Config(format!("sweep alpha {a} must be positive")));
        }
    }
    for &c in &sweep.cutoffs_hz {
        if !c.is_finite() || c <= 0.0 {
            return Err(CliError::Config(format!("sweep cutoff {c} must be positive")));
        }
    }
    let train_file = TrainFileConfig {
        dataset: config.dataset,
        split: config.split,
        model: config.model,
        train: config.train,
        output: config.output,
    };
    let setup = prepare_train(train_file, overrides, false)?;
    ensure_dir(&setup.out)?;

    let trial_seed = derive_seed(setup.train.seed, &[stream::TRIAL, 0]);
    let data = split_data_for_trial(&setup, trial_seed).map_err(CliError::runtime)?;
    let cfg = TrainConfig {
        policies: Vec::new(),
        pretrain_epochs: setup.train.pretrain_epochs,
        classifier_epochs: setup.train.classifier_epochs,
        batch_size: setup.train.batch_size,
        seed: trial_seed,
        lr: setup.train.lr,
    };

    let mut cells = Vec::new();
    for &alpha in &sweep.alphas {
        for &cutoff_hz in &sweep.cutoffs_hz {
            let policy = AugPolicy {
                steps: vec![
                    octmix::augment::AugStep::Rotation,
                    octmix::augment::AugStep::OctaveMix { alpha, cutoff_hz },
                ],
                apply_prob: 0.5,
            };
            let (_, trace) = train_single(
                &data.train,
                Some(&data.valid),
                &setup.model_cfg,
                Some(&policy),
                cfg.pretrain_epochs,
                &cfg,
                derive_seed(trial_seed, &[stream::BRANCH, 0]),
            )
            .map_err(CliError::runtime)?;
            let best = trace
                .valid_accuracy
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            cells.push(SweepCell {
                alpha,
                cutoff_hz,
                best_valid_accuracy: if best.is_finite() { best } else { 0.0 },
            });
        }
    }

    let report = SweepReport {
        alphas: sweep.alphas.clone(),
        cutoffs_hz: sweep.cutoffs_hz.clone(),
        cells,
    };
    write_text(
        &setup.out.join("sweep.json"),
        &serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Runtime(format!("sweep encode: {e}")))?,
    )?;
    let mut text = String::from("alpha \\ cutoff_hz");
    for c in &report.cutoffs_hz {
        text.push_str(&format!("\t{c}"));
    }
    text.push('\n');
    for &a in &report.alphas {
        text.push_str(&format!("{a}"));
        for &c in &report.cutoffs_hz {
            let cell = report
                .cells
                .iter()
                .find(|x| x.alpha == a && x.cutoff_hz == c)
                .expect("cell exists");
            text.push_str(&format!("\t{:.1}%", 100.0 * cell.best_valid_accuracy));
        }
        text.push('\n');
    }
    write_text(&setup.out.join("sweep.txt"), &text)?;
    print!("{text}");
    Ok(())
}

/// `inspect-filter`: dump the designed kernel taps and sampled frequency
/// response as tensor containers.
pub fn cmd_inspect_filter(
    cutoff_hz: f64,
    sample_rate_hz: f64,
    num_taps: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let spec = match num_taps {
        Some(n) => FilterSpec::new(cutoff_hz, n, sample_rate_hz),
        None => FilterSpec::with_default_taps(cutoff_hz, sample_rate_hz),
    }
    .map_err(CliError::config)?;
    let kernel = design_lowpass(&spec).map_err(CliError::config)?;

    let points = 512usize;
    let freqs: Vec<f64> = (0..points)
        .map(|i| i as f64 / (points - 1) as f64 * sample_rate_hz / 2.0)
        .collect();
    let magnitude = frequency_response(&kernel, &freqs, sample_rate_hz);
    let mut response = Array2::zeros((points, 2));
    for i in 0..points {
        response[(i, 0)] = freqs[i];
        response[(i, 1)] = magnitude[i];
    }
    let taps = ndarray::Array1::from_vec(kernel.taps().to_vec());

    ensure_dir(out)?;
    write_tensor(&out.join("taps.tensor"), &taps.into_dyn(), DType::F64)
        .map_err(CliError::runtime)?;
    write_tensor(&out.join("response.tensor"), &response.into_dyn(), DType::F64)
        .map_err(CliError::runtime)?;
    println!(
        "kernel: {} taps, cutoff {cutoff_hz} Hz at {sample_rate_hz} Hz{}",
        kernel.len(),
        if spec.is_pass_through() {
            " (pass-through)"
        } else {
            ""
        }
    );
    Ok(())
}
