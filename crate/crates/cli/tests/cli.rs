//! End-to-end tests of the CLI commands: determinism, file formats, exit
//! codes, and override precedence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use octmix::container::read_tensor;
use octmix::dataset::load_csv_corpus;
use octmix::metrics::TrialReport;
use octmix_cli::commands;
use octmix_cli::config::Overrides;
use octmix_cli::CliError;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_octmix"))
}

fn overrides_to(dir: &Path) -> Overrides {
    Overrides {
        out: Some(dir.to_path_buf()),
        seed: None,
        trials: None,
    }
}

const SYNTH_SMALL: &str = r#"
[dataset.synthetic]
num_classes = 3
subjects = 6
recordings_per_subject = 1
duration_s = 8.0
sample_rate_hz = 100.0
noise_level = 0.05
gain_jitter = 0.1
phase_jitter = 0.8
seed = 7
class_profiles = [
  { base_freq_hz = 1.0, amplitude = 1.0, harmonic_weight = 0.2 },
  { base_freq_hz = 2.5, amplitude = 1.3, harmonic_weight = 0.35 },
  { base_freq_hz = 4.0, amplitude = 1.6, harmonic_weight = 0.5 },
]
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn train_config_body(variant: &str, policies: &str) -> String {
    format!(
        r#"
[dataset]
source = "synthetic"
[dataset.windowing]
frame = 256
stride = 256
trim_s = 0.0
{SYNTH_SMALL}

[split]
n_train_subjects = 3
n_valid_subjects = 1
n_test_subjects = 2

[model]
channel_widths = [4, 8]
kernel_size = 3

[train]
variant = "{variant}"
pretrain_epochs = 1
classifier_epochs = 1
batch_size = 16
lr = 0.001
trials = 1
seed = 42
{policies}

[output]
dir = "unused"
"#
    )
}

#[test]
fn gen_synth_is_byte_identical_and_counts_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "gen.toml",
        r#"
[synthetic]
num_classes = 3
subjects = 20
recordings_per_subject = 2
duration_s = 2.0
sample_rate_hz = 100.0
noise_level = 0.05
gain_jitter = 0.1
phase_jitter = 0.8
seed = 11
class_profiles = [
  { base_freq_hz = 1.0, amplitude = 1.0, harmonic_weight = 0.2 },
  { base_freq_hz = 2.5, amplitude = 1.3, harmonic_weight = 0.35 },
  { base_freq_hz = 4.0, amplitude = 1.6, harmonic_weight = 0.5 },
]
[output]
dir = "unused"
"#,
    );
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    commands::cmd_gen_synth(&config, &overrides_to(&out_a)).unwrap();
    commands::cmd_gen_synth(&config, &overrides_to(&out_b)).unwrap();

    // 20 subjects x 3 classes x 2 recordings = 120 CSVs + 120 manifest lines.
    let csvs = fs::read_dir(&out_a)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "csv")
        })
        .count();
    assert_eq!(csvs, 120);
    let manifest_text = fs::read_to_string(out_a.join("manifest.tsv")).unwrap();
    assert_eq!(manifest_text.lines().count(), 120);

    // Byte-identical across runs.
    for entry in fs::read_dir(&out_a).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap();
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(out_b.join(name)).unwrap(),
            "file {name:?} differs between identical runs"
        );
    }

    // The manifest loads back without error.
    let corpus = load_csv_corpus(&out_a.join("manifest.tsv")).unwrap();
    assert_eq!(corpus.recordings.len(), 120);
    assert_eq!(corpus.num_classes(), 3);
}

fn augment_config_body(policy: &str) -> String {
    format!(
        r#"
[dataset]
source = "synthetic"
[dataset.windowing]
frame = 256
stride = 256
trim_s = 0.0
{SYNTH_SMALL}

[augment]
seed = 3
[augment.policy]
{policy}

[output]
dir = "unused"
"#
    )
}

#[test]
fn augment_with_empty_policy_prob_zero_equals_input() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "aug.toml",
        &augment_config_body("apply_prob = 0.0\nsteps = []"),
    );
    let out = dir.path().join("out");
    commands::cmd_augment(&config, &overrides_to(&out)).unwrap();
    let windows = read_tensor(&out.join("windows.tensor")).unwrap();
    let labels = read_tensor(&out.join("labels.tensor")).unwrap();
    // 6 subjects x 3 classes x 1 recording x 3 windows each.
    assert_eq!(windows.shape(), &[54, 256, 3]);
    assert_eq!(labels.shape(), &[54, 3]);
    for row in 0..54 {
        let sum: f64 = (0..3).map(|c| labels[[row, c]]).sum();
        assert!((sum - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn augment_pass_through_octave_mix_matches_mixup_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let mix = write_config(
        dir.path(),
        "mixup.toml",
        &augment_config_body(
            "apply_prob = 1.0\nsteps = [ { kind = \"mixup\", alpha = 5.0 } ]",
        ),
    );
    let oct = write_config(
        dir.path(),
        "oct.toml",
        &augment_config_body(
            "apply_prob = 1.0\nsteps = [ { kind = \"octave-mix\", alpha = 5.0, cutoff_hz = 50.0 } ]",
        ),
    );
    let out_mix = dir.path().join("mix");
    let out_oct = dir.path().join("oct");
    commands::cmd_augment(&mix, &overrides_to(&out_mix)).unwrap();
    commands::cmd_augment(&oct, &overrides_to(&out_oct)).unwrap();
    for name in ["windows.tensor", "labels.tensor"] {
        assert_eq!(
            fs::read(out_mix.join(name)).unwrap(),
            fs::read(out_oct.join(name)).unwrap(),
            "{name} differs between pass-through octave mix and mixup"
        );
    }
}

#[test]
fn train_writes_reports_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "train.toml",
        &train_config_body("dar-ffe-ensemble", ""),
    );
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    commands::cmd_train(&config, &overrides_to(&out_a)).unwrap();
    commands::cmd_train(&config, &overrides_to(&out_b)).unwrap();

    let reports = fs::read_to_string(out_a.join("reports.jsonl")).unwrap();
    // One JSON line per split per trial.
    assert_eq!(reports.lines().count(), 3);
    for line in reports.lines() {
        let report: TrialReport = serde_json::from_str(line).unwrap();
        assert!(["train", "valid", "test"].contains(&report.split.as_str()));
    }
    for name in ["reports.jsonl", "summary.json", "summary.txt"] {
        assert_eq!(
            fs::read(out_a.join(name)).unwrap(),
            fs::read(out_b.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
    // Model files are reproducible too.
    let manifest_a = fs::read(out_a.join("trial_0/model/manifest.json")).unwrap();
    let manifest_b = fs::read(out_b.join("trial_0/model/manifest.json")).unwrap();
    assert_eq!(manifest_a, manifest_b);

    // The default ensemble policies are recorded in the summary.
    let summary = fs::read_to_string(out_a.join("summary.txt")).unwrap();
    assert!(summary.contains("DA_1 = rotation+octave-mix(alpha=0.5, cutoff=2.1Hz)"));
    assert!(summary.contains("DA_2 = rotation+mixup(alpha=5)"));
}

#[test]
fn train_multiple_trials_resample_subjects() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "train.toml", &train_config_body("none", ""));
    let out = dir.path().join("out");
    commands::cmd_train(
        &config,
        &Overrides {
            out: Some(out.clone()),
            seed: None,
            trials: Some(2),
        },
    )
    .unwrap();
    let reports = fs::read_to_string(out.join("reports.jsonl")).unwrap();
    assert_eq!(reports.lines().count(), 6);
    assert!(out.join("trial_1/model/manifest.json").exists());
}

#[test]
fn train_subject_count_axis_runs_once_per_count() {
    let dir = tempfile::tempdir().unwrap();
    let body = train_config_body("none", "").replace(
        "seed = 42",
        "seed = 42\nsubject_counts = [2, 3]",
    );
    let config = write_config(dir.path(), "train.toml", &body);
    let out = dir.path().join("out");
    commands::cmd_train(&config, &overrides_to(&out)).unwrap();
    assert!(out.join("subjects_2/reports.jsonl").exists());
    assert!(out.join("subjects_3/reports.jsonl").exists());
    let sweep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("subjects_sweep.json")).unwrap())
            .unwrap();
    assert_eq!(sweep.as_array().unwrap().len(), 2);
    assert_eq!(sweep[0]["train_subjects"], 2);

    // A count that exceeds the corpus is rejected before any training.
    let body = train_config_body("none", "").replace(
        "seed = 42",
        "seed = 42\nsubject_counts = [2, 50]",
    );
    let config = write_config(dir.path(), "bad.toml", &body);
    match commands::cmd_train(&config, &overrides_to(&dir.path().join("bad_out"))) {
        Err(CliError::Config(msg)) => assert!(msg.contains("50")),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn eval_runs_on_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let train_cfg = write_config(dir.path(), "train.toml", &train_config_body("none", ""));
    let out = dir.path().join("train_out");
    commands::cmd_train(&train_cfg, &overrides_to(&out)).unwrap();

    let eval_cfg = write_config(
        dir.path(),
        "eval.toml",
        &format!(
            r#"
[eval]
model_dir = "{}"

[dataset]
source = "synthetic"
[dataset.windowing]
frame = 256
stride = 256
trim_s = 0.0
{SYNTH_SMALL}

[output]
dir = "unused"
"#,
            out.join("trial_0/model").display()
        ),
    );
    let eval_out = dir.path().join("eval_out");
    commands::cmd_eval(&eval_cfg, &overrides_to(&eval_out)).unwrap();
    let text = fs::read_to_string(eval_out.join("eval.jsonl")).unwrap();
    let report: TrialReport = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(report.split, "eval");
}

fn sweep_config_body(alphas: &str, cutoffs: &str) -> String {
    format!(
        r#"
[dataset]
source = "synthetic"
[dataset.windowing]
frame = 256
stride = 256
trim_s = 0.0
{SYNTH_SMALL}

[split]
n_train_subjects = 3
n_valid_subjects = 1
n_test_subjects = 2

[model]
channel_widths = [4, 8]
kernel_size = 3

[train]
pretrain_epochs = 2
classifier_epochs = 0
batch_size = 16
lr = 0.001
trials = 1
seed = 42

[sweep]
alphas = {alphas}
cutoffs_hz = {cutoffs}

[output]
dir = "unused"
"#
    )
}

#[test]
fn sweep_grid_has_one_cell_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "sweep.toml",
        &sweep_config_body("[0.5, 5.0]", "[1.1, 2.1, 50.0]"),
    );
    let out = dir.path().join("out");
    commands::cmd_sweep(&config, &overrides_to(&out)).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 6);
}

#[test]
fn one_by_one_sweep_replays_the_training_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "sweep.toml",
        &sweep_config_body("[0.5]", "[2.1]"),
    );
    let out = dir.path().join("out");
    commands::cmd_sweep(&config, &overrides_to(&out)).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    let cell = report["cells"][0]["best_valid_accuracy"].as_f64().unwrap();

    // Independent replay: the cell is a rotation+octave-mix(0.5, 2.1) model
    // trained through the library, reporting its best per-epoch validation
    // accuracy.
    use octmix::augment::AugPolicy;
    use octmix::dataset::{
        generate_synthetic, split_by_subject, window_recordings, SplitSpec, SynthSpec,
        WindowingSpec,
    };
    use octmix::network::ModelConfig;
    use octmix::rng::{derive_seed, rng_from, stream};
    use octmix::trainer::{train_single, TrainConfig};

    let mut synth = SynthSpec::default_desk();
    synth.subjects = 6;
    synth.recordings_per_subject = 1;
    synth.duration_s = 8.0;
    synth.seed = 7;
    let corpus = generate_synthetic(&synth).unwrap();
    let trial_seed = derive_seed(42, &[stream::TRIAL, 0]);
    let mut split_rng = rng_from(trial_seed, &[stream::SPLIT]);
    let split = split_by_subject(
        &corpus.recordings,
        &SplitSpec {
            n_train_subjects: 3,
            n_valid_subjects: 1,
            n_test_subjects: 2,
        },
        &mut split_rng,
    )
    .unwrap();
    let wspec = WindowingSpec {
        frame: 256,
        stride: 256,
        trim_s: 0.0,
    };
    let (train, _) = window_recordings(&split.train, &wspec, 3).unwrap();
    let (valid, _) = window_recordings(&split.valid, &wspec, 3).unwrap();
    let cfg = TrainConfig {
        policies: Vec::new(),
        pretrain_epochs: 2,
        classifier_epochs: 0,
        batch_size: 16,
        seed: trial_seed,
        lr: 0.001,
    };
    let model_cfg = ModelConfig {
        channel_widths: vec![4, 8],
        kernel_size: 3,
        num_classes: 3,
    };
    let (_, trace) = train_single(
        &train,
        Some(&valid),
        &model_cfg,
        Some(&AugPolicy::rotation_octave_mix()),
        2,
        &cfg,
        derive_seed(trial_seed, &[stream::BRANCH, 0]),
    )
    .unwrap();
    let best = trace
        .valid_accuracy
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(cell.to_bits(), best.to_bits());
}

#[test]
fn inspect_filter_dumps_taps_and_response() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("filter");
    commands::cmd_inspect_filter(2.1, 100.0, None, &out).unwrap();
    let taps = read_tensor(&out.join("taps.tensor")).unwrap();
    assert_eq!(taps.shape(), &[127]);
    let sum: f64 = taps.iter().sum();
    assert!((sum - 1.0).abs() <= 1e-12);
    let response = read_tensor(&out.join("response.tensor")).unwrap();
    assert_eq!(response.shape(), &[512, 2]);
    // Unit DC gain at 0 Hz.
    assert!((response[[0, 1]] - 1.0).abs() <= 1e-9);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = train_config_body("none", "");
    body.push_str("\n[bogus]\nkey = 1\n");
    let config = write_config(dir.path(), "bad.toml", &body);
    match commands::cmd_train(&config, &overrides_to(&dir.path().join("out"))) {
        Err(CliError::Config(_)) => {}
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn unknown_variant_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "bad.toml", &train_config_body("warp-drive", ""));
    match commands::cmd_train(&config, &overrides_to(&dir.path().join("out"))) {
        Err(CliError::Config(msg)) => assert!(msg.contains("warp-drive")),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn insufficient_subjects_is_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let body = train_config_body("none", "").replace("n_train_subjects = 3", "n_train_subjects = 30");
    let config = write_config(dir.path(), "bad.toml", &body);
    match commands::cmd_train(&config, &overrides_to(&dir.path().join("out"))) {
        Err(CliError::Config(msg)) => assert!(msg.contains("subjects")),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn binary_exit_codes() {
    // Missing config file -> config error -> exit 1.
    let status = bin()
        .args(["train", "--config", "/nonexistent/zzz.toml"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));

    // Bad flag value -> clap's own exit code 2 is fine; a working invocation
    // exits 0.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f");
    let status = bin()
        .args([
            "inspect-filter",
            "--cutoff-hz",
            "2.1",
            "--sample-rate-hz",
            "100",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));

    // Invalid spec -> config error -> exit 1.
    let status = bin()
        .args(["inspect-filter", "--cutoff-hz=-1", "--sample-rate-hz", "100", "--out"])
        .arg(dir.path().join("g"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
}

#[test]
fn env_var_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "gen.toml",
        &format!(
            r#"
[synthetic]
num_classes = 3
subjects = 3
recordings_per_subject = 1
duration_s = 1.0
sample_rate_hz = 100.0
noise_level = 0.0
gain_jitter = 0.0
phase_jitter = 0.0
seed = 5
class_profiles = [
  {{ base_freq_hz = 1.0, amplitude = 1.0, harmonic_weight = 0.2 }},
  {{ base_freq_hz = 2.5, amplitude = 1.3, harmonic_weight = 0.35 }},
  {{ base_freq_hz = 4.0, amplitude = 1.6, harmonic_weight = 0.5 }},
]
[output]
dir = "{}"
"#,
            dir.path().join("from_config").display()
        ),
    );
    let env_dir = dir.path().join("from_env");
    let status = bin()
        .args(["gen-synth", "--config"])
        .arg(&config)
        .env("OCTMIX_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(env_dir.join("manifest.tsv").exists());
    assert!(!dir.path().join("from_config").exists());

    // An explicit flag wins over the environment.
    let flag_dir = dir.path().join("from_flag");
    let status = bin()
        .args(["gen-synth", "--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&flag_dir)
        .env("OCTMIX_OUT_DIR", dir.path().join("ignored"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(flag_dir.join("manifest.tsv").exists());
}
