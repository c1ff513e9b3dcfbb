//! Recording ingestion, windowing/trimming, subject-based splitting, and a
//! synthetic corpus generator for desk-scale experiments.
//!
//! Real corpora arrive through one generic path: a tab-separated manifest
//! (`path<TAB>subject_id<TAB>label<TAB>sample_rate_hz`) pointing at per-file
//! CSVs with a `timestamp,ch_0,...,ch_{C-1}` header. The synthetic generator
//! emits the same shapes so the whole pipeline runs without any external
//! download.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::{LabeledBatch, SoftLabel};
use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};
use crate::signal::Window;

/// One continuous multi-channel measurement by one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    /// Index into the corpus class vocabulary.
    pub activity_label: usize,
    /// `(L samples x C channels)`.
    pub samples: Array2<f64>,
    pub sample_rate_hz: f64,
}

/// A set of recordings plus the class vocabulary their labels index into.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub recordings: Vec<Recording>,
    pub class_names: Vec<String>,
}

impl Corpus {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subject_ids(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .recordings
            .iter()
            .map(|r| r.subject_id.as_str())
            .collect();
        set.into_iter().map(str::to_string).collect()
    }
}

/// Subject counts for one train/valid/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub n_train_subjects: usize,
    pub n_valid_subjects: usize,
    pub n_test_subjects: usize,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train_subjects == 0 || self.n_test_subjects == 0 {
            return Err(Error::InvalidConfig(
                "train and test splits need at least one subject".into(),
            ));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n_train_subjects + self.n_valid_subjects + self.n_test_subjects
    }
}

/// Recordings grouped by split.
#[derive(Debug, Clone)]
pub struct SplitRecordings {
    pub train: Vec<Recording>,
    pub valid: Vec<Recording>,
    pub test: Vec<Recording>,
}

/// Windowing parameters applied to every recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowingSpec {
    pub frame: usize,
    pub stride: usize,
    /// Seconds trimmed from each end of every recording.
    pub trim_s: f64,
}

impl WindowingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(
                "frame and stride must be at least 1".into(),
            ));
        }
        if !self.trim_s.is_finite() || self.trim_s < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "trim seconds must be nonnegative, got {}",
                self.trim_s
            )));
        }
        Ok(())
    }
}

/// Cuts one recording into fixed-length windows after trimming
/// `round(trim_s * fs)` samples from each end. Emits
/// `floor((L' - frame)/stride) + 1` windows, or none when the trimmed
/// recording is shorter than one frame. Every window carries the recording's
/// label as a one-hot vector over `num_classes`.
pub fn window_recording(
    r: &Recording,
    frame: usize,
    stride: usize,
    trim_s: f64,
    num_classes: usize,
) -> Result<Vec<(Window, SoftLabel)>> {
    WindowingSpec {
        frame,
        stride,
        trim_s,
    }
    .validate()?;
    let trim = (trim_s * r.sample_rate_hz).round() as usize;
    let len = r.samples.nrows();
    if len < 2 * trim + frame {
        return Ok(Vec::new());
    }
    let usable = len - 2 * trim;
    let count = (usable - frame) / stride + 1;
    let label = SoftLabel::one_hot(r.activity_label, num_classes)?;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = trim + w * stride;
        let samples = r.samples.slice(ndarray::s![start..start + frame, ..]).to_owned();
        out.push((Window::new(samples, r.sample_rate_hz)?, label.clone()));
    }
    Ok(out)
}

/// Counts of recordings kept and skipped while windowing a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowingReport {
    pub recordings_used: usize,
    pub recordings_skipped: usize,
    pub windows: usize,
}

/// Windows a whole recording set into one batch; recordings too short to
/// yield a window are skipped and counted.
pub fn window_recordings(
    recordings: &[Recording],
    spec: &WindowingSpec,
    num_classes: usize,
) -> Result<(LabeledBatch, WindowingReport)> {
    let mut windows = Vec::new();
    let mut labels = Vec::new();
    let mut report = WindowingReport::default();
    for r in recordings {
        let pairs = window_recording(r, spec.frame, spec.stride, spec.trim_s, num_classes)?;
        if pairs.is_empty() {
            report.recordings_skipped += 1;
            continue;
        }
        report.recordings_used += 1;
        for (w, l) in pairs {
            windows.push(w);
            labels.push(l);
        }
    }
    report.windows = windows.len();
    if windows.is_empty() {
        return Err(Error::InvalidBatch(
            "no recording yielded a single window".into(),
        ));
    }
    Ok((LabeledBatch::new(windows, labels)?, report))
}

/// Splits recordings into disjoint subject groups of the requested sizes.
/// Subjects are sampled without replacement from the sorted id list, so the
/// outcome depends only on the generator state.
pub fn split_by_subject<R: Rng>(
    recordings: &[Recording],
    spec: &SplitSpec,
    rng: &mut R,
) -> Result<SplitRecordings> {
    spec.validate()?;
    let ids: BTreeSet<&str> = recordings.iter().map(|r| r.subject_id.as_str()).collect();
    let mut ids: Vec<&str> = ids.into_iter().collect();
    if ids.len() < spec.total() {
        return Err(Error::InsufficientSubjects(format!(
            "need {} subjects ({} train + {} valid + {} test), corpus has {}",
            spec.total(),
            spec.n_train_subjects,
            spec.n_valid_subjects,
            spec.n_test_subjects,
            ids.len()
        )));
    }
    ids.shuffle(rng);
    let train_ids: BTreeSet<&str> = ids[..spec.n_train_subjects].iter().copied().collect();
    let valid_ids: BTreeSet<&str> = ids
        [spec.n_train_subjects..spec.n_train_subjects + spec.n_valid_subjects]
        .iter()
        .copied()
        .collect();
    let test_ids: BTreeSet<&str> = ids[spec.n_train_subjects + spec.n_valid_subjects..spec.total()]
        .iter()
        .copied()
        .collect();
    let gather = |set: &BTreeSet<&str>| {
        recordings
            .iter()
            .filter(|r| set.contains(r.subject_id.as_str()))
            .cloned()
            .collect::<Vec<_>>()
    };
    Ok(SplitRecordings {
        train: gather(&train_ids),
        valid: gather(&valid_ids),
        test: gather(&test_ids),
    })
}

/// Per-class signal signature for the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub base_freq_hz: f64,
    pub amplitude: f64,
    /// Relative weight of the second harmonic.
    pub harmonic_weight: f64,
}

/// Full description of a synthetic corpus; generation is a pure function of
/// this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub subjects: usize,
    /// Recordings per (subject, class) pair.
    pub recordings_per_subject: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub class_profiles: Vec<ClassProfile>,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_level: f64,
    /// Subject gain drawn from `[1 - gain_jitter, 1 + gain_jitter]`.
    pub gain_jitter: f64,
    /// Recording phase offset drawn from `[-phase_jitter, phase_jitter]` rad.
    pub phase_jitter: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Three well-separated classes at 100 Hz; small desk-scale default.
    pub fn default_desk() -> Self {
        Self {
            num_classes: 3,
            subjects: 30,
            recordings_per_subject: 2,
            duration_s: 15.0,
            sample_rate_hz: 100.0,
            class_profiles: vec![
                ClassProfile {
                    base_freq_hz: 1.0,
                    amplitude: 1.0,
                    harmonic_weight: 0.2,
                },
                ClassProfile {
                    base_freq_hz: 2.5,
                    amplitude: 1.3,
                    harmonic_weight: 0.35,
                },
                ClassProfile {
                    base_freq_hz: 4.0,
                    amplitude: 1.6,
                    harmonic_weight: 0.5,
                },
            ],
            noise_level: 0.05,
            gain_jitter: 0.1,
            phase_jitter: 0.8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.subjects == 0 || self.recordings_per_subject == 0 {
            return Err(Error::InvalidConfig(
                "classes, subjects and recordings must be positive".into(),
            ));
        }
        if self.class_profiles.len() != self.num_classes {
            return Err(Error::InvalidConfig(format!(
                "{} class profiles for {} classes",
                self.class_profiles.len(),
                self.num_classes
            )));
        }
        if self.duration_s <= 0.0 || self.sample_rate_hz <= 0.0 {
            return Err(Error::InvalidConfig(
                "duration and sample rate must be positive".into(),
            ));
        }
        if self.noise_level < 0.0 || self.gain_jitter < 0.0 || self.phase_jitter < 0.0 {
            return Err(Error::InvalidConfig(
                "noise and jitter levels must be nonnegative".into(),
            ));
        }
        for p in &self.class_profiles {
            if p.base_freq_hz <= 0.0 || p.amplitude <= 0.0 {
                return Err(Error::InvalidConfig(
                    "class frequencies and amplitudes must be positive".into(),
                ));
            }
        }
        let mut freqs: Vec<f64> = self.class_profiles.iter().map(|p| p.base_freq_hz).collect();
        freqs.sort_by(f64::total_cmp);
        if freqs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig(
                "class base frequencies must be distinct".into(),
            ));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes).map(|c| format!("class_{c}")).collect()
    }
}

/// Mixing weights that spread one source signal over three channels.
const CHANNEL_MIX: [f64; 3] = [1.0, 0.8, 0.6];
const CHANNEL_PHASE: [f64; 3] = [0.0, 0.6, 1.2];

/// Generates the synthetic corpus described by `spec`. Each recording is a
/// class-specific sinusoid plus second harmonic, scaled by a per-subject
/// gain, phase-jittered per recording, spread over three channels, with
/// Gaussian noise. Deterministic: the same spec always yields the same bits.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let samples_per_recording = (spec.duration_s * spec.sample_rate_hz).round() as usize;
    let mut recordings = Vec::new();
    for subject in 0..spec.subjects {
        let mut subject_rng = rng_from(spec.seed, &[stream::SYNTH, subject as u64]);
        let gain = if spec.gain_jitter > 0.0 {
            subject_rng.random_range(1.0 - spec.gain_jitter..1.0 + spec.gain_jitter)
        } else {
            1.0
        };
        for class in 0..spec.num_classes {
            for rec in 0..spec.recordings_per_subject {
                let mut rec_rng = rng_from(
                    spec.seed,
                    &[stream::SYNTH, subject as u64, class as u64, rec as u64],
                );
                let phase = if spec.phase_jitter > 0.0 {
                    rec_rng.random_range(-spec.phase_jitter..spec.phase_jitter)
                } else {
                    0.0
                };
                let profile = spec.class_profiles[class];
                let noise = Normal::new(0.0, 1.0).expect("unit normal");
                let mut samples = Array2::zeros((samples_per_recording, 3));
                for t in 0..samples_per_recording {
                    let time = t as f64 / spec.sample_rate_hz;
                    let omega = 2.0 * std::f64::consts::PI * profile.base_freq_hz;
                    for c in 0..3 {
                        let arg = omega * time + phase + CHANNEL_PHASE[c];
                        let value = gain
                            * profile.amplitude
                            * CHANNEL_MIX[c]
                            * (arg.sin() + profile.harmonic_weight * (2.0 * arg).sin());
                        let n = if spec.noise_level > 0.0 {
                            spec.noise_level * noise.sample(&mut rec_rng)
                        } else {
                            0.0
                        };
                        samples[(t, c)] = value + n;
                    }
                }
                recordings.push(Recording {
                    subject_id: format!("subject_{subject:03}"),
                    activity_label: class,
                    samples,
                    sample_rate_hz: spec.sample_rate_hz,
                });
            }
        }
    }
    Ok(Corpus {
        recordings,
        class_names: spec.class_names(),
    })
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq)]
struct ManifestEntry {
    path: PathBuf,
    subject_id: String,
    label: String,
    sample_rate_hz: f64,
}

fn parse_manifest(manifest_path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(manifest_path).map_err(|e| {
        Error::Parse(format!(
            "cannot read manifest {}: {e}",
            manifest_path.display()
        ))
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!(
                "{}:{}: expected 4 tab-separated fields, got {}",
                manifest_path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let label = fields[2].trim();
        if label.is_empty() {
            return Err(Error::Parse(format!(
                "{}:{}: empty label",
                manifest_path.display(),
                lineno + 1
            )));
        }
        let sample_rate_hz: f64 = fields[3].trim().parse().map_err(|_| {
            Error::Parse(format!(
                "{}:{}: bad sample rate {:?}",
                manifest_path.display(),
                lineno + 1,
                fields[3]
            ))
        })?;
        if !sample_rate_hz.is_finite() || sample_rate_hz <= 0.0 {
            return Err(Error::Parse(format!(
                "{}:{}: sample rate must be positive",
                manifest_path.display(),
                lineno + 1
            )));
        }
        let raw = Path::new(fields[0].trim());
        let path = if raw.is_absolute() {
            raw.to_path_buf()
        } else {
            base.join(raw)
        };
        entries.push(ManifestEntry {
            path,
            subject_id: fields[1].trim().to_string(),
            label: label.to_string(),
            sample_rate_hz,
        });
    }
    if entries.is_empty() {
        return Err(Error::Parse(format!(
            "manifest {} lists no recordings",
            manifest_path.display()
        )));
    }
    Ok(entries)
}

fn parse_csv_recording(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if lineno == 0 && line.starts_with("timestamp") {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 2 {
            return Err(Error::Parse(format!(
                "{}:{}: expected timestamp plus at least one channel",
                path.display(),
                lineno + 1
            )));
        }
        let channels = cells.len() - 1;
        match width {
            None => width = Some(channels),
            Some(w) if w != channels => {
                return Err(Error::Parse(format!(
                    "{}:{}: ragged row, {} channels where {} expected",
                    path.display(),
                    lineno + 1,
                    channels,
                    w
                )));
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(channels);
        for cell in &cells[1..] {
            let value: f64 = cell.trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "{}:{}: non-numeric cell {:?}",
                    path.display(),
                    lineno + 1,
                    cell
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Parse(format!(
                    "{}:{}: non-finite sample {value}",
                    path.display(),
                    lineno + 1
                )));
            }
            row.push(value);
        }
        rows.push(row);
    }
    let width = width
        .ok_or_else(|| Error::Parse(format!("{}: no data rows", path.display())))?;
    let mut samples = Array2::zeros((rows.len(), width));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            samples[(i, j)] = v;
        }
    }
    Ok(samples)
}

/// Loads a corpus from a manifest. Every referenced file is checked for
/// existence up front, before any file is parsed; the class vocabulary is
/// the sorted set of distinct labels.
pub fn load_csv_corpus(manifest_path: &Path) -> Result<Corpus> {
    let entries = parse_manifest(manifest_path)?;
    for e in &entries {
        if !e.path.exists() {
            return Err(Error::Parse(format!(
                "manifest references missing file {}",
                e.path.display()
            )));
        }
    }
    let class_names: Vec<String> = {
        let set: BTreeSet<&str> = entries.iter().map(|e| e.label.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    };
    let mut recordings = Vec::with_capacity(entries.len());
    for e in &entries {
        let samples = parse_csv_recording(&e.path)?;
        let activity_label = class_names
            .iter()
            .position(|c| c == &e.label)
            .expect("label from vocabulary");
        recordings.push(Recording {
            subject_id: e.subject_id.clone(),
            activity_label,
            samples,
            sample_rate_hz: e.sample_rate_hz,
        });
    }
    Ok(Corpus {
        recordings,
        class_names,
    })
}

/// Writes a corpus as per-recording CSV files plus a manifest; returns the
/// manifest path. File names are deterministic in corpus order.
pub fn write_csv_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (i, r) in corpus.recordings.iter().enumerate() {
        let name = format!(
            "rec_{i:05}_{}_{}.csv",
            r.subject_id, corpus.class_names[r.activity_label]
        );
        let mut text = String::from("timestamp");
        for c in 0..r.samples.ncols() {
            let _ = write!(text, ",ch_{c}");
        }
        text.push('\n');
        for t in 0..r.samples.nrows() {
            let _ = write!(text, "{:.6}", t as f64 / r.sample_rate_hz);
            for c in 0..r.samples.ncols() {
                let _ = write!(text, ",{:.17e}", r.samples[(t, c)]);
            }
            text.push('\n');
        }
        fs::write(dir.join(&name), text)?;
        let _ = writeln!(
            manifest,
            "{name}\t{}\t{}\t{}",
            r.subject_id, corpus.class_names[r.activity_label], r.sample_rate_hz
        );
    }
    let manifest_path = dir.join("manifest.tsv");
    fs::write(&manifest_path, manifest)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn stub_recording(subject: &str, label: usize, len: usize) -> Recording {
        Recording {
            subject_id: subject.to_string(),
            activity_label: label,
            samples: Array2::from_shape_fn((len, 3), |(t, c)| (t * 3 + c) as f64),
            sample_rate_hz: 100.0,
        }
    }

    #[test]
    fn window_count_formula() {
        // 3000 samples at 100 Hz, 5 s trim each end -> 2000 usable,
        // frame 256 stride 256 -> 7 windows.
        let r = stub_recording("s1", 0, 3000);
        let windows = window_recording(&r, 256, 256, 5.0, 2).unwrap();
        assert_eq!(windows.len(), 7);
        // Windows never reach into the trimmed regions.
        assert_eq!(windows[0].0.samples()[(0, 0)], r.samples[(500, 0)]);
        let last_start = 500 + 6 * 256;
        assert!(last_start + 256 <= 2500);
    }

    #[test]
    fn exact_frame_gives_one_window() {
        let r = stub_recording("s1", 0, 256);
        assert_eq!(window_recording(&r, 256, 256, 0.0, 2).unwrap().len(), 1);
    }

    #[test]
    fn short_recording_gives_zero_windows() {
        let r = stub_recording("s1", 0, 255);
        assert!(window_recording(&r, 256, 256, 0.0, 2).unwrap().is_empty());
        // Trimming can also consume the whole recording.
        let r = stub_recording("s1", 0, 1100);
        assert!(window_recording(&r, 256, 256, 5.0, 2).unwrap().is_empty());
    }

    #[test]
    fn windows_carry_one_hot_labels() {
        let r = stub_recording("s1", 1, 300);
        let windows = window_recording(&r, 256, 256, 0.0, 3).unwrap();
        assert_eq!(windows[0].1.probs(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn windowing_report_counts_skipped() {
        let recordings = vec![
            stub_recording("s1", 0, 600),
            stub_recording("s2", 1, 100),
            stub_recording("s3", 1, 256),
        ];
        let spec = WindowingSpec {
            frame: 256,
            stride: 256,
            trim_s: 0.0,
        };
        let (batch, report) = window_recordings(&recordings, &spec, 2).unwrap();
        assert_eq!(report.recordings_used, 2);
        assert_eq!(report.recordings_skipped, 1);
        assert_eq!(report.windows, 3);
        assert_eq!(batch.len(), 3);
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let mut recordings = Vec::new();
        for s in 0..120 {
            recordings.push(stub_recording(&format!("subj_{s:03}"), s % 3, 64));
            recordings.push(stub_recording(&format!("subj_{s:03}"), (s + 1) % 3, 64));
        }
        let spec = SplitSpec {
            n_train_subjects: 10,
            n_valid_subjects: 50,
            n_test_subjects: 50,
        };
        let mut rng = rng_from(3, &[]);
        let split = split_by_subject(&recordings, &spec, &mut rng).unwrap();
        let subjects = |rs: &[Recording]| {
            rs.iter()
                .map(|r| r.subject_id.clone())
                .collect::<BTreeSet<_>>()
        };
        let train = subjects(&split.train);
        let valid = subjects(&split.valid);
        let test = subjects(&split.test);
        assert_eq!(train.len(), 10);
        assert_eq!(valid.len(), 50);
        assert_eq!(test.len(), 50);
        assert!(train.is_disjoint(&valid));
        assert!(train.is_disjoint(&test));
        assert!(valid.is_disjoint(&test));
        // Recordings follow their subject.
        assert_eq!(split.train.len(), 2 * 10);
    }

    #[test]
    fn split_is_deterministic_under_seed() {
        let recordings: Vec<Recording> = (0..20)
            .map(|s| stub_recording(&format!("s{s}"), 0, 64))
            .collect();
        let spec = SplitSpec {
            n_train_subjects: 5,
            n_valid_subjects: 3,
            n_test_subjects: 3,
        };
        let a = split_by_subject(&recordings, &spec, &mut rng_from(9, &[])).unwrap();
        let b = split_by_subject(&recordings, &spec, &mut rng_from(9, &[])).unwrap();
        assert_eq!(
            a.train.iter().map(|r| &r.subject_id).collect::<Vec<_>>(),
            b.train.iter().map(|r| &r.subject_id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn split_with_too_few_subjects_errors() {
        let recordings: Vec<Recording> = (0..4)
            .map(|s| stub_recording(&format!("s{s}"), 0, 64))
            .collect();
        let spec = SplitSpec {
            n_train_subjects: 3,
            n_valid_subjects: 1,
            n_test_subjects: 2,
        };
        let err = split_by_subject(&recordings, &spec, &mut rng_from(1, &[])).unwrap_err();
        match err {
            Error::InsufficientSubjects(msg) => {
                assert!(msg.contains("need 6"));
                assert!(msg.contains("has 4"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_sized() {
        let mut spec = SynthSpec::default_desk();
        spec.subjects = 3;
        spec.duration_s = 2.0;
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.recordings.len(), 3 * 3 * 2);
        assert_eq!(a.recordings[0].samples.nrows(), 200);
        assert_eq!(a.recordings[0].samples.ncols(), 3);
    }

    #[test]
    fn noiseless_recordings_of_same_subject_class_match() {
        let mut spec = SynthSpec::default_desk();
        spec.subjects = 2;
        spec.duration_s = 1.0;
        spec.noise_level = 0.0;
        spec.phase_jitter = 0.0;
        let corpus = generate_synthetic(&spec).unwrap();
        let same: Vec<&Recording> = corpus
            .recordings
            .iter()
            .filter(|r| r.subject_id == "subject_000" && r.activity_label == 1)
            .collect();
        assert_eq!(same.len(), 2);
        assert_eq!(same[0].samples, same[1].samples);
    }

    #[test]
    fn distinct_base_frequencies_enforced() {
        let mut spec = SynthSpec::default_desk();
        spec.class_profiles[1].base_freq_hz = spec.class_profiles[0].base_freq_hz;
        assert!(generate_synthetic(&spec).is_err());
    }

    /// Nearest-centroid on per-window spectral energy must separate a
    /// low-noise corpus; establishes the corpus is learnable at all.
    #[test]
    fn synthetic_classes_are_spectrally_separable() {
        let mut spec = SynthSpec::default_desk();
        spec.subjects = 8;
        spec.duration_s = 6.0;
        spec.noise_level = 0.02;
        let corpus = generate_synthetic(&spec).unwrap();
        let wspec = WindowingSpec {
            frame: 256,
            stride: 256,
            trim_s: 0.0,
        };
        let (batch, _) = window_recordings(&corpus.recordings, &wspec, 3).unwrap();

        // Hand-rolled DFT energy in a few bands, axis 0 only.
        let features: Vec<Vec<f64>> = batch
            .windows()
            .iter()
            .map(|w| {
                let x: Vec<f64> = w.samples().column(0).to_vec();
                (1..=24)
                    .map(|k| {
                        let (mut re, mut im) = (0.0, 0.0);
                        for (t, &v) in x.iter().enumerate() {
                            let arg =
                                -2.0 * std::f64::consts::PI * k as f64 * t as f64 / x.len() as f64;
                            re += v * arg.cos();
                            im += v * arg.sin();
                        }
                        (re * re + im * im).sqrt()
                    })
                    .collect()
            })
            .collect();
        let truths: Vec<usize> = batch.labels().iter().map(|l| l.argmax()).collect();
        let dim = features[0].len();
        let mut centroids = vec![vec![0.0; dim]; 3];
        let mut counts = [0usize; 3];
        for (f, &t) in features.iter().zip(&truths) {
            counts[t] += 1;
            for (c, v) in centroids[t].iter_mut().zip(f) {
                *c += v;
            }
        }
        for (c, n) in centroids.iter_mut().zip(counts) {
            for v in c.iter_mut() {
                *v /= n as f64;
            }
        }
        let mut correct = 0;
        for (f, &t) in features.iter().zip(&truths) {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (k, c) in centroids.iter().enumerate() {
                let d: f64 = f.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
                if d < best_dist {
                    best_dist = d;
                    best = k;
                }
            }
            if best == t {
                correct += 1;
            }
        }
        let acc = correct as f64 / truths.len() as f64;
        assert!(acc >= 0.95, "nearest-centroid accuracy {acc}");
    }

    #[test]
    fn csv_round_trip() {
        let mut spec = SynthSpec::default_desk();
        spec.subjects = 2;
        spec.duration_s = 1.0;
        let corpus = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_csv_corpus(&corpus, dir.path()).unwrap();
        let loaded = load_csv_corpus(&manifest).unwrap();
        assert_eq!(loaded.recordings.len(), corpus.recordings.len());
        assert_eq!(loaded.class_names, corpus.class_names);
        for (a, b) in corpus.recordings.iter().zip(&loaded.recordings) {
            assert_eq!(a.subject_id, b.subject_id);
            assert_eq!(a.activity_label, b.activity_label);
            assert_eq!(a.samples.dim(), b.samples.dim());
            for (x, y) in a.samples.iter().zip(b.samples.iter()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn well_formed_three_line_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("rec.csv"),
            "timestamp,ch_0,ch_1\n0.00,1.0,2.0\n0.01,3.0,4.0\n0.02,5.0,6.0\n",
        )
        .unwrap();
        fs::write(dir.path().join("manifest.tsv"), "rec.csv\ts1\twalk\t100\n").unwrap();
        let corpus = load_csv_corpus(&dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(corpus.recordings.len(), 1);
        assert_eq!(corpus.recordings[0].samples.dim(), (3, 2));
        assert_eq!(corpus.class_names, vec!["walk".to_string()]);
    }

    #[test]
    fn nan_cell_names_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("rec.csv"),
            "timestamp,ch_0\n0.00,1.0\n0.01,NaN\n",
        )
        .unwrap();
        fs::write(dir.path().join("manifest.tsv"), "rec.csv\ts1\twalk\t100\n").unwrap();
        let err = load_csv_corpus(&dir.path().join("manifest.tsv")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3"), "missing line number in {msg}");
    }

    #[test]
    fn missing_file_reported_before_parsing() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("manifest.tsv"),
            "absent.csv\ts1\twalk\t100\n",
        )
        .unwrap();
        let err = load_csv_corpus(&dir.path().join("manifest.tsv")).unwrap_err();
        assert!(err.to_string().contains("missing file"));
    }

    #[test]
    fn ragged_and_non_numeric_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("ragged.csv"),
            "timestamp,ch_0,ch_1\n0.0,1.0,2.0\n0.1,3.0\n",
        )
        .unwrap();
        fs::write(
            dir.path().join("manifest.tsv"),
            "ragged.csv\ts1\twalk\t100\n",
        )
        .unwrap();
        assert!(load_csv_corpus(&dir.path().join("manifest.tsv"))
            .unwrap_err()
            .to_string()
            .contains("ragged"));

        fs::write(
            dir.path().join("bad.csv"),
            "timestamp,ch_0\n0.0,1.0\n0.1,abc\n",
        )
        .unwrap();
        fs::write(dir.path().join("manifest.tsv"), "bad.csv\ts1\twalk\t100\n").unwrap();
        assert!(load_csv_corpus(&dir.path().join("manifest.tsv"))
            .unwrap_err()
            .to_string()
            .contains("non-numeric"));
    }
}
