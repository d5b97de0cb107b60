//! Shared domain types and the on-disk record container.
//!
//! A recording is stored as a UTF-8 JSON manifest next to a raw payload of
//! little-endian `f32` samples in sub-epoch-major, then channel-major, then
//! sample order. Format version `"1"` is the only one understood.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Epoched recordings at sub-epoch granularity.
///
/// `data` is `[n_subepochs × n_channels × n_samples]`. Each sub-epoch carries
/// the id of the super-epoch it was sliced from (`group_ids`) and inherits
/// that super-epoch's class label (`labels`, values in {0, 1}).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTensor {
    pub data: Array3<f64>,
    pub group_ids: Vec<usize>,
    pub labels: Vec<u8>,
}

impl TrialTensor {
    pub fn n_subepochs(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_samples(&self) -> usize {
        self.data.dim().2
    }

    /// Number of distinct super-epochs.
    pub fn n_groups(&self) -> usize {
        self.group_ids.iter().collect::<BTreeSet<_>>().len()
    }

    /// Per-super-epoch labels, indexed by group id.
    ///
    /// Requires contiguous group ids starting at 0; callers validating
    /// untrusted data should run [`validate_record`] first.
    pub fn group_labels(&self) -> Vec<u8> {
        let n = self.n_groups();
        let mut labels = vec![0u8; n];
        for (i, &g) in self.group_ids.iter().enumerate() {
            if g < n {
                labels[g] = self.labels[i];
            }
        }
        labels
    }
}

/// Per sub-epoch spectral features: `[n_subepochs × n_channels × n_bins]`.
///
/// `n_bins` is `floor(n_samples / 2)` — the magnitude spectrum over
/// positive frequencies, DC included. All values are magnitudes, so ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub data: Array3<f64>,
    pub group_ids: Vec<usize>,
    pub labels: Vec<u8>,
}

impl FeatureTensor {
    pub fn n_subepochs(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_bins(&self) -> usize {
        self.data.dim().2
    }

    pub fn n_groups(&self) -> usize {
        self.group_ids.iter().collect::<BTreeSet<_>>().len()
    }

    /// (group_id, label) pairs for every distinct super-epoch, sorted by id.
    pub fn group_label_pairs(&self) -> Vec<(usize, u8)> {
        let mut pairs: Vec<(usize, u8)> = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, &g) in self.group_ids.iter().enumerate() {
            if seen.insert(g) {
                pairs.push((g, self.labels[i]));
            }
        }
        pairs.sort_unstable();
        pairs
    }
}

/// One epoched recording session of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub sample_rate_hz: u32,
    pub trials: TrialTensor,
    /// Per-super-epoch class labels, indexed by group id.
    pub labels: Vec<u8>,
    /// Free-text note (e.g. which task maps to which class). Never interpreted.
    pub metadata: Option<String>,
}

impl SubjectRecord {
    /// Builds a record from trials, deriving the per-super-epoch labels.
    pub fn from_trials(
        subject_id: impl Into<String>,
        sample_rate_hz: u32,
        trials: TrialTensor,
    ) -> Self {
        let labels = trials.group_labels();
        SubjectRecord {
            subject_id: subject_id.into(),
            sample_rate_hz,
            trials,
            labels,
            metadata: None,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.trials.n_channels()
    }
}

/// Selected channel indexes (`elv`) plus, per selected channel, selected
/// frequency-bin indexes (`fsm`, one row of length `k` per `elv` entry).
///
/// The unit the swarm searches over and the dimension-reduction operator's
/// parameters. Entries are unique within `elv` and within each `fsm` row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub n: usize,
    pub k: usize,
    pub elv: Vec<usize>,
    pub fsm: Vec<Vec<usize>>,
}

impl Mask {
    pub fn new(elv: Vec<usize>, fsm: Vec<Vec<usize>>) -> Self {
        Mask {
            n: elv.len(),
            k: fsm.first().map_or(0, Vec::len),
            elv,
            fsm,
        }
    }

    /// Checks structural invariants against a search space of
    /// `n_channels × n_bins`.
    pub fn check(&self, n_channels: usize, n_bins: usize) -> Result<()> {
        if self.elv.len() != self.n || self.fsm.len() != self.n {
            return Err(Error::shape(format!(
                "mask declares n={} but has {} channels / {} rows",
                self.n,
                self.elv.len(),
                self.fsm.len()
            )));
        }
        if self.n > n_channels || self.k > n_bins {
            return Err(Error::shape(format!(
                "mask dims {}x{} exceed search space {}x{}",
                self.n, self.k, n_channels, n_bins
            )));
        }
        let mut seen = BTreeSet::new();
        for &c in &self.elv {
            if c >= n_channels {
                return Err(Error::data(format!("channel index {c} out of range")));
            }
            if !seen.insert(c) {
                return Err(Error::data(format!("duplicate channel index {c}")));
            }
        }
        for row in &self.fsm {
            if row.len() != self.k {
                return Err(Error::shape("ragged feature-set matrix".to_string()));
            }
            let mut seen = BTreeSet::new();
            for &b in row {
                if b >= n_bins {
                    return Err(Error::data(format!("bin index {b} out of range")));
                }
                if !seen.insert(b) {
                    return Err(Error::data(format!("duplicate bin index {b} in row")));
                }
            }
        }
        Ok(())
    }
}

/// Binary confusion counts; class 1 is positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

// ---------------------------------------------------------------------------
// Validation

/// Returns every invariant violation found in `record`, empty when clean.
///
/// Violations are data, not failures: a caller may collect and report them.
/// Never mutates the input and always returns the same list for the same
/// record.
pub fn validate_record(record: &SubjectRecord) -> Vec<String> {
    let mut violations = Vec::new();
    let t = &record.trials;
    let n_sub = t.n_subepochs();

    if record.sample_rate_hz == 0 {
        violations.push("sample_rate must be positive".to_string());
    }
    if t.group_ids.len() != n_sub {
        violations.push(format!(
            "group_id length mismatch: {} ids for {} sub-epochs",
            t.group_ids.len(),
            n_sub
        ));
    }
    if t.labels.len() != n_sub {
        violations.push(format!(
            "sub-epoch label length mismatch: {} labels for {} sub-epochs",
            t.labels.len(),
            n_sub
        ));
    }
    for &l in t.labels.iter().chain(record.labels.iter()) {
        if l > 1 {
            violations.push(format!("label {l} outside {{0,1}}"));
            break;
        }
    }

    // Contiguity: sorted distinct group ids must be exactly 0..n_groups.
    let distinct: BTreeSet<usize> = t.group_ids.iter().copied().collect();
    let n_groups = distinct.len();
    if distinct.iter().next_back().is_some_and(|&m| m + 1 != n_groups) {
        violations.push("group ids are not contiguous from 0".to_string());
    }

    if record.labels.len() != n_groups {
        violations.push(format!(
            "label length mismatch: {} super-epoch labels for {} super-epochs",
            record.labels.len(),
            n_groups
        ));
    } else if t.group_ids.len() == n_sub && t.labels.len() == n_sub {
        for (i, &g) in t.group_ids.iter().enumerate() {
            if g < record.labels.len() && t.labels[i] != record.labels[g] {
                violations.push(format!(
                    "sub-epoch {i} label {} disagrees with super-epoch {g} label {}",
                    t.labels[i], record.labels[g]
                ));
                break;
            }
        }
    }

    violations
}

// ---------------------------------------------------------------------------
// Disk container

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: String,
    subject_id: String,
    sample_rate_hz: u32,
    n_subepochs: usize,
    n_channels: usize,
    n_samples: usize,
    /// Per-sub-epoch class labels (aligned with `group_ids`).
    labels: Vec<u8>,
    group_ids: Vec<usize>,
    payload_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<String>,
}

/// Writes `record` as `<manifest_path>` (JSON) plus a sibling `.f32` payload.
///
/// Payload samples are stored as little-endian `f32`; values produced by the
/// synthetic generator are already quantized to `f32`, so generator output
/// round-trips exactly.
pub fn save_record(record: &SubjectRecord, manifest_path: &Path) -> Result<()> {
    let payload_path = payload_path_for(manifest_path);
    let payload_file = payload_path
        .file_name()
        .ok_or_else(|| Error::data("manifest path has no file name".to_string()))?
        .to_string_lossy()
        .into_owned();

    let t = &record.trials;
    let manifest = Manifest {
        format_version: FORMAT_VERSION.to_string(),
        subject_id: record.subject_id.clone(),
        sample_rate_hz: record.sample_rate_hz,
        n_subepochs: t.n_subepochs(),
        n_channels: t.n_channels(),
        n_samples: t.n_samples(),
        labels: t.labels.clone(),
        group_ids: t.group_ids.clone(),
        payload_file,
        metadata: record.metadata.clone(),
    };

    let mut bytes = Vec::with_capacity(t.data.len() * 4);
    // Array3 iterates row-major: sub-epoch, then channel, then sample.
    for &v in t.data.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }

    fs::write(&payload_path, bytes)?;
    fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Loads a record written by [`save_record`].
pub fn load_record(manifest_path: &Path) -> Result<SubjectRecord> {
    let manifest_text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)?;

    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "unknown format version {:?} (expected {:?})",
            manifest.format_version, FORMAT_VERSION
        )));
    }

    let payload_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.payload_file);
    let bytes = fs::read(&payload_path)?;

    let expected = manifest.n_subepochs * manifest.n_channels * manifest.n_samples;
    if bytes.len() != expected * 4 {
        return Err(Error::shape(format!(
            "payload holds {} bytes but manifest dims {}x{}x{} require {}",
            bytes.len(),
            manifest.n_subepochs,
            manifest.n_channels,
            manifest.n_samples,
            expected * 4
        )));
    }
    if manifest.labels.len() != manifest.n_subepochs
        || manifest.group_ids.len() != manifest.n_subepochs
    {
        return Err(Error::shape(
            "manifest labels/group_ids disagree with n_subepochs".to_string(),
        ));
    }

    let samples: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let data = Array3::from_shape_vec(
        (manifest.n_subepochs, manifest.n_channels, manifest.n_samples),
        samples,
    )
    .map_err(|e| Error::shape(e.to_string()))?;

    let trials = TrialTensor {
        data,
        group_ids: manifest.group_ids,
        labels: manifest.labels,
    };
    let labels = trials.group_labels();
    Ok(SubjectRecord {
        subject_id: manifest.subject_id,
        sample_rate_hz: manifest.sample_rate_hz,
        trials,
        labels,
        metadata: manifest.metadata,
    })
}

/// Payload path derived from a manifest path: same stem, `.f32` extension.
pub fn payload_path_for(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("f32")
}
