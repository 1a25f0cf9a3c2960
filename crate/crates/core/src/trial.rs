//! Trial data model, on-disk trial formats, manifests and per-channel
//! preprocessing.
//!
//! A trial is one `T x C` activation recording (token steps by channels)
//! plus its provenance. Two file formats are supported:
//!
//! * binary: `"PSIA"` | `u16` version | `u32` T | `u32` C | `u32` metadata
//!   length | UTF-8 JSON metadata | `T*C` little-endian `f32`, row-major.
//! * CSV: header `t,ch0,ch1,...`, one row per token step. Metadata lives in a
//!   sidecar `<file>.meta.json`; without it the trial gets placeholder
//!   provenance derived from the file name.
//!
//! Values are stored as `f32` and analysed as `f64`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PSIA";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4;

/// Channels whose temporal standard deviation is at or below this are rejected.
pub const MIN_CHANNEL_SD: f64 = 1e-12;

/// Experimental regime a trial was recorded under.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    IntactComplex,
    IntactRepetition,
    IntactNoisy,
    DamagedHeads,
    DamagedNoise,
    Custom(String),
}

impl Condition {
    /// The five recorded regimes, in reporting order.
    pub const STANDARD: [Condition; 5] = [
        Condition::IntactComplex,
        Condition::IntactRepetition,
        Condition::IntactNoisy,
        Condition::DamagedHeads,
        Condition::DamagedNoise,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            Condition::IntactComplex => "intact_complex",
            Condition::IntactRepetition => "intact_repetition",
            Condition::IntactNoisy => "intact_noisy",
            Condition::DamagedHeads => "damaged_heads",
            Condition::DamagedNoise => "damaged_noise",
            Condition::Custom(s) => s,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "intact_complex" => Condition::IntactComplex,
            "intact_repetition" => Condition::IntactRepetition,
            "intact_noisy" => Condition::IntactNoisy,
            "damaged_heads" => Condition::DamagedHeads,
            "damaged_noise" => Condition::DamagedNoise,
            other => Condition::Custom(other.to_string()),
        })
    }
}

impl Serialize for Condition {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s.is_empty() {
            return Err(serde::de::Error::custom("empty condition label"));
        }
        Ok(s.parse().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_k: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 50,
        }
    }
}

/// Provenance carried alongside every recording. This is exactly the JSON
/// object stored in the binary header; unknown keys are preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub trial_id: String,
    pub condition: Condition,
    pub block_ids: Vec<u32>,
    pub channel_indices: Vec<u32>,
    pub seed: u64,
    #[serde(default)]
    pub generation_params: GenerationParams,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// One validated `T x C` activation recording.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrial {
    meta: TrialMeta,
    data: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialFormat {
    Binary,
    Csv,
}

impl ActivationTrial {
    pub fn new(meta: TrialMeta, data: Array2<f64>) -> Result<Self> {
        let (t, c) = data.dim();
        if t < 2 || c < 2 {
            return Err(Error::InvalidTrial(format!(
                "need at least 2 token steps and 2 channels, got {t}x{c}"
            )));
        }
        if meta.trial_id.is_empty() {
            return Err(Error::InvalidTrial("empty trial_id".into()));
        }
        if meta.channel_indices.len() != c {
            return Err(Error::InvalidTrial(format!(
                "{} channel indices for {c} channels",
                meta.channel_indices.len()
            )));
        }
        if let Some(sources) = source_blocks(&meta)? {
            if sources.len() != c {
                return Err(Error::InvalidTrial(format!(
                    "{} source blocks for {c} channels",
                    sources.len()
                )));
            }
            let mut seen = BTreeSet::new();
            for (&b, &idx) in sources.iter().zip(&meta.channel_indices) {
                if !seen.insert((b, idx)) {
                    return Err(Error::InvalidTrial(format!(
                        "duplicate channel index {idx} from block {b}"
                    )));
                }
            }
        } else {
            for segment in channel_segments(&meta.block_ids, c)? {
                let mut seen = BTreeSet::new();
                for &idx in &meta.channel_indices[segment] {
                    if !seen.insert(idx) {
                        return Err(Error::InvalidTrial(format!(
                            "duplicate channel index {idx} within a block segment"
                        )));
                    }
                }
            }
        }
        for ((row, channel), v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row, channel });
            }
        }
        Ok(Self { meta, data })
    }

    pub fn meta(&self) -> &TrialMeta {
        &self.meta
    }

    pub fn id(&self) -> &str {
        &self.meta.trial_id
    }

    pub fn condition(&self) -> &Condition {
        &self.meta.condition
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn with_condition(mut self, condition: Condition) -> Self {
        self.meta.condition = condition;
        self
    }

    /// Source block of every channel, when the trial carries block attribution.
    pub fn channel_blocks(&self) -> Option<Vec<u32>> {
        let blocks = &self.meta.block_ids;
        if blocks.is_empty() {
            return source_blocks(&self.meta).ok().flatten();
        }
        let per_block = self.channels() / blocks.len();
        Some(
            (0..self.channels())
                .map(|j| blocks[j / per_block])
                .collect(),
        )
    }

    /// Restricts the recording to the given columns, in the given order.
    /// Block attribution is kept only when the selection is a union of whole
    /// contiguous block segments.
    pub fn select_channels(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&j| j >= self.channels()) {
            return Err(Error::Arity(format!(
                "channel {bad} out of range for {} channels",
                self.channels()
            )));
        }
        let data = self.data.select(Axis(1), columns);
        let mut meta = self.meta.clone();
        meta.channel_indices = columns
            .iter()
            .map(|&j| self.meta.channel_indices[j])
            .collect();
        meta.extra.remove(SOURCE_BLOCKS_KEY);
        meta.block_ids = Vec::new();
        if let Some(blocks) = self.channel_blocks() {
            meta.block_ids = whole_block_selection(&blocks, columns, self.channels());
            if meta.block_ids.is_empty() {
                let sources: Vec<u32> = columns.iter().map(|&j| blocks[j]).collect();
                meta.extra.insert(SOURCE_BLOCKS_KEY.into(), serde_json::json!(sources));
            }
        }
        ActivationTrial::new(meta, data)
    }

    /// The trial as it will read back after a save/load cycle.
    pub fn quantized(&self) -> Self {
        Self {
            meta: self.meta.clone(),
            data: self.data.mapv(|v| v as f32 as f64),
        }
    }
}

/// Metadata key holding per-channel source blocks for trials whose channels
/// no longer form whole contiguous block segments.
pub const SOURCE_BLOCKS_KEY: &str = "source_blocks";

fn source_blocks(meta: &TrialMeta) -> Result<Option<Vec<u32>>> {
    if !meta.block_ids.is_empty() {
        return Ok(None);
    }
    match meta.extra.get(SOURCE_BLOCKS_KEY) {
        None => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| Error::InvalidTrial(format!("bad {SOURCE_BLOCKS_KEY}: {e}"))),
    }
}

/// Contiguous per-block channel ranges. With no block ids the whole row is one
/// segment.
fn channel_segments(block_ids: &[u32], c: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if block_ids.is_empty() {
        return Ok(std::iter::once(0..c).collect());
    }
    if !c.is_multiple_of(block_ids.len()) {
        return Err(Error::InvalidTrial(format!(
            "{c} channels cannot be split evenly over {} blocks",
            block_ids.len()
        )));
    }
    let per = c / block_ids.len();
    Ok((0..block_ids.len()).map(|b| b * per..(b + 1) * per).collect())
}

fn whole_block_selection(blocks: &[u32], columns: &[usize], c: usize) -> Vec<u32> {
    let mut distinct: Vec<u32> = Vec::new();
    for &j in columns {
        if distinct.last() != Some(&blocks[j]) {
            distinct.push(blocks[j]);
        }
    }
    let n_blocks = blocks.iter().collect::<BTreeSet<_>>().len();
    let per = c / n_blocks.max(1);
    let contiguous = columns.windows(2).all(|w| w[1] == w[0] + 1);
    let uniq = distinct.iter().collect::<BTreeSet<_>>().len() == distinct.len();
    if contiguous && uniq && columns.len() == distinct.len() * per && columns[0].is_multiple_of(per) {
        distinct
    } else {
        Vec::new()
    }
}

/// Reads a trial, detecting the format from the first bytes.
pub fn load_trial(path: impl AsRef<Path>) -> Result<ActivationTrial> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes, path)
    } else if bytes.starts_with(b"t,") || bytes.starts_with(b"t\n") {
        decode_csv(&bytes, path)
    } else {
        Err(Error::Format {
            path: path.to_path_buf(),
            reason: "missing PSIA magic or CSV header".into(),
        })
    }
}

pub fn save_trial(trial: &ActivationTrial, path: impl AsRef<Path>, format: TrialFormat) -> Result<()> {
    let path = path.as_ref();
    let payload = f32_payload(trial)?;
    match format {
        TrialFormat::Binary => {
            let bytes = encode_binary(trial.meta(), trial.len(), trial.channels(), &payload)?;
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        TrialFormat::Csv => {
            write_csv(path, trial.channels(), &payload)?;
            let meta = serde_json::to_vec_pretty(trial.meta()).expect("metadata serialises");
            let sidecar = csv_sidecar(path);
            fs::write(&sidecar, meta).map_err(|e| Error::io(sidecar, e))
        }
    }
}

pub fn csv_sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn f32_payload(trial: &ActivationTrial) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(trial.len() * trial.channels());
    for ((row, channel), &v) in trial.data().indexed_iter() {
        let x = v as f32;
        if !x.is_finite() {
            return Err(Error::NonFinite { row, channel });
        }
        out.push(x);
    }
    Ok(out)
}

fn encode_binary(meta: &TrialMeta, t: usize, c: usize, payload: &[f32]) -> Result<Vec<u8>> {
    let meta_json = serde_json::to_vec(meta).expect("metadata serialises");
    let dim = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::InvalidTrial(format!("{what} {n} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + meta_json.len() + payload.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim(t, "T")?.to_le_bytes());
    out.extend_from_slice(&dim(c, "C")?.to_le_bytes());
    out.extend_from_slice(&dim(meta_json.len(), "metadata length")?.to_le_bytes());
    out.extend_from_slice(&meta_json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn decode_binary(bytes: &[u8], path: &Path) -> Result<ActivationTrial> {
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let corrupt = |reason: String| Error::Corruption {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(format!("header truncated at {} bytes", bytes.len())));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(format(format!("unsupported version {version}")));
    }
    let t = u32_at(6);
    let c = u32_at(10);
    let meta_len = u32_at(14);
    let meta_end = HEADER_LEN
        .checked_add(meta_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt(format!("metadata length {meta_len} runs past end of file")))?;
    let meta: TrialMeta = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
        .map_err(|e| format(format!("metadata: {e}")))?;
    let payload = &bytes[meta_end..];
    let expected = t
        .checked_mul(c)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| corrupt(format!("dimensions {t}x{c} overflow")))?;
    if payload.len() != expected {
        return Err(corrupt(format!(
            "header declares {t}x{c} ({expected} payload bytes), found {}",
            payload.len()
        )));
    }
    if meta.channel_indices.len() != c {
        return Err(corrupt(format!(
            "header declares {c} channels, metadata lists {}",
            meta.channel_indices.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let data = Array2::from_shape_vec((t, c), values).expect("length checked");
    ActivationTrial::new(meta, data)
}

fn write_csv(path: &Path, c: usize, payload: &[f32]) -> Result<()> {
    let mut out = String::with_capacity(payload.len() * 12);
    out.push('t');
    for j in 0..c {
        out.push_str(&format!(",ch{j}"));
    }
    out.push('\n');
    for (t, row) in payload.chunks_exact(c).enumerate() {
        out.push_str(&t.to_string());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

fn decode_csv(bytes: &[u8], path: &Path) -> Result<ActivationTrial> {
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader.headers().map_err(|e| format(e.to_string()))?.clone();
    let c = header.len().saturating_sub(1);
    for (j, name) in header.iter().skip(1).enumerate() {
        if name != format!("ch{j}") {
            return Err(format(format!("column {} is {name:?}, expected \"ch{j}\"", j + 1)));
        }
    }
    let mut values = Vec::new();
    let mut t = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Corruption {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if record.get(0).and_then(|s| s.trim().parse::<usize>().ok()) != Some(t) {
            return Err(format(format!("row {t} has step label {:?}", record.get(0))));
        }
        for field in record.iter().skip(1) {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|_| format(format!("row {t}: cannot parse {field:?}")))?;
            values.push(v as f64);
        }
        t += 1;
    }
    let data = Array2::from_shape_vec((t, c), values).map_err(|e| Error::Corruption {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;

    let sidecar = csv_sidecar(path);
    let meta = if sidecar.exists() {
        let raw = fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: TrialMeta = serde_json::from_slice(&raw).map_err(|e| Error::Format {
            path: sidecar.clone(),
            reason: e.to_string(),
        })?;
        if meta.channel_indices.len() != c {
            return Err(Error::Corruption {
                path: path.to_path_buf(),
                reason: format!(
                    "CSV has {c} channels, sidecar lists {}",
                    meta.channel_indices.len()
                ),
            });
        }
        meta
    } else {
        placeholder_meta(path, c)
    };
    ActivationTrial::new(meta, data)
}

fn placeholder_meta(path: &Path, c: usize) -> TrialMeta {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trial".into());
    TrialMeta {
        trial_id: stem,
        condition: Condition::Custom("unlabelled".into()),
        block_ids: Vec::new(),
        channel_indices: (0..c as u32).collect(),
        seed: 0,
        generation_params: GenerationParams::default(),
        extra: BTreeMap::new(),
    }
}

/// A trial whose channels have zero temporal mean and unit population
/// standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedTrial(ActivationTrial);

impl PreprocessedTrial {
    pub fn trial(&self) -> &ActivationTrial {
        &self.0
    }

    pub fn data(&self) -> &Array2<f64> {
        self.0.data()
    }

    pub fn id(&self) -> &str {
        self.0.id()
    }

    pub fn condition(&self) -> &Condition {
        self.0.condition()
    }

    pub fn into_inner(self) -> ActivationTrial {
        self.0
    }
}

/// Population mean and standard deviation, summed in index order.
pub(crate) fn mean_and_pop_sd<'a>(xs: impl IntoIterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for &x in xs.clone() {
        sum += x;
        n += 1;
    }
    let mean = sum / n as f64;
    let ss: f64 = xs.into_iter().map(|&x| (x - mean) * (x - mean)).sum();
    (mean, (ss / n as f64).sqrt())
}

fn zscore_column(col: ArrayView1<'_, f64>, channel: usize) -> Result<Vec<f64>> {
    let (mean, sd) = mean_and_pop_sd(col.iter());
    if sd.is_nan() || sd <= MIN_CHANNEL_SD {
        return Err(Error::DegenerateChannel { channel, sd });
    }
    Ok(col.iter().map(|&x| (x - mean) / sd).collect())
}

/// Demeans and z-scores every channel (population convention).
pub fn preprocess(trial: &ActivationTrial) -> Result<PreprocessedTrial> {
    let (t, c) = trial.data().dim();
    let mut out = Array2::zeros((t, c));
    for (j, col) in trial.data().axis_iter(Axis(1)).enumerate() {
        let z = zscore_column(col, j)?;
        out.column_mut(j)
            .iter_mut()
            .zip(z)
            .for_each(|(dst, v)| *dst = v);
    }
    Ok(PreprocessedTrial(ActivationTrial {
        meta: trial.meta.clone(),
        data: out,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub condition: Condition,
}

/// Ordered set of trial files with shared recording metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub trials: Vec<ManifestEntry>,
    pub channel_seed: u64,
    #[serde(default = "default_blocks")]
    pub blocks: Vec<u32>,
    #[serde(default = "default_per_block")]
    pub per_block_channels: usize,
    #[serde(default)]
    pub notes: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

fn default_blocks() -> Vec<u32> {
    vec![1, 4, 7, 10]
}

fn default_per_block() -> usize {
    32
}

impl TrialManifest {
    pub fn new(channel_seed: u64) -> Self {
        Self {
            trials: Vec::new(),
            channel_seed,
            blocks: default_blocks(),
            per_block_channels: default_per_block(),
            notes: String::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&raw).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self).expect("manifest serialises");
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Loads every referenced trial (paths relative to `base_dir`), checks
    /// labels and shared dimensions, and returns them in manifest order.
    pub fn load_trials(&self, base_dir: impl AsRef<Path>) -> Result<Vec<ActivationTrial>> {
        let base_dir = base_dir.as_ref();
        let trials: Vec<ActivationTrial> = self
            .trials
            .par_iter()
            .map(|entry| {
                let path = base_dir.join(&entry.path);
                let trial = load_trial(&path)?;
                match trial.condition() {
                    Condition::Custom(label) if label == "unlabelled" => {
                        Ok(trial.with_condition(entry.condition.clone()))
                    }
                    c if *c == entry.condition => Ok(trial),
                    c => Err(Error::Metadata(format!(
                        "{}: manifest says {}, file says {c}",
                        path.display(),
                        entry.condition
                    ))),
                }
            })
            .collect::<Result<_>>()?;
        if let Some(first) = trials.first() {
            let dim = first.data().dim();
            if let Some(bad) = trials.iter().find(|t| t.data().dim() != dim) {
                return Err(Error::Metadata(format!(
                    "trial {} is {:?}, expected {:?} like {}",
                    bad.id(),
                    bad.data().dim(),
                    dim,
                    first.id()
                )));
            }
        }
        let mut ids = BTreeSet::new();
        if let Some(dup) = trials.iter().find(|t| !ids.insert(t.id())) {
            return Err(Error::Metadata(format!("duplicate trial id {}", dup.id())));
        }
        Ok(trials)
    }
}
