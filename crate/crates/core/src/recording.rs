//! Activation recordings: a units × prompts × timesteps tensor plus unit and
//! prompt metadata, and the `PHID` container they are stored in.
//!
//! Layout of a `PHID` file (all integers little-endian):
//!
//! ```text
//! 0..4    b"PHID"
//! 4       version (1)
//! 5..8    reserved, zero
//! 8..16   u64 manifest length L
//! 16..    L bytes of UTF-8 manifest
//!         8·N·P·T bytes of f64 values, unit-major, prompt-middle, timestep-minor
//! ```
//!
//! The manifest has one line per unit (`unit_id,layer,index_in_layer,kind`),
//! one line per prompt (`prompt_id,task_category`) and a final `dims N P T`
//! line. Every line ends in `\n`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECORDING_MAGIC: &[u8; 4] = b"PHID";
pub const RECORDING_VERSION: u8 = 1;
const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    AttentionHead,
    Expert,
    Synthetic,
}

impl UnitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitKind::AttentionHead => "attention_head",
            UnitKind::Expert => "expert",
            UnitKind::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UnitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention_head" => Ok(UnitKind::AttentionHead),
            "expert" => Ok(UnitKind::Expert),
            "synthetic" => Ok(UnitKind::Synthetic),
            other => Err(Error::Format(format!("unknown unit kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitMeta {
    pub unit_id: usize,
    pub layer: usize,
    pub index_in_layer: usize,
    pub kind: UnitKind,
}

impl UnitMeta {
    pub(crate) fn manifest_line(&self) -> String {
        format!(
            "{},{},{},{}",
            self.unit_id, self.layer, self.index_in_layer, self.kind
        )
    }

    pub(crate) fn parse_manifest_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!("bad unit line {line:?}")));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad integer {s:?} in unit line {line:?}")))
        };
        Ok(UnitMeta {
            unit_id: num(fields[0])?,
            layer: num(fields[1])?,
            index_in_layer: num(fields[2])?,
            kind: fields[3].parse()?,
        })
    }
}

/// Checks the unit table: ids contiguous `0..N` in order, `(layer, index, kind)` unique.
pub fn validate_units(units: &[UnitMeta]) -> Result<()> {
    if units.is_empty() {
        return Err(Error::validation("recording has no units"));
    }
    let mut seen = HashSet::with_capacity(units.len());
    for (i, u) in units.iter().enumerate() {
        if u.unit_id != i {
            return Err(Error::validation(format!(
                "unit ids must be contiguous from 0; position {i} holds id {}",
                u.unit_id
            )));
        }
        if !seen.insert((u.layer, u.index_in_layer, u.kind)) {
            return Err(Error::validation(format!(
                "duplicate unit (layer {}, index {}, {})",
                u.layer, u.index_in_layer, u.kind
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptMeta {
    pub prompt_id: String,
    pub task_category: String,
}

impl PromptMeta {
    pub fn new(prompt_id: impl Into<String>, task_category: impl Into<String>) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            task_category: task_category.into(),
        }
    }
}

fn check_manifest_field(what: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.contains([',', '\n', '\r']) {
        return Err(Error::validation(format!(
            "{what} {s:?} must be non-empty and free of commas and newlines"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    units: Vec<UnitMeta>,
    prompts: Vec<PromptMeta>,
    n_timesteps: usize,
    values: Vec<f64>,
}

impl Recording {
    /// Builds and validates a recording. `values` is unit-major, prompt-middle,
    /// timestep-minor.
    pub fn new(
        units: Vec<UnitMeta>,
        prompts: Vec<PromptMeta>,
        n_timesteps: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let rec = Self {
            units,
            prompts,
            n_timesteps,
            values,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        validate_units(&self.units)?;
        if self.prompts.is_empty() {
            return Err(Error::validation("recording needs at least one prompt"));
        }
        for p in &self.prompts {
            check_manifest_field("prompt_id", &p.prompt_id)?;
            check_manifest_field("task_category", &p.task_category)?;
        }
        if self.n_timesteps < 2 {
            return Err(Error::validation(format!(
                "need at least 2 timesteps, got {}",
                self.n_timesteps
            )));
        }
        let expected = self.n_units() * self.n_prompts() * self.n_timesteps;
        if self.values.len() != expected {
            return Err(Error::validation(format!(
                "tensor holds {} values, dims imply {expected}",
                self.values.len()
            )));
        }
        if let Some(pos) = self.values.iter().position(|v| !v.is_finite()) {
            let t = pos % self.n_timesteps;
            let p = (pos / self.n_timesteps) % self.n_prompts();
            let u = pos / (self.n_timesteps * self.n_prompts());
            return Err(Error::validation(format!(
                "non-finite value {} at unit {u}, prompt {p}, timestep {t}",
                self.values[pos]
            )));
        }
        Ok(())
    }

    pub fn units(&self) -> &[UnitMeta] {
        &self.units
    }

    pub fn prompts(&self) -> &[PromptMeta] {
        &self.prompts
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn n_timesteps(&self) -> usize {
        self.n_timesteps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Timestep series of one unit on one prompt.
    pub fn series(&self, unit: usize, prompt: usize) -> &[f64] {
        let start = (unit * self.n_prompts() + prompt) * self.n_timesteps;
        &self.values[start..start + self.n_timesteps]
    }

    fn manifest(&self) -> String {
        let mut m = String::new();
        for u in &self.units {
            m.push_str(&u.manifest_line());
            m.push('\n');
        }
        for p in &self.prompts {
            m.push_str(&p.prompt_id);
            m.push(',');
            m.push_str(&p.task_category);
            m.push('\n');
        }
        m.push_str(&format!(
            "dims {} {} {}\n",
            self.n_units(),
            self.n_prompts(),
            self.n_timesteps
        ));
        m
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let manifest = self.manifest();
        let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + 8 * self.values.len());
        out.extend_from_slice(RECORDING_MAGIC);
        out.push(RECORDING_VERSION);
        out.extend_from_slice(&[0u8; 3]);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != RECORDING_MAGIC {
            return Err(Error::Format("missing PHID magic".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Corruption("truncated PHID header".into()));
        }
        if bytes[4] != RECORDING_VERSION {
            return Err(Error::Format(format!(
                "unsupported PHID version {}",
                bytes[4]
            )));
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let manifest_end = HEADER_LEN
            .checked_add(manifest_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Corruption("manifest runs past end of file".into()))?;
        let manifest = std::str::from_utf8(&bytes[HEADER_LEN..manifest_end])
            .map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
        let (units, prompts, (n, p, t)) = parse_manifest(manifest)?;
        let payload = &bytes[manifest_end..];
        let expected = n
            .checked_mul(p)
            .and_then(|x| x.checked_mul(t))
            .and_then(|x| x.checked_mul(8))
            .ok_or_else(|| Error::Corruption("dims overflow".into()))?;
        if payload.len() != expected {
            return Err(Error::Corruption(format!(
                "dims {n}x{p}x{t} need {expected} payload bytes, found {}",
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Recording::new(units, prompts, t, values)
    }
}

type Dims = (usize, usize, usize);

fn parse_manifest(manifest: &str) -> Result<(Vec<UnitMeta>, Vec<PromptMeta>, Dims)> {
    let lines: Vec<&str> = manifest.lines().collect();
    let dims_line = lines
        .last()
        .ok_or_else(|| Error::Format("empty manifest".into()))?;
    let dims: Vec<usize> = dims_line
        .strip_prefix("dims ")
        .ok_or_else(|| Error::Format(format!("expected dims line, got {dims_line:?}")))?
        .split(' ')
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Format(format!("bad dims line {dims_line:?}")))
        })
        .collect::<Result<_>>()?;
    let [n, p, t] = dims[..] else {
        return Err(Error::Format(format!("bad dims line {dims_line:?}")));
    };
    if lines.len() != n + p + 1 {
        return Err(Error::Corruption(format!(
            "manifest has {} lines, dims imply {}",
            lines.len(),
            n + p + 1
        )));
    }
    let units = lines[..n]
        .iter()
        .map(|l| UnitMeta::parse_manifest_line(l))
        .collect::<Result<Vec<_>>>()?;
    let prompts = lines[n..n + p]
        .iter()
        .map(|l| {
            let (id, cat) = l
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad prompt line {l:?}")))?;
            Ok(PromptMeta::new(id, cat))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((units, prompts, (n, p, t)))
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording> {
    Recording::from_bytes(&fs::read(path)?)
}

pub fn save_recording(rec: &Recording, path: impl AsRef<Path>) -> Result<()> {
    let bytes = rec.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

/// A (unit, prompt) series with zero sample variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateSeries {
    pub unit: usize,
    pub prompt: usize,
}

#[derive(Clone, Debug)]
pub struct ZScored {
    pub recording: Recording,
    /// Sorted by (unit, prompt). These series are all zeros in `recording`.
    pub degenerate: Vec<DegenerateSeries>,
}

impl ZScored {
    pub fn is_degenerate(&self, unit: usize, prompt: usize) -> bool {
        self.degenerate
            .binary_search_by(|d| (d.unit, d.prompt).cmp(&(unit, prompt)))
            .is_ok()
    }
}

/// Standardises one series in place (sample sd, divisor `n - 1`). Returns
/// `false` and zeroes the series when it has no variance.
pub fn zscore_series(series: &mut [f64]) -> bool {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let ss = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    let sd = (ss / (n - 1.0)).sqrt();
    if sd.is_nan() || sd <= 1e-12 * mean.abs().max(1.0) {
        series.iter_mut().for_each(|x| *x = 0.0);
        return false;
    }
    series.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    true
}

pub fn zscore(rec: &Recording) -> ZScored {
    let mut values = rec.values.clone();
    let mut degenerate = Vec::new();
    let t = rec.n_timesteps;
    for (idx, chunk) in values.chunks_exact_mut(t).enumerate() {
        if !zscore_series(chunk) {
            degenerate.push(DegenerateSeries {
                unit: idx / rec.n_prompts(),
                prompt: idx % rec.n_prompts(),
            });
        }
    }
    ZScored {
        recording: Recording {
            values,
            ..rec.clone()
        },
        degenerate,
    }
}
