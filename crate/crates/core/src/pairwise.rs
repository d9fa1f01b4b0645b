//! Persistent synergy and redundancy for every unordered pair of units.
//!
//! Pairs are laid out in row-major upper-triangle order and split into
//! contiguous chunks; each worker owns the output slots of its chunk, so the
//! result does not depend on the number of workers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::DEFAULT_JITTER;
use crate::phid::{phid_gaussian, phid_gaussian_pooled};
use crate::recording::{validate_units, zscore, DegenerateSeries, Recording, UnitMeta};

pub const MATRIX_MAGIC: &[u8; 4] = b"PHIM";
pub const MATRIX_VERSION: u8 = 1;
pub const ESTIMATOR_ID: &str = "gaussian-mmi";

/// How per-prompt series are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptAggregation {
    /// Decompose each prompt separately and average the atoms.
    Average,
    /// Pool lagged samples of all prompts into one covariance estimate.
    Concatenate,
}

impl PromptAggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptAggregation::Average => "average",
            PromptAggregation::Concatenate => "concatenate",
        }
    }
}

impl std::str::FromStr for PromptAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Self::Average),
            "concatenate" => Ok(Self::Concatenate),
            other => Err(Error::Format(format!("unknown aggregation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOptions {
    pub lag: usize,
    pub jitter: f64,
    pub zscore: bool,
    pub aggregation: PromptAggregation,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    /// Pairs per scheduling chunk.
    pub chunk_size: usize,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            lag: 1,
            jitter: DEFAULT_JITTER,
            zscore: true,
            aggregation: PromptAggregation::Average,
            workers: None,
            chunk_size: 64,
        }
    }
}

impl PairOptions {
    pub fn validate(&self) -> Result<()> {
        if self.lag == 0 {
            return Err(Error::validation("lag must be at least 1"));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::validation(format!("invalid jitter {}", self.jitter)));
        }
        if self.workers == Some(0) {
            return Err(Error::validation("worker count must be positive"));
        }
        if self.chunk_size == 0 {
            return Err(Error::validation("chunk size must be positive"));
        }
        Ok(())
    }
}

/// Settings a matrix was computed with, stored alongside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub lag: usize,
    pub estimator: String,
    pub n_prompts: usize,
    pub jitter: f64,
    pub zscore: bool,
    pub aggregation: PromptAggregation,
    /// Free-form run configuration (the CLI stores its JSON config here).
    pub config: Option<String>,
}

/// Symmetric `N × N` persistent-synergy and persistent-redundancy matrices
/// with zero diagonals, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMatrix {
    pub units: Vec<UnitMeta>,
    pub synergy: Vec<f64>,
    pub redundancy: Vec<f64>,
    pub provenance: Provenance,
}

impl PairMatrix {
    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn synergy_at(&self, i: usize, j: usize) -> f64 {
        self.synergy[i * self.n() + j]
    }

    pub fn redundancy_at(&self, i: usize, j: usize) -> f64 {
        self.redundancy[i * self.n() + j]
    }

    pub fn synergy_row(&self, i: usize) -> &[f64] {
        &self.synergy[i * self.n()..(i + 1) * self.n()]
    }

    pub fn redundancy_row(&self, i: usize) -> &[f64] {
        &self.redundancy[i * self.n()..(i + 1) * self.n()]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_matrix(self, None)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (pm, done) = decode_matrix(bytes)?;
        if done.is_some() {
            return Err(Error::Validation(
                "matrix file is an incomplete checkpoint".into(),
            ));
        }
        Ok(pm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Comma-separated rows, shortest round-trip float formatting.
    pub fn synergy_csv(&self) -> String {
        matrix_csv(&self.synergy, self.n())
    }

    pub fn redundancy_csv(&self) -> String {
        matrix_csv(&self.redundancy, self.n())
    }
}

fn matrix_csv(values: &[f64], n: usize) -> String {
    let mut out = String::new();
    for row in values.chunks(n.max(1)) {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn encode_matrix(pm: &PairMatrix, done: Option<&[bool]>) -> Vec<u8> {
    let n = pm.n();
    let mut out = Vec::with_capacity(16 + 16 * n * n + 256);
    out.extend_from_slice(MATRIX_MAGIC);
    out.push(MATRIX_VERSION);
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in pm.synergy.iter().chain(&pm.redundancy) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let p = &pm.provenance;
    let mut m = String::new();
    writeln!(m, "lag {}", p.lag).unwrap();
    writeln!(m, "estimator {}", p.estimator).unwrap();
    writeln!(m, "prompts {}", p.n_prompts).unwrap();
    writeln!(m, "jitter {:e}", p.jitter).unwrap();
    writeln!(m, "zscore {}", p.zscore).unwrap();
    writeln!(m, "aggregation {}", p.aggregation.as_str()).unwrap();
    for u in &pm.units {
        writeln!(m, "unit {}", u.manifest_line()).unwrap();
    }
    if let Some(done) = done {
        writeln!(m, "pairs_done {}", encode_bitmap(done)).unwrap();
    }
    if let Some(config) = &p.config {
        writeln!(m, "config {}", config.replace('\n', " ")).unwrap();
    }
    out.extend_from_slice(&(m.len() as u64).to_le_bytes());
    out.extend_from_slice(m.as_bytes());
    out
}

fn encode_bitmap(done: &[bool]) -> String {
    let mut bytes = vec![0u8; done.len().div_ceil(8)];
    for (k, &d) in done.iter().enumerate() {
        if d {
            bytes[k / 8] |= 1 << (k % 8);
        }
    }
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn decode_bitmap(hex: &str, len: usize) -> Result<Vec<bool>> {
    if hex.len() != 2 * len.div_ceil(8) {
        return Err(Error::Corruption("pair bitmap has wrong length".into()));
    }
    let bytes = (0..hex.len())
        .step_by(2)
        .map(|k| u8::from_str_radix(&hex[k..k + 2], 16))
        .collect::<std::result::Result<Vec<u8>, _>>()
        .map_err(|_| Error::Corruption("pair bitmap is not hex".into()))?;
    Ok((0..len)
        .map(|k| bytes[k / 8] & (1 << (k % 8)) != 0)
        .collect())
}

fn decode_matrix(bytes: &[u8]) -> Result<(PairMatrix, Option<Vec<bool>>)> {
    if bytes.len() < 4 || &bytes[..4] != MATRIX_MAGIC {
        return Err(Error::Format("missing PHIM magic".into()));
    }
    if bytes.len() < 16 {
        return Err(Error::Corruption("truncated PHIM header".into()));
    }
    if bytes[4] != MATRIX_VERSION {
        return Err(Error::Format(format!(
            "unsupported PHIM version {}",
            bytes[4]
        )));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let block = n
        .checked_mul(n)
        .and_then(|x| x.checked_mul(8))
        .ok_or_else(|| Error::Corruption("matrix size overflow".into()))?;
    let blocks_end = 16 + 2 * block;
    if bytes.len() < blocks_end + 8 {
        return Err(Error::Corruption(format!(
            "file too short for two {n}x{n} blocks"
        )));
    }
    let read = |range: std::ops::Range<usize>| -> Vec<f64> {
        bytes[range]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let synergy = read(16..16 + block);
    let redundancy = read(16 + block..blocks_end);
    let mlen = u64::from_le_bytes(bytes[blocks_end..blocks_end + 8].try_into().unwrap()) as usize;
    let mstart = blocks_end + 8;
    if bytes.len() != mstart + mlen {
        return Err(Error::Corruption(
            "manifest length disagrees with file size".into(),
        ));
    }
    let manifest = std::str::from_utf8(&bytes[mstart..])
        .map_err(|_| Error::Format("manifest is not UTF-8".into()))?;

    let mut lag = None;
    let mut estimator = None;
    let mut n_prompts = None;
    let mut jitter = None;
    let mut zscore = None;
    let mut aggregation = None;
    let mut config = None;
    let mut done = None;
    let mut units = Vec::new();
    let bad = |line: &str| Error::Format(format!("bad manifest line {line:?}"));
    for line in manifest.lines() {
        let (key, value) = line.split_once(' ').ok_or_else(|| bad(line))?;
        match key {
            "lag" => lag = Some(value.parse().map_err(|_| bad(line))?),
            "estimator" => estimator = Some(value.to_string()),
            "prompts" => n_prompts = Some(value.parse().map_err(|_| bad(line))?),
            "jitter" => jitter = Some(value.parse().map_err(|_| bad(line))?),
            "zscore" => zscore = Some(value.parse().map_err(|_| bad(line))?),
            "aggregation" => aggregation = Some(str::parse::<PromptAggregation>(value)?),
            "unit" => units.push(UnitMeta::parse_manifest_line(value)?),
            "pairs_done" => done = Some(value.to_string()),
            "config" => config = Some(value.to_string()),
            _ => return Err(bad(line)),
        }
    }
    let missing = |k: &str| Error::Format(format!("manifest lacks {k:?}"));
    if units.len() != n {
        return Err(Error::Corruption(format!(
            "manifest lists {} units for a {n}x{n} matrix",
            units.len()
        )));
    }
    validate_units(&units)?;
    let done = done
        .map(|hex| decode_bitmap(&hex, n * n.saturating_sub(1) / 2))
        .transpose()?;
    let pm = PairMatrix {
        units,
        synergy,
        redundancy,
        provenance: Provenance {
            lag: lag.ok_or_else(|| missing("lag"))?,
            estimator: estimator.ok_or_else(|| missing("estimator"))?,
            n_prompts: n_prompts.ok_or_else(|| missing("prompts"))?,
            jitter: jitter.ok_or_else(|| missing("jitter"))?,
            zscore: zscore.ok_or_else(|| missing("zscore"))?,
            aggregation: aggregation.ok_or_else(|| missing("aggregation"))?,
            config,
        },
    };
    if pm
        .synergy
        .iter()
        .chain(&pm.redundancy)
        .any(|v| !v.is_finite())
    {
        return Err(Error::validation("matrix holds non-finite values"));
    }
    Ok((pm, done))
}

/// Counts completed pair computations; shareable across threads.
#[derive(Debug)]
pub struct PairProgress {
    done: AtomicUsize,
    total: AtomicUsize,
    started: Instant,
}

impl Default for PairProgress {
    fn default() -> Self {
        Self {
            done: AtomicUsize::new(0),
            total: AtomicUsize::new(0),
            started: Instant::now(),
        }
    }
}

impl PairProgress {
    pub fn done(&self) -> usize {
        self.done.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> usize {
        self.total.load(Ordering::Relaxed)
    }

    /// Pairs per second since the counter was created.
    pub fn throughput(&self) -> f64 {
        self.done() as f64 / self.started.elapsed().as_secs_f64().max(1e-9)
    }
}

/// Result of a pairwise run.
#[derive(Clone, Debug)]
pub struct PairRun {
    pub matrix: PairMatrix,
    /// Zero-variance (unit, prompt) series; pairs touching them contribute zeros.
    pub degenerate: Vec<DegenerateSeries>,
    /// Pair decompositions executed by this call.
    pub pairs_computed: usize,
}

fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

struct Prepared {
    rec: Recording,
    degenerate: Vec<DegenerateSeries>,
}

fn prepare(rec: &Recording, opts: &PairOptions) -> Result<Prepared> {
    opts.validate()?;
    rec.validate()?;
    if rec.n_units() < 2 {
        return Err(Error::validation("need at least two units"));
    }
    if rec.n_timesteps() <= opts.lag {
        return Err(Error::validation(format!(
            "lag {} needs more than {} timesteps",
            opts.lag,
            rec.n_timesteps()
        )));
    }
    if opts.zscore {
        let z = zscore(rec);
        Ok(Prepared {
            rec: z.recording,
            degenerate: z.degenerate,
        })
    } else {
        let mut degenerate = Vec::new();
        for u in 0..rec.n_units() {
            for p in 0..rec.n_prompts() {
                let s = rec.series(u, p);
                if s.iter().all(|x| *x == s[0]) {
                    degenerate.push(DegenerateSeries { unit: u, prompt: p });
                }
            }
        }
        Ok(Prepared {
            rec: rec.clone(),
            degenerate,
        })
    }
}

/// `(persistent synergy, persistent redundancy)` of one pair.
fn pair_value(rec: &Recording, i: usize, j: usize, opts: &PairOptions) -> Result<(f64, f64)> {
    let p = rec.n_prompts();
    match opts.aggregation {
        PromptAggregation::Average => {
            let (mut syn, mut red) = (0.0, 0.0);
            for k in 0..p {
                let atoms =
                    phid_gaussian(rec.series(i, k), rec.series(j, k), opts.lag, opts.jitter)?;
                syn += atoms.sts();
                red += atoms.rtr();
            }
            Ok((syn / p as f64, red / p as f64))
        }
        PromptAggregation::Concatenate => {
            let segments: Vec<(&[f64], &[f64])> = (0..p)
                .map(|k| (rec.series(i, k), rec.series(j, k)))
                .collect();
            let atoms = phid_gaussian_pooled(&segments, opts.lag, opts.jitter)?;
            Ok((atoms.sts(), atoms.rtr()))
        }
    }
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::validation(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Computes the listed pairs into `slots` (one per pair), chunk-parallel.
fn compute_pairs(
    rec: &Recording,
    pairs: &[(usize, usize)],
    slots: &mut [(f64, f64)],
    opts: &PairOptions,
    progress: &PairProgress,
) -> Result<()> {
    with_pool(opts.workers, || {
        slots
            .par_chunks_mut(opts.chunk_size)
            .zip(pairs.par_chunks(opts.chunk_size))
            .try_for_each(|(out, chunk)| {
                for (slot, &(i, j)) in out.iter_mut().zip(chunk) {
                    *slot = pair_value(rec, i, j, opts)?;
                    progress.done.fetch_add(1, Ordering::Relaxed);
                }
                Ok(())
            })
    })?
}

fn assemble(
    rec: &Recording,
    pairs: &[(usize, usize)],
    slots: &[(f64, f64)],
    opts: &PairOptions,
    config: Option<String>,
) -> PairMatrix {
    let n = rec.n_units();
    let mut synergy = vec![0.0; n * n];
    let mut redundancy = vec![0.0; n * n];
    for (&(i, j), &(s, r)) in pairs.iter().zip(slots) {
        synergy[i * n + j] = s;
        synergy[j * n + i] = s;
        redundancy[i * n + j] = r;
        redundancy[j * n + i] = r;
    }
    PairMatrix {
        units: rec.units().to_vec(),
        synergy,
        redundancy,
        provenance: Provenance {
            lag: opts.lag,
            estimator: ESTIMATOR_ID.to_string(),
            n_prompts: rec.n_prompts(),
            jitter: opts.jitter,
            zscore: opts.zscore,
            aggregation: opts.aggregation,
            config,
        },
    }
}

/// Persistent synergy and redundancy matrices of a recording.
pub fn pair_matrices(rec: &Recording, opts: &PairOptions) -> Result<PairRun> {
    pair_matrices_with_progress(rec, opts, &PairProgress::default())
}

pub fn pair_matrices_with_progress(
    rec: &Recording,
    opts: &PairOptions,
    progress: &PairProgress,
) -> Result<PairRun> {
    let prepared = prepare(rec, opts)?;
    let pairs = upper_pairs(rec.n_units());
    progress.total.fetch_add(pairs.len(), Ordering::Relaxed);
    let start = progress.done();
    let mut slots = vec![(0.0, 0.0); pairs.len()];
    compute_pairs(&prepared.rec, &pairs, &mut slots, opts, progress)?;
    Ok(PairRun {
        matrix: assemble(rec, &pairs, &slots, opts, None),
        degenerate: prepared.degenerate,
        pairs_computed: progress.done() - start,
    })
}

/// Like [`pair_matrices`], but persists progress to `checkpoint` after every
/// batch of `batch_pairs` pairs and resumes from it when it already exists.
/// The checkpoint is a `PHIM` file whose manifest carries a `pairs_done`
/// bitmap over the upper-triangle pair order.
pub fn pair_matrices_resumable(
    rec: &Recording,
    opts: &PairOptions,
    checkpoint: &Path,
    batch_pairs: usize,
    progress: &PairProgress,
) -> Result<PairRun> {
    if batch_pairs == 0 {
        return Err(Error::validation("batch size must be positive"));
    }
    let prepared = prepare(rec, opts)?;
    let pairs = upper_pairs(rec.n_units());
    let n = rec.n_units();
    let mut slots = vec![(0.0, 0.0); pairs.len()];
    let mut done = vec![false; pairs.len()];
    if checkpoint.exists() {
        let (partial, bitmap) = decode_matrix(&fs::read(checkpoint)?)?;
        let fresh = assemble(rec, &pairs, &slots, opts, None);
        if partial.units != fresh.units || partial.provenance != fresh.provenance {
            return Err(Error::validation(format!(
                "checkpoint {} was written for a different recording or settings",
                checkpoint.display()
            )));
        }
        done = bitmap.unwrap_or_else(|| vec![true; pairs.len()]);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            if done[k] {
                slots[k] = (partial.synergy[i * n + j], partial.redundancy[i * n + j]);
            }
        }
    }
    let todo: Vec<usize> = (0..pairs.len()).filter(|&k| !done[k]).collect();
    progress.total.fetch_add(todo.len(), Ordering::Relaxed);
    let start = progress.done();
    for batch in todo.chunks(batch_pairs) {
        let batch_pairs: Vec<(usize, usize)> = batch.iter().map(|&k| pairs[k]).collect();
        let mut out = vec![(0.0, 0.0); batch.len()];
        compute_pairs(&prepared.rec, &batch_pairs, &mut out, opts, progress)?;
        for (&k, v) in batch.iter().zip(out) {
            slots[k] = v;
            done[k] = true;
        }
        let snapshot = assemble(rec, &pairs, &slots, opts, None);
        let tmp = checkpoint.with_extension("tmp");
        fs::write(&tmp, encode_matrix(&snapshot, Some(&done)))?;
        fs::rename(&tmp, checkpoint)?;
    }
    Ok(PairRun {
        matrix: assemble(rec, &pairs, &slots, opts, None),
        degenerate: prepared.degenerate,
        pairs_computed: progress.done() - start,
    })
}

/// One matrix per recording, e.g. one per training checkpoint. All
/// recordings must share unit metadata.
pub fn checkpoint_series(recs: &[Recording], opts: &PairOptions) -> Result<Vec<PairMatrix>> {
    let first = recs
        .first()
        .ok_or_else(|| Error::validation("no recordings given"))?;
    if let Some((k, _)) = recs
        .iter()
        .enumerate()
        .find(|(_, r)| r.units() != first.units())
    {
        return Err(Error::validation(format!(
            "recording {k} has different unit metadata from recording 0"
        )));
    }
    recs.iter()
        .map(|r| pair_matrices(r, opts).map(|run| run.matrix))
        .collect()
}
