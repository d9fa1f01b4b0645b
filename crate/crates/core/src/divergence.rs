//! Behaviour divergence between baseline and ablated next-token
//! distributions, the PHIL trace format, and ablation curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_MAGIC: &[u8; 4] = b"PHIL";
pub const TRACE_VERSION: u8 = 1;
pub const PROBABILITY_FLOOR: f64 = 1e-12;
pub const NORMALISATION_TOLERANCE: f64 = 1e-6;
const NEGATIVE_KL_TOLERANCE: f64 = -1e-9;

/// KL value together with the number of entries where the floor was applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kl {
    pub nats: f64,
    pub floor_hits: usize,
}

/// `Σ p ln(p/q)` in nats, with `q` floored at [`PROBABILITY_FLOOR`].
pub fn kl_divergence_counted(p: &[f64], q: &[f64]) -> Result<Kl> {
    if p.len() != q.len() {
        return Err(Error::validation(format!(
            "distributions differ in length: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut sum = 0.0;
    let mut floor_hits = 0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        let qf = if qi < PROBABILITY_FLOOR {
            floor_hits += 1;
            PROBABILITY_FLOOR
        } else {
            qi
        };
        sum += pi * (pi / qf).ln();
    }
    if sum < NEGATIVE_KL_TOLERANCE {
        return Err(Error::Numerical(format!("negative KL divergence {sum}")));
    }
    Ok(Kl {
        nats: sum.max(0.0),
        floor_hits,
    })
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    kl_divergence_counted(p, q).map(|k| k.nats)
}

/// Which model state produced a trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum Condition {
    NonAblated,
    Ablated {
        /// Ordering or subset label, e.g. `synergistic`, `random`, `most_redundant`.
        order: String,
        fraction: f64,
        seed: u64,
        unit_ids: Vec<usize>,
    },
}

type ParsedManifest = (Condition, String, Vec<(String, String)>);

/// Per-step next-token distributions of one prompt under one condition.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitTrace {
    prompt_id: String,
    vocab: usize,
    token_ids: Vec<u32>,
    probs: Vec<f32>,
    pub condition: Condition,
    pub decoding: String,
    /// Additional `key value` manifest lines, preserved in order.
    pub extra: Vec<(String, String)>,
}

impl LogitTrace {
    /// `probs` is row-major `steps × vocab`.
    pub fn new(
        prompt_id: impl Into<String>,
        vocab: usize,
        token_ids: Vec<u32>,
        probs: Vec<f32>,
        condition: Condition,
    ) -> Result<Self> {
        let t = LogitTrace {
            prompt_id: prompt_id.into(),
            vocab,
            token_ids,
            probs,
            condition,
            decoding: "greedy".into(),
            extra: Vec::new(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_f64_steps(
        prompt_id: impl Into<String>,
        steps: &[Vec<f64>],
        token_ids: Vec<u32>,
        condition: Condition,
    ) -> Result<Self> {
        let vocab = steps.first().map_or(0, Vec::len);
        if steps.iter().any(|s| s.len() != vocab) {
            return Err(Error::validation("steps differ in vocabulary size"));
        }
        let probs = steps.iter().flatten().map(|&p| p as f32).collect();
        Self::new(prompt_id, vocab, token_ids, probs, condition)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt_id.is_empty() || self.prompt_id.contains('\n') {
            return Err(Error::validation(
                "prompt id must be a non-empty single line",
            ));
        }
        if self.vocab == 0 || self.token_ids.is_empty() {
            return Err(Error::validation("trace needs V ≥ 1 and at least one step"));
        }
        if self.probs.len() != self.vocab * self.token_ids.len() {
            return Err(Error::validation(format!(
                "{} probabilities for {} steps of vocabulary {}",
                self.probs.len(),
                self.token_ids.len(),
                self.vocab
            )));
        }
        for (t, row) in self.probs.chunks(self.vocab).enumerate() {
            if let Some(k) = row.iter().position(|p| !(*p >= 0.0 && p.is_finite())) {
                return Err(Error::validation(format!(
                    "invalid probability {} at step {t}, token {k}",
                    row[k]
                )));
            }
            let sum: f64 = row.iter().map(|&p| p as f64).sum();
            if (sum - 1.0).abs() > NORMALISATION_TOLERANCE {
                return Err(Error::validation(format!("step {t} sums to {sum}, not 1")));
            }
        }
        if let Some(&bad) = self.token_ids.iter().find(|&&id| id as usize >= self.vocab) {
            return Err(Error::validation(format!(
                "token id {bad} outside vocabulary {}",
                self.vocab
            )));
        }
        if let Condition::Ablated {
            order, fraction, ..
        } = &self.condition
        {
            if order.is_empty() || order.contains(char::is_whitespace) {
                return Err(Error::validation(format!("invalid order label {order:?}")));
            }
            if !(0.0..=1.0).contains(fraction) {
                return Err(Error::validation(format!(
                    "fraction {fraction} outside [0, 1]"
                )));
            }
        }
        if self.decoding.is_empty() || self.decoding.contains(char::is_whitespace) {
            return Err(Error::validation("decoding must be a single word"));
        }
        Ok(())
    }

    pub fn prompt_id(&self) -> &str {
        &self.prompt_id
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn n_steps(&self) -> usize {
        self.token_ids.len()
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    pub fn step(&self, t: usize) -> &[f32] {
        &self.probs[t * self.vocab..(t + 1) * self.vocab]
    }

    fn manifest(&self) -> String {
        let mut m = format!("decoding {}\n", self.decoding);
        match &self.condition {
            Condition::NonAblated => m.push_str("condition non_ablated\n"),
            Condition::Ablated {
                order,
                fraction,
                seed,
                unit_ids,
            } => {
                let ids: Vec<String> = unit_ids.iter().map(usize::to_string).collect();
                write!(
                    m,
                    "condition ablated\norder {order}\nfraction {fraction}\nseed {seed}\nunits {}\n",
                    ids.join(",")
                )
                .unwrap();
            }
        }
        for (k, v) in &self.extra {
            writeln!(m, "{k} {v}").unwrap();
        }
        m
    }

    fn parse_manifest(text: &str) -> Result<ParsedManifest> {
        let bad = |msg: String| Error::Format(format!("trace manifest: {msg}"));
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        let mut extra = Vec::new();
        for line in text.lines() {
            let (k, v) = line.split_once(' ').unwrap_or((line, ""));
            match k {
                "decoding" | "condition" | "order" | "fraction" | "seed" | "units" => {
                    if fields.insert(k, v).is_some() {
                        return Err(bad(format!("duplicate key {k}")));
                    }
                }
                "" => return Err(bad("empty line".into())),
                _ => extra.push((k.to_string(), v.to_string())),
            }
        }
        let decoding = fields
            .get("decoding")
            .ok_or_else(|| bad("missing decoding".into()))?
            .to_string();
        let condition = match fields.get("condition").copied() {
            Some("non_ablated") => Condition::NonAblated,
            Some("ablated") => {
                let get = |k: &str| {
                    fields
                        .get(k)
                        .copied()
                        .ok_or_else(|| bad(format!("missing {k}")))
                };
                let units = get("units")?;
                let unit_ids = if units.is_empty() {
                    Vec::new()
                } else {
                    units
                        .split(',')
                        .map(|s| s.parse().map_err(|_| bad(format!("bad unit id {s:?}"))))
                        .collect::<Result<_>>()?
                };
                Condition::Ablated {
                    order: get("order")?.to_string(),
                    fraction: get("fraction")?
                        .parse()
                        .map_err(|_| bad("bad fraction".into()))?,
                    seed: get("seed")?.parse().map_err(|_| bad("bad seed".into()))?,
                    unit_ids,
                }
            }
            other => return Err(bad(format!("unknown condition {other:?}"))),
        };
        Ok((condition, decoding, extra))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = self.manifest();
        let mut out =
            Vec::with_capacity(32 + manifest.len() + 4 * (self.probs.len() + self.n_steps()));
        out.extend_from_slice(TRACE_MAGIC);
        out.push(TRACE_VERSION);
        out.extend_from_slice(&[0; 3]);
        for block in [self.prompt_id.as_bytes(), manifest.as_bytes()] {
            out.extend_from_slice(&(block.len() as u32).to_le_bytes());
            out.extend_from_slice(block);
        }
        out.extend_from_slice(&(self.vocab as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_steps() as u32).to_le_bytes());
        for id in &self.token_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for p in &self.probs {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != TRACE_MAGIC {
            return Err(Error::Format("not a PHIL trace file".into()));
        }
        let version = r.take(1)?[0];
        if version != TRACE_VERSION {
            return Err(Error::Format(format!(
                "unsupported trace version {version}"
            )));
        }
        if r.take(3)? != [0, 0, 0] {
            return Err(Error::Format("non-zero reserved bytes".into()));
        }
        let prompt_id = r.string()?;
        let (condition, decoding, extra) = Self::parse_manifest(&r.string()?)?;
        let vocab = r.u32()? as usize;
        let steps = r.u32()? as usize;
        let token_ids = (0..steps).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = vocab
            .checked_mul(steps)
            .ok_or_else(|| Error::Corruption("trace dimensions overflow".into()))?;
        let raw = r.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Corruption("trace too large".into()))?,
        )?;
        if r.pos != bytes.len() {
            return Err(Error::Corruption(format!(
                "{} trailing bytes after trace payload",
                bytes.len() - r.pos
            )));
        }
        let probs = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let trace = LogitTrace {
            prompt_id,
            vocab,
            token_ids,
            probs,
            condition,
            decoding,
            extra,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corruption("truncated trace file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format("trace string is not UTF-8".into()))
    }
}

/// Divergence of one ablated trace from its baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Divergence {
    /// Mean per-step KL in nats.
    pub nats: f64,
    pub floor_hits: usize,
}

/// Mean over steps of `KL(baseline_t ‖ ablated_t)`.
pub fn behaviour_divergence_counted(na: &LogitTrace, ab: &LogitTrace) -> Result<Divergence> {
    if na.prompt_id != ab.prompt_id {
        return Err(Error::validation(format!(
            "prompt ids differ: {:?} vs {:?}",
            na.prompt_id, ab.prompt_id
        )));
    }
    if na.vocab != ab.vocab {
        return Err(Error::validation(format!(
            "vocabulary sizes differ for {:?}: {} vs {}",
            na.prompt_id, na.vocab, ab.vocab
        )));
    }
    if na.token_ids != ab.token_ids {
        let t = na
            .token_ids
            .iter()
            .zip(&ab.token_ids)
            .position(|(a, b)| a != b)
            .unwrap_or(na.n_steps().min(ab.n_steps()));
        return Err(Error::TeacherForcing(format!(
            "prompt {:?}: token ids diverge at step {t}",
            na.prompt_id
        )));
    }
    let mut total = 0.0;
    let mut floor_hits = 0;
    let (mut p, mut q) = (vec![0.0; na.vocab], vec![0.0; na.vocab]);
    for t in 0..na.n_steps() {
        for (dst, src) in p.iter_mut().zip(na.step(t)) {
            *dst = *src as f64;
        }
        for (dst, src) in q.iter_mut().zip(ab.step(t)) {
            *dst = *src as f64;
        }
        let kl = kl_divergence_counted(&p, &q)?;
        total += kl.nats;
        floor_hits += kl.floor_hits;
    }
    Ok(Divergence {
        nats: total / na.n_steps() as f64,
        floor_hits,
    })
}

pub fn behaviour_divergence(na: &LogitTrace, ab: &LogitTrace) -> Result<f64> {
    behaviour_divergence_counted(na, ab).map(|d| d.nats)
}

/// One point of an ablation curve. `seed` is `None` on rows aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub order: String,
    pub seed: Option<u64>,
    pub mean_divergence_nats: f64,
    /// Sample standard deviation over seeds; aggregated rows only.
    pub sd_over_seeds: Option<f64>,
    pub n_prompts: usize,
    pub n_seeds: usize,
    pub floor_hits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub points: Vec<CurvePoint>,
}

impl AblationCurve {
    /// Aggregated row for `(fraction, order)`.
    pub fn aggregate(&self, fraction: f64, order: &str) -> Option<&CurvePoint> {
        self.points
            .iter()
            .find(|p| p.seed.is_none() && p.order == order && p.fraction == fraction)
    }

    pub fn fractions(&self) -> Vec<f64> {
        let mut f: Vec<f64> = self.points.iter().map(|p| p.fraction).collect();
        f.sort_by(f64::total_cmp);
        f.dedup();
        f
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "fraction,order,seed,mean_divergence_nats,sd_over_seeds,n_prompts,n_seeds,floor_hits\n",
        );
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                p.fraction,
                p.order,
                p.seed.map_or("all".to_string(), |s| s.to_string()),
                p.mean_divergence_nats,
                p.sd_over_seeds.map_or(String::new(), |s| s.to_string()),
                p.n_prompts,
                p.n_seeds,
                p.floor_hits
            )
            .unwrap();
        }
        out
    }
}

/// Fraction bits, order, seed.
type ConditionKey = (u64, String, u64);

fn condition_key(trace: &LogitTrace) -> Result<ConditionKey> {
    match &trace.condition {
        Condition::Ablated {
            order,
            fraction,
            seed,
            ..
        } => Ok((fraction.to_bits(), order.clone(), *seed)),
        Condition::NonAblated => Err(Error::validation(format!(
            "baseline trace for {:?} passed as ablated",
            trace.prompt_id
        ))),
    }
}

/// Per `(fraction, order, seed)`: mean divergence over prompts. Per
/// `(fraction, order)`: mean and sample standard deviation over seeds.
pub fn ablation_curve(baselines: &[LogitTrace], ablated: &[LogitTrace]) -> Result<AblationCurve> {
    let mut base: BTreeMap<&str, &LogitTrace> = BTreeMap::new();
    for b in baselines {
        if b.condition != Condition::NonAblated {
            return Err(Error::validation(format!(
                "baseline trace for {:?} is ablated",
                b.prompt_id
            )));
        }
        if base.insert(&b.prompt_id, b).is_some() {
            return Err(Error::validation(format!(
                "duplicate baseline for {:?}",
                b.prompt_id
            )));
        }
    }
    let divergences: Vec<Divergence> = ablated
        .par_iter()
        .map(|ab| {
            let na = base.get(ab.prompt_id.as_str()).ok_or_else(|| {
                Error::validation(format!(
                    "missing baseline trace for prompt {:?}",
                    ab.prompt_id
                ))
            })?;
            behaviour_divergence_counted(na, ab)
        })
        .collect::<Result<_>>()?;

    let mut groups: BTreeMap<ConditionKey, (Vec<&str>, f64, usize)> = BTreeMap::new();
    for (ab, d) in ablated.iter().zip(&divergences) {
        let g = groups.entry(condition_key(ab)?).or_default();
        if g.0.contains(&ab.prompt_id.as_str()) {
            return Err(Error::validation(format!(
                "duplicate ablated trace for {:?} under one condition",
                ab.prompt_id
            )));
        }
        g.0.push(&ab.prompt_id);
        g.1 += d.nats;
        g.2 += d.floor_hits;
    }

    let mut points = Vec::new();
    let mut by_order: BTreeMap<(u64, String), Vec<CurvePoint>> = BTreeMap::new();
    for ((fbits, order, seed), (prompts, sum, hits)) in groups {
        by_order
            .entry((fbits, order.clone()))
            .or_default()
            .push(CurvePoint {
                fraction: f64::from_bits(fbits),
                order,
                seed: Some(seed),
                mean_divergence_nats: sum / prompts.len() as f64,
                sd_over_seeds: None,
                n_prompts: prompts.len(),
                n_seeds: 1,
                floor_hits: hits,
            });
    }
    let mut keys: Vec<(u64, String)> = by_order.keys().cloned().collect();
    keys.sort_by(|a, b| {
        f64::from_bits(a.0)
            .total_cmp(&f64::from_bits(b.0))
            .then(a.1.cmp(&b.1))
    });
    for key in keys {
        let rows = by_order.remove(&key).unwrap();
        let k = rows.len() as f64;
        let mean = rows.iter().map(|r| r.mean_divergence_nats).sum::<f64>() / k;
        let sd = if rows.len() > 1 {
            (rows
                .iter()
                .map(|r| (r.mean_divergence_nats - mean).powi(2))
                .sum::<f64>()
                / (k - 1.0))
                .sqrt()
        } else {
            0.0
        };
        let aggregate = CurvePoint {
            fraction: f64::from_bits(key.0),
            order: key.1.clone(),
            seed: None,
            mean_divergence_nats: mean,
            sd_over_seeds: Some(sd),
            n_prompts: rows.iter().map(|r| r.n_prompts).min().unwrap_or(0),
            n_seeds: rows.len(),
            floor_hits: rows.iter().map(|r| r.floor_hits).sum(),
        };
        points.extend(rows);
        points.push(aggregate);
    }
    Ok(AblationCurve { points })
}

/// File name of a prompt's baseline trace.
pub fn baseline_file_name(prompt_id: &str) -> String {
    format!("{prompt_id}__base.phil")
}

/// File name of an ablated trace; fractions use shortest round-trip form.
pub fn ablated_file_name(prompt_id: &str, order: &str, fraction: f64, seed: u64) -> String {
    format!("{prompt_id}__{order}__f{fraction}__s{seed}.phil")
}

/// Default curve grid `0.0, 0.05, …, 1.0`.
pub fn default_fractions() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn random_dist(rng: &mut SeededRng, v: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..v).map(|_| rng.uniform() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    }

    fn trace(prompt: &str, steps: &[Vec<f64>], tokens: Vec<u32>, c: Condition) -> LogitTrace {
        LogitTrace::from_f64_steps(prompt, steps, tokens, c).unwrap()
    }

    fn ablated(order: &str, fraction: f64, seed: u64) -> Condition {
        Condition::Ablated {
            order: order.into(),
            fraction,
            seed,
            unit_ids: vec![1, 4],
        }
    }

    #[test]
    fn kl_examples() {
        let p = [0.5, 0.5];
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        let got = kl_divergence(&p, &[0.25, 0.75]).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.143841).abs() < 1e-6);

        let k = kl_divergence_counted(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert_eq!(k.floor_hits, 1);
        assert!(k.nats.is_finite() && k.nats > 10.0);
        assert!(matches!(
            kl_divergence(&p, &[1.0]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn divergence_is_step_mean() {
        let p = vec![0.5, 0.5];
        let q1 = vec![0.25, 0.75];
        let na = trace(
            "a",
            &[p.clone(), p.clone()],
            vec![0, 1],
            Condition::NonAblated,
        );
        let ab = trace(
            "a",
            &[p.clone(), q1.clone()],
            vec![0, 1],
            ablated("random", 0.1, 0),
        );
        let kl = kl_divergence(&p, &[0.25f32 as f64, 0.75f32 as f64]).unwrap();
        assert!((behaviour_divergence(&na, &ab).unwrap() - kl / 2.0).abs() < 1e-15);
        assert_eq!(behaviour_divergence(&na, &na).unwrap(), 0.0);

        let other = trace("a", &[p.clone(), q1], vec![1, 1], ablated("random", 0.1, 0));
        assert!(matches!(
            behaviour_divergence(&na, &other),
            Err(Error::TeacherForcing(_))
        ));
    }

    #[test]
    fn divergence_invariant_to_step_permutation() {
        let mut rng = SeededRng::new(9);
        let steps_a: Vec<Vec<f64>> = (0..7).map(|_| random_dist(&mut rng, 5)).collect();
        let steps_b: Vec<Vec<f64>> = (0..7).map(|_| random_dist(&mut rng, 5)).collect();
        let tokens: Vec<u32> = (0..7).map(|t| t % 5).collect();
        let d = behaviour_divergence(
            &trace("x", &steps_a, tokens.clone(), Condition::NonAblated),
            &trace("x", &steps_b, tokens.clone(), ablated("random", 0.5, 1)),
        )
        .unwrap();
        let mut perm: Vec<usize> = (0..7).collect();
        rng.shuffle(&mut perm);
        let pick = |s: &[Vec<f64>]| perm.iter().map(|&i| s[i].clone()).collect::<Vec<_>>();
        let ptok: Vec<u32> = perm.iter().map(|&i| tokens[i]).collect();
        let d2 = behaviour_divergence(
            &trace("x", &pick(&steps_a), ptok.clone(), Condition::NonAblated),
            &trace("x", &pick(&steps_b), ptok, ablated("random", 0.5, 1)),
        )
        .unwrap();
        assert!((d - d2).abs() < 1e-14);
    }

    #[test]
    fn phil_round_trip_is_bitwise() {
        let mut rng = SeededRng::new(3);
        let steps: Vec<Vec<f64>> = (0..4).map(|_| random_dist(&mut rng, 6)).collect();
        let mut t = trace(
            "prompt-7",
            &steps,
            vec![0, 5, 2, 2],
            ablated("synergistic", 0.15, 0),
        );
        t.extra.push(("temperature".into(), "0".into()));
        let bytes = t.to_bytes();
        let back = LogitTrace::from_bytes(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_bytes(), bytes);

        let base = trace("p", &steps, vec![1, 1, 1, 1], Condition::NonAblated);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p__base.phil");
        base.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), base.to_bytes());
        assert_eq!(LogitTrace::load(&path).unwrap(), base);
    }

    #[test]
    fn phil_rejects_damage() {
        let t = trace("p", &[vec![0.25; 4]], vec![3], Condition::NonAblated);
        let bytes = t.to_bytes();
        assert!(matches!(
            LogitTrace::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Corruption(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            LogitTrace::from_bytes(&extra),
            Err(Error::Corruption(_))
        ));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(
            LogitTrace::from_bytes(&magic),
            Err(Error::Format(_))
        ));
        let mut unnormalised = bytes;
        let n = unnormalised.len();
        unnormalised[n - 4..].copy_from_slice(&0.5f32.to_le_bytes());
        assert!(matches!(
            LogitTrace::from_bytes(&unnormalised),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn trace_validation() {
        assert!(
            LogitTrace::from_f64_steps("p", &[vec![0.6, 0.6]], vec![0], Condition::NonAblated)
                .is_err()
        );
        assert!(
            LogitTrace::from_f64_steps("p", &[vec![0.5, 0.5]], vec![2], Condition::NonAblated)
                .is_err()
        );
        assert!(LogitTrace::from_f64_steps("p", &[], vec![], Condition::NonAblated).is_err());
    }

    fn curve_fixture(seeds: u64, identical: bool) -> (Vec<LogitTrace>, Vec<LogitTrace>) {
        let mut rng = SeededRng::new(1);
        let mut baselines = Vec::new();
        let mut ablations = Vec::new();
        for prompt in ["p0", "p1", "p2"] {
            let steps: Vec<Vec<f64>> = (0..5).map(|_| random_dist(&mut rng, 8)).collect();
            let tokens = vec![0, 1, 2, 3, 4];
            baselines.push(trace(prompt, &steps, tokens.clone(), Condition::NonAblated));
            for &fraction in &[0.0, 0.5] {
                for seed in 0..seeds {
                    let s = if identical || fraction == 0.0 {
                        steps.clone()
                    } else {
                        (0..5).map(|_| random_dist(&mut rng, 8)).collect()
                    };
                    ablations.push(trace(
                        prompt,
                        &s,
                        tokens.clone(),
                        ablated("random", fraction, seed),
                    ));
                }
            }
        }
        (baselines, ablations)
    }

    #[test]
    fn curve_rows_and_aggregates() {
        let (b, a) = curve_fixture(5, false);
        let curve = ablation_curve(&b, &a).unwrap();
        assert_eq!(curve.fractions(), vec![0.0, 0.5]);
        let zero = curve.aggregate(0.0, "random").unwrap();
        assert_eq!(zero.mean_divergence_nats, 0.0);
        assert_eq!(zero.sd_over_seeds, Some(0.0));
        assert_eq!(zero.n_seeds, 5);
        let half = curve.aggregate(0.5, "random").unwrap();
        let per_seed: Vec<f64> = curve
            .points
            .iter()
            .filter(|p| p.fraction == 0.5 && p.seed.is_some())
            .map(|p| p.mean_divergence_nats)
            .collect();
        assert_eq!(per_seed.len(), 5);
        let mean = per_seed.iter().sum::<f64>() / 5.0;
        assert!((half.mean_divergence_nats - mean).abs() < 1e-15);
        assert!(half.sd_over_seeds.unwrap() > 0.0);
        assert!(curve.points.iter().all(|p| p.mean_divergence_nats >= 0.0));
        assert!(curve
            .to_csv()
            .lines()
            .any(|l| l.starts_with("0.5,random,all,")));
    }

    #[test]
    fn identical_seeds_have_zero_sd() {
        let (b, a) = curve_fixture(5, true);
        let curve = ablation_curve(&b, &a).unwrap();
        assert_eq!(
            curve.aggregate(0.5, "random").unwrap().sd_over_seeds,
            Some(0.0)
        );
    }

    #[test]
    fn missing_baseline_is_an_error() {
        let (b, a) = curve_fixture(1, false);
        assert!(matches!(
            ablation_curve(&b[1..], &a),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn file_names() {
        assert_eq!(baseline_file_name("p3"), "p3__base.phil");
        assert_eq!(
            ablated_file_name("p3", "random", 0.05, 2),
            "p3__random__f0.05__s2.phil"
        );
        assert_eq!(
            ablated_file_name("p3", "synergistic", 0.0, 0),
            "p3__synergistic__f0__s0.phil"
        );
    }

    #[test]
    fn default_grid() {
        let f = default_fractions();
        assert_eq!(f.len(), 21);
        assert_eq!(f[1], 0.05);
        assert_eq!(f[20], 1.0);
    }

    proptest! {
        #[test]
        fn kl_matches_direct_sum(seed in any::<u64>(), v in 2usize..40) {
            let mut rng = SeededRng::new(seed);
            let p = random_dist(&mut rng, v);
            let q = random_dist(&mut rng, v);
            let direct: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
            let got = kl_divergence(&p, &q).unwrap();
            prop_assert!((got - direct.max(0.0)).abs() < 1e-12);
            prop_assert!(got > 0.0);
        }
    }
}
