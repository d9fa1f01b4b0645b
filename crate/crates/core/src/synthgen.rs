//! Synthetic systems with planted informational structure.
//!
//! Every generator draws from [`SeededRng`]; prompt `p` of a recording uses
//! `SeededRng::derive(seed, p)`, so prompts are generated independently and
//! the output is bit-identical for a given spec.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{kl_divergence, Condition, LogitTrace};
use crate::error::{Error, Result};
use crate::estimators::{DiscreteJoint, GaussianCov};
use crate::netmetrics::WeightedGraph;
use crate::ranking::HeadSubset;
use crate::recording::{PromptMeta, Recording, UnitKind, UnitMeta};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Units of a layer share one AR(1) driver plus independent noise.
    RedundantCommonDriver,
    /// Unit pairs `(2k, 2k+1)` are `(W_t, S_t − W_t)` with white `W` and slow `S`.
    SynergisticSumPreserving,
    IndependentNoise,
    /// Edge layers follow a global redundant driver, middle layers carry
    /// sum-preserving synergistic pairs.
    LayeredInvertedU,
    /// Two binary units whose joint parity is preserved within each prompt.
    ParityDiscrete,
}

impl SynthKind {
    pub const ALL: [SynthKind; 5] = [
        SynthKind::RedundantCommonDriver,
        SynthKind::SynergisticSumPreserving,
        SynthKind::IndependentNoise,
        SynthKind::LayeredInvertedU,
        SynthKind::ParityDiscrete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::RedundantCommonDriver => "redundant_common_driver",
            SynthKind::SynergisticSumPreserving => "synergistic_sum_preserving",
            SynthKind::IndependentNoise => "independent_noise",
            SynthKind::LayeredInvertedU => "layered_inverted_u",
            SynthKind::ParityDiscrete => "parity_discrete",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown synthetic kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n_units: usize,
    /// Units are split into contiguous, near-equal layer blocks.
    pub n_layers: usize,
    pub n_prompts: usize,
    pub n_timesteps: usize,
    pub noise_sd: f64,
    pub ar_coefficient: f64,
    pub seed: u64,
    /// Peak synergistic weight of `layered_inverted_u`, in `(0, 1]`.
    pub strength: f64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind) -> Self {
        let (n_units, n_layers) = match kind {
            SynthKind::LayeredInvertedU => (24, 3),
            SynthKind::ParityDiscrete => (2, 1),
            _ => (8, 1),
        };
        SynthSpec {
            kind,
            n_units,
            n_layers,
            n_prompts: 60,
            n_timesteps: 100,
            noise_sd: 0.1,
            ar_coefficient: 0.9,
            seed: 0,
            strength: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::validation(format!("{}: {msg}", self.kind)));
        if self.n_prompts == 0 {
            return fail("n_prompts must be at least 1".into());
        }
        if self.n_timesteps < 2 {
            return fail("n_timesteps must be at least 2".into());
        }
        if self.ar_coefficient.is_nan() || self.ar_coefficient.abs() >= 1.0 {
            return fail(format!(
                "|ar_coefficient| must be < 1, got {}",
                self.ar_coefficient
            ));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return fail(format!(
                "noise_sd must be finite and ≥ 0, got {}",
                self.noise_sd
            ));
        }
        if self.n_layers == 0 || self.n_layers > self.n_units {
            return fail(format!(
                "need 1 ≤ n_layers ≤ n_units, got {} layers for {} units",
                self.n_layers, self.n_units
            ));
        }
        match self.kind {
            SynthKind::RedundantCommonDriver | SynthKind::IndependentNoise => {
                if self.n_units < 2 {
                    return fail("n_units must be at least 2".into());
                }
            }
            SynthKind::SynergisticSumPreserving => {
                if self.n_units < 2 || !self.n_units.is_multiple_of(2) {
                    return fail(format!(
                        "n_units must be even and ≥ 2, got {}",
                        self.n_units
                    ));
                }
            }
            SynthKind::LayeredInvertedU => {
                if self.n_layers < 3 {
                    return fail("n_layers must be at least 3".into());
                }
                if self.n_units < 2 * self.n_layers {
                    return fail("each layer needs at least two units".into());
                }
                if !(self.strength > 0.0 && self.strength <= 1.0) {
                    return fail(format!("strength must be in (0, 1], got {}", self.strength));
                }
            }
            SynthKind::ParityDiscrete => {
                if self.n_units != 2 || self.n_layers != 1 {
                    return fail("parity system has exactly 2 units in 1 layer".into());
                }
            }
        }
        Ok(())
    }

    fn layer_of(&self, unit: usize) -> usize {
        unit * self.n_layers / self.n_units
    }

    fn units(&self) -> Vec<UnitMeta> {
        let mut first = 0;
        (0..self.n_units)
            .map(|i| {
                let layer = self.layer_of(i);
                if i == 0 || layer != self.layer_of(i - 1) {
                    first = i;
                }
                UnitMeta {
                    unit_id: i,
                    layer,
                    index_in_layer: i - first,
                    kind: UnitKind::Synthetic,
                }
            })
            .collect()
    }
}

/// Stationary AR(1) series with unit variance.
fn ar_series(rng: &mut SeededRng, t: usize, phi: f64) -> Vec<f64> {
    let innovation = (1.0 - phi * phi).sqrt();
    let mut x = Vec::with_capacity(t);
    x.push(rng.normal());
    for k in 1..t {
        let next = phi * x[k - 1] + innovation * rng.normal();
        x.push(next);
    }
    x
}

fn white(rng: &mut SeededRng, t: usize) -> Vec<f64> {
    (0..t).map(|_| rng.normal()).collect()
}

fn parity_series(rng: &mut SeededRng, t: usize) -> (Vec<u8>, Vec<u8>) {
    let mut x = Vec::with_capacity(t);
    let mut y = Vec::with_capacity(t);
    if t == 0 {
        return (x, y);
    }
    x.push(rng.below(2) as u8);
    y.push(rng.below(2) as u8);
    for k in 1..t {
        let nx = rng.below(2) as u8;
        x.push(nx);
        y.push(nx ^ x[k - 1] ^ y[k - 1]);
    }
    (x, y)
}

/// Unit series of one prompt, `n_units × n_timesteps`.
fn prompt_series(spec: &SynthSpec, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let (n, t, phi, sd) = (
        spec.n_units,
        spec.n_timesteps,
        spec.ar_coefficient,
        spec.noise_sd,
    );
    let add_noise = |rng: &mut SeededRng, mut s: Vec<f64>| {
        for v in s.iter_mut() {
            *v += sd * rng.normal();
        }
        s
    };
    match spec.kind {
        SynthKind::IndependentNoise => (0..n).map(|_| white(rng, t)).collect(),
        SynthKind::RedundantCommonDriver => {
            let drivers: Vec<Vec<f64>> =
                (0..spec.n_layers).map(|_| ar_series(rng, t, phi)).collect();
            (0..n)
                .map(|i| add_noise(rng, drivers[spec.layer_of(i)].clone()))
                .collect()
        }
        SynthKind::SynergisticSumPreserving => {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n / 2 {
                let s = ar_series(rng, t, phi);
                let w = white(rng, t);
                let b: Vec<f64> = s.iter().zip(&w).map(|(s, w)| s - w).collect();
                out.push(add_noise(rng, w));
                out.push(add_noise(rng, b));
            }
            out
        }
        SynthKind::LayeredInvertedU => {
            let units = spec.units();
            let r = ar_series(rng, t, phi);
            let mut out = Vec::with_capacity(n);
            for layer in 0..spec.n_layers {
                let x = layer as f64 / (spec.n_layers - 1) as f64;
                let mut w = spec.strength * (std::f64::consts::PI * x).sin();
                if w < 1e-12 {
                    w = 0.0;
                }
                let s = ar_series(rng, t, phi);
                let g = white(rng, t);
                for u in units.iter().filter(|u| u.layer == layer) {
                    let sign = if u.index_in_layer % 2 == 0 { 1.0 } else { -1.0 };
                    let series = (0..t)
                        .map(|k| {
                            (1.0 - w).sqrt() * r[k]
                                + w.sqrt() * (s[k] + sign * g[k]) / std::f64::consts::SQRT_2
                        })
                        .collect();
                    out.push(add_noise(rng, series));
                }
            }
            out
        }
        SynthKind::ParityDiscrete => {
            let (x, y) = parity_series(rng, t);
            vec![
                x.into_iter().map(f64::from).collect(),
                y.into_iter().map(f64::from).collect(),
            ]
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Recording> {
    spec.validate()?;
    let per_prompt: Vec<Vec<Vec<f64>>> = (0..spec.n_prompts)
        .into_par_iter()
        .map(|p| prompt_series(spec, &mut SeededRng::derive(spec.seed, p as u64)))
        .collect();
    let (n, t) = (spec.n_units, spec.n_timesteps);
    let mut values = Vec::with_capacity(n * spec.n_prompts * t);
    for u in 0..n {
        for prompt in &per_prompt {
            values.extend_from_slice(&prompt[u]);
        }
    }
    let prompts = (0..spec.n_prompts)
        .map(|p| PromptMeta::new(format!("synth-{p:04}"), spec.kind.as_str()))
        .collect();
    Recording::new(spec.units(), prompts, t, values)
}

/// Sampled parity-preserving transitions of two binary units. Transition `k`
/// runs from `(x[k], y[k])` to `(x_next[k], y_next[k])`; each starts from a
/// fresh uniform state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParitySample {
    pub x: Vec<u8>,
    pub y: Vec<u8>,
    pub x_next: Vec<u8>,
    pub y_next: Vec<u8>,
}

impl ParitySample {
    /// Exact joint over `(x_t, y_t, x_{t+1}, y_{t+1})`: uniform state, uniform
    /// next `x`, next `y` fixed by parity.
    pub fn exact_table() -> DiscreteJoint {
        let mut probs = vec![0.0; 16];
        for (k, p) in probs.iter_mut().enumerate() {
            let (x, y, nx, ny) = (k >> 3 & 1, k >> 2 & 1, k >> 1 & 1, k & 1);
            if x ^ y == nx ^ ny {
                *p = 0.125;
            }
        }
        DiscreteJoint::new(vec![2; 4], probs).expect("valid parity table")
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Plug-in joint from the sampled transitions.
    pub fn plugin_table(&self) -> Result<DiscreteJoint> {
        let mut counts = [0u64; 16];
        for k in 0..self.len() {
            let idx = (self.x[k] as usize) << 3
                | (self.y[k] as usize) << 2
                | (self.x_next[k] as usize) << 1
                | self.y_next[k] as usize;
            counts[idx] += 1;
        }
        DiscreteJoint::from_counts(vec![2; 4], &counts)
    }

    pub fn parity_preserved(&self) -> bool {
        (0..self.len()).all(|k| self.x[k] ^ self.y[k] == self.x_next[k] ^ self.y_next[k])
    }
}

pub fn generate_discrete_parity(n_transitions: usize, seed: u64) -> Result<ParitySample> {
    if n_transitions == 0 {
        return Err(Error::validation(
            "parity sample needs at least one transition",
        ));
    }
    let mut rng = SeededRng::new(seed);
    let mut s = ParitySample {
        x: Vec::with_capacity(n_transitions),
        y: Vec::with_capacity(n_transitions),
        x_next: Vec::with_capacity(n_transitions),
        y_next: Vec::with_capacity(n_transitions),
    };
    for _ in 0..n_transitions {
        let (x, y) = parity_series(&mut rng, 2);
        s.x.push(x[0]);
        s.y.push(y[0]);
        s.x_next.push(x[1]);
        s.y_next.push(y[1]);
    }
    Ok(s)
}

/// Covariance of `(a_t, b_t, a_{t+1}, b_{t+1})` for two noisy copies of one
/// unit-variance AR(1) latent.
pub fn duplicated_ar_covariance(ar: f64, noise_sd: f64) -> Result<GaussianCov> {
    let v = 1.0 + noise_sd * noise_sd;
    #[rustfmt::skip]
    let m = vec![
        v,   1.0, ar,  ar,
        1.0, v,   ar,  ar,
        ar,  ar,  v,   1.0,
        ar,  ar,  1.0, v,
    ];
    GaussianCov::new(4, m)
}

/// Covariance of `(a_t, b_t, a_{t+1}, b_{t+1})` for `a = W`, `b = S − W` with
/// white unit `W`, unit-variance `S` of lag-1 autocorrelation `s_ar`, and
/// independent observation noise.
pub fn rotation_covariance(s_ar: f64, noise_sd: f64) -> Result<GaussianCov> {
    let e = noise_sd * noise_sd;
    #[rustfmt::skip]
    let m = vec![
        1.0 + e, -1.0,    0.0,     0.0,
        -1.0,    2.0 + e, 0.0,     s_ar,
        0.0,     0.0,     1.0 + e, -1.0,
        0.0,     s_ar,    -1.0,    2.0 + e,
    ];
    GaussianCov::new(4, m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedGraph {
    /// Edges placed uniformly over all pairs.
    Integrated,
    /// Edges concentrated inside equal-size blocks.
    Modular,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedGraphSpec {
    pub n: usize,
    pub blocks: usize,
    pub n_edges: usize,
    /// Share of modular edges placed inside blocks.
    pub within_share: f64,
}

impl Default for PlantedGraphSpec {
    fn default() -> Self {
        PlantedGraphSpec {
            n: 32,
            blocks: 4,
            n_edges: 96,
            within_share: 0.95,
        }
    }
}

/// Graph with `n_edges` edges of weight `U(0.5, 1.5)`, placed per `kind`.
pub fn planted_graph(
    kind: PlantedGraph,
    spec: PlantedGraphSpec,
    seed: u64,
) -> Result<WeightedGraph> {
    let (n, blocks) = (spec.n, spec.blocks);
    if blocks == 0 || n < 2 * blocks || !(0.0..=1.0).contains(&spec.within_share) {
        return Err(Error::validation(
            "planted graph needs ≥ 2 nodes per block and a share in [0, 1]",
        ));
    }
    let block = |i: usize| i * blocks / n;
    let mut inside = Vec::new();
    let mut across = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if block(i) == block(j) {
                inside.push((i, j));
            } else {
                across.push((i, j));
            }
        }
    }
    if spec.n_edges > inside.len() + across.len() {
        return Err(Error::validation("more edges requested than node pairs"));
    }
    let mut rng = SeededRng::new(seed);
    let mut edges = match kind {
        PlantedGraph::Integrated => {
            let mut all = [inside, across].concat();
            rng.shuffle(&mut all);
            all.truncate(spec.n_edges);
            all
        }
        PlantedGraph::Modular => {
            let k = ((spec.within_share * spec.n_edges as f64).round() as usize).min(inside.len());
            if spec.n_edges - k > across.len() {
                return Err(Error::validation(
                    "too few cross-block pairs for the requested edges",
                ));
            }
            rng.shuffle(&mut inside);
            rng.shuffle(&mut across);
            inside.truncate(k);
            across.truncate(spec.n_edges - k);
            [inside, across].concat()
        }
    };
    edges.sort_unstable();
    let mut g = WeightedGraph::empty(n);
    for (i, j) in edges {
        g.set_weight(i, j, 0.5 + rng.uniform())?;
    }
    g.with_layers((0..n).map(block).collect())
}

pub const CRITICAL_KL: f64 = 0.5;
pub const NONCRITICAL_KL: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioShape {
    pub n_prompts: usize,
    pub vocab: usize,
    pub n_steps: usize,
}

impl Default for ScenarioShape {
    fn default() -> Self {
        ScenarioShape {
            n_prompts: 4,
            vocab: 32,
            n_steps: 8,
        }
    }
}

/// Baseline traces plus fixed tilt directions; ablating a unit set shifts
/// every step by `CRITICAL_KL · #critical + NONCRITICAL_KL · #other` nats.
#[derive(Clone, Debug)]
pub struct LogitScenario {
    n_units: usize,
    critical: Vec<usize>,
    baselines: Vec<LogitTrace>,
    /// Per prompt, `n_steps × vocab` tilt directions centred under the baseline.
    directions: Vec<Vec<f64>>,
}

impl LogitScenario {
    pub fn baselines(&self) -> &[LogitTrace] {
        &self.baselines
    }

    pub fn critical(&self) -> &[usize] {
        &self.critical
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn target_kl(&self, ablated: &[usize]) -> f64 {
        let c = ablated.iter().filter(|u| self.critical.contains(u)).count();
        CRITICAL_KL * c as f64 + NONCRITICAL_KL * (ablated.len() - c) as f64
    }

    /// Critical units first (in subset order), then the rest by id.
    pub fn planted_order(&self) -> Vec<usize> {
        let mut order = self.critical.clone();
        order.extend((0..self.n_units).filter(|u| !self.critical.contains(u)));
        order
    }

    /// Teacher-forced traces of every prompt with `unit_ids` ablated.
    pub fn ablate(
        &self,
        unit_ids: &[usize],
        order: &str,
        fraction: f64,
        seed: u64,
    ) -> Result<Vec<LogitTrace>> {
        if let Some(bad) = unit_ids.iter().find(|&&u| u >= self.n_units) {
            return Err(Error::validation(format!(
                "unit {bad} outside 0..{}",
                self.n_units
            )));
        }
        let target = self.target_kl(unit_ids);
        let condition = Condition::Ablated {
            order: order.to_string(),
            fraction,
            seed,
            unit_ids: unit_ids.to_vec(),
        };
        self.baselines
            .par_iter()
            .zip(&self.directions)
            .map(|(base, dirs)| {
                let v = base.vocab();
                let mut probs = Vec::with_capacity(v * base.n_steps());
                for t in 0..base.n_steps() {
                    probs.extend(tilt_to_kl(base.step(t), &dirs[t * v..(t + 1) * v], target)?);
                }
                LogitTrace::new(
                    base.prompt_id(),
                    v,
                    base.token_ids().to_vec(),
                    probs,
                    condition.clone(),
                )
            })
            .collect()
    }
}

fn widen(p: &[f32]) -> Vec<f64> {
    p.iter().map(|&x| x as f64).collect()
}

fn tilted(p: &[f64], g: &[f64], lambda: f64) -> Vec<f64> {
    let raw: Vec<f64> = p
        .iter()
        .zip(g)
        .map(|(p, g)| p * (lambda * g).exp())
        .collect();
    let z: f64 = raw.iter().sum();
    raw.iter().map(|r| r / z).collect()
}

/// `q ∝ p·exp(λg)` with `λ ≥ 0` chosen so that the KL computed on the stored
/// single-precision values equals `target`.
fn tilt_to_kl(p32: &[f32], g: &[f64], target: f64) -> Result<Vec<f32>> {
    if target == 0.0 {
        return Ok(p32.to_vec());
    }
    let p = widen(p32);
    let kl_at = |lambda: f64| kl_divergence(&p, &tilted(&p, g, lambda));
    let (mut lo, mut hi) = (0.0, 1.0);
    while kl_at(hi)? < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Numerical(format!("cannot reach KL {target}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kl_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut q: Vec<f32> = tilted(&p, g, 0.5 * (lo + hi))
        .iter()
        .map(|&x| x as f32)
        .collect();
    // absorb single-precision rounding in the least probable token
    let k = (0..p.len())
        .filter(|&i| p[i] > 0.0)
        .min_by(|&a, &b| p[a].total_cmp(&p[b]))
        .expect("non-empty distribution");
    for _ in 0..3 {
        let residual = kl_divergence(&p, &widen(&q))? - target;
        q[k] = ((q[k] as f64) * (residual / p[k]).exp()) as f32;
    }
    Ok(q)
}

pub fn generate_logit_scenario(
    n_units: usize,
    planted_critical: &HeadSubset,
    seed: u64,
) -> Result<LogitScenario> {
    generate_logit_scenario_with(n_units, planted_critical, ScenarioShape::default(), seed)
}

pub fn generate_logit_scenario_with(
    n_units: usize,
    planted_critical: &HeadSubset,
    shape: ScenarioShape,
    seed: u64,
) -> Result<LogitScenario> {
    if n_units == 0 || shape.n_prompts == 0 || shape.n_steps == 0 || shape.vocab < 2 {
        return Err(Error::validation(
            "scenario needs units, prompts, steps and vocab ≥ 2",
        ));
    }
    let mut seen = vec![false; n_units];
    for &u in &planted_critical.unit_ids {
        if u >= n_units || std::mem::replace(&mut seen[u], true) {
            return Err(Error::validation(format!("invalid critical unit {u}")));
        }
    }
    let v = shape.vocab;
    let prompts: Vec<(LogitTrace, Vec<f64>)> = (0..shape.n_prompts)
        .into_par_iter()
        .map(|p| {
            let mut rng = SeededRng::derive(seed, p as u64);
            let mut probs = Vec::with_capacity(v * shape.n_steps);
            let mut tokens = Vec::with_capacity(shape.n_steps);
            let mut dirs = Vec::with_capacity(v * shape.n_steps);
            for _ in 0..shape.n_steps {
                let logits: Vec<f64> = (0..v).map(|_| rng.normal()).collect();
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                let step: Vec<f32> = e.iter().map(|x| (x / z) as f32).collect();
                let greedy = (0..v)
                    .max_by(|&a, &b| step[a].total_cmp(&step[b]).then(b.cmp(&a)))
                    .unwrap();
                tokens.push(greedy as u32);
                let pw = widen(&step);
                let raw: Vec<f64> = (0..v).map(|_| rng.normal()).collect();
                let mean: f64 = raw.iter().zip(&pw).map(|(g, p)| g * p).sum();
                dirs.extend(raw.iter().map(|g| g - mean));
                probs.extend(step);
            }
            let trace = LogitTrace::new(
                format!("synth-{p:04}"),
                v,
                tokens,
                probs,
                Condition::NonAblated,
            )?;
            Ok((trace, dirs))
        })
        .collect::<Result<_>>()?;
    let (baselines, directions) = prompts.into_iter().unzip();
    Ok(LogitScenario {
        n_units,
        critical: planted_critical.unit_ids.clone(),
        baselines,
        directions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{ablation_curve, behaviour_divergence};
    use crate::pairwise::{pair_matrices, PairOptions};
    use crate::phid::{phid_discrete, phid_from_covariance};
    use crate::ranking::{
        layer_profile, node_means, random_order, subset_size, synergy_redundancy_rank, SubsetMode,
    };

    fn spec(kind: SynthKind) -> SynthSpec {
        SynthSpec {
            n_prompts: 20,
            ..SynthSpec::new(kind)
        }
    }

    #[test]
    fn deterministic_per_seed() {
        for kind in SynthKind::ALL {
            let s = spec(kind);
            let a = generate(&s).unwrap();
            assert_eq!(
                a.to_bytes().unwrap(),
                generate(&s).unwrap().to_bytes().unwrap()
            );
            let other = generate(&SynthSpec { seed: 1, ..s }).unwrap();
            assert_ne!(a.values(), other.values(), "{kind}");
            assert!(a.units().iter().all(|u| u.kind == UnitKind::Synthetic));
        }
    }

    #[test]
    fn validation() {
        let bad = [
            SynthSpec {
                ar_coefficient: 1.0,
                ..SynthSpec::new(SynthKind::IndependentNoise)
            },
            SynthSpec {
                ar_coefficient: -1.2,
                ..SynthSpec::new(SynthKind::RedundantCommonDriver)
            },
            SynthSpec {
                n_units: 5,
                ..SynthSpec::new(SynthKind::SynergisticSumPreserving)
            },
            SynthSpec {
                n_layers: 2,
                ..SynthSpec::new(SynthKind::LayeredInvertedU)
            },
            SynthSpec {
                n_units: 3,
                ..SynthSpec::new(SynthKind::ParityDiscrete)
            },
            SynthSpec {
                n_timesteps: 1,
                ..SynthSpec::new(SynthKind::IndependentNoise)
            },
            SynthSpec {
                noise_sd: -0.1,
                ..SynthSpec::new(SynthKind::IndependentNoise)
            },
        ];
        for s in bad {
            assert!(matches!(generate(&s), Err(Error::Validation(_))), "{s:?}");
        }
        assert_eq!(
            "layered_inverted_u".parse::<SynthKind>().unwrap(),
            SynthKind::LayeredInvertedU
        );
        assert!("nope".parse::<SynthKind>().is_err());
    }

    #[test]
    fn layer_blocks() {
        let units = SynthSpec::new(SynthKind::LayeredInvertedU).units();
        assert_eq!(units[7].layer, 0);
        assert_eq!(units[8].layer, 1);
        assert_eq!(units[8].index_in_layer, 0);
        assert_eq!(units[23].index_in_layer, 7);
        let uneven = SynthSpec {
            n_units: 7,
            n_layers: 3,
            ..SynthSpec::new(SynthKind::IndependentNoise)
        };
        let layers: Vec<usize> = uneven.units().iter().map(|u| u.layer).collect();
        assert_eq!(layers, vec![0, 0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn sum_preserving_pairs() {
        let s = SynthSpec {
            noise_sd: 0.0,
            ..spec(SynthKind::SynergisticSumPreserving)
        };
        let rec = generate(&s).unwrap();
        // a + b is the slow AR(1) latent, so its lag-1 autocorrelation is high
        let sum: Vec<f64> = rec
            .series(0, 0)
            .iter()
            .zip(rec.series(1, 0))
            .map(|(a, b)| a + b)
            .collect();
        let mean = sum.iter().sum::<f64>() / sum.len() as f64;
        let c0: f64 = sum.iter().map(|x| (x - mean).powi(2)).sum();
        let c1: f64 = sum.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        assert!(c1 / c0 > 0.7);
    }

    #[test]
    fn independent_noise_has_no_structure() {
        let rec = generate(&SynthSpec {
            n_units: 6,
            ..spec(SynthKind::IndependentNoise)
        })
        .unwrap();
        let m = pair_matrices(&rec, &PairOptions::default()).unwrap().matrix;
        for i in 0..6 {
            for j in 0..6 {
                assert!(m.synergy_at(i, j).abs() < 0.05 && m.redundancy_at(i, j).abs() < 0.05);
            }
        }
    }

    #[test]
    fn common_driver_is_redundant() {
        let rec = generate(&spec(SynthKind::RedundantCommonDriver)).unwrap();
        let m = pair_matrices(&rec, &PairOptions::default()).unwrap().matrix;
        let means = node_means(&m).unwrap();
        let red: f64 = means.redundancy.iter().sum();
        let syn: f64 = means.synergy.iter().sum();
        assert!(red > 5.0 * syn, "red {red} syn {syn}");
    }

    #[test]
    fn layered_profile_peaks_in_the_middle() {
        let rec = generate(&spec(SynthKind::LayeredInvertedU)).unwrap();
        let m = pair_matrices(&rec, &PairOptions::default()).unwrap().matrix;
        let rp = synergy_redundancy_rank(&node_means(&m).unwrap()).unwrap();
        let lp = layer_profile(&rp, rec.units()).unwrap();
        assert!(
            lp[1].mean_score > lp[0].mean_score && lp[1].mean_score > lp[2].mean_score,
            "{lp:?}"
        );
    }

    #[test]
    fn analytic_covariances() {
        let dup = phid_from_covariance(&duplicated_ar_covariance(0.9, 0.1).unwrap()).unwrap();
        assert!((dup.rtr() - 0.790036166418759).abs() < 1e-9);
        assert!(dup.sts() <= 0.05 * dup.rtr());
        let rot = phid_from_covariance(&rotation_covariance(1.0, 0.1).unwrap()).unwrap();
        assert!((rot.sts() - 1.0998145519939).abs() < 1e-9);
        assert!(rot.iter().all(|(_, v)| v <= rot.sts()));
    }

    #[test]
    fn parity() {
        let exact = phid_discrete(&ParitySample::exact_table()).unwrap();
        assert!((exact.sts() - 1.0).abs() < 1e-9);
        assert!(exact.rtr().abs() < 1e-9);
        let sample = generate_discrete_parity(100_000, 5).unwrap();
        assert!(sample.parity_preserved());
        let plugin = phid_discrete(&sample.plugin_table().unwrap()).unwrap();
        assert!((plugin.sts() - 1.0).abs() < 0.02);
        assert!(generate_discrete_parity(1, 0)
            .unwrap()
            .plugin_table()
            .is_ok());
        assert!(generate_discrete_parity(0, 0).is_err());

        let rec = generate(&spec(SynthKind::ParityDiscrete)).unwrap();
        assert!(rec.values().iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    fn critical(ids: Vec<usize>) -> HeadSubset {
        HeadSubset {
            unit_ids: ids,
            mode: SubsetMode::MostSynergistic,
            fraction: 0.25,
            seed: 0,
        }
    }

    #[test]
    fn planted_graph_ordering() {
        use crate::netmetrics::{global_efficiency, modularity};
        let spec = PlantedGraphSpec::default();
        for seed in 0..3 {
            let a = planted_graph(PlantedGraph::Integrated, spec, seed).unwrap();
            let b = planted_graph(PlantedGraph::Modular, spec, seed).unwrap();
            assert_eq!(a.edges().len(), 96);
            assert_eq!(b.edges().len(), 96);
            assert!(global_efficiency(&a) > global_efficiency(&b));
            assert!(modularity(&b, 0).unwrap().q > modularity(&a, 0).unwrap().q);
        }
        let bad = PlantedGraphSpec { n: 5, ..spec };
        assert!(planted_graph(PlantedGraph::Modular, bad, 0).is_err());
    }

    #[test]
    fn scenario_calibration() {
        let sc = generate_logit_scenario(8, &critical(vec![3, 6]), 2).unwrap();
        for (ids, want) in [
            (vec![], 0.0),
            (vec![3], 0.5),
            (vec![0], 0.01),
            (vec![6, 1, 3], 1.01),
        ] {
            let ab = sc.ablate(&ids, "synergistic", 0.0, 0).unwrap();
            let mean = sc
                .baselines()
                .iter()
                .zip(&ab)
                .map(|(b, a)| behaviour_divergence(b, a).unwrap())
                .sum::<f64>()
                / ab.len() as f64;
            assert!((mean - want).abs() < 1e-9, "{ids:?}: {mean}");
        }
        assert_eq!(sc.planted_order(), vec![3, 6, 0, 1, 2, 4, 5, 7]);
        assert!(sc.ablate(&[9], "random", 0.1, 0).is_err());
        assert!(generate_logit_scenario(4, &critical(vec![1, 1]), 0).is_err());
    }

    #[test]
    fn planted_order_dominates_random() {
        let n = 20;
        let sc = generate_logit_scenario(n, &critical(vec![2, 5, 11, 17]), 4).unwrap();
        let mut ablated = Vec::new();
        let fractions = [0.0, 0.1, 0.25, 0.5, 0.75, 1.0];
        for &f in &fractions {
            let k = subset_size(f, n);
            ablated.extend(
                sc.ablate(&sc.planted_order()[..k], "synergistic", f, 0)
                    .unwrap(),
            );
            for seed in 0..5 {
                ablated.extend(
                    sc.ablate(&random_order(n, seed)[..k], "random", f, seed)
                        .unwrap(),
                );
            }
        }
        let curve = ablation_curve(sc.baselines(), &ablated).unwrap();
        for &f in &fractions {
            let s = curve
                .aggregate(f, "synergistic")
                .unwrap()
                .mean_divergence_nats;
            let r = curve.aggregate(f, "random").unwrap().mean_divergence_nats;
            if f == 0.0 {
                assert_eq!((s, r), (0.0, 0.0));
            } else if f < 1.0 {
                assert!(s > r, "{f}: {s} vs {r}");
            } else {
                assert!((s - r).abs() < 1e-9);
            }
        }
    }
}
