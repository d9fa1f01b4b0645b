//! Per-unit synergy–redundancy ranks and the unit orderings derived from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairwise::PairMatrix;
use crate::recording::UnitMeta;
use crate::rng::SeededRng;

/// Mean off-diagonal synergy and redundancy of each unit's row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeMeans {
    pub synergy: Vec<f64>,
    pub redundancy: Vec<f64>,
}

pub fn node_means(pm: &PairMatrix) -> Result<NodeMeans> {
    let n = pm.n();
    if n < 2 {
        return Err(Error::validation("node means need at least two units"));
    }
    let row_mean = |row: &[f64], i: usize| {
        row.iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| v)
            .sum::<f64>()
            / (n - 1) as f64
    };
    Ok(NodeMeans {
        synergy: (0..n).map(|i| row_mean(pm.synergy_row(i), i)).collect(),
        redundancy: (0..n).map(|i| row_mean(pm.redundancy_row(i), i)).collect(),
    })
}

/// Ascending ranks starting at 1; tied values share the mean of their ranks.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankProfile {
    pub mean_synergy: Vec<f64>,
    pub mean_redundancy: Vec<f64>,
    pub synergy_rank: Vec<f64>,
    pub redundancy_rank: Vec<f64>,
    /// `synergy_rank − redundancy_rank`; larger means more synergistic.
    pub rank_diff: Vec<f64>,
    /// Min–max scaled `rank_diff`; all zero when `rank_diff` is constant.
    pub normalised_score: Vec<f64>,
}

/// One CSV/JSON row of a rank profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub unit_id: usize,
    pub layer: usize,
    pub mean_synergy: f64,
    pub mean_redundancy: f64,
    pub synergy_rank: f64,
    pub redundancy_rank: f64,
    pub rank_diff: f64,
    pub normalised_score: f64,
}

impl RankProfile {
    pub fn n(&self) -> usize {
        self.rank_diff.len()
    }

    pub fn rows(&self, units: &[UnitMeta]) -> Result<Vec<RankRow>> {
        if units.len() != self.n() {
            return Err(Error::validation(format!(
                "{} units for a profile of {}",
                units.len(),
                self.n()
            )));
        }
        Ok(units
            .iter()
            .enumerate()
            .map(|(i, u)| RankRow {
                unit_id: u.unit_id,
                layer: u.layer,
                mean_synergy: self.mean_synergy[i],
                mean_redundancy: self.mean_redundancy[i],
                synergy_rank: self.synergy_rank[i],
                redundancy_rank: self.redundancy_rank[i],
                rank_diff: self.rank_diff[i],
                normalised_score: self.normalised_score[i],
            })
            .collect())
    }

    pub fn to_csv(&self, units: &[UnitMeta]) -> Result<String> {
        let mut out = String::from(
            "unit_id,layer,mean_synergy,mean_redundancy,synergy_rank,redundancy_rank,rank_diff,normalised_score\n",
        );
        for r in self.rows(units)? {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.unit_id,
                r.layer,
                r.mean_synergy,
                r.mean_redundancy,
                r.synergy_rank,
                r.redundancy_rank,
                r.rank_diff,
                r.normalised_score
            )
            .unwrap();
        }
        Ok(out)
    }

    pub fn to_json(&self, units: &[UnitMeta]) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.rows(units)?).expect("rows serialise"))
    }
}

pub fn synergy_redundancy_rank(means: &NodeMeans) -> Result<RankProfile> {
    let n = means.synergy.len();
    if n < 2 || means.redundancy.len() != n {
        return Err(Error::validation(
            "ranking needs at least two units with both means",
        ));
    }
    if means
        .synergy
        .iter()
        .chain(&means.redundancy)
        .any(|v| !v.is_finite())
    {
        return Err(Error::validation("non-finite node mean"));
    }
    let synergy_rank = fractional_ranks(&means.synergy);
    let redundancy_rank = fractional_ranks(&means.redundancy);
    let rank_diff: Vec<f64> = synergy_rank
        .iter()
        .zip(&redundancy_rank)
        .map(|(s, r)| s - r)
        .collect();
    let lo = rank_diff.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rank_diff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let normalised_score = rank_diff
        .iter()
        .map(|d| if hi > lo { (d - lo) / (hi - lo) } else { 0.0 })
        .collect();
    Ok(RankProfile {
        mean_synergy: means.synergy.clone(),
        mean_redundancy: means.redundancy.clone(),
        synergy_rank,
        redundancy_rank,
        rank_diff,
        normalised_score,
    })
}

/// Mean normalised score of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPoint {
    pub layer: usize,
    /// `layer / max_layer`, in `[0, 1]`.
    pub position: f64,
    pub mean_score: f64,
    pub n_units: usize,
}

pub fn layer_profile(rp: &RankProfile, units: &[UnitMeta]) -> Result<Vec<LayerPoint>> {
    if units.len() != rp.n() {
        return Err(Error::validation(format!(
            "{} units for a profile of {}",
            units.len(),
            rp.n()
        )));
    }
    let mut by_layer: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (u, score) in units.iter().zip(&rp.normalised_score) {
        let e = by_layer.entry(u.layer).or_default();
        e.0 += score;
        e.1 += 1;
    }
    if by_layer.len() < 2 {
        return Err(Error::validation("layer profile needs at least two layers"));
    }
    let max_layer = *by_layer.keys().next_back().unwrap() as f64;
    Ok(by_layer
        .into_iter()
        .map(|(layer, (sum, count))| LayerPoint {
            layer,
            position: layer as f64 / max_layer,
            mean_score: sum / count as f64,
            n_units: count,
        })
        .collect())
}

pub fn layer_profile_csv(points: &[LayerPoint]) -> String {
    let mut out = String::from("layer,position,mean_normalised_score,n_units\n");
    for p in points {
        writeln!(
            out,
            "{},{},{},{}",
            p.layer, p.position, p.mean_score, p.n_units
        )
        .unwrap();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    MostSynergistic,
    MostRedundant,
    Random,
}

impl SubsetMode {
    pub const ALL: [SubsetMode; 3] = [
        SubsetMode::MostSynergistic,
        SubsetMode::MostRedundant,
        SubsetMode::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SubsetMode::MostSynergistic => "most_synergistic",
            SubsetMode::MostRedundant => "most_redundant",
            SubsetMode::Random => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSubset {
    pub unit_ids: Vec<usize>,
    pub mode: SubsetMode,
    pub fraction: f64,
    /// Only meaningful in random mode.
    pub seed: u64,
}

/// Unit ids by `rank_diff` descending, ties by id ascending.
fn synergistic_order(rp: &RankProfile) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..rp.n()).collect();
    ids.sort_by(|&a, &b| rp.rank_diff[b].total_cmp(&rp.rank_diff[a]).then(a.cmp(&b)));
    ids
}

/// Seeded uniformly random permutation of `0..n`.
pub fn random_order(n: usize, seed: u64) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut ids);
    ids
}

/// Number of units selected by `fraction` of `n`, rounded half away from zero.
pub fn subset_size(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

pub fn select_subset(
    rp: &RankProfile,
    fraction: f64,
    mode: SubsetMode,
    seed: u64,
) -> Result<HeadSubset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::validation(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    let k = subset_size(fraction, rp.n());
    if k == 0 {
        return Err(Error::validation(format!(
            "fraction {fraction} of {} units selects nothing",
            rp.n()
        )));
    }
    let order = match mode {
        SubsetMode::MostSynergistic => synergistic_order(rp),
        SubsetMode::MostRedundant => {
            let mut ids: Vec<usize> = (0..rp.n()).collect();
            ids.sort_by(|&a, &b| rp.rank_diff[a].total_cmp(&rp.rank_diff[b]).then(a.cmp(&b)));
            ids
        }
        SubsetMode::Random => random_order(rp.n(), seed),
    };
    Ok(HeadSubset {
        unit_ids: order[..k].to_vec(),
        mode,
        fraction,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    Synergistic,
    Random,
}

impl OrderMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OrderMode::Synergistic => "synergistic",
            OrderMode::Random => "random",
        }
    }
}

impl std::str::FromStr for OrderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synergistic" => Ok(OrderMode::Synergistic),
            "random" => Ok(OrderMode::Random),
            other => Err(Error::validation(format!(
                "unknown ablation order {other:?}"
            ))),
        }
    }
}

/// Full permutation of unit ids in ablation order.
pub fn ablation_order(rp: &RankProfile, mode: OrderMode, seed: u64) -> Vec<usize> {
    match mode {
        OrderMode::Synergistic => synergistic_order(rp),
        OrderMode::Random => random_order(rp.n(), seed),
    }
}
