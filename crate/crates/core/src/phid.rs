//! Integrated information decomposition of a two-part system across one lag.
//!
//! The sixteen atoms sit on the product of two copies of the two-source
//! redundancy lattice (`{1}{2} < {1}, {2} < {12}`), one for the sources at
//! time `t` and one for the targets at `t + lag`. Cumulative informativeness
//! of a node uses the minimum-mutual-information convention: the minimum of
//! `I(a; b)` over every source collection `a` in the source antichain and
//! every target collection `b` in the target antichain. Atoms follow by
//! Möbius inversion.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    discrete_mi, gaussian_mi, lagged_covariance, lagged_covariance_pooled, DiscreteJoint,
    GaussianCov,
};

/// Tolerance for monotonicity of cumulative values along the lattice order.
pub const MONOTONICITY_TOLERANCE: f64 = 1e-9;

/// One of the four antichains of the two-source redundancy lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Antichain {
    /// `{1}{2}`: redundancy.
    Red,
    /// `{1}`: unique to the first part.
    Unique1,
    /// `{2}`: unique to the second part.
    Unique2,
    /// `{12}`: synergy.
    Syn,
}

impl Antichain {
    pub const ALL: [Antichain; 4] = [
        Antichain::Red,
        Antichain::Unique1,
        Antichain::Unique2,
        Antichain::Syn,
    ];

    fn index(self) -> usize {
        self as usize
    }

    fn height(self) -> usize {
        match self {
            Antichain::Red => 0,
            Antichain::Unique1 | Antichain::Unique2 => 1,
            Antichain::Syn => 2,
        }
    }

    pub fn leq(self, other: Antichain) -> bool {
        self == other || self == Antichain::Red || other == Antichain::Syn
    }

    /// Collections making up the antichain.
    pub fn members(self) -> &'static [Part] {
        match self {
            Antichain::Red => &[Part::First, Part::Second],
            Antichain::Unique1 => &[Part::First],
            Antichain::Unique2 => &[Part::Second],
            Antichain::Syn => &[Part::Both],
        }
    }

    /// Exchanges the roles of the two parts.
    pub fn swapped(self) -> Antichain {
        match self {
            Antichain::Unique1 => Antichain::Unique2,
            Antichain::Unique2 => Antichain::Unique1,
            other => other,
        }
    }

    fn letter(self) -> char {
        match self {
            Antichain::Red => 'r',
            Antichain::Unique1 => 'x',
            Antichain::Unique2 => 'y',
            Antichain::Syn => 's',
        }
    }
}

/// A collection of variables at one end of the lag: part 1, part 2, or both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    First,
    Second,
    Both,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::First, Part::Second, Part::Both];

    fn indices(self) -> &'static [usize] {
        match self {
            Part::First => &[0],
            Part::Second => &[1],
            Part::Both => &[0, 1],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticeNode {
    pub source: Antichain,
    pub target: Antichain,
}

impl LatticeNode {
    pub const fn new(source: Antichain, target: Antichain) -> Self {
        Self { source, target }
    }

    pub fn index(self) -> usize {
        self.source.index() * 4 + self.target.index()
    }

    pub fn from_index(i: usize) -> Self {
        Self::new(Antichain::ALL[i / 4], Antichain::ALL[i % 4])
    }

    pub fn leq(self, other: LatticeNode) -> bool {
        self.source.leq(other.source) && self.target.leq(other.target)
    }

    pub fn swapped(self) -> Self {
        Self::new(self.source.swapped(), self.target.swapped())
    }

    /// Three-letter label such as `rtr` (Red→Red) or `xty` (Unq¹→Unq²).
    pub fn label(self) -> String {
        format!("{}t{}", self.source.letter(), self.target.letter())
    }
}

impl fmt::Display for LatticeNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

pub const RED_TO_RED: LatticeNode = LatticeNode::new(Antichain::Red, Antichain::Red);
pub const SYN_TO_SYN: LatticeNode = LatticeNode::new(Antichain::Syn, Antichain::Syn);

/// The 16-node product lattice.
#[derive(Clone, Debug)]
pub struct Lattice {
    order: Vec<LatticeNode>,
}

impl Lattice {
    pub fn nodes(&self) -> impl Iterator<Item = LatticeNode> + '_ {
        (0..16).map(LatticeNode::from_index)
    }

    /// Nodes sorted so that every node comes after all nodes below it.
    pub fn topological(&self) -> &[LatticeNode] {
        &self.order
    }

    pub fn bottom(&self) -> LatticeNode {
        RED_TO_RED
    }

    pub fn top(&self) -> LatticeNode {
        SYN_TO_SYN
    }

    /// Strictly-below relation.
    pub fn below(&self, a: LatticeNode, b: LatticeNode) -> bool {
        a != b && a.leq(b)
    }
}

pub fn lattice() -> Lattice {
    let mut order: Vec<LatticeNode> = (0..16).map(LatticeNode::from_index).collect();
    order.sort_by_key(|n| (n.source.height() + n.target.height(), n.index()));
    Lattice { order }
}

/// One value per lattice node, indexed by [`LatticeNode::index`].
pub type NodeValues = [f64; 16];

/// Cumulative informativeness under the minimum-mutual-information
/// convention. `mi(source, target)` is the mutual information between a
/// source collection at `t` and a target collection at `t + lag`.
pub fn cumulative_mmi(mut mi: impl FnMut(Part, Part) -> Result<f64>) -> Result<NodeValues> {
    let mut table = [[0.0; 3]; 3];
    for (i, s) in Part::ALL.into_iter().enumerate() {
        for (j, t) in Part::ALL.into_iter().enumerate() {
            table[i][j] = mi(s, t)?;
        }
    }
    let part_index = |p: Part| Part::ALL.iter().position(|q| *q == p).unwrap();
    let mut cum = [0.0; 16];
    for node in lattice().nodes() {
        cum[node.index()] = node
            .source
            .members()
            .iter()
            .flat_map(|&s| node.target.members().iter().map(move |&t| (s, t)))
            .map(|(s, t)| table[part_index(s)][part_index(t)])
            .fold(f64::INFINITY, f64::min);
    }
    check_monotone(&cum)?;
    Ok(cum)
}

fn check_monotone(cum: &NodeValues) -> Result<()> {
    let lat = lattice();
    for a in lat.nodes() {
        for b in lat.nodes() {
            if lat.below(a, b) && cum[a.index()] > cum[b.index()] + MONOTONICITY_TOLERANCE {
                return Err(Error::Inconsistent(format!(
                    "cumulative {a} = {} exceeds {b} = {}",
                    cum[a.index()],
                    cum[b.index()]
                )));
            }
        }
    }
    Ok(())
}

/// Atom values for each node. Units follow the estimator: nats on the
/// Gaussian path, bits on the discrete path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhidAtoms {
    pub values: NodeValues,
    /// Set when an input series had no variance; all values are then zero.
    pub degenerate: bool,
}

impl PhidAtoms {
    pub fn zero_degenerate() -> Self {
        Self {
            values: [0.0; 16],
            degenerate: true,
        }
    }

    pub fn get(&self, node: LatticeNode) -> f64 {
        self.values[node.index()]
    }

    /// Persistent redundancy, Red→Red.
    pub fn rtr(&self) -> f64 {
        self.get(RED_TO_RED)
    }

    /// Persistent synergy, Syn→Syn.
    pub fn sts(&self) -> f64 {
        self.get(SYN_TO_SYN)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Sum of atoms at or below each node.
    pub fn cumulative(&self) -> NodeValues {
        let lat = lattice();
        let mut cum = [0.0; 16];
        for a in lat.nodes() {
            cum[a.index()] = lat
                .nodes()
                .filter(|b| b.leq(a))
                .map(|b| self.values[b.index()])
                .sum();
        }
        cum
    }

    /// Atoms with the roles of the two parts exchanged.
    pub fn swapped(&self) -> Self {
        let mut values = [0.0; 16];
        for i in 0..16 {
            values[LatticeNode::from_index(i).swapped().index()] = self.values[i];
        }
        Self {
            values,
            degenerate: self.degenerate,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (LatticeNode, f64)> + '_ {
        (0..16).map(|i| (LatticeNode::from_index(i), self.values[i]))
    }
}

/// Möbius inversion of cumulative values over the lattice.
pub fn moebius_atoms(cumulative: &NodeValues) -> PhidAtoms {
    let lat = lattice();
    let mut values = [0.0; 16];
    for &a in lat.topological() {
        let below: f64 = lat
            .topological()
            .iter()
            .filter(|&&b| lat.below(b, a))
            .map(|b| values[b.index()])
            .sum();
        values[a.index()] = cumulative[a.index()] - below;
    }
    PhidAtoms {
        values,
        degenerate: false,
    }
}

/// Decomposition from a 4-variable covariance ordered
/// `(a_t, b_t, a_{t+lag}, b_{t+lag})`, in nats.
pub fn phid_from_covariance(cov: &GaussianCov) -> Result<PhidAtoms> {
    if cov.dim() != 4 {
        return Err(Error::validation(format!(
            "decomposition needs a 4-variable covariance, got {}",
            cov.dim()
        )));
    }
    let cum = cumulative_mmi(|s, t| {
        let target: Vec<usize> = t.indices().iter().map(|i| i + 2).collect();
        gaussian_mi(cov, s.indices(), &target)
    })?;
    Ok(PhidAtoms {
        degenerate: cov.is_degenerate(),
        ..moebius_atoms(&cum)
    })
}

fn has_variance(s: &[f64]) -> bool {
    s.first().is_some_and(|first| s.iter().any(|x| x != first))
}

/// Gaussian decomposition of one pair of series at the given lag. A constant
/// series yields all-zero atoms flagged as degenerate.
pub fn phid_gaussian(a: &[f64], b: &[f64], lag: usize, jitter: f64) -> Result<PhidAtoms> {
    if !has_variance(a) || !has_variance(b) {
        return Ok(PhidAtoms::zero_degenerate());
    }
    phid_from_covariance(&lagged_covariance(a, b, lag, jitter)?)
}

/// Gaussian decomposition of lagged samples pooled across several segments
/// (one per prompt), never pairing samples across segment boundaries.
pub fn phid_gaussian_pooled(
    segments: &[(&[f64], &[f64])],
    lag: usize,
    jitter: f64,
) -> Result<PhidAtoms> {
    let usable: Vec<(&[f64], &[f64])> = segments
        .iter()
        .copied()
        .filter(|(a, b)| has_variance(a) && has_variance(b))
        .collect();
    if usable.is_empty() {
        return Ok(PhidAtoms::zero_degenerate());
    }
    let mut atoms = phid_from_covariance(&lagged_covariance_pooled(&usable, lag, jitter)?)?;
    atoms.degenerate |= usable.len() < segments.len();
    Ok(atoms)
}

/// Decomposition of an exact transition table over
/// `(X¹_t, X²_t, X¹_{t+1}, X²_{t+1})`, in bits.
pub fn phid_discrete(transition: &DiscreteJoint) -> Result<PhidAtoms> {
    if transition.n_vars() != 4 {
        return Err(Error::validation(format!(
            "transition table needs 4 variables, got {}",
            transition.n_vars()
        )));
    }
    let cum = cumulative_mmi(|s, t| {
        let target: Vec<usize> = t.indices().iter().map(|i| i + 2).collect();
        discrete_mi(transition, s.indices(), &target)
    })?;
    Ok(moebius_atoms(&cum))
}
