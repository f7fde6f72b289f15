//! Geometry of monotone trees: separation and neighbour relations between
//! leaf regions, feasibility intervals for leaf means, and whole-tree checks.
//!
//! All comparisons happen on cutpoint indices, so boundary equality is exact.
//!
//! Two adjacency notions live here. [`is_above_neighbor`] is the plain
//! "not separated and sharing a boundary in an S coordinate" relation.
//! [`adjoins_above`] additionally requires the two boxes to overlap with
//! positive width in every other coordinate, i.e. one can actually step
//! from one region into the other by increasing a single S coordinate.
//! The constraint calculus (intervals, checks, pair constraints) uses
//! `adjoins_above`: with it the local conditions are both necessary and
//! sufficient for monotonicity of the step function.

use std::collections::{BTreeMap, BTreeSet};

use crate::data_io::CutpointGrids;
use crate::error::{Error, Result};
use crate::tree::{NodeLabel, Region, SplitRule, Tree, NEG_INF, POS_INF};

/// Predictors in which the fitted function must be nondecreasing.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ConstraintSet {
    vars: BTreeSet<usize>,
}

impl ConstraintSet {
    pub fn new(vars: impl IntoIterator<Item = usize>, p: usize) -> Result<Self> {
        let vars: BTreeSet<usize> = vars.into_iter().collect();
        if let Some(&v) = vars.iter().find(|&&v| v >= p) {
            return Err(Error::Input(format!(
                "constrained variable {v} out of range for {p} predictors"
            )));
        }
        Ok(ConstraintSet { vars })
    }

    pub fn empty() -> Self {
        ConstraintSet::default()
    }

    /// Every one of `p` predictors constrained.
    pub fn all(p: usize) -> Self {
        ConstraintSet {
            vars: (0..p).collect(),
        }
    }

    pub fn contains(&self, var: usize) -> bool {
        self.vars.contains(&var)
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.vars.iter().copied()
    }
}

/// Closed interval with possibly infinite endpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    pub fn new(lower: f64, upper: f64) -> Self {
        Interval { lower, upper }
    }

    pub fn is_feasible(&self) -> bool {
        self.lower <= self.upper
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower == f64::NEG_INFINITY && self.upper == f64::INFINITY
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval {
            lower: self.lower.max(other.lower),
            upper: self.upper.min(other.upper),
        }
    }

    fn into_result(self) -> Result<Interval> {
        if self.is_feasible() {
            Ok(self)
        } else {
            Err(Error::Infeasible {
                lower: self.lower,
                upper: self.upper,
            })
        }
    }
}

fn check_dims(a: &Region, b: &Region) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// Strict gap between the two boxes in some coordinate.
pub fn is_separated(a: &Region, b: &Region) -> Result<bool> {
    check_dims(a, b)?;
    Ok(separated_unchecked(a, b))
}

fn separated_unchecked(a: &Region, b: &Region) -> bool {
    (0..a.dim()).any(|i| a.upper[i] < b.lower[i] || a.lower[i] > b.upper[i])
}

fn finite(v: i64) -> bool {
    v != NEG_INF && v != POS_INF
}

/// `a` is not separated from `b` and its lower edge meets `b`'s upper edge
/// in some coordinate of `s`.
pub fn is_above_neighbor(a: &Region, b: &Region, s: &ConstraintSet) -> Result<bool> {
    check_dims(a, b)?;
    if separated_unchecked(a, b) {
        return Ok(false);
    }
    Ok(s
        .iter()
        .filter(|&i| i < a.dim())
        .any(|i| finite(a.lower[i]) && a.lower[i] == b.upper[i]))
}

/// Mirror of [`is_above_neighbor`].
pub fn is_below_neighbor(a: &Region, b: &Region, s: &ConstraintSet) -> Result<bool> {
    is_above_neighbor(b, a, s)
}

/// `a` sits directly above `b` across a shared face in an S coordinate,
/// overlapping it with positive width in all other coordinates.
pub fn adjoins_above(a: &Region, b: &Region, s: &ConstraintSet) -> bool {
    debug_assert_eq!(a.dim(), b.dim());
    let p = a.dim();
    s.iter().filter(|&i| i < p).any(|i| {
        finite(a.lower[i])
            && a.lower[i] == b.upper[i]
            && (0..p)
                .filter(|&j| j != i)
                .all(|j| a.lower[j] < b.upper[j] && b.lower[j] < a.upper[j])
    })
}

/// Bounds implied on a box by neighbours with known means.
fn interval_against<'a>(
    target: &Region,
    others: impl Iterator<Item = (&'a Region, f64)>,
    s: &ConstraintSet,
) -> (Interval, bool) {
    let mut iv = Interval::UNBOUNDED;
    let mut constrained = false;
    for (region, mu) in others {
        if adjoins_above(region, target, s) {
            iv.upper = iv.upper.min(mu);
            constrained = true;
        }
        if adjoins_above(target, region, s) {
            iv.lower = iv.lower.max(mu);
            constrained = true;
        }
    }
    (iv, constrained)
}

fn leaf_regions(tree: &Tree, p: usize) -> Result<Vec<(NodeLabel, Region)>> {
    tree.leaves()
        .map(|l| tree.node_region(l, p).map(|r| (l, r)))
        .collect()
}

/// Interval for the mean of `target_leaf` implied by the means in
/// `assigned` (leaves missing from the map impose nothing).
pub fn feasible_interval(
    tree: &Tree,
    p: usize,
    assigned: &BTreeMap<NodeLabel, f64>,
    target_leaf: NodeLabel,
    s: &ConstraintSet,
) -> Result<Interval> {
    if !tree.is_leaf(target_leaf) {
        return Err(Error::Structure(format!("{target_leaf} is not a leaf")));
    }
    let regions = leaf_regions(tree, p)?;
    let target = tree.node_region(target_leaf, p)?;
    let others = regions
        .iter()
        .filter(|(l, _)| *l != target_leaf)
        .filter_map(|(l, r)| assigned.get(l).map(|&mu| (r, mu)));
    interval_against(&target, others, s).0.into_result()
}

/// Precomputed leaf regions and adjacency lists of one tree.
#[derive(Clone, Debug)]
pub struct LeafGeometry {
    pub labels: Vec<NodeLabel>,
    pub regions: Vec<Region>,
    /// `above[i]`: leaves directly above leaf i in some S coordinate.
    pub above: Vec<Vec<usize>>,
    pub below: Vec<Vec<usize>>,
}

impl LeafGeometry {
    pub fn new(tree: &Tree, p: usize, s: &ConstraintSet) -> Result<Self> {
        let (labels, regions): (Vec<_>, Vec<_>) = leaf_regions(tree, p)?.into_iter().unzip();
        let k = labels.len();
        let mut above = vec![Vec::new(); k];
        let mut below = vec![Vec::new(); k];
        if !s.is_empty() {
            for i in 0..k {
                for j in 0..k {
                    if i != j && adjoins_above(&regions[j], &regions[i], s) {
                        above[i].push(j);
                        below[j].push(i);
                    }
                }
            }
        }
        Ok(LeafGeometry {
            labels,
            regions,
            above,
            below,
        })
    }

    pub fn index_of(&self, label: NodeLabel) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }

    pub fn is_constrained(&self, i: usize) -> bool {
        !self.above[i].is_empty() || !self.below[i].is_empty()
    }

    /// Interval of leaf `i` given current means `mus` (indexed like `labels`).
    pub fn interval(&self, i: usize, mus: &[f64]) -> Interval {
        let upper = self.above[i]
            .iter()
            .map(|&j| mus[j])
            .fold(f64::INFINITY, f64::min);
        let lower = self.below[i]
            .iter()
            .map(|&j| mus[j])
            .fold(f64::NEG_INFINITY, f64::max);
        Interval { lower, upper }
    }

    /// Interval and constrained flag for an arbitrary box against all
    /// leaves except those listed in `exclude`.
    pub fn interval_for(
        &self,
        region: &Region,
        mus: &[f64],
        exclude: &[NodeLabel],
        s: &ConstraintSet,
    ) -> (Interval, bool) {
        let others = self
            .labels
            .iter()
            .zip(&self.regions)
            .zip(mus)
            .filter(|((l, _), _)| !exclude.contains(l))
            .map(|((_, r), &mu)| (r, mu));
        interval_against(region, others, s)
    }
}

/// Constraint on the two new means created by splitting a leaf.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairConstraint {
    pub left: Interval,
    pub right: Interval,
    /// Whether `mu_left <= mu_right` is required (split variable in S).
    pub ordered: bool,
    pub left_constrained: bool,
    pub right_constrained: bool,
}

impl PairConstraint {
    pub const NONE: PairConstraint = PairConstraint {
        left: Interval::UNBOUNDED,
        right: Interval::UNBOUNDED,
        ordered: false,
        left_constrained: false,
        right_constrained: false,
    };

    pub fn is_feasible(&self) -> bool {
        if !(self.left.is_feasible() && self.right.is_feasible()) {
            return false;
        }
        !self.ordered || self.left.lower <= self.right.upper
    }
}

/// Constraint on `(mu_left, mu_right)` if `birth_leaf` were split by `rule`,
/// conditioning on the means currently stored in every other leaf.
pub fn pair_constraint(
    tree: &Tree,
    p: usize,
    birth_leaf: NodeLabel,
    rule: SplitRule,
    s: &ConstraintSet,
) -> Result<PairConstraint> {
    if !tree.is_leaf(birth_leaf) {
        return Err(Error::Structure(format!("{birth_leaf} is not a leaf")));
    }
    let geometry = LeafGeometry::new(tree, p, s)?;
    let mus: Vec<f64> = geometry
        .labels
        .iter()
        .map(|&l| tree.leaf_mu(l).expect("leaf"))
        .collect();
    let region = tree.node_region(birth_leaf, p)?;
    let pc = pair_constraint_with(&geometry, &mus, &region, &[birth_leaf], rule, s);
    if !pc.is_feasible() {
        return Err(Error::Infeasible {
            lower: pc.left.lower,
            upper: pc.right.upper,
        });
    }
    Ok(pc)
}

pub(crate) fn pair_constraint_with(
    geometry: &LeafGeometry,
    mus: &[f64],
    parent_region: &Region,
    exclude: &[NodeLabel],
    rule: SplitRule,
    s: &ConstraintSet,
) -> PairConstraint {
    let (lr, rr) = parent_region.split(rule);
    let (left, lc) = geometry.interval_for(&lr, mus, exclude, s);
    let (right, rc) = geometry.interval_for(&rr, mus, exclude, s);
    let ordered = s.contains(rule.var);
    PairConstraint {
        left,
        right,
        ordered,
        left_constrained: lc || ordered,
        right_constrained: rc || ordered,
    }
}

/// Every leaf mean lies within the interval implied by all other leaves.
pub fn check_tree_monotone(tree: &Tree, p: usize, s: &ConstraintSet) -> bool {
    if s.is_empty() {
        return true;
    }
    let geometry = match LeafGeometry::new(tree, p, s) {
        Ok(g) => g,
        Err(_) => return false,
    };
    let mus: Vec<f64> = geometry
        .labels
        .iter()
        .map(|&l| tree.leaf_mu(l).expect("leaf"))
        .collect();
    (0..mus.len()).all(|i| geometry.interval(i, &mus).contains(mus[i]))
}

/// Direct lattice check of monotonicity, meant as a test oracle.
///
/// The lattice in each coordinate holds one point inside every cell of the
/// cutpoint grid (so every leaf region is visited), each cutpoint itself,
/// and `grid_density` extra equally spaced points.
pub fn brute_force_monotone(
    tree: &Tree,
    cuts: &CutpointGrids,
    s: &ConstraintSet,
    grid_density: usize,
) -> bool {
    let p = cuts.dim();
    let axes: Vec<Vec<f64>> = (0..p).map(|v| lattice_axis(cuts.values(v), grid_density)).collect();
    let sizes: Vec<usize> = axes.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().product();
    let mut values = vec![0.0; total];
    let mut idx = vec![0usize; p];
    let mut x = vec![0.0; p];
    for (flat, slot) in values.iter_mut().enumerate() {
        unflatten(flat, &sizes, &mut idx);
        for v in 0..p {
            x[v] = axes[v][idx[v]];
        }
        *slot = crate::tree::evaluate_tree(tree, cuts, &x).expect("dimensions match");
    }
    for flat in 0..total {
        unflatten(flat, &sizes, &mut idx);
        for i in s.iter().filter(|&i| i < p) {
            if idx[i] + 1 < sizes[i] {
                let stride: usize = sizes[i + 1..].iter().product();
                if values[flat + stride] < values[flat] {
                    return false;
                }
            }
        }
    }
    true
}

fn unflatten(mut flat: usize, sizes: &[usize], idx: &mut [usize]) {
    for d in (0..sizes.len()).rev() {
        idx[d] = flat % sizes[d];
        flat /= sizes[d];
    }
}

fn lattice_axis(cuts: &[f64], density: usize) -> Vec<f64> {
    let mut pts = Vec::new();
    if cuts.is_empty() {
        pts.push(0.0);
    } else {
        let lo = cuts[0];
        let hi = cuts[cuts.len() - 1];
        let pad = if hi > lo { hi - lo } else { 1.0 };
        pts.push(lo - pad);
        pts.push(hi + pad);
        pts.extend_from_slice(cuts);
        pts.extend(cuts.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        if density > 1 {
            for k in 0..density {
                pts.push(lo - pad + 3.0 * pad * k as f64 / (density - 1) as f64);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}
