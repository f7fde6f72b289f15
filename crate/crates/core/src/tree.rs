//! Binary regression trees.
//!
//! Nodes are addressed with the usual heap labelling: the root is `1` and an
//! interior node `j` has children `2j` (left) and `2j + 1` (right). Split
//! rules refer to cutpoints by index into a per-predictor grid, so trees
//! carry no floating point thresholds of their own.
//!
//! Routing convention: an observation goes left iff `x[var] <= cuts[var][cut]`.
//! In bin space (the number of cutpoints strictly below `x`) this is
//! `bin <= cut`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data_io::CutpointGrids;
use crate::error::{Error, Result};

pub type NodeLabel = u64;

/// Hard cap on node depth used by the prior, the skeleton sampler and the
/// proposal machinery.
pub const MAX_DEPTH: usize = 20;

pub fn parent(label: NodeLabel) -> NodeLabel {
    label / 2
}

pub fn depth(label: NodeLabel) -> usize {
    debug_assert!(label >= 1);
    (63 - label.leading_zeros()) as usize
}

pub fn left_child(label: NodeLabel) -> NodeLabel {
    2 * label
}

pub fn right_child(label: NodeLabel) -> NodeLabel {
    2 * label + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SplitRule {
    pub var: usize,
    pub cut: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Node {
    Interior(SplitRule),
    Leaf(f64),
}

/// Sentinel for an unbounded lower edge.
pub const NEG_INF: i64 = i64::MIN;
/// Sentinel for an unbounded upper edge.
pub const POS_INF: i64 = i64::MAX;

/// Axis-aligned box in cutpoint-index space.
///
/// Coordinate `i` covers the bins strictly above `lower[i]` and up to and
/// including `upper[i]`: the left child of a split at cut `c` gets
/// `upper = c`, the right child gets `lower = c`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub lower: Vec<i64>,
    pub upper: Vec<i64>,
}

impl Region {
    pub fn full(p: usize) -> Self {
        Region {
            lower: vec![NEG_INF; p],
            upper: vec![POS_INF; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Whether an observation with the given bins falls inside.
    pub fn contains_bins(&self, bins: &[usize]) -> bool {
        bins.iter().enumerate().all(|(i, &b)| {
            let b = b as i64;
            self.lower[i] < b && b <= self.upper[i]
        })
    }

    /// Cut indices on `var` that split this region into two non-empty parts.
    pub fn admissible_cuts(&self, var: usize, n_cuts: usize) -> std::ops::Range<usize> {
        if n_cuts == 0 {
            return 0..0;
        }
        let lo = if self.lower[var] == NEG_INF {
            0
        } else {
            (self.lower[var] + 1).max(0)
        };
        let hi = if self.upper[var] == POS_INF {
            n_cuts as i64
        } else {
            self.upper[var].min(n_cuts as i64)
        };
        if hi <= lo {
            0..0
        } else {
            lo as usize..hi as usize
        }
    }

    pub fn split(&self, rule: SplitRule) -> (Region, Region) {
        let c = rule.cut as i64;
        let mut left = self.clone();
        let mut right = self.clone();
        left.upper[rule.var] = left.upper[rule.var].min(c);
        right.lower[rule.var] = right.lower[rule.var].max(c);
        (left, right)
    }
}

/// A regression tree stored as a sparse label -> node map.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: BTreeMap<NodeLabel, Node>,
}

impl Default for Tree {
    fn default() -> Self {
        Tree::new(0.0)
    }
}

impl Tree {
    /// Root-only tree.
    pub fn new(mu: f64) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(1, Node::Leaf(mu));
        Tree { nodes }
    }

    /// Builds a tree from raw nodes, checking the structural invariants.
    pub fn from_nodes(nodes: BTreeMap<NodeLabel, Node>) -> Result<Self> {
        let tree = Tree { nodes };
        tree.check_structure()?;
        Ok(tree)
    }

    pub fn nodes(&self) -> &BTreeMap<NodeLabel, Node> {
        &self.nodes
    }

    pub fn node(&self, label: NodeLabel) -> Option<&Node> {
        self.nodes.get(&label)
    }

    pub fn is_leaf(&self, label: NodeLabel) -> bool {
        matches!(self.nodes.get(&label), Some(Node::Leaf(_)))
    }

    pub fn leaf_mu(&self, label: NodeLabel) -> Option<f64> {
        match self.nodes.get(&label) {
            Some(Node::Leaf(mu)) => Some(*mu),
            _ => None,
        }
    }

    pub fn set_leaf_mu(&mut self, label: NodeLabel, mu: f64) -> Result<()> {
        match self.nodes.get_mut(&label) {
            Some(Node::Leaf(m)) => {
                *m = mu;
                Ok(())
            }
            _ => Err(Error::Structure(format!("node {label} is not a leaf"))),
        }
    }

    /// Leaf labels in increasing order.
    pub fn leaves(&self) -> impl Iterator<Item = NodeLabel> + '_ {
        self.nodes.iter().filter_map(|(&l, n)| match n {
            Node::Leaf(_) => Some(l),
            Node::Interior(_) => None,
        })
    }

    /// `(label, mu)` for each leaf in label order.
    pub fn leaf_values(&self) -> impl Iterator<Item = (NodeLabel, f64)> + '_ {
        self.nodes.iter().filter_map(|(&l, n)| match n {
            Node::Leaf(mu) => Some((l, *mu)),
            Node::Interior(_) => None,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    pub fn interior(&self) -> impl Iterator<Item = (NodeLabel, SplitRule)> + '_ {
        self.nodes.iter().filter_map(|(&l, n)| match n {
            Node::Interior(r) => Some((l, *r)),
            Node::Leaf(_) => None,
        })
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.keys().map(|&l| depth(l)).max().unwrap_or(0)
    }

    /// Follows split rules using an accessor returning the bin of `var`.
    pub fn route_bins(&self, bin_of: impl Fn(usize) -> usize) -> NodeLabel {
        let mut label = 1;
        loop {
            match self.nodes.get(&label) {
                Some(Node::Interior(rule)) => {
                    label = if bin_of(rule.var) <= rule.cut {
                        left_child(label)
                    } else {
                        right_child(label)
                    };
                }
                Some(Node::Leaf(_)) => return label,
                None => unreachable!("tree invariant: interior node without children"),
            }
        }
    }

    /// Leaf label reached by a real-valued observation.
    pub fn route(&self, cuts: &CutpointGrids, x: &[f64]) -> Result<NodeLabel> {
        if x.len() != cuts.dim() {
            return Err(Error::Dimension {
                expected: cuts.dim(),
                got: x.len(),
            });
        }
        let mut label = 1;
        loop {
            match self.nodes.get(&label) {
                Some(Node::Interior(rule)) => {
                    let cut_value = cuts.value(rule.var, rule.cut).ok_or_else(|| {
                        Error::Structure(format!(
                            "node {label}: cut {} out of range for variable {}",
                            rule.cut, rule.var
                        ))
                    })?;
                    label = if x[rule.var] <= cut_value {
                        left_child(label)
                    } else {
                        right_child(label)
                    };
                }
                Some(Node::Leaf(_)) => return Ok(label),
                None => {
                    return Err(Error::Structure(format!("missing node {label}")));
                }
            }
        }
    }

    /// Region of any node (interior or leaf).
    pub fn node_region(&self, label: NodeLabel, p: usize) -> Result<Region> {
        if !self.nodes.contains_key(&label) {
            return Err(Error::Structure(format!("node {label} not present")));
        }
        let mut region = Region::full(p);
        let mut child = label;
        while child > 1 {
            let par = parent(child);
            let rule = match self.nodes.get(&par) {
                Some(Node::Interior(rule)) => *rule,
                _ => return Err(Error::Structure(format!("node {par} is not interior"))),
            };
            if rule.var >= p {
                return Err(Error::Dimension {
                    expected: p,
                    got: rule.var + 1,
                });
            }
            let c = rule.cut as i64;
            if child % 2 == 0 {
                region.upper[rule.var] = region.upper[rule.var].min(c);
            } else {
                region.lower[rule.var] = region.lower[rule.var].max(c);
            }
            child = par;
        }
        Ok(region)
    }

    /// Nodes whose two children are both leaves.
    pub fn death_eligible_nodes(&self) -> Vec<NodeLabel> {
        self.interior()
            .filter(|&(l, _)| self.is_leaf(left_child(l)) && self.is_leaf(right_child(l)))
            .map(|(l, _)| l)
            .collect()
    }

    /// Turns leaf `label` into an interior node with two new leaves.
    pub fn birth(&mut self, label: NodeLabel, rule: SplitRule, mu_left: f64, mu_right: f64) -> Result<()> {
        if !self.is_leaf(label) {
            return Err(Error::Structure(format!("birth at non-leaf {label}")));
        }
        if depth(label) + 1 > MAX_DEPTH {
            return Err(Error::Structure(format!("birth at {label} exceeds depth cap")));
        }
        self.nodes.insert(label, Node::Interior(rule));
        self.nodes.insert(left_child(label), Node::Leaf(mu_left));
        self.nodes.insert(right_child(label), Node::Leaf(mu_right));
        Ok(())
    }

    /// Collapses interior node `label` (whose children must both be leaves).
    /// Returns the removed rule.
    pub fn death(&mut self, label: NodeLabel, mu: f64) -> Result<SplitRule> {
        let rule = match self.nodes.get(&label) {
            Some(Node::Interior(rule)) => *rule,
            _ => return Err(Error::Structure(format!("death at non-interior {label}"))),
        };
        if !(self.is_leaf(left_child(label)) && self.is_leaf(right_child(label))) {
            return Err(Error::Structure(format!(
                "death at {label}: children are not both leaves"
            )));
        }
        self.nodes.remove(&left_child(label));
        self.nodes.remove(&right_child(label));
        self.nodes.insert(label, Node::Leaf(mu));
        Ok(rule)
    }

    fn check_structure(&self) -> Result<()> {
        if !self.nodes.contains_key(&1) {
            return Err(Error::Structure("root missing".into()));
        }
        for (&label, node) in &self.nodes {
            if label == 0 {
                return Err(Error::Structure("label 0 is not valid".into()));
            }
            if label > 1 {
                match self.nodes.get(&parent(label)) {
                    Some(Node::Interior(_)) => {}
                    _ => {
                        return Err(Error::Structure(format!(
                            "node {label} has no interior parent"
                        )))
                    }
                }
            }
            let has_l = self.nodes.contains_key(&left_child(label));
            let has_r = self.nodes.contains_key(&right_child(label));
            match node {
                Node::Interior(_) if !(has_l && has_r) => {
                    return Err(Error::Structure(format!(
                        "interior node {label} lacks a child"
                    )))
                }
                Node::Leaf(_) if has_l || has_r => {
                    return Err(Error::Structure(format!("leaf {label} has children")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Full check including cut ranges and reachability of every rule.
    pub fn validate(&self, n_cuts: &[usize]) -> Result<()> {
        self.check_structure()?;
        let p = n_cuts.len();
        for (label, rule) in self.interior() {
            if rule.var >= p {
                return Err(Error::Structure(format!(
                    "node {label}: variable {} out of range",
                    rule.var
                )));
            }
            let region = self.node_region(label, p)?;
            if !region
                .admissible_cuts(rule.var, n_cuts[rule.var])
                .contains(&rule.cut)
            {
                return Err(Error::Structure(format!(
                    "node {label}: rule {:?} unreachable inside its region",
                    rule
                )));
            }
        }
        Ok(())
    }

    /// One line per node: `label var cut` or `label leaf mu`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (label, node) in &self.nodes {
            match node {
                Node::Interior(r) => writeln!(out, "{label} {} {}", r.var, r.cut).unwrap(),
                Node::Leaf(mu) => writeln!(out, "{label} leaf {mu:?}").unwrap(),
            }
        }
        out
    }

    /// Parses the output of [`Tree::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut nodes = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (label, node) = parse_node_line(line)?;
            if nodes.insert(label, node).is_some() {
                return Err(Error::Structure(format!("duplicate node {label}")));
            }
        }
        Tree::from_nodes(nodes)
    }
}

pub(crate) fn parse_node_line(line: &str) -> Result<(NodeLabel, Node)> {
    let bad = || Error::Structure(format!("malformed node line `{line}`"));
    let mut parts = line.split_whitespace();
    let label: NodeLabel = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let second = parts.next().ok_or_else(bad)?;
    let third = parts.next().ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    let node = if second == "leaf" {
        Node::Leaf(third.parse().map_err(|_| bad())?)
    } else {
        Node::Interior(SplitRule {
            var: second.parse().map_err(|_| bad())?,
            cut: third.parse().map_err(|_| bad())?,
        })
    };
    Ok((label, node))
}

/// g(x; T, M).
pub fn evaluate_tree(tree: &Tree, cuts: &CutpointGrids, x: &[f64]) -> Result<f64> {
    let label = tree.route(cuts, x)?;
    Ok(tree.leaf_mu(label).expect("route ends at a leaf"))
}

/// Sum-of-trees ensemble.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn new(m: usize) -> Self {
        Forest {
            trees: vec![Tree::new(0.0); m],
        }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn mean_leaves(&self) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(Tree::n_leaves).sum::<usize>() as f64 / self.trees.len() as f64
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let m = self.trees.len();
        for (j, tree) in self.trees.iter().enumerate() {
            writeln!(out, "tree {} of {m}", j + 1).unwrap();
            out.push_str(&tree.to_text());
        }
        out
    }
}

/// Sum of tree evaluations, noise excluded.
pub fn evaluate_forest(forest: &Forest, cuts: &CutpointGrids, x: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for tree in &forest.trees {
        total += evaluate_tree(tree, cuts, x)?;
    }
    Ok(total)
}

/// Predictor matrix pre-binned against a cutpoint grid. Column-major.
#[derive(Clone, Debug)]
pub struct BinnedMatrix {
    n: usize,
    bins: Vec<Vec<u32>>,
    n_cuts: Vec<usize>,
}

impl BinnedMatrix {
    pub fn new(rows: &[Vec<f64>], cuts: &CutpointGrids) -> Result<Self> {
        let p = cuts.dim();
        let mut bins = vec![Vec::with_capacity(rows.len()); p];
        for row in rows {
            if row.len() != p {
                return Err(Error::Dimension {
                    expected: p,
                    got: row.len(),
                });
            }
            for (v, &x) in row.iter().enumerate() {
                bins[v].push(cuts.bin(v, x) as u32);
            }
        }
        Ok(BinnedMatrix {
            n: rows.len(),
            bins,
            n_cuts: cuts.counts(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_vars(&self) -> usize {
        self.n_cuts.len()
    }

    pub fn n_cuts(&self) -> &[usize] {
        &self.n_cuts
    }

    #[inline]
    pub fn bin(&self, row: usize, var: usize) -> usize {
        self.bins[var][row] as usize
    }

    pub fn column(&self, var: usize) -> &[u32] {
        &self.bins[var]
    }

    pub fn leaf_of_row(&self, tree: &Tree, row: usize) -> NodeLabel {
        tree.route_bins(|v| self.bin(row, v))
    }
}

/// Rows reaching each leaf. Every leaf has an entry, possibly empty.
pub fn assign_rows(tree: &Tree, data: &BinnedMatrix) -> BTreeMap<NodeLabel, Vec<usize>> {
    let mut out: BTreeMap<NodeLabel, Vec<usize>> = tree.leaves().map(|l| (l, Vec::new())).collect();
    for row in 0..data.n_rows() {
        let leaf = data.leaf_of_row(tree, row);
        out.get_mut(&leaf).expect("leaf present").push(row);
    }
    out
}

/// Split rules of a leaf that leave at least `min_leaf` rows on each side,
/// grouped by variable. Variables with no valid cut are omitted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidRules {
    pub by_var: Vec<(usize, Vec<usize>)>,
}

impl ValidRules {
    pub fn is_empty(&self) -> bool {
        self.by_var.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.by_var.len()
    }

    pub fn total(&self) -> usize {
        self.by_var.iter().map(|(_, c)| c.len()).sum()
    }

    pub fn contains(&self, rule: SplitRule) -> bool {
        self.by_var
            .iter()
            .any(|(v, cuts)| *v == rule.var && cuts.binary_search(&rule.cut).is_ok())
    }

    /// Number of valid cuts for `var` (0 if the variable is not available).
    pub fn n_cuts(&self, var: usize) -> usize {
        self.by_var
            .iter()
            .find(|(v, _)| *v == var)
            .map_or(0, |(_, c)| c.len())
    }
}

pub fn valid_rules(region: &Region, rows: &[usize], data: &BinnedMatrix, min_leaf: usize) -> ValidRules {
    let min_leaf = min_leaf.max(1);
    let mut out = ValidRules::default();
    if rows.len() < 2 * min_leaf {
        return out;
    }
    let mut hist = Vec::new();
    for var in 0..data.n_vars() {
        let range = region.admissible_cuts(var, data.n_cuts()[var]);
        if range.is_empty() {
            continue;
        }
        hist.clear();
        hist.resize(data.n_cuts()[var] + 1, 0usize);
        let col = data.column(var);
        for &r in rows {
            hist[col[r] as usize] += 1;
        }
        let mut left = hist[..range.start].iter().sum::<usize>();
        let mut cuts = Vec::new();
        for c in range {
            left += hist[c];
            if left >= min_leaf && rows.len() - left >= min_leaf {
                cuts.push(c);
            }
        }
        if !cuts.is_empty() {
            out.by_var.push((var, cuts));
        }
    }
    out
}

/// Leaves below the depth cap with at least one valid split.
pub fn birth_eligible_leaves(
    tree: &Tree,
    data: &BinnedMatrix,
    min_leaf: usize,
    max_depth: usize,
) -> Vec<NodeLabel> {
    let rows = assign_rows(tree, data);
    let p = data.n_vars();
    rows.iter()
        .filter(|(&leaf, _)| depth(leaf) < max_depth.min(MAX_DEPTH))
        .filter(|(&leaf, r)| {
            let region = tree.node_region(leaf, p).expect("leaf present");
            !valid_rules(&region, r, data, min_leaf).is_empty()
        })
        .map(|(&l, _)| l)
        .collect()
}

/// Rows reaching a given node (interior or leaf).
pub fn rows_under(tree: &Tree, label: NodeLabel, data: &BinnedMatrix) -> Result<Vec<usize>> {
    let region = tree.node_region(label, data.n_vars())?;
    let mut bins = vec![0usize; data.n_vars()];
    Ok((0..data.n_rows())
        .filter(|&r| {
            for (v, b) in bins.iter_mut().enumerate() {
                *b = data.bin(r, v);
            }
            region.contains_bins(&bins)
        })
        .collect())
}
