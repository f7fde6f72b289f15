//! Prior specification: tree shape, rule choice, leaf means and σ.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::constraints::{ConstraintSet, LeafGeometry};
use crate::error::{Error, Result};
use crate::sampler::Mode;
use crate::stats::{self, constrained_variance_factor};
use crate::tree::{depth, left_child, right_child, Forest, Node, NodeLabel, Region, Tree, MAX_DEPTH};

/// Every prior hyperparameter of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    pub lambda: f64,
    pub q: f64,
    pub k: f64,
    pub m: usize,
    pub mu_mu: f64,
    pub sigma_mu: f64,
    pub constraints: ConstraintSet,
    /// Smallest number of training rows a proposed leaf may hold.
    pub min_leaf: usize,
    /// Points per dimension of the leaf-mean quadrature grid.
    pub grid_points: usize,
    /// Nodes at this depth are never split.
    pub max_depth: usize,
}

impl HyperParams {
    /// Defaults for the unconstrained model with `m` trees.
    pub fn bart(m: usize) -> Self {
        let mut hp = HyperParams {
            alpha: 0.95,
            beta: 2.0,
            nu: 3.0,
            lambda: 0.0,
            q: 0.90,
            k: 2.0,
            m,
            mu_mu: 0.0,
            sigma_mu: 0.0,
            constraints: ConstraintSet::empty(),
            min_leaf: 5,
            grid_points: 64,
            max_depth: MAX_DEPTH,
        };
        hp.calibrate(1.0).expect("default calibration");
        hp
    }

    /// Defaults for the monotone model; tree-shape parameters compensate
    /// for the unnormalized constrained leaf priors.
    pub fn mbart(m: usize, constraints: ConstraintSet) -> Self {
        HyperParams {
            alpha: 0.25,
            beta: 0.8,
            constraints,
            ..HyperParams::bart(m)
        }
    }

    pub fn for_mode(mode: Mode, m: usize, constraints: ConstraintSet) -> Self {
        match mode {
            Mode::Bart => HyperParams {
                constraints,
                ..HyperParams::bart(m)
            },
            Mode::Mbart => HyperParams::mbart(m, constraints),
        }
    }

    /// Sets `lambda` from (σ̂, ν, q) and the leaf prior from (k, m).
    pub fn calibrate(&mut self, sigma_hat: f64) -> Result<()> {
        self.lambda = calibrate_sigma_prior(sigma_hat, self.nu, self.q)?;
        let (mu_mu, sigma_mu) = calibrate_mu_prior(self.k, self.m);
        self.mu_mu = mu_mu;
        self.sigma_mu = sigma_mu;
        Ok(())
    }

    /// Variance inflation for constrained leaves.
    pub fn c(&self) -> f64 {
        constrained_variance_factor()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Input(format!("hyperparameter {what}")));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be nonnegative");
        }
        if !(self.nu > 0.0 && self.lambda > 0.0) {
            return bad("nu and lambda must be positive");
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad("q must lie in (0, 1)");
        }
        if !(self.k > 0.0 && self.sigma_mu > 0.0) {
            return bad("k and sigma_mu must be positive");
        }
        if self.m == 0 {
            return bad("m must be at least 1");
        }
        if self.min_leaf == 0 {
            return bad("min_leaf must be at least 1");
        }
        if self.grid_points < 8 {
            return bad("grid_points must be at least 8");
        }
        if self.max_depth > MAX_DEPTH {
            return bad("max_depth above the hard cap");
        }
        Ok(())
    }

    pub fn split_prob(&self, d: usize) -> f64 {
        if d >= self.max_depth {
            0.0
        } else {
            split_prob(d, self.alpha, self.beta)
        }
    }
}

/// α(1 + d)^(−β).
pub fn split_prob(depth: usize, alpha: f64, beta: f64) -> f64 {
    alpha * (1.0 + depth as f64).powf(-beta)
}

/// Shape of a tree without rules or means.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TreeShape {
    pub interior: Vec<NodeLabel>,
    pub leaves: Vec<NodeLabel>,
}

impl TreeShape {
    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }
}

/// Draws a skeleton from the depth-dependent splitting process, capped at
/// [`MAX_DEPTH`].
pub fn sample_tree_skeleton<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> TreeShape {
    let mut shape = TreeShape::default();
    let mut stack = vec![1 as NodeLabel];
    while let Some(label) = stack.pop() {
        let d = depth(label);
        let p = if d >= MAX_DEPTH { 0.0 } else { split_prob(d, alpha, beta) };
        if rng.random::<f64>() < p {
            shape.interior.push(label);
            stack.push(right_child(label));
            stack.push(left_child(label));
        } else {
            shape.leaves.push(label);
        }
    }
    shape.interior.sort_unstable();
    shape.leaves.sort_unstable();
    shape
}

/// Marginal σ prior scale: λ with P(σ < σ̂) = q when σ² ~ νλ/χ²_ν.
pub fn calibrate_sigma_prior(sigma_hat: f64, nu: f64, q: f64) -> Result<f64> {
    if !(sigma_hat > 0.0 && sigma_hat.is_finite()) {
        return Err(Error::Input(format!("sigma_hat must be positive, got {sigma_hat}")));
    }
    if !(nu > 0.0 && q > 0.0 && q < 1.0) {
        return Err(Error::Input(format!("invalid (nu, q) = ({nu}, {q})")));
    }
    Ok(sigma_hat * sigma_hat * stats::chi_squared_ppf(nu, 1.0 - q) / nu)
}

/// (μ_μ, σ_μ) for a response rescaled to [−0.5, 0.5].
pub fn calibrate_mu_prior(k: f64, m: usize) -> (f64, f64) {
    (0.0, 0.5 / (k * (m as f64).sqrt()))
}

/// Normal prior of one leaf mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MuPrior {
    pub mean: f64,
    pub var: f64,
}

impl MuPrior {
    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }
}

pub fn mu_prior(is_constrained: bool, hp: &HyperParams) -> MuPrior {
    let var = hp.sigma_mu * hp.sigma_mu;
    MuPrior {
        mean: hp.mu_mu,
        var: if is_constrained { hp.c() * var } else { var },
    }
}

/// Mean of each coordinate of the ordered two-leaf prior (lower, upper).
pub fn ordered_pair_prior_means(hp: &HyperParams) -> (f64, f64) {
    let shift = (hp.c() / std::f64::consts::PI).sqrt() * hp.sigma_mu;
    (hp.mu_mu - shift, hp.mu_mu + shift)
}

/// log probability of the rule stored at `label` given its region.
fn rule_log_prob(tree: &Tree, label: NodeLabel, n_cuts: &[usize]) -> Result<f64> {
    let region = tree.node_region(label, n_cuts.len())?;
    Ok(rule_log_prob_in(&region, n_cuts, tree.node(label)))
}

fn rule_log_prob_in(region: &Region, n_cuts: &[usize], node: Option<&Node>) -> f64 {
    match node {
        Some(Node::Interior(rule)) => log_rule_prob(region, n_cuts, rule.var),
        _ => f64::NEG_INFINITY,
    }
}

/// log probability of choosing `var` and then one particular admissible cut
/// of it, uniformly, inside `region`.
pub fn log_rule_prob(region: &Region, n_cuts: &[usize], var: usize) -> f64 {
    let counts: Vec<usize> = (0..n_cuts.len())
        .map(|v| region.admissible_cuts(v, n_cuts[v]).len())
        .collect();
    let n_vars = counts.iter().filter(|&&c| c > 0).count();
    if counts[var] == 0 {
        return f64::NEG_INFINITY;
    }
    -(n_vars as f64).ln() - (counts[var] as f64).ln()
}

/// log p(T*) − log p(T0) when a leaf at depth `d` with region `region`
/// is split on `var`.
pub fn log_birth_prior_ratio(d: usize, region: &Region, n_cuts: &[usize], var: usize, hp: &HyperParams) -> f64 {
    let ps = hp.split_prob(d);
    let ps_child = hp.split_prob(d + 1);
    ps.ln() + 2.0 * (1.0 - ps_child).ln() - (1.0 - ps).ln() + log_rule_prob(region, n_cuts, var)
}

/// log p(T): splitting probabilities by depth and a uniform rule choice.
pub fn log_tree_prior(tree: &Tree, n_cuts: &[usize], hp: &HyperParams) -> Result<f64> {
    let mut total = 0.0;
    for (&label, node) in tree.nodes() {
        let ps = hp.split_prob(depth(label));
        match node {
            Node::Interior(_) => total += ps.ln() + rule_log_prob(tree, label, n_cuts)?,
            Node::Leaf(_) => total += (1.0 - ps).ln(),
        }
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    Birth(NodeLabel),
    Death(NodeLabel),
}

/// log p(T*) − log p(T0) for trees differing by one birth or death.
pub fn log_tree_prior_ratio(
    t_star: &Tree,
    t0: &Tree,
    mv: Move,
    n_cuts: &[usize],
    hp: &HyperParams,
) -> Result<f64> {
    let (small, big, label, sign) = match mv {
        Move::Birth(l) => (t0, t_star, l, 1.0),
        Move::Death(l) => (t_star, t0, l, -1.0),
    };
    check_one_split(small, big, label)?;
    let region = big.node_region(label, n_cuts.len())?;
    let var = match big.node(label) {
        Some(Node::Interior(rule)) => rule.var,
        _ => unreachable!("checked above"),
    };
    Ok(sign * log_birth_prior_ratio(depth(label), &region, n_cuts, var, hp))
}

fn check_one_split(small: &Tree, big: &Tree, label: NodeLabel) -> Result<()> {
    let bad = || Error::Structure(format!("trees are not related by a split at node {label}"));
    if !small.is_leaf(label) || !big.is_leaf(left_child(label)) || !big.is_leaf(right_child(label)) {
        return Err(bad());
    }
    if !matches!(big.node(label), Some(Node::Interior(_))) {
        return Err(bad());
    }
    let (l, r) = (left_child(label), right_child(label));
    let same_structure = small.nodes().len() + 2 == big.nodes().len()
        && small.nodes().iter().all(|(&k, node)| {
            k == label
                || match (node, big.node(k)) {
                    (Node::Interior(a), Some(Node::Interior(b))) => a == b,
                    (Node::Leaf(_), Some(Node::Leaf(_))) => true,
                    _ => false,
                }
        })
        && big.nodes().keys().all(|&k| k == l || k == r || small.node(k).is_some());
    if same_structure {
        Ok(())
    } else {
        Err(bad())
    }
}

/// log density of σ under σ² ~ νλ/χ²_ν.
pub fn log_sigma_prior(sigma: f64, hp: &HyperParams) -> f64 {
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let half_nu = 0.5 * hp.nu;
    let s2 = sigma * sigma;
    half_nu * (half_nu * hp.lambda).ln() - ln_gamma(half_nu) - (half_nu + 1.0) * s2.ln()
        - half_nu * hp.lambda / s2
        + (2.0 * sigma).ln()
}

/// log p(M | T) with the constrained normalizer fixed at one: independent
/// normal densities (inflated where a leaf has neighbours) restricted to
/// monotone configurations.
pub fn log_leaf_prior(tree: &Tree, p: usize, hp: &HyperParams, mode: Mode) -> Result<f64> {
    let s = match mode {
        Mode::Bart => ConstraintSet::empty(),
        Mode::Mbart => hp.constraints.clone(),
    };
    let geometry = LeafGeometry::new(tree, p, &s)?;
    let mus: Vec<f64> = geometry
        .labels
        .iter()
        .map(|&l| tree.leaf_mu(l).expect("leaf"))
        .collect();
    let mut total = 0.0;
    for (i, &mu) in mus.iter().enumerate() {
        if !geometry.interval(i, &mus).contains(mu) {
            return Ok(f64::NEG_INFINITY);
        }
        let prior = mu_prior(geometry.is_constrained(i), hp);
        total += stats::norm_logpdf(mu, prior.mean, prior.var);
    }
    Ok(total)
}

/// Σ_j [log p(M_j | T_j) + log p(T_j)] + log p(σ).
pub fn log_joint_prior(
    forest: &Forest,
    sigma: f64,
    n_cuts: &[usize],
    hp: &HyperParams,
    mode: Mode,
) -> Result<f64> {
    let mut total = log_sigma_prior(sigma, hp);
    for tree in &forest.trees {
        total += log_leaf_prior(tree, n_cuts.len(), hp, mode)? + log_tree_prior(tree, n_cuts, hp)?;
    }
    Ok(total)
}
