//! Backfitting MCMC over the sum-of-trees model.
//!
//! Each tree is updated against its partial residual by a birth/death
//! Metropolis-Hastings step that integrates out only the leaf means it
//! creates or removes, then every leaf mean is redrawn from its (possibly
//! truncated) full conditional. σ is drawn last.

pub mod marginal;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::constraints::{check_tree_monotone, pair_constraint_with, ConstraintSet, LeafGeometry};
use crate::data_io::CutpointGrids;
use crate::error::{Error, Result};
use crate::inference::Draw;
use crate::priors::{log_birth_prior_ratio, mu_prior, HyperParams};
use crate::stats::{self, substream, ChainRng};
use crate::tree::{
    depth, left_child, parent, right_child, valid_rules, BinnedMatrix, Forest, Node, NodeLabel,
    SplitRule, Tree,
};

pub use marginal::{
    draw_mu_pair, leaf_log_marginal, leaf_log_marginal_constrained, leaf_log_marginal_grid,
    pair_log_marginal_grid, Conjugate, GridSpec, SufficientStats,
};

/// Unconstrained or monotone model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Bart,
    Mbart,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Bart => "bart",
            Mode::Mbart => "mbart",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bart" => Ok(Mode::Bart),
            "mbart" => Ok(Mode::Mbart),
            _ => Err(Error::Input(format!("unknown mode `{s}` (expected bart or mbart)"))),
        }
    }
}

/// Chain length, seeding and optional σ override.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    pub n_burn: usize,
    pub n_draw: usize,
    pub thin: usize,
    pub seed: u64,
    /// Substream of `seed` used by this chain.
    pub stream: u64,
    /// Starting σ; the least-squares residual sd when absent.
    pub sigma_init: Option<f64>,
    /// Keep σ at this value instead of sampling it.
    pub fixed_sigma: Option<f64>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_burn: 500,
            n_draw: 1000,
            thin: 1,
            seed: 0,
            stream: 0,
            sigma_init: None,
            fixed_sigma: None,
        }
    }
}

/// Prepared training predictors in bin form plus the rescaled response.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub x: Vec<Vec<f64>>,
    pub binned: BinnedMatrix,
    pub y: Vec<f64>,
}

impl TrainingData {
    pub fn new(x: &[Vec<f64>], y: Vec<f64>, cuts: &CutpointGrids) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dimension {
                expected: y.len(),
                got: x.len(),
            });
        }
        Ok(TrainingData {
            x: x.to_vec(),
            binned: BinnedMatrix::new(x, cuts)?,
            y,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.binned.n_vars()
    }
}

/// Everything a tree update needs besides the tree itself.
pub struct StepContext<'a> {
    pub data: &'a BinnedMatrix,
    pub hp: &'a HyperParams,
    /// Constraint set in force (empty in unconstrained mode).
    pub s: &'a ConstraintSet,
    pub grid: GridSpec,
}

/// A tree together with the leaf each training row falls in.
#[derive(Clone, Debug)]
pub struct TreeState {
    pub tree: Tree,
    pub leaf_of_row: Vec<NodeLabel>,
}

impl TreeState {
    pub fn root(n: usize, mu: f64) -> Self {
        TreeState {
            tree: Tree::new(mu),
            leaf_of_row: vec![1; n],
        }
    }

    pub fn from_tree(tree: Tree, data: &BinnedMatrix) -> Self {
        let leaf_of_row = (0..data.n_rows()).map(|r| data.leaf_of_row(&tree, r)).collect();
        TreeState { tree, leaf_of_row }
    }

    fn rows_by_leaf(&self) -> BTreeMap<NodeLabel, Vec<usize>> {
        let mut out: BTreeMap<NodeLabel, Vec<usize>> =
            self.tree.leaves().map(|l| (l, Vec::new())).collect();
        for (row, &leaf) in self.leaf_of_row.iter().enumerate() {
            out.get_mut(&leaf).expect("cache names a leaf").push(row);
        }
        out
    }

    /// Writes g(x_i; T, M) for every training row.
    pub fn fill_fit(&self, out: &mut [f64]) {
        let mus: BTreeMap<NodeLabel, f64> = self.tree.leaf_values().collect();
        for (o, leaf) in out.iter_mut().zip(&self.leaf_of_row) {
            *o = mus[leaf];
        }
    }
}

/// Outcome of one structural proposal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    /// No birth or death was possible.
    NoMove,
    Birth { accepted: bool },
    Death { accepted: bool },
}

impl StepOutcome {
    pub fn accepted(&self) -> bool {
        matches!(
            self,
            StepOutcome::Birth { accepted: true } | StepOutcome::Death { accepted: true }
        )
    }
}

fn move_probs(n_birth: usize, n_death: usize) -> (f64, f64) {
    match (n_birth > 0, n_death > 0) {
        (true, true) => (0.5, 0.5),
        (true, false) => (1.0, 0.0),
        (false, true) => (0.0, 1.0),
        (false, false) => (0.0, 0.0),
    }
}

/// Current leaf means in geometry order.
fn leaf_mus(tree: &Tree, geometry: &LeafGeometry) -> Vec<f64> {
    geometry
        .labels
        .iter()
        .map(|&l| tree.leaf_mu(l).expect("leaf"))
        .collect()
}

/// One birth-or-death proposal for a single tree against residual `r`.
pub fn mh_step_tree<R: Rng + ?Sized>(
    ctx: &StepContext<'_>,
    state: &mut TreeState,
    r: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let hp = ctx.hp;
    let p = ctx.data.n_vars();
    let n_cuts = ctx.data.n_cuts();
    let rows = state.rows_by_leaf();
    let birth_cands: Vec<(NodeLabel, crate::tree::ValidRules)> = rows
        .iter()
        .filter(|(&l, _)| depth(l) < hp.max_depth)
        .filter_map(|(&l, rs)| {
            let region = state.tree.node_region(l, p).expect("leaf");
            let rules = valid_rules(&region, rs, ctx.data, hp.min_leaf);
            (!rules.is_empty()).then_some((l, rules))
        })
        .collect();
    let death_cands = state.tree.death_eligible_nodes();
    let (pb, pd) = move_probs(birth_cands.len(), death_cands.len());
    if pb == 0.0 && pd == 0.0 {
        return Ok(StepOutcome::NoMove);
    }
    let geometry = LeafGeometry::new(&state.tree, p, ctx.s)?;
    let mus = leaf_mus(&state.tree, &geometry);
    let grid = ctx.grid;

    if rng.random::<f64>() < pb {
        // birth
        let (leaf, rules) = &birth_cands[rng.random_range(0..birth_cands.len())];
        let leaf = *leaf;
        let (var, cuts) = &rules.by_var[rng.random_range(0..rules.n_vars())];
        let cut = cuts[rng.random_range(0..cuts.len())];
        let rule = SplitRule { var: *var, cut };
        let leaf_rows = &rows[&leaf];
        let col = ctx.data.column(rule.var);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            leaf_rows.iter().partition(|&&i| col[i] as usize <= cut);

        let region = state.tree.node_region(leaf, p)?;
        let (lr, rr) = region.split(rule);
        let d = depth(leaf);
        let child_ok = |reg: &crate::tree::Region, rs: &[usize]| {
            d + 1 < hp.max_depth && !valid_rules(reg, rs, ctx.data, hp.min_leaf).is_empty()
        };
        let n_birth_star = birth_cands.len() - 1
            + usize::from(child_ok(&lr, &left_rows))
            + usize::from(child_ok(&rr, &right_rows));
        let parent_was_nog = leaf != 1 && death_cands.contains(&parent(leaf));
        let n_death_star = death_cands.len() - usize::from(parent_was_nog) + 1;
        let (_, pd_star) = move_probs(n_birth_star, n_death_star);
        let log_q = (pd_star / n_death_star as f64).ln()
            - (pb / (birth_cands.len() * rules.n_vars() * cuts.len()) as f64).ln();
        let log_prior = log_birth_prior_ratio(d, &region, n_cuts, rule.var, hp);

        let stats_old = SufficientStats::from_rows(r, leaf_rows);
        let stats_l = SufficientStats::from_rows(r, &left_rows);
        let stats_r = SufficientStats::from_rows(r, &right_rows);
        let i = geometry.index_of(leaf).expect("leaf");
        let old_iv = geometry.interval(i, &mus);
        let old_prior = mu_prior(geometry.is_constrained(i), hp);
        let log_old = leaf_log_marginal_constrained(&stats_old, old_iv, old_prior, sigma);
        let pc = pair_constraint_with(&geometry, &mus, &region, &[leaf], rule, ctx.s);
        let (prior_l, prior_r) = (mu_prior(pc.left_constrained, hp), mu_prior(pc.right_constrained, hp));
        let log_new = marginal::pair_log_marginal(&stats_l, &stats_r, &pc, prior_l, prior_r, sigma, grid);

        let log_alpha = log_q + log_prior + log_new - log_old;
        let accepted = log_new > f64::NEG_INFINITY && rng.random::<f64>().ln() < log_alpha;
        if accepted {
            let (mu_l, mu_r) = draw_mu_pair(&stats_l, &stats_r, &pc, prior_l, prior_r, sigma, grid, rng)?;
            state.tree.birth(leaf, rule, mu_l, mu_r)?;
            for &row in &left_rows {
                state.leaf_of_row[row] = left_child(leaf);
            }
            for &row in &right_rows {
                state.leaf_of_row[row] = right_child(leaf);
            }
        }
        Ok(StepOutcome::Birth { accepted })
    } else {
        // death
        let node = death_cands[rng.random_range(0..death_cands.len())];
        let rule = match state.tree.node(node) {
            Some(Node::Interior(rule)) => *rule,
            _ => unreachable!("death candidates are interior"),
        };
        let (l, rgt) = (left_child(node), right_child(node));
        let left_rows = &rows[&l];
        let right_rows = &rows[&rgt];
        let mut merged: Vec<usize> = left_rows.iter().chain(right_rows).copied().collect();
        merged.sort_unstable();
        let region = state.tree.node_region(node, p)?;
        let reverse_rules = valid_rules(&region, &merged, ctx.data, hp.min_leaf);
        if !reverse_rules.contains(rule) {
            return Ok(StepOutcome::Death { accepted: false });
        }
        let in_birth = |x: NodeLabel| birth_cands.iter().any(|(b, _)| *b == x);
        let n_birth_star = birth_cands.len() - usize::from(in_birth(l)) - usize::from(in_birth(rgt)) + 1;
        let sibling_leaf = node != 1 && state.tree.is_leaf(node ^ 1);
        let n_death_star = death_cands.len() - 1 + usize::from(sibling_leaf);
        let (pb_star, _) = move_probs(n_birth_star, n_death_star);
        let log_q = (pb_star
            / (n_birth_star * reverse_rules.n_vars() * reverse_rules.n_cuts(rule.var)) as f64)
            .ln()
            - (pd / death_cands.len() as f64).ln();
        let log_prior = -log_birth_prior_ratio(depth(node), &region, n_cuts, rule.var, hp);

        let stats_l = SufficientStats::from_rows(r, left_rows);
        let stats_r = SufficientStats::from_rows(r, right_rows);
        let stats_new = stats_l.merge(&stats_r);
        let pc = pair_constraint_with(&geometry, &mus, &region, &[l, rgt], rule, ctx.s);
        let (prior_l, prior_r) = (mu_prior(pc.left_constrained, hp), mu_prior(pc.right_constrained, hp));
        let log_old = marginal::pair_log_marginal(&stats_l, &stats_r, &pc, prior_l, prior_r, sigma, grid);
        let (new_iv, new_constrained) = geometry.interval_for(&region, &mus, &[l, rgt], ctx.s);
        let new_prior = mu_prior(new_constrained, hp);
        let log_new = leaf_log_marginal_constrained(&stats_new, new_iv, new_prior, sigma);

        let log_alpha = log_q + log_prior + log_new - log_old;
        let accepted = log_new > f64::NEG_INFINITY && rng.random::<f64>().ln() < log_alpha;
        if accepted {
            let mu = Conjugate::new(&stats_new, new_prior, sigma).draw(new_iv, rng)?;
            state.tree.death(node, mu)?;
            for &row in &merged {
                state.leaf_of_row[row] = node;
            }
        }
        Ok(StepOutcome::Death { accepted })
    }
}

/// Redraws every leaf mean in label order from its full conditional,
/// truncated to the interval set by the current neighbour means.
pub fn refresh_leaf_mus<R: Rng + ?Sized>(
    ctx: &StepContext<'_>,
    state: &mut TreeState,
    r: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<()> {
    let p = ctx.data.n_vars();
    let geometry = LeafGeometry::new(&state.tree, p, ctx.s)?;
    let mut stats = vec![SufficientStats::default(); geometry.labels.len()];
    for (row, &leaf) in state.leaf_of_row.iter().enumerate() {
        let i = geometry.index_of(leaf).expect("cache names a leaf");
        stats[i].push(r[row]);
    }
    let mut mus = leaf_mus(&state.tree, &geometry);
    for i in 0..mus.len() {
        let iv = geometry.interval(i, &mus);
        if !iv.is_feasible() {
            return Err(Error::Invariant(format!(
                "leaf {} has empty interval [{}, {}]",
                geometry.labels[i], iv.lower, iv.upper
            )));
        }
        let prior = mu_prior(geometry.is_constrained(i), ctx.hp);
        mus[i] = Conjugate::new(&stats[i], prior, sigma).draw(iv, rng)?;
    }
    for (&label, &mu) in geometry.labels.iter().zip(&mus) {
        state.tree.set_leaf_mu(label, mu)?;
    }
    debug_assert!(check_tree_monotone(&state.tree, p, ctx.s));
    Ok(())
}

/// σ² = (νλ + Σe²) / χ²_{ν+n}.
pub fn draw_sigma<R: Rng + ?Sized>(residuals: &[f64], hp: &HyperParams, rng: &mut R) -> f64 {
    let ss: f64 = residuals.iter().map(|e| e * e).sum();
    let df = hp.nu + residuals.len() as f64;
    ((hp.nu * hp.lambda + ss) / stats::chi_squared(df, rng)).sqrt()
}

/// Full sampler state between iterations.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub trees: Vec<TreeState>,
    pub sigma: f64,
    /// fits[j][i] = g(x_i; T_j, M_j).
    pub fits: Vec<Vec<f64>>,
    pub total: Vec<f64>,
}

impl ChainState {
    pub fn new(m: usize, n: usize, sigma: f64) -> Self {
        ChainState {
            trees: (0..m).map(|_| TreeState::root(n, 0.0)).collect(),
            sigma,
            fits: vec![vec![0.0; n]; m],
            total: vec![0.0; n],
        }
    }

    pub fn forest(&self) -> Forest {
        Forest {
            trees: self.trees.iter().map(|t| t.tree.clone()).collect(),
        }
    }

    /// r_j = y − Σ_{j' ≠ j} fits[j'].
    pub fn partial_residual(&self, y: &[f64], j: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            y.iter()
                .zip(&self.total)
                .zip(&self.fits[j])
                .map(|((yi, t), f)| yi - (t - f)),
        );
    }

    pub fn recompute_total(&mut self) {
        self.total.iter_mut().for_each(|t| *t = 0.0);
        for fit in &self.fits {
            for (t, f) in self.total.iter_mut().zip(fit) {
                *t += f;
            }
        }
    }
}

/// Acceptance counts and tree sizes collected over a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainStats {
    pub birth_proposed: usize,
    pub birth_accepted: usize,
    pub death_proposed: usize,
    pub death_accepted: usize,
    /// Mean number of leaves per tree over the kept draws.
    pub mean_leaves: f64,
}

impl ChainStats {
    pub fn acceptance_rate(&self) -> f64 {
        let prop = self.birth_proposed + self.death_proposed;
        if prop == 0 {
            0.0
        } else {
            (self.birth_accepted + self.death_accepted) as f64 / prop as f64
        }
    }

    fn record(&mut self, outcome: StepOutcome) {
        match outcome {
            StepOutcome::NoMove => {}
            StepOutcome::Birth { accepted } => {
                self.birth_proposed += 1;
                self.birth_accepted += usize::from(accepted);
            }
            StepOutcome::Death { accepted } => {
                self.death_proposed += 1;
                self.death_accepted += usize::from(accepted);
            }
        }
    }
}

/// Draws kept by a chain plus run statistics.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub draws: Vec<Draw>,
    pub stats: ChainStats,
}

/// Residual sd of a least-squares fit of y on the predictors, falling back
/// to the sd of y when the fit has no residual degrees of freedom.
pub fn sigma_hat(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let p = x.first().map_or(0, Vec::len);
    let naive = stats::sd(y);
    if y.len() <= p + 1 {
        return naive;
    }
    match crate::linear::Ols::fit(x, y) {
        Ok(fit) => {
            let rss: f64 = x
                .iter()
                .zip(y)
                .map(|(row, yi)| {
                    let e = yi - fit.predict(row);
                    e * e
                })
                .sum();
            let s = (rss / (y.len() - fit.rank()) as f64).sqrt();
            if s > 0.0 && s.is_finite() {
                s
            } else {
                naive
            }
        }
        Err(_) => naive,
    }
}

/// Runs the sampler and keeps every `thin`-th post-burn-in state.
pub fn run_chain(
    data: &TrainingData,
    hp: &HyperParams,
    mode: Mode,
    config: &ChainConfig,
    record: impl FnMut(usize, &ChainState),
) -> Result<ChainOutput> {
    hp.validate()?;
    if config.thin == 0 {
        return Err(Error::Input("thin must be at least 1".into()));
    }
    let rng = substream(config.seed, config.stream);
    run_chain_with_rng(data, hp, mode, config, rng, record)
}

fn run_chain_with_rng(
    data: &TrainingData,
    hp: &HyperParams,
    mode: Mode,
    config: &ChainConfig,
    mut rng: ChainRng,
    mut record: impl FnMut(usize, &ChainState),
) -> Result<ChainOutput> {
    let n = data.n();
    let s = match mode {
        Mode::Bart => ConstraintSet::empty(),
        Mode::Mbart => hp.constraints.clone(),
    };
    let ctx = StepContext {
        data: &data.binned,
        hp,
        s: &s,
        grid: GridSpec::new(hp.grid_points)?,
    };
    let sigma0 = match (config.fixed_sigma, config.sigma_init) {
        (Some(s), _) | (None, Some(s)) => s,
        (None, None) => sigma_hat(&data.x, &data.y),
    };
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(Error::Input(format!("initial sigma must be positive, got {sigma0}")));
    }
    let mut state = ChainState::new(hp.m, n, sigma0);
    let mut stats = ChainStats::default();
    let mut draws = Vec::with_capacity(config.n_draw);
    let mut r = Vec::with_capacity(n);
    let mut leaves_total = 0usize;
    let total_iter = config.n_burn + config.n_draw * config.thin;
    for iter in 0..total_iter {
        for j in 0..hp.m {
            state.partial_residual(&data.y, j, &mut r);
            let outcome = mh_step_tree(&ctx, &mut state.trees[j], &r, state.sigma, &mut rng)?;
            stats.record(outcome);
            refresh_leaf_mus(&ctx, &mut state.trees[j], &r, state.sigma, &mut rng)?;
            let old = std::mem::take(&mut state.fits[j]);
            let mut new = old;
            state.trees[j].fill_fit(&mut new);
            // total = r-complement + new fit
            for ((t, ri), (yi, f)) in state.total.iter_mut().zip(&r).zip(data.y.iter().zip(&new)) {
                *t = yi - ri + f;
            }
            state.fits[j] = new;
        }
        state.recompute_total();
        state.sigma = match config.fixed_sigma {
            Some(s) => s,
            None => {
                let resid: Vec<f64> = data.y.iter().zip(&state.total).map(|(y, f)| y - f).collect();
                draw_sigma(&resid, hp, &mut rng)
            }
        };
        if iter >= config.n_burn && (iter - config.n_burn) % config.thin == 0 {
            if mode == Mode::Mbart {
                for (j, t) in state.trees.iter().enumerate() {
                    if !check_tree_monotone(&t.tree, data.p(), &s) {
                        return Err(Error::Invariant(format!(
                            "tree {j} not monotone at iteration {iter}"
                        )));
                    }
                }
            }
            record(iter, &state);
            let forest = state.forest();
            leaves_total += forest.trees.iter().map(Tree::n_leaves).sum::<usize>();
            draws.push(Draw {
                iteration: iter,
                sigma: state.sigma,
                forest,
            });
        }
    }
    if !draws.is_empty() {
        stats.mean_leaves = leaves_total as f64 / (draws.len() * hp.m) as f64;
    }
    log::info!(
        "{mode} chain: {} draws, mean leaves per tree {:.3}, acceptance {:.3}",
        draws.len(),
        stats.mean_leaves,
        stats.acceptance_rate()
    );
    Ok(ChainOutput { draws, stats })
}
