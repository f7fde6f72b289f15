#![allow(dead_code)]

use mbart::data_io::CutpointGrids;
use mbart::tree::{depth, left_child, right_child, Region, SplitRule, Tree};
use rand::Rng;

/// Random strictly increasing grids with 1..=max_cuts cuts per column.
pub fn random_cuts<R: Rng>(rng: &mut R, p: usize, max_cuts: usize) -> CutpointGrids {
    let grids = (0..p)
        .map(|_| {
            let k = rng.random_range(1..=max_cuts);
            let mut v: Vec<f64> = (0..k).map(|i| i as f64 + rng.random::<f64>() * 0.5).collect();
            v.dedup();
            v
        })
        .collect();
    CutpointGrids::new(grids).unwrap()
}

/// Grows a random tree whose rules are all reachable; leaf means are 0.
pub fn random_tree<R: Rng>(rng: &mut R, n_cuts: &[usize], max_depth: usize, split: f64) -> Tree {
    let p = n_cuts.len();
    let mut tree = Tree::new(0.0);
    let mut stack = vec![(1u64, Region::full(p))];
    while let Some((label, region)) = stack.pop() {
        if depth(label) >= max_depth || rng.random::<f64>() >= split {
            continue;
        }
        let vars: Vec<usize> = (0..p)
            .filter(|&v| !region.admissible_cuts(v, n_cuts[v]).is_empty())
            .collect();
        if vars.is_empty() {
            continue;
        }
        let var = vars[rng.random_range(0..vars.len())];
        let range = region.admissible_cuts(var, n_cuts[var]);
        let cut = rng.random_range(range);
        let rule = SplitRule { var, cut };
        tree.birth(label, rule, 0.0, 0.0).unwrap();
        let (l, r) = region.split(rule);
        stack.push((left_child(label), l));
        stack.push((right_child(label), r));
    }
    tree
}

/// Two-sided one-sample KS statistic of `sample` against `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
