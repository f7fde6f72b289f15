//! Fitting entry point and posterior summaries: predictions with pointwise
//! intervals, conditional-effect curves, σ traces and RMSE.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::data_io::{build_cutpoints, flip_row, CutpointGrids, Dataset, YTransform};
use crate::error::{Error, Result};
use crate::priors::HyperParams;
use crate::sampler::{run_chain, sigma_hat, ChainConfig, ChainStats, Mode, TrainingData};
use crate::stats::{quantile_sorted, mean};
use crate::tree::{evaluate_forest, Forest};

/// Everything needed to interpret stored draws.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawMeta {
    pub mode: Mode,
    pub seed: u64,
    pub hp: HyperParams,
    pub names: Vec<String>,
    pub y_name: String,
    pub y_transform: YTransform,
    /// Columns negated at ingestion.
    pub flipped: Vec<bool>,
    /// Cutpoints on the prepared (flipped) scale.
    pub cuts: CutpointGrids,
}

/// One kept MCMC state; σ on the internal response scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub sigma: f64,
    pub forest: Forest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrawSet {
    pub meta: DrawMeta,
    pub draws: Vec<Draw>,
}

/// Fits the model to a prepared dataset.
pub fn fit(
    data: &Dataset,
    hp: &HyperParams,
    mode: Mode,
    config: &ChainConfig,
    max_cuts: usize,
) -> Result<(DrawSet, ChainStats)> {
    if mode == Mode::Mbart && hp.constraints.is_empty() {
        return Err(Error::Input("monotone mode needs at least one constrained column".into()));
    }
    let cuts = build_cutpoints(data, max_cuts)?;
    let training = TrainingData::new(&data.x, data.y.clone(), &cuts)?;
    let mut config = config.clone();
    if config.sigma_init.is_none() {
        config.sigma_init = Some(sigma_hat(&data.x, &data.y));
    }
    let out = run_chain(&training, hp, mode, &config, |_, _| {})?;
    let set = DrawSet {
        meta: DrawMeta {
            mode,
            seed: config.seed,
            hp: hp.clone(),
            names: data.names.clone(),
            y_name: data.y_name.clone(),
            y_transform: data.y_transform,
            flipped: data.flipped(),
            cuts,
        },
        draws: out.draws,
    };
    Ok((set, out.stats))
}

/// Hyperparameters for `data` with σ̂ from least squares on the prepared data.
pub fn default_hyperparams(data: &Dataset, mode: Mode, m: usize) -> Result<HyperParams> {
    let mut hp = HyperParams::for_mode(mode, m, data.constraint_set());
    hp.calibrate(sigma_hat(&data.x, &data.y))?;
    Ok(hp)
}

impl DrawSet {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// f draws on the original response scale: result[d][i] for draw d at
    /// row i of `x` (given on the original predictor scale).
    pub fn f_draws(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let p = self.meta.names.len();
        let prepared: Vec<Vec<f64>> = x
            .iter()
            .map(|row| {
                if row.len() != p {
                    return Err(Error::Dimension {
                        expected: p,
                        got: row.len(),
                    });
                }
                Ok(flip_row(row, &self.meta.flipped))
            })
            .collect::<Result<_>>()?;
        let t = self.meta.y_transform;
        self.draws
            .iter()
            .map(|d| {
                prepared
                    .iter()
                    .map(|row| evaluate_forest(&d.forest, &self.meta.cuts, row).map(|f| t.invert(f)))
                    .collect()
            })
            .collect()
    }

    /// σ draws on the original response scale.
    pub fn sigma_draws(&self) -> Vec<f64> {
        self.draws
            .iter()
            .map(|d| self.meta.y_transform.invert_sigma(d.sigma))
            .collect()
    }
}

/// Posterior mean and equal-tailed interval at one input row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

pub const DEFAULT_LEVEL: f64 = 0.95;

pub fn predict(set: &DrawSet, x: &[Vec<f64>]) -> Result<Vec<Prediction>> {
    predict_with_level(set, x, DEFAULT_LEVEL)
}

pub fn predict_with_level(set: &DrawSet, x: &[Vec<f64>], level: f64) -> Result<Vec<Prediction>> {
    if set.is_empty() {
        return Err(Error::Input("no draws to summarize".into()));
    }
    let draws = set.f_draws(x)?;
    let tail = 0.5 * (1.0 - level);
    Ok((0..x.len())
        .map(|i| {
            let mut col: Vec<f64> = draws.iter().map(|d| d[i]).collect();
            let m = mean(&col);
            col.sort_by(f64::total_cmp);
            Prediction {
                mean: m,
                lo: quantile_sorted(&col, tail),
                hi: quantile_sorted(&col, 1.0 - tail),
            }
        })
        .collect())
}

/// f traced along one predictor with the others frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectCurve {
    pub var: usize,
    pub grid: Vec<f64>,
    pub fixed: Vec<f64>,
    pub means: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// `n` equally spaced empirical quantiles of `values`, deduplicated.
pub fn quantile_grid(values: &[f64], n: usize) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() || n == 0 {
        return Vec::new();
    }
    let mut g: Vec<f64> = if n == 1 {
        vec![quantile_sorted(&v, 0.5)]
    } else {
        (0..n).map(|k| quantile_sorted(&v, k as f64 / (n - 1) as f64)).collect()
    };
    g.dedup();
    g
}

/// Up to `k` distinct rows drawn without replacement (all rows if fewer).
pub fn sample_combinations<R: Rng + ?Sized>(rows: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    if k >= rows.len() {
        return rows.to_vec();
    }
    let mut idx = sample(rng, rows.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| rows[i].clone()).collect()
}

/// Every combination of the given per-column value lists.
pub fn full_design(levels: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for values in levels {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut row = prefix.clone();
                    row.push(v);
                    row
                })
            })
            .collect();
    }
    out
}

/// One curve per frozen combination; each combination lists every
/// predictor, and the value at `var` is overwritten by the grid.
pub fn conditional_effects(
    set: &DrawSet,
    var: usize,
    grid: &[f64],
    fixed_combinations: &[Vec<f64>],
) -> Result<Vec<EffectCurve>> {
    let p = set.meta.names.len();
    if grid.is_empty() {
        return Err(Error::Input("effect grid is empty".into()));
    }
    if var >= p {
        return Err(Error::Dimension {
            expected: p,
            got: var + 1,
        });
    }
    let mut curves = Vec::with_capacity(fixed_combinations.len());
    for fixed in fixed_combinations {
        if fixed.len() != p {
            return Err(Error::Dimension {
                expected: p,
                got: fixed.len(),
            });
        }
        let design: Vec<Vec<f64>> = grid
            .iter()
            .map(|&g| {
                let mut row = fixed.clone();
                row[var] = g;
                row
            })
            .collect();
        let preds = predict(set, &design)?;
        let curve = EffectCurve {
            var,
            grid: grid.to_vec(),
            fixed: fixed.clone(),
            means: preds.iter().map(|p| p.mean).collect(),
            lo: preds.iter().map(|p| p.lo).collect(),
            hi: preds.iter().map(|p| p.hi).collect(),
        };
        if set.meta.mode == Mode::Mbart && set.meta.hp.constraints.contains(var) {
            let ok = if set.meta.flipped[var] {
                is_monotone(&curve.grid, &curve.means, false)
                    && is_monotone(&curve.grid, &curve.lo, false)
                    && is_monotone(&curve.grid, &curve.hi, false)
            } else {
                is_monotone(&curve.grid, &curve.means, true)
                    && is_monotone(&curve.grid, &curve.lo, true)
                    && is_monotone(&curve.grid, &curve.hi, true)
            };
            if !ok {
                return Err(Error::Invariant(format!(
                    "effect curve for `{}` is not monotone",
                    set.meta.names[var]
                )));
            }
        }
        curves.push(curve);
    }
    Ok(curves)
}

/// Values ordered along an ascending grid (nondecreasing or nonincreasing).
pub fn is_monotone(grid: &[f64], values: &[f64], increasing: bool) -> bool {
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    order.windows(2).all(|w| {
        let (a, b) = (values[w[0]], values[w[1]]);
        if increasing {
            a <= b
        } else {
            a >= b
        }
    })
}

pub fn rmse(f_hat: &[f64], f_true: &[f64]) -> Result<f64> {
    if f_hat.len() != f_true.len() {
        return Err(Error::Dimension {
            expected: f_true.len(),
            got: f_hat.len(),
        });
    }
    if f_hat.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = f_hat.iter().zip(f_true).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / f_hat.len() as f64).sqrt())
}

/// σ trace on the original scale and its mean.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaSummary {
    pub iterations: Vec<usize>,
    pub sigma: Vec<f64>,
    pub mean: f64,
}

pub fn sigma_summary(set: &DrawSet) -> SigmaSummary {
    let sigma = set.sigma_draws();
    SigmaSummary {
        iterations: set.draws.iter().map(|d| d.iteration).collect(),
        mean: mean(&sigma),
        sigma,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })
}

fn finish<W: Write>(path: &Path, mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// `row,mean,lo,hi`
pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["row", "mean", "lo", "hi"]).map_err(csv_err(path))?;
    for (i, p) in preds.iter().enumerate() {
        w.write_record([i.to_string(), p.mean.to_string(), p.lo.to_string(), p.hi.to_string()])
            .map_err(csv_err(path))?;
    }
    finish(path, w)
}

/// `curve,grid,mean,lo,hi`
pub fn write_effects(path: &Path, curves: &[EffectCurve]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["curve", "grid", "mean", "lo", "hi"]).map_err(csv_err(path))?;
    for (c, curve) in curves.iter().enumerate() {
        for k in 0..curve.grid.len() {
            w.write_record([
                c.to_string(),
                curve.grid[k].to_string(),
                curve.means[k].to_string(),
                curve.lo[k].to_string(),
                curve.hi[k].to_string(),
            ])
            .map_err(csv_err(path))?;
        }
    }
    finish(path, w)
}

/// `iteration,sigma`
pub fn write_sigma_trace(path: &Path, summary: &SigmaSummary) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "sigma"]).map_err(csv_err(path))?;
    for (it, s) in summary.iterations.iter().zip(&summary.sigma) {
        w.write_record([it.to_string(), s.to_string()]).map_err(csv_err(path))?;
    }
    finish(path, w)
}
