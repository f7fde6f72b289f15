//! Subcommand bodies. Each returns its results as values as well as
//! writing CSVs, so tests can inspect both.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mbart::data_io::{
    load_csv, load_draws, parse_monotone_spec, persist_draws, read_columns, Monotone,
};
use mbart::error::{Error, Result};
use mbart::experiments::{
    sensitivity_design, simulate_1d, simulate_5d, train_test_split, PriorSetting, Simulated,
};
use mbart::inference::{
    conditional_effects, fit, predict, predict_with_level, quantile_grid, rmse,
    sample_combinations, sigma_summary, write_effects, write_predictions, write_sigma_trace,
    DrawSet, Prediction,
};
use mbart::linear::Ols;
use mbart::sampler::ChainStats;
use mbart::stats::substream;
use mbart::{Dataset, Mode};
use rayon::prelude::*;
use serde_json::json;

use crate::{EffectsArgs, FitArgs, ModelArgs, OosArgs, PredictArgs, Sim1dArgs, Sim5dArgs};

pub const DRAW_FILE: &str = "draws.txt";
pub const SIGMA_CSV: &str = "sigma.csv";
pub const MANIFEST: &str = "manifest.json";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const SIM1D_FIT_CSV: &str = "sim1d_fit.csv";
pub const SIM1D_SIGMA_CSV: &str = "sim1d_sigma.csv";
pub const SIM1D_SENSITIVITY_CSV: &str = "sim1d_sensitivity.csv";
pub const SIM5D_CSV: &str = "sim5d_rmse.csv";
pub const OOS_CSV: &str = "oos_rmse.csv";

const MODES: [Mode; 2] = [Mode::Bart, Mode::Mbart];

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn monotone_flag(spec: &str) -> Result<Vec<(String, Monotone)>> {
    parse_monotone_spec(spec).map_err(|e| Error::Input(format!("--monotone: {e}")))
}

/// Writes `rows` under `header` with full-precision numbers.
fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn columns_to_rows(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = cols.first().map_or(0, Vec::len);
    (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

/// Paths written by `fit`.
#[derive(Clone, Debug)]
pub struct FitOutputs {
    pub draw_file: PathBuf,
    pub sigma_csv: PathBuf,
    pub manifest: PathBuf,
    pub stats: ChainStats,
}

pub fn cmd_fit(a: &FitArgs) -> Result<FitOutputs> {
    let spec = monotone_flag(&a.monotone)?;
    let data = load_csv(&a.data, &a.y, &spec)?;
    if a.mode == Mode::Mbart && data.constraint_set().is_empty() {
        return Err(Error::Input(
            "--mode mbart needs at least one constrained column in --monotone".into(),
        ));
    }
    let hp = a.model.hyperparams(&data, a.mode)?;
    let start = Instant::now();
    let (set, stats) = fit(&data, &hp, a.mode, &a.model.chain(0), a.model.max_cuts)?;
    let wall = start.elapsed().as_secs_f64();
    log::info!("fit done in {wall:.2}s, mean leaves {:.3}", stats.mean_leaves);

    ensure_dir(&a.out_dir)?;
    let out = FitOutputs {
        draw_file: a.out_dir.join(DRAW_FILE),
        sigma_csv: a.out_dir.join(SIGMA_CSV),
        manifest: a.out_dir.join(MANIFEST),
        stats: stats.clone(),
    };
    persist_draws(&set, &out.draw_file)?;
    write_sigma_trace(&out.sigma_csv, &sigma_summary(&set))?;
    let manifest = json!({
        "seed": a.model.seed,
        "mode": a.mode.to_string(),
        "flags": {
            "data": a.data.display().to_string(),
            "y": a.y,
            "monotone": a.monotone,
            "m": hp.m, "k": hp.k, "nu": hp.nu, "q": hp.q,
            "alpha": hp.alpha, "beta": hp.beta,
            "burn": a.model.burn, "draws": a.model.draws, "thin": a.model.thin,
            "grid_points": hp.grid_points, "min_leaf": hp.min_leaf, "max_cuts": a.model.max_cuts,
        },
        "wall_time_seconds": wall,
        "mean_tree_size": stats.mean_leaves,
        "acceptance_rate": stats.acceptance_rate(),
        "n_draws": set.len(),
    });
    fs::write(&out.manifest, serde_json::to_string_pretty(&manifest).expect("json") + "\n")
        .map_err(io_err(&out.manifest))?;
    Ok(out)
}

fn read_predictors(set: &DrawSet, path: &Path) -> Result<Vec<Vec<f64>>> {
    Ok(columns_to_rows(&read_columns(path, &set.meta.names)?))
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(Error::Input(format!("--level must lie in (0, 1), got {}", a.level)));
    }
    let set = load_draws(&a.draw_file)?;
    let x = read_predictors(&set, &a.data)?;
    let preds = predict_with_level(&set, &x, a.level)?;
    ensure_dir(&a.out_dir)?;
    write_predictions(&a.out_dir.join(PREDICTIONS_CSV), &preds)
}

pub fn effects_file_name(var: &str) -> String {
    format!("effects_{var}.csv")
}

pub fn cmd_effects(a: &EffectsArgs) -> Result<()> {
    let set = load_draws(&a.draw_file)?;
    let var = set
        .meta
        .names
        .iter()
        .position(|n| *n == a.var)
        .ok_or_else(|| Error::Input(format!("--var `{}` is not a predictor of this model", a.var)))?;
    let x = read_predictors(&set, &a.data)?;
    let column: Vec<f64> = x.iter().map(|r| r[var]).collect();
    let grid = quantile_grid(&column, a.grid_size);
    let mut rng = substream(a.seed, 0);
    let fixed = sample_combinations(&x, a.combinations, &mut rng);
    let curves = conditional_effects(&set, var, &grid, &fixed)?;
    ensure_dir(&a.out_dir)?;
    write_effects(&a.out_dir.join(effects_file_name(&a.var)), &curves)
}

fn fit_simulated(sim: &Simulated, model: &ModelArgs, mode: Mode, stream: u64) -> Result<DrawSet> {
    let data = sim.dataset(mode == Mode::Mbart)?;
    let hp = model.hyperparams(&data, mode)?;
    let (set, stats) = fit(&data, &hp, mode, &model.chain(stream), model.max_cuts)?;
    log::info!("{mode}: acceptance {:.3}, mean leaves {:.3}", stats.acceptance_rate(), stats.mean_leaves);
    Ok(set)
}

fn sort_by_x(x: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a][0].total_cmp(&x[b][0]).then(a.cmp(&b)));
    order
}

/// Per-method fits of the one-dimensional simulation.
#[derive(Clone, Debug)]
pub struct Sim1dOutput {
    pub sim: Simulated,
    /// Row indices of `sim` in ascending x.
    pub order: Vec<usize>,
    pub sets: Vec<(Mode, DrawSet)>,
    pub fits: Vec<(Mode, Vec<Prediction>)>,
    /// (mode, per-row min and max posterior mean over the prior settings).
    pub ranges: Vec<(Mode, Vec<(f64, f64)>)>,
}

pub fn run_sim1d(a: &Sim1dArgs) -> Result<Sim1dOutput> {
    if !(a.noise >= 0.0) || a.n < 2 {
        return Err(Error::Input("sim1d needs n >= 2 and a nonnegative noise level".into()));
    }
    let mut rng = substream(a.model.seed, 0);
    let sim = simulate_1d(a.n, a.noise, &mut rng);
    let order = sort_by_x(&sim.x);
    let sets = MODES
        .par_iter()
        .enumerate()
        .map(|(i, &mode)| fit_simulated(&sim, &a.model, mode, 1 + i as u64).map(|s| (mode, s)))
        .collect::<Result<Vec<_>>>()?;
    let fits = sets
        .iter()
        .map(|(mode, set)| predict(set, &sim.x).map(|p| (*mode, p)))
        .collect::<Result<Vec<_>>>()?;
    let ranges = if a.sensitivity {
        sensitivity_ranges(&sim, &a.model)?
    } else {
        Vec::new()
    };
    Ok(Sim1dOutput { sim, order, sets, fits, ranges })
}

fn sensitivity_ranges(sim: &Simulated, model: &ModelArgs) -> Result<Vec<(Mode, Vec<(f64, f64)>)>> {
    let design = sensitivity_design();
    let tasks: Vec<(usize, Mode, PriorSetting)> = MODES
        .iter()
        .flat_map(|&mode| design.iter().enumerate().map(move |(i, &s)| (i, mode, s)))
        .collect();
    let means = tasks
        .par_iter()
        .map(|&(i, mode, s)| {
            let args = ModelArgs {
                m: s.m,
                k: Some(s.k),
                nu: Some(s.nu),
                q: Some(s.q),
                ..model.clone()
            };
            let stream = 100 + 2 * i as u64 + u64::from(mode == Mode::Mbart);
            let set = fit_simulated(sim, &args, mode, stream)?;
            Ok(predict(&set, &sim.x)?.iter().map(|p| p.mean).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MODES
        .iter()
        .map(|&mode| {
            let rows = (0..sim.x.len())
                .map(|r| {
                    tasks
                        .iter()
                        .zip(&means)
                        .filter(|((_, m, _), _)| *m == mode)
                        .map(|(_, f)| f[r])
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
                })
                .collect();
            (mode, rows)
        })
        .collect())
}

pub fn cmd_sim1d(a: &Sim1dArgs) -> Result<()> {
    let out = run_sim1d(a)?;
    ensure_dir(&a.out_dir)?;
    let sim = &out.sim;
    let fit_rows = out.fits.iter().flat_map(|(mode, preds)| {
        out.order.iter().map(move |&i| {
            vec![
                sim.x[i][0].to_string(),
                sim.y[i].to_string(),
                sim.f[i].to_string(),
                mode.to_string(),
                preds[i].mean.to_string(),
                preds[i].lo.to_string(),
                preds[i].hi.to_string(),
            ]
        })
    });
    write_csv(
        &a.out_dir.join(SIM1D_FIT_CSV),
        &["x", "y", "f", "method", "mean", "lo", "hi"],
        fit_rows,
    )?;
    let sigma_rows = out.sets.iter().flat_map(|(mode, set)| {
        let s = sigma_summary(set);
        s.iterations
            .into_iter()
            .zip(s.sigma)
            .map(move |(it, v)| vec![mode.to_string(), it.to_string(), v.to_string()])
    });
    write_csv(&a.out_dir.join(SIM1D_SIGMA_CSV), &["method", "iteration", "sigma"], sigma_rows)?;
    if a.sensitivity {
        let rows = out.ranges.iter().flat_map(|(mode, ranges)| {
            out.order.iter().enumerate().map(move |(rank, &i)| {
                vec![
                    rank.to_string(),
                    sim.x[i][0].to_string(),
                    sim.f[i].to_string(),
                    mode.to_string(),
                    ranges[i].0.to_string(),
                    ranges[i].1.to_string(),
                ]
            })
        });
        write_csv(
            &a.out_dir.join(SIM1D_SENSITIVITY_CSV),
            &["row", "x", "f", "method", "min", "max"],
            rows,
        )?;
    }
    Ok(())
}

/// One line of the five-dimensional RMSE table.
#[derive(Clone, Debug, PartialEq)]
pub struct RmseRow {
    pub sigma: f64,
    pub replicate: usize,
    pub method: String,
    pub rmse: f64,
}

pub fn run_sim5d(a: &Sim5dArgs) -> Result<Vec<RmseRow>> {
    if a.sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Input("--sigmas must be nonnegative".into()));
    }
    let tasks: Vec<(usize, f64, usize)> = a
        .sigmas
        .iter()
        .enumerate()
        .flat_map(|(si, &s)| (0..a.replicates).map(move |r| (si, s, r)))
        .collect();
    let rows = tasks
        .par_iter()
        .map(|&(si, sigma, rep)| {
            let key = ((si as u64) << 32) | rep as u64;
            let mut rng = substream(a.model.seed, key);
            let train = simulate_5d(a.n_train, sigma, &mut rng);
            let test = simulate_5d(a.n_test, 0.0, &mut rng);
            let mut out = Vec::with_capacity(3);
            for (k, &mode) in MODES.iter().enumerate() {
                let set = fit_simulated(&train, &a.model, mode, (1 << 62) | (key << 1) | k as u64)?;
                let f_hat: Vec<f64> = predict(&set, &test.x)?.iter().map(|p| p.mean).collect();
                out.push(RmseRow { sigma, replicate: rep, method: mode.to_string(), rmse: rmse(&f_hat, &test.f)? });
            }
            if a.oracle {
                out.push(RmseRow { sigma, replicate: rep, method: "oracle".into(), rmse: rmse(&test.f, &test.f)? });
            }
            log::info!("sigma {sigma} replicate {rep} done");
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn write_rmse_rows(path: &Path, rows: &[RmseRow]) -> Result<()> {
    write_csv(
        path,
        &["sigma", "replicate", "method", "rmse"],
        rows.iter().map(|r| {
            vec![r.sigma.to_string(), r.replicate.to_string(), r.method.clone(), r.rmse.to_string()]
        }),
    )
}

pub fn cmd_sim5d(a: &Sim5dArgs) -> Result<()> {
    let rows = run_sim5d(a)?;
    ensure_dir(&a.out_dir)?;
    write_rmse_rows(&a.out_dir.join(SIM5D_CSV), &rows)
}

/// Out-of-sample RMSE of one method on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct OosRow {
    pub replicate: usize,
    pub method: String,
    pub rmse: f64,
}

pub fn run_oos(a: &OosArgs) -> Result<Vec<OosRow>> {
    if !(a.train_frac > 0.0 && a.train_frac < 1.0) {
        return Err(Error::Input("--train-frac must lie in (0, 1)".into()));
    }
    let spec = monotone_flag(&a.monotone)?;
    let data = load_csv(&a.data, &a.y, &spec)?;
    if data.constraint_set().is_empty() {
        return Err(Error::Input("oos compares against mBART and needs --monotone".into()));
    }
    // original-scale columns: undo the sign flips, reread y untouched
    let flipped = data.flipped();
    let x_raw: Vec<Vec<f64>> = data
        .x
        .iter()
        .map(|r| r.iter().zip(&flipped).map(|(&v, &f)| if f { -v } else { v }).collect())
        .collect();
    let y_raw = read_columns(&a.data, &[a.y.clone()])?.remove(0);
    let rows = (0..a.replicates)
        .into_par_iter()
        .map(|rep| oos_replicate(a, &data, &x_raw, &y_raw, rep))
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn oos_replicate(a: &OosArgs, data: &Dataset, x_raw: &[Vec<f64>], y_raw: &[f64], rep: usize) -> Result<Vec<OosRow>> {
    let mut rng = substream(a.model.seed, rep as u64);
    let (train, test) = train_test_split(x_raw.len(), a.train_frac, &mut rng);
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        (idx.iter().map(|&i| x_raw[i].clone()).collect(), idx.iter().map(|&i| y_raw[i]).collect())
    };
    let (x_tr, y_tr) = pick(&train);
    let (x_te, y_te) = pick(&test);
    let mut out = Vec::with_capacity(3);
    let ols = Ols::fit(&x_tr, &y_tr)?;
    let lin: Vec<f64> = x_te.iter().map(|r| ols.predict(r)).collect();
    out.push(OosRow { replicate: rep, method: "linear".into(), rmse: rmse(&lin, &y_te)? });
    let train_set = Dataset::from_raw(x_tr, y_tr, data.names.clone(), data.y_name.clone(), data.monotone.clone())?;
    for (k, &mode) in MODES.iter().enumerate() {
        let hp = a.model.hyperparams(&train_set, mode)?;
        let stream = (1 << 62) | ((rep as u64) << 1) | k as u64;
        let (set, _) = fit(&train_set, &hp, mode, &a.model.chain(stream), a.model.max_cuts)?;
        let f_hat: Vec<f64> = predict(&set, &x_te)?.iter().map(|p| p.mean).collect();
        out.push(OosRow { replicate: rep, method: mode.to_string(), rmse: rmse(&f_hat, &y_te)? });
    }
    Ok(out)
}

pub fn cmd_oos(a: &OosArgs) -> Result<()> {
    let rows = run_oos(a)?;
    ensure_dir(&a.out_dir)?;
    write_csv(
        &a.out_dir.join(OOS_CSV),
        &["replicate", "method", "rmse"],
        rows.iter().map(|r| vec![r.replicate.to_string(), r.method.clone(), r.rmse.to_string()]),
    )
}
