use std::fs;
use std::path::Path;

use mbart_cli::commands::{
    effects_file_name, run_oos, run_sim1d, run_sim5d, DRAW_FILE, MANIFEST, OOS_CSV, PREDICTIONS_CSV,
    SIGMA_CSV, SIM1D_FIT_CSV, SIM5D_CSV,
};
use mbart_cli::{run, Cli, Command, EXIT_DATA, EXIT_OK, EXIT_USAGE};

use clap::Parser;

fn mbart(args: &[&str]) -> i32 {
    let mut full = vec!["mbart"];
    full.extend_from_slice(args);
    run(full)
}

fn quick() -> Vec<&'static str> {
    vec!["--m", "5", "--burn", "10", "--draws", "20", "--min-leaf", "1"]
}

fn write_toy(dir: &Path) -> String {
    let path = dir.join("toy.csv");
    fs::write(&path, "a,b,y\n1,3,0.5\n2,2,1.5\n3,1,2.0\n").unwrap();
    path.display().to_string()
}

fn write_linear(dir: &Path, n: usize) -> String {
    let path = dir.join("lin.csv");
    let mut body = String::from("u,v,y\n");
    for i in 0..n {
        let u = i as f64 / n as f64;
        let v = ((i * 7) % 13) as f64;
        body.push_str(&format!("{u},{v},{}\n", 2.0 + 3.0 * u - 0.5 * v));
    }
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn fit_on_toy_data_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_toy(dir.path());
    let out = dir.path().join("fit");
    let mut args = vec!["fit", "--data", &data, "--y", "y", "--monotone", "a:inc,b:dec", "--mode", "mbart"];
    let out_s = out.display().to_string();
    args.extend(["--out-dir", &out_s]);
    args.extend(quick());
    assert_eq!(mbart(&args), EXIT_OK);
    for f in [DRAW_FILE, SIGMA_CSV, MANIFEST] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert_eq!(header(&out.join(SIGMA_CSV)), "iteration,sigma");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST)).unwrap()).unwrap();
    for key in ["seed", "flags", "wall_time_seconds", "mean_tree_size"] {
        assert!(manifest.get(key).is_some(), "{key}");
    }

    let pred_dir = dir.path().join("pred").display().to_string();
    let draw_file = out.join(DRAW_FILE).display().to_string();
    assert_eq!(mbart(&["predict", "--draw-file", &draw_file, "--data", &data, "--out-dir", &pred_dir]), EXIT_OK);
    let preds = fs::read_to_string(Path::new(&pred_dir).join(PREDICTIONS_CSV)).unwrap();
    assert_eq!(preds.lines().next().unwrap(), "row,mean,lo,hi");
    assert_eq!(preds.lines().count(), 4);
}

#[test]
fn same_seed_gives_identical_draw_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_linear(dir.path(), 40);
    let mut texts = Vec::new();
    for run_id in ["one", "two"] {
        let out = dir.path().join(run_id).display().to_string();
        let mut args = vec!["fit", "--data", &data, "--y", "y", "--monotone", "u:inc", "--mode", "mbart", "--seed", "11", "--out-dir", &out];
        args.extend(quick());
        assert_eq!(mbart(&args), EXIT_OK);
        texts.push((
            fs::read(Path::new(&out).join(DRAW_FILE)).unwrap(),
            fs::read(Path::new(&out).join(SIGMA_CSV)).unwrap(),
        ));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn bad_invocations_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_toy(dir.path());
    let out = dir.path().display().to_string();
    // monotone mode with nothing constrained
    assert_eq!(mbart(&["fit", "--data", &data, "--y", "y", "--mode", "mbart", "--out-dir", &out]), EXIT_USAGE);
    assert_eq!(mbart(&["fit", "--data", &data]), EXIT_USAGE);
    assert_eq!(mbart(&["fit", "--data", &data, "--y", "y", "--mode", "sideways"]), EXIT_USAGE);
    assert_eq!(mbart(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(mbart(&["fit", "--data", &data, "--y", "nope", "--out-dir", &out]), EXIT_DATA);
    let missing = dir.path().join("missing.csv").display().to_string();
    assert_eq!(mbart(&["fit", "--data", &missing, "--y", "y", "--out-dir", &out]), EXIT_DATA);
    let junk = dir.path().join("junk.txt");
    fs::write(&junk, "not a draw file\n").unwrap();
    let junk = junk.display().to_string();
    assert_eq!(mbart(&["predict", "--draw-file", &junk, "--data", &data, "--out-dir", &out]), EXIT_DATA);
    assert_eq!(mbart(&["--help"]), EXIT_OK);
}

#[test]
fn sim5d_row_accounting_and_oracle() {
    let cli = Cli::try_parse_from([
        "mbart", "sim5d", "--sigmas", ".2,1", "--replicates", "2", "--n-train", "60", "--n-test", "30",
        "--m", "5", "--burn", "5", "--draws", "10", "--oracle",
    ])
    .unwrap();
    let Command::Sim5d(args) = cli.command else { unreachable!() };
    let rows = run_sim5d(&args).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 3);
    let fitted: Vec<_> = rows.iter().filter(|r| r.method != "oracle").collect();
    assert_eq!(fitted.len(), 8);
    assert!(rows.iter().filter(|r| r.method == "oracle").all(|r| r.rmse == 0.0));
    assert!(fitted.iter().all(|r| r.rmse.is_finite() && r.rmse > 0.0));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let argv = ["sim5d", "--sigmas", ".2,1", "--replicates", "2", "--n-train", "60", "--n-test", "30", "--m", "5", "--burn", "5", "--draws", "10", "--out-dir", &out];
    assert_eq!(mbart(&argv), EXIT_OK);
    let body = fs::read_to_string(dir.path().join(SIM5D_CSV)).unwrap();
    assert_eq!(body.lines().next().unwrap(), "sigma,replicate,method,rmse");
    assert_eq!(body.lines().count(), 9);
}

#[test]
fn sim1d_output_is_sorted_by_x() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let argv = ["sim1d", "--n", "50", "--m", "10", "--burn", "20", "--draws", "30", "--out-dir", &out];
    assert_eq!(mbart(&argv), EXIT_OK);
    let mut rdr = csv::Reader::from_path(dir.path().join(SIM1D_FIT_CSV)).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["x", "y", "f", "method", "mean", "lo", "hi"]);
    let recs: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(recs.len(), 100);
    for method in ["bart", "mbart"] {
        let xs: Vec<f64> = recs.iter().filter(|r| &r[3] == method).map(|r| r[0].parse().unwrap()).collect();
        assert_eq!(xs.len(), 50);
        assert!(xs.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn noiseless_cubic_is_recovered() {
    let cli = Cli::try_parse_from([
        "mbart", "sim1d", "--noise", "0", "--m", "200", "--burn", "300", "--draws", "500", "--seed", "3",
    ])
    .unwrap();
    let Command::Sim1d(args) = cli.command else { unreachable!() };
    let out = run_sim1d(&args).unwrap();
    let (_, preds) = out.fits.iter().find(|(m, _)| *m == mbart::Mode::Mbart).unwrap();
    let (mut ss, mut n) = (0.0, 0);
    for (i, row) in out.sim.x.iter().enumerate() {
        if row[0].abs() <= 0.9 {
            ss += (preds[i].mean - out.sim.f[i]).powi(2);
            n += 1;
        }
    }
    let r = (ss / n as f64).sqrt();
    assert!(r < 0.02, "rmse {r}");
}

#[test]
fn oos_accounting_and_exact_linear_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_linear(dir.path(), 40);
    let out = dir.path().display().to_string();
    let cli = Cli::try_parse_from([
        "mbart", "oos", "--data", &data, "--y", "y", "--monotone", "u:inc,v:dec", "--replicates", "3",
        "--m", "5", "--burn", "5", "--draws", "10", "--out-dir", &out,
    ])
    .unwrap();
    let Command::Oos(args) = cli.command else { unreachable!() };
    let rows = run_oos(&args).unwrap();
    assert_eq!(rows.len(), 9);
    for r in rows.iter().filter(|r| r.method == "linear") {
        assert!(r.rmse < 1e-8, "{}", r.rmse);
    }
    mbart_cli::commands::cmd_oos(&args).unwrap();
    assert_eq!(header(&dir.path().join(OOS_CSV)), "replicate,method,rmse");
}

#[test]
fn effects_follow_grid_and_are_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_linear(dir.path(), 60);
    let fit_dir = dir.path().join("fit").display().to_string();
    let mut args = vec!["fit", "--data", &data, "--y", "y", "--monotone", "u:inc,v:dec", "--mode", "mbart", "--out-dir", &fit_dir];
    args.extend(quick());
    assert_eq!(mbart(&args), EXIT_OK);
    let draw_file = Path::new(&fit_dir).join(DRAW_FILE).display().to_string();
    let out = dir.path().display().to_string();
    for var in ["u", "v"] {
        assert_eq!(
            mbart(&["effects", "--draw-file", &draw_file, "--data", &data, "--var", var, "--combinations", "3", "--out-dir", &out]),
            EXIT_OK
        );
        let mut rdr = csv::Reader::from_path(dir.path().join(effects_file_name(var))).unwrap();
        assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["curve", "grid", "mean", "lo", "hi"]);
        let recs: Vec<Vec<f64>> = rdr
            .records()
            .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
            .collect();
        for c in 0..3 {
            let curve: Vec<&Vec<f64>> = recs.iter().filter(|r| r[0] == c as f64).collect();
            assert_eq!(curve.len(), 15);
            assert!(curve.windows(2).all(|w| w[0][1] < w[1][1]));
            let increasing = var == "u";
            assert!(curve.windows(2).all(|w| if increasing { w[0][2] <= w[1][2] } else { w[0][2] >= w[1][2] }));
        }
    }
    assert_eq!(
        mbart(&["effects", "--draw-file", &draw_file, "--data", &data, "--var", "w", "--out-dir", &out]),
        EXIT_USAGE
    );
}
