//! Dataset ingestion, response rescaling, direction flips, cutpoint grids
//! and the on-disk draw format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::constraints::ConstraintSet;
use crate::error::{DataError, DrawFileError, Error, Result};
use crate::inference::{Draw, DrawMeta, DrawSet};
use crate::priors::HyperParams;
use crate::sampler::Mode;
use crate::tree::{parse_node_line, Forest, Tree};

/// Sorted split values for every predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct CutpointGrids {
    grids: Vec<Vec<f64>>,
}

impl CutpointGrids {
    pub fn new(grids: Vec<Vec<f64>>) -> Result<Self> {
        for (v, g) in grids.iter().enumerate() {
            if g.iter().any(|c| !c.is_finite()) {
                return Err(Error::Input(format!("cutpoints of column {v} must be finite")));
            }
            if g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Input(format!(
                    "cutpoints of column {v} must be strictly increasing"
                )));
            }
        }
        Ok(CutpointGrids { grids })
    }

    pub fn dim(&self) -> usize {
        self.grids.len()
    }

    pub fn values(&self, var: usize) -> &[f64] {
        &self.grids[var]
    }

    pub fn value(&self, var: usize, cut: usize) -> Option<f64> {
        self.grids.get(var)?.get(cut).copied()
    }

    /// Number of cutpoints strictly below `x`; `x` goes left at cut `c`
    /// iff `bin(var, x) <= c`.
    pub fn bin(&self, var: usize, x: f64) -> usize {
        self.grids[var].partition_point(|&c| c < x)
    }

    pub fn counts(&self) -> Vec<usize> {
        self.grids.iter().map(Vec::len).collect()
    }
}

/// Declared direction of a predictor's effect.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Monotone {
    Increasing,
    Decreasing,
    None,
}

/// Parses `col:dir,col:dir` with dir one of `inc`/`increasing`/`+`,
/// `dec`/`decreasing`/`-`, `none`.
pub fn parse_monotone_spec(spec: &str) -> Result<Vec<(String, Monotone)>> {
    let bad = || Error::Data(DataError::BadMonotoneSpec(spec.to_string()));
    let mut out: Vec<(String, Monotone)> = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, dir) = item.rsplit_once(':').ok_or_else(bad)?;
        let dir = match dir.trim().to_ascii_lowercase().as_str() {
            "inc" | "increasing" | "+" => Monotone::Increasing,
            "dec" | "decreasing" | "-" => Monotone::Decreasing,
            "none" => Monotone::None,
            _ => return Err(bad()),
        };
        let name = name.trim().to_string();
        if name.is_empty() || out.iter().any(|(n, _)| *n == name) {
            return Err(bad());
        }
        out.push((name, dir));
    }
    Ok(out)
}

/// Affine map of the response onto [−0.5, 0.5].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YTransform {
    pub center: f64,
    pub scale: f64,
}

impl YTransform {
    pub const IDENTITY: YTransform = YTransform {
        center: 0.0,
        scale: 1.0,
    };

    pub fn from_range(min: f64, max: f64) -> Self {
        YTransform {
            center: 0.5 * (min + max),
            scale: max - min,
        }
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.center) / self.scale
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.scale + self.center
    }

    pub fn invert_sigma(&self, sigma: f64) -> f64 {
        sigma * self.scale
    }
}

/// Prepared training data: decreasing columns negated, response rescaled.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Rows of prepared predictors.
    pub x: Vec<Vec<f64>>,
    /// Prepared response in [−0.5, 0.5].
    pub y: Vec<f64>,
    pub names: Vec<String>,
    pub y_name: String,
    pub monotone: Vec<Monotone>,
    pub y_transform: YTransform,
}

impl Dataset {
    /// Validates raw columns and applies the recorded transforms.
    pub fn from_raw(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        names: Vec<String>,
        y_name: impl Into<String>,
        monotone: Vec<Monotone>,
    ) -> Result<Self> {
        let p = names.len();
        if y.is_empty() {
            return Err(DataError::Empty.into());
        }
        if x.len() != y.len() {
            return Err(Error::Dimension {
                expected: y.len(),
                got: x.len(),
            });
        }
        if monotone.len() != p {
            return Err(Error::Dimension {
                expected: p,
                got: monotone.len(),
            });
        }
        if let Some(row) = x.iter().find(|r| r.len() != p) {
            return Err(Error::Dimension {
                expected: p,
                got: row.len(),
            });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("response row {i} is not finite")));
        }
        let distinct = count_distinct(&y);
        if distinct < 2 {
            return Err(DataError::DegenerateResponse(distinct).into());
        }
        for v in 0..p {
            if monotone[v] != Monotone::None && count_distinct_col(&x, v) < 2 {
                return Err(DataError::ConstantConstrained(names[v].clone()).into());
            }
        }
        let (lo, hi) = y
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let y_transform = YTransform::from_range(lo, hi);
        let mut ds = Dataset {
            x: Vec::new(),
            y: y.iter().map(|&v| y_transform.apply(v)).collect(),
            names,
            y_name: y_name.into(),
            monotone,
            y_transform,
        };
        ds.x = x.iter().map(|r| ds.prepare_row(r)).collect();
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn flipped(&self) -> Vec<bool> {
        self.monotone.iter().map(|&m| m == Monotone::Decreasing).collect()
    }

    /// Indices of all constrained predictors (after flipping, all increasing).
    pub fn constraint_set(&self) -> ConstraintSet {
        ConstraintSet::new(
            (0..self.p()).filter(|&v| self.monotone[v] != Monotone::None),
            self.p(),
        )
        .expect("indices in range")
    }

    /// Applies the column flips to a row given on the original scale.
    pub fn prepare_row(&self, row: &[f64]) -> Vec<f64> {
        flip_row(row, &self.flipped())
    }

    /// Response on the original scale.
    pub fn y_original(&self) -> Vec<f64> {
        self.y.iter().map(|&v| self.y_transform.invert(v)).collect()
    }
}

pub(crate) fn flip_row(row: &[f64], flipped: &[bool]) -> Vec<f64> {
    row.iter()
        .zip(flipped)
        .map(|(&v, &f)| if f { -v } else { v })
        .collect()
}

fn count_distinct(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn count_distinct_col(x: &[Vec<f64>], var: usize) -> usize {
    count_distinct(&x.iter().map(|r| r[var]).collect::<Vec<_>>())
}

/// Reads the named columns of a headed CSV file as numbers.
pub fn read_columns(path: &Path, wanted: &[String]) -> Result<Vec<Vec<f64>>> {
    let (header, records) = read_csv(path)?;
    let index: Vec<usize> = wanted
        .iter()
        .map(|w| {
            header
                .iter()
                .position(|h| h == w)
                .ok_or_else(|| Error::Data(DataError::MissingColumn(w.clone())))
        })
        .collect::<Result<_>>()?;
    let mut cols = vec![Vec::with_capacity(records.len()); wanted.len()];
    for (r, rec) in records.iter().enumerate() {
        for (k, &i) in index.iter().enumerate() {
            let cell = rec.get(i).unwrap_or("").trim();
            let value: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                Error::Data(DataError::NonNumeric {
                    row: r + 1,
                    column: wanted[k].clone(),
                    value: cell.to_string(),
                })
            })?;
            cols[k].push(value);
        }
    }
    Ok(cols)
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
            },
            _ => Error::Data(DataError::Csv(e)),
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(DataError::Csv)?
        .iter()
        .map(str::to_string)
        .collect();
    let records = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(DataError::Csv)?;
    Ok((header, records))
}

/// Loads a training set: every column other than `y_column` is a predictor.
pub fn load_csv(path: &Path, y_column: &str, monotone_spec: &[(String, Monotone)]) -> Result<Dataset> {
    let (header, _) = read_csv(path)?;
    if !header.iter().any(|h| h == y_column) {
        return Err(DataError::MissingColumn(y_column.to_string()).into());
    }
    let names: Vec<String> = header.iter().filter(|h| *h != y_column).cloned().collect();
    let mut monotone = vec![Monotone::None; names.len()];
    for (col, dir) in monotone_spec {
        if col == y_column {
            return Err(DataError::BadMonotoneSpec(format!("`{col}` is the response")).into());
        }
        let v = names
            .iter()
            .position(|n| n == col)
            .ok_or_else(|| Error::Data(DataError::MissingColumn(col.clone())))?;
        monotone[v] = *dir;
    }
    let mut wanted = names.clone();
    wanted.push(y_column.to_string());
    let mut cols = read_columns(path, &wanted)?;
    let y = cols.pop().expect("response column");
    if y.is_empty() {
        return Err(DataError::Empty.into());
    }
    let x: Vec<Vec<f64>> = (0..y.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    Dataset::from_raw(x, y, names, y_column, monotone)
}

/// Split values from the predictors alone: midpoints between consecutive
/// distinct values for low-cardinality columns, else `max_cuts` equally
/// spaced interior points.
pub fn build_cutpoints(data: &Dataset, max_cuts: usize) -> Result<CutpointGrids> {
    if max_cuts == 0 {
        return Err(Error::Input("max_cuts must be at least 1".into()));
    }
    let mut grids = Vec::with_capacity(data.p());
    for v in 0..data.p() {
        let mut vals: Vec<f64> = data.x.iter().map(|r| r[v]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        if vals.len() < 2 {
            if data.monotone[v] != Monotone::None {
                return Err(DataError::ConstantConstrained(data.names[v].clone()).into());
            }
            grids.push(Vec::new());
        } else if vals.len() <= max_cuts {
            grids.push(vals.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect());
        } else {
            let (lo, hi) = (vals[0], vals[vals.len() - 1]);
            let step = (hi - lo) / (max_cuts + 1) as f64;
            grids.push((1..=max_cuts).map(|i| lo + step * i as f64).collect());
        }
    }
    CutpointGrids::new(grids)
}

const MAGIC: &str = "mbart-draws";
const VERSION: &str = "1";

/// Writes the draw set to `path` (via a temporary sibling, then renamed).
pub fn persist_draws(set: &DrawSet, path: &Path) -> Result<()> {
    let text = draws_to_text(set);
    let tmp = path.with_extension("tmp");
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    fs::write(&tmp, text).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn draws_to_text(set: &DrawSet) -> String {
    let meta = &set.meta;
    let hp = &meta.hp;
    let mut out = String::new();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "mode {}", meta.mode).unwrap();
    writeln!(out, "seed {}", meta.seed).unwrap();
    writeln!(
        out,
        "hyper alpha={:?} beta={:?} nu={:?} lambda={:?} q={:?} k={:?} m={} mu_mu={:?} sigma_mu={:?} min_leaf={} grid_points={} max_depth={}",
        hp.alpha, hp.beta, hp.nu, hp.lambda, hp.q, hp.k, hp.m, hp.mu_mu, hp.sigma_mu,
        hp.min_leaf, hp.grid_points, hp.max_depth
    )
    .unwrap();
    let s: Vec<String> = hp.constraints.iter().map(|v| v.to_string()).collect();
    writeln!(out, "constraints {}", s.join(" ")).unwrap();
    writeln!(
        out,
        "response {:?} {:?} {}",
        meta.y_transform.center, meta.y_transform.scale, meta.y_name
    )
    .unwrap();
    writeln!(out, "columns {}", meta.names.len()).unwrap();
    for (v, name) in meta.names.iter().enumerate() {
        writeln!(out, "column {} {name}", u8::from(meta.flipped[v])).unwrap();
    }
    for v in 0..meta.cuts.dim() {
        write!(out, "cuts {v}").unwrap();
        for c in meta.cuts.values(v) {
            write!(out, " {c:?}").unwrap();
        }
        out.push('\n');
    }
    writeln!(out, "draws {}", set.draws.len()).unwrap();
    for d in &set.draws {
        writeln!(out, "draw {} {:?}", d.iteration, d.sigma).unwrap();
        out.push_str(&d.forest.to_text());
    }
    out.push_str("end\n");
    out
}

pub fn load_draws(path: &Path) -> Result<DrawSet> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    draws_from_text(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    peeked: Option<(usize, &'a str)>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            peeked: None,
        }
    }

    fn peek(&mut self) -> Option<(usize, &'a str)> {
        if self.peeked.is_none() {
            self.peeked = self.inner.next().map(|(i, l)| (i + 1, l));
        }
        self.peeked
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let line = self.peek();
        self.peeked = None;
        line.ok_or_else(|| DrawFileError::Truncated(format!("expected {what}")).into())
    }

    fn keyword(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self.next_line(key)?;
        match line.strip_prefix(key) {
            Some(rest) if rest.is_empty() || rest.starts_with(' ') => Ok((n, rest.trim_start())),
            _ => Err(parse_err(n, format!("expected `{key}`"))),
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    DrawFileError::Parse {
        line,
        message: message.into(),
    }
    .into()
}

fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| parse_err(line, format!("bad number `{s}`")))
}

pub fn draws_from_text(text: &str) -> Result<DrawSet> {
    let mut lines = Lines::new(text);
    let (_, first) = lines
        .next_line("header")
        .map_err(|_| DrawFileError::Truncated("empty file".into()))?;
    match first.split_once(' ') {
        Some((MAGIC, VERSION)) => {}
        Some((MAGIC, other)) => return Err(DrawFileError::Version(other.to_string()).into()),
        _ => return Err(parse_err(1, "not a draw file")),
    }

    let (n, mode) = lines.keyword("mode")?;
    let mode: Mode = mode.parse().map_err(|e: Error| parse_err(n, e.to_string()))?;
    let (n, seed) = lines.keyword("seed")?;
    let seed: u64 = num(n, seed)?;

    let (n, hyper) = lines.keyword("hyper")?;
    let fields: BTreeMap<&str, &str> = hyper
        .split_whitespace()
        .map(|kv| kv.split_once('=').ok_or_else(|| parse_err(n, "bad hyper field")))
        .collect::<Result<_>>()?;
    let get = |key: &str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| parse_err(n, format!("missing hyperparameter {key}")))
    };
    let mut hp = HyperParams::bart(1);
    hp.alpha = num(n, get("alpha")?)?;
    hp.beta = num(n, get("beta")?)?;
    hp.nu = num(n, get("nu")?)?;
    hp.lambda = num(n, get("lambda")?)?;
    hp.q = num(n, get("q")?)?;
    hp.k = num(n, get("k")?)?;
    hp.m = num(n, get("m")?)?;
    hp.mu_mu = num(n, get("mu_mu")?)?;
    hp.sigma_mu = num(n, get("sigma_mu")?)?;
    hp.min_leaf = num(n, get("min_leaf")?)?;
    hp.grid_points = num(n, get("grid_points")?)?;
    hp.max_depth = num(n, get("max_depth")?)?;

    let (n, cons) = lines.keyword("constraints")?;
    let cons: Vec<usize> = cons
        .split_whitespace()
        .map(|s| num(n, s))
        .collect::<Result<_>>()?;

    let (n, resp) = lines.keyword("response")?;
    let mut parts = resp.splitn(3, ' ');
    let center: f64 = num(n, parts.next().unwrap_or(""))?;
    let scale: f64 = num(n, parts.next().unwrap_or(""))?;
    let y_name = parts.next().unwrap_or("").to_string();

    let (n, ncols) = lines.keyword("columns")?;
    let p: usize = num(n, ncols)?;
    let mut names = Vec::with_capacity(p);
    let mut flipped = Vec::with_capacity(p);
    for _ in 0..p {
        let (n, col) = lines.keyword("column")?;
        let (flag, name) = col.split_once(' ').unwrap_or((col, ""));
        flipped.push(match flag {
            "0" => false,
            "1" => true,
            _ => return Err(parse_err(n, "bad flip flag")),
        });
        names.push(name.to_string());
    }
    hp.constraints = ConstraintSet::new(cons, p).map_err(|e| parse_err(n, e.to_string()))?;

    let mut grids = Vec::with_capacity(p);
    for v in 0..p {
        let (n, rest) = lines.keyword("cuts")?;
        let mut it = rest.split_whitespace();
        let idx: usize = num(n, it.next().unwrap_or(""))?;
        if idx != v {
            return Err(parse_err(n, format!("expected cuts for column {v}")));
        }
        grids.push(it.map(|s| num(n, s)).collect::<Result<Vec<f64>>>()?);
    }
    let cuts = CutpointGrids::new(grids)?;
    let n_cuts = cuts.counts();

    let (n, count) = lines.keyword("draws")?;
    let count: usize = num(n, count)?;
    let mut draws = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let (n, head) = lines.keyword("draw")?;
        let (iter, sigma) = head
            .split_once(' ')
            .ok_or_else(|| parse_err(n, "bad draw header"))?;
        let iteration: usize = num(n, iter)?;
        let sigma: f64 = num(n, sigma)?;
        let mut forest = Forest { trees: Vec::new() };
        for j in 0..hp.m {
            let (n, head) = lines.keyword("tree")?;
            if head != format!("{} of {}", j + 1, hp.m) {
                return Err(parse_err(n, "tree header out of sequence"));
            }
            let mut nodes = BTreeMap::new();
            while let Some((n, line)) = lines.peek() {
                if line.starts_with("tree") || line.starts_with("draw") || line == "end" {
                    break;
                }
                lines.next_line("node")?;
                let (label, node) = parse_node_line(line).map_err(|e| parse_err(n, e.to_string()))?;
                nodes.insert(label, node);
            }
            // a complete file always has `end` after the last tree
            if lines.peek().is_none() {
                return Err(DrawFileError::Truncated(format!("file ends inside tree {}", j + 1)).into());
            }
            let tree = Tree::from_nodes(nodes).map_err(|e| parse_err(n, e.to_string()))?;
            tree.validate(&n_cuts).map_err(|e| parse_err(n, e.to_string()))?;
            forest.trees.push(tree);
        }
        draws.push(Draw {
            iteration,
            sigma,
            forest,
        });
    }
    match lines.peek() {
        Some((_, "end")) => {}
        Some((n, _)) => return Err(parse_err(n, "expected `end`")),
        None => return Err(DrawFileError::Truncated("missing `end` marker".into()).into()),
    }
    Ok(DrawSet {
        meta: DrawMeta {
            mode,
            seed,
            hp,
            names,
            y_name,
            y_transform: YTransform { center, scale },
            flipped,
            cuts,
        },
        draws,
    })
}
