//! Leaf-mean marginal likelihoods: conjugate closed forms, truncated
//! versions, and the quadrature grids used for ordered sibling pairs.

use std::f64::consts::PI;

use rand::Rng;

use crate::constraints::{Interval, PairConstraint};
use crate::error::{Error, Result};
use crate::priors::MuPrior;
use crate::stats::{self, log_diff_ndtr, norm_logpdf};

/// Count, sum and sum of squares of the residuals reaching one leaf.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SufficientStats {
    pub count: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl SufficientStats {
    pub fn from_rows(r: &[f64], rows: &[usize]) -> Self {
        let mut s = SufficientStats::default();
        for &i in rows {
            s.push(r[i]);
        }
        s
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&self, other: &SufficientStats) -> SufficientStats {
        SufficientStats {
            count: self.count + other.count,
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
        }
    }

    /// log ∏ φ(r_j; mu, σ²).
    pub fn log_likelihood(&self, mu: f64, sigma: f64) -> f64 {
        let s2 = sigma * sigma;
        let n = self.count as f64;
        let ss = self.sum_sq - 2.0 * mu * self.sum + n * mu * mu;
        -0.5 * n * (2.0 * PI * s2).ln() - 0.5 * ss / s2
    }
}

/// Likelihood times prior written as `exp(log_z) · N(mu; mean, var)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conjugate {
    pub log_z: f64,
    pub mean: f64,
    pub var: f64,
}

impl Conjugate {
    pub fn new(stats: &SufficientStats, prior: MuPrior, sigma: f64) -> Self {
        let s2 = sigma * sigma;
        let n = stats.count as f64;
        let var = 1.0 / (n / s2 + 1.0 / prior.var);
        let mean = var * (stats.sum / s2 + prior.mean / prior.var);
        let log_z = -0.5 * n * (2.0 * PI * s2).ln() - 0.5 * stats.sum_sq / s2
            - 0.5 * prior.mean * prior.mean / prior.var
            + 0.5 * mean * mean / var
            + 0.5 * (var / prior.var).ln();
        Conjugate { log_z, mean, var }
    }

    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }

    /// log of the integrand at `mu`.
    pub fn log_density(&self, mu: f64) -> f64 {
        self.log_z + norm_logpdf(mu, self.mean, self.var)
    }

    /// log of the integrand's mass on `iv`.
    pub fn log_mass(&self, iv: Interval) -> f64 {
        if !(iv.lower < iv.upper) {
            return f64::NEG_INFINITY;
        }
        let s = self.sd();
        self.log_z + log_diff_ndtr((iv.lower - self.mean) / s, (iv.upper - self.mean) / s)
    }

    pub fn draw<R: Rng + ?Sized>(&self, iv: Interval, rng: &mut R) -> Result<f64> {
        stats::truncated_normal(self.mean, self.sd(), iv.lower, iv.upper, rng)
    }
}

/// log ∫ ∏φ(r_j; μ, σ²) φ(μ; prior) dμ over the real line.
pub fn leaf_log_marginal(stats: &SufficientStats, prior: MuPrior, sigma: f64) -> f64 {
    Conjugate::new(stats, prior, sigma).log_z
}

/// The same integral restricted to `iv`; −∞ for an empty interval.
pub fn leaf_log_marginal_constrained(
    stats: &SufficientStats,
    iv: Interval,
    prior: MuPrior,
    sigma: f64,
) -> f64 {
    Conjugate::new(stats, prior, sigma).log_mass(iv)
}

/// Number of equally spaced points per leaf-mean dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub n_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n_points: 64 }
    }
}

impl GridSpec {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 8 {
            return Err(Error::Input(format!("grid needs at least 8 points, got {n_points}")));
        }
        Ok(GridSpec { n_points })
    }
}

const SPAN_SDS: f64 = 6.0;

/// Finite window holding the mass of `c` on `iv`, centred on the posterior
/// where possible and hugging the near endpoint when the posterior lies
/// outside the interval.
fn window(c: &Conjugate, iv: Interval, hull: (f64, f64)) -> Option<(f64, f64)> {
    if !(iv.lower < iv.upper) {
        return None;
    }
    let lo = iv.lower.max(hull.0);
    let hi = iv.upper.min(hull.1);
    if lo < hi {
        return Some((lo, hi));
    }
    let s = c.sd();
    if iv.lower >= hull.1 {
        let width = 30.0 * s * s / (iv.lower - c.mean).max(s);
        Some((iv.lower, iv.upper.min(iv.lower + width)))
    } else {
        let width = 30.0 * s * s / (c.mean - iv.upper).max(s);
        Some((iv.lower.max(iv.upper - width), iv.upper))
    }
}

fn own_hull(c: &Conjugate) -> (f64, f64) {
    let s = c.sd();
    (c.mean - SPAN_SDS * s, c.mean + SPAN_SDS * s)
}

/// Composite Simpson weights for `n` equally spaced nodes with spacing `h`
/// (3/8 rule on the last panel when `n` is even).
fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 4);
    let mut w = vec![0.0; n];
    let simpson_end = if n % 2 == 1 { n - 1 } else { n - 4 };
    for i in (0..simpson_end).step_by(2) {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
    }
    if n % 2 == 0 {
        let s = n - 4;
        w[s] += 3.0 * h / 8.0;
        w[s + 1] += 9.0 * h / 8.0;
        w[s + 2] += 9.0 * h / 8.0;
        w[s + 3] += 3.0 * h / 8.0;
    }
    w
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Grid evaluation of [`leaf_log_marginal_constrained`]: likelihood times
/// prior at equally spaced points, weighted by the quadrature rule.
pub fn leaf_log_marginal_grid(
    stats: &SufficientStats,
    iv: Interval,
    prior: MuPrior,
    sigma: f64,
    grid: GridSpec,
) -> f64 {
    let c = Conjugate::new(stats, prior, sigma);
    let Some((lo, hi)) = window(&c, iv, own_hull(&c)) else {
        return f64::NEG_INFINITY;
    };
    let n = grid.n_points.max(4);
    let h = (hi - lo) / (n - 1) as f64;
    let w = simpson_weights(n, h);
    let terms = (0..n).map(|i| {
        let mu = lo + h * i as f64;
        stats.log_likelihood(mu, sigma) + norm_logpdf(mu, prior.mean, prior.var) + w[i].ln()
    });
    log_sum_exp(terms)
}

/// One axis of the pair grid: `n` midpoint cells partitioning `[lo, lo + n h]`.
#[derive(Clone, Debug)]
struct Axis {
    lo: f64,
    h: f64,
    /// Exact mass of each cell divided by its width, scaled so the maximum
    /// is one. Midpoint values would lose (g h)²/24 per cell where the log
    /// density has slope g, which is large deep in a tail.
    f: Vec<f64>,
    shift: f64,
    density: Conjugate,
}

impl Axis {
    fn new(c: &Conjugate, (lo, hi): (f64, f64), n: usize) -> Self {
        let h = (hi - lo) / n as f64;
        let sd = c.sd();
        let logs: Vec<f64> = (0..n)
            .map(|i| {
                let (a, b) = (lo + h * i as f64, lo + h * (i + 1) as f64);
                log_diff_ndtr((a - c.mean) / sd, (b - c.mean) / sd) - h.ln()
            })
            .collect();
        let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + c.log_z;
        let f = logs.iter().map(|&l| (l + c.log_z - shift).exp()).collect();
        Axis { lo, h, f, shift, density: *c }
    }

    /// Ratio of the cell average to the midpoint value in cell `i`.
    fn curvature(&self, i: usize) -> f64 {
        let mid = self.at(self.lo + self.h * (i as f64 + 0.5));
        if mid > 0.0 {
            self.f[i] / mid
        } else {
            1.0
        }
    }

    /// Scaled density at an arbitrary point.
    fn at(&self, x: f64) -> f64 {
        (self.density.log_density(x) - self.shift).exp()
    }

    fn edge(&self, i: usize) -> f64 {
        self.lo + self.h * i as f64
    }

    fn n(&self) -> usize {
        self.f.len()
    }
}

/// Area and centroid of the part of `[u0, u1] × [v0, v1]` in `{u <= v}`.
fn piece_below_diagonal(u0: f64, u1: f64, v0: f64, v1: f64) -> (f64, f64, f64) {
    let corners = [(u0, v0), (u1, v0), (u1, v1), (u0, v1)];
    // clip the rectangle against the half-plane u - v <= 0
    let mut poly: Vec<(f64, f64)> = Vec::with_capacity(5);
    for i in 0..4 {
        let (a, b) = (corners[i], corners[(i + 1) % 4]);
        let (da, db) = (a.0 - a.1, b.0 - b.1);
        if da <= 0.0 {
            poly.push(a);
        }
        if (da <= 0.0) != (db <= 0.0) {
            let t = da / (da - db);
            poly.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    if poly.len() < 3 {
        return (0.0, 0.5 * (u0 + u1), 0.5 * (v0 + v1));
    }
    // shoelace, relative to the first vertex to limit cancellation
    let (ou, ov) = poly[0];
    let (mut area2, mut cu, mut cv) = (0.0, 0.0, 0.0);
    for i in 0..poly.len() {
        let (x0, y0) = (poly[i].0 - ou, poly[i].1 - ov);
        let j = (i + 1) % poly.len();
        let (x1, y1) = (poly[j].0 - ou, poly[j].1 - ov);
        let cross = x0 * y1 - x1 * y0;
        area2 += cross;
        cu += (x0 + x1) * cross;
        cv += (y0 + y1) * cross;
    }
    if area2 <= 0.0 {
        return (0.0, 0.5 * (u0 + u1), 0.5 * (v0 + v1));
    }
    (0.5 * area2, ou + cu / (3.0 * area2), ov + cv / (3.0 * area2))
}

/// Ordered pair grid: cell weights `f_L(u_i) f_R(v_k) |cell_ik ∩ {u <= v}|`.
struct PairGrid {
    l: Axis,
    r: Axis,
    /// suffix[k] = Σ_{k' >= k} f_R[k'].
    suffix: Vec<f64>,
    rows: Vec<RowMass>,
    total: f64,
}

struct RowMass {
    full_from: usize,
    band: std::ops::Range<usize>,
    full: f64,
    band_masses: Vec<f64>,
    total: f64,
}

impl PairGrid {
    fn new(cl: &Conjugate, cr: &Conjugate, pc: &PairConstraint, n: usize) -> Option<Self> {
        // an ordered pair can never leave [left.lower, right.upper]
        let il = Interval::new(pc.left.lower, pc.left.upper.min(pc.right.upper));
        let ir = Interval::new(pc.right.lower.max(pc.left.lower), pc.right.upper);
        let (hl, hr) = (own_hull(cl), own_hull(cr));
        let hull = (hl.0.min(hr.0), hl.1.max(hr.1));
        let wl = window(cl, il, hull)?;
        let wr = window(cr, ir, hull)?;
        let l = Axis::new(cl, wl, n);
        let r = Axis::new(cr, wr, n);
        let mut suffix = vec![0.0; r.n() + 1];
        for k in (0..r.n()).rev() {
            suffix[k] = suffix[k + 1] + r.f[k];
        }
        let cell = l.h * r.h;
        let mut rows = Vec::with_capacity(l.n());
        let mut total = 0.0;
        for i in 0..l.n() {
            let (u0, u1) = (l.edge(i), l.edge(i + 1));
            let start = (((u0 - r.lo) / r.h).floor() - 1.0).clamp(0.0, r.n() as f64) as usize;
            let full_from = (((u1 - r.lo) / r.h).ceil() + 1.0).clamp(0.0, r.n() as f64) as usize;
            let start = start.min(full_from);
            let band_masses: Vec<f64> = (start..full_from)
                .map(|k| {
                    // evaluated at the centroid of the kept piece, so the
                    // cut through the cell does not cost an order of accuracy,
                    // with the same curvature correction as whole cells
                    let (area, cu, cv) = piece_below_diagonal(u0, u1, r.edge(k), r.edge(k + 1));
                    if area == 0.0 {
                        0.0
                    } else {
                        l.at(cu) * r.at(cv) * area * l.curvature(i) * r.curvature(k)
                    }
                })
                .collect();
            let full = l.f[i] * cell * suffix[full_from];
            let row_total = full + band_masses.iter().sum::<f64>();
            total += row_total;
            rows.push(RowMass {
                full_from,
                band: start..full_from,
                full,
                band_masses,
                total: row_total,
            });
        }
        Some(PairGrid {
            l,
            r,
            suffix,
            rows,
            total,
        })
    }

    fn log_total(&self) -> f64 {
        if self.total > 0.0 {
            self.l.shift + self.r.shift + self.total.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let i = pick(self.rows.iter().map(|row| row.total), self.total, rng);
        let row = &self.rows[i];
        let row_mass = row.full + row.band_masses.iter().sum::<f64>();
        let u: f64 = rng.random::<f64>() * row_mass;
        let k = if u < row.full {
            let full_mass = self.suffix[row.full_from];
            row.full_from + pick(self.r.f[row.full_from..].iter().copied(), full_mass, rng)
        } else {
            let band_total: f64 = row.band_masses.iter().sum();
            row.band.start + pick(row.band_masses.iter().copied(), band_total, rng)
        };
        let (u0, u1) = (self.l.edge(i), self.l.edge(i + 1));
        let (v0, v1) = (self.r.edge(k), self.r.edge(k + 1));
        loop {
            let a = u0 + (u1 - u0) * rng.random::<f64>();
            let b = v0 + (v1 - v0) * rng.random::<f64>();
            if a <= b {
                return (a, b);
            }
        }
    }
}

/// Index drawn with probability proportional to the given masses.
fn pick<R: Rng + ?Sized>(masses: impl Iterator<Item = f64>, total: f64, rng: &mut R) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (idx, m) in masses.enumerate() {
        if m > 0.0 {
            last_positive = idx;
        }
        acc += m;
        if acc > target && m > 0.0 {
            return idx;
        }
    }
    last_positive
}

/// log of the summed weights over the pair grid intersected with the
/// constraint. Unordered pairs factorize into two one-dimensional grids.
pub fn pair_log_marginal_grid(
    stats_l: &SufficientStats,
    stats_r: &SufficientStats,
    pc: &PairConstraint,
    prior_l: MuPrior,
    prior_r: MuPrior,
    sigma: f64,
    grid: GridSpec,
) -> f64 {
    if !pc.ordered {
        return leaf_log_marginal_grid(stats_l, pc.left, prior_l, sigma, grid)
            + leaf_log_marginal_grid(stats_r, pc.right, prior_r, sigma, grid);
    }
    let cl = Conjugate::new(stats_l, prior_l, sigma);
    let cr = Conjugate::new(stats_r, prior_r, sigma);
    PairGrid::new(&cl, &cr, pc, grid.n_points).map_or(f64::NEG_INFINITY, |g| g.log_total())
}

/// Draws `(mu_left, mu_right)` in proportion to the grid weights, uniformly
/// within the chosen cell. Unordered pairs are drawn exactly.
#[allow(clippy::too_many_arguments)]
pub fn draw_mu_pair<R: Rng + ?Sized>(
    stats_l: &SufficientStats,
    stats_r: &SufficientStats,
    pc: &PairConstraint,
    prior_l: MuPrior,
    prior_r: MuPrior,
    sigma: f64,
    grid: GridSpec,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let cl = Conjugate::new(stats_l, prior_l, sigma);
    let cr = Conjugate::new(stats_r, prior_r, sigma);
    if !pc.ordered {
        return Ok((cl.draw(pc.left, rng)?, cr.draw(pc.right, rng)?));
    }
    match PairGrid::new(&cl, &cr, pc, grid.n_points) {
        Some(g) if g.total > 0.0 => Ok(g.draw(rng)),
        _ => Err(Error::Infeasible {
            lower: pc.left.lower,
            upper: pc.right.upper,
        }),
    }
}

/// log mass of an ordered or unordered pair as used inside the sampler:
/// exact for unordered pairs, gridded for ordered ones.
pub(crate) fn pair_log_marginal(
    stats_l: &SufficientStats,
    stats_r: &SufficientStats,
    pc: &PairConstraint,
    prior_l: MuPrior,
    prior_r: MuPrior,
    sigma: f64,
    grid: GridSpec,
) -> f64 {
    if pc.ordered {
        pair_log_marginal_grid(stats_l, stats_r, pc, prior_l, prior_r, sigma, grid)
    } else {
        leaf_log_marginal_constrained(stats_l, pc.left, prior_l, sigma)
            + leaf_log_marginal_constrained(stats_r, pc.right, prior_r, sigma)
    }
}
