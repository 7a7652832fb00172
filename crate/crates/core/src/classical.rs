//! Monte Carlo checks that a cohesive many-particle stochastic system moves
//! like a single classical body.
//!
//! Conventions: `sigma0` is the total per-particle positional variance (the
//! sum over spatial axes), so the centre-of-mass variance of `N` independent
//! particles is `sigma0 / N` in any dimension. For the radial law
//! `p(x) = C exp(-a r^2) / r` the cohesive strength grows as
//! `a = a0 * N^m_exp`.
//!
//! All Monte Carlo draws are split into fixed-size chunks with streams keyed
//! by `(seed, ..., chunk)` and reduced in chunk order, so results are
//! bit-identical for a given seed whatever the thread count.

use rand::Rng;
use rand_distr::{Distribution as _, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{self, StreamRng};
use crate::{Error, Result};

/// Truncation radius for moment-decay runs, in units of the per-particle
/// standard deviation.
pub const DEFAULT_TRUNCATION: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Distribution {
    /// Isotropic Gaussian with total variance `sigma0`. Independent of `N`.
    Gaussian { sigma0: f64 },
    /// `p(x) = C exp(-a r^2) / r` with `a = a0 N^m_exp` (dimensions 2 and 3).
    RadialGaussOverR { a0: f64, c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n: usize,
    pub dimension: usize,
    pub distribution: Distribution,
    pub interaction_exponent: f64,
    pub seed: u64,
    /// Reject particles farther than this many standard deviations from the
    /// origin. `None` leaves the distribution unbounded.
    #[serde(default)]
    pub truncation: Option<f64>,
}

impl EnsembleSpec {
    pub fn gaussian(n: usize, dimension: usize, sigma0: f64, seed: u64) -> Result<Self> {
        Self { n, dimension, distribution: Distribution::Gaussian { sigma0 }, interaction_exponent: 0.0, seed, truncation: None }
            .validated()
    }

    pub fn radial(n: usize, dimension: usize, a0: f64, c: f64, m_exp: f64, seed: u64) -> Result<Self> {
        Self { n, dimension, distribution: Distribution::RadialGaussOverR { a0, c }, interaction_exponent: m_exp, seed, truncation: None }
            .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.n == 0 {
            return Err(Error::InvalidSpec("N must be >= 1".into()));
        }
        if !(1..=3).contains(&self.dimension) {
            return Err(Error::InvalidSpec(format!("dimension must be 1, 2 or 3, got {}", self.dimension)));
        }
        if !(self.interaction_exponent >= 0.0) {
            return Err(Error::InvalidSpec("interaction exponent must be >= 0".into()));
        }
        if let Some(t) = self.truncation {
            if !(t > 0.0) {
                return Err(Error::InvalidSpec("truncation must be positive".into()));
            }
        }
        match self.distribution {
            Distribution::Gaussian { sigma0 } if !(sigma0 >= 0.0 && sigma0.is_finite()) => {
                Err(Error::InvalidSpec("sigma0 must be finite and >= 0".into()))
            }
            Distribution::RadialGaussOverR { a0, c } if !(a0 > 0.0 && c > 0.0) => {
                Err(Error::InvalidSpec("radial law needs a0 > 0 and C > 0".into()))
            }
            Distribution::RadialGaussOverR { .. } if self.dimension == 1 => {
                Err(Error::InvalidSpec("exp(-a r^2)/r is not normalizable in one dimension".into()))
            }
            _ => Ok(self),
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    pub fn truncated(mut self, sigmas: f64) -> Self {
        self.truncation = Some(sigmas);
        self
    }

    /// `a0 * N^m_exp` for the radial law.
    pub fn strength(&self) -> Option<f64> {
        match self.distribution {
            Distribution::RadialGaussOverR { a0, .. } => Some(a0 * (self.n as f64).powf(self.interaction_exponent)),
            Distribution::Gaussian { .. } => None,
        }
    }

    /// Total per-particle variance `<r^2>` of the normalized, untruncated law.
    pub fn particle_variance(&self) -> f64 {
        match self.distribution {
            Distribution::Gaussian { sigma0 } => sigma0,
            Distribution::RadialGaussOverR { .. } => {
                let a = self.strength().unwrap();
                // d = 3: r^2 ~ Exp(a). d = 2: r is half-normal with variance 1/(2a).
                if self.dimension == 3 { 1.0 / a } else { 0.5 / a }
            }
        }
    }

    fn draw_untruncated(&self, rng: &mut StreamRng, out: &mut [f64]) {
        match self.distribution {
            Distribution::Gaussian { sigma0 } => {
                let s = (sigma0 / self.dimension as f64).sqrt();
                out.iter_mut().for_each(|x| *x = s * rng.sample::<f64, _>(StandardNormal));
            }
            Distribution::RadialGaussOverR { .. } => {
                let a = self.strength().unwrap();
                let r = if self.dimension == 3 {
                    // with u = r^2 the radial density r exp(-a r^2) becomes exp(-a u)
                    Exp::new(a).unwrap().sample(rng).sqrt()
                } else {
                    (rng.sample::<f64, _>(StandardNormal) * (0.5 / a).sqrt()).abs()
                };
                // isotropic direction
                loop {
                    out.iter_mut().for_each(|x| *x = rng.sample::<f64, _>(StandardNormal));
                    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 1e-300 {
                        out.iter_mut().for_each(|x| *x *= r / norm);
                        break;
                    }
                }
            }
        }
    }

    /// One particle position written into `out` (length `dimension`).
    pub fn draw_particle(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let cutoff = self.truncation.map(|t| t * self.particle_variance().sqrt());
        loop {
            self.draw_untruncated(rng, out);
            match cutoff {
                Some(rc) if out.iter().map(|x| x * x).sum::<f64>() > rc * rc => continue,
                _ => return,
            }
        }
    }

    /// Positions of all `N` particles, row-major `N x dimension`.
    pub fn draw_configuration(&self, rng: &mut StreamRng, out: &mut Vec<f64>) {
        let d = self.dimension;
        out.resize(self.n * d, 0.0);
        for p in out.chunks_mut(d) {
            self.draw_particle(rng, p);
        }
    }
}

/// Runs `per_draw` for `draws` independent configurations and returns the
/// outputs in draw order.
fn monte_carlo<T, F>(spec: &EnsembleSpec, stream_tag: &[u64], draws: usize, per_draw: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[f64], &mut StreamRng) -> T + Sync,
{
    rng::chunks(draws)
        .into_par_iter()
        .map(|(chunk, len)| {
            let mut ids = stream_tag.to_vec();
            ids.extend([spec.n as u64, chunk]);
            let mut rng = rng::stream(spec.seed, &ids);
            let mut buf = Vec::new();
            (0..len)
                .map(|_| {
                    spec.draw_configuration(&mut rng, &mut buf);
                    per_draw(&buf, &mut rng)
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn centre_of_mass(positions: &[f64], d: usize) -> Vec<f64> {
    let n = positions.len() / d;
    let mut cm = vec![0.0; d];
    for p in positions.chunks(d) {
        cm.iter_mut().zip(p).for_each(|(c, x)| *c += x);
    }
    cm.iter_mut().for_each(|c| *c /= n as f64);
    cm
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CmStatistics {
    pub n: usize,
    pub mean: Vec<f64>,
    pub mean_stderr: Vec<f64>,
    /// Sum of per-axis sample variances of the centre of mass.
    pub variance: f64,
    pub stderr: f64,
    pub samples: usize,
    /// `particle_variance / N`.
    pub expected_variance: f64,
}

pub fn cm_statistics(spec: &EnsembleSpec, samples: usize) -> Result<CmStatistics> {
    let spec = spec.clone().validated()?;
    if samples < 100 {
        return Err(Error::InvalidSpec(format!("need at least 100 samples, got {samples}")));
    }
    if spec.particle_variance() == 0.0 {
        return Err(Error::InvalidSpec("degenerate distribution (zero variance)".into()));
    }
    let d = spec.dimension;
    let cms = monte_carlo(&spec, &[1], samples, |pos, _| centre_of_mass(pos, d));
    let s = samples as f64;
    let mut mean = vec![0.0; d];
    for cm in &cms {
        mean.iter_mut().zip(cm).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= s);
    let mut axis_var = vec![0.0; d];
    let q: Vec<f64> = cms
        .iter()
        .map(|cm| {
            let mut total = 0.0;
            for a in 0..d {
                let dev = (cm[a] - mean[a]).powi(2);
                axis_var[a] += dev;
                total += dev;
            }
            total
        })
        .collect();
    axis_var.iter_mut().for_each(|v| *v /= s - 1.0);
    let variance: f64 = axis_var.iter().sum();
    let q_mean = q.iter().sum::<f64>() / s;
    let q_var = q.iter().map(|x| (x - q_mean).powi(2)).sum::<f64>() / (s - 1.0);
    Ok(CmStatistics {
        n: spec.n,
        mean_stderr: axis_var.iter().map(|v| (v / s).sqrt()).collect(),
        mean,
        variance,
        stderr: (q_var / s).sqrt(),
        samples,
        expected_variance: spec.particle_variance() / spec.n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialMoment {
    /// `C / (2a)`: the unnormalized convention with prefactor `C`.
    pub closed_form: f64,
    /// `C * int_0^inf r exp(-a r^2) dr` by adaptive quadrature.
    pub quadrature: f64,
    pub relative_error: f64,
    /// `<r^2>` of the properly normalized three-dimensional law, `1/a`.
    pub normalized_3d: f64,
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

/// `<r^2> = C int_0^inf r^2 exp(-a r^2) / r dr = C / (2a)`, checked against
/// quadrature.
pub fn radial_moment(a: f64, c: f64) -> Result<RadialMoment> {
    if !(a > 0.0 && c > 0.0 && a.is_finite() && c.is_finite()) {
        return Err(Error::InvalidArgs(format!("need a > 0 and C > 0, got a = {a}, C = {c}")));
    }
    let closed_form = c / (2.0 * a);
    // the tail beyond r^2 = 60/a carries a relative weight of e^-60
    let upper = (60.0 / a).sqrt();
    let integrand = |r: f64| r * (-a * r * r).exp();
    let quadrature = c * adaptive_simpson(&integrand, 0.0, upper, 1e-15 / a);
    Ok(RadialMoment {
        closed_form,
        quadrature,
        relative_error: (quadrature - closed_form).abs() / closed_form,
        normalized_3d: 1.0 / a,
    })
}

/// Sum of individual variances `N <r^2>` with `a = a0 N^m_exp`:
/// `C / (2 a0) * N^(1 - m_exp)`.
pub fn scaled_variance(a0: f64, c: f64, m_exp: f64, n: usize) -> Result<f64> {
    if !(a0 > 0.0) || n == 0 {
        return Err(Error::InvalidArgs(format!("need a0 > 0 and N >= 1, got a0 = {a0}, N = {n}")));
    }
    let n = n as f64;
    Ok(n * c / (2.0 * a0 * n.powf(m_exp)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexPattern {
    /// `<s_i1 ... s_im>` over distinct particles.
    Distinct,
    /// `<s_i^m>` for a single particle.
    Repeated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentRow {
    pub n: usize,
    pub order: usize,
    pub estimate: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
}

impl PowerLawFit {
    /// Slope below zero at 95% confidence.
    pub fn decreasing(&self) -> bool {
        self.slope + 1.96 * self.slope_stderr < 0.0
    }
}

/// Weighted least squares of `ln |y|` on `ln x`, with the delta-method
/// weights `(y / sigma_y)^2`. Zero `sigma_y` falls back to unit weights.
pub fn fit_power_law(x: &[f64], y: &[f64], sigma_y: &[f64]) -> Result<PowerLawFit> {
    if x.len() < 2 || x.len() != y.len() || y.len() != sigma_y.len() {
        return Err(Error::InvalidArgs("power-law fit needs >= 2 matching points".into()));
    }
    if x.iter().chain(y).any(|v| *v == 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgs("power-law fit needs finite non-zero values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.abs().ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let unit = sigma_y.contains(&0.0);
    let w: Vec<f64> = if unit { vec![1.0; x.len()] } else { y.iter().zip(sigma_y).map(|(v, s)| (v / s).powi(2)).collect() };
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(&lx).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(&ly).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&lx).map(|(w, x)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = w.iter().zip(lx.iter().zip(&ly)).map(|(w, (x, y))| w * (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let slope_stderr = if unit {
        let n = x.len() as f64;
        let rss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
        if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 }
    } else {
        (1.0 / sxx).sqrt()
    };
    Ok(PowerLawFit { slope, slope_stderr, intercept: my - slope * mx })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentTable {
    pub rows: Vec<MomentRow>,
    pub truncation: f64,
    pub pattern: IndexPattern,
    /// One fit per order across the `N` list, when at least two sizes ran.
    pub fits: Vec<(usize, Option<PowerLawFit>)>,
}

/// Index tuples sampled per configuration.
const TUPLES_PER_DRAW: usize = 16;

/// Central moments of relative coordinates `s_i = x_i - X_CM` (first axis)
/// for each `N` and order, averaged over random index tuples.
pub fn central_moment_decay(
    spec: &EnsembleSpec,
    orders: &[usize],
    n_list: &[usize],
    samples: usize,
    pattern: IndexPattern,
) -> Result<MomentTable> {
    let spec = spec.clone().validated()?;
    let truncation = spec.truncation.ok_or(Error::UnboundedDistribution)?;
    if let Some(&o) = orders.iter().find(|&&o| !(2..=6).contains(&o)) {
        return Err(Error::InvalidArgs(format!("orders must lie in 2..=6, got {o}")));
    }
    if samples < 2 {
        return Err(Error::InvalidArgs("need at least 2 samples".into()));
    }
    let mut rows = Vec::new();
    for &n in n_list {
        let sized = spec.with_n(n).validated()?;
        if pattern == IndexPattern::Distinct {
            if let Some(&o) = orders.iter().find(|&&o| o > n) {
                return Err(Error::InvalidArgs(format!("order {o} needs at least {o} distinct particles, N = {n}")));
            }
        }
        let d = sized.dimension;
        let max_order = orders.iter().copied().max().unwrap_or(2);
        let per_draw: Vec<Vec<f64>> = monte_carlo(&sized, &[2, pattern as u64], samples, |pos, rng| {
            let cm = centre_of_mass(pos, d)[0];
            let s: Vec<f64> = pos.chunks(d).map(|p| p[0] - cm).collect();
            let mut acc = vec![0.0; orders.len()];
            let mut idx = Vec::with_capacity(max_order);
            for _ in 0..TUPLES_PER_DRAW {
                idx.clear();
                match pattern {
                    IndexPattern::Repeated => idx.resize(max_order, rng.random_range(0..n)),
                    IndexPattern::Distinct => {
                        while idx.len() < max_order {
                            let k = rng.random_range(0..n);
                            if !idx.contains(&k) {
                                idx.push(k);
                            }
                        }
                    }
                }
                for (slot, &o) in acc.iter_mut().zip(orders) {
                    *slot += idx[..o].iter().map(|&k| s[k]).product::<f64>();
                }
            }
            acc.iter().map(|a| a / TUPLES_PER_DRAW as f64).collect()
        });
        for (k, &order) in orders.iter().enumerate() {
            let vals: Vec<f64> = per_draw.iter().map(|v| v[k]).collect();
            let (mean, stderr) = mean_and_stderr(&vals);
            rows.push(MomentRow { n, order, estimate: mean, stderr });
        }
    }
    let fits = orders
        .iter()
        .map(|&o| {
            let pts: Vec<&MomentRow> = rows.iter().filter(|r| r.order == o).collect();
            let fit = if pts.len() >= 2 {
                fit_power_law(
                    &pts.iter().map(|r| r.n as f64).collect::<Vec<_>>(),
                    &pts.iter().map(|r| r.estimate).collect::<Vec<_>>(),
                    &pts.iter().map(|r| r.stderr).collect::<Vec<_>>(),
                )
                .ok()
            } else {
                None
            };
            (o, fit)
        })
        .collect();
    Ok(MomentTable { rows, truncation, pattern, fits })
}

pub fn mean_and_stderr(vals: &[f64]) -> (f64, f64) {
    let s = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / s;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1.0);
    (mean, (var / s).sqrt())
}

/// Covariance `Cov(s_(0), s_(j))` between the particle nearest the origin
/// and the `j`-th nearest, first axis, for `j = 1..N`.
pub fn covariance_profile(spec: &EnsembleSpec, samples: usize) -> Result<Vec<(usize, f64)>> {
    let spec = spec.clone().validated()?;
    if spec.n < 2 || samples < 2 {
        return Err(Error::InvalidArgs("need N >= 2 and samples >= 2".into()));
    }
    let d = spec.dimension;
    let ranked: Vec<Vec<f64>> = monte_carlo(&spec, &[3], samples, |pos, _| {
        let cm = centre_of_mass(pos, d);
        let mut parts: Vec<(f64, f64)> = pos
            .chunks(d)
            .map(|p| (p.iter().map(|x| x * x).sum::<f64>(), p[0] - cm[0]))
            .collect();
        parts.sort_by(|a, b| a.0.total_cmp(&b.0));
        parts.into_iter().map(|p| p.1).collect()
    });
    let s = samples as f64;
    let means: Vec<f64> = (0..spec.n).map(|j| ranked.iter().map(|r| r[j]).sum::<f64>() / s).collect();
    Ok((1..spec.n)
        .map(|j| {
            let cov = ranked.iter().map(|r| (r[0] - means[0]) * (r[j] - means[j])).sum::<f64>() / (s - 1.0);
            (j, cov)
        })
        .collect())
}

/// A radial potential `V(|R|)` for the centre of mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PotentialSpec {
    /// `k r^2 / 2`
    Harmonic { k: f64 },
    /// `k r^2 / 2 + lambda r^4 / 4`
    Quartic { k: f64, lambda: f64 },
    /// Values of `V` on a uniform grid over `[0, r_max]`, linearly interpolated.
    Tabulated { r_max: f64, values: Vec<f64> },
}

impl PotentialSpec {
    pub fn has_analytic_gradient(&self) -> bool {
        !matches!(self, Self::Tabulated { .. })
    }

    fn radial(&self, r: f64) -> (f64, f64) {
        match *self {
            Self::Harmonic { k } => (0.5 * k * r * r, k * r),
            Self::Quartic { k, lambda } => (0.5 * k * r * r + 0.25 * lambda * r.powi(4), k * r + lambda * r.powi(3)),
            Self::Tabulated { r_max, ref values } => {
                let cells = values.len() - 1;
                let h = r_max / cells as f64;
                let pos = (r / h).clamp(0.0, cells as f64);
                let i = (pos.floor() as usize).min(cells - 1);
                let slope = (values[i + 1] - values[i]) / h;
                (values[i] + slope * (pos - i as f64) * h, slope)
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.radial(x.iter().map(|v| v * v).sum::<f64>().sqrt()).0
    }

    /// `grad V`, written into `out`.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            Self::Harmonic { k } => out.iter_mut().zip(x).for_each(|(o, v)| *o = k * v),
            Self::Quartic { k, lambda } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                out.iter_mut().zip(x).for_each(|(o, v)| *o = (k + lambda * r2) * v);
            }
            Self::Tabulated { .. } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dv = if r > 0.0 { self.radial(r).1 / r } else { 0.0 };
                out.iter_mut().zip(x).for_each(|(o, v)| *o = dv * v);
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Tabulated { r_max, values } if values.len() < 2 || !(*r_max > 0.0) => {
                Err(Error::InvalidArgs("tabulated potential needs >= 2 values and r_max > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EhrenfestConfig {
    pub mass: f64,
    pub t_end: f64,
    pub dt: f64,
    pub initial_position: Vec<f64>,
    /// Jitter draws per step (taken in antithetic pairs).
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EhrenfestReport {
    pub n: usize,
    pub jitter_variance: f64,
    /// `max_t |<R>(t) - R_newton(t)|`.
    pub max_deviation: f64,
    /// Relative energy drift of the Newton reference.
    pub energy_drift: f64,
    pub steps: usize,
}

fn verlet<F>(x: &mut [f64], v: &mut [f64], acc: &mut [f64], dt: f64, force: &mut F)
where
    F: FnMut(&[f64], &mut [f64]),
{
    for ((xi, vi), ai) in x.iter_mut().zip(v.iter_mut()).zip(acc.iter()) {
        *vi += 0.5 * dt * ai;
        *xi += dt * *vi;
    }
    force(x, acc);
    for (vi, ai) in v.iter_mut().zip(acc.iter()) {
        *vi += 0.5 * dt * ai;
    }
}

/// Integrates the Newton reference `M R'' = -grad V(R)` alongside the
/// ensemble mean `M <R>'' = -<grad V(<R> + xi)>`, where `xi` is zero-mean
/// centre-of-mass jitter with total variance `particle_variance / N`,
/// redrawn every step in antithetic pairs `(xi, -xi)`.
///
/// Both use the same velocity-Verlet scheme starting at rest.
pub fn ehrenfest_compare(potential: &PotentialSpec, spec: &EnsembleSpec, cfg: &EhrenfestConfig) -> Result<EhrenfestReport> {
    let spec = spec.clone().validated()?;
    potential.validate()?;
    if !(cfg.dt > 0.0) || !(cfg.t_end > 0.0) || !(cfg.mass > 0.0) {
        return Err(Error::InvalidArgs("need dt > 0, t_end > 0 and mass > 0".into()));
    }
    let d = spec.dimension;
    if cfg.initial_position.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: cfg.initial_position.len() });
    }
    let pairs = cfg.samples.div_ceil(2).max(1);
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let jitter_variance = spec.particle_variance() / spec.n as f64;
    let axis_sd = (jitter_variance / d as f64).sqrt();
    let mut rng = rng::stream(spec.seed, &[4, spec.n as u64]);

    let mut reference_force = |x: &[f64], a: &mut [f64]| {
        potential.gradient(x, a);
        a.iter_mut().for_each(|v| *v /= -cfg.mass);
    };
    let mut grad = vec![0.0; d];
    let mut probe = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut mean_force = |x: &[f64], a: &mut [f64]| {
        a.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..pairs {
            xi.iter_mut().for_each(|v| *v = axis_sd * rng.sample::<f64, _>(StandardNormal));
            for sign in [1.0, -1.0] {
                probe.iter_mut().zip(x.iter().zip(&xi)).for_each(|(p, (x, j))| *p = x + sign * j);
                potential.gradient(&probe, &mut grad);
                a.iter_mut().zip(&grad).for_each(|(a, g)| *a += g);
            }
        }
        a.iter_mut().for_each(|v| *v /= -cfg.mass * (2 * pairs) as f64);
    };

    let (mut xr, mut vr, mut ar) = (cfg.initial_position.clone(), vec![0.0; d], vec![0.0; d]);
    let (mut xm, mut vm, mut am) = (cfg.initial_position.clone(), vec![0.0; d], vec![0.0; d]);
    reference_force(&xr, &mut ar);
    mean_force(&xm, &mut am);
    let energy = |x: &[f64], v: &[f64]| potential.value(x) + 0.5 * cfg.mass * v.iter().map(|u| u * u).sum::<f64>();
    let e0 = energy(&xr, &vr);
    let e_scale = e0.abs().max(f64::MIN_POSITIVE);
    let mut energy_drift = 0.0_f64;
    let mut max_deviation = 0.0_f64;
    for _ in 0..steps {
        verlet(&mut xr, &mut vr, &mut ar, cfg.dt, &mut reference_force);
        verlet(&mut xm, &mut vm, &mut am, cfg.dt, &mut mean_force);
        energy_drift = energy_drift.max((energy(&xr, &vr) - e0).abs() / e_scale);
        let dev = xr.iter().zip(&xm).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        max_deviation = max_deviation.max(dev);
    }
    if energy_drift > 0.01 {
        return Err(Error::StepUnstable { drift: energy_drift });
    }
    Ok(EhrenfestReport { n: spec.n, jitter_variance, max_deviation, energy_drift, steps })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EhrenfestScan {
    pub reports: Vec<EhrenfestReport>,
    /// Log-log slope of deviation against `N`; `None` when a deviation is
    /// exactly zero or fewer than two sizes ran.
    pub fit: Option<PowerLawFit>,
}

/// [`ehrenfest_compare`] for each `N`, concurrently, plus the power-law fit.
pub fn ehrenfest_scan(potential: &PotentialSpec, spec: &EnsembleSpec, cfg: &EhrenfestConfig, n_list: &[usize]) -> Result<EhrenfestScan> {
    let reports = n_list
        .par_iter()
        .map(|&n| ehrenfest_compare(potential, &spec.with_n(n), cfg))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = reports.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = reports.iter().map(|r| r.max_deviation).collect();
    let fit = fit_power_law(&xs, &ys, &vec![0.0; ys.len()]).ok();
    Ok(EhrenfestScan { reports, fit })
}
