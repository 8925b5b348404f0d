//! Moments of the total energy change of many independent subsystems.
//!
//! Each subsystem contributes an energy change `X_i` with a finite
//! distribution. Cumulants add under independence, so the central moments of
//! `X = Σ X_i` (and of the per-subsystem average `X/N`) follow exactly from the
//! per-subsystem cumulants, without convolving distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::{DiagonalState, ObservableSet};

/// Highest supported moment order.
pub const MAX_ORDER: usize = 8;

/// Finite distribution; support points are sorted, merged when they coincide,
/// and dropped when they carry no probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    support: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub n_subsystems: usize,
    /// `μ_n(X/N)` for `n = 2..=max_order`.
    pub central_moments_of_mean: Vec<f64>,
    /// Normal moments with the same variance; odd orders are zero.
    pub gaussian_reference: Vec<f64>,
    /// Lyapunov ratio with `δ = 1`; `None` when the total variance vanishes.
    pub lyapunov_ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub moment: f64,
    pub gaussian: f64,
}

fn same_point(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

impl DiscreteDistribution {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::DimensionMismatch { expected: support.len(), got: probs.len() });
        }
        if support.is_empty() {
            return Err(Error::InvalidArgument("empty support".into()));
        }
        if support.iter().chain(&probs).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite support or probability".into()));
        }
        if probs.iter().any(|&p| p < -1e-12) {
            return Err(Error::InvalidState("negative probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!("probabilities sum to {total}")));
        }
        let mut pairs: Vec<(f64, f64)> = support
            .into_iter()
            .zip(probs)
            .filter(|&(_, p)| p > 0.0)
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support = Vec::with_capacity(pairs.len());
        let mut merged: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, p) in pairs {
            match support.last() {
                Some(&last) if same_point(last, x) => *merged.last_mut().unwrap() += p,
                _ => {
                    support.push(x);
                    merged.push(p);
                }
            }
        }
        Ok(DiscreteDistribution { support, probs: merged })
    }

    pub fn point_mass(x: f64) -> Self {
        DiscreteDistribution { support: vec![x], probs: vec![1.0] }
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.probs).map(|(x, p)| x * p).sum()
    }

    pub fn variance(&self) -> f64 {
        self.central_moment(2)
    }

    /// `E[(X - μ)^n]`.
    pub fn central_moment(&self, n: usize) -> f64 {
        let mu = self.mean();
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(x, p)| p * (x - mu).powi(n as i32))
            .sum()
    }

    /// `E|X - μ|^r`.
    pub fn absolute_central_moment(&self, r: f64) -> f64 {
        let mu = self.mean();
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(x, p)| p * (x - mu).abs().powf(r))
            .sum()
    }

    /// Cumulants `κ_1..=κ_order` (index 0 holds `κ_1`).
    pub fn cumulants(&self, order: usize) -> Vec<f64> {
        // Cumulants of order >= 2 are shift invariant; work with centered moments.
        let mut raw = vec![1.0];
        raw.extend((1..=order).map(|n| if n == 1 { 0.0 } else { self.central_moment(n) }));
        let mut k = raw_to_cumulants(&raw);
        if let Some(first) = k.first_mut() {
            *first = self.mean();
        }
        k
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `raw[0] = 1, raw[n] = E[X^n]` → `κ_1..`.
fn raw_to_cumulants(raw: &[f64]) -> Vec<f64> {
    let order = raw.len() - 1;
    let mut k = vec![0.0; order + 1];
    for n in 1..=order {
        let mut v = raw[n];
        for m in 1..n {
            v -= binomial(n - 1, m - 1) * k[m] * raw[n - m];
        }
        k[n] = v;
    }
    k.remove(0);
    k
}

/// `κ_1..` → central moments `μ_0..` (with `μ_0 = 1`, `μ_1 = 0`).
fn cumulants_to_central(k: &[f64]) -> Vec<f64> {
    let order = k.len();
    let mut mu = vec![0.0; order + 1];
    mu[0] = 1.0;
    for n in 2..=order {
        // κ_1 = 0 for the centered variable.
        mu[n] = (2..=n).map(|m| binomial(n - 1, m - 1) * k[m - 1] * mu[n - m]).sum();
    }
    mu
}

fn double_factorial_odd(n: usize) -> f64 {
    // (2n - 1)!!
    (1..=n).map(|i| (2 * i - 1) as f64).product()
}

fn gaussian_moment(var: f64, order: usize) -> f64 {
    if order % 2 == 1 {
        0.0
    } else {
        var.powi((order / 2) as i32) * double_factorial_odd(order / 2)
    }
}

fn check_order(max_order: usize) -> Result<()> {
    if max_order > MAX_ORDER {
        return Err(Error::OrderTooHigh(max_order));
    }
    if max_order < 2 {
        return Err(Error::InvalidOrder(max_order));
    }
    Ok(())
}

/// Distribution of `E_final - E_initial` when the initial and final levels are
/// drawn independently from the two states.
pub fn subsystem_energy_change(
    initial: &DiagonalState,
    final_state: &DiagonalState,
    obs: &ObservableSet,
) -> Result<DiscreteDistribution> {
    let h = obs.spectrum()?;
    for s in [initial, final_state] {
        if s.dim() != h.len() {
            return Err(Error::DimensionMismatch { expected: h.len(), got: s.dim() });
        }
    }
    let mut support = Vec::with_capacity(h.len() * h.len());
    let mut probs = Vec::with_capacity(h.len() * h.len());
    for (ha, pa) in h.iter().zip(initial.p()) {
        for (hb, pb) in h.iter().zip(final_state.p()) {
            support.push(hb - ha);
            probs.push(pa * pb);
        }
    }
    let total: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= total;
    }
    DiscreteDistribution::new(support, probs)
}

fn report(n: usize, cumulant_sum: &[f64], lyapunov: Option<f64>) -> MomentReport {
    let nf = n as f64;
    let mu = cumulants_to_central(cumulant_sum);
    let var_mean = cumulant_sum[1] / (nf * nf);
    let orders = 2..=cumulant_sum.len();
    MomentReport {
        n_subsystems: n,
        central_moments_of_mean: orders.clone().map(|k| mu[k] / nf.powi(k as i32)).collect(),
        gaussian_reference: orders.map(|k| gaussian_moment(var_mean, k)).collect(),
        lyapunov_ratio: lyapunov,
    }
}

/// Exact central moments of `X/N` for independent `X_i`.
pub fn moments_of_sum(dists: &[DiscreteDistribution], max_order: usize) -> Result<MomentReport> {
    check_order(max_order)?;
    if dists.is_empty() {
        return Err(Error::InvalidArgument("need at least one subsystem".into()));
    }
    let mut k = vec![0.0; max_order];
    for d in dists {
        for (acc, v) in k.iter_mut().zip(d.cumulants(max_order)) {
            *acc += v;
        }
    }
    let lyap = match lyapunov_check(dists, 1.0) {
        Ok(r) => Some(r),
        Err(Error::ZeroVariance) => None,
        Err(e) => return Err(e),
    };
    Ok(report(dists.len(), &k, lyap))
}

/// [`moments_of_sum`] for `n` independent copies of one distribution.
pub fn moments_of_iid(dist: &DiscreteDistribution, n: usize, max_order: usize) -> Result<MomentReport> {
    check_order(max_order)?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one subsystem".into()));
    }
    let k: Vec<f64> = dist.cumulants(max_order).into_iter().map(|v| v * n as f64).collect();
    let var = dist.variance();
    let lyap = (var > 0.0).then(|| {
        let nf = n as f64;
        nf * dist.absolute_central_moment(3.0) / (nf * var).powf(1.5)
    });
    Ok(report(n, &k, lyap))
}

/// `Σ E|X_i - μ_i|^{2+δ} / s_N^{2+δ}`.
pub fn lyapunov_check(dists: &[DiscreteDistribution], delta: f64) -> Result<f64> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let s2: f64 = dists.iter().map(DiscreteDistribution::variance).sum();
    if !(s2 > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let num: f64 = dists.iter().map(|d| d.absolute_central_moment(2.0 + delta)).sum();
    Ok(num / s2.powf(1.0 + delta / 2.0))
}

/// `μ_order(X/N)` and its normal counterpart for i.i.d. copies, per `N` in `n_grid`.
pub fn higher_moments_vanish(dist: &DiscreteDistribution, n_grid: &[usize], order: usize) -> Result<Vec<ScalingRow>> {
    if order < 2 || order % 2 == 1 {
        return Err(Error::InvalidOrder(order));
    }
    check_order(order)?;
    n_grid
        .iter()
        .map(|&n| {
            let r = moments_of_iid(dist, n, order)?;
            Ok(ScalingRow {
                n,
                moment: r.central_moments_of_mean[order - 2],
                gaussian: r.gaussian_reference[order - 2],
            })
        })
        .collect()
}
