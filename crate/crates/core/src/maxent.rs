//! Canonical and generalized Gibbs ensembles.
//!
//! The ensemble for multipliers `β` is `p_α ∝ exp(-Σ_j β^j q^j_α)`. Fitting a
//! macrostate means finding the `β` whose ensemble reproduces the mean values;
//! for one observable the mean energy is strictly decreasing in `β` and a
//! bracketed root finder suffices, for several observables we minimize the
//! convex dual `ln Z(β) + β·v` with damped Newton steps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Sense};
use crate::spectra::{
    entropy_of, expectation, numerical_rank, shannon_entropy, DiagonalState, Macrostate,
    ObservableSet, ToleranceConfig,
};

/// Largest `|β| · spread` kept representable by `exp`.
const EXPONENT_CLAMP: f64 = 700.0;
const MAX_ITERATIONS: usize = 500;
const CONDITION_LIMIT: f64 = 1e12;

/// A fitted maximum-entropy ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SolutionRepr", into = "SolutionRepr")]
pub struct GibbsSolution {
    pub beta: Vec<f64>,
    pub state: DiagonalState,
    /// Max over observables of `|Tr(Q^j γ) - v^j|`.
    pub residual: f64,
    pub iterations: usize,
    /// Set when the observables are affinely dependent; `beta` is then the
    /// minimum-norm multiplier vector.
    pub rank_deficient: bool,
}

#[derive(Serialize, Deserialize)]
struct SolutionRepr {
    beta: Vec<f64>,
    p: Vec<f64>,
    residual: f64,
    iterations: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    rank_deficient: bool,
}

impl TryFrom<SolutionRepr> for GibbsSolution {
    type Error = Error;
    fn try_from(r: SolutionRepr) -> Result<Self> {
        Ok(GibbsSolution {
            beta: r.beta,
            state: DiagonalState::new(r.p)?,
            residual: r.residual,
            iterations: r.iterations,
            rank_deficient: r.rank_deficient,
        })
    }
}

impl From<GibbsSolution> for SolutionRepr {
    fn from(s: GibbsSolution) -> Self {
        SolutionRepr {
            beta: s.beta,
            p: s.state.p().to_vec(),
            residual: s.residual,
            iterations: s.iterations,
            rank_deficient: s.rank_deficient,
        }
    }
}

// Log-weights -Σ_j β^j (q^j_α - shift_j), shifted by their maximum.
fn log_weights(obs: &ObservableSet, beta: &[f64], shift: &[f64]) -> Vec<f64> {
    let d = obs.d();
    let mut lw = vec![0.0; d];
    for (j, row) in obs.rows().iter().enumerate() {
        if beta[j] == 0.0 {
            continue;
        }
        for (w, q) in lw.iter_mut().zip(row) {
            *w -= beta[j] * (q - shift[j]);
        }
    }
    lw
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn probabilities(lw: &[f64]) -> Vec<f64> {
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

fn check_beta(obs: &ObservableSet, beta: &[f64]) -> Result<()> {
    if beta.len() != obs.n() {
        return Err(Error::DimensionMismatch {
            expected: obs.n(),
            got: beta.len(),
        });
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument("multipliers must be finite".into()));
    }
    Ok(())
}

fn mins(obs: &ObservableSet) -> Vec<f64> {
    (0..obs.n()).map(|j| obs.min(j)).collect()
}

/// `ln Tr exp(-Σ_j β^j Q^j)`.
pub fn log_partition(obs: &ObservableSet, beta: &[f64]) -> Result<f64> {
    check_beta(obs, beta)?;
    let zero = vec![0.0; obs.n()];
    Ok(log_sum_exp(&log_weights(obs, beta, &zero)))
}

/// The ensemble `exp(-Σ β^j Q^j) / Z`, evaluated in log space.
pub fn gibbs_state(obs: &ObservableSet, beta: &[f64]) -> Result<DiagonalState> {
    check_beta(obs, beta)?;
    let p = probabilities(&log_weights(obs, beta, &mins(obs)));
    DiagonalState::new(p)
}

/// Mean values of the ensemble at `beta`.
pub fn thermal_energy(obs: &ObservableSet, beta: &[f64]) -> Result<Vec<f64>> {
    check_beta(obs, beta)?;
    let shift = mins(obs);
    let p = probabilities(&log_weights(obs, beta, &shift));
    Ok(shifted_means(obs, &p, &shift))
}

fn shifted_means(obs: &ObservableSet, p: &[f64], shift: &[f64]) -> Vec<f64> {
    obs.rows()
        .iter()
        .zip(shift)
        .map(|(row, c)| c + row.iter().zip(p).map(|(q, w)| w * (q - c)).sum::<f64>())
        .collect()
}

/// Covariance matrix of the observables under `p`.
pub fn covariance(obs: &ObservableSet, p: &[f64]) -> DMatrix<f64> {
    let n = obs.n();
    let means: Vec<f64> = obs
        .rows()
        .iter()
        .map(|row| row.iter().zip(p).map(|(q, w)| q * w).sum())
        .collect();
    DMatrix::from_fn(n, n, |a, b| {
        obs.row(a)
            .iter()
            .zip(obs.row(b))
            .zip(p)
            .map(|((x, y), w)| w * (x - means[a]) * (y - means[b]))
            .sum()
    })
}

/// Canonical ensemble `γ_e(H)` with `Tr(γ H) = e`, using default tolerances.
pub fn fit_canonical(obs: &ObservableSet, e: f64) -> Result<GibbsSolution> {
    fit_canonical_with(obs, e, &ToleranceConfig::default())
}

pub fn fit_canonical_with(obs: &ObservableSet, e: f64, tol: &ToleranceConfig) -> Result<GibbsSolution> {
    let h = obs.spectrum()?;
    let lo = h[0];
    let hi = h[h.len() - 1];
    let spread = hi - lo;
    if spread <= 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    if !(e > lo && e < hi) {
        return Err(Error::OutOfRange { value: e, lo, hi });
    }
    let clamp = EXPONENT_CLAMP / spread;

    // Shifted energies keep relative precision near the spectral edges.
    let shifted: Vec<f64> = h.iter().map(|v| v - lo).collect();
    let target = e - lo;
    let moments = |beta: f64| -> (f64, f64) {
        let lw: Vec<f64> = shifted.iter().map(|x| -beta * x).collect();
        let p = probabilities(&lw);
        let mean: f64 = p.iter().zip(&shifted).map(|(w, x)| w * x).sum();
        let var: f64 = p.iter().zip(&shifted).map(|(w, x)| w * (x - mean) * (x - mean)).sum();
        (mean, var)
    };
    let f = |beta: f64| moments(beta).0 - target;

    let out_of_range = Error::OutOfRange { value: e, lo, hi };
    let mut a = -1.0f64;
    let mut b = 1.0f64;
    while f(b) > 0.0 {
        a = b;
        b *= 2.0;
        if b > clamp {
            if f(clamp) > 0.0 {
                return Err(out_of_range);
            }
            b = clamp;
            break;
        }
    }
    while f(a) < 0.0 {
        b = a;
        a *= 2.0;
        if a < -clamp {
            if f(-clamp) < 0.0 {
                return Err(out_of_range);
            }
            a = -clamp;
            break;
        }
    }

    // f is decreasing: f(a) >= 0 >= f(b).
    let mut iterations = 0;
    let mut beta = 0.5 * (a + b);
    while iterations < 200 && (b - a) > 1e-2 * (1.0 + beta.abs()) / spread {
        beta = 0.5 * (a + b);
        if f(beta) > 0.0 {
            a = beta;
        } else {
            b = beta;
        }
        iterations += 1;
    }
    beta = 0.5 * (a + b);
    let mut best = (f(beta).abs(), beta);
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (mean, var) = moments(beta);
        let r = mean - target;
        if r.abs() < best.0 {
            best = (r.abs(), beta);
        }
        if r == 0.0 {
            break;
        }
        if r > 0.0 {
            a = a.max(beta);
        } else {
            b = b.min(beta);
        }
        let mut next = if var > 0.0 { beta + r / var } else { f64::NAN };
        if !(next > a && next < b) {
            next = 0.5 * (a + b);
        }
        if (next - beta).abs() <= 4.0 * f64::EPSILON * beta.abs().max(1.0 / spread) {
            let r_next = f(next).abs();
            if r_next < best.0 {
                best = (r_next, next);
            }
            break;
        }
        beta = next;
    }
    let beta = best.1;
    let state = gibbs_state(obs, &[beta])?;
    let residual = (thermal_energy(obs, &[beta])?[0] - e).abs();
    if residual > tol.fit {
        return Err(Error::NoConvergence { iterations, residual });
    }
    Ok(GibbsSolution {
        beta: vec![beta],
        state,
        residual,
        iterations,
        rank_deficient: false,
    })
}

/// Largest `t` such that `v` is a convex combination of the joint eigenvalue
/// vectors with every weight at least `t`; `None` if `v` is outside the hull.
fn hull_depth(obs: &ObservableSet, v: &[f64]) -> Option<f64> {
    let d = obs.d();
    // Variables: μ_α >= 0 (α < d), t >= 0; weights are μ_α + t.
    let mut lp = LinearProgram::new(d + 1, Sense::Maximize);
    let mut c = vec![0.0; d + 1];
    c[d] = 1.0;
    lp.set_objective(c);
    let mut norm = vec![1.0; d + 1];
    norm[d] = d as f64;
    lp.add_equality(norm, 1.0);
    for (j, row) in obs.rows().iter().enumerate() {
        let mut coeffs = row.clone();
        coeffs.push(row.iter().sum());
        lp.add_equality(coeffs, v[j]);
    }
    lp.solve().ok().map(|s| s.objective)
}

/// Generalized Gibbs ensemble reproducing the mean values `v`.
pub fn fit_gge(obs: &ObservableSet, v: &[f64]) -> Result<GibbsSolution> {
    fit_gge_with(obs, v, &ToleranceConfig::default())
}

pub fn fit_gge_with(obs: &ObservableSet, v: &[f64], tol: &ToleranceConfig) -> Result<GibbsSolution> {
    let n = obs.n();
    let d = obs.d();
    if v.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("mean values must be finite".into()));
    }
    match hull_depth(obs, v) {
        Some(t) if t > 1e-12 => {}
        _ => return Err(Error::OutsideHull),
    }

    let means = obs.means();
    let centered = DMatrix::from_fn(n, d, |j, a| obs.row(j)[a] - means[j]);
    let rank_deficient = numerical_rank(&centered) < n;
    if rank_deficient {
        log::warn!("observables are affinely dependent; returning minimum-norm multipliers");
    }

    let shift = mins(obs);
    let spreads: Vec<f64> = (0..n).map(|j| obs.max(j) - obs.min(j)).collect();
    let scale = spreads.iter().copied().fold(0.0f64, f64::max).max(1.0);
    let dual = |beta: &[f64]| -> f64 {
        let lz = log_sum_exp(&log_weights(obs, beta, &shift));
        lz + beta
            .iter()
            .zip(v.iter().zip(&shift))
            .map(|(b, (x, c))| b * (x - c))
            .sum::<f64>()
    };

    let mut beta = vec![0.0; n];
    let mut iterations = 0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let stop = 1e-14 * scale;
    loop {
        let p = probabilities(&log_weights(obs, &beta, &shift));
        let m = shifted_means(obs, &p, &shift);
        let grad: Vec<f64> = v.iter().zip(&m).map(|(x, y)| x - y).collect();
        let residual = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, beta.clone()));
        }
        if residual <= stop || iterations >= MAX_ITERATIONS {
            break;
        }
        iterations += 1;

        let hess = covariance(obs, &p);
        let g = DVector::from_vec(grad.clone());
        let svd = hess.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let step: DVector<f64> = if rank_deficient {
            svd.solve(&(-&g), smax * 1e-12)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
        } else if smin <= 0.0 || smax / smin > CONDITION_LIMIT {
            -&g
        } else {
            svd.solve(&(-&g), 0.0)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
        };

        // Backtracking on the convex dual; its gradient is -g.
        let f0 = dual(&beta);
        let slope = -g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-16 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let ft = dual(&trial);
            if ft <= f0 + 1e-4 * t * slope || (ft - f0).abs() <= 1e-15 * f0.abs().max(1.0) {
                beta = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if beta
            .iter()
            .zip(&spreads)
            .any(|(b, s)| *s > 0.0 && b.abs() > EXPONENT_CLAMP / s)
        {
            return Err(Error::OutsideHull);
        }
        if !accepted {
            break;
        }
    }

    let (_, beta) = best.expect("at least one iterate");
    let state = gibbs_state(obs, &beta)?;
    let m = shifted_means(obs, state.p(), &shift);
    let residual = v.iter().zip(&m).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
    if residual > tol.fit {
        return Err(Error::NoConvergence { iterations, residual });
    }
    Ok(GibbsSolution {
        beta,
        state,
        residual,
        iterations,
        rank_deficient,
    })
}

/// `F = Tr(ρH) - S(ρ)/β` for a single observable.
pub fn free_energy(state: &DiagonalState, obs: &ObservableSet, beta: f64) -> Result<f64> {
    obs.spectrum()?;
    if beta == 0.0 {
        return Err(Error::ZeroBeta);
    }
    let e = expectation(state, obs)?[0];
    Ok(e - shannon_entropy(state) / beta)
}

/// Free entropy `G = Σ_j β^j Tr(ρ Q^j) - S(ρ)`.
pub fn free_entropy(state: &DiagonalState, obs: &ObservableSet, beta: &[f64]) -> Result<f64> {
    check_beta(obs, beta)?;
    let ev = expectation(state, obs)?;
    Ok(beta.iter().zip(&ev).map(|(b, x)| b * x).sum::<f64>() - shannon_entropy(state))
}

/// Entropy state function on macrostates: `β_S(e) (e - F(e,H))`, with
/// `F(e,H)` the free energy of `γ_e(H)` at its own temperature.
pub fn gibbs_entropy_macro(m: &Macrostate) -> Result<f64> {
    let e = m.energy_value()?;
    let fit = fit_canonical(m.observables(), e)?;
    let beta = fit.beta[0];
    if beta == 0.0 {
        return Ok(entropy_of(fit.state.p()));
    }
    let f = free_energy(&fit.state, m.observables(), beta)?;
    Ok(beta * (e - f))
}
