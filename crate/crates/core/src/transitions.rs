//! Reachability oracles and the protocols behind them.
//!
//! A macrostate can reach a target microstate exactly when the free energy
//! (one observable) or free entropy (several) of its maximum-entropy ensemble
//! is at least that of the target. The same module carries the work bound,
//! the Clausius check, ergotropy, the two-bath passivity witness and the
//! rescaled swap that brings a system to its ensemble.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maxent::{fit_canonical, fit_gge, free_energy, free_entropy, gibbs_state, thermal_energy};
use crate::spectra::{compatibility_deviation, expectation, DiagonalState, Macrostate, ObservableSet, ToleranceConfig};

/// Largest composite dimension accepted by [`trivialization_witness`].
pub const WITNESS_DIM_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityVerdict {
    pub allowed: bool,
    /// Functional of the fitted ensemble.
    pub lhs: f64,
    /// Same functional of the target state.
    pub rhs: f64,
    /// Signed slack; the transition is allowed when `margin >= -tol`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkReport {
    pub delta_f: f64,
    pub initial_f: f64,
    pub final_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapOutcome {
    pub new_system: DiagonalState,
    pub new_env: DiagonalState,
    /// Environment spectrum `(β_S(e)/β) h`, in system level order.
    pub env_spectrum: Vec<f64>,
    pub delta_mean_energy: f64,
}

fn verdict(lhs: f64, rhs: f64, orientation: f64, tol: f64) -> ReachabilityVerdict {
    let margin = orientation * (lhs - rhs);
    ReachabilityVerdict {
        allowed: margin >= -tol,
        lhs,
        rhs,
        margin,
    }
}

/// `(e, H) → target` at bath inverse temperature `beta`.
///
/// Compares free energies `F(γ_e) >= F(target)`. The free energy is
/// `D(ρ‖γ_β)/β` up to a constant, so for `beta < 0` the comparison flips;
/// `margin` always carries the oriented slack.
pub fn reachable_canonical(m: &Macrostate, target: &DiagonalState, beta: f64) -> Result<ReachabilityVerdict> {
    reachable_canonical_with(m, target, beta, &ToleranceConfig::default())
}

pub fn reachable_canonical_with(
    m: &Macrostate,
    target: &DiagonalState,
    beta: f64,
    tol: &ToleranceConfig,
) -> Result<ReachabilityVerdict> {
    if beta == 0.0 {
        return Err(Error::ZeroBeta);
    }
    let obs = m.observables();
    let fit = fit_canonical(obs, m.energy_value()?)?;
    let lhs = free_energy(&fit.state, obs, beta)?;
    let rhs = free_energy(target, obs, beta)?;
    Ok(verdict(lhs, rhs, beta.signum(), tol.decision))
}

/// `(v, Q) → target` with environment multipliers `beta` (all nonzero),
/// decided by the free entropy `G(γ_v) >= G(target)`.
pub fn reachable_gge(m: &Macrostate, target: &DiagonalState, beta: &[f64]) -> Result<ReachabilityVerdict> {
    reachable_gge_with(m, target, beta, &ToleranceConfig::default())
}

pub fn reachable_gge_with(
    m: &Macrostate,
    target: &DiagonalState,
    beta: &[f64],
    tol: &ToleranceConfig,
) -> Result<ReachabilityVerdict> {
    if beta.contains(&0.0) {
        return Err(Error::ZeroBeta);
    }
    let obs = m.observables();
    let fit = fit_gge(obs, m.values())?;
    let lhs = free_entropy(&fit.state, obs, beta)?;
    let rhs = free_entropy(target, obs, beta)?;
    Ok(verdict(lhs, rhs, 1.0, tol.decision))
}

/// Optimal extractable work `F(γ_e) - F(γ_β)` from a system in `(e, H)` with
/// a bath at `beta`.
pub fn work_bound(m: &Macrostate, beta: f64) -> Result<WorkReport> {
    if beta == 0.0 {
        return Err(Error::ZeroBeta);
    }
    let obs = m.observables();
    let fit = fit_canonical(obs, m.energy_value()?)?;
    let initial_f = free_energy(&fit.state, obs, beta)?;
    let thermal = gibbs_state(obs, &[beta])?;
    let final_f = free_energy(&thermal, obs, beta)?;
    Ok(WorkReport {
        delta_f: initial_f - final_f,
        initial_f,
        final_f,
    })
}

/// Whether the macrostate transition `(e, H) → (e', H)` is allowed.
///
/// Decided by `F(γ_e) >= F(γ_e')` (oriented by the sign of `beta`), which is
/// the Clausius form `e' - e <= (S(e') - S(e))/β` rearranged.
pub fn clausius_check(e: f64, e_prime: f64, obs: &ObservableSet, beta: f64) -> Result<bool> {
    if beta == 0.0 {
        return Err(Error::ZeroBeta);
    }
    let from = fit_canonical(obs, e)?;
    let to = fit_canonical(obs, e_prime)?;
    let f_from = free_energy(&from.state, obs, beta)?;
    let f_to = free_energy(&to.state, obs, beta)?;
    Ok(beta.signum() * (f_from - f_to) >= -ToleranceConfig::default().decision)
}

/// Energy above the passive rearrangement of the same populations.
pub fn ergotropy(state: &DiagonalState, obs: &ObservableSet) -> Result<f64> {
    let h = obs.spectrum()?;
    let e = expectation(state, obs)?[0];
    Ok(passive_gap(state.p(), h, e))
}

fn passive_gap(p: &[f64], energies: &[f64], mean: f64) -> f64 {
    let mut pops = p.to_vec();
    pops.sort_by(|a, b| b.total_cmp(a));
    let mut levels = energies.to_vec();
    levels.sort_by(|a, b| a.total_cmp(b));
    let passive: f64 = pops.iter().zip(&levels).map(|(q, x)| q * x).sum();
    (mean - passive).max(0.0)
}

/// Ergotropy of `γ_{β1}(H1)^{⊗n1} ⊗ γ_{β2}(H2)^{⊗n2}` under the summed spectrum.
pub fn trivialization_witness(
    h1: &ObservableSet,
    beta1: f64,
    h2: &ObservableSet,
    beta2: f64,
    n1: usize,
    n2: usize,
) -> Result<f64> {
    let s1 = h1.spectrum()?;
    let s2 = h2.spectrum()?;
    let dim = s1
        .len()
        .checked_pow(n1 as u32)
        .and_then(|a| s2.len().checked_pow(n2 as u32).and_then(|b| a.checked_mul(b)));
    let dim = match dim {
        Some(v) if v <= WITNESS_DIM_LIMIT => v,
        Some(v) => return Err(Error::SizeLimit { dim: v, limit: WITNESS_DIM_LIMIT }),
        None => return Err(Error::SizeLimit { dim: usize::MAX, limit: WITNESS_DIM_LIMIT }),
    };
    let g1 = gibbs_state(h1, &[beta1])?;
    let g2 = gibbs_state(h2, &[beta2])?;

    // Product distribution over the composite levels, built factor by factor.
    let mut probs = vec![1.0];
    let mut energies = vec![0.0];
    let factors = std::iter::repeat_n((g1.p(), s1), n1)
        .chain(std::iter::repeat_n((g2.p(), s2), n2));
    for (p, s) in factors {
        let mut np = Vec::with_capacity(probs.len() * p.len());
        let mut ne = Vec::with_capacity(probs.len() * p.len());
        for (a, e) in probs.iter().zip(&energies) {
            for (b, x) in p.iter().zip(s) {
                np.push(a * b);
                ne.push(e + x);
            }
        }
        probs = np;
        energies = ne;
    }
    debug_assert_eq!(probs.len(), dim);
    let mean: f64 = probs.iter().zip(&energies).map(|(p, e)| p * e).sum();
    Ok(passive_gap(&probs, &energies, mean))
}

/// Swaps the system with an environment whose spectrum is rescaled so that
/// its Gibbs state at `beta` is the system's own canonical ensemble.
pub fn rescaled_swap(system_state: &DiagonalState, m: &Macrostate, beta: f64) -> Result<SwapOutcome> {
    if beta == 0.0 {
        return Err(Error::ZeroBeta);
    }
    let tol = ToleranceConfig::default();
    let obs = m.observables();
    let h = obs.spectrum()?;
    let deviation = compatibility_deviation(system_state, m)?;
    if deviation > tol.compatibility {
        return Err(Error::IncompatibleState(deviation));
    }
    let fit = fit_canonical(obs, m.energy_value()?)?;
    let ratio = fit.beta[0] / beta;
    let env_spectrum: Vec<f64> = h.iter().map(|x| ratio * x).collect();
    // γ_β(H_E) = exp(-β ratio h)/Z = γ_{β_S}(h): same level order as the system.
    let env_state = gibbs_state(obs, &[beta * ratio])?;

    let dot = |p: &[f64], x: &[f64]| p.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    let before = dot(system_state.p(), h) + dot(env_state.p(), &env_spectrum);
    let after = dot(env_state.p(), h) + dot(system_state.p(), &env_spectrum);
    Ok(SwapOutcome {
        new_system: env_state,
        new_env: system_state.clone(),
        env_spectrum,
        delta_mean_energy: after - before,
    })
}

/// Mean energy `e_β(H)` of the bath macrostate.
pub fn bath_energy(obs: &ObservableSet, beta: f64) -> Result<f64> {
    Ok(thermal_energy(obs, &[beta])?[0])
}
