//! Exact distillation of generalized Gibbs states by per-eigenspace randomization.
//!
//! `N` identical copies are prepared in the same diagonal state. A random
//! unitary is applied independently inside every joint eigenspace of the
//! total charges; on average this replaces the state in each eigenspace by
//! its normalized projector. The reduced state of one copy then converges to
//! the generalized Gibbs state with the same mean charges.
//!
//! Eigenspaces are labelled by integer total charges, so the spectra are first
//! approximated by rationals with a common denominator. Everything else is a
//! dynamic program over the charge lattice, carried out in log space.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::maxent::{fit_gge, gibbs_state};
use crate::spectra::{entropy_of, expectation, DiagonalState, ObservableSet};

/// Default cap on the number of charge-lattice points held at once.
pub const DEFAULT_MEMORY_BUDGET: usize = 10_000_000;

/// Observables rescaled to integer charges: eigenvalue = `scale` × charge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegerSpectrum {
    /// `n` rows of `d` integer charges, in the stored level order.
    pub charges: Vec<Vec<i64>>,
    /// Per observable `(numerator, denominator)` of the scale, in lowest terms.
    pub scale: Vec<(i64, i64)>,
    /// Largest absolute difference between an eigenvalue and its rational stand-in.
    pub error: f64,
    pub max_denominator: u64,
}

impl IntegerSpectrum {
    pub fn d(&self) -> usize {
        self.charges[0].len()
    }

    pub fn n(&self) -> usize {
        self.charges.len()
    }

    pub fn scale_f64(&self, j: usize) -> f64 {
        let (p, q) = self.scale[j];
        p as f64 / q as f64
    }

    /// The rational eigenvalues as an observable set (same level order).
    pub fn observables(&self) -> Result<ObservableSet> {
        let rows = self
            .charges
            .iter()
            .enumerate()
            .map(|(j, row)| {
                let (p, q) = self.scale[j];
                row.iter().map(|&k| (k as f64 * p as f64) / q as f64).collect()
            })
            .collect();
        ObservableSet::new(rows)
    }

    /// Joint charge vector of level `alpha`.
    pub fn level(&self, alpha: usize) -> Vec<i64> {
        self.charges.iter().map(|row| row[alpha]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenspaceEntry {
    pub total_charge: Vec<i64>,
    /// Natural log of the eigenspace dimension.
    pub log_dimension: f64,
    /// Weight of the initial product state in this eigenspace.
    pub probability: f64,
    /// Probability that a given copy sits in each level, uniformly over the eigenspace.
    pub occupation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeClassTable {
    pub copies: usize,
    pub entries: Vec<EigenspaceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillationResult {
    pub copies: usize,
    pub reduced: DiagonalState,
    pub target: DiagonalState,
    pub tv_to_target: f64,
    pub log_dim_max: f64,
    pub n_eigenspaces: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StirlingBounds {
    pub lower: f64,
    pub upper: f64,
    pub exact_log: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GadgetReport {
    pub delta: f64,
    /// Ground-state population of the two-level bath at `(β, delta)`.
    pub p0: f64,
    pub weights: (f64, f64),
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Closest fraction `p/q` to `x` with `1 <= q <= max_den`.
///
/// Continued-fraction convergents plus the last admissible semiconvergent;
/// ties go to the convergent.
pub fn best_rational(x: f64, max_den: u64) -> (i64, i64) {
    let n = max_den.max(1) as i128;
    let (mut p0, mut q0, mut p1, mut q1): (i128, i128, i128, i128) = (0, 1, 1, 0);
    let mut r = x;
    loop {
        let a_f = r.floor();
        // Beyond this the next denominator exceeds n whenever q1 >= 1.
        let a = if q1 == 0 { a_f as i128 } else { a_f.min((n + 1) as f64) as i128 };
        let q2 = q0 + a * q1;
        if q2 > n {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p0 + a * p1, q2);
        let frac = r - a_f;
        if frac == 0.0 || (p1 as f64 / q1 as f64) == x {
            break;
        }
        r = 1.0 / frac;
        if !r.is_finite() {
            break;
        }
    }
    let k = (n - q0) / q1;
    let semi = (p0 + k * p1, q0 + k * q1);
    let conv = (p1, q1);
    let err = |(p, q): (i128, i128)| (x - p as f64 / q as f64).abs();
    let (p, q) = if err(conv) <= err(semi) { conv } else { semi };
    (p as i64, q as i64)
}

/// Rational approximation of every eigenvalue with denominator at most
/// `max_denominator`, then a common denominator per observable.
pub fn integerize(obs: &ObservableSet, max_denominator: u64) -> Result<IntegerSpectrum> {
    if max_denominator == 0 {
        return Err(Error::InvalidArgument("max_denominator must be at least 1".into()));
    }
    let mut charges = Vec::with_capacity(obs.n());
    let mut scale = Vec::with_capacity(obs.n());
    let mut error = 0.0f64;
    for row in obs.rows() {
        let fracs: Vec<(i64, i64)> = row.iter().map(|&x| best_rational(x, max_denominator)).collect();
        for (&x, &(p, q)) in row.iter().zip(&fracs) {
            error = error.max((x - p as f64 / q as f64).abs());
        }
        let mut lcm: i128 = 1;
        for &(_, q) in &fracs {
            let q = q as i128;
            lcm = (lcm / gcd(lcm, q)).checked_mul(q).ok_or(Error::IntegerOverflow)?;
            if lcm > i64::MAX as i128 {
                return Err(Error::IntegerOverflow);
            }
        }
        let mut ints: Vec<i128> = Vec::with_capacity(fracs.len());
        for &(p, q) in &fracs {
            let v = (p as i128).checked_mul(lcm / q as i128).ok_or(Error::IntegerOverflow)?;
            ints.push(v);
        }
        let g = ints.iter().fold(0i128, |acc, &v| gcd(acc, v)).max(1);
        let mut num = g;
        let mut den = lcm;
        let r = gcd(num, den);
        num /= r;
        den /= r;
        let row: Vec<i64> = ints
            .iter()
            .map(|&v| i64::try_from(v / g).map_err(|_| Error::IntegerOverflow))
            .collect::<Result<_>>()?;
        charges.push(row);
        scale.push((
            i64::try_from(num).map_err(|_| Error::IntegerOverflow)?,
            i64::try_from(den).map_err(|_| Error::IntegerOverflow)?,
        ));
    }
    Ok(IntegerSpectrum { charges, scale, error, max_denominator })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// One DP layer: log-dimension and initial-state weight per total charge.
type Layer = BTreeMap<Vec<i64>, (f64, f64)>;

fn advance(prev: &Layer, levels: &[Vec<i64>], p: &[f64], budget: usize) -> Result<Layer> {
    let mut logs: BTreeMap<Vec<i64>, (Vec<f64>, f64)> = BTreeMap::new();
    for (xi, &(log_dim, prob)) in prev {
        for (c, &pa) in levels.iter().zip(p) {
            let key: Vec<i64> = xi
                .iter()
                .zip(c)
                .map(|(a, b)| a.checked_add(*b).ok_or(Error::IntegerOverflow))
                .collect::<Result<_>>()?;
            let slot = logs.entry(key).or_insert_with(|| (Vec::new(), 0.0));
            slot.0.push(log_dim);
            slot.1 += prob * pa;
        }
        if logs.len() > budget {
            return Err(Error::ChargeRangeOverflow { points: logs.len(), budget });
        }
    }
    Ok(logs
        .into_iter()
        .map(|(k, (ls, prob))| (k, (log_sum_exp(&ls), prob)))
        .collect())
}

pub fn eigenspace_table(ispec: &IntegerSpectrum, initial: &DiagonalState, copies: usize) -> Result<TypeClassTable> {
    eigenspace_table_with_budget(ispec, initial, copies, DEFAULT_MEMORY_BUDGET)
}

pub fn eigenspace_table_with_budget(
    ispec: &IntegerSpectrum,
    initial: &DiagonalState,
    copies: usize,
    budget: usize,
) -> Result<TypeClassTable> {
    let d = ispec.d();
    if initial.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: initial.dim() });
    }
    if copies == 0 {
        return Err(Error::InvalidArgument("copies must be at least 1".into()));
    }
    let levels: Vec<Vec<i64>> = (0..d).map(|a| ispec.level(a)).collect();
    let mut prev: Layer = BTreeMap::new();
    prev.insert(vec![0; ispec.n()], (0.0, 1.0));
    for _ in 0..copies - 1 {
        prev = advance(&prev, &levels, initial.p(), budget)?;
    }
    let last = advance(&prev, &levels, initial.p(), budget)?;

    // A fixed copy is in level α with probability D_{N-1}(ξ - c_α) / D_N(ξ).
    let mut entries = Vec::with_capacity(last.len());
    for (xi, &(log_dim, probability)) in &last {
        let mut occupation = Vec::with_capacity(d);
        for c in &levels {
            let rest: Vec<i64> = xi.iter().zip(c).map(|(a, b)| a - b).collect();
            let o = prev.get(&rest).map_or(0.0, |&(l, _)| (l - log_dim).exp());
            occupation.push(o);
        }
        entries.push(EigenspaceEntry {
            total_charge: xi.clone(),
            log_dimension: log_dim,
            probability,
            occupation,
        });
    }
    Ok(TypeClassTable { copies, entries })
}

pub fn distilled_state(ispec: &IntegerSpectrum, initial: &DiagonalState, copies: usize) -> Result<DistillationResult> {
    distilled_state_with_budget(ispec, initial, copies, DEFAULT_MEMORY_BUDGET)
}

pub fn distilled_state_with_budget(
    ispec: &IntegerSpectrum,
    initial: &DiagonalState,
    copies: usize,
    budget: usize,
) -> Result<DistillationResult> {
    let obs = ispec.observables()?;
    let target = fit_gge(&obs, &expectation(initial, &obs)?)?.state;
    let table = eigenspace_table_with_budget(ispec, initial, copies, budget)?;
    let d = ispec.d();
    let mut reduced = vec![0.0; d];
    for e in &table.entries {
        for (r, o) in reduced.iter_mut().zip(&e.occupation) {
            *r += e.probability * o;
        }
    }
    let reduced = DiagonalState::new(reduced.clone()).or_else(|_| DiagonalState::from_weights(&reduced))?;
    let tv_to_target = reduced.tv_distance(&target);
    let log_dim_max = table
        .entries
        .iter()
        .map(|e| e.log_dimension)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DistillationResult {
        copies,
        reduced,
        target,
        tv_to_target,
        log_dim_max,
        n_eigenspaces: table.entries.len(),
    })
}

/// Log of the multinomial `N! / Π k_x!` with Stirling-type bounds built
/// from `N S(T)` and explicit polynomial prefactors.
pub fn stirling_sandwich(type_counts: &[u64]) -> Result<StirlingBounds> {
    let total: u64 = type_counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("type counts must sum to at least 1".into()));
    }
    let n = total as f64;
    let nonzero: Vec<f64> = type_counts.iter().filter(|&&k| k > 0).map(|&k| k as f64).collect();
    let m = nonzero.len() as f64;
    let freqs: Vec<f64> = nonzero.iter().map(|k| k / n).collect();
    let n_entropy = n * entropy_of(&freqs);
    let half_log_k: f64 = nonzero.iter().map(|k| 0.5 * k.ln()).sum();
    let ln_sqrt_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let exact_log = ln_gamma(n + 1.0) - nonzero.iter().map(|k| ln_gamma(k + 1.0)).sum::<f64>();
    Ok(StirlingBounds {
        lower: ln_sqrt_2pi - m + 0.5 * n.ln() - half_log_k + n_entropy,
        upper: 1.0 + 0.5 * n.ln() - m * ln_sqrt_2pi - half_log_k + n_entropy,
        exact_log,
    })
}

/// Energy gap of a two-level bath whose Gibbs ground population is `1/√2`.
///
/// Swapping a bit conditioned on that bath mixes two unitaries with equal
/// weights, which turns the bath into a fair coin.
pub fn randomness_gadget(beta: f64) -> Result<GadgetReport> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::NonpositiveBeta(beta));
    }
    let delta = std::f64::consts::SQRT_2.ln_1p() / beta;
    let bath = ObservableSet::hamiltonian(&[0.0, delta])?;
    let p0 = gibbs_state(&bath, &[beta])?.p()[0];
    // p0² = 1/2 analytically; report the exact weights.
    Ok(GadgetReport { delta, p0, weights: (0.5, 0.5) })
}
