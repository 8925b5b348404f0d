//! Gibbs-preserving stochastic maps and reachable energies.
//!
//! On diagonal states a Gibbs-preserving channel acts as a column-stochastic
//! matrix `M` with `M γ_β = γ_β`. Every state in the energy class `[e]_H`
//! splits as `γ_β + α(e)(h - t) + N`, where `N` lies in the traceless,
//! `h`-orthogonal subspace. Maps that keep that subspace energy-neutral send
//! whole classes to classes; the extreme energies they reach are governed by
//! two constants found by linear programming. Comparing those bounds with the
//! unrestricted Gibbs-preserving bounds exhibits a strict gap between the two
//! notions of reachability.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Sense};
use crate::maxent::{fit_canonical, gibbs_state, thermal_energy};
use crate::spectra::{DiagonalState, ObservableSet};

/// Constraint residual accepted at an LP optimum.
const LP_CHECK: f64 = 1e-9;
/// Threshold separating a real gap from LP round-off.
pub const GAP_THRESHOLD: f64 = 1e-7;

/// Orthonormal basis of `{v : Σv = 0, h·v = 0}`; it has `d - 2` elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSpaceBasis {
    pub basis: Vec<Vec<f64>>,
}

impl NSpaceBasis {
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Orthogonal projection of `x` onto the span.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for v in &self.basis {
            let c = dot(v, x);
            for (o, vi) in out.iter_mut().zip(v) {
                *o += c * vi;
            }
        }
        out
    }
}

/// Column-stochastic matrix; `apply` maps probability vectors to probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMap {
    m: DMatrix<f64>,
}

impl StochasticMap {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
        }
        if m.iter().any(|&x| !x.is_finite() || x < -1e-12) {
            return Err(Error::InvalidArgument("stochastic map has negative entries".into()));
        }
        for j in 0..m.ncols() {
            let s: f64 = m.column(j).sum();
            if (s - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!("column {j} sums to {s}")));
            }
        }
        Ok(StochasticMap { m })
    }

    pub fn identity(d: usize) -> Self {
        StochasticMap { m: DMatrix::identity(d, d) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| (0..d).map(|j| self.m[(i, j)] * p[j]).sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpStatus {
    pub iterations_max: usize,
    pub iterations_min: usize,
    /// Worst constraint residual over both optimal vertices.
    pub max_violation: f64,
}

/// The constants `F` (max) and `K` (min) of `h·M(h - t)` over class-preserving
/// Gibbs-preserving maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GPConstants {
    pub f_const: f64,
    pub k_const: f64,
    pub lp_status: LpStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub alpha_coeff: f64,
    pub n_component: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub e: f64,
    pub gp_min: f64,
    pub gp_max: f64,
    pub th_min: f64,
    pub th_max: f64,
    pub e_beta: f64,
}

impl BreakdownRow {
    /// How far the thermal interval sticks out of the class-preserving one.
    pub fn gap(&self) -> f64 {
        (self.th_max - self.gp_max).max(self.gp_min - self.th_min)
    }

    /// How far the class-preserving interval sticks out of the thermal one
    /// (zero when nested as expected).
    pub fn sandwich_violation(&self) -> f64 {
        (self.th_min - self.gp_min).max(self.gp_max - self.th_max).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownScan {
    pub rows: Vec<BreakdownRow>,
    pub strict_gap: bool,
    pub max_gap: f64,
    pub max_sandwich_violation: f64,
    pub constants: GPConstants,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_beta(beta: f64) -> Result<()> {
    if beta == 0.0 {
        Err(Error::ZeroBeta)
    } else if !beta.is_finite() {
        Err(Error::InvalidArgument(format!("beta must be finite, got {beta}")))
    } else {
        Ok(())
    }
}

fn is_trivial(h: &[f64]) -> bool {
    let d = h.len() as f64;
    let m = h.iter().sum::<f64>() / d;
    let c2: f64 = h.iter().map(|x| (x - m) * (x - m)).sum();
    let scale = h.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    scale == 0.0 || c2.sqrt() <= 1e-12 * scale
}

pub fn nspace_basis(obs: &ObservableSet) -> Result<NSpaceBasis> {
    let h = obs.spectrum()?;
    let d = h.len();
    if is_trivial(h) {
        return Err(Error::TrivialHamiltonian);
    }
    if d < 3 {
        return Err(Error::DimensionTooSmall(d));
    }
    // Orthonormal frame for span{1, h}, then Gram–Schmidt over unit vectors.
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(d);
    let push = |v: Vec<f64>, frame: &mut Vec<Vec<f64>>| -> bool {
        let mut w = v;
        for _ in 0..2 {
            for f in frame.iter() {
                let c = dot(f, &w);
                for (wi, fi) in w.iter_mut().zip(f) {
                    *wi -= c * fi;
                }
            }
        }
        let norm = dot(&w, &w).sqrt();
        if norm > 1e-8 {
            frame.push(w.into_iter().map(|x| x / norm).collect());
            true
        } else {
            false
        }
    };
    push(vec![1.0; d], &mut frame);
    push(h.to_vec(), &mut frame);
    for i in 0..d {
        if frame.len() == d {
            break;
        }
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        push(e, &mut frame);
    }
    debug_assert_eq!(frame.len(), d);
    Ok(NSpaceBasis { basis: frame.split_off(2) })
}

/// The vector `t = a·1 + b·h` with `Σt = Σh` and `h·t = 0`.
pub fn t_matrix(obs: &ObservableSet) -> Result<Vec<f64>> {
    let h = obs.spectrum()?;
    if is_trivial(h) {
        return Err(Error::TrivialHamiltonian);
    }
    // With h = m + c (Σc = 0): t = m + b·c, and h·t = 0 fixes b = -d m² / Σc².
    let d = h.len() as f64;
    let m = h.iter().sum::<f64>() / d;
    let c2: f64 = h.iter().map(|x| (x - m) * (x - m)).sum();
    let b = -d * m * m / c2;
    Ok(h.iter().map(|x| m + b * (x - m)).collect())
}

/// `α(e) = (e - e_β(H)) / Σh²`.
pub fn alpha(e: f64, obs: &ObservableSet, beta: f64) -> Result<f64> {
    let h = obs.spectrum()?;
    let s2: f64 = h.iter().map(|x| x * x).sum();
    if s2 == 0.0 {
        return Err(Error::ZeroHamiltonian);
    }
    check_beta(beta)?;
    let e_beta = thermal_energy(obs, &[beta])?[0];
    Ok((e - e_beta) / s2)
}

/// Splits `p = γ_β + α(e)(h - t) + N` with `N` in the N-space.
pub fn decompose(state: &DiagonalState, obs: &ObservableSet, beta: f64) -> Result<Decomposition> {
    let h = obs.spectrum()?;
    if state.dim() != h.len() {
        return Err(Error::DimensionMismatch { expected: h.len(), got: state.dim() });
    }
    let t = t_matrix(obs)?;
    let e = dot(state.p(), h);
    let a = alpha(e, obs, beta)?;
    let gamma = gibbs_state(obs, &[beta])?;
    let n_component = state
        .p()
        .iter()
        .zip(gamma.p())
        .zip(h.iter().zip(&t))
        .map(|((p, g), (hi, ti))| p - g - a * (hi - ti))
        .collect();
    Ok(Decomposition { alpha_coeff: a, n_component })
}

/// Equality constraints on the row-major entries `M[i*d + j]` of a Gibbs-preserving
/// map, optionally with the class-preserving rows `h·(M v_k) = 0`.
pub fn gp_constraints(obs: &ObservableSet, beta: f64, class_preserving: bool) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    check_beta(beta)?;
    let h = obs.spectrum()?;
    let d = h.len();
    let gamma = gibbs_state(obs, &[beta])?;
    let g = gamma.p();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for j in 0..d {
        let mut r = vec![0.0; d * d];
        for i in 0..d {
            r[i * d + j] = 1.0;
        }
        rows.push(r);
        rhs.push(1.0);
    }
    for i in 0..d {
        let mut r = vec![0.0; d * d];
        for j in 0..d {
            r[i * d + j] = g[j];
        }
        rows.push(r);
        rhs.push(g[i]);
    }
    if class_preserving {
        for v in &nspace_basis(obs)?.basis {
            let mut r = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    r[i * d + j] = h[i] * v[j];
                }
            }
            rows.push(r);
            rhs.push(0.0);
        }
    }
    Ok((rows, rhs))
}

/// Optimal Gibbs-preserving map for the linear objective `Σ c[i*d+j] M_ij`.
///
/// Returns the map, the optimal value, the simplex iteration count and the
/// worst constraint residual at the optimum.
pub fn optimize_gp_map(
    obs: &ObservableSet,
    beta: f64,
    objective: &[f64],
    sense: Sense,
    class_preserving: bool,
) -> Result<(StochasticMap, f64, usize, f64)> {
    let d = obs.d();
    if objective.len() != d * d {
        return Err(Error::DimensionMismatch { expected: d * d, got: objective.len() });
    }
    let (rows, rhs) = gp_constraints(obs, beta, class_preserving)?;
    let mut lp = LinearProgram::new(d * d, sense);
    lp.set_objective(objective.to_vec());
    for (r, b) in rows.into_iter().zip(rhs) {
        lp.add_equality(r, b);
    }
    let sol = lp.solve().map_err(|e| Error::Lp(e.to_string()))?;
    if sol.max_violation > LP_CHECK {
        return Err(Error::Lp(format!("optimal vertex violates constraints by {:e}", sol.max_violation)));
    }
    let mut m = DMatrix::from_row_slice(d, d, &sol.x);
    // Column sums are exact to LP round-off; renormalize so apply() is stochastic.
    for j in 0..d {
        let s: f64 = m.column(j).sum();
        m.column_mut(j).scale_mut(1.0 / s);
    }
    Ok((StochasticMap { m }, sol.objective, sol.iterations, sol.max_violation))
}

/// Row-major coefficients of `h·(M x)`.
fn energy_objective(h: &[f64], x: &[f64]) -> Vec<f64> {
    let d = h.len();
    let mut c = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            c[i * d + j] = h[i] * x[j];
        }
    }
    c
}

pub fn lp_constants(obs: &ObservableSet, beta: f64) -> Result<GPConstants> {
    check_beta(beta)?;
    let h = obs.spectrum()?;
    let t = t_matrix(obs)?;
    nspace_basis(obs)?;
    let ht: Vec<f64> = h.iter().zip(&t).map(|(a, b)| a - b).collect();
    let c = energy_objective(h, &ht);
    let (_, f_const, iterations_max, v1) = optimize_gp_map(obs, beta, &c, Sense::Maximize, true)?;
    let (_, k_const, iterations_min, v2) = optimize_gp_map(obs, beta, &c, Sense::Minimize, true)?;
    Ok(GPConstants {
        f_const,
        k_const,
        lp_status: LpStatus {
            iterations_max,
            iterations_min,
            max_violation: v1.max(v2),
        },
    })
}

fn check_interior(e: f64, obs: &ObservableSet) -> Result<()> {
    let d = obs.d();
    if d < 3 || !(e > obs.min(0) && e < obs.max(0)) {
        return Err(Error::SingletonClass);
    }
    Ok(())
}

/// Extreme energies reachable from the class `[e]_H` by class-preserving maps.
pub fn gp_energy_bounds(e: f64, obs: &ObservableSet, beta: f64) -> Result<(f64, f64)> {
    check_interior(e, obs)?;
    let constants = lp_constants(obs, beta)?;
    gp_energy_bounds_with(e, obs, beta, &constants)
}

/// As [`gp_energy_bounds`], reusing precomputed constants for the same `(H, β)`.
pub fn gp_energy_bounds_with(e: f64, obs: &ObservableSet, beta: f64, constants: &GPConstants) -> Result<(f64, f64)> {
    check_interior(e, obs)?;
    let e_beta = thermal_energy(obs, &[beta])?[0];
    let a = alpha(e, obs, beta)?;
    let via_k = e_beta + a * constants.k_const;
    Ok(if e >= e_beta { (via_k, e) } else { (e, via_k) })
}

/// Extreme energies of `M p` over all Gibbs-preserving stochastic maps.
pub fn thermal_energy_bounds(state: &DiagonalState, obs: &ObservableSet, beta: f64) -> Result<(f64, f64)> {
    check_beta(beta)?;
    let h = obs.spectrum()?;
    if state.dim() != h.len() {
        return Err(Error::DimensionMismatch { expected: h.len(), got: state.dim() });
    }
    let c = energy_objective(h, state.p());
    let (_, lo, _, _) = optimize_gp_map(obs, beta, &c, Sense::Minimize, false)?;
    let (_, hi, _, _) = optimize_gp_map(obs, beta, &c, Sense::Maximize, false)?;
    Ok((lo, hi))
}

/// `points` evenly spaced energies strictly inside the spectral range.
pub fn energy_grid(obs: &ObservableSet, points: usize) -> Vec<f64> {
    let (lo, hi) = (obs.min(0), obs.max(0));
    (0..points)
        .map(|k| lo + (hi - lo) * (k + 1) as f64 / (points + 1) as f64)
        .collect()
}

/// Compares class-preserving and thermal reachable energies from `γ_e(H)`
/// along `e_grid`.
pub fn breakdown_scan(obs: &ObservableSet, beta: f64, e_grid: &[f64]) -> Result<BreakdownScan> {
    let constants = lp_constants(obs, beta)?;
    let e_beta = thermal_energy(obs, &[beta])?[0];
    let mut rows = Vec::with_capacity(e_grid.len());
    for &e in e_grid {
        let (gp_min, gp_max) = gp_energy_bounds_with(e, obs, beta, &constants)?;
        let gamma_e = fit_canonical(obs, e)?.state;
        let (th_min, th_max) = thermal_energy_bounds(&gamma_e, obs, beta)?;
        rows.push(BreakdownRow { e, gp_min, gp_max, th_min, th_max, e_beta });
    }
    let max_gap = rows.iter().map(BreakdownRow::gap).fold(f64::NEG_INFINITY, f64::max);
    let max_sandwich_violation = rows.iter().map(BreakdownRow::sandwich_violation).fold(0.0, f64::max);
    Ok(BreakdownScan {
        strict_gap: max_gap > GAP_THRESHOLD,
        max_gap: if rows.is_empty() { 0.0 } else { max_gap },
        max_sandwich_violation,
        rows,
        constants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maxent::free_energy;
    use crate::spectra::{sample_compatible, Macrostate, ToleranceConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn h(v: &[f64]) -> ObservableSet {
        ObservableSet::hamiltonian(v).unwrap()
    }

    fn random_spectrum(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random::<f64>() * 3.0).collect()
    }

    fn relative_entropy(p: &[f64], q: &[f64]) -> f64 {
        p.iter()
            .zip(q)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| a * (a / b).ln())
            .sum()
    }

    #[test]
    fn nspace_examples() {
        let b = nspace_basis(&h(&[0.0, 1.0, 2.0])).unwrap();
        assert_eq!(b.len(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = random_spectrum(&mut rng, 5);
        let b = nspace_basis(&h(&spec)).unwrap();
        assert_eq!(b.len(), 3);
        let obs = h(&spec);
        let hs = obs.spectrum().unwrap();
        for (i, v) in b.basis.iter().enumerate() {
            assert!(v.iter().sum::<f64>().abs() < 1e-12);
            assert!(dot(v, hs).abs() < 1e-12);
            for (j, w) in b.basis.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(v, w) - expect).abs() < 1e-12);
            }
        }
        // Rank oracle: basis plus {1, h} spans R^5.
        let mut all = b.basis.clone();
        all.push(vec![1.0; 5]);
        all.push(hs.to_vec());
        let m = DMatrix::from_fn(5, 5, |i, j| all[i][j]);
        assert!(m.determinant().abs() > 1e-6);

        assert_eq!(nspace_basis(&h(&[1.0, 1.0, 1.0])).unwrap_err(), Error::TrivialHamiltonian);
        assert_eq!(nspace_basis(&h(&[0.0, 1.0])).unwrap_err(), Error::DimensionTooSmall(2));
        // Degenerate spectra keep d - 2 directions.
        assert_eq!(nspace_basis(&h(&[0.0, 0.0, 1.0, 1.0])).unwrap().len(), 2);
    }

    #[test]
    fn t_matrix_examples() {
        let t = t_matrix(&h(&[0.0, 1.0, 2.0])).unwrap();
        for (a, b) in t.iter().zip([2.5, 1.0, -0.5]) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(t_matrix(&h(&[-1.0, 0.0, 1.0])).unwrap(), vec![0.0, 0.0, 0.0]);
        assert_eq!(t_matrix(&h(&[0.0, 0.0, 0.0])).unwrap_err(), Error::TrivialHamiltonian);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let d = rng.random_range(2..10);
            let obs = h(&random_spectrum(&mut rng, d));
            let t = t_matrix(&obs).unwrap();
            let hs = obs.spectrum().unwrap();
            assert!(dot(&t, hs).abs() < 1e-12);
            assert!((t.iter().sum::<f64>() - hs.iter().sum::<f64>()).abs() < 1e-12);
            if d >= 3 {
                for v in nspace_basis(&obs).unwrap().basis {
                    assert!(dot(&v, &t).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn alpha_examples() {
        let obs = h(&[0.0, 1.0, 2.0]);
        let e_b = thermal_energy(&obs, &[1.0]).unwrap()[0];
        assert_eq!(alpha(e_b, &obs, 1.0).unwrap(), 0.0);
        let (a1, a2) = (alpha(0.3, &obs, 1.0).unwrap(), alpha(1.7, &obs, 1.0).unwrap());
        assert!((a1 + a2 - 2.0 * alpha(1.0, &obs, 1.0).unwrap()).abs() < 1e-15);
        // Direct formula: e_1 = (e^-1 + 2e^-2)/(1 + e^-1 + e^-2).
        let z = 1.0 + (-1.0f64).exp() + (-2.0f64).exp();
        let e1 = ((-1.0f64).exp() + 2.0 * (-2.0f64).exp()) / z;
        assert!((alpha(1.2, &obs, 1.0).unwrap() - (1.2 - e1) / 5.0).abs() < 1e-14);
        assert_eq!(alpha(0.0, &h(&[0.0, 0.0]), 1.0).unwrap_err(), Error::ZeroHamiltonian);
    }

    #[test]
    fn decomposition_reconstructs() {
        let obs = h(&[0.0, 0.4, 1.0, 2.2]);
        let beta = 0.9;
        let g = gibbs_state(&obs, &[beta]).unwrap();
        let dec = decompose(&g, &obs, beta).unwrap();
        assert!(dec.alpha_coeff.abs() < 1e-15);
        assert!(dec.n_component.iter().all(|x| x.abs() < 1e-15));

        let basis = nspace_basis(&obs).unwrap();
        let t = t_matrix(&obs).unwrap();
        let hs = obs.spectrum().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let w: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let s = DiagonalState::from_weights(&w).unwrap();
            let dec = decompose(&s, &obs, beta).unwrap();
            for i in 0..4 {
                let rebuilt = g.p()[i] + dec.alpha_coeff * (hs[i] - t[i]) + dec.n_component[i];
                assert!((rebuilt - s.p()[i]).abs() <= 1e-10);
            }
            let proj = basis.project(&dec.n_component);
            for (a, b) in proj.iter().zip(&dec.n_component) {
                assert!((a - b).abs() < 1e-12);
            }
        }

        let m = Macrostate::energy(obs.clone(), 0.9).unwrap();
        let states = sample_compatible(&m, 2, 4, &ToleranceConfig::default()).unwrap();
        let a = decompose(&states[0], &obs, beta).unwrap();
        let b = decompose(&states[1], &obs, beta).unwrap();
        assert!((a.alpha_coeff - b.alpha_coeff).abs() < 1e-12);
        assert!(a.n_component.iter().zip(&b.n_component).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn f_const_is_sum_of_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..15 {
            let d = rng.random_range(3..6);
            let obs = h(&random_spectrum(&mut rng, d));
            let beta = rng.random::<f64>() * 4.0 - 2.0;
            let c = lp_constants(&obs, beta).unwrap();
            let s2: f64 = obs.spectrum().unwrap().iter().map(|x| x * x).sum();
            assert!((c.f_const - s2).abs() <= 1e-8, "{} vs {}", c.f_const, s2);
            assert!(c.k_const <= c.f_const);
            assert!(c.lp_status.max_violation <= 1e-9);
        }
    }

    #[test]
    fn constants_do_not_depend_on_spectrum_offset_representation() {
        // Same (H, β) solved twice, and the identity attains Σh².
        let obs = h(&[0.0, 1.0, 2.0]);
        let a = lp_constants(&obs, 1.0).unwrap();
        let b = lp_constants(&obs, 1.0).unwrap();
        assert!((a.k_const - b.k_const).abs() < 1e-9);
        let hs = obs.spectrum().unwrap();
        let t = t_matrix(&obs).unwrap();
        let ht: Vec<f64> = hs.iter().zip(&t).map(|(x, y)| x - y).collect();
        let id = StochasticMap::identity(3);
        assert!((dot(hs, &id.apply(&ht)) - 5.0).abs() < 1e-14);
    }

    /// Null space of the constraint rows, from the eigenvectors of `AᵀA`.
    fn null_space(rows: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
        let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        let ata = a.transpose() * &a;
        let eig = ata.symmetric_eigen();
        (0..n)
            .filter(|&k| eig.eigenvalues[k].abs() < 1e-10)
            .map(|k| eig.eigenvectors.column(k).iter().copied().collect())
            .collect()
    }

    /// Hit-and-run over the feasible class-preserving maps.
    fn sample_maps(obs: &ObservableSet, beta: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let d = obs.d();
        let (rows, rhs) = gp_constraints(obs, beta, true).unwrap();
        let null = null_space(&rows, d * d);
        let g = gibbs_state(obs, &[beta]).unwrap();
        let mut x = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                x[i * d + j] = 0.5 * g.p()[i] + if i == j { 0.5 } else { 0.0 };
            }
        }
        for (r, b) in rows.iter().zip(&rhs) {
            assert!((dot(r, &x) - b).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let z: Vec<f64> = (0..null.len()).map(|_| rng.sample(StandardNormal)).collect();
            let mut u = vec![0.0; d * d];
            for (zk, v) in z.iter().zip(&null) {
                for (ui, vi) in u.iter_mut().zip(v) {
                    *ui += zk * vi;
                }
            }
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for (xi, ui) in x.iter().zip(&u) {
                if *ui > 1e-14 {
                    lo = lo.max(-xi / ui);
                } else if *ui < -1e-14 {
                    hi = hi.min(-xi / ui);
                }
            }
            let step = lo + (hi - lo) * rng.random::<f64>();
            for (xi, ui) in x.iter_mut().zip(&u) {
                *xi = (*xi + step * ui).max(0.0);
            }
            out.push(x.clone());
        }
        out
    }

    #[test]
    fn k_const_bounds_sampled_maps() {
        let obs = h(&[0.0, 1.0, 2.0]);
        let beta = 1.0;
        let c = lp_constants(&obs, beta).unwrap();
        let hs = obs.spectrum().unwrap();
        let t = t_matrix(&obs).unwrap();
        let ht: Vec<f64> = hs.iter().zip(&t).map(|(x, y)| x - y).collect();
        let obj = energy_objective(hs, &ht);
        let (rows, rhs) = gp_constraints(&obs, beta, true).unwrap();
        let mut sampled_min = f64::INFINITY;
        for x in sample_maps(&obs, beta, 100_000, 17) {
            let v = dot(&obj, &x);
            sampled_min = sampled_min.min(v);
            assert!(c.k_const <= v + 1e-9);
            assert!(v <= c.f_const + 1e-9);
            for (r, b) in rows.iter().zip(&rhs) {
                assert!((dot(r, &x) - b).abs() < 1e-8);
            }
        }
        // The sampler gets reasonably close to the LP vertex.
        assert!(sampled_min - c.k_const < 0.5, "{sampled_min} vs {}", c.k_const);
    }

    #[test]
    fn gp_maps_never_increase_relative_entropy() {
        let obs = h(&[0.0, 0.5, 1.3, 2.0]);
        let beta = 1.1;
        let g = gibbs_state(&obs, &[beta]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for k in 0..100 {
            let c: Vec<f64> = (0..16).map(|_| rng.random::<f64>() - 0.5).collect();
            let (m, _, _, _) = optimize_gp_map(&obs, beta, &c, Sense::Maximize, k % 2 == 0).unwrap();
            let mg = m.apply(g.p());
            let l1: f64 = mg.iter().zip(g.p()).map(|(a, b)| (a - b).abs()).sum();
            assert!(l1 <= 1e-9);
            let w: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let p = DiagonalState::from_weights(&w).unwrap();
            let mp = m.apply(p.p());
            assert!(relative_entropy(&mp, g.p()) <= relative_entropy(p.p(), g.p()) + 1e-8);
        }
    }

    #[test]
    fn class_preservation_matches_n_space_condition() {
        let obs = h(&[0.0, 0.5, 1.3, 2.0]);
        let beta = 0.7;
        let hs = obs.spectrum().unwrap().to_vec();
        let basis = nspace_basis(&obs).unwrap();
        let m = Macrostate::energy(obs.clone(), 1.1).unwrap();
        let class = sample_compatible(&m, 20, 2, &ToleranceConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (mut seen_preserving, mut seen_breaking) = (0, 0);
        for k in 0..40 {
            let c: Vec<f64> = (0..16).map(|_| rng.random::<f64>() - 0.5).collect();
            let (map, _, _, _) = optimize_gp_map(&obs, beta, &c, Sense::Minimize, k % 2 == 0).unwrap();
            let leak = basis
                .basis
                .iter()
                .map(|v| dot(&hs, &map.apply(v)).abs())
                .fold(0.0, f64::max);
            let energies: Vec<f64> = class.iter().map(|s| dot(&hs, &map.apply(s.p()))).collect();
            let spread = energies.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
                - energies.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            if leak < 1e-9 {
                seen_preserving += 1;
                assert!(spread < 1e-9);
            } else {
                seen_breaking += 1;
                assert!(spread > 1e-9);
            }
        }
        assert!(seen_preserving >= 20 && seen_breaking > 0);
    }

    #[test]
    fn gp_bounds_examples() {
        let obs = h(&[0.0, 1.0, 2.0]);
        let beta = 1.0;
        let e_b = thermal_energy(&obs, &[beta]).unwrap()[0];
        let (lo, hi) = gp_energy_bounds(e_b, &obs, beta).unwrap();
        assert!((lo - e_b).abs() < 1e-12 && (hi - e_b).abs() < 1e-12);
        let (_, hi) = gp_energy_bounds(1.5, &obs, beta).unwrap();
        assert_eq!(hi, 1.5);
        let (lo, _) = gp_energy_bounds(0.3, &obs, beta).unwrap();
        assert_eq!(lo, 0.3);
        assert_eq!(gp_energy_bounds(0.5, &h(&[0.0, 1.0]), beta).unwrap_err(), Error::SingletonClass);
        assert_eq!(gp_energy_bounds(2.0, &obs, beta).unwrap_err(), Error::SingletonClass);

        // Piecewise linear in e with a kink at e_β: second differences vanish
        // away from the kink.
        let c = lp_constants(&obs, beta).unwrap();
        let grid = energy_grid(&obs, 41);
        let lows: Vec<f64> = grid.iter().map(|&e| gp_energy_bounds_with(e, &obs, beta, &c).unwrap().0).collect();
        for k in 1..40 {
            let kinked = (grid[k - 1] - e_b) * (grid[k + 1] - e_b) <= 0.0;
            if !kinked {
                assert!((lows[k - 1] - 2.0 * lows[k] + lows[k + 1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn thermal_bounds_contain_gp_bounds_for_any_class_member() {
        let obs = h(&[0.0, 1.0, 2.0]);
        let beta = 1.0;
        let g = gibbs_state(&obs, &[beta]).unwrap();
        let e_b = thermal_energy(&obs, &[beta]).unwrap()[0];
        let (lo, hi) = thermal_energy_bounds(&g, &obs, beta).unwrap();
        assert!((lo - e_b).abs() < 1e-9 && (hi - e_b).abs() < 1e-9);
        let c = lp_constants(&obs, beta).unwrap();
        for e in [0.3, 0.8, 1.4, 1.8] {
            let m = Macrostate::energy(obs.clone(), e).unwrap();
            let (gl, gh) = gp_energy_bounds_with(e, &obs, beta, &c).unwrap();
            for s in sample_compatible(&m, 10, 3, &ToleranceConfig::default()).unwrap() {
                let (tl, th) = thermal_energy_bounds(&s, &obs, beta).unwrap();
                assert!(tl <= gl + 1e-9 && gh <= th + 1e-9);
            }
        }
        assert_eq!(thermal_energy_bounds(&g, &obs, 0.0).unwrap_err(), Error::ZeroBeta);
    }

    #[test]
    fn breakdown_scan_for_qutrit() {
        let obs = h(&[0.0, 1.0, 2.0]);
        let beta = 1.0;
        let scan = breakdown_scan(&obs, beta, &energy_grid(&obs, 41)).unwrap();
        assert_eq!(scan.rows.len(), 41);
        assert!(scan.strict_gap);
        assert!(scan.max_gap > GAP_THRESHOLD);
        assert!(scan.max_sandwich_violation <= 1e-9);

        let e_b = scan.rows[0].e_beta;
        let at = breakdown_scan(&obs, beta, &[e_b]).unwrap();
        let r = at.rows[0];
        for x in [r.gp_min, r.gp_max, r.th_min, r.th_max] {
            assert!((x - e_b).abs() < 1e-8);
        }

        // Every reported energy is free-energy feasible from γ_e.
        let f = |e: f64| free_energy(&fit_canonical(&obs, e).unwrap().state, &obs, beta).unwrap();
        for r in &scan.rows {
            let f0 = f(r.e);
            for e2 in [r.gp_min, r.gp_max, r.th_min, r.th_max] {
                if e2 > obs.min(0) + 1e-9 && e2 < obs.max(0) - 1e-9 {
                    assert!(f(e2) <= f0 + 1e-8);
                }
            }
        }
    }
}
