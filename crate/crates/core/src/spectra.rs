//! State algebra for commuting observables.
//!
//! Everything lives on the probability simplex over the joint eigenbasis of
//! the observables: since the observables commute, a diagonal state carries all
//! of the information the mean values can see, and [`dephase`] is the only
//! bridge from dense density matrices.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Sense};

/// Shared numerical tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    /// Max deviation of a mean value for a state to count as compatible.
    pub compatibility: f64,
    /// Allowed drift of a probability vector's sum from 1.
    pub normalization: f64,
    /// Residual target for ensemble fitting.
    pub fit: f64,
    /// Margin below which reachability ties count as allowed.
    pub decision: f64,
    /// Rejected proposals tolerated by [`sample_compatible`].
    pub sampling_cap: usize,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            compatibility: 1e-10,
            normalization: 1e-12,
            fit: 1e-10,
            decision: 1e-9,
            sampling_cap: 2_000_000,
        }
    }
}

/// Joint spectrum of `n` commuting observables on `d` levels.
///
/// With a single observable the spectrum is stored sorted non-decreasing;
/// `original_index[k]` is the position level `k` had in the input. Every state
/// handled by this crate is indexed by the stored (sorted) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObservableRepr", into = "ObservableRepr")]
pub struct ObservableSet {
    eigenvalues: Vec<Vec<f64>>,
    original_index: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ObservableRepr {
    d: usize,
    n: usize,
    eigenvalues: Vec<Vec<f64>>,
}

impl TryFrom<ObservableRepr> for ObservableSet {
    type Error = Error;

    fn try_from(r: ObservableRepr) -> Result<Self> {
        let obs = ObservableSet::new(r.eigenvalues)?;
        if obs.d() != r.d || obs.n() != r.n {
            return Err(Error::InvalidObservables(format!(
                "declared d={}, n={} but table is {}x{}",
                r.d,
                r.n,
                obs.n(),
                obs.d()
            )));
        }
        Ok(obs)
    }
}

impl From<ObservableSet> for ObservableRepr {
    fn from(o: ObservableSet) -> Self {
        let eigenvalues = o.eigenvalues.iter().map(|row| o.to_original(row)).collect();
        ObservableRepr {
            d: o.d(),
            n: o.n(),
            eigenvalues,
        }
    }
}

impl ObservableSet {
    /// Builds the set from `n` rows of `d` eigenvalues each.
    pub fn new(eigenvalues: Vec<Vec<f64>>) -> Result<Self> {
        let n = eigenvalues.len();
        if n == 0 {
            return Err(Error::InvalidObservables("need at least one observable".into()));
        }
        let d = eigenvalues[0].len();
        if d < 2 {
            return Err(Error::InvalidObservables("need at least two levels".into()));
        }
        for row in &eigenvalues {
            if row.len() != d {
                return Err(Error::InvalidObservables("ragged eigenvalue table".into()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidObservables("non-finite eigenvalue".into()));
            }
        }
        if n == 1 {
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| eigenvalues[0][a].total_cmp(&eigenvalues[0][b]));
            let sorted = order.iter().map(|&k| eigenvalues[0][k]).collect();
            return Ok(ObservableSet {
                eigenvalues: vec![sorted],
                original_index: order,
            });
        }
        Ok(ObservableSet {
            eigenvalues,
            original_index: (0..d).collect(),
        })
    }

    /// Single observable (a Hamiltonian spectrum).
    pub fn hamiltonian(spectrum: &[f64]) -> Result<Self> {
        Self::new(vec![spectrum.to_vec()])
    }

    pub fn d(&self) -> usize {
        self.eigenvalues[0].len()
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.eigenvalues[j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.eigenvalues
    }

    /// Joint eigenvalue vector `(q^1_α, …, q^n_α)` of level `alpha`.
    pub fn level(&self, alpha: usize) -> Vec<f64> {
        self.eigenvalues.iter().map(|row| row[alpha]).collect()
    }

    pub fn original_index(&self) -> &[usize] {
        &self.original_index
    }

    /// The spectrum of a single-observable set.
    pub fn spectrum(&self) -> Result<&[f64]> {
        if self.n() != 1 {
            return Err(Error::InvalidObservables(format!(
                "operation needs a single observable, got {}",
                self.n()
            )));
        }
        Ok(&self.eigenvalues[0])
    }

    /// Reorders a vector given in input order into stored order.
    pub fn to_stored(&self, original: &[f64]) -> Vec<f64> {
        self.original_index.iter().map(|&k| original[k]).collect()
    }

    /// Reorders a vector given in stored order back into input order.
    pub fn to_original(&self, stored: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; stored.len()];
        for (k, &orig) in self.original_index.iter().enumerate() {
            out[orig] = stored[k];
        }
        out
    }

    pub fn min(&self, j: usize) -> f64 {
        self.eigenvalues[j].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self, j: usize) -> f64 {
        self.eigenvalues[j].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn means(&self) -> Vec<f64> {
        let d = self.d() as f64;
        self.eigenvalues.iter().map(|row| row.iter().sum::<f64>() / d).collect()
    }

    /// Same levels with every eigenvalue of observable `j` multiplied by `factors[j]`.
    pub fn scaled(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: factors.len(),
            });
        }
        let eigenvalues = self
            .eigenvalues
            .iter()
            .zip(factors)
            .map(|(row, f)| row.iter().map(|v| v * f).collect())
            .collect();
        Ok(ObservableSet {
            eigenvalues,
            original_index: self.original_index.clone(),
        })
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: d,
            });
        }
        Ok(())
    }
}

/// Partial information `(v, Q)`: one mean value per observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MacrostateRepr", into = "MacrostateRepr")]
pub struct Macrostate {
    observables: ObservableSet,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MacrostateRepr {
    d: usize,
    n: usize,
    eigenvalues: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl TryFrom<MacrostateRepr> for Macrostate {
    type Error = Error;

    fn try_from(r: MacrostateRepr) -> Result<Self> {
        let obs = ObservableSet::try_from(ObservableRepr {
            d: r.d,
            n: r.n,
            eigenvalues: r.eigenvalues,
        })?;
        Macrostate::new(obs, r.values)
    }
}

impl From<Macrostate> for MacrostateRepr {
    fn from(m: Macrostate) -> Self {
        let o = ObservableRepr::from(m.observables);
        MacrostateRepr {
            d: o.d,
            n: o.n,
            eigenvalues: o.eigenvalues,
            values: m.values,
        }
    }
}

impl Macrostate {
    pub fn new(observables: ObservableSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != observables.n() {
            return Err(Error::DimensionMismatch {
                expected: observables.n(),
                got: values.len(),
            });
        }
        for (j, &v) in values.iter().enumerate() {
            let (lo, hi) = (observables.min(j), observables.max(j));
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::OutOfRange { value: v, lo, hi });
            }
        }
        Ok(Macrostate {
            observables,
            values,
        })
    }

    /// Energy macrostate `(e, H)`.
    pub fn energy(observables: ObservableSet, e: f64) -> Result<Self> {
        Self::new(observables, vec![e])
    }

    pub fn observables(&self) -> &ObservableSet {
        &self.observables
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mean energy of a single-observable macrostate.
    pub fn energy_value(&self) -> Result<f64> {
        self.observables.spectrum()?;
        Ok(self.values[0])
    }
}

/// Probability vector over the joint eigenlevels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateRepr", into = "StateRepr")]
pub struct DiagonalState {
    p: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    p: Vec<f64>,
}

impl TryFrom<StateRepr> for DiagonalState {
    type Error = Error;
    fn try_from(r: StateRepr) -> Result<Self> {
        DiagonalState::new(r.p)
    }
}

impl From<DiagonalState> for StateRepr {
    fn from(s: DiagonalState) -> Self {
        StateRepr { p: s.p }
    }
}

const NEGATIVE_SLACK: f64 = 1e-12;

impl DiagonalState {
    /// Validates nonnegativity and normalization (to 1e-12).
    pub fn new(mut p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidState("empty probability vector".into()));
        }
        for v in p.iter_mut() {
            if !v.is_finite() || *v < -NEGATIVE_SLACK {
                return Err(Error::InvalidState(format!("invalid probability {v}")));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > ToleranceConfig::default().normalization {
            return Err(Error::InvalidState(format!("probabilities sum to {sum}")));
        }
        Ok(DiagonalState { p })
    }

    /// Normalizes nonnegative weights into a state.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidState("weights must be finite and nonnegative".into()));
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidState("weights sum to zero".into()));
        }
        Ok(DiagonalState {
            p: w.iter().map(|v| v / sum).collect(),
        })
    }

    pub fn uniform(d: usize) -> Self {
        DiagonalState {
            p: vec![1.0 / d as f64; d],
        }
    }

    pub fn pure(d: usize, level: usize) -> Self {
        let mut p = vec![0.0; d];
        p[level] = 1.0;
        DiagonalState { p }
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    /// Half the l1 distance.
    pub fn tv_distance(&self, other: &DiagonalState) -> f64 {
        0.5 * self
            .p
            .iter()
            .zip(&other.p)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Dense Hermitian, unit-trace, positive-semidefinite matrix in the input basis
/// of the observables.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianState {
    rho: DMatrix<Complex<f64>>,
}

impl HermitianState {
    pub fn new(rho: DMatrix<Complex<f64>>) -> Result<Self> {
        if !rho.is_square() {
            return Err(Error::InvalidDensityMatrix("not square".into()));
        }
        let herm_err = (&rho - rho.adjoint()).iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
        if herm_err > 1e-12 {
            return Err(Error::InvalidDensityMatrix(format!(
                "not Hermitian (deviation {herm_err:e})"
            )));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > 1e-12 || tr.im.abs() > 1e-12 {
            return Err(Error::InvalidDensityMatrix(format!("trace is {tr}")));
        }
        let min_eig = rho
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 {
            return Err(Error::InvalidDensityMatrix(format!(
                "minimum eigenvalue {min_eig:e}"
            )));
        }
        Ok(HermitianState { rho })
    }

    pub fn matrix(&self) -> &DMatrix<Complex<f64>> {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }
}

/// Mean value of every observable.
pub fn expectation(state: &DiagonalState, obs: &ObservableSet) -> Result<Vec<f64>> {
    obs.check_dim(state.dim())?;
    Ok(obs
        .rows()
        .iter()
        .map(|row| row.iter().zip(state.p()).map(|(q, p)| q * p).sum())
        .collect())
}

/// Max-abs deviation of the state's mean values from the macrostate's.
pub fn compatibility_deviation(state: &DiagonalState, m: &Macrostate) -> Result<f64> {
    let ev = expectation(state, m.observables())?;
    Ok(ev
        .iter()
        .zip(m.values())
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs())))
}

pub fn is_compatible(state: &DiagonalState, m: &Macrostate, tol: f64) -> Result<bool> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    Ok(compatibility_deviation(state, m)? <= tol)
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn shannon_entropy(state: &DiagonalState) -> f64 {
    entropy_of(state.p())
}

pub(crate) fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Constraint rows `[1; Q]` restricted to `support`, with the right-hand side `(1, v)`.
fn constraint_system(m: &Macrostate, support: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let obs = m.observables();
    let rows = obs.n() + 1;
    let mut a = DMatrix::zeros(rows, support.len());
    for (c, &alpha) in support.iter().enumerate() {
        a[(0, c)] = 1.0;
        for j in 0..obs.n() {
            a[(j + 1, c)] = obs.row(j)[alpha];
        }
    }
    let mut b = DVector::zeros(rows);
    b[0] = 1.0;
    for j in 0..obs.n() {
        b[j + 1] = m.values()[j];
    }
    (a, b)
}

pub(crate) fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = smax * 1e-10 * a.nrows().max(a.ncols()) as f64;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Levels that some member of the equivalence class populates.
fn class_support(m: &Macrostate) -> Result<Vec<usize>> {
    let obs = m.observables();
    let d = obs.d();
    let (a, b) = constraint_system(m, &(0..d).collect::<Vec<_>>());
    let mut support = Vec::new();
    for alpha in 0..d {
        let mut lp = LinearProgram::new(d, Sense::Maximize);
        let mut c = vec![0.0; d];
        c[alpha] = 1.0;
        lp.set_objective(c);
        for r in 0..a.nrows() {
            lp.add_equality(a.row(r).iter().copied().collect(), b[r]);
        }
        let sol = lp.solve().map_err(|_| Error::InfeasibleMacrostate)?;
        if sol.objective > 1e-12 {
            support.push(alpha);
        }
    }
    Ok(support)
}

/// Affine dimension of the set of diagonal states compatible with `m`.
pub fn equivalence_class_dim(m: &Macrostate) -> Result<usize> {
    let support = class_support(m)?;
    let (a, _) = constraint_system(m, &support);
    Ok(support.len() - numerical_rank(&a))
}

/// Draws `count` distinct states compatible with `m`.
///
/// Proposals come from a flat Dirichlet on the levels the class can populate,
/// are projected orthogonally onto the affine constraint set and rejected when
/// they leave the simplex. A singleton class yields its only member.
pub fn sample_compatible(
    m: &Macrostate,
    count: usize,
    seed: u64,
    tol: &ToleranceConfig,
) -> Result<Vec<DiagonalState>> {
    let d = m.observables().d();
    let support = class_support(m)?;
    let (a, b) = constraint_system(m, &support);
    let dim = support.len() - numerical_rank(&a);
    if dim == 0 {
        warn!("equivalence class is a singleton; returning its only member");
        let pinv = a
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let x = pinv * &b;
        let mut p = vec![0.0; d];
        for (c, &alpha) in support.iter().enumerate() {
            p[alpha] = x[c];
        }
        return Ok(vec![DiagonalState::new(p)?]);
    }
    let pinv = a
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut rejected = 0usize;
    while out.len() < count {
        let mut x = DVector::from_fn(support.len(), |_, _| {
            let v: f64 = Exp1.sample(&mut rng);
            v
        });
        let s = x.sum();
        x /= s;
        let residual = &a * &x - &b;
        let proj = &x - &pinv * residual;
        if proj.iter().any(|&v| v < 0.0) {
            rejected += 1;
            if rejected > tol.sampling_cap {
                return Err(Error::SamplingExhausted { attempts: rejected });
            }
            continue;
        }
        let mut p = vec![0.0; d];
        for (c, &alpha) in support.iter().enumerate() {
            p[alpha] = proj[c];
        }
        let state = DiagonalState::new(p)?;
        if compatibility_deviation(&state, m)? > tol.compatibility {
            rejected += 1;
            continue;
        }
        out.push(state);
    }
    Ok(out)
}

/// Groups of input-basis indices sharing one joint eigenvalue vector.
fn joint_blocks(obs: &ObservableSet) -> Vec<Vec<usize>> {
    let d = obs.d();
    let mut stored_of = vec![0usize; d];
    for (k, &orig) in obs.original_index().iter().enumerate() {
        stored_of[orig] = k;
    }
    let mut blocks: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
    for orig in 0..d {
        let key = obs
            .level(stored_of[orig])
            .iter()
            .map(|v| (v + 0.0).to_bits())
            .collect();
        blocks.entry(key).or_default().push(orig);
    }
    blocks.into_values().collect()
}

/// Time-average over all joint evolutions: coherences between different joint
/// eigenvalues vanish, blocks of degenerate levels are kept intact.
pub fn pinch(rho: &HermitianState, obs: &ObservableSet) -> Result<HermitianState> {
    obs.check_dim(rho.dim())?;
    let d = rho.dim();
    let mut label = vec![0usize; d];
    for (b, block) in joint_blocks(obs).iter().enumerate() {
        for &i in block {
            label[i] = b;
        }
    }
    let m = DMatrix::from_fn(d, d, |i, j| {
        if label[i] == label[j] {
            rho.matrix()[(i, j)]
        } else {
            Complex::new(0.0, 0.0)
        }
    });
    Ok(HermitianState { rho: m })
}

/// Dephases `rho` in the joint eigenbasis and returns the resulting populations
/// in stored level order. All mean values are preserved.
pub fn dephase(rho: &HermitianState, obs: &ObservableSet) -> Result<DiagonalState> {
    let pinched = pinch(rho, obs)?;
    let diag: Vec<f64> = (0..pinched.dim())
        .map(|i| pinched.matrix()[(i, i)].re.max(0.0))
        .collect();
    let stored = obs.to_stored(&diag);
    DiagonalState::new(stored.clone()).or_else(|_| DiagonalState::from_weights(&stored))
}

impl From<&DiagonalState> for HermitianState {
    fn from(s: &DiagonalState) -> Self {
        let d = s.dim();
        HermitianState {
            rho: DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    Complex::new(s.p()[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                }
            }),
        }
    }
}
