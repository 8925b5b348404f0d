use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use ensemblelab_core::distill::{distilled_state_with_budget, integerize, DEFAULT_MEMORY_BUDGET};
use ensemblelab_core::gpmaps::{
    breakdown_scan, decompose, energy_grid, gp_energy_bounds_with, lp_constants, nspace_basis, t_matrix,
    thermal_energy_bounds,
};
use ensemblelab_core::macrolimit::{moments_of_iid, subsystem_energy_change};
use ensemblelab_core::maxent::{fit_canonical_with, fit_gge_with, gibbs_state, thermal_energy};
use ensemblelab_core::spectra::{expectation, sample_compatible, DiagonalState, Macrostate, ObservableSet, ToleranceConfig};
use ensemblelab_core::transitions::{
    ergotropy, reachable_canonical_with, reachable_gge_with, rescaled_swap, trivialization_witness, work_bound,
};
use ensemblelab_core::Error;

use crate::args::*;
use crate::output::{Output, Table};

pub const MEM_BUDGET_VAR: &str = "ENSEMBLELAB_MEM_BUDGET";

#[derive(Debug)]
pub enum CliError {
    /// Bad flag combination detected after parsing.
    Usage(String),
    /// Unreadable or malformed input file.
    Input(String),
    Domain(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Domain(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

struct Spectrum {
    obs: ObservableSet,
    values: Option<Vec<f64>>,
}

fn load_spectrum(path: &Path) -> CliResult<Spectrum> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let raw: Value = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let values = match raw.get("values") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            serde_json::from_value::<Vec<f64>>(v.clone())
                .map_err(|e| CliError::Input(format!("{}: values: {e}", path.display())))?,
        ),
    };
    let obs: ObservableSet = serde_json::from_value(raw).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(Spectrum { obs, values })
}

fn tolerances(run: &RunArgs) -> ToleranceConfig {
    let mut tol = ToleranceConfig::default();
    if let Some(v) = run.tol_fit {
        tol.fit = v;
    }
    if let Some(v) = run.tol_decision {
        tol.decision = v;
    }
    if let Some(v) = run.tol_compatibility {
        tol.compatibility = v;
    }
    tol
}

fn macrostate(spec: &Spectrum, args: &MacroArgs) -> CliResult<Macrostate> {
    let values = if let Some(e) = args.energy {
        if spec.obs.n() != 1 {
            return Err(CliError::Usage("--energy needs a single observable; use --values".into()));
        }
        vec![e]
    } else if !args.values.is_empty() {
        args.values.clone()
    } else if let Some(v) = &spec.values {
        v.clone()
    } else {
        return Err(CliError::Usage("give --energy or --values (or \"values\" in the spectrum file)".into()));
    };
    Ok(Macrostate::new(spec.obs.clone(), values)?)
}

/// Populations given in input level order, as a state in stored order.
fn state(obs: &ObservableSet, p: &[f64]) -> CliResult<DiagonalState> {
    if p.len() != obs.d() {
        return Err(Error::DimensionMismatch { expected: obs.d(), got: p.len() }.into());
    }
    Ok(DiagonalState::new(obs.to_stored(p))?)
}

fn original(obs: &ObservableSet, s: &DiagonalState) -> Value {
    json!(obs.to_original(s.p()))
}

fn single(obs: &ObservableSet) -> CliResult<()> {
    if obs.n() != 1 {
        return Err(CliError::Usage("this subcommand needs a single observable (n = 1)".into()));
    }
    Ok(())
}

pub fn run(command: &Command, run: &RunArgs) -> CliResult<Output> {
    let tol = tolerances(run);
    match command {
        Command::Fit(a) => fit(a, &tol),
        Command::Reach(a) => reach(a, &tol),
        Command::Work(a) => work(a),
        Command::Ergotropy(a) => ergotropy_cmd(a),
        Command::Swap(a) => swap(a, run.seed, &tol),
        Command::Trivialize(a) => trivialize(a),
        Command::Gpmap(a) => gpmap(a),
        Command::Breakdown(a) => breakdown(a),
        Command::Distill(a) => distill(a),
        Command::Clt(a) => clt(a),
    }
}

fn fit(a: &FitArgs, tol: &ToleranceConfig) -> CliResult<Output> {
    let spec = load_spectrum(&a.spectrum.spectrum)?;
    let m = macrostate(&spec, &a.macrostate)?;
    let sol = if spec.obs.n() == 1 {
        fit_canonical_with(&spec.obs, m.values()[0], tol)?
    } else {
        fit_gge_with(&spec.obs, m.values(), tol)?
    };
    let mut v = serde_json::to_value(&sol).expect("solution serializes");
    v["p"] = original(&spec.obs, &sol.state);
    Ok(Output::Record(v))
}

fn reach(a: &ReachArgs, tol: &ToleranceConfig) -> CliResult<Output> {
    let spec = load_spectrum(&a.spectrum.spectrum)?;
    let m = macrostate(&spec, &a.macrostate)?;
    let target = state(&spec.obs, &a.p)?;
    if a.beta.len() != spec.obs.n() {
        return Err(Error::DimensionMismatch { expected: spec.obs.n(), got: a.beta.len() }.into());
    }
    let (criterion, verdict) = if spec.obs.n() == 1 {
        ("free_energy", reachable_canonical_with(&m, &target, a.beta[0], tol)?)
    } else {
        ("free_entropy", reachable_gge_with(&m, &target, &a.beta, tol)?)
    };
    let mut v = serde_json::to_value(&verdict).expect("verdict serializes");
    v["criterion"] = json!(criterion);
    Ok(Output::Record(v))
}

fn work(a: &WorkArgs) -> CliResult<Output> {
    let spec = load_spectrum(&a.spectrum.spectrum)?;
    single(&spec.obs)?;
    let m = macrostate(&spec, &a.macrostate)?;
    let r = work_bound(&m, a.beta)?;
    Ok(Output::Record(serde_json::to_value(&r).expect("report serializes")))
}

fn ergotropy_cmd(a: &ErgotropyArgs) -> CliResult<Output> {
    let spec = load_spectrum(&a.spectrum.spectrum)?;
    single(&spec.obs)?;
    let s = state(&spec.obs, &a.p)?;
    let energy = expectation(&s, &spec.obs)?[0];
    let w = ergotropy(&s, &spec.obs)?;
    Ok(Output::Record(json!({
        "energy": energy,
        "ergotropy": w,
        "passive_energy": energy - w,
    })))
}

fn swap(a: &SwapArgs, seed: u64, tol: &ToleranceConfig) -> CliResult<Output> {
    let spec = load_spectrum(&a.spectrum.spectrum)?;
    single(&spec.obs)?;
    let m = macrostate(&spec, &a.macrostate)?;
    let (system, sampled) = if a.p.is_empty() {
        let mut drawn = sample_compatible(&m, 1, seed, tol)?;
        (drawn.remove(0), true)
    } else {
        (state(&spec.obs, &a.p)?, false)
    };
    let out = rescaled_swap(&system, &m, a.beta)?;
    let beta_system = fit_canonical_with(&spec.obs, m.values()[0], tol)?.beta[0];
    Ok(Output::Record(json!({
        "sampled": sampled,
        "seed": seed,
        "beta_system": beta_system,
        "system": original(&spec.obs, &system),
        "new_system": original(&spec.obs, &out.new_system),
        "new_env": original(&spec.obs, &out.new_env),
        "env_spectrum": spec.obs.to_original(&out.env_spectrum),
        "delta_mean_energy": out.delta_mean_energy,
    })))
}

fn trivialize(a: &TrivializeArgs) -> CliResult<Output> {
    let first = load_spectrum(&a.spectrum)?;
    let second = match &a.spectrum2 {
        Some(p) => load_spectrum(p)?,
        None => load_spectrum(&a.spectrum)?,
    };
    single(&first.obs)?;
    single(&second.obs)?;
    if a.beta.len() != 2 {
        return Err(CliError::Usage("--beta takes exactly two values: B1,B2".into()));
    }
    let mut rows = Vec::with_capacity(a.copies.len());
    let mut best = 0.0f64;
    for &n in &a.copies {
        let w = trivialization_witness(&first.obs, a.beta[0], &second.obs, a.beta[1], n, n)?;
        best = best.max(w);
        rows.push(vec![json!(n), json!(w)]);
    }
    let mut summary = Map::new();
    summary.insert("beta1".into(), json!(a.beta[0]));
    summary.insert("beta2".into(), json!(a.beta[1]));
    summary.insert("max_ergotropy".into(), json!(best));
    Ok(Output::Table(Table { columns: vec!["n", "ergotropy"], rows, summary }))
}

fn gpmap(a: &GpmapArgs) -> CliResult<Output> {
    let spec = load_spectrum(&a.spectrum.spectrum)?;
    single(&spec.obs)?;
    let obs = &spec.obs;
    let constants = lp_constants(obs, a.beta)?;
    let basis: Vec<Vec<f64>> = nspace_basis(obs)?.basis.iter().map(|v| obs.to_original(v)).collect();
    let mut v = json!({
        "beta": a.beta,
        "e_beta": thermal_energy(obs, &[a.beta])?[0],
        "f_const": constants.f_const,
        "k_const": constants.k_const,
        "lp_status": serde_json::to_value(&constants.lp_status).expect("status serializes"),
        "t": obs.to_original(&t_matrix(obs)?),
        "nspace_basis": basis,
    });
    if let Some(e) = a.energy {
        let (lo, hi) = gp_energy_bounds_with(e, obs, a.beta, &constants)?;
        let gamma = fit_canonical_with(obs, e, &ToleranceConfig::default())?.state;
        let (tlo, thi) = thermal_energy_bounds(&gamma, obs, a.beta)?;
        v["energy"] = json!(e);
        v["gp_bounds"] = json!({"min": lo, "max": hi});
        v["thermal_bounds_from_ensemble"] = json!({"min": tlo, "max": thi});
    }
    if !a.p.is_empty() {
        let s = state(obs, &a.p)?;
        let dec = decompose(&s, obs, a.beta)?;
        let (tlo, thi) = thermal_energy_bounds(&s, obs, a.beta)?;
        v["decomposition"] = json!({
            "alpha": dec.alpha_coeff,
            "n_component": obs.to_original(&dec.n_component),
        });
        v["thermal_bounds"] = json!({"min": tlo, "max": thi});
    }
    Ok(Output::Record(v))
}

fn breakdown(a: &BreakdownArgs) -> CliResult<Output> {
    let spec = load_spectrum(&a.spectrum.spectrum)?;
    single(&spec.obs)?;
    if a.grid == 0 {
        return Err(CliError::Usage("--grid must be at least 1".into()));
    }
    let scan = breakdown_scan(&spec.obs, a.beta, &energy_grid(&spec.obs, a.grid))?;
    let rows = scan
        .rows
        .iter()
        .map(|r| vec![json!(r.e), json!(r.gp_min), json!(r.gp_max), json!(r.th_min), json!(r.th_max), json!(r.e_beta)])
        .collect();
    let mut summary = Map::new();
    summary.insert("strict_gap".into(), json!(scan.strict_gap));
    summary.insert("max_gap".into(), json!(scan.max_gap));
    summary.insert("max_sandwich_violation".into(), json!(scan.max_sandwich_violation));
    summary.insert("f_const".into(), json!(scan.constants.f_const));
    summary.insert("k_const".into(), json!(scan.constants.k_const));
    Ok(Output::Table(Table {
        columns: vec!["e", "gp_min", "gp_max", "th_min", "th_max", "e_beta"],
        rows,
        summary,
    }))
}

fn memory_budget() -> CliResult<usize> {
    match std::env::var(MEM_BUDGET_VAR) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| CliError::Usage(format!("{MEM_BUDGET_VAR} must be a positive integer, got {s:?}"))),
        Err(_) => Ok(DEFAULT_MEMORY_BUDGET),
    }
}

fn distill(a: &DistillArgs) -> CliResult<Output> {
    let spec = load_spectrum(&a.spectrum.spectrum)?;
    let budget = memory_budget()?;
    let initial = state(&spec.obs, &a.p)?;
    let ispec = integerize(&spec.obs, a.max_denominator)?;
    let mut rows = Vec::with_capacity(a.copies.len());
    let mut target = None;
    for &n in &a.copies {
        let r = distilled_state_with_budget(&ispec, &initial, n, budget)?;
        rows.push(vec![json!(n), json!(r.tv_to_target), json!(r.log_dim_max), json!(r.n_eigenspaces)]);
        target.get_or_insert(r.target);
    }
    let mut summary = Map::new();
    summary.insert("max_denominator".into(), json!(a.max_denominator));
    summary.insert("integerization_error".into(), json!(ispec.error));
    if let Some(t) = target {
        summary.insert("target".into(), json!(spec.obs.to_original(t.p())));
    }
    Ok(Output::Table(Table {
        columns: vec!["copies", "tv_to_target", "log_dim_max", "n_eigenspaces"],
        rows,
        summary,
    }))
}

fn clt(a: &CltArgs) -> CliResult<Output> {
    let spec = load_spectrum(&a.spectrum.spectrum)?;
    single(&spec.obs)?;
    let obs = &spec.obs;
    let initial = state(obs, &a.p)?;
    let final_state = match (a.beta, a.energy) {
        (Some(b), None) => gibbs_state(obs, &[b])?,
        (None, Some(e)) => fit_canonical_with(obs, e, &ToleranceConfig::default())?.state,
        _ => return Err(CliError::Usage("give the final state with --beta or --energy".into())),
    };
    let dist = subsystem_energy_change(&initial, &final_state, obs)?;
    let mut rows = Vec::with_capacity(a.copies.len());
    for &n in &a.copies {
        let r = moments_of_iid(&dist, n, 4)?;
        let m = &r.central_moments_of_mean;
        let g = &r.gaussian_reference;
        rows.push(vec![json!(n), json!(m[0]), json!(m[1]), json!(m[2]), json!(g[0]), json!(g[2]), json!(r.lyapunov_ratio)]);
    }
    let mut summary = Map::new();
    summary.insert("mean_change".into(), json!(dist.mean()));
    summary.insert("variance_change".into(), json!(dist.variance()));
    Ok(Output::Table(Table {
        columns: vec!["N", "mu2", "mu3", "mu4", "gauss2", "gauss4", "lyapunov_ratio"],
        rows,
        summary,
    }))
}
