//! Acceptance suite. Each test covers one numbered criterion, prints one
//! `PASS`/`FAIL` line per check, and fails if any check fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use ensemblelab_core::distill::{distilled_state, integerize, randomness_gadget, IntegerSpectrum};
use ensemblelab_core::gpmaps::{breakdown_scan, energy_grid, lp_constants, GAP_THRESHOLD};
use ensemblelab_core::macrolimit::{lyapunov_check, moments_of_iid, subsystem_energy_change, DiscreteDistribution};
use ensemblelab_core::maxent::{fit_canonical, fit_gge, gibbs_state, thermal_energy};
use ensemblelab_core::spectra::{sample_compatible, shannon_entropy, DiagonalState, Macrostate, ObservableSet, ToleranceConfig};
use ensemblelab_core::transitions::{reachable_canonical, reachable_gge, rescaled_swap, trivialization_witness};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes straight to the process stdout so the lines survive test-output capture.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

struct Checks {
    criterion: u32,
    failed: Vec<String>,
}

impl Checks {
    fn new(criterion: u32) -> Self {
        Checks { criterion, failed: Vec::new() }
    }

    fn check(&mut self, name: &str, ok: bool, detail: String) {
        let tag = if ok { "PASS" } else { "FAIL" };
        report(&format!("criterion {:>2} [{tag}] {name}: {detail}", self.criterion));
        if !ok {
            self.failed.push(name.to_string());
        }
    }

    fn timed(&mut self, start: Instant, limit: Duration) {
        let took = start.elapsed();
        self.check("runtime", took < limit, format!("{took:.2?} (limit {limit:?})"));
    }

    fn finish(self) {
        assert!(self.failed.is_empty(), "criterion {} failed: {:?}", self.criterion, self.failed);
    }
}

fn h(v: &[f64]) -> ObservableSet {
    ObservableSet::hamiltonian(v).unwrap()
}

fn random_levels(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

fn random_state(rng: &mut ChaCha8Rng, d: usize) -> DiagonalState {
    let w: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 1e-3).collect();
    DiagonalState::from_weights(&w).unwrap()
}

#[test]
fn criterion_01_max_entropy_fitting() {
    let mut c = Checks::new(1);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_res, mut worst_beta) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = rng.random_range(2..=16);
        let obs = h(&random_levels(&mut rng, d));
        let beta = rng.random::<f64>() * 20.0 - 10.0;
        let e = thermal_energy(&obs, &[beta]).unwrap()[0];
        let fit = fit_canonical(&obs, e).unwrap();
        worst_res = worst_res.max(fit.residual);
        worst_beta = worst_beta.max((fit.beta[0] - beta).abs());
    }
    c.check("canonical residual <= 1e-10", worst_res <= 1e-10, format!("max {worst_res:.3e}"));
    c.check("canonical beta round trip <= 1e-8", worst_beta <= 1e-8, format!("max {worst_beta:.3e}"));

    let mut worst_gge = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=3);
        let d = rng.random_range(n + 1..=12);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_levels(&mut rng, d)).collect();
        let obs = ObservableSet::new(rows).unwrap();
        let beta: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let v = thermal_energy(&obs, &beta).unwrap();
        let fit = fit_gge(&obs, &v).unwrap();
        worst_gge = worst_gge.max(fit.residual);
    }
    c.check("gge residual <= 1e-10", worst_gge <= 1e-10, format!("max {worst_gge:.3e}"));
    c.timed(start, Duration::from_secs(5));
    c.finish();
}

#[test]
fn criterion_02_max_entropy_dominance() {
    let mut c = Checks::new(2);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let tol = ToleranceConfig::default();
    let (mut worst, mut equality_off_gamma, mut total) = (f64::NEG_INFINITY, 0usize, 0usize);
    for k in 0..20 {
        let d = rng.random_range(3..=8);
        let obs = h(&random_levels(&mut rng, d));
        let (lo, hi) = (obs.min(0), obs.max(0));
        let e = lo + (hi - lo) * (0.15 + 0.7 * rng.random::<f64>());
        let m = Macrostate::energy(obs.clone(), e).unwrap();
        let gamma = fit_canonical(&obs, e).unwrap().state;
        let s_gamma = shannon_entropy(&gamma);
        for s in sample_compatible(&m, 1000, 1000 + k, &tol).unwrap() {
            let gap = shannon_entropy(&s) - s_gamma;
            worst = worst.max(gap);
            if gap.abs() <= 1e-12 && s.tv_distance(&gamma) > 1e-6 {
                equality_off_gamma += 1;
            }
            total += 1;
        }
    }
    c.check("S(rho) <= S(gamma) + 1e-12", worst <= 1e-12, format!("max S(rho) - S(gamma) = {worst:.3e} over {total} states"));
    c.check("equality only at gamma", equality_off_gamma == 0, format!("{equality_off_gamma} states tie without being gamma"));
    c.timed(start, Duration::from_secs(10));
    c.finish();
}

#[test]
fn criterion_03_reachability_oracles() {
    let mut c = Checks::new(3);
    let start = Instant::now();
    let obs = h(&[0.0, 1.0, 2.5]);
    let beta = 1.2;
    let m = Macrostate::energy(obs.clone(), 0.9).unwrap();
    let gamma_e = fit_canonical(&obs, 0.9).unwrap().state;
    let gamma_b = gibbs_state(&obs, &[beta]).unwrap();
    c.check("(e,H) -> gamma_e allowed", reachable_canonical(&m, &gamma_e, beta).unwrap().allowed, String::new());
    c.check("(e,H) -> gamma_beta allowed", reachable_canonical(&m, &gamma_b, beta).unwrap().allowed, String::new());
    let thermal = Macrostate::energy(obs.clone(), thermal_energy(&obs, &[beta]).unwrap()[0]).unwrap();
    let v = reachable_canonical(&thermal, &DiagonalState::pure(3, 2), beta).unwrap();
    c.check("thermal macrostate -> pure excited disallowed", !v.allowed, format!("margin {:.3e}", v.margin));

    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut disagreements = 0;
    for _ in 0..200 {
        let d = rng.random_range(2..=8);
        let obs = h(&random_levels(&mut rng, d));
        let e = thermal_energy(&obs, &[rng.random::<f64>() * 6.0 - 3.0]).unwrap()[0];
        let m = Macrostate::energy(obs.clone(), e).unwrap();
        let target = random_state(&mut rng, d);
        let mut b = rng.random::<f64>() * 6.0 - 3.0;
        if b.abs() < 0.05 {
            b = 0.05f64.copysign(b);
        }
        let a = reachable_canonical(&m, &target, b).unwrap().allowed;
        let g = reachable_gge(&m, &target, &[b]).unwrap().allowed;
        disagreements += usize::from(a != g);
    }
    c.check("gge (n=1) agrees with canonical", disagreements == 0, format!("{disagreements}/200 disagreements"));
    c.timed(start, Duration::from_secs(5));
    c.finish();
}

#[test]
fn criterion_04_swap_conserves_energy() {
    let mut c = Checks::new(4);
    let tol = ToleranceConfig::default();
    for (spec, e, beta, seed) in [(vec![0.0, 1.0, 2.0], 0.7, 1.3, 41u64), (vec![0.0, 0.4, 1.1, 1.7, 3.0], 1.9, 0.6, 42)] {
        let obs = h(&spec);
        let m = Macrostate::energy(obs.clone(), e).unwrap();
        let states = sample_compatible(&m, 500, seed, &tol).unwrap();
        let worst = states
            .iter()
            .map(|s| rescaled_swap(s, &m, beta).unwrap().delta_mean_energy.abs())
            .fold(0.0, f64::max);
        c.check(
            &format!("d={} |delta E| <= 1e-12", spec.len()),
            worst <= 1e-12,
            format!("max {worst:.3e} over {} states", states.len()),
        );
    }
    c.finish();
}

#[test]
fn criterion_05_f_constant() {
    let mut c = Checks::new(5);
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let d = rng.random_range(3..=5);
        let levels: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 3.0).collect();
        let obs = h(&levels);
        let beta = (rng.random::<f64>() * 4.0 - 2.0).max(0.05);
        let k = lp_constants(&obs, beta).unwrap();
        let s2: f64 = levels.iter().map(|x| x * x).sum();
        worst = worst.max((k.f_const - s2).abs());
    }
    c.check("|F - sum h^2| <= 1e-8", worst <= 1e-8, format!("max {worst:.3e} over 25 (H, beta)"));
    c.finish();
}

#[test]
fn criterion_06_breakdown_of_equivalence() {
    let mut c = Checks::new(6);
    let start = Instant::now();
    let obs = h(&[0.0, 1.0, 2.0]);
    let scan = breakdown_scan(&obs, 1.0, &energy_grid(&obs, 41)).unwrap();
    let gapped = scan.rows.iter().filter(|r| r.gap() > GAP_THRESHOLD).count();
    c.check("strict_gap", scan.strict_gap, format!("max gap {:.6e}", scan.max_gap));
    c.check("gap > 1e-7 at >= 1 grid point", gapped >= 1, format!("{gapped}/41 grid points"));
    c.check(
        "class-preserving bounds inside thermal bounds",
        scan.max_sandwich_violation <= 1e-9,
        format!("max violation {:.3e}", scan.max_sandwich_violation),
    );
    c.timed(start, Duration::from_secs(30));
    c.finish();
}

/// Reduced one-copy state after per-eigenspace averaging, by enumerating all strings.
fn brute_force_reduced(ispec: &IntegerSpectrum, p: &[f64], copies: usize) -> Vec<f64> {
    let d = ispec.d();
    let mut spaces: BTreeMap<Vec<i64>, (f64, f64, Vec<f64>)> = BTreeMap::new();
    for code in 0..d.pow(copies as u32) {
        let (mut x, mut prob) = (code, 1.0);
        let mut charge = vec![0i64; ispec.n()];
        let first = code % d;
        for _ in 0..copies {
            let a = x % d;
            x /= d;
            for (c, v) in charge.iter_mut().zip(ispec.level(a)) {
                *c += v;
            }
            prob *= p[a];
        }
        let e = spaces.entry(charge).or_insert_with(|| (0.0, 0.0, vec![0.0; d]));
        e.0 += 1.0;
        e.1 += prob;
        e.2[first] += 1.0;
    }
    let mut out = vec![0.0; d];
    for (count, prob, firsts) in spaces.values() {
        for (o, f) in out.iter_mut().zip(firsts) {
            *o += prob * f / count;
        }
    }
    out
}

#[test]
fn criterion_07_distillation() {
    let mut c = Checks::new(7);
    let start = Instant::now();
    let qubit = integerize(&h(&[0.0, 1.0]), 1).unwrap();
    let initial = DiagonalState::new(vec![0.9, 0.1]).unwrap();
    let tvs: Vec<(usize, f64)> = [2, 4, 8, 16, 32, 64]
        .into_iter()
        .map(|n| (n, distilled_state(&qubit, &initial, n).unwrap().tv_to_target))
        .collect();
    let strictly = tvs.windows(2).all(|w| w[1].1 < w[0].1);
    c.check("qubit (0.9, 0.1): tv strictly decreasing", strictly, format!("{tvs:?}"));
    let last = tvs.last().unwrap().1;
    c.check("qubit tv at 64 copies <= 0.02", last <= 0.02, format!("{last:.3e}"));

    let mut worst_fixed = 0.0f64;
    for (levels, beta) in [(vec![0.0, 1.0], 1.0), (vec![0.0, 1.0, 2.0], 0.7)] {
        let obs = h(&levels);
        let ispec = integerize(&obs, 1).unwrap();
        let g = gibbs_state(&obs, &[beta]).unwrap();
        for n in [1, 2, 4, 8, 16, 32, 64] {
            worst_fixed = worst_fixed.max(distilled_state(&ispec, &g, n).unwrap().tv_to_target);
        }
    }
    c.check("Gibbs input is a fixed point (tv <= 1e-12)", worst_fixed <= 1e-12, format!("max {worst_fixed:.3e}"));

    let qutrit = integerize(&h(&[0.0, 1.0, 2.0]), 1).unwrap();
    let mut worst_bf = 0.0f64;
    for (ispec, p) in [(&qubit, vec![0.9, 0.1]), (&qutrit, vec![0.5, 0.1, 0.4])] {
        let s = DiagonalState::new(p.clone()).unwrap();
        for n in 1..=8 {
            let dp = distilled_state(ispec, &s, n).unwrap().reduced;
            let bf = brute_force_reduced(ispec, &p, n);
            for (a, b) in dp.p().iter().zip(&bf) {
                worst_bf = worst_bf.max((a - b).abs());
            }
        }
    }
    c.check("DP equals enumeration for copies <= 8", worst_bf <= 1e-10, format!("max {worst_bf:.3e}"));

    // Context for the first check: a qutrit state that is not Gibbs for its own
    // energy does converge strictly.
    let q = DiagonalState::new(vec![0.5, 0.1, 0.4]).unwrap();
    let qt: Vec<f64> = [2, 4, 8, 16, 32, 64]
        .into_iter()
        .map(|n| distilled_state(&qutrit, &q, n).unwrap().tv_to_target)
        .collect();
    report(&format!("criterion  7 [INFO] qutrit (0.5, 0.1, 0.4) tv over copies 2..64: {qt:?}"));
    c.timed(start, Duration::from_secs(60));
    c.finish();
}

#[test]
fn criterion_08_randomness_gadget() {
    let mut c = Checks::new(8);
    let (mut exact, mut worst) = (true, 0.0f64);
    for beta in [0.05, 0.5, 1.0, 2.0, 7.5] {
        let g = randomness_gadget(beta).unwrap();
        exact &= g.weights == (0.5, 0.5);
        worst = worst.max((beta * g.delta - (1.0 + 2f64.sqrt()).ln()).abs());
    }
    c.check("weights exactly (1/2, 1/2)", exact, String::new());
    c.check("beta * delta = ln(1 + sqrt 2) within 1e-12", worst <= 1e-12, format!("max {worst:.3e}"));
    c.finish();
}

#[test]
fn criterion_09_trivialization_witness() {
    let mut c = Checks::new(9);
    let q = h(&[0.0, 1.0]);
    let split: Vec<f64> = (1..=5).map(|n| trivialization_witness(&q, 2.0, &q, 0.5, n, n).unwrap()).collect();
    let best = split.iter().copied().fold(0.0, f64::max);
    c.check("beta 2 vs 0.5: positive ergotropy for some n <= 5", best > 0.0, format!("{split:?}"));
    let mut worst = 0.0f64;
    for b in [0.5, 1.0, 2.0] {
        for n in 1..=5 {
            worst = worst.max(trivialization_witness(&q, b, &q, b, n, n).unwrap());
        }
    }
    c.check("equal temperatures: ergotropy <= 1e-12", worst <= 1e-12, format!("max {worst:.3e}"));
    c.finish();
}

#[test]
fn criterion_10_macroscopic_limit() {
    let mut c = Checks::new(10);
    let start = Instant::now();
    let obs = h(&[0.0, 1.0]);
    let init = DiagonalState::new(vec![0.9, 0.1]).unwrap();
    let fin = gibbs_state(&obs, &[1.0]).unwrap();
    let x: DiscreteDistribution = subsystem_energy_change(&init, &fin, &obs).unwrap();
    let ratio = |n: usize| lyapunov_check(&vec![x.clone(); n], 1.0).unwrap();
    let (r16, r64, r256) = (ratio(16), ratio(64), ratio(256));
    let (a, b) = (r64 / r16, r256 / r64);
    c.check(
        "Lyapunov ratio ~ N^-1/2 within 5%",
        (a - 0.5).abs() <= 0.025 && (b - 0.5).abs() <= 0.025,
        format!("r64/r16 = {a:.6}, r256/r64 = {b:.6}"),
    );
    let var = x.variance();
    let mut worst = 0.0f64;
    for n in [1usize, 16, 64, 256] {
        let r = moments_of_iid(&x, n, 4).unwrap();
        worst = worst.max((r.central_moments_of_mean[0] - var / n as f64).abs() / (var / n as f64));
    }
    c.check("mu2(X/N) = sigma^2/N", worst <= 1e-14, format!("max relative error {worst:.3e}"));
    let r = moments_of_iid(&x, 256, 4).unwrap();
    let kurt = r.central_moments_of_mean[2] / (3.0 * r.central_moments_of_mean[0].powi(2));
    c.check("mu4/(3 mu2^2) within 2% of 1 at N = 256", (kurt - 1.0).abs() <= 0.02, format!("{kurt:.6}"));
    c.timed(start, Duration::from_secs(5));
    c.finish();
}

#[test]
fn criterion_11_cli_determinism() {
    let mut c = Checks::new(11);
    let dir = tempfile::TempDir::new().unwrap();
    let qutrit = dir.path().join("qutrit.json");
    let qubit = dir.path().join("qubit.json");
    std::fs::write(&qutrit, r#"{"d":3,"n":1,"eigenvalues":[[0,1,2]]}"#).unwrap();
    std::fs::write(&qubit, r#"{"d":2,"n":1,"eigenvalues":[[0,1]]}"#).unwrap();
    let (qt, qb) = (qutrit.to_str().unwrap(), qubit.to_str().unwrap());
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("breakdown", vec!["breakdown", "--spectrum", qt, "--beta", "1.0", "--grid", "41", "--seed", "7"]),
        ("distill", vec!["distill", "--spectrum", qb, "--p", "0.9,0.1", "--copies", "2,4,8,16,32", "--seed", "7"]),
        ("clt", vec!["clt", "--spectrum", qb, "--p", "0.9,0.1", "--beta", "1", "--seed", "7"]),
    ];
    for (name, args) in cases {
        let outputs: Vec<Vec<u8>> = (0..3)
            .map(|_| {
                let o = Command::new(env!("CARGO_BIN_EXE_ensemblelab")).args(&args).output().unwrap();
                assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
                o.stdout
            })
            .collect();
        let same = outputs.windows(2).all(|w| w[0] == w[1]) && !outputs[0].is_empty();
        c.check(&format!("{name} byte-identical over 3 runs"), same, format!("{} bytes", outputs[0].len()));
    }
    c.finish();
}
