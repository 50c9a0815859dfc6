//! Invariant checks shared by `bbe verify` and the acceptance suite.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evolution::{evolve, make_initial_field, EvolveOptions, InitialState};
use crate::generators::{
    build_me_generator, build_standard_generator, compare_operators, kossakowski_spectrum, rate_identity, Generator,
    StandardVariant, ENTRYWISE_TOLERANCE,
};
use crate::kernel::{
    gamma_forward, gamma_tilde_by_kernel_integration, kernel_oracle_mc, KernelEvaluator, KernelTensor, RateTable,
    VelocityGrid,
};
use crate::model::AtomGasModel;
use crate::scattering::{optical_theorem_residual, AmplitudeModel};
use crate::Vec3;

/// Outcome of one invariant check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Measured statistic (deviation, residual, ratio, ...).
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, value: f64, tolerance: f64, detail: String) -> Self {
        Self { name: name.into(), passed: value <= tolerance, value, tolerance, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    pub seed: u64,
    pub kossakowski_pairs: usize,
    pub mc_geometries: usize,
    pub mc_samples: usize,
    /// Mollifier width in units of the perturber thermal speed.
    pub mc_eta: f64,
    pub mc_sigmas: f64,
    pub normalization_nodes: usize,
    pub hermitian_fields: usize,
    pub trace_steps: usize,
    pub positivity_fields: usize,
    pub positivity_steps: usize,
    /// `dt * |G|` used by the evolution checks.
    pub step_fraction: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 20_240_917,
            kossakowski_pairs: 100,
            mc_geometries: 5,
            mc_samples: 1_000_000,
            mc_eta: 1.0 / 20.0,
            mc_sigmas: 3.0,
            normalization_nodes: 5,
            hermitian_fields: 100,
            trace_steps: 1000,
            positivity_fields: 20,
            positivity_steps: 100,
            step_fraction: 0.4,
        }
    }
}

pub const HERMITICITY_TOLERANCE: f64 = 1e-12;
pub const KOSSAKOWSKI_TOLERANCE: f64 = 1e-10;
pub const OPTICAL_TOLERANCE: f64 = 1e-10;
pub const NORMALIZATION_TOLERANCE: f64 = 1e-2;
pub const RE_GAMMA_TOLERANCE: f64 = 1e-10;
pub const TRACE_TOLERANCE: f64 = 1e-8;
pub const POSITIVITY_TOLERANCE: f64 = 1e-8;
pub const EVOLUTION_HERMITICITY_TOLERANCE: f64 = 1e-10;
pub const RK4_RATIO_RANGE: (f64, f64) = (12.0, 20.0);

/// Stored kernel entries obey `K_{mj,nk} = conj K_{nk,mj}` with real populations.
pub fn kernel_hermiticity(tensor: &KernelTensor) -> Check {
    let n = tensor.levels();
    let mut worst = 0.0f64;
    for i in 0..tensor.nodes() {
        for l in 0..tensor.nodes() {
            for a in 0..n * n {
                for b in 0..n * n {
                    let (m, j, p, k) = (a / n, a % n, b / n, b % n);
                    let (Some(x), Some(y)) = (tensor.get(m, j, p, k, i, l), tensor.get(p, k, m, j, i, l)) else {
                        continue;
                    };
                    let s = x.norm().max(y.norm());
                    if s > 0.0 {
                        worst = worst.max((x - y.conj()).norm() / s);
                    }
                }
            }
        }
    }
    Check::at_most(
        "kernel_hermiticity",
        worst,
        HERMITICITY_TOLERANCE,
        format!("{} node pairs", tensor.nodes() * tensor.nodes()),
    )
}

/// Secular-masked Kossakowski matrices are PSD at random node pairs.
pub fn kossakowski_psd(tensor: &KernelTensor, pairs: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = tensor.nodes();
    let mut worst = f64::NEG_INFINITY;
    let mut at = (0, 0);
    for _ in 0..pairs {
        let (i, l) = (rng.gen_range(0..nodes), rng.gen_range(0..nodes));
        let (lo, hi) = kossakowski_spectrum(tensor, i, l);
        let r = if hi > 0.0 { -lo / hi } else if lo < 0.0 { f64::INFINITY } else { 0.0 };
        if r > worst {
            worst = r;
            at = (i, l);
        }
    }
    Check::at_most(
        "kossakowski_psd",
        worst.max(0.0),
        KOSSAKOWSKI_TOLERANCE,
        format!("-min/max eigenvalue over {pairs} pairs, worst at ({}, {})", at.0, at.1),
    )
}

/// Random geometry with both velocities drawn from a Gaussian of width `u`.
pub fn random_geometry(rng: &mut ChaCha8Rng, u: f64) -> (Vec3, Vec3) {
    let mut g = || Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * u;
    (g(), g())
}

/// Delta-reduced kernel against the mollified Monte Carlo oracle.
pub fn mc_oracle(gas: &AtomGasModel, amp: &AmplitudeModel, opts: &VerifyOptions) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6d63);
    let u = gas.thermal_speed();
    let eval = KernelEvaluator::new(gas, amp, Default::default());
    let n = gas.levels();
    // one secular entry per geometry, cycling through the entry types
    let mut indices = vec![(0, 0, 0, 0)];
    if n > 1 {
        indices.extend([(0, 1, 0, 1), (0, 0, 1, 1), (1, 0, 1, 0), (1, 1, 1, 1)]);
    }
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for g in 0..opts.mc_geometries {
        let (v, v1) = random_geometry(&mut rng, u);
        let idx = indices[g % indices.len()];
        let (m, j, p, k) = idx;
        let want = eval.point(m, j, p, k, &v, &v1)?;
        let est = kernel_oracle_mc(gas, amp, idx, &v, &v1, opts.mc_eta * u, opts.mc_samples, opts.seed + g as u64);
        let s = est.sigmas_from(want);
        if s > worst {
            worst = s;
            detail = format!(
                "worst K({}{},{}{}) at geometry {g}: quadrature {want:.6e}, MC {:.6e} +- {:.1e}",
                m + 1,
                j + 1,
                p + 1,
                k + 1,
                est.value,
                est.error.norm()
            );
        }
    }
    Ok(Check::at_most("mc_oracle", worst, opts.mc_sigmas, detail))
}

/// Optical-theorem residual at 20 speeds; informational for non-unitary models.
pub fn optical_theorem(gas: &AtomGasModel, amp: &AmplitudeModel) -> Result<Check> {
    let u = gas.thermal_speed();
    let mut worst = 0.0f64;
    for m in 0..gas.levels() {
        for s in 1..=20 {
            let v = Vec3::new(0.0, 0.0, 0.3 * u * s as f64);
            worst = worst.max(optical_theorem_residual(amp, gas, m, &v)?);
        }
    }
    let mut c = Check::at_most("optical_theorem", worst, OPTICAL_TOLERANCE, String::new());
    if amp.is_unitary() {
        c.detail = "unitary model".into();
    } else {
        c.passed = true;
        c.detail = "model is not unitary; residual reported only".into();
    }
    Ok(c)
}

/// `Gamma_mm` from forward amplitudes against direct integration of the kernel
/// over outgoing velocities, at a few grid nodes.
pub fn normalization_identity(
    gas: &AtomGasModel,
    amp: &AmplitudeModel,
    grid: &VelocityGrid,
    nodes: usize,
    seed: u64,
) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f);
    let mut picks: Vec<usize> = (0..grid.len()).filter(|&i| grid.node(i).norm() == 0.0).collect();
    while picks.len() < nodes.min(grid.len()) {
        let i = rng.gen_range(0..grid.len());
        if !picks.contains(&i) {
            picks.push(i);
        }
    }
    let mut worst = (0.0f64, 0, 0);
    for &l in &picks {
        for m in 0..gas.levels() {
            let v1 = grid.node(l);
            let fwd = gamma_forward(gas, amp, m, m, v1)?.re;
            let ker = gamma_tilde_by_kernel_integration(gas, amp, m, v1, 1, 24)?;
            let s = fwd.abs().max(ker.abs());
            let rel = if s > 0.0 { (fwd - ker).abs() / s } else { 0.0 };
            if rel > worst.0 {
                worst = (rel, l, m);
            }
        }
    }
    Ok(Check::at_most(
        "normalization_identity",
        worst.0,
        NORMALIZATION_TOLERANCE,
        format!("{} nodes, worst at node {} level {}", picks.len(), worst.1, worst.2 + 1),
    ))
}

/// `|Re Gamma_mn - (Gamma_mm + Gamma_nn)/2|` at every grid node.
pub fn re_gamma(gas: &AtomGasModel, amp: &AmplitudeModel, grid: &VelocityGrid) -> Result<Check> {
    let n = gas.levels();
    let mut worst = 0.0f64;
    for v in grid.nodes() {
        let g: Vec<Complex64> =
            (0..n * n).map(|a| gamma_forward(gas, amp, a / n, a % n, v)).collect::<Result<_>>()?;
        for m in 0..n {
            for k in 0..n {
                let (gmm, gkk) = (g[m * n + m].re, g[k * n + k].re);
                let scale = gmm.abs().max(gkk.abs());
                if scale > 0.0 {
                    worst = worst.max((g[m * n + k].re - 0.5 * (gmm + gkk)).abs() / scale);
                }
            }
        }
    }
    Ok(Check::at_most("re_gamma", worst, RE_GAMMA_TOLERANCE, format!("{} nodes", grid.len())))
}

/// Shared-tensor entrywise equality and the independent-route rate identity.
pub fn equivalence(
    me: &Generator,
    reduced: &Generator,
    gas: &AtomGasModel,
    amp: &AmplitudeModel,
    grid: &VelocityGrid,
) -> Result<[Check; 2]> {
    let r = compare_operators(me, reduced)?;
    let entry = Check::at_most(
        "equivalence_entrywise",
        r.population.max_rel.max(r.coherence.max_rel),
        ENTRYWISE_TOLERANCE,
        format!("population {:.3e}, coherence {:.3e}", r.population.max_rel, r.coherence.max_rel),
    );
    let id = rate_identity(gas, amp, grid)?;
    let mut detail = format!("worst at node {} level {}", id.worst_node, id.worst_level + 1);
    if id.optical_theorem_violated {
        detail.push_str("; amplitude violates the optical theorem");
    }
    let rates = Check::at_most("equivalence_rate_identity", id.max_rel_deviation, id.tolerance, detail);
    Ok([entry, rates])
}

fn random_hermitian(rng: &mut ChaCha8Rng, nodes: usize, n: usize) -> Vec<Complex64> {
    let mut x = vec![Complex64::default(); nodes * n * n];
    for i in 0..nodes {
        for j in 0..n {
            x[(i * n + j) * n + j] = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
            for k in j + 1..n {
                let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                x[(i * n + j) * n + k] = z;
                x[(i * n + k) * n + j] = z.conj();
            }
        }
    }
    x
}

/// `G x` is Hermitian per node for random Hermitian `x`.
pub fn hermiticity_preservation(gens: &[&Generator], fields: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6865);
    let mut worst = 0.0f64;
    for g in gens {
        let n = g.levels();
        let mut y = vec![Complex64::default(); g.dim()];
        for _ in 0..fields {
            let x = random_hermitian(&mut rng, g.nodes(), n);
            g.apply(&x, &mut y);
            let scale = y.iter().fold(0.0f64, |a, z| a.max(z.norm()));
            if scale == 0.0 {
                continue;
            }
            for i in 0..g.nodes() {
                for j in 0..n {
                    for k in j + 1..n {
                        let d = (y[(i * n + j) * n + k] - y[(i * n + k) * n + j].conj()).norm();
                        worst = worst.max(d / scale);
                    }
                }
            }
        }
    }
    Check::at_most(
        "hermiticity_preservation",
        worst,
        HERMITICITY_TOLERANCE,
        format!("{fields} random fields per generator"),
    )
}

fn step_for(g: &Generator, fraction: f64) -> f64 {
    if g.row_norm() > 0.0 {
        fraction / g.row_norm()
    } else {
        1.0
    }
}

/// Trace drift and Hermiticity residual over `steps` RK4 steps.
pub fn trace_conservation(
    gens: &[&Generator],
    gas: &AtomGasModel,
    grid: &VelocityGrid,
    opts: &VerifyOptions,
) -> Result<[Check; 2]> {
    let rho = make_initial_field(gas, grid, &InitialState::RandomPsd { seed: opts.seed, atom_thermal_speed: None })?;
    let (mut drift, mut herm) = (0.0f64, 0.0f64);
    for g in gens {
        let dt = step_for(g, opts.step_fraction);
        let mut eo = EvolveOptions::new(dt * opts.trace_steps as f64, dt);
        eo.sample_every = 10;
        let traj = evolve(g, &rho, &eo)?;
        drift = drift.max(traj.samples.iter().map(|s| (s.trace - 1.0).abs()).fold(0.0, f64::max));
        herm = herm.max(traj.max_herm_residual());
    }
    Ok([
        Check::at_most("trace_conservation", drift, TRACE_TOLERANCE, format!("{} RK4 steps", opts.trace_steps)),
        Check::at_most(
            "evolution_hermiticity",
            herm,
            EVOLUTION_HERMITICITY_TOLERANCE,
            "largest per-node residual during evolution".into(),
        ),
    ])
}

/// Smallest node eigenvalue over evolutions from random PSD fields.
pub fn positivity(gens: &[&Generator], gas: &AtomGasModel, grid: &VelocityGrid, opts: &VerifyOptions) -> Result<Check> {
    let mut worst = f64::INFINITY;
    for f in 0..opts.positivity_fields {
        let spec = InitialState::RandomPsd { seed: opts.seed.wrapping_add(1 + f as u64), atom_thermal_speed: None };
        let rho = make_initial_field(gas, grid, &spec)?;
        for g in gens {
            let dt = step_for(g, opts.step_fraction);
            let traj = evolve(g, &rho, &EvolveOptions::new(dt * opts.positivity_steps as f64, dt))?;
            worst = worst.min(traj.min_eigenvalue());
        }
    }
    Ok(Check::at_most(
        "positivity",
        (-worst).max(0.0),
        POSITIVITY_TOLERANCE,
        format!(
            "smallest eigenvalue {worst:.3e} over {} fields x {} generators",
            opts.positivity_fields,
            gens.len()
        ),
    ))
}

/// Error ratio `e(dt)/e(dt/2)` of the final level-1 population against a
/// `dt/32` reference run.
pub fn rk4_order(g: &Generator, gas: &AtomGasModel, grid: &VelocityGrid, fraction: f64) -> Result<Check> {
    let rho = make_initial_field(gas, grid, &InitialState::RandomPsd { seed: 17, atom_thermal_speed: None })?;
    let dt = step_for(g, fraction);
    let t_final = 16.0 * dt;
    let run = |h: f64| -> Result<f64> {
        let mut eo = EvolveOptions::new(t_final, h);
        eo.sample_every = usize::MAX;
        let traj = evolve(g, &rho, &eo)?;
        Ok(traj.final_state.integrated(0, 0).re)
    };
    let reference = run(dt / 32.0)?;
    let e1 = (run(dt)? - reference).abs();
    let e2 = (run(dt / 2.0)? - reference).abs();
    let ratio = if e2 > 0.0 { e1 / e2 } else { f64::INFINITY };
    let (lo, hi) = RK4_RATIO_RANGE;
    Ok(Check {
        name: "rk4_order".into(),
        passed: (lo..=hi).contains(&ratio),
        value: ratio,
        tolerance: hi,
        detail: format!("errors {e1:.3e} and {e2:.3e}; accepted range [{lo}, {hi}]"),
    })
}

/// Full report of a verification run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{}.passed = {}", c.name, c.passed);
            let _ = writeln!(s, "{}.value = {:.16e}", c.name, c.value);
            let _ = writeln!(s, "{}.tolerance = {:.16e}", c.name, c.tolerance);
        }
        let _ = writeln!(s, "passed = {}", self.passed());
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {:<26} {:.3e} (tol {:.1e})  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.tolerance,
                c.detail
            );
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(s, "{} checks, {failed} failed", self.checks.len());
        s
    }
}

/// Runs every check on one model/grid pair with a prebuilt tensor.
pub fn run_suite(
    gas: &AtomGasModel,
    amp: &AmplitudeModel,
    grid: &VelocityGrid,
    tensor: &KernelTensor,
    opts: &VerifyOptions,
) -> Result<VerifyReport> {
    let rates = RateTable::discrete(tensor, grid, gas, amp)?;
    let me = build_me_generator(tensor, &rates, grid)?;
    let reduced = build_standard_generator(tensor, &rates, grid, StandardVariant::Reduced)?;
    let mut checks = vec![
        kernel_hermiticity(tensor),
        kossakowski_psd(tensor, opts.kossakowski_pairs, opts.seed),
    ];
    log::info!("checking kernel against the Monte Carlo oracle");
    checks.push(mc_oracle(gas, amp, opts)?);
    checks.push(optical_theorem(gas, amp)?);
    checks.push(normalization_identity(gas, amp, grid, opts.normalization_nodes, opts.seed)?);
    checks.push(re_gamma(gas, amp, grid)?);
    checks.extend(equivalence(&me, &reduced, gas, amp, grid)?);
    checks.push(hermiticity_preservation(&[&me, &reduced], opts.hermitian_fields, opts.seed));
    log::info!("running evolution checks");
    checks.extend(trace_conservation(&[&me, &reduced], gas, grid, opts)?);
    checks.push(positivity(&[&me, &reduced], gas, grid, opts)?);
    checks.push(rk4_order(&me, gas, grid, opts.step_fraction)?);
    Ok(VerifyReport { checks })
}
