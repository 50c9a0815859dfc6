//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use bbe_core::generators::{build_me_generator, build_standard_generator, Generator, StandardVariant};
use bbe_core::kernel::{KernelBlock, KernelEvaluator, KernelQuadrature, KernelTensor, RateTable, VelocityGrid};
use bbe_core::presets::{self, Preset};
use bbe_core::scattering::optical_theorem_residual;
use bbe_core::verification::{self as ver, Check, VerifyOptions};
use bbe_core::{AmplitudeModel, AmplitudeSpec, AtomGasModel, Complex64, GasParams, Thermal, Vec3};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn from_checks(id: usize, name: &'static str, checks: &[Check]) -> Outcome {
    let passed = checks.iter().all(|c| c.passed);
    let detail = checks
        .iter()
        .map(|c| format!("{}={:.3e} (tol {:.1e})", c.name, c.value, c.tolerance))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome { id, name, passed, detail }
}

fn geometry(rng: &mut ChaCha8Rng, u: f64) -> (Vec3, Vec3) {
    loop {
        let (v, v1) = ver::random_geometry(rng, u);
        if (v - v1).norm() > 0.05 * u {
            return (v, v1);
        }
    }
}

/// Secular-masked Kossakowski matrix assembled from a point block.
fn kossakowski(b: &KernelBlock) -> DMatrix<Complex64> {
    let n = b.levels;
    DMatrix::from_fn(n * n, n * n, |a, c| {
        let (m, j, p, k) = (a / n, a % n, c / n, c % n);
        if (m, j) == (p, k) {
            Complex64::new(b.population[m * n + j], 0.0)
        } else if m == j && p == k {
            b.elastic[m * n + p]
        } else {
            Complex64::default()
        }
    })
}

/// Analytic delta reduction for a constant elastic amplitude `c`: the
/// perturber Maxwellian integrated over the plane orthogonal to `D`.
fn constant_closed_form(gas: &AtomGasModel, c2: f64, v: &Vec3, v1: &Vec3) -> f64 {
    let ratio = gas.atom_mass() / gas.reduced_mass();
    let d_vec = (v - v1) * ratio;
    let d = d_vec.norm();
    let u = gas.thermal_speed();
    // longitudinal perturber-frame component fixed by energy conservation
    let x = v1.dot(&(d_vec / d)) + 0.5 * d;
    let transverse = PI * u * u; // int d^2 w exp(-w^2/u^2)
    let norm = (PI * u * u).powf(-1.5);
    2.0 * gas.perturber_density() * ratio.powi(3) * c2 / (2.0 * d) * norm * transverse * (-(x * x) / (u * u)).exp()
}

struct Shared {
    gas: AtomGasModel,
    amp: AmplitudeModel,
    grid: VelocityGrid,
    me: Generator,
    reduced: Generator,
}

fn shared() -> Shared {
    let (gas, amp) = presets::reference(Preset::PartialWave, 2).unwrap();
    let grid = VelocityGrid::cartesian(gas.thermal_speed(), 3.5, 7).unwrap();
    let tensor = KernelTensor::build(&gas, &amp, &grid, KernelQuadrature::default()).unwrap();
    let rates = RateTable::discrete(&tensor, &grid, &gas, &amp).unwrap();
    let me = build_me_generator(&tensor, &rates, &grid).unwrap();
    let reduced = build_standard_generator(&tensor, &rates, &grid, StandardVariant::Reduced).unwrap();
    Shared { gas, amp, grid, me, reduced }
}

fn main() -> ExitCode {
    let opts = VerifyOptions::default();
    let mut out = Vec::new();
    let mut report = |o: Outcome, started: Instant| {
        println!(
            "{} {:>2} {:<24} {} [{:.1}s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail,
            started.elapsed().as_secs_f64()
        );
        out.push(o.passed);
    };

    // 1. stored entries and generator action respect Hermiticity
    let t = Instant::now();
    let mut checks = Vec::new();
    for p in Preset::ALL {
        let (gas, amp) = presets::reference(p, 3).unwrap();
        let grid = VelocityGrid::cartesian(gas.thermal_speed(), 3.5, 3).unwrap();
        let tensor = KernelTensor::build(&gas, &amp, &grid, KernelQuadrature::default()).unwrap();
        let rates = RateTable::discrete(&tensor, &grid, &gas, &amp).unwrap();
        let me = build_me_generator(&tensor, &rates, &grid).unwrap();
        let raw = build_standard_generator(&tensor, &rates, &grid, StandardVariant::Raw).unwrap();
        let mut c = ver::kernel_hermiticity(&tensor);
        c.name = format!("{}:{}", p.name(), c.name);
        checks.push(c);
        let mut h = ver::hermiticity_preservation(&[&me, &raw], opts.hermitian_fields, opts.seed);
        h.name = format!("{}:{}", p.name(), h.name);
        checks.push(h);
    }
    report(from_checks(1, "kernel_hermiticity", &checks), t);

    // 2. Kossakowski matrices are PSD at 100 random geometries per model
    let t = Instant::now();
    let mut worst = 0.0f64;
    for p in Preset::ALL {
        let (gas, amp) = presets::reference(p, 3).unwrap();
        let eval = KernelEvaluator::new(&gas, &amp, KernelQuadrature::default());
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 2);
        for _ in 0..opts.kossakowski_pairs {
            let (v, v1) = geometry(&mut rng, gas.thermal_speed());
            let eig = kossakowski(&eval.block(&v, &v1).unwrap()).symmetric_eigenvalues();
            let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > 0.0 {
                worst = worst.max(-lo / hi);
            } else if lo < 0.0 {
                worst = f64::INFINITY;
            }
        }
    }
    report(
        Outcome {
            id: 2,
            name: "kossakowski_psd",
            passed: worst <= 1e-10,
            detail: format!("max -min/max eigenvalue {worst:.3e} (tol 1e-10), 4 models x 100 geometries"),
        },
        t,
    );

    // 3. constant elastic amplitude against the closed form
    let t = Instant::now();
    let gas = AtomGasModel::new(GasParams {
        level_frequencies: vec![0.0, 0.7],
        atom_mass: 1.7,
        perturber_mass: 0.9,
        perturber_density: 0.3,
        thermal: Thermal::ThermalSpeed(1.2),
        degeneracy_tolerance: None,
    })
    .unwrap();
    let c = Complex64::new(0.4, -0.25);
    let amp = AmplitudeModel::build(
        AmplitudeSpec::Constant { values: vec![vec![c, Complex64::default()], vec![Complex64::default(), c]] },
        &gas,
    )
    .unwrap();
    let eval = KernelEvaluator::new(&gas, &amp, KernelQuadrature::default());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (v, v1) = geometry(&mut rng, gas.thermal_speed());
        let want = constant_closed_form(&gas, c.norm_sqr(), &v, &v1);
        for idx in [(0, 0, 0, 0), (1, 1, 1, 1), (0, 0, 1, 1)] {
            let got = eval.point(idx.0, idx.1, idx.2, idx.3, &v, &v1).unwrap();
            worst = worst.max((got - want).norm() / want);
        }
    }
    report(
        Outcome {
            id: 3,
            name: "closed_form",
            passed: worst <= 1e-3,
            detail: format!("max rel deviation {worst:.3e} (tol 1e-3) at 20 geometries"),
        },
        t,
    );

    // 4. Monte Carlo oracle
    let t = Instant::now();
    let mut checks = Vec::new();
    for p in Preset::ALL {
        let (gas, amp) = presets::reference(p, 2).unwrap();
        let mut c = ver::mc_oracle(&gas, &amp, &opts).unwrap();
        c.name = format!("{}:sigmas", p.name());
        checks.push(c);
    }
    report(from_checks(4, "mc_oracle", &checks), t);

    // 5. optical theorem: unitary model satisfies it, constant real violates it by mu |v| c^2
    let t = Instant::now();
    let (gas, pw) = presets::reference(Preset::PartialWave, 3).unwrap();
    let unitary = ver::optical_theorem(&gas, &pw).unwrap();
    let (gas2, cr) = presets::reference(Preset::ConstantReal, 2).unwrap();
    let mut dev = 0.0f64;
    for s in 1..=20 {
        let speed = 0.3 * s as f64;
        let v = Vec3::new(0.0, speed, 0.0);
        for m in 0..2 {
            let got = optical_theorem_residual(&cr, &gas2, m, &v).unwrap();
            let want = gas2.reduced_mass() * speed * 0.25;
            dev = dev.max((got - want).abs());
        }
    }
    let counter = Check {
        name: "constant_real_counterexample".into(),
        passed: dev <= 1e-10,
        value: dev,
        tolerance: 1e-10,
        detail: String::new(),
    };
    report(from_checks(5, "optical_theorem", &[unitary, counter]), t);

    // 6. Gamma_kk against integrated kernel
    let t = Instant::now();
    let grid = VelocityGrid::cartesian(gas.thermal_speed(), 3.5, 7).unwrap();
    let c = ver::normalization_identity(&gas, &pw, &grid, opts.normalization_nodes, opts.seed).unwrap();
    report(from_checks(6, "normalization_identity", &[c]), t);

    // 7.-9. and 11. share the 7^3 two-level partial-wave setup
    let t = Instant::now();
    let s = shared();
    let eq = ver::equivalence(&s.me, &s.reduced, &s.gas, &s.amp, &s.grid).unwrap();
    report(from_checks(7, "equivalence", &eq), t);

    let t = Instant::now();
    let tr = ver::trace_conservation(&[&s.me, &s.reduced], &s.gas, &s.grid, &opts).unwrap();
    report(from_checks(8, "trace_conservation", &tr), t);

    let t = Instant::now();
    let pos = ver::positivity(&[&s.me, &s.reduced], &s.gas, &s.grid, &opts).unwrap();
    report(from_checks(9, "positivity", &[pos]), t);

    // 10. Re Gamma_mn = (Gamma_mm + Gamma_nn)/2
    let t = Instant::now();
    let mut checks = Vec::new();
    let grid = VelocityGrid::cartesian(1.0, 3.5, 5).unwrap();
    for p in Preset::ALL {
        let (gas, amp) = presets::reference(p, 3).unwrap();
        let mut c = ver::re_gamma(&gas, &amp, &grid).unwrap();
        c.name = format!("{}:{}", p.name(), c.name);
        checks.push(c);
    }
    report(from_checks(10, "re_gamma", &checks), t);

    let t = Instant::now();
    let rk = ver::rk4_order(&s.me, &s.gas, &s.grid, opts.step_fraction).unwrap();
    report(from_checks(11, "rk4_order", &[rk]), t);

    let failed = out.iter().filter(|p| !**p).count();
    println!("{} criteria, {failed} failed", out.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
