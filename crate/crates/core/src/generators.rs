//! Collisional generators on the discretized density field.
//!
//! The field is flattened as `x[(i * n + j) * n + k] = rho_jk(v_i)`. Under the
//! secular structure populations couple only to populations and each
//! coherence `rho_mn` only to itself, so the operator is stored as one dense
//! real population block plus one dense `N x N` block per coherence pair.
//!
//! Master-equation form:
//!
//! ```text
//! d rho_mm(v)/dt = -gamma~_m(v) rho_mm(v) + sum_k int d^3v1 K_{mk,mk}(v <- v1) rho_kk(v1)
//! d rho_mn(v)/dt = -(gamma~_m + gamma~_n)(v)/2 rho_mn(v) + int d^3v1 K_{mm,nn}(v <- v1) rho_mn(v1)
//! ```
//!
//! The standard form replaces the loss rates by `Gamma_mm` and `Gamma_mn`
//! (or `Re Gamma_mn` in the reduced variant) and the gain kernel by
//! `J(mn, v | jk, v1) = K_{mj,nk}(v <- v1)`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelTensor, RateMode, RateTable, VelocityGrid};
use crate::model::AtomGasModel;
use crate::scattering::{optical_theorem_residual, AmplitudeModel};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    MasterEquation,
    StandardRaw,
    StandardReduced,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::MasterEquation => "me",
            Provenance::StandardRaw => "standard_raw",
            Provenance::StandardReduced => "standard_reduced",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardVariant {
    /// Coherence decay by the complex `Gamma_mn`, shift included.
    Raw,
    /// Coherence decay by `Re Gamma_mn` only.
    Reduced,
}

/// Materialized collisional generator.
#[derive(Debug, Clone)]
pub struct Generator {
    provenance: Provenance,
    levels: usize,
    nodes: usize,
    grid_hash: String,
    tensor_key: String,
    rate_mode: RateMode,
    /// `(N n) x (N n)`, row `(i, m)`, column `(l, j)`.
    population: DMatrix<f64>,
    /// `N x N` blocks for `m < n` in pair order; the `(n, m)` block is the conjugate.
    coherence: Vec<DMatrix<Complex64>>,
    row_norm: f64,
}

fn pair_list(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|m| (m + 1..n).map(move |k| (m, k))).collect()
}

fn check_inputs(tensor: &KernelTensor, rates: &RateTable, grid: &VelocityGrid) -> Result<()> {
    let gh = grid.fingerprint();
    if tensor.meta().grid_hash != gh || rates.grid_hash() != gh {
        return Err(Error::GridMismatch("tensor, rate table and grid were built on different grids".into()));
    }
    if tensor.levels() != rates.levels() || tensor.nodes() != rates.nodes() || tensor.nodes() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "shape mismatch: tensor {}x{}, rates {}x{}, grid {}",
            tensor.levels(),
            tensor.nodes(),
            rates.levels(),
            rates.nodes(),
            grid.len()
        )));
    }
    Ok(())
}

type Loss<'a> = dyn Fn(usize, usize, usize) -> Complex64 + Sync + 'a;

fn assemble(
    provenance: Provenance,
    tensor: &KernelTensor,
    rates: &RateTable,
    grid: &VelocityGrid,
    population_loss: &(dyn Fn(usize, usize) -> f64 + Sync),
    coherence_loss: &Loss<'_>,
) -> Generator {
    let n = tensor.levels();
    let nodes = tensor.nodes();
    let dim = nodes * n;
    let mut population = DMatrix::<f64>::zeros(dim, dim);
    // nalgebra is column-major: fill column (l, j) at a time
    population
        .as_mut_slice()
        .par_chunks_mut(dim)
        .enumerate()
        .for_each(|(col, out)| {
            let (l, j) = (col / n, col % n);
            let w = grid.weight(l);
            for i in 0..nodes {
                for m in 0..n {
                    out[i * n + m] = w * tensor.population(i, l, m, j);
                }
            }
            out[l * n + j] -= population_loss(l, j);
        });
    let coherence = pair_list(n)
        .into_par_iter()
        .map(|(m, k)| {
            let mut block = DMatrix::<Complex64>::zeros(nodes, nodes);
            for l in 0..nodes {
                let w = grid.weight(l);
                for i in 0..nodes {
                    block[(i, l)] = tensor.elastic(i, l, m, k) * w;
                }
                block[(l, l)] -= coherence_loss(l, m, k);
            }
            block
        })
        .collect::<Vec<_>>();

    let mut row_norm = 0.0f64;
    for r in 0..dim {
        row_norm = row_norm.max(population.row(r).iter().map(|x| x.abs()).sum());
    }
    for b in &coherence {
        for r in 0..nodes {
            row_norm = row_norm.max(b.row(r).iter().map(|z| z.norm()).sum());
        }
    }
    Generator {
        provenance,
        levels: n,
        nodes,
        grid_hash: grid.fingerprint(),
        tensor_key: tensor.meta().cache_key(),
        rate_mode: rates.mode(),
        population,
        coherence,
        row_norm,
    }
}

/// Lindblad-form generator: losses `gamma~_m` and `(gamma~_m + gamma~_n)/2`.
pub fn build_me_generator(tensor: &KernelTensor, rates: &RateTable, grid: &VelocityGrid) -> Result<Generator> {
    check_inputs(tensor, rates, grid)?;
    Ok(assemble(
        Provenance::MasterEquation,
        tensor,
        rates,
        grid,
        &|l, m| rates.gamma_tilde(l, m),
        &|l, m, k| Complex64::new(0.5 * (rates.gamma_tilde(l, m) + rates.gamma_tilde(l, k)), 0.0),
    ))
}

/// Standard-form generator with `Gamma_mm` population losses.
pub fn build_standard_generator(
    tensor: &KernelTensor,
    rates: &RateTable,
    grid: &VelocityGrid,
    variant: StandardVariant,
) -> Result<Generator> {
    check_inputs(tensor, rates, grid)?;
    let (provenance, keep_shift) = match variant {
        StandardVariant::Raw => (Provenance::StandardRaw, true),
        StandardVariant::Reduced => (Provenance::StandardReduced, false),
    };
    Ok(assemble(
        provenance,
        tensor,
        rates,
        grid,
        &|l, m| rates.gamma(l, m, m).re,
        &|l, m, k| {
            let g = rates.gamma(l, m, k);
            if keep_shift {
                g
            } else {
                Complex64::new(g.re, 0.0)
            }
        },
    ))
}

impl Generator {
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.nodes * self.levels * self.levels
    }

    pub fn rate_mode(&self) -> RateMode {
        self.rate_mode
    }

    pub fn grid_hash(&self) -> &str {
        &self.grid_hash
    }

    /// Cache key of the kernel tensor the generator was assembled from.
    pub fn tensor_key(&self) -> &str {
        &self.tensor_key
    }

    /// Max absolute row sum, the bound used by the stability guard.
    pub fn row_norm(&self) -> f64 {
        self.row_norm
    }

    pub fn population_block(&self) -> &DMatrix<f64> {
        &self.population
    }

    /// Coherence block for `rho_mk`, `m != k`.
    pub fn coherence_block(&self, m: usize, k: usize) -> DMatrix<Complex64> {
        assert!(m != k && m < self.levels && k < self.levels);
        let idx = |a: usize, b: usize| pair_list(self.levels).iter().position(|&p| p == (a, b)).expect("pair");
        if m < k {
            self.coherence[idx(m, k)].clone()
        } else {
            self.coherence[idx(k, m)].map(|z| z.conj())
        }
    }

    /// Entry `<(i, m, n)| G |(l, j, k)>` of the full operator.
    pub fn entry(&self, row: (usize, usize, usize), col: (usize, usize, usize)) -> Complex64 {
        let n = self.levels;
        let ((i, m, a), (l, j, b)) = (row, col);
        if m == a && j == b {
            Complex64::new(self.population[(i * n + m, l * n + j)], 0.0)
        } else if m != a && (m, a) == (j, b) {
            let pairs = pair_list(n);
            if m < a {
                self.coherence[pairs.iter().position(|&p| p == (m, a)).expect("pair")][(i, l)]
            } else {
                self.coherence[pairs.iter().position(|&p| p == (a, m)).expect("pair")][(i, l)].conj()
            }
        } else {
            Complex64::default()
        }
    }

    /// `out = G x`.
    pub fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        let n = self.levels;
        let nodes = self.nodes;
        assert_eq!(x.len(), self.dim());
        assert_eq!(out.len(), self.dim());
        let pop: Vec<Complex64> = (0..nodes * n).map(|c| x[(c / n * n + c % n) * n + c % n]).collect();
        let pairs = pair_list(n);
        let coh: Vec<Vec<Complex64>> = pairs
            .iter()
            .flat_map(|&(m, k)| [(m, k), (k, m)])
            .map(|(m, k)| (0..nodes).map(|l| x[(l * n + m) * n + k]).collect())
            .collect();
        out.par_chunks_mut(n * n).enumerate().for_each(|(i, row)| {
            for m in 0..n {
                let r = i * n + m;
                let mut acc = Complex64::default();
                for (c, p) in pop.iter().enumerate() {
                    acc += p * self.population[(r, c)];
                }
                row[m * n + m] = acc;
            }
            for (p, &(m, k)) in pairs.iter().enumerate() {
                let block = &self.coherence[p];
                let (mut up, mut down) = (Complex64::default(), Complex64::default());
                for l in 0..nodes {
                    let g = block[(i, l)];
                    up += g * coh[2 * p][l];
                    down += g.conj() * coh[2 * p + 1][l];
                }
                row[m * n + k] = up;
                row[k * n + m] = down;
            }
        });
    }

    /// `sum_i w_i sum_m (G x)_{mm}(v_i)` for a unit population at `(l, j)`,
    /// i.e. the weighted column sums of the population block.
    pub fn trace_column_sums(&self, weights: &[f64]) -> Vec<f64> {
        let n = self.levels;
        (0..self.nodes * n)
            .map(|c| {
                (0..self.nodes * n)
                    .map(|r| weights[r / n] * self.population[(r, c)])
                    .sum()
            })
            .collect()
    }
}

/// Deviation statistics for one block family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Deviation {
    pub max_abs: f64,
    /// Largest `|a - b| / max(|a|, |b|)` over entries where either is nonzero.
    pub max_rel: f64,
    /// Largest `|a - b|` divided by the largest entry magnitude of the block family.
    pub max_scaled: f64,
}

impl Deviation {
    fn update(&mut self, a: Complex64, b: Complex64) {
        let d = (a - b).norm();
        let s = a.norm().max(b.norm());
        self.max_abs = self.max_abs.max(d);
        if s > 0.0 {
            self.max_rel = self.max_rel.max(d / s);
        }
    }
}

/// Independent-route check of `Gamma_mm` (forward amplitudes) against
/// `gamma~_m` (cross-section quadrature) at every grid node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateIdentity {
    pub max_rel_deviation: f64,
    pub worst_node: usize,
    pub worst_level: usize,
    pub tolerance: f64,
    pub passed: bool,
    pub max_optical_residual: f64,
    pub optical_theorem_violated: bool,
}

pub const RATE_IDENTITY_TOLERANCE: f64 = 1e-2;
pub const OPTICAL_RESIDUAL_TOLERANCE: f64 = 1e-8;

pub fn rate_identity(gas: &AtomGasModel, amp: &AmplitudeModel, grid: &VelocityGrid) -> Result<RateIdentity> {
    let n = gas.levels();
    let table = RateTable::continuum(grid, gas, amp)?;
    let mut worst = (0.0f64, 0, 0);
    for l in 0..grid.len() {
        for m in 0..n {
            let fwd = table.gamma(l, m, m).re;
            let cs = table.gamma_tilde(l, m);
            let scale = fwd.abs().max(cs.abs());
            let rel = if scale > 0.0 { (fwd - cs).abs() / scale } else { 0.0 };
            if rel > worst.0 {
                worst = (rel, l, m);
            }
        }
    }
    let u = gas.thermal_speed();
    let mut optical = 0.0f64;
    for m in 0..n {
        for s in 1..=20 {
            let v = Vec3::new(0.0, 0.0, 0.3 * u * s as f64);
            optical = optical.max(optical_theorem_residual(amp, gas, m, &v)?);
        }
    }
    Ok(RateIdentity {
        max_rel_deviation: worst.0,
        worst_node: worst.1,
        worst_level: worst.2,
        tolerance: RATE_IDENTITY_TOLERANCE,
        passed: worst.0 <= RATE_IDENTITY_TOLERANCE,
        max_optical_residual: optical,
        optical_theorem_violated: optical > OPTICAL_RESIDUAL_TOLERANCE,
    })
}

/// Result of comparing two generators on the same grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub left: Provenance,
    pub right: Provenance,
    pub levels: usize,
    pub nodes: usize,
    pub population: Deviation,
    pub coherence: Deviation,
    /// Largest `|Im|` difference on coherence diagonals (the collisional shift).
    pub shift_difference: f64,
    pub rate_identity: Option<RateIdentity>,
    pub entrywise_tolerance: f64,
}

pub const ENTRYWISE_TOLERANCE: f64 = 1e-10;

impl EquivalenceReport {
    pub fn entrywise_passed(&self) -> bool {
        self.population.max_rel <= self.entrywise_tolerance && self.coherence.max_rel <= self.entrywise_tolerance
    }

    pub fn passed(&self) -> bool {
        self.entrywise_passed() && self.rate_identity.as_ref().map_or(true, |r| r.passed)
    }

    /// Machine-readable `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("left", self.left.name().into());
        kv("right", self.right.name().into());
        kv("levels", self.levels.to_string());
        kv("nodes", self.nodes.to_string());
        kv("population.max_abs", format!("{:.16e}", self.population.max_abs));
        kv("population.max_rel", format!("{:.16e}", self.population.max_rel));
        kv("population.max_scaled", format!("{:.16e}", self.population.max_scaled));
        kv("coherence.max_abs", format!("{:.16e}", self.coherence.max_abs));
        kv("coherence.max_rel", format!("{:.16e}", self.coherence.max_rel));
        kv("coherence.max_scaled", format!("{:.16e}", self.coherence.max_scaled));
        kv("coherence.shift_difference", format!("{:.16e}", self.shift_difference));
        kv("entrywise.tolerance", format!("{:.16e}", self.entrywise_tolerance));
        kv("entrywise.passed", self.entrywise_passed().to_string());
        if let Some(r) = &self.rate_identity {
            kv("rate_identity.max_rel_deviation", format!("{:.16e}", r.max_rel_deviation));
            kv("rate_identity.worst_node", r.worst_node.to_string());
            kv("rate_identity.worst_level", (r.worst_level + 1).to_string());
            kv("rate_identity.tolerance", format!("{:.16e}", r.tolerance));
            kv("rate_identity.passed", r.passed.to_string());
            kv("optical_theorem.max_residual", format!("{:.16e}", r.max_optical_residual));
            kv("optical_theorem.violated", r.optical_theorem_violated.to_string());
        }
        kv("passed", self.passed().to_string());
        s
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} vs {} ({} levels, {} nodes)\n  populations: max rel deviation {:.3e}\n  coherences:  max rel deviation {:.3e}\n",
            self.left.name(),
            self.right.name(),
            self.levels,
            self.nodes,
            self.population.max_rel,
            self.coherence.max_rel
        );
        if self.shift_difference > 0.0 {
            let _ = writeln!(s, "  coherence diagonals differ by a collisional shift up to {:.3e}", self.shift_difference);
        }
        let _ = writeln!(
            s,
            "  entrywise equality (tol {:.0e}): {}",
            self.entrywise_tolerance,
            if self.entrywise_passed() { "yes" } else { "NO" }
        );
        if let Some(r) = &self.rate_identity {
            let _ = writeln!(
                s,
                "  rate identity Gamma_mm = gamma~_mm: max rel deviation {:.3e} (level {}, node {}) -> {}",
                r.max_rel_deviation,
                r.worst_level + 1,
                r.worst_node,
                if r.passed { "holds" } else { "FAILS" }
            );
            if r.optical_theorem_violated {
                let _ = writeln!(
                    s,
                    "  amplitude model violates the optical theorem (residual {:.3e}); the rate identity cannot hold",
                    r.max_optical_residual
                );
            }
        }
        s
    }
}

/// Entrywise comparison of two generators (no rate check).
pub fn compare_operators(a: &Generator, b: &Generator) -> Result<EquivalenceReport> {
    if a.grid_hash != b.grid_hash || a.levels != b.levels || a.nodes != b.nodes {
        return Err(Error::GridMismatch("generators were built on different grids or models".into()));
    }
    let mut pop = Deviation::default();
    let mut pop_scale = 0.0f64;
    for (x, y) in a.population.iter().zip(b.population.iter()) {
        pop.update(Complex64::new(*x, 0.0), Complex64::new(*y, 0.0));
        pop_scale = pop_scale.max(x.abs()).max(y.abs());
    }
    let mut coh = Deviation::default();
    let mut coh_scale = 0.0f64;
    let mut shift = 0.0f64;
    for (ba, bb) in a.coherence.iter().zip(&b.coherence) {
        for (x, y) in ba.iter().zip(bb.iter()) {
            coh.update(*x, *y);
            coh_scale = coh_scale.max(x.norm()).max(y.norm());
        }
        for i in 0..a.nodes {
            shift = shift.max((ba[(i, i)].im - bb[(i, i)].im).abs());
        }
    }
    pop.max_scaled = if pop_scale > 0.0 { pop.max_abs / pop_scale } else { 0.0 };
    coh.max_scaled = if coh_scale > 0.0 { coh.max_abs / coh_scale } else { 0.0 };
    Ok(EquivalenceReport {
        left: a.provenance,
        right: b.provenance,
        levels: a.levels,
        nodes: a.nodes,
        population: pop,
        coherence: coh,
        shift_difference: shift,
        rate_identity: None,
        entrywise_tolerance: ENTRYWISE_TOLERANCE,
    })
}

/// Entrywise comparison plus the independent-route rate identity.
pub fn compare_generators(
    a: &Generator,
    b: &Generator,
    gas: &AtomGasModel,
    amp: &AmplitudeModel,
    grid: &VelocityGrid,
) -> Result<EquivalenceReport> {
    if a.grid_hash != grid.fingerprint() {
        return Err(Error::GridMismatch("generators were not built on this grid".into()));
    }
    let mut report = compare_operators(a, b)?;
    report.rate_identity = Some(rate_identity(gas, amp, grid)?);
    Ok(report)
}

/// `(min, max)` eigenvalue of the secular-masked Kossakowski matrix at `(v_i <- v_l)`.
pub fn kossakowski_spectrum(tensor: &KernelTensor, i: usize, l: usize) -> (f64, f64) {
    let eig = tensor.kossakowski_matrix(i, l).symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub fn kossakowski_min_eig(tensor: &KernelTensor, i: usize, l: usize) -> f64 {
    kossakowski_spectrum(tensor, i, l).0
}
