//! Relaxation rates by two independent routes.
//!
//! Forward route: `Gamma_mn(v) = N_P (2 pi / i mu) int d^3v_r W(v - v_r) [f_mm(0) - conj f_nn(0)]`
//! with `f_mm(0)` the elastic forward amplitude.
//!
//! Kernel route: `gamma~_m(v1) = sum_j int d^3v K_{jm,jm}(v <- v1)`. Integrating
//! out `v` removes the momentum delta and the energy delta leaves the angular
//! integral of the exit flux, so in the continuum the rate is
//! `N_P int d^3v_r W(v1 - v_r) |v_r| sigma_T(m, |v_r|)` with `sigma_T` from the
//! angular quadrature of `|f|^2`. On a grid it is the weighted sum of the stored tensor.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::VelocityGrid;
use super::point::{KernelEvaluator, KernelQuadrature};
use super::tensor::KernelTensor;
use crate::error::{Error, Result};
use crate::model::AtomGasModel;
use crate::quadrature::{panel_nodes, GaussLegendre};
use crate::scattering::{AmplitudeModel, CrossSection};
use crate::Vec3;

/// Radial quadrature for thermal averages over the perturber Maxwellian.
#[derive(Debug, Clone)]
pub struct ThermalAverage {
    rule: GaussLegendre,
    /// window half-width in thermal speeds
    span: f64,
}

impl Default for ThermalAverage {
    fn default() -> Self {
        Self { rule: GaussLegendre::new(24), span: 7.0 }
    }
}

impl ThermalAverage {
    /// Nodes `(s, weight)` such that `sum weight * g(s) = int d^3v_r W(V - v_r) g(|v_r|)`.
    ///
    /// The angular integral of the Maxwellian is done in closed form:
    /// `s^2 (pi u^2)^{-1/2} / (V s) exp(-(V-s)^2/u^2) (1 - exp(-4 V s / u^2))`.
    pub fn nodes(&self, u: f64, speed: f64, breaks: &[f64]) -> Vec<(f64, f64)> {
        let lo = (speed - self.span * u).max(0.0);
        let hi = speed + self.span * u;
        let mut edges: Vec<f64> = breaks.to_vec();
        edges.push(speed);
        let mut x = lo + u;
        while x < hi {
            edges.push(x);
            x += u;
        }
        let norm = 1.0 / (PI.sqrt() * u);
        panel_nodes(&self.rule, lo, hi, &edges)
            .into_iter()
            .map(|(s, w)| {
                let a = 4.0 * speed * s / (u * u);
                let t = (speed - s) / u;
                let ang = if a < 1e-8 {
                    // small-V limit: (1 - e^{-a}) / (V s) -> 4 / u^2
                    4.0 / (u * u) * (-(s * s) / (u * u)).exp() * (1.0 - 0.5 * a)
                } else {
                    (-t * t).exp() * (-(-a).exp_m1()) / (speed * s)
                };
                (s, w * norm * s * s * ang)
            })
            .collect()
    }
}

/// Sorted, deduplicated threshold speeds of every entrance channel.
fn all_thresholds(amp: &AmplitudeModel) -> Vec<f64> {
    let mut t: Vec<f64> = (0..amp.levels()).flat_map(|k| amp.threshold_speeds(k)).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

/// `int d^3v_r W(v - v_r) f_mm(0, |v_r|)` for every level `m`.
fn forward_averages(gas: &AtomGasModel, amp: &AmplitudeModel, v: &Vec3, avg: &ThermalAverage) -> Vec<Complex64> {
    let n = gas.levels();
    let nodes = avg.nodes(gas.thermal_speed(), v.norm(), &all_thresholds(amp));
    (0..n)
        .map(|m| nodes.iter().map(|&(s, w)| amp.forward(m, s) * w).sum())
        .collect()
}

fn gamma_from_forward(gas: &AtomGasModel, a: &[Complex64], m: usize, n: usize) -> Complex64 {
    // (2 pi / i mu) N_P (A_m - conj A_n)
    let pre = 2.0 * PI * gas.perturber_density() / gas.reduced_mass();
    (a[m] - a[n].conj()) * Complex64::new(0.0, -pre)
}

/// `Gamma_mn(v)` from elastic forward amplitudes.
pub fn gamma_forward(gas: &AtomGasModel, amp: &AmplitudeModel, m: usize, n: usize, v: &Vec3) -> Result<Complex64> {
    let levels = gas.levels();
    for idx in [m, n] {
        if idx >= levels {
            return Err(Error::IndexOutOfRange { index: idx, len: levels });
        }
    }
    let a = forward_averages(gas, amp, v, &ThermalAverage::default());
    Ok(gamma_from_forward(gas, &a, m, n))
}

/// Continuum `gamma~_m(v1) = N_P int d^3v_r W(v1 - v_r) |v_r| sigma_T(m, |v_r|)`.
pub fn gamma_tilde_continuum(gas: &AtomGasModel, amp: &AmplitudeModel, m: usize, v1: &Vec3) -> Result<f64> {
    if m >= gas.levels() {
        return Err(Error::IndexOutOfRange { index: m, len: gas.levels() });
    }
    let cs = CrossSection::default();
    let nodes = ThermalAverage::default().nodes(gas.thermal_speed(), v1.norm(), &amp.threshold_speeds(m));
    let sum: f64 = nodes.iter().map(|&(s, w)| w * s * cs.total_at_speed(amp, m, s)).sum();
    Ok(gas.perturber_density() * sum)
}

/// Discrete-consistent `gamma~_m(v1_l) = sum_j sum_i w_i K_{jm,jm}(v_i <- v1_l)`.
pub fn gamma_tilde_discrete(tensor: &KernelTensor, grid: &VelocityGrid, m: usize, l: usize) -> Result<f64> {
    check_grid(tensor, grid)?;
    if m >= tensor.levels() || l >= grid.len() {
        return Err(Error::IndexOutOfRange { index: m.max(l), len: tensor.levels().max(grid.len()) });
    }
    Ok(discrete_rate(tensor, grid, m, l))
}

fn discrete_rate(tensor: &KernelTensor, grid: &VelocityGrid, m: usize, l: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..grid.len() {
        let w = grid.weight(i);
        for j in 0..tensor.levels() {
            acc += w * tensor.population(i, l, j, m);
        }
    }
    acc
}

fn check_grid(tensor: &KernelTensor, grid: &VelocityGrid) -> Result<()> {
    if tensor.meta().grid_hash != grid.fingerprint() || tensor.nodes() != grid.len() {
        return Err(Error::GridMismatch("kernel tensor was built on a different grid".into()));
    }
    Ok(())
}

/// `sum_j int d^3v K_{jm,jm}(v <- v1)` by direct quadrature of the kernel over
/// the outgoing velocity, in spherical coordinates around `v1` (this absorbs
/// the `1/|v - v1|` singularity). Slow; meant as an independent check.
pub fn gamma_tilde_by_kernel_integration(
    gas: &AtomGasModel,
    amp: &AmplitudeModel,
    m: usize,
    v1: &Vec3,
    radial_panels_per_u: usize,
    polar: usize,
) -> Result<f64> {
    let n = gas.levels();
    if m >= n {
        return Err(Error::IndexOutOfRange { index: m, len: n });
    }
    let ev = KernelEvaluator::new(gas, amp, KernelQuadrature::default());
    let u = gas.thermal_speed();
    let ratio = gas.reduced_mass() / gas.atom_mass();
    let wmax = (0..n).map(|j| gas.bohr().get(j, m).abs()).fold(0.0, f64::max);
    // support of |D| = (m_a/mu)|v - v1| is bounded by the Maxwellian window
    let d_max = 2.0 * (v1.norm() + 9.0 * u) + 2.0 * (2.0 * wmax / gas.reduced_mass()).sqrt();
    let panels = ((d_max / u).ceil() as usize * radial_panels_per_u.max(1)).max(1);
    let breaks: Vec<f64> = (1..panels).map(|p| d_max * p as f64 / panels as f64).collect();
    let radial = panel_nodes(&GaussLegendre::new(16), 0.0, d_max, &breaks);
    let pol = GaussLegendre::new(polar);
    // rotation invariance: the integrand depends on the direction only through
    // its angle with v1, so the azimuth contributes 2 pi
    let axis = if v1.norm() > 0.0 { v1 / v1.norm() } else { Vec3::z() };
    let perp = axis.cross(&if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() }).normalize();
    let total: f64 = radial
        .par_iter()
        .map(|&(d, wd)| {
            let r = d * ratio;
            let mut acc = 0.0;
            for (&c, &wc) in pol.nodes.iter().zip(&pol.weights) {
                let s = (1.0 - c * c).max(0.0).sqrt();
                let v = v1 + (axis * c + perp * s) * r;
                if let Some(b) = ev.block(&v, v1) {
                    let sum: f64 = (0..n).map(|j| b.population[j * n + m]).sum();
                    acc += wc * 2.0 * PI * sum;
                }
            }
            // d^3v = r^2 dr dOmega with r = (mu/m_a) d
            acc * wd * r * r * ratio
        })
        .sum();
    Ok(total)
}

/// How the population loss rates were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    /// Loss rates are column sums of the stored tensor (exact discrete trace conservation).
    DiscreteConsistent,
    /// Loss rates and `Gamma` by grid-independent quadrature.
    Continuum,
}

/// `gamma~_m(v_l)` and `Gamma_mn(v_l)` per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    mode: RateMode,
    levels: usize,
    nodes: usize,
    grid_hash: String,
    gamma_tilde: Vec<f64>,
    gamma: Vec<Complex64>,
}

impl RateTable {
    /// Discrete-consistent table. `Gamma_mm` equals the tensor column sum,
    /// `Re Gamma_mn` is the mean of the two, and `Im Gamma_mn` (the collisional
    /// shift) comes from the forward route.
    pub fn discrete(tensor: &KernelTensor, grid: &VelocityGrid, gas: &AtomGasModel, amp: &AmplitudeModel) -> Result<Self> {
        check_grid(tensor, grid)?;
        let n = tensor.levels();
        let avg = ThermalAverage::default();
        let rows: Vec<(Vec<f64>, Vec<Complex64>)> = (0..grid.len())
            .into_par_iter()
            .map(|l| {
                let gt: Vec<f64> = (0..n).map(|m| discrete_rate(tensor, grid, m, l)).collect();
                let a = forward_averages(gas, amp, grid.node(l), &avg);
                let mut g = vec![Complex64::default(); n * n];
                for m in 0..n {
                    for k in 0..n {
                        let im = if m == k { 0.0 } else { gamma_from_forward(gas, &a, m, k).im };
                        g[m * n + k] = Complex64::new(0.5 * (gt[m] + gt[k]), im);
                    }
                }
                (gt, g)
            })
            .collect();
        Ok(Self::assemble(RateMode::DiscreteConsistent, n, grid, rows))
    }

    /// Continuum table: `gamma~` by the cross-section route, `Gamma` by the forward route.
    pub fn continuum(grid: &VelocityGrid, gas: &AtomGasModel, amp: &AmplitudeModel) -> Result<Self> {
        let n = gas.levels();
        let avg = ThermalAverage::default();
        let rows: Result<Vec<(Vec<f64>, Vec<Complex64>)>> = (0..grid.len())
            .into_par_iter()
            .map(|l| {
                let v = grid.node(l);
                let gt = (0..n).map(|m| gamma_tilde_continuum(gas, amp, m, v)).collect::<Result<Vec<_>>>()?;
                let a = forward_averages(gas, amp, v, &avg);
                let mut g = vec![Complex64::default(); n * n];
                for m in 0..n {
                    for k in 0..n {
                        g[m * n + k] = gamma_from_forward(gas, &a, m, k);
                    }
                }
                Ok((gt, g))
            })
            .collect();
        Ok(Self::assemble(RateMode::Continuum, n, grid, rows?))
    }

    fn assemble(mode: RateMode, n: usize, grid: &VelocityGrid, rows: Vec<(Vec<f64>, Vec<Complex64>)>) -> Self {
        let mut gamma_tilde = Vec::with_capacity(grid.len() * n);
        let mut gamma = Vec::with_capacity(grid.len() * n * n);
        for (gt, g) in rows {
            gamma_tilde.extend(gt);
            gamma.extend(g);
        }
        Self { mode, levels: n, nodes: grid.len(), grid_hash: grid.fingerprint(), gamma_tilde, gamma }
    }

    pub fn mode(&self) -> RateMode {
        self.mode
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn grid_hash(&self) -> &str {
        &self.grid_hash
    }

    /// `gamma~_mm(v_l)`.
    pub fn gamma_tilde(&self, l: usize, m: usize) -> f64 {
        self.gamma_tilde[l * self.levels + m]
    }

    /// `Gamma_mn(v_l)`.
    pub fn gamma(&self, l: usize, m: usize, n: usize) -> Complex64 {
        self.gamma[(l * self.levels + m) * self.levels + n]
    }
}
