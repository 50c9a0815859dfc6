//! Delta-reduced evaluation of the collision kernel
//!
//! ```text
//! K_{mj,nk}(v <- v1) = 2 N_P int d^3v_r d^3v_r1 W(v1 - v_r1)
//!     delta^3[v - v1 - (mu/m_a)(v_r - v_r1)] delta(v_r^2 - v_r1^2 + 2 omega_mj / mu)
//!     f(m, v_r <- j, v_r1) f*(n, v_r <- k, v_r1)
//! ```
//!
//! With `D = (m_a/mu)(v - v1)` the momentum delta sets `v_r = v_r1 + D` and
//! contributes `(m_a/mu)^3`. Writing `v_r1 = p D^ + w` with `w` perpendicular to
//! `D`, the energy delta becomes `delta(2|D| p + |D|^2 + 2 omega/mu)`, so
//! `p = -(|D|^2 + 2 omega/mu) / (2|D|)` with factor `1 / (2|D|)`. What is left
//! is an integral over the transverse plane. For rotation-invariant amplitudes
//! the integrand depends on `w` only through `|w|`, and the azimuthal integral
//! of the Maxwellian is `2 pi exp(-(b - r)^2/u^2) I0e(2 b r / u^2)`, with `b`
//! the transverse part of `v1`. Only the radial integral is done numerically.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AtomGasModel;
use crate::quadrature::{bessel_i0e, panel_nodes, GaussLegendre};
use crate::scattering::AmplitudeModel;
use crate::Vec3;

/// Mean of `1/|r|` over the unit cube centred at the origin,
/// `3 ln(2 + sqrt 3) - pi/2`.
pub const CUBE_INVERSE_DISTANCE_MEAN: f64 = 2.380_077_363_979_553;

/// Quadrature settings for kernel evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelQuadrature {
    /// Gauss–Legendre nodes per radial panel in the transverse plane.
    pub radial_points: usize,
    /// Radial window half-width around the Maxwellian centre, in thermal speeds.
    pub truncation: f64,
    /// Node pairs closer than this many cells (per axis) store the cell
    /// average of the kernel over the outgoing cell instead of the point value.
    pub near_field_cells: usize,
}

impl Default for KernelQuadrature {
    fn default() -> Self {
        Self { radial_points: 20, truncation: 6.0, near_field_cells: 2 }
    }
}

/// All secular-allowed kernel values for one velocity pair.
///
/// `population[m * n + j] = K_{mj,mj}` and `elastic[m * n + k] = K_{mm,kk}`;
/// the diagonals of the two tables coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBlock {
    pub levels: usize,
    pub population: Vec<f64>,
    pub elastic: Vec<Complex64>,
}

impl KernelBlock {
    pub fn zeros(levels: usize) -> Self {
        Self {
            levels,
            population: vec![0.0; levels * levels],
            elastic: vec![Complex64::default(); levels * levels],
        }
    }

    fn accumulate(&mut self, other: &KernelBlock, scale: f64) {
        for (a, b) in self.population.iter_mut().zip(&other.population) {
            *a += scale * b;
        }
        for (a, b) in self.elastic.iter_mut().zip(&other.elastic) {
            *a += *b * scale;
        }
    }
}

/// Kernel evaluator bound to one gas model and amplitude model.
pub struct KernelEvaluator<'a> {
    gas: &'a AtomGasModel,
    amp: &'a AmplitudeModel,
    settings: KernelQuadrature,
    rule: GaussLegendre,
    stencil: [Vec3; 8],
    gauss_cell: [Vec3; 8],
}

/// Geometry of a velocity pair in the frame aligned with `D`.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    /// `|D|`
    d: f64,
    /// `v1 . D^`
    v1_par: f64,
    /// `|v1 - (v1 . D^) D^|`
    b: f64,
}

impl<'a> KernelEvaluator<'a> {
    pub fn new(gas: &'a AtomGasModel, amp: &'a AmplitudeModel, settings: KernelQuadrature) -> Self {
        assert_eq!(gas.levels(), amp.levels(), "amplitude model built for another level count");
        // body diagonals at the radius where the stencil mean of 1/|r| matches the cube mean
        let stencil = corners(1.0 / (3f64.sqrt() * CUBE_INVERSE_DISTANCE_MEAN));
        Self {
            gas,
            amp,
            settings,
            rule: GaussLegendre::new(settings.radial_points.max(1)),
            stencil,
            // tensor-product two-point Gauss rule on the unit cell
            gauss_cell: corners(0.5 / 3f64.sqrt()),
        }
    }

    pub fn gas(&self) -> &AtomGasModel {
        self.gas
    }

    pub fn amplitude(&self) -> &AmplitudeModel {
        self.amp
    }

    pub fn settings(&self) -> KernelQuadrature {
        self.settings
    }

    /// Fixed self-cell offsets in units of the cell edge.
    pub fn self_cell_stencil(&self) -> &[Vec3; 8] {
        &self.stencil
    }

    fn geometry(&self, v: &Vec3, v1: &Vec3) -> Option<(Geometry, Vec3)> {
        let ratio = self.gas.atom_mass() / self.gas.reduced_mass();
        let delta = (v - v1) * ratio;
        let d = delta.norm();
        if !(d > 0.0) {
            return None;
        }
        let dir = delta / d;
        let v1_par = v1.dot(&dir);
        let b = (v1 - dir * v1_par).norm();
        Some((Geometry { d, v1_par, b }, dir))
    }

    /// Common prefactor `2 N_P (m_a/mu)^3 / (2|D|) (pi u^2)^{-3/2} exp(-(v1_par - p)^2/u^2)`.
    fn prefactor(&self, g: &Geometry, p: f64) -> f64 {
        let u = self.gas.thermal_speed();
        let ratio = self.gas.atom_mass() / self.gas.reduced_mass();
        let x = (g.v1_par - p) / u;
        let arg = x * x;
        if arg > 745.0 {
            return 0.0;
        }
        2.0 * self.gas.perturber_density() * ratio.powi(3) / (2.0 * g.d)
            * (std::f64::consts::PI * u * u).powf(-1.5)
            * (-arg).exp()
    }

    /// Radial nodes `(r, weight)` where the weight carries `2 pi r exp(-(b-r)^2/u^2) I0e(2br/u^2)`.
    /// Panels break where the entrance speed crosses a channel threshold.
    fn radial_nodes(&self, g: &Geometry, p: f64, entrance: usize) -> Vec<(f64, f64)> {
        let u = self.gas.thermal_speed();
        let lo = (g.b - self.settings.truncation * u).max(0.0);
        let hi = g.b + self.settings.truncation * u;
        let breaks: Vec<f64> = self
            .amp
            .threshold_speeds(entrance)
            .into_iter()
            .filter_map(|s| {
                let r2 = s * s - p * p;
                (r2 > 0.0).then(|| r2.sqrt())
            })
            .collect();
        panel_nodes(&self.rule, lo, hi, &breaks)
            .into_iter()
            .map(|(r, w)| {
                let t = (g.b - r) / u;
                let weight = w * 2.0 * std::f64::consts::PI * r * (-t * t).exp() * bessel_i0e(2.0 * g.b * r / (u * u));
                (r, weight)
            })
            .collect()
    }

    /// `(|v_r1|, cos theta)` at transverse radius `r` for longitudinal component `p`.
    #[inline]
    fn collision(g: &Geometry, p: f64, r: f64) -> (f64, f64) {
        let r2 = r * r;
        let s1 = (p * p + r2).sqrt();
        let q = p + g.d;
        let s = (q * q + r2).sqrt();
        let cos = if s1 > 0.0 && s > 0.0 { ((p * q + r2) / (s1 * s)).clamp(-1.0, 1.0) } else { 1.0 };
        (s1, cos)
    }

    fn population_value(&self, g: &Geometry, m: usize, j: usize) -> f64 {
        let omega = self.gas.bohr().get(m, j);
        let p = -(g.d * g.d + 2.0 * omega / self.gas.reduced_mass()) / (2.0 * g.d);
        let pre = self.prefactor(g, p);
        if pre == 0.0 {
            return 0.0;
        }
        let integral: f64 = self
            .radial_nodes(g, p, j)
            .into_iter()
            .map(|(r, w)| {
                let (s1, cos) = Self::collision(g, p, r);
                w * self.amp.amplitude_iso(m, j, s1, cos).norm_sqr()
            })
            .sum();
        pre * integral
    }

    fn elastic_gram(&self, g: &Geometry, out: &mut [Complex64]) {
        let n = self.gas.levels();
        let p = -0.5 * g.d;
        let pre = self.prefactor(g, p);
        out.iter_mut().for_each(|z| *z = Complex64::default());
        if pre == 0.0 {
            return;
        }
        // union of threshold breaks over entrance channels keeps one node set for the Gram sum
        let u = self.gas.thermal_speed();
        let lo = (g.b - self.settings.truncation * u).max(0.0);
        let hi = g.b + self.settings.truncation * u;
        let breaks: Vec<f64> = (0..n)
            .flat_map(|k| self.amp.threshold_speeds(k))
            .filter_map(|s| {
                let r2 = s * s - p * p;
                (r2 > 0.0).then(|| r2.sqrt())
            })
            .collect();
        let mut f = vec![Complex64::default(); n];
        for (r, w) in panel_nodes(&self.rule, lo, hi, &breaks) {
            let t = (g.b - r) / u;
            let weight = w * 2.0 * std::f64::consts::PI * r * (-t * t).exp() * bessel_i0e(2.0 * g.b * r / (u * u));
            if weight == 0.0 {
                continue;
            }
            let (s1, cos) = Self::collision(g, p, r);
            for (m, slot) in f.iter_mut().enumerate() {
                *slot = self.amp.amplitude_iso(m, m, s1, cos);
            }
            for m in 0..n {
                for k in m..n {
                    out[m * n + k] += f[m] * f[k].conj() * weight;
                }
            }
        }
        for m in 0..n {
            out[m * n + m] = Complex64::new(out[m * n + m].re * pre, 0.0);
            for k in m + 1..n {
                out[m * n + k] *= pre;
                out[k * n + m] = out[m * n + k].conj();
            }
        }
    }

    /// Every secular-allowed entry at `(v <- v1)`; `None` when `v = v1`.
    pub fn block(&self, v: &Vec3, v1: &Vec3) -> Option<KernelBlock> {
        let (g, _) = self.geometry(v, v1)?;
        let n = self.gas.levels();
        let mut block = KernelBlock::zeros(n);
        self.elastic_gram(&g, &mut block.elastic);
        for m in 0..n {
            for j in 0..n {
                block.population[m * n + j] =
                    if m == j { block.elastic[m * n + m].re } else { self.population_value(&g, m, j) };
            }
        }
        Some(block)
    }

    /// Self-pair value for the cell of edge `cell` around `v1`: the mean of the
    /// kernel over the fixed stencil offsets applied to the outgoing velocity.
    pub fn self_cell_block(&self, v1: &Vec3, cell: f64) -> KernelBlock {
        let n = self.gas.levels();
        let mut acc = KernelBlock::zeros(n);
        for off in &self.stencil {
            let v = v1 + off * cell;
            let b = self.block(&v, v1).expect("stencil offsets are nonzero");
            acc.accumulate(&b, 1.0 / self.stencil.len() as f64);
        }
        acc
    }

    /// Mean of the kernel over the cube of edge `cell` centred on `v`, for `v` away from `v1`.
    pub fn cell_block(&self, v: &Vec3, v1: &Vec3, cell: f64) -> Option<KernelBlock> {
        let n = self.gas.levels();
        let mut acc = KernelBlock::zeros(n);
        for off in &self.gauss_cell {
            let b = self.block(&(v + off * cell), v1)?;
            acc.accumulate(&b, 1.0 / self.gauss_cell.len() as f64);
        }
        Some(acc)
    }

    /// Single kernel value `K_{mj,nk}(v <- v1)` (0-based levels).
    pub fn point(&self, m: usize, j: usize, n: usize, k: usize, v: &Vec3, v1: &Vec3) -> Result<Complex64> {
        let levels = self.gas.levels();
        for idx in [m, j, n, k] {
            if idx >= levels {
                return Err(Error::IndexOutOfRange { index: idx, len: levels });
            }
        }
        if !self.gas.secular_allowed(m, j, n, k) {
            return Err(Error::SecularViolation { m: m + 1, j: j + 1, n: n + 1, k: k + 1 });
        }
        let Some((g, _)) = self.geometry(v, v1) else {
            return Err(Error::InvalidInput(
                "kernel_point at v = v1 is singular; use the self-cell protocol".into(),
            ));
        };
        if (m, j) == (n, k) {
            if m == j {
                let mut gram = vec![Complex64::default(); levels * levels];
                self.elastic_gram(&g, &mut gram);
                return Ok(gram[m * levels + m]);
            }
            return Ok(Complex64::new(self.population_value(&g, m, j), 0.0));
        }
        // nondegenerate spectrum: the only other allowed entries are K_{mm,nn}
        debug_assert!(m == j && n == k);
        let mut gram = vec![Complex64::default(); levels * levels];
        self.elastic_gram(&g, &mut gram);
        Ok(gram[m * levels + n])
    }
}

/// The eight points `(+-a, +-a, +-a)`.
fn corners(a: f64) -> [Vec3; 8] {
    let mut out = [Vec3::zeros(); 8];
    for (s, slot) in out.iter_mut().enumerate() {
        let sign = |bit: usize| if s & bit == 0 { a } else { -a };
        *slot = Vec3::new(sign(1), sign(2), sign(4));
    }
    out
}

/// `K_{mj,nk}(v <- v1)` with default quadrature settings.
pub fn kernel_point(
    gas: &AtomGasModel,
    amp: &AmplitudeModel,
    indices: (usize, usize, usize, usize),
    v: &Vec3,
    v1: &Vec3,
) -> Result<Complex64> {
    let (m, j, n, k) = indices;
    KernelEvaluator::new(gas, amp, KernelQuadrature::default()).point(m, j, n, k, v, v1)
}
