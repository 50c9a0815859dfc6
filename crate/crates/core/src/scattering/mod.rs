//! On-shell center-of-mass scattering amplitudes `f(m, v_out <- k, v_in)`.
//!
//! Normalization: `|f(m <- k)|^2 = (|v_in| / |v_out|) dsigma_{k->m}/dOmega`,
//! so `sigma_T(k) = sum_m int dOmega (|v_out| / |v_in|) |f(m <- k)|^2` and a
//! unitary model satisfies `Im f(k <- k, 0) = mu |v| sigma_T / (4 pi)`.
//!
//! Every built-in model is rotation invariant: the amplitude depends only on
//! the entrance speed and the angle between `v_out` and `v_in`; the exit speed
//! follows from energy conservation.

mod interp;
mod partial_wave;
mod table;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use interp::Pchip;
pub use partial_wave::{PartialWaveSpec, WaveData, WaveTable};
pub use table::AmplitudeTable;

use crate::error::{Error, Result};
use crate::model::AtomGasModel;
use crate::quadrature::GaussLegendre;
use crate::Vec3;
use partial_wave::PartialWaveModel;

/// Relative on-shell tolerance for [`AmplitudeModel::checked_amplitude`].
pub const SHELL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeSpec {
    /// Geometry-independent amplitudes `values[m][k] = c_mk` (0-based).
    Constant { values: Vec<Vec<Complex64>> },
    PartialWave(PartialWaveSpec),
    Tabulated(AmplitudeTable),
}

#[derive(Debug, Clone)]
enum Inner {
    Constant(Vec<Complex64>),
    PartialWave(PartialWaveModel),
    Tabulated(AmplitudeTable),
}

/// Immutable amplitude model bound to the level structure and reduced mass of a gas model.
#[derive(Debug, Clone)]
pub struct AmplitudeModel {
    spec: AmplitudeSpec,
    levels: usize,
    energies: Vec<f64>,
    reduced_mass: f64,
    inner: Inner,
}

impl AmplitudeModel {
    pub fn build(spec: AmplitudeSpec, gas: &AtomGasModel) -> Result<Self> {
        let n = gas.levels();
        let inner = match &spec {
            AmplitudeSpec::Constant { values } => {
                if values.len() != n || values.iter().any(|r| r.len() != n) {
                    return Err(Error::MalformedTable(format!("constant amplitude table must be {n}x{n}")));
                }
                if values.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::MalformedTable("constant amplitudes must be finite".into()));
                }
                Inner::Constant(values.iter().flatten().copied().collect())
            }
            AmplitudeSpec::PartialWave(pw) => {
                Inner::PartialWave(PartialWaveModel::build(pw, gas.level_frequencies(), gas.reduced_mass())?)
            }
            AmplitudeSpec::Tabulated(t) => {
                if t.levels != n {
                    return Err(Error::MalformedTable(format!(
                        "table describes {} levels, model has {n}",
                        t.levels
                    )));
                }
                Inner::Tabulated(t.clone())
            }
        };
        Ok(Self {
            spec,
            levels: n,
            energies: gas.level_frequencies().to_vec(),
            reduced_mass: gas.reduced_mass(),
            inner,
        })
    }

    /// The all-zero amplitude for `gas`.
    pub fn zero(gas: &AtomGasModel) -> Self {
        let n = gas.levels();
        Self::build(
            AmplitudeSpec::Constant { values: vec![vec![Complex64::default(); n]; n] },
            gas,
        )
        .expect("zero table is well formed")
    }

    pub fn spec(&self) -> &AmplitudeSpec {
        &self.spec
    }

    pub fn kind(&self) -> &'static str {
        match self.inner {
            Inner::Constant(_) => "constant",
            Inner::PartialWave(_) => "partial_wave",
            Inner::Tabulated(_) => "tabulated",
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn reduced_mass(&self) -> f64 {
        self.reduced_mass
    }

    /// Only partial-wave models satisfy the optical theorem by construction.
    pub fn is_unitary(&self) -> bool {
        matches!(self.inner, Inner::PartialWave(_))
    }

    /// Hex SHA-256 of the canonical JSON form of the spec.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(&self.spec).expect("spec serializes");
        hex::encode(Sha256::digest(json))
    }

    /// `|v_out|^2` required by energy conservation for `k -> m` at entrance speed `speed_in`.
    #[inline]
    pub fn exit_speed_sq(&self, m: usize, k: usize, speed_in: f64) -> f64 {
        speed_in * speed_in + 2.0 * (self.energies[k] - self.energies[m]) / self.reduced_mass
    }

    /// Channel-openness predicate for the exit channel `m`.
    #[inline]
    pub fn channel_open(&self, m: usize, k: usize, speed_in: f64) -> bool {
        speed_in > 0.0 && self.exit_speed_sq(m, k, speed_in) > 0.0
    }

    /// Amplitude for rotation-invariant models as a function of the entrance
    /// speed and the cosine of the scattering angle. Closed channels give 0.
    pub fn amplitude_iso(&self, m: usize, k: usize, speed_in: f64, cos_theta: f64) -> Complex64 {
        if !self.channel_open(m, k, speed_in) {
            return Complex64::default();
        }
        match &self.inner {
            Inner::Constant(c) => c[m * self.levels + k],
            Inner::PartialWave(pw) => {
                let energy = 0.5 * self.reduced_mass * speed_in * speed_in + self.energies[k];
                pw.amplitude(m, k, energy, cos_theta.clamp(-1.0, 1.0))
            }
            Inner::Tabulated(t) => t.eval(m, k, speed_in, cos_theta),
        }
    }

    /// `f(m, v_out <- k, v_in)`. The query must be on shell; this is only
    /// checked in debug builds, use [`Self::checked_amplitude`] otherwise.
    pub fn amplitude(&self, m: usize, v_out: &Vec3, k: usize, v_in: &Vec3) -> Complex64 {
        debug_assert!(self.shell_mismatch(m, v_out, k, v_in) <= SHELL_TOLERANCE);
        let (s_out, s_in) = (v_out.norm(), v_in.norm());
        let cos = if s_out > 0.0 && s_in > 0.0 { v_out.dot(v_in) / (s_out * s_in) } else { 1.0 };
        self.amplitude_iso(m, k, s_in, cos)
    }

    pub fn checked_amplitude(&self, m: usize, v_out: &Vec3, k: usize, v_in: &Vec3) -> Result<Complex64> {
        for idx in [m, k] {
            if idx >= self.levels {
                return Err(Error::IndexOutOfRange { index: idx, len: self.levels });
            }
        }
        let mismatch = self.shell_mismatch(m, v_out, k, v_in);
        if mismatch > SHELL_TOLERANCE {
            return Err(Error::OffShell { mismatch });
        }
        Ok(self.amplitude(m, v_out, k, v_in))
    }

    fn shell_mismatch(&self, m: usize, v_out: &Vec3, k: usize, v_in: &Vec3) -> f64 {
        let e_out = 0.5 * self.reduced_mass * v_out.norm_squared() + self.energies[m];
        let e_in = 0.5 * self.reduced_mass * v_in.norm_squared() + self.energies[k];
        let scale = e_in.abs().max(e_out.abs()).max(f64::MIN_POSITIVE);
        if v_out.norm_squared() == 0.0 && self.exit_speed_sq(m, k, v_in.norm()) <= 0.0 {
            return 0.0; // closed channel, amplitude is zero anyway
        }
        (e_out - e_in).abs() / scale
    }

    /// Elastic forward amplitude `f(k, v <- k, v)`.
    #[inline]
    pub fn forward(&self, k: usize, speed: f64) -> Complex64 {
        self.amplitude_iso(k, k, speed, 1.0)
    }

    /// `dsigma_{k->m}/dOmega = (|v_out| / |v_in|) |f|^2`.
    pub fn differential_cross_section(&self, m: usize, k: usize, speed_in: f64, cos_theta: f64) -> f64 {
        if !self.channel_open(m, k, speed_in) {
            return 0.0;
        }
        let ratio = self.exit_speed_sq(m, k, speed_in).sqrt() / speed_in;
        ratio * self.amplitude_iso(m, k, speed_in, cos_theta).norm_sqr()
    }

    /// Largest `||S^dagger S - I||` over `l` at the given total energy; zero for non-partial-wave models.
    pub fn unitarity_residual(&self, energy: f64) -> f64 {
        match &self.inner {
            Inner::PartialWave(pw) => (0..pw.l_count()).map(|l| pw.unitarity_residual(l, energy)).fold(0.0, f64::max),
            _ => 0.0,
        }
    }

    /// Highest partial wave carried by the model, if it is a partial-wave model.
    pub fn max_partial_wave(&self) -> Option<usize> {
        match &self.inner {
            Inner::PartialWave(pw) => Some(pw.l_count() - 1),
            _ => None,
        }
    }

    /// Relative speeds at which some inelastic exit channel opens for entrance `k`.
    pub fn threshold_speeds(&self, k: usize) -> Vec<f64> {
        (0..self.levels)
            .filter(|&m| self.energies[m] > self.energies[k])
            .map(|m| (2.0 * (self.energies[m] - self.energies[k]) / self.reduced_mass).sqrt())
            .collect()
    }
}

/// Angular quadrature for total cross sections.
#[derive(Debug, Clone)]
pub struct CrossSection {
    rule: GaussLegendre,
}

impl Default for CrossSection {
    fn default() -> Self {
        Self::new(64)
    }
}

impl CrossSection {
    /// `points` Gauss–Legendre nodes in `cos theta`; exact for `l_max < points`.
    pub fn new(points: usize) -> Self {
        Self { rule: GaussLegendre::new(points) }
    }

    pub fn points(&self) -> usize {
        self.rule.len()
    }

    /// `sigma_T(k, |v|)` summed over open exit channels.
    pub fn total_at_speed(&self, model: &AmplitudeModel, k: usize, speed: f64) -> f64 {
        let mut total = 0.0;
        for m in 0..model.levels() {
            if !model.channel_open(m, k, speed) {
                continue;
            }
            let ang: f64 = self
                .rule
                .nodes
                .iter()
                .zip(&self.rule.weights)
                .map(|(&c, &w)| w * model.differential_cross_section(m, k, speed, c))
                .sum();
            total += 2.0 * PI * ang;
        }
        total
    }
}

fn entrance_speed(k: usize, levels: usize, v_r: &Vec3) -> Result<f64> {
    if k >= levels {
        return Err(Error::IndexOutOfRange { index: k, len: levels });
    }
    let s = v_r.norm();
    if !(s > 0.0) {
        return Err(Error::ClosedEntranceChannel { level: k + 1, speed: s });
    }
    Ok(s)
}

/// Total cross section for scattering out of `|k>, v_r`.
pub fn total_cross_section(model: &AmplitudeModel, gas: &AtomGasModel, k: usize, v_r: &Vec3) -> Result<f64> {
    debug_assert_eq!(gas.levels(), model.levels());
    let s = entrance_speed(k, model.levels(), v_r)?;
    Ok(CrossSection::default().total_at_speed(model, k, s))
}

/// Floor of the amplitude scale dividing [`optical_theorem_residual`].
pub const OPTICAL_SCALE_FLOOR: f64 = 1.0;

/// `|Im f(k <- k, 0) - mu |v_r| sigma_T / (4 pi)| / max(|f(k <- k, 0)|, 1)`.
pub fn optical_theorem_residual(model: &AmplitudeModel, gas: &AtomGasModel, k: usize, v_r: &Vec3) -> Result<f64> {
    let s = entrance_speed(k, model.levels(), v_r)?;
    let sigma = CrossSection::default().total_at_speed(model, k, s);
    let f = model.forward(k, s);
    let momentum = gas.reduced_mass() * s;
    Ok((f.im - momentum * sigma / (4.0 * PI)).abs() / f.norm().max(OPTICAL_SCALE_FLOOR))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GasParams, Thermal};
    use approx::assert_relative_eq;

    fn gas(freqs: &[f64]) -> AtomGasModel {
        // m_a = m_p = 1 -> mu = 1/2
        AtomGasModel::new(GasParams {
            level_frequencies: freqs.to_vec(),
            atom_mass: 1.0,
            perturber_mass: 1.0,
            perturber_density: 1.0,
            thermal: Thermal::ThermalSpeed(1.0),
            degeneracy_tolerance: None,
        })
        .unwrap()
    }

    fn constant(g: &AtomGasModel, c: f64) -> AmplitudeModel {
        let n = g.levels();
        AmplitudeModel::build(
            AmplitudeSpec::Constant { values: vec![vec![Complex64::new(c, 0.0); n]; n] },
            g,
        )
        .unwrap()
    }

    fn s_wave_half_pi(g: &AtomGasModel) -> AmplitudeModel {
        let spec = PartialWaveSpec {
            momentum_scale: 1.0,
            waves: vec![WaveTable {
                energies: vec![0.0, 5.0],
                data: WaveData::PhaseShifts(vec![vec![PI / 2.0], vec![PI / 2.0]]),
            }],
        };
        AmplitudeModel::build(AmplitudeSpec::PartialWave(spec), g).unwrap()
    }

    #[test]
    fn zero_model_vanishes() {
        let g = gas(&[0.0, 0.3]);
        let z = AmplitudeModel::zero(&g);
        let v = Vec3::new(0.3, -1.0, 0.2);
        assert_eq!(z.amplitude(1, &v, 1, &v), Complex64::default());
        assert_eq!(total_cross_section(&z, &g, 0, &v).unwrap(), 0.0);
        assert_eq!(optical_theorem_residual(&z, &g, 0, &v).unwrap(), 0.0);
    }

    #[test]
    fn constant_amplitude_everywhere() {
        let g = gas(&[0.0]);
        let c = constant(&g, 0.5);
        let a = Vec3::new(1.0, 0.0, 0.0);
        let b = Vec3::new(0.0, 0.0, -1.0);
        assert_eq!(c.amplitude(0, &b, 0, &a), Complex64::new(0.5, 0.0));
        assert_relative_eq!(total_cross_section(&c, &g, 0, &a).unwrap(), PI, max_relative = 1e-13);
    }

    #[test]
    fn constant_real_violates_optical_theorem() {
        let g = gas(&[0.0]);
        let c = constant(&g, 0.5);
        // mu |v| = 1 with mu = 1/2
        let v = Vec3::new(0.0, 2.0, 0.0);
        let r = optical_theorem_residual(&c, &g, 0, &v).unwrap();
        assert_relative_eq!(r, 0.25, max_relative = 1e-13);
    }

    #[test]
    fn s_wave_half_pi_values() {
        let g = gas(&[0.0]);
        let m = s_wave_half_pi(&g);
        // k = mu v = 1
        let v = Vec3::new(2.0, 0.0, 0.0);
        assert!((m.amplitude(0, &v, 0, &v) - Complex64::i()).norm() < 1e-14);
        assert_relative_eq!(total_cross_section(&m, &g, 0, &v).unwrap(), 4.0 * PI, max_relative = 1e-13);
        assert!(optical_theorem_residual(&m, &g, 0, &v).unwrap() < 1e-13);
    }

    #[test]
    fn closed_exit_channel_is_zero() {
        let g = gas(&[0.0, 1.0]);
        let c = constant(&g, 0.5);
        // upward 1 -> 2 needs v^2 > 2 * 1 / mu = 4
        assert!(!c.channel_open(1, 0, 1.9));
        assert_eq!(c.amplitude_iso(1, 0, 1.9, 0.0), Complex64::default());
        assert!(c.channel_open(1, 0, 2.1));
        assert_eq!(c.threshold_speeds(0), vec![2.0]);
    }

    #[test]
    fn entrance_at_rest_is_closed() {
        let g = gas(&[0.0]);
        let c = constant(&g, 0.5);
        assert!(matches!(
            total_cross_section(&c, &g, 0, &Vec3::zeros()),
            Err(Error::ClosedEntranceChannel { level: 1, .. })
        ));
    }

    #[test]
    fn off_shell_query_is_rejected() {
        let g = gas(&[0.0, 1.0]);
        let c = constant(&g, 0.5);
        let a = Vec3::new(3.0, 0.0, 0.0);
        assert!(matches!(c.checked_amplitude(1, &a, 0, &a), Err(Error::OffShell { .. })));
        let out = Vec3::new(0.0, (9.0f64 - 4.0).sqrt(), 0.0);
        assert!(c.checked_amplitude(1, &out, 0, &a).is_ok());
    }

    #[test]
    fn malformed_constant_table() {
        let g = gas(&[0.0, 1.0]);
        let spec = AmplitudeSpec::Constant { values: vec![vec![Complex64::default(); 2]] };
        assert!(matches!(AmplitudeModel::build(spec, &g), Err(Error::MalformedTable(_))));
    }

    #[test]
    fn fingerprint_tracks_spec() {
        let g = gas(&[0.0]);
        assert_eq!(constant(&g, 0.5).fingerprint(), constant(&g, 0.5).fingerprint());
        assert_ne!(constant(&g, 0.5).fingerprint(), constant(&g, 0.25).fingerprint());
    }
}
