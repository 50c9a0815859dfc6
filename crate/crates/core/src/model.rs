//! Active-atom and perturber-gas model.
//!
//! Natural units with `hbar = 1` and `k_B = 1`; level energies are given as
//! angular frequencies. No unit conversion happens anywhere in the crate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Either the perturber temperature or its thermal speed `u_p = sqrt(2 T / m_p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thermal {
    Temperature(f64),
    ThermalSpeed(f64),
}

/// Raw physical parameters, validated by [`AtomGasModel::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasParams {
    pub level_frequencies: Vec<f64>,
    pub atom_mass: f64,
    pub perturber_mass: f64,
    pub perturber_density: f64,
    pub thermal: Thermal,
    /// Absolute tolerance for Bohr-frequency coincidences. Defaults to
    /// `1e-9 * max |omega_jk|`.
    #[serde(default)]
    pub degeneracy_tolerance: Option<f64>,
}

/// Table of Bohr frequencies `omega_jk = omega_j - omega_k` (0-based indices).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BohrSpectrum {
    n: usize,
    table: Vec<f64>,
}

impl BohrSpectrum {
    fn new(freqs: &[f64]) -> Self {
        let n = freqs.len();
        let mut table = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                table[j * n + k] = if j == k { 0.0 } else { freqs[j] - freqs[k] };
            }
        }
        Self { n, table }
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.table[j * self.n + k]
    }

    pub fn max_abs(&self) -> f64 {
        self.table.iter().fold(0.0, |a, b| a.max(b.abs()))
    }
}

/// Validated atom + perturber gas model. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomGasModel {
    params: GasParams,
    level_frequencies: Vec<f64>,
    atom_mass: f64,
    perturber_mass: f64,
    reduced_mass: f64,
    perturber_density: f64,
    thermal_speed: f64,
    bohr: BohrSpectrum,
    degeneracy_tolerance: f64,
}

fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonPositiveParameter { name, value })
    }
}

impl AtomGasModel {
    pub fn new(params: GasParams) -> Result<Self> {
        if params.level_frequencies.is_empty() {
            return Err(Error::NonPositiveParameter { name: "level_count", value: 0.0 });
        }
        if let Some(w) = params.level_frequencies.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidInput(format!("level frequency {w} is not finite")));
        }
        let atom_mass = positive("atom_mass", params.atom_mass)?;
        let perturber_mass = positive("perturber_mass", params.perturber_mass)?;
        let perturber_density = positive("perturber_density", params.perturber_density)?;
        let thermal_speed = match params.thermal {
            Thermal::ThermalSpeed(u) => positive("thermal_speed", u)?,
            Thermal::Temperature(t) => (2.0 * positive("temperature", t)? / perturber_mass).sqrt(),
        };
        let reduced_mass = atom_mass * perturber_mass / (atom_mass + perturber_mass);

        let freqs = params.level_frequencies.clone();
        let bohr = BohrSpectrum::new(&freqs);
        let tol = match params.degeneracy_tolerance {
            Some(t) if t >= 0.0 => t,
            Some(t) => return Err(Error::NonPositiveParameter { name: "degeneracy_tolerance", value: t }),
            None => 1e-9 * bohr.max_abs(),
        };
        check_nondegenerate(&freqs, &bohr, tol)?;

        Ok(Self {
            params,
            level_frequencies: freqs,
            atom_mass,
            perturber_mass,
            reduced_mass,
            perturber_density,
            thermal_speed,
            bohr,
            degeneracy_tolerance: tol,
        })
    }

    pub fn params(&self) -> &GasParams {
        &self.params
    }

    pub fn levels(&self) -> usize {
        self.level_frequencies.len()
    }

    pub fn level_frequencies(&self) -> &[f64] {
        &self.level_frequencies
    }

    /// Level energy `E_k = hbar omega_k` (0-based).
    #[inline]
    pub fn energy(&self, k: usize) -> f64 {
        self.level_frequencies[k]
    }

    pub fn atom_mass(&self) -> f64 {
        self.atom_mass
    }

    pub fn perturber_mass(&self) -> f64 {
        self.perturber_mass
    }

    pub fn reduced_mass(&self) -> f64 {
        self.reduced_mass
    }

    pub fn perturber_density(&self) -> f64 {
        self.perturber_density
    }

    pub fn thermal_speed(&self) -> f64 {
        self.thermal_speed
    }

    pub fn degeneracy_tolerance(&self) -> f64 {
        self.degeneracy_tolerance
    }

    pub fn bohr(&self) -> &BohrSpectrum {
        &self.bohr
    }

    /// Thermal speed of the active atoms at the perturber temperature.
    pub fn atom_thermal_speed(&self) -> f64 {
        self.thermal_speed * (self.perturber_mass / self.atom_mass).sqrt()
    }

    /// `omega_j - omega_k` for 0-based level indices.
    pub fn bohr_frequency(&self, j: usize, k: usize) -> Result<f64> {
        let n = self.levels();
        for idx in [j, k] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        Ok(self.bohr.get(j, k))
    }

    /// Perturber Maxwellian `W(v) = (pi u_p^2)^{-3/2} exp(-v^2 / u_p^2)`.
    pub fn maxwellian(&self, v: &Vec3) -> f64 {
        maxwellian(self.thermal_speed, v.norm_squared())
    }

    /// True when the secular selector admits `K[(m,j),(n,k)]`.
    pub fn secular_allowed(&self, m: usize, j: usize, n: usize, k: usize) -> bool {
        (self.bohr.get(m, j) - self.bohr.get(n, k)).abs() <= self.degeneracy_tolerance
    }
}

/// Isotropic 3D Maxwellian with thermal speed `u`, evaluated at `|v|^2`.
#[inline]
pub fn maxwellian(u: f64, speed_sq: f64) -> f64 {
    let u2 = u * u;
    (PI * u2).powf(-1.5) * (-speed_sq / u2).exp()
}

fn check_nondegenerate(freqs: &[f64], bohr: &BohrSpectrum, tol: f64) -> Result<()> {
    let n = freqs.len();
    for a in 0..n {
        for b in a + 1..n {
            let sep = (freqs[a] - freqs[b]).abs();
            if sep <= tol {
                return Err(Error::DegenerateBohrSpectrum {
                    first: (a + 1, a + 1),
                    second: (b + 1, b + 1),
                    separation: sep,
                });
            }
        }
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|j| (0..n).filter(move |&k| k != j).map(move |k| (j, k)))
        .collect();
    for (ia, &(j, k)) in pairs.iter().enumerate() {
        for &(m, p) in &pairs[ia + 1..] {
            let sep = (bohr.get(j, k) - bohr.get(m, p)).abs();
            if sep <= tol {
                return Err(Error::DegenerateBohrSpectrum {
                    first: (j + 1, k + 1),
                    second: (m + 1, p + 1),
                    separation: sep,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(freqs: &[f64]) -> GasParams {
        GasParams {
            level_frequencies: freqs.to_vec(),
            atom_mass: 1.0,
            perturber_mass: 3.0,
            perturber_density: 1.0,
            thermal: Thermal::ThermalSpeed(1.0),
            degeneracy_tolerance: None,
        }
    }

    #[test]
    fn bohr_table_is_antisymmetric() {
        let m = AtomGasModel::new(params(&[0.0, 1.0, 2.5])).unwrap();
        assert_eq!(m.bohr_frequency(2, 0).unwrap(), 2.5);
        assert_eq!(m.bohr_frequency(0, 2).unwrap(), -2.5);
        assert_eq!(m.bohr_frequency(1, 1).unwrap(), 0.0);
        assert!(matches!(m.bohr_frequency(3, 0), Err(Error::IndexOutOfRange { index: 3, len: 3 })));
    }

    #[test]
    fn equal_spacing_is_degenerate() {
        let err = AtomGasModel::new(params(&[0.0, 1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::DegenerateBohrSpectrum { .. }), "{err}");
    }

    #[test]
    fn coincident_levels_are_degenerate() {
        let err = AtomGasModel::new(params(&[0.0, 0.7, 0.7])).unwrap_err();
        assert!(matches!(err, Error::DegenerateBohrSpectrum { .. }));
    }

    #[test]
    fn single_level_is_valid() {
        let m = AtomGasModel::new(params(&[0.0])).unwrap();
        assert_eq!(m.levels(), 1);
        assert_eq!(m.degeneracy_tolerance(), 0.0);
    }

    #[test]
    fn rejects_non_positive_parameters() {
        let mut p = params(&[0.0, 1.0]);
        p.perturber_density = -1.0;
        assert!(matches!(
            AtomGasModel::new(p).unwrap_err(),
            Error::NonPositiveParameter { name: "perturber_density", .. }
        ));
        let mut p = params(&[0.0, 1.0]);
        p.thermal = Thermal::Temperature(0.0);
        assert!(AtomGasModel::new(p).is_err());
    }

    #[test]
    fn derived_quantities() {
        let mut p = params(&[0.0, 1.0]);
        p.thermal = Thermal::Temperature(1.5);
        let m = AtomGasModel::new(p).unwrap();
        assert_eq!(m.reduced_mass(), 1.0 * 3.0 / 4.0);
        assert_relative_eq!(m.thermal_speed(), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn maxwellian_values() {
        let m = AtomGasModel::new(params(&[0.0])).unwrap();
        let origin = m.maxwellian(&Vec3::zeros());
        assert_relative_eq!(origin, 0.179_587_122_125_166_56, max_relative = 1e-12);
        let unit = m.maxwellian(&Vec3::new(0.0, 0.6, 0.8));
        assert_relative_eq!(unit, origin * (-1.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn maxwellian_normalized_by_product_quadrature() {
        // 3D Gauss-Legendre product on [-5u, 5u]^3, independent of the closed form
        let m = AtomGasModel::new(params(&[0.0])).unwrap();
        let rule = crate::quadrature::GaussLegendre::new(40);
        let pts: Vec<(f64, f64)> = rule.mapped(-5.0, 5.0).collect();
        let mut total = 0.0;
        for &(x, wx) in &pts {
            for &(y, wy) in &pts {
                for &(z, wz) in &pts {
                    total += wx * wy * wz * m.maxwellian(&Vec3::new(x, y, z));
                }
            }
        }
        assert_relative_eq!(total, 1.0, max_relative = 1e-10);
    }
}
