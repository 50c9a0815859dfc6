//! Bundled reference models used by the test suites, the benches and the CLI.
//!
//! All references share `m_a = m_p = 1`, `u_p = 1` and `N_P = 0.1`; level
//! frequencies are `(0)`, `(0, 0.5)` or `(0, 0.5, 1.3)`, which keeps the Bohr
//! spectrum nondegenerate and puts the first inelastic threshold inside the
//! thermal range.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AtomGasModel, GasParams, Thermal};
use crate::scattering::{AmplitudeModel, AmplitudeSpec, AmplitudeTable, PartialWaveSpec, WaveData, WaveTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Identical real elastic amplitude 0.5 for every level; violates the optical theorem.
    ConstantReal,
    /// Level-dependent complex elastic amplitudes plus weak constant inelastic ones.
    ConstantComplex,
    /// Unitary coupled-channel partial-wave model (`l <= 2`).
    PartialWave,
    /// The partial-wave model sampled on a speed/angle table.
    Tabulated,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::ConstantReal, Preset::ConstantComplex, Preset::PartialWave, Preset::Tabulated];

    pub fn name(self) -> &'static str {
        match self {
            Preset::ConstantReal => "constant_real",
            Preset::ConstantComplex => "constant_complex",
            Preset::PartialWave => "partial_wave",
            Preset::Tabulated => "tabulated",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

pub fn reference_params(levels: usize) -> Result<GasParams> {
    let level_frequencies = match levels {
        1 => vec![0.0],
        2 => vec![0.0, 0.5],
        3 => vec![0.0, 0.5, 1.3],
        _ => return Err(Error::InvalidInput(format!("reference models exist for 1 to 3 levels, not {levels}"))),
    };
    Ok(GasParams {
        level_frequencies,
        atom_mass: 1.0,
        perturber_mass: 1.0,
        perturber_density: 0.1,
        thermal: Thermal::ThermalSpeed(1.0),
        degeneracy_tolerance: None,
    })
}

pub fn reference_gas(levels: usize) -> Result<AtomGasModel> {
    AtomGasModel::new(reference_params(levels)?)
}

/// Amplitude spec of `preset` for the level structure of `gas`.
pub fn amplitude_spec(preset: Preset, gas: &AtomGasModel) -> Result<AmplitudeSpec> {
    let n = gas.levels();
    if n > 3 {
        return Err(Error::InvalidInput("bundled amplitudes support at most 3 levels".into()));
    }
    Ok(match preset {
        Preset::ConstantReal => {
            let mut values = vec![vec![Complex64::default(); n]; n];
            for (m, row) in values.iter_mut().enumerate() {
                row[m] = Complex64::new(0.5, 0.0);
            }
            AmplitudeSpec::Constant { values }
        }
        Preset::ConstantComplex => {
            let values = (0..n)
                .map(|m| {
                    (0..n)
                        .map(|k| {
                            if m == k {
                                Complex64::new(0.5 - 0.1 * m as f64, 0.2 + 0.15 * m as f64)
                            } else {
                                Complex64::new(0.15, 0.05 * (m as f64 - k as f64))
                            }
                        })
                        .collect()
                })
                .collect();
            AmplitudeSpec::Constant { values }
        }
        Preset::PartialWave => AmplitudeSpec::PartialWave(partial_wave_spec(n)),
        Preset::Tabulated => {
            let pw = AmplitudeModel::build(AmplitudeSpec::PartialWave(partial_wave_spec(n)), gas)?;
            AmplitudeSpec::Tabulated(sample_table(&pw, 16.0, 65, 33))
        }
    })
}

pub fn amplitude(preset: Preset, gas: &AtomGasModel) -> Result<AmplitudeModel> {
    AmplitudeModel::build(amplitude_spec(preset, gas)?, gas)
}

/// Reference gas plus bundled amplitude.
pub fn reference(preset: Preset, levels: usize) -> Result<(AtomGasModel, AmplitudeModel)> {
    let gas = reference_gas(levels)?;
    let amp = amplitude(preset, &gas)?;
    Ok((gas, amp))
}

const DIAG: [[f64; 3]; 3] = [[1.1, -0.7, 0.5], [0.5, 0.35, -0.3], [0.15, -0.1, 0.08]];
const COUPLING: [f64; 3] = [0.35, 0.2, 0.05];
const DECAY: [f64; 3] = [4.0, 6.0, 9.0];

/// Smooth Hermitian reduced reaction matrices on `0 <= E <= 400`.
fn partial_wave_spec(n: usize) -> PartialWaveSpec {
    let energies: Vec<f64> = (0..48).map(|i| 400.0 * (i as f64 / 47.0).powi(2)).collect();
    let waves = (0..3)
        .map(|l| {
            let mats = energies
                .iter()
                .map(|&e| {
                    let mut k = vec![Complex64::default(); n * n];
                    for a in 0..n {
                        k[a * n + a] = Complex64::new(DIAG[l][a] / (1.0 + e / DECAY[l]), 0.0);
                        for b in a + 1..n {
                            let z = Complex64::from_polar(COUPLING[l] * (-e / 8.0).exp(), 0.3 * (a + b) as f64);
                            k[a * n + b] = z;
                            k[b * n + a] = z.conj();
                        }
                    }
                    k
                })
                .collect();
            WaveTable { energies: energies.clone(), data: WaveData::Reaction(mats) }
        })
        .collect();
    PartialWaveSpec { momentum_scale: 2.0, waves }
}

/// Samples `amp` on `speeds` equally spaced entrance speeds in `[0, max_speed]`
/// and `angles` equally spaced cosines.
pub fn sample_table(amp: &AmplitudeModel, max_speed: f64, speeds: usize, angles: usize) -> AmplitudeTable {
    let n = amp.levels();
    let sp: Vec<f64> = (0..speeds).map(|i| max_speed * i as f64 / (speeds - 1) as f64).collect();
    let ct: Vec<f64> = (0..angles).map(|i| -1.0 + 2.0 * i as f64 / (angles - 1) as f64).collect();
    let mut values = Vec::with_capacity(n * n * speeds * angles);
    for m in 0..n {
        for k in 0..n {
            for &s in &sp {
                for &c in &ct {
                    values.push(amp.amplitude_iso(m, k, s, c));
                }
            }
        }
    }
    AmplitudeTable { levels: n, speeds: sp, cos_theta: ct, values }
}

/// Single-channel s-wave model with a constant phase shift.
pub fn s_wave_phase_shift(delta: f64, momentum_scale: f64) -> AmplitudeSpec {
    AmplitudeSpec::PartialWave(PartialWaveSpec {
        momentum_scale,
        waves: vec![WaveTable { energies: vec![0.0, 1e6], data: WaveData::PhaseShifts(vec![vec![delta], vec![delta]]) }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds_for_every_level_count() {
        for n in 1..=3 {
            for p in Preset::ALL {
                let (g, a) = reference(p, n).unwrap();
                assert_eq!(a.levels(), g.levels());
                assert_eq!(Preset::from_name(p.name()), Some(p));
            }
        }
    }

    #[test]
    fn partial_wave_reference_is_unitary() {
        let (_, a) = reference(Preset::PartialWave, 3).unwrap();
        for e in [0.1, 0.6, 1.4, 5.0, 50.0, 300.0] {
            assert!(a.unitarity_residual(e) < 1e-12);
        }
    }

    #[test]
    fn table_reproduces_partial_wave_on_nodes() {
        let (g, pw) = reference(Preset::PartialWave, 2).unwrap();
        let tab = amplitude(Preset::Tabulated, &g).unwrap();
        for (s, c) in [(1.0, 0.0), (2.5, -0.5), (4.0, 1.0)] {
            let d = (tab.amplitude_iso(0, 0, s, c) - pw.amplitude_iso(0, 0, s, c)).norm();
            assert!(d < 1e-12, "{d}");
        }
    }
}
