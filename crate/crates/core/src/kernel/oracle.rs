//! Brute-force Monte Carlo estimate of the collision kernel with both delta
//! functions replaced by Gaussian mollifiers.
//!
//! The perturber velocity `v1 - v_r1` is drawn from the Maxwellian and `v_r`
//! from the mollified momentum delta, so the estimator weight is
//! `2 N_P (m_a/mu)^3 delta_eta(v_r^2 - v_r1^2 + 2 omega/mu) f f*`. The energy
//! mollifier has width `2 eta u_p` in the squared-speed argument. The bias is
//! `O(eta^2)`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::model::AtomGasModel;
use crate::scattering::AmplitudeModel;
use crate::Vec3;

/// Monte Carlo estimate and its one-sigma standard error (per component).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: Complex64,
    pub error: Complex64,
}

impl McEstimate {
    /// Largest deviation from `reference` in units of the per-component error.
    pub fn sigmas_from(&self, reference: Complex64) -> f64 {
        let z = |d: f64, e: f64| if d == 0.0 { 0.0 } else { d.abs() / e };
        z(self.value.re - reference.re, self.error.re).max(z(self.value.im - reference.im, self.error.im))
    }
}

const CHUNK: usize = 1 << 14;

#[allow(clippy::too_many_arguments)]
pub fn kernel_oracle_mc(
    gas: &AtomGasModel,
    amp: &AmplitudeModel,
    indices: (usize, usize, usize, usize),
    v: &Vec3,
    v1: &Vec3,
    eta: f64,
    samples: usize,
    seed: u64,
) -> McEstimate {
    let (m, j, n, k) = indices;
    let u = gas.thermal_speed();
    let mu = gas.reduced_mass();
    let ratio = gas.atom_mass() / mu;
    let omega = gas.bohr().get(m, j);
    let delta = (v - v1) * ratio;
    let sigma_perturber = u / std::f64::consts::SQRT_2;
    let sigma_rel = ratio * eta;
    let eta_e = 2.0 * eta * u;
    let norm_e = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * eta_e);
    let pre = 2.0 * gas.perturber_density() * ratio.powi(3);

    let chunks = samples.div_ceil(CHUNK);
    let sums: Vec<[f64; 4]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let count = CHUNK.min(samples - c * CHUNK);
            let mut acc = [0.0; 4];
            let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
            for _ in 0..count {
                let y = Vec3::new(normal(), normal(), normal()) * sigma_perturber;
                let xi = Vec3::new(normal(), normal(), normal()) * sigma_rel;
                let v_r1 = v1 - y;
                let v_r = v_r1 + delta + xi;
                let s = v_r.norm_squared() - v_r1.norm_squared() + 2.0 * omega / mu;
                let t = s / eta_e;
                let w = norm_e * (-0.5 * t * t).exp();
                if w < 1e-300 {
                    continue;
                }
                let s1 = v_r1.norm();
                let so = v_r.norm();
                let cos = if s1 > 0.0 && so > 0.0 { (v_r.dot(&v_r1) / (s1 * so)).clamp(-1.0, 1.0) } else { 1.0 };
                let f1 = amp.amplitude_iso(m, j, s1, cos);
                let f2 = if (m, j) == (n, k) { f1 } else { amp.amplitude_iso(n, k, s1, cos) };
                let z = f1 * f2.conj() * (w * pre);
                acc[0] += z.re;
                acc[1] += z.im;
                acc[2] += z.re * z.re;
                acc[3] += z.im * z.im;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 4];
    for s in &sums {
        for (a, b) in tot.iter_mut().zip(s) {
            *a += b;
        }
    }
    let nf = samples as f64;
    let mean = Complex64::new(tot[0] / nf, tot[1] / nf);
    let var_re = (tot[2] / nf - mean.re * mean.re).max(0.0);
    let var_im = (tot[3] / nf - mean.im * mean.im).max(0.0);
    McEstimate {
        value: mean,
        error: Complex64::new((var_re / nf).sqrt(), (var_im / nf).sqrt()),
    }
}
