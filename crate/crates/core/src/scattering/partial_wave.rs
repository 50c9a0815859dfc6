//! Unitary multichannel partial-wave amplitudes.
//!
//! For each partial wave `l` the reduced reaction matrix `K~_l(E)` is
//! tabulated against the total collision energy `E = mu v^2 / 2 + E_k`.
//! The physical reaction matrix on the open-channel block is
//! `K_l = D K~_l D` with threshold factors `D_c = (k_c / k_ref)^{l + 1/2}`,
//! and `S_l = (I + i K_l)(I - i K_l)^{-1}`. The amplitude is
//!
//! `f(m <- k, theta) = sum_l (2l + 1) (S_l - I)_{mk} P_l(cos theta) / (2 i sqrt(k_m k_k))`
//!
//! with momenta `k_c = sqrt(2 mu (E - E_c))` (`hbar = 1`). Uncoupled channels
//! can be given directly through phase shifts, `S_l = diag(exp(2 i delta))`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::interp::Pchip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialWaveSpec {
    /// Reference momentum `k_ref` of the threshold factors.
    pub momentum_scale: f64,
    /// One table per partial wave, `waves[l]`.
    pub waves: Vec<WaveTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveTable {
    /// Total collision energies, strictly increasing.
    pub energies: Vec<f64>,
    pub data: WaveData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveData {
    /// Reduced reaction matrices, one row-major `n x n` block per energy.
    Reaction(Vec<Vec<Complex64>>),
    /// Phase shifts per channel, one row per energy.
    PhaseShifts(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
enum BuiltWave {
    Reaction { re: Vec<Pchip>, im: Vec<Pchip> },
    Phase(Vec<Pchip>),
}

#[derive(Debug, Clone)]
pub(crate) struct PartialWaveModel {
    n: usize,
    reduced_mass: f64,
    thresholds: Vec<f64>,
    momentum_scale: f64,
    waves: Vec<BuiltWave>,
}

const HERMITIAN_TOL: f64 = 1e-12;
const UNITARY_TOL: f64 = 1e-12;
/// Channel count limit of the stack-allocated amplitude evaluation.
pub const MAX_CHANNELS: usize = 8;

impl PartialWaveModel {
    pub(crate) fn build(spec: &PartialWaveSpec, thresholds: &[f64], reduced_mass: f64) -> Result<Self> {
        let n = thresholds.len();
        if n > MAX_CHANNELS {
            return Err(Error::InvalidInput(format!("partial-wave models support at most {MAX_CHANNELS} channels")));
        }
        if !(spec.momentum_scale > 0.0) {
            return Err(Error::NonPositiveParameter { name: "momentum_scale", value: spec.momentum_scale });
        }
        if spec.waves.is_empty() {
            return Err(Error::InvalidInput("partial-wave model needs at least one wave".into()));
        }
        let mut waves = Vec::with_capacity(spec.waves.len());
        for (l, table) in spec.waves.iter().enumerate() {
            let e = &table.energies;
            if e.is_empty() || e.windows(2).any(|w| w[1] <= w[0]) || e.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("wave l = {l}: energies must be finite and strictly increasing")));
            }
            let built = match &table.data {
                WaveData::Reaction(mats) => {
                    if mats.len() != e.len() || mats.iter().any(|m| m.len() != n * n) {
                        return Err(Error::InvalidInput(format!(
                            "wave l = {l}: expected {} reaction matrices of size {n}x{n}",
                            e.len()
                        )));
                    }
                    for (mat, &energy) in mats.iter().zip(e) {
                        let scale = mat.iter().fold(1.0f64, |a, z| a.max(z.norm()));
                        let mut residual = 0.0f64;
                        for a in 0..n {
                            for b in 0..n {
                                residual = residual.max((mat[a * n + b] - mat[b * n + a].conj()).norm());
                            }
                        }
                        if residual > HERMITIAN_TOL * scale {
                            return Err(Error::NonHermitianReactionMatrix { l, energy, residual });
                        }
                    }
                    // interpolate the upper triangle, mirror the rest so Hermiticity is exact
                    let mut re = Vec::with_capacity(n * n);
                    let mut im = Vec::with_capacity(n * n);
                    for a in 0..n {
                        for b in 0..n {
                            let (p, q, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
                            let ys_re = mats.iter().map(|m| m[p * n + q].re).collect();
                            let ys_im = mats
                                .iter()
                                .map(|m| if p == q { 0.0 } else { sign * m[p * n + q].im })
                                .collect();
                            re.push(Pchip::new(e.clone(), ys_re));
                            im.push(Pchip::new(e.clone(), ys_im));
                        }
                    }
                    BuiltWave::Reaction { re, im }
                }
                WaveData::PhaseShifts(rows) => {
                    if rows.len() != e.len() || rows.iter().any(|r| r.len() != n || r.iter().any(|d| !d.is_finite())) {
                        return Err(Error::InvalidInput(format!(
                            "wave l = {l}: expected {} rows of {n} finite phase shifts",
                            e.len()
                        )));
                    }
                    BuiltWave::Phase(
                        (0..n)
                            .map(|c| Pchip::new(e.clone(), rows.iter().map(|r| r[c]).collect()))
                            .collect(),
                    )
                }
            };
            waves.push(built);
        }
        let model = Self {
            n,
            reduced_mass,
            thresholds: thresholds.to_vec(),
            momentum_scale: spec.momentum_scale,
            waves,
        };
        for (l, table) in spec.waves.iter().enumerate() {
            for &energy in &table.energies {
                let residual = model.unitarity_residual(l, energy);
                if !(residual <= UNITARY_TOL) {
                    return Err(Error::NonUnitarySMatrix { l, energy, residual });
                }
            }
        }
        Ok(model)
    }

    pub(crate) fn l_count(&self) -> usize {
        self.waves.len()
    }

    fn momentum(&self, energy: f64, c: usize) -> f64 {
        (2.0 * self.reduced_mass * (energy - self.thresholds[c])).max(0.0).sqrt()
    }

    fn open_channels(&self, energy: f64) -> Vec<usize> {
        (0..self.n).filter(|&c| energy > self.thresholds[c]).collect()
    }

    /// Physical reaction matrix on the open block (row-major).
    fn reaction_open(&self, l: usize, energy: f64, open: &[usize]) -> Vec<Complex64> {
        let no = open.len();
        let mut k = vec![Complex64::default(); no * no];
        if let BuiltWave::Reaction { re, im } = &self.waves[l] {
            let power = l as f64 + 0.5;
            let d: Vec<f64> = open
                .iter()
                .map(|&c| (self.momentum(energy, c) / self.momentum_scale).powf(power))
                .collect();
            for (a, &ca) in open.iter().enumerate() {
                for (b, &cb) in open.iter().enumerate() {
                    let idx = ca * self.n + cb;
                    k[a * no + b] = Complex64::new(re[idx].eval(energy), im[idx].eval(energy)) * (d[a] * d[b]);
                }
            }
        }
        k
    }

    /// `S_l` on the open block, for unitarity diagnostics.
    pub(crate) fn s_matrix(&self, l: usize, energy: f64) -> DMatrix<Complex64> {
        let open = self.open_channels(energy);
        let no = open.len();
        match &self.waves[l] {
            BuiltWave::Phase(deltas) => DMatrix::from_fn(no, no, |a, b| {
                if a == b {
                    Complex64::from_polar(1.0, 2.0 * deltas[open[a]].eval(energy))
                } else {
                    Complex64::default()
                }
            }),
            BuiltWave::Reaction { .. } => {
                let k = self.reaction_open(l, energy, &open);
                let km = DMatrix::from_row_slice(no, no, &k);
                let i = Complex64::i();
                let id = DMatrix::<Complex64>::identity(no, no);
                let plus = &id + &km * i;
                let minus = &id - &km * i;
                match minus.try_inverse() {
                    Some(inv) => plus * inv,
                    None => DMatrix::from_element(no, no, Complex64::new(f64::NAN, f64::NAN)),
                }
            }
        }
    }

    pub(crate) fn unitarity_residual(&self, l: usize, energy: f64) -> f64 {
        let s = self.s_matrix(l, energy);
        let no = s.nrows();
        let prod = s.adjoint() * &s;
        let mut r = 0.0f64;
        for a in 0..no {
            for b in 0..no {
                let target = if a == b { 1.0 } else { 0.0 };
                let d = (prod[(a, b)] - target).norm();
                r = if d.is_nan() { f64::INFINITY } else { r.max(d) };
            }
        }
        r
    }

    /// `f(m <- k)` at total energy `energy` and scattering angle `cos_theta`.
    pub(crate) fn amplitude(&self, m: usize, k: usize, energy: f64, cos_theta: f64) -> Complex64 {
        if energy <= self.thresholds[m] || energy <= self.thresholds[k] {
            return Complex64::default();
        }
        let n = self.n;
        // open channels and their threshold factors (k_c / k_ref)^{1/2}, raised by one power per wave
        let mut open = [0usize; MAX_CHANNELS];
        let mut ratio = [0.0f64; MAX_CHANNELS];
        let mut d = [0.0f64; MAX_CHANNELS];
        let mut no = 0;
        let (mut a_m, mut a_k) = (0, 0);
        for c in 0..n {
            if energy > self.thresholds[c] {
                if c == m {
                    a_m = no;
                }
                if c == k {
                    a_k = no;
                }
                open[no] = c;
                ratio[no] = self.momentum(energy, c) / self.momentum_scale;
                d[no] = ratio[no].sqrt();
                no += 1;
            }
        }
        let km = self.momentum(energy, m);
        let kk = self.momentum(energy, k);
        let mut sum = Complex64::default();
        let mut p_prev = 0.0;
        let mut p_cur = 1.0;
        for (l, wave) in self.waves.iter().enumerate() {
            if l > 0 {
                // P_l by the three-term recurrence
                let lf = l as f64;
                let next = if l == 1 { cos_theta } else { ((2.0 * lf - 1.0) * cos_theta * p_cur - (lf - 1.0) * p_prev) / lf };
                p_prev = p_cur;
                p_cur = next;
                for a in 0..no {
                    d[a] *= ratio[a];
                }
            }
            // x = T / (2i), T = S - I
            let x = match wave {
                BuiltWave::Phase(deltas) => {
                    if m != k {
                        continue;
                    }
                    let delta = deltas[k].eval(energy);
                    // (exp(2 i d) - 1) / (2 i) = exp(i d) sin d
                    Complex64::from_polar(delta.sin(), delta)
                }
                BuiltWave::Reaction { re, im } => {
                    let knot = re[0].locate(energy);
                    let mut kmat = [Complex64::default(); MAX_CHANNELS * MAX_CHANNELS];
                    for a in 0..no {
                        for b in 0..no {
                            let idx = open[a] * n + open[b];
                            kmat[a * no + b] =
                                Complex64::new(re[idx].eval_at(&knot), im[idx].eval_at(&knot)) * (d[a] * d[b]);
                        }
                    }
                    // (I - iK) y = K e_k ; T e_k = 2 i y
                    let mut amat = [Complex64::default(); MAX_CHANNELS * MAX_CHANNELS];
                    let mut rhs = [Complex64::default(); MAX_CHANNELS];
                    for a in 0..no {
                        for b in 0..no {
                            amat[a * no + b] = Complex64::new(kmat[a * no + b].im, -kmat[a * no + b].re);
                        }
                        amat[a * no + a] += 1.0;
                        rhs[a] = kmat[a * no + a_k];
                    }
                    solve_in_place(&mut amat[..no * no], &mut rhs[..no], no);
                    rhs[a_m]
                }
            };
            sum += x * ((2 * l + 1) as f64 * p_cur);
        }
        sum / (km * kk).sqrt()
    }
}

/// Gaussian elimination with partial pivoting; `b` is overwritten with the solution.
fn solve_in_place(a: &mut [Complex64], b: &mut [Complex64], n: usize) {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x * n + col].norm().total_cmp(&a[y * n + col].norm()))
            .unwrap_or(col);
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        let p = a[col * n + col];
        for r in col + 1..n {
            let factor = a[r * n + col] / p;
            if factor == Complex64::default() {
                continue;
            }
            for c in col..n {
                let v = a[col * n + c];
                a[r * n + c] -= factor * v;
            }
            let v = b[col];
            b[r] -= factor * v;
        }
    }
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r * n + c] * b[c];
        }
        b[r] = s / a[r * n + r];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn single(data: WaveData) -> PartialWaveSpec {
        PartialWaveSpec {
            momentum_scale: 1.0,
            waves: vec![WaveTable { energies: vec![0.0, 10.0], data }],
        }
    }

    #[test]
    fn phase_shift_half_pi_gives_unit_imaginary_amplitude() {
        // mu = 0.5, E = 1 -> k = 1 ; f = (exp(i pi) - 1) / (2 i) = i
        let spec = single(WaveData::PhaseShifts(vec![vec![PI / 2.0], vec![PI / 2.0]]));
        let m = PartialWaveModel::build(&spec, &[0.0], 0.5).unwrap();
        let f = m.amplitude(0, 0, 1.0, 0.3);
        assert!((f - Complex64::i()).norm() < 1e-14, "{f}");
    }

    #[test]
    fn reaction_quarter_pi_matches_phase_shift() {
        // K~ = tan(pi/4) = 1 at k = 1 ; threshold factor is 1 there
        let spec = single(WaveData::Reaction(vec![vec![Complex64::new(1.0, 0.0)]; 2]));
        let m = PartialWaveModel::build(&spec, &[0.0], 0.5).unwrap();
        let f = m.amplitude(0, 0, 1.0, -0.7);
        let expected = Complex64::from_polar((PI / 4.0).sin(), PI / 4.0);
        assert!((f - expected).norm() < 1e-14, "{f}");
    }

    #[test]
    fn rejects_non_hermitian_reaction() {
        let k = vec![
            Complex64::new(0.1, 0.0),
            Complex64::new(0.2, 0.1),
            Complex64::new(0.2, 0.1),
            Complex64::new(0.3, 0.0),
        ];
        let spec = single(WaveData::Reaction(vec![k.clone(), k]));
        assert!(matches!(
            PartialWaveModel::build(&spec, &[0.0, 0.1], 0.5),
            Err(Error::NonHermitianReactionMatrix { l: 0, .. })
        ));
    }

    #[test]
    fn coupled_s_matrix_is_unitary_above_and_below_threshold() {
        let k = vec![
            Complex64::new(0.8, 0.0),
            Complex64::new(0.3, -0.4),
            Complex64::new(0.3, 0.4),
            Complex64::new(-0.5, 0.0),
        ];
        let spec = PartialWaveSpec {
            momentum_scale: 0.7,
            waves: vec![
                WaveTable { energies: vec![0.0, 1.0, 3.0], data: WaveData::Reaction(vec![k.clone(); 3]) },
                WaveTable { energies: vec![0.0, 3.0], data: WaveData::Reaction(vec![k; 2]) },
            ],
        };
        let m = PartialWaveModel::build(&spec, &[0.0, 0.4], 0.5).unwrap();
        for e in [0.2, 0.41, 0.9, 2.5] {
            for l in 0..2 {
                assert!(m.unitarity_residual(l, e) < 1e-13);
            }
        }
        // closed exit channel below threshold
        assert_eq!(m.amplitude(1, 0, 0.3, 0.0), Complex64::default());
    }

    #[test]
    fn small_solver_matches_nalgebra() {
        let n = 3;
        let a: Vec<Complex64> = (0..9).map(|i| Complex64::new((i as f64 * 0.37).sin() + if i % 4 == 0 { 2.0 } else { 0.0 }, (i as f64).cos())).collect();
        let b: Vec<Complex64> = (0..3).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let mut a2 = a.clone();
        let mut x = b.clone();
        solve_in_place(&mut a2, &mut x, n);
        let am = DMatrix::from_row_slice(n, n, &a);
        let r = am * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_vec(b);
        assert!(r.norm() < 1e-13);
    }
}
