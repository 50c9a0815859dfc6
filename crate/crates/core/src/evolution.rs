//! Density field on the velocity grid and its collisional time evolution.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::{read_container, write_container};
use crate::error::{Error, Result};
use crate::generators::Generator;
use crate::kernel::{GridSpec, VelocityGrid};
use crate::model::{maxwellian, AtomGasModel};

/// `rho_jk(v_i)` for every grid node, flattened as `(i * n + j) * n + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    levels: usize,
    weights: Vec<f64>,
    grid_hash: String,
    time: f64,
    data: Vec<Complex64>,
}

impl DensityField {
    pub fn zeros(levels: usize, grid: &VelocityGrid) -> Self {
        Self {
            levels,
            weights: grid.weights().to_vec(),
            grid_hash: grid.fingerprint(),
            time: 0.0,
            data: vec![Complex64::default(); grid.len() * levels * levels],
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn nodes(&self) -> usize {
        self.weights.len()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn grid_hash(&self) -> &str {
        &self.grid_hash
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.data[(i * self.levels + j) * self.levels + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, z: Complex64) {
        let n = self.levels;
        self.data[(i * n + j) * n + k] = z;
    }

    pub fn node_matrix(&self, i: usize) -> DMatrix<Complex64> {
        let n = self.levels;
        DMatrix::from_row_slice(n, n, &self.data[i * n * n..(i + 1) * n * n])
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|z| *z *= factor);
    }

    /// `sum_i w_i sum_k rho_kk(v_i)` (real part).
    pub fn trace_total(&self) -> f64 {
        (0..self.nodes())
            .map(|i| self.weights[i] * (0..self.levels).map(|k| self.get(i, k, k).re).sum::<f64>())
            .sum()
    }

    /// `sum_i w_i rho_jk(v_i)`.
    pub fn integrated(&self, j: usize, k: usize) -> Complex64 {
        (0..self.nodes()).map(|i| self.get(i, j, k) * self.weights[i]).sum()
    }

    /// Largest entry of `rho - rho^dagger` over all nodes.
    pub fn hermiticity_residual(&self) -> f64 {
        let n = self.levels;
        let mut r = 0.0f64;
        for i in 0..self.nodes() {
            for j in 0..n {
                for k in j..n {
                    r = r.max((self.get(i, j, k) - self.get(i, k, j).conj()).norm());
                }
            }
        }
        r
    }

    /// Smallest eigenvalue over all node matrices, with its node.
    /// Node matrices are symmetrized before diagonalization.
    pub fn positivity_min_eig(&self) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for i in 0..self.nodes() {
            let m = self.node_matrix(i);
            let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
            let e = h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
            if e < best.0 {
                best = (e, i);
            }
        }
        best
    }

    /// Largest population value over nodes and levels.
    pub fn population_scale(&self) -> f64 {
        let n = self.levels;
        (0..self.nodes())
            .flat_map(|i| (0..n).map(move |k| (i, k)))
            .map(|(i, k)| self.get(i, k, k).re.abs())
            .fold(0.0, f64::max)
    }

    fn normalize(&mut self) -> Result<()> {
        let tr = self.trace_total();
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::NormalizationFailure(format!("total trace {tr} cannot be normalized to 1")));
        }
        self.scale(1.0 / tr);
        Ok(())
    }

    pub fn save(&self, path: &Path, grid: &VelocityGrid) -> Result<()> {
        if grid.fingerprint() != self.grid_hash {
            return Err(Error::GridMismatch("field does not live on this grid".into()));
        }
        let meta = json!({
            "levels": self.levels,
            "nodes": self.nodes(),
            "time": self.time,
            "grid": grid.spec(),
            "grid_hash": self.grid_hash,
        });
        let payload: Vec<f64> = self.data.iter().flat_map(|z| [z.re, z.im]).collect();
        write_container(path, "density_field", meta, &payload)
    }

    /// Reads a snapshot and rebuilds its grid from the stored layout.
    pub fn load(path: &Path) -> Result<(Self, VelocityGrid)> {
        let (meta, payload) = read_container(path, "density_field")?;
        let bad = |m: &str| Error::Container(format!("{}: {m}", path.display()));
        let spec: GridSpec = serde_json::from_value(meta["grid"].clone()).map_err(|e| bad(&e.to_string()))?;
        let grid = VelocityGrid::new(spec)?;
        let levels = meta["levels"].as_u64().ok_or_else(|| bad("missing levels"))? as usize;
        let time = meta["time"].as_f64().ok_or_else(|| bad("missing time"))?;
        if payload.len() != 2 * grid.len() * levels * levels || meta["grid_hash"] != grid.fingerprint() {
            return Err(bad("snapshot does not match its grid"));
        }
        let mut field = Self::zeros(levels, &grid);
        field.time = time;
        for (z, c) in field.data.iter_mut().zip(payload.chunks_exact(2)) {
            *z = Complex64::new(c[0], c[1]);
        }
        Ok((field, grid))
    }
}

/// Initial-state presets. Level indices are 1-based as in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    /// `rho_ll(v) = W_a(v)`, everything else zero.
    Thermal {
        level: usize,
        #[serde(default)]
        atom_thermal_speed: Option<f64>,
    },
    /// Projector onto `(|a> + |b>)/sqrt 2` times `W_a(v)`.
    Superposition {
        levels: (usize, usize),
        #[serde(default)]
        atom_thermal_speed: Option<f64>,
    },
    /// Rows `node,j,k,re,im` (node 0-based, levels 1-based); missing entries
    /// are zero and a lone `(j, k)` entry implies its Hermitian partner.
    Custom { csv: String },
    /// Random rank-full PSD matrix per node times `W_a(v)`.
    RandomPsd {
        seed: u64,
        #[serde(default)]
        atom_thermal_speed: Option<f64>,
    },
}

/// Builds a Hermitian, PSD field with unit total trace on `grid`.
pub fn make_initial_field(gas: &AtomGasModel, grid: &VelocityGrid, spec: &InitialState) -> Result<DensityField> {
    let n = gas.levels();
    let mut field = DensityField::zeros(n, grid);
    let profile = |u: Option<f64>| -> Result<Vec<f64>> {
        let u = u.unwrap_or_else(|| gas.atom_thermal_speed());
        if !(u > 0.0) {
            return Err(Error::NonPositiveParameter { name: "atom_thermal_speed", value: u });
        }
        Ok(grid.nodes().iter().map(|v| maxwellian(u, v.norm_squared())).collect())
    };
    let level = |l: usize| -> Result<usize> {
        if l == 0 || l > n {
            Err(Error::IndexOutOfRange { index: l, len: n })
        } else {
            Ok(l - 1)
        }
    };
    match spec {
        InitialState::Thermal { level: l, atom_thermal_speed } => {
            let l = level(*l)?;
            for (i, w) in profile(*atom_thermal_speed)?.into_iter().enumerate() {
                field.set(i, l, l, Complex64::new(w, 0.0));
            }
        }
        InitialState::Superposition { levels: (a, b), atom_thermal_speed } => {
            let (a, b) = (level(*a)?, level(*b)?);
            if a == b {
                return Err(Error::InvalidInput("superposition needs two distinct levels".into()));
            }
            for (i, w) in profile(*atom_thermal_speed)?.into_iter().enumerate() {
                let z = Complex64::new(0.5 * w, 0.0);
                for (j, k) in [(a, a), (a, b), (b, a), (b, b)] {
                    field.set(i, j, k, z);
                }
            }
        }
        InitialState::RandomPsd { seed, atom_thermal_speed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for (i, w) in profile(*atom_thermal_speed)?.into_iter().enumerate() {
                let a = DMatrix::<Complex64>::from_fn(n, n, |_, _| {
                    Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
                });
                let p = &a * a.adjoint();
                let tr: f64 = (0..n).map(|k| p[(k, k)].re).sum();
                for j in 0..n {
                    for k in 0..n {
                        field.set(i, j, k, p[(j, k)] * (w / tr));
                    }
                }
            }
        }
        InitialState::Custom { csv } => fill_custom(&mut field, csv)?,
    }
    for i in 0..field.nodes() {
        let m = field.node_matrix(i);
        let scale = m.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        let e = m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        if e < -1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::NonPositiveInitialState { node: i, eigenvalue: e });
        }
    }
    field.normalize()?;
    Ok(field)
}

fn fill_custom(field: &mut DensityField, text: &str) -> Result<()> {
    let n = field.levels;
    let mut seen = vec![false; field.data.len()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 0 && cols.first().is_some_and(|c| c.parse::<f64>().is_err()) {
            continue; // header row
        }
        let bad = |m: String| Error::InvalidInput(format!("initial state line {}: {m}", lineno + 1));
        if cols.len() != 5 {
            return Err(bad(format!("expected 5 columns, found {}", cols.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("`{s}`: {e}")));
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        let (i, j, k) = (int(cols[0])?, int(cols[1])?, int(cols[2])?);
        if i >= field.nodes() || j == 0 || j > n || k == 0 || k > n {
            return Err(bad(format!("index ({i}, {j}, {k}) out of range")));
        }
        let z = Complex64::new(num(cols[3])?, num(cols[4])?);
        let (j, k) = (j - 1, k - 1);
        let idx = (i * n + j) * n + k;
        field.data[idx] = z;
        seen[idx] = true;
        let partner = (i * n + k) * n + j;
        if !seen[partner] {
            field.data[partner] = z.conj();
        } else if (field.data[partner] - z.conj()).norm() > 1e-12 * z.norm().max(1.0) {
            return Err(bad(format!("entry ({j}, {k}) at node {i} breaks Hermiticity", j = j + 1, k = k + 1)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreachPolicy {
    Warn,
    Abort,
}

pub const STABILITY_LIMIT: f64 = 0.5;
pub const DEFAULT_POSITIVITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub t_final: f64,
    pub dt: f64,
    /// Record a sample every this many steps (the final state is always recorded).
    pub sample_every: usize,
    pub positivity_tolerance: f64,
    pub on_breach: BreachPolicy,
    pub keep_snapshots: bool,
}

impl EvolveOptions {
    pub fn new(t_final: f64, dt: f64) -> Self {
        Self {
            t_final,
            dt,
            sample_every: 1,
            positivity_tolerance: DEFAULT_POSITIVITY_TOLERANCE,
            on_breach: BreachPolicy::Warn,
            keep_snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub trace: f64,
    /// `sum_i w_i rho_mm(v_i)` per level.
    pub populations: Vec<f64>,
    /// `sum_i w_i rho_mn(v_i)` for `m < n`, in pair order.
    pub coherences: Vec<Complex64>,
    pub min_eig: f64,
    pub min_eig_node: usize,
    pub herm_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Breach {
    pub t: f64,
    pub node: usize,
    pub eigenvalue: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub levels: usize,
    pub samples: Vec<Sample>,
    pub breaches: Vec<Breach>,
    pub snapshots: Vec<DensityField>,
    pub final_state: DensityField,
}

fn observe(field: &DensityField) -> Sample {
    let n = field.levels;
    let (min_eig, min_eig_node) = field.positivity_min_eig();
    Sample {
        t: field.time,
        trace: field.trace_total(),
        populations: (0..n).map(|m| field.integrated(m, m).re).collect(),
        coherences: (0..n).flat_map(|m| (m + 1..n).map(move |k| (m, k))).map(|(m, k)| field.integrated(m, k)).collect(),
        min_eig,
        min_eig_node,
        herm_residual: field.hermiticity_residual(),
    }
}

/// Fixed-step classical RK4 integration of `d rho/dt = G rho`.
pub fn evolve(gen: &Generator, rho0: &DensityField, opts: &EvolveOptions) -> Result<Trajectory> {
    if rho0.grid_hash != gen.grid_hash() || rho0.levels != gen.levels() || rho0.nodes() != gen.nodes() {
        return Err(Error::GridMismatch("initial field and generator live on different grids".into()));
    }
    if !(opts.dt > 0.0) {
        return Err(Error::NonPositiveParameter { name: "dt", value: opts.dt });
    }
    if !(opts.t_final >= 0.0) {
        return Err(Error::NonPositiveParameter { name: "t_final", value: opts.t_final });
    }
    let product = opts.dt * gen.row_norm();
    if product > STABILITY_LIMIT {
        return Err(Error::StabilityGuardTripped { product, limit: STABILITY_LIMIT });
    }
    let steps_f = opts.t_final / opts.dt;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "t_final = {} is not an integer multiple of dt = {}",
            opts.t_final, opts.dt
        )));
    }
    let every = opts.sample_every.max(1);
    let threshold = opts.positivity_tolerance * rho0.population_scale().max(f64::MIN_POSITIVE);

    let mut rho = rho0.clone();
    let dim = rho.data.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![Complex64::default(); dim], vec![Complex64::default(); dim], vec![Complex64::default(); dim], vec![Complex64::default(); dim]);
    let mut tmp = vec![Complex64::default(); dim];
    let mut traj = Trajectory {
        levels: rho.levels,
        samples: Vec::new(),
        breaches: Vec::new(),
        snapshots: Vec::new(),
        final_state: rho0.clone(),
    };
    let record = |rho: &DensityField, traj: &mut Trajectory| -> Result<()> {
        let s = observe(rho);
        if s.min_eig < -threshold {
            match opts.on_breach {
                BreachPolicy::Abort => {
                    return Err(Error::PositivityBreach { time: s.t, node: s.min_eig_node, eigenvalue: s.min_eig })
                }
                BreachPolicy::Warn => {
                    log::warn!("positivity breach at t = {}: eigenvalue {} at node {}", s.t, s.min_eig, s.min_eig_node);
                    traj.breaches.push(Breach { t: s.t, node: s.min_eig_node, eigenvalue: s.min_eig });
                }
            }
        }
        traj.samples.push(s);
        if opts.keep_snapshots {
            traj.snapshots.push(rho.clone());
        }
        Ok(())
    };
    record(&rho, &mut traj)?;
    let h = opts.dt;
    let t0 = rho0.time;
    for step in 1..=steps {
        let y = &rho.data;
        gen.apply(y, &mut k1);
        for ((t, a), b) in tmp.iter_mut().zip(y).zip(&k1) {
            *t = a + b * (0.5 * h);
        }
        gen.apply(&tmp, &mut k2);
        for ((t, a), b) in tmp.iter_mut().zip(y).zip(&k2) {
            *t = a + b * (0.5 * h);
        }
        gen.apply(&tmp, &mut k3);
        for ((t, a), b) in tmp.iter_mut().zip(y).zip(&k3) {
            *t = a + b * h;
        }
        gen.apply(&tmp, &mut k4);
        for (idx, y) in rho.data.iter_mut().enumerate() {
            *y += (k1[idx] + (k2[idx] + k3[idx]) * 2.0 + k4[idx]) * (h / 6.0);
        }
        rho.time = t0 + step as f64 * h;
        if step % every == 0 || step == steps {
            record(&rho, &mut traj)?;
        }
    }
    traj.final_state = rho;
    Ok(traj)
}

impl Trajectory {
    /// CSV header; coherence columns are 1-based `abs_coh_m_n`.
    pub fn csv_header(&self) -> String {
        let n = self.levels;
        let mut cols = vec!["t".to_string(), "trace".to_string()];
        cols.extend((1..=n).map(|m| format!("pop_{m}")));
        for m in 1..=n {
            for k in m + 1..=n {
                cols.push(format!("abs_coh_{m}_{k}"));
            }
        }
        cols.extend(["min_eig".to_string(), "herm_residual".to_string()]);
        cols.join(",")
    }

    /// Full-precision CSV of the sampled observables.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        let f = |x: f64| format!("{x:.16e}");
        for s in &self.samples {
            let mut row = vec![f(s.t), f(s.trace)];
            row.extend(s.populations.iter().map(|&p| f(p)));
            row.extend(s.coherences.iter().map(|z| f(z.norm())));
            row.push(f(s.min_eig));
            row.push(f(s.herm_residual));
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }

    /// Largest `|trace(t) - trace(0)|` over the samples.
    pub fn trace_drift(&self) -> f64 {
        let t0 = self.samples.first().map_or(0.0, |s| s.trace);
        self.samples.iter().map(|s| (s.trace - t0).abs()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.samples.iter().map(|s| s.min_eig).fold(f64::INFINITY, f64::min)
    }

    pub fn max_herm_residual(&self) -> f64 {
        self.samples.iter().map(|s| s.herm_residual).fold(0.0, f64::max)
    }
}
