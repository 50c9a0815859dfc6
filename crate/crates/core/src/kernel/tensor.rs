use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grid::VelocityGrid;
use super::point::{KernelEvaluator, KernelQuadrature};
use crate::container::{read_container, write_container};
use crate::error::{Error, Result};
use crate::model::AtomGasModel;
use crate::scattering::AmplitudeModel;

pub const TENSOR_FORMAT_VERSION: u32 = 1;

/// Provenance of a kernel tensor; a cache hit requires an exact match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub format_version: u32,
    pub model_hash: String,
    pub grid_hash: String,
    pub quadrature: KernelQuadrature,
    pub levels: usize,
    pub nodes: usize,
}

impl TensorMeta {
    pub fn new(gas: &AtomGasModel, amp: &AmplitudeModel, grid: &VelocityGrid, quadrature: KernelQuadrature) -> Self {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(gas.params()).expect("gas params serialize"));
        h.update(amp.fingerprint().as_bytes());
        Self {
            format_version: TENSOR_FORMAT_VERSION,
            model_hash: hex::encode(h.finalize()),
            grid_hash: grid.fingerprint(),
            quadrature,
            levels: gas.levels(),
            nodes: grid.len(),
        }
    }

    /// Combined key used to name cache files.
    pub fn cache_key(&self) -> String {
        let json = serde_json::to_vec(self).expect("meta serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Discretized kernel `K_{mj,nk}(v_i <- v_l)` on the secular support.
///
/// Under a nondegenerate Bohr spectrum the support consists of the
/// population-type entries `K_{mj,mj}` (real, non-negative) and the
/// elastic pair entries `K_{mm,nn}`; only `m < n` of the latter is stored,
/// the rest follows from Hermiticity.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTensor {
    meta: TensorMeta,
    levels: usize,
    nodes: usize,
    population: Vec<f64>,
    coherence: Vec<Complex64>,
}

fn pair_count(n: usize) -> usize {
    n * (n - 1) / 2
}

#[inline]
fn pair_index(n: usize, m: usize, k: usize) -> usize {
    debug_assert!(m < k);
    m * n - m * (m + 1) / 2 + (k - m - 1)
}

impl KernelTensor {
    /// Assembles the tensor over every node pair; self pairs use the self-cell stencil.
    pub fn build(
        gas: &AtomGasModel,
        amp: &AmplitudeModel,
        grid: &VelocityGrid,
        quadrature: KernelQuadrature,
    ) -> Result<Self> {
        if gas.levels() != amp.levels() {
            return Err(Error::GridMismatch("amplitude model and gas model disagree on level count".into()));
        }
        let n = gas.levels();
        let nodes = grid.len();
        let np = pair_count(n);
        let ev = KernelEvaluator::new(gas, amp, quadrature);
        let mut population = vec![0.0; nodes * nodes * n * n];
        // one placeholder per row when there are no pairs, so the zip below still visits every row
        let mut coherence = vec![Complex64::default(); if np == 0 { nodes } else { nodes * nodes * np }];

        population
            .par_chunks_mut(nodes * n * n)
            .zip(coherence.par_chunks_mut((nodes * np).max(1)))
            .enumerate()
            .for_each(|(i, (pop_row, coh_row))| {
                let v = grid.node(i);
                let cell = grid.cell_size(i);
                let reach = quadrature.near_field_cells as f64 * cell * (1.0 + 1e-9);
                for l in 0..nodes {
                    let v1 = grid.node(l);
                    let block = if i == l {
                        ev.self_cell_block(v, cell)
                    } else if (v - v1).amax() <= reach {
                        ev.cell_block(v, v1, cell).expect("cell average stays off the singular point")
                    } else {
                        ev.block(v, v1).expect("distinct nodes")
                    };
                    pop_row[l * n * n..(l + 1) * n * n].copy_from_slice(&block.population);
                    for m in 0..n {
                        for k in m + 1..n {
                            coh_row[l * np + pair_index(n, m, k)] = block.elastic[m * n + k];
                        }
                    }
                }
            });
        if np == 0 {
            coherence.clear();
        }
        Ok(Self {
            meta: TensorMeta::new(gas, amp, grid, quadrature),
            levels: n,
            nodes,
            population,
            coherence,
        })
    }

    pub fn meta(&self) -> &TensorMeta {
        &self.meta
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// `K_{mj,mj}(v_i <- v_l)`.
    #[inline]
    pub fn population(&self, i: usize, l: usize, m: usize, j: usize) -> f64 {
        let n = self.levels;
        self.population[((i * self.nodes + l) * n + m) * n + j]
    }

    /// `K_{mm,kk}(v_i <- v_l)`.
    #[inline]
    pub fn elastic(&self, i: usize, l: usize, m: usize, k: usize) -> Complex64 {
        use std::cmp::Ordering::*;
        let n = self.levels;
        let base = (i * self.nodes + l) * pair_count(n);
        match m.cmp(&k) {
            Equal => Complex64::new(self.population(i, l, m, m), 0.0),
            Less => self.coherence[base + pair_index(n, m, k)],
            Greater => self.coherence[base + pair_index(n, k, m)].conj(),
        }
    }

    /// `K_{mj,nk}(v_i <- v_l)` or `None` off the secular support.
    pub fn get(&self, m: usize, j: usize, n: usize, k: usize, i: usize, l: usize) -> Option<Complex64> {
        if (m, j) == (n, k) {
            Some(Complex64::new(self.population(i, l, m, j), 0.0))
        } else if m == j && n == k {
            Some(self.elastic(i, l, m, n))
        } else {
            None
        }
    }

    /// Standard-approach kernel `J(mn, v_i | jk, v_l) = K_{mj,nk}(v_i <- v_l)`.
    pub fn standard_kernel(&self, m: usize, n: usize, j: usize, k: usize, i: usize, l: usize) -> Option<Complex64> {
        self.get(m, j, n, k, i, l)
    }

    /// Secular-masked Kossakowski matrix at `(v_i <- v_l)`, indexed by `(m, j) -> m * n + j`.
    pub fn kossakowski_matrix(&self, i: usize, l: usize) -> DMatrix<Complex64> {
        let n = self.levels;
        DMatrix::from_fn(n * n, n * n, |a, b| {
            self.get(a / n, a % n, b / n, b % n, i, l).unwrap_or_default()
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::with_capacity(self.population.len() + 2 * self.coherence.len());
        payload.extend_from_slice(&self.population);
        for z in &self.coherence {
            payload.push(z.re);
            payload.push(z.im);
        }
        let meta = serde_json::to_value(&self.meta).map_err(|e| Error::Container(e.to_string()))?;
        write_container(path, "kernel_tensor", meta, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, payload) = read_container(path, "kernel_tensor")?;
        let meta: TensorMeta = serde_json::from_value(meta).map_err(|e| Error::Container(e.to_string()))?;
        if meta.format_version != TENSOR_FORMAT_VERSION {
            return Err(Error::Container(format!("unsupported format version {}", meta.format_version)));
        }
        let (n, nodes) = (meta.levels, meta.nodes);
        let pop_len = nodes * nodes * n * n;
        let coh_len = nodes * nodes * pair_count(n);
        if payload.len() != pop_len + 2 * coh_len {
            return Err(Error::Container("payload size does not match header".into()));
        }
        let population = payload[..pop_len].to_vec();
        let coherence = payload[pop_len..]
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect();
        Ok(Self { meta, levels: n, nodes, population, coherence })
    }

    /// All-zero tensor with the given shape, mainly for tests.
    pub fn zeros(meta: TensorMeta) -> Self {
        let (n, nodes) = (meta.levels, meta.nodes);
        Self {
            population: vec![0.0; nodes * nodes * n * n],
            coherence: vec![Complex64::default(); nodes * nodes * pair_count(n)],
            levels: n,
            nodes,
            meta,
        }
    }
}
