use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::Vec3;

/// Layout of the velocity grid. Extents are absolute speeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    /// Cell-centred cube `[-L, L]^3` with `points_per_axis` nodes per axis.
    Cartesian { half_width: f64, points_per_axis: usize },
    /// Gauss–Legendre speeds on `[0, max_speed]` times a Gauss–Legendre
    /// polar / uniform azimuthal direction set (`azimuthal` must be even).
    Spherical { max_speed: f64, speeds: usize, polar: usize, azimuthal: usize },
}

/// Discretization of `int d^3v` used by the kernel tensor and the generators.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    spec: GridSpec,
    nodes: Vec<Vec3>,
    weights: Vec<f64>,
    cell: Vec<f64>,
}

impl VelocityGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let (nodes, weights, cell) = match spec {
            GridSpec::Cartesian { half_width, points_per_axis } => {
                if !(half_width > 0.0) {
                    return Err(Error::NonPositiveParameter { name: "half_width", value: half_width });
                }
                if points_per_axis == 0 {
                    return Err(Error::NonPositiveParameter { name: "points_per_axis", value: 0.0 });
                }
                let n = points_per_axis;
                let h = 2.0 * half_width / n as f64;
                let axis: Vec<f64> = (0..n).map(|i| -half_width + h * (i as f64 + 0.5)).collect();
                // exact mirror images so the node set is symmetric under v -> -v
                let axis: Vec<f64> = (0..n)
                    .map(|i| if i < n / 2 { axis[i] } else if 2 * i + 1 == n { 0.0 } else { -axis[n - 1 - i] })
                    .collect();
                let mut nodes = Vec::with_capacity(n * n * n);
                for &x in &axis {
                    for &y in &axis {
                        for &z in &axis {
                            nodes.push(Vec3::new(x, y, z));
                        }
                    }
                }
                let count = nodes.len();
                (nodes, vec![h * h * h; count], vec![h; count])
            }
            GridSpec::Spherical { max_speed, speeds, polar, azimuthal } => {
                if !(max_speed > 0.0) {
                    return Err(Error::NonPositiveParameter { name: "max_speed", value: max_speed });
                }
                if speeds == 0 || polar == 0 || azimuthal == 0 || azimuthal % 2 == 1 {
                    return Err(Error::InvalidInput(
                        "spherical grid needs positive speed/polar counts and an even azimuthal count".into(),
                    ));
                }
                let radial = GaussLegendre::new(speeds);
                let pol = GaussLegendre::new(polar);
                let dphi = 2.0 * PI / azimuthal as f64;
                let mut nodes = Vec::new();
                let mut weights = Vec::new();
                for (s, ws) in radial.mapped(0.0, max_speed) {
                    for (&c, &wc) in pol.nodes.iter().zip(&pol.weights) {
                        let st = (1.0 - c * c).max(0.0).sqrt();
                        for a in 0..azimuthal {
                            let phi = dphi * (a as f64 + 0.5);
                            nodes.push(Vec3::new(s * st * phi.cos(), s * st * phi.sin(), s * c));
                            weights.push(s * s * ws * wc * dphi);
                        }
                    }
                }
                let cell = weights.iter().map(|w: &f64| w.cbrt()).collect();
                (nodes, weights, cell)
            }
        };
        Ok(Self { spec, nodes, weights, cell })
    }

    /// Cartesian grid with `L = half_width_factor * reference_speed`.
    pub fn cartesian(reference_speed: f64, half_width_factor: f64, points_per_axis: usize) -> Result<Self> {
        Self::new(GridSpec::Cartesian { half_width: half_width_factor * reference_speed, points_per_axis })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Vec3 {
        &self.nodes[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Linear cell size around node `i` (edge length for Cartesian grids).
    pub fn cell_size(&self, i: usize) -> f64 {
        self.cell[i]
    }

    /// Index of the node at `-v_i`.
    pub fn mirror(&self, i: usize) -> Option<usize> {
        let target = -self.nodes[i];
        let tol = 1e-12 * (1.0 + target.norm());
        self.nodes.iter().position(|v| (v - target).norm() <= tol)
    }

    /// Hex SHA-256 of the grid layout.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(&self.spec).expect("grid spec serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cartesian_weights_fill_the_cube() {
        let g = VelocityGrid::cartesian(1.5, 4.0, 7).unwrap();
        assert_eq!(g.len(), 343);
        assert_relative_eq!(g.weights().iter().sum::<f64>(), 12.0f64.powi(3), max_relative = 1e-13);
        assert!(g.weights().iter().all(|&w| w > 0.0));
        // odd count contains the origin
        assert_eq!(g.node(171), &Vec3::zeros());
    }

    #[test]
    fn node_sets_are_parity_symmetric() {
        for g in [
            VelocityGrid::cartesian(1.0, 4.0, 6).unwrap(),
            VelocityGrid::cartesian(1.0, 4.0, 5).unwrap(),
            VelocityGrid::new(GridSpec::Spherical { max_speed: 3.0, speeds: 3, polar: 4, azimuthal: 6 }).unwrap(),
        ] {
            for i in 0..g.len() {
                let j = g.mirror(i).expect("mirror node exists");
                assert_eq!(g.weight(i), g.weight(j));
            }
        }
    }

    #[test]
    fn spherical_weights_fill_the_ball() {
        let g = VelocityGrid::new(GridSpec::Spherical { max_speed: 2.0, speeds: 4, polar: 6, azimuthal: 8 }).unwrap();
        assert_relative_eq!(g.weights().iter().sum::<f64>(), 4.0 / 3.0 * PI * 8.0, max_relative = 1e-13);
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(VelocityGrid::cartesian(1.0, -1.0, 5).is_err());
        assert!(VelocityGrid::new(GridSpec::Spherical { max_speed: 1.0, speeds: 2, polar: 2, azimuthal: 3 }).is_err());
    }
}
