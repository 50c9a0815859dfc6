use bbe_core::kernel::{KernelEvaluator, KernelQuadrature, KernelTensor, VelocityGrid};
use bbe_core::presets::{self, Preset};
use bbe_core::Error;

fn build(preset: Preset, levels: usize, points: usize) -> (VelocityGrid, KernelTensor) {
    let (gas, amp) = presets::reference(preset, levels).unwrap();
    let grid = VelocityGrid::cartesian(gas.thermal_speed(), 3.5, points).unwrap();
    let t = KernelTensor::build(&gas, &amp, &grid, KernelQuadrature::default()).unwrap();
    (grid, t)
}

#[test]
fn populations_are_nonnegative_and_finite() {
    let (grid, t) = build(Preset::PartialWave, 3, 5);
    for i in 0..grid.len() {
        for l in 0..grid.len() {
            for m in 0..3 {
                for j in 0..3 {
                    let x = t.population(i, l, m, j);
                    assert!(x.is_finite() && x >= 0.0, "K({m}{j}) ({i} <- {l}) = {x}");
                }
            }
        }
    }
}

#[test]
fn kernel_is_invariant_under_velocity_inversion() {
    let (grid, t) = build(Preset::ConstantComplex, 2, 5);
    for i in 0..grid.len() {
        let mi = grid.mirror(i).unwrap();
        for l in 0..grid.len() {
            let ml = grid.mirror(l).unwrap();
            for m in 0..2 {
                for k in 0..2 {
                    let a = t.elastic(i, l, m, k);
                    let b = t.elastic(mi, ml, m, k);
                    assert!((a - b).norm() <= 1e-12 * a.norm().max(1e-300), "{a} vs {b}");
                    let (p, q) = (t.population(i, l, m, k), t.population(mi, ml, m, k));
                    assert!((p - q).abs() <= 1e-12 * p.abs().max(1e-300));
                }
            }
        }
    }
}

#[test]
fn elastic_entries_are_hermitian_in_level_pair() {
    let (grid, t) = build(Preset::PartialWave, 3, 3);
    for i in 0..grid.len() {
        for l in 0..grid.len() {
            for m in 0..3 {
                for k in 0..3 {
                    assert_eq!(t.elastic(i, l, m, k), t.elastic(i, l, k, m).conj());
                }
            }
            assert!(t.get(0, 1, 1, 2, i, l).is_none());
        }
    }
}

#[test]
fn far_field_entries_match_pointwise_kernel() {
    let (gas, amp) = presets::reference(Preset::PartialWave, 2).unwrap();
    let grid = VelocityGrid::cartesian(gas.thermal_speed(), 3.5, 7).unwrap();
    let q = KernelQuadrature::default();
    let t = KernelTensor::build(&gas, &amp, &grid, q).unwrap();
    let eval = KernelEvaluator::new(&gas, &amp, q);
    // corner to opposite corner is well outside the near field
    let (i, l) = (0, grid.len() - 1);
    let (v, v1) = (grid.node(i), grid.node(l));
    for m in 0..2 {
        for j in 0..2 {
            let want = eval.point(m, j, m, j, v, v1).unwrap().re;
            assert!((t.population(i, l, m, j) - want).abs() <= 1e-14 * want.abs().max(1e-300));
        }
    }
}

#[test]
fn save_load_round_trip_and_corruption() {
    let (_, t) = build(Preset::ConstantComplex, 2, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.bin");
    t.save(&path).unwrap();
    assert_eq!(KernelTensor::load(&path).unwrap(), t);
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 3;
    bytes[last] ^= 0x5a;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(KernelTensor::load(&path), Err(Error::Container(_))));
    bytes.truncate(40);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(KernelTensor::load(&path), Err(Error::Container(_))));
}

#[test]
fn cache_key_tracks_model_grid_and_quadrature() {
    let (gas, amp) = presets::reference(Preset::ConstantComplex, 2).unwrap();
    let g5 = VelocityGrid::cartesian(1.0, 3.5, 5).unwrap();
    let g7 = VelocityGrid::cartesian(1.0, 3.5, 7).unwrap();
    let q = KernelQuadrature::default();
    let key = |g: &VelocityGrid, q| bbe_core::kernel::TensorMeta::new(&gas, &amp, g, q).cache_key();
    assert_eq!(key(&g5, q), key(&g5, q));
    assert_ne!(key(&g5, q), key(&g7, q));
    assert_ne!(key(&g5, q), key(&g5, KernelQuadrature { radial_points: 24, ..q }));
    let other = presets::amplitude(Preset::ConstantReal, &gas).unwrap();
    assert_ne!(
        key(&g5, q),
        bbe_core::kernel::TensorMeta::new(&gas, &other, &g5, q).cache_key()
    );
}

#[test]
fn single_level_tensor_is_filled_on_every_row() {
    let (gas, amp) = presets::reference(Preset::PartialWave, 1).unwrap();
    let grid = VelocityGrid::cartesian(gas.thermal_speed(), 3.5, 5).unwrap();
    let q = KernelQuadrature::default();
    let t = KernelTensor::build(&gas, &amp, &grid, q).unwrap();
    let eval = KernelEvaluator::new(&gas, &amp, q);
    let (i, l) = (0, grid.len() - 1);
    let want = eval.point(0, 0, 0, 0, grid.node(i), grid.node(l)).unwrap().re;
    assert!(want > 0.0);
    assert!((t.population(i, l, 0, 0) - want).abs() <= 1e-14 * want);
    for i in 0..grid.len() {
        assert!((0..grid.len()).any(|l| t.population(i, l, 0, 0) > 0.0), "row {i} is empty");
    }
}
