//! Shared fixtures for the criterion benches.

use bbe_core::kernel::{KernelQuadrature, KernelTensor, RateTable, VelocityGrid};
use bbe_core::presets::{self, Preset};
use bbe_core::{build_me_generator, AmplitudeModel, AtomGasModel, Generator};

pub struct Fixture {
    pub gas: AtomGasModel,
    pub amp: AmplitudeModel,
    pub grid: VelocityGrid,
}

/// Reference partial-wave model on a cartesian grid with `points` nodes per axis.
pub fn fixture(levels: usize, points: usize) -> Fixture {
    let (gas, amp) = presets::reference(Preset::PartialWave, levels).expect("bundled model");
    let grid = VelocityGrid::cartesian(gas.thermal_speed(), 3.5, points).expect("valid grid");
    Fixture { gas, amp, grid }
}

impl Fixture {
    pub fn tensor(&self) -> KernelTensor {
        KernelTensor::build(&self.gas, &self.amp, &self.grid, KernelQuadrature::default()).expect("tensor builds")
    }

    pub fn generator(&self) -> Generator {
        let t = self.tensor();
        let rates = RateTable::discrete(&t, &self.grid, &self.gas, &self.amp).expect("rates");
        build_me_generator(&t, &rates, &self.grid).expect("generator")
    }
}
