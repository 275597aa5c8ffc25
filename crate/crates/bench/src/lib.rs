//! Fixtures shared by the criterion benches under `benches/`.

use tom_core::dataset::{build_dataset, generate_dataset, Dataset, SampleSpec};
use tom_core::gridworld::generate_map;
use tom_core::neural::Tensor;
use tom_core::observer::BatchLabels;
use tom_core::planner::{PomcpConfig, Trajectory, DEFAULT_MAX_STEPS};
use tom_core::{GridMap, MapGenParams};

pub fn maps(n: usize) -> Vec<GridMap> {
    (0..n)
        .map(|i| generate_map(format!("bench-{i:03}"), 7 + i as u64, &MapGenParams::default()).expect("map"))
        .collect()
}

/// Trajectories and samples from `n` maps at the training budget.
pub fn data(n: usize) -> (Vec<GridMap>, Vec<Trajectory>, Dataset) {
    let maps = maps(n);
    let (trajectories, _) = generate_dataset(&maps, &PomcpConfig::default(), 1, DEFAULT_MAX_STEPS).expect("trajectories");
    let (ds, _) = build_dataset(&maps, &trajectories, &SampleSpec::default()).expect("samples");
    (maps, trajectories, ds)
}

/// A sparse pseudo-random NHWC batch.
pub fn input(n: usize, channels: usize) -> Tensor<f32> {
    let len = n * 11 * 11 * channels;
    Tensor::new(&[n, 11, 11, channels], (0..len).map(|i| f32::from(i * 7919 % 13 == 0)).collect()).expect("shape")
}

pub fn labels(n: usize) -> BatchLabels {
    BatchLabels {
        target: (0..n).map(|i| i * 17 % 121).collect(),
        action: (0..n).map(|i| i % 9).collect(),
        state: (0..n).map(|i| i * 5 % 121).collect(),
        belief: vec![1.0 / 121.0; n * 121],
    }
}
