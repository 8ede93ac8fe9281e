//! Shared fixtures for the benchmarks: a small trained-shape backbone, a
//! warm-started generator and synthetic windows.

use shiftkt_core::backbone::{Backbone, BackboneConfig};
use shiftkt_core::data::{make_windows, Window};
use shiftkt_core::eval::{synth_benchmark, ShiftProfile};
use shiftkt_core::generator::{Generator, GeneratorConfig};
use shiftkt_core::Result;

pub struct Fixture {
    pub backbone: Backbone,
    pub generator: Generator,
    pub windows: Vec<Window>,
}

/// `learners` synthetic learners with one window of capacity `k` each.
pub fn fixture(learners: usize, k: usize, hidden: usize) -> Result<Fixture> {
    let profile = ShiftProfile::default();
    let data = synth_benchmark(0, learners, k, &profile)?;
    let mut windows = Vec::with_capacity(learners);
    for s in &data.sequences {
        windows.extend(make_windows(s, k)?);
    }
    let mut backbone = Backbone::new(
        BackboneConfig {
            num_concepts: data.num_concepts,
            embed_dim: hidden / 2,
            hidden,
        },
        0,
    )?;
    backbone.trained = true;
    let generator = Generator::warm_start(GeneratorConfig::for_backbone(&backbone), &backbone, 0)?;
    Ok(Fixture {
        backbone,
        generator,
        windows,
    })
}
