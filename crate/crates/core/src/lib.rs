//! Gridded SST fields, climatologies, statistics, synthetic data and the
//! occlusion sample generator.

pub mod blur;
pub mod climatology;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod maskgen;
pub mod sgr;
pub mod stats;
pub mod synth;

pub use climatology::{Climatology, ClimatologyOptions};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use grid::{Grid, MaskedField, Quadrant, MISSING};
pub use maskgen::{Generator, GeneratorConfig, Mode, Normalizer, Sample};
pub use synth::{gen_dataset, SynthConfig};
