#![allow(dead_code)]

use std::sync::Arc;

use sstfill_core::{gen_dataset, Climatology, ClimatologyOptions, Dataset, Generator, GeneratorConfig, SynthConfig};

pub struct World {
    pub ds: Arc<Dataset>,
    pub clim: Arc<Climatology>,
}

impl World {
    pub fn new(cfg: SynthConfig) -> World {
        let ds = gen_dataset(&cfg).unwrap();
        let hold = ds.holdout_start(0.12);
        let clim = Climatology::build(
            &ds,
            &ClimatologyOptions {
                days: Some(0..hold),
                ..Default::default()
            },
        )
        .unwrap();
        World {
            ds: Arc::new(ds),
            clim: Arc::new(clim),
        }
    }

    pub fn small() -> World {
        World::new(SynthConfig {
            h: 16,
            w: 16,
            n_years: 2,
            coast_fraction: 0.2,
            ..Default::default()
        })
    }

    pub fn generator(&self, cfg: GeneratorConfig) -> Generator {
        Generator::new(self.ds.clone(), self.clim.clone(), cfg).unwrap()
    }

    pub fn testing(&self, seed: u64, s: usize) -> Generator {
        self.generator(GeneratorConfig {
            s_days: s,
            ..GeneratorConfig::testing(seed)
        })
    }
}
