//! Browser demo: input-space partitions of random autoencoders and a small
//! circle-orbit trainer with and without the first-order Lie regularizer.

use cpa_ae::liegroup::{
    gen_orbit_dataset, make_named_generator, GeneratorSet, NamedGenerator, OrbitSpec, ThetaSampling,
};
use cpa_ae::network::{Activation, AeModel, Architecture};
use cpa_ae::partition::rasterize_partition_2d;
use cpa_ae::regularizers::{RegConfig, RegKind};
use cpa_ae::trainer::{init_run, reconstruction_mse, train, Split, TrainConfig};
use wasm_bindgen::prelude::*;

fn js_err(e: cpa_ae::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Region ids of a `resolution²` raster over `[-extent, extent]²`, row-major
/// with `y` outer, and the boundary mask.
#[wasm_bindgen]
pub struct Raster {
    ids: Vec<u32>,
    boundary: Vec<u8>,
    regions: u32,
}

#[wasm_bindgen]
impl Raster {
    #[wasm_bindgen(getter)]
    pub fn ids(&self) -> Vec<u32> {
        self.ids.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn boundary(&self) -> Vec<u8> {
        self.boundary.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn regions(&self) -> u32 {
        self.regions
    }
}

pub fn raster_of(model: &AeModel, resolution: usize, extent: f64) -> cpa_ae::Result<Raster> {
    let r = rasterize_partition_2d(model, [(-extent, extent); 2], (resolution, resolution))?;
    Ok(Raster {
        ids: r.ids.iter().flatten().map(|&i| i as u32).collect(),
        boundary: r.boundary.iter().flatten().map(|&b| u8::from(b)).collect(),
        regions: r.region_count() as u32,
    })
}

/// Partition of a randomly initialized `2-w-…-w-h-w-…-w-2` autoencoder with
/// `depth` hidden layers on each side.
#[wasm_bindgen]
pub fn random_partition(
    width: usize,
    depth: usize,
    latent: usize,
    seed: u32,
    resolution: usize,
    extent: f64,
) -> Result<Raster, JsError> {
    let mut widths = vec![2];
    widths.extend(std::iter::repeat_n(width, depth));
    widths.push(latent);
    widths.extend(std::iter::repeat_n(width, depth));
    widths.push(2);
    let arch = Architecture::from_widths(&widths, depth + 1, Activation::Relu).map_err(js_err)?;
    let model = AeModel::init(&arch, u64::from(seed)).map_err(js_err)?;
    raster_of(&model, resolution, extent).map_err(js_err)
}

/// `2-16-16-1-16-16-2` autoencoder trained on eight rotations of `(1, 0)`.
#[wasm_bindgen]
pub struct CircleTrainer {
    model: AeModel,
    gs: GeneratorSet,
    cfg: TrainConfig,
    split: Split,
    epochs: usize,
}

#[wasm_bindgen]
impl CircleTrainer {
    #[wasm_bindgen(constructor)]
    pub fn new(lambda: f64, seed: u32) -> Result<CircleTrainer, JsError> {
        Self::build(lambda, u64::from(seed)).map_err(js_err)
    }

    /// Trains `epochs` more epochs and returns the test MSE.
    pub fn step(&mut self, epochs: usize) -> Result<f64, JsError> {
        self.advance(epochs).map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// Decoder image of `n` latent points spanning the training codes,
    /// flattened as `x0, y0, x1, y1, …`.
    pub fn curve(&self, n: usize) -> Result<Vec<f64>, JsError> {
        self.decoder_curve(n).map_err(js_err)
    }

    /// Reconstructions of the training points, flattened.
    pub fn reconstructions(&self) -> Result<Vec<f64>, JsError> {
        let mut out = Vec::new();
        for x in &self.split.train {
            out.extend(self.model.reconstruct(x).map_err(js_err)?);
        }
        Ok(out)
    }

    /// Training points, flattened.
    pub fn train_points(&self) -> Vec<f64> {
        self.split.train.iter().flatten().copied().collect()
    }
}

impl CircleTrainer {
    pub fn build(lambda: f64, seed: u64) -> cpa_ae::Result<Self> {
        let tau = std::f64::consts::TAU;
        let gen = make_named_generator(NamedGenerator::Rotation2d, 2)?;
        let rows = |lo: f64, count: usize| -> cpa_ae::Result<Vec<Vec<f64>>> {
            let spec = OrbitSpec {
                x0: vec![1.0, 0.0],
                generators: gen.clone(),
                sampling: ThetaSampling::Grid {
                    lo,
                    hi: lo + tau,
                    count,
                },
                noise_std: 0.0,
            };
            Ok(gen_orbit_dataset(&spec, &mut cpa_ae::numerics::Rng::new(0))?.rows())
        };
        let split = Split {
            train: rows(0.0, 8)?,
            val: rows(tau / 32.0, 16)?,
            test: rows(tau / 512.0, 256)?,
        };
        let arch = Architecture::from_widths(&[2, 16, 16, 1, 16, 16, 2], 3, Activation::Relu)?;
        let reg = if lambda > 0.0 {
            RegConfig::new(RegKind::Lie1, lambda)
        } else {
            RegConfig::none()
        };
        let mut cfg = TrainConfig::new(1, 8, reg);
        cfg.lr = 2e-3;
        cfg.seed = seed;
        let (model, gs, cfg) = init_run(&arch, &cfg, 0)?;
        Ok(Self {
            model,
            gs,
            cfg,
            split,
            epochs: 0,
        })
    }

    pub fn advance(&mut self, epochs: usize) -> cpa_ae::Result<f64> {
        if epochs > 0 {
            let mut cfg = self.cfg.clone();
            cfg.epochs = epochs;
            cfg.seed = self.cfg.seed.wrapping_add(self.epochs as u64);
            train(&mut self.model, &mut self.gs, &self.split, &cfg)?;
            self.epochs += epochs;
        }
        reconstruction_mse(&self.model, &self.split.test)
    }

    pub fn decoder_curve(&self, n: usize) -> cpa_ae::Result<Vec<f64>> {
        let codes = self
            .split
            .train
            .iter()
            .map(|x| Ok(self.model.encode(x)?[0]))
            .collect::<cpa_ae::Result<Vec<f64>>>()?;
        let lo = codes.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = codes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.1 * (hi - lo).max(1e-3);
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            let t = lo - pad + (hi - lo + 2.0 * pad) * i as f64 / (n.max(2) - 1) as f64;
            out.extend(self.model.decode(&[t])?.0);
        }
        Ok(out)
    }
}
