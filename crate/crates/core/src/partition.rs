//! Sampling and probing of the region partition: latent region samples,
//! dichotomic neighbor search, Monte-Carlo region counts, 2-D rasters and
//! decoder surface meshes.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::cpa::{decoder_affine, default_hessian_sigma, RegionCode};
use crate::error::{shape_err, Error, Result};
use crate::network::AeModel;
use crate::numerics::{norm2, sub, Matrix, Rng};

pub const DEFAULT_MAX_ITERS: usize = 50;
pub const DEFAULT_GAP_TOL: f64 = 1e-7;
pub const DEFAULT_RADIUS_CAP: f64 = 1e3;

/// Distribution of latent starting points.
#[derive(Clone, Copy, Debug)]
pub enum LatentLaw<'a> {
    /// Standard gaussian in `R^h`.
    Gaussian,
    /// Uniform pick among the given latent vectors.
    DataEmbedding(&'a [Vec<f64>]),
    /// Fair coin between the two laws above. Falls back to gaussian when the
    /// embedding set is empty.
    Mixture(&'a [Vec<f64>]),
}

impl LatentLaw<'_> {
    pub fn draw(&self, h: usize, rng: &mut Rng) -> Vec<f64> {
        let pick = |pool: &[Vec<f64>], rng: &mut Rng| pool[rng.below(pool.len())].clone();
        match *self {
            LatentLaw::DataEmbedding(pool) if !pool.is_empty() => pick(pool, rng),
            LatentLaw::Mixture(pool) if !pool.is_empty() => {
                if rng.uniform() < 0.5 {
                    pick(pool, rng)
                } else {
                    rng.gaussian_vec(h, 1.0)
                }
            }
            _ => rng.gaussian_vec(h, 1.0),
        }
    }
}

/// A latent point with its decoder region and tangent `A^D_ω`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSample {
    pub z: Vec<f64>,
    pub code: RegionCode,
    pub tangent: Matrix,
}

impl RegionSample {
    pub fn at(model: &AeModel, z: Vec<f64>) -> Result<Self> {
        let (_, code) = model.decode(&z)?;
        let tangent = decoder_affine(model, &code)?.slope;
        Ok(Self { z, code, tangent })
    }
}

pub fn sample_region(model: &AeModel, rng: &mut Rng, law: LatentLaw<'_>) -> Result<RegionSample> {
    let z = law.draw(model.bottleneck(), rng);
    RegionSample::at(model, z)
}

/// Two latent points on opposite sides of a decoder region boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborPair {
    pub a: RegionSample,
    pub b: RegionSample,
    pub gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborSearch {
    /// Budget for each phase (growth and bisection).
    pub max_iters: usize,
    pub gap_tol: f64,
    /// First offset length; `None` uses `0.01‖z‖ + 1e-3`.
    pub initial_step: Option<f64>,
}

impl Default for NeighborSearch {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            gap_tol: DEFAULT_GAP_TOL,
            initial_step: None,
        }
    }
}

fn along(z: &[f64], u: &[f64], t: f64) -> Vec<f64> {
    z.iter().zip(u).map(|(a, b)| a + t * b).collect()
}

/// Dichotomic search from a sampled start along a random direction: the
/// offset doubles until the decoder code changes, then `[lo, hi]` is bisected
/// keeping `code(lo) ≠ code(hi)`. Returns `None` when either phase runs out
/// of budget.
pub fn sample_neighbor_pair(
    model: &AeModel,
    rng: &mut Rng,
    law: LatentLaw<'_>,
    search: &NeighborSearch,
) -> Result<Option<NeighborPair>> {
    if search.max_iters == 0 || !(search.gap_tol > 0.0) {
        return Err(Error::Contract(
            "neighbor search needs max_iters >= 1 and gap_tol > 0".into(),
        ));
    }
    let h = model.bottleneck();
    let z = law.draw(h, rng);
    let u = rng.unit_vector(h);
    let code_of = |t: f64| -> Result<RegionCode> { Ok(model.decode(&along(&z, &u, t))?.1) };
    let start = code_of(0.0)?;
    let mut hi = search.initial_step.unwrap_or_else(|| default_hessian_sigma(&z));
    let mut hi_code = code_of(hi)?;
    let mut grown = 0;
    while hi_code == start {
        grown += 1;
        if grown >= search.max_iters {
            return Ok(None);
        }
        hi *= 2.0;
        hi_code = code_of(hi)?;
    }
    let mut lo = 0.0;
    let lo_code = start;
    let mut iters = 0;
    while hi - lo > search.gap_tol {
        if iters == search.max_iters {
            return Ok(None);
        }
        iters += 1;
        let mid = 0.5 * (lo + hi);
        let mid_code = code_of(mid)?;
        if mid_code == lo_code {
            lo = mid;
        } else {
            hi = mid;
            hi_code = mid_code;
        }
    }
    let a = RegionSample::at(model, along(&z, &u, lo))?;
    let b = RegionSample::at(model, along(&z, &u, hi))?;
    debug_assert_eq!(a.code, lo_code);
    debug_assert_eq!(b.code, hi_code);
    let gap = norm2(&sub(&a.z, &b.z));
    Ok(Some(NeighborPair { a, b, gap }))
}

/// Distinct full-code counts in nested input-space balls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallCountReport {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub counts: Vec<usize>,
    pub data_counts: Vec<usize>,
    /// Fresh uniform probes drawn per radius.
    pub probe_budget: usize,
}

/// For each radius, `probes` fresh uniform points in `B(center, r)` are
/// coded; the count for `r` covers every probe drawn for radii `≤ r`, so
/// counts are nondecreasing.
pub fn count_regions_in_ball(
    model: &AeModel,
    center: &[f64],
    radii: &[f64],
    probes: usize,
    data: &[Vec<f64>],
    rng: &mut Rng,
) -> Result<BallCountReport> {
    if probes == 0 {
        return Err(Error::Contract("count_regions_in_ball needs probes >= 1".into()));
    }
    if radii.windows(2).any(|w| !(w[0] <= w[1])) || radii.iter().any(|&r| !(r >= 0.0)) {
        return Err(Error::Contract("radii must be nonnegative and ascending".into()));
    }
    let d = center.len();
    if d != model.input_dim() {
        return Err(shape_err("ball center dimension mismatch"));
    }
    let mut seen: HashSet<RegionCode> = HashSet::new();
    let mut counts = Vec::with_capacity(radii.len());
    let mut data_counts = Vec::with_capacity(radii.len());
    for &r in radii {
        let points: Vec<Vec<f64>> = (0..probes).map(|_| along(center, &rng.in_unit_ball(d), r)).collect();
        seen.extend(codes_of(model, &points)?);
        counts.push(seen.len());
        data_counts.push(data.iter().filter(|x| norm2(&sub(x, center)) <= r).count());
    }
    Ok(BallCountReport {
        center: center.to_vec(),
        radii: radii.to_vec(),
        counts,
        data_counts,
        probe_budget: probes,
    })
}

#[cfg(feature = "parallel")]
fn codes_of(model: &AeModel, points: &[Vec<f64>]) -> Result<Vec<RegionCode>> {
    use rayon::prelude::*;
    points.par_iter().map(|x| Ok(model.forward(x, true)?.code)).collect()
}

#[cfg(not(feature = "parallel"))]
fn codes_of(model: &AeModel, points: &[Vec<f64>]) -> Result<Vec<RegionCode>> {
    points.iter().map(|x| Ok(model.forward(x, true)?.code)).collect()
}

/// Assigns small integer ids to codes in first-appearance order.
#[derive(Default)]
struct CodeBook {
    ids: HashMap<RegionCode, usize>,
    codes: Vec<RegionCode>,
}

impl CodeBook {
    fn id(&mut self, code: RegionCode) -> usize {
        if let Some(&id) = self.ids.get(&code) {
            return id;
        }
        let id = self.codes.len();
        self.ids.insert(code.clone(), id);
        self.codes.push(code);
        id
    }
}

/// Region ids over a pixel grid of a 2-D input domain. Row `j` holds pixel
/// centers with `y = y_lo + (j + ½)·Δy`; ids follow row-major first
/// appearance.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionRaster {
    pub bounds: [(f64, f64); 2],
    pub resolution: (usize, usize),
    pub ids: Vec<Vec<usize>>,
    pub boundary: Vec<Vec<bool>>,
    /// Code of each id.
    pub legend: Vec<RegionCode>,
}

impl PartitionRaster {
    pub fn pixel_center(&self, i: usize, j: usize) -> [f64; 2] {
        let (nx, ny) = self.resolution;
        let [(x0, x1), (y0, y1)] = self.bounds;
        [
            x0 + (i as f64 + 0.5) * (x1 - x0) / nx as f64,
            y0 + (j as f64 + 0.5) * (y1 - y0) / ny as f64,
        ]
    }

    pub fn region_count(&self) -> usize {
        self.legend.len()
    }
}

pub fn rasterize_partition_2d(
    model: &AeModel,
    bounds: [(f64, f64); 2],
    resolution: (usize, usize),
) -> Result<PartitionRaster> {
    if model.input_dim() != 2 {
        return Err(Error::Contract(format!(
            "partition raster needs d = 2, model has d = {}",
            model.input_dim()
        )));
    }
    let (nx, ny) = resolution;
    if nx == 0 || ny == 0 {
        return Err(Error::Contract("raster resolution must be positive".into()));
    }
    let mut raster = PartitionRaster {
        bounds,
        resolution,
        ids: Vec::with_capacity(ny),
        boundary: vec![vec![false; nx]; ny],
        legend: Vec::new(),
    };
    let mut book = CodeBook::default();
    for j in 0..ny {
        let row: Vec<Vec<f64>> = (0..nx).map(|i| raster.pixel_center(i, j).to_vec()).collect();
        let ids = codes_of(model, &row)?.into_iter().map(|c| book.id(c)).collect();
        raster.ids.push(ids);
    }
    let ids = &raster.ids;
    for j in 0..ny {
        for i in 0..nx {
            let id = ids[j][i];
            raster.boundary[j][i] = (i > 0 && ids[j][i - 1] != id)
                || (i + 1 < nx && ids[j][i + 1] != id)
                || (j > 0 && ids[j - 1][i] != id)
                || (j + 1 < ny && ids[j + 1][i] != id);
        }
    }
    raster.legend = book.codes;
    Ok(raster)
}

/// Decoder image of a latent grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderSurface {
    pub latents: Vec<Vec<f64>>,
    pub vertices: Vec<Vec<f64>>,
    pub region_ids: Vec<usize>,
    pub legend: Vec<RegionCode>,
}

/// Upper bound on surface grid size.
const MAX_SURFACE_VERTICES: usize = 1 << 22;

/// Maps a `resolution^h` grid of latent points, spanning the inclusive
/// `latent_bounds`, through the decoder. The first latent axis varies
/// slowest.
pub fn export_decoder_surface(
    model: &AeModel,
    latent_bounds: &[(f64, f64)],
    resolution: usize,
) -> Result<DecoderSurface> {
    let h = model.bottleneck();
    if latent_bounds.len() != h {
        return Err(shape_err(format!("{} latent bounds for h = {h}", latent_bounds.len())));
    }
    if resolution < 2 {
        return Err(Error::Contract("surface resolution must be >= 2".into()));
    }
    let total = (0..h).try_fold(1usize, |acc, _| acc.checked_mul(resolution));
    let total = match total {
        Some(t) if t <= MAX_SURFACE_VERTICES => t,
        _ => {
            return Err(Error::Contract(format!(
                "{resolution}^{h} surface vertices is too many"
            )))
        }
    };
    let mut latents = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut z = vec![0.0; h];
        for k in (0..h).rev() {
            let (lo, hi) = latent_bounds[k];
            z[k] = lo + (hi - lo) * (idx % resolution) as f64 / (resolution - 1) as f64;
            idx /= resolution;
        }
        latents.push(z);
    }
    let mut book = CodeBook::default();
    let mut vertices = Vec::with_capacity(total);
    let mut region_ids = Vec::with_capacity(total);
    for z in &latents {
        let (x, code) = model.decode(z)?;
        vertices.push(x);
        region_ids.push(book.id(code));
    }
    Ok(DecoderSurface {
        latents,
        vertices,
        region_ids,
        legend: book.codes,
    })
}

/// Sampled circumscribed-radius diagnostic for one decoder region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusEstimate {
    /// Largest boundary distance found, with unbounded directions counted
    /// at the cap.
    pub radius: f64,
    /// Largest distance among directions that hit a boundary before the cap.
    pub bounded_radius: Option<f64>,
    pub unbounded_directions: usize,
    pub cap: f64,
    pub distances: Vec<f64>,
}

/// Distance from `z` along unit `u` to the first code change, or `cap`.
fn boundary_distance(model: &AeModel, z: &[f64], u: &[f64], code: &RegionCode, cap: f64) -> Result<f64> {
    let same = |t: f64| -> Result<bool> { Ok(&model.decode(&along(z, u, t))?.1 == code) };
    let mut lo = 0.0;
    let mut hi = default_hessian_sigma(z).min(cap);
    while same(hi)? {
        if hi >= cap {
            return Ok(cap);
        }
        lo = hi;
        hi = (hi * 2.0).min(cap);
    }
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if same(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

pub fn estimate_region_radius(
    model: &AeModel,
    sample: &RegionSample,
    directions: usize,
    cap: f64,
    rng: &mut Rng,
) -> Result<RadiusEstimate> {
    if directions < 8 {
        return Err(Error::Contract("estimate_region_radius needs >= 8 directions".into()));
    }
    if !(cap > 0.0) {
        return Err(Error::Contract("radius cap must be positive".into()));
    }
    let h = sample.z.len();
    let mut distances = Vec::with_capacity(directions);
    for _ in 0..directions {
        let u = rng.unit_vector(h);
        distances.push(boundary_distance(model, &sample.z, &u, &sample.code, cap)?);
    }
    let unbounded_directions = distances.iter().filter(|&&t| t >= cap).count();
    let bounded_radius = distances.iter().copied().filter(|&t| t < cap).reduce(f64::max);
    Ok(RadiusEstimate {
        radius: distances.iter().copied().fold(0.0, f64::max),
        bounded_radius,
        unbounded_directions,
        cap,
        distances,
    })
}
