//! One-parameter matrix groups: exponential map, orbits and their
//! first-order approximation around the identity.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Matrix, Rng};

/// Taylor order used inside scaling-and-squaring.
const TAYLOR_ORDER: usize = 18;
/// Scaled argument must satisfy `‖θG/2^s‖₁ ≤ SCALE_TARGET`.
const SCALE_TARGET: f64 = 0.5;

/// `exp(theta·G)` by scaling and squaring with a degree-18 Taylor polynomial.
pub fn matrix_exp(g: &Matrix, theta: f64) -> Result<Matrix> {
    if !g.is_square() {
        return Err(shape_err(format!("exponential of {:?} matrix", g.shape())));
    }
    let a = g.scale(theta);
    if !a.is_finite() {
        return Err(Error::Numeric("non-finite generator entries".into()));
    }
    let norm = a.norm1();
    let squarings = if norm > SCALE_TARGET {
        (norm / SCALE_TARGET).log2().ceil() as i32
    } else {
        0
    };
    let a = a.scale(0.5f64.powi(squarings));
    let n = g.rows();
    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=TAYLOR_ORDER {
        term = term.matmul(&a)?.scale(1.0 / k as f64);
        result.axpy(1.0, &term)?;
    }
    for _ in 0..squarings {
        result = result.matmul(&result)?;
    }
    if !result.is_finite() {
        return Err(Error::Numeric(format!(
            "matrix exponential overflowed (‖θG‖₁ = {norm:e})"
        )));
    }
    Ok(result)
}

/// Infinitesimal generators `G_1 … G_h`, all `d × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSet {
    pub generators: Vec<Matrix>,
    pub learnable: bool,
}

impl GeneratorSet {
    pub fn new(generators: Vec<Matrix>, learnable: bool) -> Result<Self> {
        let Some(first) = generators.first() else {
            return Err(Error::Config("generator set needs h >= 1".into()));
        };
        let d = first.rows();
        if generators.iter().any(|g| g.shape() != (d, d)) {
            return Err(shape_err("generators must all be square of the same size"));
        }
        Ok(Self { generators, learnable })
    }

    /// Learnable set with i.i.d. `N(0, (1/d)²)` entries.
    pub fn random(h: usize, d: usize, rng: &mut Rng) -> Result<Self> {
        let std = 1.0 / d as f64;
        Self::new((0..h).map(|_| rng.gaussian_matrix(d, d, std)).collect(), true)
    }

    pub fn dim(&self) -> usize {
        self.generators[0].rows()
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    fn check(&self, v: &[f64], coeffs: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(shape_err(format!(
                "vector of length {} for {}-dimensional generators",
                v.len(),
                self.dim()
            )));
        }
        if coeffs.len() != self.len() {
            return Err(shape_err(format!(
                "{} coefficients for {} generators",
                coeffs.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// `Σ_k c_k G_k`.
    pub fn combination(&self, coeffs: &[f64]) -> Result<Matrix> {
        if coeffs.len() != self.len() {
            return Err(shape_err("coefficient count mismatch"));
        }
        let d = self.dim();
        let mut m = Matrix::zeros(d, d);
        for (g, &c) in self.generators.iter().zip(coeffs) {
            m.axpy(c, g)?;
        }
        Ok(m)
    }

    pub fn is_finite(&self) -> bool {
        self.generators.iter().all(Matrix::is_finite)
    }
}

/// `∏_k exp(θ_k G_k) x0`, applying `G_1` first and `G_h` last.
pub fn orbit_point(gs: &GeneratorSet, x0: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    gs.check(x0, theta)?;
    let mut x = x0.to_vec();
    for (g, &t) in gs.generators.iter().zip(theta) {
        x = matrix_exp(g, t)?.matvec(&x)?;
    }
    Ok(x)
}

/// `(I + Σ_k ε_k G_k) v`.
pub fn first_order_transform(gs: &GeneratorSet, eps: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    gs.check(v, eps)?;
    let mut out = v.to_vec();
    for (g, &e) in gs.generators.iter().zip(eps) {
        if e == 0.0 {
            continue;
        }
        for (o, gv) in out.iter_mut().zip(g.matvec(v)?) {
            *o += e * gv;
        }
    }
    Ok(out)
}

/// How group parameters of an orbit dataset are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSampling {
    /// `count` draws, coordinate `k` uniform in `ranges[k]`.
    Uniform { ranges: Vec<(f64, f64)>, count: usize },
    /// Evenly spaced `θ = lo + (hi − lo)·j/count`, `j = 0..count` (h = 1).
    Grid { lo: f64, hi: f64, count: usize },
    /// Caller-given parameter vectors.
    Explicit { thetas: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrbitSpec {
    pub x0: Vec<f64>,
    pub generators: GeneratorSet,
    pub sampling: ThetaSampling,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrbitDataset {
    /// One sample per row.
    pub samples: Matrix,
    pub thetas: Vec<Vec<f64>>,
}

impl OrbitDataset {
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.samples.rows()).map(|i| self.samples.row(i).to_vec()).collect()
    }
}

pub fn gen_orbit_dataset(spec: &OrbitSpec, rng: &mut Rng) -> Result<OrbitDataset> {
    if spec.x0.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("orbit of the zero vector".into()));
    }
    if !(spec.noise_std >= 0.0) {
        return Err(Error::Config("noise_std must be >= 0".into()));
    }
    let h = spec.generators.len();
    let thetas: Vec<Vec<f64>> = match &spec.sampling {
        ThetaSampling::Uniform { ranges, count } => {
            if ranges.len() != h {
                return Err(Error::Config(format!("{} theta ranges for h = {h}", ranges.len())));
            }
            (0..*count)
                .map(|_| ranges.iter().map(|&(lo, hi)| rng.uniform_range(lo, hi)).collect())
                .collect()
        }
        ThetaSampling::Grid { lo, hi, count } => {
            if h != 1 {
                return Err(Error::Config("grid sampling needs a single generator".into()));
            }
            (0..*count)
                .map(|j| vec![lo + (hi - lo) * j as f64 / *count as f64])
                .collect()
        }
        ThetaSampling::Explicit { thetas } => thetas.clone(),
    };
    let d = spec.x0.len();
    let mut samples = Matrix::zeros(thetas.len(), d);
    for (i, th) in thetas.iter().enumerate() {
        let x = orbit_point(&spec.generators, &spec.x0, th)?;
        for (j, v) in x.into_iter().enumerate() {
            samples[(i, j)] = if spec.noise_std > 0.0 {
                v + spec.noise_std * rng.gaussian()
            } else {
                v
            };
        }
    }
    Ok(OrbitDataset { samples, thetas })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedGenerator {
    Rotation2d,
    BlockRotations,
    Shear2d,
}

/// Fixed generator sets used as fixtures and for synthetic data.
pub fn make_named_generator(kind: NamedGenerator, d: usize) -> Result<GeneratorSet> {
    match kind {
        NamedGenerator::Rotation2d | NamedGenerator::Shear2d if d != 2 => {
            Err(Error::Config(format!("{kind:?} generator needs d = 2, got {d}")))
        }
        NamedGenerator::Rotation2d => GeneratorSet::new(vec![Matrix::from_rows(&[[0.0, -1.0], [1.0, 0.0]])], false),
        NamedGenerator::Shear2d => GeneratorSet::new(vec![Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]])], false),
        NamedGenerator::BlockRotations => {
            if d < 2 || !d.is_multiple_of(2) {
                return Err(Error::Config(format!("block rotations need even d >= 2, got {d}")));
            }
            let gens = (0..d / 2)
                .map(|b| {
                    let mut g = Matrix::zeros(d, d);
                    g[(2 * b, 2 * b + 1)] = -1.0;
                    g[(2 * b + 1, 2 * b)] = 1.0;
                    g
                })
                .collect();
            GeneratorSet::new(gens, false)
        }
    }
}
