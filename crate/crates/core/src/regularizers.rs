//! Lie-group orbit regularizers with closed-form group strengths, the order-k
//! orbit penalty for smooth curves, and the contractive and denoising
//! baselines.
//!
//! Group strengths `ε*` and activation masks enter the tape as constants, so
//! weight and generator gradients are taken with both frozen.

use serde::{Deserialize, Serialize};

use crate::cpa::{default_hessian_sigma, slope_on_tape, DEFAULT_HESSIAN_SAMPLES};
use crate::error::{shape_err, Error, Result};
use crate::liegroup::{first_order_transform, GeneratorSet};
use crate::network::{decode_on_tape, AeModel, ModelVars};
use crate::numerics::{cholesky_solve, dot, norm2, sub, Matrix, Rng, Tape, Var, DEFAULT_RIDGE};
use crate::partition::{sample_neighbor_pair, LatentLaw, NeighborSearch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    Lie1,
    Lie2,
    Hoc,
    Denoise,
    None,
}

impl RegKind {
    pub fn name(self) -> &'static str {
        match self {
            RegKind::Lie1 => "lie1",
            RegKind::Lie2 => "lie2",
            RegKind::Hoc => "hoc",
            RegKind::Denoise => "denoise",
            RegKind::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    pub kind: RegKind,
    #[serde(default)]
    pub weight: f64,
    /// Half-width of the latent box around `θ` from which `θ'` is drawn.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Perturbation scale; `None` uses `0.01‖·‖ + 1e-3` of the anchor point.
    #[serde(default)]
    pub hessian_sigma: Option<f64>,
    #[serde(default = "default_hessian_count")]
    pub hessian_count: usize,
    #[serde(default = "default_corruption")]
    pub corruption_std: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

fn default_rho() -> f64 {
    0.1
}
fn default_hessian_count() -> usize {
    DEFAULT_HESSIAN_SAMPLES
}
fn default_corruption() -> f64 {
    0.1
}
fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

impl RegConfig {
    pub fn new(kind: RegKind, weight: f64) -> Self {
        Self {
            kind,
            weight,
            rho: default_rho(),
            hessian_sigma: None,
            hessian_count: default_hessian_count(),
            corruption_std: default_corruption(),
            ridge: default_ridge(),
        }
    }

    pub fn none() -> Self {
        Self::new(RegKind::None, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return bad(format!("regularizer weight must be >= 0, got {}", self.weight));
        }
        if self.kind == RegKind::Lie1 && !(self.rho > 0.0) {
            return bad(format!("lie1 needs rho > 0, got {}", self.rho));
        }
        if let Some(s) = self.hessian_sigma {
            if !(s > 0.0) {
                return bad(format!("hessian_sigma must be > 0, got {s}"));
            }
        }
        if self.kind == RegKind::Hoc && self.hessian_count == 0 {
            return bad("hoc needs hessian_count >= 1".into());
        }
        if !(self.corruption_std >= 0.0) {
            return bad(format!("corruption_std must be >= 0, got {}", self.corruption_std));
        }
        if !(self.ridge >= 0.0) {
            return bad(format!("ridge must be >= 0, got {}", self.ridge));
        }
        Ok(())
    }
}

/// Least-squares group strengths for one pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSolve {
    pub epsilon: Vec<f64>,
    pub gram: Matrix,
    pub rhs: Vec<f64>,
    /// Norm of the transform mismatch at `ε*`.
    pub residual: f64,
    /// Ridge used by the successful factorization.
    pub ridge: f64,
}

/// `⟨A, B⟩_F`.
fn frob(a: &Matrix, b: &Matrix) -> f64 {
    dot(a.data(), b.data())
}

fn solve(gram: Matrix, rhs: Vec<f64>, ridge: f64) -> Result<(Vec<f64>, Matrix, Vec<f64>, f64)> {
    let sol = cholesky_solve(&gram, &rhs, ridge)?;
    Ok((sol.x, gram, rhs, sol.ridge))
}

/// `‖D(θ) − (I + Σ ε_k G_k) D(θ')‖₂`.
pub fn first_order_residual(gs: &GeneratorSet, eps: &[f64], d: &[f64], d_prime: &[f64]) -> Result<f64> {
    let t = first_order_transform(gs, eps, d_prime)?;
    if d.len() != t.len() {
        return Err(shape_err("output length mismatch"));
    }
    Ok(norm2(&sub(d, &t)))
}

/// `‖J_ω' − (I + Σ ε_k G_k) J_ω‖_F`.
pub fn second_order_residual(gs: &GeneratorSet, eps: &[f64], j: &Matrix, j_prime: &Matrix) -> Result<f64> {
    let m = gs.combination(eps)?;
    let moved = j.add(&m.matmul(j)?)?;
    Ok(j_prime.sub(&moved)?.frobenius_norm())
}

/// `ε*` minimizing `‖D(θ) − (I + Σ ε_k G_k) D(θ')‖₂²`.
pub fn solve_epsilon_first(gs: &GeneratorSet, d: &[f64], d_prime: &[f64], ridge: f64) -> Result<EpsilonSolve> {
    if d.len() != gs.dim() || d_prime.len() != gs.dim() {
        return Err(shape_err("decoder outputs do not match generator dimension"));
    }
    if d_prime.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("D(θ') = 0".into()));
    }
    let moved: Vec<Vec<f64>> = gs.generators.iter().map(|g| g.matvec(d_prime)).collect::<Result<_>>()?;
    let diff = sub(d, d_prime);
    let h = gs.len();
    let mut gram = Matrix::zeros(h, h);
    for j in 0..h {
        for k in j..h {
            let v = dot(&moved[j], &moved[k]);
            gram[(j, k)] = v;
            gram[(k, j)] = v;
        }
    }
    let rhs = moved.iter().map(|m| dot(&diff, m)).collect();
    let (epsilon, gram, rhs, ridge) = solve(gram, rhs, ridge)?;
    let residual = first_order_residual(gs, &epsilon, d, d_prime)?;
    Ok(EpsilonSolve {
        epsilon,
        gram,
        rhs,
        residual,
        ridge,
    })
}

/// `ε*` minimizing `‖J_ω' − (I + Σ ε_k G_k) J_ω‖_F²`.
pub fn solve_epsilon_second(gs: &GeneratorSet, j: &Matrix, j_prime: &Matrix, ridge: f64) -> Result<EpsilonSolve> {
    if j.shape() != j_prime.shape() || j.rows() != gs.dim() {
        return Err(shape_err(format!(
            "tangents {:?} / {:?} for {}-dimensional generators",
            j.shape(),
            j_prime.shape(),
            gs.dim()
        )));
    }
    if j.data().iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("A^D_ω = 0".into()));
    }
    let moved: Vec<Matrix> = gs.generators.iter().map(|g| g.matmul(j)).collect::<Result<_>>()?;
    let diff = j_prime.sub(j)?;
    let h = gs.len();
    let mut gram = Matrix::zeros(h, h);
    for a in 0..h {
        for b in a..h {
            let v = frob(&moved[a], &moved[b]);
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    let rhs = moved.iter().map(|m| frob(m, &diff)).collect();
    let (epsilon, gram, rhs, ridge) = solve(gram, rhs, ridge)?;
    let residual = second_order_residual(gs, &epsilon, j, j_prime)?;
    Ok(EpsilonSolve {
        epsilon,
        gram,
        rhs,
        residual,
        ridge,
    })
}

/// Model parameters and generators registered on one tape.
#[derive(Clone, Copy, Debug)]
pub struct TapeModel<'a> {
    pub model: &'a AeModel,
    pub vars: &'a ModelVars,
    /// One `d × d` leaf per generator.
    pub generators: &'a [Var],
}

/// A regularizer draw: its λ-weighted loss node and the pair's solve.
#[derive(Clone, Debug)]
pub struct RegTerm {
    pub loss: Var,
    pub solve: EpsilonSolve,
    /// Latent anchors of the draw (`θ, θ'` or `z_ω, z_ω'`).
    pub anchors: [Vec<f64>; 2],
}

/// `M + Σ ε_k G_k M` on the tape, `ε` constant.
fn transform_on_tape(tape: &mut Tape, generators: &[Var], eps: &[f64], m: Var) -> Result<Var> {
    let mut out = m;
    for (&g, &e) in generators.iter().zip(eps) {
        let gm = tape.matmul(g, m)?;
        let scaled = tape.scale(gm, e);
        out = tape.add(out, scaled)?;
    }
    Ok(out)
}

/// `λ‖D(θ) − (I + Σ ε_k G_k) D(θ')‖₂` for fixed `θ, θ', ε`.
pub fn first_order_term(
    tape: &mut Tape,
    tm: TapeModel<'_>,
    lambda: f64,
    theta: &[f64],
    theta_prime: &[f64],
    eps: &[f64],
) -> Result<Var> {
    let z = tape.constant(Matrix::column(theta));
    let zp = tape.constant(Matrix::column(theta_prime));
    let d = decode_on_tape(tape, tm.model, tm.vars, z)?;
    let dp = decode_on_tape(tape, tm.model, tm.vars, zp)?;
    let moved = transform_on_tape(tape, tm.generators, eps, dp)?;
    let diff = tape.sub(d, moved)?;
    let n = tape.norm(diff);
    Ok(tape.scale(n, lambda))
}

/// `λ‖J_ω' − (I + Σ ε_k G_k) J_ω‖_F` for fixed decoder regions and `ε`.
pub fn second_order_term(
    tape: &mut Tape,
    tm: TapeModel<'_>,
    lambda: f64,
    states: &[Vec<bool>],
    states_prime: &[Vec<bool>],
    eps: &[f64],
) -> Result<Var> {
    let j = slope_on_tape(tape, &tm.model.decoder, &tm.vars.decoder, states)?;
    let jp = slope_on_tape(tape, &tm.model.decoder, &tm.vars.decoder, states_prime)?;
    let moved = transform_on_tape(tape, tm.generators, eps, j)?;
    let diff = tape.sub(jp, moved)?;
    let n = tape.norm(diff);
    Ok(tape.scale(n, lambda))
}

/// One draw of the first-order regularizer. `θ` follows `law` and
/// `θ' = θ + U(−ρ, ρ)^h`. Returns `None` when `λ = 0` or `D(θ') = 0`.
pub fn reg_first_order(
    tape: &mut Tape,
    tm: TapeModel<'_>,
    gs: &GeneratorSet,
    cfg: &RegConfig,
    law: LatentLaw<'_>,
    rng: &mut Rng,
) -> Result<Option<RegTerm>> {
    if cfg.weight == 0.0 {
        return Ok(None);
    }
    let theta = law.draw(tm.model.bottleneck(), rng);
    let theta_prime: Vec<f64> = theta
        .iter()
        .map(|&t| t + rng.uniform_range(-cfg.rho, cfg.rho))
        .collect();
    let d = tm.model.decode(&theta)?.0;
    let dp = tm.model.decode(&theta_prime)?.0;
    let solve = match solve_epsilon_first(gs, &d, &dp, cfg.ridge) {
        Err(Error::Degenerate(_)) => return Ok(None),
        other => other?,
    };
    let loss = first_order_term(tape, tm, cfg.weight, &theta, &theta_prime, &solve.epsilon)?;
    Ok(Some(RegTerm {
        loss,
        solve,
        anchors: [theta, theta_prime],
    }))
}

/// One draw of the second-order regularizer over a neighboring region pair
/// found by dichotomic search. Returns `None` when `λ = 0`, no boundary is
/// found, or `A^D_ω = 0`.
pub fn reg_second_order(
    tape: &mut Tape,
    tm: TapeModel<'_>,
    gs: &GeneratorSet,
    cfg: &RegConfig,
    law: LatentLaw<'_>,
    rng: &mut Rng,
) -> Result<Option<RegTerm>> {
    if cfg.weight == 0.0 {
        return Ok(None);
    }
    let search = NeighborSearch {
        initial_step: cfg.hessian_sigma,
        ..NeighborSearch::default()
    };
    let Some(pair) = sample_neighbor_pair(tm.model, rng, law, &search)? else {
        return Ok(None);
    };
    let solve = match solve_epsilon_second(gs, &pair.a.tangent, &pair.b.tangent, cfg.ridge) {
        Err(Error::Degenerate(_)) => return Ok(None),
        other => other?,
    };
    let loss = second_order_term(
        tape,
        tm,
        cfg.weight,
        pair.a.code.states(),
        pair.b.code.states(),
        &solve.epsilon,
    )?;
    Ok(Some(RegTerm {
        loss,
        solve,
        anchors: [pair.a.z, pair.b.z],
    }))
}

/// Trapezoid estimate of `∫ ‖f^(k)(θ) − G f^(k−1)(θ)‖₂ dθ` over `grid`.
///
/// For `k = 1` the integrand is evaluated at cell midpoints with
/// `f' ≈ (f_{i+1} − f_i)/Δ` and `f ≈ (f_i + f_{i+1})/2`; for `k = 2` at
/// interior nodes with three-point stencils. Both are second-order accurate.
pub fn reg_order_k_interpolant<F>(f: F, g: &Matrix, k: usize, grid: &[f64]) -> Result<f64>
where
    F: Fn(f64) -> Vec<f64>,
{
    if !(k == 1 || k == 2) {
        return Err(Error::Contract(format!("order k must be 1 or 2, got {k}")));
    }
    if grid.len() < k + 2 {
        return Err(Error::Contract(format!(
            "order-{k} quadrature needs at least {} grid points, got {}",
            k + 2,
            grid.len()
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Contract("theta grid must be strictly increasing".into()));
    }
    let values: Vec<Vec<f64>> = grid.iter().map(|&t| f(t)).collect();
    if values.iter().any(|v| v.len() != g.rows()) || !g.is_square() {
        return Err(shape_err("curve dimension does not match the generator"));
    }
    let integrand = |top: &[f64], lower: &[f64]| -> Result<f64> { Ok(norm2(&sub(top, &g.matvec(lower)?))) };
    let mut nodes = Vec::new();
    let mut vals = Vec::new();
    if k == 1 {
        for i in 0..grid.len() - 1 {
            let dt = grid[i + 1] - grid[i];
            let deriv: Vec<f64> = sub(&values[i + 1], &values[i]).iter().map(|v| v / dt).collect();
            let mid: Vec<f64> = values[i]
                .iter()
                .zip(&values[i + 1])
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            nodes.push(0.5 * (grid[i] + grid[i + 1]));
            vals.push(integrand(&deriv, &mid)?);
        }
    } else {
        for i in 1..grid.len() - 1 {
            let (h0, h1) = (grid[i] - grid[i - 1], grid[i + 1] - grid[i]);
            let (a, b, c) = (&values[i - 1], &values[i], &values[i + 1]);
            let first: Vec<f64> = (0..b.len())
                .map(|q| {
                    (-h1 / (h0 * (h0 + h1))) * a[q] + ((h1 - h0) / (h0 * h1)) * b[q] + (h0 / (h1 * (h0 + h1))) * c[q]
                })
                .collect();
            let second: Vec<f64> = (0..b.len())
                .map(|q| 2.0 * (h1 * a[q] - (h0 + h1) * b[q] + h0 * c[q]) / (h0 * h1 * (h0 + h1)))
                .collect();
            nodes.push(grid[i]);
            vals.push(integrand(&second, &first)?);
        }
    }
    Ok(nodes
        .windows(2)
        .zip(vals.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum())
}

/// Values of the two contractive terms, before weighting.
#[derive(Clone, Debug, PartialEq)]
pub struct HocTerms {
    /// λ-weighted total on the tape.
    pub loss: Var,
    /// `‖A^E_ω‖_F`.
    pub slope_energy: f64,
    /// `Σ ‖A^E_ω − A^E_ω'‖_F` over the neighbors that changed region.
    pub curvature: f64,
    pub changed: usize,
}

/// `λ(‖A^E_ω‖_F + Σ_{x'} ‖A^E_ω − A^E_{ω(x')}‖_F)` with the neighbor points
/// `x'` given; neighbors in `x`'s own encoder region contribute zero.
pub fn hoc_penalty_at(
    tape: &mut Tape,
    tm: TapeModel<'_>,
    lambda: f64,
    x: &[f64],
    neighbors: &[Vec<f64>],
) -> Result<HocTerms> {
    let model = tm.model;
    let code = model.forward(x, true)?.code.encoder_part();
    let a = slope_on_tape(tape, &model.encoder, &tm.vars.encoder, code.states())?;
    let mut total = tape.norm(a);
    let slope_energy = tape.scalar(total);
    let mut curvature = 0.0;
    let mut changed = 0;
    for xp in neighbors {
        let code_p = model.forward(xp, true)?.code.encoder_part();
        if code_p == code {
            continue;
        }
        let ap = slope_on_tape(tape, &model.encoder, &tm.vars.encoder, code_p.states())?;
        let diff = tape.sub(a, ap)?;
        let n = tape.norm(diff);
        curvature += tape.scalar(n);
        changed += 1;
        total = tape.add(total, n)?;
    }
    Ok(HocTerms {
        loss: tape.scale(total, lambda),
        slope_energy,
        curvature,
        changed,
    })
}

/// Contractive penalty at `x` with `hessian_count` neighbors drawn as
/// `x + σ·N(0, I)`.
pub fn hoc_penalty(tape: &mut Tape, tm: TapeModel<'_>, x: &[f64], cfg: &RegConfig, rng: &mut Rng) -> Result<HocTerms> {
    let sigma = cfg.hessian_sigma.unwrap_or_else(|| default_hessian_sigma(x));
    let neighbors: Vec<Vec<f64>> = (0..cfg.hessian_count)
        .map(|_| x.iter().map(|&v| v + sigma * rng.gaussian()).collect())
        .collect();
    hoc_penalty_at(tape, tm, cfg.weight, x, &neighbors)
}

/// `x + std·N(0, I)`; `std = 0` returns `x` without consuming randomness.
pub fn corrupt(x: &[f64], std: f64, rng: &mut Rng) -> Vec<f64> {
    if std == 0.0 {
        return x.to_vec();
    }
    x.iter().map(|&v| v + std * rng.gaussian()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::{make_named_generator, matrix_exp, orbit_point, NamedGenerator};
    use crate::network::{Activation, Architecture, Layer, LayerSpec};
    use crate::numerics::{max_abs_diff, symmetric_eigenvalues};
    use std::f64::consts::PI;

    fn rotation() -> GeneratorSet {
        make_named_generator(NamedGenerator::Rotation2d, 2).unwrap()
    }

    /// Smallest of the 1-D objective over `ε ∈ [−1, 1]` in steps of 1e-6.
    fn grid_argmin(obj: impl Fn(f64) -> f64) -> f64 {
        let mut best = (f64::MAX, 0.0);
        for i in 0..=2_000_000 {
            let e = -1.0 + i as f64 * 1e-6;
            let v = obj(e);
            if v < best.0 {
                best = (v, e);
            }
        }
        best.1
    }

    fn random_model(widths: &[usize], bottleneck: usize, seed: u64) -> AeModel {
        let arch = Architecture::from_widths(widths, bottleneck, Activation::Relu).unwrap();
        let mut m = AeModel::init(&arch, seed).unwrap();
        let mut rng = Rng::new(seed ^ 0xabc);
        for l in m.layers_mut() {
            l.bias = rng.gaussian_vec(l.bias.len(), 0.3);
        }
        m
    }

    #[test]
    fn identical_pair_gives_zero() {
        let gs = rotation();
        let s = solve_epsilon_first(&gs, &[0.3, 0.4], &[0.3, 0.4], 0.0).unwrap();
        assert_eq!(s.epsilon, vec![0.0]);
        assert_eq!(s.residual, 0.0);
        let j = Matrix::from_rows(&[[1.0], [2.0]]);
        assert_eq!(
            solve_epsilon_second(&gs, &j, &j, DEFAULT_RIDGE).unwrap().epsilon,
            vec![0.0]
        );
    }

    #[test]
    fn first_order_rotation_matches_grid_search() {
        let gs = rotation();
        let d = [0.1f64.cos(), 0.1f64.sin()];
        let dp = [1.0, 0.0];
        let s = solve_epsilon_first(&gs, &d, &dp, 0.0).unwrap();
        assert!((s.epsilon[0] - 0.1f64.sin()).abs() <= 1e-12);
        let grid = grid_argmin(|e| first_order_residual(&gs, &[e], &d, &dp).unwrap());
        assert!((s.epsilon[0] - grid).abs() <= 1e-6);
    }

    #[test]
    fn second_order_h1_matches_grid_search() {
        let mut rng = Rng::new(40);
        let gs = GeneratorSet::random(1, 3, &mut rng).unwrap();
        let j = rng.gaussian_matrix(3, 2, 1.0);
        let jp = j.add(&rng.gaussian_matrix(3, 2, 0.05)).unwrap();
        let s = solve_epsilon_second(&gs, &j, &jp, 0.0).unwrap();
        let ga = gs.generators[0].matmul(&j).unwrap();
        let closed = frob(&ga, &jp.sub(&j).unwrap()) / frob(&ga, &ga);
        assert!((s.epsilon[0] - closed).abs() <= 1e-12);
        let grid = grid_argmin(|e| second_order_residual(&gs, &[e], &j, &jp).unwrap());
        assert!((s.epsilon[0] - grid).abs() <= 1e-6);
    }

    #[test]
    fn solutions_are_locally_optimal() {
        let mut rng = Rng::new(41);
        for h in 1..=3 {
            let gs = GeneratorSet::random(h, 4, &mut rng).unwrap();
            let d = rng.gaussian_vec(4, 1.0);
            let dp = rng.gaussian_vec(4, 1.0);
            let j = rng.gaussian_matrix(4, 2, 1.0);
            let jp = rng.gaussian_matrix(4, 2, 1.0);
            let s1 = solve_epsilon_first(&gs, &d, &dp, DEFAULT_RIDGE).unwrap();
            let s2 = solve_epsilon_second(&gs, &j, &jp, DEFAULT_RIDGE).unwrap();
            for _ in 0..100 {
                let delta: Vec<f64> = rng.unit_vector(h).iter().map(|v| v * 1e-3).collect();
                let e1: Vec<f64> = s1.epsilon.iter().zip(&delta).map(|(a, b)| a + b).collect();
                let e2: Vec<f64> = s2.epsilon.iter().zip(&delta).map(|(a, b)| a + b).collect();
                assert!(s1.residual <= first_order_residual(&gs, &e1, &d, &dp).unwrap());
                assert!(s2.residual <= second_order_residual(&gs, &e2, &j, &jp).unwrap());
            }
            for gram in [&s1.gram, &s2.gram] {
                assert_eq!(*gram, gram.transpose());
                assert!(symmetric_eigenvalues(gram).unwrap()[0] >= -1e-10);
            }
        }
    }

    #[test]
    fn recovers_constructed_transform() {
        let gs = make_named_generator(NamedGenerator::BlockRotations, 4).unwrap();
        let mut rng = Rng::new(42);
        let j = rng.gaussian_matrix(4, 3, 1.0);
        let eps = [1e-3, -2e-3];
        let jp = j.add(&gs.combination(&eps).unwrap().matmul(&j).unwrap()).unwrap();
        let s = solve_epsilon_second(&gs, &j, &jp, DEFAULT_RIDGE).unwrap();
        assert!(max_abs_diff(&s.epsilon, &eps) <= 1e-6);
        assert!(s.residual <= 1e-10);
    }

    #[test]
    fn degenerate_inputs() {
        let gs = rotation();
        assert!(matches!(
            solve_epsilon_first(&gs, &[1.0, 0.0], &[0.0, 0.0], 1e-8),
            Err(Error::Degenerate(_))
        ));
        let z = Matrix::zeros(2, 1);
        assert!(matches!(
            solve_epsilon_second(&gs, &z, &z, 1e-8),
            Err(Error::Degenerate(_))
        ));
        assert!(solve_epsilon_first(&gs, &[1.0], &[1.0], 1e-8).is_err());
    }

    /// Affine decoder `D(z) = x0 + z·G x0`, the tangent line of the rotation
    /// orbit through `x0`.
    fn tangent_line_model(x0: [f64; 2]) -> AeModel {
        let enc = Layer {
            spec: LayerSpec::new(2, 1, Activation::Linear),
            weight: Matrix::from_rows(&[[1.0, 0.0]]),
            bias: vec![0.0],
        };
        let dec = Layer {
            spec: LayerSpec::new(1, 2, Activation::Linear),
            weight: Matrix::from_rows(&[[-x0[1]], [x0[0]]]),
            bias: x0.to_vec(),
        };
        AeModel::from_layers(vec![enc], vec![dec]).unwrap()
    }

    #[test]
    fn first_order_loss_is_small_near_an_orbit() {
        let gs = rotation();
        let model = tangent_line_model([1.0, 0.0]);
        let mut rng = Rng::new(43);
        for rho in [0.1, 0.05, 0.025] {
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let g = [tape.leaf(gs.generators[0].clone())];
            let tm = TapeModel {
                model: &model,
                vars: &vars,
                generators: &g,
            };
            let mut cfg = RegConfig::new(RegKind::Lie1, 1.0);
            cfg.rho = rho;
            let pool = vec![vec![0.0]];
            let term = reg_first_order(&mut tape, tm, &gs, &cfg, LatentLaw::DataEmbedding(&pool), &mut rng)
                .unwrap()
                .unwrap();
            assert!(tape.scalar(term.loss) <= rho * rho, "{rho}: {}", tape.scalar(term.loss));
        }
    }

    #[test]
    fn first_order_gradient_matches_finite_differences() {
        let model = random_model(&[3, 8, 2, 8, 3], 2, 44);
        let mut rng = Rng::new(45);
        let gs = GeneratorSet::random(2, 3, &mut rng).unwrap();
        let theta = vec![0.4, -0.3];
        let theta_p = vec![0.45, -0.28];
        let d = model.decode(&theta).unwrap().0;
        let dp = model.decode(&theta_p).unwrap().0;
        let s = solve_epsilon_first(&gs, &d, &dp, DEFAULT_RIDGE).unwrap();
        let mut tape = Tape::new();
        let vars = model.register(&mut tape);
        let g: Vec<Var> = gs.generators.iter().map(|m| tape.leaf(m.clone())).collect();
        let tm = TapeModel {
            model: &model,
            vars: &vars,
            generators: &g,
        };
        let loss = first_order_term(&mut tape, tm, 2.0, &theta, &theta_p, &s.epsilon).unwrap();
        let grads = tape.backward(loss).unwrap();
        let value = |m: &AeModel, gs: &GeneratorSet| {
            let d = m.decode(&theta).unwrap().0;
            let dp = m.decode(&theta_p).unwrap().0;
            2.0 * first_order_residual(gs, &s.epsilon, &d, &dp).unwrap()
        };
        assert!((tape.scalar(loss) - value(&model, &gs)).abs() <= 1e-12);
        let step = 1e-6;
        let gw = grads.get(vars.decoder[0].weight);
        for (r, c) in [(0, 0), (3, 1), (7, 0)] {
            let mut plus = model.clone();
            plus.decoder[0].weight.data_mut()[r * 2 + c] += step;
            let mut minus = model.clone();
            minus.decoder[0].weight.data_mut()[r * 2 + c] -= step;
            let fd = (value(&plus, &gs) - value(&minus, &gs)) / (2.0 * step);
            assert!((fd - gw[(r, c)]).abs() <= 1e-5, "{fd} vs {}", gw[(r, c)]);
        }
        let gg = grads.get(g[1]);
        for (r, c) in [(0, 2), (1, 1)] {
            let bump = |sign: f64| {
                let mut gens = gs.clone();
                gens.generators[1].data_mut()[r * 3 + c] += sign * step;
                value(&model, &gens)
            };
            let fd = (bump(1.0) - bump(-1.0)) / (2.0 * step);
            assert!((fd - gg[(r, c)]).abs() <= 1e-5);
        }
    }

    #[test]
    fn zero_weight_is_a_no_op() {
        let model = random_model(&[3, 8, 2, 8, 3], 2, 46);
        let mut rng = Rng::new(47);
        let gs = GeneratorSet::random(1, 3, &mut rng).unwrap();
        let mut tape = Tape::new();
        let vars = model.register(&mut tape);
        let g = [tape.leaf(gs.generators[0].clone())];
        let tm = TapeModel {
            model: &model,
            vars: &vars,
            generators: &g,
        };
        let before = rng.clone();
        for kind in [RegKind::Lie1, RegKind::Lie2] {
            let cfg = RegConfig::new(kind, 0.0);
            let f = if kind == RegKind::Lie1 {
                reg_first_order
            } else {
                reg_second_order
            };
            assert!(f(&mut tape, tm, &gs, &cfg, LatentLaw::Gaussian, &mut rng)
                .unwrap()
                .is_none());
        }
        assert_eq!(rng.next_u64(), before.clone().next_u64());
    }

    #[test]
    fn second_order_on_linear_decoder_finds_nothing() {
        let model = tangent_line_model([1.0, 0.0]);
        let gs = rotation();
        let mut tape = Tape::new();
        let vars = model.register(&mut tape);
        let g = [tape.leaf(gs.generators[0].clone())];
        let tm = TapeModel {
            model: &model,
            vars: &vars,
            generators: &g,
        };
        let cfg = RegConfig::new(RegKind::Lie2, 1.0);
        let mut rng = Rng::new(48);
        assert!(
            reg_second_order(&mut tape, tm, &gs, &cfg, LatentLaw::Gaussian, &mut rng)
                .unwrap()
                .is_none()
        );
    }

    /// Decoder `z ↦ W₂ relu(W₁ z + b₁)` with `W₁ = [1, 1]ᵀ`, `b₁ = (0, −1)`:
    /// slope `W₂ e₁` on `(0, 1)` and `W₂ (e₁ + e₂)` beyond 1. Choosing
    /// `W₂ e₂ = ε G W₂ e₁` makes the tangents across `z = 1` an exact
    /// first-order transform.
    fn two_region_decoder(eps: f64, g: &Matrix) -> AeModel {
        let a = vec![1.0, 0.5];
        let b = g.matvec(&a).unwrap().iter().map(|v| eps * v).collect::<Vec<_>>();
        let enc = Layer {
            spec: LayerSpec::new(2, 1, Activation::Linear),
            weight: Matrix::from_rows(&[[1.0, 0.0]]),
            bias: vec![0.0],
        };
        let hidden = Layer {
            spec: LayerSpec::new(1, 2, Activation::Relu),
            weight: Matrix::from_rows(&[[1.0], [1.0]]),
            bias: vec![0.0, -1.0],
        };
        let out = Layer {
            spec: LayerSpec::new(2, 2, Activation::Linear),
            weight: Matrix::from_columns(&[a, b]).unwrap(),
            bias: vec![0.0, 0.0],
        };
        AeModel::from_layers(vec![enc], vec![hidden, out]).unwrap()
    }

    #[test]
    fn second_order_vanishes_on_exact_fixture() {
        let gs = rotation();
        let model = two_region_decoder(0.03, &gs.generators[0]);
        let mut rng = Rng::new(49);
        let mut cfg = RegConfig::new(RegKind::Lie2, 1.0);
        cfg.ridge = 0.0;
        let pool = vec![vec![0.7]];
        let mut found = 0;
        for _ in 0..20 {
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let g = [tape.leaf(gs.generators[0].clone())];
            let tm = TapeModel {
                model: &model,
                vars: &vars,
                generators: &g,
            };
            let Some(term) =
                reg_second_order(&mut tape, tm, &gs, &cfg, LatentLaw::DataEmbedding(&pool), &mut rng).unwrap()
            else {
                continue;
            };
            if (term.anchors[0][0] - 1.0).abs() > 1e-6 {
                continue;
            }
            found += 1;
            assert!(tape.scalar(term.loss) <= 1e-10);
            assert!((term.solve.epsilon[0] - 0.03).abs() <= 1e-8);
        }
        assert!(found > 0);
    }

    #[test]
    fn stop_gradient_ignores_solve_sensitivity() {
        let model = random_model(&[3, 8, 2, 8, 3], 2, 50);
        let mut rng = Rng::new(51);
        let gs = GeneratorSet::random(1, 3, &mut rng).unwrap();
        let (theta, theta_p) = (vec![0.1, 0.2], vec![0.15, 0.1]);
        let grad_for = |eps: f64| {
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let g = [tape.leaf(gs.generators[0].clone())];
            let tm = TapeModel {
                model: &model,
                vars: &vars,
                generators: &g,
            };
            let loss = first_order_term(&mut tape, tm, 1.0, &theta, &theta_p, &[eps]).unwrap();
            let grads = tape.backward(loss).unwrap();
            (tape.scalar(loss), grads.get(vars.decoder[1].bias))
        };
        let (l1, g1) = grad_for(0.2);
        let (l2, g2) = grad_for(0.2);
        assert_eq!((l1, &g1), (l2, &g2));
        // D and D' share the output bias, so with ε frozen the bias gradient
        // is −(εG)ᵀ r / ‖r‖.
        let d = model.decode(&theta).unwrap().0;
        let dp = model.decode(&theta_p).unwrap().0;
        let t = first_order_transform(&gs, &[0.2], &dp).unwrap();
        let r = sub(&d, &t);
        let n = norm2(&r);
        let g = gs.generators[0].scale(0.2);
        let expected: Vec<f64> = (0..3)
            .map(|i| -(0..3).map(|k| g[(k, i)] * r[k]).sum::<f64>() / n)
            .collect();
        assert!(max_abs_diff(g1.data(), &expected) <= 1e-12);
    }

    #[test]
    fn order_k_on_exact_orbit() {
        let g = Matrix::from_rows(&[[0.0, -1.0], [1.0, 0.0]]);
        let x0 = [1.0, 0.5];
        let orbit = |t: f64| matrix_exp(&g, t).unwrap().matvec(&x0).unwrap();
        let coarse: Vec<f64> = (0..=32).map(|i| 2.0 * PI * i as f64 / 32.0).collect();
        let fine: Vec<f64> = (0..=64).map(|i| 2.0 * PI * i as f64 / 64.0).collect();
        let a = reg_order_k_interpolant(orbit, &g, 1, &coarse).unwrap();
        let b = reg_order_k_interpolant(orbit, &g, 1, &fine).unwrap();
        assert!(a < 0.05 && b < a / 3.0, "{a} {b}");

        let affine = |t: f64| vec![1.0 + t, 0.5 - 2.0 * t];
        assert!(reg_order_k_interpolant(affine, &g, 1, &coarse).unwrap() > 0.1);

        let v = [0.3, -0.7];
        let ginv_v = [v[1], -v[0]];
        let c = 2.5;
        let family = |t: f64| {
            let r = matrix_exp(&g, t).unwrap().matvec(&ginv_v).unwrap();
            vec![r[0] + c, r[1] + c]
        };
        let a2 = reg_order_k_interpolant(family, &g, 2, &coarse).unwrap();
        let b2 = reg_order_k_interpolant(family, &g, 2, &fine).unwrap();
        assert!(a2 < 0.05 && b2 < a2 / 3.0, "{a2} {b2}");
        assert!(reg_order_k_interpolant(family, &g, 1, &coarse).unwrap() > 1.0);
    }

    #[test]
    fn order_k_grid_contract() {
        let g = Matrix::identity(1);
        assert!(matches!(
            reg_order_k_interpolant(|t| vec![t], &g, 1, &[0.0, 1.0]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            reg_order_k_interpolant(|t| vec![t], &g, 2, &[0.0, 1.0, 2.0]),
            Err(Error::Contract(_))
        ));
        assert!(reg_order_k_interpolant(|t| vec![t], &g, 2, &[0.0, 1.0, 2.0, 3.0]).is_ok());
    }

    #[test]
    fn hoc_on_linear_encoder() {
        let model = tangent_line_model([1.0, 0.0]);
        let mut tape = Tape::new();
        let vars = model.register(&mut tape);
        let tm = TapeModel {
            model: &model,
            vars: &vars,
            generators: &[],
        };
        let mut cfg = RegConfig::new(RegKind::Hoc, 1.0);
        cfg.hessian_sigma = Some(0.5);
        let terms = hoc_penalty(&mut tape, tm, &[0.3, 0.2], &cfg, &mut Rng::new(52)).unwrap();
        assert_eq!(terms.curvature, 0.0);
        assert_eq!(terms.slope_energy, model.encoder[0].weight.frobenius_norm());
    }

    /// Single-layer encoder `relu(W¹ x + b)` with three units.
    fn hoc_fixture() -> AeModel {
        let enc = Layer {
            spec: LayerSpec::new(2, 3, Activation::Relu),
            weight: Matrix::from_rows(&[[1.0, 0.5], [0.3, -2.0], [-0.4, 1.5]]),
            bias: vec![2.0, 0.0, 2.0],
        };
        let dec = Layer {
            spec: LayerSpec::new(3, 2, Activation::Linear),
            weight: Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]),
            bias: vec![0.0, 0.0],
        };
        AeModel::from_layers(vec![enc], vec![dec]).unwrap()
    }

    #[test]
    fn hoc_matches_row_norm_fixture() {
        let model = hoc_fixture();
        let x = vec![0.0, 0.1];
        let xp = vec![0.0, -0.1];
        assert_eq!(
            model.forward(&x, true).unwrap().code.states()[0],
            vec![true, false, true]
        );
        assert_eq!(
            model.forward(&xp, true).unwrap().code.states()[0],
            vec![true, true, true]
        );
        let mut tape = Tape::new();
        let vars = model.register(&mut tape);
        let tm = TapeModel {
            model: &model,
            vars: &vars,
            generators: &[],
        };
        let terms = hoc_penalty_at(&mut tape, tm, 1.0, &x, &[xp, x.clone()]).unwrap();
        let row = norm2(model.encoder[0].weight.row(1));
        assert!((terms.curvature - row).abs() <= 1e-12);
        assert_eq!(terms.changed, 1);
        let masked = Matrix::from_rows(&[[1.0, 0.5], [0.0, 0.0], [-0.4, 1.5]]);
        assert!((terms.slope_energy - masked.frobenius_norm()).abs() <= 1e-12);
    }

    #[test]
    fn corruption_statistics() {
        let mut rng = Rng::new(53);
        let x = vec![0.5; 10];
        assert_eq!(corrupt(&x, 0.0, &mut rng), x);
        let mut sq = 0.0;
        let n = 100_000;
        for _ in 0..n / 10 {
            let y = corrupt(&x, 0.3, &mut rng);
            sq += sub(&y, &x).iter().map(|v| v * v).sum::<f64>();
        }
        let std = (sq / n as f64).sqrt();
        assert!((std - 0.3).abs() <= 0.003, "{std}");
        assert_eq!(corrupt(&x, 0.3, &mut Rng::new(1)), corrupt(&x, 0.3, &mut Rng::new(1)));
    }

    #[test]
    fn orbit_fixture_gives_near_zero_first_order_residual() {
        let gs = rotation();
        let x0 = [1.0, 0.0];
        let d = orbit_point(&gs, &x0, &[0.3 + 1e-3]).unwrap();
        let dp = orbit_point(&gs, &x0, &[0.3]).unwrap();
        let s = solve_epsilon_first(&gs, &d, &dp, 0.0).unwrap();
        assert!((s.epsilon[0] - 1e-3).abs() <= 1e-9);
        assert!(s.residual <= 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(RegConfig::new(RegKind::Lie1, -1.0).validate().is_err());
        let mut c = RegConfig::new(RegKind::Lie1, 1.0);
        c.rho = 0.0;
        assert!(c.validate().is_err());
        let parsed: RegConfig = serde_json::from_str(r#"{"kind":"lie2","weight":0.5}"#).unwrap();
        assert_eq!(parsed.kind, RegKind::Lie2);
        assert_eq!(parsed.rho, 0.1);
        assert!(serde_json::from_str::<RegConfig>(r#"{"kind":"lie3"}"#).is_err());
    }
}
