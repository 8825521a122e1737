//! Per-region affine structure of an autoencoder.
//!
//! Every region `ω` of the input partition is addressed by the joint state of
//! all nonlinear units ([`RegionCode`]). Inside a region the encoder, the
//! decoder and their composition are affine, with slopes and offsets obtained
//! from products of layer weights and diagonal masks:
//!
//! ```text
//! A^E = W^L Q^{L-1} W^{L-1} … Q^1 W^1
//! B^E = b^L + Σ_i W^L Q^{L-1} … Q^i b^i
//! ```
//!
//! and `D∘E(x) = A^D A^E x + A^D B^E + B^D`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{AeModel, Layer, LayerVars};
use crate::numerics::{norm2, Matrix, Rng, Tape, Var};

/// Activation states of every nonlinear unit, layer by layer.
///
/// The first `encoder_len` entries belong to the encoder; the rest address a
/// region of the decoder's latent partition.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionCode {
    states: Vec<Vec<bool>>,
    encoder_len: usize,
}

impl RegionCode {
    pub fn new(states: Vec<Vec<bool>>, encoder_len: usize) -> Self {
        debug_assert!(encoder_len <= states.len());
        Self { states, encoder_len }
    }

    pub fn states(&self) -> &[Vec<bool>] {
        &self.states
    }

    /// Number of nonlinear layers covered.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn encoder_len(&self) -> usize {
        self.encoder_len
    }

    pub fn encoder_part(&self) -> RegionCode {
        RegionCode::new(self.states[..self.encoder_len].to_vec(), self.encoder_len)
    }

    pub fn decoder_part(&self) -> RegionCode {
        RegionCode::new(self.states[self.encoder_len..].to_vec(), 0)
    }

    /// One `0`/`1` string per layer.
    pub fn bitstrings(&self) -> Vec<String> {
        self.states
            .iter()
            .map(|l| l.iter().map(|&s| if s { '1' } else { '0' }).collect())
            .collect()
    }

    /// Number of units whose state differs. Codes of different shape are
    /// compared over their common prefix.
    pub fn hamming(&self, other: &RegionCode) -> usize {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y).count())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Encoder,
    Decoder,
    Composed,
}

/// `x ↦ slope·x + offset` on one region.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub slope: Matrix,
    pub offset: Vec<f64>,
    pub scope: Scope,
}

impl AffineMap {
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.slope.matvec(x)?;
        for (v, b) in y.iter_mut().zip(&self.offset) {
            *v += b;
        }
        Ok(y)
    }

    /// Composition `outer ∘ inner`.
    pub fn then(&self, outer: &AffineMap) -> Result<AffineMap> {
        let slope = outer.slope.matmul(&self.slope)?;
        let mut offset = outer.slope.matvec(&self.offset)?;
        for (o, b) in offset.iter_mut().zip(&outer.offset) {
            *o += b;
        }
        Ok(AffineMap {
            slope,
            offset,
            scope: Scope::Composed,
        })
    }
}

fn mask_of(layer: &Layer, states: &[bool]) -> Vec<f64> {
    let act = layer.spec.activation;
    states.iter().map(|&s| act.mask_value(s)).collect()
}

fn check_arity(layers: &[Layer], states: &[Vec<bool>]) -> Result<()> {
    let nonlinear: Vec<&Layer> = layers.iter().filter(|l| !l.spec.activation.is_linear()).collect();
    if nonlinear.len() != states.len() {
        return Err(Error::Contract(format!(
            "region code has {} layers, model part has {} nonlinear layers",
            states.len(),
            nonlinear.len()
        )));
    }
    for (l, s) in nonlinear.iter().zip(states) {
        if l.spec.out_dim != s.len() {
            return Err(Error::Contract(format!(
                "mask of width {} for a layer of width {}",
                s.len(),
                l.spec.out_dim
            )));
        }
    }
    Ok(())
}

/// Slope and offset of a run of layers on the region given by `states`.
fn layers_affine(layers: &[Layer], states: &[Vec<bool>], scope: Scope) -> Result<AffineMap> {
    check_arity(layers, states)?;
    let mut states = states.iter();
    let mut slope: Option<Matrix> = None;
    let mut offset: Vec<f64> = Vec::new();
    for layer in layers {
        let (mut a, mut b) = match slope.take() {
            None => (layer.weight.clone(), layer.bias.clone()),
            Some(prev) => {
                let mut b = layer.weight.matvec(&offset)?;
                for (v, bi) in b.iter_mut().zip(&layer.bias) {
                    *v += bi;
                }
                (layer.weight.matmul(&prev)?, b)
            }
        };
        if !layer.spec.activation.is_linear() {
            let q = mask_of(layer, states.next().expect("arity checked"));
            a = a.scale_rows(&q)?;
            b.iter_mut().zip(&q).for_each(|(v, m)| *v *= m);
        }
        slope = Some(a);
        offset = b;
    }
    Ok(AffineMap {
        slope: slope.expect("at least one layer"),
        offset,
        scope,
    })
}

pub fn region_code(model: &AeModel, x: &[f64]) -> Result<RegionCode> {
    Ok(model.forward(x, true)?.code)
}

/// Encoder slope `A^E` (h×d) and offset `B^E` for the region addressed by
/// the encoder prefix of `code`.
pub fn encoder_affine(model: &AeModel, code: &RegionCode) -> Result<AffineMap> {
    let states = &code.states()[..code.encoder_len()];
    layers_affine(&model.encoder, states, Scope::Encoder)
}

/// Decoder slope `A^D` (d×h) and offset `B^D`. Accepts either a full code or
/// a decoder-only code as returned by [`AeModel::decode`].
pub fn decoder_affine(model: &AeModel, code: &RegionCode) -> Result<AffineMap> {
    let states = &code.states()[code.encoder_len()..];
    layers_affine(&model.decoder, states, Scope::Decoder)
}

/// `A = A^D A^E`, `B = A^D B^E + B^D`.
pub fn composed_affine(model: &AeModel, code: &RegionCode) -> Result<AffineMap> {
    encoder_affine(model, code)?.then(&decoder_affine(model, code)?)
}

/// Output of the affine reconstruction together with its projection view:
/// `D∘E(x) = A^D μ_x + B^{E,D}` with `μ_x = A^E x + B^E`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub output: Vec<f64>,
    pub code: RegionCode,
    /// `μ_x`, the coordinates of `x` in the decoder basis.
    pub coordinates: Vec<f64>,
    /// `A^D`; its columns are the basis vectors `a^D_k`.
    pub basis: Matrix,
    /// `B^{E,D} = A^D B^E + B^D`.
    pub shift: Vec<f64>,
}

pub fn reconstruct_from_affine(model: &AeModel, x: &[f64]) -> Result<Reconstruction> {
    let code = region_code(model, x)?;
    let enc = encoder_affine(model, &code)?;
    let dec = decoder_affine(model, &code)?;
    let composed = enc.then(&dec)?;
    let output = composed.apply(x)?;
    let coordinates = enc.apply(x)?;
    Ok(Reconstruction {
        output,
        code,
        coordinates,
        basis: dec.slope,
        shift: composed.offset,
    })
}

/// Per-region Jacobian `A^D_ω A^E_ω`. On a boundary the tie-broken region's
/// Jacobian is returned.
pub fn ae_jacobian(model: &AeModel, x: &[f64]) -> Result<Matrix> {
    let code = region_code(model, x)?;
    Ok(composed_affine(model, &code)?.slope)
}

/// Decoder tangent `J_ω[D] = A^D_ω` at latent point `z`.
pub fn decoder_tangent(model: &AeModel, z: &[f64]) -> Result<Matrix> {
    let (_, code) = model.decode(z)?;
    Ok(decoder_affine(model, &code)?.slope)
}

/// Default perturbation scale for [`hessian_energy`].
pub fn default_hessian_sigma(z: &[f64]) -> f64 {
    0.01 * norm2(z) + 1e-3
}

pub const DEFAULT_HESSIAN_SAMPLES: usize = 4;

/// Stochastic estimate of `Σ_{ω'∈N(ω)} ‖J_ω[D] − J_ω'[D]‖_F`.
///
/// Draws `m` perturbations `z + sigma·N(0, I)`; draws that stay in the region
/// of `z` contribute zero and are not resampled.
pub fn hessian_energy(model: &AeModel, z: &[f64], sigma: f64, m: usize, rng: &mut Rng) -> Result<f64> {
    if !(sigma > 0.0) || m == 0 {
        return Err(Error::Contract(format!(
            "hessian_energy needs sigma > 0 and m >= 1 (got {sigma}, {m})"
        )));
    }
    let (_, code) = model.decode(z)?;
    let tangent = decoder_affine(model, &code)?.slope;
    let mut total = 0.0;
    for _ in 0..m {
        let zp: Vec<f64> = z.iter().map(|&v| v + sigma * rng.gaussian()).collect();
        let (_, code_p) = model.decode(&zp)?;
        if code_p != code {
            let tp = decoder_affine(model, &code_p)?.slope;
            total += tangent.sub(&tp)?.frobenius_norm();
        }
    }
    Ok(total)
}

/// `‖A^E_ω A^D_ω − I_h‖_F` for the zero-bias region of `x`. Entry `(k', k)`
/// of `A^E A^D` is `⟨a^E_k', a^D_k⟩`.
pub fn biorthogonality_residual(model: &AeModel, x: &[f64]) -> Result<f64> {
    let zb = model.zero_bias();
    let code = zb.forward(x, false)?.code;
    let ae = encoder_affine(&zb, &code)?.slope;
    let ad = decoder_affine(&zb, &code)?.slope;
    let prod = ae.matmul(&ad)?;
    Ok(prod.sub(&Matrix::identity(prod.rows()))?.frobenius_norm())
}

/// Which orthogonality condition holds for one `(k, k')` pair of a
/// single-layer ReLU encoder followed by a single-layer ReLU decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    pub k: usize,
    pub k_prime: usize,
    /// (i) `W¹_{k'}·x ≤ 0`.
    pub encoder_unit_inactive: bool,
    /// (ii) every output pre-activation is `≤ 0`.
    pub decoder_inactive: bool,
    /// (iii) every output pre-activation is `> 0` and `⟨W²_{·,k}, W¹_{k',·}⟩ = 0`.
    pub linear_decoder_orthogonal: bool,
    /// (iv) `Σ_i W²_{i,k} W¹_{k',i} 1{output i active} = 0`.
    pub masked_orthogonal: bool,
    /// `⟨a^D_k, a^E_k'⟩` computed from the region's affine parameters.
    pub inner_product: f64,
}

impl OrthogonalityReport {
    pub fn any(&self) -> bool {
        self.encoder_unit_inactive || self.decoder_inactive || self.linear_decoder_orthogonal || self.masked_orthogonal
    }
}

const COR1_TOL: f64 = 1e-10;

/// Evaluates the four weight/activation conditions for every `(k, k')`, in
/// zero-bias mode.
pub fn cor1_conditions(model: &AeModel, x: &[f64]) -> Result<Vec<OrthogonalityReport>> {
    use crate::network::Activation::Relu;
    let shape_ok = model.encoder.len() == 1
        && model.decoder.len() == 1
        && model.encoder[0].spec.activation == Relu
        && model.decoder[0].spec.activation == Relu;
    if !shape_ok {
        return Err(Error::Contract(
            "orthogonality conditions need one ReLU encoder layer and one ReLU decoder layer".into(),
        ));
    }
    let zb = model.zero_bias();
    let trace = zb.forward(x, false)?;
    let w1 = &zb.encoder[0].weight; // h × n
    let w2 = &zb.decoder[0].weight; // n × h
    let enc_pre = &trace.preactivations[0];
    let dec_pre = &trace.preactivations[1];
    let ae = encoder_affine(&zb, &trace.code)?.slope;
    let ad = decoder_affine(&zb, &trace.code)?.slope;
    let (n, h) = w2.shape();
    let mut out = Vec::with_capacity(h * h);
    for k in 0..h {
        for kp in 0..h {
            let plain: f64 = (0..n).map(|i| w2[(i, k)] * w1[(kp, i)]).sum();
            let masked: f64 = (0..n)
                .filter(|&i| dec_pre[i] > 0.0)
                .map(|i| w2[(i, k)] * w1[(kp, i)])
                .sum();
            let inner: f64 = (0..n).map(|i| ad[(i, k)] * ae[(kp, i)]).sum();
            out.push(OrthogonalityReport {
                k,
                k_prime: kp,
                encoder_unit_inactive: enc_pre[kp] <= 0.0,
                decoder_inactive: dec_pre.iter().all(|&p| p <= 0.0),
                linear_decoder_orthogonal: dec_pre.iter().all(|&p| p > 0.0) && plain.abs() <= COR1_TOL,
                masked_orthogonal: masked.abs() <= COR1_TOL,
                inner_product: inner,
            });
        }
    }
    Ok(out)
}

/// JSON record of one region's affine map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionDump {
    pub scope: Scope,
    pub code: Vec<String>,
    #[serde(rename = "A")]
    pub slope: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub offset: Vec<f64>,
}

impl RegionDump {
    pub fn new(code: &RegionCode, map: &AffineMap) -> Self {
        Self {
            scope: map.scope,
            code: code.bitstrings(),
            slope: (0..map.slope.rows()).map(|i| map.slope.row(i).to_vec()).collect(),
            offset: map.offset.clone(),
        }
    }
}

/// Slope of `layers` on a fixed region, built on the tape so gradients reach
/// the weights. Masks are constants.
pub fn slope_on_tape(tape: &mut Tape, layers: &[Layer], vars: &[LayerVars], states: &[Vec<bool>]) -> Result<Var> {
    check_arity(layers, states)?;
    let mut states = states.iter();
    let mut acc: Option<Var> = None;
    for (layer, v) in layers.iter().zip(vars) {
        let mut a = match acc {
            None => v.weight,
            Some(prev) => tape.matmul(v.weight, prev)?,
        };
        if !layer.spec.activation.is_linear() {
            let q = mask_of(layer, states.next().expect("arity checked"));
            a = tape.scale_rows(a, q)?;
        }
        acc = Some(a);
    }
    acc.ok_or_else(|| Error::Contract("no layers".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Architecture, LayerSpec};
    use crate::numerics::{finite_difference_jacobian, max_abs_diff};

    fn random_model(widths: &[usize], bottleneck: usize, seed: u64) -> AeModel {
        let arch = Architecture::from_widths(widths, bottleneck, Activation::Relu).unwrap();
        let mut m = AeModel::init(&arch, seed).unwrap();
        let mut rng = Rng::new(seed ^ 0xb1a5);
        for l in m.layers_mut() {
            l.bias = rng.gaussian_vec(l.bias.len(), 0.2);
        }
        m
    }

    #[test]
    fn single_linear_layer_affine_is_weights() {
        let layer = Layer {
            spec: LayerSpec::new(2, 2, Activation::Linear),
            weight: Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]),
            bias: vec![0.5, -0.5],
        };
        let map = layers_affine(std::slice::from_ref(&layer), &[], Scope::Encoder).unwrap();
        assert_eq!(map.slope, layer.weight);
        assert_eq!(map.offset, layer.bias);
    }

    #[test]
    fn two_layer_all_active() {
        let w1 = Matrix::from_rows(&[[1.0, 0.0], [0.5, 1.0], [0.0, 2.0]]);
        let w2 = Matrix::from_rows(&[[1.0, 1.0, 1.0]]);
        let layers = vec![
            Layer {
                spec: LayerSpec::new(2, 3, Activation::Relu),
                weight: w1.clone(),
                bias: vec![0.1, 0.2, 0.3],
            },
            Layer {
                spec: LayerSpec::new(3, 1, Activation::Linear),
                weight: w2.clone(),
                bias: vec![1.0],
            },
        ];
        let map = layers_affine(&layers, &[vec![true; 3]], Scope::Encoder).unwrap();
        assert_eq!(map.slope, w2.matmul(&w1).unwrap());
        assert!((map.offset[0] - (1.0 + 0.1 + 0.2 + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn arity_mismatch_is_contract_error() {
        let m = random_model(&[3, 5, 2, 5, 3], 2, 1);
        let bad = RegionCode::new(vec![vec![true; 4]], 1);
        assert!(matches!(encoder_affine(&m, &bad), Err(Error::Contract(_))));
        let bad = RegionCode::new(vec![], 0);
        assert!(matches!(decoder_affine(&m, &bad), Err(Error::Contract(_))));
    }

    #[test]
    fn encoder_affine_matches_encode() {
        let m = random_model(&[5, 9, 7, 3, 7, 9, 5], 3, 2);
        let mut rng = Rng::new(2);
        for _ in 0..50 {
            let x = rng.gaussian_vec(5, 1.0);
            let code = region_code(&m, &x).unwrap();
            let z = encoder_affine(&m, &code).unwrap().apply(&x).unwrap();
            assert!(max_abs_diff(&z, &m.encode(&x).unwrap()) <= 1e-10);
        }
    }

    #[test]
    fn reconstruction_matches_forward_and_rank_bound() {
        let m = random_model(&[6, 12, 3, 12, 6], 2, 3);
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let x = rng.gaussian_vec(6, 1.0);
            let f = m.forward(&x, true).unwrap().output;
            let r = reconstruct_from_affine(&m, &x).unwrap();
            assert!(max_abs_diff(&f, &r.output) <= 1e-10 * (1.0 + norm2(&f)));
            let via_basis = {
                let mut y = r.basis.matvec(&r.coordinates).unwrap();
                let dec = decoder_affine(&m, &r.code).unwrap();
                y.iter_mut().zip(&dec.offset).for_each(|(a, b)| *a += b);
                y
            };
            assert!(max_abs_diff(&f, &via_basis) <= 1e-10 * (1.0 + norm2(&f)));
            assert!(ae_jacobian(&m, &x).unwrap().rank(1e-10) <= 3);
        }
    }

    #[test]
    fn zero_bias_output_is_pure_slope() {
        let m = random_model(&[4, 8, 2, 8, 4], 2, 4).zero_bias();
        let x = [0.3, -0.1, 0.8, 0.2];
        let r = reconstruct_from_affine(&m, &x).unwrap();
        let code = region_code(&m, &x).unwrap();
        let ae = encoder_affine(&m, &code).unwrap().slope;
        let expect = r.basis.matvec(&ae.matvec(&x).unwrap()).unwrap();
        assert!(max_abs_diff(&r.output, &expect) <= 1e-14);
        assert!(r.shift.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_autoencoder_jacobian_is_weight_product() {
        let arch = Architecture::from_widths(&[4, 6, 2, 6, 4], 2, Activation::Linear).unwrap();
        let m = AeModel::init(&arch, 6).unwrap();
        let w = m.decoder[1]
            .weight
            .matmul(&m.decoder[0].weight)
            .unwrap()
            .matmul(&m.encoder[1].weight)
            .unwrap()
            .matmul(&m.encoder[0].weight)
            .unwrap();
        let j = ae_jacobian(&m, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(j.max_abs_diff(&w) <= 1e-14);
        let mut rng = Rng::new(0);
        assert_eq!(hessian_energy(&m, &[0.3, 0.1], 1.0, 16, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let m = random_model(&[4, 10, 2, 10, 4], 2, 7);
        let mut rng = Rng::new(7);
        let mut checked = 0;
        while checked < 20 {
            let x = rng.gaussian_vec(4, 1.0);
            let step = 1e-6;
            let code = region_code(&m, &x).unwrap();
            let interior = (0..4).all(|j| {
                [step, -step].iter().all(|&s| {
                    let mut p = x.clone();
                    p[j] += s;
                    region_code(&m, &p).unwrap() == code
                })
            });
            if !interior {
                continue;
            }
            let fd = finite_difference_jacobian(|p| m.reconstruct(p).unwrap(), &x, step);
            assert!(fd.max_abs_diff(&ae_jacobian(&m, &x).unwrap()) <= 1e-4);
            let z = m.encode(&x).unwrap();
            let fdz = finite_difference_jacobian(|p| m.decode(p).unwrap().0, &z, step);
            assert!(fdz.max_abs_diff(&decoder_tangent(&m, &z).unwrap()) <= 1e-4);
            checked += 1;
        }
    }

    #[test]
    fn rescaling_keeps_zero_bias_code() {
        let m = random_model(&[3, 8, 2, 8, 3], 2, 9).zero_bias();
        let mut rng = Rng::new(9);
        for _ in 0..30 {
            let x = rng.gaussian_vec(3, 1.0);
            let c = rng.uniform_range(0.01, 100.0);
            let xc: Vec<f64> = x.iter().map(|v| v * c).collect();
            assert_eq!(region_code(&m, &x).unwrap(), region_code(&m, &xc).unwrap());
        }
    }

    #[test]
    fn orthonormal_linear_pair_is_biorthogonal() {
        // rows of the encoder are orthonormal; decoder is its transpose
        let s = 1.0 / 2f64.sqrt();
        let enc = Matrix::from_rows(&[[s, s, 0.0], [0.0, 0.0, 1.0]]);
        let m = AeModel::from_layers(
            vec![Layer {
                spec: LayerSpec::new(3, 2, Activation::Linear),
                weight: enc.clone(),
                bias: vec![0.0; 2],
            }],
            vec![Layer {
                spec: LayerSpec::new(2, 3, Activation::Linear),
                weight: enc.transpose(),
                bias: vec![0.0; 3],
            }],
        )
        .unwrap();
        assert!(biorthogonality_residual(&m, &[1.0, 2.0, 3.0]).unwrap() <= 1e-15);
        let r = random_model(&[3, 6, 2, 6, 3], 2, 10);
        assert!(biorthogonality_residual(&r, &[1.0, 2.0, 3.0]).unwrap() > 1e-3);
    }

    fn two_layer(w1: Matrix, w2: Matrix) -> AeModel {
        let (h, n) = w1.shape();
        AeModel::from_layers(
            vec![Layer {
                spec: LayerSpec::new(n, h, Activation::Relu),
                weight: w1,
                bias: vec![0.0; h],
            }],
            vec![Layer {
                spec: LayerSpec::new(h, n, Activation::Relu),
                weight: w2,
                bias: vec![0.0; n],
            }],
        )
        .unwrap()
    }

    #[test]
    fn cor1_encoder_dead_cone() {
        let w1 = Matrix::from_rows(&[[1.0, 0.0], [-1.0, -1.0]]);
        let w2 = Matrix::from_rows(&[[1.0, 0.5], [0.5, 1.0]]);
        let rep = cor1_conditions(&two_layer(w1, w2), &[1.0, 1.0]).unwrap();
        // unit k'=1 has pre-activation -2
        for r in rep.iter().filter(|r| r.k_prime == 1) {
            assert!(r.encoder_unit_inactive);
            assert_eq!(r.inner_product, 0.0);
        }
    }

    #[test]
    fn cor1_orthogonal_weights_with_active_decoder() {
        // W² column 0 = (0,1), W¹ row 1 = (1,0): orthogonal
        let w1 = Matrix::from_rows(&[[1.0, 1.0], [1.0, 0.0]]);
        let w2 = Matrix::from_rows(&[[1.0, 1.0], [1.0, 0.5]]);
        let w2 = Matrix::from_rows(&[[0.0, w2[(0, 1)]], [1.0, w2[(1, 1)]]]);
        let rep = cor1_conditions(&two_layer(w1, w2), &[1.0, 2.0]).unwrap();
        let r = rep.iter().find(|r| r.k == 0 && r.k_prime == 1).unwrap();
        assert!(r.linear_decoder_orthogonal);
        assert!(r.inner_product.abs() <= 1e-15);
    }

    #[test]
    fn cor1_report_agrees_with_inner_products() {
        let mut rng = Rng::new(12);
        for _ in 0..50 {
            let w1 = rng.gaussian_matrix(2, 4, 1.0);
            let w2 = rng.gaussian_matrix(4, 2, 1.0);
            let m = two_layer(w1, w2);
            let x = rng.gaussian_vec(4, 1.0);
            for r in cor1_conditions(&m, &x).unwrap() {
                assert_eq!(r.any(), r.inner_product.abs() <= COR1_TOL, "{r:?}");
            }
        }
        let deep = random_model(&[3, 4, 2, 4, 3], 2, 1);
        assert!(matches!(cor1_conditions(&deep, &[0.0; 3]), Err(Error::Contract(_))));
    }

    #[test]
    fn hessian_energy_vanishes_for_tiny_sigma() {
        let m = random_model(&[3, 8, 2, 8, 3], 2, 13);
        let mut rng = Rng::new(13);
        let z = [0.37, -0.21];
        assert_eq!(hessian_energy(&m, &z, 1e-12, 8, &mut rng).unwrap(), 0.0);
        assert!(hessian_energy(&m, &z, 0.0, 8, &mut rng).is_err());
    }

    #[test]
    fn tape_slope_equals_affine_slope() {
        let m = random_model(&[4, 7, 3, 7, 4], 2, 14);
        let z = [0.2, -0.4, 0.9];
        let (_, code) = m.decode(&z).unwrap();
        let mut tape = Tape::new();
        let vars = m.register(&mut tape);
        let s = slope_on_tape(&mut tape, &m.decoder, &vars.decoder, code.states()).unwrap();
        assert!(tape.value(s).max_abs_diff(&decoder_affine(&m, &code).unwrap().slope) <= 1e-15);
    }

    #[test]
    fn region_dump_shape() {
        let m = random_model(&[3, 4, 2, 4, 3], 2, 15);
        let code = region_code(&m, &[1.0, 0.0, -1.0]).unwrap();
        let dump = RegionDump::new(&code, &composed_affine(&m, &code).unwrap());
        assert_eq!(dump.code.len(), 2);
        assert_eq!(dump.slope.len(), 3);
        assert_eq!(dump.code[0].len(), 4);
        let json = serde_json::to_string(&dump).unwrap();
        assert!(json.contains("\"A\"") && json.contains("\"composed\""));
    }
}
