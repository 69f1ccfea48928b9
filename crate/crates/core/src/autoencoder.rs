//! Tied-weight denoising autoencoder with a rectified-linear encoder and a
//! linear decoder.
//!
//! Batches are N×K matrices with one example per row. The encoder computes
//! `max(0, W·y + b)` (optionally with noisy rectification), the decoder
//! `Wᵀ·x + c`. The reconstruction cost compares the decoding of the
//! corrupted input's code against the clean input.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NpgaError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    /// J×K; the decoder uses the transpose.
    pub weight: DMatrix<f64>,
    pub enc_bias: DVector<f64>,
    pub dec_bias: DVector<f64>,
}

impl AutoencoderParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        AutoencoderParams {
            weight: DMatrix::zeros(hidden, input),
            enc_bias: DVector::zeros(hidden),
            dec_bias: DVector::zeros(input),
        }
    }

    /// Fan-in scaled uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(hidden: usize, input: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut weight = DMatrix::zeros(hidden, input);
        for j in 0..hidden {
            for k in 0..input {
                weight[(j, k)] = rng.random_range(-bound..=bound);
            }
        }
        AutoencoderParams {
            weight,
            enc_bias: DVector::zeros(hidden),
            dec_bias: DVector::zeros(input),
        }
    }

    pub fn hidden_units(&self) -> usize {
        self.weight.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn num_values(&self) -> usize {
        self.weight.len() + self.enc_bias.len() + self.dec_bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (j, k) = self.weight.shape();
        if self.enc_bias.len() != j {
            return Err(NpgaError::shape("encoder bias", j, self.enc_bias.len()));
        }
        if self.dec_bias.len() != k {
            return Err(NpgaError::shape("decoder bias", k, self.dec_bias.len()));
        }
        let finite = self
            .weight
            .iter()
            .chain(self.enc_bias.iter())
            .chain(self.dec_bias.iter());
        if finite.clone().any(|v| !v.is_finite()) {
            return Err(NpgaError::InvalidInput("autoencoder parameters must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    /// Plain rectification; used for evaluation and probing.
    Deterministic,
    /// Noisy rectified linear units: `max(0, a + ε)`, `ε ~ N(0, sigmoid(a))`.
    NoisyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionScheme {
    Gaussian,
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub scheme: CorruptionScheme,
    pub gaussian_std: f64,
    pub mask_fraction: f64,
}

impl CorruptionSpec {
    pub fn none() -> Self {
        Self::gaussian(0.0)
    }

    pub fn gaussian(std: f64) -> Self {
        CorruptionSpec {
            scheme: CorruptionScheme::Gaussian,
            gaussian_std: std,
            mask_fraction: 0.0,
        }
    }

    pub fn mask(fraction: f64) -> Self {
        CorruptionSpec {
            scheme: CorruptionScheme::Mask,
            gaussian_std: 0.0,
            mask_fraction: fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_std.is_finite() && self.gaussian_std >= 0.0) {
            return Err(NpgaError::InvalidSpec(format!(
                "corruption gaussian_std must be >= 0, got {}",
                self.gaussian_std
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            return Err(NpgaError::InvalidSpec(format!(
                "corruption mask_fraction must lie in [0, 1], got {}",
                self.mask_fraction
            )));
        }
        Ok(())
    }
}

/// Applies input corruption to every entry of `batch`.
pub fn corrupt<R: Rng + ?Sized>(batch: &DMatrix<f64>, spec: &CorruptionSpec, rng: &mut R) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let mut out = batch.clone();
    match spec.scheme {
        CorruptionScheme::Gaussian => {
            if spec.gaussian_std > 0.0 {
                for row in 0..out.nrows() {
                    for col in 0..out.ncols() {
                        let z: f64 = StandardNormal.sample(rng);
                        out[(row, col)] += spec.gaussian_std * z;
                    }
                }
            }
        }
        CorruptionScheme::Mask => {
            for row in 0..out.nrows() {
                for col in 0..out.ncols() {
                    if rng.random::<f64>() < spec.mask_fraction {
                        out[(row, col)] = 0.0;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// Pre-activations `Y·Wᵀ + 1·bᵀ` for an N×K batch.
pub fn pre_activation(batch: &DMatrix<f64>, params: &AutoencoderParams) -> Result<DMatrix<f64>> {
    if batch.ncols() != params.input_dim() {
        return Err(NpgaError::shape("encoder input", params.input_dim(), batch.ncols()));
    }
    let mut pre = batch * params.weight.transpose();
    for mut row in pre.row_iter_mut() {
        row += params.enc_bias.transpose();
    }
    Ok(pre)
}

/// Draws the noisy-rectifier perturbation for a matrix of pre-activations:
/// one `N(0, sigmoid(a))` sample per entry.
pub fn activation_noise<R: Rng + ?Sized>(pre: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let mut noise = DMatrix::zeros(pre.nrows(), pre.ncols());
    for row in 0..pre.nrows() {
        for col in 0..pre.ncols() {
            let z: f64 = StandardNormal.sample(rng);
            noise[(row, col)] = sigmoid(pre[(row, col)]).sqrt() * z;
        }
    }
    noise
}

pub fn encode<R: Rng + ?Sized>(
    y: &DVector<f64>,
    params: &AutoencoderParams,
    mode: EncodeMode,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if y.len() != params.input_dim() {
        return Err(NpgaError::shape("encode", params.input_dim(), y.len()));
    }
    let mut a = &params.weight * y + &params.enc_bias;
    if mode == EncodeMode::NoisyRelu {
        for v in a.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigmoid(*v).sqrt() * z;
        }
    }
    Ok(a.map(|v| v.max(0.0)))
}

/// Deterministic encoding of every row of an N×K batch.
pub fn encode_batch(batch: &DMatrix<f64>, params: &AutoencoderParams) -> Result<DMatrix<f64>> {
    Ok(pre_activation(batch, params)?.map(|v| v.max(0.0)))
}

pub fn decode(x: &DVector<f64>, params: &AutoencoderParams) -> Result<DVector<f64>> {
    if x.len() != params.hidden_units() {
        return Err(NpgaError::shape("decode", params.hidden_units(), x.len()));
    }
    Ok(params.weight.tr_mul(x) + &params.dec_bias)
}

/// Noise realisation held fixed for every cost/gradient evaluation on one minibatch.
#[derive(Debug, Clone)]
pub struct FrozenNoise {
    pub corrupted: DMatrix<f64>,
    /// Per-unit rectifier noise; `None` means deterministic rectification.
    pub activation: Option<DMatrix<f64>>,
}

impl FrozenNoise {
    /// Corrupts `clean` and, in noisy mode, draws rectifier noise from the
    /// pre-activations of the corrupted batch under `params`.
    pub fn draw<R: Rng + ?Sized>(
        clean: &DMatrix<f64>,
        params: &AutoencoderParams,
        corruption: &CorruptionSpec,
        mode: EncodeMode,
        rng: &mut R,
    ) -> Result<Self> {
        let corrupted = corrupt(clean, corruption, rng)?;
        let activation = match mode {
            EncodeMode::Deterministic => None,
            EncodeMode::NoisyRelu => Some(activation_noise(&pre_activation(&corrupted, params)?, rng)),
        };
        Ok(FrozenNoise { corrupted, activation })
    }
}

/// Hidden activations together with what backprop needs.
#[derive(Debug, Clone)]
pub struct Forward {
    pub hidden: DMatrix<f64>,
    /// 1 where the rectifier is open (pre-activation plus noise > 0).
    pub open: DMatrix<f64>,
}

pub fn forward(
    corrupted: &DMatrix<f64>,
    params: &AutoencoderParams,
    activation_noise: Option<&DMatrix<f64>>,
) -> Result<Forward> {
    let mut pre = pre_activation(corrupted, params)?;
    if let Some(noise) = activation_noise {
        if noise.shape() != pre.shape() {
            return Err(NpgaError::shape(
                "activation noise",
                format!("{:?}", pre.shape()),
                format!("{:?}", noise.shape()),
            ));
        }
        pre += noise;
    }
    // subgradient 0 at exactly zero
    let open = pre.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let hidden = pre.map(|v| v.max(0.0));
    Ok(Forward { hidden, open })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderGrad {
    pub weight: DMatrix<f64>,
    pub enc_bias: DVector<f64>,
    pub dec_bias: DVector<f64>,
}

/// Reconstruction-side pieces of the cost: value, ∂/∂hidden, decoder-path
/// weight gradient (J×K) and decoder-bias gradient.
pub(crate) struct DecoderSide {
    pub cost: f64,
    pub d_hidden: DMatrix<f64>,
    pub d_weight: DMatrix<f64>,
    pub d_dec_bias: DVector<f64>,
}

pub(crate) fn decoder_side(clean: &DMatrix<f64>, hidden: &DMatrix<f64>, params: &AutoencoderParams) -> DecoderSide {
    let k = params.input_dim() as f64;
    let mut resid = hidden * &params.weight;
    for mut row in resid.row_iter_mut() {
        row += params.dec_bias.transpose();
    }
    resid -= clean;
    let cost = resid.norm_squared() / k;
    let g = resid * (2.0 / k);
    let d_hidden = &g * params.weight.transpose();
    let d_weight = hidden.tr_mul(&g);
    let d_dec_bias = DVector::from_iterator(g.ncols(), g.column_iter().map(|c| c.sum()));
    DecoderSide {
        cost,
        d_hidden,
        d_weight,
        d_dec_bias,
    }
}

/// Backpropagates ∂/∂hidden through the rectifier into (weight, bias) gradients.
pub(crate) fn encoder_side(
    corrupted: &DMatrix<f64>,
    fwd: &Forward,
    d_hidden: &DMatrix<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let d_pre = d_hidden.component_mul(&fwd.open);
    let d_weight = d_pre.tr_mul(corrupted);
    let d_bias = DVector::from_iterator(d_pre.ncols(), d_pre.column_iter().map(|c| c.sum()));
    (d_weight, d_bias)
}

fn check_batches(clean: &DMatrix<f64>, corrupted: &DMatrix<f64>, params: &AutoencoderParams) -> Result<()> {
    if clean.shape() != corrupted.shape() {
        return Err(NpgaError::shape(
            "clean/corrupted batch",
            format!("{:?}", clean.shape()),
            format!("{:?}", corrupted.shape()),
        ));
    }
    if clean.ncols() != params.input_dim() {
        return Err(NpgaError::shape("batch width", params.input_dim(), clean.ncols()));
    }
    Ok(())
}

/// Reconstruction cost `(1/K) Σ_n Σ_k (y_k − f_k(g(ỹ)))²` and its gradient.
///
/// `activation_noise` is the frozen rectifier noise for noisy mode, or `None`
/// for deterministic encoding.
pub fn l_auto_and_grad(
    clean: &DMatrix<f64>,
    corrupted: &DMatrix<f64>,
    params: &AutoencoderParams,
    activation_noise: Option<&DMatrix<f64>>,
) -> Result<(f64, AutoencoderGrad)> {
    let (cost, enc_w, dec_w, enc_bias, dec_bias) = l_auto_split(clean, corrupted, params, activation_noise)?;
    Ok((
        cost,
        AutoencoderGrad {
            weight: enc_w + dec_w,
            enc_bias,
            dec_bias,
        },
    ))
}

/// Like [`l_auto_and_grad`] but returns the encoder-path and decoder-path
/// contributions to the tied weight gradient separately.
pub fn l_auto_path_grads(
    clean: &DMatrix<f64>,
    corrupted: &DMatrix<f64>,
    params: &AutoencoderParams,
    activation_noise: Option<&DMatrix<f64>>,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    let (cost, enc_w, dec_w, _, _) = l_auto_split(clean, corrupted, params, activation_noise)?;
    Ok((cost, enc_w, dec_w))
}

type Split = (f64, DMatrix<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>);

fn l_auto_split(
    clean: &DMatrix<f64>,
    corrupted: &DMatrix<f64>,
    params: &AutoencoderParams,
    activation_noise: Option<&DMatrix<f64>>,
) -> Result<Split> {
    check_batches(clean, corrupted, params)?;
    let fwd = forward(corrupted, params, activation_noise)?;
    let dec = decoder_side(clean, &fwd.hidden, params);
    let (enc_w, enc_b) = encoder_side(corrupted, &fwd, &dec.d_hidden);
    Ok((dec.cost, enc_w, dec.d_weight, enc_b, dec.d_dec_bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn identity_params(n: usize) -> AutoencoderParams {
        AutoencoderParams {
            weight: DMatrix::identity(n, n),
            enc_bias: DVector::zeros(n),
            dec_bias: DVector::zeros(n),
        }
    }

    #[test]
    fn encode_zero_weights_gives_zero_code() {
        let p = AutoencoderParams::zeros(3, 4);
        let y = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let x = encode(&y, &p, EncodeMode::Deterministic, &mut rng()).unwrap();
        assert_eq!(x, DVector::zeros(3));
    }

    #[test]
    fn encode_rectifies() {
        let p = identity_params(2);
        let x = encode(
            &DVector::from_vec(vec![-1.0, -3.0]),
            &p,
            EncodeMode::Deterministic,
            &mut rng(),
        )
        .unwrap();
        assert_eq!(x, DVector::zeros(2));
        let x = encode(
            &DVector::from_vec(vec![2.0, -1.0]),
            &p,
            EncodeMode::Deterministic,
            &mut rng(),
        )
        .unwrap();
        assert_eq!(x.as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn noisy_encoding_is_nonnegative() {
        let mut r = rng();
        let p = AutoencoderParams::init(16, 5, &mut r);
        let y = DVector::from_fn(5, |i, _| i as f64 - 2.0);
        let x = encode(&y, &p, EncodeMode::NoisyRelu, &mut r).unwrap();
        assert!(x.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn encode_shape_error() {
        let p = AutoencoderParams::zeros(3, 4);
        let y = DVector::zeros(5);
        assert!(matches!(
            encode(&y, &p, EncodeMode::Deterministic, &mut rng()),
            Err(NpgaError::Shape { .. })
        ));
        assert!(matches!(decode(&DVector::zeros(2), &p), Err(NpgaError::Shape { .. })));
    }

    #[test]
    fn decode_is_affine() {
        let mut p = AutoencoderParams::zeros(2, 3);
        p.dec_bias = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        assert_eq!(decode(&DVector::zeros(2), &p).unwrap(), p.dec_bias);
        let z = AutoencoderParams::zeros(2, 3);
        assert_eq!(
            decode(&DVector::from_vec(vec![3.0, 4.0]), &z).unwrap(),
            DVector::zeros(3)
        );
        let id = identity_params(2);
        assert_eq!(
            decode(&DVector::from_vec(vec![1.0, 2.0]), &id).unwrap().as_slice(),
            &[1.0, 2.0]
        );
    }

    #[test]
    fn zero_std_gaussian_corruption_is_identity() {
        let b = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        assert_eq!(corrupt(&b, &CorruptionSpec::gaussian(0.0), &mut rng()).unwrap(), b);
    }

    #[test]
    fn full_mask_zeroes_everything() {
        let b = DMatrix::from_element(5, 5, 3.0);
        assert_eq!(
            corrupt(&b, &CorruptionSpec::mask(1.0), &mut rng()).unwrap(),
            DMatrix::zeros(5, 5)
        );
    }

    #[test]
    fn mask_fraction_concentrates() {
        let b = DMatrix::from_element(100, 100, 1.0);
        for seed in 0..20 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let c = corrupt(&b, &CorruptionSpec::mask(0.2), &mut r).unwrap();
            let zeroed = c.iter().filter(|v| **v == 0.0).count() as f64 / 10_000.0;
            assert!((0.15..=0.25).contains(&zeroed), "seed {seed}: {zeroed}");
        }
    }

    #[test]
    fn corruption_is_seed_deterministic() {
        let b = DMatrix::from_fn(6, 4, |i, j| (i + j) as f64);
        for spec in [CorruptionSpec::gaussian(0.3), CorruptionSpec::mask(0.4)] {
            let a = corrupt(&b, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let c = corrupt(&b, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            assert_eq!(a, c);
        }
    }

    #[test]
    fn invalid_corruption_rejected() {
        let b = DMatrix::zeros(1, 1);
        assert!(corrupt(&b, &CorruptionSpec::mask(1.5), &mut rng()).is_err());
        assert!(corrupt(&b, &CorruptionSpec::gaussian(-0.1), &mut rng()).is_err());
    }

    #[test]
    fn zero_params_cost_is_mean_square() {
        let p = AutoencoderParams::zeros(3, 4);
        let y = DMatrix::from_row_slice(1, 4, &[1.0, -2.0, 0.5, 3.0]);
        let (cost, _) = l_auto_and_grad(&y, &y, &p, None).unwrap();
        let expected = (1.0 + 4.0 + 0.25 + 9.0) / 4.0;
        assert!((cost - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_batch_is_a_fixed_point() {
        let mut r = rng();
        let p = AutoencoderParams::init(5, 3, &mut r);
        let y = DMatrix::zeros(4, 3);
        let (cost, g) = l_auto_and_grad(&y, &y, &p, None).unwrap();
        assert_eq!(cost, 0.0);
        assert_eq!(g.weight, DMatrix::zeros(5, 3));
    }

    #[test]
    fn mismatched_batches_rejected() {
        let p = AutoencoderParams::zeros(2, 3);
        let a = DMatrix::zeros(4, 3);
        let b = DMatrix::zeros(3, 3);
        assert!(matches!(
            l_auto_and_grad(&a, &b, &p, None),
            Err(NpgaError::Shape { .. })
        ));
    }
}
