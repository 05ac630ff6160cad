//! The separator: qubit-subspace convolutions, per-qubit fully connected
//! stacks and a Kronecker-sum decoder whose output is separable by form.
//!
//! Each of the `n_k` channels turns the input into one 2x2 complex factor
//! per qubit. The real part of a factor comes from a 4x4 kernel applied to
//! `Re ρ`, the imaginary part from a second kernel applied to `Im ρ`. The
//! reconstruction is `Σ_i A_i ⊗ B_i ⊗ C_i` divided by its real trace.

mod backprop;
pub mod checkpoint;

use std::fmt;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, C64, ZERO};
use crate::states::{DensityMatrix, DIM, N_QUBITS};

pub use backprop::{batch_gradient, batch_losses, BatchOutput};

/// Entries per 2x2 factor in the flattened feature layout (4 real + 4 imag).
pub const FEATURES_PER_CHANNEL: usize = 8;
/// Number of qubit paths, A, B and C.
pub const N_PATHS: usize = 3;

/// Offset added to the first hidden layer's bias (and removed again by the
/// output layer) so that the exact identity model passes rectifier layers
/// unchanged.
const RELU_SHIFT: f64 = 2.0;
const KERNEL_INIT_NOISE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative in terms of the pre-activation. Zero at the rectifier kink.
    #[inline]
    pub(crate) fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparatorConfig {
    pub n_k: usize,
    pub use_fc: bool,
    pub fc_depth: usize,
    /// Share kernels and FC weights between the three qubit paths. Shared
    /// kernels are symmetrised over the exchange of the two traced-out
    /// qubits, which makes the model exactly equivariant under qubit
    /// permutations.
    pub tie_weights: bool,
    pub activation: Activation,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        SeparatorConfig {
            n_k: 24,
            use_fc: true,
            fc_depth: 4,
            tie_weights: true,
            activation: Activation::Relu,
        }
    }
}

impl SeparatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_k == 0 {
            return Err(Error::invalid("n_k must be at least 1"));
        }
        if self.fc_depth == 0 {
            return Err(Error::invalid("fc_depth must be at least 1"));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        FEATURES_PER_CHANNEL * self.n_k
    }

    pub fn n_param_paths(&self) -> usize {
        if self.tie_weights {
            1
        } else {
            N_PATHS
        }
    }

    /// Parameter path used by qubit `q`.
    pub fn path_of(&self, qubit: usize) -> usize {
        if self.tie_weights {
            0
        } else {
            qubit
        }
    }

    fn kernels_len(&self) -> usize {
        self.n_param_paths() * self.n_k * 2 * 16
    }

    fn fc_layer_len(&self) -> usize {
        let d = self.width();
        d * d + d
    }

    fn fc_len(&self) -> usize {
        if self.use_fc {
            self.n_param_paths() * self.fc_depth * self.fc_layer_len()
        } else {
            0
        }
    }

    pub fn n_params(&self) -> usize {
        self.kernels_len() + self.fc_len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Re = 0,
    Im = 1,
}

/// All trainable weights, stored flat so that optimisers and finite
/// differences can treat them uniformly. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparatorParams {
    config: SeparatorConfig,
    values: Vec<f64>,
}

impl SeparatorParams {
    pub fn zeros(config: SeparatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(SeparatorParams {
            config,
            values: vec![0.0; config.n_params()],
        })
    }

    /// Identity kernels and identity FC layers: the partial-trace model.
    pub fn identity(config: SeparatorConfig) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        for path in 0..config.n_param_paths() {
            for ch in 0..config.n_k {
                for part in [Part::Re, Part::Im] {
                    let k = p.kernel_mut(path, ch, part);
                    for d in 0..4 {
                        k[5 * d] = 1.0;
                    }
                }
            }
            if config.use_fc {
                for layer in 0..config.fc_depth {
                    let mut w = p.fc_weight_mut(path, layer);
                    for d in 0..w.nrows() {
                        w[[d, d]] = 1.0;
                    }
                }
            }
        }
        p.apply_relu_shift();
        Ok(p)
    }

    /// Near-identity start: kernels and FC weights are identity plus
    /// `U(-0.05, 0.05)` noise, biases zero.
    pub fn init<R: Rng + ?Sized>(config: SeparatorConfig, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut noise = || (rng.random::<f64>() * 2.0 - 1.0) * KERNEL_INIT_NOISE;
        for path in 0..config.n_param_paths() {
            for ch in 0..config.n_k {
                for part in [Part::Re, Part::Im] {
                    let k = p.kernel_mut(path, ch, part);
                    for (idx, w) in k.iter_mut().enumerate() {
                        *w = if idx % 5 == 0 { 1.0 } else { 0.0 } + noise();
                    }
                }
            }
            if config.use_fc {
                for layer in 0..config.fc_depth {
                    let mut w = p.fc_weight_mut(path, layer);
                    for ((r, c), x) in w.indexed_iter_mut() {
                        *x = if r == c { 1.0 } else { 0.0 } + noise();
                    }
                }
            }
        }
        Ok(p)
    }

    /// For rectifier stacks deeper than one layer, offsets the first bias
    /// and compensates in the output bias so the whole stack maps `h` to
    /// `W_L ⋯ W_1 h` while every hidden unit is active.
    fn apply_relu_shift(&mut self) {
        let cfg = self.config;
        if !cfg.use_fc || cfg.fc_depth < 2 || cfg.activation != Activation::Relu {
            return;
        }
        let d = cfg.width();
        for path in 0..cfg.n_param_paths() {
            self.fc_bias_mut(path, 0).fill(RELU_SHIFT);
            let mut shift = ndarray::Array1::from_elem(d, RELU_SHIFT);
            for layer in 1..cfg.fc_depth {
                shift = self.fc_weight(path, layer).dot(&shift);
            }
            let last = cfg.fc_depth - 1;
            self.fc_bias_mut(path, last).assign(&shift.mapv(|x| -x));
        }
    }

    pub fn config(&self) -> &SeparatorConfig {
        &self.config
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    fn kernel_offset(&self, path: usize, ch: usize, part: Part) -> usize {
        ((path * self.config.n_k + ch) * 2 + part as usize) * 16
    }

    /// Row-major 4x4 kernel.
    pub fn kernel(&self, path: usize, ch: usize, part: Part) -> &[f64] {
        let o = self.kernel_offset(path, ch, part);
        &self.values[o..o + 16]
    }

    pub fn kernel_mut(&mut self, path: usize, ch: usize, part: Part) -> &mut [f64] {
        let o = self.kernel_offset(path, ch, part);
        &mut self.values[o..o + 16]
    }

    fn fc_offset(&self, path: usize, layer: usize) -> usize {
        assert!(self.config.use_fc, "configuration has no FC layers");
        self.config.kernels_len()
            + (path * self.config.fc_depth + layer) * self.config.fc_layer_len()
    }

    /// `(out, in)` weight matrix of one FC layer.
    pub fn fc_weight(&self, path: usize, layer: usize) -> ArrayView2<'_, f64> {
        let d = self.config.width();
        let o = self.fc_offset(path, layer);
        ArrayView2::from_shape((d, d), &self.values[o..o + d * d]).expect("layout")
    }

    pub fn fc_weight_mut(&mut self, path: usize, layer: usize) -> ArrayViewMut2<'_, f64> {
        let d = self.config.width();
        let o = self.fc_offset(path, layer);
        ArrayViewMut2::from_shape((d, d), &mut self.values[o..o + d * d]).expect("layout")
    }

    pub fn fc_bias(&self, path: usize, layer: usize) -> ArrayView1<'_, f64> {
        let d = self.config.width();
        let o = self.fc_offset(path, layer) + d * d;
        ArrayView1::from(&self.values[o..o + d])
    }

    pub fn fc_bias_mut(&mut self, path: usize, layer: usize) -> ArrayViewMut1<'_, f64> {
        let d = self.config.width();
        let o = self.fc_offset(path, layer) + d * d;
        ArrayViewMut1::from(&mut self.values[o..o + d])
    }

    /// Kernel as seen by the convolution: with tied weights, the average of
    /// `K` and `K` with its two traced-out qubits exchanged.
    pub fn effective_kernel(&self, path: usize, ch: usize, part: Part) -> [f64; 16] {
        let k = self.kernel(path, ch, part);
        let mut out = [0.0; 16];
        out.copy_from_slice(k);
        if self.config.tie_weights {
            symmetrize_kernel(&mut out);
        }
        out
    }

    /// Adds `scale * other` element-wise. Panics on layout mismatch.
    pub fn add_scaled(&mut self, other: &SeparatorParams, scale: f64) {
        assert_eq!(self.config, other.config, "parameter layouts differ");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for x in &mut self.values {
            *x *= s;
        }
    }

    /// Parameter index ranges of each group, for reporting and gradient
    /// checks: ("kernels", range), ("fc[path][layer].w", range), ...
    pub fn groups(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let cfg = &self.config;
        let mut out = vec![("kernels".to_string(), 0..cfg.kernels_len())];
        if cfg.use_fc {
            let d = cfg.width();
            for path in 0..cfg.n_param_paths() {
                for layer in 0..cfg.fc_depth {
                    let o = self.fc_offset(path, layer);
                    out.push((format!("fc[{path}][{layer}].w"), o..o + d * d));
                    out.push((format!("fc[{path}][{layer}].b"), o + d * d..o + d * d + d));
                }
            }
        }
        out
    }

    pub(crate) fn from_parts(config: SeparatorConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if values.len() != config.n_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters for this configuration, got {}",
                config.n_params(),
                values.len()
            )));
        }
        Ok(SeparatorParams { config, values })
    }
}

/// Index permutation of the 4-dim traced-out space that exchanges its two
/// qubits.
const REST_SWAP: [usize; 4] = [0, 2, 1, 3];

pub(crate) fn symmetrize_kernel(k: &mut [f64; 16]) {
    let orig = *k;
    for r in 0..4 {
        for c in 0..4 {
            k[4 * r + c] = 0.5 * (orig[4 * r + c] + orig[4 * REST_SWAP[r] + REST_SWAP[c]]);
        }
    }
}

/// Row of the 8x8 input touched by output index `i` and kernel index `k`
/// when extracting `qubit`. Kernel index `k` enumerates the two remaining
/// qubits in ascending order.
#[inline]
pub fn conv_index(qubit: usize, i: usize, k: usize) -> usize {
    match qubit {
        0 => 4 * i + k,
        1 => 2 * i + 4 * (k / 2) + (k % 2),
        2 => i + 2 * k,
        _ => panic!("qubit index {qubit} out of range"),
    }
}

/// Strided/dilated 4x4 convolution that reduces an 8x8 real matrix to the
/// 2x2 subspace of `qubit`: `out[i][j] = Σ K[k][q] X[r(i,k)][r(j,q)]`.
/// With `K = I₄` this is the partial trace onto `qubit`.
pub fn extract_qubit(x: &[f64], qubit: usize, kernel: &[f64]) -> [f64; 4] {
    debug_assert_eq!(x.len(), DIM * DIM);
    debug_assert_eq!(kernel.len(), 16);
    let mut out = [0.0; 4];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = 0.0;
            for k in 0..4 {
                let row = conv_index(qubit, i, k) * DIM;
                for q in 0..4 {
                    acc += kernel[4 * k + q] * x[row + conv_index(qubit, j, q)];
                }
            }
            out[2 * i + j] = acc;
        }
    }
    out
}

/// Flattened conv features of `qubit`: per channel the real-kernel output
/// on `Re ρ` then the imag-kernel output on `Im ρ`, 8 values per channel.
pub fn qubit_features(rho: &DensityMatrix, qubit: usize, params: &SeparatorParams) -> Result<Vec<f64>> {
    if qubit >= N_QUBITS {
        return Err(Error::invalid(format!("qubit {qubit} out of range")));
    }
    let cfg = params.config();
    let path = cfg.path_of(qubit);
    let re = rho.matrix().real_parts();
    let im = rho.matrix().imag_parts();
    let mut out = Vec::with_capacity(cfg.width());
    for ch in 0..cfg.n_k {
        out.extend(extract_qubit(&re, qubit, &params.effective_kernel(path, ch, Part::Re)));
        out.extend(extract_qubit(&im, qubit, &params.effective_kernel(path, ch, Part::Im)));
    }
    Ok(out)
}

/// The FC stack of `qubit`'s path applied to one feature vector: affine
/// layers, activation on all but the last. Identity when FC is disabled.
pub fn fc_forward(features: &[f64], qubit: usize, params: &SeparatorParams) -> Result<Vec<f64>> {
    let cfg = params.config();
    if features.len() != cfg.width() {
        return Err(Error::invalid(format!(
            "expected {} features, got {}",
            cfg.width(),
            features.len()
        )));
    }
    if qubit >= N_QUBITS {
        return Err(Error::invalid(format!("qubit {qubit} out of range")));
    }
    let mut h = ndarray::Array1::from_vec(features.to_vec());
    if !cfg.use_fc {
        return Ok(h.to_vec());
    }
    let path = cfg.path_of(qubit);
    for l in 0..cfg.fc_depth {
        let mut z = params.fc_weight(path, l).dot(&h) + params.fc_bias(path, l);
        if l + 1 < cfg.fc_depth {
            z.mapv_inplace(|x| cfg.activation.apply(x));
        }
        h = z;
    }
    Ok(h.to_vec())
}

/// Real or imaginary part of `rho`, row-major.
pub fn split_part(rho: &CMatrix, part: Part) -> Vec<f64> {
    match part {
        Part::Re => rho.real_parts(),
        Part::Im => rho.imag_parts(),
    }
}

/// 2x2 complex factor, row-major.
pub type Factor = [C64; 4];

const TRACE_GUARD: f64 = 1e-9;

/// Normalised Kronecker sum `Σ_i A_i ⊗ B_i ⊗ C_i / N`, with `N` the real
/// trace of the sum, or `n_k` when that trace is within 1e-9 of zero.
pub fn decode(factors: &[[Factor; 3]]) -> CMatrix {
    let (sum, norm) = kron_sum(factors);
    sum.scale_real(1.0 / norm)
}

/// Unnormalised Kronecker sum and the normaliser the decoder divides by.
pub(crate) fn kron_sum(factors: &[[Factor; 3]]) -> (CMatrix, f64) {
    let mut s = CMatrix::zeros(DIM);
    let data = s.as_mut_slice();
    for [a, b, c] in factors {
        let bc = kron2(b, c);
        for ar in 0..2 {
            for ac in 0..2 {
                let x = a[2 * ar + ac];
                for k in 0..4 {
                    let row = (4 * ar + k) * DIM + 4 * ac;
                    for kk in 0..4 {
                        data[row + kk] += x * bc[4 * k + kk];
                    }
                }
            }
        }
    }
    let tr = s.trace().re;
    let norm = if tr.abs() > TRACE_GUARD {
        tr
    } else {
        factors.len().max(1) as f64
    };
    (s, norm)
}

/// 4x4 Kronecker product of two 2x2 factors, row-major.
#[inline]
pub(crate) fn kron2(b: &Factor, c: &Factor) -> [C64; 16] {
    let mut out = [ZERO; 16];
    for br in 0..2 {
        for bc in 0..2 {
            for cr in 0..2 {
                for cc in 0..2 {
                    out[4 * (2 * br + cr) + 2 * bc + cc] = b[2 * br + bc] * c[2 * cr + cc];
                }
            }
        }
    }
    out
}

/// Mean absolute entry difference, `(1/d²) Σ |ρ_ij − ρ̂_ij|`.
pub fn loss(rho: &CMatrix, rho_hat: &CMatrix) -> f64 {
    assert_eq!(rho.dim(), rho_hat.dim(), "loss needs matching dimensions");
    let n = rho.dim();
    rho.as_slice()
        .iter()
        .zip(rho_hat.as_slice())
        .map(|(a, b)| (a - b).norm())
        .sum::<f64>()
        / (n * n) as f64
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub rho_hat: CMatrix,
    /// `[A_i, B_i, C_i]` per channel.
    pub per_qubit_factors: Vec<[Factor; 3]>,
    pub loss: f64,
}

impl Reconstruction {
    pub fn factor_matrix(f: &Factor) -> CMatrix {
        CMatrix::from_rows(2, f.to_vec()).expect("2x2")
    }
}

/// Full forward pass of one state.
pub fn forward(rho: &DensityMatrix, params: &SeparatorParams) -> Result<Reconstruction> {
    let out = backprop::forward_batch(params, std::slice::from_ref(rho))?;
    let factors = out.factors.into_iter().next().expect("one sample");
    let rho_hat = decode(&factors);
    let loss = loss(rho.matrix(), &rho_hat);
    Ok(Reconstruction {
        rho_hat,
        per_qubit_factors: factors,
        loss,
    })
}

/// Partial-trace model: `ρ̂ = ρ_A ⊗ ρ_B ⊗ ρ_C`.
pub fn baseline_forward(rho: &DensityMatrix) -> Reconstruction {
    let factors: [Factor; 3] = std::array::from_fn(|q| {
        let m = rho.reduced(q);
        [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]
    });
    let rho_hat = linalg::kron(
        &linalg::kron(
            &Reconstruction::factor_matrix(&factors[0]),
            &Reconstruction::factor_matrix(&factors[1]),
        ),
        &Reconstruction::factor_matrix(&factors[2]),
    );
    let loss = loss(rho.matrix(), &rho_hat);
    Reconstruction {
        rho_hat,
        per_qubit_factors: vec![factors],
        loss,
    }
}

/// Anything that maps a state to a reconstruction loss.
pub trait LossModel: Sync {
    fn name(&self) -> String;

    fn losses(&self, states: &[DensityMatrix]) -> Vec<f64>;

    fn loss_of(&self, rho: &DensityMatrix) -> f64 {
        self.losses(std::slice::from_ref(rho))[0]
    }
}

/// The partial-trace reference model.
#[derive(Clone, Copy, Debug, Default)]
pub struct Baseline;

impl LossModel for Baseline {
    fn name(&self) -> String {
        "baseline".into()
    }

    fn losses(&self, states: &[DensityMatrix]) -> Vec<f64> {
        states.iter().map(|r| baseline_forward(r).loss).collect()
    }
}

impl LossModel for SeparatorParams {
    fn name(&self) -> String {
        if self.config.use_fc {
            "separator".into()
        } else {
            "separator-nofc".into()
        }
    }

    fn losses(&self, states: &[DensityMatrix]) -> Vec<f64> {
        batch_losses(self, states)
    }
}

/// Permutation matrix acting on three-qubit basis states as
/// [`linalg::permute_qubits`] does.
pub fn qubit_permutation_matrix(order: &[usize]) -> CMatrix {
    let mut p = CMatrix::zeros(DIM);
    for idx in 0..DIM {
        let mut out = 0;
        for &src in order {
            out = (out << 1) | ((idx >> (N_QUBITS - 1 - src)) & 1);
        }
        p[(out, idx)] = linalg::ONE;
    }
    p
}
