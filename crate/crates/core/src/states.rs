//! Generators for three-qubit density matrices of every correlation class.
//!
//! All generators draw from an explicit RNG; nothing here touches global
//! state, so independent streams can run side by side.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, kron, kron_vec, CMatrix, C64, ONE, ZERO};

pub const N_QUBITS: usize = 3;
pub const DIM: usize = 8;

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-9;

/// A validated 3-qubit density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    /// Checks Hermiticity, unit trace and positivity before wrapping.
    pub fn new(mat: CMatrix) -> Result<Self> {
        if mat.dim() != DIM {
            return Err(Error::invalid(format!(
                "density matrix must be {DIM}x{DIM}, got {0}x{0}",
                mat.dim()
            )));
        }
        if mat.as_slice().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("density matrix has non-finite entries"));
        }
        let herm = mat.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::invalid(format!("not Hermitian (error {herm:e})")));
        }
        let tr = mat.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::invalid(format!("trace is {tr}, expected 1")));
        }
        let min_eig = linalg::hermitian_eigenvalues(&mat)?[0];
        if min_eig < -PSD_TOL {
            return Err(Error::invalid(format!(
                "not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(DensityMatrix(mat))
    }

    /// Wraps a matrix that is a density matrix by construction. Entries are
    /// symmetrized so small rounding never breaks Hermiticity.
    pub(crate) fn from_trusted(mat: CMatrix) -> Self {
        debug_assert_eq!(mat.dim(), DIM);
        DensityMatrix(mat.hermitian_part())
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn purity(&self) -> f64 {
        self.0.purity()
    }

    /// Single-qubit reduced state of `qubit`.
    pub fn reduced(&self, qubit: usize) -> CMatrix {
        linalg::partial_trace(&self.0, &[qubit], N_QUBITS).expect("valid qubit index")
    }

    /// Interleaved `(re, im)` pairs in row-major order, 128 values.
    pub fn to_interleaved(&self) -> Vec<f64> {
        self.0
            .as_slice()
            .iter()
            .flat_map(|z| [z.re, z.im])
            .collect()
    }

    pub fn from_interleaved(values: &[f64]) -> Result<Self> {
        if values.len() != 2 * DIM * DIM {
            return Err(Error::invalid(format!(
                "expected {} interleaved values, got {}",
                2 * DIM * DIM,
                values.len()
            )));
        }
        let data = values
            .chunks_exact(2)
            .map(|p| C64::new(p[0], p[1]))
            .collect();
        Self::new(CMatrix::from_rows(DIM, data)?)
    }

    /// Applies the qubit permutation `order` (see [`linalg::permute_qubits`]).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        Ok(DensityMatrix(linalg::permute_qubits(&self.0, order, N_QUBITS)?))
    }
}

/// Normalized pure state on `log2(len)` qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amplitudes: Vec<C64>,
}

impl PureState {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        let n = amplitudes.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::invalid(format!("{n} amplitudes is not a qubit register")));
        }
        let norm: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid("state vector has zero or non-finite norm"));
        }
        Ok(PureState {
            amplitudes: amplitudes.into_iter().map(|z| z / norm).collect(),
        })
    }

    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let mut amplitudes = vec![ZERO; 1 << n_qubits];
        amplitudes[index] = ONE;
        PureState { amplitudes }
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn n_qubits(&self) -> usize {
        self.amplitudes.len().trailing_zeros() as usize
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn projector(&self) -> CMatrix {
        CMatrix::projector(&self.amplitudes)
    }

    /// `|ψ><ψ|` for a three-qubit state.
    pub fn density(&self) -> Result<DensityMatrix> {
        if self.amplitudes.len() != DIM {
            return Err(Error::invalid("density() needs a 3-qubit state"));
        }
        Ok(DensityMatrix::from_trusted(self.projector()))
    }

    fn tensor(&self, other: &PureState) -> PureState {
        PureState {
            amplitudes: kron_vec(&self.amplitudes, &other.amplitudes),
        }
    }

    /// Applies a single-qubit gate to `qubit` in place.
    fn apply_1q(&mut self, gate: &CMatrix, qubit: usize) {
        let n = self.n_qubits();
        let stride = 1 << (n - 1 - qubit);
        for base in 0..self.amplitudes.len() {
            if base & stride != 0 {
                continue;
            }
            let (x0, x1) = (self.amplitudes[base], self.amplitudes[base | stride]);
            self.amplitudes[base] = gate[(0, 0)] * x0 + gate[(0, 1)] * x1;
            self.amplitudes[base | stride] = gate[(1, 0)] * x0 + gate[(1, 1)] * x1;
        }
    }

    fn apply_cnot(&mut self, control: usize, target: usize) {
        let n = self.n_qubits();
        let cbit = 1 << (n - 1 - control);
        let tbit = 1 << (n - 1 - target);
        for idx in 0..self.amplitudes.len() {
            if idx & cbit != 0 && idx & tbit == 0 {
                self.amplitudes.swap(idx, idx | tbit);
            }
        }
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im)
}

/// Haar-random pure state from a normalized complex Gaussian vector.
pub fn haar_random_pure<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Result<PureState> {
    if !(1..=5).contains(&n_qubits) {
        return Err(Error::invalid(format!(
            "haar_random_pure supports 1..=5 qubits, got {n_qubits}"
        )));
    }
    let amps = (0..1usize << n_qubits).map(|_| complex_gaussian(rng)).collect();
    PureState::new(amps)
}

/// Tensor product of three independent Haar single-qubit states.
pub fn random_separable_pure<R: Rng + ?Sized>(rng: &mut R) -> PureState {
    let q = |rng: &mut R| haar_random_pure(1, rng).expect("one qubit is in range");
    let a = q(rng);
    let b = q(rng);
    let c = q(rng);
    a.tensor(&b).tensor(&c)
}

/// Single-qubit gate
/// `[[cos θ/2, -e^{iλ} sin θ/2], [e^{iφ} sin θ/2, e^{i(φ+λ)} cos θ/2]]`.
pub fn u3(theta: f64, phi: f64, lambda: f64) -> CMatrix {
    let (s, c) = (theta / 2.0).sin_cos();
    let data = vec![
        C64::new(c, 0.0),
        -C64::from_polar(s, lambda),
        C64::from_polar(s, phi),
        C64::from_polar(c, phi + lambda),
    ];
    CMatrix::from_rows(2, data).expect("2x2")
}

/// Haar-distributed angles for [`u3`]: `cos²(θ/2)` uniform, phases uniform.
fn haar_u3<R: Rng + ?Sized>(rng: &mut R) -> CMatrix {
    let x: f64 = rng.random();
    let theta = 2.0 * x.sqrt().acos();
    let phi = rng.random::<f64>() * TAU;
    let lambda = rng.random::<f64>() * TAU;
    u3(theta, phi, lambda)
}

pub const DEFAULT_CIRCUIT_DEPTH: usize = 4;

/// Layered random circuit on `|0…0>`: every layer rotates each qubit by a
/// Haar-random single-qubit gate; with `entangling` set, the layer ends with
/// a CNOT on a random adjacent pair in random orientation.
pub fn random_circuit_state<R: Rng + ?Sized>(
    n_qubits: usize,
    depth: usize,
    entangling: bool,
    rng: &mut R,
) -> Result<PureState> {
    if depth == 0 {
        return Err(Error::invalid("circuit depth must be at least 1"));
    }
    if !(1..=5).contains(&n_qubits) {
        return Err(Error::invalid(format!("unsupported qubit count {n_qubits}")));
    }
    if entangling && n_qubits < 2 {
        return Err(Error::invalid("entangling circuits need at least 2 qubits"));
    }
    let mut state = PureState::basis(n_qubits, 0);
    for _ in 0..depth {
        for q in 0..n_qubits {
            state.apply_1q(&haar_u3(rng), q);
        }
        if entangling {
            let low = rng.random_range(0..n_qubits - 1);
            if rng.random_bool(0.5) {
                state.apply_cnot(low, low + 1);
            } else {
                state.apply_cnot(low + 1, low);
            }
        }
    }
    Ok(state)
}

/// Inputs of the parameterized mixed-state generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterizedGenParams {
    /// `|0>` amplitude per qubit; the `|1>` amplitude is `sqrt(1 - a²)`.
    pub a: [f64; 3],
    /// Pair phases `[φ12, φ13, φ23]`.
    pub phases: [f64; 3],
    /// Coherence retained per qubit by the dephasing step.
    pub dephasing: [f64; 3],
    /// `(θ, φ, λ)` per qubit for the final local rotation.
    pub euler: [[f64; 3]; 3],
}

impl ParameterizedGenParams {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut unit = || rng.random::<f64>();
        let a = [unit(), unit(), unit()];
        let dephasing = [unit(), unit(), unit()];
        let phases = [unit() * TAU, unit() * TAU, unit() * TAU];
        let mut euler = [[0.0; 3]; 3];
        for q in &mut euler {
            for angle in q.iter_mut() {
                *angle = unit() * TAU;
            }
        }
        ParameterizedGenParams {
            a,
            phases,
            dephasing,
            euler,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |x: f64, hi: f64| (0.0..=hi).contains(&x);
        if !self.a.iter().all(|&x| in_range(x, 1.0)) {
            return Err(Error::invalid("amplitude coefficients must lie in [0, 1]"));
        }
        if !self.dephasing.iter().all(|&x| in_range(x, 1.0)) {
            return Err(Error::invalid("dephasing coefficients must lie in [0, 1]"));
        }
        if !self.phases.iter().all(|&x| in_range(x, TAU)) {
            return Err(Error::invalid("phases must lie in [0, 2π]"));
        }
        if !self.euler.iter().flatten().all(|&x| in_range(x, TAU)) {
            return Err(Error::invalid("Euler angles must lie in [0, 2π]"));
        }
        Ok(())
    }
}

/// Scales every coherence between basis states that differ on `qubit` by
/// `c`. Equivalent to `(1+c)/2 ρ + (1-c)/2 Z ρ Z` on that qubit.
pub fn dephase(rho: &CMatrix, qubit: usize, c: f64) -> CMatrix {
    let n = rho.dim().trailing_zeros() as usize;
    let bit = 1 << (n - 1 - qubit);
    CMatrix::from_fn(rho.dim(), |r, s| {
        if (r ^ s) & bit != 0 {
            rho[(r, s)] * c
        } else {
            rho[(r, s)]
        }
    })
}

/// Phase-entangled product state, dephased per qubit and rotated by local
/// gates.
pub fn parameterized_mixed(params: &ParameterizedGenParams) -> Result<DensityMatrix> {
    params.validate()?;
    let [a1, a2, a3] = params.a;
    let b = |a: f64| (1.0 - a * a).max(0.0).sqrt();
    let (b1, b2, b3) = (b(a1), b(a2), b(a3));
    let [p12, p13, p23] = params.phases;
    let ph = |angle: f64| C64::from_polar(1.0, angle);
    let amps = vec![
        C64::new(a1 * a2 * a3, 0.0),
        C64::new(a1 * a2 * b3, 0.0),
        C64::new(a1 * a3 * b2, 0.0),
        ph(p23) * (a1 * b2 * b3),
        C64::new(a2 * a3 * b1, 0.0),
        ph(p13) * (a2 * b1 * b3),
        ph(p12) * (a3 * b1 * b2),
        ph(p12 + p13 + p23) * (b1 * b2 * b3),
    ];
    let psi = PureState::new(amps)?;
    let mut rho = psi.projector();
    for (q, &c) in params.dephasing.iter().enumerate() {
        rho = dephase(&rho, q, c);
    }
    let [u1, u2, u3_] = params.euler.map(|[t, p, l]| u3(t, p, l));
    let u = kron(&kron(&u1, &u2), &u3_);
    Ok(DensityMatrix::from_trusted(rho.conjugate_by(&u)))
}

/// Convex combination `Σ p_i ρ_i`.
pub fn mix(states: &[DensityMatrix], probs: &[f64]) -> Result<DensityMatrix> {
    if states.is_empty() || states.len() != probs.len() {
        return Err(Error::invalid(format!(
            "mix needs equal, non-zero numbers of states and weights ({} vs {})",
            states.len(),
            probs.len()
        )));
    }
    if probs.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::invalid("mixing weights must be non-negative"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("mixing weights sum to {total}, expected 1")));
    }
    let mut out = CMatrix::zeros(DIM);
    for (rho, &p) in states.iter().zip(probs) {
        out = &out + &rho.matrix().scale_real(p);
    }
    Ok(DensityMatrix::from_trusted(out))
}

/// Flat-Dirichlet probability vector of length `k`.
pub fn random_simplex<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    // Absorb rounding so the weights sum to one within mix()'s tolerance.
    let drift = 1.0 - w.iter().sum::<f64>();
    w[0] += drift;
    w
}

/// Haar pure state on `n_src` qubits reduced to its first three.
pub fn reduce_from_larger<R: Rng + ?Sized>(n_src: usize, rng: &mut R) -> Result<DensityMatrix> {
    if !(4..=5).contains(&n_src) {
        return Err(Error::invalid(format!("n_src must be 4 or 5, got {n_src}")));
    }
    let psi = haar_random_pure(n_src, rng)?;
    let reduced = linalg::partial_trace(&psi.projector(), &[0, 1, 2], n_src)?;
    Ok(DensityMatrix::from_trusted(reduced))
}

const DEGENERACY_TOL: f64 = 1e-10;

/// Raises the top eigenvalue by `c` and renormalizes. A degenerate top
/// eigenspace shares the boost evenly so the result does not depend on the
/// eigensolver's choice of basis inside it.
pub fn boost_largest_eigenvalue(rho: &DensityMatrix, c: f64) -> Result<DensityMatrix> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("boost must be finite and non-negative, got {c}")));
    }
    if c == 0.0 {
        return Ok(rho.clone());
    }
    let eig = linalg::hermitian_eig(rho.matrix())?;
    let mut lambdas = eig.eigenvalues.clone();
    let top = *lambdas.last().expect("non-empty spectrum");
    let degenerate: Vec<usize> = (0..lambdas.len())
        .filter(|&k| top - lambdas[k] <= DEGENERACY_TOL * (1.0 + top.abs()))
        .collect();
    let share = c / degenerate.len() as f64;
    for &k in &degenerate {
        lambdas[k] += share;
    }
    let total: f64 = eig.eigenvalues.iter().sum::<f64>() + c;
    let boosted = linalg::reconstruct_from(&lambdas, &eig.eigenvectors).scale_real(1.0 / total);
    Ok(DensityMatrix::from_trusted(boosted))
}

/// A point of the 2D state map and the family parameters it selects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub u: f64,
    pub v: f64,
    pub p: f64,
    pub a_param: f64,
    pub phi: f64,
    pub c_boost: f64,
}

/// Corners of the inner square, `(u, v)`.
pub const MAP_A: (f64, f64) = (0.5, 0.5);
pub const MAP_B: (f64, f64) = (0.5, 1.5);
pub const MAP_C: (f64, f64) = (1.5, 1.5);
pub const MAP_D: (f64, f64) = (1.5, 0.5);

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

impl MapPoint {
    /// Derives `(p, a, φ, c)` from map coordinates in `[0, 2]²`.
    ///
    /// Inside the square ABCD the mixing weight `p` grows along AB and `a`
    /// falls along BC; both are frozen at their boundary values outside it.
    /// The phase grows from 0 on the square to π/2 on the map edge. The boost
    /// `c` grows from C toward the top-right corner, and below the diagonal an
    /// extra term grows from the square's centre toward the bottom-left
    /// corner. The lower triangle mirrors the upper one across `u = v`.
    pub fn new(u: f64, v: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&u) || !(0.0..=2.0).contains(&v) {
            return Err(Error::invalid(format!("map point ({u}, {v}) outside [0, 2]²")));
        }
        // Work in upper-triangle coordinates: `along` runs A→B, `across` B→C.
        let (across, along) = if v >= u { (u, v) } else { (v, u) };
        let p = 0.5 * clamp01(along - 0.5);
        let a_param = FRAC_1_SQRT_2 * (1.0 - clamp01(across - 0.5));
        let edge = (u - 1.0).abs().max((v - 1.0).abs());
        let phi = 0.5 * PI * clamp01((edge - 0.5) / 0.5);
        let mut c_boost = clamp01(u + v - 3.0);
        if v < u {
            c_boost += clamp01(1.0 - (u + v) / 2.0);
        }
        Ok(MapPoint {
            u,
            v,
            p,
            a_param,
            phi,
            c_boost,
        })
    }
}

/// Member of the two-state map family selected by `pt`.
pub fn map_state(pt: &MapPoint) -> Result<DensityMatrix> {
    if !(0.0..=2.0).contains(&pt.u) || !(0.0..=2.0).contains(&pt.v) {
        return Err(Error::invalid(format!(
            "map point ({}, {}) outside [0, 2]²",
            pt.u, pt.v
        )));
    }
    let a = pt.a_param;
    let b = (1.0 - a * a).max(0.0).sqrt();
    let half = pt.phi / 2.0;
    let psi1 = [C64::new(a, 0.0), C64::new(b, 0.0)];
    let psi2 = [C64::from_polar(b, -half), -C64::from_polar(a, half)];
    let cube = |q: &[C64; 2]| kron_vec(&kron_vec(q, q), q);
    let rho1 = CMatrix::projector(&cube(&psi1));
    let rho2 = CMatrix::projector(&cube(&psi2));
    let rho = &rho1.scale_real(pt.p) + &rho2.scale_real(1.0 - pt.p);
    boost_largest_eigenvalue(&DensityMatrix::from_trusted(rho), pt.c_boost)
}

/// Product of three random single-qubit mixed states, produced by the
/// parameterized generator with all pair phases switched off.
pub fn random_mixed_product<R: Rng + ?Sized>(rng: &mut R) -> DensityMatrix {
    let mut params = ParameterizedGenParams::sample(rng);
    params.phases = [0.0; 3];
    parameterized_mixed(&params).expect("sampled parameters are in range")
}

/// Classical mixture over a random local product basis: zero discord with
/// respect to every subsystem. Uses between 2 and 8 basis states.
pub fn random_zero_discord<R: Rng + ?Sized>(rng: &mut R) -> DensityMatrix {
    let terms = rng.random_range(2..=8);
    let mut basis: Vec<usize> = (0..DIM).collect();
    for i in 0..terms {
        let j = rng.random_range(i..DIM);
        basis.swap(i, j);
    }
    let weights = random_simplex(terms, rng);
    let mut diag = [0.0; DIM];
    for (k, &w) in basis[..terms].iter().zip(&weights) {
        diag[*k] = w;
    }
    let u = kron(&kron(&haar_u3(rng), &haar_u3(rng)), &haar_u3(rng));
    DensityMatrix::from_trusted(CMatrix::from_real_diag(&diag).conjugate_by(&u))
}

/// Mixture of 2 to 4 random pure product states. Separable by construction;
/// the product vectors are generically non-orthogonal, which makes the state
/// discordant.
pub fn random_product_mixture<R: Rng + ?Sized>(rng: &mut R) -> DensityMatrix {
    let terms = rng.random_range(2..=4);
    let states: Vec<DensityMatrix> = (0..terms)
        .map(|_| random_separable_pure(rng).density().expect("3 qubits"))
        .collect();
    let weights = random_simplex(terms, rng);
    mix(&states, &weights).expect("simplex weights")
}

/// Random mixture of 2 or 3 Haar pure states. Usually entangled; the caller
/// is responsible for labeling.
pub fn random_pure_mixture<R: Rng + ?Sized>(rng: &mut R) -> DensityMatrix {
    let terms = rng.random_range(2..=3);
    let states: Vec<DensityMatrix> = (0..terms)
        .map(|_| haar_random_pure(3, rng).and_then(|s| s.density()).expect("3 qubits"))
        .collect();
    let weights = random_simplex(terms, rng);
    mix(&states, &weights).expect("simplex weights")
}
