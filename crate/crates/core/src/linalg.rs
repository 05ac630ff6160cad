//! Dense complex matrices sized for a handful of qubits.
//!
//! Basis ordering is fixed crate-wide: qubit 0 is the most significant bit of
//! a basis index, so for three qubits `|abc>` sits at index `4a + 2b + c`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Square complex matrix stored row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct CMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        CMatrix {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        CMatrix { dim, data }
    }

    pub fn from_rows(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::invalid(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        Ok(CMatrix { dim, data })
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    /// `|v><v|`
    pub fn projector(v: &[C64]) -> Self {
        Self::from_fn(v.len(), |i, j| v[i] * v[j].conj())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)])
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        CMatrix {
            dim: self.dim,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    /// `self * other - other * self`
    pub fn commutator(&self, other: &CMatrix) -> CMatrix {
        &self.matmul(other) - &other.matmul(self)
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// `(H + H†) / 2`
    pub fn hermitian_part(&self) -> CMatrix {
        Self::from_fn(self.dim, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }

    /// `Tr(ρ²)`, real part. Assumes Hermitian input.
    pub fn purity(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `U ρ U†`
    pub fn conjugate_by(&self, u: &CMatrix) -> CMatrix {
        u.matmul(self).matmul(&u.adjoint())
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }

    pub fn imag_parts(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.im).collect()
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;

    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim);
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;

    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim);
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;

    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.dim, self.dim)?;
        for i in 0..self.dim {
            write!(f, "  ")?;
            for j in 0..self.dim {
                let z = self[(i, j)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (m, n) = (a.dim, b.dim);
    let dim = m * n;
    let mut out = CMatrix::zeros(dim);
    for i in 0..m {
        for j in 0..m {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for k in 0..n {
                let row = (i * n + k) * dim + j * n;
                for l in 0..n {
                    out.data[row + l] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Kronecker product of state vectors.
pub fn kron_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter()
        .flat_map(|&x| b.iter().map(move |&y| x * y))
        .collect()
}

fn check_qubits(mat: &CMatrix, qubits: &[usize], n_qubits: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > 10 || mat.dim != 1 << n_qubits {
        return Err(Error::invalid(format!(
            "matrix of dim {} does not describe {n_qubits} qubits",
            mat.dim
        )));
    }
    for (idx, &q) in qubits.iter().enumerate() {
        if q >= n_qubits {
            return Err(Error::invalid(format!(
                "qubit index {q} out of range for {n_qubits} qubits"
            )));
        }
        if qubits[..idx].contains(&q) {
            return Err(Error::invalid(format!("qubit index {q} repeated")));
        }
    }
    Ok(())
}

/// Bit mask selecting the given qubits of an `n_qubits` basis index.
fn qubit_mask(qubits: &[usize], n_qubits: usize) -> usize {
    qubits
        .iter()
        .fold(0, |m, &q| m | (1 << (n_qubits - 1 - q)))
}

/// Extracts the bits under `mask` from `index` and packs them, preserving
/// their relative significance.
fn gather_bits(index: usize, mask: usize, n_qubits: usize) -> usize {
    let mut out = 0;
    for bit in (0..n_qubits).rev() {
        if mask & (1 << bit) != 0 {
            out = (out << 1) | ((index >> bit) & 1);
        }
    }
    out
}

/// Reduced state on the qubits in `keep`, in ascending qubit order.
pub fn partial_trace(rho: &CMatrix, keep: &[usize], n_qubits: usize) -> Result<CMatrix> {
    check_qubits(rho, keep, n_qubits)?;
    if keep.is_empty() {
        return Err(Error::invalid("partial_trace needs at least one kept qubit"));
    }
    let mut sorted = keep.to_vec();
    sorted.sort_unstable();
    let keep_mask = qubit_mask(&sorted, n_qubits);
    let trace_mask = (rho.dim - 1) & !keep_mask;
    let out_dim = 1 << sorted.len();
    let mut out = CMatrix::zeros(out_dim);
    for r in 0..rho.dim {
        for c in 0..rho.dim {
            if r & trace_mask != c & trace_mask {
                continue;
            }
            let i = gather_bits(r, keep_mask, n_qubits);
            let j = gather_bits(c, keep_mask, n_qubits);
            out[(i, j)] += rho[(r, c)];
        }
    }
    Ok(out)
}

/// Transposes the indices of the qubits in `part`, leaving the rest untouched.
pub fn partial_transpose(rho: &CMatrix, part: &[usize], n_qubits: usize) -> Result<CMatrix> {
    check_qubits(rho, part, n_qubits)?;
    let mask = qubit_mask(part, n_qubits);
    let mut out = CMatrix::zeros(rho.dim);
    for r in 0..rho.dim {
        for c in 0..rho.dim {
            let r2 = (r & !mask) | (c & mask);
            let c2 = (c & !mask) | (r & mask);
            out[(r2, c2)] = rho[(r, c)];
        }
    }
    Ok(out)
}

/// Reorders tensor factors: qubit `order[k]` of the input becomes qubit `k`
/// of the output. `order` must be a permutation of `0..n_qubits`.
pub fn permute_qubits(rho: &CMatrix, order: &[usize], n_qubits: usize) -> Result<CMatrix> {
    check_qubits(rho, order, n_qubits)?;
    if order.len() != n_qubits {
        return Err(Error::invalid("permutation must list every qubit once"));
    }
    let map = |idx: usize| {
        let mut out = 0;
        for &src in order {
            out = (out << 1) | ((idx >> (n_qubits - 1 - src)) & 1);
        }
        out
    };
    let mut out = CMatrix::zeros(rho.dim);
    for r in 0..rho.dim {
        for c in 0..rho.dim {
            out[(map(r), map(c))] = rho[(r, c)];
        }
    }
    Ok(out)
}

/// Eigendecomposition of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct EigResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector for `eigenvalues[k]`.
    pub eigenvectors: CMatrix,
}

impl EigResult {
    pub fn eigenvector(&self, k: usize) -> Vec<C64> {
        (0..self.eigenvectors.dim)
            .map(|i| self.eigenvectors[(i, k)])
            .collect()
    }

    /// `Σ λ_k |φ_k><φ_k|`
    pub fn reconstruct(&self) -> CMatrix {
        reconstruct_from(&self.eigenvalues, &self.eigenvectors)
    }
}

pub(crate) fn reconstruct_from(eigenvalues: &[f64], vectors: &CMatrix) -> CMatrix {
    let n = vectors.dim;
    CMatrix::from_fn(n, |i, j| {
        (0..n)
            .map(|k| vectors[(i, k)] * vectors[(j, k)].conj() * eigenvalues[k])
            .sum()
    })
}

const HERMITIAN_INPUT_TOL: f64 = 1e-9;
const JACOBI_MAX_SWEEPS: usize = 64;

/// Cyclic complex Jacobi eigensolver for small Hermitian matrices.
///
/// Each rotation first removes the phase of the pivot with a diagonal unitary
/// and then applies a real Givens rotation, so the accumulated transform stays
/// unitary and eigenvectors come out orthonormal without a separate
/// orthogonalization pass.
pub fn hermitian_eig(h: &CMatrix) -> Result<EigResult> {
    let err = h.hermiticity_error();
    if !(err <= HERMITIAN_INPUT_TOL) {
        return Err(Error::invalid(format!(
            "matrix is not Hermitian (max |H - H†| = {err:e})"
        )));
    }
    let n = h.dim;
    let mut a = h.hermitian_part();
    let mut v = CMatrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r <= 1e-300 || r <= 1e-18 * scale {
                    continue;
                }
                let phase = apq / r;
                let (app, aqq) = (a[(p, p)].re, a[(q, q)].re);
                let beta = (aqq - app) / (2.0 * r);
                let t = if beta >= 0.0 {
                    1.0 / (beta + (beta * beta + 1.0).sqrt())
                } else {
                    1.0 / (beta - (beta * beta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // U = diag(1, conj(phase)) · [[c, s], [-s, c]]
                let u00 = C64::new(c, 0.0);
                let u01 = C64::new(s, 0.0);
                let u10 = -phase.conj() * s;
                let u11 = phase.conj() * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = akp * u00 + akq * u10;
                    a[(k, q)] = akp * u01 + akq * u11;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = u00.conj() * apk + u10.conj() * aqk;
                    a[(q, k)] = u01.conj() * apk + u11.conj() * aqk;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)].im = 0.0;
                a[(q, q)].im = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = vkp * u00 + vkq * u10;
                    v[(k, q)] = vkp * u01 + vkq * u11;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(x, x)].re.total_cmp(&a[(y, y)].re));
    let eigenvalues = order.iter().map(|&k| a[(k, k)].re).collect();
    let eigenvectors = CMatrix::from_fn(n, |i, j| v[(i, order[j])]);
    Ok(EigResult {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigenvalues only, ascending.
pub fn hermitian_eigenvalues(h: &CMatrix) -> Result<Vec<f64>> {
    hermitian_eig(h).map(|e| e.eigenvalues)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn ghz() -> CMatrix {
        let mut v = vec![ZERO; 8];
        v[0] = c(std::f64::consts::FRAC_1_SQRT_2);
        v[7] = c(std::f64::consts::FRAC_1_SQRT_2);
        CMatrix::projector(&v)
    }

    /// Reduction by explicit summation over the traced-out basis states.
    fn trace_first_qubit_oracle(rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(2);
        for a in 0..2 {
            for a2 in 0..2 {
                for b in 0..2 {
                    for cc in 0..2 {
                        out[(a, a2)] += rho[(4 * a + 2 * b + cc, 4 * a2 + 2 * b + cc)];
                    }
                }
            }
        }
        out
    }

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let m = CMatrix::from_fn(n, |_, _| C64::new(next(), next()));
        m.hermitian_part()
    }

    #[test]
    fn kron_identities() {
        assert_eq!(kron(&CMatrix::identity(2), &CMatrix::identity(2)), CMatrix::identity(4));
        let p0 = CMatrix::from_real_diag(&[1.0, 0.0]);
        let p1 = CMatrix::from_real_diag(&[0.0, 1.0]);
        assert_eq!(kron(&p0, &p1), CMatrix::from_real_diag(&[0.0, 1.0, 0.0, 0.0]));
        let z = CMatrix::from_real_diag(&[1.0, -1.0]);
        assert_eq!(
            kron(&z, &CMatrix::identity(2)),
            CMatrix::from_real_diag(&[1.0, 1.0, -1.0, -1.0])
        );
    }

    #[test]
    fn kron_is_associative() {
        let a = random_hermitian(2, 1);
        let b = random_hermitian(2, 2);
        let d = random_hermitian(4, 3);
        let left = kron(&kron(&a, &b), &d);
        let right = kron(&a, &kron(&b, &d));
        assert!(left.max_abs_diff(&right) <= 1e-14);
    }

    #[test]
    fn partial_trace_ghz_matches_summation_oracle() {
        let rho = ghz();
        let oracle = trace_first_qubit_oracle(&rho);
        let got = partial_trace(&rho, &[0], 3).unwrap();
        assert!(got.max_abs_diff(&oracle) < 1e-15);
        assert!(got.max_abs_diff(&CMatrix::from_real_diag(&[0.5, 0.5])) < 1e-15);
    }

    #[test]
    fn partial_trace_of_product_and_mixed() {
        let a = random_hermitian(2, 4);
        let b = random_hermitian(2, 5);
        let d = random_hermitian(2, 6);
        let prod = kron(&kron(&a, &b), &d);
        let (tb, td) = (b.trace(), d.trace());
        let got = partial_trace(&prod, &[0], 3).unwrap();
        assert!(got.max_abs_diff(&a.scale(tb * td)) < 1e-12);
        let got = partial_trace(&prod, &[0, 2], 3).unwrap();
        assert!(got.max_abs_diff(&kron(&a, &d).scale(tb)) < 1e-12);

        let mixed = CMatrix::identity(8).scale_real(0.125);
        let got = partial_trace(&mixed, &[1, 2], 3).unwrap();
        assert!(got.max_abs_diff(&CMatrix::identity(4).scale_real(0.25)) < 1e-15);
    }

    #[test]
    fn partial_trace_rejects_bad_shapes() {
        assert!(partial_trace(&CMatrix::identity(8), &[0], 2).is_err());
        assert!(partial_trace(&CMatrix::identity(8), &[3], 3).is_err());
        assert!(partial_trace(&CMatrix::identity(8), &[], 3).is_err());
        assert!(partial_transpose(&CMatrix::identity(4), &[0], 3).is_err());
    }

    #[test]
    fn partial_transpose_properties() {
        let h = random_hermitian(8, 9);
        for part in [&[0usize][..], &[1], &[2], &[0, 2]] {
            let pt = partial_transpose(&h, part, 3).unwrap();
            assert_eq!(partial_transpose(&pt, part, 3).unwrap(), h);
            assert!(pt.hermiticity_error() < 1e-15);
            assert!((pt.trace() - h.trace()).norm() < 1e-14);
        }
        let d = CMatrix::from_real_diag(&[0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(partial_transpose(&d, &[1], 3).unwrap(), d);
        let full = partial_transpose(&h, &[0, 1, 2], 3).unwrap();
        assert_eq!(full, h.transpose());
    }

    #[test]
    fn partial_transpose_ghz_min_eigenvalue() {
        let pt = partial_transpose(&ghz(), &[0], 3).unwrap();
        let ev = hermitian_eigenvalues(&pt).unwrap();
        assert!((ev[0] + 0.5).abs() < 1e-12, "{ev:?}");
    }

    #[test]
    fn eig_simple_cases() {
        let ev = hermitian_eigenvalues(&CMatrix::identity(8)).unwrap();
        assert!(ev.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        let ev = hermitian_eigenvalues(&CMatrix::from_real_diag(&[3.0, 1.0, 2.0, 0.0])).unwrap();
        assert_eq!(ev, vec![0.0, 1.0, 2.0, 3.0]);
        let ev = hermitian_eigenvalues(&ghz()).unwrap();
        for x in &ev[..7] {
            assert!(x.abs() < 1e-12);
        }
        assert!((ev[7] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let mut m = CMatrix::identity(2);
        m[(0, 1)] = c(1.0);
        assert!(hermitian_eig(&m).is_err());
    }

    #[test]
    fn eig_reconstructs_random_hermitian() {
        for (seed, n) in [(11, 2), (12, 4), (13, 8), (14, 16), (15, 32)] {
            let h = random_hermitian(n, seed);
            let eig = hermitian_eig(&h).unwrap();
            let scale = 1.0 + h.max_abs();
            assert!(eig.reconstruct().max_abs_diff(&h) <= 1e-10 * scale);
            let gram = eig.eigenvectors.adjoint().matmul(&eig.eigenvectors);
            assert!(gram.max_abs_diff(&CMatrix::identity(n)) <= 1e-10);
            assert!(eig.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
            let sum: f64 = eig.eigenvalues.iter().sum();
            assert!((sum - h.trace().re).abs() <= 1e-10);
        }
    }

    #[test]
    fn eig_handles_degenerate_spectrum() {
        let mut v = vec![ZERO; 8];
        v[3] = c(0.6);
        v[5] = C64::new(0.0, 0.8);
        let h = &CMatrix::identity(8) + &CMatrix::projector(&v).scale_real(2.0);
        let eig = hermitian_eig(&h).unwrap();
        assert!(eig.reconstruct().max_abs_diff(&h) < 1e-12);
        let gram = eig.eigenvectors.adjoint().matmul(&eig.eigenvectors);
        assert!(gram.max_abs_diff(&CMatrix::identity(8)) < 1e-12);
    }

    #[test]
    fn permute_qubits_moves_factors() {
        let a = random_hermitian(2, 21);
        let b = random_hermitian(2, 22);
        let d = random_hermitian(2, 23);
        let abd = kron(&kron(&a, &b), &d);
        let dab = permute_qubits(&abd, &[2, 0, 1], 3).unwrap();
        assert!(dab.max_abs_diff(&kron(&kron(&d, &a), &b)) < 1e-15);
    }
}
