//! Small-dimension complex linear algebra.
//!
//! Everything here works on dense row-major matrices of dimension at most
//! [`MAX_DIM`]. Spin-1/2 observables are built with [`spin_operator`];
//! eigenbases come from a cyclic complex Jacobi solver in
//! [`spectral_decompose`].

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest dimension accepted by [`spectral_decompose`].
pub const MAX_DIM: usize = 16;

/// Tolerance for algebraic identities at the dimensions used here.
pub const TOLERANCE: f64 = 1e-12;

const MAX_SWEEPS: usize = 64;

/// A normalized vector in a `dim`-dimensional Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    components: Vec<Complex64>,
}

impl StateVector {
    /// Builds a state from raw amplitudes, rescaling to unit norm.
    pub fn new(components: Vec<Complex64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if components
            .iter()
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::NonFinite("state amplitudes"));
        }
        let norm = components.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(Self {
            components: components.into_iter().map(|c| c / norm).collect(),
        })
    }

    /// Real amplitudes, normalized.
    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    /// The `index`-th computational basis vector.
    pub fn basis(dim: usize, index: usize) -> Self {
        assert!(
            index < dim,
            "basis index {index} out of range for dim {dim}"
        );
        let mut components = vec![Complex64::new(0.0, 0.0); dim];
        components[index] = Complex64::new(1.0, 0.0);
        Self { components }
    }

    /// `|↑⟩`, the +1 eigenvector of σ_z.
    pub fn spin_up() -> Self {
        Self::basis(2, 0)
    }

    /// `|↓⟩`, the −1 eigenvector of σ_z.
    pub fn spin_down() -> Self {
        Self::basis(2, 1)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Complex64] {
        &self.components
    }

    pub fn norm_sqr(&self) -> f64 {
        self.components.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Tensor product `self ⊗ other`, with `self` as the slow index.
    pub fn kron(&self, other: &StateVector) -> StateVector {
        let components = self
            .components
            .iter()
            .flat_map(|a| other.components.iter().map(move |b| a * b))
            .collect();
        StateVector { components }
    }
}

/// A Hermitian matrix stored row-major.
///
/// The lower triangle is always the exact conjugate of the upper triangle and
/// the diagonal is exactly real.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    dim: usize,
    entries: Vec<Complex64>,
}

impl HermitianOperator {
    /// Validates Hermiticity within [`TOLERANCE`] and stores the exactly
    /// symmetrized matrix.
    pub fn new(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        check_dim(dim * dim, entries.len())?;
        if entries
            .iter()
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::NonFinite("operator entries"));
        }
        for i in 0..dim {
            for j in i..dim {
                let deviation = (entries[i * dim + j] - entries[j * dim + i].conj()).norm();
                if deviation > TOLERANCE {
                    return Err(Error::NotHermitian {
                        row: i,
                        col: j,
                        deviation,
                    });
                }
            }
        }
        Ok(Self::symmetrized(dim, entries))
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let dim = rows.len();
        for row in rows {
            check_dim(dim, row.len())?;
        }
        Self::new(dim, rows.iter().flatten().copied().collect())
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<Complex64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    /// Keeps the upper triangle and mirrors it.
    fn symmetrized(dim: usize, mut entries: Vec<Complex64>) -> Self {
        for i in 0..dim {
            entries[i * dim + i].im = 0.0;
            for j in (i + 1)..dim {
                entries[j * dim + i] = entries[i * dim + j].conj();
            }
        }
        Self { dim, entries }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let dim = values.len();
        let mut entries = vec![Complex64::new(0.0, 0.0); dim * dim];
        for (i, &v) in values.iter().enumerate() {
            entries[i * dim + i] = Complex64::new(v, 0.0);
        }
        Self { dim, entries }
    }

    pub fn pauli_x() -> Self {
        let (o, l) = (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0));
        Self::symmetrized(2, vec![o, l, l, o])
    }

    pub fn pauli_y() -> Self {
        let o = Complex64::new(0.0, 0.0);
        Self::symmetrized(2, vec![o, -Complex64::i(), Complex64::i(), o])
    }

    pub fn pauli_z() -> Self {
        Self::diagonal(&[1.0, -1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.entry(i, i).re).sum()
    }

    /// `self ⊗ other` acting on the product space.
    pub fn kron(&self, other: &HermitianOperator) -> HermitianOperator {
        let (n, m) = (self.dim, other.dim);
        let dim = n * m;
        let mut entries = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..n {
            for j in 0..n {
                let a = self.entry(i, j);
                for k in 0..m {
                    for l in 0..m {
                        entries[(i * m + k) * dim + (j * m + l)] = a * other.entry(k, l);
                    }
                }
            }
        }
        Self::symmetrized(dim, entries)
    }

    /// Largest absolute entry difference to another operator.
    pub fn max_abs_diff(&self, other: &HermitianOperator) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// A measurement direction in polar coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Direction {
    theta: f64,
    phi: f64,
}

impl Direction {
    /// `theta` must lie in `[0, π]`; `phi` is reduced to `[0, 2π)`.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() || !(0.0..=PI).contains(&theta) {
            return Err(Error::InvalidDirection { theta, phi });
        }
        let mut phi = phi.rem_euclid(TAU);
        if phi >= TAU || theta == 0.0 {
            phi = 0.0;
        }
        Ok(Self { theta, phi })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }
}

/// `S(n) = sinθ cosφ σx + sinθ sinφ σy + cosθ σz`.
pub fn spin_operator(n: Direction) -> HermitianOperator {
    let (st, ct) = n.theta.sin_cos();
    let off = Complex64::from_polar(st, -n.phi);
    HermitianOperator::symmetrized(
        2,
        vec![
            Complex64::new(ct, 0.0),
            off,
            off.conj(),
            Complex64::new(-ct, 0.0),
        ],
    )
}

/// `⟨bra|op|ket⟩`.
///
/// Terms are summed as the diagonal followed by `(i,j)+(j,i)` pairs, so
/// swapping `bra` and `ket` yields the exact complex conjugate.
pub fn matrix_element(
    bra: &StateVector,
    op: &HermitianOperator,
    ket: &StateVector,
) -> Result<Complex64> {
    check_dim(op.dim, bra.dim())?;
    check_dim(op.dim, ket.dim())?;
    let (b, k) = (bra.components(), ket.components());
    let term = |i: usize, j: usize| op.entry(i, j) * (b[i].conj() * k[j]);
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..op.dim {
        acc += term(i, i);
        for j in (i + 1)..op.dim {
            acc += term(i, j) + term(j, i);
        }
    }
    Ok(acc)
}

/// `⟨state|op|state⟩`, which is real for Hermitian `op`.
pub fn expectation(state: &StateVector, op: &HermitianOperator) -> Result<f64> {
    Ok(matrix_element(state, op, state)?.re)
}

/// Eigenvalues in ascending order with matching orthonormal eigenvectors.
///
/// Each eigenvector has its largest-magnitude component (first one on ties)
/// real and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<StateVector>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &[StateVector] {
        &self.eigenvectors
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// `Σ_j A_j f_j f_j†`.
    pub fn reconstruct(&self) -> HermitianOperator {
        let n = self.dim();
        let mut entries = vec![Complex64::new(0.0, 0.0); n * n];
        for (value, vector) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            let f = vector.components();
            for i in 0..n {
                for j in 0..n {
                    entries[i * n + j] += f[i] * f[j].conj() * *value;
                }
            }
        }
        HermitianOperator::symmetrized(n, entries)
    }
}

/// Diagonalizes `op` by cyclic complex Jacobi rotations.
pub fn spectral_decompose(op: &HermitianOperator) -> Result<SpectralDecomposition> {
    let n = op.dim;
    if n > MAX_DIM {
        return Err(Error::TooLarge(n));
    }
    let mut a = op.entries.clone();
    let mut v = HermitianOperator::identity(n).entries;
    let at = |i: usize, j: usize| i * n + j;

    for sweep in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[at(p, q)].norm_sqr())
            .sum();
        if off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let z = a[at(p, q)];
                let g = z.norm();
                let (app, aqq) = (a[at(p, p)].re, a[at(q, q)].re);
                if g == 0.0 {
                    continue;
                }
                if sweep > 3
                    && app.abs() + 100.0 * g == app.abs()
                    && aqq.abs() + 100.0 * g == aqq.abs()
                {
                    a[at(p, q)] = Complex64::new(0.0, 0.0);
                    a[at(q, p)] = Complex64::new(0.0, 0.0);
                    continue;
                }
                let theta = (aqq - app) / (2.0 * g);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let sign = if theta < 0.0 { -1.0 } else { 1.0 };
                    sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // V = diag(1, e^{-iβ}) · [[c, s], [-s, c]] restricted to (p, q).
                let phase = z.conj() / g;
                let vpp = Complex64::new(c, 0.0);
                let vpq = Complex64::new(s, 0.0);
                let vqp = phase * -s;
                let vqq = phase * c;

                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let (akp, akq) = (a[at(k, p)], a[at(k, q)]);
                    let new_kp = akp * vpp + akq * vqp;
                    let new_kq = akp * vpq + akq * vqq;
                    a[at(k, p)] = new_kp;
                    a[at(p, k)] = new_kp.conj();
                    a[at(k, q)] = new_kq;
                    a[at(q, k)] = new_kq.conj();
                }
                a[at(p, p)] = Complex64::new(app - t * g, 0.0);
                a[at(q, q)] = Complex64::new(aqq + t * g, 0.0);
                a[at(p, q)] = Complex64::new(0.0, 0.0);
                a[at(q, p)] = Complex64::new(0.0, 0.0);

                for k in 0..n {
                    let (ekp, ekq) = (v[at(k, p)], v[at(k, q)]);
                    v[at(k, p)] = ekp * vpp + ekq * vqp;
                    v[at(k, q)] = ekp * vpq + ekq * vqq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[at(i, i)].re.total_cmp(&a[at(j, j)].re));

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Vec::with_capacity(n);
    for col in order {
        eigenvalues.push(a[at(col, col)].re);
        let column: Vec<Complex64> = (0..n).map(|k| v[at(k, col)]).collect();
        eigenvectors.push(StateVector::new(fix_phase(column))?);
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Rotates the vector so its largest component is real and positive.
fn fix_phase(mut column: Vec<Complex64>) -> Vec<Complex64> {
    let largest = column.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if largest == 0.0 {
        return column;
    }
    let pivot = column
        .iter()
        .position(|c| c.norm() >= largest * (1.0 - 1e-12))
        .unwrap_or(0);
    let rotation = column[pivot].conj() / column[pivot].norm();
    for c in &mut column {
        *c *= rotation;
    }
    column[pivot] = Complex64::new(column[pivot].re, 0.0);
    column
}

/// `c_j = ⟨f_j|state⟩` in the order of the decomposition.
pub fn overlap_coefficients(
    state: &StateVector,
    basis: &SpectralDecomposition,
) -> Result<Vec<Complex64>> {
    check_dim(basis.dim(), state.dim())?;
    basis.eigenvectors.iter().map(|f| f.inner(state)).collect()
}

/// Born weights `w_j = |c_j|²`.
pub fn born_weights(state: &StateVector, basis: &SpectralDecomposition) -> Result<Vec<f64>> {
    Ok(overlap_coefficients(state, basis)?
        .iter()
        .map(|c| c.norm_sqr())
        .collect())
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        let u1 = 1.0 - uniform(rng);
        let u2 = uniform(rng);
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    pub fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> StateVector {
        StateVector::new(
            (0..dim)
                .map(|_| Complex64::new(gauss(rng), gauss(rng)))
                .collect(),
        )
        .unwrap()
    }

    pub fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize) -> HermitianOperator {
        let mut entries = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = Complex64::new(gauss(rng), 0.0);
            for j in (i + 1)..dim {
                let z = Complex64::new(gauss(rng), gauss(rng));
                entries[i * dim + j] = z;
                entries[j * dim + i] = z.conj();
            }
        }
        HermitianOperator::new(dim, entries).unwrap()
    }

    pub fn random_direction(rng: &mut ChaCha8Rng) -> Direction {
        Direction::new(PI * uniform(rng), TAU * uniform(rng)).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn assert_close(a: Complex64, b: Complex64, tol: f64) {
        assert!((a - b).norm() < tol, "{a} != {b}");
    }

    #[test]
    fn spin_operator_along_axes() {
        let z = spin_operator(Direction::new(0.0, 0.0).unwrap());
        assert_eq!(z, HermitianOperator::pauli_z());

        let x = spin_operator(Direction::new(PI / 2.0, 0.0).unwrap());
        assert!(x.max_abs_diff(&HermitianOperator::pauli_x()) < 1e-15);

        let y = spin_operator(Direction::new(PI / 2.0, PI / 2.0).unwrap());
        assert!(y.max_abs_diff(&HermitianOperator::pauli_y()) < 1e-15);
    }

    #[test]
    fn spin_operator_is_traceless_with_unit_eigenvalues() {
        let op = spin_operator(Direction::new(PI / 3.0, PI / 4.0).unwrap());
        assert!(op.trace().abs() < 1e-15);
        let decomp = spectral_decompose(&op).unwrap();
        assert!((decomp.eigenvalues()[0] + 1.0).abs() < TOLERANCE);
        assert!((decomp.eigenvalues()[1] - 1.0).abs() < TOLERANCE);
        assert!(decomp.reconstruct().max_abs_diff(&op) < TOLERANCE);
    }

    #[test]
    fn spin_matrix_elements() {
        let (up, down) = (StateVector::spin_up(), StateVector::spin_down());
        for &(theta, phi) in &[(0.3, 1.1), (PI / 3.0, PI / 4.0), (2.9, 5.5)] {
            let op = spin_operator(Direction::new(theta, phi).unwrap());
            assert_close(
                matrix_element(&up, &op, &up).unwrap(),
                c(theta.cos(), 0.0),
                1e-15,
            );
            assert_close(
                matrix_element(&down, &op, &down).unwrap(),
                c(-theta.cos(), 0.0),
                1e-15,
            );
            // Standard Pauli matrices put e^{-iφ} on ⟨↑|S|↓⟩ and e^{+iφ} on ⟨↓|S|↑⟩.
            assert_close(
                matrix_element(&up, &op, &down).unwrap(),
                Complex64::from_polar(theta.sin(), -phi),
                1e-15,
            );
            assert_close(
                matrix_element(&down, &op, &up).unwrap(),
                Complex64::from_polar(theta.sin(), phi),
                1e-15,
            );
        }
    }

    #[test]
    fn matrix_element_conjugate_symmetry_is_exact() {
        let mut r = rng(7);
        for dim in [2, 3, 4] {
            for _ in 0..200 {
                let op = random_hermitian(&mut r, dim);
                let (u, v) = (random_state(&mut r, dim), random_state(&mut r, dim));
                let uv = matrix_element(&u, &op, &v).unwrap();
                let vu = matrix_element(&v, &op, &u).unwrap();
                assert_eq!(uv, vu.conj());
            }
        }
    }

    #[test]
    fn matrix_element_rejects_mismatched_dims() {
        let op = HermitianOperator::identity(3);
        let err = matrix_element(&StateVector::spin_up(), &op, &StateVector::spin_up());
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn sigma_z_decomposition() {
        let decomp = spectral_decompose(&HermitianOperator::pauli_z()).unwrap();
        assert_eq!(decomp.eigenvalues(), &[-1.0, 1.0]);
        assert_eq!(decomp.eigenvectors()[0], StateVector::spin_down());
        assert_eq!(decomp.eigenvectors()[1], StateVector::spin_up());
    }

    #[test]
    fn zero_matrix_is_degenerate_but_reconstructs() {
        let zero = HermitianOperator::diagonal(&[0.0, 0.0]);
        let decomp = spectral_decompose(&zero).unwrap();
        assert_eq!(decomp.eigenvalues(), &[0.0, 0.0]);
        assert!(decomp.reconstruct().max_abs_diff(&zero) < TOLERANCE);
        let overlap = decomp.eigenvectors()[0]
            .inner(&decomp.eigenvectors()[1])
            .unwrap();
        assert!(overlap.norm() < TOLERANCE);
    }

    #[test]
    fn spectral_reconstruction_random() {
        let mut r = rng(11);
        for dim in [2, 4] {
            for _ in 0..1000 {
                let op = random_hermitian(&mut r, dim);
                let decomp = spectral_decompose(&op).unwrap();
                assert!(decomp.reconstruct().max_abs_diff(&op) < 1e-10);
                assert!(decomp.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
                for (i, fi) in decomp.eigenvectors().iter().enumerate() {
                    for (j, fj) in decomp.eigenvectors().iter().enumerate() {
                        let expected = if i == j { 1.0 } else { 0.0 };
                        assert!((fi.inner(fj).unwrap() - expected).norm() < TOLERANCE);
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_spectrum_in_larger_dimension() {
        let mut op = HermitianOperator::diagonal(&[2.0, 2.0, -1.0, 2.0, 0.5]);
        let mut r = rng(3);
        // Conjugate by a random unitary built from a Hermitian eigenbasis.
        let basis = spectral_decompose(&random_hermitian(&mut r, 5)).unwrap();
        let n = 5;
        let mut entries = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let uik = basis.eigenvectors()[k].components()[i];
                    let ujk = basis.eigenvectors()[k].components()[j];
                    entries[i * n + j] += uik * op.entry(k, k) * ujk.conj();
                }
            }
        }
        op = HermitianOperator::new(n, entries).unwrap();
        let decomp = spectral_decompose(&op).unwrap();
        let expected = [-1.0, 0.5, 2.0, 2.0, 2.0];
        for (a, b) in decomp.eigenvalues().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(decomp.reconstruct().max_abs_diff(&op) < 1e-12);
    }

    #[test]
    fn eigenvector_phase_convention() {
        let mut r = rng(5);
        for _ in 0..100 {
            let decomp = spectral_decompose(&random_hermitian(&mut r, 3)).unwrap();
            for f in decomp.eigenvectors() {
                let largest = f.components().iter().map(|c| c.norm()).fold(0.0, f64::max);
                let pivot = f
                    .components()
                    .iter()
                    .find(|c| c.norm() >= largest * (1.0 - 1e-12))
                    .unwrap();
                assert_eq!(pivot.im, 0.0);
                assert!(pivot.re > 0.0);
            }
        }
    }

    #[test]
    fn rejects_non_hermitian_and_oversized() {
        let err = HermitianOperator::from_rows(&[
            vec![c(1.0, 0.0), c(0.0, 1.0)],
            vec![c(0.0, 1.0), c(1.0, 0.0)],
        ]);
        assert!(matches!(err, Err(Error::NotHermitian { .. })));
        let big = HermitianOperator::identity(MAX_DIM + 1);
        assert!(matches!(spectral_decompose(&big), Err(Error::TooLarge(17))));
    }

    #[test]
    fn overlaps_in_spin_bases() {
        let z = spectral_decompose(&HermitianOperator::pauli_z()).unwrap();
        let cz = overlap_coefficients(&StateVector::spin_up(), &z).unwrap();
        assert_eq!(cz, vec![c(0.0, 0.0), c(1.0, 0.0)]);

        for &theta in &[0.0, 0.4, PI / 3.0, PI / 2.0, 2.5, PI] {
            let basis =
                spectral_decompose(&spin_operator(Direction::new(theta, 0.0).unwrap())).unwrap();
            let half = theta / 2.0;
            let w_up = born_weights(&StateVector::spin_up(), &basis).unwrap();
            assert!((w_up[0] - half.sin().powi(2)).abs() < TOLERANCE);
            assert!((w_up[1] - half.cos().powi(2)).abs() < TOLERANCE);

            // Brute-force inner products with the analytic eigenvectors of S(θ, 0).
            let f_minus = StateVector::from_real(&[-half.sin(), half.cos()]).unwrap();
            let f_plus = StateVector::from_real(&[half.cos(), half.sin()]).unwrap();
            let down = StateVector::spin_down();
            let w_down = born_weights(&down, &basis).unwrap();
            assert!((w_down[0] - f_minus.inner(&down).unwrap().norm_sqr()).abs() < TOLERANCE);
            assert!((w_down[1] - f_plus.inner(&down).unwrap().norm_sqr()).abs() < TOLERANCE);
            assert!((w_down[0] - half.cos().powi(2)).abs() < TOLERANCE);
        }
    }

    #[test]
    fn overlap_completeness_random() {
        let mut r = rng(13);
        for dim in [2, 3, 4] {
            for _ in 0..300 {
                let basis = spectral_decompose(&random_hermitian(&mut r, dim)).unwrap();
                let state = random_state(&mut r, dim);
                let total: f64 = born_weights(&state, &basis).unwrap().iter().sum();
                assert!((total - 1.0).abs() < TOLERANCE);
            }
        }
    }

    #[test]
    fn direction_validation_and_canonical_phi() {
        assert!(Direction::new(-0.1, 0.0).is_err());
        assert!(Direction::new(PI + 0.1, 0.0).is_err());
        assert!(Direction::new(f64::NAN, 0.0).is_err());
        assert_eq!(Direction::new(0.0, 1.3).unwrap().phi(), 0.0);
        let d = Direction::new(1.0, -PI / 2.0).unwrap();
        assert!((d.phi() - 1.5 * PI).abs() < 1e-15);
        assert!(Direction::new(1.0, TAU).unwrap().phi() < TAU);
    }

    #[test]
    fn state_normalization() {
        let s = StateVector::new(vec![c(3.0, 0.0), c(0.0, 4.0)]).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < TOLERANCE);
        assert_eq!(StateVector::from_real(&[0.0, 0.0]), Err(Error::ZeroNorm));
    }
}
