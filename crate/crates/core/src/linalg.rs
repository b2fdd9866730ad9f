//! Dense complex linear algebra primitives shared by the numeric modules.
//!
//! Everything here is a thin, validated layer over `nalgebra`'s
//! `DMatrix<Complex64>`: Hermitian spectral decompositions, principal square
//! roots, tensor products, half-plane membership, and the trace-simplex
//! projection used by the capacity optimizer. All tolerances are relative to
//! the spectral norm of the input unless stated absolute.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

/// Dense complex matrix, the working representation throughout the crate.
pub type CMat = DMatrix<Complex64>;
/// Dense complex vector.
pub type CVec = DVector<Complex64>;

/// Relative tolerance for Hermitian validation.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues above `-PSD_CLAMP * norm` are clamped to zero in PSD
/// operations; anything below `-PSD_REJECT * norm` is rejected as not PSD.
pub const PSD_CLAMP: f64 = 1e-12;
pub const PSD_REJECT: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

/// Identity matrix of size `n`.
pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// `z * I_n` for a complex scalar `z`.
pub fn scalar_matrix(n: usize, z: Complex64) -> CMat {
    CMat::from_diagonal_element(n, n, z)
}

/// Largest entry magnitude (sup norm on entries).
pub fn sup_norm(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Spectral-norm scale estimate used for relative tolerances. The Frobenius
/// norm upper-bounds the spectral norm and is cheap; the factor is irrelevant
/// at the tolerances involved.
fn norm_scale(m: &CMat) -> f64 {
    m.norm().max(1e-300)
}

/// Normalized trace `tr(M)/n`.
pub fn normalized_trace(m: &CMat) -> Complex64 {
    m.trace() / Complex64::new(m.nrows() as f64, 0.0)
}

/// True if every entry is finite.
pub fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Inverse with a structured error instead of a panic.
pub fn try_inverse(m: &CMat, what: &str) -> Result<CMat> {
    m.clone()
        .try_inverse()
        .filter(all_finite_owned)
        .ok_or_else(|| Error::Numeric(format!("singular matrix while inverting {what}")))
}

fn all_finite_owned(m: &CMat) -> bool {
    all_finite(m)
}

// ---------------------------------------------------------------------------
// Validated domain types
// ---------------------------------------------------------------------------

/// A square matrix equal to its conjugate transpose within `1e-12` relative.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(CMat);

impl HermitianMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Domain(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if !all_finite(&m) {
            return Err(Error::Domain("matrix has non-finite entries".into()));
        }
        let dev = sup_norm(&(&m - m.adjoint()));
        if dev > HERMITIAN_TOL * norm_scale(&m).max(1.0) {
            return Err(Error::Domain(format!(
                "matrix is not Hermitian: |M - M*| = {dev:.3e}"
            )));
        }
        // Symmetrize so downstream eigensolves see an exactly Hermitian input.
        let sym = (&m + m.adjoint()).scale(0.5);
        Ok(Self(sym))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &CMat {
        &self.0
    }

    pub fn into_inner(self) -> CMat {
        self.0
    }
}

/// A Hermitian matrix whose eigenvalues are all `>= -1e-12 * norm` (tiny
/// negatives are clamped to zero on construction).
#[derive(Clone, Debug, PartialEq)]
pub struct PsdMatrix {
    mat: CMat,
    eigenvalues: DVector<f64>,
    eigenvectors: CMat,
}

impl PsdMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        let herm = HermitianMatrix::new(m)?;
        let scale = norm_scale(herm.as_mat()).max(1.0);
        let (mut vals, vecs) = hermitian_eig(&herm);
        let min = vals.min();
        if min < -PSD_REJECT * scale {
            return Err(Error::Domain(format!(
                "matrix is not positive semidefinite: min eigenvalue {min:.3e}"
            )));
        }
        for v in vals.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let mat = recombine(&vals, &vecs, |x| x);
        Ok(Self {
            mat,
            eigenvalues: vals,
            eigenvectors: vecs,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(identity(n)).expect("identity is PSD")
    }

    /// `I_d / d`, the uniform point of the trace simplex.
    pub fn uniform(d: usize) -> Self {
        Self::new(identity(d).scale(1.0 / d as f64)).expect("uniform is PSD")
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_mat(&self) -> &CMat {
        &self.mat
    }

    pub fn into_inner(self) -> CMat {
        self.mat
    }

    /// Eigenvalues in ascending order (clamped, all `>= 0`).
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn trace_re(&self) -> f64 {
        self.mat.trace().re
    }
}

/// A square matrix whose imaginary part `(M - M*)/(2i)` is positive definite.
#[derive(Clone, Debug)]
pub struct UpperHalfPlaneMatrix(CMat);

impl UpperHalfPlaneMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Domain("upper-half-plane matrix must be square".into()));
        }
        let im = imag_part(&m)?;
        let min = min_eigenvalue(&im);
        if min <= 0.0 {
            return Err(Error::Domain(format!(
                "imaginary part is not positive definite: min eigenvalue {min:.3e}"
            )));
        }
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &CMat {
        &self.0
    }

    pub fn into_inner(self) -> CMat {
        self.0
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Spectral decomposition of a Hermitian matrix: eigenvalues ascending, the
/// columns of the returned matrix are the matching orthonormal eigenvectors,
/// so `M = V diag(lambda) V*`.
pub fn hermitian_eig(m: &HermitianMatrix) -> (DVector<f64>, CMat) {
    let eig = m.as_mat().clone().symmetric_eigen();
    let n = m.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Eigenvalues only, ascending, of a matrix assumed Hermitian (no validation;
/// the caller guarantees symmetry or accepts the symmetrized spectrum).
pub fn hermitian_eigenvalues_unchecked(m: &CMat) -> DVector<f64> {
    let sym = (m + m.adjoint()).scale(0.5);
    let mut vals: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    DVector::from_vec(vals)
}

fn min_eigenvalue(m: &HermitianMatrix) -> f64 {
    m.as_mat().symmetric_eigenvalues().min()
}

fn recombine(vals: &DVector<f64>, vecs: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let d = CMat::from_diagonal(&vals.map(|x| Complex64::new(f(x), 0.0)));
    vecs * d * vecs.adjoint()
}

/// Principal (PSD) square root: the unique PSD `S` with `S S = M`.
pub fn principal_sqrt(m: &PsdMatrix) -> PsdMatrix {
    let mat = recombine(m.eigenvalues(), &m.eigenvectors, f64::sqrt);
    PsdMatrix::new(mat).expect("square root of PSD is PSD")
}

/// Imaginary part `(M - M*)/(2i)`; exactly Hermitian by construction.
pub fn imag_part(m: &CMat) -> Result<HermitianMatrix> {
    if m.nrows() != m.ncols() {
        return Err(Error::Domain(format!(
            "imag_part needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let half_i = Complex64::new(0.0, -0.5); // 1/(2i)
    let im = (m - m.adjoint()).scale_complex(half_i);
    HermitianMatrix::new(im)
}

trait ScaleComplex {
    fn scale_complex(self, z: Complex64) -> CMat;
}
impl ScaleComplex for CMat {
    fn scale_complex(self, z: Complex64) -> CMat {
        self.map(|w| w * z)
    }
}

/// Sign of the imaginary part of a square matrix, used to dispatch Cauchy
/// transform evaluations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HalfPlane {
    Upper,
    Lower,
    /// Indefinite or degenerate imaginary part (boundary arguments such as
    /// `diag(I, B)` used by the tilde extraction).
    Boundary,
}

/// Classify which half plane `m` belongs to (strictly, via the sign of the
/// extreme eigenvalues of its imaginary part).
pub fn half_plane(m: &CMat) -> Result<HalfPlane> {
    let im = imag_part(m)?;
    let vals = im.as_mat().symmetric_eigenvalues();
    let (min, max) = (vals.min(), vals.max());
    if min > 0.0 {
        Ok(HalfPlane::Upper)
    } else if max < 0.0 {
        Ok(HalfPlane::Lower)
    } else {
        Ok(HalfPlane::Boundary)
    }
}

/// Tensor (Kronecker) product `A (x) B`: block `(i,j)` equals `A_ij * B`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Euclidean projection of a Hermitian matrix onto the trace simplex
/// `{Phi PSD, Tr Phi = 1}`: eigenvalues are projected onto the probability
/// simplex and recombined with the eigenvectors.
pub fn project_trace_simplex(m: &HermitianMatrix) -> PsdMatrix {
    let (vals, vecs) = hermitian_eig(m);
    let projected = project_simplex(vals.as_slice());
    let mat = recombine(&DVector::from_vec(projected), &vecs, |x| x);
    PsdMatrix::new(mat).expect("simplex projection is PSD")
}

/// Euclidean projection of a real vector onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Deterministic pseudo-random complex matrix for tests.
    fn rand_mat(n: usize, seed: u64) -> CMat {
        let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        CMat::from_fn(n, n, |_, _| c(next(), next()))
    }

    fn rand_hermitian(n: usize, seed: u64) -> HermitianMatrix {
        let m = rand_mat(n, seed);
        HermitianMatrix::new((&m + m.adjoint()).scale(0.5)).unwrap()
    }

    fn rand_psd(n: usize, seed: u64) -> PsdMatrix {
        let m = rand_mat(n, seed);
        PsdMatrix::new(&m * m.adjoint()).unwrap()
    }

    #[test]
    fn eig_identity() {
        let (vals, vecs) = hermitian_eig(&HermitianMatrix::new(identity(3)).unwrap());
        for v in vals.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(sup_norm(&(&vecs * vecs.adjoint() - identity(3))) < 1e-10);
    }

    #[test]
    fn eig_diagonal_sorted_ascending() {
        let m = CMat::from_diagonal(&CVec::from_vec(vec![c(2.0, 0.0), c(-1.0, 0.0)]));
        let (vals, _) = hermitian_eig(&HermitianMatrix::new(m).unwrap());
        assert!((vals[0] + 1.0).abs() < 1e-12);
        assert!((vals[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn eig_reconstructs_random_hermitian() {
        let h = rand_hermitian(5, 7);
        let (vals, vecs) = hermitian_eig(&h);
        let rec = recombine(&vals, &vecs, |x| x);
        let rel = sup_norm(&(&rec - h.as_mat())) / h.as_mat().norm();
        assert!(rel < 1e-10, "reconstruction residual {rel:.3e}");
        let unit = sup_norm(&(&vecs * vecs.adjoint() - identity(5)));
        assert!(unit < 1e-10, "eigenvectors not unitary: {unit:.3e}");
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let m = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(HermitianMatrix::new(m).is_err());
    }

    #[test]
    fn sqrt_identity_and_diagonal() {
        let s = principal_sqrt(&PsdMatrix::identity(4));
        assert!(sup_norm(&(s.as_mat() - identity(4))) < 1e-12);

        let m = CMat::from_diagonal(&CVec::from_vec(vec![c(4.0, 0.0), c(9.0, 0.0)]));
        let s = principal_sqrt(&PsdMatrix::new(m).unwrap());
        assert!((s.as_mat()[(0, 0)].re - 2.0).abs() < 1e-12);
        assert!((s.as_mat()[(1, 1)].re - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = rand_psd(4, 21);
        let s = principal_sqrt(&m);
        let rel = sup_norm(&(s.as_mat() * s.as_mat() - m.as_mat())) / m.as_mat().norm();
        assert!(rel < 1e-10, "sqrt residual {rel:.3e}");
    }

    #[test]
    fn psd_rejects_negative() {
        let m = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(-0.5, 0.0)]));
        assert!(PsdMatrix::new(m).is_err());
    }

    #[test]
    fn imag_part_examples() {
        // iI -> I
        let m = scalar_matrix(2, c(0.0, 1.0));
        let im = imag_part(&m).unwrap();
        assert!(sup_norm(&(im.as_mat() - identity(2))) < 1e-15);

        // real symmetric -> 0
        let m = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(3.0, 0.0)]);
        assert!(sup_norm(imag_part(&m).unwrap().as_mat()) < 1e-15);

        // [[i, 1], [-1, i]]: hand computation of (M - M*)/(2i) gives
        // [[1, -i], [i, 1]].
        let m = CMat::from_row_slice(2, 2, &[c(0.0, 1.0), c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 1.0)]);
        let im = imag_part(&m).unwrap();
        let expected =
            CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(1.0, 0.0)]);
        assert!(sup_norm(&(im.as_mat() - expected)) < 1e-15);

        assert!(imag_part(&CMat::zeros(2, 3)).is_err());
    }

    #[test]
    fn kron_identity_and_shift() {
        assert!(sup_norm(&(kron(&identity(2), &identity(3)) - identity(6))) < 1e-15);

        let e = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let k = kron(&e, &identity(2));
        assert_eq!(k.nrows(), 4);
        assert!((k[(0, 2)].re - 1.0).abs() < 1e-15);
        assert!((k[(1, 3)].re - 1.0).abs() < 1e-15);
        assert!(k[(0, 0)].norm() < 1e-15 && k[(2, 2)].norm() < 1e-15);
    }

    #[test]
    fn simplex_projection_examples() {
        // already feasible
        let u = PsdMatrix::uniform(3);
        let p = project_trace_simplex(&HermitianMatrix::new(u.as_mat().clone()).unwrap());
        assert!(sup_norm(&(p.as_mat() - u.as_mat())) < 1e-12);

        // diag(2, 0) -> diag(1, 0)
        let m = CMat::from_diagonal(&CVec::from_vec(vec![c(2.0, 0.0), c(0.0, 0.0)]));
        let p = project_trace_simplex(&HermitianMatrix::new(m).unwrap());
        assert!((p.as_mat()[(0, 0)].re - 1.0).abs() < 1e-12);
        assert!(p.as_mat()[(1, 1)].norm() < 1e-12);
    }

    #[test]
    fn simplex_projection_is_closest_feasible_point() {
        let h = rand_hermitian(3, 5);
        let p = project_trace_simplex(&h);
        assert!((p.trace_re() - 1.0).abs() < 1e-12);
        let dist = (h.as_mat() - p.as_mat()).norm();
        // No sampled feasible point may be strictly closer.
        for seed in 0..1000u64 {
            let q = rand_psd(3, 1000 + seed);
            let t = q.trace_re();
            if t < 1e-12 {
                continue;
            }
            let q = q.as_mat().scale(1.0 / t);
            assert!(
                (h.as_mat() - &q).norm() >= dist - 1e-9,
                "sampled feasible point closer than projection (seed {seed})"
            );
        }
    }

    #[test]
    fn half_plane_classification() {
        assert_eq!(half_plane(&scalar_matrix(2, c(1.0, 2.0))).unwrap(), HalfPlane::Upper);
        assert_eq!(half_plane(&scalar_matrix(2, c(1.0, -2.0))).unwrap(), HalfPlane::Lower);
        let mixed = CMat::from_diagonal(&CVec::from_vec(vec![c(0.0, 1.0), c(0.0, -1.0)]));
        assert_eq!(half_plane(&mixed).unwrap(), HalfPlane::Boundary);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_sqrt_roundtrip(seed in 0u64..500) {
            let m = rand_psd(4, seed);
            let s = principal_sqrt(&m);
            let rel = sup_norm(&(s.as_mat() * s.as_mat() - m.as_mat())) / m.as_mat().norm().max(1e-12);
            prop_assert!(rel < 1e-10);
        }

        #[test]
        fn prop_kron_mixed_product(seed in 0u64..500) {
            let a = rand_mat(2, seed);
            let b = rand_mat(3, seed + 1);
            let cm = rand_mat(2, seed + 2);
            let dm = rand_mat(3, seed + 3);
            let lhs = kron(&a, &b) * kron(&cm, &dm);
            let rhs = kron(&(&a * &cm), &(&b * &dm));
            prop_assert!(sup_norm(&(lhs - rhs)) < 1e-12);
        }

        #[test]
        fn prop_simplex_projection_idempotent_and_feasible(seed in 0u64..500) {
            let h = rand_hermitian(3, seed);
            let p = project_trace_simplex(&h);
            prop_assert!((p.trace_re() - 1.0).abs() < 1e-12);
            prop_assert!(p.eigenvalues().min() >= -1e-14);
            let again = project_trace_simplex(&HermitianMatrix::new(p.as_mat().clone()).unwrap());
            prop_assert!(sup_norm(&(again.as_mat() - p.as_mat())) < 1e-10);
        }

        #[test]
        fn prop_imag_part_detects_half_plane(seed in 0u64..500) {
            // H + i(LL* + I) with H Hermitian is always in the upper half plane.
            let h = rand_hermitian(3, seed);
            let l = rand_mat(3, seed + 7);
            let pd = &l * l.adjoint() + identity(3).scale(0.1);
            let b = h.as_mat() + pd.map(|z| z * Complex64::new(0.0, 1.0));
            prop_assert!(UpperHalfPlaneMatrix::new(b).is_ok());
        }
    }
}
