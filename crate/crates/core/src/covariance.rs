//! Block covariance structures.
//!
//! A block Gaussian channel with block dimension `d` is described by a
//! covariance mapping `tau(i,k;j,l)` stored as the `d^2 x d^2` Hermitian PSD
//! matrix `K` with the flattening `K[i + k*d, j + l*d] = tau(i,k;j,l)`
//! (0-based indices). Melding a transmit covariance `Phi` produces the scaled
//! covariance `sigma` of the circular family `X = H Phi^{1/2}`, and `sigma`
//! determines the completely positive map `eta(W) = (1 (x) phi)(X^ W X^)`
//! driving the Cauchy-transform fixed point of the hermitization `X^`.

use num_complex::Complex64;

use crate::linalg::{principal_sqrt, CMat, PsdMatrix};
use crate::{Error, Result};

/// The covariance mapping of one block Gaussian atom: block dimension `d` and
/// the `d^2 x d^2` PSD matrix `K` encoding `tau`.
#[derive(Clone, Debug)]
pub struct CovarianceMapping {
    d: usize,
    k: PsdMatrix,
}

impl CovarianceMapping {
    pub fn new(d: usize, k: PsdMatrix) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("block dimension must be positive".into()));
        }
        if k.dim() != d * d {
            return Err(Error::Domain(format!(
                "covariance matrix must be {}x{} for d = {d}, got {}x{}",
                d * d,
                d * d,
                k.dim(),
                k.dim()
            )));
        }
        Ok(Self { d, k })
    }

    /// i.i.d. blocks of unit variance: `K = I_{d^2}`.
    pub fn iid(d: usize) -> Self {
        Self::new(d, PsdMatrix::identity(d * d)).expect("identity covariance")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> &PsdMatrix {
        &self.k
    }

    /// `tau(i,k;j,l) = K[i + k*d, j + l*d]`, 0-based indices in `0..d`.
    pub fn tau(&self, i: usize, k: usize, j: usize, l: usize) -> Result<Complex64> {
        let d = self.d;
        if i >= d || k >= d || j >= d || l >= d {
            return Err(Error::Domain(format!(
                "tau index ({i},{k};{j},{l}) out of range for d = {d}"
            )));
        }
        Ok(self.k.as_mat()[(i + k * d, j + l * d)])
    }
}

/// The covariance `sigma` of the melded family `X = H Phi^{1/2}`, same
/// flattening contract as [`CovarianceMapping`].
#[derive(Clone, Debug)]
pub struct ScaledCovariance {
    d: usize,
    sigma: PsdMatrix,
}

impl ScaledCovariance {
    pub fn from_parts(d: usize, sigma: PsdMatrix) -> Result<Self> {
        if sigma.dim() != d * d {
            return Err(Error::Domain(format!(
                "scaled covariance must be {}x{}, got {}",
                d * d,
                d * d,
                sigma.dim()
            )));
        }
        Ok(Self { d, sigma })
    }

    /// Unmelded covariance (`Phi = I` collapses the melding sum to `K`).
    pub fn from_covariance(cm: &CovarianceMapping) -> Self {
        Self {
            d: cm.d(),
            sigma: cm.k().clone(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sigma(&self) -> &PsdMatrix {
        &self.sigma
    }

    fn at(&self, i: usize, k: usize, j: usize, l: usize) -> Complex64 {
        self.sigma.as_mat()[(i + k * self.d, j + l * self.d)]
    }

    /// The completely positive map `eta(W) = (1 (x) phi)(X^ W X^)` on
    /// `2d x 2d` matrices. Writing `W` in `d x d` blocks, only `W11` and `W22`
    /// survive the vanishing pseudo-covariance of the circular family:
    ///
    /// ```text
    /// eta(W) = diag( eta1(W22), eta2(W11) )
    /// eta1(C)_ij = sum_{k,l} sigma(i,k;j,l) C_kl      (from phi(X_ik X*_jl))
    /// eta2(C)_ij = sum_{k,l} sigma(l,j;k,i) C_kl      (from phi(X*_ki X_lj))
    /// ```
    pub fn eta(&self, w: &CMat) -> Result<CMat> {
        let d = self.d;
        if w.nrows() != 2 * d || w.ncols() != 2 * d {
            return Err(Error::Domain(format!(
                "eta expects a {}x{} matrix, got {}x{}",
                2 * d,
                2 * d,
                w.nrows(),
                w.ncols()
            )));
        }
        let mut out = CMat::zeros(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                let mut top = Complex64::ZERO;
                let mut bottom = Complex64::ZERO;
                for k in 0..d {
                    for l in 0..d {
                        top += self.at(i, k, j, l) * w[(d + k, d + l)];
                        bottom += self.at(l, j, k, i) * w[(k, l)];
                    }
                }
                out[(i, j)] = top;
                out[(d + i, d + j)] = bottom;
            }
        }
        Ok(out)
    }
}

/// Meld a transmit covariance `Phi` into the block covariance:
///
/// ```text
/// sigma(i,k;j,l) = sum_{a,b} Phi^{1/2}_{a,k} conj(Phi^{1/2}_{b,l}) tau(i,a;j,b)
/// ```
///
/// using the principal root `Phi^{1/2}`. The output is PSD because
/// `Sigma = (I (x) S^T) K (I (x) S^T)*` for `S = Phi^{1/2}`.
pub fn meld_input(cm: &CovarianceMapping, phi: &PsdMatrix) -> Result<ScaledCovariance> {
    let d = cm.d();
    if phi.dim() != d {
        return Err(Error::Domain(format!(
            "Phi must be {d}x{d}, got {}x{}",
            phi.dim(),
            phi.dim()
        )));
    }
    let s = principal_sqrt(phi);
    let s = s.as_mat();
    let mut sigma = CMat::zeros(d * d, d * d);
    for i in 0..d {
        for k in 0..d {
            for j in 0..d {
                for l in 0..d {
                    let mut acc = Complex64::ZERO;
                    for a in 0..d {
                        for b in 0..d {
                            acc += s[(a, k)]
                                * s[(b, l)].conj()
                                * cm.k().as_mat()[(i + a * d, j + b * d)];
                        }
                    }
                    sigma[(i + k * d, j + l * d)] = acc;
                }
            }
        }
    }
    Ok(ScaledCovariance {
        d,
        sigma: PsdMatrix::new(sigma)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sup_norm;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rand_cmat(n: usize, m: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(n, m, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
    }

    fn rand_psd(n: usize, rng: &mut ChaCha8Rng) -> PsdMatrix {
        let g = rand_cmat(n, n, rng);
        PsdMatrix::new(&g * g.adjoint()).unwrap()
    }

    /// Standard circularly-symmetric complex Gaussian vector with covariance
    /// `E[v v*] = cov`.
    fn gaussian_vector(cov_sqrt: &CMat, rng: &mut ChaCha8Rng) -> DVector<Complex64> {
        let n = cov_sqrt.nrows();
        let z = DVector::from_fn(n, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            c(re, im) * std::f64::consts::FRAC_1_SQRT_2
        });
        cov_sqrt * z
    }

    #[test]
    fn tau_identity_covariance() {
        let cm = CovarianceMapping::iid(2);
        for i in 0..2 {
            for k in 0..2 {
                for j in 0..2 {
                    for l in 0..2 {
                        let t = cm.tau(i, k, j, l).unwrap();
                        let expect = if (i, k) == (j, l) { 1.0 } else { 0.0 };
                        assert!((t - c(expect, 0.0)).norm() < 1e-15);
                    }
                }
            }
        }
        assert!(cm.tau(2, 0, 0, 0).is_err());
    }

    #[test]
    fn tau_scalar_case() {
        let k = PsdMatrix::new(CMat::from_element(1, 1, c(0.7, 0.0))).unwrap();
        let cm = CovarianceMapping::new(1, k).unwrap();
        assert!((cm.tau(0, 0, 0, 0).unwrap() - c(0.7, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn tau_hermitian_symmetry_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cm = CovarianceMapping::new(2, rand_psd(4, &mut rng)).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                for j in 0..2 {
                    for l in 0..2 {
                        let a = cm.tau(i, k, j, l).unwrap();
                        let b = cm.tau(j, l, i, k).unwrap();
                        assert!((a - b.conj()).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn meld_with_identity_returns_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cm = CovarianceMapping::new(2, rand_psd(4, &mut rng)).unwrap();
        let sc = meld_input(&cm, &PsdMatrix::identity(2)).unwrap();
        assert!(sup_norm(&(sc.sigma().as_mat() - cm.k().as_mat())) < 1e-10);
    }

    #[test]
    fn meld_scalar_case() {
        let cm = CovarianceMapping::new(1, PsdMatrix::identity(1)).unwrap();
        let phi = PsdMatrix::new(CMat::from_element(1, 1, c(0.3, 0.0))).unwrap();
        let sc = meld_input(&cm, &phi).unwrap();
        assert!((sc.sigma().as_mat()[(0, 0)] - c(0.3, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn meld_dimension_mismatch() {
        let cm = CovarianceMapping::iid(2);
        assert!(meld_input(&cm, &PsdMatrix::identity(3)).is_err());
    }

    #[test]
    fn meld_matches_monte_carlo_moments() {
        let d = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cm = CovarianceMapping::new(d, rand_psd(d * d, &mut rng)).unwrap();
        let phi = {
            let p = rand_psd(d, &mut rng);
            let t = p.trace_re();
            PsdMatrix::new(p.as_mat().scale(1.0 / t)).unwrap()
        };
        let sc = meld_input(&cm, &phi).unwrap();

        // Oracle: E[X_ik conj(X_jl)] with H blocks drawn at N = 1 from K and
        // X = H Phi^{1/2}, averaged over samples.
        let k_sqrt = principal_sqrt(cm.k());
        let s = principal_sqrt(&phi);
        let trials = 100_000;
        let mut acc = CMat::zeros(d * d, d * d);
        let mut sq = vec![0.0; (d * d) * (d * d)];
        for _ in 0..trials {
            let v = gaussian_vector(k_sqrt.as_mat(), &mut rng);
            let h = CMat::from_fn(d, d, |i, a| v[i + a * d]);
            let x = &h * s.as_mat();
            for i in 0..d {
                for k in 0..d {
                    for j in 0..d {
                        for l in 0..d {
                            let prod = x[(i, k)] * x[(j, l)].conj();
                            acc[(i + k * d, j + l * d)] += prod;
                            sq[(i + k * d) * d * d + (j + l * d)] += prod.norm_sqr();
                        }
                    }
                }
            }
        }
        let mean = acc.scale(1.0 / trials as f64);
        for r in 0..d * d {
            for cidx in 0..d * d {
                let m2 = sq[r * d * d + cidx] / trials as f64;
                let var = (m2 - mean[(r, cidx)].norm_sqr()).max(1e-12);
                let se = (var / trials as f64).sqrt();
                let dev = (mean[(r, cidx)] - sc.sigma().as_mat()[(r, cidx)]).norm();
                assert!(
                    dev <= 3.0 * se.max(1e-4),
                    "sigma[{r},{cidx}] deviates by {dev:.3e} (3se = {:.3e})",
                    3.0 * se
                );
            }
        }
    }

    #[test]
    fn eta_scalar_swaps_blocks() {
        // d = 1, sigma = 1: eta([[w11, w12], [w21, w22]]) = [[w22, 0], [0, w11]]
        let sc = ScaledCovariance::from_covariance(&CovarianceMapping::iid(1));
        let w = CMat::from_row_slice(2, 2, &[c(1.0, 2.0), c(3.0, 4.0), c(5.0, 6.0), c(7.0, 8.0)]);
        let e = sc.eta(&w).unwrap();
        assert!((e[(0, 0)] - c(7.0, 8.0)).norm() < 1e-15);
        assert!((e[(1, 1)] - c(1.0, 2.0)).norm() < 1e-15);
        assert!(e[(0, 1)].norm() < 1e-15 && e[(1, 0)].norm() < 1e-15);
    }

    #[test]
    fn eta_of_zero_is_zero() {
        let sc = ScaledCovariance::from_covariance(&CovarianceMapping::iid(2));
        let e = sc.eta(&CMat::zeros(4, 4)).unwrap();
        assert!(sup_norm(&e) < 1e-15);
    }

    #[test]
    fn eta_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sc =
            ScaledCovariance::from_parts(2, rand_psd(4, &mut rng)).unwrap();
        let w1 = rand_cmat(4, 4, &mut rng);
        let w2 = rand_cmat(4, 4, &mut rng);
        let alpha = c(0.3, -1.2);
        let lhs = sc.eta(&(w1.map(|z| z * alpha) + &w2)).unwrap();
        let rhs = sc.eta(&w1).unwrap().map(|z| z * alpha) + sc.eta(&w2).unwrap();
        assert!(sup_norm(&(lhs - rhs)) < 1e-12);
    }

    #[test]
    fn eta_is_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for d in 1..=3usize {
            let sc = ScaledCovariance::from_parts(d, rand_psd(d * d, &mut rng)).unwrap();
            for _ in 0..5 {
                let w = rand_psd(2 * d, &mut rng);
                let e = sc.eta(w.as_mat()).unwrap();
                assert!(
                    PsdMatrix::new(e).is_ok(),
                    "eta of PSD input must be PSD (d = {d})"
                );
            }
        }
    }

    #[test]
    fn eta_block_structure() {
        // Block-diagonal input: output block-diagonal with swapped dependence.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let d = 2;
        let sc = ScaledCovariance::from_parts(d, rand_psd(d * d, &mut rng)).unwrap();
        let w11 = rand_cmat(d, d, &mut rng);
        let w22 = rand_cmat(d, d, &mut rng);
        let mut w = CMat::zeros(2 * d, 2 * d);
        w.view_mut((0, 0), (d, d)).copy_from(&w11);
        w.view_mut((d, d), (d, d)).copy_from(&w22);
        let e = sc.eta(&w).unwrap();
        // off-diagonal output blocks vanish
        assert!(sup_norm(&e.view((0, d), (d, d)).into_owned()) < 1e-15);
        assert!(sup_norm(&e.view((d, 0), (d, d)).into_owned()) < 1e-15);
        // top block depends only on W22: zeroing W11 leaves it unchanged
        let mut w_no11 = CMat::zeros(2 * d, 2 * d);
        w_no11.view_mut((d, d), (d, d)).copy_from(&w22);
        let e2 = sc.eta(&w_no11).unwrap();
        assert!(sup_norm(&(e.view((0, 0), (d, d)) - e2.view((0, 0), (d, d))).into_owned()) < 1e-14);
    }

    #[test]
    fn eta_matches_monte_carlo_expectation() {
        // E[X^ W X^] over samples of X with entry covariance sigma.
        let d = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let sc = ScaledCovariance::from_parts(d, rand_psd(d * d, &mut rng)).unwrap();
        let w = rand_cmat(2 * d, 2 * d, &mut rng);
        let expected = sc.eta(&w).unwrap();

        let sig_sqrt = principal_sqrt(sc.sigma());
        let trials = 100_000;
        let mut acc = CMat::zeros(2 * d, 2 * d);
        let mut sq = CMat::zeros(2 * d, 2 * d).map(|_| 0.0);
        for _ in 0..trials {
            let v = gaussian_vector(sig_sqrt.as_mat(), &mut rng);
            let x = CMat::from_fn(d, d, |i, k| v[i + k * d]);
            let mut xhat = CMat::zeros(2 * d, 2 * d);
            xhat.view_mut((0, d), (d, d)).copy_from(&x);
            xhat.view_mut((d, 0), (d, d)).copy_from(&x.adjoint());
            let s = &xhat * &w * &xhat;
            for r in 0..2 * d {
                for cc in 0..2 * d {
                    acc[(r, cc)] += s[(r, cc)];
                    sq[(r, cc)] += s[(r, cc)].norm_sqr();
                }
            }
        }
        let mean = acc.scale(1.0 / trials as f64);
        for r in 0..2 * d {
            for cc in 0..2 * d {
                let m2 = sq[(r, cc)] / trials as f64;
                let var = (m2 - mean[(r, cc)].norm_sqr()).max(1e-12);
                let se = (var / trials as f64).sqrt();
                let dev = (mean[(r, cc)] - expected[(r, cc)]).norm();
                assert!(
                    dev <= 3.0 * se.max(1e-3),
                    "eta[{r},{cc}] deviates by {dev:.3e} (3se = {:.3e})",
                    3.0 * se
                );
            }
        }
    }
}
