//! Maximization of the capacity functional over trace-one input covariances.
//!
//! `Psi(Phi) = int log(1 + P x) dF^{H Phi H*}(x)` is concave in `Phi`, so a
//! projected gradient ascent over `{Phi PSD, Tr Phi = 1}` with a Hermitian
//! finite-difference gradient and Armijo backtracking finds the maximizer.
//! Every function evaluation runs the full analytic pipeline: meld `Phi` into
//! the channel, compile, invert to a density, integrate the log-moment.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;
use serde_json::json;

use crate::channel::{compile, meld_phi, ChannelExpr};
use crate::density::{density_auto, SpectralDensity};
use crate::fixed_point::FixedPointConfig;
use crate::linalg::{project_trace_simplex, CMat, HermitianMatrix, PsdMatrix};
use crate::{Error, Result};

/// Stieltjes inversion settings for the pipeline.
#[derive(Clone, Debug, Serialize)]
pub struct GridConfig {
    pub xmin: Option<f64>,
    pub xmax: Option<f64>,
    pub points: usize,
    pub epsilon: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            xmin: None,
            xmax: None,
            points: 2000,
            epsilon: 1e-6,
        }
    }
}

/// Everything the analytic pipeline needs besides the channel itself.
#[derive(Clone, Debug, Default, Serialize)]
pub struct PipelineConfig {
    pub fixed_point: FixedPointConfig,
    pub grid: GridConfig,
}

/// Projected gradient ascent settings.
#[derive(Clone, Debug, Serialize)]
pub struct OptimizerConfig {
    /// Terminate when the Frobenius norm of the projected gradient step
    /// falls below this.
    pub grad_tol: f64,
    pub max_iterations: usize,
    /// Central-difference step over the d^2 real parameters of Phi.
    pub fd_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-5,
            max_iterations: 200,
            fd_step: 1e-4,
        }
    }
}

/// Outcome of the capacity maximization.
#[derive(Clone, Debug)]
pub struct CapacityResult {
    /// Nats per antenna.
    pub capacity: f64,
    pub phi0: PsdMatrix,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub p: f64,
}

impl CapacityResult {
    /// JSON report with the optimal covariance split into real and imaginary
    /// parts as nested arrays.
    pub fn to_json(&self) -> serde_json::Value {
        let d = self.phi0.dim();
        let re: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| self.phi0.as_mat()[(i, j)].re).collect())
            .collect();
        let im: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| self.phi0.as_mat()[(i, j)].im).collect())
            .collect();
        json!({
            "capacity_nats_per_antenna": self.capacity,
            "phi0": { "re": re, "im": im },
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "converged": self.converged,
            "P": self.p,
        })
    }
}

fn check_feasible(phi: &PsdMatrix, d: usize) -> Result<()> {
    if phi.dim() != d {
        return Err(Error::Domain(format!(
            "Phi must be {d}x{d}, got {0}x{0}",
            phi.dim()
        )));
    }
    if (phi.trace_re() - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "Phi must have unit trace, got {}",
            phi.trace_re()
        )));
    }
    Ok(())
}

/// The full pipeline for one transmit covariance: returns the spectral
/// density of `H Phi H*`.
pub fn psi_density(
    expr: &ChannelExpr,
    phi: &PsdMatrix,
    pipeline: &PipelineConfig,
) -> Result<SpectralDensity> {
    let melded = meld_phi(expr, phi)?;
    let ev = compile(&melded, &pipeline.fixed_point)?;
    density_auto(
        &ev,
        pipeline.grid.xmin,
        pipeline.grid.xmax,
        pipeline.grid.points,
        pipeline.grid.epsilon,
    )
}

/// The capacity functional at one feasible point:
/// `Psi(Phi) = int log(1 + P x) dF^{H Phi H*}(x)` in nats.
pub fn psi(expr: &ChannelExpr, phi: &PsdMatrix, p: f64, pipeline: &PipelineConfig) -> Result<f64> {
    if p <= 0.0 {
        return Err(Error::Domain("P must be positive".into()));
    }
    check_feasible(phi, expr.d())?;
    Ok(psi_density(expr, phi, pipeline)?.log_moment(p))
}

/// Density cache keyed by the bit pattern of Phi: line searches and
/// multi-P sweeps revisit the same covariances, and the density itself is
/// independent of P.
struct PsiCache<'a> {
    expr: &'a ChannelExpr,
    pipeline: PipelineConfig,
    densities: Mutex<HashMap<Vec<u64>, SpectralDensity>>,
}

impl<'a> PsiCache<'a> {
    /// Pin the inversion grid once for the whole optimization: per-point
    /// support re-detection makes Psi discontinuous in Phi at the quadrature
    /// level, which finite differences amplify by 1/h. Trace-one covariances
    /// satisfy `Phi <= d * (I/d)`, so `d` times the uniform-point support
    /// bound covers every feasible Phi.
    fn new(expr: &'a ChannelExpr, pipeline: &'a PipelineConfig) -> Result<Self> {
        let mut pinned = pipeline.clone();
        if pinned.grid.xmin.is_none() || pinned.grid.xmax.is_none() {
            let melded = meld_phi(expr, &PsdMatrix::uniform(expr.d()))?;
            let ev = compile(&melded, &pinned.fixed_point)?;
            let (lo, hi) = crate::density::detect_support(&ev, pinned.grid.epsilon)?;
            pinned.grid.xmin = Some(pinned.grid.xmin.unwrap_or(lo.min(0.0)));
            pinned.grid.xmax = Some(pinned.grid.xmax.unwrap_or(hi * expr.d() as f64));
        }
        Ok(Self {
            expr,
            pipeline: pinned,
            densities: Mutex::new(HashMap::new()),
        })
    }

    fn key(phi: &PsdMatrix) -> Vec<u64> {
        phi.as_mat()
            .iter()
            .flat_map(|z| [z.re.to_bits(), z.im.to_bits()])
            .collect()
    }

    fn psi(&self, phi: &PsdMatrix, p: f64) -> Result<f64> {
        let key = Self::key(phi);
        if let Some(hit) = self.densities.lock().unwrap().get(&key) {
            return Ok(hit.log_moment(p));
        }
        let density = psi_density(self.expr, phi, &self.pipeline)?;
        let value = density.log_moment(p);
        let mut cache = self.densities.lock().unwrap();
        if cache.len() >= 512 {
            cache.clear();
        }
        cache.insert(key, density);
        Ok(value)
    }
}

/// Orthogonal real basis of Hermitian d x d matrices: E_ii, then for i < j
/// the pair (E_ij + E_ji) and i(E_ij - E_ji).
fn hermitian_basis(d: usize) -> Vec<CMat> {
    let mut basis = Vec::with_capacity(d * d);
    for i in 0..d {
        let mut m = CMat::zeros(d, d);
        m[(i, i)] = Complex64::new(1.0, 0.0);
        basis.push(m);
    }
    for i in 0..d {
        for j in i + 1..d {
            let mut re = CMat::zeros(d, d);
            re[(i, j)] = Complex64::new(1.0, 0.0);
            re[(j, i)] = Complex64::new(1.0, 0.0);
            basis.push(re);
            let mut im = CMat::zeros(d, d);
            im[(i, j)] = Complex64::new(0.0, 1.0);
            im[(j, i)] = Complex64::new(0.0, -1.0);
            basis.push(im);
        }
    }
    basis
}

fn project(m: &CMat) -> PsdMatrix {
    let herm = HermitianMatrix::new((m + m.adjoint()).scale(0.5)).expect("symmetrized");
    project_trace_simplex(&herm)
}

fn frob(m: &CMat) -> f64 {
    m.norm()
}

fn real_inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Hermitian finite-difference gradient of Psi at a feasible point; every
/// probe is projected back onto the simplex so the pipeline only ever sees
/// feasible covariances.
fn fd_gradient(cache: &PsiCache, phi: &PsdMatrix, p: f64, h: f64) -> Result<CMat> {
    let d = phi.dim();
    let basis = hermitian_basis(d);
    let mut grad = CMat::zeros(d, d);
    for dir in &basis {
        let plus = project(&(phi.as_mat() + dir.map(|z| z * h)));
        let minus = project(&(phi.as_mat() - dir.map(|z| z * h)));
        let slope = (cache.psi(&plus, p)? - cache.psi(&minus, p)?) / (2.0 * h);
        let scale = slope / real_inner(dir, dir);
        grad += dir.map(|z| z * scale);
    }
    Ok(grad)
}

/// Projected gradient ascent on Psi from the uniform covariance `I/d`.
pub fn maximize_capacity(
    expr: &ChannelExpr,
    p: f64,
    opt: &OptimizerConfig,
    pipeline: &PipelineConfig,
) -> Result<CapacityResult> {
    if p <= 0.0 {
        return Err(Error::Domain("P must be positive".into()));
    }
    if !(opt.grad_tol > 0.0) || opt.max_iterations == 0 || !(opt.fd_step > 0.0) {
        return Err(Error::Domain("invalid optimizer configuration".into()));
    }
    let d = expr.d();
    let cache = PsiCache::new(expr, pipeline)?;
    let mut phi = PsdMatrix::uniform(d);
    let mut value = cache.psi(&phi, p)?;
    let mut best = (phi.clone(), value);
    let mut iterations = 0;
    let mut gradient_norm = f64::INFINITY;
    let mut converged = false;

    // d = 1 has a singleton feasible set.
    if d == 1 {
        return Ok(CapacityResult {
            capacity: value,
            phi0: phi,
            iterations: 0,
            gradient_norm: 0.0,
            converged: true,
            p,
        });
    }

    for iter in 1..=opt.max_iterations {
        iterations = iter;
        let grad = fd_gradient(&cache, &phi, p, opt.fd_step)?;
        let pg = project(&(phi.as_mat() + &grad)).as_mat() - phi.as_mat();
        gradient_norm = frob(&pg);
        if gradient_norm < opt.grad_tol {
            converged = true;
            break;
        }

        // Armijo backtracking along the projected arc.
        let mut t = 1.0;
        let mut advanced = false;
        while t >= 1e-8 {
            let cand = project(&(phi.as_mat() + grad.map(|z| z * t)));
            let cand_val = cache.psi(&cand, p)?;
            let move_inner = real_inner(&grad, &(cand.as_mat() - phi.as_mat()));
            if cand_val >= value + 1e-4 * move_inner.max(0.0) && cand_val > value - 1e-14 {
                phi = cand;
                value = cand_val;
                advanced = true;
                break;
            }
            t *= 0.5;
        }
        if value > best.1 {
            best = (phi.clone(), value);
        }
        if !advanced {
            // No ascent direction left at line-search resolution.
            converged = gradient_norm < 10.0 * opt.grad_tol;
            break;
        }
    }

    if best.1 < value {
        best = (phi, value);
    }
    Ok(CapacityResult {
        capacity: best.1,
        phi0: best.0,
        iterations,
        gradient_norm,
        converged,
        p,
    })
}
