//! Matricial Cauchy transforms of hermitized operators and their
//! subordination calculus.
//!
//! Every evaluator maps `2d x 2d` upper-half-plane matrices `B` to
//! lower-half-plane values of `G(B) = (1 (x) phi)((B - X)^{-1})`:
//!
//! - block Gaussian atoms solve the fixed point `G = (B - eta(G))^{-1}`;
//! - sums of free operators use additive subordination through the
//!   r-transform `r(B) = G(B)^{-1} - B`;
//! - products use multiplicative subordination through the h-transform
//!   `h(B) = B^{-1} - G(B^{-1})^{-1}`, with the positive left factor supplied
//!   in tilde form `diag(H*H, I)` via a Schur-complement formula;
//! - constants and scalar diagonal embeddings have closed resolvent forms.
//!
//! Lower-half-plane arguments are served through `G(B) = G(B*)*`. Evaluations
//! are memoized bitwise per argument, so grid sweeps that revisit shared
//! sub-expressions pay for each point once.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;

use crate::covariance::ScaledCovariance;
use crate::fixed_point::{self, FixedPointConfig};
use crate::linalg::{
    all_finite, half_plane, identity, imag_part, sup_norm, try_inverse, CMat, HalfPlane,
};
use crate::{Error, Result};

/// Slack for "stays in the closed half plane" branch checks, relative to the
/// iterate scale.
const BRANCH_SLACK: f64 = 1e-7;

// ---------------------------------------------------------------------------
// Scalar Cauchy transforms
// ---------------------------------------------------------------------------

/// Scalar Cauchy transform `G_x(z) = E[(z - x)^{-1}]` of a compactly
/// supported real distribution, used by the diagonal embedding formula.
pub trait ScalarCauchyTransform: Send + Sync {
    fn eval(&self, z: Complex64) -> Complex64;

    /// True when the distribution is supported on `[0, inf)`; such embeddings
    /// stay valid left factors for multiplicative subordination.
    fn support_nonnegative(&self) -> bool {
        false
    }
}

impl<F> ScalarCauchyTransform for F
where
    F: Fn(Complex64) -> Complex64 + Send + Sync,
{
    fn eval(&self, z: Complex64) -> Complex64 {
        self(z)
    }
}

/// Discrete real distribution: atoms `(value, weight)` with weights
/// normalized to one. An empirical eigenvalue list is the equal-weight case.
#[derive(Clone, Debug)]
pub struct DiscreteDistribution {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDistribution {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Domain("distribution needs at least one atom".into()));
        }
        let total: f64 = atoms.iter().map(|(_, w)| *w).sum();
        if !(total > 0.0) || atoms.iter().any(|(v, w)| !v.is_finite() || *w < 0.0) {
            return Err(Error::Domain("atom weights must be nonnegative with positive sum".into()));
        }
        Ok(Self {
            atoms: atoms.into_iter().map(|(v, w)| (v, w / total)).collect(),
        })
    }

    pub fn point_mass(value: f64) -> Self {
        Self { atoms: vec![(value, 1.0)] }
    }

    pub fn from_eigenvalues(eigs: &[f64]) -> Result<Self> {
        let w = 1.0 / eigs.len() as f64;
        Self::new(eigs.iter().map(|&v| (v, w)).collect())
    }

    /// Pushforward under `x -> x^2` (the squared diagonal limits used by the
    /// sandwich reduction).
    pub fn squared(&self) -> Self {
        Self {
            atoms: self.atoms.iter().map(|&(v, w)| (v * v, w)).collect(),
        }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }
}

impl ScalarCauchyTransform for DiscreteDistribution {
    fn eval(&self, z: Complex64) -> Complex64 {
        self.atoms
            .iter()
            .map(|&(v, w)| Complex64::new(w, 0.0) / (z - v))
            .sum()
    }

    fn support_nonnegative(&self) -> bool {
        self.atoms.iter().all(|&(v, _)| v >= 0.0)
    }
}

// ---------------------------------------------------------------------------
// Evaluator
// ---------------------------------------------------------------------------

/// How an evaluator was built; decides which algebraic rules may be applied
/// to it downstream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Atom,
    Constant,
    ScalarEmbed,
    Sum,
    Product,
    Tilde,
}

/// A matricial Cauchy transform `B -> G(B)`, immutable after construction and
/// safe to share across threads. Evaluation is pure given `B`; results are
/// memoized keyed by the bit pattern of `B`.
#[derive(Clone)]
pub struct CauchyEvaluator {
    inner: Arc<Inner>,
}

struct Inner {
    dim: usize,
    provenance: Provenance,
    odd_moments_vanish: bool,
    exact_resolvent: bool,
    positive: bool,
    /// Expression subtree this evaluator was compiled from, attached to
    /// convergence errors.
    path: Option<String>,
    kind: Kind,
    memo: Mutex<HashMap<Vec<u64>, CMat>>,
}

#[derive(Clone)]
enum Kind {
    Constant(CMat),
    BlockGaussian {
        sc: ScaledCovariance,
        cfg: FixedPointConfig,
    },
    ScalarEmbed {
        gx: Arc<dyn ScalarCauchyTransform>,
        k: usize,
    },
    Sum {
        g1: CauchyEvaluator,
        g2: CauchyEvaluator,
        cfg: FixedPointConfig,
    },
    Product {
        tilde1: CauchyEvaluator,
        hat2: CauchyEvaluator,
        cfg: FixedPointConfig,
    },
    TildeFromHat {
        hat: CauchyEvaluator,
    },
}

fn memo_key(b: &CMat) -> Vec<u64> {
    let mut key = Vec::with_capacity(2 * b.len() + 1);
    key.push(b.nrows() as u64);
    for z in b.iter() {
        key.push(z.re.to_bits());
        key.push(z.im.to_bits());
    }
    key
}

impl CauchyEvaluator {
    fn build(
        dim: usize,
        provenance: Provenance,
        odd_moments_vanish: bool,
        exact_resolvent: bool,
        positive: bool,
        kind: Kind,
    ) -> Self {
        Self {
            inner: Arc::new(Inner {
                dim,
                provenance,
                odd_moments_vanish,
                exact_resolvent,
                positive,
                path: None,
                kind,
                memo: Mutex::new(HashMap::new()),
            }),
        }
    }

    fn rebuild(&self, odd: bool, path: Option<String>) -> Self {
        Self {
            inner: Arc::new(Inner {
                dim: self.inner.dim,
                provenance: self.inner.provenance,
                odd_moments_vanish: odd,
                exact_resolvent: self.inner.exact_resolvent,
                positive: self.inner.positive,
                path,
                kind: self.inner.kind.clone(),
                memo: Mutex::new(HashMap::new()),
            }),
        }
    }

    /// Annotate convergence errors raised by this evaluator with the
    /// expression subtree it was compiled from.
    pub(crate) fn with_error_path(&self, path: &str) -> Self {
        self.rebuild(self.inner.odd_moments_vanish, Some(path.to_string()))
    }

    /// Matrix dimension (`2d`) of arguments and values.
    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn provenance(&self) -> Provenance {
        self.inner.provenance
    }

    /// Whether the underlying operator's entries have vanishing odd
    /// *-moments (the precondition of the tilde extraction).
    pub fn odd_moments_vanish(&self) -> bool {
        self.inner.odd_moments_vanish
    }

    /// Whether the evaluator represents a positive operator, i.e. is a valid
    /// left (tilde-side) factor for multiplicative subordination.
    pub fn is_positive_operator(&self) -> bool {
        self.inner.positive
    }

    /// Structural guarantee supplied by the caller: the underlying operator
    /// is centered with vanishing odd *-moments even though the combinators
    /// could not deduce it (used by the sandwich compilation, where the
    /// centered inner factor makes the whole product centered).
    pub(crate) fn with_odd_moment_guarantee(&self) -> Self {
        self.rebuild(true, self.inner.path.clone())
    }

    /// Evaluate the transform. Arguments in the open lower half plane are
    /// served via `G(B) = G(B*)*`; boundary arguments (such as the
    /// `diag(I, Z)` extraction points) are attempted directly and certified
    /// by the fixed-point residual.
    pub fn evaluate(&self, b: &CMat) -> Result<CMat> {
        let n = self.inner.dim;
        if b.nrows() != n || b.ncols() != n {
            return Err(Error::Domain(format!(
                "evaluator expects {n}x{n} arguments, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if !all_finite(b) {
            return Err(Error::Domain("argument has non-finite entries".into()));
        }
        let key = memo_key(b);
        if let Some(hit) = self.inner.memo.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let hp = half_plane(b)?;
        let result = match hp {
            HalfPlane::Lower => self
                .eval_core(&b.adjoint(), HalfPlane::Upper)
                .map(|m| m.adjoint()),
            hp => self.eval_core(b, hp),
        };
        let out = match (result, &self.inner.path) {
            (Ok(m), _) => m,
            (Err(e), Some(path)) => return Err(e.with_path(path)),
            (Err(e), None) => return Err(e),
        };
        self.inner.memo.lock().unwrap().insert(key, out.clone());
        Ok(out)
    }

    fn eval_core(&self, b: &CMat, hp: HalfPlane) -> Result<CMat> {
        match &self.inner.kind {
            Kind::Constant(m) => try_inverse(&(b - m), "resolvent of a constant operator"),
            Kind::BlockGaussian { sc, cfg } => eval_block_gaussian(sc, cfg, b, hp),
            Kind::ScalarEmbed { gx, k } => eval_scalar_embed(gx.as_ref(), *k, b),
            Kind::Sum { g1, g2, cfg } => eval_sum(g1, g2, cfg, b, hp),
            Kind::Product { tilde1, hat2, cfg } => eval_product(tilde1, hat2, cfg, b),
            Kind::TildeFromHat { hat } => eval_tilde(hat, b),
        }
    }
}

// ---------------------------------------------------------------------------
// Constructors
// ---------------------------------------------------------------------------

/// Cauchy transform of the hermitization of one block Gaussian operator with
/// scaled covariance `sigma`: the fixed point of `T_B(W) = (B - eta(W))^{-1}`
/// iterated from `W0 = -iI`.
pub fn cauchy_block_gaussian(sc: ScaledCovariance, cfg: &FixedPointConfig) -> CauchyEvaluator {
    CauchyEvaluator::build(
        2 * sc.d(),
        Provenance::Atom,
        true,
        false,
        false,
        Kind::BlockGaussian {
            sc,
            cfg: cfg.clone(),
        },
    )
}

/// Resolvent transform `B -> (B - M)^{-1}` of a constant Hermitian matrix.
pub fn cauchy_constant(m: CMat) -> Result<CauchyEvaluator> {
    let herm = crate::linalg::HermitianMatrix::new(m)?;
    let eigs = herm.as_mat().symmetric_eigenvalues();
    let scale = herm.as_mat().norm().max(1.0);
    let positive = eigs.min() >= -1e-10 * scale;
    let dim = herm.dim();
    Ok(CauchyEvaluator::build(
        dim,
        Provenance::Constant,
        false,
        true,
        positive,
        Kind::Constant(herm.into_inner()),
    ))
}

/// Cauchy transform of `x E_kk` for a scalar random variable `x` with Cauchy
/// transform `gx`, embedded at diagonal position `k` of a `dim x dim` matrix:
///
/// ```text
/// G(B) = B^{-1} + beta^{-2} (G_x(beta^{-1}) - beta) B^{-1} E_kk B^{-1},
/// beta = [B^{-1}]_kk
/// ```
pub fn cauchy_scalar_embed(
    gx: Arc<dyn ScalarCauchyTransform>,
    k: usize,
    dim: usize,
) -> Result<CauchyEvaluator> {
    if k >= dim {
        return Err(Error::Domain(format!(
            "embedding index {k} out of range for dimension {dim}"
        )));
    }
    let positive = gx.support_nonnegative();
    Ok(CauchyEvaluator::build(
        dim,
        Provenance::ScalarEmbed,
        false,
        false,
        positive,
        Kind::ScalarEmbed { gx, k },
    ))
}

/// Additive subordination: the Cauchy transform of `H1 + H2` for
/// operator-valued free summands, via the fixed point
/// `omega1(B) = lim f_B^n(B)` with `f_B(W) = r2(r1(W) + B) + B`, returning
/// `G1(omega1(B))`.
pub fn subordinate_sum(
    g1: &CauchyEvaluator,
    g2: &CauchyEvaluator,
    cfg: &FixedPointConfig,
) -> Result<CauchyEvaluator> {
    if g1.dim() != g2.dim() {
        return Err(Error::Domain(format!(
            "summand dimensions differ: {} vs {}",
            g1.dim(),
            g2.dim()
        )));
    }
    Ok(CauchyEvaluator::build(
        g1.dim(),
        Provenance::Sum,
        g1.odd_moments_vanish() && g2.odd_moments_vanish(),
        g1.inner.exact_resolvent && g2.inner.exact_resolvent,
        g1.is_positive_operator() && g2.is_positive_operator(),
        Kind::Sum {
            g1: g1.clone(),
            g2: g2.clone(),
            cfg: cfg.clone(),
        },
    ))
}

/// Multiplicative subordination: from the tilde transform of the positive
/// left factor and the hat transform of the right factor, the Cauchy
/// transform of the product, via `omega2(B^{-1}) = lim g^n(B^{-1})` with
/// `g(W) = B^{-1} h_tilde1(h_hat2(W) B^{-1})` and
///
/// ```text
/// G(B) = G_hat2(omega^{-1}) omega^{-1} B^{-1}.
/// ```
pub fn subordinate_product(
    tilde1: &CauchyEvaluator,
    hat2: &CauchyEvaluator,
    cfg: &FixedPointConfig,
) -> Result<CauchyEvaluator> {
    if tilde1.dim() != hat2.dim() {
        return Err(Error::Domain(format!(
            "factor dimensions differ: {} vs {}",
            tilde1.dim(),
            hat2.dim()
        )));
    }
    if !tilde1.is_positive_operator() {
        return Err(Error::Domain(
            "left factor of a product must be a positive operator (tilde transform)".into(),
        ));
    }
    Ok(CauchyEvaluator::build(
        tilde1.dim(),
        Provenance::Product,
        tilde1.odd_moments_vanish() && hat2.odd_moments_vanish(),
        tilde1.inner.exact_resolvent && hat2.inner.exact_resolvent,
        false,
        Kind::Product {
            tilde1: tilde1.clone(),
            hat2: hat2.clone(),
            cfg: cfg.clone(),
        },
    ))
}

/// The tilde transform `G_{diag(H*H, I)}` derived from the hat transform of
/// `H` by a Schur-complement formula; `G_{H*H}` itself is extracted from the
/// lower-right block of `G_hat(diag(I, Z))`, which requires vanishing odd
/// *-moments of the entries of `H` (or an exact constant).
pub fn tilde_from_hat(hat: &CauchyEvaluator) -> Result<CauchyEvaluator> {
    if !(hat.odd_moments_vanish() || hat.inner.exact_resolvent) {
        return Err(Error::Domain(
            "tilde extraction requires vanishing odd *-moments of the underlying operator".into(),
        ));
    }
    if hat.dim() % 2 != 0 {
        return Err(Error::Domain("hat transforms act on even dimensions".into()));
    }
    Ok(CauchyEvaluator::build(
        hat.dim(),
        Provenance::Tilde,
        hat.odd_moments_vanish(),
        hat.inner.exact_resolvent,
        true,
        Kind::TildeFromHat { hat: hat.clone() },
    ))
}

// ---------------------------------------------------------------------------
// r / h transforms
// ---------------------------------------------------------------------------

/// `r_X(B) = G_X(B)^{-1} - B`.
pub fn r_transform(g: &CauchyEvaluator, b: &CMat) -> Result<CMat> {
    let gb = g.evaluate(b)?;
    Ok(try_inverse(&gb, "Cauchy transform value in r-transform")? - b)
}

/// `h_X(B) = B^{-1} - G_X(B^{-1})^{-1}`.
pub fn h_transform(g: &CauchyEvaluator, b: &CMat) -> Result<CMat> {
    let binv = try_inverse(b, "argument of h-transform")?;
    let gb = g.evaluate(&binv)?;
    Ok(binv - try_inverse(&gb, "Cauchy transform value in h-transform")?)
}

// ---------------------------------------------------------------------------
// Kind implementations
// ---------------------------------------------------------------------------

fn max_im_eig(m: &CMat) -> f64 {
    imag_part(m)
        .map(|im| im.as_mat().symmetric_eigenvalues().max())
        .unwrap_or(f64::INFINITY)
}

fn min_im_eig(m: &CMat) -> f64 {
    imag_part(m)
        .map(|im| im.as_mat().symmetric_eigenvalues().min())
        .unwrap_or(f64::NEG_INFINITY)
}

fn eval_block_gaussian(
    sc: &ScaledCovariance,
    cfg: &FixedPointConfig,
    b: &CMat,
    hp: HalfPlane,
) -> Result<CMat> {
    let n = 2 * sc.d();
    let map = |w: &CMat| -> Result<CMat> {
        let eta = sc.eta(w)?;
        try_inverse(&(b - eta), "B - eta(W) in the block Gaussian fixed point")
    };
    let minus_i = CMat::from_diagonal_element(n, n, Complex64::new(0.0, -1.0));
    // Spectral-edge arguments are cheap for Newton and expensive for the
    // mixed iteration, so the budget is split: a capped accelerated phase
    // first, the Newton rescue second, the full damped iteration last.
    let quick = FixedPointConfig {
        max_iterations: cfg.max_iterations.min(600),
        ..cfg.clone()
    };
    match hp {
        HalfPlane::Upper => {
            // The physical branch lives in the closed lower half plane.
            let accept = |w: &CMat| max_im_eig(w) <= BRANCH_SLACK * (1.0 + sup_norm(w));
            if let Ok(s) =
                fixed_point::solve(&map, &minus_i, &quick, accept, "block Gaussian Cauchy transform")
            {
                return Ok(s.value);
            }
            if let Ok(v) = newton_atom(sc, b, &minus_i, cfg, &accept) {
                return Ok(v);
            }
            fixed_point::solve(&map, &minus_i, cfg, accept, "block Gaussian Cauchy transform")
                .map(|s| s.value)
        }
        _ => {
            // Boundary argument (tilde extraction points): try the lower
            // start first, then the upper one; residual certification decides.
            let open = |_: &CMat| true;
            if let Ok(s) = fixed_point::solve(
                &map,
                &minus_i,
                &quick,
                open,
                "block Gaussian Cauchy transform (boundary argument)",
            ) {
                return Ok(s.value);
            }
            if let Ok(v) = newton_atom(sc, b, &minus_i, cfg, &open) {
                return Ok(v);
            }
            let plus_i = CMat::from_diagonal_element(n, n, Complex64::new(0.0, 1.0));
            if let Ok(s) = fixed_point::solve(
                &map,
                &plus_i,
                &quick,
                open,
                "block Gaussian Cauchy transform (boundary argument)",
            ) {
                return Ok(s.value);
            }
            if let Ok(v) = newton_atom(sc, b, &plus_i, cfg, &open) {
                return Ok(v);
            }
            fixed_point::solve(
                &map,
                &minus_i,
                cfg,
                open,
                "block Gaussian Cauchy transform (boundary argument)",
            )
            .map(|s| s.value)
        }
    }
}

/// Newton rescue for the atom fixed point `W = (B - eta(W))^{-1}` at
/// arguments where the Picard map is nearly neutral or orbits a limit cycle
/// (spectral edges at tiny smoothing). Spurious fixed points appear close to
/// the physical one there, so the branch is selected by continuation: solve
/// at `B + i s I` for a geometrically decaying shift `s`, warm-starting every
/// stage from the previous solution. Far from the real axis the physical
/// branch is the unique attractor; tracking it down keeps Newton on it.
///
/// The differential of `T(W) = (B - eta(W))^{-1}` is `dT = T eta(dW) T`, so
/// each step solves the dense `(2d)^2` linear system
/// `(I - L) delta = T(W) - W` with `L[delta] = T eta(delta) T`.
fn newton_atom<A: Fn(&CMat) -> bool>(
    sc: &ScaledCovariance,
    b: &CMat,
    w0: &CMat,
    cfg: &FixedPointConfig,
    accept: &A,
) -> Result<CMat> {
    let n = 2 * sc.d();
    let mut w = w0.clone();
    let mut shifts = vec![0.0];
    let mut s = 1e-4;
    while s <= 4.0 {
        shifts.push(s);
        s *= 4.0;
    }
    let mut last_residual = f64::INFINITY;
    for &shift in shifts.iter().rev() {
        let b_stage = b + CMat::from_diagonal_element(n, n, Complex64::new(0.0, shift));
        let map = |w: &CMat| -> Result<CMat> {
            let eta = sc.eta(w)?;
            try_inverse(&(&b_stage - eta), "B - eta(W) in the Newton rescue")
        };
        // A few damped steps settle the warm start after the shift change.
        for _ in 0..16 {
            let image = map(&w)?;
            w = image.map(|z| z * 0.5) + w.map(|z| z * 0.5);
        }
        last_residual = newton_stage(sc, &map, &mut w, n, cfg.tolerance)?;
    }
    if last_residual < 10.0 * cfg.tolerance && all_finite(&w) && accept(&w) {
        Ok(w)
    } else {
        Err(Error::Convergence {
            context: "block Gaussian Cauchy transform (Newton rescue)".into(),
            residual: last_residual,
            iterations: cfg.max_iterations,
        })
    }
}

/// Newton iterations for one continuation stage; returns the final residual.
fn newton_stage<F: Fn(&CMat) -> Result<CMat>>(
    sc: &ScaledCovariance,
    map: &F,
    w: &mut CMat,
    n: usize,
    tolerance: f64,
) -> Result<f64> {
    let dim = n * n;
    let mut last_residual = f64::INFINITY;
    for _ in 0..48 {
        let t = map(w)?;
        let f = &t - &*w;
        last_residual = sup_norm(&f);
        if last_residual < tolerance || !last_residual.is_finite() {
            break;
        }
        // Assemble L column by column over the matrix units.
        let mut system = CMat::zeros(dim, dim);
        for col in 0..dim {
            let mut unit = CMat::zeros(n, n);
            unit[(col % n, col / n)] = Complex64::new(1.0, 0.0);
            let image = &t * sc.eta(&unit)? * &t;
            for row in 0..dim {
                system[(row, col)] = image[(row % n, row / n)];
            }
        }
        let lhs = CMat::identity(dim, dim) - system;
        let rhs = nalgebra::DVector::from_iterator(dim, f.iter().copied());
        let delta = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric("singular Newton system".into()))?;
        for col in 0..n {
            for row in 0..n {
                w[(row, col)] += delta[col * n + row];
            }
        }
        if !all_finite(w) {
            return Err(Error::Numeric("Newton iterate diverged".into()));
        }
    }
    Ok(last_residual)
}

fn eval_scalar_embed(gx: &dyn ScalarCauchyTransform, k: usize, b: &CMat) -> Result<CMat> {
    let binv = try_inverse(b, "argument of the diagonal embedding formula")?;
    let beta = binv[(k, k)];
    if beta.norm() < 1e-300 {
        return Err(Error::Numeric(
            "diagonal entry of B^{-1} vanishes in the embedding formula".into(),
        ));
    }
    let coeff = (gx.eval(beta.inv()) - beta) / (beta * beta);
    // B^{-1} E_kk B^{-1} is the outer product of column k and row k of B^{-1}.
    let col = binv.column(k).into_owned();
    let row = binv.row(k).into_owned();
    let outer = &col * &row;
    Ok(&binv + outer.map(|z| z * coeff))
}

/// Imaginary-shift ladder for branch tracking: near the real axis the
/// subordination fixed points acquire spurious certified solutions, so each
/// evaluation is continued down from `B + i s I` (where the physical branch
/// is the unique attractor), warm-starting every stage from the previous
/// subordination function. Stages already dominated by the argument's own
/// imaginary part are skipped.
fn shift_stages(b: &CMat) -> Vec<f64> {
    let depth = imag_part(b)
        .map(|im| im.as_mat().symmetric_eigenvalues().min())
        .unwrap_or(0.0)
        .max(0.0);
    let mut stages: Vec<f64> = [1.0, 0.25, 0.0625, 0.015625]
        .into_iter()
        .filter(|&s| s > depth)
        .collect();
    stages.push(0.0);
    stages
}

fn shifted(b: &CMat, s: f64) -> CMat {
    if s == 0.0 {
        b.clone()
    } else {
        b + CMat::from_diagonal_element(b.nrows(), b.ncols(), Complex64::new(0.0, s))
    }
}

fn eval_sum(
    g1: &CauchyEvaluator,
    g2: &CauchyEvaluator,
    cfg: &FixedPointConfig,
    b: &CMat,
    _hp: HalfPlane,
) -> Result<CMat> {
    // No half-plane restriction on omega: when a summand is a product
    // transform, the subordination function legitimately leaves the upper
    // half plane at matrix arguments. The residual of the defining equation
    // certifies each stage; the shift ladder pins the branch.
    let mut omega: Option<CMat> = None;
    for s in shift_stages(b) {
        let bs = shifted(b, s);
        let map = |w: &CMat| -> Result<CMat> {
            let r1 = r_transform(g1, w)?;
            let r2 = r_transform(g2, &(r1 + &bs))?;
            Ok(r2 + &bs)
        };
        let start = omega.take().unwrap_or_else(|| bs.clone());
        let sol =
            fixed_point::solve(map, &start, cfg, |_| true, "additive subordination fixed point")?;
        omega = Some(sol.value);
    }
    g1.evaluate(&omega.expect("ladder is nonempty"))
}

fn eval_product(
    tilde1: &CauchyEvaluator,
    hat2: &CauchyEvaluator,
    cfg: &FixedPointConfig,
    b: &CMat,
) -> Result<CMat> {
    let mut omega: Option<CMat> = None;
    let mut binv_final: Option<CMat> = None;
    for s in shift_stages(b) {
        let bs = shifted(b, s);
        let binv = try_inverse(&bs, "argument of multiplicative subordination")?;
        let map = |w: &CMat| -> Result<CMat> {
            let h2 = h_transform(hat2, w)?;
            let inner = &h2 * &binv;
            let h1 = h_transform(tilde1, &inner)?;
            Ok(&binv * h1)
        };
        let start = omega.take().unwrap_or_else(|| binv.clone());
        let sol = fixed_point::solve(
            map,
            &start,
            cfg,
            |_| true,
            "multiplicative subordination fixed point",
        )?;
        omega = Some(sol.value);
        binv_final = Some(binv);
    }
    let omega_inv = try_inverse(
        &omega.expect("ladder is nonempty"),
        "subordination function omega2",
    )?;
    let binv = binv_final.expect("ladder is nonempty");
    let g2 = hat2.evaluate(&omega_inv)?;
    Ok(&g2 * &omega_inv * &binv)
}

fn eval_tilde(hat: &CauchyEvaluator, b: &CMat) -> Result<CMat> {
    let n = hat.dim();
    let d = n / 2;
    let b1 = b.view((0, 0), (d, d)).into_owned();
    let b2 = b.view((0, d), (d, d)).into_owned();
    let b3 = b.view((d, 0), (d, d)).into_owned();
    let b4 = b.view((d, d), (d, d)).into_owned();

    let i_minus_b4_inv = try_inverse(&(identity(d) - &b4), "I - B4 in the tilde formula")?;
    let z = &b1 + &b2 * &i_minus_b4_inv * &b3;

    // G_{H*H}(Z) sits in the lower-right block of G_hat(diag(I, Z)).
    let mut probe = CMat::zeros(n, n);
    probe.view_mut((0, 0), (d, d)).copy_from(&identity(d));
    probe.view_mut((d, d), (d, d)).copy_from(&z);
    let ghat = hat.evaluate(&probe)?;
    let g = ghat.view((d, d), (d, d)).into_owned();

    let mut out = CMat::zeros(n, n);
    let out12 = &g * &b2 * &i_minus_b4_inv;
    let out21 = &i_minus_b4_inv * &b3 * &g;
    let out22 = -&i_minus_b4_inv + &i_minus_b4_inv * &b3 * &g * &b2 * &i_minus_b4_inv;
    out.view_mut((0, 0), (d, d)).copy_from(&g);
    out.view_mut((0, d), (d, d)).copy_from(&out12);
    out.view_mut((d, 0), (d, d)).copy_from(&out21);
    out.view_mut((d, d), (d, d)).copy_from(&out22);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
