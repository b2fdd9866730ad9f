//! The channel description language: sums of products of independent block
//! Gaussian atoms, optionally sandwiched between Haar-rotated diagonal
//! factors, plus the structural certificates and the compilation of an
//! expression into a Cauchy-transform evaluator.
//!
//! Compilation is a left fold mirroring the pairwise subordination calculus:
//! within a product, the accumulated left part is converted to its tilde
//! transform and multiplied against the next factor's hat transform; terms
//! are then combined by additive subordination. A melded transmit covariance
//! is absorbed into the last block Gaussian factor of each term (or appended
//! as a constant right multiplier after a sandwich factor), so the compiled
//! evaluator describes the law of `H Phi H*`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::covariance::{meld_input, CovarianceMapping, ScaledCovariance};
use crate::fixed_point::FixedPointConfig;
use crate::linalg::{principal_sqrt, CMat, PsdMatrix};
use crate::transforms::{
    cauchy_block_gaussian, cauchy_constant, cauchy_scalar_embed, subordinate_product,
    subordinate_sum, tilde_from_hat, CauchyEvaluator, DiscreteDistribution,
};
use crate::{Error, Result};

static NEXT_ATOM_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of one independent randomness source. Two positions in an
/// expression may never share an id: the freeness arguments require
/// independent families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtomId(u64);

/// One factor of a product term.
#[derive(Clone, Debug)]
pub struct Atom {
    id: AtomId,
    kind: AtomKind,
}

#[derive(Clone, Debug)]
pub enum AtomKind {
    /// A block Gaussian matrix with covariance mapping `K`.
    BlockGaussian(CovarianceMapping),
    /// `diag(U_k A_k U_k*) W diag(V_k B_k V_k*)`: an inner compound channel
    /// sandwiched between independent Haar-rotated diagonal blocks whose
    /// spectral limits are the given scalar distributions (d per side).
    SandwichDiagonal {
        left: Vec<DiscreteDistribution>,
        inner: Box<ChannelExpr>,
        right: Vec<DiscreteDistribution>,
    },
}

impl Atom {
    pub fn block_gaussian(cov: CovarianceMapping) -> Self {
        Self {
            id: AtomId(NEXT_ATOM_ID.fetch_add(1, Ordering::Relaxed)),
            kind: AtomKind::BlockGaussian(cov),
        }
    }

    pub fn sandwich(
        left: Vec<DiscreteDistribution>,
        inner: ChannelExpr,
        right: Vec<DiscreteDistribution>,
    ) -> Result<Self> {
        let d = inner.d();
        if left.len() != d || right.len() != d {
            return Err(Error::Domain(format!(
                "sandwich needs exactly {d} scalar distributions per side, got {} and {}",
                left.len(),
                right.len()
            )));
        }
        Ok(Self {
            id: AtomId(NEXT_ATOM_ID.fetch_add(1, Ordering::Relaxed)),
            kind: AtomKind::SandwichDiagonal {
                left,
                inner: Box::new(inner),
                right,
            },
        })
    }

    pub fn id(&self) -> AtomId {
        self.id
    }

    pub fn kind(&self) -> &AtomKind {
        &self.kind
    }

    fn d(&self) -> usize {
        match &self.kind {
            AtomKind::BlockGaussian(cov) => cov.d(),
            AtomKind::SandwichDiagonal { inner, .. } => inner.d(),
        }
    }

    fn collect_ids(&self, out: &mut Vec<AtomId>) {
        out.push(self.id);
        if let AtomKind::SandwichDiagonal { inner, .. } = &self.kind {
            inner.collect_ids(out);
        }
    }
}

/// One product term: an ordered list of factors, with an optional melded
/// `Phi^{1/2}` right multiplier (set by [`meld_phi`] when the final factor is
/// a sandwich and the covariance cannot be absorbed directly).
#[derive(Clone, Debug)]
pub struct ProductTerm {
    factors: Vec<Atom>,
    phi_tail: Option<PsdMatrix>,
}

impl ProductTerm {
    pub fn factors(&self) -> &[Atom] {
        &self.factors
    }

    pub fn phi_tail(&self) -> Option<&PsdMatrix> {
        self.phi_tail.as_ref()
    }
}

/// A compound channel: sum over terms of products of factors.
#[derive(Clone, Debug)]
pub struct ChannelExpr {
    d: usize,
    terms: Vec<ProductTerm>,
    melded: bool,
}

impl ChannelExpr {
    pub fn new(d: usize, terms: Vec<Vec<Atom>>) -> Result<Self> {
        let expr = Self {
            d,
            terms: terms
                .into_iter()
                .map(|factors| ProductTerm {
                    factors,
                    phi_tail: None,
                })
                .collect(),
            melded: false,
        };
        expr.validate()?;
        Ok(expr)
    }

    pub fn single(cov: CovarianceMapping) -> Self {
        let d = cov.d();
        Self::new(d, vec![vec![Atom::block_gaussian(cov)]]).expect("single atom is well-formed")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn terms(&self) -> &[ProductTerm] {
        &self.terms
    }

    pub fn is_melded(&self) -> bool {
        self.melded
    }

    fn collect_ids(&self, out: &mut Vec<AtomId>) {
        for term in &self.terms {
            for atom in &term.factors {
                atom.collect_ids(out);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Domain("block dimension must be positive".into()));
        }
        if self.terms.is_empty() {
            return Err(Error::Domain("channel needs at least one term".into()));
        }
        for (ti, term) in self.terms.iter().enumerate() {
            if term.factors.is_empty() {
                return Err(Error::Domain(format!("term[{ti}] has no factors")));
            }
            for (fi, atom) in term.factors.iter().enumerate() {
                if atom.d() != self.d {
                    return Err(Error::Domain(format!(
                        "term[{ti}].factor[{fi}] has block dimension {}, expected {}",
                        atom.d(),
                        self.d
                    )));
                }
                if let AtomKind::SandwichDiagonal { inner, .. } = &atom.kind {
                    inner.validate()?;
                }
            }
        }
        let mut ids = Vec::new();
        self.collect_ids(&mut ids);
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain(
                "an atom appears twice in the expression; every factor must be an independent \
                 source"
                    .into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Structural certificates
// ---------------------------------------------------------------------------

/// Constructive derivation that the channel is invariant in law under right
/// multiplication by `I_d (x) U_N`: each atom kind is closed individually,
/// and sums/products of independent such channels stay closed.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SChannelCertificate {
    pub holds: bool,
    pub derivation: Vec<String>,
}

pub fn certify_s_channel(expr: &ChannelExpr) -> Result<SChannelCertificate> {
    expr.validate()?;
    let mut derivation = Vec::new();
    certify_rec(expr, "", &mut derivation);
    Ok(SChannelCertificate {
        holds: true,
        derivation,
    })
}

fn certify_rec(expr: &ChannelExpr, path: &str, out: &mut Vec<String>) {
    for (ti, term) in expr.terms.iter().enumerate() {
        for (fi, atom) in term.factors.iter().enumerate() {
            let loc = format!("{path}term[{ti}].factor[{fi}]");
            match &atom.kind {
                AtomKind::BlockGaussian(_) => out.push(format!(
                    "{loc}: block Gaussian atom is right-rotation invariant (the \
                     V = (K^(1/2) (x) I) W construction)"
                )),
                AtomKind::SandwichDiagonal { inner, .. } => {
                    out.push(format!(
                        "{loc}: Haar-rotated diagonal sandwich is right-rotation invariant"
                    ));
                    certify_rec(inner, &format!("{loc}."), out);
                }
            }
        }
        if term.factors.len() > 1 {
            out.push(format!(
                "{path}term[{ti}]: product closure over {} independent factors",
                term.factors.len()
            ));
        }
    }
    if expr.terms.len() > 1 {
        out.push(format!(
            "{path}sum closure over {} independent terms",
            expr.terms.len()
        ));
    }
}

/// Structural proof that the odd *-moments of the channel entries vanish:
/// atoms are centered circular families, products of centered free families
/// with vanishing odd moments keep the property (parity of letter counts),
/// and sums inherit it by linearity.
#[derive(Clone, Debug, serde::Serialize)]
pub struct OddMomentProof {
    pub vanish: bool,
    pub steps: Vec<String>,
}

pub fn odd_moments_vanish(expr: &ChannelExpr) -> OddMomentProof {
    let mut steps = Vec::new();
    for (ti, term) in expr.terms.iter().enumerate() {
        for (fi, atom) in term.factors.iter().enumerate() {
            match &atom.kind {
                AtomKind::BlockGaussian(_) => steps.push(format!(
                    "term[{ti}].factor[{fi}]: centered circular family, odd *-moments vanish"
                )),
                AtomKind::SandwichDiagonal { .. } => steps.push(format!(
                    "term[{ti}].factor[{fi}]: sandwich around a centered inner channel; every \
                     word with an odd number of centered letters has zero expectation"
                )),
            }
        }
        if term.factors.len() > 1 {
            steps.push(format!(
                "term[{ti}]: a word of odd total degree has odd degree in some centered factor"
            ));
        }
    }
    if expr.terms.len() > 1 {
        steps.push("sum: expectation is linear over the terms".into());
    }
    OddMomentProof {
        vanish: true,
        steps,
    }
}

// ---------------------------------------------------------------------------
// Melding
// ---------------------------------------------------------------------------

/// Absorb a transmit covariance into the expression so that compiling the
/// result yields the law of `H Phi H*`: the final block Gaussian factor of
/// each term takes the melded covariance; a final sandwich factor instead
/// gets `Phi^{1/2}` appended as a constant right multiplier at compile time.
pub fn meld_phi(expr: &ChannelExpr, phi: &PsdMatrix) -> Result<ChannelExpr> {
    if phi.dim() != expr.d {
        return Err(Error::Domain(format!(
            "Phi must be {0}x{0}, got {1}x{1}",
            expr.d,
            phi.dim()
        )));
    }
    if expr.is_melded() {
        return Err(Error::Domain("expression is already melded".into()));
    }
    let mut out = expr.clone();
    out.melded = true;
    for term in out.terms.iter_mut() {
        let last = term.factors.last_mut().expect("validated nonempty");
        match &mut last.kind {
            AtomKind::BlockGaussian(cov) => {
                let melded = meld_input(cov, phi)?;
                *cov = CovarianceMapping::new(expr.d, melded.sigma().clone())?;
            }
            AtomKind::SandwichDiagonal { .. } => {
                term.phi_tail = Some(principal_sqrt(phi));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

/// Compile the expression into the hat Cauchy-transform evaluator of the
/// channel operator. Convergence errors raised later, during evaluation, are
/// annotated with the subtree path they originate from.
pub fn compile(expr: &ChannelExpr, cfg: &FixedPointConfig) -> Result<CauchyEvaluator> {
    expr.validate()?;
    cfg.validate()?;
    compile_rec(expr, cfg, "")
}

fn compile_rec(expr: &ChannelExpr, cfg: &FixedPointConfig, path: &str) -> Result<CauchyEvaluator> {
    let mut acc: Option<CauchyEvaluator> = None;
    for (ti, term) in expr.terms.iter().enumerate() {
        let term_ev = compile_term(term, cfg, &format!("{path}term[{ti}]"))?;
        acc = Some(match acc {
            None => term_ev,
            Some(prev) => subordinate_sum(&prev, &term_ev, cfg)?,
        });
    }
    Ok(acc.expect("validated nonempty"))
}

fn compile_term(term: &ProductTerm, cfg: &FixedPointConfig, path: &str) -> Result<CauchyEvaluator> {
    let mut acc = hat_of_atom(&term.factors[0], cfg, &format!("{path}.factor[0]"))?;
    for (fi, atom) in term.factors.iter().enumerate().skip(1) {
        let tilde = tilde_from_hat(&acc)?;
        let hat = hat_of_atom(atom, cfg, &format!("{path}.factor[{fi}]"))?;
        acc = subordinate_product(&tilde, &hat, cfg)?;
    }
    if let Some(phi_sqrt) = &term.phi_tail {
        let tilde = tilde_from_hat(&acc)?;
        let hat = cauchy_constant(hermitize(phi_sqrt.as_mat()))?;
        acc = subordinate_product(&tilde, &hat, cfg)?;
    }
    Ok(acc)
}

/// Hermitization `[[0, X], [X*, 0]]`.
pub fn hermitize(x: &CMat) -> CMat {
    let d = x.nrows();
    let mut out = CMat::zeros(2 * d, 2 * d);
    out.view_mut((0, d), (d, d)).copy_from(x);
    out.view_mut((d, 0), (d, d)).copy_from(&x.adjoint());
    out
}

fn hat_of_atom(atom: &Atom, cfg: &FixedPointConfig, path: &str) -> Result<CauchyEvaluator> {
    match &atom.kind {
        AtomKind::BlockGaussian(cov) => {
            Ok(
                cauchy_block_gaussian(ScaledCovariance::from_covariance(cov), cfg)
                    .with_error_path(path),
            )
        }
        AtomKind::SandwichDiagonal { left, inner, right } => {
            let d = inner.d();
            let inner_hat = compile_rec(inner, cfg, &format!("{path}."))?;
            // The squared diagonal limits a_k^2, b_k^2 embedded on the
            // hermitization diagonal, combined by additive subordination.
            let mut dsq: Option<CauchyEvaluator> = None;
            for (k, dist) in left.iter().chain(right.iter()).enumerate() {
                let embed = cauchy_scalar_embed(Arc::new(dist.squared()), k, 2 * d)?;
                dsq = Some(match dsq {
                    None => embed,
                    Some(prev) => subordinate_sum(&prev, &embed, cfg)?,
                });
            }
            let dsq = dsq.expect("left/right are nonempty for d >= 1");
            let prod = subordinate_product(&dsq, &inner_hat, cfg)?;
            // The inner channel is centered, so the sandwich is centered with
            // vanishing odd *-moments even though the combinators cannot see
            // that through the positive diagonal factor.
            Ok(prod.with_odd_moment_guarantee().with_error_path(path))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density;
    use crate::linalg::{identity, scalar_matrix, sup_norm};
    use num_complex::Complex64;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rand_cmat(n: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(n, n, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
    }

    fn rand_psd(n: usize, rng: &mut ChaCha8Rng) -> PsdMatrix {
        let g = rand_cmat(n, rng);
        PsdMatrix::new(&g * g.adjoint()).unwrap()
    }

    fn rand_uhp(n: usize, rng: &mut ChaCha8Rng) -> CMat {
        let re = rand_cmat(n, rng);
        let herm = (&re + re.adjoint()).scale(0.5);
        let l = rand_cmat(n, rng);
        let pd = &l * l.adjoint() + identity(n).scale(0.2);
        herm + pd.map(|z| z * c(0.0, 1.0))
    }

    fn unit_cov() -> CovarianceMapping {
        CovarianceMapping::iid(1)
    }

    #[test]
    fn single_atom_compiles_to_the_atom_transform() {
        let cfg = FixedPointConfig::default();
        let expr = ChannelExpr::single(unit_cov());
        let compiled = compile(&expr, &cfg).unwrap();
        let direct =
            cauchy_block_gaussian(ScaledCovariance::from_covariance(&unit_cov()), &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let b = rand_uhp(2, &mut rng);
            let lhs = compiled.evaluate(&b).unwrap();
            let rhs = direct.evaluate(&b).unwrap();
            assert_eq!(lhs, rhs, "base case must be bitwise identical");
        }
    }

    #[test]
    fn compilation_is_deterministic() {
        let cfg = FixedPointConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k1 = rand_psd(4, &mut rng);
        let k2 = rand_psd(4, &mut rng);
        let build = || {
            ChannelExpr::new(
                2,
                vec![
                    vec![Atom::block_gaussian(
                        CovarianceMapping::new(2, k1.clone()).unwrap(),
                    )],
                    vec![Atom::block_gaussian(
                        CovarianceMapping::new(2, k2.clone()).unwrap(),
                    )],
                ],
            )
            .unwrap()
        };
        let ev1 = compile(&build(), &cfg).unwrap();
        let ev2 = compile(&build(), &cfg).unwrap();
        let b = rand_uhp(4, &mut rng);
        assert_eq!(ev1.evaluate(&b).unwrap(), ev2.evaluate(&b).unwrap());
    }

    #[test]
    fn sum_of_atoms_equals_summed_covariance() {
        let cfg = FixedPointConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 2;
        let k1 = rand_psd(d * d, &mut rng);
        let k2 = rand_psd(d * d, &mut rng);
        let expr = ChannelExpr::new(
            d,
            vec![
                vec![Atom::block_gaussian(
                    CovarianceMapping::new(d, k1.clone()).unwrap(),
                )],
                vec![Atom::block_gaussian(
                    CovarianceMapping::new(d, k2.clone()).unwrap(),
                )],
            ],
        )
        .unwrap();
        let sum = compile(&expr, &cfg).unwrap();
        let combined = compile(
            &ChannelExpr::single(
                CovarianceMapping::new(d, PsdMatrix::new(k1.as_mat() + k2.as_mat()).unwrap())
                    .unwrap(),
            ),
            &cfg,
        )
        .unwrap();
        for _ in 0..20 {
            let b = rand_uhp(2 * d, &mut rng);
            let dev = sup_norm(&(sum.evaluate(&b).unwrap() - combined.evaluate(&b).unwrap()));
            assert!(dev < 1e-6, "additivity deviation {dev:.2e}");
        }
    }

    #[test]
    fn product_of_two_circulars_has_fuss_catalan_moments() {
        let cfg = FixedPointConfig::default();
        let expr = ChannelExpr::new(
            1,
            vec![vec![
                Atom::block_gaussian(unit_cov()),
                Atom::block_gaussian(unit_cov()),
            ]],
        )
        .unwrap();
        let ev = compile(&expr, &cfg).unwrap();
        let density = density::density_auto(&ev, None, None, 2000, 1e-6).unwrap();
        for (k, fc) in [(1u32, 1.0), (2, 3.0), (3, 12.0)] {
            let m = density.power_moment(k);
            assert!(
                (m - fc).abs() < 1e-2 * fc,
                "Fuss-Catalan moment {k}: got {m}, expected {fc}"
            );
        }
    }

    #[test]
    fn meld_with_identity_is_identity() {
        let cfg = FixedPointConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 2;
        let k = rand_psd(d * d, &mut rng);
        let expr = ChannelExpr::single(CovarianceMapping::new(d, k.clone()).unwrap());
        let melded = meld_phi(&expr, &PsdMatrix::identity(d)).unwrap();
        match melded.terms()[0].factors()[0].kind() {
            AtomKind::BlockGaussian(cov) => {
                assert!(sup_norm(&(cov.k().as_mat() - k.as_mat())) < 1e-10);
            }
            _ => panic!("kind changed"),
        }
        let b = rand_uhp(2 * d, &mut rng);
        let lhs = compile(&expr, &cfg).unwrap().evaluate(&b).unwrap();
        let rhs = compile(&melded, &cfg).unwrap().evaluate(&b).unwrap();
        assert!(sup_norm(&(lhs - rhs)) < 1e-9);
    }

    #[test]
    fn meld_scalar_scales_the_covariance() {
        let expr = ChannelExpr::single(unit_cov());
        let phi = PsdMatrix::new(CMat::from_element(1, 1, c(0.3, 0.0))).unwrap();
        let melded = meld_phi(&expr, &phi).unwrap();
        match melded.terms()[0].factors()[0].kind() {
            AtomKind::BlockGaussian(cov) => {
                assert!((cov.k().as_mat()[(0, 0)] - c(0.3, 0.0)).norm() < 1e-12);
            }
            _ => panic!("kind changed"),
        }
    }

    #[test]
    fn meld_touches_only_the_last_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 2;
        let k1 = rand_psd(d * d, &mut rng);
        let k2 = rand_psd(d * d, &mut rng);
        let expr = ChannelExpr::new(
            d,
            vec![vec![
                Atom::block_gaussian(CovarianceMapping::new(d, k1.clone()).unwrap()),
                Atom::block_gaussian(CovarianceMapping::new(d, k2.clone()).unwrap()),
            ]],
        )
        .unwrap();
        let phi = {
            let p = rand_psd(d, &mut rng);
            let t = p.trace_re();
            PsdMatrix::new(p.as_mat().scale(1.0 / t)).unwrap()
        };
        let melded = meld_phi(&expr, &phi).unwrap();
        let factors = melded.terms()[0].factors();
        match factors[0].kind() {
            AtomKind::BlockGaussian(cov) => {
                assert!(
                    sup_norm(&(cov.k().as_mat() - k1.as_mat())) < 1e-12,
                    "first factor must stay untouched"
                );
            }
            _ => panic!(),
        }
        match factors[1].kind() {
            AtomKind::BlockGaussian(cov) => {
                assert!(
                    sup_norm(&(cov.k().as_mat() - k2.as_mat())) > 1e-6,
                    "second factor must carry the melded covariance"
                );
            }
            _ => panic!(),
        }
        assert!(meld_phi(&melded, &phi).is_err(), "double melding rejected");
    }

    #[test]
    fn atom_reuse_is_rejected() {
        let atom = Atom::block_gaussian(unit_cov());
        assert!(ChannelExpr::new(1, vec![vec![atom.clone(), atom]]).is_err());
    }

    #[test]
    fn certificate_lists_the_closure_rules() {
        let single = ChannelExpr::single(unit_cov());
        let cert = certify_s_channel(&single).unwrap();
        assert!(cert.holds);
        assert_eq!(cert.derivation.len(), 1);

        // H1 H2 + H3: product closure then sum closure.
        let expr = ChannelExpr::new(
            1,
            vec![
                vec![
                    Atom::block_gaussian(unit_cov()),
                    Atom::block_gaussian(unit_cov()),
                ],
                vec![Atom::block_gaussian(unit_cov())],
            ],
        )
        .unwrap();
        let cert = certify_s_channel(&expr).unwrap();
        assert!(cert.holds);
        assert!(cert.derivation.iter().any(|r| r.contains("product closure")));
        assert!(cert.derivation.iter().any(|r| r.contains("sum closure")));

        let sandwich = Atom::sandwich(
            vec![DiscreteDistribution::point_mass(1.0)],
            ChannelExpr::single(unit_cov()),
            vec![DiscreteDistribution::point_mass(1.0)],
        )
        .unwrap();
        let expr = ChannelExpr::new(1, vec![vec![sandwich]]).unwrap();
        let cert = certify_s_channel(&expr).unwrap();
        assert!(cert.derivation.iter().any(|r| r.contains("sandwich")));
    }

    #[test]
    fn odd_moment_proof_is_structural() {
        let expr = ChannelExpr::new(
            1,
            vec![
                vec![
                    Atom::block_gaussian(unit_cov()),
                    Atom::block_gaussian(unit_cov()),
                ],
                vec![Atom::block_gaussian(unit_cov())],
            ],
        )
        .unwrap();
        let proof = odd_moments_vanish(&expr);
        assert!(proof.vanish);
        assert!(!proof.steps.is_empty());
    }

    #[test]
    fn trivial_sandwich_reduces_to_the_inner_channel() {
        // Unit point masses on both sides: D^2 = I, so the sandwich equals
        // the inner channel.
        let cfg = FixedPointConfig::default();
        let inner = ChannelExpr::single(unit_cov());
        let sandwich = Atom::sandwich(
            vec![DiscreteDistribution::point_mass(1.0)],
            inner.clone(),
            vec![DiscreteDistribution::point_mass(1.0)],
        )
        .unwrap();
        let expr = ChannelExpr::new(1, vec![vec![sandwich]]).unwrap();
        let ev = compile(&expr, &cfg).unwrap();
        let plain = compile(&inner, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let b = rand_uhp(2, &mut rng);
            let dev = sup_norm(&(ev.evaluate(&b).unwrap() - plain.evaluate(&b).unwrap()));
            assert!(dev < 1e-7, "trivial sandwich deviation {dev:.2e}");
        }
    }

    #[test]
    fn sandwich_scales_like_its_diagonal() {
        // Point mass at sqrt(2) on the left, 1 on the right: H = sqrt(2) W,
        // so squared singular values scale by 2 relative to the inner law.
        let cfg = FixedPointConfig::default();
        let inner = ChannelExpr::single(unit_cov());
        let sandwich = Atom::sandwich(
            vec![DiscreteDistribution::point_mass(2f64.sqrt())],
            inner,
            vec![DiscreteDistribution::point_mass(1.0)],
        )
        .unwrap();
        let expr = ChannelExpr::new(1, vec![vec![sandwich]]).unwrap();
        let ev = compile(&expr, &cfg).unwrap();
        let density = density::density_auto(&ev, None, None, 1200, 1e-6).unwrap();
        let m1 = density.power_moment(1);
        assert!((m1 - 2.0).abs() < 2e-2, "first moment {m1}");
        // Spot check against the scaled Marchenko-Pastur law f(x/2)/2.
        let f3 = density::point_value(&ev, 3.0, 1e-6).unwrap();
        let expect = density::marchenko_pastur_density(1.5) / 2.0;
        assert!((f3 - expect).abs() < 2e-3, "f(3) = {f3}, expected {expect}");
    }

    #[test]
    fn compile_error_paths_name_the_subtree() {
        // An unreachable tolerance forces a convergence error, which must
        // carry the term/factor path.
        let cfg = FixedPointConfig {
            tolerance: 1e-30,
            max_iterations: 50,
            damping: 0.0,
        };
        let expr = ChannelExpr::single(unit_cov());
        let ev = compile(&expr, &cfg).unwrap();
        let err = ev.evaluate(&scalar_matrix(2, c(0.5, 1e-8))).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("term[0].factor[0]"),
            "error should name the subtree: {msg}"
        );
    }
}
