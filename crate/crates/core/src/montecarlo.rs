//! Finite-N ground truth: sampling of block Gaussian and compound random
//! matrices, empirical spectra and mutual information, the closed-form
//! permutation symmetrization with its brute-force oracle, and a statistical
//! probe of the right-rotation symmetry.
//!
//! All randomness flows through seeded ChaCha streams: one stream per trial,
//! sequential draws within a trial, so identical seeds give bitwise-identical
//! samples and reports regardless of thread scheduling.

use std::io::Write;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{AtomKind, ChannelExpr};
use crate::covariance::CovarianceMapping;
use crate::density::SpectralDensity;
use crate::linalg::{
    hermitian_eigenvalues_unchecked, identity, kron, principal_sqrt, CMat, PsdMatrix,
};
use crate::transforms::DiscreteDistribution;
use crate::{Error, Result};

/// Trial plan for the harness.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SampleConfig {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
}

impl SampleConfig {
    pub fn new(n: usize, trials: usize, seed: u64) -> Result<Self> {
        if n == 0 || trials == 0 {
            return Err(Error::Domain("N and trials must be >= 1".into()));
        }
        Ok(Self { n, trials, seed })
    }

    fn trial_rng(&self, trial: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial as u64 + 1);
        rng
    }
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

fn standard_complex(rng: &mut ChaCha8Rng) -> Complex64 {
    // Circularly symmetric, unit variance: independent N(0, 1/2) parts.
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `rows x cols` matrix of i.i.d. standard circularly-symmetric complex
/// Gaussians.
pub fn ginibre(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| standard_complex(rng))
}

/// Haar-distributed unitary matrix: QR of a Ginibre matrix with the phases of
/// the R diagonal absorbed into Q.
pub fn haar_unitary(n: usize, rng: &mut ChaCha8Rng) -> CMat {
    let g = ginibre(n, n, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 {
            rjj / rjj.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// One draw of a `dN x dN` block Gaussian matrix with covariance mapping `K`:
/// stacks `d^2` independent Ginibre blocks `W^(k)`, forms
/// `V^(i) = sum_k (K^(1/2))_{i,k} W^(k)` and reassembles the blocks as
/// `H^(i,j) = V^(i + j d)`.
pub fn sample_block_gaussian(cm: &CovarianceMapping, n: usize, rng: &mut ChaCha8Rng) -> CMat {
    let d = cm.d();
    let ksqrt = principal_sqrt(cm.k());
    let ksqrt = ksqrt.as_mat();
    let blocks: Vec<CMat> = (0..d * d).map(|_| ginibre(n, n, rng)).collect();
    let mut h = CMat::zeros(d * n, d * n);
    for i in 0..d {
        for j in 0..d {
            let row = i + j * d;
            let mut v = CMat::zeros(n, n);
            for (k, w) in blocks.iter().enumerate() {
                let coeff = ksqrt[(row, k)];
                if coeff.norm() > 0.0 {
                    v += w.map(|z| z * coeff);
                }
            }
            h.view_mut((i * n, j * n), (n, n)).copy_from(&v);
        }
    }
    h
}

/// Deterministic diagonal of length `n` realizing a discrete distribution at
/// finite size (largest-remainder apportionment of the weights).
fn diagonal_from_distribution(dist: &DiscreteDistribution, n: usize) -> Vec<f64> {
    let atoms = dist.atoms();
    let mut counts: Vec<usize> = atoms.iter().map(|&(_, w)| (w * n as f64) as usize).collect();
    let mut rem: Vec<(f64, usize)> = atoms
        .iter()
        .enumerate()
        .map(|(i, &(_, w))| (w * n as f64 - counts[i] as f64, i))
        .collect();
    rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut assigned: usize = counts.iter().sum();
    let mut ri = 0;
    while assigned < n {
        counts[rem[ri % rem.len()].1] += 1;
        assigned += 1;
        ri += 1;
    }
    let mut out = Vec::with_capacity(n);
    for (i, &(v, _)) in atoms.iter().enumerate() {
        out.extend(std::iter::repeat(v).take(counts[i]));
    }
    out.truncate(n);
    out
}

/// One draw of the full compound channel: every atom sampled independently
/// (Haar-conjugated diagonals for sandwich factors), factors multiplied in
/// order, terms summed. An `m`-factor product term is scaled by
/// `N^{-(m-1)/2}` so that `H/sqrt(N)` has the operator limit the analytic
/// side computes: each factor contributes one `1/sqrt(N)`. Expressions melded
/// with a transmit covariance are rejected; the harness applies `Phi`
/// explicitly.
pub fn sample_channel(expr: &ChannelExpr, n: usize, rng: &mut ChaCha8Rng) -> Result<CMat> {
    if expr.is_melded() {
        return Err(Error::Domain(
            "sample_channel expects an unmelded expression; pass Phi explicitly".into(),
        ));
    }
    expr.validate()?;
    let d = expr.d();
    let mut total = CMat::zeros(d * n, d * n);
    for term in expr.terms() {
        let mut prod: Option<CMat> = None;
        for atom in term.factors() {
            let sample = match atom.kind() {
                AtomKind::BlockGaussian(cov) => sample_block_gaussian(cov, n, rng),
                AtomKind::SandwichDiagonal { left, inner, right } => {
                    let left_m = sample_rotated_diagonal(left, n, rng);
                    let w = sample_channel(inner, n, rng)?;
                    let right_m = sample_rotated_diagonal(right, n, rng);
                    left_m * w * right_m
                }
            };
            prod = Some(match prod {
                None => sample,
                Some(acc) => acc * sample,
            });
        }
        let m = term.factors().len();
        let mut value = prod.expect("validated nonempty");
        if m > 1 {
            value = value.scale((n as f64).powf(-((m - 1) as f64) / 2.0));
        }
        total += value;
    }
    Ok(total)
}

/// `diag(U_k A_k U_k*)` with independent Haar blocks.
fn sample_rotated_diagonal(dists: &[DiscreteDistribution], n: usize, rng: &mut ChaCha8Rng) -> CMat {
    let d = dists.len();
    let mut out = CMat::zeros(d * n, d * n);
    for (k, dist) in dists.iter().enumerate() {
        let u = haar_unitary(n, rng);
        let a = DVector::from_iterator(
            n,
            diagonal_from_distribution(dist, n)
                .into_iter()
                .map(|v| Complex64::new(v, 0.0)),
        );
        let block = &u * CMat::from_diagonal(&a) * u.adjoint();
        out.view_mut((k * n, k * n), (n, n)).copy_from(&block);
    }
    out
}

// ---------------------------------------------------------------------------
// Empirical spectra and mutual information
// ---------------------------------------------------------------------------

/// Eigenvalues of `(1/N) H (Phi (x) I_N) H*` pooled over trials.
#[derive(Clone, Debug)]
pub struct EmpiricalSpectrum {
    pub eigenvalues: Vec<f64>,
    pub n: usize,
    pub trials: usize,
    pub channel_hash: String,
}

impl EmpiricalSpectrum {
    /// One eigenvalue per row, preceded by a header naming the provenance.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# channel={} N={} trials={}",
            self.channel_hash, self.n, self.trials
        )?;
        for v in &self.eigenvalues {
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }

    /// Kolmogorov-Smirnov distance against an analytic density's CDF.
    pub fn ks_distance(&self, density: &SpectralDensity) -> f64 {
        let grid = density.grid();
        let cdf = density.cdf();
        let interp = |x: f64| -> f64 {
            if x <= grid[0] {
                return 0.0;
            }
            if x >= grid[grid.len() - 1] {
                return 1.0;
            }
            let idx = grid.partition_point(|&g| g < x);
            let (x0, x1) = (grid[idx - 1], grid[idx]);
            let t = (x - x0) / (x1 - x0);
            cdf[idx - 1] + t * (cdf[idx] - cdf[idx - 1])
        };
        let m = self.eigenvalues.len() as f64;
        let mut ks: f64 = 0.0;
        for (i, &x) in self.eigenvalues.iter().enumerate() {
            let f = interp(x);
            ks = ks.max((f - i as f64 / m).abs());
            ks = ks.max(((i + 1) as f64 / m - f).abs());
        }
        ks
    }
}

fn phi_times_identity(phi: &PsdMatrix, n: usize) -> CMat {
    kron(phi.as_mat(), &identity(n))
}

/// Pool the eigenvalues of `(1/N) H (Phi (x) I_N) H*` across independent
/// trials.
pub fn empirical_spectrum(
    expr: &ChannelExpr,
    phi: &PsdMatrix,
    cfg: &SampleConfig,
) -> Result<EmpiricalSpectrum> {
    if phi.dim() != expr.d() {
        return Err(Error::Domain("Phi dimension mismatch".into()));
    }
    let q = phi_times_identity(phi, cfg.n);
    let per_trial: Vec<Vec<f64>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = cfg.trial_rng(t);
            let h = sample_channel(expr, cfg.n, &mut rng)?;
            let s = (&h * &q * h.adjoint()).scale(1.0 / cfg.n as f64);
            Ok(hermitian_eigenvalues_unchecked(&s).iter().copied().collect())
        })
        .collect::<Result<_>>()?;
    let mut eigenvalues: Vec<f64> = per_trial.into_iter().flatten().collect();
    eigenvalues.sort_by(f64::total_cmp);
    Ok(EmpiricalSpectrum {
        eigenvalues,
        n: cfg.n,
        trials: cfg.trials,
        channel_hash: String::new(),
    })
}

/// Trial-averaged normalized mutual information with its standard error.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MutualInformation {
    /// `E log det(I + (P/N) H (Phi (x) I) H*) / (dN)`, nats per antenna.
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub trials: usize,
}

/// Log-determinant of `I + c M` for PSD `M`, via Cholesky.
fn logdet_i_plus(m: &CMat, c: f64) -> Result<f64> {
    let n = m.nrows();
    let a = identity(n) + m.map(|z| z * c);
    let sym = (&a + a.adjoint()).scale(0.5);
    let chol = nalgebra::Cholesky::new(sym)
        .ok_or_else(|| Error::Numeric("Cholesky failed on I + c M".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|z| z.re.ln()).sum::<f64>())
}

pub fn empirical_mutual_information(
    expr: &ChannelExpr,
    phi: &PsdMatrix,
    p: f64,
    cfg: &SampleConfig,
) -> Result<MutualInformation> {
    if p <= 0.0 {
        return Err(Error::Domain("P must be positive".into()));
    }
    if phi.dim() != expr.d() {
        return Err(Error::Domain("Phi dimension mismatch".into()));
    }
    let q = phi_times_identity(phi, cfg.n);
    let dn = (expr.d() * cfg.n) as f64;
    let values: Vec<f64> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = cfg.trial_rng(t);
            let h = sample_channel(expr, cfg.n, &mut rng)?;
            let m = &h * &q * h.adjoint();
            Ok(logdet_i_plus(&m, p / cfg.n as f64)? / dn)
        })
        .collect::<Result<_>>()?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64
    } else {
        0.0
    };
    Ok(MutualInformation {
        mean,
        std_error: (var / values.len() as f64).sqrt(),
        n: cfg.n,
        trials: cfg.trials,
    })
}

// ---------------------------------------------------------------------------
// Symmetrization
// ---------------------------------------------------------------------------

/// Average of `pi M pi^{-1}` over all permutations, in closed form: the
/// normalized trace on the diagonal and the off-diagonal mean elsewhere.
pub fn symmetrize(m: &CMat) -> Result<CMat> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Domain("symmetrize needs a square matrix".into()));
    }
    let tr = m.trace() / Complex64::new(n as f64, 0.0);
    let mut off = Complex64::ZERO;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off += m[(i, j)];
            }
        }
    }
    if n > 1 {
        off /= Complex64::new((n * (n - 1)) as f64, 0.0);
    }
    Ok(CMat::from_fn(n, n, |i, j| if i == j { tr } else { off }))
}

/// Exact average over all `N!` permutation conjugations (`N <= 7`).
pub fn symmetrize_bruteforce(m: &CMat) -> Result<CMat> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Domain("symmetrize needs a square matrix".into()));
    }
    if n > 7 {
        return Err(Error::Domain(format!(
            "brute-force symmetrization is capped at N = 7, got {n}"
        )));
    }
    let mut acc = CMat::zeros(n, n);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut count = 0u64;
    permute(&mut perm, 0, &mut |p| {
        // (pi M pi^{-1})_{i,j} = M_{p(i), p(j)}
        for i in 0..n {
            for j in 0..n {
                acc[(i, j)] += m[(p[i], p[j])];
            }
        }
        count += 1;
    });
    Ok(acc.scale(1.0 / count as f64))
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

// ---------------------------------------------------------------------------
// Symmetry probe
// ---------------------------------------------------------------------------

/// Per-word outcome of the right-rotation symmetry probe.
#[derive(Clone, Debug, Serialize)]
pub struct WordDeviation {
    pub word: String,
    pub deviation_se: f64,
}

/// Comparison of empirical mixed *-moments of `H` against `H (I_d (x) U)`,
/// reported in units of the standard error of the paired per-trial
/// difference.
#[derive(Clone, Debug, Serialize)]
pub struct SymmetryProbeReport {
    pub order: usize,
    pub n: usize,
    pub trials: usize,
    pub max_deviation_se: f64,
    pub worst_word: String,
    pub words: Vec<WordDeviation>,
}

/// Probe the defining symmetry on the channel itself.
pub fn s_symmetry_probe(
    expr: &ChannelExpr,
    order: usize,
    cfg: &SampleConfig,
) -> Result<SymmetryProbeReport> {
    probe_with_right_diagonal(expr, None, order, cfg)
}

/// Negative control: probe the channel right-multiplied by the constant
/// `I_d (x) diag(values)`, which breaks the symmetry whenever the diagonal is
/// not scalar.
pub fn s_symmetry_probe_broken(
    expr: &ChannelExpr,
    right_diag: &[f64],
    order: usize,
    cfg: &SampleConfig,
) -> Result<SymmetryProbeReport> {
    probe_with_right_diagonal(expr, Some(right_diag), order, cfg)
}

fn probe_with_right_diagonal(
    expr: &ChannelExpr,
    right_diag: Option<&[f64]>,
    order: usize,
    cfg: &SampleConfig,
) -> Result<SymmetryProbeReport> {
    if order == 0 || order > 4 {
        return Err(Error::Domain("probe order must be in 1..=4".into()));
    }
    if let Some(diag) = right_diag {
        if diag.len() != cfg.n {
            return Err(Error::Domain(format!(
                "broken-symmetry diagonal must have length N = {}, got {}",
                cfg.n,
                diag.len()
            )));
        }
    }
    let d = expr.d();
    let words = enumerate_words(order);

    // Fixed non-scalar reference constant I_d (x) diag(...). Words that
    // interleave it with the channel letters are what give the probe its
    // power: pure trace words in X, X* are blind to right unitary factors
    // (X X* is pointwise invariant), while the defining symmetry still
    // guarantees equal laws for words mixed with any constant.
    let probe_mat = {
        let delta = CMat::from_diagonal(&DVector::from_iterator(
            cfg.n,
            (0..cfg.n).map(|i| Complex64::new(2.0 * (i as f64 + 0.5) / cfg.n as f64, 0.0)),
        ));
        kron(&identity(d), &delta)
    };

    // Per trial, per word: paired difference of the normalized trace between
    // the plain sample and its right-rotated copy.
    let diffs: Vec<Vec<Complex64>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = cfg.trial_rng(t);
            let mut h = sample_channel(expr, cfg.n, &mut rng)?;
            if let Some(diag) = right_diag {
                let dm = CMat::from_diagonal(&DVector::from_iterator(
                    cfg.n,
                    diag.iter().map(|&v| Complex64::new(v, 0.0)),
                ));
                h = &h * kron(&identity(d), &dm);
            }
            let u = haar_unitary(cfg.n, &mut rng);
            let rot = &h * kron(&identity(d), &u);
            let scale = 1.0 / (cfg.n as f64).sqrt();
            let a1 = h.scale(scale);
            let a2 = rot.scale(scale);
            Ok(words
                .iter()
                .map(|w| word_trace(&a1, w, &probe_mat) - word_trace(&a2, w, &probe_mat))
                .collect())
        })
        .collect::<Result<_>>()?;

    let trials = cfg.trials as f64;
    let mut report_words = Vec::with_capacity(words.len());
    let mut max_dev: f64 = 0.0;
    let mut worst = String::new();
    for (wi, w) in words.iter().enumerate() {
        let series: Vec<Complex64> = diffs.iter().map(|row| row[wi]).collect();
        let mean: Complex64 = series.iter().sum::<Complex64>() / trials;
        let (mut var_re, mut var_im) = (0.0, 0.0);
        for v in &series {
            var_re += (v.re - mean.re).powi(2);
            var_im += (v.im - mean.im).powi(2);
        }
        let denom = (trials - 1.0).max(1.0) * trials;
        let se_re = (var_re / denom).sqrt();
        let se_im = (var_im / denom).sqrt();
        let dev = standardize(mean.re, se_re).max(standardize(mean.im, se_im));
        let name = word_name(w);
        if dev > max_dev {
            max_dev = dev;
            worst = name.clone();
        }
        report_words.push(WordDeviation {
            word: name,
            deviation_se: dev,
        });
    }
    Ok(SymmetryProbeReport {
        order,
        n: cfg.n,
        trials: cfg.trials,
        max_deviation_se: max_dev,
        worst_word: worst,
        words: report_words,
    })
}

fn standardize(mean: f64, se: f64) -> f64 {
    if mean.abs() < 1e-14 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY
    } else {
        mean.abs() / se
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Letter {
    X,
    XStar,
    /// The fixed reference constant `I_d (x) diag(...)`.
    Probe,
}

/// All words over {X, X*} of length 1..=order (the order counts channel
/// letters only), plus each such word with the reference constant inserted
/// in one gap, deduplicated up to cyclic equivalence of the trace.
fn enumerate_words(order: usize) -> Vec<Vec<Letter>> {
    let mut out: Vec<Vec<Letter>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut push = |w: Vec<Letter>, seen: &mut std::collections::HashSet<Vec<Letter>>| {
        // Canonical representative under cyclic rotation.
        let mut best: Option<Vec<Letter>> = None;
        for r in 0..w.len() {
            let rot: Vec<Letter> = w[r..].iter().chain(w[..r].iter()).copied().collect();
            if best.as_ref().is_none_or(|b| key(&rot) < key(b)) {
                best = Some(rot);
            }
        }
        if seen.insert(best.unwrap()) {
            out.push(w);
        }
    };
    for len in 1..=order {
        for mask in 0..(1u32 << len) {
            let base: Vec<Letter> = (0..len)
                .map(|b| if mask >> b & 1 == 1 { Letter::XStar } else { Letter::X })
                .collect();
            push(base.clone(), &mut seen);
            for gap in 0..=len {
                let mut w = base.clone();
                w.insert(gap, Letter::Probe);
                push(w, &mut seen);
            }
        }
    }
    out
}

fn key(w: &[Letter]) -> Vec<u8> {
    w.iter()
        .map(|l| match l {
            Letter::X => 0,
            Letter::XStar => 1,
            Letter::Probe => 2,
        })
        .collect()
}

fn word_name(w: &[Letter]) -> String {
    w.iter()
        .map(|l| match l {
            Letter::X => "X",
            Letter::XStar => "X*",
            Letter::Probe => "D",
        })
        .collect()
}

fn word_trace(a: &CMat, word: &[Letter], probe: &CMat) -> Complex64 {
    let mut prod: Option<CMat> = None;
    for letter in word {
        let factor = match letter {
            Letter::X => a.clone(),
            Letter::XStar => a.adjoint(),
            Letter::Probe => probe.clone(),
        };
        prod = Some(match prod {
            None => factor,
            Some(acc) => acc * factor,
        });
    }
    let m = prod.expect("words are nonempty");
    m.trace() / Complex64::new(m.nrows() as f64, 0.0)
}
