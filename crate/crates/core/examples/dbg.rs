use blockcap_core::capacity::*;
use blockcap_core::channel::*;
use blockcap_core::covariance::*;
use blockcap_core::linalg::*;
use blockcap_core::montecarlo::*;
use num_complex::Complex64;
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

type CM = DMatrix<Complex64>;
fn c(re: f64, im: f64) -> Complex64 { Complex64::new(re, im) }
fn rand_psd_scaled(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> PsdMatrix {
    let g = CM::from_fn(n, n, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let m = (&g * g.adjoint()).scale(scale / n as f64);
    PsdMatrix::new(m).unwrap()
}

fn main() {
    let d = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    // criterion-8-style compound: atom + two-atom product, O(1) covariances
    let k0 = rand_psd_scaled(4, 1.0, &mut rng);
    let k1 = rand_psd_scaled(4, 1.0, &mut rng);
    let k2 = rand_psd_scaled(4, 1.0, &mut rng);
    println!("K eigs: {:?} {:?} {:?}", k0.eigenvalues().as_slice(), k1.eigenvalues().as_slice(), k2.eigenvalues().as_slice());
    let expr = ChannelExpr::new(d, vec![
        vec![Atom::block_gaussian(CovarianceMapping::new(d, k0).unwrap())],
        vec![Atom::block_gaussian(CovarianceMapping::new(d, k1).unwrap()),
             Atom::block_gaussian(CovarianceMapping::new(d, k2).unwrap())],
    ]).unwrap();
    let pipeline = PipelineConfig::default();

    let t0 = Instant::now();
    let v = psi(&expr, &PsdMatrix::uniform(d), 5.0, &pipeline).unwrap();
    println!("psi(I/2) = {v:.6} in {:?}", t0.elapsed());

    let t0 = Instant::now();
    let opt = OptimizerConfig { max_iterations: 40, grad_tol: 1e-4, ..Default::default() };
    let cap = maximize_capacity(&expr, 5.0, &opt, &pipeline).unwrap();
    println!("capacity = {:.6} (iters {}, converged {}) in {:?}", cap.capacity, cap.iterations, cap.converged, t0.elapsed());
    println!("phi0 = {:.4}", cap.phi0.as_mat());

    // MC at the analytic phi0
    for n in [32usize, 64, 128] {
        let t0 = Instant::now();
        let mi = empirical_mutual_information(&expr, &cap.phi0, 5.0, &SampleConfig::new(n, 400/n.max(1) + 50, 7).unwrap()).unwrap();
        println!("N={n}: MI {:.6} +- {:.6}  gap {:+.4}%  ({:?})", mi.mean, mi.std_error, (mi.mean - cap.capacity)/cap.capacity*100.0, t0.elapsed());
    }
}
