use blockcap_core::channel::*;
use blockcap_core::covariance::*;
use blockcap_core::linalg::*;
use blockcap_core::transforms::*;
use blockcap_core::montecarlo::*;
use blockcap_core::FixedPointConfig;
use num_complex::Complex64;
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type CM = DMatrix<Complex64>;
fn c(re: f64, im: f64) -> Complex64 { Complex64::new(re, im) }
fn rand_psd_scaled(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> PsdMatrix {
    let g = CM::from_fn(n, n, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    PsdMatrix::new((&g * g.adjoint()).scale(scale / n as f64)).unwrap()
}

fn main() {
    let d = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let k0 = rand_psd_scaled(4, 1.0, &mut rng);
    let k1 = rand_psd_scaled(4, 1.0, &mut rng);
    let k2 = rand_psd_scaled(4, 1.0, &mut rng);
    let cfg = FixedPointConfig::default();
    let expr = ChannelExpr::new(d, vec![
        vec![Atom::block_gaussian(CovarianceMapping::new(d, k0.clone()).unwrap())],
        vec![Atom::block_gaussian(CovarianceMapping::new(d, k1.clone()).unwrap()),
             Atom::block_gaussian(CovarianceMapping::new(d, k2.clone()).unwrap())],
    ]).unwrap();
    let melded = meld_phi(&expr, &PsdMatrix::uniform(d)).unwrap();
    let AtomKind::BlockGaussian(c0) = melded.terms()[0].factors()[0].kind() else { panic!() };
    let AtomKind::BlockGaussian(c1) = melded.terms()[1].factors()[0].kind() else { panic!() };
    let AtomKind::BlockGaussian(c2) = melded.terms()[1].factors()[1].kind() else { panic!() };
    let g0 = cauchy_block_gaussian(ScaledCovariance::from_covariance(c0), &cfg);
    let g1 = cauchy_block_gaussian(ScaledCovariance::from_covariance(c1), &cfg);
    let g2 = cauchy_block_gaussian(ScaledCovariance::from_covariance(c2), &cfg);
    let t1 = tilde_from_hat(&g1).unwrap();
    let prod = subordinate_product(&t1, &g2, &cfg).unwrap();

    // MC support edge
    let cfgmc = SampleConfig::new(256, 10, 9).unwrap();
    let spec = empirical_spectrum(&expr, &PsdMatrix::uniform(d), &cfgmc).unwrap();
    println!("MC max eigenvalue: {:.3}", spec.eigenvalues.last().unwrap());

    // manual damped Picard on the sum map at several x
    for x in [16.0, 24.0, 40.0] {
        let wz = Complex64::new(x, 1e-6).sqrt();
        let b = scalar_matrix(2*d, wz);
        let mut w = b.clone();
        let mut ok = true;
        let mut last_diff = f64::INFINITY;
        for _it in 0..4000 {
            let r1 = match r_transform(&g0, &w) { Ok(v) => v, Err(e) => { println!("x={x}: r1 err {e}"); ok = false; break; } };
            let r2 = match r_transform(&prod, &(r1 + &b)) { Ok(v) => v, Err(e) => { println!("x={x}: r2 err {e}"); ok = false; break; } };
            let next_raw = r2 + &b;
            let next = next_raw.map(|z| z * 0.5) + w.map(|z| z * 0.5);
            last_diff = (next.clone() - &w).iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
            w = next;
            if last_diff < 1e-12 { break; }
        }
        if ok {
            let gv = g0.evaluate(&w).unwrap();
            let tr = gv.trace() / c(4.0, 0.0);
            let f = -(tr / wz).im / std::f64::consts::PI;
            println!("x={x}: damped-picard diff {last_diff:.1e}, f = {f:.6}");
        }
    }
}
