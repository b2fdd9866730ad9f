use blockcap_core::channel::*;
use blockcap_core::covariance::*;
use blockcap_core::density::*;
use blockcap_core::linalg::*;
use blockcap_core::montecarlo::*;
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
    let expr = ChannelExpr::new(d, vec![
        vec![Atom::block_gaussian(CovarianceMapping::new(d, k0).unwrap())],
        vec![Atom::block_gaussian(CovarianceMapping::new(d, k1).unwrap()),
             Atom::block_gaussian(CovarianceMapping::new(d, k2).unwrap())],
    ]).unwrap();
    let melded = meld_phi(&expr, &PsdMatrix::uniform(d)).unwrap();
    let ev = compile(&melded, &Default::default()).unwrap();
    // scan pointwise
    for x in [0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 16.0, 24.0, 40.0, 60.0, 88.11] {
        match point_value(&ev, x, 1e-6) {
            Ok(f) => println!("f({x}) = {f:.6}"),
            Err(e) => println!("f({x}) ERR: {e}"),
        }
    }
    // density on a fixed window + MC comparison
    match invert_to_density(&ev, &support_grid(0.0, 16.0, 900), 1e-6) {
        Ok(den) => {
            println!("density mass {:.4}", den.mass());
            let cfg = SampleConfig::new(256, 30, 9).unwrap();
            let spec = empirical_spectrum(&expr, &PsdMatrix::uniform(d), &cfg).unwrap();
            println!("KS vs MC(N=256) = {:.4}", spec.ks_distance(&den));
            let mi = empirical_mutual_information(&expr, &PsdMatrix::uniform(d), 5.0, &cfg).unwrap();
            let psi_v = den.log_moment(5.0);
            println!("Psi {psi_v:.5} vs MI {:.5} (gap {:+.2}%)", mi.mean, (psi_v - mi.mean)/mi.mean*100.0);
        }
        Err(e) => println!("density ERR: {e}"),
    }
}
