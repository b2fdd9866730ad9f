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

    let cfgmc = SampleConfig::new(192, 60, 9).unwrap();
    let spec = empirical_spectrum(&expr, &PsdMatrix::uniform(d), &cfgmc).unwrap();
    let total = spec.eigenvalues.len() as f64;
    for lo in [40.0, 45.0, 50.0, 55.0, 60.0, 65.0, 70.0, 75.0, 80.0] {
        let hi = lo + 5.0;
        let count = spec.eigenvalues.iter().filter(|&&v| v >= lo && v < hi).count();
        let mc_density = count as f64 / total / 5.0;
        let mid = lo + 2.5;
        let ana = point_value(&ev, mid, 1e-6).map(|f| format!("{f:.6}")).unwrap_or_else(|_| "ERR".into());
        println!("[{lo},{hi}): MC {mc_density:.6}  analytic f({mid}) = {ana}");
    }
}
