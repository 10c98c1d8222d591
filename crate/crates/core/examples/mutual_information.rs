//! How much of the dependence between two entropy columns is explained by a
//! third (confidence) column.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqastab::stats::{conditional_mutual_information, mutual_information, Binning};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 5000;
    let confidence: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let visual: Vec<f64> = confidence.iter().map(|c| 1.0 - c + 0.05 * rng.random::<f64>()).collect();
    let textual: Vec<f64> = confidence.iter().map(|c| 1.0 - c + 0.05 * rng.random::<f64>()).collect();
    let noise: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();

    println!("I(visual; textual)     = {:.4} bits", mutual_information(&visual, &textual, 10).unwrap());
    println!("I(visual; noise)       = {:.4} bits", mutual_information(&visual, &noise, 10).unwrap());
    for binning in [Binning::EqualWidth, Binning::EqualFrequency] {
        let r = conditional_mutual_information(&visual, &textual, &confidence, 10, binning).unwrap();
        println!(
            "{binning:?}: I={:.4} I|conf={:.4} ratio={:.3}",
            r.i_raw,
            r.i_conditional,
            r.ratio.unwrap_or(f64::NAN)
        );
    }
}
