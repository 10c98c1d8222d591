//! Render the full visual perturbation suite for one synthetic image.
//!
//! cargo run --example perturb_image [-- <output dir>]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vqastab::corpus::encode_png;
use vqastab::fixture::synthetic_image;
use vqastab::vperturb::{generate_suite, generate_variants, SuiteConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("vqastab-variants"));
    std::fs::create_dir_all(&out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let image = synthetic_image(&mut rng, 224, 160);

    let suite = generate_suite("demo", &image)?;
    let mut per_family = BTreeMap::new();
    for (family, n) in suite.count_by_family() {
        per_family.insert(family.as_str(), n);
    }
    println!("{} variants: {per_family:?}", suite.variants.len());

    let with_sweep = SuiteConfig {
        rotation_sweep: true,
        ..Default::default()
    };
    let set = generate_variants("demo", &image, &with_sweep)?;
    for v in &set.variants {
        let (w, h) = v.image.dimensions();
        let file = out.join(format!("{}.png", v.spec.id().replace(':', "_")));
        std::fs::write(&file, encode_png(&v.image))?;
        println!("{:<18} {w}x{h}", v.spec.id());
    }
    println!("wrote {} images to {}", set.variants.len(), out.display());
    Ok(())
}
