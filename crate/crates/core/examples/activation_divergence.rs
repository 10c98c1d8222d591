//! Write a synthetic activation dump, read it back and compute the
//! layer-wise divergence of answer-preserving vs answer-changing variants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqastab::stats::{activation_divergence, divergence_curves, read_dump, write_dump, ActivationTrace, Triplet};

fn trace(sample: &str, variant: &str, base: &[Vec<f32>], scale: f32, rng: &mut ChaCha8Rng) -> ActivationTrace {
    ActivationTrace {
        sample_id: sample.into(),
        variant_id: variant.into(),
        layers: base
            .iter()
            .enumerate()
            .map(|(l, layer)| layer.iter().map(|x| x + scale * (l + 1) as f32 * rng.random_range(-1.0..1.0f32)).collect())
            .collect(),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut traces = Vec::new();
    for s in 0..6 {
        let id = format!("s{s}");
        let base: Vec<Vec<f32>> = (0..6).map(|_| (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        traces.push(trace(&id, "identity", &base, 0.0, &mut rng));
        traces.push(trace(&id, "rotation:90", &base, 0.05, &mut rng));
        traces.push(trace(&id, "shift:4", &base, 0.15, &mut rng));
    }
    let path = std::env::temp_dir().join("vqastab-demo.actdump");
    write_dump(&path, &traces, serde_json::json!({"source": "example"}))?;
    let dump = read_dump(&path)?;
    println!("read {} traces back from {}", dump.traces.len(), path.display());

    let triplets: Vec<Triplet<'_>> = (0..6)
        .map(|s| {
            let id = format!("s{s}");
            Triplet {
                original: dump.get(&id, "identity").unwrap(),
                stable: dump.get(&id, "rotation:90").unwrap(),
                flipped: dump.get(&id, "shift:4").unwrap(),
            }
        })
        .collect();
    let first = activation_divergence(triplets[0].original, triplets[0].stable, triplets[0].flipped)?;
    println!("first triplet (dp, dq) per layer: {first:.3?}");
    print!("{}", divergence_curves(&triplets)?.to_csv());
    Ok(())
}
