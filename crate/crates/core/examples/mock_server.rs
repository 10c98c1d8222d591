//! Start the deterministic mock chat server and ask it a visual question
//! through the caching client, with one injected rate-limit failure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vqastab::corpus::encode_png;
use vqastab::fixture::{mock_endpoint, synthetic_image};
use vqastab::modelio::mock::{MockConfig, MockServer};
use vqastab::modelio::{ChatClient, DiskCache};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let server = MockServer::start(MockConfig {
        fail_first: 1,
        fail_status: 429,
        ..Default::default()
    })
    .await?;
    println!("mock listening on {}", server.base_url());

    let cache_dir = tempfile::tempdir()?;
    let cache = DiskCache::new(cache_dir.path())?;
    let client = ChatClient::new(mock_endpoint("demo", "mock-demo", &server.base_url()), Some(cache))?;
    let png = encode_png(&synthetic_image(&mut ChaCha8Rng::seed_from_u64(4), 224, 160));

    for attempt in 1..=2 {
        let reply = client.query_png(&png, "Is there a red square?").await?;
        println!(
            "attempt {attempt}: {:?} -> {:?} confidence={:?} (server saw {} requests)",
            reply.raw_text,
            reply.normalized,
            reply.confidence,
            server.stats().requests()
        );
    }
    Ok(())
}
