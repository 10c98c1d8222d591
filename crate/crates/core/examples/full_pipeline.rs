//! Run every stage on the synthetic fixture against the in-process mock
//! server and print where the report landed.
//!
//! cargo run --example full_pipeline [-- <output dir>]

use std::path::PathBuf;

use vqastab::fixture::{write_fixture, FixtureOptions};
use vqastab::modelio::mock::{MockConfig, MockServer};
use vqastab::pipeline::{run_all, Overrides, RunConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = match std::env::args().nth(1) {
        Some(d) => PathBuf::from(d),
        None => std::env::temp_dir().join("vqastab-fixture"),
    };
    let server = MockServer::start(MockConfig::default()).await?;
    let fixture = write_fixture(&dir, &server.base_url(), &FixtureOptions::default())?;
    let cfg = RunConfig::load(&fixture.config, &Overrides::default())?;

    let started = std::time::Instant::now();
    for stage in run_all(&cfg).await? {
        println!("{:<8} files written: {}", stage.stage, stage.files_written);
    }
    println!("finished in {:.1?}", started.elapsed());
    println!("mock served {} requests", server.stats().requests());
    println!("report: {}", cfg.stage_dir("report").join("index.html").display());
    Ok(())
}
