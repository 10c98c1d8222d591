//! Generate rephrasings and translations of a question through the mock
//! server's text endpoint.

use vqastab::fixture::mock_endpoint;
use vqastab::modelio::mock::{MockConfig, MockServer};
use vqastab::modelio::ChatClient;
use vqastab::tperturb::{default_languages, rephrase, translate};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let server = MockServer::start(MockConfig::default()).await?;
    let generator = ChatClient::new(mock_endpoint("generator", "mock-generator", &server.base_url()), None)?;
    let question = "Is the cup to the left of the plate?";

    let phrasings = rephrase("demo", question, &generator, None).await?;
    for v in &phrasings.variants {
        println!("{:<12} {}", v.variant_id, v.question);
    }
    let languages: Vec<_> = default_languages().into_iter().take(4).collect();
    let translated = translate("demo", question, &languages, &generator, None).await;
    for v in &translated.variants {
        println!("{:<12} {}", v.variant_id, v.question);
    }
    println!("missing languages: {:?}", translated.missing);
    println!("text requests served: {}", server.stats().text_requests());
    Ok(())
}
