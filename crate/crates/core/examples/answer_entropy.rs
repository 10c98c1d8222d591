//! Entropy of a model's answers across perturbed copies of one question.

use vqastab::modelio::normalize_answer;
use vqastab::stability::{entropy_bits, AnswerDistribution};

fn main() {
    let raw = ["Yes.", "yes", "Yes", "No.", "yes.", "YES", "yes", "no"];
    let normalized: Vec<String> = raw.iter().map(|a| normalize_answer(a)).collect();
    let dist = AnswerDistribution::from_answers(normalized.iter().map(String::as_str)).expect("non-empty");
    for (answer, p) in dist.probabilities() {
        println!("p({answer}) = {p:.3}");
    }
    println!("H = {:.4} bits over {} distinct answers", dist.entropy(), dist.distinct());

    println!("a single answer:     {:.4}", entropy_bits([8]));
    println!("an even split:       {:.4}", entropy_bits([4, 4]));
    println!("27 agree, 1 differs: {:.4}", entropy_bits([27, 1]));
}
