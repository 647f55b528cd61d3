//! Writes a synthetic replay fixture covering two models, both prompt
//! strategies and three temperatures.
//!
//! cargo run -p aeprior --example make_fixtures -- data/fixtures.jsonl

use std::fs::File;
use std::io::BufWriter;

use aeprior::elicitation::{build_prompt, write_fixtures, ChatRequest, FixtureRecord, PromptStrategy};
use aeprior::rng;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};

const SLOTS: u64 = 25;

fn main() -> std::io::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "fixtures.jsonl".into());
    let models = [("llama-3.3-70b-instruct", 0.08), ("medgemma-27b-it", 0.15)];
    let mut records = Vec::new();
    for (m, (model, centre)) in models.iter().enumerate() {
        for strategy in PromptStrategy::ALL {
            let shift = match strategy {
                PromptStrategy::Blind => 1.0,
                PromptStrategy::DiseaseInformed => 0.6,
            };
            for (t, temperature) in [0.1, 0.5, 1.0].into_iter().enumerate() {
                let request = ChatRequest::user(model, build_prompt(strategy), temperature);
                let mut r = rng::stream(20, &[m as u64, strategy as u64, t as u64]);
                let spread = LogNormal::new(0.0, 0.05 + 0.4 * temperature).unwrap();
                for slot in 0..SLOTS {
                    let a = (centre * shift * spread.sample(&mut r) * 1000.0).round() / 1000.0;
                    let b = (centre * 2.0 * shift * spread.sample(&mut r) * 1000.0).round() / 1000.0;
                    let body = format!("{{\"alpha_rate\": {}, \"beta_rate\": {}}}", a.max(0.001), b.max(0.001));
                    let response = match slot % 25 {
                        7 => format!("```json\n{body}\n```"),
                        13 if temperature >= 1.0 => "I would suggest a weakly informative prior.".into(),
                        19 => format!("```\n{body}\n```"),
                        _ if r.random_bool(0.1) => format!("Here is my answer:\n{body}"),
                        _ => body,
                    };
                    records.push(FixtureRecord::new(&request, Some(strategy), slot, &response));
                }
            }
        }
    }
    write_fixtures(&records, BufWriter::new(File::create(&path)?))?;
    eprintln!("wrote {} records to {path}", records.len());
    Ok(())
}
