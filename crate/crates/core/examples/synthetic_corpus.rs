//! Writes a synthetic eye-tracking corpus and a matching experiment
//! configuration into a directory.
//!
//! ```text
//! cargo run -p gazeattn --example synthetic_corpus -- demo/
//! gazeattn --config demo/experiment.toml --out demo/results experiment
//! ```

use std::path::PathBuf;

use gazeattn::synthetic::{config_toml, write_corpus, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    let spec = SyntheticSpec {
        train_sentences: 600,
        test_sentences: 60,
        label_noise: 0.05,
        ..SyntheticSpec::default()
    };
    write_corpus(&dir, &spec)?;
    let config = dir.join("experiment.toml");
    std::fs::write(
        &config,
        config_toml(&spec, &["None", "LSTM", "BiLSTM"], 10, true),
    )?;
    println!("corpus and configuration written to {}", dir.display());
    println!(
        "run: gazeattn --config {} --out {} experiment",
        config.display(),
        dir.join("results").display()
    );
    Ok(())
}
