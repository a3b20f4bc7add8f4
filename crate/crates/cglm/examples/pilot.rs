use cglm::data::prepare;
use cglm::mixers::MixerKind;
use cglm::model::{Model, ModelConfig};
use cglm::train::{train, TrainConfig};
use std::path::PathBuf;

fn main() {
    let mixer: MixerKind = std::env::args().nth(1).expect("mixer").parse().unwrap();
    let seed: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let iters: u64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let out: PathBuf = std::env::args().nth(4).unwrap_or_else(|| format!("target/pilot_{mixer}_{seed}", mixer = mixer)).into();
    let text = std::fs::read_to_string("data/tinyshakespeare.txt").unwrap();
    let (_tok, store) = prepare(&text, &std::env::temp_dir().join("cglm_pilot_data")).unwrap();
    let cfg = ModelConfig::small(mixer);
    let mut model = Model::<f32>::build(&cfg, seed).unwrap();
    let tc = TrainConfig {
        max_iters: iters,
        lr_decay_iters: iters,
        seed,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &store, &tc, &out, true).unwrap();
    println!(
        "DONE {mixer} seed={seed}: final_val={:.4} best_val={:.4} (iter {})",
        report.final_val, report.best_val, report.best_iter
    );
}
