//! Fill the acceptance run cache: one full small-setting training run
//! per (mixer, seed), marker format identical to tests/acceptance.rs.

use cglm::data::prepare;
use cglm::mixers::MixerKind;
use cglm::model::{Model, ModelConfig};
use cglm::train::{train, TrainConfig};
use std::fs;
use std::path::PathBuf;

fn main() {
    let mixer: MixerKind = std::env::args().nth(1).expect("mixer").parse().unwrap();
    let seed: u64 = std::env::args().nth(2).expect("seed").parse().unwrap();
    let cache: PathBuf = std::env::var("CGLM_RUN_CACHE").expect("CGLM_RUN_CACHE").into();
    let corpus = std::env::var("CGLM_CORPUS").unwrap_or("data/tinyshakespeare.txt".into());

    let text = fs::read_to_string(&corpus).unwrap();
    let (_tok, store) = prepare(&text, &std::env::temp_dir().join("cglm_acceptance_data")).unwrap();

    let cfg = ModelConfig::small(mixer);
    let tc = TrainConfig {
        seed,
        deterministic: true,
        ..TrainConfig::default()
    };
    let run_dir = cache.join(format!("cglm_run_{mixer}_{seed}"));
    let marker = run_dir.join("final_val.txt");
    let descriptor = format!("{cfg:?}|{tc:?}");
    if let Ok(text) = fs::read_to_string(&marker) {
        if let Some((desc, val)) = text.rsplit_once('\n') {
            if desc == descriptor {
                println!("cached: {mixer} seed {seed} -> {val}");
                return;
            }
        }
    }
    let mut model = Model::<f32>::build(&cfg, seed).unwrap();
    let report = train(&mut model, &store, &tc, &run_dir, true).unwrap();
    fs::create_dir_all(&run_dir).unwrap();
    fs::write(&marker, format!("{descriptor}\n{}", report.final_val)).unwrap();
    println!("DONE {mixer} seed {seed}: final_val={:.4}", report.final_val);
}
