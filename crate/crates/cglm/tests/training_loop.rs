//! Training-loop integration: every mixer learns, evaluation matches the
//! near-uniform prediction at init, and a resumed run continues the
//! uninterrupted loss curve exactly.

use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cglm::data::{CharTokenizer, Split, TokenStore};
use cglm::mixers::MixerKind;
use cglm::model::{Model, ModelConfig};
use cglm::checkpoint::load_checkpoint;
use cglm::train::{estimate_loss, train, train_from, TrainConfig};

/// Structured corpus over the full 65-character vocabulary: highly
/// predictable, so any mixer that learns at all drops fast below the
/// ln(65) it starts from.
fn synthetic_store() -> (CharTokenizer, TokenStore) {
    let alphabet: String =
        "\n !$&',-.3:;?ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz".into();
    assert_eq!(alphabet.chars().count(), 65);
    let text = alphabet.repeat(120);
    let tok = CharTokenizer::build_vocab(&text).unwrap();
    let store = TokenStore::from_ids(tok.encode(&text).unwrap());
    (tok, store)
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        max_iters: 100,
        lr_decay_iters: 100,
        warmup_iters: 10,
        eval_interval: 50,
        eval_iters: 10,
        batch_size: 8,
        seed: 7,
        deterministic: true,
        ..TrainConfig::default()
    }
}

#[test]
fn fresh_model_evaluates_near_uniform() {
    let (tok, store) = synthetic_store();
    let mut cfg = ModelConfig::small(MixerKind::CausalMax);
    cfg.vocab_size = tok.vocab_size();
    let model = Model::<f32>::build(&cfg, 5).unwrap();
    let tc = TrainConfig {
        eval_iters: 20,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let losses = estimate_loss(&model, &store, &tc, &mut rng).unwrap();
    let ln65 = 65.0f64.ln();
    assert!((losses.train - ln65).abs() < 0.1, "train {}", losses.train);
    assert!((losses.val - ln65).abs() < 0.1, "val {}", losses.val);
}

#[test]
fn every_mixer_learns_within_100_iters() {
    // the same loop body runs all variants; only the config changes
    let (tok, store) = synthetic_store();
    let ln65 = 65.0f64.ln();
    for mixer in MixerKind::ALL {
        let mut cfg = ModelConfig {
            n_layer: 2,
            n_head: 2,
            n_embd: 32,
            block_size: 16,
            ..ModelConfig::small(mixer)
        };
        cfg.vocab_size = tok.vocab_size();
        let mut model = Model::<f32>::build(&cfg, 1).unwrap();
        let dir = std::env::temp_dir().join(format!("cglm_learns_{mixer}"));
        let report = train(&mut model, &store, &quick_config(), &dir, false).unwrap();
        assert!(
            report.final_val < ln65,
            "{mixer}: val {:.3} did not drop below initial {:.3}",
            report.final_val,
            ln65
        );
    }
}

#[test]
fn resumed_run_continues_the_loss_curve_exactly() {
    let (tok, store) = synthetic_store();
    let mut cfg = ModelConfig {
        n_layer: 1,
        n_head: 2,
        n_embd: 16,
        block_size: 8,
        ..ModelConfig::small(MixerKind::CausalMinContext)
    };
    cfg.vocab_size = tok.vocab_size();
    let tc = TrainConfig {
        max_iters: 120,
        lr_decay_iters: 120,
        warmup_iters: 10,
        eval_interval: 30,
        eval_iters: 5,
        batch_size: 4,
        seed: 9,
        deterministic: true,
        ..TrainConfig::default()
    };
    let base = std::env::temp_dir().join("cglm_resume");

    // uninterrupted reference
    let full_dir = base.join("full");
    let mut model = Model::<f32>::build(&cfg, tc.seed).unwrap();
    train(&mut model, &store, &tc, &full_dir, false).unwrap();
    let full_csv = fs::read_to_string(full_dir.join("loss.csv")).unwrap();

    // stop at 60, then resume from the checkpoint
    let part_dir = base.join("part");
    let tc_half = TrainConfig {
        max_iters: 60,
        ..tc.clone()
    };
    let mut model = Model::<f32>::build(&cfg, tc.seed).unwrap();
    train(&mut model, &store, &tc_half, &part_dir, false).unwrap();

    let loaded = load_checkpoint::<f32>(&part_dir.join(cglm::train::LAST_CHECKPOINT)).unwrap();
    assert_eq!(loaded.iteration, 60);
    let mut resumed = loaded.model;
    let mut opt = loaded.opt.unwrap();
    let resume_dir = base.join("resumed");
    train_from(&mut resumed, &mut opt, 60, &store, &tc, &resume_dir, false).unwrap();
    let resumed_csv = fs::read_to_string(resume_dir.join("loss.csv")).unwrap();

    // every eval row from iteration 60 on matches the uninterrupted run
    let full_rows: Vec<&str> = full_csv
        .lines()
        .skip(1)
        .filter(|l| l.split(',').next().unwrap().parse::<u64>().unwrap() >= 60)
        .collect();
    let resumed_rows: Vec<&str> = resumed_csv.lines().skip(1).collect();
    assert_eq!(full_rows, resumed_rows, "resumed curve diverged");
}
