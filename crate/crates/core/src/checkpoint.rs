//! Versioned checkpoints in canonical JSON. A checkpoint holds the whole
//! trainer: configuration, parameters, Adam moments, random streams, batch
//! cursors and counters. Saving a loaded checkpoint reproduces the file
//! byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canon::to_canonical_json;
use crate::error::{ArlError, Result};
use crate::model::init_model;
use crate::train::Trainer;

pub const CHECKPOINT_FORMAT: &str = "arlnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a> {
    format: &'a str,
    version: u32,
    trainer: &'a Trainer,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OwnedEnvelope {
    format: String,
    version: u32,
    trainer: Trainer,
}

pub fn checkpoint_to_string(trainer: &Trainer) -> Result<String> {
    if !trainer.model.is_finite() {
        return Err(ArlError::Checkpoint("refusing to save non-finite parameters".into()));
    }
    let mut text = to_canonical_json(&Envelope {
        format: CHECKPOINT_FORMAT,
        version: CHECKPOINT_VERSION,
        trainer,
    })?;
    text.push('\n');
    Ok(text)
}

pub fn checkpoint_from_str(text: &str) -> Result<Trainer> {
    let env: OwnedEnvelope = serde_json::from_str(text).map_err(|e| ArlError::Checkpoint(e.to_string()))?;
    if env.format != CHECKPOINT_FORMAT {
        return Err(ArlError::Checkpoint(format!("not a checkpoint: format {:?}", env.format)));
    }
    if env.version != CHECKPOINT_VERSION {
        return Err(ArlError::Checkpoint(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            env.version
        )));
    }
    let trainer = env.trainer;
    trainer.config.validate()?;
    check_shapes(&trainer)?;
    Ok(trainer)
}

/// Every layer and optimizer state must have the shape the model config
/// implies.
fn check_shapes(trainer: &Trainer) -> Result<()> {
    let reference = init_model(&trainer.model.config, 0)?;
    let want = reference.layers();
    let have = trainer.model.layers();
    if want.len() != have.len() {
        return Err(ArlError::Checkpoint(format!("expected {} layers, found {}", want.len(), have.len())));
    }
    for ((name, w), (got_name, h)) in want.iter().zip(&have) {
        let ok = name == got_name
            && w.weights.shape() == h.weights.shape()
            && h.weights.data().len() == w.weights.data().len()
            && w.bias.len() == h.bias.len()
            && w.activation == h.activation;
        if !ok {
            return Err(ArlError::Checkpoint(format!("layer {got_name} does not match the model config")));
        }
        let adam = trainer
            .optimizer
            .get(name)
            .ok_or_else(|| ArlError::Checkpoint(format!("missing optimizer state for {name}")))?;
        let n_w = w.weights.data().len();
        if adam.weights.m.len() != n_w || adam.weights.v.len() != n_w || adam.bias.m.len() != w.bias.len() || adam.bias.v.len() != w.bias.len() {
            return Err(ArlError::Checkpoint(format!("optimizer state for {name} has the wrong size")));
        }
    }
    if trainer.optimizer.len() != want.len() {
        return Err(ArlError::Checkpoint("optimizer holds states for unknown layers".into()));
    }
    if !trainer.model.is_finite() {
        return Err(ArlError::Checkpoint("checkpoint holds non-finite parameters".into()));
    }
    Ok(())
}

pub fn save_checkpoint(trainer: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_string(trainer)?).map_err(|e| ArlError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ArlError::io(path, e))?;
    checkpoint_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::model::ArlConfig;
    use crate::train::TrainConfig;

    fn trained() -> (Trainer, crate::data::FeatureDataset, crate::data::FeatureDataset) {
        let (train, test) = synth_generate(&SynthConfig {
            n_tr: 64,
            n_te: 32,
            d: 6,
            k: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let model = ArlConfig {
            feat_dim: 6,
            trunk_units: vec![16, 8],
            recon_units: vec![8, 16],
            ..ArlConfig::default()
        };
        let cfg = TrainConfig {
            lr: 1e-3,
            batch_size: 16,
            iters_stage1: 5,
            iters_stage2: 5,
            label_smoothing: 0.1,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(&model, cfg).unwrap();
        t.stage1_fit(&train, None).unwrap();
        t.stage2_adversarial(&train, &test).unwrap();
        (t, train, test)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (t, _, _) = trained();
        let first = checkpoint_to_string(&t).unwrap();
        let back = checkpoint_from_str(&first).unwrap();
        assert_eq!(back, t);
        assert_eq!(checkpoint_to_string(&back).unwrap(), first);
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let (mut t, train, test) = trained();
        let mut resumed = checkpoint_from_str(&checkpoint_to_string(&t).unwrap()).unwrap();
        t.stage2_adversarial(&train, &test).unwrap();
        resumed.stage2_adversarial(&train, &test).unwrap();
        assert_eq!(t, resumed);
    }

    #[test]
    fn file_round_trip() {
        let (t, _, _) = trained();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("checkpoint");
        save_checkpoint(&t, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), t);
        assert!(matches!(load_checkpoint(dir.path().join("none")), Err(ArlError::Io { .. })));
    }

    #[test]
    fn rejects_foreign_or_damaged_files() {
        let (t, _, _) = trained();
        let text = checkpoint_to_string(&t).unwrap();
        let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(checkpoint_from_str(&bumped), Err(ArlError::Checkpoint(_))));
        assert!(checkpoint_from_str("{}").is_err());
        let mut wrong = t.clone();
        wrong.model.config.feat_dim = 7;
        let text = to_canonical_json(&Envelope {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            trainer: &wrong,
        })
        .unwrap();
        assert!(matches!(checkpoint_from_str(&text), Err(ArlError::Checkpoint(_))));
    }
}
