//! Two-stage training: regression-only fitting on labelled training rows,
//! then alternating data-regressor and mapper updates on paired train/test
//! batches. Also evaluation, shift diagnostics and the loss ablation matrix.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autonet::LayerAdam;
use crate::canon::to_canonical_json;
use crate::data::{batch_indices, FeatureDataset};
use crate::error::{ArlError, Result};
use crate::losses::{mae, mean_embed_dist, LossBreakdown, LossWeights};
use crate::model::{init_model, ArlConfig, ArlModel, Batch, Dropout, ModelGrads, Objective, Phase};
use crate::numcore::RngState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub iters_stage1: u64,
    pub iters_stage2: u64,
    pub weights: LossWeights,
    pub disc_steps_per_mapper_step: u32,
    /// Domain labels `{s, 1 - s}` instead of `{0, 1}`; must be in `[0, 0.5)`.
    pub label_smoothing: f64,
    pub literal_signs: bool,
    pub seed: u64,
    /// Compute test MAE and code distance every this many iterations and at
    /// the end of each stage; 0 disables the interval.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 128,
            iters_stage1: 300,
            iters_stage2: 300,
            weights: LossWeights::default(),
            disc_steps_per_mapper_step: 1,
            label_smoothing: 0.0,
            literal_signs: false,
            seed: 0,
            eval_every: 25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(ArlError::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(ArlError::Config("batch_size must be positive".into()));
        }
        if self.disc_steps_per_mapper_step == 0 {
            return Err(ArlError::Config("disc_steps_per_mapper_step must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(ArlError::Config(format!("label_smoothing must lie in [0, 0.5), got {}", self.label_smoothing)));
        }
        if !self.weights.use_mape && self.weights.alpha == 0.0 {
            return Err(ArlError::Config("the percentage loss needs use_mape or alpha > 0".into()));
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective {
            weights: self.weights,
            label_smoothing: self.label_smoothing,
            literal_signs: self.literal_signs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
}

/// One training iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub iteration: u64,
    pub stage: Stage,
    /// Losses on the iteration's batches, before the update. In stage 2
    /// these come from the mapper step.
    pub breakdown: LossBreakdown,
    /// MAE of the training-mode predictions on the iteration's train batch.
    pub train_mae: f64,
    /// Inference-mode MAE on the full test set; evaluation only, never used
    /// for training. Present on evaluation iterations when test ages exist.
    pub test_mae: Option<f64>,
    /// Mean-embedding distance between train and test codes on evaluation
    /// iterations.
    pub code_dist: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<Record>,
}

impl History {
    /// One canonical JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&to_canonical_json(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn extend(&mut self, other: History) {
        self.records.extend(other.records);
    }

    pub fn last_eval(&self) -> Option<&Record> {
        self.records.iter().rev().find(|r| r.code_dist.is_some())
    }
}

/// Shuffled pass over a dataset's rows, reshuffled when exhausted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchCursor {
    rng: RngState,
    n: usize,
    batch_size: usize,
    order: Vec<Vec<usize>>,
    next: usize,
}

impl BatchCursor {
    pub fn new(rng: RngState, n: usize, batch_size: usize) -> Self {
        Self {
            rng,
            n,
            batch_size,
            order: Vec::new(),
            next: 0,
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.next >= self.order.len() {
            self.order = batch_indices(self.n, self.batch_size, &mut self.rng);
            self.next = 0;
        }
        self.next += 1;
        self.order[self.next - 1].clone()
    }
}

/// Independent random streams, so that switching off any term leaves the
/// draws of every other stream unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Streams {
    pub train_dropout: RngState,
    pub test_dropout: RngState,
    pub disc_train_dropout: RngState,
    pub disc_test_dropout: RngState,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let root = RngState::new(seed);
        Self {
            train_dropout: root.split("train_dropout"),
            test_dropout: root.split("test_dropout"),
            disc_train_dropout: root.split("disc_train_dropout"),
            disc_test_dropout: root.split("disc_test_dropout"),
        }
    }
}

/// Everything a run needs to continue bit-exactly: model, optimizer
/// moments, random streams, batch cursors and the iteration counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ArlModel,
    pub optimizer: BTreeMap<String, LayerAdam>,
    pub streams: Streams,
    pub train_cursor: Option<BatchCursor>,
    pub test_cursor: Option<BatchCursor>,
    pub iteration: u64,
    pub last_good: Option<u64>,
}

fn make_batch(ds: &FeatureDataset, idx: &[usize], with_ages: bool) -> Result<Batch> {
    let part = ds.select(idx)?;
    Ok(Batch {
        gender: part.gender_f64(),
        ages: if with_ages { part.ages } else { None },
        x: part.features,
    })
}

impl Trainer {
    /// Fresh model initialised from `config.seed`.
    pub fn new(model_config: &ArlConfig, config: TrainConfig) -> Result<Self> {
        let model = init_model(model_config, config.seed)?;
        Self::with_model(model, config)
    }

    pub fn with_model(model: ArlModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = model
            .layers()
            .into_iter()
            .map(|(name, layer)| (name, LayerAdam::for_layer(layer)))
            .collect();
        Ok(Self {
            streams: Streams::new(config.seed),
            config,
            model,
            optimizer,
            train_cursor: None,
            test_cursor: None,
            iteration: 0,
            last_good: None,
        })
    }

    fn diverged(&self, what: impl Into<String>) -> ArlError {
        ArlError::Training {
            iteration: self.iteration,
            last_good: self.last_good,
            what: what.into(),
        }
    }

    fn cursor<'a>(slot: &'a mut Option<BatchCursor>, seed: u64, label: &str, ds: &FeatureDataset, batch_size: usize) -> &'a mut BatchCursor {
        if slot.as_ref().is_some_and(|c| c.n != ds.len() || c.batch_size != batch_size) {
            *slot = None;
        }
        slot.get_or_insert_with(|| BatchCursor::new(RngState::new(seed).split(label), ds.len(), batch_size))
    }

    fn next_train_batch(&mut self, train: &FeatureDataset) -> Result<Batch> {
        let c = Self::cursor(&mut self.train_cursor, self.config.seed, "train_batches", train, self.config.batch_size);
        make_batch(train, &c.next_batch(), true)
    }

    fn next_test_batch(&mut self, test: &FeatureDataset) -> Result<Batch> {
        let c = Self::cursor(&mut self.test_cursor, self.config.seed, "test_batches", test, self.config.batch_size);
        // Test ages never enter a batch.
        make_batch(test, &c.next_batch(), false)
    }

    fn apply(&mut self, grads: &ModelGrads) -> Result<()> {
        let lr = self.config.lr;
        for name in grads.names().map(str::to_string).collect::<Vec<_>>() {
            let g = grads.get(&name).expect("listed gradient");
            let layer = self.model.layer_mut(&name).expect("gradient for a known layer");
            let state = self.optimizer.get_mut(&name).expect("optimizer state for every layer");
            state.step(layer, g, lr, &name).map_err(|e| match e {
                ArlError::Training { what, .. } => ArlError::Training {
                    iteration: self.iteration,
                    last_good: self.last_good,
                    what,
                },
                other => other,
            })?;
        }
        Ok(())
    }

    fn is_eval_iteration(&self, local: u64, total: u64) -> bool {
        let every = self.config.eval_every;
        local + 1 == total || (every > 0 && (local + 1) % every == 0)
    }

    fn finish(&mut self, record: &mut Record, train: &FeatureDataset, test: Option<&FeatureDataset>, eval: bool) -> Result<()> {
        if !self.model.is_finite() {
            return Err(self.diverged("non-finite parameters after update"));
        }
        if eval {
            if let Some(test) = test {
                if test.ages.is_some() {
                    record.test_mae = Some(evaluate(&self.model, test)?.0);
                }
                record.code_dist = Some(shift_diagnostics(&self.model, train, test)?.dist_code);
            }
        }
        self.last_good = Some(self.iteration);
        self.iteration += 1;
        Ok(())
    }

    /// `iters_stage1` Adam steps on the percentage loss over shuffled
    /// training batches. `test`, when given, is used for reporting only.
    pub fn stage1_fit(&mut self, train: &FeatureDataset, test: Option<&FeatureDataset>) -> Result<History> {
        if train.ages.is_none() {
            return Err(ArlError::Usage("stage 1 needs a labelled training set".into()));
        }
        let mut history = History::default();
        let weights = self.config.weights;
        let total = self.config.iters_stage1;
        for local in 0..total {
            let batch = self.next_train_batch(train)?;
            let (breakdown, grads, pred) =
                self.model
                    .regression_loss(&batch, &weights, Dropout::Sample(&mut self.streams.train_dropout))?;
            if !breakdown.is_finite() {
                return Err(self.diverged(format!("non-finite loss {breakdown:?}")));
            }
            self.apply(&grads)?;
            let mut record = Record {
                iteration: self.iteration,
                stage: Stage::Stage1,
                breakdown,
                train_mae: mae(batch.ages.as_deref().expect("labelled batch"), &pred)?,
                test_mae: None,
                code_dist: None,
            };
            let eval = self.is_eval_iteration(local, total);
            self.finish(&mut record, train, test, eval)?;
            history.records.push(record);
        }
        Ok(history)
    }

    /// `iters_stage2` adversarial iterations. Each samples one train and one
    /// test batch, runs the data-regressor step `disc_steps_per_mapper_step`
    /// times, then one mapper step.
    pub fn stage2_adversarial(&mut self, train: &FeatureDataset, test: &FeatureDataset) -> Result<History> {
        if train.ages.is_none() {
            return Err(ArlError::Usage("stage 2 needs a labelled training set".into()));
        }
        if train.d() != test.d() {
            return Err(ArlError::shape("stage2", format!("train d={}", train.d()), format!("test d={}", test.d())));
        }
        let objective = self.config.objective();
        let mut history = History::default();
        let total = self.config.iters_stage2;
        for local in 0..total {
            let tr = self.next_train_batch(train)?;
            let te = self.next_test_batch(test)?;
            for _ in 0..self.config.disc_steps_per_mapper_step {
                let out = self.model.model_loss(
                    &tr,
                    &te,
                    &objective,
                    Phase::Discriminator,
                    Dropout::Sample(&mut self.streams.disc_train_dropout),
                    Dropout::Sample(&mut self.streams.disc_test_dropout),
                )?;
                if !out.objective.is_finite() {
                    return Err(self.diverged(format!("non-finite data-regressor loss {:?}", out.breakdown)));
                }
                self.apply(&out.grads)?;
            }
            let out = self.model.model_loss(
                &tr,
                &te,
                &objective,
                Phase::Mapper,
                Dropout::Sample(&mut self.streams.train_dropout),
                Dropout::Sample(&mut self.streams.test_dropout),
            )?;
            if !out.breakdown.is_finite() || !out.objective.is_finite() {
                return Err(self.diverged(format!("non-finite mapper loss {:?}", out.breakdown)));
            }
            self.apply(&out.grads)?;
            let mut record = Record {
                iteration: self.iteration,
                stage: Stage::Stage2,
                breakdown: out.breakdown,
                train_mae: mae(tr.ages.as_deref().expect("labelled batch"), &out.train_predictions)?,
                test_mae: None,
                code_dist: None,
            };
            let eval = self.is_eval_iteration(local, total);
            self.finish(&mut record, train, Some(test), eval)?;
            history.records.push(record);
        }
        Ok(history)
    }
}

/// Inference-mode predictions and their MAE.
pub fn evaluate(model: &ArlModel, ds: &FeatureDataset) -> Result<(f64, Vec<f64>)> {
    let ages = ds
        .ages
        .as_deref()
        .ok_or_else(|| ArlError::Usage("evaluation needs a dataset with ages".into()))?;
    let pred = model.predict(&ds.features, ds.gender_f64().as_deref())?;
    Ok((mae(ages, &pred)?, pred))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftDiagnostics {
    /// Distance between the raw feature means.
    pub dist_raw: f64,
    /// Distance between the inference-mode code means.
    pub dist_code: f64,
}

pub fn shift_diagnostics(model: &ArlModel, train: &FeatureDataset, test: &FeatureDataset) -> Result<ShiftDiagnostics> {
    let dist_raw = mean_embed_dist(&train.features, &test.features)?;
    let c_tr = model.codes(&train.features, train.gender_f64().as_deref())?;
    let c_te = model.codes(&test.features, test.gender_f64().as_deref())?;
    Ok(ShiftDiagnostics {
        dist_raw,
        dist_code: mean_embed_dist(&c_tr, &c_te)?,
    })
}

/// Result of a complete two-stage run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub trainer: Trainer,
    pub history: History,
    /// Diagnostics after stage 1 and after stage 2.
    pub after_stage1: ShiftDiagnostics,
    pub after_stage2: ShiftDiagnostics,
    /// Test MAE after each stage, when the test set is labelled.
    pub test_mae_stage1: Option<f64>,
    pub test_mae_stage2: Option<f64>,
}

/// Stage 1 then stage 2 from a fresh model, with one optimizer state
/// carried across both stages.
pub fn train_two_stage(
    model_config: &ArlConfig,
    config: &TrainConfig,
    train: &FeatureDataset,
    test: &FeatureDataset,
) -> Result<RunOutcome> {
    let mut trainer = Trainer::new(model_config, config.clone())?;
    let mut history = trainer.stage1_fit(train, Some(test))?;
    let after_stage1 = shift_diagnostics(&trainer.model, train, test)?;
    let test_mae_stage1 = test.ages.is_some().then(|| evaluate(&trainer.model, test)).transpose()?.map(|r| r.0);
    history.extend(trainer.stage2_adversarial(train, test)?);
    let after_stage2 = shift_diagnostics(&trainer.model, train, test)?;
    let test_mae_stage2 = test.ages.is_some().then(|| evaluate(&trainer.model, test)).transpose()?.map(|r| r.0);
    Ok(RunOutcome {
        trainer,
        history,
        after_stage1,
        after_stage2,
        test_mae_stage1,
        test_mae_stage2,
    })
}

/// The eight loss ablations, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "-L_D-L_AR-L_Recon")]
    NoDNoArNoRecon,
    #[serde(rename = "-L_M-L_AR-L_Recon")]
    NoMNoArNoRecon,
    #[serde(rename = "-L_D-L_Recon")]
    NoDNoRecon,
    #[serde(rename = "-L_M-L_Recon")]
    NoMNoRecon,
    #[serde(rename = "-L_AR-L_Recon")]
    NoArNoRecon,
    #[serde(rename = "-L_AR")]
    NoAr,
    #[serde(rename = "-L_Recon")]
    NoRecon,
    #[serde(rename = "full")]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::NoDNoArNoRecon,
        Variant::NoMNoArNoRecon,
        Variant::NoDNoRecon,
        Variant::NoMNoRecon,
        Variant::NoArNoRecon,
        Variant::NoAr,
        Variant::NoRecon,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoDNoArNoRecon => "-L_D-L_AR-L_Recon",
            Variant::NoMNoArNoRecon => "-L_M-L_AR-L_Recon",
            Variant::NoDNoRecon => "-L_D-L_Recon",
            Variant::NoMNoRecon => "-L_M-L_Recon",
            Variant::NoArNoRecon => "-L_AR-L_Recon",
            Variant::NoAr => "-L_AR",
            Variant::NoRecon => "-L_Recon",
            Variant::Full => "full",
        }
    }

    /// `base` with this variant's terms switched off.
    pub fn weights(self, base: &LossWeights) -> LossWeights {
        let (no_m, no_d, no_ar, no_recon) = match self {
            Variant::NoDNoArNoRecon => (false, true, true, true),
            Variant::NoMNoArNoRecon => (true, false, true, true),
            Variant::NoDNoRecon => (false, true, false, true),
            Variant::NoMNoRecon => (true, false, false, true),
            Variant::NoArNoRecon => (false, false, true, true),
            Variant::NoAr => (false, false, true, false),
            Variant::NoRecon => (false, false, false, true),
            Variant::Full => (false, false, false, false),
        };
        LossWeights {
            use_mape: base.use_mape && !no_m,
            alpha: if no_d { 0.0 } else { base.alpha },
            beta: if no_ar { 0.0 } else { base.beta },
            gamma: if no_recon { 0.0 } else { base.gamma },
            eps_div: base.eps_div,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    /// Test MAE and code distance after both stages.
    pub test_mae: f64,
    pub dist_code: f64,
    /// The same after stage 1 alone.
    pub test_mae_stage1: f64,
    pub dist_code_stage1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }
}

/// Retrains every variant from scratch with the shared seed. Variants run
/// in parallel; rows come back in table order.
pub fn run_ablation(
    model_config: &ArlConfig,
    base: &TrainConfig,
    train: &FeatureDataset,
    test: &FeatureDataset,
) -> Result<AblationTable> {
    if test.ages.is_none() {
        return Err(ArlError::Usage("ablation reports test MAE and needs test ages".into()));
    }
    let rows = Variant::ALL
        .par_iter()
        .map(|&variant| {
            let config = TrainConfig {
                weights: variant.weights(&base.weights),
                ..base.clone()
            };
            let run = train_two_stage(model_config, &config, train, test)?;
            Ok(AblationRow {
                variant,
                test_mae: run.test_mae_stage2.expect("labelled test set"),
                dist_code: run.after_stage2.dist_code,
                test_mae_stage1: run.test_mae_stage1.expect("labelled test set"),
                dist_code_stage1: run.after_stage1.dist_code,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { seed: base.seed, rows })
}
