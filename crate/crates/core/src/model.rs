//! The adversarial regression network: a shared trunk producing a low
//! dimensional code, a one-unit shared output that doubles as the age
//! regressor, a data regressor that guesses the domain of a code, and a
//! reconstruction decoder mapping the shared output back to feature space.
//!
//! ```text
//! [x | gender] -> trunk.0 (relu, dropout) -> trunk.1 (relu) = code
//! code -> shared_out (linear)           = age prediction / domain map
//! code -> data_regressor.0 (relu) -> data_regressor.1 (sigmoid) = domain score
//! tap  -> decoder.0 (relu) -> decoder.1 (relu) -> decoder.2 (linear) = x_hat
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autonet::{Activation, DenseLayer, LayerCache, LayerGrads};
use crate::error::{ArlError, Result};
use crate::losses::{
    ar_loss, ar_loss_grad, domain_labels, mape, mean_disc, percentage_loss_grad, recon_mse, recon_mse_grad,
    LossBreakdown, LossWeights,
};
use crate::numcore::{dropout_mask, Matrix, RngState};

/// Where the reconstruction decoder reads from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconTap {
    /// The one-unit shared output.
    SharedOutput,
    /// The trunk code.
    Code,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArlConfig {
    pub feat_dim: usize,
    /// Hidden widths of the shared trunk; the last one is the code width.
    pub trunk_units: Vec<usize>,
    /// Width of the shared output. Only 1 is supported: it is the age.
    pub shared_out_units: usize,
    /// Hidden widths of the decoder before its projection back to `feat_dim`.
    pub recon_units: Vec<usize>,
    /// Hidden width of the data regressor.
    pub disc_units: usize,
    pub dropout_rate: f64,
    pub use_gender: bool,
    pub recon_tap: ReconTap,
}

impl Default for ArlConfig {
    fn default() -> Self {
        Self {
            feat_dim: 1000,
            trunk_units: vec![512, 8],
            shared_out_units: 1,
            recon_units: vec![8, 512],
            disc_units: 8,
            dropout_rate: 0.5,
            use_gender: true,
            recon_tap: ReconTap::SharedOutput,
        }
    }
}

impl ArlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feat_dim == 0 {
            return Err(ArlError::Config("feat_dim must be >= 1".into()));
        }
        if self.trunk_units.is_empty() || self.trunk_units.contains(&0) {
            return Err(ArlError::Config(format!("trunk_units must be non-empty and positive, got {:?}", self.trunk_units)));
        }
        if self.shared_out_units != 1 {
            return Err(ArlError::Config(format!(
                "shared_out_units must be 1 (the age output), got {}",
                self.shared_out_units
            )));
        }
        if self.recon_units.contains(&0) || self.disc_units == 0 {
            return Err(ArlError::Config("recon_units and disc_units must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ArlError::Config(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.feat_dim + usize::from(self.use_gender)
    }

    pub fn code_dim(&self) -> usize {
        *self.trunk_units.last().expect("validated trunk")
    }
}

/// Parameter groups, used for freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Trunk,
    SharedOut,
    DataRegressor,
    Decoder,
}

impl ParamGroup {
    pub const MAPPER: [ParamGroup; 3] = [ParamGroup::Trunk, ParamGroup::SharedOut, ParamGroup::Decoder];
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Trunk,
        ParamGroup::SharedOut,
        ParamGroup::DataRegressor,
        ParamGroup::Decoder,
    ];

    fn prefix(self) -> &'static str {
        match self {
            ParamGroup::Trunk => "trunk",
            ParamGroup::SharedOut => "shared_out",
            ParamGroup::DataRegressor => "data_regressor",
            ParamGroup::Decoder => "decoder",
        }
    }

    pub fn of(name: &str) -> Option<ParamGroup> {
        ParamGroup::ALL.into_iter().find(|g| name.split('.').next() == Some(g.prefix()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArlModel {
    pub config: ArlConfig,
    pub trunk: Vec<DenseLayer>,
    pub shared_out: DenseLayer,
    pub data_regressor: Vec<DenseLayer>,
    pub decoder: Vec<DenseLayer>,
}

/// Gradients keyed by layer name (`trunk.0`, `shared_out`, ...). A missing
/// key means the layer was frozen for the phase.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelGrads(pub BTreeMap<String, LayerGrads>);

impl ModelGrads {
    pub fn get(&self, name: &str) -> Option<&LayerGrads> {
        self.0.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    fn accumulate(&mut self, name: String, g: LayerGrads) -> Result<()> {
        match self.0.get_mut(&name) {
            Some(existing) => existing.add_assign(&g),
            None => {
                self.0.insert(name, g);
                Ok(())
            }
        }
    }

    /// Concatenated `[weights, bias]` per listed layer; absent layers give zeros.
    pub fn flatten(&self, model: &ArlModel, names: &[String]) -> Vec<f64> {
        let mut out = Vec::new();
        for name in names {
            match self.0.get(name) {
                Some(g) => {
                    out.extend_from_slice(g.weights.data());
                    out.extend_from_slice(&g.bias);
                }
                None => {
                    let n = model.layer(name).map_or(0, DenseLayer::param_count);
                    out.extend(std::iter::repeat_n(0.0, n));
                }
            }
        }
        out
    }
}

/// Source of the dropout mask after the first trunk layer.
pub enum Dropout<'a> {
    /// Inference: no mask.
    Off,
    /// Draw a fresh mask from the stream.
    Sample(&'a mut RngState),
    /// Reuse a recorded mask; used to freeze dropout for gradient checks.
    Fixed(&'a Matrix),
}

/// A batch of rows from one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub gender: Option<Vec<f64>>,
    pub ages: Option<Vec<f64>>,
}

/// Loss settings beyond the scalar weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
    /// Domain labels become `{s, 1 - s}`; 0 keeps hard labels.
    pub label_smoothing: f64,
    /// Train the data regressor by ascending the adversarial loss (both
    /// directions) and the mapper against the summed objective, instead of
    /// the discriminate-then-fool convention.
    pub literal_signs: bool,
}

impl Objective {
    pub fn new(weights: LossWeights) -> Self {
        Self {
            weights,
            label_smoothing: 0.0,
            literal_signs: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Update the data regressor only.
    Discriminator,
    /// Update trunk, shared output and decoder against the regression,
    /// label-swapped adversarial and reconstruction terms.
    Mapper,
    /// Gradient of `l_total` with respect to every parameter.
    Joint,
}

impl Phase {
    /// Parameter groups that receive gradients in this phase.
    pub fn trainable(self) -> &'static [ParamGroup] {
        match self {
            Phase::Discriminator => &[ParamGroup::DataRegressor],
            Phase::Mapper => &ParamGroup::MAPPER,
            Phase::Joint => &ParamGroup::ALL,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PhaseOutput {
    pub breakdown: LossBreakdown,
    /// Value of the objective whose gradient is returned.
    pub objective: f64,
    pub grads: ModelGrads,
    pub train_predictions: Vec<f64>,
    pub train_code: Matrix,
    pub test_code: Option<Matrix>,
    /// Dropout masks used for the training and test batch.
    pub masks: (Option<Matrix>, Option<Matrix>),
}

struct TrunkPass {
    caches: Vec<LayerCache>,
    code: Matrix,
}

struct DomainPass {
    trunk: TrunkPass,
    shared_cache: LayerCache,
    out: Matrix,
    disc_caches: Vec<LayerCache>,
    disc: Vec<f64>,
    dec_caches: Vec<LayerCache>,
    recon: Matrix,
}

fn layer_name(prefix: &str, i: usize) -> String {
    format!("{prefix}.{i}")
}

/// Builds a model with Glorot-uniform weights and zero biases.
pub fn init_model(cfg: &ArlConfig, seed: u64) -> Result<ArlModel> {
    cfg.validate()?;
    let root = RngState::new(seed);
    let mut trunk = Vec::new();
    let mut width = cfg.input_width();
    for (i, &units) in cfg.trunk_units.iter().enumerate() {
        let mut rng = root.split(&layer_name("trunk", i));
        trunk.push(DenseLayer::glorot(width, units, Activation::Relu, &mut rng)?);
        width = units;
    }
    let code = width;
    let shared_out = DenseLayer::glorot(code, 1, Activation::Linear, &mut root.split("shared_out"))?;
    let data_regressor = vec![
        DenseLayer::glorot(code, cfg.disc_units, Activation::Relu, &mut root.split("data_regressor.0"))?,
        DenseLayer::glorot(cfg.disc_units, 1, Activation::Sigmoid, &mut root.split("data_regressor.1"))?,
    ];
    let mut decoder = Vec::new();
    let mut width = match cfg.recon_tap {
        ReconTap::SharedOutput => 1,
        ReconTap::Code => code,
    };
    for (i, &units) in cfg.recon_units.iter().enumerate() {
        let mut rng = root.split(&layer_name("decoder", i));
        decoder.push(DenseLayer::glorot(width, units, Activation::Relu, &mut rng)?);
        width = units;
    }
    let last = cfg.recon_units.len();
    decoder.push(DenseLayer::glorot(
        width,
        cfg.feat_dim,
        Activation::Linear,
        &mut root.split(&layer_name("decoder", last)),
    )?);
    Ok(ArlModel {
        config: cfg.clone(),
        trunk,
        shared_out,
        data_regressor,
        decoder,
    })
}

fn column_values(m: &Matrix) -> Vec<f64> {
    m.data().to_vec()
}

impl ArlModel {
    /// All layers in canonical order with their names.
    pub fn layers(&self) -> Vec<(String, &DenseLayer)> {
        let mut out: Vec<(String, &DenseLayer)> = Vec::new();
        out.extend(self.trunk.iter().enumerate().map(|(i, l)| (layer_name("trunk", i), l)));
        out.push(("shared_out".to_string(), &self.shared_out));
        out.extend(
            self.data_regressor
                .iter()
                .enumerate()
                .map(|(i, l)| (layer_name("data_regressor", i), l)),
        );
        out.extend(self.decoder.iter().enumerate().map(|(i, l)| (layer_name("decoder", i), l)));
        out
    }

    pub fn layer_names(&self, groups: &[ParamGroup]) -> Vec<String> {
        self.layers()
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| ParamGroup::of(n).is_some_and(|g| groups.contains(&g)))
            .collect()
    }

    pub fn layer(&self, name: &str) -> Option<&DenseLayer> {
        self.layers().into_iter().find(|(n, _)| n == name).map(|(_, l)| l)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut DenseLayer> {
        let (prefix, idx) = match name.split_once('.') {
            Some((p, i)) => (p, i.parse::<usize>().ok()?),
            None => (name, 0),
        };
        match prefix {
            "trunk" => self.trunk.get_mut(idx),
            "shared_out" => Some(&mut self.shared_out),
            "data_regressor" => self.data_regressor.get_mut(idx),
            "decoder" => self.decoder.get_mut(idx),
            _ => None,
        }
    }

    pub fn flat_params(&self, names: &[String]) -> Vec<f64> {
        let mut out = Vec::new();
        for name in names {
            let l = self.layer(name).expect("known layer name");
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, names: &[String], flat: &[f64]) {
        let mut offset = 0;
        for name in names {
            let l = self.layer_mut(name).expect("known layer name");
            let nw = l.weights.data().len();
            l.weights.data_mut().copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|(_, l)| l.is_finite())
    }

    /// Raw features with the gender column appended when configured.
    pub fn trunk_input(&self, x: &Matrix, gender: Option<&[f64]>) -> Result<Matrix> {
        let cfg = &self.config;
        if x.cols() != cfg.feat_dim {
            return Err(ArlError::shape(
                "trunk_input",
                x.shape_str(),
                format!("feat_dim {}", cfg.feat_dim),
            ));
        }
        match (cfg.use_gender, gender) {
            (true, Some(g)) => {
                if let Some(i) = g.iter().position(|&v| v != 0.0 && v != 1.0) {
                    return Err(ArlError::Domain(format!("gender {i} is {} but must be 0 or 1", g[i])));
                }
                x.append_column(g)
            }
            (false, None) => Ok(x.clone()),
            (true, None) => Err(ArlError::Config("model uses gender but none was supplied".into())),
            (false, Some(_)) => Err(ArlError::Config("gender supplied to a model configured without it".into())),
        }
    }

    fn trunk_forward(&self, x: &Matrix, gender: Option<&[f64]>, dropout: Dropout<'_>) -> Result<TrunkPass> {
        let mut h = self.trunk_input(x, gender)?;
        let mut caches = Vec::with_capacity(self.trunk.len());
        let rate = self.config.dropout_rate;
        let mut dropout = Some(dropout);
        for (i, layer) in self.trunk.iter().enumerate() {
            let mask = if i == 0 {
                match dropout.take().expect("first layer") {
                    Dropout::Off => None,
                    Dropout::Sample(rng) if rate > 0.0 => Some(dropout_mask(rng, h.rows(), layer.outputs(), rate)?),
                    Dropout::Sample(_) => None,
                    Dropout::Fixed(m) => Some(m.clone()),
                }
            } else {
                None
            };
            let (y, cache) = layer.forward(&h, mask)?;
            caches.push(cache);
            h = y;
        }
        Ok(TrunkPass { caches, code: h })
    }

    fn stack_forward(layers: &[DenseLayer], x: &Matrix) -> Result<(Matrix, Vec<LayerCache>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(layers.len());
        for layer in layers {
            let (y, cache) = layer.forward(&h, None)?;
            caches.push(cache);
            h = y;
        }
        Ok((h, caches))
    }

    /// Backpropagates `dy` through `layers`, storing parameter gradients
    /// under `prefix.i` when `grads` is given. Returns the input cotangent.
    fn stack_backward(
        layers: &[DenseLayer],
        caches: &[LayerCache],
        dy: Matrix,
        prefix: &str,
        mut grads: Option<&mut ModelGrads>,
    ) -> Result<Matrix> {
        let mut d = dy;
        for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
            let (dx, g) = layer.backward(cache, &d)?;
            if let Some(grads) = grads.as_deref_mut() {
                grads.accumulate(layer_name(prefix, i), g)?;
            }
            d = dx;
        }
        Ok(d)
    }

    /// Backpropagates a code cotangent through the trunk. The features need
    /// no cotangent, so the first layer computes parameter gradients only.
    fn trunk_backward(&self, caches: &[LayerCache], dc: Matrix, grads: &mut ModelGrads) -> Result<()> {
        let mut d = dc;
        for (i, (layer, cache)) in self.trunk.iter().zip(caches).enumerate().rev() {
            if i == 0 {
                grads.accumulate(layer_name("trunk", 0), layer.backward_params(cache, &d)?)?;
            } else {
                let (dx, g) = layer.backward(cache, &d)?;
                grads.accumulate(layer_name("trunk", i), g)?;
                d = dx;
            }
        }
        Ok(())
    }

    /// 8-dim trunk code in inference mode.
    pub fn codes(&self, x: &Matrix, gender: Option<&[f64]>) -> Result<Matrix> {
        Ok(self.trunk_forward(x, gender, Dropout::Off)?.code)
    }

    /// Age predictions from the shared output.
    pub fn predict_age(&self, x: &Matrix, gender: Option<&[f64]>, dropout: Dropout<'_>) -> Result<Vec<f64>> {
        let trunk = self.trunk_forward(x, gender, dropout)?;
        Ok(column_values(&self.shared_out.infer(&trunk.code)?))
    }

    /// Inference-mode age predictions.
    pub fn predict(&self, x: &Matrix, gender: Option<&[f64]>) -> Result<Vec<f64>> {
        self.predict_age(x, gender, Dropout::Off)
    }

    /// Data-regressor scores in `(0, 1)`: near 0 reads as training domain,
    /// near 1 as test domain.
    pub fn discriminate(&self, x: &Matrix, gender: Option<&[f64]>, dropout: Dropout<'_>) -> Result<Vec<f64>> {
        let trunk = self.trunk_forward(x, gender, dropout)?;
        let (p, _) = Self::stack_forward(&self.data_regressor, &trunk.code)?;
        Ok(column_values(&p))
    }

    /// Decoder output in feature space.
    pub fn reconstruct(&self, x: &Matrix, gender: Option<&[f64]>, dropout: Dropout<'_>) -> Result<Matrix> {
        let trunk = self.trunk_forward(x, gender, dropout)?;
        let tap = match self.config.recon_tap {
            ReconTap::SharedOutput => self.shared_out.infer(&trunk.code)?,
            ReconTap::Code => trunk.code,
        };
        Ok(Self::stack_forward(&self.decoder, &tap)?.0)
    }

    fn domain_forward(&self, batch: &Batch, dropout: Dropout<'_>) -> Result<DomainPass> {
        let trunk = self.trunk_forward(&batch.x, batch.gender.as_deref(), dropout)?;
        let (out, shared_cache) = self.shared_out.forward(&trunk.code, None)?;
        let (disc, disc_caches) = Self::stack_forward(&self.data_regressor, &trunk.code)?;
        let tap = match self.config.recon_tap {
            ReconTap::SharedOutput => &out,
            ReconTap::Code => &trunk.code,
        };
        let (recon, dec_caches) = Self::stack_forward(&self.decoder, tap)?;
        Ok(DomainPass {
            trunk,
            shared_cache,
            out,
            disc_caches,
            disc: column_values(&disc),
            dec_caches,
            recon,
        })
    }

    /// Backpropagates per-domain cotangents on the shared output, the code,
    /// the domain score and the reconstruction.
    #[allow(clippy::too_many_arguments)]
    fn domain_backward(
        &self,
        pass: &DomainPass,
        x: &Matrix,
        d_out: Option<Vec<f64>>,
        d_disc: Option<Vec<f64>>,
        recon_coef: f64,
        keep_mapper: bool,
        keep_disc: bool,
        grads: &mut ModelGrads,
    ) -> Result<()> {
        let mut d_out = d_out.map(|v| Matrix::column(&v)).transpose()?;
        let mut d_code: Option<Matrix> = None;
        let add = |slot: &mut Option<Matrix>, m: Matrix| -> Result<()> {
            match slot {
                Some(s) => s.add_assign(&m),
                None => {
                    *slot = Some(m);
                    Ok(())
                }
            }
        };

        if recon_coef != 0.0 {
            let dxh = recon_mse_grad(x, &pass.recon)?.scale(recon_coef);
            let g = keep_mapper.then_some(&mut *grads);
            let d_tap = Self::stack_backward(&self.decoder, &pass.dec_caches, dxh, "decoder", g)?;
            match self.config.recon_tap {
                ReconTap::SharedOutput => add(&mut d_out, d_tap)?,
                ReconTap::Code => add(&mut d_code, d_tap)?,
            }
        }
        if let Some(dp) = d_disc {
            let g = keep_disc.then_some(&mut *grads);
            let dc = Self::stack_backward(
                &self.data_regressor,
                &pass.disc_caches,
                Matrix::column(&dp)?,
                "data_regressor",
                g,
            )?;
            if keep_mapper {
                add(&mut d_code, dc)?;
            }
        }
        if !keep_mapper {
            return Ok(());
        }
        if let Some(dout) = d_out {
            let (dc, g) = self.shared_out.backward(&pass.shared_cache, &dout)?;
            grads.accumulate("shared_out".to_string(), g)?;
            // Shared-output cotangent first so the regression-only path
            // matches a pure percentage-loss step exactly.
            match d_code.take() {
                Some(extra) => {
                    let mut dc = dc;
                    dc.add_assign(&extra)?;
                    d_code = Some(dc);
                }
                None => d_code = Some(dc),
            }
        }
        if let Some(dc) = d_code {
            self.trunk_backward(&pass.trunk.caches, dc, grads)?;
        }
        Ok(())
    }

    /// Percentage-loss value and gradients for trunk and shared output on
    /// a labelled batch.
    pub fn regression_loss(
        &self,
        batch: &Batch,
        weights: &LossWeights,
        dropout: Dropout<'_>,
    ) -> Result<(LossBreakdown, ModelGrads, Vec<f64>)> {
        let ages = batch
            .ages
            .as_deref()
            .ok_or_else(|| ArlError::Usage("regression loss needs a labelled batch".into()))?;
        let trunk = self.trunk_forward(&batch.x, batch.gender.as_deref(), dropout)?;
        let (out, shared_cache) = self.shared_out.forward(&trunk.code, None)?;
        let pred = column_values(&out);
        let breakdown = LossBreakdown::compose(mape(ages, &pred)?, mean_disc(ages, &pred)?, 0.0, 0.0, 0.0, weights);
        let mut grads = ModelGrads::default();
        let dout = Matrix::column(&percentage_loss_grad(ages, &pred, weights)?)?;
        let (dc, g) = self.shared_out.backward(&shared_cache, &dout)?;
        grads.accumulate("shared_out".to_string(), g)?;
        self.trunk_backward(&trunk.caches, dc, &mut grads)?;
        Ok((breakdown, grads, pred))
    }

    /// Smallest distance of any non-differentiable point of the objective from
    /// its kink: relu pre-activations, and the arguments of every absolute
    /// value in the percentage and AR losses.
    pub fn kink_margin(
        &self,
        tr: &Batch,
        te: &Batch,
        objective: &Objective,
        dropout_tr: Dropout<'_>,
        dropout_te: Dropout<'_>,
    ) -> Result<f64> {
        let ages = tr
            .ages
            .as_deref()
            .ok_or_else(|| ArlError::Usage("training batch must carry ages".into()))?;
        let ptr = self.domain_forward(tr, dropout_tr)?;
        let pte = self.domain_forward(te, dropout_te)?;
        let mut margin = f64::INFINITY;
        let mut see = |v: f64| margin = margin.min(v.abs());
        for pass in [&ptr, &pte] {
            let caches = pass.trunk.caches.iter().chain(&pass.disc_caches).chain(&pass.dec_caches);
            let layers = self.trunk.iter().chain(&self.data_regressor).chain(&self.decoder);
            for (layer, cache) in layers.zip(caches) {
                if layer.activation == Activation::Relu {
                    cache.pre_activation.data().iter().for_each(|&v| see(v));
                }
            }
        }
        let pred = column_values(&ptr.out);
        ages.iter().zip(&pred).for_each(|(y, p)| see(y - p));
        let n = ages.len() as f64;
        see(ages.iter().sum::<f64>() / n - pred.iter().sum::<f64>() / n);
        let labels = domain_labels(tr.x.rows(), te.x.rows(), objective.label_smoothing);
        let scores: Vec<f64> = ptr.disc.iter().chain(&pte.disc).copied().collect();
        let m = scores.len() as f64;
        for flip in [false, true] {
            let l: Vec<f64> = labels.iter().map(|&l| if flip { 1.0 - l } else { l }).collect();
            l.iter().zip(&scores).for_each(|(a, b)| see(a - b));
            see(l.iter().sum::<f64>() / m - scores.iter().sum::<f64>() / m);
        }
        Ok(margin)
    }

    /// Full objective on a labelled training batch and an unlabelled test
    /// batch, with gradients for the trainable set of `phase`.
    pub fn model_loss(
        &self,
        tr: &Batch,
        te: &Batch,
        objective: &Objective,
        phase: Phase,
        dropout_tr: Dropout<'_>,
        dropout_te: Dropout<'_>,
    ) -> Result<PhaseOutput> {
        let w = &objective.weights;
        let ages = tr
            .ages
            .as_deref()
            .ok_or_else(|| ArlError::Usage("training batch must carry ages".into()))?;
        let ptr = self.domain_forward(tr, dropout_tr)?;
        let pte = self.domain_forward(te, dropout_te)?;
        let pred = column_values(&ptr.out);
        let (n_tr, n_te) = (tr.x.rows(), te.x.rows());

        let labels_fwd = domain_labels(n_tr, n_te, objective.label_smoothing);
        let labels_bwd: Vec<f64> = labels_fwd.iter().map(|l| 1.0 - l).collect();
        let mut scores = ptr.disc.clone();
        scores.extend_from_slice(&pte.disc);

        let l_ar_fwd = ar_loss(&labels_fwd, &scores, w.eps_div)?;
        let l_ar_bwd = ar_loss(&labels_bwd, &scores, w.eps_div)?;
        let l_recon = recon_mse(&tr.x, &ptr.recon)? + recon_mse(&te.x, &pte.recon)?;
        let breakdown = LossBreakdown::compose(mape(ages, &pred)?, mean_disc(ages, &pred)?, l_ar_fwd, l_ar_bwd, l_recon, w);

        // (include L_P, fwd coef, bwd coef, recon coef, keep mapper, keep data regressor)
        let (use_lp, c_fwd, c_bwd, c_rec, keep_mapper, keep_disc) = match (phase, objective.literal_signs) {
            (Phase::Discriminator, false) => (false, 1.0, 0.0, 0.0, false, true),
            (Phase::Discriminator, true) => (false, -1.0, -1.0, 0.0, false, true),
            (Phase::Mapper, false) => (true, 0.0, w.beta, w.gamma, true, false),
            (Phase::Mapper, true) => (true, w.beta, w.beta, w.gamma, true, false),
            (Phase::Joint, _) => (true, w.beta, w.beta, w.gamma, true, true),
        };
        let objective_value = if use_lp { breakdown.l_p } else { 0.0 } + c_fwd * l_ar_fwd + c_bwd * l_ar_bwd + c_rec * l_recon;

        let d_scores = if c_fwd != 0.0 || c_bwd != 0.0 {
            let mut d = vec![0.0; n_tr + n_te];
            for (coef, labels) in [(c_fwd, &labels_fwd), (c_bwd, &labels_bwd)] {
                if coef != 0.0 {
                    for (acc, g) in d.iter_mut().zip(ar_loss_grad(labels, &scores, w.eps_div)?) {
                        *acc += coef * g;
                    }
                }
            }
            Some(d)
        } else {
            None
        };
        let (d_tr, d_te) = match d_scores {
            Some(mut d) => {
                let te_part = d.split_off(n_tr);
                (Some(d), Some(te_part))
            }
            None => (None, None),
        };
        let d_out_tr = if use_lp { Some(percentage_loss_grad(ages, &pred, w)?) } else { None };

        let mut grads = ModelGrads::default();
        self.domain_backward(&ptr, &tr.x, d_out_tr, d_tr, c_rec, keep_mapper, keep_disc, &mut grads)?;
        self.domain_backward(&pte, &te.x, None, d_te, c_rec, keep_mapper, keep_disc, &mut grads)?;

        let mask_of = |p: &DomainPass| p.trunk.caches.first().and_then(|c| c.mask.clone());
        Ok(PhaseOutput {
            breakdown,
            objective: objective_value,
            grads,
            train_predictions: pred,
            masks: (mask_of(&ptr), mask_of(&pte)),
            train_code: ptr.trunk.code,
            test_code: Some(pte.trunk.code),
        })
    }
}
