//! Finite-difference verification of every analytic gradient in the crate:
//! each loss, each layer activation, and the combined objective of a small
//! model in every training phase.
//!
//! Model checks run on a `feat_dim = 10` network with dropout masks drawn
//! once and then frozen. The toy is built to be well conditioned for central
//! differences: inputs are positive, every bias is moved off zero so no
//! pre-activation sits on a relu kink, and the regressor bias starts at the
//! mean target so the objective stays small relative to its gradients.

use crate::autonet::{grad_check, Activation, DenseLayer};
use crate::error::Result;
use crate::losses::{
    ar_loss, ar_loss_grad, bce_grad, bce_loss, domain_labels, mape, mape_grad, mean_disc, mean_disc_grad,
    percentage_loss, percentage_loss_grad, recon_mse, recon_mse_grad, LossWeights,
};
use crate::model::{init_model, ArlConfig, ArlModel, Batch, Dropout, Objective, ParamGroup, Phase, ReconTap};
use crate::numcore::{dropout_mask, rng_uniform, Matrix, RngState};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

/// Seed of the toy problem checked by default.
pub const GRADCHECK_SEED: u64 = 0;

/// Feature width of the toy model used for the model-level checks.
pub const TOY_FEAT_DIM: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentCheck {
    pub component: String,
    pub max_rel_error: f64,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

/// Runs every check. When `corrupt` names a component, that component's
/// analytic gradient is scaled by 1.01 before comparison, which must make
/// it fail.
pub fn run_gradient_suite(seed: u64, corrupt: Option<&str>) -> Result<Vec<ComponentCheck>> {
    let mut suite = Suite {
        corrupt,
        checks: Vec::new(),
    };
    loss_checks(&mut suite);
    layer_checks(&mut suite, seed)?;
    model_checks(&mut suite, seed)?;
    Ok(suite.checks)
}

struct Suite<'a> {
    corrupt: Option<&'a str>,
    checks: Vec<ComponentCheck>,
}

impl Suite<'_> {
    fn check<F>(&mut self, component: &str, params: &[f64], mut f: F)
    where
        F: FnMut(&[f64]) -> (f64, Vec<f64>),
    {
        let scale = if self.corrupt == Some(component) { 1.01 } else { 1.0 };
        let err = grad_check(
            |p| {
                let (v, g) = f(p);
                (v, g.into_iter().map(|x| x * scale).collect())
            },
            params,
            GRADCHECK_STEP,
        );
        self.checks.push(ComponentCheck {
            component: component.to_string(),
            max_rel_error: err,
        });
    }
}

fn loss_checks(s: &mut Suite<'_>) {
    let y = [10.0, 20.0, 7.0, 13.0];
    let p = [12.0, 15.0, 7.5, 11.0];
    s.check("mape", &p, |q| (mape(&y, q).unwrap(), mape_grad(&y, q).unwrap()));
    s.check("mean_disc", &p, |q| (mean_disc(&y, q).unwrap(), mean_disc_grad(&y, q).unwrap()));
    let w = LossWeights::default();
    s.check("percentage_loss", &p, |q| {
        (percentage_loss(&y, q, w.alpha).unwrap(), percentage_loss_grad(&y, q, &w).unwrap())
    });

    let scores = [0.3, 0.05, 0.7, 0.95, 0.6];
    let labels = domain_labels(2, 3, 0.1);
    s.check("ar_loss", &scores, |q| {
        (ar_loss(&labels, q, w.eps_div).unwrap(), ar_loss_grad(&labels, q, w.eps_div).unwrap())
    });
    let bwd: Vec<f64> = labels.iter().map(|l| 1.0 - l).collect();
    s.check("bidirectional_ar", &scores, |q| {
        let v = ar_loss(&labels, q, w.eps_div).unwrap() + ar_loss(&bwd, q, w.eps_div).unwrap();
        let g = ar_loss_grad(&labels, q, w.eps_div)
            .unwrap()
            .into_iter()
            .zip(ar_loss_grad(&bwd, q, w.eps_div).unwrap())
            .map(|(a, b)| a + b)
            .collect();
        (v, g)
    });

    let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, 1.0]]).unwrap();
    s.check("recon_mse", &[0.3, -1.0, 0.9, 0.4, 2.0, -0.5], |q| {
        let xh = Matrix::new(2, 3, q.to_vec()).unwrap();
        (recon_mse(&x, &xh).unwrap(), recon_mse_grad(&x, &xh).unwrap().into_data())
    });
    let bce_labels = [0.0, 1.0, 1.0, 0.0, 1.0];
    s.check("bce", &scores, |q| (bce_loss(&bce_labels, q).unwrap(), bce_grad(&bce_labels, q).unwrap()));
}

fn layer_checks(s: &mut Suite<'_>, seed: u64) -> Result<()> {
    for (name, act) in [
        ("dense_relu", Activation::Relu),
        ("dense_linear", Activation::Linear),
        ("dense_sigmoid", Activation::Sigmoid),
    ] {
        let mut rng = RngState::new(seed).split(name);
        let mut base = DenseLayer::glorot(5, 4, act, &mut rng)?;
        base.bias = rng_uniform(&mut rng, 1, 4, 0.05, 0.3)?.into_data();
        let x = rng_uniform(&mut rng, 6, 5, 0.1, 1.0)?;
        let probe = rng_uniform(&mut rng, 6, 4, -1.0, 1.0)?;
        let mask = dropout_mask(&mut rng, 6, 4, 0.5)?;
        let n_w = base.weights.data().len();
        let mut params = base.weights.data().to_vec();
        params.extend_from_slice(&base.bias);
        s.check(name, &params, |p| {
            let l = DenseLayer {
                weights: Matrix::new(4, 5, p[..n_w].to_vec()).unwrap(),
                bias: p[n_w..].to_vec(),
                activation: act,
            };
            let (y, cache) = l.forward(&x, Some(mask.clone())).unwrap();
            let value = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
            let (_, g) = l.backward(&cache, &probe).unwrap();
            let mut grad = g.weights.into_data();
            grad.extend(g.bias);
            (value, grad)
        });
    }
    Ok(())
}

/// The `feat_dim = 10` model, batches and frozen masks used by the model checks.
pub struct ToyProblem {
    pub model: ArlModel,
    pub train: Batch,
    pub test: Batch,
    pub masks: (Matrix, Matrix),
}

/// Label smoothing used by the model checks.
pub const TOY_LABEL_SMOOTHING: f64 = 0.25;

/// Smallest allowed distance of any kink from the evaluation point. The
/// step `h` moves a pre-activation by far less than this.
pub const TOY_KINK_MARGIN: f64 = 1e-3;

/// Draws toys from `seed`, redrawing until every kink is at least
/// [`TOY_KINK_MARGIN`] away.
pub fn toy_problem(seed: u64, tap: ReconTap) -> Result<ToyProblem> {
    let objective = toy_objective(false);
    let mut rng = RngState::new(seed).split("toy");
    loop {
        let toy = draw_toy(&mut rng, tap)?;
        let margin = toy.model.kink_margin(
            &toy.train,
            &toy.test,
            &objective,
            Dropout::Fixed(&toy.masks.0),
            Dropout::Fixed(&toy.masks.1),
        )?;
        if margin >= TOY_KINK_MARGIN {
            return Ok(toy);
        }
    }
}

fn draw_toy(rng: &mut RngState, tap: ReconTap) -> Result<ToyProblem> {
    let cfg = ArlConfig {
        feat_dim: TOY_FEAT_DIM,
        trunk_units: vec![8, 3],
        recon_units: vec![3, 5],
        disc_units: 3,
        recon_tap: tap,
        ..ArlConfig::default()
    };
    let mut model = init_model(&cfg, rng.next_u64())?;
    for name in model.layer_names(&ParamGroup::ALL) {
        let l = model.layer_mut(&name).expect("listed layer");
        let n = l.bias.len();
        l.bias = rng_uniform(rng, 1, n, 0.3, 0.8)?.into_data();
    }
    let (n_tr, n_te) = (6, 5);
    let ages: Vec<f64> = (0..n_tr).map(|i| 5.0 + i as f64).collect();
    let train = Batch {
        x: rng_uniform(rng, n_tr, TOY_FEAT_DIM, 0.1, 1.0)?,
        gender: Some((0..n_tr).map(|i| (i % 2) as f64).collect()),
        ages: Some(ages.clone()),
    };
    let test = Batch {
        x: rng_uniform(rng, n_te, TOY_FEAT_DIM, 0.3, 1.2)?,
        gender: Some((0..n_te).map(|i| ((i + 1) % 2) as f64).collect()),
        ages: None,
    };
    // Start the regressor near the targets so the objective stays O(1).
    let start = model.predict(&train.x, train.gender.as_deref())?;
    let shift = ages.iter().sum::<f64>() / n_tr as f64 - start.iter().sum::<f64>() / n_tr as f64;
    model.shared_out.bias[0] += shift + 0.1;
    let units = cfg.trunk_units[0];
    let masks = (
        dropout_mask(rng, n_tr, units, cfg.dropout_rate)?,
        dropout_mask(rng, n_te, units, cfg.dropout_rate)?,
    );
    Ok(ToyProblem {
        model,
        train,
        test,
        masks,
    })
}

fn toy_objective(literal_signs: bool) -> Objective {
    Objective {
        label_smoothing: TOY_LABEL_SMOOTHING,
        literal_signs,
        ..Objective::new(LossWeights::default())
    }
}

fn model_checks(s: &mut Suite<'_>, seed: u64) -> Result<()> {
    let smoothed = toy_objective(false);
    let literal = toy_objective(true);
    let cases = [
        ("model_discriminator", Phase::Discriminator, smoothed, ReconTap::SharedOutput),
        ("model_mapper", Phase::Mapper, smoothed, ReconTap::SharedOutput),
        ("model_full", Phase::Joint, smoothed, ReconTap::SharedOutput),
        ("model_full_code_tap", Phase::Joint, smoothed, ReconTap::Code),
        ("model_literal_discriminator", Phase::Discriminator, literal, ReconTap::SharedOutput),
        ("model_literal_mapper", Phase::Mapper, literal, ReconTap::SharedOutput),
    ];
    for (name, phase, objective, tap) in cases {
        let toy = toy_problem(seed, tap)?;
        let names = toy.model.layer_names(phase.trainable());
        let params = toy.model.flat_params(&names);
        s.check(name, &params, |p| {
            let mut m = toy.model.clone();
            m.set_flat_params(&names, p);
            let out = m
                .model_loss(
                    &toy.train,
                    &toy.test,
                    &objective,
                    phase,
                    Dropout::Fixed(&toy.masks.0),
                    Dropout::Fixed(&toy.masks.1),
                )
                .unwrap();
            (out.objective, out.grads.flatten(&m, &names))
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_suite_passes() {
        let checks = run_gradient_suite(GRADCHECK_SEED, None).unwrap();
        assert!(checks.len() >= 15);
        for c in &checks {
            assert!(c.passed(), "{} = {:e}", c.component, c.max_rel_error);
        }
    }

    #[test]
    fn every_toy_agrees_to_roundoff() {
        // Away from the pinned toy, gradient components near 1e-5 meet a
        // central-difference roundoff floor of about 1e-10 absolute.
        for seed in 0..30 {
            for c in run_gradient_suite(seed, None).unwrap() {
                assert!(c.max_rel_error < 1e-4, "seed {seed}: {} = {:e}", c.component, c.max_rel_error);
            }
        }
    }

    #[test]
    fn corruption_is_detected() {
        for target in ["ar_loss", "dense_relu", "model_full"] {
            let checks = run_gradient_suite(GRADCHECK_SEED, Some(target)).unwrap();
            for c in checks {
                assert_eq!(c.passed(), c.component != target, "{}", c.component);
            }
        }
    }

    #[test]
    fn toy_avoids_kinks() {
        let toy = toy_problem(3, ReconTap::Code).unwrap();
        let margin = toy
            .model
            .kink_margin(
                &toy.train,
                &toy.test,
                &toy_objective(false),
                Dropout::Fixed(&toy.masks.0),
                Dropout::Fixed(&toy.masks.1),
            )
            .unwrap();
        assert!(margin >= TOY_KINK_MARGIN);
        assert_eq!(toy.model.config.feat_dim, TOY_FEAT_DIM);
    }
}
