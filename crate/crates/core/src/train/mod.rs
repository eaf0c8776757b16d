//! Training of the ReLU, gated and linearly gated networks on small
//! classification datasets: softmax cross-entropy, SGD with momentum and
//! Adam, and the gate regimes (fixed random, fixed learnt, standalone,
//! linear feature network, shallow features).

mod loss;
mod optim;

pub use loss::{argmax, loss_softmax_ce};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerState, Schedule};

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{
    grad_with, ArchSpec, FeatureKind, GateMode, GateRouting, Network, ParamSet, ParamSubset,
};
use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::numerics::{InitScheme, RngState, RNG_ALGORITHM};

/// Which networks exist, where gates come from and what is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    /// Plain ReLU network.
    Dnn,
    /// Random ReLU feature network, frozen; value network trained.
    DgnFr,
    /// Feature network first trained as a classifier on its own output,
    /// then frozen; value network trained.
    DgnFl,
    /// Feature and value networks trained jointly through soft gates.
    DgnStandalone,
    /// Deep linear feature network, trained jointly.
    Dlgn,
    /// One shallow linear feature map per gated layer, trained jointly.
    DlgnSf,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::Dnn,
        Regime::DgnFr,
        Regime::DgnFl,
        Regime::DgnStandalone,
        Regime::Dlgn,
        Regime::DlgnSf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Dnn => "DNN",
            Regime::DgnFr => "DGN_FR",
            Regime::DgnFl => "DGN_FL",
            Regime::DgnStandalone => "DGN_STANDALONE",
            Regime::Dlgn => "DLGN",
            Regime::DlgnSf => "DLGN_SF",
        }
    }

    fn default_mode(self) -> GateMode {
        match self {
            Regime::Dnn | Regime::DgnFr | Regime::DgnFl => GateMode::Hard,
            _ => GateMode::Soft,
        }
    }

    fn feature_kind(self) -> Option<FeatureKind> {
        match self {
            Regime::Dnn => None,
            Regime::DgnFr | Regime::DgnFl | Regime::DgnStandalone => Some(FeatureKind::Relu),
            Regime::Dlgn => Some(FeatureKind::Linear),
            Regime::DlgnSf => Some(FeatureKind::Shallow),
        }
    }

    /// Whether the feature network is updated during the main phase.
    pub fn trains_feature(self) -> bool {
        matches!(self, Regime::DgnStandalone | Regime::Dlgn | Regime::DlgnSf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: ArchSpec,
    pub regime: Regime,
    /// Value layer `l` takes its gates from feature layer `routing[l]`;
    /// empty means identity.
    #[serde(default)]
    pub routing: Vec<usize>,
    /// Feed a constant all-ones vector to the value network.
    #[serde(default)]
    pub const_one: bool,
    /// Overrides the regime's gate mode (DLGN variants only).
    #[serde(default)]
    pub gate_mode: Option<GateMode>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Feature-network pre-training epochs (DGN_FL); defaults to `epochs`.
    #[serde(default)]
    pub pretrain_epochs: Option<usize>,
    #[serde(default)]
    pub init: InitScheme,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    32
}

impl TrainConfig {
    pub fn new(arch: ArchSpec, regime: Regime) -> Self {
        Self {
            arch,
            regime,
            routing: Vec::new(),
            const_one: false,
            gate_mode: None,
            optimizer: OptimizerConfig::default(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            pretrain_epochs: None,
            init: InitScheme::default(),
            seed: 0,
        }
    }

    pub fn gate_mode(&self) -> GateMode {
        self.gate_mode.unwrap_or(self.regime.default_mode())
    }

    pub fn gate_routing(&self) -> GateRouting {
        GateRouting::permuted(self.routing.clone()).with_const_one(self.const_one)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.optimizer.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        match self.regime {
            Regime::Dnn => {
                if !self.routing.is_empty() || self.const_one || self.gate_mode.is_some() {
                    return Err(Error::Config(
                        "a plain ReLU network has no gate routing, constant-1 input or gate mode"
                            .into(),
                    ));
                }
            }
            Regime::DgnFr | Regime::DgnFl | Regime::DgnStandalone => {
                if self
                    .gate_mode
                    .is_some_and(|m| m != self.regime.default_mode())
                {
                    return Err(Error::Config(format!(
                        "{} uses {:?} gates",
                        self.regime.name(),
                        self.regime.default_mode()
                    )));
                }
            }
            Regime::Dlgn | Regime::DlgnSf => {}
        }
        self.gate_routing().validate(&self.arch)
    }
}

/// Parameters of a (possibly partially) trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub feature: Option<ParamSet>,
    pub value: ParamSet,
}

impl TrainedModel {
    /// Fresh parameters from `config.seed`: feature network first, then
    /// value network.
    pub fn init(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = RngState::new(config.seed);
        let arch = &config.arch;
        let feature = match config.regime.feature_kind() {
            None => None,
            Some(FeatureKind::Shallow) => {
                Some(ParamSet::init_shallow(arch, config.init, &mut rng)?)
            }
            Some(_) => Some(ParamSet::init(arch, config.init, &mut rng)?),
        };
        let value = ParamSet::init(arch, config.init, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            feature,
            value,
        })
    }

    pub fn network<'a>(&'a self, routing: &'a GateRouting) -> Network<'a> {
        let arch = &self.config.arch;
        match (&self.feature, self.config.regime.feature_kind()) {
            (Some(feature), Some(kind)) => Network::Gated {
                arch,
                feature,
                value: &self.value,
                kind,
                mode: self.config.gate_mode(),
                routing,
            },
            _ => Network::Relu {
                arch,
                params: &self.value,
            },
        }
    }

    /// Logits for `x` under the model's own routing.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let routing = self.config.gate_routing();
        self.network(&routing).outputs(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    /// Feature network alone, scored on its own output head.
    Pretrain,
    Main,
}

fn trainable(model: &TrainedModel, phase: Phase) -> (bool, bool) {
    match phase {
        Phase::Pretrain => (true, false),
        Phase::Main => (model.config.regime.trains_feature(), true),
    }
}

fn get_flat(model: &TrainedModel, phase: Phase) -> Vec<f64> {
    let (f, v) = trainable(model, phase);
    let mut out = Vec::new();
    if f {
        out.extend(
            model
                .feature
                .as_ref()
                .map(ParamSet::flat)
                .unwrap_or_default(),
        );
    }
    if v {
        out.extend(model.value.flat());
    }
    out
}

fn set_flat(model: &mut TrainedModel, phase: Phase, flat: &[f64]) -> Result<()> {
    let (f, v) = trainable(model, phase);
    let mut start = 0;
    if f {
        if let Some(feature) = model.feature.as_mut() {
            let n = feature.num_params();
            feature.set_flat(&flat[..n])?;
            start = n;
        }
    }
    if v {
        model.value.set_flat(&flat[start..])?;
    }
    Ok(())
}

/// Per-epoch curves of one phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub test_accuracy: Option<Vec<f64>>,
}

fn run_phase(
    model: &mut TrainedModel,
    phase: Phase,
    epochs: usize,
    train: &Dataset,
    test: Option<&Dataset>,
    rng: &mut RngState,
) -> Result<Curves> {
    let cfg = model.config.clone();
    let routing = cfg.gate_routing();
    let n = train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut opt = OptimizerState::new(
        cfg.optimizer.clone(),
        get_flat(model, phase).len(),
        epochs * steps_per_epoch,
    )?;
    let mut curves = Curves {
        test_accuracy: test.map(|_| Vec::new()),
        ..Curves::default()
    };
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_sum: Vec<f64> = Vec::new();
            {
                let net = match phase {
                    Phase::Pretrain => Network::Relu {
                        arch: &cfg.arch,
                        params: model
                            .feature
                            .as_ref()
                            .expect("pre-training needs a feature network"),
                    },
                    Phase::Main => model.network(&routing),
                };
                let subset = match (phase, cfg.regime.trains_feature()) {
                    (Phase::Main, true) => ParamSubset::All,
                    _ => ParamSubset::Value,
                };
                for &i in batch {
                    let (xf, xv) = net.inputs(&train.inputs[i]);
                    let label = train.labels[i];
                    let ((loss, hit), g) = grad_with(&net, subset, &xf, &xv, |out| {
                        let (loss, seed) = loss_softmax_ce(out, label)?;
                        Ok((seed, (loss, argmax(out) == label)))
                    })?;
                    loss_sum += loss;
                    correct += hit as usize;
                    if grad_sum.is_empty() {
                        grad_sum = g.values;
                    } else {
                        grad_sum
                            .iter_mut()
                            .zip(&g.values)
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad_sum.iter_mut().for_each(|g| *g *= scale);
            let mut flat = get_flat(model, phase);
            optimizer_step(&mut opt, &mut flat, &grad_sum)?;
            set_flat(model, phase, &flat)?;
        }
        curves.loss.push(loss_sum / n as f64);
        curves.train_accuracy.push(correct as f64 / n as f64);
        if let (Some(t), Some(acc)) = (test, curves.test_accuracy.as_mut()) {
            acc.push(match phase {
                Phase::Pretrain => accuracy_of(
                    &Network::Relu {
                        arch: &cfg.arch,
                        params: model.feature.as_ref().expect("feature network"),
                    },
                    t,
                )?,
                Phase::Main => evaluate(model, t)?,
            });
        }
        log::debug!(
            "{} {:?} epoch {}: loss {:.4}",
            cfg.regime.name(),
            phase,
            curves.loss.len(),
            curves.loss.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(curves)
}

/// Machine-readable record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub regime: Regime,
    pub seed: u64,
    pub rng: String,
    pub config: TrainConfig,
    pub dataset: String,
    /// Mean training loss before the first update.
    pub initial_loss: f64,
    pub curves: Curves,
    /// Feature-network pre-training curves (DGN_FL).
    pub pretrain: Option<Curves>,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: Option<f64>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub model: TrainedModel,
}

/// Trains a freshly initialised model.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
) -> Result<TrainOutcome> {
    train_from(TrainedModel::init(config)?, train_set, test_set)
}

/// Trains starting from the given parameters.
pub fn train_from(
    mut model: TrainedModel,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let cfg = model.config.clone();
    cfg.validate()?;
    for d in std::iter::once(train_set).chain(test_set) {
        if d.d_in() != cfg.arch.d_in {
            return Err(Error::DimensionMismatch {
                context: "dataset width vs d_in",
                expected: cfg.arch.d_in,
                actual: d.d_in(),
            });
        }
        if d.classes > cfg.arch.heads {
            return Err(Error::Config(format!(
                "{} classes need as many output heads, architecture has {}",
                d.classes, cfg.arch.heads
            )));
        }
    }
    let net_check = cfg.gate_routing();
    model.network(&net_check).validate()?;
    // separate stream for batch order so initialisation draws stay fixed
    let mut rng = RngState::stream(cfg.seed, 1);
    let initial_loss = mean_loss(&model, train_set)?;
    let pretrain = if cfg.regime == Regime::DgnFl {
        let epochs = cfg.pretrain_epochs.unwrap_or(cfg.epochs);
        Some(run_phase(
            &mut model,
            Phase::Pretrain,
            epochs,
            train_set,
            test_set,
            &mut rng,
        )?)
    } else {
        None
    };
    let curves = run_phase(
        &mut model,
        Phase::Main,
        cfg.epochs,
        train_set,
        test_set,
        &mut rng,
    )?;
    let final_train_accuracy = evaluate(&model, train_set)?;
    let final_test_accuracy = test_set.map(|t| evaluate(&model, t)).transpose()?;
    let report = TrainReport {
        regime: cfg.regime,
        seed: cfg.seed,
        rng: RNG_ALGORITHM.to_string(),
        config: cfg,
        dataset: train_set.provenance.clone(),
        initial_loss,
        curves,
        pretrain,
        final_train_accuracy,
        final_test_accuracy,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { report, model })
}

fn mean_loss(model: &TrainedModel, data: &Dataset) -> Result<f64> {
    let routing = model.config.gate_routing();
    let net = model.network(&routing);
    let losses = data
        .inputs
        .par_iter()
        .zip(&data.labels)
        .map(|(x, &y)| Ok(loss_softmax_ce(&net.outputs(x)?, y)?.0))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

fn accuracy_of(net: &Network<'_>, data: &Dataset) -> Result<f64> {
    let hits = data
        .inputs
        .par_iter()
        .zip(&data.labels)
        .map(|(x, &y)| Ok((argmax(&net.outputs(x)?) == y) as usize))
        .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
}

/// Fraction of `data` whose arg-max head matches the label, under the
/// model's own routing.
pub fn evaluate(model: &TrainedModel, data: &Dataset) -> Result<f64> {
    evaluate_with_routing(model, data, &model.config.gate_routing())
}

/// Accuracy with a different gate routing than the model was trained with.
pub fn evaluate_with_routing(
    model: &TrainedModel,
    data: &Dataset,
    routing: &GateRouting,
) -> Result<f64> {
    let net = model.network(routing);
    net.validate()?;
    accuracy_of(&net, data)
}
