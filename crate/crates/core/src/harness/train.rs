//! The training loop and the experiment driver.

use std::fs::File;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::arch::parse_architecture;
use super::config::{DatasetKind, ExperimentConfig, OptimizerKind, Precision, WhitenChoice};
use super::eval::evaluate_split;
use super::schedule::{freeze_schedule_step, FreezeSchedule};
use crate::credit::{
    compute_loss, init_feedback, output_error_from_logits, Credit, CreditAssignment, Method,
    UpdateDirections,
};
use crate::data::{
    load_cifar_dir, load_mnist_dir, whiten_apply, whiten_fit, CifarVariant, Dataset, ZCA_EPSILON,
};
use crate::diagnose::{measure_alignment, AlignmentRecord, AlignmentWriter};
use crate::error::{Error, Result};
use crate::model::checkpoint::save_checkpoint;
use crate::model::{
    forward, forward_with_dropout, init_network, ForwardTrace, Geometry, Network, Shape,
};
use crate::optim::{rmsprop_step, sgd_step, RmsConfig, RmsState};
use crate::regularize::{fast_sign_adversarial, DropoutSpec};
use crate::tensor::{Matrix, Real, SeededRng, StreamLabel};

/// Train, optional validation and test splits, already preprocessed.
#[derive(Debug, Clone)]
pub struct ExperimentData<T: Real = f64> {
    pub input_shape: Shape,
    pub train: Dataset<T>,
    pub validation: Option<Dataset<T>>,
    pub test: Dataset<T>,
}

/// Loads the configured dataset, applies the training subset and the
/// validation hold-out, and unit-scales the bytes. Whitening happens in
/// [`Trainer::new`] once the architecture is known.
pub fn load_data<T: Real>(cfg: &ExperimentConfig) -> Result<ExperimentData<T>> {
    let dir = cfg.data_dir();
    let (train, test, shape) = match cfg.dataset {
        DatasetKind::Mnist => {
            let (tr, te) = load_mnist_dir(&dir)?;
            (tr, te, Shape::new(1, 28, 28))
        }
        DatasetKind::Cifar10 | DatasetKind::Cifar100 => {
            let v = if cfg.dataset == DatasetKind::Cifar10 {
                CifarVariant::Cifar10
            } else {
                CifarVariant::Cifar100
            };
            let (tr, te) = load_cifar_dir(&dir, v)?;
            (tr, te, Shape::new(3, 32, 32))
        }
    };
    let mut train = Dataset::from_raw(&train)?;
    if cfg.train_subset > 0 {
        train = train.take_first(cfg.train_subset);
    }
    let (train, validation) = if cfg.validation_size > 0 {
        let (a, b) = train.split_tail(cfg.validation_size)?;
        (a, Some(b))
    } else {
        (train, None)
    };
    Ok(ExperimentData {
        input_shape: shape,
        train,
        validation,
        test: Dataset::from_raw(&test)?,
    })
}

/// Whitens every split with a transform fitted on the training split when
/// the config asks for it (by default: exactly for convolutional networks).
pub fn prepare_inputs<T: Real>(
    cfg: &ExperimentConfig,
    net: &Network<T>,
    data: &mut ExperimentData<T>,
) -> Result<()> {
    let whiten = match cfg.whiten {
        WhitenChoice::On => true,
        WhitenChoice::Off => false,
        WhitenChoice::Auto => has_conv(net),
    };
    if !whiten {
        return Ok(());
    }
    if cfg.adversarial {
        return Err(Error::Config(
            "adversarial examples need unit-scaled inputs".into(),
        ));
    }
    let zca = whiten_fit(&data.train.inputs, ZCA_EPSILON)?;
    let apply = |d: Dataset<T>| -> Result<Dataset<T>> {
        let x = whiten_apply(&zca, &d.inputs)?;
        d.map_inputs(x)
    };
    let ExperimentData {
        input_shape,
        train,
        validation,
        test,
    } = std::mem::replace(
        data,
        ExperimentData {
            input_shape: data.input_shape,
            train: data.train.take_first(0),
            validation: None,
            test: data.test.take_first(0),
        },
    );
    *data = ExperimentData {
        input_shape,
        train: apply(train)?,
        validation: validation.map(apply).transpose()?,
        test: apply(test)?,
    };
    Ok(())
}

/// One row of `epochs.csv`. Epoch 0 describes the initial network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_error: f64,
    /// NaN when the test split was not evaluated this epoch.
    pub test_error: f64,
    /// NaN without a validation split.
    pub validation_error: f64,
    /// Mean training loss from the dedicated evaluation pass.
    pub loss: f64,
    pub lr: f64,
    /// Seconds since training started; 0 in deterministic mode.
    pub wall_time: f64,
    /// Prefix of the checksum over all hidden-layer parameters.
    pub hidden_checksum: String,
}

/// What a per-batch observer sees.
pub struct BatchView<'a, T: Real> {
    /// 1-based epoch being trained.
    pub epoch: usize,
    pub batch: usize,
    pub indices: &'a [usize],
    pub trace: &'a ForwardTrace<T>,
    pub error: &'a Matrix<T>,
    pub update: &'a UpdateDirections<T>,
}

enum Optimizer<T: Real> {
    Rms(RmsState<T>),
    Sgd(f64),
}

impl<T: Real> Optimizer<T> {
    fn lr(&self) -> f64 {
        match self {
            Optimizer::Rms(s) => s.lr(),
            Optimizer::Sgd(lr) => *lr,
        }
    }

    fn decay(&mut self, f: f64) {
        match self {
            Optimizer::Rms(s) => s.decay_lr(f),
            Optimizer::Sgd(lr) => *lr *= f,
        }
    }
}

fn has_conv<T: Real>(net: &Network<T>) -> bool {
    net.layers()
        .iter()
        .any(|l| matches!(l.geometry(), Geometry::Conv(_)))
}

/// Runs epochs of one experiment in memory.
pub struct Trainer<T: Real = f64> {
    cfg: ExperimentConfig,
    data: ExperimentData<T>,
    net: Network<T>,
    credit: Credit<T>,
    switch: Option<Credit<T>>,
    optimizer: Optimizer<T>,
    schedule: FreezeSchedule,
    dropout: Option<DropoutSpec>,
    shuffle_rng: SeededRng,
    dropout_rng: SeededRng,
    epochs_completed: usize,
    started: Instant,
    alignment: Vec<AlignmentRecord>,
    alignment_flat: Vec<AlignmentRecord>,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: &ExperimentConfig, mut data: ExperimentData<T>) -> Result<Self> {
        cfg.validate()?;
        if data.train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let spec = parse_architecture(&cfg.architecture, data.input_shape, data.train.classes())?;
        let scheme = cfg.init_scheme(spec.uses_relu());
        let net: Network<T> = init_network(
            &spec,
            scheme,
            &mut SeededRng::new(cfg.seed, StreamLabel::Init),
        )?;
        if data.train.features() != net.input_dim() {
            return Err(Error::Config(format!(
                "dataset has {} features, network expects {}",
                data.train.features(),
                net.input_dim()
            )));
        }

        prepare_inputs(cfg, &net, &mut data)?;

        let mut fb_rng = SeededRng::new(cfg.seed, StreamLabel::Feedback);
        let credit = Credit::new(cfg.method, &net, &mut fb_rng, cfg.shared_feedback)?;
        let switch = if cfg.direct_layers.is_empty() {
            None
        } else {
            for &l in &cfg.direct_layers {
                if l >= net.hidden_len() {
                    return Err(Error::Config(format!(
                        "direct layer {l} is not a hidden layer"
                    )));
                }
            }
            let fb = init_feedback(Method::Dfa, &net, &mut fb_rng, false)?;
            Some(Credit::bp_with_direct(fb, cfg.direct_layers.clone()))
        };
        let optimizer = match cfg.optimizer {
            OptimizerKind::Rmsprop => Optimizer::Rms(RmsState::new(
                &net,
                RmsConfig {
                    lr: cfg.learning_rate,
                    rho: cfg.rms_decay,
                    epsilon: cfg.rms_epsilon,
                },
            )?),
            OptimizerKind::Sgd => Optimizer::Sgd(cfg.learning_rate),
        };
        let schedule = FreezeSchedule::new(&cfg.freeze_layers, cfg.freeze_until_epoch);
        let mut net = net;
        freeze_schedule_step(&mut net, &schedule, 0)?;
        let dropout = if cfg.dropout_input > 0.0 || cfg.dropout_hidden > 0.0 {
            Some(DropoutSpec::new(cfg.dropout_input, cfg.dropout_hidden)?)
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            data,
            net,
            credit,
            switch,
            optimizer,
            schedule,
            dropout,
            shuffle_rng: SeededRng::new(cfg.seed, StreamLabel::Shuffle),
            dropout_rng: SeededRng::new(cfg.seed, StreamLabel::Dropout),
            epochs_completed: 0,
            started: Instant::now(),
            alignment: Vec::new(),
            alignment_flat: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn net(&self) -> &Network<T> {
        &self.net
    }

    pub fn data(&self) -> &ExperimentData<T> {
        &self.data
    }

    pub fn credit(&self) -> &Credit<T> {
        self.active_credit()
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    pub fn lr(&self) -> f64 {
        self.optimizer.lr()
    }

    fn active_credit(&self) -> &Credit<T> {
        match &self.switch {
            Some(c) if self.epochs_completed >= self.cfg.direct_from_epoch => c,
            _ => &self.credit,
        }
    }

    /// Alignment records gathered since the last call: per-sample means
    /// and batch-flattened values.
    pub fn take_alignment(&mut self) -> (Vec<AlignmentRecord>, Vec<AlignmentRecord>) {
        (
            std::mem::take(&mut self.alignment),
            std::mem::take(&mut self.alignment_flat),
        )
    }

    /// Dedicated evaluation pass, dropout off.
    pub fn report(&self, with_test: bool) -> Result<EpochReport> {
        let train = evaluate_split(&self.net, &self.data.train.inputs, &self.data.train.targets)?;
        let test_error = if with_test {
            evaluate_split(&self.net, &self.data.test.inputs, &self.data.test.targets)?.error_pct
        } else {
            f64::NAN
        };
        let validation_error = match &self.data.validation {
            Some(v) => evaluate_split(&self.net, &v.inputs, &v.targets)?.error_pct,
            None => f64::NAN,
        };
        let wall_time = if self.cfg.deterministic {
            0.0
        } else {
            self.started.elapsed().as_secs_f64()
        };
        Ok(EpochReport {
            epoch: self.epochs_completed,
            train_error: train.error_pct,
            test_error,
            validation_error,
            loss: train.loss,
            lr: self.optimizer.lr(),
            wall_time,
            hidden_checksum: self.net.hidden_checksum()[..16].to_string(),
        })
    }

    fn batch_update(
        &mut self,
        x: &Matrix<T>,
        y: &Matrix<T>,
    ) -> Result<(ForwardTrace<T>, Matrix<T>, UpdateDirections<T>, f64)> {
        let trace = match &self.dropout {
            Some(d) => forward_with_dropout(&self.net, x, d, &mut self.dropout_rng)?,
            None => forward(&self.net, x)?,
        };
        let loss = compute_loss(trace.prediction(), y)?;
        let e = output_error_from_logits(trace.logits(), y)?;
        let upd = self.active_credit().backward(&self.net, &trace, &e)?;
        Ok((trace, e, upd, loss))
    }

    /// Trains one epoch and evaluates.
    pub fn run_epoch(&mut self) -> Result<EpochReport> {
        self.run_epoch_with(&mut |_| {})
    }

    /// As [`Trainer::run_epoch`], calling `hook` after every batch's credit
    /// assignment and before the parameter step.
    pub fn run_epoch_with(
        &mut self,
        hook: &mut dyn FnMut(&BatchView<'_, T>),
    ) -> Result<EpochReport> {
        let epoch = self.epochs_completed + 1;
        freeze_schedule_step(&mut self.net, &self.schedule, self.epochs_completed)?;
        let n = self.data.train.len();
        let mut order: Vec<usize> = (0..n).collect();
        self.shuffle_rng.shuffle(&mut order);
        let half = T::from_f64(0.5);
        for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let (x, y) = self.data.train.batch(idx);
            let x_adv = if self.cfg.adversarial {
                Some(fast_sign_adversarial(
                    &self.net,
                    &x,
                    &y,
                    self.cfg.adv_epsilon,
                )?)
            } else {
                None
            };
            let (trace, e, mut upd, loss) = self.batch_update(&x, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            if self.cfg.diag_cadence > 0 && b % self.cfg.diag_cadence == 0 {
                let snap = measure_alignment(&self.net, &trace, &upd, epoch, b)?;
                self.alignment.extend(snap.per_sample);
                self.alignment_flat.extend(snap.flattened);
            }
            hook(&BatchView {
                epoch,
                batch: b,
                indices: idx,
                trace: &trace,
                error: &e,
                update: &upd,
            });
            if let Some(xa) = x_adv {
                let (_, _, adv, adv_loss) = self.batch_update(&xa, &y)?;
                if !adv_loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b,
                        loss: adv_loss,
                    });
                }
                upd.scale_grads(half);
                let mut adv = adv;
                adv.scale_grads(half);
                upd.accumulate(&adv)?;
            }
            match &mut self.optimizer {
                Optimizer::Rms(s) => rmsprop_step(s, &mut self.net, &upd)?,
                Optimizer::Sgd(lr) => sgd_step(&mut self.net, &upd, *lr)?,
            }
        }
        self.epochs_completed = epoch;
        let with_test = self.cfg.test_every_epoch || epoch >= self.cfg.max_epochs;
        let report = self.report(with_test)?;
        if !report.loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: order.len().div_ceil(self.cfg.batch_size),
                loss: report.loss,
            });
        }
        self.optimizer.decay(self.cfg.lr_decay);
        Ok(report)
    }

    /// True once the stopping rule holds for `report`.
    pub fn should_stop(&self, report: &EpochReport) -> bool {
        report.train_error <= self.cfg.stop_train_error || report.epoch >= self.cfg.max_epochs
    }
}

/// Outcome of a complete run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub reports: Vec<EpochReport>,
    pub out_dir: PathBuf,
    /// Network parameters after the last epoch.
    pub final_checksum: String,
}

impl RunSummary {
    pub fn last(&self) -> &EpochReport {
        self.reports.last().expect("at least the initial report")
    }
}

struct Outputs {
    epochs: csv::Writer<File>,
    alignment: Option<(AlignmentWriter, AlignmentWriter)>,
}

/// Trains until the stopping rule, writing `config.toml`, `epochs.csv`,
/// `alignment.csv`, `alignment_flat.csv` and `model.fbal` to the output
/// directory as it goes. On divergence the files written so far are kept.
pub fn run_with_data<T: Real>(
    cfg: &ExperimentConfig,
    data: ExperimentData<T>,
) -> Result<RunSummary> {
    cfg.validate()?;
    let out_dir = cfg.out_dir();
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.resolved_toml()?)?;
    let mut trainer = Trainer::new(cfg, data)?;
    let mut out = Outputs {
        epochs: csv::Writer::from_path(out_dir.join("epochs.csv"))?,
        alignment: if cfg.diag_cadence > 0 {
            Some((
                AlignmentWriter::create(&out_dir.join("alignment.csv"))?,
                AlignmentWriter::create(&out_dir.join("alignment_flat.csv"))?,
            ))
        } else {
            None
        },
    };
    let initial = trainer.report(cfg.test_every_epoch)?;
    out.epochs.serialize(&initial)?;
    out.epochs.flush()?;
    let mut reports = vec![initial];
    log::info!(
        "{}: {} {} on {} samples, {} parameters",
        cfg.name,
        cfg.method,
        cfg.architecture,
        trainer.data().train.len(),
        trainer.net().param_count()
    );
    let mut stop = cfg.max_epochs == 0;
    while !stop {
        let result = trainer.run_epoch();
        let (per, flat) = trainer.take_alignment();
        if let Some((a, b)) = out.alignment.as_mut() {
            a.write(&per)?;
            b.write(&flat)?;
        }
        let report = match result {
            Ok(r) => r,
            Err(e) => {
                log::error!("{}: aborted: {e}", cfg.name);
                return Err(e);
            }
        };
        log::info!(
            "{} epoch {}: train {:.3}% test {:.3}% loss {:.5}",
            cfg.name,
            report.epoch,
            report.train_error,
            report.test_error,
            report.loss
        );
        out.epochs.serialize(&report)?;
        out.epochs.flush()?;
        stop = trainer.should_stop(&report);
        reports.push(report);
    }
    if !cfg.test_every_epoch {
        // make sure the final row carries a test error
        let last = reports.last_mut().expect("initial report");
        if last.test_error.is_nan() {
            last.test_error = trainer.report(true)?.test_error;
        }
    }
    if cfg.save_checkpoint {
        save_checkpoint(trainer.net(), &out_dir.join("model.fbal"))?;
    }
    Ok(RunSummary {
        reports,
        out_dir,
        final_checksum: trainer.net().checksum(),
    })
}

/// Loads the data named by the config and runs it at the configured precision.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F64 => run_with_data(cfg, load_data::<f64>(cfg)?),
        Precision::F32 => run_with_data(cfg, load_data::<f32>(cfg)?),
    }
}
