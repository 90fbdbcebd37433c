//! Training strategies and the epoch-level protocol.
//!
//! One driver runs all three topologies: plain SGD, synchronous
//! data-parallel SGD over simulated workers, and federated averaging.
//! Every epoch: freeze/thaw per the protocol, one seeded global shuffle of
//! the training set (identical across strategies), strategy-specific
//! updates, validation, report row. The best-validation-loss weights and
//! the final weights are written as checkpoints.
//!
//! Two execution modes with identical numerics: sequential (workers in
//! index order on one thread) and parallel (workers on scoped threads,
//! reduction still performed in worker-index order by the driver).
//! `threads == 0` selects sequential.

mod aggregate;
mod ledger;
mod report;
mod strategy;

pub use aggregate::{dsgd_aggregate, fedavg_aggregate};
pub use ledger::{CommLedger, BYTES_PER_PARAM};
pub use report::{EpochRow, TrainReport, REPORT_FILE, REPORT_HEADER};
pub use strategy::{StrategyConfig, StrategyKind};

use std::path::Path;

use crate::data::{split_indices, Manifest, Sample};
use crate::error::{Error, Result};
use crate::metrics::{confusion, Confusion};
use crate::model::{build_model, Model, UNetConfig};
use crate::optim::{lr_at_epoch, ScheduleConfig, Sgd, SgdConfig};
use crate::rng::{derive_seed, Xoshiro256pp};
use crate::tensor::{bce_dice_loss, Tensor};

const SALT_SPLIT: u64 = u64::MAX - 1;
const SALT_PARTITION: u64 = u64::MAX - 2;
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const LEDGER_FILE: &str = "ledger.json";

/// Everything a run needs besides the data and output directory.
#[derive(Clone, Copy, Debug)]
pub struct TrainSetup<'a> {
    pub model: &'a UNetConfig,
    pub strategy: &'a StrategyConfig,
    pub schedule: &'a ScheduleConfig,
    pub sgd: &'a SgdConfig,
    /// Fraction of samples held out for validation.
    pub val_fraction: f64,
    /// 0 = sequential deterministic mode; otherwise the cap on concurrent
    /// worker threads.
    pub threads: usize,
}

/// Stack the selected samples into one image batch and one mask batch.
pub fn batch_tensors(samples: &[Sample], idx: &[usize]) -> Result<(Tensor, Tensor)> {
    let images: Vec<&Tensor> = idx.iter().map(|&i| &samples[i].image).collect();
    let masks: Vec<&Tensor> = idx.iter().map(|&i| &samples[i].mask).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

/// Mean per-sample loss and pooled pixel confusion over the given subset.
pub fn evaluate(
    model: &mut Model,
    samples: &[Sample],
    idx: &[usize],
    batch: usize,
    threshold: f64,
) -> Result<(f64, Confusion)> {
    if idx.is_empty() {
        return Err(Error::InvalidData("empty evaluation set".to_string()));
    }
    let mut loss_sum = 0.0;
    let mut conf = Confusion::default();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, m) = batch_tensors(samples, chunk)?;
        let probs = model.forward(&x)?;
        let (loss, _) = bce_dice_loss(&probs, &m)?;
        loss_sum += loss * chunk.len() as f64;
        conf.merge(&confusion(&probs, &m, threshold)?);
    }
    Ok((loss_sum / idx.len() as f64, conf))
}

/// Run the items through `f`, either in index order on this thread
/// (`threads <= 1`) or on scoped threads in waves of at most `threads`.
/// `f` must be deterministic per item; the two modes then produce
/// identical results.
fn run_parallel<T: Send>(items: &mut [T], threads: usize, f: &(dyn Fn(usize, &mut T) + Sync)) {
    if threads <= 1 || items.len() <= 1 {
        for (i, item) in items.iter_mut().enumerate() {
            f(i, item);
        }
        return;
    }
    let wave = threads.min(items.len());
    let mut base = 0usize;
    for chunk in items.chunks_mut(wave) {
        std::thread::scope(|scope| {
            for (off, item) in chunk.iter_mut().enumerate() {
                scope.spawn(move || f(base + off, item));
            }
        });
        base += chunk.len();
    }
}

/// Strategy-specific per-epoch execution. `global_values` exposes the
/// parameters representing the current global model (for FedAvg, the
/// shard-weighted average of the live clients).
trait Engine {
    fn run_epoch(
        &mut self,
        epoch: usize,
        lr: f64,
        frozen: bool,
        order: &[usize],
        samples: &[Sample],
    ) -> Result<f64>;
    fn global_values(&self) -> Vec<Tensor>;
    fn into_final_model(self: Box<Self>) -> Model;
    fn ledger(&self) -> CommLedger;
    fn shard_sizes(&self) -> Vec<usize>;
}

// ---------------------------------------------------------------- SGD --

struct SgdEngine {
    model: Model,
    opt: Sgd,
    batch: usize,
}

impl Engine for SgdEngine {
    fn run_epoch(
        &mut self,
        _epoch: usize,
        lr: f64,
        frozen: bool,
        order: &[usize],
        samples: &[Sample],
    ) -> Result<f64> {
        self.model.set_backbone_frozen(frozen);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks_exact(self.batch) {
            let (x, m) = batch_tensors(samples, chunk)?;
            let probs = self.model.forward(&x)?;
            let (loss, dprobs) = bce_dice_loss(&probs, &m)?;
            self.model.backward(&dprobs)?;
            self.opt.step(self.model.params_mut(), lr)?;
            loss_sum += loss;
            steps += 1;
        }
        Ok(loss_sum / steps as f64)
    }

    fn global_values(&self) -> Vec<Tensor> {
        self.model.params().values_snapshot()
    }

    fn into_final_model(self: Box<Self>) -> Model {
        self.model
    }

    fn ledger(&self) -> CommLedger {
        CommLedger::default()
    }

    fn shard_sizes(&self) -> Vec<usize> {
        Vec::new()
    }
}

// --------------------------------------------------------------- DSGD --

struct WorkerSlot {
    model: Model,
    x: Option<Tensor>,
    m: Option<Tensor>,
    outcome: Result<f64>,
}

struct DsgdEngine {
    server: Model,
    opt: Sgd,
    workers: Vec<WorkerSlot>,
    batch: usize,
    micro: usize,
    threads: usize,
    ledger: CommLedger,
}

impl Engine for DsgdEngine {
    fn run_epoch(
        &mut self,
        _epoch: usize,
        lr: f64,
        frozen: bool,
        order: &[usize],
        samples: &[Sample],
    ) -> Result<f64> {
        self.server.set_backbone_frozen(frozen);
        for w in &mut self.workers {
            w.model.set_backbone_frozen(frozen);
        }
        let param_count = self.server.param_count() as u64;
        let n_workers = self.workers.len();
        let mut loss_sum = 0.0;
        let mut steps = 0usize;

        for chunk in order.chunks_exact(self.batch) {
            // broadcast current weights and hand out micro-batches
            let values = self.server.params().values_snapshot();
            for (k, w) in self.workers.iter_mut().enumerate() {
                w.model.params_mut().set_values(&values)?;
                let micro = &chunk[k * self.micro..(k + 1) * self.micro];
                let (x, m) = batch_tensors(samples, micro)?;
                w.x = Some(x);
                w.m = Some(m);
                w.outcome = Ok(0.0);
            }

            run_parallel(&mut self.workers, self.threads, &|_, w: &mut WorkerSlot| {
                w.outcome = (|| {
                    let x = w.x.take().expect("micro-batch assigned");
                    let m = w.m.take().expect("micro-batch assigned");
                    let probs = w.model.forward(&x)?;
                    let (loss, dprobs) = bce_dice_loss(&probs, &m)?;
                    w.model.backward(&dprobs)?;
                    Ok(loss)
                })();
            });

            let mut step_loss = 0.0;
            for w in &self.workers {
                match &w.outcome {
                    Ok(loss) => step_loss += loss / n_workers as f64,
                    Err(e) => return Err(Error::InvalidData(format!("worker failed: {e}"))),
                }
            }

            let stores: Vec<&crate::model::ParamStore> =
                self.workers.iter().map(|w| w.model.params()).collect();
            let sizes = vec![self.micro; n_workers];
            let combined = dsgd_aggregate(&stores, &sizes)?;
            self.server.params_mut().set_grads(&combined)?;
            self.opt.step(self.server.params_mut(), lr)?;
            for w in &mut self.workers {
                w.model.zero_grads();
            }
            self.ledger.record_sync(param_count, n_workers as u64);
            loss_sum += step_loss;
            steps += 1;
        }
        Ok(loss_sum / steps as f64)
    }

    fn global_values(&self) -> Vec<Tensor> {
        self.server.params().values_snapshot()
    }

    fn into_final_model(self: Box<Self>) -> Model {
        self.server
    }

    fn ledger(&self) -> CommLedger {
        self.ledger
    }

    fn shard_sizes(&self) -> Vec<usize> {
        vec![self.micro; self.workers.len()]
    }
}

// ------------------------------------------------------------- FedAvg --

struct ClientSlot {
    model: Model,
    opt: Sgd,
    order: Vec<usize>,
    lr: f64,
    batch: usize,
    outcome: Result<f64>,
}

struct FedAvgEngine {
    global: Model,
    clients: Vec<ClientSlot>,
    /// Owning client of each sample index.
    client_of: Vec<usize>,
    /// Training-shard size per client.
    sizes: Vec<usize>,
    local_epochs: usize,
    batch: usize,
    sgd_cfg: SgdConfig,
    threads: usize,
    ledger: CommLedger,
    /// Weighted average of the live client parameters after the last
    /// epoch; equals the broadcast weights at round boundaries.
    shadow: Vec<Tensor>,
}

impl FedAvgEngine {
    fn spawn_round_clients(&mut self) -> Result<()> {
        self.clients.clear();
        for _ in 0..self.sizes.len() {
            let model = self.global.clone();
            let opt = Sgd::new(self.sgd_cfg, model.params())?;
            self.clients.push(ClientSlot {
                model,
                opt,
                order: Vec::new(),
                lr: 0.0,
                batch: self.batch,
                outcome: Ok(0.0),
            });
        }
        Ok(())
    }
}

impl Engine for FedAvgEngine {
    fn run_epoch(
        &mut self,
        epoch: usize,
        lr: f64,
        frozen: bool,
        order: &[usize],
        samples: &[Sample],
    ) -> Result<f64> {
        let round_start = (epoch - 1) % self.local_epochs == 0;
        if round_start {
            self.spawn_round_clients()?; // broadcast + fresh local optimizer state
        }

        for c in &mut self.clients {
            c.model.set_backbone_frozen(frozen);
            c.order.clear();
            c.lr = lr;
        }
        for &i in order {
            self.clients[self.client_of[i]].order.push(i);
        }

        run_parallel(&mut self.clients, self.threads, &|_, c: &mut ClientSlot| {
            c.outcome = (|| {
                let mut loss_sum = 0.0;
                // every shard sample participates: the final short batch
                // is kept, unlike the fixed-size SGD/DSGD steps
                for chunk in c.order.chunks(c.batch) {
                    let (x, m) = batch_tensors(samples, chunk)?;
                    let probs = c.model.forward(&x)?;
                    let (loss, dprobs) = bce_dice_loss(&probs, &m)?;
                    c.model.backward(&dprobs)?;
                    c.opt.step(c.model.params_mut(), c.lr)?;
                    loss_sum += loss * chunk.len() as f64;
                }
                Ok(loss_sum / c.order.len() as f64)
            })();
        });

        let n_total: usize = self.sizes.iter().sum();
        let mut train_loss = 0.0;
        for (k, c) in self.clients.iter().enumerate() {
            match &c.outcome {
                Ok(loss) => train_loss += self.sizes[k] as f64 / n_total as f64 * loss,
                Err(e) => return Err(Error::InvalidData(format!("client {k} failed: {e}"))),
            }
        }

        let stores: Vec<&crate::model::ParamStore> =
            self.clients.iter().map(|c| c.model.params()).collect();
        self.shadow = fedavg_aggregate(&stores, &self.sizes)?;

        if epoch % self.local_epochs == 0 {
            // round boundary: the shadow average is the actual sync
            self.global.params_mut().set_values(&self.shadow)?;
            let param_count = self.global.param_count() as u64;
            self.ledger.record_sync(param_count, self.sizes.len() as u64);
        }
        Ok(train_loss)
    }

    fn global_values(&self) -> Vec<Tensor> {
        self.shadow.clone()
    }

    fn into_final_model(self: Box<Self>) -> Model {
        self.global
    }

    fn ledger(&self) -> CommLedger {
        self.ledger
    }

    fn shard_sizes(&self) -> Vec<usize> {
        self.sizes.clone()
    }
}

// ------------------------------------------------------------- driver --

fn validate_samples(samples: &[Sample], cfg: &UNetConfig) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        let sh = s.image.shape();
        if sh.h != cfg.input_size || sh.w != cfg.input_size || sh.c != cfg.in_channels {
            return Err(Error::shape(
                "train",
                format!(
                    "sample {i} is {}, model expects {}x{}x{}",
                    sh, cfg.in_channels, cfg.input_size, cfg.input_size
                ),
            ));
        }
    }
    Ok(())
}

/// Derive per-client ownership of all samples. The manifest's client
/// assignment is honored when it matches the requested client count;
/// otherwise the samples are re-partitioned IID with the run seed.
fn fedavg_ownership(manifest: &Manifest, clients: usize, seed: u64) -> Result<Vec<usize>> {
    if manifest.num_clients() == clients {
        Ok(manifest.entries().iter().map(|e| e.client).collect())
    } else {
        crate::data::partition(manifest.len(), clients, derive_seed(seed, SALT_PARTITION))
    }
}

/// Run the full training protocol and write `report.csv`, `ledger.json`,
/// `best.ckpt` and `last.ckpt` into `out_dir`.
pub fn train(setup: &TrainSetup, manifest: &Manifest, out_dir: &Path) -> Result<TrainReport> {
    train_full(setup, manifest, out_dir).map(|(report, _)| report)
}

/// [`train`], additionally handing back the final global model at full
/// precision (checkpoints are 32-bit).
pub fn train_full(
    setup: &TrainSetup,
    manifest: &Manifest,
    out_dir: &Path,
) -> Result<(TrainReport, Model)> {
    setup.model.validate()?;
    setup.strategy.validate()?;
    setup.schedule.validate()?;
    setup.sgd.validate()?;
    if setup.strategy.total_epochs > setup.schedule.total_epochs {
        return Err(Error::InvalidConfig(format!(
            "run of {} epochs exceeds schedule horizon {}",
            setup.strategy.total_epochs, setup.schedule.total_epochs
        )));
    }

    let samples = manifest.load_samples()?;
    validate_samples(&samples, setup.model)?;
    let seed = setup.strategy.seed;
    let (train_idx, val_idx) = split_indices(
        samples.len(),
        setup.val_fraction,
        derive_seed(seed, SALT_SPLIT),
    )?;

    let batch = setup.strategy.global_batch;
    let mut engine: Box<dyn Engine> = match setup.strategy.kind {
        StrategyKind::Sgd | StrategyKind::Dsgd { .. } => {
            if train_idx.len() / batch == 0 {
                return Err(Error::InvalidConfig(format!(
                    "global_batch {batch} exceeds training set size {}",
                    train_idx.len()
                )));
            }
            let model = build_model(setup.model)?;
            let opt = Sgd::new(*setup.sgd, model.params())?;
            match setup.strategy.kind {
                StrategyKind::Sgd => Box::new(SgdEngine { model, opt, batch }),
                StrategyKind::Dsgd { workers } => {
                    let slots = (0..workers)
                        .map(|_| WorkerSlot {
                            model: model.clone(),
                            x: None,
                            m: None,
                            outcome: Ok(0.0),
                        })
                        .collect();
                    Box::new(DsgdEngine {
                        server: model,
                        opt,
                        workers: slots,
                        batch,
                        micro: batch / workers,
                        threads: setup.threads,
                        ledger: CommLedger::default(),
                    })
                }
                StrategyKind::FedAvg { .. } => unreachable!(),
            }
        }
        StrategyKind::FedAvg {
            clients,
            local_epochs,
        } => {
            let client_of = fedavg_ownership(manifest, clients, seed)?;
            let mut sizes = vec![0usize; clients];
            for &i in &train_idx {
                sizes[client_of[i]] += 1;
            }
            if let Some(k) = sizes.iter().position(|&s| s == 0) {
                return Err(Error::InvalidConfig(format!(
                    "client {k} has no training samples after the validation split"
                )));
            }
            let global = build_model(setup.model)?;
            Box::new(FedAvgEngine {
                global,
                clients: Vec::new(),
                client_of,
                sizes,
                local_epochs,
                batch,
                sgd_cfg: *setup.sgd,
                threads: setup.threads,
                ledger: CommLedger::default(),
                shadow: Vec::new(),
            })
        }
    };

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut eval_model = build_model(setup.model)?;
    let mut rows = Vec::with_capacity(setup.strategy.total_epochs);
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut best_values: Vec<Tensor> = Vec::new();

    for epoch in 1..=setup.strategy.total_epochs {
        let frozen = epoch <= setup.strategy.freeze_epochs;
        let lr = lr_at_epoch(epoch, setup.schedule)?;
        let mut order = train_idx.clone();
        let mut rng = Xoshiro256pp::seeded(derive_seed(seed, epoch as u64));
        rng.shuffle(&mut order);

        let train_loss = engine.run_epoch(epoch, lr, frozen, &order, &samples)?;

        let values = engine.global_values();
        eval_model.params_mut().set_values(&values)?;
        let (val_loss, conf) = evaluate(&mut eval_model, &samples, &val_idx, batch, 0.5)?;
        let val_fscore = conf.f_score();

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_values = values;
        }
        rows.push(EpochRow {
            epoch,
            train_loss,
            val_loss,
            val_fscore,
            lr,
            bytes_cum: engine.ledger().total_bytes(),
        });
    }

    let ledger = engine.ledger();
    let shard_sizes = engine.shard_sizes();

    let best_path = out_dir.join(BEST_CKPT);
    eval_model.params_mut().set_values(&best_values)?;
    eval_model.save_checkpoint(&best_path)?;

    let final_model = engine.into_final_model();
    final_model.save_checkpoint(&out_dir.join(LAST_CKPT))?;

    let report = TrainReport {
        rows,
        best_epoch,
        best_checkpoint_path: best_path,
        ledger,
        shard_sizes,
    };
    report.write_csv(&out_dir.join(REPORT_FILE))?;
    ledger.write_json(&out_dir.join(LEDGER_FILE))?;
    Ok((report, final_model))
}
