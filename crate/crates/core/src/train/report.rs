//! Per-epoch training report and its CSV form.

use std::path::{Path, PathBuf};

use super::ledger::CommLedger;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_fscore: f64,
    pub lr: f64,
    /// Cumulative communicated bytes at the end of this epoch.
    pub bytes_cum: u64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    /// 1-based epoch with the lowest validation loss (earliest on ties).
    pub best_epoch: usize,
    pub best_checkpoint_path: PathBuf,
    pub ledger: CommLedger,
    /// Per-client training-shard sizes (FedAvg); one entry per worker
    /// otherwise.
    pub shard_sizes: Vec<usize>,
}

pub const REPORT_FILE: &str = "report.csv";
pub const REPORT_HEADER: &str = "epoch,train_loss,val_loss,val_fscore,lr,bytes_cum";

impl TrainReport {
    /// Write rows as CSV. Floats use Rust's shortest round-trip notation,
    /// so identical runs produce identical bytes.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from(REPORT_HEADER);
        text.push('\n');
        for r in &self.rows {
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.val_fscore, r.lr, r.bytes_cum
            ));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
