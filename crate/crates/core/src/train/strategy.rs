//! Training-strategy configuration.

use crate::error::{Error, Result};

/// Which topology drives the updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyKind {
    /// Single worker, plain mini-batch SGD.
    Sgd,
    /// Synchronous data-parallel SGD: each worker takes
    /// `global_batch / workers` samples per step, gradients are averaged
    /// and one shared update is applied.
    Dsgd { workers: usize },
    /// Federated averaging: clients train `local_epochs` epochs on private
    /// shards between weight-averaging rounds.
    FedAvg { clients: usize, local_epochs: usize },
}

impl StrategyKind {
    pub fn label(&self) -> String {
        match self {
            StrategyKind::Sgd => "sgd".to_string(),
            StrategyKind::Dsgd { workers } => format!("dsgd{workers}"),
            StrategyKind::FedAvg {
                clients,
                local_epochs,
            } => format!("fedavg{clients}e{local_epochs}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub global_batch: usize,
    pub total_epochs: usize,
    /// Backbone parameters stay frozen for epochs `1..=freeze_epochs`.
    pub freeze_epochs: usize,
    pub seed: u64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::Sgd,
            global_batch: 8,
            total_epochs: 10,
            freeze_epochs: 5,
            seed: 0,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.global_batch < 1 {
            return Err(Error::InvalidConfig("global_batch must be >= 1".to_string()));
        }
        if self.total_epochs < 1 {
            return Err(Error::InvalidConfig("total_epochs must be >= 1".to_string()));
        }
        if self.freeze_epochs > self.total_epochs {
            return Err(Error::InvalidConfig(format!(
                "freeze_epochs {} exceeds total_epochs {}",
                self.freeze_epochs, self.total_epochs
            )));
        }
        match self.kind {
            StrategyKind::Sgd => {}
            StrategyKind::Dsgd { workers } => {
                if workers < 1 {
                    return Err(Error::InvalidConfig("workers must be >= 1".to_string()));
                }
                if self.global_batch % workers != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "global_batch {} not divisible by workers {}",
                        self.global_batch, workers
                    )));
                }
            }
            StrategyKind::FedAvg {
                clients,
                local_epochs,
            } => {
                if clients < 1 {
                    return Err(Error::InvalidConfig("clients must be >= 1".to_string()));
                }
                if local_epochs < 1 {
                    return Err(Error::InvalidConfig("local_epochs must be >= 1".to_string()));
                }
                if self.total_epochs % local_epochs != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "total_epochs {} not divisible by local_epochs {local_epochs} \
                         (one aggregation round spans local_epochs epochs)",
                        self.total_epochs
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dsgd_requires_divisible_batch() {
        let cfg = StrategyConfig {
            kind: StrategyKind::Dsgd { workers: 3 },
            global_batch: 8,
            ..StrategyConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fedavg_requires_round_alignment() {
        let cfg = StrategyConfig {
            kind: StrategyKind::FedAvg {
                clients: 4,
                local_epochs: 3,
            },
            total_epochs: 10,
            ..StrategyConfig::default()
        };
        assert!(cfg.validate().is_err());
        let ok = StrategyConfig {
            kind: StrategyKind::FedAvg {
                clients: 4,
                local_epochs: 5,
            },
            total_epochs: 10,
            ..StrategyConfig::default()
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn labels_are_stable() {
        assert_eq!(StrategyKind::Sgd.label(), "sgd");
        assert_eq!(StrategyKind::Dsgd { workers: 4 }.label(), "dsgd4");
        assert_eq!(
            StrategyKind::FedAvg {
                clients: 4,
                local_epochs: 5
            }
            .label(),
            "fedavg4e5"
        );
    }
}
