//! Exact communication accounting.
//!
//! Cost model: 4 bytes per parameter on the wire (32-bit), uplink carries
//! gradients or weights, downlink the broadcast of equal size, no
//! compression. Counters only ever grow.

use std::path::Path;

use crate::error::{Error, Result};

pub const BYTES_PER_PARAM: u64 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommLedger {
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub sync_events: u64,
}

impl CommLedger {
    /// Record one synchronization barrier in which `parties` each upload
    /// and receive a full `param_count`-parameter payload.
    pub fn record_sync(&mut self, param_count: u64, parties: u64) {
        self.bytes_up += parties * BYTES_PER_PARAM * param_count;
        self.bytes_down += parties * BYTES_PER_PARAM * param_count;
        self.sync_events += 1;
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_up + self.bytes_down
    }

    /// Write the ledger as a small JSON object.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = format!(
            "{{\"bytes_up\":{},\"bytes_down\":{},\"sync_events\":{}}}\n",
            self.bytes_up, self.bytes_down, self.sync_events
        );
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dsgd_byte_formula() {
        // P=1000 params, 10 steps, 4 workers -> 2*1000*4*4*10 = 320,000
        let mut ledger = CommLedger::default();
        for _ in 0..10 {
            ledger.record_sync(1000, 4);
        }
        assert_eq!(ledger.total_bytes(), 320_000);
        assert_eq!(ledger.sync_events, 10);
    }

    #[test]
    fn counters_are_monotone() {
        let mut ledger = CommLedger::default();
        let mut prev = (0, 0, 0);
        for _ in 0..5 {
            ledger.record_sync(17, 3);
            let now = (ledger.bytes_up, ledger.bytes_down, ledger.sync_events);
            assert!(now.0 > prev.0 && now.1 > prev.1 && now.2 > prev.2);
            prev = now;
        }
    }
}
