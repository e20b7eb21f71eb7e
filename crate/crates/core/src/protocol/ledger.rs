use super::{ProtocolError, Result};

/// Last and penultimate exchange times of every worker.
///
/// At logical time `t` the delay of worker `i` is `t − last_i` and the double
/// delay is `t − prev_i`. Before any update both times are 0, the instant at
/// which the master broadcast the starting point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayLedger {
    last: Vec<u64>,
    prev: Vec<u64>,
    now: u64,
}

impl DelayLedger {
    pub fn new(n: usize) -> Self {
        Self {
            last: vec![0; n],
            prev: vec![0; n],
            now: 0,
        }
    }

    pub fn n_workers(&self) -> usize {
        self.last.len()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn last_update(&self, worker: usize) -> u64 {
        self.last[worker]
    }

    pub fn prev_update(&self, worker: usize) -> u64 {
        self.prev[worker]
    }

    /// `t − last_i` at the ledger's current time.
    pub fn delay(&self, worker: usize) -> u64 {
        self.now - self.last[worker]
    }

    /// `t − prev_i` at the ledger's current time.
    pub fn double_delay(&self, worker: usize) -> u64 {
        self.now - self.prev[worker]
    }

    pub fn average_delay(&self) -> f64 {
        let n = self.last.len() as f64;
        self.last.iter().map(|l| (self.now - l) as f64).sum::<f64>() / n
    }

    /// Records that `worker` exchanged with the master at time `t`, rotating
    /// its entries. Returns `(d, D)` at `t` after the exchange, so `d` is
    /// always 0 and `D` is the gap since the worker's previous exchange.
    pub fn on_update(&mut self, worker: usize, t: u64) -> Result<(u64, u64)> {
        if worker >= self.last.len() {
            return Err(ProtocolError::Contract(format!(
                "worker {worker} not in ledger of {}",
                self.last.len()
            )));
        }
        if t <= self.now {
            return Err(ProtocolError::Contract(format!(
                "time {t} does not advance past {}",
                self.now
            )));
        }
        self.now = t;
        self.prev[worker] = self.last[worker];
        self.last[worker] = t;
        Ok((0, t - self.prev[worker]))
    }
}

/// Epoch boundaries: `T_1 = 0` and `T_{m+1}` is the first time every worker
/// has made at least two updates on `[T_m, T_{m+1}]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochTracker {
    counts: Vec<u32>,
    starts: Vec<u64>,
    now: u64,
}

impl EpochTracker {
    pub fn new(n: usize) -> Self {
        Self {
            counts: vec![0; n],
            starts: vec![0],
            now: 0,
        }
    }

    /// Current epoch index `m`, starting from 1.
    pub fn epoch(&self) -> usize {
        self.starts.len()
    }

    /// `T_1, …, T_m`.
    pub fn starts(&self) -> &[u64] {
        &self.starts
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Returns `Some(T_{m+1})` when the update at `t` closes the epoch.
    ///
    /// The closing update lies in both `[T_m, T_{m+1}]` and
    /// `[T_{m+1}, T_{m+2}]`, so it seeds the next interval's count.
    pub fn on_update(&mut self, worker: usize, t: u64) -> Result<Option<u64>> {
        if worker >= self.counts.len() {
            return Err(ProtocolError::Contract(format!(
                "worker {worker} not in tracker of {}",
                self.counts.len()
            )));
        }
        if t <= self.now {
            return Err(ProtocolError::Contract(format!(
                "time {t} does not advance past {}",
                self.now
            )));
        }
        self.now = t;
        self.counts[worker] += 1;
        if self.counts.iter().all(|&c| c >= 2) {
            self.counts.iter_mut().for_each(|c| *c = 0);
            self.counts[worker] = 1;
            self.starts.push(t);
            Ok(Some(t))
        } else {
            Ok(None)
        }
    }
}
