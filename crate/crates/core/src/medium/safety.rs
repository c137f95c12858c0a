//! Safety watchdog: a port endpoint without a valid exchange for
//! `watchdog_cycles` consecutive cycles enters its safe state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::protocol::PortKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WatchdogTransition {
    Entered(PortKey),
    Exited(PortKey),
}

#[derive(Debug, Clone, Default)]
struct Endpoint {
    missed: u64,
    valid_this_cycle: bool,
    safe: bool,
}

#[derive(Debug, Clone)]
pub struct SafetyWatchdog {
    watchdog_cycles: u64,
    endpoints: BTreeMap<PortKey, Endpoint>,
}

impl SafetyWatchdog {
    /// `watchdog_cycles` of zero is treated as one.
    pub fn new(watchdog_cycles: u64) -> Self {
        SafetyWatchdog {
            watchdog_cycles: watchdog_cycles.max(1),
            endpoints: BTreeMap::new(),
        }
    }

    pub fn watchdog_cycles(&self) -> u64 {
        self.watchdog_cycles
    }

    /// Start monitoring; a freshly armed port counts as having just exchanged.
    pub fn arm(&mut self, port: PortKey) {
        self.endpoints.entry(port).or_default();
    }

    /// Stop monitoring, e.g. when a device roams away or is unpaired.
    pub fn disarm(&mut self, port: PortKey) -> Option<WatchdogTransition> {
        let e = self.endpoints.remove(&port)?;
        e.safe.then_some(WatchdogTransition::Exited(port))
    }

    pub fn is_safe_state(&self, port: PortKey) -> bool {
        self.endpoints.get(&port).is_some_and(|e| e.safe)
    }

    pub fn is_armed(&self, port: PortKey) -> bool {
        self.endpoints.contains_key(&port)
    }

    /// Record a valid exchange; leaves the safe state if it was active.
    pub fn valid_exchange(&mut self, port: PortKey) -> Option<WatchdogTransition> {
        let e = self.endpoints.get_mut(&port)?;
        e.valid_this_cycle = true;
        e.missed = 0;
        if e.safe {
            e.safe = false;
            Some(WatchdogTransition::Exited(port))
        } else {
            None
        }
    }

    /// Close a cycle and return the endpoints that entered the safe state.
    pub fn end_cycle(&mut self) -> Vec<WatchdogTransition> {
        let mut out = Vec::new();
        for (port, e) in self.endpoints.iter_mut() {
            if e.valid_this_cycle {
                e.valid_this_cycle = false;
                continue;
            }
            e.missed += 1;
            if !e.safe && e.missed >= self.watchdog_cycles {
                e.safe = true;
                out.push(WatchdogTransition::Entered(*port));
            }
        }
        out
    }
}
