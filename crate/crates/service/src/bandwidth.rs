//! Closed-form link budgets and a byte-exact ledger of traffic per channel.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::protocol::Kind;

/// `directions × rate × unit size`, each given as a range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub directions: f64,
    /// Messages (or words, frames) per second.
    pub rate: (f64, f64),
    /// Bytes per message.
    pub unit_bytes: (f64, f64),
}

impl ModeSpec {
    /// Joint-level teleoperation: two-way packets of 18 B at 15 to 200 Hz.
    pub fn teleop_manipulator() -> Self {
        Self { directions: 2.0, rate: (15.0, 200.0), unit_bytes: (18.0, 18.0) }
    }

    /// One byte per letter, about 7 letters per word, about 2.5 words/s.
    pub fn natural_language() -> Self {
        Self { directions: 1.0, rate: (2.5, 2.5), unit_bytes: (7.0, 7.0) }
    }

    /// One compressed SD (10 KB) to HD (100 KB) stream at 10 to 30 Hz.
    pub fn teleop_cameras() -> Self {
        Self { directions: 1.0, rate: (10.0, 30.0), unit_bytes: (10e3, 100e3) }
    }

    /// State plus one compressed view of up to 30 KB at 0.1 to 1 Hz.
    pub fn scene_state() -> Self {
        Self { directions: 1.0, rate: (0.1, 1.0), unit_bytes: (30e3, 30e3) }
    }
}

/// `(min, max)` bytes per second.
pub fn estimate_bandwidth(spec: &ModeSpec) -> (f64, f64) {
    (spec.directions * spec.rate.0 * spec.unit_bytes.0, spec.directions * spec.rate.1 * spec.unit_bytes.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    TeleopCamera,
    TeleopManip,
    Nl,
    SceneState,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::TeleopCamera, Channel::TeleopManip, Channel::Nl, Channel::SceneState];

    /// Channel a protocol message is billed to. Supervisory commands and
    /// their replies share the manipulator link.
    pub fn for_kind(kind: Kind) -> Self {
        match kind {
            Kind::State => Channel::SceneState,
            Kind::Nl => Channel::Nl,
            Kind::Command | Kind::Ack | Kind::Error | Kind::Warning => Channel::TeleopManip,
        }
    }

    pub fn budget(self) -> ModeSpec {
        match self {
            Channel::TeleopCamera => ModeSpec::teleop_cameras(),
            Channel::TeleopManip => ModeSpec::teleop_manipulator(),
            Channel::Nl => ModeSpec::natural_language(),
            Channel::SceneState => ModeSpec::scene_state(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub bytes: u64,
    pub messages: u64,
    #[serde(skip)]
    recent: VecDeque<(f64, u64)>,
}

/// Cumulative bytes per channel plus sliding-window rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthLedger {
    /// History kept for rate queries (s).
    pub horizon: f64,
    channels: BTreeMap<Channel, ChannelStats>,
}

impl Default for BandwidthLedger {
    fn default() -> Self {
        Self { horizon: 60.0, channels: BTreeMap::new() }
    }
}

impl BandwidthLedger {
    pub fn record(&mut self, channel: Channel, time: f64, bytes: usize) {
        let horizon = self.horizon;
        let c = self.channels.entry(channel).or_default();
        c.bytes += bytes as u64;
        c.messages += 1;
        c.recent.push_back((time, bytes as u64));
        while c.recent.front().is_some_and(|(t, _)| *t < time - horizon) {
            c.recent.pop_front();
        }
    }

    pub fn bytes(&self, channel: Channel) -> u64 {
        self.channels.get(&channel).map_or(0, |c| c.bytes)
    }

    pub fn messages(&self, channel: Channel) -> u64 {
        self.channels.get(&channel).map_or(0, |c| c.messages)
    }

    pub fn total(&self) -> u64 {
        self.channels.values().map(|c| c.bytes).sum()
    }

    /// Mean rate over `(now − window, now]` in B/s.
    pub fn rate(&self, channel: Channel, now: f64, window: f64) -> f64 {
        let Some(c) = self.channels.get(&channel) else { return 0.0 };
        let sum: u64 = c.recent.iter().filter(|(t, _)| *t > now - window && *t <= now).map(|(_, b)| b).sum();
        sum as f64 / window
    }
}
