//! Simulated star network: one server, `M` devices, a bit ledger, and the
//! shared randomness (coin flips, participant subsets) every node observes
//! identically.
//!
//! A broadcast is charged once, at server egress. Multiply by `M` for the
//! per-receiver view.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::compressors::{CompressedMessage, CompressorSpec};
use crate::error::{Error, Result};
use crate::rng;

/// Bits moved during one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IterationBits {
    pub iter: u64,
    pub up_payload: u64,
    pub up_index: u64,
    pub down_payload: u64,
    pub down_index: u64,
    pub full_sync: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommLedger {
    pub uplink_payload_bits: Vec<u64>,
    pub uplink_index_bits: Vec<u64>,
    pub downlink_payload_bits: u64,
    pub downlink_index_bits: u64,
    pub full_sync_events: u64,
    pub iterations: u64,
    current: IterationBits,
    history: VecDeque<IterationBits>,
    history_cap: Option<usize>,
}

impl CommLedger {
    pub fn new(devices: usize, history_cap: Option<usize>) -> Self {
        Self {
            uplink_payload_bits: vec![0; devices],
            uplink_index_bits: vec![0; devices],
            downlink_payload_bits: 0,
            downlink_index_bits: 0,
            full_sync_events: 0,
            iterations: 0,
            current: IterationBits::default(),
            history: VecDeque::new(),
            history_cap,
        }
    }

    pub fn total_uplink_payload(&self) -> u64 {
        self.uplink_payload_bits.iter().sum()
    }

    pub fn total_uplink_index(&self) -> u64 {
        self.uplink_index_bits.iter().sum()
    }

    /// Per-iteration breakdown, oldest first. Bounded when a cap was given.
    pub fn history(&self) -> impl Iterator<Item = &IterationBits> {
        self.history.iter()
    }

    /// The still-open iteration.
    pub fn current(&self) -> &IterationBits {
        &self.current
    }

    fn close_iteration(&mut self) {
        self.current.iter = self.iterations;
        if let Some(cap) = self.history_cap {
            if cap == 0 {
                self.current = IterationBits::default();
                self.iterations += 1;
                return;
            }
            while self.history.len() >= cap {
                self.history.pop_front();
            }
        }
        self.history.push_back(self.current);
        self.current = IterationBits::default();
        self.iterations += 1;
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,bits_up_payload,bits_up_index,bits_down_payload,bits_down_index,full_sync\n");
        for h in &self.history {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                h.iter,
                h.up_payload,
                h.up_index,
                h.down_payload,
                h.down_index,
                u8::from(h.full_sync)
            );
        }
        out
    }
}

pub struct Network {
    devices: usize,
    seed: u64,
    ledger: CommLedger,
    uplink_specs: Vec<CompressorSpec>,
    downlink_spec: CompressorSpec,
    coin_rng: ChaCha8Rng,
    participant_rng: ChaCha8Rng,
    forced_coins: VecDeque<bool>,
}

impl Network {
    pub fn new(
        seed: u64,
        uplink_specs: Vec<CompressorSpec>,
        downlink_spec: CompressorSpec,
    ) -> Result<Self> {
        let devices = uplink_specs.len();
        if devices == 0 {
            return Err(Error::InvalidParameter("network needs at least one device".into()));
        }
        Ok(Self {
            devices,
            seed,
            ledger: CommLedger::new(devices, None),
            uplink_specs,
            downlink_spec,
            coin_rng: ChaCha8Rng::seed_from_u64(rng::derive_seed(&[seed, rng::TAG_SHARED, 0])),
            participant_rng: ChaCha8Rng::seed_from_u64(rng::derive_seed(&[seed, rng::TAG_SHARED, 1])),
            forced_coins: VecDeque::new(),
        })
    }

    /// Same compressor on every uplink.
    pub fn uniform(seed: u64, devices: usize, uplink: CompressorSpec, downlink: CompressorSpec) -> Result<Self> {
        Self::new(seed, vec![uplink; devices], downlink)
    }

    pub fn with_history_cap(mut self, cap: Option<usize>) -> Self {
        self.ledger.history_cap = cap;
        self
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn uplink_spec(&self, m: usize) -> &CompressorSpec {
        &self.uplink_specs[m]
    }

    pub fn uplink_specs(&self) -> &[CompressorSpec] {
        &self.uplink_specs
    }

    pub fn downlink_spec(&self) -> &CompressorSpec {
        &self.downlink_spec
    }

    /// Compression stream of device `m` at iteration `k`; `phase` separates
    /// several compressions in one iteration.
    pub fn device_rng(&self, m: usize, k: u64, phase: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(rng::derive_seed(&[
            self.seed,
            rng::TAG_DEVICE_COMPRESS,
            m as u64,
            k,
            phase,
        ]))
    }

    pub fn server_rng(&self, k: u64, phase: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(rng::derive_seed(&[self.seed, rng::TAG_SERVER_COMPRESS, 0, k, phase]))
    }

    /// Component-sampling stream of device `m` at iteration `k`.
    pub fn component_rng(&self, m: usize, k: u64) -> ChaCha8Rng {
        rng::stream(self.seed, rng::TAG_COMPONENT, m as u64, k)
    }

    /// Delivers `msg` from device `m` to the server.
    pub fn uplink(&mut self, m: usize, msg: &CompressedMessage) -> Result<Vec<f64>> {
        if m >= self.devices {
            return Err(Error::NodeOutOfRange {
                index: m,
                nodes: self.devices,
            });
        }
        let v = msg.decompress()?;
        self.ledger.uplink_payload_bits[m] += msg.payload_bits;
        self.ledger.uplink_index_bits[m] += msg.index_bits;
        self.ledger.current.up_payload += msg.payload_bits;
        self.ledger.current.up_index += msg.index_bits;
        Ok(v)
    }

    /// Sends `msg` to every device; charged once.
    pub fn broadcast(&mut self, msg: &CompressedMessage) -> Result<Vec<Vec<f64>>> {
        let v = msg.decompress()?;
        self.ledger.downlink_payload_bits += msg.payload_bits;
        self.ledger.downlink_index_bits += msg.index_bits;
        self.ledger.current.down_payload += msg.payload_bits;
        self.ledger.current.down_index += msg.index_bits;
        Ok(vec![v; self.devices])
    }

    /// Queues coin outcomes to be returned before any random draw. Test hook.
    pub fn force_coins(&mut self, coins: impl IntoIterator<Item = bool>) {
        self.forced_coins.extend(coins);
    }

    /// Shared Bernoulli(p) bit.
    pub fn shared_coin(&mut self, p: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("coin probability {p} outside [0, 1]")));
        }
        if let Some(c) = self.forced_coins.pop_front() {
            return Ok(c);
        }
        Ok(self.coin_rng.random::<f64>() < p)
    }

    /// Uniform `b`-subset of devices, sorted. `b = M` consumes no randomness.
    pub fn sample_participants(&mut self, b: usize) -> Result<Vec<usize>> {
        if b == 0 || b > self.devices {
            return Err(Error::InvalidParameter(format!(
                "participant count {b} outside 1..={}",
                self.devices
            )));
        }
        if b == self.devices {
            return Ok((0..b).collect());
        }
        let mut idx = rand::seq::index::sample(&mut self.participant_rng, self.devices, b).into_vec();
        idx.sort_unstable();
        Ok(idx)
    }

    pub fn mark_full_sync(&mut self) {
        if !self.ledger.current.full_sync {
            self.ledger.current.full_sync = true;
            self.ledger.full_sync_events += 1;
        }
    }

    /// Closes the ledger entry of the current iteration.
    pub fn end_iteration(&mut self) {
        self.ledger.close_iteration();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressors::{compress, dense_message, CompressorKind};

    fn net(devices: usize) -> Network {
        Network::uniform(7, devices, CompressorSpec::identity(100), CompressorSpec::identity(100)).unwrap()
    }

    #[test]
    fn identity_uplink_bits() {
        let mut n = net(2);
        n.uplink(0, &dense_message(&[1.0; 100], 64)).unwrap();
        assert_eq!(n.ledger().uplink_payload_bits, vec![6400, 0]);
        n.uplink(0, &dense_message(&[1.0; 100], 64)).unwrap();
        assert_eq!(n.ledger().uplink_payload_bits[0], 12800);
    }

    #[test]
    fn top_k_uplink_bits() {
        let mut n = net(1);
        let spec = CompressorSpec::new(CompressorKind::TopK(30), 100, 64).unwrap();
        let z: Vec<f64> = (0..100).map(f64::from).collect();
        let msg = compress(&spec, &z, &mut n.device_rng(0, 0, 0)).unwrap();
        n.uplink(0, &msg).unwrap();
        assert_eq!(n.ledger().uplink_payload_bits[0], 1920);
        assert_eq!(n.ledger().uplink_index_bits[0], 210);
    }

    #[test]
    fn broadcast_charged_once_and_identical() {
        let mut n = net(4);
        let copies = n.broadcast(&dense_message(&[0.5; 100], 64)).unwrap();
        assert_eq!(n.ledger().downlink_payload_bits, 6400);
        assert_eq!(copies.len(), 4);
        assert!(copies.iter().all(|c| c == &copies[0]));

        let spec = CompressorSpec::new(CompressorKind::RandK(30), 100, 64).unwrap();
        let msg = compress(&spec, &[1.0; 100], &mut n.server_rng(0, 0)).unwrap();
        n.broadcast(&msg).unwrap();
        assert_eq!(n.ledger().downlink_payload_bits, 6400 + 1920);
    }

    #[test]
    fn coin_edges_and_errors() {
        let mut n = net(1);
        assert!((0..1000).all(|_| !n.shared_coin(0.0).unwrap()));
        assert!((0..1000).all(|_| n.shared_coin(1.0).unwrap()));
        assert!(n.shared_coin(1.5).is_err());
        assert!(n.shared_coin(-0.1).is_err());
        n.force_coins([true]);
        assert!(n.shared_coin(0.0).unwrap());
    }

    #[test]
    fn coin_sequence_is_a_function_of_seed() {
        let mut a = net(3);
        let mut b = net(3);
        let sa: Vec<bool> = (0..200).map(|_| a.shared_coin(0.3).unwrap()).collect();
        let sb: Vec<bool> = (0..200).map(|_| b.shared_coin(0.3).unwrap()).collect();
        assert_eq!(sa, sb);
    }

    #[test]
    fn participants() {
        let mut n = net(4);
        assert_eq!(n.sample_participants(4).unwrap(), vec![0, 1, 2, 3]);
        assert!(n.sample_participants(0).is_err());
        assert!(n.sample_participants(5).is_err());
        let s = n.sample_participants(2).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s[0] < s[1]);
    }

    #[test]
    fn ledger_history_and_csv() {
        let mut n = net(2).with_history_cap(Some(2));
        for k in 0..3 {
            n.uplink(k % 2, &dense_message(&[1.0; 100], 64)).unwrap();
            if k == 1 {
                n.mark_full_sync();
                n.mark_full_sync();
            }
            n.end_iteration();
        }
        let h: Vec<_> = n.ledger().history().copied().collect();
        assert_eq!(h.len(), 2);
        assert_eq!(h[0].iter, 1);
        assert!(h[0].full_sync);
        assert_eq!(n.ledger().full_sync_events, 1);
        let csv = n.ledger().to_csv();
        assert!(csv.starts_with("iter,bits_up_payload,bits_up_index,bits_down_payload,bits_down_index,full_sync\n"));
        assert!(csv.contains("\n1,6400,0,0,0,1\n"));
    }

    #[test]
    fn uplink_rejects_unknown_device() {
        let mut n = net(2);
        assert!(matches!(
            n.uplink(2, &dense_message(&[0.0; 100], 64)),
            Err(Error::NodeOutOfRange { .. })
        ));
    }
}
