//! Simplified irreversible ledger and the message network between
//! devices, the validation network and the attacker's server.
//!
//! Wallets hand out a fresh 34-character Base58 address per transaction.
//! A submitted transaction validates after a fixed delay; validation
//! moves the balances and notifies the single listener registered on the
//! destination address. Link latency is a clamped Gaussian per named
//! profile, drawn from the network's own RNG substream.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::simcore::{AgentId, SimDuration, SimRng, SimTime};

pub const ADDRESS_LEN: usize = 34;
pub const BASE58_ALPHABET: &[u8; 58] =
    b"123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";

/// Floor on any sampled one-way latency.
pub const MIN_LATENCY: SimDuration = SimDuration::from_millis(1);

/// 34-character Base58 payment address, unique to one transaction.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(String);

impl Address {
    pub fn parse(s: &str) -> Result<Self, LedgerError> {
        if s.len() != ADDRESS_LEN || !s.bytes().all(|b| BASE58_ALPHABET.contains(&b)) {
            return Err(LedgerError::MalformedAddress(s.to_string()));
        }
        Ok(Address(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }

    fn random(rng: &mut SimRng) -> Self {
        let chars: String = (0..ADDRESS_LEN)
            .map(|_| BASE58_ALPHABET[rng.uniform_u64(0, 57) as usize] as char)
            .collect();
        Address(chars)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "addr:{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct WalletId(pub u32);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TxId(pub u64);

/// Coin store of one participant. Every issued address is recorded so
/// freshness can be enforced; `next_receive` is the pre-generated address
/// the owner will show for the next incoming payment.
pub struct Wallet {
    pub owner: String,
    pub nickname: String,
    pub balance: u64,
    issued: Vec<Address>,
    next_receive: Address,
    rng: SimRng,
}

/// Irreversible ledger entry. Once `validated_at` is set no field ever
/// changes; the ledger hands out no mutable access afterwards.
#[derive(Clone, Debug)]
pub struct Transaction {
    pub txid: TxId,
    pub from: Address,
    pub to: Address,
    pub amount: u64,
    pub submitted_at: SimTime,
    pub validated_at: Option<SimTime>,
}

/// Details carried by a validation notification.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TxDetails {
    pub txid: TxId,
    pub amount: u64,
    pub payer: Address,
    pub to: Address,
    pub validated_at: SimTime,
}

/// Pending validation scheduled by a submit.
#[derive(Clone, Copy, Debug)]
pub struct PendingValidation {
    pub txid: TxId,
    pub validate_at: SimTime,
}

/// Outcome of validating one transaction.
pub struct ValidatedTx {
    pub details: TxDetails,
    pub listener: Option<AgentId>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("insufficient funds: have {have}, need {need}")]
    InsufficientFunds { have: u64, need: u64 },
    #[error("unknown address {0}")]
    UnknownAddress(String),
    #[error("malformed address {0:?}")]
    MalformedAddress(String),
    #[error("unknown link profile {0:?}")]
    UnknownProfile(String),
    #[error("unknown endpoint {0:?}")]
    UnknownEndpoint(String),
}

pub struct Ledger {
    wallets: Vec<Wallet>,
    addr_owner: BTreeMap<Address, WalletId>,
    listeners: BTreeMap<Address, AgentId>,
    txs: Vec<Transaction>,
    pub validation_delay: SimDuration,
}

impl Ledger {
    pub fn new(validation_delay: SimDuration) -> Self {
        Ledger {
            wallets: Vec::new(),
            addr_owner: BTreeMap::new(),
            listeners: BTreeMap::new(),
            txs: Vec::new(),
            validation_delay,
        }
    }

    /// Create a wallet with its own address-generation substream and a
    /// pre-generated receive address.
    pub fn create_wallet(
        &mut self,
        owner: &str,
        nickname: &str,
        balance: u64,
        rng: SimRng,
    ) -> WalletId {
        let id = WalletId(self.wallets.len() as u32);
        self.wallets.push(Wallet {
            owner: owner.to_string(),
            nickname: nickname.to_string(),
            balance,
            issued: Vec::new(),
            next_receive: Address("1".repeat(ADDRESS_LEN)), // replaced below
            rng,
        });
        let first = self.fresh_address(id);
        self.wallets[id.0 as usize].next_receive = first;
        id
    }

    /// Draw a fresh address from the wallet's substream. Uniqueness is
    /// enforced globally by retry; collisions are astronomically rare.
    pub fn fresh_address(&mut self, id: WalletId) -> Address {
        loop {
            let addr = Address::random(&mut self.wallets[id.0 as usize].rng);
            if !self.addr_owner.contains_key(&addr) {
                self.addr_owner.insert(addr.clone(), id);
                self.wallets[id.0 as usize].issued.push(addr.clone());
                return addr;
            }
        }
    }

    pub fn next_receive(&self, id: WalletId) -> &Address {
        &self.wallets[id.0 as usize].next_receive
    }

    /// Pre-generate the address for the owner's next transaction.
    pub fn rotate_receive(&mut self, id: WalletId) -> Address {
        let fresh = self.fresh_address(id);
        self.wallets[id.0 as usize].next_receive = fresh.clone();
        fresh
    }

    pub fn balance(&self, id: WalletId) -> u64 {
        self.wallets[id.0 as usize].balance
    }

    pub fn nickname_of_address(&self, addr: &Address) -> Option<&str> {
        self.addr_owner
            .get(addr)
            .map(|w| self.wallets[w.0 as usize].nickname.as_str())
    }

    pub fn wallet_of_address(&self, addr: &Address) -> Option<WalletId> {
        self.addr_owner.get(addr).copied()
    }

    /// Sum over all wallets; constant across a run (conservation).
    pub fn total_balance(&self) -> u64 {
        self.wallets.iter().map(|w| w.balance).sum()
    }

    /// Route future validation notifications for `addr` to `endpoint`.
    pub fn register_listener(&mut self, addr: &Address, endpoint: AgentId) -> Result<(), LedgerError> {
        if !self.addr_owner.contains_key(addr) {
            return Err(LedgerError::UnknownAddress(addr.to_string()));
        }
        self.listeners.insert(addr.clone(), endpoint);
        Ok(())
    }

    /// Accept a transaction for validation. The caller schedules the
    /// validation event at the returned time.
    pub fn submit_tx(
        &mut self,
        from: &Address,
        to: &Address,
        amount: u64,
        now: SimTime,
    ) -> Result<PendingValidation, LedgerError> {
        let payer = self
            .addr_owner
            .get(from)
            .copied()
            .ok_or_else(|| LedgerError::UnknownAddress(from.to_string()))?;
        if !self.addr_owner.contains_key(to) {
            return Err(LedgerError::UnknownAddress(to.to_string()));
        }
        let have = self.wallets[payer.0 as usize].balance;
        if have < amount {
            return Err(LedgerError::InsufficientFunds { have, need: amount });
        }
        let txid = TxId(self.txs.len() as u64);
        self.txs.push(Transaction {
            txid,
            from: from.clone(),
            to: to.clone(),
            amount,
            submitted_at: now,
            validated_at: None,
        });
        Ok(PendingValidation {
            txid,
            validate_at: now + self.validation_delay,
        })
    }

    /// Finalize a pending transaction: move the balances, freeze the
    /// entry, and report the listener to notify (exactly one per
    /// registered listener per transaction).
    pub fn validate_tx(&mut self, txid: TxId, now: SimTime) -> ValidatedTx {
        let tx = &mut self.txs[txid.0 as usize];
        assert!(tx.validated_at.is_none(), "transactions validate once");
        tx.validated_at = Some(now);
        let (from, to, amount) = (tx.from.clone(), tx.to.clone(), tx.amount);
        let payer = self.addr_owner[&from];
        let payee = self.addr_owner[&to];
        assert!(
            self.wallets[payer.0 as usize].balance >= amount,
            "balance re-checked at submit"
        );
        self.wallets[payer.0 as usize].balance -= amount;
        self.wallets[payee.0 as usize].balance += amount;
        ValidatedTx {
            details: TxDetails {
                txid,
                amount,
                payer: from,
                to: to.clone(),
                validated_at: now,
            },
            listener: self.listeners.get(&to).copied(),
        }
    }

    pub fn transaction(&self, txid: TxId) -> &Transaction {
        &self.txs[txid.0 as usize]
    }

    pub fn validated_txs(&self) -> impl Iterator<Item = &Transaction> {
        self.txs.iter().filter(|t| t.validated_at.is_some())
    }
}

/// Named one-way latency profile.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LinkProfile {
    pub name: String,
    pub mean_one_way: SimDuration,
    pub jitter_sd: SimDuration,
}

impl LinkProfile {
    pub fn new(name: &str, mean_ms: u64, jitter_ms: u64) -> Self {
        LinkProfile {
            name: name.to_string(),
            mean_one_way: SimDuration::from_millis(mean_ms),
            jitter_sd: SimDuration::from_millis(jitter_ms),
        }
    }
}

/// The profiles every scenario can reference by name.
pub fn builtin_profiles() -> Vec<LinkProfile> {
    vec![
        LinkProfile::new("wifi", 15, 5),
        LinkProfile::new("cellular4g", 60, 20),
        LinkProfile::new("cellular3g", 120, 40),
        LinkProfile::new("wired", 40, 5),
    ]
}

/// Latency sampler over the named profiles.
pub struct Network {
    profiles: BTreeMap<String, LinkProfile>,
    rng: SimRng,
}

impl Network {
    pub fn new(rng: SimRng) -> Self {
        let profiles = builtin_profiles()
            .into_iter()
            .map(|p| (p.name.clone(), p))
            .collect();
        Network { profiles, rng }
    }

    pub fn profile(&self, name: &str) -> Result<&LinkProfile, LedgerError> {
        self.profiles
            .get(name)
            .ok_or_else(|| LedgerError::UnknownProfile(name.to_string()))
    }

    /// Register an additional profile (calibration overrides, tests).
    pub fn insert_profile(&mut self, profile: LinkProfile) {
        self.profiles.insert(profile.name.clone(), profile);
    }

    /// One-way latency draw: `max(1 ms, gaussian(mean, sd))`, rounded to
    /// whole microseconds.
    pub fn sample_latency(&mut self, profile: &str) -> Result<SimDuration, LedgerError> {
        let p = self.profile(profile)?;
        let mean = p.mean_one_way.as_micros() as f64;
        let sd = p.jitter_sd.as_micros() as f64;
        let sample = self.rng.gaussian(mean, sd).round();
        let clamped = sample.max(MIN_LATENCY.as_micros() as f64);
        Ok(SimDuration::from_micros(clamped as u64))
    }

    /// Delivery time for a message sent now over `profile`.
    pub fn deliver_at(&mut self, profile: &str, now: SimTime) -> Result<SimTime, LedgerError> {
        Ok(now + self.sample_latency(profile)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAYEE_EP: AgentId = AgentId("payee");
    const SERVER_EP: AgentId = AgentId("server");

    fn t(us: u64) -> SimTime {
        SimTime::from_micros(us)
    }

    fn ledger_with_wallets() -> (Ledger, WalletId, WalletId, WalletId) {
        let mut ledger = Ledger::new(SimDuration::from_millis(2_000));
        let payer = ledger.create_wallet("payer", "payer", 100, SimRng::for_stream(1, "wallet:payer"));
        let victim = ledger.create_wallet("wallet", "m.rossi", 0, SimRng::for_stream(1, "wallet:victim"));
        let attacker = ledger.create_wallet("server", "rn.rossi", 0, SimRng::for_stream(1, "wallet:attacker"));
        (ledger, payer, victim, attacker)
    }

    #[test]
    fn fresh_addresses_are_valid_and_distinct() {
        let (mut ledger, _, victim, _) = ledger_with_wallets();
        let a = ledger.fresh_address(victim);
        let b = ledger.fresh_address(victim);
        assert_ne!(a, b);
        for addr in [&a, &b] {
            assert_eq!(addr.as_str().len(), ADDRESS_LEN);
            assert!(addr.as_bytes().iter().all(|c| BASE58_ALPHABET.contains(c)));
            assert!(Address::parse(addr.as_str()).is_ok());
        }
    }

    #[test]
    fn address_sequences_are_deterministic_per_seed() {
        let gen = || {
            let mut ledger = Ledger::new(SimDuration::ZERO);
            let w = ledger.create_wallet("w", "w", 0, SimRng::for_stream(42, "wallet:w"));
            (0..10)
                .map(|_| ledger.fresh_address(w).to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(gen(), gen());
    }

    #[test]
    fn address_parse_rejects_bad_inputs() {
        assert!(Address::parse("short").is_err());
        assert!(Address::parse(&"0".repeat(ADDRESS_LEN)).is_err()); // '0' not in alphabet
        assert!(Address::parse(&"2".repeat(ADDRESS_LEN)).is_ok());
    }

    #[test]
    fn validated_payment_moves_the_balance() {
        let (mut ledger, payer, victim, _) = ledger_with_wallets();
        let from = ledger.next_receive(payer).clone();
        let to = ledger.next_receive(victim).clone();
        let pending = ledger.submit_tx(&from, &to, 30, t(0)).unwrap();
        assert_eq!(pending.validate_at, t(2_000_000));
        assert_eq!(ledger.balance(payer), 100); // nothing moves until validation
        ledger.validate_tx(pending.txid, pending.validate_at);
        assert_eq!(ledger.balance(payer), 70);
        assert_eq!(ledger.balance(victim), 30);
    }

    #[test]
    fn overdraft_is_rejected() {
        let (mut ledger, payer, victim, _) = ledger_with_wallets();
        let from = ledger.next_receive(payer).clone();
        let to = ledger.next_receive(victim).clone();
        assert_eq!(
            ledger.submit_tx(&from, &to, 101, t(0)),
            Err(LedgerError::InsufficientFunds { have: 100, need: 101 })
        );
    }

    #[test]
    fn redirected_payment_credits_the_attacker_only() {
        let (mut ledger, payer, victim, attacker) = ledger_with_wallets();
        let from = ledger.next_receive(payer).clone();
        let to = ledger.next_receive(attacker).clone();
        let pending = ledger.submit_tx(&from, &to, 25, t(5)).unwrap();
        ledger.validate_tx(pending.txid, t(10));
        assert_eq!(ledger.balance(victim), 0);
        assert_eq!(ledger.balance(attacker), 25);
        assert_eq!(ledger.total_balance(), 100);
    }

    #[test]
    fn listener_is_notified_exactly_once_per_validation() {
        let (mut ledger, payer, victim, attacker) = ledger_with_wallets();
        let victim_addr = ledger.next_receive(victim).clone();
        let attacker_addr = ledger.next_receive(attacker).clone();
        ledger.register_listener(&victim_addr, PAYEE_EP).unwrap();
        ledger.register_listener(&attacker_addr, SERVER_EP).unwrap();

        let from = ledger.next_receive(payer).clone();
        let pending = ledger.submit_tx(&from, &attacker_addr, 10, t(0)).unwrap();
        let validated = ledger.validate_tx(pending.txid, t(1));
        assert_eq!(validated.listener, Some(SERVER_EP));
        assert_eq!(validated.details.amount, 10);
        assert_eq!(validated.details.payer, from);
    }

    #[test]
    fn unlistened_address_reports_no_listener() {
        let (mut ledger, payer, victim, _) = ledger_with_wallets();
        let from = ledger.next_receive(payer).clone();
        let to = ledger.next_receive(victim).clone();
        let pending = ledger.submit_tx(&from, &to, 1, t(0)).unwrap();
        let validated = ledger.validate_tx(pending.txid, t(1));
        assert_eq!(validated.listener, None);
    }

    #[test]
    fn listener_registration_requires_issued_address() {
        let (mut ledger, _, _, _) = ledger_with_wallets();
        let foreign = Address::parse(&"9".repeat(ADDRESS_LEN)).unwrap();
        assert!(matches!(
            ledger.register_listener(&foreign, PAYEE_EP),
            Err(LedgerError::UnknownAddress(_))
        ));
    }

    #[test]
    fn zero_jitter_link_is_exact() {
        let mut net = Network::new(SimRng::for_stream(1, "network"));
        for _ in 0..10 {
            assert_eq!(
                net.deliver_at("wired", t(0)).unwrap(),
                t(40_000),
                "wired has 5ms jitter by default"
            );
        }
    }

    #[test]
    fn wired_profile_without_jitter_is_constant() {
        // Replace wired's jitter with zero through a custom network.
        let mut net = Network::new(SimRng::new(0));
        net.profiles.insert(
            "wired0".into(),
            LinkProfile {
                name: "wired0".into(),
                mean_one_way: SimDuration::from_millis(40),
                jitter_sd: SimDuration::ZERO,
            },
        );
        for _ in 0..5 {
            assert_eq!(net.deliver_at("wired0", t(7)).unwrap(), t(7 + 40_000));
        }
    }

    #[test]
    fn latency_sample_mean_matches_the_profile() {
        let mut net = Network::new(SimRng::for_stream(77, "network"));
        let n = 1_000u64;
        let total: u64 = (0..n)
            .map(|_| net.sample_latency("wifi").unwrap().as_micros())
            .sum();
        let mean = total as f64 / n as f64;
        // 3 standard errors of the mean: 3 * 5ms / sqrt(1000).
        let tolerance = 3.0 * 5_000.0 / (n as f64).sqrt();
        assert!(
            (mean - 15_000.0).abs() <= tolerance,
            "mean {mean}, tolerance {tolerance}"
        );
    }

    #[test]
    fn sub_millisecond_samples_clamp_to_one_millisecond() {
        let mut net = Network::new(SimRng::new(3));
        net.profiles.insert(
            "tiny".into(),
            LinkProfile {
                name: "tiny".into(),
                mean_one_way: SimDuration::from_micros(200),
                jitter_sd: SimDuration::ZERO,
            },
        );
        assert_eq!(net.sample_latency("tiny").unwrap(), MIN_LATENCY);
    }

    #[test]
    fn unknown_profile_is_an_error() {
        let mut net = Network::new(SimRng::new(0));
        assert_eq!(
            net.sample_latency("carrier-pigeon"),
            Err(LedgerError::UnknownProfile("carrier-pigeon".into()))
        );
    }

    #[test]
    fn validated_set_is_append_only() {
        let (mut ledger, payer, victim, _) = ledger_with_wallets();
        let from = ledger.next_receive(payer).clone();
        let to = ledger.next_receive(victim).clone();
        let p1 = ledger.submit_tx(&from, &to, 1, t(0)).unwrap();
        ledger.validate_tx(p1.txid, t(1));
        let snapshot: Vec<TxId> = ledger.validated_txs().map(|t| t.txid).collect();

        let to2 = ledger.rotate_receive(victim);
        let p2 = ledger.submit_tx(&from, &to2, 2, t(2)).unwrap();
        ledger.validate_tx(p2.txid, t(3));
        let later: Vec<TxId> = ledger.validated_txs().map(|t| t.txid).collect();
        assert_eq!(&later[..snapshot.len()], &snapshot[..]);
    }
}
