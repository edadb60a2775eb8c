//! Deterministic discrete-event simulator of overlay attacks on
//! scan-and-pay QR payments.
//!
//! The simulator models an Android-style window stack on the payee's
//! device, a malicious background service that covers the wallet app's
//! QR button with a transparent overlay and swaps in an attacker QR
//! code, a simplified irreversible ledger with notification fan-out,
//! and the countermeasures a platform could deploy against the attack.
//! Every run is driven by a seeded event queue; the same scenario and
//! seed always produce byte-identical reports.
//!
//! Module map:
//! - [`simcore`] — simulated clock, event queue, splitmix64 RNG streams
//! - [`qrcodec`] — 25x25 QR-lite matrix codec with CRC-32 framing
//! - [`windowstack`] — windows, z-order, touch dispatch, compositing
//! - [`defenses`] — overlay admission policies, perception oracle, OTP
//! - [`ledgernet`] — wallets, transactions, link latency profiles
//! - [`agents`] — payee app, payer app, malware service, attacker server
//! - [`harness`] — scenario files, payment orchestration, reports

pub mod agents;
pub mod defenses;
pub mod harness;
pub mod ledgernet;
pub mod qrcodec;
pub mod simcore;
pub mod windowstack;
