//! The four actors of a payment: payee wallet app, payer scanner app,
//! the malicious background service, and the attacker's server — plus
//! the run configuration that wires them together.
//!
//! Agents are event handlers invoked by the single-threaded scheduler in
//! [`world`]; all interaction goes through scheduled messages and the
//! window stack / ledger operations, never through shared mutable state.

pub mod world;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::defenses::{DefenseConfig, PerceptionOracle};
use crate::ledgernet::{LinkProfile, TxDetails};
use crate::simcore::{AgentId, SimDuration};
use crate::windowstack::Rect;

pub use world::{QrProbeSample, RunOptions, RunSummary, World};

pub const VICTIM_WALLET: AgentId = AgentId("victim-wallet");
pub const PAYER: AgentId = AgentId("payer");
pub const MALVIEW: AgentId = AgentId("malview");
pub const ATTACKER_SERVER: AgentId = AgentId("attacker-server");
pub const LEDGER_NODE: AgentId = AgentId("ledger");
pub const WINDOW_MANAGER: AgentId = AgentId("window-manager");
pub const ORCHESTRATOR: AgentId = AgentId("orchestrator");

/// Malware poll cadence for foreground detection.
pub const DEFAULT_POLL_PERIOD: SimDuration = SimDuration::from_millis(100);
/// Fixed cost of building one overlay window.
pub const DEFAULT_CREATION_DELAY: SimDuration = SimDuration::from_millis(50);
/// Clock resolution; the slack term in the setup-time bound.
pub const SCHEDULING_QUANTUM: SimDuration = SimDuration::from_micros(1);

/// Victim taps the QR button this long after the app reaches foreground.
pub const THINK_TAP: (SimDuration, SimDuration) = (
    SimDuration::from_millis(800),
    SimDuration::from_millis(2_500),
);
/// Payer scans this long after a QR appears on the payee screen.
pub const THINK_SCAN: (SimDuration, SimDuration) = (
    SimDuration::from_millis(1_000),
    SimDuration::from_millis(3_000),
);
/// Payer hits Send this long after a successful scan.
pub const THINK_CONFIRM: (SimDuration, SimDuration) = (
    SimDuration::from_millis(500),
    SimDuration::from_millis(1_500),
);

/// Toasts are re-shown this margin before their ttl elapses.
pub const TOAST_RESHOW_MARGIN: SimDuration = SimDuration::from_millis(500);
/// Malware gives up on the address server after this long.
pub const BOOTSTRAP_TIMEOUT: SimDuration = SimDuration::from_millis(3_000);
/// Time to type a delivered OTP code.
pub const OTP_TYPING_TIME: SimDuration = SimDuration::from_millis(1_500);
/// Payer abandons the payment if the OTP never arrives.
pub const OTP_DELIVERY_TIMEOUT: SimDuration = SimDuration::from_secs(10);
/// Victim looks at the notification before closing the app.
pub const POST_NOTIFY_LINGER: SimDuration = SimDuration::from_millis(500);
/// Idle gap between payments of a set.
pub const INTER_PAYMENT_GAP: SimDuration = SimDuration::from_millis(500);
/// First payment starts this long into the run (bootstrap headroom).
pub const FIRST_PAYMENT_AT: SimDuration = SimDuration::from_secs(1);
/// Hard deadline per payment; trips only when a notification is lost.
pub const PAYMENT_DEADLINE: SimDuration = SimDuration::from_secs(60);
/// Interval between composite probes of the QR region.
pub const QR_PROBE_INTERVAL: SimDuration = SimDuration::from_millis(100);

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    AlertWindow,
    Toast,
    Dos,
}

impl AttackKind {
    pub fn overlay_strategy(&self) -> Option<OverlayStrategy> {
        match self {
            AttackKind::None => None,
            AttackKind::AlertWindow | AttackKind::Dos => Some(OverlayStrategy::AlertWindow),
            AttackKind::Toast => Some(OverlayStrategy::Toast),
        }
    }
}

/// How the malware keeps its overlays on screen.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OverlayStrategy {
    AlertWindow,
    Toast,
}

/// Exactly one per payment.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentOutcome {
    LegitPayment,
    StolenUndetected,
    StolenDetected,
    Blocked,
    Dos,
}

impl PaymentOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            PaymentOutcome::LegitPayment => "legit_payment",
            PaymentOutcome::StolenUndetected => "stolen_undetected",
            PaymentOutcome::StolenDetected => "stolen_detected",
            PaymentOutcome::Blocked => "blocked",
            PaymentOutcome::Dos => "dos",
        }
    }

    pub fn is_stolen(&self) -> bool {
        matches!(
            self,
            PaymentOutcome::StolenUndetected | PaymentOutcome::StolenDetected
        )
    }
}

impl fmt::Display for PaymentOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_str())
    }
}

/// Notification appearance. The malware clones the victim app's style,
/// so a faked notification renders identically to a genuine one with the
/// same details.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct NotificationStyle {
    pub icon_id: u32,
    pub title_template: String,
    pub body_template: String,
}

impl Default for NotificationStyle {
    fn default() -> Self {
        NotificationStyle {
            icon_id: 7001,
            title_template: "Payment received".to_string(),
            body_template: "Received {amount} coins from {payer} at {time}".to_string(),
        }
    }
}

impl NotificationStyle {
    /// Fill the template slots from transaction details.
    pub fn render(&self, details: &TxDetails) -> (String, String) {
        let fill = |tpl: &str| {
            tpl.replace("{amount}", &details.amount.to_string())
                .replace("{payer}", details.payer.as_str())
                .replace("{time}", &details.validated_at.as_micros().to_string())
        };
        (fill(&self.title_template), fill(&self.body_template))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum WalletPhase {
    Closed,
    Main,
    QrDisplayed,
    Notified,
}

/// Payment amounts: fixed, or drawn uniformly per payment.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AmountSpec {
    Fixed(u64),
    Uniform { min: u64, max: u64 },
}

impl AmountSpec {
    pub fn max_amount(&self) -> u64 {
        match self {
            AmountSpec::Fixed(a) => *a,
            AmountSpec::Uniform { max, .. } => *max,
        }
    }
}

/// Where an app places a view on screen; the malware reads the same
/// table to aim its overlays.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ViewPlacement {
    pub app: String,
    pub view: String,
    pub rect: Rect,
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct LayoutTable {
    pub placements: Vec<ViewPlacement>,
}

impl LayoutTable {
    pub fn standard() -> Self {
        LayoutTable {
            placements: vec![
                ViewPlacement {
                    app: "wallet".into(),
                    view: "qr-button".into(),
                    rect: Rect::new(440, 1500, 200, 200),
                },
                ViewPlacement {
                    app: "wallet".into(),
                    view: "qr-display".into(),
                    rect: Rect::new(140, 460, 800, 800),
                },
            ],
        }
    }

    pub fn lookup(&self, app: &str, view: &str) -> Option<Rect> {
        self.placements
            .iter()
            .find(|p| p.app == app && p.view == view)
            .map(|p| p.rect)
    }
}

/// Fixed processing costs of a run.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TimingConfig {
    pub validation_delay: SimDuration,
    pub server_processing: SimDuration,
    pub device_processing: SimDuration,
    pub poll_period: SimDuration,
    pub creation_delay: SimDuration,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            validation_delay: SimDuration::from_millis(2_000),
            server_processing: SimDuration::from_millis(100),
            device_processing: SimDuration::from_millis(20),
            poll_period: DEFAULT_POLL_PERIOD,
            creation_delay: DEFAULT_CREATION_DELAY,
        }
    }
}

/// Everything a single simulation run needs.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub n_payments: u32,
    pub attack: AttackKind,
    pub defenses: DefenseConfig,
    pub oracle: PerceptionOracle,
    /// Payer-side summary page showing the payee nickname.
    pub nickname_summary: bool,
    /// Link profile of the devices' connectivity.
    pub link: String,
    /// Link profile between the validation network and the attacker server.
    pub server_link: String,
    /// Carrier link for OTP delivery, independent of the payment link.
    pub otp_link: String,
    pub amounts: AmountSpec,
    pub layout: LayoutTable,
    pub timing: TimingConfig,
    /// Additional profiles beyond the builtin set.
    pub extra_profiles: Vec<LinkProfile>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            n_payments: 30,
            attack: AttackKind::None,
            defenses: DefenseConfig::default(),
            oracle: PerceptionOracle::default(),
            nickname_summary: false,
            link: "wifi".into(),
            server_link: "wired".into(),
            otp_link: "cellular4g".into(),
            amounts: AmountSpec::Fixed(10),
            layout: LayoutTable::standard(),
            timing: TimingConfig::default(),
            extra_profiles: Vec::new(),
        }
    }
}

/// Visually deceptive variant of a nickname, in the spirit of homoglyph
/// substitution: "m.rossi" becomes "rn.rossi".
pub fn deceptive_nickname(nick: &str) -> String {
    if let Some(ix) = nick.find('m') {
        let mut out = String::with_capacity(nick.len() + 1);
        out.push_str(&nick[..ix]);
        out.push_str("rn");
        out.push_str(&nick[ix + 1..]);
        return out;
    }
    if let Some(ix) = nick.find('l') {
        let mut out = nick.to_string();
        out.replace_range(ix..ix + 1, "1");
        return out;
    }
    format!("{nick}.")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledgernet::{Address, TxId};
    use crate::simcore::SimTime;

    #[test]
    fn fake_and_genuine_notifications_render_identically() {
        let style = NotificationStyle::default();
        let details = TxDetails {
            txid: TxId(4),
            amount: 30,
            payer: Address::parse(&"4".repeat(34)).unwrap(),
            to: Address::parse(&"5".repeat(34)).unwrap(),
            validated_at: SimTime::from_micros(123_456),
        };
        // The malware renders with the victim app's own style, so equal
        // details produce byte-equal notifications.
        let genuine = style.render(&details);
        let faked = style.clone().render(&details);
        assert_eq!(genuine, faked);
        assert!(genuine.1.contains("30 coins"));
        assert!(genuine.1.contains("123456"));
    }

    #[test]
    fn deceptive_nicknames_differ_but_look_close() {
        assert_eq!(deceptive_nickname("m.rossi"), "rn.rossi");
        assert_eq!(deceptive_nickname("carlo"), "car1o");
        assert_eq!(deceptive_nickname("anna"), "anna.");
        assert_ne!(deceptive_nickname("m.rossi"), "m.rossi");
    }

    #[test]
    fn layout_lookup_finds_the_standard_views() {
        let layout = LayoutTable::standard();
        assert!(layout.lookup("wallet", "qr-button").is_some());
        assert!(layout.lookup("wallet", "qr-display").is_some());
        assert!(layout.lookup("wallet", "missing").is_none());
    }

    #[test]
    fn attack_kinds_map_to_strategies() {
        assert_eq!(AttackKind::None.overlay_strategy(), None);
        assert_eq!(
            AttackKind::AlertWindow.overlay_strategy(),
            Some(OverlayStrategy::AlertWindow)
        );
        assert_eq!(
            AttackKind::Dos.overlay_strategy(),
            Some(OverlayStrategy::AlertWindow)
        );
        assert_eq!(
            AttackKind::Toast.overlay_strategy(),
            Some(OverlayStrategy::Toast)
        );
    }
}
