//! Event-driven wiring of the four actors over one window stack, one
//! ledger and one network.
//!
//! A payment runs as: victim opens the wallet (foreground change), taps
//! the QR button after a think delay, the payer scans the composited
//! screen region, confirms, and the ledger validates and notifies. The
//! malware, when present, polls the foreground, covers the QR button
//! with a transparent capture overlay, pre-renders the attacker QR, and
//! swaps it in the instant the tap lands on its overlay. Agents never
//! touch each other's state directly; everything flows through the
//! queue.

use crate::defenses::{self, NoticeKind, OtpChallenge};
use crate::harness::report::PaymentRecord;
use crate::ledgernet::{
    Address, Ledger, LedgerError, Network, TxDetails, TxId, WalletId, MIN_LATENCY,
};
use crate::qrcodec::{self, QrMatrix};
use crate::simcore::{AgentId, EventHandle, EventQueue, EventRecord, SimDuration, SimRng, SimTime};
use crate::windowstack::{
    AppId, DispatchResult, Permissions, Rect, TouchEvent, View, ViewContent, WindowId, WindowKind,
    WindowSpec, WindowStack, TOAST_DEFAULT_TTL,
};

use super::*;

/// A message in flight between two endpoints.
#[derive(Clone, Debug)]
pub struct NetMessage {
    pub src: AgentId,
    pub dst: AgentId,
    pub payload: NetPayload,
    pub sent_at: SimTime,
    pub deliver_at: SimTime,
}

#[derive(Clone, Debug)]
pub enum NetPayload {
    AddressRequest,
    AddressReply(Address),
    TxSubmission {
        from: Address,
        to: Address,
        amount: u64,
    },
    LedgerNotification(TxDetails),
    ForwardedDetails(TxDetails),
    OtpDelivery(OtpChallenge),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ToastRole {
    Capture,
    Display,
}

#[derive(Clone, Debug)]
enum Msg {
    StartPayment(u32),
    VictimTapsQr,
    VictimClosesWallet,
    MalviewPoll,
    CaptureOverlayBuilt,
    FakeQrPrerendered,
    ToastReshow(ToastRole),
    ToastExpiry,
    BootstrapTimeout,
    PayerScans,
    PayerConfirms { to: Address },
    PayerSubmits { to: Address },
    OtpTimeout,
    TxValidated(TxId),
    ShowNotification { details: TxDetails, fake: bool },
    QrProbe { payment: u32, until: SimTime },
    Watchdog(u32),
    Deliver(NetMessage),
}

enum Hop {
    DeviceLink,
    ServerLink,
    OtpLink,
}

#[derive(Clone, Copy, Default)]
pub struct RunOptions {
    /// Sample the QR region every 100 ms between tap and scan.
    pub probe_qr: bool,
    /// Keep a line-per-event trace of the run.
    pub record_trace: bool,
    /// Fault injection: the address server never answers.
    pub server_down: bool,
    /// Fault injection: the OTP message is lost.
    pub drop_otp: bool,
    /// Fault injection: the server's forward to the malware is lost.
    pub drop_server_forward: bool,
}

/// One composite sample of the QR display region.
#[derive(Clone, Debug)]
pub struct QrProbeSample {
    pub payment: u32,
    pub at: SimTime,
    pub decoded: Option<Vec<u8>>,
    pub expected: Option<Vec<u8>>,
}

#[derive(Clone, Copy, Default, Debug)]
pub struct RunCounters {
    pub fake_notifications: u32,
    /// Validated transactions whose destination had no listener.
    pub dropped_notifications: u32,
    /// Payments concluded by the watchdog without a notification.
    pub missing_notifications: u32,
    pub forward_drops: u32,
    pub otp_abandoned: u32,
    pub submit_failures: u32,
}

pub struct RunSummary {
    pub records: Vec<PaymentRecord>,
    pub probes: Vec<QrProbeSample>,
    pub trace: Vec<String>,
    pub counters: RunCounters,
}

struct VictimState {
    phase: WalletPhase,
    style: NotificationStyle,
    event_log: Vec<String>,
}

struct PayerState {
    from_addr: Address,
    pending_to: Option<Address>,
    awaiting_otp: bool,
    otp_timeout: Option<EventHandle>,
}

struct MalviewState {
    active: bool,
    strategy: Option<OverlayStrategy>,
    overlay_alpha: f64,
    prefetched: Option<Address>,
    /// Pre-rendered fake QR and the payload it encodes.
    prerendered: Option<(QrMatrix, Vec<u8>)>,
    capture_overlay: Option<WindowId>,
    display_overlay: Option<WindowId>,
    engaged: bool,
    blocked_this_payment: bool,
    tap_captured: bool,
    setup_ready_at: Option<SimTime>,
    bootstrap_timeout: Option<EventHandle>,
    bootstrap_failed: bool,
    disabled: bool,
}

struct PaymentProgress {
    index: u32,
    amount: u64,
    t_fg: SimTime,
    t_tap: Option<SimTime>,
    t_confirm: Option<SimTime>,
    attack_fired: bool,
    setup_time: Option<SimDuration>,
    notification_delay: Option<SimDuration>,
    expected_fake_payload: Option<Vec<u8>>,
    validated_to: Option<Address>,
    outcome: Option<PaymentOutcome>,
    watchdog: Option<EventHandle>,
}

pub struct World {
    cfg: RunConfig,
    opts: RunOptions,
    queue: EventQueue<Msg>,
    stack: WindowStack,
    ledger: Ledger,
    net: Network,

    home_app: AppId,
    wallet_app: AppId,
    malware_app: Option<AppId>,
    wallet_window: WindowId,
    qr_button_rect: Rect,
    qr_display_rect: Rect,

    victim_wallet: WalletId,
    payer_wallet: WalletId,
    attacker_wallet: WalletId,
    victim_nickname: String,

    victim: VictimState,
    payer: PayerState,
    malview: MalviewState,

    rng_victim: SimRng,
    rng_payer: SimRng,
    rng_perception: SimRng,
    rng_amounts: SimRng,
    rng_otp: SimRng,

    payments: Vec<PaymentProgress>,
    current: usize,
    done: bool,

    counters: RunCounters,
    probes: Vec<QrProbeSample>,
    trace: Vec<String>,
}

impl World {
    pub fn new(cfg: RunConfig, opts: RunOptions) -> World {
        let mut queue: EventQueue<Msg> = EventQueue::new();
        let mut stack = WindowStack::new(cfg.defenses);
        let mut net = Network::new(SimRng::for_stream(cfg.seed, "network"));
        for profile in &cfg.extra_profiles {
            net.insert_profile(profile.clone());
        }
        for name in [&cfg.link, &cfg.server_link, &cfg.otp_link] {
            net.profile(name).expect("link profiles validated upstream");
        }

        let qr_button_rect = cfg
            .layout
            .lookup("wallet", "qr-button")
            .expect("layout provides wallet/qr-button");
        let qr_display_rect = cfg
            .layout
            .lookup("wallet", "qr-display")
            .expect("layout provides wallet/qr-display");

        let home_app = stack.register_app("home", Permissions::NONE);
        let wallet_app = stack.register_app("wallet", Permissions::NONE);
        let strategy = cfg.attack.overlay_strategy();
        let malware_app = strategy.map(|s| {
            stack.register_app(
                "malware",
                Permissions {
                    alert_window: s == OverlayStrategy::AlertWindow,
                    internet: true,
                },
            )
        });

        let screen = stack.screen();
        // Wallet activity goes in first so the launcher starts on top.
        let wallet_window = stack
            .add_window(
                WindowSpec {
                    owner: wallet_app.clone(),
                    kind: WindowKind::Activity,
                    rect: screen,
                    alpha: 1.0,
                    touchable: true,
                    ttl: None,
                    views: vec![],
                },
                SimTime::ZERO,
            )
            .expect("wallet activity fits the screen");
        stack
            .add_window(
                WindowSpec {
                    owner: home_app.clone(),
                    kind: WindowKind::Activity,
                    rect: screen,
                    alpha: 1.0,
                    touchable: true,
                    ttl: None,
                    views: vec![],
                },
                SimTime::ZERO,
            )
            .expect("home activity fits the screen");

        let victim_nickname = "m.rossi".to_string();
        let mut ledger = Ledger::new(cfg.timing.validation_delay);
        let payer_funds = cfg.n_payments as u64 * cfg.amounts.max_amount();
        let payer_wallet = ledger.create_wallet(
            "payer",
            "payer",
            payer_funds,
            SimRng::for_stream(cfg.seed, "wallet:payer"),
        );
        let victim_wallet = ledger.create_wallet(
            "wallet",
            &victim_nickname,
            0,
            SimRng::for_stream(cfg.seed, "wallet:victim"),
        );
        let attacker_wallet = ledger.create_wallet(
            "server",
            &deceptive_nickname(&victim_nickname),
            0,
            SimRng::for_stream(cfg.seed, "wallet:attacker"),
        );
        let victim_addr = ledger.next_receive(victim_wallet).clone();
        ledger
            .register_listener(&victim_addr, VICTIM_WALLET)
            .expect("just issued");
        let payer_from = ledger.next_receive(payer_wallet).clone();

        let mut world = World {
            opts,
            queue: EventQueue::new(),
            stack,
            ledger,
            net,
            home_app,
            wallet_app,
            malware_app,
            wallet_window,
            qr_button_rect,
            qr_display_rect,
            victim_wallet,
            payer_wallet,
            attacker_wallet,
            victim_nickname,
            victim: VictimState {
                phase: WalletPhase::Closed,
                style: NotificationStyle::default(),
                event_log: Vec::new(),
            },
            payer: PayerState {
                from_addr: payer_from,
                pending_to: None,
                awaiting_otp: false,
                otp_timeout: None,
            },
            malview: MalviewState {
                active: strategy.is_some(),
                strategy,
                overlay_alpha: 0.0,
                prefetched: None,
                prerendered: None,
                capture_overlay: None,
                display_overlay: None,
                engaged: false,
                blocked_this_payment: false,
                tap_captured: false,
                setup_ready_at: None,
                bootstrap_timeout: None,
                bootstrap_failed: false,
                disabled: false,
            },
            rng_victim: SimRng::for_stream(cfg.seed, "user:victim"),
            rng_payer: SimRng::for_stream(cfg.seed, "user:payer"),
            rng_perception: SimRng::for_stream(cfg.seed, "perception"),
            rng_amounts: SimRng::for_stream(cfg.seed, "amounts"),
            rng_otp: SimRng::for_stream(cfg.seed, "otp"),
            payments: Vec::with_capacity(cfg.n_payments as usize),
            current: 0,
            done: false,
            counters: RunCounters::default(),
            probes: Vec::new(),
            trace: Vec::new(),
            cfg,
        };
        std::mem::swap(&mut world.queue, &mut queue);
        world.stack.update_views(wallet_window, world.wallet_main_views()).unwrap();

        if world.malview.active {
            // Malware service starts with the device: pull the attacker
            // address and begin foreground polling.
            world.send(MALVIEW, ATTACKER_SERVER, NetPayload::AddressRequest, Hop::DeviceLink, SimDuration::ZERO);
            let handle = world
                .queue
                .schedule(SimTime::ZERO + BOOTSTRAP_TIMEOUT, MALVIEW, Msg::BootstrapTimeout)
                .unwrap();
            world.malview.bootstrap_timeout = Some(handle);
            world.queue.schedule(SimTime::ZERO, MALVIEW, Msg::MalviewPoll).unwrap();
        }
        world
            .queue
            .schedule(SimTime::ZERO + FIRST_PAYMENT_AT, ORCHESTRATOR, Msg::StartPayment(0))
            .unwrap();
        world
    }

    /// Drive the run to completion and collect the per-payment records.
    pub fn run(&mut self) -> RunSummary {
        self.step_until(SimTime::from_micros(u64::MAX));
        assert!(
            self.payments.len() == self.cfg.n_payments as usize
                && self.payments.iter().all(|p| p.outcome.is_some()),
            "every payment concludes with exactly one outcome"
        );
        RunSummary {
            records: self
                .payments
                .iter()
                .map(|p| PaymentRecord {
                    index: p.index,
                    outcome: p.outcome.expect("checked"),
                    setup_time_us: p.setup_time.map(|d| d.as_micros()),
                    notification_delay_us: p.notification_delay.map(|d| d.as_micros()),
                    stolen_amount: if p.outcome == Some(PaymentOutcome::StolenUndetected) {
                        p.amount
                    } else {
                        0
                    },
                })
                .collect(),
            probes: std::mem::take(&mut self.probes),
            trace: std::mem::take(&mut self.trace),
            counters: self.counters,
        }
    }

    /// Process every event due at or before `t` (test instrumentation).
    pub fn step_until(&mut self, t: SimTime) {
        let mut budget: u64 = 1_000_000 + self.cfg.n_payments as u64 * 100_000;
        while let Some(ev) = self.queue.pop_due(t) {
            budget = budget.checked_sub(1).expect("event budget exceeded: scheduling bug");
            if self.opts.record_trace {
                self.trace.push(format!(
                    "{:>12} #{:<7} {:<15} {:?}",
                    ev.fire_at.as_micros(),
                    ev.seq,
                    ev.target.0,
                    ev.payload
                ));
            }
            self.handle(ev);
            #[cfg(debug_assertions)]
            self.check_invariants();
        }
    }

    #[cfg(debug_assertions)]
    fn check_invariants(&self) {
        if self.cfg.defenses.sensitive_views {
            if let Some(malware) = &self.malware_app {
                let sensitive = self.stack.sensitive_rects_excluding(malware);
                for w in self.stack.windows_top_down() {
                    if &w.owner == malware {
                        assert!(
                            !sensitive.iter().any(|r| r.intersects(&w.rect)),
                            "foreign overlay over a sensitive rect"
                        );
                    }
                }
            }
        }
    }

    // ── accessors ──

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn victim_balance(&self) -> u64 {
        self.ledger.balance(self.victim_wallet)
    }

    pub fn attacker_balance(&self) -> u64 {
        self.ledger.balance(self.attacker_wallet)
    }

    pub fn payer_balance(&self) -> u64 {
        self.ledger.balance(self.payer_wallet)
    }

    pub fn total_balance(&self) -> u64 {
        self.ledger.total_balance()
    }

    pub fn victim_log(&self) -> &[String] {
        &self.victim.event_log
    }

    pub fn validated_destinations(&self) -> Vec<String> {
        self.ledger
            .validated_txs()
            .map(|t| t.to.to_string())
            .collect()
    }

    pub fn stack(&self) -> &WindowStack {
        &self.stack
    }

    // ── plumbing ──

    fn send(&mut self, src: AgentId, dst: AgentId, payload: NetPayload, hop: Hop, extra: SimDuration) {
        let profile = match hop {
            Hop::DeviceLink => self.cfg.link.as_str(),
            Hop::ServerLink => self.cfg.server_link.as_str(),
            Hop::OtpLink => self.cfg.otp_link.as_str(),
        };
        let sent_at = self.queue.now() + extra;
        let latency = self.net.sample_latency(profile).expect("profiles validated");
        let deliver_at = sent_at + latency;
        debug_assert!(deliver_at >= sent_at + MIN_LATENCY);
        let msg = NetMessage {
            src,
            dst,
            payload,
            sent_at,
            deliver_at,
        };
        self.queue
            .schedule(deliver_at, dst, Msg::Deliver(msg))
            .expect("delivery is in the future");
    }

    fn schedule_in(&mut self, delay: SimDuration, target: AgentId, msg: Msg) -> EventHandle {
        self.queue
            .schedule_in(delay, target, msg)
            .expect("non-negative delay")
    }

    fn payment(&mut self) -> &mut PaymentProgress {
        &mut self.payments[self.current]
    }

    fn payment_concluded(&self) -> bool {
        self.payments
            .get(self.current)
            .map_or(true, |p| p.outcome.is_some())
    }

    fn conclude(&mut self, outcome: PaymentOutcome) {
        if self.payment_concluded() {
            return;
        }
        let p = &mut self.payments[self.current];
        p.outcome = Some(outcome);
        let watchdog = p.watchdog.take();
        if let Some(h) = watchdog {
            self.queue.cancel(h);
        }
        self.schedule_in(POST_NOTIFY_LINGER, VICTIM_WALLET, Msg::VictimClosesWallet);
    }

    fn wallet_main_views(&self) -> Vec<View> {
        vec![View::new(
            "qr-button",
            self.qr_button_rect,
            ViewContent::SolidColor,
        )
        .filtered(self.cfg.defenses.touch_filtering)
        .sensitive(self.cfg.defenses.sensitive_views)]
    }

    fn wallet_qr_views(&self, matrix: QrMatrix) -> Vec<View> {
        let mut views = self.wallet_main_views();
        views.push(
            View::new("qr-display", self.qr_display_rect, ViewContent::QrContent(matrix))
                .filtered(self.cfg.defenses.touch_filtering)
                .sensitive(self.cfg.defenses.sensitive_views),
        );
        views
    }

    fn overlay_kind(&self) -> WindowKind {
        match self.malview.strategy.expect("malware active") {
            OverlayStrategy::AlertWindow => WindowKind::AlertOverlay,
            OverlayStrategy::Toast => WindowKind::ToastOverlay,
        }
    }

    fn capture_overlay_spec(&self) -> WindowSpec {
        let rect = self.qr_button_rect;
        WindowSpec {
            owner: self.malware_app.clone().expect("malware active"),
            kind: self.overlay_kind(),
            rect,
            alpha: self.malview.overlay_alpha,
            touchable: true,
            ttl: None,
            views: vec![View::new(
                "capture",
                Rect::new(0, 0, rect.w, rect.h),
                ViewContent::SolidColor,
            )],
        }
    }

    fn display_overlay_spec(&self, matrix: QrMatrix) -> WindowSpec {
        let rect = self.qr_display_rect;
        WindowSpec {
            owner: self.malware_app.clone().expect("malware active"),
            kind: self.overlay_kind(),
            rect,
            alpha: 1.0,
            touchable: false,
            ttl: None,
            views: vec![View::new(
                "fake-qr",
                Rect::new(0, 0, rect.w, rect.h),
                ViewContent::QrContent(matrix),
            )],
        }
    }

    fn arm_toast_keepalive(&mut self, role: ToastRole) {
        if self.overlay_kind() != WindowKind::ToastOverlay {
            return;
        }
        self.schedule_in(TOAST_DEFAULT_TTL, WINDOW_MANAGER, Msg::ToastExpiry);
        self.schedule_in(
            TOAST_DEFAULT_TTL.saturating_sub(TOAST_RESHOW_MARGIN),
            MALVIEW,
            Msg::ToastReshow(role),
        );
    }

    // ── event handlers ──

    fn handle(&mut self, ev: EventRecord<Msg>) {
        match ev.payload {
            Msg::StartPayment(i) => self.on_start_payment(i),
            Msg::VictimTapsQr => self.on_victim_taps(),
            Msg::VictimClosesWallet => self.on_victim_closes(),
            Msg::MalviewPoll => self.on_malview_poll(),
            Msg::CaptureOverlayBuilt => self.on_capture_built(),
            Msg::FakeQrPrerendered => self.on_fake_qr_prerendered(),
            Msg::ToastReshow(role) => self.on_toast_reshow(role),
            Msg::ToastExpiry => self.on_toast_expiry(),
            Msg::BootstrapTimeout => self.on_bootstrap_timeout(),
            Msg::PayerScans => self.on_payer_scans(),
            Msg::PayerConfirms { to } => self.on_payer_confirms(to),
            Msg::PayerSubmits { to } => self.on_payer_submits(to),
            Msg::OtpTimeout => self.on_otp_timeout(),
            Msg::TxValidated(txid) => self.on_tx_validated(txid),
            Msg::ShowNotification { details, fake } => self.on_show_notification(details, fake),
            Msg::QrProbe { payment, until } => self.on_qr_probe(payment, until),
            Msg::Watchdog(i) => self.on_watchdog(i),
            Msg::Deliver(msg) => self.on_deliver(ev.target, msg),
        }
    }

    fn on_start_payment(&mut self, index: u32) {
        let now = self.queue.now();
        self.current = index as usize;
        let amount = match self.cfg.amounts {
            AmountSpec::Fixed(a) => a,
            AmountSpec::Uniform { min, max } => self.rng_amounts.uniform_u64(min, max),
        };
        let watchdog = self.queue
            .schedule(now + PAYMENT_DEADLINE, ORCHESTRATOR, Msg::Watchdog(index))
            .unwrap();
        self.payments.push(PaymentProgress {
            index,
            amount,
            t_fg: now,
            t_tap: None,
            t_confirm: None,
            attack_fired: false,
            setup_time: None,
            notification_delay: None,
            expected_fake_payload: None,
            validated_to: None,
            outcome: None,
            watchdog: Some(watchdog),
        });

        self.stack.set_foreground(&self.wallet_app).expect("wallet registered");
        let main_views = self.wallet_main_views();
        self.stack.update_views(self.wallet_window, main_views).unwrap();
        self.victim.phase = WalletPhase::Main;
        self.victim.event_log.push("launched".into());

        let think = self.rng_victim.uniform_duration(THINK_TAP.0, THINK_TAP.1);
        self.schedule_in(think, VICTIM_WALLET, Msg::VictimTapsQr);
    }

    fn on_victim_taps(&mut self) {
        if self.payment_concluded() || self.victim.phase != WalletPhase::Main {
            return;
        }
        let now = self.queue.now();
        let tap = TouchEvent {
            point: self.qr_button_rect.center(),
            at: now,
        };
        match self.stack.dispatch_touch(tap) {
            DispatchResult::DeliveredTo { window, .. } if window == self.wallet_window => {
                self.payment().t_tap = Some(now);
                self.victim.event_log.push("touch:qr-button".into());
                let matrix = qrcodec::encode(
                    self.ledger.next_receive(self.victim_wallet).as_bytes(),
                )
                .expect("34-byte address fits");
                let views = self.wallet_qr_views(matrix);
                self.stack.update_views(self.wallet_window, views).unwrap();
                self.victim.phase = WalletPhase::QrDisplayed;
                self.victim.event_log.push("qr-displayed".into());
                let think = self.rng_payer.uniform_duration(THINK_SCAN.0, THINK_SCAN.1);
                self.schedule_in(think, PAYER, Msg::PayerScans);
            }
            DispatchResult::DeliveredTo { window, .. }
                if Some(window) == self.malview.capture_overlay =>
            {
                // The wallet app never sees this event.
                self.payment().t_tap = Some(now);
                self.malview.tap_captured = true;
                if self.malview.prerendered.is_some() {
                    self.show_fake_qr();
                } else if self.malview.prefetched.is_none() {
                    // No address to display: withdraw so the victim's
                    // retry lands on the real button.
                    if let Some(id) = self.malview.capture_overlay.take() {
                        let _ = self.stack.remove_window(id);
                    }
                    self.malview.blocked_this_payment = true;
                    self.malview.tap_captured = false;
                    let think = self.rng_victim.uniform_duration(THINK_TAP.0, THINK_TAP.1);
                    self.schedule_in(think, VICTIM_WALLET, Msg::VictimTapsQr);
                }
                // Otherwise the pre-render is still in flight; the fake
                // QR appears the moment it completes.
            }
            DispatchResult::DeliveredTo { .. }
            | DispatchResult::Discarded
            | DispatchResult::NoTarget => {
                self.conclude(PaymentOutcome::Blocked);
            }
        }
    }

    /// Put the pre-rendered attacker QR on screen. The attack officially
    /// fires here: setup time is the interval from app foreground to the
    /// moment the fake QR was ready to display.
    fn show_fake_qr(&mut self) {
        let now = self.queue.now();
        let Some((matrix, payload)) = self.malview.prerendered.clone() else {
            return;
        };
        let spec = self.display_overlay_spec(matrix);
        match self.stack.add_window(spec, now) {
            Ok(id) => {
                self.malview.display_overlay = Some(id);
                self.arm_toast_keepalive(ToastRole::Display);
                let ready_at = self.malview.setup_ready_at.expect("set at pre-render");
                let index = self.payments[self.current].index;
                {
                    let p = &mut self.payments[self.current];
                    p.attack_fired = true;
                    p.expected_fake_payload = Some(payload);
                    p.setup_time = Some(ready_at.duration_since(p.t_fg));
                }
                let think = self.rng_payer.uniform_duration(THINK_SCAN.0, THINK_SCAN.1);
                let scan_at = now + think;
                self.queue.schedule(scan_at, PAYER, Msg::PayerScans).unwrap();
                if self.opts.probe_qr && now + QR_PROBE_INTERVAL < scan_at {
                    self.schedule_in(
                        QR_PROBE_INTERVAL,
                        ORCHESTRATOR,
                        Msg::QrProbe {
                            payment: index,
                            until: scan_at,
                        },
                    );
                }
            }
            Err(_) => {
                // Display overlay rejected (sensitive-view policy): the
                // attack cannot complete, fail open to a legit payment.
                if let Some(id) = self.malview.capture_overlay.take() {
                    let _ = self.stack.remove_window(id);
                }
                self.malview.blocked_this_payment = true;
                self.malview.tap_captured = false;
                let think = self.rng_victim.uniform_duration(THINK_TAP.0, THINK_TAP.1);
                self.schedule_in(think, VICTIM_WALLET, Msg::VictimTapsQr);
            }
        }
    }

    fn on_victim_closes(&mut self) {
        if self.victim.phase == WalletPhase::Closed {
            return;
        }
        self.victim.phase = WalletPhase::Closed;
        self.victim.event_log.push("closed".into());
        let main_views = self.wallet_main_views();
        self.stack.update_views(self.wallet_window, main_views).unwrap();
        self.stack.set_foreground(&self.home_app).expect("home registered");
        let next = self.payments[self.current].index + 1;
        if next < self.cfg.n_payments {
            self.schedule_in(INTER_PAYMENT_GAP, ORCHESTRATOR, Msg::StartPayment(next));
        } else {
            self.done = true;
        }
    }

    fn on_malview_poll(&mut self) {
        if !self.malview.active || self.malview.disabled || self.done {
            return;
        }
        let wallet_foreground = self.stack.foreground() == Some(&self.wallet_app);
        if wallet_foreground {
            if !self.malview.engaged
                && !self.malview.blocked_this_payment
                && self.malview.prefetched.is_some()
            {
                self.malview.engaged = true;
                let delay = self.cfg.timing.creation_delay;
                self.schedule_in(delay, MALVIEW, Msg::CaptureOverlayBuilt);
            }
        } else {
            // Target gone: clear this payment's overlays and state.
            for id in [
                self.malview.capture_overlay.take(),
                self.malview.display_overlay.take(),
            ]
            .into_iter()
            .flatten()
            {
                let _ = self.stack.remove_window(id);
            }
            self.malview.engaged = false;
            self.malview.blocked_this_payment = false;
            self.malview.tap_captured = false;
            self.malview.prerendered = None;
            self.malview.setup_ready_at = None;
        }
        let period = self.cfg.timing.poll_period;
        self.schedule_in(period, MALVIEW, Msg::MalviewPoll);
    }

    fn on_capture_built(&mut self) {
        if !self.malview.engaged
            || self.malview.capture_overlay.is_some()
            || self.stack.foreground() != Some(&self.wallet_app)
        {
            return;
        }
        let now = self.queue.now();
        let spec = self.capture_overlay_spec();
        match self.stack.add_window(spec, now) {
            Ok(id) => {
                self.malview.capture_overlay = Some(id);
                self.arm_toast_keepalive(ToastRole::Capture);
                let delay = self.cfg.timing.creation_delay;
                self.schedule_in(delay, MALVIEW, Msg::FakeQrPrerendered);
            }
            Err(crate::windowstack::WindowError::RejectedBySensitivePolicy) => {
                self.malview.blocked_this_payment = true;
            }
            Err(crate::windowstack::WindowError::PermissionDenied { .. }) => {
                self.malview.disabled = true;
            }
            Err(e) => unreachable!("unexpected overlay rejection: {e}"),
        }
    }

    fn on_fake_qr_prerendered(&mut self) {
        if !self.malview.engaged || self.malview.capture_overlay.is_none() {
            return;
        }
        let Some(addr) = self.malview.prefetched.clone() else {
            return;
        };
        let mut matrix = qrcodec::encode(addr.as_bytes()).expect("34-byte address fits");
        if self.cfg.attack == AttackKind::Dos {
            // An invalid code: corrupt a few data modules so the payer's
            // decode fails outright.
            for (r, c) in qrcodec::data_positions().take(3) {
                matrix.toggle(r, c);
            }
        }
        self.malview.prerendered = Some((matrix, addr.as_bytes().to_vec()));
        self.malview.setup_ready_at = Some(self.queue.now());
        if self.malview.tap_captured && self.malview.display_overlay.is_none() {
            // The victim beat the pre-render; show the fake QR now.
            self.show_fake_qr();
        }
    }

    fn on_toast_reshow(&mut self, role: ToastRole) {
        if self.done {
            return;
        }
        let slot = match role {
            ToastRole::Capture => self.malview.capture_overlay,
            ToastRole::Display => self.malview.display_overlay,
        };
        let Some(old) = slot else { return };
        if !self.stack.contains_window(old) {
            return;
        }
        let spec = match role {
            ToastRole::Capture => self.capture_overlay_spec(),
            ToastRole::Display => match self.malview.prerendered.clone() {
                Some((matrix, _)) => self.display_overlay_spec(matrix),
                None => return,
            },
        };
        let now = self.queue.now();
        let _ = self.stack.remove_window(old);
        match self.stack.add_window(spec, now) {
            Ok(new_id) => {
                match role {
                    ToastRole::Capture => self.malview.capture_overlay = Some(new_id),
                    ToastRole::Display => self.malview.display_overlay = Some(new_id),
                }
                self.arm_toast_keepalive(role);
            }
            Err(_) => match role {
                ToastRole::Capture => self.malview.capture_overlay = None,
                ToastRole::Display => self.malview.display_overlay = None,
            },
        }
    }

    fn on_toast_expiry(&mut self) {
        let removed = self.stack.expire_toasts(self.queue.now());
        for id in removed {
            if self.malview.capture_overlay == Some(id) {
                self.malview.capture_overlay = None;
            }
            if self.malview.display_overlay == Some(id) {
                self.malview.display_overlay = None;
            }
        }
    }

    fn on_bootstrap_timeout(&mut self) {
        if self.malview.prefetched.is_none() {
            // Server unreachable: the malware idles and the attack never
            // fires. A late reply can still re-enable it.
            self.malview.bootstrap_failed = true;
        }
    }

    fn on_payer_scans(&mut self) {
        if self.payment_concluded() {
            return;
        }
        let capture = self.stack.scan_region(self.qr_display_rect);
        if capture.hazard_seen {
            let noticed = defenses::perception_notice(
                NoticeKind::Frame,
                &self.cfg.oracle,
                &mut self.rng_perception,
            );
            if noticed {
                self.conclude(PaymentOutcome::StolenDetected);
                return;
            }
        }
        let address = qrcodec::decode(&capture.matrix)
            .ok()
            .and_then(|bytes| String::from_utf8(bytes).ok())
            .and_then(|s| Address::parse(&s).ok());
        let Some(address) = address else {
            // Unreadable or invalid code: the payment cannot proceed.
            self.conclude(PaymentOutcome::Dos);
            return;
        };
        if self.cfg.nickname_summary {
            match self.ledger.nickname_of_address(&address) {
                Some(nick) if nick != self.victim_nickname => {
                    let noticed = defenses::perception_notice(
                        NoticeKind::Nickname,
                        &self.cfg.oracle,
                        &mut self.rng_perception,
                    );
                    if noticed {
                        self.conclude(PaymentOutcome::StolenDetected);
                        return;
                    }
                }
                Some(_) => {}
                None => {
                    self.conclude(PaymentOutcome::Dos);
                    return;
                }
            }
        }
        let think = self.rng_payer.uniform_duration(THINK_CONFIRM.0, THINK_CONFIRM.1);
        self.schedule_in(think, PAYER, Msg::PayerConfirms { to: address });
    }

    fn on_payer_confirms(&mut self, to: Address) {
        if self.payment_concluded() {
            return;
        }
        let now = self.queue.now();
        self.payment().t_confirm = Some(now);
        if self.cfg.defenses.otp {
            let code = OtpChallenge::new(&mut self.rng_otp);
            self.payer.pending_to = Some(to);
            self.payer.awaiting_otp = true;
            let handle = self.schedule_in(OTP_DELIVERY_TIMEOUT, PAYER, Msg::OtpTimeout);
            self.payer.otp_timeout = Some(handle);
            if !self.opts.drop_otp {
                self.send(LEDGER_NODE, PAYER, NetPayload::OtpDelivery(code), Hop::OtpLink, SimDuration::ZERO);
            }
        } else {
            self.schedule_in(SimDuration::ZERO, PAYER, Msg::PayerSubmits { to });
        }
    }

    fn on_otp_timeout(&mut self) {
        if !self.payer.awaiting_otp {
            return;
        }
        self.payer.awaiting_otp = false;
        self.payer.pending_to = None;
        self.counters.otp_abandoned += 1;
        self.conclude(PaymentOutcome::Blocked);
    }

    fn on_payer_submits(&mut self, to: Address) {
        if self.payment_concluded() {
            return;
        }
        let amount = self.payments[self.current].amount;
        let from = self.payer.from_addr.clone();
        self.send(
            PAYER,
            LEDGER_NODE,
            NetPayload::TxSubmission { from, to, amount },
            Hop::DeviceLink,
            SimDuration::ZERO,
        );
    }

    fn on_tx_validated(&mut self, txid: TxId) {
        let now = self.queue.now();
        let validated = self.ledger.validate_tx(txid, now);
        if !self.payment_concluded() {
            self.payment().validated_to = Some(validated.details.to.clone());
        }
        match validated.listener {
            Some(ep) if ep == VICTIM_WALLET => {
                self.send(
                    LEDGER_NODE,
                    VICTIM_WALLET,
                    NetPayload::LedgerNotification(validated.details),
                    Hop::DeviceLink,
                    SimDuration::ZERO,
                );
            }
            Some(ep) if ep == ATTACKER_SERVER => {
                self.send(
                    LEDGER_NODE,
                    ATTACKER_SERVER,
                    NetPayload::LedgerNotification(validated.details),
                    Hop::ServerLink,
                    SimDuration::ZERO,
                );
            }
            Some(other) => unreachable!("unknown listener endpoint {other}"),
            None => {
                self.counters.dropped_notifications += 1;
            }
        }
    }

    fn on_show_notification(&mut self, details: TxDetails, fake: bool) {
        if self.payment_concluded() {
            return;
        }
        let now = self.queue.now();
        let (title, body) = self.victim.style.render(&details);
        self.victim.phase = WalletPhase::Notified;
        // The fake flag is metrics-only; the rendered notification and
        // the log line are indistinguishable from the genuine path.
        self.victim.event_log.push(format!(
            "notification: icon={} title={title} body={body}",
            self.victim.style.icon_id
        ));
        if fake {
            self.counters.fake_notifications += 1;
        }
        let confirm = self.payments[self.current]
            .t_confirm
            .expect("notification follows a confirm");
        self.payments[self.current].notification_delay = Some(now.duration_since(confirm));
        self.conclude(if fake {
            PaymentOutcome::StolenUndetected
        } else {
            PaymentOutcome::LegitPayment
        });
    }

    fn on_qr_probe(&mut self, payment: u32, until: SimTime) {
        if self
            .payments
            .get(payment as usize)
            .map_or(true, |p| p.outcome.is_some())
        {
            return;
        }
        let now = self.queue.now();
        let capture = self.stack.scan_region(self.qr_display_rect);
        self.probes.push(QrProbeSample {
            payment,
            at: now,
            decoded: qrcodec::decode(&capture.matrix).ok(),
            expected: self.payments[payment as usize].expected_fake_payload.clone(),
        });
        if now + QR_PROBE_INTERVAL < until {
            self.schedule_in(QR_PROBE_INTERVAL, ORCHESTRATOR, Msg::QrProbe { payment, until });
        }
    }

    fn on_watchdog(&mut self, index: u32) {
        if self.payments[index as usize].outcome.is_some() {
            return;
        }
        debug_assert_eq!(index as usize, self.current);
        self.counters.missing_notifications += 1;
        let outcome = match &self.payments[index as usize].validated_to {
            Some(addr) => {
                if self.ledger.wallet_of_address(addr) == Some(self.attacker_wallet) {
                    PaymentOutcome::StolenUndetected
                } else {
                    PaymentOutcome::LegitPayment
                }
            }
            None => PaymentOutcome::Blocked,
        };
        self.conclude(outcome);
    }

    fn on_deliver(&mut self, target: AgentId, msg: NetMessage) {
        debug_assert_eq!(target, msg.dst);
        let now = self.queue.now();
        match (target, msg.payload) {
            (ATTACKER_SERVER, NetPayload::AddressRequest) => {
                if self.opts.server_down {
                    return;
                }
                let addr = self.ledger.fresh_address(self.attacker_wallet);
                self.ledger
                    .register_listener(&addr, ATTACKER_SERVER)
                    .expect("just issued");
                self.send(
                    ATTACKER_SERVER,
                    MALVIEW,
                    NetPayload::AddressReply(addr),
                    Hop::DeviceLink,
                    SimDuration::ZERO,
                );
            }
            (MALVIEW, NetPayload::AddressReply(addr)) => {
                self.malview.prefetched = Some(addr);
                if let Some(h) = self.malview.bootstrap_timeout.take() {
                    self.queue.cancel(h);
                }
            }
            (LEDGER_NODE, NetPayload::TxSubmission { from, to, amount }) => {
                match self.ledger.submit_tx(&from, &to, amount, now) {
                    Ok(pending) => {
                        self.queue
                            .schedule(pending.validate_at, LEDGER_NODE, Msg::TxValidated(pending.txid))
                            .expect("validation is in the future");
                    }
                    Err(LedgerError::InsufficientFunds { .. } | LedgerError::UnknownAddress(_)) => {
                        self.counters.submit_failures += 1;
                        self.conclude(PaymentOutcome::Blocked);
                    }
                    Err(e) => unreachable!("unexpected submit error: {e}"),
                }
            }
            (VICTIM_WALLET, NetPayload::LedgerNotification(details)) => {
                // The app saw a real payment: pre-generate the address
                // for the next transaction before rendering.
                let fresh = self.ledger.rotate_receive(self.victim_wallet);
                self.ledger
                    .register_listener(&fresh, VICTIM_WALLET)
                    .expect("just issued");
                let delay = self.cfg.timing.device_processing;
                self.schedule_in(delay, VICTIM_WALLET, Msg::ShowNotification { details, fake: false });
            }
            (ATTACKER_SERVER, NetPayload::LedgerNotification(details)) => {
                if self.opts.drop_server_forward {
                    self.counters.forward_drops += 1;
                    return;
                }
                let processing = self.cfg.timing.server_processing;
                self.send(
                    ATTACKER_SERVER,
                    MALVIEW,
                    NetPayload::ForwardedDetails(details),
                    Hop::DeviceLink,
                    processing,
                );
            }
            (MALVIEW, NetPayload::ForwardedDetails(details)) => {
                let delay = self.cfg.timing.device_processing;
                self.schedule_in(delay, VICTIM_WALLET, Msg::ShowNotification { details, fake: true });
                // That address is spent; pull a fresh one for the next
                // transaction.
                self.malview.prefetched = None;
                self.send(
                    MALVIEW,
                    ATTACKER_SERVER,
                    NetPayload::AddressRequest,
                    Hop::DeviceLink,
                    SimDuration::ZERO,
                );
            }
            (PAYER, NetPayload::OtpDelivery(_code)) => {
                if !self.payer.awaiting_otp {
                    return;
                }
                self.payer.awaiting_otp = false;
                if let Some(h) = self.payer.otp_timeout.take() {
                    self.queue.cancel(h);
                }
                let to = self.payer.pending_to.take().expect("set at confirm");
                self.schedule_in(OTP_TYPING_TIME, PAYER, Msg::PayerSubmits { to });
            }
            (t, p) => unreachable!("message {p:?} delivered to unexpected endpoint {t}"),
        }
    }
}
