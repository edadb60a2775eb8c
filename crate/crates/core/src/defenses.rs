//! Pluggable countermeasure policies.
//!
//! Four independent toggles: touch filtering (set on the wallet's views
//! at scenario start), system framing of foreign overlays, an OTP
//! confirmation step, and sensitive-view exclusion zones. Human factors
//! are a Bernoulli perception oracle drawn from a dedicated RNG
//! substream.

use serde::{Deserialize, Serialize};

use crate::simcore::SimRng;
use crate::windowstack::{WindowSpec, WindowStack};

/// Countermeasure toggles. All combinations are valid.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub touch_filtering: bool,
    pub framed_overlays: bool,
    pub otp: bool,
    pub sensitive_views: bool,
}

/// Chance that a user fails to notice a visual defense indicator.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct PerceptionOracle {
    pub p_miss_frame: f64,
    pub p_miss_nickname: f64,
}

impl Default for PerceptionOracle {
    fn default() -> Self {
        PerceptionOracle {
            p_miss_frame: 0.36,
            p_miss_nickname: 0.2,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum NoticeKind {
    Frame,
    Nickname,
}

/// Bernoulli draw against the oracle; `true` means the user noticed the
/// indicator and aborts.
pub fn perception_notice(kind: NoticeKind, oracle: &PerceptionOracle, rng: &mut SimRng) -> bool {
    let p_miss = match kind {
        NoticeKind::Frame => oracle.p_miss_frame,
        NoticeKind::Nickname => oracle.p_miss_nickname,
    };
    !rng.bernoulli(p_miss)
}

/// Admission decision for an overlay.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OverlayVerdict {
    Admit { frame_marked: bool },
    Reject,
}

/// Evaluate the overlay admission policy for `spec`.
///
/// With sensitive views on, any overlay whose rect intersects a
/// sensitive view of a different owner is rejected outright (relocation
/// outside the view is outcome-equivalent for this attack). With framing
/// on, overlays from apps other than the foreground app are admitted but
/// marked so the compositor paints the hazard band around them.
pub fn apply_overlay_policy(
    spec: &WindowSpec,
    cfg: &DefenseConfig,
    stack: &WindowStack,
) -> OverlayVerdict {
    if cfg.sensitive_views {
        let covered = stack
            .sensitive_rects_excluding(&spec.owner)
            .iter()
            .any(|r| r.intersects(&spec.rect));
        if covered {
            return OverlayVerdict::Reject;
        }
    }
    let frame_marked =
        cfg.framed_overlays && stack.foreground().map_or(true, |fg| fg != &spec.owner);
    OverlayVerdict::Admit { frame_marked }
}

/// Six-decimal-digit confirmation code. Deliberately not descriptive of
/// the transaction: it never encodes the destination address.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct OtpChallenge {
    pub code: u32,
}

impl OtpChallenge {
    pub fn new(rng: &mut SimRng) -> Self {
        OtpChallenge {
            code: rng.uniform_u64(0, 999_999) as u32,
        }
    }

    pub fn rendered(&self) -> String {
        format!("{:06}", self.code)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OtpResult {
    Confirmed,
    Abandoned,
}

/// Resolve the OTP step once delivery is known. The payer types whatever
/// code arrives, so a delivered code always confirms — regardless of any
/// destination substitution.
pub fn otp_resolve(delivered: bool) -> OtpResult {
    if delivered {
        OtpResult::Confirmed
    } else {
        OtpResult::Abandoned
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::SimRng;
    use crate::windowstack::{
        AppId, Permissions, Rect, View, ViewContent, WindowError, WindowKind, WindowSpec,
        WindowStack, SCREEN_HEIGHT, SCREEN_WIDTH,
    };
    use crate::simcore::SimTime;

    const QR_RECT: Rect = Rect::new(140, 460, 800, 800);

    fn stack_with_sensitive_wallet(cfg: DefenseConfig) -> (WindowStack, AppId, AppId) {
        let mut stack = WindowStack::new(cfg);
        let wallet = stack.register_app("wallet", Permissions::NONE);
        let malware = stack.register_app(
            "malware",
            Permissions {
                alert_window: true,
                internet: true,
            },
        );
        let views = vec![
            View::new("qr-display", QR_RECT, ViewContent::SolidColor)
                .sensitive(cfg.sensitive_views),
        ];
        stack
            .add_window(
                WindowSpec {
                    owner: wallet.clone(),
                    kind: WindowKind::Activity,
                    rect: Rect::new(0, 0, SCREEN_WIDTH, SCREEN_HEIGHT),
                    alpha: 1.0,
                    touchable: true,
                    ttl: None,
                    views,
                },
                SimTime::ZERO,
            )
            .unwrap();
        (stack, wallet, malware)
    }

    fn overlay_over_qr(owner: &AppId) -> WindowSpec {
        WindowSpec {
            owner: owner.clone(),
            kind: WindowKind::AlertOverlay,
            rect: QR_RECT,
            alpha: 1.0,
            touchable: false,
            ttl: None,
            views: vec![],
        }
    }

    #[test]
    fn sensitive_policy_rejects_covering_overlay() {
        let cfg = DefenseConfig {
            sensitive_views: true,
            ..DefenseConfig::default()
        };
        let (mut stack, _, malware) = stack_with_sensitive_wallet(cfg);
        let err = stack
            .add_window(overlay_over_qr(&malware), SimTime::ZERO)
            .unwrap_err();
        assert_eq!(err, WindowError::RejectedBySensitivePolicy);
    }

    #[test]
    fn framing_marks_foreign_overlays() {
        let cfg = DefenseConfig {
            framed_overlays: true,
            ..DefenseConfig::default()
        };
        let (mut stack, _, malware) = stack_with_sensitive_wallet(cfg);
        let id = stack
            .add_window(overlay_over_qr(&malware), SimTime::ZERO)
            .unwrap();
        assert!(stack.window(id).unwrap().frame_marked);
    }

    #[test]
    fn foreground_apps_own_overlays_are_not_framed() {
        let cfg = DefenseConfig {
            framed_overlays: true,
            ..DefenseConfig::default()
        };
        let (mut stack, wallet, _) = stack_with_sensitive_wallet(cfg);
        let mut spec = overlay_over_qr(&wallet);
        spec.kind = WindowKind::ToastOverlay;
        let id = stack.add_window(spec, SimTime::ZERO).unwrap();
        assert!(!stack.window(id).unwrap().frame_marked);
    }

    #[test]
    fn all_defenses_off_admits_unchanged() {
        let (mut stack, _, malware) = stack_with_sensitive_wallet(DefenseConfig::default());
        let id = stack
            .add_window(overlay_over_qr(&malware), SimTime::ZERO)
            .unwrap();
        let w = stack.window(id).unwrap();
        assert!(!w.frame_marked);
    }

    #[test]
    fn perception_boundaries() {
        let mut rng = SimRng::new(3);
        let always = PerceptionOracle {
            p_miss_frame: 0.0,
            p_miss_nickname: 0.0,
        };
        let never = PerceptionOracle {
            p_miss_frame: 1.0,
            p_miss_nickname: 1.0,
        };
        for _ in 0..100 {
            assert!(perception_notice(NoticeKind::Frame, &always, &mut rng));
        }
        for _ in 0..100 {
            assert!(!perception_notice(NoticeKind::Frame, &never, &mut rng));
        }
    }

    #[test]
    fn perception_matches_the_configured_rate() {
        let oracle = PerceptionOracle {
            p_miss_frame: 0.36,
            p_miss_nickname: 0.2,
        };
        let mut rng = SimRng::for_stream(11, "perception");
        let n = 10_000;
        let missed = (0..n)
            .filter(|_| !perception_notice(NoticeKind::Frame, &oracle, &mut rng))
            .count();
        let fraction = missed as f64 / n as f64;
        // Binomial 3-sigma around 0.36 is ~0.0144; the spec-level band is 0.02.
        assert!(
            (fraction - 0.36).abs() <= 0.02,
            "miss fraction {fraction}"
        );
    }

    #[test]
    fn otp_codes_are_six_digits_and_destination_free() {
        let mut rng = SimRng::new(9);
        for _ in 0..50 {
            let otp = OtpChallenge::new(&mut rng);
            assert!(otp.code <= 999_999);
            assert_eq!(otp.rendered().len(), 6);
        }
        assert_eq!(otp_resolve(true), OtpResult::Confirmed);
        assert_eq!(otp_resolve(false), OtpResult::Abandoned);
    }
}
