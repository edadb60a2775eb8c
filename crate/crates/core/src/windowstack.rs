//! Screen model: window creation gated by permissions, z-ordering with
//! overlays always on top, toast lifetimes, touch dispatch with
//! obscured-touch filtering, and compositing — what a camera pointed at
//! the screen would see.
//!
//! The stack keeps two layers. Activity windows sit at the bottom with
//! the foreground activity on top of the other activities; overlay
//! windows (alert or toast) always sit above every activity, newest on
//! top. Overlay admission runs through the configured defense policy.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::defenses::{apply_overlay_policy, DefenseConfig, OverlayVerdict};
use crate::qrcodec::{QrMatrix, CELLS_WITH_QUIET, GRID_SIZE, QUIET_ZONE};
use crate::simcore::{SimDuration, SimTime};

pub const SCREEN_WIDTH: i32 = 1080;
pub const SCREEN_HEIGHT: i32 = 1920;

/// Platform long-toast duration; applied when a toast spec omits its ttl.
pub const TOAST_DEFAULT_TTL: SimDuration = SimDuration::from_micros(3_500_000);

/// Overlays with alpha at or below this never reach the camera but still
/// count as obscuring for touch filtering.
pub const OPACITY_THRESHOLD: f64 = 0.01;

/// Width in pixels of the hazard stripe band drawn around frame-marked
/// overlays.
pub const FRAME_BAND_PX: i32 = 4;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl Rect {
    pub const fn new(x: i32, y: i32, w: i32, h: i32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x && p.x < self.x + self.w && p.y >= self.y && p.y < self.y + self.h
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }

    /// True when `inner`, expressed relative to this rect, fits inside it.
    pub fn contains_relative(&self, inner: &Rect) -> bool {
        inner.x >= 0
            && inner.y >= 0
            && inner.w > 0
            && inner.h > 0
            && inner.x + inner.w <= self.w
            && inner.y + inner.h <= self.h
    }

    pub fn center(&self) -> Point {
        Point {
            x: self.x + self.w / 2,
            y: self.y + self.h / 2,
        }
    }

    pub fn translated(&self, dx: i32, dy: i32) -> Rect {
        Rect::new(self.x + dx, self.y + dy, self.w, self.h)
    }
}

/// Application identity. Names are unique per scenario.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct AppId(String);

impl AppId {
    pub fn new(name: &str) -> Self {
        AppId(name.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct Permissions {
    pub alert_window: bool,
    pub internet: bool,
}

impl Permissions {
    pub const NONE: Permissions = Permissions {
        alert_window: false,
        internet: false,
    };
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum WindowKind {
    Activity,
    AlertOverlay,
    ToastOverlay,
}

impl WindowKind {
    pub fn is_overlay(&self) -> bool {
        matches!(self, WindowKind::AlertOverlay | WindowKind::ToastOverlay)
    }
}

#[derive(Clone, PartialEq, Debug)]
pub enum ViewContent {
    SolidColor,
    QrContent(QrMatrix),
    Label(String),
}

#[derive(Clone, PartialEq, Debug)]
pub struct View {
    /// Relative to the owning window's rect.
    pub rect: Rect,
    pub tag: String,
    pub content: ViewContent,
    pub filter_touches_when_obscured: bool,
    pub sensitive: bool,
}

impl View {
    pub fn new(tag: &str, rect: Rect, content: ViewContent) -> Self {
        View {
            rect,
            tag: tag.to_string(),
            content,
            filter_touches_when_obscured: false,
            sensitive: false,
        }
    }

    pub fn filtered(mut self, on: bool) -> Self {
        self.filter_touches_when_obscured = on;
        self
    }

    pub fn sensitive(mut self, on: bool) -> Self {
        self.sensitive = on;
        self
    }
}

/// What a caller asks the window manager to create.
#[derive(Clone, Debug)]
pub struct WindowSpec {
    pub owner: AppId,
    pub kind: WindowKind,
    pub rect: Rect,
    pub alpha: f64,
    pub touchable: bool,
    pub ttl: Option<SimDuration>,
    pub views: Vec<View>,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct WindowId(pub u64);

impl fmt::Display for WindowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

#[derive(Clone, Debug)]
pub struct Window {
    pub id: WindowId,
    pub owner: AppId,
    pub kind: WindowKind,
    pub rect: Rect,
    pub alpha: f64,
    pub touchable: bool,
    pub created_at: SimTime,
    pub ttl: Option<SimDuration>,
    pub views: Vec<View>,
    pub frame_marked: bool,
}

impl Window {
    fn screen_rect_of_view(&self, view: &View) -> Rect {
        view.rect.translated(self.rect.x, self.rect.y)
    }

    fn in_frame_band(&self, p: Point) -> bool {
        if !self.rect.contains(p) {
            return false;
        }
        let dx = (p.x - self.rect.x).min(self.rect.x + self.rect.w - 1 - p.x);
        let dy = (p.y - self.rect.y).min(self.rect.y + self.rect.h - 1 - p.y);
        dx < FRAME_BAND_PX || dy < FRAME_BAND_PX
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TouchEvent {
    pub point: Point,
    pub at: SimTime,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum DispatchResult {
    DeliveredTo {
        window: WindowId,
        view: Option<String>,
    },
    Discarded,
    NoTarget,
}

/// Content source of one composited pixel.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PixelSample {
    /// No visible window covers the pixel.
    Background,
    /// Hazard stripe band of a frame-marked overlay.
    Hazard { window: WindowId },
    Solid { window: WindowId },
    QrModule { window: WindowId, dark: bool },
    Text { window: WindowId },
}

/// Row-major pixel samples over a region.
pub struct PixelMap {
    pub region: Rect,
    pub pixels: Vec<PixelSample>,
}

impl PixelMap {
    pub fn get(&self, x: i32, y: i32) -> PixelSample {
        debug_assert!(self.region.contains(Point { x, y }));
        let ix = (y - self.region.y) as usize * self.region.w as usize
            + (x - self.region.x) as usize;
        self.pixels[ix]
    }
}

/// Result of pointing a camera at a screen region: the module grid
/// sampled from the composite plus whether any hazard striping was
/// visible inside the region.
pub struct ScanCapture {
    pub matrix: QrMatrix,
    pub hazard_seen: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowError {
    #[error("app {app} lacks the permission required for {kind:?}")]
    PermissionDenied { app: AppId, kind: String },
    #[error("overlay rejected: it would cover a sensitive view")]
    RejectedBySensitivePolicy,
    #[error("unknown window {0}")]
    UnknownWindow(WindowId),
    #[error("unknown app {0}")]
    UnknownApp(AppId),
    #[error("invalid window spec: {0}")]
    InvalidWindow(String),
    #[error("region escapes the screen bounds")]
    OutOfBounds,
}

pub struct WindowStack {
    screen: Rect,
    apps: BTreeMap<AppId, Permissions>,
    activities: Vec<Window>,
    overlays: Vec<Window>,
    next_id: u64,
    defense: DefenseConfig,
}

impl WindowStack {
    pub fn new(defense: DefenseConfig) -> Self {
        WindowStack {
            screen: Rect::new(0, 0, SCREEN_WIDTH, SCREEN_HEIGHT),
            apps: BTreeMap::new(),
            activities: Vec::new(),
            overlays: Vec::new(),
            next_id: 1,
            defense,
        }
    }

    pub fn screen(&self) -> Rect {
        self.screen
    }

    pub fn defense(&self) -> &DefenseConfig {
        &self.defense
    }

    /// Register an app with its (immutable) permission set.
    pub fn register_app(&mut self, name: &str, permissions: Permissions) -> AppId {
        let id = AppId::new(name);
        debug_assert!(!self.apps.contains_key(&id), "app names are unique");
        self.apps.insert(id.clone(), permissions);
        id
    }

    pub fn permissions_of(&self, app: &AppId) -> Option<Permissions> {
        self.apps.get(app).copied()
    }

    fn validate_spec(&self, spec: &WindowSpec) -> Result<(), WindowError> {
        if !(0.0..=1.0).contains(&spec.alpha) {
            return Err(WindowError::InvalidWindow(format!(
                "alpha {} outside [0,1]",
                spec.alpha
            )));
        }
        if spec.rect.w <= 0
            || spec.rect.h <= 0
            || spec.rect.x < 0
            || spec.rect.y < 0
            || spec.rect.x + spec.rect.w > self.screen.w
            || spec.rect.y + spec.rect.h > self.screen.h
        {
            return Err(WindowError::InvalidWindow(
                "rect escapes the screen bounds".into(),
            ));
        }
        if spec.ttl.is_some() && spec.kind != WindowKind::ToastOverlay {
            return Err(WindowError::InvalidWindow(
                "only toast overlays carry a ttl".into(),
            ));
        }
        for view in &spec.views {
            if !spec.rect.contains_relative(&view.rect) {
                return Err(WindowError::InvalidWindow(format!(
                    "view {} escapes the window rect",
                    view.tag
                )));
            }
        }
        Ok(())
    }

    /// Add a window. Overlays land above every activity, newest on top;
    /// a new activity becomes the foreground activity.
    pub fn add_window(&mut self, spec: WindowSpec, now: SimTime) -> Result<WindowId, WindowError> {
        self.validate_spec(&spec)?;
        let permissions = self
            .apps
            .get(&spec.owner)
            .copied()
            .ok_or_else(|| WindowError::UnknownApp(spec.owner.clone()))?;
        if spec.kind == WindowKind::AlertOverlay && !permissions.alert_window {
            return Err(WindowError::PermissionDenied {
                app: spec.owner.clone(),
                kind: "AlertOverlay".into(),
            });
        }

        let mut frame_marked = false;
        if spec.kind.is_overlay() {
            match apply_overlay_policy(&spec, &self.defense, self) {
                OverlayVerdict::Reject => return Err(WindowError::RejectedBySensitivePolicy),
                OverlayVerdict::Admit { frame_marked: f } => frame_marked = f,
            }
        }

        let ttl = match spec.kind {
            WindowKind::ToastOverlay => Some(spec.ttl.unwrap_or(TOAST_DEFAULT_TTL)),
            _ => None,
        };
        let id = WindowId(self.next_id);
        self.next_id += 1;
        let window = Window {
            id,
            owner: spec.owner,
            kind: spec.kind,
            rect: spec.rect,
            alpha: spec.alpha,
            touchable: spec.touchable,
            created_at: now,
            ttl,
            views: spec.views,
            frame_marked,
        };
        if spec.kind.is_overlay() {
            self.overlays.push(window);
        } else {
            self.activities.push(window);
        }
        Ok(id)
    }

    pub fn remove_window(&mut self, id: WindowId) -> Result<(), WindowError> {
        if let Some(ix) = self.overlays.iter().position(|w| w.id == id) {
            self.overlays.remove(ix);
            return Ok(());
        }
        if let Some(ix) = self.activities.iter().position(|w| w.id == id) {
            self.activities.remove(ix);
            return Ok(());
        }
        Err(WindowError::UnknownWindow(id))
    }

    pub fn contains_window(&self, id: WindowId) -> bool {
        self.window(id).is_some()
    }

    pub fn window(&self, id: WindowId) -> Option<&Window> {
        self.overlays
            .iter()
            .chain(self.activities.iter())
            .find(|w| w.id == id)
    }

    /// Replace the views of an existing window (an app redrawing its own
    /// content). Z-order is unchanged.
    pub fn update_views(&mut self, id: WindowId, views: Vec<View>) -> Result<(), WindowError> {
        let rect = self
            .window(id)
            .map(|w| w.rect)
            .ok_or(WindowError::UnknownWindow(id))?;
        for view in &views {
            if !rect.contains_relative(&view.rect) {
                return Err(WindowError::InvalidWindow(format!(
                    "view {} escapes the window rect",
                    view.tag
                )));
            }
        }
        let window = self
            .overlays
            .iter_mut()
            .chain(self.activities.iter_mut())
            .find(|w| w.id == id)
            .expect("checked above");
        window.views = views;
        Ok(())
    }

    /// Remove every toast whose lifetime has elapsed.
    pub fn expire_toasts(&mut self, now: SimTime) -> Vec<WindowId> {
        let mut removed = Vec::new();
        self.overlays.retain(|w| {
            let expired = match (w.kind, w.ttl) {
                (WindowKind::ToastOverlay, Some(ttl)) => w.created_at + ttl <= now,
                _ => false,
            };
            if expired {
                removed.push(w.id);
            }
            !expired
        });
        removed
    }

    /// App owning the topmost activity window.
    pub fn foreground(&self) -> Option<&AppId> {
        self.activities.last().map(|w| &w.owner)
    }

    /// Raise `app`'s activity to the top of the activity layer.
    pub fn set_foreground(&mut self, app: &AppId) -> Result<(), WindowError> {
        let ix = self
            .activities
            .iter()
            .rposition(|w| &w.owner == app)
            .ok_or_else(|| WindowError::UnknownApp(app.clone()))?;
        let window = self.activities.remove(ix);
        self.activities.push(window);
        Ok(())
    }

    /// Windows from topmost to bottommost.
    pub fn windows_top_down(&self) -> impl Iterator<Item = &Window> {
        self.overlays.iter().rev().chain(self.activities.iter().rev())
    }

    /// `(id, kind, z)` triples, z increasing towards the viewer.
    pub fn z_snapshot(&self) -> Vec<(WindowId, WindowKind, usize)> {
        self.activities
            .iter()
            .chain(self.overlays.iter())
            .enumerate()
            .map(|(z, w)| (w.id, w.kind, z))
            .collect()
    }

    /// Screen rects of sensitive views owned by apps other than `owner`.
    pub fn sensitive_rects_excluding(&self, owner: &AppId) -> Vec<Rect> {
        self.windows_top_down()
            .filter(|w| &w.owner != owner)
            .flat_map(|w| {
                w.views
                    .iter()
                    .filter(|v| v.sensitive)
                    .map(move |v| w.screen_rect_of_view(v))
            })
            .collect()
    }

    /// Walk the stack top-down and deliver the touch to the first
    /// touchable window containing the point. Non-touchable windows pass
    /// the touch through but still obscure views below them.
    pub fn dispatch_touch(&self, ev: TouchEvent) -> DispatchResult {
        let mut covering_owners: Vec<&AppId> = Vec::new();
        for window in self.windows_top_down() {
            if !window.rect.contains(ev.point) {
                continue;
            }
            if !window.touchable {
                covering_owners.push(&window.owner);
                continue;
            }
            let hit_view = window
                .views
                .iter()
                .rev()
                .find(|v| window.screen_rect_of_view(v).contains(ev.point));
            if window.kind == WindowKind::Activity {
                if let Some(view) = hit_view {
                    let obscured = covering_owners.iter().any(|o| *o != &window.owner);
                    if view.filter_touches_when_obscured && obscured {
                        return DispatchResult::Discarded;
                    }
                }
            }
            return DispatchResult::DeliveredTo {
                window: window.id,
                view: hit_view.map(|v| v.tag.clone()),
            };
        }
        DispatchResult::NoTarget
    }

    /// Content source of the pixel at `p`: the topmost window above the
    /// opacity threshold, except that the hazard band of a frame-marked
    /// overlay renders regardless of the overlay's own alpha.
    pub fn pixel_at(&self, p: Point) -> PixelSample {
        for window in self.windows_top_down() {
            if !window.rect.contains(p) {
                continue;
            }
            if window.frame_marked && window.in_frame_band(p) {
                return PixelSample::Hazard { window: window.id };
            }
            if window.alpha <= OPACITY_THRESHOLD {
                continue;
            }
            let view = window
                .views
                .iter()
                .rev()
                .find(|v| window.screen_rect_of_view(v).contains(p));
            return match view {
                Some(v) => match &v.content {
                    ViewContent::SolidColor => PixelSample::Solid { window: window.id },
                    ViewContent::Label(_) => PixelSample::Text { window: window.id },
                    ViewContent::QrContent(matrix) => {
                        let rect = window.screen_rect_of_view(v);
                        let dark = qr_dark_at(matrix, rect, p);
                        PixelSample::QrModule {
                            window: window.id,
                            dark,
                        }
                    }
                },
                None => PixelSample::Solid { window: window.id },
            };
        }
        PixelSample::Background
    }

    /// Full per-pixel composite of `region`.
    pub fn composite(&self, region: Rect) -> Result<PixelMap, WindowError> {
        if region.w <= 0
            || region.h <= 0
            || region.x < 0
            || region.y < 0
            || region.x + region.w > self.screen.w
            || region.y + region.h > self.screen.h
        {
            return Err(WindowError::OutOfBounds);
        }
        let mut pixels = Vec::with_capacity((region.w * region.h) as usize);
        for y in region.y..region.y + region.h {
            for x in region.x..region.x + region.w {
                pixels.push(self.pixel_at(Point { x, y }));
            }
        }
        Ok(PixelMap { region, pixels })
    }

    /// Sample `region` as a camera would: one probe per module center,
    /// plus a hazard check over the stripe bands of any frame-marked
    /// window intersecting the region.
    pub fn scan_region(&self, region: Rect) -> ScanCapture {
        let mut modules = [[false; GRID_SIZE]; GRID_SIZE];
        for (r, row) in modules.iter_mut().enumerate() {
            for (c, module) in row.iter_mut().enumerate() {
                let p = module_sample_point(region, r, c);
                *module = matches!(self.pixel_at(p), PixelSample::QrModule { dark: true, .. });
            }
        }
        ScanCapture {
            matrix: QrMatrix::from_modules(modules),
            hazard_seen: self.hazard_in_region(region),
        }
    }

    fn hazard_in_region(&self, region: Rect) -> bool {
        for window in self.windows_top_down() {
            if !window.frame_marked || !window.rect.intersects(&region) {
                continue;
            }
            let r = window.rect;
            let band = FRAME_BAND_PX.min(r.w).min(r.h);
            let strips = [
                Rect::new(r.x, r.y, r.w, band),
                Rect::new(r.x, r.y + r.h - band, r.w, band),
                Rect::new(r.x, r.y, band, r.h),
                Rect::new(r.x + r.w - band, r.y, band, r.h),
            ];
            for strip in strips {
                if let Some(overlap) = intersection(&strip, &region) {
                    // Occlusion-aware: confirm the stripe actually shows.
                    if matches!(
                        self.pixel_at(overlap.center()),
                        PixelSample::Hazard { .. }
                    ) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

fn intersection(a: &Rect, b: &Rect) -> Option<Rect> {
    let x = a.x.max(b.x);
    let y = a.y.max(b.y);
    let x2 = (a.x + a.w).min(b.x + b.w);
    let y2 = (a.y + a.h).min(b.y + b.h);
    if x < x2 && y < y2 {
        Some(Rect::new(x, y, x2 - x, y2 - y))
    } else {
        None
    }
}

/// Module value shown at pixel `p` of a QR view occupying `rect`. The
/// grid spans the rect including the quiet zone.
fn qr_dark_at(matrix: &QrMatrix, rect: Rect, p: Point) -> bool {
    let n = CELLS_WITH_QUIET as i32;
    let col = (p.x - rect.x) as i64 * n as i64 / rect.w as i64;
    let row = (p.y - rect.y) as i64 * n as i64 / rect.h as i64;
    let (row, col) = (row as i32, col as i32);
    let q = QUIET_ZONE as i32;
    if row < q || col < q || row >= q + GRID_SIZE as i32 || col >= q + GRID_SIZE as i32 {
        return false;
    }
    matrix.get((row - q) as usize, (col - q) as usize)
}

/// Pixel at the center of module `(row, col)` of a QR view occupying
/// `rect`. Exact for rects at least `2 * CELLS_WITH_QUIET` pixels wide.
pub fn module_sample_point(rect: Rect, row: usize, col: usize) -> Point {
    let n = CELLS_WITH_QUIET as i64;
    let cell_r = (row + QUIET_ZONE) as i64;
    let cell_c = (col + QUIET_ZONE) as i64;
    Point {
        x: rect.x + ((2 * cell_c + 1) * rect.w as i64 / (2 * n)) as i32,
        y: rect.y + ((2 * cell_r + 1) * rect.h as i64 / (2 * n)) as i32,
    }
}
