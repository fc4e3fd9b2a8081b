//! Selection cues: the dwell cursor state machine, reticle feedback,
//! interactive target sets, and the counterbalanced assignment of
//! experiment conditions to participants.

use serde::{Deserialize, Serialize};

use crate::city::{Building, CityScene, Rect};
use crate::content::ContentKind;

/// Accumulated dwell within this much of the threshold counts as reached,
/// so `0.1` ten times activates at `T = 1`.
const DWELL_EPS: f64 = 1e-9;
/// Halo rings extend this far (meters) beyond the footprint.
const HALO_MARGIN: f64 = 1.5;
/// Roof signs float this far above the roof, with this edge size.
const SIGN_LIFT: f64 = 3.0;
const SIGN_SIZE: f64 = 4.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CueError {
    #[error("invalid cue configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown test set {0}")]
    UnknownTestSet(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CursorStyle {
    Simple,
    Loading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// The highlight object is what the cursor must point at.
    Halo,
    /// The building mesh itself is the target.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighlightStyle {
    None,
    Halo,
    RoofSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CueConfig {
    pub cursor_style: CursorStyle,
    pub target_mode: TargetMode,
    pub highlight_style: HighlightStyle,
    /// Dwell time before activation, seconds.
    pub dwell_threshold: f64,
    /// Reticle scale while over an interactive target.
    pub widen_factor: f64,
}

impl Default for CueConfig {
    fn default() -> Self {
        Self {
            cursor_style: CursorStyle::Loading,
            target_mode: TargetMode::Direct,
            highlight_style: HighlightStyle::Halo,
            dwell_threshold: 1.0,
            widen_factor: 2.0,
        }
    }
}

impl CueConfig {
    pub fn validate(&self) -> Result<(), CueError> {
        let bad = |m: String| Err(CueError::InvalidConfig(m));
        if !(self.dwell_threshold > 0.0 && self.dwell_threshold.is_finite()) {
            return bad(format!("dwell threshold must be positive, got {}", self.dwell_threshold));
        }
        if !(self.widen_factor > 1.0 && self.widen_factor.is_finite()) {
            return bad(format!("widen factor must exceed 1, got {}", self.widen_factor));
        }
        if self.target_mode == TargetMode::Halo && self.highlight_style == HighlightStyle::None {
            return bad("halo targeting needs a highlight to point at".into());
        }
        Ok(())
    }
}

/// Highlight drawn for a building; fillers never get one.
pub fn highlight_for(building: &Building, config: &CueConfig) -> HighlightStyle {
    if building.is_key() {
        config.highlight_style
    } else {
        HighlightStyle::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventName {
    HoverEnter,
    HoverExit,
    Activation,
    PathStart,
    PathEnd,
    Teleport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CursorEvent {
    pub name: EventName,
    pub target_id: String,
    /// Cursor time at the tick that emitted the event, seconds.
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Hovering { target: String, elapsed: f64 },
    Activated { target: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CursorState {
    pub phase: Phase,
    /// Sum of all `dt` stepped so far.
    pub time: f64,
}

impl Default for CursorState {
    fn default() -> Self {
        Self { phase: Phase::Idle, time: 0.0 }
    }
}

impl CursorState {
    pub fn target(&self) -> Option<&str> {
        match &self.phase {
            Phase::Idle => None,
            Phase::Hovering { target, .. } | Phase::Activated { target } => Some(target),
        }
    }
}

/// Advances the cursor by `dt` seconds during which it pointed at
/// `hovered`.
///
/// A new target starts a fresh dwell that already includes this step's
/// `dt`; leaving a target resets immediately. Reaching the threshold emits
/// one `Activation` and the cursor then stays activated, silent, until the
/// target is left. Both cursor styles share this timing.
pub fn step_cursor(
    state: &CursorState,
    config: &CueConfig,
    hovered: Option<&str>,
    dt: f64,
) -> (CursorState, Vec<CursorEvent>) {
    let dt = if dt.is_finite() && dt > 0.0 { dt } else { 0.0 };
    let t = state.time + dt;
    let threshold = config.dwell_threshold;
    let mut events = Vec::new();
    let mut emit = |name, target: &str| events.push(CursorEvent { name, target_id: target.to_string(), t });

    let dwell = |target: &str, elapsed: f64, emit: &mut dyn FnMut(EventName, &str)| {
        if elapsed >= threshold - DWELL_EPS {
            emit(EventName::Activation, target);
            Phase::Activated { target: target.to_string() }
        } else {
            Phase::Hovering { target: target.to_string(), elapsed }
        }
    };

    let phase = match (&state.phase, hovered) {
        (Phase::Idle, None) => Phase::Idle,
        (Phase::Hovering { target, .. } | Phase::Activated { target }, None) => {
            emit(EventName::HoverExit, target);
            Phase::Idle
        }
        (Phase::Idle, Some(next)) => {
            emit(EventName::HoverEnter, next);
            dwell(next, dt, &mut emit)
        }
        (Phase::Hovering { target, elapsed }, Some(next)) if target == next => dwell(next, elapsed + dt, &mut emit),
        (Phase::Activated { target }, Some(next)) if target == next => state.phase.clone(),
        (Phase::Hovering { target, .. } | Phase::Activated { target }, Some(next)) => {
            emit(EventName::HoverExit, target);
            emit(EventName::HoverEnter, next);
            dwell(next, dt, &mut emit)
        }
    };
    (CursorState { phase, time: t }, events)
}

/// Tap selection (AR touch): an immediate activation that leaves the dwell
/// state untouched.
pub fn tap_select(state: &CursorState, target_id: &str) -> CursorEvent {
    CursorEvent { name: EventName::Activation, target_id: target_id.to_string(), t: state.time }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReticleParams {
    pub scale: f64,
    /// Dwell progress in `[0, 1]`; only the loading cursor exposes it.
    pub progress: Option<f64>,
}

pub fn reticle_params(state: &CursorState, config: &CueConfig) -> ReticleParams {
    let (scale, progress) = match &state.phase {
        Phase::Idle => (1.0, 0.0),
        Phase::Hovering { elapsed, .. } => (config.widen_factor, (elapsed / config.dwell_threshold).clamp(0.0, 1.0)),
        Phase::Activated { .. } => (config.widen_factor, 1.0),
    };
    ReticleParams {
        scale,
        progress: (config.cursor_style == CursorStyle::Loading).then_some(progress),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum TargetGeometry {
    Building { footprint: Rect, height: f64 },
    Halo { footprint: Rect, height: f64 },
    RoofSign { center: [f64; 3], size: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractiveTarget {
    pub target_id: String,
    pub kind: ContentKind,
    pub building_id: String,
    pub geometry: TargetGeometry,
}

/// What the cursor can select under `config`: the six key buildings
/// themselves, or one highlight object anchored to each of them.
pub fn interactive_targets(scene: &CityScene, config: &CueConfig) -> Result<Vec<InteractiveTarget>, CueError> {
    config.validate()?;
    let targets = scene
        .key_index
        .iter()
        .filter_map(|(kind, id)| scene.building(id).map(|b| (*kind, b)))
        .map(|(kind, b)| {
            let (target_id, geometry) = match (config.target_mode, config.highlight_style) {
                (TargetMode::Direct, _) => {
                    (b.id.clone(), TargetGeometry::Building { footprint: b.footprint, height: b.height })
                }
                (TargetMode::Halo, HighlightStyle::RoofSign) => {
                    let [x, z] = b.centroid();
                    (
                        format!("sign:{}", b.id),
                        TargetGeometry::RoofSign { center: [x, b.height + SIGN_LIFT, z], size: SIGN_SIZE },
                    )
                }
                (TargetMode::Halo, _) => {
                    let f = b.footprint;
                    let ring = Rect::new(f.min_x - HALO_MARGIN, f.min_z - HALO_MARGIN, f.max_x + HALO_MARGIN, f.max_z + HALO_MARGIN);
                    (format!("halo:{}", b.id), TargetGeometry::Halo { footprint: ring, height: b.height })
                }
            };
            InteractiveTarget { target_id, kind, building_id: b.id.clone(), geometry }
        })
        .collect();
    Ok(targets)
}

/// One cell of the 2x2 VR design (cursor style x target mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestSet {
    pub id: u8,
    pub cursor_style: CursorStyle,
    pub target_mode: TargetMode,
}

impl TestSet {
    pub const ALL: [TestSet; 4] = [
        TestSet { id: 1, cursor_style: CursorStyle::Simple, target_mode: TargetMode::Halo },
        TestSet { id: 2, cursor_style: CursorStyle::Simple, target_mode: TargetMode::Direct },
        TestSet { id: 3, cursor_style: CursorStyle::Loading, target_mode: TargetMode::Halo },
        TestSet { id: 4, cursor_style: CursorStyle::Loading, target_mode: TargetMode::Direct },
    ];

    pub fn by_id(id: u8) -> Result<TestSet, CueError> {
        TestSet::ALL.into_iter().find(|t| t.id == id).ok_or(CueError::UnknownTestSet(id))
    }

    /// `base` with this set's cursor and target mode. Halo targeting
    /// switches on halos if `base` had no highlight.
    pub fn cue_config(&self, base: &CueConfig) -> CueConfig {
        let mut cfg = CueConfig { cursor_style: self.cursor_style, target_mode: self.target_mode, ..*base };
        if cfg.target_mode == TargetMode::Halo && cfg.highlight_style == HighlightStyle::None {
            cfg.highlight_style = HighlightStyle::Halo;
        }
        cfg
    }
}

/// VR test sets for a participant: even indices get sets 1 and 4, odd
/// indices 2 and 3; the order within the pair flips every other
/// participant of the same parity.
pub fn assign_test_sets(participant_index: u64) -> (TestSet, TestSet) {
    let (a, b) = if participant_index.is_multiple_of(2) { (0, 3) } else { (1, 2) };
    let (a, b) = (TestSet::ALL[a], TestSet::ALL[b]);
    if (participant_index / 2).is_multiple_of(2) {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArCondition {
    HighlightsOn,
    HighlightsOff,
}

impl ArCondition {
    pub fn cue_config(&self, base: &CueConfig) -> CueConfig {
        let highlight_style = match self {
            ArCondition::HighlightsOff => HighlightStyle::None,
            ArCondition::HighlightsOn if base.highlight_style == HighlightStyle::None => HighlightStyle::Halo,
            ArCondition::HighlightsOn => base.highlight_style,
        };
        CueConfig { highlight_style, target_mode: TargetMode::Direct, ..*base }
    }
}

/// AR highlight conditions: even participants start with highlights on.
pub fn assign_ar_condition(participant_index: u64) -> (ArCondition, ArCondition) {
    if participant_index.is_multiple_of(2) {
        (ArCondition::HighlightsOn, ArCondition::HighlightsOff)
    } else {
        (ArCondition::HighlightsOff, ArCondition::HighlightsOn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::city::{generate_city, LayoutParams};

    fn cfg(t: f64) -> CueConfig {
        CueConfig { dwell_threshold: t, ..CueConfig::default() }
    }

    fn run(config: &CueConfig, trace: &[(Option<&str>, f64)]) -> (CursorState, Vec<CursorEvent>) {
        let mut state = CursorState::default();
        let mut log = Vec::new();
        for &(hovered, dt) in trace {
            let (next, events) = step_cursor(&state, config, hovered, dt);
            state = next;
            log.extend(events);
        }
        (state, log)
    }

    fn names(log: &[CursorEvent]) -> Vec<EventName> {
        log.iter().map(|e| e.name).collect()
    }

    #[test]
    fn idle_stays_idle() {
        let (s, log) = run(&cfg(1.0), &[(None, 0.3), (None, 5.0)]);
        assert_eq!(s.phase, Phase::Idle);
        assert!(log.is_empty());
    }

    #[test]
    fn exit_resets_dwell() {
        // hand trace: enter a (0.4), 0.8, exit, enter a (0.4) -> no activation
        let (s, log) = run(&cfg(1.0), &[(Some("a"), 0.4), (Some("a"), 0.4), (None, 0.1), (Some("a"), 0.4)]);
        use EventName::*;
        assert_eq!(names(&log), [HoverEnter, HoverExit, HoverEnter]);
        assert_eq!(s.phase, Phase::Hovering { target: "a".into(), elapsed: 0.4 });
    }

    #[test]
    fn activation_fires_once() {
        let mut trace = vec![(Some("a"), 0.5), (Some("a"), 0.5)];
        let (_, log) = run(&cfg(1.0), &trace);
        assert_eq!(names(&log), [EventName::HoverEnter, EventName::Activation]);
        trace.extend(std::iter::repeat((Some("a"), 0.5)).take(10));
        let (s, log) = run(&cfg(1.0), &trace);
        assert_eq!(log.iter().filter(|e| e.name == EventName::Activation).count(), 1);
        assert_eq!(s.phase, Phase::Activated { target: "a".into() });
        assert_eq!(log[1].t, 1.0);
    }

    #[test]
    fn switching_targets_restarts() {
        let (s, log) = run(&cfg(1.0), &[(Some("a"), 0.9), (Some("b"), 0.5)]);
        use EventName::*;
        assert_eq!(names(&log), [HoverEnter, HoverExit, HoverEnter]);
        assert_eq!(s.target(), Some("b"));
    }

    #[test]
    fn small_steps_reach_threshold() {
        let trace: Vec<_> = std::iter::repeat((Some("a"), 0.1)).take(10).collect();
        let (s, _) = run(&cfg(1.0), &trace);
        assert!(matches!(s.phase, Phase::Activated { .. }));
    }

    #[test]
    fn reticle_feedback() {
        let loading = cfg(1.0);
        let simple = CueConfig { cursor_style: CursorStyle::Simple, ..loading };
        let idle = CursorState::default();
        assert_eq!(reticle_params(&idle, &loading), ReticleParams { scale: 1.0, progress: Some(0.0) });
        assert_eq!(reticle_params(&idle, &simple), ReticleParams { scale: 1.0, progress: None });
        let hovering = CursorState { phase: Phase::Hovering { target: "a".into(), elapsed: 0.5 }, time: 0.5 };
        assert_eq!(reticle_params(&hovering, &loading), ReticleParams { scale: 2.0, progress: Some(0.5) });
        assert_eq!(reticle_params(&hovering, &simple), ReticleParams { scale: 2.0, progress: None });
    }

    #[test]
    fn tap_is_immediate() {
        let state = CursorState { phase: Phase::Idle, time: 3.0 };
        let ev = tap_select(&state, "kiosk");
        assert_eq!((ev.name, ev.t), (EventName::Activation, 3.0));
    }

    #[test]
    fn config_validity_table() {
        use HighlightStyle as H;
        use TargetMode as M;
        let table = [
            (M::Direct, H::None, true),
            (M::Direct, H::Halo, true),
            (M::Direct, H::RoofSign, true),
            (M::Halo, H::None, false),
            (M::Halo, H::Halo, true),
            (M::Halo, H::RoofSign, true),
        ];
        for (target_mode, highlight_style, ok) in table {
            let c = CueConfig { target_mode, highlight_style, ..CueConfig::default() };
            assert_eq!(c.validate().is_ok(), ok, "{target_mode:?} {highlight_style:?}");
        }
        assert!(cfg(0.0).validate().is_err());
        assert!(CueConfig { widen_factor: 1.0, ..CueConfig::default() }.validate().is_err());
    }

    #[test]
    fn targets_per_mode() {
        let scene = generate_city(4, &LayoutParams::default()).unwrap();
        let direct = interactive_targets(&scene, &CueConfig { target_mode: TargetMode::Direct, ..CueConfig::default() }).unwrap();
        let mut ids: Vec<_> = direct.iter().map(|t| t.target_id.clone()).collect();
        let mut keys: Vec<_> = scene.key_index.values().cloned().collect();
        ids.sort();
        keys.sort();
        assert_eq!(ids, keys);

        let halo = interactive_targets(&scene, &CueConfig { target_mode: TargetMode::Halo, ..CueConfig::default() }).unwrap();
        assert_eq!(halo.len(), 6);
        for t in &halo {
            assert_eq!(t.target_id, format!("halo:{}", t.building_id));
            assert_eq!(scene.key_index[&t.kind], t.building_id);
        }
        let bad = CueConfig { target_mode: TargetMode::Halo, highlight_style: HighlightStyle::None, ..CueConfig::default() };
        assert!(interactive_targets(&scene, &bad).is_err());
    }

    #[test]
    fn fillers_never_highlighted() {
        let scene = generate_city(4, &LayoutParams::default()).unwrap();
        let c = CueConfig { highlight_style: HighlightStyle::RoofSign, ..CueConfig::default() };
        for b in &scene.buildings {
            let h = highlight_for(b, &c);
            assert_eq!(h == HighlightStyle::RoofSign, b.is_key());
        }
    }

    #[test]
    fn first_participants() {
        let ids = |i| {
            let (a, b) = assign_test_sets(i);
            (a.id, b.id)
        };
        assert_eq!(ids(0), (1, 4));
        assert_eq!(ids(1), (2, 3));
        assert_eq!(ids(2), (4, 1));
        assert_eq!(ids(3), (3, 2));
        assert_eq!(assign_ar_condition(0), (ArCondition::HighlightsOn, ArCondition::HighlightsOff));
        assert_eq!(assign_ar_condition(1), (ArCondition::HighlightsOff, ArCondition::HighlightsOn));
    }

    #[test]
    fn test_set_configs() {
        for set in TestSet::ALL {
            let c = set.cue_config(&CueConfig { highlight_style: HighlightStyle::None, ..CueConfig::default() });
            assert!(c.validate().is_ok());
            assert_eq!(c.cursor_style, set.cursor_style);
        }
        assert_eq!(TestSet::by_id(5), Err(CueError::UnknownTestSet(5)));
        let off = ArCondition::HighlightsOff.cue_config(&CueConfig::default());
        assert_eq!(off.highlight_style, HighlightStyle::None);
        assert!(off.validate().is_ok());
    }
}
