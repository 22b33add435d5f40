//! Windowed fusion of gesture events with an external audio-emotion stream.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::gesture::{GestureEvent, GestureKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Happy,
    Neutral,
    Sad,
    Distressed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioEmotionEvent {
    pub t: f64,
    pub label: Emotion,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Visual,
    Audio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserState {
    pub t: f64,
    pub emotion: Emotion,
    pub intensity: f64,
    pub active_gesture: Option<GestureKind>,
    pub sources: BTreeSet<Source>,
}

impl UserState {
    pub fn neutral(t: f64) -> Self {
        Self { t, emotion: Emotion::Neutral, intensity: 0.0, active_gesture: None, sources: BTreeSet::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Length of the trailing window, seconds.
    pub window: f64,
    /// Audio events below this confidence do not adjust a visual estimate.
    pub audio_min_confidence: f64,
    pub wave_intensity: f64,
    pub touch_intensity: f64,
    pub heart_intensity: f64,
    pub happy_adjust: f64,
    pub neutral_adjust: f64,
    pub negative_adjust: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            window: 1.0,
            audio_min_confidence: 0.5,
            wave_intensity: 0.6,
            touch_intensity: 0.7,
            heart_intensity: 0.9,
            happy_adjust: 0.1,
            neutral_adjust: 0.0,
            negative_adjust: -0.2,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.window > 0.0 && self.window.is_finite()) {
            return Err("fusion window must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.audio_min_confidence) {
            return Err("audio_min_confidence must lie in [0, 1]".into());
        }
        for v in [self.wave_intensity, self.touch_intensity, self.heart_intensity] {
            if !(0.0..=1.0).contains(&v) {
                return Err("gesture intensities must lie in [0, 1]".into());
            }
        }
        Ok(())
    }

    /// Base emotion and intensity implied by a gesture.
    pub fn gesture_emotion(&self, kind: GestureKind) -> (Emotion, f64) {
        match kind {
            GestureKind::GreetingWave => (Emotion::Happy, self.wave_intensity),
            GestureKind::AffectionateTouch => (Emotion::Happy, self.touch_intensity),
            GestureKind::HeartShape => (Emotion::Happy, self.heart_intensity),
        }
    }

    fn audio_adjust(&self, label: Emotion) -> f64 {
        match label {
            Emotion::Happy => self.happy_adjust,
            Emotion::Neutral => self.neutral_adjust,
            Emotion::Sad | Emotion::Distressed => self.negative_adjust,
        }
    }
}

/// Per-session fusion buffer holding the events still inside the window.
#[derive(Debug, Clone)]
pub struct FusionState {
    config: FusionConfig,
    gestures: VecDeque<GestureEvent>,
    audio: VecDeque<AudioEmotionEvent>,
}

impl FusionState {
    pub fn new(config: FusionConfig) -> Self {
        Self { config, gestures: VecDeque::new(), audio: VecDeque::new() }
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    /// Adds newly arrived events and evaluates the state at time `t`.
    pub fn step(&mut self, gestures: &[GestureEvent], audio: &[AudioEmotionEvent], t: f64) -> UserState {
        self.gestures.extend(gestures.iter().copied());
        self.audio.extend(audio.iter().copied());
        let w = self.config.window;
        self.gestures.retain(|g| t - g.t_end <= w);
        self.audio.retain(|a| t - a.t <= w);

        let in_window = |at: f64| at <= t && t - at <= w;
        let gesture = self.gestures.iter().filter(|g| in_window(g.t_end)).max_by(|a, b| a.t_end.total_cmp(&b.t_end));
        let audio = self.audio.iter().filter(|a| in_window(a.t)).max_by(|a, b| a.t.total_cmp(&b.t));

        let mut state = UserState::neutral(t);
        match (gesture, audio) {
            (None, None) => {}
            (None, Some(a)) => {
                state.emotion = a.label;
                state.intensity = a.confidence.clamp(0.0, 1.0);
                state.sources.insert(Source::Audio);
            }
            (Some(g), a) => {
                let (emotion, base) = self.config.gesture_emotion(g.kind);
                state.emotion = emotion;
                state.intensity = base;
                state.active_gesture = Some(g.kind);
                state.sources.insert(Source::Visual);
                if let Some(a) = a.filter(|a| a.confidence >= self.config.audio_min_confidence) {
                    state.intensity = (base + self.config.audio_adjust(a.label)).clamp(0.0, 1.0);
                    if a.label == Emotion::Distressed {
                        state.emotion = Emotion::Distressed;
                    }
                    state.sources.insert(Source::Audio);
                }
            }
        }
        state
    }
}

impl Default for FusionState {
    fn default() -> Self {
        Self::new(FusionConfig::default())
    }
}
