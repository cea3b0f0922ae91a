//! Run configuration: a single TOML document covering every module.
//!
//! A document is overlaid on the serialized defaults, so any subset of keys may
//! be given. Keys are addressed by dotted paths (`trainer.stage1.iterations`);
//! an unknown path is rejected with the full list of valid ones.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::annealing::{BoundsPreset, NoiseBoundSchedule};
use crate::camera::DEFAULT_NEAR_CLIP;
use crate::density::DensityControlConfig;
use crate::diffusion::{NoiseSchedule, NoiseScheduleSpec, SdsWeights};
use crate::error::{Error, Result};
use crate::guidance::{GuidanceSpace, RemoteConfig};
use crate::optim::{AdamConfig, LearningRates};
use crate::rasterizer::RenderSettings;
use crate::scene::SceneInit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the training RNG; scene initialization has its own seed.
    pub seed: u64,
    pub prompt: String,
    pub scene: SceneInit,
    pub render: RenderSettings,
    pub diffusion: DiffusionConfig,
    pub guidance: GuidanceConfig,
    pub optimizer: AdamConfig,
    pub density: DensityControlConfig,
    pub trainer: TrainerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            prompt: "a DSLR photo of a ceramic owl".into(),
            scene: SceneInit::default(),
            render: RenderSettings::default(),
            diffusion: DiffusionConfig::default(),
            guidance: GuidanceConfig::default(),
            optimizer: AdamConfig::default(),
            density: DensityControlConfig::default(),
            trainer: TrainerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub schedule: NoiseScheduleSpec,
    pub weights: SdsWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceKind {
    Remote,
    Oracle,
    Null,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub kind: GuidanceKind,
    pub remote: RemoteConfig,
    pub oracle: OracleConfig,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            kind: GuidanceKind::Remote,
            remote: RemoteConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

/// Target views for the oracle provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// `"three_gaussians"` for the built-in scene, otherwise a PLY path.
    pub target: String,
    pub train_views: usize,
    pub held_out_views: usize,
    /// Seeds the target camera placement.
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            target: BUILTIN_TARGET.into(),
            train_views: 16,
            held_out_views: 4,
            seed: 1,
        }
    }
}

pub const BUILTIN_TARGET: &str = "three_gaussians";

/// Orbit camera distribution; azimuth is always uniform in `[0°, 360°)` and
/// every camera looks at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraRanges {
    pub radius: [f64; 2],
    /// Degrees.
    pub elevation: [f64; 2],
    /// Vertical field of view, degrees.
    pub fov: [f64; 2],
}

impl Default for CameraRanges {
    fn default() -> Self {
        Self {
            radius: [2.5, 4.0],
            elevation: [-10.0, 45.0],
            fov: [40.0, 70.0],
        }
    }
}

impl CameraRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !(ordered(self.radius) && self.radius[0] > DEFAULT_NEAR_CLIP) {
            return Err(Error::Config(format!(
                "camera radius range {:?} must be ordered and above the near clip {DEFAULT_NEAR_CLIP}",
                self.radius
            )));
        }
        if !(ordered(self.elevation) && self.elevation[0] > -90.0 && self.elevation[1] < 90.0) {
            return Err(Error::Config(format!(
                "camera elevation range {:?} must be ordered and inside (-90, 90)",
                self.elevation
            )));
        }
        if !(ordered(self.fov) && self.fov[0] > 0.0 && self.fov[1] < 180.0) {
            return Err(Error::Config(format!(
                "camera fov range {:?} must be ordered and inside (0, 180)",
                self.fov
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    /// Uniform gray level in `[0, 1]`, drawn per iteration.
    RandomGray,
}

/// `"random_gray"` or an RGB triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Background {
    Mode(BackgroundMode),
    Fixed([f64; 3]),
}

impl Background {
    pub fn fixed(&self) -> Option<[f64; 3]> {
        match self {
            Background::Fixed(c) => Some(*c),
            Background::Mode(_) => None,
        }
    }
}

/// A named preset or explicit `[p, lo, hi]` breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseBounds {
    Preset(BoundsPreset),
    Breakpoints(NoiseBoundSchedule),
}

impl NoiseBounds {
    pub fn schedule(&self) -> NoiseBoundSchedule {
        match self {
            NoiseBounds::Preset(p) => p.schedule(),
            NoiseBounds::Breakpoints(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub enabled: bool,
    /// Square render side, pixels.
    pub resolution: usize,
    pub iterations: usize,
    pub guidance_space: GuidanceSpace,
    pub guidance_scale: f64,
    pub learning_rates: LearningRates,
    pub density_control_enabled: bool,
    pub noise_bounds: NoiseBounds,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self::stage1()
    }
}

impl StageConfig {
    pub fn stage1() -> Self {
        let d = DensityControlConfig::default();
        Self {
            enabled: true,
            resolution: 64,
            iterations: d.densify_end + d.finetune_iterations,
            guidance_space: GuidanceSpace::Image,
            guidance_scale: 20.0,
            learning_rates: LearningRates::default(),
            density_control_enabled: true,
            noise_bounds: NoiseBounds::Preset(BoundsPreset::Annealed),
        }
    }

    pub fn stage2() -> Self {
        Self {
            enabled: true,
            resolution: 512,
            iterations: 3000,
            guidance_space: GuidanceSpace::Latent,
            guidance_scale: 100.0,
            learning_rates: LearningRates::default(),
            density_control_enabled: false,
            noise_bounds: NoiseBounds::Preset(BoundsPreset::Annealed),
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::Config(format!(
                "{name}.resolution must be at least 8, got {}",
                self.resolution
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config(format!("{name}.iterations must be at least 1")));
        }
        if !(self.guidance_scale.is_finite() && self.guidance_scale >= 0.0) {
            return Err(Error::Config(format!(
                "{name}.guidance_scale must be finite and non-negative, got {}",
                self.guidance_scale
            )));
        }
        let lr = &self.learning_rates;
        if [lr.position, lr.scale, lr.rotation, lr.opacity, lr.color]
            .iter()
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::Config(format!(
                "{name}.learning_rates must all be positive, got {lr:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub cameras: CameraRanges,
    pub background: Background,
    /// Checkpoint cadence in iterations; 0 writes only at stage end.
    pub checkpoint_every: usize,
    /// Visualization cadence in iterations; 0 disables dumps.
    pub visualize_every: usize,
    /// Fixed probe cameras used for pruning and visualization.
    pub probe_views: usize,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            cameras: CameraRanges::default(),
            background: Background::Mode(BackgroundMode::RandomGray),
            checkpoint_every: 1000,
            visualize_every: 1000,
            probe_views: 4,
            stage1: StageConfig::stage1(),
            stage2: StageConfig::stage2(),
        }
    }
}

impl TrainerConfig {
    /// Stage by number, 1 or 2.
    pub fn stage(&self, stage: u8) -> &StageConfig {
        match stage {
            1 => &self.stage1,
            2 => &self.stage2,
            _ => panic!("stage must be 1 or 2, got {stage}"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        NoiseSchedule::new(self.diffusion.schedule)?;
        self.density.validate()?;
        self.trainer.cameras.validate()?;
        self.trainer.stage1.validate("trainer.stage1")?;
        self.trainer.stage2.validate("trainer.stage2")?;
        if !self.trainer.stage1.enabled && !self.trainer.stage2.enabled {
            return Err(Error::Config("at least one stage must be enabled".into()));
        }
        if self.trainer.probe_views == 0 {
            return Err(Error::Config("trainer.probe_views must be at least 1".into()));
        }
        if let Some(c) = self.trainer.background.fixed() {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!("background color {c:?} outside [0, 1]")));
            }
        }
        let r = &self.render;
        if !(r.low_pass >= 0.0
            && r.min_alpha >= 0.0
            && r.max_alpha > 0.0
            && r.max_alpha < 1.0
            && r.min_transmittance >= 0.0
            && r.tile_size > 0)
        {
            return Err(Error::Config(format!("invalid render settings {r:?}")));
        }
        let a = &self.optimizer;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {a:?}")));
        }
        if self.guidance.kind == GuidanceKind::Oracle {
            if self.trainer.background.fixed().is_none() {
                return Err(Error::Config(
                    "the oracle provider compares against fixed renders and needs a fixed \
                     trainer.background color"
                        .into(),
                ));
            }
            let o = &self.guidance.oracle;
            if o.train_views == 0 || o.held_out_views == 0 {
                return Err(Error::Config(
                    "guidance.oracle needs at least one training and one held-out view".into(),
                ));
            }
        }
        if self.guidance.remote.timeout_secs.is_nan() || self.guidance.remote.timeout_secs <= 0.0 {
            return Err(Error::Config("guidance.remote.timeout_secs must be positive".into()));
        }
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// Every addressable dotted key with its default value.
    pub fn valid_keys() -> Vec<String> {
        let mut out = Vec::new();
        flatten_keys(&defaults_value(), "", &mut out);
        out
    }

    /// Parses a TOML document and applies `key=value` overrides on top of it.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("TOML: {e}")))?;
        let mut user = serde_json::to_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        Self::from_value(user)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Defaults plus overrides, without a file.
    pub fn with_overrides(overrides: &[String]) -> Result<Self> {
        Self::from_toml_str("", overrides)
    }

    /// Overlays a partial JSON document on the defaults and validates the result.
    pub fn from_value(user: Value) -> Result<Self> {
        let defaults = defaults_value();
        let mut unknown = Vec::new();
        check_keys(&user, &defaults, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown key(s) {}; valid keys are:\n  {}",
                unknown.join(", "),
                Self::valid_keys().join("\n  ")
            )));
        }
        let mut merged = defaults;
        merge(&mut merged, user);
        let config: RunConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

fn defaults_value() -> Value {
    serde_json::to_value(RunConfig::default()).expect("defaults serialize")
}

fn flatten_keys(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                flatten_keys(child, &join(prefix, k), out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Collects user keys with no counterpart in the defaults. A default leaf
/// accepts any value shape.
fn check_keys(user: &Value, defaults: &Value, prefix: &str, unknown: &mut Vec<String>) {
    let (Value::Object(u), Value::Object(d)) = (user, defaults) else {
        return;
    };
    for (k, child) in u {
        match d.get(k) {
            None => unknown.push(join(prefix, k)),
            Some(def) => check_keys(child, def, &join(prefix, k), unknown),
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.c=value`; the value is read as a TOML literal and falls back to a bare string.
fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override {spec:?} has an empty key segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .map(|v| serde_json::to_value(v).expect("TOML values convert"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        node = node
            .as_object_mut()
            .expect("object")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    if !node.is_object() {
        *node = Value::Object(Map::new());
    }
    node.as_object_mut()
        .expect("object")
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_toml_str("", &[]).unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn stage2_keeps_its_own_defaults_when_partially_given() {
        let c = RunConfig::from_toml_str("[trainer.stage2]\niterations = 10\n", &[]).unwrap();
        assert_eq!(c.trainer.stage2.iterations, 10);
        assert_eq!(c.trainer.stage2.resolution, 512);
        assert_eq!(c.trainer.stage2.guidance_space, GuidanceSpace::Latent);
        assert!(!c.trainer.stage2.density_control_enabled);
    }

    #[test]
    fn override_sets_nested_values() {
        let c = RunConfig::with_overrides(&[
            "trainer.stage1.iterations=10".into(),
            "prompt=a red fox".into(),
            "trainer.stage1.noise_bounds=\"fixed_low\"".into(),
            "trainer.cameras.radius=[3.0, 3.5]".into(),
            "guidance.remote.timeout_secs=5".into(),
        ])
        .unwrap();
        assert_eq!(c.trainer.stage1.iterations, 10);
        assert_eq!(c.prompt, "a red fox");
        assert_eq!(c.trainer.stage1.noise_bounds, NoiseBounds::Preset(BoundsPreset::FixedLow));
        assert_eq!(c.trainer.cameras.radius, [3.0, 3.5]);
        assert_eq!(c.guidance.remote.timeout_secs, 5.0);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = RunConfig::with_overrides(&["trainer.stage1.iters=10".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("trainer.stage1.iters"), "{msg}");
        for key in RunConfig::valid_keys() {
            assert!(msg.contains(&key), "missing {key}");
        }
        assert!(RunConfig::from_toml_str("[scene]\nbogus = 1\n", &[]).is_err());
    }

    #[test]
    fn explicit_breakpoints_and_fixed_background() {
        let c = RunConfig::from_toml_str(
            "[trainer]\nbackground = [0.0, 0.0, 0.0]\n[trainer.stage1]\nnoise_bounds = [[0, 0.1, 0.9], [1, 0.1, 0.5]]\n",
            &[],
        )
        .unwrap();
        assert_eq!(c.trainer.background, Background::Fixed([0.0; 3]));
        assert_eq!(c.trainer.stage1.noise_bounds.schedule().bounds_at_fraction(1.0), (0.1, 0.5));
        assert!(RunConfig::from_toml_str("[trainer.stage1]\nnoise_bounds = [[0, 0.5, 0.4], [1, 0.1, 0.2]]\n", &[]).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for o in [
            "trainer.stage1.resolution=4",
            "trainer.stage1.iterations=0",
            "trainer.stage2.learning_rates.position=0",
            "trainer.cameras.elevation=[10.0, -10.0]",
            "guidance.kind=\"oracle\"",
            "diffusion.schedule.T=0",
            "density.densify_interval=0",
            "no_equals_sign",
        ] {
            let r = RunConfig::with_overrides(&[o.to_string()]);
            assert!(matches!(r, Err(Error::Config(_))), "{o}: {r:?}");
        }
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let mut c = RunConfig::default();
        c.trainer.background = Background::Fixed([0.5; 3]);
        let text = c.to_toml_string();
        let back = RunConfig::from_toml_str(&text, &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 12);
        assert_ne!(c.hash(), RunConfig::default().hash());
    }
}
