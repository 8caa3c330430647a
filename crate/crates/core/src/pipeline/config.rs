//! Scenario configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::yuv::YuvGeometry;
use crate::image::ChromaFormat;

use super::codec::CommandCodec;

/// Which resampler pair wraps the codec.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Full resolution, no adaptation.
    Anchor,
    /// Lanczos3 down, Lanczos3 up.
    S1,
    /// DSNet down, Lanczos3 up.
    S2,
    /// Lanczos3 down, external CNN up.
    S3,
    /// DSNet down, external CNN up.
    S4,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [Scenario::Anchor, Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Anchor => "anchor",
            Scenario::S1 => "s1",
            Scenario::S2 => "s2",
            Scenario::S3 => "s3",
            Scenario::S4 => "s4",
        }
    }

    fn long_name(self) -> &'static str {
        match self {
            Scenario::Anchor => "anchor_nosra",
            Scenario::S1 => "s1_l3down_l3up",
            Scenario::S2 => "s2_cnndown_l3up",
            Scenario::S3 => "s3_l3down_cnnup",
            Scenario::S4 => "s4_cnndown_cnnup",
        }
    }

    /// Default (down, up) strategy names; `None` for the anchor.
    pub fn strategies(self) -> Option<(&'static str, &'static str)> {
        match self {
            Scenario::Anchor => None,
            Scenario::S1 => Some(("lanczos3", "lanczos3")),
            Scenario::S2 => Some(("dsnet", "lanczos3")),
            Scenario::S3 => Some(("lanczos3", "command")),
            Scenario::S4 => Some(("dsnet", "command")),
        }
    }

    pub fn learned_down(self) -> bool {
        matches!(self, Scenario::S2 | Scenario::S4)
    }

    pub fn external_up(self) -> bool {
        matches!(self, Scenario::S3 | Scenario::S4)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == lower || sc.long_name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}` (anchor, s1, s2, s3, s4)")))
    }
}

impl Serialize for Scenario {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

mod chroma_serde {
    use super::*;

    pub fn serialize<S: Serializer>(f: &ChromaFormat, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&f.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ChromaFormat, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A raw YUV file and its geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoSpec {
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_bit_depth")]
    pub bit_depth: u8,
    #[serde(default = "default_format", with = "chroma_serde")]
    pub format: ChromaFormat,
    /// Number of frames to use; all frames in the file when absent.
    #[serde(default)]
    pub frames: Option<usize>,
}

fn default_bit_depth() -> u8 {
    10
}

fn default_format() -> ChromaFormat {
    ChromaFormat::YCbCr420
}

impl VideoSpec {
    pub fn geometry(&self) -> YuvGeometry {
        YuvGeometry::new(self.width, self.height, self.bit_depth, self.format)
    }
}

pub const DEFAULT_QPS: [i32; 4] = [27, 32, 37, 42];
pub const DEFAULT_QP_OFFSET: i32 = -6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    #[serde(default = "default_qps")]
    pub base_qps: Vec<i32>,
    /// Added to the base QP whenever resolution adaptation is active.
    #[serde(rename = "qp_offset_when_sra", alias = "qp_offset", default = "default_qp_offset")]
    pub qp_offset: i32,
    #[serde(default = "default_true")]
    pub force_sra: bool,
    /// Per-QP overrides of `force_sra`, keyed by base QP.
    #[serde(default)]
    pub sra_table: BTreeMap<String, bool>,
    #[serde(rename = "weights_path", alias = "weights", default)]
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub upsampler_plugin: Option<String>,
    /// Override the scenario's down-sampler by registry name.
    #[serde(default)]
    pub downsampler: Option<String>,
    /// Override the scenario's up-sampler by registry name.
    #[serde(default)]
    pub upsampler: Option<String>,
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub codec: CommandCodec,
    #[serde(default)]
    pub video: Option<VideoSpec>,
}

fn default_qps() -> Vec<i32> {
    DEFAULT_QPS.to_vec()
}

fn default_qp_offset() -> i32 {
    DEFAULT_QP_OFFSET
}

fn default_true() -> bool {
    true
}

fn default_fps() -> f64 {
    30.0
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, codec: CommandCodec) -> Self {
        ScenarioConfig {
            scenario,
            base_qps: default_qps(),
            qp_offset: DEFAULT_QP_OFFSET,
            force_sra: true,
            sra_table: BTreeMap::new(),
            weights: None,
            upsampler_plugin: None,
            downsampler: None,
            upsampler: None,
            fps: default_fps(),
            codec,
            video: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a TOML file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(w) = cfg.weights.as_mut() {
            resolve(w);
        }
        if let Some(v) = cfg.video.as_mut() {
            resolve(&mut v.path);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_qps.is_empty() {
            return Err(Error::Config("no base QPs".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Config(format!("frame rate must be positive, got {}", self.fps)));
        }
        self.table()?;
        self.codec.validate()?;
        let down = self.downsampler.as_deref().or(self.scenario.strategies().map(|s| s.0));
        let up = self.upsampler.as_deref().or(self.scenario.strategies().map(|s| s.1));
        if down == Some("dsnet") && self.weights.is_none() {
            return Err(Error::Config(format!(
                "scenario {} down-samples with DSNet and needs `weights_path`",
                self.scenario
            )));
        }
        if up == Some("command") && self.upsampler_plugin.is_none() {
            return Err(Error::Config(format!(
                "scenario {} up-samples externally and needs `upsampler_plugin`",
                self.scenario
            )));
        }
        Ok(())
    }

    /// The per-QP override table with integer keys.
    pub fn table(&self) -> Result<BTreeMap<i32, bool>> {
        self.sra_table
            .iter()
            .map(|(k, v)| {
                k.trim()
                    .parse::<i32>()
                    .map(|q| (q, *v))
                    .map_err(|_| Error::Config(format!("sra_table key `{k}` is not a QP")))
            })
            .collect()
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Whether resolution adaptation is used at `base_qp`.
///
/// Stands in for a learned quantization-resolution decision: a table entry
/// for the QP wins, otherwise `force_sra` decides.
pub fn sra_decision(force_sra: bool, base_qp: i32, table: &BTreeMap<i32, bool>) -> bool {
    table.get(&base_qp).copied().unwrap_or(force_sra)
}
