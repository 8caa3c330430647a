//! Named down- and up-samplers selected at run time.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::dsnet::{load_weights, ModelWeights};
use crate::error::{Error, Result};
use crate::image::yuv::{read_yuv, write_yuv, YuvGeometry};
use crate::image::Frame;
use crate::metrics::Stage;
use crate::resample::{resample_frame, Direction, FilterKind};

use super::codec::{run_shell, Template};
use super::inference::dsnet_downsample_frame;

/// Halves the resolution of a sequence.
pub trait Downsampler: Send + Sync {
    fn name(&self) -> &str;
    /// Stage its running time is charged to.
    fn stage(&self) -> Stage {
        Stage::Downsample
    }
    fn downsample(&self, frames: &[Frame]) -> Result<Vec<Frame>>;
}

/// Doubles the resolution of a sequence.
pub trait Upsampler: Send + Sync {
    fn name(&self) -> &str;
    fn upsample(&self, frames: &[Frame]) -> Result<Vec<Frame>>;
}

pub struct FilterDownsampler(pub FilterKind);

impl Downsampler for FilterDownsampler {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn downsample(&self, frames: &[Frame]) -> Result<Vec<Frame>> {
        frames.iter().map(|f| resample_frame(f, Direction::Down, self.0)).collect()
    }
}

pub struct FilterUpsampler(pub FilterKind);

impl Upsampler for FilterUpsampler {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn upsample(&self, frames: &[Frame]) -> Result<Vec<Frame>> {
        frames.iter().map(|f| resample_frame(f, Direction::Up, self.0)).collect()
    }
}

pub struct DsNetDownsampler {
    pub weights: ModelWeights<f32>,
}

impl Downsampler for DsNetDownsampler {
    fn name(&self) -> &str {
        "dsnet"
    }

    fn stage(&self) -> Stage {
        Stage::Inference
    }

    fn downsample(&self, frames: &[Frame]) -> Result<Vec<Frame>> {
        frames.iter().map(|f| dsnet_downsample_frame(f, &self.weights)).collect()
    }
}

/// An external up-sampler, for example a CNN super-resolution model, run as
/// a shell command on raw YUV files.
///
/// Placeholders: `{input}`, `{output}`, `{width}`, `{height}` (of the input),
/// `{bitdepth}`, `{format}`, `{frames}`.
pub struct CommandUpsampler {
    pub template: String,
    pub work_dir: PathBuf,
}

impl Upsampler for CommandUpsampler {
    fn name(&self) -> &str {
        "command"
    }

    fn upsample(&self, frames: &[Frame]) -> Result<Vec<Frame>> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Input("no frames to up-sample".into()))?;
        std::fs::create_dir_all(&self.work_dir).map_err(|e| Error::io(&self.work_dir, e))?;
        let input = self.work_dir.join("upsample_in.yuv");
        let output = self.work_dir.join("upsample_out.yuv");
        write_yuv(&input, frames)?;
        let cmd = Template::new(&self.template)?
            .require(&["input", "output"])?
            .path("input", &input)
            .path("output", &output)
            .value("width", first.width())
            .value("height", first.height())
            .value("bitdepth", first.bit_depth())
            .value("format", first.format())
            .value("frames", frames.len())
            .render()?;
        run_shell(&cmd)?;
        let geom = YuvGeometry::new(first.width() * 2, first.height() * 2, first.bit_depth(), first.format());
        read_yuv(&output, &geom, frames.len()).map_err(|e| {
            Error::Pipeline(format!("up-sampler output {} is unusable: {e}", output.display()))
        })
    }
}

/// What a factory may need to build its strategy.
#[derive(Clone, Debug, Default)]
pub struct StrategyOptions {
    pub weights_path: Option<PathBuf>,
    pub command: Option<String>,
    pub work_dir: Option<PathBuf>,
}

pub type DownFactory = Box<dyn Fn(&StrategyOptions) -> Result<Box<dyn Downsampler>> + Send + Sync>;
pub type UpFactory = Box<dyn Fn(&StrategyOptions) -> Result<Box<dyn Upsampler>> + Send + Sync>;

pub struct Registry {
    down: BTreeMap<String, DownFactory>,
    up: BTreeMap<String, UpFactory>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("down", &self.down.keys().collect::<Vec<_>>())
            .field("up", &self.up.keys().collect::<Vec<_>>())
            .finish()
    }
}

fn load_dsnet(path: &Path) -> Result<Box<dyn Downsampler>> {
    Ok(Box::new(DsNetDownsampler {
        weights: load_weights(path)?,
    }))
}

impl Registry {
    pub fn empty() -> Self {
        Registry {
            down: BTreeMap::new(),
            up: BTreeMap::new(),
        }
    }

    /// The three filters in both directions, `dsnet` down-sampling and the
    /// `command` up-sampler.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        for kind in FilterKind::ALL {
            r.register_down(kind.name(), Box::new(move |_| Ok(Box::new(FilterDownsampler(kind)))));
            r.register_up(kind.name(), Box::new(move |_| Ok(Box::new(FilterUpsampler(kind)))));
        }
        r.register_down(
            "dsnet",
            Box::new(|o| {
                let path = o
                    .weights_path
                    .as_deref()
                    .ok_or_else(|| Error::Config("the dsnet down-sampler needs a weights path".into()))?;
                load_dsnet(path)
            }),
        );
        r.register_up(
            "command",
            Box::new(|o| {
                let template = o
                    .command
                    .clone()
                    .ok_or_else(|| Error::Config("the command up-sampler needs a command template".into()))?;
                Ok(Box::new(CommandUpsampler {
                    template,
                    work_dir: o.work_dir.clone().unwrap_or_else(std::env::temp_dir),
                }))
            }),
        );
        r
    }

    pub fn register_down(&mut self, name: &str, factory: DownFactory) {
        self.down.insert(name.to_string(), factory);
    }

    pub fn register_up(&mut self, name: &str, factory: UpFactory) {
        self.up.insert(name.to_string(), factory);
    }

    pub fn downsampler(&self, name: &str, opts: &StrategyOptions) -> Result<Box<dyn Downsampler>> {
        let f = self.down.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown down-sampler `{name}` (known: {})",
                self.down.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })?;
        f(opts)
    }

    pub fn upsampler(&self, name: &str, opts: &StrategyOptions) -> Result<Box<dyn Upsampler>> {
        let f = self.up.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown up-sampler `{name}` (known: {})",
                self.up.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })?;
        f(opts)
    }

    pub fn downsampler_names(&self) -> impl Iterator<Item = &str> {
        self.down.keys().map(String::as_str)
    }

    pub fn upsampler_names(&self) -> impl Iterator<Item = &str> {
        self.up.keys().map(String::as_str)
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::with_builtins()
    }
}
