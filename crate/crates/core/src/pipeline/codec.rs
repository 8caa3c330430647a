//! External codec adapters driven by shell command templates.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::Command;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ChromaFormat;

/// Placeholders a template may use.
pub const PLACEHOLDERS: [&str; 9] = [
    "input", "output", "bitstream", "qp", "width", "height", "bitdepth", "format", "frames",
];

fn placeholder_regex() -> Regex {
    Regex::new(r"\{([a-z_]+)\}").expect("static pattern")
}

/// Quote `s` for `sh`.
pub fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// A command template with `{name}` placeholders.
#[derive(Clone, Debug)]
pub struct Template {
    text: String,
    used: Vec<String>,
    values: BTreeMap<String, String>,
}

impl Template {
    /// Parse `text`, rejecting unknown placeholders.
    pub fn new(text: &str) -> Result<Self> {
        let used: Vec<String> = placeholder_regex()
            .captures_iter(text)
            .map(|c| c[1].to_string())
            .collect();
        if let Some(bad) = used.iter().find(|u| !PLACEHOLDERS.contains(&u.as_str())) {
            return Err(Error::Config(format!("unknown placeholder {{{bad}}} in `{text}`")));
        }
        Ok(Template {
            text: text.to_string(),
            used,
            values: BTreeMap::new(),
        })
    }

    pub fn require(self, names: &[&str]) -> Result<Self> {
        if let Some(missing) = names.iter().find(|n| !self.uses(n)) {
            return Err(Error::Config(format!(
                "command `{}` must contain {{{missing}}}",
                self.text
            )));
        }
        Ok(self)
    }

    pub fn uses(&self, name: &str) -> bool {
        self.used.iter().any(|u| u == name)
    }

    pub fn value(mut self, name: &str, v: impl Display) -> Self {
        self.values.insert(name.to_string(), v.to_string());
        self
    }

    /// Bind a path, shell-quoted.
    pub fn path(mut self, name: &str, p: &Path) -> Self {
        self.values.insert(name.to_string(), shell_quote(&p.to_string_lossy()));
        self
    }

    pub fn render(&self) -> Result<String> {
        let mut missing = None;
        let out = placeholder_regex().replace_all(&self.text, |c: &regex::Captures| match self.values.get(&c[1]) {
            Some(v) => v.clone(),
            None => {
                missing = Some(c[1].to_string());
                String::new()
            }
        });
        match missing {
            Some(m) => Err(Error::Config(format!("no value for {{{m}}} in `{}`", self.text))),
            None => Ok(out.into_owned()),
        }
    }
}

/// Run `cmd` through `sh -c`; non-zero exit becomes a subprocess error
/// carrying the captured output. Returns stdout followed by stderr.
pub fn run_shell(cmd: &str) -> Result<String> {
    log::debug!("running `{cmd}`");
    let out = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .output()
        .map_err(|e| Error::Subprocess {
            command: cmd.to_string(),
            status: "not started".into(),
            output: e.to_string(),
        })?;
    let mut text = String::from_utf8_lossy(&out.stdout).into_owned();
    text.push_str(&String::from_utf8_lossy(&out.stderr));
    if !out.status.success() {
        return Err(Error::Subprocess {
            command: cmd.to_string(),
            status: out.status.to_string(),
            output: text,
        });
    }
    Ok(text)
}

/// Where the bitrate of an encoded point comes from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitrateSource {
    /// Bitstream size x 8 over the sequence duration.
    #[default]
    BitstreamSize,
    /// First capture group of a pattern matched against the encoder's
    /// output, in kbps.
    EncoderLogRegex(String),
}

/// Everything a codec needs for one encode/decode round.
#[derive(Clone, Debug)]
pub struct CodecJob {
    pub input: PathBuf,
    pub bitstream: PathBuf,
    pub output: PathBuf,
    pub qp: i32,
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub format: ChromaFormat,
    pub frames: usize,
}

impl CodecJob {
    fn bind(&self, t: Template) -> Template {
        t.path("input", &self.input)
            .path("output", &self.output)
            .path("bitstream", &self.bitstream)
            .value("qp", self.qp)
            .value("width", self.width)
            .value("height", self.height)
            .value("bitdepth", self.bit_depth)
            .value("format", self.format)
            .value("frames", self.frames)
    }
}

pub trait Codec: Send + Sync {
    /// Encode `job.input` into `job.bitstream`; returns the encoder's log.
    fn encode(&self, job: &CodecJob) -> Result<String>;
    /// Decode `job.bitstream` into `job.output`.
    fn decode(&self, job: &CodecJob) -> Result<()>;
    /// Bitrate in kbps of the finished job at `fps` frames per second.
    fn bitrate_kbps(&self, job: &CodecJob, encoder_log: &str, fps: f64) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandCodec {
    #[serde(rename = "encode_cmd_template", alias = "encode")]
    pub encode: String,
    #[serde(rename = "decode_cmd_template", alias = "decode")]
    pub decode: String,
    #[serde(rename = "bitrate_source", alias = "bitrate", default)]
    pub bitrate: BitrateSource,
}

impl CommandCodec {
    /// Passes the input through unchanged; handy for checking the pipeline.
    pub fn identity() -> Self {
        CommandCodec {
            encode: "cp {input} {bitstream}".into(),
            decode: "cp {bitstream} {output}".into(),
            bitrate: BitrateSource::BitstreamSize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Template::new(&self.encode)?.require(&["input", "bitstream"])?;
        Template::new(&self.decode)?.require(&["bitstream", "output"])?;
        if let BitrateSource::EncoderLogRegex(p) = &self.bitrate {
            let re = Regex::new(p).map_err(|e| Error::Config(format!("bitrate pattern: {e}")))?;
            if re.captures_len() < 2 {
                return Err(Error::Config("bitrate pattern needs a capture group".into()));
            }
        }
        Ok(())
    }
}

impl Codec for CommandCodec {
    fn encode(&self, job: &CodecJob) -> Result<String> {
        let cmd = job.bind(Template::new(&self.encode)?).render()?;
        run_shell(&cmd)
    }

    fn decode(&self, job: &CodecJob) -> Result<()> {
        let cmd = job.bind(Template::new(&self.decode)?).render()?;
        run_shell(&cmd).map(|_| ())
    }

    fn bitrate_kbps(&self, job: &CodecJob, encoder_log: &str, fps: f64) -> Result<f64> {
        match &self.bitrate {
            BitrateSource::BitstreamSize => {
                let bytes = std::fs::metadata(&job.bitstream)
                    .map_err(|e| Error::io(&job.bitstream, e))?
                    .len();
                let seconds = job.frames as f64 / fps;
                Ok(bytes as f64 * 8.0 / seconds / 1000.0)
            }
            BitrateSource::EncoderLogRegex(p) => {
                let re = Regex::new(p).map_err(|e| Error::Config(format!("bitrate pattern: {e}")))?;
                let caps = re
                    .captures(encoder_log)
                    .ok_or_else(|| Error::Pipeline(format!("bitrate pattern `{p}` not found in encoder output")))?;
                caps[1]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Pipeline(format!("bitrate `{}`: {e}", &caps[1])))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job(dir: &Path) -> CodecJob {
        CodecJob {
            input: dir.join("in put.yuv"),
            bitstream: dir.join("bits.bin"),
            output: dir.join("out.yuv"),
            qp: 32,
            width: 8,
            height: 4,
            bit_depth: 10,
            format: ChromaFormat::YCbCr420,
            frames: 2,
        }
    }

    #[test]
    fn templates_substitute_and_quote() {
        let t = Template::new("enc -i {input} -q {qp} -s {width}x{height}").unwrap();
        let s = t.path("input", Path::new("/a b/it's.yuv")).value("qp", 22).value("width", 8).value("height", 4);
        assert_eq!(s.render().unwrap(), r"enc -i '/a b/it'\''s.yuv' -q 22 -s 8x4");
        assert!(matches!(Template::new("x {nope}"), Err(Error::Config(_))));
        assert!(Template::new("x {qp}").unwrap().render().is_err());
        assert!(Template::new("cat {input}").unwrap().require(&["output"]).is_err());
    }

    #[test]
    fn identity_codec_round_trip_and_bitrate() {
        let dir = tempfile::tempdir().unwrap();
        let j = job(dir.path());
        std::fs::write(&j.input, vec![7u8; 1000]).unwrap();
        let c = CommandCodec::identity();
        c.validate().unwrap();
        let log = c.encode(&j).unwrap();
        c.decode(&j).unwrap();
        assert_eq!(std::fs::read(&j.output).unwrap(), vec![7u8; 1000]);
        // 1000 bytes over 2 frames at 50 fps = 0.04 s
        let kbps = c.bitrate_kbps(&j, &log, 50.0).unwrap();
        assert!((kbps - 200.0).abs() < 1e-9);
    }

    #[test]
    fn bitrate_from_encoder_log() {
        let dir = tempfile::tempdir().unwrap();
        let c = CommandCodec {
            bitrate: BitrateSource::EncoderLogRegex(r"(?m)^\s*\d+\s+a\s+([0-9.]+)".into()),
            ..CommandCodec::identity()
        };
        c.validate().unwrap();
        let log = "SUMMARY --------\n        2    a    1234.5600   40.1\n";
        assert_eq!(c.bitrate_kbps(&job(dir.path()), log, 30.0).unwrap(), 1234.56);
        assert!(matches!(c.bitrate_kbps(&job(dir.path()), "nothing", 30.0), Err(Error::Pipeline(_))));
        let bad = CommandCodec {
            bitrate: BitrateSource::EncoderLogRegex("no group".into()),
            ..CommandCodec::identity()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn failing_command_reports_output() {
        match run_shell("echo boom >&2; exit 4") {
            Err(Error::Subprocess { output, status, .. }) => {
                assert!(output.contains("boom"));
                assert!(status.contains('4'));
            }
            other => panic!("{other:?}"),
        }
    }
}
