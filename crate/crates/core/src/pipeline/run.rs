//! Scenario runs: resample, code and measure at every QP, then compare runs.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::image::yuv::{count_frames, decode_frames, read_yuv, write_yuv, YuvGeometry};
use crate::image::Frame;
use crate::metrics::timing::timing_report;
use crate::metrics::{bd_rate, psnr_luma_sequence, Psnr, RdCurve, Stage, StageTimings};

use super::codec::{Codec, CodecJob};
use super::config::{sha256_hex, sra_decision, ScenarioConfig, VideoSpec};
use super::registry::{Downsampler, Registry, StrategyOptions, Upsampler};

pub const RD_CURVE_FILE: &str = "rd_curve.txt";
pub const TIMINGS_FILE: &str = "timings.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.toml";
/// Per-QP full-resolution reconstruction, inside the `qp<N>` directory.
pub const RECONSTRUCTED_FILE: &str = "reconstructed.yuv";

/// Outcome of coding the sequence at one base QP.
#[derive(Clone, Debug, PartialEq)]
pub struct QpResult {
    pub base_qp: i32,
    pub effective_qp: i32,
    pub sra: bool,
    pub bitrate_kbps: f64,
    pub psnr: Psnr,
    pub timings: StageTimings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub source_sha256: String,
    pub config_sha256: String,
    /// Ordered by base QP.
    pub points: Vec<QpResult>,
}

impl RunReport {
    /// `effective_qp bitrate_kbps psnr_db` lines; lossless points read `inf`.
    pub fn rd_curve_text(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            let psnr = match p.psnr {
                Psnr::Db(v) => format!("{v}"),
                Psnr::Lossless => "inf".into(),
            };
            let _ = writeln!(s, "{} {} {}", p.effective_qp, p.bitrate_kbps, psnr);
        }
        s
    }

    pub fn timings_text(&self) -> String {
        let mut s = String::from("# base_qp");
        for st in Stage::ALL {
            let _ = write!(s, " {st}");
        }
        s.push('\n');
        for p in &self.points {
            let _ = write!(s, "{}", p.base_qp);
            for st in Stage::ALL {
                let _ = write!(s, " {:.6}", p.timings.get(st));
            }
            s.push('\n');
        }
        s
    }

    /// The fitted curve, leaving out lossless points.
    pub fn curve(&self) -> Result<RdCurve> {
        RdCurve::parse(&self.rd_curve_text())
    }
}

/// Parse a timings file written by [`RunReport::timings_text`].
pub fn parse_timings(text: &str) -> Result<Vec<StageTimings>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != Stage::ALL.len() + 1 {
            return Err(Error::Format(format!(
                "timings line {}: expected {} columns, got {}",
                n + 1,
                Stage::ALL.len() + 1,
                fields.len()
            )));
        }
        let mut t = StageTimings::new();
        for (st, f) in Stage::ALL.into_iter().zip(&fields[1..]) {
            let v: f64 = f
                .parse()
                .map_err(|e| Error::Format(format!("timings line {}: {e}", n + 1)))?;
            t.add_seconds(st, v);
        }
        out.push(t);
    }
    Ok(out)
}

fn read_source(video: &VideoSpec) -> Result<(Vec<Frame>, String)> {
    let geom = video.geometry();
    if video.width % 2 != 0 || video.height % 2 != 0 {
        return Err(Error::Dimension(format!(
            "source is {}x{}; odd dimensions are not supported",
            video.width, video.height
        )));
    }
    let available = count_frames(&video.path, &geom)?;
    let count = video.frames.unwrap_or(available);
    if count == 0 || count > available {
        return Err(Error::Input(format!(
            "{} holds {available} frames of {}x{}, {count} requested",
            video.path.display(),
            video.width,
            video.height
        )));
    }
    let bytes = std::fs::read(&video.path).map_err(|e| Error::io(&video.path, e))?;
    let used = &bytes[..count * geom.frame_bytes()];
    let frames = decode_frames(used, &geom, count)?;
    Ok((frames, sha256_hex(used)))
}

struct Adaptation {
    down: Box<dyn Downsampler>,
    up: Box<dyn Upsampler>,
    low: Vec<Frame>,
    down_seconds: f64,
}

fn prepare_adaptation(
    cfg: &ScenarioConfig,
    registry: &Registry,
    source: &[Frame],
    run_dir: &Path,
) -> Result<Adaptation> {
    let defaults = cfg.scenario.strategies().unwrap_or(("lanczos3", "lanczos3"));
    let opts = StrategyOptions {
        weights_path: cfg.weights.clone(),
        command: cfg.upsampler_plugin.clone(),
        work_dir: Some(run_dir.join("upsample")),
    };
    let down = registry.downsampler(cfg.downsampler.as_deref().unwrap_or(defaults.0), &opts)?;
    let up = registry.upsampler(cfg.upsampler.as_deref().unwrap_or(defaults.1), &opts)?;
    let start = Instant::now();
    let low = down.downsample(source)?;
    let down_seconds = start.elapsed().as_secs_f64();
    Ok(Adaptation {
        down,
        up,
        low,
        down_seconds,
    })
}

fn code_point(
    cfg: &ScenarioConfig,
    codec: &dyn Codec,
    source: &[Frame],
    adaptation: Option<&Adaptation>,
    base_qp: i32,
    dir: &Path,
) -> Result<QpResult> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut timings = StageTimings::new();
    let coded: &[Frame] = match adaptation {
        Some(a) => {
            timings.add_seconds(a.down.stage(), a.down_seconds);
            &a.low
        }
        None => source,
    };
    let effective_qp = if adaptation.is_some() {
        base_qp + cfg.qp_offset
    } else {
        base_qp
    };
    let geom = YuvGeometry::of(&coded[0]);
    let job = CodecJob {
        input: dir.join("input.yuv"),
        bitstream: dir.join("bitstream.bin"),
        output: dir.join("decoded.yuv"),
        qp: effective_qp,
        width: geom.width,
        height: geom.height,
        bit_depth: geom.bit_depth,
        format: geom.format,
        frames: coded.len(),
    };
    write_yuv(&job.input, coded)?;

    let log = timings.time(Stage::Encode, || codec.encode(&job))?;
    let bitrate_kbps = codec.bitrate_kbps(&job, &log, cfg.fps)?;
    timings.time(Stage::Decode, || codec.decode(&job))?;

    let expected = geom.frame_bytes() * coded.len();
    let actual = std::fs::metadata(&job.output)
        .map_err(|e| Error::io(&job.output, e))?
        .len() as usize;
    if actual != expected {
        return Err(Error::Pipeline(format!(
            "decoder wrote {actual} bytes to {}, expected {expected} ({} frames of {}x{})",
            job.output.display(),
            coded.len(),
            geom.width,
            geom.height
        )));
    }
    let decoded = read_yuv(&job.output, &geom, coded.len())?;
    let reconstructed = match adaptation {
        Some(a) => timings.time(Stage::Upsample, || a.up.upsample(&decoded))?,
        None => decoded,
    };
    if reconstructed.len() != source.len() || !reconstructed[0].same_geometry(&source[0]) {
        return Err(Error::Pipeline(format!(
            "reconstruction is {} frames of {}x{}, source is {} frames of {}x{}",
            reconstructed.len(),
            reconstructed[0].width(),
            reconstructed[0].height(),
            source.len(),
            source[0].width(),
            source[0].height()
        )));
    }
    write_yuv(dir.join(RECONSTRUCTED_FILE), &reconstructed)?;
    let psnr = psnr_luma_sequence(source, &reconstructed)?;
    log::info!("qp {base_qp} (coded at {effective_qp}): {bitrate_kbps:.3} kbps, {psnr} dB");
    Ok(QpResult {
        base_qp,
        effective_qp,
        sra: adaptation.is_some(),
        bitrate_kbps,
        psnr,
        timings,
    })
}

/// Run `cfg` on `video` with the built-in strategies; see [`run_scenario_with`].
pub fn run_scenario(video: &VideoSpec, cfg: &ScenarioConfig, run_dir: &Path) -> Result<RunReport> {
    run_scenario_with(video, cfg, &Registry::with_builtins(), run_dir)
}

/// Code `video` at every base QP of `cfg` and write `rd_curve.txt`,
/// `timings.txt`, `manifest.txt` and `config.toml` under `run_dir`.
///
/// The down-sampled sequence is computed once; its running time is charged
/// to every point that uses it. QPs run one after another.
pub fn run_scenario_with(
    video: &VideoSpec,
    cfg: &ScenarioConfig,
    registry: &Registry,
    run_dir: &Path,
) -> Result<RunReport> {
    cfg.validate()?;
    let table = cfg.table()?;
    let (source, source_sha256) = read_source(video)?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;

    let mut qps = cfg.base_qps.clone();
    qps.sort_unstable();
    qps.dedup();
    let any_sra = cfg.scenario.strategies().is_some() && qps.iter().any(|&q| sra_decision(cfg.force_sra, q, &table));
    let adaptation = if any_sra {
        Some(prepare_adaptation(cfg, registry, &source, run_dir)?)
    } else {
        None
    };

    let mut points = Vec::with_capacity(qps.len());
    for &qp in &qps {
        let active = cfg.scenario.strategies().is_some() && sra_decision(cfg.force_sra, qp, &table);
        let a = if active { adaptation.as_ref() } else { None };
        let dir = run_dir.join(format!("qp{qp}"));
        points.push(code_point(cfg, &cfg.codec, &source, a, qp, &dir)?);
    }

    let report = RunReport {
        scenario: cfg.scenario.to_string(),
        source_sha256,
        config_sha256: cfg.hash()?,
        points,
    };
    write_artifacts(&report, video, cfg, run_dir)?;
    Ok(report)
}

fn write_file(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn write_artifacts(report: &RunReport, video: &VideoSpec, cfg: &ScenarioConfig, run_dir: &Path) -> Result<()> {
    write_file(run_dir.join(RD_CURVE_FILE), &report.rd_curve_text())?;
    write_file(run_dir.join(TIMINGS_FILE), &report.timings_text())?;
    write_file(run_dir.join(CONFIG_FILE), &cfg.to_toml()?)?;

    let mut m = String::new();
    let _ = writeln!(m, "scenario {}", report.scenario);
    let _ = writeln!(m, "source {}", video.path.display());
    let _ = writeln!(m, "source_sha256 {}", report.source_sha256);
    let _ = writeln!(
        m,
        "geometry {}x{} {}-bit {}",
        video.width, video.height, video.bit_depth, video.format
    );
    if let Some(w) = &cfg.weights {
        let _ = writeln!(m, "weights {}", w.display());
    }
    let _ = writeln!(m, "config_sha256 {}", report.config_sha256);
    for p in &report.points {
        let _ = write!(m, "point base_qp={} effective_qp={} sra={}", p.base_qp, p.effective_qp, p.sra);
        for (st, secs) in p.timings.stages() {
            let _ = write!(m, " {st}={secs:.6}");
        }
        m.push('\n');
    }
    write_file(run_dir.join(MANIFEST_FILE), &m)
}

fn manifest_value(dir: &Path, key: &str) -> Result<String> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
        .map(|v| v.trim().to_string())
        .ok_or_else(|| Error::Format(format!("{} has no `{key}` entry", path.display())))
}

/// BD-rate and complexity of a test run relative to an anchor run.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub bd_rate_percent: f64,
    pub enc_ratio: f64,
    pub dec_ratio: f64,
    pub per_stage: BTreeMap<Stage, f64>,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bd_rate_percent {}", self.bd_rate_percent)?;
        writeln!(f, "enc_ratio {}", self.enc_ratio)?;
        writeln!(f, "dec_ratio {}", self.dec_ratio)?;
        for (st, r) in &self.per_stage {
            writeln!(f, "{st}_ratio {r}")?;
        }
        Ok(())
    }
}

/// Compare two run directories written by [`run_scenario`].
pub fn compare_scenarios(anchor_dir: &Path, test_dir: &Path) -> Result<Comparison> {
    let a_src = manifest_value(anchor_dir, "source_sha256")?;
    let t_src = manifest_value(test_dir, "source_sha256")?;
    if a_src != t_src {
        return Err(Error::Input(format!(
            "runs in {} and {} coded different sources",
            anchor_dir.display(),
            test_dir.display()
        )));
    }
    let read = |dir: &Path, name: &str| {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let bd = bd_rate(
        &RdCurve::parse(&read(anchor_dir, RD_CURVE_FILE)?)?,
        &RdCurve::parse(&read(test_dir, RD_CURVE_FILE)?)?,
    )?;
    let ratios = timing_report(
        &parse_timings(&read(anchor_dir, TIMINGS_FILE)?)?,
        &parse_timings(&read(test_dir, TIMINGS_FILE)?)?,
    )?;
    Ok(Comparison {
        bd_rate_percent: bd,
        enc_ratio: ratios.encoder,
        dec_ratio: ratios.decoder,
        per_stage: ratios.per_stage,
    })
}
