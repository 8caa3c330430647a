//! Wall-clock bookkeeping per processing stage and complexity ratios
//! against an anchor run.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Downsample,
    Inference,
    Encode,
    Decode,
    Upsample,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Downsample,
        Stage::Inference,
        Stage::Encode,
        Stage::Decode,
        Stage::Upsample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Downsample => "downsample",
            Stage::Inference => "inference",
            Stage::Encode => "encode",
            Stage::Decode => "decode",
            Stage::Upsample => "upsample",
        }
    }

    /// Stages that run before the bitstream exists.
    pub fn is_encoder_side(self) -> bool {
        matches!(self, Stage::Downsample | Stage::Inference | Stage::Encode)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown stage `{s}`")))
    }
}

/// Seconds spent in each stage for one coded point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageTimings {
    seconds: BTreeMap<Stage, f64>,
}

impl StageTimings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, stage: Stage, elapsed: Duration) {
        self.add_seconds(stage, elapsed.as_secs_f64());
    }

    pub fn add_seconds(&mut self, stage: Stage, seconds: f64) {
        *self.seconds.entry(stage).or_insert(0.0) += seconds;
    }

    /// Run `f` and charge its wall-clock time to `stage`.
    pub fn time<R>(&mut self, stage: Stage, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let r = f();
        self.add(stage, start.elapsed());
        r
    }

    pub fn get(&self, stage: Stage) -> f64 {
        self.seconds.get(&stage).copied().unwrap_or(0.0)
    }

    pub fn stages(&self) -> impl Iterator<Item = (Stage, f64)> + '_ {
        self.seconds.iter().map(|(s, v)| (*s, *v))
    }

    pub fn encoder_side(&self) -> f64 {
        self.stages().filter(|(s, _)| s.is_encoder_side()).map(|(_, v)| v).sum()
    }

    pub fn decoder_side(&self) -> f64 {
        self.stages().filter(|(s, _)| !s.is_encoder_side()).map(|(_, v)| v).sum()
    }

    pub fn total(&self) -> f64 {
        self.seconds.values().sum()
    }
}

/// Relative complexity of a test run against an anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingRatios {
    /// Mean over coded points of test/anchor encoder-side time.
    pub encoder: f64,
    /// Mean over coded points of test/anchor decoder-side time.
    pub decoder: f64,
    /// Summed test time over summed anchor time, for stages the anchor ran.
    pub per_stage: BTreeMap<Stage, f64>,
}

fn ratio(test: f64, anchor: f64, what: &str) -> Result<f64> {
    if anchor > 0.0 {
        Ok(test / anchor)
    } else {
        Err(Error::Input(format!("anchor has no {what} time")))
    }
}

/// Compare per-point timings of a test run with those of an anchor run;
/// points are paired by position (one per QP).
pub fn timing_report(anchor: &[StageTimings], test: &[StageTimings]) -> Result<TimingRatios> {
    if anchor.is_empty() {
        return Err(Error::Input("no anchor timings".into()));
    }
    if anchor.len() != test.len() {
        return Err(Error::Input(format!(
            "anchor has {} coded points, test has {}",
            anchor.len(),
            test.len()
        )));
    }
    let n = anchor.len() as f64;
    let mut encoder = 0.0;
    let mut decoder = 0.0;
    for (a, t) in anchor.iter().zip(test) {
        encoder += ratio(t.encoder_side(), a.encoder_side(), "encoder-side")?;
        decoder += ratio(t.decoder_side(), a.decoder_side(), "decoder-side")?;
    }
    let mut per_stage = BTreeMap::new();
    for stage in Stage::ALL {
        let a: f64 = anchor.iter().map(|s| s.get(stage)).sum();
        let t: f64 = test.iter().map(|s| s.get(stage)).sum();
        if a > 0.0 {
            per_stage.insert(stage, t / a);
        }
    }
    Ok(TimingRatios {
        encoder: encoder / n,
        decoder: decoder / n,
        per_stage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timings(entries: &[(Stage, f64)]) -> StageTimings {
        let mut t = StageTimings::new();
        for &(s, v) in entries {
            t.add_seconds(s, v);
        }
        t
    }

    fn anchor_point() -> StageTimings {
        timings(&[(Stage::Encode, 10.0), (Stage::Decode, 2.0)])
    }

    #[test]
    fn anchor_against_itself() {
        let a = vec![anchor_point(); 4];
        let r = timing_report(&a, &a).unwrap();
        assert_eq!(r.encoder, 1.0);
        assert_eq!(r.decoder, 1.0);
        assert_eq!(r.per_stage[&Stage::Encode], 1.0);
        assert!(!r.per_stage.contains_key(&Stage::Upsample));
    }

    #[test]
    fn half_duration() {
        let a = vec![anchor_point()];
        let t = vec![timings(&[(Stage::Encode, 5.0), (Stage::Decode, 1.0)])];
        let r = timing_report(&a, &t).unwrap();
        assert_eq!(r.encoder, 0.5);
        assert_eq!(r.per_stage[&Stage::Decode], 0.5);
    }

    #[test]
    fn encoder_side_sums_its_stages() {
        let t = timings(&[
            (Stage::Downsample, 1.0),
            (Stage::Inference, 2.0),
            (Stage::Encode, 3.0),
            (Stage::Decode, 0.5),
            (Stage::Upsample, 0.25),
        ]);
        let r = timing_report(&[anchor_point()], &[t.clone()]).unwrap();
        assert_eq!(r.encoder, (1.0 + 2.0 + 3.0) / 10.0);
        assert_eq!(r.decoder, (0.5 + 0.25) / 2.0);
        assert_eq!(t.total(), t.encoder_side() + t.decoder_side());
    }

    #[test]
    fn missing_anchor() {
        assert!(matches!(timing_report(&[], &[]), Err(Error::Input(_))));
        assert!(timing_report(&[StageTimings::new()], &[anchor_point()]).is_err());
        assert!(timing_report(&[anchor_point()], &[]).is_err());
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        let mut t = StageTimings::new();
        let v = t.time(Stage::Encode, || 7);
        assert_eq!(v, 7);
        assert!(t.get(Stage::Encode) >= 0.0);
    }
}
