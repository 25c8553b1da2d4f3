//! Time-tag files, coincidence counting, and the count-to-probability
//! estimators for the heralded five-detector and two-detector schemes.
//!
//! Tag file layout (text, UTF-8, LF line endings):
//!
//! ```text
//! # pathbell-tags v1
//! 5,1000
//! 1,1500
//! ```
//!
//! Each data line is `channel,timestamp_ps`; channels are 1–5, timestamps are
//! unsigned 64-bit picoseconds in nondecreasing order.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::chsh::{correlation, s_from_correlations, AngleSetting, ChshResult, OutcomeProbabilities};
use crate::error::{Error, FormatError, Result};
use crate::format::fmt_sig15;

pub const TAG_HEADER: &str = "# pathbell-tags v1";
pub const MIN_CHANNEL: u8 = 1;
pub const MAX_CHANNEL: u8 = 5;
pub const HERALD_CHANNEL: u8 = 5;
/// Default coincidence window, 1 ns.
pub const DEFAULT_WINDOW_PS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeTag {
    pub channel: u8,
    pub t: u64,
}

/// Detection events sorted by time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagStream {
    tags: Vec<TimeTag>,
}

impl TagStream {
    /// Validates channel range and ordering.
    pub fn new(tags: Vec<TimeTag>) -> Result<Self> {
        if let Some((i, tag)) = tags
            .iter()
            .enumerate()
            .find(|(_, t)| !(MIN_CHANNEL..=MAX_CHANNEL).contains(&t.channel))
        {
            return Err(Error::InvalidState(format!(
                "tag {i}: channel {} out of range",
                tag.channel
            )));
        }
        if let Some(i) = tags.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::InvalidState(format!("tag {}: timestamps decrease", i + 1)));
        }
        Ok(TagStream { tags })
    }

    /// Sorts by `(t, channel)` and validates.
    pub fn from_unsorted(mut tags: Vec<TimeTag>) -> Result<Self> {
        tags.sort_unstable_by_key(|t| (t.t, t.channel));
        Self::new(tags)
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn count_channel(&self, channel: u8) -> u64 {
        self.tags.iter().filter(|t| t.channel == channel).count() as u64
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }
}

fn parse_channel(field: &str, line: usize) -> std::result::Result<u8, FormatError> {
    if field.is_empty() || !field.bytes().all(|b| b.is_ascii_digit()) {
        return Err(FormatError::new(line, format!("channel {field:?} is not an unsigned integer")));
    }
    match field.parse::<u8>() {
        Ok(c) if (MIN_CHANNEL..=MAX_CHANNEL).contains(&c) => Ok(c),
        _ => Err(FormatError::new(line, format!("channel {field} out of range 1-5"))),
    }
}

fn parse_timestamp(field: &str, line: usize) -> std::result::Result<u64, FormatError> {
    if field.is_empty() || !field.bytes().all(|b| b.is_ascii_digit()) {
        return Err(FormatError::new(line, format!("timestamp {field:?} is not an unsigned integer")));
    }
    field
        .parse::<u64>()
        .map_err(|_| FormatError::new(line, format!("timestamp {field} exceeds 2^64-1")))
}

/// Parses a tag file. Any deviation from the format is reported with its
/// 1-based line number; nothing is silently skipped.
pub fn parse_tags(bytes: &[u8]) -> std::result::Result<TagStream, FormatError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count();
        FormatError::new(line, "invalid UTF-8")
    })?;
    // a single trailing LF terminates the last line
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut lines = body.split('\n');
    match lines.next() {
        Some(TAG_HEADER) => {}
        Some(other) if other.ends_with('\r') => {
            return Err(FormatError::new(1, "CR line ending"));
        }
        _ => return Err(FormatError::new(1, format!("missing header {TAG_HEADER:?}"))),
    }
    let mut tags = Vec::new();
    let mut last = 0u64;
    for (idx, raw) in lines.enumerate() {
        let line = idx + 2;
        if raw.ends_with('\r') {
            return Err(FormatError::new(line, "CR line ending"));
        }
        let (ch, ts) = raw
            .split_once(',')
            .ok_or_else(|| FormatError::new(line, "expected `channel,timestamp_ps`"))?;
        let channel = parse_channel(ch, line)?;
        let t = parse_timestamp(ts, line)?;
        if t < last {
            return Err(FormatError::new(line, format!("timestamp {t} precedes {last}")));
        }
        last = t;
        tags.push(TimeTag { channel, t });
    }
    Ok(TagStream { tags })
}

pub fn write_tags<W: Write>(stream: &TagStream, mut out: W) -> io::Result<()> {
    writeln!(out, "{TAG_HEADER}")?;
    for tag in stream.tags() {
        writeln!(out, "{},{}", tag.channel, tag.t)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Heralded,
    TwoDetector,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Heralded => "heralded",
            Mode::TwoDetector => "two_detector",
        }
    }
}

/// Counter name of the coincidences between signal channel `j` and the herald.
pub fn coincidence_key(j: u8) -> String {
    format!("C{j}_5")
}

pub fn singles_key(channel: u8) -> String {
    format!("singles_{channel}")
}

pub const KEY_D1: &str = "C_D1";
pub const KEY_D2: &str = "C_D2";

/// Counts gathered for one analyzer setting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub setting_id: String,
    pub mode: Mode,
    pub counts: BTreeMap<String, u64>,
}

impl CountRecord {
    pub fn get(&self, key: &str) -> Option<u64> {
        self.counts.get(key).copied()
    }

    fn require(&self, key: &str) -> Result<u64> {
        self.get(key).ok_or_else(|| {
            Error::RecordMismatch(format!("record {:?} has no counter {key}", self.setting_id))
        })
    }

    /// Adds another record's counters into this one.
    pub fn accumulate(&mut self, other: &CountRecord) -> Result<()> {
        if other.mode != self.mode {
            return Err(Error::RecordMismatch("cannot add records of different modes".into()));
        }
        for (k, v) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += v;
        }
        Ok(())
    }
}

/// Herald–signal coincidences within `±window_ps`.
///
/// Signal tags are visited in time order; each is paired with the nearest
/// herald not yet consumed (ties go to the earlier herald), and both are then
/// consumed. A herald pointer only moves forward, so the pass is linear in
/// the stream length for bounded window occupancy.
pub fn coincidences(setting_id: &str, stream: &TagStream, herald_channel: u8, window_ps: u64) -> CountRecord {
    let heralds: Vec<u64> = stream
        .tags()
        .iter()
        .filter(|t| t.channel == herald_channel)
        .map(|t| t.t)
        .collect();
    let mut consumed = vec![false; heralds.len()];
    let mut first = 0usize;
    let mut matched = [0u64; MAX_CHANNEL as usize + 1];
    let mut singles = [0u64; MAX_CHANNEL as usize + 1];

    for tag in stream.tags() {
        singles[tag.channel as usize] += 1;
        if tag.channel == herald_channel {
            continue;
        }
        let lo = tag.t.saturating_sub(window_ps);
        let hi = tag.t.saturating_add(window_ps);
        while first < heralds.len() && (heralds[first] < lo || consumed[first]) {
            first += 1;
        }
        let mut best: Option<(usize, u64)> = None;
        let mut j = first;
        while j < heralds.len() && heralds[j] <= hi {
            if !consumed[j] {
                let d = heralds[j].abs_diff(tag.t);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            j += 1;
        }
        if let Some((j, _)) = best {
            consumed[j] = true;
            matched[tag.channel as usize] += 1;
        }
    }

    let mut counts = BTreeMap::new();
    for j in MIN_CHANNEL..=MAX_CHANNEL {
        if j != herald_channel {
            counts.insert(coincidence_key(j), matched[j as usize]);
        }
        counts.insert(singles_key(j), singles[j as usize]);
    }
    CountRecord {
        setting_id: setting_id.to_string(),
        mode: Mode::Heralded,
        counts,
    }
}

/// Singles on the two detectors of the un-heralded scheme (channels 1 and 2).
pub fn two_detector_counts(setting_id: &str, stream: &TagStream) -> CountRecord {
    let mut counts = BTreeMap::new();
    counts.insert(KEY_D1.to_string(), stream.count_channel(1));
    counts.insert(KEY_D2.to_string(), stream.count_channel(2));
    CountRecord {
        setting_id: setting_id.to_string(),
        mode: Mode::TwoDetector,
        counts,
    }
}

/// Outcome probabilities estimated from counts, with binomial standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatedProbabilities {
    pub probs: OutcomeProbabilities,
    pub stderr: [f64; 4],
    pub total: u64,
}

impl EstimatedProbabilities {
    /// Ratios `cᵢ / Σc` in outcome order `00, 01, 10, 11`.
    pub fn from_counts(counts: [u64; 4]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyData);
        }
        let n = total as f64;
        let p = counts.map(|c| c as f64 / n);
        Ok(EstimatedProbabilities {
            probs: OutcomeProbabilities::from_raw(p),
            stderr: p.map(|q| (q * (1.0 - q) / n).sqrt()),
            total,
        })
    }

    pub fn correlation(&self) -> f64 {
        correlation(&self.probs)
    }
}

/// `P_ij = C_{j,5} / Σ_j C_{j,5}` with channels 1–4 mapped to outcomes
/// `00, 01, 10, 11`.
pub fn heralded_probabilities(record: &CountRecord) -> Result<EstimatedProbabilities> {
    if record.mode != Mode::Heralded {
        return Err(Error::RecordMismatch(format!(
            "record {:?} is not heralded",
            record.setting_id
        )));
    }
    let mut c = [0u64; 4];
    for (slot, j) in c.iter_mut().zip(1u8..=4) {
        *slot = record.require(&coincidence_key(j))?;
    }
    EstimatedProbabilities::from_counts(c)
}

/// Offset of the orthogonal analyzer setting from its primary, applied to θ.
pub const ORTHOGONAL_OFFSET: f64 = std::f64::consts::FRAC_PI_2;

/// Two-detector estimate from a primary setting and its orthogonal partner
/// (net analyzer rotation `+π/2`).
///
/// With `T` the sum of all four counters: `P00 = C_D1/T`, `P10 = C_D2/T`,
/// and with the detector roles exchanged at the orthogonal setting,
/// `P11 = C_D2⊥/T`, `P01 = C_D1⊥/T`.
pub fn two_detector_probabilities(primary: &CountRecord, orthogonal: &CountRecord) -> Result<EstimatedProbabilities> {
    for r in [primary, orthogonal] {
        if r.mode != Mode::TwoDetector {
            return Err(Error::RecordMismatch(format!(
                "record {:?} is not a two-detector record",
                r.setting_id
            )));
        }
    }
    let d1 = primary.require(KEY_D1)?;
    let d2 = primary.require(KEY_D2)?;
    let d1_perp = orthogonal.require(KEY_D1)?;
    let d2_perp = orthogonal.require(KEY_D2)?;
    EstimatedProbabilities::from_counts([d1, d1_perp, d2, d2_perp])
}

/// An estimate tagged with the analyzer setting it was measured at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredSetting {
    pub setting_id: String,
    pub theta: f64,
    pub delta: f64,
    pub estimate: EstimatedProbabilities,
}

fn same_angle(a: f64, b: f64) -> bool {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d) < 1e-9
}

pub fn find_setting<'a>(measured: &'a [MeasuredSetting], theta: f64, delta: f64) -> Option<&'a MeasuredSetting> {
    measured
        .iter()
        .find(|m| same_angle(m.theta, theta) && same_angle(m.delta, delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatedChsh {
    pub result: ChshResult,
    pub e_stderr: [f64; 4],
    pub s_stderr: f64,
}

/// `S` from measured probabilities at the four pairs of `setting`.
///
/// The standard error of each correlation is the quadrature sum of its four
/// probability errors; the error of `S` is the quadrature sum of those.
pub fn estimate_chsh(measured: &[MeasuredSetting], setting: &AngleSetting) -> Result<EstimatedChsh> {
    let mut e_values = [0.0; 4];
    let mut e_stderr = [0.0; 4];
    for (i, (theta, delta)) in setting.pairs().into_iter().enumerate() {
        let m = find_setting(measured, theta, delta).ok_or(Error::MissingSetting { theta, delta })?;
        e_values[i] = m.estimate.correlation();
        e_stderr[i] = m.estimate.stderr.iter().map(|s| s * s).sum::<f64>().sqrt();
    }
    Ok(EstimatedChsh {
        result: ChshResult {
            s_value: s_from_correlations(e_values),
            e_values,
            setting: *setting,
        },
        e_stderr,
        s_stderr: e_stderr.iter().map(|s| s * s).sum::<f64>().sqrt(),
    })
}

pub const PROBABILITY_CSV_HEADER: &str = "setting_id,p00,p01,p10,p11,se00,se01,se10,se11";

pub fn write_probability_csv<W: Write>(rows: &[(String, EstimatedProbabilities)], mut out: W) -> io::Result<()> {
    writeln!(out, "{PROBABILITY_CSV_HEADER}")?;
    for (id, e) in rows {
        let fields: Vec<String> = e
            .probs
            .as_array()
            .iter()
            .chain(e.stderr.iter())
            .map(|&x| fmt_sig15(x))
            .collect();
        writeln!(out, "{id},{}", fields.join(","))?;
    }
    Ok(())
}
