//! Monte Carlo generation of detector time tags.
//!
//! Pairs are emitted as a Poisson process. Each pair's signal photon is routed
//! to an outcome port with the probabilities of the analyzed state; in the
//! heralded scheme its partner goes to the herald detector. Detection is then
//! thinned by efficiency, dark counts are added as independent Poisson
//! streams, and a non-paralyzable dead time is applied per channel.
//!
//! Randomness comes from ChaCha8 seeded through `SeedableRng::seed_from_u64`.
//! Trial `i`, setting `j` uses the seed [`sub_seed`]`(seed, i, j)`, so every
//! stream can be regenerated on its own and in any order.

use std::f64::consts::{FRAC_PI_4, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chsh::AngleSetting;
use crate::counting::{
    coincidences, estimate_chsh, heralded_probabilities, two_detector_counts, two_detector_probabilities,
    CountRecord, EstimatedChsh, MeasuredSetting, Mode, TagStream, TimeTag, HERALD_CHANNEL, ORTHOGONAL_OFFSET,
};
use crate::error::{Error, Result};
use crate::noise::PurityModel;
use crate::optics::apply_setting;
use crate::state::{basis_probabilities, DensityMatrix};

const PS_PER_S: f64 = 1e12;

fn default_preparation() -> f64 {
    FRAC_PI_4
}

fn default_jitter() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Pair emission rate, 1/s.
    pub pair_rate: f64,
    /// Acquisition time per setting, s.
    pub duration_s: f64,
    #[serde(default)]
    pub purity_model: Option<PurityModel>,
    /// Angle of the preparation splitter, rad.
    #[serde(default = "default_preparation")]
    pub preparation_angle: f64,
    /// Gaussian timing jitter of each detected photon, ps (standard deviation).
    #[serde(default = "default_jitter")]
    pub jitter_ps: f64,
}

impl SourceConfig {
    pub fn new(pair_rate: f64, duration_s: f64) -> Self {
        SourceConfig {
            pair_rate,
            duration_s,
            purity_model: None,
            preparation_angle: default_preparation(),
            jitter_ps: default_jitter(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate > 0.0 && self.pair_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("pair_rate must be > 0, got {}", self.pair_rate)));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::InvalidConfig(format!("duration_s must be > 0, got {}", self.duration_s)));
        }
        if self.duration_s * PS_PER_S >= u64::MAX as f64 {
            return Err(Error::InvalidConfig("duration_s overflows picosecond timestamps".into()));
        }
        if !self.preparation_angle.is_finite() {
            return Err(Error::InvalidConfig("preparation_angle must be finite".into()));
        }
        if !(self.jitter_ps >= 0.0 && self.jitter_ps.is_finite()) {
            return Err(Error::InvalidConfig(format!("jitter_ps must be >= 0, got {}", self.jitter_ps)));
        }
        if let Some(m) = &self.purity_model {
            PurityModel::new(m.kind, m.p).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }

    /// The state delivered to the analyzer.
    pub fn state(&self) -> Result<DensityMatrix> {
        let prep = Some(self.preparation_angle.into());
        match &self.purity_model {
            Some(m) => m.state(prep),
            None => PurityModel::new(crate::noise::NoiseKind::Depolarizing, 1.0)?.state(prep),
        }
    }
}

fn default_efficiency() -> f64 {
    0.8
}

fn default_dark_rate() -> f64 {
    100.0
}

fn default_dead_time() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub channel: u8,
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
    /// Dark count rate, 1/s.
    #[serde(default = "default_dark_rate")]
    pub dark_rate: f64,
    /// Dead time after each registered tag, s.
    #[serde(default = "default_dead_time")]
    pub dead_time_s: f64,
}

impl DetectorModel {
    /// Default efficiency 0.8, 100 dark counts/s, 1 µs dead time.
    pub fn new(channel: u8) -> Self {
        DetectorModel {
            channel,
            efficiency: default_efficiency(),
            dark_rate: default_dark_rate(),
            dead_time_s: default_dead_time(),
        }
    }

    /// Unit efficiency, no dark counts, no dead time.
    pub fn ideal(channel: u8) -> Self {
        DetectorModel {
            channel,
            efficiency: 1.0,
            dark_rate: 0.0,
            dead_time_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::InvalidConfig(format!(
                "channel {}: efficiency {} outside [0, 1]",
                self.channel, self.efficiency
            )));
        }
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "channel {}: dark_rate must be >= 0",
                self.channel
            )));
        }
        if !(self.dead_time_s >= 0.0 && self.dead_time_s.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "channel {}: dead_time_s must be >= 0",
                self.channel
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingSpec {
    pub id: String,
    pub theta: f64,
    pub delta: f64,
}

fn default_trials() -> u32 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPlan {
    pub mode: Mode,
    pub settings: Vec<SettingSpec>,
    #[serde(default = "default_trials")]
    pub trials: u32,
    pub seed: u64,
}

impl RunPlan {
    pub fn validate(&self) -> Result<()> {
        if self.settings.is_empty() {
            return Err(Error::InvalidConfig("plan has no settings".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        for (i, s) in self.settings.iter().enumerate() {
            if s.id.is_empty() || !s.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(Error::InvalidConfig(format!(
                    "setting id {:?} must be nonempty ASCII alphanumerics, '-' or '_'",
                    s.id
                )));
            }
            if !s.theta.is_finite() || !s.delta.is_finite() {
                return Err(Error::InvalidConfig(format!("setting {:?}: non-finite angle", s.id)));
            }
            if self.settings[..i].iter().any(|o| o.id == s.id) {
                return Err(Error::InvalidConfig(format!("duplicate setting id {:?}", s.id)));
            }
        }
        Ok(())
    }

    /// The four settings of a CHSH measurement at `setting`, with ids
    /// `tt, tdp, tpd, tpdp`.
    pub fn chsh_settings(setting: &AngleSetting) -> Vec<SettingSpec> {
        ["tt", "tdp", "tpd", "tpdp"]
            .iter()
            .zip(setting.pairs())
            .map(|(id, (theta, delta))| SettingSpec {
                id: id.to_string(),
                theta,
                delta,
            })
            .collect()
    }
}

/// Checks the detector set against the mode's channel layout.
pub fn validate_detectors(mode: Mode, detectors: &[DetectorModel]) -> Result<()> {
    let channels: &[u8] = match mode {
        Mode::Heralded => &[1, 2, 3, 4, 5],
        Mode::TwoDetector => &[1, 2],
    };
    if detectors.len() != channels.len() {
        return Err(Error::InvalidConfig(format!(
            "{} mode needs {} detectors, got {}",
            mode.name(),
            channels.len(),
            detectors.len()
        )));
    }
    for ch in channels {
        if detectors.iter().filter(|d| d.channel == *ch).count() != 1 {
            return Err(Error::InvalidConfig(format!(
                "{} mode needs exactly one detector on channel {ch}",
                mode.name()
            )));
        }
    }
    detectors.iter().try_for_each(DetectorModel::validate)
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `seed ⊕ mix64(trial·2³² + setting)`.
pub fn sub_seed(seed: u64, trial: u32, setting: u32) -> u64 {
    seed ^ mix64(((trial as u64) << 32) | setting as u64)
}

fn outcome_probabilities(state: &DensityMatrix, theta: f64, delta: f64) -> Result<[f64; 4]> {
    let p = basis_probabilities(&apply_setting(state, theta.into(), delta.into())?)?.as_array();
    let p = p.map(|x| x.max(0.0));
    let total: f64 = p.iter().sum();
    Ok(p.map(|x| x / total))
}

/// Multinomial draw of `n` outcomes at setting `(θ, δ)`.
pub fn sample_outcomes(state: &DensityMatrix, theta: f64, delta: f64, n: u64, seed: u64) -> Result<[u64; 4]> {
    let p = outcome_probabilities(state, theta, delta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [0u64; 4];
    let mut remaining = n;
    let mut mass = 1.0;
    for k in 0..3 {
        if remaining == 0 {
            break;
        }
        let q = if mass > 0.0 { (p[k] / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(remaining, q).expect("q in [0, 1]").sample(&mut rng);
        counts[k] = draw;
        remaining -= draw;
        mass -= p[k];
    }
    counts[3] = remaining;
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Primary,
    /// The partner setting of the two-detector scheme, rotated by π/2.
    Orthogonal,
}

/// One generated stream with the setting it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedStream {
    pub setting_id: String,
    pub theta: f64,
    pub delta: f64,
    pub role: Role,
    pub trial: u32,
    pub seed: u64,
    pub stream: TagStream,
}

struct Generator<'a> {
    duration_ps: u64,
    source: &'a SourceConfig,
    detectors: &'a [DetectorModel],
    mode: Mode,
}

impl Generator<'_> {
    fn detector(&self, channel: u8) -> &DetectorModel {
        self.detectors
            .iter()
            .find(|d| d.channel == channel)
            .expect("detector layout validated")
    }

    fn jittered(&self, t: u64, jitter: &Option<Normal<f64>>, rng: &mut ChaCha8Rng) -> Option<u64> {
        let shifted = match jitter {
            Some(n) => t as f64 + n.sample(rng).round(),
            None => t as f64,
        };
        (shifted >= 0.0 && shifted < self.duration_ps as f64).then_some(shifted as u64)
    }

    fn stream(&self, probs: [f64; 4], rng: &mut ChaCha8Rng) -> TagStream {
        let channels: Vec<u8> = self.detectors.iter().map(|d| d.channel).collect();
        let mut per_channel: Vec<Vec<u64>> = vec![Vec::new(); 6];
        let gap = Exp::new(self.source.pair_rate).expect("rate validated");
        let jitter = (self.source.jitter_ps > 0.0)
            .then(|| Normal::new(0.0, self.source.jitter_ps).expect("jitter validated"));
        let duration_s = self.source.duration_s;

        let mut t_s = 0.0;
        loop {
            t_s += gap.sample(rng);
            if t_s >= duration_s {
                break;
            }
            let t_ps = (t_s * PS_PER_S) as u64;
            let u: f64 = rng.random();
            let mut outcome = 3;
            let mut acc = 0.0;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    outcome = k;
                    break;
                }
            }
            let signal_channel = match self.mode {
                Mode::Heralded => Some(outcome as u8 + 1),
                // only the s2 = 0 arm is monitored: 00 → D1, 10 → D2
                Mode::TwoDetector => match outcome {
                    0 => Some(1),
                    2 => Some(2),
                    _ => None,
                },
            };
            if self.mode == Mode::Heralded {
                self.detect(HERALD_CHANNEL, t_ps, &jitter, rng, &mut per_channel);
            }
            if let Some(ch) = signal_channel {
                self.detect(ch, t_ps, &jitter, rng, &mut per_channel);
            }
        }

        for &ch in &channels {
            let det = self.detector(ch);
            let mean = det.dark_rate * duration_s;
            if mean > 0.0 {
                let n = Poisson::new(mean).expect("positive mean").sample(rng) as u64;
                for _ in 0..n {
                    per_channel[ch as usize].push(rng.random_range(0..self.duration_ps));
                }
            }
        }

        let mut tags = Vec::new();
        for &ch in &channels {
            let dead_ps = (self.detector(ch).dead_time_s * PS_PER_S).round() as u64;
            let times = &mut per_channel[ch as usize];
            times.sort_unstable();
            let mut last: Option<u64> = None;
            for &t in times.iter() {
                if last.is_none_or(|l| t - l >= dead_ps) {
                    tags.push(TimeTag { channel: ch, t });
                    last = Some(t);
                }
            }
        }
        TagStream::from_unsorted(tags).expect("channels validated")
    }

    fn detect(
        &self,
        channel: u8,
        t_ps: u64,
        jitter: &Option<Normal<f64>>,
        rng: &mut ChaCha8Rng,
        per_channel: &mut [Vec<u64>],
    ) {
        let eff = self.detector(channel).efficiency;
        // draw order is fixed regardless of the outcome
        let keep = rng.random::<f64>() < eff;
        let t = self.jittered(t_ps, jitter, rng);
        if let (true, Some(t)) = (keep, t) {
            per_channel[channel as usize].push(t);
        }
    }
}

fn validate_all(source: &SourceConfig, detectors: &[DetectorModel], plan: &RunPlan) -> Result<()> {
    source.validate()?;
    plan.validate()?;
    validate_detectors(plan.mode, detectors)
}

/// Streams for one trial, in plan order; in two-detector mode each setting is
/// followed by its orthogonal partner.
pub fn simulate_tags(
    source: &SourceConfig,
    detectors: &[DetectorModel],
    plan: &RunPlan,
    trial: u32,
) -> Result<Vec<SimulatedStream>> {
    validate_all(source, detectors, plan)?;
    let state = source.state()?;
    let mut out = Vec::new();
    for j in 0..plan.settings.len() {
        out.extend(simulate_one(source, detectors, plan, &state, trial, j)?);
    }
    Ok(out)
}

fn simulate_one(
    source: &SourceConfig,
    detectors: &[DetectorModel],
    plan: &RunPlan,
    state: &DensityMatrix,
    trial: u32,
    j: usize,
) -> Result<Vec<SimulatedStream>> {
    let spec = &plan.settings[j];
    let seed = sub_seed(plan.seed, trial, j as u32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let generator = Generator {
        duration_ps: (source.duration_s * PS_PER_S).round() as u64,
        source,
        detectors,
        mode: plan.mode,
    };
    let mut roles = vec![(Role::Primary, spec.theta)];
    if plan.mode == Mode::TwoDetector {
        roles.push((Role::Orthogonal, spec.theta + ORTHOGONAL_OFFSET));
    }
    roles
        .into_iter()
        .map(|(role, theta)| {
            let probs = outcome_probabilities(state, theta, spec.delta)?;
            Ok(SimulatedStream {
                setting_id: spec.id.clone(),
                theta,
                delta: spec.delta,
                role,
                trial,
                seed,
                stream: generator.stream(probs, &mut rng),
            })
        })
        .collect()
}

/// Reduced counts of one setting in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u32,
    pub setting_id: String,
    pub theta: f64,
    pub delta: f64,
    pub seed: u64,
    pub primary: CountRecord,
    /// Present in two-detector mode only.
    pub orthogonal: Option<CountRecord>,
}

impl TrialRecord {
    pub fn estimate(&self) -> Result<MeasuredSetting> {
        let estimate = match &self.orthogonal {
            None => heralded_probabilities(&self.primary)?,
            Some(orth) => two_detector_probabilities(&self.primary, orth)?,
        };
        Ok(MeasuredSetting {
            setting_id: self.setting_id.clone(),
            theta: self.theta,
            delta: self.delta,
            estimate,
        })
    }
}

/// Reduces streams of one setting (primary, then optionally orthogonal) to counts.
pub fn reduce_streams(streams: &[SimulatedStream], window_ps: u64) -> Result<TrialRecord> {
    let primary = streams
        .iter()
        .find(|s| s.role == Role::Primary)
        .ok_or_else(|| Error::RecordMismatch("no primary stream".into()))?;
    let orthogonal = streams.iter().find(|s| s.role == Role::Orthogonal);
    let reduce = |s: &SimulatedStream| {
        if orthogonal.is_some() {
            two_detector_counts(&s.setting_id, &s.stream)
        } else {
            coincidences(&s.setting_id, &s.stream, HERALD_CHANNEL, window_ps)
        }
    };
    Ok(TrialRecord {
        trial: primary.trial,
        setting_id: primary.setting_id.clone(),
        theta: primary.theta,
        delta: primary.delta,
        seed: primary.seed,
        primary: reduce(primary),
        orthogonal: orthogonal.map(reduce),
    })
}

/// Simulates and reduces every (trial, setting), ordered by trial then setting.
pub fn run_experiment(
    source: &SourceConfig,
    detectors: &[DetectorModel],
    plan: &RunPlan,
    window_ps: u64,
) -> Result<Vec<TrialRecord>> {
    validate_all(source, detectors, plan)?;
    if window_ps == 0 {
        return Err(Error::InvalidConfig("coincidence window must be > 0".into()));
    }
    let state = source.state()?;
    let n = plan.settings.len();
    (0..plan.trials as usize * n)
        .into_par_iter()
        .map(|idx| {
            let (trial, j) = ((idx / n) as u32, idx % n);
            let streams = simulate_one(source, detectors, plan, &state, trial, j)?;
            reduce_streams(&streams, window_ps)
        })
        .collect()
}

/// Mean and spread of a per-trial statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStatistics {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    pub stderr_of_mean: f64,
}

impl TrialStatistics {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyData);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(TrialStatistics {
            mean,
            std_dev: var.sqrt(),
            stderr_of_mean: (var / n).sqrt(),
            values,
        })
    }
}

/// Per-trial CHSH estimates at `setting`, in trial order.
pub fn chsh_per_trial(records: &[TrialRecord], setting: &AngleSetting) -> Result<Vec<EstimatedChsh>> {
    let mut trials: Vec<u32> = records.iter().map(|r| r.trial).collect();
    trials.sort_unstable();
    trials.dedup();
    trials
        .into_iter()
        .map(|t| {
            let measured: Vec<MeasuredSetting> = records
                .iter()
                .filter(|r| r.trial == t)
                .map(TrialRecord::estimate)
                .collect::<Result<_>>()?;
            estimate_chsh(&measured, setting)
        })
        .collect()
}

/// Mean CHSH value over trials.
pub fn chsh_over_trials(records: &[TrialRecord], setting: &AngleSetting) -> Result<TrialStatistics> {
    let per_trial = chsh_per_trial(records, setting)?;
    TrialStatistics::from_values(per_trial.iter().map(|e| e.result.s_value).collect())
}

/// The maximally violating setting of the constrained slice:
/// `θ = π/8, δ = 0, δ′ = π/4, θ′ = θ + δ′`.
pub fn optimal_setting() -> AngleSetting {
    AngleSetting::constrained_slice(PI / 8.0, PI / 4.0)
}
