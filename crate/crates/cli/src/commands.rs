use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use pathbell::chsh::{half_turn_grid, surface_max, sweep_surface, write_surface_csv};
use pathbell::counting::{
    coincidences, estimate_chsh, find_setting, parse_tags, two_detector_counts, write_probability_csv, write_tags,
    CountRecord, EstimatedProbabilities, MeasuredSetting, Mode, HERALD_CHANNEL,
};
use pathbell::noise::{purity_threshold, s_max_vs_purity, write_purity_csv, NoiseKind};
use pathbell::sim::{simulate_tags, Role, SimulatedStream, TrialRecord, TrialStatistics};
use pathbell::{max_s, AngleSetting, ChshResult, Error};

use crate::args::{PurityGrid, StateSpec};
use crate::files::{
    CombinationSummary, Manifest, ManifestEntry, RunConfig, SettingSummary, Summary, TagMeta, MANIFEST_VERSION,
    SUMMARY_VERSION,
};

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration: exit 2.
    Usage(String),
    /// I/O, parse or data errors at run time: exit 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn runtime(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(runtime)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

pub fn sweep(fixed: (f64, f64), grid: usize, state: StateSpec, out: &Path) -> CliResult<()> {
    if grid == 0 {
        return Err(CliError::Usage("--grid must be at least 1".into()));
    }
    let rho = state.density_matrix().map_err(|e| CliError::Usage(format!("--state: {e}")))?;
    let axis = half_turn_grid(grid);
    let rows = sweep_surface(&rho, fixed, &axis, &axis).map_err(runtime)?;
    let mut w = create(out)?;
    write_surface_csv(&rows, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(out, e))?;
    let best = surface_max(&rows).expect("grid is non-empty");
    println!(
        "max S = {:.6} at theta_p = {:.6}, delta_p = {:.6}",
        best.s, best.theta_p, best.delta_p
    );
    Ok(())
}

pub fn purity(kind: NoiseKind, grid: PurityGrid, out: &Path) -> CliResult<()> {
    let rows = s_max_vs_purity(kind, &grid.points()).map_err(runtime)?;
    let mut w = create(out)?;
    write_purity_csv(&rows, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(out, e))?;
    let threshold = purity_threshold(kind).map_err(runtime)?;
    println!("threshold {threshold:.6}");
    if kind != NoiseKind::Depolarizing {
        println!("note: see \"Multi-photon threshold\" in the README for how this compares with the published curve");
    }
    Ok(())
}

#[derive(Serialize)]
struct MaxSReport {
    state: String,
    #[serde(flatten)]
    result: ChshResult,
}

pub fn max_s_report(state: StateSpec) -> CliResult<()> {
    let rho = state.density_matrix().map_err(|e| CliError::Usage(format!("--state: {e}")))?;
    let result = max_s(&rho).map_err(runtime)?;
    let report = MaxSReport {
        state: state.to_string(),
        result,
    };
    println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?);
    Ok(())
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    RunConfig::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn stream_stem(s: &SimulatedStream) -> String {
    match s.role {
        Role::Primary => format!("{}.t{:04}", s.setting_id, s.trial),
        Role::Orthogonal => format!("{}.perp.t{:04}", s.setting_id, s.trial),
    }
}

/// Files written so far, deleted again if the command fails.
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
    done: bool,
}

impl Outputs {
    fn open(dir: &Path) -> CliResult<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
            done: false,
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

pub fn simulate(config: &Path, out_dir: &Path) -> CliResult<()> {
    let cfg = load_config(config)?;
    let trials: Vec<u32> = (0..cfg.plan.trials).collect();
    let streams: Vec<Vec<SimulatedStream>> = trials
        .par_iter()
        .map(|&t| simulate_tags(&cfg.source, &cfg.detectors, &cfg.plan, t))
        .collect::<pathbell::Result<_>>()
        .map_err(runtime)?;

    let mut outputs = Outputs::open(out_dir)?;
    let mut entries = Vec::new();
    for s in streams.iter().flatten() {
        let stem = stream_stem(s);
        let tags_name = format!("{stem}.tags");
        let meta_name = format!("{stem}.meta.json");

        let tags_path = outputs.path(&tags_name);
        let mut w = create(&tags_path)?;
        write_tags(&s.stream, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| io_err(&tags_path, e))?;

        let meta = TagMeta {
            setting_id: s.setting_id.clone(),
            theta: s.theta,
            delta: s.delta,
            duration_s: cfg.source.duration_s,
            seed: s.seed,
            mode: cfg.plan.mode,
            trial: s.trial,
            role: s.role,
            source: cfg.source.clone(),
            detectors: cfg.detectors.clone(),
        };
        let meta_path = outputs.path(&meta_name);
        write_json(&meta_path, &meta)?;

        entries.push(ManifestEntry {
            tags: tags_name,
            meta: meta_name,
            setting_id: s.setting_id.clone(),
            trial: s.trial,
            role: s.role,
            seed: s.seed,
            tag_count: s.stream.len() as u64,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION.into(),
        mode: cfg.plan.mode,
        seed: cfg.plan.seed,
        trials: cfg.plan.trials,
        files: entries,
    };
    let manifest_path = outputs.path("manifest.json");
    write_json(&manifest_path, &manifest)?;
    outputs.done = true;
    println!("wrote {} tag files to {}", manifest.files.len(), out_dir.display());
    Ok(())
}

/// Sidecar path for a tag file: `x.tags` → `x.meta.json`.
pub fn sidecar_path(tags: &Path) -> PathBuf {
    tags.with_extension("meta.json")
}

struct Reduced {
    meta: TagMeta,
    record: CountRecord,
}

fn reduce_file(path: &Path, mode: Mode, window_ps: u64) -> CliResult<Reduced> {
    let meta_path = sidecar_path(path);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: TagMeta = serde_json::from_str(&meta_text).map_err(|e| runtime(format!("{}: {e}", meta_path.display())))?;
    if meta.mode != mode {
        return Err(runtime(format!(
            "{}: recorded in {} mode, analysis requested {}",
            path.display(),
            meta.mode.name(),
            mode.name()
        )));
    }
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let stream = parse_tags(&bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let record = match mode {
        Mode::Heralded => coincidences(&meta.setting_id, &stream, HERALD_CHANNEL, window_ps),
        Mode::TwoDetector => two_detector_counts(&meta.setting_id, &stream),
    };
    Ok(Reduced { meta, record })
}

/// Distinct values in first-seen order, matched within `1e-9`.
fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for v in values {
        if !out.iter().any(|u| (u - v).abs() < 1e-9) {
            out.push(v);
        }
    }
    out
}

pub fn analyze(pattern: &str, mode: Mode, window_ps: u64, out: &Path, summary_out: &Path) -> CliResult<()> {
    if window_ps == 0 {
        return Err(CliError::Usage("--window must be > 0".into()));
    }
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| CliError::Usage(format!("--tags: {e}")))?
        .collect::<std::result::Result<_, _>>()
        .map_err(runtime)?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "tags"));
    paths.sort();
    if paths.is_empty() {
        return Err(runtime(format!("no tag files match {pattern:?}: {}", Error::EmptyData)));
    }

    let reduced: Vec<Reduced> = paths
        .par_iter()
        .map(|p| reduce_file(p, mode, window_ps))
        .collect::<CliResult<_>>()?;

    // (trial, setting id) → (primary, orthogonal)
    let mut slots: BTreeMap<(u32, String), (Option<&Reduced>, Option<&Reduced>)> = BTreeMap::new();
    for r in &reduced {
        let slot = slots.entry((r.meta.trial, r.meta.setting_id.clone())).or_default();
        let target = match r.meta.role {
            Role::Primary => &mut slot.0,
            Role::Orthogonal => &mut slot.1,
        };
        if target.is_some() {
            return Err(runtime(format!(
                "duplicate {:?} stream for setting {:?}, trial {}",
                r.meta.role, r.meta.setting_id, r.meta.trial
            )));
        }
        *target = Some(r);
    }

    let mut records = Vec::with_capacity(slots.len());
    for ((trial, id), (primary, orthogonal)) in &slots {
        let primary = primary.ok_or_else(|| runtime(format!("setting {id:?}, trial {trial}: no primary stream")))?;
        if mode == Mode::TwoDetector && orthogonal.is_none() {
            return Err(runtime(format!("setting {id:?}, trial {trial}: no orthogonal stream")));
        }
        records.push(TrialRecord {
            trial: *trial,
            setting_id: id.clone(),
            theta: primary.meta.theta,
            delta: primary.meta.delta,
            seed: primary.meta.seed,
            primary: primary.record.clone(),
            orthogonal: orthogonal.map(|o| o.record.clone()),
        });
    }

    // counts pooled over trials, per setting
    let mut pooled: BTreeMap<&str, TrialRecord> = BTreeMap::new();
    for r in &records {
        match pooled.get_mut(r.setting_id.as_str()) {
            None => {
                pooled.insert(&r.setting_id, r.clone());
            }
            Some(acc) => {
                if (acc.theta - r.theta).abs() > 1e-12 || (acc.delta - r.delta).abs() > 1e-12 {
                    return Err(runtime(format!("setting {:?} has inconsistent angles across trials", r.setting_id)));
                }
                acc.primary.accumulate(&r.primary).map_err(runtime)?;
                if let (Some(a), Some(o)) = (acc.orthogonal.as_mut(), r.orthogonal.as_ref()) {
                    a.accumulate(o).map_err(runtime)?;
                }
            }
        }
    }
    let measured: Vec<MeasuredSetting> = pooled
        .values()
        .map(TrialRecord::estimate)
        .collect::<pathbell::Result<_>>()
        .map_err(runtime)?;

    let rows: Vec<(String, EstimatedProbabilities)> =
        measured.iter().map(|m| (m.setting_id.clone(), m.estimate)).collect();
    let mut w = create(out)?;
    write_probability_csv(&rows, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(out, e))?;

    let mut trial_ids: Vec<u32> = records.iter().map(|r| r.trial).collect();
    trial_ids.dedup();
    let per_trial: Vec<Vec<MeasuredSetting>> = trial_ids
        .iter()
        .map(|t| {
            records
                .iter()
                .filter(|r| r.trial == *t)
                .map(TrialRecord::estimate)
                .collect::<pathbell::Result<Vec<_>>>()
        })
        .collect::<pathbell::Result<_>>()
        .map_err(runtime)?;

    let thetas = distinct(measured.iter().map(|m| m.theta));
    let deltas = distinct(measured.iter().map(|m| m.delta));
    let mut combinations = Vec::new();
    for &theta in &thetas {
        for &theta_p in thetas.iter().filter(|&&t| t != theta) {
            for &delta in &deltas {
                for &delta_p in deltas.iter().filter(|&&d| d != delta) {
                    let setting = AngleSetting::new(theta, delta, theta_p, delta_p).map_err(runtime)?;
                    if let Some(c) = combination(&measured, &per_trial, &setting)? {
                        combinations.push(c);
                    }
                }
            }
        }
    }
    let best = combinations
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, c)| match best {
            Some((_, s)) if s >= c.s_mean => best,
            _ => Some((i, c.s_mean)),
        })
        .map(|(i, _)| i);

    let summary = Summary {
        version: SUMMARY_VERSION.into(),
        mode,
        window_ps,
        files: paths.len() as u64,
        trials: trial_ids.len() as u32,
        settings: measured
            .iter()
            .map(|m| SettingSummary {
                setting_id: m.setting_id.clone(),
                theta: m.theta,
                delta: m.delta,
                probabilities: m.estimate.probs.as_array(),
                stderr: m.estimate.stderr,
                total: m.estimate.total,
                correlation: m.estimate.correlation(),
            })
            .collect(),
        combinations,
        best,
    };
    write_json(summary_out, &summary)?;
    if let Some(i) = best {
        let c = &summary.combinations[i];
        println!("S = {:.4} ± {:.4} over {} trials", c.s_mean, c.s_stderr, summary.trials);
    }
    Ok(())
}

fn combination(
    pooled: &[MeasuredSetting],
    per_trial: &[Vec<MeasuredSetting>],
    setting: &AngleSetting,
) -> CliResult<Option<CombinationSummary>> {
    let pairs = setting.pairs();
    let mut ids: Vec<String> = Vec::with_capacity(4);
    for (t, d) in pairs {
        match find_setting(pooled, t, d) {
            Some(m) => ids.push(m.setting_id.clone()),
            None => return Ok(None),
        }
    }
    let est = estimate_chsh(pooled, setting).map_err(runtime)?;
    let values: Vec<f64> = per_trial
        .iter()
        .map(|m| estimate_chsh(m, setting).map(|e| e.result.s_value))
        .collect::<pathbell::Result<_>>()
        .map_err(runtime)?;
    let stats = TrialStatistics::from_values(values).map_err(runtime)?;
    Ok(Some(CombinationSummary {
        theta: setting.theta,
        delta: setting.delta,
        theta_p: setting.theta_p,
        delta_p: setting.delta_p,
        setting_ids: ids.try_into().expect("four settings"),
        e_values: est.result.e_values,
        e_stderr: est.e_stderr,
        s_pooled: est.result.s_value,
        s_pooled_stderr: est.s_stderr,
        s_mean: stats.mean,
        s_std_dev: stats.std_dev,
        s_stderr: stats.stderr_of_mean,
        s_trials: stats.values,
    }))
}
