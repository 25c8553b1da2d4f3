//! Purity models: the depolarizing channel and the single/multi-photon
//! mixture, and the largest CHSH value each allows as purity varies.

use std::f64::consts::FRAC_1_SQRT_2;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chsh::max_s;
use crate::error::{Error, Result};
use crate::format::fmt_sig15;
use crate::optics::{bell_input_state, ElementAngle};
use crate::state::{DensityMatrix, PureState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `p·ρ + (1−p)·I/4`.
    Depolarizing,
    /// `p·ρ + (1−p)/3·(ρ̂₁ + ρ̂₂ + ρ̂₃)` with each noise component trace-normalized.
    Multiphoton,
    /// The same mixture with the unnormalized `(|01⟩+|10⟩)(⟨01|+⟨10|)` term
    /// (trace 2), renormalized as a whole afterwards.
    MultiphotonLiteral,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Depolarizing => "depolarizing",
            NoiseKind::Multiphoton => "multiphoton",
            NoiseKind::MultiphotonLiteral => "multiphoton_literal",
        }
    }
}

/// A noise family at a given purity weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PurityModel {
    pub kind: NoiseKind,
    pub p: f64,
}

impl PurityModel {
    pub fn new(kind: NoiseKind, p: f64) -> Result<Self> {
        check_purity(p)?;
        Ok(PurityModel { kind, p })
    }

    /// The model applied to the input prepared at `preparation`
    /// (`None`: balanced splitter).
    pub fn state(&self, preparation: Option<ElementAngle>) -> Result<DensityMatrix> {
        let pure = DensityMatrix::from_pure(&bell_input_state(preparation));
        match self.kind {
            NoiseKind::Depolarizing => depolarize(&pure, self.p),
            NoiseKind::Multiphoton => multiphoton_mixture(&pure, self.p),
            NoiseKind::MultiphotonLiteral => multiphoton_mixture_literal(&pure, self.p),
        }
    }
}

fn check_purity(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::PurityOutOfRange(p))
    }
}

/// The depolarizing channel `p·ρ + (1−p)·I/d`.
pub fn depolarize(rho: &DensityMatrix, p: f64) -> Result<DensityMatrix> {
    check_purity(p)?;
    let mixed = DensityMatrix::maximally_mixed(rho.dim())?;
    DensityMatrix::mixture(&[(p, rho), (1.0 - p, &mixed)])
}

/// The three multi-photon noise components: `(|01⟩+|10⟩)/√2` (both detectors
/// fire), `|01⟩` and `|10⟩` (unresolved detection in one detector).
pub fn multiphoton_components() -> [PureState; 3] {
    [
        PureState::from_real(&[0.0, FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0]).expect("normalized"),
        PureState::basis(4, 1).expect("in range"),
        PureState::basis(4, 2).expect("in range"),
    ]
}

fn multiphoton_mixture(pure: &DensityMatrix, p: f64) -> Result<DensityMatrix> {
    check_purity(p)?;
    let [r1, r2, r3] = multiphoton_components().map(|c| DensityMatrix::from_pure(&c));
    let w = (1.0 - p) / 3.0;
    DensityMatrix::mixture(&[(p, pure), (w, &r1), (w, &r2), (w, &r3)])
}

fn multiphoton_mixture_literal(pure: &DensityMatrix, p: f64) -> Result<DensityMatrix> {
    check_purity(p)?;
    let [r1, r2, r3] = multiphoton_components().map(|c| DensityMatrix::from_pure(&c));
    // ρ₁ carries trace 2 before normalization
    let w = (1.0 - p) / 3.0;
    let total = p + w * 4.0;
    DensityMatrix::mixture(&[
        (p / total, pure),
        (2.0 * w / total, &r1),
        (w / total, &r2),
        (w / total, &r3),
    ])
}

/// Single-photon state mixed with multi-photon noise, normalized model.
pub fn multiphoton_state(p: f64) -> Result<DensityMatrix> {
    PurityModel::new(NoiseKind::Multiphoton, p)?.state(None)
}

/// As [`multiphoton_state`] but with the unnormalized first noise term.
pub fn multiphoton_state_literal(p: f64) -> Result<DensityMatrix> {
    PurityModel::new(NoiseKind::MultiphotonLiteral, p)?.state(None)
}

/// The ideal input after the depolarizing channel (a Werner state).
pub fn werner_state(p: f64) -> Result<DensityMatrix> {
    PurityModel::new(NoiseKind::Depolarizing, p)?.state(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurityRow {
    pub purity: f64,
    pub s_max: f64,
}

/// Largest CHSH value of the model state at each purity in `grid`.
pub fn s_max_vs_purity(kind: NoiseKind, grid: &[f64]) -> Result<Vec<PurityRow>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    grid.par_iter()
        .map(|&p| {
            let state = PurityModel::new(kind, p)?.state(None)?;
            Ok(PurityRow {
                purity: p,
                s_max: max_s(&state)?.s_value,
            })
        })
        .collect()
}

pub fn write_purity_csv<W: Write>(rows: &[PurityRow], mut out: W) -> io::Result<()> {
    writeln!(out, "purity,s_max")?;
    for r in rows {
        writeln!(out, "{},{}", fmt_sig15(r.purity), fmt_sig15(r.s_max))?;
    }
    Ok(())
}

/// Bisection tolerance on the purity threshold.
pub const THRESHOLD_TOL: f64 = 1e-9;

/// Smallest purity in `[0.5, 1]` at which `S_max` reaches 2.
///
/// The search is confined to the upper branch: the multi-photon mixture also
/// violates near `p = 0`, where its anticorrelated noise dominates.
pub fn purity_threshold(kind: NoiseKind) -> Result<f64> {
    let s_at = |p: f64| -> Result<f64> { Ok(max_s(&PurityModel::new(kind, p)?.state(None)?)?.s_value) };
    let (mut lo, mut hi) = (0.5, 1.0);
    if s_at(lo)? >= 2.0 || s_at(hi)? < 2.0 {
        return Err(Error::InvalidGrid(format!(
            "threshold not bracketed in [0.5, 1] for {}",
            kind.name()
        )));
    }
    while hi - lo > THRESHOLD_TOL {
        let mid = 0.5 * (lo + hi);
        if s_at(mid)? >= 2.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
