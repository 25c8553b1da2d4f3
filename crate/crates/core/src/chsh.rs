//! Correlations, the CHSH parameter, angle sweeps and the search for the
//! largest attainable violation.

use std::f64::consts::PI;
use std::io::{self, Write};

use nalgebra::Matrix4;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_sig15;
use crate::optics::{apply_setting, setting_matrix4};
use crate::state::{basis_probabilities, DensityMatrix};

/// Probabilities of the four basis outcomes, ordered `00, 01, 10, 11`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeProbabilities {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

impl OutcomeProbabilities {
    pub const SUM_TOL: f64 = 1e-9;
    pub const NEG_TOL: f64 = -1e-12;

    pub fn new(p00: f64, p01: f64, p10: f64, p11: f64) -> Result<Self> {
        let p = OutcomeProbabilities { p00, p01, p10, p11 };
        let arr = p.as_array();
        if arr.iter().any(|x| !x.is_finite() || *x < Self::NEG_TOL) {
            return Err(Error::InvalidState(format!("invalid probabilities {arr:?}")));
        }
        let sum: f64 = arr.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::InvalidState(format!("probabilities sum to {sum}")));
        }
        Ok(p)
    }

    pub(crate) fn from_raw(p: [f64; 4]) -> Self {
        OutcomeProbabilities {
            p00: p[0],
            p01: p[1],
            p10: p[2],
            p11: p[3],
        }
    }

    pub fn uniform() -> Self {
        Self::from_raw([0.25; 4])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p00, self.p01, self.p10, self.p11]
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

/// The four analyzer angles `(θ, δ, θ′, δ′)`, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSetting {
    pub theta: f64,
    pub delta: f64,
    pub theta_p: f64,
    pub delta_p: f64,
}

impl AngleSetting {
    pub fn new(theta: f64, delta: f64, theta_p: f64, delta_p: f64) -> Result<Self> {
        if [theta, delta, theta_p, delta_p].iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteAngle);
        }
        Ok(AngleSetting {
            theta,
            delta,
            theta_p,
            delta_p,
        })
    }

    /// The slice with `δ = 0` and `θ′ = θ + δ′`.
    pub fn constrained_slice(theta: f64, delta_p: f64) -> Self {
        AngleSetting {
            theta,
            delta: 0.0,
            theta_p: theta + delta_p,
            delta_p,
        }
    }

    /// The four `(θ, δ)` pairs, in the order `(θ,δ), (θ,δ′), (θ′,δ), (θ′,δ′)`.
    pub fn pairs(&self) -> [(f64, f64); 4] {
        [
            (self.theta, self.delta),
            (self.theta, self.delta_p),
            (self.theta_p, self.delta),
            (self.theta_p, self.delta_p),
        ]
    }

    fn tuple(&self) -> [f64; 4] {
        [self.theta, self.delta, self.theta_p, self.delta_p]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    pub s_value: f64,
    /// `E(θ,δ), E(θ,δ′), E(θ′,δ), E(θ′,δ′)`.
    pub e_values: [f64; 4],
    pub setting: AngleSetting,
}

/// `E = P00 + P11 − P01 − P10`.
pub fn correlation(p: &OutcomeProbabilities) -> f64 {
    p.p00 + p.p11 - p.p01 - p.p10
}

/// `|E₁ − E₂| + |E₃ + E₄|` for correlations ordered as in [`ChshResult`].
pub fn s_from_correlations(e: [f64; 4]) -> f64 {
    (e[0] - e[1]).abs() + (e[2] + e[3]).abs()
}

/// Correlation at analyzer setting `(θ, δ)`.
pub fn correlation_at(state: &DensityMatrix, theta: f64, delta: f64) -> Result<f64> {
    let rotated = apply_setting(state, theta.into(), delta.into())?;
    Ok(correlation(&basis_probabilities(&rotated)?))
}

pub fn chsh_s(state: &DensityMatrix, setting: &AngleSetting) -> Result<ChshResult> {
    let mut e_values = [0.0; 4];
    for (e, (t, d)) in e_values.iter_mut().zip(setting.pairs()) {
        *e = correlation_at(state, t, d)?;
    }
    Ok(ChshResult {
        s_value: s_from_correlations(e_values),
        e_values,
        setting: *setting,
    })
}

/// `n` evenly spaced angles `k·π/n`, `k = 0..n`, covering one period of the
/// correlation.
pub fn half_turn_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * PI / n as f64).collect()
}

/// One row of a `(θ′, δ′)` surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub theta_p: f64,
    pub delta_p: f64,
    pub s: f64,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidGrid("non-finite grid value".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid("grid is not strictly increasing".into()));
    }
    Ok(())
}

/// `S(θ′, δ′)` with `(θ, δ)` held fixed, row-major over `grid_p` then `grid_q`.
pub fn sweep_surface(
    state: &DensityMatrix,
    fixed: (f64, f64),
    grid_p: &[f64],
    grid_q: &[f64],
) -> Result<Vec<SurfaceRow>> {
    check_grid(grid_p)?;
    check_grid(grid_q)?;
    let (theta, delta) = fixed;
    let rows: Result<Vec<Vec<SurfaceRow>>> = grid_p
        .par_iter()
        .map(|&theta_p| {
            grid_q
                .iter()
                .map(|&delta_p| {
                    let setting = AngleSetting::new(theta, delta, theta_p, delta_p)?;
                    let r = chsh_s(state, &setting)?;
                    Ok(SurfaceRow {
                        theta_p,
                        delta_p,
                        s: r.s_value,
                    })
                })
                .collect()
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

/// Largest `s` in a surface; ties go to the first row.
pub fn surface_max(rows: &[SurfaceRow]) -> Option<SurfaceRow> {
    rows.iter()
        .copied()
        .fold(None, |best: Option<SurfaceRow>, r| match best {
            Some(b) if b.s >= r.s => Some(b),
            _ => Some(r),
        })
}

pub fn write_surface_csv<W: Write>(rows: &[SurfaceRow], mut out: W) -> io::Result<()> {
    writeln!(out, "theta_p,delta_p,s")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{}",
            fmt_sig15(r.theta_p),
            fmt_sig15(r.delta_p),
            fmt_sig15(r.s)
        )?;
    }
    Ok(())
}

/// Correlation as a function of the analyzer angle sum, for hot loops.
///
/// Evaluates the same `R(α) ⊗ I` pipeline as [`correlation_at`] on a
/// stack-allocated copy of the state.
#[derive(Debug, Clone)]
pub struct CorrelationProfile {
    rho: Matrix4<Complex64>,
}

impl CorrelationProfile {
    pub fn new(state: &DensityMatrix) -> Result<Self> {
        let rho = state.to_matrix4().ok_or(Error::DimensionMismatch {
            expected: 4,
            found: state.dim(),
        })?;
        Ok(CorrelationProfile { rho })
    }

    pub fn at(&self, alpha: f64) -> f64 {
        let u = setting_matrix4(alpha);
        let out = u * self.rho * u.adjoint();
        out[(0, 0)].re + out[(3, 3)].re - out[(1, 1)].re - out[(2, 2)].re
    }
}

/// Coarse grid resolution per angle sum in [`max_s`].
pub const MAX_S_COARSE: usize = 64;
/// Angle resolution of the golden-section refinement.
pub const REFINE_TOL: f64 = 1e-8;
const TIE_TOL: f64 = 1e-9;
const MAX_CYCLES: usize = 200;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a maximum of `f` on `[lo, hi]`.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Cyclic golden-section ascent of `f` from `start`, each coordinate searched
/// within `±half_width` of its current value. Moves are only accepted when
/// they do not decrease `f`.
fn coordinate_ascent<const N: usize>(
    f: impl Fn(&[f64; N]) -> f64,
    start: [f64; N],
    half_width: f64,
) -> ([f64; N], f64) {
    let mut x = start;
    let mut best = f(&x);
    for _ in 0..MAX_CYCLES {
        let before = (x, best);
        for i in 0..N {
            let center = x[i];
            let (xi, fi) = golden_max(
                |v| {
                    let mut y = x;
                    y[i] = v;
                    f(&y)
                },
                center - half_width,
                center + half_width,
                REFINE_TOL,
            );
            if fi >= best {
                x[i] = xi;
                best = fi;
            }
        }
        let moved = x
            .iter()
            .zip(before.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if moved < REFINE_TOL && best - before.1 <= 1e-15 {
            break;
        }
    }
    (x, best)
}

fn reduce_half_turn(x: f64) -> f64 {
    let r = x.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// Global maximum of `S` over all four analyzer angles.
///
/// `E(θ,δ)` depends only on `θ+δ`, so the search runs over the three free
/// sums with `δ = 0`: `θ`, `θ′` and `δ′`. A coarse grid of
/// [`MAX_S_COARSE`] points per sum picks the starting point (ties within
/// 1e-9 go to the lexicographically smallest angle tuple), then cyclic
/// golden-section refinement resolves each angle to [`REFINE_TOL`].
pub fn max_s(state: &DensityMatrix) -> Result<ChshResult> {
    let profile = CorrelationProfile::new(state)?;
    let n = MAX_S_COARSE;
    let step = PI / n as f64;
    let table: Vec<f64> = (0..n).map(|k| profile.at(k as f64 * step)).collect();
    let s_at = |a: usize, c: usize, k: usize| {
        (table[a] - table[(a + k) % n]).abs() + (table[c] + table[(c + k) % n]).abs()
    };

    let mut coarse_max = f64::NEG_INFINITY;
    for a in 0..n {
        for c in 0..n {
            for k in 0..n {
                coarse_max = coarse_max.max(s_at(a, c, k));
            }
        }
    }
    // (θ, δ=0, θ′, δ′) = (a, 0, c, k) in grid units; iterate in that order
    let start = (0..n)
        .flat_map(|a| (0..n).flat_map(move |c| (0..n).map(move |k| (a, c, k))))
        .find(|&(a, c, k)| s_at(a, c, k) >= coarse_max - TIE_TOL)
        .expect("grid is nonempty");

    let objective = |x: &[f64; 3]| {
        let [theta, theta_p, delta_p] = *x;
        (profile.at(theta) - profile.at(theta + delta_p)).abs()
            + (profile.at(theta_p) + profile.at(theta_p + delta_p)).abs()
    };
    let x0 = [
        start.0 as f64 * step,
        start.1 as f64 * step,
        start.2 as f64 * step,
    ];
    let (x, refined) = coordinate_ascent(objective, x0, step);
    let x = if refined >= objective(&x0) { x } else { x0 };
    let setting = AngleSetting {
        theta: reduce_half_turn(x[0]),
        delta: 0.0,
        theta_p: reduce_half_turn(x[1]),
        delta_p: reduce_half_turn(x[2]),
    };
    chsh_s(state, &setting)
}

/// Local maxima of `S` on the constrained slice (`δ = 0`, `θ′ = θ + δ′`).
///
/// The slice is sampled on an `n × n` grid over `[0, π)²`; every grid point
/// that is at least as large as its eight (periodic) neighbours and within
/// `keep_below_max` of the grid maximum is refined by golden-section ascent.
/// Duplicates closer than 1e-6 are merged. Results are sorted by angle.
pub fn slice_maxima(state: &DensityMatrix, n: usize, keep_below_max: f64) -> Result<Vec<ChshResult>> {
    if n < 3 {
        return Err(Error::InvalidGrid("slice grid needs at least 3 points".into()));
    }
    let profile = CorrelationProfile::new(state)?;
    let step = PI / n as f64;
    let f = |x: &[f64; 2]| {
        let [theta, delta_p] = *x;
        (profile.at(theta) - profile.at(theta + delta_p)).abs()
            + (profile.at(theta + delta_p) + profile.at(theta + 2.0 * delta_p)).abs()
    };
    let grid: Vec<f64> = (0..n * n)
        .map(|idx| f(&[(idx / n) as f64 * step, (idx % n) as f64 * step]))
        .collect();
    let at = |i: usize, j: usize| grid[(i % n) * n + (j % n)];
    let top = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut found: Vec<[f64; 2]> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = at(i, j);
            if v < top - keep_below_max {
                continue;
            }
            let is_peak = (0..3).all(|di| {
                (0..3).all(|dj| at(i + n + di - 1, j + n + dj - 1) <= v)
            });
            if !is_peak {
                continue;
            }
            let (x, _) = coordinate_ascent(f, [i as f64 * step, j as f64 * step], step);
            let x = [reduce_half_turn(x[0]), reduce_half_turn(x[1])];
            let dup = found.iter().any(|y| {
                let d0 = (x[0] - y[0]).abs();
                let d1 = (x[1] - y[1]).abs();
                d0.min(PI - d0) < 1e-6 && d1.min(PI - d1) < 1e-6
            });
            if !dup {
                found.push(x);
            }
        }
    }
    found.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    found
        .into_iter()
        .map(|[theta, delta_p]| chsh_s(state, &AngleSetting::constrained_slice(theta, delta_p)))
        .collect()
}

impl ChshResult {
    /// Lexicographic comparison key over `(θ, δ, θ′, δ′)`.
    pub fn angle_tuple(&self) -> [f64; 4] {
        self.setting.tuple()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::bell_input_state;
    use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, SQRT_2};

    fn ideal() -> DensityMatrix {
        DensityMatrix::from_pure(&bell_input_state(None))
    }

    #[test]
    fn correlation_examples() {
        assert_eq!(correlation(&OutcomeProbabilities::new(1.0, 0.0, 0.0, 0.0).unwrap()), 1.0);
        assert_eq!(correlation(&OutcomeProbabilities::uniform()), 0.0);
        let e = correlation_at(&ideal(), FRAC_PI_8, 0.0).unwrap();
        assert!((e - FRAC_PI_4.cos()).abs() < 1e-12);
    }

    #[test]
    fn probabilities_validation() {
        assert!(OutcomeProbabilities::new(0.5, 0.5, 0.1, 0.0).is_err());
        assert!(OutcomeProbabilities::new(1.1, -0.1, 0.0, 0.0).is_err());
        assert!(OutcomeProbabilities::new(f64::NAN, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn optimal_constrained_setting_gives_tsirelson() {
        let r = chsh_s(&ideal(), &AngleSetting::constrained_slice(FRAC_PI_8, FRAC_PI_4)).unwrap();
        assert!((r.s_value - 2.0 * SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn zero_angles_give_two() {
        let r = chsh_s(&ideal(), &AngleSetting::new(0.0, 0.0, 0.0, 0.0).unwrap()).unwrap();
        assert!((r.s_value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_state_never_correlates() {
        let rho = DensityMatrix::maximally_mixed(4).unwrap();
        let r = chsh_s(&rho, &AngleSetting::new(0.3, 1.0, 2.0, 0.1).unwrap()).unwrap();
        assert!(r.s_value.abs() < 1e-15);
        let m = max_s(&rho).unwrap();
        assert!(m.s_value.abs() < 1e-15);
    }

    #[test]
    fn max_s_of_ideal_state() {
        let r = max_s(&ideal()).unwrap();
        assert!((r.s_value - 2.0 * SQRT_2).abs() < 1e-9, "{}", r.s_value);
        assert!(r.e_values.iter().all(|e| e.abs() <= 1.0 + 1e-9));
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let rho = ideal();
        assert_eq!(sweep_surface(&rho, (0.0, 0.0), &[], &[0.0]), Err(Error::EmptyGrid));
        assert!(matches!(
            sweep_surface(&rho, (0.0, 0.0), &[0.0], &[0.2, 0.1]),
            Err(Error::InvalidGrid(_))
        ));
    }

    #[test]
    fn sweep_is_row_major() {
        let rows = sweep_surface(&ideal(), (0.1, 0.2), &[0.0, 1.0], &[0.0, 0.5, 1.5]).unwrap();
        let order: Vec<(f64, f64)> = rows.iter().map(|r| (r.theta_p, r.delta_p)).collect();
        assert_eq!(
            order,
            vec![(0.0, 0.0), (0.0, 0.5), (0.0, 1.5), (1.0, 0.0), (1.0, 0.5), (1.0, 1.5)]
        );
    }

    #[test]
    fn surface_csv_header_and_rows() {
        let rows = [SurfaceRow { theta_p: 0.0, delta_p: FRAC_PI_4, s: 2.0 * SQRT_2 }];
        let mut buf = Vec::new();
        write_surface_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "theta_p,delta_p,s\n0,0.785398163397448,2.82842712474619\n");
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, fx) = golden_max(|x| -(x - 0.3) * (x - 0.3), -1.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
        assert!(fx <= 0.0 && fx > -1e-15);
    }
}
