//! Optical elements as mode-space operators, and the canonical input state.
//!
//! Every equivalence between the interferometric four-port picture and the
//! two-mode picture holds at the level of probability moduli only; phases
//! are never compared.

use std::f64::consts::{FRAC_PI_4, TAU};
use std::ops::Add;

use nalgebra::{DMatrix, Matrix4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{apply_unitary, tensor, PureState, QuantumState, Unitary};

/// An element setting in radians, reduced to `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementAngle(f64);

impl ElementAngle {
    pub fn new(radians: f64) -> Result<Self> {
        if !radians.is_finite() {
            return Err(Error::NonFiniteAngle);
        }
        Ok(Self::reduce(radians))
    }

    fn reduce(radians: f64) -> Self {
        let r = radians.rem_euclid(TAU);
        // rem_euclid can round up to exactly TAU for tiny negative inputs
        ElementAngle(if r >= TAU { 0.0 } else { r })
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

impl From<f64> for ElementAngle {
    /// Reduces modulo 2π. Non-finite input is a caller bug.
    fn from(radians: f64) -> Self {
        debug_assert!(radians.is_finite(), "non-finite angle {radians}");
        ElementAngle::reduce(radians)
    }
}

impl Add for ElementAngle {
    type Output = ElementAngle;

    fn add(self, rhs: ElementAngle) -> ElementAngle {
        ElementAngle::reduce(self.0 + rhs.0)
    }
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn ci(im: f64) -> Complex64 {
    Complex64::new(0.0, im)
}

fn unitary2(entries: [Complex64; 4]) -> Unitary {
    Unitary::from_matrix_unchecked(DMatrix::from_row_slice(2, 2, &entries))
}

/// Beam splitter `[[cos θ, i sin θ], [i sin θ, cos θ]]`.
pub fn beam_splitter(theta: ElementAngle) -> Unitary {
    let (s, co) = theta.radians().sin_cos();
    unitary2([c(co), ci(s), ci(s), c(co)])
}

/// Polarization rotation `[[cos θ, −sin θ], [sin θ, cos θ]]`.
pub fn rotation(theta: ElementAngle) -> Unitary {
    let (s, co) = theta.radians().sin_cos();
    unitary2([c(co), c(-s), c(s), c(co)])
}

/// Half-wave plate at dial angle κ: `[[cos 2κ, sin 2κ], [sin 2κ, −cos 2κ]]`.
///
/// A plate at κ reproduces the populations of `rotation(2κ)`.
pub fn half_wave_plate(kappa: ElementAngle) -> Unitary {
    let (s, co) = (2.0 * kappa.radians()).sin_cos();
    unitary2([c(co), c(s), c(s), c(-co)])
}

/// One pass through the two independent splitter pairs of the four-port
/// interferometer, as the block matrix `[[0, B(θ)], [B(δ), 0]]`.
pub fn four_mode_single_pass(theta: ElementAngle, delta: ElementAngle) -> Unitary {
    let bt = beam_splitter(theta);
    let bd = beam_splitter(delta);
    let mut m = DMatrix::<Complex64>::zeros(4, 4);
    m.view_mut((0, 2), (2, 2)).copy_from(bt.entries());
    m.view_mut((2, 0), (2, 2)).copy_from(bd.entries());
    Unitary::from_matrix_unchecked(m)
}

/// Both passes through the splitter pairs. Because the splitters commute this
/// is `blockdiag(B(θ+δ), B(θ+δ))`, but it is computed as the literal product.
pub fn four_mode_double_pass(theta: ElementAngle, delta: ElementAngle) -> Unitary {
    let pass = four_mode_single_pass(theta, delta);
    Unitary::from_matrix_unchecked(pass.entries() * pass.entries())
}

/// The path-entangled input `cos γ |00⟩ + sin γ |11⟩`; `None` selects the
/// balanced splitter (γ = π/4).
pub fn bell_input_state(preparation: Option<ElementAngle>) -> PureState {
    let gamma = preparation.map_or(FRAC_PI_4, ElementAngle::radians);
    let (s, co) = gamma.sin_cos();
    PureState::from_real(&[co, 0.0, 0.0, s]).expect("cos²+sin² = 1")
}

/// `R(θ+δ) ⊗ I`, the whole analyzer chain folded into one operator.
pub fn setting_operator(theta: ElementAngle, delta: ElementAngle) -> Unitary {
    let identity = Unitary::identity(2).expect("dimension 2 is supported");
    tensor(&rotation(theta + delta), &identity).expect("2 ⊗ 2 = 4")
}

/// Applies the analyzer setting `(θ, δ)` to a 4-dimensional state.
pub fn apply_setting<S: QuantumState>(state: &S, theta: ElementAngle, delta: ElementAngle) -> Result<S> {
    if state.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: state.dim(),
        });
    }
    apply_unitary(&setting_operator(theta, delta), state)
}

/// Same entries as [`setting_operator`] for an angle sum `alpha`, stack allocated.
pub(crate) fn setting_matrix4(alpha: f64) -> Matrix4<Complex64> {
    let (s, co) = ElementAngle::from(alpha).radians().sin_cos();
    let z = c(0.0);
    Matrix4::new(
        c(co), z, c(-s), z,
        z, c(co), z, c(-s),
        c(s), z, c(co), z,
        z, c(s), z, c(co),
    )
}
