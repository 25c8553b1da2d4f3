//! Small-dimension complex linear algebra for the mode spaces used here.
//!
//! Only dimensions 2 (one spatial mode pair or one polarization qubit) and 4
//! (two modes, or the single-photon four-port basis) are supported. Basis index
//! `i` of a 4-dimensional state is read as the label `(i >> 1, i & 1)`, the
//! first label belonging to the rotated `s1` subsystem, so the ordering is
//! `00, 01, 10, 11`.

use nalgebra::{DMatrix, DVector, Matrix4, SymmetricEigen};
use num_complex::Complex64;

use crate::chsh::OutcomeProbabilities;
use crate::error::{Error, Result};

/// Tolerance applied when validating user-constructed values.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Tolerance for quantities that went through a chain of operations.
pub const PROPAGATED_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted for a positive semidefinite matrix.
pub const PSD_TOL: f64 = -1e-10;

fn check_dim(dim: usize) -> Result<()> {
    match dim {
        2 | 4 => Ok(()),
        d => Err(Error::UnsupportedDimension(d)),
    }
}

fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// A normalized amplitude vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: DVector<Complex64>,
}

impl PureState {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        let v = DVector::from_vec(amplitudes);
        let norm_sqr = v.norm_squared();
        if !norm_sqr.is_finite() || (norm_sqr - 1.0).abs() > CONSTRUCTION_TOL {
            return Err(Error::InvalidState(format!(
                "squared norm {norm_sqr} differs from 1"
            )));
        }
        Ok(PureState { amplitudes: v })
    }

    /// Builds a state from real amplitudes.
    pub fn from_real(amplitudes: &[f64]) -> Result<Self> {
        Self::new(amplitudes.iter().map(|&a| Complex64::new(a, 0.0)).collect())
    }

    /// The basis vector `|index⟩`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        check_dim(dim)?;
        if index >= dim {
            return Err(Error::InvalidState(format!(
                "basis index {index} out of range for dimension {dim}"
            )));
        }
        let mut v = DVector::zeros(dim);
        v[index] = Complex64::new(1.0, 0.0);
        Ok(PureState { amplitudes: v })
    }

    pub(crate) fn from_vector_unchecked(amplitudes: DVector<Complex64>) -> Self {
        debug_assert!((amplitudes.norm_squared() - 1.0).abs() < PROPAGATED_TOL);
        PureState { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        self.amplitudes.as_slice()
    }

    pub fn vector(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }
}

/// A Hermitian, unit-trace, positive semidefinite operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::InvalidState("matrix is not square".into()));
        }
        check_dim(entries.nrows())?;
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite entry".into()));
        }
        let herm_dev = max_abs(&(&entries - entries.adjoint()));
        if herm_dev > CONSTRUCTION_TOL {
            return Err(Error::InvalidState(format!(
                "not Hermitian (deviation {herm_dev:.3e})"
            )));
        }
        let trace = entries.trace();
        if (trace.re - 1.0).abs() > CONSTRUCTION_TOL || trace.im.abs() > CONSTRUCTION_TOL {
            return Err(Error::InvalidState(format!("trace {trace} differs from 1")));
        }
        let rho = DensityMatrix { entries };
        let min_eig = rho.min_eigenvalue();
        if min_eig < PSD_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(rho)
    }

    pub(crate) fn from_matrix_unchecked(entries: DMatrix<Complex64>) -> Self {
        DensityMatrix { entries }
    }

    /// The projector `|ψ⟩⟨ψ|`.
    pub fn from_pure(psi: &PureState) -> Self {
        let v = psi.vector();
        DensityMatrix {
            entries: v * v.adjoint(),
        }
    }

    /// `I/dim`.
    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(DensityMatrix {
            entries: DMatrix::identity(dim, dim) * Complex64::new(1.0 / dim as f64, 0.0),
        })
    }

    /// Convex combination `Σ wᵢ ρᵢ`. Weights must be nonnegative and sum to 1.
    pub fn mixture(components: &[(f64, &DensityMatrix)]) -> Result<Self> {
        let Some((_, first)) = components.first() else {
            return Err(Error::InvalidState("empty mixture".into()));
        };
        let dim = first.dim();
        let mut acc = DMatrix::<Complex64>::zeros(dim, dim);
        let mut total = 0.0;
        for &(w, rho) in components {
            if rho.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: rho.dim(),
                });
            }
            if !(w >= 0.0) {
                return Err(Error::InvalidState(format!("negative mixture weight {w}")));
            }
            acc += &rho.entries * Complex64::new(w, 0.0);
            total += w;
        }
        if (total - 1.0).abs() > CONSTRUCTION_TOL {
            return Err(Error::InvalidState(format!(
                "mixture weights sum to {total}"
            )));
        }
        Self::new(acc)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[(row, col)]
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    /// `tr(ρ²)`; 1 for pure states.
    pub fn purity(&self) -> f64 {
        (&self.entries * &self.entries).trace().re
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let herm = (&self.entries + self.entries.adjoint()) * Complex64::new(0.5, 0.0);
        let mut ev: Vec<f64> = SymmetricEigen::new(herm).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Fixed-size copy for hot loops; `None` unless `dim == 4`.
    pub fn to_matrix4(&self) -> Option<Matrix4<Complex64>> {
        (self.dim() == 4).then(|| Matrix4::from_fn(|i, j| self.entries[(i, j)]))
    }
}

impl From<&PureState> for DensityMatrix {
    fn from(psi: &PureState) -> Self {
        DensityMatrix::from_pure(psi)
    }
}

/// A unitary operator on a 2- or 4-dimensional space.
#[derive(Debug, Clone, PartialEq)]
pub struct Unitary {
    entries: DMatrix<Complex64>,
}

impl Unitary {
    /// Checks `U·U† = I` entrywise within [`PROPAGATED_TOL`].
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::InvalidState("matrix is not square".into()));
        }
        check_dim(entries.nrows())?;
        let u = Unitary { entries };
        let dev = u.unitarity_deviation();
        if !(dev <= PROPAGATED_TOL) {
            return Err(Error::NotUnitary(dev));
        }
        Ok(u)
    }

    pub(crate) fn from_matrix_unchecked(entries: DMatrix<Complex64>) -> Self {
        Unitary { entries }
    }

    pub fn identity(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Unitary {
            entries: DMatrix::identity(dim, dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[(row, col)]
    }

    /// Largest entrywise deviation of `U·U†` from the identity.
    pub fn unitarity_deviation(&self) -> f64 {
        let n = self.dim();
        let prod = &self.entries * self.entries.adjoint();
        max_abs(&(prod - DMatrix::<Complex64>::identity(n, n)))
    }

    pub fn adjoint(&self) -> Unitary {
        Unitary {
            entries: self.entries.adjoint(),
        }
    }

    /// Operator product `self · other` (apply `other` first).
    pub fn compose(&self, other: &Unitary) -> Result<Unitary> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(Unitary {
            entries: &self.entries * &other.entries,
        })
    }
}

/// Kronecker product `A ⊗ B`. The result is 4-dimensional, so both factors
/// must be 2-dimensional.
pub fn tensor(a: &Unitary, b: &Unitary) -> Result<Unitary> {
    let dim = a.dim() * b.dim();
    check_dim(dim)?;
    Ok(Unitary::from_matrix_unchecked(a.entries.kronecker(&b.entries)))
}

/// Something a unitary can act on.
pub trait QuantumState: Sized {
    fn dim(&self) -> usize;

    /// `Uψ` for pure states, `UρU†` for density matrices.
    fn evolve(&self, u: &Unitary) -> Result<Self>;

    /// Populations in the computational basis.
    fn populations(&self) -> Vec<f64>;
}

impl QuantumState for PureState {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn evolve(&self, u: &Unitary) -> Result<Self> {
        if u.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: u.dim(),
            });
        }
        Ok(PureState::from_vector_unchecked(&u.entries * &self.amplitudes))
    }

    fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }
}

impl QuantumState for DensityMatrix {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn evolve(&self, u: &Unitary) -> Result<Self> {
        if u.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: u.dim(),
            });
        }
        let out = &u.entries * &self.entries * u.entries.adjoint();
        Ok(DensityMatrix::from_matrix_unchecked(out))
    }

    fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entries[(i, i)].re).collect()
    }
}

pub fn apply_unitary<S: QuantumState>(u: &Unitary, state: &S) -> Result<S> {
    state.evolve(u)
}

/// `(P00, P01, P10, P11)` of a 4-dimensional state.
pub fn basis_probabilities<S: QuantumState>(state: &S) -> Result<OutcomeProbabilities> {
    if state.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: state.dim(),
        });
    }
    let p = state.populations();
    Ok(OutcomeProbabilities::from_raw([p[0], p[1], p[2], p[3]]))
}
