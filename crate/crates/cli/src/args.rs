//! Flag value parsers.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use pathbell::noise::{NoiseKind, PurityModel};
use pathbell::optics::bell_input_state;
use pathbell::{DensityMatrix, Result as CoreResult};

/// `ideal`, `werner:P`, `multiphoton:P` or `multiphoton-literal:P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateSpec {
    Ideal,
    Model(PurityModel),
}

impl StateSpec {
    pub fn density_matrix(&self) -> CoreResult<DensityMatrix> {
        match self {
            StateSpec::Ideal => Ok(DensityMatrix::from_pure(&bell_input_state(None))),
            StateSpec::Model(m) => m.state(None),
        }
    }
}

impl fmt::Display for StateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateSpec::Ideal => write!(f, "ideal"),
            StateSpec::Model(m) => {
                let name = match m.kind {
                    NoiseKind::Depolarizing => "werner",
                    NoiseKind::Multiphoton => "multiphoton",
                    NoiseKind::MultiphotonLiteral => "multiphoton-literal",
                };
                write!(f, "{name}:{}", m.p)
            }
        }
    }
}

impl FromStr for StateSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "ideal" {
            return Ok(StateSpec::Ideal);
        }
        let (name, p) = s
            .split_once(':')
            .ok_or_else(|| format!("expected ideal, werner:P, multiphoton:P or multiphoton-literal:P, got {s:?}"))?;
        let kind = match name {
            "werner" | "depolarizing" => NoiseKind::Depolarizing,
            "multiphoton" => NoiseKind::Multiphoton,
            "multiphoton-literal" => NoiseKind::MultiphotonLiteral,
            other => return Err(format!("unknown state family {other:?}")),
        };
        let p: f64 = p.parse().map_err(|_| format!("purity {p:?} is not a number"))?;
        PurityModel::new(kind, p)
            .map(StateSpec::Model)
            .map_err(|e| e.to_string())
    }
}

/// An angle: a plain number, or a multiple of π such as `pi/8`, `3pi/4`,
/// `-pi`, `0.5pi`.
pub fn parse_angle(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let value = if let Some(idx) = s.find("pi") {
        let (coef, rest) = s.split_at(idx);
        let rest = &rest[2..];
        let k = match coef {
            "" | "+" => 1.0,
            "-" => -1.0,
            c => c.trim_end_matches('*').parse::<f64>().map_err(|_| format!("bad angle {s:?}"))?,
        };
        let div = match rest {
            "" => 1.0,
            r => r
                .strip_prefix('/')
                .and_then(|d| d.parse::<f64>().ok())
                .filter(|d| *d != 0.0)
                .ok_or_else(|| format!("bad angle {s:?}"))?,
        };
        k * PI / div
    } else {
        s.parse::<f64>().map_err(|_| format!("bad angle {s:?}"))?
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("angle {s:?} is not finite"))
    }
}

/// `start:stop:step` over purities in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurityGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl PurityGrid {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|k| {
                let p = self.start + k as f64 * self.step;
                // strip accumulated binary noise such as 0.30000000000000004
                ((p * 1e12).round() / 1e12).min(self.stop)
            })
            .collect()
    }
}

impl FromStr for PurityGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, c] = parts[..] else {
            return Err(format!("expected start:stop:step, got {s:?}"));
        };
        let num = |x: &str| x.parse::<f64>().map_err(|_| format!("{x:?} is not a number"));
        let (start, stop, step) = (num(a)?, num(b)?, num(c)?);
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&stop) {
            return Err(format!("purity range {start}:{stop} must lie within [0, 1]"));
        }
        if start > stop {
            return Err("start exceeds stop".into());
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err("step must be positive".into());
        }
        Ok(PurityGrid { start, stop, step })
    }
}
