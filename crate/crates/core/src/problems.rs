//! Jacobi-preconditioned finite-difference stencils for
//! `(a u_xx + b u_yy + c u_xy) = f` on the unit square with zero Dirichlet
//! data. The fine-grid operator is a black-box field map.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::{conv_same, GridField, Kernel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemFamily {
    /// Five-point Poisson.
    P5,
    /// Fourth-order long (cross-shaped) Poisson stencil.
    P9,
    /// Mehrstellen Poisson.
    PM,
    Anisotropic,
    Mixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub family: ProblemFamily,
    pub epsilon: Option<f64>,
    pub tau: Option<f64>,
    pub stencil: Kernel,
    name: String,
}

/// The seven configurations that have tabulated results, in table order.
pub const PROBLEM_NAMES: [&str; 7] = ["p5", "p9", "pm", "aniso2", "aniso10", "mixed14", "mixed34"];

pub fn stencil_for(family: ProblemFamily, epsilon: Option<f64>, tau: Option<f64>) -> Result<Kernel> {
    let k = match family {
        ProblemFamily::P5 => Kernel::from_rows([[0.0, -0.25, 0.0], [-0.25, 1.0, -0.25], [0.0, -0.25, 0.0]]),
        ProblemFamily::P9 => {
            let (a, b) = (1.0 / 60.0, -4.0 / 15.0);
            Kernel::from_rows([
                [0.0, 0.0, a, 0.0, 0.0],
                [0.0, 0.0, b, 0.0, 0.0],
                [a, b, 1.0, b, a],
                [0.0, 0.0, b, 0.0, 0.0],
                [0.0, 0.0, a, 0.0, 0.0],
            ])
        }
        ProblemFamily::PM => {
            // Mehrstellen: axis neighbours -4/20, corners -1/20.
            let (e, c) = (-0.2, -0.05);
            Kernel::from_rows([[c, e, c], [e, 1.0, e], [c, e, c]])
        }
        ProblemFamily::Anisotropic => {
            let eps = epsilon.ok_or_else(|| Error::InvalidProblem("anisotropic problem needs epsilon".into()))?;
            if eps <= 0.0 || !eps.is_finite() {
                return Err(Error::InvalidProblem(format!("epsilon must be positive, got {eps}")));
            }
            let d = 2.0 + 2.0 * eps;
            Kernel::from_rows([[0.0, -1.0 / d, 0.0], [-eps / d, 1.0, -eps / d], [0.0, -1.0 / d, 0.0]])
        }
        ProblemFamily::Mixed => {
            let tau = tau.ok_or_else(|| Error::InvalidProblem("mixed-derivative problem needs tau".into()))?;
            if !tau.is_finite() {
                return Err(Error::InvalidProblem(format!("tau must be finite, got {tau}")));
            }
            let t = tau / 8.0;
            Kernel::from_rows([[-t, -0.25, t], [-0.25, 1.0, -0.25], [t, -0.25, -t]])
        }
    };
    Ok(k)
}

/// `A -> D^{-1/2} A D^{-1/2}`. For a constant-coefficient stencil the diagonal
/// is the center weight everywhere, so this divides by it.
pub fn precondition_stencil(raw: &Kernel) -> Result<Kernel> {
    let c = raw.center();
    if c == 0.0 {
        return Err(Error::InvalidProblem("stencil has a zero center entry".into()));
    }
    Ok(raw.scaled(1.0 / c))
}

impl ProblemSpec {
    pub fn new(family: ProblemFamily, epsilon: Option<f64>, tau: Option<f64>) -> Result<Self> {
        let stencil = stencil_for(family, epsilon, tau)?;
        let name = match family {
            ProblemFamily::P5 => "p5".to_string(),
            ProblemFamily::P9 => "p9".to_string(),
            ProblemFamily::PM => "pm".to_string(),
            ProblemFamily::Anisotropic => format!("aniso{}", fmt_param(epsilon.unwrap_or_default())),
            ProblemFamily::Mixed => format!("mixed{}", fmt_param(tau.unwrap_or_default())),
        };
        Ok(Self { family, epsilon, tau, stencil, name })
    }

    /// Wraps a user-supplied raw stencil after Jacobi preconditioning.
    pub fn custom(name: &str, raw: &Kernel) -> Result<Self> {
        let stencil = precondition_stencil(raw)?;
        if stencil.weights().iter().zip(stencil.rotated_180().weights()).any(|(a, b)| (a - b).abs() > 1e-14) {
            return Err(Error::InvalidProblem("stencil is not centro-symmetric".into()));
        }
        Ok(Self { family: ProblemFamily::P5, epsilon: None, tau: None, stencil, name: name.to_string() })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "p5" => Self::new(ProblemFamily::P5, None, None),
            "p9" => Self::new(ProblemFamily::P9, None, None),
            "pm" => Self::new(ProblemFamily::PM, None, None),
            "aniso2" => Self::new(ProblemFamily::Anisotropic, Some(2.0), None),
            "aniso10" => Self::new(ProblemFamily::Anisotropic, Some(10.0), None),
            "mixed14" => Self::new(ProblemFamily::Mixed, None, Some(0.25)),
            "mixed34" => Self::new(ProblemFamily::Mixed, None, Some(0.75)),
            other => Err(Error::InvalidProblem(format!(
                "unknown problem '{other}', expected one of {}",
                PROBLEM_NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `A_1 x` on a square grid.
    pub fn apply(&self, x: &GridField) -> Result<GridField> {
        if x.rows() != x.cols() || !(x.rows() + 1).is_power_of_two() {
            return Err(Error::InvalidField(format!(
                "fine operator expects a (2^J-1)^2 grid, got {}x{}",
                x.rows(),
                x.cols()
            )));
        }
        Ok(conv_same(x, &self.stencil))
    }
}

/// Free-function form of [`ProblemSpec::apply`].
pub fn apply_fine_operator(spec: &ProblemSpec, x: &GridField) -> Result<GridField> {
    spec.apply(x)
}

fn fmt_param(v: f64) -> String {
    // 2 -> "2", 0.25 -> "14", 0.75 -> "34"
    if (v - 0.25).abs() < 1e-12 {
        "14".into()
    } else if (v - 0.75).abs() < 1e-12 {
        "34".into()
    } else if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

impl FromStr for ProblemSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::by_name(s)
    }
}

impl fmt::Display for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}
