//! Reference dynamical systems and a fixed-step RK4 integrator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    /// `x1' = x2`, `x2' = 0.01 x2 - sin x1`.
    NegDampedPendulum,
    /// `x1' = x2`, `x2' = (1 - x1^2) x2 - x1`.
    VanDerPol,
    /// `x' = A x`, with `A` given row by row.
    LinearTest { a: Vec<Vec<f64>> },
}

impl SystemSpec {
    pub fn linear(a: &DMatrix<f64>) -> Self {
        SystemSpec::LinearTest {
            a: a.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    pub fn dimension(&self) -> Result<usize> {
        match self {
            SystemSpec::NegDampedPendulum | SystemSpec::VanDerPol => Ok(2),
            SystemSpec::LinearTest { a } => {
                let n = a.len();
                if n == 0 || a.iter().any(|row| row.len() != n) {
                    return Err(Error::Shape("linear test matrix must be square and nonempty".into()));
                }
                Ok(n)
            }
        }
    }

    /// Initial condition used when a config does not give one.
    pub fn default_initial_state(&self) -> Result<DVector<f64>> {
        Ok(match self {
            SystemSpec::NegDampedPendulum => DVector::from_vec(vec![1.0, 0.0]),
            SystemSpec::VanDerPol => DVector::from_vec(vec![0.1, 0.0]),
            SystemSpec::LinearTest { .. } => DVector::from_element(self.dimension()?, 1.0),
        })
    }

    fn eval_into(&self, x: &[f64], dx: &mut [f64]) {
        match self {
            SystemSpec::NegDampedPendulum => {
                dx[0] = x[1];
                dx[1] = 0.01 * x[1] - x[0].sin();
            }
            SystemSpec::VanDerPol => {
                dx[0] = x[1];
                dx[1] = (1.0 - x[0] * x[0]) * x[1] - x[0];
            }
            SystemSpec::LinearTest { a } => {
                for (d, row) in dx.iter_mut().zip(a) {
                    *d = row.iter().zip(x).map(|(aij, xj)| aij * xj).sum();
                }
            }
        }
    }
}

pub fn vector_field(sys: &SystemSpec, x: &DVector<f64>) -> Result<DVector<f64>> {
    let n = sys.dimension()?;
    if x.len() != n {
        return Err(Error::Shape(format!("state has {} entries, system needs {n}", x.len())));
    }
    let mut dx = DVector::zeros(n);
    sys.eval_into(x.as_slice(), dx.as_mut_slice());
    Ok(dx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    /// Falls back to [`SystemSpec::default_initial_state`].
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Simulated time in seconds.
    pub duration: f64,
    /// RK4 steps per sample.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_substeps() -> usize {
    10
}

impl TrajectoryConfig {
    pub fn new(dt: f64, duration: f64) -> Self {
        Self {
            x0: None,
            dt,
            duration,
            substeps: default_substeps(),
        }
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.duration >= self.dt && self.duration.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "duration must be >= dt, got {} (dt = {})",
                self.duration, self.dt
            )));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be >= 1".into()));
        }
        Ok(())
    }

    /// `floor(duration / dt)`, tolerant to representation error in the
    /// ratio (`10000 / 0.1` must give 100000, not 99999).
    pub fn samples(&self) -> usize {
        let ratio = self.duration / self.dt;
        let nearest = ratio.round();
        if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest as usize
        } else {
            ratio.floor() as usize
        }
    }
}

/// Integrates with classical RK4 at step `dt / substeps` and records the
/// state every `dt`, giving an `n x (samples + 1)` matrix whose column 0 is
/// the initial state.
pub fn simulate(sys: &SystemSpec, cfg: &TrajectoryConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let n = sys.dimension()?;
    let x0 = match &cfg.x0 {
        Some(v) => DVector::from_vec(v.clone()),
        None => sys.default_initial_state()?,
    };
    if x0.len() != n {
        return Err(Error::Shape(format!("x0 has {} entries, system needs {n}", x0.len())));
    }
    let samples = cfg.samples();
    let h = cfg.dt / cfg.substeps as f64;
    let mut out = DMatrix::zeros(n, samples + 1);
    out.set_column(0, &x0);

    let mut x = x0.as_slice().to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for k in 1..=samples {
        for _ in 0..cfg.substeps {
            sys.eval_into(&x, &mut k1);
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * h * k1[i];
            }
            sys.eval_into(&tmp, &mut k2);
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * h * k2[i];
            }
            sys.eval_into(&tmp, &mut k3);
            for i in 0..n {
                tmp[i] = x[i] + h * k3[i];
            }
            sys.eval_into(&tmp, &mut k4);
            for i in 0..n {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: k as f64 * cfg.dt });
        }
        for i in 0..n {
            out[(i, k)] = x[i];
        }
    }
    Ok(out)
}
