//! Discrete transition maps for continuous-time control affine systems
//! under a zero-order hold: classical RK4 over the sample period for the
//! general case, and the exact matrix-exponential map for linear systems.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::MpopSpec;
use crate::restriction::BoxRegion;

type DriftHandle = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type InputMatrixHandle = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// `xdot = drift(x) + input_matrix(x) * u`.
#[derive(Clone)]
pub struct ControlAffineSystem {
    state_dim: usize,
    input_dim: usize,
    drift: DriftHandle,
    input_matrix: InputMatrixHandle,
}

impl ControlAffineSystem {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        drift: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        input_matrix: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if state_dim == 0 || input_dim == 0 {
            return Err(Error::invalid("system dimensions must be positive"));
        }
        Ok(Self {
            state_dim,
            input_dim,
            drift: Arc::new(drift),
            input_matrix: Arc::new(input_matrix),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// The full vector field `drift(x) + G(x) u`.
    pub fn vector_field(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x) + (self.input_matrix)(x) * u
    }
}

/// Zero-order-hold sampling scheme: the control input is held constant over
/// each `sample_period`, which RK4 covers in `substeps` equal steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZohConfig {
    pub sample_period: f64,
    #[serde(default = "ZohConfig::default_substeps")]
    pub substeps: usize,
}

impl ZohConfig {
    pub const fn default_substeps() -> usize {
        20
    }

    pub fn new(sample_period: f64, substeps: usize) -> Result<Self> {
        let cfg = Self {
            sample_period,
            substeps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sample_period.is_finite() || self.sample_period <= 0.0 {
            return Err(Error::invalid("sample_period must be > 0"));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("substeps must be >= 1"));
        }
        Ok(())
    }
}

/// `xdot = A x + B u`. Serializes as row-major nested lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLinearSystem", into = "RawLinearSystem")]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawLinearSystem {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl TryFrom<RawLinearSystem> for LinearSystem {
    type Error = Error;

    fn try_from(raw: RawLinearSystem) -> Result<Self> {
        LinearSystem::from_rows(&raw.a, &raw.b)
    }
}

impl From<LinearSystem> for RawLinearSystem {
    fn from(sys: LinearSystem) -> Self {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter()
                .map(|r| r.iter().copied().collect())
                .collect()
        };
        RawLinearSystem {
            a: rows(&sys.a),
            b: rows(&sys.b),
        }
    }
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::invalid("A must be square and nonempty"));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::invalid("B must have as many rows as A"));
        }
        Ok(Self { a, b })
    }

    pub fn from_rows(a_rows: &[Vec<f64>], b_rows: &[Vec<f64>]) -> Result<Self> {
        let build = |rows: &[Vec<f64>]| -> Result<DMatrix<f64>> {
            if rows.is_empty() || rows[0].is_empty() {
                return Err(Error::invalid("matrix rows must be nonempty"));
            }
            let ncols = rows[0].len();
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(Error::invalid("matrix rows have mixed lengths"));
            }
            Ok(DMatrix::from_row_iterator(
                rows.len(),
                ncols,
                rows.iter().flatten().copied(),
            ))
        };
        Self::new(build(a_rows)?, build(b_rows)?)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// View as a control affine system (constant drift matrix and input
    /// matrix).
    pub fn to_control_affine(&self) -> ControlAffineSystem {
        let a = self.a.clone();
        let b = self.b.clone();
        ControlAffineSystem::new(
            self.state_dim(),
            self.input_dim(),
            move |x| &a * x,
            move |_x| b.clone(),
        )
        .expect("validated dimensions")
    }
}

/// Classical 4th-order Runge-Kutta approximation of the sample-period flow
/// with the input held constant, using `cfg.substeps` equal steps.
pub fn integrate_zoh(
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    cfg: &ZohConfig,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    if x.len() != sys.state_dim() || u.len() != sys.input_dim() {
        return Err(Error::invalid("state/input dimension mismatch"));
    }
    let dt = cfg.sample_period / cfg.substeps as f64;
    let mut state = x.clone();
    for _ in 0..cfg.substeps {
        let k1 = sys.vector_field(&state, u);
        let k2 = sys.vector_field(&(&state + &k1 * (dt / 2.0)), u);
        let k3 = sys.vector_field(&(&state + &k2 * (dt / 2.0)), u);
        let k4 = sys.vector_field(&(&state + &k3 * dt), u);
        state += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                context: "zero-order-hold integration".to_string(),
            });
        }
    }
    Ok(state)
}

/// Matrix exponential by scaling-and-squaring with a truncated power
/// series; terms are added until they fall below 1e-16 of the running sum.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(m.is_square(), "expm needs a square matrix");
    let d = m.nrows();
    let norm = m
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings as i32);
    let mut sum = DMatrix::<f64>::identity(d, d);
    let mut term = DMatrix::<f64>::identity(d, d);
    for k in 1..=60 {
        term = (&term * &scaled) / k as f64;
        sum += &term;
        let term_norm = term.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        let sum_norm = sum.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        if term_norm <= 1e-16 * sum_norm {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Exact zero-order-hold step for a linear system:
/// `exp(A h) x + (integral of exp(A s) ds over [0, h]) B u`,
/// read off the exponential of the augmented block matrix `[[A, B], [0, 0]]`.
pub fn linear_zoh_exact(
    sys: &LinearSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid("sample period must be > 0"));
    }
    let d = sys.state_dim();
    let m = sys.input_dim();
    if x.len() != d || u.len() != m {
        return Err(Error::invalid("state/input dimension mismatch"));
    }
    let mut aug = DMatrix::<f64>::zeros(d + m, d + m);
    aug.view_mut((0, 0), (d, d)).copy_from(sys.a());
    aug.view_mut((0, d), (d, m)).copy_from(sys.b());
    let e = expm(&(aug * h));
    let phi = e.view((0, 0), (d, d));
    let gamma = e.view((0, d), (d, m));
    Ok(phi * x + gamma * u)
}

/// Packages a sampled control affine system as a deterministic MDP: the
/// transition is [`integrate_zoh`], admissibility is membership of the
/// actuator box, and blow-ups surface as non-finite states at rollout
/// sites.
pub fn make_sampled_mpop(
    sys: &ControlAffineSystem,
    reward: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    discount: f64,
    cfg: &ZohConfig,
    action_box: BoxRegion,
) -> Result<MpopSpec> {
    cfg.validate()?;
    if action_box.dim() != sys.input_dim() {
        return Err(Error::invalid("action box dimension mismatch"));
    }
    let d = sys.state_dim();
    let sys = sys.clone();
    let cfg = *cfg;
    MpopSpec::new(
        d,
        action_box.dim(),
        discount,
        move |s: &[f64], a: &[f64]| {
            let x = DVector::from_column_slice(s);
            let u = DVector::from_column_slice(a);
            match integrate_zoh(&sys, &x, &u, &cfg) {
                Ok(next) => next.as_slice().to_vec(),
                Err(_) => vec![f64::NAN; d],
            }
        },
        reward,
        move |_s: &[f64], a: &[f64]| action_box.contains(a),
    )
}
