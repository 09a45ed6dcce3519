//! Uncertainty prior families mapping (joint, future frame) to an aleatoric
//! uncertainty value `u`.
//!
//! Each family exposes its value and its analytic gradient with respect to the
//! row of parameters that produced it. `t` is the 1-based future-frame index.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PriorFamily {
    /// One free parameter per (joint, frame).
    Id,
    /// Polynomial in `t` of the given degree.
    Poly(usize),
    Sig3,
    Sig5,
}

impl PriorFamily {
    /// Parameters per row for a horizon of `horizon` frames.
    pub fn params_per_row(self, horizon: usize) -> usize {
        match self {
            PriorFamily::Id => horizon,
            PriorFamily::Poly(d) => d + 1,
            PriorFamily::Sig3 => 3,
            PriorFamily::Sig5 => 5,
        }
    }

    pub fn name(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for PriorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorFamily::Id => write!(f, "id"),
            PriorFamily::Poly(d) => write!(f, "poly{d}"),
            PriorFamily::Sig3 => write!(f, "sig3"),
            PriorFamily::Sig5 => write!(f, "sig5"),
        }
    }
}

impl FromStr for PriorFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "id" => Ok(PriorFamily::Id),
            "sig3" => Ok(PriorFamily::Sig3),
            "sig5" => Ok(PriorFamily::Sig5),
            _ => lower
                .strip_prefix("poly")
                .and_then(|d| d.parse().ok())
                .map(PriorFamily::Poly)
                .ok_or_else(|| Error::invalid("prior family", format!("unknown family `{s}`"))),
        }
    }
}

impl From<PriorFamily> for String {
    fn from(f: PriorFamily) -> Self {
        f.to_string()
    }
}

impl TryFrom<String> for PriorFamily {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Which tasks get their own parameter row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorScope {
    /// One row per joint, shape `(J, P)`.
    JointTime,
    /// A single row shared by all joints, shape `(1, P)`.
    Time,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorParams {
    family: PriorFamily,
    scope: PriorScope,
    horizon: usize,
    joints: usize,
    theta: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl PriorParams {
    pub fn new(
        family: PriorFamily,
        scope: PriorScope,
        horizon: usize,
        joints: usize,
        theta: Array2<f64>,
    ) -> Result<Self> {
        if horizon == 0 || joints == 0 {
            return Err(Error::invalid("prior", "horizon and joints must be >= 1"));
        }
        let rows = match scope {
            PriorScope::JointTime => joints,
            PriorScope::Time => 1,
        };
        let expected = [rows, family.params_per_row(horizon)];
        if theta.dim() != (expected[0], expected[1]) {
            return Err(Error::shape(
                "prior theta",
                &expected,
                &[theta.nrows(), theta.ncols()],
            ));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prior theta"));
        }
        Ok(Self {
            family,
            scope,
            horizon,
            joints,
            theta,
        })
    }

    /// Default starting point: small, increasing uncertainty centered
    /// mid-horizon for the sigmoid families, zeros otherwise.
    pub fn init(
        family: PriorFamily,
        scope: PriorScope,
        horizon: usize,
        joints: usize,
    ) -> Result<Self> {
        let rows = match scope {
            PriorScope::JointTime => joints,
            PriorScope::Time => 1,
        };
        let p = family.params_per_row(horizon);
        let mid = horizon as f64 / 2.0;
        let row: Vec<f64> = match family {
            PriorFamily::Id | PriorFamily::Poly(_) => vec![0.0; p],
            PriorFamily::Sig3 => vec![0.2, mid, 1.0],
            PriorFamily::Sig5 => vec![0.0, 1.0, 0.2, mid, 0.2],
        };
        let theta = Array2::from_shape_fn((rows, p), |(_, k)| row[k]);
        Self::new(family, scope, horizon, joints, theta)
    }

    /// [`PriorParams::init`] plus uniform noise in `[-scale, scale]`.
    pub fn init_jittered(
        family: PriorFamily,
        scope: PriorScope,
        horizon: usize,
        joints: usize,
        seed: u64,
        scale: f64,
    ) -> Result<Self> {
        let mut p = Self::init(family, scope, horizon, joints)?;
        if scale > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            p.theta
                .mapv_inplace(|v| v + rng.random_range(-scale..=scale));
        }
        Ok(p)
    }

    pub fn family(&self) -> PriorFamily {
        self.family
    }

    pub fn scope(&self) -> PriorScope {
        self.scope
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn theta(&self) -> ArrayView2<'_, f64> {
        self.theta.view()
    }

    /// Total learnable parameter count.
    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn set_theta(&mut self, theta: Array2<f64>) -> Result<()> {
        *self = Self::new(self.family, self.scope, self.horizon, self.joints, theta)?;
        Ok(())
    }

    fn row_of(&self, joint: usize) -> usize {
        match self.scope {
            PriorScope::JointTime => joint,
            PriorScope::Time => 0,
        }
    }

    fn check_index(&self, joint: usize, t: usize) -> Result<()> {
        if t == 0 || t > self.horizon {
            return Err(Error::invalid(
                "prior frame",
                format!("t={t} outside 1..={}", self.horizon),
            ));
        }
        if joint >= self.joints {
            return Err(Error::invalid(
                "prior joint",
                format!("j={joint} outside 0..{}", self.joints),
            ));
        }
        Ok(())
    }

    /// `u_t^j`.
    pub fn eval(&self, joint: usize, t: usize) -> Result<f64> {
        self.check_index(joint, t)?;
        let row = self.row_of(joint);
        eval_row(
            self.family,
            self.theta.row(row).as_slice().expect("row-major"),
            t,
            row,
            None,
        )
    }

    /// `u_t^j` and its gradient with respect to the parameter row used.
    pub fn eval_with_grad(&self, joint: usize, t: usize) -> Result<(f64, Vec<f64>)> {
        self.check_index(joint, t)?;
        let row = self.row_of(joint);
        let mut grad = vec![0.0; self.theta.ncols()];
        let u = eval_row(
            self.family,
            self.theta.row(row).as_slice().expect("row-major"),
            t,
            row,
            Some(&mut grad),
        )?;
        Ok((u, grad))
    }

    /// The full `(T, J)` grid with `grid[t-1, j] == eval(j, t)`.
    pub fn grid(&self) -> Result<Array2<f64>> {
        let mut grid = Array2::zeros((self.horizon, self.joints));
        for row in 0..self.theta.nrows() {
            let theta = self.theta.row(row);
            let theta = theta.as_slice().expect("row-major");
            for t in 1..=self.horizon {
                let u = eval_row(self.family, theta, t, row, None)?;
                match self.scope {
                    PriorScope::JointTime => grid[[t - 1, row]] = u,
                    PriorScope::Time => grid.row_mut(t - 1).fill(u),
                }
            }
        }
        Ok(grid)
    }

    /// Chains `d loss / d u` (shape `(T, J)`) into `d loss / d theta`.
    pub fn backprop(&self, d_u: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if d_u.dim() != (self.horizon, self.joints) {
            return Err(Error::shape(
                "prior upstream gradient",
                &[self.horizon, self.joints],
                d_u.shape(),
            ));
        }
        let mut d_theta = Array2::zeros(self.theta.dim());
        let mut g = vec![0.0; self.theta.ncols()];
        for j in 0..self.joints {
            let row = self.row_of(j);
            let theta = self.theta.row(row);
            let theta = theta.as_slice().expect("row-major");
            for t in 1..=self.horizon {
                g.iter_mut().for_each(|v| *v = 0.0);
                eval_row(self.family, theta, t, row, Some(&mut g))?;
                let up = d_u[[t - 1, j]];
                for (k, gk) in g.iter().enumerate() {
                    d_theta[[row, k]] += up * gk;
                }
            }
        }
        Ok(d_theta)
    }
}

/// Evaluates one family on one parameter row. When `grad` is given it is
/// overwritten with `du/dtheta`.
fn eval_row(
    family: PriorFamily,
    th: &[f64],
    t: usize,
    row: usize,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let tf = t as f64;
    match family {
        PriorFamily::Id => {
            if let Some(g) = grad {
                g.iter_mut().for_each(|v| *v = 0.0);
                g[t - 1] = 1.0;
            }
            Ok(th[t - 1])
        }
        PriorFamily::Poly(_) => {
            let mut value = 0.0;
            let mut power = 1.0;
            let mut grad = grad;
            for (k, &c) in th.iter().enumerate() {
                value += c * power;
                if let Some(g) = grad.as_deref_mut() {
                    g[k] = power;
                }
                power *= tf;
            }
            Ok(value)
        }
        PriorFamily::Sig3 => {
            let (rate, mid, amp) = (th[0], th[1], th[2]);
            let s = sigmoid(rate * (tf - mid));
            if let Some(g) = grad {
                let ds = s * (1.0 - s);
                g[0] = amp * ds * (tf - mid);
                g[1] = -amp * ds * rate;
                g[2] = s;
            }
            Ok(amp * s)
        }
        PriorFamily::Sig5 => {
            let sum = th[2] + th[4];
            if sum == 0.0 {
                return Err(Error::SingularRate { row });
            }
            let tau = th[3] - tf;
            let abs_sum = sum.abs();
            let k = 2.0 * th[2] * th[4] / abs_sum;
            let a = sigmoid(k * tau);
            let b = (th[2] * tau).exp();
            let c = (th[4] * tau).exp();
            let denom = 1.0 + a * b + (1.0 - a) * c;
            let u = th[0] + th[1] / denom;
            if let Some(g) = grad {
                let du_dden = -th[1] / (denom * denom);
                let dden_da = b - c;
                let da_dk = a * (1.0 - a) * tau;
                let da_dtau = a * (1.0 - a) * k;
                let sign = sum.signum();
                let dk_dth2 = 2.0 * th[4] / abs_sum - 2.0 * th[2] * th[4] * sign / (sum * sum);
                let dk_dth4 = 2.0 * th[2] / abs_sum - 2.0 * th[2] * th[4] * sign / (sum * sum);
                g[0] = 1.0;
                g[1] = 1.0 / denom;
                g[2] = du_dden * (dden_da * da_dk * dk_dth2 + a * b * tau);
                g[3] = du_dden * (dden_da * da_dtau + a * b * th[2] + (1.0 - a) * c * th[4]);
                g[4] = du_dden * (dden_da * da_dk * dk_dth4 + (1.0 - a) * c * tau);
            }
            Ok(u)
        }
    }
}

/// Serialized form stored in checkpoints: `{family, scope, d, theta}` with
/// theta as row-major nested rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRecord {
    pub family: String,
    pub scope: PriorScope,
    pub d: Option<usize>,
    pub horizon: usize,
    pub joints: usize,
    pub theta: Vec<Vec<f64>>,
}

impl From<&PriorParams> for PriorRecord {
    fn from(p: &PriorParams) -> Self {
        let (family, d) = match p.family {
            PriorFamily::Poly(d) => ("poly".to_string(), Some(d)),
            other => (other.to_string(), None),
        };
        Self {
            family,
            scope: p.scope,
            d,
            horizon: p.horizon,
            joints: p.joints,
            theta: p.theta.outer_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

impl TryFrom<&PriorRecord> for PriorParams {
    type Error = Error;

    fn try_from(r: &PriorRecord) -> Result<Self> {
        let family = match (r.family.as_str(), r.d) {
            ("poly", Some(d)) => PriorFamily::Poly(d),
            ("poly", None) => {
                return Err(Error::invalid("prior record", "poly family without degree"))
            }
            (name, _) => name.parse()?,
        };
        let rows = r.theta.len();
        let cols = r.theta.first().map_or(0, Vec::len);
        if r.theta.iter().any(|row| row.len() != cols) {
            return Err(Error::invalid("prior record", "ragged theta rows"));
        }
        let flat: Vec<f64> = r.theta.iter().flatten().copied().collect();
        let theta = Array2::from_shape_vec((rows, cols), flat).expect("rectangular");
        PriorParams::new(family, r.scope, r.horizon, r.joints, theta)
    }
}
