use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::math;

/// Affine-Gaussian dynamics of a single mode:
/// `x' = A x + B u + b + ν`, `ν ~ N(0, diag(noise_var))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub noise_var: DVector<f64>,
}

impl ModeDynamics {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        offset: DVector<f64>,
        noise_var: DVector<f64>,
    ) -> Self {
        Self {
            a,
            b,
            offset,
            noise_var,
        }
    }

    pub fn predict(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.offset
    }
}

/// Softmax recurrence `P(z' | x, u) = softmax(W_x x + W_u u + r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recurrence {
    pub w_x: DMatrix<f64>,
    pub w_u: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Recurrence {
    pub fn zeros(modes: usize, state_dim: usize, control_dim: usize) -> Self {
        Self {
            w_x: DMatrix::zeros(modes, state_dim),
            w_u: DMatrix::zeros(modes, control_dim),
            bias: DVector::zeros(modes),
        }
    }

    pub fn logits(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.w_x * x + &self.w_u * u + &self.bias
    }
}

/// Parameters of a recurrent-only switching linear dynamical system with
/// identity emissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsDocument", into = "ParamsDocument")]
pub struct HybridSystemParams {
    state_dim: usize,
    control_dim: usize,
    pub modes: Vec<ModeDynamics>,
    pub recurrence: Recurrence,
    /// Diagonal observation noise of the identity emission.
    pub emission_var: DVector<f64>,
}

pub const DEFAULT_EMISSION_VAR: f64 = 1e-6;

impl HybridSystemParams {
    pub fn new(
        modes: Vec<ModeDynamics>,
        recurrence: Recurrence,
        emission_var: DVector<f64>,
    ) -> Result<Self> {
        let first = modes.first().ok_or(Error::Config("at least one mode required".into()))?;
        let params = Self {
            state_dim: first.a.nrows(),
            control_dim: first.b.ncols(),
            modes,
            recurrence,
            emission_var,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn validate(&self) -> Result<()> {
        let (k, m, n) = (self.num_modes(), self.state_dim, self.control_dim);
        for mode in &self.modes {
            ensure_dim("A rows", m, mode.a.nrows())?;
            ensure_dim("A cols", m, mode.a.ncols())?;
            ensure_dim("B rows", m, mode.b.nrows())?;
            ensure_dim("B cols", n, mode.b.ncols())?;
            ensure_dim("offset", m, mode.offset.len())?;
            ensure_dim("process noise", m, mode.noise_var.len())?;
            if mode.noise_var.iter().any(|q| !(*q > 0.0)) {
                return Err(Error::NonPositiveVariance("process noise"));
            }
            let all = mode
                .a
                .iter()
                .chain(mode.b.iter())
                .chain(mode.offset.iter())
                .chain(mode.noise_var.iter());
            if all.into_iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("mode dynamics"));
            }
        }
        let rec = &self.recurrence;
        ensure_dim("W_x rows", k, rec.w_x.nrows())?;
        ensure_dim("W_x cols", m, rec.w_x.ncols())?;
        ensure_dim("W_u rows", k, rec.w_u.nrows())?;
        ensure_dim("W_u cols", n, rec.w_u.ncols())?;
        ensure_dim("recurrence bias", k, rec.bias.len())?;
        if rec
            .w_x
            .iter()
            .chain(rec.w_u.iter())
            .chain(rec.bias.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("recurrence weights"));
        }
        ensure_dim("emission variance", m, self.emission_var.len())?;
        if self.emission_var.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::NonPositiveVariance("emission noise"));
        }
        Ok(())
    }

    fn check_inputs(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
        ensure_dim("state", self.state_dim, x.len())?;
        ensure_dim("control", self.control_dim, u.len())?;
        if x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state or control"));
        }
        Ok(())
    }

    pub fn logits(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_inputs(x, u)?;
        Ok(self.recurrence.logits(x, u))
    }

    /// `P(z_{t+1} | x_t, u_t)` as a probability vector over modes.
    pub fn mode_transition_probs(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(math::softmax(&self.logits(x, u)?))
    }

    /// Argmax of [`Self::mode_transition_probs`]; ties go to the lowest index.
    pub fn most_likely_mode(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<usize> {
        Ok(math::argmax(self.logits(x, u)?.as_slice()))
    }

    /// Classifies a state with the control input set to zero.
    pub fn region_of(&self, x: &DVector<f64>) -> Result<usize> {
        self.most_likely_mode(x, &DVector::zeros(self.control_dim))
    }

    pub fn mode(&self, z: usize) -> Result<&ModeDynamics> {
        self.modes.get(z).ok_or(Error::InvalidMode {
            mode: z,
            modes: self.num_modes(),
        })
    }

    /// Advances the continuous state under mode `z`. Noise with variances
    /// `Q_z` is added only when a seed is given.
    pub fn step_dynamics(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        z: usize,
        noise_seed: Option<u64>,
    ) -> Result<DVector<f64>> {
        let dynamics = self.mode(z)?;
        self.check_inputs(x, u)?;
        let mean = dynamics.predict(x, u);
        Ok(match noise_seed {
            None => mean,
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                add_noise(mean, &dynamics.noise_var, &mut rng)
            }
        })
    }
}

pub(crate) fn add_noise<R: rand::Rng>(
    mut mean: DVector<f64>,
    variances: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    for (m, v) in mean.iter_mut().zip(variances.iter()) {
        let eps: f64 = StandardNormal.sample(rng);
        *m += v.sqrt() * eps;
    }
    mean
}

// Serialized form. Matrices are stored row-major.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeDocument {
    a: Vec<f64>,
    b: Vec<f64>,
    offset: Vec<f64>,
    noise_var: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecurrenceDocument {
    w_x: Vec<f64>,
    w_u: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDocument {
    num_modes: usize,
    state_dim: usize,
    control_dim: usize,
    modes: Vec<ModeDocument>,
    recurrence: RecurrenceDocument,
    emission_var: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect()
}

fn from_row_major(rows: usize, cols: usize, data: &[f64], context: &'static str) -> Result<DMatrix<f64>> {
    ensure_dim(context, rows * cols, data.len())?;
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

impl From<HybridSystemParams> for ParamsDocument {
    fn from(p: HybridSystemParams) -> Self {
        ParamsDocument {
            num_modes: p.num_modes(),
            state_dim: p.state_dim,
            control_dim: p.control_dim,
            modes: p
                .modes
                .iter()
                .map(|m| ModeDocument {
                    a: row_major(&m.a),
                    b: row_major(&m.b),
                    offset: m.offset.iter().copied().collect(),
                    noise_var: m.noise_var.iter().copied().collect(),
                })
                .collect(),
            recurrence: RecurrenceDocument {
                w_x: row_major(&p.recurrence.w_x),
                w_u: row_major(&p.recurrence.w_u),
                bias: p.recurrence.bias.iter().copied().collect(),
            },
            emission_var: p.emission_var.iter().copied().collect(),
        }
    }
}

impl TryFrom<ParamsDocument> for HybridSystemParams {
    type Error = Error;

    fn try_from(doc: ParamsDocument) -> Result<Self> {
        let (k, m, n) = (doc.num_modes, doc.state_dim, doc.control_dim);
        ensure_dim("mode count", k, doc.modes.len())?;
        let modes = doc
            .modes
            .iter()
            .map(|md| {
                Ok(ModeDynamics {
                    a: from_row_major(m, m, &md.a, "A")?,
                    b: from_row_major(m, n, &md.b, "B")?,
                    offset: DVector::from_column_slice(&md.offset),
                    noise_var: DVector::from_column_slice(&md.noise_var),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let recurrence = Recurrence {
            w_x: from_row_major(k, m, &doc.recurrence.w_x, "W_x")?,
            w_u: from_row_major(k, n, &doc.recurrence.w_u, "W_u")?,
            bias: DVector::from_column_slice(&doc.recurrence.bias),
        };
        let params = HybridSystemParams {
            state_dim: m,
            control_dim: n,
            modes,
            recurrence,
            emission_var: DVector::from_column_slice(&doc.emission_var),
        };
        params.validate()?;
        Ok(params)
    }
}
