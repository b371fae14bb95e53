//! Discrete dynamic movement primitive driving a single joint.
//!
//! The transformation system is
//!
//! ```text
//! κ v̇ = K (g − x) − Q v + (g − x₀) f(s)
//! κ ẋ = v
//! ```
//!
//! coupled to the canonical phase `κ ṡ = −α s`, which is solved in closed form.
//! The forcing term `f` is a normalized mixture of Gaussian bases over the phase.
//! Note that when `g == x₀` the forcing term has no effect at all; this is a
//! property of the formulation and is kept as is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of Gaussian bases in the forcing term.
pub const NUM_BASES: usize = 35;
/// Flattened policy length: `[λ, g, w₁ … w₃₅]`.
pub const POLICY_DIM: usize = NUM_BASES + 2;

/// Activation sums below this are treated as a degenerate phase and give `f = 0`.
const MIN_ACTIVATION_SUM: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmpConstants {
    pub spring_k: f64,
    pub damping_q: f64,
    pub temporal_scale: f64,
    pub phase_alpha: f64,
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
}

impl Default for DmpConstants {
    fn default() -> Self {
        DmpConstants::new(400.0, 1.0, 4.0)
    }
}

impl DmpConstants {
    /// Critically damped constants with bases spaced uniformly in time.
    ///
    /// Centers sit at `exp(−α (i−1) / (34 κ))`; each width is chosen so that a
    /// basis and its successor cross at activation 0.5.
    pub fn new(spring_k: f64, temporal_scale: f64, phase_alpha: f64) -> Self {
        let centers: Vec<f64> = (0..NUM_BASES)
            .map(|i| (-phase_alpha * i as f64 / ((NUM_BASES - 1) as f64 * temporal_scale)).exp())
            .collect();
        let four_ln2 = 4.0 * std::f64::consts::LN_2;
        let widths = (0..NUM_BASES)
            .map(|i| {
                let gap = if i + 1 < NUM_BASES {
                    centers[i] - centers[i + 1]
                } else {
                    centers[i - 1] - centers[i]
                };
                four_ln2 / (gap * gap)
            })
            .collect();
        DmpConstants {
            spring_k,
            damping_q: 2.0 * spring_k.sqrt(),
            temporal_scale,
            phase_alpha,
            centers,
            widths,
        }
    }

    /// Multiplies every basis width by `factor`; larger factors give narrower bases.
    pub fn with_width_scale(mut self, factor: f64) -> Self {
        for h in &mut self.widths {
            *h *= factor;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("spring_k", self.spring_k),
            ("damping_q", self.damping_q),
            ("temporal_scale", self.temporal_scale),
            ("phase_alpha", self.phase_alpha),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::ParameterDomain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.centers.len() != NUM_BASES || self.widths.len() != NUM_BASES {
            return Err(Error::ParameterDomain(format!(
                "expected {NUM_BASES} centers and widths, got {} and {}",
                self.centers.len(),
                self.widths.len()
            )));
        }
        if self.centers.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
            return Err(Error::ParameterDomain("basis centers must lie in (0, 1]".into()));
        }
        let increasing = self.centers.windows(2).all(|w| w[0] < w[1]);
        let decreasing = self.centers.windows(2).all(|w| w[0] > w[1]);
        if !(increasing || decreasing) {
            return Err(Error::ParameterDomain("basis centers must be strictly monotone".into()));
        }
        if self.widths.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
            return Err(Error::ParameterDomain("basis widths must be positive".into()));
        }
        Ok(())
    }
}

/// Closed-form phase `s(t) = exp(−α t / κ)`.
pub fn canonical_phase(t: f64, consts: &DmpConstants) -> f64 {
    (-consts.phase_alpha * t / consts.temporal_scale).exp()
}

/// Gaussian basis activations `ψᵢ(s) = exp(−hᵢ (s − cᵢ)²)`.
pub fn basis_activations(s: f64, consts: &DmpConstants) -> [f64; NUM_BASES] {
    let mut out = [0.0; NUM_BASES];
    for (i, a) in out.iter_mut().enumerate() {
        let d = s - consts.centers[i];
        *a = (-consts.widths[i] * d * d).exp();
    }
    out
}

/// `Σ wᵢ ψᵢ / Σ ψᵢ` for precomputed activations.
pub fn normalized_forcing(activations: &[f64], weights: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&a, &w) in activations.iter().zip(weights) {
        num += a * w;
        den += a;
    }
    if den < MIN_ACTIVATION_SUM {
        0.0
    } else {
        num / den
    }
}

/// Forcing term `f(s)`. Returns 0 when every basis has underflowed.
pub fn forcing(s: f64, weights: &[f64], consts: &DmpConstants) -> f64 {
    normalized_forcing(&basis_activations(s, consts), weights)
}

/// The 37-entry policy `[λ, g, w₁ … w₃₅]`.
///
/// `λ` is the phase value at which the dart is let go, `g` the goal angle of the
/// actuated joint, and `wᵢ` the basis weights of the forcing term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PolicyVector([f64; POLICY_DIM]);

impl PolicyVector {
    pub fn new(lambda_release: f64, goal: f64, weights: [f64; NUM_BASES]) -> Self {
        let mut v = [0.0; POLICY_DIM];
        v[0] = lambda_release;
        v[1] = goal;
        v[2..].copy_from_slice(&weights);
        PolicyVector(v)
    }

    pub fn zeros() -> Self {
        PolicyVector([0.0; POLICY_DIM])
    }

    pub fn from_array(values: [f64; POLICY_DIM]) -> Self {
        PolicyVector(values)
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; POLICY_DIM] = values.try_into().map_err(|_| {
            Error::InvalidInput(format!("policy vector needs {POLICY_DIM} entries, got {}", values.len()))
        })?;
        Ok(PolicyVector(arr))
    }

    pub fn lambda_release(&self) -> f64 {
        self.0[0]
    }

    pub fn goal(&self) -> f64 {
        self.0[1]
    }

    pub fn weights(&self) -> &[f64] {
        &self.0[2..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_array(&self) -> &[f64; POLICY_DIM] {
        &self.0
    }

    pub fn as_mut_array(&mut self) -> &mut [f64; POLICY_DIM] {
        &mut self.0
    }

    pub fn set_lambda_release(&mut self, lambda: f64) {
        self.0[0] = lambda;
    }

    /// Checks `λ ∈ [0, 1]` and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(Error::ParameterDomain(format!("policy entry {i} is not finite")));
        }
        let lambda = self.lambda_release();
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::ParameterDomain(format!("release phase {lambda} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn distance(&self, other: &PolicyVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<PolicyVector> for Vec<f64> {
    fn from(p: PolicyVector) -> Self {
        p.0.to_vec()
    }
}

impl TryFrom<Vec<f64>> for PolicyVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        PolicyVector::from_slice(&v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub time: f64,
    pub phase: f64,
    /// Desired joint angle (rad).
    pub angle: f64,
    /// Desired joint velocity `ẋ = v / κ` (rad/s).
    pub velocity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesiredTrajectory {
    pub samples: Vec<TrajectorySample>,
}

/// Incremental RK4 integrator for the transformation system.
///
/// The forcing term at the end of one step is reused at the start of the next,
/// so each step costs two basis evaluations.
#[derive(Clone, Debug)]
pub struct DmpIntegrator<'a> {
    consts: &'a DmpConstants,
    goal: f64,
    amplitude: f64,
    weights: [f64; NUM_BASES],
    dt: f64,
    step_index: u64,
    x: f64,
    v: f64,
    forcing_now: f64,
}

impl<'a> DmpIntegrator<'a> {
    pub fn new(theta: &PolicyVector, x0: f64, consts: &'a DmpConstants, dt: f64) -> Result<Self> {
        if let Some(i) = theta.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::ParameterDomain(format!("policy entry {i} is not finite")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::ParameterDomain(format!("dt must be positive, got {dt}")));
        }
        if !x0.is_finite() {
            return Err(Error::ParameterDomain("start position is not finite".into()));
        }
        let mut weights = [0.0; NUM_BASES];
        weights.copy_from_slice(theta.weights());
        let forcing_now = forcing(1.0, &weights, consts);
        Ok(DmpIntegrator {
            consts,
            goal: theta.goal(),
            amplitude: theta.goal() - x0,
            weights,
            dt,
            step_index: 0,
            x: x0,
            v: 0.0,
            forcing_now,
        })
    }

    pub fn sample(&self) -> TrajectorySample {
        let time = self.step_index as f64 * self.dt;
        TrajectorySample {
            time,
            phase: canonical_phase(time, self.consts),
            angle: self.x,
            velocity: self.v / self.consts.temporal_scale,
        }
    }

    #[inline]
    fn derivative(&self, x: f64, v: f64, f: f64) -> (f64, f64) {
        let c = self.consts;
        let kappa = c.temporal_scale;
        (
            v / kappa,
            (c.spring_k * (self.goal - x) - c.damping_q * v + self.amplitude * f) / kappa,
        )
    }

    /// Advances one `dt`.
    pub fn step(&mut self) {
        let t = self.step_index as f64 * self.dt;
        let h = self.dt;
        let f0 = self.forcing_now;
        let fm = forcing(canonical_phase(t + 0.5 * h, self.consts), &self.weights, self.consts);
        let f1 = forcing(canonical_phase(t + h, self.consts), &self.weights, self.consts);

        let (x, v) = (self.x, self.v);
        let (k1x, k1v) = self.derivative(x, v, f0);
        let (k2x, k2v) = self.derivative(x + 0.5 * h * k1x, v + 0.5 * h * k1v, fm);
        let (k3x, k3v) = self.derivative(x + 0.5 * h * k2x, v + 0.5 * h * k2v, fm);
        let (k4x, k4v) = self.derivative(x + h * k3x, v + h * k3v, f1);
        self.x = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        self.v = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        self.forcing_now = f1;
        self.step_index += 1;
    }
}

/// Integrates the primitive from rest at `x0` for `duration` seconds.
///
/// Samples are taken at `t = n·dt` for `n = 0 ..= round(duration / dt)`; the
/// first sample is `(0, 1, x0, 0)`.
pub fn integrate_dmp(
    theta: &PolicyVector,
    x0: f64,
    duration: f64,
    consts: &DmpConstants,
    dt: f64,
) -> Result<DesiredTrajectory> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::ParameterDomain(format!("duration must be positive, got {duration}")));
    }
    let mut integ = DmpIntegrator::new(theta, x0, consts, dt)?;
    let steps = (duration / dt).round().max(1.0) as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(integ.sample());
    for _ in 0..steps {
        integ.step();
        samples.push(integ.sample());
    }
    Ok(DesiredTrajectory { samples })
}
