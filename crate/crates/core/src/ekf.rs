//! Constant-velocity extended Kalman filter over virtual-anchor
//! measurements.
//!
//! The state is [x, v_x, y, v_y]. Prediction is the standard linear shear
//! with white-acceleration process noise; scheduled overrides replace the
//! transition at known sharp turns, where the post-turn state is injected as
//! a control input. The update stacks one (range, bearing-cosine) pair per
//! anchor and applies a Joseph-form covariance correction so the covariance
//! stays symmetric positive semi-definite under roundoff.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::anchors::{measurement_jacobian, predict_measurement, VirtualAnchor};
use crate::geom::{Point2, Vec2};
use crate::{Error, Result};

/// Innovation covariance condition numbers above this are treated as a
/// singular update; the caller should coast through the step instead.
pub const MAX_CONDITION: f64 = 1e12;

/// Filter state: mean and covariance of [x, v_x, y, v_y].
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub x: Vector4<f64>,
    pub p: Matrix4<f64>,
}

impl EkfState {
    pub fn new(x: Vector4<f64>, p: Matrix4<f64>) -> Result<Self> {
        let s = Self { x, p };
        s.validate()?;
        Ok(s)
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x[0], self.x[2])
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.x[1], self.x[3])
    }

    /// Checks mean finiteness, covariance symmetry (1e-9) and positive
    /// semi-definiteness (eigenvalues above −1e-9).
    pub fn validate(&self) -> Result<()> {
        if self.x.iter().any(|v| !v.is_finite()) || self.p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("filter state"));
        }
        if !covariance_is_symmetric_psd(&self.p) {
            return Err(Error::InvalidParameter(
                "covariance is not symmetric positive semi-definite".into(),
            ));
        }
        Ok(())
    }
}

/// True when `p` is symmetric within 1e-9 with eigenvalues above −1e-9.
pub fn covariance_is_symmetric_psd(p: &Matrix4<f64>) -> bool {
    for i in 0..4 {
        for j in (i + 1)..4 {
            if (p[(i, j)] - p[(j, i)]).abs() > 1e-9 {
                return false;
            }
        }
    }
    let sym = (p + p.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().all(|&e| e > -1e-9)
}

/// State transition over one sampling period `t`: position advances by
/// velocity·t, velocity is unchanged.
pub fn build_f(t: f64) -> Result<Matrix4<f64>> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sampling period must be positive, got {t}"
        )));
    }
    let mut f = Matrix4::identity();
    f[(0, 1)] = t;
    f[(2, 3)] = t;
    Ok(f)
}

/// White-acceleration process covariance: per axis
/// [[t⁴/4, t³/2], [t³/2, t²]]·σ_a², with no cross-axis coupling.
pub fn build_q(t: f64, sigma_a: f64) -> Result<Matrix4<f64>> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sampling period must be positive, got {t}"
        )));
    }
    if !sigma_a.is_finite() || sigma_a < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sigma_a must be >= 0, got {sigma_a}"
        )));
    }
    let v = sigma_a * sigma_a;
    let t2 = t * t;
    let q11 = t2 * t2 / 4.0 * v;
    let q12 = t2 * t / 2.0 * v;
    let q22 = t2 * v;
    let mut q = Matrix4::zeros();
    for base in [0usize, 2] {
        q[(base, base)] = q11;
        q[(base, base + 1)] = q12;
        q[(base + 1, base)] = q12;
        q[(base + 1, base + 1)] = q22;
    }
    Ok(q)
}

/// A scheduled replacement for one prediction step: the transition matrix
/// and an additive control term, used where the track makes a known sharp
/// turn and the constant-velocity model would overshoot.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOverride {
    pub f: Matrix4<f64>,
    pub u: Vector4<f64>,
}

impl ControlOverride {
    /// Replaces the whole predicted mean with `state` (zero transition plus
    /// the new state as input), the standard treatment when the post-turn
    /// state is known exactly up to process noise.
    pub fn inject(state: Vector4<f64>) -> Self {
        Self {
            f: Matrix4::zeros(),
            u: state,
        }
    }
}

/// Motion parameters: sampling period, acceleration spread, and per-step
/// overrides at known turns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotionModel {
    pub t: f64,
    pub sigma_a: f64,
    pub controls: BTreeMap<usize, ControlOverride>,
}

impl MotionModel {
    pub fn new(t: f64, sigma_a: f64) -> Result<Self> {
        // Reuse the builders' parameter validation.
        build_q(t, sigma_a)?;
        Ok(Self {
            t,
            sigma_a,
            controls: BTreeMap::new(),
        })
    }

    pub fn with_control(mut self, step: usize, control: ControlOverride) -> Self {
        self.controls.insert(step, control);
        self
    }
}

/// Extrapolates the state one period ahead, honoring any override scheduled
/// for `step`.
pub fn predict(state: &EkfState, model: &MotionModel, step: usize) -> Result<EkfState> {
    state.validate()?;
    let q = build_q(model.t, model.sigma_a)?;
    let (f, u) = match model.controls.get(&step) {
        Some(c) => (c.f, c.u),
        None => (build_f(model.t)?, Vector4::zeros()),
    };
    let x = f * state.x + u;
    let p = f * state.p * f.transpose() + q;
    let p = (p + p.transpose()) * 0.5;
    EkfState::new(x, p)
}

/// What the update step observed: the stacked residual and its statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationRecord {
    /// Measured minus predicted, ordered as the anchors were given.
    pub innovation: DVector<f64>,
    /// Innovation covariance H·P̃·Hᵀ + R.
    pub covariance: DMatrix<f64>,
    /// Normalized innovation squared, iᵀ·S⁻¹·i.
    pub nis: f64,
    /// Rows in the stacked measurement (2 per anchor).
    pub dof: usize,
}

/// Folds stacked anchor measurements into the predicted state.
///
/// `z` holds (r, n̂) pairs and `r_diag` their variances, both in anchor
/// order, 2 entries per anchor. Fails when the innovation covariance is
/// ill-conditioned (condition number above [`MAX_CONDITION`]); the caller
/// should then keep the prediction and flag the step as coasting.
pub fn update(
    predicted: &EkfState,
    anchors: &[VirtualAnchor],
    z: &DVector<f64>,
    r_diag: &DVector<f64>,
) -> Result<(EkfState, InnovationRecord)> {
    predicted.validate()?;
    let m = anchors.len();
    if m == 0 {
        return Err(Error::InvalidParameter(
            "update requires at least one anchor".into(),
        ));
    }
    if z.len() != 2 * m || r_diag.len() != 2 * m {
        return Err(Error::InvalidParameter(format!(
            "expected {} stacked entries for {m} anchors, got z: {}, r: {}",
            2 * m,
            z.len(),
            r_diag.len()
        )));
    }
    if z.iter().chain(r_diag.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("stacked measurement"));
    }
    if r_diag.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParameter(
            "measurement variances must be >= 0".into(),
        ));
    }

    let mut h = DMatrix::zeros(2 * m, 4);
    let mut z_pred = DVector::zeros(2 * m);
    for (i, va) in anchors.iter().enumerate() {
        let hi = measurement_jacobian(va, &predicted.x)?;
        let zi = predict_measurement(va, predicted.position())?;
        for col in 0..4 {
            h[(2 * i, col)] = hi[(0, col)];
            h[(2 * i + 1, col)] = hi[(1, col)];
        }
        z_pred[2 * i] = zi.r;
        z_pred[2 * i + 1] = zi.n_hat;
    }

    let p = DMatrix::from_iterator(4, 4, predicted.p.iter().copied());
    let mut s = &h * &p * h.transpose();
    for i in 0..2 * m {
        s[(i, i)] += r_diag[i];
    }
    let s = (&s + s.transpose()) * 0.5;

    let sv = s.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    let cond = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if cond > MAX_CONDITION {
        return Err(Error::IllConditioned { cond });
    }
    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or(Error::IllConditioned { cond })?;

    let innovation = z - &z_pred;
    let k = &p * h.transpose() * &s_inv;
    let x_new = predicted.x + Vector4::from_iterator((&k * &innovation).iter().copied());

    // Joseph form: (I−KH) P (I−KH)ᵀ + K R Kᵀ, then force exact symmetry.
    let ikh = DMatrix::identity(4, 4) - &k * &h;
    let mut krk = DMatrix::zeros(4, 4);
    for i in 0..2 * m {
        let col = k.column(i);
        for a in 0..4 {
            for b in 0..4 {
                krk[(a, b)] += col[a] * col[b] * r_diag[i];
            }
        }
    }
    let p_new = &ikh * &p * ikh.transpose() + krk;
    let p_new = (&p_new + p_new.transpose()) * 0.5;
    let p_new = Matrix4::from_iterator(p_new.iter().copied());

    let nis = (innovation.transpose() * &s_inv * &innovation)[(0, 0)];
    let state = EkfState::new(x_new, p_new)?;
    Ok((
        state,
        InnovationRecord {
            innovation,
            covariance: s,
            nis,
            dof: 2 * m,
        },
    ))
}

/// A step with nothing to measure: the prediction is carried through
/// unchanged.
pub fn step_outage(predicted: &EkfState) -> EkfState {
    predicted.clone()
}

/// Diagonal entries of R for one anchor, from the noise sigmas.
///
/// The range variance is (c·σ_tof)². The bearing-cosine variance propagates
/// σ_aoa through the cosine: sin²(bearing)·σ² to first order, plus σ⁴/2
/// which dominates when the bearing sine vanishes. Both entries are floored
/// at 1e-10 so that noiseless runs still produce an invertible innovation
/// covariance. `final_leg_sin` is the sine of the measured arrival direction
/// after bouncing it through the path's reflection walls.
pub fn measurement_variances(sigma_tof: f64, sigma_aoa: f64, final_leg_sin: f64) -> (f64, f64) {
    const FLOOR: f64 = 1e-10;
    let range_var = (crate::SPEED_OF_LIGHT * sigma_tof).powi(2);
    let s2 = sigma_aoa * sigma_aoa;
    let cos_var = final_leg_sin * final_leg_sin * s2 + s2 * s2 / 2.0;
    (range_var.max(FLOOR), cos_var.max(FLOOR))
}
