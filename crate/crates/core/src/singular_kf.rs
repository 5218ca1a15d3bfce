//! Kalman filter on the disturbance-augmented model
//!
//! ```text
//! [x; d]_{t+1} = [[A, G], [0, 0]] [x; d]_t + [w_t; delta_t],  cov delta = D I
//! y_t          = [C, H] [x; d]_t + v_t
//! ```
//!
//! As the pseudo-variance `D` grows, its state estimate approaches the SISE
//! estimate whenever SISE is stable.

use crate::error::{Error, Result};
use crate::linalg::{self, check_psd, spd_solve, symmetrize, Mat, Vector};
use crate::model::{LinearSystem, Trajectory};
use crate::sise::{run_filter, Estimates, FilterInit, RunOptions};
use crate::stability::{verdict, Verdict};

/// Default disturbance pseudo-variance.
pub const DEFAULT_PSEUDO_VARIANCE: f64 = 1e8;

/// Covariance trace beyond `BLOWUP_FACTOR * max(D, 1)` aborts the filter.
pub const BLOWUP_FACTOR: f64 = 1e14;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    pub n: usize,
    pub m: usize,
    /// `[[A, G], [0, 0]]`.
    pub f: Mat,
    /// `diag(Q, D I)`.
    pub w: Mat,
    /// `[C, H]`.
    pub h: Mat,
    pub r: Mat,
    pub pseudo_variance: f64,
    /// Known-input matrices `(B, D)` of the plant, if any.
    pub known: Option<(Mat, Mat)>,
}

/// Assembles the augmented model. `D = 0` is accepted (it turns the filter
/// into a plain Kalman filter with `d = 0`).
pub fn augment(sys: &LinearSystem, pseudo_variance: f64) -> Result<AugmentedModel> {
    sys.check_shapes()?;
    if !pseudo_variance.is_finite() || pseudo_variance < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "pseudo-variance must be finite and non-negative, got {pseudo_variance}"
        )));
    }
    let (n, m) = (sys.n(), sys.m());
    let mut f = Mat::zeros(n + m, n + m);
    f.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    f.view_mut((0, n), (n, m)).copy_from(&sys.g);
    let mut w = Mat::zeros(n + m, n + m);
    w.view_mut((0, 0), (n, n)).copy_from(&sys.q);
    w.view_mut((n, n), (m, m)).fill_diagonal(pseudo_variance);
    let h = linalg::hstack(&sys.c, &sys.h);
    Ok(AugmentedModel {
        n,
        m,
        f,
        w,
        h,
        r: sys.r.clone(),
        pseudo_variance,
        known: sys.known.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AkfState {
    pub t: usize,
    /// Filtered augmented state `[xhat_{t|t}; dhat_{t|t}]`.
    pub z: Vector,
    pub p: Mat,
    /// `dhat_{t-1|t}` from a one-step fixed-lag smoothing correction.
    pub dhat_smoothed: Vector,
    /// Post-update residual `y_t - [C, H] z_{t|t}`.
    pub innovation: Vector,
}

impl AkfState {
    pub fn xhat(&self, n: usize) -> Vector {
        self.z.rows(0, n).into_owned()
    }

    pub fn dhat(&self, n: usize) -> Vector {
        let m = self.z.len() - n;
        self.z.rows(n, m).into_owned()
    }

    /// Covariance of the state block.
    pub fn px(&self, n: usize) -> Mat {
        self.p.view((0, 0), (n, n)).into_owned()
    }
}

/// Prior `[x0; 0]` with covariance `diag(P0, D I)`, before any measurement.
pub fn akf_prior(model: &AugmentedModel, x0: &Vector, p0: &Mat) -> Result<AkfState> {
    let (n, m) = (model.n, model.m);
    if x0.len() != n || p0.shape() != (n, n) {
        return Err(Error::Shape(format!("prior must be {n} and {n}x{n}")));
    }
    check_psd(p0, "P0")?;
    let mut z = Vector::zeros(n + m);
    z.rows_mut(0, n).copy_from(x0);
    let mut p = Mat::zeros(n + m, n + m);
    p.view_mut((0, 0), (n, n)).copy_from(&symmetrize(p0));
    p.view_mut((n, n), (m, m)).fill_diagonal(model.pseudo_variance);
    Ok(AkfState {
        t: 0,
        z,
        p,
        dhat_smoothed: Vector::zeros(m),
        innovation: Vector::zeros(model.h.nrows()),
    })
}

fn measurement_update(
    model: &AugmentedModel,
    z_pred: &Vector,
    p_pred: &Mat,
    y: &Vector,
    u_now: Option<&Vector>,
) -> Result<Update> {
    let hm = &model.h;
    let s = symmetrize(&(hm * p_pred * hm.transpose() + &model.r));
    let mut nu = y - hm * z_pred;
    if let (Some((_, d)), Some(u)) = (&model.known, u_now) {
        nu -= d * u;
    }
    let k = spd_solve(&s, &(hm * p_pred), "innovation covariance")?.transpose();
    let z = z_pred + &k * &nu;
    let i_kh = Mat::identity(p_pred.nrows(), p_pred.nrows()) - &k * hm;
    let p = symmetrize(&(&i_kh * p_pred * i_kh.transpose() + &k * &model.r * k.transpose()));
    let residual = &nu - hm * (&z - z_pred);
    Ok(Update { z, p, nu, s, residual })
}

struct Update {
    z: Vector,
    p: Mat,
    nu: Vector,
    s: Mat,
    residual: Vector,
}

fn check_blowup(model: &AugmentedModel, p: &Mat) -> Result<()> {
    let trace = p.trace();
    let limit = BLOWUP_FACTOR * model.pseudo_variance.max(1.0);
    if !trace.is_finite() || trace > limit {
        return Err(Error::NumericalLimit { trace, limit });
    }
    Ok(())
}

/// Processes the first measurement `y_0` from the prior.
pub fn akf_first(model: &AugmentedModel, prior: &AkfState, y0: &Vector, u0: Option<&Vector>) -> Result<AkfState> {
    let up = measurement_update(model, &prior.z, &prior.p, y0, u0)?;
    check_blowup(model, &up.p)?;
    Ok(AkfState {
        t: 0,
        z: up.z,
        p: up.p,
        dhat_smoothed: Vector::zeros(model.m),
        innovation: up.residual,
    })
}

/// One predict/update step with a Joseph-form covariance update.
pub fn akf_step(state: &AkfState, model: &AugmentedModel, y: &Vector) -> Result<AkfState> {
    akf_step_with_input(state, model, y, None, None)
}

pub fn akf_step_with_input(
    state: &AkfState,
    model: &AugmentedModel,
    y: &Vector,
    u_prev: Option<&Vector>,
    u_now: Option<&Vector>,
) -> Result<AkfState> {
    if y.len() != model.h.nrows() {
        return Err(Error::Shape(format!(
            "measurement has length {}, expected {}",
            y.len(),
            model.h.nrows()
        )));
    }
    let n = model.n;
    let mut z_pred = &model.f * &state.z;
    if let (Some((b, _)), Some(u)) = (&model.known, u_prev) {
        let bu = b * u;
        let mut top = z_pred.rows_mut(0, n);
        top += bu;
    }
    let p_pred = symmetrize(&(&model.f * &state.p * model.f.transpose() + &model.w));
    let up = measurement_update(model, &z_pred, &p_pred, y, u_now)?;
    check_blowup(model, &up.p)?;
    // E[z_{t-1} | Y^t] = z_{t-1|t-1} + P_{t-1} F^T H^T S^{-1} nu
    let nu = Mat::from_column_slice(up.nu.len(), 1, up.nu.as_slice());
    let corr = &state.p * model.f.transpose() * model.h.transpose() * spd_solve(&up.s, &nu, "innovation covariance")?;
    let smoothed = &state.z + corr.column(0);
    Ok(AkfState {
        t: state.t + 1,
        dhat_smoothed: smoothed.rows(n, model.m).into_owned(),
        z: up.z,
        p: up.p,
        innovation: up.residual,
    })
}

/// Runs the augmented filter over `y_0 .. y_T` starting from the prior
/// `[x0; 0]`. The disturbance column holds the smoothed `dhat_{t-1|t}` when
/// the plant has no feedthrough and the filtered `dhat_{t|t}` otherwise.
pub fn run_akf(
    sys: &LinearSystem,
    ys: &[Vector],
    init: &FilterInit,
    pseudo_variance: f64,
    known_inputs: Option<&[Vector]>,
) -> Result<Estimates> {
    if ys.is_empty() {
        return Err(Error::InvalidArgument("measurement sequence is empty".into()));
    }
    let model = augment(sys, pseudo_variance)?;
    let delayed = sys.is_zero_feedthrough();
    let n = model.n;
    let u_at = |t: usize| known_inputs.map(|u| &u[t]);
    if let Some(u) = known_inputs {
        if u.len() < ys.len() {
            return Err(Error::InvalidArgument(format!(
                "known input has {} samples, need {}",
                u.len(),
                ys.len()
            )));
        }
    }
    let prior = akf_prior(&model, &init.x0, &init.p0)?;
    let mut st = akf_first(&model, &prior, &ys[0], u_at(0)).map_err(|e| Error::at_step(0, e))?;
    let mut est = Estimates {
        variant: None,
        delayed_input: delayed,
        xhat: Vec::with_capacity(ys.len()),
        dhat: Vec::with_capacity(ys.len()),
        p: Vec::with_capacity(ys.len()),
        innovation: Vec::with_capacity(ys.len()),
        gains: None,
    };
    let push = |est: &mut Estimates, st: &AkfState| {
        est.xhat.push(st.xhat(n));
        est.dhat
            .push(if delayed { st.dhat_smoothed.clone() } else { st.dhat(n) });
        est.p.push(st.px(n));
        est.innovation.push(st.innovation.clone());
    };
    push(&mut est, &st);
    for (t, y) in ys.iter().enumerate().skip(1) {
        st = akf_step_with_input(&st, &model, y, u_at(t - 1), u_at(t)).map_err(|e| Error::at_step(t, e))?;
        push(&mut est, &st);
    }
    Ok(est)
}

/// `max_{t >= burn_in} |xhat_sise - xhat_akf|_inf / (1 + |xhat_sise|_inf)` on
/// the measurements of `trajectory`, both filters started from the diffuse
/// default. Refuses when SISE is not stable for `sys`.
pub fn equivalence_gap(
    sys: &LinearSystem,
    trajectory: &Trajectory,
    pseudo_variance: f64,
    burn_in: usize,
) -> Result<f64> {
    let report = verdict(sys)?;
    if report.verdict != Verdict::Stable {
        return Err(Error::UnstableSise(format!(
            "verdict {:?}, spectral radius {:.6}",
            report.verdict, report.spectral_radius
        )));
    }
    let ys = &trajectory.measurements;
    if burn_in >= ys.len() {
        return Err(Error::InvalidArgument(format!(
            "burn-in {burn_in} exceeds the {} samples",
            ys.len()
        )));
    }
    let init = FilterInit::diffuse(sys.n());
    let sise = run_filter(sys, ys, &init, &RunOptions::default())?;
    let akf = run_akf(sys, ys, &init, pseudo_variance, None)?;
    Ok(sise
        .xhat
        .iter()
        .zip(&akf.xhat)
        .skip(burn_in)
        .map(|(s, a)| linalg::max_abs_vec(&(s - a)) / (1.0 + linalg::max_abs_vec(s)))
        .fold(0.0, f64::max))
}
