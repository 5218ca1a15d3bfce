//! SISE filters: zero feedthrough (general and square) and full-rank
//! feedthrough (general and square), plus a runner over constant or
//! time-varying systems.
//!
//! Zero feedthrough emits `(xhat_{t|t}, dhat_{t-1|t})`; feedthrough emits
//! `(xhat_{t|t}, dhat_{t|t})`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, check_psd, lu_solve, numerical_rank, spd_solve, symmetrize, Mat, Vector};
use crate::model::LinearSystem;

/// Default diffuse initial covariance scale.
pub const DEFAULT_P0_SCALE: f64 = 1e3;

/// Source of the plant matrices at each time index.
pub trait SystemSchedule: Sync {
    fn at(&self, t: usize) -> &LinearSystem;

    /// Number of leading indices that cover every distinct system, when known.
    /// Per-step checks stop after this many steps.
    fn distinct_prefix(&self) -> Option<usize> {
        None
    }
}

impl SystemSchedule for LinearSystem {
    fn at(&self, _t: usize) -> &LinearSystem {
        self
    }

    fn distinct_prefix(&self) -> Option<usize> {
        Some(1)
    }
}

/// Cycles through a fixed list of systems: `at(t) = systems[t % len]`.
#[derive(Debug, Clone)]
pub struct PeriodicSchedule {
    systems: Vec<LinearSystem>,
}

impl PeriodicSchedule {
    pub fn new(systems: Vec<LinearSystem>) -> Result<Self> {
        let first = systems
            .first()
            .ok_or_else(|| Error::InvalidArgument("periodic schedule needs at least one system".into()))?;
        let dims = (first.n(), first.m(), first.p(), first.known_dim());
        for s in &systems {
            s.check_shapes()?;
            if (s.n(), s.m(), s.p(), s.known_dim()) != dims {
                return Err(Error::Shape("all systems in a schedule must share dimensions".into()));
            }
        }
        Ok(PeriodicSchedule { systems })
    }

    pub fn period(&self) -> usize {
        self.systems.len()
    }
}

impl SystemSchedule for PeriodicSchedule {
    fn at(&self, t: usize) -> &LinearSystem {
        &self.systems[t % self.systems.len()]
    }

    fn distinct_prefix(&self) -> Option<usize> {
        Some(self.systems.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ZeroFeedthrough,
    ZeroFeedthroughSquare,
    Feedthrough,
    FeedthroughSquare,
}

impl Variant {
    /// Picks the filter that the structure of `sys` admits. Square systems get
    /// the fast path.
    pub fn select(sys: &LinearSystem) -> Result<Variant> {
        sys.check_shapes()?;
        let (m, p) = (sys.m(), sys.p());
        let rank_h = sys.feedthrough_rank();
        if rank_h == 0 {
            let rank_cg = numerical_rank(&sys.cg()).rank;
            if rank_cg < m {
                return Err(Error::Assumption {
                    assumption: "rank CG = m",
                    detail: format!("H = 0 and rank CG = {rank_cg} < m = {m}"),
                });
            }
            Ok(if p == m {
                Variant::ZeroFeedthroughSquare
            } else {
                Variant::ZeroFeedthrough
            })
        } else if rank_h == m {
            Ok(if p == m {
                Variant::FeedthroughSquare
            } else {
                Variant::Feedthrough
            })
        } else {
            Err(Error::NoApplicableVariant(format!(
                "rank H = {rank_h} with 0 < rank H < m = {m}; only the stability test is available for this case"
            )))
        }
    }

    pub fn is_zero_feedthrough(self) -> bool {
        matches!(self, Variant::ZeroFeedthrough | Variant::ZeroFeedthroughSquare)
    }

    pub fn is_square(self) -> bool {
        matches!(self, Variant::ZeroFeedthroughSquare | Variant::FeedthroughSquare)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::ZeroFeedthrough => "zero_feedthrough",
            Variant::ZeroFeedthroughSquare => "zero_feedthrough_square",
            Variant::Feedthrough => "feedthrough",
            Variant::FeedthroughSquare => "feedthrough_square",
        }
    }
}

/// Zero-feedthrough filter state after processing `y_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZfFilterState {
    pub t: usize,
    /// `xhat_{t|t}`.
    pub xhat: Vector,
    /// Filtered covariance `P_t`.
    pub p: Mat,
    /// Predicted covariance `X_t = A P_{t-1} A^T + Q`.
    pub x: Mat,
    pub k: Mat,
    pub m: Mat,
    /// `dhat_{t-1|t}`.
    pub dhat: Vector,
    /// `y_t - C A xhat_{t-1|t-1} - C G dhat_{t-1|t}` (without known-input terms).
    pub innovation: Vector,
}

/// Feedthrough filter state after processing `y_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FtFilterState {
    pub t: usize,
    /// `xhat_{t|t-1}`.
    pub xhat_pred: Vector,
    /// `xhat_{t|t}`.
    pub xhat: Vector,
    /// `dhat_{t|t}`.
    pub dhat: Vector,
    pub px: Mat,
    pub pd: Mat,
    pub pxd: Mat,
    /// Predicted state covariance `P^x_{t|t-1}`.
    pub px_pred: Mat,
    pub rtilde: Mat,
    pub k: Mat,
    pub m: Mat,
    pub innovation: Vector,
}

fn check_vec(v: &Vector, len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(Error::Shape(format!("{what} has length {}, expected {len}", v.len())));
    }
    Ok(())
}

fn check_cov(c: &Mat, dim: usize, what: &str) -> Result<()> {
    if c.shape() != (dim, dim) {
        return Err(Error::Shape(format!(
            "{what} is {}x{}, expected {dim}x{dim}",
            c.nrows(),
            c.ncols()
        )));
    }
    check_psd(c, what)
}

fn require_zf(sys: &LinearSystem) -> Result<()> {
    let v = Variant::select(sys)?;
    if !v.is_zero_feedthrough() {
        return Err(Error::Assumption {
            assumption: "H = 0",
            detail: "zero-feedthrough filter needs H = 0".into(),
        });
    }
    Ok(())
}

fn require_ft(sys: &LinearSystem) -> Result<()> {
    let v = Variant::select(sys)?;
    if v.is_zero_feedthrough() {
        return Err(Error::Assumption {
            assumption: "rank H = m",
            detail: "feedthrough filter needs rank H = m, got H = 0".into(),
        });
    }
    Ok(())
}

fn require_square(sys: &LinearSystem) -> Result<()> {
    if sys.p() != sys.m() {
        return Err(Error::Shape(format!(
            "square fast path needs p = m (p={}, m={})",
            sys.p(),
            sys.m()
        )));
    }
    Ok(())
}

/// Initial state representing `xhat_{0|0} = x0` with covariance `P0`.
pub fn zf_init(sys: &LinearSystem, x0: &Vector, p0: &Mat) -> Result<ZfFilterState> {
    require_zf(sys)?;
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    check_vec(x0, n, "x0")?;
    check_cov(p0, n, "P0")?;
    Ok(ZfFilterState {
        t: 0,
        xhat: x0.clone(),
        p: symmetrize(p0),
        x: symmetrize(p0),
        k: Mat::zeros(n, p),
        m: Mat::zeros(m, p),
        dhat: Vector::zeros(m),
        innovation: Vector::zeros(p),
    })
}

/// Covariance and gain part of one zero-feedthrough step. It does not depend
/// on the measurement, so it can be shared across runs on the same system.
#[derive(Debug, Clone, PartialEq)]
pub struct ZfGains {
    pub x: Mat,
    pub k: Mat,
    pub m: Mat,
    pub p: Mat,
}

/// Gains for the step that maps `P_{t-1}` to `P_t`, with dynamics taken from
/// `dynamics` (the system at `t-1`) and the output map from `output` (the
/// system at `t`).
pub fn zf_gains(p_prev: &Mat, dynamics: &LinearSystem, output: &LinearSystem) -> Result<ZfGains> {
    let n = dynamics.n();
    let (a, g, q) = (&dynamics.a, &dynamics.g, &dynamics.q);
    let (c, r) = (&output.c, &output.r);
    let x = symmetrize(&(a * p_prev * a.transpose() + q));
    let s = c * &x * c.transpose() + r;
    let cg = c * g;
    // S^{-1} [C X, CG]
    let sinv_cx = spd_solve(&s, &(c * &x), "C X C^T + R")?;
    let sinv_cg = spd_solve(&s, &cg, "C X C^T + R")?;
    let k = sinv_cx.transpose();
    let f = cg.transpose() * &sinv_cg;
    let m = spd_solve(&f, &sinv_cg.transpose(), "G^T C^T (C X C^T + R)^-1 C G")?;
    let i = Mat::identity(n, n);
    let i_gmc = &i - g * &m * c;
    let gm = g * &m;
    let inner = &i_gmc * &x * i_gmc.transpose() + &gm * r * gm.transpose();
    let p = symmetrize(&((&i - &k * c) * inner + &k * r * gm.transpose()));
    Ok(ZfGains { x, k, m, p })
}

/// Known-input terms entering one step.
#[derive(Debug, Clone, Copy, Default)]
pub struct KnownInputs<'a> {
    /// `u_{t-1}`, enters the state transition.
    pub prev: Option<&'a Vector>,
    /// `u_t`, enters the output.
    pub now: Option<&'a Vector>,
}

/// Measurement residual before disturbance correction,
/// `y_t - C (A xhat + B u_{t-1}) - D u_t`, and the predicted state without `G d`.
fn zf_residual(
    xhat_prev: &Vector,
    dynamics: &LinearSystem,
    output: &LinearSystem,
    y: &Vector,
    u: KnownInputs,
) -> (Vector, Vector) {
    let mut pred = &dynamics.a * xhat_prev;
    if let Some(bu) = dynamics.known_state_term(u.prev) {
        pred += bu;
    }
    let mut nu = y - &output.c * &pred;
    if let Some(du) = output.known_output_term(u.now) {
        nu -= du;
    }
    (nu, pred)
}

/// Estimate update of one zero-feedthrough step given precomputed gains.
/// Returns `(xhat_{t|t}, dhat_{t-1|t}, innovation)`.
pub fn zf_update(
    xhat_prev: &Vector,
    gains: &ZfGains,
    dynamics: &LinearSystem,
    output: &LinearSystem,
    y: &Vector,
    u: KnownInputs,
) -> (Vector, Vector, Vector) {
    let (nu, pred) = zf_residual(xhat_prev, dynamics, output, y, u);
    let dhat = &gains.m * &nu;
    let cg_d = &output.c * (&dynamics.g * &dhat);
    let innovation = &nu - cg_d;
    let xhat = pred + &dynamics.g * &dhat + &gains.k * &innovation;
    (xhat, dhat, innovation)
}

fn zf_advance(
    state: &ZfFilterState,
    dynamics: &LinearSystem,
    output: &LinearSystem,
    y: &Vector,
    u: KnownInputs,
    square: bool,
) -> Result<ZfFilterState> {
    check_vec(y, output.p(), "measurement")?;
    let gains = zf_gains(&state.p, dynamics, output)?;
    let (xhat, dhat, innovation) = if square {
        let (nu, pred) = zf_residual(&state.xhat, dynamics, output, y, u);
        let cg = &output.c * &dynamics.g;
        let dhat: Vector = lu_solve(&cg, &Mat::from_column_slice(nu.len(), 1, nu.as_slice()), "CG")?
            .column(0)
            .into();
        let innovation = &nu - &cg * &dhat;
        (pred + &dynamics.g * &dhat, dhat, innovation)
    } else {
        zf_update(&state.xhat, &gains, dynamics, output, y, u)
    };
    Ok(ZfFilterState {
        t: state.t + 1,
        xhat,
        p: gains.p,
        x: gains.x,
        k: gains.k,
        m: gains.m,
        dhat,
        innovation,
    })
}

/// One general zero-feedthrough step on a time-invariant system.
pub fn zf_step(state: &ZfFilterState, sys: &LinearSystem, y: &Vector) -> Result<ZfFilterState> {
    zf_advance(state, sys, sys, y, KnownInputs::default(), false)
}

/// One zero-feedthrough step with separate systems for the transition
/// (`dynamics`, time `t-1`) and the measurement (`output`, time `t`).
pub fn zf_step_tv(
    state: &ZfFilterState,
    dynamics: &LinearSystem,
    output: &LinearSystem,
    y: &Vector,
    u: KnownInputs,
) -> Result<ZfFilterState> {
    zf_advance(state, dynamics, output, y, u, false)
}

/// Square fast path: `dhat = (CG)^{-1}(y - C A xhat)`, `xhat = A xhat + G dhat`.
/// The covariance recursion is still carried for reporting.
pub fn zf_square_step(state: &ZfFilterState, sys: &LinearSystem, y: &Vector) -> Result<ZfFilterState> {
    require_square(sys)?;
    zf_advance(state, sys, sys, y, KnownInputs::default(), true)
}

/// How the feedthrough filter is started.
#[derive(Debug, Clone, PartialEq)]
pub enum FtStart {
    /// Prior `xhat_{0|-1} = x0` with covariance `P0`; `y_0` is the first
    /// measurement processed.
    FirstMeasurement { x0: Vector, p0: Mat },
    /// Joint filtered estimate at `t = 0`; `y_1` is the first measurement processed.
    Filtered { x0: Vector, p0: Mat, d0: Vector, pd0: Mat },
}

/// Joint filtered state `(xhat_{0|0}, dhat_{0|0})` with covariances
/// `diag(P0, Pd0)`.
pub fn ft_init(sys: &LinearSystem, x0: &Vector, p0: &Mat, d0: &Vector, pd0: &Mat) -> Result<FtFilterState> {
    require_ft(sys)?;
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    check_vec(x0, n, "x0")?;
    check_vec(d0, m, "d0")?;
    check_cov(p0, n, "P0")?;
    check_cov(pd0, m, "Pd0")?;
    Ok(FtFilterState {
        t: 0,
        xhat_pred: x0.clone(),
        xhat: x0.clone(),
        dhat: d0.clone(),
        px: symmetrize(p0),
        pd: symmetrize(pd0),
        pxd: Mat::zeros(n, m),
        px_pred: symmetrize(p0),
        rtilde: Mat::zeros(p, p),
        k: Mat::zeros(n, p),
        m: Mat::zeros(m, p),
        innovation: Vector::zeros(p),
    })
}

/// Processes `y_0` from the prior `xhat_{0|-1} = x0`, `P^x_{0|-1} = P0`.
pub fn ft_init_from_measurement(sys: &LinearSystem, x0: &Vector, p0: &Mat, y0: &Vector) -> Result<FtFilterState> {
    ft_init_from_measurement_with_input(sys, x0, p0, y0, None)
}

pub fn ft_init_from_measurement_with_input(
    sys: &LinearSystem,
    x0: &Vector,
    p0: &Mat,
    y0: &Vector,
    u0: Option<&Vector>,
) -> Result<FtFilterState> {
    require_ft(sys)?;
    check_vec(x0, sys.n(), "x0")?;
    check_cov(p0, sys.n(), "P0")?;
    check_vec(y0, sys.p(), "measurement")?;
    let gains = ft_measurement_gains(&symmetrize(p0), sys)?;
    let (xhat, dhat, innovation) = ft_update(x0, &gains, sys, y0, u0);
    Ok(FtFilterState {
        t: 0,
        xhat_pred: x0.clone(),
        xhat,
        dhat,
        px: gains.px,
        pd: gains.pd,
        pxd: gains.pxd,
        px_pred: gains.px_pred,
        rtilde: gains.rtilde,
        k: gains.k,
        m: gains.m,
        innovation,
    })
}

/// Covariance and gain part of one feedthrough step.
#[derive(Debug, Clone, PartialEq)]
pub struct FtGains {
    pub px_pred: Mat,
    pub rtilde: Mat,
    pub k: Mat,
    pub m: Mat,
    pub px: Mat,
    pub pd: Mat,
    pub pxd: Mat,
}

/// Joint covariance propagation `[A G] [[Px, Pxd], [Pdx, Pd]] [A G]^T + Q`.
pub fn ft_predict_cov(px: &Mat, pxd: &Mat, pd: &Mat, dynamics: &LinearSystem) -> Mat {
    let (a, g) = (&dynamics.a, &dynamics.g);
    let cross = a * pxd * g.transpose();
    symmetrize(&(a * px * a.transpose() + &cross + cross.transpose() + g * pd * g.transpose() + &dynamics.q))
}

/// Measurement part of the feedthrough step from a predicted covariance.
pub fn ft_measurement_gains(px_pred: &Mat, output: &LinearSystem) -> Result<FtGains> {
    let (c, h, r) = (&output.c, &output.h, &output.r);
    let rtilde = symmetrize(&(c * px_pred * c.transpose() + r));
    let rinv_h = spd_solve(&rtilde, h, "C P C^T + R")?;
    let info = symmetrize(&(h.transpose() * &rinv_h));
    let pd = symmetrize(&spd_solve(
        &info,
        &Mat::identity(h.ncols(), h.ncols()),
        "H^T Rtilde^-1 H",
    )?);
    let m = &pd * rinv_h.transpose();
    let k = spd_solve(&rtilde, &(c * px_pred), "C P C^T + R")?.transpose();
    let hpdh = h * &pd * h.transpose();
    let px = symmetrize(&(px_pred - &k * (&rtilde - &hpdh) * k.transpose()));
    let pxd = -(&k * h * &pd);
    Ok(FtGains {
        px_pred: px_pred.clone(),
        rtilde,
        k,
        m,
        px,
        pd,
        pxd,
    })
}

/// Estimate update from the prediction `xhat_{t|t-1}`.
/// Returns `(xhat_{t|t}, dhat_{t|t}, innovation)`.
pub fn ft_update(
    xhat_pred: &Vector,
    gains: &FtGains,
    output: &LinearSystem,
    y: &Vector,
    u_now: Option<&Vector>,
) -> (Vector, Vector, Vector) {
    let mut nu = y - &output.c * xhat_pred;
    if let Some(du) = output.known_output_term(u_now) {
        nu -= du;
    }
    let dhat = &gains.m * &nu;
    let innovation = &nu - &output.h * &dhat;
    let xhat = xhat_pred + &gains.k * &innovation;
    (xhat, dhat, innovation)
}

/// `xhat_{t|t-1} = A xhat_{t-1|t-1} + B u_{t-1} + G dhat_{t-1|t-1}`.
pub fn ft_predict(xhat: &Vector, dhat: &Vector, dynamics: &LinearSystem, u_prev: Option<&Vector>) -> Vector {
    let mut pred = &dynamics.a * xhat + &dynamics.g * dhat;
    if let Some(bu) = dynamics.known_state_term(u_prev) {
        pred += bu;
    }
    pred
}

fn ft_advance(
    state: &FtFilterState,
    dynamics: &LinearSystem,
    output: &LinearSystem,
    y: &Vector,
    u: KnownInputs,
    square: bool,
) -> Result<FtFilterState> {
    check_vec(y, output.p(), "measurement")?;
    let xhat_pred = ft_predict(&state.xhat, &state.dhat, dynamics, u.prev);
    let px_pred = ft_predict_cov(&state.px, &state.pxd, &state.pd, dynamics);
    let gains = ft_measurement_gains(&px_pred, output)?;
    let (xhat, dhat, innovation) = if square {
        let mut nu = y - &output.c * &xhat_pred;
        if let Some(du) = output.known_output_term(u.now) {
            nu -= du;
        }
        let dhat: Vector = lu_solve(&output.h, &Mat::from_column_slice(nu.len(), 1, nu.as_slice()), "H")?
            .column(0)
            .into();
        let innovation = &nu - &output.h * &dhat;
        (xhat_pred.clone(), dhat, innovation)
    } else {
        ft_update(&xhat_pred, &gains, output, y, u.now)
    };
    Ok(FtFilterState {
        t: state.t + 1,
        xhat_pred,
        xhat,
        dhat,
        px: gains.px,
        pd: gains.pd,
        pxd: gains.pxd,
        px_pred: gains.px_pred,
        rtilde: gains.rtilde,
        k: gains.k,
        m: gains.m,
        innovation,
    })
}

/// One general feedthrough step on a time-invariant system.
pub fn ft_step(state: &FtFilterState, sys: &LinearSystem, y: &Vector) -> Result<FtFilterState> {
    ft_advance(state, sys, sys, y, KnownInputs::default(), false)
}

pub fn ft_step_tv(
    state: &FtFilterState,
    dynamics: &LinearSystem,
    output: &LinearSystem,
    y: &Vector,
    u: KnownInputs,
) -> Result<FtFilterState> {
    ft_advance(state, dynamics, output, y, u, false)
}

/// Square fast path: `dhat = H^{-1}(y - C xhat_{t|t-1})`, `xhat_{t|t} = xhat_{t|t-1}`.
pub fn ft_square_step(state: &FtFilterState, sys: &LinearSystem, y: &Vector) -> Result<FtFilterState> {
    require_square(sys)?;
    ft_advance(state, sys, sys, y, KnownInputs::default(), true)
}

/// Filter initialization shared by the runners.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterInit {
    pub x0: Vector,
    pub p0: Mat,
    /// Disturbance prior, used only by feedthrough variants with a filtered start.
    pub d0: Option<(Vector, Mat)>,
}

impl FilterInit {
    /// `x0 = 0`, `P0 = 1e3 I`, `d0 = 0`.
    pub fn diffuse(n: usize) -> Self {
        FilterInit {
            x0: Vector::zeros(n),
            p0: Mat::identity(n, n) * DEFAULT_P0_SCALE,
            d0: None,
        }
    }

    pub fn with_state(x0: Vector, p0: Mat) -> Self {
        FilterInit { x0, p0, d0: None }
    }
}

/// Gain record of one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepGains {
    pub t: usize,
    pub k: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    /// Predicted covariance (`X_t` or `P^x_{t|t-1}`).
    pub x: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
}

pub(crate) fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Estimate history, one row per time index `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    /// SISE variant that produced the rows (`None` for other engines).
    pub variant: Option<Variant>,
    /// Disturbance column holds `dhat_{t-1|t}` rather than `dhat_{t|t}`.
    pub delayed_input: bool,
    pub xhat: Vec<Vector>,
    /// `dhat_{t-1|t}` for zero feedthrough (zero at `t = 0`), `dhat_{t|t}` otherwise.
    pub dhat: Vec<Vector>,
    /// `P_t` or `P^x_{t|t}`.
    pub p: Vec<Mat>,
    pub innovation: Vec<Vector>,
    pub gains: Option<Vec<StepGains>>,
}

impl Estimates {
    pub fn len(&self) -> usize {
        self.xhat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xhat.is_empty()
    }

    pub fn trace_p(&self, t: usize) -> f64 {
        self.p[t].trace()
    }

    /// Root mean square of all innovation entries over the run.
    pub fn innovation_rms(&self) -> f64 {
        let (sum, count) = self
            .innovation
            .iter()
            .fold((0.0, 0usize), |(s, c), v| (s + v.norm_squared(), c + v.len()));
        if count == 0 {
            0.0
        } else {
            (sum / count as f64).sqrt()
        }
    }

    pub fn max_innovation(&self) -> f64 {
        self.innovation.iter().map(linalg::max_abs_vec).fold(0.0, f64::max)
    }
}

/// Options of [`run_filter`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Forces a variant instead of selecting from the system at `t = 0`.
    pub variant: Option<Variant>,
    /// Known inputs `u_0 .. u_T`.
    pub known_inputs: Option<Vec<Vector>>,
    pub record_gains: bool,
    /// Feedthrough start; defaults to processing `y_0` from the prior.
    pub ft_filtered_start: bool,
}

fn check_schedule_step<S: SystemSchedule + ?Sized>(schedule: &S, t: usize, variant: Variant) -> Result<()> {
    if schedule.distinct_prefix().is_some_and(|k| t >= k) {
        return Ok(());
    }
    let sys = schedule.at(t);
    let v = Variant::select(sys)?;
    if v.is_zero_feedthrough() != variant.is_zero_feedthrough() || (variant.is_square() && !v.is_square()) {
        return Err(Error::Assumption {
            assumption: if variant.is_zero_feedthrough() {
                "rank CG = m"
            } else {
                "rank H = m"
            },
            detail: format!("system at this step admits {} not {}", v.name(), variant.name()),
        });
    }
    Ok(())
}

/// Runs a SISE filter over `ys = y_0 .. y_T`.
///
/// Zero-feedthrough variants start from `xhat_{0|0} = x0` and process
/// `y_1 .. y_T`. Feedthrough variants process `y_0 .. y_T` from the prior
/// `xhat_{0|-1} = x0` (or `y_1 .. y_T` from a filtered start when
/// `ft_filtered_start` is set). Step `t` uses the transition of the system at
/// `t-1` and the output map of the system at `t`.
pub fn run_filter<S: SystemSchedule + ?Sized>(
    schedule: &S,
    ys: &[Vector],
    init: &FilterInit,
    opts: &RunOptions,
) -> Result<Estimates> {
    if ys.is_empty() {
        return Err(Error::InvalidArgument("measurement sequence is empty".into()));
    }
    let sys0 = schedule.at(0);
    let variant = match opts.variant {
        Some(v) => v,
        None => Variant::select(sys0)?,
    };
    let horizon = ys.len() - 1;
    if let Some(u) = &opts.known_inputs {
        if u.len() < ys.len() {
            return Err(Error::InvalidArgument(format!(
                "known input has {} samples, need {}",
                u.len(),
                ys.len()
            )));
        }
        if sys0.known.is_none() {
            return Err(Error::InvalidArgument(
                "known input given but system has no B, D".into(),
            ));
        }
    }
    let u_at = |t: usize| opts.known_inputs.as_ref().map(|u| &u[t]);
    let record = |t: usize, k: &Mat, m: &Mat, x: &Mat, p: &Mat| StepGains {
        t,
        k: rows(k),
        m: rows(m),
        x: rows(x),
        p: rows(p),
    };
    let mut est = Estimates {
        variant: Some(variant),
        delayed_input: variant.is_zero_feedthrough(),
        xhat: Vec::with_capacity(ys.len()),
        dhat: Vec::with_capacity(ys.len()),
        p: Vec::with_capacity(ys.len()),
        innovation: Vec::with_capacity(ys.len()),
        gains: opts.record_gains.then(Vec::new),
    };
    let wrap = |t: usize| move |e: Error| Error::at_step(t, e);

    if variant.is_zero_feedthrough() {
        check_schedule_step(schedule, 0, variant).map_err(wrap(0))?;
        let mut st = zf_init(sys0, &init.x0, &init.p0).map_err(wrap(0))?;
        est.xhat.push(st.xhat.clone());
        est.dhat.push(st.dhat.clone());
        est.p.push(st.p.clone());
        est.innovation.push(Vector::zeros(sys0.p()));
        if let Some(g) = est.gains.as_mut() {
            g.push(record(0, &st.k, &st.m, &st.x, &st.p));
        }
        for (t, y) in ys.iter().enumerate().take(horizon + 1).skip(1) {
            check_schedule_step(schedule, t, variant).map_err(wrap(t))?;
            let u = KnownInputs {
                prev: u_at(t - 1),
                now: u_at(t),
            };
            st = zf_advance(&st, schedule.at(t - 1), schedule.at(t), y, u, variant.is_square()).map_err(wrap(t))?;
            est.xhat.push(st.xhat.clone());
            est.dhat.push(st.dhat.clone());
            est.p.push(st.p.clone());
            est.innovation.push(st.innovation.clone());
            if let Some(g) = est.gains.as_mut() {
                g.push(record(t, &st.k, &st.m, &st.x, &st.p));
            }
        }
    } else {
        check_schedule_step(schedule, 0, variant).map_err(wrap(0))?;
        let mut st = if opts.ft_filtered_start {
            let (d0, pd0) = init.d0.clone().unwrap_or_else(|| {
                (
                    Vector::zeros(sys0.m()),
                    Mat::identity(sys0.m(), sys0.m()) * DEFAULT_P0_SCALE,
                )
            });
            ft_init(sys0, &init.x0, &init.p0, &d0, &pd0).map_err(wrap(0))?
        } else {
            ft_init_from_measurement_with_input(sys0, &init.x0, &init.p0, &ys[0], u_at(0)).map_err(wrap(0))?
        };
        est.xhat.push(st.xhat.clone());
        est.dhat.push(st.dhat.clone());
        est.p.push(st.px.clone());
        est.innovation.push(st.innovation.clone());
        if let Some(g) = est.gains.as_mut() {
            g.push(record(0, &st.k, &st.m, &st.px_pred, &st.px));
        }
        for (t, y) in ys.iter().enumerate().take(horizon + 1).skip(1) {
            check_schedule_step(schedule, t, variant).map_err(wrap(t))?;
            let u = KnownInputs {
                prev: u_at(t - 1),
                now: u_at(t),
            };
            st = ft_advance(&st, schedule.at(t - 1), schedule.at(t), y, u, variant.is_square()).map_err(wrap(t))?;
            est.xhat.push(st.xhat.clone());
            est.dhat.push(st.dhat.clone());
            est.p.push(st.px.clone());
            est.innovation.push(st.innovation.clone());
            if let Some(g) = est.gains.as_mut() {
                g.push(record(t, &st.k, &st.m, &st.px_pred, &st.px));
            }
        }
    }
    Ok(est)
}
