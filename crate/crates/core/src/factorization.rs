//! Inner-outer factorization `T = T_o T_i` of the square disturbance-to-output
//! map, SISE on the outer factor, and offline recovery of the original
//! disturbance through the inner factor.
//!
//! The outer factor keeps the plant's `A` and `C` and replaces `G, H` by
//! `Gc, Hc`. It comes from the innovations form of `y = T d` with unit white
//! `d`: for the Riccati solution `X`,
//!
//! ```text
//! Re = C' X C'^T + H' H'^T,  K = (A X C'^T + G H'^T) Re^{-1}
//! Gc = K Re^{1/2},           Hc = Re^{1/2}
//! ```
//!
//! With `H = 0` the same construction runs on `z T(z)` (`C' = C A`,
//! `H' = C G`), and the delay stays in the outer factor (`Hc = 0`).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, lu_solve, spectral_radius, sqrtm_spd, to_complex, CMat, Mat, Vector};
use crate::model::LinearSystem;
use crate::par;
use crate::singular_kf::{run_akf, DEFAULT_PSEUDO_VARIANCE};
use crate::sise::{run_filter, Estimates, FilterInit, RunOptions};
use crate::stability::{
    classify, iterate_riccati, transmission_zeros_square, verdict, RdeOptions, RdeStatus, RiccatiProblem, Verdict,
    UNIT_CIRCLE_MARGIN,
};

/// Default number of frequency points used by the diagnostics.
pub const DEFAULT_GRID: usize = 512;

/// Discrete-time realization `D + C (zI - A)^{-1} B`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl StateSpace {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || c.ncols() != n || d.shape() != (c.nrows(), b.ncols()) {
            return Err(Error::Shape(format!(
                "inconsistent realization: A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        Ok(StateSpace { a, b, c, d })
    }

    /// Static gain `d` with no states.
    pub fn constant(d: Mat) -> Self {
        StateSpace {
            a: Mat::zeros(0, 0),
            b: Mat::zeros(0, d.ncols()),
            c: Mat::zeros(d.nrows(), 0),
            d,
        }
    }

    /// Disturbance-to-output map of a plant.
    pub fn of_system(sys: &LinearSystem) -> Self {
        StateSpace {
            a: sys.a.clone(),
            b: sys.g.clone(),
            c: sys.c.clone(),
            d: sys.h.clone(),
        }
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn eval(&self, z: Complex64) -> CMat {
        let n = self.a.nrows();
        let d = to_complex(&self.d);
        if n == 0 {
            return d;
        }
        let shifted = CMat::identity(n, n) * z - to_complex(&self.a);
        match shifted.lu().solve(&to_complex(&self.b)) {
            Some(x) => d + to_complex(&self.c) * x,
            None => CMat::from_element(self.d.nrows(), self.d.ncols(), Complex64::new(f64::INFINITY, 0.0)),
        }
    }

    /// Response to `u_0 .. u_{N-1}` from zero initial state.
    pub fn simulate(&self, u: &[Vector]) -> Vec<Vector> {
        let mut x = Vector::zeros(self.a.nrows());
        u.iter()
            .map(|ut| {
                let y = &self.c * &x + &self.d * ut;
                x = &self.a * &x + &self.b * ut;
                y
            })
            .collect()
    }

    /// Packs the realization as a plant with `Q = 0` and `R = I`.
    pub fn to_system(&self) -> Result<LinearSystem> {
        let (n, p) = (self.a.nrows(), self.c.nrows());
        LinearSystem::new(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.d.clone(),
            Mat::zeros(n, n),
            Mat::identity(p, p),
        )
    }
}

/// `e^{j w_k}` for `w_k = 2 pi k / N`, `k = 0 .. N-1`.
pub fn unit_circle_grid(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64))
        .collect()
}

fn spectral_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().max()
}

fn max_abs_c(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest `|| T(e^{jw})^* T(e^{jw}) - I ||_2` over `grid_size` frequencies.
pub fn allpass_deviation(realization: &StateSpace, grid_size: usize) -> f64 {
    let grid = unit_circle_grid(grid_size.max(1));
    let m = realization.d.ncols();
    par::map_indexed(grid.len(), |k| {
        let t = realization.eval(grid[k]);
        spectral_norm(&(t.adjoint() * &t - CMat::identity(m, m)))
    })
    .into_iter()
    .fold(0.0, f64::max)
}

/// Largest entrywise `|T - T_o T_i|` over `grid_size` frequencies.
pub fn product_mismatch(t: &StateSpace, outer: &StateSpace, inner: &StateSpace, grid_size: usize) -> f64 {
    let grid = unit_circle_grid(grid_size.max(1));
    par::map_indexed(grid.len(), |k| {
        let z = grid[k];
        max_abs_c(&(t.eval(z) - outer.eval(z) * inner.eval(z)))
    })
    .into_iter()
    .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorRoute {
    /// Invertible `H`: factor `T` directly.
    Direct,
    /// `H = 0`, invertible `CG`: factor `z T(z)` and keep the delay in the outer factor.
    Delayed,
}

#[derive(Debug, Clone, Serialize)]
pub struct FactorDiagnostics {
    pub route: FactorRoute,
    pub grid_size: usize,
    pub allpass_deviation: f64,
    pub product_mismatch: f64,
    /// Finite transmission zeros of the outer factor as `[re, im]`.
    pub outer_zeros: Vec<[f64; 2]>,
    pub outer_zero_radius: f64,
    pub riccati_iterations: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Factorization {
    /// Plant with `G, H` replaced by the outer factor's `Gc, Hc`; `A`, `C`,
    /// `Q`, `R` and any known-input matrices are unchanged.
    pub outer: LinearSystem,
    pub inner: StateSpace,
    pub diagnostics: FactorDiagnostics,
}

impl Factorization {
    pub fn outer_realization(&self) -> StateSpace {
        StateSpace::of_system(&self.outer)
    }
}

/// Inner-outer factorization of a square plant with Schur-stable `A`.
pub fn inner_outer(sys: &LinearSystem) -> Result<Factorization> {
    inner_outer_with(sys, DEFAULT_GRID, &RdeOptions::default())
}

pub fn inner_outer_with(sys: &LinearSystem, grid_size: usize, opts: &RdeOptions) -> Result<Factorization> {
    sys.check_shapes()?;
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    if p != m {
        return Err(Error::Unsupported(format!(
            "inner-outer factorization is implemented for square maps only (p={p}, m={m})"
        )));
    }
    let rho_a = spectral_radius(&sys.a);
    if rho_a >= 1.0 - UNIT_CIRCLE_MARGIN {
        return Err(Error::Assumption {
            assumption: "A Schur",
            detail: format!("spectral radius of A is {rho_a:.6}"),
        });
    }
    let rank_h = sys.feedthrough_rank();
    let (route, c_f, h_f) = if rank_h == 0 {
        (FactorRoute::Delayed, &sys.c * &sys.a, sys.cg())
    } else if rank_h == m {
        (FactorRoute::Direct, sys.c.clone(), sys.h.clone())
    } else {
        return Err(Error::NoApplicableVariant(format!(
            "factorization needs H = 0 or invertible H (rank H = {rank_h}, m = {m})"
        )));
    };

    // Zeros of the factored map: A - G H'^{-1} C'.
    let h_inv_c = lu_solve(&h_f, &c_f, "feedthrough of the factored map")?;
    let abar = &sys.a - &sys.g * &h_inv_c;
    let zeros = linalg::eigenvalues(&abar);
    if let Some(z) = zeros.iter().find(|z| (z.norm() - 1.0).abs() <= 1e-8) {
        return Err(Error::Marginal(format!("zero at {:.6}{:+.6}i", z.re, z.im)));
    }

    let rf = &h_f * h_f.transpose();
    let problem = RiccatiProblem {
        a: abar,
        c: c_f.clone(),
        q: Mat::zeros(n, n),
        r: rf.clone(),
    };
    let sol = iterate_riccati(&problem, &Mat::identity(n, n), opts)?;
    if !sol.converged() {
        return Err(Error::NonConvergent(format!(
            "spectral-factor Riccati iteration {:?} after {} iterations",
            sol.status, sol.iterations
        )));
    }
    // The step-size test leaves an error in X of about tol / (1 - rho^2), and
    // the grid response near a pole at radius rho amplifies it by another
    // 1 / (1 - rho)^2. Keep iterating toward tol * (1 - rho)^2; stopping at
    // the rounding floor (iteration cap) still leaves the better iterate.
    let rho = sol.closed_loop_radius;
    let mut iterations = sol.iterations;
    let mut x = sol.x;
    if rho.is_finite() && rho > 0.5 {
        let tight = RdeOptions {
            tol: (opts.tol * (1.0 - rho).powi(2)).max(1e-16),
            max_iter: opts.max_iter.min(10 * iterations + 1000),
            ..*opts
        };
        let polished = iterate_riccati(&problem, &x, &tight)?;
        iterations += polished.iterations;
        if matches!(polished.status, RdeStatus::Converged | RdeStatus::MaxIterations) {
            x = polished.x;
        }
    }
    let re = linalg::symmetrize(&(&c_f * &x * c_f.transpose() + &rf));
    let (re_half, re_inv_half) = sqrtm_spd(&re, "innovation covariance")?;
    let k = linalg::spd_solve(
        &re,
        &(&c_f * &x * sys.a.transpose() + &h_f * sys.g.transpose()),
        "innovation covariance",
    )?
    .transpose();
    let g_outer = &k * &re_half;
    let h_outer = match route {
        FactorRoute::Direct => re_half.clone(),
        FactorRoute::Delayed => Mat::zeros(p, m),
    };
    let inner = StateSpace::new(
        &sys.a - &k * &c_f,
        &sys.g - &k * &h_f,
        &re_inv_half * &c_f,
        &re_inv_half * &h_f,
    )?;

    let mut outer = sys.clone();
    outer.g = g_outer;
    outer.h = h_outer;

    let outer_zeros = transmission_zeros_square(&outer)?;
    let outer_zero_radius = outer_zeros.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let t = StateSpace::of_system(sys);
    let outer_ss = StateSpace::of_system(&outer);
    let mut notes = Vec::new();
    if route == FactorRoute::Delayed {
        notes.push("H = 0: factored z T(z); the one-step delay stays in the outer factor (Hc = 0)".into());
    }
    if linalg::max_abs(&inner.b) <= 1e-12 * (1.0 + linalg::max_abs(&sys.g)) {
        notes.push("plant is already outer; inner factor is a constant orthogonal matrix".into());
    }
    let diagnostics = FactorDiagnostics {
        route,
        grid_size,
        allpass_deviation: allpass_deviation(&inner, grid_size),
        product_mismatch: product_mismatch(&t, &outer_ss, &inner, grid_size),
        outer_zeros: outer_zeros.iter().map(|z| [z.re, z.im]).collect(),
        outer_zero_radius,
        riccati_iterations: iterations,
        notes,
    };
    Ok(Factorization {
        outer,
        inner,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoverMode {
    /// Whole interval available; inversion runs backwards in time.
    FixedInterval,
    /// Sample-by-sample; not possible for a maximum-phase inverse.
    Streaming,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredInput {
    pub d: Vec<Vector>,
    /// Number of trailing samples affected by truncating the reverse-time
    /// recursion at the end of the interval (error below about `1e-8` relative
    /// before that).
    pub edge: usize,
}

/// Samples at the end of an interval where the reverse-time inverse of a
/// realization with spectral radius `rho` has not settled to `1e-8`.
pub fn settling_length(inner: &StateSpace) -> usize {
    let n = inner.states();
    if n == 0 {
        return 0;
    }
    let rho = spectral_radius(&inner.a);
    if rho <= 1e-12 {
        return n;
    }
    ((1e-8f64).ln() / rho.ln()).ceil().max(1.0) as usize
}

/// Applies the inverse of the inner factor (its para-Hermitian conjugate)
/// anti-causally:
///
/// ```text
/// eta_{t-1} = A_i^T eta_t + C_i^T dcheck_t,   d_t = B_i^T eta_t + D_i^T dcheck_t
/// ```
///
/// from `eta_{N-1} = 0`.
pub fn recover_d(dcheck: &[Vector], inner: &StateSpace, mode: RecoverMode) -> Result<RecoveredInput> {
    if mode == RecoverMode::Streaming {
        return Err(Error::Unsupported(
            "the inverse of the inner factor is anti-causal; recover_d runs on a fixed interval only".into(),
        ));
    }
    let m = inner.d.ncols();
    if let Some(v) = dcheck.iter().find(|v| v.len() != inner.d.nrows()) {
        return Err(Error::Shape(format!(
            "dcheck sample has length {}, expected {}",
            v.len(),
            inner.d.nrows()
        )));
    }
    let (at, bt, ct, dt) = (
        inner.a.transpose(),
        inner.b.transpose(),
        inner.c.transpose(),
        inner.d.transpose(),
    );
    let mut eta = Vector::zeros(inner.states());
    let mut d = vec![Vector::zeros(m); dcheck.len()];
    for t in (0..dcheck.len()).rev() {
        d[t] = &bt * &eta + &dt * &dcheck[t];
        eta = &at * &eta + &ct * &dcheck[t];
    }
    Ok(RecoveredInput {
        d,
        edge: settling_length(inner).min(dcheck.len()),
    })
}

/// Rebuilds the plant state from the outer-factor state and the recovered
/// disturbance: `x_t = x'_t + xi_t` with `xi_{t+1} = A_i xi_t + B_i d_t`,
/// `xi_0 = 0`.
pub fn reconstruct_plant_state(outer_states: &[Vector], d: &[Vector], inner: &StateSpace) -> Vec<Vector> {
    let mut xi = Vector::zeros(inner.states());
    outer_states
        .iter()
        .enumerate()
        .map(|(t, xo)| {
            let x = xo + &xi;
            if let Some(dt) = d.get(t) {
                xi = &inner.a * &xi + &inner.b * dt;
            }
            x
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineEngine {
    /// SISE on the outer factor, then offline inversion of the inner factor.
    OuterSise,
    /// Plain SISE (non-square plant with a stable verdict).
    PlainSise,
    /// Augmented Kalman filter on the plant (non-square plant, SISE not stable).
    AugmentedKf,
}

#[derive(Debug, Clone)]
pub struct PipelineEstimates {
    pub engine: PipelineEngine,
    /// Rows refer to the plant. With `OuterSise`, `xhat` and `dhat` come from
    /// offline reconstruction and the last `edge` rows are less accurate.
    pub estimates: Estimates,
    /// Causal estimates of the outer-factor state `x'` (only for `OuterSise`).
    pub outer_state: Option<Vec<Vector>>,
    /// Estimates of the outer-factor input `dcheck` (only for `OuterSise`).
    pub dcheck: Option<Vec<Vector>>,
    pub edge: usize,
    pub factorization: Option<Factorization>,
}

/// Stable input and state estimation for plants whose SISE may be unstable.
///
/// Square plants are factored; SISE runs on the outer factor (which is
/// minimum phase), the inner factor is inverted backwards in time to get
/// `d`, and the plant state is rebuilt from the two. Non-square plants use
/// plain SISE when it is stable and the augmented Kalman filter otherwise.
pub fn estimate_via_outer(sys: &LinearSystem, ys: &[Vector], init: &FilterInit) -> Result<PipelineEstimates> {
    estimate_via_outer_with(sys, ys, init, None)
}

pub fn estimate_via_outer_with(
    sys: &LinearSystem,
    ys: &[Vector],
    init: &FilterInit,
    known_inputs: Option<&[Vector]>,
) -> Result<PipelineEstimates> {
    sys.check_shapes()?;
    if sys.p() != sys.m() {
        let stable = verdict(sys).map(|r| r.verdict == Verdict::Stable).unwrap_or(false);
        let (engine, estimates) = if stable {
            let opts = RunOptions {
                known_inputs: known_inputs.map(|u| u.to_vec()),
                ..RunOptions::default()
            };
            (PipelineEngine::PlainSise, run_filter(sys, ys, init, &opts)?)
        } else {
            (
                PipelineEngine::AugmentedKf,
                run_akf(sys, ys, init, DEFAULT_PSEUDO_VARIANCE, known_inputs)?,
            )
        };
        return Ok(PipelineEstimates {
            engine,
            estimates,
            outer_state: None,
            dcheck: None,
            edge: 0,
            factorization: None,
        });
    }

    let fact = inner_outer(sys)?;
    let zeros: Vec<Complex64> = fact
        .diagnostics
        .outer_zeros
        .iter()
        .map(|z| Complex64::new(z[0], z[1]))
        .collect();
    if classify(&zeros) != Verdict::Stable {
        return Err(Error::NoApplicableVariant(format!(
            "outer factor is not minimum phase (zero radius {:.6})",
            fact.diagnostics.outer_zero_radius
        )));
    }
    let opts = RunOptions {
        known_inputs: known_inputs.map(|u| u.to_vec()),
        ..RunOptions::default()
    };
    let outer_est = run_filter(&fact.outer, ys, init, &opts)?;
    let horizon = ys.len() - 1;
    let delayed = fact.diagnostics.route == FactorRoute::Delayed;
    // dcheck_0 .. dcheck_{N-1} in plant time.
    let dcheck: Vec<Vector> = if delayed {
        outer_est.dhat[1..].to_vec()
    } else {
        outer_est.dhat.clone()
    };
    let recovered = recover_d(&dcheck, &fact.inner, RecoverMode::FixedInterval)?;
    let xhat = reconstruct_plant_state(&outer_est.xhat, &recovered.d, &fact.inner);
    let dhat_rows: Vec<Vector> = if delayed {
        std::iter::once(Vector::zeros(sys.m()))
            .chain(recovered.d.iter().cloned())
            .collect()
    } else {
        recovered.d.clone()
    };
    debug_assert_eq!(dhat_rows.len(), horizon + 1);
    let estimates = Estimates {
        variant: outer_est.variant,
        delayed_input: delayed,
        xhat,
        dhat: dhat_rows,
        p: outer_est.p.clone(),
        innovation: outer_est.innovation.clone(),
        gains: None,
    };
    Ok(PipelineEstimates {
        engine: PipelineEngine::OuterSise,
        estimates,
        outer_state: Some(outer_est.xhat),
        dcheck: Some(dcheck),
        edge: recovered.edge + usize::from(delayed),
        factorization: Some(fact),
    })
}

/// Complex matrix of a scalar, for tests and callers evaluating SISO maps.
pub fn scalar_value(m: &DMatrix<Complex64>) -> Complex64 {
    m[(0, 0)]
}
