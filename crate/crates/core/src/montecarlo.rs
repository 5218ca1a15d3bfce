//! Monte Carlo check of the SISE error covariance.
//!
//! The covariance and gain recursions do not depend on the data, so they are
//! computed once and shared by every run. Runs are independent and go through
//! [`par::map_indexed`]; partial sums are added in run order, so the result
//! does not depend on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, psd_factor, Mat, Vector};
use crate::model::LinearSystem;
use crate::par;
use crate::sise::{
    ft_measurement_gains, ft_predict, ft_predict_cov, ft_update, zf_gains, zf_update, FtGains, KnownInputs, Variant,
    ZfGains,
};

#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub runs: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Covariance of `x_0` (also the filter prior).
    pub p0: Mat,
    /// Disturbance `d_0 .. d_{T}`; zero when absent.
    pub disturbance: Option<Vec<Vector>>,
    /// Use the sequential loop even when the `parallel` feature is on.
    pub sequential: bool,
}

#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub runs: usize,
    /// Sample second moment of `x_T - xhat_{T|T}`.
    pub empirical: Mat,
    /// Filter covariance at `T`.
    pub predicted: Mat,
    /// Largest entrywise deviation: relative on the diagonal, normalized by
    /// `sqrt(P_ii P_jj)` off the diagonal.
    pub max_relative_error: f64,
    /// `trace(empirical) / trace(predicted)`.
    pub trace_ratio: f64,
    /// Sample mean of the error (should be near zero).
    pub mean_error: Vector,
}

enum Gains {
    Zf(Vec<ZfGains>),
    Ft(Vec<FtGains>),
}

fn precompute(sys: &LinearSystem, variant: Variant, p0: &Mat, horizon: usize) -> Result<(Gains, Mat)> {
    if variant.is_zero_feedthrough() {
        let mut p = p0.clone();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let g = zf_gains(&p, sys, sys)?;
            p = g.p.clone();
            out.push(g);
        }
        Ok((Gains::Zf(out), p))
    } else {
        let mut out: Vec<FtGains> = Vec::with_capacity(horizon + 1);
        let mut px_pred = linalg::symmetrize(p0);
        for _ in 0..=horizon {
            let g = ft_measurement_gains(&px_pred, sys)?;
            px_pred = ft_predict_cov(&g.px, &g.pxd, &g.pd, sys);
            out.push(g);
        }
        let p = out.last().map(|g| g.px.clone()).unwrap_or_else(|| p0.clone());
        Ok((Gains::Ft(out), p))
    }
}

/// Error `x_T - xhat_{T|T}` of one simulated run.
fn one_run(sys: &LinearSystem, gains: &Gains, cfg: &MonteCarloConfig, factors: &(Mat, Mat, Mat), i: usize) -> Vector {
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    let (l0, lq, lr) = factors;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
    let mut gauss = |k: usize| -> Vector { Vector::from_fn(k, |_, _| StandardNormal.sample(&mut rng)) };
    let zero_d = Vector::zeros(m);
    let d_at = |t: usize| cfg.disturbance.as_ref().and_then(|d| d.get(t)).unwrap_or(&zero_d);

    let mut x = l0 * gauss(n);
    let measure = |x: &Vector, t: usize, noise: Vector| -> Vector { &sys.c * x + &sys.h * d_at(t) + lr * noise };
    match gains {
        Gains::Zf(gs) => {
            let mut xhat = Vector::zeros(n);
            for (t, g) in (1..=cfg.horizon).zip(gs) {
                x = &sys.a * &x + &sys.g * d_at(t - 1) + lq * gauss(n);
                let y = measure(&x, t, gauss(p));
                xhat = zf_update(&xhat, g, sys, sys, &y, KnownInputs::default()).0;
            }
            x - xhat
        }
        Gains::Ft(gs) => {
            let mut xhat_pred = Vector::zeros(n);
            let mut xhat = Vector::zeros(n);
            for (t, g) in gs.iter().enumerate() {
                if t > 0 {
                    x = &sys.a * &x + &sys.g * d_at(t - 1) + lq * gauss(n);
                }
                let y = measure(&x, t, gauss(p));
                let (xf, dhat, _) = ft_update(&xhat_pred, g, sys, &y, None);
                xhat = xf;
                xhat_pred = ft_predict(&xhat, &dhat, sys, None);
            }
            x - xhat
        }
    }
}

/// Runs `cfg.runs` independent noisy simulations with `x_0 ~ N(0, P0)`, filters
/// each from the matched prior, and compares the sample covariance of the final
/// error with the filter covariance.
pub fn covariance_consistency(sys: &LinearSystem, cfg: &MonteCarloConfig) -> Result<MonteCarloResult> {
    sys.check_shapes()?;
    if cfg.runs < 2 || cfg.horizon < 1 {
        return Err(Error::InvalidArgument("need at least 2 runs and horizon >= 1".into()));
    }
    linalg::check_psd(&cfg.p0, "P0")?;
    let variant = Variant::select(sys)?;
    let n = sys.n();
    let (gains, predicted) = precompute(sys, variant, &cfg.p0, cfg.horizon)?;
    let factors = (psd_factor(&cfg.p0), psd_factor(&sys.q), psd_factor(&sys.r));

    let run = |i: usize| {
        let e = one_run(sys, &gains, cfg, &factors, i);
        (&e * e.transpose(), e)
    };
    let per_run = if cfg.sequential {
        par::map_indexed_seq(cfg.runs, run)
    } else {
        par::map_indexed(cfg.runs, run)
    };
    let (mut second, mut mean) = (Mat::zeros(n, n), Vector::zeros(n));
    for (ee, e) in &per_run {
        second += ee;
        mean += e;
    }
    let count = cfg.runs as f64;
    let empirical = second / count;
    let mean_error = mean / count;

    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let scale = if i == j {
                predicted[(i, i)]
            } else {
                (predicted[(i, i)] * predicted[(j, j)]).sqrt()
            };
            worst = worst.max((empirical[(i, j)] - predicted[(i, j)]).abs() / scale);
        }
    }
    Ok(MonteCarloResult {
        runs: cfg.runs,
        trace_ratio: empirical.trace() / predicted.trace(),
        empirical,
        predicted,
        max_relative_error: worst,
        mean_error,
    })
}
