//! A-priori stability of the SISE variants.
//!
//! Square systems are decided by the eigenvalues of the estimator matrix,
//! which are the transmission zeros of the disturbance-to-output map.
//! Non-square systems are decided by PBH detectability of a reduced pair and
//! by iterating the Riccati difference equation of the predicted covariance.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, check_psd, eigenvalues, lu_solve, psd_factor, spd_solve, spectral_radius, symmetrize, Mat};
use crate::model::{
    feedthrough_split, pbh_modes, transform_zero_feedthrough, validate, AssumptionReport, LinearSystem, ModeDiagnostic,
    TransformedSystem,
};

/// Half-width of the band around the unit circle treated as marginal.
pub const UNIT_CIRCLE_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

/// Stable when every modulus is below `1 - 1e-9`, unstable when any exceeds
/// `1 + 1e-9`, marginal otherwise.
pub fn classify(eigs: &[Complex64]) -> Verdict {
    let rho = eigs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if rho > 1.0 + UNIT_CIRCLE_MARGIN {
        Verdict::Unstable
    } else if rho >= 1.0 - UNIT_CIRCLE_MARGIN {
        Verdict::Marginal
    } else {
        Verdict::Stable
    }
}

fn require_square(sys: &LinearSystem) -> Result<()> {
    if sys.p() != sys.m() {
        return Err(Error::Shape(format!(
            "square case needs p = m (p={}, m={})",
            sys.p(),
            sys.m()
        )));
    }
    Ok(())
}

/// `(I - G (CG)^{-1} C) A`.
pub fn sise_matrix_square_zf(sys: &LinearSystem) -> Result<Mat> {
    require_square(sys)?;
    let n = sys.n();
    let cg_inv_c = lu_solve(&sys.cg(), &sys.c, "CG")?;
    Ok((Mat::identity(n, n) - &sys.g * cg_inv_c) * &sys.a)
}

/// `A - G H^{-1} C`.
pub fn sise_matrix_square_ft(sys: &LinearSystem) -> Result<Mat> {
    require_square(sys)?;
    let h_inv_c = lu_solve(&sys.h, &sys.c, "H")?;
    Ok(&sys.a - &sys.g * h_inv_c)
}

/// Transmission zeros of a square system: of `z C (zI - A)^{-1} G` when
/// `H = 0`, of `H + C (zI - A)^{-1} G` when `H` is invertible.
pub fn transmission_zeros_square(sys: &LinearSystem) -> Result<Vec<Complex64>> {
    require_square(sys)?;
    let m = sys.m();
    let rank_h = sys.feedthrough_rank();
    if rank_h == 0 {
        Ok(eigenvalues(&sise_matrix_square_zf(sys)?))
    } else if rank_h == m {
        Ok(eigenvalues(&sise_matrix_square_ft(sys)?))
    } else {
        Err(Error::Assumption {
            assumption: "H = 0 or rank H = m",
            detail: format!("rank H = {rank_h}, m = {m}"),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Detectability {
    pub detectable: bool,
    /// Modes with `|lambda| >= 1 - 1e-9` that fail the PBH rank test.
    pub failing_modes: Vec<ModeDiagnostic>,
}

fn on_or_outside(z: Complex64) -> bool {
    z.norm() >= 1.0 - UNIT_CIRCLE_MARGIN
}

/// PBH detectability of `[a, c]`; `c` may have zero rows.
pub fn detectable(a: &Mat, c: &Mat) -> Detectability {
    let n = a.nrows();
    let failing_modes: Vec<_> = pbh_modes(a, c, on_or_outside)
        .into_iter()
        .filter(|d| d.pbh_rank < n)
        .collect();
    Detectability {
        detectable: failing_modes.is_empty(),
        failing_modes,
    }
}

/// PBH stabilizability of `[a, b]`.
pub fn stabilizable(a: &Mat, b: &Mat) -> Detectability {
    detectable(&a.transpose(), &b.transpose())
}

/// Riccati difference equation
/// `X+ = A X A^T - (A X C^T)(C X C^T + R)^{-1}(A X C^T)^T + Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiProblem {
    pub a: Mat,
    pub c: Mat,
    pub q: Mat,
    pub r: Mat,
}

impl RiccatiProblem {
    /// Gain `L = A X C^T (C X C^T + R)^{-1}`.
    pub fn gain(&self, x: &Mat) -> Result<Mat> {
        let n = self.a.nrows();
        if self.c.nrows() == 0 {
            return Ok(Mat::zeros(n, 0));
        }
        let axc = &self.a * x * self.c.transpose();
        let s = &self.c * x * self.c.transpose() + &self.r;
        Ok(spd_solve(&s, &axc.transpose(), "C X C^T + R")?.transpose())
    }

    /// One step, evaluated as `(A - L C) X (A - L C)^T + L R L^T + Q`. This
    /// equals the subtractive form but avoids its cancellation when `X` is
    /// ill-conditioned, and first-order errors in `L` do not propagate.
    pub fn step(&self, x: &Mat) -> Result<Mat> {
        if self.c.nrows() == 0 {
            return Ok(symmetrize(&(&self.a * x * self.a.transpose() + &self.q)));
        }
        let l = self.gain(x)?;
        let acl = &self.a - &l * &self.c;
        Ok(symmetrize(
            &(&acl * x * acl.transpose() + &l * &self.r * l.transpose() + &self.q),
        ))
    }

    /// Square-root step: for `X = S S^T` returns `S+` with `X+ = S+ S+^T`.
    /// `S+` is read off the triangularized pre-array
    /// `[[R^{1/2}, C S, 0], [0, A S, Q^{1/2}]]`; no covariance is ever
    /// formed, so ill-conditioned `X` keeps full relative accuracy.
    pub fn sqrt_step(&self, s: &Mat, r_half: &Mat, q_half: &Mat) -> Mat {
        let (n, p) = (self.a.nrows(), self.c.nrows());
        let k = s.ncols();
        let qk = q_half.ncols();
        let mut pre = Mat::zeros(p + n, p + k + qk);
        pre.view_mut((0, 0), (p, p)).copy_from(r_half);
        pre.view_mut((0, p), (p, k)).copy_from(&(&self.c * s));
        pre.view_mut((p, p), (n, k)).copy_from(&(&self.a * s));
        pre.view_mut((p, p + k), (n, qk)).copy_from(q_half);
        let post = pre.transpose().qr().r().transpose();
        post.view((p, p), (n, n)).into_owned()
    }

    /// `A - L C` at `x`.
    pub fn closed_loop(&self, x: &Mat) -> Result<Mat> {
        if self.c.nrows() == 0 {
            return Ok(self.a.clone());
        }
        Ok(&self.a - self.gain(x)? * &self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdeOptions {
    /// Convergence when `max|X+ - X| <= tol * max(1, max|X|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Divergence when `max|X|` exceeds this.
    pub divergence_bound: f64,
}

impl Default for RdeOptions {
    fn default() -> Self {
        RdeOptions {
            tol: 1e-12,
            max_iter: 100_000,
            divergence_bound: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RdeStatus {
    Converged,
    /// `max|X|` exceeded the divergence bound.
    Diverged,
    /// Iteration cap reached without meeting the tolerance.
    MaxIterations,
    /// Fixed point reached, but the closed loop there is not Schur.
    NonStabilizing,
}

#[derive(Debug, Clone)]
pub struct RdeResult {
    pub status: RdeStatus,
    /// Last iterate (the fixed point when converged).
    pub x: Mat,
    pub iterations: usize,
    /// Spectral radius of `A - L C` at the last iterate (NaN after divergence).
    pub closed_loop_radius: f64,
}

impl RdeResult {
    pub fn converged(&self) -> bool {
        self.status == RdeStatus::Converged
    }
}

/// Iterates the Riccati difference equation from `x0` until it settles,
/// blows up, or runs out of iterations.
pub fn iterate_riccati(problem: &RiccatiProblem, x0: &Mat, opts: &RdeOptions) -> Result<RdeResult> {
    let n = problem.a.nrows();
    if x0.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "X0 is {}x{}, expected {n}x{n}",
            x0.nrows(),
            x0.ncols()
        )));
    }
    check_psd(x0, "X0")?;
    let (r_half, q_half) = (psd_factor(&problem.r), psd_factor(&problem.q));
    let mut s = psd_factor(x0);
    let mut x = symmetrize(x0);
    for it in 1..=opts.max_iter {
        s = problem.sqrt_step(&s, &r_half, &q_half);
        let next = symmetrize(&(&s * s.transpose()));
        let scale = linalg::max_abs(&next);
        if !scale.is_finite() || scale > opts.divergence_bound {
            return Ok(RdeResult {
                status: RdeStatus::Diverged,
                x: next,
                iterations: it,
                closed_loop_radius: f64::NAN,
            });
        }
        let delta = linalg::max_abs(&(&next - &x));
        x = next;
        if delta <= opts.tol * scale.max(1.0) {
            let radius = spectral_radius(&problem.closed_loop(&x)?);
            let status = if radius < 1.0 - UNIT_CIRCLE_MARGIN {
                RdeStatus::Converged
            } else {
                RdeStatus::NonStabilizing
            };
            return Ok(RdeResult {
                status,
                x,
                iterations: it,
                closed_loop_radius: radius,
            });
        }
    }
    let radius = spectral_radius(&problem.closed_loop(&x)?);
    Ok(RdeResult {
        status: RdeStatus::MaxIterations,
        x,
        iterations: opts.max_iter,
        closed_loop_radius: radius,
    })
}

/// Zero-feedthrough Riccati data `(Abar, C2, Qbar, R2)` with
/// `Abar = A (I - G (C1 G)^{-1} C1)` and
/// `Qbar = A G (C1 G)^{-1} R1 (G (C1 G)^{-1})^T A^T + Q`.
///
/// `g_prev` is the disturbance matrix of the previous step (equal to `sys.g`
/// for a constant system).
pub fn zf_riccati_problem(sys: &LinearSystem, g_prev: &Mat, ts: &TransformedSystem) -> Result<RiccatiProblem> {
    let n = sys.n();
    let c1g = &ts.c1 * g_prev;
    // G (C1 G)^{-1}
    let gz = lu_solve(&c1g.transpose(), &g_prev.transpose(), "C1 G")?.transpose();
    let abar = &sys.a * (Mat::identity(n, n) - &gz * &ts.c1);
    let agz = &sys.a * &gz;
    let qbar = symmetrize(&(&agz * &ts.r1 * agz.transpose() + &sys.q));
    Ok(RiccatiProblem {
        a: abar,
        c: ts.c2.clone(),
        q: qbar,
        r: ts.r2.clone(),
    })
}

/// Feedthrough Riccati data with `Ahat = A - G1 Hbar^{-1} C1bar` and
/// `Qhat = Q + G1 Hbar^{-1} R1bar Hbar^{-T} G1^T`.
pub fn ft_riccati_problem(sys: &LinearSystem, ts: &TransformedSystem) -> Result<RiccatiProblem> {
    // G1 Hbar^{-1}
    let gh = lu_solve(&ts.hbar.transpose(), &ts.g1.transpose(), "Hbar")?.transpose();
    let ahat = &sys.a - &gh * &ts.c1;
    let qhat = symmetrize(&(&sys.q + &gh * &ts.r1 * gh.transpose()));
    Ok(RiccatiProblem {
        a: ahat,
        c: ts.c2.clone(),
        q: qhat,
        r: ts.r2.clone(),
    })
}

/// Iterates the zero-feedthrough Riccati equation of the predicted covariance `X_t`.
pub fn rde_zf(sys: &LinearSystem, ts: &TransformedSystem, x0: &Mat, opts: &RdeOptions) -> Result<RdeResult> {
    iterate_riccati(&zf_riccati_problem(sys, &sys.g, ts)?, x0, opts)
}

/// Iterates the feedthrough Riccati equation of the predicted covariance `P^x_{t|t-1}`.
pub fn rde_ft(sys: &LinearSystem, ts: &TransformedSystem, x0: &Mat, opts: &RdeOptions) -> Result<RdeResult> {
    iterate_riccati(&ft_riccati_problem(sys, ts)?, x0, opts)
}

/// Step matrices of the time-varying zero-feedthrough equation mapping
/// `X_t` to `X_{t+1}`: `A_t, Q_t, C_t, R_t` from `current` and `G_{t-1}`
/// from `previous`.
pub fn zf_tv_problem(previous: &LinearSystem, current: &LinearSystem) -> Result<RiccatiProblem> {
    let mut out = current.clone();
    out.g = previous.g.clone();
    let ts = transform_zero_feedthrough(&out)?;
    zf_riccati_problem(current, &previous.g, &ts)
}

/// Step matrices of the time-varying feedthrough equation (all from the system at `t`).
pub fn ft_tv_problem(current: &LinearSystem) -> Result<RiccatiProblem> {
    let ts = feedthrough_split(current)?;
    if ts.rank != current.m() {
        return Err(Error::Assumption {
            assumption: "rank H = m",
            detail: format!("rank H = {} < m = {}", ts.rank, current.m()),
        });
    }
    ft_riccati_problem(current, &ts)
}

/// One step of a time-varying Riccati recursion.
pub fn rde_tv_step(x: &Mat, step: &RiccatiProblem) -> Result<Mat> {
    step.step(x)
}

/// Spectral radius of the SISE error dynamics at a zero-feedthrough fixed
/// point: `(I - K C)(I - G M C) A` with gains computed from `X`.
pub fn zf_closed_loop(sys: &LinearSystem, x: &Mat) -> Result<Mat> {
    let n = sys.n();
    let (c, g, r) = (&sys.c, &sys.g, &sys.r);
    let s = c * x * c.transpose() + r;
    let k = spd_solve(&s, &(c * x), "C X C^T + R")?.transpose();
    let sinv_cg = spd_solve(&s, &sys.cg(), "C X C^T + R")?;
    let f = sys.cg().transpose() * &sinv_cg;
    let m = spd_solve(&f, &sinv_cg.transpose(), "G^T C^T (C X C^T + R)^-1 C G")?;
    let i = Mat::identity(n, n);
    Ok((&i - k * c) * (&i - g * m * c) * &sys.a)
}

/// Prediction error dynamics of the feedthrough filter at a fixed point `X`
/// of the predicted covariance: `A - [A K + (G - A K H) M] C`.
pub fn ft_closed_loop(sys: &LinearSystem, x: &Mat) -> Result<Mat> {
    let (a, c, g, h) = (&sys.a, &sys.c, &sys.g, &sys.h);
    let rt = c * x * c.transpose() + &sys.r;
    let k = spd_solve(&rt, &(c * x), "C X C^T + R")?.transpose();
    let rinv_h = spd_solve(&rt, h, "C X C^T + R")?;
    let info = h.transpose() * &rinv_h;
    let m = spd_solve(&info, &rinv_h.transpose(), "H^T Rtilde^-1 H")?;
    let ak = a * &k;
    Ok(a - (&ak + (g - &ak * h) * m) * c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisPath {
    SquareZeroFeedthrough,
    SquareFeedthrough,
    ZeroFeedthrough,
    Feedthrough,
    /// `0 < rank H < m`: detectability test only.
    RankDeficientFeedthrough,
}

#[derive(Debug, Clone, Serialize)]
pub struct RdeSummary {
    pub status: RdeStatus,
    pub iterations: usize,
    pub closed_loop_radius: f64,
    #[serde(skip)]
    pub limit: Option<Mat>,
}

impl From<&RdeResult> for RdeSummary {
    fn from(r: &RdeResult) -> Self {
        RdeSummary {
            status: r.status,
            iterations: r.iterations,
            closed_loop_radius: r.closed_loop_radius,
            limit: r.converged().then(|| r.x.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectabilityCheck {
    pub a: Mat,
    pub c: Mat,
    pub result: Detectability,
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub path: AnalysisPath,
    pub assumptions: AssumptionReport,
    /// Estimator matrix whose eigenvalues decide the verdict.
    pub sise_system_matrix: Mat,
    pub eigenvalues: Vec<Complex64>,
    pub spectral_radius: f64,
    pub transmission_zeros: Option<Vec<Complex64>>,
    pub detectability: Option<DetectabilityCheck>,
    /// `[Abar, Qbar^{1/2}]` stabilizability.
    pub stabilizability: Option<Detectability>,
    pub rde: Option<RdeSummary>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

/// Decides whether SISE is stable for `sys`, using the default Riccati options.
pub fn verdict(sys: &LinearSystem) -> Result<StabilityReport> {
    verdict_with(sys, &RdeOptions::default())
}

pub fn verdict_with(sys: &LinearSystem, opts: &RdeOptions) -> Result<StabilityReport> {
    let assumptions = validate(sys)?;
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    let rank_h = sys.feedthrough_rank();
    let square = p == m;
    let x0 = Mat::identity(n, n);

    let report = |path, mat: Mat, zeros: Option<Vec<Complex64>>| {
        let eigs = eigenvalues(&mat);
        StabilityReport {
            path,
            assumptions: assumptions.clone(),
            spectral_radius: eigs.iter().map(|z| z.norm()).fold(0.0, f64::max),
            verdict: classify(&eigs),
            sise_system_matrix: mat,
            eigenvalues: eigs,
            transmission_zeros: zeros,
            detectability: None,
            stabilizability: None,
            rde: None,
            notes: Vec::new(),
        }
    };

    if rank_h == 0 && assumptions.assumption2 {
        if square {
            let mat = sise_matrix_square_zf(sys)?;
            let zeros = eigenvalues(&mat);
            return Ok(report(AnalysisPath::SquareZeroFeedthrough, mat, Some(zeros)));
        }
        let ts = transform_zero_feedthrough(sys)?;
        let problem = zf_riccati_problem(sys, &sys.g, &ts)?;
        let det = detectable(&problem.a, &problem.c);
        let stab = stabilizable(&problem.a, &linalg::psd_factor(&problem.q));
        let rde = iterate_riccati(&problem, &x0, opts)?;
        let (mat, note) = if rde.converged() {
            (zf_closed_loop(sys, &rde.x)?, None)
        } else {
            (
                problem.a.clone(),
                Some(format!(
                    "Riccati recursion {:?}; eigenvalues shown are those of Abar",
                    rde.status
                )),
            )
        };
        let mut rep = report(AnalysisPath::ZeroFeedthrough, mat, None);
        rep.detectability = Some(DetectabilityCheck {
            a: problem.a.clone(),
            c: problem.c.clone(),
            result: det,
        });
        rep.stabilizability = Some(stab);
        rep.rde = Some(RdeSummary::from(&rde));
        rep.notes.extend(note);
        return Ok(rep);
    }

    if rank_h == m {
        if square {
            let mat = sise_matrix_square_ft(sys)?;
            let zeros = eigenvalues(&mat);
            return Ok(report(AnalysisPath::SquareFeedthrough, mat, Some(zeros)));
        }
        let ts = feedthrough_split(sys)?;
        let problem = ft_riccati_problem(sys, &ts)?;
        let det = detectable(&problem.a, &problem.c);
        let stab = stabilizable(&problem.a, &linalg::psd_factor(&problem.q));
        let rde = iterate_riccati(&problem, &x0, opts)?;
        let (mat, note) = if rde.converged() {
            (ft_closed_loop(sys, &rde.x)?, None)
        } else {
            (
                problem.a.clone(),
                Some(format!(
                    "Riccati recursion {:?}; eigenvalues shown are those of Ahat",
                    rde.status
                )),
            )
        };
        let mut rep = report(AnalysisPath::Feedthrough, mat, None);
        rep.detectability = Some(DetectabilityCheck {
            a: problem.a.clone(),
            c: problem.c.clone(),
            result: det,
        });
        rep.stabilizability = Some(stab);
        rep.rde = Some(RdeSummary::from(&rde));
        rep.notes.extend(note);
        return Ok(rep);
    }

    if rank_h > 0 && assumptions.assumption4 {
        let ts = feedthrough_split(sys)?;
        let problem = ft_riccati_problem(sys, &ts)?;
        let det = detectable(&problem.a, &problem.c);
        // Representative stabilizing gain: Riccati iteration with unit weights.
        let k = problem.c.nrows();
        let unit = RiccatiProblem {
            a: problem.a.clone(),
            c: problem.c.clone(),
            q: Mat::identity(n, n),
            r: Mat::identity(k, k),
        };
        let rde = iterate_riccati(&unit, &x0, opts)?;
        let mat = if rde.converged() {
            unit.closed_loop(&rde.x)?
        } else {
            problem.a.clone()
        };
        let mut rep = report(AnalysisPath::RankDeficientFeedthrough, mat, None);
        rep.detectability = Some(DetectabilityCheck {
            a: problem.a,
            c: problem.c,
            result: det,
        });
        rep.rde = Some(RdeSummary::from(&rde));
        rep.notes.push(
            "rank-deficient feedthrough: verdict predicts stability of the general filter, which is not implemented here"
                .into(),
        );
        return Ok(rep);
    }

    Err(Error::NoApplicableVariant(format!(
        "rank H = {rank_h}, rank CG = {}, m = {m}: none of rank CG = m, rank H = m, rank C2bar G2 = m - rank Hbar holds",
        assumptions.rank_cg.rank
    )))
}

/// Minimum-cost perfect matching between two equally sized root sets.
/// Returns `assignment[i] = j` pairing `a[i]` with `b[j]` and the largest
/// paired distance.
pub fn match_roots(a: &[Complex64], b: &[Complex64]) -> Result<(Vec<usize>, f64)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "root sets differ in size ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let cost = |i: usize, j: usize| (a[i] - b[j]).norm();
    // Hungarian algorithm with potentials, 1-based rows/columns.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let worst = (0..n).map(|i| cost(i, assignment[i])).fold(0.0, f64::max);
    Ok((assignment, worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::transform_feedthrough;

    fn mat(r: usize, c: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, v)
    }

    fn scalar(a: f64, g: f64, c: f64, h: f64, q: f64, r: f64) -> LinearSystem {
        let one = |v: f64| mat(1, 1, &[v]);
        LinearSystem::new(one(a), one(g), one(c), one(h), one(q), one(r)).unwrap()
    }

    fn s1_with_g(g: &[f64]) -> LinearSystem {
        LinearSystem::new(
            mat(2, 2, &[0.5, 1.0, 0.0, 0.3]),
            mat(2, 1, g),
            mat(1, 2, &[1.0, 0.0]),
            Mat::zeros(1, 1),
            Mat::identity(2, 2) * 0.01,
            mat(1, 1, &[0.01]),
        )
        .unwrap()
    }

    fn s4() -> LinearSystem {
        LinearSystem::new(
            mat(2, 2, &[0.5, 1.0, 0.0, 1.4]),
            mat(2, 1, &[1.0, 0.0]),
            Mat::identity(2, 2),
            Mat::zeros(2, 1),
            Mat::identity(2, 2) * 0.01,
            Mat::identity(2, 2) * 0.01,
        )
        .unwrap()
    }

    fn close(a: &Mat, b: &Mat) -> bool {
        linalg::max_abs(&(a - b)) < 1e-12
    }

    fn real_sorted(z: &[Complex64]) -> Vec<f64> {
        let mut v: Vec<f64> = z.iter().map(|z| z.re).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn square_zf_matrices() {
        let m1 = sise_matrix_square_zf(&s1_with_g(&[1.0, 1.0])).unwrap();
        assert!(close(&m1, &mat(2, 2, &[0.0, 0.0, -0.5, -0.7])));
        let m2 = sise_matrix_square_zf(&s1_with_g(&[1.0, 2.0])).unwrap();
        assert!(close(&m2, &mat(2, 2, &[0.0, 0.0, -1.0, -1.7])));
        let z = real_sorted(&transmission_zeros_square(&s1_with_g(&[1.0, 1.0])).unwrap());
        assert!((z[0] + 0.7).abs() < 1e-12 && z[1].abs() < 1e-12);
    }

    #[test]
    fn square_ft_matrices() {
        let m = sise_matrix_square_ft(&scalar(0.5, 1.0, 1.0, 2.0, 1.0, 1.0)).unwrap();
        assert!(m[(0, 0)].abs() < 1e-15);
        let m = sise_matrix_square_ft(&scalar(0.5, 1.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((m[(0, 0)] + 0.5).abs() < 1e-15);
        let m = sise_matrix_square_ft(&scalar(0.5, 0.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(m[(0, 0)], 0.5);
        assert!(matches!(sise_matrix_square_zf(&s4()), Err(Error::Shape(_))));
    }

    #[test]
    fn detectability_examples() {
        let a = Mat::from_diagonal(&crate::Vector::from_vec(vec![0.5, 2.0]));
        assert!(detectable(&a, &mat(1, 2, &[0.0, 1.0])).detectable);
        let d = detectable(&a, &mat(1, 2, &[1.0, 0.0]));
        assert!(!d.detectable);
        assert_eq!(d.failing_modes.len(), 1);
        assert!((d.failing_modes[0].eigenvalue.0 - 2.0).abs() < 1e-12);
        assert!(detectable(&(Mat::identity(3, 3) * 0.9), &Mat::zeros(0, 3)).detectable);
    }

    #[test]
    fn rde_zf_examples() {
        // Scalar square case: Abar = 0, fixed point Qbar after one step.
        let sys = scalar(0.9, 1.0, 1.0, 0.0, 0.3, 0.2);
        let ts = transform_zero_feedthrough(&sys).unwrap();
        let res = rde_zf(&sys, &ts, &Mat::identity(1, 1), &RdeOptions::default()).unwrap();
        assert!(res.converged());
        let qbar = 0.9 * 0.9 * 0.2 + 0.3;
        assert!((res.x[(0, 0)] - qbar).abs() < 1e-15);
        assert!(res.iterations <= 2);

        let sys = s4();
        let ts = transform_zero_feedthrough(&sys).unwrap();
        let res = rde_zf(&sys, &ts, &Mat::identity(2, 2), &RdeOptions::default()).unwrap();
        assert!(res.converged());
        assert!(spectral_radius(&zf_closed_loop(&sys, &res.x).unwrap()) < 1.0 - 1e-9);

        let sys = s1_with_g(&[1.0, 2.0]);
        let ts = transform_zero_feedthrough(&sys).unwrap();
        let res = rde_zf(&sys, &ts, &Mat::identity(2, 2), &RdeOptions::default()).unwrap();
        assert_eq!(res.status, RdeStatus::Diverged);
    }

    #[test]
    fn rde_ft_scalar() {
        let sys = scalar(0.5, 1.0, 1.0, 2.0, 1.0, 1.0);
        let ts = transform_feedthrough(&sys).unwrap();
        let res = rde_ft(&sys, &ts, &Mat::identity(1, 1), &RdeOptions::default()).unwrap();
        assert!(res.converged());
        assert!((res.x[(0, 0)] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn rde_ft_restored_by_second_channel() {
        // Ahat = 1.5 is unstable but the second output sees it.
        let sys = LinearSystem::new(
            mat(1, 1, &[0.5]),
            mat(1, 1, &[1.0]),
            mat(2, 1, &[-1.0, 1.0]),
            mat(2, 1, &[1.0, 0.0]),
            mat(1, 1, &[1.0]),
            Mat::identity(2, 2),
        )
        .unwrap();
        let ts = transform_feedthrough(&sys).unwrap();
        let prob = ft_riccati_problem(&sys, &ts).unwrap();
        assert!((prob.a[(0, 0)] - 1.5).abs() < 1e-12);
        let res = rde_ft(&sys, &ts, &Mat::identity(1, 1), &RdeOptions::default()).unwrap();
        assert!(res.converged());
    }

    #[test]
    fn tv_step_matches_lti() {
        let sys = s4();
        let ts = transform_zero_feedthrough(&sys).unwrap();
        let lti = zf_riccati_problem(&sys, &sys.g, &ts).unwrap();
        let tv = zf_tv_problem(&sys, &sys).unwrap();
        let mut x = Mat::identity(2, 2);
        let mut y = x.clone();
        for _ in 0..50 {
            x = lti.step(&x).unwrap();
            y = rde_tv_step(&y, &tv).unwrap();
            assert!(linalg::max_abs(&(&x - &y)) < 1e-12);
        }
    }

    #[test]
    fn verdict_examples() {
        let r1 = verdict(&s1_with_g(&[1.0, 1.0])).unwrap();
        assert_eq!(r1.verdict, Verdict::Stable);
        assert_eq!(r1.path, AnalysisPath::SquareZeroFeedthrough);
        let r2 = verdict(&s1_with_g(&[1.0, 2.0])).unwrap();
        assert_eq!(r2.verdict, Verdict::Unstable);
        let r4 = verdict(&s4()).unwrap();
        assert_eq!(r4.verdict, Verdict::Stable);
        assert!(r4.detectability.as_ref().unwrap().result.detectable);
        assert!(r4.rde.as_ref().unwrap().status == RdeStatus::Converged);
    }

    #[test]
    fn verdict_marginal_zero() {
        // A - G H^{-1} C = 1.
        let r = verdict(&scalar(1.5, 1.0, 1.0, 2.0, 1.0, 1.0)).unwrap();
        assert_eq!(r.verdict, Verdict::Marginal);
    }

    #[test]
    fn hungarian_pairs() {
        let a = [
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 2.0),
        ];
        let b = [
            Complex64::new(0.0, 2.1),
            Complex64::new(0.05, 0.0),
            Complex64::new(1.0, 0.0),
        ];
        let (asg, worst) = match_roots(&a, &b).unwrap();
        assert_eq!(asg, vec![1, 2, 0]);
        assert!((worst - 0.1).abs() < 1e-12);
    }
}
