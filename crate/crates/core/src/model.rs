//! Plant representation, structural assumption checks, output transforms and
//! trajectory simulation.
//!
//! The plant is
//!
//! ```text
//! x_{t+1} = A x_t + B u_t + G d_t + w_t,   w_t ~ N(0, Q)
//! y_t     = C x_t + D u_t + H d_t + v_t,   v_t ~ N(0, R)
//! ```
//!
//! with `d_t` the unknown input and `u_t` an optional known input.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    self, eigenvalues, numerical_rank, numerical_rank_complex, svd_split, to_complex, Mat, RankInfo, Vector,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: Mat,
    pub g: Mat,
    pub c: Mat,
    pub h: Mat,
    pub q: Mat,
    pub r: Mat,
    /// Known-input matrices `(B, D)`, both with `q` columns.
    pub known: Option<(Mat, Mat)>,
}

impl LinearSystem {
    /// Builds a system after checking that all shapes agree. Structural
    /// assumptions are not checked here; see [`validate`].
    pub fn new(a: Mat, g: Mat, c: Mat, h: Mat, q: Mat, r: Mat) -> Result<Self> {
        let sys = LinearSystem {
            a,
            g,
            c,
            h,
            q,
            r,
            known: None,
        };
        sys.check_shapes()?;
        Ok(sys)
    }

    pub fn with_known_input(mut self, b: Mat, d: Mat) -> Result<Self> {
        self.known = Some((b, d));
        self.check_shapes()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.g.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn known_dim(&self) -> usize {
        self.known.as_ref().map_or(0, |(b, _)| b.ncols())
    }

    pub fn check_shapes(&self) -> Result<()> {
        let n = self.a.nrows();
        let m = self.g.ncols();
        let p = self.c.nrows();
        let expect = |name: &str, mat: &Mat, rows: usize, cols: usize| -> Result<()> {
            if mat.shape() != (rows, cols) {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            Ok(())
        };
        if n == 0 || m == 0 || p == 0 {
            return Err(Error::Shape(format!(
                "dimensions must be positive (n={n}, m={m}, p={p})"
            )));
        }
        expect("A", &self.a, n, n)?;
        expect("G", &self.g, n, m)?;
        expect("C", &self.c, p, n)?;
        expect("H", &self.h, p, m)?;
        expect("Q", &self.q, n, n)?;
        expect("R", &self.r, p, p)?;
        if let Some((b, d)) = &self.known {
            let q = b.ncols();
            expect("B", b, n, q)?;
            expect("D", d, p, q)?;
        }
        Ok(())
    }

    pub fn cg(&self) -> Mat {
        &self.c * &self.g
    }

    pub fn feedthrough_rank(&self) -> usize {
        numerical_rank(&self.h).rank
    }

    pub fn is_zero_feedthrough(&self) -> bool {
        self.feedthrough_rank() == 0
    }

    pub fn is_square(&self) -> bool {
        self.p() == self.m()
    }

    pub(crate) fn known_state_term(&self, u: Option<&Vector>) -> Option<Vector> {
        match (&self.known, u) {
            (Some((b, _)), Some(u)) => Some(b * u),
            _ => None,
        }
    }

    pub(crate) fn known_output_term(&self, u: Option<&Vector>) -> Option<Vector> {
        match (&self.known, u) {
            (Some((_, d)), Some(u)) => Some(d * u),
            _ => None,
        }
    }
}

/// Which structure the output transform was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    ZeroFeedthrough,
    Feedthrough,
}

/// Output coordinates in which the measurement noise splits into two
/// uncorrelated blocks.
///
/// For `ZeroFeedthrough` the split is driven by the SVD of `C G`: the first
/// block `C1` sees the disturbance through an invertible `C1 G` and the second
/// block `C2` satisfies `C2 G = 0`. For `Feedthrough` it is driven by the SVD
/// of `H`: the disturbance is rotated by `V` so that the transformed
/// feedthrough is `[[Hbar, 0], [0, 0]]`.
#[derive(Debug, Clone)]
pub struct TransformedSystem {
    pub kind: TransformKind,
    /// Transform applied to the measurement: transformed output is `T y`.
    pub t: Mat,
    pub c1: Mat,
    pub c2: Mat,
    /// `G V_r` (feedthrough) or `G` (zero feedthrough).
    pub g1: Mat,
    /// `G V_c` (feedthrough) or empty.
    pub g2: Mat,
    /// `r x r` diagonal of leading singular values of `H` (empty for zero feedthrough).
    pub hbar: Mat,
    pub r1: Mat,
    pub r2: Mat,
    /// Rank of `C G` (zero feedthrough) or of `H` (feedthrough).
    pub rank: usize,
    /// Right rotation `[V_r V_c]` of the disturbance (identity for zero feedthrough).
    pub v: Mat,
}

impl TransformedSystem {
    /// Covariance of the transformed measurement noise, `T R T^T`.
    pub fn transformed_noise(&self, sys: &LinearSystem) -> Mat {
        &self.t * &sys.r * self.t.transpose()
    }
}

fn build_output_transform(u_r: &Mat, u_c: &Mat, r: &Mat) -> Result<Mat> {
    let p = u_r.nrows();
    let k = u_r.ncols();
    let mut t = Mat::zeros(p, p);
    if u_c.ncols() == 0 {
        t.copy_from(&u_r.transpose());
        return Ok(t);
    }
    let r22 = u_c.transpose() * r * u_c;
    // W = U_r^T R U_c (U_c^T R U_c)^{-1}
    let w = linalg::spd_solve(&r22, &(u_c.transpose() * r * u_r), "U_c^T R U_c")?.transpose();
    let top = u_r.transpose() - &w * u_c.transpose();
    t.rows_mut(0, k).copy_from(&top);
    t.rows_mut(k, p - k).copy_from(&u_c.transpose());
    Ok(t)
}

fn split_blocks(sys: &LinearSystem, t: &Mat, k: usize) -> (Mat, Mat, Mat, Mat) {
    let p = sys.p();
    let tc = t * &sys.c;
    let trt = linalg::symmetrize(&(t * &sys.r * t.transpose()));
    (
        tc.rows(0, k).into_owned(),
        tc.rows(k, p - k).into_owned(),
        trt.view((0, 0), (k, k)).into_owned(),
        trt.view((k, k), (p - k, p - k)).into_owned(),
    )
}

/// Output transform for the zero-feedthrough case.
pub fn transform_zero_feedthrough(sys: &LinearSystem) -> Result<TransformedSystem> {
    sys.check_shapes()?;
    let (m, p) = (sys.m(), sys.p());
    if p < m {
        return Err(Error::Shape(format!("need p >= m for zero feedthrough (p={p}, m={m})")));
    }
    if !sys.is_zero_feedthrough() {
        return Err(Error::InvalidArgument(
            "transform_zero_feedthrough requires H = 0".into(),
        ));
    }
    let split = svd_split(&sys.cg());
    if split.rank.rank < m {
        return Err(Error::Assumption {
            assumption: "rank CG = m",
            detail: format!("rank CG = {} < m = {m}", split.rank.rank),
        });
    }
    let t = build_output_transform(&split.u_r, &split.u_c, &sys.r)?;
    let (c1, c2, r1, r2) = split_blocks(sys, &t, m);
    Ok(TransformedSystem {
        kind: TransformKind::ZeroFeedthrough,
        t,
        c1,
        c2,
        g1: sys.g.clone(),
        g2: Mat::zeros(sys.n(), 0),
        hbar: Mat::zeros(0, 0),
        r1,
        r2,
        rank: m,
        v: Mat::identity(m, m),
    })
}

/// Output transform for a nonzero feedthrough of any rank.
pub fn transform_feedthrough(sys: &LinearSystem) -> Result<TransformedSystem> {
    sys.check_shapes()?;
    let ts = feedthrough_split(sys)?;
    if ts.rank == 0 {
        return Err(Error::InvalidArgument("transform_feedthrough requires H != 0".into()));
    }
    Ok(ts)
}

/// Feedthrough split allowing `rank H = 0` (then `T = U^T` of an empty split).
pub(crate) fn feedthrough_split(sys: &LinearSystem) -> Result<TransformedSystem> {
    let split = svd_split(&sys.h);
    let r = split.rank.rank;
    let t = build_output_transform(&split.u_r, &split.u_c, &sys.r)?;
    let (c1, c2, r1, r2) = split_blocks(sys, &t, r);
    let hbar = Mat::from_diagonal(&split.sigma);
    let v = linalg::hstack(&split.v_r, &split.v_c);
    Ok(TransformedSystem {
        kind: TransformKind::Feedthrough,
        t,
        c1,
        c2,
        g1: &sys.g * &split.v_r,
        g2: &sys.g * &split.v_c,
        hbar,
        r1,
        r2,
        rank: r,
        v,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RankDiagnostic {
    pub rank: usize,
    pub required: usize,
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    pub condition: f64,
    /// Rank decision is close to the threshold.
    pub near_deficient: bool,
}

impl RankDiagnostic {
    fn new(info: &RankInfo, required: usize) -> Self {
        RankDiagnostic {
            rank: info.rank,
            required,
            singular_values: info.singular_values.clone(),
            threshold: info.threshold,
            condition: info.condition(),
            near_deficient: info.near_deficient(),
        }
    }

    pub fn satisfied(&self) -> bool {
        self.rank == self.required
    }
}

/// PBH rank of `[A - lambda I; X]` (or `[A - lambda I, X]`) at one eigenvalue.
#[derive(Debug, Clone, Serialize)]
pub struct ModeDiagnostic {
    pub eigenvalue: (f64, f64),
    pub pbh_rank: usize,
    pub smallest_singular_value: f64,
}

impl ModeDiagnostic {
    pub fn eigenvalue(&self) -> Complex64 {
        Complex64::new(self.eigenvalue.0, self.eigenvalue.1)
    }
}

fn distinct_eigenvalues(a: &Mat) -> Vec<Complex64> {
    let mut out: Vec<Complex64> = Vec::new();
    let scale = 1.0 + linalg::max_abs(a);
    for z in eigenvalues(a) {
        if !out.iter().any(|w| (w - z).norm() <= 1e-10 * scale) {
            out.push(z);
        }
    }
    out
}

/// PBH test of `[A - lambda I; C]` at every eigenvalue of `A` selected by
/// `select`. Returns one diagnostic per checked mode.
pub fn pbh_modes(a: &Mat, c: &Mat, select: impl Fn(Complex64) -> bool) -> Vec<ModeDiagnostic> {
    let n = a.nrows();
    let ac = to_complex(a);
    let cc = to_complex(c);
    distinct_eigenvalues(a)
        .into_iter()
        .filter(|&z| select(z))
        .map(|z| {
            let mut stacked = DMatrix::<Complex64>::zeros(n + c.nrows(), n);
            let shifted = &ac - DMatrix::<Complex64>::identity(n, n) * z;
            stacked.rows_mut(0, n).copy_from(&shifted);
            if c.nrows() > 0 {
                stacked.rows_mut(n, c.nrows()).copy_from(&cc);
            }
            let info = numerical_rank_complex(&stacked);
            ModeDiagnostic {
                eigenvalue: (z.re, z.im),
                pbh_rank: info.rank,
                smallest_singular_value: info.singular_values.last().copied().unwrap_or(0.0),
            }
        })
        .collect()
}

/// How an assumption maps to left invertibility of the disturbance-to-output map.
#[derive(Debug, Clone, Serialize)]
pub struct InvertibilityNote {
    pub assumption: &'static str,
    pub satisfied: bool,
    pub meaning: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// `[A, C]` observable, `rank G = m`, `[A, Q]` reachable and `R > 0`.
    pub assumption1: bool,
    /// `rank C G = m`.
    pub assumption2: bool,
    /// `rank H = m`.
    pub assumption3: bool,
    /// `rank C2bar G2 = m - rank Hbar`.
    pub assumption4: bool,
    pub observable: bool,
    pub unobservable_modes: Vec<ModeDiagnostic>,
    pub reachable: bool,
    pub unreachable_modes: Vec<ModeDiagnostic>,
    pub r_positive_definite: bool,
    pub r_min_eigenvalue: f64,
    pub q_psd: bool,
    pub q_min_eigenvalue: f64,
    pub rank_g: RankDiagnostic,
    pub rank_cg: RankDiagnostic,
    pub rank_h: RankDiagnostic,
    pub rank_c2g2: RankDiagnostic,
    pub invertibility: Vec<InvertibilityNote>,
    /// Rank decisions that fell near the numerical threshold.
    pub warnings: Vec<String>,
}

impl AssumptionReport {
    /// Re-derives the verdicts from the stored ranks and eigenvalue checks.
    pub fn consistent(&self) -> bool {
        self.assumption2 == self.rank_cg.satisfied()
            && self.assumption3 == self.rank_h.satisfied()
            && self.assumption4 == self.rank_c2g2.satisfied()
            && self.assumption1
                == (self.observable && self.rank_g.satisfied() && self.reachable && self.r_positive_definite)
    }
}

/// Evaluates the four structural assumptions. A failed assumption is reported,
/// never raised.
pub fn validate(sys: &LinearSystem) -> Result<AssumptionReport> {
    sys.check_shapes()?;
    let (n, m, p) = (sys.n(), sys.m(), sys.p());

    let unobservable_modes: Vec<_> = pbh_modes(&sys.a, &sys.c, |_| true)
        .into_iter()
        .filter(|d| d.pbh_rank < n)
        .collect();
    let unreachable_modes: Vec<_> = pbh_modes(&sys.a.transpose(), &sys.q.transpose(), |_| true)
        .into_iter()
        .filter(|d| d.pbh_rank < n)
        .collect();
    let r_min = linalg::min_eigenvalue_sym(&sys.r);
    let r_pd = linalg::is_symmetric(&sys.r, 1e-9) && r_min > 0.0;
    let q_min = linalg::min_eigenvalue_sym(&sys.q);
    let q_psd = linalg::check_psd(&sys.q, "Q").is_ok();

    let rank_g = RankDiagnostic::new(&numerical_rank(&sys.g), m);
    let rank_cg = RankDiagnostic::new(&numerical_rank(&sys.cg()), m);
    let rank_h = RankDiagnostic::new(&numerical_rank(&sys.h), m);

    // C2bar G2 only needs the orthogonal split of H, not the R-weighted part.
    let split = svd_split(&sys.h);
    let c2g2 = split.u_c.transpose() * &sys.c * &sys.g * &split.v_c;
    let rank_c2g2 = RankDiagnostic::new(&numerical_rank(&c2g2), m - split.rank.rank);

    let observable = unobservable_modes.is_empty();
    let reachable = unreachable_modes.is_empty();
    let assumption1 = observable && rank_g.satisfied() && reachable && r_pd;

    let mut warnings = Vec::new();
    for (name, d) in [
        ("G", &rank_g),
        ("CG", &rank_cg),
        ("H", &rank_h),
        ("C2bar G2", &rank_c2g2),
    ] {
        if d.near_deficient {
            warnings.push(format!(
                "rank of {name} decided near threshold (smallest counted singular value {:.3e}, threshold {:.3e})",
                d.singular_values[d.rank - 1],
                d.threshold
            ));
        }
    }

    let invertibility = vec![
        InvertibilityNote {
            assumption: "rank CG = m",
            satisfied: rank_cg.satisfied(),
            meaning: "left invertibility of C(zI-A)^-1 G with delay one",
        },
        InvertibilityNote {
            assumption: "rank H = m",
            satisfied: rank_h.satisfied(),
            meaning: "left invertibility of H + C(zI-A)^-1 G with delay zero",
        },
        InvertibilityNote {
            assumption: "rank C2bar G2 = m - rank Hbar",
            satisfied: rank_c2g2.satisfied(),
            meaning: "left invertibility of H + C(zI-A)^-1 G with delay one",
        },
    ];

    Ok(AssumptionReport {
        n,
        m,
        p,
        assumption1,
        assumption2: rank_cg.satisfied(),
        assumption3: rank_h.satisfied(),
        assumption4: rank_c2g2.satisfied(),
        observable,
        unobservable_modes,
        reachable,
        unreachable_modes,
        r_positive_definite: r_pd,
        r_min_eigenvalue: r_min,
        q_psd,
        q_min_eigenvalue: q_min,
        rank_g,
        rank_cg,
        rank_h,
        rank_c2g2,
        invertibility,
        warnings,
    })
}

/// Sample path of the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub horizon: usize,
    /// `x_0 .. x_T`.
    pub states: Vec<Vector>,
    /// `d_0 .. d_T` (entries past the supplied sequence are zero).
    pub disturbances: Vec<Vector>,
    /// `y_0 .. y_T`.
    pub measurements: Vec<Vector>,
    pub known_inputs: Option<Vec<Vector>>,
    pub seed: u64,
}

/// Simulates the plant for `horizon` steps.
///
/// `d` must hold at least `horizon` vectors; `d_T` (which only enters `y_T`)
/// is taken as zero when not supplied. With `noise_on == false` the
/// recursions hold exactly; with noise, `w_t` and `v_t` are drawn from a
/// ChaCha8 stream seeded by `seed`.
pub fn simulate(
    sys: &LinearSystem,
    d: &[Vector],
    x0: &Vector,
    horizon: usize,
    seed: u64,
    noise_on: bool,
) -> Result<Trajectory> {
    simulate_with_input(sys, d, None, x0, horizon, seed, noise_on)
}

pub fn simulate_with_input(
    sys: &LinearSystem,
    d: &[Vector],
    u: Option<&[Vector]>,
    x0: &Vector,
    horizon: usize,
    seed: u64,
    noise_on: bool,
) -> Result<Trajectory> {
    sys.check_shapes()?;
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    if horizon < 1 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if d.len() < horizon {
        return Err(Error::InvalidArgument(format!(
            "disturbance sequence has {} samples, need at least {horizon}",
            d.len()
        )));
    }
    if x0.len() != n {
        return Err(Error::Shape(format!("x0 has length {}, expected {n}", x0.len())));
    }
    if let Some(dt) = d.iter().find(|v| v.len() != m) {
        return Err(Error::Shape(format!(
            "disturbance sample has length {}, expected {m}",
            dt.len()
        )));
    }
    if let Some(u) = u {
        if sys.known.is_none() {
            return Err(Error::InvalidArgument(
                "known input given but system has no B, D".into(),
            ));
        }
        if u.len() < horizon + 1 {
            return Err(Error::InvalidArgument(format!(
                "known input has {} samples, need {}",
                u.len(),
                horizon + 1
            )));
        }
    }

    let lq = linalg::psd_factor(&sys.q);
    let lr = linalg::psd_factor(&sys.r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |k: usize| -> Vector { Vector::from_fn(k, |_, _| StandardNormal.sample(&mut rng)) };

    let disturbances: Vec<Vector> = (0..=horizon)
        .map(|t| d.get(t).cloned().unwrap_or_else(|| Vector::zeros(m)))
        .collect();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut measurements = Vec::with_capacity(horizon + 1);
    let mut x = x0.clone();
    for t in 0..=horizon {
        let ut = u.map(|u| &u[t]);
        let mut y = &sys.c * &x + &sys.h * &disturbances[t];
        if let Some(du) = sys.known_output_term(ut) {
            y += du;
        }
        if noise_on {
            y += &lr * gauss(p);
        }
        measurements.push(y);
        states.push(x.clone());
        if t < horizon {
            let mut next = &sys.a * &x + &sys.g * &disturbances[t];
            if let Some(bu) = sys.known_state_term(ut) {
                next += bu;
            }
            if noise_on {
                next += &lq * gauss(n);
            }
            x = next;
        }
    }
    Ok(Trajectory {
        horizon,
        states,
        disturbances,
        measurements,
        known_inputs: u.map(|u| u[..=horizon].to_vec()),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, v)
    }

    fn s1() -> LinearSystem {
        LinearSystem::new(
            mat(2, 2, &[0.5, 1.0, 0.0, 0.3]),
            mat(2, 1, &[1.0, 1.0]),
            mat(1, 2, &[1.0, 0.0]),
            Mat::zeros(1, 1),
            Mat::identity(2, 2) * 0.01,
            mat(1, 1, &[0.01]),
        )
        .unwrap()
    }

    #[test]
    fn validate_s1() {
        let rep = validate(&s1()).unwrap();
        assert!(rep.assumption1);
        assert!(rep.assumption2);
        assert!(!rep.assumption3);
        assert!(rep.assumption4);
        assert!(rep.consistent());
    }

    #[test]
    fn validate_zero_output_map() {
        let mut sys = s1();
        sys.c = Mat::zeros(1, 2);
        let rep = validate(&sys).unwrap();
        assert!(!rep.observable);
        assert!(!rep.assumption1);
        assert!(!rep.assumption2);
        assert_eq!(rep.unobservable_modes.len(), 2);
    }

    #[test]
    fn validate_identity_feedthrough() {
        let mut sys = s1();
        sys.c = Mat::zeros(1, 2);
        sys.h = Mat::identity(1, 1);
        assert!(validate(&sys).unwrap().assumption3);
    }

    #[test]
    fn validate_rejects_bad_shapes() {
        let mut sys = s1();
        sys.h = Mat::zeros(2, 2);
        assert!(matches!(validate(&sys), Err(Error::Shape(_))));
    }

    #[test]
    fn transform_zero_feedthrough_square() {
        let ts = transform_zero_feedthrough(&s1()).unwrap();
        assert_eq!(ts.c2.nrows(), 0);
        assert_eq!(ts.t, Mat::identity(1, 1));
    }

    #[test]
    fn transform_zero_feedthrough_s4() {
        let sys = LinearSystem::new(
            mat(2, 2, &[0.5, 1.0, 0.0, 1.4]),
            mat(2, 1, &[1.0, 0.0]),
            Mat::identity(2, 2),
            Mat::zeros(2, 1),
            Mat::identity(2, 2) * 0.01,
            Mat::identity(2, 2),
        )
        .unwrap();
        let ts = transform_zero_feedthrough(&sys).unwrap();
        assert_eq!(ts.t, Mat::identity(2, 2));
        assert_eq!(ts.c1, mat(1, 2, &[1.0, 0.0]));
        assert_eq!(ts.c2, mat(1, 2, &[0.0, 1.0]));
        assert_eq!(ts.r1, mat(1, 1, &[1.0]));
        assert_eq!(ts.r2, mat(1, 1, &[1.0]));
    }

    #[test]
    fn transform_zero_feedthrough_is_permutation_for_axis_aligned() {
        // CG = e_2 in R^3, diagonal R.
        let sys = LinearSystem::new(
            Mat::identity(2, 2) * 0.5,
            mat(2, 1, &[0.0, 1.0]),
            mat(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]),
            Mat::zeros(3, 1),
            Mat::identity(2, 2),
            Mat::from_diagonal(&Vector::from_vec(vec![1.0, 2.0, 3.0])),
        )
        .unwrap();
        let ts = transform_zero_feedthrough(&sys).unwrap();
        for i in 0..3 {
            let row = ts.t.row(i);
            assert_eq!(row.iter().filter(|v| (**v - 1.0).abs() < 1e-12).count(), 1);
            assert_eq!(row.iter().filter(|v| v.abs() < 1e-12).count(), 2);
        }
    }

    #[test]
    fn transform_zero_feedthrough_errors() {
        let mut sys = s1();
        sys.g = Mat::zeros(2, 1);
        assert!(matches!(
            transform_zero_feedthrough(&sys),
            Err(Error::Assumption { .. })
        ));
        let wide = LinearSystem::new(
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            mat(1, 2, &[1.0, 0.0]),
            Mat::zeros(1, 2),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
        )
        .unwrap();
        assert!(matches!(transform_zero_feedthrough(&wide), Err(Error::Shape(_))));
    }

    #[test]
    fn transform_feedthrough_examples() {
        let mut sys = s1();
        sys.h = Mat::identity(1, 1);
        let ts = transform_feedthrough(&sys).unwrap();
        assert_eq!(ts.rank, 1);
        assert_eq!(ts.hbar, Mat::identity(1, 1));
        assert_eq!(ts.c2.nrows(), 0);

        sys.h = mat(1, 1, &[2.0]);
        assert!((transform_feedthrough(&sys).unwrap().hbar[(0, 0)] - 2.0).abs() < 1e-15);

        let tall = LinearSystem::new(
            Mat::identity(2, 2) * 0.5,
            mat(2, 1, &[1.0, 0.0]),
            Mat::identity(2, 2),
            mat(2, 1, &[1.0, 0.0]),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
        )
        .unwrap();
        let ts = transform_feedthrough(&tall).unwrap();
        assert!((ts.hbar[(0, 0)] - 1.0).abs() < 1e-15);
        let th = &ts.t * &tall.h * &ts.v;
        assert!(th[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn simulate_delay_integrator() {
        let one = |v: f64| mat(1, 1, &[v]);
        let sys = LinearSystem::new(one(0.0), one(1.0), one(1.0), one(0.0), one(0.0), one(1.0)).unwrap();
        let d = vec![Vector::from_element(1, 1.0); 10];
        let tr = simulate(&sys, &d, &Vector::zeros(1), 10, 0, false).unwrap();
        assert_eq!(tr.states.len(), 11);
        assert_eq!(tr.measurements.len(), 11);
        assert_eq!(tr.states[0][0], 0.0);
        for t in 1..=10 {
            assert_eq!(tr.states[t][0], 1.0);
            assert_eq!(tr.measurements[t][0], tr.states[t][0]);
        }
    }

    #[test]
    fn simulate_zero_equilibrium_and_errors() {
        let sys = s1();
        let d = vec![Vector::zeros(1); 5];
        let tr = simulate(&sys, &d, &Vector::zeros(2), 5, 3, false).unwrap();
        assert!(tr.states.iter().all(|x| x.iter().all(|v| *v == 0.0)));
        assert!(tr.measurements.iter().all(|y| y[0] == 0.0));
        assert!(simulate(&sys, &d, &Vector::zeros(2), 0, 3, false).is_err());
        assert!(simulate(&sys, &d, &Vector::zeros(2), 6, 3, false).is_err());
    }

    #[test]
    fn simulate_is_deterministic_per_seed() {
        let sys = s1();
        let d = vec![Vector::from_element(1, 0.3); 50];
        let a = simulate(&sys, &d, &Vector::zeros(2), 50, 42, true).unwrap();
        let b = simulate(&sys, &d, &Vector::zeros(2), 50, 42, true).unwrap();
        let c = simulate(&sys, &d, &Vector::zeros(2), 50, 43, true).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
