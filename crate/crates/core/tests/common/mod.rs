//! Fixtures, random systems and independent oracles shared by the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use siselab::{LinearSystem, Mat, Vector};

pub type CMat = DMatrix<Complex64>;

pub fn one(v: f64) -> Mat {
    Mat::from_row_slice(1, 1, &[v])
}

pub fn scalar(a: f64, g: f64, c: f64, h: f64, q: f64, r: f64) -> LinearSystem {
    LinearSystem::new(one(a), one(g), one(c), one(h), one(q), one(r)).unwrap()
}

fn two_state(g: [f64; 2]) -> LinearSystem {
    LinearSystem::new(
        Mat::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.3]),
        Mat::from_row_slice(2, 1, &g),
        Mat::from_row_slice(1, 2, &[1.0, 0.0]),
        Mat::zeros(1, 1),
        Mat::identity(2, 2) * 0.01,
        one(0.01),
    )
    .unwrap()
}

/// Minimum-phase square plant, zeros {0, -0.7}.
pub fn s1() -> LinearSystem {
    two_state([1.0, 1.0])
}

/// Square plant with a zero at -1.7 (plain SISE unstable).
pub fn s2() -> LinearSystem {
    two_state([1.0, 2.0])
}

/// Non-square plant with an unstable mode that the second output sees.
pub fn s4() -> LinearSystem {
    LinearSystem::new(
        Mat::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 1.4]),
        Mat::from_row_slice(2, 1, &[1.0, 0.0]),
        Mat::identity(2, 2),
        Mat::zeros(2, 1),
        Mat::identity(2, 2) * 0.01,
        Mat::identity(2, 2) * 0.01,
    )
    .unwrap()
}

/// `T(z) = (z + 2) / (z - 0.5)`.
pub fn max_phase_scalar() -> LinearSystem {
    scalar(0.5, 2.5, 1.0, 1.0, 0.01, 0.01)
}

pub fn data_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("data")
        .join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

pub fn gauss_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Random PSD matrix `L L^T + eps I` scaled to roughly `scale`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Mat {
    let l = gauss_mat(rng, n, n);
    (&l * l.transpose() / n as f64 + Mat::identity(n, n) * 0.1) * scale
}

fn sv_ratio(m: &Mat) -> f64 {
    let s = m.clone().singular_values();
    let max = s.max();
    if max == 0.0 {
        0.0
    } else {
        s.min() / max
    }
}

/// `[B, AB, ..., A^{n-1} B]`.
pub fn reachability_matrix(a: &Mat, b: &Mat) -> Mat {
    let n = a.nrows();
    let mut blocks = Mat::zeros(n, n * b.ncols());
    let mut cur = b.clone();
    for k in 0..n {
        blocks.columns_mut(k * b.ncols(), b.ncols()).copy_from(&cur);
        cur = a * cur;
    }
    blocks
}

pub fn is_minimal(a: &Mat, g: &Mat, c: &Mat) -> bool {
    let rc = reachability_matrix(a, g);
    let ro = reachability_matrix(&a.transpose(), &c.transpose());
    let rank = |m: &Mat| {
        let s = m.clone().singular_values();
        let tol = 1e-8 * s.max();
        s.iter().filter(|v| **v > tol).count()
    };
    rank(&rc) == a.nrows() && rank(&ro) == a.nrows()
}

/// Random minimal square system; `H = 0` when `zero_feedthrough`, otherwise
/// a well-conditioned invertible `H`. The input-output coupling matrix
/// (`CG` or `H`) has condition number at most 100.
pub fn random_square(rng: &mut ChaCha8Rng, n: usize, m: usize, zero_feedthrough: bool) -> LinearSystem {
    loop {
        let radius = rng.random_range(0.2..0.95);
        let mut a = gauss_mat(rng, n, n);
        let rho = siselab::linalg::spectral_radius(&a);
        if rho > 1e-6 {
            a *= radius / rho;
        }
        let g = gauss_mat(rng, n, m);
        let c = gauss_mat(rng, m, n);
        let h = if zero_feedthrough {
            Mat::zeros(m, m)
        } else {
            gauss_mat(rng, m, m)
        };
        let coupling = if zero_feedthrough { &c * &g } else { h.clone() };
        if sv_ratio(&coupling) < 1e-2 || !is_minimal(&a, &g, &c) {
            continue;
        }
        let q = random_spd(rng, n, 0.01);
        let r = random_spd(rng, m, 0.01);
        return LinearSystem::new(a, g, c, h, q, r).unwrap();
    }
}

// ---------------------------------------------------------------------------
// Rosenbrock determinant oracle.

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det_complex(mut m: CMat) -> Complex64 {
    let n = m.nrows();
    let mut det = Complex64::new(1.0, 0.0);
    for k in 0..n {
        let (mut piv, mut best) = (k, m[(k, k)].norm());
        for i in k + 1..n {
            if m[(i, k)].norm() > best {
                piv = i;
                best = m[(i, k)].norm();
            }
        }
        if best == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if piv != k {
            m.swap_rows(piv, k);
            det = -det;
        }
        let p = m[(k, k)];
        det *= p;
        for i in k + 1..n {
            let f = m[(i, k)] / p;
            for j in k..n {
                let v = m[(k, j)];
                m[(i, j)] -= f * v;
            }
        }
    }
    det
}

/// `det [[zI - A, -G], [C, H]]`.
pub fn rosenbrock_det(sys: &LinearSystem, z: Complex64) -> Complex64 {
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    let mut r = CMat::zeros(n + p, n + m);
    for i in 0..n {
        for j in 0..n {
            r[(i, j)] = Complex64::new(-sys.a[(i, j)], 0.0);
        }
        r[(i, i)] += z;
        for j in 0..m {
            r[(i, n + j)] = Complex64::new(-sys.g[(i, j)], 0.0);
        }
    }
    for i in 0..p {
        for j in 0..n {
            r[(n + i, j)] = Complex64::new(sys.c[(i, j)], 0.0);
        }
        for j in 0..m {
            r[(n + i, n + j)] = Complex64::new(sys.h[(i, j)], 0.0);
        }
    }
    det_complex(r)
}

/// Coefficients `c_0 .. c_deg` (ascending) of a polynomial of degree at most
/// `deg`, from samples on the unit circle (discrete Fourier transform).
pub fn poly_from_samples(f: impl Fn(Complex64) -> Complex64, deg: usize) -> Vec<Complex64> {
    let n = 64.max(2 * (deg + 1));
    let w = |k: usize| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / n as f64);
    let samples: Vec<Complex64> = (0..n).map(|j| f(w(j))).collect();
    (0..=deg)
        .map(|k| {
            samples
                .iter()
                .enumerate()
                .map(|(j, s)| s * w((j * k) % n).conj())
                .sum::<Complex64>()
                / n as f64
        })
        .collect()
}

fn horner(c: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &a in c.iter().rev() {
        dp = dp * z + p;
        p = p * z + a;
    }
    (p, dp)
}

/// All roots of the ascending-coefficient polynomial `c` (Aberth-Ehrlich).
pub fn poly_roots(c: &[Complex64]) -> Vec<Complex64> {
    let mut c = c.to_vec();
    while c.len() > 1 && c.last().unwrap().norm() <= 1e-14 * c.iter().map(|v| v.norm()).fold(0.0, f64::max) {
        c.pop();
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = c[deg];
    let bound = 1.0 + c[..deg].iter().map(|v| (v / lead).norm()).fold(0.0, f64::max);
    let mut z: Vec<Complex64> = (0..deg)
        .map(|k| Complex64::from_polar(bound, 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / deg as f64))
        .collect();
    for _ in 0..500 {
        let mut moved: f64 = 0.0;
        for k in 0..deg {
            let (p, dp) = horner(&c, z[k]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..deg).filter(|&j| j != k).map(|j| 1.0 / (z[k] - z[j])).sum();
            let step = ratio / (1.0 - ratio * repulsion);
            z[k] -= step;
            moved = moved.max(step.norm() / (1.0 + z[k].norm()));
        }
        if moved < 1e-15 {
            break;
        }
    }
    // Newton polish.
    for zk in z.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = horner(&c, *zk);
            if dp.norm() > 0.0 {
                *zk -= p / dp;
            }
        }
    }
    z
}

/// Finite zeros of a square system from its Rosenbrock determinant,
/// with `m` extra zeros at the origin when `H = 0`: the roots of
/// `z^m det R(z)` (or `det R(z)`), which has degree `n`.
pub fn oracle_sise_eigenvalues(sys: &LinearSystem) -> Vec<Complex64> {
    let (n, m) = (sys.n(), sys.m());
    if sys.h.iter().all(|v| *v == 0.0) {
        let coeffs = poly_from_samples(|z| rosenbrock_det(sys, z), n - m);
        let mut roots = poly_roots(&coeffs);
        roots.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), m));
        roots
    } else {
        poly_roots(&poly_from_samples(|z| rosenbrock_det(sys, z), n))
    }
}

/// Smallest worst-case distance over all pairings (brute force, `n <= 8`).
pub fn best_pairing_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let worst = p
            .iter()
            .enumerate()
            .map(|(i, &j)| (a[i] - b[j]).norm())
            .fold(0.0, f64::max);
        best = best.min(worst);
    });
    best
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

// ---------------------------------------------------------------------------
// PBH detectability oracle.

/// `(A, C)` is detectable iff `[lambda I - A; C]` has full column rank at every
/// eigenvalue with `|lambda| >= 1`.
pub fn pbh_detectable(a: &Mat, c: &Mat) -> bool {
    let n = a.nrows();
    let eig = a.clone().complex_eigenvalues();
    eig.iter().filter(|l| l.norm() >= 1.0 - 1e-9).all(|&l| {
        let mut m = CMat::zeros(n + c.nrows(), n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex64::new(-a[(i, j)], 0.0);
            }
            m[(i, i)] += l;
        }
        for i in 0..c.nrows() {
            for j in 0..n {
                m[(n + i, j)] = Complex64::new(c[(i, j)], 0.0);
            }
        }
        let s = m.singular_values();
        let scale = s.max().max(1.0);
        s.min() > 1e-7 * scale
    })
}

pub fn spectral_radius(m: &Mat) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn uniform_inputs(rng: &mut ChaCha8Rng, m: usize, len: usize) -> Vec<Vector> {
    (0..len)
        .map(|_| Vector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)))
        .collect()
}

/// Random system with `p > m` outputs; `H = 0` or full column rank `H`.
pub fn random_tall(rng: &mut ChaCha8Rng, n: usize, m: usize, extra: usize, zero_feedthrough: bool) -> LinearSystem {
    let p = m + extra;
    loop {
        let radius = rng.random_range(0.2..1.4);
        let mut a = gauss_mat(rng, n, n);
        let rho = siselab::linalg::spectral_radius(&a);
        if rho > 1e-6 {
            a *= radius / rho;
        }
        let g = gauss_mat(rng, n, m);
        let c = gauss_mat(rng, p, n);
        let h = if zero_feedthrough {
            Mat::zeros(p, m)
        } else {
            gauss_mat(rng, p, m)
        };
        let coupling = if zero_feedthrough { &c * &g } else { h.clone() };
        if sv_ratio(&coupling) < 1e-2 {
            continue;
        }
        let q = random_spd(rng, n, 0.01);
        let r = random_spd(rng, p, 0.01);
        return LinearSystem::new(a, g, c, h, q, r).unwrap();
    }
}
