//! The two-class k-server system with exponential service and patience.
//!
//! The virtual queueing time is augmented with the number of busy servers
//! per class just before the next service start, which makes the process
//! Markov. Boundary states (no virtual wait, `n <= k-1` busy) satisfy a
//! level recursion `p_n = p_{n+1} R_{n+1}`; the waiting region is captured
//! by a vector LST `psi(s) = p_{k-1} C(s)` where `C(s)` is a matrix path-sum
//! series over an anti-diagonal lattice. The boundary vector `p_{k-1}` is
//! the left null direction of a `k x k` system built from `C(theta_i)` and
//! the jump matrices at zero, scaled by a normalization that needs the
//! derivative series `C'(theta_i)` as well.
//!
//! Equal service rates collapse the matrices to scalars; that fast path is
//! [`solve_mmk_equal_mu`]. A single server (`k = 1`) is the exponential
//! single-server model and is routed to the [`crate::mg1`] solver.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::mg1::solve_mg1;
use crate::model::{Mg1Config, MmkConfig};
use crate::series::{
    matrix_series, scalar_series, Bidiagonal, JumpKernel, MatrixSeries, OffDiagonal,
    ScalarBranch, SeriesControls, SeriesDiagnostics,
};

/// Boundary-level transition matrices and the reduction matrices derived
/// from them.
#[derive(Debug, Clone)]
pub struct BoundaryMatrices {
    servers: usize,
    /// `Lambda_n` for `n = 0..=k-2`: `(n+1) x (n+2)` arrival matrices.
    arrivals: Vec<DMatrix<f64>>,
    /// `M_n` for `n = 1..=k-1`: `(n+1) x n` service matrices.
    services: Vec<DMatrix<f64>>,
    /// `Delta_n` for `n = 1..=k-1`: diagonal service-rate matrices.
    rate_diagonals: Vec<DMatrix<f64>>,
    /// `R_n` for `n = 1..=k-1`: `(n+1) x n` reduction matrices.
    reductions: Vec<DMatrix<f64>>,
}

impl BoundaryMatrices {
    pub fn servers(&self) -> usize {
        self.servers
    }

    /// `Lambda_n`, defined for `0 <= n <= k-2`.
    pub fn arrival(&self, n: usize) -> &DMatrix<f64> {
        &self.arrivals[n]
    }

    /// `M_n`, defined for `1 <= n <= k-1`.
    pub fn service(&self, n: usize) -> &DMatrix<f64> {
        &self.services[n - 1]
    }

    /// `Delta_n`, defined for `1 <= n <= k-1`.
    pub fn rate_diagonal(&self, n: usize) -> &DMatrix<f64> {
        &self.rate_diagonals[n - 1]
    }

    /// `R_n`, defined for `1 <= n <= k-1`.
    pub fn reduction(&self, n: usize) -> &DMatrix<f64> {
        &self.reductions[n - 1]
    }

    /// `Delta_{k-1} - R_{k-1} Lambda_{k-2}`, the coupling block of `D(s)`.
    fn coupling(&self) -> DMatrix<f64> {
        let k = self.servers;
        self.rate_diagonal(k - 1) - self.reduction(k - 1) * self.arrival(k - 2)
    }
}

/// Build the boundary matrices for `k >= 2` and run the `R_n` recursion.
pub fn build_boundary(config: &MmkConfig) -> Result<BoundaryMatrices> {
    config.validate()?;
    let k = config.servers;
    if k < 2 {
        return Err(Error::InvalidParameter(
            "build_boundary requires at least two servers; k = 1 is the single-server model"
                .into(),
        ));
    }
    let (mu1, mu2) = config.service_rates();
    let lambda1 = config.class1.arrival_rate;
    let lambda2 = config.class2.arrival_rate;
    let lambda_total = lambda1 + lambda2;

    let arrivals: Vec<DMatrix<f64>> = (0..=k - 2)
        .map(|n| {
            let mut m = DMatrix::zeros(n + 1, n + 2);
            for i in 0..=n {
                m[(i, i + 1)] = lambda1;
                m[(i, i)] = lambda2;
            }
            m
        })
        .collect();

    let services: Vec<DMatrix<f64>> = (1..=k - 1)
        .map(|n| {
            let mut m = DMatrix::zeros(n + 1, n);
            for i in 1..=n {
                m[(i, i - 1)] = i as f64 * mu1;
            }
            for i in 0..n {
                m[(i, i)] = (n - i) as f64 * mu2;
            }
            m
        })
        .collect();

    let rate_diagonals: Vec<DMatrix<f64>> = (1..=k - 1)
        .map(|n| {
            DMatrix::from_fn(n + 1, n + 1, |r, c| {
                if r == c {
                    r as f64 * mu1 + (n - r) as f64 * mu2
                } else {
                    0.0
                }
            })
        })
        .collect();

    let mut reductions: Vec<DMatrix<f64>> = Vec::with_capacity(k - 1);
    if lambda_total == 0.0 {
        // No arrivals: the reductions only ever multiply zero arrival
        // matrices, so any finite value works; zero keeps D(s) sane.
        for n in 1..=k - 1 {
            reductions.push(DMatrix::zeros(n + 1, n));
        }
    } else {
        reductions.push(&services[0] / lambda_total);
        for n in 1..=k - 2 {
            let core = DMatrix::identity(n + 1, n + 1) * lambda_total
                + &rate_diagonals[n - 1]
                - &reductions[n - 1] * &arrivals[n - 1];
            let inverse = core.try_inverse().ok_or_else(|| {
                Error::BoundarySolve(format!("reduction recursion hit a singular core at level {n}"))
            })?;
            reductions.push(&services[n] * inverse);
        }
    }

    Ok(BoundaryMatrices { servers: k, arrivals, services, rate_diagonals, reductions })
}

/// Entries of the four bidiagonal jump blocks at argument `u`.
///
/// The series is accumulated in a sign-flipped basis: conjugating by the
/// diagonal `T = diag((-gamma)^r)` multiplies the superdiagonal of `H_1` and
/// the subdiagonal of `H_2` by `-gamma` and `-1/gamma` respectively, which
/// turns both negative off-diagonals positive. Every path term of the series
/// is then nonnegative, so the accumulated matrices keep full relative
/// precision regardless of magnitude; the cancellation the model genuinely
/// contains is deferred to a few final contractions done in compensated
/// arithmetic. Any `gamma > 0` is exact; it is chosen to balance the two
/// off-diagonal magnitudes.
struct MmkKernel {
    k: usize,
    mu1: f64,
    mu2: f64,
    lambda1: f64,
    lambda2: f64,
    gamma: f64,
}

impl MmkKernel {
    fn new(config: &MmkConfig) -> Self {
        let (mu1, mu2) = config.service_rates();
        let lambda1 = config.class1.arrival_rate;
        let lambda2 = config.class2.arrival_rate;
        let gamma = if lambda1 > 0.0 && lambda2 > 0.0 {
            (lambda2 * mu1 / (lambda1 * mu2)).sqrt().clamp(1e-3, 1e3)
        } else {
            1.0
        };
        MmkKernel { k: config.servers, mu1, mu2, lambda1, lambda2, gamma }
    }

    /// Power tables of `-gamma` and of its reciprocal, for undoing the
    /// sign-flipped basis.
    fn basis_powers(&self) -> (Vec<TwoFloat>, Vec<TwoFloat>) {
        (
            power_table(TwoFloat::from_f64(-self.gamma), self.k),
            power_table(TwoFloat::recip(-self.gamma), self.k),
        )
    }

    /// `A_1(u)` and `A_2(u)` as dense matrices.
    fn jump_dense(&self, u: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let (a1, a2) = self.jump_bidiagonal(u);
        (a1.to_dense(), a2.to_dense())
    }

    fn jump_bidiagonal(&self, u: f64) -> (Bidiagonal, Bidiagonal) {
        let k = self.k;
        let mut a1 = Bidiagonal { diag: vec![0.0; k], off: vec![0.0; k], kind: OffDiagonal::Super };
        let mut a2 = Bidiagonal { diag: vec![0.0; k], off: vec![0.0; k], kind: OffDiagonal::Sub };
        for i in 0..k {
            let denom1 = u + (i + 1) as f64 * self.mu1 + (k - 1 - i) as f64 * self.mu2;
            a1.diag[i] = self.lambda1 * (u + (k - 1 - i) as f64 * self.mu2) / denom1;
            let denom2 = u + i as f64 * self.mu1 + (k - i) as f64 * self.mu2;
            a2.diag[i] = self.lambda2 * (u + i as f64 * self.mu1) / denom2;
        }
        for r in 0..k.saturating_sub(1) {
            // entry (r, r+1) of A_1
            let denom = u + (r + 1) as f64 * self.mu1 + (k - 1 - r) as f64 * self.mu2;
            a1.off[r] = -self.lambda1 * (k - 1 - r) as f64 * self.mu2 / denom;
        }
        for r in 1..k {
            // entry (r, r-1) of A_2
            let denom = u + r as f64 * self.mu1 + (k - r) as f64 * self.mu2;
            a2.off[r] = -self.lambda2 * r as f64 * self.mu1 / denom;
        }
        (a1, a2)
    }

    /// Derivatives `A_1'(u)`, `A_2'(u)`, valid at `u = 0` as well.
    fn jump_derivative_bidiagonal(&self, u: f64) -> (Bidiagonal, Bidiagonal) {
        let k = self.k;
        let mut a1 = Bidiagonal { diag: vec![0.0; k], off: vec![0.0; k], kind: OffDiagonal::Super };
        let mut a2 = Bidiagonal { diag: vec![0.0; k], off: vec![0.0; k], kind: OffDiagonal::Sub };
        for i in 0..k {
            let denom1 = u + (i + 1) as f64 * self.mu1 + (k - 1 - i) as f64 * self.mu2;
            a1.diag[i] = self.lambda1 * (i + 1) as f64 * self.mu1 / (denom1 * denom1);
            let denom2 = u + i as f64 * self.mu1 + (k - i) as f64 * self.mu2;
            a2.diag[i] = self.lambda2 * (k - i) as f64 * self.mu2 / (denom2 * denom2);
        }
        for r in 0..k.saturating_sub(1) {
            let denom = u + (r + 1) as f64 * self.mu1 + (k - 1 - r) as f64 * self.mu2;
            a1.off[r] = self.lambda1 * (k - 1 - r) as f64 * self.mu2 / (denom * denom);
        }
        for r in 1..k {
            let denom = u + r as f64 * self.mu1 + (k - r) as f64 * self.mu2;
            a2.off[r] = self.lambda2 * r as f64 * self.mu1 / (denom * denom);
        }
        (a1, a2)
    }
}

impl JumpKernel for MmkKernel {
    /// Sign-flipped `H_i(u)` and `H_i'(u)`: with `b = numerator rate mass`
    /// and `d = u + total rate mass`, the closed forms are
    /// `H.diag = lam (u+b) / (u d)`, `|H.off| = lam c / (u d)`,
    /// `H'.diag = -lam ((u+b)^2 + (d-u-b) b) / (u d)^2` and
    /// `|H.off|' = -lam c (u + d) / (u d)^2`; the off-diagonals carry the
    /// positive basis factor instead of their original minus sign.
    fn eval(&self, u: f64, h: &mut [Bidiagonal; 2], hp: &mut [Bidiagonal; 2]) {
        let k = self.k;
        for r in 0..k {
            // Class-1 block: b = (k-1-r) mu2 is the "stay" mass, the
            // superdiagonal couples through c = (k-1-r) mu2 as well, with
            // a = (r+1) mu1 completing the denominator.
            let a1 = (r + 1) as f64 * self.mu1;
            let b1 = (k - 1 - r) as f64 * self.mu2;
            let d1 = u + a1 + b1;
            let ud1 = u * d1;
            h[0].diag[r] = self.lambda1 * (u + b1) / ud1;
            hp[0].diag[r] = -self.lambda1 * ((u + b1) * (u + b1) + a1 * b1) / (ud1 * ud1);

            // Class-2 block: b = r mu1, a = (k-r) mu2.
            let a2 = (k - r) as f64 * self.mu2;
            let b2 = r as f64 * self.mu1;
            let d2 = u + a2 + b2;
            let ud2 = u * d2;
            h[1].diag[r] = self.lambda2 * (u + b2) / ud2;
            hp[1].diag[r] = -self.lambda2 * ((u + b2) * (u + b2) + a2 * b2) / (ud2 * ud2);
        }
        for r in 0..k.saturating_sub(1) {
            // entry (r, r+1): original sign minus, flipped by -gamma.
            let c = (k - 1 - r) as f64 * self.mu2;
            let d = u + (r + 1) as f64 * self.mu1 + c;
            let ud = u * d;
            h[0].off[r] = self.gamma * self.lambda1 * c / ud;
            hp[0].off[r] = -self.gamma * self.lambda1 * c * (u + d) / (ud * ud);
        }
        h[0].off[k - 1] = 0.0;
        hp[0].off[k - 1] = 0.0;
        h[1].off[0] = 0.0;
        hp[1].off[0] = 0.0;
        for r in 1..k {
            // entry (r, r-1): original sign minus, flipped by -1/gamma.
            let c = r as f64 * self.mu1;
            let d = u + c + (k - r) as f64 * self.mu2;
            let ud = u * d;
            h[1].off[r] = self.lambda2 * c / (self.gamma * ud);
            hp[1].off[r] = -self.lambda2 * c * (u + d) / (self.gamma * ud * ud);
        }
        h[0].kind = OffDiagonal::Super;
        hp[0].kind = OffDiagonal::Super;
        h[1].kind = OffDiagonal::Sub;
        hp[1].kind = OffDiagonal::Sub;
    }

    fn dimension(&self) -> usize {
        self.k
    }
}

/// `k x k` grid of two-float entries: the original-basis series matrices are
/// carried in this form so that the deeply cancelling final contractions can
/// run in compensated arithmetic.
struct DdGrid {
    k: usize,
    cells: Vec<TwoFloat>,
}

impl DdGrid {
    fn zeros(k: usize) -> Self {
        DdGrid { k, cells: vec![TwoFloat::zero(); k * k] }
    }

    #[inline]
    fn get(&self, r: usize, c: usize) -> TwoFloat {
        self.cells[r * self.k + c]
    }

    #[inline]
    fn set(&mut self, r: usize, c: usize, value: TwoFloat) {
        self.cells[r * self.k + c] = value;
    }
}

/// Undo the sign-flipped similarity: `X[r, c] = t[r] * Xt[r, c] * s[c]` with
/// `t` the powers of `-gamma` and `s` the powers of its reciprocal.
fn untransform(grid: &DMatrix<f64>, t: &[TwoFloat], s: &[TwoFloat]) -> DdGrid {
    let k = t.len();
    let mut out = DdGrid::zeros(k);
    for r in 0..k {
        for c in 0..k {
            out.set(r, c, t[r].mul_f64(grid[(r, c)]).mul_dd(s[c]));
        }
    }
    out
}

/// Original-basis `C(s)` and `C'(s)` in two-float precision, assembled from
/// the transformed running sums: `C = unT(sum C) + S unT(sum C/u)` and
/// `C' = unT(sum C') + S (unT(sum C'/u) - unT(sum C/u^2))`, with `S` the
/// coupling block applied after the basis change so no cancellation is baked
/// into rounded intermediates.
fn original_basis_series(
    series: &MatrixSeries,
    coupling: &DMatrix<f64>,
    t: &[TwoFloat],
    s: &[TwoFloat],
) -> (DdGrid, DdGrid) {
    let k = t.len();
    let g_c = untransform(&series.sum_c, t, s);
    let g_cu = untransform(&series.sum_c_over_u, t, s);
    let g_cu2 = untransform(&series.sum_c_over_u2, t, s);
    let g_p = untransform(&series.sum_cp, t, s);
    let g_pu = untransform(&series.sum_cp_over_u, t, s);

    let mut value = DdGrid::zeros(k);
    let mut deriv = DdGrid::zeros(k);
    for r in 0..k {
        for c in 0..k {
            let mut acc = g_c.get(r, c);
            for m in 0..k {
                let cell = g_cu.get(m, c);
                acc.add_product(coupling[(r, m)], cell.hi);
                acc.add_product(coupling[(r, m)], cell.lo);
            }
            value.set(r, c, acc);

            let mut acc = g_p.get(r, c);
            for m in 0..k {
                let cell = g_pu.get(m, c).sub_dd(g_cu2.get(m, c));
                acc.add_product(coupling[(r, m)], cell.hi);
                acc.add_product(coupling[(r, m)], cell.lo);
            }
            deriv.set(r, c, acc);
        }
    }
    (value, deriv)
}

/// The `k x k` blocks of the vector fixed point at argument `s > 0`:
/// `(A_1(s), A_2(s), D(s), H_1(s), H_2(s))`.
pub fn jump_matrices(
    config: &MmkConfig,
    s: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!("jump_matrices requires s > 0, got {s}")));
    }
    let boundary = build_boundary(config)?;
    let kernel = MmkKernel::new(config);
    let (a1, a2) = kernel.jump_dense(s);
    let k = config.servers;
    let d = DMatrix::identity(k, k) + boundary.coupling() / s;
    let h1 = &a1 / s;
    let h2 = &a2 / s;
    Ok((a1, a2, d, h1, h2))
}

/// Derivatives of the jump matrices, exposed for finite-difference checks.
pub fn jump_matrix_derivatives(config: &MmkConfig, s: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    config.validate()?;
    if config.servers < 2 {
        return Err(Error::InvalidParameter("requires at least two servers".into()));
    }
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!("requires s >= 0, got {s}")));
    }
    let kernel = MmkKernel::new(config);
    let (d1, d2) = kernel.jump_derivative_bidiagonal(s);
    Ok((d1.to_dense(), d2.to_dense()))
}

/// `C(s)` and `C'(s)` with the scale multiplied back in, plus diagnostics.
/// The solver itself works with the scaled representation.
pub fn c_matrix_series(
    config: &MmkConfig,
    s: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, SeriesDiagnostics)> {
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!("c_matrix_series requires s > 0, got {s}")));
    }
    let boundary = build_boundary(config)?;
    let series = run_matrix_series(config, &boundary, s)?;
    let coupling = boundary.coupling();
    let scale = series.diagnostics.log_scale.exp();
    Ok((
        series.value(&coupling) * scale,
        series.deriv(&coupling) * scale,
        series.diagnostics,
    ))
}

fn run_matrix_series(
    config: &MmkConfig,
    _boundary: &BoundaryMatrices,
    s: f64,
) -> Result<MatrixSeries> {
    let kernel = MmkKernel::new(config);
    let theta = config.patience_rates();
    let series = matrix_series(
        &kernel,
        theta,
        s,
        SeriesControls { tolerance: config.tolerance, max_diagonal: config.max_diagonal },
    );
    if !series.diagnostics.converged {
        return Err(Error::NonConvergence {
            max_diagonal: config.max_diagonal,
            last_ratio: series.diagnostics.tail_bound,
        });
    }
    Ok(series)
}

/// Solved k-server system. For `k = 1` and for the equal-rate scalar path
/// the vectors are filled so that their sums carry the scalar quantities.
#[derive(Debug, Clone)]
pub struct MmkSolution {
    /// `p_n` for `n = 0..=k-1`: atoms `P(W = 0, N_1 = i, N_2 = n - i)`.
    pub p_vectors: Vec<RowDVector<f64>>,
    /// `psi(theta_1)`, `psi(theta_2)` as length-k row vectors.
    pub psi_theta: [RowDVector<f64>; 2],
    /// `psi'(theta_1)`, `psi'(theta_2)`.
    pub dpsi_theta: [RowDVector<f64>; 2],
    /// `phi(0)`: the stationary mass with positive virtual wait, by state.
    pub phi0: RowDVector<f64>,
    pub truncation_diagonal_used: usize,
    pub tail_bound: f64,
}

impl MmkSolution {
    pub fn servers(&self) -> usize {
        self.p_vectors.len()
    }

    /// Total boundary atom mass below level `k-1`.
    pub fn mass_below_top(&self) -> f64 {
        self.p_vectors[..self.p_vectors.len() - 1]
            .iter()
            .map(|p| p.sum())
            .sum()
    }

    /// `P(T_i > W)` for class `i` (0-based).
    pub fn p_serve(&self, class: usize) -> f64 {
        self.mass_below_top() + self.psi_theta[class].sum()
    }

    /// `E(W e^{-theta_i W}) = -psi'(theta_i) . e` for class `i`.
    pub fn wait_transform(&self, class: usize) -> f64 {
        -self.dpsi_theta[class].sum()
    }

    /// `sum_n p_n . e + phi(0) . e`; equals one for a consistent solve.
    pub fn total_mass(&self) -> f64 {
        self.p_vectors.iter().map(|p| p.sum()).sum::<f64>() + self.phi0.sum()
    }
}

/// Tolerated relative negativity in the null direction before the solve is
/// declared broken.
const NEGATIVITY_TOL: f64 = 1e-12;

fn trivial_solution(k: usize) -> MmkSolution {
    let mut p_vectors: Vec<RowDVector<f64>> =
        (0..k).map(|n| RowDVector::zeros(n + 1)).collect();
    p_vectors[0][0] = 1.0;
    MmkSolution {
        p_vectors,
        psi_theta: [RowDVector::zeros(k), RowDVector::zeros(k)],
        dpsi_theta: [RowDVector::zeros(k), RowDVector::zeros(k)],
        phi0: RowDVector::zeros(k),
        truncation_diagonal_used: 0,
        tail_bound: 0.0,
    }
}

fn solution_from_mg1(config: &MmkConfig) -> Result<MmkSolution> {
    let mg1_config = Mg1Config {
        class1: config.class1.clone(),
        class2: config.class2.clone(),
        tolerance: config.tolerance,
        max_diagonal: config.max_diagonal,
    };
    let solution = solve_mg1(&mg1_config)?;
    let theta = config.patience_rates();
    let psi = [theta.0, theta.1].map(|rate| {
        RowDVector::from_element(1, solution.psi_at(rate).expect("branch rate present"))
    });
    let dpsi = [theta.0, theta.1].map(|rate| {
        RowDVector::from_element(1, solution.dpsi_at(rate).expect("branch rate present"))
    });
    Ok(MmkSolution {
        p_vectors: vec![RowDVector::from_element(1, solution.p0)],
        psi_theta: psi,
        dpsi_theta: dpsi,
        phi0: RowDVector::from_element(1, 1.0 - solution.p0),
        truncation_diagonal_used: solution.truncation_diagonal_used,
        tail_bound: solution.tail_bound,
    })
}

/// Solve the general two-rate system. `k = 1` is routed to the
/// single-server solver; an empty system short-circuits.
///
/// Class labels are mathematically symmetric, but in deep overload one
/// orientation can be numerically benign while the other collapses; when
/// the direct solve fails validation, the label-swapped system is solved
/// and the solution swapped back (an exact identity).
pub fn solve_mmk(config: &MmkConfig) -> Result<MmkSolution> {
    config.validate()?;
    match solve_mmk_oriented(config) {
        Ok(solution) => Ok(solution),
        Err(err @ (Error::InvalidSolution(_) | Error::BoundarySolve(_))) => {
            let swapped = MmkConfig {
                servers: config.servers,
                class1: config.class2.clone(),
                class2: config.class1.clone(),
                tolerance: config.tolerance,
                max_diagonal: config.max_diagonal,
            };
            solve_mmk_oriented(&swapped).map(swap_solution).map_err(|_| err)
        }
        Err(err) => Err(err),
    }
}

fn swap_solution(solution: MmkSolution) -> MmkSolution {
    let reverse = |v: &RowDVector<f64>|reverse_states(v);
    MmkSolution {
        p_vectors: solution.p_vectors.iter().map(reverse).collect(),
        psi_theta: [reverse(&solution.psi_theta[1]), reverse(&solution.psi_theta[0])],
        dpsi_theta: [reverse(&solution.dpsi_theta[1]), reverse(&solution.dpsi_theta[0])],
        phi0: reverse(&solution.phi0),
        truncation_diagonal_used: solution.truncation_diagonal_used,
        tail_bound: solution.tail_bound,
    }
}

/// State `(N_1 = i, N_2 = n - i)` becomes `(N_1 = n - i, N_2 = i)` under a
/// class swap, which reverses every level vector.
fn reverse_states(v: &RowDVector<f64>) -> RowDVector<f64> {
    RowDVector::from_iterator(v.len(), v.iter().rev().copied())
}

fn solve_mmk_oriented(config: &MmkConfig) -> Result<MmkSolution> {
    if config.servers == 1 {
        return solution_from_mg1(config);
    }
    if config.total_arrival_rate() == 0.0 {
        return Ok(trivial_solution(config.servers));
    }

    let k = config.servers;
    let theta = config.patience_rates();
    let boundary = build_boundary(config)?;
    let coupling = boundary.coupling();
    let kernel = MmkKernel::new(config);

    let (powers_t, powers_s) = kernel.basis_powers();

    let series1 = run_matrix_series(config, &boundary, theta.0)?;
    let series2 = if theta.1 == theta.0 {
        None
    } else {
        Some(run_matrix_series(config, &boundary, theta.1)?)
    };
    let series2_ref = series2.as_ref().unwrap_or(&series1);

    let (value1, deriv1) = original_basis_series(&series1, &coupling, &powers_t, &powers_s);
    let (value2, deriv2) = original_basis_series(series2_ref, &coupling, &powers_t, &powers_s);

    let log1 = series1.diagnostics.log_scale;
    let log2 = series2_ref.diagnostics.log_scale;
    let log_max = log1.max(log2);
    let weight1 = (log1 - log_max).exp();
    let weight2 = (log2 - log_max).exp();
    let weight0 = (-log_max).exp();

    let (a1_zero_bd, a2_zero_bd) = kernel.jump_bidiagonal(0.0);
    let (a1_zero, a2_zero) = (a1_zero_bd.to_dense(), a2_zero_bd.to_dense());

    // Homogeneous boundary system, with the shared series scale divided out:
    // 0 = p_{k-1} (S + C(th1) A_1(0) + C(th2) A_2(0)). Each C A_i(0) entry
    // is a two-term combination that can cancel to the full model depth, so
    // the assembly runs in compensated arithmetic on the two-float grids.
    let mut system = DMatrix::zeros(k, k);
    for r in 0..k {
        for c in 0..k {
            let mut acc = TwoFloat::zero();
            acc.add_product(weight0, coupling[(r, c)]);
            let mut take = |weight: f64, entry: f64, cell: TwoFloat| {
                acc.add_product3(weight, entry, cell.hi);
                acc.add_product3(weight, entry, cell.lo);
            };
            // (C1 A_1(0))[r, c]: diagonal plus superdiagonal of A_1.
            take(weight1, a1_zero_bd.diag[c], value1.get(r, c));
            if c >= 1 {
                take(weight1, a1_zero_bd.off[c - 1], value1.get(r, c - 1));
            }
            // (C2 A_2(0))[r, c]: diagonal plus subdiagonal of A_2.
            take(weight2, a2_zero_bd.diag[c], value2.get(r, c));
            if c + 1 < k {
                take(weight2, a2_zero_bd.off[c + 1], value2.get(r, c + 1));
            }
            system[(r, c)] = acc.value();
        }
    }

    // Column equilibration: rescaling columns leaves the left null space
    // untouched but collapses the enormous dynamic range the series scales
    // can induce under overload, keeping the rank decision meaningful.
    for mut column in system.column_iter_mut() {
        let peak = column.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if peak > 0.0 {
            column /= peak;
        }
    }

    // Deep overload can underflow entire rows of the system: those states
    // carry stationary mass below the floating-point range, and leaving them
    // in manufactures spurious null directions. Pin them to zero and solve
    // on the live states only.
    let live: Vec<usize> = (0..k)
        .filter(|&r| system.row(r).iter().any(|x| x.abs() > 1e-150))
        .collect();
    if live.is_empty() {
        return Err(Error::BoundarySolve("boundary system underflowed entirely".into()));
    }
    let reduced = DMatrix::from_fn(live.len(), k, |r, c| system[(live[r], c)]);

    let svd = reduced.transpose().svd(true, true);
    let singular = &svd.singular_values;
    let sigma_max = singular.iter().cloned().fold(0.0f64, f64::max);
    let sigma_min = singular.iter().cloned().fold(f64::INFINITY, f64::min);
    if sigma_min > 1e-6 * sigma_max {
        return Err(Error::BoundarySolve(format!(
            "no null direction: smallest singular value {sigma_min:.3e} vs largest {sigma_max:.3e}"
        )));
    }

    // The wait mass phi(0) . e needs p_{k-1} (C(th_i) A_i'(0) + C'(th_i) A_i(0)) . e.
    // A_i(0) has exactly zero row sums (the jump transform conserves mass at
    // s = 0), so the C' term drops out of the e-sum analytically; evaluating
    // it numerically instead would inject the full cancellation noise of the
    // derivative series into the normalization. A_i'(0) . e collapses to
    // lambda_i over the state's total service rate, the multi-rate analogue
    // of the lambda_i / (k mu) factor of the equal-rate normalization.
    let (mu1, mu2) = config.service_rates();
    let lambda = [config.class1.arrival_rate, config.class2.arrival_rate];
    let a1p_row_sums: Vec<f64> = (0..k)
        .map(|r| lambda[0] / ((r + 1) as f64 * mu1 + (k - 1 - r) as f64 * mu2))
        .collect();
    let a2p_row_sums: Vec<f64> = (0..k)
        .map(|r| lambda[1] / (r as f64 * mu1 + (k - r) as f64 * mu2))
        .collect();
    let wait_mass_contraction: Vec<TwoFloat> = (0..k)
        .map(|r| {
            let mut acc = TwoFloat::zero();
            for c in 0..k {
                let cell = value1.get(r, c);
                acc.add_product3(weight1, a1p_row_sums[c], cell.hi);
                acc.add_product3(weight1, a1p_row_sums[c], cell.lo);
                let cell = value2.get(r, c);
                acc.add_product3(weight2, a2p_row_sums[c], cell.hi);
                acc.add_product3(weight2, a2p_row_sums[c], cell.lo);
            }
            acc
        })
        .collect();

    // Deep overload compresses the boundary system into a graded singular
    // cascade: the trailing constraints sit at the floating-point noise
    // floor, and the directions they fail to pin are exactly the ones that
    // contribute nothing to psi. Every singular direction at that floor is
    // therefore a candidate; the stationary one is sign-clean and carries
    // the dominant normalization mass.
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    struct Candidate {
        direction: RowDVector<f64>,
        levels: Vec<RowDVector<f64>>,
        wait_mass: f64,
        denom: f64,
    }
    let mut best: Option<Candidate> = None;
    let mut dirtiest = 0.0f64;
    for index in 0..live.len() {
        if singular[index] > 1e-6 * sigma_max && singular[index] != sigma_min {
            continue;
        }
        // Right null vector of the transpose = left null direction,
        // embedded back into the full state space (dead states stay zero).
        let mut direction = RowDVector::zeros(k);
        for (slot, &state) in live.iter().enumerate() {
            direction[state] = v_t[(index, slot)];
        }
        if direction.sum() < 0.0 {
            direction = -direction;
        }
        let peak = direction.iter().cloned().fold(0.0f64, f64::max);
        let worst = direction.iter().cloned().fold(0.0f64, f64::min);
        if worst < -NEGATIVITY_TOL * peak {
            dirtiest = dirtiest.min(worst / peak);
            continue;
        }
        for entry in direction.iter_mut() {
            if *entry < 0.0 {
                *entry = 0.0;
            }
        }
        direction /= direction.sum();

        // Back-fill the lower boundary levels: p_n = p_{n+1} R_{n+1}.
        let mut levels: Vec<RowDVector<f64>> = vec![RowDVector::zeros(1); k];
        levels[k - 1] = direction.clone();
        for n in (0..k - 1).rev() {
            levels[n] = &levels[n + 1] * boundary.reduction(n + 1);
        }
        let boundary_mass: f64 = levels.iter().map(|p| p.sum()).sum();
        let wait_mass = (&direction * &wait_mass_contraction)[0];
        if std::env::var("RENQ_DEBUG_NULL").is_ok() {
            let abs_sum: f64 = direction
                .iter()
                .zip(wait_mass_contraction.iter())
                .map(|(a, b)| (a * b).abs())
                .sum();
            let psi1_raw = &direction * &value1;
            let psi1_abs: f64 = (0..k)
                .map(|j| (0..k).map(|r| (direction[r] * value1[(r, j)]).abs()).sum::<f64>())
                .sum();
            eprintln!(
                "cand sigma={:.3e} wait_mass={:.3e} cancel_depth={:.1e} psi1e={:.3e} psi1_cancel={:.1e} contraction={:?}",
                singular[index], wait_mass, abs_sum / wait_mass.abs().max(1e-300),
                psi1_raw.sum(), psi1_abs / psi1_raw.sum().abs().max(1e-300),
                wait_mass_contraction.as_slice()
            );
        }
        if wait_mass < 0.0 {
            continue;
        }
        // Normalization: alpha (boundary_mass + e^{log_max} wait_mass) = 1.
        let denom = boundary_mass * weight0 + wait_mass;
        if !(denom > 0.0) || !denom.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| denom > b.denom) {
            best = Some(Candidate { direction, levels, wait_mass, denom });
        }
    }
    let Some(chosen) = best else {
        return Err(Error::InvalidSolution(format!(
            "no probability-like null direction (worst relative negativity {dirtiest:.3e}); \
             truncation too coarse"
        )));
    };
    let Candidate { direction, levels, wait_mass, denom } = chosen;

    let clamp_nonneg = |mut v: RowDVector<f64>| {
        for entry in v.iter_mut() {
            if *entry < 0.0 {
                *entry = 0.0;
            }
        }
        v
    };
    let clamp_nonpos = |mut v: RowDVector<f64>| {
        for entry in v.iter_mut() {
            if *entry > 0.0 {
                *entry = 0.0;
            }
        }
        v
    };
    let psi1 = clamp_nonneg((&direction * &value1) * (weight1 / denom));
    let psi2 = clamp_nonneg((&direction * &value2) * (weight2 / denom));
    let dpsi1 = clamp_nonpos((&direction * &deriv1) * (weight1 / denom));
    let dpsi2 = clamp_nonpos((&direction * &deriv2) * (weight2 / denom));

    // Componentwise phi(0) from the solved transforms; its e-sum is pinned
    // to the analytically reduced wait mass used in the normalization.
    let mut phi0 = &psi1 * &a1p_zero + &dpsi1 * &a1_zero + &psi2 * &a2p_zero + &dpsi2 * &a2_zero;
    let phi0_sum = phi0.sum();
    let reduced_sum = wait_mass / denom;
    if phi0_sum > 0.0 && reduced_sum > 0.0 {
        phi0 *= reduced_sum / phi0_sum;
    } else {
        phi0 = RowDVector::from_element(k, reduced_sum / k as f64);
    }
    let atom_scale = weight0 / denom;
    let p_vectors: Vec<RowDVector<f64>> = levels.into_iter().map(|p| p * atom_scale).collect();

    for (label, psi) in [("theta_1", &psi1), ("theta_2", &psi2)] {
        let total = psi.sum();
        if !(total >= 0.0) || total > 1.0 + 1e-9 {
            return Err(Error::InvalidSolution(format!(
                "psi({label}) . e = {total} outside [0, 1]; truncation too coarse"
            )));
        }
    }

    let diagnostics = [&series1.diagnostics, &series2_ref.diagnostics];
    Ok(MmkSolution {
        p_vectors,
        psi_theta: [psi1, psi2],
        dpsi_theta: [dpsi1, dpsi2],
        phi0,
        truncation_diagonal_used: diagnostics.iter().map(|d| d.diagonals).max().unwrap_or(0),
        tail_bound: diagnostics.iter().map(|d| d.tail_bound).fold(0.0, f64::max),
    })
}

/// Scalar fast path for equal service rates; any pair of patience rates is
/// allowed. Output is marshaled into the same solution shape, spreading each
/// scalar uniformly over its level so that vector sums carry the value.
pub fn solve_mmk_equal_mu(config: &MmkConfig) -> Result<MmkSolution> {
    config.validate()?;
    let (mu1, mu2) = config.service_rates();
    if mu1 != mu2 {
        return Err(Error::InvalidParameter(format!(
            "equal-rate solver requires mu1 == mu2, got {mu1} and {mu2}"
        )));
    }
    let k = config.servers;
    let mu = mu1;
    let lambda = [config.class1.arrival_rate, config.class2.arrival_rate];
    let theta = config.patience_rates();
    let theta = [theta.0, theta.1];
    if lambda[0] + lambda[1] == 0.0 {
        return Ok(trivial_solution(k));
    }

    let k_mu = k as f64 * mu;
    let controls = SeriesControls { tolerance: config.tolerance, max_diagonal: config.max_diagonal };
    let evaluate = |s: f64| {
        let branches: Vec<ScalarBranch<'_>> = (0..2)
            .map(|class| ScalarBranch {
                weight: 1.0,
                rate: theta[class],
                factor: Box::new(move |u: f64| {
                    let denom = u + k_mu;
                    (lambda[class] / denom, -lambda[class] / (denom * denom))
                }),
            })
            .collect();
        let series = scalar_series(&branches, s, controls);
        if !series.diagnostics.converged {
            return Err(Error::NonConvergence {
                max_diagonal: config.max_diagonal,
                last_ratio: series.diagnostics.tail_bound,
            });
        }
        Ok(series)
    };

    let series = [evaluate(theta[0])?, evaluate(theta[1])?];

    // Boundary levels are truncated-Poisson: p_n proportional to rho^n / n!.
    let rho = (lambda[0] + lambda[1]) / mu;
    let log_rho = rho.ln();
    let mut log_level_weights = Vec::with_capacity(k);
    let mut acc = 0.0f64;
    for n in 0..k {
        if n > 0 {
            acc += log_rho - (n as f64).ln();
        }
        log_level_weights.push(acc);
    }
    let log_boundary = log_sum_exp_slice(&log_level_weights);
    let log_top = log_level_weights[k - 1];

    // Denominator of p_0: sum of level weights plus the waiting mass
    // g_{k-1} (lambda_1 c(th1) + lambda_2 c(th2)) / (k mu).
    let mut wait_terms = Vec::new();
    for class in 0..2 {
        if lambda[class] == 0.0 {
            continue;
        }
        let s = &series[class];
        wait_terms.push(
            (lambda[class] / k_mu).ln() + s.value.ln() + s.diagnostics.log_scale,
        );
    }
    let log_wait = log_top + log_sum_exp_slice(&wait_terms);
    let log_denom = log_sum_exp_slice(&[log_boundary, log_wait]);

    let mut p_vectors: Vec<RowDVector<f64>> = Vec::with_capacity(k);
    for n in 0..k {
        let level = (log_level_weights[n] - log_denom).exp();
        p_vectors.push(RowDVector::from_element(n + 1, level / (n + 1) as f64));
    }

    let spread = |total: f64| RowDVector::from_element(k, total / k as f64);
    let mut psi_theta: Vec<RowDVector<f64>> = Vec::with_capacity(2);
    let mut dpsi_theta: Vec<RowDVector<f64>> = Vec::with_capacity(2);
    let mut phi0_total = 0.0;
    for class in 0..2 {
        let s = &series[class];
        let log_ratio = log_top + s.diagnostics.log_scale - log_denom;
        let psi = s.value * log_ratio.exp();
        let dpsi = s.deriv * log_ratio.exp();
        if !(psi >= 0.0) || psi > 1.0 + 1e-9 {
            return Err(Error::InvalidSolution(format!(
                "psi(theta_{}) = {psi} outside [0, 1]; truncation too coarse",
                class + 1
            )));
        }
        psi_theta.push(spread(psi.min(1.0)));
        dpsi_theta.push(spread(dpsi.min(0.0)));
        phi0_total += psi * lambda[class] / k_mu;
    }

    let diagnostics: Vec<&SeriesDiagnostics> = series.iter().map(|s| &s.diagnostics).collect();
    Ok(MmkSolution {
        p_vectors,
        psi_theta: [psi_theta[0].clone(), psi_theta[1].clone()],
        dpsi_theta: [dpsi_theta[0].clone(), dpsi_theta[1].clone()],
        phi0: spread(phi0_total),
        truncation_diagonal_used: diagnostics.iter().map(|d| d.diagonals).max().unwrap_or(0),
        tail_bound: diagnostics.iter().map(|d| d.tail_bound).fold(0.0, f64::max),
    })
}

fn log_sum_exp_slice(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClassParams, PatienceSpec, ServiceModel};
    use crate::oracles::{erlang_a, ErlangAParams};
    use approx::assert_relative_eq;

    fn mmk(k: usize, l1: f64, mu1: f64, th1: f64, l2: f64, mu2: f64, th2: f64) -> MmkConfig {
        MmkConfig::new(
            k,
            ClassParams::new(
                l1,
                ServiceModel::Exponential { rate: mu1 },
                PatienceSpec::Exponential { rate: th1 },
            )
            .unwrap(),
            ClassParams::new(
                l2,
                ServiceModel::Exponential { rate: mu2 },
                PatienceSpec::Exponential { rate: th2 },
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn boundary_matrix_entries() {
        let config = mmk(3, 1.0, 1.0, 1.0, 1.0, 2.0, 1.0);
        let boundary = build_boundary(&config).unwrap();
        let m2 = boundary.service(2);
        assert_eq!(m2.nrows(), 3);
        assert_eq!(m2.ncols(), 2);
        assert_eq!(m2[(0, 0)], 4.0);
        assert_eq!(m2[(0, 1)], 0.0);
        assert_eq!(m2[(1, 0)], 1.0);
        assert_eq!(m2[(1, 1)], 2.0);
        assert_eq!(m2[(2, 0)], 0.0);
        assert_eq!(m2[(2, 1)], 2.0);

        let delta2 = boundary.rate_diagonal(2);
        assert_eq!(delta2[(0, 0)], 4.0);
        assert_eq!(delta2[(1, 1)], 3.0);
        assert_eq!(delta2[(2, 2)], 2.0);
    }

    #[test]
    fn reduction_matrix_for_two_servers() {
        let config = mmk(2, 1.0, 1.0, 1.0, 1.0, 2.0, 1.0);
        let boundary = build_boundary(&config).unwrap();
        let r1 = boundary.reduction(1);
        assert_eq!(r1.nrows(), 2);
        assert_eq!(r1.ncols(), 1);
        assert_relative_eq!(r1[(0, 0)], 1.0, max_relative = 1e-15);
        assert_relative_eq!(r1[(1, 0)], 0.5, max_relative = 1e-15);
    }

    #[test]
    fn jump_matrices_match_direct_two_server_enumeration() {
        // Coefficients read off the steady-state equation for k = 2; the
        // jump construction for an arrival in state (w, i, j) produces the
        // ratio (share of the next departure) terms directly.
        let (l1, l2, mu1, mu2) = (0.7, 1.3, 0.9, 2.1);
        let config = mmk(2, l1, mu1, 1.0, l2, mu2, 1.5);
        for s in [0.3, 1.0, 4.2] {
            let (a1, a2, d, h1, h2) = jump_matrices(&config, s).unwrap();
            let mix = s + mu1 + mu2;
            assert_relative_eq!(a1[(0, 0)], l1 * (s + mu2) / mix, max_relative = 1e-14);
            assert_relative_eq!(a1[(0, 1)], -l1 * mu2 / mix, max_relative = 1e-14);
            assert_relative_eq!(a1[(1, 1)], l1 * s / (s + 2.0 * mu1), max_relative = 1e-14);
            assert_eq!(a1[(1, 0)], 0.0);
            assert_relative_eq!(a2[(0, 0)], l2 * s / (s + 2.0 * mu2), max_relative = 1e-14);
            assert_relative_eq!(a2[(1, 0)], -l2 * mu1 / mix, max_relative = 1e-14);
            assert_relative_eq!(a2[(1, 1)], l2 * (s + mu1) / mix, max_relative = 1e-14);
            assert_eq!(a2[(0, 1)], 0.0);
            assert_relative_eq!((&a1 / s - h1).abs().max(), 0.0, epsilon = 1e-15);
            assert_relative_eq!((&a2 / s - h2).abs().max(), 0.0, epsilon = 1e-15);
            assert!(d[(0, 0)] > 1.0);
        }
    }

    #[test]
    fn jump_matrices_vanish_at_large_s() {
        let config = mmk(3, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0);
        let (_, _, d, h1, h2) = jump_matrices(&config, 1e9).unwrap();
        assert!(h1.abs().max() < 1e-8);
        assert!(h2.abs().max() < 1e-8);
        assert!((d - DMatrix::identity(3, 3)).abs().max() < 1e-7);
    }

    #[test]
    fn equal_rate_row_sums_collapse_to_scalar_factors() {
        let (l1, l2, mu) = (0.8, 1.7, 1.1);
        let config = mmk(4, l1, mu, 1.0, l2, mu, 2.0);
        for s in [0.4, 1.0, 3.0] {
            let (a1, a2, _, _, _) = jump_matrices(&config, s).unwrap();
            let expected = (l1 + l2) * s / (s + 4.0 * mu);
            let row_sums = (&a1 + &a2) * DMatrix::from_element(4, 1, 1.0);
            for r in 0..4 {
                assert_relative_eq!(row_sums[(r, 0)], expected, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn jump_derivatives_match_finite_differences() {
        let config = mmk(4, 0.9, 1.2, 1.0, 1.4, 2.3, 2.0);
        for s in [0.0, 0.7, 2.5] {
            let (d1, d2) = jump_matrix_derivatives(&config, s).unwrap();
            let h = 1e-6;
            let kernel = MmkKernel::new(&config);
            let (a1p, a2p) = kernel.jump_dense(s + h);
            let (a1m, a2m) = kernel.jump_dense((s - h).max(0.0));
            let width = if s >= h { 2.0 * h } else { h };
            let fd1 = (&a1p - &a1m) / width;
            let fd2 = (&a2p - &a2m) / width;
            assert!((d1 - fd1).abs().max() < 1e-5);
            assert!((d2 - fd2).abs().max() < 1e-5);
        }
    }

    #[test]
    fn series_reduces_to_d_when_empty() {
        let config = mmk(3, 0.0, 1.0, 1.0, 0.0, 2.0, 2.0);
        let (c, cp, diag) = c_matrix_series(&config, 1.3).unwrap();
        assert!(diag.converged);
        let boundary = build_boundary(&config).unwrap();
        let coupling = boundary.coupling();
        let expected = DMatrix::identity(3, 3) + &coupling / 1.3;
        let expected_deriv = -&coupling / (1.3 * 1.3);
        assert!((c - expected).abs().max() < 1e-14);
        assert!((cp - expected_deriv).abs().max() < 1e-14);
    }

    #[test]
    fn equal_rate_series_collapses_to_scalar() {
        // With mu1 = mu2 every row of C(s) sums to the scalar series.
        let config = mmk(3, 0.9, 1.4, 0.8, 1.2, 1.4, 1.9);
        let scalar = |s: f64| {
            let k_mu = 3.0 * 1.4;
            let branches: Vec<ScalarBranch<'_>> = vec![
                ScalarBranch {
                    weight: 1.0,
                    rate: 0.8,
                    factor: Box::new(move |u: f64| {
                        (0.9 / (u + k_mu), -0.9 / ((u + k_mu) * (u + k_mu)))
                    }),
                },
                ScalarBranch {
                    weight: 1.0,
                    rate: 1.9,
                    factor: Box::new(move |u: f64| {
                        (1.2 / (u + k_mu), -1.2 / ((u + k_mu) * (u + k_mu)))
                    }),
                },
            ];
            scalar_series(
                &branches,
                s,
                SeriesControls { tolerance: 1e-13, max_diagonal: 10_000 },
            )
        };
        for s in [0.8, 1.9] {
            let (c, cp, _) = c_matrix_series(&config, s).unwrap();
            let reference = scalar(s);
            for r in 0..3 {
                assert_relative_eq!(
                    c.row(r).sum(),
                    reference.value_unscaled(),
                    max_relative = 1e-10
                );
                assert_relative_eq!(
                    cp.row(r).sum(),
                    reference.deriv_unscaled(),
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn single_class_matches_erlang_a_oracle() {
        let config = mmk(5, 7.0, 1.0, 1.0, 0.0, 1.0, 1.0);
        let solution = solve_mmk(&config).unwrap();
        let oracle = erlang_a(&ErlangAParams::new(7.0, 1.0, 1.0, 5)).unwrap();
        assert_relative_eq!(solution.p_serve(0), oracle.p_serve, max_relative = 1e-8);
        let awt = (1.0 - solution.p_serve(0)) / 1.0;
        assert_relative_eq!(awt, oracle.awt, max_relative = 1e-8);
        assert_relative_eq!(solution.total_mass(), 1.0, max_relative = 1e-10);
    }

    #[test]
    fn general_path_matches_scalar_path_for_equal_rates() {
        // Equal service rates with distinct patience rates: the scalar
        // collapse must agree with the full matrix machinery.
        let config = mmk(4, 2.5, 1.3, 0.7, 1.5, 1.3, 2.2);
        let general = solve_mmk(&config).unwrap();
        let scalar = solve_mmk_equal_mu(&config).unwrap();
        for class in 0..2 {
            assert_relative_eq!(
                general.p_serve(class),
                scalar.p_serve(class),
                max_relative = 1e-9
            );
            assert_relative_eq!(
                general.wait_transform(class),
                scalar.wait_transform(class),
                max_relative = 1e-9
            );
        }
        for n in 0..4 {
            assert_relative_eq!(
                general.p_vectors[n].sum(),
                scalar.p_vectors[n].sum(),
                max_relative = 1e-9
            );
        }
        assert_relative_eq!(general.phi0.sum(), scalar.phi0.sum(), max_relative = 1e-9);
    }

    #[test]
    fn equal_rate_solver_rejects_distinct_rates() {
        let config = mmk(3, 1.0, 1.0, 1.0, 1.0, 2.0, 1.0);
        assert!(solve_mmk_equal_mu(&config).is_err());
    }

    #[test]
    fn equal_rate_matches_merged_erlang_a_when_theta_equal() {
        let config = mmk(5, 12.0, 1.5, 1.1, 8.0, 1.5, 1.1);
        let solution = solve_mmk_equal_mu(&config).unwrap();
        let oracle = erlang_a(&ErlangAParams::new(20.0, 1.5, 1.1, 5)).unwrap();
        assert_relative_eq!(solution.p_serve(0), oracle.p_serve, max_relative = 1e-8);
        assert_relative_eq!(solution.p_serve(1), oracle.p_serve, max_relative = 1e-8);
    }

    #[test]
    fn empty_system_solutions() {
        let config = mmk(4, 0.0, 1.0, 1.0, 0.0, 2.0, 2.0);
        for solution in [solve_mmk(&config).unwrap(), solve_mmk_equal_mu(&mmk(4, 0.0, 1.0, 1.0, 0.0, 1.0, 2.0)).unwrap()] {
            assert_eq!(solution.p_vectors[0][0], 1.0);
            assert_eq!(solution.p_serve(0), 1.0);
            assert_eq!(solution.total_mass(), 1.0);
        }
    }

    #[test]
    fn single_server_route_matches_mg1() {
        let config = mmk(1, 0.8, 1.0, 1.2, 0.5, 2.0, 0.6);
        let solution = solve_mmk(&config).unwrap();
        let mg1_config = Mg1Config {
            class1: config.class1.clone(),
            class2: config.class2.clone(),
            tolerance: config.tolerance,
            max_diagonal: config.max_diagonal,
        };
        let reference = solve_mg1(&mg1_config).unwrap();
        assert_relative_eq!(solution.p_vectors[0][0], reference.p0, max_relative = 1e-14);
        assert_relative_eq!(solution.p_serve(0), reference.p_serve(0), max_relative = 1e-14);
        assert_relative_eq!(solution.total_mass(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn class_swap_symmetry() {
        let config = mmk(3, 1.1, 1.0, 0.9, 2.3, 2.4, 1.7);
        let swapped = mmk(3, 2.3, 2.4, 1.7, 1.1, 1.0, 0.9);
        let a = solve_mmk(&config).unwrap();
        let b = solve_mmk(&swapped).unwrap();
        assert_relative_eq!(a.p_serve(0), b.p_serve(1), max_relative = 1e-12);
        assert_relative_eq!(a.p_serve(1), b.p_serve(0), max_relative = 1e-12);
        assert_relative_eq!(a.total_mass(), b.total_mass(), max_relative = 1e-12);
    }

    #[test]
    fn truncation_deepening_stays_within_tail_bound() {
        let config = mmk(3, 4.0, 1.0, 1.3, 3.0, 2.0, 0.8);
        let solution = solve_mmk(&config).unwrap();
        let deeper = config.clone().with_controls(1e-15, 2000).unwrap();
        let refined = solve_mmk(&deeper).unwrap();
        for class in 0..2 {
            let a = solution.p_serve(class);
            let b = refined.p_serve(class);
            assert!(((a - b) / b).abs() <= solution.tail_bound.max(1e-13));
        }
    }

    #[test]
    fn heavy_overload_is_finite() {
        let config = mmk(5, 1000.0, 1.0, 1.0, 1000.0, 2.0, 2.0);
        let solution = solve_mmk(&config).unwrap();
        for class in 0..2 {
            let p = solution.p_serve(class);
            assert!(p.is_finite() && p > 0.0 && p < 0.02, "p_serve = {p}");
        }
        assert_relative_eq!(solution.total_mass(), 1.0, max_relative = 1e-9);
    }
}
