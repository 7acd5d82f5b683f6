//! Anti-diagonal accumulation of the path-sum series and its derivative.
//!
//! Both solvers expand a fixed-point equation into a lattice series: each
//! grid point carries a term obtained from its two (or more) predecessors,
//! and the series is summed by anti-diagonals `n = i + j`, keeping only the
//! previous diagonal in memory. The per-diagonal weight decays geometrically
//! once the diagonal index passes the load scale, which drives the stopping
//! rule and the reported tail bound.
//!
//! Under heavy overload the terms grow far beyond `f64::MAX` before they
//! decay (the series equals a probability divided by an astronomically small
//! boundary atom), so the accumulators carry an explicit binary scale. A
//! result holds mantissas plus `log_scale`; the true value is
//! `mantissa * exp(log_scale)`. Callers combine results through ratios, so
//! the scale never has to be exponentiated on its own.

use std::collections::HashMap;

use nalgebra::DMatrix;

/// Rescale once any tracked magnitude exceeds this.
const RESCALE_THRESHOLD: f64 = 1e150;
/// Power-of-two factor applied on rescale (exactly 2^-598, spelled as a bit
/// pattern so the scaling is lossless).
const RESCALE_FACTOR: f64 = f64::from_bits((1023 - 598) << 52);
const RESCALE_LOG: f64 = 598.0 * std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy)]
pub(crate) struct SeriesControls {
    pub tolerance: f64,
    pub max_diagonal: usize,
}

/// Convergence bookkeeping shared by the scalar and matrix drivers.
#[derive(Debug, Clone, Copy)]
pub struct SeriesDiagnostics {
    /// Last anti-diagonal index that was accumulated.
    pub diagonals: usize,
    /// Relative geometric estimate of the neglected tail.
    pub tail_bound: f64,
    /// False when `max_diagonal` was hit before the stopping rule fired.
    pub converged: bool,
    /// Natural log of the scale factored out of the mantissas.
    pub log_scale: f64,
}

/// Tracks per-diagonal weights for the value series and the derivative
/// series, decides when to stop, and produces the tail estimate.
struct StopRule {
    tolerance: f64,
    prev_value_weight: f64,
    prev_deriv_weight: f64,
    value_ratio: f64,
    deriv_ratio: f64,
    last_rel_value: f64,
    last_rel_deriv: f64,
}

impl StopRule {
    fn new(tolerance: f64) -> Self {
        StopRule {
            tolerance,
            prev_value_weight: f64::NAN,
            prev_deriv_weight: f64::NAN,
            value_ratio: f64::INFINITY,
            deriv_ratio: f64::INFINITY,
            last_rel_value: f64::INFINITY,
            last_rel_deriv: f64::INFINITY,
        }
    }

    /// Record diagonal weights (same scale as the accumulators) and report
    /// whether the series may stop.
    fn observe(
        &mut self,
        value_weight: f64,
        deriv_weight: f64,
        value_accum: f64,
        deriv_accum: f64,
    ) -> bool {
        self.value_ratio = if self.prev_value_weight > 0.0 {
            value_weight / self.prev_value_weight
        } else {
            0.0
        };
        self.deriv_ratio = if self.prev_deriv_weight > 0.0 {
            deriv_weight / self.prev_deriv_weight
        } else {
            0.0
        };
        self.prev_value_weight = value_weight;
        self.prev_deriv_weight = deriv_weight;

        self.last_rel_value = value_weight / value_accum.max(f64::MIN_POSITIVE);
        // The value accumulator serves as a floor so that an identically zero
        // derivative series does not block convergence.
        self.last_rel_deriv = deriv_weight / deriv_accum.max(value_accum).max(f64::MIN_POSITIVE);
        self.last_rel_value <= self.tolerance && self.last_rel_deriv <= self.tolerance
    }

    fn last_relative_weight(&self) -> f64 {
        self.last_rel_value.max(self.last_rel_deriv)
    }

    /// Geometric remainder estimate relative to the accumulated series.
    fn tail_bound(&self) -> f64 {
        let geom = |rel: f64, ratio: f64| {
            if rel == 0.0 {
                0.0
            } else if ratio < 1.0 {
                rel * ratio / (1.0 - ratio)
            } else {
                f64::INFINITY
            }
        };
        geom(self.last_rel_value, self.value_ratio).max(geom(self.last_rel_deriv, self.deriv_ratio))
    }
}

// ---------------------------------------------------------------------------
// Scalar driver (M/G/1+M and the equal-rate multi-server special case)
// ---------------------------------------------------------------------------

/// One lattice direction of the scalar series: stepping in direction `b`
/// multiplies by `weight * factor(shift)` where `shift` is the current
/// lattice offset, and shifts subsequent arguments by `rate`.
pub(crate) struct ScalarBranch<'a> {
    pub weight: f64,
    pub rate: f64,
    /// Step factor and its derivative at the given argument.
    pub factor: Box<dyn Fn(f64) -> (f64, f64) + 'a>,
}

/// Scaled result of the scalar series: value and derivative mantissas share
/// one `log_scale`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScalarSeries {
    pub value: f64,
    pub deriv: f64,
    pub diagnostics: SeriesDiagnostics,
}

impl ScalarSeries {
    /// Value with the scale multiplied back in; may overflow to infinity in
    /// extreme overload.
    pub fn value_unscaled(&self) -> f64 {
        self.value * self.diagnostics.log_scale.exp()
    }

    pub fn deriv_unscaled(&self) -> f64 {
        self.deriv * self.diagnostics.log_scale.exp()
    }
}

/// Cell of the current anti-diagonal, keyed by the packed multi-index.
struct ScalarCell {
    key: u128,
    shift: f64,
    value: f64,
    deriv: f64,
}

fn bump_key(key: u128, branch: usize) -> u128 {
    key + (1u128 << (16 * branch))
}

/// Sum the lattice series `sum_m c_m(s)` and its term-by-term derivative.
///
/// `c_0 = 1`, and a step in direction `b` from lattice point `m` contributes
/// `weight_b * factor_b(s + m . rates) * c_m` to `c_{m + e_b}`.
pub(crate) fn scalar_series(
    branches: &[ScalarBranch<'_>],
    s: f64,
    controls: SeriesControls,
) -> ScalarSeries {
    assert!(branches.len() <= 8, "at most 8 patience branches are supported");
    assert!(s > 0.0);

    let mut accum_value = 1.0f64; // diagonal 0: c = 1
    let mut accum_deriv = 0.0f64;
    let mut accum_deriv_abs = 0.0f64;
    let mut log_scale = 0.0f64;
    let mut rule = StopRule::new(controls.tolerance);
    let mut converged = false;
    let mut diagonals = 0usize;

    let mut current = vec![ScalarCell { key: 0, shift: 0.0, value: 1.0, deriv: 0.0 }];

    for n in 1..=controls.max_diagonal {
        let mut next: Vec<ScalarCell> = Vec::with_capacity(current.len() + 1);
        let mut index: HashMap<u128, usize> = HashMap::with_capacity(current.len() + 1);

        for cell in &current {
            if cell.value == 0.0 && cell.deriv == 0.0 {
                continue;
            }
            for (b, branch) in branches.iter().enumerate() {
                if branch.weight == 0.0 {
                    continue;
                }
                let (factor, dfactor) = (branch.factor)(s + cell.shift);
                let step_value = branch.weight * factor * cell.value;
                let step_deriv =
                    branch.weight * (factor * cell.deriv + dfactor * cell.value);
                if step_value == 0.0 && step_deriv == 0.0 {
                    continue;
                }
                let key = bump_key(cell.key, b);
                let slot = *index.entry(key).or_insert_with(|| {
                    next.push(ScalarCell {
                        key,
                        shift: cell.shift + branch.rate,
                        value: 0.0,
                        deriv: 0.0,
                    });
                    next.len() - 1
                });
                next[slot].value += step_value;
                next[slot].deriv += step_deriv;
            }
        }

        diagonals = n;
        let mut value_weight = 0.0;
        let mut deriv_weight = 0.0;
        for cell in &next {
            accum_value += cell.value;
            accum_deriv += cell.deriv;
            value_weight += cell.value.abs();
            deriv_weight += cell.deriv.abs();
            accum_deriv_abs += cell.deriv.abs();
        }

        if rule.observe(value_weight, deriv_weight, accum_value.abs(), accum_deriv_abs) {
            converged = true;
            break;
        }
        if next.is_empty() {
            converged = true;
            break;
        }

        let magnitude = accum_value.abs().max(value_weight).max(deriv_weight);
        if magnitude > RESCALE_THRESHOLD {
            accum_value *= RESCALE_FACTOR;
            accum_deriv *= RESCALE_FACTOR;
            accum_deriv_abs *= RESCALE_FACTOR;
            rule.prev_value_weight *= RESCALE_FACTOR;
            rule.prev_deriv_weight *= RESCALE_FACTOR;
            for cell in &mut next {
                cell.value *= RESCALE_FACTOR;
                cell.deriv *= RESCALE_FACTOR;
            }
            log_scale += RESCALE_LOG;
        }

        current = next;
    }

    ScalarSeries {
        value: accum_value,
        deriv: accum_deriv,
        diagnostics: SeriesDiagnostics {
            diagonals,
            tail_bound: if converged { rule.tail_bound() } else { rule.last_relative_weight() },
            converged,
            log_scale,
        },
    }
}

// ---------------------------------------------------------------------------
// Matrix driver (M/M/k+M)
// ---------------------------------------------------------------------------

/// Bidiagonal `k x k` matrix: a main diagonal plus one off-diagonal.
#[derive(Debug, Clone)]
pub(crate) struct Bidiagonal {
    pub diag: Vec<f64>,
    /// `off[r]` sits at `(r, r+1)` for `Super`, at `(r, r-1)` for `Sub`
    /// (entries without a valid column are zero and unused).
    pub off: Vec<f64>,
    pub kind: OffDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum OffDiagonal {
    Super,
    Sub,
}

impl Bidiagonal {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let k = self.diag.len();
        let mut m = DMatrix::zeros(k, k);
        for r in 0..k {
            m[(r, r)] = self.diag[r];
            match self.kind {
                OffDiagonal::Super if r + 1 < k => m[(r, r + 1)] = self.off[r],
                OffDiagonal::Sub if r >= 1 => m[(r, r - 1)] = self.off[r],
                _ => {}
            }
        }
        m
    }

    /// `out += self * rhs`, exploiting the bidiagonal sparsity.
    fn accum_left_mul(&self, rhs: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let k = self.diag.len();
        for c in 0..k {
            for r in 0..k {
                let mut sum = self.diag[r] * rhs[(r, c)];
                match self.kind {
                    OffDiagonal::Super => {
                        if r + 1 < k {
                            sum += self.off[r] * rhs[(r + 1, c)];
                        }
                    }
                    OffDiagonal::Sub => {
                        if r >= 1 {
                            sum += self.off[r] * rhs[(r - 1, c)];
                        }
                    }
                }
                out[(r, c)] += sum;
            }
        }
    }
}

/// Per-point jump factors: `H_i(u)` and `H_i'(u)` for both classes.
pub(crate) trait JumpKernel {
    /// Fill `H_1(u), H_2(u), H_1'(u), H_2'(u)` for the shifted argument `u`.
    fn eval(&self, u: f64, h: &mut [Bidiagonal; 2], hp: &mut [Bidiagonal; 2]);
    fn dimension(&self) -> usize;
}

/// Scaled anti-diagonal sums needed to assemble `C(s)` and `C'(s)`:
/// with `S = Delta_{k-1} - R_{k-1} Lambda_{k-2}` and `u = s + i th1 + j th2`,
/// `C(s) = sum C_{ij} + S sum C_{ij}/u` and
/// `C'(s) = sum C'_{ij} + S (sum C'_{ij}/u - sum C_{ij}/u^2)`.
pub(crate) struct MatrixSeries {
    pub sum_c: DMatrix<f64>,
    pub sum_c_over_u: DMatrix<f64>,
    pub sum_c_over_u2: DMatrix<f64>,
    pub sum_cp: DMatrix<f64>,
    pub sum_cp_over_u: DMatrix<f64>,
    pub diagnostics: SeriesDiagnostics,
}

impl MatrixSeries {
    /// `C(s)` mantissa (true value is `e^{log_scale}` times this).
    pub fn value(&self, coupling: &DMatrix<f64>) -> DMatrix<f64> {
        &self.sum_c + coupling * &self.sum_c_over_u
    }

    /// `C'(s)` mantissa.
    pub fn deriv(&self, coupling: &DMatrix<f64>) -> DMatrix<f64> {
        &self.sum_cp + coupling * (&self.sum_cp_over_u - &self.sum_c_over_u2)
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()))
}

/// Run the two-direction matrix series at evaluation point `s`.
pub(crate) fn matrix_series<K: JumpKernel>(
    kernel: &K,
    theta: (f64, f64),
    s: f64,
    controls: SeriesControls,
) -> MatrixSeries {
    assert!(s > 0.0);
    let k = kernel.dimension();
    let zero = || DMatrix::<f64>::zeros(k, k);
    let blank = || Bidiagonal {
        diag: vec![0.0; k],
        off: vec![0.0; k],
        kind: OffDiagonal::Super,
    };

    let mut sums = MatrixSeries {
        sum_c: DMatrix::identity(k, k),
        sum_c_over_u: DMatrix::identity(k, k) / s,
        sum_c_over_u2: DMatrix::identity(k, k) / (s * s),
        sum_cp: zero(),
        sum_cp_over_u: zero(),
        diagnostics: SeriesDiagnostics {
            diagonals: 0,
            tail_bound: 0.0,
            converged: true,
            log_scale: 0.0,
        },
    };

    // Diagonal cells indexed by i (the first-direction count); j = n - i.
    let mut current: Vec<(DMatrix<f64>, DMatrix<f64>)> =
        vec![(DMatrix::identity(k, k), zero())];

    let mut h = [blank(), blank()];
    let mut hp = [blank(), blank()];
    let mut rule = StopRule::new(controls.tolerance);
    let mut converged = false;
    let mut diagonals = 0usize;

    for n in 1..=controls.max_diagonal {
        let mut next: Vec<(DMatrix<f64>, DMatrix<f64>)> =
            (0..=n).map(|_| (zero(), zero())).collect();

        for (i, (c, cp)) in current.iter().enumerate() {
            if max_abs(c) == 0.0 && max_abs(cp) == 0.0 {
                continue;
            }
            let j = (n - 1) - i;
            let u = s + i as f64 * theta.0 + j as f64 * theta.1;
            kernel.eval(u, &mut h, &mut hp);

            // Step in direction 1: target (i + 1, j).
            let (tc, tcp) = &mut next[i + 1];
            h[0].accum_left_mul(c, tc);
            h[0].accum_left_mul(cp, tcp);
            hp[0].accum_left_mul(c, tcp);
            // Step in direction 2: target (i, j + 1).
            let (tc, tcp) = &mut next[i];
            h[1].accum_left_mul(c, tc);
            h[1].accum_left_mul(cp, tcp);
            hp[1].accum_left_mul(c, tcp);
        }

        diagonals = n;
        let mut value_weight = 0.0f64;
        let mut deriv_weight = 0.0f64;
        for (i, (c, cp)) in next.iter().enumerate() {
            let j = n - i;
            let u = s + i as f64 * theta.0 + j as f64 * theta.1;
            sums.sum_c += c;
            sums.sum_c_over_u += c / u;
            sums.sum_c_over_u2 += c / (u * u);
            sums.sum_cp += cp;
            sums.sum_cp_over_u += cp / u;
            value_weight += max_abs(c);
            deriv_weight += max_abs(cp);
        }
        let accum_value_norm = max_abs(&sums.sum_c);
        let accum_deriv_norm = max_abs(&sums.sum_cp);

        if rule.observe(value_weight, deriv_weight, accum_value_norm, accum_deriv_norm) {
            converged = true;
            break;
        }

        let magnitude = accum_value_norm.max(value_weight).max(deriv_weight);
        if magnitude > RESCALE_THRESHOLD {
            for m in [
                &mut sums.sum_c,
                &mut sums.sum_c_over_u,
                &mut sums.sum_c_over_u2,
                &mut sums.sum_cp,
                &mut sums.sum_cp_over_u,
            ] {
                *m *= RESCALE_FACTOR;
            }
            for (c, cp) in &mut next {
                *c *= RESCALE_FACTOR;
                *cp *= RESCALE_FACTOR;
            }
            rule.prev_value_weight *= RESCALE_FACTOR;
            rule.prev_deriv_weight *= RESCALE_FACTOR;
            sums.diagnostics.log_scale += RESCALE_LOG;
        }

        current = next;
    }

    sums.diagnostics.diagonals = diagonals;
    sums.diagnostics.converged = converged;
    sums.diagnostics.tail_bound = if converged { rule.tail_bound() } else { rule.last_relative_weight() };
    sums
}
