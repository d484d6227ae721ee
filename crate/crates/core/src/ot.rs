//! Entropy-regularised optimal transport between embedded frame sequences.
//!
//! Both sequences carry uniform frame weights (`1/T_a` and `1/T_b`). The
//! solver runs Sinkhorn scaling on a kernel whose dual potentials are
//! periodically absorbed back into log space, so small `epsilon` values do
//! not underflow. A short geometric `epsilon` schedule warm-starts the duals.
//!
//! The OT distance is the plain transport cost `sum c * mu` of the entropic
//! plan (nonnegative; smaller means more similar).

use alloc::vec;
use core::cmp::Ordering;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frames::EmbeddingSequence;
use crate::linalg::{self, Matrix};
use crate::reward_models::RewardTrace;

/// Norm below which a frame is treated as the zero vector.
pub const ZERO_GUARD: f64 = 1e-12;

/// Scalings are folded into the log potentials once they leave
/// `[exp(-ABSORB), exp(ABSORB)]`.
const ABSORB: f64 = 50.0;

/// Plain iterations at the target temperature between Newton polishes.
const NEWTON_EVERY: usize = 200;

/// Diagonal shift keeping weakly coupled blocks of the plan from producing
/// huge Newton steps.
const NEWTON_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iterations: 10_000,
            tolerance: 1e-8,
        }
    }
}

impl SinkhornConfig {
    pub fn new(epsilon: f64, max_iterations: usize, tolerance: f64) -> Result<Self> {
        let config = Self {
            epsilon,
            max_iterations,
            tolerance,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig("sinkhorn epsilon must be > 0"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("sinkhorn tolerance must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("sinkhorn max_iterations must be >= 1"));
        }
        Ok(())
    }
}

/// Pairwise cosine distances between the frames of two sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Matrix);

impl CostMatrix {
    /// Wraps an arbitrary finite, nonnegative matrix.
    pub fn new(entries: Matrix) -> Result<Self> {
        if !entries.is_finite() {
            return Err(Error::NonFinite("cost entry"));
        }
        Ok(Self(entries))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn transpose(&self) -> CostMatrix {
        CostMatrix(self.0.transpose())
    }
}

/// A coupling between two uniform frame distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    mass: Matrix,
    marginal_residual: f64,
    iterations: usize,
}

impl TransportPlan {
    /// Builds a plan from explicit masses, measuring the residual against
    /// uniform marginals.
    pub fn from_mass(mass: Matrix) -> Result<Self> {
        if !mass.is_finite() || mass.as_slice().iter().any(|&m| m < 0.0) {
            return Err(Error::NonFinite("plan mass"));
        }
        let marginal_residual = uniform_marginal_residual(&mass);
        Ok(Self {
            mass,
            marginal_residual,
            iterations: 0,
        })
    }

    /// The product coupling `1/(T_a T_b)` everywhere.
    pub fn uniform(rows: usize, cols: usize) -> Self {
        Self {
            mass: Matrix::filled(rows, cols, 1.0 / (rows * cols) as f64),
            marginal_residual: 0.0,
            iterations: 0,
        }
    }

    pub fn mass(&self) -> &Matrix {
        &self.mass
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass.get(i, j)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mass.shape()
    }

    pub fn row_marginal(&self) -> f64 {
        1.0 / self.mass.rows() as f64
    }

    pub fn col_marginal(&self) -> f64 {
        1.0 / self.mass.cols() as f64
    }

    /// Max absolute deviation of achieved row/column sums from uniform.
    pub fn marginal_residual(&self) -> f64 {
        self.marginal_residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn transpose(&self) -> TransportPlan {
        TransportPlan {
            mass: self.mass.transpose(),
            marginal_residual: self.marginal_residual,
            iterations: self.iterations,
        }
    }
}

fn uniform_marginal_residual(mass: &Matrix) -> f64 {
    let a = 1.0 / mass.rows() as f64;
    let b = 1.0 / mass.cols() as f64;
    let rows = mass.row_sums().into_iter().map(|s| libm::fabs(s - a));
    let cols = mass.col_sums().into_iter().map(|s| libm::fabs(s - b));
    rows.chain(cols).fold(0.0, f64::max)
}

/// `1 - <a,b>/(|a||b|)`, clamped to `[0, 2]`.
pub fn cosine_cost(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let na = linalg::norm(a);
    let nb = linalg::norm(b);
    if na < ZERO_GUARD || nb < ZERO_GUARD {
        return Err(Error::ZeroVector);
    }
    Ok((1.0 - linalg::dot(a, b) / (na * nb)).clamp(0.0, 2.0))
}

fn unit_frames(seq: &EmbeddingSequence) -> Result<Vec<Vec<f64>>> {
    seq.frames()
        .map(|f| {
            let n = linalg::norm(f);
            if n < ZERO_GUARD {
                return Err(Error::ZeroVector);
            }
            Ok(f.iter().map(|v| v / n).collect())
        })
        .collect()
}

/// Cosine cost between every frame of `a` (rows) and of `b` (columns).
pub fn cost_matrix(a: &EmbeddingSequence, b: &EmbeddingSequence) -> Result<CostMatrix> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySequence);
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let ua = unit_frames(a)?;
    let ub = unit_frames(b)?;
    let m = Matrix::from_fn(ua.len(), ub.len(), |i, j| {
        (1.0 - linalg::dot(&ua[i], &ub[j])).clamp(0.0, 2.0)
    });
    Ok(CostMatrix(m))
}

struct Scaling<'a> {
    cost: &'a Matrix,
    eps: f64,
    log_a: f64,
    log_b: f64,
    a: f64,
    b: f64,
    f: Vec<f64>,
    g: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    kernel: Matrix,
}

impl<'a> Scaling<'a> {
    fn new(cost: &'a Matrix, eps: f64) -> Self {
        let (n, m) = cost.shape();
        let a = 1.0 / n as f64;
        let b = 1.0 / m as f64;
        let mut s = Self {
            cost,
            eps,
            log_a: libm::log(a),
            log_b: libm::log(b),
            a,
            b,
            f: vec![0.0; n],
            g: vec![0.0; m],
            u: vec![1.0; n],
            v: vec![1.0; m],
            kernel: Matrix::zeros(n, m),
        };
        s.rebuild_kernel();
        s
    }

    fn absorb(&mut self) {
        for (f, u) in self.f.iter_mut().zip(self.u.iter_mut()) {
            *f += self.eps * libm::log(*u);
            *u = 1.0;
        }
        for (g, v) in self.g.iter_mut().zip(self.v.iter_mut()) {
            *g += self.eps * libm::log(*v);
            *v = 1.0;
        }
    }

    fn rebuild_kernel(&mut self) {
        let (n, m) = self.cost.shape();
        for i in 0..n {
            let fi = self.f[i];
            let krow = self.kernel.row_mut(i);
            let crow = self.cost.row(i);
            for j in 0..m {
                krow[j] = libm::exp((fi + self.g[j] - crow[j]) / self.eps);
            }
        }
    }

    fn set_epsilon(&mut self, eps: f64) {
        self.absorb();
        self.eps = eps;
        self.rebuild_kernel();
    }

    /// Exact log-domain update of the column potentials.
    fn log_update_g(&mut self) {
        let (n, m) = self.cost.shape();
        for j in 0..m {
            let mut best = f64::NEG_INFINITY;
            for i in 0..n {
                best = best.max((self.f[i] - self.cost.get(i, j)) / self.eps);
            }
            let mut acc = 0.0;
            for i in 0..n {
                acc += libm::exp((self.f[i] - self.cost.get(i, j)) / self.eps - best);
            }
            self.g[j] = self.eps * (self.log_b - best - libm::log(acc));
        }
    }

    fn log_update_f(&mut self) {
        let (n, m) = self.cost.shape();
        for i in 0..n {
            let crow = self.cost.row(i);
            let mut best = f64::NEG_INFINITY;
            for j in 0..m {
                best = best.max((self.g[j] - crow[j]) / self.eps);
            }
            let mut acc = 0.0;
            for j in 0..m {
                acc += libm::exp((self.g[j] - crow[j]) / self.eps - best);
            }
            self.f[i] = self.eps * (self.log_a - best - libm::log(acc));
        }
    }

    /// Column sums of the current plan, `s_j = v_j * sum_i K_ij u_i`.
    fn kt_u(&self, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &ui) in self.u.iter().enumerate() {
            for (o, k) in out.iter_mut().zip(self.kernel.row(i)) {
                *o += k * ui;
            }
        }
    }

    fn update_v(&mut self, kt_u: &[f64]) -> bool {
        for (v, &s) in self.v.iter_mut().zip(kt_u) {
            let next = self.b / s;
            if !(s > 0.0) || !next.is_finite() {
                return false;
            }
            *v = next;
        }
        true
    }

    fn update_u(&mut self, k_v: &mut [f64]) -> bool {
        self.kernel.mul_vec_into(&self.v, k_v);
        for (u, &s) in self.u.iter_mut().zip(k_v.iter()) {
            let next = self.a / s;
            if !(s > 0.0) || !next.is_finite() {
                return false;
            }
            *u = next;
        }
        true
    }

    fn needs_absorb(&self) -> bool {
        let hi = libm::exp(ABSORB);
        let lo = libm::exp(-ABSORB);
        self.u
            .iter()
            .chain(self.v.iter())
            .any(|&s| !(lo..=hi).contains(&s))
    }

    fn recover_columns(&mut self) {
        self.absorb();
        self.log_update_g();
        self.rebuild_kernel();
    }

    fn recover_rows(&mut self) {
        self.absorb();
        self.log_update_f();
        self.rebuild_kernel();
    }

    fn plan(&self) -> Matrix {
        let (n, m) = self.cost.shape();
        Matrix::from_fn(n, m, |i, j| self.u[i] * self.kernel.get(i, j) * self.v[j])
    }

    /// Max marginal violation of the plan induced by trial potentials, which
    /// is written to `plan`.
    fn marginal_error(&self, f: &[f64], g: &[f64], plan: &mut Matrix) -> f64 {
        let (n, m) = self.cost.shape();
        for i in 0..n {
            for j in 0..m {
                plan.set(i, j, libm::exp((f[i] + g[j] - self.cost.get(i, j)) / self.eps));
            }
        }
        let rows = plan.row_sums().iter().map(|r| libm::fabs(r - self.a)).fold(0.0, f64::max);
        let cols = plan.col_sums().iter().map(|c| libm::fabs(c - self.b)).fold(0.0, f64::max);
        rows.max(cols)
    }

    /// One damped Newton step on the dual potentials, with `g` pinned at its
    /// last entry. Returns the new marginal error, or `None` if no step
    /// length reduced it.
    fn newton_step(&mut self) -> Option<f64> {
        self.absorb();
        let (n, m) = self.cost.shape();
        let k = n + m - 1;
        let mut plan = Matrix::zeros(n, m);
        let before = self.marginal_error(&self.f, &self.g, &mut plan);
        let rows = plan.row_sums();
        let cols = plan.col_sums();
        let mut h = Matrix::zeros(k, k);
        let mut rhs = vec![0.0; k];
        for i in 0..n {
            h.set(i, i, rows[i] + NEWTON_RIDGE);
            rhs[i] = self.eps * (self.a - rows[i]);
            for j in 0..m - 1 {
                h.set(i, n + j, plan.get(i, j));
                h.set(n + j, i, plan.get(i, j));
            }
        }
        for j in 0..m - 1 {
            h.set(n + j, n + j, cols[j] + NEWTON_RIDGE);
            rhs[n + j] = self.eps * (self.b - cols[j]);
        }
        let step = linalg::solve(h, rhs)?;
        let mut alpha = 1.0;
        for _ in 0..30 {
            let f: Vec<f64> = (0..n).map(|i| self.f[i] + alpha * step[i]).collect();
            let g: Vec<f64> = (0..m)
                .map(|j| self.g[j] + if j + 1 < m { alpha * step[n + j] } else { 0.0 })
                .collect();
            let after = self.marginal_error(&f, &g, &mut plan);
            if after < before {
                self.f = f;
                self.g = g;
                self.rebuild_kernel();
                return Some(after);
            }
            alpha *= 0.5;
        }
        self.rebuild_kernel();
        None
    }

    fn potentials_finite(&self) -> bool {
        self.f.iter().chain(self.g.iter()).all(|v| v.is_finite())
    }
}

/// Solves the entropic OT problem between uniform marginals for `cost`.
///
/// The returned plan is exact on its rows (up to rounding); the reported
/// residual covers both rows and columns. If `max_iterations` is reached the
/// plan is still returned with its residual.
pub fn sinkhorn(cost: &CostMatrix, config: &SinkhornConfig) -> Result<TransportPlan> {
    config.validate()?;
    let c = cost.matrix();
    let (n, m) = c.shape();
    if n == 0 || m == 0 {
        return Err(Error::EmptySequence);
    }
    if !c.is_finite() {
        return Err(Error::NonFinite("cost entry"));
    }
    if n == 1 || m == 1 {
        let plan = Matrix::filled(n, m, 1.0 / (n * m) as f64);
        return TransportPlan::from_mass(plan);
    }

    let spread = c.as_slice().iter().fold(0.0f64, |acc, v| acc.max(libm::fabs(*v)));
    let mut schedule = Vec::new();
    let mut level = spread.max(config.epsilon);
    while level > config.epsilon * 2.0 {
        schedule.push(level);
        level *= 0.25;
    }

    let mut state = Scaling::new(c, schedule.first().copied().unwrap_or(config.epsilon));
    let mut col = vec![0.0; m];
    let mut row = vec![0.0; n];
    let mut iterations = 0usize;

    let mut step = |state: &mut Scaling<'_>| -> Result<()> {
        state.kt_u(&mut col);
        if !state.update_v(&col) {
            state.recover_columns();
        }
        if !state.update_u(&mut row) {
            state.recover_rows();
        }
        if state.needs_absorb() {
            state.absorb();
            state.rebuild_kernel();
        }
        if !state.potentials_finite() {
            return Err(Error::NonFinite("sinkhorn potentials"));
        }
        Ok(())
    };

    // Warm start at coarser temperatures.
    for &eps in &schedule {
        if eps != state.eps {
            state.set_epsilon(eps);
        }
        for _ in 0..20 {
            if iterations >= config.max_iterations {
                break;
            }
            step(&mut state)?;
            iterations += 1;
        }
    }
    if state.eps != config.epsilon {
        state.set_epsilon(config.epsilon);
    }

    let mut cols = vec![0.0; m];
    let mut rows_exact = false;
    let mut since = 0usize;
    loop {
        if rows_exact {
            state.kt_u(&mut cols);
            let residual = cols
                .iter()
                .zip(&state.v)
                .map(|(s, v)| libm::fabs(s * v - state.b))
                .fold(0.0, f64::max);
            if residual < config.tolerance {
                break;
            }
            // slow contraction: polish the potentials with Newton steps
            if since > 0 && since % NEWTON_EVERY == 0 {
                while iterations < config.max_iterations {
                    iterations += 1;
                    match state.newton_step() {
                        Some(err) if err >= 0.1 * config.tolerance => {}
                        _ => break,
                    }
                }
            }
        }
        if iterations >= config.max_iterations {
            break;
        }
        step(&mut state)?;
        iterations += 1;
        since += 1;
        rows_exact = true;
    }

    let mass = state.plan();
    if !mass.is_finite() {
        return Err(Error::NonFinite("transport plan"));
    }
    let mut plan = TransportPlan::from_mass(mass)?;
    plan.iterations = iterations;
    Ok(plan)
}

/// `sum_{t,t'} c_{t,t'} mu_{t,t'}`.
pub fn ot_distance(cost: &CostMatrix, plan: &TransportPlan) -> Result<f64> {
    if cost.shape() != plan.shape() {
        return Err(Error::ShapeMismatch {
            expected: cost.shape(),
            actual: plan.shape(),
        });
    }
    Ok(cost.matrix().dot(plan.mass()))
}

/// Cost, plan and distance for one pair of sequences.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub cost: CostMatrix,
    pub plan: TransportPlan,
    pub distance: f64,
}

/// Orders two sequences by length, then by their sorted frames. Invariant to
/// reordering the frames of either one.
fn orientation(a: &EmbeddingSequence, b: &EmbeddingSequence) -> Ordering {
    fn sorted(s: &EmbeddingSequence) -> Vec<&[f64]> {
        let mut frames: Vec<&[f64]> = s.frames().collect();
        frames.sort_by(|x, y| lex(x, y));
        frames
    }
    a.len().cmp(&b.len()).then_with(|| {
        let (fa, fb) = (sorted(a), sorted(b));
        fa.iter()
            .zip(&fb)
            .map(|(x, y)| lex(x, y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

fn lex(x: &[f64], y: &[f64]) -> Ordering {
    x.iter()
        .zip(y)
        .map(|(p, q)| p.total_cmp(q))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| x.len().cmp(&y.len()))
}

/// Cost, plan and distance between `a` (rows) and `b` (columns).
///
/// Sinkhorn always runs in the same orientation for a given pair, so
/// swapping the arguments transposes the plan exactly.
pub fn couple(
    a: &EmbeddingSequence,
    b: &EmbeddingSequence,
    config: &SinkhornConfig,
) -> Result<Coupling> {
    let cost = cost_matrix(a, b)?;
    let plan = if orientation(a, b) == Ordering::Greater {
        sinkhorn(&cost.transpose(), config)?.transpose()
    } else {
        sinkhorn(&cost, config)?
    };
    let distance = ot_distance(&cost, &plan)?;
    Ok(Coupling {
        cost,
        plan,
        distance,
    })
}

/// Per-frame reward of `robot` against `expert`: the negated plan-weighted
/// row cost.
pub fn ot_reward_trace(
    robot: &EmbeddingSequence,
    expert: &EmbeddingSequence,
    config: &SinkhornConfig,
) -> Result<RewardTrace> {
    let coupling = couple(robot, expert, config)?;
    Ok(reward_from_coupling(&coupling))
}

pub fn reward_from_coupling(coupling: &Coupling) -> RewardTrace {
    let (n, _) = coupling.cost.shape();
    let values = (0..n)
        .map(|t| -linalg::dot(coupling.cost.matrix().row(t), coupling.plan.mass().row(t)))
        .collect();
    RewardTrace::new(values)
}

/// Index of the expert with the smallest OT distance to `robot`; ties go to
/// the lowest index.
pub fn select_closest_expert(
    robot: &EmbeddingSequence,
    experts: &[EmbeddingSequence],
    config: &SinkhornConfig,
) -> Result<usize> {
    closest_expert_coupling(robot, experts, config).map(|(i, _)| i)
}

pub(crate) fn closest_expert_coupling(
    robot: &EmbeddingSequence,
    experts: &[EmbeddingSequence],
    config: &SinkhornConfig,
) -> Result<(usize, Coupling)> {
    let mut best: Option<(usize, Coupling)> = None;
    for (i, expert) in experts.iter().enumerate() {
        let coupling = couple(robot, expert, config)?;
        let better = match &best {
            None => true,
            Some((_, b)) => coupling.distance < b.distance,
        };
        if better {
            best = Some((i, coupling));
        }
    }
    best.ok_or(Error::EmptyExpertSet)
}

/// How the OT distance responds to the cost entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sensitivity {
    /// Hold the plan fixed: `dD/dC = mu`.
    Envelope,
    /// Differentiate through the Sinkhorn fixed point.
    #[default]
    Implicit,
}

/// Derivative of `D(C) = sum C * mu*(C)` with respect to every cost entry.
///
/// The implicit variant perturbs the dual potentials so that both marginals
/// stay fixed, which gives
/// `dD/dC_kl = mu_kl * (1 + (lam_k + lam'_l - C_kl) / eps)` where
/// `[lam; lam']` solves the marginal Jacobian system against the row and
/// column sums of `C * mu`.
pub fn distance_sensitivity(
    cost: &CostMatrix,
    plan: &TransportPlan,
    epsilon: f64,
    mode: Sensitivity,
) -> Result<Matrix> {
    if cost.shape() != plan.shape() {
        return Err(Error::ShapeMismatch {
            expected: cost.shape(),
            actual: plan.shape(),
        });
    }
    let mu = plan.mass();
    let c = cost.matrix();
    let (n, m) = c.shape();
    if mode == Sensitivity::Envelope || n == 1 || m == 1 {
        return Ok(mu.clone());
    }
    let a = 1.0 / n as f64;
    let b = 1.0 / m as f64;
    // Unknowns: lam_0..lam_{n-1}, lam'_0..lam'_{m-2}; lam'_{m-1} = 0 fixes
    // the gauge, and the last column equation is the dependent one.
    let size = n + m - 1;
    let mut h = Matrix::zeros(size, size);
    let mut rhs = vec![0.0; size];
    for k in 0..n {
        h.set(k, k, a);
        for l in 0..m - 1 {
            h.set(k, n + l, mu.get(k, l));
            h.set(n + l, k, mu.get(k, l));
        }
        rhs[k] = linalg::dot(c.row(k), mu.row(k));
    }
    for l in 0..m - 1 {
        h.set(n + l, n + l, b);
        rhs[n + l] = (0..n).map(|k| c.get(k, l) * mu.get(k, l)).sum();
    }
    let lam = linalg::solve(h, rhs).ok_or(Error::NonFinite("sensitivity system"))?;
    let col_lam = |l: usize| if l + 1 == m { 0.0 } else { lam[n + l] };
    let out = Matrix::from_fn(n, m, |k, l| {
        mu.get(k, l) * (1.0 + (lam[k] + col_lam(l) - c.get(k, l)) / epsilon)
    });
    if !out.is_finite() {
        return Err(Error::NonFinite("sensitivity"));
    }
    Ok(out)
}

/// Diagonal mass of a square plan, clamped to `[0, 1]`: 1 for the
/// frame-synchronised coupling, `1/T` for the product coupling.
pub fn plan_diagonality(plan: &TransportPlan) -> Result<f64> {
    let (n, m) = plan.shape();
    if n != m {
        return Err(Error::NonSquare(n, m));
    }
    let trace: f64 = (0..n).map(|t| plan.get(t, t)).sum();
    Ok(trace.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::FrameSequence;

    fn cost(rows: usize, cols: usize, data: &[f64]) -> CostMatrix {
        CostMatrix::new(Matrix::from_vec(rows, cols, data.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_cost(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!((cosine_cost(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_cost(&[1.0, 0.0], &[-1.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_zero_vector() {
        assert_eq!(cosine_cost(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector));
        assert_eq!(cosine_cost(&[1.0, 0.0], &[1e-13, 0.0]), Err(Error::ZeroVector));
    }

    #[test]
    fn sinkhorn_zero_cost_is_uniform() {
        let c = cost(2, 2, &[0.0; 4]);
        let cfg = SinkhornConfig::new(0.1, 10_000, 1e-8).unwrap();
        let plan = sinkhorn(&c, &cfg).unwrap();
        for v in plan.mass().as_slice() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn sinkhorn_small_eps_is_assignment() {
        let c = cost(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let cfg = SinkhornConfig::new(0.01, 10_000, 1e-8).unwrap();
        let plan = sinkhorn(&c, &cfg).unwrap();
        let expected = [0.5, 0.0, 0.0, 0.5];
        for (v, e) in plan.mass().as_slice().iter().zip(expected) {
            assert!((v - e).abs() < 1e-3, "{v} vs {e}");
        }
        assert!(plan.marginal_residual() < 1e-8);
    }

    #[test]
    fn sinkhorn_large_eps_is_product() {
        let c = cost(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let eps = 100.0;
        let cfg = SinkhornConfig::new(eps, 10_000, 1e-12).unwrap();
        let plan = sinkhorn(&c, &cfg).unwrap();
        // closed form: mu_00 = 0.5 * sigmoid(1/eps)
        let on = 0.5 / (1.0 + libm::exp(-1.0 / eps));
        let expected = [on, 0.5 - on, 0.5 - on, on];
        for (v, e) in plan.mass().as_slice().iter().zip(expected) {
            assert!((v - e).abs() < 1e-10);
            assert!((v - 0.25).abs() < 1.5e-3);
        }
    }

    #[test]
    fn sinkhorn_rejects_bad_config() {
        let c = cost(2, 2, &[0.0; 4]);
        let bad = SinkhornConfig {
            epsilon: 0.0,
            ..SinkhornConfig::default()
        };
        assert!(matches!(sinkhorn(&c, &bad), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn sinkhorn_tiny_epsilon_does_not_underflow() {
        let c = cost(3, 3, &[0.0, 2.0, 2.0, 2.0, 0.0, 2.0, 2.0, 2.0, 0.0]);
        let cfg = SinkhornConfig::new(1e-4, 10_000, 1e-10).unwrap();
        let plan = sinkhorn(&c, &cfg).unwrap();
        assert!(plan.marginal_residual() < 1e-10);
        assert!((plan_diagonality(&plan).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unequal_lengths() {
        let c = cost(2, 3, &[0.0, 0.5, 1.0, 1.0, 0.5, 0.0]);
        let plan = sinkhorn(&c, &SinkhornConfig::default()).unwrap();
        for s in plan.mass().row_sums() {
            assert!((s - 0.5).abs() < 1e-8);
        }
        for s in plan.mass().col_sums() {
            assert!((s - 1.0 / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn distance_examples() {
        let zero = cost(2, 2, &[0.0; 4]);
        assert_eq!(ot_distance(&zero, &TransportPlan::uniform(2, 2)).unwrap(), 0.0);
        let swap = cost(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let diag = TransportPlan::from_mass(
            Matrix::from_vec(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap(),
        )
        .unwrap();
        assert_eq!(ot_distance(&swap, &diag).unwrap(), 0.0);
        assert!((ot_distance(&swap, &TransportPlan::uniform(2, 2)).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            ot_distance(&swap, &TransportPlan::uniform(2, 3)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    fn basis_seq(indices: &[usize], dim: usize) -> FrameSequence {
        FrameSequence::from_frames(
            dim,
            indices.iter().map(|&k| {
                let mut v = vec![0.0; dim];
                v[k] = 1.0;
                v
            }),
        )
        .unwrap()
    }

    #[test]
    fn reward_orthogonal_frames() {
        let robot = basis_seq(&[0, 1, 0], 4);
        let expert = basis_seq(&[2, 3], 4);
        let trace = ot_reward_trace(&robot, &expert, &SinkhornConfig::default()).unwrap();
        assert_eq!(trace.len(), 3);
        for v in trace.values() {
            assert!((v + 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reward_single_frames() {
        let robot = FrameSequence::from_frames(2, [[1.0, 1.0]]).unwrap();
        let expert = FrameSequence::from_frames(2, [[1.0, 0.0]]).unwrap();
        let trace = ot_reward_trace(&robot, &expert, &SinkhornConfig::default()).unwrap();
        let expected = -cosine_cost(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((trace.values()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn closest_expert_examples() {
        let robot = basis_seq(&[0, 1, 2], 6);
        let other = basis_seq(&[3, 4, 5], 6);
        let cfg = SinkhornConfig::default();
        assert_eq!(
            select_closest_expert(&robot, &[robot.clone(), other.clone()], &cfg).unwrap(),
            0
        );
        assert_eq!(
            select_closest_expert(&robot, &[other, robot.clone()], &cfg).unwrap(),
            1
        );
        assert_eq!(
            select_closest_expert(&robot, &[], &cfg),
            Err(Error::EmptyExpertSet)
        );
        // exact ties resolve to the first index
        assert_eq!(
            select_closest_expert(&robot, &[robot.clone(), robot.clone()], &cfg).unwrap(),
            0
        );
    }

    #[test]
    fn diagonality_examples() {
        let t = 4;
        let diag = Matrix::from_fn(t, t, |i, j| if i == j { 0.25 } else { 0.0 });
        let anti = Matrix::from_fn(t, t, |i, j| if i + j == t - 1 { 0.25 } else { 0.0 });
        let diag = TransportPlan::from_mass(diag).unwrap();
        let anti = TransportPlan::from_mass(anti).unwrap();
        assert!((plan_diagonality(&diag).unwrap() - 1.0).abs() < 1e-15);
        assert!((plan_diagonality(&TransportPlan::uniform(4, 4)).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(plan_diagonality(&anti).unwrap(), 0.0);
        assert_eq!(
            plan_diagonality(&TransportPlan::uniform(2, 3)),
            Err(Error::NonSquare(2, 3))
        );
    }
}
