//! Coefficient matrices `Q(τ) = e^{Lτ}` and `M_n(τ) = ∫₀^τ e^{L(τ−t)} t^{n−1} dt`
//! built column by column from auxiliary linear problems.
//!
//! Column `k` of `Q` is the solution at `t = τ` of `du/dt = L·u` started from
//! the unit vector `e_k`; column `k` of `M_n` is the solution of
//! `du/dt = L·u + e_k·t^{n−1}` started from zero. Both are integrated with the
//! predictor–corrector scheme at a tiny stepsize `τ₁`, so nothing about `L`
//! beyond its action on vectors is needed. The half-step matrices `Q(τ/2)` and
//! `M₁(τ/2)` are read off the same trajectories at the midpoint.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{EtdError, Result};
use crate::matrix::{DenseMatrix, MatVec};
use crate::system::{pc_run, ForcedLinearSystem, SemiLinearSystem, UnforcedLinearSystem};

/// Auxiliary stepsize actually used: the largest `τ₁' ≤ τ₁` such that both
/// `τ` and `τ/2` are integer multiples of it. Returns `(τ₁', steps to τ/2)`.
pub fn snap_aux_stepsize(tau: f64, tau1: f64) -> Result<(f64, usize)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(EtdError::Config(format!("ETD stepsize must be positive, got {tau}")));
    }
    if !(tau1 > 0.0 && tau1.is_finite()) {
        return Err(EtdError::Config(format!(
            "auxiliary stepsize must be positive, got {tau1}"
        )));
    }
    let ratio = tau / (2.0 * tau1);
    let half_steps = ((ratio * (1.0 - 1e-12)).ceil() as usize).max(1);
    Ok((tau / (2 * half_steps) as f64, half_steps))
}

/// Which auxiliary problem a column build solves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Aux {
    Propagator,
    Forced(u32),
}

impl Aux {
    fn name(self) -> &'static str {
        match self {
            Aux::Propagator => "Q",
            Aux::Forced(1) => "M1",
            Aux::Forced(2) => "M2",
            Aux::Forced(_) => "M3",
        }
    }
}

/// Integrates one auxiliary column over `2·half_steps` steps of `tau1`,
/// returning the solution at the midpoint and at the end.
fn build_column<S: SemiLinearSystem + ?Sized>(
    sys: &S,
    aux: Aux,
    column: usize,
    tau1: f64,
    half_steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sys.dim();
    let mut u = vec![0.0; n];
    let mut mid = Vec::new();
    let on_step = |step: usize, v: &[f64]| {
        if step == half_steps {
            mid = v.to_vec();
        }
    };
    let res = match aux {
        Aux::Propagator => {
            u[column] = 1.0;
            pc_run(&UnforcedLinearSystem(sys), &mut u, 0.0, tau1, 2 * half_steps, on_step)
        }
        Aux::Forced(power) => {
            let forced = ForcedLinearSystem::new(sys, column, power)?;
            pc_run(&forced, &mut u, 0.0, tau1, 2 * half_steps, on_step)
        }
    };
    res.map_err(|e| EtdError::Builder {
        matrix: aux.name(),
        column,
        source: Box::new(e),
    })?;
    Ok((mid, u))
}

/// Builds the full-step and half-step matrices of one auxiliary problem.
fn build_pair<S: SemiLinearSystem + ?Sized>(
    sys: &S,
    aux: Aux,
    tau1: f64,
    half_steps: usize,
    parallel: bool,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let n = sys.dim();
    let columns: Vec<(Vec<f64>, Vec<f64>)> = if parallel {
        (0..n)
            .into_par_iter()
            .map(|k| build_column(sys, aux, k, tau1, half_steps))
            .collect::<Result<_>>()?
    } else {
        (0..n)
            .map(|k| build_column(sys, aux, k, tau1, half_steps))
            .collect::<Result<_>>()?
    };
    let mut half = DenseMatrix::zeros(n, n);
    let mut full = DenseMatrix::zeros(n, n);
    for (k, (mid, end)) in columns.iter().enumerate() {
        half.set_column(k, mid);
        full.set_column(k, end);
    }
    Ok((full, half))
}

/// `Q(τ)` integrated with auxiliary stepsize `τ₁` (snapped, see [`snap_aux_stepsize`]).
pub fn build_q<S: SemiLinearSystem + ?Sized>(sys: &S, tau: f64, tau1: f64) -> Result<DenseMatrix> {
    let (tau1, half_steps) = snap_aux_stepsize(tau, tau1)?;
    Ok(build_pair(sys, Aux::Propagator, tau1, half_steps, false)?.0)
}

/// `M_n(τ)` for `n ∈ {1, 2, 3}`.
pub fn build_m<S: SemiLinearSystem + ?Sized>(
    sys: &S,
    n: u32,
    tau: f64,
    tau1: f64,
) -> Result<DenseMatrix> {
    if !(1..=3).contains(&n) {
        return Err(EtdError::Config(format!("M_n is available for n = 1, 2, 3; got {n}")));
    }
    let (tau1, half_steps) = snap_aux_stepsize(tau, tau1)?;
    Ok(build_pair(sys, Aux::Forced(n), tau1, half_steps, false)?.0)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BuildOptions {
    /// Build columns on the rayon pool.
    pub parallel: bool,
    /// Largest admissible `τ₁`; overrides the limit the system reports.
    pub stability_limit: Option<f64>,
}

/// Precomputed matrices for one ETD stepsize `τ`.
#[derive(Clone, Debug)]
pub struct EtdCoefficients {
    tau: f64,
    order: u8,
    aux_stepsize: f64,
    build_seconds: f64,
    pub q: DenseMatrix,
    pub q_half: Option<DenseMatrix>,
    pub m1: DenseMatrix,
    pub m1_half: Option<DenseMatrix>,
    pub m2: DenseMatrix,
    pub m3: Option<DenseMatrix>,
}

impl EtdCoefficients {
    /// Bundles externally computed matrices, checking shapes and the presence
    /// pattern for `order` (2 needs `Q, M1, M2`; 3 and 4 need all six).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        tau: f64,
        order: u8,
        aux_stepsize: f64,
        q: DenseMatrix,
        q_half: Option<DenseMatrix>,
        m1: DenseMatrix,
        m1_half: Option<DenseMatrix>,
        m2: DenseMatrix,
        m3: Option<DenseMatrix>,
    ) -> Result<Self> {
        if !(2..=4).contains(&order) {
            return Err(EtdError::Config(format!("scheme order must be 2, 3 or 4; got {order}")));
        }
        let (q_half, m1_half, m3) = if order == 2 {
            (None, None, None)
        } else {
            (
                Some(q_half.ok_or(EtdError::MissingMatrix("Q_half"))?),
                Some(m1_half.ok_or(EtdError::MissingMatrix("M1_half"))?),
                Some(m3.ok_or(EtdError::MissingMatrix("M3"))?),
            )
        };
        let coef = Self {
            tau,
            order,
            aux_stepsize,
            build_seconds: 0.0,
            q,
            q_half,
            m1,
            m1_half,
            m2,
            m3,
        };
        let n = coef.dim();
        for (_, m) in coef.matrices() {
            if m.nrows() != n || m.ncols() != n {
                return Err(EtdError::DimensionMismatch {
                    expected: n,
                    got: m.nrows().max(m.ncols()),
                });
            }
            if !m.is_finite() {
                return Err(EtdError::Config("coefficient matrix has non-finite entries".into()));
            }
        }
        Ok(coef)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn dim(&self) -> usize {
        use crate::matrix::MatVec;
        self.q.nrows()
    }

    pub fn aux_stepsize(&self) -> f64 {
        self.aux_stepsize
    }

    /// Wall time spent building; zero when the bundle came from a cache or
    /// from [`EtdCoefficients::from_parts`].
    pub fn build_seconds(&self) -> f64 {
        self.build_seconds
    }

    /// Present matrices in storage order: `Q, Q_half, M1, M1_half, M2, M3`.
    pub fn matrices(&self) -> Vec<(&'static str, &DenseMatrix)> {
        let mut out = vec![("Q", &self.q)];
        if let Some(m) = &self.q_half {
            out.push(("Q_half", m));
        }
        out.push(("M1", &self.m1));
        if let Some(m) = &self.m1_half {
            out.push(("M1_half", m));
        }
        out.push(("M2", &self.m2));
        if let Some(m) = &self.m3 {
            out.push(("M3", m));
        }
        out
    }
}

/// Builds every matrix the ETD scheme of the given order needs.
pub fn build_coefficients<S: SemiLinearSystem + ?Sized>(
    sys: &S,
    tau: f64,
    tau1: f64,
    order: u8,
    opts: BuildOptions,
) -> Result<EtdCoefficients> {
    if !(2..=4).contains(&order) {
        return Err(EtdError::Config(format!("scheme order must be 2, 3 or 4; got {order}")));
    }
    if let Some(limit) = opts.stability_limit.or_else(|| sys.stability_limit()) {
        if tau1 > limit {
            return Err(EtdError::Config(format!(
                "auxiliary stepsize {tau1:e} exceeds the stability limit {limit:e}"
            )));
        }
    }
    let (tau1_used, half_steps) = snap_aux_stepsize(tau, tau1)?;
    let start = Instant::now();
    let pair = |aux| build_pair(sys, aux, tau1_used, half_steps, opts.parallel);
    let (q, q_half) = pair(Aux::Propagator)?;
    let (m1, m1_half) = pair(Aux::Forced(1))?;
    let (m2, _) = pair(Aux::Forced(2))?;
    let m3 = if order >= 3 {
        Some(pair(Aux::Forced(3))?.0)
    } else {
        None
    };
    let mut coef = EtdCoefficients::from_parts(
        tau,
        order,
        tau1_used,
        q,
        Some(q_half),
        m1,
        Some(m1_half),
        m2,
        m3,
    )?;
    coef.build_seconds = start.elapsed().as_secs_f64();
    Ok(coef)
}

/// Frobenius norms of the inverse-free consistency identities
/// `L·M₁ = Q − I`, `L·M₂ = M₁ − τI`, `L·M₃ = 2M₂ − τ²I` and `Q(τ) = Q(τ/2)²`.
#[derive(Clone, Copy, Debug)]
pub struct CoefficientResiduals {
    pub m1: f64,
    pub m2: f64,
    pub m3: Option<f64>,
    pub semigroup: Option<f64>,
}

impl CoefficientResiduals {
    pub fn max(&self) -> f64 {
        [Some(self.m1), Some(self.m2), self.m3, self.semigroup]
            .into_iter()
            .flatten()
            .fold(0.0, f64::max)
    }
}

/// `L·M` computed by applying the system's linear part column by column.
pub fn apply_linear_to_matrix<S: SemiLinearSystem + ?Sized>(sys: &S, m: &DenseMatrix) -> DenseMatrix {

    let n = m.nrows();
    let mut out = DenseMatrix::zeros(n, m.ncols());
    let mut col_out = vec![0.0; n];
    for j in 0..m.ncols() {
        sys.apply_linear(&m.column(j), &mut col_out);
        out.set_column(j, &col_out);
    }
    out
}

pub fn residuals<S: SemiLinearSystem + ?Sized>(
    sys: &S,
    coef: &EtdCoefficients,
) -> CoefficientResiduals {
    let n = coef.dim();
    let tau = coef.tau();
    let identity = DenseMatrix::identity(n);
    let diff = |lhs: &DenseMatrix, rhs: &DenseMatrix| lhs.add_scaled(-1.0, rhs).frobenius_norm();

    let l_m1 = apply_linear_to_matrix(sys, &coef.m1);
    let m1 = diff(&l_m1, &coef.q.add_scaled(-1.0, &identity));
    let l_m2 = apply_linear_to_matrix(sys, &coef.m2);
    let m2 = diff(&l_m2, &coef.m1.add_scaled(-tau, &identity));
    let m3 = coef.m3.as_ref().map(|m3| {
        let l_m3 = apply_linear_to_matrix(sys, m3);
        diff(&l_m3, &coef.m2.scaled(2.0).add_scaled(-tau * tau, &identity))
    });
    let semigroup = coef
        .q_half
        .as_ref()
        .map(|qh| diff(&coef.q, &qh.matmul(qh)));
    CoefficientResiduals {
        m1,
        m2,
        m3,
        semigroup,
    }
}
