//! Semilinear systems `du/dt = L·u + f(u, t)` and the Heun predictor–corrector
//! integrator used both as the accuracy baseline and to solve the auxiliary
//! problems behind the ETD coefficients.

use crate::error::{EtdError, Result};
use crate::matrix::{DenseMatrix, MatVec};

/// Max-norm above which a trajectory is treated as diverged.
pub const BLOW_UP_LIMIT: f64 = 1e12;

/// Field samples together with the simulation time they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub values: Vec<f64>,
    pub time: f64,
}

impl State {
    pub fn new(values: Vec<f64>, time: f64) -> Self {
        Self { values, time }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![0.0; dim], 0.0)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max_norm(&self) -> f64 {
        max_norm(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A system of the form `du/dt = L·u + f(u, t)` with a time-independent linear part.
///
/// Implementations are shared read-only across threads when coefficient columns
/// are built in parallel, hence the `Sync` bound.
pub trait SemiLinearSystem: Sync {
    fn dim(&self) -> usize;

    /// `out = L·u`.
    fn apply_linear(&self, u: &[f64], out: &mut [f64]);

    /// `out = f(u, t)`.
    fn eval_nonlinear(&self, u: &[f64], t: f64, out: &mut [f64]);

    /// `out = L·u + f(u, t)`. `scratch` is a work vector of length `dim`.
    fn rhs_into(&self, u: &[f64], t: f64, out: &mut [f64], scratch: &mut [f64]) {
        self.apply_linear(u, out);
        self.eval_nonlinear(u, t, scratch);
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o += s;
        }
    }

    /// Largest stable explicit stepsize, when the system knows one.
    fn stability_limit(&self) -> Option<f64> {
        None
    }
}

impl<S: SemiLinearSystem + ?Sized> SemiLinearSystem for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply_linear(&self, u: &[f64], out: &mut [f64]) {
        (**self).apply_linear(u, out)
    }
    fn eval_nonlinear(&self, u: &[f64], t: f64, out: &mut [f64]) {
        (**self).eval_nonlinear(u, t, out)
    }
    fn rhs_into(&self, u: &[f64], t: f64, out: &mut [f64], scratch: &mut [f64]) {
        (**self).rhs_into(u, t, out, scratch)
    }
    fn stability_limit(&self) -> Option<f64> {
        (**self).stability_limit()
    }
}

/// A system assembled from two closures.
pub struct FnSystem<Lin, NonLin> {
    dim: usize,
    linear: Lin,
    nonlinear: NonLin,
}

impl<Lin, NonLin> FnSystem<Lin, NonLin>
where
    Lin: Fn(&[f64], &mut [f64]) + Sync,
    NonLin: Fn(&[f64], f64, &mut [f64]) + Sync,
{
    pub fn new(dim: usize, linear: Lin, nonlinear: NonLin) -> Self {
        Self {
            dim,
            linear,
            nonlinear,
        }
    }
}

impl<Lin, NonLin> SemiLinearSystem for FnSystem<Lin, NonLin>
where
    Lin: Fn(&[f64], &mut [f64]) + Sync,
    NonLin: Fn(&[f64], f64, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply_linear(&self, u: &[f64], out: &mut [f64]) {
        (self.linear)(u, out)
    }
    fn eval_nonlinear(&self, u: &[f64], t: f64, out: &mut [f64]) {
        (self.nonlinear)(u, t, out)
    }
}

pub type Nonlinearity = Box<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// Linear part given as an explicit dense matrix, with an optional nonlinearity
/// (absent means `f ≡ 0`).
pub struct MatrixSystem {
    matrix: DenseMatrix,
    nonlinear: Option<Nonlinearity>,
}

impl MatrixSystem {
    pub fn new(matrix: DenseMatrix, nonlinear: Option<Nonlinearity>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(EtdError::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        Ok(Self { matrix, nonlinear })
    }

    pub fn linear(matrix: DenseMatrix) -> Result<Self> {
        Self::new(matrix, None)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }
}

impl SemiLinearSystem for MatrixSystem {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply_linear(&self, u: &[f64], out: &mut [f64]) {
        self.matrix.matvec_into(u, out)
    }
    fn eval_nonlinear(&self, u: &[f64], t: f64, out: &mut [f64]) {
        match &self.nonlinear {
            Some(f) => f(u, t, out),
            None => out.fill(0.0),
        }
    }
}

/// `du/dt = L·u + e_k·t^(n−1)`: the linear part of `base` driven by a monomial
/// in time acting on a single component. Its solutions from `u(0) = 0` give
/// the columns of `M_n`.
pub struct ForcedLinearSystem<'a, S: ?Sized> {
    base: &'a S,
    column: usize,
    power: u32,
}

impl<'a, S: SemiLinearSystem + ?Sized> ForcedLinearSystem<'a, S> {
    pub fn new(base: &'a S, column: usize, power: u32) -> Result<Self> {
        if !(1..=3).contains(&power) {
            return Err(EtdError::Config(format!(
                "forcing power must be 1, 2 or 3, got {power}"
            )));
        }
        if column >= base.dim() {
            return Err(EtdError::DimensionMismatch {
                expected: base.dim(),
                got: column,
            });
        }
        Ok(Self {
            base,
            column,
            power,
        })
    }

    pub fn column(&self) -> usize {
        self.column
    }

    pub fn power(&self) -> u32 {
        self.power
    }

    #[inline]
    fn forcing(&self, t: f64) -> f64 {
        match self.power {
            1 => 1.0,
            2 => t,
            _ => t * t,
        }
    }
}

impl<S: SemiLinearSystem + ?Sized> SemiLinearSystem for ForcedLinearSystem<'_, S> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn apply_linear(&self, u: &[f64], out: &mut [f64]) {
        self.base.apply_linear(u, out)
    }
    fn eval_nonlinear(&self, _u: &[f64], t: f64, out: &mut [f64]) {
        out.fill(0.0);
        out[self.column] = self.forcing(t);
    }
    fn rhs_into(&self, u: &[f64], t: f64, out: &mut [f64], _scratch: &mut [f64]) {
        self.base.apply_linear(u, out);
        out[self.column] += self.forcing(t);
    }
}

/// Pure linear flow `du/dt = L·u` of `base`; its solutions give the columns of `Q`.
pub struct UnforcedLinearSystem<'a, S: ?Sized>(pub &'a S);

impl<S: SemiLinearSystem + ?Sized> SemiLinearSystem for UnforcedLinearSystem<'_, S> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply_linear(&self, u: &[f64], out: &mut [f64]) {
        self.0.apply_linear(u, out)
    }
    fn eval_nonlinear(&self, _u: &[f64], _t: f64, out: &mut [f64]) {
        out.fill(0.0)
    }
    fn rhs_into(&self, u: &[f64], _t: f64, out: &mut [f64], _scratch: &mut [f64]) {
        self.0.apply_linear(u, out)
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(EtdError::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Sum of squares with four independent accumulators, so the hot loops stay vectorized.
#[inline]
pub(crate) fn sum_sq(v: &[f64]) -> f64 {
    let mut acc = [0.0_f64; 4];
    let chunks = v.chunks_exact(4);
    let rem = chunks.remainder();
    for c in chunks {
        acc[0] += c[0] * c[0];
        acc[1] += c[1] * c[1];
        acc[2] += c[2] * c[2];
        acc[3] += c[3] * c[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for x in rem {
        s += x * x;
    }
    s
}

/// Blow-up guard: fails if any entry is non-finite or the max-norm exceeds [`BLOW_UP_LIMIT`].
#[inline]
pub(crate) fn guard(v: &[f64], step: usize, time: f64, stage: &'static str) -> Result<()> {
    // ‖v‖² ≤ limit² implies ‖v‖∞ ≤ limit; NaN and inf fail the comparison.
    if sum_sq(v) <= BLOW_UP_LIMIT * BLOW_UP_LIMIT {
        return Ok(());
    }
    if v.iter().all(|x| x.is_finite()) && max_norm(v) <= BLOW_UP_LIMIT {
        return Ok(());
    }
    Err(EtdError::BlowUp { step, time, stage })
}

/// `L·u + f(u, t)` as a fresh vector.
pub fn rhs_eval<S: SemiLinearSystem + ?Sized>(sys: &S, u: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dim(sys.dim(), u.len())?;
    let mut out = vec![0.0; u.len()];
    let mut scratch = vec![0.0; u.len()];
    sys.rhs_into(u, t, &mut out, &mut scratch);
    Ok(out)
}

/// Work vectors for the predictor–corrector step.
#[derive(Clone, Debug)]
pub struct PcWorkspace {
    slope: Vec<f64>,
    predictor: Vec<f64>,
    slope_next: Vec<f64>,
    scratch: Vec<f64>,
}

impl PcWorkspace {
    pub fn new(dim: usize) -> Self {
        Self {
            slope: vec![0.0; dim],
            predictor: vec![0.0; dim],
            slope_next: vec![0.0; dim],
            scratch: vec![0.0; dim],
        }
    }
}

/// One Heun step in place, `u(t) → u(t + τ₁)`:
///
/// ```text
/// F  = L·u + f(u, t)
/// a  = u + τ₁·F
/// F⁺ = L·a + f(a, t + τ₁)
/// u ← u + τ₁·(F + F⁺)/2
/// ```
#[inline]
pub fn pc_advance<S: SemiLinearSystem + ?Sized>(
    sys: &S,
    u: &mut [f64],
    t: f64,
    tau1: f64,
    ws: &mut PcWorkspace,
) {
    sys.rhs_into(u, t, &mut ws.slope, &mut ws.scratch);
    for ((a, &x), &f) in ws.predictor.iter_mut().zip(u.iter()).zip(ws.slope.iter()) {
        *a = x + tau1 * f;
    }
    sys.rhs_into(&ws.predictor, t + tau1, &mut ws.slope_next, &mut ws.scratch);
    let half = 0.5 * tau1;
    for ((x, &f), &g) in u.iter_mut().zip(ws.slope.iter()).zip(ws.slope_next.iter()) {
        *x += half * (f + g);
    }
}

/// One predictor–corrector step returning a new state.
pub fn pc_step<S: SemiLinearSystem + ?Sized>(sys: &S, u: &State, tau1: f64) -> Result<State> {
    check_dim(sys.dim(), u.dim())?;
    if !(tau1 > 0.0 && tau1.is_finite()) {
        return Err(EtdError::Config(format!("stepsize must be positive, got {tau1}")));
    }
    let mut ws = PcWorkspace::new(u.dim());
    let mut next = u.clone();
    pc_advance(sys, &mut next.values, u.time, tau1, &mut ws);
    next.time = u.time + tau1;
    guard(&next.values, 1, next.time, "pc")?;
    Ok(next)
}

/// Number of steps of size at most `tau1` covering `span`. Spans that are an
/// exact multiple of `tau1` up to rounding give exactly that multiple.
pub fn step_count(span: f64, tau1: f64) -> usize {
    let ratio = span / tau1;
    ((ratio * (1.0 - 1e-12)).ceil() as usize).max(1)
}

/// Repeated [`pc_step`] from `u0.time` to exactly `t_end`, shortening the final step.
pub fn pc_integrate<S: SemiLinearSystem + ?Sized>(
    sys: &S,
    u0: &State,
    t_end: f64,
    tau1: f64,
) -> Result<State> {
    check_dim(sys.dim(), u0.dim())?;
    if !(tau1 > 0.0 && tau1.is_finite()) {
        return Err(EtdError::Config(format!("stepsize must be positive, got {tau1}")));
    }
    let span = t_end - u0.time;
    if span == 0.0 {
        return Ok(u0.clone());
    }
    if !(span > 0.0) {
        return Err(EtdError::Config(format!(
            "end time {t_end} precedes start time {}",
            u0.time
        )));
    }
    let n = step_count(span, tau1);
    let mut ws = PcWorkspace::new(u0.dim());
    let mut u = u0.values.clone();
    for k in 0..n {
        let t = u0.time + k as f64 * tau1;
        let h = if k + 1 == n { t_end - t } else { tau1 };
        pc_advance(sys, &mut u, t, h, &mut ws);
        guard(&u, k + 1, t + h, "pc")?;
    }
    Ok(State::new(u, t_end))
}

/// Runs exactly `n_steps` uniform predictor–corrector steps from `t0`, handing
/// each intermediate solution to `on_step(step_index, values)`.
pub fn pc_run<S, F>(
    sys: &S,
    u: &mut [f64],
    t0: f64,
    tau1: f64,
    n_steps: usize,
    mut on_step: F,
) -> Result<()>
where
    S: SemiLinearSystem + ?Sized,
    F: FnMut(usize, &[f64]),
{
    check_dim(sys.dim(), u.len())?;
    let mut ws = PcWorkspace::new(u.len());
    for k in 0..n_steps {
        let t = t0 + k as f64 * tau1;
        pc_advance(sys, u, t, tau1, &mut ws);
        guard(u, k + 1, t + tau1, "pc")?;
        on_step(k + 1, u);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(lambda: f64, forcing: f64) -> impl SemiLinearSystem {
        FnSystem::new(
            1,
            move |u: &[f64], out: &mut [f64]| out[0] = lambda * u[0],
            move |_u: &[f64], _t: f64, out: &mut [f64]| out[0] = forcing,
        )
    }

    #[test]
    fn rhs_of_zero_operator_is_forcing() {
        let sys = scalar(0.0, 1.0);
        assert_eq!(rhs_eval(&sys, &[5.0], 0.0).unwrap(), vec![1.0]);
    }

    #[test]
    fn rhs_of_scalar_decay() {
        let sys = scalar(-1.0, 0.0);
        assert_eq!(rhs_eval(&sys, &[2.0], 0.0).unwrap(), vec![-2.0]);
    }

    #[test]
    fn rhs_rejects_wrong_length() {
        let sys = scalar(-1.0, 0.0);
        assert!(matches!(
            rhs_eval(&sys, &[1.0, 2.0], 0.0),
            Err(EtdError::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn heun_step_on_decay() {
        // 1 - 0.1 + 0.01/2
        let sys = scalar(-1.0, 0.0);
        let next = pc_step(&sys, &State::new(vec![1.0], 0.0), 0.1).unwrap();
        assert!((next.values[0] - 0.905).abs() < 1e-15);
        assert!((next.time - 0.1).abs() < 1e-15);
    }

    #[test]
    fn identity_dynamics_leave_state_alone() {
        let sys = scalar(0.0, 0.0);
        let u = State::new(vec![3.25], 1.0);
        let next = pc_step(&sys, &u, 0.1).unwrap();
        assert_eq!(next.values, u.values);
        assert_eq!(next.time, 1.1);
    }

    #[test]
    fn constant_slope_is_exact() {
        let sys = scalar(0.0, 1.0);
        let next = pc_step(&sys, &State::zeros(1), 0.1).unwrap();
        assert_eq!(next.values[0], 0.1);
    }

    #[test]
    fn integrate_to_start_is_identity() {
        let sys = scalar(-1.0, 0.0);
        let u0 = State::new(vec![2.0], 0.5);
        assert_eq!(pc_integrate(&sys, &u0, 0.5, 0.1).unwrap(), u0);
    }

    #[test]
    fn integrate_lands_on_end_time() {
        let sys = scalar(-1.0, 0.0);
        let out = pc_integrate(&sys, &State::new(vec![1.0], 0.0), 0.35, 0.1).unwrap();
        assert_eq!(out.time, 0.35);
        // three full steps and one of 0.05
        let mut expect = 1.0;
        for h in [0.1, 0.1, 0.1, 0.05] {
            expect *= 1.0 - h + h * h / 2.0;
        }
        assert!((out.values[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let sys = scalar(-100.0, 0.0);
        let err = pc_integrate(&sys, &State::new(vec![1.0], 0.0), 10.0, 0.1).unwrap_err();
        match err {
            EtdError::BlowUp { step, time, .. } => {
                assert!(step > 1);
                assert!(time > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn guard_catches_nan_and_large() {
        assert!(guard(&[0.0, f64::NAN], 1, 0.0, "x").is_err());
        assert!(guard(&[f64::INFINITY], 1, 0.0, "x").is_err());
        assert!(guard(&[2e12], 1, 0.0, "x").is_err());
        assert!(guard(&[1e12; 3], 1, 0.0, "x").is_ok());
    }

    #[test]
    fn step_count_snaps_to_multiples() {
        assert_eq!(step_count(0.01, 1e-5), 1000);
        assert_eq!(step_count(1.0, 0.1), 10);
        assert_eq!(step_count(0.35, 0.1), 4);
        assert_eq!(step_count(1e-9, 0.1), 1);
    }

    #[test]
    fn forced_system_adds_monomial() {
        let base = scalar(-2.0, 123.0);
        let forced = ForcedLinearSystem::new(&base, 0, 3).unwrap();
        assert_eq!(rhs_eval(&forced, &[1.0], 0.5).unwrap(), vec![-2.0 + 0.25]);
        assert!(ForcedLinearSystem::new(&base, 0, 4).is_err());
        assert!(ForcedLinearSystem::new(&base, 1, 1).is_err());
    }
}
