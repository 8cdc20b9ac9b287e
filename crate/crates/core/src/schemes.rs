//! Runge–Kutta type ETD schemes written in terms of the precomputed matrices
//! `Q`, `Q(τ/2)`, `M₁`, `M₁(τ/2)`, `M₂`, `M₃`, and the fixed-step driver.
//!
//! With `f_u = f(u, t)` and stage values `a`, `b`, `c`:
//!
//! ```text
//! ETD2RK  a  = Q·u + M₁·f_u
//!         u' = a + M₂·[f(a, t+τ) − f_u]/τ
//!
//! ETD3RK  a  = Q½·u + M₁½·f_u
//!         b  = Q·u + M₁·[2f(a, t+τ/2) − f_u]
//!         u' = Q·u + [2M₃/τ² − 3M₂/τ + M₁]·f_u − [4M₃/τ² − 4M₂/τ]·f_a
//!                  + [2M₃/τ² − M₂/τ]·f(b, t+τ)
//!
//! ETD4RK  a  = Q½·u + M₁½·f_u
//!         b  = Q½·u + M₁½·f(a, t+τ/2)
//!         c  = Q½·a + M₁½·[2f(b, t+τ/2) − f_u]
//!         u' = Q·u + [2M₃/τ² − 3M₂/τ + M₁]·f_u − [2M₃/τ² − 2M₂/τ]·(f_a + f_b)
//!                  + [2M₃/τ² − M₂/τ]·f(c, t+τ)
//! ```
//!
//! The bracketed combinations are applied by folding the stage nonlinearities
//! into one vector per matrix, so each final update costs four products.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::coeffs::EtdCoefficients;
use crate::error::{EtdError, Result};
use crate::matrix::{DenseMatrix, MatVec};
use crate::sparse::Operator;
use crate::system::{check_dim, guard, SemiLinearSystem, State};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    Pc,
    Etd2rk,
    Etd3rk,
    Etd4rk,
}

impl SchemeId {
    pub const ETD: [SchemeId; 3] = [SchemeId::Etd2rk, SchemeId::Etd3rk, SchemeId::Etd4rk];

    /// Coefficient order needed, `None` for the predictor–corrector baseline.
    pub fn coefficient_order(self) -> Option<u8> {
        match self {
            SchemeId::Pc => None,
            SchemeId::Etd2rk => Some(2),
            SchemeId::Etd3rk => Some(3),
            SchemeId::Etd4rk => Some(4),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::Pc => "PC",
            SchemeId::Etd2rk => "ETD2RK",
            SchemeId::Etd3rk => "ETD3RK",
            SchemeId::Etd4rk => "ETD4RK",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = EtdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pc" => Ok(SchemeId::Pc),
            "etd2rk" | "etd2" => Ok(SchemeId::Etd2rk),
            "etd3rk" | "etd3" => Ok(SchemeId::Etd3rk),
            "etd4rk" | "etd4" => Ok(SchemeId::Etd4rk),
            other => Err(EtdError::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Stored-entry counts of the matrices a stepper multiplies with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NnzReport {
    pub q: usize,
    pub m1: usize,
    pub m2: usize,
    pub m3: Option<usize>,
}

/// An ETD scheme bound to one set of coefficients, with preallocated stage vectors.
pub struct EtdStepper {
    scheme: SchemeId,
    tau: f64,
    q: Operator,
    m1: Operator,
    m2: Operator,
    q_half: Option<Operator>,
    m1_half: Option<Operator>,
    m3: Option<Operator>,
    bufs: Stages,
}

struct Stages {
    fu: Vec<f64>,
    fa: Vec<f64>,
    fb: Vec<f64>,
    fc: Vec<f64>,
    qu: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    w: Vec<f64>,
    tmp: Vec<f64>,
}

impl Stages {
    fn new(n: usize) -> Self {
        let z = || vec![0.0; n];
        Self {
            fu: z(),
            fa: z(),
            fb: z(),
            fc: z(),
            qu: z(),
            a: z(),
            b: z(),
            c: z(),
            w: z(),
            tmp: z(),
        }
    }
}

#[inline]
fn add_assign(y: &mut [f64], x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

impl EtdStepper {
    /// `threshold > 0` stores every matrix in compressed rows with entries
    /// `|m| ≤ threshold` dropped; `0` keeps them dense.
    pub fn new(coef: &EtdCoefficients, scheme: SchemeId, threshold: f64) -> Result<Self> {
        if scheme == SchemeId::Pc {
            return Err(EtdError::Config(
                "the predictor-corrector baseline is not an ETD scheme".into(),
            ));
        }
        let needs_half = scheme != SchemeId::Etd2rk;
        let prep = |m: &DenseMatrix| Operator::prepare(m, threshold);
        let opt = |m: &Option<DenseMatrix>, name| -> Result<Option<Operator>> {
            match (m, needs_half) {
                (Some(m), true) => Ok(Some(prep(m)?)),
                (None, true) => Err(EtdError::MissingMatrix(name)),
                (_, false) => Ok(None),
            }
        };
        Ok(Self {
            scheme,
            tau: coef.tau(),
            q: prep(&coef.q)?,
            m1: prep(&coef.m1)?,
            m2: prep(&coef.m2)?,
            q_half: opt(&coef.q_half, "Q_half")?,
            m1_half: opt(&coef.m1_half, "M1_half")?,
            m3: opt(&coef.m3, "M3")?,
            bufs: Stages::new(coef.dim()),
        })
    }

    pub fn scheme(&self) -> SchemeId {
        self.scheme
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn nnz(&self) -> NnzReport {
        NnzReport {
            q: self.q.nnz(),
            m1: self.m1.nnz(),
            m2: self.m2.nnz(),
            m3: self.m3.as_ref().map(Operator::nnz),
        }
    }

    /// Advances `u` from `t` to `t + τ` in place. `step` only labels errors.
    pub fn step<S: SemiLinearSystem + ?Sized>(
        &mut self,
        sys: &S,
        u: &mut [f64],
        t: f64,
        step: usize,
    ) -> Result<()> {
        match self.scheme {
            SchemeId::Etd2rk => self.step2(sys, u, t, step),
            SchemeId::Etd3rk => self.step3(sys, u, t, step),
            SchemeId::Etd4rk => self.step4(sys, u, t, step),
            SchemeId::Pc => unreachable!("rejected in EtdStepper::new"),
        }
    }

    fn step2<S: SemiLinearSystem + ?Sized>(&mut self, sys: &S, u: &mut [f64], t: f64, step: usize) -> Result<()> {
        let tau = self.tau;
        let s = &mut self.bufs;
        sys.eval_nonlinear(u, t, &mut s.fu);
        self.q.matvec_into(u, &mut s.a);
        self.m1.matvec_into(&s.fu, &mut s.tmp);
        add_assign(&mut s.a, &s.tmp);
        guard(&s.a, step, t + tau, "a")?;

        sys.eval_nonlinear(&s.a, t + tau, &mut s.fa);
        for ((w, fa), fu) in s.w.iter_mut().zip(&s.fa).zip(&s.fu) {
            *w = fa - fu;
        }
        self.m2.matvec_into(&s.w, &mut s.tmp);
        let inv_tau = 1.0 / tau;
        for ((x, a), m) in u.iter_mut().zip(&s.a).zip(&s.tmp) {
            *x = a + m * inv_tau;
        }
        guard(u, step, t + tau, "u")
    }

    fn step3<S: SemiLinearSystem + ?Sized>(&mut self, sys: &S, u: &mut [f64], t: f64, step: usize) -> Result<()> {
        let tau = self.tau;
        let Self { q, m1, m2, q_half, m1_half, m3, bufs: s, .. } = self;
        let (q_half, m1_half, m3) = half_ops(q_half, m1_half, m3);
        sys.eval_nonlinear(u, t, &mut s.fu);

        q_half.matvec_into(u, &mut s.a);
        m1_half.matvec_into(&s.fu, &mut s.tmp);
        add_assign(&mut s.a, &s.tmp);
        guard(&s.a, step, t + 0.5 * tau, "a")?;
        sys.eval_nonlinear(&s.a, t + 0.5 * tau, &mut s.fa);

        // Q·u is shared by b and the final update
        q.matvec_into(u, &mut s.qu);
        for ((w, fa), fu) in s.w.iter_mut().zip(&s.fa).zip(&s.fu) {
            *w = 2.0 * fa - fu;
        }
        m1.matvec_into(&s.w, &mut s.b);
        add_assign(&mut s.b, &s.qu);
        guard(&s.b, step, t + tau, "b")?;
        sys.eval_nonlinear(&s.b, t + tau, &mut s.fb);

        let (inv_tau, inv_tau2) = (1.0 / tau, 1.0 / (tau * tau));
        for i in 0..u.len() {
            let (fu, fa, fb) = (s.fu[i], s.fa[i], s.fb[i]);
            s.w[i] = (-3.0 * fu + 4.0 * fa - fb) * inv_tau;
            s.c[i] = (2.0 * fu - 4.0 * fa + 2.0 * fb) * inv_tau2;
        }
        finish(s, m1, m2, m3, u);
        guard(u, step, t + tau, "u")
    }

    fn step4<S: SemiLinearSystem + ?Sized>(&mut self, sys: &S, u: &mut [f64], t: f64, step: usize) -> Result<()> {
        let tau = self.tau;
        let half_t = t + 0.5 * tau;
        let Self { q, m1, m2, q_half, m1_half, m3, bufs: s, .. } = self;
        let (q_half, m1_half, m3) = half_ops(q_half, m1_half, m3);
        sys.eval_nonlinear(u, t, &mut s.fu);

        q_half.matvec_into(u, &mut s.qu);
        m1_half.matvec_into(&s.fu, &mut s.a);
        add_assign(&mut s.a, &s.qu);
        guard(&s.a, step, half_t, "a")?;
        sys.eval_nonlinear(&s.a, half_t, &mut s.fa);

        m1_half.matvec_into(&s.fa, &mut s.b);
        add_assign(&mut s.b, &s.qu);
        guard(&s.b, step, half_t, "b")?;
        sys.eval_nonlinear(&s.b, half_t, &mut s.fb);

        q_half.matvec_into(&s.a, &mut s.c);
        for ((w, fb), fu) in s.w.iter_mut().zip(&s.fb).zip(&s.fu) {
            *w = 2.0 * fb - fu;
        }
        m1_half.matvec_into(&s.w, &mut s.tmp);
        add_assign(&mut s.c, &s.tmp);
        guard(&s.c, step, t + tau, "c")?;
        sys.eval_nonlinear(&s.c, t + tau, &mut s.fc);

        let (inv_tau, inv_tau2) = (1.0 / tau, 1.0 / (tau * tau));
        for i in 0..u.len() {
            let (fu, fab, fc) = (s.fu[i], s.fa[i] + s.fb[i], s.fc[i]);
            s.w[i] = (-3.0 * fu + 2.0 * fab - fc) * inv_tau;
            s.c[i] = (2.0 * fu - 2.0 * fab + 2.0 * fc) * inv_tau2;
        }
        q.matvec_into(u, &mut s.qu);
        finish(s, m1, m2, m3, u);
        guard(u, step, t + tau, "u")
    }

    /// Applies `n_steps` steps starting from `u0`. The observer, if any, sees
    /// every post-step state; its cost is excluded from the returned timing.
    pub fn integrate<S: SemiLinearSystem + ?Sized>(
        &mut self,
        sys: &S,
        u0: &State,
        n_steps: usize,
        mut observer: Option<&mut dyn FnMut(&State)>,
    ) -> Result<Integration> {
        check_dim(self.dim(), u0.dim())?;
        check_dim(sys.dim(), u0.dim())?;
        let mut state = u0.clone();
        let mut stepping = 0.0;
        let t0 = u0.time;
        let loop_start = Instant::now();
        for k in 0..n_steps {
            let t = t0 + k as f64 * self.tau;
            if let Some(obs) = observer.as_deref_mut() {
                let start = Instant::now();
                self.step(sys, &mut state.values, t, k + 1)?;
                state.time = t0 + (k + 1) as f64 * self.tau;
                stepping += start.elapsed().as_secs_f64();
                obs(&state);
            } else {
                self.step(sys, &mut state.values, t, k + 1)?;
            }
        }
        if observer.is_none() {
            stepping = loop_start.elapsed().as_secs_f64();
        }
        state.time = t0 + n_steps as f64 * self.tau;
        Ok(Integration {
            state,
            stepping_seconds: stepping,
        })
    }
}

fn half_ops<'a>(
    q_half: &'a Option<Operator>,
    m1_half: &'a Option<Operator>,
    m3: &'a Option<Operator>,
) -> (&'a Operator, &'a Operator, &'a Operator) {
    let msg = "presence checked in EtdStepper::new";
    (
        q_half.as_ref().expect(msg),
        m1_half.as_ref().expect(msg),
        m3.as_ref().expect(msg),
    )
}

/// `u ← Q·u + M₁·f_u + M₂·w + M₃·c`, with `Q·u` already in `qu` and the stage
/// nonlinearities folded into `w` and `c`.
fn finish(s: &mut Stages, m1: &Operator, m2: &Operator, m3: &Operator, u: &mut [f64]) {
    m1.matvec_into(&s.fu, &mut s.tmp);
    add_assign(&mut s.qu, &s.tmp);
    m2.matvec_into(&s.w, &mut s.tmp);
    add_assign(&mut s.qu, &s.tmp);
    m3.matvec_into(&s.c, &mut s.tmp);
    add_assign(&mut s.qu, &s.tmp);
    u.copy_from_slice(&s.qu);
}

/// Final state of a driver run and the wall time spent stepping.
#[derive(Clone, Debug)]
pub struct Integration {
    pub state: State,
    pub stepping_seconds: f64,
}

fn single_step<S: SemiLinearSystem + ?Sized>(
    coef: &EtdCoefficients,
    sys: &S,
    u: &State,
    scheme: SchemeId,
) -> Result<State> {
    let mut stepper = EtdStepper::new(coef, scheme, 0.0)?;
    check_dim(stepper.dim(), u.dim())?;
    let mut next = u.clone();
    stepper.step(sys, &mut next.values, u.time, 1)?;
    next.time = u.time + coef.tau();
    Ok(next)
}

pub fn etd2rk_step<S: SemiLinearSystem + ?Sized>(coef: &EtdCoefficients, sys: &S, u: &State) -> Result<State> {
    single_step(coef, sys, u, SchemeId::Etd2rk)
}

pub fn etd3rk_step<S: SemiLinearSystem + ?Sized>(coef: &EtdCoefficients, sys: &S, u: &State) -> Result<State> {
    single_step(coef, sys, u, SchemeId::Etd3rk)
}

pub fn etd4rk_step<S: SemiLinearSystem + ?Sized>(coef: &EtdCoefficients, sys: &S, u: &State) -> Result<State> {
    single_step(coef, sys, u, SchemeId::Etd4rk)
}

/// Dense-matrix driver: `n_steps` steps of `scheme`, final time `t0 + n_steps·τ`.
pub fn etd_integrate<S: SemiLinearSystem + ?Sized>(
    coef: &EtdCoefficients,
    sys: &S,
    u0: &State,
    n_steps: usize,
    scheme: SchemeId,
    observer: Option<&mut dyn FnMut(&State)>,
) -> Result<Integration> {
    EtdStepper::new(coef, scheme, 0.0)?.integrate(sys, u0, n_steps, observer)
}
