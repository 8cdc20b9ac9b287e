//! Finite-difference testbeds: the heterogeneous Cahn–Hilliard equation (CHE)
//!
//! ```text
//! u_t = −v u_x − ∂²ₓ[q(x) u + u_xx − u³]
//! ```
//!
//! and the sixth-order Matthews–Cox equation (MCE)
//!
//! ```text
//! u_t = −v u_x − ∂²ₓ[q(x) u − 2u_xx − u_xxxx − u³]
//! ```
//!
//! on `0 < x < L` with trivial boundary conditions. Unknowns are `u_j` at
//! `x = j·h`, `j = 1..N`, `h = L/N`, and every ghost value outside `1..N`
//! referenced by a stencil is zero.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{EtdError, Result};
use crate::system::{check_dim, SemiLinearSystem};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    n_nodes: usize,
    domain_length: f64,
}

impl GridSpec {
    /// Smallest grid accepted; stencil neighbours beyond the ends are ghost zeros.
    pub const MIN_NODES: usize = 5;

    pub fn new(n_nodes: usize, domain_length: f64) -> Result<Self> {
        if n_nodes < Self::MIN_NODES {
            return Err(EtdError::Config(format!(
                "grid needs at least {} nodes, got {n_nodes}",
                Self::MIN_NODES
            )));
        }
        if !(domain_length > 0.0 && domain_length.is_finite()) {
            return Err(EtdError::Config(format!(
                "domain length must be positive, got {domain_length}"
            )));
        }
        Ok(Self {
            n_nodes,
            domain_length,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn spacing(&self) -> f64 {
        self.domain_length / self.n_nodes as f64
    }

    /// Position of node `j` (1-based); computed as `j·L/N` so that nodes on
    /// the profile jumps land exactly on them.
    pub fn position(&self, j: usize) -> f64 {
        j as f64 * self.domain_length / self.n_nodes as f64
    }
}

/// Piecewise-constant excitability: `2.5` strictly inside `(3L/10, 7L/10)`, `−3` elsewhere.
pub fn excitability_profile(x: f64, domain_length: f64) -> f64 {
    let lo = 3.0 * domain_length / 10.0;
    let hi = 7.0 * domain_length / 10.0;
    if lo < x && x < hi {
        2.5
    } else {
        -3.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    /// Cahn–Hilliard, fourth order.
    Che,
    /// Matthews–Cox, sixth order.
    Mce,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Che => "che",
            ProblemKind::Mce => "mce",
        }
    }

    /// Highest spatial derivative order.
    pub fn derivative_order(self) -> i32 {
        match self {
            ProblemKind::Che => 4,
            ProblemKind::Mce => 6,
        }
    }

    /// Predictor–corrector stability bound: `h⁴/8` (CHE) or `h⁶/32` (MCE).
    pub fn stable_stepsize(self, grid: &GridSpec) -> f64 {
        let h = grid.spacing();
        match self {
            ProblemKind::Che => h.powi(4) / 8.0,
            ProblemKind::Mce => h.powi(6) / 32.0,
        }
    }

    /// Auxiliary-problem stepsize used for coefficient builds: `0.1h⁴` or `0.02h⁶`.
    pub fn preset_aux_stepsize(self, grid: &GridSpec) -> f64 {
        let h = grid.spacing();
        match self {
            ProblemKind::Che => 0.1 * h.powi(4),
            ProblemKind::Mce => 0.02 * h.powi(6),
        }
    }

    /// `h⁴` for CHE, `h⁶` for MCE; the unit in which stepsize factors are given.
    pub fn stepsize_unit(self, grid: &GridSpec) -> f64 {
        grid.spacing().powi(self.derivative_order())
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = EtdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "che" => Ok(ProblemKind::Che),
            "mce" => Ok(ProblemKind::Mce),
            other => Err(EtdError::Config(format!("unknown problem '{other}'"))),
        }
    }
}

/// Free-function form of [`ProblemKind::stable_stepsize`].
pub fn stable_stepsize(kind: ProblemKind, grid: &GridSpec) -> f64 {
    kind.stable_stepsize(grid)
}

/// Discretized CHE or MCE with its linear part stored as per-row stencil weights.
#[derive(Clone, Debug)]
pub struct ModelProblem {
    kind: ProblemKind,
    grid: GridSpec,
    velocity: f64,
    q_values: Vec<f64>,
    half_width: usize,
    /// `bands[w + s][i]` multiplies `u[i + s]` in row `i`; zero where `i + s` is a ghost.
    bands: Vec<Vec<f64>>,
    inv_h2: f64,
}

pub type CheParams = ModelProblem;
pub type MceParams = ModelProblem;

impl ModelProblem {
    /// Builds a problem with `q` sampled from [`excitability_profile`] at the nodes.
    pub fn new(kind: ProblemKind, grid: GridSpec, velocity: f64) -> Self {
        let q: Vec<f64> = (1..=grid.n_nodes())
            .map(|j| excitability_profile(grid.position(j), grid.domain_length()))
            .collect();
        Self::with_excitability(kind, grid, velocity, q).expect("profile has one value per node")
    }

    pub fn che(grid: GridSpec, velocity: f64) -> Self {
        Self::new(ProblemKind::Che, grid, velocity)
    }

    pub fn mce(grid: GridSpec, velocity: f64) -> Self {
        Self::new(ProblemKind::Mce, grid, velocity)
    }

    /// Same operator with arbitrary node values `q_j` (length `N`).
    pub fn with_excitability(
        kind: ProblemKind,
        grid: GridSpec,
        velocity: f64,
        q_values: Vec<f64>,
    ) -> Result<Self> {
        let n = grid.n_nodes();
        check_dim(n, q_values.len())?;
        let h = grid.spacing();
        let (h2, h4, h6) = (h * h, h.powi(4), h.powi(6));
        let adv = velocity / (2.0 * h);

        // (offset, weight from the constant-coefficient stencils)
        let fixed: Vec<(isize, f64)> = match kind {
            // −(u_{j+2} − 4u_{j+1} + 6u_j − 4u_{j−1} + u_{j−2})/h⁴
            ProblemKind::Che => vec![
                (-2, -1.0 / h4),
                (-1, 4.0 / h4),
                (0, -6.0 / h4),
                (1, 4.0 / h4),
                (2, -1.0 / h4),
            ],
            // +2(4th difference)/h⁴ + (6th difference)/h⁶
            ProblemKind::Mce => vec![
                (-3, 1.0 / h6),
                (-2, 2.0 / h4 - 6.0 / h6),
                (-1, -8.0 / h4 + 15.0 / h6),
                (0, 12.0 / h4 - 20.0 / h6),
                (1, -8.0 / h4 + 15.0 / h6),
                (2, 2.0 / h4 - 6.0 / h6),
                (3, 1.0 / h6),
            ],
        };
        let w = match kind {
            ProblemKind::Che => 2,
            ProblemKind::Mce => 3,
        };
        let mut bands = vec![vec![0.0; n]; 2 * w + 1];
        for i in 0..n {
            for &(s, c) in &fixed {
                let k = i as isize + s;
                if k >= 0 && (k as usize) < n {
                    bands[(w as isize + s) as usize][i] += c;
                }
            }
            // v(u_{j−1} − u_{j+1})/(2h) − (q_{j+1}u_{j+1} − 2q_j u_j + q_{j−1}u_{j−1})/h²
            bands[w][i] += 2.0 * q_values[i] / h2;
            if i > 0 {
                bands[w - 1][i] += adv - q_values[i - 1] / h2;
            }
            if i + 1 < n {
                bands[w + 1][i] += -adv - q_values[i + 1] / h2;
            }
        }
        Ok(Self {
            kind,
            grid,
            velocity,
            q_values,
            half_width: w,
            bands,
            inv_h2: 1.0 / h2,
        })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn velocity(&self) -> f64 {
        self.velocity
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q_values
    }

    pub fn stable_stepsize(&self) -> f64 {
        self.kind.stable_stepsize(&self.grid)
    }

    pub fn preset_aux_stepsize(&self) -> f64 {
        self.kind.preset_aux_stepsize(&self.grid)
    }

    /// `L·u` with a length check.
    pub fn linear_apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.grid.n_nodes(), u.len())?;
        let mut out = vec![0.0; u.len()];
        self.apply_banded(u, &mut out);
        Ok(out)
    }

    /// `f(u)`; the nonlinearity is autonomous so there is no time argument.
    pub fn nonlinear_eval(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.grid.n_nodes(), u.len())?;
        let mut out = vec![0.0; u.len()];
        self.cubic_laplacian(u, &mut out, false);
        Ok(out)
    }

    #[inline]
    fn apply_banded(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        let w = self.half_width;
        for (o, (&d, &x)) in out.iter_mut().zip(self.bands[w].iter().zip(u)) {
            *o = d * x;
        }
        for s in 1..=w {
            // superdiagonal +s: out[i] += b[i]·u[i+s], i < n−s
            let sup = &self.bands[w + s][..n - s];
            for ((o, &b), &x) in out[..n - s].iter_mut().zip(sup).zip(&u[s..]) {
                *o += b * x;
            }
            // subdiagonal −s: out[i] += b[i]·u[i−s], i ≥ s
            let sub = &self.bands[w - s][s..];
            for ((o, &b), &x) in out[s..].iter_mut().zip(sub).zip(&u[..n - s]) {
                *o += b * x;
            }
        }
    }

    /// `(u³_{j+1} − 2u³_j + u³_{j−1})/h²`, written to `out` or added to it.
    #[inline]
    fn cubic_laplacian(&self, u: &[f64], out: &mut [f64], accumulate: bool) {
        let n = u.len();
        let c = self.inv_h2;
        let cube = |i: usize| {
            let x = u[i];
            x * x * x
        };
        let mut prev = 0.0;
        let mut cur = cube(0);
        for i in 0..n {
            let next = if i + 1 < n { cube(i + 1) } else { 0.0 };
            let val = (next - 2.0 * cur + prev) * c;
            if accumulate {
                out[i] += val;
            } else {
                out[i] = val;
            }
            prev = cur;
            cur = next;
        }
    }
}

impl SemiLinearSystem for ModelProblem {
    fn dim(&self) -> usize {
        self.grid.n_nodes()
    }

    fn apply_linear(&self, u: &[f64], out: &mut [f64]) {
        self.apply_banded(u, out)
    }

    fn eval_nonlinear(&self, u: &[f64], _t: f64, out: &mut [f64]) {
        self.cubic_laplacian(u, out, false)
    }

    fn rhs_into(&self, u: &[f64], _t: f64, out: &mut [f64], _scratch: &mut [f64]) {
        self.apply_banded(u, out);
        self.cubic_laplacian(u, out, true);
    }

    fn stability_limit(&self) -> Option<f64> {
        Some(self.stable_stepsize())
    }
}

/// `u_j = 0.1·sin³(π x_j / L)`; vanishes with its first two derivatives at both ends.
pub fn initial_condition(grid: &GridSpec) -> Vec<f64> {
    (1..=grid.n_nodes())
        .map(|j| 0.1 * (PI * grid.position(j) / grid.domain_length()).sin().powi(3))
        .collect()
}

/// Name-keyed registry used by the command line.
pub fn build_problem(name: &str, n_nodes: usize, domain_length: f64, velocity: f64) -> Result<ModelProblem> {
    let kind: ProblemKind = name.parse()?;
    Ok(ModelProblem::new(kind, GridSpec::new(n_nodes, domain_length)?, velocity))
}
