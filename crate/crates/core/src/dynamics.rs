//! Right-hand side of the characteristic system
//!
//! ```text
//! ũ_t = −P̃ₓ
//! ṽ_t = (ũ² − P̃)(1 + cos ṽ) − sin²(ṽ/2)    if ṽ > −π, else −1
//! q̃_t = (ũ² + ½ − P̃)·sin ṽ·q̃               if ṽ > −π, else 0
//! y_t = ũ
//! ```

use std::f64::consts::PI;

use crate::grid::LagrangianState;
use crate::nonlocal::{build_workspace_from, exp_recursion, KernelWorkspace};

/// Distance from ±π inside which the tangent form is not evaluated.
pub const EPS_TAN: f64 = 1e-6;

/// The four evolving columns. Also used for their time derivatives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Columns {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub y: Vec<f64>,
}

/// Time derivative of the state.
pub type StateDerivative = Columns;

impl Columns {
    pub fn zeros(n: usize) -> Self {
        Columns {
            u: vec![0.0; n],
            v: vec![0.0; n],
            q: vec![0.0; n],
            y: vec![0.0; n],
        }
    }

    pub fn of_state(s: &LagrangianState) -> Self {
        Columns {
            u: s.u.clone(),
            v: s.v.clone(),
            q: s.q.clone(),
            y: s.y.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    fn cols_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.u, &mut self.v, &mut self.q, &mut self.y]
    }

    fn cols(&self) -> [&Vec<f64>; 4] {
        [&self.u, &self.v, &self.q, &self.y]
    }

    /// `self = base + a·dir`.
    pub fn set_axpy(&mut self, base: &Columns, a: f64, dir: &Columns) {
        for ((dst, b), d) in self.cols_mut().into_iter().zip(base.cols()).zip(dir.cols()) {
            dst.resize(b.len(), 0.0);
            for ((x, &bi), &di) in dst.iter_mut().zip(b).zip(d) {
                *x = bi + a * di;
            }
        }
    }

    /// `self += a·dir`.
    pub fn axpy(&mut self, a: f64, dir: &Columns) {
        for (dst, d) in self.cols_mut().into_iter().zip(dir.cols()) {
            for (x, &di) in dst.iter_mut().zip(d) {
                *x += a * di;
            }
        }
    }

    /// Sup-norm distance over `(u, v, q)`.
    pub fn sup_dist_uvq(&self, other: &Columns) -> f64 {
        let mut m: f64 = 0.0;
        for (a, b) in [(&self.u, &other.u), (&self.v, &other.v), (&self.q, &other.q)] {
            for (x, y) in a.iter().zip(b) {
                m = m.max((x - y).abs());
            }
        }
        m
    }

    /// Sup-norm distance over all four columns.
    pub fn sup_dist(&self, other: &Columns) -> f64 {
        let m = self.sup_dist_uvq(other);
        self.y.iter().zip(&other.y).fold(m, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Evaluates the right-hand side with a fixed activity mask, reusing its
/// kernel buffers across calls.
#[derive(Debug, Clone)]
pub struct RhsEvaluator {
    pub active: Vec<bool>,
    pub dxi: f64,
    ws: KernelWorkspace,
    p: Vec<f64>,
    px: Vec<f64>,
}

impl RhsEvaluator {
    pub fn new(active: Vec<bool>, dxi: f64) -> Self {
        let n = active.len();
        RhsEvaluator {
            active,
            dxi,
            ws: KernelWorkspace::default(),
            p: vec![0.0; n],
            px: vec![0.0; n],
        }
    }

    pub fn for_state(s: &LagrangianState) -> Self {
        Self::new((0..s.len()).map(|i| s.is_active(i)).collect(), s.dxi())
    }

    /// Pressure values of the last evaluation.
    pub fn pressure(&self) -> (&[f64], &[f64]) {
        (&self.p, &self.px)
    }

    pub fn eval(&mut self, c: &Columns, out: &mut StateDerivative) {
        let n = c.len();
        build_workspace_from(&c.u, &c.v, &c.q, &self.active, self.dxi, &mut self.ws);
        self.p.resize(n, 0.0);
        self.px.resize(n, 0.0);
        exp_recursion(&self.ws.d, &self.ws.w, &mut self.p, &mut self.px);
        out.u.resize(n, 0.0);
        out.v.resize(n, 0.0);
        out.q.resize(n, 0.0);
        out.y.resize(n, 0.0);
        for i in 0..n {
            out.u[i] = -self.px[i];
            out.y[i] = c.u[i];
            if self.active[i] {
                let (u, v, q, p) = (c.u[i], c.v[i], c.q[i], self.p[i]);
                let s = (0.5 * v).sin();
                out.v[i] = (u * u - p) * (1.0 + v.cos()) - s * s;
                out.q[i] = (u * u + 0.5 - p) * v.sin() * q;
            } else {
                out.v[i] = -1.0;
                out.q[i] = 0.0;
            }
        }
    }
}

/// Right-hand side at a state, branching on the state's own activity.
pub fn rhs(state: &LagrangianState) -> StateDerivative {
    let mut ev = RhsEvaluator::for_state(state);
    let mut out = Columns::zeros(state.len());
    ev.eval(&Columns::of_state(state), &mut out);
    out
}

/// `q̃_t` in tangent form `ũₓq̃(1 + 2ũ² − 2P̃)/(1 + ũₓ²)` with `ũₓ = tan(ṽ/2)`.
/// Nodes that are inactive or within [`EPS_TAN`] of ±π give `None`.
pub fn rhs_q_alternate(state: &LagrangianState) -> Vec<Option<f64>> {
    let mut ev = RhsEvaluator::for_state(state);
    let mut out = Columns::zeros(state.len());
    ev.eval(&Columns::of_state(state), &mut out);
    let (p, _) = ev.pressure();
    (0..state.len())
        .map(|i| {
            let v = state.v[i];
            if !ev.active[i] || v.abs() > PI - EPS_TAN {
                return None;
            }
            let ux = (0.5 * v).tan();
            let u = state.u[i];
            Some(ux * state.q[i] * (1.0 + 2.0 * u * u - 2.0 * p[i]) / (1.0 + ux * ux))
        })
        .collect()
}

/// Pointwise form of both `q̃` rates for given `(ũ, ṽ, q̃, P̃)`; used by the
/// equivalence property test and the validation suite.
pub fn dq_both_forms(u: f64, v: f64, q: f64, p: f64) -> (f64, Option<f64>) {
    let direct = (u * u + 0.5 - p) * v.sin() * q;
    let alt = if v.abs() > PI - EPS_TAN {
        None
    } else {
        let ux = (0.5 * v).tan();
        Some(ux * q * (1.0 + 2.0 * u * u - 2.0 * p) / (1.0 + ux * ux))
    };
    (direct, alt)
}

/// Time derivatives of the two discrete energies assembled from the
/// right-hand side: `(d/dt Σ[ũ²cos² + sin²]q̃Δξ, d/dt Σ[ũ²cos² + ½sin²]q̃Δξ)`
/// over active nodes.
pub fn energy_rates(state: &LagrangianState) -> (f64, f64) {
    let r = rhs(state);
    let (mut h1, mut half) = (0.0, 0.0);
    for i in 0..state.len() {
        if !state.is_active(i) {
            continue;
        }
        let (u, v, q) = (state.u[i], state.v[i], state.q[i]);
        let (s, c) = (0.5 * v).sin_cos();
        let (s2, c2) = (s * s, c * c);
        // d/dv cos²(v/2) = −½ sin v,  d/dv sin²(v/2) = ½ sin v
        let half_sin = 0.5 * v.sin();
        let du_term = 2.0 * u * r.u[i] * c2 * q;
        h1 += du_term + (1.0 - u * u) * half_sin * r.v[i] * q + (u * u * c2 + s2) * r.q[i];
        half += du_term + (0.5 - u * u) * half_sin * r.v[i] * q + (u * u * c2 + 0.5 * s2) * r.q[i];
    }
    (h1 * state.dxi(), half * state.dxi())
}

/// One application of the Picard operator on `n_sub + 1` uniform samples of
/// `[t₀, t₀ + dt]`: `U(tₖ) ← U₀ + ∫_{t₀}^{tₖ} F(guess(τ))dτ` with the
/// cumulative trapezoid rule. The activity mask of `ev` is held fixed.
pub fn picard_apply(ev: &mut RhsEvaluator, state0: &Columns, guess: &[Columns], dt: f64) -> Vec<Columns> {
    let n_sub = guess.len() - 1;
    let h = dt / n_sub as f64;
    let mut f_prev = Columns::zeros(state0.len());
    let mut f_next = Columns::zeros(state0.len());
    ev.eval(&guess[0], &mut f_prev);
    let mut out = Vec::with_capacity(n_sub + 1);
    out.push(state0.clone());
    for k in 1..=n_sub {
        ev.eval(&guess[k], &mut f_next);
        let mut next = out[k - 1].clone();
        next.axpy(0.5 * h, &f_prev);
        next.axpy(0.5 * h, &f_next);
        out.push(next);
        std::mem::swap(&mut f_prev, &mut f_next);
    }
    out
}

/// Smallest `ṽ_t` over active nodes with `ṽ ∈ (−π, −π + δ]`, if any.
pub fn max_dv_near_breaking(state: &LagrangianState, delta: f64) -> Option<f64> {
    let r = rhs(state);
    (0..state.len())
        .filter(|&i| state.is_active(i) && state.v[i] <= -PI + delta)
        .map(|i| r.v[i])
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
}
