//! From Lagrangian snapshots back to `u(t, x)`, energies, and the two
//! admissibility conditions (weak energy and one-sided slope bound).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LagrangianState;

/// Relative distance (in units of the domain scale) below which consecutive
/// positions form one cluster.
pub const CLUSTER_TOL: f64 = 1e-12;

/// Relative backwards step in `y` tolerated before reporting disorder.
pub const ORDER_TOL: f64 = 1e-6;

/// Largest crossing, as a fraction of `Δξ`, tolerated between neighbours of
/// which one is broken or close to breaking (`ṽ < −π/2`); such pairs are
/// merged into one cluster point.
pub const DEGENERATE_CROSS_FRACTION: f64 = 0.01;

/// Largest `|ṽ|` at which a node's own slope `tan(ṽ/2)` is used for `u_x`;
/// closer to breaking the secant mean is used.
pub const NODAL_SLOPE_MAX_V: f64 = 0.9 * std::f64::consts::PI;

/// Fraction of the horizon before which the slope bound is not fitted.
pub const OLEINIK_T_MIN_FRACTION: f64 = 0.05;

/// Sampled solution at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalField {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub ux: Vec<f64>,
    /// `½∫(u² + u_x²)`.
    pub energy: f64,
    /// `∫(u² + ½u_x²)`.
    pub energy_h1half: f64,
}

impl PhysicalField {
    pub fn dx(&self) -> f64 {
        let n = self.x.len();
        (self.x[n - 1] - self.x[0]) / (n - 1) as f64
    }

    /// `∫(u² + u_x²)`.
    pub fn h1_squared(&self) -> f64 {
        2.0 * self.energy
    }

    pub fn max_ux(&self) -> f64 {
        self.ux.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(u, u_x)` at `x` by linear interpolation in the samples; zero
    /// outside the grid.
    pub fn sample(&self, x: f64) -> (f64, f64) {
        let n = self.x.len();
        if !(x >= self.x[0] && x <= self.x[n - 1]) {
            return (0.0, 0.0);
        }
        let dx = self.dx();
        let s = ((x - self.x[0]) / dx).min((n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        let a = s - k as f64;
        (
            self.u[k] + a * (self.u[k + 1] - self.u[k]),
            self.ux[k] + a * (self.ux[k + 1] - self.ux[k]),
        )
    }
}

/// Uniform grid of `n` points on `[−D − t·umax, D + t·umax]`.
pub fn x_grid(d: f64, t: f64, umax: f64, n: usize) -> Vec<f64> {
    let half = d + t * umax;
    (0..n).map(|k| -half + 2.0 * half * k as f64 / (n - 1) as f64).collect()
}

/// Domain scale used for the relative cluster and order tolerances.
fn scale(state: &LagrangianState) -> f64 {
    let yb = &state.grid.ybar;
    yb[0].abs().max(yb[yb.len() - 1].abs()).max(1.0)
}

/// Cluster points `(y, u)` of the graph of `ũ` over `y`: nodes at coinciding
/// positions, and runs of adjacent inactive nodes, are merged into their mean.
pub fn cluster_points(state: &LagrangianState) -> Result<(Vec<f64>, Vec<f64>)> {
    cluster_points_indexed(state).map(|(y, u, _)| (y, u))
}

/// As [`cluster_points`], plus the node index of every cluster made of a
/// single node.
fn cluster_points_indexed(state: &LagrangianState) -> Result<(Vec<f64>, Vec<f64>, Vec<Option<usize>>)> {
    let n = state.len();
    let sc = scale(state);
    let mut ys = Vec::with_capacity(n);
    let mut us = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let (mut sum_y, mut sum_u, mut count, mut first) = (state.y[0], state.u[0], 1usize, 0usize);
    let flush = |ys: &mut Vec<f64>, us: &mut Vec<f64>, ids: &mut Vec<Option<usize>>, sy: f64, su: f64, c: usize, i: usize| {
        ys.push(sy / c as f64);
        us.push(su / c as f64);
        ids.push((c == 1).then_some(i));
    };
    for i in 1..n {
        let both_inactive = !state.is_active(i - 1) && !state.is_active(i);
        let gap = state.y[i] - state.y[i - 1];
        let degenerate = [i - 1, i]
            .iter()
            .any(|&j| !state.is_active(j) || state.v[j] < -std::f64::consts::FRAC_PI_2);
        let merge_crossing = degenerate && gap >= -DEGENERATE_CROSS_FRACTION * state.dxi();
        if gap < -ORDER_TOL * sc && !both_inactive && !merge_crossing {
            return Err(Error::OrderViolation {
                index: i - 1,
                left: state.y[i - 1],
                right: state.y[i],
            });
        }
        if both_inactive || gap <= CLUSTER_TOL * sc {
            // includes tolerated crossings (gap < 0)
            sum_y += state.y[i];
            sum_u += state.u[i];
            count += 1;
        } else {
            flush(&mut ys, &mut us, &mut ids, sum_y, sum_u, count, first);
            sum_y = state.y[i];
            sum_u = state.u[i];
            count = 1;
            first = i;
        }
    }
    flush(&mut ys, &mut us, &mut ids, sum_y, sum_u, count, first);
    // Merging inactive runs can leave a mean position at or behind its
    // neighbour; fold such points into the previous cluster.
    let mut out_y: Vec<f64> = Vec::with_capacity(ys.len());
    let mut out_u: Vec<f64> = Vec::with_capacity(us.len());
    let mut out_id: Vec<Option<usize>> = Vec::with_capacity(us.len());
    let mut weight: Vec<f64> = Vec::with_capacity(ys.len());
    for ((y, u), id) in ys.into_iter().zip(us).zip(ids) {
        if let Some(&last) = out_y.last() {
            if y - last <= CLUSTER_TOL * sc {
                let k = out_y.len() - 1;
                let w = weight[k];
                out_y[k] = (last * w + y) / (w + 1.0);
                out_u[k] = (out_u[k] * w + u) / (w + 1.0);
                out_id[k] = None;
                weight[k] = w + 1.0;
                continue;
            }
        }
        out_y.push(y);
        out_u.push(u);
        out_id.push(id);
        weight.push(1.0);
    }
    Ok((out_y, out_u, out_id))
}

/// Maps a snapshot to `u`, `u_x` on `x_grid`. `u` is the piecewise-linear
/// interpolant through the cluster points. On a segment whose two ends are
/// single active nodes with `|ṽ| ≤ NODAL_SLOPE_MAX_V`, `u_x` interpolates
/// their slopes `tan(ṽ/2)` linearly; on any other segment it is the secant
/// slope. Outside the node range both vanish.
pub fn to_physical(state: &LagrangianState, x_grid: &[f64]) -> Result<PhysicalField> {
    let r = Polyline::of_state(state)?;
    let m = r.ys.len();
    let mut u = Vec::with_capacity(x_grid.len());
    let mut ux = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        if m < 2 || x < r.ys[0] || x > r.ys[m - 1] {
            u.push(0.0);
            ux.push(0.0);
            continue;
        }
        let j = r.ys.partition_point(|&y| y <= x).clamp(1, m - 1) - 1;
        let a = (x - r.ys[j]) / (r.ys[j + 1] - r.ys[j]);
        let (s0, s1) = r.segment_slopes(j);
        u.push(r.us[j] + a * (r.us[j + 1] - r.us[j]));
        ux.push(s0 + a * (s1 - s0));
    }
    let (energy, energy_h1half) = field_energies(x_grid, &u, &ux);
    Ok(PhysicalField {
        t: state.t,
        x: x_grid.to_vec(),
        u,
        ux,
        energy,
        energy_h1half,
    })
}

/// The reconstruction of a snapshot before sampling.
struct Polyline {
    ys: Vec<f64>,
    us: Vec<f64>,
    secants: Vec<f64>,
    nodal: Vec<Option<f64>>,
}

impl Polyline {
    fn of_state(state: &LagrangianState) -> Result<Self> {
        let (ys, us, ids) = cluster_points_indexed(state)?;
        let secants = (0..ys.len().saturating_sub(1))
            .map(|k| (us[k + 1] - us[k]) / (ys[k + 1] - ys[k]))
            .collect();
        let nodal = ids
            .iter()
            .map(|id| match *id {
                Some(i) if state.is_active(i) && state.v[i].abs() <= NODAL_SLOPE_MAX_V => Some((0.5 * state.v[i]).tan()),
                _ => None,
            })
            .collect();
        Ok(Polyline { ys, us, secants, nodal })
    }

    /// `u_x` at the two ends of segment `j` (linear in between).
    fn segment_slopes(&self, j: usize) -> (f64, f64) {
        match (self.nodal[j], self.nodal[j + 1]) {
            (Some(l), Some(r)) => (l, r),
            _ => (self.secants[j], self.secants[j]),
        }
    }
}

/// `(½∫(u² + u_x²), ∫(u² + ½u_x²))` of the reconstruction, integrated exactly
/// segment by segment.
pub fn exact_energies(state: &LagrangianState) -> Result<(f64, f64)> {
    let r = Polyline::of_state(state)?;
    // ∫ of the square of a linear function with end values a, b
    let sq = |a: f64, b: f64, w: f64| w * (a * a + a * b + b * b) / 3.0;
    let (mut u2, mut ux2) = (0.0, 0.0);
    for j in 0..r.ys.len().saturating_sub(1) {
        let w = r.ys[j + 1] - r.ys[j];
        let (s0, s1) = r.segment_slopes(j);
        u2 += sq(r.us[j], r.us[j + 1], w);
        ux2 += sq(s0, s1, w);
    }
    Ok((0.5 * (u2 + ux2), u2 + 0.5 * ux2))
}

/// Trapezoid `(½∫(u² + u_x²), ∫(u² + ½u_x²))`.
pub fn field_energies(x: &[f64], u: &[f64], ux: &[f64]) -> (f64, f64) {
    let (mut e, mut h) = (0.0, 0.0);
    for k in 1..x.len() {
        let dx = x[k] - x[k - 1];
        let a = (u[k - 1].powi(2), ux[k - 1].powi(2));
        let b = (u[k].powi(2), ux[k].powi(2));
        e += 0.25 * dx * (a.0 + a.1 + b.0 + b.1);
        h += 0.5 * dx * (a.0 + 0.5 * a.1 + b.0 + 0.5 * b.1);
    }
    (e, h)
}

/// Energies of a state in ξ variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateEnergy {
    /// `Σ[ũ²cos²(ṽ/2) + ½sin²(ṽ/2)]q̃Δξ`, i.e. `∫(u² + ½u_x²)`.
    pub e_h1half: f64,
    /// `½Σ[ũ²cos²(ṽ/2) + sin²(ṽ/2)]q̃Δξ`, i.e. `½∫(u² + u_x²)`.
    pub e_h1: f64,
}

impl StateEnergy {
    /// `∫(u² + u_x²)`.
    pub fn h1_squared(&self) -> f64 {
        2.0 * self.e_h1
    }

    /// `‖u‖_{H¹}`.
    pub fn h1_norm(&self) -> f64 {
        self.h1_squared().max(0.0).sqrt()
    }
}

pub fn energy_of_state(state: &LagrangianState) -> StateEnergy {
    let (mut half, mut full) = (0.0, 0.0);
    for i in 0..state.len() {
        if !state.is_active(i) {
            continue;
        }
        let (s, c) = (0.5 * state.v[i]).sin_cos();
        let a = state.u[i] * state.u[i] * c * c;
        half += (a + 0.5 * s * s) * state.q[i];
        full += (a + s * s) * state.q[i];
    }
    let h = state.dxi();
    StateEnergy {
        e_h1half: half * h,
        e_h1: 0.5 * full * h,
    }
}

/// Largest deviation of `(y_{i+1} − y_i)/Δξ` from the mean of `q̃cos²(ṽ/2)`
/// over adjacent active pairs.
pub fn jacobian_identity_error(state: &LagrangianState) -> f64 {
    let h = state.dxi();
    let jac = |i: usize| state.q[i] * (0.5 * state.v[i]).cos().powi(2);
    (0..state.len().saturating_sub(1))
        .filter(|&i| state.is_active(i) && state.is_active(i + 1))
        .map(|i| ((state.y[i + 1] - state.y[i]) / h - 0.5 * (jac(i) + jac(i + 1))).abs())
        .fold(0.0, f64::max)
}

/// Largest deviation of `y_j − y_0` from the active-set integral of
/// `q̃cos²(ṽ/2)` between the two nodes.
pub fn distance_identity_error(state: &LagrangianState) -> f64 {
    let h = state.dxi();
    let c = |i: usize| {
        if state.is_active(i) {
            state.q[i] * (0.5 * state.v[i]).cos().powi(2) * h
        } else {
            0.0
        }
    };
    let mut acc = 0.0;
    let mut worst: f64 = 0.0;
    for j in 1..state.len() {
        acc += 0.5 * (c(j - 1) + c(j));
        worst = worst.max((state.y[j] - state.y[0] - acc).abs());
    }
    worst
}

/// Outcome of the admissibility checks on a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativeCheck {
    /// `(t, ‖u(t)‖_{H¹})` from the ξ-space sums.
    pub h1_series: Vec<(f64, f64)>,
    /// Largest `(‖u(tₖ₊₁)‖ − ‖u(tₖ)‖)/(tₖ₊₁ − tₖ)` over consecutive snapshots.
    pub max_increase_rate: f64,
    /// The same rate for the squared norm `∫(u² + u_x²)`.
    pub max_increase_rate_squared: f64,
    /// Largest `‖u(t)‖ − ‖u(0)‖`.
    pub max_excess: f64,
    /// Fitted slope constant `K̂ = max_{t ≥ t_min} max_x u_x / (1 + 1/t)`.
    pub k_hat: f64,
    pub t_min: f64,
}

/// Weak-energy and one-sided slope checks. `fields[k]` must be the
/// reconstruction of `snapshots[k]`.
pub fn check_dissipative(snapshots: &[LagrangianState], fields: &[PhysicalField], t_end: f64) -> Result<DissipativeCheck> {
    if snapshots.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "admissibility checks need at least two snapshots, got {}",
            snapshots.len()
        )));
    }
    let squared: Vec<(f64, f64)> = snapshots
        .iter()
        .map(|s| (s.t, energy_of_state(s).h1_squared()))
        .collect();
    let h1_series: Vec<(f64, f64)> = squared.iter().map(|&(t, h)| (t, h.max(0.0).sqrt())).collect();
    let h0 = h1_series[0].1;
    let max_excess = h1_series.iter().map(|&(_, h)| h - h0).fold(0.0, f64::max);
    let max_rate = |series: &[(f64, f64)]| {
        series
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let max_increase_rate = max_rate(&h1_series);
    let max_increase_rate_squared = max_rate(&squared);
    let t_min = OLEINIK_T_MIN_FRACTION * t_end;
    let k_hat = fields
        .iter()
        .filter(|f| f.t >= t_min && f.t > 0.0)
        .map(|f| f.max_ux() / (1.0 + 1.0 / f.t))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DissipativeCheck {
        h1_series,
        max_increase_rate,
        max_increase_rate_squared,
        max_excess,
        k_hat: if k_hat.is_finite() { k_hat } else { 0.0 },
        t_min,
    })
}

/// Strong-form residual `u_t + u u_x + P_x` at the middle field, with `u_t`
/// from a centred difference of the outer two. Points where the sampled
/// slope jumps by more than `jump_tol` between neighbours are skipped. All
/// three fields share one grid.
pub fn strong_form_residual(before: &PhysicalField, mid: &PhysicalField, after: &PhysicalField, jump_tol: f64) -> f64 {
    let (_, px) = crate::nonlocal::eval_p_physical(mid);
    let dt = after.t - before.t;
    let n = mid.x.len();
    let mut worst: f64 = 0.0;
    for k in 2..n - 2 {
        let smooth = (k - 2..k + 2).all(|j| {
            [before, mid, after]
                .iter()
                .all(|f| (f.ux[j + 1] - f.ux[j]).abs() <= jump_tol)
        });
        if !smooth {
            continue;
        }
        let ut = (after.u[k] - before.u[k]) / dt;
        worst = worst.max((ut + mid.u[k] * mid.ux[k] + px[k]).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_xi_grid, initial_state};
    use crate::scenarios::{make_scenario, InitialDatum};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn state(datum: InitialDatum, n: usize) -> LagrangianState {
        let sc = make_scenario(datum.clone(), 20.0, n, 1024, 1.0, 0.5).unwrap();
        initial_state(Arc::new(build_xi_grid(&sc).unwrap()), &datum).unwrap()
    }

    #[test]
    fn exact_energies_converge_to_the_peakon_value() {
        // ∫(u² + ½u_x²) = 1.5 and ½∫(u² + u_x²) = 1 for e^{-|x|}
        let errs: Vec<f64> = [512, 1024, 2048]
            .iter()
            .map(|&n| {
                let (e, h) = exact_energies(&state(InitialDatum::Peakon { c: 1.0 }, n)).unwrap();
                (e - 1.0).abs().max((h - 1.5).abs())
            })
            .collect();
        // the crest segment loses O(Δξ)
        assert!(errs[2] < 5e-3, "{errs:?}");
        assert!(errs[2] < 0.6 * errs[1] && errs[1] < 0.6 * errs[0], "{errs:?}");
    }

    #[test]
    fn smooth_segments_use_nodal_slopes() {
        let s = state(InitialDatum::SmoothBump { amplitude: 0.5, width: 2.0 }, 256);
        let f = to_physical(&s, &s.y).unwrap();
        for i in 1..s.len() - 1 {
            assert!((f.ux[i] - (0.5 * s.v[i]).tan()).abs() < 1e-12);
        }
    }

    #[test]
    fn peakon_round_trip() {
        // the crest lies on a cell face, so the interpolant clips it by ~Δξ/4
        let s = state(InitialDatum::Peakon { c: 1.0 }, 4096);
        let x = x_grid(20.0, 0.0, 1.0, 4001);
        let f = to_physical(&s, &x).unwrap();
        let err = x
            .iter()
            .zip(&f.u)
            .map(|(&x, &u)| (u - (-x.abs()).exp()).abs())
            .fold(0.0, f64::max);
        assert!(err < 4e-3, "{err}");
        let e = energy_of_state(&s);
        assert!((e.e_h1half - 1.5).abs() < 2e-3);
        assert!((e.e_h1 - 1.0).abs() < 2e-3);
        assert!((f.energy - 1.0).abs() < 1e-2);
        assert!((f.energy_h1half - 1.5).abs() < 1e-2);
    }

    #[test]
    fn zero_state() {
        let s = state(InitialDatum::zero(), 64);
        let e = energy_of_state(&s);
        assert_eq!((e.e_h1half, e.e_h1), (0.0, 0.0));
        let f = to_physical(&s, &x_grid(20.0, 0.0, 0.0, 101)).unwrap();
        assert!(f.u.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn all_inactive_zero_state() {
        let mut s = state(InitialDatum::zero(), 64);
        for i in 0..s.len() {
            s.v[i] = -PI - 0.5;
            s.t_br[i] = 0.2;
            s.y[i] = 0.0;
        }
        let (ys, _) = cluster_points(&s).unwrap();
        assert_eq!(ys.len(), 1);
        let f = to_physical(&s, &x_grid(20.0, 0.0, 0.0, 101)).unwrap();
        assert!(f.u.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn order_violation_is_reported() {
        let mut s = state(InitialDatum::Peakon { c: 1.0 }, 64);
        s.y[10] = s.y[12];
        assert!(matches!(cluster_points(&s), Err(Error::OrderViolation { .. })));
    }

    #[test]
    fn jacobian_and_distance_identities_refine() {
        let mut prev = None;
        for n in [256usize, 512, 1024] {
            let s = state(
                InitialDatum::SmoothBump {
                    amplitude: 1.0,
                    width: 1.0,
                },
                n,
            );
            let j = jacobian_identity_error(&s);
            let d = distance_identity_error(&s);
            assert!(d < 1e-2, "{d}");
            if let Some(p) = prev {
                assert!(j <= 0.6 * p, "{j} vs {p}");
            }
            prev = Some(j);
        }
    }

    #[test]
    fn slope_constant_of_zero_solution() {
        let s0 = state(InitialDatum::zero(), 64);
        let mut s1 = s0.clone();
        s1.t = 1.0;
        let x = x_grid(20.0, 0.0, 0.0, 64);
        let f: Vec<_> = [&s0, &s1].iter().map(|s| to_physical(s, &x).unwrap()).collect();
        let c = check_dissipative(&[s0, s1], &f, 1.0).unwrap();
        assert_eq!(c.k_hat, 0.0);
        assert!(c.max_excess == 0.0);
    }
}
