//! The nonlocal pressure `P = ½e^{-|x|} * (u² + ½u_x²)` and its derivative,
//! in ξ variables and on physical grids, by two exponential recursions.
//!
//! Node distances use a centred prefix `dᵢ = Σ_{j<i} cⱼ + ½cᵢ`, so every cell
//! contributes its weight at its own midpoint.

use crate::grid::LagrangianState;

/// Distance increments, weights and activity mask of one state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KernelWorkspace {
    /// Centred cumulative distance, nondecreasing.
    pub d: Vec<f64>,
    /// `[ũ²cos²(ṽ/2) + ½sin²(ṽ/2)]·q̃·Δξ`, zero on inactive nodes.
    pub w: Vec<f64>,
    /// `cos²(ṽ/2)·q̃·Δξ`, zero on inactive nodes.
    pub c: Vec<f64>,
    pub active: Vec<bool>,
}

/// Fills the workspace from raw columns. `active[i]` is decided by the
/// caller, which lets the stepper pin the active set during a step.
pub fn build_workspace_from(u: &[f64], v: &[f64], q: &[f64], active: &[bool], dxi: f64, ws: &mut KernelWorkspace) {
    let n = u.len();
    ws.d.resize(n, 0.0);
    ws.w.resize(n, 0.0);
    ws.c.resize(n, 0.0);
    ws.active.clear();
    ws.active.extend_from_slice(active);
    let mut prefix = 0.0;
    for i in 0..n {
        let (ci, wi) = if active[i] {
            let (s, co) = (0.5 * v[i]).sin_cos();
            let cos2 = co * co;
            let sin2 = s * s;
            (cos2 * q[i] * dxi, (u[i] * u[i] * cos2 + 0.5 * sin2) * q[i] * dxi)
        } else {
            (0.0, 0.0)
        };
        ws.c[i] = ci;
        ws.w[i] = wi;
        ws.d[i] = prefix + 0.5 * ci;
        prefix += ci;
    }
}

pub fn build_workspace(state: &LagrangianState) -> KernelWorkspace {
    let active: Vec<bool> = (0..state.len()).map(|i| state.is_active(i)).collect();
    let mut ws = KernelWorkspace::default();
    build_workspace_from(&state.u, &state.v, &state.q, &active, state.dxi(), &mut ws);
    ws
}

/// Pressure values at the nodes: `P̃ᵢ = ½Σⱼ e^{-|dᵢ-dⱼ|}wⱼ` and
/// `P̃ₓᵢ = ½(Σ_{j>i} − Σ_{j<i}) e^{-|dᵢ-dⱼ|}wⱼ`.
pub fn eval_p_px(ws: &KernelWorkspace) -> (Vec<f64>, Vec<f64>) {
    let n = ws.d.len();
    let mut p = vec![0.0; n];
    let mut px = vec![0.0; n];
    exp_recursion(&ws.d, &ws.w, &mut p, &mut px);
    (p, px)
}

/// Two-pass recursion shared by the ξ and x evaluations. Positions `d` are
/// nondecreasing; writes `½(L + w + R)` and `½(R − L)`.
pub fn exp_recursion(d: &[f64], w: &[f64], p: &mut [f64], px: &mut [f64]) {
    let n = d.len();
    if n == 0 {
        return;
    }
    // p holds the left sums on the way forward
    let mut left = 0.0;
    p[0] = 0.0;
    for i in 1..n {
        left = (-(d[i] - d[i - 1])).exp() * (left + w[i - 1]);
        p[i] = left;
    }
    let mut right = 0.0;
    for i in (0..n).rev() {
        if i + 1 < n {
            right = (-(d[i + 1] - d[i])).exp() * (right + w[i + 1]);
        }
        let l = p[i];
        p[i] = 0.5 * (l + w[i] + right);
        px[i] = 0.5 * (right - l);
    }
}

/// Direct `O(N²)` double sum, used as an oracle.
pub fn eval_p_px_brute(ws: &KernelWorkspace) -> (Vec<f64>, Vec<f64>) {
    brute_sums(&ws.d, &ws.w)
}

pub fn brute_sums(d: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = d.len();
    let mut p = vec![0.0; n];
    let mut px = vec![0.0; n];
    for i in 0..n {
        let (mut s, mut l, mut r) = (0.0, 0.0, 0.0);
        for j in 0..n {
            let k = (-(d[i] - d[j]).abs()).exp() * w[j];
            s += k;
            if j < i {
                l += k;
            } else if j > i {
                r += k;
            }
        }
        p[i] = 0.5 * s;
        px[i] = 0.5 * (r - l);
    }
    (p, px)
}

/// Trapezoid weights of `u² + ½u_x²` on a uniform grid of spacing `dx`.
pub fn physical_weights(u: &[f64], ux: &[f64], dx: f64) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|k| {
            let end = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
            end * (u[k] * u[k] + 0.5 * ux[k] * ux[k]) * dx
        })
        .collect()
}

/// `P` and `Pₓ` at the grid points `x` (uniform) for samples `u`, `u_x`.
pub fn eval_p_on_grid(x: &[f64], u: &[f64], ux: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    if n < 2 {
        return (vec![0.0; n], vec![0.0; n]);
    }
    let dx = (x[n - 1] - x[0]) / (n - 1) as f64;
    let w = physical_weights(u, ux, dx);
    let mut p = vec![0.0; n];
    let mut px = vec![0.0; n];
    exp_recursion(x, &w, &mut p, &mut px);
    (p, px)
}

/// `P` and `Pₓ` of a reconstructed field.
pub fn eval_p_physical(field: &crate::reconstruct::PhysicalField) -> (Vec<f64>, Vec<f64>) {
    eval_p_on_grid(&field.x, &field.u, &field.ux)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ws_from(u: &[f64], v: &[f64], q: &[f64], dxi: f64) -> KernelWorkspace {
        let active: Vec<bool> = v.iter().map(|&v| v > -std::f64::consts::PI).collect();
        let mut ws = KernelWorkspace::default();
        build_workspace_from(u, v, q, &active, dxi, &mut ws);
        ws
    }

    #[test]
    fn empty_active_set() {
        let n = 10;
        let v = vec![-std::f64::consts::PI; n];
        let ws = ws_from(&vec![1.0; n], &v, &vec![1.0; n], 0.1);
        assert!(ws.d.iter().all(|&d| d == 0.0));
        assert!(ws.w.iter().all(|&w| w == 0.0));
        let (p, px) = eval_p_px(&ws);
        assert!(p.iter().chain(&px).all(|&x| x == 0.0));
    }

    #[test]
    fn flat_state_distances() {
        let n = 20;
        let ws = ws_from(&vec![0.3; n], &vec![0.0; n], &vec![1.0; n], 0.25);
        for i in 0..n {
            for j in 0..n {
                let expect = (i as f64 - j as f64) * 0.25;
                assert!((ws.d[i] - ws.d[j] - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn exponential_field_values() {
        // flat ṽ = 0, u = 1 on a long interval: P → ½·∫e^{-|s|}ds = 1 deep inside
        let n = 4001;
        let h = 0.01;
        let ws = ws_from(&vec![1.0; n], &vec![0.0; n], &vec![1.0; n], h);
        let (p, px) = eval_p_px(&ws);
        let mid = n / 2;
        assert!((p[mid] - 1.0).abs() < 1e-4);
        assert!(px[mid].abs() < 1e-12);
    }

    #[test]
    fn fd_oracle_on_grid() {
        // centred difference of the discrete P equals Pₓ·sinh(Δx)/Δx
        let n = 801;
        let x: Vec<f64> = (0..n).map(|k| -8.0 + 16.0 * k as f64 / (n - 1) as f64).collect();
        let u: Vec<f64> = x.iter().map(|&x| (-(x - 1.0).abs()).exp() + 0.3 * (-x * x).exp()).collect();
        let ux: Vec<f64> = x
            .iter()
            .map(|&x| -(x - 1.0).signum() * (-(x - 1.0).abs()).exp() - 0.6 * x * (-x * x).exp())
            .collect();
        let (p, px) = eval_p_on_grid(&x, &u, &ux);
        let dx = x[1] - x[0];
        let factor = dx.sinh() / dx;
        for k in 1..n - 1 {
            let fd = (p[k + 1] - p[k - 1]) / (2.0 * dx);
            assert!((fd - factor * px[k]).abs() < 1e-12, "k = {k}");
            assert!((fd - px[k]).abs() <= dx * dx * p[k] + 1e-14);
        }
    }

    proptest! {
        #[test]
        fn recursion_matches_brute_force(
            cols in proptest::collection::vec((-2.0f64..2.0, -3.3f64..3.1, 0.1f64..3.0), 2..256),
            dxi in 0.001f64..0.5,
        ) {
            let u: Vec<f64> = cols.iter().map(|c| c.0).collect();
            let v: Vec<f64> = cols.iter().map(|c| c.1).collect();
            let q: Vec<f64> = cols.iter().map(|c| c.2).collect();
            let ws = ws_from(&u, &v, &q, dxi);
            let (p, px) = eval_p_px(&ws);
            let (pb, pxb) = eval_p_px_brute(&ws);
            let scale = pb.iter().cloned().fold(0.0, f64::max);
            for i in 0..u.len() {
                prop_assert!((p[i] - pb[i]).abs() <= 1e-12 * scale + 1e-300);
                prop_assert!((px[i] - pxb[i]).abs() <= 1e-12 * scale + 1e-300);
                // positivity and kernel domination
                prop_assert!(p[i] >= 0.0);
                prop_assert!(px[i].abs() <= p[i] * (1.0 + 1e-12));
            }
            prop_assert!(ws.d.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(ws.w.iter().all(|&w| w >= 0.0));
        }
    }
}
