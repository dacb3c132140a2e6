//! Characteristics `ζ′ = u(t, ζ)` traced on reconstructed fields, and the
//! identities they satisfy: `d/dt u(t,ζ) = −Pₓ`, the Riccati law for
//! `v = u_x(t,ζ)`, the Jacobian `∂ζ/∂ζ₀ = exp∫v`, time reversal and the
//! difference-quotient lower bound.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nonlocal::eval_p_physical;
use crate::reconstruct::PhysicalField;
use crate::stepper::Trajectory;

/// A space-time field that characteristics can be traced through.
pub trait FieldProvider {
    /// `(u, u_x)` at `(t, x)`.
    fn u_ux(&self, t: f64, x: f64) -> (f64, f64);
    /// `(P, Pₓ)` at `(t, x)`.
    fn p_px(&self, t: f64, x: f64) -> (f64, f64);
    fn time_range(&self) -> (f64, f64);
    fn space_range(&self) -> (f64, f64);
}

/// Fields of a trajectory, linear in `t` between snapshots and linear in `x`
/// within each.
#[derive(Debug, Clone)]
pub struct SnapshotProvider {
    fields: Vec<PhysicalField>,
    pressure: Vec<PhysicalField>,
}

impl SnapshotProvider {
    /// Builds the provider from the reconstructions of a trajectory's
    /// snapshots (one field per snapshot, increasing in time).
    pub fn new(fields: Vec<PhysicalField>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InsufficientData("field provider needs at least one field".into()));
        }
        let pressure = fields
            .iter()
            .map(|f| {
                let (p, px) = eval_p_physical(f);
                PhysicalField {
                    t: f.t,
                    x: f.x.clone(),
                    u: p,
                    ux: px,
                    energy: 0.0,
                    energy_h1half: 0.0,
                }
            })
            .collect();
        Ok(SnapshotProvider { fields, pressure })
    }

    /// Reconstructs every snapshot of `traj` on an `n_x`-point grid spanning
    /// `[−D − T·umax, D + T·umax]`.
    pub fn from_trajectory(traj: &Trajectory, d: f64, n_x: usize) -> Result<Self> {
        let t_end = traj.last().t;
        let umax = traj
            .snapshots
            .iter()
            .flat_map(|s| s.u.iter())
            .fold(0.0f64, |m, &u| m.max(u.abs()));
        let x = crate::reconstruct::x_grid(d, t_end, umax, n_x);
        let fields = traj
            .snapshots
            .iter()
            .map(|s| crate::reconstruct::to_physical(s, &x))
            .collect::<Result<Vec<_>>>()?;
        Self::new(fields)
    }

    pub fn fields(&self) -> &[PhysicalField] {
        &self.fields
    }

    /// Bracketing snapshot index and weight of the later one.
    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.fields.len();
        if n == 1 || t <= self.fields[0].t {
            return (0, 0.0);
        }
        if t >= self.fields[n - 1].t {
            return (n - 2, 1.0);
        }
        let k = self.fields.partition_point(|f| f.t <= t) - 1;
        let (t0, t1) = (self.fields[k].t, self.fields[k + 1].t);
        (k, (t - t0) / (t1 - t0))
    }

    fn blend(list: &[PhysicalField], k: usize, a: f64, x: f64) -> (f64, f64) {
        let (u0, d0) = list[k].sample(x);
        if list.len() == 1 || a == 0.0 {
            return (u0, d0);
        }
        let (u1, d1) = list[k + 1].sample(x);
        (u0 + a * (u1 - u0), d0 + a * (d1 - d0))
    }
}

impl FieldProvider for SnapshotProvider {
    fn u_ux(&self, t: f64, x: f64) -> (f64, f64) {
        let (k, a) = self.locate(t);
        Self::blend(&self.fields, k, a, x)
    }

    fn p_px(&self, t: f64, x: f64) -> (f64, f64) {
        let (k, a) = self.locate(t);
        Self::blend(&self.pressure, k, a, x)
    }

    fn time_range(&self) -> (f64, f64) {
        (self.fields[0].t, self.fields[self.fields.len() - 1].t)
    }

    fn space_range(&self) -> (f64, f64) {
        let x = &self.fields[0].x;
        (x[0], x[x.len() - 1])
    }
}

/// Synthetic field `u(t, x) = a·x` with zero pressure.
#[derive(Debug, Clone, Copy)]
pub struct LinearField {
    pub a: f64,
    pub t_range: (f64, f64),
    pub x_range: (f64, f64),
}

impl FieldProvider for LinearField {
    fn u_ux(&self, _t: f64, x: f64) -> (f64, f64) {
        (self.a * x, self.a)
    }
    fn p_px(&self, _t: f64, _x: f64) -> (f64, f64) {
        (0.0, 0.0)
    }
    fn time_range(&self) -> (f64, f64) {
        self.t_range
    }
    fn space_range(&self) -> (f64, f64) {
        self.x_range
    }
}

/// The time-reversed solution `u^b(t, x) = −u(T − t, x)`; the pressure is
/// even in `(u, u_x)`, so `P^b(t, x) = P(T − t, x)` and likewise for `Pₓ`.
pub struct BackwardField<'a, F: FieldProvider> {
    inner: &'a F,
    t_flip: f64,
}

pub fn backward_field<F: FieldProvider>(inner: &F, t_flip: f64) -> Result<BackwardField<'_, F>> {
    let (a, b) = inner.time_range();
    if !(t_flip >= a && t_flip <= b) {
        return Err(Error::InsufficientData(format!(
            "reversal time {t_flip} outside the trajectory range [{a}, {b}]"
        )));
    }
    Ok(BackwardField { inner, t_flip })
}

impl<F: FieldProvider> FieldProvider for BackwardField<'_, F> {
    fn u_ux(&self, t: f64, x: f64) -> (f64, f64) {
        let (u, ux) = self.inner.u_ux(self.t_flip - t, x);
        (-u, -ux)
    }
    fn p_px(&self, t: f64, x: f64) -> (f64, f64) {
        self.inner.p_px(self.t_flip - t, x)
    }
    fn time_range(&self) -> (f64, f64) {
        let (a, _) = self.inner.time_range();
        (0.0, self.t_flip - a)
    }
    fn space_range(&self) -> (f64, f64) {
        self.inner.space_range()
    }
}

/// A traced curve with its along-curve samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Characteristic {
    pub t: Vec<f64>,
    pub zeta: Vec<f64>,
    /// `u(t, ζ(t))` read from the field.
    pub u_interp: Vec<f64>,
    /// `u(t₀, ζ₀) − ∫Pₓ(s, ζ(s))ds`, integrated alongside ζ.
    pub u_ode: Vec<f64>,
    /// `u_x(t, ζ(t))`.
    pub v: Vec<f64>,
    /// The curve left the spatial domain and was cut short.
    pub truncated: bool,
}

impl Characteristic {
    pub fn end(&self) -> f64 {
        *self.zeta.last().expect("non-empty characteristic")
    }

    /// Largest `|u_interp − u_ode|` along the curve.
    pub fn u_estimate_gap(&self) -> f64 {
        self.u_interp
            .iter()
            .zip(&self.u_ode)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        let err = |e: csv::Error| Error::parse(path, e);
        w.write_record(["t", "zeta", "u_interp", "u_ode", "v"]).map_err(err)?;
        for k in 0..self.t.len() {
            let row = [self.t[k], self.zeta[k], self.u_interp[k], self.u_ode[k], self.v[k]];
            w.write_record(row.iter().map(|v| format!("{v}"))).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// RK4 for `(ζ, w)′ = (u(t, ζ), −Pₓ(t, ζ))` from `t0` to `t1` with step
/// close to `dt`.
pub fn trace<F: FieldProvider>(field: &F, zeta0: f64, t0: f64, t1: f64, dt: f64) -> Result<Characteristic> {
    let (ta, tb) = field.time_range();
    let eps = 1e-12 * (1.0 + tb.abs());
    if !(t0 < t1 && t0 >= ta - eps && t1 <= tb + eps) {
        return Err(Error::InsufficientData(format!(
            "trace interval [{t0}, {t1}] not inside the field's time range [{ta}, {tb}]"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("trace step must be positive, got {dt}")));
    }
    let (xa, xb) = field.space_range();
    let steps = ((t1 - t0) / dt).ceil().max(1.0) as usize;
    let h = (t1 - t0) / steps as f64;
    let rate = |t: f64, z: f64| (field.u_ux(t, z).0, -field.p_px(t, z).1);

    let (u0, v0) = field.u_ux(t0, zeta0);
    let mut ch = Characteristic {
        t: vec![t0],
        zeta: vec![zeta0],
        u_interp: vec![u0],
        u_ode: vec![u0],
        v: vec![v0],
        truncated: false,
    };
    let (mut z, mut w) = (zeta0, u0);
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let k1 = rate(t, z);
        let k2 = rate(t + 0.5 * h, z + 0.5 * h * k1.0);
        let k3 = rate(t + 0.5 * h, z + 0.5 * h * k2.0);
        let k4 = rate(t + h, z + h * k3.0);
        z += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        w += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        let tn = if k + 1 == steps { t1 } else { t0 + (k + 1) as f64 * h };
        if !(z > xa && z < xb) {
            ch.truncated = true;
            break;
        }
        let (u, v) = field.u_ux(tn, z);
        ch.t.push(tn);
        ch.zeta.push(z);
        ch.u_interp.push(u);
        ch.u_ode.push(w);
        ch.v.push(v);
    }
    Ok(ch)
}

/// Sup over samples of `|v(t) − v(t₀) − ∫(u² − ½v² − P)ds|` by trapezoid.
pub fn check_riccati<F: FieldProvider>(ch: &Characteristic, field: &F) -> f64 {
    let g = |k: usize| {
        let p = field.p_px(ch.t[k], ch.zeta[k]).0;
        ch.u_interp[k].powi(2) - 0.5 * ch.v[k].powi(2) - p
    };
    let mut integral = 0.0;
    let mut worst: f64 = 0.0;
    let mut g_prev = g(0);
    for k in 1..ch.t.len() {
        let gk = g(k);
        integral += 0.5 * (g_prev + gk) * (ch.t[k] - ch.t[k - 1]);
        g_prev = gk;
        worst = worst.max((ch.v[k] - ch.v[0] - integral).abs());
    }
    worst
}

/// `((ζ⁺(t) − ζ⁻(t))/(2h), exp∫v ds)` for curves started at `ζ₀ ± h` and `ζ₀`.
pub fn jacobian_check<F: FieldProvider>(field: &F, zeta0: f64, h: f64, t0: f64, t: f64, dt: f64) -> Result<(f64, f64)> {
    let plus = trace(field, zeta0 + h, t0, t, dt)?;
    let minus = trace(field, zeta0 - h, t0, t, dt)?;
    let center = trace(field, zeta0, t0, t, dt)?;
    if plus.truncated || minus.truncated || center.truncated {
        return Err(Error::InsufficientData("jacobian curves left the domain".into()));
    }
    let fd = (plus.end() - minus.end()) / (2.0 * h);
    let mut integral = 0.0;
    for k in 1..center.t.len() {
        integral += 0.5 * (center.v[k] + center.v[k - 1]) * (center.t[k] - center.t[k - 1]);
    }
    Ok((fd, integral.exp()))
}

/// Envelope of the images of `[a, b]`. The leftmost curve from `a` is
/// estimated as the limit of curves from `a − h`, extrapolated linearly
/// from starts `a − h` and `a − 2h`; the lower envelope of that estimate and
/// the plain trace from `a` is the left end. The right end is symmetric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pushforward {
    pub lo: f64,
    pub hi: f64,
    /// Plain images of `a` and `b`.
    pub plain: (f64, f64),
}

impl Pushforward {
    /// Width of the envelope beyond the plain image.
    pub fn excess(&self) -> f64 {
        (self.hi - self.lo) - (self.plain.1 - self.plain.0)
    }
}

pub fn thick_pushforward<F: FieldProvider>(field: &F, a: f64, b: f64, t0: f64, t: f64, h: f64, dt: f64) -> Result<Pushforward> {
    if !(a <= b) {
        return Err(Error::InvalidConfig(format!("pushforward interval [{a}, {b}] is empty")));
    }
    let (xa, xb) = field.space_range();
    if !(a - 2.0 * h > xa && b + 2.0 * h < xb) {
        return Err(Error::InsufficientData(format!(
            "pushforward interval [{a}, {b}] not inside [{xa}, {xb}]"
        )));
    }
    let end = |z: f64| -> Result<f64> {
        let c = trace(field, z, t0, t, dt)?;
        if c.truncated {
            Err(Error::InsufficientData("pushforward curve left the domain".into()))
        } else {
            Ok(c.end())
        }
    };
    let za = end(a)?;
    let zal = 2.0 * end(a - h)? - end(a - 2.0 * h)?;
    let zb = end(b)?;
    let zbr = 2.0 * end(b + h)? - end(b + 2.0 * h)?;
    Ok(Pushforward {
        lo: za.min(zal),
        hi: zb.max(zbr),
        plain: (za, zb),
    })
}

/// Result of the difference-quotient lower-bound check along one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaCheck {
    /// `min ω(t₂) − √(LC)·tan(−√(LC)(t₂ − t₁) + arctan(ω(t₁)/√(LC)))`.
    pub min_slack: f64,
    /// Number of `(t₁, t₂)` pairs where the bound is finite and was tested.
    pub pairs: usize,
    /// The curves merged; the check stops at the merge.
    pub merged: bool,
}

/// Traces `γ` and `κ` from `gamma0 < kappa0` over `[t0, t1]` and tests the
/// tangent lower bound on the difference quotient
/// `ω = (u(κ) − u(γ))/(κ − γ)` over every sample pair `t₁ < t₂`.
pub fn omega_bound_check<F: FieldProvider>(
    field: &F,
    gamma0: f64,
    kappa0: f64,
    t0: f64,
    t1: f64,
    dt: f64,
    lc: f64,
) -> Result<OmegaCheck> {
    if !(gamma0 < kappa0) {
        return Err(Error::InvalidConfig(format!("need gamma0 < kappa0, got {gamma0} and {kappa0}")));
    }
    let g = trace(field, gamma0, t0, t1, dt)?;
    let k = trace(field, kappa0, t0, t1, dt)?;
    let n = g.t.len().min(k.t.len());
    let merge_tol = 1e-12 * (1.0 + kappa0.abs().max(gamma0.abs()));
    let mut omega = Vec::with_capacity(n);
    let mut merged = false;
    for j in 0..n {
        let gap = k.zeta[j] - g.zeta[j];
        if gap <= merge_tol {
            merged = true;
            break;
        }
        omega.push((k.u_interp[j] - g.u_interp[j]) / gap);
    }
    let s = lc.sqrt();
    let mut min_slack = f64::INFINITY;
    let mut pairs = 0;
    for a in 0..omega.len() {
        let base = if s > 0.0 { (omega[a] / s).atan() } else { 0.0 };
        for b in a..omega.len() {
            let tau = g.t[b] - g.t[a];
            let bound = if s > 0.0 {
                let arg = -s * tau + base;
                if arg <= -std::f64::consts::FRAC_PI_2 {
                    continue;
                }
                s * arg.tan()
            } else {
                // LC = 0: the bound degenerates to ω(t₂) ≥ ω(t₁)/(1 + ω(t₁)τ)
                let d = 1.0 + omega[a] * tau;
                if d <= 0.0 {
                    continue;
                }
                omega[a] / d
            };
            pairs += 1;
            min_slack = min_slack.min(omega[b] - bound);
        }
    }
    Ok(OmegaCheck {
        min_slack: if pairs == 0 { 0.0 } else { min_slack },
        pairs,
        merged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_field() -> LinearField {
        LinearField {
            a: 0.0,
            t_range: (0.0, 1.0),
            x_range: (-10.0, 10.0),
        }
    }

    fn linear_field() -> LinearField {
        LinearField {
            a: 1.0,
            t_range: (0.0, 1.0),
            x_range: (-10.0, 10.0),
        }
    }

    #[test]
    fn zero_field_characteristics() {
        let f = zero_field();
        let c = trace(&f, 0.7, 0.0, 1.0, 0.01).unwrap();
        assert!(c.zeta.iter().all(|&z| z == 0.7));
        assert_eq!(check_riccati(&c, &f), 0.0);
        let (fd, ex) = jacobian_check(&f, 0.7, 1e-3, 0.0, 1.0, 0.01).unwrap();
        assert!((fd - 1.0).abs() < 1e-12 && ex == 1.0);
        let p = thick_pushforward(&f, -1.0, 2.0, 0.0, 1.0, 0.01, 0.01).unwrap();
        assert_eq!((p.lo, p.hi), (-1.0, 2.0));
        let o = omega_bound_check(&f, -1.0, 1.0, 0.0, 0.3, 0.01, 1.5).unwrap();
        assert_eq!(o.min_slack, 0.0);
        let b = backward_field(&f, 1.0).unwrap();
        assert_eq!(b.u_ux(0.0, 3.0).0, 0.0);
    }

    #[test]
    fn linear_field_is_exponential() {
        let f = linear_field();
        let c = trace(&f, 0.5, 0.0, 1.0, 0.01).unwrap();
        for (t, z) in c.t.iter().zip(&c.zeta) {
            assert!((z - 0.5 * t.exp()).abs() < 1e-9);
        }
        let (fd, ex) = jacobian_check(&f, 0.5, 1e-3, 0.0, 1.0, 0.01).unwrap();
        let e = 1.0f64.exp();
        assert!((fd - e).abs() < 1e-8);
        assert!((ex - e).abs() < 1e-12);
        let p = thick_pushforward(&f, 1.0, 2.0, 0.0, 1.0, 1e-3, 0.01).unwrap();
        assert!((p.plain.0 - e).abs() < 1e-8 && (p.plain.1 - 2.0 * e).abs() < 1e-8);
        assert!((p.lo - e).abs() < 1e-8 && (p.hi - 2.0 * e).abs() < 1e-8);
    }

    #[test]
    fn backward_trace_retraces_forward() {
        let f = linear_field();
        let fwd = trace(&f, 0.5, 0.0, 1.0, 0.01).unwrap();
        let b = backward_field(&f, 1.0).unwrap();
        let bwd = trace(&b, fwd.end(), 0.0, 1.0, 0.01).unwrap();
        assert!((bwd.end() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn truncation_is_flagged() {
        let f = LinearField {
            a: 5.0,
            t_range: (0.0, 1.0),
            x_range: (-10.0, 10.0),
        };
        let c = trace(&f, 1.0, 0.0, 1.0, 0.01).unwrap();
        assert!(c.truncated);
        assert!(c.t.len() < 101);
    }
}
