//! Initial data catalog and the run constants derived from a datum.
//!
//! Every datum is evaluable pointwise. Peaked data are Lipschitz with isolated
//! kinks; at a kink the reported derivative is the mean of the one-sided
//! limits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible grid size for both the ξ grid and the x grid.
pub const MIN_GRID: usize = 16;

/// Lipschitz constant of the kernel difference quotient for Camassa-Holm.
pub const KERNEL_LIPSCHITZ: f64 = 1.0;

/// Initial datum u₀, keyed by `kind` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDatum {
    /// `c·e^{-|x|}`.
    Peakon { c: f64 },
    /// Peakon at `-a` colliding with an antipeakon at `+a`:
    /// `c·(e^{-|x+a|} - e^{-|x-a|})`.
    AntipeakonPair { a: f64, c: f64 },
    /// `amplitude·exp(-(x/width)²)`.
    SmoothBump { amplitude: f64, width: f64 },
    /// `Σ cᵢ·e^{-|x-xᵢ|}`, stored as `(cᵢ, xᵢ)` pairs.
    Multipeakon { peaks: Vec<(f64, f64)> },
    /// Piecewise-linear datum through `(x[k], u[k])`.
    Sampled { x: Vec<f64>, u: Vec<f64> },
}

/// Sign function with `sign(0) = 0`, which yields the mean of the one-sided
/// derivatives of `e^{-|x|}` at the crest.
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn peak(c: f64, x0: f64, x: f64) -> (f64, f64) {
    let e = (-(x - x0).abs()).exp();
    (c * e, -c * sign0(x - x0) * e)
}

impl InitialDatum {
    /// The identically zero datum.
    pub fn zero() -> Self {
        InitialDatum::SmoothBump {
            amplitude: 0.0,
            width: 1.0,
        }
    }

    /// Checks the parameters for finiteness and basic consistency.
    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidDatum(format!("{name} must be finite, got {v}")))
            }
        };
        match self {
            InitialDatum::Peakon { c } => finite("c", *c),
            InitialDatum::AntipeakonPair { a, c } => {
                finite("a", *a)?;
                finite("c", *c)?;
                if *a <= 0.0 {
                    return Err(Error::InvalidDatum(format!("half-separation a must be positive, got {a}")));
                }
                Ok(())
            }
            InitialDatum::SmoothBump { amplitude, width } => {
                finite("amplitude", *amplitude)?;
                finite("width", *width)?;
                if *width <= 0.0 {
                    return Err(Error::InvalidDatum(format!("width must be positive, got {width}")));
                }
                Ok(())
            }
            InitialDatum::Multipeakon { peaks } => {
                for &(c, x) in peaks {
                    finite("c", c)?;
                    finite("x", x)?;
                }
                Ok(())
            }
            InitialDatum::Sampled { x, u } => {
                if x.len() != u.len() {
                    return Err(Error::InvalidDatum(format!(
                        "sampled datum has {} abscissae but {} values",
                        x.len(),
                        u.len()
                    )));
                }
                if x.len() < 2 {
                    return Err(Error::InvalidDatum("sampled datum needs at least two points".into()));
                }
                if x.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidDatum("sampled abscissae must be strictly increasing".into()));
                }
                for (&xi, &ui) in x.iter().zip(u) {
                    finite("x", xi)?;
                    finite("u", ui)?;
                }
                Ok(())
            }
        }
    }

    /// Points where u₀ is not differentiable, in increasing order.
    pub fn kinks(&self) -> Vec<f64> {
        let mut k = match self {
            InitialDatum::Peakon { c } if *c != 0.0 => vec![0.0],
            InitialDatum::AntipeakonPair { a, c } if *c != 0.0 => vec![-a, *a],
            InitialDatum::Multipeakon { peaks } => peaks
                .iter()
                .filter(|(c, _)| *c != 0.0)
                .map(|&(_, x)| x)
                .collect(),
            InitialDatum::Sampled { x, .. } => x[1..x.len() - 1].to_vec(),
            _ => Vec::new(),
        };
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    /// Interval on which the datum can be evaluated (the whole line for closed
    /// forms, the sample range for sampled data).
    pub fn domain(&self) -> (f64, f64) {
        match self {
            InitialDatum::Sampled { x, .. } => (x[0], x[x.len() - 1]),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

/// Evaluates `(u₀(x), u₀′(x))`.
pub fn eval_datum(datum: &InitialDatum, x: f64) -> Result<(f64, f64)> {
    match datum {
        InitialDatum::Peakon { c } => Ok(peak(*c, 0.0, x)),
        InitialDatum::AntipeakonPair { a, c } => {
            let (u1, d1) = peak(*c, -a, x);
            let (u2, d2) = peak(-c, *a, x);
            Ok((u1 + u2, d1 + d2))
        }
        InitialDatum::SmoothBump { amplitude, width } => {
            let s = x / width;
            let g = amplitude * (-s * s).exp();
            Ok((g, -2.0 * s / width * g))
        }
        InitialDatum::Multipeakon { peaks } => Ok(peaks.iter().fold((0.0, 0.0), |(u, d), &(c, x0)| {
            let (pu, pd) = peak(c, x0, x);
            (u + pu, d + pd)
        })),
        InitialDatum::Sampled { x: xs, u: us } => {
            let (lo, hi) = (xs[0], xs[xs.len() - 1]);
            if !(x >= lo && x <= hi) {
                return Err(Error::OutOfRange { x, lo, hi });
            }
            // first index with xs[k] > x
            let k = xs.partition_point(|&v| v <= x);
            let slope = |j: usize| (us[j + 1] - us[j]) / (xs[j + 1] - xs[j]);
            let n = xs.len();
            if k == n {
                return Ok((us[n - 1], slope(n - 2)));
            }
            if k > 0 && xs[k - 1] == x {
                let j = k - 1;
                let d = if j == 0 {
                    slope(0)
                } else {
                    0.5 * (slope(j - 1) + slope(j))
                };
                return Ok((us[j], d));
            }
            let j = k - 1;
            let s = slope(j);
            Ok((us[j] + s * (x - xs[j]), s))
        }
    }
}

/// Quadrature of `u₀² + ½u₀′²` on `[-d, d]`: composite trapezoid on `n`
/// uniform intervals with the datum's kinks inserted as extra breakpoints.
pub fn initial_energy(datum: &InitialDatum, d: f64, n: usize) -> Result<f64> {
    integrate_sided(datum, -d, d, n, |u, ux| u * u + 0.5 * ux * ux)
}

/// Composite trapezoid of `f(u₀, u₀′)` over `[lo, hi]`, using one-sided
/// derivative limits at the ends of each piece so kinks cost no accuracy.
pub fn integrate_sided(datum: &InitialDatum, lo: f64, hi: f64, n: usize, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
    let pts = breakpoints(datum, lo, hi, n);
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let (ul, dl) = eval_datum_sided(datum, w[0], 1.0)?;
        let (ur, dr) = eval_datum_sided(datum, w[1], -1.0)?;
        acc += 0.5 * (f(ul, dl) + f(ur, dr)) * (w[1] - w[0]);
    }
    Ok(acc)
}

/// Uniform points on `[lo, hi]` merged with the kinks strictly inside.
pub(crate) fn breakpoints(datum: &InitialDatum, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    let mut pts: Vec<f64> = (0..=n).map(|k| lo + k as f64 * h).collect();
    pts[n] = hi;
    pts.extend(datum.kinks().into_iter().filter(|&k| k > lo && k < hi));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Evaluates `(u₀(x), u₀′(x±))`: at a kink the derivative is the one-sided
/// limit from the right when `side > 0` and from the left otherwise.
pub fn eval_datum_sided(datum: &InitialDatum, x: f64, side: f64) -> Result<(f64, f64)> {
    let s = if side > 0.0 { 1.0 } else { -1.0 };
    let sided_peak = |c: f64, x0: f64| {
        let e = (-(x - x0).abs()).exp();
        let sg = if x == x0 { s } else { sign0(x - x0) };
        (c * e, -c * sg * e)
    };
    match datum {
        InitialDatum::Peakon { c } => Ok(sided_peak(*c, 0.0)),
        InitialDatum::AntipeakonPair { a, c } => {
            let (u1, d1) = sided_peak(*c, -a);
            let (u2, d2) = sided_peak(-c, *a);
            Ok((u1 + u2, d1 + d2))
        }
        InitialDatum::Multipeakon { peaks } => Ok(peaks.iter().fold((0.0, 0.0), |(u, d), &(c, x0)| {
            let (pu, pd) = sided_peak(c, x0);
            (u + pu, d + pd)
        })),
        InitialDatum::SmoothBump { .. } => eval_datum(datum, x),
        InitialDatum::Sampled { x: xs, u: us } => {
            let (u, mean) = eval_datum(datum, x)?;
            match xs.iter().position(|&v| v == x) {
                Some(j) => {
                    let n = xs.len();
                    let seg = if s > 0.0 { j.min(n - 2) } else { j.max(1) - 1 };
                    Ok((u, (us[seg + 1] - us[seg]) / (xs[seg + 1] - xs[seg])))
                }
                None => Ok((u, mean)),
            }
        }
    }
}

/// A run configuration: datum, truncated domain, grid sizes, horizon and the
/// constants derived from the initial energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub datum: InitialDatum,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "N_xi")]
    pub n_xi: usize,
    #[serde(rename = "N_x")]
    pub n_x: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "T_max", with = "inf_as_null")]
    pub t_max: f64,
    pub dt_safety: f64,
}

/// `T_max = π / (8√(LC))`, infinite for zero energy.
pub fn t_max(l: f64, c: f64) -> f64 {
    if c <= 0.0 {
        f64::INFINITY
    } else {
        std::f64::consts::PI / (8.0 * (l * c).sqrt())
    }
}

/// Builds a scenario, computing `C`, `L` and `T_max` from the datum.
pub fn make_scenario(
    datum: InitialDatum,
    d: f64,
    n_xi: usize,
    n_x: usize,
    t_end: f64,
    dt_safety: f64,
) -> Result<Scenario> {
    datum.validate()?;
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidScenario(format!("domain half-width D must be positive, got {d}")));
    }
    if n_xi < MIN_GRID || n_x < MIN_GRID {
        return Err(Error::InvalidScenario(format!(
            "grid too small: N_xi = {n_xi}, N_x = {n_x} (minimum {MIN_GRID})"
        )));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidScenario(format!("horizon T must be finite and non-negative, got {t_end}")));
    }
    if !(dt_safety > 0.0 && dt_safety < 1.0) {
        return Err(Error::InvalidScenario(format!("dt_safety must lie in (0, 1), got {dt_safety}")));
    }
    let (lo, hi) = datum.domain();
    if lo > -d || hi < d {
        return Err(Error::InvalidScenario(format!(
            "sampled datum covers [{lo}, {hi}] but the domain is [-{d}, {d}]"
        )));
    }
    let c = initial_energy(&datum, d, 8 * n_x)?;
    if !c.is_finite() {
        return Err(Error::InvalidDatum(format!("initial energy is not finite ({c})")));
    }
    let l = KERNEL_LIPSCHITZ;
    let tm = t_max(l, c);
    if t_end > tm {
        log::info!("horizon T = {t_end} exceeds the guaranteed-smooth bound T_max = {tm:.6}");
    }
    Ok(Scenario {
        datum,
        d,
        n_xi,
        n_x,
        t_end,
        c,
        l,
        t_max: tm,
        dt_safety,
    })
}

impl Scenario {
    /// Re-derives `C`, `L`, `T_max` and re-checks preconditions; used after
    /// deserializing a user config.
    pub fn recompute(self) -> Result<Scenario> {
        make_scenario(self.datum, self.d, self.n_xi, self.n_x, self.t_end, self.dt_safety)
    }

    pub fn exceeds_t_max(&self) -> bool {
        self.t_end > self.t_max
    }
}

/// Named catalog entries with their customary horizons.
pub fn catalog() -> Vec<(&'static str, InitialDatum, f64)> {
    vec![
        ("peakon", InitialDatum::Peakon { c: 1.0 }, 1.0),
        ("antipeakon_pair", InitialDatum::AntipeakonPair { a: 1.0, c: 1.0 }, 2.5),
        (
            "smooth_bump",
            InitialDatum::SmoothBump {
                amplitude: 1.0,
                width: 1.0,
            },
            3.0,
        ),
        (
            "multipeakon",
            InitialDatum::Multipeakon {
                peaks: vec![(2.0, -4.0), (1.0, 0.0)],
            },
            2.0,
        ),
    ]
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
