//! The ξ coordinate `ξ(x) = ∫₀ˣ (1 + u₀′²)` and the initial Lagrangian state.
//!
//! Nodes sit at cell centers of a uniform ξ partition. When the datum has
//! kinks the partition is shifted (and for several kinks slightly rescaled)
//! so that kinks fall on cell faces or, on request, on nodes.

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scenarios::{eval_datum, eval_datum_sided, InitialDatum, Scenario};

/// Points of the fine transform grid per ξ node.
pub const FINE_FACTOR: usize = 8;

/// Largest relative change of Δξ accepted to align several kinks at once.
const MAX_RESCALE: f64 = 0.05;

/// Where datum kinks are placed relative to the ξ cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KinkAlignment {
    /// Kinks on cell faces (default): no node ever samples a kink.
    Faces,
    /// A kink on a node. Used where a node exactly at a crest is wanted.
    Nodes,
    /// Plain uniform partition of the exact image of `[-D, D]`.
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XiGrid {
    pub xi: Vec<f64>,
    pub ybar: Vec<f64>,
    pub dybar_dxi: Vec<f64>,
    pub dxi: f64,
    /// Exact image of `[-D, D]`.
    pub xi_range: (f64, f64),
}

impl XiGrid {
    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

/// The fine cumulative transform: `xs` increasing, `xis[k] = ξ(xs[k])`.
#[derive(Debug, Clone)]
pub struct FineTransform {
    pub xs: Vec<f64>,
    pub xis: Vec<f64>,
}

impl FineTransform {
    /// Cumulative trapezoid of `1 + u₀′²` on `[lo, hi]` over the lattice
    /// `hℤ` plus `extra`, the ends and the kinks, anchored so that `ξ(0) = 0`.
    pub fn build(datum: &InitialDatum, lo: f64, hi: f64, h: f64, extra: &[f64]) -> Result<Self> {
        let k_lo = (lo / h).floor() as i64;
        let k_hi = (hi / h).ceil() as i64;
        let mut xs: Vec<f64> = (k_lo..=k_hi).map(|k| k as f64 * h).collect();
        xs.retain(|&x| x > lo && x < hi);
        xs.push(lo);
        xs.push(hi);
        xs.push(0.0f64.clamp(lo, hi));
        xs.extend(extra.iter().copied().filter(|&x| x > lo && x < hi));
        xs.extend(datum.kinks().into_iter().filter(|&k| k > lo && k < hi));
        xs.sort_by(f64::total_cmp);
        xs.dedup();

        let mut xis = vec![0.0; xs.len()];
        for k in 1..xs.len() {
            let (_, dl) = eval_datum_sided(datum, xs[k - 1], 1.0)?;
            let (_, dr) = eval_datum_sided(datum, xs[k], -1.0)?;
            let inc = 0.5 * ((1.0 + dl * dl) + (1.0 + dr * dr)) * (xs[k] - xs[k - 1]);
            if !(inc > 0.0) {
                return Err(Error::Internal(format!(
                    "cumulative transform not increasing on [{}, {}]",
                    xs[k - 1],
                    xs[k]
                )));
            }
            xis[k] = xis[k - 1] + inc;
        }
        let origin = interp(&xs, &xis, 0.0f64.clamp(lo, hi));
        for v in &mut xis {
            *v -= origin;
        }
        Ok(FineTransform { xs, xis })
    }

    /// `ξ(x)` by linear interpolation.
    pub fn forward(&self, x: f64) -> f64 {
        interp(&self.xs, &self.xis, x)
    }

    /// `x(ξ)` by linear interpolation of the inverse.
    pub fn inverse(&self, xi: f64) -> f64 {
        interp(&self.xis, &self.xs, xi)
    }
}

/// Piecewise-linear interpolation in increasing `xs`, clamped at the ends.
pub(crate) fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[k - 1], xs[k]);
    let s = (x - x0) / (x1 - x0);
    ys[k - 1] + s * (ys[k] - ys[k - 1])
}

/// Builds the ξ grid with kinks on cell faces.
pub fn build_xi_grid(scenario: &Scenario) -> Result<XiGrid> {
    build_xi_grid_aligned(scenario, KinkAlignment::Faces)
}

pub fn build_xi_grid_aligned(scenario: &Scenario, align: KinkAlignment) -> Result<XiGrid> {
    let datum = &scenario.datum;
    let d = scenario.d;
    let n = scenario.n_xi;
    let h = 2.0 * d / (FINE_FACTOR * n) as f64;

    let (dom_lo, dom_hi) = datum.domain();
    let bounded = dom_lo.is_finite() || dom_hi.is_finite();
    // Alignment may move the covered ξ interval slightly past the image of
    // [-D, D]; closed-form data are evaluable there, sampled data are not.
    let pad = if bounded || align == KinkAlignment::Off { 0.0 } else { 0.25 * d + 1.0 };
    let fine = FineTransform::build(datum, -d - pad, d + pad, h, &[-d, d])?;
    let xi_lo = fine.forward(-d);
    let xi_hi = fine.forward(d);
    let width = xi_hi - xi_lo;
    let dxi0 = width / n as f64;

    let kinks: Vec<f64> = datum
        .kinks()
        .into_iter()
        .filter(|&k| k > -d && k < d)
        .map(|k| fine.forward(k))
        .collect();

    let (start, dxi) = if align == KinkAlignment::Off || bounded || kinks.is_empty() {
        (xi_lo, dxi0)
    } else {
        let first = kinks[0];
        let last = kinks[kinks.len() - 1];
        let gap = last - first;
        let offset = if align == KinkAlignment::Nodes { 0.5 } else { 0.0 };
        // Start of the partition with spacing `h` that puts `first` on a
        // face (or node) and best centres the covered interval on the image.
        let place = |h: f64| {
            let covered = n as f64 * h;
            let ideal = xi_lo - 0.5 * (covered - width);
            let k = ((first - ideal) / h - offset).round() + offset;
            let start = first - k * h;
            (start, h, (start - ideal).abs())
        };
        let mut best = place(dxi0);
        if kinks.len() > 1 && gap >= dxi0 {
            // Rescale so the last kink lands on a face too; among nearby
            // cell counts for the gap, take the best centred one.
            let m0 = (gap / dxi0).round();
            let mut cands = Vec::new();
            for m in [m0 - 1.0, m0, m0 + 1.0] {
                let h = gap / m;
                if m >= 1.0 && (h / dxi0 - 1.0).abs() <= MAX_RESCALE {
                    cands.push(place(h));
                }
            }
            if let Some(c) = cands.into_iter().min_by(|a, b| a.2.total_cmp(&b.2)) {
                best = c;
            }
        }
        let (start, dxi, _) = best;
        let covered = n as f64 * dxi;
        let (f_lo, f_hi) = (fine.xis[0], fine.xis[fine.xis.len() - 1]);
        if start < f_lo || start + covered > f_hi {
            (xi_lo, dxi0)
        } else {
            (start, dxi)
        }
    };

    let xi: Vec<f64> = (0..n).map(|i| start + (i as f64 + 0.5) * dxi).collect();
    let mut ybar = Vec::with_capacity(n);
    let mut dybar = Vec::with_capacity(n);
    for &s in &xi {
        let y = fine.inverse(s);
        let (_, ux) = eval_datum(datum, y)?;
        ybar.push(y);
        dybar.push(1.0 / (1.0 + ux * ux));
    }
    if ybar.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Internal("inverse transform is not strictly increasing".into()));
    }
    Ok(XiGrid {
        xi,
        ybar,
        dybar_dxi: dybar,
        dxi,
        xi_range: (xi_lo, xi_hi),
    })
}

/// Independent re-quadrature of `∫₀^{ȳᵢ}(1 + u₀′²)` minus `ξᵢ`, maximized
/// over nodes. The check integral uses a different (finer) partition.
pub fn roundtrip_error(grid: &XiGrid, datum: &InitialDatum, n_check: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (&y, &s) in grid.ybar.iter().zip(&grid.xi) {
        let (a, b, sign) = if y >= 0.0 { (0.0, y, 1.0) } else { (y, 0.0, -1.0) };
        let m = ((b - a) * n_check as f64).ceil().max(1.0) as usize;
        let v = crate::scenarios::integrate_sided(datum, a, b, m, |_, ux| 1.0 + ux * ux)?;
        worst = worst.max((sign * v - s).abs());
    }
    Ok(worst)
}

/// Breaking-time sentinel for nodes that have not broken.
pub const NOT_BROKEN: f64 = f64::INFINITY;

/// Solver state `(ũ, ṽ, q̃, y)` on the ξ nodes at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianState {
    pub t: f64,
    pub grid: Arc<XiGrid>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub y: Vec<f64>,
    pub t_br: Vec<f64>,
}

impl LagrangianState {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn dxi(&self) -> f64 {
        self.grid.dxi
    }

    /// Node `i` is on the smooth branch.
    pub fn is_active(&self, i: usize) -> bool {
        self.t_br[i] == NOT_BROKEN && self.v[i] > -std::f64::consts::PI
    }

    pub fn broken_count(&self) -> usize {
        self.t_br.iter().filter(|t| t.is_finite()).count()
    }

    /// Checks the structural invariants of a state.
    pub fn check_well_formed(&self) -> Result<()> {
        let n = self.grid.len();
        for (name, len) in [
            ("u", self.u.len()),
            ("v", self.v.len()),
            ("q", self.q.len()),
            ("y", self.y.len()),
            ("t_br", self.t_br.len()),
        ] {
            if len != n {
                return Err(Error::Internal(format!("state column {name} has {len} entries, grid has {n}")));
            }
        }
        if let Some(i) = self.q.iter().position(|&q| !(q > 0.0)) {
            return Err(Error::Internal(format!("q not positive at node {i}: {}", self.q[i])));
        }
        Ok(())
    }
}

/// The initial state `ũ = u₀(ȳ)`, `ṽ = 2 arctan u₀′(ȳ)`, `q̃ = 1`, `y = ȳ`.
pub fn initial_state(grid: Arc<XiGrid>, datum: &InitialDatum) -> Result<LagrangianState> {
    let n = grid.len();
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for &y in &grid.ybar {
        let (u0, ux) = eval_datum(datum, y)?;
        u.push(u0);
        v.push(2.0 * ux.atan());
    }
    Ok(LagrangianState {
        t: 0.0,
        y: grid.ybar.clone(),
        grid,
        u,
        v,
        q: vec![1.0; n],
        t_br: vec![NOT_BROKEN; n],
    })
}

const CSV_HEADER: [&str; 6] = ["xi", "y", "u", "v", "q", "t_br"];

/// Writes a snapshot as CSV with columns `xi,y,u,v,q,t_br`. Floats use the
/// shortest round-trip representation; unbroken nodes carry `inf`.
pub fn write_snapshot_csv(state: &LagrangianState, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let err = |e: csv::Error| Error::parse(path, e);
    w.write_record(CSV_HEADER).map_err(err)?;
    for i in 0..state.len() {
        let row = [
            state.grid.xi[i],
            state.y[i],
            state.u[i],
            state.v[i],
            state.q[i],
            state.t_br[i],
        ];
        w.write_record(row.iter().map(|v| format!("{v}"))).map_err(err)?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::parse(path, e))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

/// Snapshot columns as read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotColumns {
    pub xi: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub t_br: Vec<f64>,
}

pub fn read_snapshot_csv(path: &Path) -> Result<SnapshotColumns> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let headers = r.headers().map_err(|e| Error::parse(path, e))?.clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::parse(path, format!("unexpected header {:?}", headers)));
    }
    let mut cols = SnapshotColumns {
        xi: Vec::new(),
        y: Vec::new(),
        u: Vec::new(),
        v: Vec::new(),
        q: Vec::new(),
        t_br: Vec::new(),
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let mut vals = [0.0; 6];
        for (k, field) in rec.iter().enumerate().take(6) {
            vals[k] = field
                .trim()
                .parse()
                .map_err(|e| Error::parse(path, format!("row {}: {e}", line + 2)))?;
        }
        if rec.len() != 6 {
            return Err(Error::parse(path, format!("row {} has {} fields", line + 2, rec.len())));
        }
        cols.xi.push(vals[0]);
        cols.y.push(vals[1]);
        cols.u.push(vals[2]);
        cols.v.push(vals[3]);
        cols.q.push(vals[4]);
        cols.t_br.push(vals[5]);
    }
    Ok(cols)
}

impl SnapshotColumns {
    /// Reattaches columns to a grid; the ξ column must match it.
    pub fn into_state(self, t: f64, grid: Arc<XiGrid>) -> Result<LagrangianState> {
        if self.xi.len() != grid.len() {
            return Err(Error::InsufficientData(format!(
                "snapshot has {} nodes, grid has {}",
                self.xi.len(),
                grid.len()
            )));
        }
        let tol = 1e-12 * (1.0 + grid.xi_range.1.abs().max(grid.xi_range.0.abs()));
        if let Some(i) = (0..grid.len()).find(|&i| (self.xi[i] - grid.xi[i]).abs() > tol) {
            return Err(Error::Internal(format!(
                "snapshot xi[{i}] = {} does not match the grid ({})",
                self.xi[i], grid.xi[i]
            )));
        }
        Ok(LagrangianState {
            t,
            grid,
            u: self.u,
            v: self.v,
            q: self.q,
            y: self.y,
            t_br: self.t_br,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::make_scenario;

    fn scenario(datum: InitialDatum, n: usize) -> Scenario {
        make_scenario(datum, 20.0, n, 256, 1.0, 0.5).unwrap()
    }

    #[test]
    fn zero_datum_is_identity() {
        let g = build_xi_grid(&scenario(InitialDatum::zero(), 64)).unwrap();
        for (&x, &y) in g.xi.iter().zip(&g.ybar) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(g.dybar_dxi.iter().all(|&d| d == 1.0));
        let s = initial_state(Arc::new(g), &InitialDatum::zero()).unwrap();
        assert!(s.v.iter().all(|&v| v == 0.0));
        assert!(s.q.iter().all(|&q| q == 1.0));
    }

    #[test]
    fn peakon_transform_matches_closed_form() {
        let sc = scenario(InitialDatum::Peakon { c: 1.0 }, 256);
        let fine = FineTransform::build(&sc.datum, -20.0, 20.0, 40.0 / 2048.0, &[]).unwrap();
        assert_eq!(fine.forward(0.0), 0.0);
        for &x in &[0.25, 1.0, 3.0, 10.0] {
            let exact = x + 0.5 * (1.0 - (-2.0 * x as f64).exp());
            assert!((fine.forward(x) - exact).abs() < 1e-4, "x = {x}");
            assert!((fine.forward(-x) + exact).abs() < 1e-4);
        }
    }

    #[test]
    fn faces_alignment_puts_kinks_on_faces() {
        let sc = scenario(InitialDatum::AntipeakonPair { a: 1.0, c: 1.0 }, 512);
        let g = build_xi_grid(&sc).unwrap();
        let fine = FineTransform::build(&sc.datum, -25.0, 25.0, 40.0 / (8.0 * 512.0), &[-20.0, 20.0]).unwrap();
        for k in [-1.0, 1.0] {
            let s = fine.forward(k);
            let cell = (s - (g.xi[0] - 0.5 * g.dxi)) / g.dxi;
            assert!((cell - cell.round()).abs() < 1e-6, "kink at cell offset {cell}");
        }
        assert!(g.ybar.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn nodes_alignment_puts_crest_on_node() {
        let sc = scenario(InitialDatum::Peakon { c: 1.0 }, 256);
        let g = build_xi_grid_aligned(&sc, KinkAlignment::Nodes).unwrap();
        assert!(g.ybar.iter().any(|&y| y.abs() < 1e-12));
    }

    #[test]
    fn initial_peakon_values() {
        let sc = scenario(InitialDatum::Peakon { c: 1.0 }, 256);
        let g = Arc::new(build_xi_grid(&sc).unwrap());
        let s = initial_state(g.clone(), &sc.datum).unwrap();
        s.check_well_formed().unwrap();
        assert!(s.v.iter().all(|&v| v > -std::f64::consts::PI && v <= std::f64::consts::PI));
        // ṽ at ȳ = 1 is 2·arctan(-1/e)
        let v1 = 2.0 * (-(-1.0f64).exp()).atan();
        assert!((v1 + 0.70502).abs() < 1e-5);
        for (i, &y) in g.ybar.iter().enumerate() {
            let (u0, ux) = eval_datum(&sc.datum, y).unwrap();
            assert_eq!(s.u[i], u0);
            assert_eq!(s.v[i], 2.0 * ux.atan());
        }
        // a node placed exactly at ȳ = 1
        let mut one = (*g).clone();
        one.ybar = vec![1.0];
        one.xi = vec![0.0];
        one.dybar_dxi = vec![1.0];
        let s1 = initial_state(Arc::new(one), &sc.datum).unwrap();
        assert_eq!(s1.v[0], v1);
    }

    #[test]
    fn roundtrip_within_quadrature_error() {
        for datum in [
            InitialDatum::Peakon { c: 1.0 },
            InitialDatum::AntipeakonPair { a: 1.0, c: 1.0 },
            InitialDatum::SmoothBump {
                amplitude: 1.0,
                width: 1.0,
            },
        ] {
            let sc = scenario(datum.clone(), 256);
            let g = build_xi_grid(&sc).unwrap();
            // fine spacing h, trapezoid error ≲ h²·∫|f″|/12 with ∫|f″| = O(10)
            let h: f64 = 40.0 / (8.0 * 256.0);
            let bound = 10.0 * h * h * 10.0 / 12.0;
            let err = roundtrip_error(&g, &datum, 2000).unwrap();
            assert!(err <= bound, "{datum:?}: {err} > {bound}");
        }
    }

    #[test]
    fn discrete_energy_matches_physical() {
        for datum in [
            InitialDatum::Peakon { c: 1.0 },
            InitialDatum::AntipeakonPair { a: 1.0, c: 1.0 },
            InitialDatum::SmoothBump {
                amplitude: 1.0,
                width: 1.0,
            },
        ] {
            let sc = scenario(datum.clone(), 2048);
            let s = initial_state(Arc::new(build_xi_grid(&sc).unwrap()), &datum).unwrap();
            let e: f64 = (0..s.len())
                .map(|i| {
                    let (sn, cs) = (0.5 * s.v[i]).sin_cos();
                    (s.u[i] * s.u[i] * cs * cs + 0.5 * sn * sn) * s.q[i] * s.dxi()
                })
                .sum();
            assert!((e - sc.c).abs() < 2e-3, "{datum:?}: {e} vs {}", sc.c);
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let sc = scenario(InitialDatum::AntipeakonPair { a: 1.0, c: 1.0 }, 64);
        let g = Arc::new(build_xi_grid(&sc).unwrap());
        let mut s = initial_state(g.clone(), &sc.datum).unwrap();
        s.t_br[3] = 0.125;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_snapshot_csv(&s, &p).unwrap();
        let back = read_snapshot_csv(&p).unwrap().into_state(0.0, g).unwrap();
        assert_eq!(back, s);
    }
}
