//! Time integration with breaking-event location.
//!
//! Each trial step holds the activity mask fixed, so both backends integrate
//! a smooth vector field. When an active node ends a trial step at or below
//! `ṽ = −π`, the first crossing time is bracketed, the state just before it
//! is committed, and the crossing nodes switch to the frozen branch.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{picard_apply, Columns, RhsEvaluator};
use crate::error::{Error, Result};
use crate::grid::{build_xi_grid, initial_state, read_snapshot_csv, write_snapshot_csv, LagrangianState, NOT_BROKEN};
use crate::reconstruct::energy_of_state;
use crate::scenarios::Scenario;

/// Growth of the H¹ norm per unit time tolerated before a run is flagged.
pub const ENERGY_RATE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Rk4,
    Picard,
}

fn default_dt_init() -> f64 {
    0.01
}
fn default_event_tol() -> f64 {
    1e-10
}
fn default_picard_tol() -> f64 {
    1e-12
}
fn default_picard_max_iter() -> usize {
    60
}
fn default_n_sub() -> usize {
    16
}
fn default_n_snapshots() -> usize {
    50
}
fn default_backend() -> Backend {
    Backend::Rk4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    #[serde(default = "default_backend")]
    pub backend: Backend,
    #[serde(default = "default_dt_init")]
    pub dt_init: f64,
    /// Overrides the scenario's step-size factor when set.
    #[serde(default)]
    pub dt_safety: Option<f64>,
    #[serde(default = "default_event_tol")]
    pub event_tol: f64,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max_iter")]
    pub picard_max_iter: usize,
    /// Trapezoid sub-intervals per Picard step.
    #[serde(default = "default_n_sub")]
    pub n_sub: usize,
    /// Output intervals on `[0, T]`; snapshots land at `T·k/n_snapshots`.
    #[serde(default = "default_n_snapshots")]
    pub n_snapshots: usize,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            backend: default_backend(),
            dt_init: default_dt_init(),
            dt_safety: None,
            event_tol: default_event_tol(),
            picard_tol: default_picard_tol(),
            picard_max_iter: default_picard_max_iter(),
            n_sub: default_n_sub(),
            n_snapshots: default_n_snapshots(),
        }
    }
}

impl StepperConfig {
    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("dt_init", self.dt_init)?;
        positive("event_tol", self.event_tol)?;
        positive("picard_tol", self.picard_tol)?;
        if let Some(s) = self.dt_safety {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::InvalidConfig(format!("dt_safety must lie in (0, 1), got {s}")));
            }
        }
        if self.picard_max_iter == 0 || self.n_sub == 0 || self.n_snapshots == 0 {
            return Err(Error::InvalidConfig(
                "picard_max_iter, n_sub and n_snapshots must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyPoint {
    pub t: f64,
    /// `½∫(u² + u_x²)`.
    pub e_h1: f64,
    /// `∫(u² + ½u_x²)`.
    pub e_h1half: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: usize,
    pub events: usize,
    pub trial_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<LagrangianState>,
    /// Breaking time per ξ node, [`NOT_BROKEN`] if none.
    pub t_br_map: Vec<f64>,
    pub energy_series: Vec<EnergyPoint>,
    /// Largest H¹-norm growth rate between snapshots beyond [`ENERGY_RATE_TOL`].
    pub energy_flag: Option<f64>,
    pub stats: RunStats,
}

impl Trajectory {
    pub fn last(&self) -> &LagrangianState {
        self.snapshots.last().expect("trajectory has at least one snapshot")
    }

    pub fn min_t_br(&self) -> Option<f64> {
        self.t_br_map.iter().cloned().filter(|t| t.is_finite()).reduce(f64::min)
    }
}

/// A stepper bound to one configuration and grid size.
pub struct Stepper {
    cfg: StepperConfig,
    dt_safety: f64,
    stats: RunStats,
}

impl Stepper {
    pub fn new(cfg: StepperConfig, scenario_dt_safety: f64) -> Result<Self> {
        cfg.validate()?;
        let dt_safety = cfg.dt_safety.unwrap_or(scenario_dt_safety);
        Ok(Stepper {
            cfg,
            dt_safety,
            stats: RunStats::default(),
        })
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    /// Step size `min(dt_init, dt_safety / max(1, max|ṽ_t|))`.
    fn step_size(&self, rate: &Columns) -> f64 {
        let m = rate.v.iter().fold(1.0f64, |m, &d| m.max(d.abs()));
        self.cfg.dt_init.min(self.dt_safety / m)
    }

    /// Advances the columns by `dt` with the chosen backend, mask fixed.
    pub fn advance(&mut self, ev: &mut RhsEvaluator, c0: &Columns, f0: &Columns, dt: f64, t: f64) -> Result<Columns> {
        self.stats.trial_evaluations += 1;
        match self.cfg.backend {
            Backend::Rk4 => Ok(rk4(ev, c0, f0, dt)),
            Backend::Picard => {
                let n = self.cfg.n_sub;
                let mut guess = vec![c0.clone(); n + 1];
                let mut change = f64::INFINITY;
                for _ in 0..self.cfg.picard_max_iter {
                    let next = picard_apply(ev, c0, &guess, dt);
                    change = next.iter().zip(&guess).map(|(a, b)| a.sup_dist(b)).fold(0.0, f64::max);
                    guess = next;
                    if change <= self.cfg.picard_tol {
                        return Ok(guess.pop().expect("non-empty"));
                    }
                }
                Err(Error::StepFailure {
                    t,
                    iterations: self.cfg.picard_max_iter,
                    residual: change,
                })
            }
        }
    }

    /// Advances `state` to `t_target`, locating and applying breaking events.
    pub fn advance_to(&mut self, state: &mut LagrangianState, t_target: f64) -> Result<()> {
        let n = state.len();
        let mut f0 = Columns::zeros(n);
        while state.t < t_target {
            let mut ev = RhsEvaluator::for_state(state);
            let c0 = Columns::of_state(state);
            ev.eval(&c0, &mut f0);
            let remaining = t_target - state.t;
            let mut dt = self.step_size(&f0);
            // land exactly on the output time instead of interpolating
            if dt >= remaining || remaining - dt < 1e-3 * dt {
                dt = remaining;
            }
            let trial = self.advance(&mut ev, &c0, &f0, dt, state.t)?;
            if !crosses(&ev.active, &trial) {
                self.commit(state, trial, state.t + dt, t_target, dt == remaining);
                self.stats.steps += 1;
                continue;
            }
            let (lo_state, hi_state, lo) = self.locate(&mut ev, &c0, &f0, trial, dt, state.t)?;
            let t_event = state.t + lo;
            let crossed: Vec<usize> = (0..n).filter(|&i| ev.active[i] && hi_state.v[i] <= -PI).collect();
            self.commit(state, lo_state, t_event, t_target, false);
            for &i in &crossed {
                state.v[i] = -PI;
                state.t_br[i] = t_event;
            }
            self.stats.events += crossed.len();
            self.stats.steps += 1;
        }
        Ok(())
    }

    fn commit(&self, state: &mut LagrangianState, c: Columns, t: f64, t_target: f64, landed: bool) {
        state.u = c.u;
        state.v = c.v;
        state.q = c.q;
        state.y = c.y;
        state.t = if landed { t_target } else { t };
    }

    /// Brackets the first crossing in `(0, dt]` to width `event_tol` by
    /// false position (Illinois variant) with a bisection fallback. Returns
    /// the states at both bracket ends and the left end.
    fn locate(
        &mut self,
        ev: &mut RhsEvaluator,
        c0: &Columns,
        f0: &Columns,
        trial: Columns,
        dt: f64,
        t: f64,
    ) -> Result<(Columns, Columns, f64)> {
        let tol = self.cfg.event_tol;
        let margin = |c: &Columns, active: &[bool]| {
            c.v.iter()
                .zip(active)
                .filter(|(_, &a)| a)
                .map(|(&v, _)| v + PI)
                .fold(f64::INFINITY, f64::min)
        };
        let mut lo = 0.0;
        let mut g_lo = margin(c0, &ev.active);
        let mut lo_state = c0.clone();
        let mut hi = dt;
        let mut g_hi = margin(&trial, &ev.active);
        let mut hi_state = trial;
        let mut side = 0i8;
        let mut iter = 0usize;
        while hi - lo > tol {
            iter += 1;
            let width = hi - lo;
            let mut m = if iter % 4 == 0 || !(g_lo > 0.0 && g_hi <= 0.0) {
                0.5 * (lo + hi)
            } else {
                (lo * g_hi - hi * g_lo) / (g_hi - g_lo)
            };
            // keep the probe strictly inside the bracket
            let guard = 0.5 * tol;
            m = m.clamp(lo + guard.min(0.25 * width), hi - guard.min(0.25 * width));
            let s = self.advance(ev, c0, f0, m, t)?;
            let g = margin(&s, &ev.active);
            if g > 0.0 {
                lo = m;
                g_lo = g;
                lo_state = s;
                if side == 1 {
                    g_hi *= 0.5;
                }
                side = 1;
            } else {
                hi = m;
                g_hi = g;
                hi_state = s;
                if side == -1 {
                    g_lo *= 0.5;
                }
                side = -1;
            }
            if iter > 400 {
                return Err(Error::Internal(format!("event location did not converge near t = {}", t + lo)));
            }
        }
        Ok((lo_state, hi_state, lo))
    }
}

fn crosses(active: &[bool], c: &Columns) -> bool {
    c.v.iter().zip(active).any(|(&v, &a)| a && v <= -PI)
}

/// Classical fourth-order Runge–Kutta step; `f0` is the rate at `c0`.
pub fn rk4(ev: &mut RhsEvaluator, c0: &Columns, f0: &Columns, dt: f64) -> Columns {
    let n = c0.len();
    let mut stage = Columns::zeros(n);
    let mut k2 = Columns::zeros(n);
    let mut k3 = Columns::zeros(n);
    let mut k4 = Columns::zeros(n);
    stage.set_axpy(c0, 0.5 * dt, f0);
    ev.eval(&stage, &mut k2);
    stage.set_axpy(c0, 0.5 * dt, &k2);
    ev.eval(&stage, &mut k3);
    stage.set_axpy(c0, dt, &k3);
    ev.eval(&stage, &mut k4);
    let mut out = c0.clone();
    out.axpy(dt / 6.0, f0);
    out.axpy(dt / 3.0, &k2);
    out.axpy(dt / 3.0, &k3);
    out.axpy(dt / 6.0, &k4);
    out
}

/// Output times `T·k/n`, a single `0` when `T = 0`.
pub fn output_times(t_end: f64, n: usize) -> Vec<f64> {
    if t_end == 0.0 {
        return vec![0.0];
    }
    let mut ts: Vec<f64> = (0..=n).map(|k| t_end * k as f64 / n as f64).collect();
    ts[n] = t_end;
    ts
}

fn energy_point(s: &LagrangianState) -> EnergyPoint {
    let e = energy_of_state(s);
    EnergyPoint {
        t: s.t,
        e_h1: e.e_h1,
        e_h1half: e.e_h1half,
    }
}

/// Integrates from an arbitrary state through the given output times (the
/// first of which must equal the state's time).
pub fn run_from(state: LagrangianState, times: &[f64], cfg: &StepperConfig, dt_safety: f64) -> Result<Trajectory> {
    let mut stepper = Stepper::new(cfg.clone(), dt_safety)?;
    let mut s = state;
    let mut snapshots = vec![s.clone()];
    for &t in &times[1..] {
        stepper.advance_to(&mut s, t)?;
        snapshots.push(s.clone());
    }
    let energy_series: Vec<EnergyPoint> = snapshots.iter().map(energy_point).collect();
    let energy_flag = energy_series
        .windows(2)
        .map(|w| ((2.0 * w[1].e_h1).sqrt() - (2.0 * w[0].e_h1).sqrt()) / (w[1].t - w[0].t))
        .filter(|&r| r > ENERGY_RATE_TOL)
        .reduce(f64::max);
    if let Some(r) = energy_flag {
        log::warn!("H1 norm grows at rate {r:.3e} per unit time between snapshots");
    }
    Ok(Trajectory {
        t_br_map: s.t_br.clone(),
        snapshots,
        energy_series,
        energy_flag,
        stats: stepper.stats().clone(),
    })
}

/// Runs a scenario from its initial state to its horizon.
pub fn run(scenario: &Scenario, cfg: &StepperConfig) -> Result<Trajectory> {
    let grid = Arc::new(build_xi_grid(scenario)?);
    let s0 = initial_state(grid, &scenario.datum)?;
    let times = output_times(scenario.t_end, cfg.n_snapshots);
    run_from(s0, &times, cfg, scenario.dt_safety)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SnapshotMeta {
    t: f64,
    file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrajectoryMeta {
    scenario: Scenario,
    stepper: StepperConfig,
    snapshots: Vec<SnapshotMeta>,
    t_br_map: Vec<Option<f64>>,
    energy_series: Vec<EnergyPoint>,
    stats: RunStats,
}

/// Writes `meta.json` and one CSV per snapshot into `dir`.
pub fn write_trajectory(dir: &Path, scenario: &Scenario, cfg: &StepperConfig, traj: &Trajectory) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut snaps = Vec::with_capacity(traj.snapshots.len());
    for (k, s) in traj.snapshots.iter().enumerate() {
        let file = format!("snapshot_{k:04}.csv");
        write_snapshot_csv(s, &dir.join(&file))?;
        snaps.push(SnapshotMeta { t: s.t, file });
    }
    let meta = TrajectoryMeta {
        scenario: scenario.clone(),
        stepper: cfg.clone(),
        snapshots: snaps,
        t_br_map: traj.t_br_map.iter().map(|&t| t.is_finite().then_some(t)).collect(),
        energy_series: traj.energy_series.clone(),
        stats: traj.stats.clone(),
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::parse(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Reads a trajectory directory back; the ξ grid is rebuilt from the
/// scenario and checked against the stored ξ column.
pub fn read_trajectory(dir: &Path) -> Result<(Scenario, StepperConfig, Trajectory)> {
    let path = dir.join("meta.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: TrajectoryMeta = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
    let grid = Arc::new(build_xi_grid(&meta.scenario)?);
    let mut snapshots = Vec::with_capacity(meta.snapshots.len());
    for s in &meta.snapshots {
        let cols = read_snapshot_csv(&dir.join(&s.file))?;
        snapshots.push(cols.into_state(s.t, grid.clone())?);
    }
    if snapshots.is_empty() {
        return Err(Error::InsufficientData(format!("{} lists no snapshots", path.display())));
    }
    let t_br_map: Vec<f64> = meta.t_br_map.iter().map(|t| t.unwrap_or(NOT_BROKEN)).collect();
    if t_br_map.len() != grid.len() {
        return Err(Error::parse(&path, "t_br_map length does not match the grid"));
    }
    let traj = Trajectory {
        snapshots,
        t_br_map,
        energy_series: meta.energy_series,
        energy_flag: None,
        stats: meta.stats,
    };
    Ok((meta.scenario, meta.stepper, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{make_scenario, InitialDatum};

    fn sc(datum: InitialDatum, n: usize, t: f64) -> Scenario {
        make_scenario(datum, 20.0, n, 512, t, 0.02).unwrap()
    }

    #[test]
    fn zero_horizon_gives_initial_snapshot() {
        let s = sc(InitialDatum::Peakon { c: 1.0 }, 64, 0.0);
        let tr = run(&s, &StepperConfig::default()).unwrap();
        assert_eq!(tr.snapshots.len(), 1);
        assert_eq!(tr.snapshots[0].t, 0.0);
        assert!(tr.snapshots[0].q.iter().all(|&q| q == 1.0));
    }

    #[test]
    fn zero_field_stays_put() {
        let s = sc(InitialDatum::zero(), 64, 0.5);
        let tr = run(&s, &StepperConfig::default()).unwrap();
        assert_eq!(tr.last().t, 0.5);
        assert_eq!(tr.last().u, tr.snapshots[0].u);
        assert_eq!(tr.last().y, tr.snapshots[0].y);
    }

    #[test]
    fn snapshots_land_on_output_times() {
        let s = sc(InitialDatum::Peakon { c: 1.0 }, 128, 0.3);
        let cfg = StepperConfig {
            n_snapshots: 7,
            dt_init: 0.013,
            ..Default::default()
        };
        let tr = run(&s, &cfg).unwrap();
        let ts = output_times(0.3, 7);
        assert_eq!(tr.snapshots.iter().map(|s| s.t).collect::<Vec<_>>(), ts);
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn antipeakon_breaks_symmetrically_and_freezes() {
        let s = sc(InitialDatum::AntipeakonPair { a: 1.0, c: 1.0 }, 256, 2.2);
        let cfg = StepperConfig {
            n_snapshots: 22,
            ..Default::default()
        };
        let tr = run(&s, &cfg).unwrap();
        let broken: Vec<usize> = (0..256).filter(|&i| tr.t_br_map[i].is_finite()).collect();
        assert!(!broken.is_empty());
        let t_min = tr.min_t_br().unwrap();
        assert!((t_min - 1.78).abs() < 0.1, "{t_min}");
        let last = tr.last();
        for &i in &broken {
            let expect = -PI - (last.t - tr.t_br_map[i]);
            assert!((last.v[i] - expect).abs() < 1e-9);
            // only the nodes between the two crests break
            assert!(last.grid.ybar[i].abs() < 1.0);
        }
        let e0 = tr.energy_series[0].e_h1;
        let e1 = tr.energy_series.last().unwrap().e_h1;
        assert!(e1 < 0.5 * e0, "{e0} -> {e1}");
    }

    #[test]
    fn picard_agrees_with_rk4_on_one_step() {
        let s = sc(InitialDatum::Peakon { c: 1.0 }, 256, 1.0);
        let grid = Arc::new(build_xi_grid(&s).unwrap());
        let s0 = initial_state(grid, &s.datum).unwrap();
        let mut ev = RhsEvaluator::for_state(&s0);
        let c0 = Columns::of_state(&s0);
        let mut f0 = Columns::zeros(s0.len());
        ev.eval(&c0, &mut f0);
        let a = rk4(&mut ev, &c0, &f0, 0.01);
        let mut st = Stepper::new(
            StepperConfig {
                backend: Backend::Picard,
                ..Default::default()
            },
            0.02,
        )
        .unwrap();
        let b = st.advance(&mut ev, &c0, &f0, 0.01, 0.0).unwrap();
        // trapezoid in τ: local error O(dt·(dt/n_sub)²)
        assert!(a.sup_dist_uvq(&b) < 1e-7, "{}", a.sup_dist_uvq(&b));
    }

    #[test]
    fn trajectory_directory_roundtrip() {
        let s = sc(InitialDatum::AntipeakonPair { a: 1.0, c: 1.0 }, 64, 0.2);
        let cfg = StepperConfig {
            n_snapshots: 4,
            ..Default::default()
        };
        let tr = run(&s, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_trajectory(dir.path(), &s, &cfg, &tr).unwrap();
        let (s2, cfg2, tr2) = read_trajectory(dir.path()).unwrap();
        assert_eq!(s2, s);
        assert_eq!(cfg2, cfg);
        assert_eq!(tr2.snapshots, tr.snapshots);
        assert_eq!(tr2.t_br_map, tr.t_br_map);
    }

    #[test]
    fn picard_failure_is_reported() {
        let s = sc(InitialDatum::Peakon { c: 1.0 }, 64, 0.1);
        let cfg = StepperConfig {
            backend: Backend::Picard,
            picard_max_iter: 1,
            ..Default::default()
        };
        assert!(matches!(run(&s, &cfg), Err(Error::StepFailure { .. })));
    }
}
