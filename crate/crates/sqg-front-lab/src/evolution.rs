//! Time integration of the nonlinear front equation and its linearization.
//!
//! The linear part `2 log|D| d_x` is handled exactly by an integrating
//! factor (the symbol is purely imaginary, so the factor is unimodular); the
//! nonlinearity is advanced with classical four-stage Runge-Kutta in the
//! factored frame. With the nonlinearity disabled the stepper reproduces
//! `linear_propagate` to rounding.
//!
//! Dealiasing keeps a retained-mode fraction of 1/2 by default, stricter
//! than the usual 2/3 because the nonlinearity is cubic at leading order.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{EnergyReport, NormParams};
use crate::error::{LabError, Result};
use crate::nonlocal::{self, QuadratureMesh};
use crate::paradiff::{self, ParaParams};
use crate::spectral::{Field, Grid1D};

/// Named initial-data profiles; coordinates are box-centered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Zero,
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: f64,
    },
    /// Gaussian envelope with a cosine carrier; populates the dyadic block
    /// around the carrier frequency.
    ModulatedGaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: f64,
        carrier: f64,
    },
    CosineMode {
        amplitude: f64,
        mode: i64,
    },
}

impl InitialData {
    pub fn materialize(&self, grid: &Grid1D) -> Field {
        match *self {
            InitialData::Zero => Field::zeros(grid),
            InitialData::Gaussian {
                amplitude,
                width,
                center,
            } => Field::from_fn(grid, |x| {
                let u = (x - center) / width;
                amplitude * (-u * u).exp()
            }),
            InitialData::ModulatedGaussian {
                amplitude,
                width,
                center,
                carrier,
            } => Field::from_fn(grid, |x| {
                let u = (x - center) / width;
                amplitude * (-u * u).exp() * (carrier * (x - center)).cos()
            }),
            InitialData::CosineMode { amplitude, mode } => {
                let xi0 = grid.fundamental();
                Field::from_fn(grid, |x| amplitude * (mode as f64 * xi0 * x).cos())
            }
        }
    }
}

/// Largest admissible step under the guard `dt <= c_cfl * dx / |a'(xi_max)|`,
/// with `xi_max` the top retained frequency and `a'(xi) = -2 - 2 log|xi|`.
pub fn cfl_limit(grid: &Grid1D, retained_fraction: f64, cfl_safety: f64) -> f64 {
    let xi_max = retained_fraction * (grid.n() as f64 / 2.0) * grid.fundamental();
    let speed = (-2.0 - 2.0 * xi_max.abs().ln()).abs().max(1e-12);
    cfl_safety * grid.dx() / speed
}

/// Fully resolved run configuration (runtime object; the serializable layer
/// lives in [`crate::runner`]).
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub grid: Grid1D,
    pub dt: f64,
    pub t_end: f64,
    /// Retained-mode fraction in (0, 2/3].
    pub retained_fraction: f64,
    pub cfl_safety: f64,
    pub mesh: QuadratureMesh,
    pub init: InitialData,
    /// Initial data for the co-evolved linearized variable.
    pub linearized_init: Option<InitialData>,
    pub snapshot_times: Vec<f64>,
    /// Diagnostic cadence; `None` records only t = 0 and t_end.
    pub diag_interval: Option<f64>,
    pub norms: NormParams,
    pub para: ParaParams,
    /// Disables the nonlinearity (pure integrating-factor flow) for
    /// integrator verification.
    pub linear_only: bool,
}

impl SimConfig {
    pub fn new(grid: Grid1D, dt: f64, t_end: f64, init: InitialData) -> Result<SimConfig> {
        let mesh = QuadratureMesh::for_grid(&grid)?;
        Ok(SimConfig {
            grid,
            dt,
            t_end,
            retained_fraction: 0.5,
            cfl_safety: 0.5,
            mesh,
            init,
            linearized_init: None,
            snapshot_times: Vec::new(),
            diag_interval: None,
            norms: NormParams::default(),
            para: ParaParams::new(1.0).unwrap(),
            linear_only: false,
        }
        .with_default_para())
    }

    fn with_default_para(mut self) -> SimConfig {
        self.para = ParaParams::for_grid(&self.grid);
        self
    }

    fn is_multiple_of_dt(&self, t: f64) -> bool {
        let steps = t / self.dt;
        (steps - steps.round()).abs() <= 1e-9 * steps.abs().max(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(LabError::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(LabError::InvalidConfig(format!(
                "t_end = {} must be nonnegative",
                self.t_end
            )));
        }
        if !(self.retained_fraction > 0.0 && self.retained_fraction <= 2.0 / 3.0) {
            return Err(LabError::InvalidConfig(format!(
                "retained_fraction = {} must lie in (0, 2/3]",
                self.retained_fraction
            )));
        }
        let limit = cfl_limit(&self.grid, self.retained_fraction, self.cfl_safety);
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(LabError::CflViolated { dt: self.dt, limit });
        }
        self.mesh.validate_for_grid(&self.grid)?;
        self.norms.validate()?;
        if !self.is_multiple_of_dt(self.t_end) {
            return Err(LabError::InvalidConfig(format!(
                "t_end = {} is not a multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        for &ts in &self.snapshot_times {
            if ts < -1e-12 || ts > self.t_end * (1.0 + 1e-12) || !self.is_multiple_of_dt(ts) {
                return Err(LabError::InvalidConfig(format!(
                    "snapshot time {ts} must be a multiple of dt within [0, t_end]"
                )));
            }
        }
        if let Some(di) = self.diag_interval {
            if di <= 0.0 || !self.is_multiple_of_dt(di) {
                return Err(LabError::InvalidConfig(format!(
                    "diag_interval = {di} must be a positive multiple of dt"
                )));
            }
        }
        Ok(())
    }
}

/// `Q(phi, d_x phi)`, dealiased: the full right-hand side minus the linear
/// part (which the integrating factor handles exactly).
pub fn rhs_nonlinear(phi: &Field, mesh: &QuadratureMesh, retained_fraction: f64) -> Result<Field> {
    paradiff::check_small_data_margin(phi)?;
    Ok(nonlocal::eval_q(phi, &phi.derivative(), mesh)?.dealias(retained_fraction))
}

/// `d_x Q(phi, v)`, the nonlinear part of the linearized flow.
pub fn rhs_linearized(
    phi: &Field,
    v: &Field,
    mesh: &QuadratureMesh,
    retained_fraction: f64,
) -> Result<Field> {
    Ok(nonlocal::eval_q(phi, v, mesh)?
        .derivative()
        .dealias(retained_fraction))
}

/// State at one time: the front and, when co-evolving, the linearized
/// variable.
#[derive(Clone, Debug)]
pub struct SimState {
    pub t: f64,
    pub phi: Field,
    pub v: Option<Field>,
}

/// Ordered snapshots plus the diagnostic series of a run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub snapshots: Vec<SimState>,
    pub reports: Vec<EnergyReport>,
}

impl Trajectory {
    /// Maximum relative deviation of the mass over the recorded reports.
    pub fn mass_drift(&self) -> f64 {
        let m0 = match self.reports.first() {
            Some(r) => r.mass,
            None => return 0.0,
        };
        if m0 == 0.0 {
            return self
                .reports
                .iter()
                .fold(0.0f64, |acc, r| acc.max(r.mass.abs()));
        }
        self.reports
            .iter()
            .fold(0.0f64, |acc, r| acc.max((r.mass - m0).abs() / m0))
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&SimState> {
        self.snapshots
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
    }

    pub fn final_state(&self) -> Option<&SimState> {
        self.snapshots.last()
    }
}

struct Stepper {
    grid: Grid1D,
    mesh: QuadratureMesh,
    retained: f64,
    linear_only: bool,
    dt: f64,
    e_half: Vec<Complex64>,
    e_full: Vec<Complex64>,
}

impl Stepper {
    fn new(cfg: &SimConfig, dt: f64) -> Stepper {
        let grid = cfg.grid.clone();
        let omega_exp = |tau: f64| -> Vec<Complex64> {
            (0..grid.n())
                .map(|k| {
                    let xi = grid.freq(k);
                    if xi == 0.0 {
                        Complex64::new(1.0, 0.0)
                    } else {
                        Complex64::from_polar(1.0, 2.0 * tau * xi * xi.abs().ln())
                    }
                })
                .collect()
        };
        let e_half = omega_exp(dt / 2.0);
        let e_full = omega_exp(dt);
        Stepper {
            grid,
            mesh: cfg.mesh.clone(),
            retained: cfg.retained_fraction,
            linear_only: cfg.linear_only,
            dt,
            e_half,
            e_full,
        }
    }

    fn rhs(&self, phi: &Field, v: Option<&Field>) -> Result<(Vec<Complex64>, Option<Vec<Complex64>>)> {
        if self.linear_only {
            let zero = vec![Complex64::new(0.0, 0.0); self.grid.n()];
            return Ok((zero.clone(), v.map(|_| zero)));
        }
        let n_phi = rhs_nonlinear(phi, &self.mesh, self.retained)?;
        let n_v = match v {
            Some(v) => Some(
                rhs_linearized(phi, v, &self.mesh, self.retained)?
                    .spectrum()
                    .to_vec(),
            ),
            None => None,
        };
        Ok((n_phi.spectrum().to_vec(), n_v))
    }

    /// One integrating-factor RK4 step of the pair of spectra.
    fn step(&self, state: &SimState) -> Result<SimState> {
        let n = self.grid.n();
        let dt = self.dt;
        let combine = |base: &[Complex64], mult: &[Complex64], incr: Option<(&[Complex64], f64)>| {
            let mut out = vec![Complex64::new(0.0, 0.0); n];
            for k in 0..n {
                let mut val = base[k];
                if let Some((inc, w)) = incr {
                    val += w * inc[k];
                }
                out[k] = mult[k] * val;
            }
            out
        };
        let as_field = |spec: Vec<Complex64>| Field::from_spectrum_unchecked(&self.grid, spec);

        let phi0 = state.phi.spectrum().to_vec();
        let v0 = state.v.as_ref().map(|f| f.spectrum().to_vec());

        // stage 1 at t
        let (ka_p, ka_v) = self.rhs(&state.phi, state.v.as_ref())?;

        // stage 2 at t + dt/2
        let phi_a = combine(&phi0, &self.e_half, Some((&ka_p, dt / 2.0)));
        let v_a = match (&v0, &ka_v) {
            (Some(v0), Some(k)) => Some(combine(v0, &self.e_half, Some((k, dt / 2.0)))),
            _ => None,
        };
        let (kb_p, kb_v) = self.rhs(&as_field(phi_a), v_a.map(as_field).as_ref())?;

        // stage 3 at t + dt/2
        let mut phi_b = combine(&phi0, &self.e_half, None);
        for k in 0..n {
            phi_b[k] += dt / 2.0 * kb_p[k];
        }
        let v_b = match (&v0, &kb_v) {
            (Some(v0), Some(kv)) => {
                let mut vb = combine(v0, &self.e_half, None);
                for k in 0..n {
                    vb[k] += dt / 2.0 * kv[k];
                }
                Some(vb)
            }
            _ => None,
        };
        let (kc_p, kc_v) = self.rhs(&as_field(phi_b), v_b.map(as_field).as_ref())?;

        // stage 4 at t + dt
        let mut phi_c = combine(&phi0, &self.e_full, None);
        for k in 0..n {
            phi_c[k] += dt * self.e_half[k] * kc_p[k];
        }
        let v_c = match (&v0, &kc_v) {
            (Some(v0), Some(kv)) => {
                let mut vc = combine(v0, &self.e_full, None);
                for k in 0..n {
                    vc[k] += dt * self.e_half[k] * kv[k];
                }
                Some(vc)
            }
            _ => None,
        };
        let (kd_p, kd_v) = self.rhs(&as_field(phi_c), v_c.map(as_field).as_ref())?;

        let assemble = |base: &[Complex64],
                        ka: &[Complex64],
                        kb: &[Complex64],
                        kc: &[Complex64],
                        kd: &[Complex64]| {
            let mut out = vec![Complex64::new(0.0, 0.0); n];
            for k in 0..n {
                out[k] = self.e_full[k] * base[k]
                    + dt / 6.0
                        * (self.e_full[k] * ka[k]
                            + 2.0 * self.e_half[k] * (kb[k] + kc[k])
                            + kd[k]);
            }
            out
        };

        let phi_next = assemble(&phi0, &ka_p, &kb_p, &kc_p, &kd_p);
        let v_next = match (&v0, &ka_v, &kb_v, &kc_v, &kd_v) {
            (Some(v0), Some(a), Some(b), Some(c), Some(d)) => Some(assemble(v0, a, b, c, d)),
            _ => None,
        };

        for c in &phi_next {
            if !c.re.is_finite() || !c.im.is_finite() {
                return Err(LabError::Aborted {
                    t: state.t + dt,
                    reason: "non-finite spectrum after step".into(),
                });
            }
        }

        Ok(SimState {
            t: state.t + dt,
            phi: as_field(phi_next),
            v: v_next.map(as_field),
        })
    }
}

/// Advances `state` by one step of size `dt` (either sign) under `cfg`.
pub fn step(state: &SimState, dt: f64, cfg: &SimConfig) -> Result<SimState> {
    Stepper::new(cfg, dt).step(state)
}

fn run_from(cfg: &SimConfig, phi0: Field, v0: Option<Field>) -> Result<Trajectory> {
    cfg.validate()?;
    let stepper = Stepper::new(cfg, cfg.dt);
    let mut state = SimState {
        t: 0.0,
        phi: phi0.dealias(cfg.retained_fraction),
        v: v0.map(|f| f.dealias(cfg.retained_fraction)),
    };

    let wants_snapshot = |t: f64| {
        cfg.snapshot_times
            .iter()
            .any(|&ts| (ts - t).abs() <= 1e-9 * ts.abs().max(1.0))
    };
    let wants_report = |t: f64| match cfg.diag_interval {
        Some(di) => {
            let k = t / di;
            (k - k.round()).abs() <= 1e-9 * k.abs().max(1.0)
        }
        None => false,
    };

    let margin_to_abort = |t: f64, e: LabError| match e {
        LabError::MarginViolated { measured, limit } => LabError::Aborted {
            t,
            reason: format!("small-data margin violated: max F(phi_x) = {measured} > {limit}"),
        },
        other => other,
    };

    let mut snapshots = Vec::new();
    let mut reports = Vec::new();
    let record = |state: &SimState,
                  snapshots: &mut Vec<SimState>,
                  reports: &mut Vec<EnergyReport>,
                  force_report: bool|
     -> Result<()> {
        if wants_snapshot(state.t) {
            snapshots.push(state.clone());
        }
        if force_report || wants_report(state.t) {
            reports.push(EnergyReport::compute(
                state.t, &state.phi, &cfg.norms, &cfg.para,
            )?);
        }
        Ok(())
    };

    record(&state, &mut snapshots, &mut reports, true).map_err(|e| margin_to_abort(0.0, e))?;
    let n_steps = (cfg.t_end / cfg.dt).round() as u64;
    for k in 0..n_steps {
        let t_before = state.t;
        state = stepper
            .step(&state)
            .map_err(|e| margin_to_abort(t_before, e))?;
        // recompute t from the step index to keep recording times exact
        state.t = (k + 1) as f64 * cfg.dt;
        let last = k + 1 == n_steps;
        record(&state, &mut snapshots, &mut reports, last)
            .map_err(|e| margin_to_abort(state.t, e))?;
    }
    if !wants_snapshot(state.t) {
        snapshots.push(state);
    }
    Ok(Trajectory { snapshots, reports })
}

/// Runs the nonlinear front equation from the configured initial data.
pub fn run(cfg: &SimConfig) -> Result<Trajectory> {
    run_from(cfg, cfg.init.materialize(&cfg.grid), None)
}

/// Co-evolves the front with the linearized variable; requires
/// `cfg.linearized_init`.
pub fn run_coupled(cfg: &SimConfig) -> Result<Trajectory> {
    let v0 = cfg
        .linearized_init
        .as_ref()
        .ok_or_else(|| {
            LabError::InvalidConfig("run_coupled requires linearized_init".into())
        })?
        .materialize(&cfg.grid);
    run_from(cfg, cfg.init.materialize(&cfg.grid), Some(v0))
}

/// Runs from explicit initial fields (used by the linearization oracle).
pub fn run_with_initial(cfg: &SimConfig, phi0: Field, v0: Option<Field>) -> Result<Trajectory> {
    run_from(cfg, phi0, v0)
}

/// One row of the linearization-consistency table.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LinearizationRow {
    pub eps: f64,
    /// `|| (phi_eps(T) - phi(T))/eps - v(T) ||_{L^2}`.
    pub defect: f64,
    /// Ratio of the previous defect to this one (should be ~2 per halving).
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearizationReport {
    pub t_eval: f64,
    pub rows: Vec<LinearizationRow>,
}

impl LinearizationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,defect,ratio\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{}\n",
                r.eps,
                r.defect,
                r.ratio.map_or(String::new(), |x| x.to_string())
            ));
        }
        out
    }
}

/// Compares the finite difference of flows `(phi_eps - phi)/eps` against the
/// co-evolved linearized variable at `t_end`, for each perturbation size.
/// The perturbation direction is `cfg.linearized_init`.
pub fn linearization_check(cfg: &SimConfig, eps_list: &[f64]) -> Result<LinearizationReport> {
    let direction = cfg
        .linearized_init
        .as_ref()
        .ok_or_else(|| {
            LabError::InvalidConfig("linearization_check requires linearized_init".into())
        })?
        .materialize(&cfg.grid);
    let base = run_coupled(cfg)?;
    let base_final = base.final_state().expect("nonempty trajectory");
    let phi_t = &base_final.phi;
    let v_t = base_final.v.as_ref().expect("coupled run carries v");

    let phi0 = cfg.init.materialize(&cfg.grid);
    let mut rows: Vec<LinearizationRow> = Vec::new();
    for &eps in eps_list {
        let perturbed = run_with_initial(cfg, phi0.add(&direction.scale(eps)), None)?;
        let phi_eps = &perturbed.final_state().expect("nonempty").phi;
        let defect = phi_eps.sub(phi_t).scale(1.0 / eps).sub(v_t).norm_l2();
        let ratio = rows.last().map(|prev| prev.defect / defect);
        rows.push(LinearizationRow { eps, defect, ratio });
    }
    Ok(LinearizationReport {
        t_eval: cfg.t_end,
        rows,
    })
}
