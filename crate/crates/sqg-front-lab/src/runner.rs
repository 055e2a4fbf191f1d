//! Experiment presets, configuration parsing, and persistence of results.
//!
//! Each preset materializes a fully defaulted [`ExperimentConfig`], runs one
//! verification experiment, and writes an output bundle: the resolved config
//! echo, one CSV per series, and a `summary.toml` listing every measured
//! value next to its threshold. Bundles are written into a temporary
//! directory and renamed into place, so an interrupted run never leaves a
//! partial bundle at the final path.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::NormParams;
use crate::error::{ConfigError, LabError, Result};
use crate::evolution::{self, InitialData, SimConfig, Trajectory};
use crate::nonlocal::{self, MeshParams, QuadratureMesh, SymbolPair};
use crate::packet::{self, PacketParams};
use crate::paradiff::{self, ParaParams};
use crate::spectral::{Field, Grid1D};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    pub box_length: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            n: 1024,
            box_length: 200.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    pub diag_interval: Option<f64>,
    pub cfl_safety: f64,
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection {
            dt: 1.0 / 64.0,
            t_end: 20.0,
            snapshot_times: Vec::new(),
            diag_interval: Some(0.25),
            cfl_safety: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DealiasSection {
    /// Retained-mode fraction (1/2 by default: the nonlinearity is cubic at
    /// leading order).
    pub retained_fraction: f64,
}

impl Default for DealiasSection {
    fn default() -> Self {
        DealiasSection {
            retained_fraction: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    /// Smallest node; defaults to `dx/8` for field integrals.
    pub y_min: Option<f64>,
    pub points_per_decade: usize,
    /// Tail spacing cap; defaults to `2 dx` for field integrals.
    pub max_spacing: Option<f64>,
    /// Truncation radius; defaults to `L/2` for field integrals and `1e4`
    /// for pure symbol integrals.
    pub y_max: Option<f64>,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection {
            y_min: None,
            points_per_decade: 40,
            max_spacing: None,
            y_max: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParaSection {
    /// Paraproduct threshold M; defaults to `4 * 2pi/L`.
    pub m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacketSection {
    pub lambda: f64,
    pub t_min: Option<f64>,
    /// Window for the residual decay slope fit.
    pub slope_window: [f64; 2],
    pub fit_window_early: [f64; 2],
    pub fit_window_late: [f64; 2],
}

impl Default for PacketSection {
    fn default() -> Self {
        PacketSection {
            lambda: 1.0,
            t_min: None,
            slope_window: [10.0, 50.0],
            fit_window_early: [5.0, 20.0],
            fit_window_late: [20.0, 50.0],
        }
    }
}

/// Full experiment schema. Every field has a default; parsing an empty
/// document yields the defaults, and unknown keys are rejected with the
/// offending name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed for the randomized property probes (recorded for provenance).
    pub seed: u64,
    pub grid: GridSection,
    pub time: TimeSection,
    pub dealias: DealiasSection,
    pub mesh: MeshSection,
    pub init: InitialData,
    pub linearized_init: Option<InitialData>,
    pub norms: NormParams,
    pub para: ParaSection,
    pub packet: PacketSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            grid: GridSection::default(),
            time: TimeSection::default(),
            dealias: DealiasSection::default(),
            mesh: MeshSection::default(),
            init: InitialData::Gaussian {
                amplitude: 0.05,
                width: 5.0,
                center: 0.0,
            },
            linearized_init: None,
            norms: NormParams::default(),
            para: ParaSection::default(),
            packet: PacketSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid1d(&self) -> Result<Grid1D> {
        Grid1D::new(self.grid.n, self.grid.box_length)
    }

    /// Mesh parameters for field-valued integrals on this grid.
    pub fn field_mesh_params(&self, grid: &Grid1D) -> MeshParams {
        let base = MeshParams::for_fields(grid);
        MeshParams {
            y_min: self.mesh.y_min.unwrap_or(base.y_min),
            points_per_decade: self.mesh.points_per_decade,
            max_spacing: self.mesh.max_spacing.unwrap_or(base.max_spacing),
        }
    }

    /// Mesh parameters for grid-free symbol integrals.
    pub fn symbol_mesh_params(&self) -> MeshParams {
        let base = MeshParams::for_symbols();
        MeshParams {
            y_min: self.mesh.y_min.unwrap_or(base.y_min),
            points_per_decade: self.mesh.points_per_decade,
            max_spacing: self.mesh.max_spacing.unwrap_or(base.max_spacing),
        }
    }

    pub fn symbol_y_max(&self) -> f64 {
        self.mesh.y_max.unwrap_or(1e4)
    }

    pub fn para_params(&self, grid: &Grid1D) -> Result<ParaParams> {
        match self.para.m {
            Some(m) => ParaParams::new(m),
            None => Ok(ParaParams::for_grid(grid)),
        }
    }

    /// Resolves the serialized sections into a runnable [`SimConfig`].
    pub fn build_sim(&self) -> Result<SimConfig> {
        let grid = self.grid1d()?;
        let params = self.field_mesh_params(&grid);
        let y_max = self.mesh.y_max.unwrap_or(grid.box_length() / 2.0);
        let mesh = QuadratureMesh::symmetric(y_max, &params)?;
        let para = self.para_params(&grid)?;
        let cfg = SimConfig {
            grid,
            dt: self.time.dt,
            t_end: self.time.t_end,
            retained_fraction: self.dealias.retained_fraction,
            cfl_safety: self.time.cfl_safety,
            mesh,
            init: self.init.clone(),
            linearized_init: self.linearized_init.clone(),
            snapshot_times: self.time.snapshot_times.clone(),
            diag_interval: self.time.diag_interval,
            norms: self.norms,
            para,
            linear_only: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn packet_params(&self) -> Result<PacketParams> {
        let p = PacketParams::new(self.packet.lambda)?;
        match self.packet.t_min {
            Some(t) => p.with_t_min(t),
            None => Ok(p),
        }
    }

    /// Fills every derived default with its concrete value so the persisted
    /// config echo carries full provenance. `symbol_flavor` picks the
    /// grid-free mesh defaults (used by the pure-symbol presets).
    pub fn materialized(&self, symbol_flavor: bool) -> Result<ExperimentConfig> {
        let grid = self.grid1d()?;
        let mut out = self.clone();
        if symbol_flavor {
            let base = MeshParams::for_symbols();
            out.mesh.y_min = Some(self.mesh.y_min.unwrap_or(base.y_min));
            out.mesh.max_spacing = Some(self.mesh.max_spacing.unwrap_or(base.max_spacing));
            out.mesh.y_max = Some(self.symbol_y_max());
        } else {
            let base = MeshParams::for_fields(&grid);
            out.mesh.y_min = Some(self.mesh.y_min.unwrap_or(base.y_min));
            out.mesh.max_spacing = Some(self.mesh.max_spacing.unwrap_or(base.max_spacing));
            out.mesh.y_max = Some(self.mesh.y_max.unwrap_or(grid.box_length() / 2.0));
        }
        out.para.m = Some(self.para_params(&grid)?.threshold());
        out.packet.t_min = Some(self.packet_params()?.t_min());
        Ok(out)
    }
}

/// Parses a config file, classifying failures into missing file, unknown
/// key, and schema violation.
pub fn parse_config(path: &Path) -> std::result::Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ConfigError::Missing(path.to_path_buf())
        } else {
            ConfigError::Schema {
                path: path.to_path_buf(),
                message: e.to_string(),
            }
        }
    })?;
    toml::from_str(&text).map_err(|e| {
        let message = e.to_string();
        if let Some(rest) = message.split("unknown field `").nth(1) {
            if let Some(key) = rest.split('`').next() {
                return ConfigError::UnknownKey {
                    path: path.to_path_buf(),
                    key: key.to_string(),
                };
            }
        }
        ConfigError::Schema {
            path: path.to_path_buf(),
            message,
        }
    })
}

/// One verified statement in a summary: a measured value against its frozen
/// threshold.
#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: String,
    pub description: String,
    pub measured: f64,
    pub threshold: f64,
    pub comparator: String,
    pub pass: bool,
}

impl CriterionResult {
    pub fn le(id: &str, description: &str, measured: f64, threshold: f64) -> CriterionResult {
        CriterionResult {
            id: id.into(),
            description: description.into(),
            measured,
            threshold,
            comparator: "<=".into(),
            pass: measured <= threshold,
        }
    }

    pub fn in_range(
        id: &str,
        description: &str,
        measured: f64,
        lo: f64,
        hi: f64,
    ) -> CriterionResult {
        CriterionResult {
            id: id.into(),
            description: description.into(),
            measured,
            threshold: hi,
            comparator: format!("in [{lo}, {hi}]"),
            pass: measured >= lo && measured <= hi,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: measured {:.6e} {} {:.6e} -> {}",
            self.id,
            self.description,
            self.measured,
            self.comparator,
            self.threshold,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub preset: String,
    pub seed: u64,
    pub thread_cap: usize,
    pub all_pass: bool,
    pub criteria: Vec<CriterionResult>,
}

#[derive(Debug)]
pub struct OutputBundle {
    pub path: PathBuf,
    pub summary: Summary,
}

/// Parallelism cap from `SQG_LAB_THREADS`; the evaluation engine is
/// sequential (bit-reference mode), so any cap >= 1 is honored as-is.
pub fn thread_cap() -> usize {
    std::env::var("SQG_LAB_THREADS")
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Criteria plus named CSV payloads produced by one preset run.
pub type PresetOutput = (Vec<CriterionResult>, Vec<(String, String)>);

/// The experiment presets, one per verified claim group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Resonance,
    Identity,
    Mass,
    Linearize,
    Cubic,
    Qcoef,
    Energy,
    Decay,
    Packets,
    Scattering,
}

impl Preset {
    pub const ALL: [Preset; 10] = [
        Preset::Resonance,
        Preset::Identity,
        Preset::Mass,
        Preset::Linearize,
        Preset::Cubic,
        Preset::Qcoef,
        Preset::Energy,
        Preset::Decay,
        Preset::Packets,
        Preset::Scattering,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Resonance => "resonance",
            Preset::Identity => "identity",
            Preset::Mass => "mass",
            Preset::Linearize => "linearize",
            Preset::Cubic => "cubic",
            Preset::Qcoef => "qcoef",
            Preset::Energy => "energy",
            Preset::Decay => "decay",
            Preset::Packets => "packets",
            Preset::Scattering => "scattering",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Preset::Resonance => "resonance identity of the bilinear symbol, quadrature vs closed form (AC1)",
            Preset::Identity => "bilinear operator identity, quadrature vs spectral realization (AC2)",
            Preset::Mass => "mass conservation along the nonlinear flow, plus integrator self-convergence (AC3, AC10)",
            Preset::Linearize => "linearization consistency of the coupled flow (AC4)",
            Preset::Cubic => "cubic smallness of the nonlinearity under amplitude sweep (AC5)",
            Preset::Qcoef => "structure of the cubic phase coefficient q (AC7)",
            Preset::Energy => "modified-energy drift against the plain Sobolev drift (AC6)",
            Preset::Decay => "pointwise dispersive decay of the Y norm (AC8)",
            Preset::Packets => "asymptotic ODE residual decay for the packet profile (AC9, slope clause)",
            Preset::Scattering => "modified-scattering fit residual trend between windows (AC9, window clause)",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Preset::ALL.iter().copied().find(|p| p.name() == name)
    }

    /// The preset's tuned defaults (used when no config file is supplied).
    pub fn default_config(&self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        match self {
            Preset::Resonance | Preset::Qcoef => {
                cfg.mesh = MeshSection {
                    y_min: Some(1e-6),
                    points_per_decade: 400,
                    max_spacing: Some(0.04),
                    y_max: Some(1e4),
                };
            }
            Preset::Identity => {
                cfg.init = InitialData::Gaussian {
                    amplitude: 2.0,
                    width: 10.0,
                    center: 0.0,
                };
                // finer tail so the quadrature error sits well below the
                // truncation tolerance
                cfg.mesh.max_spacing = Some(200.0 / 1024.0 / 2.0);
            }
            Preset::Mass | Preset::Energy => {
                // the defaults are exactly the mass preset
            }
            Preset::Linearize => {
                cfg.grid = GridSection {
                    n: 512,
                    box_length: 100.0,
                };
                cfg.time.t_end = 5.0;
                cfg.time.diag_interval = None;
                cfg.linearized_init = Some(InitialData::Gaussian {
                    amplitude: 1.0,
                    width: 3.0,
                    center: 5.0,
                });
            }
            Preset::Cubic => {
                cfg.grid = GridSection {
                    n: 512,
                    box_length: 100.0,
                };
                cfg.init = InitialData::Gaussian {
                    amplitude: 1.0,
                    width: 5.0,
                    center: 0.0,
                };
            }
            Preset::Decay | Preset::Packets | Preset::Scattering => {
                cfg.grid = GridSection {
                    n: 2048,
                    box_length: 400.0,
                };
                cfg.time.t_end = 50.0;
                cfg.time.diag_interval = Some(0.5);
                cfg.time.snapshot_times = (1..=50).map(|k| k as f64).collect();
                // the envelope must be narrow enough that the packet
                // decoheres early (t ~ w^2/2); wide envelopes keep
                // t^{1/2} Y growing past the tested band
                cfg.init = InitialData::ModulatedGaussian {
                    amplitude: 0.02,
                    width: 3.0,
                    center: 0.0,
                    carrier: 1.0,
                };
                // coarser tail keeps the long run inside its time budget;
                // the data's spectral content is far below the implied
                // resolution limit
                cfg.mesh.max_spacing = Some(0.78125);
            }
        }
        cfg
    }

    pub fn execute(&self, cfg: &ExperimentConfig) -> Result<PresetOutput> {
        match self {
            Preset::Resonance => run_resonance(cfg),
            Preset::Identity => run_identity(cfg),
            Preset::Mass => run_mass(cfg),
            Preset::Linearize => run_linearize(cfg),
            Preset::Cubic => run_cubic(cfg),
            Preset::Qcoef => run_qcoef(cfg),
            Preset::Energy => run_energy(cfg),
            Preset::Decay => run_decay(cfg),
            Preset::Packets => run_packets(cfg),
            Preset::Scattering => run_scattering(cfg),
        }
    }
}

fn diagnostics_csv(traj: &Trajectory) -> String {
    let mut out = String::from(crate::diagnostics::EnergyReport::CSV_HEADER);
    out.push('\n');
    for r in &traj.reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Log-spaced frequency ladder for the symbol grid of AC1.
pub fn resonance_frequencies() -> Vec<f64> {
    (0..7).map(|i| 0.25 * 32f64.powf(i as f64 / 6.0)).collect()
}

fn run_resonance(cfg: &ExperimentConfig) -> Result<PresetOutput> {
    let started = Instant::now();
    let params = cfg.symbol_mesh_params();
    let y_max = cfg.symbol_y_max();
    let xis = resonance_frequencies();
    let mut csv = String::from("xi1,xi2,re_quad,im_quad,re_closed,im_closed,rel_err\n");
    let mut max_rel: f64 = 0.0;
    for &x1 in &xis {
        for &x2 in &xis {
            let p = SymbolPair::new(x1, x2)?;
            let quad = nonlocal::omega_symbol_quad(&p, y_max, &params)?;
            let closed = nonlocal::omega_symbol_closed(&p);
            let rel = (quad - closed).norm() / closed.norm();
            max_rel = max_rel.max(rel);
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                x1, x2, quad.re, quad.im, closed.re, closed.im, rel
            ));
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let criteria = vec![
        CriterionResult::le(
            "AC1",
            "max relative error of the symbol quadrature against the resonance identity on the 7x7 grid",
            max_rel,
            1e-4,
        ),
        CriterionResult::le("AC1.time", "resonance sweep runtime (s)", elapsed, 10.0),
    ];
    Ok((criteria, vec![("resonance.csv".into(), csv)]))
}

/// Seeded, band-limited, centrally localized test field: random low modes
/// under a Gaussian envelope, re-projected and mean-zeroed.
fn seeded_localized_field(grid: &Grid1D, seed: u64, kmax: i64, envelope_width: f64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.n();
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for m in 1..=kmax {
        let c = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * n as f64
            / (1.0 + m as f64);
        spec[m as usize] = c;
        spec[n - m as usize] = c.conj();
    }
    let raw = Field::from_spectrum(grid, spec);
    let envel = Field::from_values(
        grid,
        grid.xs_centered()
            .iter()
            .zip(raw.values())
            .map(|(x, v)| v * (-(x / envelope_width) * (x / envelope_width)).exp())
            .collect(),
    );
    // re-band-limit after the envelope and drop the mean
    let mut spec = envel.spectrum().to_vec();
    for (k, c) in spec.iter_mut().enumerate() {
        let signed = if k < n / 2 { k as i64 } else { k as i64 - n as i64 };
        if signed.abs() > 2 * kmax || signed == 0 {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    Field::from_spectrum(grid, spec)
}

/// Truncated slope-channel symbol `2 int_0^Y (cos(xi y) - 1)/y dy` by dense
/// Simpson quadrature, independent of the production mesh.
fn slope_channel_symbol(xi: f64, y_max: f64) -> f64 {
    if xi == 0.0 {
        return 0.0;
    }
    let h_target = (0.01 / xi.abs()).min(0.01);
    let n = ((y_max / h_target).ceil() as usize).max(64);
    let n = n + n % 2; // Simpson needs an even interval count
    let h = y_max / n as f64;
    let f = |y: f64| {
        if y == 0.0 {
            0.0
        } else {
            ((xi * y).cos() - 1.0) / y
        }
    };
    let mut acc = f(0.0) + f(y_max);
    for j in 1..n {
        acc += f(j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * acc * h / 3.0
}

fn run_identity(cfg: &ExperimentConfig) -> Result<PresetOutput> {
    let started = Instant::now();
    let grid = cfg.grid1d()?;
    let params = cfg.field_mesh_params(&grid);
    let y_max = cfg.mesh.y_max.unwrap_or(grid.box_length() / 2.0);
    let mesh = QuadratureMesh::symmetric(y_max, &params)?;

    let phi = cfg.init.materialize(&grid);
    let psi = paradiff::psi_of_phi(&phi);
    let v = seeded_localized_field(&grid, cfg.seed.wrapping_add(1), 12, grid.box_length() / 8.0);

    let lhs = nonlocal::eval_omega_quad(&psi, &v, &mesh)?;
    let (spectral_part, _) = nonlocal::eval_omega_spectral(psi.periodic(), &v)?;
    // slope channel: per-mode symbol, truncated at the same radius
    let slope_field = {
        let mut spec = v.spectrum().to_vec();
        for (k, c) in spec.iter_mut().enumerate() {
            *c *= slope_channel_symbol(grid.freq(k), y_max);
        }
        Field::from_spectrum(&grid, spec).scale(psi.slope())
    };
    let rhs = spectral_part.add(&slope_field);

    let err = lhs.sub(&rhs).norm_l2();
    let rel = err / v.norm_l2();
    let elapsed = started.elapsed().as_secs_f64();

    let mut csv = String::from("x,quadrature,spectral,diff\n");
    for ((x, a), b) in grid
        .xs_centered()
        .iter()
        .zip(lhs.values())
        .zip(rhs.values())
    {
        csv.push_str(&format!("{},{},{},{}\n", x, a, b, a - b));
    }
    let criteria = vec![
        CriterionResult::le(
            "AC2",
            "L2 defect of Omega quadrature vs spectral realization, relative to ||v||",
            rel,
            1e-3,
        ),
        CriterionResult::le("AC2.time", "bilinear identity runtime (s)", elapsed, 30.0),
    ];
    Ok((criteria, vec![("identity.csv".into(), csv)]))
}

/// Mass-conservation criterion on a finished trajectory.
pub fn mass_drift_criterion(traj: &Trajectory) -> CriterionResult {
    CriterionResult::le(
        "AC3",
        "relative drift of the conserved mass over the run",
        traj.mass_drift(),
        1e-7,
    )
}

/// Integrator self-convergence on the preset data. At the production
/// amplitude the O(dt^4) error sits far below the f64 rounding floor at the
/// production step, so the triple probes coarser steps where truncation
/// dominates rounding; the CFL guard is relaxed for these sub-runs only
/// (the factored linear part is exact and the nonlinear Lipschitz constant
/// is ~1e-5, so stability is not in play).
pub fn richardson_criterion(sim: &SimConfig) -> Result<CriterionResult> {
    let horizon = 5.0f64.min(sim.t_end);
    let base_dt = 0.125;
    let run_at = |dt: f64| -> Result<Field> {
        let mut c = sim.clone();
        c.dt = dt;
        c.cfl_safety = 8.0;
        c.t_end = horizon;
        c.snapshot_times = Vec::new();
        c.diag_interval = None;
        Ok(evolution::run(&c)?.final_state().expect("nonempty").phi.clone())
    };
    let f1 = run_at(base_dt)?;
    let f2 = run_at(base_dt / 2.0)?;
    let f4 = run_at(base_dt / 4.0)?;
    let ratio = f1.sub(&f2).norm_l2() / f2.sub(&f4).norm_l2();
    Ok(CriterionResult::in_range(
        "AC10",
        "order-4 Richardson ratio of the integrating-factor stepper",
        ratio,
        12.0,
        20.0,
    ))
}

fn run_mass(cfg: &ExperimentConfig) -> Result<PresetOutput> {
    let started = Instant::now();
    let sim = cfg.build_sim()?;
    let traj = evolution::run(&sim)?;
    let elapsed = started.elapsed().as_secs_f64();
    let criteria = vec![
        mass_drift_criterion(&traj),
        CriterionResult::le("AC3.time", "mass run runtime (s)", elapsed, 300.0),
        richardson_criterion(&sim)?,
    ];
    Ok((criteria, vec![("diagnostics.csv".into(), diagnostics_csv(&traj))]))
}

fn run_linearize(cfg: &ExperimentConfig) -> Result<PresetOutput> {
    let sim = cfg.build_sim()?;
    let eps = [1e-2, 5e-3, 2.5e-3];
    let report = evolution::linearization_check(&sim, &eps)?;
    let mut criteria = Vec::new();
    for (i, row) in report.rows.iter().enumerate().skip(1) {
        criteria.push(CriterionResult::in_range(
            &format!("AC4.{i}"),
            "defect ratio per halving of eps (first-order convergence)",
            row.ratio.unwrap_or(f64::NAN),
            1.6,
            2.4,
        ));
    }
    Ok((criteria, vec![("linearization.csv".into(), report.to_csv())]))
}

fn run_cubic(cfg: &ExperimentConfig) -> Result<PresetOutput> {
    let grid = cfg.grid1d()?;
    let mesh = QuadratureMesh::symmetric(
        cfg.mesh.y_max.unwrap_or(grid.box_length() / 2.0),
        &cfg.field_mesh_params(&grid),
    )?;
    let bump = cfg.init.materialize(&grid);
    let dbump = bump.derivative();
    let eps = [1e-2, 5e-3, 2.5e-3];
    let mut csv = String::from("eps,q_norm,q_norm_over_eps3\n");
    let mut ratios = Vec::new();
    for &e in &eps {
        let q = nonlocal::eval_q(&bump.scale(e), &dbump.scale(e), &mesh)?;
        let norm = q.norm_l2();
        ratios.push(norm / (e * e * e));
        csv.push_str(&format!("{},{},{}\n", e, norm, norm / (e * e * e)));
    }
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    let criteria = vec![CriterionResult::le(
        "AC5",
        "spread of ||Q(eps phi, eps phi')|| / eps^3 across the amplitude sweep",
        max / min,
        1.05,
    )];
    Ok((criteria, vec![("cubic.csv".into(), csv)]))
}

fn run_qcoef(cfg: &ExperimentConfig) -> Result<PresetOutput> {
    let mesh = QuadratureMesh::symmetric(cfg.symbol_y_max(), &cfg.symbol_mesh_params())?;
    let mut csv = String::from("xi,q,imag_residue\n");
    let mut worst_residue: f64 = 0.0;
    for &xi in &[0.5, 1.0, 2.0, 4.0] {
        let qc = nonlocal::q_coefficient_complex(xi, &mesh);
        let residue = qc.im.abs() / qc.norm();
        worst_residue = worst_residue.max(residue);
        csv.push_str(&format!("{},{},{}\n", xi, qc.re, residue));
    }
    let q1 = nonlocal::q_coefficient(1.0, &mesh);
    let q2 = nonlocal::q_coefficient(2.0, &mesh);
    let criteria = vec![
        CriterionResult::le(
            "AC7.a",
            "relative imaginary residue of the q quadrature (parity)",
            worst_residue,
            1e-8,
        ),
        CriterionResult::in_range(
            "AC7.b",
            "quadratic homogeneity q(2)/q(1)",
            q2 / q1,
            4.0 - 1e-4,
            4.0 + 1e-4,
        ),
    ];
    Ok((criteria, vec![("qcoef.csv".into(), csv)]))
}

/// Modified-energy drift against the plain Sobolev drift, on a trajectory
/// with diagnostic reports.
pub fn energy_drift_criterion(traj: &Trajectory) -> Result<CriterionResult> {
    let first = traj.reports.first().ok_or_else(|| {
        LabError::InvalidConfig("energy comparison needs a diagnostic cadence".into())
    })?;
    let drift = |get: fn(&crate::diagnostics::EnergyReport) -> f64| -> f64 {
        let base = get(first);
        traj.reports
            .iter()
            .fold(0.0f64, |acc, r| acc.max((get(r) - base).abs() / base))
    };
    let drift_e = drift(|r| r.e_s);
    let drift_s = drift(|r| r.sobolev_s);
    Ok(CriterionResult::le(
        "AC6",
        "relative drift of the modified energy over the drift of the plain Sobolev norm squared",
        drift_e / drift_s,
        1.0,
    ))
}

fn run_energy(cfg: &ExperimentConfig) -> Result<PresetOutput> {
    let sim = cfg.build_sim()?;
    let traj = evolution::run(&sim)?;
    let criteria = vec![energy_drift_criterion(&traj)?];
    Ok((criteria, vec![("diagnostics.csv".into(), diagnostics_csv(&traj))]))
}

/// Dispersive-decay band: `t^{1/2} Y(t)` against its t = 1 value.
pub fn decay_band_criterion(traj: &Trajectory) -> Result<CriterionResult> {
    let reports: Vec<_> = traj.reports.iter().filter(|r| r.t >= 1.0).collect();
    let base = reports
        .first()
        .ok_or_else(|| LabError::InvalidConfig("no reports at t >= 1".into()))?;
    let base_val = base.t.sqrt() * base.y;
    let mut worst: f64 = 1.0;
    for r in &reports {
        let ratio = r.t.sqrt() * r.y / base_val;
        worst = worst.max(ratio.max(1.0 / ratio));
    }
    Ok(CriterionResult::le(
        "AC8",
        "max deviation factor of t^(1/2) * Y(t) from its t = 1 value",
        worst,
        3.0,
    ))
}

fn run_decay(cfg: &ExperimentConfig) -> Result<PresetOutput> {
    let started = Instant::now();
    let sim = cfg.build_sim()?;
    let traj = evolution::run(&sim)?;
    let elapsed = started.elapsed().as_secs_f64();
    let criteria = vec![
        decay_band_criterion(&traj)?,
        CriterionResult::le("AC8.time", "decay run runtime (s)", elapsed, 900.0),
    ];
    Ok((criteria, vec![("diagnostics.csv".into(), diagnostics_csv(&traj))]))
}

/// Profile series with the asymptotic-ODE residual at the block midpoint
/// velocity, plus the quadrature value of q(1).
pub fn packet_series(
    cfg: &ExperimentConfig,
    traj: &Trajectory,
) -> Result<(crate::packet::ProfileSeries, f64)> {
    let params = cfg.packet_params()?;
    let v_star = packet::midpoint_velocity(params.lambda());
    let series = packet::profile_series(traj, &params, &[v_star])?;
    let symbol_mesh = QuadratureMesh::symmetric(1e4, &MeshParams::for_symbols())?;
    let q1 = nonlocal::q_coefficient(1.0, &symbol_mesh);
    Ok((packet::ode_residual(&series, q1)?, q1))
}

/// Decay slope of the asymptotic ODE residual over the configured window.
pub fn packet_slope_criterion(
    cfg: &ExperimentConfig,
    traj: &Trajectory,
) -> Result<(CriterionResult, crate::packet::ProfileSeries)> {
    let (series, _) = packet_series(cfg, traj)?;
    let [w0, w1] = cfg.packet.slope_window;
    let residual = series.residual.as_ref().expect("residual populated");
    let mut times = Vec::new();
    let mut mags = Vec::new();
    for (i, &t) in series.times.iter().enumerate() {
        if t >= w0 && t <= w1 {
            times.push(t);
            mags.push(residual[i][0].norm());
        }
    }
    let slope = packet::log_log_slope(&times, &mags);
    let criterion = CriterionResult::le(
        "AC9.slope",
        "log-log decay slope of the asymptotic ODE residual |f(t, v*)|",
        slope,
        -1.0,
    );
    Ok((criterion, series))
}

/// Residual trend of the modified-scattering fit between the two windows.
pub fn scattering_trend_criterion(
    cfg: &ExperimentConfig,
    traj: &Trajectory,
) -> Result<(CriterionResult, crate::packet::ScatterFit, crate::packet::ScatterFit)> {
    let params = cfg.packet_params()?;
    let v_star = packet::midpoint_velocity(params.lambda());
    let series = packet::profile_series(traj, &params, &[v_star])?;
    let symbol_mesh = QuadratureMesh::symmetric(1e4, &MeshParams::for_symbols())?;
    let q1 = nonlocal::q_coefficient(1.0, &symbol_mesh);
    let [e0, e1] = cfg.packet.fit_window_early;
    let [l0, l1] = cfg.packet.fit_window_late;
    let early = packet::fit_scattering(&series, q1, (e0, e1))?;
    let late = packet::fit_scattering(&series, q1, (l0, l1))?;
    let criterion = CriterionResult::le(
        "AC9.windows",
        "scattering-fit residual on the late window relative to the early window",
        late.residual[0] / early.residual[0],
        1.0,
    );
    Ok((criterion, early, late))
}

fn run_packets(cfg: &ExperimentConfig) -> Result<PresetOutput> {
    let sim = cfg.build_sim()?;
    let traj = evolution::run(&sim)?;
    let (criterion, series) = packet_slope_criterion(cfg, &traj)?;
    Ok((vec![criterion], vec![("profiles.csv".into(), series.to_csv())]))
}

fn run_scattering(cfg: &ExperimentConfig) -> Result<PresetOutput> {
    let sim = cfg.build_sim()?;
    let traj = evolution::run(&sim)?;
    let (criterion, early, late) = scattering_trend_criterion(cfg, &traj)?;
    let (series, _) = packet_series(cfg, &traj)?;
    let files = vec![
        ("profiles.csv".into(), series.to_csv()),
        ("scatterfit_early.csv".into(), early.to_csv()),
        ("scatterfit_late.csv".into(), late.to_csv()),
    ];
    Ok((vec![criterion], files))
}

/// Executes a preset and persists the bundle atomically (temp dir +
/// rename).
pub fn run_experiment(
    preset: Preset,
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<OutputBundle> {
    let symbol_flavor = matches!(preset, Preset::Resonance | Preset::Qcoef);
    let cfg = cfg.materialized(symbol_flavor)?;
    let (criteria, files) = preset.execute(&cfg)?;
    let summary = Summary {
        preset: preset.name().to_string(),
        seed: cfg.seed,
        thread_cap: thread_cap(),
        all_pass: criteria.iter().all(|c| c.pass),
        criteria,
    };

    let parent = out_dir.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let parent = if parent.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        parent
    };
    fs::create_dir_all(&parent)?;
    let tmp = tempfile::Builder::new()
        .prefix(".bundle-")
        .tempdir_in(&parent)?;
    fs::write(tmp.path().join("config.toml"), cfg.to_toml())?;
    for (name, contents) in &files {
        fs::write(tmp.path().join(name), contents)?;
    }
    let summary_text =
        toml::to_string_pretty(&summary).map_err(|e| LabError::InvalidConfig(e.to_string()))?;
    fs::write(tmp.path().join("summary.toml"), &summary_text)?;

    if out_dir.exists() {
        fs::remove_dir_all(out_dir)?;
    }
    let tmp_path = tmp.keep();
    fs::rename(&tmp_path, out_dir)?;
    Ok(OutputBundle {
        path: out_dir.to_path_buf(),
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn empty_document_yields_all_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "[time]\ndtx = 0.1").unwrap();
        match parse_config(&path) {
            Err(ConfigError::UnknownKey { key, .. }) => assert_eq!(key, "dtx"),
            other => panic!("expected unknown-key rejection, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_its_own_class() {
        match parse_config(Path::new("/nonexistent/config.toml")) {
            Err(ConfigError::Missing(_)) => {}
            other => panic!("expected missing-file class, got {other:?}"),
        }
    }

    #[test]
    fn parse_serialize_parse_is_idempotent() {
        let cfg = Preset::Decay.default_config();
        let text = cfg.to_toml();
        let reparsed: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, reparsed);
        let text2 = reparsed.to_toml();
        assert_eq!(text, text2);
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(Preset::from_name(p.name()), Some(p));
        }
        assert_eq!(Preset::from_name("nope"), None);
    }

    #[test]
    fn qcoef_bundle_is_deterministic_and_atomic() {
        let dir = tempfile::tempdir().unwrap();
        let out1 = dir.path().join("a");
        let out2 = dir.path().join("b");
        let cfg = Preset::Qcoef.default_config();
        let b1 = run_experiment(Preset::Qcoef, &cfg, &out1).unwrap();
        let _b2 = run_experiment(Preset::Qcoef, &cfg, &out2).unwrap();
        assert!(b1.summary.all_pass, "{:#?}", b1.summary);
        for name in ["config.toml", "qcoef.csv", "summary.toml"] {
            let x = fs::read(out1.join(name)).unwrap();
            let y = fs::read(out2.join(name)).unwrap();
            assert_eq!(x, y, "bundle file {name} differs between identical runs");
        }
        // no stray temp dirs left behind
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with(".bundle-"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn rerunning_into_same_path_replaces_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("bundle");
        let cfg = Preset::Qcoef.default_config();
        run_experiment(Preset::Qcoef, &cfg, &out).unwrap();
        fs::write(out.join("sentinel"), "stale").unwrap();
        run_experiment(Preset::Qcoef, &cfg, &out).unwrap();
        assert!(!out.join("sentinel").exists());
        assert!(out.join("summary.toml").exists());
    }
}
