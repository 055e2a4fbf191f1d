//! Wave packets, asymptotic profile extraction, the asymptotic ODE residual,
//! and the modified-scattering fit.
//!
//! With dispersion `a(xi) = -2 xi log|xi|`, the group velocity is
//! `v = a'(xi) = -2 - 2 log|xi|`, inverted (on the negative branch kept
//! throughout) by `xi_v = -e^{-1 - v/2}`. The packet traveling at velocity v
//! is
//!
//! ```text
//! u^v = a''(xi_v)^{-1/2} chi(y) e^{i t phase(x/t)},
//! y = (x - v t) / (t^{1/2} a''(xi_v)^{1/2}),
//! phase(v) = v xi_v - a(xi_v),
//! ```
//!
//! with `chi` a smooth unit bump. The asymptotic profile is the pairing
//! `gamma_lambda(t, v) = <phi_lambda, u^v>`, which, along solutions, obeys
//! `gamma' = i q(xi_v) xi_v t^{-1} gamma |gamma|^2` up to faster-decaying
//! terms.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::evolution::Trajectory;
use crate::spectral::{CField, DyadicPartition, Field, Grid1D};

/// Dispersion relation `a(xi) = -2 xi log|xi|` (`a(0) = 0`).
pub fn dispersion(xi: f64) -> f64 {
    if xi == 0.0 {
        0.0
    } else {
        -2.0 * xi * xi.abs().ln()
    }
}

/// Group velocity `a'(xi) = -2 - 2 log|xi|`.
pub fn group_velocity(xi: f64) -> f64 {
    -2.0 - 2.0 * xi.abs().ln()
}

/// `a''(xi) = -2/xi`.
pub fn dispersion_second_deriv(xi: f64) -> f64 {
    -2.0 / xi
}

/// Inverse of the group velocity on the negative frequency branch:
/// `xi_v = -e^{-1 - v/2}`, so that `a'(xi_v) = v` exactly.
pub fn xi_of_v(v: f64) -> f64 {
    -(-1.0 - v / 2.0).exp()
}

/// Packet phase `phase(v) = v xi_v - a(xi_v)`.
pub fn phase_of_v(v: f64) -> f64 {
    let xi = xi_of_v(v);
    v * xi - dispersion(xi)
}

/// Velocity interval `J_lambda = a'(I_lambda)` for the dyadic block
/// `I_lambda = [lambda/2, 2 lambda]` (length `4 log 2`, the same for every
/// block; the map is decreasing).
pub fn velocity_interval(lambda: f64) -> (f64, f64) {
    (group_velocity(2.0 * lambda), group_velocity(lambda / 2.0))
}

/// Reference velocity of the block: the midpoint of `J_lambda`, which is
/// exactly `a'(lambda)`.
pub fn midpoint_velocity(lambda: f64) -> f64 {
    group_velocity(lambda)
}

fn chi_normalization() -> f64 {
    static NORM: OnceLock<f64> = OnceLock::new();
    *NORM.get_or_init(|| {
        // composite Simpson for int_{-1}^{1} exp(-1/(1-y^2)) dy; the
        // integrand is C-infinity with compact support, so this converges
        // far past the 1e-10 normalization requirement
        let n = 40_000usize;
        let h = 2.0 / n as f64;
        let f = |y: f64| {
            let d = 1.0 - y * y;
            if d <= 0.0 {
                0.0
            } else {
                (-1.0 / d).exp()
            }
        };
        let mut acc = f(-1.0) + f(1.0);
        for j in 1..n {
            let y = -1.0 + j as f64 * h;
            acc += f(y) * if j % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    })
}

/// The smooth unit bump: `exp(-1/(1-y^2))` on `|y| < 1`, normalized so that
/// `int chi = 1`.
pub fn bump_chi(y: f64) -> f64 {
    let d = 1.0 - y * y;
    if d <= 0.0 {
        0.0
    } else {
        (-1.0 / d).exp() / chi_normalization()
    }
}

/// Dyadic block and validity floor for packet testing.
#[derive(Clone, Copy, Debug)]
pub struct PacketParams {
    lambda: f64,
    t_min: f64,
}

impl PacketParams {
    /// Default validity floor `t_min = max(1, 1/lambda)`, the boundary of the
    /// region where the packet scale resolves the block.
    pub fn new(lambda: f64) -> Result<PacketParams> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(LabError::InvalidConfig(format!(
                "dyadic block lambda = {lambda} must be positive"
            )));
        }
        Ok(PacketParams {
            lambda,
            t_min: (1.0 / lambda).max(1.0),
        })
    }

    pub fn with_t_min(mut self, t_min: f64) -> Result<PacketParams> {
        let floor = (1.0 / self.lambda).max(1.0);
        if t_min < floor {
            return Err(LabError::InvalidConfig(format!(
                "t_min = {t_min} below the validity floor {floor} for lambda = {}",
                self.lambda
            )));
        }
        self.t_min = t_min;
        Ok(self)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    /// Whether `(t, v)` lies in the validity region.
    pub fn admits(&self, t: f64, v: f64) -> bool {
        let (lo, hi) = velocity_interval(self.lambda);
        t >= self.t_min && v >= lo && v <= hi
    }
}

/// Linear wave packet at velocity `v`, sampled on the grid's centered
/// coordinates. The flag is `true` when the packet center `v t` leaves the
/// central 80% of the box. The bump profile is fixed ([`bump_chi`]); the
/// params only carry the block's validity bookkeeping.
pub fn packet_field(v: f64, t: f64, grid: &Grid1D, _params: &PacketParams) -> Result<(CField, bool)> {
    if t < 1.0 {
        return Err(LabError::OutsidePacketRegion { t, v, t_min: 1.0 });
    }
    let xi_v = xi_of_v(v);
    let app = dispersion_second_deriv(xi_v);
    debug_assert!(app > 0.0);
    let width = t.sqrt() * app.sqrt();
    let amp = 1.0 / app.sqrt();
    let warn = (v * t).abs() > 0.4 * grid.box_length();
    let values = grid
        .xs_centered()
        .iter()
        .map(|&x| {
            let env = amp * bump_chi((x - v * t) / width);
            if env == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                env * Complex64::from_polar(1.0, t * phase_of_v(x / t))
            }
        })
        .collect();
    Ok((CField::from_values(grid, values), warn))
}

/// Asymptotic profile `gamma_lambda(t, v) = <phi_lambda, u^v>` (conjugation
/// on the packet side). Linear in `phi`.
pub fn extract_gamma(phi: &Field, t: f64, v: f64, params: &PacketParams) -> Result<Complex64> {
    if !params.admits(t, v) {
        return Err(LabError::OutsidePacketRegion {
            t,
            v,
            t_min: params.t_min,
        });
    }
    let partition = DyadicPartition::for_grid(phi.grid())?;
    let phi_block = partition.project(phi, params.lambda)?;
    let (packet, _) = packet_field(v, t, phi.grid(), params)?;
    Ok(CField::from_field(&phi_block).inner(&packet))
}

/// Sampled asymptotic profile over one dyadic block: values `gamma(t_j, v_i)`
/// and, after [`ode_residual`], the inhomogeneity `f(t_j, v_i)`.
#[derive(Clone, Debug)]
pub struct ProfileSeries {
    pub lambda: f64,
    pub times: Vec<f64>,
    pub velocities: Vec<f64>,
    /// `gamma[i][j]` at time index i, velocity index j.
    pub gamma: Vec<Vec<Complex64>>,
    /// Residual of the asymptotic ODE, same layout; `None` until computed.
    pub residual: Option<Vec<Vec<Complex64>>>,
}

impl ProfileSeries {
    fn validate(&self) -> Result<()> {
        for w in self.times.windows(2) {
            if w[1] <= w[0] {
                return Err(LabError::InvalidConfig(
                    "profile series times must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    pub const CSV_HEADER: &'static str = "t,v,re_gamma,im_gamma,re_f,im_f";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (i, &t) in self.times.iter().enumerate() {
            for (j, &v) in self.velocities.iter().enumerate() {
                let g = self.gamma[i][j];
                let f = self
                    .residual
                    .as_ref()
                    .map(|r| r[i][j])
                    .unwrap_or(Complex64::new(0.0, 0.0));
                out.push_str(&format!("{},{},{},{},{},{}\n", t, v, g.re, g.im, f.re, f.im));
            }
        }
        out
    }
}

/// Extracts `gamma` from every snapshot of `traj` with `t >= t_min`, at the
/// given velocities (all must lie in `J_lambda`).
pub fn profile_series(
    traj: &Trajectory,
    params: &PacketParams,
    v_grid: &[f64],
) -> Result<ProfileSeries> {
    let mut times = Vec::new();
    let mut gamma = Vec::new();
    for snap in &traj.snapshots {
        if snap.t < params.t_min {
            continue;
        }
        let mut row = Vec::with_capacity(v_grid.len());
        for &v in v_grid {
            row.push(extract_gamma(&snap.phi, snap.t, v, params)?);
        }
        times.push(snap.t);
        gamma.push(row);
    }
    let series = ProfileSeries {
        lambda: params.lambda(),
        times,
        velocities: v_grid.to_vec(),
        gamma,
        residual: None,
    };
    series.validate()?;
    Ok(series)
}

/// Three-point derivative on a possibly nonuniform time grid.
fn centered_derivative(
    t0: f64,
    t1: f64,
    t2: f64,
    g0: Complex64,
    g1: Complex64,
    g2: Complex64,
) -> Complex64 {
    let h1 = t1 - t0;
    let h2 = t2 - t1;
    let w0 = -h2 / (h1 * (h1 + h2));
    let w1 = (h2 - h1) / (h1 * h2);
    let w2 = h1 / (h2 * (h1 + h2));
    w0 * g0 + w1 * g1 + w2 * g2
}

/// Computes the inhomogeneity of the asymptotic ODE,
/// `f = gamma' - i q(xi_v) xi_v t^{-1} gamma |gamma|^2`, with
/// `q(xi_v) = q1 xi_v^2` and the derivative by centered differences. The
/// output lives on the interior time samples.
pub fn ode_residual(series: &ProfileSeries, q1: f64) -> Result<ProfileSeries> {
    let m = series.times.len();
    if m < 3 {
        return Err(LabError::TooFewSamples { needed: 3, got: m });
    }
    let mut times = Vec::with_capacity(m - 2);
    let mut gamma = Vec::with_capacity(m - 2);
    let mut residual = Vec::with_capacity(m - 2);
    for i in 1..m - 1 {
        let t = series.times[i];
        let mut grow = Vec::with_capacity(series.velocities.len());
        let mut frow = Vec::with_capacity(series.velocities.len());
        for (j, &v) in series.velocities.iter().enumerate() {
            let g = series.gamma[i][j];
            let dg = centered_derivative(
                series.times[i - 1],
                t,
                series.times[i + 1],
                series.gamma[i - 1][j],
                g,
                series.gamma[i + 1][j],
            );
            let xi = xi_of_v(v);
            let coeff = q1 * xi * xi * xi; // q(xi_v) * xi_v with the even extension
            let cubic = Complex64::new(0.0, coeff / t) * g * g.norm_sqr();
            grow.push(g);
            frow.push(dg - cubic);
        }
        times.push(t);
        gamma.push(grow);
        residual.push(frow);
    }
    Ok(ProfileSeries {
        lambda: series.lambda,
        times,
        velocities: series.velocities.clone(),
        gamma,
        residual: Some(residual),
    })
}

/// Modified-scattering fit over a time window, per velocity.
#[derive(Clone, Debug)]
pub struct ScatterFit {
    pub window: (f64, f64),
    pub velocities: Vec<f64>,
    /// `|W(v)|`, the window mean of `|gamma|`.
    pub amplitude: Vec<f64>,
    /// `arg W(v)`, the window mean of the log-detrended phase.
    pub phase: Vec<f64>,
    /// RMS deviation of the detrended phase plus RMS deviation of `|gamma|`.
    pub residual: Vec<f64>,
    /// Per-velocity flag: consecutive detrended phases jumped by more than pi.
    pub unwrap_failed: Vec<bool>,
}

impl ScatterFit {
    pub const CSV_HEADER: &'static str = "v,amp_w,arg_w,residual,unwrap_failed";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for j in 0..self.velocities.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.velocities[j],
                self.amplitude[j],
                self.phase[j],
                self.residual[j],
                self.unwrap_failed[j]
            ));
        }
        out
    }
}

/// Fits `gamma(t, v) ~ W(v) e^{i q(xi_v) xi_v |W|^2 log t}` over the window:
/// amplitude from the mean modulus, phase from the mean of the detrended,
/// unwrapped argument.
pub fn fit_scattering(
    series: &ProfileSeries,
    q1: f64,
    window: (f64, f64),
) -> Result<ScatterFit> {
    let (lo, hi) = window;
    let idx: Vec<usize> = series
        .times
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= lo && t <= hi)
        .map(|(i, _)| i)
        .collect();
    if idx.len() < 5 {
        return Err(LabError::BadFitWindow {
            lo,
            hi,
            reason: format!("only {} samples inside; need at least 5", idx.len()),
        });
    }
    let nv = series.velocities.len();
    let mut amplitude = Vec::with_capacity(nv);
    let mut phase = Vec::with_capacity(nv);
    let mut residual = Vec::with_capacity(nv);
    let mut unwrap_failed = Vec::with_capacity(nv);
    for (j, &v) in series.velocities.iter().enumerate() {
        let samples: Vec<(f64, Complex64)> =
            idx.iter().map(|&i| (series.times[i], series.gamma[i][j])).collect();
        let amp = samples.iter().map(|(_, g)| g.norm()).sum::<f64>() / samples.len() as f64;
        let xi = xi_of_v(v);
        let coeff = q1 * xi * xi * xi * amp * amp;

        // unwrap the raw argument, then remove the logarithmic phase drift
        let mut unwrapped = Vec::with_capacity(samples.len());
        let mut prev = samples[0].1.arg();
        let mut offset = 0.0;
        unwrapped.push(prev);
        for (_, g) in &samples[1..] {
            let raw = g.arg();
            let mut delta = raw - prev;
            while delta > std::f64::consts::PI {
                delta -= 2.0 * std::f64::consts::PI;
            }
            while delta < -std::f64::consts::PI {
                delta += 2.0 * std::f64::consts::PI;
            }
            offset += delta - (raw - prev);
            unwrapped.push(raw + offset);
            prev = raw;
        }
        let detrended: Vec<f64> = samples
            .iter()
            .zip(&unwrapped)
            .map(|((t, _), th)| th - coeff * t.ln())
            .collect();
        let failed = detrended
            .windows(2)
            .any(|w| (w[1] - w[0]).abs() > std::f64::consts::PI);
        let mean_phase = detrended.iter().sum::<f64>() / detrended.len() as f64;
        let phase_rms = (detrended
            .iter()
            .map(|th| (th - mean_phase) * (th - mean_phase))
            .sum::<f64>()
            / detrended.len() as f64)
            .sqrt();
        let amp_rms = (samples
            .iter()
            .map(|(_, g)| (g.norm() - amp) * (g.norm() - amp))
            .sum::<f64>()
            / samples.len() as f64)
            .sqrt();
        amplitude.push(amp);
        phase.push(mean_phase);
        residual.push(phase_rms + amp_rms);
        unwrap_failed.push(failed);
    }
    Ok(ScatterFit {
        window,
        velocities: series.velocities.clone(),
        amplitude,
        phase,
        residual,
        unwrap_failed,
    })
}

/// Least-squares slope of `log |f|` against `log t` over the series' time
/// range; used to verify decay rates.
pub fn log_log_slope(times: &[f64], values: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&t, &v)| (t.ln(), v.ln()))
        .collect();
    let n = pairs.len() as f64;
    let sx: f64 = pairs.iter().map(|(x, _)| x).sum();
    let sy: f64 = pairs.iter().map(|(_, y)| y).sum();
    let sxx: f64 = pairs.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = pairs.iter().map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
