//! M-dependent paraproduct quantization, the trilinear frequency splitting of
//! the nonlocal form Q, the coefficient functions psi and J, and the
//! normal-form variables.
//!
//! The quantization is the exact double sum over grid frequencies
//!
//! ```text
//! (T_a u)^(xi) = P_{>M}(xi) sum_eta chi((xi-eta)^2 / (M^2 + (xi+eta)^2))
//!                  a^(xi - eta) P_{>M}(eta) u^(eta)
//! ```
//!
//! with the mean of `a` handled as plain multiplication, `T_a = mean(a) Id +
//! quantized(a - mean(a))`, so that `T_1 = Id` and the modified energy
//! reduces to the L2 norm at phi = 0. Exactness of the trichotomy
//! `a u = T_a u + T_u a + Pi(a, u)` and self-adjointness of `T_a` for real
//! `a` are worth the O(n^2) kernel at the grid sizes used here.

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::nonlocal::{self, QuadratureMesh};
use crate::spectral::{smooth_step, Field, Grid1D};

/// Admissible headroom below the coefficient singularity: inputs must keep
/// `max F(phi_x) <= 1 - SMALL_DATA_MARGIN`, otherwise the small-data regime
/// (and with it every coercivity statement) is gone.
pub const SMALL_DATA_MARGIN: f64 = 0.05;

/// The exact O(n^2) quantization is priced for verification grids only.
pub const MAX_PARAPRODUCT_GRID: usize = 4096;

/// Frequency threshold M and the fixed cutoff profile.
#[derive(Clone, Copy, Debug)]
pub struct ParaParams {
    m: f64,
}

impl ParaParams {
    pub fn new(m: f64) -> Result<ParaParams> {
        if !(m.is_finite() && m > 0.0) {
            return Err(LabError::InvalidConfig(format!(
                "paraproduct threshold M = {m} must be positive"
            )));
        }
        Ok(ParaParams { m })
    }

    /// Default threshold `M = 4 * 2pi/L`.
    pub fn for_grid(grid: &Grid1D) -> ParaParams {
        ParaParams {
            m: 4.0 * grid.fundamental(),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.m
    }

    /// Even cutoff profile: 1 on [0, 1/20], 0 beyond 1/10, smooth and
    /// monotone on the transition.
    pub fn cutoff_chi(r: f64) -> f64 {
        let r = r.abs();
        1.0 - smooth_step((r - 0.05) / 0.05)
    }

    /// The two-argument cutoff `chi(|theta1|^2 / (M^2 + |theta2|^2))`.
    pub fn chi_tilde(&self, theta1: f64, theta2: f64) -> f64 {
        let num = theta1 * theta1;
        let den = self.m * self.m + theta2 * theta2;
        if 20.0 * num <= den {
            1.0
        } else if 10.0 * num >= den {
            0.0
        } else {
            Self::cutoff_chi(num / den)
        }
    }

    /// Smooth high-pass `P_{>M}`: 0 below M, 1 above 2M.
    pub fn high_pass(&self, xi: f64) -> f64 {
        smooth_step((xi.abs() - self.m) / self.m)
    }
}

/// Paraproduct `T_a u` with the low-high quantization above.
pub fn para_product(a: &Field, u: &Field, p: &ParaParams) -> Result<Field> {
    if a.grid() != u.grid() {
        return Err(LabError::GridMismatch);
    }
    let grid = a.grid().clone();
    let n = grid.n();
    if n > MAX_PARAPRODUCT_GRID {
        return Err(LabError::GridTooLargeForParaproduct {
            n,
            max: MAX_PARAPRODUCT_GRID,
        });
    }
    let half = (n / 2) as i64;
    let xi0 = grid.fundamental();
    let nf = n as f64;
    let a_mean = a.mean();

    // coefficient arrays indexed by signed mode s through idx = s + half
    let signed_to_fft = |s: i64| -> usize {
        if s >= 0 {
            s as usize
        } else {
            (n as i64 + s) as usize
        }
    };
    let mut ac = vec![Complex64::new(0.0, 0.0); n];
    let mut uc = vec![Complex64::new(0.0, 0.0); n];
    let mut pcut = vec![0.0f64; n];
    for s in -half..half {
        let i = (s + half) as usize;
        ac[i] = a.spectrum()[signed_to_fft(s)] / nf;
        uc[i] = u.spectrum()[signed_to_fft(s)] / nf;
        pcut[i] = p.high_pass(s as f64 * xi0);
    }
    ac[half as usize] = Complex64::new(0.0, 0.0); // mean handled separately

    let mut a_band: i64 = 0;
    for s in -half..half {
        if ac[(s + half) as usize].norm_sqr() > 0.0 {
            a_band = a_band.max(s.abs());
        }
    }

    let mut out_c = vec![Complex64::new(0.0, 0.0); n];
    for ps in (-half + 1)..half {
        let pi = (ps + half) as usize;
        let mut acc = a_mean * uc[pi];
        let p_out = pcut[pi];
        if p_out > 0.0 && a_band > 0 {
            let xi_p = ps as f64 * xi0;
            let q_lo = (-half + 1).max(ps - a_band);
            let q_hi = (half - 1).min(ps + a_band);
            let mut sum = Complex64::new(0.0, 0.0);
            for qs in q_lo..=q_hi {
                let qi = (qs + half) as usize;
                let p_in = pcut[qi];
                if p_in == 0.0 {
                    continue;
                }
                let coef = ac[(ps - qs + half) as usize];
                if coef.norm_sqr() == 0.0 {
                    continue;
                }
                let xi_q = qs as f64 * xi0;
                let cut = p.chi_tilde(xi_p - xi_q, xi_p + xi_q);
                if cut > 0.0 {
                    sum += cut * p_in * coef * uc[qi];
                }
            }
            acc += p_out * sum;
        }
        out_c[pi] = acc;
    }

    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for s in -half..half {
        spectrum[signed_to_fft(s)] = out_c[(s + half) as usize] * nf;
    }
    spectrum[n / 2] = Complex64::new(0.0, 0.0);
    Ok(Field::from_spectrum_unchecked(&grid, spectrum))
}

/// Balanced remainder `Pi(a, b) := a b - T_a b - T_b a`, making the
/// trichotomy `a b = T_a b + T_b a + Pi(a, b)` exact by construction.
pub fn balanced_pi(a: &Field, b: &Field, p: &ParaParams) -> Result<Field> {
    let prod = a.pointwise_mul(b);
    let t_ab = para_product(a, b, p)?;
    let t_ba = para_product(b, a, p)?;
    Ok(prod.sub(&t_ab).sub(&t_ba))
}

/// Per-node paraproduct trichotomy of `Q(phi, v)`, integrated in y:
/// returns `(Q_lh, Q_hl, Q_hh)` with `Q_lh + Q_hl + Q_hh = eval_q(phi, v)`
/// up to quadrature-consistent rounding.
pub fn decompose_q(
    phi: &Field,
    v: &Field,
    mesh: &QuadratureMesh,
    p: &ParaParams,
) -> Result<(Field, Field, Field)> {
    if phi.grid() != v.grid() {
        return Err(LabError::GridMismatch);
    }
    let grid = phi.grid().clone();
    mesh.validate_for_grid(&grid)?;
    let mut lh = Field::zeros(&grid);
    let mut hl = Field::zeros(&grid);
    let mut hh = Field::zeros(&grid);
    for &(y, w) in mesh.positive_nodes() {
        for ys in [y, -y] {
            let a = Field::from_values(
                &grid,
                nonlocal::dq(phi, ys)?
                    .values()
                    .iter()
                    .map(|&s| nonlocal::f_profile(s))
                    .collect(),
            );
            let b = nonlocal::dq_abs(v, ys)?;
            let t_ab = para_product(&a, &b, p)?;
            let t_ba = para_product(&b, &a, p)?;
            let prod = a.pointwise_mul(&b);
            lh = lh.add(&t_ab.scale(w));
            hl = hl.add(&t_ba.scale(w));
            hh = hh.add(&prod.sub(&t_ab).sub(&t_ba).scale(w));
        }
    }
    Ok((lh, hl, hh))
}

/// `psi = d_x^{-1} F(phi_x)` split into a mean-zero periodic part and the
/// linear slope (the box mean of `F(phi_x)`, which a periodic antiderivative
/// cannot absorb).
#[derive(Clone, Debug)]
pub struct PsiDecomp {
    periodic: Field,
    slope: f64,
}

impl PsiDecomp {
    pub fn new(periodic: Field, slope: f64) -> PsiDecomp {
        PsiDecomp { periodic, slope }
    }

    pub fn periodic(&self) -> &Field {
        &self.periodic
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    /// Reconstructs `d_x psi = F(phi_x)` pointwise.
    pub fn coefficient(&self) -> Field {
        let d = self.periodic.derivative();
        Field::from_values(
            self.periodic.grid(),
            d.values().iter().map(|&v| v + self.slope).collect(),
        )
    }
}

pub fn psi_of_phi(phi: &Field) -> PsiDecomp {
    let fx = phi.derivative();
    let f = Field::from_values(
        phi.grid(),
        fx.values().iter().map(|&s| nonlocal::f_profile(s)).collect(),
    );
    let (periodic, slope) = f.antiderivative();
    PsiDecomp { periodic, slope }
}

/// Largest value of `F(phi_x)`; errors when the small-data margin is gone.
pub fn check_small_data_margin(phi: &Field) -> Result<f64> {
    let fx = phi.derivative();
    let max_f = fx
        .values()
        .iter()
        .map(|&s| nonlocal::f_profile(s))
        .fold(0.0f64, f64::max);
    if max_f > 1.0 - SMALL_DATA_MARGIN {
        return Err(LabError::MarginViolated {
            measured: max_f,
            limit: 1.0 - SMALL_DATA_MARGIN,
        });
    }
    Ok(max_f)
}

/// Jacobian weight `J = (1 - d_x psi)^{-1} = (1 - F(phi_x))^{-1} >= 1`.
pub fn jacobian(psi: &PsiDecomp) -> Result<Field> {
    let f = psi.coefficient();
    let max_f = f.values().iter().cloned().fold(0.0f64, f64::max);
    if max_f > 1.0 - SMALL_DATA_MARGIN {
        return Err(LabError::MarginViolated {
            measured: max_f,
            limit: 1.0 - SMALL_DATA_MARGIN,
        });
    }
    Ok(Field::from_values(
        psi.periodic.grid(),
        f.values().iter().map(|&v| 1.0 / (1.0 - v)).collect(),
    ))
}

/// Normal-form variable for the linearized flow,
/// `v~ = v - d_x T_{T_J v} psi - d_x Pi(T_J v, psi)`.
///
/// Only the periodic part of psi enters the paraproducts; the linear slope
/// has no nonzero-frequency content, so its quantized contribution vanishes.
pub fn normal_form_linearized(v: &Field, phi: &Field, p: &ParaParams) -> Result<Field> {
    let psi = psi_of_phi(phi);
    let j = jacobian(&psi)?;
    let w = para_product(&j, v, p)?;
    let para_term = para_product(&w, psi.periodic(), p)?.derivative();
    let pi_term = balanced_pi(&w, psi.periodic(), p)?.derivative();
    Ok(v.sub(&para_term).sub(&pi_term))
}

/// Normal-form variable for the solution itself,
/// `phi~ = phi - Pi(psi, T_J d_x phi)`; the correction is cubic in the
/// amplitude since psi is already quadratic.
pub fn normal_form_nonlinear(phi: &Field, p: &ParaParams) -> Result<Field> {
    let psi = psi_of_phi(phi);
    let j = jacobian(&psi)?;
    let w = para_product(&j, &phi.derivative(), p)?;
    let pi_term = balanced_pi(psi.periodic(), &w, p)?;
    Ok(phi.sub(&pi_term))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlocal::{eval_omega_quad, eval_q, f_profile_prime};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(n: usize, l: f64) -> Grid1D {
        Grid1D::new(n, l).unwrap()
    }

    fn random_field(g: &Grid1D, seed: u64, kmax: i64, scale: f64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = g.n();
        let mut spec = vec![Complex64::new(0.0, 0.0); n];
        for m in 1..=kmax {
            let c = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                * (scale * n as f64 / m as f64);
            spec[m as usize] = c;
            spec[n - m as usize] = c.conj();
        }
        Field::from_spectrum(g, spec)
    }

    #[test]
    fn constant_symbol_acts_as_multiplication() {
        let g = grid(128, 2.0 * PI);
        let p = ParaParams::new(4.0).unwrap();
        let c = Field::from_fn(&g, |_| 1.75);
        let u = random_field(&g, 1, 40, 1.0);
        let out = para_product(&c, &u, &p).unwrap();
        assert!(out.sub(&u.scale(1.75)).norm_linf() <= 1e-12 * u.norm_linf());
    }

    #[test]
    fn low_high_cutoff_is_fully_open_for_separated_modes() {
        // a = cos(x), u = cos(32x), M = 4: the cutoff argument is ~1/1040,
        // far inside the chi = 1 region, and both P_{>M} gates are open at
        // |xi| = 31..33, so T_a u equals the plain product.
        let g = grid(128, 2.0 * PI);
        let p = ParaParams::new(4.0).unwrap();
        let a = Field::from_fn(&g, |x| x.cos());
        let u = Field::from_fn(&g, |x| (32.0 * x).cos());
        let out = para_product(&a, &u, &p).unwrap();
        let full = a.pointwise_mul(&u);
        assert!(out.sub(&full).norm_linf() <= 1e-8);
    }

    #[test]
    fn high_low_is_annihilated() {
        // u lives at |xi| = 1 < M = 4, so P_{>M} u = 0 and the quantized part
        // dies; a is mean-zero so the mean term is 0 too.
        let g = grid(128, 2.0 * PI);
        let p = ParaParams::new(4.0).unwrap();
        let a = Field::from_fn(&g, |x| (32.0 * x).cos());
        let u = Field::from_fn(&g, |x| x.cos());
        let out = para_product(&a, &u, &p).unwrap();
        assert!(out.norm_linf() <= 1e-8);
    }

    #[test]
    fn real_symbol_gives_self_adjoint_operator() {
        let g = grid(128, 2.0 * PI);
        let p = ParaParams::for_grid(&g);
        let a = random_field(&g, 2, 20, 0.5);
        let u = random_field(&g, 3, 50, 1.0);
        let w = random_field(&g, 4, 50, 1.0);
        let lhs = para_product(&a, &u, &p).unwrap().inner(&w);
        let rhs = u.inner(&para_product(&a, &w, &p).unwrap());
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10, epsilon = 1e-12);
    }

    #[test]
    fn trichotomy_is_exact_and_pi_symmetric() {
        let g = grid(128, 2.0 * PI);
        let p = ParaParams::for_grid(&g);
        let a = random_field(&g, 5, 20, 0.7);
        let b = random_field(&g, 6, 20, 0.9);
        let sum = para_product(&a, &b, &p)
            .unwrap()
            .add(&para_product(&b, &a, &p).unwrap())
            .add(&balanced_pi(&a, &b, &p).unwrap());
        let prod = a.pointwise_mul(&b);
        assert!(sum.sub(&prod).norm_linf() <= 1e-13 * prod.norm_linf().max(1e-300));

        let pi_ab = balanced_pi(&a, &b, &p).unwrap();
        let pi_ba = balanced_pi(&b, &a, &p).unwrap();
        assert!(pi_ab.sub(&pi_ba).norm_linf() == 0.0 || pi_ab.sub(&pi_ba).norm_linf() <= 1e-15);
    }

    #[test]
    fn pi_with_constant_symbol_vanishes_on_mean_zero_input() {
        let g = grid(128, 2.0 * PI);
        let p = ParaParams::for_grid(&g);
        let c = Field::from_fn(&g, |_| 2.3);
        let b = random_field(&g, 7, 30, 1.0); // mean-zero by construction
        assert!(b.mean().abs() <= 1e-13);
        let pi = balanced_pi(&c, &b, &p).unwrap();
        assert!(pi.norm_linf() <= 1e-10 * b.norm_linf());
    }

    #[test]
    fn comparable_frequencies_land_in_pi() {
        let g = grid(256, 2.0 * PI);
        let p = ParaParams::new(4.0).unwrap();
        let a = Field::from_fn(&g, |x| (16.0 * x).cos());
        let b = Field::from_fn(&g, |x| (17.0 * x).cos());
        let pi = balanced_pi(&a, &b, &p).unwrap();
        let prod = a.pointwise_mul(&b);
        assert!(
            pi.norm_l2() >= 0.9 * prod.norm_l2(),
            "Pi mass {} of {}",
            pi.norm_l2(),
            prod.norm_l2()
        );
    }

    #[test]
    fn decompose_q_zero_and_sum_identity() {
        let g = grid(128, 2.0 * PI);
        let p = ParaParams::for_grid(&g);
        let mesh = QuadratureMesh::for_grid(&g).unwrap();
        let zero = Field::zeros(&g);
        let v = random_field(&g, 8, 30, 0.5);
        let (lh, hl, hh) = decompose_q(&zero, &v, &mesh, &p).unwrap();
        assert!(lh.norm_linf() <= 1e-14);
        assert!(hl.norm_linf() <= 1e-14);
        assert!(hh.norm_linf() <= 1e-14);

        let phi = random_field(&g, 9, 10, 0.05);
        let (lh, hl, hh) = decompose_q(&phi, &v, &mesh, &p).unwrap();
        let total = lh.add(&hl).add(&hh);
        let direct = eval_q(&phi, &v, &mesh).unwrap();
        assert!(
            total.sub(&direct).norm_l2() <= 1e-8 * direct.norm_l2().max(1e-300),
            "trichotomy sum defect {}",
            total.sub(&direct).norm_l2() / direct.norm_l2()
        );
    }

    #[test]
    fn low_high_component_dominates_for_separated_data() {
        let g = grid(256, 2.0 * PI);
        let p = ParaParams::new(4.0).unwrap();
        let mesh = QuadratureMesh::for_grid(&g).unwrap();
        let phi = Field::from_fn(&g, |x| 0.2 * x.cos() + 0.1 * (2.0 * x).sin());
        let v = Field::from_fn(&g, |x| (32.0 * x).cos() + 0.5 * (40.0 * x).sin());
        let (lh, hl, hh) = decompose_q(&phi, &v, &mesh, &p).unwrap();
        let total_sq = lh.mass() + hl.mass() + hh.mass();
        assert!(
            lh.mass() >= 0.9 * total_sq,
            "lh fraction {}",
            lh.mass() / total_sq
        );
    }

    #[test]
    fn psi_decomposition_examples() {
        let g = grid(128, 2.0 * PI);
        // phi = 0
        let zero = Field::zeros(&g);
        let psi = psi_of_phi(&zero);
        assert!(psi.periodic().norm_linf() <= 1e-14);
        assert_eq!(psi.slope(), 0.0);
        let j = jacobian(&psi).unwrap();
        assert!(j.sub(&Field::from_fn(&g, |_| 1.0)).norm_linf() <= 1e-13);

        // spatially uniform coefficient enters through the slope channel
        let s0 = 0.4;
        let uniform = PsiDecomp::new(Field::zeros(&g), crate::nonlocal::f_profile(s0));
        let j = jacobian(&uniform).unwrap();
        let expect = 1.0 / (1.0 - crate::nonlocal::f_profile(s0));
        assert!(j.sub(&Field::from_fn(&g, |_| expect)).norm_linf() <= 1e-13);

        // reconstruction invariant: d_x psi0 + slope = F(phi_x), slope >= 0
        let phi = random_field(&g, 10, 10, 0.3);
        let psi = psi_of_phi(&phi);
        assert!(psi.slope() >= 0.0);
        let fx = phi.derivative();
        let expect = Field::from_values(
            &g,
            fx.values().iter().map(|&s| crate::nonlocal::f_profile(s)).collect(),
        );
        assert!(psi.coefficient().sub(&expect).norm_linf() <= 1e-10);
    }

    #[test]
    fn jacobian_expansion_is_fourth_order_beyond_coefficient() {
        // J - 1 - F(phi_x) = F^2 + F^3 + ... = O(A^4) since F = O(A^2)
        let g = grid(128, 2.0 * PI);
        let base = Field::from_fn(&g, |x| x.cos() + 0.3 * (2.0 * x).sin());
        let resid = |amp: f64| -> f64 {
            let phi = base.scale(amp);
            let psi = psi_of_phi(&phi);
            let j = jacobian(&psi).unwrap();
            let f = psi.coefficient();
            Field::from_values(
                &g,
                j.values()
                    .iter()
                    .zip(f.values())
                    .map(|(jv, fv)| jv - 1.0 - fv)
                    .collect(),
            )
            .norm_linf()
        };
        let r1 = resid(0.2);
        let r2 = resid(0.1);
        let ratio = r1 / r2;
        assert!(
            (12.0..=20.0).contains(&ratio),
            "expected ~16x drop per halving, got {ratio}"
        );
    }

    #[test]
    fn margin_violation_is_rejected_with_measurement() {
        let g = grid(128, 2.0 * PI);
        let phi = Field::from_fn(&g, |x| 30.0 * x.sin());
        match check_small_data_margin(&phi) {
            Err(LabError::MarginViolated { measured, limit }) => {
                assert!(measured > limit);
            }
            other => panic!("expected margin violation, got {other:?}"),
        }
        let psi = psi_of_phi(&phi);
        assert!(jacobian(&psi).is_err());
    }

    #[test]
    fn normal_form_linearized_properties() {
        let g = grid(128, 2.0 * PI);
        let p = ParaParams::for_grid(&g);
        let v = random_field(&g, 11, 40, 1.0);

        // phi = 0 is the identity
        let zero = Field::zeros(&g);
        let same = normal_form_linearized(&v, &zero, &p).unwrap();
        assert!(same.sub(&v).norm_linf() <= 1e-13 * v.norm_linf());

        // linearity in v
        let v2 = random_field(&g, 12, 40, 1.0);
        let phi = random_field(&g, 13, 8, 0.1);
        let alpha = 1.9;
        let lhs = normal_form_linearized(&v.scale(alpha).add(&v2), &phi, &p).unwrap();
        let rhs = normal_form_linearized(&v, &phi, &p)
            .unwrap()
            .scale(alpha)
            .add(&normal_form_linearized(&v2, &phi, &p).unwrap());
        assert!(lhs.sub(&rhs).norm_l2() <= 1e-10 * rhs.norm_l2());

        // correction is quadratic in the amplitude of phi: halving the
        // amplitude quarters it, within 10%
        let corr = |amp: f64| {
            let phi_a = phi.scale(amp / 0.1);
            normal_form_linearized(&v, &phi_a, &p)
                .unwrap()
                .sub(&v)
                .norm_l2()
        };
        let ratio = corr(0.1) / corr(0.05);
        assert!(
            (ratio / 4.0 - 1.0).abs() <= 0.10,
            "quadratic correction ratio {ratio}"
        );
    }

    #[test]
    fn normal_form_nonlinear_properties() {
        let g = grid(128, 2.0 * PI);
        let p = ParaParams::for_grid(&g);
        let zero = Field::zeros(&g);
        assert!(normal_form_nonlinear(&zero, &p).unwrap().norm_linf() <= 1e-14);

        // single low mode: correction is O(eps^3)
        let base = Field::from_fn(&g, |x| x.cos());
        let corr = |eps: f64| {
            let phi = base.scale(eps);
            normal_form_nonlinear(&phi, &p).unwrap().sub(&phi).norm_l2()
        };
        let ratio = corr(0.2) / corr(0.1);
        assert!(
            (6.8..=9.4).contains(&ratio),
            "cubic correction ratio {ratio}"
        );

        // closure under the implemented products: for dealiased input the
        // transform is free of aliasing wrap, so recomputing on a refined
        // grid reproduces the shared coefficients
        let phi = random_field(&g, 14, 8, 0.05).dealias(0.25);
        let out = normal_form_nonlinear(&phi, &p).unwrap();
        let g2 = grid(256, 2.0 * PI);
        let p2 = ParaParams::new(p.threshold()).unwrap();
        let phi_fine = {
            let mut spec = vec![Complex64::new(0.0, 0.0); g2.n()];
            for m in 1..(g.n() / 2) as i64 {
                spec[m as usize] = 2.0 * phi.spectrum()[m as usize];
                spec[g2.n() - m as usize] = 2.0 * phi.spectrum()[g.n() - m as usize];
            }
            Field::from_spectrum(&g2, spec)
        };
        let out_fine = normal_form_nonlinear(&phi_fine, &p2).unwrap();
        let mut defect = 0.0f64;
        let mut scale = 0.0f64;
        for m in 1..(g.n() / 2) as i64 {
            let coarse = out.spectrum()[m as usize] / g.n() as f64;
            let fine = out_fine.spectrum()[m as usize] / g2.n() as f64;
            defect += (coarse - fine).norm_sqr();
            scale += fine.norm_sqr();
        }
        assert!(
            defect.sqrt() <= 1e-6 * scale.sqrt(),
            "aliasing contamination {} of {}",
            defect.sqrt(),
            scale.sqrt()
        );
    }

    #[test]
    fn moser_remainder_is_superlinear() {
        // R(v) = F(v) - T_{F'(v)} v shrinks at least 3.5x when v is halved
        let g = grid(256, 2.0 * PI);
        let p = ParaParams::for_grid(&g);
        let base = random_field(&g, 15, 20, 1.0);
        let remainder = |amp: f64| {
            let v = base.scale(amp / base.norm_linf());
            let fv = Field::from_values(
                &g,
                v.values().iter().map(|&s| crate::nonlocal::f_profile(s)).collect(),
            );
            let fpv = Field::from_values(
                &g,
                v.values().iter().map(|&s| f_profile_prime(s)).collect(),
            );
            fv.sub(&para_product(&fpv, &v, &p).unwrap()).norm_l2()
        };
        let drop = remainder(0.5) / remainder(0.25);
        assert!(drop >= 3.5, "Moser remainder dropped only {drop}x");
    }

    #[test]
    fn para_commutator_shrinks_with_input_frequency() {
        // the commutator lives on the cutoff transition, which a single
        // input mode never probes; symbols with polynomial spectral tails
        // (|f^(m)| ~ m^{-2}, still C^1 smooth) keep it alive at all scales
        let g = grid(512, 2.0 * PI);
        let p = ParaParams::for_grid(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut tail_field = |seed_scale: f64| {
            let phases: Vec<f64> = (0..=128).map(|_| rng.gen::<f64>() * 6.28).collect();
            Field::from_values(
                &g,
                g.xs_centered()
                    .iter()
                    .map(|&x| {
                        (1..=128)
                            .map(|m| {
                                (m as f64 * x * seed_scale + phases[m]).cos()
                                    / (m as f64 * m as f64)
                            })
                            .sum::<f64>()
                    })
                    .collect(),
            )
        };
        let f = tail_field(1.0);
        let gfun = tail_field(1.0);
        let action = |k: f64| {
            let u = Field::from_fn(&g, |x| (k * x).cos());
            let fg = para_product(&f, &para_product(&gfun, &u, &p).unwrap(), &p).unwrap();
            let gf = para_product(&gfun, &para_product(&f, &u, &p).unwrap(), &p).unwrap();
            fg.sub(&gf).norm_l2() / u.norm_l2()
        };
        let a16 = action(16.0);
        let a32 = action(32.0);
        let a64 = action(64.0);
        assert!(
            a16 > a32 && a32 > a64,
            "commutator action not decaying: {a16} {a32} {a64}"
        );
    }

    #[test]
    fn null_structure_residual_is_quadratic_in_amplitude() {
        // Q(phi, v) - Omega(psi(phi), v) under an amplitude sweep of phi:
        // the residual scales as A^2 (both terms do as well; the structural
        // gain lives in the derivative balance, and shows up numerically as
        // the residual sitting well below either term).
        let g = grid(256, 40.0);
        let mesh = QuadratureMesh::for_grid(&g).unwrap();
        let base = Field::from_fn(&g, |x| (-x * x / 64.0).exp());
        let v = Field::from_fn(&g, |x| (-(x - 2.0) * (x - 2.0) / 4.0).exp() * (2.5 * x).cos());
        let parts = |amp: f64| {
            let phi = base.scale(amp);
            let q = eval_q(&phi, &v, &mesh).unwrap();
            let om = eval_omega_quad(&psi_of_phi(&phi), &v, &mesh).unwrap();
            (q.sub(&om).norm_l2(), q.norm_l2(), om.norm_l2())
        };
        let (r1, q1, o1) = parts(0.4);
        let (r2, _, _) = parts(0.2);
        let ratio = r1 / r2;
        assert!(
            (3.2..=4.8).contains(&ratio),
            "residual amplitude ratio {ratio} not ~4"
        );
        assert!(r1 <= 0.5 * q1.max(o1), "residual {} vs terms {} {}", r1, q1, o1);
    }
}
