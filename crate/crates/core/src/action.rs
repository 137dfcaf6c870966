//! Discretized action functionals on spacetime grids (periodic imaginary
//! time) and a numeric functional-derivative oracle.
//!
//! The oracle is the anti-drift device of the whole crate: solver forces and
//! published variational kernels are accepted only when they agree with central
//! finite differences of the discretized actions in function space.  The
//! imaginary-time term `i n_H dtau theta_H` makes the Euclidean action
//! complex; stationarity is asserted on both parts.

use crate::background::Background;
use crate::error::{CoreError, Result};
use crate::grid::{gradient, tau_derivative, ScalarField, SpacetimeGrid};
use crate::{Cplx, Real};
use std::sync::Arc;

/// High-sector polar fields on a spacetime grid with periodic imaginary time.
#[derive(Debug, Clone)]
pub struct FieldConfiguration<R> {
    pub n_h: ScalarField<R>,
    pub theta_h: ScalarField<R>,
}

impl<R: Real> FieldConfiguration<R> {
    pub fn new(n_h: ScalarField<R>, theta_h: ScalarField<R>) -> Result<Self> {
        if n_h.grid().tau().is_none() {
            return Err(CoreError::InvalidParameter {
                name: "grid",
                reason: "field configurations live on a grid with an imaginary-time axis".into(),
            });
        }
        if n_h.grid().shape() != theta_h.grid().shape() {
            return Err(CoreError::GridMismatch {
                context: "field configuration",
            });
        }
        if n_h.values().iter().any(|&v| v < R::zero()) {
            return Err(CoreError::InvalidParameter {
                name: "n_h",
                reason: "density must be nonnegative".into(),
            });
        }
        Ok(Self { n_h, theta_h })
    }

    pub fn uniform(grid: Arc<SpacetimeGrid<R>>, n: R, theta: R) -> Result<Self> {
        Self::new(
            ScalarField::constant(grid.clone(), n),
            ScalarField::constant(grid, theta),
        )
    }

    pub fn grid(&self) -> &Arc<SpacetimeGrid<R>> {
        self.n_h.grid()
    }

    fn pack(&self) -> Vec<R> {
        let mut out = self.n_h.values().to_vec();
        out.extend_from_slice(self.theta_h.values());
        out
    }

    fn unpack(grid: &Arc<SpacetimeGrid<R>>, flat: &[R]) -> Self {
        let n = grid.cell_count();
        // internal probe path: no nonnegativity check, perturbations may dip
        Self {
            n_h: ScalarField::new(grid.clone(), flat[..n].to_vec(), None).unwrap(),
            theta_h: ScalarField::new(grid.clone(), flat[n..].to_vec(), None).unwrap(),
        }
    }
}

/// Perturbation direction in function space; absent parts are zero.
#[derive(Debug, Clone, Default)]
pub struct Direction<R> {
    pub n: Option<Vec<R>>,
    pub theta: Option<Vec<R>>,
}

impl<R: Real> Direction<R> {
    pub fn density(d: Vec<R>) -> Self {
        Self {
            n: Some(d),
            theta: None,
        }
    }

    pub fn phase(d: Vec<R>) -> Self {
        Self {
            n: None,
            theta: Some(d),
        }
    }

    fn pack(&self, cells: usize) -> Vec<R> {
        let mut out = vec![R::zero(); 2 * cells];
        if let Some(d) = &self.n {
            out[..cells].copy_from_slice(d);
        }
        if let Some(d) = &self.theta {
            out[cells..].copy_from_slice(d);
        }
        out
    }
}

fn compatible<R: Real>(cfg: &FieldConfiguration<R>, bg: &Background<R>) -> Result<()> {
    if cfg.grid().shape() != bg.grid.shape() {
        return Err(CoreError::GridMismatch {
            context: "configuration and background",
        });
    }
    Ok(())
}

/// High-sector Euclidean action with every published term; the quantum-pressure
/// term is included or dropped by flag (the long-wavelength analysis drops
/// it).
pub fn action_sh<R: Real>(
    cfg: &FieldConfiguration<R>,
    bg: &Background<R>,
    include_quantum_pressure: bool,
) -> Result<Cplx<R>> {
    compatible(cfg, bg)?;
    let grid = cfg.grid();
    let ns = grid.spatial_count();
    let cells = grid.cell_count();
    let measure = grid.tau_spacing().unwrap() / bg.hbar * grid.cell_volume();

    let dtau_theta = tau_derivative(&cfg.theta_h)?;
    let grad_theta = gradient(&cfg.theta_h)?;
    let grad_n = if include_quantum_pressure {
        Some(gradient(&cfg.n_h)?)
    } else {
        None
    };

    let two = R::of(2.0);
    let mut re = R::zero();
    let mut im = R::zero();
    for i in 0..cells {
        let s = i % ns;
        if bg.is_masked(s) {
            continue;
        }
        let w = grid.quadrature_weight(s) * measure;
        let n = cfg.n_h.values()[i];
        let theta = cfg.theta_h.values()[i];
        let n_l = bg.n_l0.values()[s];
        let theta_l = bg.theta_l0.values()[s];

        // i n_H dtau theta_H
        im += n * dtau_theta.values()[i] * w;

        let mut density = (bg.m * bg.v_ext.values()[s] - bg.mu + two * bg.v0 * n_l) * n;

        if let Some(gn) = &grad_n {
            if n > R::of(1e-300) {
                density += bg.hbar * bg.hbar / (R::of(8.0) * bg.m) * gn.norm_sq_at(i) / n;
            }
        }

        density += n * grad_theta.norm_sq_at(i) / (two * bg.m);

        let mut v_dot_grad = R::zero();
        let mut v_sq = R::zero();
        for c in 0..grid.spatial_dims() {
            let vc = bg.v.get(c, s);
            v_dot_grad += vc * grad_theta.get(c, i);
            v_sq += vc * vc;
        }
        density += -n * v_dot_grad + bg.m / two * n * v_sq;

        density += bg.v0 * n * n_l * (two * (theta - theta_l) / bg.hbar).cos();
        density += bg.v0 / two * n * n;

        re += density * w;
    }
    Ok(Cplx::new(re, im))
}

/// Low-sector energy functional of a (generally complex) pinned field.
pub fn action_sl0<R: Real>(
    psi_re: &ScalarField<R>,
    psi_im: &ScalarField<R>,
    bg: &Background<R>,
) -> Result<Cplx<R>> {
    if psi_re.grid().tau().is_none() {
        return Err(CoreError::InvalidParameter {
            name: "grid",
            reason: "the pinned-field action lives on a grid with an imaginary-time axis".into(),
        });
    }
    if psi_re.grid().shape() != bg.grid.shape() {
        return Err(CoreError::GridMismatch {
            context: "pinned field and background",
        });
    }
    let grid = psi_re.grid();
    let ns = grid.spatial_count();
    let cells = grid.cell_count();
    let measure = grid.tau_spacing().unwrap() / bg.hbar * grid.cell_volume();

    let dtau_re = tau_derivative(psi_re)?;
    let dtau_im = tau_derivative(psi_im)?;
    let grad_re = gradient(psi_re)?;
    let grad_im = gradient(psi_im)?;

    let two = R::of(2.0);
    let mut re = R::zero();
    let mut im = R::zero();
    for i in 0..cells {
        let s = i % ns;
        if bg.is_masked(s) {
            continue;
        }
        let w = grid.quadrature_weight(s) * measure;
        let (pr, pi) = (psi_re.values()[i], psi_im.values()[i]);
        let mag_sq = pr * pr + pi * pi;

        // conj(psi) hbar dtau psi
        re += bg.hbar * (pr * dtau_re.values()[i] + pi * dtau_im.values()[i]) * w;
        im += bg.hbar * (pr * dtau_im.values()[i] - pi * dtau_re.values()[i]) * w;

        // (hbar^2/2m) |D psi|^2 with D = grad - i (m/hbar) v
        let mut grad_sq = R::zero();
        let mut v_im_current = R::zero();
        let mut v_sq = R::zero();
        for c in 0..grid.spatial_dims() {
            let vc = bg.v.get(c, s);
            grad_sq += grad_re.get(c, i) * grad_re.get(c, i) + grad_im.get(c, i) * grad_im.get(c, i);
            v_im_current += vc * (pr * grad_im.get(c, i) - pi * grad_re.get(c, i));
            v_sq += vc * vc;
        }
        let kinetic = bg.hbar * bg.hbar / (two * bg.m) * grad_sq
            - bg.hbar * v_im_current
            + bg.m / two * v_sq * mag_sq;
        re += kinetic * w;

        re += ((bg.m * bg.v_ext.values()[s] - bg.mu) * mag_sq + bg.v0 / two * mag_sq * mag_sq) * w;
    }
    Ok(Cplx::new(re, im))
}

/// Tunneling action of two planar reservoirs in polar variables:
/// `t_perp sqrt(n_L n_R) cos((theta_L - theta_R)/hbar)`.
pub fn action_tunneling<R: Real>(
    theta_l: &ScalarField<R>,
    theta_r: &ScalarField<R>,
    n_l: &ScalarField<R>,
    n_r: &ScalarField<R>,
    t_perp: R,
    hbar: R,
) -> Result<R> {
    let grid = theta_l.grid();
    if grid.spatial_dims() != 2 {
        return Err(CoreError::Dimension {
            got: grid.spatial_dims(),
            reason: "tunnel-coupled reservoirs are planar",
        });
    }
    if grid.tau().is_none() {
        return Err(CoreError::InvalidParameter {
            name: "grid",
            reason: "the tunneling action lives on a grid with an imaginary-time axis".into(),
        });
    }
    for f in [theta_r, n_l, n_r] {
        if f.grid().shape() != grid.shape() || f.grid().tau().is_none() {
            return Err(CoreError::GridMismatch { context: "tunneling planes" });
        }
    }
    let ns = grid.spatial_count();
    let measure = grid.tau_spacing().unwrap() / hbar * grid.cell_volume();
    let mut acc = R::zero();
    for i in 0..grid.cell_count() {
        let w = grid.quadrature_weight(i % ns) * measure;
        let gamma = (theta_l.values()[i] - theta_r.values()[i]) / hbar;
        acc += t_perp * (n_l.values()[i] * n_r.values()[i]).sqrt() * gamma.cos() * w;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Numeric functional derivatives
// ---------------------------------------------------------------------------

fn norm_inf<R: Real>(x: &[R]) -> R {
    x.iter().map(|v| v.abs()).fold(R::zero(), |a, b| a.max(b))
}

/// Richardson-confirmed central difference of `f` along `dir` at `base`.
/// Step `eps = max(1e-6, 1e-7 ||base||_inf)`, evaluated at `eps`, `eps/2`,
/// `eps/4` and extrapolated.
pub fn numeric_gradient<R, F>(f: F, base: &[R], dir: &[R]) -> Result<Cplx<R>>
where
    R: Real,
    F: Fn(&[R]) -> Result<Cplx<R>>,
{
    let eps0 = R::of(1e-6).max(R::of(1e-7) * norm_inf(base));
    let probe = |eps: R| -> Result<Cplx<R>> {
        let plus: Vec<R> = base.iter().zip(dir).map(|(&b, &d)| b + eps * d).collect();
        let minus: Vec<R> = base.iter().zip(dir).map(|(&b, &d)| b - eps * d).collect();
        let sp = f(&plus)?;
        let sm = f(&minus)?;
        if !sp.re.is_finite() || !sp.im.is_finite() || !sm.re.is_finite() || !sm.im.is_finite() {
            return Err(CoreError::NonFiniteAction);
        }
        Ok((sp - sm) / Cplx::new(R::of(2.0) * eps, R::zero()))
    };
    let g1 = probe(eps0)?;
    let g2 = probe(eps0 / R::of(2.0))?;
    let g3 = probe(eps0 / R::of(4.0))?;
    let four = Cplx::new(R::of(4.0), R::zero());
    let third = Cplx::new(R::of(3.0), R::zero());
    let r2 = (g3 * four - g2) / third;
    let _r1 = (g2 * four - g1) / third;
    Ok(r2)
}

/// Mixed second difference `d^2/(de1 de2) f(base + e1 d1 + e2 d2)`,
/// Richardson-refined.
pub fn numeric_hessian_apply<R, F>(f: F, base: &[R], d1: &[R], d2: &[R]) -> Result<Cplx<R>>
where
    R: Real,
    F: Fn(&[R]) -> Result<Cplx<R>>,
{
    // second differences cancel ~|S| eps^-2 of roundoff; a coarse step plus
    // Richardson keeps both truncation and cancellation error small
    let eps0 = R::of(1e-2).max(R::of(1e-3) * norm_inf(base));
    let probe = |eps: R| -> Result<Cplx<R>> {
        let mut acc = Cplx::new(R::zero(), R::zero());
        for (s1, s2) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            let sign = R::of(s1 * s2);
            let x: Vec<R> = base
                .iter()
                .zip(d1)
                .zip(d2)
                .map(|((&b, &a), &c)| b + eps * (R::of(s1) * a + R::of(s2) * c))
                .collect();
            let v = f(&x)?;
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(CoreError::NonFiniteAction);
            }
            acc = acc + v * Cplx::new(sign, R::zero());
        }
        Ok(acc / Cplx::new(R::of(4.0) * eps * eps, R::zero()))
    };
    let g1 = probe(eps0)?;
    let g2 = probe(eps0 / R::of(2.0))?;
    let four = Cplx::new(R::of(4.0), R::zero());
    let third = Cplx::new(R::of(3.0), R::zero());
    Ok((g2 * four - g1) / third)
}

/// Mixed third difference `d^3/(de1 de2 de3) f(...)`, Richardson-refined.
pub fn numeric_third_apply<R, F>(
    f: F,
    base: &[R],
    d1: &[R],
    d2: &[R],
    d3: &[R],
) -> Result<Cplx<R>>
where
    R: Real,
    F: Fn(&[R]) -> Result<Cplx<R>>,
{
    let eps0 = R::of(2e-2);
    let probe = |eps: R| -> Result<Cplx<R>> {
        let mut acc = Cplx::new(R::zero(), R::zero());
        for s1 in [1.0, -1.0] {
            for s2 in [1.0, -1.0] {
                for s3 in [1.0, -1.0] {
                    let sign = R::of(s1 * s2 * s3);
                    let x: Vec<R> = (0..base.len())
                        .map(|i| {
                            base[i]
                                + eps * (R::of(s1) * d1[i] + R::of(s2) * d2[i] + R::of(s3) * d3[i])
                        })
                        .collect();
                    let v = f(&x)?;
                    if !v.re.is_finite() || !v.im.is_finite() {
                        return Err(CoreError::NonFiniteAction);
                    }
                    acc = acc + v * Cplx::new(sign, R::zero());
                }
            }
        }
        Ok(acc / Cplx::new(R::of(8.0) * eps * eps * eps, R::zero()))
    };
    let g1 = probe(eps0)?;
    let g2 = probe(eps0 / R::of(2.0))?;
    let four = Cplx::new(R::of(4.0), R::zero());
    let third = Cplx::new(R::of(3.0), R::zero());
    Ok((g2 * four - g1) / third)
}

/// Mixed fourth difference along a single repeated direction.
pub fn numeric_fourth_diagonal<R, F>(f: F, base: &[R], d: &[R]) -> Result<Cplx<R>>
where
    R: Real,
    F: Fn(&[R]) -> Result<Cplx<R>>,
{
    // five-point fourth derivative along t -> f(base + t d)
    let eps = R::of(5e-2);
    let eval = |t: R| -> Result<Cplx<R>> {
        let x: Vec<R> = base.iter().zip(d).map(|(&b, &a)| b + t * a).collect();
        f(&x)
    };
    let c0 = eval(R::zero())?;
    let p1 = eval(eps)?;
    let m1 = eval(-eps)?;
    let p2 = eval(R::of(2.0) * eps)?;
    let m2 = eval(-(R::of(2.0) * eps))?;
    let six = Cplx::new(R::of(6.0), R::zero());
    let four = Cplx::new(R::of(4.0), R::zero());
    let num = p2 + m2 - (p1 + m1) * four + c0 * six;
    Ok(num / Cplx::new(eps * eps * eps * eps, R::zero()))
}

/// Gradient of the high-sector action in a function-space direction.
pub fn functional_gradient<R: Real>(
    cfg: &FieldConfiguration<R>,
    bg: &Background<R>,
    dir: &Direction<R>,
    include_quantum_pressure: bool,
) -> Result<Cplx<R>> {
    let grid = cfg.grid().clone();
    let cells = grid.cell_count();
    let base = cfg.pack();
    let d = dir.pack(cells);
    numeric_gradient(
        |flat| action_sh(&FieldConfiguration::unpack(&grid, flat), bg, include_quantum_pressure),
        &base,
        &d,
    )
}

/// Bilinear Hessian probe of the high-sector action.
pub fn functional_hessian_apply<R: Real>(
    cfg: &FieldConfiguration<R>,
    bg: &Background<R>,
    d1: &Direction<R>,
    d2: &Direction<R>,
    include_quantum_pressure: bool,
) -> Result<Cplx<R>> {
    let grid = cfg.grid().clone();
    let cells = grid.cell_count();
    let base = cfg.pack();
    numeric_hessian_apply(
        |flat| action_sh(&FieldConfiguration::unpack(&grid, flat), bg, include_quantum_pressure),
        &base,
        &d1.pack(cells),
        &d2.pack(cells),
    )
}

#[derive(Debug, Clone)]
pub struct CheckEntry<R> {
    pub check: String,
    pub residual: R,
    pub tolerance: R,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct CheckReport<R> {
    pub entries: Vec<CheckEntry<R>>,
}

impl<R> Default for CheckReport<R> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<R: Real> CheckReport<R> {
    pub fn push(&mut self, check: impl Into<String>, residual: R, tolerance: R) {
        let residual_abs = residual.abs();
        self.entries.push(CheckEntry {
            check: check.into(),
            residual: residual_abs,
            tolerance,
            pass: residual_abs < tolerance,
        });
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    /// Rows for the `check,residual,tolerance,pass` CSV.
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.entries
            .iter()
            .map(|e| {
                vec![
                    e.check.clone(),
                    format!("{:e}", e.residual),
                    format!("{:e}", e.tolerance),
                    if e.pass { "pass" } else { "fail" }.to_string(),
                ]
            })
            .collect()
    }
}

/// Verify the third-derivative pattern of the high-sector action (quantum
/// pressure off): blocks with two or more density directions vanish, the
/// (theta, theta, n) contraction matches the direct integrand, and fourth
/// differences of a quadratic control functional vanish.
pub fn third_derivative_check<R: Real>(
    cfg: &FieldConfiguration<R>,
    bg: &Background<R>,
    dn: &[R],
    dtheta: &[R],
) -> Result<CheckReport<R>> {
    let grid = cfg.grid().clone();
    let cells = grid.cell_count();
    let base = cfg.pack();
    let action =
        |flat: &[R]| action_sh(&FieldConfiguration::unpack(&grid, flat), bg, false);

    let dir_n = Direction::density(dn.to_vec()).pack(cells);
    let dir_t = Direction::phase(dtheta.to_vec()).pack(cells);

    let mut report = CheckReport::default();
    let zero_tol = R::of(1e-8);

    let nnn = numeric_third_apply(&action, &base, &dir_n, &dir_n, &dir_n)?;
    report.push("third_nnn_re", nnn.re, zero_tol);
    report.push("third_nnn_im", nnn.im, zero_tol);

    let nnt = numeric_third_apply(&action, &base, &dir_n, &dir_n, &dir_t)?;
    report.push("third_nnt_re", nnt.re, zero_tol);
    report.push("third_nnt_im", nnt.im, zero_tol);

    // (theta, theta, n): direct evaluation of the discrete integrand
    //   sum [ n_d |grad theta_d|^2 / m - (4 V0/h^2) n_L0 n_d theta_d^2 cos(2 dtheta0/h) ]
    let ttn = numeric_third_apply(&action, &base, &dir_t, &dir_t, &dir_n)?;
    let ns = grid.spatial_count();
    let measure = grid.tau_spacing().unwrap() / bg.hbar * grid.cell_volume();
    let dn_field = ScalarField::new(grid.clone(), dn.to_vec(), None)?;
    let dt_field = ScalarField::new(grid.clone(), dtheta.to_vec(), None)?;
    let grad_dt = gradient(&dt_field)?;
    let mut direct = R::zero();
    for i in 0..cells {
        let s = i % ns;
        if bg.is_masked(s) {
            continue;
        }
        let w = grid.quadrature_weight(s) * measure;
        let a = R::of(2.0) * (cfg.theta_h.values()[i] - bg.theta_l0.values()[s]) / bg.hbar;
        let quad = dn_field.values()[i] * grad_dt.norm_sq_at(i) / bg.m;
        let mass = -R::of(4.0) * bg.v0 / (bg.hbar * bg.hbar)
            * bg.n_l0.values()[s]
            * dn_field.values()[i]
            * dt_field.values()[i]
            * dt_field.values()[i]
            * a.cos();
        direct += (quad + mass) * w;
    }
    let scale = direct.abs().max(R::one());
    report.push("third_ttn_vs_integrand", (ttn.re - direct) / scale, R::of(1e-6));
    report.push("third_ttn_im", ttn.im, zero_tol);

    // control: fourth difference of the quadratic theta-restriction
    let quad_action = |flat: &[R]| -> Result<Cplx<R>> {
        let theta = ScalarField::new(grid.clone(), flat[cells..].to_vec(), None)?;
        let g = gradient(&theta)?;
        let mut acc = R::zero();
        for i in 0..cells {
            let s = i % ns;
            acc += cfg.n_h.values()[i] * g.norm_sq_at(i) / (R::of(2.0) * bg.m)
                * grid.quadrature_weight(s)
                * measure;
        }
        Ok(Cplx::new(acc, R::zero()))
    };
    let fourth = numeric_fourth_diagonal(&quad_action, &base, &dir_t)?;
    report.push("fourth_quadratic_control", fourth.re, R::of(1e-8));

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryRule;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn oracle_setup(
        n_l0: f64,
        n_h0: f64,
    ) -> (Background<f64>, FieldConfiguration<f64>, Arc<SpacetimeGrid<f64>>) {
        let spatial = SpacetimeGrid::centered(
            &[8, 8],
            &[0.5, 0.5],
            &[BoundaryRule::Periodic, BoundaryRule::Periodic],
        )
        .unwrap();
        let bg = Background::uniform(spatial.clone(), n_l0, n_h0, 1.0, 1.0, 1.0, 0).unwrap();
        let st_grid = spatial.with_tau_axis(8, 4.0).unwrap();
        let cfg = FieldConfiguration::uniform(
            st_grid.clone(),
            n_h0,
            std::f64::consts::PI / 2.0,
        )
        .unwrap();
        (bg, cfg, st_grid)
    }

    fn random_field(rng: &mut ChaCha8Rng, cells: usize) -> Vec<f64> {
        (0..cells).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn action_vanishes_for_zero_density() {
        let (bg, _, grid) = oracle_setup(0.5, 1.0);
        let cfg = FieldConfiguration::new(
            ScalarField::constant(grid.clone(), 0.0),
            ScalarField::from_fn(grid, |x| 0.3 * x[0] - 0.1 * x[1]),
        )
        .unwrap();
        let s = action_sh(&cfg, &bg, true).unwrap();
        assert_eq!(s.re, 0.0);
        assert_eq!(s.im, 0.0);
    }

    #[test]
    fn uniform_static_action_density_matches_hand_evaluation() {
        let (n_l0, n_h0) = (0.5, 1.2);
        let (bg, cfg, grid) = oracle_setup(n_l0, n_h0);
        let s = action_sh(&cfg, &bg, true).unwrap();
        // surviving terms at phase matching: (m Vext - mu + 2 V0 nL) nH
        //   - V0 nH nL + V0 nH^2 / 2, times volume * beta
        let density = (0.0 - bg.mu + 2.0 * bg.v0 * n_l0) * n_h0 - bg.v0 * n_h0 * n_l0
            + bg.v0 * n_h0 * n_h0 / 2.0;
        let volume = grid.cell_volume() * grid.spatial_count() as f64;
        let beta = 4.0; // beta hbar = 4, hbar = 1
        assert_relative_eq!(s.re, density * volume * beta, epsilon = 1e-10);
        assert_relative_eq!(s.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn global_phase_shift_leaves_action_invariant() {
        // with n_L0 = 0 the action depends on theta only through derivatives
        let (bg, _, grid) = oracle_setup(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cells = grid.cell_count();
        let n_vals: Vec<f64> = (0..cells).map(|_| rng.gen_range(0.5..1.5)).collect();
        let t_vals = random_field(&mut rng, cells);
        let cfg = FieldConfiguration::new(
            ScalarField::new(grid.clone(), n_vals.clone(), None).unwrap(),
            ScalarField::new(grid.clone(), t_vals.clone(), None).unwrap(),
        )
        .unwrap();
        let shifted = FieldConfiguration::new(
            ScalarField::new(grid.clone(), n_vals, None).unwrap(),
            ScalarField::new(grid.clone(), t_vals.iter().map(|t| t + 1.37).collect(), None)
                .unwrap(),
        )
        .unwrap();
        let s0 = action_sh(&cfg, &bg, true).unwrap();
        let s1 = action_sh(&shifted, &bg, true).unwrap();
        assert_relative_eq!(s0.re, s1.re, epsilon = 1e-10);
        assert_relative_eq!(s0.im, s1.im, epsilon = 1e-10);
    }

    #[test]
    fn pinned_field_action_forms() {
        let (bg, _, grid) = oracle_setup(0.5, 1.0);

        // zero field
        let zero = ScalarField::constant(grid.clone(), 0.0);
        let s = action_sl0(&zero, &zero, &bg).unwrap();
        assert_eq!(s.re, 0.0);
        assert_eq!(s.im, 0.0);

        // uniform real field sqrt(n): density (m Vext - mu) n + V0 n^2 / 2
        let n = 0.8f64;
        let psi = ScalarField::constant(grid.clone(), n.sqrt());
        let s = action_sl0(&psi, &zero, &bg).unwrap();
        let volume = grid.cell_volume() * grid.spatial_count() as f64;
        let density = (0.0 - bg.mu) * n + bg.v0 * n * n / 2.0;
        assert_relative_eq!(s.re, density * volume * 4.0, epsilon = 1e-10);

        // random small field: matches an independent direct summation
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cells = grid.cell_count();
        let re_v: Vec<f64> = (0..cells).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let im_v: Vec<f64> = (0..cells).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let fre = ScalarField::new(grid.clone(), re_v.clone(), None).unwrap();
        let fim = ScalarField::new(grid.clone(), im_v.clone(), None).unwrap();
        let s = action_sl0(&fre, &fim, &bg).unwrap();

        // independent quadrature of the same integrand
        let dre = tau_derivative(&fre).unwrap();
        let dim = tau_derivative(&fim).unwrap();
        let gre = gradient(&fre).unwrap();
        let gim = gradient(&fim).unwrap();
        let measure = grid.tau_spacing().unwrap() * grid.cell_volume();
        let mut expect_re = 0.0;
        let mut expect_im = 0.0;
        for i in 0..cells {
            let m2 = re_v[i] * re_v[i] + im_v[i] * im_v[i];
            expect_re += (re_v[i] * dre.values()[i] + im_v[i] * dim.values()[i]) * measure;
            expect_im += (re_v[i] * dim.values()[i] - im_v[i] * dre.values()[i]) * measure;
            let gsq = gre.norm_sq_at(i) + gim.norm_sq_at(i);
            expect_re += (0.5 * gsq - bg.mu * m2 + 0.5 * bg.v0 * m2 * m2) * measure;
        }
        assert_relative_eq!(s.re, expect_re, epsilon = 1e-10);
        assert_relative_eq!(s.im, expect_im, epsilon = 1e-10);
    }

    #[test]
    fn tunneling_action_closed_forms() {
        let grid = SpacetimeGrid::centered(
            &[6, 6],
            &[0.5, 0.5],
            &[BoundaryRule::Periodic, BoundaryRule::Periodic],
        )
        .unwrap()
        .with_tau_axis(4, 2.0)
        .unwrap();
        let n = ScalarField::constant(grid.clone(), 0.7);
        let theta = ScalarField::constant(grid.clone(), 0.4);

        let s0 =
            action_tunneling(&theta, &theta, &n, &n, 0.0, 1.0).unwrap();
        assert_eq!(s0, 0.0);

        let s1 = action_tunneling(&theta, &theta, &n, &n, 1.3, 1.0).unwrap();
        let volume = grid.cell_volume() * grid.spatial_count() as f64;
        assert_relative_eq!(s1, 1.3 * 0.7 * volume * 2.0, epsilon = 1e-10);

        // gamma = pi: minus sign
        let theta_r = ScalarField::constant(grid.clone(), 0.4 - std::f64::consts::PI);
        let s2 = action_tunneling(&theta, &theta_r, &n, &n, 1.3, 1.0).unwrap();
        assert_relative_eq!(s2, -1.3 * 0.7 * volume * 2.0, epsilon = 1e-9);
    }

    #[test]
    fn matched_phase_minimizes_coupling_over_offset_scan() {
        let (bg, cfg, grid) = oracle_setup(0.5, 1.0);
        let matched = action_sh(&cfg, &bg, true).unwrap().re;
        let mut best = f64::INFINITY;
        for j in 0..32 {
            let offset = 2.0 * std::f64::consts::PI * j as f64 / 32.0;
            let shifted = FieldConfiguration::new(
                cfg.n_h.clone(),
                ScalarField::constant(grid.clone(), std::f64::consts::PI / 2.0 + offset),
            )
            .unwrap();
            let s = action_sh(&shifted, &bg, true).unwrap().re;
            best = best.min(s);
        }
        assert!(matched <= best + 1e-12);
    }

    #[test]
    fn uniform_solution_is_discretely_stationary() {
        let (bg, cfg, grid) = oracle_setup(0.5, 1.2);
        let s0 = action_sh(&cfg, &bg, false).unwrap();
        let scale = s0.re.abs().max(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cells = grid.cell_count();
        for _ in 0..20 {
            let dir = Direction {
                n: Some(random_field(&mut rng, cells)),
                theta: Some(random_field(&mut rng, cells)),
            };
            let g = functional_gradient(&cfg, &bg, &dir, false).unwrap();
            assert!(
                g.re.abs() / scale < 1e-6 && g.im.abs() / scale < 1e-6,
                "gradient ({}, {}) too large",
                g.re,
                g.im
            );
        }
    }

    #[test]
    fn hessian_blocks_match_analytic_kernels() {
        let (n_l0, n_h0) = (0.5, 1.2);
        let (bg, cfg, grid) = oracle_setup(n_l0, n_h0);
        let cells = grid.cell_count();
        let ns = grid.spatial_count();
        let measure = grid.tau_spacing().unwrap() / bg.hbar * grid.cell_volume();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d1 = random_field(&mut rng, cells);
        let d2 = random_field(&mut rng, cells);

        // (n, n): V0 <d1, d2>
        let h_nn = functional_hessian_apply(
            &cfg,
            &bg,
            &Direction::density(d1.clone()),
            &Direction::density(d2.clone()),
            false,
        )
        .unwrap();
        let inner: f64 = d1.iter().zip(&d2).map(|(a, b)| a * b).sum::<f64>() * measure;
        assert_relative_eq!(h_nn.re, bg.v0 * inner, max_relative = 1e-6);
        assert!(h_nn.im.abs() < 1e-6);

        // (theta, theta): <d1, -(nH/m) lap d2 + (4 V0 nL nH / h^2) d2>
        // (cos = -1 at matching, kernel carries -cos)
        let h_tt = functional_hessian_apply(
            &cfg,
            &bg,
            &Direction::phase(d1.clone()),
            &Direction::phase(d2.clone()),
            false,
        )
        .unwrap();
        let d2f = ScalarField::new(grid.clone(), d2.clone(), None).unwrap();
        let lap_d2 = crate::grid::laplacian(&d2f).unwrap();
        let mut expect = 0.0;
        for i in 0..cells {
            let mass = 4.0 * bg.v0 * n_l0 * n_h0; // -cos(pi) = +1, hbar = 1
            expect += d1[i] * (-(n_h0) * lap_d2.values()[i] + mass * d2[i]) * measure;
            let _ = ns;
        }
        assert_relative_eq!(h_tt.re, expect, max_relative = 1e-6);

        // (n, theta) at the matched uniform solution: i <d1, dtau d2>
        let h_nt = functional_hessian_apply(
            &cfg,
            &bg,
            &Direction::density(d1.clone()),
            &Direction::phase(d2.clone()),
            false,
        )
        .unwrap();
        let dtau_d2 = tau_derivative(&d2f).unwrap();
        let expect_im: f64 = d1
            .iter()
            .zip(dtau_d2.values())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * measure;
        assert!(h_nt.re.abs() < 1e-6, "re = {}", h_nt.re);
        assert_relative_eq!(h_nt.im, expect_im, max_relative = 1e-6);
    }

    #[test]
    fn third_derivative_pattern() {
        let (bg, cfg, grid) = oracle_setup(0.5, 1.2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cells = grid.cell_count();
        let dn = random_field(&mut rng, cells);
        let dt = random_field(&mut rng, cells);
        let report = third_derivative_check(&cfg, &bg, &dn, &dt).unwrap();
        assert!(
            report.all_pass(),
            "third-derivative checks failed: {:?}",
            report
                .entries
                .iter()
                .filter(|e| !e.pass)
                .collect::<Vec<_>>()
        );
        let csv = report.csv_rows();
        assert_eq!(csv[0].len(), 4);
    }
}
