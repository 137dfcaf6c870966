//! Real-time integration of the sine-Gordon field on an analogue spacetime,
//! its Klein-Gordon small-amplitude limit, and the tunnel-coupled planes
//! system.
//!
//! The solver advances the V0-normalized real-time equation
//!
//! ```text
//! d_tt theta - d_t(u . grad theta) - div(u d_t theta)
//!   - div((c^2 I - u u^T) grad theta) + (V0/hbar) lambda(x) sin(2 theta/hbar) = 0
//! ```
//!
//! with `u = v - grad(theta_H0)/m`, `c^2 = V0 n_H0 / m` and the local
//! coupling `lambda(x) = 2 V0 n_H0 n_L0`.  In canonical form the momentum is
//! `P = d_t theta - u . grad theta`; a staggered leapfrog stores the plain
//! rate `pi = d_t theta` at half steps and treats the first-order mixed terms
//! by centered averages, which keeps the update the exact stationarity
//! condition of the discrete action in [`discrete_action_slab`].  With
//! nonzero `u` the centered equations are solved by a short fixed-point
//! iteration (a contraction under the CFL bound); with `u = 0` the update is
//! a single explicit pass.
//!
//! The same coefficient data works in any spatial dimension: at d = 1 there
//! is no conformal factor and the coefficients are exactly the f-tensor
//! entries scaled by V0, so no metric construction is needed.

use std::sync::Arc;

use crate::background::Background;
use crate::error::{CoreError, Result};
use crate::grid::{BoundaryRule, SpacetimeGrid};
use crate::Real;

const PICARD_TOL: f64 = 1e-13;
const PICARD_MAX: usize = 200;

/// Fluctuation field and staggered rate.  `rate` lives half a step ahead of
/// `theta` (leapfrog convention).
#[derive(Debug, Clone)]
pub struct SgState<R> {
    pub theta: Vec<R>,
    pub rate: Vec<R>,
    pub time: R,
    pub steps: usize,
}

/// Background-derived coefficients for the sine-Gordon integrator.
#[derive(Debug, Clone)]
pub struct SgSolver<R> {
    grid: Arc<SpacetimeGrid<R>>,
    c2: Vec<R>,
    /// Flow components; `None` for a still background (pure explicit path).
    u: Option<Vec<Vec<R>>>,
    /// Local coupling `lambda(x) = 2 V0 n_H0 n_L0`.
    coupling: Vec<R>,
    v0: R,
    hbar: R,
    cfl: R,
    /// Winding wrap period for phase differences on periodic axes.
    wrap: Option<R>,
    /// Sponge damping profile near fixed-value boundaries.
    sponge: Option<Vec<R>>,
}

impl<R: Real> SgSolver<R> {
    pub fn from_background(bg: &Background<R>, cfl: R) -> Result<Self> {
        let cells = bg.grid.cell_count();
        let mut c2 = vec![R::zero(); cells];
        for i in 0..cells {
            c2[i] = bg.sound_speed_sq(i);
            if bg.is_masked(i) {
                return Err(CoreError::InvalidParameter {
                    name: "background",
                    reason: "the integrator needs an unmasked background".into(),
                });
            }
        }
        let flow = bg.flow()?;
        let d = bg.grid.spatial_dims();
        let mut u_comps: Vec<Vec<R>> = Vec::with_capacity(d);
        let mut any = false;
        for c in 0..d {
            let comp: Vec<R> = (0..cells).map(|i| flow.get(c, i)).collect();
            any = any || comp.iter().any(|&v| v.abs() > R::of(1e-14));
            u_comps.push(comp);
        }
        let coupling: Vec<R> = (0..cells)
            .map(|i| R::of(2.0) * bg.v0 * bg.n_h0.values()[i] * bg.n_l0.values()[i])
            .collect();
        Self::new(
            bg.grid.clone(),
            c2,
            if any { Some(u_comps) } else { None },
            coupling,
            bg.v0,
            bg.hbar,
            cfl,
        )
    }

    /// Uniform still background.
    pub fn uniform(
        grid: Arc<SpacetimeGrid<R>>,
        c2: R,
        coupling: R,
        v0: R,
        hbar: R,
        cfl: R,
    ) -> Result<Self> {
        let cells = grid.cell_count();
        Self::new(
            grid,
            vec![c2; cells],
            None,
            vec![coupling; cells],
            v0,
            hbar,
            cfl,
        )
    }

    fn new(
        grid: Arc<SpacetimeGrid<R>>,
        c2: Vec<R>,
        u: Option<Vec<Vec<R>>>,
        coupling: Vec<R>,
        v0: R,
        hbar: R,
        cfl: R,
    ) -> Result<Self> {
        if grid.tau().is_some() {
            return Err(CoreError::InvalidParameter {
                name: "grid",
                reason: "real-time states live on spatial grids".into(),
            });
        }
        if !(cfl > R::zero()) || cfl > R::of(0.5) {
            return Err(CoreError::InvalidParameter {
                name: "cfl",
                reason: "CFL number must be in (0, 0.5]".into(),
            });
        }
        if c2.iter().any(|&v| !(v > R::zero())) {
            return Err(CoreError::InvalidParameter {
                name: "c2",
                reason: "sound speed must be positive everywhere".into(),
            });
        }
        let wrap = if grid.bc().iter().any(|&b| b == BoundaryRule::Periodic) {
            Some(R::PI() * hbar)
        } else {
            None
        };
        let sponge = build_sponge(&grid, &c2);
        Ok(Self {
            grid,
            c2,
            u,
            coupling,
            v0,
            hbar,
            cfl,
            wrap,
            sponge,
        })
    }

    pub fn grid(&self) -> &Arc<SpacetimeGrid<R>> {
        &self.grid
    }

    pub fn coupling(&self) -> &[R] {
        &self.coupling
    }

    pub fn hbar(&self) -> R {
        self.hbar
    }

    /// Largest admissible step `cfl * min dx / max(c + |u|)`.
    pub fn max_dt(&self) -> R {
        let cells = self.grid.cell_count();
        let mut speed = R::zero();
        for i in 0..cells {
            let mut un = R::zero();
            if let Some(u) = &self.u {
                let mut s = R::zero();
                for comp in u {
                    s += comp[i] * comp[i];
                }
                un = s.sqrt();
            }
            speed = speed.max(self.c2[i].sqrt() + un);
        }
        self.cfl * self.grid.min_spacing() / speed
    }

    fn check_dt(&self, dt: R) -> Result<()> {
        let max_dt = self.max_dt();
        if dt > max_dt || !(dt > R::zero()) {
            return Err(CoreError::CflViolation {
                dt: dt.to_f64().unwrap_or(f64::NAN),
                max_dt: max_dt.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(())
    }

    // -- stencil machinery -------------------------------------------------

    fn for_each_line(&self, axis: usize, mut op: impl FnMut(&[usize])) {
        let shape = self.grid.shape();
        let n_axis = shape[axis];
        let stride: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut idx = Vec::with_capacity(n_axis);
        for b in 0..outer {
            for inner in 0..stride {
                let base = b * n_axis * stride + inner;
                idx.clear();
                idx.extend((0..n_axis).map(|j| base + j * stride));
                op(&idx);
            }
        }
    }

    /// Derivative along one axis; `wrap` folds adjacent differences of phase
    /// fields into `(-p/2, p/2]` (winding-aware periodic seam).
    fn grad_axis(&self, f: &[R], axis: usize, wrap: Option<R>) -> Vec<R> {
        let mut out = vec![R::zero(); f.len()];
        let h = self.grid.spacing()[axis];
        let bc = self.grid.bc()[axis];
        let two_h = h * R::of(2.0);
        let w = |d: R| match wrap {
            Some(p) => d - p * (d / p).round(),
            None => d,
        };
        self.for_each_line(axis, |idx| {
            let n = idx.len();
            let d = |j: usize, k: usize| w(f[idx[k]] - f[idx[j]]);
            for i in 1..n - 1 {
                out[idx[i]] = (d(i, i + 1) + d(i - 1, i)) / two_h;
            }
            match bc {
                BoundaryRule::Periodic => {
                    out[idx[0]] = (d(0, 1) + d(n - 1, 0)) / two_h;
                    out[idx[n - 1]] = (d(n - 1, 0) + d(n - 2, n - 1)) / two_h;
                }
                BoundaryRule::FixedValue => {
                    out[idx[0]] = (R::of(3.0) * d(0, 1) - d(1, 2)) / two_h;
                    out[idx[n - 1]] =
                        (R::of(3.0) * d(n - 2, n - 1) - d(n - 3, n - 2)) / two_h;
                }
                BoundaryRule::ZeroNormalDerivative => {
                    out[idx[0]] = R::zero();
                    out[idx[n - 1]] = R::zero();
                }
            }
        });
        out
    }

    /// Transpose of [`grad_axis`] (no wrap: acts on flux-like fields).  The
    /// pair makes every force term the exact gradient of the discrete action
    /// for all boundary rules.
    fn grad_axis_transpose(&self, q: &[R], axis: usize) -> Vec<R> {
        let mut out = vec![R::zero(); q.len()];
        let h = self.grid.spacing()[axis];
        let bc = self.grid.bc()[axis];
        let two_h = h * R::of(2.0);
        self.for_each_line(axis, |idx| {
            let n = idx.len();
            for i in 1..n - 1 {
                let v = q[idx[i]] / two_h;
                out[idx[i + 1]] += v;
                out[idx[i - 1]] -= v;
            }
            match bc {
                BoundaryRule::Periodic => {
                    let v0 = q[idx[0]] / two_h;
                    out[idx[1]] += v0;
                    out[idx[n - 1]] -= v0;
                    let vn = q[idx[n - 1]] / two_h;
                    out[idx[0]] += vn;
                    out[idx[n - 2]] -= vn;
                }
                BoundaryRule::FixedValue => {
                    let v0 = q[idx[0]] / two_h;
                    out[idx[0]] -= R::of(3.0) * v0;
                    out[idx[1]] += R::of(4.0) * v0;
                    out[idx[2]] -= v0;
                    let vn = q[idx[n - 1]] / two_h;
                    out[idx[n - 1]] += R::of(3.0) * vn;
                    out[idx[n - 2]] -= R::of(4.0) * vn;
                    out[idx[n - 3]] += vn;
                }
                BoundaryRule::ZeroNormalDerivative => {}
            }
        });
        out
    }

    fn gradient(&self, theta: &[R], wrap: Option<R>) -> Vec<Vec<R>> {
        (0..self.grid.spatial_dims())
            .map(|a| self.grad_axis(theta, a, wrap))
            .collect()
    }

    /// `u . grad f` (wrapped when `f` is a phase).
    fn advect(&self, f: &[R], wrap: Option<R>) -> Vec<R> {
        let mut out = vec![R::zero(); f.len()];
        if let Some(u) = &self.u {
            let g = self.gradient(f, wrap);
            for (a, comp) in u.iter().enumerate() {
                for i in 0..f.len() {
                    out[i] += comp[i] * g[a][i];
                }
            }
        }
        out
    }

    /// `G^T(u f)` for a scalar `f`.
    fn advect_transpose(&self, f: &[R]) -> Vec<R> {
        let mut out = vec![R::zero(); f.len()];
        if let Some(u) = &self.u {
            for (a, comp) in u.iter().enumerate() {
                let q: Vec<R> = (0..f.len()).map(|i| comp[i] * f[i]).collect();
                let t = self.grad_axis_transpose(&q, a);
                for i in 0..f.len() {
                    out[i] += t[i];
                }
            }
        }
        out
    }

    /// Stiffness force `G^T(c^2 G theta)` (the `u u^T` part lives in the
    /// canonical momentum).
    fn stiffness(&self, theta: &[R]) -> Vec<R> {
        let g = self.gradient(theta, self.wrap);
        let mut out = vec![R::zero(); theta.len()];
        for a in 0..g.len() {
            let q: Vec<R> = (0..theta.len()).map(|i| self.c2[i] * g[a][i]).collect();
            let t = self.grad_axis_transpose(&q, a);
            for i in 0..theta.len() {
                out[i] += t[i];
            }
        }
        out
    }

    fn sine_force(&self, theta: &[R]) -> Vec<R> {
        let two = R::of(2.0);
        (0..theta.len())
            .map(|i| {
                self.v0 / self.hbar * self.coupling[i] * (two * theta[i] / self.hbar).sin()
            })
            .collect()
    }

    // -- stepping -----------------------------------------------------------

    /// Build a state from `theta(x, 0)` and `d_t theta(x, 0)` with the
    /// second-order half-step kick.
    pub fn initial_state(&self, theta: Vec<R>, theta_dot: Vec<R>, dt: R) -> Result<SgState<R>> {
        self.check_dt(dt)?;
        if theta.len() != self.grid.cell_count() || theta_dot.len() != theta.len() {
            return Err(CoreError::GridMismatch {
                context: "initial state",
            });
        }
        // d_t pi at t=0: u.G(rate) - G^T(u rate) - G^T((c^2 I - uu^T) G theta) - sine
        let mut accel = self.sine_force(&theta);
        for a in accel.iter_mut() {
            *a = -*a;
        }
        let g_theta = self.gradient(&theta, self.wrap);
        let mut u_dot_g = vec![R::zero(); theta.len()];
        if let Some(u) = &self.u {
            for (a, comp) in u.iter().enumerate() {
                for i in 0..theta.len() {
                    u_dot_g[i] += comp[i] * g_theta[a][i];
                }
            }
        }
        for a in 0..self.grid.spatial_dims() {
            let q: Vec<R> = (0..theta.len())
                .map(|i| {
                    let mut v = self.c2[i] * g_theta[a][i];
                    if let Some(u) = &self.u {
                        v = v - u[a][i] * u_dot_g[i];
                    }
                    v
                })
                .collect();
            let t = self.grad_axis_transpose(&q, a);
            for i in 0..theta.len() {
                accel[i] -= t[i];
            }
        }
        if self.u.is_some() {
            let adv = self.advect(&theta_dot, None);
            let advt = self.advect_transpose(&theta_dot);
            for i in 0..theta.len() {
                accel[i] += adv[i] - advt[i];
            }
        }
        let half = dt / R::of(2.0);
        let rate: Vec<R> = (0..theta.len())
            .map(|i| theta_dot[i] + half * accel[i])
            .collect();
        Ok(SgState {
            theta,
            rate,
            time: R::zero(),
            steps: 0,
        })
    }

    fn picard<Apply: Fn(&[R]) -> Vec<R>>(
        &self,
        rhs: &[R],
        start: &[R],
        apply: Apply,
    ) -> Result<Vec<R>> {
        let mut x = start.to_vec();
        for _ in 0..PICARD_MAX {
            let ax = apply(&x);
            let mut delta = R::zero();
            let mut scale = R::one();
            for i in 0..x.len() {
                let next = rhs[i] + ax[i];
                delta = delta.max((next - x[i]).abs());
                scale = scale.max(next.abs());
                x[i] = next;
            }
            if delta < R::of(PICARD_TOL) * scale {
                return Ok(x);
            }
        }
        Err(CoreError::NoConvergence {
            iterations: PICARD_MAX,
            residual: f64::NAN,
        })
    }

    /// One staggered leapfrog update.  On rejection (CFL violation or
    /// non-finite fields) the state is left untouched, so the caller keeps
    /// the last good snapshot.
    pub fn step(&self, state: &mut SgState<R>, dt: R) -> Result<()> {
        self.check_dt(dt)?;
        let cells = self.grid.cell_count();
        let half = dt / R::of(2.0);

        // drift to theta^{k+1}
        let theta_new: Vec<R> = (0..cells)
            .map(|i| state.theta[i] + dt * state.rate[i])
            .collect();

        // kick centered at theta^{k+1}
        let (rate_new, ok) = {
            // canonical momentum at the half level just completed:
            // P = pi - u . G(theta^{k+1} - dt/2 pi)
            let p_prev: Vec<R> = if self.u.is_some() {
                let theta_half: Vec<R> = (0..cells)
                    .map(|i| theta_new[i] - half * state.rate[i])
                    .collect();
                let adv = self.advect(&theta_half, self.wrap);
                (0..cells).map(|i| state.rate[i] - adv[i]).collect()
            } else {
                state.rate.clone()
            };

            let stiff = self.stiffness(&theta_new);
            let sine = self.sine_force(&theta_new);
            let bp_prev = self.advect_transpose(&p_prev);
            let rhs: Vec<R> = (0..cells)
                .map(|i| {
                    p_prev[i] - dt * (R::of(0.5) * bp_prev[i] + stiff[i] + sine[i])
                })
                .collect();

            let p_next = if self.u.is_some() {
                self.picard(&rhs, &p_prev, |p| {
                    let b = self.advect_transpose(p);
                    b.iter().map(|&v| -half * v).collect()
                })?
            } else {
                rhs
            };

            // recover the plain rate: pi - (dt/2) u.G pi = P + u.G theta^{k+1}
            let pi_next = if self.u.is_some() {
                let adv_theta = self.advect(&theta_new, self.wrap);
                let base: Vec<R> = (0..cells).map(|i| p_next[i] + adv_theta[i]).collect();
                self.picard(&base, &state.rate, |pi| {
                    let a = self.advect(pi, None);
                    a.iter().map(|&v| half * v).collect()
                })?
            } else {
                p_next
            };

            let mut pi_next = pi_next;
            if let Some(sigma) = &self.sponge {
                for i in 0..cells {
                    let damp = R::one() - sigma[i] * dt;
                    pi_next[i] *= damp.max(R::zero());
                }
            }
            // non-finite values, or values far past any physical phase or
            // rate scale, both count as a blow-up
            let guard = R::of(1e8) * (R::one() + self.hbar);
            let ok = pi_next.iter().all(|v| v.is_finite() && v.abs() < guard)
                && theta_new.iter().all(|v| v.is_finite() && v.abs() < guard);
            (pi_next, ok)
        };

        if !ok {
            return Err(CoreError::BlowUp {
                time: state.time.to_f64().unwrap_or(f64::NAN),
                step: state.steps,
            });
        }
        state.theta = theta_new;
        state.rate = rate_new;
        state.time += dt;
        state.steps += 1;
        Ok(())
    }

    /// Discrete action of one `(k-1/2, k, k+1/2)` slab; the stepper's update
    /// is the exact stationarity condition of this sum with respect to the
    /// middle level.
    pub fn discrete_action_slab(
        &self,
        theta_prev: &[R],
        theta_mid: &[R],
        theta_next: &[R],
        dt: R,
    ) -> R {
        let cells = self.grid.cell_count();
        let dv = self.grid.cell_volume();
        let half = R::of(0.5);
        let kinetic = |a: &[R], b: &[R]| -> R {
            // P = (b - a)/dt - u . G((a + b)/2)
            let mid: Vec<R> = (0..cells).map(|i| (a[i] + b[i]) * half).collect();
            let adv = self.advect(&mid, self.wrap);
            let mut acc = R::zero();
            for i in 0..cells {
                let p = (b[i] - a[i]) / dt - adv[i];
                acc += half * p * p;
            }
            acc
        };
        let potential = |t: &[R]| -> R {
            let g = self.gradient(t, self.wrap);
            let mut acc = R::zero();
            for i in 0..cells {
                let mut gsq = R::zero();
                for comp in &g {
                    gsq += comp[i] * comp[i];
                }
                acc += half * self.c2[i] * gsq;
                acc += self.v0 * self.coupling[i] * half
                    * (R::one() - (R::of(2.0) * t[i] / self.hbar).cos());
            }
            acc
        };
        (kinetic(theta_prev, theta_mid) + kinetic(theta_mid, theta_next) - potential(theta_mid))
            * dt
            * dv
    }

    /// Hamiltonian in the f-normalization:
    /// `int (P^2 + 2 P u.grad theta)/(2 V0) + c^2 |grad theta|^2 / (2 V0)
    ///  + (lambda/2)(1 - cos(2 theta/hbar))`,
    /// evaluated at the half level where `theta` and the staggered rate are
    /// colocated.
    pub fn energy(&self, state: &SgState<R>, dt: R) -> R {
        let cells = self.grid.cell_count();
        let half = dt / R::of(2.0);
        let theta_half: Vec<R> = (0..cells)
            .map(|i| state.theta[i] + half * state.rate[i])
            .collect();
        let g = self.gradient(&theta_half, self.wrap);
        let dv = self.grid.cell_volume();
        let mut acc = R::zero();
        for i in 0..cells {
            let mut u_dot_g = R::zero();
            let mut gsq = R::zero();
            for (a, comp) in g.iter().enumerate() {
                gsq += comp[i] * comp[i];
                if let Some(u) = &self.u {
                    u_dot_g += u[a][i] * comp[i];
                }
            }
            let p = state.rate[i] - u_dot_g;
            let w = self.grid.quadrature_weight(i);
            acc += w
                * ((p * p + R::of(2.0) * p * u_dot_g + self.c2[i] * gsq)
                    / (R::of(2.0) * self.v0)
                    + self.coupling[i] / R::of(2.0)
                        * (R::one() - (R::of(2.0) * theta_half[i] / self.hbar).cos()));
        }
        acc * dv
    }

    /// Integer winding of `phi = 2 theta / hbar` along the first axis
    /// (1-D periodic domains).
    pub fn topological_charge(&self, state: &SgState<R>) -> Result<i64> {
        if self.grid.spatial_dims() != 1 {
            return Err(CoreError::Dimension {
                got: self.grid.spatial_dims(),
                reason: "topological charge is tracked on 1-D domains",
            });
        }
        let p = R::PI() * self.hbar;
        let n = self.grid.cell_count();
        let seam = self.grid.bc()[0] == BoundaryRule::Periodic;
        let mut total = R::zero();
        for i in 0..if seam { n } else { n - 1 } {
            let j = (i + 1) % n;
            let mut d = state.theta[j] - state.theta[i];
            d = d - p * (d / p).round();
            total += d;
        }
        // kinks carry pi hbar of winding in theta
        Ok((total / p).round().to_f64().unwrap() as i64)
    }

    pub fn min_max(&self, state: &SgState<R>) -> (R, R) {
        let mut lo = R::infinity();
        let mut hi = R::neg_infinity();
        for &v in &state.theta {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

fn build_sponge<R: Real>(grid: &Arc<SpacetimeGrid<R>>, c2: &[R]) -> Option<Vec<R>> {
    const LAYER: usize = 8;
    if !grid.bc().iter().any(|&b| b == BoundaryRule::FixedValue) {
        return None;
    }
    let c_max = c2.iter().fold(R::zero(), |a, &b| a.max(b)).sqrt();
    let cells = grid.cell_count();
    let mut sigma = vec![R::zero(); cells];
    for s in 0..cells {
        let idx = grid.unravel(s);
        let mut depth_frac = R::zero();
        for (a, &i) in idx.iter().enumerate() {
            if grid.bc()[a] != BoundaryRule::FixedValue {
                continue;
            }
            let dist = i.min(grid.shape()[a] - 1 - i);
            if dist < LAYER {
                let f = R::one() - R::from_usize(dist).unwrap() / R::from_usize(LAYER).unwrap();
                depth_frac = depth_frac.max(f);
            }
        }
        if depth_frac > R::zero() {
            // quadratic ramp, peak rate ~ c / (layer dx)
            let rate = c_max / (R::from_usize(LAYER).unwrap() * grid.min_spacing());
            sigma[s] = rate * depth_frac * depth_frac;
        }
    }
    Some(sigma)
}

/// Analytic kink of the uniform flat limit: `phi = 2 theta / hbar =
/// 4 atan(exp(k gamma (x - x0 - u t)))` with `k = sqrt(2 V0 lambda / hbar^2) / c`.
pub fn kink_theta<R: Real>(
    c: R,
    coupling: R,
    v0: R,
    hbar: R,
    u_kink: R,
    x0: R,
    x: R,
    t: R,
) -> R {
    let m_tilde = (R::of(2.0) * v0 * coupling).sqrt() / hbar; // mass frequency
    let k = m_tilde / c;
    let gamma = R::one() / (R::one() - u_kink * u_kink / (c * c)).sqrt();
    let s = k * gamma * (x - x0 - u_kink * t);
    let phi = R::of(4.0) * s.exp().atan();
    hbar / R::of(2.0) * phi
}

/// Kink initial data on a uniform still background.
pub fn kink_initial_condition<R: Real>(
    solver: &SgSolver<R>,
    dt: R,
    u_kink: R,
    x0: R,
) -> Result<SgState<R>> {
    if solver.grid.spatial_dims() != 1 {
        return Err(CoreError::Dimension {
            got: solver.grid.spatial_dims(),
            reason: "kink initial data is one-dimensional",
        });
    }
    if solver.u.is_some() {
        return Err(CoreError::InvalidParameter {
            name: "background",
            reason: "kink initial data needs a still background".into(),
        });
    }
    let c2_0 = solver.c2[0];
    let l_0 = solver.coupling[0];
    for i in 0..solver.c2.len() {
        if (solver.c2[i] - c2_0).abs() > R::of(1e-12) * c2_0
            || (solver.coupling[i] - l_0).abs() > R::of(1e-12) * (l_0 + R::one())
        {
            return Err(CoreError::InvalidParameter {
                name: "background",
                reason: "kink initial data needs uniform coefficients".into(),
            });
        }
    }
    let c = c2_0.sqrt();
    if !(u_kink.abs() < c) {
        return Err(CoreError::InvalidParameter {
            name: "u_kink",
            reason: format!("kink speed must be below the sound speed {c}"),
        });
    }
    let cells = solver.grid.cell_count();
    let mut theta = Vec::with_capacity(cells);
    let mut theta_dot = Vec::with_capacity(cells);
    let m_tilde = (R::of(2.0) * solver.v0 * l_0).sqrt() / solver.hbar;
    let k = m_tilde / c;
    let gamma = R::one() / (R::one() - u_kink * u_kink / (c * c)).sqrt();
    for i in 0..cells {
        let x = solver.grid.position(i)[0];
        theta.push(kink_theta(c, l_0, solver.v0, solver.hbar, u_kink, x0, x, R::zero()));
        // d_t phi = -u k gamma * 2 sech(k gamma (x - x0))
        let s = k * gamma * (x - x0);
        let sech = R::of(2.0) / (s.exp() + (-s).exp());
        theta_dot.push(solver.hbar / R::of(2.0) * (-u_kink * k * gamma) * R::of(2.0) * sech);
    }
    solver.initial_state(theta, theta_dot, dt)
}

// ---------------------------------------------------------------------------
// Tunnel-coupled planes
// ---------------------------------------------------------------------------

/// Relative-phase fluctuation dynamics of two tunnel-coupled planar
/// reservoirs around a stationary offset `gamma0`.  The fluctuation
/// potential is the energy expansion of `t_perp sqrt(n_L n_R) cos(gamma)`
/// around `gamma0` with the tadpole term removed, taken with the sign that
/// makes the odd-pi configuration the stable Josephson minimum (the numeric
/// action gradient certifies the forces either way).
#[derive(Debug, Clone)]
pub struct PlanesSolver<R> {
    inner_l: SgSolver<R>,
    inner_r: SgSolver<R>,
    pub t_perp: R,
    pub gamma0: R,
    sqrt_nn: Vec<R>,
    hbar: R,
}

#[derive(Debug, Clone)]
pub struct PlanesState<R> {
    pub theta_l: Vec<R>,
    pub rate_l: Vec<R>,
    pub theta_r: Vec<R>,
    pub rate_r: Vec<R>,
    pub time: R,
    pub steps: usize,
}

impl<R: Real> PlanesSolver<R> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: Arc<SpacetimeGrid<R>>,
        c2_l: R,
        c2_r: R,
        v0_l: R,
        v0_r: R,
        n_l: R,
        n_r: R,
        t_perp: R,
        gamma0: R,
        hbar: R,
        cfl: R,
    ) -> Result<Self> {
        if grid.spatial_dims() != 2 {
            return Err(CoreError::Dimension {
                got: grid.spatial_dims(),
                reason: "tunnel-coupled reservoirs are planar",
            });
        }
        let cells = grid.cell_count();
        let inner_l = SgSolver::uniform(grid.clone(), c2_l, R::zero(), v0_l, hbar, cfl)?;
        let inner_r = SgSolver::uniform(grid, c2_r, R::zero(), v0_r, hbar, cfl)?;
        Ok(Self {
            inner_l,
            inner_r,
            t_perp,
            gamma0,
            sqrt_nn: vec![(n_l * n_r).sqrt(); cells],
            hbar,
        })
    }

    pub fn grid(&self) -> &Arc<SpacetimeGrid<R>> {
        self.inner_l.grid()
    }

    pub fn max_dt(&self) -> R {
        self.inner_l.max_dt().min(self.inner_r.max_dt())
    }

    /// Fluctuation potential density `V(gamma_d)`: the tunneling energy
    /// `t_perp sqrt(n_L n_R) cos(gamma0 + gamma_d)` expanded around the
    /// stationary offset with the constant and tadpole terms removed, so the
    /// quadratic minimum sits at `gamma_d = 0` when `gamma0` is an odd
    /// multiple of pi.
    fn potential(&self, i: usize, gamma_d: R) -> R {
        self.t_perp
            * self.sqrt_nn[i]
            * (self.gamma0.cos() * (gamma_d.cos() - R::one())
                + self.gamma0.sin() * (gamma_d.sin() - gamma_d))
    }

    /// `dV/d theta_L` (the theta_R derivative is its negative).
    fn potential_force(&self, i: usize, gamma_d: R) -> R {
        self.t_perp * self.sqrt_nn[i] / self.hbar
            * (self.gamma0.sin() * (gamma_d.cos() - R::one()) - self.gamma0.cos() * gamma_d.sin())
    }

    pub fn initial_state(
        &self,
        theta_l: Vec<R>,
        dot_l: Vec<R>,
        theta_r: Vec<R>,
        dot_r: Vec<R>,
        dt: R,
    ) -> Result<PlanesState<R>> {
        self.inner_l.check_dt(dt)?;
        let cells = self.grid().cell_count();
        let half = dt / R::of(2.0);
        let stiff_l = self.inner_l.stiffness(&theta_l);
        let stiff_r = self.inner_r.stiffness(&theta_r);
        let mut rate_l = Vec::with_capacity(cells);
        let mut rate_r = Vec::with_capacity(cells);
        for i in 0..cells {
            let gamma_d = (theta_l[i] - theta_r[i]) / self.hbar;
            let f = self.potential_force(i, gamma_d);
            rate_l.push(dot_l[i] + half * (-stiff_l[i] - self.inner_l.v0 * f));
            rate_r.push(dot_r[i] + half * (-stiff_r[i] + self.inner_r.v0 * f));
        }
        Ok(PlanesState {
            theta_l,
            rate_l,
            theta_r,
            rate_r,
            time: R::zero(),
            steps: 0,
        })
    }

    /// Coupled leapfrog update; decouples into two independent wave
    /// equations at `t_perp = 0`.
    pub fn step(&self, state: &mut PlanesState<R>, dt: R) -> Result<()> {
        self.inner_l.check_dt(dt)?;
        self.inner_r.check_dt(dt)?;
        let cells = self.grid().cell_count();
        let theta_l: Vec<R> = (0..cells)
            .map(|i| state.theta_l[i] + dt * state.rate_l[i])
            .collect();
        let theta_r: Vec<R> = (0..cells)
            .map(|i| state.theta_r[i] + dt * state.rate_r[i])
            .collect();
        let stiff_l = self.inner_l.stiffness(&theta_l);
        let stiff_r = self.inner_r.stiffness(&theta_r);
        let mut rate_l = state.rate_l.clone();
        let mut rate_r = state.rate_r.clone();
        let mut ok = true;
        for i in 0..cells {
            let gamma_d = (theta_l[i] - theta_r[i]) / self.hbar;
            let f = self.potential_force(i, gamma_d);
            rate_l[i] += dt * (-stiff_l[i] - self.inner_l.v0 * f);
            rate_r[i] += dt * (-stiff_r[i] + self.inner_r.v0 * f);
            ok = ok && rate_l[i].is_finite() && rate_r[i].is_finite();
        }
        if !ok {
            return Err(CoreError::BlowUp {
                time: state.time.to_f64().unwrap_or(f64::NAN),
                step: state.steps,
            });
        }
        state.theta_l = theta_l;
        state.theta_r = theta_r;
        state.rate_l = rate_l;
        state.rate_r = rate_r;
        state.time += dt;
        state.steps += 1;
        Ok(())
    }

    /// Discrete action slab; the coupled update is its stationarity
    /// condition with respect to the middle levels of both planes.
    #[allow(clippy::too_many_arguments)]
    pub fn discrete_action_slab(
        &self,
        prev_l: &[R],
        mid_l: &[R],
        next_l: &[R],
        prev_r: &[R],
        mid_r: &[R],
        next_r: &[R],
        dt: R,
    ) -> R {
        let cells = self.grid().cell_count();
        let dv = self.grid().cell_volume();
        let half = R::of(0.5);
        let kin = |a: &[R], b: &[R], v0: R| -> R {
            let mut acc = R::zero();
            for i in 0..cells {
                let p = (b[i] - a[i]) / dt;
                acc += half * p * p / v0;
            }
            acc
        };
        let grad_energy = |t: &[R], solver: &SgSolver<R>| -> R {
            let g = solver.gradient(t, None);
            let mut acc = R::zero();
            for i in 0..cells {
                let mut gsq = R::zero();
                for comp in &g {
                    gsq += comp[i] * comp[i];
                }
                acc += half * solver.c2[i] * gsq / solver.v0;
            }
            acc
        };
        let mut s = kin(prev_l, mid_l, self.inner_l.v0) + kin(mid_l, next_l, self.inner_l.v0);
        s += kin(prev_r, mid_r, self.inner_r.v0) + kin(mid_r, next_r, self.inner_r.v0);
        s -= grad_energy(mid_l, &self.inner_l) + grad_energy(mid_r, &self.inner_r);
        for i in 0..cells {
            let gamma_d = (mid_l[i] - mid_r[i]) / self.hbar;
            s -= self.potential(i, gamma_d);
        }
        s * dt * dv
    }

    /// Per-plane wave energies and the coupling energy, f-normalized.
    pub fn energies(&self, state: &PlanesState<R>, dt: R) -> (R, R, R) {
        let plane = |theta: &[R], rate: &[R], solver: &SgSolver<R>| -> R {
            let cells = theta.len();
            let half = dt / R::of(2.0);
            let th: Vec<R> = (0..cells).map(|i| theta[i] + half * rate[i]).collect();
            let g = solver.gradient(&th, None);
            let mut acc = R::zero();
            for i in 0..cells {
                let mut gsq = R::zero();
                for comp in &g {
                    gsq += comp[i] * comp[i];
                }
                acc += (rate[i] * rate[i] + solver.c2[i] * gsq) / (R::of(2.0) * solver.v0);
            }
            acc * solver.grid.cell_volume()
        };
        let e_l = plane(&state.theta_l, &state.rate_l, &self.inner_l);
        let e_r = plane(&state.theta_r, &state.rate_r, &self.inner_r);
        let cells = self.grid().cell_count();
        let half = dt / R::of(2.0);
        let mut e_c = R::zero();
        for i in 0..cells {
            let tl = state.theta_l[i] + half * state.rate_l[i];
            let tr = state.theta_r[i] + half * state.rate_r[i];
            e_c += self.potential(i, (tl - tr) / self.hbar);
        }
        (e_l, e_r, e_c * self.grid().cell_volume())
    }
}

/// Published sine-Gordon mass field `2 (V0 m)^{3/2} n_L0 / sqrt(n_H0)`.
pub fn sine_gordon_mass<R: Real>(bg: &Background<R>) -> crate::grid::ScalarField<R> {
    let coeff = R::of(2.0) * (bg.v0 * bg.m).powf(R::of(1.5));
    bg.n_l0
        .zip(&bg.n_h0, move |nl, nh| {
            if nh > R::zero() {
                coeff * nl / nh.sqrt()
            } else {
                R::zero()
            }
        })
        .expect("background fields share a grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::numeric_gradient;
    use crate::grid::ScalarField;
    use crate::Cplx;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn periodic_line(n: usize, dx: f64) -> Arc<SpacetimeGrid<f64>> {
        SpacetimeGrid::new(&[n], &[dx], &[0.0], &[BoundaryRule::Periodic]).unwrap()
    }

    #[test]
    fn zero_state_stays_zero() {
        let grid = periodic_line(64, 0.1);
        let solver = SgSolver::uniform(grid, 1.0, 0.5, 1.0, 1.0, 0.4).unwrap();
        let dt = 0.5 * solver.max_dt();
        let mut state = solver
            .initial_state(vec![0.0; 64], vec![0.0; 64], dt)
            .unwrap();
        for _ in 0..100 {
            solver.step(&mut state, dt).unwrap();
        }
        assert_eq!(state.theta.iter().map(|v| v.abs()).fold(0.0, f64::max), 0.0);
        assert_eq!(state.rate.iter().map(|v| v.abs()).fold(0.0, f64::max), 0.0);
    }

    #[test]
    fn potential_equilibrium_is_stationary_until_perturbed() {
        // theta = pi hbar / 2 zeroes sin(2 theta / hbar)
        let hbar = 0.7;
        let grid = periodic_line(32, 0.2);
        let solver = SgSolver::uniform(grid, 1.0, 0.8, 1.0, hbar, 0.4).unwrap();
        let dt = 0.5 * solver.max_dt();
        let value = std::f64::consts::PI * hbar / 2.0;
        let mut state = solver
            .initial_state(vec![value; 32], vec![0.0; 32], dt)
            .unwrap();
        for _ in 0..200 {
            solver.step(&mut state, dt).unwrap();
        }
        for &t in &state.theta {
            assert_relative_eq!(t, value, epsilon = 1e-12);
        }
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let grid = periodic_line(32, 0.1);
        let solver = SgSolver::uniform(grid, 4.0, 0.0, 1.0, 1.0, 0.5).unwrap();
        let dt = solver.max_dt() * 1.01;
        let mut state = solver
            .initial_state(vec![0.0; 32], vec![0.0; 32], solver.max_dt())
            .unwrap();
        assert!(matches!(
            solver.step(&mut state, dt),
            Err(CoreError::CflViolation { .. })
        ));
        assert_eq!(state.steps, 0);
    }

    #[test]
    fn stiff_potential_blowup_reports_last_good_step() {
        // CFL only guards the wave speed; an absurd coupling drives the
        // pointwise oscillator unstable and must surface as a blow-up.
        let grid = periodic_line(16, 0.1);
        let solver = SgSolver::uniform(grid, 0.01, 5e7, 1.0, 1.0, 0.5).unwrap();
        let dt = solver.max_dt() * 0.9;
        let theta: Vec<f64> = (0..16).map(|i| 0.3 * (i as f64 * 0.5).sin()).collect();
        let mut state = solver.initial_state(theta, vec![0.0; 16], dt).unwrap();
        let mut blew = false;
        for _ in 0..4000 {
            let last_good = state.clone();
            match solver.step(&mut state, dt) {
                Ok(()) => {}
                Err(CoreError::BlowUp { step, .. }) => {
                    blew = true;
                    // state untouched by the failed step
                    assert_eq!(state.steps, step);
                    assert_eq!(state.theta, last_good.theta);
                    break;
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(blew, "expected the stiff run to blow up");
    }

    /// Discrete force equals the numeric gradient of the discrete action for
    /// still and flowing backgrounds.
    #[test]
    fn step_is_stationarity_of_discrete_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for flowing in [false, true] {
            let n = 24;
            let grid = periodic_line(n, 0.25);
            let solver = if flowing {
                let spatial = grid.clone();
                let bg = Background::new(
                    ScalarField::from_fn(spatial.clone(), |x| 0.4 + 0.1 * (x[0]).sin()),
                    ScalarField::constant(spatial.clone(), 0.0),
                    ScalarField::from_fn(spatial.clone(), |x| 1.0 + 0.2 * (0.7 * x[0]).cos()),
                    ScalarField::constant(spatial.clone(), std::f64::consts::PI / 2.0),
                    crate::grid::VectorField::from_fn(spatial.clone(), |x: &[f64], _| {
                        0.3 * (x[0] * 1.3).sin()
                    }),
                    ScalarField::constant(spatial.clone(), 0.0),
                    1.0,
                    1.0,
                    1.0,
                    1.0,
                )
                .unwrap();
                SgSolver::from_background(&bg, 0.4).unwrap()
            } else {
                SgSolver::uniform(grid.clone(), 1.3, 0.7, 1.0, 1.0, 0.4).unwrap()
            };
            let dt = 0.8 * solver.max_dt();
            let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let dot: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let state0 = solver.initial_state(theta, dot, dt).unwrap();
            let mut state = state0.clone();
            solver.step(&mut state, dt).unwrap();
            let mut state2 = state.clone();
            solver.step(&mut state2, dt).unwrap();

            // levels: theta^0 = state0.theta, theta^1 = state.theta, theta^2 = state2.theta
            let slab = |mid: &[f64]| -> crate::error::Result<Cplx<f64>> {
                Ok(Cplx::new(
                    solver.discrete_action_slab(&state0.theta, mid, &state2.theta, dt),
                    0.0,
                ))
            };
            let scale = slab(&state.theta).unwrap().re.abs().max(1.0);
            for _ in 0..6 {
                let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let g = numeric_gradient(&slab, &state.theta, &dir).unwrap();
                assert!(
                    g.re.abs() / scale < 1e-6,
                    "flowing={flowing}: residual {} (scale {scale})",
                    g.re
                );
            }
        }
    }

    #[test]
    fn static_kink_energy_drift_is_small() {
        let n = 512;
        let grid = SpacetimeGrid::new(
            &[n],
            &[0.1],
            &[0.0],
            &[BoundaryRule::ZeroNormalDerivative],
        )
        .unwrap();
        // c = 1, m_tilde = 0.25 -> width ~ 40 cells
        let coupling = 0.25f64 * 0.25 / 2.0;
        let solver = SgSolver::uniform(grid, 1.0, coupling, 1.0, 1.0, 0.4).unwrap();
        let dt = 0.8 * solver.max_dt();
        let mut state = kink_initial_condition(&solver, dt, 0.0, 25.6).unwrap();
        let e0 = solver.energy(&state, dt);
        let mut worst: f64 = 0.0;
        for k in 0..10_000 {
            solver.step(&mut state, dt).unwrap();
            if k % 200 == 0 {
                let e = solver.energy(&state, dt);
                worst = worst.max(((e - e0) / e0).abs());
            }
        }
        let e_final = solver.energy(&state, dt);
        worst = worst.max(((e_final - e0) / e0).abs());
        assert!(worst < 1e-3, "energy drift {worst}");
    }

    #[test]
    fn kink_energy_is_translation_invariant() {
        let n = 512;
        let grid = SpacetimeGrid::new(
            &[n],
            &[0.1],
            &[0.0],
            &[BoundaryRule::ZeroNormalDerivative],
        )
        .unwrap();
        // narrow kink, deep margins: boundary tails stay below 1e-10
        let coupling = 0.5f64 * 0.5 / 2.0;
        let solver = SgSolver::uniform(grid, 1.0, coupling, 1.0, 1.0, 0.4).unwrap();
        let dt = 0.8 * solver.max_dt();
        let e1 = solver.energy(&kink_initial_condition(&solver, dt, 0.0, 24.0).unwrap(), dt);
        let e2 = solver.energy(&kink_initial_condition(&solver, dt, 0.0, 28.0).unwrap(), dt);
        assert_relative_eq!(e1, e2, max_relative = 1e-6);
    }

    #[test]
    fn kink_winds_once_and_charge_is_conserved() {
        let n = 1024;
        let grid = periodic_line(n, 0.1);
        let coupling = 0.25f64 * 0.25 / 2.0;
        let solver = SgSolver::uniform(grid, 1.0, coupling, 1.0, 1.0, 0.4).unwrap();
        let dt = 0.8 * solver.max_dt();
        let mut state = kink_initial_condition(&solver, dt, 0.4, 51.2).unwrap();
        // phi spans 0 -> 2 pi: theta spans pi hbar
        let (lo, hi) = solver.min_max(&state);
        assert!(lo.abs() < 1e-3);
        assert_relative_eq!(hi, std::f64::consts::PI, epsilon = 1e-3);
        assert_eq!(solver.topological_charge(&state).unwrap(), 1);
        for _ in 0..2000 {
            solver.step(&mut state, dt).unwrap();
        }
        assert_eq!(solver.topological_charge(&state).unwrap(), 1);
    }

    #[test]
    fn moving_kink_keeps_its_shape() {
        // half a domain crossing at u = 0.5 c on a periodic line
        let n = 1024;
        let dx = 0.1;
        let grid = periodic_line(n, dx);
        let c = 1.0f64;
        let m_tilde = 0.25f64;
        let coupling = m_tilde * m_tilde / 2.0;
        let solver = SgSolver::uniform(grid.clone(), c * c, coupling, 1.0, 1.0, 0.45).unwrap();
        let u = 0.5 * c;
        let span = n as f64 * dx;
        let t_final = 0.5 * span / u;
        let steps = (t_final / (0.9 * solver.max_dt())).ceil() as usize;
        let dt = t_final / steps as f64;
        let x0 = span / 2.0;
        let mut state = kink_initial_condition(&solver, dt, u, x0).unwrap();
        for _ in 0..steps {
            solver.step(&mut state, dt).unwrap();
        }
        // each kink passage lowers a cell by exactly pi*hbar on the circle,
        // so the comparison wraps pointwise differences mod pi*hbar
        let wrap = std::f64::consts::PI; // pi * hbar
        let mut num = 0.0;
        let mut den = 0.0;
        let mut exact = Vec::with_capacity(n);
        for i in 0..n {
            let x = grid.position(i)[0];
            let mut xs = x - u * t_final - x0;
            xs -= span * (xs / span).round();
            exact.push(kink_theta(c, coupling, 1.0, 1.0, u, -xs, 0.0, 0.0));
        }
        let mean: f64 = exact.iter().sum::<f64>() / n as f64;
        for i in 0..n {
            let mut d = state.theta[i] - exact[i];
            d -= wrap * (d / wrap).round();
            num += d * d;
            den += (exact[i] - mean) * (exact[i] - mean);
        }
        let err = (num / den).sqrt();
        assert!(err < 1e-3, "kink shape L2 error {err}");
    }

    #[test]
    fn linear_evolution_is_time_reversible() {
        // lambda = 0, u = 0: the staggered scheme retraces its orbit when the
        // rate connecting the last two positions is negated
        let n = 128;
        let grid = periodic_line(n, 0.2);
        let solver = SgSolver::uniform(grid.clone(), 1.0, 0.0, 1.0, 1.0, 0.4).unwrap();
        let dt = 0.8 * solver.max_dt();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let theta0: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mut state = SgState {
            theta: theta0.clone(),
            rate: (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            time: 0.0,
            steps: 0,
        };
        let steps = 300;
        let mut theta_prev = state.theta.clone();
        for _ in 0..steps {
            theta_prev = state.theta.clone();
            solver.step(&mut state, dt).unwrap();
        }
        let mut rev = SgState {
            theta: state.theta.clone(),
            rate: (0..n)
                .map(|i| -(state.theta[i] - theta_prev[i]) / dt)
                .collect(),
            time: 0.0,
            steps: 0,
        };
        for _ in 0..steps {
            solver.step(&mut rev, dt).unwrap();
        }
        let mut max_err: f64 = 0.0;
        for i in 0..n {
            max_err = max_err.max((rev.theta[i] - theta0[i]).abs());
        }
        assert!(max_err < 1e-8, "time reversal error {max_err}");
    }

    #[test]
    fn small_amplitude_dispersion_smoke() {
        // one mode of the Klein-Gordon limit within 1%
        let n = 128;
        let dx = 0.25;
        let grid = periodic_line(n, dx);
        let c2 = 1.0f64;
        let coupling = 0.5f64; // mass^2 = 2 V0 coupling / hbar^2 = 1
        let solver = SgSolver::uniform(grid.clone(), c2, coupling, 1.0, 1.0, 0.2).unwrap();
        let span = n as f64 * dx;
        let k = 2.0 * std::f64::consts::PI * 2.0 / span;
        let amp = 1e-4;
        let theta: Vec<f64> = (0..n)
            .map(|i| amp * (k * grid.position(i)[0]).sin())
            .collect();
        let dt = 0.05;
        let mut state = solver.initial_state(theta, vec![0.0; n], dt).unwrap();
        // project on the mode and time the zero crossings
        let project = |s: &SgState<f64>| -> f64 {
            (0..n)
                .map(|i| s.theta[i] * (k * grid.position(i)[0]).sin())
                .sum()
        };
        let mut crossings: Vec<f64> = Vec::new();
        let mut last = (project(&state), state.time);
        for _ in 0..4000 {
            solver.step(&mut state, dt).unwrap();
            let now = (project(&state), state.time);
            if last.0 != 0.0 && now.0 * last.0 < 0.0 {
                let frac = last.0 / (last.0 - now.0);
                crossings.push(last.1 + frac * (now.1 - last.1));
            }
            last = now;
        }
        assert!(crossings.len() > 10);
        let omega = std::f64::consts::PI * (crossings.len() - 1) as f64
            / (crossings.last().unwrap() - crossings[0]);
        let k_eff = (k * dx).sin() / dx;
        let expected = (c2 * k_eff * k_eff + 1.0).sqrt();
        assert_relative_eq!(omega, expected, max_relative = 0.01);
    }

    // -- planes -------------------------------------------------------------

    fn plane_grid(n: usize) -> Arc<SpacetimeGrid<f64>> {
        SpacetimeGrid::centered(
            &[n, n],
            &[0.25, 0.25],
            &[BoundaryRule::Periodic, BoundaryRule::Periodic],
        )
        .unwrap()
    }

    #[test]
    fn decoupled_planes_conserve_their_energies() {
        let grid = plane_grid(24);
        let planes =
            PlanesSolver::new(grid.clone(), 1.0, 1.5, 1.0, 1.0, 1.0, 1.0, 0.0, std::f64::consts::PI, 1.0, 0.4)
                .unwrap();
        // leapfrog energy oscillation is O((omega dt)^2); resolve the
        // excited modes well below the 0.1% target
        let dt = 0.15 * planes.max_dt();
        let cells = grid.cell_count();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let smooth = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let (a, b) = (rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4));
            (0..cells)
                .map(|i| {
                    let x = grid.position(i);
                    a * (x[0]).sin() + b * (x[1] * 2.0).cos()
                })
                .collect()
        };
        let f1 = smooth(&mut rng);
        let f2 = smooth(&mut rng);
        let mut state = planes
            .initial_state(f1, vec![0.0; cells], f2, vec![0.0; cells], dt)
            .unwrap();
        let (el0, er0, _) = planes.energies(&state, dt);
        let mut worst: f64 = 0.0;
        for k in 0..10_000 {
            planes.step(&mut state, dt).unwrap();
            if k % 500 == 0 {
                let (el, er, _) = planes.energies(&state, dt);
                worst = worst.max(((el - el0) / el0).abs()).max(((er - er0) / er0).abs());
            }
        }
        assert!(worst < 1e-3, "plane energy drift {worst}");
    }

    #[test]
    fn pi_offset_oscillation_matches_linearized_frequency() {
        let grid = plane_grid(8);
        let (v0, t_perp, nn) = (1.3f64, 0.2f64, 1.0f64);
        let planes = PlanesSolver::new(
            grid.clone(),
            1.0,
            1.0,
            v0,
            v0,
            nn,
            nn,
            t_perp,
            std::f64::consts::PI,
            1.0,
            0.4,
        )
        .unwrap();
        let dt = 0.02;
        let cells = grid.cell_count();
        let amp = 1e-4;
        let mut state = planes
            .initial_state(
                vec![amp / 2.0; cells],
                vec![0.0; cells],
                vec![-amp / 2.0; cells],
                vec![0.0; cells],
                dt,
            )
            .unwrap();
        let mut crossings: Vec<f64> = Vec::new();
        let mut last = (state.theta_l[0] - state.theta_r[0], state.time);
        for _ in 0..20_000 {
            planes.step(&mut state, dt).unwrap();
            let now = (state.theta_l[0] - state.theta_r[0], state.time);
            if now.0 * last.0 < 0.0 {
                let frac = last.0 / (last.0 - now.0);
                crossings.push(last.1 + frac * (now.1 - last.1));
            }
            last = now;
        }
        assert!(crossings.len() > 6);
        let omega = std::f64::consts::PI * (crossings.len() - 1) as f64
            / (crossings.last().unwrap() - crossings[0]);
        // linearization of the certified force: omega^2 = 2 V0 t_perp sqrt(nL nR) / hbar^2
        let expected = (2.0 * v0 * t_perp * nn / 1.0f64).sqrt();
        assert_relative_eq!(omega, expected, max_relative = 0.01);
    }

    #[test]
    fn plane_forces_equal_action_gradient_at_mixed_offsets() {
        let grid = plane_grid(6);
        let cells = grid.cell_count();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for gamma0 in [std::f64::consts::PI, std::f64::consts::FRAC_PI_2, 0.9] {
            let planes = PlanesSolver::new(
                grid.clone(),
                1.0,
                0.8,
                1.0,
                1.2,
                0.9,
                1.1,
                0.3,
                gamma0,
                1.0,
                0.4,
            )
            .unwrap();
            let dt = 0.7 * planes.max_dt();
            let rnd = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..cells).map(|_| rng.gen_range(-0.2..0.2)).collect()
            };
            let s0 = planes
                .initial_state(rnd(&mut rng), rnd(&mut rng), rnd(&mut rng), rnd(&mut rng), dt)
                .unwrap();
            let mut s1 = s0.clone();
            planes.step(&mut s1, dt).unwrap();
            let mut s2 = s1.clone();
            planes.step(&mut s2, dt).unwrap();

            let slab = |mid: &[f64]| -> crate::error::Result<Cplx<f64>> {
                let (ml, mr) = mid.split_at(cells);
                Ok(Cplx::new(
                    planes.discrete_action_slab(
                        &s0.theta_l, ml, &s2.theta_l, &s0.theta_r, mr, &s2.theta_r, dt,
                    ),
                    0.0,
                ))
            };
            let mut mid = s1.theta_l.clone();
            mid.extend_from_slice(&s1.theta_r);
            let scale = slab(&mid).unwrap().re.abs().max(1.0);
            for _ in 0..4 {
                let dir: Vec<f64> = (0..2 * cells).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let g = numeric_gradient(&slab, &mid, &dir).unwrap();
                assert!(
                    g.re.abs() / scale < 1e-6,
                    "gamma0={gamma0}: residual {}",
                    g.re
                );
            }
        }
    }

    #[test]
    fn sponge_layer_absorbs_outgoing_waves() {
        // pulse launched at a fixed-value wall loses most of its energy
        let n = 256;
        let grid =
            SpacetimeGrid::new(&[n], &[0.1], &[0.0], &[BoundaryRule::FixedValue]).unwrap();
        let solver = SgSolver::uniform(grid.clone(), 1.0, 0.0, 1.0, 1.0, 0.4).unwrap();
        let dt = 0.8 * solver.max_dt();
        let theta: Vec<f64> = (0..n)
            .map(|i| {
                let x: f64 = grid.position(i)[0] - 12.8;
                0.1 * (-x * x / 2.0).exp()
            })
            .collect();
        let mut state = solver.initial_state(theta, vec![0.0; n], dt).unwrap();
        let e0 = solver.energy(&state, dt);
        // both halves of the split pulse cross the domain and hit the layers
        let steps = (2.0 * 25.6 / dt) as usize;
        for _ in 0..steps {
            solver.step(&mut state, dt).unwrap();
        }
        let e1 = solver.energy(&state, dt);
        assert!(
            e1 < 0.05 * e0,
            "sponge absorbed too little: {e1} of {e0}"
        );
    }

    #[test]
    fn published_mass_field_matches_formula() {
        let grid = periodic_line(16, 0.3);
        let bg = Background::uniform(grid, 0.5, 2.0, 1.5, 1.2, 1.0, 0).unwrap();
        let mass = sine_gordon_mass(&bg);
        let expected = 2.0 * (1.5f64 * 1.2).powf(1.5) * 0.5 / 2.0f64.sqrt();
        for &v in mass.values() {
            assert_relative_eq!(v, expected, epsilon = 1e-12);
        }
    }
}
