//! Truncated Fock-space engine for the engineered low-mode vacua and the
//! coefficient fields of the compressed Hamiltonians.
//!
//! States are built unnormalized from their defining amplitude formulas and
//! then normalized numerically, so Gaussian-prefactor conventions never
//! matter.  Truncation is policed by comparing the truncated norm against the
//! closed-form infinite sum.

use crate::error::{CoreError, Result};
use crate::grid::{ComplexField, ScalarField};
use crate::{Cplx, Real};

const TAIL_LIMIT: f64 = 1e-12;
const ORTHO_LIMIT: f64 = 1e-8;

/// Truncated one- or two-mode bosonic state.
#[derive(Debug, Clone)]
pub struct FockState<R> {
    modes: usize,
    cutoff: usize,
    amps: Vec<Cplx<R>>,
    pub alpha: Cplx<R>,
    pub w: Option<Cplx<R>>,
}

/// Observables with closed actions on the truncated space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    /// Annihilator of mode 0.
    A0,
    /// Squared annihilator of mode 0.
    A0Sq,
    /// Number operator of mode 0.
    N0,
    /// Number operator of mode 1.
    N1,
}

/// Default truncation: `ceil(10 + 6 |alpha|^2)` keeps the Poisson tail below
/// 1e-12 for |alpha| <= 3.
pub fn default_cutoff<R: Real>(alpha: Cplx<R>) -> usize {
    let a2 = alpha.norm_sqr().to_f64().unwrap_or(0.0);
    (10.0 + 6.0 * a2).ceil() as usize
}

fn check_cutoff<R: Real>(alpha: Cplx<R>, cutoff: usize, tail: f64) -> Result<()> {
    // The gate is the actual truncated tail mass, not a cutoff heuristic:
    // an accepted state always carries less than TAIL_LIMIT of lost weight.
    if cutoff < 4 || tail > TAIL_LIMIT {
        return Err(CoreError::Truncation {
            cutoff,
            alpha: alpha.norm_sqr().to_f64().unwrap_or(0.0).sqrt(),
            tail,
        });
    }
    Ok(())
}

/// Even-occupation branch weights `2 alpha^j / sqrt(j!)` for even `j`, zero
/// for odd `j`.
fn even_branch<R: Real>(alpha: Cplx<R>, cutoff: usize) -> Vec<Cplx<R>> {
    let mut t = Cplx::new(R::one(), R::zero());
    let two = Cplx::new(R::of(2.0), R::zero());
    let mut out = Vec::with_capacity(cutoff + 1);
    for j in 0..=cutoff {
        if j > 0 {
            t = t * alpha / Cplx::new(R::from_usize(j).unwrap().sqrt(), R::zero());
        }
        if j % 2 == 0 {
            out.push(two * t);
        } else {
            out.push(Cplx::new(R::zero(), R::zero()));
        }
    }
    out
}

/// Truncated and full values of `sum_{even j} 4 |a|^{2j} / j!`.
fn even_norm_sums(alpha_sq: f64, cutoff: usize) -> (f64, f64) {
    let full = 4.0 * alpha_sq.cosh();
    let mut term = 4.0;
    let mut acc = 0.0;
    for j in 0..=cutoff {
        if j > 0 {
            term *= alpha_sq / j as f64;
        }
        if j % 2 == 0 {
            acc += term;
        }
    }
    (acc, full)
}

impl<R: Real> FockState<R> {
    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn amplitudes(&self) -> &[Cplx<R>] {
        &self.amps
    }

    /// Amplitude of `|j0>` (single mode) or `|j0, j1>` (two modes).
    pub fn amp(&self, j0: usize, j1: usize) -> Cplx<R> {
        match self.modes {
            1 => self.amps[j0],
            _ => self.amps[j0 * (self.cutoff + 1) + j1],
        }
    }

    pub fn norm_sqr(&self) -> R {
        self.amps.iter().map(|a| a.norm_sqr()).fold(R::zero(), |x, y| x + y)
    }

    fn normalize(&mut self) {
        let n = self.norm_sqr().sqrt();
        let inv = Cplx::new(R::one() / n, R::zero());
        for a in &mut self.amps {
            *a = *a * inv;
        }
    }

    /// Rows `j0,j1,re,im` for the amplitude CSV export.
    pub fn amplitude_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        match self.modes {
            1 => {
                for (j0, a) in self.amps.iter().enumerate() {
                    rows.push(vec![j0.to_string(), "0".into(), a.re.to_string(), a.im.to_string()]);
                }
            }
            _ => {
                let n = self.cutoff + 1;
                for j0 in 0..n {
                    for j1 in 0..n {
                        let a = self.amps[j0 * n + j1];
                        rows.push(vec![
                            j0.to_string(),
                            j1.to_string(),
                            a.re.to_string(),
                            a.im.to_string(),
                        ]);
                    }
                }
            }
        }
        rows
    }

    /// Norm of `(a0^2 - alpha^2) |psi>` restricted to components `j0 <= cutoff-2`,
    /// where the truncated ladder action is exact.
    pub fn a0_sq_eigen_residual(&self) -> R {
        let a2 = self.alpha * self.alpha;
        let mut acc = R::zero();
        let n1 = if self.modes == 1 { 1 } else { self.cutoff + 1 };
        for j0 in 0..=self.cutoff.saturating_sub(2) {
            let lower = R::from_usize((j0 + 1) * (j0 + 2)).unwrap().sqrt();
            for j1 in 0..n1 {
                let shifted = if self.modes == 1 {
                    self.amps[j0 + 2]
                } else {
                    self.amps[(j0 + 2) * (self.cutoff + 1) + j1]
                };
                let here = if self.modes == 1 {
                    self.amps[j0]
                } else {
                    self.amps[j0 * (self.cutoff + 1) + j1]
                };
                let r = shifted * Cplx::new(lower, R::zero()) - a2 * here;
                acc += r.norm_sqr();
            }
        }
        acc.sqrt()
    }
}

/// Single-mode even coherent state (cat state): amplitudes proportional to
/// `alpha^j (1 + (-1)^j) / sqrt(j!)`, renormalized; odd occupations exactly
/// zero.
pub fn even_coherent<R: Real>(alpha: Cplx<R>, cutoff: usize) -> Result<FockState<R>> {
    let a2 = alpha.norm_sqr().to_f64().unwrap_or(0.0);
    let (trunc, full) = even_norm_sums(a2, cutoff);
    check_cutoff(alpha, cutoff, (1.0 - trunc / full).max(0.0))?;
    let mut state = FockState {
        modes: 1,
        cutoff,
        amps: even_branch(alpha, cutoff),
        alpha,
        w: None,
    };
    state.normalize();
    Ok(state)
}

/// Closed-form norm factor of the two-mode superposition:
/// `N(w, alpha) = 4 e^{-|a|^2} ((1 + |w|^2) cosh |a|^2 + 2 Re w)`.
pub fn two_mode_norm<R: Real>(w: Cplx<R>, alpha: Cplx<R>) -> R {
    let a2 = alpha.norm_sqr();
    R::of(4.0)
        * (-a2).exp()
        * ((R::one() + w.norm_sqr()) * a2.cosh() + R::of(2.0) * w.re)
}

/// Two-mode superposition of even coherent branches: `|psi> ∝ sum_j0 c_j0
/// |j0,0> + w sum_j1 c_j1 |0,j1>` with the shared `|0,0>` interference term.
pub fn two_mode_superposition<R: Real>(
    alpha: Cplx<R>,
    w: Cplx<R>,
    cutoff: usize,
) -> Result<FockState<R>> {
    let a2 = alpha.norm_sqr().to_f64().unwrap_or(0.0);
    let (trunc, full) = even_norm_sums(a2, cutoff);
    let w2 = w.norm_sqr().to_f64().unwrap_or(0.0);
    let cross = 4.0 * (Cplx::new(1.0, 0.0)
        + Cplx::new(w.re.to_f64().unwrap(), w.im.to_f64().unwrap()))
    .norm_sqr();
    let full_total = (trunc - 4.0) + w2 * (trunc - 4.0) + cross
        + (1.0 + w2) * (full - trunc);
    let tail = ((1.0 + w2) * (full - trunc) / full_total).max(0.0);
    check_cutoff(alpha, cutoff, tail)?;

    let n = cutoff + 1;
    let branch = even_branch(alpha, cutoff);
    let mut amps = vec![Cplx::new(R::zero(), R::zero()); n * n];
    for (j0, &c) in branch.iter().enumerate() {
        amps[j0 * n] = amps[j0 * n] + c;
    }
    for (j1, &c) in branch.iter().enumerate() {
        amps[j1] = amps[j1] + w * c;
    }
    let mut state = FockState {
        modes: 2,
        cutoff,
        amps,
        alpha,
        w: Some(w),
    };
    state.normalize();
    Ok(state)
}

/// Exact truncated-space expectation value.
pub fn expectation<R: Real>(state: &FockState<R>, observable: Observable) -> Result<Cplx<R>> {
    if observable == Observable::N1 && state.modes < 2 {
        return Err(CoreError::InvalidParameter {
            name: "observable",
            reason: "N1 needs a two-mode state".into(),
        });
    }
    let n = state.cutoff + 1;
    let n1 = if state.modes == 1 { 1 } else { n };
    let mut acc = Cplx::new(R::zero(), R::zero());
    let amp = |j0: usize, j1: usize| -> Cplx<R> {
        if state.modes == 1 {
            state.amps[j0]
        } else {
            state.amps[j0 * n + j1]
        }
    };
    for j0 in 0..n {
        for j1 in 0..n1 {
            let c = amp(j0, j1);
            match observable {
                Observable::A0 => {
                    if j0 >= 1 {
                        let f = R::from_usize(j0).unwrap().sqrt();
                        acc = acc + amp(j0 - 1, j1).conj() * c * Cplx::new(f, R::zero());
                    }
                }
                Observable::A0Sq => {
                    if j0 >= 2 {
                        let f = R::from_usize(j0 * (j0 - 1)).unwrap().sqrt();
                        acc = acc + amp(j0 - 2, j1).conj() * c * Cplx::new(f, R::zero());
                    }
                }
                Observable::N0 => {
                    acc = acc + Cplx::new(R::from_usize(j0).unwrap() * c.norm_sqr(), R::zero());
                }
                Observable::N1 => {
                    acc = acc + Cplx::new(R::from_usize(j1).unwrap() * c.norm_sqr(), R::zero());
                }
            }
        }
    }
    Ok(acc)
}

/// Comparison of the brute-force `<n0>` on an even cat against the two
/// closed-form candidates.  The truncated sum is authoritative; the report
/// exists so the disagreement with the squared-tanh print stays visible.
#[derive(Debug, Clone)]
pub struct OccupationReport<R> {
    pub brute_force: R,
    pub tanh_form: R,
    pub tanh_sq_form: R,
}

impl<R: Real> OccupationReport<R> {
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("n0_brute_force = {}", self.brute_force),
            format!("n0_alpha2_tanh = {}", self.tanh_form),
            format!("n0_alpha2_tanh_sq = {}", self.tanh_sq_form),
            format!(
                "published_tanh_sq_discrepancy = {}",
                (self.brute_force - self.tanh_sq_form).abs()
            ),
        ]
    }
}

pub fn occupation_report<R: Real>(alpha: Cplx<R>, cutoff: usize) -> Result<OccupationReport<R>> {
    let state = even_coherent(alpha, cutoff)?;
    let brute = expectation(&state, Observable::N0)?.re;
    let a2 = alpha.norm_sqr();
    Ok(OccupationReport {
        brute_force: brute,
        tanh_form: a2 * a2.tanh(),
        tanh_sq_form: a2 * a2.tanh() * a2.tanh(),
    })
}

/// Which engineered vacuum a compressed Hamiltonian is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateFamily {
    /// Lowest mode in a coherent state (Bogoliubov c-number substitution).
    Coherent,
    /// Lowest mode in an even coherent (cat) state.
    EvenCat,
    /// Lowest two modes in the even-branch superposition.
    TwoMode,
}

/// Coefficient fields of a Hamiltonian compressed to an engineered subspace.
#[derive(Debug, Clone)]
pub struct CompressedCoefficients<R> {
    pub family: StateFamily,
    /// Intermode vacuum energy (two-mode family; zero otherwise).
    pub vacuum_energy: R,
    /// One-body potential multiplying the fluctuation density.
    pub one_body: ScalarField<R>,
    /// Magnitude of the pair-exchange coefficient.
    pub pair_magnitude: ScalarField<R>,
    /// Pair-exchange phase `xi(x)`.
    pub pair_phase: ScalarField<R>,
    /// Local sine-Gordon coupling field `lambda(x) >= 0`.
    pub coupling: ScalarField<R>,
}

/// Build the compressed-Hamiltonian coefficient fields for a state family on
/// given mode functions.
pub fn compressed_coefficients<R: Real>(
    family: StateFamily,
    phi0: &ComplexField<R>,
    phi1: Option<&ComplexField<R>>,
    v0: R,
    alpha: Cplx<R>,
    w: Cplx<R>,
) -> Result<CompressedCoefficients<R>> {
    let norm0 = phi0.norm();
    if !(norm0 > R::zero()) {
        return Err(CoreError::Degenerate("phi0 has zero norm".into()));
    }
    let a2 = alpha.norm_sqr();

    match family {
        StateFamily::Coherent | StateFamily::EvenCat => {
            let density = phi0.magnitude_sq();
            let occupancy = match family {
                // <n0> = |alpha|^2 for the coherent family; the cat family
                // one-body term carries the squared-tanh factor as published.
                StateFamily::Coherent => a2,
                _ => a2 * a2.tanh() * a2.tanh(),
            };
            let one_body = density.map(|n| R::of(2.0) * v0 * occupancy * n);
            let pair_magnitude = density.map(|n| v0 * a2 * n);
            let pair_phase = phi0.phase().map(|p| R::of(2.0) * p);
            let coupling = density.map(|n| R::of(2.0) * v0 * a2 * n);
            Ok(CompressedCoefficients {
                family,
                vacuum_energy: R::zero(),
                one_body,
                pair_magnitude,
                pair_phase,
                coupling,
            })
        }
        StateFamily::TwoMode => {
            let phi1 = phi1.ok_or(CoreError::InvalidParameter {
                name: "phi1",
                reason: "two-mode family needs a second mode function".into(),
            })?;
            let norm1 = phi1.norm();
            if !(norm1 > R::zero()) {
                return Err(CoreError::Degenerate("phi1 has zero norm".into()));
            }
            let overlap = phi0.inner(phi1)?.norm() / (norm0 * norm1);
            if overlap.to_f64().unwrap_or(1.0) > ORTHO_LIMIT {
                return Err(CoreError::NotOrthogonal {
                    overlap: overlap.to_f64().unwrap_or(1.0),
                    limit: ORTHO_LIMIT,
                });
            }

            let nf = two_mode_norm(w, alpha);
            let w2 = w.norm_sqr();
            let d0 = phi0.magnitude_sq();
            let d1 = phi1.magnitude_sq();
            // G as published: 2 V0 |a|^2 tanh|a|^2 (|phi0|^2 + |w phi1|^2) / N
            let one_body = d0.zip(&d1, |n0, n1| {
                R::of(2.0) * v0 * a2 * a2.tanh() * (n0 + w2 * n1) / nf
            })?;

            // pair-exchange field from s(x) = phi0^2 + |w|^2 phi1^2
            let grid = phi0.grid().clone();
            let ns = grid.cell_count();
            let mut mag = Vec::with_capacity(ns);
            let mut phase = Vec::with_capacity(ns);
            for i in 0..ns {
                let s = phi0.values()[i] * phi0.values()[i]
                    + Cplx::new(w2, R::zero()) * phi1.values()[i] * phi1.values()[i];
                mag.push(v0 * a2 * s.norm() / nf);
                phase.push(s.arg());
            }
            let mut mask = None;
            if phi0.mask().is_some() || phi1.mask().is_some() {
                let m: Vec<bool> = (0..ns)
                    .map(|i| phi0.is_masked(i) || phi1.is_masked(i))
                    .collect();
                mask = Some(m);
            }
            let pair_magnitude = ScalarField::new(grid.clone(), mag.clone(), mask.clone())?;
            let pair_phase = ScalarField::new(grid.clone(), phase, mask.clone())?;
            let coupling = ScalarField::new(grid, mag, mask)?;

            // intermode vacuum term: (2 V0 |a|^4 e^{-|a|^2} / N) * int 2 Re(w phi1^2 conj(phi0)^2)
            let cross_vals: Vec<R> = (0..ns)
                .map(|i| {
                    let p0 = phi0.values()[i];
                    let p1 = phi1.values()[i];
                    let z = w * p1 * p1 * (p0 * p0).conj();
                    R::of(2.0) * z.re
                })
                .collect();
            let cross = ScalarField::new(phi0.grid().clone(), cross_vals, None)?;
            let vacuum_energy =
                R::of(2.0) * v0 * a2 * a2 * (-a2).exp() / nf * cross.integrate();

            Ok(CompressedCoefficients {
                family,
                vacuum_energy,
                one_body,
                pair_magnitude,
                pair_phase,
                coupling,
            })
        }
    }
}

/// Truncation deficit of the even-cat norm at a given cutoff (decreases
/// monotonically with the cutoff).
pub fn even_cat_norm_deficit<R: Real>(alpha: Cplx<R>, cutoff: usize) -> f64 {
    let a2 = alpha.norm_sqr().to_f64().unwrap_or(0.0);
    let (trunc, full) = even_norm_sums(a2, cutoff);
    (1.0 - trunc / full).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundaryRule, SpacetimeGrid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    type C = Cplx<f64>;

    /// Brute-force <n0> of the even cat from the raw truncated sum, written
    /// independently of the FockState machinery.
    fn brute_force_cat_n0(alpha: f64, cutoff: usize) -> f64 {
        let a2 = alpha * alpha;
        let mut term = 4.0; // 4 |a|^{2j} / j! at j = 0
        let mut norm = 0.0;
        let mut number = 0.0;
        for j in 0..=cutoff {
            if j > 0 {
                term *= a2 / j as f64;
            }
            if j % 2 == 0 {
                norm += term;
                number += j as f64 * term;
            }
        }
        number / norm
    }

    #[test]
    fn even_cat_annihilator_expectation_is_exactly_zero() {
        for alpha in [0.3, 1.0, 2.5] {
            let s = even_coherent(C::new(alpha, 0.4), default_cutoff(C::new(alpha, 0.4))).unwrap();
            let a0 = expectation(&s, Observable::A0).unwrap();
            assert_eq!(a0.re, 0.0);
            assert_eq!(a0.im, 0.0);
        }
    }

    #[test]
    fn even_cat_is_a0_squared_eigenstate_below_cutoff() {
        for alpha in [0.5, 1.0, 2.0, 3.0] {
            let s = even_coherent(C::new(alpha, 0.0), 60).unwrap();
            assert!(
                s.a0_sq_eigen_residual() < 1e-10,
                "alpha={alpha}: residual {}",
                s.a0_sq_eigen_residual()
            );
        }
    }

    #[test]
    fn even_cat_occupation_matches_brute_force_and_tanh() {
        let alpha = 1.0;
        let s = even_coherent(C::new(alpha, 0.0), 60).unwrap();
        let n0 = expectation(&s, Observable::N0).unwrap().re;
        let brute = brute_force_cat_n0(alpha, 60);
        assert_relative_eq!(n0, brute, epsilon = 1e-13);
        assert_relative_eq!(n0, 1.0f64.tanh(), epsilon = 1e-12);

        let s2 = even_coherent(C::new(2.0, 0.0), 60).unwrap();
        let n0 = expectation(&s2, Observable::N0).unwrap().re;
        assert_relative_eq!(n0, 4.0 * 4.0f64.tanh(), epsilon = 1e-12);
    }

    #[test]
    fn published_squared_tanh_disagrees_with_brute_force() {
        let rep = occupation_report(C::new(1.0, 0.0), 60).unwrap();
        assert_relative_eq!(rep.brute_force, rep.tanh_form, epsilon = 1e-12);
        assert!((rep.brute_force - rep.tanh_sq_form).abs() > 0.1);
    }

    #[test]
    fn truncation_error_when_cutoff_too_small() {
        assert!(matches!(
            even_coherent(C::new(3.0, 0.0), 12),
            Err(CoreError::Truncation { .. })
        ));
    }

    #[test]
    fn two_mode_with_zero_w_is_cat_times_vacuum() {
        let alpha = C::new(1.2, 0.0);
        let s2 = two_mode_superposition(alpha, C::new(0.0, 0.0), 40).unwrap();
        let s1 = even_coherent(alpha, 40).unwrap();
        for j0 in 0..=40 {
            for j1 in 0..=40 {
                let a = s2.amp(j0, j1);
                if j1 == 0 {
                    assert_relative_eq!(a.re, s1.amp(j0, 0).re, epsilon = 1e-13);
                    assert_relative_eq!(a.im, s1.amp(j0, 0).im, epsilon = 1e-13);
                } else {
                    assert_eq!(a.norm_sqr(), 0.0);
                }
            }
        }
    }

    #[test]
    fn closed_form_norm_matches_truncated_inner_product() {
        // direct inner product of the unnormalized amplitudes at cutoff 60
        let alpha = C::new(1.0, 0.0);
        let w = C::new(0.5, 0.0);
        let cutoff = 60;
        let branch = even_branch(alpha, cutoff);
        let mut norm_sq = 0.0;
        for j0 in 1..=cutoff {
            norm_sq += branch[j0].norm_sqr();
        }
        for j1 in 1..=cutoff {
            norm_sq += (w * branch[j1]).norm_sqr();
        }
        norm_sq += (branch[0] + w * branch[0]).norm_sqr();
        let weighted = (-alpha.norm_sqr()).exp() * norm_sq;
        assert_relative_eq!(weighted, two_mode_norm(w, alpha), epsilon = 1e-10);

        let state = two_mode_superposition(alpha, w, cutoff).unwrap();
        assert_relative_eq!(state.norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_mode_norm_closed_forms() {
        let a = C::new(0.9, 0.3);
        let nf = two_mode_norm(C::new(0.0, 0.0), a);
        assert_relative_eq!(nf, 2.0 * (1.0 + (-2.0 * a.norm_sqr()).exp()), epsilon = 1e-14);

        let w = C::new(0.4, -1.1);
        let nf0 = two_mode_norm(w, C::new(0.0, 0.0));
        assert_relative_eq!(nf0, 4.0 * (C::new(1.0, 0.0) + w).norm_sqr(), epsilon = 1e-14);
    }

    #[test]
    fn branch_exchange_matches_conjugated_weight_on_unit_circle() {
        let alpha = C::new(1.1, 0.0);
        let w = C::from_polar(1.0, 0.7);
        let s = two_mode_superposition(alpha, w, 30).unwrap();
        let sc = two_mode_superposition(alpha, w.conj(), 30).unwrap();
        for j0 in 0..=30 {
            for j1 in 0..=30 {
                assert_relative_eq!(
                    s.amp(j0, j1).norm(),
                    sc.amp(j1, j0).norm(),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn dominant_branch_empties_mode_zero() {
        let s = two_mode_superposition(C::new(1.0, 0.0), C::new(1e8, 0.0), 40).unwrap();
        let n0 = expectation(&s, Observable::N0).unwrap().re;
        assert!(n0 < 1e-12, "n0 = {n0}");
        let n1 = expectation(&s, Observable::N1).unwrap().re;
        assert_relative_eq!(n1, 1.0f64.tanh(), epsilon = 1e-6);
    }

    #[test]
    fn norm_deficit_decreases_with_cutoff() {
        let a = C::new(2.0, 0.0);
        let mut last = f64::INFINITY;
        for cutoff in [40, 44, 48, 52, 56, 60] {
            let d = even_cat_norm_deficit(a, cutoff);
            assert!(d <= last);
            last = d;
        }
    }

    proptest! {
        #[test]
        fn parity_superselection_zeroes_odd_amplitudes(re in 0.1f64..2.0, im in -1.0f64..1.0) {
            let alpha = C::new(re, im);
            let s = even_coherent(alpha, default_cutoff(alpha)).unwrap();
            for j in (1..=s.cutoff()).step_by(2) {
                prop_assert_eq!(s.amp(j, 0).norm_sqr(), 0.0);
            }
        }
    }

    // ---- compressed coefficients ----------------------------------------

    fn mode_grid() -> std::sync::Arc<SpacetimeGrid<f64>> {
        SpacetimeGrid::centered(
            &[16, 16],
            &[0.5, 0.5],
            &[BoundaryRule::FixedValue, BoundaryRule::FixedValue],
        )
        .unwrap()
    }

    /// Orthogonal pair on the grid: odd and even lowest box-like modes.
    fn mode_pair() -> (ComplexField<f64>, ComplexField<f64>) {
        let g = mode_grid();
        let phi0 = ComplexField::from_fn(g.clone(), |x| {
            C::from_polar((-0.1 * (x[0] * x[0] + x[1] * x[1])).exp(), 0.3 * x[0])
        });
        let phi1 = ComplexField::from_fn(g, |x| {
            C::from_polar(x[0] * (-0.1 * (x[0] * x[0] + x[1] * x[1])).exp(), 0.3 * x[0])
        });
        (phi0, phi1)
    }

    #[test]
    fn mode_pair_is_orthogonal() {
        let (phi0, phi1) = mode_pair();
        let ov = phi0.inner(&phi1).unwrap().norm() / (phi0.norm() * phi1.norm());
        assert!(ov < 1e-12, "overlap {ov}");
    }

    #[test]
    fn small_w_pair_phase_approaches_doubled_mode_phase() {
        let (phi0, phi1) = mode_pair();
        let cc = compressed_coefficients(
            StateFamily::TwoMode,
            &phi0,
            Some(&phi1),
            1.0,
            C::new(1.0, 0.0),
            C::new(1e-9, 0.0),
        )
        .unwrap();
        let doubled = phi0.phase().map(|p| 2.0 * p);
        for i in 0..doubled.values().len() {
            let mut d = cc.pair_phase.values()[i] - doubled.values()[i];
            let tau = 2.0 * std::f64::consts::PI;
            d -= tau * (d / tau).round();
            assert!(d.abs() < 1e-6, "cell {i}: {d}");
        }
    }

    #[test]
    fn zero_alpha_kills_interaction_fields() {
        let (phi0, phi1) = mode_pair();
        let cc = compressed_coefficients(
            StateFamily::TwoMode,
            &phi0,
            Some(&phi1),
            1.3,
            C::new(0.0, 0.0),
            C::new(0.7, 0.0),
        )
        .unwrap();
        assert_eq!(cc.one_body.max_abs(), 0.0);
        assert_eq!(cc.pair_magnitude.max_abs(), 0.0);
        assert_eq!(cc.coupling.max_abs(), 0.0);
        assert_eq!(cc.vacuum_energy, 0.0);
    }

    #[test]
    fn large_alpha_suppresses_intermode_vacuum_term() {
        let (phi0, phi1) = mode_pair();
        let cc = compressed_coefficients(
            StateFamily::TwoMode,
            &phi0,
            Some(&phi1),
            1.0,
            C::new(6.0, 0.0),
            C::new(0.8, 0.0),
        )
        .unwrap();
        let one_body_scale = cc.one_body.integrate();
        assert!(one_body_scale > 0.0);
        assert!(cc.vacuum_energy.abs() < 1e-12 * one_body_scale);
    }

    #[test]
    fn pair_phase_is_gauge_covariant() {
        let (phi0, phi1) = mode_pair();
        let chi = 0.9;
        let rot = C::from_polar(1.0, chi);
        let g = phi0.grid().clone();
        let phi0r = ComplexField::from_fn(g.clone(), |x| {
            let i = phi0.grid().ravel(&[
                ((x[0] - phi0.grid().origin()[0]) / 0.5).round() as usize,
                ((x[1] - phi0.grid().origin()[1]) / 0.5).round() as usize,
            ]);
            phi0.values()[i] * rot
        });
        let phi1r = ComplexField::from_fn(g, |x| {
            let i = phi1.grid().ravel(&[
                ((x[0] - phi1.grid().origin()[0]) / 0.5).round() as usize,
                ((x[1] - phi1.grid().origin()[1]) / 0.5).round() as usize,
            ]);
            phi1.values()[i] * rot
        });
        let args = (1.0, C::new(1.0, 0.0), C::new(0.5, 0.2));
        let base = compressed_coefficients(StateFamily::TwoMode, &phi0, Some(&phi1), args.0, args.1, args.2).unwrap();
        let rotd = compressed_coefficients(StateFamily::TwoMode, &phi0r, Some(&phi1r), args.0, args.1, args.2).unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        for i in 0..base.pair_phase.values().len() {
            let mut d = rotd.pair_phase.values()[i] - base.pair_phase.values()[i] - 2.0 * chi;
            d -= tau * (d / tau).round();
            assert!(d.abs() < 1e-12, "cell {i}: {d}");
        }
    }

    #[test]
    fn non_orthogonal_modes_are_rejected() {
        let (phi0, _) = mode_pair();
        let err = compressed_coefficients(
            StateFamily::TwoMode,
            &phi0,
            Some(&phi0.clone()),
            1.0,
            C::new(1.0, 0.0),
            C::new(0.5, 0.0),
        );
        assert!(matches!(err, Err(CoreError::NotOrthogonal { .. })));
    }

    #[test]
    fn zero_mode_function_is_degenerate() {
        let g = mode_grid();
        let zero = ComplexField::from_fn(g, |_| C::new(0.0, 0.0));
        assert!(matches!(
            compressed_coefficients(StateFamily::EvenCat, &zero, None, 1.0, C::new(1.0, 0.0), C::new(0.0, 0.0)),
            Err(CoreError::Degenerate(_))
        ));
    }

    #[test]
    fn coupling_field_is_nonnegative() {
        let (phi0, phi1) = mode_pair();
        for family in [StateFamily::Coherent, StateFamily::EvenCat, StateFamily::TwoMode] {
            let cc = compressed_coefficients(
                family,
                &phi0,
                Some(&phi1),
                0.8,
                C::new(1.4, 0.0),
                C::new(0.6, 0.1),
            )
            .unwrap();
            assert!(cc.coupling.values().iter().all(|&v| v >= 0.0));
        }
    }
}
