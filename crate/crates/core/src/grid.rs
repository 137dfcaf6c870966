//! Uniform rectangular grids, scalar/vector fields and finite-difference
//! stencils shared by every other module.
//!
//! Conventions: lengths in healing lengths, row-major storage with the
//! imaginary-time axis (when present) slowest.  Second-order central
//! differences in the interior; boundary rows follow the per-axis rule
//! (periodic wrap, one-sided second-order for fixed-value, mirrored for
//! zero-normal-derivative).  `laplacian` is `divergence(gradient(..))` on the
//! discrete level so summation-by-parts identities hold exactly on periodic
//! axes.  Masked cells never feed a stencil: any output touching a masked
//! cell is masked instead of extrapolated.

use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::{Cplx, Real};

/// Boundary rule of one spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryRule {
    Periodic,
    /// Boundary values are data; derivatives fall back to one-sided stencils.
    FixedValue,
    /// Mirror symmetry across the boundary node (zero normal derivative).
    ZeroNormalDerivative,
}

impl BoundaryRule {
    pub fn code(self) -> char {
        match self {
            BoundaryRule::Periodic => 'p',
            BoundaryRule::FixedValue => 'f',
            BoundaryRule::ZeroNormalDerivative => 'z',
        }
    }

    pub fn from_code(c: char) -> Result<Self> {
        match c {
            'p' => Ok(BoundaryRule::Periodic),
            'f' => Ok(BoundaryRule::FixedValue),
            'z' => Ok(BoundaryRule::ZeroNormalDerivative),
            other => Err(CoreError::Config(format!("unknown boundary code `{other}`"))),
        }
    }
}

/// Periodic imaginary-time axis of extent `beta_hbar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauAxis<R> {
    pub points: usize,
    pub beta_hbar: R,
}

/// Uniform rectangular spatial grid (d in 1..=3) plus an optional periodic
/// imaginary-time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacetimeGrid<R> {
    shape: Vec<usize>,
    spacing: Vec<R>,
    origin: Vec<R>,
    bc: Vec<BoundaryRule>,
    tau: Option<TauAxis<R>>,
}

impl<R: Real> SpacetimeGrid<R> {
    pub fn new(
        shape: &[usize],
        spacing: &[R],
        origin: &[R],
        bc: &[BoundaryRule],
    ) -> Result<Arc<Self>> {
        let d = shape.len();
        if d == 0 || d > 3 {
            return Err(CoreError::Dimension {
                got: d,
                reason: "spatial dimension must be 1, 2 or 3",
            });
        }
        if spacing.len() != d || origin.len() != d || bc.len() != d {
            return Err(CoreError::InvalidParameter {
                name: "grid",
                reason: "shape, spacing, origin and bc must have equal length".into(),
            });
        }
        for (axis, (&n, &dx)) in shape.iter().zip(spacing).enumerate() {
            if n < 2 {
                return Err(CoreError::AxisTooSmall {
                    axis,
                    points: n,
                    required: 2,
                });
            }
            if !(dx > R::zero()) || !dx.is_finite() {
                return Err(CoreError::InvalidParameter {
                    name: "spacing",
                    reason: format!("axis {axis} spacing must be positive and finite"),
                });
            }
        }
        Ok(Arc::new(Self {
            shape: shape.to_vec(),
            spacing: spacing.to_vec(),
            origin: origin.to_vec(),
            bc: bc.to_vec(),
            tau: None,
        }))
    }

    /// Centered grid: origin chosen so coordinates span `[-L/2, L/2]` per axis.
    pub fn centered(shape: &[usize], spacing: &[R], bc: &[BoundaryRule]) -> Result<Arc<Self>> {
        let origin: Vec<R> = shape
            .iter()
            .zip(spacing)
            .map(|(&n, &dx)| -dx * R::from_usize(n - 1).unwrap() / R::of(2.0))
            .collect();
        Self::new(shape, spacing, &origin, bc)
    }

    /// Attach a periodic imaginary-time axis (trace boundary condition).
    pub fn with_tau_axis(&self, points: usize, beta_hbar: R) -> Result<Arc<Self>> {
        if points < 2 {
            return Err(CoreError::AxisTooSmall {
                axis: 0,
                points,
                required: 2,
            });
        }
        if !(beta_hbar > R::zero()) {
            return Err(CoreError::InvalidParameter {
                name: "beta_hbar",
                reason: "imaginary-time extent must be positive".into(),
            });
        }
        let mut g = self.clone();
        g.tau = Some(TauAxis { points, beta_hbar });
        Ok(Arc::new(g))
    }

    pub fn spatial_dims(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[R] {
        &self.spacing
    }

    pub fn origin(&self) -> &[R] {
        &self.origin
    }

    pub fn bc(&self) -> &[BoundaryRule] {
        &self.bc
    }

    pub fn tau(&self) -> Option<TauAxis<R>> {
        self.tau
    }

    pub fn tau_spacing(&self) -> Option<R> {
        self.tau
            .map(|t| t.beta_hbar / R::from_usize(t.points).unwrap())
    }

    pub fn spatial_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn cell_count(&self) -> usize {
        self.spatial_count() * self.tau.map_or(1, |t| t.points)
    }

    pub fn min_spacing(&self) -> R {
        self.spacing
            .iter()
            .copied()
            .fold(R::infinity(), |a, b| a.min(b))
    }

    /// Volume of one spatial cell.
    pub fn cell_volume(&self) -> R {
        self.spacing
            .iter()
            .copied()
            .fold(R::one(), |a, b| a * b)
    }

    /// Spatial part of a (possibly tau-extended) cell index.
    pub fn spatial_of(&self, cell: usize) -> usize {
        cell % self.spatial_count()
    }

    /// Decompose a spatial index into per-axis indices.
    pub fn unravel(&self, mut s: usize) -> Vec<usize> {
        let d = self.shape.len();
        let mut idx = vec![0; d];
        for a in (0..d).rev() {
            idx[a] = s % self.shape[a];
            s /= self.shape[a];
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        let mut s = 0;
        for (a, &i) in idx.iter().enumerate() {
            s = s * self.shape[a] + i;
        }
        s
    }

    /// Physical coordinates of a spatial index, computed relative to the
    /// axis midpoint so centered grids get exactly antisymmetric coordinate
    /// pairs (mask symmetry checks rely on this).
    pub fn position(&self, spatial: usize) -> Vec<R> {
        self.unravel(spatial)
            .iter()
            .enumerate()
            .map(|(a, &i)| {
                let c = R::from_usize(self.shape[a] - 1).unwrap() / R::of(2.0);
                let center = self.origin[a] + self.spacing[a] * c;
                center + self.spacing[a] * (R::from_usize(i).unwrap() - c)
            })
            .collect()
    }

    /// Trapezoid weight of a spatial cell (1 everywhere on periodic axes).
    pub fn quadrature_weight(&self, spatial: usize) -> R {
        let idx = self.unravel(spatial);
        let mut w = R::one();
        for (a, &i) in idx.iter().enumerate() {
            if self.bc[a] != BoundaryRule::Periodic && (i == 0 || i == self.shape[a] - 1) {
                w = w * R::of(0.5);
            }
        }
        w
    }

    /// Sizes of all axes, slowest first (tau leads when present).
    fn full_axes(&self) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.shape.len() + 1);
        if let Some(t) = self.tau {
            v.push(t.points);
        }
        v.extend_from_slice(&self.shape);
        v
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.shape == other.shape && self.tau.map(|t| t.points) == other.tau.map(|t| t.points)
    }
}

fn check_same_grid<R: Real>(
    a: &SpacetimeGrid<R>,
    b: &SpacetimeGrid<R>,
    context: &'static str,
) -> Result<()> {
    if a.same_layout(b) {
        Ok(())
    } else {
        Err(CoreError::GridMismatch { context })
    }
}

/// Scalar samples on a grid, immutable once built.  `mask[i] == true` marks
/// an invalid cell (vortex core, branch-cut neighborhood, ...).
#[derive(Debug, Clone)]
pub struct ScalarField<R> {
    grid: Arc<SpacetimeGrid<R>>,
    values: Vec<R>,
    mask: Option<Vec<bool>>,
}

impl<R: Real> ScalarField<R> {
    pub fn new(grid: Arc<SpacetimeGrid<R>>, values: Vec<R>, mask: Option<Vec<bool>>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(CoreError::InvalidParameter {
                name: "values",
                reason: format!(
                    "expected {} values, got {}",
                    grid.cell_count(),
                    values.len()
                ),
            });
        }
        if let Some(m) = &mask {
            if m.len() != values.len() {
                return Err(CoreError::InvalidParameter {
                    name: "mask",
                    reason: "mask length must match value length".into(),
                });
            }
        }
        for (i, v) in values.iter().enumerate() {
            let masked = mask.as_ref().map_or(false, |m| m[i]);
            if !masked && !v.is_finite() {
                return Err(CoreError::InvalidParameter {
                    name: "values",
                    reason: format!("non-finite value at cell {i}"),
                });
            }
        }
        Ok(Self { grid, values, mask })
    }

    pub fn constant(grid: Arc<SpacetimeGrid<R>>, c: R) -> Self {
        let n = grid.cell_count();
        Self {
            grid,
            values: vec![c; n],
            mask: None,
        }
    }

    /// Build from spatial coordinates.  On tau-extended grids the same
    /// spatial profile is repeated on every time slice.
    pub fn from_fn(grid: Arc<SpacetimeGrid<R>>, f: impl Fn(&[R]) -> R) -> Self {
        let ns = grid.spatial_count();
        let mut values = Vec::with_capacity(grid.cell_count());
        let spatial: Vec<R> = (0..ns).map(|s| f(&grid.position(s))).collect();
        let slices = grid.cell_count() / ns;
        for _ in 0..slices {
            values.extend_from_slice(&spatial);
        }
        Self {
            grid,
            values,
            mask: None,
        }
    }

    pub fn grid(&self) -> &Arc<SpacetimeGrid<R>> {
        &self.grid
    }

    pub fn values(&self) -> &[R] {
        &self.values
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.mask.as_ref().map_or(false, |m| m[i])
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.values.len() {
            return Err(CoreError::InvalidParameter {
                name: "mask",
                reason: "mask length must match value length".into(),
            });
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            mask: self.mask.clone(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(R, R) -> R) -> Result<Self> {
        check_same_grid(&self.grid, &other.grid, "zip")?;
        Ok(Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            mask: union_mask(&self.mask, &other.mask),
        })
    }

    /// Trapezoid integral over the spatial domain (tau-extended fields are
    /// integrated per slice and summed without the tau measure).
    pub fn integrate(&self) -> R {
        let ns = self.grid.spatial_count();
        let dv = self.grid.cell_volume();
        let mut acc = R::zero();
        for (i, &v) in self.values.iter().enumerate() {
            if self.is_masked(i) {
                continue;
            }
            acc += v * self.grid.quadrature_weight(i % ns);
        }
        acc * dv
    }

    /// Quadrature-weighted inner product over unmasked cells.
    pub fn inner(&self, other: &Self) -> Result<R> {
        check_same_grid(&self.grid, &other.grid, "inner")?;
        let ns = self.grid.spatial_count();
        let dv = self.grid.cell_volume();
        let mut acc = R::zero();
        for i in 0..self.values.len() {
            if self.is_masked(i) || other.is_masked(i) {
                continue;
            }
            acc += self.values[i] * other.values[i] * self.grid.quadrature_weight(i % ns);
        }
        Ok(acc * dv)
    }

    pub fn max_abs(&self) -> R {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.is_masked(*i))
            .map(|(_, v)| v.abs())
            .fold(R::zero(), |a, b| a.max(b))
    }
}

fn union_mask(a: &Option<Vec<bool>>, b: &Option<Vec<bool>>) -> Option<Vec<bool>> {
    match (a, b) {
        (None, None) => None,
        (Some(m), None) | (None, Some(m)) => Some(m.clone()),
        (Some(x), Some(y)) => Some(x.iter().zip(y).map(|(&p, &q)| p || q).collect()),
    }
}

/// Complex samples on a grid (carriers for mode functions).
#[derive(Debug, Clone)]
pub struct ComplexField<R> {
    grid: Arc<SpacetimeGrid<R>>,
    values: Vec<Cplx<R>>,
    mask: Option<Vec<bool>>,
}

impl<R: Real> ComplexField<R> {
    pub fn from_fn(grid: Arc<SpacetimeGrid<R>>, f: impl Fn(&[R]) -> Cplx<R>) -> Self {
        let ns = grid.spatial_count();
        let spatial: Vec<Cplx<R>> = (0..ns).map(|s| f(&grid.position(s))).collect();
        let slices = grid.cell_count() / ns;
        let mut values = Vec::with_capacity(grid.cell_count());
        for _ in 0..slices {
            values.extend_from_slice(&spatial);
        }
        Self {
            grid,
            values,
            mask: None,
        }
    }

    pub fn from_parts(re: &ScalarField<R>, im: &ScalarField<R>) -> Result<Self> {
        check_same_grid(re.grid(), im.grid(), "complex parts")?;
        Ok(Self {
            grid: re.grid.clone(),
            values: re
                .values
                .iter()
                .zip(&im.values)
                .map(|(&a, &b)| Cplx::new(a, b))
                .collect(),
            mask: union_mask(&re.mask, &im.mask),
        })
    }

    pub fn grid(&self) -> &Arc<SpacetimeGrid<R>> {
        &self.grid
    }

    pub fn values(&self) -> &[Cplx<R>] {
        &self.values
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.mask.as_ref().map_or(false, |m| m[i])
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.values.len() {
            return Err(CoreError::InvalidParameter {
                name: "mask",
                reason: "mask length must match value length".into(),
            });
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn magnitude_sq(&self) -> ScalarField<R> {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.norm_sqr()).collect(),
            mask: self.mask.clone(),
        }
    }

    pub fn phase(&self) -> ScalarField<R> {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.arg()).collect(),
            mask: self.mask.clone(),
        }
    }

    pub fn real(&self) -> ScalarField<R> {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.re).collect(),
            mask: self.mask.clone(),
        }
    }

    pub fn imag(&self) -> ScalarField<R> {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.im).collect(),
            mask: self.mask.clone(),
        }
    }

    /// Quadrature-weighted L2 inner product `<self, other>` (conjugate-linear
    /// in the first slot).
    pub fn inner(&self, other: &Self) -> Result<Cplx<R>> {
        check_same_grid(&self.grid, &other.grid, "inner")?;
        let ns = self.grid.spatial_count();
        let dv = self.grid.cell_volume();
        let mut acc = Cplx::new(R::zero(), R::zero());
        for i in 0..self.values.len() {
            if self.is_masked(i) || other.is_masked(i) {
                continue;
            }
            let w = self.grid.quadrature_weight(i % ns);
            acc = acc + self.values[i].conj() * other.values[i] * Cplx::new(w, R::zero());
        }
        Ok(acc * Cplx::new(dv, R::zero()))
    }

    pub fn norm(&self) -> R {
        self.inner(self).map(|v| v.re.sqrt()).unwrap_or(R::zero())
    }
}

/// Vector samples, stored component-major: `values[c * cells + i]`.
#[derive(Debug, Clone)]
pub struct VectorField<R> {
    grid: Arc<SpacetimeGrid<R>>,
    components: usize,
    values: Vec<R>,
    mask: Option<Vec<bool>>,
}

impl<R: Real> VectorField<R> {
    pub fn zeros(grid: Arc<SpacetimeGrid<R>>) -> Self {
        let d = grid.spatial_dims();
        let n = grid.cell_count();
        Self {
            grid,
            components: d,
            values: vec![R::zero(); d * n],
            mask: None,
        }
    }

    pub fn from_fn(grid: Arc<SpacetimeGrid<R>>, f: impl Fn(&[R], usize) -> R) -> Self {
        let d = grid.spatial_dims();
        let ns = grid.spatial_count();
        let slices = grid.cell_count() / ns;
        let mut values = Vec::with_capacity(d * grid.cell_count());
        for c in 0..d {
            let spatial: Vec<R> = (0..ns).map(|s| f(&grid.position(s), c)).collect();
            for _ in 0..slices {
                values.extend_from_slice(&spatial);
            }
        }
        Self {
            grid,
            components: d,
            values,
            mask: None,
        }
    }

    pub fn from_components(fields: Vec<ScalarField<R>>) -> Result<Self> {
        let grid = fields
            .first()
            .map(|f| f.grid.clone())
            .ok_or(CoreError::Degenerate("no components".into()))?;
        let mut mask: Option<Vec<bool>> = None;
        let mut values = Vec::with_capacity(fields.len() * grid.cell_count());
        for f in &fields {
            check_same_grid(&grid, &f.grid, "vector components")?;
            mask = union_mask(&mask, &f.mask);
            values.extend_from_slice(&f.values);
        }
        Ok(Self {
            components: fields.len(),
            grid,
            values,
            mask,
        })
    }

    pub fn grid(&self) -> &Arc<SpacetimeGrid<R>> {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn component(&self, c: usize) -> ScalarField<R> {
        let n = self.grid.cell_count();
        ScalarField {
            grid: self.grid.clone(),
            values: self.values[c * n..(c + 1) * n].to_vec(),
            mask: self.mask.clone(),
        }
    }

    pub fn get(&self, c: usize, cell: usize) -> R {
        self.values[c * self.grid.cell_count() + cell]
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.mask.as_ref().map_or(false, |m| m[i])
    }

    pub fn norm_sq_at(&self, cell: usize) -> R {
        let n = self.grid.cell_count();
        (0..self.components)
            .map(|c| self.values[c * n + cell])
            .fold(R::zero(), |acc, v| acc + v * v)
    }

    pub fn max_norm(&self) -> R {
        (0..self.grid.cell_count())
            .filter(|&i| !self.is_masked(i))
            .map(|i| self.norm_sq_at(i))
            .fold(R::zero(), |a, b| a.max(b))
            .sqrt()
    }

    pub fn scale(&self, s: R) -> Self {
        Self {
            grid: self.grid.clone(),
            components: self.components,
            values: self.values.iter().map(|&v| v * s).collect(),
            mask: self.mask.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Stencils
// ---------------------------------------------------------------------------

/// Derivative of `line` values along one axis, written into `out`.
/// `diffs[j] = wrap(line[j+1] - line[j])`, with the wrap-around difference
/// appended on periodic axes.  Wrapping (phase fields) maps each adjacent
/// difference into `(-period/2, period/2]`.
fn line_derivative<R: Real>(
    line: &[R],
    out: &mut [R],
    h: R,
    bc: BoundaryRule,
    wrap: Option<R>,
) {
    let n = line.len();
    let two_h = h * R::of(2.0);
    let w = |d: R| match wrap {
        Some(p) => d - p * (d / p).round(),
        None => d,
    };
    let mut diffs = Vec::with_capacity(n);
    for j in 0..n - 1 {
        diffs.push(w(line[j + 1] - line[j]));
    }
    if bc == BoundaryRule::Periodic {
        diffs.push(w(line[0] - line[n - 1]));
    }
    for i in 1..n - 1 {
        out[i] = (diffs[i] + diffs[i - 1]) / two_h;
    }
    match bc {
        BoundaryRule::Periodic => {
            out[0] = (diffs[0] + diffs[n - 1]) / two_h;
            out[n - 1] = (diffs[n - 1] + diffs[n - 2]) / two_h;
        }
        BoundaryRule::FixedValue => {
            // one-sided second order: (-3 f0 + 4 f1 - f2) / 2h = (3 d0 - d1)/2h
            out[0] = (R::of(3.0) * diffs[0] - diffs[1]) / two_h;
            out[n - 1] = (R::of(3.0) * diffs[n - 2] - diffs[n - 3]) / two_h;
        }
        BoundaryRule::ZeroNormalDerivative => {
            out[0] = R::zero();
            out[n - 1] = R::zero();
        }
    }
}

/// Apply a line operation along full-axis `axis` (0 = tau when present).
fn for_each_line<R: Real>(
    grid: &SpacetimeGrid<R>,
    axis: usize,
    mut op: impl FnMut(&mut dyn Iterator<Item = usize>),
) {
    let axes = grid.full_axes();
    let n_axis = axes[axis];
    let stride: usize = axes[axis + 1..].iter().product();
    let outer: usize = axes[..axis].iter().product();
    for b in 0..outer {
        for inner in 0..stride {
            let base = b * n_axis * stride + inner;
            let mut it = (0..n_axis).map(move |j| base + j * stride);
            op(&mut it);
        }
    }
}

fn axis_requirement<R: Real>(grid: &SpacetimeGrid<R>, required: usize) -> Result<()> {
    for (axis, &n) in grid.shape.iter().enumerate() {
        if n < required {
            return Err(CoreError::AxisTooSmall {
                axis,
                points: n,
                required,
            });
        }
    }
    Ok(())
}

fn derivative_along<R: Real>(
    f: &ScalarField<R>,
    full_axis: usize,
    h: R,
    bc: BoundaryRule,
    wrap: Option<R>,
) -> (Vec<R>, Option<Vec<bool>>) {
    let n = f.values.len();
    let mut out = vec![R::zero(); n];
    let mut out_mask = f.mask.clone();
    for_each_line(&f.grid, full_axis, |cells| {
        let idx: Vec<usize> = cells.collect();
        let line: Vec<R> = idx.iter().map(|&i| f.values[i]).collect();
        let mut dline = vec![R::zero(); line.len()];
        line_derivative(&line, &mut dline, h, bc, wrap);
        for (k, &i) in idx.iter().enumerate() {
            out[i] = dline[k];
        }
        if let Some(m) = &f.mask {
            // widen the mask by the stencil support
            let masked: Vec<bool> = idx.iter().map(|&i| m[i]).collect();
            let n_line = idx.len();
            let om = out_mask.as_mut().unwrap();
            for k in 0..n_line {
                let prev = if k == 0 {
                    if bc == BoundaryRule::Periodic {
                        masked[n_line - 1]
                    } else {
                        masked.get(1).copied().unwrap_or(false) || masked.get(2).copied().unwrap_or(false)
                    }
                } else {
                    masked[k - 1]
                };
                let next = if k == n_line - 1 {
                    if bc == BoundaryRule::Periodic {
                        masked[0]
                    } else {
                        masked.get(n_line.wrapping_sub(2)).copied().unwrap_or(false)
                            || masked.get(n_line.wrapping_sub(3)).copied().unwrap_or(false)
                    }
                } else {
                    masked[k + 1]
                };
                if masked[k] || prev || next {
                    om[idx[k]] = true;
                }
            }
        }
    });
    if !out.iter().all(|v| v.is_finite()) {
        // only masked cells may be non-finite; zap them so downstream sums stay clean
        for (i, v) in out.iter_mut().enumerate() {
            if !v.is_finite() {
                *v = R::zero();
                if let Some(m) = out_mask.as_mut() {
                    m[i] = true;
                }
            }
        }
    }
    (out, out_mask)
}

/// Second-order central gradient over the spatial axes.
pub fn gradient<R: Real>(f: &ScalarField<R>) -> Result<VectorField<R>> {
    gradient_wrapped(f, None)
}

/// Gradient of a phase-like field: adjacent differences are wrapped into
/// `(-period/2, period/2]` before differencing, removing branch-cut jumps.
pub fn gradient_wrapped<R: Real>(f: &ScalarField<R>, period: Option<R>) -> Result<VectorField<R>> {
    let grid = &f.grid;
    axis_requirement(grid, 3)?;
    let d = grid.spatial_dims();
    let tau_off = if grid.tau.is_some() { 1 } else { 0 };
    let n = f.values.len();
    let mut values = Vec::with_capacity(d * n);
    let mut mask: Option<Vec<bool>> = None;
    for a in 0..d {
        let (vals, m) = derivative_along(f, a + tau_off, grid.spacing[a], grid.bc[a], period);
        values.extend(vals);
        mask = union_mask(&mask, &m);
    }
    Ok(VectorField {
        grid: grid.clone(),
        components: d,
        values,
        mask,
    })
}

/// Divergence of a vector field with the same stencil conventions.
pub fn divergence<R: Real>(u: &VectorField<R>) -> Result<ScalarField<R>> {
    let grid = &u.grid;
    axis_requirement(grid, 3)?;
    if u.components != grid.spatial_dims() {
        return Err(CoreError::GridMismatch {
            context: "divergence needs one component per spatial axis",
        });
    }
    let tau_off = if grid.tau.is_some() { 1 } else { 0 };
    let n = grid.cell_count();
    let mut acc = vec![R::zero(); n];
    let mut mask = u.mask.clone();
    for a in 0..u.components {
        let comp = u.component(a);
        let (vals, m) = derivative_along(&comp, a + tau_off, grid.spacing[a], grid.bc[a], None);
        for i in 0..n {
            acc[i] += vals[i];
        }
        mask = union_mask(&mask, &m);
    }
    Ok(ScalarField {
        grid: grid.clone(),
        values: acc,
        mask,
    })
}

/// `divergence(gradient(f))`: exactly the composition, so the discrete
/// summation-by-parts identity `<f, lap g> = -<grad f, grad g>` holds to
/// machine precision on periodic axes.
pub fn laplacian<R: Real>(f: &ScalarField<R>) -> Result<ScalarField<R>> {
    axis_requirement(&f.grid, 4)?;
    divergence(&gradient(f)?)
}

/// Wrapped-phase variant of [`laplacian`].
pub fn laplacian_wrapped<R: Real>(f: &ScalarField<R>, period: Option<R>) -> Result<ScalarField<R>> {
    axis_requirement(&f.grid, 4)?;
    divergence(&gradient_wrapped(f, period)?)
}

/// Compact three-point second derivative summed over spatial axes.  Used by
/// diffusive solvers where the wide `div(grad ..)` stencil would decouple
/// even and odd sublattices.
pub fn laplacian_compact<R: Real>(f: &ScalarField<R>) -> Result<ScalarField<R>> {
    let grid = &f.grid;
    axis_requirement(grid, 4)?;
    let tau_off = if grid.tau.is_some() { 1 } else { 0 };
    let n = f.values.len();
    let mut acc = vec![R::zero(); n];
    let mask = f.mask.clone();
    for a in 0..grid.spatial_dims() {
        let h2 = grid.spacing[a] * grid.spacing[a];
        let bc = grid.bc[a];
        for_each_line(&f.grid, a + tau_off, |cells| {
            let idx: Vec<usize> = cells.collect();
            let m = idx.len();
            let v = |k: usize| f.values[idx[k]];
            for k in 0..m {
                let dd = match (k, bc) {
                    (0, BoundaryRule::Periodic) => v(m - 1) - R::of(2.0) * v(0) + v(1),
                    (0, BoundaryRule::FixedValue) => {
                        R::of(2.0) * v(0) - R::of(5.0) * v(1) + R::of(4.0) * v(2) - v(3)
                    }
                    (0, BoundaryRule::ZeroNormalDerivative) => R::of(2.0) * (v(1) - v(0)),
                    (k, BoundaryRule::Periodic) if k == m - 1 => {
                        v(m - 2) - R::of(2.0) * v(m - 1) + v(0)
                    }
                    (k, BoundaryRule::FixedValue) if k == m - 1 => {
                        R::of(2.0) * v(m - 1) - R::of(5.0) * v(m - 2) + R::of(4.0) * v(m - 3)
                            - v(m - 4)
                    }
                    (k, BoundaryRule::ZeroNormalDerivative) if k == m - 1 => {
                        R::of(2.0) * (v(m - 2) - v(m - 1))
                    }
                    (k, _) => v(k - 1) - R::of(2.0) * v(k) + v(k + 1),
                };
                acc[idx[k]] += dd / h2;
            }
        });
    }
    Ok(ScalarField {
        grid: grid.clone(),
        values: acc,
        mask,
    })
}

/// Central derivative along the periodic imaginary-time axis.
pub fn tau_derivative<R: Real>(f: &ScalarField<R>) -> Result<ScalarField<R>> {
    let grid = &f.grid;
    let tau = grid.tau.ok_or(CoreError::InvalidParameter {
        name: "grid",
        reason: "tau_derivative needs an imaginary-time axis".into(),
    })?;
    if tau.points < 3 {
        return Err(CoreError::AxisTooSmall {
            axis: 0,
            points: tau.points,
            required: 3,
        });
    }
    let h = grid.tau_spacing().unwrap();
    let (values, mask) = derivative_along(f, 0, h, BoundaryRule::Periodic, None);
    Ok(ScalarField {
        grid: grid.clone(),
        values,
        mask,
    })
}
