//! Analogue-spacetime tensors built from a background: the `f`-tensor of the
//! quadratic phase-fluctuation action, the contravariant/covariant acoustic
//! metric, and ergosurface extraction with marching squares.
//!
//! Conventions: per-cell symmetric `(d+1) x (d+1)` matrices, index 0 is time.
//! `sqrt(-g)` follows from the defining relation `sqrt(-g) g^{mu nu} =
//! f^{mu nu}`, giving `(c_s^{2d} / V0^{d+1})^{1/(d-1)}` for d in {2, 3} (the
//! published `n0^2 / m^2 c_s` at d = 3).  In one spatial dimension the
//! conformal factor is undetermined by that relation, so callers use the
//! f-tensor directly.

use std::sync::Arc;

use crate::background::Background;
use crate::error::{CoreError, Result};
use crate::grid::{gradient_wrapped, ScalarField, SpacetimeGrid, VectorField};
use crate::Real;

/// Per-cell symmetric matrix field, packed upper-triangular row-major.
#[derive(Debug, Clone)]
pub struct SymMatField<R> {
    grid: Arc<SpacetimeGrid<R>>,
    dim: usize,
    values: Vec<R>,
    mask: Vec<bool>,
}

impl<R: Real> SymMatField<R> {
    fn zeros(grid: Arc<SpacetimeGrid<R>>, dim: usize) -> Self {
        let ncomp = dim * (dim + 1) / 2;
        let cells = grid.cell_count();
        Self {
            grid,
            dim,
            values: vec![R::zero(); ncomp * cells],
            mask: vec![false; cells],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &Arc<SpacetimeGrid<R>> {
        &self.grid
    }

    pub fn is_masked(&self, cell: usize) -> bool {
        self.mask[cell]
    }

    fn comp_index(&self, mut mu: usize, mut nu: usize) -> usize {
        if mu > nu {
            std::mem::swap(&mut mu, &mut nu);
        }
        // offset of row mu in the packed upper triangle
        mu * self.dim - mu * (mu + 1) / 2 + nu
    }

    pub fn get(&self, cell: usize, mu: usize, nu: usize) -> R {
        self.values[self.comp_index(mu, nu) * self.grid.cell_count() + cell]
    }

    fn set(&mut self, cell: usize, mu: usize, nu: usize, v: R) {
        let k = self.comp_index(mu, nu);
        self.values[k * self.grid.cell_count() + cell] = v;
    }

    /// Dense row-major matrix of one cell.
    pub fn matrix(&self, cell: usize) -> Vec<R> {
        let d = self.dim;
        let mut m = vec![R::zero(); d * d];
        for mu in 0..d {
            for nu in 0..d {
                m[mu * d + nu] = self.get(cell, mu, nu);
            }
        }
        m
    }

    /// One scalar field per component for the grid-dump export;
    /// returns `(mu, nu, field)` triples.
    pub fn component_fields(&self) -> Vec<(usize, usize, ScalarField<R>)> {
        let mut out = Vec::new();
        for mu in 0..self.dim {
            for nu in mu..self.dim {
                let vals: Vec<R> = (0..self.grid.cell_count())
                    .map(|c| self.get(c, mu, nu))
                    .collect();
                let f = ScalarField::new(self.grid.clone(), vals, Some(self.mask.clone()))
                    .expect("component field");
                out.push((mu, nu, f));
            }
        }
        out
    }
}

/// Acoustic metric data on a background grid.
#[derive(Debug, Clone)]
pub struct AcsMetric<R> {
    pub contravariant: SymMatField<R>,
    pub covariant: SymMatField<R>,
    pub sqrt_neg_g: ScalarField<R>,
    pub c_s: ScalarField<R>,
    pub flow: VectorField<R>,
    pub dim: usize,
}

fn flow_and_c2<R: Real>(bg: &Background<R>) -> Result<(VectorField<R>, Vec<R>, Vec<bool>)> {
    let flow = bg.flow()?;
    let cells = bg.grid.cell_count();
    let mut c2 = vec![R::zero(); cells];
    let mut mask = vec![false; cells];
    for i in 0..cells {
        c2[i] = bg.sound_speed_sq(i);
        mask[i] = bg.is_masked(i) || flow.is_masked(i) || !(c2[i] > R::zero());
    }
    Ok((flow, c2, mask))
}

/// Quadratic-action tensor `f^{mu nu}`:
/// `f^{00} = -1/V0`, `f^{0j} = u_j/V0`, `f^{ij} = (c_s^2 d_ij - u_i u_j)/V0`.
pub fn build_f_tensor<R: Real>(bg: &Background<R>) -> Result<SymMatField<R>> {
    let d = bg.grid.spatial_dims();
    let (flow, c2, mask) = flow_and_c2(bg)?;
    let mut f = SymMatField::zeros(bg.grid.clone(), d + 1);
    let inv_v0 = R::one() / bg.v0;
    for cell in 0..bg.grid.cell_count() {
        if mask[cell] {
            continue;
        }
        f.set(cell, 0, 0, -inv_v0);
        for i in 0..d {
            let ui = flow.get(i, cell);
            f.set(cell, 0, i + 1, ui * inv_v0);
            for j in i..d {
                let uj = flow.get(j, cell);
                let kron = if i == j { c2[cell] } else { R::zero() };
                f.set(cell, i + 1, j + 1, (kron - ui * uj) * inv_v0);
            }
        }
    }
    f.mask = mask;
    Ok(f)
}

/// Closed-form determinant `det f = -c_s^{2d} / V0^{d+1}`.
pub fn f_determinant_closed_form<R: Real>(c_s_sq: R, v0: R, d: usize) -> R {
    -c_s_sq.powi(d as i32) / v0.powi(d as i32 + 1)
}

/// Conformal factor solving `sqrt(-g) g^{mu nu} = f^{mu nu}`:
/// `sqrt(-g) = (c_s^{2d}/V0^{d+1})^{1/(d-1)}`, i.e. `n0^2/(m^2 c_s)` at d=3.
pub fn sqrt_neg_g_closed_form<R: Real>(c_s_sq: R, v0: R, d: usize) -> R {
    (c_s_sq.powi(d as i32) / v0.powi(d as i32 + 1)).powf(R::one() / R::from_usize(d - 1).unwrap())
}

/// Build contravariant and covariant acoustic metrics.  One spatial
/// dimension has no conformal factor fixed by the defining relation; use the
/// f-tensor path instead.
pub fn build_metric<R: Real>(bg: &Background<R>) -> Result<AcsMetric<R>> {
    let d = bg.grid.spatial_dims();
    if d < 2 {
        return Err(CoreError::Dimension {
            got: d,
            reason: "the conformal factor degenerates at d=1; evolve with the f-tensor directly",
        });
    }
    let f = build_f_tensor(bg)?;
    let (flow, c2, mask) = flow_and_c2(bg)?;
    let cells = bg.grid.cell_count();

    let mut contra = SymMatField::zeros(bg.grid.clone(), d + 1);
    let mut cova = SymMatField::zeros(bg.grid.clone(), d + 1);
    let mut sqrt_g = vec![R::zero(); cells];
    let mut c_s = vec![R::zero(); cells];

    for cell in 0..cells {
        if mask[cell] {
            continue;
        }
        let sg = sqrt_neg_g_closed_form(c2[cell], bg.v0, d);
        sqrt_g[cell] = sg;
        c_s[cell] = c2[cell].sqrt();

        for mu in 0..=d {
            for nu in mu..=d {
                contra.set(cell, mu, nu, f.get(cell, mu, nu) / sg);
            }
        }

        // covariant closed form: (V0 sg / c^2) [[-c^2 + |u|^2, u], [u, I]]
        let scale = bg.v0 * sg / c2[cell];
        let mut u_sq = R::zero();
        for i in 0..d {
            u_sq += flow.get(i, cell) * flow.get(i, cell);
        }
        cova.set(cell, 0, 0, scale * (-c2[cell] + u_sq));
        for i in 0..d {
            cova.set(cell, 0, i + 1, scale * flow.get(i, cell));
            for j in i..d {
                let kron = if i == j { R::one() } else { R::zero() };
                cova.set(cell, i + 1, j + 1, scale * kron);
            }
        }
    }
    contra.mask = mask.clone();
    cova.mask = mask.clone();

    Ok(AcsMetric {
        contravariant: contra,
        covariant: cova,
        sqrt_neg_g: ScalarField::new(bg.grid.clone(), sqrt_g, Some(mask.clone()))?,
        c_s: ScalarField::new(bg.grid.clone(), c_s, Some(mask))?,
        flow,
        dim: d,
    })
}

impl<R: Real> AcsMetric<R> {
    /// Max-norm of `g^{mu a} g_{a nu} - delta` over unmasked cells.
    pub fn max_inverse_residual(&self) -> R {
        let d = self.dim + 1;
        let mut worst = R::zero();
        for cell in 0..self.contravariant.grid.cell_count() {
            if self.contravariant.is_masked(cell) {
                continue;
            }
            for mu in 0..d {
                for nu in 0..d {
                    let mut acc = R::zero();
                    for a in 0..d {
                        acc += self.contravariant.get(cell, mu, a) * self.covariant.get(cell, a, nu);
                    }
                    let target = if mu == nu { R::one() } else { R::zero() };
                    worst = worst.max((acc - target).abs());
                }
            }
        }
        worst
    }

    /// Max-norm of `sqrt(-g) g^{mu nu} - f^{mu nu}` over unmasked cells.
    pub fn max_defining_residual(&self, f: &SymMatField<R>) -> R {
        let d = self.dim + 1;
        let mut worst = R::zero();
        for cell in 0..self.contravariant.grid.cell_count() {
            if self.contravariant.is_masked(cell) || f.is_masked(cell) {
                continue;
            }
            let sg = self.sqrt_neg_g.values()[cell];
            for mu in 0..d {
                for nu in mu..d {
                    let lhs = sg * self.contravariant.get(cell, mu, nu);
                    worst = worst.max((lhs - f.get(cell, mu, nu)).abs());
                }
            }
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// Ergosurface
// ---------------------------------------------------------------------------

/// Which normalization the ergosurface condition uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityUnit {
    /// `|u|^2 >= c_s^2` with `u = v - grad(theta_H0)/m` in crate units.
    Physical,
    /// Unitless `|grad theta_H0|^2 >= 1/2` with velocities in units of
    /// `2 c_s` (the rendering convention of the vortex-superposition plots).
    FigureOne,
}

#[derive(Debug, Clone)]
pub struct ErgoRegion<R> {
    /// True where the flow is at or above the local sound speed.
    pub mask: Vec<bool>,
    /// Level function whose zero set is the ergosurface.
    pub level: ScalarField<R>,
    /// Level-set polylines (2-D grids only), physical coordinates.
    pub polylines: Vec<Vec<(R, R)>>,
}

/// Extract the ergoregion mask and, on 2-D grids, the ergosurface polylines.
pub fn ergosurface<R: Real>(bg: &Background<R>, unit: VelocityUnit) -> Result<ErgoRegion<R>> {
    let cells = bg.grid.cell_count();
    let mut level = vec![R::zero(); cells];
    let mut invalid = vec![false; cells];
    match unit {
        VelocityUnit::Physical => {
            let (flow, c2, mask) = flow_and_c2(bg)?;
            for i in 0..cells {
                invalid[i] = mask[i];
                if !mask[i] {
                    level[i] = flow.norm_sq_at(i) - c2[i];
                }
            }
        }
        VelocityUnit::FigureOne => {
            let gt = gradient_wrapped(&bg.theta_h0, Some(R::PI() * bg.hbar))?;
            for i in 0..cells {
                invalid[i] = bg.is_masked(i) || gt.is_masked(i);
                if !invalid[i] {
                    level[i] = gt.norm_sq_at(i) - R::of(0.5);
                }
            }
        }
    }
    let mask: Vec<bool> = (0..cells)
        .map(|i| !invalid[i] && level[i] >= R::zero())
        .collect();
    let level_field = ScalarField::new(bg.grid.clone(), level, Some(invalid))?;
    let polylines = if bg.grid.spatial_dims() == 2 {
        marching_squares(&level_field, R::zero())?
    } else {
        Vec::new()
    };
    Ok(ErgoRegion {
        mask,
        level: level_field,
        polylines,
    })
}

/// Rows `x,y,segment_id` for the polyline CSV export.
pub fn polyline_rows<R: Real>(polylines: &[Vec<(R, R)>]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (id, line) in polylines.iter().enumerate() {
        for (x, y) in line {
            rows.push(vec![x.to_string(), y.to_string(), id.to_string()]);
        }
    }
    rows
}

/// Standard marching squares on a 2-D scalar field: per-cell segments from
/// linear edge interpolation, stitched into polylines.  Cells with masked
/// corners are skipped.
pub fn marching_squares<R: Real>(
    field: &ScalarField<R>,
    iso: R,
) -> Result<Vec<Vec<(R, R)>>> {
    let grid = field.grid();
    if grid.spatial_dims() != 2 {
        return Err(CoreError::Dimension {
            got: grid.spatial_dims(),
            reason: "marching squares works on 2-D grids",
        });
    }
    let (n0, n1) = (grid.shape()[0], grid.shape()[1]);
    let (dx0, dx1) = (grid.spacing()[0], grid.spacing()[1]);
    let (o0, o1) = (grid.origin()[0], grid.origin()[1]);

    let value = |i: usize, j: usize| field.values()[grid.ravel(&[i, j])] - iso;
    let masked = |i: usize, j: usize| field.is_masked(grid.ravel(&[i, j]));

    let mut segments: Vec<((R, R), (R, R))> = Vec::new();
    for i in 0..n0 - 1 {
        for j in 0..n1 - 1 {
            if masked(i, j) || masked(i + 1, j) || masked(i, j + 1) || masked(i + 1, j + 1) {
                continue;
            }
            // corners counterclockwise: c0=(i,j), c1=(i+1,j), c2=(i+1,j+1), c3=(i,j+1)
            let v = [
                value(i, j),
                value(i + 1, j),
                value(i + 1, j + 1),
                value(i, j + 1),
            ];
            let inside = |x: R| x >= R::zero();
            let case = (inside(v[0]) as usize)
                | (inside(v[1]) as usize) << 1
                | (inside(v[2]) as usize) << 2
                | (inside(v[3]) as usize) << 3;
            if case == 0 || case == 15 {
                continue;
            }
            let x0 = o0 + dx0 * R::from_usize(i).unwrap();
            let y0 = o1 + dx1 * R::from_usize(j).unwrap();
            // edge midpoints by linear interpolation; edge k joins corner k
            // and corner (k+1) % 4
            let corner = [
                (x0, y0),
                (x0 + dx0, y0),
                (x0 + dx0, y0 + dx1),
                (x0, y0 + dx1),
            ];
            let edge_point = |k: usize| -> (R, R) {
                let a = k;
                let b = (k + 1) % 4;
                let t = v[a] / (v[a] - v[b]);
                (
                    corner[a].0 + (corner[b].0 - corner[a].0) * t,
                    corner[a].1 + (corner[b].1 - corner[a].1) * t,
                )
            };
            let degenerate_tol = (dx0.min(dx1)) * R::of(1e-9);
            let mut emit = |ea: usize, eb: usize| {
                let (a, b) = (edge_point(ea), edge_point(eb));
                // contours through grid nodes produce zero-length segments
                if quantize(a, degenerate_tol) != quantize(b, degenerate_tol) {
                    segments.push((a, b));
                }
            };
            match case {
                1 | 14 => emit(3, 0),
                2 | 13 => emit(0, 1),
                3 | 12 => emit(3, 1),
                4 | 11 => emit(1, 2),
                6 | 9 => emit(0, 2),
                7 | 8 => emit(3, 2),
                5 | 10 => {
                    // saddle: disambiguate with the cell-center average
                    let center = (v[0] + v[1] + v[2] + v[3]) / R::of(4.0);
                    let flip = (case == 5) == (center >= R::zero());
                    if flip {
                        emit(0, 1);
                        emit(2, 3);
                    } else {
                        emit(3, 0);
                        emit(1, 2);
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    Ok(stitch_segments(segments, grid.min_spacing() * R::of(1e-9)))
}

fn quantize<R: Real>(p: (R, R), tol: R) -> (i64, i64) {
    (
        (p.0 / tol).round().to_f64().unwrap() as i64,
        (p.1 / tol).round().to_f64().unwrap() as i64,
    )
}

fn stitch_segments<R: Real>(segments: Vec<((R, R), (R, R))>, tol: R) -> Vec<Vec<(R, R)>> {
    use std::collections::HashMap;
    let n = segments.len();
    let mut by_endpoint: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        by_endpoint.entry(quantize(*a, tol)).or_default().push(k);
        by_endpoint.entry(quantize(*b, tol)).or_default().push(k);
    }
    let mut used = vec![false; n];
    let mut polylines = Vec::new();
    for start in 0..n {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (a, b) = segments[start];
        let mut line = vec![a, b];
        // extend forward from the tail, then backward from the head
        for pass in 0..2 {
            loop {
                let tip = *line.last().unwrap();
                let key = quantize(tip, tol);
                let next = by_endpoint
                    .get(&key)
                    .and_then(|cands| cands.iter().find(|&&k| !used[k]).copied());
                match next {
                    Some(k) => {
                        used[k] = true;
                        let (p, q) = segments[k];
                        if quantize(p, tol) == key {
                            line.push(q);
                        } else {
                            line.push(p);
                        }
                    }
                    None => break,
                }
            }
            if pass == 0 {
                line.reverse();
            }
        }
        polylines.push(line);
    }
    polylines
}
