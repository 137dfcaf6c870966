//! Text export formats: grid dumps, CSV tables, P2 graymaps and key=value
//! manifests.  All writers are deterministic (shortest-roundtrip float
//! formatting, fixed ordering) so bundles can be hash-compared.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::grid::{BoundaryRule, ScalarField, SpacetimeGrid};
use crate::Real;

fn join<R: std::fmt::Display>(items: impl IntoIterator<Item = R>) -> String {
    items
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Render a scalar field in the grid dump format: a `# GRID ...` header line
/// followed by one row-major value per line, `NaN` for masked cells.
pub fn format_grid_dump<R: Real>(field: &ScalarField<R>) -> String {
    let g = field.grid();
    let mut out = String::new();
    let _ = write!(
        out,
        "# GRID d={} n={} dx={} origin={} bc={}",
        g.spatial_dims(),
        join(g.shape().iter()),
        join(g.spacing().iter()),
        join(g.origin().iter()),
        g.bc().iter().map(|b| b.code()).collect::<Vec<_>>().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
    );
    if let Some(t) = g.tau() {
        let _ = write!(out, " tau={},{}", t.points, t.beta_hbar);
    }
    out.push('\n');
    for (i, v) in field.values().iter().enumerate() {
        if field.is_masked(i) {
            out.push_str("NaN\n");
        } else {
            let _ = writeln!(out, "{v}");
        }
    }
    out
}

pub fn write_grid_dump<R: Real>(path: &Path, field: &ScalarField<R>) -> Result<()> {
    fs::write(path, format_grid_dump(field))?;
    Ok(())
}

/// Parse a grid dump produced by [`format_grid_dump`].
pub fn read_grid_dump<R: Real>(text: &str) -> Result<ScalarField<R>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CoreError::Config("empty grid dump".into()))?;
    let header = header
        .strip_prefix("# GRID ")
        .ok_or_else(|| CoreError::Config("missing `# GRID` header".into()))?;

    let mut d = None;
    let mut n: Vec<usize> = vec![];
    let mut dx: Vec<R> = vec![];
    let mut origin: Vec<R> = vec![];
    let mut bc: Vec<BoundaryRule> = vec![];
    let mut tau: Option<(usize, R)> = None;

    let parse_r = |s: &str| -> Result<R> {
        s.parse::<f64>()
            .map(R::of)
            .map_err(|e| CoreError::Config(format!("bad float `{s}`: {e}")))
    };

    for token in header.split_whitespace() {
        let (key, val) = token
            .split_once('=')
            .ok_or_else(|| CoreError::Config(format!("bad header token `{token}`")))?;
        match key {
            "d" => {
                d = Some(
                    val.parse::<usize>()
                        .map_err(|e| CoreError::Config(format!("bad d: {e}")))?,
                )
            }
            "n" => {
                n = val
                    .split(',')
                    .map(|s| s.parse().map_err(|e| CoreError::Config(format!("bad n: {e}"))))
                    .collect::<Result<_>>()?
            }
            "dx" => dx = val.split(',').map(parse_r).collect::<Result<_>>()?,
            "origin" => origin = val.split(',').map(parse_r).collect::<Result<_>>()?,
            "bc" => {
                bc = val
                    .split(',')
                    .map(|s| BoundaryRule::from_code(s.chars().next().unwrap_or('?')))
                    .collect::<Result<_>>()?
            }
            "tau" => {
                let (p, b) = val
                    .split_once(',')
                    .ok_or_else(|| CoreError::Config("bad tau token".into()))?;
                tau = Some((
                    p.parse()
                        .map_err(|e| CoreError::Config(format!("bad tau points: {e}")))?,
                    parse_r(b)?,
                ));
            }
            other => return Err(CoreError::Config(format!("unknown header key `{other}`"))),
        }
    }
    let d = d.ok_or_else(|| CoreError::Config("header missing d".into()))?;
    if n.len() != d {
        return Err(CoreError::Config("header n arity mismatch".into()));
    }

    let mut grid: Arc<SpacetimeGrid<R>> = SpacetimeGrid::new(&n, &dx, &origin, &bc)?;
    if let Some((points, beta_hbar)) = tau {
        grid = grid.with_tau_axis(points, beta_hbar)?;
    }

    let mut values = Vec::with_capacity(grid.cell_count());
    let mut mask = vec![false; grid.cell_count()];
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let i = values.len();
        if i >= grid.cell_count() {
            return Err(CoreError::Config("too many values in grid dump".into()));
        }
        let v: f64 = line
            .parse()
            .map_err(|e| CoreError::Config(format!("bad value `{line}`: {e}")))?;
        if v.is_nan() {
            mask[i] = true;
            values.push(R::zero());
        } else {
            values.push(R::of(v));
        }
    }
    if values.len() != grid.cell_count() {
        return Err(CoreError::Config(format!(
            "grid dump has {} values, expected {}",
            values.len(),
            grid.cell_count()
        )));
    }
    let mask = if mask.iter().any(|&m| m) { Some(mask) } else { None };
    ScalarField::new(grid, values, mask)
}

/// Write a header line plus comma-separated rows.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Portable graymap (P2).  `value_to_gray` documents the linear mapping in a
/// comment line so external tools can invert it.
pub fn write_pgm(
    path: &Path,
    width: usize,
    height: usize,
    gray: &[u8],
    mapping_note: &str,
) -> Result<()> {
    if gray.len() != width * height {
        return Err(CoreError::InvalidParameter {
            name: "gray",
            reason: "pixel count must equal width*height".into(),
        });
    }
    let mut out = String::new();
    let _ = writeln!(out, "P2");
    let _ = writeln!(out, "# {mapping_note}");
    let _ = writeln!(out, "{width} {height}");
    let _ = writeln!(out, "255");
    for row in gray.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Plain `key = value` manifest, one pair per line, order preserved.
pub fn write_manifest(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    fs::write(path, out)?;
    Ok(())
}

/// FNV-1a over a directory's files (sorted by name); used by determinism
/// checks on scenario bundles.
pub fn hash_dir(path: &Path) -> Result<u64> {
    let mut names: Vec<_> = fs::read_dir(path)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    names.sort();
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for p in names {
        if p.is_file() {
            eat(p.file_name().unwrap().to_string_lossy().as_bytes());
            eat(&fs::read(&p)?);
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_roundtrip_preserves_values_and_mask() {
        let g = SpacetimeGrid::new(
            &[3, 4],
            &[0.5, 0.25],
            &[-1.0, 0.0],
            &[BoundaryRule::FixedValue, BoundaryRule::Periodic],
        )
        .unwrap();
        let mut mask = vec![false; 12];
        mask[7] = true;
        let vals: Vec<f64> = (0..12).map(|i| i as f64 * 0.3 - 1.0).collect();
        let f = ScalarField::new(g, vals.clone(), Some(mask.clone())).unwrap();
        let text = format_grid_dump(&f);
        assert!(text.starts_with("# GRID d=2 n=3,4 dx=0.5,0.25 origin=-1,0 bc=f,p"));
        let back: ScalarField<f64> = read_grid_dump(&text).unwrap();
        assert_eq!(back.grid().shape(), &[3, 4]);
        for i in 0..12 {
            if mask[i] {
                assert!(back.is_masked(i));
            } else {
                assert_eq!(back.values()[i], vals[i]);
            }
        }
    }

    #[test]
    fn dump_rejects_garbage() {
        assert!(read_grid_dump::<f64>("").is_err());
        assert!(read_grid_dump::<f64>("# GRID d=1 n=2,3 dx=1 origin=0 bc=p\n1\n").is_err());
    }
}
