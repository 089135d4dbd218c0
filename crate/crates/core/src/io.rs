//! Text formats: CDF-1 fields and geometry rasters, boundary-trace CSV,
//! admissible-pair directories and `key=value` diagnostics.
//!
//! CDF-1 is a header `cdf1 <nx> <ny> <h> <ox> <oy>` followed by one line per
//! lattice row (bottom row first), `nan` for undefined nodes. Floats are
//! written in shortest round-trip form, so output is byte-identical for
//! identical inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CdiiError, Result};
use crate::field::{BoundaryTrace, Grid, InclusionGeometry, ScalarField};
use crate::least_gradient::ReconstructionResult;
use crate::synthesis::{AdmissiblePair, Provenance};

fn header(g: &Grid) -> String {
    format!(
        "cdf1 {} {} {} {} {}\n",
        g.nx, g.ny, g.h, g.origin.0, g.origin.1
    )
}

fn write_rows(g: &Grid, mut cell: impl FnMut(usize) -> String) -> String {
    let mut s = header(g);
    for j in 0..g.ny {
        let row: Vec<String> = (0..g.nx).map(|i| cell(g.idx(i, j))).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn field_to_cdf(u: &ScalarField) -> String {
    write_rows(&u.grid, |k| match u.get(k) {
        Some(v) => format!("{v}"),
        None => "nan".to_string(),
    })
}

/// Header grid and the raw tokens of every row.
fn parse_cdf(text: &str) -> Result<(Grid, Vec<String>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines
        .next()
        .ok_or_else(|| CdiiError::Parse("empty CDF-1 file".into()))?;
    let t: Vec<&str> = head.split_whitespace().collect();
    if t.len() != 6 || t[0] != "cdf1" {
        return Err(CdiiError::Parse(format!("bad CDF-1 header '{head}'")));
    }
    let int = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| CdiiError::Parse(format!("bad integer '{s}' in header")))
    };
    let real = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| CdiiError::Parse(format!("bad number '{s}' in header")))
    };
    let grid = Grid::new(
        int(t[1])?,
        int(t[2])?,
        real(t[3])?,
        (real(t[4])?, real(t[5])?),
    )?;
    let mut tokens = Vec::with_capacity(grid.len());
    let mut rows = 0;
    for line in lines {
        let row: Vec<&str> = line.split_whitespace().collect();
        if row.len() != grid.nx {
            return Err(CdiiError::Parse(format!(
                "row {rows} has {} values, expected {}",
                row.len(),
                grid.nx
            )));
        }
        tokens.extend(row.into_iter().map(str::to_string));
        rows += 1;
    }
    if rows != grid.ny {
        return Err(CdiiError::Parse(format!(
            "found {rows} rows, expected {}",
            grid.ny
        )));
    }
    Ok((grid, tokens))
}

pub fn field_from_cdf(text: &str) -> Result<ScalarField> {
    let (grid, tokens) = parse_cdf(text)?;
    let values = tokens
        .iter()
        .map(|t| {
            if t.eq_ignore_ascii_case("nan") {
                Ok(f64::NAN)
            } else {
                t.parse::<f64>()
                    .map_err(|_| CdiiError::Parse(format!("bad value '{t}'")))
                    .and_then(|v| {
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(CdiiError::Parse(format!("non-finite value '{t}'")))
                        }
                    })
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    ScalarField::from_values(grid, values)
}

pub fn geometry_to_cdf(geo: &InclusionGeometry) -> String {
    let codes = geo.codes();
    write_rows(&geo.grid, |k| codes[k].to_string())
}

pub fn geometry_from_cdf(text: &str) -> Result<InclusionGeometry> {
    let (grid, tokens) = parse_cdf(text)?;
    let codes = tokens
        .iter()
        .map(|t| {
            t.parse::<u8>()
                .map_err(|_| CdiiError::Parse(format!("bad geometry code '{t}'")))
        })
        .collect::<Result<Vec<u8>>>()?;
    InclusionGeometry::from_codes(grid, &codes)
}

/// `node_index,x,y,f` rows in node order.
pub fn trace_to_csv(grid: &Grid, f: &BoundaryTrace) -> String {
    let mut s = String::from("node_index,x,y,f\n");
    for (&k, &v) in f.nodes.iter().zip(&f.values) {
        let (x, y) = grid.node_coords(k);
        let _ = writeln!(s, "{k},{x},{y},{v}");
    }
    s
}

/// Reads a trace and checks it covers exactly the geometry's boundary.
pub fn trace_from_csv(text: &str, geo: &InclusionGeometry) -> Result<BoundaryTrace> {
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("node_index")) {
            continue;
        }
        let t: Vec<&str> = line.split(',').map(str::trim).collect();
        if t.len() != 4 {
            return Err(CdiiError::Parse(format!(
                "trace line {}: expected 4 columns",
                i + 1
            )));
        }
        let k = t[0].parse::<usize>().map_err(|_| {
            CdiiError::Parse(format!("trace line {}: bad node index '{}'", i + 1, t[0]))
        })?;
        let v = t[3].parse::<f64>().ok().filter(|v| v.is_finite());
        let v = v.ok_or_else(|| {
            CdiiError::Parse(format!("trace line {}: bad value '{}'", i + 1, t[3]))
        })?;
        rows.push((k, v));
    }
    rows.sort_by_key(|r| r.0);
    let trace = BoundaryTrace {
        nodes: rows.iter().map(|r| r.0).collect(),
        values: rows.iter().map(|r| r.1).collect(),
    };
    trace.check(geo)?;
    Ok(trace)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CdiiError::Parse(format!("{}: {e}", path.display())))
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    field_from_cdf(&read(path)?).map_err(|e| annotate(path, e))
}

pub fn read_geometry(path: &Path) -> Result<InclusionGeometry> {
    geometry_from_cdf(&read(path)?).map_err(|e| annotate(path, e))
}

pub fn read_trace(path: &Path, geo: &InclusionGeometry) -> Result<BoundaryTrace> {
    trace_from_csv(&read(path)?, geo).map_err(|e| annotate(path, e))
}

fn annotate(path: &Path, e: CdiiError) -> CdiiError {
    match e {
        CdiiError::Parse(m) => CdiiError::Parse(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub const PAIR_A: &str = "a.cdf";
pub const PAIR_GEOMETRY: &str = "geometry.cdf";
pub const PAIR_TRACE: &str = "f.csv";

/// Writes `a.cdf`, `geometry.cdf` and `f.csv` into `dir`.
pub fn write_pair(dir: &Path, pair: &AdmissiblePair) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(PAIR_A), field_to_cdf(&pair.a))?;
    fs::write(dir.join(PAIR_GEOMETRY), geometry_to_cdf(&pair.geometry))?;
    fs::write(
        dir.join(PAIR_TRACE),
        trace_to_csv(&pair.geometry.grid, &pair.f),
    )?;
    Ok(())
}

pub fn read_pair(dir: &Path) -> Result<AdmissiblePair> {
    let geo = read_geometry(&dir.join(PAIR_GEOMETRY))?;
    let a = read_field(&dir.join(PAIR_A))?;
    let f = read_trace(&dir.join(PAIR_TRACE), &geo)?;
    AdmissiblePair::new(f, a, geo, Provenance::Loaded)
}

/// Labelled component raster: 0 outside Ω, 1 regular, 2 + component id.
pub fn components_to_cdf(result: &ReconstructionResult) -> String {
    let g = result.u.grid;
    let mut codes = vec![0usize; g.len()];
    for (k, c) in codes.iter_mut().enumerate() {
        if result.u.defined[k] {
            *c = 1;
        }
    }
    for (i, comp) in result.decomposition.components.iter().enumerate() {
        for &k in &comp.nodes {
            codes[k] = 2 + i;
        }
    }
    write_rows(&g, |k| codes[k].to_string())
}

/// `key=value` lines describing a reconstruction.
pub fn diagnostics(result: &ReconstructionResult, clipped: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "gap={:e}", result.final_gap);
    let _ = writeln!(s, "iterations={}", result.iterations);
    let _ = writeln!(s, "converged={}", result.converged);
    let _ = writeln!(
        s,
        "max_principle_violation={:e}",
        result.max_principle_violation
    );
    let _ = writeln!(s, "sigma_clipped={clipped}");
    let _ = writeln!(s, "components={}", result.decomposition.components.len());
    let _ = writeln!(s, "gamma_nodes={}", result.decomposition.gamma_nodes.len());
    for (i, c) in result.decomposition.components.iter().enumerate() {
        let _ = writeln!(s, "component_{i}_label={}", c.label);
        let _ = writeln!(s, "component_{i}_nodes={}", c.nodes.len());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::Preset;
    use crate::synthesis::Extension;

    #[test]
    fn field_round_trip_is_exact() {
        let g = Grid::new(4, 3, 0.1, (-0.2, 0.5)).unwrap();
        let mut u = ScalarField::from_fn(g, |x, y| x.exp() * y.sin() + 1.0 / 3.0);
        u.defined[5] = false;
        u.values[5] = f64::NAN;
        let text = field_to_cdf(&u);
        assert!(text.starts_with("cdf1 4 3 0.1 -0.2 0.5\n"));
        let back = field_from_cdf(&text).unwrap();
        assert_eq!(back.grid, g);
        assert_eq!(back.defined, u.defined);
        for k in 0..g.len() {
            assert!(!u.defined[k] || back.values[k] == u.values[k]);
        }
        assert_eq!(field_to_cdf(&back), text);
    }

    #[test]
    fn malformed_fields_are_parse_errors() {
        for bad in [
            "",
            "cdf2 2 2 1 0 0\n",
            "cdf1 3 3 0.1 0 0\n1 2 3\n",
            "cdf1 3 3 0.1 0 0\n1 2\n1 2 3\n1 2 3\n",
            "cdf1 3 3 0.1 0 0\n1 x 3\n1 2 3\n1 2 3\n",
        ] {
            assert!(
                matches!(
                    field_from_cdf(bad),
                    Err(CdiiError::Parse(_)) | Err(CdiiError::InvalidGrid(_))
                ),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn pair_round_trip() {
        let pair = Preset::TwoInclusions
            .pair(41, Extension::FiniteContrast(1e4))
            .unwrap();
        let dir = std::env::temp_dir().join(format!("cdii-io-{}", std::process::id()));
        write_pair(&dir, &pair).unwrap();
        let back = read_pair(&dir).unwrap();
        fs::remove_dir_all(&dir).ok();
        assert_eq!(back.geometry, pair.geometry);
        assert_eq!(back.f, pair.f);
        assert_eq!(
            back.a
                .values
                .iter()
                .zip(&pair.a.values)
                .filter(|(p, q)| p != q && !(p.is_nan() && q.is_nan()))
                .count(),
            0
        );
        assert_eq!(back.provenance, Provenance::Loaded);
    }

    #[test]
    fn trace_must_match_the_boundary() {
        let geo = Preset::NoInclusion.problem(11).unwrap().geometry;
        let f = BoundaryTrace::from_fn(&geo, |x, _| x);
        let text = trace_to_csv(&geo.grid, &f);
        assert_eq!(trace_from_csv(&text, &geo).unwrap(), f);
        let short: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(trace_from_csv(&short, &geo).is_err());
    }
}
