//! Plain-text persistence for steady-state profiles and gridded densities.
//! Floats are written with the shortest round-trip representation, so
//! store -> load -> store reproduces files byte for byte.

use crate::casimir::CasimirModel;
use crate::error::{CammError, Result};
use crate::phasespace::GridDensity;
use crate::radialfield::RadialGrid;
use crate::steadystate::AnsatzState;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

const PROFILE_HEADER: &str = "# camm-vp profile v1";
const GRID_HEADER: &str = "# camm-vp griddensity v1";

/// Serializes a steady state to the v1 profile format: model and state
/// metadata in comment lines, then `r U rho m` columns.
pub fn store_state(state: &AnsatzState, path: &Path) -> Result<()> {
    let m = state.model();
    let mut out = String::new();
    writeln!(out, "{PROFILE_HEADER}").unwrap();
    writeln!(
        out,
        "# model {} {} {} {} {} {} {}",
        m.c1, m.c2, m.k1, m.k2, m.l, m.gamma, m.f0_threshold
    )
    .unwrap();
    writeln!(
        out,
        "# state {} {} {} {} {} {}",
        state.central_psi(),
        state.e0(),
        state.r_support(),
        if state.is_compact() { 1 } else { 0 },
        state.mass(),
        state.steps
    )
    .unwrap();
    writeln!(out, "# columns r U rho m").unwrap();
    let e0 = state.e0();
    let r = state.grid().nodes();
    let psi = state.psi_values();
    let rho = state.rho_values();
    let mass = state.m_values();
    for i in 0..r.len() {
        writeln!(out, "{} {} {} {}", r[i], e0 - psi[i], rho[i], mass[i]).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

fn parse_floats(line: &str, want: usize, what: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CammError::Format(format!("bad number in {what}: `{line}`")))?;
    if vals.len() != want {
        return Err(CammError::Format(format!(
            "{what}: expected {want} values, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

/// Loads a v1 profile. Any other version line is rejected.
pub fn load_state(path: &Path) -> Result<AnsatzState> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != PROFILE_HEADER {
        return Err(CammError::Format(format!(
            "unsupported profile version: `{header}`"
        )));
    }
    let model_line = lines
        .next()
        .and_then(|l| l.strip_prefix("# model "))
        .ok_or_else(|| CammError::Format("missing model line".into()))?;
    let mv = parse_floats(model_line, 7, "model line")?;
    let model = CasimirModel {
        c1: mv[0],
        c2: mv[1],
        k1: mv[2],
        k2: mv[3],
        l: mv[4],
        gamma: mv[5],
        f0_threshold: mv[6],
    };
    let state_line = lines
        .next()
        .and_then(|l| l.strip_prefix("# state "))
        .ok_or_else(|| CammError::Format("missing state line".into()))?;
    let sv = parse_floats(state_line, 6, "state line")?;
    let columns = lines.next().unwrap_or("");
    if columns != "# columns r U rho m" {
        return Err(CammError::Format(format!(
            "unexpected column header: `{columns}`"
        )));
    }
    let (psi0, e0, r_support, compact, mass, steps) =
        (sv[0], sv[1], sv[2], sv[3] != 0.0, sv[4], sv[5] as usize);
    let mut r = Vec::new();
    let mut psi = Vec::new();
    let mut rho = Vec::new();
    let mut m = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_floats(line, 4, "profile row")?;
        r.push(row[0]);
        psi.push(e0 - row[1]);
        rho.push(row[2]);
        m.push(row[3]);
    }
    let grid = RadialGrid::new(r)?;
    Ok(AnsatzState::from_stored(
        model, psi0, e0, r_support, compact, grid, psi, rho, m, mass, steps,
    ))
}

/// Serializes a gridded density: axis lengths, the three axes, then the
/// values row-major (one w-line per text line).
pub fn store_grid_density(f: &GridDensity, path: &Path) -> Result<()> {
    let (r, u, w) = (f.r_axis(), f.u_axis(), f.w_axis());
    let mut out = String::new();
    writeln!(out, "{GRID_HEADER}").unwrap();
    writeln!(out, "{} {} {}", r.len(), u.len(), w.len()).unwrap();
    for axis in [r, u, w] {
        let line: Vec<String> = axis.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    for i in 0..r.len() {
        for j in 0..u.len() {
            let row: Vec<String> = (0..w.len()).map(|k| f.value(i, j, k).to_string()).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_grid_density(path: &Path) -> Result<GridDensity> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != GRID_HEADER {
        return Err(CammError::Format(format!(
            "unsupported griddensity version: `{header}`"
        )));
    }
    let dims = parse_floats(lines.next().unwrap_or(""), 3, "dimension line")?;
    let (nr, nu, nw) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let r = parse_floats(lines.next().unwrap_or(""), nr, "r axis")?;
    let u = parse_floats(lines.next().unwrap_or(""), nu, "u axis")?;
    let w = parse_floats(lines.next().unwrap_or(""), nw, "w axis")?;
    let mut values = Vec::with_capacity(nr * nu * nw);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        values.extend(parse_floats(line, nw, "value row")?);
    }
    if values.len() != nr * nu * nw {
        return Err(CammError::Format(format!(
            "expected {} values, got {}",
            nr * nu * nw,
            values.len()
        )));
    }
    GridDensity::new(r, u, w, values)
}
