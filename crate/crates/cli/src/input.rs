//! Initial data from configuration.

use std::path::Path;
use std::sync::Arc;

use fairlab::jko1d::{Barenblatt, Pseudoinverse};
use fairlab::{Params, RadialDensity, RadialGrid};

use crate::config::InitialData;
use crate::CliError;

/// Reads a radial profile from a CSV file with columns `r,rho`.
pub fn read_profile(path: &Path, n: usize) -> Result<RadialDensity, CliError> {
    let cfg_err = |msg: String| CliError::Config(format!("initial.path {}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| cfg_err(e.to_string()))?;
    let mut r = Vec::new();
    let mut rho = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| cfg_err(e.to_string()))?;
        let parse = |i: usize| -> Result<f64, CliError> {
            rec.get(i)
                .ok_or_else(|| cfg_err(format!("record {}: expected two columns", line + 1)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| cfg_err(format!("record {}: {e}", line + 1)))
        };
        r.push(parse(0)?);
        rho.push(parse(1)?);
    }
    if r.len() < 2 {
        return Err(cfg_err("need at least two rows".into()));
    }
    let grid = RadialGrid::from_nodes(n, r).map_err(|e| cfg_err(e.to_string()))?;
    RadialDensity::new(Arc::new(grid), rho).and_then(|d| d.normalized()).map_err(|e| cfg_err(e.to_string()))
}

fn centered(center: f64) -> Result<(), CliError> {
    if center != 0.0 {
        return Err(CliError::Config("initial.center: radial solvers need center = 0".into()));
    }
    Ok(())
}

/// Initial data sampled on a radial grid, normalised to unit mass.
pub fn radial(init: &InitialData, grid: &Arc<RadialGrid>, params: &Params) -> Result<RadialDensity, CliError> {
    let rho = match init {
        InitialData::Characteristic { radius, center } => {
            centered(*center)?;
            if *radius <= grid.nodes()[1] {
                return Err(CliError::Config("initial.radius: smaller than the first grid cell".into()));
            }
            RadialDensity::from_fn(grid.clone(), |r| if r <= *radius { 1.0 } else { 0.0 })?
        }
        InitialData::Gaussian { sigma, center } => {
            centered(*center)?;
            RadialDensity::from_fn(grid.clone(), |r| (-r * r / (2.0 * sigma * sigma)).exp())?
        }
        InitialData::Barenblatt => {
            let b = barenblatt(params)?;
            RadialDensity::from_fn(grid.clone(), |r| b.density(r))?
        }
        InitialData::File { path } => {
            let file = read_profile(path, params.n())?;
            RadialDensity::from_fn(grid.clone(), |r| file.value_at(r))?
        }
    };
    Ok(rho.normalized()?)
}

fn barenblatt(params: &Params) -> Result<Barenblatt, CliError> {
    if params.n() != 1 || params.k() >= 0.0 {
        return Err(CliError::Config("initial.kind: barenblatt data needs N = 1 and k < 0".into()));
    }
    Ok(Barenblatt::new(params.m())?)
}

/// Initial quantiles for the one-dimensional scheme.
pub fn quantiles(init: &InitialData, params: &Params, m: usize) -> Result<Pseudoinverse, CliError> {
    Ok(match init {
        InitialData::Characteristic { radius, center } => Pseudoinverse::characteristic(*center, *radius, m)?,
        InitialData::Gaussian { sigma, center } => Pseudoinverse::gaussian(*center, *sigma, m)?,
        InitialData::Barenblatt => barenblatt(params)?.pseudoinverse(m)?,
        InitialData::File { path } => Pseudoinverse::from_radial(&read_profile(path, 1)?, m)?,
    })
}
