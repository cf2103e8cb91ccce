//! Run configuration files (TOML).

use std::path::{Path, PathBuf};

use fairlab::{Frame, Params};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    FixedPoint,
    Jko,
    ChiSweep,
    PsiTable,
    Envelope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Csv, Format::Json, Format::Svg];

    pub fn parse_list(text: &str) -> Result<Vec<Format>, CliError> {
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| match s {
                "csv" => Ok(Format::Csv),
                "json" => Ok(Format::Json),
                "svg" => Ok(Format::Svg),
                other => Err(CliError::Config(format!("--format: unknown format `{other}` (csv, json, svg)"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    #[serde(rename = "N")]
    pub n: usize,
    pub k: f64,
    #[serde(default)]
    pub chi: f64,
    #[serde(default)]
    pub frame: Frame,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    /// Number of quantiles of the pseudoinverse scheme.
    #[serde(rename = "M")]
    pub m: usize,
    pub dt: f64,
    pub dt_max: f64,
    pub t_end: f64,
    pub steady_tol: f64,
    pub newton_tol: f64,
    pub fp_tol: f64,
    pub max_iter: usize,
    /// Radial grid of the fixed-point solver: envelope tail mass beyond the
    /// truncation radius, first cell, growth ratio.
    pub tail_mass: f64,
    pub h0: f64,
    pub ratio: f64,
    /// Overrides the truncation radius of the fixed-point grid.
    pub r_max: Option<f64>,
    /// Also run the JKO scheme from the same initial data in fixed-point mode.
    pub compare_jko: bool,
    pub self_correction: bool,
    pub edge_correction: bool,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            m: 400,
            dt: 1e-3,
            dt_max: 0.5,
            t_end: 200.0,
            steady_tol: 1e-7,
            newton_tol: 1e-11,
            fp_tol: 1e-10,
            max_iter: 5000,
            tail_mass: 1e-8,
            h0: 1e-4,
            ratio: 1.04,
            r_max: None,
            compare_jko: false,
            self_correction: true,
            edge_correction: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialData {
    Characteristic {
        radius: f64,
        #[serde(default)]
        center: f64,
    },
    Gaussian {
        sigma: f64,
        #[serde(default)]
        center: f64,
    },
    Barenblatt,
    /// CSV with a header and columns `r,rho` (radial profile, `r >= 0`).
    File {
        path: PathBuf,
    },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Characteristic { radius: 0.5, center: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for Output {
    fn default() -> Self {
        Self { directory: PathBuf::from("out"), formats: Format::ALL.to_vec() }
    }
}

/// Expected value to compare the computed maximum against.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub max_density: f64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_rel_tol() -> f64 {
    0.02
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    /// Explicit interaction strengths.
    pub chi: Vec<f64>,
    /// Interaction strengths as fractions of the estimated critical value.
    pub fractions: Vec<f64>,
    /// Gradient iterations of the sharp-constant optimizer.
    pub hls_budget: usize,
    /// Polish each porous-medium steady state with the Euler–Lagrange
    /// iteration and report its residual.
    pub polish: bool,
    pub polish_nodes: usize,
}

impl Default for Sweep {
    fn default() -> Self {
        Self { chi: Vec::new(), fractions: Vec::new(), hls_budget: 60, polish: true, polish_nodes: 401 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiSection {
    #[serde(rename = "N")]
    pub n: usize,
    pub k_start: f64,
    pub k_stop: f64,
    pub k_step: f64,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
    #[serde(default = "default_s_count")]
    pub s_count: usize,
}

fn default_s_max() -> f64 {
    3.0
}
fn default_s_count() -> usize {
    301
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub name: Option<String>,
    pub params: Option<ParamsSection>,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub output: Output,
    #[serde(default)]
    pub reference: Option<Reference>,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub psi: Option<PsiSection>,
}

fn bad(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: cannot read config: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        // Relative input files resolve against the config's directory.
        if let InitialData::File { path: p } = &mut cfg.initial {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Validated problem parameters.
    pub fn params(&self) -> Result<Params, CliError> {
        let p = self.params.as_ref().ok_or_else(|| bad("params", "section is required for this mode"))?;
        let made = if p.chi == 0.0 {
            Params::without_interaction(p.n, p.k, p.frame)
        } else {
            Params::new(p.n, p.k, p.chi, p.frame)
        };
        made.map_err(|e| bad("params", e))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let n = &self.numerics;
        for (field, v) in [
            ("numerics.dt", n.dt),
            ("numerics.dt_max", n.dt_max),
            ("numerics.t_end", n.t_end),
            ("numerics.steady_tol", n.steady_tol),
            ("numerics.newton_tol", n.newton_tol),
            ("numerics.fp_tol", n.fp_tol),
            ("numerics.tail_mass", n.tail_mass),
            ("numerics.h0", n.h0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(field, format!("must be positive and finite, got {v}")));
            }
        }
        if n.m < 16 {
            return Err(bad("numerics.M", format!("must be at least 16, got {}", n.m)));
        }
        if n.dt > n.dt_max {
            return Err(bad("numerics.dt", "must not exceed numerics.dt_max"));
        }
        if !(n.ratio > 1.0) {
            return Err(bad("numerics.ratio", "grid growth ratio must exceed 1"));
        }
        if n.max_iter == 0 {
            return Err(bad("numerics.max_iter", "must be positive"));
        }
        if let Some(r) = n.r_max {
            if !(r > 0.0 && r.is_finite()) {
                return Err(bad("numerics.r_max", "must be positive"));
            }
        }
        if self.output.formats.is_empty() {
            return Err(bad("output.formats", "at least one format is required"));
        }
        match &self.initial {
            InitialData::Characteristic { radius, .. } if !(*radius > 0.0) => {
                return Err(bad("initial.radius", "must be positive"))
            }
            InitialData::Gaussian { sigma, .. } if !(*sigma > 0.0) => {
                return Err(bad("initial.sigma", "must be positive"))
            }
            _ => {}
        }
        if let Some(r) = &self.reference {
            if !(r.max_density > 0.0 && r.rel_tol > 0.0) {
                return Err(bad("reference", "max_density and rel_tol must be positive"));
            }
        }
        match self.mode {
            Mode::PsiTable => {
                let p = self.psi.as_ref().ok_or_else(|| bad("psi", "section is required in psi-table mode"))?;
                if !(p.k_step > 0.0) || p.k_stop < p.k_start {
                    return Err(bad("psi", "need k_step > 0 and k_stop >= k_start"));
                }
                if p.s_count < 2 || !(p.s_max > 0.0) {
                    return Err(bad("psi", "need s_count >= 2 and s_max > 0"));
                }
            }
            Mode::ChiSweep => {
                let p = self.params()?;
                if p.n() != 1 {
                    return Err(bad("params.N", "the sweep uses the one-dimensional scheme (N = 1)"));
                }
                if p.k() > 0.0 {
                    return Err(bad("params.k", "the sweep needs k <= 0"));
                }
                let s = &self.sweep;
                if s.chi.is_empty() && s.fractions.is_empty() {
                    return Err(bad("sweep", "give `chi` or `fractions`"));
                }
                if s.chi.iter().chain(&s.fractions).any(|c| !(*c > 0.0)) {
                    return Err(bad("sweep", "interaction strengths must be positive"));
                }
                if s.polish_nodes < 16 {
                    return Err(bad("sweep.polish_nodes", "must be at least 16"));
                }
            }
            Mode::Jko => {
                let p = self.params()?;
                if p.n() != 1 {
                    return Err(bad("params.N", "the pseudoinverse scheme is one-dimensional (N = 1)"));
                }
            }
            Mode::FixedPoint | Mode::Envelope => {
                let p = self.params()?;
                if !(p.k() > 0.0) {
                    return Err(bad("params.k", "fixed-point and envelope modes need k > 0"));
                }
                if n.compare_jko && p.n() != 1 {
                    return Err(bad("numerics.compare_jko", "needs N = 1"));
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            match self.mode {
                Mode::FixedPoint => "fixed-point",
                Mode::Jko => "jko",
                Mode::ChiSweep => "chi-sweep",
                Mode::PsiTable => "psi-table",
                Mode::Envelope => "envelope",
            }
            .to_string()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_toml(
            "mode = \"jko\"\n[params]\nN = 1\nk = -0.5\nchi = 0.2\nframe = \"rescaled\"\n",
            "inline",
        )
        .unwrap();
        assert_eq!(cfg.numerics.m, 400);
        assert_eq!(cfg.output.formats.len(), 3);
        assert_eq!(cfg.params().unwrap().frame(), Frame::Rescaled);
    }

    #[test]
    fn errors_name_the_field() {
        let err =
            RunConfig::from_toml("mode = \"jko\"\n[params]\nN = 1\nk = -0.5\nchi = 0.2\n[numerics]\nM = 4\n", "x")
                .unwrap_err();
        assert!(err.to_string().contains("numerics.M"), "{err}");
        let err = RunConfig::from_toml("mode = \"jko\"\n[params]\nN = 1\nk = 3.0\nchi = 0.2\n", "x").unwrap_err();
        assert!(err.to_string().contains("params"), "{err}");
        let err = RunConfig::from_toml("mode = \"jko\"\nbogus = 1\n", "cfg.toml").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn format_lists() {
        assert_eq!(Format::parse_list("csv, svg").unwrap(), vec![Format::Csv, Format::Svg]);
        assert!(Format::parse_list("png").is_err());
    }
}
