//! Flat `key = value` experiment configuration.
//!
//! Every key has a type, units and a default per subcommand. Resolution
//! canonicalises values so that equivalent spellings hash identically.

use crate::error::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Command {
    NoiseSweep,
    Theorem1,
    Decay,
    EigenSweep,
    KraichnanReport,
    Validate,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::NoiseSweep,
        Command::Theorem1,
        Command::Decay,
        Command::EigenSweep,
        Command::KraichnanReport,
        Command::Validate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::NoiseSweep => "noise-sweep",
            Command::Theorem1 => "theorem1",
            Command::Decay => "decay",
            Command::EigenSweep => "eigen-sweep",
            Command::KraichnanReport => "kraichnan-report",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    Real,
    Count,
    Seed,
    Flag,
    RealList,
    CountList,
    /// Real or `auto`.
    RealOrAuto,
    /// Real list or `auto`.
    RealListOrAuto,
    Choice(&'static [&'static str]),
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub kind: Kind,
    pub units: &'static str,
    pub help: &'static str,
    pub defaults: &'static [(Command, &'static str)],
}

use Command::*;

pub const KEYS: &[KeySpec] = &[
    KeySpec {
        key: "domain",
        kind: Kind::Choice(&["square", "disk"]),
        units: "-",
        help: "computational domain: unit square (0,1)^2 or unit disk B(0,1)",
        defaults: &[(NoiseSweep, "square"), (Theorem1, "square"), (Decay, "square"), (Validate, "square")],
    },
    KeySpec {
        key: "grid_spacing_h",
        kind: Kind::Real,
        units: "length",
        help: "grid spacing; 1/h must be an integer",
        defaults: &[
            (NoiseSweep, "0.0078125"),
            (Theorem1, "0.015625"),
            (Decay, "0.015625"),
            (EigenSweep, "0.0078125"),
            (Validate, "0.015625"),
        ],
    },
    KeySpec {
        key: "kappa_diffusivity",
        kind: Kind::Real,
        units: "length^2/time",
        help: "molecular diffusivity kappa",
        defaults: &[(Theorem1, "0.1"), (Decay, "0.01")],
    },
    KeySpec {
        key: "seed",
        kind: Kind::Seed,
        units: "-",
        help: "master seed; per-path seeds are splitmix64(seed ^ splitmix64(path))",
        defaults: &[(Theorem1, "1"), (Decay, "1"), (KraichnanReport, "1")],
    },
    KeySpec {
        key: "lattice_density_n",
        kind: Kind::Count,
        units: "1/length",
        help: "vortex lattice density N (centres on Z^2/N), mollifier scale eps = 1/N",
        defaults: &[(Theorem1, "200"), (Decay, "200"), (Validate, "200")],
    },
    KeySpec {
        key: "class_period_m",
        kind: Kind::Count,
        units: "lattice steps",
        help: "partition period M (> 24)",
        defaults: &[(NoiseSweep, "30"), (Theorem1, "30"), (Decay, "30"), (Validate, "30")],
    },
    KeySpec {
        key: "delta_boundary_layer",
        kind: Kind::Real,
        units: "length",
        help: "boundary layer width delta; centres lie in D_delta",
        defaults: &[(NoiseSweep, "0.1"), (Theorem1, "0.1"), (Decay, "0.1"), (Validate, "0.1")],
    },
    KeySpec {
        key: "vortex_radius_r",
        kind: Kind::Real,
        units: "length",
        help: "blob radius r, admissible in [12/N, min(M/2N, delta)]",
        defaults: &[(Theorem1, "0.07"), (Decay, "0.07"), (Validate, "0.07")],
    },
    KeySpec {
        key: "gamma_amplitude",
        kind: Kind::RealOrAuto,
        units: "length^2/time^(1/2)",
        help: "noise amplitude Gamma; auto picks it from rhs_target (theorem1) or decay_intensity_over_kappa (decay)",
        defaults: &[(Theorem1, "auto"), (Decay, "auto"), (Validate, "1")],
    },
    KeySpec {
        key: "rhs_target",
        kind: Kind::Real,
        units: "temperature^2 length^4",
        help: "value of (eps_Q/2kappa)||T0||^2||phi||_inf^2 used when gamma_amplitude = auto",
        defaults: &[(Theorem1, "0.01")],
    },
    KeySpec {
        key: "dt_time_step",
        kind: Kind::Real,
        units: "time",
        help: "stochastic time step",
        defaults: &[(Theorem1, "0.0001"), (Decay, "0.0005")],
    },
    KeySpec {
        key: "checkpoint_times",
        kind: Kind::RealList,
        units: "time",
        help: "checkpoint times, increasing multiples of dt_time_step",
        defaults: &[(Theorem1, "0.0025,0.005,0.01"), (Decay, "0.05,0.1,0.2")],
    },
    KeySpec {
        key: "paths_count",
        kind: Kind::Count,
        units: "paths",
        help: "Monte Carlo paths P",
        defaults: &[(Theorem1, "2000"), (Decay, "32")],
    },
    KeySpec {
        key: "study_paths_count",
        kind: Kind::Count,
        units: "paths",
        help: "paths in the coupled dt / dt/2 study fixing scheme_tol",
        defaults: &[(Theorem1, "100"), (Decay, "8")],
    },
    KeySpec {
        key: "t0_kind",
        kind: Kind::Choice(&["bump", "eigenfunction", "random_smooth"]),
        units: "-",
        help: "initial temperature: normalized bump, first eigenfunction, or random smooth positive field",
        defaults: &[(Theorem1, "bump"), (Decay, "bump")],
    },
    KeySpec {
        key: "bump_center_xy",
        kind: Kind::RealListOrAuto,
        units: "length",
        help: "bump centre x,y; auto is the domain centre",
        defaults: &[(Theorem1, "auto"), (Decay, "auto")],
    },
    KeySpec {
        key: "bump_radius",
        kind: Kind::Real,
        units: "length",
        help: "bump support radius",
        defaults: &[(Theorem1, "0.3"), (Decay, "0.3")],
    },
    KeySpec {
        key: "phi_kind",
        kind: Kind::Choice(&["plateau", "constant_approx", "eigenfunction"]),
        units: "-",
        help: "test function: smoothed disc indicator, phi_n = clamp(n dist, 0, 1), or first eigenfunction (sup 1)",
        defaults: &[(Theorem1, "constant_approx")],
    },
    KeySpec {
        key: "phi_slope_per_length",
        kind: Kind::Real,
        units: "1/length",
        help: "ramp slope n of the plateau and constant_approx test functions",
        defaults: &[(Theorem1, "10")],
    },
    KeySpec {
        key: "phi_radius",
        kind: Kind::Real,
        units: "length",
        help: "radius of the plateau test function around the domain centre",
        defaults: &[(Theorem1, "0.25")],
    },
    KeySpec {
        key: "decay_intensity_over_kappa",
        kind: Kind::Real,
        units: "dimensionless",
        help: "target min over D_2delta of q/2, in units of kappa, when gamma_amplitude = auto",
        defaults: &[(Decay, "30")],
    },
    KeySpec {
        key: "decay_dt_time_step",
        kind: Kind::Real,
        units: "time",
        help: "time step of the effective-equation decay solve",
        defaults: &[(Decay, "0.01")],
    },
    KeySpec {
        key: "fit_window",
        kind: Kind::RealList,
        units: "time",
        help: "start,end of the log-slope fit window of <1, T_Q(t)>",
        defaults: &[(Decay, "6,10")],
    },
    KeySpec {
        key: "sweep_n_list",
        kind: Kind::CountList,
        units: "1/length",
        help: "lattice densities N of the noise sweep",
        defaults: &[(NoiseSweep, "200,400")],
    },
    KeySpec {
        key: "gamma_sq_coefficient",
        kind: Kind::Real,
        units: "length^4/time",
        help: "c in the sweep rule Gamma^2 = c / N^(3/2)",
        defaults: &[(NoiseSweep, "1")],
    },
    KeySpec {
        key: "radius_fraction",
        kind: Kind::Real,
        units: "dimensionless",
        help: "position of r inside the admissible interval [12/N, min(M/2N, delta)], 0 to 1",
        defaults: &[(NoiseSweep, "0.5")],
    },
    KeySpec {
        key: "geometric_n_candidates",
        kind: Kind::CountList,
        units: "1/length",
        help: "lattice densities scanned for the geometric-condition threshold",
        defaults: &[(NoiseSweep, "5,10,15,20,25,30,40,50,100,200,400")],
    },
    KeySpec {
        key: "q_sample_cells",
        kind: Kind::Count,
        units: "points per axis",
        help: "base points per axis for continuum q sampling in D_2delta (8x8 offsets per lattice cell each)",
        defaults: &[(NoiseSweep, "5")],
    },
    KeySpec {
        key: "profile_eps_list",
        kind: Kind::RealList,
        units: "dimensionless",
        help: "extra mollifier scales for the norm_w_sq growth table",
        defaults: &[(NoiseSweep, "0.02,0.01,0.005,0.0025")],
    },
    KeySpec {
        key: "kappa_list",
        kind: Kind::RealList,
        units: "length^2/time",
        help: "kappa values of the eigen sweep",
        defaults: &[(EigenSweep, "0.01")],
    },
    KeySpec {
        key: "sigma2_list",
        kind: Kind::RealList,
        units: "length^2/time",
        help: "inner-region noise intensities sigma^2 of the eigen sweep",
        defaults: &[(EigenSweep, "0,1,10,100")],
    },
    KeySpec {
        key: "delta_list",
        kind: Kind::RealList,
        units: "length",
        help: "boundary layer widths of the eigen sweep",
        defaults: &[(EigenSweep, "0.05,0.1,0.2")],
    },
    KeySpec {
        key: "dimension_d",
        kind: Kind::Count,
        units: "-",
        help: "space dimension d",
        defaults: &[(EigenSweep, "2"), (KraichnanReport, "2")],
    },
    KeySpec {
        key: "radial_cells",
        kind: Kind::Count,
        units: "cells",
        help: "finite elements of the radial eigen solver",
        defaults: &[(EigenSweep, "4096")],
    },
    KeySpec {
        key: "include_2d",
        kind: Kind::Flag,
        units: "-",
        help: "also solve the layered problem on the 2D disk grid (d = 2 only)",
        defaults: &[(EigenSweep, "true")],
    },
    KeySpec {
        key: "trend_steps",
        kind: Kind::Count,
        units: "-",
        help: "steps n of the (4^n, 2^-n) divergence trend per kappa (0 disables)",
        defaults: &[(EigenSweep, "0")],
    },
    KeySpec {
        key: "kr_sigma2",
        kind: Kind::Real,
        units: "length^2/time",
        help: "Kraichnan intensity sigma^2",
        defaults: &[(KraichnanReport, "1")],
    },
    KeySpec {
        key: "kr_zeta_list",
        kind: Kind::RealList,
        units: "dimensionless",
        help: "spectral exponents zeta",
        defaults: &[(KraichnanReport, "1.3333333333333333,0.5,0,-1,-2")],
    },
    KeySpec {
        key: "kr_k0",
        kind: Kind::Real,
        units: "1/length",
        help: "lower shell wavenumber k0",
        defaults: &[(KraichnanReport, "2.5")],
    },
    KeySpec {
        key: "kr_k1_list",
        kind: Kind::RealList,
        units: "1/length",
        help: "upper shell wavenumbers k1 (inf allowed for zeta > 0)",
        defaults: &[(KraichnanReport, "6,9,12,15,inf")],
    },
    KeySpec {
        key: "kr_q_min",
        kind: Kind::Real,
        units: "length^2/time",
        help: "threshold for a favourable mixing bound",
        defaults: &[(KraichnanReport, "1")],
    },
    KeySpec {
        key: "kr_eps_max",
        kind: Kind::Real,
        units: "length^4/time",
        help: "threshold for a favourable covariance-operator bound",
        defaults: &[(KraichnanReport, "0.1")],
    },
    KeySpec {
        key: "torus_grid",
        kind: Kind::Count,
        units: "points per axis",
        help: "periodic grid of the torus cross-check",
        defaults: &[(KraichnanReport, "32")],
    },
];

pub fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

impl KeySpec {
    pub fn default_for(&self, cmd: Command) -> Option<&'static str> {
        self.defaults.iter().find(|(c, _)| *c == cmd).map(|(_, v)| *v)
    }
}

/// Raw `key = value` pairs; `#` starts a comment.
pub fn parse_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Config(format!("line {}: empty key or value", lineno + 1)));
        }
        if spec(k).is_none() {
            return Err(Error::Config(format!("line {}: unknown key `{k}`", lineno + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", lineno + 1)));
        }
    }
    Ok(out)
}

fn real(key: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: `{s}` is not a number")))?;
    if v.is_nan() {
        return Err(Error::Config(format!("`{key}`: NaN not allowed")));
    }
    Ok(v)
}

fn canonical(spec: &KeySpec, s: &str) -> Result<String> {
    let key = spec.key;
    let list = |s: &str| -> Vec<String> { s.split(',').map(|x| x.trim().to_string()).collect() };
    Ok(match spec.kind {
        Kind::Real => format!("{:?}", real(key, s)?),
        Kind::Count => s
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("`{key}`: `{s}` is not a non-negative integer")))?
            .to_string(),
        Kind::Seed => s
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("`{key}`: `{s}` is not a 64-bit unsigned integer")))?
            .to_string(),
        Kind::Flag => match s.trim() {
            "true" | "1" | "yes" => "true".into(),
            "false" | "0" | "no" => "false".into(),
            _ => return Err(Error::Config(format!("`{key}`: `{s}` is not a boolean"))),
        },
        Kind::RealList => list(s)
            .iter()
            .map(|x| real(key, x).map(|v| format!("{v:?}")))
            .collect::<Result<Vec<_>>>()?
            .join(","),
        Kind::CountList => list(s)
            .iter()
            .map(|x| {
                x.parse::<usize>()
                    .map(|v| v.to_string())
                    .map_err(|_| Error::Config(format!("`{key}`: `{x}` is not an integer")))
            })
            .collect::<Result<Vec<_>>>()?
            .join(","),
        Kind::RealOrAuto if s.trim() == "auto" => "auto".into(),
        Kind::RealOrAuto => format!("{:?}", real(key, s)?),
        Kind::RealListOrAuto if s.trim() == "auto" => "auto".into(),
        Kind::RealListOrAuto => canonical(
            &KeySpec {
                kind: Kind::RealList,
                ..*spec
            },
            s,
        )?,
        Kind::Choice(opts) => {
            let v = s.trim().to_ascii_lowercase();
            if !opts.contains(&v.as_str()) {
                return Err(Error::Config(format!("`{key}`: `{s}` not one of {}", opts.join("|"))));
            }
            v
        }
    })
}

/// Fully resolved configuration of one subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub command: Command,
    pub values: BTreeMap<String, String>,
    /// Keys given in the file but not used by this subcommand.
    pub ignored: Vec<String>,
}

impl ResolvedConfig {
    /// Merges `given` over the subcommand defaults, canonicalising every value.
    pub fn resolve(command: Command, given: &BTreeMap<String, String>) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut ignored = Vec::new();
        for (k, v) in given {
            let s = spec(k).ok_or_else(|| Error::Config(format!("unknown key `{k}`")))?;
            if s.default_for(command).is_none() {
                ignored.push(k.clone());
                continue;
            }
            values.insert(k.clone(), canonical(s, v)?);
        }
        for s in KEYS {
            if let Some(d) = s.default_for(command) {
                if !values.contains_key(s.key) {
                    values.insert(s.key.to_string(), canonical(s, d)?);
                }
            }
        }
        Ok(ResolvedConfig {
            command,
            values,
            ignored,
        })
    }

    pub fn defaults(command: Command) -> Self {
        Self::resolve(command, &BTreeMap::new()).expect("built-in defaults are valid")
    }

    /// Overrides one key (used for command-line flags).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = spec(key).ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        if s.default_for(self.command).is_none() {
            return Err(Error::Config(format!("`{key}` is not used by {}", self.command.name())));
        }
        self.values.insert(key.to_string(), canonical(s, value)?);
        Ok(())
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Config(format!("`{key}` is not used by {}", self.command.name())))
    }

    pub fn real(&self, key: &str) -> Result<f64> {
        real(key, self.raw(key)?)
    }

    pub fn count(&self, key: &str) -> Result<usize> {
        Ok(self.raw(key)?.parse().expect("canonical count"))
    }

    pub fn seed(&self, key: &str) -> Result<u64> {
        Ok(self.raw(key)?.parse().expect("canonical seed"))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        Ok(self.raw(key)? == "true")
    }

    pub fn text(&self, key: &str) -> Result<&str> {
        self.raw(key)
    }

    pub fn real_or_auto(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key)? {
            "auto" => Ok(None),
            s => real(key, s).map(Some),
        }
    }

    pub fn reals(&self, key: &str) -> Result<Vec<f64>> {
        self.raw(key)?.split(',').map(|x| real(key, x)).collect()
    }

    pub fn reals_or_auto(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(key)? {
            "auto" => Ok(None),
            _ => self.reals(key).map(Some),
        }
    }

    pub fn counts(&self, key: &str) -> Result<Vec<usize>> {
        Ok(self.raw(key)?.split(',').map(|x| x.parse().expect("canonical count")).collect())
    }

    /// Canonical text `key = value` lines, sorted by key.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 over the subcommand name and the canonical text.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.name().as_bytes());
        h.update(b"\n");
        h.update(self.canonical_text().as_bytes());
        hex::encode(h.finalize())
    }
}

/// Help text listing every key with its units and defaults.
pub fn schema_help() -> String {
    let mut s = String::from("CONFIG KEYS (file format: one `key = value` per line, `#` comments)\n");
    for k in KEYS {
        let used: Vec<String> = k.defaults.iter().map(|(c, d)| format!("{}={}", c.name(), d)).collect();
        let _ = writeln!(s, "  {:<28} [{}] {}", k.key, k.units, k.help);
        let _ = writeln!(s, "  {:<28} defaults: {}", "", used.join(" "));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equivalent_spellings_hash_equal() {
        let a = parse_text("delta_boundary_layer = 0.10\nlattice_density_n = 200 # N\n").unwrap();
        let b = parse_text("lattice_density_n=200\n\ndelta_boundary_layer = 1e-1\n").unwrap();
        let ra = ResolvedConfig::resolve(Command::Validate, &a).unwrap();
        let rb = ResolvedConfig::resolve(Command::Validate, &b).unwrap();
        assert_eq!(ra.hash(), rb.hash());
        let rc = ResolvedConfig::resolve(Command::Theorem1, &a).unwrap();
        assert_ne!(ra.hash(), rc.hash());
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(parse_text("no_such_key = 1").is_err());
        assert!(parse_text("grid_spacing_h").is_err());
        assert!(parse_text("seed = 1\nseed = 2").is_err());
        let bad = parse_text("paths_count = -3").unwrap();
        assert!(ResolvedConfig::resolve(Command::Theorem1, &bad).is_err());
        let bad = parse_text("phi_kind = wiggle").unwrap();
        assert!(ResolvedConfig::resolve(Command::Theorem1, &bad).is_err());
    }

    #[test]
    fn unused_keys_are_reported_not_hashed() {
        let given = parse_text("kr_k0 = 3\nseed = 5").unwrap();
        let r = ResolvedConfig::resolve(Command::Validate, &given).unwrap();
        assert_eq!(r.ignored, vec!["kr_k0".to_string(), "seed".to_string()]);
        assert_eq!(r.hash(), ResolvedConfig::defaults(Command::Validate).hash());
    }

    #[test]
    fn every_command_has_valid_defaults() {
        for c in Command::ALL {
            let r = ResolvedConfig::defaults(c);
            assert!(!r.values.is_empty());
        }
        assert!(schema_help().contains("delta_boundary_layer"));
    }
}
