//! Flat `key = value` configuration: defaults, then the file, then command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use critnls::{Error, Result, Stretch};

#[derive(Parser, Debug)]
#[command(name = "critnls", version, about = "Ground states, linearized spectra, blowup profiles and dynamics for the doubly mass-critical NLS")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Solve for Q_μ and report its functionals.
    Groundstate,
    /// Lowest eigenvalues of L± per channel and the non-degeneracy verdict.
    Spectrum,
    /// Build the profile hierarchy; residual and expansion diagnostics at (b, d).
    Profile,
    /// Time evolution from a preset initial datum.
    Evolve,
    /// Evolve and compare second differences of ‖xu‖² with 16E.
    Virial,
    /// ‖Q_μ − Q‖ over a logarithmic μ ladder and its fitted slope.
    Rate,
    /// One-page overview at μ: functionals, spectrum verdict, profile constants.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Groundstate => "groundstate",
            Command::Spectrum => "spectrum",
            Command::Profile => "profile",
            Command::Evolve => "evolve",
            Command::Virial => "virial",
            Command::Rate => "rate",
            Command::Report => "report",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    MinimalMass,
    Collapse,
    Soliton,
    Gaussian,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::MinimalMass => "minimal-mass",
            Preset::Collapse => "collapse",
            Preset::Soliton => "soliton",
            Preset::Gaussian => "gaussian",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        <Self as ValueEnum>::from_str(s, true).ok()
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    #[arg(long = "grid-n", global = true)]
    pub grid_n: Option<usize>,
    #[arg(long, global = true)]
    pub rmax: Option<f64>,
    #[arg(long, global = true)]
    pub lmax: Option<usize>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub b: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub d: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Run directory (default `runs/<command>`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Recorded in the manifest; the pipelines are single-threaded.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for randomized sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone)]
pub struct Config {
    pub command: Command,
    pub mu: f64,
    pub grid_n: usize,
    pub rmax: f64,
    pub stretch: Stretch,
    pub lmax: usize,
    pub k: usize,
    pub b: f64,
    pub d: f64,
    pub preset: Preset,
    pub out: PathBuf,
    pub threads: usize,
    pub seed: u64,
    pub dt: f64,
    pub t_final: f64,
}

const KEYS: &[&str] = &["mu", "grid_n", "rmax", "stretch", "lmax", "k", "b", "d", "preset", "out", "threads", "seed", "dt", "t_final"];

/// Per-preset defaults: (μ, b, stretch, dt, t_final).
fn preset_defaults(p: Preset) -> (f64, f64, Stretch, f64, f64) {
    match p {
        Preset::MinimalMass => (0.02, 0.2, Stretch::graded(), 1e-3, 30.0),
        Preset::Collapse => (-0.05, 0.0, Stretch::graded(), 2e-3, 10.0),
        Preset::Soliton => (0.0, 0.0, Stretch::Uniform, 2.5e-4, 5.0),
        Preset::Gaussian => (0.02, 0.0, Stretch::Uniform, 1e-3, 1.0),
    }
}

pub fn parse_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_pairs(&text)
}

pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("line {}: unknown key `{}`", no + 1, k.trim())));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    map.get(key)
        .map(|v| v.parse::<T>().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))))
        .transpose()
}

fn parse_stretch(s: &str) -> Result<Stretch> {
    match s {
        "uniform" => Ok(Stretch::Uniform),
        "graded" => Ok(Stretch::graded()),
        _ => Err(Error::Config(format!("stretch must be `uniform` or `graded`, got `{s}`"))),
    }
}

impl Config {
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let file = match &cli.flags.config {
            Some(p) => parse_file(p)?,
            None => BTreeMap::new(),
        };
        let f = &cli.flags;
        let preset = match (f.preset, file.get("preset")) {
            (Some(p), _) => p,
            (None, Some(s)) => Preset::parse(s).ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))?,
            (None, None) if cli.command == Command::Virial => Preset::Gaussian,
            (None, None) => Preset::MinimalMass,
        };
        let dynamic = matches!(cli.command, Command::Evolve | Command::Virial);
        let (p_mu, p_b, p_stretch, p_dt, p_tf) = preset_defaults(preset);
        let stretch = match file.get("stretch") {
            Some(s) => parse_stretch(s)?,
            None if dynamic => p_stretch,
            None => Stretch::Uniform,
        };
        let (default_mu, default_b) = if dynamic { (p_mu, p_b) } else { (0.0, 0.1) };
        let cfg = Config {
            command: cli.command,
            mu: f.mu.or(num(&file, "mu")?).unwrap_or(default_mu),
            grid_n: f.grid_n.or(num(&file, "grid_n")?).unwrap_or(1024),
            rmax: f.rmax.or(num(&file, "rmax")?).unwrap_or(40.0),
            stretch,
            lmax: f.lmax.or(num(&file, "lmax")?).unwrap_or(4),
            k: f.k.or(num(&file, "k")?).unwrap_or(6),
            b: f.b.or(num(&file, "b")?).unwrap_or(default_b),
            d: f.d.or(num(&file, "d")?).unwrap_or(0.0),
            preset,
            out: f.out.clone().or(file.get("out").map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name())),
            threads: f.threads.or(num(&file, "threads")?).unwrap_or(1),
            seed: f.seed.or(num(&file, "seed")?).unwrap_or(0),
            dt: num(&file, "dt")?.unwrap_or(p_dt),
            t_final: num(&file, "t_final")?.unwrap_or(p_tf),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || self.mu.abs() > critnls::groundstate::MU_MAX {
            return Err(Error::Config(format!("|μ| must be ≤ {}, got {}", critnls::groundstate::MU_MAX, self.mu)));
        }
        if self.mu < 0.0 && !matches!(self.command, Command::Groundstate | Command::Evolve | Command::Virial) {
            return Err(Error::Config("μ < 0 is only supported by groundstate, evolve and virial".into()));
        }
        if self.grid_n < 64 || !(self.rmax > 0.0) {
            return Err(Error::Config("grid needs n ≥ 64 and r_max > 0".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be ≥ 1".into()));
        }
        if !(self.dt > 0.0) || !(self.t_final > 0.0) {
            return Err(Error::Config("dt and t_final must be positive".into()));
        }
        Ok(())
    }

    /// Snapshot for the manifest, one entry per key.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        [
            ("command", self.command.name().to_string()),
            ("mu", format!("{}", self.mu)),
            ("grid_n", self.grid_n.to_string()),
            ("rmax", format!("{}", self.rmax)),
            ("stretch", self.stretch.label()),
            ("lmax", self.lmax.to_string()),
            ("k", self.k.to_string()),
            ("b", format!("{}", self.b)),
            ("d", format!("{}", self.d)),
            ("preset", self.preset.name().to_string()),
            ("out", self.out.display().to_string()),
            ("threads", self.threads.to_string()),
            ("seed", self.seed.to_string()),
            ("dt", format!("{}", self.dt)),
            ("t_final", format!("{}", self.t_final)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("critnls").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn pairs_parse_and_reject_unknown_keys() {
        let m = parse_pairs("mu = 0.05  # coupling\n\ngrid-n=512\n").unwrap();
        assert_eq!(m["mu"], "0.05");
        assert_eq!(m["grid_n"], "512");
        assert!(parse_pairs("colour = red").unwrap_err().is_config());
        assert!(parse_pairs("mu 0.05").unwrap_err().is_config());
    }

    #[test]
    fn cli_beats_file_beats_defaults() {
        let dir = std::env::temp_dir().join(format!("critnls-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "mu = 0.03\ngrid_n = 512\n").unwrap();
        let p = path.to_str().unwrap();
        let c = Config::resolve(&cli(&["groundstate", "--config", p, "--mu", "0.01"])).unwrap();
        assert_eq!((c.mu, c.grid_n, c.rmax), (0.01, 512, 40.0));
        let c = Config::resolve(&cli(&["groundstate", "--config", p])).unwrap();
        assert_eq!(c.mu, 0.03);
        let c = Config::resolve(&cli(&["evolve", "--preset", "minimal-mass"])).unwrap();
        assert_eq!(c.mu, 0.02);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn out_of_range_values_are_config_errors() {
        assert!(Config::resolve(&cli(&["groundstate", "--mu", "0.5"])).unwrap_err().is_config());
        assert!(Config::resolve(&cli(&["spectrum", "--mu", "-0.01"])).unwrap_err().is_config());
    }
}
