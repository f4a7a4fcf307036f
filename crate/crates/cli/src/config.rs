//! Run configuration: defaults, TOML file, `--paper-defaults`, flags.

use std::path::{Path, PathBuf};

use clap::Args;
use pld_core::eikonal::{EikonalScheme, EikonalSettings, MIN_RESOLUTION};
use pld_core::frechet::{FrechetMode, FrechetSettings};
use pld_core::logmap::LogMapSettings;
use pld_core::pipeline::{PldSettings, DEFAULT_MODE_POINTS};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OUTPUT_DIR_ENV: &str = "PLD_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "pld_out";

/// Fully resolved settings for one invocation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub metric: String,
    pub dim: usize,
    pub decoder: Option<PathBuf>,
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    /// `None` picks 257 in 2-D and 65 in 3-D.
    pub resolution: Option<usize>,
    pub eikonal_tol: f64,
    pub max_sweeps: usize,
    pub scheme: EikonalScheme,
    pub n_intervals: usize,
    pub update_tol: f64,
    pub rk4_step: f64,
    pub max_gn_iters: usize,
    pub frechet_mode: FrechetMode,
    pub step_size: f64,
    pub frechet_tol: f64,
    pub max_iters: usize,
    pub subsample: usize,
    pub samples: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// `None` keeps every mode.
    pub n_modes: Option<usize>,
    pub n_points: usize,
    pub scale: f64,
    pub decode: bool,
    pub ellipse: bool,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let logmap = LogMapSettings::default();
        let frechet = FrechetSettings::default();
        let eik = EikonalSettings::for_dim(2);
        Self {
            metric: "flat".into(),
            dim: 2,
            decoder: None,
            lo: None,
            hi: None,
            resolution: None,
            eikonal_tol: eik.tol,
            max_sweeps: eik.max_sweeps,
            scheme: EikonalScheme::default(),
            n_intervals: logmap.n_intervals,
            update_tol: logmap.update_tol,
            rk4_step: logmap.step,
            max_gn_iters: logmap.max_gn_iters,
            frechet_mode: frechet.mode,
            step_size: frechet.step_size,
            frechet_tol: frechet.tol,
            max_iters: frechet.max_iters,
            subsample: frechet.subsample,
            samples: None,
            output_dir: DEFAULT_OUTPUT_DIR.into(),
            n_modes: None,
            n_points: DEFAULT_MODE_POINTS,
            scale: 1.0,
            decode: false,
            ellipse: false,
            seed: 0,
            threads: None,
        }
    }
}

/// One configuration layer; unset fields leave the layer below untouched.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Partial {
    pub metric: Option<String>,
    pub dim: Option<usize>,
    pub decoder: Option<PathBuf>,
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    pub resolution: Option<usize>,
    pub eikonal_tol: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub scheme: Option<EikonalScheme>,
    pub n_intervals: Option<usize>,
    pub update_tol: Option<f64>,
    pub rk4_step: Option<f64>,
    pub max_gn_iters: Option<usize>,
    pub frechet_mode: Option<FrechetMode>,
    pub step_size: Option<f64>,
    pub frechet_tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub subsample: Option<usize>,
    pub samples: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub n_modes: Option<usize>,
    pub n_points: Option<usize>,
    pub scale: Option<f64>,
    pub decode: Option<bool>,
    pub ellipse: Option<bool>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr; $($f:ident),*) => {
        $( if let Some(v) = $src.$f.clone() { $dst.$f = v; } )*
    };
}

macro_rules! overlay_opt {
    ($dst:expr, $src:expr; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunConfig {
    pub fn apply(&mut self, p: &Partial) {
        overlay!(self, p; metric, dim, eikonal_tol, max_sweeps, scheme, n_intervals, update_tol,
            rk4_step, max_gn_iters, frechet_mode, step_size, frechet_tol, max_iters, subsample,
            output_dir, n_points, scale, decode, ellipse, seed);
        overlay_opt!(self, p; decoder, lo, hi, resolution, samples, n_modes, threads);
    }

    pub fn eikonal(&self) -> EikonalSettings {
        let mut s = EikonalSettings::for_dim(self.dim);
        if let Some(n) = self.resolution {
            s = s.with_resolution(n);
        }
        s.tol = self.eikonal_tol;
        s.max_sweeps = self.max_sweeps;
        s.with_scheme(self.scheme)
    }

    pub fn logmap(&self) -> LogMapSettings {
        LogMapSettings {
            n_intervals: self.n_intervals,
            update_tol: self.update_tol,
            max_gn_iters: self.max_gn_iters,
            step: self.rk4_step,
        }
    }

    pub fn frechet(&self) -> FrechetSettings {
        FrechetSettings {
            mode: self.frechet_mode,
            step_size: self.step_size,
            tol: self.frechet_tol,
            max_iters: self.max_iters,
            subsample: self.subsample,
            seed: self.seed,
            logmap: self.logmap(),
        }
    }

    pub fn pld(&self) -> PldSettings {
        PldSettings {
            eikonal: self.eikonal(),
            frechet: self.frechet(),
            logmap: self.logmap(),
            n_modes: self.n_modes.unwrap_or(self.dim),
            n_points: self.n_points,
            scale: self.scale,
            ellipse: self.ellipse,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let positive = [
            ("eikonal_tol", self.eikonal_tol),
            ("update_tol", self.update_tol),
            ("rk4_step", self.rk4_step),
            ("step_size", self.step_size),
            ("frechet_tol", self.frechet_tol),
            ("scale", self.scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let counts = [
            ("dim", self.dim),
            ("max_sweeps", self.max_sweeps),
            ("n_intervals", self.n_intervals),
            ("max_gn_iters", self.max_gn_iters),
            ("max_iters", self.max_iters),
            ("subsample", self.subsample),
            ("n_points", self.n_points),
        ];
        for (name, v) in counts {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if self.n_modes == Some(0) {
            return bad("n_modes must be positive".into());
        }
        if let Some(n) = self.resolution {
            if n < MIN_RESOLUTION {
                return bad(format!("resolution must be at least {MIN_RESOLUTION}, got {n}"));
            }
        }
        if self.n_points < 3 || self.n_points % 2 == 0 {
            return bad(format!("n_points must be odd and at least 3, got {}", self.n_points));
        }
        match (&self.lo, &self.hi) {
            (Some(_), None) | (None, Some(_)) => return bad("lo and hi must be given together".into()),
            _ => {}
        }
        if self.metric == "decoder" && self.decoder.is_none() {
            return bad("metric \"decoder\" needs a decoder weight file".into());
        }
        if self.decode && self.decoder.is_none() {
            return bad("decode needs a decoder weight file".into());
        }
        for p in self.decoder.iter().chain(&self.samples) {
            if !p.is_file() {
                return bad(format!("{} is not a readable file", p.display()));
            }
        }
        Ok(())
    }
}

/// RK4 step 1e-2, 8 intervals, shooting tol 1e-4, η = 0.1.
pub fn paper_defaults() -> Partial {
    Partial {
        rk4_step: Some(1e-2),
        n_intervals: Some(8),
        update_tol: Some(1e-4),
        step_size: Some(1e-1),
        frechet_mode: Some(FrechetMode::DistanceGradient),
        ..Partial::default()
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    metric: MetricSection,
    #[serde(default)]
    eikonal: EikonalSection,
    #[serde(default)]
    shooting: ShootingSection,
    #[serde(default)]
    frechet: FrechetSection,
    #[serde(default)]
    run: RunSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricSection {
    name: Option<String>,
    dim: Option<usize>,
    decoder: Option<PathBuf>,
    lo: Option<Vec<f64>>,
    hi: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EikonalSection {
    resolution: Option<usize>,
    tol: Option<f64>,
    max_sweeps: Option<usize>,
    scheme: Option<EikonalScheme>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShootingSection {
    n_intervals: Option<usize>,
    update_tol: Option<f64>,
    rk4_step: Option<f64>,
    max_gn_iters: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrechetSection {
    mode: Option<FrechetMode>,
    step_size: Option<f64>,
    tol: Option<f64>,
    max_iters: Option<usize>,
    subsample: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    samples: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    n_modes: Option<usize>,
    n_points: Option<usize>,
    scale: Option<f64>,
    decode: Option<bool>,
    ellipse: Option<bool>,
    seed: Option<u64>,
    threads: Option<usize>,
}

/// Parses a TOML config; relative paths are taken relative to the file.
pub fn parse_config_file(text: &str, base: &Path) -> Result<Partial, CliError> {
    let f: FileConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))?;
    let rel = |p: Option<PathBuf>| p.map(|p| if p.is_relative() { base.join(p) } else { p });
    Ok(Partial {
        metric: f.metric.name,
        dim: f.metric.dim,
        decoder: rel(f.metric.decoder),
        lo: f.metric.lo,
        hi: f.metric.hi,
        resolution: f.eikonal.resolution,
        eikonal_tol: f.eikonal.tol,
        max_sweeps: f.eikonal.max_sweeps,
        scheme: f.eikonal.scheme,
        n_intervals: f.shooting.n_intervals,
        update_tol: f.shooting.update_tol,
        rk4_step: f.shooting.rk4_step,
        max_gn_iters: f.shooting.max_gn_iters,
        frechet_mode: f.frechet.mode,
        step_size: f.frechet.step_size,
        frechet_tol: f.frechet.tol,
        max_iters: f.frechet.max_iters,
        subsample: f.frechet.subsample,
        samples: rel(f.run.samples),
        output_dir: rel(f.run.output_dir),
        n_modes: f.run.n_modes,
        n_points: f.run.n_points,
        scale: f.run.scale,
        decode: f.run.decode,
        ellipse: f.run.ellipse,
        seed: f.run.seed,
        threads: f.run.threads,
    })
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            let v: f64 = t.trim().parse().map_err(|_| format!("\"{t}\" is not a number"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("\"{t}\" is not finite"))
            }
        })
        .collect()
}

/// Comma-separated coordinates such as `0.5,-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coords(pub Vec<f64>);

impl std::str::FromStr for Coords {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        parse_list(s).map(Coords)
    }
}

fn parse_scheme(s: &str) -> Result<EikonalScheme, String> {
    match s {
        "hopf-lax" => Ok(EikonalScheme::HopfLax),
        "lax-friedrichs" => Ok(EikonalScheme::LaxFriedrichs),
        _ => Err(format!("unknown scheme \"{s}\" (hopf-lax, lax-friedrichs)")),
    }
}

fn parse_mode(s: &str) -> Result<FrechetMode, String> {
    match s {
        "distance-gradient" => Ok(FrechetMode::DistanceGradient),
        "karcher" => Ok(FrechetMode::Karcher),
        _ => Err(format!("unknown mode \"{s}\" (distance-gradient, karcher)")),
    }
}

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// TOML configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Apply the reference numerics (RK4 step, shooting, Fréchet step) over the file values
    #[arg(long)]
    pub paper_defaults: bool,
    /// flat, polar, poincare, sphere or decoder
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// PLDW decoder weights
    #[arg(long)]
    pub decoder: Option<PathBuf>,
    /// Lower chart corner, e.g. -3,-3
    #[arg(long, allow_hyphen_values = true)]
    pub lo: Option<Coords>,
    #[arg(long, allow_hyphen_values = true)]
    pub hi: Option<Coords>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub eikonal_tol: Option<f64>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<EikonalScheme>,
    #[arg(long)]
    pub n_intervals: Option<usize>,
    #[arg(long)]
    pub update_tol: Option<f64>,
    #[arg(long)]
    pub rk4_step: Option<f64>,
    #[arg(long)]
    pub max_gn_iters: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub frechet_mode: Option<FrechetMode>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub frechet_tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub subsample: Option<usize>,
    /// CSV with header z1,...,zd
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub n_modes: Option<usize>,
    #[arg(long)]
    pub n_points: Option<usize>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub decode: bool,
    #[arg(long)]
    pub ellipse: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism)
    #[arg(long)]
    pub threads: Option<usize>,
}

impl ConfigArgs {
    fn flags(&self) -> Partial {
        Partial {
            metric: self.metric.clone(),
            dim: self.dim,
            decoder: self.decoder.clone(),
            lo: self.lo.clone().map(|c| c.0),
            hi: self.hi.clone().map(|c| c.0),
            resolution: self.resolution,
            eikonal_tol: self.eikonal_tol,
            max_sweeps: self.max_sweeps,
            scheme: self.scheme,
            n_intervals: self.n_intervals,
            update_tol: self.update_tol,
            rk4_step: self.rk4_step,
            max_gn_iters: self.max_gn_iters,
            frechet_mode: self.frechet_mode,
            step_size: self.step_size,
            frechet_tol: self.frechet_tol,
            max_iters: self.max_iters,
            subsample: self.subsample,
            samples: self.samples.clone(),
            output_dir: self.output_dir.clone(),
            n_modes: self.n_modes,
            n_points: self.n_points,
            scale: self.scale,
            decode: self.decode.then_some(true),
            ellipse: self.ellipse.then_some(true),
            seed: self.seed,
            threads: self.threads,
        }
    }

    /// Resolves every layer; `env_output_dir` is the value of `PLD_OUTPUT_DIR`.
    pub fn resolve(&self, env_output_dir: Option<PathBuf>) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        let mut metric_named = false;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new("."));
            let file = parse_config_file(&text, base)?;
            metric_named |= file.metric.is_some();
            cfg.apply(&file);
        }
        if let Some(dir) = env_output_dir {
            cfg.output_dir = dir;
        }
        if self.paper_defaults {
            cfg.apply(&paper_defaults());
        }
        let flags = self.flags();
        metric_named |= flags.metric.is_some();
        cfg.apply(&flags);
        if cfg.decoder.is_some() && !metric_named {
            cfg.metric = "decoder".into();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_keeps_defaults() {
        let p = parse_config_file("[run]\nsamples = \"s.csv\"\n", Path::new("/data")).unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply(&p);
        assert_eq!(cfg.samples, Some(PathBuf::from("/data/s.csv")));
        assert_eq!(cfg.n_intervals, 8);
        assert_eq!(cfg.rk4_step, 1e-2);
        assert_eq!(cfg.update_tol, 1e-4);
        assert_eq!(cfg.step_size, 0.1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config_file("[shooting]\nintervals = 4\n", Path::new(".")).is_err());
        assert!(parse_config_file("[nope]\n", Path::new(".")).is_err());
    }

    #[test]
    fn flags_beat_file() {
        let file = parse_config_file("[shooting]\nn_intervals = 4\n", Path::new(".")).unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply(&file);
        assert_eq!(cfg.n_intervals, 4);
        cfg.apply(&Partial {
            n_intervals: Some(8),
            ..Partial::default()
        });
        assert_eq!(cfg.n_intervals, 8);
    }

    #[test]
    fn zero_step_is_invalid() {
        let cfg = RunConfig {
            rk4_step: 0.0,
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn even_mode_points_are_invalid() {
        let cfg = RunConfig {
            n_points: 10,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn coordinate_lists() {
        assert_eq!("0.5, -1".parse::<Coords>().unwrap(), Coords(vec![0.5, -1.0]));
        assert!("1,nan".parse::<Coords>().is_err());
        assert!("1,x".parse::<Coords>().is_err());
    }
}
