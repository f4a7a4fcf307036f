use std::fs;
use std::path::{Path, PathBuf};

use pld_core::decoder::{DecoderNet, Immersion, PullbackMetric};
use pld_core::eikonal::{solve_distance_field, EikonalError};
use pld_core::frechet::{frechet_mean, frechet_variance, DistanceCache};
use pld_core::geodesic::{exp_map, speed_profile, Geodesic};
use pld_core::logmap::log_map;
use pld_core::manifold::{
    mf_diagnostics, AnalyticMetric, ChartBounds, LatentPoint, MetricField, TangentVector, Vector,
};
use pld_core::pipeline::{run_pld, PipelineError};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{load_samples, Cli, CliError, Command};

/// Runs one parsed invocation and returns the output directory.
pub fn run(cli: &Cli, env_output_dir: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let args = match &cli.command {
        Command::Pld(a) => &a.config,
        Command::DistanceField(a) => &a.config,
        Command::Logmap(a) => &a.config,
        Command::Mean(a) => &a.config,
        Command::DiagnoseMf(a) => &a.config,
        Command::Exp(a) => &a.config,
    };
    let mut cfg = args.resolve(env_output_dir)?;
    let (field, decoder) = build_field(&cfg)?;
    cfg.dim = field.dim();
    let threads = cfg
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let dir = cfg.output_dir.clone();
    pool.install(|| match &cli.command {
        Command::Pld(_) => pld(&cfg, &field, decoder.as_ref()),
        Command::DistanceField(a) => distance_field(&cfg, &field, &a.source.0),
        Command::Logmap(a) => logmap(&cfg, &field, &a.from.0, &a.to.0),
        Command::Mean(_) => mean(&cfg, &field),
        Command::DiagnoseMf(a) => diagnose_mf(&cfg, &field, a.mf_resolution, a.bins),
        Command::Exp(a) => exp(&cfg, &field, &a.from.0, &a.velocity.0),
    })?;
    Ok(dir)
}

fn build_field(cfg: &RunConfig) -> Result<(MetricField, Option<DecoderNet>), CliError> {
    let decoder = match &cfg.decoder {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Some(DecoderNet::read_from(file).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    let bounds = match (&cfg.lo, &cfg.hi) {
        (Some(lo), Some(hi)) => {
            Some(ChartBounds::new(lo.clone(), hi.clone()).map_err(|e| CliError::Config(e.to_string()))?)
        }
        _ => None,
    };
    let field = if cfg.metric == "decoder" {
        let net = decoder.clone().expect("validated");
        let d = net.input_dim();
        let bounds = match bounds {
            Some(b) => b,
            None => ChartBounds::cube(d, -3.0, 3.0).map_err(|e| CliError::Config(e.to_string()))?,
        };
        MetricField::new(PullbackMetric::new(net), bounds).map_err(|e| CliError::Config(e.to_string()))?
    } else {
        let metric = AnalyticMetric::from_name(&cfg.metric, cfg.dim).map_err(|e| CliError::Config(e.to_string()))?;
        match bounds {
            Some(b) => metric.field_with_bounds(b).map_err(|e| CliError::Config(e.to_string()))?,
            None => metric.field(),
        }
    };
    if let Some(net) = &decoder {
        if net.input_dim() != field.dim() {
            return Err(CliError::Config(format!(
                "decoder takes {} inputs but the metric is {}-dimensional",
                net.input_dim(),
                field.dim()
            )));
        }
    }
    Ok((field, decoder))
}

fn point(field: &MetricField, coords: &[f64], what: &str) -> Result<LatentPoint, CliError> {
    let p = LatentPoint::new(coords.to_vec()).map_err(|e| CliError::Config(format!("{what}: {e}")))?;
    field
        .check_point(&p)
        .map_err(|e| CliError::Config(format!("{what}: {e}")))?;
    Ok(p)
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn header(prefix: &str, d: usize) -> String {
    (1..=d).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

fn write(dir: &Path, name: &str, body: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), body)?;
    Ok(())
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, results: Value) -> Result<(), CliError> {
    let manifest = json!({
        "tool": "pld",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config_echo(cfg),
        "results": results,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("json values serialise");
    write(dir, "run_manifest.json", text + "\n")
}

fn config_echo(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).expect("config serialises")
}

fn geodesic_csv(geo: &Geodesic) -> String {
    let d = geo.start().len();
    let mut s = format!("lambda,{},{}\n", header("z", d), header("v", d));
    for n in geo.nodes() {
        s += &format!(
            "{},{},{}\n",
            n.lambda,
            join(n.position.iter().copied()),
            join(n.velocity.iter().copied())
        );
    }
    s
}

fn eikonal_err(e: EikonalError) -> CliError {
    CliError::numeric("distance field", e)
}

fn pld(cfg: &RunConfig, field: &MetricField, decoder: Option<&DecoderNet>) -> Result<(), CliError> {
    let path = cfg
        .samples
        .as_ref()
        .ok_or_else(|| CliError::Config("pld needs a sample file (--samples)".into()))?;
    let samples = load_samples(path, field)?;
    let net = if cfg.decode { decoder.map(|n| n as &dyn Immersion) } else { None };
    let run = run_pld(field, &samples, net, &cfg.pld()).map_err(|e| match e {
        PipelineError::Io(m) => CliError::Io(m),
        other => CliError::numeric("pld", other),
    })?;
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    run.write_artifacts(&cfg.output_dir, json!({ "command": "pld", "config": config_echo(cfg) }))
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

fn distance_field(cfg: &RunConfig, field: &MetricField, source: &[f64]) -> Result<(), CliError> {
    let s = point(field, source, "source")?;
    let df = solve_distance_field(field, &s, cfg.eikonal()).map_err(eikonal_err)?;
    let dir = &cfg.output_dir;
    write(dir, "distance_field.pldf", df.to_bytes())?;
    let mut csv = Vec::new();
    df.write_csv(&mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    write(dir, "distance_field.csv", csv)?;
    let r = df.residual();
    write(
        dir,
        "residual.csv",
        format!("mean,max,count\n{},{},{}\n", r.mean, r.max, r.count),
    )?;
    write_manifest(
        dir,
        "distance-field",
        cfg,
        json!({
            "source": source,
            "resolution": df.resolution(),
            "sweeps": df.sweeps(),
            "eikonal_residual": r,
        }),
    )
}

fn logmap(cfg: &RunConfig, field: &MetricField, from: &[f64], to: &[f64]) -> Result<(), CliError> {
    let p = point(field, from, "from")?;
    let q = point(field, to, "to")?;
    let cache = DistanceCache::new(field, cfg.eikonal()).map_err(eikonal_err)?;
    let df_q = cache.get(&q).map_err(eikonal_err)?;
    let df_p = cache.get(&p).map_err(eikonal_err)?;
    let rep = log_map(field, &p, &q, &df_q, Some(&df_p), &cfg.logmap()).map_err(|e| CliError::numeric("log map", e))?;
    let dist = rep.distance(field).map_err(|e| CliError::numeric("log map", e))?;
    let d = field.dim();
    let dir = &cfg.output_dir;
    write(
        dir,
        "logmap.csv",
        format!(
            "{},distance\n{},{}\n",
            header("v", d),
            join(rep.velocity.components().iter().copied()),
            dist
        ),
    )?;
    let geo = exp_map(field, &rep.velocity, cfg.rk4_step).map_err(|e| CliError::numeric("exp map", e))?;
    write(dir, "geodesic.csv", geodesic_csv(&geo))?;
    let residuals: Vec<Value> = cache
        .residuals()
        .into_iter()
        .map(|(s, r)| json!({ "source": s.as_slice(), "residual": r }))
        .collect();
    write_manifest(
        dir,
        "logmap",
        cfg,
        json!({
            "distance": dist,
            "bypassed": rep.bypassed,
            "gn_iterations": rep.gn_iterations,
            "refine_iterations": rep.refine_iterations,
            "endpoint_error": rep.endpoint_error,
            "max_defect": rep.max_defect,
            "stage_lengths": rep.stage_lengths,
            "eikonal_residuals": residuals,
        }),
    )
}

fn mean(cfg: &RunConfig, field: &MetricField) -> Result<(), CliError> {
    let path = cfg
        .samples
        .as_ref()
        .ok_or_else(|| CliError::Config("mean needs a sample file (--samples)".into()))?;
    let samples = load_samples(path, field)?;
    let cache = DistanceCache::new(field, cfg.eikonal()).map_err(eikonal_err)?;
    let res = frechet_mean(field, &samples, &cfg.frechet(), &cache).map_err(|e| CliError::numeric("frechet mean", e))?;
    let var = frechet_variance(&samples, &res.mean, &cache).map_err(|e| CliError::numeric("frechet variance", e))?;
    if !res.converged {
        eprintln!("warning: frechet mean stopped after {} iterations", res.iterations);
    }
    let d = field.dim();
    let dir = &cfg.output_dir;
    write(
        dir,
        "mean.csv",
        format!("{}\n{}\n", header("z", d), join(res.mean.as_slice().iter().copied())),
    )?;
    let residuals: Vec<Value> = cache
        .residuals()
        .into_iter()
        .map(|(s, r)| json!({ "source": s.as_slice(), "residual": r }))
        .collect();
    write_manifest(
        dir,
        "mean",
        cfg,
        json!({
            "mean": res.mean.as_slice(),
            "iterations": res.iterations,
            "converged": res.converged,
            "gradient_norm": res.gradient_norm,
            "frechet_variance": var,
            "objective": res.objective,
            "dropped": [],
            "eikonal_residuals": residuals,
        }),
    )
}

fn diagnose_mf(cfg: &RunConfig, field: &MetricField, resolution: usize, bins: usize) -> Result<(), CliError> {
    if bins == 0 {
        return Err(CliError::Config("bins must be positive".into()));
    }
    let diag = mf_diagnostics(field, resolution, bins).map_err(|e| CliError::Config(e.to_string()))?;
    let d = field.dim();
    let mut grid = format!("{},log_mf\n", header("z", d));
    for (x, l) in diag.nodes.iter().zip(&diag.log_mf) {
        grid += &format!("{},{}\n", join(x.iter().copied()), l.map_or(String::new(), |v| v.to_string()));
    }
    let dir = &cfg.output_dir;
    write(dir, "log_mf.csv", grid)?;
    let mut hist = String::from("bin_lo,bin_hi,count\n");
    for (k, c) in diag.histogram.counts.iter().enumerate() {
        hist += &format!("{},{},{}\n", diag.histogram.edges[k], diag.histogram.edges[k + 1], c);
    }
    write(dir, "mf_histogram.csv", hist)?;
    let valid: Vec<f64> = diag.log_mf.iter().flatten().copied().collect();
    write_manifest(
        dir,
        "diagnose-mf",
        cfg,
        json!({
            "resolution": resolution,
            "nodes": diag.nodes.len(),
            "flagged": diag.flagged.len(),
            "log_mf_min": valid.iter().copied().fold(f64::INFINITY, f64::min),
            "log_mf_max": valid.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }),
    )
}

fn exp(cfg: &RunConfig, field: &MetricField, from: &[f64], velocity: &[f64]) -> Result<(), CliError> {
    let p = point(field, from, "from")?;
    if velocity.len() != field.dim() {
        return Err(CliError::Config(format!(
            "velocity has {} components, expected {}",
            velocity.len(),
            field.dim()
        )));
    }
    let v = TangentVector::new(p, Vector::from_column_slice(velocity)).map_err(|e| CliError::Config(e.to_string()))?;
    let geo = exp_map(field, &v, cfg.rk4_step).map_err(|e| CliError::numeric("exp map", e))?;
    let speeds = speed_profile(field, &geo).map_err(|e| CliError::numeric("exp map", e))?;
    let s0 = speeds[0];
    let drift = speeds
        .iter()
        .map(|s| if s0 > 0.0 { (s - s0).abs() / s0 } else { (s - s0).abs() })
        .fold(0.0, f64::max);
    let dir = &cfg.output_dir;
    write(dir, "geodesic.csv", geodesic_csv(&geo))?;
    write_manifest(
        dir,
        "exp",
        cfg,
        json!({
            "endpoint": geo.endpoint().as_slice(),
            "steps": geo.nodes().len() - 1,
            "max_relative_speed_drift": drift,
        }),
    )
}
