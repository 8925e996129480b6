//! `vessel-repair` command line.
//!
//! Exit status: 0 on success, 1 for usage errors (bad flags, bad config,
//! invalid parameter values), 2 for data errors (unreadable or malformed
//! volumes, failed writes).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Deserialize;

use vessel_repair::morphology::{self, StructuringElement};
use vessel_repair::nrrd::{read_nrrd, write_nrrd, Encoding};
use vessel_repair::pipeline::{repair_with, RepairOptions, RepairParams};
use vessel_repair::skeleton::{build_graph, graph_of_mask};
use vessel_repair::synth::{fracture, generate_tree, SynthParams};
use vessel_repair::{metrics, Volume3D};

#[derive(Parser, Debug)]
#[command(name = "vessel-repair", version, about = "Reconnect fractured 3D vessel segmentations")]
struct Cli {
    /// JSON file with parameter values; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// NRRD encoding for written volumes.
    #[arg(long, global = true, value_enum, default_value_t = EncodingArg::Raw)]
    encoding: EncodingArg,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EncodingArg {
    Raw,
    Gzip,
}

impl From<EncodingArg> for Encoding {
    fn from(e: EncodingArg) -> Self {
        match e {
            EncodingArg::Raw => Encoding::Raw,
            EncodingArg::Gzip => Encoding::Gzip,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Repair a fractured binary segmentation.
    Repair(RepairArgs),
    /// Thin a mask to its curve skeleton and describe it as a graph.
    Skeleton(SkeletonArgs),
    /// Morphological edge map (dilation minus erosion).
    Edge(EdgeArgs),
    /// Topology and overlap metrics of a prediction against a reference.
    Metrics(MetricsArgs),
    /// Generate a synthetic vessel tree, optionally with fractures.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct RepairArgs {
    #[arg(long, value_name = "NRRD")]
    input: PathBuf,
    #[arg(long, value_name = "NRRD")]
    output: PathBuf,
    /// Write the repair report here.
    #[arg(long, value_name = "JSON")]
    report: Option<PathBuf>,
    /// Write the skeleton graph of the repaired mask here.
    #[arg(long, value_name = "JSON")]
    graph_json: Option<PathBuf>,
    /// Write the relaxed surface of every connected pair as OBJ into this directory.
    #[arg(long, value_name = "DIR")]
    dump_meshes: Option<PathBuf>,
    /// Add stage timings to the report (makes reruns differ).
    #[arg(long)]
    timings: bool,
    #[command(flatten)]
    params: PipelineArgs,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// TFD acceptance threshold.
    #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
    epsilon: f64,
    /// Largest endpoint distance considered, in voxels of the smallest spacing.
    #[arg(long, default_value_t = 30.0)]
    d_max: f64,
    /// Endpoint chain length and Frenet fit window, in skeleton voxels.
    #[arg(long, default_value_t = 7)]
    window: usize,
    /// Curvature (per voxel) below which an endpoint counts as straight.
    #[arg(long, default_value_t = 0.5)]
    kappa_min: f64,
    /// Connector target must lie ahead by this fraction of the gap.
    #[arg(long, default_value_t = 0.25)]
    x_min_ratio: f64,
    /// Gaussian sigma of the speed field in mm [default: 2 x smallest spacing].
    #[arg(long)]
    sigma: Option<f64>,
    /// Background speed of the speed field, in (0, 1).
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Samples per boundary curve of the minimal surface.
    #[arg(long, default_value_t = 32)]
    surface_samples: usize,
    /// Iteration cap of the minimal surface solver.
    #[arg(long, default_value_t = 500)]
    surface_max_iter: usize,
    /// Closing radius (voxels) used to seal new tubes; 0 disables.
    #[arg(long, default_value_t = 1)]
    seal_voxels: usize,
    /// Re-thin the mask after every connection.
    #[arg(long)]
    rethin: bool,
}

#[derive(Args, Debug)]
struct SkeletonArgs {
    #[arg(long, value_name = "NRRD")]
    input: PathBuf,
    /// Skeleton mask.
    #[arg(long, value_name = "NRRD")]
    output: PathBuf,
    #[arg(long, value_name = "JSON")]
    graph_json: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ShapeArg {
    Cross6,
    Cube26,
}

#[derive(Args, Debug)]
struct EdgeArgs {
    #[arg(long, value_name = "NRRD")]
    input: PathBuf,
    #[arg(long, value_name = "NRRD")]
    output: PathBuf,
    /// Structuring element.
    #[arg(long, value_enum, default_value_t = ShapeArg::Cross6)]
    shape: ShapeArg,
    /// Structuring element radius in unit steps.
    #[arg(long, default_value_t = 1)]
    radius: usize,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long, value_name = "NRRD")]
    pred: PathBuf,
    #[arg(long, value_name = "NRRD")]
    gt: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "JSON")]
    output: Option<PathBuf>,
    /// Surface distance tolerance in mm [default: smallest spacing].
    #[arg(long)]
    nsd_tolerance: Option<f64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Intact tree.
    #[arg(long, value_name = "NRRD")]
    output: PathBuf,
    /// Ground truth of the intact tree.
    #[arg(long, value_name = "JSON")]
    truth: PathBuf,
    /// Seed for the tree and the fractures.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [128usize, 128, 128])]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0f64, 1.0, 1.0])]
    spacing: Vec<f64>,
    /// Bifurcation levels below the root branch.
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 4.0)]
    radius_root: f64,
    /// Child to parent radius ratio.
    #[arg(long, default_value_t = 0.75)]
    taper: f64,
    /// Number of cuts to apply; needs --broken and --cut-log.
    #[arg(long, default_value_t = 0)]
    fractures: usize,
    #[arg(long, value_name = "NRRD")]
    broken: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    cut_log: Option<PathBuf>,
}

/// Keys accepted in `--config`; every one is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    epsilon: Option<f64>,
    d_max: Option<f64>,
    window: Option<usize>,
    kappa_min: Option<f64>,
    x_min_ratio: Option<f64>,
    sigma: Option<f64>,
    delta: Option<f64>,
    surface_samples: Option<usize>,
    surface_max_iter: Option<usize>,
    seal_voxels: Option<usize>,
    rethin: Option<bool>,
    nsd_tolerance: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
}

impl From<vessel_repair::Error> for Failure {
    fn from(e: vessel_repair::Error) -> Self {
        match e {
            vessel_repair::Error::InvalidParameter(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(path: Option<&Path>) -> CliResult<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("malformed config {}: {e}", path.display())))
}

/// Flag if given on the command line, else the config value, else the
/// flag's default.
fn pick<T>(m: &ArgMatches, id: &str, flag: T, config: Option<T>) -> T {
    if m.value_source(id) == Some(ValueSource::CommandLine) {
        flag
    } else {
        config.unwrap_or(flag)
    }
}

fn repair_params(m: &ArgMatches, a: &PipelineArgs, c: &ConfigFile) -> RepairParams {
    let mut p = RepairParams {
        epsilon: pick(m, "epsilon", a.epsilon, c.epsilon),
        d_max_voxels: pick(m, "d_max", a.d_max, c.d_max),
        window: pick(m, "window", a.window, c.window),
        kappa_min_voxel: pick(m, "kappa_min", a.kappa_min, c.kappa_min),
        x_min_ratio: pick(m, "x_min_ratio", a.x_min_ratio, c.x_min_ratio),
        seal_voxels: pick(m, "seal_voxels", a.seal_voxels, c.seal_voxels),
        rethin: pick(m, "rethin", a.rethin, c.rethin),
        ..RepairParams::default()
    };
    p.geodesic.sigma_mm = a.sigma.or(c.sigma);
    p.geodesic.delta = pick(m, "delta", a.delta, c.delta);
    p.surface.n = pick(m, "surface_samples", a.surface_samples, c.surface_samples);
    p.surface.max_iter = pick(m, "surface_max_iter", a.surface_max_iter, c.surface_max_iter);
    p
}

fn read_volume(path: &Path) -> CliResult<Volume3D> {
    read_nrrd(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn run_repair(m: &ArgMatches, a: &RepairArgs, c: &ConfigFile, enc: Encoding) -> CliResult<()> {
    let params = repair_params(m, &a.params, c);
    let seg = read_volume(&a.input)?;
    let opts = RepairOptions {
        timings: a.timings,
        keep_meshes: a.dump_meshes.is_some(),
    };
    let out = repair_with(&seg, &params, opts)?;
    write_nrrd(&out.mask, &a.output, enc)?;
    if let Some(path) = &a.report {
        write_text(path, &out.report.to_json()?)?;
    }
    if let Some(path) = &a.graph_json {
        write_text(path, &graph_of_mask(&out.mask)?.to_json()?)?;
    }
    if let Some(dir) = &a.dump_meshes {
        fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("cannot create {}: {e}", dir.display())))?;
        for (p, q, mesh) in &out.meshes {
            let name = format!("pair_{}_{}_{}__{}_{}_{}.obj", p[0], p[1], p[2], q[0], q[1], q[2]);
            let path = dir.join(name);
            let file = fs::File::create(&path).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))?;
            mesh.write_obj(std::io::BufWriter::new(file))
                .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))?;
        }
    }
    println!(
        "{} connection(s), components {} -> {}",
        out.report.connections.len(),
        out.report.components_before,
        out.report.components_after
    );
    Ok(())
}

fn run_skeleton(a: &SkeletonArgs, enc: Encoding) -> CliResult<()> {
    let seg = read_volume(&a.input)?;
    let skel = morphology::skeletonize(&seg)?;
    write_nrrd(&skel, &a.output, enc)?;
    if let Some(path) = &a.graph_json {
        let dt = morphology::distance_transform(&seg)?;
        write_text(path, &build_graph(&skel, &dt)?.to_json()?)?;
    }
    info!("{} skeleton voxels", skel.foreground_count());
    Ok(())
}

fn run_edge(a: &EdgeArgs, enc: Encoding) -> CliResult<()> {
    let seg = read_volume(&a.input)?;
    let se = match a.shape {
        ShapeArg::Cross6 => StructuringElement::cross6(a.radius),
        ShapeArg::Cube26 => StructuringElement::cube26(a.radius),
    };
    write_nrrd(&morphology::edge_map(&seg, se)?, &a.output, enc)?;
    Ok(())
}

fn run_metrics(a: &MetricsArgs, c: &ConfigFile) -> CliResult<()> {
    let pred = read_volume(&a.pred)?;
    let gt = read_volume(&a.gt)?;
    let tol = a.nsd_tolerance.or(c.nsd_tolerance);
    let json = metrics::topology_report(&pred, &gt, tol)?.to_json()?;
    match &a.output {
        Some(path) => write_text(path, &json),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn run_synth(m: &ArgMatches, a: &SynthArgs, c: &ConfigFile, enc: Encoding) -> CliResult<()> {
    let seed = pick(m, "seed", a.seed, c.seed);
    let params = SynthParams {
        seed,
        dims: [a.dims[0], a.dims[1], a.dims[2]],
        spacing: [a.spacing[0], a.spacing[1], a.spacing[2]],
        depth: a.depth,
        radius_root_mm: a.radius_root,
        taper: a.taper,
        ..SynthParams::default()
    };
    let (vol, gt) = generate_tree(&params)?;
    write_nrrd(&vol, &a.output, enc)?;
    write_text(&a.truth, &gt.to_json()?)?;
    if a.fractures > 0 {
        let (Some(broken), Some(log_path)) = (&a.broken, &a.cut_log) else {
            return Err(Failure::Usage("--fractures needs --broken and --cut-log".into()));
        };
        let (cut, log) = fracture(&vol, &gt, a.fractures, seed)?;
        write_nrrd(&cut, broken, enc)?;
        write_text(log_path, &log.to_json()?)?;
        if log.cuts.len() < a.fractures {
            eprintln!("warning: placed {} of {} cuts", log.cuts.len(), a.fractures);
        }
    }
    Ok(())
}

fn run(argv: Vec<String>) -> CliResult<()> {
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    Ok(())
                }
                _ => {
                    let _ = e.print();
                    Err(Failure::Usage(String::new()))
                }
            };
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Failure::Usage(e.to_string()))?;
    let config = load_config(cli.config.as_deref())?;
    let enc = cli.encoding.into();
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match &cli.command {
        Command::Repair(a) => run_repair(sub, a, &config, enc),
        Command::Skeleton(a) => run_skeleton(a, enc),
        Command::Edge(a) => run_edge(a, enc),
        Command::Metrics(a) => run_metrics(a, &config),
        Command::Synth(a) => run_synth(sub, a, &config, enc),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn repair_matches(args: &[&str]) -> (ArgMatches, RepairArgs) {
        let argv = ["vessel-repair", "repair", "--input", "a", "--output", "b"].iter().chain(args);
        let m = Cli::command().try_get_matches_from(argv).unwrap();
        let cli = Cli::from_arg_matches(&m).unwrap();
        let sub = m.subcommand().unwrap().1.clone();
        match cli.command {
            Command::Repair(a) => (sub, a),
            _ => unreachable!(),
        }
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_match_the_library() {
        let (m, a) = repair_matches(&[]);
        assert_eq!(repair_params(&m, &a.params, &ConfigFile::default()), RepairParams::default());
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let config: ConfigFile = serde_json::from_str(r#"{"epsilon": 0.5, "window": 9, "sigma": 3.0}"#).unwrap();
        let (m, a) = repair_matches(&["--epsilon", "0.25"]);
        let p = repair_params(&m, &a.params, &config);
        assert_eq!(p.epsilon, 0.25);
        assert_eq!(p.window, 9);
        assert_eq!(p.geodesic.sigma_mm, Some(3.0));
        assert_eq!(p.d_max_voxels, 30.0);
        // A flag equal to the default still wins over the config.
        let (m, a) = repair_matches(&["--window", "7"]);
        assert_eq!(repair_params(&m, &a.params, &config).window, 7);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<ConfigFile>(r#"{"epsilom": 1.0}"#).is_err());
    }
}
