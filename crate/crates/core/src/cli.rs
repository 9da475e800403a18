//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data
//! error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix3, Vector3};

use crate::cov_truth::{build_samples, evaluate_cov_estimates, CovTruthInput, COMPONENTS};
use crate::fusion::{run_pipeline, PipelineConfig, TrajectoryPoint, TrajectoryRecord};
use crate::geodesy::{enu_to_ecef_pose, transform_cov, CovMatrix3, FrameTag};
use crate::gnss::{spp_solve_epoch, EpochRecord, PppConfig};
use crate::icp::{icp_register, IcpConfig, IcpError};
use crate::io::{self, IoError, PositionRecord, RegistrationRecord, ScanRecord};
use crate::metrics::MetricsReport;
use crate::pointcloud::scan_to_cart;
use crate::raim::{raim_epoch, PositionFix, VerdictRecord};
use crate::sim::{self, ScenarioConfig, TruthRecord};

/// Version line including every record schema version.
pub const VERSION_TEXT: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (schemas: scenario v1, scan v1, observation v1, truth v1, trajectory v1, verdict v1, registration v1)"
);

/// Time tolerance (s) when matching records across files.
const TIME_MATCH: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "lidar-ppp", version = VERSION_TEXT, about = "LiDAR-aided PPP: simulation, registration covariance, RAIM, fusion and evaluation")]
struct Cli {
    /// Random seed; overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// RAIM threshold multiplier.
    #[arg(long, global = true, default_value_t = crate::raim::DEFAULT_ALPHA)]
    alpha: f64,
    /// Scenario configuration (JSON). Processing commands take the ENU
    /// origin and the calibrated lever arm from it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Also write CSV next to every output.
    #[arg(long, global = true)]
    csv: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate scans, observations and truth for a scenario.
    Simulate {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Duration (s) of the built-in scenario, or override for --config.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Register consecutive scans and report the pose covariances.
    IcpCov {
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// RAIM-screened PPP from observations alone.
    Ppp {
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Satellite screening aided by a trajectory file.
    Raim {
        #[arg(long)]
        obs: PathBuf,
        /// Trajectory JSONL giving the aiding position per epoch.
        #[arg(long)]
        traj: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: odometry, RAIM, PPP and the sliding-window graph.
    Fuse(FuseArgs),
    /// Error metrics of a trajectory, and covariance-truth comparison.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[arg(long)]
    scans: PathBuf,
    #[arg(long)]
    obs: PathBuf,
    /// Fused trajectory output.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ppp_out: Option<PathBuf>,
    #[arg(long)]
    odom_out: Option<PathBuf>,
    #[arg(long)]
    verdicts_out: Option<PathBuf>,
    /// Disable satellite screening.
    #[arg(long)]
    no_raim: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Truth or reference trajectory JSONL.
    #[arg(long)]
    truth: PathBuf,
    /// Trajectory to score.
    #[arg(long)]
    est: Option<PathBuf>,
    /// Observation JSONL; its epoch count is the availability denominator.
    #[arg(long)]
    obs: Option<PathBuf>,
    /// GNSS trajectory for the covariance-truth table.
    #[arg(long)]
    gnss: Option<PathBuf>,
    /// LiDAR trajectory for the covariance-truth table.
    #[arg(long)]
    lidar: Option<PathBuf>,
    /// Estimated LiDAR covariances (trajectory JSONL); defaults to --lidar.
    #[arg(long)]
    cov: Option<PathBuf>,
    /// Directory for the report files; the summary goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if !(cli.alpha > 0.0 && cli.alpha.is_finite()) {
        return Err(CliError::Usage(format!("--alpha must be positive, got {}", cli.alpha)));
    }
    match &cli.command {
        Command::Simulate { out, duration } => simulate(&cli, out, *duration),
        Command::IcpCov { scans, out } => icp_cov(&cli, scans, out),
        Command::Ppp { obs, out } => ppp(&cli, obs, out),
        Command::Raim { obs, traj, out } => raim(&cli, obs, traj.as_deref(), out),
        Command::Fuse(args) => fuse(&cli, args),
        Command::Eval(args) => eval(&cli, args),
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let cfg: ScenarioConfig = serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(|e| data(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn required_scenario(cli: &Cli) -> Result<ScenarioConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Usage("--config <scenario.json> is required for the ENU origin".into()))?;
    load_scenario(path)
}

fn csv_path(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

fn write_outputs<T: serde::Serialize>(cli: &Cli, path: &Path, records: &[T], csv: impl FnOnce() -> String) -> Result<(), CliError> {
    io::write_jsonl(path, records)?;
    if cli.csv {
        io::write_text(&csv_path(path), &csv())?;
    }
    Ok(())
}

fn simulate(cli: &Cli, out: &Path, duration: Option<f64>) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => load_scenario(p)?,
        None => sim::example_scenario(0, 300.0),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(d) = duration {
        cfg.duration = d;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let gt = sim::generate_trajectory(&cfg).map_err(data)?;
    let scans = sim::render_scans(&cfg, &gt);
    let epochs = sim::render_gnss(&cfg, &gt).map_err(data)?;
    std::fs::create_dir_all(out).map_err(|e| data(format!("{}: {e}", out.display())))?;

    let scan_records: Vec<ScanRecord> = scans.iter().map(ScanRecord::from).collect();
    write_outputs(cli, &out.join("scans.jsonl"), &scan_records, || {
        let mut s = String::from("t,range,elevation,azimuth\n");
        for r in &scan_records {
            for p in &r.pts {
                let _ = writeln!(s, "{},{},{},{}", r.t, p[0], p[1], p[2]);
            }
        }
        s
    })?;
    let obs: Vec<EpochRecord> = epochs.iter().map(EpochRecord::from).collect();
    write_outputs(cli, &out.join("obs.jsonl"), &obs, || {
        let mut s = String::from("t,sat,pr,phi\n");
        for e in &epochs {
            for o in &e.observations {
                let _ = writeln!(s, "{},{},{},{}", e.time, o.sat_id, o.pseudorange, o.carrier);
            }
        }
        s
    })?;
    let truth: Vec<TruthRecord> = gt.samples.iter().map(TruthRecord::from).collect();
    write_outputs(cli, &out.join("truth.jsonl"), &truth, || {
        let mut s = String::from("t,east,north,up,yaw,clock\n");
        for r in &truth {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.t, r.enu[0], r.enu[1], r.enu[2], r.yaw, r.clock);
        }
        s
    })?;
    let text = serde_json::to_string_pretty(&cfg).expect("config serializes");
    io::write_text(&out.join("scenario.json"), &(text + "\n"))?;
    println!("{} scans, {} epochs, {} truth samples -> {}", scans.len(), epochs.len(), truth.len(), out.display());
    Ok(())
}

fn icp_cov(cli: &Cli, scans_path: &Path, out: &Path) -> Result<(), CliError> {
    let scans = io::read_scans(scans_path)?;
    let mut records = Vec::new();
    let mut prev: Option<(f64, Vec<_>)> = None;
    let mut motion = (Matrix3::identity(), Vector3::zeros());
    for scan in &scans {
        let cloud = match scan_to_cart(scan) {
            Ok(c) if c.len() >= 3 => c,
            _ => {
                log::warn!("scan at {} s skipped: too few points", scan.timestamp);
                continue;
            }
        };
        if let Some((t_prev, prev_cloud)) = &prev {
            let config = IcpConfig { initial: Some(motion), ..IcpConfig::default() };
            let reg = match icp_register(&cloud, prev_cloud, &config) {
                Ok((r, _, _)) => Some(r),
                Err(IcpError::NoConvergence { best, .. }) => Some(best.0),
                Err(e) => {
                    log::warn!("registration {t_prev} -> {} s failed: {e}", scan.timestamp);
                    None
                }
            };
            if let Some(r) = reg {
                motion = (r.pose.rotation, r.pose.translation);
                records.push(RegistrationRecord::new(*t_prev, scan.timestamp, &r).map_err(data)?);
            }
        }
        prev = Some((scan.timestamp, cloud));
    }
    write_outputs(cli, out, &records, || {
        let mut s = String::from("t_prev,t,rx,ry,rz,tx,ty,tz,cov_rot_xx,cov_rot_xy,cov_rot_xz,cov_rot_yy,cov_rot_yz,cov_rot_zz,cov_t_xx,cov_t_xy,cov_t_xz,cov_t_yy,cov_t_yz,cov_t_zz\n");
        for r in &records {
            let mut fields = vec![r.t_prev, r.t];
            fields.extend(r.rot.iter().chain(&r.trans).chain(&r.cov_rot).chain(&r.cov_trans));
            let _ = writeln!(s, "{}", join(&fields));
        }
        s
    })?;
    println!("{} registrations -> {}", records.len(), out.display());
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn trajectory_csv(points: &[TrajectoryRecord]) -> String {
    let mut s = String::from("t,east,north,up,cov_ee,cov_en,cov_eu,cov_nn,cov_nu,cov_uu,src\n");
    for p in points {
        let src = serde_json::to_value(p.src).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let mut fields = vec![p.t];
        fields.extend(p.enu.iter().chain(&p.cov));
        let _ = writeln!(s, "{},{src}", join(&fields));
    }
    s
}

fn write_trajectory(cli: &Cli, path: &Path, points: &[TrajectoryPoint]) -> Result<(), CliError> {
    let records: Vec<TrajectoryRecord> = points.iter().map(TrajectoryRecord::from).collect();
    write_outputs(cli, path, &records, || trajectory_csv(&records))
}

fn pipeline_config(cli: &Cli, cfg: &ScenarioConfig) -> Result<PipelineConfig, CliError> {
    let mut pc = PipelineConfig::new(cfg.origin().map_err(data)?, cfg.lever_arm());
    pc.alpha = cli.alpha;
    Ok(pc)
}

fn ppp(cli: &Cli, obs: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = required_scenario(cli)?;
    let epochs = io::read_epochs(obs)?;
    let result = run_pipeline(&[], &epochs, &pipeline_config(cli, &cfg)?).map_err(data)?;
    write_trajectory(cli, out, &result.ppp)?;
    println!("{} of {} epochs solved -> {}", result.ppp.len(), epochs.len(), out.display());
    Ok(())
}

fn verdict_csv(records: &[VerdictRecord]) -> String {
    let mut s = String::from("t,n_in,n_out,out,alpha\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{}", r.t, r.inliers.len(), r.outliers.len(), r.outliers.join(";"), r.alpha);
    }
    s
}

fn raim(cli: &Cli, obs: &Path, traj: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let cfg = required_scenario(cli)?;
    let to_ecef = enu_to_ecef_pose(&cfg.origin().map_err(data)?);
    let epochs = io::read_epochs(obs)?;
    let aiding: Vec<TrajectoryPoint> = match traj {
        Some(p) => io::read_jsonl::<TrajectoryRecord>(p)?.iter().map(TrajectoryPoint::from).collect(),
        None => vec![],
    };
    let ppp_config = PppConfig::default();
    let mut records = Vec::new();
    for epoch in &epochs {
        let lidar = match aiding.iter().find(|p| (p.t - epoch.time).abs() <= TIME_MATCH) {
            Some(p) => Some(PositionFix {
                position: to_ecef.transform_point(&p.enu),
                cov: transform_cov(&CovMatrix3::new(p.cov, FrameTag::Enu), &to_ecef).map_err(data)?,
            }),
            None => None,
        };
        let gnss = spp_solve_epoch(epoch, &ppp_config).ok().map(|s| PositionFix { position: s.x_ecef, cov: s.cov_x });
        match raim_epoch(lidar.as_ref(), gnss.as_ref(), epoch, cli.alpha) {
            Ok(v) => records.push(VerdictRecord::from(&v)),
            Err(e) => log::warn!("epoch {} s not screened: {e}", epoch.time),
        }
    }
    write_outputs(cli, out, &records, || verdict_csv(&records))?;
    println!("{} of {} epochs screened -> {}", records.len(), epochs.len(), out.display());
    Ok(())
}

fn fuse(cli: &Cli, args: &FuseArgs) -> Result<(), CliError> {
    let cfg = required_scenario(cli)?;
    let scans = io::read_scans(&args.scans)?;
    let epochs = io::read_epochs(&args.obs)?;
    let mut pc = pipeline_config(cli, &cfg)?;
    pc.raim = !args.no_raim;
    let result = run_pipeline(&scans, &epochs, &pc).map_err(data)?;
    write_trajectory(cli, &args.out, &result.fused)?;
    if let Some(p) = &args.ppp_out {
        write_trajectory(cli, p, &result.ppp)?;
    }
    if let Some(p) = &args.odom_out {
        write_trajectory(cli, p, &result.odometry)?;
    }
    if let Some(p) = &args.verdicts_out {
        let records: Vec<VerdictRecord> = result.verdicts.iter().map(VerdictRecord::from).collect();
        write_outputs(cli, p, &records, || verdict_csv(&records))?;
    }
    for (t, why) in &result.degraded {
        log::info!("{t:.3} s: {why}");
    }
    println!(
        "{} fused, {} PPP of {} epochs; {} degraded -> {}",
        result.fused.len(),
        result.ppp.len(),
        epochs.len(),
        result.degraded.len(),
        args.out.display()
    );
    Ok(())
}

/// Reference position at every requested time, or a data error naming the
/// first time without one.
fn match_truth(truth: &[PositionRecord], times: &[f64]) -> Result<Vec<Vector3<f64>>, CliError> {
    let mut sorted: Vec<&PositionRecord> = truth.iter().collect();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    times
        .iter()
        .map(|&t| {
            let k = sorted.partition_point(|r| r.t < t - TIME_MATCH);
            sorted
                .get(k)
                .filter(|r| (r.t - t).abs() <= TIME_MATCH)
                .map(|r| r.position())
                .ok_or_else(|| data(format!("no truth sample at t = {t}")))
        })
        .collect()
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<(), CliError> {
    let cov_mode = args.gnss.is_some() || args.lidar.is_some();
    if args.est.is_none() && !cov_mode {
        return Err(CliError::Usage("eval needs --est, or --gnss with --lidar".into()));
    }
    if cov_mode && (args.gnss.is_none() || args.lidar.is_none()) {
        return Err(CliError::Usage("--gnss and --lidar go together".into()));
    }
    let truth: Vec<PositionRecord> = io::read_lines(&args.truth)?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    }
    let mut stdout = String::new();

    if let Some(est_path) = &args.est {
        let est: Vec<PositionRecord> = io::read_lines(est_path)?;
        let times: Vec<f64> = est.iter().map(|r| r.t).collect();
        let reference = match_truth(&truth, &times)?;
        let observation_epochs = match &args.obs {
            Some(p) => io::read_jsonl::<EpochRecord>(p)?.len(),
            None => est.len(),
        };
        let positions: Vec<Vector3<f64>> = est.iter().map(PositionRecord::position).collect();
        let report = MetricsReport::compute(&times, &positions, &reference, observation_epochs).map_err(data)?;
        stdout.push_str(&if cli.csv { report.summary_csv() } else { report.table() });
        if let Some(dir) = &args.out {
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            io::write_text(&dir.join("report.json"), &(json + "\n"))?;
            if cli.csv {
                io::write_text(&dir.join("metrics.csv"), &report.summary_csv())?;
                io::write_text(&dir.join("cdf.csv"), &report.cdf_csv())?;
                io::write_text(&dir.join("axis.csv"), &report.axis_csv())?;
            }
        }
    }

    if let (Some(gnss_path), Some(lidar_path)) = (&args.gnss, &args.lidar) {
        let table = cov_table(&truth, gnss_path, lidar_path, args.cov.as_deref())?;
        stdout.push_str(&table);
        if let Some(dir) = &args.out {
            io::write_text(&dir.join("cov_truth.csv"), &table)?;
        }
    }
    print!("{stdout}");
    Ok(())
}

fn cov_table(truth: &[PositionRecord], gnss_path: &Path, lidar_path: &Path, cov_path: Option<&Path>) -> Result<String, CliError> {
    let read = |p: &Path| -> Result<Vec<TrajectoryPoint>, CliError> {
        Ok(io::read_jsonl::<TrajectoryRecord>(p)?.iter().map(TrajectoryPoint::from).collect())
    };
    let gnss = read(gnss_path)?;
    let lidar = read(lidar_path)?;
    let estimates = match cov_path {
        Some(p) => read(p)?,
        None => lidar.clone(),
    };
    let find = |set: &[TrajectoryPoint], t: f64| set.iter().find(|p| (p.t - t).abs() <= TIME_MATCH).cloned();
    let mut inputs = Vec::new();
    for g in &gnss {
        let (Some(l), Some(_)) = (find(&lidar, g.t), find(&estimates, g.t)) else { continue };
        let x_gt = match_truth(truth, &[g.t])?[0];
        inputs.push(CovTruthInput { epoch: g.t, x_gt, x_g: g.enu, x_l: l.enu, cov_g: CovMatrix3::new(g.cov, FrameTag::Enu) });
    }
    let (samples, skipped) = build_samples(&inputs);
    if skipped > 0 {
        log::info!("{skipped} degenerate epochs skipped");
    }
    let est: Vec<(f64, CovMatrix3)> = samples
        .iter()
        .filter_map(|s| find(&estimates, s.epoch).map(|p| (s.epoch, CovMatrix3::new(p.cov, FrameTag::Enu))))
        .collect();
    let table = evaluate_cov_estimates(&samples, &est, None).map_err(data)?;
    let mut s = String::from("component,mean,std\n");
    for (k, name) in COMPONENTS.iter().enumerate() {
        let _ = writeln!(s, "{name},{},{}", table.mean[k], table.std[k]);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_text_lists_current_schemas() {
        for (name, v) in [
            ("scenario", sim::SCENARIO_SCHEMA_VERSION),
            ("scan", io::SCAN_SCHEMA_VERSION),
            ("observation", crate::gnss::OBSERVATION_SCHEMA_VERSION),
            ("truth", sim::TRUTH_SCHEMA_VERSION),
            ("trajectory", crate::fusion::TRAJECTORY_SCHEMA_VERSION),
            ("verdict", crate::raim::VERDICT_SCHEMA_VERSION),
            ("registration", io::REGISTRATION_SCHEMA_VERSION),
        ] {
            assert!(VERSION_TEXT.contains(&format!("{name} v{v}")), "{name}");
        }
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(cli_main(["lidar-ppp"]), 1);
        assert_eq!(cli_main(["lidar-ppp", "frobnicate"]), 1);
        assert_eq!(cli_main(["lidar-ppp", "ppp", "--obs", "x.jsonl"]), 1);
        assert_eq!(cli_main(["lidar-ppp", "--version"]), 0);
        assert_eq!(cli_main(["lidar-ppp", "eval", "--truth", "t.jsonl"]), 1);
    }

    #[test]
    fn missing_input_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o.jsonl");
        let argv = ["lidar-ppp", "icp-cov", "--scans", "/nonexistent/scans.jsonl", "--out", out.to_str().unwrap()];
        assert_eq!(cli_main(argv), 2);
    }
}
