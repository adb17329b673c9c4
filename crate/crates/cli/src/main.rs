mod config;
mod error;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcal::correction::{run_episode, run_evaluation, EstimatorKind};
use pcal::dataset::{generate_dataset, DatasetManifest, MANIFEST_FILE};
use pcal::regressor::{load_weights, save_weights, train_from_manifest, AnalyticEstimator, LearnedPolicy, Policy};
use pcal::render::render_wireframe_cube;
use pcal::OffsetEstimate;

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "pcal", version, about = "Learned camera-projector extrinsic correction on a synthetic rig")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render demonstration sequences and write a manifest.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_sequences: Option<usize>,
    },
    /// Train the regressor on a manifest's train split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Weights file to write.
        #[arg(long)]
        out: PathBuf,
        /// Loss CSV; defaults to the weights path with a .csv extension.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run seeded correction episodes and report convergence.
    Evaluate {
        #[command(flatten)]
        estimator: EstimatorArgs,
        #[arg(long)]
        n_trials: Option<usize>,
        /// Minimum convergence rate for exit status 0.
        #[arg(long)]
        threshold: Option<f64>,
        /// Report path; the report goes to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Manifest whose scene must match the configuration.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run one episode from an injected offset.
    Episode {
        #[command(flatten)]
        estimator: EstimatorArgs,
        /// Injected offset "dx,dy" in meters.
        #[arg(long, value_parser = parse_offset, allow_hyphen_values = true)]
        inject: OffsetEstimate,
        /// Directory for frame_NNN.ppm and trace.json.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Render the cube wireframe demo.
    DemoWireframe {
        #[command(flatten)]
        estimator: EstimatorArgs,
        /// Render under the true extrinsics.
        #[arg(long, conflicts_with_all = ["weights", "analytic"])]
        perfect: bool,
        #[arg(long, value_parser = parse_offset, allow_hyphen_values = true, default_value = "0.05,0")]
        inject: OffsetEstimate,
        #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
        cube_side: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EstimatorArgs {
    /// Trained weights file.
    #[arg(long, conflicts_with = "analytic")]
    weights: Option<PathBuf>,
    /// Use the centroid-based estimator instead of a trained network.
    #[arg(long)]
    analytic: bool,
}

fn parse_offset(s: &str) -> Result<OffsetEstimate, String> {
    let (a, b) = s.split_once(',').ok_or("expected \"dx,dy\"")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    let e = OffsetEstimate::new(parse(a)?, parse(b)?);
    if !e.is_finite() {
        return Err("offset must be finite".into());
    }
    Ok(e)
}

fn estimator(args: &EstimatorArgs, cfg: &RunConfig) -> Result<Box<dyn Policy + Sync>, CliError> {
    if let Some(path) = &args.weights {
        let w = load_weights(path).map_err(|e| match CliError::from(e) {
            CliError::Io(m) => CliError::io(format!("{}: {m}", path.display())),
            other => other,
        })?;
        return Ok(Box::new(LearnedPolicy::new(w).map_err(CliError::invalid)?));
    }
    if args.analytic || cfg.loop_.estimator == EstimatorKind::Analytic {
        return Ok(Box::new(AnalyticEstimator::new(cfg.scene.camera, cfg.scene.plane)));
    }
    Err(CliError::invalid("pass --weights PATH or --analytic"))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn load_manifest(path: &Path, cfg: &RunConfig) -> Result<DatasetManifest, CliError> {
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let m = DatasetManifest::load(&path)?;
    if m.scene != cfg.scene {
        return Err(CliError::invalid(format!(
            "{}: the manifest's scene differs from the configured scene",
            path.display()
        )));
    }
    Ok(m)
}

fn manifest_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Command::Generate {
        n_sequences: Some(n), ..
    } = &cli.command
    {
        cfg.gen.n_sequences = *n;
    }
    if let Command::Evaluate { n_trials, threshold, .. } = &cli.command {
        cfg.eval.n_trials = n_trials.unwrap_or(cfg.eval.n_trials);
        cfg.eval.threshold = threshold.unwrap_or(cfg.eval.threshold);
    }
    cfg.validate()?;

    match cli.command {
        Command::Generate { out, .. } => {
            let m = generate_dataset(&cfg.scene, &cfg.gen, &out)?;
            println!(
                "{} sequences ({} train / {} test)",
                m.sequences.len(),
                m.split.train.len(),
                m.split.test.len()
            );
            println!("manifest: {}", out.join(MANIFEST_FILE).display());
        }
        Command::Train { manifest, out, log } => {
            let m = load_manifest(&manifest, &cfg)?;
            let result = train_from_manifest(&m, &manifest_dir(&manifest), &cfg.train)?;
            save_weights(&result.weights, &out)?;
            let log_path = log.unwrap_or_else(|| out.with_extension("csv"));
            let mut csv = String::from("epoch,train_mse,test_mse\n");
            for l in &result.log {
                csv.push_str(&format!("{},{:e},{:e}\n", l.epoch, l.train_mse, l.test_mse));
            }
            write(&log_path, csv)?;
            if let Some(last) = result.log.last() {
                println!(
                    "trained {} epochs: train MSE {:.3e} (initial {:.3e}), test MSE {:.3e}",
                    last.epoch, last.train_mse, result.initial_train_mse, last.test_mse
                );
            }
            println!("weights: {}\nlog: {}", out.display(), log_path.display());
        }
        Command::Evaluate {
            estimator: est,
            out,
            manifest,
            ..
        } => {
            if let Some(m) = &manifest {
                load_manifest(m, &cfg)?;
            }
            let policy = estimator(&est, &cfg)?;
            let (report, _) = run_evaluation(
                &cfg.scene,
                &cfg.loop_,
                &cfg.gen,
                policy.as_ref(),
                cfg.eval.n_trials,
                cfg.eval.seed,
            )?;
            match &out {
                Some(path) => {
                    write(path, report.to_json())?;
                    println!(
                        "{} trials: convergence {:.1}%, mean final error {:.3e} m",
                        report.n_trials,
                        100.0 * report.convergence_rate,
                        report.mean_final_error_m
                    );
                }
                None => println!("{}", report.to_json()),
            }
            if report.convergence_rate < cfg.eval.threshold {
                return Err(CliError::Gate(format!(
                    "convergence rate {:.3} is below the threshold {}",
                    report.convergence_rate, cfg.eval.threshold
                )));
            }
        }
        Command::Episode {
            estimator: est,
            inject,
            dump,
        } => {
            let policy = estimator(&est, &cfg)?;
            if let Some(dir) = &dump {
                fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
            }
            let trace = run_episode(&cfg.scene, &cfg.loop_, policy.as_ref(), inject, dump.as_deref())?;
            let json = serde_json::to_string_pretty(&trace).expect("trace serializes");
            match &dump {
                Some(dir) => {
                    write(&dir.join("trace.json"), json)?;
                    println!(
                        "converged {} after {} iterations, final error {:.3e} m, {} frames in {}",
                        trace.converged,
                        trace.iterations_used,
                        trace.final_error,
                        trace.iterations.len(),
                        dir.display()
                    );
                }
                None => println!("{json}"),
            }
            if let Some(reason) = &trace.aborted {
                eprintln!("episode aborted: {reason}");
            }
        }
        Command::DemoWireframe {
            estimator: est,
            perfect,
            inject,
            cube_side,
            out,
        } => {
            let believed = if perfect {
                cfg.scene.true_extrinsics
            } else {
                let policy = estimator(&est, &cfg)?;
                let trace = run_episode(&cfg.scene, &cfg.loop_, policy.as_ref(), inject, None)?;
                if let Some(reason) = &trace.aborted {
                    return Err(CliError::invalid(format!("episode aborted: {reason}")));
                }
                println!(
                    "corrected in {} iterations, residual error {:.3e} m",
                    trace.iterations_used, trace.final_error
                );
                trace.final_believed
            };
            let img = render_wireframe_cube(&cfg.scene, &believed, cube_side).map_err(CliError::invalid)?;
            img.save_ppm(&out)?;
            println!("wireframe: {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
