use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use planeopt::config::{RunConfig, Stage};
use planeopt::error::{Error, Result};
use planeopt::synth::{default_intrinsics, make_scene, render_frames, write_dataset, Preset};

/// Plane-regularized simplification and texturing of RGB-D reconstructions.
///
/// Log level comes from PLANEOPT_LOG (or RUST_LOG), default `info`.
#[derive(Parser)]
#[command(name = "planeopt", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline described by a config file.
    Run(RunArgs),
    /// Write a synthetic dataset (mesh, frames, trajectory, config).
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file (`key = value` lines).
    #[arg(short, long)]
    config: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Stop after this stage and dump its intermediate result.
    #[arg(long, value_name = "STAGE")]
    stop_after: Option<Stage>,
    /// Skip texture, pose and plane optimization.
    #[arg(long)]
    skip_tex: bool,
    /// Skip the geometry refinement.
    #[arg(long)]
    skip_geo: bool,
    /// Output/input face ratio for simplification.
    #[arg(long)]
    target_ratio: Option<f64>,
    #[arg(long)]
    lambda_p: Option<f64>,
    #[arg(long)]
    lambda_t: Option<f64>,
    #[arg(long)]
    lambda_l: Option<f64>,
    #[arg(long)]
    lambda_r: Option<f64>,
    /// Write intermediate meshes, texel tables and line matches.
    #[arg(long)]
    dump_debug: bool,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(short, long)]
    output: PathBuf,
    /// box, room, room-box or plane.
    #[arg(long, default_value = "room")]
    scene: Preset,
    #[arg(long, default_value_t = 12)]
    frames: usize,
    #[arg(long, default_value_t = 320)]
    width: u32,
    #[arg(long, default_value_t = 240)]
    height: u32,
    /// Target triangle edge length in meters.
    #[arg(long, default_value_t = 0.05)]
    edge_len: f64,
    /// Gaussian vertex noise in meters.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 2)]
    supersample: u32,
    /// Noise and texture seed (each scene has its own default).
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_file(&self.config)?;
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if self.stop_after.is_some() {
            cfg.stop_after = self.stop_after;
        }
        cfg.skip_tex |= self.skip_tex;
        cfg.skip_geo |= self.skip_geo;
        cfg.dump_debug |= self.dump_debug;
        let numeric = [
            ("target_ratio", self.target_ratio),
            ("lambda_p", self.lambda_p),
            ("lambda_t", self.lambda_t),
            ("lambda_l", self.lambda_l),
            ("lambda_r", self.lambda_r),
        ];
        for (k, v) in numeric {
            if let Some(v) = v {
                cfg.set(k, &v.to_string())?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let out = planeopt::pipeline::run(&cfg)?;
    let s = &out.stats;
    match (&out.obj_path, out.stopped_after) {
        (Some(p), _) => println!("wrote {}", p.display()),
        (None, Some(st)) => println!("stopped after {st}; dumps in {}", cfg.output.display()),
        _ => {}
    }
    println!(
        "faces {} -> {} ({:.2}%), {:.1} s",
        s.input_faces,
        s.result_faces,
        100.0 * s.face_ratio(),
        s.total_seconds
    );
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = a.scene.spec(a.edge_len, a.noise);
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let scene = make_scene(&spec);
    let k = default_intrinsics(a.width, a.height);
    let frames = render_frames(&scene, &a.scene.poses(a.frames), &k, a.supersample);
    write_dataset(&scene, &frames, &a.output, "")?;
    println!(
        "wrote {} ({} faces, {} frames)",
        a.output.display(),
        scene.mesh.n_faces(),
        frames.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(
        "PLANEOPT_LOG",
        std::env::var("RUST_LOG").unwrap_or_else(|_| "info".into()),
    ))
    .init();
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Argument(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
