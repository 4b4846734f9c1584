//! Batch CLI over the voxrf pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use voxrf_core::config::RunConfig;
use voxrf_core::pipeline;
use voxrf_core::Result;

#[derive(Parser)]
#[command(name = "voxrf", version, about = "Voxel radiance fields from degraded captures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn on(self) -> bool {
        matches!(self, Toggle::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Background {
    Black,
    White,
}

/// Shared config-plus-override flags for the training-based commands.
#[derive(Args)]
struct RunArgs {
    /// Scene manifest to work on.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Held-out manifest for evaluation.
    #[arg(long)]
    test_scene: Option<PathBuf>,
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    guidance: Option<Toggle>,
    #[arg(long, value_enum)]
    quadtree: Option<Toggle>,
    /// Restoration strategy: identity or exec:<path>.
    #[arg(long)]
    strategy: Option<String>,
    /// Reference views per restoration target.
    #[arg(long)]
    k: Option<usize>,
    /// Force serial gradient accumulation.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, value_enum)]
    bg: Option<Background>,
}

impl RunArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = &self.scene {
            cfg.scene = Some(s.clone());
        }
        if let Some(s) = &self.test_scene {
            cfg.test_scene = Some(s.clone());
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(g) = self.guidance {
            cfg.guidance_enabled = g.on();
        }
        if let Some(q) = self.quadtree {
            cfg.quadtree_enabled = q.on();
        }
        if let Some(s) = &self.strategy {
            cfg.strategy = s.clone();
        }
        if let Some(k) = self.k {
            cfg.k_references = k;
        }
        if self.deterministic {
            cfg.train.deterministic = true;
        }
        if let Some(bg) = self.bg {
            cfg.train.background = match bg {
                Background::Black => [0.0; 3],
                Background::White => [1.0; 3],
            };
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural toy scene (train/test manifests + field).
    GenToy {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        views: usize,
        #[arg(long, default_value_t = 4)]
        test_views: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Degrade a scene under one sampled parameter record.
    Degrade {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        target_w: Option<usize>,
        #[arg(long)]
        target_h: Option<usize>,
    },
    /// Synthesize restoration training triplets from a clip.
    MakeTriplets {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore a degraded scene with a named strategy.
    Restore {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "identity")]
        strategy: String,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train a field on a scene manifest.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Render one pose of a saved field.
    Render {
        #[arg(long)]
        field: PathBuf,
        /// View index into --scene, or a pose JSON file.
        #[arg(long)]
        pose: String,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "black")]
        bg: Background,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Evaluate a saved field against a scene.
    Eval {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write quadtree overlays for a saved tree state.
    VizQuadtree {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        tree_state: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Degrade, restore, train and evaluate in one run.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the guidance x quadtree ablation grid on one scene.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenToy { seed, views, test_views, size, grid, out } => {
            let (train, test) =
                pipeline::cmd_gen_toy(seed, views, test_views, size, [grid; 3], &out)?;
            println!("wrote {} and {}", train.display(), test.display());
        }
        Command::Degrade { scene, seed, out, target_w, target_h } => {
            let target = match (target_w, target_h) {
                (Some(w), Some(h)) => Some((w, h)),
                (None, None) => None,
                _ => {
                    return Err(voxrf_core::Error::validation(
                        "--target-w and --target-h must be given together",
                    ))
                }
            };
            let (manifest, theta) = pipeline::cmd_degrade(&scene, seed, &out, target)?;
            println!("wrote {} and {}", manifest.display(), theta.display());
        }
        Command::MakeTriplets { clip, seed, count, out } => {
            let manifest = pipeline::cmd_make_triplets(&clip, seed, count, &out)?;
            println!("wrote {}", manifest.display());
        }
        Command::Restore { scene, strategy, k, out, seed: _ } => {
            let manifest = pipeline::cmd_restore(&scene, &strategy, k, &out)?;
            println!("wrote {}", manifest.display());
        }
        Command::Train { run } => {
            let cfg = run.build()?;
            let manifest = cfg
                .scene
                .clone()
                .ok_or_else(|| voxrf_core::Error::validation("train requires --scene"))?;
            let art = pipeline::cmd_train(&manifest, &cfg, &cfg.out.join("field.bin"))?;
            println!(
                "wrote {} ({} rays, {:.1}s)",
                art.field.display(),
                art.total_rays,
                art.total_seconds
            );
        }
        Command::Render { field, pose, scene, out, bg, seed: _ } => {
            let background = match bg {
                Background::Black => [0.0; 3],
                Background::White => [1.0; 3],
            };
            let pose_spec = match pose.parse::<usize>() {
                Ok(index) => {
                    let manifest = scene.as_deref().ok_or_else(|| {
                        voxrf_core::Error::validation("--pose <index> requires --scene")
                    })?;
                    pipeline::PoseSpec::Index { manifest, index }
                }
                Err(_) => pipeline::PoseSpec::File(std::path::Path::new(&pose)),
            };
            pipeline::cmd_render(&field, pose_spec, &out, background)?;
            println!("wrote {}", out.display());
        }
        Command::Eval { field, scene, out, seed: _ } => {
            let report = pipeline::cmd_eval(&field, &scene, &out, 0, 0.0)?;
            match report.mean_psnr {
                Some(p) => println!("mean psnr {p:.3} dB, mean ssim {:.4}", report.mean_ssim),
                None => println!("mean psnr inf, mean ssim {:.4}", report.mean_ssim),
            }
        }
        Command::VizQuadtree { scene, tree_state, out, seed: _ } => {
            let written = pipeline::cmd_viz_quadtree(&scene, &tree_state, &out)?;
            println!("wrote {} overlays", written.len());
        }
        Command::Pipeline { run } => {
            let cfg = run.build()?;
            let summary = pipeline::cmd_pipeline(&cfg)?;
            match summary.mean_psnr {
                Some(p) => println!("pipeline done: mean psnr {p:.3} dB"),
                None => println!("pipeline done: mean psnr inf"),
            }
        }
        Command::Ablate { run } => {
            let cfg = run.build()?;
            let table = pipeline::cmd_ablate(&cfg)?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
