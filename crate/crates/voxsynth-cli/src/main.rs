use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use voxsynth::Error;
use voxsynth_cli::commands;
use voxsynth_cli::config::Config;

#[derive(Parser)]
#[command(
    name = "voxsynth",
    version,
    about = "Exemplar-based synthesis and rendering of voxel radiance fields"
)]
struct Cli {
    /// `key = value` configuration file read before any overrides
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Configuration override, highest precedence; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Worker thread cap; overrides VOXSYNTH_THREADS
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a procedural exemplar bundle
    Gen {
        /// Output bundle directory (config key `out`)
        #[arg(long)]
        out: Option<String>,
        /// Scene kind: grass, pebbles, carpet (config key `gen_kind`)
        #[arg(long)]
        kind: Option<String>,
        /// Grid shape as NXxNYxNZ (config keys `gen_nx/ny/nz`)
        #[arg(long, value_name = "NXxNYxNZ")]
        grid: Option<String>,
        /// Primitive count (config key `gen_count`)
        #[arg(long)]
        count: Option<usize>,
        /// Rng seed (config key `seed`)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Synthesize a larger field from an exemplar bundle
    Synth {
        /// Exemplar bundle directory (config key `exemplar`)
        #[arg(long)]
        exemplar: Option<String>,
        /// Output bundle directory (config key `out`)
        #[arg(long)]
        out: Option<String>,
        /// Output lattice as WxH (config key `out_size`)
        #[arg(long, value_name = "WxH")]
        out_size: Option<String>,
        /// two_phase, baseline, or boundary (config key `mode`)
        #[arg(long)]
        mode: Option<String>,
        /// Always take the best match (config key `greedy`)
        #[arg(long)]
        greedy: bool,
        /// Rng seed (config key `seed`)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build a shading map by projecting views onto the exemplar
    ShadeExtract {
        #[arg(long)]
        exemplar: Option<String>,
        /// View manifest listing images and cameras (config key `views`)
        #[arg(long)]
        views: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build a shading map by ray tracing a point light
    ShadeRt {
        #[arg(long)]
        exemplar: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build a target-size guider map (scale-up or ray-traced)
    Guider {
        #[arg(long)]
        exemplar: Option<String>,
        /// Source shading map (config key `map`)
        #[arg(long)]
        map: Option<String>,
        #[arg(long)]
        out: Option<String>,
        /// scale-up or ray-traced (config key `guider_kind`)
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, value_name = "WxH")]
        out_size: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Shading-guided synthesis toward a guider map
    Relight {
        #[arg(long)]
        exemplar: Option<String>,
        /// Exemplar shading map (config key `map`)
        #[arg(long)]
        map: Option<String>,
        /// Guider map at the output size (config key `guider`)
        #[arg(long)]
        guider: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a deformation network to correspondences
    DeformFit {
        /// Correspondence file of `dx dy dz cx cy cz` lines (config key `pairs`)
        #[arg(long)]
        pairs: Option<String>,
        /// Analytic surface: plane, sphere:R, cylinder:R (config key `surface`)
        #[arg(long)]
        surface: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render a bundle to a PPM image (and optionally a PFM depth map)
    Render {
        #[arg(long)]
        exemplar: Option<String>,
        /// Output PPM path (config key `out`)
        #[arg(long)]
        out: Option<String>,
        /// Optional PFM depth output (config key `depth`)
        #[arg(long)]
        depth: Option<String>,
        /// Fitted-deformation directory to apply (config key `deform`)
        #[arg(long)]
        deform: Option<String>,
    },
    /// Time baseline vs two-phase synthesis over a ladder of sizes
    Bench {
        #[arg(long)]
        exemplar: Option<String>,
        /// Optional table output path (config key `out`)
        #[arg(long)]
        out: Option<String>,
        /// Comma-separated output sizes (config key `bench_sizes`)
        #[arg(long)]
        sizes: Option<String>,
        /// Timing repetitions per cell (config key `bench_reps`)
        #[arg(long)]
        reps: Option<usize>,
    },
}

/// Apply a dedicated flag as a config override when present.
fn set_opt(cfg: &mut Config, key: &str, value: &Option<String>) -> voxsynth::Result<()> {
    if let Some(v) = value {
        cfg.apply(key, v)?;
    }
    Ok(())
}

fn set_num<T: ToString>(cfg: &mut Config, key: &str, value: &Option<T>) -> voxsynth::Result<()> {
    if let Some(v) = value {
        cfg.apply(key, &v.to_string())?;
    }
    Ok(())
}

fn apply_grid(cfg: &mut Config, grid: &Option<String>) -> voxsynth::Result<()> {
    if let Some(g) = grid {
        let parts: Vec<&str> = g.split('x').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidData(format!("--grid `{}`: expected NXxNYxNZ", g)));
        }
        cfg.apply("gen_nx", parts[0].trim())?;
        cfg.apply("gen_ny", parts[1].trim())?;
        cfg.apply("gen_nz", parts[2].trim())?;
    }
    Ok(())
}

fn build_config(cli: &Cli) -> voxsynth::Result<Config> {
    let mut cfg = Config::default();
    if let Some(path) = &cli.config {
        cfg.load_file(path)?;
    }
    for spec in &cli.set {
        cfg.apply_override(spec)?;
    }
    // Dedicated flags are the most specific spelling, so they win last.
    match &cli.command {
        Cmd::Gen { out, kind, grid, count, seed } => {
            set_opt(&mut cfg, "out", out)?;
            set_opt(&mut cfg, "gen_kind", kind)?;
            apply_grid(&mut cfg, grid)?;
            set_num(&mut cfg, "gen_count", count)?;
            set_num(&mut cfg, "seed", seed)?;
        }
        Cmd::Synth { exemplar, out, out_size, mode, greedy, seed } => {
            set_opt(&mut cfg, "exemplar", exemplar)?;
            set_opt(&mut cfg, "out", out)?;
            set_opt(&mut cfg, "out_size", out_size)?;
            set_opt(&mut cfg, "mode", mode)?;
            if *greedy {
                cfg.apply("greedy", "true")?;
            }
            set_num(&mut cfg, "seed", seed)?;
        }
        Cmd::ShadeExtract { exemplar, views, out, seed } => {
            set_opt(&mut cfg, "exemplar", exemplar)?;
            set_opt(&mut cfg, "views", views)?;
            set_opt(&mut cfg, "out", out)?;
            set_num(&mut cfg, "seed", seed)?;
        }
        Cmd::ShadeRt { exemplar, out, seed } => {
            set_opt(&mut cfg, "exemplar", exemplar)?;
            set_opt(&mut cfg, "out", out)?;
            set_num(&mut cfg, "seed", seed)?;
        }
        Cmd::Guider { exemplar, map, out, kind, out_size, seed } => {
            set_opt(&mut cfg, "exemplar", exemplar)?;
            set_opt(&mut cfg, "map", map)?;
            set_opt(&mut cfg, "out", out)?;
            set_opt(&mut cfg, "guider_kind", kind)?;
            set_opt(&mut cfg, "out_size", out_size)?;
            set_num(&mut cfg, "seed", seed)?;
        }
        Cmd::Relight { exemplar, map, guider, out, seed } => {
            set_opt(&mut cfg, "exemplar", exemplar)?;
            set_opt(&mut cfg, "map", map)?;
            set_opt(&mut cfg, "guider", guider)?;
            set_opt(&mut cfg, "out", out)?;
            set_num(&mut cfg, "seed", seed)?;
        }
        Cmd::DeformFit { pairs, surface, out, epochs, seed } => {
            set_opt(&mut cfg, "pairs", pairs)?;
            set_opt(&mut cfg, "surface", surface)?;
            set_opt(&mut cfg, "out", out)?;
            set_num(&mut cfg, "epochs", epochs)?;
            set_num(&mut cfg, "seed", seed)?;
        }
        Cmd::Render { exemplar, out, depth, deform } => {
            set_opt(&mut cfg, "exemplar", exemplar)?;
            set_opt(&mut cfg, "out", out)?;
            set_opt(&mut cfg, "depth", depth)?;
            set_opt(&mut cfg, "deform", deform)?;
        }
        Cmd::Bench { exemplar, out, sizes, reps } => {
            set_opt(&mut cfg, "exemplar", exemplar)?;
            set_opt(&mut cfg, "out", out)?;
            set_opt(&mut cfg, "bench_sizes", sizes)?;
            set_num(&mut cfg, "bench_reps", reps)?;
        }
    }
    Ok(cfg)
}

fn init_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("VOXSYNTH_THREADS").ok().and_then(|v| v.parse::<usize>().ok())
    });
    if let Some(n) = n {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn run(cli: &Cli) -> voxsynth::Result<()> {
    let cfg = build_config(cli)?;
    match &cli.command {
        Cmd::Gen { .. } => commands::cmd_gen(&cfg),
        Cmd::Synth { .. } => commands::cmd_synth(&cfg),
        Cmd::ShadeExtract { .. } => commands::cmd_shade_extract(&cfg),
        Cmd::ShadeRt { .. } => commands::cmd_shade_rt(&cfg),
        Cmd::Guider { .. } => commands::cmd_guider(&cfg),
        Cmd::Relight { .. } => commands::cmd_relight(&cfg),
        Cmd::DeformFit { .. } => commands::cmd_deform_fit(&cfg),
        Cmd::Render { .. } => commands::cmd_render(&cfg),
        Cmd::Bench { .. } => commands::cmd_bench(&cfg),
    }
}

fn main() -> ExitCode {
    // Usage errors exit 2 via clap.
    let cli = Cli::parse();
    init_threads(cli.threads);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            match e {
                Error::NonFinite(_) => ExitCode::from(4),
                _ => ExitCode::from(3),
            }
        }
    }
}
