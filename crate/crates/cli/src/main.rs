use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use paramux::experiment::image_io::{read_readouts_csv, save_image, write_arm_csv, write_readouts_csv};
use paramux::experiment::{parse_tau_list, run_and_write, ExperimentConfig, Pipeline, Setup, SingleArm};
use paramux::optics::gain_map;
use paramux::stats::ArmImages;
use paramux::Arm;

#[derive(Parser)]
#[command(name = "paramux", version, about = "Parametric image multiplexing: simulation and measurement reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one noisy three-arm measurement and the per-pixel statistics.
    Simulate(Common),
    /// Reconstruct the object from a readouts table written by `simulate`.
    Reduce {
        #[command(flatten)]
        common: Common,
        /// Readouts CSV (x,y,arm,value); defaults to <out>/readouts.csv.
        #[arg(long)]
        readouts: Option<PathBuf>,
    },
    /// Monte Carlo comparison of the all-arms and single-arm pipelines.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Number of seeds (overrides run.seeds).
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// |Q33|² over an (eps, beta*z) grid and the critical-length curves.
    Gainmap {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Number of eps samples in (0, 1).
        #[arg(long, default_value_t = 99)]
        eps_steps: usize,
        #[arg(long, default_value_t = 5.0)]
        beta_z_max: f64,
        #[arg(long, default_value_t = 201)]
        beta_z_steps: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Config file (key = value); defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (overrides run.base_seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated thresholds (overrides reduction.tau).
    #[arg(long)]
    tau: Option<String>,
    /// auto, off, 1, 2 or 3 (overrides run.single_arm).
    #[arg(long)]
    single_arm: Option<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(t) = &self.tau {
            cfg.taus = parse_tau_list(t)?;
        }
        if let Some(a) = &self.single_arm {
            cfg.single_arm = SingleArm::parse(a)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(common) => simulate(&common.load()?),
        Command::Reduce { common, readouts } => {
            let cfg = common.load()?;
            let path = readouts.unwrap_or_else(|| cfg.output_dir.join("readouts.csv"));
            reduce(&cfg, &path)
        }
        Command::Experiment { common, seeds } => {
            let mut cfg = common.load()?;
            if let Some(n) = seeds {
                if n == 0 {
                    bail!("--seeds must be >= 1");
                }
                cfg.seeds = n;
            }
            experiment(&cfg)
        }
        Command::Gainmap {
            out,
            eps_steps,
            beta_z_max,
            beta_z_steps,
        } => gainmap(&out, eps_steps, beta_z_max, beta_z_steps),
    }
}

fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    let setup = Setup::new(cfg)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let readouts = setup.readouts(cfg, cfg.base_seed)?;
    write_readouts_csv(File::create(dir.join("readouts.csv"))?, &setup.model, &readouts)?;
    let stats = setup.statistics()?;
    let dims = setup.dims();
    let split = |f: &dyn Fn(usize, usize) -> f64| ArmImages {
        dims,
        arms: [0, 1, 2].map(|k| (0..dims.len()).map(|p| f(p, k)).collect()),
    };
    write_arm_csv(File::create(dir.join("means.csv"))?, &split(&|p, k| stats.means[p][k]))?;
    write_arm_csv(
        File::create(dir.join("variances.csv"))?,
        &split(&|p, k| stats.covariance[p][(k, k)]),
    )?;
    save_image(&dir.join("truth.pgm"), &setup.truth)?;
    println!(
        "simulated {} object, n = {} photons/pixel, seed {}, {} sensors -> {}",
        setup.truth.dims(),
        cfg.photons_per_pixel(),
        cfg.base_seed,
        readouts.iter().map(Vec::len).sum::<usize>(),
        dir.display()
    );
    Ok(())
}

fn reduce(cfg: &ExperimentConfig, readouts_path: &Path) -> Result<()> {
    let setup = Setup::new(cfg)?;
    let file = File::open(readouts_path).with_context(|| format!("opening {}", readouts_path.display()))?;
    let readouts = read_readouts_csv(BufReader::new(file), &setup.model)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut pipelines = vec![(Pipeline::AllArms, Arm::ALL.to_vec())];
    if let Some(a) = setup.single_arm {
        pipelines.push((Pipeline::SingleArm(a), vec![a]));
    }
    for (pipeline, arms) in pipelines {
        if let Some(a) = arms.iter().find(|a| readouts[a.index()].iter().any(|v| v.is_nan())) {
            bail!("readouts for arm {a} are missing from {}", readouts_path.display());
        }
        let images = setup.reconstruct(cfg, &arms, &readouts)?;
        for (tau, img) in cfg.taus.iter().zip(&images) {
            let path = dir.join(format!("estimate_{}_tau{}.pgm", pipeline.name(), tau));
            save_image(&path, img)?;
            let m = paramux::experiment::metrics(img, &setup.truth)?;
            println!(
                "{:<5} tau={:<5} mse={:.6} snr={:.2} dB ssim={:.4} -> {}",
                pipeline.name(),
                tau,
                m.mse,
                m.snr,
                m.ssim,
                path.display()
            );
        }
    }
    Ok(())
}

fn experiment(cfg: &ExperimentConfig) -> Result<()> {
    let report = run_and_write(cfg)?;
    println!("pipeline  tau     mse (± se)              snr dB   ssim");
    for s in &report.summary {
        println!(
            "{:<9} {:<7} {:.6e} (± {:.1e})   {:>7.3}  {:.4}",
            s.pipeline.name(),
            s.tau,
            s.mean.mse,
            s.stderr.mse,
            s.mean.snr,
            s.mean.ssim
        );
    }
    if !report.failures.is_empty() {
        eprintln!("{} seed/pipeline runs failed, see run_info.txt", report.failures.len());
    }
    println!(
        "{} seeds in {:.2} s -> {}",
        cfg.seeds,
        report.runtime.as_secs_f64(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn gainmap(out: &Path, eps_steps: usize, beta_z_max: f64, beta_z_steps: usize) -> Result<()> {
    if eps_steps == 0 || beta_z_steps < 2 {
        bail!("need at least one eps sample and two beta*z samples");
    }
    let eps: Vec<f64> = (0..eps_steps).map(|i| (i + 1) as f64 / (eps_steps + 1) as f64).collect();
    let bz: Vec<f64> = (0..beta_z_steps)
        .map(|j| beta_z_max * j as f64 / (beta_z_steps - 1) as f64)
        .collect();
    let map = gain_map(&eps, &bz)?;
    fs::create_dir_all(out)?;
    map.write_csv(File::create(out.join("gainmap.csv"))?)?;
    map.write_curves_csv(File::create(out.join("critical_lengths.csv"))?)?;
    println!("{} x {} grid -> {}", eps.len(), bz.len(), out.display());
    Ok(())
}
