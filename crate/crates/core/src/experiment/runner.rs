//! Monte Carlo comparison of the all-arms and single-arm pipelines.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::image::{Dims, Image};
use crate::measurement::MeasurementModel;
use crate::optics::Arm;
use crate::par;
use crate::reduction::{model_estimability, ReductionPlan, Transform};
use crate::stats::{ArmImages, ObjectImage, PixelStatistics, ResponseMap};

use super::config::{ExperimentConfig, ObjectSource, SingleArm};
use super::image_io::{csv_error, load_image, save_image, save_normalized, write_arm_csv};
use super::metrics::{metrics, Metrics};
use super::phantom::builtin_phantom;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    AllArms,
    SingleArm(Arm),
}

impl Pipeline {
    pub fn name(self) -> String {
        match self {
            Pipeline::AllArms => "all".into(),
            Pipeline::SingleArm(a) => format!("arm{}", a.label()),
        }
    }
}

/// One (seed, pipeline, τ) result; metrics are NaN when the seed failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRow {
    pub seed: u64,
    pub pipeline: Pipeline,
    pub tau: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub pipeline: Pipeline,
    pub tau: f64,
    /// Seeds that produced a result.
    pub count: usize,
    pub mean: Metrics,
    /// Standard error of the mean (NaN with fewer than two seeds).
    pub stderr: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedFailure {
    pub seed: u64,
    pub pipeline: Pipeline,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<SeedRow>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<SeedFailure>,
    /// mean/σ of each arm at its brightest pixel under g = n.
    pub arm_snr: [f64; 3],
    pub single_arm: Option<Arm>,
    pub photons_per_pixel: f64,
    pub object_dims: Dims,
    /// Working dims when the object was padded for the transform.
    pub padded_dims: Option<Dims>,
    pub worst_case_mse: f64,
    pub runtime: Duration,
    pub config_echo: String,
}

/// Per-arm mean/σ at the arm's brightest pixel with every pixel at g = n.
///
/// Arms without signal score 0; ties go to the lowest index.
pub fn arm_snrs(map: &ResponseMap, n: f64) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for arm in Arm::ALL {
        let k = arm.index();
        let conv = map.conversion(arm);
        let Some((p, c)) = conv
            .iter()
            .copied()
            .enumerate()
            .fold(None::<(usize, f64)>, |best, (p, c)| match best {
                Some((_, b)) if b >= c => best,
                _ => Some((p, c)),
            })
        else {
            continue;
        };
        let var = map.unit_covariance(p)?[(k, k)] * n;
        let snr = c * n / var.sqrt();
        out[k] = if snr.is_finite() { snr } else { 0.0 };
    }
    Ok(out)
}

pub fn best_single_arm(map: &ResponseMap, n: f64) -> Result<Arm> {
    let snr = arm_snrs(map, n)?;
    let mut best = Arm::One;
    for arm in Arm::ALL {
        if snr[arm.index()] > snr[best.index()] {
            best = arm;
        }
    }
    Ok(best)
}

pub fn load_object(cfg: &ExperimentConfig) -> Result<Image> {
    match &cfg.object {
        ObjectSource::Phantom(spec) => builtin_phantom(spec),
        ObjectSource::File(path) => load_image(path),
    }
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn summarize(rows: &[SeedRow], pipelines: &[Pipeline], taus: &[f64]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &pipeline in pipelines {
        for &tau in taus {
            let ok: Vec<&Metrics> = rows
                .iter()
                .filter(|r| r.pipeline == pipeline && r.tau == tau && !r.metrics.mse.is_nan())
                .map(|r| &r.metrics)
                .collect();
            let col = |f: fn(&Metrics) -> f64| mean_stderr(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
            let (mse, mse_se) = col(|m| m.mse);
            let (snr, snr_se) = col(|m| m.snr);
            let (ssim, ssim_se) = col(|m| m.ssim);
            out.push(SummaryRow {
                pipeline,
                tau,
                count: ok.len(),
                mean: Metrics { mse, snr, ssim },
                stderr: Metrics {
                    mse: mse_se,
                    snr: snr_se,
                    ssim: ssim_se,
                },
            });
        }
    }
    out
}

const NAN_METRICS: Metrics = Metrics {
    mse: f64::NAN,
    snr: f64::NAN,
    ssim: f64::NAN,
};

struct SeedOutput {
    rows: Vec<SeedRow>,
    failures: Vec<SeedFailure>,
    images: Vec<(Pipeline, f64, Image)>,
}

/// Runs every seed for both pipelines. Nothing is written to disk; see
/// [`ExperimentReport::write_to`] and [`run_and_write`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_inner(cfg, None)
}

/// Runs the experiment and writes tables (and images if enabled) to
/// `cfg.output_dir`.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    fs::create_dir_all(&cfg.output_dir)?;
    let report = run_inner(cfg, Some(&cfg.output_dir))?;
    report.write_to(&cfg.output_dir)?;
    Ok(report)
}

/// Object, response and measurement model shared by every seed.
#[derive(Debug, Clone)]
pub struct Setup {
    /// Object as loaded, before any padding; metrics compare against it.
    pub truth: Image,
    /// Object on the working grid (padded to powers of two for Haar).
    pub object: ObjectImage,
    pub padded: bool,
    pub model: MeasurementModel,
    pub arm_snr: [f64; 3],
    pub single_arm: Option<Arm>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let truth = load_object(cfg)?;
        let padded = cfg.reduction.transform == Transform::Haar && !truth.dims().is_pow2();
        let work = if padded { truth.pad_to_pow2() } else { truth.clone() };
        let n = cfg.photons_per_pixel();
        let object = ObjectImage::new(work, n)?;
        let crystal = cfg.crystal()?;
        let map = ResponseMap::new(object.dims(), &cfg.geometry, &crystal, cfg.stats)?;
        let arm_snr = arm_snrs(&map, n)?;
        let single_arm = match cfg.single_arm {
            SingleArm::Off => None,
            SingleArm::Auto => Some(best_single_arm(&map, n)?),
            SingleArm::Fixed(a) => Some(a),
        };
        let dark = if cfg.zero_noise { [0.0; 3] } else { cfg.dark_variance };
        let model = MeasurementModel::new(&cfg.sensors, map, dark, n)?;
        Ok(Self {
            truth,
            object,
            padded,
            model,
            arm_snr,
            single_arm,
        })
    }

    /// Working-grid dims.
    pub fn dims(&self) -> Dims {
        self.object.dims()
    }

    pub fn statistics(&self) -> Result<PixelStatistics> {
        PixelStatistics::from_response(&self.object, self.model.response())
    }

    /// Readouts of all three arms: noisy for `seed`, or clean under the
    /// zero-noise override.
    pub fn readouts(&self, cfg: &ExperimentConfig, seed: u64) -> Result<[Vec<f64>; 3]> {
        let g = self.object.illumination();
        if cfg.zero_noise {
            Ok([
                self.model.arm_forward(Arm::One, &g)?,
                self.model.arm_forward(Arm::Two, &g)?,
                self.model.arm_forward(Arm::Three, &g)?,
            ])
        } else {
            self.model.simulate_all_arms(&g, seed)
        }
    }

    /// Reduces `readouts` with the given arms at every τ and crops the
    /// estimates back to the object dims.
    pub fn reconstruct(
        &self,
        cfg: &ExperimentConfig,
        arms: &[Arm],
        readouts: &[Vec<f64>; 3],
    ) -> Result<Vec<Image>> {
        let model = self.model.with_arms(arms)?;
        let plan = ReductionPlan::new(&model, &cfg.reduction)?;
        plan.reduce_sweep(&model.select(readouts), &cfg.taus)?
            .into_iter()
            .map(|o| o.estimate_image().crop(self.truth.dims()))
            .collect()
    }
}

fn run_inner(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    let started = Instant::now();
    let setup = Setup::new(cfg)?;
    let Setup {
        ref truth,
        ref object,
        ref model,
        arm_snr,
        single_arm,
        padded: needs_pad,
    } = setup;
    let object_dims = truth.dims();
    let dims = object.dims();
    let n = cfg.photons_per_pixel();
    let stats = if out_dir.is_some() { Some(setup.statistics()?) } else { None };

    let est = model_estimability(model, &cfg.reduction)?;
    if !est.estimable {
        return Err(Error::NotEstimable { residual: est.residual });
    }
    let all_plan = ReductionPlan::new(model, &cfg.reduction)?;
    let worst_case_mse = all_plan.worst_case_mse();
    // a single arm may be unusable where the three together are not (e.g.
    // singular sensor matrices); its seeds are then reported as failed
    let mut plans: Vec<(Pipeline, MeasurementModel, std::result::Result<ReductionPlan, String>)> =
        vec![(Pipeline::AllArms, model.clone(), Ok(all_plan))];
    if let Some(arm) = single_arm {
        let m = model.with_arms(&[arm])?;
        let plan = ReductionPlan::new(&m, &cfg.reduction).map_err(|e| format!("arm {arm} plan: {e}"));
        plans.push((Pipeline::SingleArm(arm), m, plan));
    }
    let pipelines: Vec<Pipeline> = plans.iter().map(|p| p.0).collect();
    let keep_images = cfg.save_images && out_dir.is_some();

    let run_seed = |i: usize| -> SeedOutput {
        let seed = cfg.base_seed.wrapping_add(i as u64);
        let mut out = SeedOutput {
            rows: Vec::new(),
            failures: Vec::new(),
            images: Vec::new(),
        };
        let readouts = setup.readouts(cfg, seed);
        for (pipeline, m, plan) in &plans {
            let result = match (&readouts, plan) {
                (Err(e), _) => Err(e.to_string()),
                (_, Err(e)) => Err(e.clone()),
                (Ok(all), Ok(plan)) => {
                    let xi = m.select(all);
                    plan.reduce_sweep(&xi, &cfg.taus)
                        .and_then(|outcomes| {
                            outcomes
                                .into_iter()
                                .map(|o| {
                                    let img = o.estimate_image().crop(object_dims)?;
                                    Ok((metrics(&img, truth)?, img))
                                })
                                .collect::<Result<Vec<_>>>()
                        })
                        .map_err(|e| e.to_string())
                }
            };
            match result {
                Ok(per_tau) => {
                    for (&tau, (metrics, img)) in cfg.taus.iter().zip(per_tau) {
                        out.rows.push(SeedRow {
                            seed,
                            pipeline: *pipeline,
                            tau,
                            metrics,
                        });
                        if keep_images {
                            out.images.push((*pipeline, tau, img));
                        }
                    }
                }
                Err(e) => {
                    out.failures.push(SeedFailure {
                        seed,
                        pipeline: *pipeline,
                        message: e,
                    });
                    for &tau in &cfg.taus {
                        out.rows.push(SeedRow {
                            seed,
                            pipeline: *pipeline,
                            tau,
                            metrics: NAN_METRICS,
                        });
                    }
                }
            }
        }
        out
    };
    let outputs = par::map_indexed(cfg.stats.exec, cfg.seeds, run_seed);

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (i, o) in outputs.into_iter().enumerate() {
        rows.extend(o.rows);
        failures.extend(o.failures);
        if let Some(dir) = out_dir.filter(|_| keep_images) {
            let seed = cfg.base_seed.wrapping_add(i as u64);
            let sub = dir.join("images").join(format!("seed_{seed}"));
            fs::create_dir_all(&sub)?;
            for (pipeline, tau, img) in &o.images {
                save_image(&sub.join(format!("{}_tau{}.pgm", pipeline.name(), tau)), img)?;
            }
        }
    }
    if let (Some(dir), Some(stats)) = (out_dir, &stats) {
        if cfg.save_images {
            let img_dir = dir.join("images");
            fs::create_dir_all(&img_dir)?;
            save_image(&img_dir.join("truth.pgm"), truth)?;
            for arm in Arm::ALL {
                let mean = Image::from_fn(dims, |x, y| stats.means[dims.index(x, y)][arm.index()]);
                save_normalized(&img_dir.join(format!("mean_arm{}.pgm", arm.label())), &mean)?;
            }
        }
        let split = |f: &dyn Fn(usize, usize) -> f64| ArmImages {
            dims,
            arms: [0, 1, 2].map(|k| (0..dims.len()).map(|p| f(p, k)).collect()),
        };
        write_arm_csv(fs::File::create(dir.join("means.csv"))?, &split(&|p, k| stats.means[p][k]))?;
        write_arm_csv(
            fs::File::create(dir.join("variances.csv"))?,
            &split(&|p, k| stats.covariance[p][(k, k)]),
        )?;
    }
    let summary = summarize(&rows, &pipelines, &cfg.taus);
    Ok(ExperimentReport {
        rows,
        summary,
        failures,
        arm_snr,
        single_arm,
        photons_per_pixel: n,
        object_dims,
        padded_dims: needs_pad.then_some(dims),
        worst_case_mse,
        runtime: started.elapsed(),
        config_echo: cfg.to_config_string(),
    })
}

impl ExperimentReport {
    /// `seed,pipeline,tau,mse,snr,ssim`: per-seed rows in seed order, then a
    /// `mean` row per (pipeline, τ).
    pub fn write_report_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seed", "pipeline", "tau", "mse", "snr", "ssim"]).map_err(csv_error)?;
        for r in &self.rows {
            w.write_record(&[
                r.seed.to_string(),
                r.pipeline.name(),
                r.tau.to_string(),
                r.metrics.mse.to_string(),
                r.metrics.snr.to_string(),
                r.metrics.ssim.to_string(),
            ])
            .map_err(csv_error)?;
        }
        for s in &self.summary {
            w.write_record(&[
                "mean".to_string(),
                s.pipeline.name(),
                s.tau.to_string(),
                s.mean.mse.to_string(),
                s.mean.snr.to_string(),
                s.mean.ssim.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "pipeline", "tau", "seeds", "mse", "mse_se", "snr", "snr_se", "ssim", "ssim_se",
        ])
        .map_err(csv_error)?;
        for s in &self.summary {
            w.write_record(&[
                s.pipeline.name(),
                s.tau.to_string(),
                s.count.to_string(),
                s.mean.mse.to_string(),
                s.stderr.mse.to_string(),
                s.mean.snr.to_string(),
                s.stderr.snr.to_string(),
                s.mean.ssim.to_string(),
                s.stderr.ssim.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable run notes, including the wall-clock runtime (which is
    /// why it is kept out of the CSV tables).
    pub fn run_info(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "runtime_s = {:.3}", self.runtime.as_secs_f64());
        let _ = writeln!(s, "photons_per_pixel = {}", self.photons_per_pixel);
        let _ = writeln!(s, "object = {}", self.object_dims);
        match self.padded_dims {
            Some(d) => {
                let _ = writeln!(s, "padded = {d} (edge replicated, metrics on the original area)");
            }
            None => {
                let _ = writeln!(s, "padded = no");
            }
        }
        for arm in Arm::ALL {
            let _ = writeln!(s, "arm{}_snr = {}", arm.label(), self.arm_snr[arm.index()]);
        }
        let _ = writeln!(
            s,
            "single_arm = {}",
            self.single_arm.map_or("off".to_string(), |a| a.label().to_string())
        );
        let _ = writeln!(s, "worst_case_mse_total = {}", self.worst_case_mse);
        let _ = writeln!(s, "failed = {}", self.failures.len());
        for f in &self.failures {
            let _ = writeln!(s, "  seed {} {}: {}", f.seed, f.pipeline.name(), f.message);
        }
        let _ = writeln!(s, "\n# configuration\n{}", self.config_echo);
        s
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_report_csv(fs::File::create(dir.join("report.csv"))?)?;
        self.write_summary_csv(fs::File::create(dir.join("summary.csv"))?)?;
        fs::write(dir.join("run_info.txt"), self.run_info())?;
        Ok(())
    }

    pub fn summary_for(&self, pipeline: Pipeline, tau: f64) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.pipeline == pipeline && s.tau == tau)
    }
}
