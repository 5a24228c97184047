//! Flat `key = value` experiment configuration.
//!
//! Keys are dotted (`geometry.focal_length`), `#` starts a comment, and every
//! physical quantity carries a unit suffix: lengths in `m cm mm um nm`, with
//! `^-1`, `^2` or `^-2` for wave numbers, areas and densities. Wavelengths
//! accept either a length or a wave number (`1.2 um^-1` means λ = 1/1.2 µm).
//! Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::Dims;
use crate::measurement::{SensorLayout, SensorModel};
use crate::optics::{Arm, CrystalParams, OpticalGeometry};
use crate::reduction::{ReductionConfig, Transform};
use crate::stats::{CovarianceModel, StatsOptions};

use super::phantom::PhantomKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dimension {
    Length,
    InverseLength,
    Area,
    InverseArea,
}

/// Parses `<number> <unit>` into SI.
fn parse_quantity(raw: &str) -> std::result::Result<(f64, Dimension), String> {
    let mut parts = raw.split_whitespace();
    let num = parts.next().ok_or("missing value")?;
    let unit = parts.next().ok_or_else(|| format!("`{raw}` needs a unit suffix"))?;
    if parts.next().is_some() {
        return Err(format!("unexpected text after unit in `{raw}`"));
    }
    let value: f64 = num.parse().map_err(|_| format!("`{num}` is not a number"))?;
    let (base, power) = match unit.split_once('^') {
        Some((b, p)) => (b, p),
        None => (unit, "1"),
    };
    let scale = match base {
        "m" => 1.0,
        "cm" => 1e-2,
        "mm" => 1e-3,
        "um" | "µm" => 1e-6,
        "nm" => 1e-9,
        _ => return Err(format!("unknown length unit `{base}`")),
    };
    let (si, dim) = match power {
        "1" => (value * scale, Dimension::Length),
        "-1" => (value / scale, Dimension::InverseLength),
        "2" => (value * scale * scale, Dimension::Area),
        "-2" => (value / (scale * scale), Dimension::InverseArea),
        _ => return Err(format!("unsupported unit power `^{power}`")),
    };
    Ok((si, dim))
}

/// Where the object transparency comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectSource {
    Phantom(PhantomSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub dims: Dims,
    /// Two-slit geometry in pixels; `None` picks width/8, width/8, height/2.
    pub slit_width: Option<usize>,
    pub slit_separation: Option<usize>,
    pub slit_height: Option<usize>,
    /// Checkerboard block side in pixels.
    pub block: usize,
}

/// Mean photon count of a fully transparent pixel, given directly or as a
/// photon density times the pixel area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Illumination {
    /// Photons per m².
    MaxDensity(f64),
    PhotonsPerPixel(f64),
}

impl Illumination {
    pub fn photons_per_pixel(&self, geom: &OpticalGeometry) -> f64 {
        match *self {
            Illumination::MaxDensity(d) => d * geom.pixel_area(),
            Illumination::PhotonsPerPixel(n) => n,
        }
    }
}

/// Which single-arm comparison to run next to the all-arms pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingleArm {
    Off,
    /// Highest mean/σ at the brightest pixel under worst-case illumination.
    Auto,
    Fixed(Arm),
}

impl SingleArm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "off" | "none" => Ok(SingleArm::Off),
            "auto" | "best" => Ok(SingleArm::Auto),
            other => {
                let label: usize = other
                    .parse()
                    .map_err(|_| Error::param(format!("single arm must be off, auto, 1, 2 or 3, got `{other}`")))?;
                Ok(SingleArm::Fixed(Arm::from_label(label)?))
            }
        }
    }

    fn label(&self) -> String {
        match self {
            SingleArm::Off => "off".into(),
            SingleArm::Auto => "auto".into(),
            SingleArm::Fixed(a) => a.label().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub geometry: OpticalGeometry,
    pub epsilon: f64,
    pub beta_z: f64,
    /// Up-conversion coupling β in m⁻¹; only sets the length scale.
    pub beta: f64,
    pub object: ObjectSource,
    pub illumination: Illumination,
    pub sensors: SensorLayout,
    pub dark_variance: [f64; 3],
    /// Simulate ξ = A g without noise (the reduction still assumes Σ_ν).
    pub zero_noise: bool,
    pub stats: StatsOptions,
    pub reduction: ReductionConfig,
    pub taus: Vec<f64>,
    pub seeds: usize,
    pub base_seed: u64,
    pub single_arm: SingleArm,
    pub save_images: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            geometry: OpticalGeometry::default(),
            epsilon: 0.4,
            beta_z: 1.0,
            beta: 100.0,
            object: ObjectSource::Phantom(PhantomSpec {
                kind: PhantomKind::TwoSlits,
                dims: Dims { width: 64, height: 64 },
                slit_width: None,
                slit_separation: None,
                slit_height: None,
                block: 8,
            }),
            illumination: Illumination::MaxDensity(1e11),
            sensors: SensorLayout::overlapping(),
            dark_variance: [0.0; 3],
            zero_noise: false,
            stats: StatsOptions::default(),
            reduction: ReductionConfig::default(),
            taus: vec![0.0, 0.3, 0.5, 0.6],
            seeds: 100,
            base_seed: 1,
            single_arm: SingleArm::Auto,
            save_images: true,
            output_dir: PathBuf::from("out"),
        }
    }
}

struct Entry {
    line: usize,
    value: String,
}

fn fail(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

struct Reader {
    entries: BTreeMap<String, Entry>,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|_| fail(e.line, format!("`{key}`: `{}` is not a valid number", e.value))),
        }
    }

    fn boolean(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => match e.value.as_str() {
                "true" | "yes" | "on" => Ok(Some(true)),
                "false" | "no" | "off" => Ok(Some(false)),
                v => Err(fail(e.line, format!("`{key}`: expected true or false, got `{v}`"))),
            },
        }
    }

    fn quantity(&mut self, key: &str, allowed: &[Dimension]) -> Result<Option<(f64, Dimension)>> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => {
                let (v, d) = parse_quantity(&e.value).map_err(|m| fail(e.line, format!("`{key}`: {m}")))?;
                if !allowed.contains(&d) {
                    return Err(fail(e.line, format!("`{key}`: unit `{}` has the wrong dimension", e.value)));
                }
                Ok(Some((v, d)))
            }
        }
    }

    fn with<T>(&mut self, key: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => f(&e.value).map(Some).map_err(|err| match err {
                Error::Config { .. } => err,
                other => fail(e.line, format!("`{key}`: {other}")),
            }),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; a relative `object.file` resolves against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| fail(line, format!("expected `key = value`, got `{content}`")))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(fail(line, "empty key"));
            }
            let prev = entries.insert(
                key.clone(),
                Entry {
                    line,
                    value: v.trim().to_string(),
                },
            );
            if let Some(p) = prev {
                return Err(fail(line, format!("`{key}` already set on line {}", p.line)));
            }
        }
        let mut r = Reader { entries };
        let mut cfg = ExperimentConfig::default();

        // geometry
        let lambda = |r: &mut Reader, key: &str, default: f64| -> Result<f64> {
            Ok(match r.quantity(key, &[Dimension::Length, Dimension::InverseLength])? {
                Some((v, Dimension::InverseLength)) => 1.0 / v,
                Some((v, _)) => v,
                None => default,
            })
        };
        let g0 = cfg.geometry;
        let l1 = lambda(&mut r, "geometry.lambda1", g0.wavelength(Arm::One))?;
        let l2 = lambda(&mut r, "geometry.lambda2", g0.wavelength(Arm::Two))?;
        let l3 = lambda(&mut r, "geometry.lambda3", g0.wavelength(Arm::Three))?;
        let focal = r
            .quantity("geometry.focal_length", &[Dimension::Length])?
            .map_or(g0.focal_length(), |q| q.0);
        let pupil = r
            .quantity("geometry.pupil_area", &[Dimension::Area])?
            .map_or(g0.pupil_area(), |q| q.0);
        let pixel = r
            .quantity("geometry.pixel_area", &[Dimension::Area])?
            .map_or(g0.pixel_area(), |q| q.0);
        cfg.geometry = OpticalGeometry::new(l1, l2, l3, focal, pupil, pixel).map_err(|e| fail(0, e.to_string()))?;

        // crystal
        cfg.epsilon = r.number("crystal.eps")?.unwrap_or(cfg.epsilon);
        cfg.beta_z = r.number("crystal.beta_z")?.unwrap_or(cfg.beta_z);
        if let Some((b, _)) = r.quantity("crystal.beta", &[Dimension::InverseLength])? {
            cfg.beta = b;
        }

        // object
        let file = r.take("object.file");
        let kind = r.with("object.phantom", PhantomKind::from_name)?;
        let width: Option<usize> = r.number("object.width")?;
        let height: Option<usize> = r.number("object.height")?;
        let slit_width = r.number("object.slit_width")?;
        let slit_separation = r.number("object.slit_separation")?;
        let slit_height = r.number("object.slit_height")?;
        let block: Option<usize> = r.number("object.block")?;
        match (file, kind) {
            (Some(f), Some(_)) => return Err(fail(f.line, "set either object.file or object.phantom, not both")),
            (Some(f), None) => {
                let p = PathBuf::from(&f.value);
                cfg.object = ObjectSource::File(if p.is_absolute() { p } else { base_dir.join(p) });
            }
            (None, kind) => {
                let ObjectSource::Phantom(mut spec) = cfg.object.clone() else {
                    unreachable!("default object is a phantom")
                };
                spec.kind = kind.unwrap_or(spec.kind);
                let w = width.unwrap_or(spec.dims.width);
                // a lone width means a square image
                let h = height.unwrap_or(if width.is_some() { w } else { spec.dims.height });
                spec.dims = Dims::new(w, h).map_err(|e| fail(0, e.to_string()))?;
                spec.slit_width = slit_width;
                spec.slit_separation = slit_separation;
                spec.slit_height = slit_height;
                spec.block = block.unwrap_or(spec.block);
                cfg.object = ObjectSource::Phantom(spec);
            }
        }

        // illumination
        let density = r.quantity("illumination.max_density", &[Dimension::InverseArea])?;
        let count: Option<f64> = r.number("illumination.photons_per_pixel")?;
        cfg.illumination = match (density, count) {
            (Some(_), Some(_)) => {
                return Err(fail(0, "set either illumination.max_density or illumination.photons_per_pixel"))
            }
            (Some((d, _)), None) => Illumination::MaxDensity(d),
            (None, Some(n)) => Illumination::PhotonsPerPixel(n),
            (None, None) => cfg.illumination,
        };

        // sensors
        if let Some(layout) = r.with("sensors.layout", |s| match s {
            "overlapping" => Ok(SensorLayout::overlapping()),
            "tiled" => Ok(SensorLayout::tiled()),
            "aligned_tiled" => Ok(SensorLayout::aligned_tiled()),
            _ => Err(Error::param(format!("unknown layout `{s}` (overlapping, tiled, aligned_tiled)"))),
        })? {
            cfg.sensors = layout;
        }
        let dark_all: Option<f64> = r.number("noise.dark_variance")?;
        for arm in Arm::ALL {
            let k = arm.index();
            let prefix = format!("sensors.arm{}", arm.label());
            let s = &mut cfg.sensors.arms[k];
            s.psf_width = r.number(&format!("{prefix}.psf_width"))?.unwrap_or(s.psf_width);
            s.stride = r.number(&format!("{prefix}.stride"))?.unwrap_or(s.stride);
            s.offset = r.number(&format!("{prefix}.offset"))?.unwrap_or(s.offset);
            s.response = r.number(&format!("{prefix}.response"))?.unwrap_or(s.response);
            cfg.dark_variance[k] = r
                .number(&format!("noise.arm{}.dark_variance", arm.label()))?
                .or(dark_all)
                .unwrap_or(0.0);
        }
        cfg.zero_noise = r.boolean("noise.zero")?.unwrap_or(false);

        // statistics
        cfg.stats.axial_approximation = r.boolean("stats.axial")?.unwrap_or(false);
        if let Some(m) = r.with("stats.covariance", |s| match s {
            "linearized" => Ok(CovarianceModel::Linearized),
            "closed_form" => Ok(CovarianceModel::ClosedForm),
            _ => Err(Error::param(format!("unknown covariance model `{s}` (linearized, closed_form)"))),
        })? {
            cfg.stats.covariance_model = m;
        }

        // reduction
        let red = &mut cfg.reduction;
        if let Some(t) = r.with("reduction.transform", Transform::from_name)? {
            red.transform = t;
        }
        red.pinv_tolerance = r.number("reduction.pinv_tolerance")?.unwrap_or(red.pinv_tolerance);
        red.estimability_tol = r
            .number("reduction.estimability_tol")?
            .unwrap_or(red.estimability_tol);
        red.fixed_point_tol = r.number("reduction.fixed_point_tol")?.unwrap_or(red.fixed_point_tol);
        red.max_fixed_point_iters = r
            .number("reduction.max_fixed_point_iters")?
            .unwrap_or(red.max_fixed_point_iters);
        red.qp_tol = r.number("reduction.qp_tol")?.unwrap_or(red.qp_tol);
        red.qp_max_iters = r.number("reduction.qp_max_iters")?.unwrap_or(red.qp_max_iters);
        red.relaxation = r.number("reduction.relaxation")?.or(red.relaxation);
        if let Some(t) = r.with("reduction.tau", parse_tau_list)? {
            cfg.taus = t;
        }

        // run
        cfg.seeds = r.number("run.seeds")?.unwrap_or(cfg.seeds);
        cfg.base_seed = r.number("run.base_seed")?.unwrap_or(cfg.base_seed);
        if let Some(s) = r.with("run.single_arm", SingleArm::parse)? {
            cfg.single_arm = s;
        }
        cfg.save_images = r.boolean("run.save_images")?.unwrap_or(cfg.save_images);
        if let Some(e) = r.take("output.dir") {
            // relative output paths follow the working directory, not the config
            cfg.output_dir = PathBuf::from(e.value);
        }

        if let Some((key, e)) = r.entries.into_iter().next() {
            return Err(fail(e.line, format!("unknown key `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::param(format!("crystal.eps must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.beta_z.is_finite() && self.beta_z > 0.0) {
            return Err(Error::param(format!("crystal.beta_z must be > 0, got {}", self.beta_z)));
        }
        self.crystal()?;
        let n = self.illumination.photons_per_pixel(&self.geometry);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::param(format!("photons per pixel must be > 0, got {n}")));
        }
        for s in &self.sensors.arms {
            s.validate()?;
        }
        if self.dark_variance.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("dark-noise variances must be >= 0"));
        }
        self.reduction.validate()?;
        if self.taus.is_empty() {
            return Err(Error::param("reduction.tau needs at least one value"));
        }
        if let Some(t) = self.taus.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::param(format!("tau values must be >= 0, got {t}")));
        }
        if self.seeds == 0 {
            return Err(Error::param("run.seeds must be >= 1"));
        }
        if let ObjectSource::Phantom(p) = &self.object {
            if p.block == 0 {
                return Err(Error::param("object.block must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn crystal(&self) -> Result<CrystalParams> {
        CrystalParams::from_dimensionless(self.beta, self.epsilon, self.beta_z)
    }

    pub fn photons_per_pixel(&self) -> f64 {
        self.illumination.photons_per_pixel(&self.geometry)
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let g = &self.geometry;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("geometry.lambda1", format!("{} m", g.wavelength(Arm::One)));
        kv("geometry.lambda2", format!("{} m", g.wavelength(Arm::Two)));
        kv("geometry.lambda3", format!("{} m", g.wavelength(Arm::Three)));
        kv("geometry.focal_length", format!("{} m", g.focal_length()));
        kv("geometry.pupil_area", format!("{} m^2", g.pupil_area()));
        kv("geometry.pixel_area", format!("{} m^2", g.pixel_area()));
        kv("crystal.eps", self.epsilon.to_string());
        kv("crystal.beta_z", self.beta_z.to_string());
        kv("crystal.beta", format!("{} m^-1", self.beta));
        match &self.object {
            ObjectSource::File(p) => kv("object.file", p.display().to_string()),
            ObjectSource::Phantom(p) => {
                kv("object.phantom", p.kind.name().into());
                kv("object.width", p.dims.width.to_string());
                kv("object.height", p.dims.height.to_string());
                if let Some(v) = p.slit_width {
                    kv("object.slit_width", v.to_string());
                }
                if let Some(v) = p.slit_separation {
                    kv("object.slit_separation", v.to_string());
                }
                if let Some(v) = p.slit_height {
                    kv("object.slit_height", v.to_string());
                }
                kv("object.block", p.block.to_string());
            }
        }
        match self.illumination {
            Illumination::MaxDensity(d) => kv("illumination.max_density", format!("{d} m^-2")),
            Illumination::PhotonsPerPixel(n) => kv("illumination.photons_per_pixel", n.to_string()),
        }
        for arm in Arm::ALL {
            let SensorModel {
                psf_width,
                stride,
                offset,
                response,
            } = *self.sensors.arm(arm);
            let p = format!("sensors.arm{}", arm.label());
            kv(&format!("{p}.psf_width"), psf_width.to_string());
            kv(&format!("{p}.stride"), stride.to_string());
            kv(&format!("{p}.offset"), offset.to_string());
            kv(&format!("{p}.response"), response.to_string());
            kv(
                &format!("noise.arm{}.dark_variance", arm.label()),
                self.dark_variance[arm.index()].to_string(),
            );
        }
        kv("noise.zero", self.zero_noise.to_string());
        kv("stats.axial", self.stats.axial_approximation.to_string());
        kv(
            "stats.covariance",
            match self.stats.covariance_model {
                CovarianceModel::Linearized => "linearized",
                CovarianceModel::ClosedForm => "closed_form",
            }
            .into(),
        );
        let red = &self.reduction;
        kv("reduction.transform", red.transform.name().into());
        kv(
            "reduction.tau",
            self.taus.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", "),
        );
        kv("reduction.pinv_tolerance", red.pinv_tolerance.to_string());
        kv("reduction.estimability_tol", red.estimability_tol.to_string());
        kv("reduction.fixed_point_tol", red.fixed_point_tol.to_string());
        kv("reduction.max_fixed_point_iters", red.max_fixed_point_iters.to_string());
        kv("reduction.qp_tol", red.qp_tol.to_string());
        kv("reduction.qp_max_iters", red.qp_max_iters.to_string());
        if let Some(w) = red.relaxation {
            kv("reduction.relaxation", w.to_string());
        }
        kv("run.seeds", self.seeds.to_string());
        kv("run.base_seed", self.base_seed.to_string());
        kv("run.single_arm", self.single_arm.label());
        kv("run.save_images", self.save_images.to_string());
        kv("output.dir", self.output_dir.display().to_string());
        s
    }
}

/// Comma-separated list of non-negative thresholds.
pub fn parse_tau_list(s: &str) -> Result<Vec<f64>> {
    let taus = s
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .map_err(|_| Error::param(format!("`{t}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if taus.is_empty() || taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::param(format!("tau list `{s}` must hold values >= 0")));
    }
    Ok(taus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("/base"))
    }

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse("").unwrap(), ExperimentConfig::default());
        let cfg = parse("object.width = 32").unwrap();
        let ObjectSource::Phantom(p) = cfg.object else { panic!() };
        assert_eq!(p.dims, Dims::square(32).unwrap());
    }

    #[test]
    fn units_convert_to_si() {
        let cfg = parse(
            "geometry.lambda1 = 1.2 um^-1\n\
             geometry.lambda2 = 1.25 um\n\
             geometry.lambda3 = 3.2 um^-1\n\
             geometry.focal_length = 100 mm\n\
             geometry.pupil_area = 25 cm^2\n\
             geometry.pixel_area = 100 um^2\n\
             illumination.max_density = 1e7 cm^-2\n\
             crystal.beta = 2 cm^-1",
        )
        .unwrap();
        assert_relative_eq!(cfg.geometry.wavelength(Arm::One), 1e-6 / 1.2, max_relative = 1e-12);
        assert_relative_eq!(cfg.geometry.wavelength(Arm::Two), 1.25e-6, max_relative = 1e-12);
        assert_relative_eq!(cfg.geometry.focal_length(), 0.1, max_relative = 1e-12);
        assert_relative_eq!(cfg.geometry.pupil_area(), 25e-4, max_relative = 1e-12);
        assert_relative_eq!(cfg.photons_per_pixel(), 10.0, max_relative = 1e-12);
        assert_relative_eq!(cfg.beta, 200.0, max_relative = 1e-12);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse("crystal.eps = 0.4\n\nbogus.key = 1").unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }), "{e}");
        let e = parse("crystal.eps = 0.4\ncrystal.eps = 0.5").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }));
        let e = parse("geometry.focal_length = 10").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
        let e = parse("geometry.focal_length = 10 cm^2").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
        assert!(parse("crystal.eps = 1.2").is_err());
        assert!(parse("just text").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse(
            "crystal.eps = 0.8\ncrystal.beta_z = 2\nobject.phantom = checkerboard\nobject.width = 32\n\
             object.height = 16\nobject.block = 4\nreduction.tau = 0, 0.5, 30\nrun.single_arm = 2\n\
             sensors.layout = tiled\nnoise.dark_variance = 0.25\nreduction.transform = dct\n\
             illumination.photons_per_pixel = 40\nstats.axial = true",
        )
        .unwrap();
        let again = parse(&cfg.to_config_string()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.taus, vec![0.0, 0.5, 30.0]);
        assert_eq!(cfg.single_arm, SingleArm::Fixed(Arm::Two));
        assert_eq!(cfg.sensors, SensorLayout::tiled());
        assert_eq!(cfg.dark_variance, [0.25; 3]);
    }

    #[test]
    fn relative_object_path_resolves_against_config_dir() {
        let cfg = parse("object.file = img/obj.pgm").unwrap();
        assert_eq!(cfg.object, ObjectSource::File(PathBuf::from("/base/img/obj.pgm")));
        assert!(parse("object.file = a.pgm\nobject.phantom = constant").is_err());
    }
}
