//! Run configuration: a `key = value` file (`#` starts a comment) whose
//! relative paths resolve against the file's directory. Every stage
//! parameter has a key; command-line flags override keys through
//! [`RunConfig::set`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lines::LineParams;
use crate::optimize_geo::GeoConfig;
use crate::optimize_tex::{OptimConfig, StepMode};
use crate::partition::MergeParams;
use crate::simplify::SimplifyParams;
use crate::texgen::TexgenParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Partition,
    Simplify,
    Texgen,
    Lines,
    OptimizeTex,
    OptimizeGeo,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Partition,
        Stage::Simplify,
        Stage::Texgen,
        Stage::Lines,
        Stage::OptimizeTex,
        Stage::OptimizeGeo,
        Stage::Export,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Partition => "partition",
            Stage::Simplify => "simplify",
            Stage::Texgen => "texgen",
            Stage::Lines => "lines",
            Stage::OptimizeTex => "optimize_tex",
            Stage::OptimizeGeo => "optimize_geo",
            Stage::Export => "export",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown stage '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mesh: PathBuf,
    /// Directory holding `color/` and `depth/`.
    pub frames: PathBuf,
    pub trajectory: PathBuf,
    pub intrinsics: PathBuf,
    pub output: PathBuf,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// 0 picks `|F| / 500` clamped to `[20, 5000]`.
    pub target_clusters: usize,
    pub merge: MergeParams,
    pub simplify: SimplifyParams,
    pub texgen: TexgenParams,
    pub lines: LineParams,
    pub optim: OptimConfig,
    pub geo: GeoConfig,
    pub skip_tex: bool,
    pub skip_geo: bool,
    pub stop_after: Option<Stage>,
    pub dump_debug: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let optim = OptimConfig::default();
        RunConfig {
            mesh: PathBuf::new(),
            frames: PathBuf::new(),
            trajectory: PathBuf::new(),
            intrinsics: PathBuf::new(),
            output: PathBuf::from("out"),
            threads: 0,
            target_clusters: 0,
            merge: MergeParams::default(),
            simplify: SimplifyParams::default(),
            texgen: TexgenParams::default(),
            lines: LineParams::default(),
            optim,
            geo: GeoConfig::from(&optim),
            skip_tex: false,
            skip_geo: false,
            stop_after: None,
            dump_debug: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean '{value}' for '{key}'"))),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_str(&text, base)
    }

    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    n + 1
                ))
            })?;
            let (k, v) = (k.trim(), v.trim());
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
            if matches!(
                k,
                "mesh" | "frames" | "trajectory" | "intrinsics" | "output"
            ) {
                let p = cfg.path_mut(k);
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    fn path_mut(&mut self, key: &str) -> &mut PathBuf {
        match key {
            "mesh" => &mut self.mesh,
            "frames" => &mut self.frames,
            "trajectory" => &mut self.trajectory,
            "intrinsics" => &mut self.intrinsics,
            _ => &mut self.output,
        }
    }

    /// Sets one key. `lambda_l` and `lambda_r` go to both the texture and the
    /// geometry settings.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "mesh" | "frames" | "trajectory" | "intrinsics" | "output" => {
                *self.path_mut(key) = PathBuf::from(v)
            }
            "threads" => self.threads = parse(key, v)?,
            "target_clusters" => self.target_clusters = parse(key, v)?,
            "merge_angle_deg" => self.merge.angle_thresh_deg = parse(key, v)?,
            "merge_dist_m" => self.merge.dist_thresh_m = parse(key, v)?,
            "merge_rel_energy" => self.merge.rel_energy_thresh = parse(key, v)?,
            "merge_min_faces" => self.merge.min_faces = parse(key, v)?,
            "target_ratio" => self.simplify.target_ratio = parse(key, v)?,
            "simplify_dist_m" => self.simplify.dist_thresh = parse(key, v)?,
            "texel_resolution" => self.texgen.resolution = parse(key, v)?,
            "keyframe_interval" => self.texgen.keyframe_interval = parse(key, v)?,
            "depth_tol" => self.texgen.depth_tol = parse(key, v)?,
            "max_view_angle_deg" => self.texgen.max_view_angle_deg = parse(key, v)?,
            "residual_max_view_angle_deg" => {
                self.optim.residual_max_view_angle_deg = parse(key, v)?
            }
            "border_margin_px" => self.texgen.border_margin_px = parse(key, v)?,
            "atlas_gutter" => self.texgen.gutter = parse(key, v)?,
            "line_min_len_px" => self.lines.min_len_px = parse(key, v)?,
            "line_angle_min_deg" => self.lines.angle_min_deg = parse(key, v)?,
            "line_max_px" => self.lines.max_px = parse(key, v)?,
            "line_depth_tol" => self.lines.depth_tol = parse(key, v)?,
            "lambda_p" => self.optim.lambda_p = parse(key, v)?,
            "lambda_t" => self.optim.lambda_t = parse(key, v)?,
            "lambda_l" => {
                self.optim.lambda_l = parse(key, v)?;
                self.geo.lambda_l = self.optim.lambda_l;
            }
            "lambda_r" => {
                self.optim.lambda_r = parse(key, v)?;
                self.geo.lambda_r = self.optim.lambda_r;
            }
            "outer_iters" => self.optim.outer_iters = parse(key, v)?,
            "gn_iters" => self.optim.gn_iters = parse(key, v)?,
            "tol" => self.optim.tol = parse(key, v)?,
            "huber_delta" => self.optim.huber_delta = parse(key, v)?,
            "visibility_refresh" => self.optim.visibility_refresh = parse(key, v)?,
            "step" => self.optim.step = v.parse::<StepMode>()?,
            "geo_border_data_rows" => self.geo.border_data_rows = parse_bool(key, v)?,
            "geo_min_dihedral_deg" => self.geo.min_dihedral_deg = parse(key, v)?,
            "skip_tex" => self.skip_tex = parse_bool(key, v)?,
            "skip_geo" => self.skip_geo = parse_bool(key, v)?,
            "stop_after" => self.stop_after = Some(v.parse()?),
            "dump_debug" => self.dump_debug = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("mesh", &self.mesh),
            ("frames", &self.frames),
            ("trajectory", &self.trajectory),
            ("intrinsics", &self.intrinsics),
        ] {
            if p.as_os_str().is_empty() {
                return Err(Error::Config(format!("'{name}' is not set")));
            }
            if !p.exists() {
                return Err(Error::Config(format!(
                    "{name} path {} does not exist",
                    p.display()
                )));
            }
        }
        if !(self.simplify.target_ratio > 0.0 && self.simplify.target_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "target_ratio {} outside (0, 1]",
                self.simplify.target_ratio
            )));
        }
        if !(self.texgen.resolution > 0.0) {
            return Err(Error::Config("texel_resolution must be positive".into()));
        }
        self.optim.validate()?;
        self.geo.validate()
    }

    /// Texture-optimization settings with the visibility knobs taken from
    /// the texgen section, so one key controls both.
    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            depth_tol: self.texgen.depth_tol,
            max_view_angle_deg: self.texgen.max_view_angle_deg,
            border_margin_px: self.texgen.border_margin_px,
            ..self.optim
        }
    }

    /// Whether the run ends after `stage`.
    pub fn stops_after(&self, stage: Stage) -> bool {
        self.stop_after == Some(stage)
    }
}
