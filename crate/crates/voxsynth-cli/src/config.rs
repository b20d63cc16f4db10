//! Job configuration. Every tunable has a default here; values can come from
//! a `key = value` file and from command-line overrides, with precedence
//! CLI > file > default. Unknown keys are rejected.

use std::path::Path;

use voxsynth::field::RenderConfig;
use voxsynth::io::parse_kv;
use voxsynth::shading::{PointLight, ShadingConfig};
use voxsynth::synthesis::SynthesisParams;
use voxsynth::deform::FitConfig;
use voxsynth::math::Vec3;
use voxsynth::{Error, Result};

/// One flat namespace of every setting the commands read.
#[derive(Debug, Clone)]
pub struct Config {
    // Paths. Empty means "not provided"; commands that need one say so.
    pub exemplar: String,
    pub out: String,
    pub views: String,
    pub map: String,
    pub guider: String,
    pub pairs: String,
    pub depth: String,
    /// Fitted-deformation directory applied when rendering.
    pub deform: String,

    // Job shape.
    pub out_size: (usize, usize),
    pub mode: String,
    pub l_b: usize,
    pub seed: u64,
    /// Window id seeding the first placement; -1 draws one from the rng.
    pub seed_window: i64,

    // Synthesis.
    pub w_p: usize,
    pub w_o: usize,
    pub extraction_step: usize,
    pub k_g: usize,
    pub k_s: usize,
    pub eta: f64,
    pub lambda: f64,
    pub rotations: bool,
    pub greedy: bool,

    // Procedural generation.
    pub gen_kind: String,
    pub gen_nx: usize,
    pub gen_ny: usize,
    pub gen_nz: usize,
    pub gen_channels: usize,
    pub gen_count: usize,
    /// Primitive radius in voxels; 0 picks a per-kind default.
    pub gen_radius: f64,

    // Shading.
    pub n_views: usize,
    pub n_channels: usize,
    pub blur_passes: usize,
    pub blur_variance: f64,
    pub poly_degree: usize,
    pub knn_k: usize,
    pub knn_eps: f64,
    pub median_window: usize,
    pub min_termination: f64,
    pub light_samples: usize,
    pub view_width: usize,
    pub view_height: usize,
    pub view_radius: f64,
    pub guider_kind: String,

    // Light.
    pub light_pos: Vec3,
    pub light_intensity: f64,

    // Rendering.
    pub near: f64,
    pub far: f64,
    pub n_samples: usize,
    /// Softplus shift; NaN means "use the shift recorded in the bundle".
    pub shift: f64,
    pub background: [f64; 3],
    pub cam_pos: Vec3,
    /// NaN components mean "look at the bbox center".
    pub cam_target: Vec3,
    /// 0 means "max(img_width, img_height)".
    pub focal: f64,
    pub img_width: usize,
    pub img_height: usize,

    // Deformation fitting.
    pub surface: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub convergence_threshold: f64,
    pub fit_extent: (f64, f64),
    pub fit_grid: (usize, usize),

    // Benchmarking.
    pub bench_sizes: Vec<usize>,
    pub bench_reps: usize,
}

impl Default for Config {
    fn default() -> Config {
        let sp = SynthesisParams::default();
        let sc = ShadingConfig::default();
        let rc = RenderConfig::default();
        let fc = FitConfig::default();
        Config {
            exemplar: String::new(),
            out: String::new(),
            views: String::new(),
            map: String::new(),
            guider: String::new(),
            pairs: String::new(),
            depth: String::new(),
            deform: String::new(),
            out_size: (96, 96),
            mode: "two_phase".into(),
            l_b: 15,
            seed: 0,
            seed_window: -1,
            w_p: sp.w_p,
            w_o: sp.w_o,
            extraction_step: sp.extraction_step,
            k_g: sp.k_g,
            k_s: sp.k_s,
            eta: sp.eta,
            lambda: sp.lambda,
            rotations: sp.rotations,
            greedy: sp.greedy,
            gen_kind: "grass".into(),
            gen_nx: 96,
            gen_ny: 96,
            gen_nz: 48,
            gen_channels: 6,
            gen_count: 64,
            gen_radius: 0.0,
            n_views: sc.n_views,
            n_channels: sc.n_channels,
            blur_passes: sc.blur_passes,
            blur_variance: sc.blur_variance,
            poly_degree: sc.poly_degree,
            knn_k: sc.knn_k,
            knn_eps: sc.knn_eps,
            median_window: sc.median_window,
            min_termination: sc.min_termination,
            light_samples: sc.light_samples,
            view_width: sc.view_width,
            view_height: sc.view_height,
            view_radius: sc.view_radius,
            guider_kind: "scale-up".into(),
            light_pos: Vec3::new(0.0, 0.0, 4.0),
            light_intensity: 20.0,
            near: rc.near,
            far: rc.far,
            n_samples: rc.n_samples,
            shift: f64::NAN,
            background: rc.background,
            cam_pos: Vec3::new(0.0, -3.0, 3.0),
            cam_target: Vec3::new(f64::NAN, f64::NAN, f64::NAN),
            focal: 0.0,
            img_width: 128,
            img_height: 128,
            surface: String::new(),
            epochs: fc.epochs,
            learning_rate: fc.learning_rate,
            beta1: fc.beta1,
            beta2: fc.beta2,
            adam_eps: fc.adam_eps,
            convergence_threshold: fc.convergence_threshold,
            fit_extent: (1.5, 1.5),
            fit_grid: (16, 16),
            bench_sizes: vec![100, 200, 300, 400],
            bench_reps: 2,
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::InvalidData(format!("config key `{}`: bad value `{}`", key, value))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| bad(key, value))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

fn size2(key: &str, value: &str) -> Result<(usize, usize)> {
    let (a, b) = value.split_once('x').ok_or_else(|| bad(key, value))?;
    Ok((num(key, a.trim())?, num(key, b.trim())?))
}

fn pair_f64(key: &str, value: &str) -> Result<(f64, f64)> {
    let (a, b) = value.split_once('x').ok_or_else(|| bad(key, value))?;
    Ok((num(key, a.trim())?, num(key, b.trim())?))
}

fn vec3(key: &str, value: &str) -> Result<Vec3> {
    let parts: Vec<&str> = value.split(',').map(|s| s.trim()).collect();
    if parts.len() != 3 {
        return Err(bad(key, value));
    }
    Ok(Vec3::new(num(key, parts[0])?, num(key, parts[1])?, num(key, parts[2])?))
}

fn list_usize(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|s| num(key, s.trim())).collect()
}

impl Config {
    /// Set one key from its text form. Every field of the config is
    /// addressable; unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "exemplar" => self.exemplar = value.into(),
            "out" => self.out = value.into(),
            "views" => self.views = value.into(),
            "map" => self.map = value.into(),
            "guider" => self.guider = value.into(),
            "pairs" => self.pairs = value.into(),
            "depth" => self.depth = value.into(),
            "deform" => self.deform = value.into(),
            "out_size" => self.out_size = size2(key, value)?,
            "mode" => self.mode = value.into(),
            "l_b" => self.l_b = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "seed_window" => self.seed_window = num(key, value)?,
            "w_p" => self.w_p = num(key, value)?,
            "w_o" => self.w_o = num(key, value)?,
            "extraction_step" => self.extraction_step = num(key, value)?,
            "k_g" => self.k_g = num(key, value)?,
            "k_s" => self.k_s = num(key, value)?,
            "eta" => self.eta = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "rotations" => self.rotations = flag(key, value)?,
            "greedy" => self.greedy = flag(key, value)?,
            "gen_kind" => self.gen_kind = value.into(),
            "gen_nx" => self.gen_nx = num(key, value)?,
            "gen_ny" => self.gen_ny = num(key, value)?,
            "gen_nz" => self.gen_nz = num(key, value)?,
            "gen_channels" => self.gen_channels = num(key, value)?,
            "gen_count" => self.gen_count = num(key, value)?,
            "gen_radius" => self.gen_radius = num(key, value)?,
            "n_views" => self.n_views = num(key, value)?,
            "n_channels" => self.n_channels = num(key, value)?,
            "blur_passes" => self.blur_passes = num(key, value)?,
            "blur_variance" => self.blur_variance = num(key, value)?,
            "poly_degree" => self.poly_degree = num(key, value)?,
            "knn_k" => self.knn_k = num(key, value)?,
            "knn_eps" => self.knn_eps = num(key, value)?,
            "median_window" => self.median_window = num(key, value)?,
            "min_termination" => self.min_termination = num(key, value)?,
            "light_samples" => self.light_samples = num(key, value)?,
            "view_width" => self.view_width = num(key, value)?,
            "view_height" => self.view_height = num(key, value)?,
            "view_radius" => self.view_radius = num(key, value)?,
            "guider_kind" => self.guider_kind = value.into(),
            "light_pos" => self.light_pos = vec3(key, value)?,
            "light_intensity" => self.light_intensity = num(key, value)?,
            "near" => self.near = num(key, value)?,
            "far" => self.far = num(key, value)?,
            "n_samples" => self.n_samples = num(key, value)?,
            "shift" => {
                self.shift = if value == "auto" { f64::NAN } else { num(key, value)? }
            }
            "background" => {
                let v = vec3(key, value)?;
                self.background = [v.x, v.y, v.z];
            }
            "cam_pos" => self.cam_pos = vec3(key, value)?,
            "cam_target" => {
                self.cam_target = if value == "auto" {
                    Vec3::new(f64::NAN, f64::NAN, f64::NAN)
                } else {
                    vec3(key, value)?
                }
            }
            "focal" => self.focal = num(key, value)?,
            "img_width" => self.img_width = num(key, value)?,
            "img_height" => self.img_height = num(key, value)?,
            "surface" => self.surface = value.into(),
            "epochs" => self.epochs = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "convergence_threshold" => self.convergence_threshold = num(key, value)?,
            "fit_extent" => self.fit_extent = pair_f64(key, value)?,
            "fit_grid" => {
                let (a, b) = size2(key, value)?;
                self.fit_grid = (a, b);
            }
            "bench_sizes" => self.bench_sizes = list_usize(key, value)?,
            "bench_reps" => self.bench_reps = num(key, value)?,
            _ => return Err(Error::InvalidData(format!("unknown config key `{}`", key))),
        }
        Ok(())
    }

    /// Load `key = value` lines over the current values.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidData(format!("{}: {}", path.display(), e)))?;
        for (k, v) in parse_kv(&text)? {
            self.apply(&k, &v)?;
        }
        Ok(())
    }

    /// Apply one `KEY=VALUE` override from the command line.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| Error::InvalidData(format!("override `{}`: expected KEY=VALUE", spec)))?;
        self.apply(k.trim(), v.trim())
    }

    pub fn synthesis_params(&self) -> SynthesisParams {
        SynthesisParams {
            w_p: self.w_p,
            w_o: self.w_o,
            extraction_step: self.extraction_step,
            k_g: self.k_g,
            k_s: self.k_s,
            eta: self.eta,
            lambda: self.lambda,
            rotations: self.rotations,
            greedy: self.greedy,
            seed: self.seed,
        }
    }

    pub fn render_config(&self, bundle_shift: f64) -> RenderConfig {
        RenderConfig {
            near: self.near,
            far: self.far,
            n_samples: self.n_samples,
            shift: if self.shift.is_nan() { bundle_shift } else { self.shift },
            background: self.background,
        }
    }

    pub fn shading_config(&self, bundle_shift: f64) -> ShadingConfig {
        ShadingConfig {
            n_views: self.n_views,
            n_channels: self.n_channels,
            blur_passes: self.blur_passes,
            blur_variance: self.blur_variance,
            poly_degree: self.poly_degree,
            knn_k: self.knn_k,
            knn_eps: self.knn_eps,
            median_window: self.median_window,
            min_termination: self.min_termination,
            light_samples: self.light_samples,
            view_width: self.view_width,
            view_height: self.view_height,
            view_radius: self.view_radius,
            seed: self.seed,
            render: self.render_config(bundle_shift),
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            seed: self.seed,
            convergence_threshold: self.convergence_threshold,
        }
    }

    pub fn light(&self) -> PointLight {
        PointLight { pos: self.light_pos, intensity: self.light_intensity }
    }

    pub fn seed_window(&self) -> Option<u32> {
        if self.seed_window < 0 {
            None
        } else {
            Some(self.seed_window as u32)
        }
    }

    /// A path-valued setting that the current command requires.
    pub fn require_path<'a>(&'a self, key: &str, value: &'a str) -> Result<&'a str> {
        if value.is_empty() {
            return Err(Error::InvalidData(format!("`{}` is required for this command", key)));
        }
        Ok(value)
    }

    /// The full resolved configuration as sorted `key = value` lines.
    pub fn dump(&self) -> String {
        let mut lines = vec![
            format!("exemplar = {}", self.exemplar),
            format!("out = {}", self.out),
            format!("views = {}", self.views),
            format!("map = {}", self.map),
            format!("guider = {}", self.guider),
            format!("pairs = {}", self.pairs),
            format!("depth = {}", self.depth),
            format!("deform = {}", self.deform),
            format!("out_size = {}x{}", self.out_size.0, self.out_size.1),
            format!("mode = {}", self.mode),
            format!("l_b = {}", self.l_b),
            format!("seed = {}", self.seed),
            format!("seed_window = {}", self.seed_window),
            format!("w_p = {}", self.w_p),
            format!("w_o = {}", self.w_o),
            format!("extraction_step = {}", self.extraction_step),
            format!("k_g = {}", self.k_g),
            format!("k_s = {}", self.k_s),
            format!("eta = {}", self.eta),
            format!("lambda = {}", self.lambda),
            format!("rotations = {}", self.rotations),
            format!("greedy = {}", self.greedy),
            format!("gen_kind = {}", self.gen_kind),
            format!("gen_nx = {}", self.gen_nx),
            format!("gen_ny = {}", self.gen_ny),
            format!("gen_nz = {}", self.gen_nz),
            format!("gen_channels = {}", self.gen_channels),
            format!("gen_count = {}", self.gen_count),
            format!("gen_radius = {}", self.gen_radius),
            format!("n_views = {}", self.n_views),
            format!("n_channels = {}", self.n_channels),
            format!("blur_passes = {}", self.blur_passes),
            format!("blur_variance = {}", self.blur_variance),
            format!("poly_degree = {}", self.poly_degree),
            format!("knn_k = {}", self.knn_k),
            format!("knn_eps = {}", self.knn_eps),
            format!("median_window = {}", self.median_window),
            format!("min_termination = {}", self.min_termination),
            format!("light_samples = {}", self.light_samples),
            format!("view_width = {}", self.view_width),
            format!("view_height = {}", self.view_height),
            format!("view_radius = {}", self.view_radius),
            format!("guider_kind = {}", self.guider_kind),
            format!("light_pos = {},{},{}", self.light_pos.x, self.light_pos.y, self.light_pos.z),
            format!("light_intensity = {}", self.light_intensity),
            format!("near = {}", self.near),
            format!("far = {}", self.far),
            format!("n_samples = {}", self.n_samples),
            format!("shift = {}", if self.shift.is_nan() { "auto".into() } else { self.shift.to_string() }),
            format!("background = {},{},{}", self.background[0], self.background[1], self.background[2]),
            format!("cam_pos = {},{},{}", self.cam_pos.x, self.cam_pos.y, self.cam_pos.z),
            format!(
                "cam_target = {}",
                if self.cam_target.x.is_nan() {
                    "auto".into()
                } else {
                    format!("{},{},{}", self.cam_target.x, self.cam_target.y, self.cam_target.z)
                }
            ),
            format!("focal = {}", self.focal),
            format!("img_width = {}", self.img_width),
            format!("img_height = {}", self.img_height),
            format!("surface = {}", self.surface),
            format!("epochs = {}", self.epochs),
            format!("learning_rate = {}", self.learning_rate),
            format!("beta1 = {}", self.beta1),
            format!("beta2 = {}", self.beta2),
            format!("adam_eps = {}", self.adam_eps),
            format!("convergence_threshold = {}", self.convergence_threshold),
            format!("fit_extent = {}x{}", self.fit_extent.0, self.fit_extent.1),
            format!("fit_grid = {}x{}", self.fit_grid.0, self.fit_grid.1),
            format!(
                "bench_sizes = {}",
                self.bench_sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
            ),
            format!("bench_reps = {}", self.bench_reps),
        ];
        lines.sort();
        lines.join("\n") + "\n"
    }
}
