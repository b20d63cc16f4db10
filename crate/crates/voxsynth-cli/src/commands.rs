//! Command implementations. Each command reads its inputs, runs one library
//! pipeline, writes its artifacts, and records a manifest so the run can be
//! reproduced byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use voxsynth::column::ColumnImage;
use voxsynth::deform::{
    analytic_correspondences, fit_deformation, DeformMlp, DeformationField, DeformedSampler,
    SurfaceKind,
};
use voxsynth::field::{render_image, Camera, FieldSampler, VolumeSampler};
use voxsynth::io::{
    load_bundle, load_correspondences, load_shading_map, read_pfm, read_view_manifest,
    save_bundle, save_shading_map, write_pfm, write_ppm, ImageF, KvMap,
};
use voxsynth::boundary::boundary_constrained_synthesize;
use voxsynth::math::Vec3;
use voxsynth::shading::{
    auto_cameras, build_guider_ray_traced, build_guider_scale_up, build_shading_map,
    scaled_bbox, shading_guided_synthesize, ShadingMap, ShadingSource,
};
use voxsynth::synthesis::{format_placement_log, synthesize, Mode, PlacementRecord};
use voxsynth::{Error, Result};

use crate::bench::{format_table, run_bench};
use crate::config::Config;
use crate::manifest::{manifest_path, Manifest};
use crate::procgen::{generate, Kind, ProcSpec};

fn require<'a>(key: &str, value: &'a str) -> Result<&'a str> {
    if value.is_empty() {
        return Err(Error::InvalidData(format!("`{}` is required for this command", key)));
    }
    Ok(value)
}

/// Load a field bundle, failing with a diagnostic that names the path.
fn load_bundle_at(path: &str, role: &str) -> Result<(voxsynth::field::VoxelField, f64)> {
    let dir = Path::new(path);
    if !dir.join("meta").is_file() {
        return Err(Error::InvalidData(format!(
            "{} bundle not found at `{}`",
            role,
            dir.display()
        )));
    }
    load_bundle(dir)
}

fn load_map_at(path: &str, role: &str) -> Result<ShadingMap> {
    let dir = Path::new(path);
    if !dir.join("meta").is_file() {
        return Err(Error::InvalidData(format!(
            "{} shading map not found at `{}`",
            role,
            dir.display()
        )));
    }
    load_shading_map(dir)
}

/// Record every file in `dir` as a manifest output, except the manifest
/// itself.
fn record_dir_outputs(m: &mut Manifest, dir: &Path) -> Result<()> {
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.file_name().map_or(false, |n| n != "manifest.txt") {
            files.push(path);
        }
    }
    files.sort();
    for f in &files {
        m.output_file("file", f)?;
    }
    Ok(())
}

fn write_placements(dir: &Path, records: &[PlacementRecord]) -> Result<()> {
    fs::write(dir.join("placements.txt"), format_placement_log(records))?;
    Ok(())
}

fn shift_or(cfg: &Config, fallback: f64) -> f64 {
    if cfg.shift.is_nan() {
        fallback
    } else {
        cfg.shift
    }
}

pub fn cmd_gen(cfg: &Config) -> Result<()> {
    let out = PathBuf::from(require("out", &cfg.out)?);
    let spec = ProcSpec {
        kind: cfg.gen_kind.parse::<Kind>()?,
        shape: (cfg.gen_nx, cfg.gen_ny, cfg.gen_nz),
        channels: cfg.gen_channels,
        count: cfg.gen_count,
        radius: cfg.gen_radius,
        seed: cfg.seed,
    };
    let field = generate(&spec)?;
    save_bundle(&out, &field, shift_or(cfg, 0.0))?;
    let mut m = Manifest::new("gen", cfg.dump());
    record_dir_outputs(&mut m, &out)?;
    m.write(&manifest_path(&out))?;
    println!("wrote exemplar bundle {}", out.display());
    Ok(())
}

pub fn cmd_synth(cfg: &Config) -> Result<()> {
    let out = PathBuf::from(require("out", &cfg.out)?);
    let exemplar_path = require("exemplar", &cfg.exemplar)?;
    let (field, shift) = load_bundle_at(exemplar_path, "exemplar")?;
    let columns = ColumnImage::flatten(&field);
    let params = cfg.synthesis_params();
    let (img, records) = match cfg.mode.as_str() {
        "boundary" => {
            boundary_constrained_synthesize(&columns, cfg.out_size, cfg.l_b, &params, cfg.seed_window())?
        }
        other => {
            let mode: Mode = other.parse()?;
            synthesize(&columns, cfg.out_size, &params, mode, cfg.seed_window())?
        }
    };
    let (nx, ny, nz) = field.shape();
    let bbox = scaled_bbox(&field.bbox, [nx, ny, nz], [cfg.out_size.0, cfg.out_size.1, nz]);
    let result = img.unflatten(bbox, field.head.clone())?;
    save_bundle(&out, &result, shift_or(cfg, shift))?;
    write_placements(&out, &records)?;
    let mut m = Manifest::new("synth", cfg.dump());
    m.input_file("exemplar", Path::new(exemplar_path))?;
    record_dir_outputs(&mut m, &out)?;
    m.write(&manifest_path(&out))?;
    println!("wrote synthesized bundle {} ({} placements)", out.display(), records.len());
    Ok(())
}

fn rendered_luminance(img: &voxsynth::field::RenderedImage) -> ImageF {
    let mut lum = ImageF::new(img.width, img.height, 0.0);
    for i in 0..img.width * img.height {
        let (r, g, b) = (img.rgb[3 * i], img.rgb[3 * i + 1], img.rgb[3 * i + 2]);
        lum.data[i] = 0.2126 * r + 0.7152 * g + 0.0722 * b;
    }
    lum
}

fn forced_order_from(cfg: &Config) -> Result<Option<Vec<u32>>> {
    if cfg.map.is_empty() {
        return Ok(None);
    }
    Ok(Some(load_map_at(&cfg.map, "reference")?.view_order.clone()))
}

pub fn cmd_shade_extract(cfg: &Config) -> Result<()> {
    let out = PathBuf::from(require("out", &cfg.out)?);
    let exemplar_path = require("exemplar", &cfg.exemplar)?;
    let (field, shift) = load_bundle_at(exemplar_path, "exemplar")?;
    let sampler = FieldSampler { field: &field, shift: shift_or(cfg, shift) };
    let shading_cfg = cfg.shading_config(shift);
    let forced = forced_order_from(cfg)?;
    let (nx, ny, _) = field.shape();

    let map = if cfg.views.is_empty() {
        // No captured views: render luminance views of the field itself.
        let cameras = auto_cameras(&field.bbox, &shading_cfg);
        let images: Vec<ImageF> = cameras
            .iter()
            .map(|cam| rendered_luminance(&render_image(&sampler, cam, &shading_cfg.render)))
            .collect();
        build_shading_map(
            &sampler,
            &cameras,
            &ShadingSource::Views(&images),
            (nx, ny),
            &shading_cfg,
            forced.as_deref(),
        )?
    } else {
        let entries = read_view_manifest(Path::new(&cfg.views))?;
        let mut cameras = Vec::with_capacity(entries.len());
        let mut images = Vec::with_capacity(entries.len());
        for e in &entries {
            images.push(read_pfm(&e.image_path)?);
            cameras.push(e.camera);
        }
        build_shading_map(
            &sampler,
            &cameras,
            &ShadingSource::Views(&images),
            (nx, ny),
            &shading_cfg,
            forced.as_deref(),
        )?
    };

    save_shading_map(&out, &map)?;
    let mut m = Manifest::new("shade-extract", cfg.dump());
    m.input_file("exemplar", Path::new(exemplar_path))?;
    if !cfg.views.is_empty() {
        m.input_file("views", Path::new(&cfg.views))?;
    }
    record_dir_outputs(&mut m, &out)?;
    m.write(&manifest_path(&out))?;
    println!("wrote shading map {} ({} channels)", out.display(), map.channels());
    Ok(())
}

pub fn cmd_shade_rt(cfg: &Config) -> Result<()> {
    let out = PathBuf::from(require("out", &cfg.out)?);
    let exemplar_path = require("exemplar", &cfg.exemplar)?;
    let (field, shift) = load_bundle_at(exemplar_path, "exemplar")?;
    let sampler = FieldSampler { field: &field, shift: shift_or(cfg, shift) };
    let shading_cfg = cfg.shading_config(shift);
    let forced = forced_order_from(cfg)?;
    let (nx, ny, _) = field.shape();
    let cameras = auto_cameras(&field.bbox, &shading_cfg);
    let light = cfg.light();
    let map = build_shading_map(
        &sampler,
        &cameras,
        &ShadingSource::RayTraced(&light),
        (nx, ny),
        &shading_cfg,
        forced.as_deref(),
    )?;
    save_shading_map(&out, &map)?;
    let mut m = Manifest::new("shade-rt", cfg.dump());
    m.input_file("exemplar", Path::new(exemplar_path))?;
    record_dir_outputs(&mut m, &out)?;
    m.write(&manifest_path(&out))?;
    println!("wrote shading map {} ({} channels)", out.display(), map.channels());
    Ok(())
}

pub fn cmd_guider(cfg: &Config) -> Result<()> {
    let out = PathBuf::from(require("out", &cfg.out)?);
    let mut m = Manifest::new("guider", cfg.dump());
    let map = match cfg.guider_kind.as_str() {
        "scale-up" => {
            let src = load_map_at(require("map", &cfg.map)?, "source")?;
            m.input_file("map", Path::new(&cfg.map))?;
            build_guider_scale_up(&src, cfg.out_size)
        }
        "ray-traced" => {
            let exemplar_path = require("exemplar", &cfg.exemplar)?;
            let (field, shift) = load_bundle_at(exemplar_path, "exemplar")?;
            m.input_file("exemplar", Path::new(exemplar_path))?;
            let forced = forced_order_from(cfg)?;
            if !cfg.map.is_empty() {
                m.input_file("map", Path::new(&cfg.map))?;
            }
            let light = cfg.light();
            let (map, _) = build_guider_ray_traced(
                &field,
                shift_or(cfg, shift),
                cfg.out_size,
                &cfg.synthesis_params(),
                &light,
                &cfg.shading_config(shift),
                forced.as_deref(),
            )?;
            map
        }
        other => {
            return Err(Error::InvalidData(format!(
                "unknown guider kind `{}` (scale-up, ray-traced)",
                other
            )))
        }
    };
    save_shading_map(&out, &map)?;
    record_dir_outputs(&mut m, &out)?;
    m.write(&manifest_path(&out))?;
    println!("wrote guider map {} ({}x{})", out.display(), map.dims().0, map.dims().1);
    Ok(())
}

pub fn cmd_relight(cfg: &Config) -> Result<()> {
    let out = PathBuf::from(require("out", &cfg.out)?);
    let exemplar_path = require("exemplar", &cfg.exemplar)?;
    let (field, shift) = load_bundle_at(exemplar_path, "exemplar")?;
    let exemplar_map = load_map_at(require("map", &cfg.map)?, "exemplar")?;
    let guider = load_map_at(require("guider", &cfg.guider)?, "guider")?;
    let columns = ColumnImage::flatten(&field);
    let out_size = guider.dims();
    let (img, records) = shading_guided_synthesize(
        &columns,
        &exemplar_map,
        &guider,
        out_size,
        &cfg.synthesis_params(),
        cfg.seed_window(),
    )?;
    let (nx, ny, nz) = field.shape();
    let bbox = scaled_bbox(&field.bbox, [nx, ny, nz], [out_size.0, out_size.1, nz]);
    let result = img.unflatten(bbox, field.head.clone())?;
    save_bundle(&out, &result, shift_or(cfg, shift))?;
    write_placements(&out, &records)?;
    let mut m = Manifest::new("relight", cfg.dump());
    m.input_file("exemplar", Path::new(exemplar_path))?;
    m.input_file("map", Path::new(&cfg.map))?;
    m.input_file("guider", Path::new(&cfg.guider))?;
    record_dir_outputs(&mut m, &out)?;
    m.write(&manifest_path(&out))?;
    println!("wrote relit bundle {} ({} placements)", out.display(), records.len());
    Ok(())
}

fn parse_surface(s: &str) -> Result<SurfaceKind> {
    let (kind, radius) = match s.split_once(':') {
        Some((k, r)) => {
            let radius: f64 = r
                .parse()
                .map_err(|_| Error::InvalidData(format!("bad surface radius `{}`", r)))?;
            (k, radius)
        }
        None => (s, 1.0),
    };
    match kind {
        "plane" => Ok(SurfaceKind::Plane),
        "sphere" => Ok(SurfaceKind::Sphere { radius }),
        "cylinder" => Ok(SurfaceKind::Cylinder { radius }),
        _ => Err(Error::UnsupportedSurface(format!(
            "`{}` (plane, sphere:R, cylinder:R)",
            kind
        ))),
    }
}

fn save_deformation(dir: &Path, field: &DeformationField, curve: &[f64], converged: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let params: Vec<String> = field.mlp.params.iter().map(|p| p.to_string()).collect();
    fs::write(dir.join("params.txt"), params.join("\n") + "\n")?;
    let losses: Vec<String> = curve.iter().map(|l| l.to_string()).collect();
    fs::write(dir.join("loss.txt"), losses.join("\n") + "\n")?;
    let meta = format!(
        "center = {} {} {}\nscale = {}\nconverged = {}\nfinal_loss = {}\n",
        field.center.x,
        field.center.y,
        field.center.z,
        field.scale,
        converged,
        curve.last().copied().unwrap_or(f64::NAN),
    );
    fs::write(dir.join("meta"), meta)?;
    Ok(())
}

pub fn load_deformation(dir: &Path) -> Result<DeformationField> {
    if !dir.join("meta").is_file() {
        return Err(Error::InvalidData(format!(
            "deformation not found at `{}`",
            dir.display()
        )));
    }
    let kv = KvMap::parse(&fs::read_to_string(dir.join("meta"))?)?;
    let center_parts: Vec<f64> = kv.parse_list("center")?;
    if center_parts.len() != 3 {
        return Err(Error::InvalidData("deformation meta: center needs 3 numbers".into()));
    }
    let scale: f64 = kv.parse_num("scale")?;
    let mut params = Vec::new();
    for (ln, line) in fs::read_to_string(dir.join("params.txt"))?.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        params.push(t.parse::<f64>().map_err(|_| {
            Error::InvalidData(format!("params.txt line {}: bad number `{}`", ln + 1, t))
        })?);
    }
    Ok(DeformationField {
        mlp: DeformMlp::from_params(params)?,
        center: Vec3::new(center_parts[0], center_parts[1], center_parts[2]),
        scale,
    })
}

pub fn cmd_deform_fit(cfg: &Config) -> Result<()> {
    let out = PathBuf::from(require("out", &cfg.out)?);
    let mut m = Manifest::new("deform-fit", cfg.dump());
    let pairs = if !cfg.pairs.is_empty() {
        let p = Path::new(&cfg.pairs);
        if !p.is_file() {
            return Err(Error::InvalidData(format!(
                "correspondence file not found at `{}`",
                p.display()
            )));
        }
        m.input_file("pairs", p)?;
        load_correspondences(p)?
    } else {
        let surface = parse_surface(require("surface", &cfg.surface)?)?;
        analytic_correspondences(surface, cfg.fit_extent, cfg.fit_grid)?
    };
    let (field, report) = fit_deformation(&pairs, &cfg.fit_config())?;
    save_deformation(&out, &field, &report.loss_curve, report.converged)?;
    record_dir_outputs(&mut m, &out)?;
    m.write(&manifest_path(&out))?;
    if report.converged {
        println!("fit converged, final loss {:.3e}", report.final_loss);
    } else {
        eprintln!("warning: fit did not converge (final loss {:.3e})", report.final_loss);
    }
    Ok(())
}

pub fn cmd_render(cfg: &Config) -> Result<()> {
    let out = PathBuf::from(require("out", &cfg.out)?);
    let exemplar_path = require("exemplar", &cfg.exemplar)?;
    let (field, shift) = load_bundle_at(exemplar_path, "exemplar")?;
    let render_cfg = cfg.render_config(shift);
    let target = if cfg.cam_target.x.is_nan() { field.bbox.center() } else { cfg.cam_target };
    let focal =
        if cfg.focal == 0.0 { cfg.img_width.max(cfg.img_height) as f64 } else { cfg.focal };
    let camera = Camera::look_at(
        cfg.cam_pos,
        target,
        Vec3::new(0.0, 0.0, 1.0),
        focal,
        cfg.img_width,
        cfg.img_height,
    );
    let sampler = FieldSampler { field: &field, shift: render_cfg.shift };
    let img = if cfg.deform.is_empty() {
        render_image(&sampler, &camera, &render_cfg)
    } else {
        let deform = load_deformation(Path::new(&cfg.deform))?;
        let warped = DeformedSampler { base: &sampler, deform: &deform, bounds: sampler.bounds() };
        render_image(&warped, &camera, &render_cfg)
    };
    write_ppm(&out, img.width, img.height, &img.rgb)?;
    let mut m = Manifest::new("render", cfg.dump());
    m.input_file("exemplar", Path::new(exemplar_path))?;
    if !cfg.deform.is_empty() {
        m.input_file("deform", Path::new(&cfg.deform))?;
    }
    m.output_file("image", &out)?;
    if !cfg.depth.is_empty() {
        let depth_path = Path::new(&cfg.depth);
        let depth_img =
            ImageF { width: img.width, height: img.height, data: img.depth.clone() };
        write_pfm(depth_path, &depth_img)?;
        m.output_file("depth", depth_path)?;
    }
    m.write(&manifest_path(&out))?;
    println!("wrote render {}", out.display());
    Ok(())
}

pub fn cmd_bench(cfg: &Config) -> Result<()> {
    let exemplar_path = require("exemplar", &cfg.exemplar)?;
    let (field, _) = load_bundle_at(exemplar_path, "exemplar")?;
    let columns = ColumnImage::flatten(&field);
    let rows = run_bench(&columns, &cfg.bench_sizes, cfg.bench_reps, &cfg.synthesis_params())?;
    let table = format_table(&rows);
    print!("{}", table);
    if !cfg.out.is_empty() {
        let out = Path::new(&cfg.out);
        fs::write(out, &table)?;
        let mut m = Manifest::new("bench", cfg.dump());
        m.input_file("exemplar", Path::new(exemplar_path))?;
        m.output_file("table", out)?;
        m.write(&manifest_path(out))?;
    }
    Ok(())
}
