//! Per-column shading maps and shading-guided synthesis.
//!
//! A shading map stores, for every voxel column, a handful of scalar
//! illumination channels. Channels come from projecting rendered or
//! photographed views down to the columns their depth points land in, or
//! from ray-tracing single-scatter brightness against a point light. Raw
//! projections are sparse and noisy, so each channel is hole-filled from
//! its nearest valid columns, median-repaired, blurred, and replaced by a
//! low-degree polynomial surface.
//!
//! Guided synthesis matches a target map against the exemplar's map to
//! restrict patch candidates, transferring the target's illumination layout
//! onto synthesized geometry.

use rand::SeedableRng;
use rayon::prelude::*;

use crate::column::{ChannelLattice, ColumnImage};
use crate::field::{
    ray_weights, sample_hemisphere_cameras, Camera, RenderConfig, VolumeSampler, VoxelField,
};
use crate::field::FieldSampler;
use crate::io::ImageF;
use crate::kdtree::KdTree;
use crate::math::{Aabb, Vec3};
use crate::synthesis::{
    fill_scanline, synthesize, Canvas, FillJob, Guide, IndexCache, Mode, PatchSet,
    PlacementRecord, Rect, SynthesisParams,
};
use crate::{Error, Result};

/// Isotropic point emitter.
#[derive(Debug, Clone, Copy)]
pub struct PointLight {
    pub pos: Vec3,
    pub intensity: f64,
}

#[derive(Debug, Clone)]
pub struct ShadingConfig {
    /// Candidate views rendered or traced before channel selection.
    pub n_views: usize,
    /// Channels kept in the map.
    pub n_channels: usize,
    pub blur_passes: usize,
    pub blur_variance: f64,
    pub poly_degree: usize,
    /// Neighbors used to fill unseen columns.
    pub knn_k: usize,
    pub knn_eps: f64,
    pub median_window: usize,
    /// Minimum termination mass (1 - final transmittance) for a pixel's
    /// depth point to deposit into a column.
    pub min_termination: f64,
    /// Quadrature samples along light and camera segments.
    pub light_samples: usize,
    pub view_width: usize,
    pub view_height: usize,
    /// Camera distance from the volume center, world units.
    pub view_radius: f64,
    pub seed: u64,
    pub render: RenderConfig,
}

impl Default for ShadingConfig {
    fn default() -> ShadingConfig {
        ShadingConfig {
            n_views: 50,
            n_channels: 20,
            blur_passes: 10,
            blur_variance: 7.0,
            poly_degree: 3,
            knn_k: 8,
            knn_eps: 1e-6,
            median_window: 3,
            min_termination: 0.5,
            light_samples: 64,
            view_width: 64,
            view_height: 64,
            view_radius: 2.5,
            seed: 0,
            render: RenderConfig::default(),
        }
    }
}

/// Per-column illumination channels. `view_order[c]` is the id of the view
/// that produced channel `c`; validity is per (column, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct ShadingMap {
    pub lat: ChannelLattice,
    pub valid: Vec<bool>,
    pub view_order: Vec<u32>,
}

impl ShadingMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.lat.nx, self.lat.ny)
    }

    pub fn channels(&self) -> usize {
        self.lat.ch
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.lat.col(x, y)[c]
    }

    /// One channel as an `nx * ny` plane in f64.
    pub fn channel_plane(&self, c: usize) -> Vec<f64> {
        let (nx, ny) = self.dims();
        let mut out = Vec::with_capacity(nx * ny);
        for x in 0..nx {
            for y in 0..ny {
                out.push(self.lat.col(x, y)[c] as f64);
            }
        }
        out
    }

    pub fn set_channel_plane(&mut self, c: usize, plane: &[f64]) {
        let (nx, ny) = self.dims();
        assert_eq!(plane.len(), nx * ny);
        for x in 0..nx {
            for y in 0..ny {
                self.lat.col_mut(x, y)[c] = plane[x * ny + y] as f32;
            }
        }
    }
}

// ------------------------------------------------------------- ray tracing

fn density_or_vacuum<S: VolumeSampler>(sampler: &S, bounds: &Aabb, p: Vec3) -> f64 {
    if bounds.contains(p) {
        sampler.density(p)
    } else {
        0.0
    }
}

/// Transmittance along the segment from `a` to `b`, sampled at the `n`
/// points `a + (i/n)(b - a)`, `i = 1..=n`; the last sample sits on `b`.
/// Density is zero outside the sampler's bounds.
fn segment_transmittance<S: VolumeSampler>(sampler: &S, a: Vec3, b: Vec3, n: usize) -> f64 {
    let bounds = sampler.bounds();
    let to = b - a;
    let len = to.length();
    if len == 0.0 || n == 0 {
        return 1.0;
    }
    let dir = to * (1.0 / len);
    let delta = len / n as f64;
    let mut tau = 0.0f64;
    for i in 1..=n {
        let p = a + dir * (i as f64 * delta);
        tau += density_or_vacuum(sampler, &bounds, p) * delta;
    }
    (-tau).exp()
}

/// Single-scatter brightness at `x` from a point light: the light's
/// intensity attenuated along the segment, scattered by the local medium,
/// and divided by the squared distance. The segment quadrature anchors its
/// last sample on `x`, so the scatter factor uses the density at `x` itself.
pub fn ray_traced_brightness<S: VolumeSampler>(
    sampler: &S,
    x: Vec3,
    light: &PointLight,
    n: usize,
) -> f64 {
    let bounds = sampler.bounds();
    let to = x - light.pos;
    let len = to.length();
    if len == 0.0 || n == 0 {
        return light.intensity;
    }
    let dir = to * (1.0 / len);
    let delta = len / n as f64;
    let mut trans = 1.0f64;
    for i in 1..n {
        let p = light.pos + dir * (i as f64 * delta);
        trans *= (-density_or_vacuum(sampler, &bounds, p) * delta).exp();
    }
    let sigma_x = density_or_vacuum(sampler, &bounds, x);
    let scatter = 1.0 - (-sigma_x * delta).exp();
    trans * scatter * light.intensity / (len * len)
}

/// Brightness at `x` further attenuated back to the camera position, with
/// the camera segment sampled by the same endpoint-anchored quadrature.
pub fn ray_traced_shading<S: VolumeSampler>(
    sampler: &S,
    x: Vec3,
    camera_pos: Vec3,
    light: &PointLight,
    n: usize,
) -> f64 {
    let b = ray_traced_brightness(sampler, x, light, n);
    let q = segment_transmittance(sampler, camera_pos, x, n);
    q * b
}

// -------------------------------------------------------------- projection

/// Nearest lattice node to a world point, align-corners.
fn nearest_node(bounds: &Aabb, dims: (usize, usize), p: Vec3) -> (usize, usize) {
    let map = |v: f64, lo: f64, hi: f64, n: usize| -> usize {
        if n <= 1 || hi <= lo {
            return 0;
        }
        let u = (v - lo) / (hi - lo) * (n - 1) as f64;
        (u.round().max(0.0) as usize).min(n - 1)
    };
    (
        map(p.x, bounds.min.x, bounds.max.x, dims.0),
        map(p.y, bounds.min.y, bounds.max.y, dims.1),
    )
}

/// What a projected pixel deposits into its column.
pub enum ShadingSource<'a> {
    /// Grayscale images aligned with the cameras; pixel values deposit.
    Views(&'a [ImageF]),
    /// Ray-traced shading under this light deposits.
    RayTraced(&'a PointLight),
}

struct ViewDeposit {
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl ViewDeposit {
    fn invalid_fraction(&self) -> f64 {
        let empty = self.count.iter().filter(|&&c| c == 0).count();
        empty as f64 / self.count.len() as f64
    }
}

/// Project one view down to columns: every pixel whose ray terminates with
/// enough mass deposits its value into the column nearest its depth point.
fn deposit_view<S: VolumeSampler>(
    sampler: &S,
    camera: &Camera,
    image: Option<&ImageF>,
    light: Option<&PointLight>,
    dims: (usize, usize),
    cfg: &ShadingConfig,
) -> Result<ViewDeposit> {
    if let Some(img) = image {
        if img.width != camera.width || img.height != camera.height {
            return Err(Error::SizeMismatch(format!(
                "view image {}x{} does not match camera {}x{}",
                img.width, img.height, camera.width, camera.height
            )));
        }
    }
    let bounds = sampler.bounds();
    let mut dep = ViewDeposit { sum: vec![0.0; dims.0 * dims.1], count: vec![0; dims.0 * dims.1] };
    for py in 0..camera.height {
        for px in 0..camera.width {
            let ray = camera.pixel_ray(px, py);
            let (weights, t_end) = ray_weights(sampler, &ray, &cfg.render);
            if 1.0 - t_end < cfg.min_termination {
                continue;
            }
            let depth: f64 = weights.iter().map(|&(t, w)| t * w).sum();
            let x = ray.origin + ray.dir * depth;
            let (ix, iy) = nearest_node(&bounds, dims, x);
            let v = match (image, light) {
                (Some(img), _) => img.data[py * img.width + px] as f64,
                (None, Some(l)) => ray_traced_shading(sampler, x, ray.origin, l, cfg.light_samples),
                (None, None) => unreachable!("deposit needs an image or a light"),
            };
            dep.sum[ix * dims.1 + iy] += v;
            dep.count[ix * dims.1 + iy] += 1;
        }
    }
    Ok(dep)
}

/// Indices of the `n_c` views with the fewest unseen columns, ties broken
/// by view id.
fn select_channels(deposits: &[ViewDeposit], n_c: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..deposits.len()).collect();
    order.sort_by(|&a, &b| {
        deposits[a]
            .invalid_fraction()
            .total_cmp(&deposits[b].invalid_fraction())
            .then(a.cmp(&b))
    });
    order.truncate(n_c);
    order
}

// ------------------------------------------------------------ channel ops

/// Replace invalid cells with the inverse-distance-weighted mean of the `k`
/// nearest valid columns (all of them when fewer than `k` exist). Values
/// are read from the original plane only, so fill order cannot matter.
pub fn fill_holes_knn(
    plane: &mut [f64],
    valid: &[bool],
    nx: usize,
    ny: usize,
    k: usize,
    eps: f64,
    channel: usize,
) -> Result<()> {
    assert_eq!(plane.len(), nx * ny);
    assert_eq!(valid.len(), nx * ny);
    let holes: Vec<usize> = (0..nx * ny).filter(|&i| !valid[i]).collect();
    if holes.is_empty() {
        return Ok(());
    }
    let cells: Vec<usize> = (0..nx * ny).filter(|&i| valid[i]).collect();
    if cells.is_empty() {
        return Err(Error::ChannelEmpty(channel));
    }
    let pts: Vec<f32> = cells
        .iter()
        .flat_map(|&i| [(i / ny) as f32, (i % ny) as f32])
        .collect();
    let tree = KdTree::build(&pts, 2)?;
    let k_eff = k.min(cells.len());
    let mut updates = Vec::with_capacity(holes.len());
    for &h in &holes {
        let q = [(h / ny) as f32, (h % ny) as f32];
        let mut wsum = 0.0f64;
        let mut vsum = 0.0f64;
        for n in tree.knn(&q, k_eff) {
            let w = 1.0 / (n.dist2.sqrt() + eps);
            wsum += w;
            vsum += w * plane[cells[n.id as usize]];
        }
        updates.push((h, vsum / wsum));
    }
    for (h, v) in updates {
        plane[h] = v;
    }
    Ok(())
}

/// Replace every cell with the median of its `w x w` neighborhood, window
/// coordinates clamped at the borders (so edge medians repeat samples).
pub fn median_repair(plane: &[f64], nx: usize, ny: usize, window: usize) -> Vec<f64> {
    assert!(window % 2 == 1, "median window must be odd");
    let half = (window / 2) as isize;
    let mut out = vec![0.0; plane.len()];
    let mut buf: Vec<f64> = Vec::with_capacity(window * window);
    for x in 0..nx {
        for y in 0..ny {
            buf.clear();
            for dx in -half..=half {
                for dy in -half..=half {
                    let sx = (x as isize + dx).clamp(0, nx as isize - 1) as usize;
                    let sy = (y as isize + dy).clamp(0, ny as isize - 1) as usize;
                    buf.push(plane[sx * ny + sy]);
                }
            }
            buf.sort_by(|a, b| a.total_cmp(b));
            out[x * ny + y] = buf[buf.len() / 2];
        }
    }
    out
}

/// One separable Gaussian blur pass. The kernel is truncated at three
/// standard deviations and renormalized over the in-range taps at borders.
pub fn gaussian_blur(plane: &mut [f64], nx: usize, ny: usize, variance: f64) {
    assert!(variance > 0.0);
    let sigma = variance.sqrt();
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|j| (-(j * j) as f64 / (2.0 * variance)).exp())
        .collect();

    let mut tmp = vec![0.0; plane.len()];
    // Along x.
    for y in 0..ny {
        for x in 0..nx {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (ki, j) in (-radius..=radius).enumerate() {
                let sx = x as isize + j;
                if sx < 0 || sx >= nx as isize {
                    continue;
                }
                acc += kernel[ki] * plane[sx as usize * ny + y];
                wsum += kernel[ki];
            }
            tmp[x * ny + y] = acc / wsum;
        }
    }
    // Along y.
    for x in 0..nx {
        for y in 0..ny {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (ki, j) in (-radius..=radius).enumerate() {
                let sy = y as isize + j;
                if sy < 0 || sy >= ny as isize {
                    continue;
                }
                acc += kernel[ki] * tmp[x * ny + sy as usize];
                wsum += kernel[ki];
            }
            plane[x * ny + y] = acc / wsum;
        }
    }
}

fn poly_terms(degree: usize) -> Vec<(usize, usize)> {
    let mut t = Vec::new();
    for total in 0..=degree {
        for a in 0..=total {
            t.push((total - a, a));
        }
    }
    t
}

fn norm_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

/// Least-squares fit of a bivariate polynomial over the plane, returned as
/// the fitted surface. Coordinates are normalized to [-1, 1] for
/// conditioning; the system is solved by Gaussian elimination with partial
/// pivoting.
pub fn fit_poly_surface(plane: &[f64], nx: usize, ny: usize, degree: usize) -> Result<Vec<f64>> {
    let terms = poly_terms(degree);
    let m = terms.len();
    if nx * ny < m {
        return Err(Error::InvalidData(format!(
            "{} cells cannot determine {} polynomial coefficients",
            nx * ny,
            m
        )));
    }
    let mut ata = vec![0.0f64; m * m];
    let mut aty = vec![0.0f64; m];
    let mut row = vec![0.0f64; m];
    for x in 0..nx {
        let u = norm_coord(x, nx);
        for y in 0..ny {
            let v = norm_coord(y, ny);
            for (t, &(a, b)) in terms.iter().enumerate() {
                row[t] = u.powi(a as i32) * v.powi(b as i32);
            }
            let val = plane[x * ny + y];
            for i in 0..m {
                aty[i] += row[i] * val;
                for j in 0..m {
                    ata[i * m + j] += row[i] * row[j];
                }
            }
        }
    }
    let coeffs = solve_dense(&mut ata, &mut aty, m)?;
    let mut out = vec![0.0; nx * ny];
    for x in 0..nx {
        let u = norm_coord(x, nx);
        for y in 0..ny {
            let v = norm_coord(y, ny);
            let mut s = 0.0;
            for (t, &(a, b)) in terms.iter().enumerate() {
                s += coeffs[t] * u.powi(a as i32) * v.powi(b as i32);
            }
            out[x * ny + y] = s;
        }
    }
    Ok(out)
}

fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[pivot * n + col].abs() {
                pivot = r;
            }
        }
        if a[pivot * n + col].abs() < 1e-12 {
            return Err(Error::InvalidData("singular polynomial fit system".into()));
        }
        if pivot != col {
            for c in 0..n {
                a.swap(col * n + c, pivot * n + c);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r * n + c] * x[c];
        }
        x[r] = s / a[r * n + r];
    }
    Ok(x)
}

/// Blur passes followed by a polynomial-surface replacement: the channel's
/// low-frequency illumination estimate.
pub fn smooth_shading_image(plane: &[f64], nx: usize, ny: usize, cfg: &ShadingConfig) -> Result<Vec<f64>> {
    let mut p = plane.to_vec();
    for _ in 0..cfg.blur_passes {
        gaussian_blur(&mut p, nx, ny, cfg.blur_variance);
    }
    fit_poly_surface(&p, nx, ny, cfg.poly_degree)
}

// ----------------------------------------------------------- map building

/// Build a shading map over a `dims` column lattice: deposit every candidate
/// view, keep the `n_channels` best-covered ones (or `forced_order`), then
/// hole-fill, median-repair, and smooth each channel.
pub fn build_shading_map<S: VolumeSampler>(
    sampler: &S,
    cameras: &[Camera],
    source: &ShadingSource<'_>,
    dims: (usize, usize),
    cfg: &ShadingConfig,
    forced_order: Option<&[u32]>,
) -> Result<ShadingMap> {
    if cameras.is_empty() {
        return Err(Error::InvalidData("shading map needs at least one view".into()));
    }
    if let ShadingSource::Views(images) = source {
        if images.len() != cameras.len() {
            return Err(Error::SizeMismatch(format!(
                "{} images for {} cameras",
                images.len(),
                cameras.len()
            )));
        }
    }
    let deposits: Vec<ViewDeposit> = cameras
        .par_iter()
        .enumerate()
        .map(|(i, cam)| {
            let (image, light) = match source {
                ShadingSource::Views(images) => (Some(&images[i]), None),
                ShadingSource::RayTraced(l) => (None, Some(*l)),
            };
            deposit_view(sampler, cam, image, light, dims, cfg)
        })
        .collect::<Result<_>>()?;

    let order: Vec<usize> = match forced_order {
        Some(o) => {
            for &v in o {
                if v as usize >= deposits.len() {
                    return Err(Error::InvalidData(format!("view {} out of range", v)));
                }
            }
            o.iter().map(|&v| v as usize).collect()
        }
        None => select_channels(&deposits, cfg.n_channels),
    };

    let (nx, ny) = dims;
    let n_c = order.len();
    let mut lat = ChannelLattice::new(nx, ny, n_c, 0.0);
    for (c, &view) in order.iter().enumerate() {
        let dep = &deposits[view];
        let mut plane = vec![0.0f64; nx * ny];
        let mut valid = vec![false; nx * ny];
        for i in 0..nx * ny {
            if dep.count[i] > 0 {
                plane[i] = dep.sum[i] / dep.count[i] as f64;
                valid[i] = true;
            }
        }
        fill_holes_knn(&mut plane, &valid, nx, ny, cfg.knn_k, cfg.knn_eps, c)?;
        let plane = median_repair(&plane, nx, ny, cfg.median_window);
        let plane = smooth_shading_image(&plane, nx, ny, cfg)?;
        for x in 0..nx {
            for y in 0..ny {
                lat.col_mut(x, y)[c] = plane[x * ny + y] as f32;
            }
        }
    }
    Ok(ShadingMap {
        lat,
        valid: vec![true; nx * ny * n_c],
        view_order: order.iter().map(|&v| v as u32).collect(),
    })
}

/// Hemisphere cameras for a field, determined by the config.
pub fn auto_cameras(bbox: &Aabb, cfg: &ShadingConfig) -> Vec<Camera> {
    sample_hemisphere_cameras(
        bbox,
        cfg.n_views,
        cfg.view_radius,
        cfg.view_width,
        cfg.view_height,
        cfg.seed,
    )
}

// -------------------------------------------------------------- guidance

/// Bbox for a resized lattice that keeps the source's voxel spacing.
pub fn scaled_bbox(bbox: &Aabb, src: [usize; 3], dst: [usize; 3]) -> Aabb {
    let span = bbox.max - bbox.min;
    let stretch = |s: f64, n_src: usize, n_dst: usize| -> f64 {
        if n_src <= 1 {
            s
        } else {
            s * (n_dst.max(1) - 1) as f64 / (n_src - 1) as f64
        }
    };
    Aabb {
        min: bbox.min,
        max: bbox.min
            + Vec3::new(
                stretch(span.x, src[0], dst[0]),
                stretch(span.y, src[1], dst[1]),
                stretch(span.z, src[2], dst[2]),
            ),
    }
}

/// Min-max normalize every channel of a map independently to [0, 1];
/// constant channels become 0.5.
pub fn normalize_channels(map: &mut ShadingMap) {
    let (nx, ny) = map.dims();
    for c in 0..map.channels() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in 0..nx {
            for y in 0..ny {
                let v = map.lat.col(x, y)[c] as f64;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        for x in 0..nx {
            for y in 0..ny {
                let cell = &mut map.lat.col_mut(x, y)[c];
                *cell = if hi > lo { (((*cell as f64) - lo) / (hi - lo)) as f32 } else { 0.5 };
            }
        }
    }
}

/// Normalize two maps for comparison. Each map's channels are normalized
/// independently, so the comparison is invariant to per-channel affine
/// differences in overall brightness.
pub fn normalize_pair(a: &mut ShadingMap, b: &mut ShadingMap) {
    normalize_channels(a);
    normalize_channels(b);
}

/// Upsample a map to a larger lattice by align-corners bilinear
/// interpolation. The channel order carries over.
pub fn build_guider_scale_up(src: &ShadingMap, out: (usize, usize)) -> ShadingMap {
    let (snx, sny) = src.dims();
    let n_c = src.channels();
    let mut lat = ChannelLattice::new(out.0, out.1, n_c, 0.0);
    let src_pos = |i: usize, n_dst: usize, n_src: usize| -> f64 {
        if n_dst <= 1 || n_src <= 1 {
            0.0
        } else {
            i as f64 * (n_src - 1) as f64 / (n_dst - 1) as f64
        }
    };
    for x in 0..out.0 {
        let u = src_pos(x, out.0, snx);
        let x0 = (u.floor() as usize).min(snx.saturating_sub(1));
        let x1 = (x0 + 1).min(snx.saturating_sub(1));
        let fx = u - x0 as f64;
        for y in 0..out.1 {
            let v = src_pos(y, out.1, sny);
            let y0 = (v.floor() as usize).min(sny.saturating_sub(1));
            let y1 = (y0 + 1).min(sny.saturating_sub(1));
            let fy = v - y0 as f64;
            for c in 0..n_c {
                let s00 = src.get(x0, y0, c) as f64;
                let s01 = src.get(x0, y1, c) as f64;
                let s10 = src.get(x1, y0, c) as f64;
                let s11 = src.get(x1, y1, c) as f64;
                let val = s00 * (1.0 - fx) * (1.0 - fy)
                    + s01 * (1.0 - fx) * fy
                    + s10 * fx * (1.0 - fy)
                    + s11 * fx * fy;
                lat.col_mut(x, y)[c] = val as f32;
            }
        }
    }
    ShadingMap { lat, valid: vec![true; out.0 * out.1 * n_c], view_order: src.view_order.clone() }
}

/// Build a target-sized guider by synthesizing plain geometry (greedy, one
/// candidate) and ray-tracing its shading map with the given channel order.
/// Returns the guider and the synthesized geometry field.
pub fn build_guider_ray_traced(
    exemplar_field: &VoxelField,
    shift: f64,
    out: (usize, usize),
    params: &SynthesisParams,
    light: &PointLight,
    cfg: &ShadingConfig,
    forced_order: Option<&[u32]>,
) -> Result<(ShadingMap, VoxelField)> {
    let columns = ColumnImage::flatten(exemplar_field);
    let geom_params = SynthesisParams { k_g: 1, greedy: true, rotations: false, ..params.clone() };
    let (geom, _) = synthesize(&columns, out, &geom_params, Mode::TwoPhase, None)?;
    let (nx, ny, nz) = exemplar_field.shape();
    let bbox = scaled_bbox(&exemplar_field.bbox, [nx, ny, nz], [out.0, out.1, nz]);
    let field = geom.unflatten(bbox, exemplar_field.head.clone())?;
    let sampler = FieldSampler { field: &field, shift };
    let cameras = auto_cameras(&field.bbox, cfg);
    let map = build_shading_map(
        &sampler,
        &cameras,
        &ShadingSource::RayTraced(light),
        out,
        cfg,
        forced_order,
    )?;
    Ok((map, field))
}

/// Synthesize with shading guidance: candidate patches are restricted to
/// the `k_s` whose exemplar shading best matches the guider over the full
/// footprint, then ranked as usual on geometry and appearance. Both maps
/// are normalized per channel before matching.
pub fn shading_guided_synthesize(
    exemplar: &ColumnImage,
    exemplar_map: &ShadingMap,
    guider: &ShadingMap,
    out: (usize, usize),
    params: &SynthesisParams,
    seed_window: Option<u32>,
) -> Result<(ColumnImage, Vec<PlacementRecord>)> {
    params.validate()?;
    if exemplar_map.dims() != exemplar.dims() {
        return Err(Error::SizeMismatch("shading map does not match the exemplar lattice".into()));
    }
    if guider.dims() != out {
        return Err(Error::SizeMismatch("guider does not match the output size".into()));
    }
    if exemplar_map.view_order != guider.view_order {
        return Err(Error::ViewOrderMismatch);
    }
    if out.0 < params.w_p || out.1 < params.w_p {
        return Err(Error::ExemplarTooSmall(format!(
            "output {}x{} smaller than the patch footprint {}",
            out.0, out.1, params.w_p
        )));
    }
    let mut ex_map = exemplar_map.clone();
    let mut gu = guider.clone();
    normalize_pair(&mut ex_map, &mut gu);

    let set = PatchSet::extract(
        exemplar,
        params.w_p,
        params.w_p,
        params.extraction_step,
        params.rotations,
        Some(&ex_map.lat),
    )?;
    let mut canvas = Canvas::new(out.0, out.1, exemplar.nz, exemplar.channels);
    let mut cache = IndexCache::new(4);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(params.seed);
    let mut log = Vec::new();
    let job = FillJob {
        set: &set,
        mode: Mode::TwoPhase,
        rect: Rect::new(0, 0, out.0, out.1),
        footprint: (params.w_p, params.w_p),
        anchor: (0, 0),
        seed_window,
        region: None,
        guide: Some(Guide { target: &gu, k_s: params.k_s }),
    };
    fill_scanline(&mut canvas, &job, &mut cache, params, &mut rng, &mut log)?;
    Ok((canvas.img, log))
}

/// Mean per-cell L2 distance between two maps after pair normalization.
pub fn shading_distance(a: &ShadingMap, b: &ShadingMap) -> Result<f64> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(Error::SizeMismatch("shading maps differ in shape".into()));
    }
    let mut na = a.clone();
    let mut nb = b.clone();
    normalize_pair(&mut na, &mut nb);
    let (nx, ny) = na.dims();
    let mut total = 0.0f64;
    for x in 0..nx {
        for y in 0..ny {
            let ca = na.lat.col(x, y);
            let cb = nb.lat.col(x, y);
            let d2: f64 = ca
                .iter()
                .zip(cb.iter())
                .map(|(&p, &q)| {
                    let d = p as f64 - q as f64;
                    d * d
                })
                .sum();
            total += d2.sqrt();
        }
    }
    Ok(total / (nx * ny) as f64)
}
