//! Voxel radiance field and its volume renderer.
//!
//! Density is stored raw and activated per query point with a shifted
//! softplus AFTER trilinear interpolation, so a decision boundary can sit
//! between grid nodes and surfaces stay sharp. Colors come from a small
//! fully-connected head fed with interpolated features plus positional
//! encodings of the sample position and the view direction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::grid::{Grid3, Grid4};
use crate::math::{Aabb, Mat3, Vec3};
use crate::{Error, Result};

/// Numerically stable shifted softplus: `log(1 + exp(raw + shift))`.
/// Monotone in `raw` and strictly positive for finite inputs.
pub fn softplus_shifted(raw: f64, shift: f64) -> f64 {
    let x = raw + shift;
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Sin/cos positional encoding at frequencies `2^0 .. 2^(degrees-1)`,
/// appended per frequency as `sin(f*x), cos(f*x), sin(f*y), ...`.
pub fn positional_encode(v: [f64; 3], degrees: usize, out: &mut Vec<f64>) {
    for i in 0..degrees {
        let f = (1u64 << i) as f64;
        for &c in &v {
            out.push((f * c).sin());
            out.push((f * c).cos());
        }
    }
}

/// Fully-connected color head. Hidden layers use ReLU; the output layer is a
/// sigmoid so emitted colors always lie in `[0, 1]`.
///
/// Input layout: `[features(C), pe(x_norm), pe(dir)]`, where `x_norm` is the
/// sample position normalized to `[0,1]^3` over the field bbox.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorHead {
    /// Layer widths from input to output; the last entry must be 3.
    pub sizes: Vec<usize>,
    /// Per layer: weight matrix (rows x cols, row-major), then bias (rows).
    pub params: Vec<f32>,
    pub pe_x: usize,
    pub pe_d: usize,
}

impl ColorHead {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn new(sizes: Vec<usize>, params: Vec<f32>, pe_x: usize, pe_d: usize) -> Result<ColorHead> {
        if sizes.len() < 2 || *sizes.last().unwrap() != 3 {
            return Err(Error::InvalidData(
                "color head needs at least two layer sizes ending in 3".into(),
            ));
        }
        if params.len() != Self::param_count(&sizes) {
            return Err(Error::SizeMismatch(format!(
                "color head expects {} parameters, got {}",
                Self::param_count(&sizes),
                params.len()
            )));
        }
        Ok(ColorHead { sizes, params, pe_x, pe_d })
    }

    /// All-zero head; emits constant 0.5 gray (sigmoid of zero).
    pub fn zeros(input: usize, pe_x: usize, pe_d: usize) -> ColorHead {
        let sizes = vec![input, 3];
        let params = vec![0.0; Self::param_count(&sizes)];
        ColorHead { sizes, params, pe_x, pe_d }
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    /// Feature channel count implied by the input width and encodings.
    pub fn feature_channels(&self) -> Result<usize> {
        let enc = 6 * (self.pe_x + self.pe_d);
        if self.sizes[0] < enc {
            return Err(Error::InvalidData(format!(
                "color head input width {} smaller than encoding width {}",
                self.sizes[0], enc
            )));
        }
        Ok(self.sizes[0] - enc)
    }

    pub fn eval(&self, features: &[f32], x_norm: [f64; 3], dir: [f64; 3]) -> [f64; 3] {
        let mut cur: Vec<f64> = Vec::with_capacity(self.sizes[0]);
        cur.extend(features.iter().map(|&f| f as f64));
        positional_encode(x_norm, self.pe_x, &mut cur);
        positional_encode(dir, self.pe_d, &mut cur);
        debug_assert_eq!(cur.len(), self.sizes[0]);

        let mut offset = 0usize;
        let mut next: Vec<f64> = Vec::new();
        for l in 0..self.sizes.len() - 1 {
            let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
            next.clear();
            next.resize(rows, 0.0);
            for r in 0..rows {
                let w = &self.params[offset + r * cols..offset + (r + 1) * cols];
                let mut acc = 0.0f64;
                for (wi, xi) in w.iter().zip(cur.iter()) {
                    acc += *wi as f64 * xi;
                }
                next[r] = acc + self.params[offset + rows * cols + r] as f64;
            }
            offset += rows * cols + rows;
            let last = l == self.sizes.len() - 2;
            for v in next.iter_mut() {
                *v = if last { 1.0 / (1.0 + (-*v).exp()) } else { v.max(0.0) };
            }
            std::mem::swap(&mut cur, &mut next);
        }
        [cur[0], cur[1], cur[2]]
    }
}

/// Density grid + feature grid + color head over a world-space bbox.
/// Grid nodes span the bbox with node 0 at `min` and node `n-1` at `max`.
#[derive(Debug, Clone)]
pub struct VoxelField {
    pub density: Grid3,
    pub features: Grid4,
    pub bbox: Aabb,
    pub head: ColorHead,
}

impl VoxelField {
    pub fn new(density: Grid3, features: Grid4, bbox: Aabb, head: ColorHead) -> Result<VoxelField> {
        if features.nx != density.nx || features.ny != density.ny || features.nz != density.nz {
            return Err(Error::SizeMismatch(format!(
                "feature grid {}x{}x{} does not match density grid {}x{}x{}",
                features.nx, features.ny, features.nz, density.nx, density.ny, density.nz
            )));
        }
        if !bbox.is_valid() {
            return Err(Error::InvalidData("bbox must be finite with positive extent".into()));
        }
        if head.feature_channels()? != features.channels {
            return Err(Error::SizeMismatch(format!(
                "color head expects {} feature channels, grid has {}",
                head.feature_channels()?,
                features.channels
            )));
        }
        Ok(VoxelField { density, features, bbox, head })
    }

    /// Uniform raw density everywhere; `raw` around -40 renders as vacuum.
    pub fn uniform(
        shape: (usize, usize, usize),
        channels: usize,
        bbox: Aabb,
        raw: f32,
    ) -> VoxelField {
        let (nx, ny, nz) = shape;
        let head = ColorHead::zeros(channels + 6 * (5 + 4), 5, 4);
        VoxelField {
            density: Grid3::new(nx, ny, nz, raw),
            features: Grid4::new(channels, nx, ny, nz, 0.0),
            bbox,
            head,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.density.nx, self.density.ny, self.density.nz)
    }

    fn assert_finite(&self) -> Result<()> {
        if self.density.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("density grid".into()));
        }
        if self.features.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature grid".into()));
        }
        if self.params_non_finite() {
            return Err(Error::NonFinite("color head".into()));
        }
        Ok(())
    }

    fn params_non_finite(&self) -> bool {
        self.head.params.iter().any(|v| !v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        self.assert_finite()
    }

    /// World point -> continuous grid coordinates, clamped to the node range.
    /// Points outside the bbox therefore interpolate the boundary values.
    fn grid_coords(&self, p: Vec3) -> (f64, f64, f64) {
        let e = self.bbox.extent();
        let t = |v: f64, min: f64, ext: f64, n: usize| -> f64 {
            if n <= 1 {
                return 0.0;
            }
            let c = (v - min) / ext * (n - 1) as f64;
            c.clamp(0.0, (n - 1) as f64)
        };
        (
            t(p.x, self.bbox.min.x, e.x, self.density.nx),
            t(p.y, self.bbox.min.y, e.y, self.density.ny),
            t(p.z, self.bbox.min.z, e.z, self.density.nz),
        )
    }

    #[inline]
    fn corner_weights(c: f64, n: usize) -> (usize, usize, f64) {
        if n <= 1 {
            return (0, 0, 0.0);
        }
        let i0 = (c.floor() as usize).min(n - 2);
        (i0, i0 + 1, c - i0 as f64)
    }

    /// Trilinear interpolation of the raw density at a world point.
    pub fn interp_density(&self, p: Vec3) -> f64 {
        let (cx, cy, cz) = self.grid_coords(p);
        let (x0, x1, fx) = Self::corner_weights(cx, self.density.nx);
        let (y0, y1, fy) = Self::corner_weights(cy, self.density.ny);
        let (z0, z1, fz) = Self::corner_weights(cz, self.density.nz);
        let g = &self.density;
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(g.get(x0, y0, z0) as f64, g.get(x1, y0, z0) as f64, fx);
        let c10 = lerp(g.get(x0, y1, z0) as f64, g.get(x1, y1, z0) as f64, fx);
        let c01 = lerp(g.get(x0, y0, z1) as f64, g.get(x1, y0, z1) as f64, fx);
        let c11 = lerp(g.get(x0, y1, z1) as f64, g.get(x1, y1, z1) as f64, fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
    }

    /// Trilinear interpolation of all feature channels at a world point.
    /// `out` is resized to the channel count.
    pub fn interp_features(&self, p: Vec3, out: &mut Vec<f32>) {
        let (cx, cy, cz) = self.grid_coords(p);
        let (x0, x1, fx) = Self::corner_weights(cx, self.features.nx);
        let (y0, y1, fy) = Self::corner_weights(cy, self.features.ny);
        let (z0, z1, fz) = Self::corner_weights(cz, self.features.nz);
        out.clear();
        let g = &self.features;
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        for c in 0..g.channels {
            let c00 = lerp(g.get(c, x0, y0, z0) as f64, g.get(c, x1, y0, z0) as f64, fx);
            let c10 = lerp(g.get(c, x0, y1, z0) as f64, g.get(c, x1, y1, z0) as f64, fx);
            let c01 = lerp(g.get(c, x0, y0, z1) as f64, g.get(c, x1, y0, z1) as f64, fx);
            let c11 = lerp(g.get(c, x0, y1, z1) as f64, g.get(c, x1, y1, z1) as f64, fx);
            out.push(lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz) as f32);
        }
    }

    /// World position normalized to `[0,1]^3` over the bbox (clamped).
    pub fn normalized_pos(&self, p: Vec3) -> [f64; 3] {
        let e = self.bbox.extent();
        let q = self.bbox.clamp(p);
        [
            (q.x - self.bbox.min.x) / e.x,
            (q.y - self.bbox.min.y) / e.y,
            (q.z - self.bbox.min.z) / e.z,
        ]
    }
}

/// Activated density: interpolate the raw grid, then apply the shifted
/// softplus. Interpolating first is what keeps surfaces sharp; tests pin the
/// difference against the interpolate-after-activation variant.
pub fn activated_density(field: &VoxelField, p: Vec3, shift: f64) -> f64 {
    softplus_shifted(field.interp_density(p), shift)
}

/// Opacity contributed by a step of length `delta` at point `p`.
pub fn post_activated_alpha(field: &VoxelField, p: Vec3, shift: f64, delta: f64) -> f64 {
    1.0 - (-activated_density(field, p, shift) * delta).exp()
}

/// Emitted color at a world point for a view direction.
pub fn color_emission(field: &VoxelField, p: Vec3, dir: Vec3, features_buf: &mut Vec<f32>) -> [f64; 3] {
    field.interp_features(p, features_buf);
    field.head.eval(features_buf, field.normalized_pos(p), [dir.x, dir.y, dir.z])
}

#[derive(Debug, Clone, Copy)]
pub struct RenderConfig {
    pub near: f64,
    pub far: f64,
    pub n_samples: usize,
    /// Softplus shift applied to raw density at render time.
    pub shift: f64,
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> RenderConfig {
        RenderConfig { near: 0.05, far: 8.0, n_samples: 192, shift: 0.0, background: [1.0, 1.0, 1.0] }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

/// Anything the marcher can sample: a plain field or a deformed view of one.
pub trait VolumeSampler: Sync {
    fn bounds(&self) -> Aabb;
    /// Activated density at a world point inside `bounds()`.
    fn density(&self, p: Vec3) -> f64;
    fn color(&self, p: Vec3, dir: Vec3) -> [f64; 3];
}

pub struct FieldSampler<'a> {
    pub field: &'a VoxelField,
    pub shift: f64,
}

impl VolumeSampler for FieldSampler<'_> {
    fn bounds(&self) -> Aabb {
        self.field.bbox
    }

    fn density(&self, p: Vec3) -> f64 {
        activated_density(self.field, p, self.shift)
    }

    fn color(&self, p: Vec3, dir: Vec3) -> [f64; 3] {
        let mut buf = Vec::new();
        color_emission(self.field, p, dir, &mut buf)
    }
}

/// Transmittance below which marching stops early; the tail contribution is
/// below every tolerance used by callers.
const T_CUTOFF: f64 = 1e-10;
/// Weights below this skip the (expensive) color evaluation only.
const W_COLOR_CUTOFF: f64 = 1e-12;

/// Fixed-step quadrature along one ray, restricted to the sampler bounds.
/// Samples sit at interval midpoints of `[t0, t1] = [near, far] n bounds`.
/// `visit` receives `(t_i, p_i, alpha_i, T_i)` per sample; returns the final
/// transmittance (1.0 when the ray misses the bounds entirely).
pub fn march_ray<S: VolumeSampler>(
    sampler: &S,
    ray: &Ray,
    cfg: &RenderConfig,
    mut visit: impl FnMut(f64, Vec3, f64, f64),
) -> f64 {
    let Some((b0, b1)) = sampler.bounds().ray_range(ray.origin, ray.dir) else {
        return 1.0;
    };
    let t0 = b0.max(cfg.near);
    let t1 = b1.min(cfg.far);
    if t1 <= t0 {
        return 1.0;
    }
    let n = cfg.n_samples.max(1);
    let delta = (t1 - t0) / n as f64;
    let mut trans = 1.0f64;
    for i in 0..n {
        let t = t0 + (i as f64 + 0.5) * delta;
        let p = ray.origin + ray.dir * t;
        let sigma = sampler.density(p);
        let alpha = 1.0 - (-sigma * delta).exp();
        visit(t, p, alpha, trans);
        trans *= 1.0 - alpha;
        if trans < T_CUTOFF {
            break;
        }
    }
    trans
}

/// Composited color and final transmittance for one ray:
/// `C = sum_i T_i * alpha_i * c_i + T_end * background`.
pub fn render_ray<S: VolumeSampler>(sampler: &S, ray: &Ray, cfg: &RenderConfig) -> ([f64; 3], f64) {
    let dir_n = ray.dir.normalized();
    let mut rgb = [0.0f64; 3];
    let t_end = march_ray(sampler, ray, cfg, |_t, p, alpha, trans| {
        let w = trans * alpha;
        if w > W_COLOR_CUTOFF {
            let c = sampler.color(p, dir_n);
            rgb[0] += w * c[0];
            rgb[1] += w * c[1];
            rgb[2] += w * c[2];
        }
    });
    for k in 0..3 {
        rgb[k] += t_end * cfg.background[k];
    }
    (rgb, t_end)
}

/// Expected termination depth: `sum_i T_i * alpha_i * t_i`. An empty field
/// yields 0 (no normalization by total weight).
pub fn render_depth<S: VolumeSampler>(sampler: &S, ray: &Ray, cfg: &RenderConfig) -> f64 {
    let mut depth = 0.0f64;
    march_ray(sampler, ray, cfg, |t, _p, alpha, trans| {
        depth += trans * alpha * t;
    });
    depth
}

/// Per-sample weights `(t_i, T_i * alpha_i)` plus the final transmittance.
/// The weights plus the final transmittance always sum to 1.
pub fn ray_weights<S: VolumeSampler>(
    sampler: &S,
    ray: &Ray,
    cfg: &RenderConfig,
) -> (Vec<(f64, f64)>, f64) {
    let mut w = Vec::new();
    let t_end = march_ray(sampler, ray, cfg, |t, _p, alpha, trans| {
        w.push((t, trans * alpha));
    });
    (w, t_end)
}

/// Pinhole camera. The rotation's columns are the world-space directions of
/// the camera's +x (image right), +y (image down), and +z (view) axes.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub pos: Vec3,
    pub rot: Mat3,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `pos` looking at `target`. `up_hint` breaks the roll
    /// ambiguity; a hint parallel to the view direction falls back to +Y.
    pub fn look_at(
        pos: Vec3,
        target: Vec3,
        up_hint: Vec3,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Camera {
        let fwd = (target - pos).normalized();
        let mut up = up_hint.normalized();
        if fwd.cross(up).length() < 1e-6 {
            up = Vec3::new(0.0, 1.0, 0.0);
            if fwd.cross(up).length() < 1e-6 {
                up = Vec3::new(1.0, 0.0, 0.0);
            }
        }
        let right = fwd.cross(up).normalized();
        let down = fwd.cross(right).normalized();
        Camera {
            pos,
            rot: Mat3::from_cols(right, down, fwd),
            focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    /// Ray through the center of pixel `(px, py)`; row 0 is the image top.
    pub fn pixel_ray(&self, px: usize, py: usize) -> Ray {
        let dc = Vec3::new(
            (px as f64 + 0.5 - self.cx) / self.focal,
            (py as f64 + 0.5 - self.cy) / self.focal,
            1.0,
        );
        Ray { origin: self.pos, dir: self.rot.mul_vec(dc).normalized() }
    }
}

/// RGB + depth raster produced by `render_image`.
#[derive(Debug, Clone)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples in `[0,1]`.
    pub rgb: Vec<f32>,
    pub depth: Vec<f32>,
}

/// Render every pixel of `camera`. Rows render in parallel; the result is
/// identical to the sequential render because pixels are independent.
pub fn render_image<S: VolumeSampler>(sampler: &S, camera: &Camera, cfg: &RenderConfig) -> RenderedImage {
    let (w, h) = (camera.width, camera.height);
    let mut rgb = vec![0.0f32; w * h * 3];
    let mut depth = vec![0.0f32; w * h];
    rgb.par_chunks_mut(w * 3)
        .zip(depth.par_chunks_mut(w))
        .enumerate()
        .for_each(|(py, (rgb_row, depth_row))| {
            for px in 0..w {
                let ray = camera.pixel_ray(px, py);
                let (c, _t) = render_ray(sampler, &ray, cfg);
                let d = render_depth(sampler, &ray, cfg);
                rgb_row[px * 3] = c[0] as f32;
                rgb_row[px * 3 + 1] = c[1] as f32;
                rgb_row[px * 3 + 2] = c[2] as f32;
                depth_row[px] = d as f32;
            }
        });
    RenderedImage { width: w, height: h, rgb, depth }
}

/// `n` cameras with positions sampled uniformly on the upper hemisphere of
/// the given radius around the bbox center, all looking at the center.
/// Deterministic for a fixed seed. Every position satisfies
/// `z >= center.z` (the hemisphere base plane).
pub fn sample_hemisphere_cameras(
    bbox: &Aabb,
    n: usize,
    radius: f64,
    width: usize,
    height: usize,
    seed: u64,
) -> Vec<Camera> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = bbox.center();
    let focal = 1.0 * width.max(height) as f64;
    (0..n)
        .map(|_| {
            // cos(theta) uniform in [0.15, 1] keeps cameras off the horizon
            // so the scene stays inside the frame.
            let cos_t: f64 = rng.gen_range(0.15..=1.0);
            let sin_t = (1.0 - cos_t * cos_t).sqrt();
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let pos = center
                + Vec3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t) * radius;
            Camera::look_at(pos, center, Vec3::new(0.0, 0.0, 1.0), focal, width, height)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }

    fn unit_bbox() -> Aabb {
        Aabb::new(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0))
    }

    #[test]
    fn softplus_reference_values() {
        assert_close(softplus_shifted(0.0, 0.0), std::f64::consts::LN_2, 1e-12);
        assert_close(softplus_shifted(-40.0, 0.0), 0.0, 1e-15);
        assert_close(softplus_shifted(40.0, 0.0), 40.0, 1e-12);
        // shift moves the argument:
        assert_close(softplus_shifted(3.0, -3.0), std::f64::consts::LN_2, 1e-12);
        assert_eq!(softplus_shifted(f64::NEG_INFINITY, 0.0), 0.0);
    }

    #[test]
    fn interp_reproduces_node_values() {
        let mut f = VoxelField::uniform((3, 3, 3), 1, unit_bbox(), 0.0);
        for x in 0..3 {
            for y in 0..3 {
                for z in 0..3 {
                    f.density.set(x, y, z, (x * 9 + y * 3 + z) as f32);
                }
            }
        }
        for x in 0..3 {
            for y in 0..3 {
                for z in 0..3 {
                    let p = Vec3::new(x as f64 / 2.0, y as f64 / 2.0, z as f64 / 2.0);
                    assert_close(f.interp_density(p), (x * 9 + y * 3 + z) as f64, 1e-12);
                }
            }
        }
    }

    #[test]
    fn interp_clamps_outside_bbox() {
        let mut f = VoxelField::uniform((2, 2, 2), 1, unit_bbox(), 0.0);
        f.density.set(1, 1, 1, 8.0);
        let inside = f.interp_density(Vec3::new(1.0, 1.0, 1.0));
        let outside = f.interp_density(Vec3::new(5.0, 7.0, 9.0));
        assert_eq!(inside, outside);
    }

    #[test]
    fn post_activation_differs_from_pre_activation_on_sharp_edge() {
        // Two nodes -40 / +40: post-activation at the midpoint sees raw 0.
        let mut f = VoxelField::uniform((2, 1, 1), 1, unit_bbox(), -40.0);
        f.density.set(1, 0, 0, 40.0);
        let mid = Vec3::new(0.5, 0.0, 0.0);
        let post = activated_density(&f, mid, 0.0);
        assert_close(post, std::f64::consts::LN_2, 1e-9);
        let pre = 0.5 * (softplus_shifted(-40.0, 0.0) + softplus_shifted(40.0, 0.0));
        assert!((pre - post).abs() > 10.0);
    }

    #[test]
    fn zero_head_emits_gray() {
        let head = ColorHead::zeros(2 + 6 * (5 + 4), 5, 4);
        let c = head.eval(&[0.3, -0.7], [0.2, 0.4, 0.6], [0.0, 0.0, 1.0]);
        for v in c {
            assert_close(v, 0.5, 1e-12);
        }
    }

    #[test]
    fn head_matches_dense_layer_oracle() {
        // Single dense layer with fixed weights, checked against an
        // explicitly written matrix-vector product.
        let pe_x = 2;
        let pe_d = 1;
        let input = 2 + 6 * (pe_x + pe_d);
        let mut params = Vec::new();
        for r in 0..3 {
            for c in 0..input {
                params.push(((r * input + c) % 7) as f32 * 0.1 - 0.3);
            }
        }
        params.extend_from_slice(&[0.1, -0.2, 0.3]);
        let head = ColorHead::new(vec![input, 3], params.clone(), pe_x, pe_d).unwrap();

        let feat = [0.5f32, -1.0];
        let x = [0.1, 0.2, 0.3];
        let d = [0.0, 1.0, 0.0];
        let got = head.eval(&feat, x, d);

        let mut inp: Vec<f64> = feat.iter().map(|&v| v as f64).collect();
        for i in 0..pe_x {
            let f = (1u64 << i) as f64;
            for &c in &x {
                inp.push((f * c).sin());
                inp.push((f * c).cos());
            }
        }
        for i in 0..pe_d {
            let f = (1u64 << i) as f64;
            for &c in &d {
                inp.push((f * c).sin());
                inp.push((f * c).cos());
            }
        }
        for r in 0..3 {
            let mut acc = 0.0f64;
            for c in 0..input {
                acc += params[r * input + c] as f64 * inp[c];
            }
            acc += params[3 * input + r] as f64;
            let expect = 1.0 / (1.0 + (-acc).exp());
            assert_close(got[r], expect, 1e-9);
        }
    }

    #[test]
    fn direction_weights_zeroed_make_color_view_independent() {
        let pe_x = 2;
        let pe_d = 2;
        let input = 1 + 6 * (pe_x + pe_d);
        let mut params = vec![0.0f32; ColorHead::param_count(&[input, 3])];
        // Nonzero weights only on the feature and position columns.
        let dir_cols_start = 1 + 6 * pe_x;
        for r in 0..3 {
            for c in 0..dir_cols_start {
                params[r * input + c] = 0.2 + 0.05 * (r as f32) + 0.01 * (c as f32);
            }
        }
        let head = ColorHead::new(vec![input, 3], params, pe_x, pe_d).unwrap();
        let a = head.eval(&[0.4], [0.1, 0.5, 0.9], [0.0, 0.0, 1.0]);
        let b = head.eval(&[0.4], [0.1, 0.5, 0.9], [0.7, -0.7, 0.1]);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_field_renders_background() {
        let f = VoxelField::uniform((4, 4, 4), 1, unit_bbox(), -40.0);
        let s = FieldSampler { field: &f, shift: 0.0 };
        let cfg = RenderConfig {
            near: 0.0,
            far: 4.0,
            n_samples: 64,
            shift: 0.0,
            background: [0.2, 0.4, 0.6],
        };
        let ray = Ray { origin: Vec3::new(0.5, 0.5, -1.0), dir: Vec3::new(0.0, 0.0, 1.0) };
        let (c, t) = render_ray(&s, &ray, &cfg);
        assert_close(t, 1.0, 1e-9);
        assert_close(c[0], 0.2, 1e-9);
        assert_close(c[1], 0.4, 1e-9);
        assert_close(c[2], 0.6, 1e-9);
        assert_close(render_depth(&s, &ray, &cfg), 0.0, 1e-9);
    }

    #[test]
    fn miss_ray_returns_background() {
        let f = VoxelField::uniform((4, 4, 4), 1, unit_bbox(), 5.0);
        let s = FieldSampler { field: &f, shift: 0.0 };
        let cfg = RenderConfig::default();
        let ray = Ray { origin: Vec3::new(5.0, 5.0, -1.0), dir: Vec3::new(0.0, 0.0, 1.0) };
        let (c, t) = render_ray(&s, &ray, &cfg);
        assert_eq!(t, 1.0);
        assert_eq!(c, cfg.background);
    }

    #[test]
    fn camera_axes_are_orthonormal_and_point_at_target() {
        let cams = sample_hemisphere_cameras(&unit_bbox(), 16, 3.0, 32, 32, 7);
        assert_eq!(cams.len(), 16);
        let center = unit_bbox().center();
        for cam in &cams {
            assert!(cam.pos.z >= center.z - 1e-9);
            assert_close((cam.pos - center).length(), 3.0, 1e-9);
            let [r, d, f] = cam.rot.cols;
            assert_close(r.dot(d), 0.0, 1e-9);
            assert_close(r.dot(f), 0.0, 1e-9);
            assert_close(d.dot(f), 0.0, 1e-9);
            assert_close(r.length(), 1.0, 1e-9);
            // forward axis points at the target:
            let to_center = (center - cam.pos).normalized();
            assert_close(f.dot(to_center), 1.0, 1e-9);
            // center pixel ray passes near the target:
            let ray = cam.pixel_ray(cam.width / 2, cam.height / 2);
            let closest = ray.origin + ray.dir * (center - ray.origin).dot(ray.dir);
            assert!((closest - center).length() < 0.1);
        }
    }

    #[test]
    fn hemisphere_cameras_deterministic_per_seed() {
        let a = sample_hemisphere_cameras(&unit_bbox(), 8, 2.0, 16, 16, 42);
        let b = sample_hemisphere_cameras(&unit_bbox(), 8, 2.0, 16, 16, 42);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.pos, y.pos);
        }
        let c = sample_hemisphere_cameras(&unit_bbox(), 8, 2.0, 16, 16, 43);
        assert!(a.iter().zip(c.iter()).any(|(x, y)| x.pos != y.pos));
    }
}
