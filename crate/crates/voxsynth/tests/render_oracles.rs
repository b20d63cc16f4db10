//! Renderer correctness against independent references: a from-scratch
//! trilinear oracle, partition of unity over random rays, closed-form
//! transmittance, quadrature convergence, and depth localization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxsynth::field::{
    render_depth, render_image, render_ray, softplus_shifted, Camera, Ray, RenderConfig,
    VolumeSampler, VoxelField,
};
use voxsynth::math::{Aabb, Vec3};

fn rand_field(shape: (usize, usize, usize), bbox: Aabb, seed: u64) -> VoxelField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = VoxelField::uniform(shape, 2, bbox, 0.0);
    for v in f.density.data.iter_mut() {
        *v = rng.gen_range(-2.0f32..3.0);
    }
    f
}

/// Straight 8-corner weighted sum, written independently of the renderer's
/// nested-lerp formulation.
fn trilinear_oracle(f: &VoxelField, p: Vec3) -> f64 {
    let (nx, ny, nz) = f.shape();
    let e = f.bbox.extent();
    let coord = |v: f64, min: f64, ext: f64, n: usize| {
        ((v - min) / ext * (n - 1) as f64).clamp(0.0, (n - 1) as f64)
    };
    let cx = coord(p.x, f.bbox.min.x, e.x, nx);
    let cy = coord(p.y, f.bbox.min.y, e.y, ny);
    let cz = coord(p.z, f.bbox.min.z, e.z, nz);
    let (x0, fx) = ((cx.floor() as usize).min(nx - 2), cx - (cx.floor() as usize).min(nx - 2) as f64);
    let (y0, fy) = ((cy.floor() as usize).min(ny - 2), cy - (cy.floor() as usize).min(ny - 2) as f64);
    let (z0, fz) = ((cz.floor() as usize).min(nz - 2), cz - (cz.floor() as usize).min(nz - 2) as f64);
    let mut acc = 0.0f64;
    let mut wsum = 0.0f64;
    for dx in 0..2usize {
        for dy in 0..2usize {
            for dz in 0..2usize {
                let w = (if dx == 0 { 1.0 - fx } else { fx })
                    * (if dy == 0 { 1.0 - fy } else { fy })
                    * (if dz == 0 { 1.0 - fz } else { fz });
                wsum += w;
                acc += w * f.density.get(x0 + dx, y0 + dy, z0 + dz) as f64;
            }
        }
    }
    assert!((wsum - 1.0).abs() < 1e-12);
    acc
}

#[test]
fn interpolation_matches_eight_corner_oracle() {
    let bbox = Aabb::new(Vec3::new(-0.7, 0.3, -2.0), Vec3::new(1.1, 2.9, 0.5));
    let f = rand_field((5, 6, 7), bbox, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..300 {
        // Sample beyond the bbox as well to cover the clamped region.
        let p = Vec3::new(
            rng.gen_range(-1.2..1.6),
            rng.gen_range(-0.2..3.4),
            rng.gen_range(-2.5..1.0),
        );
        let got = f.interp_density(p);
        let want = trilinear_oracle(&f, p);
        assert!(
            (got - want).abs() <= 1e-9 * want.abs().max(1.0),
            "at {:?}: {} vs {}",
            p,
            got,
            want
        );
    }
}

#[test]
fn ray_weights_partition_unity_over_random_rays() {
    let bbox = Aabb::new(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 1.5));
    let f = rand_field((12, 12, 8), bbox, 13);
    let sampler = voxsynth::field::FieldSampler { field: &f, shift: 0.0 };
    let cfg = RenderConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut hit = 0usize;
    for _ in 0..500 {
        let origin = Vec3::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(2.0..4.0),
        );
        let target = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.5));
        let ray = Ray { origin, dir: (target - origin).normalized() };
        let (w, t_end) = voxsynth::field::ray_weights(&sampler, &ray, &cfg);
        let total: f64 = w.iter().map(|&(_, wi)| wi).sum::<f64>() + t_end;
        assert!((total - 1.0).abs() <= 1e-9, "sum {} for ray {:?}", total, ray);
        if !w.is_empty() {
            hit += 1;
        }
    }
    assert!(hit > 400, "fixture should hit the volume almost always, hit {}", hit);
}

#[test]
fn background_enters_exactly_through_final_transmittance() {
    let bbox = Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
    let f = rand_field((8, 8, 8), bbox, 15);
    let sampler = voxsynth::field::FieldSampler { field: &f, shift: -1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..100 {
        let origin = Vec3::new(rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5), 3.0);
        let ray = Ray { origin, dir: (Vec3::ZERO - origin).normalized() };
        let black = RenderConfig { background: [0.0, 0.0, 0.0], ..Default::default() };
        let tinted = RenderConfig { background: [0.25, 0.5, 0.75], ..Default::default() };
        let (c0, t0) = render_ray(&sampler, &ray, &black);
        let (c1, t1) = render_ray(&sampler, &ray, &tinted);
        assert_eq!(t0, t1);
        for k in 0..3 {
            let want = t0 * tinted.background[k];
            assert!((c1[k] - c0[k] - want).abs() <= 1e-12, "{} vs {}", c1[k] - c0[k], want);
        }
    }
}

/// Constant density inside the sampler bounds; the marcher clips to the
/// bounds, so transmittance has the closed form `exp(-sigma * chord)` at any
/// sample count.
struct SlabSampler {
    bounds: Aabb,
    sigma: f64,
}

impl VolumeSampler for SlabSampler {
    fn bounds(&self) -> Aabb {
        self.bounds
    }
    fn density(&self, _p: Vec3) -> f64 {
        self.sigma
    }
    fn color(&self, _p: Vec3, _d: Vec3) -> [f64; 3] {
        [1.0, 1.0, 1.0]
    }
}

#[test]
fn slab_transmittance_matches_closed_form() {
    let slab = SlabSampler {
        bounds: Aabb::new(Vec3::new(1.0, -1.0, -1.0), Vec3::new(2.5, 1.0, 1.0)),
        sigma: 1.7,
    };
    let ray = Ray { origin: Vec3::new(0.0, 0.0, 0.0), dir: Vec3::new(1.0, 0.0, 0.0) };
    for &n in &[8usize, 64, 1024] {
        let cfg = RenderConfig { near: 0.01, far: 10.0, n_samples: n, ..Default::default() };
        let (_c, t_end) = render_ray(&slab, &ray, &cfg);
        let want = (-1.7f64 * 1.5).exp();
        assert!((t_end - want).abs() <= 1e-12, "n={}: {} vs {}", n, t_end, want);
    }
    // Oblique chord through the same slab.
    let dir = Vec3::new(1.0, 0.3, 0.2).normalized();
    let cfg = RenderConfig { near: 0.01, far: 10.0, n_samples: 256, ..Default::default() };
    let (t0, t1) = slab.bounds.ray_range(Vec3::ZERO, dir).unwrap();
    let (_c, t_end) = render_ray(&slab, &Ray { origin: Vec3::ZERO, dir }, &cfg);
    assert!((t_end - (-1.7 * (t1 - t0)).exp()).abs() <= 1e-12);
}

/// Density quadratic along x; the midpoint sum then carries an O(delta^2)
/// error against the analytic optical depth, so halving the step must shrink
/// the error quadratically.
struct QuadSampler {
    bounds: Aabb,
    a: f64,
    b: f64,
}

impl VolumeSampler for QuadSampler {
    fn bounds(&self) -> Aabb {
        self.bounds
    }
    fn density(&self, p: Vec3) -> f64 {
        self.a + self.b * p.x * p.x
    }
    fn color(&self, _p: Vec3, _d: Vec3) -> [f64; 3] {
        [1.0, 1.0, 1.0]
    }
}

#[test]
fn quadrature_error_decays_quadratically_on_smooth_density() {
    let q = QuadSampler {
        bounds: Aabb::new(Vec3::new(0.0, -1.0, -1.0), Vec3::new(2.0, 1.0, 1.0)),
        a: 0.3,
        b: 2.0,
    };
    let ray = Ray { origin: Vec3::new(-1.0, 0.0, 0.0), dir: Vec3::new(1.0, 0.0, 0.0) };
    // integral of a + b x^2 over x in [0, 2]
    let depth = q.a * 2.0 + q.b * 8.0 / 3.0;
    let want = (-depth).exp();
    let run = |n: usize| {
        let cfg = RenderConfig { near: 0.01, far: 10.0, n_samples: n, ..Default::default() };
        let (_c, t_end) = render_ray(&q, &ray, &cfg);
        (t_end - want).abs()
    };
    let e16 = run(16);
    let e64 = run(64);
    let e1024 = run(1024);
    assert!(e16 > 1e-6, "coarse error should be visible, got {}", e16);
    // 16 -> 64 quadruples the sample count: expect close to 16x decay.
    assert!(e64 < e16 / 8.0, "{} vs {}", e64, e16);
    assert!(e1024 < 1e-6, "fine quadrature error {}", e1024);
}

#[test]
fn depth_localizes_an_opaque_wall() {
    let wall = SlabSampler {
        bounds: Aabb::new(Vec3::new(1.5, -1.0, -1.0), Vec3::new(1.7, 1.0, 1.0)),
        sigma: 1e4,
    };
    let ray = Ray { origin: Vec3::ZERO, dir: Vec3::new(1.0, 0.0, 0.0) };
    let cfg = RenderConfig { near: 0.01, far: 10.0, n_samples: 256, ..Default::default() };
    let d = render_depth(&wall, &ray, &cfg);
    assert!((d - 1.5).abs() < 0.02, "depth {} should sit at the wall front", d);
    let (w, t_end) = voxsynth::field::ray_weights(&wall, &ray, &cfg);
    assert!(t_end < 1e-10);
    assert!((w.iter().map(|&(_, wi)| wi).sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn missing_rays_and_empty_space_yield_zero_depth() {
    let slab = SlabSampler {
        bounds: Aabb::new(Vec3::new(1.0, -1.0, -1.0), Vec3::new(2.0, 1.0, 1.0)),
        sigma: 0.0,
    };
    let miss = Ray { origin: Vec3::ZERO, dir: Vec3::new(0.0, 0.0, 1.0) };
    let through = Ray { origin: Vec3::ZERO, dir: Vec3::new(1.0, 0.0, 0.0) };
    let cfg = RenderConfig::default();
    assert_eq!(render_depth(&slab, &miss, &cfg), 0.0);
    assert_eq!(render_depth(&slab, &through, &cfg), 0.0);
    let (_c, t_end) = render_ray(&slab, &miss, &cfg);
    assert_eq!(t_end, 1.0);
}

#[test]
fn parallel_image_render_matches_per_pixel_rays() {
    let bbox = Aabb::new(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 1.0));
    let f = rand_field((10, 10, 6), bbox, 17);
    let sampler = voxsynth::field::FieldSampler { field: &f, shift: 0.0 };
    let cam = Camera::look_at(
        Vec3::new(0.3, -2.5, 2.0),
        bbox.center(),
        Vec3::new(0.0, 0.0, 1.0),
        24.0,
        16,
        12,
    );
    let cfg = RenderConfig::default();
    let img = render_image(&sampler, &cam, &cfg);
    let again = render_image(&sampler, &cam, &cfg);
    assert_eq!(img.rgb, again.rgb);
    assert_eq!(img.depth, again.depth);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let ray = cam.pixel_ray(px, py);
            let (c, _) = render_ray(&sampler, &ray, &cfg);
            let d = render_depth(&sampler, &ray, &cfg);
            let i = py * cam.width + px;
            for k in 0..3 {
                assert_eq!(img.rgb[i * 3 + k], c[k] as f32);
            }
            assert_eq!(img.depth[i], d as f32);
        }
    }
}

#[test]
fn activated_density_is_positive_and_monotone_in_raw() {
    let bbox = Aabb::new(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0));
    let lo = VoxelField::uniform((4, 4, 4), 2, bbox, -3.0);
    let hi = VoxelField::uniform((4, 4, 4), 2, bbox, 2.0);
    let p = Vec3::new(0.4, 0.6, 0.3);
    let a = voxsynth::field::activated_density(&lo, p, 0.0);
    let b = voxsynth::field::activated_density(&hi, p, 0.0);
    assert!(a > 0.0 && b > a);
    assert!((b - softplus_shifted(2.0, 0.0)).abs() < 1e-9);
}
