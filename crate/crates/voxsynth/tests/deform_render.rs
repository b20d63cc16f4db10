//! Deformed sampling through the renderer: the identity deformation must be
//! invisible, constant displacements must shift the scene, and fitted
//! deformations must reduce correspondence error and stay renderable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxsynth::deform::{
    analytic_correspondences, fit_deformation, DeformMlp, DeformationField, DeformedSampler,
    FitConfig, SurfaceKind,
};
use voxsynth::field::{
    render_image, render_ray, Camera, Ray, RenderConfig, VolumeSampler, VoxelField,
};
use voxsynth::field::FieldSampler;
use voxsynth::math::{Aabb, Vec3};

fn textured_field(seed: u64) -> VoxelField {
    let bbox = Aabb::new(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 1.0));
    let mut f = VoxelField::uniform((14, 14, 10), 2, bbox, -10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in f.density.data.iter_mut() {
        *v = rng.gen_range(-10.0f32..20.0);
    }
    for v in f.features.data.iter_mut() {
        *v = rng.gen_range(-1.0f32..1.0);
    }
    f
}

#[test]
fn identity_deformation_renders_bit_identically() {
    let f = textured_field(31);
    let base = FieldSampler { field: &f, shift: 0.0 };
    let ident = DeformationField::identity();
    let warped = DeformedSampler { base: &base, deform: &ident, bounds: f.bbox };
    let cam = Camera::look_at(
        Vec3::new(0.5, -2.0, 2.2),
        f.bbox.center(),
        Vec3::new(0.0, 0.0, 1.0),
        20.0,
        16,
        12,
    );
    let cfg = RenderConfig::default();
    let plain = render_image(&base, &cam, &cfg);
    let through = render_image(&warped, &cam, &cfg);
    assert_eq!(plain.rgb, through.rgb);
    assert_eq!(plain.depth, through.depth);
}

fn constant_displacement(d: Vec3) -> DeformationField {
    // All-zero network except the output bias: ReLU stages emit zero, so the
    // displacement is exactly the bias everywhere.
    let mut params = vec![0.0f64; voxsynth::deform::mlp_param_count()];
    let n = params.len();
    params[n - 3] = d.x;
    params[n - 2] = d.y;
    params[n - 1] = d.z;
    DeformationField {
        mlp: DeformMlp::from_params(params).unwrap(),
        center: Vec3::new(0.0, 0.0, 0.0),
        scale: 1.0,
    }
}

#[test]
fn constant_displacement_samples_the_shifted_scene() {
    let f = textured_field(32);
    let base = FieldSampler { field: &f, shift: 0.0 };
    let d0 = Vec3::new(0.3, -0.2, 0.1);
    let deform = constant_displacement(d0);
    let bounds = Aabb::new(f.bbox.min - d0, f.bbox.max - d0);
    let warped = DeformedSampler { base: &base, deform: &deform, bounds };
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..200 {
        let p = Vec3::new(
            rng.gen_range(bounds.min.x..bounds.max.x),
            rng.gen_range(bounds.min.y..bounds.max.y),
            rng.gen_range(bounds.min.z..bounds.max.z),
        );
        assert_eq!(warped.density(p), base.density(p + d0));
    }
    // Points whose displaced position leaves the canonical bbox are vacuum.
    let outside = Vec3::new(f.bbox.max.x - d0.x + 0.05, 0.0, 0.5);
    assert_eq!(warped.density(outside), 0.0);
}

#[test]
fn runaway_displacement_leaves_only_background() {
    let f = textured_field(34);
    let base = FieldSampler { field: &f, shift: 0.0 };
    let deform = constant_displacement(Vec3::new(100.0, 0.0, 0.0));
    let warped = DeformedSampler { base: &base, deform: &deform, bounds: f.bbox };
    let cfg = RenderConfig { background: [0.2, 0.4, 0.6], ..Default::default() };
    let ray = Ray { origin: Vec3::new(0.0, 0.0, 3.0), dir: Vec3::new(0.0, 0.0, -1.0) };
    let (c, t_end) = render_ray(&warped, &ray, &cfg);
    assert_eq!(t_end, 1.0);
    assert_eq!(c, [0.2, 0.4, 0.6]);
}

#[test]
fn plane_fit_collapses_to_near_zero_displacement() {
    let pairs = analytic_correspondences(SurfaceKind::Plane, (1.6, 1.6), (8, 8)).unwrap();
    let cfg = FitConfig { epochs: 800, ..Default::default() };
    let (field, report) = fit_deformation(&pairs, &cfg).unwrap();
    assert!(report.converged, "final loss {}", report.final_loss);
    assert_eq!(report.loss_curve.len(), cfg.epochs + 1);
    for (d, _) in &pairs {
        assert!(field.displacement(*d).length() < 0.02);
    }
}

#[test]
fn sphere_fit_learns_most_of_the_wrap_and_renders() {
    let pairs = analytic_correspondences(SurfaceKind::Sphere { radius: 2.0 }, (1.5, 1.5), (10, 10))
        .unwrap();
    let cfg = FitConfig { epochs: 1500, ..Default::default() };
    let (field, report) = fit_deformation(&pairs, &cfg).unwrap();
    assert!(
        report.final_loss < report.loss_curve[0] / 10.0,
        "loss went {} -> {}",
        report.loss_curve[0],
        report.final_loss
    );
    // Displacements point the right way: fitted and analytic displacement
    // agree within half the analytic magnitude on average.
    let mut err = 0.0f64;
    let mut mag = 0.0f64;
    for (d, c) in &pairs {
        let want = *c - *d;
        err += (field.displacement(*d) - want).length();
        mag += want.length();
    }
    assert!(err < 0.5 * mag, "mean displacement error {} of {}", err, mag);

    let f = textured_field(35);
    let base = FieldSampler { field: &f, shift: 0.0 };
    let warped = DeformedSampler { base: &base, deform: &field, bounds: f.bbox };
    let cam = Camera::look_at(
        Vec3::new(0.0, -2.0, 2.0),
        f.bbox.center(),
        Vec3::new(0.0, 0.0, 1.0),
        16.0,
        12,
        10,
    );
    let img = render_image(&warped, &cam, &RenderConfig::default());
    assert!(img.rgb.iter().all(|v| v.is_finite()));
    let again = render_image(&warped, &cam, &RenderConfig::default());
    assert_eq!(img.rgb, again.rgb);
}
