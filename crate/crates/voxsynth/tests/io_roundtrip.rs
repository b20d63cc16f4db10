//! Full save/load cycles through temp directories for every on-disk format.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxsynth::column::ColumnImage;
use voxsynth::deform::{analytic_correspondences, SurfaceKind};
use voxsynth::field::{Camera, VoxelField};
use voxsynth::io::{
    load_bundle, load_columns, load_correspondences, load_shading_map, read_view_manifest,
    save_bundle, save_columns, save_correspondences, save_shading_map, write_view_manifest,
};
use voxsynth::math::{Aabb, Vec3};
use voxsynth::shading::ShadingMap;
use voxsynth::Error;

fn rand_field(seed: u64) -> VoxelField {
    let bbox = Aabb::new(Vec3::new(-1.0, -0.5, 0.0), Vec3::new(1.0, 1.5, 0.75));
    let mut f = VoxelField::uniform((7, 6, 5), 3, bbox, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in f.density.data.iter_mut() {
        *v = rng.gen_range(-20.0f32..20.0);
    }
    for v in f.features.data.iter_mut() {
        *v = rng.gen_range(-2.0f32..2.0);
    }
    for v in f.head.params.iter_mut() {
        *v = rng.gen_range(-0.5f32..0.5);
    }
    f
}

#[test]
fn field_bundle_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let f = rand_field(41);
    save_bundle(dir.path(), &f, -3.5).unwrap();
    let (back, shift) = load_bundle(dir.path()).unwrap();
    assert_eq!(shift, -3.5);
    assert_eq!(back.density, f.density);
    assert_eq!(back.features, f.features);
    assert_eq!(back.head, f.head);
    assert_eq!(back.bbox.min, f.bbox.min);
    assert_eq!(back.bbox.max, f.bbox.max);
}

#[test]
fn bundle_meta_rejects_unknown_keys_and_short_arrays() {
    let dir = tempfile::tempdir().unwrap();
    let f = rand_field(42);
    save_bundle(dir.path(), &f, 0.0).unwrap();
    let meta = std::fs::read_to_string(dir.path().join("meta")).unwrap();
    std::fs::write(dir.path().join("meta"), format!("{}typo_key = 1\n", meta)).unwrap();
    assert!(matches!(load_bundle(dir.path()), Err(Error::InvalidData(_))));
    std::fs::write(dir.path().join("meta"), meta).unwrap();
    let bin = std::fs::read(dir.path().join("density.bin")).unwrap();
    std::fs::write(dir.path().join("density.bin"), &bin[..bin.len() - 4]).unwrap();
    assert!(matches!(load_bundle(dir.path()), Err(Error::SizeMismatch(_))));
}

#[test]
fn column_bundle_round_trips_through_flatten() {
    let dir = tempfile::tempdir().unwrap();
    let f = rand_field(43);
    let cols = ColumnImage::flatten(&f);
    save_columns(dir.path(), &cols).unwrap();
    let back = load_columns(dir.path()).unwrap();
    assert_eq!(back, cols);
    // Unflattening restores the original grids.
    let rebuilt = back.unflatten(f.bbox, f.head.clone()).unwrap();
    assert_eq!(rebuilt.density, f.density);
    assert_eq!(rebuilt.features, f.features);
}

#[test]
fn shading_map_round_trips_with_validity_and_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut lat = voxsynth::column::ChannelLattice::new(6, 4, 3, 0.0);
    for v in lat.data.iter_mut() {
        *v = rng.gen_range(-1.0f32..1.0);
    }
    let valid: Vec<bool> = (0..6 * 4 * 3).map(|_| rng.gen_bool(0.8)).collect();
    let map = ShadingMap { lat, valid, view_order: vec![9, 2, 5] };
    save_shading_map(dir.path(), &map).unwrap();
    let back = load_shading_map(dir.path()).unwrap();
    assert_eq!(back, map);
}

#[test]
fn correspondences_round_trip_and_skip_comments() {
    let dir = tempfile::tempdir().unwrap();
    let pairs =
        analytic_correspondences(SurfaceKind::Cylinder { radius: 1.0 }, (2.0, 1.0), (7, 5)).unwrap();
    let path = dir.path().join("pairs.txt");
    save_correspondences(&path, &pairs).unwrap();
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.insert_str(0, "# cylinder pairs\n\n");
    std::fs::write(&path, text).unwrap();
    let back = load_correspondences(&path).unwrap();
    assert_eq!(back.len(), pairs.len());
    for ((d, c), (bd, bc)) in pairs.iter().zip(back.iter()) {
        assert_eq!(d, bd);
        assert_eq!(c, bc);
    }
    std::fs::write(&path, "1 2 3 4 5\n").unwrap();
    assert!(matches!(load_correspondences(&path), Err(Error::InvalidData(_))));
}

#[test]
fn view_manifest_round_trips_camera_poses() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("views.txt");
    let target = Vec3::new(0.1, -0.2, 0.5);
    let cams: Vec<Camera> = (0..3)
        .map(|i| {
            Camera::look_at(
                Vec3::new(1.0 + i as f64, -2.0, 2.0 + 0.5 * i as f64),
                target,
                Vec3::new(0.0, 0.0, 1.0),
                32.0,
                16,
                12,
            )
        })
        .collect();
    let rel: Vec<std::path::PathBuf> =
        (0..3).map(|i| std::path::PathBuf::from(format!("v{}.pfm", i))).collect();
    let entries: Vec<(u32, &std::path::Path, &Camera, Vec3)> = cams
        .iter()
        .zip(rel.iter())
        .enumerate()
        .map(|(i, (c, p))| (i as u32 * 2, p.as_path(), c, target))
        .collect();
    write_view_manifest(&path, &entries).unwrap();
    let back = read_view_manifest(&path).unwrap();
    assert_eq!(back.len(), 3);
    for (i, entry) in back.iter().enumerate() {
        assert_eq!(entry.id, i as u32 * 2);
        assert_eq!(entry.image_path, dir.path().join(format!("v{}.pfm", i)));
        let want = &cams[i];
        assert!((entry.camera.pos - want.pos).length() < 1e-12);
        assert_eq!(entry.camera.focal, want.focal);
        assert_eq!((entry.camera.width, entry.camera.height), (want.width, want.height));
        for (a, b) in entry.camera.rot.cols.iter().zip(want.rot.cols.iter()) {
            assert!((*a - *b).length() < 1e-12);
        }
    }
}
