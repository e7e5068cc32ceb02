use std::f64::consts::PI;
use std::path::Path;

use hng_core::data::*;
use hng_core::raster::{load_png, save_png};
use hng_core::render::CameraPose;
use hng_core::rng;

const WHITE: [f64; 3] = [1.0; 3];

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn front_pose() -> CameraPose {
    CameraPose::orbit([0.0, -2.0, 0.0], PI / 3.0, 0.1, 4.0)
}

fn mask(img: &hng_core::raster::Image, bg: [f64; 3]) -> Vec<bool> {
    img.data.chunks(3).map(|p| p != bg).collect()
}

#[test]
fn zero_radius_sphere_is_pure_background() {
    let scene = SceneSpec::sphere(0.0, [0.1, 0.2, 0.3], WHITE);
    let img = oracle_render(&scene, &front_pose(), 16).unwrap();
    assert!(img.data.iter().all(|&v| v == 1.0));
}

#[test]
fn centered_sphere_gives_symmetric_centered_disc() {
    let s = 32;
    let scene = SceneSpec::sphere(0.5, [0.9, 0.1, 0.1], WHITE);
    let m = mask(&oracle_render(&scene, &front_pose(), s).unwrap(), WHITE);
    for y in 0..s {
        for x in 0..s {
            assert_eq!(
                m[y * s + x],
                m[y * s + (s - 1 - x)],
                "left-right at ({x},{y})"
            );
            assert_eq!(
                m[y * s + x],
                m[(s - 1 - y) * s + x],
                "top-bottom at ({x},{y})"
            );
        }
    }
    assert!(m[(s / 2) * s + s / 2]);
    assert!(!m[0]);
}

#[test]
fn projected_radius_matches_pinhole_model() {
    let s = 64;
    let scene = SceneSpec::sphere(0.5, [0.9, 0.1, 0.1], WHITE);
    let m = mask(&oracle_render(&scene, &front_pose(), s).unwrap(), WHITE);
    let angular = (0.5f64 / 2.0).asin();
    let expected = angular.tan() / (PI / 6.0).tan() * s as f64 / 2.0;
    let count = m.iter().filter(|&&v| v).count() as f64;
    let from_area = (count / PI).sqrt();
    assert!(
        (from_area - expected).abs() < 1.0,
        "{from_area} vs {expected}"
    );
    let row = &m[(s / 2) * s..(s / 2 + 1) * s];
    let half_width = row.iter().filter(|&&v| v).count() as f64 / 2.0;
    assert!(
        (half_width - expected).abs() < 1.0,
        "{half_width} vs {expected}"
    );
}

#[test]
fn single_item_dataset() {
    let template = SceneSpec::sphere(0.5, [0.8, 0.3, 0.2], WHITE);
    let ds = make_dataset(
        1,
        &template,
        &PoseDistribution::default(),
        &Randomize::default(),
        8,
        0,
    )
    .unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.items[0].image.width, 8);
    assert!(make_dataset(
        0,
        &template,
        &PoseDistribution::default(),
        &Randomize::default(),
        8,
        0
    )
    .is_err());
}

#[test]
fn datasets_are_reproducible_under_seed() {
    let template = SceneSpec::sphere(0.5, [0.8, 0.3, 0.2], WHITE);
    let build = |seed| {
        make_dataset(
            12,
            &template,
            &PoseDistribution::default(),
            &Randomize::default(),
            12,
            seed,
        )
        .unwrap()
    };
    let (a, b, c) = (build(3), build(3), build(4));
    assert_eq!(a.images(), b.images());
    assert_ne!(a.images(), c.images());
}

#[test]
fn randomized_colors_average_to_midrange() {
    let template = SceneSpec::sphere(0.5, [0.0; 3], WHITE);
    let rand = Randomize {
        color: Some([0.2, 0.8]),
        size: Some([0.3, 0.7]),
    };
    let ds = make_dataset(1000, &template, &PoseDistribution::default(), &rand, 16, 7).unwrap();
    let (mut sum, mut n) = ([0.0; 3], 0usize);
    for item in &ds.items {
        let albedo = item.scene.unwrap().albedo;
        for p in item.image.data.chunks(3) {
            if p == albedo {
                (0..3).for_each(|c| sum[c] += p[c]);
                n += 1;
            }
        }
    }
    for s in sum {
        let mean = s / n as f64;
        assert!((mean - 0.5).abs() < 0.05, "foreground mean {mean}");
    }
}

#[test]
fn silhouettes_cover_part_of_every_image() {
    let template = SceneSpec::sphere(0.5, [0.0; 3], WHITE);
    let ds = make_dataset(
        50,
        &template,
        &PoseDistribution::default(),
        &Randomize::default(),
        16,
        2,
    )
    .unwrap();
    for item in &ds.items {
        let m = mask(&item.image, WHITE);
        let frac = m.iter().filter(|&&v| v).count() as f64 / m.len() as f64;
        assert!(frac > 0.0 && frac < 1.0, "{frac}");
    }
}

#[test]
fn single_axis_poses_keep_constant_elevation() {
    let dist = PoseDistribution::single_axis();
    let mut r = rng::stream(1, 0, 0);
    for _ in 0..200 {
        let p = sample_pose(&dist, &mut r);
        assert_eq!(p.position[2].abs(), 0.0);
        let rho = (p.position[0].powi(2) + p.position[1].powi(2)).sqrt();
        assert!((rho - dist.radius).abs() < 1e-12);
    }
}

#[test]
fn flat_sector_degenerates_to_a_ring() {
    let dist = PoseDistribution {
        elevation: [0.0, 0.0],
        ..PoseDistribution::default()
    };
    let mut r = rng::stream(2, 0, 0);
    let mut azimuths = Vec::new();
    for _ in 0..100 {
        let p = sample_pose(&dist, &mut r);
        assert_eq!(p.position[2], 0.0);
        azimuths.push(p.position[1].atan2(p.position[0]));
    }
    let spread = azimuths.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - azimuths.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread > PI, "azimuths should cover the circle");
}

#[test]
fn sector_elevations_stay_in_range() {
    let dist = PoseDistribution::default();
    let mut r = rng::stream(3, 0, 0);
    for _ in 0..500 {
        let p = sample_pose(&dist, &mut r);
        let el = (p.position[2] / dist.radius).asin();
        assert!(el >= dist.elevation[0] - 1e-12 && el <= dist.elevation[1] + 1e-12);
    }
}

#[test]
fn single_axis_azimuths_are_uniform_over_72_positions() {
    let dist = PoseDistribution::single_axis();
    assert_eq!(dist.axis_positions(), 72);
    let n = 10_000;
    let mut bins = [0usize; 72];
    let mut r = rng::stream(4, 0, 0);
    for _ in 0..n {
        let p = sample_pose(&dist, &mut r);
        let deg = p.position[1]
            .atan2(p.position[0])
            .to_degrees()
            .rem_euclid(360.0);
        let bin = (deg / 5.0).round() as usize % 72;
        assert!((deg - bin as f64 * 5.0).abs() < 1e-9 || (deg - 360.0).abs() < 1e-9);
        bins[bin] += 1;
    }
    let p = 1.0 / 72.0;
    let expected = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in bins.iter().enumerate() {
        assert!((c as f64 - expected).abs() <= 3.0 * sigma, "bin {i}: {c}");
    }
}

#[test]
fn solid_png_fixture_decodes_to_constant() {
    let img = load_png(&fixture("solid_2x2.png")).unwrap();
    assert_eq!((img.width, img.height), (2, 2));
    for p in img.data.chunks(3) {
        assert_eq!(p, [51.0 / 255.0, 102.0 / 255.0, 204.0 / 255.0]);
    }
    let gray = load_png(&fixture("gray_2x2.png")).unwrap();
    assert!(gray.data.iter().all(|&v| v == 153.0 / 255.0));
}

#[test]
fn missing_png_is_an_io_error() {
    match load_png(Path::new("/no/such/dir/x.png")) {
        Err(hng_core::Error::Io { path, .. }) => assert!(path.ends_with("x.png")),
        other => panic!("expected I/O error, got {other:?}"),
    }
}

#[test]
fn png_dir_loads_in_name_order() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture("solid_2x2.png"), dir.path().join("b.png")).unwrap();
    std::fs::copy(fixture("gray_2x2.png"), dir.path().join("a.png")).unwrap();
    let ds = load_png_dir(dir.path(), WHITE).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.provenance, Provenance::PngDir);
    assert_eq!(ds.items[0].image.data[0], 153.0 / 255.0);
}

// 90° turns permute coordinates with sign flips, so the rotated scene and
// camera are exact images of the originals
fn rot_z(v: [f64; 3]) -> [f64; 3] {
    [-v[1], v[0], v[2]]
}

fn rot_x(v: [f64; 3]) -> [f64; 3] {
    [v[0], -v[2], v[1]]
}

#[test]
fn rotating_scene_and_camera_together_leaves_image_unchanged() {
    let scene = SceneSpec {
        primitive: Primitive::TwoSphere,
        center: [0.1, -0.2, 0.05],
        size: 0.6,
        albedo: [0.2, 0.7, 0.4],
        background: WHITE,
        axis: [1.0, 0.0, 0.0],
    };
    let pose = CameraPose::orbit([0.7, -1.9, 0.6], PI / 3.0, 0.2, 4.0);
    let base = oracle_render(&scene, &pose, 32).unwrap();
    let m = mask(&base, WHITE);
    assert!(m.iter().any(|&v| v) && m.iter().any(|&v| !v));
    for rot in [rot_z as fn([f64; 3]) -> [f64; 3], rot_x] {
        let mut s2 = scene;
        s2.center = rot(scene.center);
        s2.axis = rot(scene.axis);
        let p2 = CameraPose {
            position: rot(pose.position),
            look_at: rot(pose.look_at),
            up: rot(pose.up),
            ..pose
        };
        let img = oracle_render(&s2, &p2, 32).unwrap();
        let differing = img
            .data
            .iter()
            .zip(&base.data)
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(differing, 0);
    }
}

#[test]
fn box_and_two_sphere_scenes_render() {
    for primitive in [Primitive::Box, Primitive::TwoSphere] {
        let scene = SceneSpec {
            primitive,
            ..SceneSpec::sphere(0.4, [0.3, 0.3, 0.9], WHITE)
        };
        let m = mask(&oracle_render(&scene, &front_pose(), 16).unwrap(), WHITE);
        assert!(m.iter().any(|&v| v), "{primitive:?}");
    }
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let template = SceneSpec::sphere(0.5, [0.8, 0.3, 0.2], WHITE);
    let poses = PoseDistribution::default();
    let ds = make_dataset(4, &template, &poses, &Randomize::default(), 8, 1).unwrap();
    let manifest = write_dataset(&ds, Some(&poses), &dir.path().join("set")).unwrap();
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m.images.len(), 4);
    assert_eq!((m.width, m.height), (8, 8));
    assert_eq!(m.poses, Some(poses));
    let back = load_dataset(&dir.path().join("set")).unwrap();
    assert_eq!(back.len(), 4);
    for (a, b) in ds.items.iter().zip(&back.items) {
        assert_eq!(a.scene, b.scene);
        for (x, y) in a.image.data.iter().zip(&b.image.data) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn saved_png_round_trips_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.png");
    let template = SceneSpec::sphere(0.5, [0.8, 0.3, 0.2], WHITE);
    let ds = make_dataset(
        1,
        &template,
        &PoseDistribution::default(),
        &Randomize::default(),
        8,
        9,
    )
    .unwrap();
    save_png(&ds.items[0].image, &path).unwrap();
    let back = load_png(&path).unwrap();
    let worst = back
        .data
        .iter()
        .zip(&ds.items[0].image.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1.0 / 255.0);
}

#[test]
fn pose_validation_names_keys() {
    let bad = PoseDistribution {
        radius: 1.0,
        ..PoseDistribution::default()
    };
    match bad.validate("poses") {
        Err(hng_core::Error::Config { key, .. }) => assert_eq!(key, "poses.radius"),
        other => panic!("{other:?}"),
    }
}
