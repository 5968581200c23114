mod common;

use common::random_field;
use nalgebra::Vector3;
use normsplat::io::{self, ply, png, SceneManifest, MANIFEST_FILE};
use normsplat::optimize::psnr;
use normsplat::scene::{generate, Preset, SceneConfig};
use normsplat::{Error, Image, ParamMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_data(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
}

#[test]
fn field_ply_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (k, mode) in ParamMode::ALL.into_iter().enumerate() {
        let field = random_field(40 + k as u64, 37, mode);
        let path = dir.path().join(format!("f{k}.ply"));
        io::save_field(&path, &field).unwrap();
        let back = io::load_field(&path).unwrap();
        assert_eq!(back.param_mode, field.param_mode);
        assert_eq!(back.sh_degree, field.sh_degree);
        let a = field.to_flat();
        let b = back.to_flat();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn degree_zero_field_writes_zero_rest_coefficients() {
    let mut field = random_field(5, 10, ParamMode::Unconstrained);
    field.sh_degree = 0;
    let table = ply::field_to_table(&field);
    for k in 0..9 {
        let col = table.column(&format!("f_rest_{k}")).unwrap();
        assert!(col.iter().all(|v| *v == 0.0));
    }
    let back = ply::field_from_table(&table).unwrap();
    assert!(back.gaussians.iter().all(|g| g.sh[1..].iter().flatten().all(|v| *v == 0.0)));
}

#[test]
fn ply_parser_rejects_garbage() {
    assert!(ply::PlyTable::from_bytes(b"not a ply\n").is_err());
    let field = random_field(1, 4, ParamMode::Isotropic);
    let bytes = ply::field_to_table(&field).to_bytes();
    assert!(ply::PlyTable::from_bytes(&bytes[..bytes.len() - 5]).is_err());
}

#[test]
fn rgb_png_round_trip_is_within_quantization() {
    let img = random_image(9, 23, 17);
    let back = png::decode_rgb(&png::encode_rgb8(&img).unwrap()).unwrap();
    assert_eq!((back.width, back.height), (23, 17));
    assert!(psnr(&img, &back).unwrap() >= 48.0);
}

#[test]
fn normal_png_round_trip_is_within_one_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut img = Image::new(12, 9);
    for j in 0..9 {
        for i in 0..12 {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            img.set(i, j, v.normalize());
        }
    }
    let back = png::decode_normal(&png::encode_normal16(&img).unwrap()).unwrap();
    let err = img.data.iter().zip(&back.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err <= 1.0 / 65535.0 + 1e-12, "{err}");
}

#[test]
fn scene_round_trips_through_disk() {
    let scene = generate(&SceneConfig {
        views: 3,
        resolution: 16,
        points: 50,
        ..SceneConfig::new(Preset::TwoToneSphere)
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = io::save_scene(dir.path(), &scene).unwrap();
    assert_eq!(manifest, dir.path().join(MANIFEST_FILE));
    let back = io::load_scene(&manifest).unwrap();
    assert_eq!(back.id, scene.id);
    assert_eq!(back.points, scene.points);
    assert_eq!(back.normals, scene.normals);
    assert_eq!(back.colors, scene.colors);
    assert_eq!(back.rig, scene.rig);
    for (a, b) in back.gt_rgb.iter().zip(&scene.gt_rgb) {
        assert!(psnr(a, b).unwrap() >= 48.0);
    }
    for (a, b) in back.gt_normal.iter().zip(&scene.gt_normal) {
        for (x, y) in a.data.chunks(3).zip(b.data.chunks(3)) {
            let off = y.iter().all(|v| *v == 0.0);
            assert_eq!(x.iter().all(|v| *v == 0.0), off);
            assert!(x.iter().zip(y).all(|(p, q)| (p - q).abs() <= 1.0 / 65535.0 + 1e-12));
        }
    }
}

#[test]
fn manifest_validation_catches_bad_scenes() {
    let scene = generate(&SceneConfig {
        views: 2,
        resolution: 12,
        points: 30,
        ..SceneConfig::new(Preset::Sphere)
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = io::save_scene(dir.path(), &scene).unwrap();
    let good: SceneManifest = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    let write = |m: &SceneManifest| std::fs::write(&path, serde_json::to_vec(m).unwrap()).unwrap();

    let mut one_view = good.clone();
    one_view.views.truncate(1);
    write(&one_view);
    assert!(matches!(io::read_manifest(&path), Err(Error::TooFewViews { views: 1 })));

    let mut missing = good.clone();
    missing.views[1].rgb = "absent.png".into();
    write(&missing);
    assert!(matches!(io::read_manifest(&path), Err(Error::MissingFile(_))));

    let mut bad_camera = good.clone();
    bad_camera.views[0].camera.fx = f64::NAN;
    let json = serde_json::to_string(&bad_camera).unwrap();
    std::fs::write(&path, json).unwrap();
    assert!(io::read_manifest(&path).is_err());

    write(&good);
    assert!(io::read_manifest(&path).is_ok());
    assert!(matches!(io::read_manifest(&dir.path().join("nope.json")), Err(Error::MissingFile(_))));
}
