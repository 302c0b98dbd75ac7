use roadfuse::dt::{run_dt_pipeline, CoarseMask};
use roadfuse::features::{
    elevation_map, fit_ground_plane, hha_raw, normal_image, transformed_disparity, DerivedFeature, ELEVATION_CV_OFFSET,
};
use roadfuse::io::{CameraModel, DisparityImage, LABEL_ANOMALY, LABEL_DRIVABLE};
use roadfuse::metrics::coeff_variation;
use roadfuse::synth::{generate, random_specs, Anomaly, Rect, Scene, SceneSpec};

fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

fn normal_at(f: &DerivedFeature, i: usize) -> [f64; 3] {
    let px = &f.map.data()[i * 3..i * 3 + 3];
    [px[0], px[1], px[2]]
}

/// Normal of the camera-frame plane whose disparity follows the road
/// profile, oriented toward the camera.
fn analytic_road_normal(spec: &SceneSpec, cam: &CameraModel) -> [f64; 3] {
    let (s, c) = spec.theta.sin_cos();
    let n = [
        -spec.a1 * cam.fx * s,
        spec.a1 * cam.fy * c,
        spec.a0 + spec.a1 * (cam.v0 * c - cam.u0 * s),
    ];
    if n[2] > 0.0 {
        [-n[0], -n[1], -n[2]]
    } else {
        n
    }
}

fn rolled_scene_with_box() -> Scene {
    let mut spec = SceneSpec::planar(96, 64, 4.0, 0.5, 4f64.to_radians());
    spec.anomalies.push(Anomaly {
        rect: Rect { x: 40, y: 36, w: 16, h: 10 },
        delta: 10.0,
    });
    generate(&spec).unwrap()
}

/// Pixels labelled `class` whose 4-neighbours all carry the same label.
fn interior(scene: &Scene, class: u8) -> Vec<usize> {
    let (w, h) = (scene.labels.width(), scene.labels.height());
    let mut out = Vec::new();
    for v in 1..h - 1 {
        for u in 1..w - 1 {
            let same = [(u, v), (u - 1, v), (u + 1, v), (u, v - 1), (u, v + 1)]
                .iter()
                .all(|&(x, y)| scene.labels.get(x, y) == class);
            if same {
                out.push(v * w + u);
            }
        }
    }
    out
}

fn label_mask(scene: &Scene, class: u8) -> CoarseMask {
    CoarseMask {
        width: scene.labels.width(),
        height: scene.labels.height(),
        mask: scene.labels.labels().iter().map(|&l| l == class).collect(),
    }
}

#[test]
fn road_normals_match_the_analytic_plane() {
    let scene = rolled_scene_with_box();
    let normals = normal_image(&scene.disparity, &scene.camera);
    let want = analytic_road_normal(&scene.spec, &scene.camera);
    let road = interior(&scene, LABEL_DRIVABLE);
    assert!(road.len() > 3000);
    for &i in &road {
        if normals.valid[i] {
            let n = normal_at(&normals, i);
            assert!(angle_deg(n, want) < 0.25, "pixel {i}: {n:?} vs {want:?}");
            assert!(n[2] < 0.0);
        }
    }
}

#[test]
fn anomaly_edges_tilt_normals() {
    let scene = rolled_scene_with_box();
    let normals = normal_image(&scene.disparity, &scene.camera);
    let road = analytic_road_normal(&scene.spec, &scene.camera);
    let w = scene.labels.width();
    let rect = scene.spec.anomalies[0].rect;
    let mut checked = 0;
    for u in rect.x + 1..rect.x + rect.w - 1 {
        for v in [rect.y, rect.y + rect.h - 1] {
            let i = v * w + u;
            assert!(normals.valid[i]);
            assert!(angle_deg(normal_at(&normals, i), road) > 10.0);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn scaling_disparity_keeps_normal_directions() {
    let spec = &random_specs(1, 21, 96, 64, 0.25)[0];
    let scene = generate(spec).unwrap();
    let d = &scene.disparity;
    let doubled = DisparityImage::new(d.width(), d.height(), d.data().iter().map(|x| 2.0 * x).collect(), d.valid_mask().to_vec())
        .unwrap();
    let a = normal_image(d, &scene.camera);
    let b = normal_image(&doubled, &scene.camera);
    assert_eq!(a.valid, b.valid);
    assert!(a.map.max_abs_diff(&b.map) < 1e-6);
}

#[test]
fn elevation_is_flat_on_road_and_positive_on_raised_box() {
    let scene = rolled_scene_with_box();
    let mask = label_mask(&scene, LABEL_DRIVABLE);
    let elev = elevation_map(&scene.disparity, &scene.camera, &mask).unwrap();
    let road = elev.channel_values(0, |i| mask.mask[i]);
    assert!(road.iter().all(|e| e.abs() < 1e-6));
    assert!((road.iter().sum::<f64>() / road.len() as f64).abs() < 1e-9);
    let boxed = interior(&scene, LABEL_ANOMALY);
    assert!(!boxed.is_empty());
    for i in boxed {
        assert!(elev.map.data()[i] > 0.0);
    }
}

#[test]
fn upright_face_is_perpendicular_to_ground() {
    let (a0, a1) = (2.0, 0.5);
    let cam = CameraModel::new(100.0, 100.0, 48.0, -a0 / a1, 0.5).unwrap();
    let face = Rect { x: 30, y: 20, w: 30, h: 20 };
    let face_d = a0 + a1 * (face.y + face.h) as f64;
    let d = DisparityImage::from_fn(96, 64, |u, v| Some(if face.contains(u, v) { face_d } else { a0 + a1 * v as f64 })).unwrap();
    let mask = CoarseMask {
        width: 96,
        height: 64,
        mask: (0..96 * 64).map(|i| !face.contains(i % 96, i / 96)).collect(),
    };
    let plane = fit_ground_plane(&d, &cam, &mask).unwrap();
    assert!(plane.normal[2].abs() < 1e-9);
    let hha = hha_raw(&d, &cam, &mask).unwrap();
    for v in face.y + 1..face.y + face.h - 1 {
        for u in face.x + 1..face.x + face.w - 1 {
            let i = v * 96 + u;
            assert!((hha.map.data()[i * 3 + 2] - 90.0).abs() < 1e-6);
        }
    }
    let road_px = 60 * 96 + 10;
    assert!(hha.map.data()[road_px * 3 + 2] < 1e-6);
}

struct CvRow {
    tdisp: f64,
    normal: f64,
    elevation: f64,
}

fn cv_row(scene: &Scene) -> CvRow {
    let d = &scene.disparity;
    let cam = &scene.camera;
    let road = |i: usize| scene.labels.labels()[i] == LABEL_DRIVABLE;
    let mask = run_dt_pipeline(d).unwrap().road_mask;
    let t = transformed_disparity(d, cam).unwrap();
    let n = normal_image(d, cam);
    let e = elevation_map(d, cam, &mask).unwrap();
    let shifted: Vec<f64> = e.channel_values(0, road).iter().map(|x| x + ELEVATION_CV_OFFSET).collect();
    CvRow {
        tdisp: coeff_variation(&t.channel_values(0, road)).unwrap(),
        normal: coeff_variation(&n.mean_channel_values(road)).unwrap().abs(),
        elevation: coeff_variation(&shifted).unwrap(),
    }
}

#[test]
fn clean_scenes_are_flat_except_normals_at_anomaly_borders() {
    let mut with_anomalies = 0;
    for spec in random_specs(20, 31, 96, 64, 0.0) {
        let r = cv_row(&generate(&spec).unwrap());
        assert!(r.tdisp < 1e-6, "tdisp {}", r.tdisp);
        assert!(r.elevation < 1e-6, "elevation {}", r.elevation);
        if spec.anomalies.is_empty() {
            assert!(r.normal < 1e-6, "normal {}", r.normal);
        } else {
            with_anomalies += 1;
            assert!(r.tdisp < r.normal, "tdisp {} normal {}", r.tdisp, r.normal);
        }
    }
    assert!(with_anomalies > 0);
}

#[test]
fn transformed_disparity_is_flatter_than_normals_on_noisy_scenes() {
    for spec in random_specs(20, 31, 96, 64, 0.25) {
        let r = cv_row(&generate(&spec).unwrap());
        assert!(r.tdisp < r.normal, "tdisp {} normal {}", r.tdisp, r.normal);
    }
}

#[test]
#[ignore = "fails: with noise, c_v of transformed disparity is about σ/δ (0.1 for δ = 2) while elevation + 1 m stays near 0.05"]
fn transformed_disparity_is_flatter_than_elevation_on_noisy_scenes() {
    for spec in random_specs(20, 31, 96, 64, 0.25) {
        let r = cv_row(&generate(&spec).unwrap());
        assert!(r.tdisp < r.elevation, "tdisp {} elevation {}", r.tdisp, r.elevation);
    }
}
