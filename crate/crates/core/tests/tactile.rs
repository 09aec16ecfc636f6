use bidemo_core::geometry::{project, Pixel};
use bidemo_core::imaging::Canvas;
use bidemo_core::synth::sensor::{
    gen_deformation, render_tactile_image, DeformationParams, RenderConfig, SensorCamera,
    SensorDesign, TactileRender,
};
use bidemo_core::tactile::*;

fn render(a: [f64; 2], cam: &SensorCamera, cfg: &RenderConfig) -> (TactileRender, [Vec<bidemo_core::geometry::Point3>; 2]) {
    let d = SensorDesign::default();
    let edges = gen_deformation(&d, &DeformationParams::quadratic(a[0], a[1]));
    (render_tactile_image(&edges, &d, cam, cfg).unwrap(), edges)
}

fn recon(r: &TactileRender, cam: &SensorCamera) -> Result<FrameReconstruction, TactileError> {
    let geom = SensorDesign::default().geometry();
    reconstruct_frame(&r.image, &geom, &cam.k, &ReconConfig::default(), "test", 0.0)
}

#[test]
fn binarize_covers_rendered_structures() {
    let d = SensorDesign::default();
    let cam = SensorCamera::nominal();
    let edges = gen_deformation(&d, &DeformationParams::quadratic(0.004, 0.008));
    let r = render_tactile_image(&edges, &d, &cam, &RenderConfig::default()).unwrap();
    // Ground truth: pixels at least half covered by the same geometry.
    let mut canvas = Canvas::new(640, 480);
    for t in &r.trapezoids {
        canvas.fill_polygon(t);
    }
    for e in &r.edge_pixels {
        canvas.stroke_polyline(e, 3.0);
    }
    let mask = binarize(&r.image, BinarizeMethod::Otsu);
    let (mut truth, mut hit, mut false_pos, mut negatives) = (0, 0, 0, 0);
    for y in 0..480 {
        for x in 0..640 {
            let t = canvas.coverage(x, y) >= 0.5;
            let m = mask.get(i64::from(x), i64::from(y));
            if t {
                truth += 1;
                hit += usize::from(m);
            } else {
                negatives += 1;
                false_pos += usize::from(m);
            }
        }
    }
    assert!(hit as f64 >= 0.95 * truth as f64, "{hit}/{truth}");
    assert!(false_pos as f64 <= 0.02 * negatives as f64);
}

#[test]
fn extracted_edges_follow_projected_curves() {
    let cam = SensorCamera::nominal();
    let (r, _) = render([0.006, 0.002], &cam, &RenderConfig::default());
    let obs = extract_edges(&binarize(&r.image, BinarizeMethod::Otsu)).unwrap();
    assert_eq!(obs.len(), 2);
    for o in &obs {
        let truth = &r.edge_pixels[o.side.index()];
        for p in &o.pixels {
            let d = truth
                .windows(2)
                .map(|s| bidemo_core::imaging::segment_distance(s[0], s[1], *p))
                .fold(f64::MAX, f64::min);
            assert!(d <= 1.0, "{p:?} is {d} px off");
        }
    }
}

#[test]
fn occluded_right_face_gives_partial_result() {
    let cam = SensorCamera::nominal();
    let (mut r, _) = render([0.0, 0.0], &cam, &RenderConfig::default());
    for y in 160..480 {
        for x in 330..640 {
            r.image.put_pixel(x, y, image::Luma([25]));
        }
    }
    match extract_edges(&binarize(&r.image, BinarizeMethod::Otsu)) {
        Err(TactileError::OneEdgeOnly(o)) => assert_eq!(o.side, Face::Left),
        other => panic!("{other:?}"),
    }
}

#[test]
fn noisy_trapezoid_vertices_within_one_pixel() {
    let cam = SensorCamera::nominal();
    let cfg = RenderConfig {
        noise_sigma: 8.0,
        seed: 11,
        ..RenderConfig::default()
    };
    let (r, _) = render([0.0, 0.0], &cam, &cfg);
    let mask = binarize(&r.image, BinarizeMethod::Otsu);
    let parts = split_components(&mask);
    let traps = find_trapezoids(&parts, &r.image).unwrap();
    for (fit, truth) in traps.iter().zip(&r.trapezoids) {
        for (a, b) in fit.iter().zip(truth) {
            assert!(a.distance(b) <= 1.0, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn exact_corners_give_exact_extrinsics() {
    let cam = SensorCamera::nominal();
    let geom = SensorDesign::default().geometry();
    let px: Vec<Pixel> = geom
        .cad_corners
        .iter()
        .map(|p| project(&cam.extrinsics.transform_point(p), &cam.k).unwrap())
        .collect();
    let sol = calibrate_extrinsics(&[px[0], px[1], px[2], px[3]], &geom, &cam.k).unwrap();
    assert!(sol.rms < 1e-6);
    assert!(sol.pose.distance(&cam.extrinsics) < 1e-8);
}

#[test]
fn permuted_corners_are_rejected() {
    let cam = SensorCamera::nominal();
    let (r, _) = render([0.0, 0.0], &cam, &RenderConfig::default());
    let c = r.corner_pixels;
    let geom = SensorDesign::default().geometry();
    let err = calibrate_extrinsics(&[c[2], c[0], c[3], c[1]], &geom, &cam.k).unwrap_err();
    assert!(matches!(err, TactileError::HighResidual(_)), "{err:?}");
}

#[test]
fn rendered_extrinsics_recovered() {
    let cam = SensorCamera::perturbed(5, 0.03, 4.0, 0.001, 0.02);
    let (r, _) = render([0.003, 0.007], &cam, &RenderConfig::default());
    let out = recon(&r, &cam).unwrap();
    let dr = out.extrinsics.rotation().angle_to(cam.extrinsics.rotation()).to_degrees();
    let dt = (out.extrinsics.translation() - cam.extrinsics.translation()).norm();
    assert!(dr <= 0.2 && dt <= 0.0005, "{dr} deg, {dt} m");
    assert!(out.corner_rms <= 1.0);
}

#[test]
fn undeformed_reconstruction_matches_rest_edges() {
    let cam = SensorCamera::nominal();
    let (r, edges) = render([0.0, 0.0], &cam, &RenderConfig::default());
    let out = recon(&r, &cam).unwrap();
    let pts = out.cloud.points_f64();
    let rms = rms_to_curves(&pts, &edges);
    assert!(rms <= 0.0005, "{rms}");
    assert_eq!(out.dropped, 0);
    assert_eq!(pts.len(), 256);
}

#[test]
fn bent_reconstruction_within_a_millimeter() {
    let cam = SensorCamera::nominal();
    let (r, edges) = render([0.010, 0.010], &cam, &RenderConfig::default());
    let out = recon(&r, &cam).unwrap();
    let rms = rms_to_curves(&out.cloud.points_f64(), &edges);
    assert!(rms <= 0.001, "{rms}");
    let geom = SensorDesign::default().geometry();
    for face in Face::BOTH {
        for p in &out.edges[face.index()] {
            assert!(geom.edge_planes[face.index()].signed_distance(p).abs() <= 1e-6);
        }
    }
}

#[test]
fn reprojection_consistency() {
    let cam = SensorCamera::nominal();
    let (r, _) = render([0.005, 0.0], &cam, &RenderConfig::default());
    let geom = SensorDesign::default().geometry();
    let out = recon(&r, &cam).unwrap();
    let obs = extract_edges(&binarize(&r.image, BinarizeMethod::Otsu)).unwrap();
    for o in &obs {
        let fine = refine_edge(&r.image, o, 25.0, 4, 2);
        let lifted = reconstruct_edge(&fine, &geom, &out.extrinsics, &cam.k).unwrap();
        for (p, px) in lifted.points.iter().zip(&fine.pixels) {
            let back = project(&out.extrinsics.transform_point(p), &cam.k).unwrap();
            assert!(back.distance(px) <= 1.0);
        }
    }
}

#[test]
fn black_image_has_no_edges() {
    let geom = SensorDesign::default().geometry();
    let img = image::GrayImage::new(640, 480);
    let err = reconstruct_frame(&img, &geom, &SensorCamera::nominal().k, &ReconConfig::default(), "s", 0.0)
        .unwrap_err();
    assert_eq!(err.root(), &TactileError::NoEdges);
}

#[test]
fn perturbed_sensors_agree() {
    let a = SensorCamera::perturbed(1, 0.03, 4.0, 0.001, 0.02);
    let b = SensorCamera::perturbed(2, 0.03, 4.0, 0.001, 0.02);
    let (ra, _) = render([0.008, 0.003], &a, &RenderConfig::default());
    let (rb, _) = render([0.008, 0.003], &b, &RenderConfig::default());
    let ca = recon(&ra, &a).unwrap().cloud.points_f64();
    let cb = recon(&rb, &b).unwrap().cloud.points_f64();
    let h = hausdorff(&ca, &cb);
    assert!(h <= 0.002, "{h}");
}
