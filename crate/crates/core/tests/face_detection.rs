use std::collections::BTreeMap;
use std::path::PathBuf;

use authnet::preprocess::{FaceBox, FaceDetector, HaarDetector, HaarParams};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/faces")
}

fn load(name: &str) -> image::RgbImage {
    image::open(fixtures().join(name)).unwrap().to_rgb8()
}

fn boxes_from_json(value: &serde_json::Value) -> Vec<FaceBox> {
    value
        .as_array()
        .unwrap()
        .iter()
        .map(|b| {
            let v: Vec<f64> = b.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
            FaceBox {
                x: v[0].round() as u32,
                y: v[1].round() as u32,
                width: v[2].round() as u32,
                height: v[3].round() as u32,
                neighbors: 0,
            }
        })
        .collect()
}

fn annotations() -> BTreeMap<String, Vec<FaceBox>> {
    let text = std::fs::read_to_string(fixtures().join("annotations.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json.as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.clone(), boxes_from_json(v)))
        .collect()
}

fn detector() -> HaarDetector {
    HaarDetector::frontal_face(HaarParams::default())
}

#[test]
fn frontal_faces_overlap_hand_annotations() {
    let det = detector();
    let ann = annotations();
    for name in ["face_01.png", "face_02.png", "face_03.png", "face_04.png", "face_05.png"] {
        let img = load(name);
        let found = det.detect_face(&img).unwrap_or_else(|| panic!("no face in {name}"));
        assert!(found.x + found.width <= img.width() && found.y + found.height <= img.height());
        let iou = found.iou(&ann[name][0]);
        assert!(iou >= 0.5, "{name}: IoU {iou:.3} with annotation, found {found:?}");
    }
}

#[test]
fn uniform_black_image_has_no_face() {
    assert_eq!(detector().detect_face(&load("black.png")), None);
}

#[test]
fn two_faces_yield_the_largest() {
    let ann = annotations();
    let found = detector().detect_face(&load("two_faces.png")).unwrap();
    let [big, small] = [ann["two_faces.png"][0], ann["two_faces.png"][1]];
    assert!(big.area() > small.area());
    assert!(found.iou(&big) >= 0.5, "{found:?}");
    assert!(found.iou(&small) < 0.1);
}

/// Boxes from OpenCV's own `detectMultiScale(gray, 1.1, 3)` on the same fixtures.
#[test]
fn agrees_with_opencv_reference() {
    let text = std::fs::read_to_string(fixtures().join("opencv_reference.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    let det = detector();
    for (name, expected) in json["boxes"].as_object().unwrap() {
        let expected = boxes_from_json(expected);
        let found = det.detect_all(&load(name));
        assert_eq!(found.len(), expected.len(), "{name}: {found:?} vs {expected:?}");
        for e in &expected {
            let best = found.iter().map(|f| f.iou(e)).fold(0.0, f64::max);
            assert!(best >= 0.8, "{name}: best IoU {best:.3} for {e:?} among {found:?}");
        }
    }
}
