//! Boosted Haar-feature cascade detector compatible with OpenCV's XML
//! cascade format (`opencv-cascade-classifier`, upright HAAR features).
//!
//! Scanning follows OpenCV's `detectMultiScale`: an image pyramid with a fixed
//! 24×24 window, variance-normalised feature responses, early-exit stages, and
//! neighbour grouping of the raw hits.

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{FaceBox, FaceDetector, PreprocessError};

/// Cascade bundled with the crate (OpenCV `haarcascade_frontalface_default.xml`).
pub const FRONTALFACE_DEFAULT: &str =
    include_str!("../../assets/haarcascade_frontalface_default.xml");

const STAGE_THRESHOLD_EPS: f32 = 1e-5;
const GROUP_EPS: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaarParams {
    pub scale_factor: f64,
    pub min_neighbors: usize,
    /// Smallest face edge, in source pixels.
    pub min_size: u32,
    /// Frames with a longer side are scanned on a downscaled copy.
    /// 0 disables the downscale.
    pub max_side: u32,
}

impl Default for HaarParams {
    fn default() -> Self {
        Self {
            scale_factor: 1.1,
            min_neighbors: 3,
            min_size: 24,
            max_side: 640,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct WeightedRect {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    weight: f32,
}

#[derive(Debug, Clone)]
struct Feature {
    rects: Vec<WeightedRect>,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    left: i32,
    right: i32,
    feature: usize,
    threshold: f32,
}

#[derive(Debug, Clone)]
struct WeakClassifier {
    nodes: Vec<Node>,
    leaves: Vec<f32>,
}

#[derive(Debug, Clone)]
struct Stage {
    threshold: f32,
    classifiers: Vec<WeakClassifier>,
}

#[derive(Debug, Clone)]
pub struct HaarCascade {
    width: u32,
    height: u32,
    stages: Vec<Stage>,
    features: Vec<Feature>,
}

impl HaarCascade {
    pub fn frontal_face() -> Self {
        Self::from_xml(FRONTALFACE_DEFAULT).expect("bundled cascade parses")
    }

    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        let text = std::fs::read_to_string(path).map_err(|e| PreprocessError::io(path, e))?;
        Self::from_xml(&text)
    }

    pub fn from_xml(text: &str) -> Result<Self, PreprocessError> {
        let bad = |m: &str| PreprocessError::Cascade(m.to_string());
        let doc = roxmltree::Document::parse(text).map_err(|e| PreprocessError::Cascade(e.to_string()))?;
        let cascade = doc
            .descendants()
            .find(|n| n.has_tag_name("cascade"))
            .ok_or_else(|| bad("no <cascade> element (old-style cascades are not supported)"))?;

        let text_of = |parent: roxmltree::Node, tag: &str| -> Option<String> {
            parent
                .children()
                .find(|c| c.has_tag_name(tag))
                .and_then(|c| c.text())
                .map(|t| t.trim().to_string())
        };
        fn child<'a, 'i>(parent: roxmltree::Node<'a, 'i>, tag: &str) -> Option<roxmltree::Node<'a, 'i>> {
            parent.children().find(|c| c.has_tag_name(tag))
        }
        fn items<'a, 'i>(parent: roxmltree::Node<'a, 'i>) -> Vec<roxmltree::Node<'a, 'i>> {
            parent.children().filter(|c| c.is_element()).collect()
        }
        let numbers = |s: &str| -> Result<Vec<f64>, PreprocessError> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("non-numeric value in cascade")))
                .collect()
        };

        if text_of(cascade, "stageType").as_deref() != Some("BOOST") {
            return Err(bad("only BOOST cascades are supported"));
        }
        if text_of(cascade, "featureType").as_deref() != Some("HAAR") {
            return Err(bad("only HAAR feature cascades are supported"));
        }
        let width: u32 = text_of(cascade, "width")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing window width"))?;
        let height: u32 = text_of(cascade, "height")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing window height"))?;

        let mut features = Vec::new();
        for f in items(child(cascade, "features").ok_or_else(|| bad("missing <features>"))?) {
            if text_of(f, "tilted").as_deref() == Some("1") {
                return Err(bad("tilted Haar features are not supported"));
            }
            let rects_node = child(f, "rects").ok_or_else(|| bad("feature without <rects>"))?;
            let mut rects = Vec::new();
            for r in items(rects_node) {
                let v = numbers(r.text().unwrap_or_default())?;
                if v.len() != 5 || v[..4].iter().any(|&c| c < 0.0) {
                    return Err(bad("malformed feature rectangle"));
                }
                let rect = WeightedRect {
                    x: v[0] as u32,
                    y: v[1] as u32,
                    w: v[2] as u32,
                    h: v[3] as u32,
                    weight: v[4] as f32,
                };
                if rect.x + rect.w > width || rect.y + rect.h > height {
                    return Err(bad("feature rectangle outside the detection window"));
                }
                rects.push(rect);
            }
            features.push(Feature { rects });
        }

        let mut stages = Vec::new();
        for s in items(child(cascade, "stages").ok_or_else(|| bad("missing <stages>"))?) {
            let threshold: f32 = text_of(s, "stageThreshold")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("stage without threshold"))?;
            let weak = child(s, "weakClassifiers").ok_or_else(|| bad("stage without classifiers"))?;
            let mut classifiers = Vec::new();
            for w in items(weak) {
                let raw_nodes = numbers(&text_of(w, "internalNodes").unwrap_or_default())?;
                let leaves: Vec<f32> = numbers(&text_of(w, "leafValues").unwrap_or_default())?
                    .into_iter()
                    .map(|v| v as f32)
                    .collect();
                if raw_nodes.is_empty() || raw_nodes.len() % 4 != 0 {
                    return Err(bad("malformed internalNodes"));
                }
                let nodes: Vec<Node> = raw_nodes
                    .chunks(4)
                    .map(|c| Node {
                        left: c[0] as i32,
                        right: c[1] as i32,
                        feature: c[2] as usize,
                        threshold: c[3] as f32,
                    })
                    .collect();
                for n in &nodes {
                    if n.feature >= features.len() {
                        return Err(bad("weak classifier references a missing feature"));
                    }
                    for next in [n.left, n.right] {
                        let ok = if next > 0 {
                            (next as usize) < nodes.len()
                        } else {
                            ((-next) as usize) < leaves.len()
                        };
                        if !ok {
                            return Err(bad("weak classifier tree index out of range"));
                        }
                    }
                }
                classifiers.push(WeakClassifier { nodes, leaves });
            }
            stages.push(Stage {
                threshold: threshold - STAGE_THRESHOLD_EPS,
                classifiers,
            });
        }
        if stages.is_empty() {
            return Err(bad("cascade has no stages"));
        }
        Ok(Self {
            width,
            height,
            stages,
            features,
        })
    }

    pub fn window(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Raw window hits across the pyramid, before grouping.
    fn scan(&self, gray: &GrayPlane, params: &HaarParams) -> Vec<Rect> {
        let mut hits = Vec::new();
        let mut factor = 1.0f64;
        let scale = params.scale_factor.max(1.0001);
        loop {
            let win_w = (self.width as f64 * factor).round() as u32;
            let win_h = (self.height as f64 * factor).round() as u32;
            let sw = (gray.width as f64 / factor).round() as u32;
            let sh = (gray.height as f64 / factor).round() as u32;
            if sw <= self.width || sh <= self.height {
                break;
            }
            if win_w >= params.min_size && win_h >= params.min_size {
                let scaled = gray.resize_bilinear(sw, sh);
                let integral = Integral::new(&scaled);
                let step = if factor > 2.0 { 1 } else { 2 };
                let mut y = 0;
                while y < sh - self.height {
                    let mut x = 0;
                    while x < sw - self.width {
                        if self.accepts(&integral, x, y) {
                            hits.push(Rect {
                                x: (x as f64 * factor).round() as i64,
                                y: (y as f64 * factor).round() as i64,
                                w: win_w as i64,
                                h: win_h as i64,
                            });
                        }
                        x += step;
                    }
                    y += step;
                }
            }
            factor *= scale;
        }
        hits
    }

    fn accepts(&self, ii: &Integral, x: u32, y: u32) -> bool {
        // Variance normalisation over the window shrunk by one pixel.
        let (nx, ny, nw, nh) = (x + 1, y + 1, self.width - 2, self.height - 2);
        let area = (nw * nh) as f64;
        let sum = ii.sum(nx, ny, nw, nh) as f64;
        let sqsum = ii.sqsum(nx, ny, nw, nh) as f64;
        let nf = area * sqsum - sum * sum;
        if nf <= 0.0 {
            return false;
        }
        let inv_norm = (1.0 / nf.sqrt()) as f32;
        // Flat windows (standard deviation of 10 grey levels or less) never hold a face.
        if area as f32 * inv_norm >= 0.1 {
            return false;
        }

        for stage in &self.stages {
            let mut total = 0.0f32;
            for weak in &stage.classifiers {
                let mut idx = 0i32;
                loop {
                    let node = &weak.nodes[idx as usize];
                    let value = self.feature_value(ii, node.feature, x, y) * inv_norm;
                    idx = if value < node.threshold { node.left } else { node.right };
                    if idx <= 0 {
                        break;
                    }
                }
                total += weak.leaves[(-idx) as usize];
            }
            if total < stage.threshold {
                return false;
            }
        }
        true
    }

    fn feature_value(&self, ii: &Integral, feature: usize, x: u32, y: u32) -> f32 {
        self.features[feature]
            .rects
            .iter()
            .map(|r| r.weight * ii.sum(x + r.x, y + r.y, r.w, r.h) as f32)
            .sum()
    }
}

/// Detector backed by a Haar cascade.
#[derive(Debug, Clone)]
pub struct HaarDetector {
    cascade: HaarCascade,
    params: HaarParams,
}

impl HaarDetector {
    pub fn new(cascade: HaarCascade, params: HaarParams) -> Self {
        Self { cascade, params }
    }

    pub fn frontal_face(params: HaarParams) -> Self {
        Self::new(HaarCascade::frontal_face(), params)
    }
}

impl FaceDetector for HaarDetector {
    fn detect_all(&self, image: &RgbImage) -> Vec<FaceBox> {
        if image.width() == 0 || image.height() == 0 {
            return Vec::new();
        }
        let mut gray = GrayPlane::from_rgb(image);
        let longest = image.width().max(image.height());
        let mut shrink = 1.0;
        if self.params.max_side > 0 && longest > self.params.max_side {
            shrink = longest as f64 / self.params.max_side as f64;
            let w = ((image.width() as f64 / shrink).round() as u32).max(1);
            let h = ((image.height() as f64 / shrink).round() as u32).max(1);
            gray = gray.resize_bilinear(w, h);
        }
        let mut params = self.params.clone();
        params.min_size = (params.min_size as f64 / shrink).floor() as u32;

        let hits = self.cascade.scan(&gray, &params);
        group_rectangles(&hits, params.min_neighbors, GROUP_EPS)
            .into_iter()
            .filter_map(|(r, neighbors)| {
                let scaled = Rect {
                    x: (r.x as f64 * shrink).round() as i64,
                    y: (r.y as f64 * shrink).round() as i64,
                    w: (r.w as f64 * shrink).round() as i64,
                    h: (r.h as f64 * shrink).round() as i64,
                };
                scaled.clip(image.width(), image.height()).map(|(x, y, width, height)| FaceBox {
                    x,
                    y,
                    width,
                    height,
                    neighbors,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Rect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl Rect {
    fn clip(&self, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
        let x0 = self.x.clamp(0, width as i64);
        let y0 = self.y.clamp(0, height as i64);
        let x1 = (self.x + self.w).clamp(0, width as i64);
        let y1 = (self.y + self.h).clamp(0, height as i64);
        (x1 > x0 && y1 > y0).then(|| (x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32))
    }
}

fn similar(a: &Rect, b: &Rect, eps: f64) -> bool {
    let delta = eps * (a.w.min(b.w) + a.h.min(b.h)) as f64 * 0.5;
    ((a.x - b.x).abs() as f64) <= delta
        && ((a.y - b.y).abs() as f64) <= delta
        && ((a.x + a.w - b.x - b.w).abs() as f64) <= delta
        && ((a.y + a.h - b.y - b.h).abs() as f64) <= delta
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Clusters similar hits, averages each cluster, drops clusters with
/// `min_neighbors` or fewer members and clusters nested in a stronger one.
/// Returns `(rect, cluster size)`.
pub(crate) fn group_rectangles(rects: &[Rect], min_neighbors: usize, eps: f64) -> Vec<(Rect, usize)> {
    if rects.is_empty() {
        return Vec::new();
    }
    let n = rects.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if similar(&rects[i], &rects[j], eps) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[b] = a;
                }
            }
        }
    }

    let mut class_of_root = vec![usize::MAX; n];
    let mut sums: Vec<[i64; 4]> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for (i, r) in rects.iter().enumerate() {
        let root = find(&mut parent, i);
        if class_of_root[root] == usize::MAX {
            class_of_root[root] = sums.len();
            sums.push([0; 4]);
            counts.push(0);
        }
        let c = class_of_root[root];
        sums[c][0] += r.x;
        sums[c][1] += r.y;
        sums[c][2] += r.w;
        sums[c][3] += r.h;
        counts[c] += 1;
    }
    let averaged: Vec<Rect> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| {
            let inv = 1.0 / c as f64;
            Rect {
                x: (s[0] as f64 * inv).round() as i64,
                y: (s[1] as f64 * inv).round() as i64,
                w: (s[2] as f64 * inv).round() as i64,
                h: (s[3] as f64 * inv).round() as i64,
            }
        })
        .collect();

    let mut out = Vec::new();
    for (i, r1) in averaged.iter().enumerate() {
        let n1 = counts[i];
        if n1 <= min_neighbors {
            continue;
        }
        let nested = averaged.iter().enumerate().any(|(j, r2)| {
            let n2 = counts[j];
            if j == i || n2 <= min_neighbors {
                return false;
            }
            let dx = (r2.w as f64 * eps).round() as i64;
            let dy = (r2.h as f64 * eps).round() as i64;
            r1.x >= r2.x - dx
                && r1.y >= r2.y - dy
                && r1.x + r1.w <= r2.x + r2.w + dx
                && r1.y + r1.h <= r2.y + r2.h + dy
                && (n2 > n1.max(3) || n1 < 3)
        });
        if !nested {
            out.push((*r1, n1));
        }
    }
    out
}

/// 8-bit luminance plane.
#[derive(Debug, Clone)]
pub(crate) struct GrayPlane {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl GrayPlane {
    /// ITU-R BT.601 luma in the same fixed-point form OpenCV uses.
    pub fn from_rgb(image: &RgbImage) -> Self {
        let data = image
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                ((r as u32 * 4899 + g as u32 * 9617 + b as u32 * 1868 + 8192) >> 14) as u8
            })
            .collect();
        Self {
            width: image.width(),
            height: image.height(),
            data,
        }
    }

    /// Pixel-centre aligned bilinear resampling.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let axis = |dst: u32, scale: f64, len: u32| -> Vec<(usize, usize, f64)> {
            (0..dst)
                .map(|d| {
                    let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
                    let i0 = (s.floor() as usize).min(len as usize - 1);
                    let i1 = (i0 + 1).min(len as usize - 1);
                    (i0, i1, s - i0 as f64)
                })
                .collect()
        };
        let xs = axis(width, sx, self.width);
        let ys = axis(height, sy, self.height);
        let stride = self.width as usize;
        let mut data = Vec::with_capacity((width * height) as usize);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let p = |x: usize, y: usize| self.data[y * stride + x] as f64;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                data.push((top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }
}

struct Integral {
    stride: usize,
    sum: Vec<i64>,
    sqsum: Vec<i64>,
}

impl Integral {
    fn new(plane: &GrayPlane) -> Self {
        let w = plane.width as usize;
        let h = plane.height as usize;
        let stride = w + 1;
        let mut sum = vec![0i64; stride * (h + 1)];
        let mut sqsum = vec![0i64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0i64;
            let mut row_sq = 0i64;
            for x in 0..w {
                let v = plane.data[y * w + x] as i64;
                row += v;
                row_sq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
                sqsum[(y + 1) * stride + x + 1] = sqsum[y * stride + x + 1] + row_sq;
            }
        }
        Self { stride, sum, sqsum }
    }

    #[inline]
    fn rect(table: &[i64], stride: usize, x: u32, y: u32, w: u32, h: u32) -> i64 {
        let (x0, y0) = (x as usize, y as usize);
        let (x1, y1) = (x0 + w as usize, y0 + h as usize);
        table[y1 * stride + x1] - table[y0 * stride + x1] - table[y1 * stride + x0]
            + table[y0 * stride + x0]
    }

    fn sum(&self, x: u32, y: u32, w: u32, h: u32) -> i64 {
        Self::rect(&self.sum, self.stride, x, y, w, h)
    }

    fn sqsum(&self, x: u32, y: u32, w: u32, h: u32) -> i64 {
        Self::rect(&self.sqsum, self.stride, x, y, w, h)
    }
}
