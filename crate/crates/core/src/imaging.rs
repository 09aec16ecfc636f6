//! Raster primitives shared by the fiducial detector, the tactile pipeline and
//! the synthetic renderer.

pub use image::GrayImage;

use crate::geometry::Pixel;

/// Binary image. `true` is foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= i64::from(self.width) || y >= i64::from(self.height) {
            return false;
        }
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }
}

/// Result of Otsu's method: pixels strictly above `threshold` are foreground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuThreshold {
    pub threshold: u8,
    pub background_mean: f64,
    pub foreground_mean: f64,
}

pub fn otsu(img: &GrayImage) -> OtsuThreshold {
    let mut hist = [0u64; 256];
    for p in img.as_raw() {
        hist[*p as usize] += 1;
    }
    otsu_from_histogram(&hist)
}

fn otsu_from_histogram(hist: &[u64; 256]) -> OtsuThreshold {
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, c)| i as f64 * *c as f64)
        .sum();
    let mut best = None::<(f64, usize)>;
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    for (t, &count) in hist.iter().enumerate().take(255) {
        w0 += count;
        sum0 += t as f64 * count as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(b, _)| between > b) {
            best = Some((between, t));
        }
    }
    let threshold = match best {
        Some((_, t)) => t,
        // A single grey level: split at mid-scale so black is background and
        // white is foreground.
        None => 127,
    };
    let (mut w0, mut s0, mut w1, mut s1) = (0.0, 0.0, 0.0, 0.0);
    for (i, c) in hist.iter().enumerate() {
        let c = *c as f64;
        if i <= threshold {
            w0 += c;
            s0 += i as f64 * c;
        } else {
            w1 += c;
            s1 += i as f64 * c;
        }
    }
    OtsuThreshold {
        threshold: threshold as u8,
        background_mean: if w0 > 0.0 { s0 / w0 } else { 0.0 },
        foreground_mean: if w1 > 0.0 { s1 / w1 } else { 255.0 },
    }
}

pub fn threshold_above(img: &GrayImage, threshold: u8) -> BitMask {
    BitMask {
        width: img.width(),
        height: img.height(),
        bits: img.as_raw().iter().map(|p| *p > threshold).collect(),
    }
}

/// Marks pixels darker than the mean of their `(2r+1)²` neighbourhood minus
/// `offset`.
pub fn adaptive_threshold_dark(img: &GrayImage, radius: u32, offset: f64) -> BitMask {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let stride = w + 1;
    let mut integral = vec![0u64; stride * (h + 1)];
    let raw = img.as_raw();
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += u64::from(raw[y * w + x]);
            integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
        }
    }
    let r = radius as usize;
    let mut bits = Vec::with_capacity(w * h);
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let sum = integral[y1 * stride + x1] + integral[y0 * stride + x0]
                - integral[y0 * stride + x1]
                - integral[y1 * stride + x0];
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            bits.push(f64::from(raw[y * w + x]) < sum as f64 / n - offset);
        }
    }
    BitMask {
        width: w as u32,
        height: h as u32,
        bits,
    }
}

/// An 8-connected foreground region.
#[derive(Debug, Clone)]
pub struct Component {
    pub label: u32,
    /// Pixel coordinates, in scan order of discovery.
    pub pixels: Vec<(u32, u32)>,
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
}

impl Component {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn bbox_width(&self) -> u32 {
        self.max_x - self.min_x + 1
    }

    pub fn bbox_height(&self) -> u32 {
        self.max_y - self.min_y + 1
    }

    pub fn centroid(&self) -> Pixel {
        let n = self.pixels.len() as f64;
        let (su, sv) = self
            .pixels
            .iter()
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + f64::from(*x), b + f64::from(*y)));
        Pixel::new(su / n, sv / n)
    }

    /// Pixel count over the longer bounding-box side: about the stroke width
    /// for curves, much larger for filled blobs.
    pub fn thickness(&self) -> f64 {
        self.pixels.len() as f64 / f64::from(self.bbox_width().max(self.bbox_height()))
    }
}

/// Labels of every pixel (0 = background) plus the component list.
#[derive(Debug, Clone)]
pub struct Labeling {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
    pub components: Vec<Component>,
}

impl Labeling {
    pub fn label_at(&self, x: i64, y: i64) -> u32 {
        if x < 0 || y < 0 || x >= i64::from(self.width) || y >= i64::from(self.height) {
            return 0;
        }
        self.labels[y as usize * self.width as usize + x as usize]
    }
}

pub fn connected_components(mask: &BitMask) -> Labeling {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut labels = vec![0u32; w * h];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        let label = components.len() as u32 + 1;
        let mut comp = Component {
            label,
            pixels: Vec::new(),
            min_x: u32::MAX,
            min_y: u32::MAX,
            max_x: 0,
            max_y: 0,
        };
        labels[start] = label;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as u32, (i / w) as u32);
            comp.pixels.push((x, y));
            comp.min_x = comp.min_x.min(x);
            comp.min_y = comp.min_y.min(y);
            comp.max_x = comp.max_x.max(x);
            comp.max_y = comp.max_y.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = i64::from(x) + dx;
                    let ny = i64::from(y) + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.bits[j] && labels[j] == 0 {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
            }
        }
        components.push(comp);
    }
    Labeling {
        width: mask.width,
        height: mask.height,
        labels,
        components,
    }
}

/// Traces the outer boundary of component `label` along pixel edges
/// (clockwise in image coordinates). Vertices lie on pixel corners, i.e. at
/// half-integer coordinates.
pub fn trace_outer_contour(labeling: &Labeling, label: u32) -> Vec<Pixel> {
    let Some(comp) = labeling.components.get(label as usize - 1) else {
        return Vec::new();
    };
    let fg = |x: i64, y: i64| labeling.label_at(x, y) == label;
    // Topmost row, leftmost pixel in it.
    let (x0, y0) = comp
        .pixels
        .iter()
        .copied()
        .min_by_key(|(x, y)| (*y, *x))
        .expect("component is non-empty");
    let start = (i64::from(x0), i64::from(y0));
    let start_dir = (1i64, 0i64);
    let mut c = start;
    let mut d = start_dir;
    let mut out = Vec::new();
    let limit = 4 * (comp.len() + 4) + 16;
    for _ in 0..limit {
        out.push(Pixel::new(c.0 as f64 - 0.5, c.1 as f64 - 0.5));
        let (ahead_left, ahead_right) = ahead_pixels(c, d);
        let left = (d.1, -d.0);
        let right = (-d.1, d.0);
        d = if fg(ahead_left.0, ahead_left.1) {
            left
        } else if fg(ahead_right.0, ahead_right.1) {
            d
        } else {
            right
        };
        c = (c.0 + d.0, c.1 + d.1);
        if c == start {
            let (_, ar) = ahead_pixels(c, start_dir);
            let (al, _) = ahead_pixels(c, start_dir);
            if !fg(al.0, al.1) && fg(ar.0, ar.1) {
                break;
            }
        }
    }
    out
}

fn ahead_pixels(c: (i64, i64), d: (i64, i64)) -> ((i64, i64), (i64, i64)) {
    let (cx, cy) = c;
    match d {
        (1, 0) => ((cx, cy - 1), (cx, cy)),
        (0, 1) => ((cx, cy), (cx - 1, cy)),
        (-1, 0) => ((cx - 1, cy), (cx - 1, cy - 1)),
        _ => ((cx - 1, cy - 1), (cx, cy - 1)),
    }
}

/// Bilinear sample; coordinates are clamped to the image.
pub fn sample_bilinear(img: &GrayImage, u: f64, v: f64) -> f64 {
    let w = img.width() as i64;
    let h = img.height() as i64;
    let u = u.clamp(0.0, (w - 1) as f64);
    let v = v.clamp(0.0, (h - 1) as f64);
    let x0 = u.floor() as i64;
    let y0 = v.floor() as i64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let raw = img.as_raw();
    let at = |x: i64, y: i64| f64::from(raw[(y * w + x) as usize]);
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// A 2-D line `n·p = c` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2 {
    pub nu: f64,
    pub nv: f64,
    pub c: f64,
}

impl Line2 {
    pub fn through(a: Pixel, b: Pixel) -> Option<Self> {
        let (du, dv) = (b.u - a.u, b.v - a.v);
        let len = du.hypot(dv);
        if len < 1e-12 {
            return None;
        }
        let (nu, nv) = (-dv / len, du / len);
        Some(Self {
            nu,
            nv,
            c: nu * a.u + nv * a.v,
        })
    }

    /// Total-least-squares fit.
    pub fn fit(points: &[Pixel]) -> Option<Self> {
        if points.len() < 2 {
            return None;
        }
        let n = points.len() as f64;
        let mu = points.iter().map(|p| p.u).sum::<f64>() / n;
        let mv = points.iter().map(|p| p.v).sum::<f64>() / n;
        let (mut suu, mut suv, mut svv) = (0.0, 0.0, 0.0);
        for p in points {
            let (du, dv) = (p.u - mu, p.v - mv);
            suu += du * du;
            suv += du * dv;
            svv += dv * dv;
        }
        // Direction of largest spread.
        let theta = 0.5 * (2.0 * suv).atan2(suu - svv);
        let (du, dv) = (theta.cos(), theta.sin());
        if suu + svv < 1e-18 {
            return None;
        }
        let (nu, nv) = (-dv, du);
        Some(Self {
            nu,
            nv,
            c: nu * mu + nv * mv,
        })
    }

    pub fn distance(&self, p: Pixel) -> f64 {
        self.nu * p.u + self.nv * p.v - self.c
    }

    pub fn intersect(&self, other: &Line2) -> Option<Pixel> {
        let det = self.nu * other.nv - self.nv * other.nu;
        if det.abs() < 1e-12 {
            return None;
        }
        Some(Pixel::new(
            (self.c * other.nv - self.nv * other.c) / det,
            (self.nu * other.c - self.c * other.nu) / det,
        ))
    }
}

/// Moves each side of a quadrilateral onto the intensity edge it
/// approximates and returns the intersections of the refined sides.
///
/// Along every side, intensities are sampled across the side in a ±3 px
/// window and the centroid of their differences gives the sub-pixel edge
/// position. Sides with too few usable samples keep their
/// original line.
pub fn refine_quad_edges(img: &GrayImage, corners: &[Pixel; 4]) -> [Pixel; 4] {
    let mut current = *corners;
    for _ in 0..2 {
        let mut lines = [None; 4];
        for (i, line) in lines.iter_mut().enumerate() {
            let a = current[i];
            let b = current[(i + 1) % 4];
            *line = refine_side(img, a, b).or_else(|| Line2::through(a, b));
        }
        let mut next = current;
        for i in 0..4 {
            let prev = lines[(i + 3) % 4];
            let this = lines[i];
            if let (Some(p), Some(t)) = (prev, this) {
                if let Some(x) = p.intersect(&t) {
                    if x.distance(&current[i]) < 3.0 {
                        next[i] = x;
                    }
                }
            }
        }
        current = next;
    }
    current
}

fn refine_side(img: &GrayImage, a: Pixel, b: Pixel) -> Option<Line2> {
    let (du, dv) = (b.u - a.u, b.v - a.v);
    let len = du.hypot(dv);
    if len < 6.0 {
        return None;
    }
    let (tu, tv) = (du / len, dv / len);
    let (nu, nv) = (-tv, tu);
    let margin = (0.15 * len).max(2.0);
    let usable = len - 2.0 * margin;
    if usable <= 0.0 {
        return None;
    }
    let count = (usable.ceil() as usize).clamp(4, 60);
    let mut refined = Vec::with_capacity(count);
    const R: i32 = 3;
    let mut profile = [0.0f64; (2 * R + 1) as usize];
    for k in 0..count {
        let s = margin + usable * (k as f64 + 0.5) / count as f64;
        let (qu, qv) = (a.u + tu * s, a.v + tv * s);
        for (i, o) in (-R..=R).enumerate() {
            let o = f64::from(o);
            profile[i] = sample_bilinear(img, qu + nu * o, qv + nv * o);
        }
        // Centroid of the intensity differences across the side. For an
        // area-sampled step edge the differences telescope, so the centroid
        // sits exactly on the edge.
        let diffs: Vec<f64> = profile.windows(2).map(|w| w[1] - w[0]).collect();
        let polarity = diffs.iter().sum::<f64>().signum();
        let (mut sw, mut swx) = (0.0, 0.0);
        for (i, d) in diffs.iter().enumerate() {
            let w = (d * polarity).max(0.0);
            sw += w;
            swx += w * (i as f64 - f64::from(R) + 0.5);
        }
        if sw < 16.0 {
            continue;
        }
        let offset = swx / sw;
        refined.push(Pixel::new(qu + nu * offset, qv + nv * offset));
    }
    if refined.len() < 4 {
        return None;
    }
    Line2::fit(&refined)
}

/// 8×8 supersampled coverage canvas used by the renderers.
#[derive(Debug, Clone)]
pub struct Canvas {
    width: u32,
    height: u32,
    masks: Vec<u64>,
}

const SUB: usize = 8;

fn sub_offset(i: usize) -> f64 {
    (i as f64 + 0.5) / SUB as f64 - 0.5
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            masks: vec![0; width as usize * height as usize],
        }
    }

    fn pixel_range(&self, lo: f64, hi: f64, limit: u32) -> std::ops::Range<u32> {
        let a = (lo - 1.0).floor().max(0.0) as u32;
        let b = ((hi + 2.0).ceil().max(0.0) as u32).min(limit);
        a.min(b)..b
    }

    /// Marks subsamples for which `inside(u, v)` holds, over the pixel
    /// bounding box `[u0, u1] × [v0, v1]`.
    pub fn cover(
        &mut self,
        (u0, v0, u1, v1): (f64, f64, f64, f64),
        inside: impl Fn(f64, f64) -> bool,
    ) {
        let xs = self.pixel_range(u0, u1, self.width);
        let ys = self.pixel_range(v0, v1, self.height);
        for y in ys {
            for x in xs.clone() {
                let mut bits = 0u64;
                for sy in 0..SUB {
                    for sx in 0..SUB {
                        let u = f64::from(x) + sub_offset(sx);
                        let v = f64::from(y) + sub_offset(sy);
                        if inside(u, v) {
                            bits |= 1 << (sy * SUB + sx);
                        }
                    }
                }
                self.masks[y as usize * self.width as usize + x as usize] |= bits;
            }
        }
    }

    pub fn fill_polygon(&mut self, poly: &[Pixel]) {
        if poly.len() < 3 {
            return;
        }
        // Scanline form of `point_in_polygon`: along each subsample row a
        // point is inside iff it lies in some `[x_2i, x_2i+1)` span of the
        // sorted edge crossings.
        let (_, _, v0, v1) = bounds(poly);
        let w = self.width as usize;
        let mut xs: Vec<f64> = Vec::with_capacity(poly.len());
        for y in self.pixel_range(v0, v1, self.height) {
            for sy in 0..SUB {
                let v = f64::from(y) + sub_offset(sy);
                xs.clear();
                let mut j = poly.len() - 1;
                for i in 0..poly.len() {
                    let (pi, pj) = (poly[i], poly[j]);
                    if (pi.v > v) != (pj.v > v) {
                        xs.push(pj.u + (v - pj.v) * (pi.u - pj.u) / (pi.v - pj.v));
                    }
                    j = i;
                }
                xs.sort_by(f64::total_cmp);
                let sub = SUB as f64;
                let limit = (w * SUB) as i64;
                for span in xs.chunks_exact(2) {
                    let first = ((span[0] + 0.5) * sub - 0.5).ceil().max(0.0) as i64;
                    let end = (((span[1] + 0.5) * sub - 0.5).ceil() as i64).min(limit);
                    if first >= end {
                        continue;
                    }
                    let (first, end) = (first as usize, end as usize);
                    for x in first / SUB..=(end - 1) / SUB {
                        let lo = first.saturating_sub(x * SUB);
                        let hi = (end - x * SUB).min(SUB);
                        let run = ((1u64 << hi) - 1) ^ ((1u64 << lo) - 1);
                        self.masks[y as usize * w + x] |= run << (sy * SUB);
                    }
                }
            }
        }
    }

    /// Strokes a polyline with round joins and caps.
    pub fn stroke_polyline(&mut self, line: &[Pixel], width: f64) {
        let hw = width / 2.0;
        for seg in line.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let bb = (
                a.u.min(b.u) - hw,
                a.v.min(b.v) - hw,
                a.u.max(b.u) + hw,
                a.v.max(b.v) + hw,
            );
            // Subsamples lie within 0.62 px of the pixel center and distance
            // is 1-Lipschitz, so pixels far from the boundary are decided by
            // their center alone.
            let xs = self.pixel_range(bb.0, bb.2, self.width);
            for y in self.pixel_range(bb.1, bb.3, self.height) {
                for x in xs.clone() {
                    let d = segment_distance(a, b, Pixel::new(f64::from(x), f64::from(y)));
                    let idx = y as usize * self.width as usize + x as usize;
                    if d > hw + 0.75 {
                        continue;
                    }
                    if d < hw - 0.75 {
                        self.masks[idx] = u64::MAX;
                        continue;
                    }
                    let mut bits = 0u64;
                    for sy in 0..SUB {
                        for sx in 0..SUB {
                            let p = Pixel::new(f64::from(x) + sub_offset(sx), f64::from(y) + sub_offset(sy));
                            if segment_distance(a, b, p) <= hw {
                                bits |= 1 << (sy * SUB + sx);
                            }
                        }
                    }
                    self.masks[idx] |= bits;
                }
            }
        }
    }

    /// Coverage in `[0, 1]` of pixel `(x, y)`.
    pub fn coverage(&self, x: u32, y: u32) -> f64 {
        let bits = self.masks[y as usize * self.width as usize + x as usize];
        f64::from(bits.count_ones()) / (SUB * SUB) as f64
    }

    /// Blends `fg` over `bg` by coverage.
    pub fn to_image(&self, bg: f64, fg: f64) -> GrayImage {
        let levels: Vec<u8> = (0..=SUB * SUB)
            .map(|n| {
                let c = n as f64 / (SUB * SUB) as f64;
                (bg + (fg - bg) * c).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        let raw = self.masks.iter().map(|m| levels[m.count_ones() as usize]).collect();
        GrayImage::from_raw(self.width, self.height, raw).expect("buffer matches size")
    }
}

fn bounds(poly: &[Pixel]) -> (f64, f64, f64, f64) {
    poly.iter().fold(
        (f64::MAX, f64::MIN, f64::MAX, f64::MIN),
        |(a, b, c, d), p| (a.min(p.u), b.max(p.u), c.min(p.v), d.max(p.v)),
    )
}

pub fn point_in_polygon(poly: &[Pixel], u: f64, v: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi.v > v) != (pj.v > v) {
            let x = pj.u + (v - pj.v) * (pi.u - pj.u) / (pi.v - pj.v);
            if u < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn segment_distance(a: Pixel, b: Pixel, p: Pixel) -> f64 {
    let (du, dv) = (b.u - a.u, b.v - a.v);
    let len2 = du * du + dv * dv;
    let t = if len2 > 0.0 {
        (((p.u - a.u) * du + (p.v - a.v) * dv) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.u - (a.u + t * du)).hypot(p.v - (a.v + t * dv))
}

/// Signed area; positive for clockwise order in image coordinates (v down).
pub fn signed_area(poly: &[Pixel]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.u * b.v - b.u * a.v
        })
        .sum::<f64>()
        / 2.0
}

/// Douglas–Peucker simplification of a closed contour, returning indices
/// into `contour` in traversal order.
pub fn simplify_closed(contour: &[Pixel], epsilon: f64) -> Vec<usize> {
    let n = contour.len();
    if n < 3 {
        return (0..n).collect();
    }
    // Split at the point farthest from the first, then at the point farthest
    // from that one.
    let far = |from: Pixel| {
        (0..n)
            .max_by(|&a, &b| {
                contour[a]
                    .distance(&from)
                    .total_cmp(&contour[b].distance(&from))
            })
            .unwrap_or(0)
    };
    let a = far(contour[0]);
    let b = far(contour[a]);
    let (a, b) = (a.min(b), a.max(b));
    if a == b {
        return vec![a];
    }
    let mut keep = vec![false; n];
    keep[a] = true;
    keep[b] = true;
    dp_range(contour, a, b, epsilon, &mut keep);
    dp_range(contour, b, a + n, epsilon, &mut keep);
    (0..n).filter(|i| keep[*i]).collect()
}

fn dp_range(contour: &[Pixel], start: usize, end: usize, epsilon: f64, keep: &mut [bool]) {
    let n = contour.len();
    if end <= start + 1 {
        return;
    }
    let (a, b) = (contour[start % n], contour[end % n]);
    let mut best = (0.0, start);
    for i in start + 1..end {
        let d = segment_distance(a, b, contour[i % n]);
        if d > best.0 {
            best = (d, i);
        }
    }
    if best.0 > epsilon {
        keep[best.1 % n] = true;
        dp_range(contour, start, best.1, epsilon, keep);
        dp_range(contour, best.1, end, epsilon, keep);
    }
}

/// Approximates a closed contour by a quadrilateral.
///
/// Douglas–Peucker runs with a rising tolerance until at most four vertices
/// remain (extra vertices are then dropped smallest-triangle first), and
/// each side is re-fitted by total least squares to the contour points
/// between its vertices. Returns the corners in contour order together with
/// the largest contour-to-quad distance, or `None` when no non-degenerate
/// quad exists.
pub fn approximate_quad(contour: &[Pixel]) -> Option<([Pixel; 4], f64)> {
    let n = contour.len();
    if n < 4 {
        return None;
    }
    let perimeter: f64 = (0..n).map(|i| contour[i].distance(&contour[(i + 1) % n])).sum();
    let mut eps = 0.5;
    let mut idx = simplify_closed(contour, eps);
    while idx.len() > 4 && eps < perimeter {
        eps *= 1.25;
        let next = simplify_closed(contour, eps);
        if next.len() < 4 {
            break;
        }
        idx = next;
    }
    while idx.len() > 4 {
        let m = idx.len();
        let area = |i: usize| {
            let (a, b, c) = (
                contour[idx[(i + m - 1) % m]],
                contour[idx[i]],
                contour[idx[(i + 1) % m]],
            );
            signed_area(&[a, b, c]).abs()
        };
        let drop = (0..m).min_by(|a, b| area(*a).total_cmp(&area(*b)))?;
        idx.remove(drop);
    }
    if idx.len() != 4 {
        return None;
    }
    // Refit each side on the contour points strictly between its corners,
    // trimming a little near each corner where the contour rounds off.
    let mut lines = [None; 4];
    for s in 0..4 {
        let (a, b) = (idx[s], idx[(s + 1) % 4]);
        let len = (b + n - a) % n;
        let trim = (len / 8).max(1);
        let pts: Vec<Pixel> = (trim..len.saturating_sub(trim).max(trim))
            .map(|j| contour[(a + j) % n])
            .collect();
        lines[s] = if pts.len() >= 3 {
            Line2::fit(&pts)
        } else {
            None
        }
        .or_else(|| Line2::through(contour[a], contour[b]));
    }
    let mut quad = [Pixel::new(0.0, 0.0); 4];
    for i in 0..4 {
        let (p, q) = (lines[(i + 3) % 4]?, lines[i]?);
        let x = p.intersect(&q)?;
        // Nearly parallel neighbours would throw the corner far away.
        quad[i] = if x.distance(&contour[idx[i]]) < 0.25 * perimeter {
            x
        } else {
            contour[idx[i]]
        };
    }
    if signed_area(&quad).abs() < 1.0 {
        return None;
    }
    let deviation = contour
        .iter()
        .map(|p| {
            (0..4)
                .map(|i| segment_distance(quad[i], quad[(i + 1) % 4], *p))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    Some((quad, deviation))
}

/// True when the polygon turns the same way at every vertex.
pub fn is_convex(poly: &[Pixel]) -> bool {
    let n = poly.len();
    let mut sign = 0.0;
    for i in 0..n {
        let (a, b, c) = (poly[i], poly[(i + 1) % n], poly[(i + 2) % n]);
        let cross = (b.u - a.u) * (c.v - b.v) - (b.v - a.v) * (c.u - b.u);
        if cross.abs() < 1e-12 {
            return false;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled_rect(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> BitMask {
        BitMask::from_fn(w, h, |x, y| x >= x0 && x <= x1 && y >= y0 && y <= y1)
    }

    #[test]
    fn otsu_handles_uniform_images() {
        let black = GrayImage::new(8, 8);
        assert!(threshold_above(&black, otsu(&black).threshold).is_empty());
        let white = GrayImage::from_pixel(8, 8, image::Luma([255]));
        assert_eq!(threshold_above(&white, otsu(&white).threshold).count(), 64);
    }

    #[test]
    fn otsu_splits_two_levels() {
        let img = GrayImage::from_fn(10, 10, |x, _| image::Luma([if x < 5 { 20 } else { 200 }]));
        let t = otsu(&img);
        assert!(t.threshold >= 20 && t.threshold < 200);
        assert_eq!(t.background_mean, 20.0);
        assert_eq!(t.foreground_mean, 200.0);
    }

    #[test]
    fn components_are_eight_connected() {
        let mut m = BitMask::new(6, 6);
        m.set(1, 1, true);
        m.set(2, 2, true);
        m.set(5, 5, true);
        let l = connected_components(&m);
        assert_eq!(l.components.len(), 2);
        assert_eq!(l.components[0].len(), 2);
    }

    #[test]
    fn contour_of_rectangle_follows_pixel_edges() {
        let m = filled_rect(10, 10, 2, 3, 5, 6);
        let l = connected_components(&m);
        let c = trace_outer_contour(&l, 1);
        // Perimeter of a 4x4 block in unit crack steps.
        assert_eq!(c.len(), 16);
        assert_eq!(c[0], Pixel::new(1.5, 2.5));
        assert!(c.contains(&Pixel::new(5.5, 6.5)));
        assert!(signed_area(&c) > 0.0);
        assert_eq!(signed_area(&c), 16.0);
    }

    #[test]
    fn contour_handles_diagonal_connections() {
        let mut m = BitMask::new(5, 5);
        m.set(1, 1, true);
        m.set(2, 2, true);
        let l = connected_components(&m);
        let c = trace_outer_contour(&l, 1);
        assert_eq!(c.len(), 8);
    }

    #[test]
    fn line_fit_and_intersection() {
        let pts: Vec<Pixel> = (0..10).map(|i| Pixel::new(i as f64, 2.0 * i as f64 + 1.0)).collect();
        let l = Line2::fit(&pts).unwrap();
        for p in &pts {
            assert!(l.distance(*p).abs() < 1e-12);
        }
        let h = Line2::through(Pixel::new(0.0, 5.0), Pixel::new(1.0, 5.0)).unwrap();
        let x = l.intersect(&h).unwrap();
        assert!((x.u - 2.0).abs() < 1e-12 && (x.v - 5.0).abs() < 1e-12);
    }

    #[test]
    fn canvas_coverage_is_area_like() {
        let mut c = Canvas::new(20, 20);
        c.fill_polygon(&[
            Pixel::new(4.5, 4.5),
            Pixel::new(9.5, 4.5),
            Pixel::new(9.5, 9.5),
            Pixel::new(4.5, 9.5),
        ]);
        assert_eq!(c.coverage(5, 5), 1.0);
        assert_eq!(c.coverage(3, 3), 0.0);
        let mut half = Canvas::new(10, 10);
        half.fill_polygon(&[
            Pixel::new(0.0, -1.0),
            Pixel::new(5.0, -1.0),
            Pixel::new(5.0, 11.0),
            Pixel::new(0.0, 11.0),
        ]);
        assert_eq!(half.coverage(5, 5), 0.5);
    }

    #[test]
    fn stroke_matches_distance_test() {
        let line = [Pixel::new(3.2, 4.1), Pixel::new(15.7, 9.3), Pixel::new(6.0, 17.5)];
        let mut fast = Canvas::new(20, 20);
        fast.stroke_polyline(&line, 3.0);
        let mut slow = Canvas::new(20, 20);
        for s in line.windows(2) {
            slow.cover((0.0, 0.0, 20.0, 20.0), |u, v| segment_distance(s[0], s[1], Pixel::new(u, v)) <= 1.5);
        }
        assert_eq!(fast.masks, slow.masks);
    }

    proptest::proptest! {
        #[test]
        fn scanline_fill_matches_point_test(
            pts in proptest::collection::vec((-5.0f64..25.0, -5.0f64..25.0), 3..7),
        ) {
            let poly: Vec<Pixel> = pts.iter().map(|(u, v)| Pixel::new(*u, *v)).collect();
            let mut fast = Canvas::new(20, 20);
            fast.fill_polygon(&poly);
            let mut slow = Canvas::new(20, 20);
            slow.cover((-5.0, -5.0, 25.0, 25.0), |u, v| point_in_polygon(&poly, u, v));
            let mut differ = 0;
            for y in 0..20 {
                for x in 0..20 {
                    let (a, b) = (fast.masks[y * 20 + x], slow.masks[y * 20 + x]);
                    differ += (a ^ b).count_ones();
                }
            }
            // Only subsamples exactly on an edge may round differently.
            proptest::prop_assert!(differ <= 2, "{differ}");
        }
    }

    #[test]
    fn refine_recovers_subpixel_square() {
        // Axis-aligned bright square with edges at fractional positions.
        let mut c = Canvas::new(60, 60);
        let truth = [
            Pixel::new(12.25, 14.625),
            Pixel::new(45.875, 14.625),
            Pixel::new(45.875, 41.125),
            Pixel::new(12.25, 41.125),
        ];
        c.fill_polygon(&truth);
        let img = c.to_image(20.0, 220.0);
        let rough = [
            Pixel::new(12.5, 14.5),
            Pixel::new(45.5, 14.5),
            Pixel::new(45.5, 41.5),
            Pixel::new(12.5, 41.5),
        ];
        let refined = refine_quad_edges(&img, &rough);
        for (r, t) in refined.iter().zip(truth.iter()) {
            assert!(r.distance(t) < 0.05, "{r:?} vs {t:?}");
        }
    }

    #[test]
    fn simplify_square_contour() {
        let m = filled_rect(20, 20, 3, 3, 12, 12);
        let l = connected_components(&m);
        let c = trace_outer_contour(&l, 1);
        let idx = simplify_closed(&c, 0.5);
        assert_eq!(idx.len(), 4);
    }

    #[test]
    fn quad_from_rotated_square_contour() {
        let mut canvas = Canvas::new(80, 80);
        let c = (40.0, 40.0);
        let corners: Vec<Pixel> = (0..4)
            .map(|i| {
                let a = 0.3 + i as f64 * std::f64::consts::FRAC_PI_2;
                Pixel::new(c.0 + 20.0 * a.cos(), c.1 + 20.0 * a.sin())
            })
            .collect();
        canvas.fill_polygon(&corners);
        let img = canvas.to_image(0.0, 255.0);
        let mask = threshold_above(&img, 127);
        let lab = connected_components(&mask);
        let contour = trace_outer_contour(&lab, 1);
        let (quad, dev) = approximate_quad(&contour).unwrap();
        assert!(dev < 1.5, "{dev}");
        assert!(is_convex(&quad));
        for q in quad {
            let best = corners.iter().map(|c| c.distance(&q)).fold(f64::MAX, f64::min);
            assert!(best < 1.0, "{q:?}");
        }
    }
}
