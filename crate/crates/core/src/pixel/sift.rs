//! Scale-invariant keypoints and 128-dimensional gradient descriptors.
//!
//! The detector follows the usual difference-of-Gaussians construction
//! without the initial upsampling. Descriptor files use the `SFT1` layout:
//! magic, `u32` count, then `count` records of 132 little-endian `f32`
//! (`x, y, scale, orientation`, 128 descriptor values).

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{PixelError, RgbImage};
use crate::binio::{self, ByteReader};

pub const DESCRIPTOR_LEN: usize = 128;

const MAGIC: &[u8; 4] = b"SFT1";
const RECORD_FLOATS: usize = 4 + DESCRIPTOR_LEN;
const BORDER: usize = 5;
const ORI_BINS: usize = 36;
const ORI_PEAK_RATIO: f64 = 0.8;
const ORI_SIGMA_FACTOR: f64 = 1.5;
const DESC_WIDTH: usize = 4;
const DESC_BINS: usize = 8;
const DESC_SCALE_FACTOR: f64 = 3.0;
const DESC_CLAMP: f32 = 0.2;
const MAX_REFINE_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiftParams {
    pub sigma: f64,
    pub scales_per_octave: usize,
    pub contrast_threshold: f64,
    pub edge_threshold: f64,
    /// Octaves stop once the next level would have a side below this.
    pub min_octave_side: usize,
    /// Blur already present in the input.
    pub assumed_blur: f64,
    /// Smallest accepted input side.
    pub min_image_side: u32,
}

impl Default for SiftParams {
    fn default() -> Self {
        SiftParams {
            sigma: 1.6,
            scales_per_octave: 3,
            contrast_threshold: 0.03,
            edge_threshold: 10.0,
            min_octave_side: 16,
            assumed_blur: 0.5,
            min_image_side: 32,
        }
    }
}

/// Position in input pixel coordinates; `orientation` in radians, `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub scale: f32,
    pub orientation: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub image_id: String,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<[f32; DESCRIPTOR_LEN]>,
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        binio::write_u32(&mut w, self.descriptors.len() as u32)?;
        for (k, d) in self.keypoints.iter().zip(&self.descriptors) {
            for v in [k.x, k.y, k.scale, k.orientation].iter().chain(d.iter()) {
                binio::write_f32(&mut w, *v)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 + self.len() * RECORD_FLOATS * 4);
        self.write(&mut buf).expect("in-memory write");
        buf
    }

    pub fn from_bytes(image_id: &str, bytes: &[u8]) -> Result<Self, PixelError> {
        let fmt = |e: std::io::Error| PixelError::Format(e.to_string());
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC).map_err(fmt)?;
        let count = r.u32().map_err(fmt)? as usize;
        if r.remaining() != count * RECORD_FLOATS * 4 {
            return Err(PixelError::Format(format!(
                "{count} records need {} bytes, found {}",
                count * RECORD_FLOATS * 4,
                r.remaining()
            )));
        }
        let mut keypoints = Vec::with_capacity(count);
        let mut descriptors = Vec::with_capacity(count);
        for _ in 0..count {
            let mut head = [0f32; 4];
            for v in &mut head {
                *v = r.f32().map_err(fmt)?;
            }
            keypoints.push(Keypoint { x: head[0], y: head[1], scale: head[2], orientation: head[3] });
            let mut d = [0f32; DESCRIPTOR_LEN];
            for v in &mut d {
                *v = r.f32().map_err(fmt)?;
            }
            if d.iter().any(|v| !v.is_finite()) {
                return Err(PixelError::Format("non-finite descriptor value".into()));
            }
            descriptors.push(d);
        }
        Ok(DescriptorSet { image_id: image_id.to_owned(), keypoints, descriptors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PixelError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

pub fn load_descriptors(image_id: &str, path: impl AsRef<Path>) -> Result<DescriptorSet, PixelError> {
    DescriptorSet::from_bytes(image_id, &fs::read(path)?)
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Plane {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    fn luma(img: &RgbImage) -> Plane {
        let data = img
            .pixels()
            .chunks_exact(3)
            .map(|p| {
                let v = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
                (v / 255.0) as f32
            })
            .collect();
        Plane { w: img.width() as usize, h: img.height() as usize, data }
    }

    fn downsample(&self) -> Plane {
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.at(2 * x, 2 * y));
            }
        }
        Plane { w, h, data }
    }

    fn blur(&self, sigma: f64) -> Plane {
        let kernel = gaussian_kernel(sigma);
        let r = (kernel.len() / 2) as isize;
        let mut tmp = vec![0f32; self.data.len()];
        for y in 0..self.h {
            let row = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..self.w {
                let mut acc = 0f32;
                for (k, kv) in kernel.iter().enumerate() {
                    acc += kv * row[reflect(x as isize + k as isize - r, self.w)];
                }
                tmp[y * self.w + x] = acc;
            }
        }
        let mut out = vec![0f32; self.data.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0f32;
                for (k, kv) in kernel.iter().enumerate() {
                    acc += kv * tmp[reflect(y as isize + k as isize - r, self.h) * self.w + x];
                }
                out[y * self.w + x] = acc;
            }
        }
        Plane { w: self.w, h: self.h, data: out }
    }

    fn sub(&self, other: &Plane) -> Plane {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Plane { w: self.w, h: self.h, data }
    }

    /// Central-difference gradient; `None` on the outermost ring.
    #[inline]
    fn gradient(&self, x: isize, y: isize) -> Option<(f64, f64)> {
        if x <= 0 || y <= 0 || x >= self.w as isize - 1 || y >= self.h as isize - 1 {
            return None;
        }
        let (x, y) = (x as usize, y as usize);
        let dx = f64::from(self.at(x + 1, y) - self.at(x - 1, y));
        let dy = f64::from(self.at(x, y + 1) - self.at(x, y - 1));
        Some((dx, dy))
    }
}

/// Mirror without repeating the edge sample (`-1 -> 1`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let r = (4.0 * sigma).ceil().max(1.0) as i64;
    let raw: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / sum) as f32).collect()
}

struct Octave {
    gauss: Vec<Plane>,
    dog: Vec<Plane>,
}

fn build_octave(base: Plane, p: &SiftParams) -> Octave {
    let s = p.scales_per_octave;
    let k = 2f64.powf(1.0 / s as f64);
    let mut gauss = Vec::with_capacity(s + 3);
    gauss.push(base);
    for i in 1..s + 3 {
        let prev = p.sigma * k.powi(i as i32 - 1);
        let total = prev * k;
        let step = (total * total - prev * prev).sqrt();
        let next = gauss[i - 1].blur(step);
        gauss.push(next);
    }
    let dog = gauss.windows(2).map(|w| w[1].sub(&w[0])).collect();
    Octave { gauss, dog }
}

struct Extremum {
    col: usize,
    row: usize,
    layer: usize,
    x_off: f64,
    y_off: f64,
    s_off: f64,
}

fn is_extremum(dog: &[Plane], layer: usize, c: usize, r: usize) -> bool {
    let v = dog[layer].at(c, r);
    let greater = v > 0.0;
    for plane in &dog[layer - 1..=layer + 1] {
        for y in r - 1..=r + 1 {
            for x in c - 1..=c + 1 {
                let n = plane.at(x, y);
                if greater && n > v || !greater && n < v {
                    return false;
                }
            }
        }
    }
    true
}

fn solve3(h: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1]) - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let mut x = [0.0; 3];
    for (col, xi) in x.iter_mut().enumerate() {
        let mut m = h;
        for row in 0..3 {
            m[row][col] = b[row];
        }
        let d = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        *xi = d / det;
    }
    Some(x)
}

fn refine(dog: &[Plane], mut c: usize, mut r: usize, mut layer: usize, p: &SiftParams) -> Option<Extremum> {
    let s = p.scales_per_octave;
    let (w, h) = (dog[0].w, dog[0].h);
    let mut offset = [0.0f64; 3];
    let mut grad = [0.0f64; 3];
    let mut converged = false;
    for _ in 0..MAX_REFINE_STEPS {
        let (d0, d1, d2) = (&dog[layer - 1], &dog[layer], &dog[layer + 1]);
        let v = |pl: &Plane, x: usize, y: usize| f64::from(pl.at(x, y));
        grad = [
            (v(d1, c + 1, r) - v(d1, c - 1, r)) * 0.5,
            (v(d1, c, r + 1) - v(d1, c, r - 1)) * 0.5,
            (v(d2, c, r) - v(d0, c, r)) * 0.5,
        ];
        let v2 = 2.0 * v(d1, c, r);
        let dxx = v(d1, c + 1, r) + v(d1, c - 1, r) - v2;
        let dyy = v(d1, c, r + 1) + v(d1, c, r - 1) - v2;
        let dss = v(d2, c, r) + v(d0, c, r) - v2;
        let dxy = (v(d1, c + 1, r + 1) - v(d1, c - 1, r + 1) - v(d1, c + 1, r - 1) + v(d1, c - 1, r - 1)) * 0.25;
        let dxs = (v(d2, c + 1, r) - v(d2, c - 1, r) - v(d0, c + 1, r) + v(d0, c - 1, r)) * 0.25;
        let dys = (v(d2, c, r + 1) - v(d2, c, r - 1) - v(d0, c, r + 1) + v(d0, c, r - 1)) * 0.25;
        let hess = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
        let x = solve3(hess, grad)?;
        offset = [-x[0], -x[1], -x[2]];
        if offset.iter().all(|o| o.abs() < 0.5) {
            converged = true;
            break;
        }
        if offset.iter().any(|o| o.abs() > 1e6) {
            return None;
        }
        let step = |pos: usize, o: f64| pos as isize + o.round() as isize;
        let (nc, nr, nl) = (step(c, offset[0]), step(r, offset[1]), step(layer, offset[2]));
        if nl < 1
            || nl > s as isize
            || nc < BORDER as isize
            || nc >= (w - BORDER) as isize
            || nr < BORDER as isize
            || nr >= (h - BORDER) as isize
        {
            return None;
        }
        (c, r, layer) = (nc as usize, nr as usize, nl as usize);
    }
    if !converged {
        return None;
    }
    let d1 = &dog[layer];
    let contrast = f64::from(d1.at(c, r)) + 0.5 * (grad[0] * offset[0] + grad[1] * offset[1] + grad[2] * offset[2]);
    if contrast.abs() * (s as f64) < p.contrast_threshold {
        return None;
    }
    let v = |x: usize, y: usize| f64::from(d1.at(x, y));
    let v2 = 2.0 * v(c, r);
    let dxx = v(c + 1, r) + v(c - 1, r) - v2;
    let dyy = v(c, r + 1) + v(c, r - 1) - v2;
    let dxy = (v(c + 1, r + 1) - v(c - 1, r + 1) - v(c + 1, r - 1) + v(c - 1, r - 1)) * 0.25;
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let e = p.edge_threshold;
    if det <= 0.0 || tr * tr * e >= (e + 1.0) * (e + 1.0) * det {
        return None;
    }
    Some(Extremum { col: c, row: r, layer, x_off: offset[0], y_off: offset[1], s_off: offset[2] })
}

fn wrap_angle(a: f64) -> f64 {
    let t = a.rem_euclid(2.0 * PI);
    if t >= 2.0 * PI {
        0.0
    } else {
        t
    }
}

fn orientations(img: &Plane, c: usize, r: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * ORI_SIGMA_FACTOR * sigma).round() as isize;
    let weight_sigma = ORI_SIGMA_FACTOR * sigma;
    let denom = -1.0 / (2.0 * weight_sigma * weight_sigma);
    let mut hist = [0f64; ORI_BINS];
    for i in -radius..=radius {
        for j in -radius..=radius {
            let Some((dx, dy)) = img.gradient(c as isize + j, r as isize + i) else {
                continue;
            };
            let weight = (((i * i + j * j) as f64) * denom).exp();
            let angle = wrap_angle(dy.atan2(dx));
            let bin = ((ORI_BINS as f64 * angle / (2.0 * PI)).round() as usize) % ORI_BINS;
            hist[bin] += weight * (dx * dx + dy * dy).sqrt();
        }
    }
    let n = ORI_BINS;
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            (hist[(i + n - 2) % n] + hist[(i + 2) % n]) / 16.0
                + (hist[(i + n - 1) % n] + hist[(i + 1) % n]) * 4.0 / 16.0
                + hist[i] * 6.0 / 16.0
        })
        .collect();
    let max = smooth.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..n {
        let (l, cur, rr) = (smooth[(i + n - 1) % n], smooth[i], smooth[(i + 1) % n]);
        if cur > l && cur > rr && cur >= ORI_PEAK_RATIO * max {
            let bin = i as f64 + 0.5 * (l - rr) / (l - 2.0 * cur + rr);
            out.push(wrap_angle(2.0 * PI * bin / n as f64));
        }
    }
    out
}

fn descriptor(img: &Plane, c: usize, r: usize, ori: f64, sigma: f64) -> Option<[f32; DESCRIPTOR_LEN]> {
    let d = DESC_WIDTH;
    let n = DESC_BINS;
    let hist_width = DESC_SCALE_FACTOR * sigma;
    let max_radius = ((img.w * img.w + img.h * img.h) as f64).sqrt();
    let radius = (hist_width * std::f64::consts::SQRT_2 * (d as f64 + 1.0) * 0.5).round().min(max_radius) as isize;
    let (cos_t, sin_t) = (ori.cos() / hist_width, ori.sin() / hist_width);
    let bins_per_rad = n as f64 / (2.0 * PI);
    let exp_scale = -1.0 / (d as f64 * d as f64 * 0.5);
    let stride_r = (d + 2) * (n + 2);
    let stride_c = n + 2;
    let mut hist = vec![0f64; (d + 2) * stride_r];
    for i in -radius..=radius {
        for j in -radius..=radius {
            // offset expressed in the keypoint frame, in histogram-cell units
            let x_rot = j as f64 * cos_t + i as f64 * sin_t;
            let y_rot = -(j as f64) * sin_t + i as f64 * cos_t;
            let rbin = y_rot + d as f64 / 2.0 - 0.5;
            let cbin = x_rot + d as f64 / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d as f64 || cbin <= -1.0 || cbin >= d as f64 {
                continue;
            }
            let Some((dx, dy)) = img.gradient(c as isize + j, r as isize + i) else {
                continue;
            };
            let obin = wrap_angle(dy.atan2(dx) - ori) * bins_per_rad;
            let mag = (dx * dx + dy * dy).sqrt() * ((x_rot * x_rot + y_rot * y_rot) * exp_scale).exp();

            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0) = ((r0 as isize + 1) as usize, (c0 as isize + 1) as usize);
            let o0 = (o0 as usize) % n;
            for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
                for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                    for (dob, wo) in [(0, 1.0 - fo), (1, fo)] {
                        let idx = (r0 + dr) * stride_r + (c0 + dc) * stride_c + o0 + dob;
                        hist[idx] += mag * wr * wc * wo;
                    }
                }
            }
        }
    }
    let mut out = [0f32; DESCRIPTOR_LEN];
    for row in 0..d {
        for col in 0..d {
            let base = (row + 1) * stride_r + (col + 1) * stride_c;
            let cell = &hist[base..base + n + 2];
            for o in 0..n {
                let mut v = cell[o];
                // the two spill-over bins wrap around the circle
                if o == 0 {
                    v += cell[n];
                }
                if o == 1 {
                    v += cell[n + 1];
                }
                out[(row * d + col) * n + o] = v as f32;
            }
        }
    }
    clamp_normalize(&mut out)?;
    Some(out)
}

/// Unit-normalizes, caps every entry at 0.2 and renormalizes.
fn clamp_normalize(v: &mut [f32]) -> Option<()> {
    normalize(v)?;
    for x in v.iter_mut() {
        *x = x.min(DESC_CLAMP);
    }
    normalize(v)
}

fn normalize(v: &mut [f32]) -> Option<()> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
    Some(())
}

pub fn sift_descriptors(image_id: &str, image: &RgbImage) -> Result<DescriptorSet, PixelError> {
    sift_descriptors_with(image_id, image, &SiftParams::default())
}

pub fn sift_descriptors_with(image_id: &str, image: &RgbImage, p: &SiftParams) -> Result<DescriptorSet, PixelError> {
    if image.width() < p.min_image_side || image.height() < p.min_image_side {
        return Err(PixelError::Undersized { width: image.width(), height: image.height(), min: p.min_image_side });
    }
    let s = p.scales_per_octave;
    let pre_threshold = (0.5 * p.contrast_threshold / s as f64) as f32;
    let initial = (p.sigma * p.sigma - p.assumed_blur * p.assumed_blur).max(0.01).sqrt();
    let mut base = Plane::luma(image).blur(initial);

    let mut set = DescriptorSet { image_id: image_id.to_owned(), keypoints: Vec::new(), descriptors: Vec::new() };
    let mut octave_index = 0;
    loop {
        let octave = build_octave(base, p);
        let (w, h) = (octave.dog[0].w, octave.dog[0].h);
        let scale = 2f64.powi(octave_index);
        let mut seen = std::collections::HashSet::new();
        if w > 2 * BORDER && h > 2 * BORDER {
            for layer in 1..=s {
                for r in BORDER..h - BORDER {
                    for c in BORDER..w - BORDER {
                        let v = octave.dog[layer].at(c, r);
                        if v.abs() <= pre_threshold || !is_extremum(&octave.dog, layer, c, r) {
                            continue;
                        }
                        let Some(ext) = refine(&octave.dog, c, r, layer, p) else {
                            continue;
                        };
                        if !seen.insert((ext.col, ext.row, ext.layer)) {
                            continue;
                        }
                        let oct_sigma = p.sigma * 2f64.powf((ext.layer as f64 + ext.s_off) / s as f64);
                        let img = &octave.gauss[ext.layer];
                        for ori in orientations(img, ext.col, ext.row, oct_sigma) {
                            let Some(desc) = descriptor(img, ext.col, ext.row, ori, oct_sigma) else {
                                continue;
                            };
                            set.keypoints.push(Keypoint {
                                x: ((ext.col as f64 + ext.x_off) * scale) as f32,
                                y: ((ext.row as f64 + ext.y_off) * scale) as f32,
                                scale: (oct_sigma * scale) as f32,
                                orientation: ori as f32,
                            });
                            set.descriptors.push(desc);
                        }
                    }
                }
            }
        }
        let next = octave.gauss[s].downsample();
        if next.w.min(next.h) < p.min_octave_side {
            break;
        }
        base = next;
        octave_index += 1;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(size: u32, spots: &[(f64, f64)], sigma: f64) -> RgbImage {
        RgbImage::from_fn(size, size, |x, y| {
            let mut v = 40.0;
            for &(cx, cy) in spots {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                v += 200.0 * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            let v = v.min(255.0) as u8;
            [v, v, v]
        })
    }

    #[test]
    fn reflect_mirrors_without_edge_repeat() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(2, 5), 2);
        assert_eq!(reflect(-3, 1), 0);
    }

    #[test]
    fn kernel_sums_to_one() {
        let k = gaussian_kernel(1.6);
        assert_eq!(k.len() % 2, 1);
        assert!((k.iter().map(|&v| f64::from(v)).sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn undersized_images_are_rejected() {
        let img = RgbImage::from_fn(31, 64, |_, _| [0, 0, 0]);
        assert!(matches!(sift_descriptors("x", &img), Err(PixelError::Undersized { .. })));
    }

    #[test]
    fn uniform_image_has_no_keypoints() {
        let img = RgbImage::from_fn(64, 64, |_, _| [128, 128, 128]);
        assert!(sift_descriptors("g", &img).unwrap().is_empty());
    }

    #[test]
    fn descriptors_are_clamped_unit_vectors() {
        let img = blobs(96, &[(30.0, 30.0), (64.0, 40.0), (45.0, 70.0)], 4.0);
        let set = sift_descriptors("b", &img).unwrap();
        assert!(!set.is_empty());
        for d in &set.descriptors {
            let n: f64 = d.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            assert!(d.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn clamping_caps_dominant_entries() {
        let mut v = [0f32; DESCRIPTOR_LEN];
        v[0] = 10.0;
        for x in &mut v[1..40] {
            *x = 1.0;
        }
        let mut clamped = v;
        normalize(&mut clamped).unwrap();
        assert!(clamped[0] > 0.2);
        clamped[0] = clamped[0].min(DESC_CLAMP);
        assert!(clamped.iter().all(|&x| (0.0..=0.2).contains(&x)));

        clamp_normalize(&mut v).unwrap();
        let n: f64 = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert!(v[0] / v[1] < 10.0);
        assert!(clamp_normalize(&mut [0f32; 4]).is_none());
    }

    #[test]
    fn file_round_trip() {
        let img = blobs(64, &[(32.0, 32.0)], 3.0);
        let set = sift_descriptors("b", &img).unwrap();
        let back = DescriptorSet::from_bytes("b", &set.to_bytes()).unwrap();
        assert_eq!(back, set);
        let mut bytes = set.to_bytes();
        bytes.pop();
        assert!(DescriptorSet::from_bytes("b", &bytes).is_err());
    }
}
