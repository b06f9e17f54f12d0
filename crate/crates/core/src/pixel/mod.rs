//! Model-free pixel features: the colorfulness proxy and SIFT descriptors.

mod sift;

use std::path::Path;

use thiserror::Error;

pub use sift::{
    load_descriptors, sift_descriptors, sift_descriptors_with, DescriptorSet, Keypoint, SiftParams, DESCRIPTOR_LEN,
};

#[derive(Debug, Error)]
pub enum PixelError {
    #[error("image has no pixels")]
    Empty,
    #[error("pixel buffer holds {got} bytes, {width}x{height} RGB needs {expected}")]
    BufferSize { width: u32, height: u32, expected: usize, got: usize },
    #[error("image is {width}x{height}; SIFT needs both sides >= {min}")]
    Undersized { width: u32, height: u32, min: u32 },
    #[error("cannot decode {path}: {message}")]
    Decode { path: String, message: String },
    #[error("descriptor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, PixelError> {
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(PixelError::BufferSize { width, height, expected, got: pixels.len() });
        }
        Ok(RgbImage { width, height, pixels })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        RgbImage { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Copy rotated a quarter turn clockwise.
    pub fn rotate90(&self) -> RgbImage {
        let (w, h) = (self.width, self.height);
        RgbImage::from_fn(h, w, |x, y| self.pixel(y, h - 1 - x))
    }

    /// Decodes PNG or JPEG bytes; alpha is dropped and 16-bit input is
    /// reduced to 8 bits.
    pub fn decode(bytes: &[u8]) -> Result<Self, PixelError> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| PixelError::Decode { path: "<memory>".into(), message: e.to_string() })?
            .to_rgb8();
        let (width, height) = img.dimensions();
        RgbImage::new(width, height, img.into_raw())
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, PixelError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes).map_err(|e| match e {
            PixelError::Decode { message, .. } => PixelError::Decode { path: path.display().to_string(), message },
            other => other,
        })
    }

    /// Encodes as PNG.
    pub fn to_png(&self) -> Vec<u8> {
        let buf = image::RgbImage::from_raw(self.width, self.height, self.pixels.clone()).expect("size checked");
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png).expect("in-memory encode");
        out.into_inner()
    }
}

/// Hasler–Süsstrunk colorfulness on raw 8-bit channels:
/// `sqrt(var_rg + var_yb) + 0.3 * sqrt(mean_rg^2 + mean_yb^2)` with
/// `rg = R - G`, `yb = (R + G) / 2 - B` and population variances.
pub fn colorfulness(image: &RgbImage) -> Result<f64, PixelError> {
    let n = image.pixels.len() / 3;
    if n == 0 {
        return Err(PixelError::Empty);
    }
    let opp = |p: &[u8]| {
        let (r, g, b) = (f64::from(p[0]), f64::from(p[1]), f64::from(p[2]));
        (r - g, 0.5 * (r + g) - b)
    };
    let (mut s_rg, mut s_yb) = (0.0, 0.0);
    for p in image.pixels.chunks_exact(3) {
        let (rg, yb) = opp(p);
        s_rg += rg;
        s_yb += yb;
    }
    let nf = n as f64;
    let (m_rg, m_yb) = (s_rg / nf, s_yb / nf);
    let (mut v_rg, mut v_yb) = (0.0, 0.0);
    for p in image.pixels.chunks_exact(3) {
        let (rg, yb) = opp(p);
        v_rg += (rg - m_rg) * (rg - m_rg);
        v_yb += (yb - m_yb) * (yb - m_yb);
    }
    let std_root = (v_rg / nf + v_yb / nf).sqrt();
    let mean_root = (m_rg * m_rg + m_yb * m_yb).sqrt();
    Ok(std_root + 0.3 * mean_root)
}

/// Writes `image_id,colorfulness` rows under a header.
pub fn write_colorfulness_csv<W: std::io::Write>(w: W, scores: &[(String, f64)]) -> Result<(), PixelError> {
    let mut wtr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| PixelError::Format(e.to_string());
    wtr.write_record(["image_id", "colorfulness"]).map_err(err)?;
    for (id, v) in scores {
        wtr.write_record([id.as_str(), &v.to_string()]).map_err(err)?;
    }
    wtr.flush().map_err(PixelError::Io)
}

pub fn load_colorfulness_csv(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>, PixelError> {
    let path = path.as_ref();
    let bad = |m: String| PixelError::Format(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != ["image_id", "colorfulness"] {
        return Err(bad("header must be image_id,colorfulness".into()));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let v: f64 = row[1].trim().parse().map_err(|_| bad(format!("bad score {:?}", &row[1])))?;
        if !v.is_finite() || v < 0.0 {
            return Err(bad(format!("bad score {v}")));
        }
        out.push((row[0].to_owned(), v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colorfulness_csv_round_trips() {
        let dir = std::env::temp_dir().join(format!("cf-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.csv");
        let scores = vec![("a".to_owned(), 0.0), ("b,c".to_owned(), 85.529_6)];
        write_colorfulness_csv(std::fs::File::create(&path).unwrap(), &scores).unwrap();
        assert_eq!(load_colorfulness_csv(&path).unwrap(), scores);
        std::fs::write(&path, "id,score\na,1\n").unwrap();
        assert!(load_colorfulness_csv(&path).is_err());
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn gray_is_zero() {
        let img = RgbImage::from_fn(7, 5, |x, y| {
            let v = (x * 30 + y) as u8;
            [v, v, v]
        });
        assert_eq!(colorfulness(&img).unwrap(), 0.0);
    }

    #[test]
    fn pure_red() {
        let img = RgbImage::from_fn(4, 4, |_, _| [255, 0, 0]);
        let c = colorfulness(&img).unwrap();
        let closed = 0.3 * (255.0f64 * 255.0 + 127.5 * 127.5).sqrt();
        assert!((c - closed).abs() < 1e-9, "{c}");
    }

    #[test]
    fn empty_image_is_an_error() {
        let img = RgbImage::new(0, 3, vec![]).unwrap();
        assert!(matches!(colorfulness(&img), Err(PixelError::Empty)));
    }

    #[test]
    fn buffer_size_is_checked() {
        assert!(RgbImage::new(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn png_round_trip() {
        let img = RgbImage::from_fn(9, 4, |x, y| [x as u8 * 20, y as u8 * 50, 7]);
        assert_eq!(RgbImage::decode(&img.to_png()).unwrap(), img);
    }

    #[test]
    fn rotate90_moves_top_left_to_top_right() {
        let img = RgbImage::from_fn(3, 2, |x, y| [x as u8, y as u8, 0]);
        let r = img.rotate90();
        assert_eq!((r.width(), r.height()), (2, 3));
        assert_eq!(r.pixel(1, 0), [0, 0, 0]);
        assert_eq!(r.pixel(0, 0), [0, 1, 0]);
        assert_eq!(r.rotate90().rotate90().rotate90(), img);
    }
}
