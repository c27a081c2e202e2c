use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit interleaved RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    /// `[H, W, 3]` tensor with channels divided by 255.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = self.data.iter().map(|&b| b as f32 / 255.0).collect();
        Tensor::new([self.height, self.width, 3], data).expect("dimensions checked at construction")
    }

    /// Quantizes an `[H, W, 3]` tensor in `[0, 1]` (values outside are clamped).
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let [h, w, c] = t.shape() else {
            return Err(Error::invalid_shape("image", format!("expected [H, W, 3], got {:?}", t.shape())));
        };
        if *c != 3 {
            return Err(Error::invalid_shape("image", format!("expected 3 channels, got {c}")));
        }
        let data = t.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        RgbImage::new(*w, *h, data)
    }
}

fn ppm_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Decodes a binary `P6` PPM with maxval 255. Header comments are allowed.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(ppm_error(path, "truncated PPM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or(""));
    }
    if fields[0] != "P6" {
        return Err(ppm_error(path, format!("unsupported PPM magic `{}`", fields[0])));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| ppm_error(path, format!("bad PPM {what} `{s}`")))
    };
    let (w, h, maxval) = (num(fields[1], "width")?, num(fields[2], "height")?, num(fields[3], "maxval")?);
    if maxval != 255 {
        return Err(ppm_error(path, format!("unsupported PPM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ppm_error(path, "truncated PPM header"));
    }
    let raster = &bytes[pos + 1..];
    let need = w * h * 3;
    if raster.len() < need {
        return Err(ppm_error(path, format!("PPM raster has {} of {need} bytes", raster.len())));
    }
    RgbImage::new(w, h, raster[..need].to_vec())
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_ppm(img)).map_err(|e| Error::io(path, e))
}

/// Reads a PPM (built-in decoder) or PNG/JPEG (via the `image` crate).
pub fn read_image(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    if ext.as_deref() == Some("ppm") || bytes.starts_with(b"P6") {
        return decode_ppm(&bytes, path);
    }
    let decoded = image::load_from_memory(&bytes).map_err(|e| ppm_error(path, e.to_string()))?;
    let rgb = decoded.to_rgb8();
    RgbImage::new(rgb.width() as usize, rgb.height() as usize, rgb.into_raw())
}

/// Bilinear resize of an `[H, W, C]` tensor with half-pixel centers and
/// edge clamping. Same-size input is returned unchanged.
pub fn resize_bilinear(src: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [h, w, c] = *src.shape() else {
        return Err(Error::invalid_shape("resize", format!("expected [H, W, C], got {:?}", src.shape())));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize target must be positive".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(src.clone());
    }
    let axis = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = s.floor() as usize;
        (lo, (lo + 1).min(n_in - 1), s - lo as f64)
    };
    let d = src.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for oy in 0..out_h {
        let (y0, y1, fy) = axis(oy, h, out_h);
        for ox in 0..out_w {
            let (x0, x1, fx) = axis(ox, w, out_w);
            for ch in 0..c {
                let v = |y: usize, x: usize| d[(y * w + x) * c + ch] as f64;
                let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    Tensor::new([out_h, out_w, c], out)
}

/// Decodes `path`, scales to `[0, 1]` and resizes to `size = (H, W)`.
pub fn load_image(path: &Path, size: (usize, usize)) -> Result<Tensor<f32>> {
    let img = read_image(path)?;
    resize_bilinear(&img.to_tensor(), size.0, size.1)
}
