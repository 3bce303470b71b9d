//! Binary PPM (P6, maxval 255) images.

use crate::error::{Error, Result};

/// A single image with intensities in [0, 1], stored height × width × channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image data has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Image { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Average-pools non-overlapping `factor`×`factor` blocks.
    pub fn downsample(&self, factor: usize) -> Image {
        let (h, w) = (self.height / factor, self.width / factor);
        let mut out = Image::zeros(h, w, self.channels);
        let norm = (factor * factor) as f64;
        for y in 0..h {
            for x in 0..w {
                for c in 0..self.channels {
                    let mut s = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            s += self.get(y * factor + dy, x * factor + dx, c);
                        }
                    }
                    out.data[(y * w + x) * self.channels + c] = s / norm;
                }
            }
        }
        out
    }
}

pub fn encode(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                let v = img.get(y, x, if img.channels == 1 { 0 } else { c });
                out.push(quantize(v));
            }
        }
    }
    out
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decodes a P6 image. `channels` selects 1 (luminance from the red channel
/// of a grey image) or 3.
pub fn decode(bytes: &[u8], channels: usize) -> Result<Image> {
    let bad = |m: &str| Error::Validation(format!("ppm: {m}"));
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("only binary P6 is supported"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    pos += 1;
    let raw = bytes.get(pos..pos + w * h * 3).ok_or_else(|| bad("truncated pixel data"))?;
    let data = match channels {
        1 => raw.chunks_exact(3).map(|p| p[0] as f64 / 255.0).collect(),
        3 => raw.iter().map(|&b| b as f64 / 255.0).collect(),
        _ => return Err(bad("channels must be 1 or 3")),
    };
    Image::new(h, w, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grey_roundtrip_is_quantized() {
        let img = Image::new(2, 3, 1, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]).unwrap();
        let back = decode(&encode(&img), 1).unwrap();
        assert_eq!(back.shape(), (2, 3, 1));
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P6\n# hi\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0]);
        let img = decode(&bytes, 3).unwrap();
        assert_eq!(img.data, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = Image::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(img.downsample(2).data, vec![0.5]);
    }
}
