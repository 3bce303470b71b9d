use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppm::{self, Image};
use crate::{matfile, rng};

#[derive(Debug, Clone, PartialEq)]
pub struct StimulusMovie {
    /// Strictly increasing onset of every frame, seconds.
    pub frame_onsets: Vec<f64>,
    pub frames: Vec<Image>,
    /// Class of each frame; only synthetic movies carry labels.
    pub frame_labels: Option<Vec<usize>>,
}

impl StimulusMovie {
    pub fn new(frame_onsets: Vec<f64>, frames: Vec<Image>, frame_labels: Option<Vec<usize>>) -> Result<Self> {
        let m = StimulusMovie { frame_onsets, frames, frame_labels };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.frames.len();
        if f == 0 {
            return Err(Error::Validation("movie has no frames".into()));
        }
        if self.frame_onsets.len() != f {
            return Err(Error::Shape(format!("{} onsets for {f} frames", self.frame_onsets.len())));
        }
        if self.frame_onsets.windows(2).any(|w| !(w[1] > w[0])) || self.frame_onsets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Validation("frame onsets must be finite and strictly increasing".into()));
        }
        let shape = self.frames[0].shape();
        for (i, fr) in self.frames.iter().enumerate() {
            if fr.shape() != shape {
                return Err(Error::Shape(format!("frame {i} has shape {:?}, expected {shape:?}", fr.shape())));
            }
            if fr.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Validation(format!("frame {i} has intensities outside [0,1]")));
            }
        }
        if let Some(l) = &self.frame_labels {
            if l.len() != f {
                return Err(Error::Shape(format!("{} labels for {f} frames", l.len())));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.frames[0].shape()
    }

    /// Median spacing between consecutive onsets, `None` for a single frame.
    pub fn median_interval(&self) -> Option<f64> {
        let mut d: Vec<f64> = self.frame_onsets.windows(2).map(|w| w[1] - w[0]).collect();
        if d.is_empty() {
            return None;
        }
        d.sort_by(f64::total_cmp);
        let n = d.len();
        Some(if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) })
    }
}

/// Geometry of a synthetic movie.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovieSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_classes: usize,
    pub frame_duration_s: f64,
}

impl Default for MovieSpec {
    fn default() -> Self {
        MovieSpec { frames: 600, height: 32, width: 32, channels: 1, n_classes: 4, frame_duration_s: 1.0 / 30.0 }
    }
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Signed "insideness" of a point for each shape template, positive inside.
fn template(class: usize, dx: f64, dy: f64, r: f64) -> f64 {
    let d = (dx * dx + dy * dy).sqrt();
    match class % 8 {
        0 => r - d,
        1 => 0.85 * r - dx.abs().max(dy.abs()),
        2 => {
            let t = 0.3 * r;
            (r - dx.abs()).min(t - dy.abs()).max((r - dy.abs()).min(t - dx.abs()))
        }
        3 => 0.22 * r - (d - 0.7 * r).abs(),
        4 => {
            // upward triangle
            let h = 0.9 * r;
            let bottom = h * 0.6 - dy;
            let left = (dy + h) * 0.55 - dx;
            let right = (dy + h) * 0.55 + dx;
            bottom.min(left).min(right) * 0.8
        }
        5 => (0.9 * r - dx.abs().max(dy.abs())).min(0.15 * r - ((dy / r * 2.5 * std::f64::consts::PI).sin().abs() - 0.5) * r * 0.3),
        6 => (0.9 * r - dx.abs().max(dy.abs())).min(0.15 * r - ((dx / r * 2.5 * std::f64::consts::PI).sin().abs() - 0.5) * r * 0.3),
        _ => r - (dx.abs() + dy.abs()),
    }
}

fn render(class: usize, h: usize, w: usize, c: usize, p: &SceneParams) -> Image {
    let mut img = Image::zeros(h, w, c);
    let edge = 2.5 / h.max(w) as f64;
    let invert = (class / 8) % 2 == 1;
    for y in 0..h {
        let v = (y as f64 + 0.5) / h as f64 * 2.0 - 1.0;
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64 * 2.0 - 1.0;
            let inside = template(class, u - p.cx, v - p.cy, 0.55 * p.scale);
            let mut a = smoothstep(0.5 + inside / (2.0 * edge));
            if invert {
                a = 1.0 - a;
            }
            for ch in 0..c {
                let fg = p.fg * p.tint[ch % 3];
                let val = p.bg + (fg - p.bg) * a;
                img.data[(y * w + x) * c + ch] = val.clamp(0.0, 1.0);
            }
        }
    }
    img
}

struct SceneParams {
    cx: f64,
    cy: f64,
    scale: f64,
    fg: f64,
    bg: f64,
    tint: [f64; 3],
}

/// Procedural labelled movie: every frame shows one of `n_classes` shape
/// templates with jittered position, scale and luminance. Labels are
/// balanced (each class appears ⌊F/n⌋ or ⌈F/n⌉ times) and shuffled.
pub fn synth_movie(spec: &MovieSpec, seed: u64) -> Result<StimulusMovie> {
    if spec.frames == 0 || spec.height == 0 || spec.width == 0 || spec.channels == 0 {
        return Err(Error::Validation("movie dimensions must be positive".into()));
    }
    if spec.n_classes < 2 {
        return Err(Error::Validation("n_classes must be at least 2".into()));
    }
    if !(spec.frame_duration_s > 0.0) {
        return Err(Error::Validation("frame_duration_s must be positive".into()));
    }
    let mut r = rng::stream(seed, 0x0F11_4E);
    let mut labels: Vec<usize> = (0..spec.frames).map(|f| f % spec.n_classes).collect();
    labels.shuffle(&mut r);
    let frames = labels
        .iter()
        .map(|&class| {
            let p = SceneParams {
                cx: r.random_range(-0.3..0.3),
                cy: r.random_range(-0.3..0.3),
                scale: r.random_range(0.75..1.15),
                fg: r.random_range(0.65..1.0),
                bg: r.random_range(0.0..0.2),
                tint: [r.random_range(0.7..1.0), r.random_range(0.7..1.0), r.random_range(0.7..1.0)],
            };
            render(class, spec.height, spec.width, spec.channels, &p)
        })
        .collect();
    let onsets = (0..spec.frames).map(|f| f as f64 * spec.frame_duration_s).collect();
    StimulusMovie::new(onsets, frames, Some(labels))
}

/// Writes `frame_%06d.ppm` files and `onsets.csv` into `dir`.
pub fn write_movie_dir(movie: &StimulusMovie, dir: &Path) -> Result<()> {
    let mut csv = String::from("frame_index,onset_s,label\n");
    for (i, (frame, onset)) in movie.frames.iter().zip(&movie.frame_onsets).enumerate() {
        matfile::write_new(&dir.join(format!("frame_{i:06}.ppm")), &ppm::encode(frame))?;
        let label = movie.frame_labels.as_ref().map(|l| l[i].to_string()).unwrap_or_default();
        writeln!(csv, "{i},{onset:.9},{label}").expect("string write");
    }
    matfile::write_new(&dir.join("onsets.csv"), csv.as_bytes())
}

pub fn read_movie_dir(dir: &Path, channels: usize) -> Result<StimulusMovie> {
    let onsets_path = dir.join("onsets.csv");
    let text = String::from_utf8(matfile::read_artifact(&onsets_path)?)
        .map_err(|_| Error::Validation("onsets.csv is not UTF-8".into()))?;
    let origin = onsets_path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut onsets = Vec::new();
    let mut labels: Vec<Option<usize>> = Vec::new();
    let mut frames = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse { path: origin.clone(), line: 0, msg: e.to_string() })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let perr = |msg: &str| Error::Parse { path: origin.clone(), line, msg: msg.to_string() };
        let idx: usize = rec.get(0).ok_or_else(|| perr("missing frame_index"))?.parse().map_err(|_| perr("bad frame_index"))?;
        if idx != frames.len() {
            return Err(perr("frame indices must be 0, 1, 2, ..."));
        }
        onsets.push(rec.get(1).ok_or_else(|| perr("missing onset_s"))?.parse::<f64>().map_err(|_| perr("bad onset_s"))?);
        labels.push(match rec.get(2).unwrap_or("") {
            "" => None,
            s => Some(s.parse().map_err(|_| perr("bad label"))?),
        });
        let bytes = matfile::read_artifact(&dir.join(format!("frame_{idx:06}.ppm")))?;
        frames.push(ppm::decode(&bytes, channels)?);
    }
    let frame_labels = if !labels.is_empty() && labels.iter().all(Option::is_some) {
        Some(labels.into_iter().map(Option::unwrap).collect())
    } else {
        None
    };
    StimulusMovie::new(onsets, frames, frame_labels)
}
