//! PNG frame directories and mask files.
//!
//! Frames are `frame_%05d.png` (8-bit RGB, or 8-bit gray for one-channel
//! video) with contiguous indices from 0. Masks are a single `mask.png`
//! applied to every frame or one `mask_%05d.png` per frame; gray values
//! ≥ 128 mark observed pixels.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, GrayImage, ImageReader, RgbImage};

use crate::diffcore::Tensor;
use crate::error::{Result, VdpError};

/// Frames as `[T, C, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    frames: Tensor,
    /// File names the frames were read from, if any.
    pub sources: Vec<String>,
}

impl VideoSequence {
    pub fn new(frames: Tensor) -> Result<Self> {
        if frames.rank() != 4 {
            return Err(VdpError::Rank {
                op: "video",
                rank: frames.rank(),
                shape: frames.shape().to_vec(),
            });
        }
        if frames.shape()[0] == 0 {
            return Err(VdpError::Input("a video needs at least one frame".into()));
        }
        if let Some(v) = frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(VdpError::Input(format!("frame value {v} outside [0, 1]")));
        }
        Ok(Self {
            frames,
            sources: Vec::new(),
        })
    }

    pub fn from_frames(frames: &[Tensor]) -> Result<Self> {
        Self::new(Tensor::stack(frames)?)
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(C, H, W)`.
    pub fn frame_shape(&self) -> (usize, usize, usize) {
        let s = self.frames.shape();
        (s[1], s[2], s[3])
    }

    pub fn frame(&self, t: usize) -> Result<Tensor> {
        self.frames.slice_outer(t)
    }
}

/// Binary masks as `[T, 1, H, W]`; 1 marks observed pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSequence {
    masks: Tensor,
}

impl MaskSequence {
    pub fn new(masks: Tensor) -> Result<Self> {
        if masks.rank() != 4 || masks.shape()[1] != 1 {
            return Err(VdpError::Rank {
                op: "mask",
                rank: masks.rank(),
                shape: masks.shape().to_vec(),
            });
        }
        if masks.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(VdpError::Input("mask values must be 0 or 1".into()));
        }
        Ok(Self { masks })
    }

    /// One mask replicated over `t` frames.
    pub fn stationary(mask: &Tensor, t: usize) -> Result<Self> {
        let (h, w) = match *mask.shape() {
            [h, w] | [1, h, w] => (h, w),
            _ => {
                return Err(VdpError::Rank {
                    op: "mask",
                    rank: mask.rank(),
                    shape: mask.shape().to_vec(),
                })
            }
        };
        let plane = mask.data();
        let data = (0..t).flat_map(|_| plane.iter().copied()).collect();
        Self::new(Tensor::new(&[t, 1, h, w], data)?)
    }

    pub fn masks(&self) -> &Tensor {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:05}.png")
}

/// `(index, path)` of every `<prefix>NNNNN.png` in `dir`, sorted by index.
fn indexed_files(dir: &Path, prefix: &str) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| VdpError::io(dir, e))? {
        let entry = entry.map_err(|e| VdpError::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(digits) = name.strip_prefix(prefix).and_then(|r| r.strip_suffix(".png")) else {
            continue;
        };
        if digits.len() != 5 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        out.push((digits.parse().expect("five ASCII digits"), entry.path()));
    }
    out.sort();
    Ok(out)
}

fn decode(path: &Path) -> Result<DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| VdpError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| VdpError::io(path, e))?
        .decode()
        .map_err(|source| VdpError::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn image_to_tensor(path: &Path, img: &DynamicImage) -> Result<Tensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (c, bytes): (usize, &[u8]) = match img {
        DynamicImage::ImageRgb8(i) => (3, i.as_raw()),
        DynamicImage::ImageLuma8(i) => (1, i.as_raw()),
        other => {
            return Err(VdpError::format(
                path,
                format!("expected 8-bit RGB or gray, found {:?}", other.color()),
            ))
        }
    };
    let mut data = vec![0.0; c * h * w];
    for (p, px) in bytes.chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            data[ch * h * w + p] = v as f64 / 255.0;
        }
    }
    Tensor::new(&[c, h, w], data)
}

/// Loads `frame_00000.png`, `frame_00001.png`, … from `dir`.
pub fn load_frames(dir: &Path) -> Result<VideoSequence> {
    let files = indexed_files(dir, "frame_")?;
    if files.is_empty() {
        return Err(VdpError::format(dir, "no frame_%05d.png files"));
    }
    let mut frames = Vec::with_capacity(files.len());
    let mut sources = Vec::with_capacity(files.len());
    for (expected, (idx, path)) in files.iter().enumerate() {
        if *idx != expected {
            return Err(VdpError::format(dir, format!("missing {} (indices must be contiguous from 0)", frame_name(expected))));
        }
        let t = image_to_tensor(path, &decode(path)?)?;
        if let Some(first) = frames.first() {
            let first: &Tensor = first;
            if first.shape() != t.shape() {
                return Err(VdpError::format(
                    path,
                    format!("frame shape {:?} differs from {:?}", t.shape(), first.shape()),
                ));
            }
        }
        frames.push(t);
        sources.push(frame_name(expected));
    }
    let mut video = VideoSequence::from_frames(&frames)?;
    video.sources = sources;
    Ok(video)
}

/// Round-half-up quantization of a value in `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor() as u8
}

/// Writes every frame as `frame_%05d.png`, creating `dir` if needed.
pub fn save_frames(video: &VideoSequence, dir: &Path) -> Result<()> {
    save_frame_tensor(video.frames(), dir)
}

/// Like [`save_frames`] for a raw `[T, C, H, W]` tensor.
pub fn save_frame_tensor(frames: &Tensor, dir: &Path) -> Result<()> {
    let (t, c, h, w) = frames.nchw()?;
    if let Some(v) = frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(VdpError::Input(format!("cannot save value {v} outside [0, 1]")));
    }
    if c != 1 && c != 3 {
        return Err(VdpError::Input(format!("can only save 1- or 3-channel frames, got {c}")));
    }
    fs::create_dir_all(dir).map_err(|e| VdpError::io(dir, e))?;
    let plane = h * w;
    for (i, frame) in frames.data().chunks_exact(c * plane).enumerate().take(t) {
        let mut bytes = vec![0u8; c * plane];
        for p in 0..plane {
            for ch in 0..c {
                bytes[p * c + ch] = quantize(frame[ch * plane + p]);
            }
        }
        let path = dir.join(frame_name(i));
        let img = if c == 3 {
            DynamicImage::ImageRgb8(RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer sized to frame"))
        } else {
            DynamicImage::ImageLuma8(GrayImage::from_raw(w as u32, h as u32, bytes).expect("buffer sized to frame"))
        };
        img.save(&path).map_err(|source| VdpError::Image { path, source })?;
    }
    Ok(())
}

fn load_mask_file(path: &Path) -> Result<Tensor> {
    let img = decode(path)?;
    if !matches!(img.color(), ColorType::L8 | ColorType::Rgb8 | ColorType::La8 | ColorType::Rgba8) {
        return Err(VdpError::format(path, format!("expected an 8-bit mask, found {:?}", img.color())));
    }
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.as_raw().iter().map(|&v| if v >= 128 { 1.0 } else { 0.0 }).collect();
    Tensor::new(&[1, h, w], data)
}

/// Loads `t` masks from `path`: a mask file or a directory holding either
/// `mask.png` or `mask_%05d.png` files.
pub fn load_masks(path: &Path, t: usize) -> Result<MaskSequence> {
    if path.is_file() {
        return MaskSequence::stationary(&load_mask_file(path)?, t);
    }
    let files = indexed_files(path, "mask_")?;
    if files.is_empty() {
        let single = path.join("mask.png");
        if single.is_file() {
            return MaskSequence::stationary(&load_mask_file(&single)?, t);
        }
        return Err(VdpError::format(path, "no mask.png or mask_%05d.png files"));
    }
    if files.len() == 1 && t != 1 {
        return MaskSequence::stationary(&load_mask_file(&files[0].1)?, t);
    }
    if files.len() != t {
        return Err(VdpError::format(path, format!("found {} masks for {t} frames", files.len())));
    }
    let mut masks = Vec::with_capacity(t);
    for (expected, (idx, file)) in files.iter().enumerate() {
        if *idx != expected {
            return Err(VdpError::format(path, format!("missing mask_{expected:05}.png")));
        }
        let m = load_mask_file(file)?;
        if let Some(first) = masks.first() {
            let first: &Tensor = first;
            if first.shape() != m.shape() {
                return Err(VdpError::format(file, "mask sizes differ"));
            }
        }
        masks.push(m);
    }
    MaskSequence::new(Tensor::stack(&masks)?)
}

/// Writes a `[1, H, W]` or `[H, W]` binary mask as an 8-bit gray PNG.
pub fn save_mask(mask: &Tensor, path: &Path) -> Result<()> {
    let (h, w) = match *mask.shape() {
        [h, w] | [1, h, w] => (h, w),
        _ => {
            return Err(VdpError::Rank {
                op: "save_mask",
                rank: mask.rank(),
                shape: mask.shape().to_vec(),
            })
        }
    };
    let bytes = mask.data().iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect();
    GrayImage::from_raw(w as u32, h as u32, bytes)
        .expect("buffer sized to mask")
        .save(path)
        .map_err(|source| VdpError::Image {
            path: path.to_path_buf(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(127.5 / 255.0 - 1e-9), 127);
    }

    #[test]
    fn video_rejects_out_of_range() {
        assert!(VideoSequence::new(Tensor::full(&[1, 3, 2, 2], 1.5)).is_err());
        assert!(VideoSequence::new(Tensor::zeros(&[3, 2, 2])).is_err());
    }

    #[test]
    fn stationary_mask_replicates() {
        let m = Tensor::new(&[1, 1, 2], vec![0.0, 1.0]).unwrap();
        let s = MaskSequence::stationary(&m, 3).unwrap();
        assert_eq!(s.masks().shape(), &[3, 1, 1, 2]);
        assert_eq!(s.masks().data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }
}
