//! Deterministic synthetic clips for tests and demos.

use crate::diffcore::Tensor;
use crate::error::Result;
use crate::videoio::VideoSequence;

/// Every element equal to `value`.
pub fn constant(frames: usize, channels: usize, height: usize, width: usize, value: f64) -> Result<VideoSequence> {
    VideoSequence::new(Tensor::full(&[frames, channels, height, width], value))
}

/// A colored square moving diagonally over a smooth two-axis gradient.
///
/// The square has side `height / 3` and advances `step` pixels per frame
/// to the right and `step / 2` down, wrapping around the frame.
pub fn moving_square(frames: usize, height: usize, width: usize, step: usize) -> Result<VideoSequence> {
    const SQUARE: [f64; 3] = [0.9, 0.35, 0.2];
    let side = (height / 3).max(1);
    let mut data = Vec::with_capacity(frames * 3 * height * width);
    for t in 0..frames {
        let x0 = (width / 6 + t * step) % width;
        let y0 = (height / 6 + t * step / 2) % height;
        for (c, &sq) in SQUARE.iter().enumerate() {
            for y in 0..height {
                for x in 0..width {
                    let inside = (x + width - x0) % width < side && (y + height - y0) % height < side;
                    let v = if inside {
                        sq
                    } else {
                        let gx = x as f64 / (width - 1).max(1) as f64;
                        let gy = y as f64 / (height - 1).max(1) as f64;
                        match c {
                            0 => 0.2 + 0.4 * gx,
                            1 => 0.3 + 0.4 * gy,
                            _ => 0.5 + 0.2 * (gx - gy),
                        }
                    };
                    data.push(v);
                }
            }
        }
    }
    VideoSequence::new(Tensor::new(&[frames, 3, height, width], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_moves() {
        let v = moving_square(3, 12, 12, 2).unwrap();
        assert_eq!(v.frames().shape(), &[3, 3, 12, 12]);
        assert_ne!(v.frame(0).unwrap(), v.frame(1).unwrap());
        assert!(v.frames().data().iter().all(|x| (0.0..=1.0).contains(x)));
    }
}
