//! COCO run-length encoding: column-major runs starting with unset pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, PixelRect};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    /// `[height, width]`, as in COCO.
    pub size: [u64; 2],
    pub counts: Vec<u64>,
}

impl RleMask {
    /// Encode the part of `mask` inside `frame`; coordinates are relative to the frame origin.
    pub fn encode(mask: &BinaryMask, frame: PixelRect) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for x in frame.x0..frame.x1() {
            for y in frame.y0..frame.y1() {
                if mask.get(x, y) != current {
                    counts.push(run);
                    run = 0;
                    current = !current;
                }
                run += 1;
            }
        }
        counts.push(run);
        Self {
            size: [frame.height as u64, frame.width as u64],
            counts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.counts.iter().sum();
        let expected = self.size[0] * self.size[1];
        if total != expected {
            return Err(Error::InvalidRle(format!(
                "counts sum to {total}, expected {}×{} = {expected}",
                self.size[0], self.size[1]
            )));
        }
        Ok(())
    }

    /// Decode into a mask framed at `(x0, y0)` with the RLE's size.
    pub fn decode_at(&self, x0: i64, y0: i64) -> Result<BinaryMask> {
        self.validate()?;
        let (h, w) = (self.size[0] as i64, self.size[1] as i64);
        let mut mask = BinaryMask::new(PixelRect::new(x0, y0, w, h));
        let mut pos = 0i64;
        for (i, &n) in self.counts.iter().enumerate() {
            if i % 2 == 1 {
                for p in pos..pos + n as i64 {
                    mask.set(x0 + p / h, y0 + p % h, true);
                }
            }
            pos += n as i64;
        }
        Ok(mask)
    }

    pub fn decode(&self) -> Result<BinaryMask> {
        self.decode_at(0, 0)
    }

    /// The compact string form used by pycocotools.
    pub fn to_compressed(&self) -> String {
        let mut s = Vec::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let mut x = c as i64;
            if i > 2 {
                x -= self.counts[i - 2] as i64;
            }
            loop {
                let mut c = (x & 0x1f) as u8;
                x >>= 5;
                let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    c |= 0x20;
                }
                s.push(c + 48);
                if !more {
                    break;
                }
            }
        }
        String::from_utf8(s).expect("ascii")
    }

    pub fn from_compressed(size: [u64; 2], s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        let mut counts: Vec<u64> = Vec::new();
        let mut p = 0;
        while p < bytes.len() {
            let mut x: i64 = 0;
            let mut k = 0;
            loop {
                let Some(&b) = bytes.get(p) else {
                    return Err(Error::InvalidRle("truncated count string".into()));
                };
                if !(48..48 + 64).contains(&b) || k > 12 {
                    return Err(Error::InvalidRle(format!(
                        "bad character {:?} in count string",
                        b as char
                    )));
                }
                let c = (b - 48) as i64;
                x |= (c & 0x1f) << (5 * k);
                p += 1;
                k += 1;
                if c & 0x20 == 0 {
                    if c & 0x10 != 0 {
                        x |= -1i64 << (5 * k);
                    }
                    break;
                }
            }
            if counts.len() > 2 {
                x += counts[counts.len() - 2] as i64;
            }
            if x < 0 {
                return Err(Error::InvalidRle("negative run length".into()));
            }
            counts.push(x as u64);
        }
        let rle = Self { size, counts };
        rle.validate()?;
        Ok(rle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_example() {
        // 3×2 mask, column-major: col0 = [0,1,1], col1 = [1,0,0]
        let mut m = BinaryMask::new(PixelRect::new(0, 0, 2, 3));
        m.set(0, 1, true);
        m.set(0, 2, true);
        m.set(1, 0, true);
        let r = RleMask::encode(&m, m.rect());
        assert_eq!(r.size, [3, 2]);
        assert_eq!(r.counts, vec![1, 3, 2]);
        assert_eq!(r.decode().unwrap(), m);
    }

    #[test]
    fn leading_set_pixel_has_zero_run() {
        let m = BinaryMask::filled(PixelRect::new(0, 0, 2, 2));
        assert_eq!(RleMask::encode(&m, m.rect()).counts, vec![0, 4]);
    }

    #[test]
    fn bad_sum_rejected() {
        let r = RleMask {
            size: [2, 2],
            counts: vec![1, 2],
        };
        assert!(matches!(r.decode(), Err(Error::InvalidRle(_))));
    }

    #[test]
    fn compressed_string_matches_pycocotools() {
        // pycocotools.mask.encode of a 4×4 mask with a 2×2 block at (1,1)
        let r = RleMask {
            size: [4, 4],
            counts: vec![5, 2, 2, 2, 5],
        };
        assert_eq!(r.to_compressed(), "52203");
        assert_eq!(RleMask::from_compressed([4, 4], "52203").unwrap(), r);
    }

    #[test]
    fn compressed_string_with_negative_deltas() {
        // pycocotools.mask.encode of the 13×9 pattern below
        let m = BinaryMask::from_fn(PixelRect::new(0, 0, 9, 13), |x, y| (x * 7 + y * 3 + x * y) % 5 < 2);
        let expected = "011010O010O0012000:OF1000OO0O010O0000010O010O0012000:OF100O";
        let r = RleMask::encode(&m, m.rect());
        assert_eq!(r.to_compressed(), expected);
        assert_eq!(
            RleMask::from_compressed([13, 9], expected).unwrap().decode().unwrap(),
            m
        );
    }
}
