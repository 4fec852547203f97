use serde::{Deserialize, Serialize};

use super::bbox::{BBox, PixelRect};
use crate::error::{Error, Result};

/// Binary pixel mask placed at an origin in the parent raster frame.
///
/// Bits are packed row-major, 64 pixels per word, each row padded to a whole
/// number of words. Coordinates passed to the accessors are absolute (raster
/// frame), so masks cut from different tiles compose without reallocation.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    x0: i64,
    y0: i64,
    width: usize,
    height: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("x0", &self.x0)
            .field("y0", &self.y0)
            .field("width", &self.width)
            .field("height", &self.height)
            .field("count", &self.count())
            .finish()
    }
}

impl BinaryMask {
    pub fn new(rect: PixelRect) -> Self {
        let width = rect.width.max(0) as usize;
        let height = rect.height.max(0) as usize;
        let words_per_row = width.div_ceil(64);
        Self {
            x0: rect.x0,
            y0: rect.y0,
            width,
            height,
            words_per_row,
            bits: vec![0; words_per_row * height],
        }
    }

    pub fn from_fn(rect: PixelRect, mut f: impl FnMut(i64, i64) -> bool) -> Self {
        let mut m = Self::new(rect);
        for y in rect.y0..rect.y1() {
            for x in rect.x0..rect.x1() {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Fully set mask covering `rect`.
    pub fn filled(rect: PixelRect) -> Self {
        let mut m = Self::new(rect);
        for row in 0..m.height {
            m.fill_row_local(row, 0, m.width);
        }
        m
    }

    pub fn rect(&self) -> PixelRect {
        PixelRect::new(self.x0, self.y0, self.width as i64, self.height as i64)
    }

    pub fn origin(&self) -> (i64, i64) {
        (self.x0, self.y0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    fn local(&self, x: i64, y: i64) -> Option<(usize, usize)> {
        let lx = x - self.x0;
        let ly = y - self.y0;
        if lx < 0 || ly < 0 || lx >= self.width as i64 || ly >= self.height as i64 {
            None
        } else {
            Some((lx as usize, ly as usize))
        }
    }

    pub fn get(&self, x: i64, y: i64) -> bool {
        match self.local(x, y) {
            Some((lx, ly)) => self.bits[ly * self.words_per_row + lx / 64] >> (lx % 64) & 1 == 1,
            None => false,
        }
    }

    /// Sets a pixel; writes outside the mask extent are ignored.
    pub fn set(&mut self, x: i64, y: i64, value: bool) {
        if let Some((lx, ly)) = self.local(x, y) {
            let w = &mut self.bits[ly * self.words_per_row + lx / 64];
            if value {
                *w |= 1 << (lx % 64);
            } else {
                *w &= !(1 << (lx % 64));
            }
        }
    }

    /// Sets local columns `[from, to)` of local row `row`.
    pub(crate) fn fill_row_local(&mut self, row: usize, from: usize, to: usize) {
        let to = to.min(self.width);
        if from >= to {
            return;
        }
        let base = row * self.words_per_row;
        let (fw, fb) = (from / 64, from % 64);
        let (lw, lb) = ((to - 1) / 64, (to - 1) % 64);
        let hi_mask = |b: usize| if b == 63 { u64::MAX } else { (1u64 << (b + 1)) - 1 };
        if fw == lw {
            self.bits[base + fw] |= hi_mask(lb) & !((1u64 << fb) - 1);
        } else {
            self.bits[base + fw] |= !((1u64 << fb) - 1);
            for w in fw + 1..lw {
                self.bits[base + w] = u64::MAX;
            }
            self.bits[base + lw] |= hi_mask(lb);
        }
    }

    /// Up to 64 bits of local row `row` starting at local column `start`.
    #[inline]
    fn bits_at(&self, row: usize, start: usize, n: usize) -> u64 {
        let base = row * self.words_per_row;
        let (w, off) = (start / 64, start % 64);
        let mut v = self.bits[base + w] >> off;
        if off > 0 && w + 1 < self.words_per_row {
            v |= self.bits[base + w + 1] << (64 - off);
        }
        if n < 64 {
            v &= (1u64 << n) - 1;
        }
        v
    }

    pub fn count(&self) -> u64 {
        self.bits.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    /// Tight pixel bounds of the set pixels.
    pub fn pixel_bounds(&self) -> Option<PixelRect> {
        let mut min_x = usize::MAX;
        let mut max_x = 0usize;
        let mut min_y = usize::MAX;
        let mut max_y = 0usize;
        for row in 0..self.height {
            let words = &self.bits[row * self.words_per_row..(row + 1) * self.words_per_row];
            let first = words.iter().position(|&w| w != 0);
            if let Some(fi) = first {
                let li = words.iter().rposition(|&w| w != 0).unwrap_or(fi);
                let lo = fi * 64 + words[fi].trailing_zeros() as usize;
                let hi = li * 64 + 63 - words[li].leading_zeros() as usize;
                min_x = min_x.min(lo);
                max_x = max_x.max(hi);
                min_y = min_y.min(row);
                max_y = max_y.max(row);
            }
        }
        (min_y != usize::MAX).then(|| {
            PixelRect::new(
                self.x0 + min_x as i64,
                self.y0 + min_y as i64,
                (max_x - min_x + 1) as i64,
                (max_y - min_y + 1) as i64,
            )
        })
    }

    /// Tight bounding box of the set pixels, in pixel-edge coordinates.
    pub fn bbox(&self) -> Option<BBox> {
        self.pixel_bounds().map(|r| r.to_bbox())
    }

    pub fn translated(&self, dx: i64, dy: i64) -> BinaryMask {
        let mut m = self.clone();
        m.x0 += dx;
        m.y0 += dy;
        m
    }

    /// Number of pixels set in both masks.
    pub fn intersection_count(&self, other: &BinaryMask) -> u64 {
        let Some(inter) = self.rect().intersection(&other.rect()) else {
            return 0;
        };
        let ax = (inter.x0 - self.x0) as usize;
        let bx = (inter.x0 - other.x0) as usize;
        let w = inter.width as usize;
        let mut total = 0u64;
        for y in inter.y0..inter.y1() {
            let ar = (y - self.y0) as usize;
            let br = (y - other.y0) as usize;
            let mut off = 0;
            while off < w {
                let n = (w - off).min(64);
                let a = self.bits_at(ar, ax + off, n);
                if a != 0 {
                    total += (a & other.bits_at(br, bx + off, n)).count_ones() as u64;
                }
                off += n;
            }
        }
        total
    }

    /// |a ∩ b| / |a ∪ b|; errors when both masks are empty.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        let (ca, cb) = (self.count(), other.count());
        iou_from_counts(ca, cb, self.intersection_count(other))
    }

    /// The part of the mask inside `rect`, re-framed to exactly `rect`.
    pub fn cropped(&self, rect: PixelRect) -> BinaryMask {
        let mut out = BinaryMask::new(rect);
        let Some(inter) = self.rect().intersection(&rect) else {
            return out;
        };
        let sx = (inter.x0 - self.x0) as usize;
        let dx = (inter.x0 - rect.x0) as usize;
        let w = inter.width as usize;
        for y in inter.y0..inter.y1() {
            let sr = (y - self.y0) as usize;
            let dr = (y - rect.y0) as usize;
            let mut off = 0;
            while off < w {
                let n = (w - off).min(64);
                let v = self.bits_at(sr, sx + off, n);
                if v != 0 {
                    out.or_bits_at(dr, dx + off, v);
                }
                off += n;
            }
        }
        out
    }

    fn or_bits_at(&mut self, row: usize, start: usize, v: u64) {
        let base = row * self.words_per_row;
        let (w, off) = (start / 64, start % 64);
        self.bits[base + w] |= v << off;
        if off > 0 && w + 1 < self.words_per_row {
            self.bits[base + w + 1] |= v >> (64 - off);
        }
    }

    /// Crop to the tight bounds of the set pixels (0×0 at the origin when empty).
    pub fn trimmed(&self) -> BinaryMask {
        match self.pixel_bounds() {
            Some(r) if r == self.rect() => self.clone(),
            Some(r) => self.cropped(r),
            None => BinaryMask::new(PixelRect::new(self.x0, self.y0, 0, 0)),
        }
    }

    /// Pixels set in both masks, framed like `self`.
    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        let clipped = other.cropped(self.rect());
        let mut out = self.clone();
        for (a, b) in out.bits.iter_mut().zip(clipped.bits.iter()) {
            *a &= *b;
        }
        out
    }

    /// Pixels set in either mask, framed by the union of both extents.
    pub fn or(&self, other: &BinaryMask) -> BinaryMask {
        let x0 = self.x0.min(other.x0);
        let y0 = self.y0.min(other.y0);
        let x1 = self.rect().x1().max(other.rect().x1());
        let y1 = self.rect().y1().max(other.rect().y1());
        let frame = PixelRect::new(x0, y0, x1 - x0, y1 - y0);
        let mut out = self.cropped(frame);
        let b = other.cropped(frame);
        for (a, b) in out.bits.iter_mut().zip(b.bits.iter()) {
            *a |= *b;
        }
        out
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        (0..self.height).flat_map(move |row| {
            let words = &self.bits[row * self.words_per_row..(row + 1) * self.words_per_row];
            words.iter().enumerate().flat_map(move |(wi, &w)| {
                let mut w = w;
                std::iter::from_fn(move || {
                    if w == 0 {
                        return None;
                    }
                    let b = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some((self.x0 + (wi * 64 + b) as i64, self.y0 + row as i64))
                })
            })
        })
    }

    /// Mean pixel-center coordinate of the set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0u64;
        let (mut sx, mut sy) = (0.0, 0.0);
        for (x, y) in self.iter_ones() {
            n += 1;
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Morphological dilation by a (2r+1)×(2r+1) square; the frame grows by `r`.
    pub fn dilated(&self, r: usize) -> BinaryMask {
        if r == 0 {
            return self.clone();
        }
        let ri = r as i64;
        let frame = PixelRect::new(
            self.x0 - ri,
            self.y0 - ri,
            self.width as i64 + 2 * ri,
            self.height as i64 + 2 * ri,
        );
        let src = self.cropped(frame);
        src.square_filter(r, true)
    }

    /// Morphological erosion by a (2r+1)×(2r+1) square; pixels outside the
    /// frame count as unset.
    pub fn eroded(&self, r: usize) -> BinaryMask {
        if r == 0 {
            return self.clone();
        }
        self.square_filter(r, false)
    }

    /// Separable max (dilate) or min (erode) filter over a square window.
    fn square_filter(&self, r: usize, dilate: bool) -> BinaryMask {
        let (w, h) = (self.width, self.height);
        let get = |m: &BinaryMask, lx: usize, ly: usize| m.bits[ly * m.words_per_row + lx / 64] >> (lx % 64) & 1 == 1;
        let mut horiz = BinaryMask::new(self.rect());
        let mut prefix = vec![0u32; w.max(h) + 1];
        for ly in 0..h {
            for lx in 0..w {
                prefix[lx + 1] = prefix[lx] + get(self, lx, ly) as u32;
            }
            for lx in 0..w {
                let lo = lx.saturating_sub(r);
                let hi = (lx + r + 1).min(w);
                let s = prefix[hi] - prefix[lo];
                let on = if dilate {
                    s > 0
                } else {
                    lx >= r && lx + r < w && s as usize == 2 * r + 1
                };
                if on {
                    horiz.bits[ly * horiz.words_per_row + lx / 64] |= 1 << (lx % 64);
                }
            }
        }
        let mut out = BinaryMask::new(self.rect());
        for lx in 0..w {
            for ly in 0..h {
                prefix[ly + 1] = prefix[ly] + get(&horiz, lx, ly) as u32;
            }
            for ly in 0..h {
                let lo = ly.saturating_sub(r);
                let hi = (ly + r + 1).min(h);
                let s = prefix[hi] - prefix[lo];
                let on = if dilate {
                    s > 0
                } else {
                    ly >= r && ly + r < h && s as usize == 2 * r + 1
                };
                if on {
                    out.bits[ly * out.words_per_row + lx / 64] |= 1 << (lx % 64);
                }
            }
        }
        out
    }

    /// Set pixels with at least one unset (or out-of-frame) 4-neighbour.
    pub fn boundary(&self) -> BinaryMask {
        let eroded = self.square_filter_cross();
        let mut out = self.clone();
        for (a, b) in out.bits.iter_mut().zip(eroded.bits.iter()) {
            *a &= !*b;
        }
        out
    }

    fn square_filter_cross(&self) -> BinaryMask {
        BinaryMask::from_fn(self.rect(), |x, y| {
            self.get(x, y) && self.get(x - 1, y) && self.get(x + 1, y) && self.get(x, y - 1) && self.get(x, y + 1)
        })
    }

    /// Whether any set pixel lies on the given side of `rect` (pixels on the
    /// first/last row or column of the rect).
    pub fn touches_edge(&self, rect: &PixelRect, side: Side) -> bool {
        let probe = match side {
            Side::Left => PixelRect::new(rect.x0, rect.y0, 1, rect.height),
            Side::Right => PixelRect::new(rect.x1() - 1, rect.y0, 1, rect.height),
            Side::Top => PixelRect::new(rect.x0, rect.y0, rect.width, 1),
            Side::Bottom => PixelRect::new(rect.x0, rect.y1() - 1, rect.width, 1),
        };
        !self.cropped(probe).is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

pub(crate) fn iou_from_counts(a: u64, b: u64, inter: u64) -> Result<f64> {
    let union = a + b - inter;
    if union == 0 {
        return Err(Error::EmptyUnion);
    }
    Ok(inter as f64 / union as f64)
}

/// Mask IoU in the shared raster frame (origins honoured).
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.iou(b)
}

/// Tight bounding box of a mask's set pixels.
pub fn mask_to_box(m: &BinaryMask) -> Option<BBox> {
    m.bbox()
}
