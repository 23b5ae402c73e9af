//! Lambertian image formation: chromaticities, mixed illumination maps,
//! white balance and relighting.
//!
//! Illuminant chromaticities are G-normalized: only the R/G and B/G ratios
//! are stored and the green component is implicitly 1.

use std::io::Cursor;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{AidError, Result};
use crate::tensor::Tensor;

/// Output ceiling applied by white balance and relighting.
pub const DEFAULT_WB_CEILING: f64 = 4.0;
pub const DEFAULT_PREVIEW_GAMMA: f64 = 2.2;

/// A G-normalized illuminant chromaticity `(R/G, B/G)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChromaticityRB {
    pub r: f64,
    pub b: f64,
}

impl ChromaticityRB {
    pub fn new(r: f64, b: f64) -> Result<Self> {
        if !(r.is_finite() && b.is_finite() && r > 0.0 && b > 0.0) {
            return Err(AidError::Domain(format!(
                "chromaticity ({r}, {b}) must be finite and strictly positive"
            )));
        }
        Ok(ChromaticityRB { r, b })
    }

    pub const NEUTRAL: ChromaticityRB = ChromaticityRB { r: 1.0, b: 1.0 };

    /// RGB vector with the green channel inserted.
    pub fn rgb(&self) -> [f64; 3] {
        [self.r, 1.0, self.b]
    }

    pub fn l1(&self, other: &ChromaticityRB) -> f64 {
        (self.r - other.r).abs() + (self.b - other.b).abs()
    }
}

/// Per-pixel illumination chromaticity.
#[derive(Clone, Debug, PartialEq)]
pub struct IlluminationMap {
    height: usize,
    width: usize,
    r: Tensor,
    b: Tensor,
}

impl IlluminationMap {
    pub fn new(r: Tensor, b: Tensor) -> Result<Self> {
        if r.ndim() != 2 || r.shape() != b.shape() {
            return Err(AidError::dim("illumination map", r.shape(), b.shape()));
        }
        let ok = |t: &Tensor| t.data().iter().all(|v| v.is_finite() && *v > 0.0);
        if !ok(&r) || !ok(&b) {
            return Err(AidError::Domain(
                "illumination map entries must be finite and strictly positive".into(),
            ));
        }
        Ok(IlluminationMap {
            height: r.shape()[0],
            width: r.shape()[1],
            r,
            b,
        })
    }

    pub fn uniform(height: usize, width: usize, c: ChromaticityRB) -> Self {
        IlluminationMap {
            height,
            width,
            r: Tensor::full(&[height, width], c.r),
            b: Tensor::full(&[height, width], c.b),
        }
    }

    /// Builds a map from an `HW×2` tensor of `(r, b)` rows.
    pub fn from_rows(height: usize, width: usize, rows: &Tensor) -> Result<Self> {
        if rows.shape() != [height * width, 2] {
            return Err(AidError::dim("illumination rows", rows.shape(), &[height * width, 2]));
        }
        let (mut r, mut b) = (Vec::with_capacity(height * width), Vec::with_capacity(height * width));
        for px in rows.data().chunks(2) {
            r.push(px[0]);
            b.push(px[1]);
        }
        Self::new(Tensor::new(&[height, width], r)?, Tensor::new(&[height, width], b)?)
    }

    /// `HW×2` tensor of `(r, b)` rows.
    pub fn to_rows(&self) -> Tensor {
        let data = self
            .r
            .data()
            .iter()
            .zip(self.b.data())
            .flat_map(|(&r, &b)| [r, b])
            .collect();
        Tensor::new(&[self.height * self.width, 2], data).expect("shape from map extents")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn r_plane(&self) -> &Tensor {
        &self.r
    }

    pub fn b_plane(&self) -> &Tensor {
        &self.b
    }

    pub fn pixel(&self, idx: usize) -> ChromaticityRB {
        ChromaticityRB {
            r: self.r.data()[idx],
            b: self.b.data()[idx],
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Per-pixel mixing weights of `K` illuminants, stored `K×H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMaps {
    maps: Tensor,
}

impl WeightMaps {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(maps: Tensor) -> Result<Self> {
        if maps.ndim() != 3 {
            return Err(AidError::dim("weight maps", maps.shape(), &[0, 0, 0]));
        }
        if maps.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(AidError::Domain("weight map entries must lie in [0, 1]".into()));
        }
        let wm = WeightMaps { maps };
        let worst = wm.max_sum_deviation();
        if worst > Self::SUM_TOLERANCE {
            return Err(AidError::Domain(format!(
                "weight maps must sum to 1 per pixel (deviation {worst:e})"
            )));
        }
        Ok(wm)
    }

    /// Builds weight maps from an `HW×K` attention tensor.
    pub fn from_attention(height: usize, width: usize, attn: &Tensor) -> Result<Self> {
        let hw = height * width;
        if attn.ndim() != 2 || attn.shape()[0] != hw {
            return Err(AidError::dim("attention", attn.shape(), &[hw, 0]));
        }
        let k = attn.shape()[1];
        let mut maps = vec![0.0; k * hw];
        for (px, row) in attn.data().chunks(k).enumerate() {
            for (slot, &v) in row.iter().enumerate() {
                maps[slot * hw + px] = v;
            }
        }
        Self::new(Tensor::new(&[k, height, width], maps)?)
    }

    /// The `HW×K` attention layout; inverse of [`WeightMaps::from_attention`].
    pub fn to_rows(&self) -> Result<Tensor> {
        let (k, hw) = (self.count(), self.num_pixels());
        self.maps.clone().reshape(&[k, hw])?.transpose()
    }

    pub fn count(&self) -> usize {
        self.maps.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.maps.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.maps.shape()[2]
    }

    pub fn num_pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn maps(&self) -> &Tensor {
        &self.maps
    }

    /// Flat `H·W` plane of illuminant `k`.
    pub fn plane(&self, k: usize) -> &[f64] {
        let hw = self.num_pixels();
        &self.maps.data()[k * hw..(k + 1) * hw]
    }

    pub fn max_weight(&self, k: usize) -> f64 {
        self.plane(k).iter().fold(0.0, |m, &v| m.max(v))
    }

    pub fn max_sum_deviation(&self) -> f64 {
        let hw = self.num_pixels();
        (0..hw)
            .map(|px| {
                let s: f64 = (0..self.count()).map(|k| self.maps.data()[k * hw + px]).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Linear-domain `3×H×W` image (R, G, B planes).
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    planes: Tensor,
}

impl RawImage {
    pub fn new(planes: Tensor) -> Result<Self> {
        if planes.ndim() != 3 || planes.shape()[0] != 3 {
            return Err(AidError::dim("raw image", planes.shape(), &[3, 0, 0]));
        }
        if planes.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AidError::Domain("raw image values must be finite and non-negative".into()));
        }
        Ok(RawImage { planes })
    }

    pub fn planes(&self) -> &Tensor {
        &self.planes
    }

    pub fn into_planes(self) -> Tensor {
        self.planes
    }

    pub fn height(&self) -> usize {
        self.planes.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.planes.shape()[2]
    }

    pub fn num_pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let hw = self.num_pixels();
        &self.planes.data()[c * hw..(c + 1) * hw]
    }

    /// Decodes an 8- or 16-bit RGB image, undoing a display gamma (`gamma = 1` keeps values).
    pub fn from_dynamic(img: &DynamicImage, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(AidError::Argument(format!("gamma must be positive, got {gamma}")));
        }
        let rgb = img.to_rgb32f();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let hw = w * h;
        let mut data = vec![0.0; 3 * hw];
        let high_depth = matches!(
            img,
            DynamicImage::ImageRgb16(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageRgba16(_)
        );
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                // 8-bit sources are re-derived exactly from the integer code.
                let v = if high_depth {
                    px[c] as f64
                } else {
                    (px[c] as f64 * 255.0).round() / 255.0
                };
                data[c * hw + i] = v.clamp(0.0, 1.0).powf(gamma);
            }
        }
        RawImage::new(Tensor::new(&[3, h, w], data)?)
    }

    pub fn decode_png(bytes: &[u8], gamma: f64) -> Result<Self> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| AidError::Argument(format!("cannot decode image: {e}")))?;
        Self::from_dynamic(&img, gamma)
    }

    /// Keeps the top-left `height×width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || height > self.height() || width > self.width() {
            return Err(AidError::Argument(format!(
                "crop {height}x{width} outside image {}x{}",
                self.height(),
                self.width()
            )));
        }
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            let plane = self.channel(c);
            for y in 0..height {
                data.extend_from_slice(&plane[y * self.width()..y * self.width() + width]);
            }
        }
        RawImage::new(Tensor::new(&[3, height, width], data)?)
    }
}

/// Mixed illumination `Σ_k α_k(x) ℓ_k`.
pub fn compose_illumination(chromas: &[ChromaticityRB], weights: &WeightMaps) -> Result<IlluminationMap> {
    if chromas.len() != weights.count() {
        return Err(AidError::dim("compose_illumination", &[chromas.len()], &[weights.count()]));
    }
    let hw = weights.num_pixels();
    let mut r = vec![0.0; hw];
    let mut b = vec![0.0; hw];
    for (k, c) in chromas.iter().enumerate() {
        for (px, &a) in weights.plane(k).iter().enumerate() {
            r[px] += a * c.r;
            b[px] += a * c.b;
        }
    }
    let shape = [weights.height(), weights.width()];
    IlluminationMap::new(Tensor::new(&shape, r)?, Tensor::new(&shape, b)?)
}

fn check_same_extent(img: &RawImage, map: &IlluminationMap) -> Result<()> {
    if img.height() != map.height() || img.width() != map.width() {
        return Err(AidError::dim(
            "image vs illumination map",
            &[img.height(), img.width()],
            &[map.height(), map.width()],
        ));
    }
    Ok(())
}

/// Scales R and B by `new / old` per pixel, leaving G untouched, then clips at `ceiling`.
///
/// The ratio is formed first so `relight(img, m, m, _)` reproduces `img` bit for bit.
pub fn relight(
    img: &RawImage,
    old: &IlluminationMap,
    new: &IlluminationMap,
    ceiling: f64,
) -> Result<RawImage> {
    check_same_extent(img, old)?;
    check_same_extent(img, new)?;
    let positive = |t: &Tensor| t.data().iter().all(|&v| v > 0.0 && v.is_finite());
    if !positive(&old.r) || !positive(&old.b) {
        return Err(AidError::Domain("relight source map must be strictly positive".into()));
    }
    let hw = img.num_pixels();
    let mut data = img.planes().data().to_vec();
    for (plane, old_p, new_p) in [(0usize, &old.r, &new.r), (2, &old.b, &new.b)] {
        let dst = &mut data[plane * hw..(plane + 1) * hw];
        for ((v, &o), &n) in dst.iter_mut().zip(old_p.data()).zip(new_p.data()) {
            *v = (*v * (n / o)).min(ceiling);
        }
    }
    let g = &mut data[hw..2 * hw];
    g.iter_mut().for_each(|v| *v = v.min(ceiling));
    RawImage::new(Tensor::new(img.planes().shape(), data)?)
}

/// Divides out the illumination (G of the illuminant is 1). Equivalent to
/// relighting towards a neutral map.
pub fn apply_white_balance(img: &RawImage, map: &IlluminationMap, ceiling: f64) -> Result<RawImage> {
    check_same_extent(img, map)?;
    let neutral = IlluminationMap::uniform(map.height(), map.width(), ChromaticityRB::NEUTRAL);
    relight(img, map, &neutral, ceiling)
}

/// Multiplies R and B by the illumination; the inverse of [`apply_white_balance`].
pub fn illuminate(img: &RawImage, map: &IlluminationMap) -> Result<RawImage> {
    check_same_extent(img, map)?;
    let hw = img.num_pixels();
    let mut data = img.planes().data().to_vec();
    for (plane, m) in [(0usize, &map.r), (2, &map.b)] {
        for (v, &s) in data[plane * hw..(plane + 1) * hw].iter_mut().zip(m.data()) {
            *v *= s;
        }
    }
    RawImage::new(Tensor::new(img.planes().shape(), data)?)
}

/// Display preview: clamp to `[0, 1]`, apply `x^(1/gamma)`, quantize to 8 bits.
pub fn to_preview(img: &RawImage, gamma: f64) -> Result<RgbImage> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(AidError::Argument(format!("preview gamma must be positive, got {gamma}")));
    }
    let (h, w) = (img.height(), img.width());
    let hw = h * w;
    let src = img.planes().data();
    let mut out = RgbImage::new(w as u32, h as u32);
    for (i, px) in out.pixels_mut().enumerate() {
        for c in 0..3 {
            px[c] = quantize(src[c * hw + i], gamma);
        }
    }
    Ok(out)
}

pub(crate) fn quantize(v: f64, gamma: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (255.0 * v.powf(1.0 / gamma)).round() as u8
}

/// Grayscale rendering of a weight plane: 0 → black, 1 → white.
pub fn weight_preview(weights: &WeightMaps, k: usize) -> Result<GrayImage> {
    if k >= weights.count() {
        return Err(AidError::Argument(format!(
            "slot {k} out of range for {} weight maps",
            weights.count()
        )));
    }
    let mut out = GrayImage::new(weights.width() as u32, weights.height() as u32);
    for (px, &v) in out.pixels_mut().zip(weights.plane(k)) {
        px[0] = quantize(v, 1.0);
    }
    Ok(out)
}

pub fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| AidError::Argument(format!("png encoding failed: {e}")))?;
    Ok(buf.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(r: f64, b: f64) -> ChromaticityRB {
        ChromaticityRB::new(r, b).unwrap()
    }

    fn random_weights(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> WeightMaps {
        let hw = h * w;
        let raw: Vec<f64> = (0..k * hw).map(|_| rng.random_range(0.01..1.0)).collect();
        let mut maps = vec![0.0; k * hw];
        for px in 0..hw {
            let s: f64 = (0..k).map(|j| raw[j * hw + px]).sum();
            for j in 0..k {
                maps[j * hw + px] = raw[j * hw + px] / s;
            }
        }
        WeightMaps::new(Tensor::new(&[k, h, w], maps).unwrap()).unwrap()
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RawImage {
        RawImage::new(Tensor::from_fn(&[3, h, w], |_| rng.random_range(0.01..1.0))).unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> IlluminationMap {
        IlluminationMap::new(
            Tensor::from_fn(&[h, w], |_| rng.random_range(0.3..1.5)),
            Tensor::from_fn(&[h, w], |_| rng.random_range(0.3..1.5)),
        )
        .unwrap()
    }

    #[test]
    fn chromaticity_rejects_non_positive() {
        assert!(ChromaticityRB::new(0.0, 1.0).is_err());
        assert!(ChromaticityRB::new(1.0, -0.2).is_err());
        assert!(ChromaticityRB::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn compose_single_and_midpoint() {
        let w1 = WeightMaps::new(Tensor::ones(&[1, 2, 3])).unwrap();
        let m = compose_illumination(&[c(0.8, 0.6)], &w1).unwrap();
        assert!(m.r_plane().data().iter().all(|&v| v == 0.8));
        assert!(m.b_plane().data().iter().all(|&v| v == 0.6));

        let w2 = WeightMaps::new(Tensor::full(&[2, 2, 2], 0.5)).unwrap();
        let m = compose_illumination(&[c(1.0, 0.4), c(0.4, 1.2)], &w2).unwrap();
        assert!(m.r_plane().data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        assert!(m.b_plane().data().iter().all(|&v| (v - 0.8).abs() < 1e-15));
    }

    #[test]
    fn compose_matches_per_pixel_loop_and_stays_in_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (h, w) = (5, 7);
            let chromas: Vec<_> = (0..3)
                .map(|_| c(rng.random_range(0.3..1.2), rng.random_range(0.3..1.2)))
                .collect();
            let weights = random_weights(&mut rng, 3, h, w);
            let m = compose_illumination(&chromas, &weights).unwrap();
            let (rmin, rmax) = chromas.iter().fold((f64::MAX, 0.0f64), |(lo, hi), c| (lo.min(c.r), hi.max(c.r)));
            let (bmin, bmax) = chromas.iter().fold((f64::MAX, 0.0f64), |(lo, hi), c| (lo.min(c.b), hi.max(c.b)));
            for y in 0..h {
                for x in 0..w {
                    let (mut er, mut eb) = (0.0, 0.0);
                    for (k, ch) in chromas.iter().enumerate() {
                        let a = weights.maps().at3(k, y, x);
                        er += a * ch.r;
                        eb += a * ch.b;
                    }
                    let got = m.pixel(y * w + x);
                    assert!((got.r - er).abs() < 1e-14 && (got.b - eb).abs() < 1e-14);
                    assert!(got.r >= rmin - 1e-12 && got.r <= rmax + 1e-12);
                    assert!(got.b >= bmin - 1e-12 && got.b <= bmax + 1e-12);
                }
            }
        }
    }

    #[test]
    fn compose_rejects_length_mismatch() {
        let w = WeightMaps::new(Tensor::ones(&[1, 2, 2])).unwrap();
        assert!(matches!(
            compose_illumination(&[c(1.0, 1.0), c(0.5, 0.5)], &w),
            Err(AidError::Dimension { .. })
        ));
    }

    #[test]
    fn weight_maps_validate_simplex() {
        assert!(WeightMaps::new(Tensor::full(&[2, 2, 2], 0.4)).is_err());
        assert!(WeightMaps::new(Tensor::full(&[1, 2, 2], 1.2)).is_err());
    }

    #[test]
    fn white_balance_of_gray_reflectance_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = random_map(&mut rng, 4, 4);
        let gray = RawImage::new(Tensor::full(&[3, 4, 4], 0.3)).unwrap();
        let lit = illuminate(&gray, &map).unwrap();
        let wb = apply_white_balance(&lit, &map, DEFAULT_WB_CEILING).unwrap();
        assert!(wb.planes().data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn identity_map_leaves_image_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(&mut rng, 3, 5);
        let id = IlluminationMap::uniform(3, 5, ChromaticityRB::NEUTRAL);
        assert_eq!(apply_white_balance(&img, &id, DEFAULT_WB_CEILING).unwrap(), img);
    }

    #[test]
    fn white_balance_inverts_illumination() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let img = random_image(&mut rng, 6, 6);
            let map = random_map(&mut rng, 6, 6);
            let wb = apply_white_balance(&img, &map, f64::INFINITY).unwrap();
            let back = illuminate(&wb, &map).unwrap();
            for (a, b) in back.planes().data().iter().zip(img.planes().data()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn white_balance_clips_and_rejects_bad_maps() {
        let img = RawImage::new(Tensor::full(&[3, 1, 1], 1.0)).unwrap();
        let dim = IlluminationMap::uniform(1, 1, c(0.1, 0.1));
        let wb = apply_white_balance(&img, &dim, DEFAULT_WB_CEILING).unwrap();
        assert_eq!(wb.planes().data(), &[4.0, 1.0, 4.0]);
        assert!(IlluminationMap::new(Tensor::zeros(&[1, 1]), Tensor::ones(&[1, 1])).is_err());
    }

    #[test]
    fn relight_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_image(&mut rng, 5, 4);
        let m = random_map(&mut rng, 5, 4);
        let same = relight(&img, &m, &m, DEFAULT_WB_CEILING).unwrap();
        assert!(same.planes().bit_eq(img.planes()));

        let ones = IlluminationMap::uniform(5, 4, ChromaticityRB::NEUTRAL);
        let a = relight(&img, &m, &ones, DEFAULT_WB_CEILING).unwrap();
        let b = apply_white_balance(&img, &m, DEFAULT_WB_CEILING).unwrap();
        assert!(a.planes().bit_eq(b.planes()));
    }

    #[test]
    fn relight_single_illuminant_edit_matches_per_pixel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, w) = (4, 6);
        let img = random_image(&mut rng, h, w);
        let weights = random_weights(&mut rng, 2, h, w);
        let chromas = [c(0.9, 0.4), c(0.45, 0.85)];
        let edited = [c(0.9, 0.4), c(0.6, 0.6)];
        let old = compose_illumination(&chromas, &weights).unwrap();
        let new = compose_illumination(&edited, &weights).unwrap();
        let out = relight(&img, &old, &new, DEFAULT_WB_CEILING).unwrap();
        for px in 0..h * w {
            let (a0, a1) = (weights.plane(0)[px], weights.plane(1)[px]);
            let or = a0 * 0.9 + a1 * 0.45;
            let ob = a0 * 0.4 + a1 * 0.85;
            let nr = a0 * 0.9 + a1 * 0.6;
            let nb = a0 * 0.4 + a1 * 0.6;
            assert!((out.channel(0)[px] - img.channel(0)[px] * nr / or).abs() < 1e-12);
            assert_eq!(out.channel(1)[px], img.channel(1)[px]);
            assert!((out.channel(2)[px] - img.channel(2)[px] * nb / ob).abs() < 1e-12);
        }
    }

    #[test]
    fn preview_quantization() {
        let img = RawImage::new(Tensor::new(&[3, 1, 1], vec![1.0, 0.5, 3.0]).unwrap()).unwrap();
        let p1 = to_preview(&img, 1.0).unwrap();
        assert_eq!(p1.get_pixel(0, 0).0, [255, 128, 255]);
        let p22 = to_preview(&img, 2.2).unwrap();
        // round(255 * 0.5^(1/2.2)) = round(186.08)
        assert_eq!(p22.get_pixel(0, 0).0[1], 186);
        assert!(to_preview(&img, 0.0).is_err());
    }

    #[test]
    fn png_round_trip_through_inverse_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = random_image(&mut rng, 4, 4);
        let preview = to_preview(&img, 1.0).unwrap();
        let bytes = encode_png(&DynamicImage::ImageRgb8(preview.clone())).unwrap();
        let back = RawImage::decode_png(&bytes, 1.0).unwrap();
        let again = to_preview(&back, 1.0).unwrap();
        assert_eq!(preview, again);
        assert!(RawImage::decode_png(b"not a png", 2.2).is_err());
    }
}
