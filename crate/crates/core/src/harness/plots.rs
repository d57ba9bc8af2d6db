//! Minimal raster charts drawn straight into RGB buffers.

use image::{Rgb, RgbImage};
use ndarray::{Array2, Array3};

pub type Color = [u8; 3];

pub const WHITE: Color = [255, 255, 255];
pub const BLACK: Color = [0, 0, 0];
pub const GRID: Color = [225, 225, 225];
pub const PALETTE: [Color; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
];

const GLYPH_W: u32 = 5;

fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0, 0, 0, 0, 0, 0x0C, 0x0C],
        ',' => [0, 0, 0, 0, 0x0C, 0x04, 0x08],
        '-' => [0, 0, 0, 0x1F, 0, 0, 0],
        '_' => [0, 0, 0, 0, 0, 0, 0x1F],
        ':' => [0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0],
        '=' => [0, 0, 0x1F, 0, 0x1F, 0, 0],
        '/' => [0, 0x01, 0x02, 0x04, 0x08, 0x10, 0],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        _ => [0; 7],
    }
}

/// An RGB image with clipped drawing primitives.
pub struct Canvas {
    pub img: RgbImage,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            img: RgbImage::from_pixel(width, height, Rgb(WHITE)),
        }
    }

    pub fn width(&self) -> u32 {
        self.img.width()
    }

    pub fn height(&self) -> u32 {
        self.img.height()
    }

    pub fn put(&mut self, x: i64, y: i64, c: Color) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Color) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, c);
            }
        }
    }

    /// Bresenham segment.
    pub fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Color) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn thick_line(&mut self, a: (i64, i64), b: (i64, i64), c: Color) {
        for (ox, oy) in [(0, 0), (1, 0), (0, 1)] {
            self.line((a.0 + ox, a.1 + oy), (b.0 + ox, b.1 + oy), c);
        }
    }

    pub fn text(&mut self, x: i64, y: i64, s: &str, c: Color) {
        for (i, ch) in s.chars().enumerate() {
            let rows = glyph(ch);
            let gx = x + i as i64 * (GLYPH_W as i64 + 1);
            for (r, bits) in rows.iter().enumerate() {
                for b in 0..GLYPH_W {
                    if bits & (1 << (GLYPH_W - 1 - b)) != 0 {
                        self.put(gx + b as i64, y + r as i64, c);
                    }
                }
            }
        }
    }

    pub fn text_width(s: &str) -> i64 {
        s.chars().count() as i64 * (GLYPH_W as i64 + 1)
    }

    /// Copies `tile` with its top-left corner at `(x, y)`.
    pub fn blit(&mut self, tile: &RgbImage, x: i64, y: i64) {
        for (tx, ty, p) in tile.enumerate_pixels() {
            self.put(x + tx as i64, y + ty as i64, p.0);
        }
    }
}

/// Short tick label.
pub fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

/// Plot area inside a canvas, mapping data coordinates to pixels.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub left: i64,
    pub top: i64,
    pub right: i64,
    pub bottom: i64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Frame {
    pub fn px(&self, x: f64) -> i64 {
        let (lo, hi) = self.x_range;
        let t = if hi > lo { (x - lo) / (hi - lo) } else { 0.5 };
        self.left + (t * (self.right - self.left) as f64).round() as i64
    }

    pub fn py(&self, y: f64) -> i64 {
        let (lo, hi) = self.y_range;
        let t = if hi > lo { (y - lo) / (hi - lo) } else { 0.5 };
        self.bottom - (t * (self.bottom - self.top) as f64).round() as i64
    }

    /// Axes, light grid and five labeled ticks per axis.
    pub fn draw_axes(&self, c: &mut Canvas, title: &str, x_label: &str, y_label: &str) {
        for i in 0..=4 {
            let fx = self.x_range.0 + (self.x_range.1 - self.x_range.0) * i as f64 / 4.0;
            let fy = self.y_range.0 + (self.y_range.1 - self.y_range.0) * i as f64 / 4.0;
            let (x, y) = (self.px(fx), self.py(fy));
            c.line((x, self.top), (x, self.bottom), GRID);
            c.line((self.left, y), (self.right, y), GRID);
            let lx = tick_label(fx);
            c.text(x - Canvas::text_width(&lx) / 2, self.bottom + 5, &lx, BLACK);
            let ly = tick_label(fy);
            c.text(self.left - Canvas::text_width(&ly) - 4, y - 3, &ly, BLACK);
        }
        c.line((self.left, self.bottom), (self.right, self.bottom), BLACK);
        c.line((self.left, self.top), (self.left, self.bottom), BLACK);
        c.text(self.left, self.top - 28, title, BLACK);
        c.text(
            self.left - Canvas::text_width(y_label) / 2,
            self.top - 14,
            y_label,
            BLACK,
        );
        c.text(
            (self.left + self.right) / 2 - Canvas::text_width(x_label) / 2,
            self.bottom + 18,
            x_label,
            BLACK,
        );
    }
}

/// A named polyline.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Line chart with markers and a legend. `y_range` defaults to the data range.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    y_range: Option<(f64, f64)>,
) -> RgbImage {
    let mut c = Canvas::new(520, 340);
    let x_range = padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let y_range = y_range
        .unwrap_or_else(|| padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))));
    let frame = Frame {
        left: 70,
        top: 50,
        right: 380,
        bottom: 300,
        x_range,
        y_range,
    };
    frame.draw_axes(&mut c, title, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(i64, i64)> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| (frame.px(x), frame.py(y)))
            .collect();
        for w in pts.windows(2) {
            c.thick_line(w[0], w[1], color);
        }
        for &(x, y) in &pts {
            c.fill_rect(x - 2, y - 2, x + 2, y + 2, color);
        }
        let ly = frame.top + 12 * i as i64;
        c.fill_rect(392, ly, 400, ly + 6, color);
        c.text(406, ly, &s.name, BLACK);
    }
    c.img
}

/// Shared histogram bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Bins {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Bins {
    pub fn covering(values: impl Iterator<Item = f64>, n: usize) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        Self { lo, hi, n }
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / self.n as f64
    }

    /// Bin of `v`; the upper edge belongs to the last bin, values outside are clamped.
    pub fn index(&self, v: f64) -> usize {
        let t = (v - self.lo) / (self.hi - self.lo);
        ((t * self.n as f64).floor().max(0.0) as usize).min(self.n - 1)
    }

    pub fn counts(&self, values: &[f64]) -> Vec<usize> {
        let mut c = vec![0; self.n];
        for &v in values {
            c[self.index(v)] += 1;
        }
        c
    }
}

/// Overlaid normal/anomalous count bars for one or more panels stacked vertically.
pub fn histogram_panels(panels: &[(String, Vec<usize>, Vec<usize>)], bins: &Bins) -> RgbImage {
    let panel_h = 220i64;
    let mut c = Canvas::new(520, (panel_h * panels.len() as i64 + 30) as u32);
    for (p, (title, normal, anomalous)) in panels.iter().enumerate() {
        let top = 50 + p as i64 * panel_h;
        let max = normal
            .iter()
            .chain(anomalous)
            .copied()
            .max()
            .unwrap_or(1)
            .max(1);
        let frame = Frame {
            left: 60,
            top,
            right: 380,
            bottom: top + panel_h - 60,
            x_range: (bins.lo, bins.hi),
            y_range: (0.0, max as f64),
        };
        frame.draw_axes(&mut c, title, "score", "count");
        for (series, color, shift) in [(normal, PALETTE[0], 0i64), (anomalous, PALETTE[1], 2)] {
            for (i, &n) in series.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let (x0, x1) = (
                    frame.px(bins.edge(i)) + shift,
                    frame.px(bins.edge(i + 1)) - 2 + shift,
                );
                let y = frame.py(n as f64);
                for yy in y..frame.bottom {
                    for xx in x0..=x1.max(x0) {
                        // Column stripes keep both classes visible where they overlap.
                        if (xx + yy) % 2 == 0 || shift == 0 {
                            c.put(xx, yy, color);
                        }
                    }
                }
            }
        }
        c.fill_rect(392, top, 400, top + 6, PALETTE[0]);
        c.text(406, top, "normal", BLACK);
        c.fill_rect(392, top + 12, 400, top + 18, PALETTE[1]);
        c.text(406, top + 12, "anomalous", BLACK);
    }
    c.img
}

/// `[3, H, W]` pixels in `[0, 1]` as an RGB image.
pub fn rgb_tile(pixels: &Array3<f64>) -> RgbImage {
    let (_, h, w) = pixels.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v =
            |c: usize| (pixels[[c, y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v(0), v(1), v(2)])
    })
}

pub fn mask_tile(mask: &Array2<u8>) -> RgbImage {
    let (h, w) = mask.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        if mask[[y as usize, x as usize]] > 0 {
            Rgb(WHITE)
        } else {
            Rgb(BLACK)
        }
    })
}

/// Map values scaled to `[0, 1]` between the map's own minimum and maximum.
pub fn normalize_map(map: &Array2<f64>) -> Array2<f64> {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        map.mapv(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
    } else {
        map.mapv(|_| 0.0)
    }
}

/// Black-red-yellow heat colors of a normalized map.
pub fn heat_tile(map: &Array2<f64>) -> RgbImage {
    let n = normalize_map(map);
    let (h, w) = n.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let t = n[[y as usize, x as usize]];
        let r = (t * 2.0).min(1.0);
        let g = (t * 2.0 - 1.0).max(0.0);
        Rgb([(r * 255.0).round() as u8, (g * 255.0).round() as u8, 0])
    })
}

/// Input blended toward red in proportion to the normalized map. Pixels where
/// the map is zero keep their input color exactly.
pub fn overlay_tile(pixels: &Array3<f64>, map: &Array2<f64>) -> RgbImage {
    let n = normalize_map(map);
    let base = rgb_tile(pixels);
    RgbImage::from_fn(base.width(), base.height(), |x, y| {
        let a = n[[y as usize, x as usize]];
        if a == 0.0 {
            return *base.get_pixel(x, y);
        }
        let p = base.get_pixel(x, y).0;
        let mix = |v: u8, target: f64| ((1.0 - a) * v as f64 + a * target).round() as u8;
        Rgb([mix(p[0], 255.0), mix(p[1], 0.0), mix(p[2], 0.0)])
    })
}

fn upscale(tile: &RgbImage, factor: u32) -> RgbImage {
    image::imageops::resize(
        tile,
        tile.width() * factor,
        tile.height() * factor,
        image::imageops::FilterType::Nearest,
    )
}

/// Input, ground truth, heat map and overlay side by side.
pub fn overlay_panel(
    title: &str,
    pixels: &Array3<f64>,
    mask: &Array2<u8>,
    map: &Array2<f64>,
) -> RgbImage {
    let (_, h, w) = pixels.dim();
    let factor = (128 / w.max(h).max(1)).max(1) as u32;
    let tiles = [
        ("input", rgb_tile(pixels)),
        ("truth", mask_tile(mask)),
        ("map", heat_tile(map)),
        ("overlay", overlay_tile(pixels, map)),
    ];
    let tw = w as u32 * factor;
    let th = h as u32 * factor;
    let mut c = Canvas::new(4 * (tw + 8) + 8, th + 40);
    c.text(8, 4, title, BLACK);
    for (i, (name, tile)) in tiles.iter().enumerate() {
        let x = 8 + i as i64 * (tw + 8) as i64;
        c.text(x, 16, name, BLACK);
        c.blit(&upscale(tile, factor), x, 28);
    }
    c.img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_highlights_exactly_the_mask() {
        let pixels = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| {
            ((c * 7 + y * 3 + x) % 11) as f64 / 10.0
        });
        let mask = Array2::from_shape_fn((16, 16), |(y, x)| {
            u8::from((4..9).contains(&y) && (6..12).contains(&x))
        });
        let map = mask.mapv(f64::from);
        let over = overlay_tile(&pixels, &map);
        let base = rgb_tile(&pixels);
        for ((y, x), &m) in mask.indexed_iter() {
            let (o, b) = (
                over.get_pixel(x as u32, y as u32),
                base.get_pixel(x as u32, y as u32),
            );
            if m == 1 {
                assert_eq!(o.0, [255, 0, 0], "({y}, {x})");
            } else {
                assert_eq!(o, b, "({y}, {x})");
            }
        }
    }

    #[test]
    fn bins_cover_their_range() {
        let b = Bins::covering([0.0, 1.0, 0.5].into_iter(), 4);
        assert_eq!(
            b.counts(&[0.0, 0.24, 0.25, 0.99, 1.0, 7.0, -1.0]),
            vec![3, 1, 0, 3]
        );
        assert_eq!(b.edge(4), 1.0);
        let flat = Bins::covering([2.0, 2.0].into_iter(), 3);
        assert!(flat.hi > flat.lo);
    }

    #[test]
    fn charts_have_the_expected_size() {
        let s = Series {
            name: "rd".into(),
            points: vec![(0.0, 0.5), (1.0, 0.7)],
        };
        let img = line_chart("t", "x", "y", &[s], None);
        assert_eq!(img.dimensions(), (520, 340));
        // The series color appears somewhere in the plot area.
        assert!(img.pixels().any(|p| p.0 == PALETTE[0]));
        let bins = Bins::covering([0.0, 1.0].into_iter(), 5);
        let h = histogram_panels(
            &[("a".into(), vec![1, 2, 0, 0, 1], vec![0, 0, 1, 1, 0])],
            &bins,
        );
        assert!(h.pixels().any(|p| p.0 == PALETTE[1]));
    }

    #[test]
    fn glyphs_render() {
        let mut c = Canvas::new(40, 10);
        c.text(0, 0, "0.5", BLACK);
        assert!(c.img.pixels().any(|p| p.0 == BLACK));
        assert_eq!(Canvas::text_width("abc"), 18);
    }
}
