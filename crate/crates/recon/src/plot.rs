//! Minimal PNG line plot for the benchmark report: mean PSNR against
//! training-set size on a log x-axis, data-free methods as horizontal
//! lines. Self-contained 5x7 bitmap font, no plotting dependencies.

use image::{Rgb, RgbImage};

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

/// 5x7 glyphs, one row per scanline, low 5 bits used.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x1E, 0x11, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x1E, 0x10, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x1E, 0x10, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0E],
        'H' => [0x11, 0x11, 0x1F, 0x11, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x01, 0x01, 0x01, 0x01, 0x11, 0x11, 0x0E],
        'K' => [0x11, 0x12, 0x1C, 0x14, 0x12, 0x11, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x11, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x0E, 0x01, 0x01, 0x11, 0x0E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x0A, 0x04, 0x04, 0x04, 0x0A, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x06, 0x08, 0x10, 0x1F],
        '3' => [0x0E, 0x11, 0x01, 0x06, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        _ => [0; 7],
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for c in text.chars() {
        if c != ' ' {
            let g = glyph(c);
            for (row, bits) in g.iter().enumerate() {
                for col in 0..GLYPH_W {
                    if bits & (1 << (GLYPH_W - 1 - col)) != 0 {
                        put(img, cx + col as i64, y + row as i64, color);
                    }
                }
            }
        }
        cx += GLYPH_W as i64 + 1;
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        put(img, (x0 + t * (x1 - x0)).round() as i64, (y0 + t * (y1 - y0)).round() as i64, color);
    }
}

fn draw_marker(img: &mut RgbImage, x: f64, y: f64, color: Rgb<u8>) {
    for dy in -2i64..=2 {
        for dx in -2i64..=2 {
            if dx.abs() + dy.abs() <= 2 {
                put(img, x.round() as i64 + dx, y.round() as i64 + dy, color);
            }
        }
    }
}

const PALETTE: [Rgb<u8>; 8] = [
    Rgb([198, 45, 45]),
    Rgb([36, 99, 181]),
    Rgb([34, 140, 60]),
    Rgb([214, 126, 24]),
    Rgb([123, 58, 173]),
    Rgb([20, 150, 150]),
    Rgb([160, 120, 20]),
    Rgb([90, 90, 90]),
];

/// One plotted series: points for size-dependent methods, a horizontal
/// line when `size_independent`.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub size_independent: bool,
}

/// Render mean PSNR against training size (log x) to a PNG file.
pub fn render_plot(path: &std::path::Path, series: &[Series]) -> Result<(), String> {
    let (width, height) = (860u32, 560u32);
    let (ml, mr, mt, mb) = (70.0, 190.0, 30.0, 60.0);
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));

    let sized: Vec<&Series> = series.iter().filter(|s| !s.size_independent).collect();
    let xs: Vec<f64> = sized
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .filter(|v| *v > 0.0)
        .collect();
    let (x_lo, x_hi) = if xs.is_empty() {
        (1.0, 10.0)
    } else {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(0.0f64, f64::max);
        (lo, (hi).max(lo * 1.01))
    };
    let ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    let y_lo = ys.iter().cloned().fold(f64::INFINITY, f64::min).floor() - 1.0;
    let y_hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;

    let plot_w = width as f64 - ml - mr;
    let plot_h = height as f64 - mt - mb;
    let x_of = |size: f64| -> f64 {
        let t = (size.ln() - x_lo.ln()) / (x_hi.ln() - x_lo.ln()).max(1e-9);
        ml + t * plot_w
    };
    let y_of = |psnr: f64| -> f64 { mt + (1.0 - (psnr - y_lo) / (y_hi - y_lo).max(1e-9)) * plot_h };

    let axis = Rgb([0, 0, 0]);
    let grid = Rgb([220, 220, 220]);
    // y grid + labels
    let y_ticks = 6;
    for i in 0..=y_ticks {
        let v = y_lo + (y_hi - y_lo) * i as f64 / y_ticks as f64;
        let y = y_of(v);
        draw_line(&mut img, ml, y, width as f64 - mr, y, grid);
        draw_text(&mut img, 8, y as i64 - 3, &format!("{v:5.1}"), axis);
    }
    // x ticks at powers-of-two-ish sample counts present in the data
    let mut tick_sizes: Vec<f64> = xs.clone();
    tick_sizes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    tick_sizes.dedup();
    for &v in &tick_sizes {
        let x = x_of(v);
        draw_line(&mut img, x, mt, x, height as f64 - mb, grid);
        draw_text(&mut img, x as i64 - 10, (height as f64 - mb) as i64 + 8, &format!("{v:.0}"), axis);
    }
    draw_line(&mut img, ml, mt, ml, height as f64 - mb, axis);
    draw_line(&mut img, ml, height as f64 - mb, width as f64 - mr, height as f64 - mb, axis);
    draw_text(&mut img, (ml as i64 + 10).max(0), 8, "MEAN PSNR (DB) VS TRAIN SIZE", axis);

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.size_independent {
            if let Some(&(_, v)) = s.points.first() {
                let y = y_of(v);
                // dashed horizontal line
                let mut x = ml;
                while x < width as f64 - mr {
                    draw_line(&mut img, x, y, (x + 6.0).min(width as f64 - mr), y, color);
                    x += 10.0;
                }
            }
        } else {
            let mut pts = s.points.clone();
            pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for w in pts.windows(2) {
                draw_line(&mut img, x_of(w[0].0), y_of(w[0].1), x_of(w[1].0), y_of(w[1].1), color);
            }
            for p in &pts {
                draw_marker(&mut img, x_of(p.0), y_of(p.1), color);
            }
        }
        // legend
        let ly = mt as i64 + 14 * i as i64;
        let lx = (width as f64 - mr) as i64 + 12;
        for dx in 0..10 {
            put(&mut img, lx + dx, ly + 3, color);
        }
        draw_text(&mut img, lx + 14, ly, &s.name.to_ascii_uppercase(), axis);
    }

    img.save(path).map_err(|e| e.to_string())
}
