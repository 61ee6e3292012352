//! Overlay rendering: tinted masks, bounding boxes, and the count digits.

use excount_core::backend::{ImagePayload, SourceImage};
use excount_core::counter::CountResult;
use excount_core::grid::BoundingBox;
use image::{Rgb, RgbImage};

/// Deterministic per-mask tint keyed by stack index.
fn palette(index: usize) -> Rgb<u8> {
    const COLORS: [[u8; 3]; 8] = [
        [230, 60, 60],
        [60, 180, 75],
        [70, 130, 240],
        [240, 180, 40],
        [170, 70, 200],
        [70, 210, 210],
        [240, 120, 50],
        [150, 200, 60],
    ];
    Rgb(COLORS[index % COLORS.len()])
}

/// 3x5 bitmap digits, one row per scanline, 3 low bits used.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111], // 0
    [0b010, 0b110, 0b010, 0b010, 0b111], // 1
    [0b111, 0b001, 0b111, 0b100, 0b111], // 2
    [0b111, 0b001, 0b111, 0b001, 0b111], // 3
    [0b101, 0b101, 0b111, 0b001, 0b001], // 4
    [0b111, 0b100, 0b111, 0b001, 0b111], // 5
    [0b111, 0b100, 0b111, 0b101, 0b111], // 6
    [0b111, 0b001, 0b010, 0b010, 0b010], // 7
    [0b111, 0b101, 0b111, 0b101, 0b111], // 8
    [0b111, 0b101, 0b111, 0b001, 0b111], // 9
];

fn draw_digit(img: &mut RgbImage, digit: usize, x0: u32, y0: u32, color: Rgb<u8>) {
    for (dy, row) in DIGITS[digit].iter().enumerate() {
        for dx in 0..3 {
            if row & (0b100 >> dx) != 0 {
                let (x, y) = (x0 + dx, y0 + dy as u32);
                if x < img.width() && y < img.height() {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
}

fn draw_number(img: &mut RgbImage, value: usize, x0: u32, y0: u32, color: Rgb<u8>) {
    let text = value.to_string();
    for (i, ch) in text.chars().enumerate() {
        let digit = ch.to_digit(10).unwrap() as usize;
        draw_digit(img, digit, x0 + i as u32 * 4, y0, color);
    }
}

fn draw_box(img: &mut RgbImage, b: &BoundingBox, color: Rgb<u8>) {
    let (w, h) = (img.width(), img.height());
    for x in b.x1..=b.x2.min(w - 1) {
        if b.y1 < h {
            img.put_pixel(x, b.y1, color);
        }
        if b.y2 < h {
            img.put_pixel(x, b.y2, color);
        }
    }
    for y in b.y1..=b.y2.min(h - 1) {
        if b.x1 < w {
            img.put_pixel(b.x1, y, color);
        }
        if b.x2 < w {
            img.put_pixel(b.x2, y, color);
        }
    }
}

/// Render the base image with tinted object masks, min bounding boxes,
/// exemplar boxes, and the count in the top-left corner.
pub fn render(
    image: &SourceImage,
    result: &CountResult,
    exemplar_boxes: &[BoundingBox],
) -> image::RgbImage {
    let (h, w) = (image.height as u32, image.width as u32);
    let mut canvas = RgbImage::new(w, h);
    match &image.payload {
        ImagePayload::Rgb8(raw) => {
            for (idx, px) in canvas.pixels_mut().enumerate() {
                *px = Rgb([raw[idx * 3], raw[idx * 3 + 1], raw[idx * 3 + 2]]);
            }
        }
        ImagePayload::Labels(labels) => {
            // label maps render as faint gray where labeled
            for (idx, px) in canvas.pixels_mut().enumerate() {
                *px = if labels[idx] != 0 { Rgb([90, 90, 90]) } else { Rgb([20, 20, 20]) };
            }
        }
    }

    for (i, rec) in result.records.iter().enumerate() {
        let tint = palette(i);
        for y in 0..image.height {
            for x in 0..image.width {
                if rec.mask.get(y, x) {
                    let base = canvas.get_pixel(x as u32, y as u32);
                    let mixed = Rgb([
                        ((base[0] as u16 + tint[0] as u16) / 2) as u8,
                        ((base[1] as u16 + tint[1] as u16) / 2) as u8,
                        ((base[2] as u16 + tint[2] as u16) / 2) as u8,
                    ]);
                    canvas.put_pixel(x as u32, y as u32, mixed);
                }
            }
        }
        if let Ok(bbox) = rec.mask.min_bounding_box() {
            draw_box(&mut canvas, &bbox, tint);
        }
    }

    for b in exemplar_boxes {
        draw_box(&mut canvas, b, Rgb([255, 255, 255]));
    }

    draw_number(&mut canvas, result.count, 1, 1, Rgb([255, 255, 0]));
    canvas
}
