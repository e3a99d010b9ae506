//! Scanline rasterizer for the dataset shapes.
//!
//! Pixel `(i, j)` covers `[i, i+1) x [j, j+1)` and is sampled at its center
//! `(i + 0.5, j + 0.5)`. On each row the covered spans are computed
//! analytically and a pixel is filled when its center lies in `[left, right)`.
//! Polygon edges use the half-open rule `y_min <= yc < y_max`, so horizontal
//! edges contribute nothing and shared vertices are counted once. Circles use
//! the same span rule with half-width `sqrt(r^2 - dy^2)` for `dy^2 < r^2`.
//! No anti-aliasing. Trigonometry goes through `libm` so vertex positions do
//! not depend on the platform math library.

use std::f64::consts::PI;

use super::feature::{Color, Shape};
use super::{ImageAnnotation, ObjectSpec};
use crate::error::{Error, Result};
use crate::image::RasterImage;

/// Resolved placement of one object on a square canvas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Placement {
    pub fn of(object: &ObjectSpec, canvas: u32) -> Self {
        let side = canvas as f64;
        let (ax, ay) = object.position.anchor();
        Self {
            cx: ax * side + object.jitter[0] as f64,
            cy: ay * side + object.jitter[1] as f64,
            radius: object.scale * side / 2.0,
        }
    }
}

fn vertices(shape: Shape, p: Placement) -> Option<Vec<(f64, f64)>> {
    let (sides, start_deg): (u32, f64) = match shape {
        Shape::Circle => return None,
        Shape::Triangle => (3, 90.0),
        Shape::Square => (4, 45.0),
        Shape::Pentagon => (5, 90.0),
        Shape::Hexagon => (6, 0.0),
    };
    Some(
        (0..sides)
            .map(|k| {
                let theta = start_deg.to_radians() + 2.0 * PI * k as f64 / sides as f64;
                (
                    p.cx + p.radius * libm::cos(theta),
                    p.cy - p.radius * libm::sin(theta),
                )
            })
            .collect(),
    )
}

/// Fill pixels whose center x lies in `[left, right)` on row `y`.
fn fill_span(img: &mut RasterImage, y: u32, left: f64, right: f64, rgb: [u8; 3]) {
    let first = (left - 0.5).ceil().max(0.0) as i64;
    let end = ((right - 0.5).ceil() as i64).min(img.width as i64);
    for x in first..end {
        img.set_pixel(x as u32, y, rgb);
    }
}

fn fill_polygon(img: &mut RasterImage, verts: &[(f64, f64)], rgb: [u8; 3]) {
    let mut crossings = Vec::with_capacity(verts.len());
    for y in 0..img.height {
        let yc = y as f64 + 0.5;
        crossings.clear();
        for (k, &(x0, y0)) in verts.iter().enumerate() {
            let (x1, y1) = verts[(k + 1) % verts.len()];
            let (lo, hi) = if y0 < y1 { (y0, y1) } else { (y1, y0) };
            if lo <= yc && yc < hi {
                crossings.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            fill_span(img, y, pair[0], pair[1], rgb);
        }
    }
}

fn fill_circle(img: &mut RasterImage, p: Placement, rgb: [u8; 3]) {
    let r2 = p.radius * p.radius;
    for y in 0..img.height {
        let dy = y as f64 + 0.5 - p.cy;
        let rem = r2 - dy * dy;
        if rem > 0.0 {
            let half = rem.sqrt();
            fill_span(img, y, p.cx - half, p.cx + half, rgb);
        }
    }
}

fn draw_object(img: &mut RasterImage, object: &ObjectSpec) -> Result<()> {
    if !(object.scale > 0.0 && object.scale <= 1.0) {
        return Err(Error::Render(format!(
            "object scale {} outside (0, 1]",
            object.scale
        )));
    }
    let p = Placement::of(object, img.width);
    if p.radius < 0.5 {
        return Err(Error::Render(format!(
            "degenerate object: radius {:.3} px",
            p.radius
        )));
    }
    let side = img.width as f64;
    if p.cx - p.radius < 0.0
        || p.cy - p.radius < 0.0
        || p.cx + p.radius > side
        || p.cy + p.radius > side
    {
        return Err(Error::Render(format!(
            "{:?} {:?} at ({:.1}, {:.1}) r={:.1} leaves the {}px canvas",
            object.color, object.shape, p.cx, p.cy, p.radius, img.width
        )));
    }
    let rgb = Color::rgb(object.color);
    match vertices(object.shape, p) {
        Some(v) => fill_polygon(img, &v, rgb),
        None => fill_circle(img, p, rgb),
    }
    Ok(())
}

/// Render an annotation onto a white square canvas; objects are drawn in
/// sequence order so later objects occlude earlier ones.
pub fn render_image(annotation: &ImageAnnotation, canvas: u32) -> Result<RasterImage> {
    if canvas == 0 {
        return Err(Error::Render("zero-sized canvas".into()));
    }
    let mut img = RasterImage::white(canvas, canvas);
    for object in &annotation.objects {
        draw_object(&mut img, object)?;
    }
    Ok(img)
}
