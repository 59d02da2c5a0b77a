//! Class-coloured box overlays for tile visualisation.

use crate::classify::CellType;
use crate::detect::BBox;
use crate::imgcore::Image;

/// Draw a rectangle outline; parts outside the image are skipped.
pub fn draw_box_outline(image: &mut Image, bbox: &BBox, color: [u8; 3], thickness: u32) {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let x0 = bbox.x_min.floor() as i64;
    let y0 = bbox.y_min.floor() as i64;
    let x1 = (bbox.x_max.ceil() as i64) - 1;
    let y1 = (bbox.y_max.ceil() as i64) - 1;
    let t = thickness as i64;
    for dy in 0..t {
        for x in x0..=x1 {
            for y in [y0 + dy, y1 - dy] {
                if x >= 0 && x < w && y >= 0 && y < h {
                    image.set(x as u32, y as u32, color);
                }
            }
        }
    }
    for dx in 0..t {
        for y in y0..=y1 {
            for x in [x0 + dx, x1 - dx] {
                if x >= 0 && x < w && y >= 0 && y < h {
                    image.set(x as u32, y as u32, color);
                }
            }
        }
    }
}

/// Copy of the tile with one outline per classified detection, using the
/// fixed five-class palette.
pub fn render_overlay(tile: &Image, boxes: &[(BBox, CellType)]) -> Image {
    let mut out = tile.clone();
    for (bbox, class) in boxes {
        draw_box_outline(&mut out, bbox, class.color(), 2);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_overlay_equals_input() {
        let tile = Image::filled(32, 24, [200, 190, 195]);
        assert_eq!(render_overlay(&tile, &[]), tile);
    }

    #[test]
    fn overlay_paints_class_color() {
        let tile = Image::filled(64, 64, [255, 255, 255]);
        let b = BBox::new(10.0, 10.0, 30.0, 30.0).unwrap();
        let out = render_overlay(&tile, &[(b, CellType::Hof)]);
        assert_eq!(out.get(10, 10), CellType::Hof.color());
        assert_eq!(out.get(20, 10), CellType::Hof.color());
        // Interior untouched.
        assert_eq!(out.get(20, 20), [255, 255, 255]);
    }

    #[test]
    fn out_of_bounds_boxes_are_clipped() {
        let tile = Image::filled(20, 20, [0, 0, 0]);
        let b = BBox::new(-5.0, -5.0, 25.0, 25.0).unwrap();
        let out = render_overlay(&tile, &[(b, CellType::Cyt)]);
        assert_eq!(out.width(), 20);
    }
}
