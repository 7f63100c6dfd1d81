use crate::context::{Rect, Screenshot};

pub const BORDER_WIDTH: u32 = 3;
pub const BORDER_RGB: [u8; 3] = [255, 0, 0];

/// Draws a `width`-pixel frame just inside `rect`, clipped to the image.
/// Pixels outside the frame are left untouched. Drawing the same rect twice
/// is a no-op the second time.
pub fn highlight_focus(shot: &Screenshot, rect: Rect, width: u32) -> Screenshot {
    let mut out = shot.clone();
    out.focus_rect = Some(rect);
    out.highlighted = true;
    if rect.is_empty() || width == 0 {
        return out;
    }
    let x0 = (rect.x as i64).max(0);
    let y0 = (rect.y as i64).max(0);
    let x1 = rect.right().min(shot.width as i64);
    let y1 = rect.bottom().min(shot.height as i64);
    for y in y0..y1 {
        for x in x0..x1 {
            if on_frame(rect, width, x, y) {
                out.set_pixel(x as u32, y as u32, BORDER_RGB);
            }
        }
    }
    out
}

/// True when (x, y) lies in the rect and within `width` of one of its edges.
pub fn on_frame(rect: Rect, width: u32, x: i64, y: i64) -> bool {
    let (l, t, r, b) = (rect.x as i64, rect.y as i64, rect.right(), rect.bottom());
    if x < l || x >= r || y < t || y >= b {
        return false;
    }
    let w = width as i64;
    x - l < w || r - 1 - x < w || y - t < w || b - 1 - y < w
}
