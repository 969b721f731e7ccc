//! Axis-aligned integer boxes.
//!
//! Boxes are half-open pixel rectangles `[x, x + w) x [y, y + h)`, so the area
//! of a box is exactly the number of pixels it covers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    #[serde(default = "default_label")]
    pub class_label: String,
}

fn default_label() -> String {
    BOAT_LABEL.to_string()
}

/// Class label of the only object category the filters preserve.
pub const BOAT_LABEL: &str = "boat";

impl BoundingBox {
    /// Returns `None` unless `w >= 1` and `h >= 1`.
    pub fn new(x: i64, y: i64, w: i64, h: i64, class_label: impl Into<String>) -> Option<Self> {
        (w >= 1 && h >= 1).then(|| Self {
            x,
            y,
            w,
            h,
            class_label: class_label.into(),
        })
    }

    pub fn boat(x: i64, y: i64, w: i64, h: i64) -> Self {
        Self::new(x, y, w, h, BOAT_LABEL).expect("boat box must have positive size")
    }

    /// Builds a box from fractional annotation coordinates, flooring each value.
    /// Sizes that floor below one pixel are raised to one.
    pub fn from_f64(x: f64, y: f64, w: f64, h: f64, class_label: impl Into<String>) -> Option<Self> {
        if ![x, y, w, h].iter().all(|v| v.is_finite()) || w <= 0.0 || h <= 0.0 {
            return None;
        }
        Self::new(
            x.floor() as i64,
            y.floor() as i64,
            (w.floor() as i64).max(1),
            (h.floor() as i64).max(1),
            class_label,
        )
    }

    pub fn right(&self) -> i64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.h
    }

    pub fn area(&self) -> i64 {
        self.w * self.h
    }

    pub fn is_boat(&self) -> bool {
        self.class_label == BOAT_LABEL
    }

    pub fn in_image(&self, width: u32, height: u32) -> bool {
        self.x >= 0 && self.y >= 0 && self.right() <= width as i64 && self.bottom() <= height as i64
    }

    /// Intersection with the image rectangle, or `None` if nothing is left.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<Self> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = self.right().min(width as i64);
        let y1 = self.bottom().min(height as i64);
        Self::new(x0, y0, x1 - x0, y1 - y0, self.class_label.clone())
    }

    /// Grows the box by `pixels` on every side.
    pub fn dilate(&self, pixels: i64) -> Self {
        Self {
            x: self.x - pixels,
            y: self.y - pixels,
            w: self.w + 2 * pixels,
            h: self.h + 2 * pixels,
            class_label: self.class_label.clone(),
        }
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..self.clone()
        }
    }
}

/// Number of pixels shared by `a` and `b`.
pub fn intersect_area(a: &BoundingBox, b: &BoundingBox) -> i64 {
    let w = a.right().min(b.right()) - a.x.max(b.x);
    let h = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if w <= 0 || h <= 0 {
        0
    } else {
        w * h
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersect_area(a, b);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}
