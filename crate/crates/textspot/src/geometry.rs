//! Axis-aligned box arithmetic: representation conversions, L1 distance,
//! intersection-over-union, and generalized IoU.
//!
//! Two representations are used throughout the crate: normalized
//! center/size boxes (`[cx, cy, w, h]`, each in `[0, 1]`) as regressed by
//! the model and stored in dataset files, and corner boxes
//! (`[x1, y1, x2, y2]`) on which the overlap measures are defined. Costs
//! convert to corners exactly once, at cost-matrix construction.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Box as normalized center/size coordinates, each in `[0, 1]`.
///
/// Serialized as a `[cx, cy, w, h]` array in dataset files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct CenterSizeBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Box as corner coordinates with `x1 <= x2` and `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl CenterSizeBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = CenterSizeBox { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = self.as_array();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "center-size box has non-finite coordinates: {vals:?}"
            )));
        }
        if vals.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Validation(format!(
                "center-size box coordinates must lie in [0, 1]: {vals:?}"
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// Convert to absolute corners on an image of the given size.
    pub fn to_corners(&self, image_size: (f64, f64)) -> Result<CornerBox> {
        let (iw, ih) = image_size;
        if !(iw > 0.0 && ih > 0.0) {
            return Err(Error::Argument(format!(
                "image size must be positive, got ({iw}, {ih})"
            )));
        }
        Ok(CornerBox {
            x1: (self.cx - self.w / 2.0) * iw,
            y1: (self.cy - self.h / 2.0) * ih,
            x2: (self.cx + self.w / 2.0) * iw,
            y2: (self.cy + self.h / 2.0) * ih,
        })
    }

    /// Corners on the unit square, the form used by cost and loss terms.
    pub fn unit_corners(&self) -> CornerBox {
        CornerBox {
            x1: self.cx - self.w / 2.0,
            y1: self.cy - self.h / 2.0,
            x2: self.cx + self.w / 2.0,
            y2: self.cy + self.h / 2.0,
        }
    }
}

impl From<CenterSizeBox> for [f64; 4] {
    fn from(b: CenterSizeBox) -> Self {
        b.as_array()
    }
}

impl TryFrom<[f64; 4]> for CenterSizeBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        CenterSizeBox::new(v[0], v[1], v[2], v[3])
    }
}

impl CornerBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if [x1, y1, x2, y2].iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "corner box has non-finite coordinates".into(),
            ));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::Validation(format!(
                "corner box must satisfy x1 <= x2 and y1 <= y2: [{x1}, {y1}, {x2}, {y2}]"
            )));
        }
        Ok(CornerBox { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    /// Convert back to normalized center/size on an image of the given size.
    pub fn to_center_size(&self, image_size: (f64, f64)) -> Result<CenterSizeBox> {
        let (iw, ih) = image_size;
        if !(iw > 0.0 && ih > 0.0) {
            return Err(Error::Argument(format!(
                "image size must be positive, got ({iw}, {ih})"
            )));
        }
        CenterSizeBox::new(
            (self.x1 + self.x2) / 2.0 / iw,
            (self.y1 + self.y2) / 2.0 / ih,
            (self.x2 - self.x1) / iw,
            (self.y2 - self.y1) / ih,
        )
    }
}

/// Sum of absolute coordinate differences in center-size parameterization.
pub fn l1_center_size(a: &CenterSizeBox, b: &CenterSizeBox) -> f64 {
    let av = a.as_array();
    let bv = b.as_array();
    av.iter().zip(bv.iter()).map(|(x, y)| (x - y).abs()).sum()
}

/// Intersection over union of two corner boxes, in `[0, 1]`.
///
/// Degenerate boxes (zero union) yield 0.
pub fn iou(a: &CornerBox, b: &CornerBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: IoU minus the normalized empty area of the enclosing
/// hull, in `(-1, 1]` for positive-area boxes.
///
/// When the enclosing hull is degenerate (both boxes degenerate and
/// coincident or collinear) the result is defined as 0, so downstream
/// costs never see NaN.
pub fn giou(a: &CornerBox, b: &CornerBox) -> f64 {
    let hull_w = a.x2.max(b.x2) - a.x1.min(b.x1);
    let hull_h = a.y2.max(b.y2) - a.y1.min(b.y1);
    let hull = hull_w * hull_h;
    if hull <= 0.0 {
        return 0.0;
    }
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    iou - (hull - union) / hull
}

/// GIoU of `a` against `b` together with its gradient with respect to
/// `a`'s corner coordinates `[x1, y1, x2, y2]`.
///
/// At ties of the min/max selections the subgradient of the active branch
/// is returned.
pub fn giou_with_gradient(a: &CornerBox, b: &CornerBox) -> (f64, [f64; 4]) {
    let hull_w = a.x2.max(b.x2) - a.x1.min(b.x1);
    let hull_h = a.y2.max(b.y2) - a.y1.min(b.y1);
    let hull = hull_w * hull_h;
    if hull <= 0.0 {
        return (0.0, [0.0; 4]);
    }

    let aw = a.x2 - a.x1;
    let ah = a.y2 - a.y1;
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;

    // d inter / d [x1, y1, x2, y2] of a
    let mut d_inter = [0.0; 4];
    if iw > 0.0 && ih > 0.0 {
        if a.x1 > b.x1 {
            d_inter[0] = -ih;
        }
        if a.y1 > b.y1 {
            d_inter[1] = -iw;
        }
        if a.x2 < b.x2 {
            d_inter[2] = ih;
        }
        if a.y2 < b.y2 {
            d_inter[3] = iw;
        }
    }
    let d_area = [-ah, -aw, ah, aw];
    let d_union = [
        d_area[0] - d_inter[0],
        d_area[1] - d_inter[1],
        d_area[2] - d_inter[2],
        d_area[3] - d_inter[3],
    ];
    let mut d_hull = [0.0; 4];
    if a.x1 < b.x1 {
        d_hull[0] = -hull_h;
    }
    if a.y1 < b.y1 {
        d_hull[1] = -hull_w;
    }
    if a.x2 > b.x2 {
        d_hull[2] = hull_h;
    }
    if a.y2 > b.y2 {
        d_hull[3] = hull_w;
    }

    // giou = inter/union + union/hull - 1
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    let value = iou - (hull - union) / hull;
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_iou = if union <= 0.0 {
            0.0
        } else {
            (d_inter[k] * union - inter * d_union[k]) / (union * union)
        };
        let d_ratio = (d_union[k] * hull - union * d_hull[k]) / (hull * hull);
        grad[k] = d_iou + d_ratio;
    }
    (value, grad)
}
