use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::error::{Error, Result};

/// Geometry of a shape in pixel coordinates. Pixel `(r, c)` has its centre
/// at `(r as f64, c as f64)`; angles are in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShapeKind {
    Circle {
        center: (f64, f64),
        radius: f64,
    },
    Ellipse {
        center: (f64, f64),
        semi_axes: (f64, f64),
        angle: f64,
    },
    Line {
        from: (f64, f64),
        to: (f64, f64),
        thickness: f64,
    },
    Rectangle {
        center: (f64, f64),
        half_extent: (f64, f64),
        angle: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeMode {
    Add,
    Remove,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub mode: ShapeMode,
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidShape(format!("{what} must be positive, got {v}")))
    }
}

fn finite(p: (f64, f64), what: &str) -> Result<()> {
    if p.0.is_finite() && p.1.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidShape(format!("{what} is not finite")))
    }
}

impl ShapeKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ShapeKind::Circle { center, radius } => {
                finite(center, "center")?;
                positive(radius, "radius")
            }
            ShapeKind::Ellipse {
                center, semi_axes, ..
            } => {
                finite(center, "center")?;
                positive(semi_axes.0, "semi-axis")?;
                positive(semi_axes.1, "semi-axis")
            }
            ShapeKind::Line {
                from,
                to,
                thickness,
            } => {
                finite(from, "line start")?;
                finite(to, "line end")?;
                if from == to {
                    return Err(Error::InvalidShape("line endpoints coincide".into()));
                }
                if !(thickness >= 1.0) {
                    return Err(Error::InvalidShape(format!(
                        "line thickness must be >= 1, got {thickness}"
                    )));
                }
                Ok(())
            }
            ShapeKind::Rectangle {
                center,
                half_extent,
                ..
            } => {
                finite(center, "center")?;
                positive(half_extent.0, "extent")?;
                positive(half_extent.1, "extent")
            }
        }
    }

    /// Centre-of-pixel inclusion test.
    pub fn contains(&self, row: f64, col: f64) -> bool {
        match *self {
            ShapeKind::Circle { center, radius } => {
                let (dr, dc) = (row - center.0, col - center.1);
                dr * dr + dc * dc <= radius * radius
            }
            ShapeKind::Ellipse {
                center,
                semi_axes: (a, b),
                angle,
            } => {
                let (u, v) = rotate(row - center.0, col - center.1, angle);
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            ShapeKind::Line {
                from,
                to,
                thickness,
            } => {
                let (vr, vc) = (to.0 - from.0, to.1 - from.1);
                let (pr, pc) = (row - from.0, col - from.1);
                let t = ((pr * vr + pc * vc) / (vr * vr + vc * vc)).clamp(0.0, 1.0);
                let (dr, dc) = (pr - t * vr, pc - t * vc);
                (dr * dr + dc * dc).sqrt() <= thickness / 2.0
            }
            ShapeKind::Rectangle {
                center,
                half_extent: (hh, hw),
                angle,
            } => {
                let (u, v) = rotate(row - center.0, col - center.1, angle);
                u.abs() <= hh && v.abs() <= hw
            }
        }
    }
}

/// Rotates the offset into the shape's own frame: `u` along its first axis.
fn rotate(dr: f64, dc: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (dr * c + dc * s, -dr * s + dc * c)
}

/// Paints (or erases) the shape onto a copy of `canvas`.
pub fn rasterize_shape(spec: &ShapeSpec, canvas: &BinaryMask) -> Result<BinaryMask> {
    spec.kind.validate()?;
    let mut out = canvas.clone();
    let value = spec.mode == ShapeMode::Add;
    for r in 0..canvas.height() {
        for c in 0..canvas.width() {
            if spec.kind.contains(r as f64, c as f64) {
                out.set(r, c, value);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn add(kind: ShapeKind) -> ShapeSpec {
        ShapeSpec {
            kind,
            mode: ShapeMode::Add,
        }
    }

    #[test]
    fn half_pixel_circle_is_one_pixel() {
        let canvas = BinaryMask::new(7, 7);
        let out = rasterize_shape(
            &add(ShapeKind::Circle {
                center: (3.0, 4.0),
                radius: 0.5,
            }),
            &canvas,
        )
        .unwrap();
        assert_eq!(out.count(), 1);
        assert!(out.get(3, 4));
    }

    #[test]
    fn full_rectangle_removal_clears_canvas() {
        let canvas = BinaryMask::filled(6, 9, true);
        let spec = ShapeSpec {
            kind: ShapeKind::Rectangle {
                center: (2.5, 4.0),
                half_extent: (3.0, 4.5),
                angle: 0.0,
            },
            mode: ShapeMode::Remove,
        };
        assert!(rasterize_shape(&spec, &canvas).unwrap().is_empty());
    }

    #[test]
    fn ellipse_matches_per_pixel_inequality() {
        let canvas = BinaryMask::new(11, 11);
        let out = rasterize_shape(
            &add(ShapeKind::Ellipse {
                center: (5.0, 5.0),
                semi_axes: (3.0, 2.0),
                angle: 0.0,
            }),
            &canvas,
        )
        .unwrap();
        let mut n = 0;
        for r in 0..11 {
            for c in 0..11 {
                let dr = r as f64 - 5.0;
                let dc = c as f64 - 5.0;
                let inside = dr * dr / 9.0 + dc * dc / 4.0 <= 1.0;
                assert_eq!(out.get(r, c), inside, "pixel ({r},{c})");
                n += inside as usize;
            }
        }
        // rows -3..=3 contribute 1,3,3,5,3,3,1 pixels
        assert_eq!(n, 19);
    }

    #[test]
    fn horizontal_line_of_unit_thickness_is_one_row() {
        let canvas = BinaryMask::new(5, 8);
        let out = rasterize_shape(
            &add(ShapeKind::Line {
                from: (2.0, 1.0),
                to: (2.0, 6.0),
                thickness: 1.0,
            }),
            &canvas,
        )
        .unwrap();
        assert_eq!(out.count(), 6);
        assert!((1..=6).all(|c| out.get(2, c)));
    }

    #[test]
    fn degenerate_shapes_are_rejected() {
        let canvas = BinaryMask::new(4, 4);
        let bad = [
            ShapeKind::Circle {
                center: (1.0, 1.0),
                radius: 0.0,
            },
            ShapeKind::Ellipse {
                center: (1.0, 1.0),
                semi_axes: (2.0, 0.0),
                angle: 0.3,
            },
            ShapeKind::Line {
                from: (1.0, 1.0),
                to: (1.0, 1.0),
                thickness: 3.0,
            },
            ShapeKind::Line {
                from: (1.0, 1.0),
                to: (2.0, 1.0),
                thickness: 0.5,
            },
        ];
        for kind in bad {
            assert!(matches!(
                rasterize_shape(&add(kind), &canvas),
                Err(Error::InvalidShape(_))
            ));
        }
    }

    #[test]
    fn off_canvas_shape_is_clipped() {
        let canvas = BinaryMask::new(4, 4);
        let out = rasterize_shape(
            &add(ShapeKind::Circle {
                center: (-10.0, -10.0),
                radius: 3.0,
            }),
            &canvas,
        )
        .unwrap();
        assert!(out.is_empty());
    }
}
