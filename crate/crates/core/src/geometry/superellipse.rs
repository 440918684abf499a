use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Planar keep-out region `F(b) < margin` with
/// `F(b) = ((bx − cx)/ax)⁴ + ((by − cy)/ay)⁴`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperEllipse {
    pub center: Vector2<f64>,
    /// Shape parameters `(ax, ay)` in metres.
    pub shape: Vector2<f64>,
    /// Level `ρ ≥ 1` separating the interior from the feasible region.
    pub margin: f64,
}

impl SuperEllipse {
    pub fn new(center: Vector2<f64>, shape: Vector2<f64>, margin: f64) -> Result<Self, GeometryError> {
        let se = Self { center, shape, margin };
        se.validate()?;
        Ok(se)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.shape.x > 0.0 && self.shape.y > 0.0) {
            return Err(GeometryError::InvalidPrimitive(
                "super-ellipse shape parameters must be positive".into(),
            ));
        }
        if !(self.margin >= 1.0) {
            return Err(GeometryError::InvalidPrimitive(
                "super-ellipse margin must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Smallest-overshoot super-ellipse (at level 1) whose interior contains
    /// the axis-aligned rectangle `center ± (half_extents + inflate)`.
    ///
    /// The rectangle corner sits on the level set; the split between the two
    /// axes is chosen so that the long axis overshoots the rectangle the least.
    pub fn enclosing_rect(center: Vector2<f64>, half_extents: Vector2<f64>, inflate: f64) -> Self {
        let hx = half_extents.x + inflate;
        let hy = half_extents.y + inflate;
        let t = (hx / hy).sqrt();
        let v = (1.0 / (1.0 + t.powi(4))).powf(0.25);
        let u = t * v;
        // slightly enlarge so the corner lies strictly inside
        let grow = 1.0 + 1e-9;
        Self {
            center,
            shape: Vector2::new(hx / u * grow, hy / v * grow),
            margin: 1.0,
        }
    }

    pub fn value(&self, b: &Vector2<f64>) -> f64 {
        let dx = (b.x - self.center.x) / self.shape.x;
        let dy = (b.y - self.center.y) / self.shape.y;
        dx.powi(4) + dy.powi(4)
    }

    pub fn gradient(&self, b: &Vector2<f64>) -> Vector2<f64> {
        let dx = (b.x - self.center.x) / self.shape.x;
        let dy = (b.y - self.center.y) / self.shape.y;
        Vector2::new(4.0 * dx.powi(3) / self.shape.x, 4.0 * dy.powi(3) / self.shape.y)
    }

    /// True when `b` is in the feasible region `F(b) ≥ ρ`.
    pub fn admits(&self, b: &Vector2<f64>) -> bool {
        self.value(b) >= self.margin
    }

    /// Extent of the level-`ρ` curve along each axis.
    pub fn axis_extent(&self) -> Vector2<f64> {
        self.shape * self.margin.powf(0.25)
    }
}

/// `F_ℓ(b)` for a super-ellipse.
pub fn super_ellipse_value(se: &SuperEllipse, b: &Vector2<f64>) -> f64 {
    se.value(b)
}
