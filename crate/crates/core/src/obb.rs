use serde::{Deserialize, Serialize};

/// Rectangle with arbitrary orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, heading: f64, length: f64, width: f64) -> Self {
        Self {
            cx,
            cy,
            heading,
            half_length: 0.5 * length,
            half_width: 0.5 * width,
        }
    }

    /// Box of a vehicle whose reference point is the rear axle, grown by
    /// `inflation` on every side.
    pub fn from_rear_axle(
        x: f64,
        y: f64,
        heading: f64,
        length: f64,
        width: f64,
        rear_overhang: f64,
        inflation: f64,
    ) -> Self {
        let off = 0.5 * length - rear_overhang;
        let (s, c) = heading.sin_cos();
        Self::new(
            x + off * c,
            y + off * s,
            heading,
            length + 2.0 * inflation,
            width + 2.0 * inflation,
        )
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.heading.sin_cos();
        let (ax, ay) = (self.half_length * c, self.half_length * s);
        let (bx, by) = (-self.half_width * s, self.half_width * c);
        [
            (self.cx + ax + bx, self.cy + ay + by),
            (self.cx + ax - bx, self.cy + ay - by),
            (self.cx - ax - bx, self.cy - ay - by),
            (self.cx - ax + bx, self.cy - ay + by),
        ]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        (dx * c + dy * s).abs() <= self.half_length && (-dx * s + dy * c).abs() <= self.half_width
    }

    /// Separating-axis test. Touching boxes count as overlapping.
    pub fn overlaps(&self, other: &OrientedBox) -> bool {
        let dx = other.cx - self.cx;
        let dy = other.cy - self.cy;
        let r2 =
            self.half_length.hypot(self.half_width) + other.half_length.hypot(other.half_width);
        if dx * dx + dy * dy > r2 * r2 {
            return false;
        }
        let (s1, c1) = self.heading.sin_cos();
        let (s2, c2) = other.heading.sin_cos();
        let axes = [(c1, s1), (-s1, c1), (c2, s2), (-s2, c2)];
        for (ux, uy) in axes {
            let r_a = self.half_length * (c1 * ux + s1 * uy).abs()
                + self.half_width * (-s1 * ux + c1 * uy).abs();
            let r_b = other.half_length * (c2 * ux + s2 * uy).abs()
                + other.half_width * (-s2 * ux + c2 * uy).abs();
            if (dx * ux + dy * uy).abs() > r_a + r_b {
                return false;
            }
        }
        true
    }
}
