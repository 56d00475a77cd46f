//! Small 2D geometry kit shared by the synthetic renderer and the evaluator.

use serde::{Deserialize, Serialize};

/// 2D point/vector, f64 throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(self, o: Vec2) -> f64 {
        self.sub(o).norm()
    }
}

/// Row-major 2x2 real matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
    };

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { a, b, c, d }
    }

    /// Counter-clockwise rotation in a y-up frame (clockwise on screen).
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Mat2::new(c, -s, s, c)
    }

    pub fn det(self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn apply(self, v: Vec2) -> Vec2 {
        Vec2::new(self.a * v.x + self.b * v.y, self.c * v.x + self.d * v.y)
    }
}

/// Vertices of a regular polygon, first vertex pointing "up" (negative y,
/// matching image coordinates), winding clockwise on screen.
pub fn regular_polygon(sides: u32, circumradius: f64, center: Vec2) -> Vec<Vec2> {
    (0..sides)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * f64::from(k) / f64::from(sides);
            center.add(Vec2::new(circumradius * t.sin(), -circumradius * t.cos()))
        })
        .collect()
}

/// Convex containment test; accepts either winding and degenerates to
/// "never inside" for zero-area polygons.
pub fn convex_contains(vertices: &[Vec2], p: Vec2) -> bool {
    if vertices.len() < 3 {
        return false;
    }
    let mut pos = false;
    let mut neg = false;
    for i in 0..vertices.len() {
        let a = vertices[i];
        let b = vertices[(i + 1) % vertices.len()];
        let cross = b.sub(a).cross(p.sub(a));
        if cross > 0.0 {
            pos = true;
        } else if cross < 0.0 {
            neg = true;
        }
        if pos && neg {
            return false;
        }
    }
    pos ^ neg
}

/// Signed polygon area via the shoelace formula.
pub fn polygon_area(vertices: &[Vec2]) -> f64 {
    if vertices.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..vertices.len() {
        let a = vertices[i];
        let b = vertices[(i + 1) % vertices.len()];
        acc += a.cross(b);
    }
    0.5 * acc.abs()
}

/// Sutherland-Hodgman clip of a polygon against the axis-aligned rectangle
/// `[x0,x1] x [y0,y1]`.
pub fn clip_to_rect(vertices: &[Vec2], x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Vec2> {
    // inside(p) per clip edge, plus segment/edge intersection
    type Edge = (fn(Vec2, f64) -> bool, fn(Vec2, Vec2, f64) -> Vec2, f64);
    let edges: [Edge; 4] = [
        (|p, v| p.x >= v, |a, b, v| lerp_x(a, b, v), x0),
        (|p, v| p.x <= v, |a, b, v| lerp_x(a, b, v), x1),
        (|p, v| p.y >= v, |a, b, v| lerp_y(a, b, v), y0),
        (|p, v| p.y <= v, |a, b, v| lerp_y(a, b, v), y1),
    ];
    let mut poly = vertices.to_vec();
    for (inside, intersect, value) in edges {
        if poly.is_empty() {
            break;
        }
        let mut out = Vec::with_capacity(poly.len() + 4);
        for i in 0..poly.len() {
            let cur = poly[i];
            let prev = poly[(i + poly.len() - 1) % poly.len()];
            let cur_in = inside(cur, value);
            let prev_in = inside(prev, value);
            if cur_in {
                if !prev_in {
                    out.push(intersect(prev, cur, value));
                }
                out.push(cur);
            } else if prev_in {
                out.push(intersect(prev, cur, value));
            }
        }
        poly = out;
    }
    poly
}

fn lerp_x(a: Vec2, b: Vec2, x: f64) -> Vec2 {
    let t = (x - a.x) / (b.x - a.x);
    Vec2::new(x, a.y + t * (b.y - a.y))
}

fn lerp_y(a: Vec2, b: Vec2, y: f64) -> Vec2 {
    let t = (y - a.y) / (b.y - a.y);
    Vec2::new(a.x + t * (b.x - a.x), y)
}

/// `n` points spaced uniformly by arc length along a closed polyline.
pub fn sample_closed_boundary(vertices: &[Vec2], n: usize) -> Vec<Vec2> {
    assert!(n > 0);
    if vertices.is_empty() {
        return Vec::new();
    }
    if vertices.len() == 1 {
        return vec![vertices[0]; n];
    }
    let mut cumulative = Vec::with_capacity(vertices.len() + 1);
    cumulative.push(0.0);
    let mut total = 0.0;
    for i in 0..vertices.len() {
        let a = vertices[i];
        let b = vertices[(i + 1) % vertices.len()];
        total += a.dist(b);
        cumulative.push(total);
    }
    if total == 0.0 {
        return vec![vertices[0]; n];
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    for k in 0..n {
        let target = total * (k as f64) / (n as f64);
        while cumulative[seg + 1] < target && seg + 1 < vertices.len() {
            seg += 1;
        }
        let a = vertices[seg];
        let b = vertices[(seg + 1) % vertices.len()];
        let span = cumulative[seg + 1] - cumulative[seg];
        let t = if span > 0.0 {
            (target - cumulative[seg]) / span
        } else {
            0.0
        };
        out.push(a.add(b.sub(a).scale(t)));
    }
    out
}
