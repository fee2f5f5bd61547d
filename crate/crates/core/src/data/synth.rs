//! Deterministic synthetic indoor scenes built from a handful of surface primitives.
//!
//! Every primitive is sampled uniformly over its surface with a point count of
//! `floor(density * area)`, then perturbed by isotropic Gaussian noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::ClassId;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Parallelogram `origin + s*u + t*v`, `s, t` in `[0, 1]`.
    Plane {
        origin: [f64; 3],
        u: [f64; 3],
        v: [f64; 3],
    },
    /// Surface of an axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Lateral surface of a vertical cylinder standing on `base`.
    Cylinder {
        base: [f64; 3],
        radius: f64,
        height: f64,
    },
    /// Thin tube around the segment `start..end`.
    Stick {
        start: [f64; 3],
        end: [f64; 3],
        radius: f64,
    },
}

impl Shape {
    pub fn area(&self) -> f64 {
        match *self {
            Shape::Plane { u, v, .. } => norm3(cross(u, v)),
            Shape::Box { min, max } => {
                let [a, b, c] = sub(max, min);
                2.0 * (a * b + b * c + c * a)
            }
            Shape::Cylinder { radius, height, .. } => 2.0 * PI * radius * height,
            Shape::Stick { start, end, radius } => 2.0 * PI * radius * norm3(sub(end, start)),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match *self {
            Shape::Plane { origin, u, v } => {
                let (s, t): (f64, f64) = (rng.gen(), rng.gen());
                add(origin, add(scale(u, s), scale(v, t)))
            }
            Shape::Box { min, max } => {
                let [a, b, c] = sub(max, min);
                let faces = [b * c, b * c, a * c, a * c, a * b, a * b];
                let total: f64 = faces.iter().sum();
                let mut pick = rng.gen::<f64>() * total;
                let mut face = 5;
                for (i, f) in faces.iter().enumerate() {
                    if pick < *f {
                        face = i;
                        break;
                    }
                    pick -= f;
                }
                let (s, t): (f64, f64) = (rng.gen(), rng.gen());
                let axis = face / 2;
                let mut p = [0.0; 3];
                let (i, j) = match axis {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                p[axis] = if face % 2 == 0 { min[axis] } else { max[axis] };
                p[i] = min[i] + s * (max[i] - min[i]);
                p[j] = min[j] + t * (max[j] - min[j]);
                p
            }
            Shape::Cylinder {
                base,
                radius,
                height,
            } => {
                let theta = rng.gen::<f64>() * 2.0 * PI;
                let h = rng.gen::<f64>() * height;
                [
                    base[0] + radius * theta.cos(),
                    base[1] + radius * theta.sin(),
                    base[2] + h,
                ]
            }
            Shape::Stick { start, end, radius } => {
                let axis = sub(end, start);
                let len = norm3(axis);
                let dir = scale(axis, 1.0 / len);
                let helper = if dir[2].abs() < 0.9 {
                    [0.0, 0.0, 1.0]
                } else {
                    [1.0, 0.0, 0.0]
                };
                let e1 = normalize3(cross(dir, helper));
                let e2 = cross(dir, e1);
                let theta = rng.gen::<f64>() * 2.0 * PI;
                let t = rng.gen::<f64>();
                let ring = add(scale(e1, radius * theta.cos()), scale(e2, radius * theta.sin()));
                add(add(start, scale(axis, t)), ring)
            }
        }
    }

    fn is_valid(&self) -> bool {
        let finite = |v: &[f64; 3]| v.iter().all(|x| x.is_finite());
        match self {
            Shape::Plane { origin, u, v } => {
                finite(origin) && finite(u) && finite(v) && self.area() > 0.0
            }
            Shape::Box { min, max } => {
                finite(min) && finite(max) && (0..3).all(|i| max[i] >= min[i])
            }
            Shape::Cylinder {
                base,
                radius,
                height,
            } => finite(base) && *radius > 0.0 && *height > 0.0,
            Shape::Stick { start, end, radius } => {
                finite(start) && finite(end) && *radius > 0.0 && norm3(sub(*end, *start)) > 0.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub class: ClassId,
    /// Points per square meter of surface.
    pub density: f64,
    /// Standard deviation of the Gaussian position noise, meters.
    pub noise: f64,
    pub color: [f64; 3],
    /// Half-width of the uniform per-channel color jitter.
    pub color_jitter: f64,
}

impl Primitive {
    pub fn new(shape: Shape, class: ClassId, density: f64, color: [f64; 3]) -> Self {
        Self {
            shape,
            class,
            density,
            noise: 0.0,
            color,
            color_jitter: 0.0,
        }
    }

    pub fn point_count(&self) -> usize {
        (self.density * self.shape.area()).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    /// Class display names, indexed by class id.
    pub class_names: Vec<String>,
    /// Points are clamped into this box after noise.
    pub bounds: ([f64; 3], [f64; 3]),
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::invalid("scene has no primitives"));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            if !(p.density > 0.0 && p.density.is_finite()) {
                return Err(Error::invalid(format!("primitive {i}: density must be > 0")));
            }
            if !(p.noise >= 0.0) {
                return Err(Error::invalid(format!("primitive {i}: negative noise")));
            }
            if (p.class as usize) >= self.class_names.len() {
                return Err(Error::invalid(format!(
                    "primitive {i}: class {} not among {} registered classes",
                    p.class,
                    self.class_names.len()
                )));
            }
            if !p.shape.is_valid() {
                return Err(Error::invalid(format!("primitive {i}: degenerate shape")));
            }
        }
        Ok(())
    }
}

pub fn generate_synthetic_scene(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.bounds;
    let total: usize = spec.primitives.iter().map(Primitive::point_count).sum();
    let mut positions = Vec::with_capacity(total);
    let mut colors = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);

    for prim in &spec.primitives {
        let noise = (prim.noise > 0.0).then(|| Normal::new(0.0, prim.noise).unwrap());
        for _ in 0..prim.point_count() {
            let mut p = prim.shape.sample(&mut rng);
            if let Some(noise) = &noise {
                for x in p.iter_mut() {
                    *x += noise.sample(&mut rng);
                }
            }
            for k in 0..3 {
                p[k] = p[k].clamp(lo[k], hi[k]);
            }
            let mut c = prim.color;
            if prim.color_jitter > 0.0 {
                for x in c.iter_mut() {
                    *x += rng.gen_range(-prim.color_jitter..=prim.color_jitter);
                }
            }
            positions.push(p.map(|v| v as f32));
            colors.push(c.map(|v| v.clamp(0.0, 1.0) as f32));
            labels.push(prim.class);
        }
    }
    PointCloud::new(positions, colors, Some(labels))
}

/// A 2 m x 2 m floor (class 0) meeting a 2 m x 2 m wall (class 1) along `x = 2`.
pub fn two_planes(seed: u64) -> SceneSpec {
    let floor = Primitive {
        noise: 0.002,
        color_jitter: 0.05,
        ..Primitive::new(
            Shape::Plane {
                origin: [0.0, 0.0, 0.0],
                u: [2.0, 0.0, 0.0],
                v: [0.0, 2.0, 0.0],
            },
            0,
            800.0,
            [0.5, 0.5, 0.5],
        )
    };
    let wall = Primitive {
        noise: 0.002,
        color_jitter: 0.05,
        ..Primitive::new(
            Shape::Plane {
                origin: [2.0, 0.0, 0.0],
                u: [0.0, 2.0, 0.0],
                v: [0.0, 0.0, 2.0],
            },
            1,
            800.0,
            [0.5, 0.5, 0.5],
        )
    };
    SceneSpec {
        primitives: vec![floor, wall],
        class_names: vec!["floor".into(), "wall".into()],
        bounds: ([0.0, 0.0, -0.1], [2.0, 2.0, 2.1]),
        seed,
    }
}

/// Class names of the synthetic room preset. The last four are rare and end up
/// as the novel classes under the fewest-points split.
pub const ROOM_CLASSES: [&str; 12] = [
    "floor", "ceiling", "wall", "beam", "column", "table", "chair", "bookcase", "board", "sofa",
    "lamp", "window",
];

const FLOOR: ClassId = 0;
const CEILING: ClassId = 1;
const WALL: ClassId = 2;
const BEAM: ClassId = 3;
const COLUMN: ClassId = 4;
const TABLE: ClassId = 5;
const CHAIR: ClassId = 6;
const BOOKCASE: ClassId = 7;
const BOARD: ClassId = 8;
const SOFA: ClassId = 9;
const LAMP: ClassId = 10;
const WINDOW: ClassId = 11;

struct RoomBuilder<'a> {
    rng: &'a mut ChaCha8Rng,
    density: f64,
    primitives: Vec<Primitive>,
}

impl RoomBuilder<'_> {
    fn add(&mut self, shape: Shape, class: ClassId, density_scale: f64, color: [f64; 3]) {
        let tint = self.rng.gen_range(-0.05..0.05);
        self.primitives.push(Primitive {
            shape,
            class,
            density: self.density * density_scale,
            noise: 0.004,
            color: color.map(|c| (c + tint).clamp(0.0, 1.0)),
            color_jitter: 0.08,
        });
    }

    fn legs(&mut self, min: [f64; 2], max: [f64; 2], top: f64, class: ClassId, color: [f64; 3]) {
        for (x, y) in [
            (min[0], min[1]),
            (max[0], min[1]),
            (min[0], max[1]),
            (max[0], max[1]),
        ] {
            self.add(
                Shape::Stick {
                    start: [x, y, 0.0],
                    end: [x, y, top],
                    radius: 0.025,
                },
                class,
                1.5,
                color,
            );
        }
    }
}

/// A randomized furnished room. Layout, dimensions, and colors all derive from `seed`.
pub fn room(seed: u64) -> SceneSpec {
    let mut layout = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let width = layout.gen_range(3.0..4.0f64).round();
    let depth = layout.gen_range(3.0..4.0f64).round();
    let height = layout.gen_range(2.6..3.0);
    let mut b = RoomBuilder {
        rng: &mut layout,
        density: 500.0,
        primitives: Vec::new(),
    };

    b.add(
        Shape::Plane {
            origin: [0.0, 0.0, 0.0],
            u: [width, 0.0, 0.0],
            v: [0.0, depth, 0.0],
        },
        FLOOR,
        1.0,
        [0.45, 0.4, 0.35],
    );
    b.add(
        Shape::Plane {
            origin: [0.0, 0.0, height],
            u: [width, 0.0, 0.0],
            v: [0.0, depth, 0.0],
        },
        CEILING,
        1.0,
        [0.85, 0.85, 0.85],
    );
    let wall_color = [0.8, 0.8, 0.75];
    for (origin, u) in [
        ([0.0, 0.0, 0.0], [width, 0.0, 0.0]),
        ([0.0, depth, 0.0], [width, 0.0, 0.0]),
        ([0.0, 0.0, 0.0], [0.0, depth, 0.0]),
        ([width, 0.0, 0.0], [0.0, depth, 0.0]),
    ] {
        b.add(
            Shape::Plane {
                origin,
                u,
                v: [0.0, 0.0, height],
            },
            WALL,
            1.0,
            wall_color,
        );
    }

    // Beam along x under the ceiling.
    let beam_y = b.rng.gen_range(0.8..depth - 0.8);
    b.add(
        Shape::Box {
            min: [0.0, beam_y - 0.12, height - 0.3],
            max: [width, beam_y + 0.12, height],
        },
        BEAM,
        1.0,
        [0.8, 0.8, 0.8],
    );

    // Column near a random corner region.
    let cx = b.rng.gen_range(0.4..0.8);
    let cy = b.rng.gen_range(0.4..0.8);
    b.add(
        Shape::Cylinder {
            base: [cx, cy, 0.0],
            radius: 0.18,
            height,
        },
        COLUMN,
        1.0,
        [0.75, 0.75, 0.75],
    );

    // Table with legs in the middle of the room.
    let tx = b.rng.gen_range(width * 0.4..width * 0.6);
    let ty = b.rng.gen_range(depth * 0.4..depth * 0.6);
    let top = b.rng.gen_range(0.7..0.78);
    let wood = [0.55, 0.35, 0.2];
    b.add(
        Shape::Box {
            min: [tx - 0.6, ty - 0.4, top - 0.04],
            max: [tx + 0.6, ty + 0.4, top],
        },
        TABLE,
        1.0,
        wood,
    );
    b.legs([tx - 0.55, ty - 0.35], [tx + 0.55, ty + 0.35], top - 0.04, TABLE, wood);

    // Two chairs on opposite sides of the table.
    for side in [-1.0, 1.0] {
        let chx = tx + b.rng.gen_range(-0.3..0.3);
        let chy = ty + side * 0.7;
        let seat = 0.45;
        let chair_color = [0.5, 0.3, 0.22];
        b.add(
            Shape::Box {
                min: [chx - 0.22, chy - 0.22, seat - 0.04],
                max: [chx + 0.22, chy + 0.22, seat],
            },
            CHAIR,
            1.4,
            chair_color,
        );
        let back_y = chy + side * 0.22;
        b.add(
            Shape::Plane {
                origin: [chx - 0.22, back_y, seat],
                u: [0.44, 0.0, 0.0],
                v: [0.0, 0.0, 0.45],
            },
            CHAIR,
            1.4,
            chair_color,
        );
        b.legs(
            [chx - 0.2, chy - 0.2],
            [chx + 0.2, chy + 0.2],
            seat - 0.04,
            CHAIR,
            chair_color,
        );
    }

    // Bookcase against the x = width wall.
    let by = b.rng.gen_range(0.8..depth - 1.2);
    b.add(
        Shape::Box {
            min: [width - 0.35, by, 0.0],
            max: [width, by + 1.0, 1.8],
        },
        BOOKCASE,
        1.0,
        [0.6, 0.42, 0.25],
    );

    // Board on the y = 0 wall.
    let bx = b.rng.gen_range(0.8..width - 1.6);
    b.add(
        Shape::Plane {
            origin: [bx, 0.03, 0.9],
            u: [1.2, 0.0, 0.0],
            v: [0.0, 0.0, 0.8],
        },
        BOARD,
        1.0,
        [0.88, 0.88, 0.85],
    );

    // Sofa against the x = 0 wall.
    let sy = b.rng.gen_range(1.0..depth - 1.6);
    let sofa_color = [0.42, 0.32, 0.3];
    b.add(
        Shape::Box {
            min: [0.0, sy, 0.0],
            max: [0.8, sy + 1.5, 0.42],
        },
        SOFA,
        0.3,
        sofa_color,
    );
    b.add(
        Shape::Box {
            min: [0.0, sy, 0.42],
            max: [0.18, sy + 1.5, 0.8],
        },
        SOFA,
        0.3,
        sofa_color,
    );

    // Floor lamp next to the sofa.
    let ly = sy + 1.75;
    b.add(
        Shape::Stick {
            start: [0.35, ly, 0.0],
            end: [0.35, ly, 1.5],
            radius: 0.03,
        },
        LAMP,
        1.5,
        [0.3, 0.3, 0.3],
    );
    b.add(
        Shape::Cylinder {
            base: [0.35, ly, 1.5],
            radius: 0.15,
            height: 0.2,
        },
        LAMP,
        1.5,
        [0.3, 0.3, 0.3],
    );

    // Window frame on the y = depth wall.
    let wx = b.rng.gen_range(0.8..width - 1.6);
    let (x0, x1, z0, z1, y) = (wx, wx + 1.0, 1.0, 2.2, depth - 0.04);
    for (start, end) in [
        ([x0, y, z0], [x1, y, z0]),
        ([x0, y, z1], [x1, y, z1]),
        ([x0, y, z0], [x0, y, z1]),
        ([x1, y, z0], [x1, y, z1]),
    ] {
        b.add(
            Shape::Stick {
                start,
                end,
                radius: 0.035,
            },
            WINDOW,
            1.5,
            [0.7, 0.75, 0.85],
        );
    }

    let primitives = b.primitives;
    SceneSpec {
        primitives,
        class_names: ROOM_CLASSES.iter().map(|s| s.to_string()).collect(),
        bounds: ([0.0, 0.0, 0.0], [width, depth, height]),
        seed,
    }
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn normalize3(a: [f64; 3]) -> [f64; 3] {
    scale(a, 1.0 / norm3(a))
}
