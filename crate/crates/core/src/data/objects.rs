//! Seeded parametric point clouds standing in for CAD objects.

use rand::Rng as _;

use crate::camera::{dot, norm, normalize, Vec3};
use crate::error::{Result, VsaError};
use crate::rng::{rng_for, standard_normal, Rng};

pub const POINTS_PER_OBJECT: usize = 2048;
const OBJECT_TAG: u64 = 0x0b1e;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFamily {
    Sphere,
    Box,
    Torus,
    Cone,
    TwoBox,
    Cylinder,
    Pyramid,
    Cross,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 8] = [
        ShapeFamily::Sphere,
        ShapeFamily::Box,
        ShapeFamily::Torus,
        ShapeFamily::Cone,
        ShapeFamily::TwoBox,
        ShapeFamily::Cylinder,
        ShapeFamily::Pyramid,
        ShapeFamily::Cross,
    ];

    pub fn from_class(class_id: usize) -> Result<Self> {
        Self::ALL
            .get(class_id)
            .copied()
            .ok_or_else(|| VsaError::invalid(format!("class id {class_id} out of range for {} families", Self::ALL.len())))
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Box => "box",
            ShapeFamily::Torus => "torus",
            ShapeFamily::Cone => "cone",
            ShapeFamily::TwoBox => "two_box",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::Pyramid => "pyramid",
            ShapeFamily::Cross => "cross",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProceduralObject {
    pub class_id: usize,
    pub seed: u64,
    /// Main size parameter of the family (the radius for spheres).
    pub size: f64,
    pub points: Vec<Vec3>,
    pub colors: Vec<[f32; 3]>,
}

impl ProceduralObject {
    pub fn empty() -> Self {
        ProceduralObject { class_id: 0, seed: 0, size: 0.0, points: Vec::new(), colors: Vec::new() }
    }
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn unit_vector(rng: &mut Rng) -> Vec3 {
    loop {
        let v = [standard_normal(rng), standard_normal(rng), standard_normal(rng)];
        if norm(v) > 1e-9 {
            return normalize(v);
        }
    }
}

/// Uniform point on the surface of an axis-aligned box.
fn box_surface(rng: &mut Rng, center: Vec3, half: Vec3) -> Vec3 {
    let [a, b, c] = half;
    let areas = [b * c, b * c, a * c, a * c, a * b, a * b];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.gen::<f64>() * total;
    let mut face = 5;
    for (i, &ar) in areas.iter().enumerate() {
        if pick < ar {
            face = i;
            break;
        }
        pick -= ar;
    }
    let mut p = [uniform(rng, -a, a), uniform(rng, -b, b), uniform(rng, -c, c)];
    let axis = face / 2;
    p[axis] = if face % 2 == 0 { -half[axis] } else { half[axis] };
    [p[0] + center[0], p[1] + center[1], p[2] + center[2]]
}

fn disk(rng: &mut Rng, radius: f64, y: f64) -> Vec3 {
    let r = radius * rng.gen::<f64>().sqrt();
    let t = rng.gen::<f64>() * std::f64::consts::TAU;
    [r * t.cos(), y, r * t.sin()]
}

/// Random point on a triangle.
fn triangle(rng: &mut Rng, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    [0, 1, 2].map(|i| a[i] + u * (b[i] - a[i]) + v * (c[i] - a[i]))
}

fn sample_family(family: ShapeFamily, rng: &mut Rng, k: usize) -> (f64, Vec<Vec3>) {
    let mut pts = Vec::with_capacity(k);
    let size;
    match family {
        ShapeFamily::Sphere => {
            size = uniform(rng, 0.55, 0.9);
            for _ in 0..k {
                let d = unit_vector(rng);
                pts.push(d.map(|x| x * size));
            }
        }
        ShapeFamily::Box => {
            let half = [uniform(rng, 0.25, 0.6), uniform(rng, 0.25, 0.6), uniform(rng, 0.25, 0.6)];
            size = norm(half);
            for _ in 0..k {
                pts.push(box_surface(rng, [0.0; 3], half));
            }
        }
        ShapeFamily::Torus => {
            let major = uniform(rng, 0.45, 0.65);
            let minor = uniform(rng, 0.12, 0.25);
            size = major;
            for _ in 0..k {
                let (u, v) = (rng.gen::<f64>() * std::f64::consts::TAU, rng.gen::<f64>() * std::f64::consts::TAU);
                let ring = major + minor * v.cos();
                pts.push([ring * u.cos(), minor * v.sin(), ring * u.sin()]);
            }
        }
        ShapeFamily::Cone => {
            let radius = uniform(rng, 0.4, 0.7);
            let height = uniform(rng, 0.9, 1.4);
            size = height;
            let slant = (radius * radius + height * height).sqrt();
            let lateral = radius * slant;
            let base = radius * radius;
            for _ in 0..k {
                if rng.gen::<f64>() < lateral / (lateral + base) {
                    // area-uniform on the lateral surface: radius grows with sqrt
                    let s = rng.gen::<f64>().sqrt();
                    let t = rng.gen::<f64>() * std::f64::consts::TAU;
                    pts.push([s * radius * t.cos(), height / 2.0 - s * height, s * radius * t.sin()]);
                } else {
                    pts.push(disk(rng, radius, -height / 2.0));
                }
            }
        }
        ShapeFamily::TwoBox => {
            let lower = [uniform(rng, 0.35, 0.6), uniform(rng, 0.12, 0.22), uniform(rng, 0.25, 0.45)];
            let upper = [uniform(rng, 0.12, 0.25), uniform(rng, 0.2, 0.35), uniform(rng, 0.12, 0.25)];
            let shift = uniform(rng, 0.1, 0.3);
            let c_low = [0.0, -0.2, 0.0];
            let c_up = [lower[0] - upper[0] - shift * 0.5, -0.2 + lower[1] + upper[1], 0.0];
            size = lower[0];
            let (a_low, a_up) = (surface_area(lower), surface_area(upper));
            for _ in 0..k {
                if rng.gen::<f64>() < a_low / (a_low + a_up) {
                    pts.push(box_surface(rng, c_low, lower));
                } else {
                    pts.push(box_surface(rng, c_up, upper));
                }
            }
        }
        ShapeFamily::Cylinder => {
            let radius = uniform(rng, 0.25, 0.5);
            let height = uniform(rng, 0.9, 1.5);
            size = height;
            let lateral = std::f64::consts::TAU * radius * height;
            let caps = 2.0 * std::f64::consts::PI * radius * radius;
            for _ in 0..k {
                if rng.gen::<f64>() < lateral / (lateral + caps) {
                    let t = rng.gen::<f64>() * std::f64::consts::TAU;
                    pts.push([radius * t.cos(), uniform(rng, -height / 2.0, height / 2.0), radius * t.sin()]);
                } else {
                    let y = if rng.gen::<bool>() { height / 2.0 } else { -height / 2.0 };
                    pts.push(disk(rng, radius, y));
                }
            }
        }
        ShapeFamily::Pyramid => {
            let half = uniform(rng, 0.4, 0.65);
            let height = uniform(rng, 0.8, 1.3);
            size = height;
            let y0 = -height / 2.0;
            let apex = [0.0, height / 2.0, 0.0];
            let corners = [[-half, y0, -half], [half, y0, -half], [half, y0, half], [-half, y0, half]];
            let side = half * (height * height + half * half).sqrt();
            let base = 4.0 * half * half;
            for _ in 0..k {
                if rng.gen::<f64>() < 4.0 * side / (4.0 * side + base) {
                    let f = rng.gen_range(0..4);
                    pts.push(triangle(rng, corners[f], corners[(f + 1) % 4], apex));
                } else {
                    pts.push([uniform(rng, -half, half), y0, uniform(rng, -half, half)]);
                }
            }
        }
        ShapeFamily::Cross => {
            let len = uniform(rng, 0.6, 0.85);
            let thick = uniform(rng, 0.08, 0.16);
            let tall = uniform(rng, 0.1, 0.3);
            size = len;
            let bars = [[len, tall, thick], [thick, tall, len]];
            for _ in 0..k {
                let b = rng.gen_range(0..2);
                pts.push(box_surface(rng, [0.0; 3], bars[b]));
            }
        }
    }
    (size, pts)
}

fn surface_area(half: Vec3) -> f64 {
    8.0 * (half[0] * half[1] + half[1] * half[2] + half[0] * half[2])
}

/// Deterministic point cloud for `(class_id, seed)`: [`POINTS_PER_OBJECT`]
/// surface points, a random yaw, bounded by the unit ball, colored with a
/// two-color gradient along a random horizontal axis.
pub fn generate_object(class_id: usize, seed: u64) -> Result<ProceduralObject> {
    let family = ShapeFamily::from_class(class_id)?;
    let mut rng = rng_for(seed, &[OBJECT_TAG, class_id as u64]);
    let (mut size, mut points) = sample_family(family, &mut rng, POINTS_PER_OBJECT);

    let yaw = rng.gen::<f64>() * std::f64::consts::TAU;
    let (s, c) = yaw.sin_cos();
    for p in &mut points {
        *p = [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]];
    }
    let max_norm = points.iter().map(|&p| norm(p)).fold(0.0, f64::max);
    if max_norm > 0.98 {
        let k = 0.98 / max_norm;
        points.iter_mut().for_each(|p| *p = p.map(|x| x * k));
        size *= k;
    }

    let pick = |rng: &mut Rng| [0, 1, 2].map(|_| uniform(rng, 0.05, 0.85) as f32);
    let (c0, c1) = (pick(&mut rng), pick(&mut rng));
    let t = rng.gen::<f64>() * std::f64::consts::TAU;
    let axis = [t.cos(), 0.0, t.sin()];
    let colors = points
        .iter()
        .map(|&p| {
            let w = ((dot(p, axis) + 1.0) / 2.0).clamp(0.0, 1.0) as f32;
            [0, 1, 2].map(|i| c0[i] * (1.0 - w) + c1[i] * w)
        })
        .collect();
    Ok(ProceduralObject { class_id, seed, size, points, colors })
}

/// Uniform class draw.
pub fn random_class(rng: &mut Rng, classes: usize) -> usize {
    rng.gen_range(0..classes)
}
