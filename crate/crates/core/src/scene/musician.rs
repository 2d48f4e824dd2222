//! Procedural musician point clouds: a person built from ellipsoids plus a
//! class-specific instrument shape and color.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::instrument::Instrument;

pub const MIN_POINTS: usize = 2000;
pub const MAX_POINTS: usize = 5000;

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
    color: [f64; 3],
}

struct Cylinder {
    base: [f64; 3],
    /// Unit axis.
    axis: [f64; 3],
    length: f64,
    /// Radius at the base and at the far end.
    radius: (f64, f64),
    color: [f64; 3],
}

enum Part {
    Ellipsoid(Ellipsoid),
    Cylinder(Cylinder),
}

impl Part {
    fn area_weight(&self) -> f64 {
        match self {
            Part::Ellipsoid(e) => {
                // Knud Thomsen's approximation
                let p = 1.6075;
                let [a, b, c] = e.radii;
                4.0 * PI * (((a * b).powf(p) + (a * c).powf(p) + (b * c).powf(p)) / 3.0).powf(1.0 / p)
            }
            Part::Cylinder(c) => PI * (c.radius.0 + c.radius.1) * c.length,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> ([f64; 3], [f64; 3]) {
        match self {
            Part::Ellipsoid(e) => {
                let d = unit_vector(rng);
                let p = [0, 1, 2].map(|k| e.center[k] + e.radii[k] * d[k]);
                (p, e.color)
            }
            Part::Cylinder(c) => {
                let t: f64 = rng.random();
                let r = c.radius.0 + t * (c.radius.1 - c.radius.0);
                let (u, v) = orthonormal_pair(c.axis);
                let theta = rng.random_range(0.0..2.0 * PI);
                let (s, co) = theta.sin_cos();
                let p = [0, 1, 2].map(|k| c.base[k] + c.axis[k] * t * c.length + r * (co * u[k] + s * v[k]));
                (p, c.color)
            }
        }
    }
}

fn unit_vector(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [0; 3].map(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

fn orthonormal_pair(a: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let cross = |p: [f64; 3], q: [f64; 3]| [p[1] * q[2] - p[2] * q[1], p[2] * q[0] - p[0] * q[2], p[0] * q[1] - p[1] * q[0]];
    let u = cross(a, helper);
    let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let u = u.map(|x| x / n);
    (u, cross(a, u))
}

fn ell(center: [f64; 3], radii: [f64; 3], color: [f64; 3]) -> Part {
    Part::Ellipsoid(Ellipsoid { center, radii, color })
}

fn cyl(base: [f64; 3], axis: [f64; 3], length: f64, radius: (f64, f64), color: [f64; 3]) -> Part {
    Part::Cylinder(Cylinder {
        base,
        axis,
        length,
        radius,
        color,
    })
}

fn person(rng: &mut impl Rng) -> Vec<Part> {
    let skin = [0.55 + rng.random_range(-0.2..0.3), 0.4 + rng.random_range(-0.15..0.2), 0.3 + rng.random_range(-0.1..0.15)];
    let shirt = [rng.random(), rng.random(), rng.random()];
    let trousers = [rng.random_range(0.05..0.4); 3];
    let height = rng.random_range(0.9..1.1);
    let s = |v: f64| v * height;
    vec![
        ell([0.0, s(0.72), 0.0], [0.1, 0.12, 0.11], skin),
        ell([0.0, s(0.3), 0.0], [0.19, 0.3, 0.12], shirt),
        ell([-0.1, s(-0.4), 0.0], [0.08, 0.42, 0.08], trousers),
        ell([0.1, s(-0.4), 0.0], [0.08, 0.42, 0.08], trousers),
        ell([-0.25, s(0.28), 0.12], [0.05, 0.26, 0.06], shirt),
        ell([0.25, s(0.28), 0.12], [0.05, 0.26, 0.06], shirt),
    ]
}

fn tint(rng: &mut impl Rng, c: [f64; 3]) -> [f64; 3] {
    c.map(|v| (v + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0))
}

fn instrument_parts(instrument: Instrument, rng: &mut impl Rng) -> Vec<Part> {
    match instrument {
        Instrument::Cello => vec![
            ell([0.0, -0.25, 0.3], [0.2, 0.36, 0.1], tint(rng, [0.55, 0.27, 0.07])),
            cyl([0.0, 0.1, 0.3], [0.0, 1.0, 0.0], 0.45, (0.025, 0.02), tint(rng, [0.2, 0.12, 0.05])),
        ],
        Instrument::Doublebass => vec![
            ell([0.0, -0.15, 0.38], [0.3, 0.55, 0.14], tint(rng, [0.35, 0.18, 0.05])),
            cyl([0.0, 0.38, 0.38], [0.0, 1.0, 0.0], 0.6, (0.03, 0.025), tint(rng, [0.15, 0.1, 0.05])),
        ],
        Instrument::Guitar => vec![
            ell([-0.05, 0.05, 0.2], [0.2, 0.16, 0.05], tint(rng, [0.9, 0.62, 0.25])),
            cyl([0.12, 0.1, 0.2], [0.9, 0.436, 0.0], 0.5, (0.025, 0.022), tint(rng, [0.3, 0.2, 0.1])),
        ],
        Instrument::Saxophone => vec![
            cyl([0.0, 0.55, 0.16], [0.0, -1.0, 0.0], 0.6, (0.015, 0.06), tint(rng, [0.85, 0.7, 0.2])),
            ell([0.0, -0.08, 0.24], [0.08, 0.05, 0.08], tint(rng, [0.9, 0.75, 0.25])),
        ],
        Instrument::Violin => vec![
            ell([-0.14, 0.5, 0.14], [0.1, 0.05, 0.17], tint(rng, [0.6, 0.2, 0.08])),
            cyl([0.2, 0.35, 0.25], [-0.8, 0.3, -0.52], 0.7, (0.006, 0.006), tint(rng, [0.9, 0.9, 0.85])),
        ],
    }
}

/// Draws `n` surface points from `parts`, proportionally to surface area.
fn sample_parts(parts: &[Part], n: usize, rng: &mut impl Rng) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let weights: Vec<f64> = parts.iter().map(Part::area_weight).collect();
    let total: f64 = weights.iter().sum();
    let mut points = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut assigned = 0;
    for (i, (part, w)) in parts.iter().zip(&weights).enumerate() {
        let count = if i + 1 == parts.len() {
            n - assigned
        } else {
            ((w / total) * n as f64).round() as usize
        };
        assigned += count;
        for _ in 0..count {
            let (p, c) = part.sample(rng);
            points.push(p);
            colors.push(tint(rng, c));
        }
    }
    (points, colors)
}

/// Deterministic colored cloud of a musician playing `instrument`,
/// standing at the origin and facing `+z`.
pub fn make_musician_cloud(instrument: Instrument, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let body = person(&mut rng);
    let inst = instrument_parts(instrument, &mut rng);
    let n_body = rng.random_range(1800..=2800);
    let n_inst = rng.random_range(500..=1300);
    let (mut points, mut colors) = sample_parts(&body, n_body, &mut rng);
    let (ip, ic) = sample_parts(&inst, n_inst, &mut rng);
    points.extend(ip);
    colors.extend(ic);
    PointCloud::new(points, Some(colors)).expect("aligned colors")
}
