//! Procedural exemplar fields: statistically repetitive desk-scale scenes
//! built from simple primitives, deterministic for a fixed seed.
//!
//! Every column receives a tiny unique density offset, so exact patch
//! matches are unique and self-reproduction tests have a single zero-
//! distance source per window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxsynth::field::{ColorHead, VoxelField};
use voxsynth::math::{Aabb, Vec3};
use voxsynth::{Error, Result};

/// Raw density of empty space; softplus maps it to ~3e-7.
const RAW_EMPTY: f32 = -15.0;
/// Raw density of solid primitives.
const RAW_SOLID: f32 = 35.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    /// Thin tilted capsules rising from a ground layer.
    Grass,
    /// Hemispheres resting on a ground layer.
    Pebbles,
    /// Short vertical cylinders packed on a ground layer.
    Carpet,
}

impl std::str::FromStr for Kind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Kind> {
        match s {
            "grass" => Ok(Kind::Grass),
            "pebbles" => Ok(Kind::Pebbles),
            "carpet" => Ok(Kind::Carpet),
            _ => Err(Error::InvalidData(format!(
                "unknown exemplar kind `{}` (grass, pebbles, carpet)",
                s
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProcSpec {
    pub kind: Kind,
    pub shape: (usize, usize, usize),
    pub channels: usize,
    /// Primitive count; zero generates an empty field.
    pub count: usize,
    /// Primitive radius in voxels; 0 picks a per-kind default.
    pub radius: f64,
    pub seed: u64,
}

/// Smooth per-column value noise in [-1, 1]: random values on a coarse
/// lattice, bilinearly interpolated.
struct ValueNoise {
    cell: usize,
    gx: usize,
    gy: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(nx: usize, ny: usize, cell: usize, rng: &mut ChaCha8Rng) -> ValueNoise {
        let gx = nx / cell + 2;
        let gy = ny / cell + 2;
        let values = (0..gx * gy).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ValueNoise { cell, gx, gy, values }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        let u = x as f64 / self.cell as f64;
        let v = y as f64 / self.cell as f64;
        let (x0, y0) = (u.floor() as usize, v.floor() as usize);
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let x0 = x0.min(self.gx - 2);
        let y0 = y0.min(self.gy - 2);
        let g = |i: usize, j: usize| self.values[i * self.gy + j];
        let a = g(x0, y0) * (1.0 - fx) + g(x0 + 1, y0) * fx;
        let b = g(x0, y0 + 1) * (1.0 - fx) + g(x0 + 1, y0 + 1) * fx;
        a * (1.0 - fy) + b * fy
    }
}

/// Head that reads the first three feature channels as a color, ignoring
/// position and direction encodings.
fn color_head(channels: usize) -> ColorHead {
    let mut head = ColorHead::zeros(channels + 6 * (5 + 4), 5, 4);
    let cols = head.sizes[0];
    for r in 0..3 {
        head.params[r * cols + r] = 2.5;
    }
    head
}

/// Distance from `p` to the segment `a..b`, all in voxel coordinates.
fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let w = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let t = if dd > 0.0 {
        ((w[0] * d[0] + w[1] * d[1] + w[2] * d[2]) / dd).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1], a[2] + t * d[2] - p[2]];
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt()
}

struct Painter {
    field: VoxelField,
    channels: usize,
}

impl Painter {
    /// Mark a solid cell and stamp its material color into the features.
    fn solid(&mut self, x: usize, y: usize, z: usize, color: [f32; 3], material: usize) {
        self.field.density.set(x, y, z, RAW_SOLID);
        for c in 0..3.min(self.channels) {
            self.field.features.set(c, x, y, z, color[c]);
        }
        if 3 + material < self.channels {
            self.field.features.set(3 + material, x, y, z, 1.0);
        }
    }
}

/// Generate a procedural exemplar. Zero `count` yields an empty field that
/// renders as pure background.
pub fn generate(spec: &ProcSpec) -> Result<VoxelField> {
    let (nx, ny, nz) = spec.shape;
    if nx < 4 || ny < 4 || nz < 4 {
        return Err(Error::InvalidData(format!("exemplar grid {}x{}x{} too small", nx, ny, nz)));
    }
    if spec.channels < 3 {
        return Err(Error::InvalidData("procedural exemplars need at least 3 channels".into()));
    }
    // Cubic voxels: xy spans [-1,1]^2 and z scales with the grid aspect.
    let bbox = Aabb::new(
        Vec3::new(-1.0, -1.0, 0.0),
        Vec3::new(1.0, 1.0, 2.0 * (nz - 1) as f64 / (nx - 1) as f64),
    );
    let head = color_head(spec.channels);
    let mut field = VoxelField::uniform((nx, ny, nz), spec.channels, bbox, RAW_EMPTY);
    field.head = head;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    if spec.count == 0 {
        return Ok(field);
    }

    let noise = ValueNoise::new(nx, ny, 8, &mut rng);
    let mut p = Painter { field, channels: spec.channels };

    // Ground layer with gently varying height and brownish color.
    let ground_base = (nz / 8).max(2);
    let ground_top = |x: usize, y: usize, n: &ValueNoise| -> usize {
        let h = ground_base as f64 + n.at(x, y);
        (h.round().max(1.0) as usize).min(nz - 1)
    };
    for x in 0..nx {
        for y in 0..ny {
            let top = ground_top(x, y, &noise);
            let tint = 0.1 * noise.at(x, y) as f32;
            for z in 0..top {
                p.solid(x, y, z, [0.45 + tint, 0.35 + tint, 0.2], 0);
            }
        }
    }

    match spec.kind {
        Kind::Grass => {
            let r = if spec.radius > 0.0 { spec.radius } else { 1.2 };
            for _ in 0..spec.count {
                let bx = rng.gen_range(0.0..nx as f64);
                let by = rng.gen_range(0.0..ny as f64);
                let len = rng.gen_range(0.45..0.85) * nz as f64;
                let tilt = rng.gen_range(0.0..0.35_f64);
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                let base = [bx, by, ground_base as f64 - 1.0];
                let tip = [
                    bx + len * tilt * phi.cos(),
                    by + len * tilt * phi.sin(),
                    base[2] + len,
                ];
                let green = [0.15, rng.gen_range(0.55..0.85), rng.gen_range(0.1..0.3)];
                stamp_capsule(&mut p, base, tip, r, green, 1, nz);
            }
        }
        Kind::Pebbles => {
            let fixed_r = spec.radius;
            for i in 0..spec.count {
                let r = if fixed_r > 0.0 { fixed_r } else { rng.gen_range(3.0..8.0) };
                // A single pebble sits dead center so its size is easy to
                // measure from a depth render.
                let (cx, cy) = if spec.count == 1 {
                    (nx as f64 / 2.0, ny as f64 / 2.0)
                } else {
                    (rng.gen_range(0.0..nx as f64), rng.gen_range(0.0..ny as f64))
                };
                let gray = 0.4 + 0.4 * (i as f32 * 0.37).fract();
                let cz = ground_base as f64 - 1.0;
                stamp_hemisphere(&mut p, [cx, cy, cz], r, [gray, gray, gray * 0.9], 1, nz);
            }
        }
        Kind::Carpet => {
            let r = if spec.radius > 0.0 { spec.radius } else { 1.5 };
            for _ in 0..spec.count {
                let cx = rng.gen_range(0.0..nx as f64);
                let cy = rng.gen_range(0.0..ny as f64);
                let h = rng.gen_range(0.3..0.7) * nz as f64;
                let hue = rng.gen_range(0.0..1.0f32);
                let color = [0.3 + 0.5 * hue, 0.2, 0.8 - 0.5 * hue];
                let base = [cx, cy, ground_base as f64 - 1.0];
                stamp_capsule(&mut p, base, [cx, cy, base[2] + h], r, color, 1, nz);
            }
        }
    }

    // Unique column fingerprint: a small offset on every density value and a
    // smooth color perturbation, keeping exact matches unique without
    // disturbing the structure. The offset is a distinct multiple of 2^-16,
    // which adds to the raw densities here without any rounding, so no two
    // columns can collapse to the same bits.
    let mut field = p.field;
    for x in 0..nx {
        for y in 0..ny {
            let jitter = (x * ny + y + 1) as f32 / 65536.0;
            let fuzz = 0.05 * noise.at(x, y) as f32;
            for z in 0..nz {
                let d = field.density.get(x, y, z);
                field.density.set(x, y, z, d + jitter);
                let f0 = field.features.get(0, x, y, z);
                field.features.set(0, x, y, z, f0 + fuzz);
            }
        }
    }
    Ok(field)
}

fn stamp_capsule(
    p: &mut Painter,
    a: [f64; 3],
    b: [f64; 3],
    r: f64,
    color: [f32; 3],
    material: usize,
    nz: usize,
) {
    let (nx, ny) = (p.field.density.nx, p.field.density.ny);
    let lo = |i: usize, v: f64| ((v - r).floor().max(0.0) as usize).min([nx, ny, nz][i] - 1);
    let hi = |i: usize, v: f64| ((v + r).ceil().max(0.0) as usize).min([nx, ny, nz][i] - 1);
    let (x0, x1) = (lo(0, a[0].min(b[0])), hi(0, a[0].max(b[0])));
    let (y0, y1) = (lo(1, a[1].min(b[1])), hi(1, a[1].max(b[1])));
    let (z0, z1) = (lo(2, a[2].min(b[2])), hi(2, a[2].max(b[2])));
    for x in x0..=x1 {
        for y in y0..=y1 {
            for z in z0..=z1 {
                if segment_distance([x as f64, y as f64, z as f64], a, b) <= r {
                    p.solid(x, y, z, color, material);
                }
            }
        }
    }
}

fn stamp_hemisphere(
    p: &mut Painter,
    c: [f64; 3],
    r: f64,
    color: [f32; 3],
    material: usize,
    nz: usize,
) {
    let (nx, ny) = (p.field.density.nx, p.field.density.ny);
    let x0 = ((c[0] - r).floor().max(0.0) as usize).min(nx - 1);
    let x1 = ((c[0] + r).ceil().max(0.0) as usize).min(nx - 1);
    let y0 = ((c[1] - r).floor().max(0.0) as usize).min(ny - 1);
    let y1 = ((c[1] + r).ceil().max(0.0) as usize).min(ny - 1);
    let z0 = (c[2].floor().max(0.0) as usize).min(nz - 1);
    let z1 = ((c[2] + r).ceil().max(0.0) as usize).min(nz - 1);
    for x in x0..=x1 {
        for y in y0..=y1 {
            for z in z0..=z1 {
                let dx = x as f64 - c[0];
                let dy = y as f64 - c[1];
                let dz = z as f64 - c[2];
                if dz >= 0.0 && dx * dx + dy * dy + dz * dz <= r * r {
                    p.solid(x, y, z, color, material);
                }
            }
        }
    }
}
