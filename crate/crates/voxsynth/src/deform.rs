//! Learned deformation fields.
//!
//! A small fully-connected network maps a world position to a displacement
//! into the canonical (flat) volume, letting a field synthesized on a flat
//! lattice be rendered draped over a curved surface. The network is fitted
//! to sparse correspondence pairs by full-batch gradient descent with Adam;
//! inputs and targets are normalized to a unit-scale frame so the fit is
//! insensitive to the scene's absolute size.
//!
//! Everything here is f64: the parameter count is tiny and exact gradients
//! make the finite-difference check in the tests meaningful.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::VolumeSampler;
use crate::math::{Aabb, Vec3};
use crate::{Error, Result};

/// Layer widths of the displacement network, input to output.
pub const MLP_SIZES: [usize; 4] = [3, 16, 16, 3];

/// Parameters of one layer `l`: a row-major `sizes[l+1] x sizes[l]` weight
/// block followed by `sizes[l+1]` biases, all layers concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformMlp {
    pub params: Vec<f64>,
}

/// Total parameter count implied by `MLP_SIZES`.
pub fn mlp_param_count() -> usize {
    MLP_SIZES.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

impl DeformMlp {
    pub fn zeros() -> DeformMlp {
        DeformMlp { params: vec![0.0; mlp_param_count()] }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init(seed: u64) -> DeformMlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(mlp_param_count());
        for w in MLP_SIZES.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_out * fan_in {
                params.push(rng.gen_range(-a..a));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        DeformMlp { params }
    }

    pub fn from_params(params: Vec<f64>) -> Result<DeformMlp> {
        if params.len() != mlp_param_count() {
            return Err(Error::InvalidData(format!(
                "expected {} network parameters, got {}",
                mlp_param_count(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("deformation network parameters".into()));
        }
        Ok(DeformMlp { params })
    }

    /// Hidden layers are ReLU; the output layer is linear so displacements
    /// can take either sign.
    pub fn forward(&self, x: [f64; 3]) -> [f64; 3] {
        let mut cur: Vec<f64> = x.to_vec();
        let mut off = 0;
        for (l, w) in MLP_SIZES.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[off..off + n_out * n_in];
            let biases = &self.params[off + n_out * n_in..off + n_out * (n_in + 1)];
            let mut next = vec![0.0; n_out];
            for o in 0..n_out {
                let mut acc = biases[o];
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (wi, xi) in row.iter().zip(cur.iter()) {
                    acc += wi * xi;
                }
                next[o] = if l + 2 < MLP_SIZES.len() { acc.max(0.0) } else { acc };
            }
            cur = next;
            off += n_out * (n_in + 1);
        }
        [cur[0], cur[1], cur[2]]
    }
}

/// Mean squared error per output component over the batch, and its exact
/// gradient with respect to every parameter.
pub fn loss_and_gradient(
    mlp: &DeformMlp,
    inputs: &[[f64; 3]],
    targets: &[[f64; 3]],
) -> (f64, Vec<f64>) {
    assert_eq!(inputs.len(), targets.len());
    assert!(!inputs.is_empty());
    let n = inputs.len();
    let norm = 1.0 / (3.0 * n as f64);
    let mut grad = vec![0.0f64; mlp.params.len()];
    let mut loss = 0.0f64;

    // Layer offsets into the flat parameter vector.
    let mut offsets = [0usize; 3];
    {
        let mut off = 0;
        for (l, w) in MLP_SIZES.windows(2).enumerate() {
            offsets[l] = off;
            off += w[1] * (w[0] + 1);
        }
    }

    for (x, t) in inputs.iter().zip(targets.iter()) {
        // Forward pass, caching activations per layer.
        let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
        for (l, w) in MLP_SIZES.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let off = offsets[l];
            let weights = &mlp.params[off..off + n_out * n_in];
            let biases = &mlp.params[off + n_out * n_in..off + n_out * (n_in + 1)];
            let prev = &acts[l];
            let mut a = vec![0.0; n_out];
            for o in 0..n_out {
                let mut acc = biases[o];
                for (wi, xi) in weights[o * n_in..(o + 1) * n_in].iter().zip(prev.iter()) {
                    acc += wi * xi;
                }
                a[o] = if l + 2 < MLP_SIZES.len() { acc.max(0.0) } else { acc };
            }
            acts.push(a);
        }

        let out = &acts[MLP_SIZES.len() - 1];
        let mut delta: Vec<f64> = out
            .iter()
            .zip(t.iter())
            .map(|(o, ti)| {
                let e = o - ti;
                loss += e * e * norm;
                2.0 * e * norm
            })
            .collect();

        // Backward pass. ReLU's subgradient at zero is zero, matching the
        // zero activation the forward pass produced there.
        for l in (0..MLP_SIZES.len() - 1).rev() {
            let (n_in, n_out) = (MLP_SIZES[l], MLP_SIZES[l + 1]);
            let off = offsets[l];
            let prev = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    let grow = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    for (g, xi) in grow.iter_mut().zip(prev.iter()) {
                        *g += d * xi;
                    }
                    grad[off + n_out * n_in + o] += d;
                }
            }
            if l > 0 {
                let weights = &mlp.params[off..off + n_out * n_in];
                let mut prev_delta = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (pd, wi) in prev_delta.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *pd += d * wi;
                    }
                }
                for (pd, a) in prev_delta.iter_mut().zip(prev.iter()) {
                    if *a <= 0.0 {
                        *pd = 0.0;
                    }
                }
                delta = prev_delta;
            }
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Normalized per-component MSE below which the fit counts as converged.
    pub convergence_threshold: f64,
}

impl Default for FitConfig {
    fn default() -> FitConfig {
        FitConfig {
            epochs: 2000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            convergence_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    /// Loss before each step, then the final loss; `epochs + 1` entries.
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    pub converged: bool,
}

/// A fitted displacement network with its normalization frame: world
/// positions are offset by `center` and divided by `scale` before the
/// network, and its output is scaled back up.
#[derive(Debug, Clone)]
pub struct DeformationField {
    pub mlp: DeformMlp,
    pub center: Vec3,
    pub scale: f64,
}

impl DeformationField {
    /// Displacement from a deformed-space position into canonical space.
    pub fn displacement(&self, p: Vec3) -> Vec3 {
        let u = [
            (p.x - self.center.x) / self.scale,
            (p.y - self.center.y) / self.scale,
            (p.z - self.center.z) / self.scale,
        ];
        let d = self.mlp.forward(u);
        Vec3::new(d[0] * self.scale, d[1] * self.scale, d[2] * self.scale)
    }

    /// The identity deformation (zero displacement everywhere).
    pub fn identity() -> DeformationField {
        DeformationField { mlp: DeformMlp::zeros(), center: Vec3::new(0.0, 0.0, 0.0), scale: 1.0 }
    }
}

/// Fit a deformation to `(deformed, canonical)` position pairs by full-batch
/// Adam on the normalized displacement targets.
pub fn fit_deformation(pairs: &[(Vec3, Vec3)], cfg: &FitConfig) -> Result<(DeformationField, FitReport)> {
    if pairs.is_empty() {
        return Err(Error::InvalidData("deformation fit needs correspondences".into()));
    }
    for (d, c) in pairs {
        for v in [d.x, d.y, d.z, c.x, c.y, c.z] {
            if !v.is_finite() {
                return Err(Error::NonFinite("correspondence coordinates".into()));
            }
        }
    }
    // Normalization frame from the deformed-side bounding box.
    let mut lo = pairs[0].0;
    let mut hi = pairs[0].0;
    for (d, _) in pairs {
        lo = Vec3::new(lo.x.min(d.x), lo.y.min(d.y), lo.z.min(d.z));
        hi = Vec3::new(hi.x.max(d.x), hi.y.max(d.y), hi.z.max(d.z));
    }
    let center = (lo + hi) * 0.5;
    let half = (hi - lo) * 0.5;
    let scale = half.x.max(half.y).max(half.z).max(1e-9);

    let inputs: Vec<[f64; 3]> = pairs
        .iter()
        .map(|(d, _)| [(d.x - center.x) / scale, (d.y - center.y) / scale, (d.z - center.z) / scale])
        .collect();
    let targets: Vec<[f64; 3]> = pairs
        .iter()
        .map(|(d, c)| [(c.x - d.x) / scale, (c.y - d.y) / scale, (c.z - d.z) / scale])
        .collect();

    let mut mlp = DeformMlp::init(cfg.seed);
    let n_params = mlp.params.len();
    let mut m = vec![0.0f64; n_params];
    let mut v = vec![0.0f64; n_params];
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    for step in 1..=cfg.epochs {
        let (loss, grad) = loss_and_gradient(&mlp, &inputs, &targets);
        curve.push(loss);
        let b1c = 1.0 - cfg.beta1.powi(step as i32);
        let b2c = 1.0 - cfg.beta2.powi(step as i32);
        for i in 0..n_params {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = m[i] / b1c;
            let vh = v[i] / b2c;
            mlp.params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
    let (final_loss, _) = loss_and_gradient(&mlp, &inputs, &targets);
    curve.push(final_loss);
    let report = FitReport {
        loss_curve: curve,
        final_loss,
        converged: final_loss <= cfg.convergence_threshold,
    };
    Ok((DeformationField { mlp, center, scale }, report))
}

// ------------------------------------------------------- analytic surfaces

/// Surfaces with closed-form flat-patch correspondences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceKind {
    Plane,
    /// Sphere of this radius touching the patch at its center; the patch
    /// wraps by the inverse Lambert azimuthal equal-area map.
    Sphere { radius: f64 },
    /// Cylinder of this radius with its axis along y; the patch wraps
    /// isometrically around it.
    Cylinder { radius: f64 },
}

impl std::str::FromStr for SurfaceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<SurfaceKind> {
        if s == "plane" {
            return Ok(SurfaceKind::Plane);
        }
        if let Some(r) = s.strip_prefix("sphere:") {
            let radius: f64 = r.parse().map_err(|_| Error::UnsupportedSurface(s.into()))?;
            if radius > 0.0 {
                return Ok(SurfaceKind::Sphere { radius });
            }
        }
        if let Some(r) = s.strip_prefix("cylinder:") {
            let radius: f64 = r.parse().map_err(|_| Error::UnsupportedSurface(s.into()))?;
            if radius > 0.0 {
                return Ok(SurfaceKind::Cylinder { radius });
            }
        }
        Err(Error::UnsupportedSurface(s.to_string()))
    }
}

/// `(deformed, canonical)` pairs on an `n.0 x n.1` grid over a flat patch of
/// the given extent centered at the origin. The canonical patch lies in the
/// z = 0 plane; the deformed points sit on the surface touching it there.
pub fn analytic_correspondences(
    kind: SurfaceKind,
    extent: (f64, f64),
    n: (usize, usize),
) -> Result<Vec<(Vec3, Vec3)>> {
    if n.0 < 2 || n.1 < 2 {
        return Err(Error::InvalidData("correspondence grid needs at least 2x2 points".into()));
    }
    let mut pairs = Vec::with_capacity(n.0 * n.1);
    for i in 0..n.0 {
        let u = (i as f64 / (n.0 - 1) as f64 - 0.5) * extent.0;
        for j in 0..n.1 {
            let v = (j as f64 / (n.1 - 1) as f64 - 0.5) * extent.1;
            let canonical = Vec3::new(u, v, 0.0);
            let deformed = match kind {
                SurfaceKind::Plane => canonical,
                SurfaceKind::Sphere { radius } => {
                    let rho = (u * u + v * v).sqrt();
                    if rho >= 2.0 * radius {
                        return Err(Error::InvalidData(format!(
                            "patch radius {} exceeds the equal-area range of a sphere of radius {}",
                            rho, radius
                        )));
                    }
                    if rho == 0.0 {
                        Vec3::new(0.0, 0.0, 0.0)
                    } else {
                        let theta = 2.0 * (rho / (2.0 * radius)).asin();
                        let s = radius * theta.sin() / rho;
                        Vec3::new(u * s, v * s, radius * (theta.cos() - 1.0))
                    }
                }
                SurfaceKind::Cylinder { radius } => {
                    let phi = u / radius;
                    if phi.abs() >= std::f64::consts::PI {
                        return Err(Error::InvalidData(format!(
                            "patch wraps more than half way around a cylinder of radius {}",
                            radius
                        )));
                    }
                    Vec3::new(radius * phi.sin(), v, radius * (phi.cos() - 1.0))
                }
            };
            pairs.push((deformed, canonical));
        }
    }
    Ok(pairs)
}

// ------------------------------------------------------------ sampling

/// Samples a canonical volume through a deformation: density and color at a
/// deformed-space point come from the displaced canonical position, and
/// positions displaced outside the canonical bounds read as vacuum.
pub struct DeformedSampler<'a, S: VolumeSampler> {
    pub base: &'a S,
    pub deform: &'a DeformationField,
    pub bounds: Aabb,
}

impl<'a, S: VolumeSampler> VolumeSampler for DeformedSampler<'a, S> {
    fn bounds(&self) -> Aabb {
        self.bounds
    }

    fn density(&self, p: Vec3) -> f64 {
        let q = p + self.deform.displacement(p);
        if self.base.bounds().contains(q) {
            self.base.density(q)
        } else {
            0.0
        }
    }

    fn color(&self, p: Vec3, dir: Vec3) -> [f64; 3] {
        let q = p + self.deform.displacement(p);
        if self.base.bounds().contains(q) {
            self.base.color(q, dir)
        } else {
            [0.0; 3]
        }
    }
}
