//! The Boltzmann sphere: the set of `N` velocities in `R^d` with
//! prescribed total energy `E` and momentum `z`.
//!
//! After removing the momentum constraint with an orthogonal change of
//! variables the set is a round sphere of radius `sqrt(E - |z|^2/N)` in a
//! `d(N-1)`-dimensional hyperplane, which gives three things for free:
//! exact uniform sampling (project a Gaussian), closed-form marginal
//! densities after freezing `j` particles (the Fubini weight), and log
//! surface areas through the gamma function.

use crate::special::log_sphere_area;
use crate::{KacError, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Parameters of `S_B^N(E, z)`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoltzmannSphereSpec {
    n: u32,
    d: u32,
    energy: f64,
    z: Vec<f64>,
}

impl BoltzmannSphereSpec {
    pub fn new(n: u32, d: u32, energy: f64, z: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(KacError::InvalidParameter(format!("need N >= 2, got {n}")));
        }
        if d < 2 {
            return Err(KacError::InvalidParameter(format!("need d >= 2, got {d}")));
        }
        if z.len() != d as usize {
            return Err(KacError::InvalidParameter(format!(
                "momentum has dimension {}, expected {d}",
                z.len()
            )));
        }
        if !energy.is_finite() || !z.iter().all(|x| x.is_finite()) {
            return Err(KacError::InvalidParameter("nonfinite energy or momentum".into()));
        }
        let zsq: f64 = z.iter().map(|x| x * x).sum();
        if energy - zsq / f64::from(n) <= 0.0 {
            return Err(KacError::Domain(format!(
                "E - |z|^2/N = {} <= 0: constraint set is empty or a point",
                energy - zsq / f64::from(n)
            )));
        }
        Ok(BoltzmannSphereSpec { n, d, energy, z })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn z_norm_sq(&self) -> f64 {
        self.z.iter().map(|x| x * x).sum()
    }

    /// Squared radius of the reduced round sphere, `E - |z|^2/N`.
    pub fn radius_sq(&self) -> f64 {
        self.energy - self.z_norm_sq() / f64::from(self.n)
    }

    /// Ambient dimension of the hyperplane the sphere lives in, `d(N-1)`.
    pub fn hyperplane_dim(&self) -> u32 {
        self.d * (self.n - 1)
    }

    /// Log surface area: `log(|S^{m-1}| r^{m-1})` with `m = d(N-1)`.
    pub fn log_area(&self) -> f64 {
        let m = self.hyperplane_dim();
        log_sphere_area(m) + f64::from(m - 1) * 0.5 * self.radius_sq().ln()
    }
}

/// The orthogonal matrix whose rows are
/// `r_j = (e_1 + .. + e_j - j e_{j+1}) / sqrt(j(j+1))` for `j < N` and
/// `r_N = (e_1 + .. + e_N)/sqrt(N)`.
///
/// Applied per coordinate block it maps the momentum constraint to the
/// single equation `u_N = z / sqrt(N)`.
pub fn reduction_matrix(n: u32) -> DMatrix<f64> {
    assert!(n >= 2);
    let nu = n as usize;
    let mut m = DMatrix::zeros(nu, nu);
    for j in 1..nu {
        let norm = 1.0 / ((j * (j + 1)) as f64).sqrt();
        for i in 0..j {
            m[(j - 1, i)] = norm;
        }
        m[(j - 1, j)] = -(j as f64) * norm;
    }
    let norm = 1.0 / (nu as f64).sqrt();
    for i in 0..nu {
        m[(nu - 1, i)] = norm;
    }
    m
}

/// Exact uniform draw from the sphere.
///
/// N i.i.d. standard Gaussians are shifted to satisfy the momentum
/// constraint, then the fluctuation about the common mean `z/N` is rescaled
/// to put the total energy at `E`.  Rotation invariance of the Gaussian in
/// the constraint hyperplane makes the result exactly uniform.
pub fn uniform_sample<R: Rng + ?Sized>(spec: &BoltzmannSphereSpec, rng: &mut R) -> Vec<Vec<f64>> {
    let n = spec.n as usize;
    let d = spec.d as usize;
    loop {
        let mut g: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let mut mean = vec![0.0; d];
        for gi in &g {
            for (m, x) in mean.iter_mut().zip(gi) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        // fluctuation about z/N, with Sum u_i = 0
        let mut fluct_sq = 0.0;
        for gi in g.iter_mut() {
            for (x, m) in gi.iter_mut().zip(&mean) {
                *x -= m;
                fluct_sq += *x * *x;
            }
        }
        if fluct_sq <= 0.0 {
            continue; // probability-zero degenerate draw
        }
        let lambda = (spec.radius_sq() / fluct_sq).sqrt();
        for gi in g.iter_mut() {
            for (x, zk) in gi.iter_mut().zip(&spec.z) {
                *x = zk / n as f64 + lambda * *x;
            }
        }
        return g;
    }
}

/// Marginal density of the first `j` particles under the uniform measure.
///
/// On the admissible region `Pi_j` (where the bracket below is
/// nonnegative) the log density w.r.t. Lebesgue measure `dv_1..dv_j` is
///
/// ```text
/// prefactor + ((d(N-j-1)-2)/2) * log(E - sum|v_i|^2 - |z - sum v_i|^2/(N-j))
/// ```
///
/// and `-inf` outside.  `j` must satisfy `1 <= j <= N-2`.
#[derive(Clone, Debug)]
pub struct FubiniWeight {
    spec: BoltzmannSphereSpec,
    j: u32,
    prefactor_log: f64,
}

impl FubiniWeight {
    pub fn new(spec: &BoltzmannSphereSpec, j: u32) -> Result<Self> {
        if j < 1 || j > spec.n - 2 {
            return Err(KacError::InvalidParameter(format!(
                "need 1 <= j <= N-2 = {}, got {j}",
                spec.n - 2
            )));
        }
        let d = f64::from(spec.d);
        let n = f64::from(spec.n);
        let inner_m = spec.d * (spec.n - j - 1);
        let outer_m = spec.d * (spec.n - 1);
        let prefactor_log = log_sphere_area(inner_m) - log_sphere_area(outer_m)
            + 0.5 * d * (n.ln() - f64::from(spec.n - j).ln())
            - (f64::from(outer_m) - 2.0) * 0.5 * spec.radius_sq().ln();
        Ok(FubiniWeight {
            spec: spec.clone(),
            j,
            prefactor_log,
        })
    }

    pub fn j(&self) -> u32 {
        self.j
    }

    pub fn prefactor_log(&self) -> f64 {
        self.prefactor_log
    }

    /// `E - sum |v_i|^2 - |z - sum v_i|^2 / (N-j)`; nonnegative exactly on `Pi_j`.
    pub fn bracket(&self, frozen: &[Vec<f64>]) -> f64 {
        assert_eq!(frozen.len(), self.j as usize);
        let d = self.spec.d as usize;
        let mut energy = 0.0;
        let mut momentum = self.spec.z.clone();
        for v in frozen {
            assert_eq!(v.len(), d);
            for (k, x) in v.iter().enumerate() {
                energy += x * x;
                momentum[k] -= x;
            }
        }
        let msq: f64 = momentum.iter().map(|x| x * x).sum();
        self.spec.energy - energy - msq / f64::from(self.spec.n - self.j)
    }

    pub fn log_density(&self, frozen: &[Vec<f64>]) -> f64 {
        let bracket = self.bracket(frozen);
        let expo = (f64::from(self.spec.d * (self.spec.n - self.j - 1)) - 2.0) * 0.5;
        if bracket > 0.0 {
            self.prefactor_log + expo * bracket.ln()
        } else if bracket == 0.0 && expo == 0.0 {
            // dimension d(N-j-1) = 2: the weight is flat up to the boundary
            self.prefactor_log
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn density(&self, frozen: &[Vec<f64>]) -> f64 {
        self.log_density(frozen).exp()
    }
}

/// Convenience form of [`FubiniWeight::log_density`].
pub fn marginal_log_density(spec: &BoltzmannSphereSpec, j: u32, frozen: &[Vec<f64>]) -> Result<f64> {
    Ok(FubiniWeight::new(spec, j)?.log_density(frozen))
}

/// Moment `E[|v_1|^m]` of the one-particle marginal at `z = 0` by radial
/// quadrature of the Fubini weight.  Serves as the equilibrium oracle for
/// the collision process.
pub fn marginal_radial_moment(spec: &BoltzmannSphereSpec, power: u32) -> Result<f64> {
    if spec.z_norm_sq() != 0.0 {
        return Err(KacError::InvalidParameter(
            "radial moment oracle requires z = 0".into(),
        ));
    }
    let w = FubiniWeight::new(spec, 1)?;
    let d = spec.d;
    // support: |v|^2 <= E (N-1)/N
    let r_max = (spec.energy * f64::from(spec.n - 1) / f64::from(spec.n)).sqrt();
    let angular = log_sphere_area(d).exp();
    let integrand = |r: f64| {
        let mut v = vec![0.0; d as usize];
        v[0] = r;
        let ld = w.log_density(std::slice::from_ref(&v));
        if ld == f64::NEG_INFINITY {
            0.0
        } else {
            angular * r.powi((d - 1) as i32) * r.powi(power as i32) * ld.exp()
        }
    };
    Ok(crate::quad::adaptive_simpson(integrand, 0.0, r_max, 1e-12))
}

/// Sample the reduced sphere left after freezing some particles, covering
/// the degenerate point case `E' = |z'|^2 / N'` (every remaining velocity
/// equals `z'/N'`).
pub fn sample_on_reduced<R: Rng + ?Sized>(
    n: u32,
    d: u32,
    energy: f64,
    z: Vec<f64>,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let zsq: f64 = z.iter().map(|x| x * x).sum();
    let slack = energy - zsq / f64::from(n);
    // treat an exactly-boundary (or round-off negative) reduced sphere as
    // the point mass the formulas degenerate to
    if slack <= 1e-14 * energy.abs().max(1.0) {
        let point: Vec<f64> = z.iter().map(|x| x / f64::from(n)).collect();
        return Ok(vec![point; n as usize]);
    }
    let spec = BoltzmannSphereSpec::new(n, d, energy, z)?;
    Ok(uniform_sample(&spec, rng))
}

/// Result of the two-route marginalization check.
#[derive(Clone, Copy, Debug)]
pub struct FubiniCheck {
    /// plain sphere Monte Carlo of the test function
    pub sphere_estimate: f64,
    pub sphere_se: f64,
    /// weighted Monte Carlo through the `j`-particle marginal
    pub weight_estimate: f64,
    pub weight_se: f64,
}

impl FubiniCheck {
    pub fn gap(&self) -> f64 {
        (self.sphere_estimate - self.weight_estimate).abs()
    }

    pub fn combined_se(&self) -> f64 {
        (self.sphere_se * self.sphere_se + self.weight_se * self.weight_se).sqrt()
    }

    /// Agreement within `k` combined standard errors.
    pub fn agrees(&self, k: f64) -> bool {
        self.gap() <= k * self.combined_se().max(1e-14)
    }
}

/// Evaluate a sphere integral two independent ways: directly by uniform
/// sampling, and by freezing `j` particles under the marginal weight with
/// the remainder drawn from the reduced sphere.
///
/// The frozen block is proposed from an isotropic Gaussian wide enough to
/// cover `Pi_j` and reweighted by `marginal / proposal`; `budget` counts
/// samples per route.
pub fn fubini_check<R, F>(
    spec: &BoltzmannSphereSpec,
    j: u32,
    budget: u64,
    rng: &mut R,
    test_fn: F,
) -> Result<FubiniCheck>
where
    R: Rng + ?Sized,
    F: Fn(&[Vec<f64>]) -> f64,
{
    let weight = FubiniWeight::new(spec, j)?;
    let d = spec.d as usize;

    let mut acc = Accumulator::default();
    for _ in 0..budget {
        let v = uniform_sample(spec, rng);
        acc.push(test_fn(&v));
    }
    let (sphere_estimate, sphere_se) = acc.mean_se();

    // proposal variance per coordinate: covers |v_i|^2 up to E with a few
    // sigma to spare for every battery geometry
    let sigma_sq = spec.energy / (f64::from(spec.d) * f64::from(j) + 2.0);
    let log_q_norm = -0.5 * (d as f64) * f64::from(j)
        * (2.0 * std::f64::consts::PI * sigma_sq).ln();

    let mut acc = Accumulator::default();
    for _ in 0..budget {
        let frozen: Vec<Vec<f64>> = (0..j)
            .map(|_| {
                (0..d)
                    .map(|_| sigma_sq.sqrt() * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let log_w = weight.log_density(&frozen);
        if log_w == f64::NEG_INFINITY {
            acc.push(0.0);
            continue;
        }
        let log_q: f64 = log_q_norm
            - frozen
                .iter()
                .flat_map(|v| v.iter())
                .map(|x| x * x)
                .sum::<f64>()
                / (2.0 * sigma_sq);
        let mut reduced_energy = spec.energy;
        let mut reduced_z = spec.z.clone();
        for v in &frozen {
            for (k, x) in v.iter().enumerate() {
                reduced_energy -= x * x;
                reduced_z[k] -= x;
            }
        }
        let rest = sample_on_reduced(spec.n - j, spec.d, reduced_energy, reduced_z, rng)?;
        let mut full = frozen;
        full.extend(rest);
        acc.push((log_w - log_q).exp() * test_fn(&full));
    }
    let (weight_estimate, weight_se) = acc.mean_se();

    Ok(FubiniCheck {
        sphere_estimate,
        sphere_se,
        weight_estimate,
        weight_se,
    })
}

#[derive(Default)]
struct Accumulator {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Accumulator {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean_se(&self) -> (f64, f64) {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0);
        (mean, (var / n).sqrt())
    }
}
