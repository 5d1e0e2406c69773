//! The N-particle collision process.
//!
//! A trajectory is a pure jump process on velocity space: an exponential
//! clock of total rate N fires, a uniformly chosen unordered pair turns
//! about its center of mass into a uniformly chosen direction, and every
//! other particle stands still.  Each collision conserves the pair's
//! momentum and energy, so the trajectory never leaves the sphere its
//! initial condition pins down.  Jump times are exact exponential draws
//! and the state is piecewise constant between them; there is no time
//! discretization error anywhere.
//!
//! A discrete-step mode advances the clock by the mean waiting time 1/N
//! instead of a random draw, for workloads that only care about the
//! embedded chain.  Thinned variants weight pair selection by a kernel
//! evaluated on the pair, by rejection against a bound computed from the
//! conserved energy.  Two kernel forms are offered, one driven by the
//! total pair energy and one by the relative speed.  They scale
//! differently in the pair variables and do not arise from one another by
//! a change of variables; both are kept and nothing here takes a side on
//! which is canonical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use rayon::prelude::*;

use crate::sphere::{uniform_sample, BoltzmannSphereSpec};
use crate::{KacError, Result};

/// Scale-safe Euclidean norm.
fn stable_norm(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = v.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * s.sqrt()
}

/// Scale-safe norm of the difference `a - b`.
fn stable_diff_norm(a: &[f64], b: &[f64]) -> f64 {
    let mut scale = 0.0f64;
    for k in 0..a.len() {
        scale = scale.max((a[k] - b[k]).abs());
    }
    if scale == 0.0 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 0..a.len() {
        let t = (a[k] - b[k]) / scale;
        s += t * t;
    }
    scale * s.sqrt()
}

/// Uniform point on the unit sphere, as a normalized Gaussian vector.
fn unit_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = stable_norm(&g);
        if norm > 1e-6 {
            return g.iter().map(|x| x / norm).collect();
        }
    }
}

/// Uniform unordered pair out of `0..n`, returned with `i < j`.
fn uniform_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize) {
    let i = rng.gen_range(0..n);
    let mut j = rng.gen_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// The post-collisional pair: both particles move to their midpoint and
/// recede along `omega` at half the relative speed.
///
/// The midpoint is computed once, so the pair momentum is conserved
/// exactly in floating point; energy to rounding.  Equal velocities are a
/// fixed point for every direction, and `omega` parallel to `v_i - v_j`
/// reproduces the inputs.  Applying the map twice with the same direction
/// changes nothing (it is idempotent, not an involution).
pub fn collide(vi: &[f64], vj: &[f64], omega: &[f64]) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(vi.len(), vj.len());
    debug_assert_eq!(vi.len(), omega.len());
    let half = 0.5 * stable_diff_norm(vi, vj);
    let mut out_i = Vec::with_capacity(vi.len());
    let mut out_j = Vec::with_capacity(vi.len());
    for k in 0..vi.len() {
        let mid = 0.5 * (vi[k] + vj[k]);
        out_i.push(mid + half * omega[k]);
        out_j.push(mid - half * omega[k]);
    }
    (out_i, out_j)
}

/// One applied jump: the colliding pair (`i < j`), the scattering
/// direction (unit length to rounding), and the clock right after.
#[derive(Clone, Debug)]
pub struct CollisionEvent {
    pub i: usize,
    pub j: usize,
    pub omega: Vec<f64>,
    pub jump_time: f64,
}

/// Velocities of N particles in `R^d` with the trajectory clock and the
/// conserved quantities frozen at construction.
///
/// The clock never decreases, and the total energy and momentum of any
/// reachable state agree with the cached initial values to rounding; the
/// drift after any number of collisions stays far below `1e-9` relative.
#[derive(Clone, Debug)]
pub struct ParticleSystem {
    d: usize,
    /// Row-major flat storage, particle i at `[i*d .. (i+1)*d]`.
    v: Vec<f64>,
    time: f64,
    e0: f64,
    z0: Vec<f64>,
}

impl ParticleSystem {
    /// Adopt an explicit velocity list.  Needs at least two particles,
    /// matching dimensions, finite entries.
    pub fn new(d: usize, velocities: &[Vec<f64>]) -> Result<Self> {
        if d == 0 {
            return Err(KacError::InvalidParameter("need d >= 1".into()));
        }
        if velocities.len() < 2 {
            return Err(KacError::InvalidParameter(format!(
                "need at least 2 particles, got {}",
                velocities.len()
            )));
        }
        let mut v = Vec::with_capacity(velocities.len() * d);
        for (i, row) in velocities.iter().enumerate() {
            if row.len() != d {
                return Err(KacError::InvalidParameter(format!(
                    "particle {i} has dimension {}, expected {d}",
                    row.len()
                )));
            }
            if !row.iter().all(|x| x.is_finite()) {
                return Err(KacError::InvalidParameter(format!(
                    "particle {i} has a nonfinite component"
                )));
            }
            v.extend_from_slice(row);
        }
        let e0 = v.iter().map(|x| x * x).sum();
        let mut z0 = vec![0.0; d];
        for i in 0..velocities.len() {
            for k in 0..d {
                z0[k] += v[i * d + k];
            }
        }
        Ok(ParticleSystem { d, v, time: 0.0, e0, z0 })
    }

    /// All energy in the first particle: `v_1 = sqrt(E) e_1`, rest at rest.
    /// Total momentum is then `sqrt(E) e_1`.
    pub fn hot(n: usize, d: usize, energy: f64) -> Result<Self> {
        if !(energy > 0.0) || !energy.is_finite() {
            return Err(KacError::InvalidParameter(format!("need 0 < E < inf, got {energy}")));
        }
        let mut rows = vec![vec![0.0; d]; n];
        if n == 0 {
            return Err(KacError::InvalidParameter("need at least 2 particles".into()));
        }
        rows[0][0] = energy.sqrt();
        Self::new(d, &rows)
    }

    /// An antipodal hot pair `+-sqrt(E/2) e_1` with everyone else at rest,
    /// so total momentum vanishes while all energy sits in two particles.
    pub fn hot_pair(n: usize, d: usize, energy: f64) -> Result<Self> {
        if !(energy > 0.0) || !energy.is_finite() {
            return Err(KacError::InvalidParameter(format!("need 0 < E < inf, got {energy}")));
        }
        if n < 2 {
            return Err(KacError::InvalidParameter("need at least 2 particles".into()));
        }
        let mut rows = vec![vec![0.0; d]; n];
        rows[0][0] = (0.5 * energy).sqrt();
        rows[1][0] = -rows[0][0];
        Self::new(d, &rows)
    }

    /// Exact uniform draw on the given Boltzmann sphere.
    pub fn uniform<R: Rng + ?Sized>(spec: &BoltzmannSphereSpec, rng: &mut R) -> Self {
        let rows = uniform_sample(spec, rng);
        Self::new(spec.d() as usize, &rows).expect("uniform sphere draw is a valid state")
    }

    pub fn n(&self) -> usize {
        self.v.len() / self.d
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.v[i * self.d..(i + 1) * self.d]
    }

    pub fn velocities(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.velocity(i).to_vec()).collect()
    }

    /// Current total energy `sum |v_i|^2`.
    pub fn energy(&self) -> f64 {
        self.v.iter().map(|x| x * x).sum()
    }

    /// Current total momentum `sum v_i`.
    pub fn momentum(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.d];
        for i in 0..self.n() {
            for k in 0..self.d {
                z[k] += self.v[i * self.d + k];
            }
        }
        z
    }

    pub fn initial_energy(&self) -> f64 {
        self.e0
    }

    pub fn initial_momentum(&self) -> &[f64] {
        &self.z0
    }

    /// Drift of the conserved quantities off their cached initial values:
    /// `(|E - E0| / (1 + E0), |z - z0| / (1 + |z0|))`.
    pub fn constraint_drift(&self) -> (f64, f64) {
        let de = (self.energy() - self.e0).abs() / (1.0 + self.e0);
        let z = self.momentum();
        let dz: f64 = stable_diff_norm(&z, &self.z0) / (1.0 + stable_norm(&self.z0));
        (de, dz)
    }

    fn exp_waiting_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let exp = Exp::new(self.n() as f64).expect("rate N >= 2 is positive");
        rng.sample(exp)
    }

    fn apply(&mut self, i: usize, j: usize, omega: &[f64]) {
        let vi = self.velocity(i).to_vec();
        let vj = self.velocity(j).to_vec();
        let (a, b) = collide(&vi, &vj, omega);
        self.v[i * self.d..(i + 1) * self.d].copy_from_slice(&a);
        self.v[j * self.d..(j + 1) * self.d].copy_from_slice(&b);
    }

    fn jump<R: Rng + ?Sized>(&mut self, t_next: f64, rng: &mut R) -> CollisionEvent {
        let (i, j) = uniform_pair(self.n(), rng);
        let omega = unit_direction(self.d, rng);
        self.apply(i, j, &omega);
        self.time = t_next;
        CollisionEvent { i, j, omega, jump_time: t_next }
    }

    /// One jump of the rate-N process: exponential waiting time, uniform
    /// pair, uniform direction.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> CollisionEvent {
        let dt = self.exp_waiting_time(rng);
        self.jump(self.time + dt, rng)
    }

    /// The same embedded chain with the clock advanced by the mean
    /// waiting time `1/N` instead of a draw.
    pub fn discrete_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> CollisionEvent {
        let dt = 1.0 / self.n() as f64;
        self.jump(self.time + dt, rng)
    }

    /// One proposal of the thinned process.  The clock advances on every
    /// proposal; the collision itself happens with probability
    /// `B(pair) / B_max`, where the bound is evaluated at the conserved
    /// initial energy.  Returns the event iff the proposal was accepted.
    ///
    /// `gamma = 0` turns both kernels into the constant 1; acceptance is
    /// then certain, no acceptance variate is consumed, and the method
    /// replays `step` draw for draw.
    pub fn kernel_thinning_step<R: Rng + ?Sized>(
        &mut self,
        gamma: f64,
        kind: KernelKind,
        rng: &mut R,
    ) -> Result<Option<CollisionEvent>> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(KacError::InvalidParameter(format!(
                "need 0 <= gamma < inf, got {gamma}"
            )));
        }
        let b_max = match kind {
            KernelKind::EnergyForm => (1.0 + self.e0).powf(0.5 * gamma),
            KernelKind::RelativeSpeed => (2.0 * self.e0).powf(0.5 * gamma),
        };
        if !b_max.is_finite() || !(b_max > 0.0) {
            return Err(KacError::InvalidParameter(format!(
                "kernel bound {b_max} at energy {} is unusable",
                self.e0
            )));
        }
        let dt = self.exp_waiting_time(rng);
        let t_next = self.time + dt;
        let (i, j) = uniform_pair(self.n(), rng);
        let b = match kind {
            KernelKind::EnergyForm => {
                let s: f64 = self.velocity(i).iter().chain(self.velocity(j)).map(|x| x * x).sum();
                (1.0 + s).powf(0.5 * gamma)
            }
            KernelKind::RelativeSpeed => {
                stable_diff_norm(self.velocity(i), self.velocity(j)).powf(gamma)
            }
        };
        let p = b / b_max;
        // certain accept and certain reject skip the acceptance draw, so
        // the unit kernel replays the plain stream bit for bit
        let accept = if p >= 1.0 {
            true
        } else if p > 0.0 {
            rng.gen::<f64>() < p
        } else {
            false
        };
        self.time = t_next;
        if !accept {
            return Ok(None);
        }
        let omega = unit_direction(self.d, rng);
        self.apply(i, j, &omega);
        Ok(Some(CollisionEvent { i, j, omega, jump_time: t_next }))
    }
}

/// Pair weight for thinned collision rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    /// `(1 + |v_i|^2 + |v_j|^2)^{gamma/2}`, bounded by the same
    /// expression at the full conserved energy.
    EnergyForm,
    /// `|v_i - v_j|^gamma`, bounded through `|v_i - v_j|^2 <= 2E`.
    RelativeSpeed,
}

/// Ensemble statistics read off the state at sample times.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observable {
    /// The constant 1, a clock and plumbing probe.
    Unit,
    /// `(1/N) sum_i |v_i|^p`.
    MeanMoment(u32),
    /// `|v_i|^p` for one fixed particle index.
    ParticleMoment(usize, u32),
    /// `|sum_i v_i - z_0|`, absolute momentum drift.
    MomentumDrift,
    /// `|sum_i |v_i|^2 - E_0|`, absolute energy drift.
    EnergyDrift,
}

impl Observable {
    fn validate(&self, sys: &ParticleSystem) -> Result<()> {
        if let Observable::ParticleMoment(i, _) = self {
            if *i >= sys.n() {
                return Err(KacError::InvalidParameter(format!(
                    "particle index {i} out of range for N = {}",
                    sys.n()
                )));
            }
        }
        Ok(())
    }

    pub fn eval(&self, sys: &ParticleSystem) -> f64 {
        match *self {
            Observable::Unit => 1.0,
            Observable::MeanMoment(p) => {
                let n = sys.n();
                (0..n)
                    .map(|i| stable_norm(sys.velocity(i)).powi(p as i32))
                    .sum::<f64>()
                    / n as f64
            }
            Observable::ParticleMoment(i, p) => stable_norm(sys.velocity(i)).powi(p as i32),
            Observable::MomentumDrift => {
                stable_diff_norm(&sys.momentum(), &sys.z0)
            }
            Observable::EnergyDrift => (sys.energy() - sys.e0).abs(),
        }
    }
}

/// One sampled row of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub time: f64,
    /// One value per requested observable, in request order.
    pub values: Vec<f64>,
}

/// Run the jump process to `t_end`, reading the observables at the given
/// times.  The state is constant between jumps, so each sample reports
/// the state whose jump interval covers it.  Sample times must be sorted,
/// start no earlier than the current clock, and end by `t_end`.  The
/// whole series is a deterministic function of the initial state and the
/// generator stream.
pub fn run<R: Rng + ?Sized>(
    sys: &mut ParticleSystem,
    t_end: f64,
    sample_times: &[f64],
    observables: &[Observable],
    rng: &mut R,
) -> Result<Vec<RunRecord>> {
    if !t_end.is_finite() || !(t_end > sys.time) {
        return Err(KacError::InvalidParameter(format!(
            "need time {} < t_end < inf, got {t_end}",
            sys.time
        )));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(KacError::InvalidParameter("sample times must be sorted".into()));
    }
    if let (Some(first), Some(last)) = (sample_times.first(), sample_times.last()) {
        if *first < sys.time || *last > t_end {
            return Err(KacError::InvalidParameter(format!(
                "sample times must sit in [{}, {t_end}]",
                sys.time
            )));
        }
    }
    for ob in observables {
        ob.validate(sys)?;
    }
    let mut out = Vec::with_capacity(sample_times.len());
    let mut idx = 0;
    loop {
        let dt = sys.exp_waiting_time(rng);
        let t_next = sys.time + dt;
        // flush samples the upcoming jump does not reach
        let horizon = t_next.min(t_end);
        while idx < sample_times.len() && sample_times[idx] <= horizon {
            out.push(RunRecord {
                time: sample_times[idx],
                values: observables.iter().map(|ob| ob.eval(sys)).collect(),
            });
            idx += 1;
        }
        if t_next >= t_end {
            sys.time = t_end;
            break;
        }
        let (i, j) = uniform_pair(sys.n(), rng);
        let omega = unit_direction(sys.d, rng);
        sys.apply(i, j, &omega);
        sys.time = t_next;
    }
    Ok(out)
}

/// Mean and standard error over independent replicas, per sample time and
/// observable.
#[derive(Clone, Debug)]
pub struct ReplicaSummary {
    pub times: Vec<f64>,
    /// `mean[t][k]`: replica average of observable k at `times[t]`.
    pub mean: Vec<Vec<f64>>,
    /// Standard error of that mean; NaN when only one replica ran.
    pub se: Vec<Vec<f64>>,
}

/// Run independent copies of `proto` in parallel and average.  Replica r
/// draws from its own generator seeded from `seed` and r, so the summary
/// does not depend on the worker pool.
pub fn run_replicas(
    proto: &ParticleSystem,
    t_end: f64,
    sample_times: &[f64],
    observables: &[Observable],
    replicas: u32,
    seed: u64,
) -> Result<ReplicaSummary> {
    if replicas == 0 {
        return Err(KacError::InvalidParameter("need at least one replica".into()));
    }
    let runs: Vec<Result<Vec<RunRecord>>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (u64::from(r) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            let mut sys = proto.clone();
            run(&mut sys, t_end, sample_times, observables, &mut rng)
        })
        .collect();
    let m = sample_times.len();
    let k = observables.len();
    let mut tables = Vec::with_capacity(replicas as usize);
    for rows in runs {
        tables.push(rows?);
    }
    let r = f64::from(replicas);
    let mut mean = vec![vec![0.0f64; k]; m];
    let mut se = vec![vec![0.0f64; k]; m];
    for t in 0..m {
        for q in 0..k {
            let mu = tables.iter().map(|rows| rows[t].values[q]).sum::<f64>() / r;
            mean[t][q] = mu;
            // two-pass variance: a conserved observable agrees across
            // replicas to rounding, and the one-pass form would cancel
            // catastrophically instead of reporting that tiny spread
            let var = tables
                .iter()
                .map(|rows| {
                    let dv = rows[t].values[q] - mu;
                    dv * dv
                })
                .sum::<f64>()
                / (r - 1.0);
            // a single replica has no spread to report
            se[t][q] = if replicas > 1 { (var / r).sqrt() } else { f64::NAN };
        }
    }
    Ok(ReplicaSummary { times: sample_times.to_vec(), mean, se })
}
