//! Entropy, entropy production, and their ratio for the conditioned tensor
//! family `F_N = prod f(v_i) / Z_N` on the momentum-energy sphere, plus the
//! N-scaling study that assembles the decay table.
//!
//! Both functionals reduce to low-dimensional integrals against the
//! conditioned marginals.  Written out, the j-particle marginal weight is a
//! sphere-area prefactor times a bracket power times `Z_{N-j}/Z_N`; the
//! prefactors and bracket powers cancel against the `Z_{N-j}` assembly
//! exactly, leaving the sum-density ratio
//!
//! ```text
//! weight(v_1..v_j) = h^{*(N-j)}(|v_1+..+v_j|, N - sum |v_i|^2) / h^{*N}(0, N)
//! ```
//!
//! against `f^{otimes j}`.  All computations here run on that fused ratio,
//! which stays `O(1)` across the support; the uncollapsed composition
//! (Fubini weight times sub-sphere normalization) survives as a test.
//!
//! The entropy is `H_N = N I_1 - log Z_N` with `I_1` the marginal-weighted
//! integral of `f log f`, radial at `z = 0`.  The production pairing is the
//! symmetrized two-particle collision integral; with `L` the log ratio of
//! pre- to post-collision products, the integrand carries `L(1 - e^{-L})
//! >= 0` so every Monte Carlo term is nonnegative.  The collision average
//! uses the uniform probability measure on the sphere of directions, so no
//! area factor enters.
//!
//! Factor-of-N convention: the production functional is defined through
//! `N(I - Q)`, while the two-particle reduction bounds the N-free pairing.
//! `ProductionEstimate` stores the pairing and, for reporting, `production
//! = N x pairing`; the ratio witness multiplies the stored pairing by `N`
//! itself, so the factor is applied exactly once on every path.

use crate::charfn::{invert_radial, z_n, CharFnGrid, KernelTable, LogNormalization, Mixture};
use crate::densities::{eta_window, GeneratingFunction, ScheduleParams};
use crate::quad::PanelRule;
use crate::special::log_sphere_area;
use crate::sphere::BoltzmannSphereSpec;
use crate::{KacError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const GRID_EPS: f64 = 1e-12;

fn inversion_grid(mix: &Mixture, n_inv: u32, u_max: f64, z_max: f64) -> Result<CharFnGrid> {
    CharFnGrid::for_inversion(mix, n_inv, u_max, z_max, GRID_EPS)
}

/// The tensor density `prod f(v_i)` conditioned to the sphere `E = N`,
/// `z = 0`, normalized by `Z_N`.
///
/// Held as a Maxwellian mixture so the two-component generating family and
/// the pure-Maxwellian fixed point run the identical pipeline.
#[derive(Clone, Debug)]
pub struct ConditionedFamily {
    mix: Mixture,
    spec: BoltzmannSphereSpec,
    log_zn: LogNormalization,
    n: u32,
}

impl ConditionedFamily {
    pub fn new(g: &GeneratingFunction, n: u32) -> Result<Self> {
        Self::from_mixture(Mixture::from_generating(g), n)
    }

    /// Pure-Maxwellian family; any `a` gives the uniform density on the
    /// sphere (the tensor is constant there), hence the `H = D = 0` fixed
    /// point.
    pub fn maxwellian(d: u32, a: f64, n: u32) -> Result<Self> {
        Self::from_mixture(Mixture::single(d, a)?, n)
    }

    pub fn from_mixture(mix: Mixture, n: u32) -> Result<Self> {
        if n < 4 {
            return Err(KacError::InvalidParameter(format!(
                "conditioned family needs N >= 4, got {n}"
            )));
        }
        let d = mix.d();
        let nf = f64::from(n);
        let spec = BoltzmannSphereSpec::new(n, d, nf, vec![0.0; d as usize])?;
        let grid = inversion_grid(&mix, n, nf, 0.0)?;
        let log_zn = z_n(&mix, n, nf, &vec![0.0; d as usize], &grid)?;
        Ok(ConditionedFamily {
            mix,
            spec,
            log_zn,
            n,
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn d(&self) -> u32 {
        self.mix.d()
    }

    pub fn mixture(&self) -> &Mixture {
        &self.mix
    }

    pub fn sphere(&self) -> &BoltzmannSphereSpec {
        &self.spec
    }

    pub fn log_zn(&self) -> &LogNormalization {
        &self.log_zn
    }
}

/// `H_N` and its ingredients.  `marginal_mass` is the quadrature of the
/// marginal weight alone and equals 1 up to quadrature error; it is the
/// cheapest end-to-end consistency probe of the whole reduction, so it is
/// always reported.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct EntropyValue {
    pub n: u32,
    /// marginal-weighted integral of `log f`
    pub i1: f64,
    /// `N I_1 - log Z_N`
    pub h_n: f64,
    pub h_over_n: f64,
    pub marginal_mass: f64,
    /// radial nodes where the inverted sub-density came back nonpositive
    /// (quadrature noise deep in a tail) and the node was dropped
    pub skipped_nodes: usize,
}

/// `H_N` through the one-particle reduction: radial quadrature over
/// `|v_1| = r` up to the support edge `r^2 = N - 1`, with the weight
/// `h^{*(N-1)}(r, N - r^2) / h^{*N}(0, N)`.
pub fn entropy_hn(fam: &ConditionedFamily, radial_panels: u32) -> Result<EntropyValue> {
    if radial_panels < 8 {
        return Err(KacError::InvalidParameter(
            "need at least 8 radial panels".into(),
        ));
    }
    let n = fam.n;
    let d = fam.mix.d();
    let nf = f64::from(n);
    let r_max = (nf - 1.0).sqrt();
    let rule = PanelRule::gauss(12);
    let nodes = rule.grid(0.0, r_max, radial_panels as usize);

    let sub_grid = inversion_grid(&fam.mix, n - 1, nf, r_max)?;
    let points: Vec<(f64, f64)> = nodes.iter().map(|&(r, _)| (r, nf - r * r)).collect();
    let h_vals = sub_density_values(&fam.mix, n - 1, &sub_grid, &points)?;

    let log_hn = fam.log_zn.h_n_value.ln();
    let area = log_sphere_area(d).exp();
    let mut mass = 0.0;
    let mut i1 = 0.0;
    let mut skipped = 0usize;
    for (&(r, w), &h) in nodes.iter().zip(&h_vals) {
        if !(h > 0.0) {
            skipped += 1;
            continue;
        }
        let log_f = fam.mix.log_density_vsq(r * r);
        let weight = w * area * r.powi((d - 1) as i32) * (log_f + h.ln() - log_hn).exp();
        mass += weight;
        i1 += weight * log_f;
    }
    let h_n = nf * i1 - fam.log_zn.log_zn;
    Ok(EntropyValue {
        n,
        i1,
        h_n,
        h_over_n: h_n / nf,
        marginal_mass: mass,
        skipped_nodes: skipped,
    })
}

/// `h^{*n_sub}` at many `(z, u)` points: frozen kernel table in the box
/// regime, per-point oscillatory inversion below it (where a failed point
/// is reported as NaN rather than aborting the sweep).
fn sub_density_values(
    mix: &Mixture,
    n_sub: u32,
    grid: &CharFnGrid,
    points: &[(f64, f64)],
) -> Result<Vec<f64>> {
    if mix.d() * n_sub.saturating_sub(2) >= 12 {
        let table = KernelTable::mixture_power(mix, n_sub, grid)?;
        Ok(table.invert_many(points))
    } else {
        Ok(points
            .par_iter()
            .map(|&(z, u)| invert_radial(mix, n_sub, z, u, grid).unwrap_or(f64::NAN))
            .collect())
    }
}

/// Computed entropy components next to their limits, isolating the
/// `d log2 / 2` gap.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct EntropyLimits {
    pub i1: f64,
    /// `(d/2)(log d - log pi - 1)`
    pub i1_limit: f64,
    pub log_zn_over_n: f64,
    /// `i1_limit - (d/2) log 2`
    pub log_zn_over_n_limit: f64,
    pub h_over_n: f64,
    /// `(d/2) log 2`
    pub h_over_n_limit: f64,
}

pub fn entropy_limit_components(fam: &ConditionedFamily, ent: &EntropyValue) -> EntropyLimits {
    let d = f64::from(fam.mix.d());
    let i1_limit = 0.5 * d * (d.ln() - std::f64::consts::PI.ln() - 1.0);
    let h_limit = 0.5 * d * std::f64::consts::LN_2;
    EntropyLimits {
        i1: ent.i1,
        i1_limit,
        log_zn_over_n: fam.log_zn.log_zn / f64::from(fam.n),
        log_zn_over_n_limit: i1_limit - h_limit,
        h_over_n: ent.h_over_n,
        h_over_n_limit: h_limit,
    }
}

/// Which weight the production estimator uses for the sub-density ratio:
/// the inverted values themselves, or the Gaussian stand-in (fast, with an
/// approximation error that is reported by comparison, not bounded).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WeightMode {
    Exact,
    Surrogate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ProductionStatus {
    Converged,
    /// relative standard error above the caller's threshold, or too many
    /// samples fell outside the tabulated weight range
    IncreaseBudget,
}

/// Monte Carlo estimate of the collision pairing and its `N`-restored
/// production value.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct ProductionEstimate {
    pub n: u32,
    /// `<log F, (I-Q)F>`: the N-free pairing that the two-particle
    /// reduction computes
    pub pairing: f64,
    pub pairing_se: f64,
    /// `N x pairing`, the production functional of the `N(I-Q)` evolution
    pub production: f64,
    pub production_se: f64,
    /// most negative sampled term; the integrand is nonnegative, so
    /// anything below roundoff signals a defect
    pub min_term: f64,
    /// samples whose weight fell outside the tabulated `(z, u)` range (or
    /// on an untabulated corner) and were dropped as zero; their true
    /// contribution is tail-suppressed
    pub clipped: u64,
    pub budget: u64,
    pub seed: u64,
    pub mode: WeightMode,
    pub status: ProductionStatus,
}

pub fn entropy_production_dn(
    fam: &ConditionedFamily,
    mc_budget: u64,
    seed: u64,
    rel_se_threshold: f64,
) -> Result<ProductionEstimate> {
    entropy_production_with_mode(fam, mc_budget, seed, rel_se_threshold, WeightMode::Exact)
}

const MC_CHUNKS: u64 = 64;

pub fn entropy_production_with_mode(
    fam: &ConditionedFamily,
    mc_budget: u64,
    seed: u64,
    rel_se_threshold: f64,
    mode: WeightMode,
) -> Result<ProductionEstimate> {
    if fam.n < 6 {
        return Err(KacError::InvalidParameter(format!(
            "production estimate needs N >= 6, got {}",
            fam.n
        )));
    }
    if mc_budget < 10_000 {
        return Err(KacError::InvalidParameter(format!(
            "need a Monte Carlo budget of at least 1e4, got {mc_budget}"
        )));
    }
    if !(rel_se_threshold > 0.0) {
        return Err(KacError::InvalidParameter(
            "relative-SE threshold must be positive".into(),
        ));
    }
    let n = fam.n;
    let nf = f64::from(n);
    let log_hn = fam.log_zn.h_n_value.ln();
    let table = match mode {
        WeightMode::Exact => Some(LogHTable::build(&fam.mix, n)?),
        WeightMode::Surrogate => None,
    };
    let log_weight = |z_mod: f64, u: f64| -> Option<f64> {
        match &table {
            Some(t) => t.lookup(z_mod, u).map(|lh| lh - log_hn),
            None => Some(
                fam.mix.gamma_n_log_density(n - 2, z_mod, u)
                    - fam.mix.gamma_n_log_density(n, 0.0, nf),
            ),
        }
    };

    // fixed chunk count with derived per-chunk seeds: the estimate is
    // independent of the worker pool
    let counts: Vec<u64> = (0..MC_CHUNKS)
        .map(|c| mc_budget / MC_CHUNKS + u64::from(c < mc_budget % MC_CHUNKS))
        .collect();
    let partials: Vec<ChunkStats> = counts
        .par_iter()
        .enumerate()
        .map(|(c, &count)| {
            let chunk_seed =
                seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(c as u64 + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(chunk_seed);
            let mut st = ChunkStats::default();
            for _ in 0..count {
                let v1 = fam.mix.sample(&mut rng);
                let v2 = fam.mix.sample(&mut rng);
                let omega = sample_unit_direction(fam.mix.d() as usize, &mut rng);
                let (term, clip) = pair_term(&fam.mix, nf, &v1, &v2, &omega, &log_weight);
                st.add(term, clip);
            }
            st
        })
        .collect();
    let mut total = ChunkStats::default();
    for p in &partials {
        total.merge(p);
    }

    let count = total.count as f64;
    let pairing = total.sum / count;
    let var = ((total.sum_sq - count * pairing * pairing) / (count - 1.0)).max(0.0);
    let pairing_se = (var / count).sqrt();
    let clip_excess = total.clipped as f64 > 0.01 * mc_budget as f64;
    let status = if clip_excess {
        ProductionStatus::IncreaseBudget
    } else if pairing_se == 0.0 {
        ProductionStatus::Converged
    } else if !(pairing > 0.0) || pairing_se / pairing > rel_se_threshold {
        ProductionStatus::IncreaseBudget
    } else {
        ProductionStatus::Converged
    };
    Ok(ProductionEstimate {
        n,
        pairing,
        pairing_se,
        production: nf * pairing,
        production_se: nf * pairing_se,
        min_term: total.min_term,
        clipped: total.clipped,
        budget: mc_budget,
        seed,
        mode,
        status,
    })
}

#[derive(Clone, Copy, Debug)]
struct ChunkStats {
    sum: f64,
    sum_sq: f64,
    min_term: f64,
    clipped: u64,
    count: u64,
}

impl Default for ChunkStats {
    fn default() -> Self {
        ChunkStats {
            sum: 0.0,
            sum_sq: 0.0,
            min_term: f64::INFINITY,
            clipped: 0,
            count: 0,
        }
    }
}

impl ChunkStats {
    fn add(&mut self, term: f64, clip: bool) {
        self.sum += term;
        self.sum_sq += term * term;
        self.min_term = self.min_term.min(term);
        self.clipped += u64::from(clip);
        self.count += 1;
    }

    fn merge(&mut self, other: &ChunkStats) {
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.min_term = self.min_term.min(other.min_term);
        self.clipped += other.clipped;
        self.count += other.count;
    }
}

/// One sampled term of the symmetrized pairing integrand, divided by the
/// proposal density `f(v_1) f(v_2)`:
///
/// ```text
/// (1/2) chi_{Pi_2} * (h^{*(N-2)}(|v_1+v_2|, N-s) / h^{*N}(0,N)) * L (1 - e^{-L})
/// ```
///
/// with `L` the log ratio of pre- to post-collision products.  The support
/// indicator is folded into the integrand rather than resampling; that
/// estimates the same restricted integral without a separate
/// acceptance-rate correction.  Returns `(term, clipped)` where `clipped`
/// marks a sample inside the support whose weight was not tabulated.
fn pair_term(
    mix: &Mixture,
    nf: f64,
    v1: &[f64],
    v2: &[f64],
    omega: &[f64],
    log_weight: &impl Fn(f64, f64) -> Option<f64>,
) -> (f64, bool) {
    let s1: f64 = v1.iter().map(|x| x * x).sum();
    let s2: f64 = v2.iter().map(|x| x * x).sum();
    let s = s1 + s2;
    let zsum_sq: f64 = v1.iter().zip(v2).map(|(a, b)| (a + b) * (a + b)).sum();
    if nf - s - zsum_sq / (nf - 2.0) <= 0.0 {
        return (0.0, false);
    }
    let rel_sq: f64 = v1.iter().zip(v2).map(|(a, b)| (a - b) * (a - b)).sum();
    let half = 0.5 * rel_sq.sqrt();
    let mut w1_sq = 0.0;
    let mut w2_sq = 0.0;
    for ((a, b), o) in v1.iter().zip(v2).zip(omega) {
        let mid = 0.5 * (a + b);
        let p = mid + half * o;
        let q = mid - half * o;
        w1_sq += p * p;
        w2_sq += q * q;
    }
    let l = mix.log_density_vsq(s1) + mix.log_density_vsq(s2)
        - mix.log_density_vsq(w1_sq)
        - mix.log_density_vsq(w2_sq);
    // L (1 - e^{-L}) >= 0, stable near L = 0
    let factor = l * (-(-l).exp_m1());
    match log_weight(zsum_sq.sqrt(), nf - s) {
        Some(lw) => (0.5 * lw.exp() * factor, false),
        None => (0.0, true),
    }
}

fn sample_unit_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let norm_sq: f64 = v.iter().map(|x| x * x).sum();
        if norm_sq > 1e-12 {
            let norm = norm_sq.sqrt();
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// Bilinear table of `log h^{*(N-2)}(z, u)` over the reachable `(z, u)`
/// rectangle.  Untabulated cells (outside the support wedge, or where the
/// inversion drowned in tail noise) hold NaN and surface as `None`.
struct LogHTable {
    u_min: f64,
    u_max: f64,
    du: f64,
    n_u: usize,
    z_max: f64,
    dz: f64,
    n_z: usize,
    vals: Vec<f64>,
}

const TABLE_U_POINTS: usize = 56;
const TABLE_Z_POINTS: usize = 40;

impl LogHTable {
    fn build(mix: &Mixture, n: u32) -> Result<Self> {
        let n_sub = n - 2;
        let nf = f64::from(n);
        let a_max = mix
            .components()
            .iter()
            .map(|&(_, a)| a)
            .fold(0.0f64, f64::max);
        // pair-energy ceiling: beyond it the proposal mass is
        // e^{-O(s_max / a_max)} and samples are clipped (counted, and
        // escalated if they exceed 1% of the budget)
        let s_max = (2.0 * mix.mean_vsq() + 30.0 * a_max).min(nf - 0.5);
        let u_min = (nf - s_max).max(0.0);
        let u_max = nf;
        let z_max = (2.0 * s_max).sqrt();
        let grid = inversion_grid(mix, n_sub, u_max, z_max)?;
        let n_u = TABLE_U_POINTS;
        let n_z = TABLE_Z_POINTS;
        let du = (u_max - u_min) / (n_u - 1) as f64;
        let dz = z_max / (n_z - 1) as f64;
        let mut points = Vec::with_capacity(n_u * n_z);
        for ui in 0..n_u {
            let u = u_min + du * ui as f64;
            for zi in 0..n_z {
                points.push((dz * zi as f64, u));
            }
        }
        let sub_nf = f64::from(n_sub);
        let raw = sub_density_values(mix, n_sub, &grid, &points)?;
        let vals: Vec<f64> = points
            .iter()
            .zip(&raw)
            .map(|(&(z, u), &h)| {
                if u - z * z / sub_nf <= 0.0 || !(h > 0.0) {
                    f64::NAN
                } else {
                    h.ln()
                }
            })
            .collect();
        Ok(LogHTable {
            u_min,
            u_max,
            du,
            n_u,
            z_max,
            dz,
            n_z,
            vals,
        })
    }

    fn lookup(&self, z: f64, u: f64) -> Option<f64> {
        if !(z >= 0.0 && z <= self.z_max && u >= self.u_min && u <= self.u_max) {
            return None;
        }
        let fu = ((u - self.u_min) / self.du).min((self.n_u - 2) as f64);
        let fz = (z / self.dz).min((self.n_z - 2) as f64);
        let ui = fu.floor() as usize;
        let zi = fz.floor() as usize;
        let tu = fu - ui as f64;
        let tz = fz - zi as f64;
        let c00 = self.vals[ui * self.n_z + zi];
        let c01 = self.vals[ui * self.n_z + zi + 1];
        let c10 = self.vals[(ui + 1) * self.n_z + zi];
        let c11 = self.vals[(ui + 1) * self.n_z + zi + 1];
        let v = (1.0 - tu) * ((1.0 - tz) * c00 + tz * c01) + tu * ((1.0 - tz) * c10 + tz * c11);
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }
}

/// Upper-bound witness for the entropy-production ratio: `N x pairing / H`.
/// This is the single site where the `N` factor is restored on the ratio
/// path.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct GammaWitness {
    pub n: u32,
    pub gamma_upper_witness: f64,
    pub se: f64,
}

pub fn gamma_upper_witness(
    ent: &EntropyValue,
    prod: &ProductionEstimate,
) -> Result<GammaWitness> {
    if ent.n != prod.n {
        return Err(KacError::InvalidParameter(format!(
            "entropy is for N = {} but production for N = {}",
            ent.n, prod.n
        )));
    }
    if !(ent.h_n > 0.0) {
        return Err(KacError::Domain(format!(
            "ratio witness needs H_N > 0, got {:.3e}",
            ent.h_n
        )));
    }
    let nf = f64::from(ent.n);
    Ok(GammaWitness {
        n: ent.n,
        gamma_upper_witness: nf * prod.pairing / ent.h_n,
        se: nf * prod.pairing_se / ent.h_n,
    })
}

/// One row of the decay table.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ScalingRow {
    pub n: u32,
    pub delta_n: f64,
    pub h_over_n: f64,
    /// equals the N-free pairing
    pub d_over_n: f64,
    pub gamma_upper_witness: f64,
    pub gamma_se: f64,
    /// `|H/N - (d/2) log 2|`
    pub h_gap: f64,
    pub production_status: ProductionStatus,
    pub seed: u64,
    pub budget: u64,
    /// set when any stage of the row failed; the numeric fields are NaN
    pub error: Option<String>,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ScalingStudy {
    pub d: u32,
    pub eta: f64,
    pub beta: f64,
    pub rows: Vec<ScalingRow>,
    /// least-squares slopes of `log y` vs `log N` over the clean rows
    pub slope_h_gap: Option<f64>,
    pub slope_d_over_n: Option<f64>,
    pub slope_gamma: Option<f64>,
}

const STUDY_RADIAL_PANELS: u32 = 96;
const STUDY_SE_THRESHOLD: f64 = 0.5;

/// The flattening schedule `delta_N = N^{-(1-eta)}` swept over `n_list`:
/// entropy, production, and the ratio witness per `N`, plus decay slopes.
/// A failed row is marked and the sweep continues.  `budgets` holds one
/// Monte Carlo budget per `N`, or a single budget applied to all.
pub fn scaling_study(
    d: u32,
    eta: f64,
    beta: f64,
    n_list: &[u32],
    budgets: &[u64],
    seed: u64,
) -> Result<ScalingStudy> {
    if n_list.is_empty() {
        return Err(KacError::InvalidParameter("empty N list".into()));
    }
    if budgets.len() != 1 && budgets.len() != n_list.len() {
        return Err(KacError::InvalidParameter(format!(
            "got {} budgets for {} values of N",
            budgets.len(),
            n_list.len()
        )));
    }
    let (lo, hi) = eta_window(beta, d)?;
    if !(eta > lo && eta < hi) {
        return Err(KacError::Domain(format!(
            "eta = {eta} outside the admissible window ({lo:.4}, {hi:.4})"
        )));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for (i, &n) in n_list.iter().enumerate() {
        let budget = budgets[i % budgets.len()];
        let row_seed = seed ^ (u64::from(n)).wrapping_mul(0x2545_f491_4f6c_dd1d);
        match scaling_row(d, eta, beta, n, budget, row_seed) {
            Ok(row) => rows.push(row),
            Err(e) => rows.push(ScalingRow {
                n,
                delta_n: f64::NAN,
                h_over_n: f64::NAN,
                d_over_n: f64::NAN,
                gamma_upper_witness: f64::NAN,
                gamma_se: f64::NAN,
                h_gap: f64::NAN,
                production_status: ProductionStatus::IncreaseBudget,
                seed: row_seed,
                budget,
                error: Some(e.to_string()),
            }),
        }
    }
    let clean: Vec<&ScalingRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let xs: Vec<f64> = clean.iter().map(|r| f64::from(r.n).ln()).collect();
    let fit = |ys: Vec<f64>| -> Option<f64> {
        let pairs: Vec<(f64, f64)> = xs
            .iter()
            .zip(&ys)
            .filter(|&(_, &y)| y > 0.0 && y.is_finite())
            .map(|(&x, &y)| (x, y.ln()))
            .collect();
        slope_fit(&pairs)
    };
    let slope_h_gap = fit(clean.iter().map(|r| r.h_gap).collect());
    let slope_d_over_n = fit(clean.iter().map(|r| r.d_over_n).collect());
    let slope_gamma = fit(clean.iter().map(|r| r.gamma_upper_witness).collect());
    Ok(ScalingStudy {
        d,
        eta,
        beta,
        rows,
        slope_h_gap,
        slope_d_over_n,
        slope_gamma,
    })
}

fn scaling_row(d: u32, eta: f64, beta: f64, n: u32, budget: u64, seed: u64) -> Result<ScalingRow> {
    let params = ScheduleParams::new(u64::from(n), d, eta, beta)?;
    let g = params.generating_function();
    let fam = ConditionedFamily::new(&g, n)?;
    let ent = entropy_hn(&fam, STUDY_RADIAL_PANELS)?;
    let prod = entropy_production_dn(&fam, budget, seed, STUDY_SE_THRESHOLD)?;
    let gamma = gamma_upper_witness(&ent, &prod)?;
    let h_limit = 0.5 * f64::from(d) * std::f64::consts::LN_2;
    Ok(ScalingRow {
        n,
        delta_n: g.delta(),
        h_over_n: ent.h_over_n,
        d_over_n: prod.pairing,
        gamma_upper_witness: gamma.gamma_upper_witness,
        gamma_se: gamma.se,
        h_gap: (ent.h_over_n - h_limit).abs(),
        production_status: prod.status,
        seed,
        budget,
        error: None,
    })
}

fn slope_fit(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let sx: f64 = pairs.iter().map(|p| p.0).sum();
    let sy: f64 = pairs.iter().map(|p| p.1).sum();
    let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{delta_schedule, eta_mid};
    use crate::sphere::FubiniWeight;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn family_construction_validates() {
        let g = GeneratingFunction::new(2, 0.2).unwrap();
        assert!(ConditionedFamily::new(&g, 3).is_err());
        let fam = ConditionedFamily::new(&g, 8).unwrap();
        assert_eq!(fam.n(), 8);
        assert_eq!(fam.d(), 2);
        assert_eq!(fam.sphere().hyperplane_dim(), 14);
        assert!(fam.log_zn().log_zn.is_finite());
    }

    #[test]
    fn maxwellian_family_is_the_uniform_fixed_point() {
        // any single Maxwellian conditions to the uniform density; with
        // a = 1/(2d) the closed forms below are the matched ones
        let d = 2u32;
        let a = 1.0 / (2.0 * f64::from(d));
        let fam = ConditionedFamily::maxwellian(d, a, 16).unwrap();
        let ent = entropy_hn(&fam, 64).unwrap();
        // I_1 = E[log M_a] under the sphere marginal with E|v|^2 = 1:
        // -(d/2) log(2 pi a) - 1/(2a)
        let i1_closed = -0.5 * f64::from(d) * (2.0 * std::f64::consts::PI * a).ln() - 0.5 / a;
        assert_relative_eq!(ent.i1, i1_closed, max_relative = 1e-8);
        assert!(ent.h_n.abs() < 1e-6, "H = {:.3e}", ent.h_n);
        assert!((ent.marginal_mass - 1.0).abs() < 1e-7);
        // a few far-tail radial nodes can invert to negative rounding noise
        // (true density ~ e^{-30} there); the mass probe above is the real
        // guard on the account
        assert!(ent.skipped_nodes <= 12, "skipped {}", ent.skipped_nodes);

        // collisions preserve |v_1|^2 + |v_2|^2 and the Maxwellian product
        // depends on nothing else, so L is pure cancellation noise and the
        // terms sit at its square, twenty-odd orders below any real signal
        let prod = entropy_production_dn(&fam, 20_000, 7, 0.5).unwrap();
        assert!(prod.pairing.abs() < 1e-20, "pairing {:.3e}", prod.pairing);
        assert!(prod.pairing_se < 1e-20, "se {:.3e}", prod.pairing_se);
        assert!(prod.min_term >= 0.0);
        assert_eq!(prod.clipped, 0);
    }

    #[test]
    fn mixture_entropy_pipeline_consistency() {
        let g = GeneratingFunction::new(2, 0.14).unwrap();
        let fam = ConditionedFamily::new(&g, 32).unwrap();
        let ent = entropy_hn(&fam, 96).unwrap();
        assert!(
            (ent.marginal_mass - 1.0).abs() < 1e-6,
            "marginal mass {:.10}",
            ent.marginal_mass
        );
        assert!(ent.h_n > 0.0);
        let lim = entropy_limit_components(&fam, &ent);
        // the difference of components reproduces H/N: same floats, pure
        // algebra of the reduction
        assert!((lim.i1 - lim.log_zn_over_n - lim.h_over_n).abs() < 1e-12);
    }

    #[test]
    fn fused_weight_matches_composed_normalizations_one_particle() {
        // the computation runs on h-ratios; the uncollapsed form is the
        // Fubini weight times Z_{N-1}/Z_N with the bracket powers and area
        // prefactors reinstated.  Check the cancellation numerically.
        let g = GeneratingFunction::new(2, 0.2).unwrap();
        let n = 16u32;
        let nf = f64::from(n);
        let fam = ConditionedFamily::new(&g, n).unwrap();
        let r = 1.1f64;
        let u = nf - r * r;

        let sub_grid = CharFnGrid::auto(&fam.mix, n - 1, nf, 2.0, GRID_EPS).unwrap();
        let h_sub = invert_radial(&fam.mix, n - 1, r, u, &sub_grid).unwrap();
        let fused = h_sub.ln() - fam.log_zn.h_n_value.ln();

        let fw = FubiniWeight::new(fam.sphere(), 1).unwrap();
        let sub_norm = z_n(&fam.mix, n - 1, u, &[-r, 0.0], &sub_grid).unwrap();
        let composed = fw.log_density(&[vec![r, 0.0]]) + sub_norm.log_zn - fam.log_zn.log_zn;
        assert_relative_eq!(fused, composed, max_relative = 1e-9);
    }

    #[test]
    fn fused_weight_matches_composed_normalizations_two_particle() {
        let g = GeneratingFunction::new(2, 0.2).unwrap();
        let n = 16u32;
        let nf = f64::from(n);
        let fam = ConditionedFamily::new(&g, n).unwrap();
        let v1 = [0.8, -0.3];
        let v2 = [-0.5, 1.1];
        let s: f64 = v1.iter().chain(&v2).map(|x| x * x).sum();
        let zsum = [v1[0] + v2[0], v1[1] + v2[1]];
        let z_mod = (zsum[0] * zsum[0] + zsum[1] * zsum[1]).sqrt();
        let u = nf - s;

        let sub_grid = CharFnGrid::auto(&fam.mix, n - 2, nf, 2.0, GRID_EPS).unwrap();
        let h_sub = invert_radial(&fam.mix, n - 2, z_mod, u, &sub_grid).unwrap();
        let fused = h_sub.ln() - fam.log_zn.h_n_value.ln();

        let fw = FubiniWeight::new(fam.sphere(), 2).unwrap();
        let sub_norm = z_n(&fam.mix, n - 2, u, &[-zsum[0], -zsum[1]], &sub_grid).unwrap();
        let composed =
            fw.log_density(&[v1.to_vec(), v2.to_vec()]) + sub_norm.log_zn - fam.log_zn.log_zn;
        assert_relative_eq!(fused, composed, max_relative = 1e-9);
    }

    #[test]
    fn entropy_minimum_n_runs_on_the_oscillatory_route() {
        // N = 4 puts the sub-inversion at n = 3, fully oscillatory; each
        // radial node is a per-point block sum, so keep the panel count at
        // the low end of admissible (8 x 12 nodes for a smooth integrand
        // on [0, 2]).  Radii with r^2 > N - 1/2 leave the inversion's
        // admissible energy window (u >= 1/2) and are reported as skipped,
        // so at N = 4 a couple percent of the marginal mass is structurally
        // out of reach; assert that shape rather than mass ~ 1.
        let g = GeneratingFunction::new(2, 0.3).unwrap();
        let fam = ConditionedFamily::new(&g, 4).unwrap();
        let ent = entropy_hn(&fam, 8).unwrap();
        assert!(
            ent.marginal_mass > 0.97 && ent.marginal_mass < 1.0000001,
            "marginal mass {:.8}",
            ent.marginal_mass
        );
        assert!(ent.skipped_nodes > 0, "expected a skipped far-edge node");
        assert!(ent.h_n > -1e-6);
    }

    #[test]
    fn entropy_limits_approached_at_large_n() {
        // under the delta schedule, I_1 (and hence H/N) approaches its limit
        // only like ((d+2)/2) delta log(1/delta): the wide component books an
        // O(1) energy share on a vanishing weight, and its own log-likelihood
        // is the mixing-entropy term that the dominating function of the
        // limit theorem exhibits explicitly.  That is 0.42 at N = 256 and
        // stays above 0.15 until N ~ 3000, while log Z_N / N is essentially
        // converged by N = 256 (gap ~ 4e-3).  So assert the approach and
        // coarse magnitudes, not closeness that needs N beyond desk scale.
        let eta = eta_mid(0.5, 2).unwrap();
        let mut rows = Vec::new();
        for n in [64u32, 256] {
            let delta = delta_schedule(u64::from(n), eta).unwrap();
            let g = GeneratingFunction::new(2, delta).unwrap();
            let fam = ConditionedFamily::new(&g, n).unwrap();
            let ent = entropy_hn(&fam, 128).unwrap();
            assert!((ent.marginal_mass - 1.0).abs() < 1e-6);
            rows.push(entropy_limit_components(&fam, &ent));
        }
        let gap_i1: Vec<f64> = rows.iter().map(|l| (l.i1 - l.i1_limit).abs()).collect();
        let gap_z: Vec<f64> = rows
            .iter()
            .map(|l| (l.log_zn_over_n - l.log_zn_over_n_limit).abs())
            .collect();
        assert!(
            gap_i1[1] < gap_i1[0],
            "I1 gaps {:.4} -> {:.4}",
            gap_i1[0],
            gap_i1[1]
        );
        assert!(
            gap_z[1] < gap_z[0],
            "log Z/N gaps {:.4} -> {:.4}",
            gap_z[0],
            gap_z[1]
        );
        assert!(gap_i1[1] < 0.5, "I1 gap {:.4}", gap_i1[1]);
        assert!(gap_z[1] < 0.05, "log Z/N gap {:.4}", gap_z[1]);
        let gap_h: Vec<f64> = rows
            .iter()
            .map(|l| (l.h_over_n - l.h_over_n_limit).abs())
            .collect();
        assert!(
            gap_h[1] < gap_h[0] && gap_h[1] < 0.5,
            "H/N gaps {:.4} -> {:.4}",
            gap_h[0],
            gap_h[1]
        );
    }

    #[test]
    fn entropy_gap_shrinks_with_n() {
        let eta = eta_mid(0.5, 2).unwrap();
        let h_limit = std::f64::consts::LN_2;
        let mut gaps = Vec::new();
        for n in [32u32, 128] {
            let delta = delta_schedule(u64::from(n), eta).unwrap();
            let g = GeneratingFunction::new(2, delta).unwrap();
            let fam = ConditionedFamily::new(&g, n).unwrap();
            let ent = entropy_hn(&fam, 96).unwrap();
            assert!(ent.h_n > 0.0);
            gaps.push((ent.h_over_n - h_limit).abs());
        }
        assert!(
            gaps[1] < gaps[0],
            "gap did not shrink: {:.4} -> {:.4}",
            gaps[0],
            gaps[1]
        );
    }

    #[test]
    fn production_positive_with_nonnegative_terms() {
        let g = GeneratingFunction::new(2, 0.14).unwrap();
        let fam = ConditionedFamily::new(&g, 32).unwrap();
        let prod = entropy_production_dn(&fam, 30_000, 11, 0.5).unwrap();
        assert!(prod.pairing > 0.0);
        assert!(prod.min_term >= 0.0, "min term {:.3e}", prod.min_term);
        assert!(prod.pairing_se > 0.0);
        assert_eq!(prod.status, ProductionStatus::Converged);
        assert!(prod.clipped < prod.budget / 100);
        assert_relative_eq!(prod.production, 32.0 * prod.pairing);
    }

    #[test]
    fn production_term_symmetries() {
        let g = GeneratingFunction::new(2, 0.2).unwrap();
        let mix = Mixture::from_generating(&g);
        let nf = 32.0;
        let lw = |z: f64, u: f64| -> Option<f64> {
            // any smooth stand-in works for the symmetry identities
            Some(-0.01 * z * z - 0.001 * (u - 30.0) * (u - 30.0))
        };
        let v1 = [1.2, -0.4];
        let v2 = [-0.3, 0.9];
        let omega = {
            let n = (0.6f64 * 0.6 + 0.8 * 0.8).sqrt();
            [0.6 / n, 0.8 / n]
        };
        let (t12, _) = pair_term(&mix, nf, &v1, &v2, &omega, &lw);
        let (t21, _) = pair_term(&mix, nf, &v2, &v1, &omega, &lw);
        // swapping particles flips omega's sign in the collision map but
        // the term only sees squared speeds, which swap roles
        assert_relative_eq!(t12, t21, max_relative = 1e-12);

        // pre/post-collision exchange: the weighted integrand
        // term * f(v1) f(v2) is invariant under the involution that maps
        // the pair to its collision output and the direction to the unit
        // relative velocity (the collision map itself is idempotent for a
        // fixed direction, so the direction must come along for the ride)
        let half = 0.5
            * ((v1[0] - v2[0]) * (v1[0] - v2[0]) + (v1[1] - v2[1]) * (v1[1] - v2[1])).sqrt();
        let mid = [0.5 * (v1[0] + v2[0]), 0.5 * (v1[1] + v2[1])];
        let w1 = [mid[0] + half * omega[0], mid[1] + half * omega[1]];
        let w2 = [mid[0] - half * omega[0], mid[1] - half * omega[1]];
        let back = [(v1[0] - v2[0]) / (2.0 * half), (v1[1] - v2[1]) / (2.0 * half)];
        let (tw, _) = pair_term(&mix, nf, &w1, &w2, &back, &lw);
        let log_f = |v: &[f64]| mix.log_density_vsq(v.iter().map(|x| x * x).sum());
        let lhs = t12.ln() + log_f(&v1) + log_f(&v2);
        let rhs = tw.ln() + log_f(&w1) + log_f(&w2);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
    }

    #[test]
    fn production_budget_status_escalates() {
        let g = GeneratingFunction::new(2, 0.14).unwrap();
        let fam = ConditionedFamily::new(&g, 32).unwrap();
        let prod = entropy_production_dn(&fam, 10_000, 3, 1e-6).unwrap();
        assert_eq!(prod.status, ProductionStatus::IncreaseBudget);
        assert!(entropy_production_dn(&fam, 5_000, 3, 0.5).is_err());
        let g6 = GeneratingFunction::new(2, 0.2).unwrap();
        let fam5 = ConditionedFamily::new(&g6, 5).unwrap();
        assert!(entropy_production_dn(&fam5, 10_000, 3, 0.5).is_err());
    }

    #[test]
    fn production_minimum_n_runs_on_the_oscillatory_route() {
        let g = GeneratingFunction::new(2, 0.2).unwrap();
        let fam = ConditionedFamily::new(&g, 6).unwrap();
        let prod = entropy_production_dn(&fam, 10_000, 5, 1.0).unwrap();
        assert!(prod.pairing.is_finite());
        assert!(prod.min_term >= 0.0);
        assert!(prod.pairing > 0.0);
    }

    #[test]
    fn surrogate_mode_tracks_exact() {
        let g = GeneratingFunction::new(2, 0.14).unwrap();
        let fam = ConditionedFamily::new(&g, 64).unwrap();
        let exact = entropy_production_dn(&fam, 20_000, 13, 0.5).unwrap();
        let fast =
            entropy_production_with_mode(&fam, 20_000, 13, 0.5, WeightMode::Surrogate).unwrap();
        assert!(exact.pairing > 0.0 && fast.pairing > 0.0);
        let rel = (exact.pairing - fast.pairing).abs() / exact.pairing;
        assert!(
            rel < 0.25,
            "exact {:.4e} vs surrogate {:.4e} (rel {:.3})",
            exact.pairing,
            fast.pairing,
            rel
        );
    }

    #[test]
    fn gamma_witness_guards() {
        let g = GeneratingFunction::new(2, 0.14).unwrap();
        let fam = ConditionedFamily::new(&g, 32).unwrap();
        let ent = entropy_hn(&fam, 96).unwrap();
        let prod = entropy_production_dn(&fam, 15_000, 17, 0.5).unwrap();
        let gamma = gamma_upper_witness(&ent, &prod).unwrap();
        assert!(gamma.gamma_upper_witness > 0.0);
        assert_relative_eq!(
            gamma.gamma_upper_witness,
            32.0 * prod.pairing / ent.h_n,
            max_relative = 1e-15
        );

        let mut flat = ent;
        flat.h_n = 0.0;
        assert!(gamma_upper_witness(&flat, &prod).is_err());
        let mut wrong_n = prod;
        wrong_n.n = 16;
        assert!(gamma_upper_witness(&ent, &wrong_n).is_err());
    }

    #[test]
    fn scaling_study_small_grid() {
        let eta = eta_mid(0.5, 2).unwrap();
        let study = scaling_study(2, eta, 0.5, &[16, 32], &[10_000], 42).unwrap();
        assert_eq!(study.rows.len(), 2);
        for row in &study.rows {
            assert!(row.error.is_none(), "row N={} failed: {:?}", row.n, row.error);
            assert!(row.gamma_upper_witness >= 0.0);
            assert!(row.h_over_n.is_finite() && row.d_over_n.is_finite());
        }
        assert!(study.rows[1].delta_n < study.rows[0].delta_n);
        assert!(study.slope_gamma.is_some());
    }

    #[test]
    fn scaling_study_marks_failed_rows_and_continues() {
        let eta = eta_mid(0.5, 2).unwrap();
        // N = 4 passes family construction but fails the production
        // precondition; the row is marked and the sweep continues
        let study = scaling_study(2, eta, 0.5, &[4, 16], &[10_000, 10_000], 9).unwrap();
        assert!(study.rows[0].error.is_some());
        assert!(study.rows[0].d_over_n.is_nan());
        assert!(study.rows[1].error.is_none());
        assert!(scaling_study(2, 0.9, 0.5, &[16], &[10_000], 1).is_err());
        assert!(scaling_study(2, eta, 0.5, &[16, 32], &[1, 2, 3], 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn production_terms_never_negative(
            x1 in -3.0f64..3.0, y1 in -3.0f64..3.0,
            x2 in -3.0f64..3.0, y2 in -3.0f64..3.0,
            th in 0.0f64..std::f64::consts::TAU,
        ) {
            let g = GeneratingFunction::new(2, 0.25).unwrap();
            let mix = Mixture::from_generating(&g);
            let lw = |_: f64, _: f64| Some(0.0);
            let (term, clipped) = pair_term(
                &mix, 24.0, &[x1, y1], &[x2, y2], &[th.cos(), th.sin()], &lw,
            );
            prop_assert!(!clipped);
            prop_assert!(term >= 0.0);
            prop_assert!(term.is_finite());
        }
    }
}
