//! The eight subcommands.  Each resolves per-N inputs, drives the library,
//! and emits one table; per-row failures land in an `error` column and the
//! sweep continues wherever the contract says so.

use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kaclab::bounds::{
    gaussian_tail_bounds_check, mixture_contraction_check, product_envelope_check,
    radial_tail_bound_check, total_l1_error, CheckStatus, ValidatorReport,
};
use kaclab::charfn::{
    approx_error_scan, z2_oracle, z_n, CharFnGrid, Mixture, ScanLattice,
};
use kaclab::densities::GeneratingFunction;
use kaclab::entropy::{
    entropy_hn, entropy_production_with_mode, scaling_study, ConditionedFamily, WeightMode,
};
use kaclab::sphere::{fubini_check, marginal_radial_moment, BoltzmannSphereSpec};
use kaclab::walk::{run_replicas, KernelKind, Observable, ParticleSystem};

use crate::output::{cell, fnv1a, Meta, Table};
use crate::{compute, usage, CliResult, InitArg, KernelArg, Resolved};

fn meta(r: &Resolved, grid_blob: &str) -> Meta {
    Meta {
        config_hash: r.config_hash(),
        seed: r.seed,
        grid_hash: fnv1a(grid_blob.as_bytes()),
    }
}

fn finish(r: &Resolved, table: &Table) -> CliResult {
    table.emit(r.json, r.out.as_deref()).map_err(compute)
}

/// Columns: N, delta, E, |z|, log Z_N, oracle, relative delta, route.
/// The oracle is the closed form in single-Maxwellian mode, the pair
/// quadrature at N = 2, and absent otherwise.
pub fn cmd_zn(r: &Resolved, maxwellian_a: Option<f64>) -> CliResult {
    if let Some(a) = maxwellian_a {
        if !(a > 0.0) || !a.is_finite() {
            return Err(usage(format!("need a Maxwellian variance 0 < a < inf, got {a}")));
        }
    }
    let mut table = Table::new(
        "zn/v1",
        vec!["N", "delta", "E", "z_abs", "log_zn", "oracle", "rel_delta", "route", "error"],
        meta(r, &format!("auto-grid eps={:.3e}", r.grid_eps)),
    );
    let mut failures = 0usize;
    for &n in &r.n_list {
        let energy = f64::from(n);
        let zeros = vec![0.0; r.d as usize];
        let row = (|| -> Result<(f64, Mixture, f64, f64), String> {
            let (mix, delta) = match maxwellian_a {
                Some(a) => (Mixture::single(r.d, a).map_err(|e| e.to_string())?, f64::NAN),
                None => {
                    let delta = r.delta_for(n).map_err(|_| "schedule failed".to_string())?;
                    let g = GeneratingFunction::new(r.d, delta).map_err(|e| e.to_string())?;
                    (Mixture::from_generating(&g), delta)
                }
            };
            let grid = CharFnGrid::for_inversion(&mix, n, energy, 0.0, r.grid_eps)
                .map_err(|e| e.to_string())?;
            let norm = z_n(&mix, n, energy, &zeros, &grid).map_err(|e| e.to_string())?;
            let oracle = match maxwellian_a {
                Some(a) => {
                    -0.5 * f64::from(r.d * n) * (2.0 * std::f64::consts::PI * a).ln()
                        - energy / (2.0 * a)
                }
                None if n == 2 => z2_oracle(&mix, energy, &zeros).map_err(|e| e.to_string())?,
                None => f64::NAN,
            };
            Ok((norm.log_zn, mix, delta, oracle))
        })();
        let route = if r.d * n.saturating_sub(2) >= 12 { "box" } else { "oscillatory" };
        match row {
            Ok((log_zn, _mix, delta, oracle)) => {
                let rel = (log_zn - oracle).abs() / oracle.abs().max(1e-300);
                table.push_row(vec![
                    n.to_string(),
                    cell(delta),
                    cell(energy),
                    cell(0.0),
                    cell(log_zn),
                    cell(oracle),
                    cell(rel),
                    route.into(),
                    String::new(),
                ]);
            }
            Err(e) => {
                failures += 1;
                table.push_row(vec![
                    n.to_string(),
                    cell(f64::NAN),
                    cell(energy),
                    cell(0.0),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    route.into(),
                    e,
                ]);
            }
        }
    }
    finish(r, &table)?;
    if failures == r.n_list.len() {
        return Err(compute("every row failed"));
    }
    Ok(())
}

/// Columns: N, delta, lattice sup error, the scaled form, its argmax, and
/// the whole-plane L1 distance; plus a monotone-decrease verdict when at
/// least two rows are clean.
pub fn cmd_approx_scan(r: &Resolved, u_points: u32, z_points: u32) -> CliResult {
    if u_points < 2 || z_points < 2 {
        return Err(usage("need at least 2 lattice points per direction"));
    }
    let mut table = Table::new(
        "approx-scan/v1",
        vec![
            "N",
            "delta",
            "sup_abs_error",
            "scaled_error",
            "argmax_u",
            "argmax_z",
            "l1_value",
            "l1_scaled",
            "error",
        ],
        meta(r, &format!("lattice {u_points}x{z_points} eps={:.3e}", r.grid_eps)),
    );
    let mut scaled = Vec::new();
    let mut failures = 0usize;
    for &n in &r.n_list {
        let row = (|| -> Result<_, String> {
            if r.d * n.saturating_sub(2) < 12 {
                return Err(format!(
                    "scan needs the box regime d (N - 2) >= 12, got d = {} N = {n}",
                    r.d
                ));
            }
            let delta = r.delta_for(n).map_err(|_| "schedule failed".to_string())?;
            let g = GeneratingFunction::new(r.d, delta).map_err(|e| e.to_string())?;
            let mix = Mixture::from_generating(&g);
            let lattice = ScanLattice::standard(&mix, n, u_points, z_points);
            let grid = CharFnGrid::auto(&mix, n, lattice.u_max, lattice.z_max, r.grid_eps)
                .map_err(|e| e.to_string())?;
            let scan = approx_error_scan(&mix, n, &grid, &lattice).map_err(|e| e.to_string())?;
            let l1 = total_l1_error(&g, n, r.beta, &grid).map_err(|e| e.to_string())?;
            Ok((delta, scan, l1))
        })();
        match row {
            Ok((delta, scan, l1)) => {
                scaled.push(scan.scaled_error);
                table.push_row(vec![
                    n.to_string(),
                    cell(delta),
                    cell(scan.sup_abs_error),
                    cell(scan.scaled_error),
                    cell(scan.argmax_u),
                    cell(scan.argmax_z),
                    cell(l1.value),
                    cell(l1.scaled),
                    String::new(),
                ]);
            }
            Err(e) => {
                failures += 1;
                table.push_row(vec![
                    n.to_string(),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    e,
                ]);
            }
        }
    }
    if scaled.len() >= 2 {
        let decreasing = scaled.windows(2).all(|w| w[1] < w[0]);
        table.comment(format!(
            "verdict: {}",
            if decreasing { "decreasing" } else { "not-decreasing" }
        ));
    }
    finish(r, &table)?;
    if failures == r.n_list.len() {
        return Err(compute("every row failed"));
    }
    Ok(())
}

/// Columns: N, delta, I_1, log Z_N, H_N, H_N/N, the gap to (d/2) log 2,
/// the marginal-mass consistency probe, and skipped quadrature nodes.
pub fn cmd_entropy(r: &Resolved) -> CliResult {
    let mut table = Table::new(
        "entropy/v1",
        vec![
            "N",
            "delta",
            "i1",
            "log_zn",
            "h_n",
            "h_over_n",
            "limit_gap",
            "marginal_mass",
            "skipped_nodes",
            "error",
        ],
        meta(r, &format!("panels={} eps={:.3e}", r.grid_panels, r.grid_eps)),
    );
    let limit = 0.5 * f64::from(r.d) * LN_2;
    let mut failures = 0usize;
    for &n in &r.n_list {
        let row = (|| -> Result<_, String> {
            let delta = r.delta_for(n).map_err(|_| "schedule failed".to_string())?;
            let g = GeneratingFunction::new(r.d, delta).map_err(|e| e.to_string())?;
            let fam = ConditionedFamily::new(&g, n).map_err(|e| e.to_string())?;
            let ent = entropy_hn(&fam, r.grid_panels).map_err(|e| e.to_string())?;
            Ok((delta, fam.log_zn().log_zn, ent))
        })();
        match row {
            Ok((delta, log_zn, ent)) => table.push_row(vec![
                n.to_string(),
                cell(delta),
                cell(ent.i1),
                cell(log_zn),
                cell(ent.h_n),
                cell(ent.h_over_n),
                cell((ent.h_over_n - limit).abs()),
                cell(ent.marginal_mass),
                ent.skipped_nodes.to_string(),
                String::new(),
            ]),
            Err(e) => {
                failures += 1;
                table.push_row(vec![
                    n.to_string(),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    "0".into(),
                    e,
                ]);
            }
        }
    }
    finish(r, &table)?;
    if failures == r.n_list.len() {
        return Err(compute("every row failed"));
    }
    Ok(())
}

/// Columns: the pairing and its N-restored production value with standard
/// errors, the most negative sampled term, clip accounting, and status.
pub fn cmd_production(r: &Resolved, se_threshold: f64, surrogate: bool) -> CliResult {
    let mode = if surrogate { WeightMode::Surrogate } else { WeightMode::Exact };
    let mut table = Table::new(
        "production/v1",
        vec![
            "N",
            "delta",
            "pairing",
            "pairing_se",
            "production",
            "production_se",
            "min_term",
            "clipped",
            "status",
            "mode",
            "error",
        ],
        meta(r, &format!("budget={} threshold={se_threshold:.3e}", r.budget)),
    );
    let mut failures = 0usize;
    for &n in &r.n_list {
        let row_seed = r.seed ^ u64::from(n).wrapping_mul(0x2545_f491_4f6c_dd1d);
        let row = (|| -> Result<_, String> {
            let delta = r.delta_for(n).map_err(|_| "schedule failed".to_string())?;
            let g = GeneratingFunction::new(r.d, delta).map_err(|e| e.to_string())?;
            let fam = ConditionedFamily::new(&g, n).map_err(|e| e.to_string())?;
            let prod = entropy_production_with_mode(&fam, r.budget, row_seed, se_threshold, mode)
                .map_err(|e| e.to_string())?;
            Ok((delta, prod))
        })();
        match row {
            Ok((delta, p)) => table.push_row(vec![
                n.to_string(),
                cell(delta),
                cell(p.pairing),
                cell(p.pairing_se),
                cell(p.production),
                cell(p.production_se),
                cell(p.min_term),
                p.clipped.to_string(),
                format!("{:?}", p.status),
                format!("{:?}", p.mode),
                String::new(),
            ]),
            Err(e) => {
                failures += 1;
                table.push_row(vec![
                    n.to_string(),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    cell(f64::NAN),
                    "0".into(),
                    String::new(),
                    format!("{mode:?}"),
                    e,
                ]);
            }
        }
    }
    finish(r, &table)?;
    if failures == r.n_list.len() {
        return Err(compute("every row failed"));
    }
    Ok(())
}

/// The scaling study: per-N entropy, production, and ratio witness, with
/// fitted log-log slopes and the trend verdicts in trailing comments.
pub fn cmd_gamma(r: &Resolved) -> CliResult {
    let study = scaling_study(r.d, r.eta, r.beta, &r.n_list, &[r.budget], r.seed)
        .map_err(usage)?;
    let mut table = Table::new(
        "gamma/v1",
        vec![
            "N",
            "delta_n",
            "h_over_n",
            "d_over_n",
            "gamma_upper_witness",
            "gamma_se",
            "h_gap",
            "status",
            "row_seed",
            "budget",
            "error",
        ],
        meta(r, &format!("study budget={} eta={:.6}", r.budget, r.eta)),
    );
    for row in &study.rows {
        table.push_row(vec![
            row.n.to_string(),
            cell(row.delta_n),
            cell(row.h_over_n),
            cell(row.d_over_n),
            cell(row.gamma_upper_witness),
            cell(row.gamma_se),
            cell(row.h_gap),
            format!("{:?}", row.production_status),
            row.seed.to_string(),
            row.budget.to_string(),
            row.error.clone().unwrap_or_default(),
        ]);
    }
    let fmt_slope = |s: Option<f64>| s.map_or("none".to_string(), |x| format!("{x:.6}"));
    table.comment(format!("slope_h_gap: {}", fmt_slope(study.slope_h_gap)));
    table.comment(format!("slope_d_over_n: {}", fmt_slope(study.slope_d_over_n)));
    table.comment(format!("slope_gamma: {}", fmt_slope(study.slope_gamma)));
    let target = -(1.0 - r.eta);
    table.comment(format!("target_slope: {target:.6}"));
    if let Some(s) = study.slope_gamma {
        table.comment(format!(
            "verdict_slope: {}",
            if (s - target).abs() <= 0.15 { "pass" } else { "fail" }
        ));
    }
    if let Some(last) = study.rows.iter().rev().find(|row| row.error.is_none()) {
        table.comment(format!(
            "verdict_gap: {}",
            if last.h_gap < 0.15 { "pass" } else { "fail" }
        ));
    }
    finish(r, &table)?;
    if study.rows.iter().all(|row| row.error.is_some()) {
        return Err(compute("every row failed"));
    }
    Ok(())
}

/// Inequality fuzz suites: random parameter draws against each validator,
/// margins aggregated per suite, violating tuples reported verbatim.
pub fn cmd_validate(r: &Resolved) -> CliResult {
    let mut table = Table::new(
        "validate/v1",
        vec!["suite", "draws", "pass", "fail", "inconclusive", "min_margin", "fitted_constant"],
        meta(r, &format!("budget={}", r.budget)),
    );
    if r.budget == 0 {
        table.comment("skipped: zero budget");
        return finish(r, &table);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
    let mut violations: Vec<ValidatorReport> = Vec::new();

    struct SuiteAcc {
        draws: u64,
        pass: u64,
        fail: u64,
        inconclusive: u64,
        min_margin: f64,
        fitted: f64,
    }
    impl SuiteAcc {
        fn new() -> Self {
            SuiteAcc {
                draws: 0,
                pass: 0,
                fail: 0,
                inconclusive: 0,
                min_margin: f64::INFINITY,
                fitted: f64::NAN,
            }
        }
        fn add(&mut self, rep: &ValidatorReport, violations: &mut Vec<ValidatorReport>) {
            self.draws += 1;
            match rep.status {
                CheckStatus::Pass => self.pass += 1,
                CheckStatus::Fail => {
                    self.fail += 1;
                    if violations.len() < 16 {
                        violations.push(rep.clone());
                    }
                }
                CheckStatus::Inconclusive => self.inconclusive += 1,
            }
            if rep.margin.is_finite() {
                self.min_margin = self.min_margin.min(rep.margin);
            }
            if let Some(c) = rep.fitted_constant {
                self.fitted = if self.fitted.is_nan() { c } else { self.fitted.max(c) };
            }
        }
        fn row(&self, name: &str) -> Vec<String> {
            vec![
                name.into(),
                self.draws.to_string(),
                self.pass.to_string(),
                self.fail.to_string(),
                self.inconclusive.to_string(),
                cell(self.min_margin),
                cell(self.fitted),
            ]
        }
    }

    // exponential-vs-error-function tail bounds on random (alpha, beta)
    let mut tail = SuiteAcc::new();
    for _ in 0..r.budget {
        let alpha = 10f64.powf(rng.gen_range(-1.3..0.7));
        let beta = rng.gen_range(0.0..3.0);
        let rep = gaussian_tail_bounds_check(alpha, beta)
            .map_err(compute)?
            .report(alpha, beta);
        tail.add(&rep, &mut violations);
    }
    table.push_row(tail.row("gaussian-tail"));

    // radial moment tail against its shape envelope, fitted constant swept
    let mut radial = SuiteAcc::new();
    for _ in 0..(r.budget / 20).max(50) {
        let m = rng.gen_range(6u32..120);
        let d = if rng.gen::<bool>() { 2 } else { 3 };
        let alpha = 10f64.powf(rng.gen_range(-1.0..0.5));
        let beta = rng.gen_range(0.0..2.0);
        let rep = radial_tail_bound_check(m, d, alpha, beta)
            .map_err(compute)?
            .report(m, d, alpha, beta);
        radial.add(&rep, &mut violations);
    }
    table.push_row(radial.row("radial-tail"));

    // moment-product envelope on random (delta, k, j, N)
    let mut envelope = SuiteAcc::new();
    for _ in 0..(r.budget / 100).max(20) {
        let delta = rng.gen_range(0.05..0.45);
        let g = GeneratingFunction::new(r.d, delta).map_err(compute)?;
        let n = rng.gen_range(6u32..48);
        let k = rng.gen_range(1u32..n);
        let j = rng.gen_range(0u32..=k);
        let rep = product_envelope_check(&g, r.beta, k, j, n, 200)
            .map_err(compute)?
            .report(k, j, n);
        envelope.add(&rep, &mut violations);
    }
    table.push_row(envelope.row("product-envelope"));

    // transform contraction constants over a deterministic weight sweep
    let mut contraction = SuiteAcc::new();
    for i in 0..9 {
        let delta = 0.05 * f64::from(i + 1);
        let g = GeneratingFunction::new(r.d, delta).map_err(compute)?;
        let rep = mixture_contraction_check(&g, r.beta).map_err(compute)?.report(delta, r.beta);
        contraction.add(&rep, &mut violations);
    }
    table.push_row(contraction.row("mixture-contraction"));

    for v in &violations {
        table.comment(format!(
            "violation: {} params {} margin {}",
            v.check, v.params, v.margin
        ));
    }
    let any_fail = !violations.is_empty();
    table.comment(format!("verdict: {}", if any_fail { "fail" } else { "pass" }));
    finish(r, &table)?;
    if any_fail {
        return Err(compute("inequality violation; see the emitted table"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_walk(
    r: &Resolved,
    t_end: f64,
    samples: u32,
    replicas: u32,
    init: InitArg,
    kernel: Option<KernelArg>,
    gamma: f64,
    energy: Option<f64>,
) -> CliResult {
    let n = r.n_list.first().copied().unwrap_or(64) as usize;
    let d = r.d as usize;
    let e = energy.unwrap_or(n as f64);
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(usage(format!("need 0 < t_end < inf, got {t_end}")));
    }
    if samples == 0 || replicas == 0 {
        return Err(usage("need samples >= 1 and replicas >= 1"));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(r.seed ^ 0x5ee0_5ee0_5ee0_5ee0);
    let zero_momentum = !matches!(init, InitArg::Hot);
    let proto = match init {
        InitArg::Uniform => {
            let spec = BoltzmannSphereSpec::new(n as u32, r.d, e, vec![0.0; d]).map_err(usage)?;
            ParticleSystem::uniform(&spec, &mut init_rng)
        }
        InitArg::Hot => ParticleSystem::hot(n, d, e).map_err(usage)?,
        InitArg::HotPair => ParticleSystem::hot_pair(n, d, e).map_err(usage)?,
    };
    let times: Vec<f64> =
        (1..=samples).map(|k| t_end * f64::from(k) / f64::from(samples)).collect();

    match kernel {
        None => {
            let obs = [
                Observable::MeanMoment(2),
                Observable::MeanMoment(4),
                Observable::EnergyDrift,
                Observable::MomentumDrift,
            ];
            let names = ["mean_vsq", "mean_quartic", "energy_drift", "momentum_drift"];
            let summary = run_replicas(&proto, t_end, &times, &obs, replicas, r.seed)
                .map_err(compute)?;
            let mut table = Table::new(
                "walk/v1-trajectory",
                vec!["time", "observable", "value", "se"],
                meta(r, &format!("t_end={t_end:.6} samples={samples} replicas={replicas}")),
            );
            let mut max_e_drift = 0.0f64;
            let mut max_z_drift = 0.0f64;
            for (t, &time) in summary.times.iter().enumerate() {
                for (q, name) in names.iter().enumerate() {
                    table.push_row(vec![
                        cell(time),
                        (*name).to_string(),
                        cell(summary.mean[t][q]),
                        cell(summary.se[t][q]),
                    ]);
                }
                max_e_drift = max_e_drift.max(summary.mean[t][2] / (1.0 + e));
                max_z_drift = max_z_drift.max(summary.mean[t][3] / (1.0 + e.sqrt()));
            }
            table.comment(format!(
                "verdict_conservation: {}",
                if max_e_drift <= 1e-9 && max_z_drift <= 1e-9 { "pass" } else { "fail" }
            ));
            // equilibrium quartic check against the marginal oracle; needs
            // zero total momentum and a replica spread to scale against
            if zero_momentum && replicas >= 2 {
                let spec =
                    BoltzmannSphereSpec::new(n as u32, r.d, e, vec![0.0; d]).map_err(usage)?;
                let oracle = marginal_radial_moment(&spec, 4).map_err(compute)?;
                let last = summary.times.len() - 1;
                let mean = summary.mean[last][1];
                let se = summary.se[last][1].max(1e-14);
                table.comment(format!(
                    "verdict_quartic: {} (mean {} oracle {} se {})",
                    if (mean - oracle).abs() <= 3.0 * se { "pass" } else { "fail" },
                    cell(mean),
                    cell(oracle),
                    cell(se)
                ));
            }
            finish(r, &table)
        }
        Some(kind) => {
            let kind = match kind {
                KernelArg::EnergyForm => KernelKind::EnergyForm,
                KernelArg::RelativeSpeed => KernelKind::RelativeSpeed,
            };
            let mut table = Table::new(
                "walk/v1-thinned",
                vec![
                    "replica",
                    "proposals",
                    "accepted",
                    "acceptance_rate",
                    "energy_drift",
                    "momentum_drift",
                    "final_mean_vsq",
                ],
                meta(r, &format!("t_end={t_end:.6} replicas={replicas} gamma={gamma:.6}")),
            );
            let mut all_in_unit = true;
            for rep in 0..replicas {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    r.seed ^ (u64::from(rep) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                );
                let mut sys = proto.clone();
                let mut proposals = 0u64;
                let mut accepted = 0u64;
                while sys.time() < t_end {
                    proposals += 1;
                    if sys
                        .kernel_thinning_step(gamma, kind, &mut rng)
                        .map_err(usage)?
                        .is_some()
                    {
                        accepted += 1;
                    }
                }
                let rate = accepted as f64 / proposals as f64;
                if !(rate > 0.0 && rate <= 1.0) {
                    all_in_unit = false;
                }
                let (de, dz) = sys.constraint_drift();
                table.push_row(vec![
                    rep.to_string(),
                    proposals.to_string(),
                    accepted.to_string(),
                    cell(rate),
                    cell(de),
                    cell(dz),
                    cell(Observable::MeanMoment(2).eval(&sys)),
                ]);
            }
            table.comment(format!(
                "verdict_acceptance: {}",
                if all_in_unit { "pass" } else { "fail" }
            ));
            finish(r, &table)
        }
    }
}

/// Both integration routes for three bounded test statistics of the frozen
/// block, with the 3-standard-error agreement verdict per statistic.
pub fn cmd_fubini(r: &Resolved, j: u32) -> CliResult {
    let n = r.n_list.first().copied().unwrap_or(4);
    let spec = BoltzmannSphereSpec::new(n, r.d, f64::from(n), vec![0.0; r.d as usize])
        .map_err(usage)?;
    let mut table = Table::new(
        "fubini-check/v1",
        vec![
            "test_fn",
            "sphere_estimate",
            "sphere_se",
            "weight_estimate",
            "weight_se",
            "gap",
            "combined_se",
            "within_3se",
        ],
        meta(r, &format!("budget={} j={j}", r.budget)),
    );
    let block_energy = |block: &[Vec<f64>]| -> f64 {
        block.iter().flat_map(|v| v.iter()).map(|x| x * x).sum()
    };
    let fns: Vec<(&str, Box<dyn Fn(&[Vec<f64>]) -> f64 + Sync>)> = vec![
        ("first_coordinate", Box::new(|block: &[Vec<f64>]| block[0][0])),
        ("block_energy", Box::new(move |block: &[Vec<f64>]| block_energy(block))),
        (
            "soft_exponential",
            Box::new(move |block: &[Vec<f64>]| (-block_energy(block)).exp()),
        ),
    ];
    let mut all_pass = true;
    for (k, (name, f)) in fns.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(r.seed ^ ((k as u64 + 1) * 0x9e37_79b9));
        let check = fubini_check(&spec, j, r.budget, &mut rng, f).map_err(compute)?;
        let ok = check.agrees(3.0);
        all_pass &= ok;
        table.push_row(vec![
            (*name).to_string(),
            cell(check.sphere_estimate),
            cell(check.sphere_se),
            cell(check.weight_estimate),
            cell(check.weight_se),
            cell(check.gap()),
            cell(check.combined_se()),
            if ok { "yes" } else { "no" }.into(),
        ]);
    }
    table.comment(format!("verdict: {}", if all_pass { "pass" } else { "fail" }));
    finish(r, &table)?;
    if !all_pass {
        return Err(compute("routes disagree beyond 3 combined standard errors"));
    }
    Ok(())
}
