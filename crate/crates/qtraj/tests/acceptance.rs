//! Acceptance suite. One test per criterion; each prints a single
//! [PASS]/[FAIL] line (run with `--nocapture` to see them all) carrying the
//! numbers and the tolerance it was judged against, then asserts.

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qtraj::commute::{
    check_self_commutative, cross_validate, vector_self_commutator, MeasurementSpec,
};
use qtraj::ensemble::{
    analytic_number_distribution, compare_filters, run_ensemble, run_trajectory, total_variation,
    OutputGrid, SimulationConfig,
};
use qtraj::filter::{
    lindblad_propagate, sample_increments, sse_step, sse_step_corrected_unnormalized, Increments,
};
use qtraj::hilbert::{
    annihilation, fock_state, hermiticity_defect, max_abs_entry, trace_distance, unitarity_defect,
    CMatrix, CVector,
};
use qtraj::ito::DEFAULT_PROBES;
use qtraj::network::{beam_splitter, beam_splitter_composite, concatenate, series, SlhModel};
use qtraj::FilterKind;

fn report(name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("[{verdict}] {name}: {detail}");
    assert!(ok, "{name}: {detail}");
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn spec_2x2(f: [[Complex64; 2]; 2], g: [[Complex64; 2]; 2]) -> MeasurementSpec {
    MeasurementSpec::new(
        CMatrix::from_fn(2, 2, |i, j| f[i][j]),
        CMatrix::from_fn(2, 2, |i, j| g[i][j]),
    )
    .unwrap()
}

fn grid_index(times: &[f64], t: f64, dt: f64) -> usize {
    times
        .iter()
        .position(|&x| (x - t).abs() < dt / 2.0)
        .unwrap_or_else(|| panic!("no output-grid point at t = {t}"))
}

#[test]
fn closed_form_verdicts_agree_with_product_table_oracle_on_random_selections() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let palette = [
        c(0.0, 0.0),
        c(0.0, 0.0),
        c(0.0, 0.0),
        c(1.0, 0.0),
        c(-1.0, 0.0),
        c(0.0, 1.0),
        c(0.0, -1.0),
    ];
    let start = Instant::now();
    let mut commutative = 0usize;
    let mut mismatch: Option<String> = None;
    let total = 200usize;
    for k in 0..total {
        let n = 2 + k % 2;
        let f = CMatrix::from_fn(n, n, |_, _| palette[rng.gen_range(0..palette.len())]);
        let g = CMatrix::from_fn(n, n, |_, _| palette[rng.gen_range(0..palette.len())]);
        let spec = MeasurementSpec::new(f, g).unwrap();
        if check_self_commutative(&spec, None).commutative {
            commutative += 1;
        }
        if let Err(e) = cross_validate(&spec, DEFAULT_PROBES, &mut rng) {
            mismatch = Some(e.to_string());
            break;
        }
    }
    let elapsed = start.elapsed();
    let ok = mismatch.is_none() && elapsed.as_secs_f64() < 30.0;
    report(
        "closed form vs product-table oracle",
        ok,
        &format!(
            "{total} random selections with entries in {{0, +-1, +-i}} ({commutative} commutative), \
             {DEFAULT_PROBES} random network probes each, verdicts all agree{}; {:.2} s < 30 s budget",
            mismatch
                .as_deref()
                .map(|m| format!(" EXCEPT {m}"))
                .unwrap_or_default(),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn known_measurement_layouts_classify_as_expected() {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let i = c(0.0, 1.0);

    // homodyne on both channels
    let both = spec_2x2([[one, z], [z, one]], [[z, z], [z, z]]);
    let both_ok = check_self_commutative(&both, None).commutative;

    // homodyne on channel 1, counting on channel 2
    let split = spec_2x2([[one, z], [z, z]], [[z, z], [z, one]]);
    let split_ok = check_self_commutative(&split, None).commutative;

    // counting and homodyne both reading channel 1
    let shared = spec_2x2([[z, z], [one, z]], [[one, z], [z, z]]);
    let shared_rep = check_self_commutative(&shared, None);
    let shared_ok = !shared_rep.commutative
        && !shared_rep.condition_g_fstar
        && !shared_rep.condition_g_f
        && shared_rep.condition_f;

    // two quadrature phases of the same channel
    let dual = spec_2x2([[one, z], [i, z]], [[z, z], [z, z]]);
    let dual_rep = check_self_commutative(&dual, None);
    let dual_ok = !dual_rep.commutative && !dual_rep.condition_f;

    // ladder-pair self-commutator table is canonical on the faithful block
    let dim = 12;
    let a = annihilation(dim).unwrap();
    let table = vector_self_commutator(&[a.clone(), a.adjoint()]).unwrap();
    let mut ladder_ok = max_abs_entry(&table[0][0]) == 0.0 && max_abs_entry(&table[1][1]) == 0.0;
    for k in 0..dim - 1 {
        ladder_ok &= (table[0][1][(k, k)] - one).norm() < 1e-12;
        ladder_ok &= (table[1][0][(k, k)] + one).norm() < 1e-12;
    }
    for p in 0..dim - 1 {
        for q in 0..dim - 1 {
            if p != q {
                ladder_ok &= table[0][1][(p, q)].norm() == 0.0;
            }
        }
    }

    report(
        "known measurement layouts",
        both_ok && split_ok && shared_ok && dual_ok && ladder_ok,
        &format!(
            "dual homodyne commutative: {both_ok}; split arms commutative: {split_ok}; \
             shared-channel counting+quadrature rejected channelwise (violation {:.2}): \
             {shared_ok}; dual quadrature phases rejected via Re(F)Im(F)^T (violation {:.2}): \
             {dual_ok}; ladder commutator table canonical within 1e-12: {ladder_ok}",
            shared_rep.violations.condition_g_fstar, dual_rep.violations.condition_f
        ),
    );
}

#[test]
fn beam_splitter_composite_matches_explicit_network_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let dim = 5;
    let mut worst = 0.0f64;
    let mut worst_unitarity = 0.0f64;
    for _ in 0..20 {
        let r: f64 = rng.gen_range(0.0..1.0);
        let theta: f64 = rng.gen_range(-3.0..3.0);
        let l = CMatrix::from_fn(dim, dim, |_, _| {
            c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let raw = CMatrix::from_fn(dim, dim, |_, _| {
            c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let h = (&raw + raw.adjoint()).map(|v| v * c(0.5, 0.0));

        let system = SlhModel::new(CMatrix::identity(1, 1), vec![l.clone()], h.clone()).unwrap();
        let explicit = series(
            &concatenate(&system, &SlhModel::passive(1, dim).unwrap()).unwrap(),
            &beam_splitter(r, theta, dim).unwrap(),
        )
        .unwrap();
        let closed = beam_splitter_composite(&l, &h, r, theta).unwrap();

        worst = worst.max(max_abs_entry(&(explicit.s() - closed.s())));
        for k in 0..2 {
            worst = worst.max(max_abs_entry(&(&explicit.l()[k] - &closed.l()[k])));
        }
        worst = worst.max(max_abs_entry(&(explicit.h() - closed.h())));
        worst_unitarity = worst_unitarity.max(unitarity_defect(closed.s()));
    }
    report(
        "beam-splitter composite vs explicit composition",
        worst < 1e-12 && worst_unitarity < 1e-8,
        &format!(
            "20 random (r, theta, L, H) draws; worst S/L/H deviation {worst:.2e} < 1e-12, \
             worst scattering unitarity defect {worst_unitarity:.2e} < 1e-8"
        ),
    );
}

#[test]
fn ensemble_mean_tracks_analytic_decay_and_number_statistics() {
    let config = SimulationConfig::default();
    let summary = run_ensemble(&config, None).unwrap();
    let checkpoints = [0.5, 1.0, 2.0, 4.0];
    let mut z_max = 0.0f64;
    let mut zs = Vec::new();
    for &t in &checkpoints {
        let i = grid_index(&summary.times, t, config.dt);
        let z = (summary.mean_n[i] - summary.analytic_n[i]) / summary.stderr_n[i];
        zs.push(format!("z(t={t}) = {z:+.2}"));
        z_max = z_max.max(z.abs());
    }
    let i1 = grid_index(&summary.times, 1.0, config.dt);
    let tv = total_variation(
        &summary.mean_populations[i1],
        &analytic_number_distribution(config.n0, config.gamma, 1.0),
    );
    let ok = z_max < 3.0 && tv < 0.07 && summary.leakage_max < 1e-9;
    report(
        "ensemble mean vs analytic decay law",
        ok,
        &format!(
            "{} trajectories: {} (all |z| < 3), total variation to binomial law at t=1 \
             {tv:.4} < 0.07, truncation leakage {:.1e} < 1e-9",
            config.n_traj,
            zs.join(", "),
            summary.leakage_max
        ),
    );
}

#[test]
fn reflectivity_extremes_give_pure_counting_and_pure_diffusion() {
    // full reflection: every quantum leaves through the counter, so each
    // trajectory is an integer staircase ending n0 - clicks
    let full = SimulationConfig {
        r2: 1.0,
        n_traj: 5,
        ..SimulationConfig::default()
    };
    let setup = full.setup().unwrap();
    let grid = OutputGrid::for_config(&full);
    let mut staircase_ok = true;
    let mut total_clicks = 0usize;
    for idx in 0..full.n_traj as u64 {
        let out = run_trajectory(&full, &setup, &grid, idx).unwrap();
        for pair in out.mean_n.windows(2) {
            staircase_ok &= pair[1] <= pair[0] + 1e-9;
        }
        for &v in &out.mean_n {
            staircase_ok &= (v - v.round()).abs() < 1e-9;
        }
        let last = *out.mean_n.last().unwrap();
        staircase_ok &= (last - (full.n0 as f64 - out.jump_count as f64)).abs() < 1e-9;
        total_clicks += out.jump_count;
    }

    // full transmission: the counter never fires
    let open = SimulationConfig {
        r2: 0.0,
        n_traj: 100,
        ..SimulationConfig::default()
    };
    let none = run_ensemble(&open, None).unwrap();
    let zero_clicks = none.jump_counts.iter().all(|&n| n == 0);

    // both extremes still average to the decay law
    let closed = run_ensemble(
        &SimulationConfig {
            r2: 1.0,
            n_traj: 100,
            ..SimulationConfig::default()
        },
        None,
    )
    .unwrap();
    let mut z_max = 0.0f64;
    for &t in &[0.5, 1.0, 2.0, 4.0] {
        for summary in [&none, &closed] {
            let i = grid_index(&summary.times, t, open.dt);
            let z = (summary.mean_n[i] - summary.analytic_n[i]) / summary.stderr_n[i];
            z_max = z_max.max(z.abs());
        }
    }

    report(
        "reflectivity extremes",
        staircase_ok && zero_clicks && total_clicks > 0 && z_max < 3.0,
        &format!(
            "r^2 = 1: 5 trajectories are integer staircases (means integer within 1e-9, \
             non-increasing, final = start - clicks; {total_clicks} clicks total); \
             r^2 = 0: zero clicks across 100 trajectories: {zero_clicks}; ensemble means \
             at both extremes track the decay law, worst |z| = {z_max:.2} < 3"
        ),
    );
}

#[test]
fn scaling_free_filter_is_biased_and_corrected_filter_is_not() {
    let config = SimulationConfig::default();
    let cmp = compare_filters(&config, None).unwrap();
    let checkpoints = [0.5, 1.0, 2.0, 4.0];
    let mut lines = Vec::new();
    let mut corrected_ok = true;
    let mut biased_ok = true;
    for &t in &checkpoints {
        let i = grid_index(&cmp.times, t, config.dt);
        let zc = cmp.z_corrected[i];
        let zk = cmp.z_kuramochi[i];
        corrected_ok &= zc.abs() < 3.0;
        // the scaling-free filter underestimates the surviving excitation
        biased_ok &= zk < -3.0 && cmp.mean_kuramochi[i] < cmp.analytic_n[i];
        lines.push(format!("t={t}: z {zc:+.2} vs {zk:+.2}"));
    }
    report(
        "paired-filter bias comparison",
        corrected_ok && biased_ok,
        &format!(
            "{} paired trajectories on shared noise streams; corrected filter |z| < 3 and \
             scaling-free comparison filter z < -3 at every checkpoint: {}",
            config.n_traj,
            lines.join(", ")
        ),
    );
}

#[test]
fn conditional_ensembles_converge_to_the_unconditional_evolution() {
    let snapshots = vec![0.5, 1.0, 2.0];
    let n_traj = 2000usize;
    let base = SimulationConfig {
        t_final: 2.0,
        n_traj,
        snapshot_times: snapshots.clone(),
        ..SimulationConfig::default()
    };
    let bound = 5.0 / (n_traj as f64).sqrt();

    let pure = run_ensemble(&base, None).unwrap();
    let dens = run_ensemble(
        &SimulationConfig {
            filter: FilterKind::Sme,
            ..base.clone()
        },
        None,
    )
    .unwrap();

    let setup = base.setup().unwrap();
    let psi0 = fock_state(base.dim, base.n0).unwrap();
    let mut reference = &psi0 * psi0.adjoint();
    let mut prev_t = 0.0;
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, &t) in snapshots.iter().enumerate() {
        let steps = ((t - prev_t) / base.dt).round() as usize;
        reference = lindblad_propagate(
            setup.hamiltonian(),
            std::slice::from_ref(setup.coupling()),
            &reference,
            base.dt,
            steps,
        );
        prev_t = t;
        let d_pure = trace_distance(&pure.snapshot_densities[k], &reference).unwrap();
        let d_dens = trace_distance(&dens.snapshot_densities[k], &reference).unwrap();
        ok &= d_pure < bound && d_dens < bound;
        lines.push(format!("t={t}: pure {d_pure:.4}, density {d_dens:.4}"));
    }
    report(
        "conditional ensembles vs unconditional evolution",
        ok,
        &format!(
            "{n_traj} trajectories per filter; trace distance of ensemble means to the \
             RK4 reference ({}) all < 5/sqrt({n_traj}) = {bound:.4}",
            lines.join("; ")
        ),
    );
}

#[test]
fn structural_invariants_hold_along_trajectories() {
    // pure filter: post-step norm defect
    let pure_cfg = SimulationConfig {
        n_traj: 20,
        t_final: 1.0,
        ..SimulationConfig::default()
    };
    let pure = run_ensemble(&pure_cfg, None).unwrap();
    let norm_ok = pure.max_norm_defect <= 1e-8;

    // density filter: post-repair trace defect and snapshot positivity
    let dens_cfg = SimulationConfig {
        filter: FilterKind::Sme,
        n_traj: 5,
        t_final: 1.0,
        snapshot_times: vec![1.0],
        ..SimulationConfig::default()
    };
    let dens = run_ensemble(&dens_cfg, None).unwrap();
    let trace_ok = dens.max_norm_defect <= 1e-8;
    let snap = &dens.snapshot_densities[0];
    let herm = hermiticity_defect(snap);
    let eig_min = (snap + snap.adjoint())
        .map(|v| v * c(0.5, 0.0))
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &x| a.min(x));
    let pos_ok = herm <= 1e-8 && eig_min >= -1e-8;

    // conditional-expectation gains of the identity vanish exactly
    let setup = pure_cfg.setup().unwrap();
    let eye = CMatrix::identity(pure_cfg.dim, pure_cfg.dim);
    let zero = c(0.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(pure_cfg.seed);
    let mut psi = fock_state(pure_cfg.dim, pure_cfg.n0).unwrap();
    let mut rho = &psi * psi.adjoint();
    let mut gains_ok = true;
    for _ in 0..200 {
        let rate = setup.expectations_state(&psi).jump_rate;
        let inc = sample_increments(rate, pure_cfg.dt, &mut rng);
        psi = sse_step(&psi, &setup, pure_cfg.dt, inc).unwrap().0;
        let (b1, b2) = setup.filter_gains_state(&psi, &eye).unwrap();
        gains_ok &= b1 == zero && b2 == zero;

        let rate_d = setup.expectations_density(&rho).jump_rate;
        let inc_d = sample_increments(rate_d, pure_cfg.dt, &mut rng);
        rho = qtraj::filter::sme_step(&rho, &setup, pure_cfg.dt, inc_d)
            .unwrap()
            .0;
        let (g1, g2) = setup.filter_gains_density(&rho, &eye).unwrap();
        gains_ok &= g1 == zero && g2 == zero;
    }

    // at full reflection every click lands exactly one level down
    let full_cfg = SimulationConfig {
        r2: 1.0,
        ..SimulationConfig::default()
    };
    let full_setup = full_cfg.setup().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut psi = fock_state(full_cfg.dim, full_cfg.n0).unwrap();
    let mut level = full_cfg.n0;
    let mut clicks = 0usize;
    let mut jump_ok = true;
    for _ in 0..full_cfg.steps() {
        let rate = full_setup.expectations_state(&psi).jump_rate;
        let inc = sample_increments(rate, full_cfg.dt, &mut rng);
        let (next, rec) = sse_step(&psi, &full_setup, full_cfg.dt, inc).unwrap();
        psi = next;
        if rec.dn {
            level -= 1;
            clicks += 1;
            let fidelity = psi[level].norm_sqr() / psi.norm_squared();
            jump_ok &= fidelity >= 1.0 - 1e-12;
        }
    }
    jump_ok &= clicks > 0;

    report(
        "structural invariants",
        norm_ok && trace_ok && pos_ok && gains_ok && jump_ok,
        &format!(
            "pure-filter norm defect {:.1e} <= 1e-8; density-filter trace defect {:.1e} <= 1e-8, \
             snapshot hermiticity {herm:.1e} <= 1e-8 and lowest eigenvalue {eig_min:.1e} >= -1e-8; \
             identity gains exactly zero along 200 steps of both filters: {gains_ok}; \
             {clicks} clicks at full reflection each landing on the next level down \
             with fidelity >= 1 - 1e-12: {jump_ok}",
            pure.max_norm_defect, dens.max_norm_defect
        ),
    );
}

#[test]
fn unnormalized_filter_matches_normalized_filter_to_second_order() {
    let config = SimulationConfig::default();
    let setup = config.setup().unwrap();
    let dim = config.dim;
    let mut psi0 = fock_state(dim, 5).unwrap() + fock_state(dim, 4).unwrap();
    psi0 /= Complex64::new(psi0.norm(), 0.0);

    // two-point antithetic average over dW = +-sqrt(dt) cancels the odd
    // (order dt^1.5) part of the one-step gap, exposing the dt^2 remainder
    let gap_at = |dt: f64| -> f64 {
        let mut acc = CVector::zeros(dim);
        for sign in [1.0, -1.0] {
            let inc = Increments {
                dw: sign * dt.sqrt(),
                dn: false,
            };
            let (normalized, _) = sse_step(&psi0, &setup, dt, inc).unwrap();
            let raw = sse_step_corrected_unnormalized(&psi0, &setup, dt, inc).unwrap();
            let renormalized = &raw / Complex64::new(raw.norm(), 0.0);
            acc += normalized - renormalized;
        }
        (acc / Complex64::new(2.0, 0.0)).norm()
    };

    let dts = [1e-2, 1e-3, 1e-4];
    let gaps: Vec<f64> = dts.iter().map(|&dt| gap_at(dt)).collect();
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let xm = xs.iter().sum::<f64>() / 3.0;
    let ym = ys.iter().sum::<f64>() / 3.0;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xm) * (y - ym))
        .sum::<f64>()
        / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();

    let ok = slope >= 1.9 && gaps.iter().all(|g| g.is_finite() && *g > 0.0);
    report(
        "unnormalized filter convergence order",
        ok,
        &format!(
            "antithetic one-step gaps {:.3e} / {:.3e} / {:.3e} at dt = 1e-2 / 1e-3 / 1e-4; \
             log-log slope {slope:.3} >= 1.9",
            gaps[0], gaps[1], gaps[2]
        ),
    );
}
