//! The invariant suite run by `sddelab check`.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::Result;
use crate::lift::{check_propt, semigroup_shift, LiftedState};
use crate::mc::{map_paths, Execution};
use crate::model::{Problem, SolverConfig};
use crate::noise::{
    check_closed_operator_swap, check_fubini_swap, check_ito_isometry, sample_brownian, stream_rng,
    BrownianPath, IntegrandFamily, McGrid, StepProcess,
};
use crate::report::McCheck;
use crate::solvers::{
    compare_paths, moment_bounds, picard_contraction_study, reconstruct_generalized_strong,
    solve_direct, solve_lifted, solve_mild_picard, solve_mild_picard_with, PicardOptions,
    PicardStart,
};

fn m1(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Deterministic, time-varying, Brownian, bounded nonlinear and
/// path-dependent integrands.
pub fn standard_families(n_steps: usize, dt: f64) -> Vec<IntegrandFamily> {
    let constant = StepProcess::deterministic(1, 1, n_steps, |_| m1(1.0)).expect("1x1");
    let varying = StepProcess::deterministic(2, 2, n_steps, |k| {
        let t = k as f64 * dt;
        DMatrix::from_row_slice(2, 2, &[t.cos(), t.sin(), 0.5, t])
    })
    .expect("2x2");
    vec![
        IntegrandFamily::deterministic("constant", constant),
        IntegrandFamily::deterministic("time_varying_2x2", varying),
        IntegrandFamily::new("brownian", 1, 1, |w| {
            StepProcess::adapted(w, 1, |_, past| m1(past.current()[0])).expect("1x1")
        }),
        IntegrandFamily::new("cos_brownian", 1, 1, |w| {
            StepProcess::adapted(w, 1, |_, past| m1(past.current()[0].cos())).expect("1x1")
        }),
        IntegrandFamily::new("running_max_2d", 1, 2, |w| {
            let mut running = 0.0f64;
            StepProcess::adapted(w, 1, move |_, past| {
                let c = past.current();
                running = running.max(c[0].abs());
                DMatrix::from_row_slice(1, 2, &[running, c[1].signum()])
            })
            .expect("1x2")
        }),
    ]
}

fn path(p: &Problem, c: &SolverConfig, stream: u64) -> Result<BrownianPath> {
    sample_brownian(p.dim_noise, c.dt, c.steps_for(p.horizon)?, c.seed, stream)
}

/// Every check row is a deterministic function of `(p, c)`.
pub fn run_check_suite(p: &Problem, c: &SolverConfig, exec: Execution) -> Result<Vec<McCheck>> {
    let mut out = Vec::new();
    let n = c.steps_for(p.horizon)?;

    let few = c.mc_paths.clamp(1, 16);
    let rel = map_paths(few, exec, |i| -> Result<(f64, f64)> {
        let w = path(p, c, i as u64)?;
        let direct = solve_direct(p, c, &w)?;
        let lifted = solve_lifted(p, c, &w)?;
        let residual = reconstruct_generalized_strong(&direct, p)?.sup;
        let scale = direct
            .heads()
            .map(crate::segments::euclid)
            .fold(1.0, f64::max);
        Ok((
            compare_paths(&direct, &lifted)?.relative_sup_error,
            residual / scale,
        ))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let dl = rel.iter().map(|r| r.0).fold(0.0, f64::max);
    let res = rel.iter().map(|r| r.1).fold(0.0, f64::max);
    out.push(McCheck::new("direct_vs_lifted", dl, 0.0, dl <= 1e-10));
    out.push(McCheck::new("integrated_residual", res, 0.0, res <= 1e-9));

    let w0 = path(p, c, 0)?;
    let direct0 = solve_direct(p, c, &w0)?;
    let tol = c.tolerance;
    let (mild, report) = solve_mild_picard(p, c, &w0, 500, tol)?;
    let dm = compare_paths(&direct0, &mild)?.relative_sup_error;
    out.push(McCheck::new("direct_vs_mild", dm, 0.0, dm <= 1e-7));
    let shifted = PicardOptions::new(500, tol).with_start(PicardStart::Constant(
        p.x0.iter().map(|x| x + 1.0).collect(),
    ));
    let (mild2, _) = solve_mild_picard_with(p, c, &w0, &shifted)?;
    let uniq = compare_paths(&mild, &mild2)?.sup_error;
    out.push(McCheck::new(
        "picard_uniqueness",
        uniq,
        0.0,
        uniq <= 2.0 * tol,
    ));

    let window = &report.windows[0];
    let first = p
        .clone()
        .with_horizon((window.end_step - window.start_step) as f64 * c.dt);
    let study = picard_contraction_study(
        &first,
        &c.clone().with_paths(c.mc_paths.clamp(1, 64)),
        &PicardStart::Deterministic,
        6,
        exec,
    )?;
    let ratio = study.max_ratio().unwrap_or(0.0);
    out.push(McCheck::new("picard_contraction", ratio, 0.0, ratio <= 0.6));

    let y0 = LiftedState::initial(p);
    let nc = c.n_cells;
    let (k_stride, m_stride) = ((n / 20).max(1), (nc / 10).max(1));
    let mut propt = 0.0f64;
    for k in (1..=n).step_by(k_stride) {
        for m in (0..=nc.min(k - 1)).step_by(m_stride) {
            let r = check_propt(&y0, &p.drift, &p.delay, k as f64 * c.dt, -(m as f64) * c.dt)?;
            propt = propt.max(r.error);
        }
    }
    out.push(McCheck::new("propt_shift", propt, 0.0, propt == 0.0));

    let (t1, t2) = ((n / 3) as f64 * c.dt, (n - n / 3) as f64 * c.dt);
    let once = semigroup_shift(&y0, &p.drift, &p.delay, t1 + t2)?;
    let twice = semigroup_shift(
        &semigroup_shift(&y0, &p.drift, &p.delay, t1)?,
        &p.drift,
        &p.delay,
        t2,
    )?;
    let law = (&once.to_vector() - &twice.to_vector()).amax();
    out.push(McCheck::new("semigroup_law", law, 0.0, law == 0.0));

    let iso_steps = n.min(50);
    let grid = McGrid {
        dt: c.dt,
        n_steps: iso_steps,
        paths: c.mc_paths,
        seed: c.seed,
    };
    out.extend(check_ito_isometry(
        &standard_families(iso_steps, c.dt),
        grid,
        exec,
    )?);

    let mut rng = stream_rng(c.seed, u64::MAX);
    let mut swap_a = 0.0f64;
    let mut swap_f = 0.0f64;
    for trial in 0..20u64 {
        let w = sample_brownian(2, c.dt, iso_steps, c.seed, u64::MAX - 1 - trial)?;
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let mut random_phi = || {
            StepProcess::deterministic(3, 2, iso_steps, |_| {
                DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0))
            })
        };
        let phi = random_phi()?;
        let family = vec![phi.clone(), random_phi()?, random_phi()?];
        swap_a = swap_a.max(check_closed_operator_swap(&a, &phi, &w)?.error);
        let weights: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        swap_f = swap_f.max(check_fubini_swap(&family, &weights, &w)?.error);
    }
    out.push(McCheck::new(
        "closed_operator_swap",
        swap_a,
        0.0,
        swap_a <= 1e-12,
    ));
    out.push(McCheck::new("fubini_swap", swap_f, 0.0, swap_f <= 1e-12));

    let qv = crate::analysis::qv_study(p, c, exec)?;
    out.push(McCheck::new(
        "qv_vs_quadrature",
        qv.mean_qv - qv.mean_quadrature,
        qv.diff_std_error,
        qv.consistent(),
    ));

    for m in moment_bounds(
        p,
        &c.clone().with_paths(c.mc_paths.clamp(1, 500)),
        &[2.0, 4.0],
        exec,
    )? {
        out.push(McCheck::new(
            format!("moment_q{}", m.q),
            m.sup_moment,
            0.0,
            m.stable,
        ));
    }
    Ok(out)
}
