//! Acceptance checks. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion does.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture` to see
//! the lines.

mod common;

use std::sync::Arc;
use std::time::Instant;

use obsched::cli::{cmd_evaluate, cmd_solve, RunConfig};
use obsched::diagnostics::ergodic_check_on_kernel;
use obsched::exact::{cesaro_estimation_entropy, conditional_entropy_exact, conditional_entropy_oracle};
use obsched::model::presets;
use obsched::simulate::{default_burn_in, estimate_average_cost};
use obsched::solver::{
    build_all_kernels, build_grid, evaluate_grid_policy, grid_costs, optimality_gap, policy_iteration_with_kernels,
    policy_kernel, solve_poisson, BeliefGrid, GridPolicy, PiaOptions, PoissonSolution, SparseKernel,
};
use obsched::{Belief, CostFunction, LogBase, PolicyFunction, PomdpModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{hb, random_belief, random_model, write_model};

const BITS: CostFunction = CostFunction::Entropy { log_base: LogBase::Two };

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Random grid policy, or a constant one when the model has one sensor.
fn random_table(rng: &mut ChaCha8Rng, len: usize, sensors: usize) -> GridPolicy {
    GridPolicy::new((0..len).map(|_| rng.random_range(0..sensors)).collect())
}

/// Max-norm defect of `g + f = c + P f` and `g = P g`, computed directly.
fn poisson_defect(kernel: &SparseKernel, cost: &[f64], s: &PoissonSolution) -> f64 {
    (0..kernel.len())
        .map(|i| {
            let pf: f64 = kernel.row(i).iter().map(|&(j, p)| p * s.f[j]).sum();
            let pg: f64 = kernel.row(i).iter().map(|&(j, p)| p * s.gain[j]).sum();
            (s.gain[i] + s.f[i] - cost[i] - pf).abs().max((s.gain[i] - pg).abs())
        })
        .fold(0.0, f64::max)
}

fn tree_matches_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.random_range(2..=3);
        let l = rng.random_range(2..=3);
        let a = rng.random_range(1..=2);
        let model = random_model(&mut rng, m, l, a);
        let n = rng.random_range(1..=6);
        let x0 = Belief::new(random_belief(&mut rng, m)).unwrap();
        let policy = match rng.random_range(0..3) {
            0 => PolicyFunction::Constant(rng.random_range(0..a)),
            1 if m == 2 && a == 2 => PolicyFunction::threshold(rng.random::<f64>()),
            _ => {
                let grid = Arc::new(build_grid(m, 4).unwrap());
                let table = random_table(&mut rng, grid.len(), a);
                PolicyFunction::grid(grid, table)
            }
        };
        let tree = conditional_entropy_exact(&model, &policy, &x0, n, &BITS).map_err(|e| e.to_string())?;
        let oracle = conditional_entropy_oracle(&model, &policy, &x0, n, LogBase::Two).map_err(|e| e.to_string())?;
        worst = worst.max((tree - oracle).abs());
    }
    verdict(
        worst < 1e-10,
        format!("max |tree − oracle| = {worst:.2e} over 100 models"),
    )
}

fn perfect_sensor_closed_form() -> Outcome {
    let model = presets::perfect_sensor(0.9);
    let truth = hb(0.1);
    let x0 = Belief::uniform(2);
    let policy = PolicyFunction::Constant(0);
    let ces = cesaro_estimation_entropy(&model, &policy, &x0, 12, &BITS)
        .unwrap()
        .average;
    let steps = 100_000;
    let mc = estimate_average_cost(&model, &policy, &x0, steps, default_burn_in(steps), 1, 2024, &BITS).unwrap();
    let grid = build_grid(2, 40).unwrap();
    let g = evaluate_grid_policy(&model, &grid, &GridPolicy::constant(grid.len(), 0), &BITS).unwrap();
    // Every post-burn-in cost is h_b(0.1), so the interval has zero width and
    // only summation rounding separates the mean from the truth.
    let mc_ok = (mc.mean - truth).abs() <= mc.half_width + 1e-9;
    verdict(
        (ces - truth).abs() <= 0.05 && mc_ok && (g - truth).abs() <= 0.01,
        format!(
            "truth {truth:.6}; Cesàro(12) {ces:.6}, Monte Carlo {:.6} ± {:.1e}, grid g {g:.6}",
            mc.mean, mc.half_width
        ),
    )
}

fn uninformative_sensor_closed_form() -> Outcome {
    let model = presets::uninformative_sensor(0.9);
    let x0 = Belief::uniform(2);
    let policy = PolicyFunction::Constant(0);
    let ces = cesaro_estimation_entropy(&model, &policy, &x0, 12, &BITS)
        .unwrap()
        .average;
    let mc = estimate_average_cost(&model, &policy, &x0, 100_000, 10_000, 1, 2024, &BITS).unwrap();
    let grid = build_grid(2, 40).unwrap();
    let g = evaluate_grid_policy(&model, &grid, &GridPolicy::constant(grid.len(), 0), &BITS).unwrap();
    let worst = [ces, mc.mean, g].iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    verdict(
        worst <= 1e-9 && mc.half_width <= 1e-9,
        format!("Cesàro {ces}, Monte Carlo {} ± {}, grid g {g}", mc.mean, mc.half_width),
    )
}

fn scheduling_beats_constants() -> Outcome {
    let model = presets::cross_sensor(0.9);
    let grid = build_grid(2, 40).unwrap();
    let kernels = build_all_kernels(&model, &grid).unwrap();
    let report = policy_iteration_with_kernels(
        &grid,
        &kernels,
        &GridPolicy::constant(grid.len(), 0),
        &BITS,
        &PiaOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let eval = |p: &GridPolicy| evaluate_grid_policy(&model, &grid, p, &BITS).unwrap();
    let c0 = eval(&GridPolicy::constant(grid.len(), 0));
    let c1 = eval(&GridPolicy::constant(grid.len(), 1));
    let best_threshold = (1..20)
        .map(|k| eval(&GridPolicy::threshold(&grid, k as f64 / 20.0, 0, 1)))
        .fold(f64::INFINITY, f64::min);
    let g = report.g();
    verdict(
        g <= c0.min(c1) - 0.01 && g <= best_threshold + 1e-6,
        format!("PIA g {g:.6}; constants {c0:.6} / {c1:.6}; best threshold {best_threshold:.6}"),
    )
}

struct Instance {
    model: PomdpModel,
    grid: BeliefGrid,
    policy: GridPolicy,
}

fn instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    (0..50)
        .map(|i| {
            let m = rng.random_range(2..=3);
            let l = rng.random_range(2..=3);
            let model = random_model(&mut rng, m, l, 2);
            let grid = build_grid(m, [5, 10, 20][i % 3]).unwrap();
            let policy = random_table(&mut rng, grid.len(), 2);
            Instance { model, grid, policy }
        })
        .collect()
}

fn poisson_residuals(instances: &[Instance]) -> Outcome {
    let mut worst = 0.0f64;
    let mut solved = 0;
    let mut failed = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        let kernels = build_all_kernels(&inst.model, &inst.grid).unwrap();
        let kernel = policy_kernel(&kernels, &inst.policy);
        let cost = grid_costs(&inst.grid, &BITS);
        match solve_poisson(&kernel, &cost, inst.grid.uniform_ordinal()) {
            Ok(s) => {
                solved += 1;
                worst = worst.max(poisson_defect(&kernel, &cost, &s));
            }
            Err(e) => failed.push(format!("#{i}: {e}")),
        }
    }
    verdict(
        worst < 1e-8,
        format!(
            "max defect {worst:.2e} over {solved} solves; {} solver errors {:?}",
            failed.len(),
            failed
        ),
    )
}

fn pia_monotone_fixed_point(instances: &[Instance]) -> Outcome {
    let mut worst_rise = f64::NEG_INFINITY;
    let mut worst_gap = 0.0f64;
    let mut worst_defect = 0.0f64;
    for (i, inst) in instances.iter().enumerate() {
        let kernels = build_all_kernels(&inst.model, &inst.grid).unwrap();
        let report = policy_iteration_with_kernels(&inst.grid, &kernels, &inst.policy, &BITS, &PiaOptions::default())
            .map_err(|e| format!("instance {i}: {e}"))?;
        for w in report.iterations.windows(2) {
            worst_rise = worst_rise.max(w[1].g - w[0].g);
        }
        let cost = grid_costs(&inst.grid, &BITS);
        worst_gap = worst_gap.max(optimality_gap(&report.policy, &report.solution, &kernels, &cost));
        let kernel = policy_kernel(&kernels, &report.policy);
        worst_defect = worst_defect.max(poisson_defect(&kernel, &cost, &report.solution));
    }
    verdict(
        worst_rise <= 1e-12 && worst_gap <= 1e-10 && worst_defect < 1e-8,
        format!(
            "largest per-iteration rise in g {worst_rise:.2e}, largest argmin gap {worst_gap:.2e}, final defect {worst_defect:.2e}"
        ),
    )
}

fn gain_equals_measure_integral(instances: &[Instance]) -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut unconverged = 0;
    for inst in instances {
        let kernels = build_all_kernels(&inst.model, &inst.grid).unwrap();
        let kernel = policy_kernel(&kernels, &inst.policy);
        let cost = grid_costs(&inst.grid, &BITS);
        let Ok(c) = ergodic_check_on_kernel(&kernel, &cost, inst.grid.uniform_ordinal()) else {
            continue;
        };
        if c.measure_converged {
            checked += 1;
            worst = worst.max(c.gap);
        } else {
            unconverged += 1;
        }
    }
    verdict(
        worst < 1e-8 && checked > 0,
        format!("max |g − Σμc| = {worst:.2e} over {checked} converged chains ({unconverged} not converged)"),
    )
}

fn grid_agrees_with_simulation() -> Outcome {
    let grid = Arc::new(build_grid(2, 40).unwrap());
    let cross = presets::cross_sensor(0.9);
    let kernels = build_all_kernels(&cross, &grid).unwrap();
    let pia = policy_iteration_with_kernels(
        &grid,
        &kernels,
        &GridPolicy::constant(grid.len(), 0),
        &BITS,
        &PiaOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let cases: Vec<(&str, PomdpModel, PolicyFunction)> = vec![
        (
            "perfect const:0",
            presets::perfect_sensor(0.9),
            PolicyFunction::Constant(0),
        ),
        (
            "uninformative const:0",
            presets::uninformative_sensor(0.9),
            PolicyFunction::Constant(0),
        ),
        ("cross const:0", cross.clone(), PolicyFunction::Constant(0)),
        ("cross const:1", cross.clone(), PolicyFunction::Constant(1)),
        (
            "cross pia",
            cross.clone(),
            PolicyFunction::grid(grid.clone(), pia.policy.clone()),
        ),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, model, policy) in cases {
        let g = evaluate_grid_policy(&model, &grid, &policy.to_grid_policy(&grid), &BITS).unwrap();
        let mc = estimate_average_cost(&model, &policy, &Belief::uniform(2), 100_000, 10_000, 4, 17, &BITS).unwrap();
        let diff = (g - mc.mean).abs();
        ok &= diff <= mc.half_width.max(0.02);
        parts.push(format!("{name} Δ={diff:.4}"));
    }
    verdict(ok, parts.join(", "))
}

fn outputs_are_deterministic() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "cross.json", &presets::cross_sensor(0.9));
    let model = model.to_str().unwrap();
    let solve = RunConfig::from_args(["--model", model, "--grid-res", "20"]).unwrap();
    let a = cmd_solve(&solve).map_err(|e| e.to_string())?;
    let b = cmd_solve(&solve).map_err(|e| e.to_string())?;
    let eval = RunConfig::from_args([
        "--model",
        model,
        "--policy",
        "threshold:0.5",
        "--steps",
        "20000",
        "--chains",
        "3",
        "--seed",
        "11",
    ])
    .unwrap();
    let e1 = cmd_evaluate(&eval).map_err(|e| e.to_string())?;
    let e2 = cmd_evaluate(&eval).map_err(|e| e.to_string())?;
    let same = a.solution_json == b.solution_json && a.policy_csv == b.policy_csv && e1.rendered == e2.rendered;
    verdict(
        same,
        format!(
            "solve: {} + {} bytes, evaluate: {} bytes, identical = {same}",
            a.solution_json.len(),
            a.policy_csv.len(),
            e1.rendered.body.len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let shared = instances();
    let criteria: Vec<(&str, Check)> = vec![
        (
            "tree conditional entropy matches forward-joint oracle",
            Box::new(tree_matches_oracle),
        ),
        (
            "perfect sensor equals entropy rate of Q",
            Box::new(perfect_sensor_closed_form),
        ),
        (
            "uninformative sensor equals one bit",
            Box::new(uninformative_sensor_closed_form),
        ),
        (
            "scheduling beats constant and threshold policies",
            Box::new(scheduling_beats_constants),
        ),
        ("Poisson residual below 1e-8", Box::new(|| poisson_residuals(&shared))),
        (
            "policy iteration monotone with argmin fixed point",
            Box::new(|| pia_monotone_fixed_point(&shared)),
        ),
        (
            "gain equals cost integral under invariant measure",
            Box::new(|| gain_equals_measure_integral(&shared)),
        ),
        (
            "grid gain agrees with Monte Carlo",
            Box::new(grid_agrees_with_simulation),
        ),
        (
            "solve and evaluate are byte-deterministic",
            Box::new(outputs_are_deterministic),
        ),
    ];
    let mut failures = Vec::new();
    println!();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                println!("FAIL {}. {name}: {detail} ({secs:.1}s)", i + 1);
                failures.push(i + 1);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
