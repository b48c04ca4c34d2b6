//! Invariants of the solver, sampler, trainer and baseline, checked on
//! randomized inputs and seeded runs.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng as _;
use rfnn::baseline::{flatten, initial_network, loss_and_gradient, unflatten};
use rfnn::data::{standardize, Dataset};
use rfnn::linalg::{assemble_design_matrix, normal_equation_residual, ridge_objective, solve_ridge, solve_ridge_raw};
use rfnn::network::NormStats;
use rfnn::rng::rng_for;
use rfnn::sampler::{metropolis_sweep_block1, BlockData, ChainState, ProposalConfig, SignRule};
use rfnn::targets::{generate_dataset, sine_integral, TargetFunction, TargetSpec};
use rfnn::trainer::{train, train_block1, train_block_ell, Method, TrainConfig};

fn matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_for(seed, 9);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn vector(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = rng_for(seed, 10);
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn small_config(width: usize, blocks: usize, sweeps: usize, lambda: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        width,
        max_blocks: blocks,
        sweeps: vec![sweeps],
        lambdas: vec![lambda],
        seed,
        check_normal_equations: true,
        ..TrainConfig::with_defaults(1)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ridge_solutions_satisfy_normal_equations(
        rows in 4usize..40,
        cols in 1usize..6,
        lambda in prop_oneof![Just(0.0), 1e-8f64..1.0],
        seed in any::<u64>(),
    ) {
        prop_assume!(rows >= cols + 2);
        let a = matrix(rows, cols, seed);
        let r = vector(rows, seed);
        let b = solve_ridge_raw(&a, &r, lambda, rows).unwrap();
        prop_assert!(normal_equation_residual(&a, &r, lambda, rows, &b) <= 1e-8);
        // b = 0 is feasible.
        let zero = DVector::zeros(cols);
        prop_assert!(ridge_objective(&a, &r, lambda, rows, &b) <= ridge_objective(&a, &r, lambda, rows, &zero) + 1e-15);
    }

    #[test]
    fn ridge_shrinks_with_lambda(
        rows in 6usize..40,
        cols in 1usize..5,
        l1 in 1e-6f64..1e-1,
        factor in 1.5f64..100.0,
        seed in any::<u64>(),
    ) {
        let a = matrix(rows, cols, seed);
        let r = vector(rows, seed ^ 1);
        let small = solve_ridge_raw(&a, &r, l1, rows).unwrap();
        let large = solve_ridge_raw(&a, &r, l1 * factor, rows).unwrap();
        prop_assert!(small.norm() >= large.norm() * (1.0 - 1e-12));
    }

    #[test]
    fn realizable_cosine_sums_are_recovered_exactly(
        width in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = rng_for(seed, 11);
        let n = 200;
        let inputs = DMatrix::from_fn(n, 1, |i, _| -2.0 + 4.0 * i as f64 / (n - 1) as f64);
        // Distinct, well-separated frequencies keep the system well conditioned.
        let freqs = DMatrix::from_fn(width, 1, |j, _| 0.7 + 1.3 * j as f64 + rng.random_range(0.0..0.3));
        let re: Vec<f64> = (0..width).map(|_| rng.random_range(-2.0..2.0)).collect();
        let im: Vec<f64> = (0..width).map(|_| rng.random_range(-2.0..2.0)).collect();
        let targets = DVector::from_fn(n, |i, _| {
            (0..width)
                .map(|j| {
                    let arg = freqs[(j, 0)] * inputs[(i, 0)];
                    re[j] * arg.cos() - im[j] * arg.sin()
                })
                .sum()
        });
        let design = assemble_design_matrix(&inputs, None, &freqs, None).unwrap();
        let sol = solve_ridge(&design, &targets, 0.0, n).unwrap();
        for j in 0..width {
            prop_assert!((sol.re_b[j] - re[j]).abs() < 1e-6);
            prop_assert!((sol.im_b[j] - im[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn sine_integral_matches_brute_force_trapezoid(x in -20.0f64..20.0) {
        // 10⁶ panels over [0, x] of sin(t)/t.
        let panels = 1_000_000;
        let h = x / panels as f64;
        let f = |t: f64| if t == 0.0 { 1.0 } else { t.sin() / t };
        let mut s = 0.5 * (f(0.0) + f(x));
        for i in 1..panels {
            s += f(i as f64 * h);
        }
        prop_assert!((sine_integral(x) - s * h).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn adam_gradients_match_central_differences(
        dim in prop_oneof![Just(1usize), Just(3usize)],
        depth in prop_oneof![Just(1usize), Just(3usize)],
        width in 1usize..4,
        lambda in prop_oneof![Just(0.0), 1e-4f64..1e-1],
        seed in any::<u64>(),
    ) {
        let n = 12;
        let inputs = matrix(n, dim, seed);
        let targets = vector(n, seed ^ 7);
        let stats = NormStats::fit(&inputs).unwrap();
        let mut net = initial_network(width, depth, stats, seed).unwrap();
        // Larger amplitudes make the z-dependent terms matter.
        let mut params = flatten(&net);
        let mut rng = rng_for(seed, 12);
        for p in params.iter_mut() {
            *p += rng.random_range(-0.5..0.5);
        }
        unflatten(&mut net, &params).unwrap();
        let (_, grad) = loss_and_gradient(&net, &inputs, &targets, lambda).unwrap();
        let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let h = 1e-5;
        for k in 0..params.len() {
            let mut probe = net.clone();
            let mut p = params.clone();
            p[k] += h;
            unflatten(&mut probe, &p).unwrap();
            let (up, _) = loss_and_gradient(&probe, &inputs, &targets, lambda).unwrap();
            p[k] -= 2.0 * h;
            unflatten(&mut probe, &p).unwrap();
            let (down, _) = loss_and_gradient(&probe, &inputs, &targets, lambda).unwrap();
            let fd = (up - down) / (2.0 * h);
            // Relative to the component, floored at 1% of the largest one so
            // round-off in near-zero components does not dominate.
            let denom = grad[k].abs().max(1e-2 * scale).max(1e-12);
            prop_assert!((fd - grad[k]).abs() / denom <= 1e-4, "param {k}: fd {fd} analytic {}", grad[k]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn seeded_runs_obey_training_invariants(
        target in prop_oneof![Just("multiscale"), Just("stairstep")],
        lambda in prop_oneof![Just(1e-6), Just(1e-4), Just(1e-2)],
        width in 2usize..5,
        seed in any::<u64>(),
    ) {
        let t = TargetFunction::from_spec(&TargetSpec::named(target)).unwrap();
        let data = generate_dataset(&t, 120, seed).unwrap();
        let cfg = small_config(width, 4, 30, lambda, seed);
        let out = train(&data, None, &cfg).unwrap();
        let (std_data, _) = standardize(&data).unwrap();

        let mut previous = data.targets.norm_squared() / data.len() as f64;
        for (l, r) in out.reports.iter().enumerate() {
            let block = l + 1;
            prop_assert!(r.max_normal_residual.unwrap() <= 1e-8);
            // The zero update is feasible for every block's ridge problem.
            prop_assert!(r.train_mse + lambda * r.amplitude_norm_squared <= previous * (1.0 + 1e-10) + 1e-15);
            prop_assert!(r.train_mse <= previous * (1.0 + 1e-10) + 1e-15);
            previous = r.train_mse;
            // The residual each block saw equals Q minus the network so far.
            let z = out.network.forward(&data.inputs, Some(block)).unwrap();
            let direct = (&data.targets - &z).norm_squared() / data.len() as f64;
            prop_assert!((direct - r.train_mse).abs() <= 1e-12 * direct.max(1e-300) + 1e-15);
            prop_assert!((0.0..=1.0).contains(&r.acceptance_rate));
        }
        // Sign rule in one dimension: no negative frequency is ever held.
        for trace in &out.traces {
            for row in &trace.rows {
                prop_assert!(row.freqs.iter().all(|&w| w >= 0.0));
                if let Some(fp) = &row.freqs_prime {
                    prop_assert!(fp.iter().all(|&w| w >= 0.0));
                }
            }
        }
        // Block-wise entry points reproduce the run.
        let first = train_block1(&std_data, &cfg).unwrap();
        prop_assert_eq!(&first.params, &out.network.blocks()[0]);
        let mut partial = out.network.clone();
        partial.truncate(2);
        let third = train_block_ell(&std_data, &partial, &cfg, 3).unwrap();
        prop_assert_eq!(&third.params, &out.network.blocks()[2]);
    }
}

#[test]
fn full_runs_are_bitwise_deterministic() {
    let t = TargetFunction::from_spec(&TargetSpec::named("sine_discontinuity_3d")).unwrap();
    let data = generate_dataset(&t, 150, 3).unwrap();
    let test = rfnn::targets::generate_dataset_on_stream(&t, 50, 3, rfnn::rng::stream::DATASET_TEST).unwrap();
    let cfg = TrainConfig {
        width: 3,
        max_blocks: 3,
        sweeps: vec![25],
        ..TrainConfig::with_defaults(3)
    };
    let a = train(&data, Some(&test), &cfg).unwrap();
    let b = train(&data, Some(&test), &cfg).unwrap();
    assert_eq!(a.network.blocks(), b.network.blocks());
    assert_eq!(a.traces, b.traces);
    for (x, y) in a.reports.iter().zip(&b.reports) {
        assert_eq!(x.train_mse.to_bits(), y.train_mse.to_bits());
        assert_eq!(x.test_mse.map(f64::to_bits), y.test_mse.map(f64::to_bits));
    }
    let other = train(&data, Some(&test), &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.network.blocks(), other.network.blocks());
}

/// `|b(ω)|` for a single chain, from the 2×2 normal equations written out by
/// hand.
fn single_chain_magnitude(x: &DMatrix<f64>, r: &DVector<f64>, omega: f64, lambda: f64) -> f64 {
    let n = x.nrows() as f64;
    let (mut cc, mut cs, mut ss, mut cr, mut sr) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.nrows() {
        let c = (omega * x[(i, 0)]).cos();
        let s = -(omega * x[(i, 0)]).sin();
        cc += c * c;
        cs += c * s;
        ss += s * s;
        cr += c * r[i];
        sr += s * r[i];
    }
    let (a11, a12, a22) = (cc / n + lambda, cs / n, ss / n + lambda);
    let (y1, y2) = (cr / n, sr / n);
    let det = a11 * a22 - a12 * a12;
    let re = (a22 * y1 - a12 * y2) / det;
    let im = (a11 * y2 - a12 * y1) / det;
    re.hypot(im)
}

fn equally_spaced(n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |i, _| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

#[test]
fn single_chain_stationary_law_is_amplitude_power() {
    // With one chain the acceptance ratio depends on ω alone, so the chain
    // is a random-walk Metropolis sampler of |b(ω)|^γ on ω ≥ 0.
    let x = equally_spaced(41, -3.0, 3.0);
    let r = DVector::from_fn(41, |i, _| (-0.5 * x[(i, 0)].powi(2)).exp());
    let lambda = 1e-3;
    let gamma = 2.0;
    let data = BlockData {
        inputs: &x,
        residual: &r,
        z_prev: None,
    };
    let cfg = ProposalConfig {
        delta: 1.0,
        delta_prime: 1.0,
        gamma,
        gamma_prime: gamma,
        sign_rule: SignRule::RejectNegative1d,
        freeze_prime: false,
    };
    let mut state = ChainState::new(&data, DMatrix::from_element(1, 1, 0.5), None, rng_for(17, 1), lambda).unwrap();

    // Equal-mass bins of the reference law from a fine quadrature.
    let grid_max = 8.0;
    let fine = 20_000;
    let dens: Vec<f64> = (0..=fine)
        .map(|k| single_chain_magnitude(&x, &r, grid_max * k as f64 / fine as f64, lambda).powf(gamma))
        .collect();
    let mut cdf = vec![0.0; fine + 1];
    for k in 1..=fine {
        cdf[k] = cdf[k - 1] + 0.5 * (dens[k] + dens[k - 1]);
    }
    let total = cdf[fine];
    let bins = 20;
    let edges: Vec<f64> = (1..bins)
        .map(|b| {
            let target = total * b as f64 / bins as f64;
            let k = cdf.partition_point(|&c| c < target);
            grid_max * k as f64 / fine as f64
        })
        .collect();

    let burn_in = 1_000;
    let thin = 10;
    let samples = 100_000;
    for _ in 0..burn_in {
        metropolis_sweep_block1(&mut state, &data, &cfg, lambda).unwrap();
    }
    let mut counts = vec![0usize; bins];
    for _ in 0..samples {
        for _ in 0..thin {
            metropolis_sweep_block1(&mut state, &data, &cfg, lambda).unwrap();
        }
        let w = state.freqs[(0, 0)];
        counts[edges.partition_point(|&e| e <= w)] += 1;
    }
    let expected = samples as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of the chi-squared law with 19 degrees of freedom.
    assert!(chi2 < 36.191, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn single_frequency_target_is_found() {
    let t = TargetFunction::from_spec(&TargetSpec::named("cosine")).unwrap();
    let data = generate_dataset(&t, 400, 5).unwrap();
    let (std_data, stats) = standardize(&data).unwrap();
    let cfg = TrainConfig {
        width: 1,
        max_blocks: 1,
        sweeps: vec![500],
        ..TrainConfig::with_defaults(1)
    };
    let out = train_block1(&std_data, &cfg).unwrap();
    // In standardized units cos(5θ) = cos(5σ θ̃).
    let truth = 5.0 * stats.std[0];
    // Independent check: the amplitude magnitude over a fine grid peaks
    // there. Near ω = 0 the sine column vanishes and |b| is ill-conditioned,
    // so the search starts at 0.5.
    let grid_best = (500..=40_000)
        .map(|k| k as f64 * 1e-3)
        .max_by(|a, b| {
            single_chain_magnitude(&std_data.inputs, &std_data.targets, *a, 1e-4)
                .total_cmp(&single_chain_magnitude(&std_data.inputs, &std_data.targets, *b, 1e-4))
        })
        .unwrap();
    assert!((grid_best - truth).abs() < 0.05 * truth, "grid {grid_best} vs {truth}");
    let mut visits: Vec<f64> = out.trace.rows[100..].iter().map(|r| r.freqs[0]).collect();
    visits.sort_by(f64::total_cmp);
    let median = visits[visits.len() / 2];
    assert!((median - truth).abs() < 0.05 * truth, "chain median {median} vs {truth}");
}

#[test]
fn sampling_the_skip_frequency_moves_mass_onto_it() {
    let t = TargetFunction::from_spec(&TargetSpec::named("stairstep")).unwrap();
    let data = generate_dataset(&t, 400, 2).unwrap();
    let (std_data, _) = standardize(&data).unwrap();
    let base = TrainConfig {
        width: 6,
        max_blocks: 2,
        sweeps: vec![500],
        lambdas: vec![1e-6],
        ..TrainConfig::with_defaults(1)
    };
    let first = train_block1(&std_data, &base).unwrap();
    let mut net = rfnn::network::Network::new(1, 6, NormStats::identity(1)).unwrap();
    net.push_block(first.params).unwrap();
    let prime_share = |method: Method| {
        let cfg = TrainConfig { method, ..base.clone() };
        let p = train_block_ell(&std_data, &net, &cfg, 2).unwrap().params;
        let mag = |re: &[f64], im: &[f64]| re.iter().zip(im).map(|(a, b)| a.hypot(*b)).sum::<f64>();
        let primed = mag(p.re_b_prime.as_ref().unwrap(), p.im_b_prime.as_ref().unwrap());
        primed / (primed + mag(&p.re_b, &p.im_b))
    };
    let sampled = prime_share(Method::Method1);
    let frozen = prime_share(Method::Method2);
    assert!(sampled > frozen, "sampled {sampled} frozen {frozen}");
}

#[test]
fn dataset_rows_are_evaluations() {
    let t = TargetFunction::from_spec(&TargetSpec::named("multiscale")).unwrap();
    let data: Dataset = generate_dataset(&t, 64, 8).unwrap();
    for i in 0..data.len() {
        assert_eq!(data.targets[i], t.eval(&[data.inputs[(i, 0)]]));
    }
}
