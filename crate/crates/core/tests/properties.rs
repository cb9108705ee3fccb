mod oracles;

use proptest::prelude::*;
use snc_core::game::{synth_empirical_decoder, NoiseModel};
use snc_core::inference::{enumerate_x_marginals, mh_accept, LikelihoodSpec, PriorConfig, XPrior};
use snc_core::metrics::{huffman_expected_length, js_divergence, rmse};
use snc_core::reasoning::cr_step;
use snc_core::world::{PriorRole, RegenStrategy};
use snc_core::{
    contextual_reasoning, devectorize, effectiveness, make_world, naive_decoder, naive_encoder,
    seeded, vectorize, Context, ReasoningConfig, SimplexVector, WorldDims, WorldGenConfig,
    WorldTuple,
};

/// `m` is capped so that `m` distinct nonzero columns exist.
fn world(n: usize, m: usize, s: f64, seed: u64) -> WorldTuple {
    let m = m.min((1 << n) - 1);
    make_world(
        &WorldGenConfig::new(WorldDims::new(n, m).unwrap(), s),
        &mut seeded(seed),
    )
    .unwrap()
}

fn rows_f64(x: &Context) -> Vec<Vec<f64>> {
    x.to_rows()
        .iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn vectorize_round_trips(seed in any::<u64>(), n in 2usize..6, m in 2usize..6, s in 0.2f64..0.7) {
        let t = world(n, m, s, seed);
        prop_assert_eq!(devectorize(&vectorize(&t), t.dims()).unwrap(), t);
    }

    #[test]
    fn full_matrix_regeneration_is_valid(seed in any::<u64>(), n in 2usize..6) {
        let mut c = WorldGenConfig::new(WorldDims::square(n).unwrap(), 0.3);
        c.regen = RegenStrategy::FullMatrix;
        let t = make_world(&c, &mut seeded(seed)).unwrap();
        prop_assert!(snc_core::world::validate_context(&t.context).is_empty());
        let f = rows_f64(&t.context);
        prop_assert_eq!(oracles::rank(&f), n);
    }

    #[test]
    fn cr_steps_stay_stochastic_and_on_support(
        seed in any::<u64>(),
        n in 2usize..6,
        m in 2usize..6,
        theta in 0.5f64..3.0,
        steps in 1usize..6,
    ) {
        let t = world(n, m, 0.4, seed);
        let m = t.dims().num_actions;
        let cfg = ReasoningConfig::with_theta(theta);
        let mut s = naive_encoder(&t.context).unwrap();
        let mut r = naive_decoder(&t.context);
        for _ in 0..steps {
            let (s1, r1) = cr_step(&s, &r, t.action_prior.probs(), t.concept_prior.probs(), &cfg).unwrap();
            s = s1;
            r = r1;
            prop_assert!(s.is_stochastic(1e-9));
            for c in 0..n {
                for a in 0..m {
                    if t.context.get(c, a) == 0 {
                        prop_assert_eq!(s.get(c, a), 0.0);
                        prop_assert_eq!(r.get(c, a), 0.0);
                    }
                }
                let row: f64 = r.row(c).iter().sum();
                let relevant = (0..m).any(|a| t.context.get(c, a) == 1);
                let ok = if relevant { (row - 1.0).abs() < 1e-9 } else { row == 0.0 };
                prop_assert!(ok, "row {} sums to {}", c, row);
            }
        }
    }

    #[test]
    fn converged_coders_are_fixed_points(seed in any::<u64>(), n in 2usize..6, theta in 0.8f64..2.0) {
        let t = world(n, n, 0.35, seed);
        let cfg = ReasoningConfig::with_theta(theta);
        let res = contextual_reasoning(&t, &cfg).unwrap();
        prop_assume!(res.converged);
        let (s, r) = cr_step(&res.encoder, &res.decoder, t.action_prior.probs(), t.concept_prior.probs(), &cfg).unwrap();
        prop_assert!(s.sup_diff(&res.encoder) < 1e-6);
        prop_assert!(r.sup_diff(&res.decoder) < 1e-6);
    }

    #[test]
    fn effectiveness_is_a_probability(seed in any::<u64>(), n in 2usize..6, m in 2usize..6) {
        let t = world(n, m, 0.4, seed);
        let res = contextual_reasoning(&t, &ReasoningConfig::default()).unwrap();
        let e = effectiveness(&res.encoder, &res.decoder, t.action_prior.probs()).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        let e0 = effectiveness(&naive_encoder(&t.context).unwrap(), &naive_decoder(&t.context), t.action_prior.probs()).unwrap();
        prop_assert!((0.0..=1.0).contains(&e0));
    }

    #[test]
    fn reasoning_is_deterministic(seed in any::<u64>(), n in 2usize..6) {
        let t = world(n, n, 0.3, seed);
        let a = contextual_reasoning(&t, &ReasoningConfig::default()).unwrap();
        let b = contextual_reasoning(&t, &ReasoningConfig::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn js_is_bounded_and_symmetric(p in prop::collection::vec(0.0f64..1.0, 2..6), q in prop::collection::vec(0.0f64..1.0, 2..6)) {
        let k = p.len().min(q.len());
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum::<f64>() + 1e-9;
            v.iter().map(|x| (x + 1e-9 / k as f64) / s).collect::<Vec<_>>()
        };
        let (p, q) = (norm(&p[..k]), norm(&q[..k]));
        let d = js_divergence(&p, &q).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - js_divergence(&q, &p).unwrap()).abs() < 1e-12);
        prop_assert!(js_divergence(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn huffman_meets_entropy_bounds(w in prop::collection::vec(0.001f64..1.0, 2..12)) {
        let s: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|v| v / s).collect();
        let h = oracles::entropy(&p);
        let l = huffman_expected_length(&p);
        prop_assert!(l >= h - 1e-9 && l < h + 1.0, "H = {h}, L = {l}");
    }

    #[test]
    fn rmse_is_a_metric(a in any::<u64>(), b in any::<u64>(), n in 2usize..5) {
        let (x, y) = (world(n, n, 0.4, a), world(n, n, 0.4, b));
        let d = rmse(&x, &y).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, rmse(&y, &x).unwrap());
        prop_assert_eq!(rmse(&x, &x).unwrap(), 0.0);
        prop_assert_eq!(d == 0.0, x == y);
    }
}

#[test]
fn theta_one_reasoning_matches_sinkhorn_knopp() {
    let cfg = ReasoningConfig {
        max_iters: 20_000,
        tol: 1e-12,
        ..ReasoningConfig::with_theta(1.0)
    };
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 30 {
        seed += 1;
        let n = 2 + (seed % 5) as usize;
        let x = world(n, n, 0.5, seed).context;
        if !oracles::has_total_support(&x.to_rows()) {
            continue;
        }
        checked += 1;
        let t = WorldTuple::with_uniform_priors(x.clone());
        let res = contextual_reasoning(&t, &cfg).unwrap();
        assert!(res.converged);
        let sk = oracles::sinkhorn_knopp(&rows_f64(&x), 1e-13, 100_000).unwrap();
        for c in 0..n {
            for a in 0..n {
                assert!(
                    (res.decoder.get(c, a) - sk[c][a]).abs() < 1e-6,
                    "seed {seed}"
                );
            }
        }
    }
}

#[test]
fn context_enumeration_matches_reference() {
    for (n, m) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
        let lib: Vec<Vec<Vec<u8>>> =
            snc_core::inference::valid_contexts(WorldDims::new(n, m).unwrap())
                .unwrap()
                .iter()
                .map(|x| x.to_rows())
                .collect();
        let mut reference = oracles::valid_contexts(n, m, false);
        let mut lib_sorted = lib.clone();
        reference.sort();
        lib_sorted.sort();
        assert_eq!(lib_sorted, reference, "{n}x{m}");
    }
}

#[test]
fn enumerated_marginals_match_reference() {
    let cfg = ReasoningConfig::default();
    let sigma = 0.1;
    for seed in 0..6u64 {
        let (n, m) = if seed % 2 == 0 { (2, 2) } else { (2, 3) };
        let t = world(n, m, 0.4, seed);
        let r = contextual_reasoning(&t, &cfg).unwrap().decoder;
        let rb =
            synth_empirical_decoder(&r, NoiseModel::new(sigma).unwrap(), &mut seeded(seed + 100))
                .unwrap();
        let priors = PriorConfig {
            x_prior: XPrior::Bernoulli { s: 0.4 },
            ..PriorConfig::default()
        };
        let lib = enumerate_x_marginals(
            &rb,
            &t.action_prior,
            &t.concept_prior,
            sigma,
            LikelihoodSpec::Icr(cfg),
            &priors,
        )
        .unwrap();

        let contexts = oracles::valid_contexts(n, m, false);
        let logs: Vec<f64> = contexts
            .iter()
            .map(|x| {
                let cand = WorldTuple::new(
                    Context::from_rows(x).unwrap(),
                    t.action_prior.clone(),
                    t.concept_prior.clone(),
                )
                .unwrap();
                let rs = contextual_reasoning(&cand, &cfg).unwrap().decoder;
                let ss: f64 = (0..n)
                    .flat_map(|c| (0..m).map(move |a| (c, a)))
                    .map(|(c, a)| (rb.get(c, a) - rs.get(c, a)).powi(2))
                    .sum();
                let ones = x.iter().flatten().filter(|&&v| v == 1).count() as f64;
                let zeros = (n * m) as f64 - ones;
                -ss / (2.0 * sigma * sigma) + ones * 0.4f64.ln() + zeros * 0.6f64.ln()
            })
            .collect();
        let reference = oracles::entry_marginals(&contexts, &logs);
        for c in 0..n {
            for a in 0..m {
                let i = t.dims().idx(c, a);
                assert!(
                    (lib[i] - reference[c][a]).abs() < 1e-9,
                    "seed {seed} entry ({c},{a})"
                );
            }
        }
    }
}

#[test]
fn flip_kernel_satisfies_detailed_balance() {
    // identity and [[1,1],[0,1]] differ in one entry and are both valid; a
    // weakly rational recursion keeps their decoders apart
    let cfg = ReasoningConfig::with_theta(0.3);
    let sigma = 0.2;
    let y = SimplexVector::new(vec![0.6, 0.4], PriorRole::Action).unwrap();
    let z = SimplexVector::new(vec![0.3, 0.7], PriorRole::Concept).unwrap();
    let truth = WorldTuple::new(Context::identity(2).unwrap(), y.clone(), z.clone()).unwrap();
    let r = contextual_reasoning(&truth, &cfg).unwrap().decoder;
    let rb = synth_empirical_decoder(&r, NoiseModel::new(sigma).unwrap(), &mut seeded(5)).unwrap();
    let log_post = |rows: &[Vec<u8>]| {
        let t = WorldTuple::new(Context::from_rows(rows).unwrap(), y.clone(), z.clone()).unwrap();
        let rs = contextual_reasoning(&t, &cfg).unwrap().decoder;
        let ss: f64 = (0..2)
            .flat_map(|c| (0..2).map(move |a| (c, a)))
            .map(|(c, a)| (rb.get(c, a) - rs.get(c, a)).powi(2))
            .sum();
        -ss / (2.0 * sigma * sigma)
    };
    let l0 = log_post(&[vec![1, 0], vec![0, 1]]);
    let l1 = log_post(&[vec![1, 1], vec![0, 1]]);
    let pi1 = 1.0 / (1.0 + (l0 - l1).exp());
    let pi0 = 1.0 - pi1;

    let trials = 100_000;
    let mut rng = seeded(9);
    let up = (0..trials)
        .filter(|_| mh_accept(l1 - l0, 0.0, &mut rng))
        .count() as f64
        / trials as f64;
    let down = (0..trials)
        .filter(|_| mh_accept(l0 - l1, 0.0, &mut rng))
        .count() as f64
        / trials as f64;
    let se =
        ((pi0 * pi0 * up * (1.0 - up) + pi1 * pi1 * down * (1.0 - down)) / trials as f64).sqrt();
    let flow = pi0 * up - pi1 * down;
    assert!(flow.abs() <= 3.0 * se.max(1e-12), "flow {flow}, se {se}");
    // and the acceptance probabilities are the Metropolis ones
    assert!(up.min(down) < 1.0 && up.max(down) == 1.0);
}
