use ndarray::{Array1, Array2};
use proptest::prelude::*;

use posterior_map::acoustic::{tie_states, TiedStateInventory};
use posterior_map::config::ExperimentConfig;
use posterior_map::fusion::{frame_error, fuse_frame, search_weights, FusionConfig};
use posterior_map::math::{entropy, gradient_check, kl_divergence, mean_kl, Activation, NetworkParams, ProbVector};
use posterior_map::similarity::{partition_biphones, Subset};
use posterior_map::stream::{LabelSpace, PosteriorStream};
use posterior_map::synth::{make_language_family, sample_corpus, Biphone};

fn normalized(w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn dist(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3f64..1.0, k).prop_map(normalized)
}

fn dist_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..16).prop_flat_map(|k| (dist(k), dist(k)))
}

/// Textbook KL for strictly positive inputs.
fn kl_oracle(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
}

fn pv(v: &[f64]) -> ProbVector {
    ProbVector::new(v.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_matches_oracle((p, q) in dist_pair()) {
        let kl = kl_divergence(&pv(&p), &pv(&q)).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!((kl - kl_oracle(&p, &q)).abs() < 1e-9);
        prop_assert_eq!(kl_divergence(&pv(&p), &pv(&p)).unwrap(), 0.0);
    }

    #[test]
    fn kl_and_entropy_are_permutation_invariant(
        (p, q, perm) in (2usize..12).prop_flat_map(|k| {
            (dist(k), dist(k), Just((0..k).collect::<Vec<_>>()).prop_shuffle())
        })
    ) {
        let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let qp: Vec<f64> = perm.iter().map(|&i| q[i]).collect();
        let a = kl_divergence(&pv(&p), &pv(&q)).unwrap();
        let b = kl_divergence(&pv(&pp), &pv(&qp)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((entropy(&pv(&p)) - entropy(&pv(&pp))).abs() < 1e-12);
    }

    #[test]
    fn entropy_within_bounds(p in (1usize..20).prop_flat_map(dist)) {
        let h = entropy(&pv(&p));
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn mean_kl_is_frame_average(frames in prop::collection::vec(dist_pair(), 1..6)) {
        let k = frames[0].0.len();
        let frames: Vec<_> = frames.into_iter().filter(|(p, _)| p.len() == k).collect();
        let ps: Vec<ProbVector> = frames.iter().map(|(p, _)| pv(p)).collect();
        let qs: Vec<ProbVector> = frames.iter().map(|(_, q)| pv(q)).collect();
        let expected = frames.iter().map(|(p, q)| kl_oracle(p, q)).sum::<f64>() / frames.len() as f64;
        prop_assert!((mean_kl(&ps, &qs).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn forward_is_a_distribution(
        dims in prop::collection::vec(1usize..12, 2..5),
        seed in any::<u64>(),
        relu in any::<bool>(),
        x in prop::collection::vec(-3.0f64..3.0, 12),
    ) {
        let act = if relu { Activation::Relu } else { Activation::Tanh };
        let net = NetworkParams::<f64>::random(&dims, act, seed).unwrap();
        let y = net.forward(&x[..dims[0]]).unwrap();
        let s: f64 = y.as_slice().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-6);
        prop_assert!(y.as_slice().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn fused_frame_is_convex(
        (t, s1, s2) in (2usize..10).prop_flat_map(|k| (dist(k), dist(k), dist(k))),
        w in (0u32..=10, 0u32..=10).prop_filter("inside simplex", |(a, b)| a + b <= 10),
    ) {
        let (w1, w2) = (f64::from(w.0) / 10.0, f64::from(w.1) / 10.0);
        let cfg = FusionConfig::new(f64::from(10 - w.0 - w.1) / 10.0, vec![w1, w2]).unwrap();
        let f = fuse_frame(&pv(&t), &[pv(&s1), pv(&s2)], &cfg).unwrap();
        for (i, &v) in f.as_slice().iter().enumerate() {
            let lo = t[i].min(s1[i]).min(s2[i]);
            let hi = t[i].max(s1[i]).max(s2[i]);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn gradient_check_on_random_small_networks(
        dims in prop::collection::vec(2usize..=16, 2..=4)
            .prop_filter("at most 500 parameters", |d| {
                d.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>() <= 500
            }),
        relu in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let act = if relu { Activation::Relu } else { Activation::Tanh };
        let init = NetworkParams::<f64>::random(&dims, act, seed).unwrap();
        // Nonzero biases keep ReLU pre-activations off the kink at exactly 0.
        let biases = init
            .biases()
            .iter()
            .map(|b| Array1::from_shape_fn(b.len(), |j| 0.1 + 0.03 * j as f64))
            .collect();
        let net = NetworkParams::from_parts(dims.clone(), init.weights().to_vec(), biases, act).unwrap();
        let n = 4;
        let (din, dout) = (dims[0], *dims.last().unwrap());
        let x = Array2::from_shape_fn((n, din), |(i, j)| ((i * 7 + j * 3 + seed as usize % 5) as f64 * 0.37).sin());
        let t = Array2::from_shape_fn((n, dout), |(i, j)| 1.0 + ((i + 2 * j) % 3) as f64);
        let t = &t / &t.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
        let dev = gradient_check(&net, x.view(), t.view(), 1e-3);
        prop_assert!(dev < 1e-4, "deviation {dev} for dims {dims:?} {act:?}");
    }

    #[test]
    fn weight_search_never_loses_to_target_only(seed in any::<u64>()) {
        let k = 3;
        let n = 30;
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) + 1e-3
        };
        let mut stream = |labels: &[u32]| {
            let probs = Array2::from_shape_fn((n, k), |_| next());
            let probs = &probs / &probs.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
            PosteriorStream::new(probs, labels.to_vec(), LabelSpace::TiedClass, "m", "t", "fp").unwrap()
        };
        let labels: Vec<u32> = (0..n as u32).map(|i| i % k as u32).collect();
        let target = stream(&labels);
        let mapped = vec![stream(&labels), stream(&labels)];
        let b: Vec<Biphone> = (0..k).map(|i| Biphone::new("a", &format!("c{i}"))).collect();
        let tying = TiedStateInventory::new("t", vec!["t".into()], b, (0..k).map(|i| vec![i]).collect()).unwrap();
        let r = search_weights(&target, &mapped, &tying, 0.1).unwrap();
        let pure = frame_error(&target, &tying).unwrap().tied_class;
        prop_assert!(r.best_error <= pure);
        prop_assert_eq!(r.trace.len(), 66);
        let s = r.best.target_weight() + r.best.source_weights().iter().sum::<f64>();
        prop_assert!((s - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn tying_and_partition_invariants(seed in 0u64..1000, fraction in 0.2f64..1.0) {
        let family = make_language_family(&ExperimentConfig::small(seed).family).unwrap();
        let (a, b) = (&family[0], &family[1]);
        let corpus = sample_corpus(a, 3000, seed).unwrap();
        let attested: std::collections::BTreeSet<u32> = corpus.labels().iter().copied().collect();
        let target = ((fraction * attested.len() as f64).round() as usize).max(1);
        let tying = tie_states(&corpus, a, target, 50).unwrap();
        prop_assert_eq!(tying.class_count(), target);
        let mut members: Vec<usize> = tying.clusters().iter().flatten().copied().collect();
        members.sort_unstable();
        members.dedup();
        prop_assert_eq!(members.len(), attested.len());
        for (c, cluster) in tying.clusters().iter().enumerate() {
            prop_assert_eq!(tying.is_restricted(c), cluster.len() == 1);
        }

        let b_corpus = sample_corpus(b, 3000, seed).unwrap();
        let b_tying = tie_states(&b_corpus, b, 20, 50).unwrap();
        let part = partition_biphones(a, b, b_tying.attested(), &tying);
        let n = part.biphones.len();
        prop_assert_eq!(
            part.count(Subset::SS) + part.count(Subset::SU) + part.count(Subset::U),
            n
        );
        for (r, base) in [(Subset::RSS, Subset::SS), (Subset::RSU, Subset::SU), (Subset::RU, Subset::U)] {
            let base: Vec<usize> = part.members(base);
            prop_assert!(part.members(r).iter().all(|i| base.contains(i)));
        }
    }

    #[test]
    fn corpus_means_converge_to_emission_means(seed in 0u64..1000) {
        let family = make_language_family(&ExperimentConfig::small(seed).family).unwrap();
        let lang = &family[0];
        let corpus = sample_corpus(lang, 20_000, seed).unwrap();
        let dim = lang.dim();
        let mut sums = vec![vec![0.0; dim]; lang.biphones().len()];
        let mut counts = vec![0usize; lang.biphones().len()];
        for (row, &l) in corpus.features().rows().into_iter().zip(corpus.labels()) {
            counts[l as usize] += 1;
            for (s, v) in sums[l as usize].iter_mut().zip(row) {
                *s += v;
            }
        }
        for (b, em) in lang.emissions().iter().enumerate() {
            if counts[b] < 400 {
                continue;
            }
            let n = counts[b] as f64;
            for d in 0..dim {
                let mean = sums[b][d] / n;
                // Frames within a segment are i.i.d., so 6 standard errors is generous.
                prop_assert!((mean - em.mean[d]).abs() < 6.0 * em.stddev[d] / n.sqrt());
            }
        }
    }
}
