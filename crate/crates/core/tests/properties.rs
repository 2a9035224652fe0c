use coopfl_core::coop::{cooperation_level, risk_level, CoopConfig};
use coopfl_core::nn::{kl_divergence, softmax, weighted_mean, ParamVector};
use coopfl_core::rng::{stream, Purpose};
use coopfl_core::strategies::{cloud_models, cluster_aggregate, map_cooperation, ClusterMember, Distance};
use proptest::prelude::*;

fn logits(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn kl_is_non_negative(
        (a, b) in (1usize..6).prop_flat_map(|n| (logits(n), logits(n))),
        t in 0.05f64..10.0,
    ) {
        let p = softmax(&a, t);
        let q = softmax(&b, t);
        prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }
}

proptest! {
    #[test]
    fn softmax_ignores_constant_shift(a in logits(5), shift in -50.0f64..50.0) {
        let p = softmax(&a, 1.0);
        let shifted: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let q = softmax(&shifted, 1.0);
        for (x, y) in p.probs().iter().zip(q.probs()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cooperation_is_bounded_and_monotone(
        kl in -1.0f64..10.0, dk in 0.0f64..5.0,
        val in -0.5f64..1.5, dv in 0.0f64..1.0,
        dev in -0.5f64..1.5, dd in 0.0f64..1.0,
        cap in 1e-3f64..5.0,
    ) {
        let cfg = CoopConfig::default();
        let c = cooperation_level(kl, val, dev, cap, &cfg);
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!(cooperation_level(kl + dk, val, dev, cap, &cfg) <= c);
        prop_assert!(cooperation_level(kl, val + dv, dev, cap, &cfg) >= c);
        prop_assert!(cooperation_level(kl, val, dev + dd, cap, &cfg) >= c);
    }

    #[test]
    fn risk_ignores_client_order(kls in prop::collection::vec(0.0f64..2.0, 1..12), theta in 0.0f64..2.0, rot in 0usize..12) {
        let mut shuffled = kls.clone();
        shuffled.reverse();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        let a = risk_level(&kls, theta).unwrap();
        prop_assert_eq!(a, risk_level(&shuffled, theta).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn cloud_models_stay_in_the_envelope(
        models in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..6),
        raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 6), 6),
    ) {
        let n = models.len();
        let params: Vec<ParamVector> = models.iter().map(|m| ParamVector::flat(m.clone())).collect();
        let refs: Vec<&ParamVector> = params.iter().collect();
        let mixing: Vec<Vec<f64>> = raw[..n]
            .iter()
            .map(|row| {
                let row = &row[..n];
                let total: f64 = row.iter().sum::<f64>() + 1e-3;
                let mut r: Vec<f64> = row.iter().map(|v| v / total).collect();
                let rest = 1.0 - r.iter().sum::<f64>();
                r[0] += rest;
                r
            })
            .collect();
        let clouds = cloud_models(&refs, &mixing).unwrap();
        for cloud in &clouds {
            for k in 0..3 {
                let lo = models.iter().map(|m| m[k]).fold(f64::INFINITY, f64::min);
                let hi = models.iter().map(|m| m[k]).fold(f64::NEG_INFINITY, f64::max);
                let v = cloud.values()[k];
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn weighted_mean_matches_scalar_loop(
        rows in prop::collection::vec((prop::collection::vec(-10.0f64..10.0, 4), 0.01f64..5.0), 1..8),
    ) {
        let params: Vec<ParamVector> = rows.iter().map(|(v, _)| ParamVector::flat(v.clone())).collect();
        let items: Vec<(&ParamVector, f64)> = params.iter().zip(&rows).map(|(p, (_, w))| (p, *w)).collect();
        let got = weighted_mean(&items).unwrap();
        let total: f64 = rows.iter().map(|(_, w)| w).sum();
        for k in 0..4 {
            let mut acc = 0.0;
            for (v, w) in &rows {
                acc += v[k] * w;
            }
            prop_assert!((got.values()[k] - acc / total).abs() <= 1e-12 * (1.0 + acc.abs()));
        }
        if rows.len() == 1 {
            prop_assert_eq!(got.values(), rows[0].0.as_slice());
        }
    }

    #[test]
    fn cooperation_map_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, n in 1usize..10, layers in 1usize..5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let l = map_cooperation(lo, n, layers, 10).unwrap();
        let h = map_cooperation(hi, n, layers, 10).unwrap();
        prop_assert!(l.clusters >= h.clusters && h.clusters >= 1 && l.clusters <= n);
        prop_assert!(l.public_layers.iter().filter(|x| **x).count() <= h.public_layers.iter().filter(|x| **x).count());
        prop_assert!(l.adaptation_steps >= h.adaptation_steps);
        for row in &h.mixing {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clustering_is_permutation_equivariant(
        offsets in prop::collection::vec((-0.2f64..0.2, -0.2f64..0.2), 6),
        order in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
        seed in any::<u64>(),
    ) {
        // Two well separated groups of update directions.
        let deltas: Vec<ParamVector> = offsets
            .iter()
            .enumerate()
            .map(|(i, (dx, dy))| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                ParamVector::flat(vec![sign + dx, 0.3 * sign + dy])
            })
            .collect();
        let members = |idx: &[usize]| -> Vec<usize> {
            let m: Vec<ClusterMember> = idx.iter().map(|&i| ClusterMember { delta: &deltas[i], model: &deltas[i], weight: 1.0 }).collect();
            cluster_aggregate(&m, 2, Distance::Cosine, 50, &mut stream(seed, Purpose::Server, &[])).unwrap().assignment
        };
        let base = members(&(0..6).collect::<Vec<_>>());
        let permuted = members(&order);
        for a in 0..6 {
            for b in 0..6 {
                let same_base = base[order[a]] == base[order[b]];
                prop_assert_eq!(same_base, permuted[a] == permuted[b]);
            }
        }
    }
}
