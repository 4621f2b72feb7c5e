use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semcam::space::{
    affinity_propagation, cluster_to_target, correlation_matrix, median_preference, mds_embed, mirror_scores, ApOptions,
    PreferenceSweep, ScoreMatrix,
};

/// Net similarity of an exemplar set under nearest-exemplar assignment.
fn net_similarity(s: &DMatrix<f64>, pref: f64, exemplars: &[usize]) -> f64 {
    let n = s.nrows();
    let mut total = pref * exemplars.len() as f64;
    for i in (0..n).filter(|i| !exemplars.contains(i)) {
        total += exemplars.iter().map(|&e| s[(i, e)]).fold(f64::NEG_INFINITY, f64::max);
    }
    total
}

fn brute_force_best(s: &DMatrix<f64>, pref: f64) -> f64 {
    let n = s.nrows();
    (1u32..(1 << n))
        .map(|mask| {
            let ex: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            net_similarity(s, pref, &ex)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn random_instance(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let k = rng.random_range(2..=6);
    let pts: Vec<[f64; 2]> = (0..k).map(|_| [rng.random::<f64>() * 4.0, rng.random::<f64>() * 4.0]).collect();
    DMatrix::from_fn(k, k, |i, j| -((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)))
}

#[test]
fn four_node_blocks_match_exhaustive_optimum() {
    let s = DMatrix::from_fn(4, 4, |i, j| if i / 2 == j / 2 { 0.8 } else { -0.8 });
    let pref = median_preference(&s);
    let c = affinity_propagation(&s, pref, &ApOptions::default()).unwrap();
    assert!(c.converged);
    assert_eq!(c.partition(), vec![vec![0, 1], vec![2, 3]]);
    assert!((net_similarity(&s, pref, &c.exemplars) - brute_force_best(&s, pref)).abs() < 1e-12);
}

#[test]
fn exemplars_belong_to_their_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let s = random_instance(&mut rng);
        let c = affinity_propagation(&s, median_preference(&s), &ApOptions::default()).unwrap();
        for (ci, &e) in c.exemplars.iter().enumerate() {
            assert_eq!(c.labels[e], ci);
        }
        assert!(c.labels.iter().all(|&l| l < c.n_clusters()));
    }
}

#[test]
fn median_preference_instances_mostly_reach_exhaustive_optimum() {
    // message passing is a heuristic; this tracks the agreement rate
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut converged, mut agree) = (0, 0);
    for _ in 0..100 {
        let s = random_instance(&mut rng);
        let pref = median_preference(&s);
        let c = affinity_propagation(&s, pref, &ApOptions::default()).unwrap();
        if !c.converged {
            continue;
        }
        converged += 1;
        if (net_similarity(&s, pref, &c.exemplars) - brute_force_best(&s, pref)).abs() < 1e-9 {
            agree += 1;
        }
    }
    assert!(converged >= 90, "converged {converged}");
    assert!(agree as f64 >= 0.95 * converged as f64, "{agree}/{converged}");
}

#[test]
fn preference_sweep_lands_on_target() {
    let sizes = [4, 6, 1, 1, 1, 1, 1];
    let mut block = Vec::new();
    for (b, &n) in sizes.iter().enumerate() {
        block.extend(std::iter::repeat_n(b, n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise: Vec<f64> = (0..225).map(|_| rng.random::<f64>() * 0.05).collect();
    let s = DMatrix::from_fn(15, 15, |i, j| {
        let jitter = noise[i.min(j) * 15 + i.max(j)];
        if block[i] == block[j] {
            0.8 + jitter
        } else {
            -0.2 + jitter
        }
    });
    let c = cluster_to_target(&s, 7, &ApOptions::default(), &PreferenceSweep::default()).unwrap();
    assert_eq!(c.n_clusters(), 7);
    for i in 0..15 {
        for j in 0..15 {
            assert_eq!(c.labels[i] == c.labels[j], block[i] == block[j]);
        }
    }
}

#[test]
fn planted_configuration_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pts: Vec<[f64; 3]> = (0..14).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let d = DMatrix::from_fn(14, 14, |i, j| {
        (0..3).map(|k| (pts[i][k] - pts[j][k]).powi(2)).sum::<f64>().sqrt()
    });
    let e = mds_embed(&d, 3, 4).unwrap();
    assert!(e.normalized_stress < 1e-6, "{}", e.normalized_stress);
    for i in 0..14 {
        for j in 0..14 {
            assert!((e.distance(i, j) - d[(i, j)]).abs() < 1e-3);
        }
    }
}

#[test]
fn mirrored_pairs_are_exactly_anticorrelated() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let values = DMatrix::from_fn(50, 7, |_, _| rng.random::<f64>() * 10.0 - 5.0);
    let s = ScoreMatrix::new(
        (0..50).map(|i| format!("c{i}")).collect(),
        (0..7).map(|j| format!("d{j}")).collect(),
        values,
    )
    .unwrap();
    let c = correlation_matrix(&mirror_scores(&s)).unwrap();
    for j in 0..7 {
        assert_eq!(c.values[(j, j + 7)], -1.0);
    }
}
