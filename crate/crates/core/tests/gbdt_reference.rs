use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use windcorr::gbdt::{fit_gb, predict_gb, GbConfig, GbEnsemble, Node, Tree};

/// Straightforward exhaustive-search tree used as the reference.
#[derive(Debug)]
enum RefTree {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<RefTree>,
        right: Box<RefTree>,
    },
}

impl RefTree {
    fn predict(&self, row: &[f64]) -> f64 {
        match self {
            RefTree::Leaf(v) => *v,
            RefTree::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }
}

fn sse(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

fn ref_tree(rows: &[Vec<f64>], resid: &[f64], idx: &[usize], depth: usize, max_depth: usize) -> RefTree {
    let vals: Vec<f64> = idx.iter().map(|&i| resid[i]).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let parent = sse(&vals);
    if depth == max_depth || idx.len() < 2 || parent / idx.len() as f64 <= f64::EPSILON {
        return RefTree::Leaf(mean);
    }
    let tol = 1e-10 * parent;
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..rows[0].len() {
        let mut uniq: Vec<f64> = idx.iter().map(|&i| rows[i][f]).collect();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();
        for w in uniq.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][f] <= t);
            let lv: Vec<f64> = l.iter().map(|&i| resid[i]).collect();
            let rv: Vec<f64> = r.iter().map(|&i| resid[i]).collect();
            let child = sse(&lv) + sse(&rv);
            let better = match best {
                None => parent - child > tol,
                Some((b, _, _)) => child < b - tol,
            };
            if better {
                best = Some((child, f, t));
            }
        }
    }
    match best {
        None => RefTree::Leaf(mean),
        Some((_, f, t)) => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][f] <= t);
            RefTree::Split {
                feature: f,
                threshold: t,
                left: Box::new(ref_tree(rows, resid, &l, depth + 1, max_depth)),
                right: Box::new(ref_tree(rows, resid, &r, depth + 1, max_depth)),
            }
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

fn same_tree(t: &Tree, i: usize, r: &RefTree) -> Result<(), String> {
    match (&t.nodes[i], r) {
        (Node::Leaf { value }, RefTree::Leaf(v)) if close(*value, *v) => Ok(()),
        (
            Node::Split {
                feature,
                threshold,
                left,
                right,
            },
            RefTree::Split {
                feature: rf,
                threshold: rt,
                left: rl,
                right: rr,
            },
        ) if feature == rf && close(*threshold, *rt) => {
            same_tree(t, *left, rl)?;
            same_tree(t, *right, rr)
        }
        (a, b) => Err(format!("{a:?} vs {b:?}")),
    }
}

fn random_dataset(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = rng.random_range(2..=50);
    let d = rng.random_range(1..=4);
    // coarse grids on some features so duplicate values and tied gains occur
    let coarse: Vec<bool> = (0..d).map(|_| rng.random_bool(0.5)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|j| {
                    if coarse[j] {
                        rng.random_range(0..4) as f64
                    } else {
                        rng.random_range(-3.0..3.0)
                    }
                })
                .collect()
        })
        .collect();
    let y = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    (rows, y)
}

fn to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), rows[0].len()), |(i, j)| rows[i][j])
}

#[test]
fn matches_exhaustive_reference_split_for_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..150 {
        let (rows, y) = random_dataset(&mut rng);
        let cfg = GbConfig {
            n_stages: rng.random_range(1..=3),
            max_depth: rng.random_range(1..=2),
            learning_rate: rng.random_range(0.05..1.0),
            ..GbConfig::default()
        };
        let (ens, cached) = fit_gb(to_array(&rows).view(), &y, &cfg).unwrap();

        let base = y.iter().sum::<f64>() / y.len() as f64;
        assert!(close(ens.base_prediction, base), "case {case}");
        let mut pred = vec![base; y.len()];
        let idx: Vec<usize> = (0..y.len()).collect();
        for (s, tree) in ens.trees.iter().enumerate() {
            let resid: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
            let reference = ref_tree(&rows, &resid, &idx, 0, cfg.max_depth);
            if let Err(e) = same_tree(tree, 0, &reference) {
                panic!("case {case} stage {s}: {e}");
            }
            for (p, row) in pred.iter_mut().zip(&rows) {
                *p += cfg.learning_rate * reference.predict(row);
            }
        }
        for (a, b) in cached.iter().zip(&pred) {
            assert!(close(*a, *b), "case {case}: {a} vs {b}");
        }
    }
}

#[test]
fn stump_matches_brute_force_sse() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let xs: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..10.0)).collect();
        let ys: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let cfg = GbConfig {
            n_stages: 1,
            max_depth: 1,
            learning_rate: 1.0,
            ..GbConfig::default()
        };
        let x = Array2::from_shape_fn((4, 1), |(i, _)| xs[i]);
        let (ens, _) = fit_gb(x.view(), &ys, &cfg).unwrap();

        // every threshold between sorted points
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut best = (f64::INFINITY, f64::NAN);
        for w in sorted.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let l: Vec<f64> = (0..4).filter(|&i| xs[i] <= t).map(|i| ys[i]).collect();
            let r: Vec<f64> = (0..4).filter(|&i| xs[i] > t).map(|i| ys[i]).collect();
            let total = sse(&l) + sse(&r);
            if total < best.0 {
                best = (total, t);
            }
        }
        match &ens.trees[0].nodes[0] {
            Node::Split { threshold, .. } => assert!(close(*threshold, best.1), "{threshold} vs {}", best.1),
            leaf => panic!("expected a split, got {leaf:?}"),
        }
    }
}

#[test]
fn interpolates_noiseless_data_at_unit_rate() {
    let x = Array2::from_shape_fn((30, 2), |(i, j)| if j == 0 { i as f64 } else { ((i * 7) % 5) as f64 });
    let y: Vec<f64> = (0..30).map(|i| (0.3 * i as f64).sin() + 0.1 * ((i * 7) % 5) as f64).collect();
    let cfg = GbConfig {
        n_stages: 200,
        learning_rate: 1.0,
        ..GbConfig::default()
    };
    let (ens, _) = fit_gb(x.view(), &y, &cfg).unwrap();
    let pred = predict_gb(&ens, x.view()).unwrap();
    let rmse = (pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let std = (y.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    assert!(rmse < 1e-6 * std, "rmse {rmse}");
}

fn mse_after(ens: &GbEnsemble, stages: usize, x: &Array2<f64>, y: &[f64]) -> f64 {
    let truncated = GbEnsemble {
        trees: ens.trees[..stages].to_vec(),
        ..ens.clone()
    };
    let p = predict_gb(&truncated, x.view()).unwrap();
    p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}

#[test]
fn training_loss_never_increases_and_depth_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Array2::from_shape_fn((300, 10), |_| rng.random_range(0.0..1.0));
    let y: Vec<f64> = (0..300)
        .map(|i| x[[i, 0]] * 2.0 - x[[i, 3]] * x[[i, 5]] + 0.1 * rng.random_range(-1.0..1.0))
        .collect();
    let cfg = GbConfig::default();
    let (ens, cached) = fit_gb(x.view(), &y, &cfg).unwrap();
    assert_eq!(ens.trees.len(), 100);
    let mut prev = f64::INFINITY;
    for s in 0..=ens.trees.len() {
        let m = mse_after(&ens, s, &x, &y);
        assert!(m <= prev * (1.0 + 1e-12), "stage {s}: {m} > {prev}");
        prev = m;
    }
    for t in &ens.trees {
        assert!(t.depth() <= cfg.max_depth);
        assert!(t.leaves().all(f64::is_finite));
    }
    // cached training predictions are the prediction path bit for bit
    assert_eq!(predict_gb(&ens, x.view()).unwrap(), cached);
}
