use proptest::prelude::*;
use rand::seq::index::sample;
use rand::Rng;
use tom_core::dataset::{INPUT_LEN, PLANES};
use tom_core::gridworld::{Position, CELLS, GRID};
use tom_core::neural::{Mode, Tensor};
use tom_core::observer::{
    multihead_loss, predict_target, BatchLabels, LossWeights, ObserverModel, Predictions, Variant,
};
use tom_core::seed;

fn neg_log_softmax(row: &[f64], j: usize) -> f64 {
    let z: f64 = row.iter().map(|v| v.exp()).sum();
    z.ln() - row[j]
}

#[test]
fn random_logits_pick_the_target_a_quarter_of_the_time() {
    let mut rng = seed::rng(21);
    let trials = 1000;
    let mut hits = 0;
    for _ in 0..trials {
        let cells: Vec<usize> = sample(&mut rng, CELLS, 4).into_vec();
        let objects = [0, 1, 2, 3].map(|i| Position::from_index(cells[i]));
        let logits: Vec<f64> = (0..CELLS).map(|_| rng.random::<f64>()).collect();
        if predict_target(&logits, &objects) == 0 {
            hits += 1;
        }
    }
    let rate = hits as f64 / trials as f64;
    assert!((rate - 0.25).abs() <= 0.04, "{rate}");
}

#[test]
fn equal_logits_break_ties_by_cell_index() {
    let objects = [17, 3, 90, 4].map(Position::from_index);
    assert_eq!(predict_target(&[0.5f32; CELLS], &objects), 1);
}

fn random_case(n: usize, beliefs: bool, seed: u64) -> (Predictions<f64>, BatchLabels) {
    let mut rng = seed::rng(seed);
    let mut logits = |k: usize| (0..n * k).map(|_| rng.random_range(-4.0..4.0)).collect::<Vec<f64>>();
    let pred = Predictions {
        n,
        target: logits(CELLS),
        action: logits(9),
        state: logits(CELLS),
        belief: beliefs.then(|| logits(CELLS)),
    };
    let mut belief = Vec::new();
    for _ in 0..n {
        let raw: Vec<f32> = (0..CELLS).map(|_| if rng.random_bool(0.1) { rng.random() } else { 0.0 }).collect();
        let s: f32 = raw.iter().sum::<f32>().max(f32::MIN_POSITIVE);
        belief.extend(raw.iter().map(|v| v / s));
    }
    let labels = BatchLabels {
        target: (0..n).map(|_| rng.random_range(0..CELLS)).collect(),
        action: (0..n).map(|_| rng.random_range(0..9)).collect(),
        state: (0..n).map(|_| rng.random_range(0..CELLS)).collect(),
        belief,
    };
    (pred, labels)
}

proptest! {
    #[test]
    fn multihead_loss_is_the_weighted_sum(
        n in 1usize..5,
        s in any::<u64>(),
        w in prop::array::uniform4(0.0f64..3.0),
    ) {
        let weights = LossWeights { target: w[0], action: w[1], state: w[2], belief: w[3] };
        let (pred, labels) = random_case(n, true, s);
        let (loss, _) = multihead_loss(&pred, &labels, &weights).unwrap();

        let mut oracle = 0.0;
        for i in 0..n {
            oracle += w[0] * neg_log_softmax(pred.target_row(i), labels.target[i]);
            oracle += w[1] * neg_log_softmax(pred.action_row(i), labels.action[i]);
            oracle += w[2] * neg_log_softmax(pred.state_row(i), labels.state[i]);
            let row = pred.belief_row(i).unwrap();
            for j in 0..CELLS {
                let p = f64::from(labels.belief[i * CELLS + j]);
                if p > 0.0 {
                    oracle += w[3] * p * (p.ln() + neg_log_softmax(row, j));
                }
            }
        }
        oracle /= n as f64;
        prop_assert!((loss.total - oracle).abs() < 1e-6, "{} vs {}", loss.total, oracle);
    }
}

fn random_input(n: usize, seed: u64) -> Tensor<f32> {
    let mut rng = seed::rng(seed);
    let v = (0..n * INPUT_LEN).map(|_| if rng.random_bool(0.2) { 1.0 } else { 0.0 }).collect();
    Tensor::new(&[n, GRID, GRID, PLANES], v).unwrap()
}

#[test]
fn zero_belief_weight_matches_the_ablation() {
    let x = random_input(3, 5);
    let (_, labels) = random_case(3, true, 6);
    let mut with = ObserverModel::<f32>::new(Variant::Beliefs, 9);
    let mut without = ObserverModel::<f32>::new(Variant::NoBeliefs, 9);
    let w = LossWeights {
        belief: 0.0,
        ..LossWeights::default()
    };
    let a = multihead_loss(&with.forward(&x, Mode::Eval).unwrap(), &labels, &w).unwrap().0;
    let b = multihead_loss(&without.forward(&x, Mode::Eval).unwrap(), &labels, &w).unwrap().0;
    assert_eq!(a.total, b.total);
    assert_eq!(
        with.param_count() - without.param_count(),
        with.belief_head_param_count()
    );
    assert_eq!(without.belief_head_param_count(), 0);
}

#[test]
fn eval_forward_ignores_batch_order() {
    let x = random_input(4, 8);
    let rows: Vec<&[f32]> = x.values().chunks(INPUT_LEN).collect();
    let order = [2, 0, 3, 1];
    let shuffled: Vec<f32> = order.iter().flat_map(|&i| rows[i].to_vec()).collect();
    let y = Tensor::new(x.shape(), shuffled).unwrap();
    let mut model = ObserverModel::<f32>::new(Variant::Beliefs, 3);
    let a = model.forward(&x, Mode::Eval).unwrap();
    let b = model.forward(&y, Mode::Eval).unwrap();
    for (k, &i) in order.iter().enumerate() {
        for (u, v) in a.target_row(i).iter().zip(b.target_row(k)) {
            assert!((u - v).abs() <= 1e-5 * (1.0 + u.abs()));
        }
        for (u, v) in a.belief_row(i).unwrap().iter().zip(b.belief_row(k).unwrap()) {
            assert!((u - v).abs() <= 1e-5 * (1.0 + u.abs()));
        }
    }
    let again = model.forward(&x, Mode::Eval).unwrap();
    assert_eq!(again, a);
}
