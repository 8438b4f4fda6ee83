use covshift::ici::{ici_classify, ici_predict_batch, sigma_hat, theoretical_constant};
use covshift::{Dataset, IciConfig, LabeledSample, Origin, StopReason, TreeIndex, TreeKind, WidthConstant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Eight points at the centres of the level-3 cells, labels 0 on the left
/// half and 1 on the right half.
fn eight_points() -> TreeIndex {
    let rows = (0..8)
        .map(|j| LabeledSample::new(vec![(2 * j + 1) as f64 / 16.0], u8::from(j >= 4), Origin::Target))
        .collect();
    TreeIndex::build(&Dataset::new(1, rows).unwrap(), 3, TreeKind::Regular).unwrap()
}

fn from_eighth() -> IciConfig<f64> {
    IciConfig {
        start_level: Some(3),
        ..IciConfig::with_constant(0.25)
    }
}

#[test]
fn hand_trace_stops_at_the_first_level() {
    // envelope of [3/4, 7/8) holds 11/16, 13/16 and 15/16, all labelled 1:
    // lower bound 1 - 0.5 / sqrt(3) > 1/2
    let tr = ici_classify(&eight_points(), &[0.8], &from_eighth()).unwrap();
    assert_eq!(tr.visited_levels(), [3]);
    assert_eq!(tr.stop, StopReason::OneSided);
    assert_eq!(tr.label, 1);
    assert_eq!(tr.estimate, 1.0);
    assert!((tr.lower - (1.0 - 0.5 / 3f64.sqrt())).abs() < 1e-15);
}

#[test]
fn hand_trace_walks_to_the_cap() {
    // level 3: labels {0,1,1}, level 2: {0,0,1,1,1,1}, level 1: all eight
    let tr = ici_classify(&eight_points(), &[0.5], &from_eighth()).unwrap();
    assert_eq!(tr.visited_levels(), [3, 2, 1]);
    assert_eq!(tr.stop, StopReason::Cap);
    let etas: Vec<f64> = tr.steps.iter().map(|s| s.eta).collect();
    assert_eq!(etas, [2.0 / 3.0, 4.0 / 6.0, 0.5]);
    let lower = (2.0 / 3.0 - 0.5 / 6f64.sqrt()).max(0.5 - 0.5 / 8f64.sqrt());
    let upper = (2.0 / 3.0 + 0.5 / 3f64.sqrt()).min(0.5 + 0.5 / 8f64.sqrt());
    assert!((tr.lower - lower).abs() < 1e-15);
    assert!((tr.upper - upper).abs() < 1e-15);
    assert_eq!(tr.estimate, 0.5);
    assert_eq!(tr.label, 1);
}

#[test]
fn theoretical_sigma_for_a_hundred_samples() {
    let c: f64 = theoretical_constant(100, 0.01);
    assert!((c - 3.535).abs() < 1e-3, "{c}");
    let rows = (0..100)
        .map(|i| LabeledSample::new(vec![if i < 49 { 0.1 } else { 0.9 }], 0, Origin::Target))
        .collect();
    let index = TreeIndex::build(&Dataset::new(1, rows).unwrap(), 2, TreeKind::Regular).unwrap();
    let cfg = IciConfig {
        width: WidthConstant::Theoretical,
        ..IciConfig::default()
    };
    let sigma = sigma_hat(&index, &[0.05], 2, &cfg).unwrap();
    assert!((sigma - c / 7.0).abs() < 1e-12);
    assert!((sigma - 0.505).abs() < 1e-3);
}

#[test]
fn batch_agrees_with_pointwise_walks() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = (0..1500)
        .map(|_| {
            let x = vec![rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let y = u8::from(rng.random::<f64>() < x[0]);
            LabeledSample::new(x, y, if rng.random_bool(0.1) { Origin::Target } else { Origin::Source(1) })
        })
        .collect();
    let data = Dataset::new(3, rows).unwrap();
    let index = TreeIndex::build(&data, 18, TreeKind::Cyclical).unwrap();
    let points: Vec<Vec<f64>> = (0..1000).map(|_| (0..3).map(|_| rng.random()).collect()).collect();
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    let cfg = IciConfig::default();
    let batch = ici_predict_batch(&index, &refs, &cfg).unwrap();
    let single: Vec<u8> = refs.iter().map(|x| ici_classify(&index, x, &cfg).unwrap().label).collect();
    assert_eq!(batch, single);
    assert_eq!(ici_predict_batch(&index, &refs, &cfg).unwrap(), batch);
    assert!(ici_predict_batch(&index, &[], &cfg).unwrap().is_empty());
}
