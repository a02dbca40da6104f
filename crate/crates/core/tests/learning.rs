use passlab_core::beamforming::{BeamformingSolution, PowerConfig};
use passlab_core::channel::{BlockageModel, RadioConfig};
use passlab_core::codebook::{generate_grid_codebook, Codebook, GridPattern, GridSpec, JointMode, DEFAULT_JOINT_CAP};
use passlab_core::geometry::SystemGeometry;
use passlab_core::predictor::{evaluate, train, NearestCentroid, RandomPredictor, Sample, Split, TrainConfig, TrainedPredictor};
use passlab_core::scene::{draw_scene, generate_dataset, Scenario};
use passlab_core::tokens::{CameraModel, TokenDims};

fn scenario(users: usize) -> Scenario {
    let geometry = SystemGeometry::new(4, 16, 30.0, 12.0, 10.0, 3.0, 0.01).unwrap();
    Scenario {
        camera: CameraModel::behind_region(30.0, 12.0),
        geometry,
        radio: RadioConfig::new(15e9, 1.4).unwrap(),
        power: PowerConfig::uniform(0.1, 1e-11, users).unwrap(),
        blockage: BlockageModel::exponential(0.01).unwrap(),
        dims: TokenDims::default(),
        slot: 0.05,
        max_speed: 1.5,
        horizon: 0,
        top_s: 3,
        joint_mode: JointMode::Union,
        joint_cap: DEFAULT_JOINT_CAP,
    }
}

fn codebook(s: &Scenario) -> Codebook {
    generate_grid_codebook(&s.geometry, &GridSpec::new(16, GridPattern::UniformOffset, 0.01)).unwrap()
}

fn split(data: &[Sample], split: Split) -> Vec<Sample> {
    data.iter().filter(|d| d.split == split).cloned().collect()
}

#[test]
fn trained_predictor_beats_chance_and_baselines() {
    let s = scenario(1);
    let cb = codebook(&s);
    let data = generate_dataset(&s, &cb, 42, 3000).unwrap();
    let (train_set, test_set) = (split(&data, Split::Train), split(&data, Split::Test));
    let (net, history) = train(&train_set, &s.dims, 16, s.rank(), &TrainConfig::default(), 42).unwrap();
    assert!(history.last().unwrap().total < 0.5 * history[0].total);

    let trained = evaluate(&TrainedPredictor { network: net }, &test_set, &[1, 3]).unwrap();
    let random = evaluate(&RandomPredictor { classes: 16, seed: 1 }, &test_set, &[1, 3]).unwrap();
    let centroid = evaluate(&NearestCentroid::fit(&train_set, 16).unwrap(), &test_set, &[1, 3]).unwrap();
    assert!(trained.top_s[0].1 >= 0.25, "{trained:?}");
    assert!(trained.top_s[0].1 > centroid.top_s[0].1, "{trained:?} vs {centroid:?}");
    assert!(trained.sum_rate_ratio > random.sum_rate_ratio);
}

#[test]
fn multi_user_labels_re_evaluate_exactly() {
    let s = scenario(3);
    let cb = codebook(&s);
    for sample in generate_dataset(&s, &cb, 5, 30).unwrap() {
        let scene = draw_scene(&s, 5, sample.id);
        let h = scene.context.effective(cb.get(sample.layout).unwrap()).unwrap();
        let rate = BeamformingSolution::mmse(&h, &s.power).unwrap().sum_rate;
        assert!((rate - sample.sum_rate).abs() < 1e-9);
        let best = sample.codeword_sum_rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(sample.sum_rate <= best + 1e-12);
    }
}
