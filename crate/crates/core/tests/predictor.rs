mod common;

use agvision::predictor::list_score_ids;
use agvision::{argmax_labels, predict, Error, PredictorSpec, ScoreMap, TileSample, TtaTransform};
use common::{c, d4_by_coordinates, random_scores, random_tile, set};

#[test]
fn constant_is_one_hot_everywhere() {
    let tile = random_tile(1, "t", 5, 7, 2, 0.3);
    for k in 0..9 {
        let map = predict(&PredictorSpec::Constant(c(k)), &tile).unwrap();
        for px in map.pixels() {
            for (j, v) in px.iter().enumerate() {
                assert_eq!(*v, if j == k { 1.0 } else { 0.0 });
            }
        }
    }
}

#[test]
fn oracle_argmax_is_a_true_label() {
    let tile = random_tile(2, "t", 9, 9, 3, 0.25);
    let map = predict(&PredictorSpec::Oracle, &tile).unwrap();
    map.validate().unwrap();
    let labels = argmax_labels(&map, tile.validity()).unwrap();
    for y in 0..9 {
        for x in 0..9 {
            let truth = tile.labels_at(y, x);
            if tile.is_valid(y, x) {
                assert!(truth.contains(labels.at(y, x)));
                assert_eq!(labels.at(y, x), truth.first().unwrap());
            } else {
                assert_eq!(map.pixel(y, x)[0], 1.0);
            }
        }
    }
}

#[test]
fn noisy_oracle_flip_rate() {
    let tile = random_tile(3, "noisy", 64, 64, 0, 0.0);
    let oracle = predict(&PredictorSpec::Oracle, &tile).unwrap();
    let noisy = predict(&PredictorSpec::NoisyOracle { p: 0.25, seed: Some(5) }, &tile).unwrap();
    let a = argmax_labels(&oracle, tile.validity()).unwrap();
    let b = argmax_labels(&noisy, tile.validity()).unwrap();
    let differ = a.labels().iter().zip(b.labels()).filter(|(x, y)| x != y).count();
    let fraction = differ as f64 / (64.0 * 64.0);
    let expected = 0.25 * 8.0 / 9.0;
    assert!((fraction - expected).abs() <= 0.03, "fraction {fraction}");
}

#[test]
fn noisy_oracle_is_keyed_by_seed_and_tile() {
    let tile = random_tile(4, "k", 16, 16, 2, 0.1);
    let spec = |seed| PredictorSpec::NoisyOracle { p: 0.5, seed: Some(seed) };
    assert_eq!(predict(&spec(1), &tile).unwrap(), predict(&spec(1), &tile).unwrap());
    assert_ne!(predict(&spec(1), &tile).unwrap(), predict(&spec(2), &tile).unwrap());
    let mut renamed = tile.clone();
    renamed.id = "other".into();
    assert_ne!(
        predict(&spec(1), &tile).unwrap().scores(),
        predict(&spec(1), &renamed).unwrap().scores()
    );
    let unseeded = PredictorSpec::NoisyOracle { p: 0.5, seed: None };
    assert!(matches!(predict(&unseeded, &tile), Err(Error::InvalidPredictor(_))));
}

#[test]
fn oracle_is_d4_equivariant() {
    let tile = random_tile(6, "eq", 5, 8, 3, 0.2);
    let base = predict(&PredictorSpec::Oracle, &tile).unwrap();
    for t in TtaTransform::d4() {
        let moved = agvision::apply_transform(&tile, t).unwrap();
        let direct = predict(&PredictorSpec::Oracle, &moved).unwrap();
        let (expected, h, w) = d4_by_coordinates(base.scores(), 9, 5, 8, t.rotation(), t.hflip());
        assert_eq!(direct.dims(), (h, w));
        assert_eq!(direct.scores(), &expected[..], "{t}");
    }
}

#[test]
fn score_file_layout_is_bit_exact() {
    let map = ScoreMap::one_hot("lay", 1, 2, &[c(0), c(8)]);
    let bytes = map.to_bytes();
    assert_eq!(&bytes[..4], b"AGSC");
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    assert_eq!([word(0), word(1), word(2), word(3)], [1, 1, 2, 9]);
    assert_eq!(bytes.len(), 20 + 2 * 9 * 4);
    let float = |i: usize| f32::from_le_bytes(bytes[20 + 4 * i..24 + 4 * i].try_into().unwrap());
    assert_eq!(float(0), 1.0);
    assert_eq!(float(9 + 8), 1.0);
    assert_eq!((0..18).map(float).sum::<f32>(), 2.0);
    assert_eq!(ScoreMap::from_bytes("lay", &bytes).unwrap(), map);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(ScoreMap::from_bytes("lay", &bad).is_err());
    assert!(ScoreMap::from_bytes("lay", &bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn rejects_unnormalized_scores() {
    assert!(matches!(
        ScoreMap::new("u", 1, 1, vec![0.5; 9]),
        Err(Error::InvalidScores { .. })
    ));
    let mut v = vec![0.0; 9];
    v[0] = f32::NAN;
    assert!(ScoreMap::new("n", 1, 1, v).is_err());
}

#[test]
fn external_reads_score_files() {
    let dir = tempfile::tempdir().unwrap();
    let tile = TileSample::new("ext", 3, 4, vec![[0; 4]; 12], vec![set(&[2]); 12], vec![true; 12]).unwrap();
    let map = random_scores(9, "ext", 3, 4);
    map.write_to_dir(dir.path()).unwrap();
    assert_eq!(list_score_ids(dir.path()).unwrap(), vec!["ext".to_string()]);
    let spec: PredictorSpec = format!("external:{}", dir.path().display()).parse().unwrap();
    assert_eq!(predict(&spec, &tile).unwrap(), map);

    let mut missing = tile.clone();
    missing.id = "gone".into();
    assert!(matches!(predict(&spec, &missing), Err(Error::MissingScoreFile(..))));

    let wrong = TileSample::uniform("ext", 4, 3, [0; 4]);
    assert!(matches!(predict(&spec, &wrong), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn spec_parsing() {
    for text in ["oracle", "constant:7", "noisy-oracle:0.25:9", "noisy-oracle:0.1"] {
        let spec: PredictorSpec = text.parse().unwrap();
        assert_eq!(spec.to_string(), text);
    }
    for text in ["constant:9", "noisy-oracle:1", "noisy-oracle:-0.1", "oracle:1", "external:", "magic"] {
        assert!(text.parse::<PredictorSpec>().is_err(), "{text}");
    }
}
