mod common;

use agvision::rng::CounterRng;
use agvision::{argmax_labels, ensemble_scores, Error, LabelRaster, ScoreMap};
use common::{c, random_scores};

fn one_hot(id: &str, k: usize, n: usize) -> ScoreMap {
    ScoreMap::one_hot(id, 1, n, &vec![c(k); n])
}

/// Score map whose entries are multiples of 1/8 so exact ties are common.
fn tied_scores(seed: u64, h: usize, w: usize) -> ScoreMap {
    let mut rng = CounterRng::new(seed, 99);
    let mut scores = Vec::new();
    for _ in 0..h * w {
        let mut px = [0f32; 9];
        for _ in 0..8 {
            px[rng.below(9) as usize] += 0.125;
        }
        scores.extend(px);
    }
    ScoreMap::new("tie", h, w, scores).unwrap()
}

#[test]
fn weighted_one_hots() {
    let a = one_hot("t", 1, 3);
    let b = one_hot("t", 2, 3);
    let out = ensemble_scores(&[a.clone(), b.clone()], &[0.75, 0.25]).unwrap();
    for px in out.pixels() {
        assert_eq!(px[1], 0.75);
        assert_eq!(px[2], 0.25);
    }
    assert!(argmax_labels(&out, &[true; 3]).unwrap().labels().iter().all(|l| *l == c(1)));
    assert_eq!(ensemble_scores(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap(), a);
    let even = ensemble_scores(&[a, b], &[1.0, 1.0]).unwrap();
    assert!(argmax_labels(&even, &[true; 3]).unwrap().labels().iter().all(|l| *l == c(1)));
}

#[test]
fn copies_average_to_themselves() {
    for seed in 0..20 {
        let map = random_scores(seed, "i", 4, 5);
        let k = 1 + seed as usize % 5;
        let maps = vec![map.clone(); k];
        let weights: Vec<f64> = (0..k).map(|i| 0.3 + i as f64).collect();
        let out = ensemble_scores(&maps, &weights).unwrap();
        for (a, b) in out.scores().iter().zip(map.scores()) {
            assert!((a - b).abs() <= 1e-7);
        }
    }
}

#[test]
fn hundred_pairs_convex_and_scale_invariant() {
    let mut rng = CounterRng::new(5, 5);
    for pair in 0..100 {
        let a = random_scores(2 * pair, "p", 3, 4);
        let b = random_scores(2 * pair + 1, "p", 3, 4);
        let w = [rng.next_f64() + 0.01, rng.next_f64() + 0.01];
        let out = ensemble_scores(&[a.clone(), b.clone()], &w).unwrap();
        for ((o, x), y) in out.scores().iter().zip(a.scores()).zip(b.scores()) {
            assert!(x.min(*y) <= *o && *o <= x.max(*y));
        }
        let labels = argmax_labels(&out, &[true; 12]).unwrap();
        for lambda in [0.001, 0.5, 3.0, 7.1, 1e6] {
            let scaled = ensemble_scores(&[a.clone(), b.clone()], &[w[0] * lambda, w[1] * lambda]).unwrap();
            assert_eq!(argmax_labels(&scaled, &[true; 12]).unwrap(), labels);
            for (p, q) in scaled.scores().iter().zip(out.scores()) {
                assert!((p - q).abs() <= f32::EPSILON);
            }
        }
        for lambda in [0.25, 2.0, 1024.0] {
            let scaled = ensemble_scores(&[a.clone(), b.clone()], &[w[0] * lambda, w[1] * lambda]).unwrap();
            assert_eq!(scaled, out);
        }
    }
}

#[test]
fn argmax_relabel_equivariance() {
    let mut rng = CounterRng::new(8, 8);
    for seed in 0..30 {
        let map = tied_scores(seed, 4, 4);
        let mut perm: Vec<usize> = (0..9).collect();
        rng.shuffle(&mut perm);
        let mut moved = vec![0f32; map.scores().len()];
        for (p, px) in map.pixels().enumerate() {
            for (k, v) in px.iter().enumerate() {
                moved[p * 9 + perm[k]] = *v;
            }
        }
        let moved = ScoreMap::new("tie", 4, 4, moved).unwrap();
        let valid = vec![true; 16];
        let got = argmax_labels(&moved, &valid).unwrap();
        for (p, px) in map.pixels().enumerate() {
            let top = px.iter().cloned().fold(f32::MIN, f32::max);
            let expected = (0..9).filter(|k| px[*k] == top).map(|k| perm[k]).min().unwrap();
            assert_eq!(got.labels()[p], c(expected));
        }
    }
}

#[test]
fn tie_breaks_and_validity() {
    let uniform = ScoreMap::new("u", 2, 2, vec![1.0 / 9.0; 36]).unwrap();
    let labels = argmax_labels(&uniform, &[true; 4]).unwrap();
    assert!(labels.labels().iter().all(|l| *l == c(0)));

    let mut px = vec![0f32; 9];
    px[3] = 0.5;
    px[7] = 0.5;
    let tie = ScoreMap::new("t", 1, 2, [px.clone(), px].concat()).unwrap();
    let labels = argmax_labels(&tie, &[true, false]).unwrap();
    assert_eq!(labels.labels(), &[c(3), c(0)]);
}

#[test]
fn input_errors() {
    let a = one_hot("a", 1, 2);
    assert!(matches!(
        ensemble_scores(&[a.clone(), one_hot("a", 1, 3)], &[1.0, 1.0]),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(matches!(
        ensemble_scores(&[a.clone(), one_hot("b", 1, 2)], &[1.0, 1.0]),
        Err(Error::TileIdMismatch(..))
    ));
    assert!(matches!(
        ensemble_scores(&[a.clone(), a.clone()], &[0.0, 0.0]),
        Err(Error::AllZeroWeights)
    ));
    assert!(ensemble_scores(&[a.clone(), a.clone()], &[1.0, -1.0]).is_err());
    assert!(ensemble_scores(std::slice::from_ref(&a), &[1.0, 1.0]).is_err());
    assert!(argmax_labels(&a, &[true]).is_err());
}

#[test]
fn label_png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let raster = LabelRaster::new("r", 3, 3, (0..9).map(c).collect()).unwrap();
    let path = dir.path().join("r.png");
    raster.write_png(&path).unwrap();
    assert_eq!(LabelRaster::read_png(&path, "r").unwrap(), raster);
    let decoded = image::open(&path).unwrap().to_luma8();
    assert_eq!(decoded.into_raw(), (0..9u8).collect::<Vec<_>>());

    image::GrayImage::from_raw(1, 1, vec![9]).unwrap().save(&path).unwrap();
    assert!(matches!(LabelRaster::read_png(&path, "r"), Err(Error::CorruptRaster { .. })));
}
