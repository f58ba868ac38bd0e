mod oracles;

use connseg::fuzzy::{connectedness_map, consolidate_candidates, AffinityParams, ConsolidationStatus};
use connseg::{BinaryMask, Shape3, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_case(rng: &mut ChaCha8Rng, max: usize) -> (Volume, BinaryMask, BinaryMask) {
    let s = oracles::random_shape(rng, max);
    let img = Volume::from_fn(s, |_, _, _| rng.random_range(0.0f32..10.0));
    let region = oracles::random_mask(rng, s, 0.75);
    let mut seeds = BinaryMask::zeros(s);
    let inside: Vec<usize> = (0..s.len()).filter(|i| region.data()[*i]).collect();
    if inside.is_empty() {
        seeds.data_mut()[0] = true;
        return random_case(rng, max);
    }
    for _ in 0..rng.random_range(1..=2) {
        seeds.data_mut()[inside[rng.random_range(0..inside.len())]] = true;
    }
    (img, seeds, region)
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "voxel {i}: {x} vs {y}");
    }
}

#[test]
fn matches_simple_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = AffinityParams { sigma: 3.0, theta: 0.5 };
    for _ in 0..60 {
        let (img, seeds, region) = random_case(&mut rng, 2);
        let got = connectedness_map(&img, &seeds, &region, &p).unwrap();
        assert_close(&got, &oracles::connectedness_paths(&img, &seeds, &region, p.sigma), 1e-12);
    }
}

#[test]
fn matches_threshold_reachability() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let p = AffinityParams { sigma: 2.0, theta: 0.5 };
    for _ in 0..60 {
        let (img, seeds, region) = random_case(&mut rng, 5);
        let got = connectedness_map(&img, &seeds, &region, &p).unwrap();
        assert_close(&got, &oracles::connectedness_thresholds(&img, &seeds, &region, p.sigma), 1e-12);
    }
}

#[test]
fn seeds_outside_region_are_rejected() {
    let s = Shape3::new(1, 1, 3);
    let img = Volume::filled(s, 0.0);
    let seeds = BinaryMask::new(s, vec![true, false, false]).unwrap();
    let region = BinaryMask::new(s, vec![false, true, true]).unwrap();
    assert!(connectedness_map(&img, &seeds, &region, &AffinityParams::default()).is_err());
    assert!(connectedness_map(&img, &BinaryMask::zeros(s), &region, &AffinityParams::default()).is_err());
}

#[test]
fn consolidation_grows_along_uniform_lumen_only() {
    // 1x1x6 row: uniform lumen then a jump to tissue
    let s = Shape3::new(1, 1, 6);
    let img = Volume::new(s, [1.0; 3], vec![0.0, 0.0, 0.0, 0.0, 80.0, 80.0]).unwrap();
    let lung = BinaryMask::from_fn(s, |_, _, _| true);
    let mut cand = BinaryMask::zeros(s);
    cand.set(0, 0, 0, true);
    let (out, status) = consolidate_candidates(&cand, &img, &lung, &AffinityParams::default()).unwrap();
    assert_eq!(out.data(), &[true, true, true, true, false, false]);
    assert_eq!(status, ConsolidationStatus::Grown { added: 3 });
    let (out, status) = consolidate_candidates(&BinaryMask::zeros(s), &img, &lung, &AffinityParams::default()).unwrap();
    assert_eq!(out.count(), 0);
    assert_eq!(status, ConsolidationStatus::EmptyCandidates);
}
