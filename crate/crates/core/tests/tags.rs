use homwb::interference::GateWindow;
use homwb::montecarlo::{simulate, simulate_with, Channel, ExperimentConfig, SourceSpec, TagStream, TimeTagRecord};
use homwb::tags::{
    coincidence_map, expected_background, expected_background_curve, gate_and_project, shifted_reference,
    CoincidenceHistogram, CoincidenceMapBuilder, Correlator,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

fn rec(ch: Channel, t: u64) -> TimeTagRecord {
    TimeTagRecord::new(ch, t)
}

#[test]
fn row_sums_reproduce_gated_singles() {
    // B on a 10 ns comb, A at 3 ns past a comb tooth: every A sees 2k partners.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut recs = Vec::new();
    for k in 0..200u64 {
        recs.push(rec(Channel::Clk, k * 1_000_000));
    }
    for j in 0..20_000u64 {
        recs.push(rec(Channel::B, j * 10_000));
    }
    for _ in 0..300 {
        let tooth = rng.random_range(100..19_900u64);
        recs.push(rec(Channel::A, tooth * 10_000 + 3_000));
    }
    let s = TagStream::from_unsorted(recs);
    let k = 50;
    let map = coincidence_map(&s, 1.0, 20.0, 10.0, 0.5).unwrap();
    assert_eq!(map.cols(), 2 * k + 1);
    for r in 0..map.rows() {
        let total: u64 = map.row(r).iter().sum();
        assert_eq!(total, 2 * k as u64 * map.singles_a()[r], "row {r}");
    }
    assert_eq!(map.singles_a().iter().sum::<u64>(), 300);
}

#[test]
fn averaged_reference_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let poisson = Poisson::new(100.0).unwrap();
    let edges: Vec<f64> = (-5000..=5001).map(|i| (i as f64 - 0.5) * 5.0).collect();
    let counts: Vec<u64> = (0..10001).map(|_| poisson.sample(&mut rng) as u64).collect();
    let h = CoincidenceHistogram::from_counts(edges, &counts).unwrap();
    let r = shifted_reference(&h, 5.0, 2.5, -5..=4).unwrap();
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let ratio = var(r.raw()) / var(h.raw());
    assert!(r.len() > 900);
    assert!((0.08..0.12).contains(&ratio), "{ratio}");
    let mean_err2 = r.raw_errors().iter().map(|e| e * e).sum::<f64>() / r.len() as f64;
    assert!((mean_err2 - 10.0).abs() < 0.5, "{mean_err2}");
}

#[test]
fn operating_point_background_level() {
    assert!((expected_background(100.0, 100.0, 1.0, 5.0, 3600.0).unwrap() - 0.18).abs() < 1e-12);
}

#[test]
fn dark_background_curve_matches_simulated_darks() {
    let mut cfg = ExperimentConfig::pulsed(20.0, SourceSpec::new(0.0, 0.0), SourceSpec::new(0.0, 0.0), 1.0, 77);
    cfg.detectors.dark_rate = [2000.0, 3000.0];
    let mut b = CoincidenceMapBuilder::new(5.0, 50.0, 50.0, 10.0).unwrap();
    simulate_with(&cfg, |chunk| {
        b.push(chunk);
        Ok(())
    })
    .unwrap();
    let map = b.finish().unwrap();
    let gates = [GateWindow::new(1000.0, 2000.0).unwrap()];
    let measured = gate_and_project(&map, &gates).unwrap();
    let expected = expected_background_curve(&map, &gates, 2000.0, 3000.0).unwrap();
    let total_m: f64 = measured.raw().iter().sum();
    let total_e: f64 = expected.iter().sum();
    let flat = expected_background(2000.0, 3000.0, 0.2, 50.0, 20.0).unwrap() * measured.len() as f64;
    assert!((total_m - total_e).abs() < 4.0 * total_e.sqrt(), "{total_m} vs {total_e}");
    assert!((total_e - flat).abs() < 4.0 * flat.sqrt(), "{total_e} vs {flat}");
}

#[test]
fn map_projection_equals_correlator_when_ungated() {
    let cfg = ExperimentConfig::pulsed(0.2, SourceSpec::new(0.3, 0.0), SourceSpec::new(0.05, 0.0), 0.5, 9);
    let s = simulate(&cfg).unwrap();
    let map = coincidence_map(&s, 5.0, 100.0, 10.0, 6.0).unwrap();
    let all = gate_and_project(&map, &[GateWindow::new(0.0, 5000.0).unwrap()]).unwrap();
    let mut c = Correlator::new(6000.0, 10.0).unwrap();
    c.push(s.records());
    assert_eq!(all.raw(), c.histogram().raw());
}

fn random_stream(seed: u64, n: usize) -> TagStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut recs: Vec<TimeTagRecord> = (0..20).map(|k| rec(Channel::Clk, k * 1_000_000)).collect();
    for _ in 0..n {
        let ch = if rng.random::<bool>() { Channel::A } else { Channel::B };
        recs.push(rec(ch, rng.random_range(0..20_000_000)));
    }
    TagStream::from_unsorted(recs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn row_sums_match_brute_force(seed in any::<u64>(), n in 10usize..300) {
        let s = random_stream(seed, n);
        let map = coincidence_map(&s, 1.0, 50.0, 20.0, 2.0).unwrap();
        let a = s.timestamps(Channel::A);
        let b = s.timestamps(Channel::B);
        let mut expect = vec![0u64; map.rows()];
        for ta in &a {
            let row = ((ta % 1_000_000) / 50_000) as usize;
            expect[row] += b.iter().filter(|tb| (**tb as i64 - *ta as i64).abs() <= 2_000_000).count() as u64;
        }
        let got: Vec<u64> = (0..map.rows()).map(|r| map.row(r).iter().sum()).collect();
        prop_assert_eq!(got, expect);
    }

    #[test]
    fn chunking_is_irrelevant(seed in any::<u64>(), cuts in prop::collection::vec(0usize..400, 0..6)) {
        let s = random_stream(seed, 400);
        let recs = s.records();
        let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c.min(recs.len())).collect();
        cuts.sort();
        let mut whole = Correlator::new(500.0, 7.0).unwrap();
        whole.push(recs);
        let mut parts = Correlator::new(500.0, 7.0).unwrap();
        let mut start = 0;
        for c in cuts.into_iter().chain([recs.len()]) {
            parts.push(&recs[start..c]);
            start = c;
        }
        prop_assert_eq!(whole.counts(), parts.counts());
    }

    #[test]
    fn rebin_preserves_counts(counts in prop::collection::vec(0u64..1000, 12), factor in 1usize..5) {
        let edges: Vec<f64> = (0..=12).map(|i| i as f64).collect();
        let h = CoincidenceHistogram::from_counts(edges, &counts).unwrap();
        let usable = 12 / factor * factor;
        let r = h.rebin(factor).unwrap();
        let sum_r: f64 = r.raw().iter().sum();
        let sum_h: f64 = h.raw()[..usable].iter().sum();
        prop_assert_eq!(sum_r, sum_h);
        let var_r: f64 = r.raw_errors().iter().map(|e| e * e).sum();
        let var_h: f64 = h.raw_errors()[..usable].iter().map(|e| e * e).sum();
        prop_assert!((var_r - var_h).abs() < 1e-9 * var_h.max(1.0));
    }

    #[test]
    fn projection_is_additive_over_disjoint_gates(seed in any::<u64>(), split in 1usize..19) {
        let s = random_stream(seed, 300);
        let map = coincidence_map(&s, 1.0, 50.0, 20.0, 2.0).unwrap();
        let cut = split as f64 * 50.0;
        let left = gate_and_project(&map, &[GateWindow::new(10.0, cut - 10.0).unwrap()]).unwrap();
        let right = gate_and_project(&map, &[GateWindow::new(cut + 10.0, 990.0).unwrap()]).unwrap();
        let both = gate_and_project(&map, &[
            GateWindow::new(10.0, cut - 10.0).unwrap(),
            GateWindow::new(cut + 10.0, 990.0).unwrap(),
        ]).unwrap();
        let sum: Vec<f64> = left.raw().iter().zip(right.raw()).map(|(l, r)| l + r).collect();
        prop_assert_eq!(both.raw(), &sum[..]);
    }

    #[test]
    fn background_is_linear(sa in 0.0f64..1e4, sb in 0.0f64..1e4, duty in 0.0f64..1.0, k in 0.0f64..10.0) {
        let base = expected_background(sa, sb, duty, 5.0, 100.0).unwrap();
        let scaled = expected_background(k * sa, sb, duty, 5.0, 100.0).unwrap();
        prop_assert!((scaled - k * base).abs() <= 1e-9 * scaled.abs().max(1.0));
        let longer = expected_background(sa, sb, duty, 5.0, 100.0 * k).unwrap();
        prop_assert!((longer - k * base).abs() <= 1e-9 * longer.abs().max(1.0));
    }
}
