use std::collections::BTreeSet;

use proptest::prelude::*;
use spikediff::dataset::{
    aggregate_sessions, bin_spikes, filter_by_region, psth, synth_movie, synth_spikes, EncodingModelConfig, MovieSpec,
    RegionLabel, SessionRecording, StimulusMovie, UnitRecord,
};
use spikediff::ppm::Image;

fn blank_movie(frames: usize, dt: f64) -> StimulusMovie {
    let onsets = (0..frames).map(|f| 1.0 + f as f64 * dt).collect();
    StimulusMovie::new(onsets, vec![Image::zeros(2, 2, 1); frames], None).unwrap()
}

fn toy_movie(frames: usize) -> StimulusMovie {
    synth_movie(&MovieSpec { frames, height: 16, width: 16, ..MovieSpec::default() }, 5).unwrap()
}

fn session_from(times: Vec<Vec<f64>>) -> SessionRecording {
    SessionRecording {
        session_id: "p".into(),
        units: times
            .into_iter()
            .enumerate()
            .map(|(i, mut t)| {
                t.sort_by(f64::total_cmp);
                UnitRecord { unit_id: format!("u{i}"), region: RegionLabel::ALL[i % 6], spike_times: t }
            })
            .collect(),
    }
}

proptest! {
    #[test]
    fn binned_columns_count_every_spike_in_the_movie_window(
        times in prop::collection::vec(prop::collection::vec(0.0f64..4.0, 0..60), 1..6),
        latency in 0.0f64..0.1,
    ) {
        let movie = blank_movie(20, 0.1);
        let rec = session_from(times);
        let m = bin_spikes(&rec, &movie, latency).unwrap();
        let (lo, hi) = (1.0 + latency, 1.0 + 20.0 * 0.1 + latency);
        for (c, unit) in rec.units.iter().enumerate() {
            let inside = unit.spike_times.iter().filter(|&&t| t >= lo && t < hi).count() as f64;
            prop_assert_eq!(m.values.column(c).sum(), inside);
        }
    }

    #[test]
    fn coarse_psth_bins_are_sums_of_fine_bins(
        times in prop::collection::vec(prop::collection::vec(0.0f64..3.0, 1..80), 6..7),
        width_ms in 1usize..6,
    ) {
        let rec = session_from(times);
        let onsets = [0.5, 1.2, 2.0];
        let fine_w = width_ms as f64 * 0.005;
        let window = (-6.0 * fine_w, 18.0 * fine_w);
        let fine = psth(&rec, RegionLabel::VisL, &onsets, window, fine_w).unwrap();
        let coarse = psth(&rec, RegionLabel::VisL, &onsets, window, 2.0 * fine_w).unwrap();
        prop_assert_eq!(fine.mean_counts.len(), 2 * coarse.mean_counts.len());
        for (k, c) in coarse.mean_counts.iter().enumerate() {
            let s = fine.mean_counts[2 * k] + fine.mean_counts[2 * k + 1];
            prop_assert!((s - c).abs() <= 1e-12, "bin {}: {} vs {}", k, s, c);
        }
    }

    #[test]
    fn region_filter_of_a_union_is_the_union_of_filters(a in 0usize..64, b in 0usize..64) {
        let movie = blank_movie(6, 0.1);
        let rec = session_from((0..18).map(|i| vec![1.0 + 0.01 * (i % 7) as f64]).collect());
        let m = bin_spikes(&rec, &movie, 0.0).unwrap();
        let pick = |mask: usize| -> BTreeSet<RegionLabel> {
            RegionLabel::ALL.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, r)| *r).collect()
        };
        let (sa, sb) = (pick(a), pick(b));
        prop_assume!(!sa.is_empty() && !sb.is_empty());
        let union: BTreeSet<_> = sa.union(&sb).copied().collect();
        let ids = |s: &BTreeSet<RegionLabel>| -> BTreeSet<String> {
            filter_by_region(&m, s).unwrap().unit_ids.into_iter().collect()
        };
        let expected: BTreeSet<String> = ids(&sa).union(&ids(&sb)).cloned().collect();
        let got = filter_by_region(&m, &union).unwrap();
        prop_assert_eq!(got.unit_ids.iter().cloned().collect::<BTreeSet<_>>(), expected);
        let order: Vec<usize> = got.unit_ids.iter().map(|id| m.unit_ids.iter().position(|x| x == id).unwrap()).collect();
        prop_assert!(order.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn aggregated_matrix_has_no_silent_columns() {
    let movie = toy_movie(60);
    for seed in 0..4 {
        let cfg = EncodingModelConfig { silent_units: 3, seed, ..EncodingModelConfig::default() };
        let mats: Vec<_> = (0..2)
            .map(|s| {
                let mut c = cfg.clone();
                c.seed = seed * 10 + s;
                bin_spikes(&synth_spikes(&movie, &c, 3, 1.0 / 30.0).unwrap(), &movie, c.latency_s).unwrap()
            })
            .collect();
        let agg = aggregate_sessions(&mats).unwrap();
        assert_eq!(agg.unit_count(), 2 * 6 * 3);
        assert!(agg.values.columns().into_iter().all(|c| c.sum() > 0.0));
    }
}

#[test]
fn doubling_the_base_rate_doubles_spontaneous_counts() {
    let movie = toy_movie(300);
    let total = |rate: f64| -> f64 {
        let cfg = EncodingModelConfig { base_rate_hz: rate, gain_hz: 0.0, silent_units: 0, seed: 8, ..Default::default() };
        synth_spikes(&movie, &cfg, 10, 1.0 / 30.0).unwrap().total_spikes() as f64
    };
    let (one, two) = (total(10.0), total(20.0));
    // Poisson counts: Var(two - 2·one) = E[two] + 4·E[one] = 6·E[one].
    let expected_one = 10.0 * (1.0 / 30.0) * 300.0 * 60.0;
    assert!((one - expected_one).abs() < 4.0 * expected_one.sqrt(), "{one} vs {expected_one}");
    assert!((two - 2.0 * one).abs() < 4.0 * (6.0 * expected_one).sqrt(), "{two} vs 2 x {one}");
}

#[test]
fn zero_information_units_ignore_the_scene_category() {
    let movie = toy_movie(600);
    let cfg = EncodingModelConfig { silent_units: 0, seed: 4, ..Default::default() };
    let rec = synth_spikes(&movie, &cfg, 20, 1.0 / 30.0).unwrap();
    let m = bin_spikes(&rec, &movie, cfg.latency_s).unwrap();
    let labels = movie.frame_labels.clone().unwrap();
    let separation = |col: usize| -> f64 {
        let stats: Vec<(f64, f64)> = (0..4)
            .map(|k| {
                let rows: Vec<f64> = (0..movie.len()).filter(|&f| labels[f] == k).map(|f| m.values[[f, col]]).collect();
                let n = rows.len() as f64;
                let mu = rows.iter().sum::<f64>() / n;
                (mu, (rows.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt())
            })
            .collect();
        let mut worst: f64 = 0.0;
        for a in &stats {
            for b in &stats {
                worst = worst.max((a.0 - b.0).abs() / (a.1 * a.1 + b.1 * b.1).sqrt().max(1e-12));
            }
        }
        worst
    };
    let strongest = |region: RegionLabel| -> f64 {
        (0..m.unit_count()).filter(|&c| m.regions[c] == region).map(separation).fold(0.0, f64::max)
    };
    // 20 units x 6 class pairs: 4.5 sigma keeps the family-wise false alarm rate small.
    let zero = strongest(RegionLabel::VisAm);
    let high = strongest(RegionLabel::VisL);
    assert!(zero < 4.5, "zero-information unit separates classes at {zero:.2} sigma");
    assert!(high > 8.0, "informative units separate classes at only {high:.2} sigma");
}
