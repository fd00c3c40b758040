use pcm_snn::metrics::{pearson, rate_image, smoothed_correlation};
use pcm_snn::spike::{SpikeRaster, SpikeTrain, TimeGrid};
use pcm_snn::task::{
    bundled_glyphs, default_windows, gen_inputs, gen_targets, jitter_raster, InputGenConfig,
    TargetGenConfig, IMAGE_COLS, IMAGE_ROWS, TARGET_SPIKE_BUDGET,
};
use proptest::prelude::*;

fn population_rate_hz(r: &SpikeRaster) -> f64 {
    r.total_spikes() as f64 / r.channel_count() as f64 / (r.grid().horizon_ms() / 1000.0)
}

#[test]
fn input_rate_is_ten_hz_on_average() {
    let g = TimeGrid::default();
    let rates: Vec<f64> = (0..20)
        .map(|seed| {
            population_rate_hz(
                &gen_inputs(
                    &InputGenConfig {
                        seed,
                        ..Default::default()
                    },
                    &g,
                )
                .unwrap(),
            )
        })
        .collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    assert!((mean - 10.0).abs() <= 0.5, "mean rate {mean}");
    assert!(rates.iter().all(|r| (r - 10.0).abs() <= 1.5), "{rates:?}");
}

#[test]
fn bundled_dimensions_and_budget() {
    let g = TimeGrid::default();
    let inputs = gen_inputs(&InputGenConfig::default(), &g).unwrap();
    let cfg = TargetGenConfig::default();
    let targets = gen_targets(&cfg, &g).unwrap();
    assert_eq!(inputs.channel_count(), 132);
    assert_eq!(targets.channel_count(), IMAGE_ROWS * IMAGE_COLS);
    assert!((cfg.expected_spikes() - TARGET_SPIKE_BUDGET).abs() < 1e-9);
    assert!(cfg.on_rate_hz <= 20.0);
    assert!((targets.total_spikes() as f64 - TARGET_SPIKE_BUDGET).abs() <= 40.0);
    let counts: Vec<f64> = (0..20)
        .map(|seed| {
            gen_targets(
                &TargetGenConfig {
                    seed,
                    ..cfg.clone()
                },
                &g,
            )
            .unwrap()
            .total_spikes() as f64
        })
        .collect();
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    assert!(
        (mean - TARGET_SPIKE_BUDGET).abs() <= 20.0,
        "mean target count {mean}"
    );
}

#[test]
fn targets_are_silent_outside_windows_and_dark_pixels() {
    let g = TimeGrid::default();
    let cfg = TargetGenConfig::default();
    let targets = gen_targets(&cfg, &g).unwrap();
    let windows = default_windows();
    for t in targets.trains() {
        for &n in t.steps() {
            let tm = g.time_ms(n);
            let k = windows.iter().position(|&(lo, hi)| tm >= lo && tm < hi);
            let k = k.unwrap_or_else(|| panic!("spike at {tm} ms outside every window"));
            assert!(
                cfg.images[k].pixels()[t.channel] > 0.0,
                "dark pixel {} fired",
                t.channel
            );
        }
    }
}

#[test]
fn target_rate_images_reproduce_glyphs() {
    let g = TimeGrid::default();
    // more exposure than the bundled budget keeps Poisson noise small
    let cfg = TargetGenConfig {
        on_rate_hz: 200.0,
        ..TargetGenConfig::default()
    };
    let targets = gen_targets(&cfg, &g).unwrap();
    for (glyph, &w) in bundled_glyphs().iter().zip(&default_windows()) {
        let img = rate_image(&targets, w, IMAGE_ROWS, IMAGE_COLS).unwrap();
        assert!(pearson(img.pixels(), glyph.pixels()) > 0.9);
    }
    let bundled = gen_targets(&TargetGenConfig::default(), &g).unwrap();
    for (glyph, &w) in bundled_glyphs().iter().zip(&default_windows()) {
        let img = rate_image(&bundled, w, IMAGE_ROWS, IMAGE_COLS).unwrap();
        assert!(pearson(img.pixels(), glyph.pixels()) > 0.7);
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let g = TimeGrid::default();
    let a = gen_inputs(&InputGenConfig::default(), &g).unwrap();
    assert_eq!(a, gen_inputs(&InputGenConfig::default(), &g).unwrap());
    assert_ne!(
        a,
        gen_inputs(
            &InputGenConfig {
                seed: 12,
                ..Default::default()
            },
            &g
        )
        .unwrap()
    );
}

#[test]
fn jitter_keeps_spikes_and_lowers_correlation() {
    let g = TimeGrid::default();
    let inputs = gen_inputs(&InputGenConfig::default(), &g).unwrap();
    let jittered = jitter_raster(&inputs, 25.0, 99).unwrap();
    let lost = inputs.total_spikes() - jittered.total_spikes();
    assert!(
        lost as f64 <= 0.01 * inputs.total_spikes() as f64,
        "lost {lost}"
    );
    let before = smoothed_correlation(&inputs, 5.0, &g).unwrap().mean;
    let after = smoothed_correlation(&jittered, 5.0, &g).unwrap().mean;
    assert!(after < before, "{after} vs {before}");
    assert_eq!(jitter_raster(&inputs, 0.0, 99).unwrap(), inputs);
}

proptest! {
    #[test]
    fn jitter_moves_spikes_at_most_half_width(
        steps in proptest::collection::vec(0usize..5000, 1..30),
        hw in 0.0f64..40.0,
        seed in any::<u64>(),
    ) {
        let g = TimeGrid::new(0.1, 500.0).unwrap();
        let r = SpikeRaster::from_trains(g, vec![SpikeTrain::from_steps(0, steps)]).unwrap();
        let j = jitter_raster(&r, hw, seed).unwrap();
        prop_assert!(j.total_spikes() <= r.total_spikes());
        for &m in j.train(0).steps() {
            let nearest = r.train(0).steps().iter().map(|&n| (g.time_ms(n) - g.time_ms(m)).abs()).fold(f64::INFINITY, f64::min);
            prop_assert!(nearest <= hw + g.dt_ms() / 2.0 + 1e-9);
        }
    }
}
