use ndarray::Array2;
use pcm_snn::array::{init_array, FpWeightMatrix, UpdateStats};
use pcm_snn::lif::LifParams;
use pcm_snn::normad::{
    compute_error, forward_pass, normad_delta_w, train, DHat, ErrorSignal, FpBackend, PcmBackend,
    PreparedInputs, TrainerConfig, WeightBackend,
};
use pcm_snn::pcm::PcmModelParams;
use pcm_snn::spike::{KernelParams, SpikeRaster, SpikeTrain, TimeGrid};
use pcm_snn::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INPUTS: usize = 5;
const STEPS: usize = 200;

fn grid() -> TimeGrid {
    TimeGrid::new(0.1, STEPS as f64 * 0.1).unwrap()
}

fn random_dhat(seed: u64) -> DHat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traces = Array2::zeros((INPUTS, STEPS));
    for v in traces.iter_mut() {
        // sparse so that some steps have a zero norm
        if rng.random_bool(0.7) {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    dhat_from(traces)
}

fn dhat_from(traces: Array2<f64>) -> DHat {
    let norms = traces
        .columns()
        .into_iter()
        .map(|c| c.dot(&c).sqrt())
        .collect();
    DHat { traces, norms }
}

fn random_events(seed: u64, outputs: usize) -> ErrorSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = (0..outputs)
        .map(|_| {
            let mut ev = Vec::new();
            for n in 0..STEPS {
                if rng.random_bool(0.05) {
                    ev.push((n, if rng.random_bool(0.5) { 1i8 } else { -1 }));
                }
            }
            ev
        })
        .collect();
    ErrorSignal { events }
}

/// Dense full-grid integral of `e_j(t) dhat_i(t) / |dhat(t)|` times `eta dt`.
fn dense_oracle(e: &ErrorSignal, d: &DHat, eta: f64, dt: f64) -> Array2<f64> {
    let dense = e.to_dense(STEPS);
    let mut out = Array2::zeros((INPUTS, e.events.len()));
    for j in 0..e.events.len() {
        for n in 0..STEPS {
            if d.norms[n] == 0.0 {
                continue;
            }
            for i in 0..INPUTS {
                out[[i, j]] += eta * dt * dense[[j, n]] * d.traces[[i, n]] / d.norms[n];
            }
        }
    }
    out
}

fn close(a: &Array2<f64>, b: &Array2<f64>, rel: f64) -> bool {
    a.iter()
        .zip(b.iter())
        .all(|(x, y)| (x - y).abs() <= rel * x.abs().max(y.abs()).max(1e-12))
}

proptest! {
    #[test]
    fn event_sum_equals_dense_integral(ds in any::<u64>(), es in any::<u64>(), eta in 1.0f64..1e4) {
        let (d, e) = (random_dhat(ds), random_events(es, 3));
        let dw = normad_delta_w(&e, &d, eta, &grid()).unwrap();
        prop_assert!(close(&dw.0, &dense_oracle(&e, &d, eta, 0.1), 1e-12));
    }

    #[test]
    fn invariant_to_dhat_scale(ds in any::<u64>(), es in any::<u64>(), c in 1e-3f64..1e3) {
        let (d, e) = (random_dhat(ds), random_events(es, 2));
        let scaled = dhat_from(&d.traces * c);
        let a = normad_delta_w(&e, &d, 100.0, &grid()).unwrap();
        let b = normad_delta_w(&e, &scaled, 100.0, &grid()).unwrap();
        prop_assert!(close(&a.0, &b.0, 1e-12));
    }

    #[test]
    fn linear_over_disjoint_events(ds in any::<u64>(), es in any::<u64>(), split in 0usize..STEPS) {
        let (d, e) = (random_dhat(ds), random_events(es, 2));
        let part = |keep: &dyn Fn(usize) -> bool| ErrorSignal {
            events: e.events.iter().map(|ev| ev.iter().copied().filter(|x| keep(x.0)).collect()).collect(),
        };
        let lo = part(&|n| n < split);
        let hi = part(&|n| n >= split);
        let g = grid();
        let whole = normad_delta_w(&e, &d, 7.0, &g).unwrap().0;
        let sum = normad_delta_w(&lo, &d, 7.0, &g).unwrap().0 + normad_delta_w(&hi, &d, 7.0, &g).unwrap().0;
        prop_assert!(close(&whole, &sum, 1e-12));
    }

    #[test]
    fn single_event_is_eta_dt_along_dhat(
        n in 0usize..STEPS,
        sign in prop_oneof![Just(1i8), Just(-1i8)],
        eta in 1.0f64..1e4,
        v in proptest::collection::vec(-1.0f64..1.0, INPUTS),
    ) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-6));
        let mut traces = Array2::zeros((INPUTS, STEPS));
        for (i, x) in v.iter().enumerate() {
            traces[[i, n]] = *x;
        }
        let d = dhat_from(traces);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let e = ErrorSignal { events: vec![vec![(n, sign)]] };
        let dw = normad_delta_w(&e, &d, eta, &grid()).unwrap();
        for (i, x) in v.iter().enumerate() {
            let want = eta * 0.1 * sign as f64 * x / norm;
            prop_assert!((dw.0[[i, 0]] - want).abs() <= 1e-12 * want.abs().max(1e-12));
        }
        let len = dw.0.column(0).dot(&dw.0.column(0)).sqrt();
        prop_assert!((len - eta * 0.1).abs() <= 1e-9 * eta);
    }

    #[test]
    fn error_is_symmetric_difference(
        a in proptest::collection::btree_set(0usize..STEPS, 0..20),
        b in proptest::collection::btree_set(0usize..STEPS, 0..20),
    ) {
        let g = grid();
        let r = |s: &std::collections::BTreeSet<usize>| {
            SpikeRaster::from_trains(g, vec![SpikeTrain::from_steps(0, s.iter().copied().collect())]).unwrap()
        };
        let e = compute_error(&r(&a), &r(&b)).unwrap();
        let plus: Vec<usize> = a.difference(&b).copied().collect();
        let minus: Vec<usize> = b.difference(&a).copied().collect();
        prop_assert_eq!(e.events[0].iter().filter(|x| x.1 == 1).map(|x| x.0).collect::<Vec<_>>(), plus);
        prop_assert_eq!(e.events[0].iter().filter(|x| x.1 == -1).map(|x| x.0).collect::<Vec<_>>(), minus);
    }
}

fn small_task(seed: u64) -> (SpikeRaster, SpikeRaster) {
    let g = TimeGrid::new(0.1, 300.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = |ch: usize, count: usize| {
        let steps = (0..count).map(|_| rng.random_range(0..g.steps())).collect();
        SpikeTrain::from_steps(ch, steps)
    };
    let inputs = (0..12).map(|c| train(c, 8)).collect();
    let targets = (0..3).map(|c| train(c, 4)).collect();
    (
        SpikeRaster::from_trains(g, inputs).unwrap(),
        SpikeRaster::from_trains(g, targets).unwrap(),
    )
}

/// Full-precision weights updated through the same dead zone, saturation and
/// `beta` quantization as an ideal array.
struct QuantizedFp {
    w: FpWeightMatrix,
    beta: f64,
    p: PcmModelParams,
}

impl WeightBackend for QuantizedFp {
    fn read(&mut self, _now_s: f64) -> Result<FpWeightMatrix> {
        Ok(self.w.clone())
    }

    fn apply(&mut self, dw: &FpWeightMatrix, _now_s: f64) -> Result<UpdateStats> {
        for (w, &d) in self.w.0.iter_mut().zip(dw.0.iter()) {
            let dg = d.abs() / self.beta;
            if d != 0.0 && dg >= self.p.dg_min_us {
                *w += d.signum() * self.beta * dg.min(self.p.dg_max_us);
            }
        }
        Ok(UpdateStats::default())
    }
}

#[test]
fn noise_free_pcm_tracks_quantized_fp_trajectory() {
    let (inputs, targets) = small_task(4);
    let lif = LifParams::default();
    let prep = PreparedInputs::new(&inputs, &KernelParams::default(), &lif).unwrap();
    let p = PcmModelParams {
        nonlinearity: 0.0,
        g_max_us: 1e3,
        ..PcmModelParams::ideal()
    };
    let array = init_array(12, 3, 2, &p, 8).unwrap();
    let mut beta_array = array.clone();
    beta_array.set_beta(2000.0).unwrap();
    let w0 = beta_array
        .read_weights(0.0, &p, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let cfg = TrainerConfig {
        eta: 3000.0,
        epochs: 15,
        ..Default::default()
    };
    let mut pcm = PcmBackend::new(beta_array, p, 1);
    let mut fp = QuantizedFp {
        w: w0,
        beta: 2000.0,
        p,
    };
    let a = train(&prep, &targets, &mut pcm, &cfg, &lif).unwrap();
    let b = train(&prep, &targets, &mut fp, &cfg, &lif).unwrap();
    for (x, y) in a.final_weights.0.iter().zip(b.final_weights.0.iter()) {
        assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
    }
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert_eq!(ra.accuracy, rb.accuracy);
    }
    assert!(a.records.iter().any(|r| r.stats.pulses > 0));
}

#[test]
fn zero_learning_rate_keeps_accuracy_constant() {
    let (inputs, targets) = small_task(6);
    let lif = LifParams::default();
    let prep = PreparedInputs::new(&inputs, &KernelParams::default(), &lif).unwrap();
    let mut w = Array2::zeros((12, 3));
    w.fill(1500.0);
    let mut b = FpBackend {
        weights: FpWeightMatrix(w),
    };
    let cfg = TrainerConfig {
        eta: 0.0,
        epochs: 5,
        ..Default::default()
    };
    let log = train(&prep, &targets, &mut b, &cfg, &lif).unwrap();
    assert!(log
        .records
        .windows(2)
        .all(|p| p[0].accuracy == p[1].accuracy));
    assert_eq!(log.records.len(), 6);
}

#[test]
fn huge_weight_fires_after_every_input_spike() {
    let g = TimeGrid::new(0.1, 400.0).unwrap();
    let input_steps = vec![100, 600, 1400, 2500, 3500];
    let inputs =
        SpikeRaster::from_trains(g, vec![SpikeTrain::from_steps(0, input_steps.clone())]).unwrap();
    let w = FpWeightMatrix(Array2::from_elem((1, 1), 1e6));
    let lif = LifParams::default();
    let k = KernelParams::default();
    let out = forward_pass(&inputs, &w, &lif, &k).unwrap();
    let rise = g.steps_for(k.peak_time_ms());
    for &s in &input_steps {
        assert!(
            out.train(0).any_in(s + 1, s + rise),
            "no spike within one kernel rise of step {s}"
        );
    }
    let zero = forward_pass(&inputs, &FpWeightMatrix::zeros(1, 1), &lif, &k).unwrap();
    assert_eq!(zero.total_spikes(), 0);
}

#[test]
fn forward_pass_is_deterministic() {
    let (inputs, _) = small_task(9);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = FpWeightMatrix(Array2::from_shape_fn((12, 3), |_| {
        rng.random_range(-6000.0..6000.0)
    }));
    let lif = LifParams::default();
    let k = KernelParams::default();
    assert_eq!(
        forward_pass(&inputs, &w, &lif, &k).unwrap(),
        forward_pass(&inputs, &w, &lif, &k).unwrap()
    );
}
