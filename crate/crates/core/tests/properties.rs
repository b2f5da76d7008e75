use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uwb_rangekit::campaign::{
    generate_sweep, run_campaign, CampaignOptions, Settings, SimulatedDevice, SweepPlan,
};
use uwb_rangekit::channel::{sample_measurement, AngularField, DeviceId, EnvironmentProfile, OutlierModel, Position};
use uwb_rangekit::pke::{EntryEngine, PkeDecision, PkePolicy, PkeSession, PkeState};
use uwb_rangekit::ranging::{
    ds_twr_distance, range_once, ChannelDelays, ClockModel, ExchangeConfig, Owner, RangingOutcome, TimestampSet,
    DEFAULT_TICK_SECONDS, SPEED_OF_LIGHT,
};
use uwb_rangekit::stats::error_metrics;
use uwb_rangekit::sts::{apply_ghost_peak, AttackKind, AttackerModel, StsKey, StsSession, Verdict};

const T: f64 = DEFAULT_TICK_SECONDS;

fn ticks(seconds: f64) -> u64 {
    (seconds / T).round() as u64
}

fn exchange(d: f64, skew_i: f64, skew_r: f64, reply_r: f64, reply_i: f64, phases: (f64, f64)) -> (ClockModel, ClockModel, TimestampSet) {
    let init = ClockModel::with_skew(skew_i).unwrap().phase(phases.0).unwrap();
    let resp = ClockModel::with_skew(skew_r).unwrap().phase(phases.1).unwrap();
    let cfg = ExchangeConfig {
        responder_reply_ticks: ticks(reply_r),
        initiator_reply_ticks: ticks(reply_i),
        ..ExchangeConfig::default()
    };
    let ts = uwb_rangekit::ranging::run_exchange(&init, &resp, d / SPEED_OF_LIGHT, &cfg, ChannelDelays::default()).unwrap();
    (init, resp, ts)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 500, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ds_twr_translation_invariant(
        d in 0.1f64..40.0,
        skews in (-20.0f64..20.0, -20.0f64..20.0),
        shift in any::<u64>(),
        owner in prop_oneof![Just(Owner::Initiator), Just(Owner::Responder)],
    ) {
        let (i, r, ts) = exchange(d, skews.0, skews.1, 1e-3, 1.5e-3, (0.3, 0.7));
        let a = ds_twr_distance(&ts, i.tick_seconds, r.tick_seconds);
        let b = ds_twr_distance(&ts.shifted(owner, shift), i.tick_seconds, r.tick_seconds);
        prop_assert_eq!(a.meters(), b.meters());
    }

    #[test]
    fn ds_twr_estimator_consistent(d in 0.1f64..40.0, rr in 0.1e-3f64..5e-3, ri in 0.1e-3f64..5e-3) {
        let clk = ClockModel::default();
        let cfg = ExchangeConfig {
            responder_reply_ticks: ticks(rr),
            initiator_reply_ticks: ticks(ri),
            ..ExchangeConfig::default()
        };
        let m = range_once(&clk, &clk, d / SPEED_OF_LIGHT, &cfg, ChannelDelays::default()).meters().unwrap();
        prop_assert!((m - d).abs() <= clk.quantization_m());
    }

    #[test]
    fn ds_twr_drift_robust(
        d in 0.1f64..40.0,
        si in -20.0f64..20.0,
        sr in -20.0f64..20.0,
        rr in 0.1e-3f64..2e-3,
        ri in 0.1e-3f64..2e-3,
        ph in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        let (i, r, ts) = exchange(d, si, sr, rr, ri, ph);
        let ds = ds_twr_distance(&ts, i.tick_seconds, r.tick_seconds).meters().unwrap();
        prop_assert!((ds - d).abs() < 0.01, "DS error {}", ds - d);
        // signed single-sided estimate from the same exchange
        let ss = (ts.round1_ticks() as f64 * i.tick_seconds - ts.reply1_ticks() as f64 * r.tick_seconds) / 2.0 * SPEED_OF_LIGHT;
        let eps = ((si - sr) * 1e-6).abs();
        let bound = eps * ticks(rr) as f64 * T * SPEED_OF_LIGHT / 2.0 - 0.01;
        prop_assert!((ss - d).abs() >= bound, "SS error {} below {bound}", ss - d);
    }

    #[test]
    fn ds_twr_increasing_in_round_trips(
        d in 0.1f64..40.0,
        skews in (-20.0f64..20.0, -20.0f64..20.0),
        k in 1u64..1000,
    ) {
        let (i, r, ts) = exchange(d, skews.0, skews.1, 1e-3, 2e-3, (0.5, 0.5));
        let base = ds_twr_distance(&ts, i.tick_seconds, r.tick_seconds).meters().unwrap();
        let later_resp = TimestampSet { rx_resp: ts.rx_resp + k, tx_final: ts.tx_final + k, ..ts };
        let later_final = TimestampSet { rx_final: ts.rx_final + k, ..ts };
        for t in [later_resp, later_final] {
            let m = ds_twr_distance(&t, i.tick_seconds, r.tick_seconds).meters().unwrap();
            prop_assert!(m > base, "{m} <= {base}");
        }
    }

    #[test]
    fn ds_twr_increasing_in_tof(d in 0.1f64..39.0, gap in 0.01f64..1.0, skews in (-20.0f64..20.0, -20.0f64..20.0)) {
        let (i1, r1, a) = exchange(d, skews.0, skews.1, 1e-3, 1.3e-3, (0.2, 0.6));
        let (i2, r2, b) = exchange(d + gap, skews.0, skews.1, 1e-3, 1.3e-3, (0.2, 0.6));
        let da = ds_twr_distance(&a, i1.tick_seconds, r1.tick_seconds).meters().unwrap();
        let db = ds_twr_distance(&b, i2.tick_seconds, r2.tick_seconds).meters().unwrap();
        prop_assert!(db > da);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn forged_frames_never_accepted(key in any::<[u8; 16]>(), counter in any::<u32>(), seed in any::<u64>()) {
        let mut session = StsSession::new(StsKey::new(key, counter as u64));
        let attacker = AttackerModel::new(AttackKind::PreambleInjection);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let f = attacker.forge_frame(&mut rng, 11, session.sts_bits());
            prop_assert_ne!(session.receive(&f), Verdict::Accept);
        }
    }

    #[test]
    fn replayed_frame_rejected(key in any::<[u8; 16]>(), counter in any::<u32>()) {
        let mut session = StsSession::new(StsKey::new(key, counter as u64));
        let frame = session.next_legitimate_frame(11, None);
        prop_assert_eq!(session.receive(&frame), Verdict::Accept);
        let replay = AttackerModel::new(AttackKind::GhostPeak).replay_frame(&frame);
        prop_assert_ne!(session.receive(&replay), Verdict::Accept);
    }

    #[test]
    fn ghost_peak_respects_floor(d in -3.0f64..40.0, reduction in 0.0f64..50.0, floor in -5.0f64..0.0, seed in any::<u64>()) {
        let m = AttackerModel { floor_m: floor, ..AttackerModel::ghost_peak(1.0, reduction).unwrap() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = apply_ghost_peak(&mut rng, &m, RangingOutcome::from_meters(d)).meters().unwrap();
        prop_assert!(out >= floor.min(d) - 1e-12);
        prop_assert!(out <= d);
    }
}

fn outlier_profile(p_enlarge: f64, p_reduce: f64, floor: f64) -> EnvironmentProfile {
    EnvironmentProfile {
        outlier: OutlierModel {
            p_enlarge,
            enlarge_tail_m: 0.4,
            p_reduce,
            reduce_floor_m: floor,
            ..OutlierModel::default()
        },
        ..EnvironmentProfile::ideal(DeviceId::Iphone12Pro, "lab", 5.0)
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn enlargements_positive_reductions_above_floor(seed in any::<u64>(), floor in -3.0f64..4.0) {
        let pos = Position::new(90.0, 45.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let up = outlier_profile(1.0, 0.0, floor);
        let down = outlier_profile(0.0, 1.0, floor);
        for _ in 0..200 {
            prop_assert!(sample_measurement(&up, pos, &mut rng).meters().unwrap() > 5.0);
            let d = sample_measurement(&down, pos, &mut rng).meters().unwrap();
            prop_assert!(d >= floor && d < 5.0, "{d}");
        }
    }

    #[test]
    fn channel_deterministic(seed in any::<u64>()) {
        let p = EnvironmentProfile {
            sigma_m: AngularField::Constant(0.1),
            p_fail: AngularField::Constant(0.2),
            ..outlier_profile(0.05, 0.02, -3.0)
        };
        let pos = Position::new(10.0, 170.0).unwrap();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100).map(|_| sample_measurement(&p, pos, &mut rng)).collect::<Vec<_>>()
        };
        prop_assert_eq!(draw(), draw());
    }

    #[test]
    fn stats_match_brute_force(
        d in prop::collection::vec(-5.0f64..50.0, 1..5000),
        truth in 0.0f64..40.0,
        band in 0.0f64..1.0,
    ) {
        let m = error_metrics(&d, truth, band);
        let n = d.len() as f64;
        let mae = d.iter().map(|x| (x - truth).abs()).sum::<f64>() / n;
        let rmse = (d.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / n).sqrt();
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let acc = d.iter().filter(|x| (*x - truth).abs() <= band).count() as f64 / n;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
        prop_assert!(close(m.mae_m.unwrap(), mae));
        prop_assert!(close(m.rmse_m.unwrap(), rmse));
        prop_assert!(close(m.sd_m.unwrap(), sd) || (m.sd_m.unwrap() - sd).abs() < 1e-12);
        prop_assert_eq!(m.accuracy_frac.unwrap(), acc);
        prop_assert!(m.rmse_m.unwrap() >= m.mae_m.unwrap());
    }

    #[test]
    fn accuracy_monotone_in_band(d in prop::collection::vec(0.0f64..10.0, 1..500), b1 in 0.0f64..2.0, b2 in 0.0f64..2.0) {
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let a = error_metrics(&d, 5.0, lo).accuracy_frac.unwrap();
        let b = error_metrics(&d, 5.0, hi).accuracy_frac.unwrap();
        prop_assert!(a <= b);
    }

    #[test]
    fn metrics_permutation_invariant(d in prop::collection::vec(0.0f64..10.0, 1..2000), seed in any::<u64>()) {
        let mut shuffled = d.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = error_metrics(&d, 5.0, 0.1);
        let b = error_metrics(&shuffled, 5.0, 0.1);
        let close = |x: Option<f64>, y: Option<f64>| (x.unwrap() - y.unwrap()).abs() <= 1e-12 * x.unwrap().abs().max(1.0);
        prop_assert!(close(a.mae_m, b.mae_m) && close(a.sd_m, b.sd_m) && close(a.rmse_m, b.rmse_m));
        prop_assert_eq!(a.accuracy_frac, b.accuracy_frac);
    }

    #[test]
    fn sweep_is_serpentine_permutation(
        t_step in prop_oneof![Just(10.0), Just(15.0), Just(30.0), Just(45.0), Just(90.0), Just(7.5)],
        p_step in prop_oneof![Just(10.0), Just(20.0), Just(30.0), Just(45.0), Just(90.0), Just(36.0)],
    ) {
        let plan = SweepPlan { theta_step: t_step, phi_step: p_step, ..SweepPlan::default() };
        let sweep = generate_sweep(&plan).unwrap();
        let mut grid: Vec<(u32, u32)> = plan
            .thetas()
            .iter()
            .flat_map(|&t| plan.phis().into_iter().map(move |p| Position::new(t, p).unwrap()))
            .map(|p| (p.theta_cdeg(), p.phi_cdeg()))
            .collect();
        let mut got: Vec<(u32, u32)> = sweep.iter().map(|p| (p.theta_cdeg(), p.phi_cdeg())).collect();
        grid.sort();
        got.sort();
        prop_assert_eq!(got, grid);
        let (ts, ps) = ((t_step * 100.0).round() as u32, (p_step * 100.0).round() as u32);
        for w in sweep.windows(2) {
            let dt = w[0].theta_cdeg().abs_diff(w[1].theta_cdeg());
            let dp = w[0].phi_cdeg().abs_diff(w[1].phi_cdeg());
            prop_assert!((dt == ts && dp == 0) || (dt == 0 && dp == ps), "{:?} -> {:?}", w[0], w[1]);
        }
    }
}

fn coarse_settings(seed: u64) -> Settings {
    Settings {
        plan: SweepPlan { theta_step: 45.0, phi_step: 45.0, samples_per_position: 5, ..SweepPlan::default() },
        device: "galaxyS21u".into(),
        remote_device: None,
        environment: "lab".into(),
        true_distance_m: 5.0,
        source: "simulated".into(),
        seed: Some(seed),
        complete: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn campaign_complete_and_deterministic(seed in any::<u64>()) {
        let profile = uwb_rangekit::channel::ProfileLibrary::bundled().resolve(DeviceId::GalaxyS21u, "lab", 5.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = run_campaign(&mut SimulatedDevice::new(profile.clone()), coarse_settings(seed), &dir.path().join("a.zip"), CampaignOptions::default()).unwrap();
        let b = run_campaign(&mut SimulatedDevice::new(profile), coarse_settings(seed), &dir.path().join("b.zip"), CampaignOptions::default()).unwrap();
        prop_assert_eq!(&a.data, &b.data);
        let keys: Vec<Position> = a.data.iter().map(|r| r.position).collect();
        prop_assert_eq!(keys, generate_sweep(a.plan()).unwrap());
        prop_assert_eq!(std::fs::read(dir.path().join("a.zip")).unwrap(), std::fs::read(dir.path().join("b.zip")).unwrap());
    }
}

fn no_fluctuation(k: usize) -> PkePolicy {
    PkePolicy { fluctuation_bound_m: None, attack_count_k: k, ..PkePolicy::default() }
}

fn raw_stream() -> impl Strategy<Value = Vec<Option<f64>>> {
    prop::collection::vec(
        prop_oneof![
            6 => (0.0f64..3.0).prop_map(Some),
            2 => (-3.0f64..0.0).prop_map(Some),
            1 => Just(None),
        ],
        1..150,
    )
}

fn outcome(raw: Option<f64>) -> RangingOutcome {
    match raw {
        Some(d) => RangingOutcome::from_meters(d),
        None => RangingOutcome::failed(uwb_rangekit::ranging::FailureReason::NoSignal),
    }
}

/// First cycle at which `k` raw values at or below the attack level fall
/// inside the lookback window.
fn predicate_cycle(raw: &[Option<f64>], policy: &PkePolicy) -> Option<usize> {
    (0..raw.len()).find(|&t| {
        let lo = (t + 1).saturating_sub(policy.attack_lookback);
        raw[lo..=t].iter().filter(|r| matches!(r, Some(d) if *d <= policy.attack_negative_m)).count() >= policy.attack_count_k
    })
}

fn suspended_at(raw: &[Option<f64>], policy: PkePolicy) -> Option<usize> {
    let mut s = PkeSession::new(policy).unwrap();
    raw.iter().position(|&r| matches!(s.ingest(&outcome(r)), PkeDecision::Suspend(_)))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn window_never_negative_and_unlock_needs_full_low_window(raw in raw_stream()) {
        let policy = PkePolicy::default();
        let mut s = PkeSession::new(policy).unwrap();
        for r in raw {
            let d = s.ingest(&outcome(r));
            let w = s.window_values();
            prop_assert!(w.iter().all(|&v| v >= policy.negative_floor_m));
            if d == PkeDecision::Unlock {
                prop_assert_eq!(w.len(), policy.window);
                prop_assert!(w.iter().sum::<f64>() / w.len() as f64 <= policy.unlock_threshold_m);
            }
        }
    }

    #[test]
    fn decisions_deterministic(raw in raw_stream()) {
        let run = || {
            let mut s = PkeSession::new(PkePolicy::default()).unwrap();
            raw.iter().map(|&r| s.ingest(&outcome(r))).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn suspension_iff_predicate(raw in raw_stream(), k in 1usize..6) {
        let policy = no_fluctuation(k);
        prop_assert_eq!(suspended_at(&raw, policy), predicate_cycle(&raw, &policy));
    }

    #[test]
    fn suspension_monotone_in_k(raw in raw_stream(), k in 1usize..6) {
        let a = suspended_at(&raw, no_fluctuation(k));
        let b = suspended_at(&raw, no_fluctuation(k + 1));
        match (a, b) {
            (None, Some(_)) => prop_assert!(false, "k+1 suspended where k did not"),
            (Some(x), Some(y)) => prop_assert!(y >= x),
            _ => {}
        }
    }

    #[test]
    fn suspended_is_absorbing(raw in raw_stream(), tail in raw_stream()) {
        let mut s = PkeSession::new(no_fluctuation(3)).unwrap();
        for r in &raw {
            s.ingest(&outcome(*r));
        }
        if s.state() == PkeState::Suspended {
            for r in tail {
                prop_assert_ne!(s.ingest(&outcome(r)), PkeDecision::Unlock);
                prop_assert_eq!(s.state(), PkeState::Suspended);
            }
        }
    }
}

#[test]
fn channel_mean_converges() {
    let p = EnvironmentProfile {
        bias_m: AngularField::Constant(0.07),
        sigma_m: AngularField::Constant(0.12),
        ..EnvironmentProfile::ideal(DeviceId::Dw3000, "lab", 5.0)
    };
    let pos = Position::new(0.0, 90.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 10_000;
    let mean = (0..n).map(|_| sample_measurement(&p, pos, &mut rng).meters().unwrap()).sum::<f64>() / n as f64;
    assert!((mean - 5.07).abs() < 3.0 * 0.12 / (n as f64).sqrt(), "{mean}");
}
