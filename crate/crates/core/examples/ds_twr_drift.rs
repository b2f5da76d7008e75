//! Double-sided vs single-sided two-way ranging under clock drift.
//!
//! ```bash
//! cargo run --example ds_twr_drift
//! ```

use uwb_rangekit::ranging::{
    ds_twr_distance, run_exchange, ChannelDelays, ClockModel, ExchangeConfig, SPEED_OF_LIGHT,
};

fn main() {
    let true_m = 5.0;
    let tof = true_m / SPEED_OF_LIGHT;
    println!("{:>8} {:>8} {:>8} {:>12} {:>12}", "skew_i", "skew_r", "reply_ms", "ds_err_mm", "ss_err_m");
    for (si, sr) in [(0.0, 0.0), (4.0, -7.0), (20.0, -20.0), (-20.0, 20.0)] {
        let initiator = ClockModel::with_skew(si).unwrap();
        let responder = ClockModel::with_skew(sr).unwrap();
        for reply_ms in [0.2, 1.0, 2.0] {
            let cfg = ExchangeConfig::symmetric((reply_ms * 1e-3 / initiator.tick_seconds).round() as u64);
            let ts = run_exchange(&initiator, &responder, tof, &cfg, ChannelDelays::default()).unwrap();
            let ds = ds_twr_distance(&ts, initiator.tick_seconds, responder.tick_seconds)
                .meters()
                .unwrap();

            // Single-sided estimate from the same timestamps, signed so that
            // negative results under adverse drift stay visible.
            let ss = ts.single_sided();
            let round = (ss.rx_resp.wrapping_sub(ss.tx_poll) & uwb_rangekit::ranging::COUNTER_MASK) as f64;
            let reply = (ss.tx_resp.wrapping_sub(ss.rx_poll) & uwb_rangekit::ranging::COUNTER_MASK) as f64;
            let ss_m = (round * initiator.tick_seconds - reply * responder.tick_seconds) / 2.0 * SPEED_OF_LIGHT;

            println!(
                "{si:>8.1} {sr:>8.1} {reply_ms:>8.1} {:>12.3} {:>12.3}",
                (ds - true_m) * 1e3,
                ss_m - true_m
            );
        }
    }
    println!("one tick = {:.2} mm", ClockModel::default().quantization_m() * 1e3);
}
