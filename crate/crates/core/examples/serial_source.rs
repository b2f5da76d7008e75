//! Drive a campaign from an external device over the serial line protocol.
//! A thread on the far end of a socket pair plays the device firmware.
//!
//! ```bash
//! cargo run --example serial_source
//! ```
//!
//! Against real hardware, use `SerialDevice::open("/dev/ttyACM0")` on a
//! port already configured with `stty`.

use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::UnixStream;

use uwb_rangekit::campaign::{run_campaign, CampaignOptions, SerialDevice, Settings, SweepPlan};

fn fake_firmware(stream: UnixStream) {
    let mut out = stream.try_clone().unwrap();
    let mut k = 0u64;
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { break };
        let Some(n) = line.strip_prefix("RNG ").and_then(|n| n.trim().parse::<u64>().ok()) else {
            continue;
        };
        for _ in 0..n {
            k += 1;
            // every seventh exchange times out
            if k % 7 == 0 {
                writeln!(out, "F timeout").unwrap();
            }
            writeln!(out, "D {:.3}", 2.0 + 0.01 * ((k % 5) as f64 - 2.0)).unwrap();
        }
        writeln!(out, "OK").unwrap();
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (host, device) = UnixStream::pair()?;
    std::thread::spawn(move || fake_firmware(device));
    let mut source = SerialDevice::new(host.try_clone()?, host);

    let plan = SweepPlan { theta_step: 90.0, theta_end: 270.0, phi_step: 90.0, phi_end: 180.0, position_timeout_s: 2.0, ..SweepPlan::default() };
    let settings = Settings {
        plan,
        device: "dw3000".into(),
        remote_device: Some("dw3000".into()),
        environment: "bench".into(),
        true_distance_m: 2.0,
        source: "serial".into(),
        seed: None,
        complete: false,
    };
    let out = std::env::temp_dir().join("uwb-rangekit-serial.zip");
    let _ = std::fs::remove_file(&out);
    let rec = run_campaign(&mut source, settings, &out, CampaignOptions::default())?;
    println!(
        "{} positions, {} samples, {} failure lines -> {}",
        rec.data.len(),
        rec.sample_count(),
        source.failures(),
        out.display()
    );
    Ok(())
}
