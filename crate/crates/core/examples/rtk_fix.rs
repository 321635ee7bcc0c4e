//! GPS error with and without base-station corrections.
//!
//! A stationary rover logs one fix per second for five minutes. The
//! correction stream drops out between 120 s and 150 s: the fix falls back
//! to GPS_3D, then climbs through RTK_FLOAT to RTK_FIXED again.
//!
//! ```text
//! cargo run --example rtk_fix
//! ```

use std::collections::BTreeMap;

use agro::rng::{substream, GPS};
use agro::sensors::{BaseStation, GpsConfig, GpsReceiver};
use agro::world::RoverState;

fn main() {
    let cfg = GpsConfig::default();
    let mut rng = substream(11, GPS);
    let mut rx = GpsReceiver::new(cfg, &mut rng);
    let base = BaseStation { known: (0.0, 0.0) };
    let truth = RoverState::at(25.0, 40.0, 0.0);

    let mut errors: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut prev = None;
    for s in 0..300 {
        let t = s as f64;
        rx.advance(1.0, &mut rng);
        let outage = (120.0..150.0).contains(&t);
        let corr = (!outage).then(|| base.correction(&rx.bias, t));
        let fix = rx.measure(&truth, t, corr.as_ref(), &mut rng);
        if prev != Some(fix.fix_type) {
            println!("t={t:5.0}s  {}", fix.fix_type);
            prev = Some(fix.fix_type);
        }
        let (x, y) = fix.est.expect("receiver always has a position");
        errors.entry(fix.fix_type.as_str()).or_default().push((x - truth.x).hypot(y - truth.y));
    }
    for (kind, e) in &errors {
        let rms = (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt();
        println!("{kind:>10}: {:3} fixes, horizontal RMS {rms:.3} m (nominal {:.3})", e.len(), cfg.sigma(agro::sensors::FixType::parse(kind).unwrap()));
    }
}
