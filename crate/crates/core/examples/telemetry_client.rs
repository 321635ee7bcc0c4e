//! Ground-station side of the telemetry protocol.
//!
//! Starts the live simulator on an ephemeral port (20x real time), then acts
//! as an operator: upload a mission, arm, start, and print a frame per
//! simulated second until the mission completes.
//!
//! ```text
//! cargo run --example telemetry_client
//! ```

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use agro::mission::MissionState;
use agro::sim::{run_service, ServiceOptions, SimConfig, Simulation};
use agro::telemetry::{ServerMessage, TelemetryServer};
use agro::world::{FieldMap, RoverState};
use serde_json::json;

fn main() -> agro::Result<()> {
    let map = FieldMap::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/orchard.json"))?;
    let server = TelemetryServer::bind("127.0.0.1:0")?;
    let addr = server.local_addr();
    let stop = Arc::new(AtomicBool::new(false));
    let opts = ServiceOptions { time_scale: Some(20.0), max_duration_s: Some(300.0), stop: Some(stop.clone()) };
    let sim_thread = std::thread::spawn(move || {
        let mut sim = Simulation::new(map, &[], RoverState::at(3.0, 10.5, 0.0), SimConfig { seed: 1, ..SimConfig::default() })?;
        run_service(&mut sim, &server, None, None, &opts)
    });

    let stream = TcpStream::connect(addr)?;
    let mut writer = stream.try_clone()?;
    let mission = json!({"frame": "local", "waypoints": [
        {"x": 30.0, "y": 10.5, "speed": 2.0, "acceptance_radius": 1.0, "trigger_camera": true},
        {"x": 54.0, "y": 15.5, "speed": 2.0, "acceptance_radius": 1.0, "trigger_camera": true}
    ]});
    let commands = [
        json!({"seq": 1, "kind": "UPLOAD_MISSION", "mission": mission}),
        json!({"seq": 2, "kind": "ARM"}),
        json!({"seq": 3, "kind": "START_MISSION"}),
    ];

    let mut sent = false;
    let mut last_print = -1.0;
    for line in BufReader::new(stream).lines() {
        match serde_json::from_str::<ServerMessage>(&line?)? {
            ServerMessage::Ack(a) => println!("ack seq={:?} accepted={} {}", a.seq, a.accepted, a.reason.unwrap_or_default()),
            ServerMessage::Frame(f) => {
                // Arming is refused until the rover has booted and has a fix.
                if !sent && f.t > 1.5 {
                    for cmd in &commands {
                        writeln!(writer, "{cmd}")?;
                    }
                    sent = true;
                }
                if f.t - last_print >= 1.0 - 1e-9 {
                    println!(
                        "t={:5.1} {:<16} ({:5.1}, {:5.1}) {:4.2} m/s  wp {}/{}  {}",
                        f.t, f.mode.to_string(), f.x, f.y, f.ground_speed, f.waypoints_completed, f.waypoint_count, f.fix_type
                    );
                    last_print = f.t;
                }
                if f.mode == MissionState::MissionComplete {
                    println!("mission complete at t={:.1}s with {} captures", f.t, f.captures);
                    break;
                }
            }
        }
    }
    stop.store(true, Ordering::Relaxed);
    sim_thread.join().expect("simulator thread")?;
    Ok(())
}
