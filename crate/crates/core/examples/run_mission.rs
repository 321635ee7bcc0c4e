//! Fly the two-row orchard survey headless and print the geotags.
//!
//! ```text
//! cargo run --example run_mission
//! ```

use agro::mission::{export_geotags, GeotagFormat, MissionPlan};
use agro::sim::{run_mission, Scenario, SimConfig};
use agro::world::{FieldMap, RoverState, VehicleParams};

fn main() -> agro::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let map = FieldMap::load(format!("{dir}/orchard.json"))?;
    let plan = MissionPlan::load(format!("{dir}/mission_two_rows.json"), map.origin_geo.as_ref(), &VehicleParams::default())?;
    let cfg = SimConfig { seed: 42, ..SimConfig::default() };

    let out = run_mission(&map, &plan, RoverState::at(3.0, 10.5, 0.0), cfg, &Scenario::default(), false, |_, _| Ok(()))?;

    println!("pre-arm: {}", if out.prearm.armable() { "ok" } else { "failed" });
    for e in &out.events {
        println!("  {e:?}");
    }
    let s = &out.summary;
    println!(
        "{:?} after {:.1} s: {}/{} waypoints, {} captures, {:.1} m driven, min clearance {:.2} m",
        s.final_mode.unwrap(),
        s.duration_s,
        s.waypoints_hit,
        s.waypoints_total,
        s.captures,
        s.distance_traveled_m,
        s.min_clearance_m.unwrap_or(f64::NAN)
    );
    print!("{}", export_geotags(&out.geotags, GeotagFormat::Csv, map.origin_geo.as_ref())?);
    Ok(())
}
