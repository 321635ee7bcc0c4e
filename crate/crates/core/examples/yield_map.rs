//! Attach per-image fruit counts to mission geotags and emit a GeoJSON
//! yield map.
//!
//! ```text
//! cargo run --example yield_map > yield.geojson
//! ```

use agro::mission::{MissionPlan, Waypoint};
use agro::sim::{run_mission, Scenario, SimConfig};
use agro::world::{FieldMap, RoverState};
use agro::yieldkit::{yield_count, BoundingBox, EvalConfig};

fn main() -> agro::Result<()> {
    let map = FieldMap::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/orchard.json"))?;
    // A capture every 10 m down the first aisle.
    let plan = MissionPlan::new((1..=5).map(|k| Waypoint::new(3.0 + 10.0 * k as f64, 10.5).with_camera()).collect());
    let out = run_mission(&map, &plan, RoverState::at(3.0, 10.5, 0.0), SimConfig { seed: 9, ..SimConfig::default() }, &Scenario::default(), false, |_, _| Ok(()))?;

    // Stand-in detector output: more fruit further down the row, plus one
    // low-confidence box per image that the threshold drops, and one image
    // the rover never took.
    let mut detections: Vec<(String, Vec<BoundingBox>)> = out
        .geotags
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut boxes: Vec<BoundingBox> =
                (0..3 + 2 * i).map(|k| BoundingBox::new(0.1 + 0.07 * k as f64, 0.5, 0.05, 0.05).unwrap().with_confidence(0.9)).collect();
            boxes.push(BoundingBox::new(0.5, 0.9, 0.05, 0.05).unwrap().with_confidence(0.1));
            (g.image_id.clone(), boxes)
        })
        .collect();
    detections.push(("stray_frame".into(), vec![]));

    let report = yield_count(&detections, &EvalConfig::default(), &out.geotags);
    eprintln!("{} geotagged images, {} fruit, skipped {:?}", report.entries.len(), report.total, report.skipped);
    println!("{}", serde_json::to_string_pretty(&report.to_geojson(map.origin_geo.as_ref())?)?);
    Ok(())
}
