//! Drive a leg with an obstacle the planner doesn't know about and watch
//! BendyRuler bend around it.
//!
//! ```text
//! cargo run --example avoid_obstacle
//! ```

use agro::mission::{MissionPlan, Waypoint};
use agro::sim::{run_mission, Scenario, SimConfig};
use agro::world::{FieldMap, Obstacle, RoverState};

fn main() -> agro::Result<()> {
    let map = FieldMap::new(40.0, 20.0);
    let rock = Obstacle::Circle { x: 18.0, y: 10.0, radius: 0.4 };
    let plan = MissionPlan::new(vec![Waypoint::new(34.0, 10.0)]);
    let scenario = Scenario { unmapped: vec![rock], ..Scenario::default() };
    let cfg = SimConfig { seed: 7, ..SimConfig::default() };

    let out = run_mission(&map, &plan, RoverState::at(4.0, 10.0, 0.0), cfg, &scenario, true, |_, _| Ok(()))?;

    // Twice a second while the rover is off the direct bearing.
    let mut next_print = 0.0;
    for tick in out.trace.iter().filter(|t| t.decision.deviation != 0.0 || !t.decision.clear) {
        if tick.t + 1e-9 >= next_print {
            println!(
                "t={:6.2}s  x={:5.2} y={:5.2}  deviation {:+5.1} deg{}",
                tick.t,
                tick.pose.x,
                tick.pose.y,
                tick.decision.deviation.to_degrees(),
                if tick.decision.clear { "" } else { "  (blocked)" }
            );
            next_print = tick.t + 0.5;
        }
    }
    let widest = out.trace.iter().map(|t| (t.pose.y - 10.0).abs()).fold(0.0, f64::max);
    println!("final mode {:?}, widest lateral offset {widest:.2} m", out.summary.final_mode);
    println!("closest approach {:.2} m, collisions {}", out.min_clearance, out.collisions);
    Ok(())
}
