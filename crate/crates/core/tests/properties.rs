mod common;

use agro::mission::{MissionPlan, MissionState, Waypoint};
use agro::nav::{bendyruler_step, dijkstra_plan, BendyConfig};
use agro::sensors::{Beam, LidarScan};
use agro::sim::{SimConfig, Simulation};
use agro::telemetry::{Action, Command, ModeRequest};
use agro::world::{rasterize, step_kinematics, wrap_angle, Cell, FieldMap, Obstacle, OccupancyGrid, RoverState, VehicleParams};
use agro::yieldkit::split::apportion;
use agro::yieldkit::tiling::largest_empty_rect_in;
use agro::yieldkit::{augment, iou, match_detections, map_range, split_tiles, stratified_split, AnnotatedImage, AugmentParams, BoundingBox, EvalConfig, Rect, StrataBins};
use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (0.0..0.9f64, 0.0..0.9f64, 0.01..0.5f64, 0.01..0.5f64)
        .prop_map(|(x0, y0, w, h)| BoundingBox::from_corners(x0, y0, (x0 + w).min(1.0), (y0 + h).min(1.0)).unwrap())
}

fn scored() -> impl Strategy<Value = BoundingBox> {
    (bbox(), 0.0..=1.0f64).prop_map(|(b, c)| b.with_confidence(c))
}

fn obstacle() -> impl Strategy<Value = Obstacle> {
    prop_oneof![
        (1.0..19.0f64, 1.0..19.0f64, 0.2..1.0f64).prop_map(|(x, y, radius)| Obstacle::Circle { x, y, radius }),
        (0.0..17.0f64, 0.0..17.0f64, 0.2..3.0f64, 0.2..3.0f64)
            .prop_map(|(x, y, w, h)| Obstacle::Rect { x_min: x, y_min: y, x_max: x + w, y_max: y + h }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn raising_the_confidence_threshold_never_adds_detections(
        pred in prop::collection::vec(scored(), 0..12),
        gt in prop::collection::vec(bbox(), 0..12),
        lo in 0.0..1.0f64,
        step in 0.0..0.5f64,
    ) {
        let a = match_detections(&pred, &gt, &EvalConfig { confidence_threshold: lo, iou_threshold: 0.5 }).confusion;
        let b = match_detections(&pred, &gt, &EvalConfig { confidence_threshold: (lo + step).min(1.0), iou_threshold: 0.5 }).confusion;
        prop_assert!(b.tp + b.fp <= a.tp + a.fp);
        prop_assert_eq!(a.tp + a.fn_, gt.len());
        prop_assert_eq!(b.tp + b.fn_, gt.len());
    }

    #[test]
    fn map_ignores_monotone_rescaling_of_confidence(
        images in prop::collection::vec((prop::collection::vec(scored(), 0..6), prop::collection::vec(bbox(), 1..6)), 1..4),
        k in 0.05..1.0f64,
    ) {
        let (pred, gt): (Vec<_>, Vec<_>) = images.into_iter().unzip();
        let scaled: Vec<Vec<BoundingBox>> = pred.iter().map(|p| p.iter().map(|b| b.with_confidence(b.score() * k)).collect()).collect();
        let a = map_range(&pred, &gt).unwrap();
        let b = map_range(&scaled, &gt).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn tiles_partition_any_image(w in 12u32..20_000, h in 12u32..20_000, cols in 1u32..5, rows in 1u32..5) {
        match split_tiles(w, h, (cols, rows)) {
            Ok(tiles) => {
                prop_assert_eq!(tiles.len() as u32, cols * rows);
                prop_assert_eq!(tiles.iter().map(|t| t.area()).sum::<u64>(), w as u64 * h as u64);
                for t in &tiles {
                    prop_assert!(t.area() <= agro::yieldkit::tiling::MAX_TILE_PX);
                    prop_assert!(t.x + t.width <= w && t.y + t.height <= h);
                    // Interior seams sit at floor(i * len / parts).
                    prop_assert_eq!(t.x as u64, t.col as u64 * w as u64 / cols as u64);
                    prop_assert_eq!(t.y as u64, t.row as u64 * h as u64 / rows as u64);
                }
            }
            // Only refused when some tile would exceed the pixel cap.
            Err(_) => prop_assert!((w as u64).div_ceil(cols as u64) * (h as u64).div_ceil(rows as u64) > agro::yieldkit::tiling::MAX_TILE_PX),
        }
    }

    #[test]
    fn largest_empty_rect_avoids_every_box(
        boxes in prop::collection::vec((0.0..90.0f64, 0.0..90.0f64, 1.0..40.0f64, 1.0..40.0f64), 0..10),
    ) {
        let rects: Vec<Rect> = boxes.iter().map(|&(x, y, w, h)| Rect { x0: x, y0: y, x1: (x + w).min(100.0), y1: (y + h).min(100.0) }).collect();
        if let Ok(r) = largest_empty_rect_in(100.0, 100.0, &rects) {
            prop_assert!(r.x0 >= 0.0 && r.y0 >= 0.0 && r.x1 <= 100.0 && r.y1 <= 100.0 && r.area() > 0.0);
            prop_assert!(rects.iter().all(|o| !o.overlaps(&r)));
            prop_assert_eq!(r.area(), common::brute_force_empty_area(100.0, 100.0, &rects));
        }
    }

    #[test]
    fn apportion_sums_and_stays_within_one(n in 0usize..5000, a in 1u32..100, b in 1u32..100, c in 1u32..100) {
        let total = (a + b + c) as f64;
        let ratios = [a as f64 / total, b as f64 / total, c as f64 / total];
        let parts = apportion(n, &ratios);
        prop_assert_eq!(parts.iter().sum::<usize>(), n);
        for (p, r) in parts.iter().zip(ratios) {
            prop_assert!((*p as f64 - r * n as f64).abs() < 1.0);
        }
    }

    #[test]
    fn split_is_a_partition(counts in prop::collection::vec(0usize..80, 10..120), seed in any::<u64>()) {
        let b = BoundingBox::new(0.5, 0.5, 0.1, 0.1).unwrap();
        let images: Vec<AnnotatedImage> = counts.iter().enumerate().map(|(i, &n)| AnnotatedImage::new(format!("im{i}"), 64, 64, vec![b; n])).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = stratified_split(&images, [0.8, 0.1, 0.1], &StrataBins::default(), &mut rng).unwrap();
        let mut all: Vec<usize> = s.parts().concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..images.len()).collect::<Vec<_>>());
        let sizes: Vec<usize> = s.parts().iter().map(|p| p.len()).collect();
        prop_assert_eq!(sizes, apportion(images.len(), &[0.8, 0.1, 0.1]));
    }

    #[test]
    fn augment_noise_touches_exactly_the_requested_pixels(w in 4u32..40, h in 4u32..40, frac in 0.0..0.001f64, seed in any::<u64>()) {
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7) as u8, (y * 11) as u8, 90]));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = augment(&img, &AugmentParams { noise_frac: frac, ..Default::default() }, &mut rng).unwrap();
        let changed = img.pixels().zip(out.pixels()).filter(|(a, b)| a != b).count();
        prop_assert_eq!(changed, agro::yieldkit::augment::noise_pixel_count(w, h, frac));
        let same = augment(&img, &AugmentParams::default(), &mut rng).unwrap();
        prop_assert_eq!(same, img);
    }

    #[test]
    fn kinematics_respect_vehicle_limits(
        steps in prop::collection::vec((-1.5..1.5f64, -1.0..1.0f64), 1..200),
        heading in -3.2..3.2f64,
    ) {
        let p = VehicleParams::default();
        let mut s = RoverState::at(10.0, 10.0, heading);
        let mut replay = s;
        for &(throttle, steer) in &steps {
            let next = step_kinematics(&s, throttle, steer, 0.05, &p);
            prop_assert!(next.speed >= 0.0 && next.speed <= p.max_speed);
            prop_assert!((next.speed - s.speed).abs() <= p.max_decel.max(p.max_accel) * 0.05 + 1e-12);
            prop_assert!(next.steer_angle.abs() <= p.max_steer);
            prop_assert!((next.x - s.x).hypot(next.y - s.y) <= s.speed * 0.05 + 1e-12);
            prop_assert_eq!(next.heading, wrap_angle(next.heading));
            s = next;
        }
        for &(throttle, steer) in &steps {
            replay = step_kinematics(&replay, throttle, steer, 0.05, &p);
        }
        prop_assert_eq!(s, replay);
    }

    #[test]
    fn clear_segments_cross_only_free_cells(
        obstacles in prop::collection::vec(obstacle(), 0..6),
        cell in prop::sample::select(vec![0.25, 0.5, 1.0]),
        inflation in 0.0..1.0f64,
        ends in (0.5..19.5f64, 0.5..19.5f64, 0.5..19.5f64, 0.5..19.5f64),
    ) {
        let map = obstacles.iter().fold(FieldMap::new(20.0, 20.0), |m, o| m.with_obstacle(*o));
        let grid = rasterize(&map, cell, inflation).unwrap();
        let (x0, y0, x1, y1) = ends;
        let n = 200;
        let pts: Vec<(f64, f64)> = (0..=n).map(|i| {
            let t = i as f64 / n as f64;
            (x0 + t * (x1 - x0), y0 + t * (y1 - y0))
        }).collect();
        // Any cell holding a point this far from the inflated obstacles and
        // field edges is itself clear of them.
        let safe = pts.iter().all(|&(x, y)| map.clearance(x, y) > inflation + cell * std::f64::consts::SQRT_2);
        if safe {
            for &(x, y) in &pts {
                let c = grid.cell_at(x, y).unwrap();
                prop_assert!(grid.is_free(c), "({}, {}) in occupied {:?}", x, y, c);
            }
        }
        // And every obstacle point lands in an occupied cell.
        for o in &map.obstacles {
            let (x, y) = match *o {
                Obstacle::Circle { x, y, .. } => (x, y),
                Obstacle::Rect { x_min, y_min, x_max, y_max } => ((x_min + x_max) / 2.0, (y_min + y_max) / 2.0),
            };
            if let Some(c) = grid.cell_at(x, y) {
                prop_assert!(grid.is_occupied(c));
            }
        }
    }

    #[test]
    fn shortest_paths_are_symmetric(rows in 1usize..12, cols in 1usize..12, walls in prop::collection::vec(any::<bool>(), 144), s in (0usize..144, 0usize..144)) {
        let mut g = OccupancyGrid::free(cols, rows, 0.5);
        for c in Vec::from_iter(g.cells()) {
            g.set_occupied(c, walls[c.row * 12 + c.col] && (c.row + c.col) % 3 == 0);
        }
        let a = Cell::new(s.0 / 12 % rows, s.0 % 12 % cols);
        let b = Cell::new(s.1 / 12 % rows, s.1 % 12 % cols);
        g.set_occupied(a, false);
        g.set_occupied(b, false);
        match (dijkstra_plan(&g, a, b), dijkstra_plan(&g, b, a)) {
            (Ok(p), Ok(q)) => prop_assert!((p.cost - q.cost).abs() < 1e-9),
            (Err(_), Err(_)) => {}
            (p, q) => prop_assert!(false, "asymmetric reachability: {:?} / {:?}", p.is_ok(), q.is_ok()),
        }
    }

    #[test]
    fn empty_scan_means_straight_at_the_target(x in 0.0..50.0f64, y in 0.0..50.0f64, h in -3.0..3.0f64, tx in 0.0..50.0f64, ty in 0.0..50.0f64) {
        prop_assume!((tx - x).hypot(ty - y) > 0.1);
        let scan = LidarScan { timestamp: 0.0, beams: (0..16).map(|i| Beam { bearing: i as f64 * 0.3 - 2.4, range: None }).collect() };
        let d = bendyruler_step(&RoverState::at(x, y, h), (tx, ty), &scan, &BendyConfig::default());
        prop_assert!(d.clear);
        prop_assert_eq!(d.deviation, 0.0);
        prop_assert!((d.chosen_bearing - (ty - y).atan2(tx - x)).abs() < 1e-12);
    }
}

fn command() -> impl Strategy<Value = Action> {
    prop_oneof![
        Just(Action::Arm),
        Just(Action::Disarm),
        Just(Action::StartMission),
        Just(Action::SetMode { mode: ModeRequest::Hold }),
        Just(Action::SetMode { mode: ModeRequest::Auto }),
        (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(throttle, steer)| Action::ManualOverride { throttle, steer }),
        Just(Action::UploadMission { mission: serde_json::json!({"waypoints": [{"x": 30.0, "y": 10.0, "trigger_camera": true}]}) }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Random operator input never drives the machine off its graph, and the
    /// rover never moves on its own while disarmed or holding.
    #[test]
    fn operator_commands_respect_the_state_machine(script in prop::collection::vec((command(), 1usize..30), 1..25)) {
        let map = FieldMap::new(40.0, 20.0);
        let mut sim = Simulation::new(map, &[], RoverState::at(3.0, 10.0, 0.0), SimConfig { seed: 1, ..SimConfig::default() }).unwrap();
        sim.upload(MissionPlan::new(vec![Waypoint::new(30.0, 10.0)])).unwrap();
        let mut seq = 0;
        for (action, ticks) in script {
            seq += 1;
            let before = sim.mode();
            let ack = sim.apply_command(&Command { seq, action });
            prop_assert_eq!(ack.seq, Some(seq));
            prop_assert!(before == sim.mode() || before.can_transition(sim.mode()));
            for _ in 0..ticks {
                let mode = sim.mode();
                let speed = sim.state().speed;
                sim.rc_heartbeat();
                sim.tick().unwrap();
                if matches!(mode, MissionState::Disarmed | MissionState::Hold | MissionState::MissionComplete) {
                    prop_assert!(sim.state().speed <= speed, "accelerated while {}", mode);
                }
            }
        }
    }
}
