//! Score a detector against ground truth: greedy IoU matching, confusion
//! matrix, accuracy, AP@0.5 and mAP@0.5:0.95.
//!
//! ```text
//! cargo run --example evaluate_detections
//! ```

use std::collections::BTreeMap;

use agro::yieldkit::{evaluate, BoundingBox, EvalConfig};
use rand::Rng;

fn main() -> agro::Result<()> {
    // Ten images of fruit. The fake detector finds most fruit with a little
    // jitter, misses some, and hallucinates the odd leaf.
    let mut rng = agro::rng::substream(5, "example");
    let mut gt = BTreeMap::new();
    let mut pred = BTreeMap::new();
    for i in 0..10 {
        let mut g = vec![];
        let mut p = vec![];
        for _ in 0..rng.random_range(3..8) {
            let (x, y) = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
            let b = BoundingBox::new(x, y, 0.08, 0.08)?;
            g.push(b);
            if rng.random_bool(0.85) {
                let j = || 0.006;
                let d = BoundingBox::new(x + rng.random_range(-j()..j()), y + rng.random_range(-j()..j()), 0.08, 0.08)?;
                p.push(d.with_confidence(rng.random_range(0.4..0.99)));
            }
        }
        if rng.random_bool(0.4) {
            p.push(BoundingBox::new(0.5, 0.5, 0.05, 0.05)?.with_confidence(rng.random_range(0.2..0.6)));
        }
        gt.insert(format!("img{i:02}"), g);
        pred.insert(format!("img{i:02}"), p);
    }

    let report = evaluate(&gt, &pred, &EvalConfig::default())?;
    let c = report.confusion;
    println!("tp {}  fn {}  fp {}  (tn is not defined for detection)", c.tp, c.fn_, c.fp);
    println!("accuracy  {:.2}%", report.accuracy_pct.unwrap_or(f64::NAN));
    println!("AP@0.5    {:.4}", report.ap50.unwrap_or(f64::NAN));
    println!("mAP@.5:.95 {:.4}", report.map50_95.unwrap_or(f64::NAN));
    for img in &report.per_image {
        println!("  {}: tp {} fn {} fp {}", img.image_id, img.tp, img.fn_, img.fp);
    }
    Ok(())
}
