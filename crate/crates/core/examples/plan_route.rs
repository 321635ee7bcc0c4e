//! Rasterize the orchard map and plan a grid route between two aisles.
//!
//! ```text
//! cargo run --example plan_route
//! ```

use agro::nav::dijkstra_plan;
use agro::world::{rasterize, FieldMap};

fn main() -> agro::Result<()> {
    let map = FieldMap::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/orchard.json"))?;
    let grid = rasterize(&map, 0.5, 0.9)?;
    println!("grid {}x{} cells, {} occupied", grid.cols, grid.rows, grid.occupied_count());

    let (from, to) = ((3.0, 10.5), (54.0, 15.5));
    let start = grid.nearest_free(from.0, from.1).expect("free start");
    let goal = grid.nearest_free(to.0, to.1).expect("free goal");
    let path = dijkstra_plan(&grid, start, goal)?;
    println!(
        "path {:.2} m over {} cells ({} straight, {} diagonal steps)",
        path.cost,
        path.cells.len(),
        path.steps.straight,
        path.steps.diagonal
    );

    // Coarse picture: every other row and column, y up.
    let on_path: std::collections::HashSet<_> = path.cells.iter().copied().collect();
    for row in (0..grid.rows).rev().step_by(2) {
        let line: String = (0..grid.cols)
            .step_by(2)
            .map(|col| {
                let c = agro::world::Cell::new(row, col);
                if on_path.contains(&c) || on_path.contains(&agro::world::Cell::new(row, col + 1)) {
                    '*'
                } else if grid.is_occupied(c) {
                    '#'
                } else {
                    '.'
                }
            })
            .collect();
        println!("{line}");
    }
    Ok(())
}
