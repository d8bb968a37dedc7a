//! Generates a board, prints it layer by layer with its dependency graph and
//! starting configuration, then checks solvability on a small batch.
//!
//!     cargo run --example generate_tasks -- [SEED]

use interlock::taskgen::{generate_task, validate_solvable, Location};
use interlock::{GenParams, PieceId};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let params = GenParams::default();
    let task = generate_task(&params, seed, 0).expect("default parameters generate");

    let [dx, dy, dz] = task.grid.dims;
    println!("board {dx}x{dy}x{dz}, {} movable pieces", task.movable().count());
    for z in (0..dz).rev() {
        println!("layer z={z}");
        for y in 0..dy {
            let row: String = (0..dx)
                .map(|x| match task.grid.get([x, y, z]) {
                    0 => '.',
                    id => PieceId(id).color().chars().next().unwrap().to_ascii_uppercase(),
                })
                .collect();
            println!("  {row}");
        }
    }

    println!("insert-before edges:");
    for (a, b) in task.deps.edges() {
        println!("  {a} -> {b}");
    }
    let order = task.deps.topological_order().expect("acyclic");
    println!("one valid order: {}", order.iter().map(|p| p.color()).collect::<Vec<_>>().join(", "));

    println!("starting configuration:");
    for init in &task.init {
        let place = match init.location {
            Location::OnTable => "on table",
            Location::InBoard => "already seated",
            Location::InHand => "in hand",
        };
        println!("  {:<8} {place}, {:?}", init.piece.to_string(), init.orientation);
    }

    let solved = (0..200)
        .filter(|&s| validate_solvable(&generate_task(&params, s, s).unwrap(), 50))
        .count();
    println!("expert solves {solved}/200 generated tasks within 50 steps");
}
