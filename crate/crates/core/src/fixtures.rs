//! Small hand-built tasks with known dependency structure.

use crate::taskgen::{
    DependencyGraph, Location, Orientation, Piece, PieceId, PieceInit, TaskInstance, VoxelGrid,
};

/// A row of `n` single-voxel pieces standing on a base slab, with the given
/// edges. Pieces listed in `down` start upside down on the table; pieces in
/// `inserted` start seated.
pub fn custom_task(
    n: u32,
    edges: &[(PieceId, PieceId)],
    down: &[PieceId],
    inserted: &[PieceId],
) -> TaskInstance {
    let width = n.max(1) as usize;
    let mut grid = VoxelGrid::new([width, 1, 2]);
    for x in 0..width {
        grid.set([x, 0, 0], PieceId::BASE.0);
    }
    let mut pieces = vec![Piece {
        id: PieceId::BASE,
        color: PieceId::BASE.color().to_string(),
        cells: grid.cells_of(PieceId::BASE),
    }];
    for k in 0..n {
        let id = PieceId(k + 2);
        grid.set([k as usize, 0, 1], id.0);
        pieces.push(Piece {
            id,
            color: id.color().to_string(),
            cells: vec![[k as usize, 0, 1]],
        });
    }
    let nodes: Vec<PieceId> = (0..n).map(|k| PieceId(k + 2)).collect();
    let deps = DependencyGraph::new(nodes.clone(), edges.to_vec()).expect("acyclic fixture");
    let init = nodes
        .iter()
        .map(|&piece| PieceInit {
            piece,
            location: if inserted.contains(&piece) {
                Location::InBoard
            } else {
                Location::OnTable
            },
            orientation: if down.contains(&piece) && !inserted.contains(&piece) {
                Orientation::Down
            } else {
                Orientation::Up
            },
        })
        .collect();
    TaskInstance {
        task_id: 0,
        seed: 0,
        grid,
        pieces,
        deps,
        init,
    }
}

/// `custom_task` with the chain `2 -> 3 -> ... -> n+1`.
pub fn chain_task(n: u32, down: &[PieceId], inserted: &[PieceId]) -> TaskInstance {
    let edges: Vec<(PieceId, PieceId)> = (2..n + 1).map(|k| (PieceId(k), PieceId(k + 1))).collect();
    custom_task(n, &edges, down, inserted)
}
