//! Procedural generation of interlocking assembly boards.
//!
//! A board starts as a solid base slab (piece 1). Bricks are then added one
//! at a time. Every brick overlaps something that already exists: the first
//! one cuts into the base, later ones cut into an earlier brick. Voxels
//! shared by two bricks (the critical voxels) are given to exactly one of
//! them, and that choice fixes which of the two must be seated first.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Color names addressed by prompts and action text. Piece `i` is
/// `PALETTE[i - 1]`; the base board takes the first entry.
pub const PALETTE: [&str; 14] = [
    "gray", "red", "green", "blue", "yellow", "purple", "orange", "pink", "brown", "cyan",
    "white", "black", "magenta", "olive",
];

/// Upper bound on the number of bricks a board may carry.
pub const MAX_BRICKS: u32 = PALETTE.len() as u32 - 1;

/// Number of keeper flips tolerated before a brick is resampled.
const MAX_FLIPS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PieceId(pub u32);

impl PieceId {
    pub const BASE: PieceId = PieceId(1);

    pub fn color(self) -> &'static str {
        PALETTE.get(self.0 as usize - 1).copied().unwrap_or("unknown")
    }

    pub fn from_color(color: &str) -> Option<PieceId> {
        PALETTE
            .iter()
            .position(|c| *c == color)
            .map(|i| PieceId(i as u32 + 1))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PieceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.color())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    OnTable,
    InBoard,
    InHand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Up,
    Down,
}

pub type Cell = [usize; 3];

/// Dense 3-D array of piece ids; 0 marks an empty voxel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub cells: Vec<u32>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3]) -> Self {
        Self {
            dims,
            cells: vec![0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn index(&self, [x, y, z]: Cell) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn coords(&self, idx: usize) -> Cell {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    pub fn contains(&self, c: Cell) -> bool {
        c[0] < self.dims[0] && c[1] < self.dims[1] && c[2] < self.dims[2]
    }

    pub fn get(&self, c: Cell) -> u32 {
        self.cells[self.index(c)]
    }

    pub fn set(&mut self, c: Cell, v: u32) {
        let i = self.index(c);
        self.cells[i] = v;
    }

    pub fn cells_of(&self, id: PieceId) -> Vec<Cell> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == id.0)
            .map(|(i, _)| self.coords(i))
            .collect()
    }

    pub fn nonzero_count(&self) -> usize {
        self.cells.iter().filter(|&&v| v != 0).count()
    }

    /// Highest occupied layer count (`max_height`).
    pub fn max_height(&self) -> usize {
        let layer = self.dims[0] * self.dims[1];
        (0..self.dims[2])
            .rev()
            .find(|&z| self.cells[z * layer..(z + 1) * layer].iter().any(|&v| v != 0))
            .map_or(0, |z| z + 1)
    }

    /// Copy keeping only the lowest `height` layers.
    pub fn cropped(&self, height: usize) -> VoxelGrid {
        let layer = self.dims[0] * self.dims[1];
        VoxelGrid {
            dims: [self.dims[0], self.dims[1], height],
            cells: self.cells[..height * layer].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Piece {
    pub id: PieceId,
    pub color: String,
    pub cells: Vec<Cell>,
}

/// Two bricks whose boxes overlapped when the later one was placed, and
/// which of them kept the critical voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intersection {
    pub earlier: PieceId,
    pub later: PieceId,
    pub keeper: PieceId,
}

impl Intersection {
    /// The keeper protrudes through the other brick's opening, so it is the
    /// predecessor.
    pub fn edge(&self) -> (PieceId, PieceId) {
        if self.keeper == self.earlier {
            (self.earlier, self.later)
        } else {
            (self.later, self.earlier)
        }
    }

    fn flipped(&self) -> Intersection {
        let keeper = if self.keeper == self.earlier {
            self.later
        } else {
            self.earlier
        };
        Intersection { keeper, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Board {
    pub grid: VoxelGrid,
    pub pieces: Vec<Piece>,
    pub intersections: Vec<Intersection>,
    pub max_height: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("dependency graph contains a cycle")]
    Cycle,
    #[error("edge endpoint {0:?} is not a movable piece")]
    UnknownPiece(PieceId),
    #[error("self-loop on {0:?}")]
    SelfLoop(PieceId),
}

/// Directed acyclic graph over movable pieces; `a -> b` means `a` must be
/// seated before `b`. The base board is implicit and never a node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRecord", into = "GraphRecord")]
pub struct DependencyGraph {
    nodes: Vec<PieceId>,
    edges: Vec<(PieceId, PieceId)>,
    preds: Vec<Vec<PieceId>>,
    succs: Vec<Vec<PieceId>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    nodes: Vec<PieceId>,
    edges: Vec<(PieceId, PieceId)>,
}

impl TryFrom<GraphRecord> for DependencyGraph {
    type Error = GraphError;
    fn try_from(r: GraphRecord) -> Result<Self, GraphError> {
        DependencyGraph::new(r.nodes, r.edges)
    }
}

impl From<DependencyGraph> for GraphRecord {
    fn from(g: DependencyGraph) -> Self {
        GraphRecord {
            nodes: g.nodes,
            edges: g.edges,
        }
    }
}

impl DependencyGraph {
    pub fn new(
        mut nodes: Vec<PieceId>,
        edges: Vec<(PieceId, PieceId)>,
    ) -> Result<Self, GraphError> {
        nodes.sort();
        nodes.dedup();
        let width = nodes.last().map_or(0, |n| n.index() + 1);
        let mut preds = vec![Vec::new(); width];
        let mut succs = vec![Vec::new(); width];
        for &(a, b) in &edges {
            for p in [a, b] {
                if nodes.binary_search(&p).is_err() {
                    return Err(GraphError::UnknownPiece(p));
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            succs[a.index()].push(b);
            preds[b.index()].push(a);
        }
        for v in preds.iter_mut().chain(succs.iter_mut()) {
            v.sort();
            v.dedup();
        }
        let g = Self {
            nodes,
            edges,
            preds,
            succs,
        };
        if g.topological_order().is_none() {
            return Err(GraphError::Cycle);
        }
        Ok(g)
    }

    pub fn nodes(&self) -> &[PieceId] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(PieceId, PieceId)] {
        &self.edges
    }

    pub fn predecessors(&self, p: PieceId) -> &[PieceId] {
        self.preds.get(p.index()).map_or(&[], |v| v.as_slice())
    }

    pub fn successors(&self, p: PieceId) -> &[PieceId] {
        self.succs.get(p.index()).map_or(&[], |v| v.as_slice())
    }

    /// Kahn's algorithm, smallest ready id first; `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<PieceId>> {
        let mut indeg: Vec<usize> = vec![0; self.preds.len()];
        for &n in &self.nodes {
            indeg[n.index()] = self.predecessors(n).len();
        }
        let mut ready: BTreeSet<PieceId> = self
            .nodes
            .iter()
            .copied()
            .filter(|n| indeg[n.index()] == 0)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_first() {
            order.push(n);
            for &s in self.successors(n) {
                indeg[s.index()] -= 1;
                if indeg[s.index()] == 0 {
                    ready.insert(s);
                }
            }
        }
        (order.len() == self.nodes.len()).then_some(order)
    }
}

fn has_cycle(edges: impl Iterator<Item = (PieceId, PieceId)>) -> bool {
    let edges: Vec<_> = edges.collect();
    let nodes: Vec<PieceId> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    matches!(DependencyGraph::new(nodes, edges), Err(GraphError::Cycle))
}

/// Inclusive integer range, serialized as `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange(pub u32, pub u32);

impl IntRange {
    fn sample(&self, rng: &mut impl Rng) -> u32 {
        rng.gen_range(self.0..=self.1)
    }
    fn is_valid(&self) -> bool {
        self.0 <= self.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub base_x: IntRange,
    pub base_y: IntRange,
    pub base_z: IntRange,
    pub bricks: IntRange,
    pub brick_x: IntRange,
    pub brick_y: IntRange,
    pub brick_z: IntRange,
    pub max_attempts: u32,
    /// Probability that a table piece starts upside down.
    pub q_down: f64,
    /// Probability that one non-root piece starts seated out of order.
    pub r_bad: f64,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            base_x: IntRange(8, 12),
            base_y: IntRange(8, 12),
            base_z: IntRange(2, 3),
            bricks: IntRange(2, 6),
            brick_x: IntRange(2, 6),
            brick_y: IntRange(2, 6),
            brick_z: IntRange(1, 3),
            max_attempts: 200,
            q_down: 0.3,
            r_bad: 0.2,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), TaskGenError> {
        let ranges = [
            ("base_x", self.base_x),
            ("base_y", self.base_y),
            ("base_z", self.base_z),
            ("bricks", self.bricks),
            ("brick_x", self.brick_x),
            ("brick_y", self.brick_y),
            ("brick_z", self.brick_z),
        ];
        for (name, r) in ranges {
            if !r.is_valid() {
                return Err(TaskGenError::InvalidParams(format!("{name} range is empty")));
            }
            if name != "bricks" && r.0 == 0 {
                return Err(TaskGenError::InvalidParams(format!("{name} must be positive")));
            }
        }
        if self.bricks.1 > MAX_BRICKS {
            return Err(TaskGenError::InvalidParams(format!(
                "at most {MAX_BRICKS} bricks fit the color palette"
            )));
        }
        for (name, p) in [("q_down", self.q_down), ("r_bad", self.r_bad)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TaskGenError::InvalidParams(format!("{name} outside [0, 1]")));
            }
        }
        if self.max_attempts == 0 {
            return Err(TaskGenError::InvalidParams("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TaskGenError {
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("brick {brick:?} could not be placed after {attempts} attempts")]
    GenerationExhausted { brick: PieceId, attempts: u32 },
}

fn face_connected(cells: &[Cell]) -> bool {
    let Some(&start) = cells.first() else {
        return false;
    };
    let set: BTreeSet<Cell> = cells.iter().copied().collect();
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some([x, y, z]) = queue.pop_front() {
        let neighbors = [
            [x.wrapping_sub(1), y, z],
            [x + 1, y, z],
            [x, y.wrapping_sub(1), z],
            [x, y + 1, z],
            [x, y, z.wrapping_sub(1)],
            [x, y, z + 1],
        ];
        for n in neighbors {
            if set.contains(&n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen.len() == set.len()
}

fn sample_box(
    rng: &mut impl Rng,
    params: &GenParams,
    base: [usize; 3],
    anchor: Cell,
    cap_z: usize,
) -> ([usize; 3], [usize; 3]) {
    let sx = (params.brick_x.sample(rng) as usize).min(base[0]);
    let sy = (params.brick_y.sample(rng) as usize).min(base[1]);
    let sz = (params.brick_z.sample(rng) as usize).min(cap_z);
    // Footprint stays inside the base and the box covers the anchor voxel.
    let px = rng.gen_range(anchor[0].saturating_sub(sx - 1)..=anchor[0].min(base[0] - sx));
    let py = rng.gen_range(anchor[1].saturating_sub(sy - 1)..=anchor[1].min(base[1] - sy));
    let pz = rng.gen_range(anchor[2].saturating_sub(sz - 1)..=anchor[2].min(cap_z - sz));
    ([px, py, pz], [sx, sy, sz])
}

/// Builds a board by stacking intersecting bricks onto a sampled base.
pub fn generate_board(params: &GenParams, seed: u64) -> Result<Board, TaskGenError> {
    params.validate()?;
    let mut rng = rng::stream(seed, &[rng::label("board")]);
    let base = [
        params.base_x.sample(&mut rng) as usize,
        params.base_y.sample(&mut rng) as usize,
        params.base_z.sample(&mut rng) as usize,
    ];
    let n_bricks = params.bricks.sample(&mut rng);
    let cap_z = base[2] + n_bricks as usize * params.brick_z.1 as usize;
    let mut grid = VoxelGrid::new([base[0], base[1], cap_z]);
    for z in 0..base[2] {
        for y in 0..base[1] {
            for x in 0..base[0] {
                grid.set([x, y, z], PieceId::BASE.0);
            }
        }
    }
    let mut max_height = base[2];
    let mut intersections: Vec<Intersection> = Vec::new();

    for b in 0..n_bricks {
        let id = PieceId(b + 2);
        let mut placed = false;
        for _ in 0..params.max_attempts {
            let anchor_owner = if b == 0 {
                PieceId::BASE
            } else {
                PieceId(rng.gen_range(2..id.0))
            };
            let owned = grid.cells_of(anchor_owner);
            let anchor = owned[rng.gen_range(0..owned.len())];
            let (pos, size) = sample_box(&mut rng, params, base, anchor, cap_z);
            let boxed: Vec<Cell> = (pos[2]..pos[2] + size[2])
                .flat_map(|z| {
                    (pos[1]..pos[1] + size[1])
                        .flat_map(move |y| (pos[0]..pos[0] + size[0]).map(move |x| [x, y, z]))
                })
                .collect();
            let overlapped: BTreeSet<PieceId> = boxed
                .iter()
                .map(|&c| grid.get(c))
                .filter(|&v| v > 1)
                .map(PieceId)
                .collect();
            if b > 0 && overlapped.is_empty() {
                continue;
            }

            let mut fresh: Vec<Intersection> = Vec::new();
            let mut flips = 0;
            let mut acyclic = true;
            for &earlier in &overlapped {
                let keeper = if rng.gen_bool(0.5) { earlier } else { id };
                fresh.push(Intersection {
                    earlier,
                    later: id,
                    keeper,
                });
                let cyclic = |fresh: &[Intersection]| {
                    has_cycle(intersections.iter().chain(fresh).map(|r| r.edge()))
                };
                if cyclic(&fresh) {
                    let last = fresh.len() - 1;
                    fresh[last] = fresh[last].flipped();
                    flips += 1;
                    if flips > MAX_FLIPS || cyclic(&fresh) {
                        acyclic = false;
                        break;
                    }
                }
            }
            if !acyclic {
                continue;
            }

            let mut trial = grid.clone();
            for &c in &boxed {
                let v = trial.get(c);
                let keep_existing = fresh
                    .iter()
                    .any(|r| r.earlier.0 == v && r.keeper == r.earlier);
                if !keep_existing {
                    trial.set(c, id.0);
                }
            }
            let touched = std::iter::once(PieceId::BASE)
                .chain(overlapped.iter().copied())
                .chain(std::iter::once(id));
            if !touched
                .into_iter()
                .all(|p| face_connected(&trial.cells_of(p)))
            {
                continue;
            }

            grid = trial;
            intersections.extend(fresh);
            max_height = max_height.max(pos[2] + size[2]);
            placed = true;
            break;
        }
        if !placed {
            return Err(TaskGenError::GenerationExhausted {
                brick: id,
                attempts: params.max_attempts,
            });
        }
    }

    debug_assert_eq!(max_height, grid.max_height());
    let grid = grid.cropped(max_height);
    let pieces = (1..=n_bricks + 1)
        .map(PieceId)
        .map(|id| Piece {
            id,
            color: id.color().to_string(),
            cells: grid.cells_of(id),
        })
        .collect();
    Ok(Board {
        grid,
        pieces,
        intersections,
        max_height,
    })
}

/// One edge per intersecting brick pair, oriented from the keeper of the
/// critical voxels. An edge that would close a cycle is reversed; boards from
/// [`generate_board`] never need this.
pub fn derive_dependencies(board: &Board) -> DependencyGraph {
    let nodes: Vec<PieceId> = board
        .pieces
        .iter()
        .map(|p| p.id)
        .filter(|&id| id != PieceId::BASE)
        .collect();
    let mut edges: Vec<(PieceId, PieceId)> = Vec::new();
    for rec in &board.intersections {
        let (a, b) = rec.edge();
        edges.push((a, b));
        if has_cycle(edges.iter().copied()) {
            edges.pop();
            edges.push((b, a));
        }
    }
    DependencyGraph::new(nodes, edges).expect("edge orientation keeps the graph acyclic")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PieceInit {
    pub piece: PieceId,
    pub location: Location,
    pub orientation: Orientation,
}

/// A goal board, its dependency graph and a starting configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaskRecord", into = "TaskRecord")]
pub struct TaskInstance {
    pub task_id: u64,
    pub seed: u64,
    pub grid: VoxelGrid,
    pub pieces: Vec<Piece>,
    pub deps: DependencyGraph,
    pub init: Vec<PieceInit>,
}

/// On-disk layout of a task (one JSON object per line in a task-set file).
#[derive(Serialize, Deserialize)]
struct TaskRecord {
    task_id: u64,
    seed: u64,
    dims: [usize; 3],
    cells: Vec<u32>,
    pieces: Vec<Piece>,
    edges: Vec<(PieceId, PieceId)>,
    init: Vec<PieceInit>,
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("malformed task: {0}")]
    Malformed(String),
}

impl TryFrom<TaskRecord> for TaskInstance {
    type Error = TaskError;
    fn try_from(r: TaskRecord) -> Result<Self, TaskError> {
        let grid = VoxelGrid {
            dims: r.dims,
            cells: r.cells,
        };
        if grid.cells.len() != grid.dims.iter().product::<usize>() {
            return Err(TaskError::Malformed("cell array does not match dims".into()));
        }
        let nodes = r
            .pieces
            .iter()
            .map(|p| p.id)
            .filter(|&p| p != PieceId::BASE)
            .collect();
        let deps = DependencyGraph::new(nodes, r.edges)?;
        let task = TaskInstance {
            task_id: r.task_id,
            seed: r.seed,
            grid,
            pieces: r.pieces,
            deps,
            init: r.init,
        };
        task.check()?;
        Ok(task)
    }
}

impl From<TaskInstance> for TaskRecord {
    fn from(t: TaskInstance) -> Self {
        TaskRecord {
            task_id: t.task_id,
            seed: t.seed,
            dims: t.grid.dims,
            cells: t.grid.cells,
            pieces: t.pieces,
            edges: t.deps.edges().to_vec(),
            init: t.init,
        }
    }
}

impl TaskInstance {
    /// Movable pieces in id order.
    pub fn movable(&self) -> impl Iterator<Item = PieceId> + '_ {
        self.pieces
            .iter()
            .map(|p| p.id)
            .filter(|&id| id != PieceId::BASE)
    }

    pub fn piece(&self, id: PieceId) -> Option<&Piece> {
        self.pieces.get(id.index().wrapping_sub(1)).filter(|p| p.id == id)
    }

    /// Colors of the movable pieces, palette order.
    pub fn colors(&self) -> Vec<&'static str> {
        self.movable().map(PieceId::color).collect()
    }

    fn check(&self) -> Result<(), TaskError> {
        let bad = |m: &str| Err(TaskError::Malformed(m.to_string()));
        for (i, p) in self.pieces.iter().enumerate() {
            if p.id != PieceId(i as u32 + 1) || p.color != p.id.color() {
                return bad("piece ids must be 1..n with palette colors");
            }
            if p.cells.is_empty() || !face_connected(&p.cells) {
                return bad("piece cells must be nonempty and face-connected");
            }
            for &c in &p.cells {
                if !self.grid.contains(c) || self.grid.get(c) != p.id.0 {
                    return bad("piece cells disagree with the goal grid");
                }
            }
        }
        if self.pieces.is_empty() {
            return bad("missing base board");
        }
        let total: usize = self.pieces.iter().map(|p| p.cells.len()).sum();
        if total != self.grid.nonzero_count() {
            return bad("grid holds cells not owned by any piece");
        }
        let movable: Vec<PieceId> = self.movable().collect();
        let mut listed: Vec<PieceId> = self.init.iter().map(|i| i.piece).collect();
        listed.sort();
        if listed != movable {
            return bad("init must list every movable piece exactly once");
        }
        if self.init.iter().any(|i| i.location == Location::InHand) {
            return bad("no piece may start in hand");
        }
        Ok(())
    }
}

/// Places every movable piece on the table (sometimes upside down) and, with
/// probability `r_bad`, seats one piece that has a predecessor before it.
pub fn sample_initial_config(
    board: &Board,
    deps: &DependencyGraph,
    params: &GenParams,
    seed: u64,
    task_id: u64,
) -> TaskInstance {
    TaskInstance {
        task_id,
        seed,
        grid: board.grid.clone(),
        pieces: board.pieces.clone(),
        deps: deps.clone(),
        init: sample_init(deps, params, seed),
    }
}

fn sample_init(deps: &DependencyGraph, params: &GenParams, seed: u64) -> Vec<PieceInit> {
    let mut rng = rng::stream(seed, &[rng::label("init")]);
    let mut init: Vec<PieceInit> = deps
        .nodes()
        .iter()
        .map(|&piece| PieceInit {
            piece,
            location: Location::OnTable,
            orientation: if rng.gen_bool(params.q_down) {
                Orientation::Down
            } else {
                Orientation::Up
            },
        })
        .collect();
    if rng.gen_bool(params.r_bad) {
        let eligible: Vec<usize> = init
            .iter()
            .enumerate()
            .filter(|(_, i)| !deps.predecessors(i.piece).is_empty())
            .map(|(k, _)| k)
            .collect();
        if !eligible.is_empty() {
            let k = eligible[rng.gen_range(0..eligible.len())];
            init[k].location = Location::InBoard;
            init[k].orientation = Orientation::Up;
        }
    }
    init
}

impl TaskInstance {
    /// The same board with a freshly sampled starting configuration.
    pub fn reinitialized(&self, params: &GenParams, seed: u64) -> TaskInstance {
        TaskInstance {
            init: sample_init(&self.deps, params, seed),
            ..self.clone()
        }
    }

    /// Whether some piece starts seated.
    pub fn has_preinserted(&self) -> bool {
        self.init.iter().any(|i| i.location == Location::InBoard)
    }
}

/// Board, dependencies and initial configuration from one seed.
pub fn generate_task(params: &GenParams, seed: u64, task_id: u64) -> Result<TaskInstance, TaskGenError> {
    let board = generate_board(params, seed)?;
    let deps = derive_dependencies(&board);
    Ok(sample_initial_config(&board, &deps, params, seed, task_id))
}

/// Like [`generate_task`], reseeding on exhaustion.
pub fn generate_task_reseeding(
    params: &GenParams,
    seed: u64,
    task_id: u64,
) -> Result<TaskInstance, TaskGenError> {
    let mut last = None;
    for retry in 0..16u64 {
        let s = if retry == 0 {
            seed
        } else {
            rng::derive_seed(seed, &[rng::label("reseed"), retry])
        };
        match generate_task(params, s, task_id) {
            Ok(t) => return Ok(t),
            Err(e @ TaskGenError::GenerationExhausted { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// True iff the expert, with no primitive failures, assembles the board
/// within `episode_len` steps.
pub fn validate_solvable(task: &TaskInstance, episode_len: u32) -> bool {
    crate::expert::expert_solves(task, episode_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenParams {
        GenParams::default()
    }

    #[test]
    fn no_bricks_leaves_only_the_base() {
        let params = GenParams {
            bricks: IntRange(0, 0),
            ..small()
        };
        let board = generate_board(&params, 3).unwrap();
        assert_eq!(board.pieces.len(), 1);
        assert!(board.grid.cells.iter().all(|&v| v == 1));
        assert!(derive_dependencies(&board).edges().is_empty());
    }

    #[test]
    fn single_tall_brick_raises_max_height_to_four() {
        let params = GenParams {
            base_x: IntRange(12, 12),
            base_y: IntRange(12, 12),
            base_z: IntRange(3, 3),
            bricks: IntRange(1, 1),
            brick_z: IntRange(2, 2),
            ..small()
        };
        // Any seed whose anchor sits in the top base layer yields a brick
        // spanning layers 2..4.
        let board = (0..64)
            .map(|s| generate_board(&params, s).unwrap())
            .find(|b| b.max_height == 4)
            .expect("some seed reaches a 4th layer");
        assert_eq!(board.grid.dims[2], 4);
        assert_eq!(board.grid.max_height(), 4);
        // Base cells under the brick were rewritten, leaving a hole in it.
        let brick = &board.pieces[1];
        assert!(brick.cells.iter().any(|c| c[2] < 3));
    }

    #[test]
    fn single_brick_has_no_edges() {
        let params = GenParams {
            bricks: IntRange(1, 1),
            ..small()
        };
        let board = generate_board(&params, 11).unwrap();
        assert!(derive_dependencies(&board).edges().is_empty());
    }

    #[test]
    fn keeper_of_critical_voxels_is_the_predecessor() {
        let red = PieceId(2);
        let blue = PieceId(3);
        let board = Board {
            grid: VoxelGrid::new([1, 1, 1]),
            pieces: vec![
                Piece { id: PieceId::BASE, color: "gray".into(), cells: vec![] },
                Piece { id: red, color: "red".into(), cells: vec![] },
                Piece { id: blue, color: "blue".into(), cells: vec![] },
            ],
            intersections: vec![Intersection { earlier: red, later: blue, keeper: red }],
            max_height: 1,
        };
        assert_eq!(derive_dependencies(&board).edges(), &[(red, blue)]);
        let mut flipped = board.clone();
        flipped.intersections[0].keeper = blue;
        assert_eq!(derive_dependencies(&flipped).edges(), &[(blue, red)]);
    }

    #[test]
    fn cyclic_records_are_reoriented() {
        let (a, b, c) = (PieceId(2), PieceId(3), PieceId(4));
        let board = Board {
            grid: VoxelGrid::new([1, 1, 1]),
            pieces: [PieceId::BASE, a, b, c]
                .iter()
                .map(|&id| Piece { id, color: id.color().into(), cells: vec![] })
                .collect(),
            intersections: vec![
                Intersection { earlier: a, later: b, keeper: a },
                Intersection { earlier: b, later: c, keeper: b },
                Intersection { earlier: a, later: c, keeper: c },
            ],
            max_height: 1,
        };
        let g = derive_dependencies(&board);
        assert!(g.topological_order().is_some());
        assert!(g.edges().contains(&(a, c)));
    }

    #[test]
    fn cycle_is_rejected_by_graph_constructor() {
        let (a, b) = (PieceId(2), PieceId(3));
        assert_eq!(
            DependencyGraph::new(vec![a, b], vec![(a, b), (b, a)]),
            Err(GraphError::Cycle)
        );
        assert_eq!(
            DependencyGraph::new(vec![a], vec![(a, PieceId(9))]),
            Err(GraphError::UnknownPiece(PieceId(9)))
        );
    }

    #[test]
    fn pieces_are_disjoint_connected_and_cover_the_grid() {
        for seed in 0..200 {
            let board = generate_board(&small(), seed).unwrap();
            let total: usize = board.pieces.iter().map(|p| p.cells.len()).sum();
            assert_eq!(total, board.grid.nonzero_count());
            for p in &board.pieces {
                assert!(face_connected(&p.cells), "seed {seed} piece {:?}", p.id);
            }
        }
    }

    #[test]
    fn zero_noise_init_is_all_up_on_table() {
        let params = GenParams {
            q_down: 0.0,
            r_bad: 0.0,
            ..small()
        };
        let task = generate_task(&params, 5, 0).unwrap();
        assert!(task
            .init
            .iter()
            .all(|i| i.location == Location::OnTable && i.orientation == Orientation::Up));
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = GenParams {
            q_down: 1.5,
            ..small()
        };
        assert!(matches!(generate_board(&p, 0), Err(TaskGenError::InvalidParams(_))));
        let p = GenParams {
            bricks: IntRange(3, 2),
            ..small()
        };
        assert!(generate_board(&p, 0).is_err());
    }

    #[test]
    fn exhausted_attempts_surface_as_error() {
        // A 1x1 base cannot host a second brick that keeps every piece
        // connected with a nonempty base.
        let p = GenParams {
            base_x: IntRange(1, 1),
            base_y: IntRange(1, 1),
            base_z: IntRange(1, 1),
            bricks: IntRange(1, 1),
            brick_x: IntRange(1, 1),
            brick_y: IntRange(1, 1),
            brick_z: IntRange(1, 1),
            max_attempts: 5,
            ..small()
        };
        assert_eq!(
            generate_board(&p, 0),
            Err(TaskGenError::GenerationExhausted { brick: PieceId(2), attempts: 5 })
        );
    }

    #[test]
    fn task_json_round_trip_preserves_everything() {
        let task = generate_task(&small(), 42, 7).unwrap();
        let text = serde_json::to_string(&task).unwrap();
        let back: TaskInstance = serde_json::from_str(&text).unwrap();
        assert_eq!(back, task);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn colors_follow_palette_order() {
        assert_eq!(PieceId(2).color(), "red");
        assert_eq!(PieceId::from_color("blue"), Some(PieceId(4)));
        assert_eq!(PieceId::from_color("mauve"), None);
    }
}
