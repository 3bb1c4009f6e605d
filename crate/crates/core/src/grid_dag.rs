//! Directed acyclic decompositions of a 2D grid.
//!
//! Each of the four sweep directions turns the grid into a DAG. In the plain
//! DAG a cell depends on its three upstream neighbours; in the dense DAG it
//! depends on every cell of its upstream dominance rectangle, which is the
//! transitive closure of the plain relation.
//!
//! All predecessor sets are enumerated in row-major order. Forward passes sum
//! over predecessors in exactly this order, which makes hidden states
//! independent of the traversal order chosen.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Self {
        GridShape { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, c: Coord) -> usize {
        c.row * self.width + c.col
    }

    #[inline]
    pub fn coord(&self, index: usize) -> Coord {
        Coord::new(index / self.width, index % self.width)
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.row < self.height && c.col < self.width
    }

    pub fn check(&self, c: Coord) -> Result<()> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(Error::OutOfGrid {
                row: c.row,
                col: c.col,
                height: self.height,
                width: self.width,
            })
        }
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// Parses `HxW`, e.g. `8x8`.
impl FromStr for GridShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("expected HxW grid, got `{s}`"));
        let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let height: usize = h.trim().parse().map_err(|_| bad())?;
        let width: usize = w.trim().parse().map_err(|_| bad())?;
        if height == 0 || width == 0 {
            return Err(bad());
        }
        Ok(GridShape { height, width })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coord {
    pub row: usize,
    pub col: usize,
}

impl Coord {
    pub const fn new(row: usize, col: usize) -> Self {
        Coord { row, col }
    }
}

impl From<(usize, usize)> for Coord {
    fn from((row, col): (usize, usize)) -> Self {
        Coord { row, col }
    }
}

/// Sweep direction. `SE` flows from the top-left corner to the bottom-right
/// one, so a cell's predecessors lie above and to the left of it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    SE,
    SW,
    NE,
    NW,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::SE, Direction::SW, Direction::NE, Direction::NW];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Maps a coordinate between this direction's frame and the SE frame.
    /// The map is an involution.
    #[inline]
    pub fn reflect(self, shape: GridShape, c: Coord) -> Coord {
        let flip_row = matches!(self, Direction::NE | Direction::NW);
        let flip_col = matches!(self, Direction::SW | Direction::NW);
        Coord {
            row: if flip_row { shape.height - 1 - c.row } else { c.row },
            col: if flip_col { shape.width - 1 - c.col } else { c.col },
        }
    }

    /// The cell with no predecessors.
    pub fn start(self, shape: GridShape) -> Coord {
        self.reflect(shape, Coord::new(0, 0))
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::SE => "SE",
            Direction::SW => "SW",
            Direction::NE => "NE",
            Direction::NW => "NW",
        };
        f.write_str(s)
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SE" => Ok(Direction::SE),
            "SW" => Ok(Direction::SW),
            "NE" => Ok(Direction::NE),
            "NW" => Ok(Direction::NW),
            _ => Err(Error::InvalidArgument(format!("unknown direction `{s}`"))),
        }
    }
}

/// Anti-diagonal wavefront order. In the SE frame cells are visited by
/// increasing `row + col`, ties by increasing row.
pub fn topological_order(shape: GridShape, direction: Direction) -> Vec<Coord> {
    let mut order = Vec::with_capacity(shape.len());
    if shape.is_empty() {
        return order;
    }
    for diag in 0..shape.height + shape.width - 1 {
        let lo = diag.saturating_sub(shape.width - 1);
        let hi = diag.min(shape.height - 1);
        for row in lo..=hi {
            order.push(direction.reflect(shape, Coord::new(row, diag - row)));
        }
    }
    order
}

/// The three-neighbour stencil, clipped to the grid, in row-major order.
pub fn adjacent_predecessors(shape: GridShape, direction: Direction, coord: Coord) -> Result<Vec<Coord>> {
    shape.check(coord)?;
    let se = direction.reflect(shape, coord);
    let mut preds = Vec::with_capacity(3);
    if se.row > 0 {
        preds.push(Coord::new(se.row - 1, se.col));
    }
    if se.col > 0 {
        preds.push(Coord::new(se.row, se.col - 1));
    }
    if se.row > 0 && se.col > 0 {
        preds.push(Coord::new(se.row - 1, se.col - 1));
    }
    let mut out: Vec<Coord> = preds.into_iter().map(|p| direction.reflect(shape, p)).collect();
    out.sort_unstable();
    Ok(out)
}

/// The upstream dominance rectangle minus the cell itself, row-major.
pub fn dense_predecessors(shape: GridShape, direction: Direction, coord: Coord) -> Result<Vec<Coord>> {
    shape.check(coord)?;
    let se = direction.reflect(shape, coord);
    let mut out = Vec::with_capacity((se.row + 1) * (se.col + 1) - 1);
    for r in 0..=se.row {
        for c in 0..=se.col {
            if r == se.row && c == se.col {
                continue;
            }
            out.push(direction.reflect(shape, Coord::new(r, c)));
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Every cell from which `coord` is reachable along plain edges, found by an
/// explicit breadth-first search. Used to check [`dense_predecessors`].
pub fn closure_oracle(shape: GridShape, direction: Direction, coord: Coord) -> Result<Vec<Coord>> {
    if shape.len() > 4096 {
        return Err(Error::InvalidArgument(format!(
            "closure_oracle limited to 4096 cells, got {shape}"
        )));
    }
    shape.check(coord)?;
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([coord]);
    while let Some(v) = queue.pop_front() {
        for p in adjacent_predecessors(shape, direction, v)? {
            if seen.insert(p) {
                queue.push_back(p);
            }
        }
    }
    Ok(seen.into_iter().collect())
}

/// Traversal order and predecessor sets for one direction.
///
/// Cells are addressed by row-major flat index throughout.
#[derive(Clone, Debug, PartialEq)]
pub struct DagTopology {
    shape: GridShape,
    direction: Direction,
    dense: bool,
    order: Vec<usize>,
    preds: Vec<Vec<usize>>,
}

impl DagTopology {
    pub fn plain(shape: GridShape, direction: Direction) -> Self {
        Self::build(shape, direction, false)
    }

    pub fn dense(shape: GridShape, direction: Direction) -> Self {
        Self::build(shape, direction, true)
    }

    pub fn new(shape: GridShape, direction: Direction, dense: bool) -> Self {
        Self::build(shape, direction, dense)
    }

    fn build(shape: GridShape, direction: Direction, dense: bool) -> Self {
        let order = topological_order(shape, direction)
            .into_iter()
            .map(|c| shape.index(c))
            .collect();
        let preds = (0..shape.len())
            .map(|i| {
                let c = shape.coord(i);
                let set = if dense {
                    dense_predecessors(shape, direction, c)
                } else {
                    adjacent_predecessors(shape, direction, c)
                };
                set.expect("in-grid").into_iter().map(|p| shape.index(p)).collect()
            })
            .collect();
        DagTopology {
            shape,
            direction,
            dense,
            order,
            preds,
        }
    }

    /// Assembles a topology from explicit parts. Checks that `order` is a
    /// permutation of the grid and that every predecessor precedes its
    /// successor; predecessor lists are re-sorted into row-major order.
    pub fn from_parts(
        shape: GridShape,
        direction: Direction,
        dense: bool,
        order: Vec<usize>,
        mut preds: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let n = shape.len();
        if order.len() != n || preds.len() != n {
            return Err(Error::shape("DagTopology::from_parts", n, order.len().max(preds.len())));
        }
        let mut position = vec![usize::MAX; n];
        for (pos, &v) in order.iter().enumerate() {
            if v >= n || position[v] != usize::MAX {
                return Err(Error::InvalidArgument("order is not a permutation of the grid".into()));
            }
            position[v] = pos;
        }
        for (v, list) in preds.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if let Some(&p) = list.iter().find(|&&p| p >= n || position[p] >= position[v]) {
                return Err(Error::InvalidArgument(format!(
                    "predecessor {p} of cell {v} does not precede it in the order"
                )));
            }
        }
        Ok(DagTopology {
            shape,
            direction,
            dense,
            order,
            preds,
        })
    }

    /// Same predecessor sets, different (validated) traversal order.
    pub fn with_order(&self, order: Vec<usize>) -> Result<Self> {
        Self::from_parts(self.shape, self.direction, self.dense, order, self.preds.clone())
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn is_dense(&self) -> bool {
        self.dense
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn preds(&self, index: usize) -> &[usize] {
        &self.preds[index]
    }

    pub fn pair_count(&self) -> usize {
        self.preds.iter().map(Vec::len).sum()
    }
}
