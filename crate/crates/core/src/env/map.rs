//! Ground-truth occupancy maps: parsing, random generation, validation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ground-truth content of one grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Free,
    Obstacle,
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("no connected map found within {attempts} attempts")]
    GenerationFailed { attempts: usize },
}

/// Obstacle footprint used by the random generator.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub enum ObstacleShape {
    /// Single-cell obstacles.
    UnitCells,
    /// Axis-aligned rectangles with sides drawn from 1..=max.
    Rectangles { max_w: usize, max_h: usize },
}

/// Parameters for [`GridMap::generate`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapGenParams {
    pub width: usize,
    pub height: usize,
    /// Fraction of cells to fill with obstacles, in [0, 0.4].
    pub obstacle_density: f64,
    pub obstacle_shape: ObstacleShape,
    pub seed: u64,
}

impl MapGenParams {
    pub fn unit_cells(width: usize, height: usize, obstacle_density: f64, seed: u64) -> Self {
        Self {
            width,
            height,
            obstacle_density,
            obstacle_shape: ObstacleShape::UnitCells,
            seed,
        }
    }

    fn validate(&self) -> Result<(), MapError> {
        if self.width == 0 || self.height == 0 {
            return Err(MapError::InvalidParams("width and height must be >= 1".into()));
        }
        if !(0.0..=0.4).contains(&self.obstacle_density) {
            return Err(MapError::InvalidParams(format!(
                "obstacle_density {} outside [0, 0.4]",
                self.obstacle_density
            )));
        }
        if let ObstacleShape::Rectangles { max_w, max_h } = self.obstacle_shape {
            if max_w == 0 || max_h == 0 {
                return Err(MapError::InvalidParams("rectangle sides must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Ground-truth occupancy grid plus the robot's start cell.
///
/// Invariants established at construction: the start cell is free and the set
/// of free cells forms one 4-connected component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    start: (usize, usize),
}

const GENERATION_ATTEMPTS: usize = 1000;

impl GridMap {
    /// Builds a map from explicit cells, validating all invariants.
    pub fn new(
        width: usize,
        height: usize,
        cells: Vec<Cell>,
        start: (usize, usize),
    ) -> Result<Self, MapError> {
        if cells.len() != width * height {
            return Err(MapError::InvalidMap(format!(
                "cell count {} does not match {}x{}",
                cells.len(),
                width,
                height
            )));
        }
        let map = Self { width, height, cells, start };
        map.validate()?;
        Ok(map)
    }

    /// Parses the ASCII map format: '.' free, '#' obstacle, 'S' start.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let mut cells = Vec::new();
        let mut width = None;
        let mut start = None;
        let mut height = 0;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let row: Vec<char> = line.chars().collect();
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(MapError::Parse {
                        line: i + 1,
                        msg: format!("ragged row: expected width {w}, got {}", row.len()),
                    })
                }
                _ => {}
            }
            for (col, ch) in row.iter().enumerate() {
                let cell = match ch {
                    '.' => Cell::Free,
                    '#' => Cell::Obstacle,
                    'S' => {
                        if start.replace((height, col)).is_some() {
                            return Err(MapError::Parse {
                                line: i + 1,
                                msg: "multiple start cells".into(),
                            });
                        }
                        Cell::Free
                    }
                    other => {
                        return Err(MapError::Parse {
                            line: i + 1,
                            msg: format!("unexpected character {other:?}"),
                        })
                    }
                };
                cells.push(cell);
            }
            height += 1;
        }
        let width = width.ok_or(MapError::Parse { line: 1, msg: "empty map".into() })?;
        let start = start.ok_or(MapError::Parse { line: 1, msg: "missing start cell 'S'".into() })?;
        Self::new(width, height, cells, start)
    }

    /// Renders the map back into the ASCII file format.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let ch = if (r, c) == self.start {
                    'S'
                } else {
                    match self.cell(r, c) {
                        Cell::Free => '.',
                        Cell::Obstacle => '#',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    /// Generates a random connected map; deterministic for a fixed seed.
    ///
    /// Obstacles are placed uniformly at random until the target density is
    /// reached, then the sample is rejected unless the free cells form one
    /// 4-connected component.
    pub fn generate(params: &MapGenParams) -> Result<Self, MapError> {
        params.validate()?;
        let total = params.width * params.height;
        let target = (params.obstacle_density * total as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        for _ in 0..GENERATION_ATTEMPTS {
            let mut cells = vec![Cell::Free; total];
            let mut filled = 0usize;
            // Overlapping placements only count fresh cells, so this loop is
            // bounded; cap placements anyway in case the target is unreachable.
            let mut placements = 0usize;
            while filled < target && placements < 16 * total.max(1) {
                placements += 1;
                let (w, h) = match params.obstacle_shape {
                    ObstacleShape::UnitCells => (1, 1),
                    ObstacleShape::Rectangles { max_w, max_h } => (
                        rng.random_range(1..=max_w.min(params.width)),
                        rng.random_range(1..=max_h.min(params.height)),
                    ),
                };
                let r0 = rng.random_range(0..=params.height - h);
                let c0 = rng.random_range(0..=params.width - w);
                for r in r0..r0 + h {
                    for c in c0..c0 + w {
                        let idx = r * params.width + c;
                        if cells[idx] == Cell::Free {
                            cells[idx] = Cell::Obstacle;
                            filled += 1;
                        }
                    }
                }
            }
            let free: Vec<usize> = (0..total).filter(|&i| cells[i] == Cell::Free).collect();
            if free.is_empty() {
                continue;
            }
            let start_idx = free[rng.random_range(0..free.len())];
            let start = (start_idx / params.width, start_idx % params.width);
            let candidate = Self { width: params.width, height: params.height, cells, start };
            if candidate.validate().is_ok() {
                return Ok(candidate);
            }
        }
        Err(MapError::GenerationFailed { attempts: GENERATION_ATTEMPTS })
    }

    fn validate(&self) -> Result<(), MapError> {
        let (sr, sc) = self.start;
        if sr >= self.height || sc >= self.width {
            return Err(MapError::InvalidMap("start out of bounds".into()));
        }
        if self.cell(sr, sc) != Cell::Free {
            return Err(MapError::InvalidMap("start cell is an obstacle".into()));
        }
        let reached = self.flood_from_start();
        let free_total = self.free_cell_count();
        if reached != free_total {
            return Err(MapError::InvalidMap(format!(
                "free cells are not 4-connected: reached {reached} of {free_total}"
            )));
        }
        Ok(())
    }

    fn flood_from_start(&self) -> usize {
        let mut seen = vec![false; self.cells.len()];
        let mut stack = vec![self.start];
        seen[self.start.0 * self.width + self.start.1] = true;
        let mut count = 0;
        while let Some((r, c)) = stack.pop() {
            count += 1;
            for (nr, nc) in self.neighbors4(r, c) {
                let idx = nr * self.width + nc;
                if !seen[idx] && self.cells[idx] == Cell::Free {
                    seen[idx] = true;
                    stack.push((nr, nc));
                }
            }
        }
        count
    }

    /// In-bounds 4-neighbors of a cell.
    pub fn neighbors4(&self, r: usize, c: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (w, h) = (self.width, self.height);
        [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].into_iter().filter_map(move |(dr, dc)| {
            let nr = r as i64 + dr;
            let nc = c as i64 + dc;
            (nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w)
                .then_some((nr as usize, nc as usize))
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> (usize, usize) {
        self.start
    }

    pub fn cell(&self, r: usize, c: usize) -> Cell {
        self.cells[r * self.width + c]
    }

    pub fn in_bounds(&self, r: i64, c: i64) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width
    }

    pub fn is_free(&self, r: usize, c: usize) -> bool {
        self.cell(r, c) == Cell::Free
    }

    /// Number of free cells (the accessible area).
    pub fn free_cell_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == Cell::Free).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_density_is_all_free() {
        let map = GridMap::generate(&MapGenParams::unit_cells(5, 5, 0.0, 42)).unwrap();
        assert_eq!(map.free_cell_count(), 25);
        assert_eq!(map.width(), 5);
        assert_eq!(map.height(), 5);
    }

    #[test]
    fn generation_is_deterministic() {
        let params = MapGenParams {
            width: 12,
            height: 9,
            obstacle_density: 0.3,
            obstacle_shape: ObstacleShape::Rectangles { max_w: 3, max_h: 2 },
            seed: 123,
        };
        let a = GridMap::generate(&params).unwrap();
        let b = GridMap::generate(&params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = GridMap::generate(&MapGenParams::unit_cells(10, 10, 0.3, 1)).unwrap();
        let b = GridMap::generate(&MapGenParams::unit_cells(10, 10, 0.3, 2)).unwrap();
        assert_ne!(a, b);
    }

    // Independent flood-fill oracle over the raw text rendering.
    fn oracle_connected(map: &GridMap) -> bool {
        let text = map.to_text();
        let grid: Vec<Vec<char>> = text.lines().map(|l| l.chars().collect()).collect();
        let h = grid.len();
        let w = grid[0].len();
        let mut start = None;
        let mut free = 0;
        for (r, row) in grid.iter().enumerate() {
            for (c, &ch) in row.iter().enumerate() {
                if ch != '#' {
                    free += 1;
                }
                if ch == 'S' {
                    start = Some((r, c));
                }
            }
        }
        let start = start.unwrap();
        let mut seen = vec![vec![false; w]; h];
        let mut queue = vec![start];
        seen[start.0][start.1] = true;
        let mut reached = 0;
        while let Some((r, c)) = queue.pop() {
            reached += 1;
            for (dr, dc) in [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)] {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w {
                    let (nr, nc) = (nr as usize, nc as usize);
                    if !seen[nr][nc] && grid[nr][nc] != '#' {
                        seen[nr][nc] = true;
                        queue.push((nr, nc));
                    }
                }
            }
        }
        reached == free
    }

    #[test]
    fn generated_map_free_cells_connected() {
        let map = GridMap::generate(&MapGenParams::unit_cells(15, 15, 0.2, 7)).unwrap();
        assert!(oracle_connected(&map));
        let params = MapGenParams {
            width: 15,
            height: 15,
            obstacle_density: 0.2,
            obstacle_shape: ObstacleShape::Rectangles { max_w: 4, max_h: 3 },
            seed: 7,
        };
        let map = GridMap::generate(&params).unwrap();
        assert!(oracle_connected(&map));
    }

    #[test]
    fn parse_small_map() {
        let map = GridMap::parse("S.\n..").unwrap();
        assert_eq!(map.width(), 2);
        assert_eq!(map.height(), 2);
        assert_eq!(map.start(), (0, 0));
        assert_eq!(map.free_cell_count(), 4);
    }

    #[test]
    fn parse_rejects_disconnected() {
        // Start free but the second free cell is diagonal only.
        match GridMap::parse("S#\n#.") {
            Err(MapError::InvalidMap(_)) => {}
            other => panic!("expected InvalidMap, got {other:?}"),
        }
        // A start with no free neighbor is legal when it is the only free cell.
        assert!(GridMap::parse("S#\n##").is_ok());
    }

    #[test]
    fn parse_rejects_bad_input() {
        assert!(matches!(GridMap::parse("S.\n..."), Err(MapError::Parse { .. })));
        assert!(matches!(GridMap::parse("Sx\n.."), Err(MapError::Parse { .. })));
        assert!(matches!(GridMap::parse("..\n.."), Err(MapError::Parse { .. })));
        assert!(matches!(GridMap::parse("SS\n.."), Err(MapError::Parse { .. })));
    }

    #[test]
    fn text_round_trip() {
        let map = GridMap::generate(&MapGenParams::unit_cells(8, 6, 0.25, 99)).unwrap();
        let again = GridMap::parse(&map.to_text()).unwrap();
        assert_eq!(map, again);
    }
}
