use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Integer cell coordinate `(x, y)`; cell `(x, y)` covers `[x, x+1) x [y, y+1)`.
pub type Cell = (usize, usize);

const MEDIUM: &str = "\
#######
#...#.#
#.#.#.#
#.#...#
#.###.#
#.....#
#######";

const LARGE: &str = "\
###########
#.....#...#
#.###.#.#.#
#...#...#.#
###.#####.#
#.......#.#
#.#####.#.#
#.#...#...#
#.#.#.#####
#...#.....#
###########";

/// Wall grid. Text row `y` holds cells `(0..width, y)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MazeLayout {
    width: usize,
    height: usize,
    walls: Vec<bool>,
}

impl MazeLayout {
    pub fn medium() -> Self {
        Self::parse(MEDIUM).expect("built-in layout")
    }

    pub fn large() -> Self {
        Self::parse(LARGE).expect("built-in layout")
    }

    /// Parses `#` (wall) / `.` (free) rows. Borders must be walls and the
    /// free region connected.
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if height < 3 || width < 3 {
            return Err(Error::param("layout must be at least 3x3"));
        }
        let mut walls = Vec::with_capacity(width * height);
        for (y, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::format(y + 1, format!("row has width {}, expected {width}", row.len())));
            }
            for c in row.chars() {
                walls.push(match c {
                    '#' => true,
                    '.' => false,
                    other => return Err(Error::format(y + 1, format!("unexpected character `{other}`"))),
                });
            }
        }
        let layout = MazeLayout { width, height, walls };
        for x in 0..width {
            if !layout.is_wall((x, 0)) || !layout.is_wall((x, height - 1)) {
                return Err(Error::param("border cells must be walls"));
            }
        }
        for y in 0..height {
            if !layout.is_wall((0, y)) || !layout.is_wall((width - 1, y)) {
                return Err(Error::param("border cells must be walls"));
            }
        }
        let free = layout.free_cells();
        let Some(&first) = free.first() else {
            return Err(Error::param("layout has no free cells"));
        };
        let reached = layout.bfs_from(first).iter().filter(|d| d.is_some()).count();
        if reached != free.len() {
            return Err(Error::param("free region is not connected"));
        }
        Ok(layout)
    }

    /// Builds a layout without the border/connectivity checks; for tests of
    /// corrupted layouts.
    pub fn from_walls_unchecked(width: usize, height: usize, walls: Vec<bool>) -> Self {
        assert_eq!(walls.len(), width * height);
        MazeLayout { width, height, walls }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_wall(&self, (x, y): Cell) -> bool {
        x >= self.width || y >= self.height || self.walls[y * self.width + x]
    }

    /// Wall test for a continuous point; anything outside the grid is wall.
    pub fn is_wall_at(&self, x: f64, y: f64) -> bool {
        if x < 0.0 || y < 0.0 {
            return true;
        }
        self.is_wall((x.floor() as usize, y.floor() as usize))
    }

    pub fn cell_of(x: f64, y: f64) -> Cell {
        (x.max(0.0).floor() as usize, y.max(0.0).floor() as usize)
    }

    pub fn center(cell: Cell) -> [f64; 2] {
        [cell.0 as f64 + 0.5, cell.1 as f64 + 0.5]
    }

    /// Free cells in row-major order.
    pub fn free_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.is_wall((x, y)) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    fn index(&self, (x, y): Cell) -> usize {
        y * self.width + x
    }

    fn neighbors(&self, (x, y): Cell) -> impl Iterator<Item = Cell> + '_ {
        // fixed order: +x, -x, +y, -y
        let cand = [
            (x + 1, y),
            (x.wrapping_sub(1), y),
            (x, y + 1),
            (x, y.wrapping_sub(1)),
        ];
        cand.into_iter().filter(move |&c| !self.is_wall(c))
    }

    /// BFS step distances from `from` to every cell (`None` for walls and
    /// unreachable cells), indexed row-major.
    pub fn bfs_from(&self, from: Cell) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.width * self.height];
        if self.is_wall(from) {
            return dist;
        }
        dist[self.index(from)] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.index(c)].expect("queued cells have a distance");
            for n in self.neighbors(c) {
                let i = self.index(n);
                if dist[i].is_none() {
                    dist[i] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    pub fn distance(&self, a: Cell, b: Cell) -> Option<usize> {
        if self.is_wall(b) {
            return None;
        }
        self.bfs_from(a)[self.index(b)]
    }

    /// Shortest path `a ..= b` (inclusive), ties broken by neighbor order.
    pub fn shortest_path(&self, a: Cell, b: Cell) -> Option<Vec<Cell>> {
        let dist = self.bfs_from(b);
        let mut d = dist.get(self.index(a)).copied().flatten()?;
        let mut path = vec![a];
        let mut cur = a;
        while d > 0 {
            cur = self
                .neighbors(cur)
                .find(|&n| dist[self.index(n)] == Some(d - 1))
                .expect("BFS field has a descending neighbor");
            path.push(cur);
            d -= 1;
        }
        Some(path)
    }

    /// Cells at exactly `k` BFS steps from `from`.
    pub fn cells_at_distance(&self, from: Cell, k: usize) -> Vec<Cell> {
        let dist = self.bfs_from(from);
        self.free_cells().into_iter().filter(|&c| dist[self.index(c)] == Some(k)).collect()
    }

    /// Largest BFS distance between two free cells.
    pub fn diameter(&self) -> usize {
        self.free_cells()
            .into_iter()
            .map(|c| self.bfs_from(c).into_iter().flatten().max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// `#`/`.` rendering, one line per row.
    pub fn dump(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                s.push(if self.is_wall((x, y)) { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_layouts_meet_diameter_targets() {
        let m = MazeLayout::medium();
        assert_eq!((m.width(), m.height()), (7, 7));
        assert!(m.diameter() >= 10);
        let l = MazeLayout::large();
        assert_eq!((l.width(), l.height()), (11, 11));
        assert!(l.diameter() >= 18);
    }

    #[test]
    fn dump_round_trips() {
        let l = MazeLayout::large();
        assert_eq!(MazeLayout::parse(&l.dump()).unwrap(), l);
        assert_eq!(l.dump().trim_end(), LARGE);
    }

    #[test]
    fn rejects_open_border_and_disconnected() {
        assert!(MazeLayout::parse("###\n#..\n###").is_err());
        assert!(MazeLayout::parse("#####\n#.#.#\n#####").is_err());
    }

    #[test]
    fn shortest_path_is_contiguous() {
        let l = MazeLayout::large();
        let p = l.shortest_path((1, 1), (9, 9)).unwrap();
        assert_eq!(p.len(), 25);
        for w in p.windows(2) {
            let dx = w[0].0.abs_diff(w[1].0);
            let dy = w[0].1.abs_diff(w[1].1);
            assert_eq!(dx + dy, 1);
        }
    }
}
