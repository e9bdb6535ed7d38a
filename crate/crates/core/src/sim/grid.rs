//! 2.5D occupancy grid: a per-cell height field with line-of-sight queries,
//! a robot clearance map and shortest paths over it.

use std::collections::HashMap;

use pathfinding::prelude::{astar, dijkstra_all};
use serde::{Deserialize, Serialize};

use crate::geometry::{Frame, Point3, PointCloud};

pub type Cell = (usize, usize);

/// Path cost units per cell step; diagonals cost `DIAG_COST`.
pub const STEP_COST: u32 = 10;
pub const DIAG_COST: u32 = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub origin: [f64; 2],
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    /// Obstacle height per cell, row-major in x; zero is free floor.
    heights: Vec<f64>,
}

impl Grid {
    pub fn new(origin: [f64; 2], cell: f64, nx: usize, ny: usize) -> Self {
        Self { origin, cell, nx, ny, heights: vec![0.0; nx * ny] }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, c: Cell) -> usize {
        c.1 * self.nx + c.0
    }

    pub fn cell_at(&self, i: usize) -> Cell {
        (i % self.nx, i / self.nx)
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<Cell> {
        let fx = ((x - self.origin[0]) / self.cell).floor();
        let fy = ((y - self.origin[1]) / self.cell).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn center(&self, c: Cell) -> (f64, f64) {
        (self.origin[0] + (c.0 as f64 + 0.5) * self.cell, self.origin[1] + (c.1 as f64 + 0.5) * self.cell)
    }

    pub fn height(&self, c: Cell) -> f64 {
        self.heights[self.index(c)]
    }

    pub fn occupied(&self, c: Cell) -> bool {
        self.height(c) > 0.0
    }

    /// Raises every cell whose center lies in the rectangle to at least `h`.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, h: f64) {
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let (cx, cy) = self.center((ix, iy));
                if cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1 {
                    let i = self.index((ix, iy));
                    self.heights[i] = self.heights[i].max(h);
                }
            }
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(|i| self.cell_at(i))
    }

    /// True when the segment clears every cell's height, ignoring cells for
    /// which `skip` holds (typically the endpoints' own cells).
    pub fn line_of_sight(&self, from: &Point3, to: &Point3, skip: impl Fn(Cell) -> bool) -> bool {
        let len = from.planar_distance(to);
        let steps = (len / (0.25 * self.cell)).ceil().max(1.0) as usize;
        for k in 1..steps {
            let t = k as f64 / steps as f64;
            let x = from.x + t * (to.x - from.x);
            let y = from.y + t * (to.y - from.y);
            let Some(c) = self.cell_of(x, y) else { continue };
            if skip(c) {
                continue;
            }
            let z = from.z + t * (to.z - from.z);
            if z < self.height(c) {
                return false;
            }
        }
        true
    }

    /// Whether a disk of `radius` at (x, y) contains an occupied cell center
    /// or leaves the grid.
    pub fn disk_collides(&self, x: f64, y: f64, radius: f64) -> bool {
        let Some(c) = self.cell_of(x, y) else { return true };
        let r = (radius / self.cell).ceil() as isize + 1;
        for dy in -r..=r {
            for dx in -r..=r {
                let (ix, iy) = (c.0 as isize + dx, c.1 as isize + dy);
                if ix < 0 || iy < 0 || ix >= self.nx as isize || iy >= self.ny as isize {
                    continue;
                }
                let n = (ix as usize, iy as usize);
                if !self.occupied(n) {
                    continue;
                }
                let (cx, cy) = self.center(n);
                if (cx - x).hypot(cy - y) < radius {
                    return true;
                }
            }
        }
        false
    }

    /// Cells whose center can host the robot disk.
    pub fn clearance_map(&self, radius: f64) -> Vec<bool> {
        self.cells()
            .map(|c| {
                let (x, y) = self.center(c);
                !self.disk_collides(x, y, radius)
            })
            .collect()
    }

    /// Occupied cells within `radius` (planar) of `around`, one point per
    /// cell at its top surface.
    pub fn obstacle_cloud(&self, around: &Point3, radius: f64) -> PointCloud {
        let points = self
            .cells()
            .filter(|&c| self.occupied(c))
            .map(|c| {
                let (x, y) = self.center(c);
                Point3::new(x, y, self.height(c))
            })
            .filter(|p| p.planar_distance(around) <= radius)
            .collect();
        PointCloud::new(points, Frame::World)
    }

    fn neighbours<'a>(&'a self, free: &'a [bool], c: Cell) -> impl Iterator<Item = (Cell, u32)> + 'a {
        const OFFSETS: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        let ok = move |x: isize, y: isize| {
            x >= 0 && y >= 0 && x < self.nx as isize && y < self.ny as isize && free[self.index((x as usize, y as usize))]
        };
        OFFSETS.iter().filter_map(move |&(dx, dy)| {
            let (x, y) = (c.0 as isize + dx, c.1 as isize + dy);
            if !ok(x, y) {
                return None;
            }
            if dx != 0 && dy != 0 {
                // No corner cutting.
                if !ok(c.0 as isize + dx, c.1 as isize) || !ok(c.0 as isize, c.1 as isize + dy) {
                    return None;
                }
                return Some(((x as usize, y as usize), DIAG_COST));
            }
            Some(((x as usize, y as usize), STEP_COST))
        })
    }

    /// Path costs from `start` to every reachable free cell (the start
    /// itself included at zero cost).
    pub fn costs_from(&self, free: &[bool], start: Cell) -> HashMap<Cell, u32> {
        let mut out: HashMap<Cell, u32> = dijkstra_all(&start, |&c| self.neighbours(free, c).collect::<Vec<_>>())
            .into_iter()
            .map(|(c, (_, cost))| (c, cost))
            .collect();
        out.insert(start, 0);
        out
    }

    /// Shortest path cost between two cells, if connected.
    pub fn path_cost(&self, free: &[bool], start: Cell, goal: Cell) -> Option<u32> {
        if start == goal {
            return Some(0);
        }
        let (gx, gy) = (goal.0 as i64, goal.1 as i64);
        astar(
            &start,
            |&c| self.neighbours(free, c).collect::<Vec<_>>(),
            |&c| {
                let (dx, dy) = ((c.0 as i64 - gx).unsigned_abs(), (c.1 as i64 - gy).unsigned_abs());
                (STEP_COST as u64 * (dx.max(dy) - dx.min(dy)) + DIAG_COST as u64 * dx.min(dy)) as u32
            },
            |&c| c == goal,
        )
        .map(|(_, cost)| cost)
    }
}
