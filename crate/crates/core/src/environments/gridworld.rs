//! Slippery frozen-lake style gridworld read from an ASCII map file.
//!
//! Map file layout: the first line is a JSON header, every following non-empty
//! line is one grid row. `I` is ice, `H` a hole, and a digit `d` (1-9) the
//! reward cell paying `θ_{d-1}` on entry.

use serde::{Deserialize, Serialize};

use super::Environment;
use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::reward::{RewardSpec, ThetaSpace};

/// Versioned default map shipped with the crate.
pub const DEFAULT_MAP: &str = include_str!("../../data/gridworld_default.map");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Ice,
    Hole,
    /// Zero-based θ component paid on entry.
    Reward(usize),
}

/// Cardinal moves in action-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    Up,
    Right,
    Down,
    Left,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Right, Move::Down, Move::Left];

    fn delta(self) -> (isize, isize) {
        match self {
            Move::Up => (-1, 0),
            Move::Right => (0, 1),
            Move::Down => (1, 0),
            Move::Left => (0, -1),
        }
    }

    fn perpendicular(self) -> [Move; 2] {
        match self {
            Move::Up | Move::Down => [Move::Left, Move::Right],
            Move::Left | Move::Right => [Move::Up, Move::Down],
        }
    }
}

/// JSON header of a map file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridHeader {
    pub version: u32,
    /// Total probability of slipping; split evenly between the two perpendicular moves.
    pub slip: f64,
    pub hole_penalty: f64,
    pub theta_values: Vec<f64>,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Row-major.
    pub cells: Vec<Cell>,
    pub header: GridHeader,
}

impl GridSpec {
    pub fn state(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[self.state(row, col)]
    }

    pub fn num_reward_cells(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| matches!(c, Cell::Reward(_)))
            .count()
    }

    fn step(&self, row: usize, col: usize, m: Move) -> usize {
        let (dr, dc) = m.delta();
        let (r, c) = (row as isize + dr, col as isize + dc);
        if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
            self.state(row, col)
        } else {
            self.state(r as usize, c as usize)
        }
    }

    /// Renders the grid rows back to map characters.
    pub fn render_rows(&self) -> Vec<String> {
        (0..self.height)
            .map(|r| {
                (0..self.width)
                    .map(|c| match self.cell(r, c) {
                        Cell::Ice => 'I',
                        Cell::Hole => 'H',
                        Cell::Reward(i) => char::from_digit(i as u32 + 1, 10).unwrap(),
                    })
                    .collect()
            })
            .collect()
    }

    /// Serializes the spec in map-file form.
    pub fn to_map_text(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for row in self.render_rows() {
            out.push_str(&row);
            out.push('\n');
        }
        out
    }
}

/// Parses a map file, reporting every offending cell.
pub fn parse_map(text: &str) -> Result<GridSpec> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| Error::MalformedMap(vec!["empty map file".into()]))?;
    let header: GridHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::MalformedMap(vec![format!("header: {e}")]))?;
    let rows: Vec<&str> = lines.collect();
    let mut problems = Vec::new();
    if rows.is_empty() {
        problems.push("map has no rows".to_string());
    }
    let width = rows.first().map_or(0, |r| r.chars().count());
    let mut cells = Vec::new();
    for (r, line) in rows.iter().enumerate() {
        if line.chars().count() != width {
            problems.push(format!("row {r} has width {}, expected {width}", line.chars().count()));
        }
        for (c, ch) in line.chars().enumerate() {
            cells.push(match ch {
                'I' => Cell::Ice,
                'H' => Cell::Hole,
                '1'..='9' => Cell::Reward(ch.to_digit(10).unwrap() as usize - 1),
                other => {
                    problems.push(format!("cell ({r}, {c}): unknown character '{other}'"));
                    Cell::Ice
                }
            });
        }
    }
    let rewards: Vec<usize> = cells
        .iter()
        .filter_map(|c| match c {
            Cell::Reward(i) => Some(*i),
            _ => None,
        })
        .collect();
    for i in 0..rewards.len() {
        let count = rewards.iter().filter(|&&x| x == i).count();
        if count != 1 {
            problems.push(format!("reward cell {} appears {count} times", i + 1));
        }
    }
    if let Some(&bad) = rewards.iter().find(|&&i| i >= rewards.len()) {
        problems.push(format!("reward indices must be 1..={}, found {}", rewards.len(), bad + 1));
    }
    if !cells.contains(&Cell::Ice) {
        problems.push("map has no ice cells".to_string());
    }
    if !(0.0..=1.0).contains(&header.slip) {
        problems.push(format!("slip {} outside [0, 1]", header.slip));
    }
    if !(0.0..1.0).contains(&header.gamma) {
        problems.push(format!("gamma {} outside [0, 1)", header.gamma));
    }
    if header.theta_values.is_empty() {
        problems.push("theta_values is empty".to_string());
    }
    if !problems.is_empty() {
        return Err(Error::MalformedMap(problems));
    }
    Ok(GridSpec {
        width,
        height: rows.len(),
        cells,
        header,
    })
}

/// The spec parsed from [`DEFAULT_MAP`].
pub fn default_grid_spec() -> GridSpec {
    parse_map(DEFAULT_MAP).expect("default map parses")
}

/// Builds the gridworld environment: ice cells move with slip, holes and
/// reward cells are terminal, Θ is the full grid of `theta_values` per reward
/// cell with a uniform prior, and every ice cell is a start state.
pub fn build_gridworld(spec: &GridSpec) -> Result<Environment> {
    let na = Move::ALL.len();
    let side = spec.header.slip / 2.0;
    let mut rows = Vec::with_capacity(spec.cells.len() * na);
    let mut terminals = Vec::new();
    let mut starts = Vec::new();
    let mut reward_cells = vec![0; spec.num_reward_cells()];
    let mut holes = Vec::new();
    for r in 0..spec.height {
        for c in 0..spec.width {
            let s = spec.state(r, c);
            match spec.cell(r, c) {
                Cell::Ice => {
                    starts.push(s);
                    for m in Move::ALL {
                        let [p1, p2] = m.perpendicular();
                        let mut row: Vec<(usize, f64)> = Vec::with_capacity(3);
                        for (next, p) in [
                            (spec.step(r, c, m), 1.0 - spec.header.slip),
                            (spec.step(r, c, p1), side),
                            (spec.step(r, c, p2), side),
                        ] {
                            if p == 0.0 {
                                continue;
                            }
                            match row.iter_mut().find(|(n, _)| *n == next) {
                                Some(entry) => entry.1 += p,
                                None => row.push((next, p)),
                            }
                        }
                        rows.push(row);
                    }
                    continue;
                }
                Cell::Hole => holes.push(s),
                Cell::Reward(i) => reward_cells[i] = s,
            }
            terminals.push(s);
            for _ in 0..na {
                rows.push(vec![(s, 1.0)]);
            }
        }
    }
    let mdp = Mdp::new(
        spec.cells.len(),
        na,
        spec.header.gamma,
        rows,
        starts,
        terminals,
    );
    let dim = reward_cells.len();
    let reward = RewardSpec::GridCells {
        reward_cells,
        holes,
        hole_penalty: spec.header.hole_penalty,
    };
    let theta = ThetaSpace::grid(&spec.header.theta_values, dim)?;
    Environment::new(mdp, reward, theta)
}
