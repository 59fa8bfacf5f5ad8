use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid coordinate; `x` grows east, `y` grows south.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: usize,
    pub y: usize,
}

impl Pos {
    pub const fn new(x: usize, y: usize) -> Self {
        Pos { x, y }
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Wall,
    Floor,
    Spawn,
    Treasure(usize),
    Wormhole(usize),
}

/// Static layout of a gridworld.
///
/// Parsed from ASCII: `#` wall, `.` floor, `S` spawn, `A`..`D` treasures 0..3,
/// `W` wormhole. Wormhole and spawn ids follow row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
    pub treasure_positions: Vec<Pos>,
    pub wormhole_positions: Vec<Pos>,
    pub spawn_cells: Vec<Pos>,
}

/// 15x15 layout: a central spawn room with exits north and south, each
/// exit corridor forking into two 3x3 corner rooms guarded by a wormhole.
/// Treasures A and B sit in opposite corners.
pub const DEFAULT_MAP: &str = "\
###############
#A..#######..C#
#...W.....W...#
#...###.###...#
#######.#######
#####.....#####
#####.....#####
#####.SSS.#####
#####..S..#####
#####.....#####
#######.#######
#...###.###...#
#...W.....W...#
#D..#######..B#
###############
";

/// 9x9 layout used for smoke runs.
pub const SMALL_MAP: &str = "\
#########
#A..#..B#
#...W...#
##.###.##
#..SS...#
#..SS...#
##.###.##
#C..W..D#
#########
";

impl MapSpec {
    pub fn default_map() -> Self {
        DEFAULT_MAP.parse().expect("built-in map is valid")
    }

    pub fn small_map() -> Self {
        SMALL_MAP.parse().expect("built-in map is valid")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    /// Resolves a map argument: `default`, `small`, or a path to an ASCII map.
    pub fn load(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "default" => Ok(Self::default_map()),
            "small" => Ok(Self::small_map()),
            path => Self::from_file(path),
        }
    }

    pub fn cell(&self, pos: Pos) -> Cell {
        self.cells[pos.y * self.width + pos.x]
    }

    pub fn is_wall(&self, pos: Pos) -> bool {
        matches!(self.cell(pos), Cell::Wall)
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, pos: Pos) -> usize {
        pos.y * self.width + pos.x
    }

    pub fn n_treasures(&self) -> usize {
        self.treasure_positions.len()
    }

    pub fn wormhole_at(&self, pos: Pos) -> Option<usize> {
        match self.cell(pos) {
            Cell::Wormhole(id) => Some(id),
            _ => None,
        }
    }

    pub fn treasure_at(&self, pos: Pos) -> Option<usize> {
        match self.cell(pos) {
            Cell::Treasure(id) => Some(id),
            _ => None,
        }
    }

    /// All non-wall cells, row-major.
    pub fn open_cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| Pos::new(x, y)))
            .filter(move |&p| !self.is_wall(p))
    }

    /// Renders back to the ASCII format.
    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(match self.cell(Pos::new(x, y)) {
                    Cell::Wall => '#',
                    Cell::Floor => '.',
                    Cell::Spawn => 'S',
                    Cell::Treasure(id) => (b'A' + id as u8) as char,
                    Cell::Wormhole(_) => 'W',
                });
            }
            out.push('\n');
        }
        out
    }
}

impl FromStr for MapSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.is_empty())
            .collect();
        if rows.is_empty() {
            return Err(Error::Config("map is empty".into()));
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        if width < 3 || height < 3 {
            return Err(Error::Config(format!("map {width}x{height} is too small")));
        }

        let mut cells = Vec::with_capacity(width * height);
        let mut treasures: Vec<Option<Pos>> = vec![None; 4];
        let mut wormholes = Vec::new();
        let mut spawns = Vec::new();
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::Config(format!(
                    "map row {y} has length {}, expected {width}",
                    row.chars().count()
                )));
            }
            for (x, ch) in row.chars().enumerate() {
                let pos = Pos::new(x, y);
                let cell = match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Floor,
                    'S' => {
                        spawns.push(pos);
                        Cell::Spawn
                    }
                    'W' => {
                        wormholes.push(pos);
                        Cell::Wormhole(wormholes.len() - 1)
                    }
                    'A'..='D' => {
                        let id = (ch as u8 - b'A') as usize;
                        if treasures[id].replace(pos).is_some() {
                            return Err(Error::Config(format!("treasure {ch} appears twice")));
                        }
                        Cell::Treasure(id)
                    }
                    other => {
                        return Err(Error::Config(format!(
                            "unknown map character {other:?} at {pos}"
                        )))
                    }
                };
                let border = x == 0 || y == 0 || x == width - 1 || y == height - 1;
                if border && cell != Cell::Wall {
                    return Err(Error::Config(format!("map border is open at {pos}")));
                }
                cells.push(cell);
            }
        }

        let n_treasures = treasures.iter().take_while(|t| t.is_some()).count();
        if treasures[n_treasures..].iter().any(Option::is_some) {
            return Err(Error::Config(
                "treasure letters must be contiguous starting at A".into(),
            ));
        }
        if spawns.is_empty() {
            return Err(Error::Config("map has no spawn cell".into()));
        }

        Ok(MapSpec {
            width,
            height,
            cells,
            treasure_positions: treasures.into_iter().flatten().collect(),
            wormhole_positions: wormholes,
            spawn_cells: spawns,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_map_layout() {
        let map = MapSpec::default_map();
        assert_eq!((map.width, map.height), (15, 15));
        assert_eq!(map.n_treasures(), 4);
        assert_eq!(map.wormhole_positions.len(), 4);
        assert_eq!(map.spawn_cells.len(), 4);
        assert_eq!(map.treasure_positions[0], Pos::new(1, 1));
        assert_eq!(map.treasure_positions[1], Pos::new(13, 13));
        assert_eq!(map.to_ascii(), DEFAULT_MAP);
    }

    #[test]
    fn small_map_parses() {
        let map = MapSpec::small_map();
        assert_eq!((map.width, map.height), (9, 9));
        assert_eq!(map.n_treasures(), 4);
    }

    #[test]
    fn rejects_open_border() {
        let err = "###\n#S.\n###\n".parse::<MapSpec>().unwrap_err();
        assert!(err.to_string().contains("border"), "{err}");
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!("####\n#S#\n####\n".parse::<MapSpec>().is_err());
    }

    #[test]
    fn rejects_duplicate_and_gapped_treasures() {
        assert!("#####\n#SAA#\n#####\n".parse::<MapSpec>().is_err());
        assert!("#####\n#SAC#\n#####\n".parse::<MapSpec>().is_err());
    }

    #[test]
    fn rejects_missing_spawn_and_unknown_chars() {
        assert!("#####\n#.A.#\n#####\n".parse::<MapSpec>().is_err());
        assert!("#####\n#SAx#\n#####\n".parse::<MapSpec>().is_err());
    }
}
