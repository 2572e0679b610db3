//! Desk-scale Pac-Man-style maze world: pellets, power pellets, bonus
//! fruits, four ghosts with a blue (edible) mode, lives, and a level
//! schedule cycling over four bundled maps.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HraError, Result};
use crate::mdp::{ActionId, Cell, DecomposedTransition, Environment, EventTag, StateId};
use crate::oracle::{EnumeratedMdp, MdpTransition};

pub const ORIENTATIONS: usize = 4;
/// 4 compass moves + no-op.
pub const MAZE_ACTIONS: usize = 5;
pub const GHOST_COUNT: usize = 4;
pub const NOOP_ACTION: usize = 4;

/// (dx, dy) per compass direction N, E, S, W.
const DIR_DELTAS: [(isize, isize); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

pub const MAP_A: &str = include_str!("../../maps/map_a.txt");
pub const MAP_B: &str = include_str!("../../maps/map_b.txt");
pub const MAP_C: &str = include_str!("../../maps/map_c.txt");
pub const MAP_D: &str = include_str!("../../maps/map_d.txt");

/// Point values of the edible objects.
#[derive(Debug, Clone, PartialEq)]
pub struct PointsTable {
    pub pellet: i64,
    pub power_pellet: i64,
    pub blue_ghost_chain: [i64; 4],
    pub fruit: [i64; 7],
}

impl Default for PointsTable {
    fn default() -> Self {
        PointsTable {
            pellet: 10,
            power_pellet: 50,
            blue_ghost_chain: [200, 400, 800, 1600],
            // cherry, strawberry, orange, pretzel, apple, pear, banana
            fruit: [100, 200, 500, 700, 1000, 2000, 5000],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FruitType {
    Cherry,
    Strawberry,
    Orange,
    Pretzel,
    Apple,
    Pear,
    Banana,
}

impl FruitType {
    pub const ALL: [FruitType; 7] = [
        FruitType::Cherry,
        FruitType::Strawberry,
        FruitType::Orange,
        FruitType::Pretzel,
        FruitType::Apple,
        FruitType::Pear,
        FruitType::Banana,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&f| f == self).unwrap()
    }
}

/// A parsed static map with its connectivity structure.
#[derive(Debug, Clone)]
pub struct Maze {
    pub width: usize,
    pub height: usize,
    walls: Vec<bool>,
    pub pellet_cells: Vec<Cell>,
    pub power_pellet_cells: Vec<Cell>,
    pub fruit_spawn: Cell,
    pub ghost_house: Vec<Cell>,
    pub player_spawn: Cell,
    /// All non-wall cells, in row-major order.
    pub corridor_cells: Vec<Cell>,
    corridor_index: Vec<Option<usize>>,
}

impl Maze {
    /// Parse an ASCII map. Legend: `#` wall, `.` pellet, `o` power pellet,
    /// `P` player spawn, `G` ghost house, `F` fruit spawn, space = empty
    /// corridor.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err(HraError::Parse { line: 1, col: 1, msg: "empty map".into() });
        }
        let width = lines[0].chars().count();
        let height = lines.len();
        for (y, line) in lines.iter().enumerate() {
            if line.chars().count() != width {
                return Err(HraError::Parse {
                    line: y + 1,
                    col: line.chars().count(),
                    msg: format!("non-rectangular map: expected width {width}"),
                });
            }
        }
        let mut walls = vec![false; width * height];
        let mut pellet_cells = Vec::new();
        let mut power_pellet_cells = Vec::new();
        let mut ghost_house = Vec::new();
        let mut fruit_spawn = None;
        let mut player_spawn = None;
        for (y, line) in lines.iter().enumerate() {
            for (x, ch) in line.chars().enumerate() {
                let cell = Cell::new(x, y);
                match ch {
                    '#' => walls[y * width + x] = true,
                    '.' => pellet_cells.push(cell),
                    'o' => power_pellet_cells.push(cell),
                    'P' => {
                        if player_spawn.replace(cell).is_some() {
                            return Err(HraError::Parse {
                                line: y + 1,
                                col: x + 1,
                                msg: "duplicate player spawn".into(),
                            });
                        }
                    }
                    'G' => ghost_house.push(cell),
                    'F' => {
                        if fruit_spawn.replace(cell).is_some() {
                            return Err(HraError::Parse {
                                line: y + 1,
                                col: x + 1,
                                msg: "duplicate fruit spawn".into(),
                            });
                        }
                    }
                    ' ' => {}
                    other => {
                        return Err(HraError::Parse {
                            line: y + 1,
                            col: x + 1,
                            msg: format!("unknown glyph '{other}'"),
                        })
                    }
                }
            }
        }
        let player_spawn = player_spawn.ok_or(HraError::Parse {
            line: 1,
            col: 1,
            msg: "missing player spawn 'P'".into(),
        })?;
        let fruit_spawn = fruit_spawn.ok_or(HraError::Parse {
            line: 1,
            col: 1,
            msg: "missing fruit spawn 'F'".into(),
        })?;
        if ghost_house.is_empty() {
            return Err(HraError::Parse {
                line: 1,
                col: 1,
                msg: "missing ghost house 'G'".into(),
            });
        }
        let mut corridor_cells = Vec::new();
        let mut corridor_index = vec![None; width * height];
        for y in 0..height {
            for x in 0..width {
                if !walls[y * width + x] {
                    corridor_index[y * width + x] = Some(corridor_cells.len());
                    corridor_cells.push(Cell::new(x, y));
                }
            }
        }
        let maze = Maze {
            width,
            height,
            walls,
            pellet_cells,
            power_pellet_cells,
            fruit_spawn,
            ghost_house,
            player_spawn,
            corridor_cells,
            corridor_index,
        };
        // Every pellet must be reachable from the player spawn.
        let dist = maze.bfs_distances(maze.player_spawn);
        for &cell in maze.pellet_cells.iter().chain(&maze.power_pellet_cells) {
            if dist[cell.y * maze.width + cell.x] == u32::MAX {
                return Err(HraError::Parse {
                    line: cell.y + 1,
                    col: cell.x + 1,
                    msg: "unreachable pellet".into(),
                });
            }
        }
        Ok(maze)
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        cell.x >= self.width || cell.y >= self.height || self.walls[cell.y * self.width + cell.x]
    }

    pub fn neighbor(&self, cell: Cell, dir: usize) -> Option<Cell> {
        let (dx, dy) = DIR_DELTAS[dir];
        let nx = cell.x as isize + dx;
        let ny = cell.y as isize + dy;
        if nx < 0 || ny < 0 {
            return None;
        }
        let next = Cell::new(nx as usize, ny as usize);
        if self.is_wall(next) {
            None
        } else {
            Some(next)
        }
    }

    /// Player movement: compass moves succeed when the destination is open
    /// (updating orientation), otherwise the player stays put with its
    /// orientation unchanged. The no-op action never moves.
    pub fn player_move(&self, cell: Cell, orientation: usize, action: usize) -> (Cell, usize) {
        if action == NOOP_ACTION {
            return (cell, orientation);
        }
        match self.neighbor(cell, action) {
            Some(next) => (next, action),
            None => (cell, orientation),
        }
    }

    /// BFS distance field over corridor cells (u32::MAX = unreachable).
    pub fn bfs_distances(&self, from: Cell) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.width * self.height];
        if self.is_wall(from) {
            return dist;
        }
        dist[from.y * self.width + from.x] = 0;
        let mut queue = VecDeque::from([from]);
        while let Some(cell) = queue.pop_front() {
            let d = dist[cell.y * self.width + cell.x];
            for dir in 0..ORIENTATIONS {
                if let Some(next) = self.neighbor(cell, dir) {
                    let slot = &mut dist[next.y * self.width + next.x];
                    if *slot == u32::MAX {
                        *slot = d + 1;
                        queue.push_back(next);
                    }
                }
            }
        }
        dist
    }

    pub fn corridor_idx(&self, cell: Cell) -> Option<usize> {
        if cell.x >= self.width || cell.y >= self.height {
            return None;
        }
        self.corridor_index[cell.y * self.width + cell.x]
    }

    /// Player-state index: corridor cell x orientation.
    pub fn player_state_index(&self, cell: Cell, orientation: usize) -> Option<usize> {
        self.corridor_idx(cell).map(|i| i * ORIENTATIONS + orientation)
    }

    pub fn player_state_count(&self) -> usize {
        self.corridor_cells.len() * ORIENTATIONS
    }

    /// Single-target sub-MDP over player states for verifying location
    /// value functions: deterministic player movement, pseudo-reward 1 on
    /// entering the target cell, which is pseudo-terminal.
    pub fn gvf_sub_mdp(&self, target: Cell) -> Result<EnumeratedMdp> {
        if self.is_wall(target) {
            return Err(HraError::InvalidArgument("target cell is a wall".into()));
        }
        let n_states = self.player_state_count();
        let mut transitions = Vec::with_capacity(n_states);
        let mut terminal = vec![false; n_states];
        for (ci, &cell) in self.corridor_cells.iter().enumerate() {
            for orient in 0..ORIENTATIONS {
                let s = ci * ORIENTATIONS + orient;
                if cell == target {
                    terminal[s] = true;
                }
            }
        }
        for &cell in &self.corridor_cells {
            for orient in 0..ORIENTATIONS {
                let mut per_action = Vec::with_capacity(MAZE_ACTIONS);
                for a in 0..MAZE_ACTIONS {
                    if cell == target {
                        per_action.push(Vec::new());
                        continue;
                    }
                    let (next_cell, next_orient) = self.player_move(cell, orient, a);
                    let next = self.player_state_index(next_cell, next_orient).unwrap();
                    let reward = if next_cell == target { 1.0 } else { 0.0 };
                    per_action.push(vec![MdpTransition {
                        next,
                        prob: 1.0,
                        rewards: vec![reward],
                    }]);
                }
                transitions.push(per_action);
            }
        }
        Ok(EnumeratedMdp {
            n_states,
            n_actions: MAZE_ACTIONS,
            n_components: 1,
            transitions,
            terminal,
        })
    }
}

/// The four bundled maps, in level-schedule order.
pub fn builtin_maps() -> Vec<Maze> {
    [MAP_A, MAP_B, MAP_C, MAP_D]
        .iter()
        .map(|text| Maze::parse(text).expect("bundled map must parse"))
        .collect()
}

/// Map index for a 1-based level: two levels per map through the cycle,
/// then alternating between the third and fourth map.
pub fn map_for_level(level: u32) -> usize {
    match level {
        1 | 2 => 0,
        3 | 4 => 1,
        5 | 6 => 2,
        7 | 8 => 3,
        l => {
            if l % 2 == 1 {
                2
            } else {
                3
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GhostMode {
    Normal,
    /// Edible; the timer counts down to normal mode.
    Blue(u32),
}

#[derive(Debug, Clone)]
pub struct Ghost {
    pub cell: Cell,
    pub mode: GhostMode,
    pub dir: Option<usize>,
    /// Absolute step at which the ghost leaves the house.
    pub release_at: usize,
}

/// Tunable world parameters. The defaults are the shipped game rules.
#[derive(Debug, Clone)]
pub struct MazeConfig {
    /// Probability that a ghost moves toward (blue: away from) the player.
    pub ghost_chase_prob: f64,
    pub blue_duration: u32,
    pub fruit_duration: u32,
    pub lives: u32,
    /// Inactive intro period at episode start during which all actions are
    /// ignored; longer than the 30-step no-op prefix of the fixed-start
    /// evaluation protocol, so evaluation starts are effectively fixed.
    pub intro_steps: usize,
    /// Ghost release stagger after the intro (one ghost every interval).
    pub ghost_release_interval: usize,
}

impl Default for MazeConfig {
    fn default() -> Self {
        MazeConfig {
            ghost_chase_prob: 0.8,
            blue_duration: 40,
            fruit_duration: 60,
            lives: 3,
            intro_steps: 40,
            ghost_release_interval: 60,
        }
    }
}

/// Component indices of the maze reward decomposition.
pub const COMP_PELLET: usize = 0;
pub const COMP_POWER_PELLET: usize = 1;
pub const COMP_FRUIT: usize = 2;
pub const COMP_GHOST: usize = 3;
pub const COMP_BLUE_GHOST: usize = 4;
pub const MAZE_COMPONENTS: usize = 5;

#[derive(Debug, Clone)]
pub struct MazeWorld {
    pub maps: Vec<Maze>,
    pub points: PointsTable,
    pub cfg: MazeConfig,
    pub level: u32,
    pub lives: u32,
    pub player: Cell,
    pub orientation: usize,
    pub ghosts: Vec<Ghost>,
    pellets: Vec<bool>,
    power_pellets: Vec<bool>,
    pellets_left: usize,
    power_left: usize,
    initial_pellets: usize,
    pub fruit: Option<(Cell, FruitType, u32)>,
    fruit_spawned: usize,
    pub blue_chain: usize,
    pub step_count: usize,
    /// Steps since the current level started.
    pub level_step: usize,
    pub score: i64,
    rng: ChaCha8Rng,
    game_over: bool,
}

impl MazeWorld {
    pub fn new(maps: Vec<Maze>, cfg: MazeConfig) -> Self {
        assert!(!maps.is_empty(), "at least one map required");
        let mut world = MazeWorld {
            maps,
            points: PointsTable::default(),
            cfg,
            level: 1,
            lives: 0,
            player: Cell::new(0, 0),
            orientation: 0,
            ghosts: Vec::new(),
            pellets: Vec::new(),
            power_pellets: Vec::new(),
            pellets_left: 0,
            power_left: 0,
            initial_pellets: 0,
            fruit: None,
            fruit_spawned: 0,
            blue_chain: 0,
            step_count: 0,
            level_step: 0,
            score: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            game_over: true,
        };
        world.reset(0);
        world
    }

    pub fn with_builtin_maps() -> Self {
        Self::new(builtin_maps(), MazeConfig::default())
    }

    pub fn map_index(&self) -> usize {
        map_for_level(self.level) % self.maps.len()
    }

    pub fn maze(&self) -> &Maze {
        &self.maps[self.map_index()]
    }

    pub fn pellets_remaining(&self) -> usize {
        self.pellets_left + self.power_left
    }

    pub fn has_pellet(&self, cell: Cell) -> bool {
        self.maze()
            .corridor_idx(cell)
            .is_some_and(|_| self.pellets[cell.y * self.maze().width + cell.x])
    }

    pub fn has_power_pellet(&self, cell: Cell) -> bool {
        self.maze()
            .corridor_idx(cell)
            .is_some_and(|_| self.power_pellets[cell.y * self.maze().width + cell.x])
    }

    pub fn pellet_cells_remaining(&self) -> Vec<Cell> {
        self.maze()
            .corridor_cells
            .iter()
            .copied()
            .filter(|c| self.pellets[c.y * self.maze().width + c.x])
            .collect()
    }

    pub fn power_pellet_cells_remaining(&self) -> Vec<Cell> {
        self.maze()
            .corridor_cells
            .iter()
            .copied()
            .filter(|c| self.power_pellets[c.y * self.maze().width + c.x])
            .collect()
    }

    pub fn player_state_index(&self) -> usize {
        self.maze()
            .player_state_index(self.player, self.orientation)
            .expect("player is always on a corridor cell")
    }

    pub fn fruit_type_for_level(&mut self, level: u32) -> FruitType {
        match level {
            1 => FruitType::Cherry,
            2 => FruitType::Strawberry,
            3 => FruitType::Orange,
            4 => FruitType::Pretzel,
            5 => FruitType::Apple,
            6 => FruitType::Pear,
            7 => FruitType::Banana,
            _ => FruitType::ALL[self.rng.gen_range(0..FruitType::ALL.len())],
        }
    }

    fn enter_level(&mut self) {
        let map_index = self.map_index();
        let maze = &self.maps[map_index];
        let size = maze.width * maze.height;
        self.pellets = vec![false; size];
        self.power_pellets = vec![false; size];
        for &c in &maze.pellet_cells {
            self.pellets[c.y * maze.width + c.x] = true;
        }
        for &c in &maze.power_pellet_cells {
            self.power_pellets[c.y * maze.width + c.x] = true;
        }
        self.pellets_left = maze.pellet_cells.len();
        self.power_left = maze.power_pellet_cells.len();
        self.initial_pellets = self.pellets_left;
        self.player = maze.player_spawn;
        self.orientation = 0;
        self.fruit = None;
        self.fruit_spawned = 0;
        self.blue_chain = 0;
        self.level_step = 0;
        self.spawn_ghosts(self.step_count);
    }

    fn spawn_ghosts(&mut self, from_step: usize) {
        let maze = self.maze();
        let house = maze.ghost_house.clone();
        let base = from_step.max(self.cfg.intro_steps);
        self.ghosts = (0..GHOST_COUNT)
            .map(|g| Ghost {
                cell: house[g % house.len()],
                mode: GhostMode::Normal,
                dir: None,
                release_at: base + g * self.cfg.ghost_release_interval,
            })
            .collect();
    }

    fn ghost_step(&mut self, player_dist: &[u32]) {
        let maze_idx = self.map_index();
        for g in 0..GHOST_COUNT {
            let ghost = &self.ghosts[g];
            if self.step_count < ghost.release_at {
                continue;
            }
            let (cell, dir, mode) = (ghost.cell, ghost.dir, ghost.mode);
            let maze = &self.maps[maze_idx];
            let mut candidates: Vec<(usize, Cell)> = (0..ORIENTATIONS)
                .filter_map(|d| maze.neighbor(cell, d).map(|c| (d, c)))
                .collect();
            if candidates.len() > 1 {
                if let Some(d) = dir {
                    let reverse = (d + 2) % 4;
                    candidates.retain(|&(cd, _)| cd != reverse);
                }
            }
            if candidates.is_empty() {
                continue;
            }
            let chase = self.rng.gen::<f64>() < self.cfg.ghost_chase_prob;
            let (new_dir, new_cell) = if chase {
                let key = |c: Cell| player_dist[c.y * maze.width + c.x];
                let pick = match mode {
                    GhostMode::Normal => candidates
                        .iter()
                        .min_by_key(|&&(d, c)| (key(c), d))
                        .copied()
                        .unwrap(),
                    GhostMode::Blue(_) => candidates
                        .iter()
                        .max_by_key(|&&(d, c)| (key(c), usize::MAX - d))
                        .copied()
                        .unwrap(),
                };
                pick
            } else {
                candidates[self.rng.gen_range(0..candidates.len())]
            };
            let ghost = &mut self.ghosts[g];
            ghost.cell = new_cell;
            ghost.dir = Some(new_dir);
        }
    }

    /// Resolve player-ghost contacts: same cell, or the two swapped cells
    /// during the last move. Returns true if the player died.
    fn resolve_collisions(
        &mut self,
        prev_player: Cell,
        prev_ghost_cells: &[Cell],
        components: &mut [f64],
        events: &mut Vec<EventTag>,
    ) -> bool {
        for g in 0..GHOST_COUNT {
            if self.step_count < self.ghosts[g].release_at {
                continue;
            }
            let here = self.ghosts[g].cell == self.player;
            let swapped =
                self.ghosts[g].cell == prev_player && prev_ghost_cells[g] == self.player;
            if !(here || swapped) {
                continue;
            }
            match self.ghosts[g].mode {
                GhostMode::Blue(_) => {
                    let chain = self.blue_chain.min(3);
                    let pts = self.points.blue_ghost_chain[chain];
                    components[COMP_BLUE_GHOST] += pts as f64;
                    self.score += pts;
                    events.push(EventTag::BlueGhostEaten { ghost: g, chain });
                    self.blue_chain = (self.blue_chain + 1).min(4);
                    // Eaten ghost returns home and waits for re-release.
                    let house = self.maze().ghost_house.clone();
                    let ghost = &mut self.ghosts[g];
                    ghost.cell = house[g % house.len()];
                    ghost.mode = GhostMode::Normal;
                    ghost.dir = None;
                    ghost.release_at = self.step_count + self.cfg.ghost_release_interval;
                }
                GhostMode::Normal => {
                    self.handle_death(g, components, events);
                    return true;
                }
            }
        }
        false
    }

    fn handle_death(
        &mut self,
        ghost: usize,
        components: &mut [f64],
        events: &mut Vec<EventTag>,
    ) {
        components[COMP_GHOST] -= 1000.0;
        events.push(EventTag::GhostContact { ghost });
        self.lives -= 1;
        if self.lives == 0 {
            self.game_over = true;
            return;
        }
        let maze = self.maze();
        self.player = maze.player_spawn;
        self.orientation = 0;
        self.blue_chain = 0;
        self.spawn_ghosts(self.step_count + 1);
    }
}

impl Environment for MazeWorld {
    fn action_count(&self) -> usize {
        MAZE_ACTIONS
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.level = 1;
        self.lives = self.cfg.lives;
        self.score = 0;
        self.step_count = 0;
        self.game_over = false;
        self.enter_level();
    }

    fn step(&mut self, a: ActionId) -> Result<DecomposedTransition> {
        if self.game_over {
            return Err(HraError::InvalidState("no lives left".into()));
        }
        if a.0 >= MAZE_ACTIONS {
            return Err(HraError::InvalidArgument(format!("action {} out of range", a.0)));
        }
        let s = self.state_id();
        let mut components = vec![0.0; MAZE_COMPONENTS];
        let mut events = Vec::new();

        if self.step_count < self.cfg.intro_steps {
            // Inactive intro period: all actions ignored, nothing moves.
            self.step_count += 1;
            self.level_step += 1;
            return Ok(DecomposedTransition {
                s,
                a,
                s_next: s,
                r_env: 0.0,
                shaping: 0.0,
                r_components: components,
                terminal: false,
                events,
            });
        }

        // Blue timers tick down; when the window closes the chain resets.
        let mut any_blue = false;
        for ghost in self.ghosts.iter_mut() {
            if let GhostMode::Blue(t) = ghost.mode {
                if t <= 1 {
                    ghost.mode = GhostMode::Normal;
                } else {
                    ghost.mode = GhostMode::Blue(t - 1);
                    any_blue = true;
                }
            }
        }
        if !any_blue {
            self.blue_chain = 0;
        }

        // Collisions are checked both before and after movement, so a ghost
        // standing on the player cannot slip past by moving the same step.
        let pre_ghost_cells: Vec<Cell> = self.ghosts.iter().map(|g| g.cell).collect();
        let mut died =
            self.resolve_collisions(self.player, &pre_ghost_cells, &mut components, &mut events);

        if !died {
            // Movement: player first, then ghosts (lock-step, one cell each).
            let before_player = self.player;
            let (next_cell, next_orient) =
                self.maze().player_move(self.player, self.orientation, a.0);
            self.player = next_cell;
            self.orientation = next_orient;

            let ghost_cells_before: Vec<Cell> = self.ghosts.iter().map(|g| g.cell).collect();
            let player_dist = self.maze().bfs_distances(self.player);
            self.ghost_step(&player_dist);

            died = self.resolve_collisions(
                before_player,
                &ghost_cells_before,
                &mut components,
                &mut events,
            );
        }

        if !died {
            // Eating resolves after safe movement.
            let maze_width = self.maze().width;
            let idx = self.player.y * maze_width + self.player.x;
            if self.pellets[idx] {
                self.pellets[idx] = false;
                self.pellets_left -= 1;
                components[COMP_PELLET] += self.points.pellet as f64;
                self.score += self.points.pellet;
                events.push(EventTag::PelletEaten { cell: self.player });
            }
            if self.power_pellets[idx] {
                self.power_pellets[idx] = false;
                self.power_left -= 1;
                components[COMP_POWER_PELLET] += self.points.power_pellet as f64;
                self.score += self.points.power_pellet;
                events.push(EventTag::PowerPelletEaten { cell: self.player });
                self.blue_chain = 0;
                let duration = self.cfg.blue_duration;
                for ghost in self.ghosts.iter_mut() {
                    ghost.mode = GhostMode::Blue(duration);
                }
            }
            if let Some((cell, fruit_type, _)) = self.fruit {
                if cell == self.player {
                    let pts = self.points.fruit[fruit_type.index()];
                    components[COMP_FRUIT] += pts as f64;
                    self.score += pts;
                    events.push(EventTag::BonusFruitEaten { cell, points: pts });
                    self.fruit = None;
                }
            }
            // Fruit timer and spawn thresholds (3/4 and 1/4 of the initial
            // pellet count, twice per level).
            if let Some((_, _, ref mut timer)) = self.fruit {
                *timer -= 1;
                if *timer == 0 {
                    self.fruit = None;
                }
            }
            let spawn_thresholds =
                [self.initial_pellets * 3 / 4, self.initial_pellets / 4];
            if self.fruit_spawned < spawn_thresholds.len()
                && self.pellets_left <= spawn_thresholds[self.fruit_spawned]
                && self.fruit.is_none()
                && self.pellets_left > 0
            {
                let level = self.level;
                let fruit_type = self.fruit_type_for_level(level);
                self.fruit =
                    Some((self.maze().fruit_spawn, fruit_type, self.cfg.fruit_duration));
                self.fruit_spawned += 1;
            }

            if self.pellets_left == 0 && self.power_left == 0 {
                events.push(EventTag::LevelComplete { level: self.level });
                self.level += 1;
                self.step_count += 1;
                self.level_step = 0;
                self.enter_level();
                let r_env: f64 = components.iter().sum::<f64>();
                return Ok(DecomposedTransition {
                    s,
                    a,
                    s_next: self.state_id(),
                    r_env,
                    shaping: 0.0,
                    r_components: components,
                    terminal: false,
                    events,
                });
            }
        }

        self.step_count += 1;
        self.level_step += 1;
        let shaping = if died { -1000.0 } else { 0.0 };
        let r_env: f64 = components.iter().sum::<f64>() - shaping;
        Ok(DecomposedTransition {
            s,
            a,
            s_next: self.state_id(),
            r_env,
            shaping,
            r_components: components,
            terminal: self.game_over,
            events,
        })
    }

    fn is_terminal(&self) -> bool {
        self.game_over
    }

    fn state_id(&self) -> StateId {
        StateId(self.player_state_index())
    }

    fn component_names(&self) -> Vec<String> {
        ["pellet", "power_pellet", "fruit", "ghost", "blue_ghost"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}
