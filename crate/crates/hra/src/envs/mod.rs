//! The two built-in environments: the fruit-collection grid and a
//! Pac-Man-style maze world.

pub mod fruit;
pub mod maze;

pub use fruit::{FeatureProjection, FruitGrid, JointReward};
pub use maze::{Maze, MazeConfig, MazeWorld, PointsTable};
