//! The sixteen annotated features and their fixed index order.
//!
//! Index layout: shapes 0..=4, colors 5..=10, positions 11..=15. Every
//! 16-vector in the crate (counts, affinities, occurrence rates) follows it.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const NUM_FEATURES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Circle,
    Triangle,
    Square,
    Pentagon,
    Hexagon,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Pink,
    Black,
    Yellow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Position {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
}

impl Shape {
    pub const ALL: [Shape; 5] = [
        Shape::Circle,
        Shape::Triangle,
        Shape::Square,
        Shape::Pentagon,
        Shape::Hexagon,
    ];
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Pink,
        Color::Black,
        Color::Yellow,
    ];

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [255, 0, 0],
            Color::Green => [0, 170, 0],
            Color::Blue => [0, 0, 255],
            Color::Pink => [255, 105, 180],
            Color::Black => [0, 0, 0],
            Color::Yellow => [240, 220, 0],
        }
    }
}

impl Position {
    pub const ALL: [Position; 5] = [
        Position::TopLeft,
        Position::TopRight,
        Position::BottomLeft,
        Position::BottomRight,
        Position::Center,
    ];

    /// Anchor point as a fraction of the canvas side, `(x, y)` with y down.
    pub fn anchor(self) -> (f64, f64) {
        match self {
            Position::TopLeft => (0.25, 0.25),
            Position::TopRight => (0.75, 0.25),
            Position::BottomLeft => (0.25, 0.75),
            Position::BottomRight => (0.75, 0.75),
            Position::Center => (0.5, 0.5),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Shape,
    Color,
    Position,
}

const NAMES: [&str; NUM_FEATURES] = [
    "circle",
    "triangle",
    "square",
    "pentagon",
    "hexagon",
    "red",
    "green",
    "blue",
    "pink",
    "black",
    "yellow",
    "top-left",
    "top-right",
    "bottom-left",
    "bottom-right",
    "center",
];

/// One of the sixteen features, identified by its global index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureId(u8);

impl FeatureId {
    pub fn from_index(index: usize) -> Option<Self> {
        (index < NUM_FEATURES).then_some(Self(index as u8))
    }

    pub fn from_name(name: &str) -> Option<Self> {
        NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
            .map(|i| Self(i as u8))
    }

    pub fn all() -> impl Iterator<Item = FeatureId> {
        (0..NUM_FEATURES as u8).map(FeatureId)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        NAMES[self.index()]
    }

    pub fn kind(self) -> FeatureKind {
        match self.0 {
            0..=4 => FeatureKind::Shape,
            5..=10 => FeatureKind::Color,
            _ => FeatureKind::Position,
        }
    }

    /// Index within its own kind (e.g. `red` is color 0).
    pub fn value(self) -> usize {
        match self.kind() {
            FeatureKind::Shape => self.index(),
            FeatureKind::Color => self.index() - 5,
            FeatureKind::Position => self.index() - 11,
        }
    }

    pub fn names() -> Vec<String> {
        NAMES.iter().map(|s| s.to_string()).collect()
    }
}

impl From<Shape> for FeatureId {
    fn from(s: Shape) -> Self {
        Self(s as u8)
    }
}

impl From<Color> for FeatureId {
    fn from(c: Color) -> Self {
        Self(5 + c as u8)
    }
}

impl From<Position> for FeatureId {
    fn from(p: Position) -> Self {
        Self(11 + p as u8)
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for FeatureId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for FeatureId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        FeatureId::from_name(&name)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown feature {name:?}")))
    }
}
