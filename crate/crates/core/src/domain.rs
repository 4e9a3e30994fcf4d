//! Task vocabulary: grid worlds, commands, the ground-truth target resolver
//! and compositional split tagging.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length of the square grid.
pub const GRID_SIDE: usize = 6;
/// Number of grid cells, and therefore of output classes.
pub const GRID_CELLS: usize = GRID_SIDE * GRID_SIDE;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("unknown {kind} `{value}`")]
    UnknownWord { kind: &'static str, value: String },
    #[error("cell index {0} outside the 6x6 grid")]
    CellOutOfRange(usize),
    #[error("size {0} outside 1..=4")]
    SizeOutOfRange(u8),
    #[error("malformed command: {0}")]
    MalformedCommand(String),
    #[error("invalid world: {0}")]
    InvalidWorld(String),
}

macro_rules! word_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal, [$($variant:ident => $text:literal),+ $(,)?]) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            /// Stable integer code, the position in `ALL`.
            pub fn code(self) -> usize {
                self as usize
            }

            pub fn parse(s: &str) -> Result<Self, DomainError> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(DomainError::UnknownWord { kind: $kind, value: s.to_string() }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

word_enum!(Color, "color", [Red => "red", Green => "green", Blue => "blue"]);
word_enum!(Shape, "shape", [Square => "square", Circle => "circle", Cylinder => "cylinder"]);
word_enum!(SizeWord, "size word", [Small => "small", Big => "big"]);
word_enum!(
    /// Relation between target and referent; surfaces as `same <kind>`.
    Relation, "relation", [SameSize => "size", SameColor => "color", SameShape => "shape"]
);
word_enum!(
    Variant, "variant", [TwoAttr => "two-attr", ThreeAttr => "three-attr", ThreeAttrRel => "three-attr-rel"]
);

impl Variant {
    /// Number of command slots fed to the model.
    pub fn command_len(self) -> usize {
        match self {
            Variant::TwoAttr => 2,
            Variant::ThreeAttr => 3,
            Variant::ThreeAttrRel => 8,
        }
    }

    pub fn has_size(self) -> bool {
        self != Variant::TwoAttr
    }

    /// Compositional splits defined for this variant.
    pub fn split_tags(self) -> &'static [SplitTag] {
        match self {
            Variant::ThreeAttr => &[SplitTag::A1, SplitTag::A2, SplitTag::A3, SplitTag::A4],
            _ => &[SplitTag::A1, SplitTag::A2],
        }
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Variant::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Object size, 1 (smallest) to 4 (largest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SizeVal(u8);

impl SizeVal {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 4;

    pub fn new(v: u8) -> Result<Self, DomainError> {
        if (Self::MIN..=Self::MAX).contains(&v) {
            Ok(SizeVal(v))
        } else {
            Err(DomainError::SizeOutOfRange(v))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

/// Row-major cell index on the 6x6 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex(u8);

impl CellIndex {
    pub fn new(idx: usize) -> Result<Self, DomainError> {
        if idx < GRID_CELLS {
            Ok(CellIndex(idx as u8))
        } else {
            Err(DomainError::CellOutOfRange(idx))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn row(self) -> usize {
        self.index() / GRID_SIDE
    }

    pub fn col(self) -> usize {
        self.index() % GRID_SIDE
    }

    pub fn all() -> impl Iterator<Item = CellIndex> {
        (0..GRID_CELLS as u8).map(CellIndex)
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WorldObject {
    pub color: Color,
    pub shape: Shape,
    pub size: Option<SizeVal>,
}

impl WorldObject {
    pub fn new(color: Color, shape: Shape, size: Option<SizeVal>) -> Self {
        WorldObject { color, shape, size }
    }

    pub fn sized(color: Color, shape: Shape, size: u8) -> Self {
        WorldObject { color, shape, size: Some(SizeVal::new(size).expect("size in 1..=4")) }
    }

    pub fn plain(color: Color, shape: Shape) -> Self {
        WorldObject { color, shape, size: None }
    }

    pub fn is(&self, color: Color, shape: Shape) -> bool {
        self.color == color && self.shape == shape
    }

    fn size_rank(&self) -> u8 {
        self.size.map(SizeVal::get).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridWorld {
    pub variant: Variant,
    pub cells: BTreeMap<CellIndex, WorldObject>,
}

impl GridWorld {
    pub fn new(
        variant: Variant,
        objects: impl IntoIterator<Item = (CellIndex, WorldObject)>,
    ) -> Result<Self, DomainError> {
        let mut cells = BTreeMap::new();
        for (cell, obj) in objects {
            if obj.size.is_some() != variant.has_size() {
                return Err(DomainError::InvalidWorld(format!(
                    "object at cell {cell} has size {:?} in a {variant} world",
                    obj.size.map(SizeVal::get)
                )));
            }
            if cells.insert(cell, obj).is_some() {
                return Err(DomainError::InvalidWorld(format!("two objects at cell {cell}")));
            }
        }
        if cells.is_empty() {
            return Err(DomainError::InvalidWorld("world has no objects".into()));
        }
        Ok(GridWorld { variant, cells })
    }

    pub fn get(&self, cell: CellIndex) -> Option<&WorldObject> {
        self.cells.get(&cell)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn objects(&self) -> impl Iterator<Item = (CellIndex, &WorldObject)> {
        self.cells.iter().map(|(c, o)| (*c, o))
    }
}

/// Object description inside a relational command. Shape is mandatory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObjDesc {
    pub size_word: Option<SizeWord>,
    pub color: Option<Color>,
    pub shape: Shape,
}

impl ObjDesc {
    pub fn new(size_word: Option<SizeWord>, color: Option<Color>, shape: Shape) -> Self {
        ObjDesc { size_word, color, shape }
    }

    pub fn shape(shape: Shape) -> Self {
        ObjDesc { size_word: None, color: None, shape }
    }

    /// Matches on color and shape only; the size word is relative and handled by the resolver.
    pub fn matches_attrs(&self, obj: &WorldObject) -> bool {
        obj.shape == self.shape && self.color.is_none_or(|c| obj.color == c)
    }

    fn surface(&self, out: &mut Vec<&'static str>) {
        if let Some(s) = self.size_word {
            out.push(s.as_str());
        }
        if let Some(c) = self.color {
            out.push(c.as_str());
        }
        out.push(self.shape.as_str());
    }

    fn padded(&self, out: &mut Vec<&'static str>) {
        out.push(self.size_word.map_or(PAD_TOKEN, SizeWord::as_str));
        out.push(self.color.map_or(PAD_TOKEN, Color::as_str));
        out.push(self.shape.as_str());
    }

    fn parse(tokens: &[&str]) -> Result<Self, DomainError> {
        let mut rest = tokens;
        let mut size_word = None;
        let mut color = None;
        if let Some((first, tail)) = rest.split_first() {
            if let Ok(s) = SizeWord::parse(first) {
                size_word = Some(s);
                rest = tail;
            }
        }
        if let Some((first, tail)) = rest.split_first() {
            if let Ok(c) = Color::parse(first) {
                color = Some(c);
                rest = tail;
            }
        }
        match rest {
            [shape] => Ok(ObjDesc { size_word, color, shape: Shape::parse(shape)? }),
            _ => Err(DomainError::MalformedCommand(format!(
                "object description `{}` must end in exactly one shape word",
                tokens.join(" ")
            ))),
        }
    }
}

pub const PAD_TOKEN: &str = "PAD";
pub const SAME_TOKEN: &str = "same";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    TwoAttr { color: Color, shape: Shape },
    ThreeAttr { size_word: SizeWord, color: Color, shape: Shape },
    ThreeAttrRel { target: ObjDesc, rel: Relation, referent: ObjDesc },
}

impl Command {
    pub fn variant(&self) -> Variant {
        match self {
            Command::TwoAttr { .. } => Variant::TwoAttr,
            Command::ThreeAttr { .. } => Variant::ThreeAttr,
            Command::ThreeAttrRel { .. } => Variant::ThreeAttrRel,
        }
    }

    /// Model input tokens: 2, 3 or 8 slots, relational commands padded to a fixed template.
    pub fn tokens(&self) -> Vec<&'static str> {
        match *self {
            Command::TwoAttr { color, shape } => vec![color.as_str(), shape.as_str()],
            Command::ThreeAttr { size_word, color, shape } => {
                vec![size_word.as_str(), color.as_str(), shape.as_str()]
            }
            Command::ThreeAttrRel { target, rel, referent } => {
                let mut out = Vec::with_capacity(8);
                target.padded(&mut out);
                out.push(SAME_TOKEN);
                out.push(rel.as_str());
                referent.padded(&mut out);
                out
            }
        }
    }

    /// Unpadded surface form, as written to dataset files.
    pub fn surface_tokens(&self) -> Vec<&'static str> {
        match self {
            Command::ThreeAttrRel { target, rel, referent } => {
                let mut out = Vec::with_capacity(8);
                target.surface(&mut out);
                out.push(SAME_TOKEN);
                out.push(rel.as_str());
                referent.surface(&mut out);
                out
            }
            _ => self.tokens(),
        }
    }

    pub fn parse_surface(variant: Variant, tokens: &[&str]) -> Result<Self, DomainError> {
        let malformed = || DomainError::MalformedCommand(tokens.join(" "));
        match variant {
            Variant::TwoAttr => match tokens {
                [c, s] => Ok(Command::TwoAttr { color: Color::parse(c)?, shape: Shape::parse(s)? }),
                _ => Err(malformed()),
            },
            Variant::ThreeAttr => match tokens {
                [z, c, s] => Ok(Command::ThreeAttr {
                    size_word: SizeWord::parse(z)?,
                    color: Color::parse(c)?,
                    shape: Shape::parse(s)?,
                }),
                _ => Err(malformed()),
            },
            Variant::ThreeAttrRel => {
                let same = tokens.iter().position(|t| *t == SAME_TOKEN).ok_or_else(malformed)?;
                let rel = tokens.get(same + 1).ok_or_else(malformed)?;
                Ok(Command::ThreeAttrRel {
                    target: ObjDesc::parse(&tokens[..same])?,
                    rel: Relation::parse(rel)?,
                    referent: ObjDesc::parse(&tokens[same + 2..])?,
                })
            }
        }
    }
}

/// Free-function form of [`Command::tokens`].
pub fn command_tokens(command: &Command) -> Vec<&'static str> {
    command.tokens()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SplitTag {
    #[serde(rename = "random")]
    Random,
    A1,
    A2,
    A3,
    A4,
}

impl SplitTag {
    pub const ALL: [SplitTag; 5] =
        [SplitTag::Random, SplitTag::A1, SplitTag::A2, SplitTag::A3, SplitTag::A4];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Random => "random",
            SplitTag::A1 => "A1",
            SplitTag::A2 => "A2",
            SplitTag::A3 => "A3",
            SplitTag::A4 => "A4",
        }
    }

    pub fn parse(s: &str) -> Result<Self, DomainError> {
        SplitTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| DomainError::UnknownWord { kind: "split tag", value: s.to_string() })
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub world: GridWorld,
    pub command: Command,
    pub target: CellIndex,
    pub tags: BTreeSet<SplitTag>,
}

impl Example {
    /// Builds an example, resolving and tagging it. Fails unless the command
    /// picks out exactly one object.
    pub fn resolved(world: GridWorld, command: Command) -> Result<Self, Resolution> {
        match resolve_target(&world, &command) {
            Resolution::Target(target) => {
                let mut ex = Example { world, command, target, tags: BTreeSet::new() };
                ex.tags = tag_splits(&ex);
                Ok(ex)
            }
            other => Err(other),
        }
    }

    pub fn variant(&self) -> Variant {
        self.world.variant
    }

    pub fn target_object(&self) -> &WorldObject {
        self.world.get(self.target).expect("target cell holds an object")
    }

    pub fn has_tag(&self, tag: SplitTag) -> bool {
        self.tags.contains(&tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Target(CellIndex),
    NoMatch,
    Ambiguous,
}

impl Resolution {
    pub fn target(self) -> Option<CellIndex> {
        match self {
            Resolution::Target(c) => Some(c),
            _ => None,
        }
    }
}

fn select(candidates: Vec<(CellIndex, &WorldObject)>, size_word: Option<SizeWord>) -> Resolution {
    if candidates.is_empty() {
        return Resolution::NoMatch;
    }
    let extreme = match size_word {
        None => {
            return if candidates.len() == 1 {
                Resolution::Target(candidates[0].0)
            } else {
                Resolution::Ambiguous
            };
        }
        Some(SizeWord::Small) => candidates.iter().map(|(_, o)| o.size_rank()).min(),
        Some(SizeWord::Big) => candidates.iter().map(|(_, o)| o.size_rank()).max(),
    }
    .expect("nonempty");
    let mut hits = candidates.iter().filter(|(_, o)| o.size_rank() == extreme);
    match (hits.next(), hits.next()) {
        (Some((cell, _)), None) => Resolution::Target(*cell),
        _ => Resolution::Ambiguous,
    }
}

fn related(rel: Relation, a: &WorldObject, b: &WorldObject) -> bool {
    match rel {
        Relation::SameSize => a.size == b.size,
        Relation::SameColor => a.color == b.color,
        Relation::SameShape => a.shape == b.shape,
    }
}

/// Resolves a standalone object description (size word relative to the
/// color/shape matches).
pub fn resolve_description(world: &GridWorld, desc: &ObjDesc) -> Resolution {
    select(world.objects().filter(|(_, o)| desc.matches_attrs(o)).collect(), desc.size_word)
}

/// Ground-truth resolver. Panics if the command variant differs from the world's.
pub fn resolve_target(world: &GridWorld, command: &Command) -> Resolution {
    assert_eq!(
        world.variant,
        command.variant(),
        "resolve_target: {} command against a {} world",
        command.variant(),
        world.variant
    );
    match *command {
        Command::TwoAttr { color, shape } => {
            select(world.objects().filter(|(_, o)| o.is(color, shape)).collect(), None)
        }
        Command::ThreeAttr { size_word, color, shape } => {
            select(world.objects().filter(|(_, o)| o.is(color, shape)).collect(), Some(size_word))
        }
        Command::ThreeAttrRel { target, rel, referent } => {
            let referent_cell = match resolve_description(world, &referent) {
                Resolution::Target(c) => c,
                other => return other,
            };
            let anchor = world.get(referent_cell).expect("resolved cell is occupied");
            let candidates = world
                .objects()
                .filter(|(c, o)| {
                    *c != referent_cell && target.matches_attrs(o) && related(rel, o, anchor)
                })
                .collect();
            select(candidates, target.size_word)
        }
    }
}

/// Compositional split membership of an example. `Random` is always present.
pub fn tag_splits(example: &Example) -> BTreeSet<SplitTag> {
    let mut tags = BTreeSet::from([SplitTag::Random]);
    let target = example.world.get(example.target);
    if target.is_some_and(|o| o.is(Color::Green, Shape::Square)) {
        tags.insert(SplitTag::A1);
    }
    if example.world.objects().any(|(_, o)| o.is(Color::Red, Shape::Circle)) {
        tags.insert(SplitTag::A2);
    }
    if let Command::ThreeAttr { size_word: SizeWord::Small, color, shape } = example.command {
        if (color, shape) == (Color::Green, Shape::Circle)
            && target.and_then(|o| o.size).map(SizeVal::get) == Some(2)
        {
            tags.insert(SplitTag::A3);
        }
        if (color, shape) == (Color::Blue, Shape::Cylinder) {
            tags.insert(SplitTag::A4);
        }
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;
    use Color::*;
    use Shape::*;

    fn cell(i: usize) -> CellIndex {
        CellIndex::new(i).unwrap()
    }

    fn world(variant: Variant, objs: &[(usize, WorldObject)]) -> GridWorld {
        GridWorld::new(variant, objs.iter().map(|(c, o)| (cell(*c), *o))).unwrap()
    }

    #[test]
    fn single_object_two_attr() {
        let w = world(Variant::TwoAttr, &[(0, WorldObject::plain(Red, Circle))]);
        let cmd = Command::TwoAttr { color: Red, shape: Circle };
        assert_eq!(resolve_target(&w, &cmd), Resolution::Target(cell(0)));
    }

    #[test]
    fn full_match_beats_partial_matches() {
        let w = world(
            Variant::TwoAttr,
            &[
                (5, WorldObject::plain(Red, Cylinder)),
                (9, WorldObject::plain(Blue, Cylinder)),
                (20, WorldObject::plain(Red, Circle)),
                (30, WorldObject::plain(Green, Square)),
            ],
        );
        let cmd = Command::TwoAttr { color: Red, shape: Cylinder };
        assert_eq!(resolve_target(&w, &cmd), Resolution::Target(cell(5)));
    }

    #[test]
    fn small_is_relative() {
        let w = world(
            Variant::ThreeAttr,
            &[
                (3, WorldObject::sized(Green, Circle, 2)),
                (10, WorldObject::sized(Green, Circle, 4)),
                (12, WorldObject::sized(Red, Square, 1)),
            ],
        );
        let cmd = Command::ThreeAttr { size_word: SizeWord::Small, color: Green, shape: Circle };
        assert_eq!(resolve_target(&w, &cmd), Resolution::Target(cell(3)));
        let big = Command::ThreeAttr { size_word: SizeWord::Big, color: Green, shape: Circle };
        assert_eq!(resolve_target(&w, &big), Resolution::Target(cell(10)));
    }

    #[test]
    fn duplicate_full_match_is_ambiguous() {
        let w = world(
            Variant::ThreeAttr,
            &[(1, WorldObject::sized(Red, Square, 2)), (8, WorldObject::sized(Red, Square, 2))],
        );
        let cmd = Command::ThreeAttr { size_word: SizeWord::Small, color: Red, shape: Square };
        assert_eq!(resolve_target(&w, &cmd), Resolution::Ambiguous);
        let w2 = world(
            Variant::TwoAttr,
            &[(1, WorldObject::plain(Red, Square)), (8, WorldObject::plain(Red, Square))],
        );
        assert_eq!(
            resolve_target(&w2, &Command::TwoAttr { color: Red, shape: Square }),
            Resolution::Ambiguous
        );
    }

    #[test]
    fn missing_object_is_no_match() {
        let w = world(Variant::TwoAttr, &[(1, WorldObject::plain(Red, Square))]);
        assert_eq!(
            resolve_target(&w, &Command::TwoAttr { color: Blue, shape: Square }),
            Resolution::NoMatch
        );
    }

    #[test]
    fn relational_resolution() {
        let w = world(
            Variant::ThreeAttrRel,
            &[
                (2, WorldObject::sized(Blue, Square, 1)),
                (7, WorldObject::sized(Blue, Circle, 1)),
                (9, WorldObject::sized(Red, Circle, 3)),
            ],
        );
        let cmd = Command::ThreeAttrRel {
            target: ObjDesc::shape(Circle),
            rel: Relation::SameSize,
            referent: ObjDesc::new(None, Some(Blue), Square),
        };
        assert_eq!(resolve_target(&w, &cmd), Resolution::Target(cell(7)));
        // Without the relation filter both circles would compete.
        let loose = Command::ThreeAttrRel {
            target: ObjDesc::shape(Circle),
            rel: Relation::SameShape,
            referent: ObjDesc::new(None, Some(Blue), Square),
        };
        assert_eq!(resolve_target(&w, &loose), Resolution::NoMatch);
    }

    #[test]
    fn relational_referent_must_be_unique() {
        let w = world(
            Variant::ThreeAttrRel,
            &[
                (2, WorldObject::sized(Blue, Square, 1)),
                (3, WorldObject::sized(Red, Square, 1)),
                (7, WorldObject::sized(Blue, Circle, 1)),
            ],
        );
        let cmd = Command::ThreeAttrRel {
            target: ObjDesc::shape(Circle),
            rel: Relation::SameSize,
            referent: ObjDesc::shape(Square),
        };
        assert_eq!(resolve_target(&w, &cmd), Resolution::Ambiguous);
    }

    #[test]
    #[should_panic(expected = "resolve_target")]
    fn variant_mismatch_panics() {
        let w = world(Variant::TwoAttr, &[(1, WorldObject::plain(Red, Square))]);
        resolve_target(&w, &Command::ThreeAttr { size_word: SizeWord::Big, color: Red, shape: Square });
    }

    #[test]
    fn token_templates() {
        assert_eq!(Command::TwoAttr { color: Red, shape: Cylinder }.tokens(), ["red", "cylinder"]);
        assert_eq!(
            Command::ThreeAttr { size_word: SizeWord::Big, color: Blue, shape: Square }.tokens(),
            ["big", "blue", "square"]
        );
        let rel = Command::ThreeAttrRel {
            target: ObjDesc::shape(Circle),
            rel: Relation::SameColor,
            referent: ObjDesc::new(Some(SizeWord::Small), Some(Red), Square),
        };
        assert_eq!(rel.tokens(), ["PAD", "PAD", "circle", "same", "color", "small", "red", "square"]);
        assert_eq!(rel.surface_tokens(), ["circle", "same", "color", "small", "red", "square"]);
        assert_eq!(Command::parse_surface(Variant::ThreeAttrRel, &rel.surface_tokens()), Ok(rel));
    }

    #[test]
    fn malformed_surface_rejected() {
        assert!(Command::parse_surface(Variant::ThreeAttrRel, &["circle", "same"]).is_err());
        assert!(Command::parse_surface(Variant::ThreeAttrRel, &["red", "same", "size", "circle"])
            .is_err());
        assert!(Command::parse_surface(Variant::TwoAttr, &["red"]).is_err());
    }

    #[test]
    fn split_tags() {
        let w = world(
            Variant::ThreeAttr,
            &[
                (0, WorldObject::sized(Blue, Cylinder, 1)),
                (1, WorldObject::sized(Blue, Cylinder, 3)),
                (2, WorldObject::sized(Green, Square, 2)),
            ],
        );
        let ex = Example::resolved(
            w,
            Command::ThreeAttr { size_word: SizeWord::Small, color: Blue, shape: Cylinder },
        )
        .unwrap();
        assert_eq!(ex.tags, BTreeSet::from([SplitTag::Random, SplitTag::A4]));

        let w = world(
            Variant::TwoAttr,
            &[(0, WorldObject::plain(Green, Square)), (4, WorldObject::plain(Red, Circle))],
        );
        let ex = Example::resolved(w, Command::TwoAttr { color: Green, shape: Square }).unwrap();
        assert_eq!(ex.tags, BTreeSet::from([SplitTag::Random, SplitTag::A1, SplitTag::A2]));

        let w = world(
            Variant::TwoAttr,
            &[(0, WorldObject::plain(Blue, Square)), (4, WorldObject::plain(Green, Cylinder))],
        );
        let ex = Example::resolved(w, Command::TwoAttr { color: Blue, shape: Square }).unwrap();
        assert_eq!(ex.tags, BTreeSet::from([SplitTag::Random]));
    }

    #[test]
    fn a3_requires_size_two_target() {
        let mk = |target_size| {
            let w = world(
                Variant::ThreeAttr,
                &[
                    (0, WorldObject::sized(Green, Circle, target_size)),
                    (1, WorldObject::sized(Green, Circle, 4)),
                ],
            );
            Example::resolved(
                w,
                Command::ThreeAttr { size_word: SizeWord::Small, color: Green, shape: Circle },
            )
            .unwrap()
        };
        assert!(mk(2).has_tag(SplitTag::A3));
        assert!(!mk(1).has_tag(SplitTag::A3));
    }

    #[test]
    fn cell_layout_is_row_major() {
        let c = cell(13);
        assert_eq!((c.row(), c.col()), (2, 1));
        assert!(CellIndex::new(36).is_err());
    }

    #[test]
    fn world_rejects_mixed_size_presence() {
        assert!(GridWorld::new(Variant::TwoAttr, [(cell(0), WorldObject::sized(Red, Square, 1))])
            .is_err());
        assert!(GridWorld::new(Variant::ThreeAttr, [(cell(0), WorldObject::plain(Red, Square))])
            .is_err());
        assert!(GridWorld::new(Variant::TwoAttr, []).is_err());
    }
}
