//! Seeded world/command sampling, dataset bundles with compositional
//! holdouts, and JSONL persistence.
//!
//! Every example draws from its own ChaCha stream keyed by
//! `(seed, set, index)`, so any subset of a bundle can be regenerated
//! independently and the output never depends on generation order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    resolve_description, resolve_target, CellIndex, Color, Command, DomainError, Example, GridWorld, ObjDesc,
    Relation, Resolution, Shape, SizeVal, SizeWord, SplitTag, Variant, WorldObject, GRID_CELLS,
};

/// Attempts allowed per example before giving up on a constraint.
pub const RESAMPLE_CAP: usize = 1000;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("gave up after {attempts} attempts: {constraint}")]
    ResampleCap { constraint: String, attempts: usize },
    #[error("invalid generation spec: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub variant: Variant,
    pub seed: u64,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Fraction of green-square distractors kept (1.0 leaves the distribution untouched).
    pub green_square_distractor_scale: f64,
    /// Tags excluded from the training set.
    pub holdout: BTreeSet<SplitTag>,
}

impl GenSpec {
    pub fn new(variant: Variant, seed: u64) -> Self {
        GenSpec {
            variant,
            seed,
            train_count: 90_000,
            val_count: 2_500,
            test_count: 2_500,
            min_objects: 3,
            max_objects: 10,
            green_square_distractor_scale: 1.0,
            holdout: variant.split_tags().iter().copied().collect(),
        }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::InvalidSpec(m));
        if self.train_count == 0 || self.val_count == 0 || self.test_count == 0 {
            return bad("train, val and test counts must be positive".into());
        }
        if self.min_objects < 2 || self.max_objects > GRID_CELLS || self.min_objects > self.max_objects
        {
            return bad(format!(
                "object range {}..={} must satisfy 2 <= min <= max <= 36",
                self.min_objects, self.max_objects
            ));
        }
        if self.variant == Variant::ThreeAttrRel && self.max_objects < 3 {
            return bad("three-attr-rel worlds need room for at least 3 objects".into());
        }
        if !(0.0..=1.0).contains(&self.green_square_distractor_scale) {
            return bad(format!(
                "green-square distractor scale {} outside [0, 1]",
                self.green_square_distractor_scale
            ));
        }
        if let Some(t) = self
            .holdout
            .iter()
            .find(|t| **t != SplitTag::Random && !self.variant.split_tags().contains(t))
        {
            return bad(format!("split {t} is not defined for {}", self.variant));
        }
        if self.holdout.contains(&SplitTag::Random) {
            return bad("the random split cannot be held out".into());
        }
        Ok(())
    }
}

/// Which population a draw comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawTarget {
    /// Training distribution: held-out tags never appear.
    Train,
    /// Unrestricted distribution.
    Free,
    /// Targeted generator for one compositional split.
    Split(SplitTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stream {
    Train = 0,
    Val = 1,
    RandomTest = 2,
    Split = 3,
}

/// RNG for example `index` of a given set; independent of every other draw.
pub fn example_rng(seed: u64, set: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((set << 40) | index);
    rng
}

const PAIRS: [(Color, Shape); 9] = [
    (Color::Red, Shape::Square),
    (Color::Red, Shape::Circle),
    (Color::Red, Shape::Cylinder),
    (Color::Green, Shape::Square),
    (Color::Green, Shape::Circle),
    (Color::Green, Shape::Cylinder),
    (Color::Blue, Shape::Square),
    (Color::Blue, Shape::Circle),
    (Color::Blue, Shape::Cylinder),
];

struct Sampler<'a> {
    spec: &'a GenSpec,
    goal: DrawTarget,
}

impl Sampler<'_> {
    fn exclude_red_circle(&self) -> bool {
        self.goal == DrawTarget::Train && self.spec.holdout.contains(&SplitTag::A2)
    }

    fn allowed_pairs(&self) -> Vec<(Color, Shape)> {
        let no_rc = self.exclude_red_circle();
        PAIRS
            .into_iter()
            .filter(|p| !(no_rc && *p == (Color::Red, Shape::Circle)))
            .collect()
    }

    fn object_count(&self, rng: &mut ChaCha8Rng, floor: usize) -> usize {
        rng.gen_range(self.spec.min_objects..=self.spec.max_objects).max(floor)
    }

    /// Per-object rejection of green-square distractors with probability `1 - scale`.
    fn keep_distractor(&self, pair: (Color, Shape), rng: &mut ChaCha8Rng) -> bool {
        pair != (Color::Green, Shape::Square)
            || self.spec.green_square_distractor_scale >= 1.0
            || rng.gen_bool(self.spec.green_square_distractor_scale)
    }

    fn distractor_pair(
        &self,
        pool: &[(Color, Shape)],
        rng: &mut ChaCha8Rng,
    ) -> Result<(Color, Shape), String> {
        for _ in 0..RESAMPLE_CAP {
            let pair = *pool.choose(rng).ok_or("no distractor attributes available")?;
            if self.keep_distractor(pair, rng) {
                return Ok(pair);
            }
        }
        Err("green-square distractor rejection".into())
    }

    fn forced_pair(&self) -> Option<(Color, Shape)> {
        match self.goal {
            DrawTarget::Split(SplitTag::A1) => Some((Color::Green, Shape::Square)),
            DrawTarget::Split(SplitTag::A2) => Some((Color::Red, Shape::Circle)),
            DrawTarget::Split(SplitTag::A3) => Some((Color::Green, Shape::Circle)),
            DrawTarget::Split(SplitTag::A4) => Some((Color::Blue, Shape::Cylinder)),
            _ => None,
        }
    }

    fn place(
        &self,
        objects: Vec<WorldObject>,
        rng: &mut ChaCha8Rng,
    ) -> Result<GridWorld, DomainError> {
        let cells = index::sample(rng, GRID_CELLS, objects.len());
        GridWorld::new(
            self.spec.variant,
            cells.into_iter().map(|c| CellIndex::new(c).expect("sampled below 36")).zip(objects),
        )
    }

    fn draw_two_attr(&self, rng: &mut ChaCha8Rng) -> Result<(GridWorld, Command), String> {
        let pool = self.allowed_pairs();
        let k = self.object_count(rng, 1);
        let target = self.forced_pair().unwrap_or_else(|| *pool.choose(rng).expect("nonempty"));
        let others: Vec<_> = pool.iter().copied().filter(|p| *p != target).collect();
        let mut objects = vec![WorldObject::plain(target.0, target.1)];
        for _ in 1..k {
            let (c, s) = self.distractor_pair(&others, rng)?;
            objects.push(WorldObject::plain(c, s));
        }
        let world = self.place(objects, rng).map_err(|e| e.to_string())?;
        Ok((world, Command::TwoAttr { color: target.0, shape: target.1 }))
    }

    fn draw_three_attr(&self, rng: &mut ChaCha8Rng) -> Result<(GridWorld, Command), String> {
        let pool = self.allowed_pairs();
        let k = self.object_count(rng, 2);
        let target = self.forced_pair().unwrap_or_else(|| *pool.choose(rng).expect("nonempty"));
        let size_word = match self.goal {
            DrawTarget::Split(SplitTag::A3 | SplitTag::A4) => SizeWord::Small,
            _ => *SizeWord::ALL.choose(rng).expect("nonempty"),
        };
        // Comparison group: objects sharing the command's color and shape, distinct sizes.
        let group = rng.gen_range(2..=k.min(4));
        let sizes = index::sample(rng, 4, group);
        let mut objects: Vec<_> = sizes
            .into_iter()
            .map(|s| WorldObject::sized(target.0, target.1, s as u8 + 1))
            .collect();
        let others: Vec<_> = pool.iter().copied().filter(|p| *p != target).collect();
        for _ in group..k {
            let (c, s) = self.distractor_pair(&others, rng)?;
            objects.push(WorldObject::sized(c, s, rng.gen_range(SizeVal::MIN..=SizeVal::MAX)));
        }
        let world = self.place(objects, rng).map_err(|e| e.to_string())?;
        Ok((world, Command::ThreeAttr { size_word, color: target.0, shape: target.1 }))
    }

    fn draw_three_attr_rel(&self, rng: &mut ChaCha8Rng) -> Result<(GridWorld, Command), String> {
        let pool = self.allowed_pairs();
        let k = self.object_count(rng, 3);
        let mut objects = Vec::with_capacity(k);
        for _ in 0..k {
            let (c, s) = self.distractor_pair(&pool, rng)?;
            objects.push(WorldObject::sized(c, s, rng.gen_range(SizeVal::MIN..=SizeVal::MAX)));
        }
        if let Some((c, s)) = self.forced_pair() {
            objects[0] = WorldObject::sized(c, s, rng.gen_range(SizeVal::MIN..=SizeVal::MAX));
        }
        let world = self.place(objects, rng).map_err(|e| e.to_string())?;
        let cells: Vec<CellIndex> = world.cells.keys().copied().collect();

        let target_cell = match self.forced_pair() {
            Some((c, s)) => {
                *cells.iter().find(|cell| world.get(**cell).is_some_and(|o| o.is(c, s))).expect("forced")
            }
            None => *cells.choose(rng).expect("nonempty"),
        };
        let referent_cell = **cells
            .iter()
            .filter(|c| **c != target_cell)
            .collect::<Vec<_>>()
            .choose(rng)
            .expect("at least two objects");
        let target = *world.get(target_cell).expect("occupied");
        let referent = *world.get(referent_cell).expect("occupied");

        let rels: Vec<Relation> = Relation::ALL
            .iter()
            .copied()
            .filter(|r| match r {
                Relation::SameSize => target.size == referent.size,
                Relation::SameColor => target.color == referent.color,
                Relation::SameShape => target.shape == referent.shape,
            })
            .collect();
        let rel = *rels.choose(rng).ok_or("target and referent share no attribute")?;

        let referent_desc = describe(&world, referent_cell, rng, |d| {
            resolve_description(&world, &d) == Resolution::Target(referent_cell)
        })
        .ok_or("no description singles out the referent")?;

        let target_desc = describe(&world, target_cell, rng, |d| {
            let matching = world
                .objects()
                .filter(|(c, o)| *c != referent_cell && d.matches_attrs(o))
                .count();
            let cmd = Command::ThreeAttrRel { target: d, rel, referent: referent_desc };
            matching >= 2 && resolve_target(&world, &cmd) == Resolution::Target(target_cell)
        })
        .ok_or("no target description leaves two same-description candidates")?;

        Ok((world, Command::ThreeAttrRel { target: target_desc, rel, referent: referent_desc }))
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Example, DatagenError> {
        let mut last_failure = String::new();
        for _ in 0..RESAMPLE_CAP {
            let drawn = match self.spec.variant {
                Variant::TwoAttr => self.draw_two_attr(rng),
                Variant::ThreeAttr => self.draw_three_attr(rng),
                Variant::ThreeAttrRel => self.draw_three_attr_rel(rng),
            };
            let (world, command) = match drawn {
                Ok(v) => v,
                Err(why) => {
                    last_failure = why;
                    continue;
                }
            };
            let example = match Example::resolved(world, command) {
                Ok(ex) => ex,
                Err(r) => {
                    last_failure = format!("command does not resolve uniquely ({r:?})");
                    continue;
                }
            };
            match self.goal {
                DrawTarget::Train => {
                    if let Some(t) = self.spec.holdout.iter().find(|t| example.has_tag(**t)) {
                        last_failure = format!("training draw carries held-out tag {t}");
                        continue;
                    }
                }
                DrawTarget::Split(tag) => {
                    if !example.has_tag(tag) {
                        last_failure = format!("targeted draw lacks tag {tag}");
                        continue;
                    }
                }
                DrawTarget::Free => {}
            }
            return Ok(example);
        }
        Err(DatagenError::ResampleCap {
            constraint: format!("{} {:?}: {last_failure}", self.spec.variant, self.goal),
            attempts: RESAMPLE_CAP,
        })
    }
}

/// Tries the four optional-attribute combinations (shape always present) in
/// random order and returns the first one accepted by `ok`.
fn describe(
    world: &GridWorld,
    cell: CellIndex,
    rng: &mut ChaCha8Rng,
    ok: impl Fn(ObjDesc) -> bool,
) -> Option<ObjDesc> {
    let obj = world.get(cell)?;
    let mut options = [(false, false), (false, true), (true, false), (true, true)];
    options.shuffle(rng);
    for (with_size, with_color) in options {
        let color = with_color.then_some(obj.color);
        let words: &[Option<SizeWord>] =
            if with_size { &[Some(SizeWord::Small), Some(SizeWord::Big)] } else { &[None] };
        for &size_word in words {
            let d = ObjDesc { size_word, color, shape: obj.shape };
            if ok(d) {
                return Some(d);
            }
        }
    }
    None
}

/// One draw from the training distribution of `spec`.
pub fn generate_example(spec: &GenSpec, rng: &mut ChaCha8Rng) -> Result<Example, DatagenError> {
    generate_for(spec, DrawTarget::Train, rng)
}

pub fn generate_for(
    spec: &GenSpec,
    goal: DrawTarget,
    rng: &mut ChaCha8Rng,
) -> Result<Example, DatagenError> {
    Sampler { spec, goal }.draw(rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub train: Vec<Example>,
    /// Drawn from the unrestricted distribution so that split-validation subsets exist.
    pub val: Vec<Example>,
    pub random_test: Vec<Example>,
    pub split_tests: BTreeMap<SplitTag, Vec<Example>>,
}

fn generate_set(
    spec: &GenSpec,
    stream: u64,
    count: usize,
    goal: DrawTarget,
) -> Result<Vec<Example>, DatagenError> {
    (0..count as u64)
        .map(|i| generate_for(spec, goal, &mut example_rng(spec.seed, stream, i)))
        .collect()
}

pub fn generate_bundle(spec: &GenSpec) -> Result<DatasetBundle, DatagenError> {
    spec.validate()?;
    let train = generate_set(spec, Stream::Train as u64, spec.train_count, DrawTarget::Train)?;
    let val = generate_set(spec, Stream::Val as u64, spec.val_count, DrawTarget::Free)?;
    let random_test =
        generate_set(spec, Stream::RandomTest as u64, spec.test_count, DrawTarget::Train)?;
    let mut split_tests = BTreeMap::new();
    for &tag in spec.variant.split_tags() {
        let stream = Stream::Split as u64 + tag as u64;
        split_tests.insert(tag, generate_set(spec, stream, spec.test_count, DrawTarget::Split(tag))?);
    }
    Ok(DatasetBundle { train, val, random_test, split_tests })
}

#[derive(Serialize, Deserialize)]
struct ObjectRecord {
    cell: usize,
    color: String,
    shape: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    size: Option<u8>,
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    variant: String,
    command: Vec<String>,
    objects: Vec<ObjectRecord>,
    target: usize,
    tags: Vec<String>,
}

impl From<&Example> for ExampleRecord {
    fn from(ex: &Example) -> Self {
        ExampleRecord {
            variant: ex.variant().as_str().to_string(),
            command: ex.command.surface_tokens().into_iter().map(String::from).collect(),
            objects: ex
                .world
                .objects()
                .map(|(cell, o)| ObjectRecord {
                    cell: cell.index(),
                    color: o.color.as_str().to_string(),
                    shape: o.shape.as_str().to_string(),
                    size: o.size.map(SizeVal::get),
                })
                .collect(),
            target: ex.target.index(),
            tags: ex.tags.iter().map(|t| t.as_str().to_string()).collect(),
        }
    }
}

impl TryFrom<ExampleRecord> for Example {
    type Error = DomainError;

    fn try_from(r: ExampleRecord) -> Result<Self, DomainError> {
        let variant = Variant::parse(&r.variant)?;
        let tokens: Vec<&str> = r.command.iter().map(String::as_str).collect();
        let command = Command::parse_surface(variant, &tokens)?;
        let objects = r
            .objects
            .iter()
            .map(|o| {
                let size = o.size.map(SizeVal::new).transpose()?;
                Ok((
                    CellIndex::new(o.cell)?,
                    WorldObject::new(Color::parse(&o.color)?, Shape::parse(&o.shape)?, size),
                ))
            })
            .collect::<Result<Vec<_>, DomainError>>()?;
        let world = GridWorld::new(variant, objects)?;
        let target = CellIndex::new(r.target)?;
        if world.get(target).is_none() {
            return Err(DomainError::InvalidWorld(format!("target cell {target} is empty")));
        }
        let tags = r.tags.iter().map(|t| SplitTag::parse(t)).collect::<Result<_, _>>()?;
        Ok(Example { world, command, target, tags })
    }
}

pub fn example_to_json(ex: &Example) -> String {
    serde_json::to_string(&ExampleRecord::from(ex)).expect("records always serialize")
}

pub fn example_from_json(line: &str) -> Result<Example, String> {
    let record: ExampleRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    Example::try_from(record).map_err(|e| e.to_string())
}

pub fn write_jsonl_to<W: Write>(examples: &[Example], mut w: W) -> std::io::Result<()> {
    for ex in examples {
        w.write_all(example_to_json(ex).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_jsonl(examples: &[Example], path: impl AsRef<Path>) -> Result<(), DatagenError> {
    write_jsonl_to(examples, BufWriter::new(File::create(path)?))?;
    Ok(())
}

pub fn read_jsonl_from<R: BufRead>(r: R) -> Result<Vec<Example>, DatagenError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            example_from_json(&line)
                .map_err(|message| DatagenError::Malformed { line: i + 1, message })?,
        );
    }
    Ok(out)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Example>, DatagenError> {
    read_jsonl_from(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleCounts {
    pub as_target: usize,
    pub as_distractor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub examples: usize,
    pub mean_objects: f64,
    pub mean_green_square_distractors: f64,
    /// Keyed by object label, e.g. `green_square` or `2_green_square`.
    pub objects: BTreeMap<String, RoleCounts>,
    pub tags: BTreeMap<String, usize>,
}

impl StatsReport {
    pub fn pair_counts(&self, color: Color, shape: Shape) -> RoleCounts {
        let pair = format!("{color}_{shape}");
        let sized: Vec<String> = (SizeVal::MIN..=SizeVal::MAX).map(|s| format!("{s}_{pair}")).collect();
        self.objects
            .iter()
            .filter(|(k, _)| **k == pair || sized.contains(k))
            .fold(RoleCounts::default(), |acc, (_, c)| RoleCounts {
                as_target: acc.as_target + c.as_target,
                as_distractor: acc.as_distractor + c.as_distractor,
            })
    }
}

pub fn object_label(o: &WorldObject) -> String {
    match o.size {
        Some(s) => format!("{}_{}_{}", s.get(), o.color, o.shape),
        None => format!("{}_{}", o.color, o.shape),
    }
}

/// Panics on an empty list.
pub fn dataset_stats(examples: &[Example]) -> StatsReport {
    assert!(!examples.is_empty(), "dataset_stats needs at least one example");
    let mut objects: BTreeMap<String, RoleCounts> = BTreeMap::new();
    let mut tags: BTreeMap<String, usize> = BTreeMap::new();
    let mut total_objects = 0usize;
    let mut gs_distractors = 0usize;
    for ex in examples {
        total_objects += ex.world.len();
        for (cell, o) in ex.world.objects() {
            let entry = objects.entry(object_label(o)).or_default();
            if cell == ex.target {
                entry.as_target += 1;
            } else {
                entry.as_distractor += 1;
                if o.is(Color::Green, Shape::Square) {
                    gs_distractors += 1;
                }
            }
        }
        for t in &ex.tags {
            *tags.entry(t.as_str().to_string()).or_default() += 1;
        }
    }
    let n = examples.len() as f64;
    StatsReport {
        examples: examples.len(),
        mean_objects: total_objects as f64 / n,
        mean_green_square_distractors: gs_distractors as f64 / n,
        objects,
        tags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(variant: Variant, seed: u64) -> GenSpec {
        GenSpec { train_count: 300, val_count: 100, test_count: 60, ..GenSpec::new(variant, seed) }
    }

    #[test]
    fn first_draw_is_valid() {
        let spec = GenSpec::new(Variant::TwoAttr, 7);
        let ex = generate_example(&spec, &mut example_rng(7, 0, 0)).unwrap();
        assert_eq!(resolve_target(&ex.world, &ex.command), Resolution::Target(ex.target));
        assert_eq!(crate::domain::tag_splits(&ex), ex.tags);
        let again = example_from_json(&example_to_json(&ex)).unwrap();
        assert_eq!(crate::domain::tag_splits(&again), ex.tags);
    }

    #[test]
    fn three_attr_groups_have_distinct_sizes() {
        let spec = small_spec(Variant::ThreeAttr, 3);
        for i in 0..300 {
            let ex = generate_example(&spec, &mut example_rng(3, 0, i)).unwrap();
            let Command::ThreeAttr { color, shape, .. } = ex.command else { panic!() };
            let sizes: Vec<_> =
                ex.world.objects().filter(|(_, o)| o.is(color, shape)).map(|(_, o)| o.size).collect();
            let distinct: BTreeSet<_> = sizes.iter().collect();
            assert!(sizes.len() >= 2);
            assert_eq!(distinct.len(), sizes.len());
        }
    }

    #[test]
    fn relational_draws_need_two_candidates() {
        let spec = small_spec(Variant::ThreeAttrRel, 11);
        for i in 0..300 {
            let ex = generate_example(&spec, &mut example_rng(11, 0, i)).unwrap();
            let Command::ThreeAttrRel { target, referent, .. } = ex.command else { panic!() };
            let referent_cell = ex
                .world
                .objects()
                .filter(|(_, o)| referent.matches_attrs(o))
                .map(|(c, _)| c)
                .collect::<Vec<_>>();
            assert!(!referent_cell.is_empty());
            let matching = ex.world.objects().filter(|(_, o)| target.matches_attrs(o)).count();
            assert!(matching >= 2, "example {i}");
            assert!(ex.world.len() >= 3);
        }
    }

    #[test]
    fn bundle_counts_and_purity() {
        for variant in Variant::ALL {
            let spec = small_spec(*variant, 5);
            let b = generate_bundle(&spec).unwrap();
            assert_eq!(b.train.len(), 300);
            assert_eq!(b.val.len(), 100);
            assert_eq!(b.random_test.len(), 60);
            assert_eq!(b.split_tests.len(), variant.split_tags().len());
            for ex in &b.train {
                assert!(spec.holdout.iter().all(|t| !ex.has_tag(*t)));
                assert!(!ex.world.objects().any(|(_, o)| o.is(Color::Red, Shape::Circle)));
            }
            for (tag, exs) in &b.split_tests {
                assert_eq!(exs.len(), 60);
                assert!(exs.iter().all(|e| e.has_tag(*tag)));
            }
        }
    }

    #[test]
    fn a3_split_is_small_green_circle_size_two() {
        let b = generate_bundle(&small_spec(Variant::ThreeAttr, 9)).unwrap();
        for ex in &b.split_tests[&SplitTag::A3] {
            assert_eq!(
                ex.command,
                Command::ThreeAttr { size_word: SizeWord::Small, color: Color::Green, shape: Shape::Circle }
            );
            assert_eq!(ex.target_object().size.map(SizeVal::get), Some(2));
        }
    }

    #[test]
    fn no_holdout_admits_green_square_targets() {
        let spec = GenSpec { holdout: BTreeSet::new(), ..small_spec(Variant::TwoAttr, 1) };
        let b = generate_bundle(&spec).unwrap();
        assert!(b.train.iter().any(|e| e.has_tag(SplitTag::A1)));
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = small_spec(Variant::ThreeAttrRel, 21);
        let a = generate_bundle(&spec).unwrap();
        let b = generate_bundle(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_bundle(&GenSpec { seed: 22, ..spec }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn spec_validation() {
        let base = GenSpec::new(Variant::TwoAttr, 0);
        assert!(GenSpec { min_objects: 1, ..base.clone() }.validate().is_err());
        assert!(GenSpec { max_objects: 37, ..base.clone() }.validate().is_err());
        assert!(GenSpec { train_count: 0, ..base.clone() }.validate().is_err());
        assert!(GenSpec { green_square_distractor_scale: 1.5, ..base.clone() }.validate().is_err());
        assert!(GenSpec { holdout: BTreeSet::from([SplitTag::A3]), ..base.clone() }
            .validate()
            .is_err());
        assert!(base.validate().is_ok());
    }

    #[test]
    fn infeasible_constraint_hits_cap() {
        // Every object must be a green square distractor, but all are rejected.
        let spec = GenSpec {
            green_square_distractor_scale: 0.0,
            min_objects: 3,
            max_objects: 3,
            ..GenSpec::new(Variant::ThreeAttrRel, 0)
        };
        let mut rng = example_rng(0, 9, 0);
        let sampler = Sampler { spec: &spec, goal: DrawTarget::Train };
        let only_gs = [(Color::Green, Shape::Square)];
        let err = sampler.distractor_pair(&only_gs, &mut rng).unwrap_err();
        assert!(err.contains("green-square"));
    }

    #[test]
    fn schema_instance_parses() {
        let line = r#"{"variant":"two-attr","command":["red","circle"],"objects":[{"cell":0,"color":"red","shape":"circle"}],"target":0,"tags":["random"]}"#;
        let ex = example_from_json(line).unwrap();
        assert_eq!(ex.command, Command::TwoAttr { color: Color::Red, shape: Shape::Circle });
        assert_eq!(ex.target.index(), 0);
        assert_eq!(ex.world.len(), 1);
        assert_eq!(ex.tags, BTreeSet::from([SplitTag::Random]));
        assert_eq!(example_to_json(&ex), line);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let text = format!(
            "{}\n{{\"variant\":\"four-attr\"}}\n",
            r#"{"variant":"two-attr","command":["red","circle"],"objects":[{"cell":0,"color":"red","shape":"circle"}],"target":0,"tags":["random"]}"#
        );
        match read_jsonl_from(text.as_bytes()) {
            Err(DatagenError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let bad_variant = r#"{"variant":"four-attr","command":["red","circle"],"objects":[{"cell":0,"color":"red","shape":"circle"}],"target":0,"tags":["random"]}"#;
        let err = example_from_json(bad_variant).unwrap_err();
        assert!(err.contains("four-attr"));
    }

    #[test]
    fn empty_list_writes_empty_file() {
        let mut buf = Vec::new();
        write_jsonl_to(&[], &mut buf).unwrap();
        assert!(buf.is_empty());
        assert!(read_jsonl_from(&buf[..]).unwrap().is_empty());
    }

    #[test]
    fn stats_basic() {
        let line = r#"{"variant":"two-attr","command":["red","circle"],"objects":[{"cell":0,"color":"red","shape":"circle"},{"cell":1,"color":"green","shape":"square"},{"cell":2,"color":"blue","shape":"square"},{"cell":3,"color":"green","shape":"square"}],"target":0,"tags":["A2","random"]}"#;
        let ex = example_from_json(line).unwrap();
        let s = dataset_stats(&[ex]);
        assert_eq!(s.mean_objects, 4.0);
        assert_eq!(s.mean_green_square_distractors, 2.0);
        assert_eq!(s.objects["green_square"].as_distractor, 2);
        assert_eq!(s.objects["red_circle"].as_target, 1);
        assert_eq!(s.pair_counts(Color::Green, Shape::Square).as_distractor, 2);
        assert_eq!(s.tags["random"], 1);
    }

    #[test]
    fn holdout_stats() {
        let b = generate_bundle(&small_spec(Variant::TwoAttr, 4)).unwrap();
        let s = dataset_stats(&b.train);
        let gs = s.pair_counts(Color::Green, Shape::Square);
        assert_eq!(gs.as_target, 0);
        assert!(gs.as_distractor > 0);
        let rc = s.pair_counts(Color::Red, Shape::Circle);
        assert_eq!(rc.as_target + rc.as_distractor, 0);
    }
}
