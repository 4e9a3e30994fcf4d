//! Fixed sparse embedding tables, one per task variant.
//!
//! Command words are one-hot on their own dimensions. A grid-object token is
//! the sum of its `world_*` attribute indicators, and the empty-cell token
//! carries the same total mass on a dedicated dimension, so `⟨1, x⟩` is the
//! same for every grid slot (2 for two-attr, 3 otherwise).

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::domain::{
    Color, Command, Relation, Shape, SizeVal, SizeWord, Variant, WorldObject, PAD_TOKEN,
    SAME_TOKEN,
};
use crate::tensor::Matrix;

/// What a command-side token denotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommandWord {
    Size(SizeWord),
    Color(Color),
    Shape(Shape),
    Same,
    Relation(Relation),
    Pad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Command(CommandWord),
    Object(WorldObject),
    Empty,
}

impl TokenKind {
    pub fn is_grid(&self) -> bool {
        !matches!(self, TokenKind::Command(_))
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub variant: Variant,
    /// Token labels, column order of `matrix`.
    pub vocab: Vec<String>,
    pub kinds: Vec<TokenKind>,
    /// Dimension labels, row order of `matrix`.
    pub dims: Vec<String>,
    /// `d_model × |vocab|`.
    pub matrix: Matrix<f64>,
    index: HashMap<String, usize>,
    empty: usize,
}

fn object_label(o: &WorldObject) -> String {
    crate::datagen::object_label(o)
}

impl EmbeddingTable {
    pub fn build(variant: Variant) -> Self {
        let sized = variant.has_size();
        let relational = variant == Variant::ThreeAttrRel;

        let mut dims: Vec<String> = Vec::new();
        if sized {
            dims.extend(SizeWord::ALL.iter().map(|w| w.as_str().to_string()));
        }
        dims.extend(Color::ALL.iter().map(|c| c.as_str().to_string()));
        dims.extend(Shape::ALL.iter().map(|s| s.as_str().to_string()));
        if relational {
            dims.push(SAME_TOKEN.to_string());
            dims.extend(Relation::ALL.iter().map(|r| format!("rel_{}", r.as_str())));
            dims.push(PAD_TOKEN.to_string());
        }
        if sized {
            dims.extend((SizeVal::MIN..=SizeVal::MAX).map(|s| format!("world_size_{s}")));
        }
        dims.extend(Color::ALL.iter().map(|c| format!("world_{c}")));
        dims.extend(Shape::ALL.iter().map(|s| format!("world_{s}")));
        dims.push("empty".to_string());
        let dim = |name: &str| dims.iter().position(|d| d == name).expect("known dimension");

        let mut columns: Vec<(String, TokenKind, Vec<(usize, f64)>)> = Vec::new();
        if sized {
            for w in SizeWord::ALL {
                columns.push((w.to_string(), TokenKind::Command(CommandWord::Size(*w)), vec![(dim(w.as_str()), 1.0)]));
            }
        }
        for c in Color::ALL {
            columns.push((c.to_string(), TokenKind::Command(CommandWord::Color(*c)), vec![(dim(c.as_str()), 1.0)]));
        }
        for s in Shape::ALL {
            columns.push((s.to_string(), TokenKind::Command(CommandWord::Shape(*s)), vec![(dim(s.as_str()), 1.0)]));
        }
        if relational {
            columns.push((SAME_TOKEN.into(), TokenKind::Command(CommandWord::Same), vec![(dim(SAME_TOKEN), 1.0)]));
            for r in Relation::ALL {
                columns.push((
                    r.to_string(),
                    TokenKind::Command(CommandWord::Relation(*r)),
                    vec![(dim(&format!("rel_{r}")), 1.0)],
                ));
            }
            columns.push((PAD_TOKEN.into(), TokenKind::Command(CommandWord::Pad), vec![(dim(PAD_TOKEN), 1.0)]));
        }
        let sizes: Vec<Option<u8>> =
            if sized { (SizeVal::MIN..=SizeVal::MAX).map(Some).collect() } else { vec![None] };
        for size in &sizes {
            for c in Color::ALL {
                for s in Shape::ALL {
                    let obj = WorldObject::new(*c, *s, size.map(|v| SizeVal::new(v).expect("valid")));
                    let mut entries = vec![(dim(&format!("world_{c}")), 1.0), (dim(&format!("world_{s}")), 1.0)];
                    if let Some(v) = size {
                        entries.push((dim(&format!("world_size_{v}")), 1.0));
                    }
                    columns.push((object_label(&obj), TokenKind::Object(obj), entries));
                }
            }
        }
        let mass = if sized { 3.0 } else { 2.0 };
        columns.push(("empty".into(), TokenKind::Empty, vec![(dim("empty"), mass)]));

        let mut matrix = Matrix::zeros(dims.len(), columns.len());
        for (j, (_, _, entries)) in columns.iter().enumerate() {
            for (d, v) in entries {
                matrix[(*d, j)] = *v;
            }
        }
        let vocab: Vec<String> = columns.iter().map(|c| c.0.clone()).collect();
        let kinds = columns.iter().map(|c| c.1).collect();
        let index = vocab.iter().enumerate().map(|(i, v)| (v.clone(), i)).collect();
        let empty = vocab.len() - 1;
        EmbeddingTable { variant, vocab, kinds, dims, matrix, index, empty }
    }

    /// Shared table for `variant`.
    pub fn get(variant: Variant) -> &'static EmbeddingTable {
        static TABLES: OnceLock<[EmbeddingTable; 3]> = OnceLock::new();
        let tables = TABLES.get_or_init(|| {
            [
                EmbeddingTable::build(Variant::TwoAttr),
                EmbeddingTable::build(Variant::ThreeAttr),
                EmbeddingTable::build(Variant::ThreeAttrRel),
            ]
        });
        &tables[variant.code()]
    }

    pub fn d_model(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn token_id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn dim_id(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d == name)
    }

    pub fn object_token(&self, obj: &WorldObject) -> Option<usize> {
        self.token_id(&object_label(obj))
    }

    pub fn empty_token(&self) -> usize {
        self.empty
    }

    pub fn command_token_ids(&self, command: &Command) -> Option<Vec<usize>> {
        command.tokens().iter().map(|t| self.token_id(t)).collect()
    }

    pub fn is_command(&self, id: usize) -> bool {
        !self.kinds[id].is_grid()
    }

    pub fn grid_token_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|i| self.kinds[*i].is_grid())
    }

    pub fn command_token_ids_all(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|i| !self.kinds[*i].is_grid())
    }

    /// Whether grid token `grid` carries the attribute named by command token `cmd`.
    /// Size words never match here; their relation to objects is relative.
    pub fn attribute_match(&self, grid: usize, cmd: usize) -> bool {
        match (self.kinds[grid], self.kinds[cmd]) {
            (TokenKind::Object(o), TokenKind::Command(CommandWord::Color(c))) => o.color == c,
            (TokenKind::Object(o), TokenKind::Command(CommandWord::Shape(s))) => o.shape == s,
            _ => false,
        }
    }

    pub fn column(&self, id: usize) -> Vec<f64> {
        self.matrix.column(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions_per_variant() {
        assert_eq!(EmbeddingTable::get(Variant::TwoAttr).d_model(), 13);
        assert_eq!(EmbeddingTable::get(Variant::ThreeAttr).d_model(), 19);
        assert_eq!(EmbeddingTable::get(Variant::ThreeAttrRel).d_model(), 24);
        assert_eq!(EmbeddingTable::get(Variant::TwoAttr).len(), 6 + 9 + 1);
        assert_eq!(EmbeddingTable::get(Variant::ThreeAttr).len(), 8 + 36 + 1);
        assert_eq!(EmbeddingTable::get(Variant::ThreeAttrRel).len(), 13 + 36 + 1);
    }

    #[test]
    fn grid_tokens_have_uniform_mass() {
        for (v, mass) in [(Variant::TwoAttr, 2.0), (Variant::ThreeAttr, 3.0), (Variant::ThreeAttrRel, 3.0)] {
            let t = EmbeddingTable::get(v);
            for id in t.grid_token_ids() {
                assert_eq!(t.column(id).iter().sum::<f64>(), mass, "{v} {}", t.vocab[id]);
            }
            for id in t.command_token_ids_all() {
                let col = t.column(id);
                assert_eq!(col.iter().sum::<f64>(), 1.0);
                assert_eq!(col.iter().filter(|x| **x != 0.0).count(), 1);
            }
        }
    }

    #[test]
    fn columns_are_distinct() {
        for v in Variant::ALL {
            let t = EmbeddingTable::get(*v);
            for a in 0..t.len() {
                for b in a + 1..t.len() {
                    assert_ne!(t.column(a), t.column(b), "{} vs {}", t.vocab[a], t.vocab[b]);
                }
            }
        }
    }

    #[test]
    fn gram_entries() {
        let t = EmbeddingTable::get(Variant::TwoAttr);
        let gram = crate::tensor::matmul_tn(&t.matrix, &t.matrix);
        let id = |s: &str| t.token_id(s).unwrap();
        assert_eq!(gram[(id("red"), id("red"))], 1.0);
        assert_eq!(gram[(id("red"), id("green"))], 0.0);
        assert_eq!(gram[(id("red_circle"), id("red_circle"))], 2.0);
    }
}
