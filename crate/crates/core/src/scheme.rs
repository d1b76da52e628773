//! Per-level reconstruction rules over a finite message alphabet.
//!
//! A rule maps the `d` child messages of a node to the message it sends to
//! its parent, either through a lookup table over `L^d` child tuples or a
//! row-stochastic kernel. Tuples are indexed row-major with the first child
//! most significant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FiniteDist, SUM_TOL};

/// One level of a reconstruction scheme.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelRule {
    /// Output symbol for every child tuple.
    Table(Vec<usize>),
    /// Output distribution for every child tuple, flattened `L^d x L`.
    Kernel(Vec<f64>),
}

/// Leaf initialization plus a per-level list of rules.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionScheme {
    alphabet: usize,
    d: usize,
    leaf_plus: Vec<f64>,
    leaf_minus: Vec<f64>,
    levels: Vec<LevelRule>,
    cycle: bool,
}

/// Number of child tuples `L^d`, or `None` on overflow.
pub fn tuple_count(alphabet: usize, d: usize) -> Option<usize> {
    u32::try_from(d).ok().and_then(|d| alphabet.checked_pow(d))
}

impl ReconstructionScheme {
    /// `leaf` holds the message law for leaf label `+1` then `-1`.
    ///
    /// When the tree is deeper than `levels`, `cycle = true` repeats the
    /// list periodically and `cycle = false` keeps applying the last rule.
    pub fn new(
        alphabet: usize,
        d: usize,
        leaf: [Vec<f64>; 2],
        levels: Vec<LevelRule>,
        cycle: bool,
    ) -> Result<Self> {
        if alphabet < 1 {
            return Err(Error::domain("alphabet must be non-empty"));
        }
        if d < 1 {
            return Err(Error::domain("arity must be at least 1"));
        }
        if levels.is_empty() {
            return Err(Error::domain("scheme needs at least one level rule"));
        }
        let tuples = tuple_count(alphabet, d)
            .ok_or_else(|| Error::domain(format!("{alphabet}^{d} tuples overflow")))?;
        let [plus, minus] = leaf;
        let leaf_plus = FiniteDist::new(plus)?.probs().to_vec();
        let leaf_minus = FiniteDist::new(minus)?.probs().to_vec();
        if leaf_plus.len() != alphabet || leaf_minus.len() != alphabet {
            return Err(Error::AlphabetMismatch {
                left: leaf_plus.len().max(leaf_minus.len()),
                right: alphabet,
            });
        }
        let mut checked = Vec::with_capacity(levels.len());
        for (i, rule) in levels.into_iter().enumerate() {
            checked.push(match rule {
                LevelRule::Table(t) => {
                    if t.len() != tuples {
                        return Err(Error::domain(format!(
                            "level {} table has {} entries, expected {tuples}",
                            i + 1,
                            t.len()
                        )));
                    }
                    if let Some(s) = t.iter().find(|s| **s >= alphabet) {
                        return Err(Error::domain(format!(
                            "level {} table outputs symbol {s} outside alphabet",
                            i + 1
                        )));
                    }
                    LevelRule::Table(t)
                }
                LevelRule::Kernel(mut k) => {
                    if k.len() != tuples * alphabet {
                        return Err(Error::domain(format!(
                            "level {} kernel has {} entries, expected {}",
                            i + 1,
                            k.len(),
                            tuples * alphabet
                        )));
                    }
                    for row in k.chunks_mut(alphabet) {
                        let total: f64 = row.iter().sum();
                        if row.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > SUM_TOL {
                            return Err(Error::domain(format!(
                                "level {} kernel row is not a distribution",
                                i + 1
                            )));
                        }
                        row.iter_mut().for_each(|x| *x /= total);
                    }
                    LevelRule::Kernel(k)
                }
            });
        }
        Ok(Self {
            alphabet,
            d,
            leaf_plus,
            leaf_minus,
            levels: checked,
            cycle,
        })
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn cycle(&self) -> bool {
        self.cycle
    }

    pub fn levels(&self) -> &[LevelRule] {
        &self.levels
    }

    pub fn leaf_plus(&self) -> &[f64] {
        &self.leaf_plus
    }

    pub fn leaf_minus(&self) -> &[f64] {
        &self.leaf_minus
    }

    /// Rule applied at tree level `level >= 1` (leaves are level 0).
    pub fn rule_at(&self, level: usize) -> &LevelRule {
        assert!(level >= 1, "leaves have no rule");
        let n = self.levels.len();
        let idx = if self.cycle {
            (level - 1) % n
        } else {
            (level - 1).min(n - 1)
        };
        &self.levels[idx]
    }

    /// A single deterministic rule at every level.
    pub fn uniform_table(alphabet: usize, d: usize, leaf: [Vec<f64>; 2], table: Vec<usize>) -> Result<Self> {
        Self::new(alphabet, d, leaf, vec![LevelRule::Table(table)], false)
    }

    /// Binary alphabet with leaf `+1 -> 1`, `-1 -> 0`, and the Boolean
    /// function `f` at every level.
    pub fn boolean<F>(d: usize, f: F) -> Result<Self>
    where
        F: Fn(&[usize]) -> usize,
    {
        Self::boolean_levels(d, &[&f as &dyn Fn(&[usize]) -> usize], true)
    }

    /// Binary alphabet with several Boolean rules applied in turn.
    #[allow(clippy::type_complexity)]
    pub fn boolean_levels(d: usize, rules: &[&dyn Fn(&[usize]) -> usize], cycle: bool) -> Result<Self> {
        let levels = rules
            .iter()
            .map(|f| LevelRule::Table(tabulate(2, d, |x| f(x))))
            .collect();
        Self::new(2, d, binary_leaf(), levels, cycle)
    }

    /// Recursive majority on an odd arity.
    pub fn majority(d: usize) -> Result<Self> {
        if d.is_multiple_of(2) {
            return Err(Error::domain("majority needs an odd arity"));
        }
        Self::boolean(d, |x| usize::from(2 * x.iter().sum::<usize>() > x.len()))
    }

    /// AND at odd levels and OR at even levels.
    pub fn alternating_and_or(d: usize) -> Result<Self> {
        let and = |x: &[usize]| usize::from(x.iter().all(|b| *b == 1));
        let or = |x: &[usize]| usize::from(x.contains(&1));
        Self::boolean_levels(d, &[&and, &or], true)
    }

    /// Parses the JSON scheme document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SchemeDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        doc.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SchemeDoc::from(self)).expect("scheme serializes")
    }
}

fn binary_leaf() -> [Vec<f64>; 2] {
    [vec![0.0, 1.0], vec![1.0, 0.0]]
}

/// Evaluates `f` on every child tuple in table order.
pub fn tabulate<F>(alphabet: usize, d: usize, f: F) -> Vec<usize>
where
    F: Fn(&[usize]) -> usize,
{
    let n = tuple_count(alphabet, d).expect("tuple count fits");
    let mut digits = vec![0usize; d];
    (0..n)
        .map(|idx| {
            decode_tuple(idx, alphabet, &mut digits);
            f(&digits)
        })
        .collect()
}

/// Writes the child symbols of tuple `idx` into `digits`.
pub fn decode_tuple(mut idx: usize, alphabet: usize, digits: &mut [usize]) {
    for slot in digits.iter_mut().rev() {
        *slot = idx % alphabet;
        idx /= alphabet;
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeDoc {
    alphabet: usize,
    d: usize,
    leaf: Vec<Vec<f64>>,
    levels: Vec<LevelDoc>,
    #[serde(default)]
    cycle: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum LevelDoc {
    Table(Vec<usize>),
    Kernel(Vec<Vec<f64>>),
}

impl TryFrom<SchemeDoc> for ReconstructionScheme {
    type Error = Error;

    fn try_from(doc: SchemeDoc) -> Result<Self> {
        let [plus, minus]: [Vec<f64>; 2] = doc
            .leaf
            .try_into()
            .map_err(|_| Error::Parse("leaf must have exactly two rows (+1, -1)".into()))?;
        let levels = doc
            .levels
            .into_iter()
            .map(|l| match l {
                LevelDoc::Table(t) => LevelRule::Table(t),
                LevelDoc::Kernel(rows) => LevelRule::Kernel(rows.into_iter().flatten().collect()),
            })
            .collect();
        ReconstructionScheme::new(doc.alphabet, doc.d, [plus, minus], levels, doc.cycle)
    }
}

impl From<&ReconstructionScheme> for SchemeDoc {
    fn from(s: &ReconstructionScheme) -> Self {
        SchemeDoc {
            alphabet: s.alphabet,
            d: s.d,
            leaf: vec![s.leaf_plus.clone(), s.leaf_minus.clone()],
            levels: s
                .levels
                .iter()
                .map(|l| match l {
                    LevelRule::Table(t) => LevelDoc::Table(t.clone()),
                    LevelRule::Kernel(k) => LevelDoc::Kernel(k.chunks(s.alphabet).map(<[f64]>::to_vec).collect()),
                })
                .collect(),
            cycle: s.cycle,
        }
    }
}
