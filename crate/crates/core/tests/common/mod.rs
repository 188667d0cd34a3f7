//! Shared fixtures: a random script generator over two small tables and a
//! brute-force plan containment oracle.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mrreuse::dfs::Dfs;
use mrreuse::lang::compile;
use mrreuse::plan::{OpId, OpKind, PhysicalPlan};
use rand::seq::SliceRandom;
use rand::Rng;

pub const R_COLUMNS: [&str; 4] = ["k", "a", "b", "c"];
pub const S_COLUMNS: [&str; 3] = ["k", "x", "y"];
const WORDS: [&str; 6] = ["ant", "bee", "cat", "dog", "eel", "fox"];

/// Write `r` (k, a, b, c) and `s` (k, x, y) with `rows` rows each.
pub fn write_tables(dfs: &Dfs, rows: usize, rng: &mut impl Rng) {
    let r: Vec<String> = (0..rows)
        .map(|_| {
            format!(
                "{}\t{}\t{}\t{}.5",
                rng.gen_range(0..50),
                rng.gen_range(0..100),
                WORDS.choose(rng).unwrap(),
                rng.gen_range(0..20)
            )
        })
        .collect();
    let s: Vec<String> = (0..rows)
        .map(|_| format!("{}\t{}\t{}", rng.gen_range(0..60), rng.gen_range(-5..5), WORDS.choose(rng).unwrap()))
        .collect();
    dfs.write_dataset("r", None, [r], true).unwrap();
    dfs.write_dataset("s", None, [s], true).unwrap();
}

#[derive(Debug, Clone, PartialEq)]
enum Col {
    Num,
    Text,
    Bag(Vec<Col>),
}

#[derive(Debug, Clone)]
struct Rel {
    alias: String,
    cols: Vec<Col>,
}

impl Rel {
    fn atoms(&self) -> Vec<usize> {
        (0..self.cols.len()).filter(|&i| !matches!(self.cols[i], Col::Bag(_))).collect()
    }

    fn has_bag(&self) -> bool {
        self.cols.iter().any(|c| matches!(c, Col::Bag(_)))
    }
}

/// Random valid scripts with at most `max_ops` operators besides Loads and
/// Stores, reading `r` and `s`.
pub struct ScriptGen<'a, R: Rng> {
    rng: &'a mut R,
    rels: Vec<Rel>,
    lines: Vec<String>,
    next: usize,
}

impl<'a, R: Rng> ScriptGen<'a, R> {
    pub fn new(rng: &'a mut R) -> Self {
        ScriptGen {
            rng,
            rels: Vec::new(),
            lines: Vec::new(),
            next: 0,
        }
    }

    fn alias(&mut self) -> String {
        self.next += 1;
        format!("v{}", self.next)
    }

    fn load(&mut self, table: &str) -> usize {
        let alias = self.alias();
        let (cols, kinds): (&[&str], Vec<Col>) = match table {
            "r" => (&R_COLUMNS, vec![Col::Num, Col::Num, Col::Text, Col::Num]),
            _ => (&S_COLUMNS, vec![Col::Num, Col::Num, Col::Text]),
        };
        self.lines.push(format!("{alias} = load '{table}' as ({});", cols.join(", ")));
        self.rels.push(Rel { alias, cols: kinds });
        self.rels.len() - 1
    }

    fn predicate(&mut self, rel: &Rel) -> Option<String> {
        let atoms = rel.atoms();
        let &i = atoms.choose(self.rng)?;
        let p = match rel.cols[i] {
            Col::Num => {
                let op = ["<", "<=", ">", ">=", "==", "!="].choose(self.rng).unwrap();
                format!("${i} {op} {}", self.rng.gen_range(-2..40))
            }
            _ => {
                let op = ["==", "!="].choose(self.rng).unwrap();
                format!("${i} {op} '{}'", WORDS.choose(self.rng).unwrap())
            }
        };
        Some(match self.rng.gen_range(0..6) {
            0 => format!("not ({p})"),
            1 => match self.predicate(rel) {
                Some(q) => format!("{p} and {q}"),
                None => p,
            },
            2 => match self.predicate(rel) {
                Some(q) => format!("({p}) or ({q})"),
                None => p,
            },
            _ => p,
        })
    }

    fn step(&mut self) -> bool {
        let src = self.rng.gen_range(0..self.rels.len());
        let rel = self.rels[src].clone();
        let alias = self.alias();
        let atoms = rel.atoms();
        let (line, cols) = match self.rng.gen_range(0..8) {
            // Aggregate a grouped relation.
            _ if rel.has_bag() && self.rng.gen_bool(0.7) => {
                let mut items = Vec::new();
                let mut cols = Vec::new();
                for (i, c) in rel.cols.iter().enumerate() {
                    match c {
                        Col::Bag(inner) => {
                            items.push(format!("COUNT(${i})"));
                            cols.push(Col::Num);
                            let nums: Vec<usize> = (0..inner.len()).filter(|&j| inner[j] == Col::Num).collect();
                            if let Some(&j) = nums.choose(self.rng) {
                                let f = ["SUM", "MIN", "MAX", "AVG"].choose(self.rng).unwrap();
                                items.push(format!("{f}(${i}.${j})"));
                                cols.push(Col::Num);
                            }
                        }
                        other => {
                            items.push(format!("${i}"));
                            cols.push(other.clone());
                        }
                    }
                }
                (format!("{alias} = foreach {} generate {};", rel.alias, items.join(", ")), cols)
            }
            0 | 1 => {
                let Some(p) = self.predicate(&rel) else { return false };
                (format!("{alias} = filter {} by {p};", rel.alias), rel.cols.clone())
            }
            2 | 3 => {
                if atoms.is_empty() {
                    return false;
                }
                let n = self.rng.gen_range(1..=atoms.len());
                let mut pick: Vec<usize> = atoms.choose_multiple(self.rng, n).copied().collect();
                if self.rng.gen_bool(0.5) {
                    pick.sort_unstable();
                }
                let items: Vec<String> = pick.iter().map(|i| format!("${i}")).collect();
                let cols = pick.iter().map(|&i| rel.cols[i].clone()).collect();
                (format!("{alias} = foreach {} generate {};", rel.alias, items.join(", ")), cols)
            }
            4 => {
                let Some(&k) = atoms.choose(self.rng) else { return false };
                let cols = vec![rel.cols[k].clone(), Col::Bag(rel.cols.clone())];
                (format!("{alias} = group {} by ${k};", rel.alias), cols)
            }
            5 => {
                let other = self.rels[self.rng.gen_range(0..self.rels.len())].clone();
                let (Some(&ka), Some(&kb)) = (atoms.choose(self.rng), other.atoms().choose(self.rng)) else {
                    return false;
                };
                if other.alias == rel.alias || rel.cols[ka] != other.cols[kb] {
                    return false;
                }
                let cogroup = self.rng.gen_bool(0.3);
                let cols = if cogroup {
                    vec![rel.cols[ka].clone(), Col::Bag(rel.cols.clone()), Col::Bag(other.cols.clone())]
                } else {
                    rel.cols.iter().chain(&other.cols).cloned().collect()
                };
                let verb = if cogroup { "cogroup" } else { "join" };
                (
                    format!("{alias} = {verb} {} by ${ka}, {} by ${kb};", rel.alias, other.alias),
                    cols,
                )
            }
            6 => {
                if rel.has_bag() {
                    return false;
                }
                (format!("{alias} = distinct {};", rel.alias), rel.cols.clone())
            }
            _ => {
                let other = self.rels[self.rng.gen_range(0..self.rels.len())].clone();
                if other.alias == rel.alias || other.cols != rel.cols || rel.has_bag() {
                    return false;
                }
                (format!("{alias} = union {}, {};", rel.alias, other.alias), rel.cols.clone())
            }
        };
        self.lines.push(line);
        self.rels.push(Rel { alias, cols });
        true
    }

    /// A script with between 1 and `max_ops` operators and one or two
    /// Stores under `out_prefix`.
    pub fn script(mut self, max_ops: usize, out_prefix: &str) -> String {
        self.load("r");
        if self.rng.gen_bool(0.6) {
            self.load("s");
        }
        let target = self.rng.gen_range(1..=max_ops);
        let mut ops = 0;
        let mut attempts = 0;
        while ops < target && attempts < 200 {
            attempts += 1;
            if self.step() {
                ops += 1;
            } else {
                self.next -= 1;
            }
        }
        let last = self.rels.last().unwrap().alias.clone();
        self.lines.push(format!("store {last} into '{out_prefix}/a';"));
        if self.rels.len() > 3 && self.rng.gen_bool(0.3) {
            let mid = self.rels[self.rng.gen_range(2..self.rels.len() - 1)].alias.clone();
            self.lines.push(format!("store {mid} into '{out_prefix}/b';"));
        }
        self.lines.join("\n") + "\n"
    }
}

/// A compiling random script.
pub fn random_script(rng: &mut impl Rng, max_ops: usize, out_prefix: &str) -> String {
    loop {
        let s = ScriptGen::new(rng).script(max_ops, out_prefix);
        if compile(&s).is_ok() {
            return s;
        }
    }
}

/// Whether an injective mapping of `repo`'s non-Store operators into
/// `input` exists that preserves kinds, parameters, Load schemas and every
/// input edge with its slot. Exhaustive backtracking.
pub fn brute_force_contains(input: &PhysicalPlan, repo: &PhysicalPlan) -> bool {
    let order: Vec<OpId> = match repo.topo_order() {
        Ok(o) => o.into_iter().filter(|&id| repo.op(id).kind() != OpKind::Store).collect(),
        Err(_) => return false,
    };
    if order.is_empty() {
        return false;
    }
    let candidates: Vec<OpId> = input.ops.values().filter(|o| o.kind() != OpKind::Store).map(|o| o.id).collect();
    fn search(
        i: usize,
        order: &[OpId],
        input: &PhysicalPlan,
        repo: &PhysicalPlan,
        candidates: &[OpId],
        map: &mut BTreeMap<OpId, OpId>,
        used: &mut BTreeSet<OpId>,
    ) -> bool {
        let Some(&b) = order.get(i) else { return true };
        let rb = repo.op(b);
        let want: Vec<OpId> = repo.inputs(b).iter().map(|x| map[x]).collect();
        for &a in candidates {
            if used.contains(&a) {
                continue;
            }
            let ia = input.op(a);
            if ia.params != rb.params || (rb.kind() == OpKind::Load && ia.schema != rb.schema) {
                continue;
            }
            if input.inputs(a) != want {
                continue;
            }
            map.insert(b, a);
            used.insert(a);
            if search(i + 1, order, input, repo, candidates, map, used) {
                return true;
            }
            map.remove(&b);
            used.remove(&a);
        }
        false
    }
    search(0, &order, input, repo, &candidates, &mut BTreeMap::new(), &mut BTreeSet::new())
}

/// Check a concrete mapping (repo op → input op) against the same
/// conditions the oracle enforces.
pub fn mapping_is_valid(input: &PhysicalPlan, repo: &PhysicalPlan, mapping: &BTreeMap<OpId, OpId>) -> bool {
    let images: BTreeSet<&OpId> = mapping.values().collect();
    if images.len() != mapping.len() {
        return false;
    }
    let non_store: BTreeSet<OpId> = repo.ops.values().filter(|o| o.kind() != OpKind::Store).map(|o| o.id).collect();
    if mapping.keys().copied().collect::<BTreeSet<_>>() != non_store {
        return false;
    }
    mapping.iter().all(|(&b, &a)| {
        let (rb, ia) = (repo.op(b), input.op(a));
        ia.params == rb.params
            && (rb.kind() != OpKind::Load || ia.schema == rb.schema)
            && repo.inputs(b).iter().map(|x| mapping[x]).collect::<Vec<_>>() == input.inputs(a)
    })
}
