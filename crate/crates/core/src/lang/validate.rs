use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use super::{GenItem, LogicalOp, LogicalPlan, NodeId, Pos};
use crate::expr::{AggFunc, ColRef};
use crate::schema::{Column, ColumnKind, Schema};

/// A schema problem found in one statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub node: NodeId,
    pub pos: Pos,
    pub alias: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.alias {
            Some(a) => write!(f, "{} ({a}): {}", self.pos, self.message),
            None => write!(f, "{} (store): {}", self.pos, self.message),
        }
    }
}

/// Resolve `r` against `schema`, rewriting it to the exact column name.
fn resolve(schema: &Schema, r: &mut ColRef) -> Result<usize, String> {
    let idx = match r {
        ColRef::Positional(k) => {
            if *k >= schema.len() {
                return Err(format!("positional reference ${k} is out of range (arity {})", schema.len()));
            }
            *k
        }
        ColRef::Named(n) => schema.resolve(n).map_err(|e| e.to_string())?,
    };
    *r = ColRef::Named(schema.columns[idx].name.clone());
    Ok(idx)
}

fn last_segment(name: &str) -> &str {
    name.rsplit("::").next().unwrap_or(name)
}

fn group_column(keys: &[Column]) -> Column {
    if keys.len() == 1 {
        Column {
            name: "group".into(),
            kind: keys[0].kind.clone(),
        }
    } else {
        Column::tuple("group", Schema::new(keys.to_vec()))
    }
}

/// Compute and attach each node's output schema, resolving positional and
/// suffix references to exact column names. Returns every problem found;
/// an empty list means the plan is valid.
pub fn validate_schema(plan: &mut LogicalPlan) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let aliases: HashMap<NodeId, String> = plan
        .nodes
        .iter()
        .filter_map(|n| n.alias.clone().map(|a| (n.id, a)))
        .collect();
    for i in 0..plan.nodes.len() {
        let inputs: Option<Vec<Schema>> = plan.nodes[i]
            .inputs
            .iter()
            .map(|&id| plan.nodes[id.0].schema.clone())
            .collect();
        let node = &mut plan.nodes[i];
        let Some(inputs) = inputs else {
            node.schema = None;
            continue;
        };
        let mut errs: Vec<String> = Vec::new();
        let input_aliases: Vec<String> = node
            .inputs
            .iter()
            .map(|id| aliases.get(id).cloned().unwrap_or_default())
            .collect();
        let out = match &mut node.op {
            LogicalOp::Load { columns, .. } => Some(Schema::atoms(columns)),
            LogicalOp::Store { .. } | LogicalOp::Distinct => Some(inputs[0].clone()),
            LogicalOp::Foreach { items } => {
                let input = &inputs[0];
                let mut cols = Vec::new();
                let mut names: HashMap<String, usize> = HashMap::new();
                for item in items.iter_mut() {
                    match item {
                        GenItem::Column(r) => match resolve(input, r) {
                            Ok(i) => cols.push(input.columns[i].clone()),
                            Err(e) => errs.push(e),
                        },
                        GenItem::Agg { func, bag, field } => {
                            let bag_idx = match resolve(input, bag) {
                                Ok(i) => i,
                                Err(e) => {
                                    errs.push(e);
                                    continue;
                                }
                            };
                            let ColumnKind::Bag(inner) = &input.columns[bag_idx].kind else {
                                errs.push(format!("{func} argument '{bag}' is not a bag"));
                                continue;
                            };
                            match field {
                                Some(f) => {
                                    if let Err(e) = resolve(inner, f) {
                                        errs.push(e);
                                        continue;
                                    }
                                }
                                None if *func == AggFunc::Count => {}
                                None if inner.len() == 1 => {
                                    *field = Some(ColRef::Named(inner.columns[0].name.clone()))
                                }
                                None => {
                                    errs.push(format!("{func}({bag}) needs a field of the bag"));
                                    continue;
                                }
                            }
                            let base = match field {
                                Some(ColRef::Named(f)) => last_segment(f).to_string(),
                                _ => last_segment(bag.name().unwrap_or("bag")).to_string(),
                            };
                            let stem = format!("{}_{base}", func.as_str().to_ascii_lowercase());
                            let n = names.entry(stem.clone()).or_insert(0);
                            *n += 1;
                            let name = if *n == 1 { stem } else { format!("{stem}_{n}") };
                            cols.push(Column::atom(name));
                        }
                    }
                }
                Some(Schema::new(cols))
            }
            LogicalOp::Filter { predicate } => {
                let input = &inputs[0];
                let _ = predicate.map_columns(&mut |c| {
                    match resolve(input, c) {
                        Ok(i) if input.columns[i].kind != ColumnKind::Atom => {
                            errs.push(format!("column '{c}' is not an atom and cannot be compared"))
                        }
                        Ok(_) => {}
                        Err(e) => errs.push(e),
                    }
                    Ok::<(), ()>(())
                });
                Some(input.clone())
            }
            LogicalOp::Join { keys } => {
                resolve_keys(&inputs, keys, &mut errs);
                check_key_arity(keys, &mut errs);
                let mut cols = Vec::new();
                for (s, alias) in inputs.iter().zip(&input_aliases) {
                    cols.extend(s.prefixed(alias).columns);
                }
                Some(Schema::new(cols))
            }
            LogicalOp::Group { keys } => {
                let mut k = vec![std::mem::take(keys)];
                let key_cols = resolve_keys(&inputs, &mut k, &mut errs);
                *keys = k.pop().unwrap();
                (!key_cols[0].is_empty()).then(|| {
                    Schema::new(vec![
                        group_column(&key_cols[0]),
                        Column::bag(input_aliases[0].clone(), inputs[0].clone()),
                    ])
                })
            }
            LogicalOp::CoGroup { keys } => {
                let key_cols = resolve_keys(&inputs, keys, &mut errs);
                check_key_arity(keys, &mut errs);
                (!key_cols[0].is_empty()).then(|| {
                    let mut cols = vec![group_column(&key_cols[0])];
                    for (s, alias) in inputs.iter().zip(&input_aliases) {
                        cols.push(Column::bag(alias.clone(), s.clone()));
                    }
                    Schema::new(cols)
                })
            }
            LogicalOp::Union => {
                let arity = inputs[0].len();
                if inputs.iter().any(|s| s.len() != arity) {
                    errs.push(format!(
                        "union inputs have different arities: {}",
                        inputs.iter().map(|s| s.len().to_string()).collect::<Vec<_>>().join(", ")
                    ));
                }
                Some(inputs[0].clone())
            }
        };
        if let Some(s) = &out {
            if let Some(dup) = s.duplicate_name() {
                errs.push(format!("output has duplicate column '{dup}'"));
            }
        }
        let failed = !errs.is_empty();
        for message in errs {
            diags.push(Diagnostic {
                node: node.id,
                pos: node.pos,
                alias: node.alias.clone(),
                message,
            });
        }
        node.schema = if failed { None } else { out };
    }
    check_paths(plan, &mut diags);
    diags
}

fn resolve_keys(inputs: &[Schema], keys: &mut [Vec<ColRef>], errs: &mut Vec<String>) -> Vec<Vec<Column>> {
    inputs
        .iter()
        .zip(keys.iter_mut())
        .map(|(s, ks)| {
            ks.iter_mut()
                .filter_map(|k| match resolve(s, k) {
                    Ok(i) => Some(s.columns[i].clone()),
                    Err(e) => {
                        errs.push(e);
                        None
                    }
                })
                .collect()
        })
        .collect()
}

fn check_key_arity(keys: &[Vec<ColRef>], errs: &mut Vec<String>) {
    if keys.iter().any(|k| k.len() != keys[0].len()) {
        errs.push("inputs are keyed by different numbers of columns".into());
    }
}

fn check_paths(plan: &LogicalPlan, diags: &mut Vec<Diagnostic>) {
    let mut stored: HashMap<&str, NodeId> = HashMap::new();
    for n in &plan.nodes {
        if let LogicalOp::Store { path } = &n.op {
            if stored.insert(path, n.id).is_some() {
                diags.push(Diagnostic {
                    node: n.id,
                    pos: n.pos,
                    alias: None,
                    message: format!("'{path}' is stored more than once"),
                });
            }
        }
    }
    for n in &plan.nodes {
        if let LogicalOp::Load { path, .. } = &n.op {
            if stored.contains_key(path.as_str()) {
                diags.push(Diagnostic {
                    node: n.id,
                    pos: n.pos,
                    alias: n.alias.clone(),
                    message: format!("'{path}' is both loaded and stored by this script"),
                });
            }
        }
    }
}
