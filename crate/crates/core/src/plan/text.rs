//! Canonical line-oriented text form of a physical plan:
//!
//! ```text
//! op 1 Load path=page_views schema=user,timestamp,est_revenue
//! op 2 Project cols=user,est_revenue schema=user,est_revenue
//! op 3 Filter schema=user,est_revenue pred=est_revenue > 3
//! op 4 Store path=out schema=user,est_revenue
//! edge 1 2 0
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use super::{AggItem, Edge, OpId, OpKind, OpParams, PhysicalPlan};
use crate::expr::AggFunc;
use crate::lang::parse_predicate;
use crate::schema::Schema;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("plan text line {line}: {message}")]
pub struct PlanTextError {
    pub line: usize,
    pub message: String,
}

fn keys_text(keys: &[Vec<String>]) -> String {
    keys.iter().map(|k| k.join(",")).collect::<Vec<_>>().join("|")
}

pub fn render_plan(plan: &PhysicalPlan) -> String {
    let mut out = String::new();
    for op in plan.ops.values() {
        let _ = write!(out, "op {} {}", op.id, op.kind());
        match &op.params {
            OpParams::Load { path } | OpParams::Store { path } => {
                let _ = write!(out, " path={path}");
            }
            OpParams::Project { columns } => {
                let _ = write!(out, " cols={}", columns.join(","));
            }
            OpParams::Join { keys } | OpParams::CoGroup { keys } => {
                let _ = write!(out, " keys={}", keys_text(keys));
            }
            OpParams::Group { keys } => {
                let _ = write!(out, " keys={}", keys.join(","));
            }
            OpParams::Aggregate { items } => {
                let items: Vec<String> = items.iter().map(ToString::to_string).collect();
                let _ = write!(out, " items={}", items.join(","));
            }
            OpParams::Filter { .. } | OpParams::Distinct | OpParams::Union | OpParams::Split => {}
        }
        let _ = write!(out, " schema={}", op.schema);
        if let OpParams::Filter { predicate } = &op.params {
            let _ = write!(out, " pred={predicate}");
        }
        out.push('\n');
    }
    for e in &plan.edges {
        let _ = writeln!(out, "edge {} {} {}", e.from, e.to, e.slot);
    }
    out
}

fn split_list(s: &str) -> Vec<String> {
    if s.is_empty() {
        Vec::new()
    } else {
        s.split(',').map(str::to_string).collect()
    }
}

fn parse_agg_item(s: &str) -> Option<AggItem> {
    let Some(open) = s.find('(') else {
        return Some(AggItem::Column(s.to_string()));
    };
    let func = AggFunc::parse(&s[..open])?;
    let inner = s[open + 1..].strip_suffix(')')?;
    let (bag, field) = match inner.split_once('.') {
        Some((b, f)) => (b.to_string(), Some(f.to_string())),
        None => (inner.to_string(), None),
    };
    Some(AggItem::Call { func, bag, field })
}

pub fn parse_plan(text: &str) -> Result<PhysicalPlan, PlanTextError> {
    let mut plan = PhysicalPlan::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| PlanTextError { line: line_no, message };
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let (body, pred) = match line.find(" pred=") {
            Some(p) => (&line[..p], Some(&line[p + 6..])),
            None => (line, None),
        };
        let mut words = body.split(' ');
        match words.next() {
            Some("edge") => {
                let nums: Vec<u32> = words
                    .map(|w| w.parse::<u32>().map_err(|e| err(e.to_string())))
                    .collect::<Result<_, _>>()?;
                let [from, to, slot] = nums[..] else {
                    return Err(err("edge needs three numbers".into()));
                };
                plan.edges.insert(Edge {
                    from: OpId(from),
                    to: OpId(to),
                    slot: slot as usize,
                });
            }
            Some("op") => {
                let id = words
                    .next()
                    .and_then(|w| w.parse::<u32>().ok())
                    .ok_or_else(|| err("missing operator id".into()))?;
                let kind = words
                    .next()
                    .and_then(OpKind::parse)
                    .ok_or_else(|| err("unknown operator kind".into()))?;
                let mut attrs = std::collections::HashMap::new();
                for w in words {
                    let (k, v) = w.split_once('=').ok_or_else(|| err(format!("bad attribute '{w}'")))?;
                    attrs.insert(k, v);
                }
                let attr = |k: &str| {
                    attrs
                        .get(k)
                        .copied()
                        .ok_or_else(|| err(format!("missing attribute '{k}'")))
                };
                let schema = Schema::parse(attr("schema")?).map_err(|e| err(e.to_string()))?;
                let params = match kind {
                    OpKind::Load => OpParams::Load { path: attr("path")?.to_string() },
                    OpKind::Store => OpParams::Store { path: attr("path")?.to_string() },
                    OpKind::Project => OpParams::Project { columns: split_list(attr("cols")?) },
                    OpKind::Filter => OpParams::Filter {
                        predicate: parse_predicate(pred.ok_or_else(|| err("missing pred".into()))?)
                            .map_err(|e| err(e.to_string()))?,
                    },
                    OpKind::Join | OpKind::CoGroup => {
                        let keys = attr("keys")?.split('|').map(split_list).collect();
                        if kind == OpKind::Join {
                            OpParams::Join { keys }
                        } else {
                            OpParams::CoGroup { keys }
                        }
                    }
                    OpKind::Group => OpParams::Group { keys: split_list(attr("keys")?) },
                    OpKind::Aggregate => OpParams::Aggregate {
                        items: split_list(attr("items")?)
                            .iter()
                            .map(|s| parse_agg_item(s).ok_or_else(|| err(format!("bad aggregate '{s}'"))))
                            .collect::<Result<_, _>>()?,
                    },
                    OpKind::Distinct => OpParams::Distinct,
                    OpKind::Union => OpParams::Union,
                    OpKind::Split => OpParams::Split,
                };
                plan.insert(OpId(id), params, schema);
            }
            _ => return Err(err(format!("unrecognized line '{line}'"))),
        }
    }
    Ok(plan)
}
