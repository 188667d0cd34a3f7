use std::fmt::Write as _;

use super::{LogicalOp, LogicalPlan};
use crate::expr::ColRef;

fn key_spec(keys: &[ColRef]) -> String {
    if keys.len() == 1 {
        keys[0].to_string()
    } else {
        format!("({})", join(keys))
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// Render a plan back to script text, one statement per line.
pub fn render(plan: &LogicalPlan) -> String {
    let mut out = String::new();
    for n in &plan.nodes {
        let alias = n.alias.as_deref().unwrap_or("");
        let input = |i: usize| {
            plan.nodes[n.inputs[i].0]
                .alias
                .clone()
                .unwrap_or_default()
        };
        let _ = match &n.op {
            LogicalOp::Load { path, columns } => {
                writeln!(out, "{alias} = load '{path}' as ({});", columns.join(", "))
            }
            LogicalOp::Store { path } => writeln!(out, "store {} into '{path}';", input(0)),
            LogicalOp::Foreach { items } => {
                writeln!(out, "{alias} = foreach {} generate {};", input(0), join(items))
            }
            LogicalOp::Filter { predicate } => {
                writeln!(out, "{alias} = filter {} by {predicate};", input(0))
            }
            LogicalOp::Join { keys } | LogicalOp::CoGroup { keys } => {
                let parts: Vec<String> = keys
                    .iter()
                    .enumerate()
                    .map(|(i, k)| format!("{} by {}", input(i), key_spec(k)))
                    .collect();
                writeln!(out, "{alias} = {} {};", n.op.name(), parts.join(", "))
            }
            LogicalOp::Group { keys } => {
                writeln!(out, "{alias} = group {} by {};", input(0), key_spec(keys))
            }
            LogicalOp::Distinct => writeln!(out, "{alias} = distinct {};", input(0)),
            LogicalOp::Union => {
                let names: Vec<String> = (0..n.inputs.len()).map(input).collect();
                writeln!(out, "{alias} = union {};", names.join(", "))
            }
        };
    }
    out
}
