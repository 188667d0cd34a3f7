use std::collections::BTreeSet;

use super::{AggItem, OpId, OpParams, PhysicalPlan};
use crate::expr::ColRef;
use crate::lang::{GenItem, LogicalOp, LogicalPlan, NodeId};

fn name(c: &ColRef) -> String {
    c.to_string()
}

fn names(cs: &[ColRef]) -> Vec<String> {
    cs.iter().map(name).collect()
}

/// Lower a validated logical plan. Operator `n` of the logical plan becomes
/// physical operator `n + 1`; statements whose results never reach a
/// `store` are dropped.
pub fn to_physical(plan: &LogicalPlan) -> PhysicalPlan {
    let mut live = BTreeSet::new();
    let mut stack: Vec<NodeId> = plan.sinks();
    while let Some(id) = stack.pop() {
        if live.insert(id) {
            stack.extend(plan.node(id).inputs.iter().copied());
        }
    }
    let mut pp = PhysicalPlan::default();
    let op_id = |id: NodeId| OpId(id.0 as u32 + 1);
    for node in plan.nodes.iter().filter(|n| live.contains(&n.id)) {
        let params = match &node.op {
            LogicalOp::Load { path, .. } => OpParams::Load { path: path.clone() },
            LogicalOp::Store { path } => OpParams::Store { path: path.clone() },
            LogicalOp::Foreach { items } if !items.iter().any(GenItem::is_aggregate) => OpParams::Project {
                columns: items
                    .iter()
                    .map(|i| match i {
                        GenItem::Column(c) => name(c),
                        GenItem::Agg { .. } => unreachable!(),
                    })
                    .collect(),
            },
            LogicalOp::Foreach { items } => OpParams::Aggregate {
                items: items
                    .iter()
                    .map(|i| match i {
                        GenItem::Column(c) => AggItem::Column(name(c)),
                        GenItem::Agg { func, bag, field } => AggItem::Call {
                            func: *func,
                            bag: name(bag),
                            field: field.as_ref().map(name),
                        },
                    })
                    .collect(),
            },
            LogicalOp::Filter { predicate } => OpParams::Filter {
                predicate: predicate.canonical(),
            },
            LogicalOp::Join { keys } => OpParams::Join {
                keys: keys.iter().map(|k| names(k)).collect(),
            },
            LogicalOp::Group { keys } => OpParams::Group { keys: names(keys) },
            LogicalOp::CoGroup { keys } => OpParams::CoGroup {
                keys: keys.iter().map(|k| names(k)).collect(),
            },
            LogicalOp::Distinct => OpParams::Distinct,
            LogicalOp::Union => OpParams::Union,
        };
        let schema = node
            .schema
            .clone()
            .expect("to_physical requires a validated plan");
        pp.insert(op_id(node.id), params, schema);
        for (slot, &input) in node.inputs.iter().enumerate() {
            pp.connect(op_id(input), op_id(node.id), slot);
        }
    }
    pp
}

#[cfg(test)]
mod tests {
    use super::super::tests::physical;
    use super::super::OpKind;
    use crate::workloads::{Q1, Q2};

    fn kinds(p: &super::PhysicalPlan) -> Vec<OpKind> {
        p.topo_order().unwrap().into_iter().map(|i| p.op(i).kind()).collect()
    }

    #[test]
    fn q1_lowering() {
        let p = physical(Q1);
        p.validate().unwrap();
        assert_eq!(
            kinds(&p),
            vec![OpKind::Load, OpKind::Project, OpKind::Load, OpKind::Project, OpKind::Join, OpKind::Store]
        );
        let join = p.ids_of(OpKind::Join)[0];
        let inputs = p.inputs(join);
        assert_eq!(p.op(inputs[0]).schema.to_string(), "name");
        assert_eq!(p.op(inputs[1]).schema.to_string(), "user,est_revenue");
    }

    #[test]
    fn q2_lowering() {
        let p = physical(Q2);
        p.validate().unwrap();
        let k = kinds(&p);
        assert_eq!(&k[4..], &[OpKind::Join, OpKind::Group, OpKind::Aggregate, OpKind::Store]);
    }

    #[test]
    fn load_store_is_unchanged() {
        let p = physical("A = load 'x' as (f); store A into 'y';");
        assert_eq!(kinds(&p), vec![OpKind::Load, OpKind::Store]);
        assert_eq!(p.edges.len(), 1);
    }

    #[test]
    fn unused_statements_are_dropped() {
        let p = physical("A = load 'x' as (f);\nB = distinct A;\nstore A into 'y';");
        assert_eq!(p.ops.len(), 2);
    }
}
