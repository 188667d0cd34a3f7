//! A direct in-memory evaluator for scripts. It shares no code with the
//! MapReduce executor and serves as the yardstick for it in tests.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use crate::expr::{AggFunc, CmpOp, ColRef, Literal, Operand, Predicate};
use crate::lang::{compile, GenItem, LogicalOp, LogicalPlan};
use crate::schema::Schema;
use crate::value::{decode_row, encode_row, format_f64, Number, Row, Value};

type Table = Vec<Row>;

fn idx(schema: &Schema, c: &ColRef) -> Result<usize, String> {
    match c {
        ColRef::Positional(k) => Ok(*k),
        ColRef::Named(n) => schema.resolve(n).map_err(|e| e.to_string()),
    }
}

fn enc(row: &[Value]) -> Result<String, String> {
    encode_row(row).map_err(|e| e.to_string())
}

fn sort_bag(mut rows: Vec<Row>) -> Result<Vec<Row>, String> {
    let mut keyed: Vec<(String, Row)> = rows.drain(..).map(|r| Ok((enc(&r)?, r))).collect::<Result<_, String>>()?;
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(keyed.into_iter().map(|(_, r)| r).collect())
}

fn null(v: &Value) -> bool {
    matches!(v, Value::Atom(s) if s.is_empty())
}

fn compare(l: &Operand, op: CmpOp, r: &Operand, schema: &Schema, row: &[Value]) -> Result<bool, String> {
    let get = |o: &Operand| -> Result<Value, String> {
        Ok(match o {
            Operand::Col(c) => row[idx(schema, c)?].clone(),
            Operand::Lit(Literal::Num(n)) => Value::Atom(n.clone()),
            Operand::Lit(Literal::Str(s)) => Value::Atom(s.clone()),
        })
    };
    let (a, b) = (get(l)?, get(r)?);
    let (Value::Atom(x), Value::Atom(y)) = (&a, &b) else {
        return Err("comparison of a non-atom".into());
    };
    if null(&a) || null(&b) {
        return Ok(false);
    }
    let numeric_lit = matches!(l, Operand::Lit(Literal::Num(_))) || matches!(r, Operand::Lit(Literal::Num(_)));
    let both_cols = matches!(l, Operand::Col(_)) && matches!(r, Operand::Col(_));
    let ord = if numeric_lit {
        match (Number::parse(x), Number::parse(y)) {
            (Some(m), Some(n)) => m.as_f64().partial_cmp(&n.as_f64()).unwrap_or(Ordering::Equal).then(int_tiebreak(m, n)),
            _ => {
                return match op {
                    CmpOp::Eq => Ok(false),
                    CmpOp::Ne => Ok(true),
                    _ => Err("ordering a non-number against a number".into()),
                }
            }
        }
    } else if both_cols {
        match (Number::parse(x), Number::parse(y)) {
            (Some(m), Some(n)) => m.as_f64().partial_cmp(&n.as_f64()).unwrap_or(Ordering::Equal).then(int_tiebreak(m, n)),
            _ => x.cmp(y),
        }
    } else {
        x.cmp(y)
    };
    Ok(match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
    })
}

/// Large integers that collapse to the same f64 still order exactly.
fn int_tiebreak(a: Number, b: Number) -> Ordering {
    match (a, b) {
        (Number::Int(x), Number::Int(y)) => x.cmp(&y),
        _ => Ordering::Equal,
    }
}

fn holds(p: &Predicate, schema: &Schema, row: &[Value]) -> Result<bool, String> {
    match p {
        Predicate::Cmp(l, op, r) => compare(l, *op, r, schema, row),
        Predicate::And(xs) => {
            for x in xs {
                if !holds(x, schema, row)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Predicate::Or(xs) => {
            for x in xs {
                if holds(x, schema, row)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Predicate::Not(x) => Ok(!holds(x, schema, row)?),
    }
}

fn fold(func: AggFunc, bag: &Value, field: Option<usize>) -> Result<Value, String> {
    let Value::Bag(rows) = bag else {
        return Err("aggregate over a non-bag".into());
    };
    let vals: Vec<&Value> = match field {
        Some(f) => rows.iter().map(|r| &r[f]).filter(|v| !null(v)).collect(),
        None if func == AggFunc::Count => return Ok(Value::Atom(rows.len().to_string())),
        None => return Err(format!("{func} needs a field")),
    };
    if func == AggFunc::Count {
        return Ok(Value::Atom(vals.len().to_string()));
    }
    let mut nums = Vec::new();
    for v in vals {
        let Value::Atom(s) = v else {
            return Err("aggregate over a non-atom".into());
        };
        nums.push((Number::parse(s).ok_or_else(|| format!("not a number: {s}"))?, s.as_str()));
    }
    if nums.is_empty() {
        return Ok(Value::Atom(String::new()));
    }
    let all_int = nums.iter().all(|(n, _)| matches!(n, Number::Int(_)));
    let fsum = || {
        let mut acc = 0.0;
        for (n, _) in &nums {
            acc += n.as_f64();
        }
        acc
    };
    let text = match func {
        AggFunc::Sum if all_int => {
            let mut acc: i128 = 0;
            for (n, _) in &nums {
                if let Number::Int(i) = n {
                    acc += *i as i128;
                }
            }
            acc.to_string()
        }
        AggFunc::Sum => format_f64(fsum()),
        AggFunc::Avg => format_f64(fsum() / nums.len() as f64),
        AggFunc::Min | AggFunc::Max => {
            let mut best = nums[0];
            for &cand in &nums[1..] {
                let o = cand.0.cmp_num(best.0);
                if (func == AggFunc::Min && o == Ordering::Less) || (func == AggFunc::Max && o == Ordering::Greater) {
                    best = cand;
                }
            }
            best.1.to_string()
        }
        AggFunc::Count => unreachable!(),
    };
    Ok(Value::Atom(text))
}

fn key_of(schema: &Schema, keys: &[ColRef], row: &[Value]) -> Result<Vec<Value>, String> {
    keys.iter().map(|k| Ok(row[idx(schema, k)?].clone())).collect()
}

fn group_value(mut key: Vec<Value>) -> Value {
    if key.len() == 1 {
        key.pop().unwrap()
    } else {
        Value::Tuple(key)
    }
}

/// Evaluate a compiled plan. `inputs` maps dataset paths to their record
/// lines; the result maps each stored path to its record lines, sorted.
pub fn evaluate(plan: &LogicalPlan, inputs: &BTreeMap<String, Vec<String>>) -> Result<BTreeMap<String, Vec<String>>, String> {
    let mut tables: Vec<Option<Table>> = vec![None; plan.nodes.len()];
    let mut outputs = BTreeMap::new();
    let mut live = BTreeSet::new();
    let mut stack = plan.sinks();
    while let Some(id) = stack.pop() {
        if live.insert(id) {
            stack.extend(plan.node(id).inputs.iter().copied());
        }
    }
    for node in plan.nodes.iter().filter(|n| live.contains(&n.id)) {
        let schema_of = |i: usize| -> &Schema { plan.nodes[node.inputs[i].0].schema.as_ref().expect("validated plan") };
        let input = |i: usize| -> Table { tables[node.inputs[i].0].clone().expect("inputs precede their consumers") };
        let out: Table = match &node.op {
            LogicalOp::Load { path, columns } => {
                let lines = inputs.get(path).ok_or_else(|| format!("missing input {path}"))?;
                lines
                    .iter()
                    .map(|l| decode_row(l, columns.len()).map_err(|e| e.to_string()))
                    .collect::<Result<_, _>>()?
            }
            LogicalOp::Store { path } => {
                let mut lines: Vec<String> = input(0).iter().map(|r| enc(r)).collect::<Result<_, _>>()?;
                lines.sort();
                outputs.insert(path.clone(), lines);
                Vec::new()
            }
            LogicalOp::Filter { predicate } => {
                let s = schema_of(0);
                let mut out = Vec::new();
                for row in input(0) {
                    if holds(predicate, s, &row)? {
                        out.push(row);
                    }
                }
                out
            }
            LogicalOp::Foreach { items } => {
                let s = schema_of(0);
                let mut out = Vec::new();
                for row in input(0) {
                    let mut r = Vec::new();
                    for item in items {
                        r.push(match item {
                            GenItem::Column(c) => row[idx(s, c)?].clone(),
                            GenItem::Agg { func, bag, field } => {
                                let b = idx(s, bag)?;
                                let f = match field {
                                    Some(f) => {
                                        let inner = s.columns[b].inner().ok_or("aggregate over a non-bag column")?;
                                        Some(idx(inner, f)?)
                                    }
                                    None => None,
                                };
                                fold(*func, &row[b], f)?
                            }
                        });
                    }
                    out.push(r);
                }
                out
            }
            LogicalOp::Join { keys } => {
                let mut acc: Vec<(Vec<Value>, Row)> = Vec::new();
                for (slot, k) in keys.iter().enumerate() {
                    let s = schema_of(slot);
                    let rows = input(slot);
                    if slot == 0 {
                        for r in rows {
                            acc.push((key_of(s, k, &r)?, r));
                        }
                        continue;
                    }
                    let mut next = Vec::new();
                    for (key, left) in &acc {
                        for r in &rows {
                            if &key_of(s, k, r)? == key {
                                let mut joined = left.clone();
                                joined.extend(r.iter().cloned());
                                next.push((key.clone(), joined));
                            }
                        }
                    }
                    acc = next;
                }
                acc.into_iter().map(|(_, r)| r).collect()
            }
            LogicalOp::Group { keys } => {
                let s = schema_of(0);
                let mut groups: BTreeMap<String, (Vec<Value>, Vec<Row>)> = BTreeMap::new();
                for r in input(0) {
                    let key = key_of(s, keys, &r)?;
                    groups.entry(enc(&key)?).or_insert_with(|| (key, Vec::new())).1.push(r);
                }
                let mut out = Vec::new();
                for (_, (key, rows)) in groups {
                    out.push(vec![group_value(key), Value::Bag(sort_bag(rows)?)]);
                }
                out
            }
            LogicalOp::CoGroup { keys } => {
                let n = keys.len();
                let mut groups: BTreeMap<String, (Vec<Value>, Vec<Vec<Row>>)> = BTreeMap::new();
                for (slot, k) in keys.iter().enumerate() {
                    let s = schema_of(slot);
                    for r in input(slot) {
                        let key = key_of(s, k, &r)?;
                        groups
                            .entry(enc(&key)?)
                            .or_insert_with(|| (key, vec![Vec::new(); n]))
                            .1[slot]
                            .push(r);
                    }
                }
                let mut out = Vec::new();
                for (_, (key, bags)) in groups {
                    let mut row = vec![group_value(key)];
                    for b in bags {
                        row.push(Value::Bag(sort_bag(b)?));
                    }
                    out.push(row);
                }
                out
            }
            LogicalOp::Distinct => {
                let mut seen = BTreeSet::new();
                let mut out = Vec::new();
                for r in input(0) {
                    if seen.insert(enc(&r)?) {
                        out.push(r);
                    }
                }
                out
            }
            LogicalOp::Union => (0..node.inputs.len()).flat_map(input).collect(),
        };
        tables[node.id.0] = Some(out);
    }
    Ok(outputs)
}

/// Compile and evaluate `script`.
pub fn run_script(script: &str, inputs: &BTreeMap<String, Vec<String>>) -> Result<BTreeMap<String, Vec<String>>, String> {
    let plan = compile(script).map_err(|e| e.to_string())?;
    evaluate(&plan, inputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(pairs: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    #[test]
    fn group_and_sum() {
        let out = run_script(
            "A = load 'a' as (k, v);\nB = group A by k;\nC = foreach B generate group, SUM(A.v), COUNT(A);\nstore C into 'o';",
            &inputs(&[("a", &["x\t1", "y\t2", "x\t3"])]),
        )
        .unwrap();
        assert_eq!(out["o"], vec!["x\t4\t2", "y\t2\t1"]);
    }

    #[test]
    fn join_is_inner() {
        let out = run_script(
            "A = load 'a' as (k, v);\nB = load 'b' as (k, w);\nC = join A by k, B by k;\nstore C into 'o';",
            &inputs(&[("a", &["x\t1", "y\t2"]), ("b", &["x\t9", "x\t8", "z\t0"])]),
        )
        .unwrap();
        assert_eq!(out["o"], vec!["x\t1\tx\t8", "x\t1\tx\t9"]);
    }

    #[test]
    fn empty_atoms_never_compare() {
        let out = run_script(
            "A = load 'a' as (k, v);\nB = filter A by v != 1;\nstore B into 'o';",
            &inputs(&[("a", &["x\t", "y\t2", "z\t1"])]),
        )
        .unwrap();
        assert_eq!(out["o"], vec!["y\t2"]);
    }
}
