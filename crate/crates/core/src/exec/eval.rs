//! Row-level operator semantics shared by the map and reduce phases.

use std::cmp::Ordering;

use crate::expr::{AggFunc, CmpOp, Literal, Operand, Predicate};
use crate::plan::{AggItem, OpId, OpParams, PhysicalOp};
use crate::schema::{ColumnKind, Schema};
use crate::value::{decode_row, encode_row_into, format_f64, Number, Row, Value};

use super::ExecError;

fn column(op: OpId, schema: &Schema, name: &str) -> Result<usize, ExecError> {
    schema.resolve(name).map_err(|_| ExecError::Column {
        op,
        column: name.to_string(),
    })
}

#[derive(Debug, Clone)]
pub enum BoundOperand {
    Col(usize),
    Num(Number),
    Str(String),
}

enum Side<'a> {
    Text(&'a str),
    Num(Number),
}

fn side<'a>(op: OpId, o: &'a BoundOperand, row: &'a [Value]) -> Result<Option<Side<'a>>, ExecError> {
    Ok(match o {
        BoundOperand::Col(i) => match &row[*i] {
            Value::Atom(s) if s.is_empty() => None,
            Value::Atom(s) => Some(Side::Text(s)),
            _ => {
                return Err(ExecError::Type {
                    op,
                    message: "cannot compare a bag or tuple".into(),
                })
            }
        },
        BoundOperand::Num(n) => Some(Side::Num(*n)),
        BoundOperand::Str(s) => Some(Side::Text(s)),
    })
}

/// A predicate with columns bound to positions.
#[derive(Debug, Clone)]
pub enum BoundPredicate {
    Cmp(BoundOperand, CmpOp, BoundOperand),
    And(Vec<BoundPredicate>),
    Or(Vec<BoundPredicate>),
    Not(Box<BoundPredicate>),
}

impl BoundPredicate {
    pub fn bind(op: OpId, p: &Predicate, schema: &Schema) -> Result<Self, ExecError> {
        let operand = |o: &Operand| -> Result<BoundOperand, ExecError> {
            Ok(match o {
                Operand::Col(c) => BoundOperand::Col(column(op, schema, &c.to_string())?),
                Operand::Lit(Literal::Num(n)) => BoundOperand::Num(
                    Number::parse(n).ok_or_else(|| ExecError::Type {
                        op,
                        message: format!("bad numeric literal {n}"),
                    })?,
                ),
                Operand::Lit(Literal::Str(s)) => BoundOperand::Str(s.clone()),
            })
        };
        Ok(match p {
            Predicate::Cmp(l, c, r) => BoundPredicate::Cmp(operand(l)?, *c, operand(r)?),
            Predicate::And(xs) => {
                BoundPredicate::And(xs.iter().map(|x| Self::bind(op, x, schema)).collect::<Result<_, _>>()?)
            }
            Predicate::Or(xs) => {
                BoundPredicate::Or(xs.iter().map(|x| Self::bind(op, x, schema)).collect::<Result<_, _>>()?)
            }
            Predicate::Not(x) => BoundPredicate::Not(Box::new(Self::bind(op, x, schema)?)),
        })
    }

    /// Comparisons involving an empty atom are false; ordering a non-numeric
    /// atom against a number is a type error.
    pub fn eval(&self, op: OpId, row: &[Value]) -> Result<bool, ExecError> {
        match self {
            BoundPredicate::Cmp(l, c, r) => {
                let (Some(a), Some(b)) = (side(op, l, row)?, side(op, r, row)?) else {
                    return Ok(false);
                };
                let as_num = |s: &Side| match s {
                    Side::Num(n) => Some(*n),
                    Side::Text(t) => Number::parse(t),
                };
                let ord = match (&a, &b) {
                    (Side::Text(x), Side::Text(y)) => match (Number::parse(x), Number::parse(y)) {
                        (Some(m), Some(n)) if matches!((l, r), (BoundOperand::Col(_), BoundOperand::Col(_))) => {
                            m.cmp_num(n)
                        }
                        _ => x.cmp(y),
                    },
                    _ => match (as_num(&a), as_num(&b)) {
                        (Some(m), Some(n)) => m.cmp_num(n),
                        _ => {
                            return match c {
                                CmpOp::Eq => Ok(false),
                                CmpOp::Ne => Ok(true),
                                _ => Err(ExecError::Type {
                                    op,
                                    message: "ordering comparison between a non-numeric value and a number".into(),
                                }),
                            }
                        }
                    },
                };
                Ok(c.holds(ord))
            }
            BoundPredicate::And(xs) => {
                for x in xs {
                    if !x.eval(op, row)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            BoundPredicate::Or(xs) => {
                for x in xs {
                    if x.eval(op, row)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            BoundPredicate::Not(x) => Ok(!x.eval(op, row)?),
        }
    }
}

#[derive(Debug, Clone)]
pub enum BoundAgg {
    Column(usize),
    Call {
        func: AggFunc,
        bag: usize,
        field: Option<usize>,
    },
}

/// Fold one bag column with `func`.
pub fn aggregate(op: OpId, func: AggFunc, bag: &Value, field: Option<usize>) -> Result<Value, ExecError> {
    let Value::Bag(tuples) = bag else {
        return Err(ExecError::Type {
            op,
            message: format!("{func} applied to a non-bag value"),
        });
    };
    if func == AggFunc::Count {
        let n = match field {
            None => tuples.len(),
            Some(f) => tuples
                .iter()
                .filter(|t| !matches!(t.get(f), Some(Value::Atom(s)) if s.is_empty()))
                .count(),
        };
        return Ok(Value::Atom(n.to_string()));
    }
    let f = field.ok_or_else(|| ExecError::Type {
        op,
        message: format!("{func} needs a field"),
    })?;
    let mut nums: Vec<(Number, &str)> = Vec::with_capacity(tuples.len());
    for t in tuples {
        match t.get(f) {
            Some(Value::Atom(s)) if s.is_empty() => {}
            Some(Value::Atom(s)) => nums.push((
                Number::parse(s).ok_or_else(|| ExecError::Type {
                    op,
                    message: format!("{func} over non-numeric value {s:?}"),
                })?,
                s,
            )),
            _ => {
                return Err(ExecError::Type {
                    op,
                    message: format!("{func} over a non-atom value"),
                })
            }
        }
    }
    if nums.is_empty() {
        return Ok(Value::Atom(String::new()));
    }
    Ok(Value::Atom(match func {
        AggFunc::Sum => {
            if nums.iter().all(|(n, _)| matches!(n, Number::Int(_))) {
                let s: i128 = nums
                    .iter()
                    .map(|(n, _)| match n {
                        Number::Int(i) => *i as i128,
                        Number::Float(_) => 0,
                    })
                    .sum();
                s.to_string()
            } else {
                format_f64(nums.iter().map(|(n, _)| n.as_f64()).sum())
            }
        }
        AggFunc::Avg => {
            let s: f64 = nums.iter().map(|(n, _)| n.as_f64()).sum();
            format_f64(s / nums.len() as f64)
        }
        AggFunc::Min | AggFunc::Max => {
            let pick = nums
                .iter()
                .copied()
                .reduce(|a, b| {
                    let o = b.0.cmp_num(a.0);
                    let better = if func == AggFunc::Min { o == Ordering::Less } else { o == Ordering::Greater };
                    if better {
                        b
                    } else {
                        a
                    }
                })
                .unwrap();
            pick.1.to_string()
        }
        AggFunc::Count => unreachable!(),
    }))
}

/// A non-shuffle operator compiled against its input schemas.
#[derive(Debug, Clone)]
pub enum RowOp {
    Project(Vec<usize>),
    Filter(BoundPredicate),
    Aggregate(Vec<BoundAgg>),
    /// Union, Split, Store and Load forward rows unchanged.
    Pass,
}

impl RowOp {
    pub fn compile(op: &PhysicalOp, inputs: &[&Schema]) -> Result<RowOp, ExecError> {
        let input = || inputs.first().copied().ok_or(ExecError::Plan(crate::plan::PlanError::Arity(op.id)));
        Ok(match &op.params {
            OpParams::Project { columns } => {
                let s = input()?;
                RowOp::Project(columns.iter().map(|c| column(op.id, s, c)).collect::<Result<_, _>>()?)
            }
            OpParams::Filter { predicate } => RowOp::Filter(BoundPredicate::bind(op.id, predicate, input()?)?),
            OpParams::Aggregate { items } => {
                let s = input()?;
                let mut out = Vec::new();
                for item in items {
                    out.push(match item {
                        AggItem::Column(c) => BoundAgg::Column(column(op.id, s, c)?),
                        AggItem::Call { func, bag, field } => {
                            let b = column(op.id, s, bag)?;
                            let field = match (&s.columns[b].kind, field) {
                                (ColumnKind::Bag(inner), Some(f)) => Some(column(op.id, inner, f)?),
                                (ColumnKind::Bag(_), None) => None,
                                _ => {
                                    return Err(ExecError::Type {
                                        op: op.id,
                                        message: format!("{func} argument '{bag}' is not a bag"),
                                    })
                                }
                            };
                            BoundAgg::Call { func: *func, bag: b, field }
                        }
                    });
                }
                RowOp::Aggregate(out)
            }
            OpParams::Union | OpParams::Split | OpParams::Store { .. } | OpParams::Load { .. } => RowOp::Pass,
            OpParams::Join { .. } | OpParams::Group { .. } | OpParams::CoGroup { .. } | OpParams::Distinct => {
                unreachable!("shuffle operators are not row operators")
            }
        })
    }

    /// Apply to a batch, consuming it.
    pub fn apply(&self, op: OpId, batch: Vec<Row>) -> Result<Vec<Row>, ExecError> {
        match self {
            RowOp::Pass => Ok(batch),
            RowOp::Project(idx) => Ok(batch
                .into_iter()
                .map(|mut row| {
                    let mut out = Vec::with_capacity(idx.len());
                    for (k, &i) in idx.iter().enumerate() {
                        if idx[k + 1..].contains(&i) {
                            out.push(row[i].clone());
                        } else {
                            out.push(std::mem::replace(&mut row[i], Value::Atom(String::new())));
                        }
                    }
                    out
                })
                .collect()),
            RowOp::Filter(p) => {
                let mut out = Vec::with_capacity(batch.len());
                for row in batch {
                    if p.eval(op, &row)? {
                        out.push(row);
                    }
                }
                Ok(out)
            }
            RowOp::Aggregate(items) => batch
                .into_iter()
                .map(|row| {
                    items
                        .iter()
                        .map(|it| match it {
                            BoundAgg::Column(i) => Ok(row[*i].clone()),
                            BoundAgg::Call { func, bag, field } => aggregate(op, *func, &row[*bag], *field),
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// How a shuffle operator keys its inputs.
#[derive(Debug, Clone)]
pub struct ShuffleSpec {
    pub kind: ShuffleKind,
    /// Key column positions per input slot.
    pub keys: Vec<Vec<usize>>,
    /// Arity of each input slot.
    pub arity: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShuffleKind {
    Join,
    Group,
    CoGroup,
    Distinct,
}

impl ShuffleSpec {
    pub fn compile(op: &PhysicalOp, inputs: &[&Schema]) -> Result<ShuffleSpec, ExecError> {
        let bind = |slot: usize, cols: &[String]| -> Result<Vec<usize>, ExecError> {
            let s = inputs.get(slot).ok_or(ExecError::Plan(crate::plan::PlanError::Arity(op.id)))?;
            cols.iter().map(|c| column(op.id, s, c)).collect()
        };
        let (kind, keys) = match &op.params {
            OpParams::Join { keys } => (
                ShuffleKind::Join,
                keys.iter().enumerate().map(|(i, k)| bind(i, k)).collect::<Result<_, _>>()?,
            ),
            OpParams::CoGroup { keys } => (
                ShuffleKind::CoGroup,
                keys.iter().enumerate().map(|(i, k)| bind(i, k)).collect::<Result<_, _>>()?,
            ),
            OpParams::Group { keys } => (ShuffleKind::Group, vec![bind(0, keys)?]),
            OpParams::Distinct => (ShuffleKind::Distinct, vec![(0..inputs[0].len()).collect()]),
            _ => unreachable!("not a shuffle operator"),
        };
        Ok(ShuffleSpec {
            kind,
            keys,
            arity: inputs.iter().map(|s| s.len()).collect(),
        })
    }

    /// Encode the key of `row` (arriving on `slot`) and, unless the whole
    /// row is the key, the row itself.
    pub fn encode(&self, slot: usize, row: &[Value], out: &mut String) -> Result<usize, crate::value::CodecError> {
        let key: Vec<Value> = self.keys[slot].iter().map(|&i| row[i].clone()).collect();
        encode_row_into(out, &key)?;
        let key_len = out.len();
        if self.kind != ShuffleKind::Distinct {
            encode_row_into(out, row)?;
        }
        Ok(key_len)
    }

    /// Combine all records of one key into output rows. `rows` holds, per
    /// input slot, the encoded rows in sorted order.
    pub fn combine(&self, key_text: &str, rows: &[Vec<&str>], out: &mut Vec<Row>) -> Result<(), crate::value::CodecError> {
        let n_keys = self.keys[0].len();
        let decode = |slot: usize| -> Result<Vec<Row>, crate::value::CodecError> {
            rows[slot].iter().map(|r| decode_row(r, self.arity[slot])).collect()
        };
        match self.kind {
            ShuffleKind::Distinct => out.push(decode_row(key_text, self.arity[0])?),
            ShuffleKind::Group | ShuffleKind::CoGroup => {
                let mut key = decode_row(key_text, n_keys)?;
                let group = if n_keys == 1 { key.pop().unwrap() } else { Value::Tuple(key) };
                let mut row = vec![group];
                for slot in 0..self.arity.len() {
                    row.push(Value::Bag(decode(slot)?));
                }
                out.push(row);
            }
            ShuffleKind::Join => {
                let sides: Vec<Vec<Row>> = (0..self.arity.len()).map(decode).collect::<Result<_, _>>()?;
                if sides.iter().any(Vec::is_empty) {
                    return Ok(());
                }
                let mut acc: Vec<Row> = vec![Vec::new()];
                for side in &sides {
                    let mut next = Vec::with_capacity(acc.len() * side.len());
                    for prefix in &acc {
                        for r in side {
                            let mut row = prefix.clone();
                            row.extend(r.iter().cloned());
                            next.push(row);
                        }
                    }
                    acc = next;
                }
                out.extend(acc);
            }
        }
        Ok(())
    }
}

/// Evaluate one operator over fully materialized inputs. Returns one output
/// stream per consumer branch (`fanout`), which only differs from a single
/// stream for Split.
pub fn evaluate_operator(
    op: &PhysicalOp,
    input_schemas: &[&Schema],
    inputs: Vec<Vec<Row>>,
    fanout: usize,
) -> Result<Vec<Vec<Row>>, ExecError> {
    let out = if op.kind().is_shuffle() {
        let spec = ShuffleSpec::compile(op, input_schemas)?;
        let mut recs: Vec<(String, usize, usize)> = Vec::new();
        for (slot, rows) in inputs.iter().enumerate() {
            for row in rows {
                let mut s = String::new();
                let k = spec.encode(slot, row, &mut s).map_err(|e| ExecError::Type {
                    op: op.id,
                    message: e.to_string(),
                })?;
                recs.push((s, k, slot));
            }
        }
        recs.sort_by(|a, b| (&a.0[..a.1], a.2, &a.0[a.1..]).cmp(&(&b.0[..b.1], b.2, &b.0[b.1..])));
        let mut out = Vec::new();
        let mut i = 0;
        while i < recs.len() {
            let key = &recs[i].0[..recs[i].1];
            let mut per_slot: Vec<Vec<&str>> = vec![Vec::new(); spec.arity.len()];
            let mut j = i;
            while j < recs.len() && &recs[j].0[..recs[j].1] == key {
                per_slot[recs[j].2].push(&recs[j].0[recs[j].1..]);
                j += 1;
            }
            spec.combine(key, &per_slot, &mut out).map_err(|e| ExecError::Type {
                op: op.id,
                message: e.to_string(),
            })?;
            i = j;
        }
        out
    } else {
        let row_op = RowOp::compile(op, input_schemas)?;
        let batch: Vec<Row> = inputs.into_iter().flatten().collect();
        row_op.apply(op.id, batch)?
    };
    let fanout = fanout.max(1);
    let mut streams = vec![out; fanout];
    streams.truncate(fanout);
    Ok(streams)
}
