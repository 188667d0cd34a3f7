use std::collections::HashMap;

use super::lexer::{lex, Tok, Token};
use super::{GenItem, LogicalNode, LogicalOp, LogicalPlan, NodeId, ParseError, Pos};
use crate::expr::{AggFunc, CmpOp, ColRef, Literal, Operand, Predicate};

const KEYWORDS: &[&str] = &[
    "load", "foreach", "generate", "filter", "join", "group", "cogroup", "distinct", "union",
    "store", "into", "by", "as", "using", "and", "or", "not",
];

fn is_keyword(s: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(s))
}

/// Parse a script into a logical plan with one node per statement.
pub fn parse(script: &str) -> Result<LogicalPlan, ParseError> {
    let mut p = Parser::new(lex(script)?);
    let mut plan = LogicalPlan::default();
    let mut aliases: HashMap<String, NodeId> = HashMap::new();
    while p.peek() != &Tok::Eof {
        let pos = p.pos();
        let id = NodeId(plan.nodes.len());
        if p.at_keyword("store") {
            p.bump();
            let (input, ipos) = p.alias_ref()?;
            let input = lookup(&aliases, &input, ipos)?;
            p.keyword("into")?;
            let path = p.string()?;
            p.expect(Tok::Semi, "';'")?;
            plan.nodes.push(LogicalNode {
                id,
                alias: None,
                op: LogicalOp::Store { path },
                inputs: vec![input],
                pos,
                schema: None,
            });
            continue;
        }
        let (alias, apos) = p.alias_ref()?;
        if aliases.contains_key(&alias) {
            return Err(ParseError::DuplicateAlias { pos: apos, alias });
        }
        p.expect(Tok::Assign, "'='")?;
        let (op, input_names) = p.statement()?;
        p.expect(Tok::Semi, "';'")?;
        let inputs = input_names
            .into_iter()
            .map(|(a, pos)| lookup(&aliases, &a, pos))
            .collect::<Result<Vec<_>, _>>()?;
        aliases.insert(alias.clone(), id);
        plan.nodes.push(LogicalNode {
            id,
            alias: Some(alias),
            op,
            inputs,
            pos,
            schema: None,
        });
    }
    if plan.nodes.is_empty() {
        return Err(ParseError::Empty);
    }
    Ok(plan)
}

/// Parse a standalone filter condition.
pub fn parse_predicate(text: &str) -> Result<Predicate, ParseError> {
    let mut p = Parser::new(lex(text)?);
    let pred = p.predicate()?;
    p.expect(Tok::Eof, "end of condition")?;
    Ok(pred)
}

fn lookup(aliases: &HashMap<String, NodeId>, alias: &str, pos: Pos) -> Result<NodeId, ParseError> {
    aliases
        .get(alias)
        .copied()
        .ok_or_else(|| ParseError::UndefinedAlias {
            pos,
            alias: alias.to_string(),
        })
}

type Inputs = Vec<(String, Pos)>;

struct Parser {
    toks: Vec<Token>,
    at: usize,
}

impl Parser {
    fn new(toks: Vec<Token>) -> Self {
        Parser { toks, at: 0 }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.at + n).min(self.toks.len() - 1)].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].tok.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            pos: self.pos(),
            expected: expected.to_string(),
            found: self.peek().to_string(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.fail(what)
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.at_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            self.fail(&format!("'{kw}'"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Tok::Ident(s) if !is_keyword(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => self.fail(what),
        }
    }

    fn alias_ref(&mut self) -> Result<(String, Pos), ParseError> {
        let pos = self.pos();
        Ok((self.ident("an alias")?, pos))
    }

    fn string(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Tok::Str(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => self.fail("a quoted string"),
        }
    }

    fn statement(&mut self) -> Result<(LogicalOp, Inputs), ParseError> {
        let Tok::Ident(word) = self.peek().clone() else {
            return self.fail("an operator keyword");
        };
        let word = word.to_ascii_lowercase();
        match word.as_str() {
            "load" => {
                self.bump();
                let path = self.string()?;
                if self.at_keyword("as") || self.at_keyword("using") {
                    self.bump();
                } else {
                    return self.fail("'as'");
                }
                self.expect(Tok::LParen, "'('")?;
                let mut columns = vec![self.ident("a column name")?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    columns.push(self.ident("a column name")?);
                }
                self.expect(Tok::RParen, "')'")?;
                Ok((LogicalOp::Load { path, columns }, vec![]))
            }
            "foreach" => {
                self.bump();
                let input = self.alias_ref()?;
                self.keyword("generate")?;
                let mut items = vec![self.gen_item()?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    items.push(self.gen_item()?);
                }
                Ok((LogicalOp::Foreach { items }, vec![input]))
            }
            "filter" => {
                self.bump();
                let input = self.alias_ref()?;
                self.keyword("by")?;
                let predicate = self.predicate()?;
                Ok((LogicalOp::Filter { predicate }, vec![input]))
            }
            "join" | "cogroup" => {
                self.bump();
                let mut inputs = Vec::new();
                let mut keys = Vec::new();
                loop {
                    inputs.push(self.alias_ref()?);
                    self.keyword("by")?;
                    keys.push(self.key_spec()?);
                    if *self.peek() != Tok::Comma {
                        break;
                    }
                    self.bump();
                }
                if inputs.len() < 2 {
                    return self.fail("',' and another input");
                }
                let op = if word == "join" {
                    LogicalOp::Join { keys }
                } else {
                    LogicalOp::CoGroup { keys }
                };
                Ok((op, inputs))
            }
            "group" => {
                self.bump();
                let input = self.alias_ref()?;
                self.keyword("by")?;
                let keys = self.key_spec()?;
                Ok((LogicalOp::Group { keys }, vec![input]))
            }
            "distinct" => {
                self.bump();
                let input = self.alias_ref()?;
                Ok((LogicalOp::Distinct, vec![input]))
            }
            "union" => {
                self.bump();
                let mut inputs = vec![self.alias_ref()?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    inputs.push(self.alias_ref()?);
                }
                if inputs.len() < 2 {
                    return self.fail("',' and another input");
                }
                Ok((LogicalOp::Union, inputs))
            }
            _ => self.fail("one of load, foreach, filter, join, group, cogroup, distinct, union"),
        }
    }

    fn col_ref(&mut self) -> Result<ColRef, ParseError> {
        match self.peek().clone() {
            Tok::Dollar(k) => {
                self.bump();
                Ok(ColRef::Positional(k))
            }
            Tok::Ident(first) if !is_keyword(&first) || first.eq_ignore_ascii_case("group") => {
                self.bump();
                let mut name = first;
                while *self.peek() == Tok::DoubleColon {
                    self.bump();
                    match self.peek().clone() {
                        Tok::Ident(s) => {
                            self.bump();
                            name.push_str("::");
                            name.push_str(&s);
                        }
                        _ => return self.fail("a column name after '::'"),
                    }
                }
                Ok(ColRef::Named(name))
            }
            _ => self.fail("a column reference"),
        }
    }

    fn key_spec(&mut self) -> Result<Vec<ColRef>, ParseError> {
        if *self.peek() == Tok::LParen {
            self.bump();
            let mut keys = vec![self.col_ref()?];
            while *self.peek() == Tok::Comma {
                self.bump();
                keys.push(self.col_ref()?);
            }
            self.expect(Tok::RParen, "')'")?;
            Ok(keys)
        } else {
            Ok(vec![self.col_ref()?])
        }
    }

    fn gen_item(&mut self) -> Result<GenItem, ParseError> {
        if let (Tok::Ident(name), Tok::LParen) = (self.peek().clone(), self.peek_at(1)) {
            let pos = self.pos();
            let func = AggFunc::parse(&name).ok_or(ParseError::UnknownAggregate {
                pos,
                name: name.clone(),
            })?;
            self.bump();
            self.bump();
            let bag = self.col_ref()?;
            let field = if *self.peek() == Tok::Dot {
                self.bump();
                Some(self.col_ref()?)
            } else {
                None
            };
            self.expect(Tok::RParen, "')'")?;
            return Ok(GenItem::Agg { func, bag, field });
        }
        Ok(GenItem::Column(self.col_ref()?))
    }

    fn predicate(&mut self) -> Result<Predicate, ParseError> {
        let mut items = vec![self.conjunction()?];
        while self.at_keyword("or") {
            self.bump();
            items.push(self.conjunction()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Predicate::Or(items)
        })
    }

    fn conjunction(&mut self) -> Result<Predicate, ParseError> {
        let mut items = vec![self.negation()?];
        while self.at_keyword("and") {
            self.bump();
            items.push(self.negation()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Predicate::And(items)
        })
    }

    fn negation(&mut self) -> Result<Predicate, ParseError> {
        if self.at_keyword("not") {
            self.bump();
            return Ok(Predicate::Not(Box::new(self.negation()?)));
        }
        if *self.peek() == Tok::LParen {
            self.bump();
            let p = self.predicate()?;
            self.expect(Tok::RParen, "')'")?;
            return Ok(p);
        }
        let left = self.operand()?;
        let op = match self.peek() {
            Tok::Assign => CmpOp::Eq,
            Tok::Cmp("==") => CmpOp::Eq,
            Tok::Cmp("!=") => CmpOp::Ne,
            Tok::Cmp("<") => CmpOp::Lt,
            Tok::Cmp("<=") => CmpOp::Le,
            Tok::Cmp(">") => CmpOp::Gt,
            Tok::Cmp(">=") => CmpOp::Ge,
            _ => return self.fail("a comparison operator"),
        };
        self.bump();
        let right = self.operand()?;
        Ok(Predicate::Cmp(left, op, right))
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(Operand::Lit(Literal::Str(s)))
            }
            Tok::Num(n) => {
                let lit = match Literal::number(&n) {
                    Some(l) => l,
                    None => return self.fail("a number"),
                };
                self.bump();
                Ok(Operand::Lit(lit))
            }
            _ => Ok(Operand::Col(self.col_ref()?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::{Q1, Q2};

    #[test]
    fn q1_shape() {
        let plan = parse(Q1).unwrap();
        assert_eq!(plan.count("load"), 2);
        assert_eq!(plan.count("foreach"), 2);
        assert_eq!(plan.count("join"), 1);
        assert_eq!(plan.count("store"), 1);
        assert_eq!(plan.nodes.len(), 6);
    }

    #[test]
    fn q2_shape() {
        let plan = parse(Q2).unwrap();
        let group = plan.nodes.iter().find(|n| n.op.name() == "group").unwrap();
        assert_eq!(plan.node(group.inputs[0]).op.name(), "join");
        let agg = plan.nodes.iter().find(|n| n.alias.as_deref() == Some("E")).unwrap();
        assert_eq!(agg.inputs, vec![group.id]);
        match &agg.op {
            LogicalOp::Foreach { items } => assert!(items[1].is_aggregate()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn minimal_pipeline() {
        let plan = parse("A = load 'x' as (f); store A into 'y';").unwrap();
        assert_eq!(plan.nodes.len(), 2);
        assert_eq!(plan.edges(), vec![(NodeId(0), NodeId(1), 0)]);
        assert_eq!(plan.sinks(), vec![NodeId(1)]);
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse("A = load 'x' as (f)\nstore A into 'y';").unwrap_err();
        assert!(matches!(e, ParseError::Syntax { pos: Pos { line: 2, col: 1 }, .. }), "{e}");
        let e = parse("A = load 'x' as (f);\nstore B into 'y';").unwrap_err();
        assert_eq!(
            e,
            ParseError::UndefinedAlias {
                pos: Pos { line: 2, col: 7 },
                alias: "B".into()
            }
        );
        let e = parse("A = load 'x' as (f);\nA = distinct A;").unwrap_err();
        assert!(matches!(e, ParseError::DuplicateAlias { .. }));
        let e = parse("A = load 'x' as (f);\nB = group A by f;\nC = foreach B generate MEDIAN(A.f);")
            .unwrap_err();
        assert!(matches!(e, ParseError::UnknownAggregate { ref name, .. } if name == "MEDIAN"));
        assert_eq!(parse("-- nothing\n").unwrap_err(), ParseError::Empty);
    }

    #[test]
    fn predicates() {
        let p = parse_predicate("not (a = 1 or b >= 'x') and $2 < -3.5").unwrap();
        assert_eq!(p.to_string(), "(not (a == 1 or b >= 'x') and $2 < -3.5)");
    }

    #[test]
    fn deterministic() {
        assert_eq!(parse(Q2).unwrap(), parse(Q2).unwrap());
    }
}
