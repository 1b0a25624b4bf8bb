//! Bidirectional infix text form for expression trees.
//!
//! `parse_tree(format_tree(t))` evaluates identically to `t` because float
//! constants are printed with enough digits to round-trip the underlying
//! f64 exactly (never fewer than nine significant digits).

use super::{ExpressionTree, Gene, TreeBuilder, Ty};
use crate::error::{Error, Result};

/// Prints a constant with >= 9 significant digits, bumping precision until
/// the decimal form parses back to the identical f64.
pub fn format_const(v: f64) -> String {
    for prec in 8..=17 {
        let s = format!("{v:.prec$e}");
        if s.parse::<f64>() == Ok(v) {
            return s;
        }
    }
    format!("{v:.17e}")
}

fn prec_of(gene: Gene) -> u8 {
    match gene {
        Gene::Or => 1,
        Gene::And => 2,
        Gene::Gt | Gene::Lt => 3,
        Gene::Add | Gene::Sub => 4,
        Gene::Mul | Gene::Div => 5,
        _ => 6,
    }
}

pub fn format_tree(tree: &ExpressionTree) -> String {
    let mut out = String::new();
    fmt_rec(tree, tree.root(), 0, &mut out);
    out
}

fn fmt_rec(tree: &ExpressionTree, id: u32, min_prec: u8, out: &mut String) {
    let gene = tree.gene_at(id);
    let prec = prec_of(gene);
    let c = tree.children_of(id);
    match gene {
        Gene::Const(v) => {
            let s = format_const(v);
            // A leading minus binds tighter than any operator here only if
            // parenthesized when following another operator token.
            if v < 0.0 && min_prec > 0 {
                out.push('(');
                out.push_str(&s);
                out.push(')');
            } else {
                out.push_str(&s);
            }
        }
        Gene::BoolConst(v) => out.push_str(if v { "true" } else { "false" }),
        Gene::Var(i) => out.push_str(&format!("x{i}")),
        Gene::Tanh | Gene::Abs => {
            out.push_str(if gene == Gene::Tanh { "tanh(" } else { "abs(" });
            fmt_rec(tree, c[0], 0, out);
            out.push(')');
        }
        Gene::If => {
            out.push_str("if(");
            fmt_rec(tree, c[0], 0, out);
            out.push_str(", ");
            fmt_rec(tree, c[1], 0, out);
            out.push_str(", ");
            fmt_rec(tree, c[2], 0, out);
            out.push(')');
        }
        _ => {
            let op = match gene {
                Gene::Add => " + ",
                Gene::Sub => " - ",
                Gene::Mul => " * ",
                Gene::Div => " / ",
                Gene::And => " and ",
                Gene::Or => " or ",
                Gene::Gt => " > ",
                Gene::Lt => " < ",
                _ => unreachable!(),
            };
            let need = min_prec > prec;
            if need {
                out.push('(');
            }
            fmt_rec(tree, c[0], prec, out);
            out.push_str(op);
            // Right operand gets prec+1 so equal-precedence chains stay
            // left-associative after a round trip.
            fmt_rec(tree, c[1], prec + 1, out);
            if need {
                out.push(')');
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Gt,
    Lt,
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, usize)>> {
        let mut out = Vec::new();
        while self.pos < self.src.len() {
            let start = self.pos;
            let b = self.src[self.pos];
            match b {
                b' ' | b'\t' => {
                    self.pos += 1;
                    continue;
                }
                b'+' => out.push((Tok::Plus, start)),
                b'-' => out.push((Tok::Minus, start)),
                b'*' => out.push((Tok::Star, start)),
                b'/' => out.push((Tok::Slash, start)),
                b'>' => out.push((Tok::Gt, start)),
                b'<' => out.push((Tok::Lt, start)),
                b'(' => out.push((Tok::LParen, start)),
                b')' => out.push((Tok::RParen, start)),
                b',' => out.push((Tok::Comma, start)),
                b'0'..=b'9' | b'.' => {
                    let tok = self.lex_number(start)?;
                    out.push((tok, start));
                    continue;
                }
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    while self.pos < self.src.len()
                        && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                    {
                        self.pos += 1;
                    }
                    let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                    out.push((Tok::Ident(s.to_string()), start));
                    continue;
                }
                _ => {
                    return Err(Error::Parse {
                        pos: start,
                        msg: format!("unexpected character {:?}", b as char),
                    })
                }
            }
            self.pos += 1;
        }
        Ok(out)
    }

    fn lex_number(&mut self, start: usize) -> Result<Tok> {
        while self.pos < self.src.len() {
            let b = self.src[self.pos];
            if b.is_ascii_digit() || b == b'.' {
                self.pos += 1;
            } else if b == b'e' || b == b'E' {
                // exponent, possibly signed
                self.pos += 1;
                if self.pos < self.src.len()
                    && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-')
                {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        s.parse::<f64>().map(Tok::Num).map_err(|_| Error::Parse {
            pos: start,
            msg: format!("bad number literal {s:?}"),
        })
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    end: usize,
    builder: TreeBuilder,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(t, _)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.idx).map(|&(_, p)| p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|(t, _)| t.clone());
        self.idx += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<()> {
        let pos = self.pos();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            other => Err(Error::Parse {
                pos,
                msg: format!("expected {want:?}, found {other:?}"),
            }),
        }
    }

    fn add(&mut self, pos: usize, gene: Gene, children: &[u32]) -> Result<u32> {
        self.builder.add(gene, children).map_err(|e| match e {
            Error::Type { msg, .. } => Error::Type { pos, msg },
            other => other,
        })
    }

    fn require_ty(&self, id: u32, want: Ty, pos: usize, ctx: &str) -> Result<()> {
        let got = self.builder.nodes[id as usize].gene.ty();
        if got != want {
            return Err(Error::Type {
                pos,
                msg: format!("{ctx} must be {want:?}, found {got:?}"),
            });
        }
        Ok(())
    }

    // expr := or
    fn expr(&mut self) -> Result<u32> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<u32> {
        let mut lhs = self.and_expr()?;
        while matches!(self.peek(), Some(Tok::Ident(s)) if s == "or") {
            let pos = self.pos();
            self.bump();
            let rhs = self.and_expr()?;
            lhs = self.add(pos, Gene::Or, &[lhs, rhs])?;
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<u32> {
        let mut lhs = self.cmp_expr()?;
        while matches!(self.peek(), Some(Tok::Ident(s)) if s == "and") {
            let pos = self.pos();
            self.bump();
            let rhs = self.cmp_expr()?;
            lhs = self.add(pos, Gene::And, &[lhs, rhs])?;
        }
        Ok(lhs)
    }

    fn cmp_expr(&mut self) -> Result<u32> {
        let lhs = self.add_expr()?;
        match self.peek() {
            Some(Tok::Gt) | Some(Tok::Lt) => {
                let pos = self.pos();
                let gene = if self.bump() == Some(Tok::Gt) {
                    Gene::Gt
                } else {
                    Gene::Lt
                };
                let rhs = self.add_expr()?;
                self.add(pos, gene, &[lhs, rhs])
            }
            _ => Ok(lhs),
        }
    }

    fn add_expr(&mut self) -> Result<u32> {
        let mut lhs = self.mul_expr()?;
        loop {
            let gene = match self.peek() {
                Some(Tok::Plus) => Gene::Add,
                Some(Tok::Minus) => Gene::Sub,
                _ => break,
            };
            let pos = self.pos();
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = self.add(pos, gene, &[lhs, rhs])?;
        }
        Ok(lhs)
    }

    fn mul_expr(&mut self) -> Result<u32> {
        let mut lhs = self.unary_expr()?;
        loop {
            let gene = match self.peek() {
                Some(Tok::Star) => Gene::Mul,
                Some(Tok::Slash) => Gene::Div,
                _ => break,
            };
            let pos = self.pos();
            self.bump();
            let rhs = self.unary_expr()?;
            lhs = self.add(pos, gene, &[lhs, rhs])?;
        }
        Ok(lhs)
    }

    fn unary_expr(&mut self) -> Result<u32> {
        if self.peek() == Some(&Tok::Minus) {
            let pos = self.pos();
            self.bump();
            let inner = self.unary_expr()?;
            // Negated literals fold directly; anything else becomes 0 - e.
            if let Gene::Const(v) = self.builder.nodes[inner as usize].gene {
                self.builder.nodes[inner as usize].gene = Gene::Const(-v);
                return Ok(inner);
            }
            self.require_ty(inner, Ty::Float, pos, "operand of unary minus")?;
            let zero = self.add(pos, Gene::Const(0.0), &[])?;
            return self.add(pos, Gene::Sub, &[zero, inner]);
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<u32> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Num(v)) => self.add(pos, Gene::Const(v), &[]),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "true" => self.add(pos, Gene::BoolConst(true), &[]),
                "false" => self.add(pos, Gene::BoolConst(false), &[]),
                "tanh" | "abs" => {
                    self.expect(Tok::LParen)?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen)?;
                    let gene = if name == "tanh" { Gene::Tanh } else { Gene::Abs };
                    self.add(pos, gene, &[arg])
                }
                "if" => {
                    self.expect(Tok::LParen)?;
                    let cond = self.expr()?;
                    self.expect(Tok::Comma)?;
                    let a = self.expr()?;
                    self.expect(Tok::Comma)?;
                    let b = self.expr()?;
                    self.expect(Tok::RParen)?;
                    self.add(pos, Gene::If, &[cond, a, b])
                }
                _ => {
                    if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok())
                    {
                        self.add(pos, Gene::Var(idx), &[])
                    } else {
                        Err(Error::Parse {
                            pos,
                            msg: format!("unknown identifier {name:?}"),
                        })
                    }
                }
            },
            other => Err(Error::Parse {
                pos,
                msg: format!("expected expression, found {other:?}"),
            }),
        }
    }
}

/// Parses one infix expression into a typed tree.
pub fn parse_tree(src: &str) -> Result<ExpressionTree> {
    let toks = Lexer::new(src).tokens()?;
    let mut p = Parser {
        toks,
        idx: 0,
        end: src.len(),
        builder: TreeBuilder::new(),
    };
    let root = p.expr()?;
    if p.idx != p.toks.len() {
        return Err(Error::Parse {
            pos: p.pos(),
            msg: "trailing input after expression".to_string(),
        });
    }
    let pos = p.end;
    p.builder.finish(root).map_err(|e| match e {
        Error::Type { msg, .. } => Error::Type { pos, msg },
        other => other,
    })
}
