//! Recursive-descent parser producing [`super::ast`] nodes.

use super::ast::*;
use super::lexer::{tokenize, LexError, Tok, Token};
use std::sync::Arc;

pub type ParseError = LexError;

pub fn parse_module(src: &str) -> Result<Vec<Stmt>, ParseError> {
    let lexed = tokenize(src)?;
    let mut p = P { toks: lexed.toks, pos: 0 };
    let mut out = Vec::new();
    let mut body = || {
        while !p.at(&Tok::Eof) {
            if p.eat(&Tok::Newline) {
                continue;
            }
            out.extend(p.statement()?);
        }
        Ok(())
    };
    let res = body();
    match (res, lexed.unclosed) {
        // an open bracket only matters when parsing ran off the end
        (Err(_), Some((op, line))) if p.at(&Tok::Eof) => {
            Err(LexError { kind: "SyntaxError", message: format!("'{op}' was never closed"), line })
        }
        (Ok(()), Some((op, line))) => {
            Err(LexError { kind: "SyntaxError", message: format!("'{op}' was never closed"), line })
        }
        (Err(e), _) => Err(e),
        (Ok(()), None) => Ok(out),
    }
}

fn parse_expr_src(src: &str, line: usize) -> Result<Expr, ParseError> {
    let toks = tokenize(src.trim())
        .map_err(|mut e| {
            e.line = line;
            e
        })?
        .toks;
    let mut p = P { toks, pos: 0 };
    let e = p.testlist_star()?;
    p.eat(&Tok::Newline);
    if !p.at(&Tok::Eof) {
        return Err(p.err("f-string: invalid syntax"));
    }
    Ok(e)
}

struct P {
    toks: Vec<Token>,
    pos: usize,
}

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "break", "class", "continue", "def", "del", "elif", "else",
    "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal", "not", "or",
    "pass", "raise", "return", "try", "while", "with", "yield",
];

impl P {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, off: usize) -> &Tok {
        let i = (self.pos + off).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn line(&self) -> usize {
        self.toks[self.pos].line
    }

    fn at(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn at_op(&self, op: &str) -> bool {
        matches!(self.peek(), Tok::Op(o) if *o == op)
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Name(n) if n == kw)
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.at(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.at_op(op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn err(&self, msg: &str) -> ParseError {
        self.err_kind("SyntaxError", msg)
    }

    fn err_kind(&self, kind: &'static str, msg: &str) -> ParseError {
        LexError { kind, message: msg.to_string(), line: self.line() }
    }

    fn expect_op(&mut self, op: &str) -> Result<(), ParseError> {
        if self.eat_op(op) {
            Ok(())
        } else if op == ":" {
            Err(self.err("expected ':'"))
        } else {
            Err(self.err("invalid syntax"))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.err("invalid syntax"))
        }
    }

    fn name(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Name(n) if !KEYWORDS.contains(&n.as_str()) => {
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.err("invalid syntax")),
        }
    }

    fn dotted_name(&mut self) -> Result<String, ParseError> {
        let mut n = self.name()?;
        while self.eat_op(".") {
            n.push('.');
            n.push_str(&self.name()?);
        }
        Ok(n)
    }

    // ---------------------------------------------------------------- statements

    fn statement(&mut self) -> Result<Vec<Stmt>, ParseError> {
        if self.at(&Tok::Indent) {
            return Err(self.err_kind("IndentationError", "unexpected indent"));
        }
        let line = self.line();
        let kind = match self.peek() {
            Tok::Name(n) => match n.as_str() {
                "if" => Some(self.if_stmt()?),
                "while" => Some(self.while_stmt()?),
                "for" => Some(self.for_stmt()?),
                "def" => Some(self.def_stmt(Vec::new())?),
                "try" => Some(self.try_stmt()?),
                "with" => Some(self.with_stmt()?),
                "class" => Some(self.class_stmt()?),
                _ => None,
            },
            Tok::Op("@") => {
                let mut decorators = Vec::new();
                while self.eat_op("@") {
                    decorators.push(self.test()?);
                    if !self.eat(&Tok::Newline) {
                        return Err(self.err("invalid syntax"));
                    }
                }
                if self.at_kw("class") {
                    Some(self.class_stmt()?)
                } else if self.at_kw("def") {
                    Some(self.def_stmt(decorators)?)
                } else {
                    return Err(self.err("invalid syntax"));
                }
            }
            _ => None,
        };
        match kind {
            Some(kind) => Ok(vec![Stmt { line, kind }]),
            None => self.simple_stmts(),
        }
    }

    fn simple_stmts(&mut self) -> Result<Vec<Stmt>, ParseError> {
        let mut out = Vec::new();
        loop {
            let line = self.line();
            let kind = self.small_stmt()?;
            out.push(Stmt { line, kind });
            if self.eat_op(";") {
                if self.at(&Tok::Newline) {
                    break;
                }
                continue;
            }
            break;
        }
        if !self.eat(&Tok::Newline) && !self.at(&Tok::Eof) {
            return Err(self.err("invalid syntax"));
        }
        Ok(out)
    }

    fn small_stmt(&mut self) -> Result<StmtKind, ParseError> {
        if let Tok::Name(n) = self.peek().clone() {
            match n.as_str() {
                "pass" => {
                    self.pos += 1;
                    return Ok(StmtKind::Pass);
                }
                "break" => {
                    self.pos += 1;
                    return Ok(StmtKind::Break);
                }
                "continue" => {
                    self.pos += 1;
                    return Ok(StmtKind::Continue);
                }
                "return" => {
                    self.pos += 1;
                    if self.at(&Tok::Newline) || self.at_op(";") || self.at(&Tok::Eof) {
                        return Ok(StmtKind::Return(None));
                    }
                    return Ok(StmtKind::Return(Some(self.testlist_star()?)));
                }
                "raise" => {
                    self.pos += 1;
                    if self.at(&Tok::Newline) || self.at_op(";") || self.at(&Tok::Eof) {
                        return Ok(StmtKind::Raise(None));
                    }
                    let e = self.test()?;
                    if self.eat_kw("from") {
                        self.test()?;
                    }
                    return Ok(StmtKind::Raise(Some(e)));
                }
                "del" => {
                    self.pos += 1;
                    let mut targets = vec![self.expr()?];
                    while self.eat_op(",") {
                        targets.push(self.expr()?);
                    }
                    return Ok(StmtKind::Del(targets));
                }
                "global" | "nonlocal" => {
                    self.pos += 1;
                    let mut names = vec![self.name()?];
                    while self.eat_op(",") {
                        names.push(self.name()?);
                    }
                    return Ok(if n == "global" { StmtKind::Global(names) } else { StmtKind::Nonlocal(names) });
                }
                "assert" => {
                    self.pos += 1;
                    let cond = self.test()?;
                    let msg = if self.eat_op(",") { Some(self.test()?) } else { None };
                    return Ok(StmtKind::Assert(cond, msg));
                }
                "import" => {
                    self.pos += 1;
                    let mut items = Vec::new();
                    loop {
                        let m = self.dotted_name()?;
                        let alias = if self.eat_kw("as") { Some(self.name()?) } else { None };
                        items.push((m, alias));
                        if !self.eat_op(",") {
                            break;
                        }
                    }
                    return Ok(StmtKind::Import(items));
                }
                "from" => {
                    self.pos += 1;
                    let m = self.dotted_name()?;
                    self.expect_kw("import")?;
                    let mut items = Vec::new();
                    if self.eat_op("*") {
                        items.push(("*".to_string(), None));
                    } else {
                        let paren = self.eat_op("(");
                        loop {
                            let n = self.name()?;
                            let alias = if self.eat_kw("as") { Some(self.name()?) } else { None };
                            items.push((n, alias));
                            if !self.eat_op(",") {
                                break;
                            }
                            if paren && self.at_op(")") {
                                break;
                            }
                        }
                        if paren {
                            self.expect_op(")")?;
                        }
                    }
                    return Ok(StmtKind::FromImport(m, items));
                }
                _ => {}
            }
        }
        // expression statement / assignment
        let first = self.testlist_star()?;
        for (op, bop) in [
            ("+=", BinOp::Add),
            ("-=", BinOp::Sub),
            ("*=", BinOp::Mul),
            ("/=", BinOp::Div),
            ("//=", BinOp::FloorDiv),
            ("%=", BinOp::Mod),
            ("**=", BinOp::Pow),
            ("&=", BinOp::BitAnd),
            ("|=", BinOp::BitOr),
            ("^=", BinOp::BitXor),
            ("<<=", BinOp::Shl),
            (">>=", BinOp::Shr),
        ] {
            if self.eat_op(op) {
                check_target(&first, self)?;
                let value = self.testlist_star()?;
                return Ok(StmtKind::AugAssign(first, bop, value));
            }
        }
        if self.at_op(":") {
            // annotated assignment: `x: int = 3`
            self.pos += 1;
            self.test()?;
            if self.eat_op("=") {
                check_target(&first, self)?;
                let value = self.testlist_star()?;
                return Ok(StmtKind::Assign(vec![first], value));
            }
            return Ok(StmtKind::Pass);
        }
        if self.at_op("=") {
            let mut targets = vec![first];
            let mut value;
            loop {
                self.expect_op("=")?;
                value = self.testlist_star()?;
                if self.at_op("=") {
                    targets.push(value);
                } else {
                    break;
                }
            }
            for t in &targets {
                check_target(t, self)?;
            }
            return Ok(StmtKind::Assign(targets, value));
        }
        Ok(StmtKind::Expr(first))
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect_op(":")?;
        if self.eat(&Tok::Newline) {
            if !self.eat(&Tok::Indent) {
                return Err(self.err_kind("IndentationError", "expected an indented block"));
            }
            let mut body = Vec::new();
            while !self.eat(&Tok::Dedent) {
                if self.at(&Tok::Eof) {
                    break;
                }
                if self.eat(&Tok::Newline) {
                    continue;
                }
                body.extend(self.statement()?);
            }
            Ok(body)
        } else {
            self.simple_stmts()
        }
    }

    fn if_stmt(&mut self) -> Result<StmtKind, ParseError> {
        self.expect_kw("if")?;
        let mut branches = vec![(self.named_test()?, self.block()?)];
        let mut orelse = None;
        loop {
            if self.eat_kw("elif") {
                branches.push((self.named_test()?, self.block()?));
            } else if self.eat_kw("else") {
                orelse = Some(self.block()?);
                break;
            } else {
                break;
            }
        }
        Ok(StmtKind::If(branches, orelse))
    }

    fn while_stmt(&mut self) -> Result<StmtKind, ParseError> {
        self.expect_kw("while")?;
        let cond = self.named_test()?;
        let body = self.block()?;
        let orelse = if self.eat_kw("else") { Some(self.block()?) } else { None };
        Ok(StmtKind::While(cond, body, orelse))
    }

    fn for_stmt(&mut self) -> Result<StmtKind, ParseError> {
        self.expect_kw("for")?;
        let target = self.exprlist()?;
        check_target(&target, self)?;
        self.expect_kw("in")?;
        let iter = self.testlist_star()?;
        let body = self.block()?;
        let orelse = if self.eat_kw("else") { Some(self.block()?) } else { None };
        Ok(StmtKind::For(target, iter, body, orelse))
    }

    fn try_stmt(&mut self) -> Result<StmtKind, ParseError> {
        self.expect_kw("try")?;
        let body = self.block()?;
        let mut handlers = Vec::new();
        while self.eat_kw("except") {
            let types = if self.at_op(":") { None } else { Some(self.test()?) };
            let name = if self.eat_kw("as") { Some(self.name()?) } else { None };
            let hb = self.block()?;
            handlers.push(Handler { types, name, body: hb });
        }
        let orelse = if self.eat_kw("else") { Some(self.block()?) } else { None };
        let finally = if self.eat_kw("finally") { Some(self.block()?) } else { None };
        if handlers.is_empty() && finally.is_none() {
            return Err(self.err("expected 'except' or 'finally' block"));
        }
        Ok(StmtKind::Try { body, handlers, orelse, finally })
    }

    fn with_stmt(&mut self) -> Result<StmtKind, ParseError> {
        self.expect_kw("with")?;
        let ctx = self.test()?;
        if self.eat_kw("as") {
            self.expr()?;
        }
        self.block()?;
        Ok(StmtKind::With(ctx))
    }

    fn class_stmt(&mut self) -> Result<StmtKind, ParseError> {
        self.expect_kw("class")?;
        let name = self.name()?;
        if self.eat_op("(") {
            while !self.eat_op(")") {
                self.pos += 1;
                if self.at(&Tok::Eof) {
                    return Err(self.err("invalid syntax"));
                }
            }
        }
        self.block()?;
        Ok(StmtKind::Class(name))
    }

    fn def_stmt(&mut self, decorators: Vec<Expr>) -> Result<StmtKind, ParseError> {
        self.expect_kw("def")?;
        let name = self.name()?;
        self.expect_op("(")?;
        let params = self.params(")")?;
        self.expect_op(")")?;
        if self.eat_op("->") {
            self.test()?;
        }
        let body = self.block()?;
        Ok(StmtKind::Def(FuncDef { name, params: Arc::new(params), body: Arc::new(body), decorators }))
    }

    fn params(&mut self, close: &str) -> Result<Vec<Param>, ParseError> {
        let mut params: Vec<Param> = Vec::new();
        while !self.at_op(close) {
            let star = self.eat_op("*");
            let starstar = !star && self.eat_op("**");
            if star && (self.at_op(",") || self.at_op(close)) {
                // bare `*` separator for keyword-only parameters
                if !self.eat_op(",") {
                    break;
                }
                continue;
            }
            if self.at_op("/") {
                self.pos += 1;
                if !self.eat_op(",") {
                    break;
                }
                continue;
            }
            let name = self.name()?;
            if close == ")" && self.eat_op(":") {
                self.test()?;
            }
            let default = if self.eat_op("=") { Some(self.test()?) } else { None };
            if default.is_none()
                && !star
                && !starstar
                && params.iter().any(|p| p.default.is_some() && !p.star && !p.starstar)
                && !params.iter().any(|p| p.star)
            {
                return Err(self.err("non-default argument follows default argument"));
            }
            params.push(Param { name, default, star, starstar });
            if !self.eat_op(",") {
                break;
            }
        }
        Ok(params)
    }

    // ---------------------------------------------------------------- expressions

    /// Comma-separated expressions, possibly starred; a bare comma makes a tuple.
    fn testlist_star(&mut self) -> Result<Expr, ParseError> {
        let first = self.star_or_test()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.ends_list() {
                break;
            }
            items.push(self.star_or_test()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn ends_list(&self) -> bool {
        matches!(self.peek(), Tok::Newline | Tok::Eof)
            || self.at_op("=")
            || self.at_op(")")
            || self.at_op("]")
            || self.at_op("}")
            || self.at_op(";")
            || self.at_op(":")
            || matches!(self.peek(), Tok::Op(o) if o.ends_with('=') && *o != "==" && *o != "!=" && *o != "<=" && *o != ">=")
    }

    fn star_or_test(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op("*") {
            return Ok(Expr::Starred(Box::new(self.expr()?)));
        }
        self.test()
    }

    fn exprlist(&mut self) -> Result<Expr, ParseError> {
        let first = self.star_or_expr()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.at_kw("in") || self.at_op("=") {
                break;
            }
            items.push(self.star_or_expr()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn star_or_expr(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op("*") {
            return Ok(Expr::Starred(Box::new(self.expr()?)));
        }
        self.expr()
    }

    fn named_test(&mut self) -> Result<Expr, ParseError> {
        if let (Tok::Name(n), Tok::Op(":=")) = (self.peek().clone(), self.peek_at(1).clone()) {
            self.pos += 2;
            let v = self.test()?;
            return Ok(Expr::Walrus(n, Box::new(v)));
        }
        self.test()
    }

    fn test(&mut self) -> Result<Expr, ParseError> {
        if self.eat_kw("lambda") {
            let params = self.params(":")?;
            self.expect_op(":")?;
            let body = self.test()?;
            return Ok(Expr::Lambda(Arc::new(params), Arc::new(body)));
        }
        let cond = self.or_test()?;
        if self.at_kw("if") {
            // a comprehension `if` is not consumed here because comprehension
            // bodies parse via or_test for their conditions
            self.pos += 1;
            let test = self.or_test()?;
            self.expect_kw("else")?;
            let other = self.test()?;
            return Ok(Expr::IfExp(Box::new(test), Box::new(cond), Box::new(other)));
        }
        Ok(cond)
    }

    fn or_test(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.and_test()?;
        while self.eat_kw("or") {
            let right = self.and_test()?;
            left = Expr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and_test(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.not_test()?;
        while self.eat_kw("and") {
            let right = self.not_test()?;
            left = Expr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn not_test(&mut self) -> Result<Expr, ParseError> {
        if self.eat_kw("not") {
            let e = self.not_test()?;
            return Ok(Expr::Unary(UnOp::Not, Box::new(e)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let first = self.expr()?;
        let mut rest = Vec::new();
        loop {
            let op = match self.peek() {
                Tok::Op("<") => CmpOp::Lt,
                Tok::Op("<=") => CmpOp::Le,
                Tok::Op(">") => CmpOp::Gt,
                Tok::Op(">=") => CmpOp::Ge,
                Tok::Op("==") => CmpOp::Eq,
                Tok::Op("!=") => CmpOp::Ne,
                Tok::Name(n) if n == "in" => CmpOp::In,
                Tok::Name(n) if n == "is" => {
                    if matches!(self.peek_at(1), Tok::Name(m) if m == "not") {
                        self.pos += 1;
                        CmpOp::IsNot
                    } else {
                        CmpOp::Is
                    }
                }
                Tok::Name(n) if n == "not" && matches!(self.peek_at(1), Tok::Name(m) if m == "in") => {
                    self.pos += 1;
                    CmpOp::NotIn
                }
                _ => break,
            };
            self.pos += 1;
            rest.push((op, self.expr()?));
        }
        if rest.is_empty() {
            Ok(first)
        } else {
            Ok(Expr::Cmp(Box::new(first), rest))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> Result<Expr, ParseError> {
        const LEVELS: &[&[(&str, BinOp)]] = &[
            &[("|", BinOp::BitOr)],
            &[("^", BinOp::BitXor)],
            &[("&", BinOp::BitAnd)],
            &[("<<", BinOp::Shl), (">>", BinOp::Shr)],
            &[("+", BinOp::Add), ("-", BinOp::Sub)],
            &[("*", BinOp::Mul), ("/", BinOp::Div), ("//", BinOp::FloorDiv), ("%", BinOp::Mod)],
        ];
        if level == LEVELS.len() {
            return self.factor();
        }
        let mut left = self.binary(level + 1)?;
        'outer: loop {
            for (sym, op) in LEVELS[level] {
                if self.eat_op(sym) {
                    let right = self.binary(level + 1)?;
                    left = Expr::Bin(*op, Box::new(left), Box::new(right));
                    continue 'outer;
                }
            }
            break;
        }
        Ok(left)
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op("-") {
            return Ok(Expr::Unary(UnOp::Neg, Box::new(self.factor()?)));
        }
        if self.eat_op("+") {
            return Ok(Expr::Unary(UnOp::Pos, Box::new(self.factor()?)));
        }
        if self.eat_op("~") {
            return Ok(Expr::Unary(UnOp::Invert, Box::new(self.factor()?)));
        }
        let base = self.atom_expr()?;
        if self.eat_op("**") {
            let exp = self.factor()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom_expr(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.atom()?;
        loop {
            if self.eat_op("(") {
                let args = self.call_args()?;
                e = Expr::Call(Box::new(e), args);
            } else if self.eat_op("[") {
                let idx = self.subscript()?;
                self.expect_op("]")?;
                e = Expr::Index(Box::new(e), Box::new(idx));
            } else if self.eat_op(".") {
                let n = match self.peek().clone() {
                    Tok::Name(n) => {
                        self.pos += 1;
                        n
                    }
                    _ => return Err(self.err("invalid syntax")),
                };
                e = Expr::Attr(Box::new(e), n);
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn subscript(&mut self) -> Result<Expr, ParseError> {
        let first = self.slice_item()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.at_op("]") {
                break;
            }
            items.push(self.slice_item()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn slice_item(&mut self) -> Result<Expr, ParseError> {
        let lower = if self.at_op(":") { None } else { Some(Box::new(self.test()?)) };
        if !self.eat_op(":") {
            return Ok(*lower.unwrap());
        }
        let upper =
            if self.at_op(":") || self.at_op("]") || self.at_op(",") { None } else { Some(Box::new(self.test()?)) };
        let step =
            if self.eat_op(":") && !self.at_op("]") && !self.at_op(",") { Some(Box::new(self.test()?)) } else { None };
        Ok(Expr::Slice(lower, upper, step))
    }

    fn call_args(&mut self) -> Result<Vec<Arg>, ParseError> {
        let mut args = Vec::new();
        while !self.eat_op(")") {
            if self.eat_op("*") {
                args.push(Arg::Star(self.test()?));
            } else if self.eat_op("**") {
                args.push(Arg::StarStar(self.test()?));
            } else if let (Tok::Name(n), Tok::Op("=")) = (self.peek().clone(), self.peek_at(1).clone()) {
                self.pos += 2;
                args.push(Arg::Kw(n, self.test()?));
            } else {
                let e = self.named_test()?;
                if self.at_kw("for") {
                    let gens = self.comp_for()?;
                    args.push(Arg::Pos(Expr::ListComp(Box::new(e), gens)));
                } else {
                    args.push(Arg::Pos(e));
                }
            }
            if !self.eat_op(",") {
                self.expect_op(")")?;
                break;
            }
        }
        Ok(args)
    }

    fn comp_for(&mut self) -> Result<Vec<Comprehension>, ParseError> {
        let mut gens = Vec::new();
        while self.eat_kw("for") {
            let target = self.exprlist()?;
            check_target(&target, self)?;
            self.expect_kw("in")?;
            let iter = self.or_test()?;
            let mut conds = Vec::new();
            while self.eat_kw("if") {
                conds.push(self.or_test()?);
            }
            gens.push(Comprehension { target, iter, conds });
        }
        Ok(gens)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let line = self.line();
        let tok = self.peek().clone();
        match tok {
            Tok::Int(v) => {
                self.pos += 1;
                Ok(Expr::Int(v))
            }
            Tok::Float(v) => {
                self.pos += 1;
                Ok(Expr::Float(v))
            }
            Tok::Str(_) | Tok::FStr(_) => {
                let mut parts: Vec<FPart> = Vec::new();
                let mut any_f = false;
                loop {
                    match self.peek().clone() {
                        Tok::Str(s) => {
                            self.pos += 1;
                            parts.push(FPart::Lit(s));
                        }
                        Tok::FStr(s) => {
                            self.pos += 1;
                            any_f = true;
                            parts.extend(parse_fstring(&s, line)?);
                        }
                        _ => break,
                    }
                }
                if any_f {
                    Ok(Expr::FStr(parts))
                } else {
                    let s = parts
                        .into_iter()
                        .map(|p| match p {
                            FPart::Lit(s) => s,
                            FPart::Expr { .. } => unreachable!(),
                        })
                        .collect();
                    Ok(Expr::Str(s))
                }
            }
            Tok::Name(n) => {
                self.pos += 1;
                match n.as_str() {
                    "None" => Ok(Expr::None),
                    "True" => Ok(Expr::Bool(true)),
                    "False" => Ok(Expr::Bool(false)),
                    _ if KEYWORDS.contains(&n.as_str()) => {
                        self.pos -= 1;
                        Err(self.err("invalid syntax"))
                    }
                    _ => Ok(Expr::Name(n)),
                }
            }
            Tok::Op("(") => {
                self.pos += 1;
                if self.eat_op(")") {
                    return Ok(Expr::Tuple(Vec::new()));
                }
                let first = if self.at_kw("yield") {
                    return Err(self.err("generators are not supported"));
                } else {
                    self.star_or_named()?
                };
                if self.at_kw("for") {
                    let gens = self.comp_for()?;
                    self.expect_op(")")?;
                    return Ok(Expr::ListComp(Box::new(first), gens));
                }
                if self.eat_op(")") {
                    return Ok(first);
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op(")") {
                        break;
                    }
                    items.push(self.star_or_named()?);
                }
                self.expect_op(")")?;
                Ok(Expr::Tuple(items))
            }
            Tok::Op("[") => {
                self.pos += 1;
                if self.eat_op("]") {
                    return Ok(Expr::List(Vec::new()));
                }
                let first = self.star_or_named()?;
                if self.at_kw("for") {
                    let gens = self.comp_for()?;
                    self.expect_op("]")?;
                    return Ok(Expr::ListComp(Box::new(first), gens));
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op("]") {
                        break;
                    }
                    items.push(self.star_or_named()?);
                }
                self.expect_op("]")?;
                Ok(Expr::List(items))
            }
            Tok::Op("{") => {
                self.pos += 1;
                if self.eat_op("}") {
                    return Ok(Expr::Dict(Vec::new()));
                }
                let first = self.star_or_test()?;
                if self.eat_op(":") {
                    let v = self.test()?;
                    if self.at_kw("for") {
                        let gens = self.comp_for()?;
                        self.expect_op("}")?;
                        return Ok(Expr::DictComp(Box::new(first), Box::new(v), gens));
                    }
                    let mut items = vec![(first, v)];
                    while self.eat_op(",") {
                        if self.at_op("}") {
                            break;
                        }
                        let k = self.test()?;
                        self.expect_op(":")?;
                        items.push((k, self.test()?));
                    }
                    self.expect_op("}")?;
                    return Ok(Expr::Dict(items));
                }
                if self.at_kw("for") {
                    let gens = self.comp_for()?;
                    self.expect_op("}")?;
                    return Ok(Expr::SetComp(Box::new(first), gens));
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op("}") {
                        break;
                    }
                    items.push(self.star_or_test()?);
                }
                self.expect_op("}")?;
                Ok(Expr::Set(items))
            }
            Tok::Op("...") => Err(self.err("invalid syntax")),
            _ => Err(self.err("invalid syntax")),
        }
    }

    fn star_or_named(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op("*") {
            return Ok(Expr::Starred(Box::new(self.expr()?)));
        }
        self.named_test()
    }
}

fn check_target(e: &Expr, p: &P) -> Result<(), ParseError> {
    match e {
        Expr::Name(_) | Expr::Index(..) | Expr::Attr(..) => Ok(()),
        Expr::Tuple(items) | Expr::List(items) => items.iter().try_for_each(|i| check_target(i, p)),
        Expr::Starred(inner) => check_target(inner, p),
        Expr::Call(..) => Err(p.err("cannot assign to function call")),
        Expr::Int(_) | Expr::Float(_) | Expr::Str(_) => Err(p.err("cannot assign to literal")),
        _ => Err(p.err("invalid syntax")),
    }
}

/// Splits an f-string body into literal and replacement-field parts.
fn parse_fstring(body: &str, line: usize) -> Result<Vec<FPart>, ParseError> {
    let chars: Vec<char> = body.chars().collect();
    let mut parts = Vec::new();
    let mut lit = String::new();
    let mut i = 0;
    let bad = |m: &str| LexError { kind: "SyntaxError", message: format!("f-string: {m}"), line };
    while i < chars.len() {
        let c = chars[i];
        if c == '{' {
            if chars.get(i + 1) == Some(&'{') {
                lit.push('{');
                i += 2;
                continue;
            }
            if !lit.is_empty() {
                parts.push(FPart::Lit(std::mem::take(&mut lit)));
            }
            // find the end of the expression part
            let mut depth = 0i32;
            let mut j = i + 1;
            let mut quote: Option<char> = None;
            let mut expr_end = None;
            let mut conv = None;
            while j < chars.len() {
                let d = chars[j];
                if let Some(q) = quote {
                    if d == q {
                        quote = None;
                    }
                } else if d == '\'' || d == '"' {
                    quote = Some(d);
                } else if matches!(d, '(' | '[' | '{') {
                    depth += 1;
                } else if matches!(d, ')' | ']') || (d == '}' && depth > 0) {
                    depth -= 1;
                } else if depth == 0 && (d == '}' || d == ':') {
                    expr_end = Some(j);
                    break;
                } else if depth == 0 && d == '!' && chars.get(j + 1) != Some(&'=') {
                    expr_end = Some(j);
                    conv = chars.get(j + 1).copied();
                    break;
                }
                j += 1;
            }
            let end = expr_end.ok_or_else(|| bad("expecting '}'"))?;
            let src: String = chars[i + 1..end].iter().collect();
            let (src, self_doc) = match src.trim_end().strip_suffix('=') {
                Some(s) if !s.ends_with(['=', '!', '<', '>']) => (s.to_string(), true),
                _ => (src, false),
            };
            if src.trim().is_empty() {
                return Err(bad("empty expression not allowed"));
            }
            let expr = parse_expr_src(&src, line)?;
            let mut k = end;
            if conv.is_some() {
                k += 2;
            }
            let mut spec = Vec::new();
            if chars.get(k) == Some(&':') {
                // the spec runs to the matching close brace and may nest fields
                let mut depth = 0;
                let start = k + 1;
                let mut m = start;
                while m < chars.len() {
                    match chars[m] {
                        '{' => depth += 1,
                        '}' if depth == 0 => break,
                        '}' => depth -= 1,
                        _ => {}
                    }
                    m += 1;
                }
                let spec_src: String = chars[start..m].iter().collect();
                spec = parse_fstring(&spec_src, line)?;
                k = m;
            }
            if chars.get(k) != Some(&'}') {
                return Err(bad("expecting '}'"));
            }
            if self_doc {
                parts.push(FPart::Lit(format!("{}=", src)));
            }
            let conversion = conv.or(if self_doc && spec.is_empty() { Some('r') } else { None });
            parts.push(FPart::Expr { expr, conversion, spec });
            i = k + 1;
        } else if c == '}' {
            if chars.get(i + 1) == Some(&'}') {
                lit.push('}');
                i += 2;
                continue;
            }
            return Err(bad("single '}' is not allowed"));
        } else {
            lit.push(c);
            i += 1;
        }
    }
    if !lit.is_empty() {
        parts.push(FPart::Lit(lit));
    }
    Ok(parts)
}
