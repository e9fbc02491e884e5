//! Tree-walking evaluator for the mock kernel.
//!
//! Module-level bindings persist across cells. Each cell runs against a
//! deadline; exceeding it aborts the cell and leaves whatever bindings the
//! cell had already made.

use super::ast::*;
use super::parser::parse_module;
use super::value::*;
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};
use parking_lot::Mutex;
use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

pub(crate) struct PyErr {
    pub kind: String,
    pub msg: String,
    pub value: Option<Value>,
    pub line: usize,
}

pub(crate) enum Ctrl {
    Exc(PyErr),
    Timeout,
    Exit(Value),
}

pub(crate) type R<T> = Result<T, Ctrl>;

pub(crate) fn raise<T>(kind: &str, msg: impl Into<String>) -> R<T> {
    Err(exc(kind, msg))
}

pub(crate) fn exc(kind: &str, msg: impl Into<String>) -> Ctrl {
    Ctrl::Exc(PyErr { kind: kind.to_string(), msg: msg.into(), value: None, line: 0 })
}

pub(crate) enum Flow {
    Normal,
    Break,
    Continue,
    Return(Value),
}

#[derive(Default)]
pub(crate) struct Frame {
    pub locals: Option<Scope>,
    pub closure: Vec<Scope>,
    pub globals_decl: HashSet<String>,
    pub nonlocal_decl: HashSet<String>,
}

impl Frame {
    fn child_scopes(&self) -> Vec<Scope> {
        let mut c = self.closure.clone();
        if let Some(l) = &self.locals {
            c.push(l.clone());
        }
        c
    }
}

/// How a cell ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellEnd {
    Ok,
    /// Parse failure; carries the diagnostic text.
    Syntax(String),
    /// Uncaught exception; carries the traceback text.
    Runtime(String),
    Timeout,
}

pub struct Interp {
    pub(crate) globals: Scope,
    pub(crate) stdout: String,
    pub(crate) stderr: String,
    pub(crate) stdin: Vec<char>,
    pub(crate) stdin_pos: usize,
    deadline: Option<Instant>,
    ticks: u32,
    depth: usize,
    pub(crate) recursion_limit: usize,
    line: usize,
    /// Output beyond this many bytes is dropped.
    pub(crate) out_ceiling: usize,
    handling: Vec<Value>,
}

impl Default for Interp {
    fn default() -> Self {
        Self::new()
    }
}

impl Interp {
    pub fn new() -> Self {
        let globals: Scope = Arc::new(Mutex::new(HashMap::new()));
        globals.lock().insert("__name__".into(), str_value("__main__"));
        Self {
            globals,
            stdout: String::new(),
            stderr: String::new(),
            stdin: Vec::new(),
            stdin_pos: 0,
            deadline: None,
            ticks: 0,
            depth: 0,
            recursion_limit: 1000,
            line: 0,
            out_ceiling: 1 << 20,
            handling: Vec::new(),
        }
    }

    pub fn set_stdin(&mut self, data: &str) {
        self.stdin = data.chars().collect();
        self.stdin_pos = 0;
    }

    pub fn take_output(&mut self) -> (String, String) {
        (std::mem::take(&mut self.stdout), std::mem::take(&mut self.stderr))
    }

    /// Executes one cell against the persistent module namespace.
    pub fn run_cell(&mut self, src: &str, deadline: Instant) -> CellEnd {
        self.deadline = Some(deadline);
        self.ticks = 0;
        self.depth = 0;
        self.handling.clear();
        let stmts = match parse_module(src) {
            Ok(s) => s,
            Err(e) => {
                let text_line = src.lines().nth(e.line.saturating_sub(1)).unwrap_or("").trim();
                return CellEnd::Syntax(format!(
                    "  File \"<cell>\", line {}\n    {}\n{}: {}",
                    e.line, text_line, e.kind, e.message
                ));
            }
        };
        let mut frame = Frame::default();
        match self.exec_block(&stmts, &mut frame) {
            Ok(_) => CellEnd::Ok,
            Err(Ctrl::Timeout) => CellEnd::Timeout,
            Err(Ctrl::Exit(code)) => match code {
                Value::None => CellEnd::Ok,
                Value::Int(0) | Value::Bool(false) => CellEnd::Ok,
                other => {
                    if !other.is_int() {
                        self.write_err(&format!("{}\n", py_str(&other)));
                    }
                    CellEnd::Runtime(format!(
                        "Traceback (most recent call last):\n  File \"<cell>\", line {}, in <module>\nSystemExit: {}",
                        self.line,
                        py_str(&other)
                    ))
                }
            },
            Err(Ctrl::Exc(e)) => {
                let line = if e.line > 0 { e.line } else { self.line };
                let summary = if e.msg.is_empty() { e.kind.clone() } else { format!("{}: {}", e.kind, e.msg) };
                CellEnd::Runtime(format!(
                    "Traceback (most recent call last):\n  File \"<cell>\", line {line}, in <module>\n{summary}"
                ))
            }
        }
    }

    pub(crate) fn tick(&mut self) -> R<()> {
        self.ticks = self.ticks.wrapping_add(1);
        if self.ticks.is_multiple_of(1024) {
            if let Some(d) = self.deadline {
                if Instant::now() >= d {
                    return Err(Ctrl::Timeout);
                }
            }
        }
        Ok(())
    }

    pub(crate) fn write_out(&mut self, s: &str) {
        if self.stdout.len() <= self.out_ceiling {
            self.stdout.push_str(s);
        }
    }

    pub(crate) fn write_err(&mut self, s: &str) {
        if self.stderr.len() <= self.out_ceiling {
            self.stderr.push_str(s);
        }
    }

    // ------------------------------------------------------------ statements

    pub(crate) fn exec_block(&mut self, stmts: &[Stmt], frame: &mut Frame) -> R<Flow> {
        for s in stmts {
            match self.exec(s, frame)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    fn exec(&mut self, stmt: &Stmt, frame: &mut Frame) -> R<Flow> {
        self.line = stmt.line;
        let r = self.exec_inner(stmt, frame);
        if let Err(Ctrl::Exc(e)) = &r {
            if e.line == 0 {
                let mut r = r;
                if let Err(Ctrl::Exc(e)) = &mut r {
                    e.line = stmt.line;
                }
                return r;
            }
        }
        r
    }

    fn exec_inner(&mut self, stmt: &Stmt, frame: &mut Frame) -> R<Flow> {
        match &stmt.kind {
            StmtKind::Expr(e) => {
                self.eval(e, frame)?;
            }
            StmtKind::Assign(targets, value) => {
                let v = self.eval(value, frame)?;
                for t in targets {
                    self.assign(t, v.clone(), frame)?;
                }
            }
            StmtKind::AugAssign(target, op, value) => self.aug_assign(target, *op, value, frame)?,
            StmtKind::If(branches, orelse) => {
                for (cond, body) in branches {
                    if self.eval(cond, frame)?.truthy() {
                        return self.exec_block(body, frame);
                    }
                }
                if let Some(body) = orelse {
                    return self.exec_block(body, frame);
                }
            }
            StmtKind::While(cond, body, orelse) => loop {
                self.tick()?;
                if !self.eval(cond, frame)?.truthy() {
                    if let Some(b) = orelse {
                        return self.exec_block(b, frame);
                    }
                    break;
                }
                match self.exec_block(body, frame)? {
                    Flow::Break => break,
                    Flow::Return(v) => return Ok(Flow::Return(v)),
                    _ => {}
                }
            },
            StmtKind::For(target, iter, body, orelse) => {
                let it = self.eval(iter, frame)?;
                let run = |this: &mut Self, item: Value, frame: &mut Frame| -> R<Option<Flow>> {
                    this.tick()?;
                    this.assign(target, item, frame)?;
                    match this.exec_block(body, frame)? {
                        Flow::Break => Ok(Some(Flow::Normal)),
                        Flow::Return(v) => Ok(Some(Flow::Return(v))),
                        _ => Ok(None),
                    }
                };
                if let Value::Range(start, stop, step) = it {
                    let n = range_len(start, stop, step);
                    for k in 0..n {
                        if let Some(f) = run(self, Value::Int(start + k * step), frame)? {
                            return Ok(f);
                        }
                    }
                } else {
                    for item in self.iterate(&it)? {
                        if let Some(f) = run(self, item, frame)? {
                            return Ok(f);
                        }
                    }
                }
                if let Some(b) = orelse {
                    return self.exec_block(b, frame);
                }
            }
            StmtKind::Break => return Ok(Flow::Break),
            StmtKind::Continue => return Ok(Flow::Continue),
            StmtKind::Pass => {}
            StmtKind::Def(def) => {
                let f = self.make_function(&def.name, &def.params, FuncBody::Block(def.body.clone()), frame)?;
                let mut v = f;
                for d in def.decorators.iter().rev() {
                    let dec = self.eval(d, frame)?;
                    v = self.call(&dec, vec![v], vec![])?;
                }
                self.store(&def.name, v, frame);
            }
            StmtKind::Class(name) => {
                return raise(
                    "NotImplementedError",
                    format!("class {name}: classes are not supported by the mock interpreter"),
                )
            }
            StmtKind::Return(e) => {
                let v = match e {
                    Some(e) => self.eval(e, frame)?,
                    None => Value::None,
                };
                return Ok(Flow::Return(v));
            }
            StmtKind::Del(targets) => {
                for t in targets {
                    self.delete(t, frame)?;
                }
            }
            StmtKind::Import(items) => {
                for (module, alias) in items {
                    let m = self.import(module)?;
                    let name = alias.clone().unwrap_or_else(|| module.split('.').next().unwrap().to_string());
                    self.store(&name, m, frame);
                }
            }
            StmtKind::FromImport(module, items) => {
                let m = self.import(module)?;
                let Value::Module(mname) = m else { unreachable!() };
                for (name, alias) in items {
                    if name == "*" {
                        for n in super::builtins::module_names(mname) {
                            let v = self.module_attr(mname, n)?;
                            self.store(n, v, frame);
                        }
                        continue;
                    }
                    let v = self
                        .module_attr(mname, name)
                        .map_err(|_| exc("ImportError", format!("cannot import name '{name}' from '{module}'")))?;
                    self.store(alias.as_ref().unwrap_or(name), v, frame);
                }
            }
            StmtKind::Raise(e) => {
                let Some(e) = e else {
                    return match self.handling.last() {
                        Some(v) => Err(self.exc_from_value(v.clone())?),
                        None => raise("RuntimeError", "No active exception to reraise"),
                    };
                };
                let v = self.eval(e, frame)?;
                return Err(self.exc_from_value(v)?);
            }
            StmtKind::Assert(cond, msg) => {
                if !self.eval(cond, frame)?.truthy() {
                    let m = match msg {
                        Some(m) => py_str(&self.eval(m, frame)?),
                        None => String::new(),
                    };
                    return raise("AssertionError", m);
                }
            }
            StmtKind::Global(names) => {
                frame.globals_decl.extend(names.iter().cloned());
            }
            StmtKind::Nonlocal(names) => {
                frame.nonlocal_decl.extend(names.iter().cloned());
            }
            StmtKind::Try { body, handlers, orelse, finally } => {
                let result = self.exec_try(body, handlers, orelse.as_deref(), frame);
                if let Some(fin) = finally {
                    match self.exec_block(fin, frame)? {
                        Flow::Normal => {}
                        other => return Ok(other),
                    }
                }
                return result;
            }
            StmtKind::With(ctx) => {
                self.eval(ctx, frame)?;
                return raise("NotImplementedError", "with statements are not supported by the mock interpreter");
            }
        }
        Ok(Flow::Normal)
    }

    fn exec_try(&mut self, body: &[Stmt], handlers: &[Handler], orelse: Option<&[Stmt]>, frame: &mut Frame) -> R<Flow> {
        match self.exec_block(body, frame) {
            Ok(Flow::Normal) => match orelse {
                Some(b) => self.exec_block(b, frame),
                None => Ok(Flow::Normal),
            },
            Ok(flow) => Ok(flow),
            Err(Ctrl::Exc(err)) => {
                for h in handlers {
                    let matched = match &h.types {
                        None => true,
                        Some(t) => {
                            let tv = self.eval(t, frame)?;
                            self.exc_matches(&err.kind, &tv)?
                        }
                    };
                    if matched {
                        let value = match &err.value {
                            Some(v) => v.clone(),
                            None => Value::Exc(Arc::new(ExcObj {
                                kind: err.kind.clone(),
                                args: if err.msg.is_empty() { vec![] } else { vec![str_value(err.msg.as_str())] },
                            })),
                        };
                        if let Some(n) = &h.name {
                            self.store(n, value.clone(), frame);
                        }
                        self.handling.push(value);
                        let r = self.exec_block(&h.body, frame);
                        self.handling.pop();
                        return r;
                    }
                }
                Err(Ctrl::Exc(err))
            }
            Err(other) => Err(other),
        }
    }

    fn exc_matches(&self, kind: &str, handler: &Value) -> R<bool> {
        match handler {
            Value::Type(t) => Ok(super::builtins::exc_is_subclass(kind, t)),
            Value::Tuple(items) => {
                for i in items.iter() {
                    if self.exc_matches(kind, i)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            _ => raise("TypeError", "catching classes that do not inherit from BaseException is not allowed"),
        }
    }

    pub(crate) fn exc_from_value(&mut self, v: Value) -> R<Ctrl> {
        match v {
            Value::Exc(e) if e.kind == "SystemExit" => Ok(Ctrl::Exit(e.args.first().cloned().unwrap_or(Value::None))),
            Value::Exc(e) => Ok(Ctrl::Exc(PyErr {
                kind: e.kind.clone(),
                msg: exc_message(&e),
                value: Some(Value::Exc(e.clone())),
                line: 0,
            })),
            Value::Type(t) if super::builtins::is_exception_type(&t) => {
                let obj = self.call(&Value::Type(t), vec![], vec![])?;
                self.exc_from_value(obj)
            }
            _ => raise("TypeError", "exceptions must derive from BaseException"),
        }
    }

    fn make_function(&mut self, name: &str, params: &Arc<Vec<Param>>, body: FuncBody, frame: &mut Frame) -> R<Value> {
        let mut defaults = Vec::with_capacity(params.len());
        for p in params.iter() {
            defaults.push(match &p.default {
                Some(d) => Some(self.eval(d, frame)?),
                None => None,
            });
        }
        Ok(Value::Func(Arc::new(Function {
            name: name.to_string(),
            params: params.clone(),
            defaults,
            body,
            closure: frame.child_scopes(),
        })))
    }

    // ------------------------------------------------------------ names

    pub(crate) fn lookup(&self, name: &str, frame: &Frame) -> R<Value> {
        if !frame.globals_decl.contains(name) {
            if let Some(l) = &frame.locals {
                if let Some(v) = l.lock().get(name) {
                    return Ok(v.clone());
                }
            }
            for s in frame.closure.iter().rev() {
                if let Some(v) = s.lock().get(name) {
                    return Ok(v.clone());
                }
            }
        }
        if let Some(v) = self.globals.lock().get(name) {
            return Ok(v.clone());
        }
        if let Some(v) = super::builtins::builtin(name) {
            return Ok(v);
        }
        raise("NameError", format!("name '{name}' is not defined"))
    }

    pub(crate) fn store(&mut self, name: &str, v: Value, frame: &mut Frame) {
        if frame.globals_decl.contains(name) {
            self.globals.lock().insert(name.to_string(), v);
            return;
        }
        if frame.nonlocal_decl.contains(name) {
            for s in frame.closure.iter().rev() {
                let mut g = s.lock();
                if g.contains_key(name) {
                    g.insert(name.to_string(), v);
                    return;
                }
            }
        }
        match &frame.locals {
            Some(l) => {
                l.lock().insert(name.to_string(), v);
            }
            None => {
                self.globals.lock().insert(name.to_string(), v);
            }
        }
    }

    fn delete(&mut self, target: &Expr, frame: &mut Frame) -> R<()> {
        match target {
            Expr::Name(n) => {
                let removed = match &frame.locals {
                    Some(l) if !frame.globals_decl.contains(n) => l.lock().remove(n),
                    _ => self.globals.lock().remove(n),
                };
                if removed.is_none() {
                    return raise("NameError", format!("name '{n}' is not defined"));
                }
                Ok(())
            }
            Expr::Index(obj, idx) => {
                let o = self.eval(obj, frame)?;
                match (&o, &**idx) {
                    (Value::List(l), Expr::Slice(a, b, c)) => {
                        let len = l.lock().len();
                        let (a, b, c) = self.slice_parts(a, b, c, frame)?;
                        let mut idxs = slice_indices(len, a, b, c)?;
                        idxs.sort_unstable();
                        let mut g = l.lock();
                        for i in idxs.into_iter().rev() {
                            g.remove(i);
                        }
                        Ok(())
                    }
                    (Value::List(l), _) => {
                        let i = self.eval(idx, frame)?;
                        let mut g = l.lock();
                        let k = norm_index(&i, g.len(), "list")?;
                        g.remove(k);
                        Ok(())
                    }
                    (Value::Dict(d), _) => {
                        let k = self.eval(idx, frame)?;
                        let key = k.key().map_err(|m| exc("TypeError", m))?;
                        if d.lock().shift_remove(&key).is_none() {
                            return Err(key_error(k));
                        }
                        Ok(())
                    }
                    _ => raise("TypeError", format!("'{}' object does not support item deletion", o.type_name())),
                }
            }
            Expr::Tuple(items) | Expr::List(items) => {
                for i in items {
                    self.delete(i, frame)?;
                }
                Ok(())
            }
            _ => raise("SyntaxError", "cannot delete expression"),
        }
    }

    pub(crate) fn assign(&mut self, target: &Expr, v: Value, frame: &mut Frame) -> R<()> {
        match target {
            Expr::Name(n) => {
                self.store(n, v, frame);
                Ok(())
            }
            Expr::Tuple(items) | Expr::List(items) => {
                let values = self.iterate(&v)?;
                let star = items.iter().position(|i| matches!(i, Expr::Starred(_)));
                match star {
                    None => {
                        if values.len() != items.len() {
                            return if values.len() > items.len() {
                                raise("ValueError", format!("too many values to unpack (expected {})", items.len()))
                            } else {
                                raise(
                                    "ValueError",
                                    format!(
                                        "not enough values to unpack (expected {}, got {})",
                                        items.len(),
                                        values.len()
                                    ),
                                )
                            };
                        }
                        for (t, v) in items.iter().zip(values) {
                            self.assign(t, v, frame)?;
                        }
                    }
                    Some(s) => {
                        let after = items.len() - s - 1;
                        if values.len() < items.len() - 1 {
                            return raise(
                                "ValueError",
                                format!(
                                    "not enough values to unpack (expected at least {}, got {})",
                                    items.len() - 1,
                                    values.len()
                                ),
                            );
                        }
                        let mid_end = values.len() - after;
                        for (t, v) in items[..s].iter().zip(values[..s].iter()) {
                            self.assign(t, v.clone(), frame)?;
                        }
                        let Expr::Starred(inner) = &items[s] else { unreachable!() };
                        self.assign(inner, list_value(values[s..mid_end].to_vec()), frame)?;
                        for (t, v) in items[s + 1..].iter().zip(values[mid_end..].iter()) {
                            self.assign(t, v.clone(), frame)?;
                        }
                    }
                }
                Ok(())
            }
            Expr::Index(obj, idx) => {
                let o = self.eval(obj, frame)?;
                if let Expr::Slice(a, b, c) = &**idx {
                    let (a, b, c) = self.slice_parts(a, b, c, frame)?;
                    let Value::List(l) = &o else {
                        return raise(
                            "TypeError",
                            format!("'{}' object does not support item assignment", o.type_name()),
                        );
                    };
                    let new_items = self.iterate(&v)?;
                    let mut g = l.lock();
                    let len = g.len();
                    if c.unwrap_or(1) == 1 {
                        let (start, stop) = simple_bounds(len, a, b);
                        let stop = stop.max(start);
                        g.splice(start..stop, new_items);
                    } else {
                        let idxs = slice_indices(len, a, b, c)?;
                        if idxs.len() != new_items.len() {
                            return raise(
                                "ValueError",
                                format!(
                                    "attempt to assign sequence of size {} to extended slice of size {}",
                                    new_items.len(),
                                    idxs.len()
                                ),
                            );
                        }
                        for (i, v) in idxs.into_iter().zip(new_items) {
                            g[i] = v;
                        }
                    }
                    return Ok(());
                }
                let i = self.eval(idx, frame)?;
                self.set_item(&o, i, v)
            }
            Expr::Attr(_, name) => raise("AttributeError", format!("cannot set attribute '{name}'")),
            Expr::Starred(_) => raise("SyntaxError", "starred assignment target must be in a list or tuple"),
            _ => raise("SyntaxError", "cannot assign to expression"),
        }
    }

    pub(crate) fn set_item(&mut self, o: &Value, i: Value, v: Value) -> R<()> {
        match o {
            Value::List(l) => {
                let mut g = l.lock();
                let k = norm_index(&i, g.len(), "list")?;
                g[k] = v;
                Ok(())
            }
            Value::Dict(d) => {
                let key = i.key().map_err(|m| exc("TypeError", m))?;
                let mut g = d.lock();
                match g.get_mut(&key) {
                    Some(slot) => slot.1 = v,
                    None => {
                        g.insert(key, (i, v));
                    }
                }
                Ok(())
            }
            _ => raise("TypeError", format!("'{}' object does not support item assignment", o.type_name())),
        }
    }

    fn aug_assign(&mut self, target: &Expr, op: BinOp, value: &Expr, frame: &mut Frame) -> R<()> {
        match target {
            Expr::Name(n) => {
                let cur = self.lookup(n, frame)?;
                let rhs = self.eval(value, frame)?;
                let new = self.inplace(op, cur, rhs)?;
                self.store(n, new, frame);
                Ok(())
            }
            Expr::Index(obj, idx) if !matches!(**idx, Expr::Slice(..)) => {
                let o = self.eval(obj, frame)?;
                let i = self.eval(idx, frame)?;
                let cur = self.get_item(&o, &i)?;
                let rhs = self.eval(value, frame)?;
                let new = self.inplace(op, cur, rhs)?;
                self.set_item(&o, i, new)
            }
            _ => {
                let cur = self.eval(target, frame)?;
                let rhs = self.eval(value, frame)?;
                let new = self.inplace(op, cur, rhs)?;
                self.assign(target, new, frame)
            }
        }
    }

    /// `+=` mutates lists in place; everything else rebinds.
    fn inplace(&mut self, op: BinOp, cur: Value, rhs: Value) -> R<Value> {
        if let (BinOp::Add, Value::List(l)) = (op, &cur) {
            let items = self.iterate(&rhs)?;
            l.lock().extend(items);
            return Ok(cur);
        }
        self.binop(op, &cur, &rhs)
    }

    // ------------------------------------------------------------ expressions

    pub(crate) fn eval(&mut self, e: &Expr, frame: &mut Frame) -> R<Value> {
        Ok(match e {
            Expr::Int(b) => int_from_big(b.clone()),
            Expr::Float(f) => Value::Float(*f),
            Expr::Str(s) => str_value(s.as_str()),
            Expr::FStr(parts) => str_value(self.fstring(parts, frame)?),
            Expr::Name(n) => self.lookup(n, frame)?,
            Expr::None => Value::None,
            Expr::Bool(b) => Value::Bool(*b),
            Expr::List(items) => list_value(self.eval_items(items, frame)?),
            Expr::Tuple(items) => tuple_value(self.eval_items(items, frame)?),
            Expr::Set(items) => {
                let vals = self.eval_items(items, frame)?;
                self.make_set(vals)?
            }
            Expr::Dict(items) => {
                let mut map = DictMap::new();
                for (k, v) in items {
                    let kv = self.eval(k, frame)?;
                    let vv = self.eval(v, frame)?;
                    let key = kv.key().map_err(|m| exc("TypeError", m))?;
                    match map.get_mut(&key) {
                        Some(slot) => slot.1 = vv,
                        None => {
                            map.insert(key, (kv, vv));
                        }
                    }
                }
                Value::Dict(Arc::new(Mutex::new(map)))
            }
            Expr::Unary(op, inner) => {
                let v = self.eval(inner, frame)?;
                self.unary(*op, &v)?
            }
            Expr::Bin(op, a, b) => {
                let x = self.eval(a, frame)?;
                let y = self.eval(b, frame)?;
                self.binop(*op, &x, &y)?
            }
            Expr::Cmp(first, rest) => {
                let mut left = self.eval(first, frame)?;
                for (op, right_e) in rest {
                    let right = self.eval(right_e, frame)?;
                    if !self.compare(*op, &left, &right)? {
                        return Ok(Value::Bool(false));
                    }
                    left = right;
                }
                Value::Bool(true)
            }
            Expr::And(a, b) => {
                let x = self.eval(a, frame)?;
                if !x.truthy() {
                    x
                } else {
                    self.eval(b, frame)?
                }
            }
            Expr::Or(a, b) => {
                let x = self.eval(a, frame)?;
                if x.truthy() {
                    x
                } else {
                    self.eval(b, frame)?
                }
            }
            Expr::IfExp(cond, then, other) => {
                if self.eval(cond, frame)?.truthy() {
                    self.eval(then, frame)?
                } else {
                    self.eval(other, frame)?
                }
            }
            Expr::Call(func, args) => {
                let f = self.eval(func, frame)?;
                let mut pos = Vec::with_capacity(args.len());
                let mut kw = Vec::new();
                for a in args {
                    match a {
                        Arg::Pos(e) => pos.push(self.eval(e, frame)?),
                        Arg::Star(e) => {
                            let v = self.eval(e, frame)?;
                            pos.extend(self.iterate(&v)?);
                        }
                        Arg::Kw(n, e) => kw.push((n.clone(), self.eval(e, frame)?)),
                        Arg::StarStar(e) => {
                            let v = self.eval(e, frame)?;
                            let Value::Dict(d) = v else {
                                return raise("TypeError", "argument after ** must be a mapping");
                            };
                            for (k, v) in d.lock().values() {
                                kw.push((py_str(k), v.clone()));
                            }
                        }
                    }
                }
                self.call(&f, pos, kw)?
            }
            Expr::Attr(obj, name) => {
                let o = self.eval(obj, frame)?;
                self.get_attr(&o, name)?
            }
            Expr::Index(obj, idx) => {
                let o = self.eval(obj, frame)?;
                if let Expr::Slice(a, b, c) = &**idx {
                    let (a, b, c) = self.slice_parts(a, b, c, frame)?;
                    return self.get_slice(&o, a, b, c);
                }
                let i = self.eval(idx, frame)?;
                self.get_item(&o, &i)?
            }
            Expr::Slice(..) => return raise("SyntaxError", "invalid syntax"),
            Expr::ListComp(elt, gens) => {
                let mut out = Vec::new();
                let mut sub =
                    Frame { locals: Some(Default::default()), closure: frame.child_scopes(), ..Default::default() };
                self.comprehend(gens, 0, &mut sub, &mut |this, f| {
                    out.push(this.eval(elt, f)?);
                    Ok(())
                })?;
                list_value(out)
            }
            Expr::SetComp(elt, gens) => {
                let mut out = Vec::new();
                let mut sub =
                    Frame { locals: Some(Default::default()), closure: frame.child_scopes(), ..Default::default() };
                self.comprehend(gens, 0, &mut sub, &mut |this, f| {
                    out.push(this.eval(elt, f)?);
                    Ok(())
                })?;
                self.make_set(out)?
            }
            Expr::DictComp(k, v, gens) => {
                let mut map = DictMap::new();
                let mut sub =
                    Frame { locals: Some(Default::default()), closure: frame.child_scopes(), ..Default::default() };
                self.comprehend(gens, 0, &mut sub, &mut |this, f| {
                    let kv = this.eval(k, f)?;
                    let vv = this.eval(v, f)?;
                    let key = kv.key().map_err(|m| exc("TypeError", m))?;
                    match map.get_mut(&key) {
                        Some(slot) => slot.1 = vv,
                        None => {
                            map.insert(key, (kv, vv));
                        }
                    }
                    Ok(())
                })?;
                Value::Dict(Arc::new(Mutex::new(map)))
            }
            Expr::Lambda(params, body) => {
                self.make_function("<lambda>", params, FuncBody::Lambda(body.clone()), frame)?
            }
            Expr::Starred(_) => return raise("SyntaxError", "can't use starred expression here"),
            Expr::Walrus(name, value) => {
                let v = self.eval(value, frame)?;
                self.store(name, v.clone(), frame);
                v
            }
        })
    }

    fn eval_items(&mut self, items: &[Expr], frame: &mut Frame) -> R<Vec<Value>> {
        let mut out = Vec::with_capacity(items.len());
        for i in items {
            if let Expr::Starred(inner) = i {
                let v = self.eval(inner, frame)?;
                out.extend(self.iterate(&v)?);
            } else {
                out.push(self.eval(i, frame)?);
            }
        }
        Ok(out)
    }

    fn comprehend(
        &mut self,
        gens: &[Comprehension],
        level: usize,
        frame: &mut Frame,
        body: &mut dyn FnMut(&mut Self, &mut Frame) -> R<()>,
    ) -> R<()> {
        if level == gens.len() {
            return body(self, frame);
        }
        let g = &gens[level];
        let it = self.eval(&g.iter, frame)?;
        let items = match it {
            Value::Range(a, b, s) => {
                let n = range_len(a, b, s);
                if n > 50_000_000 {
                    return raise("MemoryError", "");
                }
                (0..n).map(|k| Value::Int(a + k * s)).collect()
            }
            other => self.iterate(&other)?,
        };
        'items: for item in items {
            self.tick()?;
            self.assign(&g.target, item, frame)?;
            for c in &g.conds {
                if !self.eval(c, frame)?.truthy() {
                    continue 'items;
                }
            }
            self.comprehend(gens, level + 1, frame, body)?;
        }
        Ok(())
    }

    fn fstring(&mut self, parts: &[FPart], frame: &mut Frame) -> R<String> {
        let mut out = String::new();
        for p in parts {
            match p {
                FPart::Lit(s) => out.push_str(s),
                FPart::Expr { expr, conversion, spec } => {
                    let v = self.eval(expr, frame)?;
                    let v = match conversion {
                        Some('r') => str_value(py_repr(&v)),
                        Some('s') => str_value(py_str(&v)),
                        Some('a') => str_value(py_repr(&v)),
                        _ => v,
                    };
                    let spec = self.fstring(spec, frame)?;
                    out.push_str(&format_with_spec(&v, &spec).map_err(|m| exc("ValueError", m))?);
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn make_set(&mut self, vals: Vec<Value>) -> R<Value> {
        let mut map = SetMap::new();
        for v in vals {
            let k = v.key().map_err(|m| exc("TypeError", m))?;
            map.entry(k).or_insert(v);
        }
        Ok(Value::Set(Arc::new(Mutex::new(map))))
    }

    fn slice_parts(
        &mut self,
        a: &Option<Box<Expr>>,
        b: &Option<Box<Expr>>,
        c: &Option<Box<Expr>>,
        frame: &mut Frame,
    ) -> R<(Option<i64>, Option<i64>, Option<i64>)> {
        let mut one = |this: &mut Self, e: &Option<Box<Expr>>| -> R<Option<i64>> {
            match e {
                None => Ok(None),
                Some(e) => match this.eval(e, frame)? {
                    Value::None => Ok(None),
                    v => match v.as_i64() {
                        Some(i) => Ok(Some(i)),
                        None if matches!(v, Value::Big(_)) => {
                            Ok(Some(if v.as_big().unwrap().is_negative() { i64::MIN / 2 } else { i64::MAX / 2 }))
                        }
                        None => {
                            raise("TypeError", "slice indices must be integers or None or have an __index__ method")
                        }
                    },
                },
            }
        };
        Ok((one(self, a)?, one(self, b)?, one(self, c)?))
    }

    // ------------------------------------------------------------ calls

    pub(crate) fn call(&mut self, f: &Value, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        self.tick()?;
        match f {
            Value::Func(func) => self.call_function(func, args, kwargs),
            Value::Builtin(name) => self.call_builtin(name, args, kwargs),
            Value::Type(t) => self.construct(t, args, kwargs),
            Value::Method(obj, name) => self.call_method(obj, name, args, kwargs),
            Value::Partial(inner, pre) => {
                let mut all = pre.to_vec();
                all.extend(args);
                self.call(inner, all, kwargs)
            }
            Value::Memo(m) => {
                let key: Option<Vec<Key>> =
                    if kwargs.is_empty() { args.iter().map(|a| a.key().ok()).collect() } else { None };
                if let Some(k) = &key {
                    if let Some(v) = m.table.lock().get(k) {
                        return Ok(v.clone());
                    }
                }
                let v = self.call(&m.func, args, kwargs)?;
                if let Some(k) = key {
                    m.table.lock().insert(k, v.clone());
                }
                Ok(v)
            }
            other => raise("TypeError", format!("'{}' object is not callable", other.type_name())),
        }
    }

    fn call_function(&mut self, func: &Arc<Function>, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        if self.depth >= self.recursion_limit {
            return raise("RecursionError", "maximum recursion depth exceeded");
        }
        let locals: Scope = Default::default();
        {
            let mut l = locals.lock();
            let mut args = args.into_iter();
            let mut extra_kw: Vec<(String, Value)> = Vec::new();
            let params = &func.params;
            let mut bound: HashSet<String> = HashSet::new();
            let positional: Vec<usize> =
                (0..params.len()).filter(|i| !params[*i].star && !params[*i].starstar).collect();
            let star_at = params.iter().position(|p| p.star);
            let n_pos_slots = match star_at {
                Some(s) => positional.iter().filter(|i| **i < s).count(),
                None => positional.len(),
            };
            let given = args.len();
            for &pi in positional.iter().take(n_pos_slots) {
                match args.next() {
                    Some(v) => {
                        l.insert(params[pi].name.clone(), v);
                        bound.insert(params[pi].name.clone());
                    }
                    None => break,
                }
            }
            let rest: Vec<Value> = args.collect();
            match star_at {
                Some(s) => {
                    l.insert(params[s].name.clone(), tuple_value(rest));
                }
                None if !rest.is_empty() => {
                    let what = if n_pos_slots == 1 { "argument" } else { "arguments" };
                    let verb = if given == 1 { "was" } else { "were" };
                    return raise(
                        "TypeError",
                        format!(
                            "{}() takes {} positional {} but {} {} given",
                            func.name, n_pos_slots, what, given, verb
                        ),
                    );
                }
                None => {}
            }
            for (k, v) in kwargs {
                if let Some(p) = params.iter().find(|p| p.name == k && !p.star && !p.starstar) {
                    if bound.contains(&p.name) {
                        return raise("TypeError", format!("{}() got multiple values for argument '{}'", func.name, k));
                    }
                    l.insert(k.clone(), v);
                    bound.insert(k);
                } else {
                    extra_kw.push((k, v));
                }
            }
            if let Some(ss) = params.iter().find(|p| p.starstar) {
                let mut map = DictMap::new();
                for (k, v) in extra_kw {
                    map.insert(Key::Str(Arc::from(k.as_str())), (str_value(k), v));
                }
                l.insert(ss.name.clone(), Value::Dict(Arc::new(Mutex::new(map))));
            } else if let Some((k, _)) = extra_kw.first() {
                return raise("TypeError", format!("{}() got an unexpected keyword argument '{}'", func.name, k));
            }
            let mut missing = Vec::new();
            for &pi in &positional {
                let p = &params[pi];
                if !bound.contains(&p.name) {
                    match &func.defaults[pi] {
                        Some(d) => {
                            l.insert(p.name.clone(), d.clone());
                        }
                        None => missing.push(format!("'{}'", p.name)),
                    }
                }
            }
            if !missing.is_empty() {
                let list = match missing.len() {
                    1 => missing[0].clone(),
                    2 => format!("{} and {}", missing[0], missing[1]),
                    _ => {
                        let (last, init) = missing.split_last().unwrap();
                        format!("{}, and {}", init.join(", "), last)
                    }
                };
                return raise(
                    "TypeError",
                    format!(
                        "{}() missing {} required positional argument{}: {}",
                        func.name,
                        missing.len(),
                        if missing.len() == 1 { "" } else { "s" },
                        list
                    ),
                );
            }
        }
        let mut frame = Frame { locals: Some(locals), closure: func.closure.clone(), ..Default::default() };
        self.depth += 1;
        let saved_line = self.line;
        let r = match &func.body {
            FuncBody::Block(body) => match self.exec_block(body, &mut frame) {
                Ok(Flow::Return(v)) => Ok(v),
                Ok(_) => Ok(Value::None),
                Err(e) => Err(e),
            },
            FuncBody::Lambda(e) => self.eval(e, &mut frame),
        };
        self.depth -= 1;
        self.line = saved_line;
        r
    }

    // ------------------------------------------------------------ operators

    pub(crate) fn unary(&mut self, op: UnOp, v: &Value) -> R<Value> {
        match op {
            UnOp::Not => Ok(Value::Bool(!v.truthy())),
            UnOp::Neg => match v {
                Value::Bool(b) => Ok(Value::Int(-(*b as i64))),
                Value::Int(i) => Ok(match i.checked_neg() {
                    Some(n) => Value::Int(n),
                    None => int_from_big(-BigInt::from(*i)),
                }),
                Value::Big(b) => Ok(int_from_big(-(**b).clone())),
                Value::Float(f) => Ok(Value::Float(-f)),
                _ => raise("TypeError", format!("bad operand type for unary -: '{}'", v.type_name())),
            },
            UnOp::Pos => match v {
                Value::Bool(b) => Ok(Value::Int(*b as i64)),
                x if x.is_number() => Ok(x.clone()),
                _ => raise("TypeError", format!("bad operand type for unary +: '{}'", v.type_name())),
            },
            UnOp::Invert => match v.as_big() {
                Some(b) => Ok(int_from_big(-b - 1)),
                None => raise("TypeError", format!("bad operand type for unary ~: '{}'", v.type_name())),
            },
        }
    }

    pub(crate) fn binop(&mut self, op: BinOp, a: &Value, b: &Value) -> R<Value> {
        if a.is_int() && b.is_int() {
            return int_binop(op, a, b);
        }
        if a.is_number() && b.is_number() {
            return float_binop(op, a.as_f64().unwrap_or(f64::INFINITY), b.as_f64().unwrap_or(f64::INFINITY));
        }
        match (op, a, b) {
            (BinOp::Add, Value::Str(x), Value::Str(y)) => {
                let mut s = String::with_capacity(x.len() + y.len());
                s.push_str(x);
                s.push_str(y);
                Ok(str_value(s))
            }
            (BinOp::Add, Value::Str(_), other) => {
                raise("TypeError", format!("can only concatenate str (not \"{}\") to str", other.type_name()))
            }
            (BinOp::Add, Value::List(x), Value::List(y)) => {
                let mut v = x.lock().clone();
                v.extend(y.lock().iter().cloned());
                Ok(list_value(v))
            }
            (BinOp::Add, Value::List(_), other) => {
                raise("TypeError", format!("can only concatenate list (not \"{}\") to list", other.type_name()))
            }
            (BinOp::Add, Value::Tuple(x), Value::Tuple(y)) => {
                let mut v = x.to_vec();
                v.extend(y.iter().cloned());
                Ok(tuple_value(v))
            }
            (BinOp::Mul, seq, n) | (BinOp::Mul, n, seq)
                if n.is_int() && matches!(seq, Value::Str(_) | Value::List(_) | Value::Tuple(_)) =>
            {
                let count = n.as_i64().unwrap_or(i64::MAX).max(0) as usize;
                repeat_seq(seq, count)
            }
            (BinOp::Mod, Value::Str(fmt), args) => {
                let s = super::builtins::percent_format(self, fmt, args)?;
                Ok(str_value(s))
            }
            (BinOp::BitOr | BinOp::BitAnd | BinOp::Sub | BinOp::BitXor, Value::Set(x), Value::Set(y)) => {
                let (x, y) = (x.lock().clone(), y.lock().clone());
                let out: SetMap = match op {
                    BinOp::BitOr => x.into_iter().chain(y).collect(),
                    BinOp::BitAnd => x.into_iter().filter(|(k, _)| y.contains_key(k)).collect(),
                    BinOp::Sub => x.into_iter().filter(|(k, _)| !y.contains_key(k)).collect(),
                    _ => {
                        let mut out: SetMap = x.clone().into_iter().filter(|(k, _)| !y.contains_key(k)).collect();
                        out.extend(y.into_iter().filter(|(k, _)| !x.contains_key(k)));
                        out
                    }
                };
                let mut dedup = SetMap::new();
                for (k, v) in out {
                    dedup.entry(k).or_insert(v);
                }
                Ok(Value::Set(Arc::new(Mutex::new(dedup))))
            }
            (BinOp::BitOr, Value::Dict(x), Value::Dict(y)) => {
                let mut m = x.lock().clone();
                for (k, v) in y.lock().iter() {
                    m.insert(k.clone(), v.clone());
                }
                Ok(Value::Dict(Arc::new(Mutex::new(m))))
            }
            _ => raise(
                "TypeError",
                format!("unsupported operand type(s) for {}: '{}' and '{}'", op.symbol(), a.type_name(), b.type_name()),
            ),
        }
    }

    pub(crate) fn compare(&mut self, op: CmpOp, a: &Value, b: &Value) -> R<bool> {
        use std::cmp::Ordering::*;
        let ord = |sym: &str| py_cmp(a, b, sym).map_err(|m| exc("TypeError", m));
        Ok(match op {
            CmpOp::Eq => py_eq(a, b),
            CmpOp::Ne => !py_eq(a, b),
            CmpOp::Lt => ord("<")? == Some(Less),
            CmpOp::Le => matches!(ord("<=")?, Some(Less | Equal)),
            CmpOp::Gt => ord(">")? == Some(Greater),
            CmpOp::Ge => matches!(ord(">=")?, Some(Greater | Equal)),
            CmpOp::In => self.contains(b, a)?,
            CmpOp::NotIn => !self.contains(b, a)?,
            CmpOp::Is => is_same(a, b),
            CmpOp::IsNot => !is_same(a, b),
        })
    }

    pub(crate) fn contains(&mut self, container: &Value, item: &Value) -> R<bool> {
        match container {
            Value::Str(s) => match item {
                Value::Str(sub) => Ok(s.contains(&**sub)),
                other => raise(
                    "TypeError",
                    format!("'in <string>' requires string as left operand, not {}", other.type_name()),
                ),
            },
            Value::Dict(d) => {
                let k = item.key().map_err(|m| exc("TypeError", m))?;
                Ok(d.lock().contains_key(&k))
            }
            Value::Set(s) => {
                let k = item.key().map_err(|m| exc("TypeError", m))?;
                Ok(s.lock().contains_key(&k))
            }
            Value::Range(a, b, s) => match item.as_i64() {
                Some(i) => {
                    let n = range_len(*a, *b, *s);
                    Ok(n > 0 && (i - a) % s == 0 && {
                        let k = (i - a) / s;
                        k >= 0 && k < n
                    })
                }
                None => Ok(false),
            },
            other => {
                let items = self.iterate(other)?;
                Ok(items.iter().any(|x| py_eq(x, item)))
            }
        }
    }

    // ------------------------------------------------------------ containers

    pub(crate) fn iterate(&mut self, v: &Value) -> R<Vec<Value>> {
        Ok(match v {
            Value::List(l) => l.lock().clone(),
            Value::Tuple(t) => t.to_vec(),
            Value::Str(s) => s.chars().map(|c| str_value(c.to_string())).collect(),
            Value::Dict(d) => d.lock().values().map(|(k, _)| k.clone()).collect(),
            Value::Set(s) => s.lock().values().cloned().collect(),
            Value::Range(a, b, s) => {
                let n = range_len(*a, *b, *s);
                if n > 50_000_000 {
                    return raise("MemoryError", "");
                }
                (0..n).map(|k| Value::Int(a + k * s)).collect()
            }
            Value::Iter(it) => {
                let mut g = it.lock();
                let pos = g.1;
                g.1 = g.0.len();
                g.0[pos..].to_vec()
            }
            Value::Stream(Stream::Stdin) => {
                let mut lines = Vec::new();
                while let Some(l) = self.read_line() {
                    lines.push(str_value(l));
                }
                lines
            }
            other => return raise("TypeError", format!("'{}' object is not iterable", other.type_name())),
        })
    }

    pub(crate) fn read_line(&mut self) -> Option<String> {
        if self.stdin_pos >= self.stdin.len() {
            return None;
        }
        let mut line = String::new();
        while self.stdin_pos < self.stdin.len() {
            let c = self.stdin[self.stdin_pos];
            self.stdin_pos += 1;
            line.push(c);
            if c == '\n' {
                break;
            }
        }
        Some(line)
    }

    pub(crate) fn get_item(&mut self, o: &Value, i: &Value) -> R<Value> {
        match o {
            Value::List(l) => {
                let g = l.lock();
                let k = norm_index(i, g.len(), "list")?;
                Ok(g[k].clone())
            }
            Value::Tuple(t) => {
                let k = norm_index(i, t.len(), "tuple")?;
                Ok(t[k].clone())
            }
            Value::Str(s) => {
                if s.is_ascii() {
                    let k = norm_index(i, s.len(), "string")?;
                    Ok(str_value(&s[k..k + 1]))
                } else {
                    let chars: Vec<char> = s.chars().collect();
                    let k = norm_index(i, chars.len(), "string")?;
                    Ok(str_value(chars[k].to_string()))
                }
            }
            Value::Dict(d) => {
                let k = i.key().map_err(|m| exc("TypeError", m))?;
                match d.lock().get(&k) {
                    Some((_, v)) => Ok(v.clone()),
                    None => Err(key_error(i.clone())),
                }
            }
            Value::Range(a, b, s) => {
                let n = range_len(*a, *b, *s) as usize;
                let k = norm_index(i, n, "range object")?;
                Ok(Value::Int(a + k as i64 * s))
            }
            Value::Type(_) => Ok(o.clone()),
            _ => raise("TypeError", format!("'{}' object is not subscriptable", o.type_name())),
        }
    }

    fn get_slice(&mut self, o: &Value, a: Option<i64>, b: Option<i64>, c: Option<i64>) -> R<Value> {
        match o {
            Value::List(l) => {
                let g = l.lock();
                let idx = slice_indices(g.len(), a, b, c)?;
                Ok(list_value(idx.into_iter().map(|i| g[i].clone()).collect()))
            }
            Value::Tuple(t) => {
                let idx = slice_indices(t.len(), a, b, c)?;
                Ok(tuple_value(idx.into_iter().map(|i| t[i].clone()).collect()))
            }
            Value::Str(s) => {
                if s.is_ascii() && c.unwrap_or(1) == 1 {
                    let (start, stop) = simple_bounds(s.len(), a, b);
                    return Ok(str_value(if start < stop { &s[start..stop] } else { "" }));
                }
                let chars: Vec<char> = s.chars().collect();
                let idx = slice_indices(chars.len(), a, b, c)?;
                Ok(str_value(idx.into_iter().map(|i| chars[i]).collect::<String>()))
            }
            Value::Range(start, stop, step) => {
                let n = range_len(*start, *stop, *step) as usize;
                let idx = slice_indices(n, a, b, c)?;
                Ok(list_value(idx.into_iter().map(|i| Value::Int(start + i as i64 * step)).collect()))
            }
            _ => raise("TypeError", format!("'{}' object is not subscriptable", o.type_name())),
        }
    }
}

fn is_same(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::None, Value::None) => true,
        (Value::Bool(x), Value::Bool(y)) => x == y,
        (Value::List(x), Value::List(y)) => Arc::ptr_eq(x, y),
        (Value::Dict(x), Value::Dict(y)) => Arc::ptr_eq(x, y),
        (Value::Set(x), Value::Set(y)) => Arc::ptr_eq(x, y),
        (Value::Int(x), Value::Int(y)) => x == y && (-5..=256).contains(x),
        (Value::Str(x), Value::Str(y)) => Arc::ptr_eq(x, y) || (x == y && x.len() <= 1),
        (Value::Type(x), Value::Type(y)) => x == y,
        (Value::Func(x), Value::Func(y)) => Arc::ptr_eq(x, y),
        (Value::Tuple(x), Value::Tuple(y)) => Arc::ptr_eq(x, y) || (x.is_empty() && y.is_empty()),
        (Value::Exc(x), Value::Exc(y)) => Arc::ptr_eq(x, y),
        (Value::Builtin(x), Value::Builtin(y)) => x == y,
        (Value::Module(x), Value::Module(y)) => x == y,
        _ => false,
    }
}

pub(crate) fn key_error(k: Value) -> Ctrl {
    let msg = py_repr(&k);
    Ctrl::Exc(PyErr {
        kind: "KeyError".into(),
        msg,
        value: Some(Value::Exc(Arc::new(ExcObj { kind: "KeyError".into(), args: vec![k] }))),
        line: 0,
    })
}

pub(crate) fn norm_index(i: &Value, len: usize, what: &str) -> R<usize> {
    let Some(mut k) = i.as_i64() else {
        if matches!(i, Value::Big(_)) {
            return raise("IndexError", format!("{what} index out of range"));
        }
        let container = if what == "string" { "string" } else { what };
        return raise("TypeError", format!("{container} indices must be integers or slices, not {}", i.type_name()));
    };
    if k < 0 {
        k += len as i64;
    }
    if k < 0 || k >= len as i64 {
        return raise("IndexError", format!("{what} index out of range"));
    }
    Ok(k as usize)
}

fn simple_bounds(len: usize, a: Option<i64>, b: Option<i64>) -> (usize, usize) {
    let len = len as i64;
    let clamp = |v: i64| -> i64 {
        if v < 0 {
            (v + len).max(0)
        } else {
            v.min(len)
        }
    };
    let start = a.map(clamp).unwrap_or(0);
    let stop = b.map(clamp).unwrap_or(len);
    (start as usize, stop.max(start) as usize)
}

pub(crate) fn slice_indices(len: usize, a: Option<i64>, b: Option<i64>, c: Option<i64>) -> R<Vec<usize>> {
    let step = c.unwrap_or(1);
    if step == 0 {
        return raise("ValueError", "slice step cannot be zero");
    }
    let len = len as i64;
    let mut out = Vec::new();
    if step > 0 {
        let clamp = |v: i64| if v < 0 { (v + len).max(0) } else { v.min(len) };
        let start = a.map(clamp).unwrap_or(0);
        let stop = b.map(clamp).unwrap_or(len);
        let mut i = start;
        while i < stop {
            out.push(i as usize);
            i += step;
        }
    } else {
        let clamp = |v: i64| if v < 0 { (v + len).max(-1) } else { v.min(len - 1) };
        let start = a.map(clamp).unwrap_or(len - 1);
        let stop = b.map(clamp).unwrap_or(-1);
        let mut i = start;
        while i > stop {
            out.push(i as usize);
            i += step;
        }
    }
    Ok(out)
}

fn repeat_seq(seq: &Value, count: usize) -> R<Value> {
    let unit = match seq {
        Value::Str(s) => s.len(),
        Value::List(l) => l.lock().len(),
        Value::Tuple(t) => t.len(),
        _ => 0,
    };
    if unit.saturating_mul(count) > 100_000_000 {
        return raise("MemoryError", "");
    }
    Ok(match seq {
        Value::Str(s) => str_value(s.repeat(count)),
        Value::List(l) => {
            let items = l.lock().clone();
            let mut out = Vec::with_capacity(items.len() * count);
            for _ in 0..count {
                out.extend(items.iter().cloned());
            }
            list_value(out)
        }
        Value::Tuple(t) => {
            let mut out = Vec::with_capacity(t.len() * count);
            for _ in 0..count {
                out.extend(t.iter().cloned());
            }
            tuple_value(out)
        }
        _ => unreachable!(),
    })
}

pub(crate) fn int_binop(op: BinOp, a: &Value, b: &Value) -> R<Value> {
    if let (Some(x), Some(y)) = (a.as_i64(), b.as_i64()) {
        let fast = match op {
            BinOp::Add => x.checked_add(y).map(Value::Int),
            BinOp::Sub => x.checked_sub(y).map(Value::Int),
            BinOp::Mul => x.checked_mul(y).map(Value::Int),
            BinOp::FloorDiv if y != 0 && !(x == i64::MIN && y == -1) => Some(Value::Int(Integer::div_floor(&x, &y))),
            BinOp::Mod if y != 0 && !(x == i64::MIN && y == -1) => Some(Value::Int(x.mod_floor(&y))),
            BinOp::BitAnd => Some(Value::Int(x & y)),
            BinOp::BitOr => Some(Value::Int(x | y)),
            BinOp::BitXor => Some(Value::Int(x ^ y)),
            BinOp::Pow if (0..64).contains(&y) => x.checked_pow(y as u32).map(Value::Int),
            _ => None,
        };
        if let Some(v) = fast {
            return Ok(v);
        }
    }
    let x = a.as_big().unwrap();
    let y = b.as_big().unwrap();
    Ok(match op {
        BinOp::Add => int_from_big(x + y),
        BinOp::Sub => int_from_big(x - y),
        BinOp::Mul => int_from_big(x * y),
        BinOp::FloorDiv | BinOp::Mod => {
            if y.is_zero() {
                return raise("ZeroDivisionError", "integer division or modulo by zero");
            }
            if op == BinOp::FloorDiv {
                int_from_big(x.div_floor(&y))
            } else {
                int_from_big(x.mod_floor(&y))
            }
        }
        BinOp::Div => {
            if y.is_zero() {
                return raise("ZeroDivisionError", "division by zero");
            }
            match (x.to_i64(), y.to_i64()) {
                (Some(p), Some(q)) if p.unsigned_abs() < (1 << 53) && q.unsigned_abs() < (1 << 53) => {
                    Value::Float(p as f64 / q as f64)
                }
                _ => {
                    let (xf, yf) = (x.to_f64().unwrap_or(f64::INFINITY), y.to_f64().unwrap_or(f64::INFINITY));
                    let r = xf / yf;
                    if r.is_infinite() {
                        return raise("OverflowError", "integer division result too large for a float");
                    }
                    Value::Float(r)
                }
            }
        }
        BinOp::Pow => {
            if y.is_negative() {
                if x.is_zero() {
                    return raise("ZeroDivisionError", "0.0 cannot be raised to a negative power");
                }
                return float_binop(op, x.to_f64().unwrap_or(f64::INFINITY), y.to_f64().unwrap_or(f64::NEG_INFINITY));
            }
            let e = y.to_u64().unwrap_or(u64::MAX);
            let bits = x.bits().max(1) as u128 * e as u128;
            if bits > 64_000_000 && x.abs() > BigInt::from(1) {
                return raise("MemoryError", "");
            }
            int_from_big(num_traits::pow::Pow::pow(&x, e))
        }
        BinOp::BitAnd => int_from_big(x & y),
        BinOp::BitOr => int_from_big(x | y),
        BinOp::BitXor => int_from_big(x ^ y),
        BinOp::Shl | BinOp::Shr => {
            if y.is_negative() {
                return raise("ValueError", "negative shift count");
            }
            let s = y.to_usize().unwrap_or(usize::MAX);
            if op == BinOp::Shl {
                if s > 64_000_000 {
                    return raise("MemoryError", "");
                }
                int_from_big(x << s)
            } else if s > x.bits() as usize + 1 {
                Value::Int(if x.is_negative() { -1 } else { 0 })
            } else {
                int_from_big(x >> s)
            }
        }
    })
}

pub(crate) fn float_binop(op: BinOp, x: f64, y: f64) -> R<Value> {
    Ok(Value::Float(match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => {
            if y == 0.0 {
                return raise("ZeroDivisionError", "float division by zero");
            }
            x / y
        }
        BinOp::FloorDiv | BinOp::Mod => {
            if y == 0.0 {
                let msg = if op == BinOp::FloorDiv { "float floor division by zero" } else { "float modulo" };
                return raise("ZeroDivisionError", msg);
            }
            let (div, m) = float_divmod(x, y);
            if op == BinOp::FloorDiv {
                div
            } else {
                m
            }
        }
        BinOp::Pow => {
            if x == 0.0 && y < 0.0 {
                return raise("ZeroDivisionError", "0.0 cannot be raised to a negative power");
            }
            if x < 0.0 && y.fract() != 0.0 {
                return raise("ValueError", "math domain error");
            }
            let r = x.powf(y);
            if r.is_infinite() && x.is_finite() && y.is_finite() {
                return raise("OverflowError", "(34, 'Numerical result out of range')");
            }
            r
        }
        _ => {
            return raise("TypeError", format!("unsupported operand type(s) for {}: 'float' and 'float'", op.symbol()))
        }
    }))
}

/// Python's float divmod, including its sign conventions.
fn float_divmod(x: f64, y: f64) -> (f64, f64) {
    let mut m = x % y;
    let mut div = (x - m) / y;
    if m != 0.0 {
        if (y < 0.0) != (m < 0.0) {
            m += y;
            div -= 1.0;
        }
    } else {
        m = 0.0f64.copysign(y);
    }
    let floordiv = if div != 0.0 {
        let f = div.floor();
        if div - f > 0.5 {
            f + 1.0
        } else {
            f
        }
    } else {
        0.0f64.copysign(x / y)
    };
    (floordiv, m)
}
