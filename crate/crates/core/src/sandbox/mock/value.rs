//! Runtime values of the mock interpreter and their Python-compatible
//! rendering and comparison rules.

use super::ast::{Expr, Param, Stmt};
use indexmap::IndexMap;
use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use parking_lot::Mutex;
use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

pub type Scope = Arc<Mutex<HashMap<String, Value>>>;
pub type DictMap = IndexMap<Key, (Value, Value)>;
pub type SetMap = IndexMap<Key, Value>;

#[derive(Debug)]
pub enum FuncBody {
    Block(Arc<Vec<Stmt>>),
    Lambda(Arc<Expr>),
}

#[derive(Debug)]
pub struct Function {
    pub name: String,
    pub params: Arc<Vec<Param>>,
    pub defaults: Vec<Option<Value>>,
    pub body: FuncBody,
    /// Enclosing function scopes, innermost last.
    pub closure: Vec<Scope>,
}

#[derive(Debug)]
pub struct ExcObj {
    pub kind: String,
    pub args: Vec<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Stdin,
    Stdout,
    Stderr,
}

#[derive(Debug, Clone)]
pub enum Value {
    None,
    Bool(bool),
    Int(i64),
    Big(Arc<BigInt>),
    Float(f64),
    Str(Arc<str>),
    List(Arc<Mutex<Vec<Value>>>),
    Tuple(Arc<Vec<Value>>),
    Dict(Arc<Mutex<DictMap>>),
    Set(Arc<Mutex<SetMap>>),
    Range(i64, i64, i64),
    Func(Arc<Function>),
    Builtin(&'static str),
    /// A type object (`int`, `list`, `ValueError`, ...). Callable.
    Type(Arc<str>),
    Method(Box<Value>, Arc<str>),
    Module(&'static str),
    Exc(Arc<ExcObj>),
    Stream(Stream),
    /// Iterator over a materialized sequence.
    Iter(Arc<Mutex<(Vec<Value>, usize)>>),
    /// `functools.partial`: callable plus leading positional arguments.
    Partial(Box<Value>, Arc<Vec<Value>>),
    /// Memoizing wrapper returned by `functools.cache` and `lru_cache`.
    Memo(Arc<Memo>),
}

#[derive(Debug)]
pub struct Memo {
    pub func: Value,
    pub table: Mutex<HashMap<Vec<Key>, Value>>,
}

/// Hashable projection of a value, normalized so that equal numbers of
/// different types collide as in Python.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Key {
    None,
    Int(i64),
    Big(BigInt),
    Float(u64),
    Str(Arc<str>),
    Tuple(Vec<Key>),
    Type(Arc<str>),
    Func(usize),
}

pub fn int_from_big(b: BigInt) -> Value {
    match b.to_i64() {
        Some(v) => Value::Int(v),
        None => Value::Big(Arc::new(b)),
    }
}

pub fn str_value(s: impl Into<Arc<str>>) -> Value {
    Value::Str(s.into())
}

pub fn list_value(items: Vec<Value>) -> Value {
    Value::List(Arc::new(Mutex::new(items)))
}

pub fn tuple_value(items: Vec<Value>) -> Value {
    Value::Tuple(Arc::new(items))
}

impl Value {
    pub fn type_name(&self) -> String {
        match self {
            Value::None => "NoneType".into(),
            Value::Bool(_) => "bool".into(),
            Value::Int(_) | Value::Big(_) => "int".into(),
            Value::Float(_) => "float".into(),
            Value::Str(_) => "str".into(),
            Value::List(_) => "list".into(),
            Value::Tuple(_) => "tuple".into(),
            Value::Dict(_) => "dict".into(),
            Value::Set(_) => "set".into(),
            Value::Range(..) => "range".into(),
            Value::Func(_) => "function".into(),
            Value::Builtin(_) => "builtin_function_or_method".into(),
            Value::Type(_) => "type".into(),
            Value::Method(..) => "method".into(),
            Value::Module(_) => "module".into(),
            Value::Exc(e) => e.kind.clone(),
            Value::Stream(_) => "TextIOWrapper".into(),
            Value::Iter(_) => "iterator".into(),
            Value::Partial(..) => "functools.partial".into(),
            Value::Memo(_) => "functools._lru_cache_wrapper".into(),
        }
    }

    pub fn as_big(&self) -> Option<BigInt> {
        match self {
            Value::Bool(b) => Some(BigInt::from(*b as i64)),
            Value::Int(i) => Some(BigInt::from(*i)),
            Value::Big(b) => Some((**b).clone()),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Bool(b) => Some(*b as i64),
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Bool(b) => Some(*b as i64 as f64),
            Value::Int(i) => Some(*i as f64),
            Value::Big(b) => b.to_f64(),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn is_int(&self) -> bool {
        matches!(self, Value::Bool(_) | Value::Int(_) | Value::Big(_))
    }

    pub fn is_number(&self) -> bool {
        self.is_int() || matches!(self, Value::Float(_))
    }

    pub fn truthy(&self) -> bool {
        match self {
            Value::None => false,
            Value::Bool(b) => *b,
            Value::Int(i) => *i != 0,
            Value::Big(b) => !b.is_zero(),
            Value::Float(f) => *f != 0.0,
            Value::Str(s) => !s.is_empty(),
            Value::List(l) => !l.lock().is_empty(),
            Value::Tuple(t) => !t.is_empty(),
            Value::Dict(d) => !d.lock().is_empty(),
            Value::Set(s) => !s.lock().is_empty(),
            Value::Range(a, b, s) => range_len(*a, *b, *s) > 0,
            _ => true,
        }
    }

    pub fn key(&self) -> Result<Key, String> {
        Ok(match self {
            Value::None => Key::None,
            Value::Bool(b) => Key::Int(*b as i64),
            Value::Int(i) => Key::Int(*i),
            Value::Big(b) => Key::Big((**b).clone()),
            Value::Float(f) => {
                if f.fract() == 0.0 && f.abs() < 9.0e18 {
                    Key::Int(*f as i64)
                } else if *f == 0.0 {
                    Key::Int(0)
                } else {
                    Key::Float(f.to_bits())
                }
            }
            Value::Str(s) => Key::Str(s.clone()),
            Value::Tuple(t) => Key::Tuple(t.iter().map(|v| v.key()).collect::<Result<_, _>>()?),
            Value::Type(t) => Key::Type(t.clone()),
            Value::Builtin(b) => Key::Type(Arc::from(*b)),
            Value::Func(f) => Key::Func(Arc::as_ptr(f) as usize),
            other => return Err(format!("unhashable type: '{}'", other.type_name())),
        })
    }
}

pub fn range_len(start: i64, stop: i64, step: i64) -> i64 {
    if step > 0 && start < stop {
        (stop - start - 1) / step + 1
    } else if step < 0 && start > stop {
        (start - stop - 1) / (-step) + 1
    } else {
        0
    }
}

// ------------------------------------------------------------------ rendering

pub fn float_repr(f: f64) -> String {
    if f.is_nan() {
        return "nan".into();
    }
    if f.is_infinite() {
        return if f > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if f == 0.0 {
        return if f.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    // shortest round-trip digits, then Python's repr layout
    let sci = format!("{:e}", f);
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    let neg = mant.starts_with('-');
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if (-4..16).contains(&exp) {
        if exp < 0 {
            out.push_str("0.");
            for _ in 0..(-exp - 1) {
                out.push('0');
            }
            out.push_str(&digits);
        } else {
            let point = exp as usize + 1;
            if digits.len() <= point {
                out.push_str(&digits);
                for _ in digits.len()..point {
                    out.push('0');
                }
                out.push_str(".0");
            } else {
                out.push_str(&digits[..point]);
                out.push('.');
                out.push_str(&digits[point..]);
            }
        }
    } else {
        out.push_str(&digits[..1]);
        if digits.len() > 1 {
            out.push('.');
            out.push_str(&digits[1..]);
        }
        let _ = write!(out, "e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    out
}

pub fn str_repr(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                let _ = write!(out, "\\x{:02x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

pub fn py_str(v: &Value) -> String {
    match v {
        Value::Str(s) => s.to_string(),
        Value::Exc(e) => exc_message(e),
        _ => py_repr(v),
    }
}

pub fn exc_message(e: &ExcObj) -> String {
    match e.args.len() {
        0 => String::new(),
        1 if e.kind == "KeyError" => py_repr(&e.args[0]),
        1 => py_str(&e.args[0]),
        _ => py_repr(&tuple_value(e.args.clone())),
    }
}

pub fn py_repr(v: &Value) -> String {
    repr_depth(v, 0)
}

fn repr_depth(v: &Value, depth: usize) -> String {
    if depth > 200 {
        return "...".into();
    }
    let join = |items: &[Value]| items.iter().map(|i| repr_depth(i, depth + 1)).collect::<Vec<_>>().join(", ");
    match v {
        Value::None => "None".into(),
        Value::Bool(true) => "True".into(),
        Value::Bool(false) => "False".into(),
        Value::Int(i) => i.to_string(),
        Value::Big(b) => b.to_string(),
        Value::Float(f) => float_repr(*f),
        Value::Str(s) => str_repr(s),
        Value::List(l) => {
            let items = l.lock().clone();
            format!("[{}]", join(&items))
        }
        Value::Tuple(t) => {
            if t.len() == 1 {
                format!("({},)", repr_depth(&t[0], depth + 1))
            } else {
                format!("({})", join(t))
            }
        }
        Value::Dict(d) => {
            let items: Vec<(Value, Value)> = d.lock().values().cloned().collect();
            let body = items
                .iter()
                .map(|(k, v)| format!("{}: {}", repr_depth(k, depth + 1), repr_depth(v, depth + 1)))
                .collect::<Vec<_>>()
                .join(", ");
            format!("{{{body}}}")
        }
        Value::Set(s) => {
            let items: Vec<Value> = s.lock().values().cloned().collect();
            if items.is_empty() {
                "set()".into()
            } else {
                format!("{{{}}}", join(&items))
            }
        }
        Value::Range(a, b, s) => {
            if *s == 1 {
                format!("range({a}, {b})")
            } else {
                format!("range({a}, {b}, {s})")
            }
        }
        Value::Func(f) => format!("<function {}>", f.name),
        Value::Builtin(b) => format!("<built-in function {b}>"),
        Value::Type(t) => format!("<class '{t}'>"),
        Value::Method(_, m) => format!("<bound method {m}>"),
        Value::Module(m) => format!("<module '{m}'>"),
        Value::Exc(e) => {
            let args = e.args.iter().map(|a| repr_depth(a, depth + 1)).collect::<Vec<_>>();
            format!("{}({})", e.kind, args.join(", "))
        }
        Value::Stream(s) => format!("<{s:?}>"),
        Value::Iter(_) => "<iterator>".into(),
        Value::Partial(f, _) => format!("functools.partial({})", repr_depth(f, depth + 1)),
        Value::Memo(m) => repr_depth(&m.func, depth + 1),
    }
}

// ------------------------------------------------------------------ comparison

pub fn py_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::List(x), Value::List(y)) => {
            if Arc::ptr_eq(x, y) {
                return true;
            }
            let (x, y) = (x.lock().clone(), y.lock().clone());
            x.len() == y.len() && x.iter().zip(&y).all(|(p, q)| py_eq(p, q))
        }
        (Value::Tuple(x), Value::Tuple(y)) => x.len() == y.len() && x.iter().zip(y.iter()).all(|(p, q)| py_eq(p, q)),
        (Value::Dict(x), Value::Dict(y)) => {
            if Arc::ptr_eq(x, y) {
                return true;
            }
            let (x, y) = (x.lock().clone(), y.lock().clone());
            x.len() == y.len() && x.iter().all(|(k, (_, v))| y.get(k).is_some_and(|(_, w)| py_eq(v, w)))
        }
        (Value::Set(x), Value::Set(y)) => {
            if Arc::ptr_eq(x, y) {
                return true;
            }
            let (x, y) = (x.lock().clone(), y.lock().clone());
            x.len() == y.len() && x.keys().all(|k| y.contains_key(k))
        }
        (Value::Str(x), Value::Str(y)) => x == y,
        (Value::None, Value::None) => true,
        (Value::Range(a, b, c), Value::Range(d, e, f)) => (a, b, c) == (d, e, f),
        _ if a.is_number() && b.is_number() => num_cmp(a, b) == Some(Ordering::Equal),
        (Value::Type(x), Value::Type(y)) => x == y,
        (Value::Builtin(x), Value::Builtin(y)) => x == y,
        (Value::Func(x), Value::Func(y)) => Arc::ptr_eq(x, y),
        (Value::Exc(x), Value::Exc(y)) => Arc::ptr_eq(x, y),
        (Value::Module(x), Value::Module(y)) => x == y,
        _ => false,
    }
}

pub fn num_cmp(a: &Value, b: &Value) -> Option<Ordering> {
    if a.is_int() && b.is_int() {
        if let (Some(x), Some(y)) = (a.as_i64(), b.as_i64()) {
            return Some(x.cmp(&y));
        }
        return Some(a.as_big()?.cmp(&b.as_big()?));
    }
    match (a, b) {
        (Value::Float(x), y) | (y, Value::Float(x)) if y.is_int() => {
            // compare exactly when the float is integral
            let flipped = matches!(b, Value::Float(_)) && !matches!(a, Value::Float(_));
            let ord = if x.is_nan() {
                return None;
            } else if x.is_infinite() {
                if *x > 0.0 {
                    Ordering::Greater
                } else {
                    Ordering::Less
                }
            } else if x.fract() == 0.0 {
                let xb: BigInt = num_traits::FromPrimitive::from_f64(*x)?;
                xb.cmp(&y.as_big()?)
            } else {
                x.partial_cmp(&y.as_f64()?)?
            };
            Some(if flipped { ord.reverse() } else { ord })
        }
        _ => a.as_f64()?.partial_cmp(&b.as_f64()?),
    }
}

/// Ordering for `<`-style comparisons; `Err` carries the TypeError message.
pub fn py_cmp(a: &Value, b: &Value, op: &str) -> Result<Option<Ordering>, String> {
    if a.is_number() && b.is_number() {
        return Ok(num_cmp(a, b));
    }
    match (a, b) {
        (Value::Str(x), Value::Str(y)) => Ok(Some(x.cmp(y))),
        (Value::List(x), Value::List(y)) => {
            let (x, y) = (x.lock().clone(), y.lock().clone());
            seq_cmp(&x, &y, op)
        }
        (Value::Tuple(x), Value::Tuple(y)) => seq_cmp(x, y, op),
        (Value::Set(x), Value::Set(y)) => {
            let (x, y) = (x.lock().clone(), y.lock().clone());
            let sub = x.keys().all(|k| y.contains_key(k));
            let sup = y.keys().all(|k| x.contains_key(k));
            Ok(match (sub, sup) {
                (true, true) => Some(Ordering::Equal),
                (true, false) => Some(Ordering::Less),
                (false, true) => Some(Ordering::Greater),
                _ => None,
            })
        }
        _ => Err(format!("'{}' not supported between instances of '{}' and '{}'", op, a.type_name(), b.type_name())),
    }
}

fn seq_cmp(x: &[Value], y: &[Value], op: &str) -> Result<Option<Ordering>, String> {
    for (p, q) in x.iter().zip(y) {
        if !py_eq(p, q) {
            return py_cmp(p, q, op);
        }
    }
    Ok(Some(x.len().cmp(&y.len())))
}

// ------------------------------------------------------------------ formatting

/// Applies a format-spec mini-language string to a value.
pub fn format_with_spec(v: &Value, spec: &str) -> Result<String, String> {
    if spec.is_empty() {
        return Ok(py_str(v));
    }
    let chars: Vec<char> = spec.chars().collect();
    let mut i = 0;
    let mut fill = ' ';
    let mut align = None;
    if chars.len() >= 2 && matches!(chars[1], '<' | '>' | '^' | '=') {
        fill = chars[0];
        align = Some(chars[1]);
        i = 2;
    } else if matches!(chars.first(), Some('<' | '>' | '^' | '=')) {
        align = Some(chars[0]);
        i = 1;
    }
    let mut sign = '-';
    if matches!(chars.get(i), Some('+' | '-' | ' ')) {
        sign = chars[i];
        i += 1;
    }
    let mut alt = false;
    if chars.get(i) == Some(&'#') {
        alt = true;
        i += 1;
    }
    if chars.get(i) == Some(&'0') && align.is_none() {
        fill = '0';
        align = Some('=');
        i += 1;
    }
    let mut width = 0usize;
    while let Some(d) = chars.get(i).and_then(|c| c.to_digit(10)) {
        width = width * 10 + d as usize;
        i += 1;
    }
    let mut grouping = None;
    if matches!(chars.get(i), Some(',' | '_')) {
        grouping = Some(chars[i]);
        i += 1;
    }
    let mut precision = None;
    if chars.get(i) == Some(&'.') {
        i += 1;
        let mut p = 0usize;
        let start = i;
        while let Some(d) = chars.get(i).and_then(|c| c.to_digit(10)) {
            p = p * 10 + d as usize;
            i += 1;
        }
        if i == start {
            return Err("Format specifier missing precision".into());
        }
        precision = Some(p);
    }
    let ty = chars.get(i).copied();
    if i + usize::from(ty.is_some()) != chars.len() {
        return Err("Invalid format specifier".into());
    }
    let bad_code = |c: char| format!("Unknown format code '{}' for object of type '{}'", c, v.type_name());
    let (mut body, numeric, negative) = match (ty, v) {
        (None | Some('s'), Value::Str(s)) => {
            let s: String = match precision {
                Some(p) => s.chars().take(p).collect(),
                None => s.to_string(),
            };
            (s, false, false)
        }
        (Some(c), Value::Str(_)) => return Err(bad_code(c)),
        (Some('d' | 'n'), x) if x.is_int() => {
            let b = x.as_big().unwrap();
            (b.abs().to_string(), true, b.is_negative())
        }
        (Some('b' | 'o' | 'x' | 'X'), x) if x.is_int() => {
            let b = x.as_big().unwrap();
            let radix = match ty.unwrap() {
                'b' => 2,
                'o' => 8,
                _ => 16,
            };
            let mut s = b.abs().to_str_radix(radix);
            if ty == Some('X') {
                s = s.to_uppercase();
            }
            if alt {
                let prefix = match ty.unwrap() {
                    'b' => "0b",
                    'o' => "0o",
                    'x' => "0x",
                    _ => "0X",
                };
                s = format!("{prefix}{s}");
            }
            (s, true, b.is_negative())
        }
        (Some('c'), x) if x.is_int() => {
            let c = x.as_i64().and_then(|i| char::from_u32(i as u32)).unwrap_or('\u{fffd}');
            (c.to_string(), false, false)
        }
        (None, x) if x.is_int() && precision.is_none() => {
            let b = x.as_big().unwrap();
            (b.abs().to_string(), true, b.is_negative())
        }
        (Some('f' | 'F' | 'e' | 'E' | 'g' | 'G' | '%'), x) | (None, x) if x.is_number() => {
            let f = x.as_f64().unwrap_or(f64::INFINITY);
            let neg = f.is_sign_negative() && !(f == 0.0 && !matches!(x, Value::Float(_)));
            let a = f.abs();
            let s = match ty {
                Some('f' | 'F') => fixed(a, precision.unwrap_or(6)),
                Some('%') => format!("{}%", fixed(a * 100.0, precision.unwrap_or(6))),
                Some('e' | 'E') => {
                    let s = sci(a, precision.unwrap_or(6));
                    if ty == Some('E') {
                        s.to_uppercase()
                    } else {
                        s
                    }
                }
                Some('g' | 'G') => general(a, precision.unwrap_or(6), alt),
                None => match precision {
                    Some(p) => general(a, p.max(1), false),
                    None => float_repr(a),
                },
                _ => unreachable!(),
            };
            (s, true, neg)
        }
        (Some(c), _) => return Err(bad_code(c)),
        (None, other) => (py_str(other), false, false),
    };
    if let Some(g) = grouping {
        if numeric {
            let (int_part, rest) = match body.find(|c: char| !c.is_ascii_digit()) {
                Some(p) => (body[..p].to_string(), body[p..].to_string()),
                None => (body.clone(), String::new()),
            };
            let mut grouped = String::new();
            for (n, c) in int_part.chars().enumerate() {
                if n > 0 && (int_part.len() - n) % 3 == 0 {
                    grouped.push(g);
                }
                grouped.push(c);
            }
            body = grouped + &rest;
        }
    }
    let sign_str = if numeric {
        match (negative, sign) {
            (true, _) => "-",
            (false, '+') => "+",
            (false, ' ') => " ",
            _ => "",
        }
    } else {
        ""
    };
    let len = sign_str.chars().count() + body.chars().count();
    let pad = width.saturating_sub(len);
    let align = align.unwrap_or(if numeric { '>' } else { '<' });
    let padding = |n: usize| std::iter::repeat_n(fill, n).collect::<String>();
    Ok(match align {
        '<' => format!("{sign_str}{body}{}", padding(pad)),
        '>' => format!("{}{sign_str}{body}", padding(pad)),
        '^' => format!("{}{sign_str}{body}{}", padding(pad / 2), padding(pad - pad / 2)),
        _ => format!("{sign_str}{}{body}", padding(pad)),
    })
}

fn fixed(a: f64, p: usize) -> String {
    if a.is_infinite() {
        return "inf".into();
    }
    if a.is_nan() {
        return "nan".into();
    }
    format!("{:.*}", p, a)
}

fn sci(a: f64, p: usize) -> String {
    if !a.is_finite() {
        return fixed(a, p);
    }
    let s = format!("{:.*e}", p, a);
    let (m, e) = s.split_once('e').unwrap();
    let e: i32 = e.parse().unwrap();
    format!("{m}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
}

fn general(a: f64, p: usize, alt: bool) -> String {
    if !a.is_finite() {
        return fixed(a, p);
    }
    let p = p.max(1);
    if a == 0.0 {
        return if alt { format!("{:.*}", p - 1, 0.0) } else { "0".into() };
    }
    let s = format!("{:.*e}", p - 1, a);
    let exp: i32 = s.split_once('e').unwrap().1.parse().unwrap();
    let out = if exp < -4 || exp >= p as i32 {
        sci(a, p - 1)
    } else {
        format!("{:.*}", (p as i32 - 1 - exp).max(0) as usize, a)
    };
    if alt {
        return out;
    }
    // strip trailing zeros in the mantissa
    let (mant, exp_part) = match out.find('e') {
        Some(i) => (out[..i].to_string(), out[i..].to_string()),
        None => (out.clone(), String::new()),
    };
    let mant = if mant.contains('.') { mant.trim_end_matches('0').trim_end_matches('.').to_string() } else { mant };
    mant + &exp_part
}
