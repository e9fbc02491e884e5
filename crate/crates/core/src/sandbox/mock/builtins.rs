//! Builtin functions, types, methods and the small standard-library
//! surface the mock interpreter provides.

use super::interp::{exc, raise, Interp, R};
use super::value::*;
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};
use parking_lot::Mutex;
use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

const FUNCS: &[&str] = &[
    "print",
    "input",
    "len",
    "sum",
    "min",
    "max",
    "abs",
    "sorted",
    "reversed",
    "enumerate",
    "zip",
    "map",
    "filter",
    "any",
    "all",
    "round",
    "divmod",
    "pow",
    "chr",
    "ord",
    "isinstance",
    "type",
    "repr",
    "hex",
    "bin",
    "oct",
    "format",
    "exit",
    "quit",
    "iter",
    "next",
    "hash",
    "callable",
    "id",
];

const TYPES: &[&str] = &["int", "float", "str", "bool", "list", "tuple", "dict", "set", "frozenset", "range", "object"];

/// Exception types and their parents.
const EXCEPTIONS: &[(&str, &str)] = &[
    ("BaseException", ""),
    ("SystemExit", "BaseException"),
    ("KeyboardInterrupt", "BaseException"),
    ("Exception", "BaseException"),
    ("ArithmeticError", "Exception"),
    ("ZeroDivisionError", "ArithmeticError"),
    ("OverflowError", "ArithmeticError"),
    ("LookupError", "Exception"),
    ("IndexError", "LookupError"),
    ("KeyError", "LookupError"),
    ("ValueError", "Exception"),
    ("TypeError", "Exception"),
    ("NameError", "Exception"),
    ("UnboundLocalError", "NameError"),
    ("AttributeError", "Exception"),
    ("RuntimeError", "Exception"),
    ("RecursionError", "RuntimeError"),
    ("NotImplementedError", "RuntimeError"),
    ("StopIteration", "Exception"),
    ("AssertionError", "Exception"),
    ("ImportError", "Exception"),
    ("ModuleNotFoundError", "ImportError"),
    ("EOFError", "Exception"),
    ("MemoryError", "Exception"),
    ("OSError", "Exception"),
    ("SyntaxError", "Exception"),
    ("IndentationError", "SyntaxError"),
];

const MODULES: &[&str] = &["math", "sys", "itertools", "functools", "string", "heapq", "bisect"];

/// Module-level callables, qualified by module name.
const MODULE_FUNCS: &[&str] = &[
    "math.sqrt",
    "math.isqrt",
    "math.floor",
    "math.ceil",
    "math.trunc",
    "math.gcd",
    "math.lcm",
    "math.factorial",
    "math.comb",
    "math.perm",
    "math.log",
    "math.log2",
    "math.log10",
    "math.exp",
    "math.sin",
    "math.cos",
    "math.tan",
    "math.asin",
    "math.acos",
    "math.atan",
    "math.atan2",
    "math.hypot",
    "math.fabs",
    "math.pow",
    "math.isclose",
    "math.isfinite",
    "math.isinf",
    "math.isnan",
    "math.prod",
    "math.dist",
    "math.degrees",
    "math.radians",
    "sys.exit",
    "sys.setrecursionlimit",
    "sys.getrecursionlimit",
    "itertools.permutations",
    "itertools.combinations",
    "itertools.combinations_with_replacement",
    "itertools.product",
    "itertools.accumulate",
    "itertools.chain",
    "itertools.islice",
    "functools.reduce",
    "functools.lru_cache",
    "functools.cache",
    "functools.partial",
    "functools.cmp_to_key",
    "heapq.heappush",
    "heapq.heappop",
    "heapq.heapify",
    "heapq.heappushpop",
    "heapq.heapreplace",
    "heapq.nlargest",
    "heapq.nsmallest",
    "bisect.bisect_left",
    "bisect.bisect_right",
    "bisect.bisect",
    "bisect.insort",
    "bisect.insort_left",
    "bisect.insort_right",
];

const MODULE_CONSTS: &[(&str, &str)] = &[
    ("math", "pi"),
    ("math", "e"),
    ("math", "tau"),
    ("math", "inf"),
    ("math", "nan"),
    ("sys", "stdin"),
    ("sys", "stdout"),
    ("sys", "stderr"),
    ("sys", "maxsize"),
    ("string", "ascii_lowercase"),
    ("string", "ascii_uppercase"),
    ("string", "ascii_letters"),
    ("string", "digits"),
    ("string", "hexdigits"),
    ("string", "punctuation"),
    ("string", "whitespace"),
];

const STR_METHODS: &[&str] = &[
    "split",
    "rsplit",
    "strip",
    "lstrip",
    "rstrip",
    "join",
    "replace",
    "startswith",
    "endswith",
    "find",
    "rfind",
    "index",
    "rindex",
    "count",
    "upper",
    "lower",
    "title",
    "capitalize",
    "swapcase",
    "casefold",
    "isdigit",
    "isalpha",
    "isalnum",
    "isspace",
    "isupper",
    "islower",
    "isnumeric",
    "isdecimal",
    "format",
    "zfill",
    "center",
    "ljust",
    "rjust",
    "splitlines",
    "partition",
    "rpartition",
];
const LIST_METHODS: &[&str] =
    &["append", "extend", "insert", "pop", "remove", "index", "count", "sort", "reverse", "clear", "copy"];
const DICT_METHODS: &[&str] =
    &["get", "keys", "values", "items", "pop", "setdefault", "update", "clear", "copy", "popitem"];
const SET_METHODS: &[&str] = &[
    "add",
    "remove",
    "discard",
    "pop",
    "union",
    "intersection",
    "difference",
    "symmetric_difference",
    "issubset",
    "issuperset",
    "isdisjoint",
    "update",
    "clear",
    "copy",
];
const TUPLE_METHODS: &[&str] = &["index", "count"];

/// Looks up a name in the builtin namespace.
pub fn builtin(name: &str) -> Option<Value> {
    if let Some(f) = FUNCS.iter().find(|f| **f == name) {
        return Some(Value::Builtin(f));
    }
    if TYPES.contains(&name) || EXCEPTIONS.iter().any(|(e, _)| *e == name) {
        return Some(Value::Type(Arc::from(name)));
    }
    None
}

/// Public names of a module, used by `from m import *`.
pub fn module_names(module: &str) -> Vec<&'static str> {
    let mut out: Vec<&'static str> =
        MODULE_FUNCS.iter().filter_map(|q| q.split_once('.').filter(|(m, _)| *m == module).map(|(_, n)| n)).collect();
    out.extend(MODULE_CONSTS.iter().filter(|(m, _)| *m == module).map(|(_, n)| *n));
    out
}

pub fn is_exception_type(t: &str) -> bool {
    EXCEPTIONS.iter().any(|(e, _)| *e == t)
}

/// Whether exception `kind` is `t` or derives from it.
pub fn exc_is_subclass(kind: &str, t: &str) -> bool {
    let mut cur = kind;
    loop {
        if cur == t {
            return true;
        }
        match EXCEPTIONS.iter().find(|(e, _)| *e == cur) {
            Some((_, parent)) if !parent.is_empty() => cur = parent,
            // unknown kinds behave as direct Exception subclasses
            None if cur != "Exception" => cur = "Exception",
            _ => return false,
        }
    }
}

fn type_matches(v: &Value, t: &str) -> bool {
    match t {
        "object" => true,
        "int" => v.is_int(),
        "float" => matches!(v, Value::Float(_)),
        "str" => matches!(v, Value::Str(_)),
        "bool" => matches!(v, Value::Bool(_)),
        "list" => matches!(v, Value::List(_)),
        "tuple" => matches!(v, Value::Tuple(_)),
        "dict" => matches!(v, Value::Dict(_)),
        "set" | "frozenset" => matches!(v, Value::Set(_)),
        "range" => matches!(v, Value::Range(..)),
        _ => match v {
            Value::Exc(e) => exc_is_subclass(&e.kind, t),
            other => other.type_name() == t,
        },
    }
}

// ------------------------------------------------------------------ helpers

fn kwarg(kwargs: &mut Vec<(String, Value)>, name: &str) -> Option<Value> {
    let i = kwargs.iter().position(|(k, _)| k == name)?;
    Some(kwargs.remove(i).1)
}

fn no_kwargs(fname: &str, kwargs: &[(String, Value)]) -> R<()> {
    match kwargs.first() {
        Some((k, _)) => raise("TypeError", format!("{fname}() got an unexpected keyword argument '{k}'")),
        None => Ok(()),
    }
}

fn arity(fname: &str, args: &[Value], min: usize, max: usize) -> R<()> {
    let n = args.len();
    if n >= min && n <= max {
        return Ok(());
    }
    if min == max {
        let plural = if min == 1 { "" } else { "s" };
        return raise("TypeError", format!("{fname}() takes exactly {min} argument{plural} ({n} given)"));
    }
    if n < min {
        let plural = if min == 1 { "" } else { "s" };
        raise("TypeError", format!("{fname} expected at least {min} argument{plural}, got {n}"))
    } else {
        let plural = if max == 1 { "" } else { "s" };
        raise("TypeError", format!("{fname} expected at most {max} argument{plural}, got {n}"))
    }
}

fn to_i64(v: &Value) -> R<i64> {
    match v {
        Value::Big(_) => raise("OverflowError", "Python int too large to convert to C ssize_t"),
        _ => v
            .as_i64()
            .ok_or_else(|| exc("TypeError", format!("'{}' object cannot be interpreted as an integer", v.type_name()))),
    }
}

fn to_f64(v: &Value) -> R<f64> {
    match v {
        Value::Big(b) => b
            .to_f64()
            .filter(|f| f.is_finite())
            .ok_or_else(|| exc("OverflowError", "int too large to convert to float")),
        _ => v.as_f64().ok_or_else(|| exc("TypeError", format!("must be real number, not {}", v.type_name()))),
    }
}

fn to_big(v: &Value) -> R<BigInt> {
    v.as_big()
        .ok_or_else(|| exc("TypeError", format!("'{}' object cannot be interpreted as an integer", v.type_name())))
}

fn str_arg<'a>(v: &'a Value, what: &str) -> R<&'a str> {
    match v {
        Value::Str(s) => Ok(s),
        other => raise("TypeError", format!("{what} must be str, not {}", other.type_name())),
    }
}

fn iter_value(items: Vec<Value>) -> Value {
    Value::Iter(Arc::new(Mutex::new((items, 0))))
}

fn dict_value(map: DictMap) -> Value {
    Value::Dict(Arc::new(Mutex::new(map)))
}

fn float_to_int(f: f64) -> R<Value> {
    if f.is_nan() {
        return raise("ValueError", "cannot convert float NaN to integer");
    }
    if f.is_infinite() {
        return raise("OverflowError", "cannot convert float infinity to integer");
    }
    let t = f.trunc();
    if t.abs() < 9.0e18 {
        return Ok(Value::Int(t as i64));
    }
    let b: BigInt = num_traits::FromPrimitive::from_f64(t).unwrap_or_default();
    Ok(int_from_big(b))
}

fn parse_int_str(s: &str, base: u32) -> Option<BigInt> {
    let t = s.trim();
    let (neg, body) = match t.as_bytes().first() {
        Some(b'-') => (true, &t[1..]),
        Some(b'+') => (false, &t[1..]),
        _ => (false, t),
    };
    let lower = body.to_ascii_lowercase();
    let (base, digits) = match (base, lower.get(..2)) {
        (0 | 16, Some("0x")) => (16, &body[2..]),
        (0 | 8, Some("0o")) => (8, &body[2..]),
        (0 | 2, Some("0b")) => (2, &body[2..]),
        (0, _) => (10, body),
        (b, _) => (b, body),
    };
    let digits = digits.strip_prefix('_').filter(|_| base != 10).unwrap_or(digits);
    if digits.is_empty() || digits.starts_with('_') || digits.ends_with('_') || digits.contains("__") {
        return None;
    }
    let clean: String = digits.chars().filter(|c| *c != '_').collect();
    if !clean.chars().all(|c| c.is_digit(base)) {
        return None;
    }
    let v = BigInt::parse_bytes(clean.as_bytes(), base)?;
    Some(if neg { -v } else { v })
}

fn parse_float_str(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.is_empty() || t.starts_with('_') || t.ends_with('_') || t.contains("__") {
        return None;
    }
    let clean: String = t.chars().filter(|c| *c != '_').collect();
    let lower = clean.to_ascii_lowercase();
    let body = lower.trim_start_matches(['+', '-']);
    if body.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | '+' | '-'))
        || matches!(body, "inf" | "infinity" | "nan")
    {
        clean.parse().ok()
    } else {
        None
    }
}

/// Stable merge sort with a fallible `<`.
fn merge_sort(items: Vec<usize>, less: &mut dyn FnMut(usize, usize) -> R<bool>) -> R<Vec<usize>> {
    if items.len() <= 1 {
        return Ok(items);
    }
    let mut runs: Vec<Vec<usize>> = items.into_iter().map(|i| vec![i]).collect();
    while runs.len() > 1 {
        let mut next = Vec::with_capacity(runs.len() / 2 + 1);
        let mut it = runs.into_iter();
        while let Some(a) = it.next() {
            let Some(b) = it.next() else {
                next.push(a);
                break;
            };
            let mut out = Vec::with_capacity(a.len() + b.len());
            let (mut i, mut j) = (0, 0);
            while i < a.len() && j < b.len() {
                if less(b[j], a[i])? {
                    out.push(b[j]);
                    j += 1;
                } else {
                    out.push(a[i]);
                    i += 1;
                }
            }
            out.extend_from_slice(&a[i..]);
            out.extend_from_slice(&b[j..]);
            next.push(out);
        }
        runs = next;
    }
    Ok(runs.pop().unwrap())
}

fn lt(a: &Value, b: &Value) -> R<bool> {
    Ok(py_cmp(a, b, "<").map_err(|m| exc("TypeError", m))? == Some(Ordering::Less))
}

fn checked_len(n: u128) -> R<()> {
    if n > 20_000_000 {
        return raise("MemoryError", "");
    }
    Ok(())
}

fn permutations(pool: &[Value], r: usize) -> Vec<Vec<Value>> {
    let n = pool.len();
    if r > n {
        return vec![];
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut cycles: Vec<usize> = (n - r + 1..=n).rev().collect();
    out.push(idx[..r].iter().map(|&i| pool[i].clone()).collect());
    if n == 0 {
        return out;
    }
    'outer: loop {
        for i in (0..r).rev() {
            cycles[i] -= 1;
            if cycles[i] == 0 {
                let x = idx.remove(i);
                idx.push(x);
                cycles[i] = n - i;
            } else {
                let j = cycles[i];
                idx.swap(i, n - j);
                out.push(idx[..r].iter().map(|&i| pool[i].clone()).collect());
                continue 'outer;
            }
        }
        return out;
    }
}

fn combinations(pool: &[Value], r: usize, replace: bool) -> Vec<Vec<Value>> {
    let n = pool.len();
    let mut out = Vec::new();
    if (!replace && r > n) || (replace && n == 0 && r > 0) {
        return out;
    }
    let mut idx: Vec<usize> = if replace { vec![0; r] } else { (0..r).collect() };
    loop {
        out.push(idx.iter().map(|&i| pool[i].clone()).collect());
        let mut i = r;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            let limit = if replace { n - 1 } else { i + n - r };
            if idx[i] != limit {
                break;
            }
        }
        if replace {
            let v = idx[i] + 1;
            for k in idx.iter_mut().skip(i) {
                *k = v;
            }
        } else {
            idx[i] += 1;
            for j in i + 1..r {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
}

fn binomial(n: &BigInt, k: &BigInt) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = std::cmp::min(k.clone(), n - k).to_u64().unwrap_or(0);
    let mut acc = BigInt::from(1);
    for i in 0..k {
        acc = acc * (n - BigInt::from(i)) / BigInt::from(i + 1);
    }
    acc
}

fn round_half_even_big(x: &BigInt, unit: &BigInt) -> BigInt {
    let (q, r) = x.div_mod_floor(unit);
    let twice: BigInt = &r * 2;
    let q = match twice.cmp(unit) {
        Ordering::Greater => q + 1,
        Ordering::Equal if q.is_odd() => q + 1,
        _ => q,
    };
    q * unit
}

// ------------------------------------------------------------------ %-format

pub(crate) fn percent_format(interp: &mut Interp, fmt: &str, args: &Value) -> R<String> {
    let mut values: Vec<Value> = match args {
        Value::Tuple(t) => t.to_vec(),
        other => vec![other.clone()],
    }
    .into_iter()
    .rev()
    .collect();
    let chars: Vec<char> = fmt.chars().collect();
    let mut out = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        i += 1;
        if c != '%' {
            out.push(c);
            continue;
        }
        let mut flags = String::new();
        while i < chars.len() && "-+ 0#".contains(chars[i]) {
            flags.push(chars[i]);
            i += 1;
        }
        let mut width = String::new();
        if i < chars.len() && chars[i] == '*' {
            i += 1;
            let w = values.pop().ok_or_else(|| exc("TypeError", "not enough arguments for format string"))?;
            width = to_i64(&w)?.to_string();
        }
        while i < chars.len() && chars[i].is_ascii_digit() {
            width.push(chars[i]);
            i += 1;
        }
        let mut precision = String::new();
        if i < chars.len() && chars[i] == '.' {
            precision.push('.');
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                precision.push(chars[i]);
                i += 1;
            }
            if precision == "." {
                precision.push('0');
            }
        }
        let Some(&conv) = chars.get(i) else {
            return raise("ValueError", "incomplete format");
        };
        i += 1;
        if conv == '%' {
            out.push('%');
            continue;
        }
        let v = values.pop().ok_or_else(|| exc("TypeError", "not enough arguments for format string"))?;
        let align = if flags.contains('-') { "<" } else { "" };
        let sign = if flags.contains('+') {
            "+"
        } else if flags.contains(' ') {
            " "
        } else {
            ""
        };
        let zero = if flags.contains('0') && !flags.contains('-') { "0" } else { "" };
        let alt = if flags.contains('#') { "#" } else { "" };
        let piece = match conv {
            's' | 'r' | 'a' => {
                let s = if conv == 's' { py_str(&v) } else { py_repr(&v) };
                let s = match precision.get(1..).and_then(|p| p.parse::<usize>().ok()) {
                    Some(p) => s.chars().take(p).collect(),
                    None => s,
                };
                let w = width.parse::<usize>().unwrap_or(0);
                let pad = w.saturating_sub(s.chars().count());
                if align == "<" {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            }
            'd' | 'i' | 'u' => {
                let n = match &v {
                    Value::Float(f) => float_to_int(*f)?,
                    x if x.is_int() => x.clone(),
                    x => {
                        return raise(
                            "TypeError",
                            format!("%{conv} format: a real number is required, not {}", x.type_name()),
                        )
                    }
                };
                let spec = format!("{align}{sign}{zero}{width}d");
                format_with_spec(&n, &spec).map_err(|m| exc("ValueError", m))?
            }
            'f' | 'F' | 'e' | 'E' | 'g' | 'G' => {
                let f =
                    to_f64(&v).map_err(|_| exc("TypeError", format!("must be real number, not {}", v.type_name())))?;
                let prec = if precision.is_empty() { ".6".to_string() } else { precision.clone() };
                let spec = format!("{align}{sign}{zero}{alt}{width}{prec}{conv}");
                format_with_spec(&Value::Float(f), &spec).map_err(|m| exc("ValueError", m))?
            }
            'x' | 'X' | 'o' => {
                let spec = format!("{align}{sign}{alt}{zero}{width}{conv}");
                let n = if v.is_int() {
                    v
                } else {
                    return raise(
                        "TypeError",
                        format!("%{conv} format: an integer is required, not {}", v.type_name()),
                    );
                };
                format_with_spec(&n, &spec).map_err(|m| exc("ValueError", m))?
            }
            'c' => match &v {
                Value::Str(s) if s.chars().count() == 1 => s.to_string(),
                x => {
                    let code = to_i64(x)?;
                    char::from_u32(code as u32).map(String::from).unwrap_or_default()
                }
            },
            other => {
                return raise(
                    "ValueError",
                    format!("unsupported format character '{other}' (0x{:x}) at index {}", other as u32, i - 1),
                )
            }
        };
        out.push_str(&piece);
    }
    if !values.is_empty() {
        return raise("TypeError", "not all arguments converted during string formatting");
    }
    let _ = interp;
    Ok(out)
}

/// `str.format`.
fn str_format(fmt: &str, args: &[Value], kwargs: &[(String, Value)]) -> R<String> {
    let chars: Vec<char> = fmt.chars().collect();
    let mut out = String::new();
    let mut auto = 0usize;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '{' && chars.get(i + 1) == Some(&'{') {
            out.push('{');
            i += 2;
            continue;
        }
        if c == '}' {
            if chars.get(i + 1) == Some(&'}') {
                out.push('}');
                i += 2;
                continue;
            }
            return raise("ValueError", "Single '}' encountered in format string");
        }
        if c != '{' {
            out.push(c);
            i += 1;
            continue;
        }
        // collect the field, honoring nested braces in the spec
        let mut depth = 1;
        let mut j = i + 1;
        while j < chars.len() {
            match chars[j] {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                _ => {}
            }
            j += 1;
        }
        if j >= chars.len() {
            return raise("ValueError", "Single '{' encountered in format string");
        }
        let field: String = chars[i + 1..j].iter().collect();
        i = j + 1;
        let (head, spec) = match field.find(':') {
            Some(p) => (&field[..p], &field[p + 1..]),
            None => (field.as_str(), ""),
        };
        let (name, conv) = match head.find('!') {
            Some(p) => (&head[..p], head[p + 1..].chars().next()),
            None => (head, None),
        };
        let v = if name.is_empty() {
            let v = args.get(auto).cloned().ok_or_else(|| {
                exc("IndexError", format!("Replacement index {auto} out of range for positional args tuple"))
            })?;
            auto += 1;
            v
        } else if let Ok(k) = name.parse::<usize>() {
            args.get(k).cloned().ok_or_else(|| {
                exc("IndexError", format!("Replacement index {k} out of range for positional args tuple"))
            })?
        } else {
            kwargs
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| exc("KeyError", format!("'{name}'")))?
        };
        let spec = if spec.contains('{') { str_format(spec, args, kwargs)? } else { spec.to_string() };
        let v = match conv {
            Some('r') | Some('a') => str_value(py_repr(&v)),
            Some('s') => str_value(py_str(&v)),
            _ => v,
        };
        out.push_str(&format_with_spec(&v, &spec).map_err(|m| exc("ValueError", m))?);
    }
    Ok(out)
}

fn split_whitespace(s: &str, maxsplit: i64, from_right: bool) -> Vec<Value> {
    if maxsplit < 0 {
        return s.split_whitespace().map(str_value).collect();
    }
    let mut parts = Vec::new();
    if from_right {
        let mut rest = s.trim_end();
        while !rest.is_empty() && (parts.len() as i64) < maxsplit {
            match rest.rfind(char::is_whitespace) {
                Some(p) => {
                    let ws_len = rest[p..].chars().next().unwrap().len_utf8();
                    parts.push(str_value(&rest[p + ws_len..]));
                    rest = rest[..p].trim_end();
                }
                None => break,
            }
        }
        if !rest.is_empty() {
            parts.push(str_value(rest));
        }
        parts.reverse();
    } else {
        let mut rest = s.trim_start();
        while !rest.is_empty() && (parts.len() as i64) < maxsplit {
            match rest.find(char::is_whitespace) {
                Some(p) => {
                    parts.push(str_value(&rest[..p]));
                    rest = rest[p..].trim_start();
                }
                None => break,
            }
        }
        if !rest.is_empty() {
            parts.push(str_value(rest));
        }
    }
    parts
}

fn char_index_of(s: &str, byte: usize) -> i64 {
    s[..byte].chars().count() as i64
}

fn byte_of_char(s: &str, ci: usize) -> usize {
    s.char_indices().nth(ci).map(|(b, _)| b).unwrap_or(s.len())
}

/// Resolves optional `start`/`end` arguments of str search methods to a
/// byte range.
fn search_range(s: &str, args: &[Value]) -> R<(usize, usize)> {
    let n = s.chars().count() as i64;
    let norm = |v: Option<&Value>, dflt: i64| -> R<i64> {
        match v {
            None | Some(Value::None) => Ok(dflt),
            Some(v) => {
                let i = to_i64(v)?;
                Ok(if i < 0 { (i + n).max(0) } else { i.min(n) })
            }
        }
    };
    let a = norm(args.get(1), 0)?;
    let b = norm(args.get(2), n)?;
    let b = b.max(a);
    Ok((byte_of_char(s, a as usize), byte_of_char(s, b as usize)))
}

// ------------------------------------------------------------------ Interp

impl Interp {
    pub(crate) fn import(&mut self, module: &str) -> R<Value> {
        match MODULES.iter().find(|m| **m == module) {
            Some(m) => Ok(Value::Module(m)),
            None => raise("ModuleNotFoundError", format!("No module named '{module}'")),
        }
    }

    pub(crate) fn module_attr(&mut self, module: &str, name: &str) -> R<Value> {
        let q = format!("{module}.{name}");
        if let Some(f) = MODULE_FUNCS.iter().find(|f| **f == q) {
            return Ok(Value::Builtin(f));
        }
        Ok(match (module, name) {
            ("math", "pi") => Value::Float(std::f64::consts::PI),
            ("math", "e") => Value::Float(std::f64::consts::E),
            ("math", "tau") => Value::Float(std::f64::consts::TAU),
            ("math", "inf") => Value::Float(f64::INFINITY),
            ("math", "nan") => Value::Float(f64::NAN),
            ("sys", "stdin") => Value::Stream(Stream::Stdin),
            ("sys", "stdout") => Value::Stream(Stream::Stdout),
            ("sys", "stderr") => Value::Stream(Stream::Stderr),
            ("sys", "maxsize") => Value::Int(i64::MAX),
            ("string", "ascii_lowercase") => str_value("abcdefghijklmnopqrstuvwxyz"),
            ("string", "ascii_uppercase") => str_value("ABCDEFGHIJKLMNOPQRSTUVWXYZ"),
            ("string", "ascii_letters") => str_value("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"),
            ("string", "digits") => str_value("0123456789"),
            ("string", "hexdigits") => str_value("0123456789abcdefABCDEF"),
            ("string", "punctuation") => str_value("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~"),
            ("string", "whitespace") => str_value(" \t\n\r\x0b\x0c"),
            _ => return raise("AttributeError", format!("module '{module}' has no attribute '{name}'")),
        })
    }

    pub(crate) fn get_attr(&mut self, o: &Value, name: &str) -> R<Value> {
        let table: &[&str] = match o {
            Value::Module(m) => return self.module_attr(m, name),
            Value::Exc(e) if name == "args" => return Ok(tuple_value(e.args.clone())),
            Value::Str(_) => STR_METHODS,
            Value::List(_) => LIST_METHODS,
            Value::Dict(_) => DICT_METHODS,
            Value::Set(_) => SET_METHODS,
            Value::Tuple(_) => TUPLE_METHODS,
            Value::Int(_) | Value::Big(_) | Value::Bool(_) => &["bit_length"],
            Value::Float(_) => &["is_integer"],
            Value::Stream(Stream::Stdin) => &["readline", "read", "readlines"],
            Value::Stream(_) => &["write", "flush"],
            Value::Type(t) => {
                let ok = match &**t {
                    "str" => STR_METHODS.contains(&name),
                    "list" => LIST_METHODS.contains(&name),
                    "dict" => DICT_METHODS.contains(&name) || name == "fromkeys",
                    "set" => SET_METHODS.contains(&name),
                    "tuple" => TUPLE_METHODS.contains(&name),
                    "int" => name == "bit_length",
                    _ => false,
                };
                if ok {
                    return Ok(Value::Method(Box::new(o.clone()), Arc::from(name)));
                }
                return raise("AttributeError", format!("type object '{t}' has no attribute '{name}'"));
            }
            _ => &[],
        };
        if table.contains(&name) {
            Ok(Value::Method(Box::new(o.clone()), Arc::from(name)))
        } else {
            raise("AttributeError", format!("'{}' object has no attribute '{name}'", o.type_name()))
        }
    }

    fn sort_values(&mut self, items: Vec<Value>, key: Option<Value>, reverse: bool) -> R<Vec<Value>> {
        let keys: Vec<Value> = match key {
            Some(k) if !matches!(k, Value::None) => {
                let mut ks = Vec::with_capacity(items.len());
                for v in &items {
                    ks.push(self.call(&k, vec![v.clone()], vec![])?);
                }
                ks
            }
            _ => items.clone(),
        };
        let idx: Vec<usize> = (0..items.len()).collect();
        let mut ticks = 0u32;
        let order = merge_sort(idx, &mut |a, b| {
            ticks = ticks.wrapping_add(1);
            if reverse {
                lt(&keys[b], &keys[a])
            } else {
                lt(&keys[a], &keys[b])
            }
        })?;
        for _ in 0..(ticks / 64) {
            self.tick()?;
        }
        Ok(order.into_iter().map(|i| items[i].clone()).collect())
    }

    fn min_max(&mut self, fname: &str, args: Vec<Value>, mut kwargs: Vec<(String, Value)>) -> R<Value> {
        let key = kwarg(&mut kwargs, "key").filter(|k| !matches!(k, Value::None));
        let default = kwarg(&mut kwargs, "default");
        no_kwargs(fname, &kwargs)?;
        let items = match args.len() {
            0 => return raise("TypeError", format!("{fname} expected at least 1 argument, got 0")),
            1 => self.iterate(&args[0])?,
            _ => args,
        };
        if items.is_empty() {
            return match default {
                Some(d) => Ok(d),
                None => raise("ValueError", format!("{fname}() arg is an empty sequence")),
            };
        }
        let want = if fname == "max" { Ordering::Greater } else { Ordering::Less };
        let mut best = items[0].clone();
        let mut best_key = match &key {
            Some(k) => self.call(k, vec![best.clone()], vec![])?,
            None => best.clone(),
        };
        for v in items.into_iter().skip(1) {
            let k = match &key {
                Some(kf) => self.call(kf, vec![v.clone()], vec![])?,
                None => v.clone(),
            };
            let sym = if fname == "max" { ">" } else { "<" };
            if py_cmp(&k, &best_key, sym).map_err(|m| exc("TypeError", m))? == Some(want) {
                best = v;
                best_key = k;
            }
        }
        Ok(best)
    }

    pub(crate) fn call_builtin(&mut self, name: &str, args: Vec<Value>, mut kwargs: Vec<(String, Value)>) -> R<Value> {
        if let Some((module, fname)) = name.split_once('.') {
            return self.call_module_func(module, fname, args, kwargs);
        }
        match name {
            "print" => {
                let sep = kwarg(&mut kwargs, "sep").filter(|v| !matches!(v, Value::None));
                let end = kwarg(&mut kwargs, "end").filter(|v| !matches!(v, Value::None));
                let file = kwarg(&mut kwargs, "file");
                kwarg(&mut kwargs, "flush");
                no_kwargs("print", &kwargs)?;
                let sep = match &sep {
                    Some(v) => str_arg(v, "sep")?.to_string(),
                    None => " ".into(),
                };
                let end = match &end {
                    Some(v) => str_arg(v, "end")?.to_string(),
                    None => "\n".into(),
                };
                let mut text = args.iter().map(py_str).collect::<Vec<_>>().join(&sep);
                text.push_str(&end);
                match file {
                    Some(Value::Stream(Stream::Stderr)) => self.write_err(&text),
                    None | Some(Value::None) | Some(Value::Stream(Stream::Stdout)) => self.write_out(&text),
                    Some(other) => {
                        return raise(
                            "AttributeError",
                            format!("'{}' object has no attribute 'write'", other.type_name()),
                        )
                    }
                }
                Ok(Value::None)
            }
            "input" => {
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 0, 1)?;
                if let Some(p) = args.first() {
                    let p = py_str(p);
                    self.write_out(&p);
                }
                match self.read_line() {
                    Some(mut l) => {
                        if l.ends_with('\n') {
                            l.pop();
                        }
                        Ok(str_value(l))
                    }
                    None => raise("EOFError", "EOF when reading a line"),
                }
            }
            "len" => {
                arity(name, &args, 1, 1)?;
                let n = match &args[0] {
                    Value::Str(s) => s.chars().count() as i64,
                    Value::List(l) => l.lock().len() as i64,
                    Value::Tuple(t) => t.len() as i64,
                    Value::Dict(d) => d.lock().len() as i64,
                    Value::Set(s) => s.lock().len() as i64,
                    Value::Range(a, b, s) => range_len(*a, *b, *s),
                    other => return raise("TypeError", format!("object of type '{}' has no len()", other.type_name())),
                };
                Ok(Value::Int(n))
            }
            "sum" => {
                let start = kwarg(&mut kwargs, "start");
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 1, 2)?;
                let mut acc = args.get(1).cloned().or(start).unwrap_or(Value::Int(0));
                if matches!(acc, Value::Str(_)) {
                    return raise("TypeError", "sum() can't sum strings [use ''.join(seq) instead]");
                }
                if let Value::Range(a, b, s) = args[0] {
                    let n = range_len(a, b, s);
                    if n > 0 && acc.is_int() {
                        // closed form keeps huge ranges cheap
                        let n = BigInt::from(n);
                        let first = BigInt::from(a);
                        let last = &first + (&n - 1) * BigInt::from(s);
                        let total = (&first + last) * n / 2;
                        return Ok(int_from_big(acc.as_big().unwrap() + total));
                    }
                }
                for v in self.iterate(&args[0])? {
                    self.tick()?;
                    acc = self.binop(super::ast::BinOp::Add, &acc, &v)?;
                }
                Ok(acc)
            }
            "min" | "max" => self.min_max(name, args, kwargs),
            "abs" => {
                arity(name, &args, 1, 1)?;
                match &args[0] {
                    Value::Float(f) => Ok(Value::Float(f.abs())),
                    v if v.is_int() => Ok(int_from_big(v.as_big().unwrap().abs())),
                    v => raise("TypeError", format!("bad operand type for abs(): '{}'", v.type_name())),
                }
            }
            "sorted" => {
                let key = kwarg(&mut kwargs, "key");
                let reverse = kwarg(&mut kwargs, "reverse").is_some_and(|v| v.truthy());
                no_kwargs(name, &kwargs)?;
                if args.len() != 1 {
                    return raise("TypeError", format!("sorted expected 1 argument, got {}", args.len()));
                }
                let items = self.iterate(&args[0])?;
                Ok(list_value(self.sort_values(items, key, reverse)?))
            }
            "reversed" => {
                arity(name, &args, 1, 1)?;
                match &args[0] {
                    Value::List(_) | Value::Tuple(_) | Value::Str(_) | Value::Range(..) => {}
                    other => return raise("TypeError", format!("'{}' object is not reversible", other.type_name())),
                }
                let mut items = self.iterate(&args[0])?;
                items.reverse();
                Ok(iter_value(items))
            }
            "enumerate" => {
                let start = kwarg(&mut kwargs, "start");
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 1, 2)?;
                let start = to_i64(args.get(1).or(start.as_ref()).unwrap_or(&Value::Int(0)))?;
                let items = self.iterate(&args[0])?;
                Ok(iter_value(
                    items
                        .into_iter()
                        .enumerate()
                        .map(|(i, v)| tuple_value(vec![Value::Int(start + i as i64), v]))
                        .collect(),
                ))
            }
            "zip" => {
                kwarg(&mut kwargs, "strict");
                no_kwargs(name, &kwargs)?;
                let mut cols = Vec::with_capacity(args.len());
                for a in &args {
                    cols.push(self.iterate(a)?);
                }
                let n = cols.iter().map(|c| c.len()).min().unwrap_or(0);
                Ok(iter_value((0..n).map(|i| tuple_value(cols.iter().map(|c| c[i].clone()).collect())).collect()))
            }
            "map" => {
                no_kwargs(name, &kwargs)?;
                if args.len() < 2 {
                    return raise("TypeError", "map() must have at least two arguments.");
                }
                let mut cols = Vec::new();
                for a in &args[1..] {
                    cols.push(self.iterate(a)?);
                }
                let n = cols.iter().map(|c| c.len()).min().unwrap_or(0);
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let call_args = cols.iter().map(|c| c[i].clone()).collect();
                    out.push(self.call(&args[0], call_args, vec![])?);
                }
                Ok(iter_value(out))
            }
            "filter" => {
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 2, 2)?;
                let mut out = Vec::new();
                for v in self.iterate(&args[1])? {
                    let keep = match &args[0] {
                        Value::None => v.truthy(),
                        f => self.call(f, vec![v.clone()], vec![])?.truthy(),
                    };
                    if keep {
                        out.push(v);
                    }
                }
                Ok(iter_value(out))
            }
            "any" | "all" => {
                arity(name, &args, 1, 1)?;
                let want = name == "any";
                for v in self.iterate(&args[0])? {
                    if v.truthy() == want {
                        return Ok(Value::Bool(want));
                    }
                }
                Ok(Value::Bool(!want))
            }
            "round" => {
                let nd = kwarg(&mut kwargs, "ndigits");
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 1, 2)?;
                let nd = args.get(1).cloned().or(nd).filter(|v| !matches!(v, Value::None));
                match (&args[0], nd) {
                    (Value::Float(f), None) => float_to_int(f.round_ties_even()),
                    (Value::Float(f), Some(n)) => {
                        let n = to_i64(&n)?;
                        if !f.is_finite() {
                            return Ok(Value::Float(*f));
                        }
                        if n >= 0 {
                            let s = format!("{:.*}", n.min(330) as usize, f);
                            Ok(Value::Float(s.parse().unwrap_or(*f)))
                        } else {
                            let p = 10f64.powi((-n).min(330) as i32);
                            Ok(Value::Float((f / p).round_ties_even() * p))
                        }
                    }
                    (v, None) if v.is_int() => Ok(int_from_big(v.as_big().unwrap())),
                    (v, Some(n)) if v.is_int() => {
                        let n = to_i64(&n)?;
                        if n >= 0 {
                            return Ok(int_from_big(v.as_big().unwrap()));
                        }
                        let unit = num_traits::pow::Pow::pow(BigInt::from(10), (-n) as u64);
                        Ok(int_from_big(round_half_even_big(&v.as_big().unwrap(), &unit)))
                    }
                    (v, _) => raise("TypeError", format!("type {} doesn't define __round__ method", v.type_name())),
                }
            }
            "divmod" => {
                arity(name, &args, 2, 2)?;
                let q = self.binop(super::ast::BinOp::FloorDiv, &args[0], &args[1])?;
                let r = self.binop(super::ast::BinOp::Mod, &args[0], &args[1])?;
                Ok(tuple_value(vec![q, r]))
            }
            "pow" => {
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 2, 3)?;
                match args.get(2) {
                    None | Some(Value::None) => self.binop(super::ast::BinOp::Pow, &args[0], &args[1]),
                    Some(m) => {
                        let (b, e, m) = (to_big(&args[0])?, to_big(&args[1])?, to_big(m)?);
                        if m.is_zero() {
                            return raise("ValueError", "pow() 3rd argument cannot be 0");
                        }
                        let (b, e) = if e.is_negative() {
                            let inv = mod_inverse(&b.mod_floor(&m), &m)
                                .ok_or_else(|| exc("ValueError", "base is not invertible for the given modulus"))?;
                            (inv, -e)
                        } else {
                            (b, e)
                        };
                        let r = b.modpow(&e, &m.abs());
                        let r = if m.is_negative() && !r.is_zero() { r + &m } else { r };
                        Ok(int_from_big(r))
                    }
                }
            }
            "chr" => {
                arity(name, &args, 1, 1)?;
                let i = to_i64(&args[0])?;
                match u32::try_from(i).ok().and_then(char::from_u32) {
                    Some(c) => Ok(str_value(c.to_string())),
                    None => raise("ValueError", "chr() arg not in range(0x110000)"),
                }
            }
            "ord" => {
                arity(name, &args, 1, 1)?;
                match &args[0] {
                    Value::Str(s) if s.chars().count() == 1 => Ok(Value::Int(s.chars().next().unwrap() as i64)),
                    Value::Str(s) => raise(
                        "TypeError",
                        format!("ord() expected a character, but string of length {} found", s.chars().count()),
                    ),
                    v => raise("TypeError", format!("ord() expected string of length 1, but {} found", v.type_name())),
                }
            }
            "isinstance" => {
                arity(name, &args, 2, 2)?;
                let check = |t: &Value| -> R<bool> {
                    match t {
                        Value::Type(t) => Ok(type_matches(&args[0], t)),
                        _ => raise("TypeError", "isinstance() arg 2 must be a type, a tuple of types, or a union"),
                    }
                };
                match &args[1] {
                    Value::Tuple(ts) => {
                        for t in ts.iter() {
                            if check(t)? {
                                return Ok(Value::Bool(true));
                            }
                        }
                        Ok(Value::Bool(false))
                    }
                    t => Ok(Value::Bool(check(t)?)),
                }
            }
            "type" => {
                arity(name, &args, 1, 1)?;
                Ok(Value::Type(Arc::from(args[0].type_name().as_str())))
            }
            "repr" => {
                arity(name, &args, 1, 1)?;
                Ok(str_value(py_repr(&args[0])))
            }
            "hex" | "bin" | "oct" => {
                arity(name, &args, 1, 1)?;
                let b = to_big(&args[0])?;
                let (radix, prefix) = match name {
                    "hex" => (16, "0x"),
                    "bin" => (2, "0b"),
                    _ => (8, "0o"),
                };
                let sign = if b.is_negative() { "-" } else { "" };
                Ok(str_value(format!("{sign}{prefix}{}", b.abs().to_str_radix(radix))))
            }
            "format" => {
                arity(name, &args, 1, 2)?;
                let spec = match args.get(1) {
                    Some(s) => str_arg(s, "format() argument 2")?.to_string(),
                    None => String::new(),
                };
                Ok(str_value(format_with_spec(&args[0], &spec).map_err(|m| exc("ValueError", m))?))
            }
            "exit" | "quit" => Err(super::interp::Ctrl::Exit(args.into_iter().next().unwrap_or(Value::None))),
            "iter" => {
                arity(name, &args, 1, 1)?;
                if let Value::Iter(_) = &args[0] {
                    return Ok(args[0].clone());
                }
                Ok(iter_value(self.iterate(&args[0])?))
            }
            "next" => {
                arity(name, &args, 1, 2)?;
                let Value::Iter(it) = &args[0] else {
                    return raise("TypeError", format!("'{}' object is not an iterator", args[0].type_name()));
                };
                let mut g = it.lock();
                if g.1 < g.0.len() {
                    g.1 += 1;
                    return Ok(g.0[g.1 - 1].clone());
                }
                match args.get(1) {
                    Some(d) => Ok(d.clone()),
                    None => raise("StopIteration", ""),
                }
            }
            "hash" => {
                arity(name, &args, 1, 1)?;
                use std::hash::{Hash, Hasher};
                let k = args[0].key().map_err(|m| exc("TypeError", m))?;
                if let Key::Int(i) = k {
                    return Ok(Value::Int(if i == -1 { -2 } else { i }));
                }
                let mut h = std::collections::hash_map::DefaultHasher::new();
                k.hash(&mut h);
                Ok(Value::Int((h.finish() >> 1) as i64))
            }
            "callable" => {
                arity(name, &args, 1, 1)?;
                Ok(Value::Bool(matches!(
                    args[0],
                    Value::Func(_)
                        | Value::Builtin(_)
                        | Value::Type(_)
                        | Value::Method(..)
                        | Value::Partial(..)
                        | Value::Memo(_)
                )))
            }
            "id" => {
                arity(name, &args, 1, 1)?;
                let p = match &args[0] {
                    Value::List(l) => Arc::as_ptr(l) as usize,
                    Value::Dict(d) => Arc::as_ptr(d) as usize,
                    Value::Set(s) => Arc::as_ptr(s) as usize,
                    Value::Func(f) => Arc::as_ptr(f) as usize,
                    v => py_repr(v).len(),
                };
                Ok(Value::Int(p as i64 & i64::MAX))
            }
            _ => raise("NameError", format!("name '{name}' is not defined")),
        }
    }

    pub(crate) fn construct(&mut self, t: &str, args: Vec<Value>, mut kwargs: Vec<(String, Value)>) -> R<Value> {
        if is_exception_type(t) {
            no_kwargs(t, &kwargs)?;
            return Ok(Value::Exc(Arc::new(ExcObj { kind: t.to_string(), args })));
        }
        match t {
            "int" => {
                let base = kwarg(&mut kwargs, "base");
                no_kwargs(t, &kwargs)?;
                arity(t, &args, 0, 2)?;
                let base = args.get(1).cloned().or(base);
                let Some(v) = args.first() else { return Ok(Value::Int(0)) };
                if let Some(b) = base {
                    let b = to_i64(&b)?;
                    if b != 0 && !(2..=36).contains(&b) {
                        return raise("ValueError", "int() base must be >= 2 and <= 36, or 0");
                    }
                    let Value::Str(s) = v else {
                        return raise("TypeError", "int() can't convert non-string with explicit base");
                    };
                    return parse_int_str(s, b as u32).map(int_from_big).ok_or_else(|| {
                        exc("ValueError", format!("invalid literal for int() with base {b}: {}", str_repr(s)))
                    });
                }
                match v {
                    Value::Bool(b) => Ok(Value::Int(*b as i64)),
                    x if x.is_int() => Ok(x.clone()),
                    Value::Float(f) => float_to_int(*f),
                    Value::Str(s) => parse_int_str(s, 10).map(int_from_big).ok_or_else(|| {
                        exc("ValueError", format!("invalid literal for int() with base 10: {}", str_repr(s)))
                    }),
                    other => raise(
                        "TypeError",
                        format!(
                            "int() argument must be a string, a bytes-like object or a real number, not '{}'",
                            other.type_name()
                        ),
                    ),
                }
            }
            "float" => {
                no_kwargs(t, &kwargs)?;
                arity(t, &args, 0, 1)?;
                let Some(v) = args.first() else { return Ok(Value::Float(0.0)) };
                match v {
                    Value::Float(_) => Ok(v.clone()),
                    x if x.is_int() => Ok(Value::Float(to_f64(x)?)),
                    Value::Str(s) => parse_float_str(s).map(Value::Float).ok_or_else(|| {
                        exc("ValueError", format!("could not convert string to float: {}", str_repr(s)))
                    }),
                    other => raise(
                        "TypeError",
                        format!("float() argument must be a string or a real number, not '{}'", other.type_name()),
                    ),
                }
            }
            "str" => {
                no_kwargs(t, &kwargs)?;
                arity(t, &args, 0, 1)?;
                Ok(str_value(args.first().map(py_str).unwrap_or_default()))
            }
            "bool" => {
                no_kwargs(t, &kwargs)?;
                arity(t, &args, 0, 1)?;
                Ok(Value::Bool(args.first().is_some_and(|v| v.truthy())))
            }
            "list" | "tuple" | "set" | "frozenset" => {
                no_kwargs(t, &kwargs)?;
                if args.len() > 1 {
                    return raise("TypeError", format!("{t} expected at most 1 argument, got {}", args.len()));
                }
                let items = match args.first() {
                    Some(v) => self.iterate(v)?,
                    None => vec![],
                };
                match t {
                    "list" => Ok(list_value(items)),
                    "tuple" => Ok(tuple_value(items)),
                    _ => self.make_set(items),
                }
            }
            "dict" => {
                if args.len() > 1 {
                    return raise("TypeError", format!("dict expected at most 1 argument, got {}", args.len()));
                }
                let mut map = DictMap::new();
                if let Some(src) = args.first() {
                    self.dict_update(&mut map, src)?;
                }
                for (k, v) in kwargs {
                    map.insert(Key::Str(Arc::from(k.as_str())), (str_value(k), v));
                }
                Ok(dict_value(map))
            }
            "range" => {
                no_kwargs(t, &kwargs)?;
                let ints = args.iter().map(to_i64).collect::<R<Vec<_>>>()?;
                let (a, b, s) = match ints.as_slice() {
                    [b] => (0, *b, 1),
                    [a, b] => (*a, *b, 1),
                    [a, b, s] => (*a, *b, *s),
                    [] => return raise("TypeError", "range expected at least 1 argument, got 0"),
                    _ => return raise("TypeError", format!("range expected at most 3 arguments, got {}", ints.len())),
                };
                if s == 0 {
                    return raise("ValueError", "range() arg 3 must not be zero");
                }
                Ok(Value::Range(a, b, s))
            }
            other => raise("TypeError", format!("cannot create '{other}' instances")),
        }
    }

    fn dict_update(&mut self, map: &mut DictMap, src: &Value) -> R<()> {
        if let Value::Dict(d) = src {
            let other = d.lock().clone();
            for (k, kv) in other {
                map.insert(k, kv);
            }
            return Ok(());
        }
        for (i, item) in self.iterate(src)?.into_iter().enumerate() {
            let pair = self.iterate(&item).map_err(|_| {
                exc("TypeError", format!("cannot convert dictionary update sequence element #{i} to a sequence"))
            })?;
            if pair.len() != 2 {
                return raise(
                    "ValueError",
                    format!("dictionary update sequence element #{i} has length {}; 2 is required", pair.len()),
                );
            }
            let key = pair[0].key().map_err(|m| exc("TypeError", m))?;
            match map.get_mut(&key) {
                Some(slot) => slot.1 = pair[1].clone(),
                None => {
                    map.insert(key, (pair[0].clone(), pair[1].clone()));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn call_method(
        &mut self,
        obj: &Value,
        name: &str,
        args: Vec<Value>,
        mut kwargs: Vec<(String, Value)>,
    ) -> R<Value> {
        self.tick()?;
        match obj {
            Value::Type(t) => {
                if &**t == "dict" && name == "fromkeys" {
                    arity(name, &args, 1, 2)?;
                    let fill = args.get(1).cloned().unwrap_or(Value::None);
                    let mut map = DictMap::new();
                    for k in self.iterate(&args[0])? {
                        let key = k.key().map_err(|m| exc("TypeError", m))?;
                        map.insert(key, (k, fill.clone()));
                    }
                    return Ok(dict_value(map));
                }
                let Some((recv, rest)) = args.split_first() else {
                    return raise("TypeError", format!("unbound method {t}.{name}() needs an argument"));
                };
                if !type_matches(recv, t) {
                    return raise(
                        "TypeError",
                        format!(
                            "descriptor '{name}' for '{t}' objects doesn't apply to a '{}' object",
                            recv.type_name()
                        ),
                    );
                }
                self.call_method(recv, name, rest.to_vec(), kwargs)
            }
            Value::Str(s) => {
                let s = s.clone();
                self.str_method(&s, name, args, kwargs)
            }
            Value::List(l) => self.list_method(l, name, args, kwargs),
            Value::Dict(d) => {
                if name != "update" {
                    no_kwargs(name, &kwargs)?;
                }
                self.dict_method(d, name, args, kwargs)
            }
            Value::Set(s) => {
                no_kwargs(name, &kwargs)?;
                self.set_method(s, name, args)
            }
            Value::Tuple(t) => {
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 1, 1)?;
                seq_index_count(t, name, &args[0], "tuple")
            }
            Value::Int(_) | Value::Big(_) | Value::Bool(_) => {
                arity(name, &args, 0, 0)?;
                Ok(Value::Int(obj.as_big().unwrap().bits() as i64))
            }
            Value::Float(f) => {
                arity(name, &args, 0, 0)?;
                Ok(Value::Bool(f.is_finite() && f.fract() == 0.0))
            }
            Value::Stream(st) => {
                let _ = kwarg(&mut kwargs, "size");
                match (st, name) {
                    (Stream::Stdin, "readline") => Ok(str_value(self.read_line().unwrap_or_default())),
                    (Stream::Stdin, "read") => {
                        let rest: String = self.stdin[self.stdin_pos..].iter().collect();
                        self.stdin_pos = self.stdin.len();
                        Ok(str_value(rest))
                    }
                    (Stream::Stdin, "readlines") => Ok(list_value(self.iterate(obj)?)),
                    (_, "flush") => Ok(Value::None),
                    (out, "write") => {
                        arity(name, &args, 1, 1)?;
                        let text = str_arg(&args[0], "write() argument")?.to_string();
                        if *out == Stream::Stderr {
                            self.write_err(&text);
                        } else {
                            self.write_out(&text);
                        }
                        Ok(Value::Int(text.chars().count() as i64))
                    }
                    _ => raise("AttributeError", format!("stream has no attribute '{name}'")),
                }
            }
            other => raise("AttributeError", format!("'{}' object has no attribute '{name}'", other.type_name())),
        }
    }

    fn str_method(&mut self, s: &Arc<str>, name: &str, args: Vec<Value>, mut kwargs: Vec<(String, Value)>) -> R<Value> {
        if name == "format" {
            return Ok(str_value(str_format(s, &args, &kwargs)?));
        }
        if matches!(name, "split" | "rsplit") {
            let sep = kwarg(&mut kwargs, "sep");
            let maxsplit = kwarg(&mut kwargs, "maxsplit");
            no_kwargs(name, &kwargs)?;
            arity(name, &args, 0, 2)?;
            let sep = args.first().cloned().or(sep).filter(|v| !matches!(v, Value::None));
            let maxsplit = match args.get(1).cloned().or(maxsplit) {
                Some(v) => to_i64(&v)?,
                None => -1,
            };
            let right = name == "rsplit";
            let Some(sep) = sep else {
                return Ok(list_value(split_whitespace(s, maxsplit, right)));
            };
            let sep = str_arg(&sep, "must be str or None,")?;
            if sep.is_empty() {
                return raise("ValueError", "empty separator");
            }
            let parts: Vec<Value> = match (maxsplit < 0, right) {
                (true, _) => s.split(sep).map(str_value).collect(),
                (false, false) => s.splitn(maxsplit as usize + 1, sep).map(str_value).collect(),
                (false, true) => {
                    let mut v: Vec<Value> = s.rsplitn(maxsplit as usize + 1, sep).map(str_value).collect();
                    v.reverse();
                    v
                }
            };
            return Ok(list_value(parts));
        }
        no_kwargs(name, &kwargs)?;
        let strip_set = |args: &[Value]| -> R<Option<Vec<char>>> {
            match args.first() {
                None | Some(Value::None) => Ok(None),
                Some(v) => Ok(Some(str_arg(v, "strip arg")?.chars().collect())),
            }
        };
        Ok(match name {
            "strip" | "lstrip" | "rstrip" => {
                arity(name, &args, 0, 1)?;
                let set = strip_set(&args)?;
                let pred = |c: char| match &set {
                    None => c.is_whitespace(),
                    Some(cs) => cs.contains(&c),
                };
                str_value(match name {
                    "strip" => s.trim_matches(pred),
                    "lstrip" => s.trim_start_matches(pred),
                    _ => s.trim_end_matches(pred),
                })
            }
            "join" => {
                arity(name, &args, 1, 1)?;
                let items = self.iterate(&args[0])?;
                let mut parts = Vec::with_capacity(items.len());
                for (i, it) in items.iter().enumerate() {
                    match it {
                        Value::Str(p) => parts.push(p.clone()),
                        other => {
                            return raise(
                                "TypeError",
                                format!("sequence item {i}: expected str instance, {} found", other.type_name()),
                            )
                        }
                    }
                }
                str_value(parts.iter().map(|p| &**p).collect::<Vec<&str>>().join(s))
            }
            "replace" => {
                arity(name, &args, 2, 3)?;
                let old = str_arg(&args[0], "replace() argument 1")?;
                let new = str_arg(&args[1], "replace() argument 2")?;
                match args.get(2).map(to_i64).transpose()? {
                    Some(n) if n >= 0 => str_value(s.replacen(old, new, n as usize)),
                    _ => str_value(s.replace(old, new)),
                }
            }
            "startswith" | "endswith" => {
                arity(name, &args, 1, 3)?;
                let (a, b) = search_range(s, &args)?;
                let hay = &s[a..b];
                let test = |p: &str| if name == "startswith" { hay.starts_with(p) } else { hay.ends_with(p) };
                match &args[0] {
                    Value::Str(p) => Value::Bool(test(p)),
                    Value::Tuple(ps) => {
                        let mut hit = false;
                        for p in ps.iter() {
                            hit |= test(str_arg(p, "tuple for startswith element")?);
                        }
                        Value::Bool(hit)
                    }
                    other => {
                        return raise(
                            "TypeError",
                            format!("{name} first arg must be str or a tuple of str, not {}", other.type_name()),
                        )
                    }
                }
            }
            "find" | "rfind" | "index" | "rindex" | "count" => {
                arity(name, &args, 1, 3)?;
                let sub = str_arg(&args[0], "must be str, not")?;
                let (a, b) = search_range(s, &args)?;
                let hay = &s[a..b];
                if name == "count" {
                    return Ok(Value::Int(if sub.is_empty() {
                        hay.chars().count() as i64 + 1
                    } else {
                        hay.matches(sub).count() as i64
                    }));
                }
                let found = if name.starts_with('r') { hay.rfind(sub) } else { hay.find(sub) };
                match found {
                    Some(p) => Value::Int(char_index_of(s, a + p)),
                    None if name.ends_with("index") => return raise("ValueError", "substring not found"),
                    None => Value::Int(-1),
                }
            }
            "upper" => str_value(s.to_uppercase()),
            "lower" | "casefold" => str_value(s.to_lowercase()),
            "swapcase" => str_value(
                s.chars()
                    .flat_map(|c| -> Vec<char> {
                        if c.is_uppercase() {
                            c.to_lowercase().collect()
                        } else {
                            c.to_uppercase().collect()
                        }
                    })
                    .collect::<String>(),
            ),
            "title" => {
                let mut out = String::new();
                let mut prev_cased = false;
                for c in s.chars() {
                    if prev_cased {
                        out.extend(c.to_lowercase());
                    } else {
                        out.extend(c.to_uppercase());
                    }
                    prev_cased = c.is_alphabetic();
                }
                str_value(out)
            }
            "capitalize" => {
                let mut cs = s.chars();
                str_value(match cs.next() {
                    Some(f) => f.to_uppercase().chain(cs.flat_map(|c| c.to_lowercase())).collect::<String>(),
                    None => String::new(),
                })
            }
            "isdigit" | "isnumeric" | "isdecimal" => Value::Bool(
                !s.is_empty() && s.chars().all(|c| c.is_ascii_digit() || (name != "isdecimal" && c.is_numeric())),
            ),
            "isalpha" => Value::Bool(!s.is_empty() && s.chars().all(char::is_alphabetic)),
            "isalnum" => Value::Bool(!s.is_empty() && s.chars().all(char::is_alphanumeric)),
            "isspace" => Value::Bool(!s.is_empty() && s.chars().all(char::is_whitespace)),
            "isupper" => Value::Bool(s.chars().any(|c| c.is_alphabetic()) && !s.chars().any(char::is_lowercase)),
            "islower" => Value::Bool(s.chars().any(|c| c.is_alphabetic()) && !s.chars().any(char::is_uppercase)),
            "zfill" => {
                arity(name, &args, 1, 1)?;
                let w = to_i64(&args[0])?.max(0) as usize;
                let n = s.chars().count();
                if n >= w {
                    str_value(&**s)
                } else {
                    let (sign, body) = match s.chars().next() {
                        Some(c @ ('+' | '-')) => (c.to_string(), &s[1..]),
                        _ => (String::new(), &s[..]),
                    };
                    str_value(format!("{sign}{}{body}", "0".repeat(w - n)))
                }
            }
            "center" | "ljust" | "rjust" => {
                arity(name, &args, 1, 2)?;
                let w = to_i64(&args[0])?.max(0) as usize;
                let fill = match args.get(1) {
                    Some(Value::Str(f)) if f.chars().count() == 1 => f.chars().next().unwrap(),
                    Some(_) => return raise("TypeError", "The fill character must be exactly one character long"),
                    None => ' ',
                };
                let n = s.chars().count();
                let pad = w.saturating_sub(n);
                let rep = |k: usize| fill.to_string().repeat(k);
                str_value(match name {
                    "ljust" => format!("{s}{}", rep(pad)),
                    "rjust" => format!("{}{s}", rep(pad)),
                    _ => {
                        // CPython puts the extra pad char on the left when both are odd
                        let left = pad / 2 + (pad & w & 1);
                        format!("{}{s}{}", rep(left), rep(pad - left))
                    }
                })
            }
            "splitlines" => {
                let keep = args.first().is_some_and(|v| v.truthy());
                let mut out = Vec::new();
                let mut cur = String::new();
                let mut it = s.chars().peekable();
                while let Some(c) = it.next() {
                    if c == '\n' || c == '\r' {
                        let mut ending = c.to_string();
                        if c == '\r' && it.peek() == Some(&'\n') {
                            it.next();
                            ending.push('\n');
                        }
                        if keep {
                            cur.push_str(&ending);
                        }
                        out.push(str_value(std::mem::take(&mut cur)));
                    } else {
                        cur.push(c);
                    }
                }
                if !cur.is_empty() {
                    out.push(str_value(cur));
                }
                list_value(out)
            }
            "partition" | "rpartition" => {
                arity(name, &args, 1, 1)?;
                let sep = str_arg(&args[0], "must be str, not")?;
                if sep.is_empty() {
                    return raise("ValueError", "empty separator");
                }
                let found = if name == "partition" { s.find(sep) } else { s.rfind(sep) };
                match found {
                    Some(p) => tuple_value(vec![str_value(&s[..p]), str_value(sep), str_value(&s[p + sep.len()..])]),
                    None if name == "partition" => tuple_value(vec![str_value(&**s), str_value(""), str_value("")]),
                    None => tuple_value(vec![str_value(""), str_value(""), str_value(&**s)]),
                }
            }
            _ => return raise("AttributeError", format!("'str' object has no attribute '{name}'")),
        })
    }

    fn list_method(
        &mut self,
        l: &Arc<Mutex<Vec<Value>>>,
        name: &str,
        args: Vec<Value>,
        mut kwargs: Vec<(String, Value)>,
    ) -> R<Value> {
        if name == "sort" {
            let key = kwarg(&mut kwargs, "key");
            let reverse = kwarg(&mut kwargs, "reverse").is_some_and(|v| v.truthy());
            no_kwargs(name, &kwargs)?;
            if !args.is_empty() {
                return raise("TypeError", "sort() takes no positional arguments");
            }
            let items = std::mem::take(&mut *l.lock());
            let sorted = self.sort_values(items.clone(), key, reverse);
            match sorted {
                Ok(v) => {
                    *l.lock() = v;
                    return Ok(Value::None);
                }
                Err(e) => {
                    *l.lock() = items;
                    return Err(e);
                }
            }
        }
        no_kwargs(name, &kwargs)?;
        Ok(match name {
            "append" => {
                arity(name, &args, 1, 1)?;
                l.lock().push(args.into_iter().next().unwrap());
                Value::None
            }
            "extend" => {
                arity(name, &args, 1, 1)?;
                let items = self.iterate(&args[0])?;
                l.lock().extend(items);
                Value::None
            }
            "insert" => {
                arity(name, &args, 2, 2)?;
                let mut g = l.lock();
                let n = g.len() as i64;
                let mut i = to_i64(&args[0])?;
                if i < 0 {
                    i = (i + n).max(0);
                }
                g.insert(i.min(n) as usize, args[1].clone());
                Value::None
            }
            "pop" => {
                arity(name, &args, 0, 1)?;
                let mut g = l.lock();
                if g.is_empty() {
                    return raise("IndexError", "pop from empty list");
                }
                let n = g.len() as i64;
                let mut i = match args.first() {
                    Some(v) => to_i64(v)?,
                    None => n - 1,
                };
                if i < 0 {
                    i += n;
                }
                if i < 0 || i >= n {
                    return raise("IndexError", "pop index out of range");
                }
                g.remove(i as usize)
            }
            "remove" => {
                arity(name, &args, 1, 1)?;
                let mut g = l.lock();
                match g.iter().position(|v| py_eq(v, &args[0])) {
                    Some(i) => {
                        g.remove(i);
                        Value::None
                    }
                    None => return raise("ValueError", "list.remove(x): x not in list"),
                }
            }
            "index" | "count" => {
                arity(name, &args, 1, 3)?;
                let items = l.lock().clone();
                if name == "index" && args.len() > 1 {
                    let n = items.len() as i64;
                    let clamp = |v: i64| if v < 0 { (v + n).max(0) } else { v.min(n) } as usize;
                    let a = clamp(to_i64(&args[1])?);
                    let b = match args.get(2) {
                        Some(v) => clamp(to_i64(v)?),
                        None => items.len(),
                    };
                    return match items
                        .iter()
                        .enumerate()
                        .skip(a)
                        .take(b.saturating_sub(a))
                        .find(|(_, v)| py_eq(v, &args[0]))
                    {
                        Some((i, _)) => Ok(Value::Int(i as i64)),
                        None => raise("ValueError", format!("{} is not in list", py_repr(&args[0]))),
                    };
                }
                seq_index_count(&items, name, &args[0], "list")?
            }
            "reverse" => {
                l.lock().reverse();
                Value::None
            }
            "clear" => {
                l.lock().clear();
                Value::None
            }
            "copy" => list_value(l.lock().clone()),
            _ => return raise("AttributeError", format!("'list' object has no attribute '{name}'")),
        })
    }

    fn dict_method(
        &mut self,
        d: &Arc<Mutex<DictMap>>,
        name: &str,
        args: Vec<Value>,
        kwargs: Vec<(String, Value)>,
    ) -> R<Value> {
        let key_of = |v: &Value| v.key().map_err(|m| exc("TypeError", m));
        Ok(match name {
            "get" => {
                arity(name, &args, 1, 2)?;
                let k = key_of(&args[0])?;
                match d.lock().get(&k) {
                    Some((_, v)) => v.clone(),
                    None => args.get(1).cloned().unwrap_or(Value::None),
                }
            }
            "keys" => list_value(d.lock().values().map(|(k, _)| k.clone()).collect()),
            "values" => list_value(d.lock().values().map(|(_, v)| v.clone()).collect()),
            "items" => list_value(d.lock().values().map(|(k, v)| tuple_value(vec![k.clone(), v.clone()])).collect()),
            "pop" => {
                arity(name, &args, 1, 2)?;
                let k = key_of(&args[0])?;
                match d.lock().shift_remove(&k) {
                    Some((_, v)) => v,
                    None => match args.get(1) {
                        Some(dflt) => dflt.clone(),
                        None => return Err(super::interp::key_error(args[0].clone())),
                    },
                }
            }
            "setdefault" => {
                arity(name, &args, 1, 2)?;
                let k = key_of(&args[0])?;
                let dflt = args.get(1).cloned().unwrap_or(Value::None);
                d.lock().entry(k).or_insert((args[0].clone(), dflt)).1.clone()
            }
            "update" => {
                arity(name, &args, 0, 1)?;
                let mut map = d.lock().clone();
                if let Some(src) = args.first() {
                    self.dict_update(&mut map, src)?;
                }
                for (k, v) in kwargs {
                    let key = Key::Str(Arc::from(k.as_str()));
                    match map.get_mut(&key) {
                        Some(slot) => slot.1 = v,
                        None => {
                            map.insert(key, (str_value(k), v));
                        }
                    }
                }
                *d.lock() = map;
                Value::None
            }
            "clear" => {
                d.lock().clear();
                Value::None
            }
            "copy" => dict_value(d.lock().clone()),
            "popitem" => match d.lock().pop() {
                Some((_, (k, v))) => tuple_value(vec![k, v]),
                None => return raise("KeyError", "'popitem(): dictionary is empty'"),
            },
            _ => return raise("AttributeError", format!("'dict' object has no attribute '{name}'")),
        })
    }

    fn set_method(&mut self, s: &Arc<Mutex<SetMap>>, name: &str, args: Vec<Value>) -> R<Value> {
        let key_of = |v: &Value| v.key().map_err(|m| exc("TypeError", m));
        let mut others = Vec::new();
        if matches!(
            name,
            "union"
                | "intersection"
                | "difference"
                | "symmetric_difference"
                | "issubset"
                | "issuperset"
                | "isdisjoint"
                | "update"
        ) {
            for a in &args {
                let items = self.iterate(a)?;
                let mut m = SetMap::new();
                for v in items {
                    m.entry(key_of(&v)?).or_insert(v);
                }
                others.push(m);
            }
        }
        let cur = || s.lock().clone();
        let wrap = |m: SetMap| Value::Set(Arc::new(Mutex::new(m)));
        Ok(match name {
            "add" => {
                arity(name, &args, 1, 1)?;
                let k = key_of(&args[0])?;
                s.lock().entry(k).or_insert(args[0].clone());
                Value::None
            }
            "remove" | "discard" => {
                arity(name, &args, 1, 1)?;
                let k = key_of(&args[0])?;
                if s.lock().shift_remove(&k).is_none() && name == "remove" {
                    return Err(super::interp::key_error(args[0].clone()));
                }
                Value::None
            }
            "pop" => match s.lock().shift_remove_index(0) {
                Some((_, v)) => v,
                None => return raise("KeyError", "'pop from an empty set'"),
            },
            "union" | "update" => {
                let mut m = cur();
                for o in others {
                    for (k, v) in o {
                        m.entry(k).or_insert(v);
                    }
                }
                if name == "update" {
                    *s.lock() = m;
                    Value::None
                } else {
                    wrap(m)
                }
            }
            "intersection" => {
                let mut m = cur();
                for o in &others {
                    m.retain(|k, _| o.contains_key(k));
                }
                wrap(m)
            }
            "difference" => {
                let mut m = cur();
                for o in &others {
                    m.retain(|k, _| !o.contains_key(k));
                }
                wrap(m)
            }
            "symmetric_difference" => {
                arity(name, &args, 1, 1)?;
                let a = cur();
                let b = others.pop().unwrap();
                let mut m: SetMap =
                    a.iter().filter(|(k, _)| !b.contains_key(*k)).map(|(k, v)| (k.clone(), v.clone())).collect();
                for (k, v) in b {
                    if !a.contains_key(&k) {
                        m.insert(k, v);
                    }
                }
                wrap(m)
            }
            "issubset" | "issuperset" | "isdisjoint" => {
                arity(name, &args, 1, 1)?;
                let a = cur();
                let b = &others[0];
                Value::Bool(match name {
                    "issubset" => a.keys().all(|k| b.contains_key(k)),
                    "issuperset" => b.keys().all(|k| a.contains_key(k)),
                    _ => !a.keys().any(|k| b.contains_key(k)),
                })
            }
            "clear" => {
                s.lock().clear();
                Value::None
            }
            "copy" => wrap(cur()),
            _ => return raise("AttributeError", format!("'set' object has no attribute '{name}'")),
        })
    }

    fn call_module_func(
        &mut self,
        module: &str,
        name: &str,
        args: Vec<Value>,
        mut kwargs: Vec<(String, Value)>,
    ) -> R<Value> {
        match module {
            "math" => self.math_func(name, args, kwargs),
            "sys" => match name {
                "exit" => Err(super::interp::Ctrl::Exit(args.into_iter().next().unwrap_or(Value::None))),
                "setrecursionlimit" => {
                    arity(name, &args, 1, 1)?;
                    let n = to_i64(&args[0])?;
                    if n < 1 {
                        return raise("ValueError", "recursion limit must be greater or equal than 1");
                    }
                    // the evaluator's own stack bounds what it can honor
                    self.recursion_limit = (n as usize).min(MAX_RECURSION);
                    Ok(Value::None)
                }
                "getrecursionlimit" => Ok(Value::Int(self.recursion_limit as i64)),
                _ => unreachable!(),
            },
            "itertools" => self.itertools_func(name, args, kwargs),
            "functools" => match name {
                "reduce" => {
                    arity(name, &args, 2, 3)?;
                    let mut items = self.iterate(&args[1])?.into_iter();
                    let mut acc = match args.get(2) {
                        Some(v) => v.clone(),
                        None => items
                            .next()
                            .ok_or_else(|| exc("TypeError", "reduce() of empty iterable with no initial value"))?,
                    };
                    for v in items {
                        acc = self.call(&args[0], vec![acc, v], vec![])?;
                    }
                    Ok(acc)
                }
                "cache" | "lru_cache" => {
                    kwarg(&mut kwargs, "maxsize");
                    kwarg(&mut kwargs, "typed");
                    match args.first() {
                        Some(f @ (Value::Func(_) | Value::Builtin(_) | Value::Partial(..))) => {
                            Ok(Value::Memo(Arc::new(Memo { func: f.clone(), table: Mutex::new(HashMap::new()) })))
                        }
                        // lru_cache(maxsize=...) returns the decorator itself
                        _ => Ok(Value::Builtin("functools.cache")),
                    }
                }
                "partial" => {
                    no_kwargs(name, &kwargs)?;
                    let Some((f, rest)) = args.split_first() else {
                        return raise("TypeError", "partial() missing required argument 'func'");
                    };
                    Ok(Value::Partial(Box::new(f.clone()), Arc::new(rest.to_vec())))
                }
                "cmp_to_key" => raise("NotImplementedError", "cmp_to_key is not supported by the mock interpreter"),
                _ => unreachable!(),
            },
            "heapq" => self.heapq_func(name, args),
            "bisect" => {
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 2, 4)?;
                let Value::List(l) = &args[0] else {
                    return raise("TypeError", format!("'{}' object is not a list", args[0].type_name()));
                };
                let items = l.lock().clone();
                let lo = match args.get(2) {
                    Some(v) => to_i64(v)?.max(0) as usize,
                    None => 0,
                };
                let hi = match args.get(3) {
                    Some(v) => (to_i64(v)?.max(0) as usize).min(items.len()),
                    None => items.len(),
                };
                let left = name.ends_with("left");
                let (mut lo, mut hi) = (lo, hi);
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    let go_right = if left { lt(&items[mid], &args[1])? } else { !lt(&args[1], &items[mid])? };
                    if go_right {
                        lo = mid + 1;
                    } else {
                        hi = mid;
                    }
                }
                if name.starts_with("insort") {
                    l.lock().insert(lo, args[1].clone());
                    Ok(Value::None)
                } else {
                    Ok(Value::Int(lo as i64))
                }
            }
            _ => raise("AttributeError", format!("module '{module}' has no attribute '{name}'")),
        }
    }

    fn math_func(&mut self, name: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        let f1 = |args: &[Value]| -> R<f64> {
            arity(name, args, 1, 1)?;
            to_f64(&args[0])
        };
        let domain = || exc("ValueError", "math domain error");
        let real = |r: f64| -> R<Value> {
            if r.is_nan() {
                Err(exc("ValueError", "math domain error"))
            } else {
                Ok(Value::Float(r))
            }
        };
        if name != "isclose" {
            no_kwargs(name, &kwargs)?;
        }
        match name {
            "sqrt" => {
                let x = f1(&args)?;
                if x < 0.0 {
                    return Err(domain());
                }
                Ok(Value::Float(x.sqrt()))
            }
            "isqrt" => {
                arity(name, &args, 1, 1)?;
                let b = to_big(&args[0])?;
                if b.is_negative() {
                    return raise("ValueError", "isqrt() argument must be nonnegative");
                }
                Ok(int_from_big(b.sqrt()))
            }
            "floor" | "ceil" | "trunc" => {
                arity(name, &args, 1, 1)?;
                match &args[0] {
                    v if v.is_int() => Ok(int_from_big(v.as_big().unwrap())),
                    Value::Float(f) => float_to_int(match name {
                        "floor" => f.floor(),
                        "ceil" => f.ceil(),
                        _ => f.trunc(),
                    }),
                    v => raise("TypeError", format!("must be real number, not {}", v.type_name())),
                }
            }
            "gcd" | "lcm" => {
                let mut acc = BigInt::from(if name == "gcd" { 0 } else { 1 });
                for a in &args {
                    let b = to_big(a)?;
                    acc = if name == "gcd" {
                        acc.gcd(&b)
                    } else if acc.is_zero() || b.is_zero() {
                        BigInt::zero()
                    } else {
                        acc.lcm(&b)
                    };
                }
                Ok(int_from_big(acc))
            }
            "factorial" => {
                arity(name, &args, 1, 1)?;
                if let Value::Float(_) = args[0] {
                    return raise("TypeError", "'float' object cannot be interpreted as an integer");
                }
                let n = to_i64(&args[0])?;
                if n < 0 {
                    return raise("ValueError", "factorial() not defined for negative values");
                }
                checked_len(n as u128 / 4)?;
                let mut acc = BigInt::from(1);
                for i in 2..=n {
                    acc *= i;
                    if i % 256 == 0 {
                        self.tick()?;
                    }
                }
                Ok(int_from_big(acc))
            }
            "comb" | "perm" => {
                arity(name, &args, 1, 2)?;
                let n = to_big(&args[0])?;
                let k = match args.get(1) {
                    Some(v) if !matches!(v, Value::None) => to_big(v)?,
                    _ if name == "perm" => n.clone(),
                    _ => return raise("TypeError", "comb expected 2 arguments, got 1"),
                };
                if n.is_negative() {
                    return raise("ValueError", "n must be a non-negative integer");
                }
                if k.is_negative() {
                    return raise("ValueError", "k must be a non-negative integer");
                }
                if name == "comb" {
                    return Ok(int_from_big(binomial(&n, &k)));
                }
                if k > n {
                    return Ok(Value::Int(0));
                }
                let mut acc = BigInt::from(1);
                let mut i = BigInt::zero();
                while i < k {
                    acc *= &n - &i;
                    i += 1;
                }
                Ok(int_from_big(acc))
            }
            "log" => {
                arity(name, &args, 1, 2)?;
                let ln = |v: &Value| -> R<f64> {
                    if let Value::Big(b) = v {
                        if b.is_positive() {
                            // ln of huge ints via their bit length
                            let bits = b.bits();
                            let shift = bits.saturating_sub(60);
                            let top = (&**b >> shift).to_f64().unwrap_or(1.0);
                            return Ok(top.ln() + shift as f64 * std::f64::consts::LN_2);
                        }
                    }
                    let x = to_f64(v)?;
                    if x <= 0.0 {
                        return Err(exc("ValueError", "math domain error"));
                    }
                    Ok(x.ln())
                };
                let x = ln(&args[0])?;
                match args.get(1) {
                    Some(b) => {
                        let lb = ln(b)?;
                        if lb == 0.0 {
                            return raise("ZeroDivisionError", "float division by zero");
                        }
                        Ok(Value::Float(x / lb))
                    }
                    None => Ok(Value::Float(x)),
                }
            }
            "log2" | "log10" => {
                let x = f1(&args)?;
                if x <= 0.0 {
                    return Err(domain());
                }
                Ok(Value::Float(if name == "log2" { x.log2() } else { x.log10() }))
            }
            "exp" => {
                let r = f1(&args)?.exp();
                if r.is_infinite() {
                    return raise("OverflowError", "math range error");
                }
                Ok(Value::Float(r))
            }
            "sin" => real(f1(&args)?.sin()),
            "cos" => real(f1(&args)?.cos()),
            "tan" => real(f1(&args)?.tan()),
            "asin" => real(f1(&args)?.asin()),
            "acos" => real(f1(&args)?.acos()),
            "atan" => real(f1(&args)?.atan()),
            "degrees" => Ok(Value::Float(f1(&args)?.to_degrees())),
            "radians" => Ok(Value::Float(f1(&args)?.to_radians())),
            "fabs" => Ok(Value::Float(f1(&args)?.abs())),
            "isfinite" => Ok(Value::Bool(f1(&args)?.is_finite())),
            "isinf" => Ok(Value::Bool(f1(&args)?.is_infinite())),
            "isnan" => Ok(Value::Bool(f1(&args)?.is_nan())),
            "atan2" | "pow" => {
                arity(name, &args, 2, 2)?;
                let (y, x) = (to_f64(&args[0])?, to_f64(&args[1])?);
                if name == "atan2" {
                    return Ok(Value::Float(y.atan2(x)));
                }
                if y == 0.0 && x < 0.0 {
                    return Err(domain());
                }
                real(y.powf(x))
            }
            "hypot" => {
                let mut acc = 0.0f64;
                for a in &args {
                    acc = acc.hypot(to_f64(a)?);
                }
                Ok(Value::Float(acc))
            }
            "dist" => {
                arity(name, &args, 2, 2)?;
                let (p, q) = (self.iterate(&args[0])?, self.iterate(&args[1])?);
                if p.len() != q.len() {
                    return raise("ValueError", "both points must have the same number of dimensions");
                }
                let mut acc = 0.0f64;
                for (a, b) in p.iter().zip(&q) {
                    acc = acc.hypot(to_f64(a)? - to_f64(b)?);
                }
                Ok(Value::Float(acc))
            }
            "prod" => {
                arity(name, &args, 1, 1)?;
                let mut acc = Value::Int(1);
                for v in self.iterate(&args[0])? {
                    acc = self.binop(super::ast::BinOp::Mul, &acc, &v)?;
                }
                Ok(acc)
            }
            "isclose" => {
                let mut kwargs = kwargs;
                let rel = kwarg(&mut kwargs, "rel_tol").map(|v| to_f64(&v)).transpose()?.unwrap_or(1e-9);
                let abs = kwarg(&mut kwargs, "abs_tol").map(|v| to_f64(&v)).transpose()?.unwrap_or(0.0);
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 2, 2)?;
                let (a, b) = (to_f64(&args[0])?, to_f64(&args[1])?);
                if a == b {
                    return Ok(Value::Bool(true));
                }
                if a.is_infinite() || b.is_infinite() {
                    return Ok(Value::Bool(false));
                }
                let d = (a - b).abs();
                Ok(Value::Bool(d <= (rel * b.abs()).max(rel * a.abs()) || d <= abs))
            }
            _ => raise("AttributeError", format!("module 'math' has no attribute '{name}'")),
        }
    }

    fn itertools_func(&mut self, name: &str, args: Vec<Value>, mut kwargs: Vec<(String, Value)>) -> R<Value> {
        let tuples = |rows: Vec<Vec<Value>>| iter_value(rows.into_iter().map(tuple_value).collect());
        match name {
            "permutations" => {
                let r = kwarg(&mut kwargs, "r");
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 1, 2)?;
                let pool = self.iterate(&args[0])?;
                let r = match args.get(1).cloned().or(r) {
                    Some(Value::None) | None => pool.len(),
                    Some(v) => to_i64(&v)?.max(0) as usize,
                };
                let mut count: u128 = 1;
                for i in 0..r.min(pool.len()) {
                    count = count.saturating_mul((pool.len() - i) as u128);
                }
                checked_len(count)?;
                Ok(tuples(permutations(&pool, r)))
            }
            "combinations" | "combinations_with_replacement" => {
                let r = kwarg(&mut kwargs, "r");
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 1, 2)?;
                let pool = self.iterate(&args[0])?;
                let Some(r) = args.get(1).cloned().or(r) else {
                    return raise("TypeError", format!("{name}() missing required argument 'r' (pos 2)"));
                };
                let r = to_i64(&r)?;
                if r < 0 {
                    return raise("ValueError", "r must be non-negative");
                }
                let replace = name != "combinations";
                let n = pool.len() + if replace { r as usize } else { 0 };
                let n = n.saturating_sub(if replace { 1 } else { 0 });
                checked_len(binomial(&BigInt::from(n), &BigInt::from(r)).to_u128().unwrap_or(u128::MAX))?;
                Ok(tuples(combinations(&pool, r as usize, replace)))
            }
            "product" => {
                let repeat = kwarg(&mut kwargs, "repeat").map(|v| to_i64(&v)).transpose()?.unwrap_or(1).max(0);
                no_kwargs(name, &kwargs)?;
                let mut pools = Vec::new();
                for a in &args {
                    pools.push(self.iterate(a)?);
                }
                let pools: Vec<Vec<Value>> = (0..repeat).flat_map(|_| pools.clone()).collect();
                checked_len(pools.iter().fold(1u128, |acc, p| acc.saturating_mul(p.len() as u128)))?;
                let mut rows: Vec<Vec<Value>> = vec![vec![]];
                for p in &pools {
                    let mut next = Vec::with_capacity(rows.len() * p.len());
                    for r in &rows {
                        for v in p {
                            let mut row = r.clone();
                            row.push(v.clone());
                            next.push(row);
                        }
                    }
                    rows = next;
                }
                Ok(tuples(rows))
            }
            "accumulate" => {
                let initial = kwarg(&mut kwargs, "initial");
                let func = kwarg(&mut kwargs, "func");
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 1, 2)?;
                let func = args.get(1).cloned().or(func).filter(|f| !matches!(f, Value::None));
                let mut out = Vec::new();
                let mut acc: Option<Value> = initial.filter(|v| !matches!(v, Value::None));
                if let Some(a) = &acc {
                    out.push(a.clone());
                }
                for v in self.iterate(&args[0])? {
                    let next = match acc.take() {
                        None => v,
                        Some(a) => match &func {
                            Some(f) => self.call(f, vec![a, v], vec![])?,
                            None => self.binop(super::ast::BinOp::Add, &a, &v)?,
                        },
                    };
                    out.push(next.clone());
                    acc = Some(next);
                }
                Ok(iter_value(out))
            }
            "chain" => {
                no_kwargs(name, &kwargs)?;
                let mut out = Vec::new();
                for a in &args {
                    out.extend(self.iterate(a)?);
                }
                Ok(iter_value(out))
            }
            "islice" => {
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 2, 4)?;
                let items = self.iterate(&args[0])?;
                let opt = |v: Option<&Value>| -> R<Option<usize>> {
                    match v {
                        None | Some(Value::None) => Ok(None),
                        Some(v) => {
                            let i = to_i64(v)?;
                            if i < 0 {
                                return raise(
                                    "ValueError",
                                    "Indices for islice() must be None or an integer: 0 <= x <= sys.maxsize.",
                                );
                            }
                            Ok(Some(i as usize))
                        }
                    }
                };
                let (start, stop, step) = if args.len() == 2 {
                    (0, opt(args.get(1))?, 1)
                } else {
                    (opt(args.get(1))?.unwrap_or(0), opt(args.get(2))?, opt(args.get(3))?.unwrap_or(1).max(1))
                };
                let stop = stop.unwrap_or(items.len()).min(items.len());
                Ok(iter_value(items.into_iter().take(stop).skip(start).step_by(step).collect()))
            }
            _ => raise("AttributeError", format!("module 'itertools' has no attribute '{name}'")),
        }
    }

    fn heapq_func(&mut self, name: &str, args: Vec<Value>) -> R<Value> {
        if matches!(name, "nlargest" | "nsmallest") {
            arity(name, &args, 2, 2)?;
            let n = to_i64(&args[0])?.max(0) as usize;
            let items = self.iterate(&args[1])?;
            let mut sorted = self.sort_values(items, None, name == "nlargest")?;
            sorted.truncate(n);
            return Ok(list_value(sorted));
        }
        let Some(Value::List(l)) = args.first() else {
            return raise("TypeError", "heap argument must be a list");
        };
        let mut h = std::mem::take(&mut *l.lock());
        let r = heap_op(&mut h, name, &args);
        *l.lock() = h;
        r
    }
}

pub(crate) const MAX_RECURSION: usize = 20_000;

fn heap_op(h: &mut Vec<Value>, name: &str, args: &[Value]) -> R<Value> {
    match name {
        "heappush" => {
            arity(name, args, 2, 2)?;
            h.push(args[1].clone());
            let n = h.len();
            sift_down(h, 0, n - 1)?;
            Ok(Value::None)
        }
        "heappop" => {
            arity(name, args, 1, 1)?;
            let Some(last) = h.pop() else {
                return raise("IndexError", "index out of range");
            };
            if h.is_empty() {
                return Ok(last);
            }
            let top = std::mem::replace(&mut h[0], last);
            sift_up(h, 0)?;
            Ok(top)
        }
        "heapify" => {
            arity(name, args, 1, 1)?;
            for i in (0..h.len() / 2).rev() {
                sift_up(h, i)?;
            }
            Ok(Value::None)
        }
        "heappushpop" => {
            arity(name, args, 2, 2)?;
            let item = args[1].clone();
            if !h.is_empty() && lt(&h[0], &item)? {
                let top = std::mem::replace(&mut h[0], item);
                sift_up(h, 0)?;
                return Ok(top);
            }
            Ok(item)
        }
        "heapreplace" => {
            arity(name, args, 2, 2)?;
            if h.is_empty() {
                return raise("IndexError", "index out of range");
            }
            let top = std::mem::replace(&mut h[0], args[1].clone());
            sift_up(h, 0)?;
            Ok(top)
        }
        _ => raise("AttributeError", format!("module 'heapq' has no attribute '{name}'")),
    }
}

// Same shape as CPython's heapq: `sift_down` bubbles a leaf toward the root.
fn sift_down(h: &mut [Value], start: usize, mut pos: usize) -> R<()> {
    let item = h[pos].clone();
    while pos > start {
        let parent = (pos - 1) / 2;
        if lt(&item, &h[parent])? {
            h[pos] = h[parent].clone();
            pos = parent;
        } else {
            break;
        }
    }
    h[pos] = item;
    Ok(())
}

fn sift_up(h: &mut [Value], mut pos: usize) -> R<()> {
    let end = h.len();
    let start = pos;
    let item = h[pos].clone();
    let mut child = 2 * pos + 1;
    while child < end {
        let right = child + 1;
        if right < end && !lt(&h[child], &h[right])? {
            child = right;
        }
        h[pos] = h[child].clone();
        pos = child;
        child = 2 * pos + 1;
    }
    h[pos] = item;
    sift_down(h, start, pos)
}

fn seq_index_count(items: &[Value], name: &str, x: &Value, what: &str) -> R<Value> {
    if name == "count" {
        return Ok(Value::Int(items.iter().filter(|v| py_eq(v, x)).count() as i64));
    }
    match items.iter().position(|v| py_eq(v, x)) {
        Some(i) => Ok(Value::Int(i as i64)),
        None if what == "tuple" => raise("ValueError", "tuple.index(x): x not in tuple"),
        None => raise("ValueError", format!("{} is not in {what}", py_repr(x))),
    }
}

fn mod_inverse(a: &BigInt, m: &BigInt) -> Option<BigInt> {
    let m = m.abs();
    let e = a.extended_gcd(&m);
    if e.gcd != BigInt::from(1) {
        return None;
    }
    Some(e.x.mod_floor(&m))
}
