//! Fixed cell table both executor bindings must agree on.
//!
//! The cells run in order inside one session with the default config, so
//! later cells may rely on names bound by earlier ones. Expected values were
//! recorded from CPython 3.10.

use super::{ErrorKind, ExecutionResult, SandboxConfig, SandboxError, SandboxManager};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractCase {
    pub source: &'static str,
    pub stdout: String,
    pub stderr: String,
    pub error_kind: ErrorKind,
    pub error_summary: String,
    pub output_truncated: bool,
}

impl ContractCase {
    fn ok(source: &'static str, stdout: &str) -> Self {
        Self {
            source,
            stdout: stdout.into(),
            stderr: String::new(),
            error_kind: ErrorKind::None,
            error_summary: String::new(),
            output_truncated: false,
        }
    }

    fn err(source: &'static str, kind: ErrorKind, summary: &str) -> Self {
        Self { error_kind: kind, error_summary: summary.into(), ..Self::ok(source, "") }
    }

    fn matches(&self, r: &ExecutionResult) -> bool {
        r.stdout == self.stdout
            && r.stderr == self.stderr
            && r.error_kind == self.error_kind
            && r.error_summary == self.error_summary
            && r.output_truncated == self.output_truncated
    }
}

pub fn fixture() -> Vec<ContractCase> {
    use ErrorKind::{Runtime, Syntax};
    let cap = SandboxConfig::default().output_byte_cap;
    vec![
        ContractCase::ok("x = 41", ""),
        ContractCase::ok("print(x + 1)", "42\n"),
        ContractCase::err("1/0", Runtime, "ZeroDivisionError: division by zero"),
        ContractCase::err("def f(:", Syntax, "SyntaxError: invalid syntax"),
        ContractCase::ok("import math\nprint(math.floor(2.9))", "2\n"),
        ContractCase {
            stdout: "a\n".into(),
            ..ContractCase::err("print('a')\nraise ValueError('bad input')", Runtime, "ValueError: bad input")
        },
        ContractCase::ok("a = [1, 2]\nprint(sum(a))", "3\n"),
        ContractCase::err("print({'k': 1}['z'])", Runtime, "KeyError: 'z'"),
        ContractCase::err("print(undefined_name)", Runtime, "NameError: name 'undefined_name' is not defined"),
        ContractCase {
            stdout: "x".repeat(cap),
            output_truncated: true,
            ..ContractCase::ok("s = 'x' * 9000\nprint(s)", "")
        },
        ContractCase { stderr: "warn\n".into(), ..ContractCase::ok("import sys\nsys.stderr.write('warn\\n')", "") },
        ContractCase::err("int('abc')", Runtime, "ValueError: invalid literal for int() with base 10: 'abc'"),
        ContractCase::err("[1, 2][5]", Runtime, "IndexError: list index out of range"),
        ContractCase::ok("print(2 ** 100)", "1267650600228229401496703205376\n"),
        ContractCase::ok("print(7 // 2, -7 // 2, 7 % -3, round(2.5))", "3 -4 -2 2\n"),
        ContractCase::ok("print(f'{3.14159:.2f}', '%5d|' % 42)", "3.14    42|\n"),
        ContractCase::ok("print(sorted({3: 'c', 1: 'a'}.items()))", "[(1, 'a'), (3, 'c')]\n"),
        ContractCase::ok("def g(n):\n    return n * 2\nprint(g(x))", "82\n"),
        ContractCase::err("print(1 +)", Syntax, "SyntaxError: invalid syntax"),
        ContractCase::err("  print(1)", Syntax, "IndentationError: unexpected indent"),
        ContractCase::err("None.foo", Runtime, "AttributeError: 'NoneType' object has no attribute 'foo'"),
        ContractCase::ok(
            "print(1/3, 0.1 + 0.2, 1e20, 1e16, float('inf'))",
            "0.3333333333333333 0.30000000000000004 1e+20 1e+16 inf\n",
        ),
    ]
}

/// One disagreement between a binding and the fixture.
#[derive(Debug, Clone)]
pub struct Mismatch {
    pub index: usize,
    pub expected: ContractCase,
    pub actual: ExecutionResult,
}

/// Runs the fixture through a fresh session opened with `config` and
/// returns every cell whose result differs from the table.
pub fn check(manager: &SandboxManager, config: &SandboxConfig) -> Result<Vec<Mismatch>, SandboxError> {
    let session = manager.open_session(config)?;
    let mut bad = Vec::new();
    for (index, case) in fixture().into_iter().enumerate() {
        let actual = manager.execute_cell(session, case.source)?;
        if !case.matches(&actual) {
            bad.push(Mismatch { index, expected: case, actual });
        }
    }
    manager.close_session(session)?;
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_binding_satisfies_the_fixture() {
        let bad = check(&SandboxManager::default(), &SandboxConfig::default()).unwrap();
        assert!(bad.is_empty(), "{bad:#?}");
    }
}
