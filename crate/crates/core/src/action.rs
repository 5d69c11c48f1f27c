//! The browser action space and its function-call text form.
//!
//! Actions travel as Python-style call expressions such as `click('12')` or
//! `scroll(0, 200)`. [`Action::render`] and [`parse_call`] are inverses, and
//! the action-space documentation shown to models is generated from the same
//! signature table the parser uses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Noop { wait_ms: u64 },
    Click { elem: String },
    Hover { elem: String },
    Fill { elem: String, value: String },
    KeyboardPress { key_comb: String },
    Scroll { x: f64, y: f64 },
    SelectOption { elem: String, options: Vec<String> },
    Goto { url: String },
    GoBack,
    GoForward,
    NewTab,
    TabClose,
    TabFocus { index: i64 },
    SendMsgToUser { text: String },
    ReportInfeasible { reason: String },
    /// Explorer-only extension: record proposed tasks.
    AddTasksToDataset { tasks: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionParseError {
    #[error("no structured output document found in model output")]
    NoDocument,
    #[error("output document has no string `action` field")]
    MissingAction,
    #[error("syntax error in action `{expr}`: {reason}")]
    Syntax { expr: String, reason: String },
    #[error("unknown action function `{0}`")]
    UnknownFunction(String),
    #[error("`{name}` expects {expected} argument(s), got {got}")]
    Arity {
        name: String,
        expected: String,
        got: usize,
    },
    #[error("argument `{param}` of `{name}`: {reason}")]
    BadArgument {
        name: String,
        param: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamKind {
    Str,
    Int,
    UInt,
    Float,
    StrOrList,
}

struct Signature {
    name: &'static str,
    params: &'static [(&'static str, ParamKind)],
    /// Leading parameters that must be present; the rest have defaults.
    required: usize,
    description: &'static str,
    example: &'static str,
}

const SIGNATURES: &[Signature] = &[
    Signature {
        name: "noop",
        params: &[("wait_ms", ParamKind::UInt)],
        required: 0,
        description: "Do nothing for specified time.",
        example: "noop(500)",
    },
    Signature {
        name: "click",
        params: &[("elem", ParamKind::Str)],
        required: 1,
        description: "Click at an element.",
        example: "click('51')",
    },
    Signature {
        name: "hover",
        params: &[("elem", ParamKind::Str)],
        required: 1,
        description: "Hover on an element.",
        example: "hover('b8')",
    },
    Signature {
        name: "fill",
        params: &[("elem", ParamKind::Str), ("value", ParamKind::Str)],
        required: 2,
        description: "Type into an element.",
        example: "fill('237', 'example value')",
    },
    Signature {
        name: "keyboard_press",
        params: &[("key_comb", ParamKind::Str)],
        required: 1,
        description: "Press a key combination.",
        example: "keyboard_press('Enter')",
    },
    Signature {
        name: "scroll",
        params: &[("x", ParamKind::Float), ("y", ParamKind::Float)],
        required: 2,
        description: "Scroll horizontally or vertically.",
        example: "scroll(0, 200)",
    },
    Signature {
        name: "select_option",
        params: &[("elem", ParamKind::Str), ("options", ParamKind::StrOrList)],
        required: 2,
        description: "Select one or multiple options.",
        example: "select_option('48', ['blue', 'green'])",
    },
    Signature {
        name: "goto",
        params: &[("url", ParamKind::Str)],
        required: 1,
        description: "Navigate to a url.",
        example: "goto('http://www.example.com')",
    },
    Signature {
        name: "go_back",
        params: &[],
        required: 0,
        description: "Navigate to the previous page.",
        example: "go_back()",
    },
    Signature {
        name: "go_forward",
        params: &[],
        required: 0,
        description: "Navigate to the next page.",
        example: "go_forward()",
    },
    Signature {
        name: "new_tab",
        params: &[],
        required: 0,
        description: "Open a new tab.",
        example: "new_tab()",
    },
    Signature {
        name: "tab_close",
        params: &[],
        required: 0,
        description: "Close the current tab.",
        example: "tab_close()",
    },
    Signature {
        name: "tab_focus",
        params: &[("index", ParamKind::Int)],
        required: 1,
        description: "Bring tab to front.",
        example: "tab_focus(2)",
    },
    Signature {
        name: "send_msg_to_user",
        params: &[("text", ParamKind::Str)],
        required: 1,
        description: "Send a message to the user.",
        example: "send_msg_to_user('Based on the results of my search, the city was built in 1751.')",
    },
    Signature {
        name: "report_infeasible",
        params: &[("reason", ParamKind::Str)],
        required: 1,
        description: "Notify user that instructions are infeasible.",
        example: "report_infeasible('I cannot follow these instructions because there is no email field in this form.')",
    },
    Signature {
        name: "add_tasks_to_dataset",
        params: &[("tasks", ParamKind::StrOrList)],
        required: 1,
        description: "Add one or more proposed tasks to the dataset.",
        example: "add_tasks_to_dataset(['Go to the orders page', 'Open the first product review'])",
    },
];

const EXPLORER_ONLY: &str = "add_tasks_to_dataset";

fn signature(name: &str) -> Option<&'static Signature> {
    SIGNATURES.iter().find(|s| s.name == name)
}

/// Action-space description for prompts. The explorer extension is listed only
/// when `include_explorer_actions` is set.
pub fn action_space_doc(include_explorer_actions: bool) -> String {
    let mut out = String::new();
    for sig in SIGNATURES {
        if sig.name == EXPLORER_ONLY && !include_explorer_actions {
            continue;
        }
        let params: Vec<String> = sig
            .params
            .iter()
            .map(|(name, kind)| {
                let ty = match kind {
                    ParamKind::Str => "str",
                    ParamKind::Int | ParamKind::UInt => "int",
                    ParamKind::Float => "float",
                    ParamKind::StrOrList if sig.name == EXPLORER_ONLY => "tuple[str]",
                    ParamKind::StrOrList => "str | list[str]",
                };
                format!("{name}: {ty}")
            })
            .collect();
        out.push_str(&format!(
            "{}({})\n    {}\n    Example: {}\n",
            sig.name,
            params.join(", "),
            sig.description,
            sig.example
        ));
    }
    out
}

pub fn is_known_function(name: &str) -> bool {
    signature(name).is_some()
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            _ => out.push(c),
        }
    }
    out.push('\'');
    out
}

fn quote_list(items: &[String]) -> String {
    let inner: Vec<String> = items.iter().map(|s| quote(s)).collect();
    format!("[{}]", inner.join(", "))
}

fn float(v: f64) -> String {
    format!("{v}")
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Noop { .. } => "noop",
            Action::Click { .. } => "click",
            Action::Hover { .. } => "hover",
            Action::Fill { .. } => "fill",
            Action::KeyboardPress { .. } => "keyboard_press",
            Action::Scroll { .. } => "scroll",
            Action::SelectOption { .. } => "select_option",
            Action::Goto { .. } => "goto",
            Action::GoBack => "go_back",
            Action::GoForward => "go_forward",
            Action::NewTab => "new_tab",
            Action::TabClose => "tab_close",
            Action::TabFocus { .. } => "tab_focus",
            Action::SendMsgToUser { .. } => "send_msg_to_user",
            Action::ReportInfeasible { .. } => "report_infeasible",
            Action::AddTasksToDataset { .. } => "add_tasks_to_dataset",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Action::SendMsgToUser { .. } | Action::ReportInfeasible { .. })
    }

    /// The function-call expression, e.g. `fill('5', 'laptop')`.
    pub fn render(&self) -> String {
        let args = match self {
            Action::Noop { wait_ms } => wait_ms.to_string(),
            Action::Click { elem } | Action::Hover { elem } => quote(elem),
            Action::Fill { elem, value } => format!("{}, {}", quote(elem), quote(value)),
            Action::KeyboardPress { key_comb } => quote(key_comb),
            Action::Scroll { x, y } => format!("{}, {}", float(*x), float(*y)),
            Action::SelectOption { elem, options } => {
                format!("{}, {}", quote(elem), quote_list(options))
            }
            Action::Goto { url } => quote(url),
            Action::GoBack | Action::GoForward | Action::NewTab | Action::TabClose => String::new(),
            Action::TabFocus { index } => index.to_string(),
            Action::SendMsgToUser { text } => quote(text),
            Action::ReportInfeasible { reason } => quote(reason),
            Action::AddTasksToDataset { tasks } => quote_list(tasks),
        };
        format!("{}({})", self.name(), args)
    }

    /// Element id the action targets, if any.
    pub fn element(&self) -> Option<&str> {
        match self {
            Action::Click { elem }
            | Action::Hover { elem }
            | Action::Fill { elem, .. }
            | Action::SelectOption { elem, .. } => Some(elem),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for Action {
    type Err = ActionParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_call(s)
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        parse_call(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Literal {
    Str(String),
    Num(String),
    List(Vec<Literal>),
}

struct Lexer<'a> {
    src: &'a str,
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src,
            chars: src.char_indices().peekable(),
        }
    }

    fn err(&self, reason: impl Into<String>) -> ActionParseError {
        ActionParseError::Syntax {
            expr: self.src.to_string(),
            reason: reason.into(),
        }
    }

    fn skip_ws(&mut self) {
        while matches!(self.chars.peek(), Some((_, c)) if c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.peek().map(|(_, c)| *c)
    }

    fn expect(&mut self, want: char) -> Result<(), ActionParseError> {
        match self.peek() {
            Some(c) if c == want => {
                self.chars.next();
                Ok(())
            }
            Some(c) => Err(self.err(format!("expected `{want}`, found `{c}`"))),
            None => Err(self.err(format!("expected `{want}`, found end of input"))),
        }
    }

    fn ident(&mut self) -> Option<String> {
        self.skip_ws();
        let mut out = String::new();
        while let Some((_, c)) = self.chars.peek() {
            if c.is_ascii_alphanumeric() || *c == '_' {
                out.push(*c);
                self.chars.next();
            } else {
                break;
            }
        }
        if out.is_empty() || out.starts_with(|c: char| c.is_ascii_digit()) {
            None
        } else {
            Some(out)
        }
    }

    fn string(&mut self, quote: char) -> Result<String, ActionParseError> {
        self.chars.next();
        let mut out = String::new();
        loop {
            match self.chars.next() {
                None => return Err(self.err("unterminated string")),
                Some((_, c)) if c == quote => return Ok(out),
                Some((_, '\\')) => match self.chars.next() {
                    Some((_, 'n')) => out.push('\n'),
                    Some((_, 't')) => out.push('\t'),
                    Some((_, 'r')) => out.push('\r'),
                    Some((_, '\\')) => out.push('\\'),
                    Some((_, '\'')) => out.push('\''),
                    Some((_, '"')) => out.push('"'),
                    Some((_, other)) => {
                        out.push('\\');
                        out.push(other);
                    }
                    None => return Err(self.err("unterminated string")),
                },
                Some((_, c)) => out.push(c),
            }
        }
    }

    fn number(&mut self) -> Result<String, ActionParseError> {
        let mut out = String::new();
        while let Some((_, c)) = self.chars.peek() {
            if c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E') {
                out.push(*c);
                self.chars.next();
            } else {
                break;
            }
        }
        if out.parse::<f64>().is_err() {
            return Err(self.err(format!("bad number `{out}`")));
        }
        Ok(out)
    }

    fn literal(&mut self) -> Result<Literal, ActionParseError> {
        match self.peek() {
            Some(q @ ('\'' | '"')) => Ok(Literal::Str(self.string(q)?)),
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                Ok(Literal::Num(self.number()?))
            }
            Some(open @ ('[' | '(')) => {
                let close = if open == '[' { ']' } else { ')' };
                self.chars.next();
                let mut items = Vec::new();
                loop {
                    if self.peek() == Some(close) {
                        self.chars.next();
                        break;
                    }
                    items.push(self.literal()?);
                    match self.peek() {
                        Some(',') => {
                            self.chars.next();
                        }
                        Some(c) if c == close => {}
                        _ => return Err(self.err("malformed list")),
                    }
                }
                Ok(Literal::List(items))
            }
            Some(c) => Err(self.err(format!("non-literal argument starting with `{c}`"))),
            None => Err(self.err("unexpected end of input")),
        }
    }

    /// `name = ` prefix of a keyword argument, if present.
    fn keyword(&mut self) -> Option<String> {
        self.skip_ws();
        let save = self.chars.clone();
        if let Some(name) = self.ident() {
            if self.peek() == Some('=') {
                self.chars.next();
                return Some(name);
            }
        }
        self.chars = save;
        None
    }
}

/// Parses a single function-call expression into an [`Action`].
pub fn parse_call(expr: &str) -> Result<Action, ActionParseError> {
    let mut lx = Lexer::new(expr.trim());
    let name = lx.ident().ok_or_else(|| lx.err("expected a function name"))?;
    let sig = signature(&name).ok_or_else(|| ActionParseError::UnknownFunction(name.clone()))?;
    lx.expect('(')?;
    let mut args: Vec<(Option<String>, Literal)> = Vec::new();
    loop {
        if lx.peek() == Some(')') {
            lx.chars.next();
            break;
        }
        let kw = lx.keyword();
        args.push((kw, lx.literal()?));
        match lx.peek() {
            Some(',') => {
                lx.chars.next();
            }
            Some(')') => {}
            Some(c) => return Err(lx.err(format!("unexpected `{c}` in argument list"))),
            None => return Err(lx.err("unterminated argument list")),
        }
    }
    if lx.peek().is_some() {
        return Err(lx.err("trailing input after call"));
    }
    bind(sig, args)
}

fn bind(sig: &Signature, args: Vec<(Option<String>, Literal)>) -> Result<Action, ActionParseError> {
    let arity_err = |got: usize| ActionParseError::Arity {
        name: sig.name.to_string(),
        expected: if sig.required == sig.params.len() {
            sig.params.len().to_string()
        } else {
            format!("{}..={}", sig.required, sig.params.len())
        },
        got,
    };

    // Varargs form: add_tasks_to_dataset('a', 'b').
    if sig.name == EXPLORER_ONLY && args.len() > 1 && args.iter().all(|(k, _)| k.is_none()) {
        let items = args.into_iter().map(|(_, l)| l).collect();
        let tasks = string_list(sig, "tasks", Literal::List(items))?;
        return Ok(Action::AddTasksToDataset { tasks });
    }

    let got = args.len();
    let mut slots: Vec<Option<Literal>> = vec![None; sig.params.len()];
    let mut seen_kw = false;
    for (i, (kw, lit)) in args.into_iter().enumerate() {
        let idx = match kw {
            Some(k) => {
                seen_kw = true;
                sig.params
                    .iter()
                    .position(|(p, _)| *p == k)
                    .ok_or_else(|| ActionParseError::BadArgument {
                        name: sig.name.to_string(),
                        param: k.clone(),
                        reason: "unknown keyword".into(),
                    })?
            }
            None if seen_kw => {
                return Err(ActionParseError::Syntax {
                    expr: sig.name.to_string(),
                    reason: "positional argument after keyword argument".into(),
                })
            }
            None => i,
        };
        if idx >= slots.len() {
            return Err(arity_err(got));
        }
        if slots[idx].is_some() {
            return Err(ActionParseError::BadArgument {
                name: sig.name.to_string(),
                param: sig.params[idx].0.to_string(),
                reason: "given more than once".into(),
            });
        }
        slots[idx] = Some(lit);
    }
    if slots.iter().take(sig.required).any(Option::is_none) {
        return Err(arity_err(got));
    }

    let mut it = slots.into_iter().zip(sig.params.iter());
    let mut next = || it.next().expect("slot per param");
    let action = match sig.name {
        "noop" => {
            let (lit, (p, _)) = next();
            let wait_ms = match lit {
                Some(l) => uint(sig, p, l)?,
                None => 1000,
            };
            Action::Noop { wait_ms }
        }
        "click" => Action::Click {
            elem: elem(sig, next())?,
        },
        "hover" => Action::Hover {
            elem: elem(sig, next())?,
        },
        "fill" => Action::Fill {
            elem: elem(sig, next())?,
            value: req_str(sig, next())?,
        },
        "keyboard_press" => Action::KeyboardPress {
            key_comb: req_str(sig, next())?,
        },
        "scroll" => {
            let (x, (px, _)) = next();
            let (y, (py, _)) = next();
            Action::Scroll {
                x: number(sig, px, x.expect("required"))?,
                y: number(sig, py, y.expect("required"))?,
            }
        }
        "select_option" => {
            let elem = elem(sig, next())?;
            let (lit, (p, _)) = next();
            Action::SelectOption {
                elem,
                options: string_list(sig, p, lit.expect("required"))?,
            }
        }
        "goto" => Action::Goto {
            url: req_str(sig, next())?,
        },
        "go_back" => Action::GoBack,
        "go_forward" => Action::GoForward,
        "new_tab" => Action::NewTab,
        "tab_close" => Action::TabClose,
        "tab_focus" => {
            let (lit, (p, _)) = next();
            Action::TabFocus {
                index: int(sig, p, lit.expect("required"))?,
            }
        }
        "send_msg_to_user" => Action::SendMsgToUser {
            text: req_str(sig, next())?,
        },
        "report_infeasible" => Action::ReportInfeasible {
            reason: req_str(sig, next())?,
        },
        "add_tasks_to_dataset" => {
            let (lit, (p, _)) = next();
            Action::AddTasksToDataset {
                tasks: string_list(sig, p, lit.expect("required"))?,
            }
        }
        other => return Err(ActionParseError::UnknownFunction(other.to_string())),
    };
    Ok(action)
}

fn bad(sig: &Signature, param: &str, reason: &str) -> ActionParseError {
    ActionParseError::BadArgument {
        name: sig.name.to_string(),
        param: param.to_string(),
        reason: reason.to_string(),
    }
}

fn req_str(
    sig: &Signature,
    (lit, (param, _)): (Option<Literal>, &(&'static str, ParamKind)),
) -> Result<String, ActionParseError> {
    match lit {
        Some(Literal::Str(s)) => Ok(s),
        _ => Err(bad(sig, param, "expected a string")),
    }
}

fn elem(
    sig: &Signature,
    slot: (Option<Literal>, &(&'static str, ParamKind)),
) -> Result<String, ActionParseError> {
    let param = slot.1 .0;
    let s = req_str(sig, slot)?;
    if s.trim().is_empty() {
        return Err(bad(sig, param, "element id must be non-empty"));
    }
    Ok(s)
}

fn string_list(sig: &Signature, param: &str, lit: Literal) -> Result<Vec<String>, ActionParseError> {
    match lit {
        Literal::Str(s) => Ok(vec![s]),
        Literal::List(items) => items
            .into_iter()
            .map(|l| match l {
                Literal::Str(s) => Ok(s),
                _ => Err(bad(sig, param, "list items must be strings")),
            })
            .collect(),
        Literal::Num(_) => Err(bad(sig, param, "expected a string or list of strings")),
    }
}

fn number(sig: &Signature, param: &str, lit: Literal) -> Result<f64, ActionParseError> {
    match lit {
        Literal::Num(n) => n
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad(sig, param, "expected a finite number")),
        _ => Err(bad(sig, param, "expected a number")),
    }
}

fn int(sig: &Signature, param: &str, lit: Literal) -> Result<i64, ActionParseError> {
    match lit {
        Literal::Num(n) => n.parse::<i64>().map_err(|_| bad(sig, param, "expected an integer")),
        _ => Err(bad(sig, param, "expected an integer")),
    }
}

fn uint(sig: &Signature, param: &str, lit: Literal) -> Result<u64, ActionParseError> {
    match lit {
        Literal::Num(n) => n
            .parse::<u64>()
            .map_err(|_| bad(sig, param, "expected a non-negative integer")),
        _ => Err(bad(sig, param, "expected a non-negative integer")),
    }
}
