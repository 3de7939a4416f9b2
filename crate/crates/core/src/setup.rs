//! Line-oriented setup descriptions.
//!
//! ```text
//! # three-crystal source
//! space 4
//! crystal amp=1 pump_oam=0 alpha=[1]
//! phase -120deg
//! spp +4
//! crystal amp=1
//! phase 240deg
//! mirror
//! crystal amp=1
//!
//! [experiment tomography psi2]
//! seed=7
//! modes=[-2, 0, 2]
//! ```
//!
//! One stage per line, in pump order: `crystal [amp=<float>] [pump_oam=<int>]
//! [alpha=[<complex>, ...]]`, `spp <int>`, `modeshift <int>`,
//! `phase <float>rad|<float>deg`, `mirror`. An optional `space <L>` line sets
//! the truncation and must precede the stages. Experiment blocks hold
//! `key=value` lines whose keys are fixed per kind; unknown keys are errors.
//! `#` starts a comment.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainConfig, CrystalSpec, Stage};
use crate::error::Error;
use crate::space::{ModeSpace, DEFAULT_TRUNCATION};

/// Largest accepted `space`; dense operators grow as `(2L + 1)^4`.
pub const MAX_TRUNCATION: u32 = 16;

/// Positioned diagnostic; line and column are 1-based, column counts chars.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}{}", expected_suffix(.expected))]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub expected: Vec<String>,
}

fn expected_suffix(expected: &[String]) -> String {
    if expected.is_empty() {
        String::new()
    } else {
        format!(" (expected {})", expected.join(" | "))
    }
}

impl ParseError {
    fn new(line: usize, column: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            column,
            message: message.into(),
            expected: Vec::new(),
        }
    }

    fn expecting(mut self, expected: &[&str]) -> Self {
        self.expected = expected.iter().map(|s| s.to_string()).collect();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentKind {
    Tomography,
    PhaseScan,
    SpiralSpectrum,
    Qhq,
    Coherence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueType {
    Int,
    Float,
    Bool,
    IntList,
    Complex,
    Angle,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Tomography,
        ExperimentKind::PhaseScan,
        ExperimentKind::SpiralSpectrum,
        ExperimentKind::Qhq,
        ExperimentKind::Coherence,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Tomography => "tomography",
            ExperimentKind::PhaseScan => "phase-scan",
            ExperimentKind::SpiralSpectrum => "spiral-spectrum",
            ExperimentKind::Qhq => "qhq",
            ExperimentKind::Coherence => "coherence",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ExperimentKind::ALL.into_iter().find(|k| k.name() == name)
    }

    fn schema(&self) -> &'static [(&'static str, ValueType)] {
        use ValueType::*;
        match self {
            ExperimentKind::Tomography => &[
                ("seed", Int),
                ("rate", Float),
                ("time", Float),
                ("modes", IntList),
                ("gamma", Float),
                ("noiseless", Bool),
                ("resamples", Int),
                ("max_iter", Int),
                ("tol", Float),
            ],
            ExperimentKind::PhaseScan => &[
                ("seed", Int),
                ("rate", Float),
                ("time", Float),
                ("gamma", Float),
                ("stage", Int),
                ("points", Int),
                ("signal", Int),
                ("idler", Int),
            ],
            ExperimentKind::SpiralSpectrum => &[("range", Int), ("crystal", Int), ("gamma", Float)],
            ExperimentKind::Qhq => &[
                ("input_h", Complex),
                ("input_v", Complex),
                ("target", Angle),
            ],
            ExperimentKind::Coherence => &[
                ("lpa", Float),
                ("lpb", Float),
                ("lspdc", Float),
                ("lcoh", Float),
            ],
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &'static str> {
        self.schema().iter().map(|(k, _)| *k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    IntList(Vec<i64>),
    Complex(Complex64),
    /// Radians.
    Angle(f64),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Float(x) | Value::Angle(x) => Some(x),
            Value::Int(i) => Some(i as f64),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            Value::Int(i) => Some(i),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{}", FloatText(*x)),
            Value::Bool(b) => write!(f, "{b}"),
            Value::IntList(v) => {
                let items: Vec<String> = v.iter().map(|i| i.to_string()).collect();
                write!(f, "[{}]", items.join(", "))
            }
            Value::Complex(c) => write!(f, "{}", ComplexText(*c)),
            Value::Angle(a) => write!(f, "{}rad", FloatText(*a)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub kind: ExperimentKind,
    pub name: String,
    pub params: Vec<(String, Value)>,
}

impl Experiment {
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetupDocument {
    pub truncation: u32,
    pub stages: Vec<Stage>,
    pub experiments: Vec<Experiment>,
}

impl SetupDocument {
    pub fn space(&self) -> ModeSpace {
        ModeSpace::new(self.truncation)
    }

    pub fn chain(&self) -> Result<ChainConfig, Error> {
        ChainConfig::new(self.space(), self.stages.clone())
    }

    pub fn experiment(&self, name: &str) -> Option<&Experiment> {
        self.experiments.iter().find(|e| e.name == name)
    }

    pub fn first_of(&self, kind: ExperimentKind) -> Option<&Experiment> {
        self.experiments.iter().find(|e| e.kind == kind)
    }
}

struct FloatText(f64);

impl fmt::Display for FloatText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `{:?}` is the shortest round-tripping form and keeps exponents short.
        write!(f, "{:?}", self.0)
    }
}

struct ComplexText(Complex64);

impl fmt::Display for ComplexText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Complex64 { re, im } = self.0;
        if im == 0.0 && im.is_sign_positive() {
            write!(f, "{}", FloatText(re))
        } else if im.is_sign_negative() {
            write!(f, "{}-{}i", FloatText(re), FloatText(-im))
        } else {
            write!(f, "{}+{}i", FloatText(re), FloatText(im))
        }
    }
}

impl fmt::Display for SetupDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "space {}", self.truncation)?;
        for stage in &self.stages {
            match stage {
                Stage::Crystal(spec) => {
                    let alpha: Vec<String> = spec
                        .spiral
                        .iter()
                        .map(|c| ComplexText(*c).to_string())
                        .collect();
                    writeln!(
                        f,
                        "crystal amp={} pump_oam={} alpha=[{}]",
                        FloatText(spec.pump_amplitude),
                        spec.pump_oam,
                        alpha.join(", ")
                    )?
                }
                Stage::PumpModeShifter(d) => writeln!(f, "spp {d:+}")?,
                Stage::DownconversionModeShifter(d) => writeln!(f, "modeshift {d:+}")?,
                Stage::PhaseShifter(phi) => writeln!(f, "phase {}rad", FloatText(*phi))?,
                Stage::Mirror => writeln!(f, "mirror")?,
            }
        }
        for e in &self.experiments {
            writeln!(f, "\n[experiment {} {}]", e.kind.name(), e.name)?;
            for (k, v) in &e.params {
                writeln!(f, "{k}={v}")?;
            }
        }
        Ok(())
    }
}

/// A whitespace-separated token; brackets group across spaces.
#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str, line_no: usize) -> Result<Vec<Token<'_>>, ParseError> {
    let mut tokens = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    let mut depth = 0usize;
    let mut open_col = 0;
    for (col, (byte, ch)) in line.char_indices().enumerate() {
        let col = col + 1;
        if ch == '[' {
            if depth == 0 {
                open_col = col;
            }
            depth += 1;
        } else if ch == ']' {
            if depth == 0 {
                return Err(ParseError::new(line_no, col, "unmatched ']'"));
            }
            depth -= 1;
        }
        if ch.is_whitespace() && depth == 0 {
            if let Some((b, c)) = start.take() {
                tokens.push(Token {
                    text: &line[b..byte],
                    column: c,
                });
            }
        } else if start.is_none() {
            start = Some((byte, col));
        }
    }
    if depth > 0 {
        return Err(ParseError::new(line_no, open_col, "unclosed '['").expecting(&["]"]));
    }
    if let Some((b, c)) = start {
        tokens.push(Token {
            text: &line[b..],
            column: c,
        });
    }
    Ok(tokens)
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_float(text: &str) -> Option<f64> {
    let t = text.trim();
    // Rust accepts "inf"/"nan" spellings; setup files do not.
    if t.is_empty()
        || !t
            .bytes()
            .all(|b| b.is_ascii_digit() || b"+-.eE".contains(&b))
    {
        return None;
    }
    t.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn parse_int(text: &str) -> Option<i64> {
    text.trim().parse::<i64>().ok()
}

fn parse_complex(text: &str) -> Option<Complex64> {
    let t = text.trim();
    if let Some(body) = t.strip_suffix('i') {
        let bytes = body.as_bytes();
        let split = (1..bytes.len()).rev().find(|&k| {
            (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E')
        });
        let (re, im) = match split {
            Some(k) => (parse_float(&body[..k])?, &body[k..]),
            None => (0.0, body),
        };
        let im = match im {
            "" | "+" => 1.0,
            "-" => -1.0,
            s => parse_float(s)?,
        };
        Some(Complex64::new(re, im))
    } else {
        parse_float(t).map(|re| Complex64::new(re, 0.0))
    }
}

/// Items of `[a, b, ...]`, with their char offsets inside `text`.
fn list_items(text: &str) -> Option<Vec<(usize, &str)>> {
    let inner = text.strip_prefix('[')?.strip_suffix(']')?;
    if inner.trim().is_empty() {
        return Some(Vec::new());
    }
    let mut out = Vec::new();
    let mut offset = 1;
    for part in inner.split(',') {
        let lead = part.chars().take_while(|c| c.is_whitespace()).count();
        out.push((offset + lead, part));
        offset += part.chars().count() + 1;
    }
    Some(out)
}

fn parse_angle(tok: &Token, line: usize) -> Result<f64, ParseError> {
    let err = || {
        ParseError::new(line, tok.column, format!("invalid angle '{}'", tok.text))
            .expecting(&["<float>rad", "<float>deg"])
    };
    if let Some(v) = tok.text.strip_suffix("rad") {
        parse_float(v).ok_or_else(err)
    } else if let Some(v) = tok.text.strip_suffix("deg") {
        parse_float(v).map(f64::to_radians).ok_or_else(err)
    } else {
        Err(err())
    }
}

fn parse_value(ty: ValueType, text: &str, line: usize, column: usize) -> Result<Value, ParseError> {
    let bad = |what: &str| ParseError::new(line, column, format!("invalid {what} '{text}'"));
    match ty {
        ValueType::Int => parse_int(text)
            .map(Value::Int)
            .ok_or_else(|| bad("integer").expecting(&["<int>"])),
        ValueType::Float => parse_float(text)
            .map(Value::Float)
            .ok_or_else(|| bad("number").expecting(&["<float>"])),
        ValueType::Bool => match text {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            _ => Err(bad("boolean").expecting(&["true", "false"])),
        },
        ValueType::Complex => parse_complex(text)
            .map(Value::Complex)
            .ok_or_else(|| bad("complex number").expecting(&["<re>", "<re>+<im>i", "<im>i"])),
        ValueType::Angle => parse_angle(&Token { text, column }, line).map(Value::Angle),
        ValueType::IntList => {
            let items = list_items(text).ok_or_else(|| bad("list").expecting(&["[<int>, ...]"]))?;
            items
                .into_iter()
                .map(|(off, item)| {
                    parse_int(item).ok_or_else(|| {
                        ParseError::new(
                            line,
                            column + off,
                            format!("invalid list item '{}'", item.trim()),
                        )
                        .expecting(&["<int>"])
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Value::IntList)
        }
    }
}

const STAGE_KEYWORDS: [&str; 6] = ["space", "crystal", "spp", "modeshift", "phase", "mirror"];

fn parse_oam_arg(tokens: &[Token], head: &Token, line: usize) -> Result<i32, ParseError> {
    match tokens {
        [arg] => parse_int(arg.text)
            .and_then(|v| i32::try_from(v).ok())
            .ok_or_else(|| {
                ParseError::new(
                    line,
                    arg.column,
                    format!("invalid OAM shift '{}'", arg.text),
                )
                .expecting(&["<int>"])
            }),
        [] => Err(ParseError::new(
            line,
            head.column + head.text.chars().count(),
            "missing OAM shift",
        )
        .expecting(&["<int>"])),
        [_, extra, ..] => {
            Err(
                ParseError::new(line, extra.column, format!("unexpected '{}'", extra.text))
                    .expecting(&["end of line"]),
            )
        }
    }
}

fn parse_crystal(args: &[Token], line: usize) -> Result<CrystalSpec, ParseError> {
    let mut spec = CrystalSpec::ideal(1.0);
    let mut seen: Vec<&str> = Vec::new();
    for tok in args {
        let Some((key, value)) = tok.text.split_once('=') else {
            return Err(
                ParseError::new(line, tok.column, format!("unexpected '{}'", tok.text))
                    .expecting(&["amp=", "pump_oam=", "alpha="]),
            );
        };
        if seen.contains(&key) {
            return Err(ParseError::new(
                line,
                tok.column,
                format!("duplicate key '{key}'"),
            ));
        }
        let vcol = tok.column + key.chars().count() + 1;
        match key {
            "amp" => {
                let a = parse_float(value).ok_or_else(|| {
                    ParseError::new(line, vcol, format!("invalid amplitude '{value}'"))
                        .expecting(&["<float>"])
                })?;
                if a < 0.0 {
                    return Err(ParseError::new(
                        line,
                        vcol,
                        "pump amplitude must be non-negative",
                    ));
                }
                spec.pump_amplitude = a;
            }
            "pump_oam" => {
                spec.pump_oam = parse_int(value)
                    .and_then(|v| i32::try_from(v).ok())
                    .ok_or_else(|| {
                        ParseError::new(line, vcol, format!("invalid pump OAM '{value}'"))
                            .expecting(&["<int>"])
                    })?;
            }
            "alpha" => {
                let items = list_items(value).ok_or_else(|| {
                    ParseError::new(line, vcol, format!("invalid list '{value}'"))
                        .expecting(&["[<complex>, ...]"])
                })?;
                if items.is_empty() {
                    return Err(ParseError::new(line, vcol, "spiral spectrum is empty"));
                }
                spec.spiral = items
                    .into_iter()
                    .map(|(off, item)| {
                        parse_complex(item).ok_or_else(|| {
                            ParseError::new(
                                line,
                                vcol + off,
                                format!("invalid complex number '{}'", item.trim()),
                            )
                            .expecting(&[
                                "<re>",
                                "<re>+<im>i",
                                "<im>i",
                            ])
                        })
                    })
                    .collect::<Result<_, _>>()?;
            }
            _ => {
                return Err(ParseError::new(
                    line,
                    tok.column,
                    format!("unknown crystal key '{key}'"),
                )
                .expecting(&["amp", "pump_oam", "alpha"]))
            }
        }
        seen.push(key);
    }
    Ok(spec)
}

/// Parses a setup description and checks that it yields a valid chain.
pub fn parse_setup(text: &str) -> Result<SetupDocument, ParseError> {
    let mut truncation: Option<u32> = None;
    let mut stages: Vec<Stage> = Vec::new();
    let mut stage_lines: Vec<usize> = Vec::new();
    let mut experiments: Vec<Experiment> = Vec::new();
    let mut last_line = 1;

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        last_line = line;
        let content = strip_comment(raw);
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lead = content.chars().take_while(|c| c.is_whitespace()).count() + 1;

        if trimmed.starts_with('[') {
            let Some(inner) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) else {
                return Err(ParseError::new(line, lead, "malformed block header")
                    .expecting(&["[experiment <kind> <name>]"]));
            };
            let parts = tokenize(inner, line)?;
            let col = |k: usize| lead + parts.get(k).map_or(inner.chars().count(), |t| t.column);
            match parts.first().map(|t| t.text) {
                Some("experiment") => {}
                _ => {
                    return Err(
                        ParseError::new(line, col(0), "unknown block").expecting(&["experiment"])
                    )
                }
            }
            let kind = parts
                .get(1)
                .and_then(|t| ExperimentKind::from_name(t.text))
                .ok_or_else(|| {
                    let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                    ParseError::new(line, col(1), "unknown or missing experiment kind")
                        .expecting(&names)
                })?;
            let name = parts
                .get(2)
                .ok_or_else(|| {
                    ParseError::new(line, col(2), "missing experiment name").expecting(&["<name>"])
                })?
                .text;
            if let Some(extra) = parts.get(3) {
                return Err(ParseError::new(
                    line,
                    lead + extra.column,
                    format!("unexpected '{}'", extra.text),
                )
                .expecting(&["]"]));
            }
            if experiments.iter().any(|e| e.name == name) {
                return Err(ParseError::new(
                    line,
                    col(2),
                    format!("duplicate experiment name '{name}'"),
                ));
            }
            experiments.push(Experiment {
                kind,
                name: name.to_string(),
                params: Vec::new(),
            });
            continue;
        }

        if let Some(exp) = experiments.last_mut() {
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ParseError::new(
                    line,
                    lead,
                    format!("unexpected '{trimmed}' inside experiment block"),
                )
                .expecting(&["<key>=<value>", "[experiment ...]"]));
            };
            let key = key.trim();
            let Some(&(_, ty)) = exp.kind.schema().iter().find(|(k, _)| *k == key) else {
                let keys: Vec<&str> = exp.kind.keys().collect();
                return Err(ParseError::new(
                    line,
                    lead,
                    format!("unknown {} key '{key}'", exp.kind.name()),
                )
                .expecting(&keys));
            };
            if exp.get(key).is_some() {
                return Err(ParseError::new(
                    line,
                    lead,
                    format!("duplicate key '{key}'"),
                ));
            }
            let eq = trimmed.find('=').unwrap();
            let vlead = trimmed[eq + 1..]
                .chars()
                .take_while(|c| c.is_whitespace())
                .count();
            let vcol = lead + trimmed[..eq].chars().count() + 1 + vlead;
            let value = parse_value(ty, value.trim(), line, vcol)?;
            exp.params.push((key.to_string(), value));
            continue;
        }

        let tokens = tokenize(content, line)?;
        let head = tokens[0];
        let args = &tokens[1..];
        let stage = match head.text {
            "space" => {
                if truncation.is_some() {
                    return Err(ParseError::new(line, head.column, "truncation already set"));
                }
                if !stages.is_empty() {
                    return Err(ParseError::new(
                        line,
                        head.column,
                        "'space' must precede all stages",
                    ));
                }
                let l = parse_oam_arg(args, &head, line)?;
                if !(0..=MAX_TRUNCATION as i32).contains(&l) {
                    return Err(ParseError::new(
                        line,
                        args[0].column,
                        format!("truncation must lie in 0..={MAX_TRUNCATION}"),
                    ));
                }
                truncation = Some(l as u32);
                continue;
            }
            "crystal" => Stage::Crystal(parse_crystal(args, line)?),
            "spp" => Stage::PumpModeShifter(parse_oam_arg(args, &head, line)?),
            "modeshift" => Stage::DownconversionModeShifter(parse_oam_arg(args, &head, line)?),
            "mirror" => {
                if let Some(extra) = args.first() {
                    return Err(ParseError::new(
                        line,
                        extra.column,
                        format!("unexpected '{}'", extra.text),
                    )
                    .expecting(&["end of line"]));
                }
                Stage::Mirror
            }
            "phase" => match args {
                [a] => Stage::PhaseShifter(parse_angle(a, line)?),
                [] => {
                    return Err(ParseError::new(line, head.column + 5, "missing phase")
                        .expecting(&["<float>rad", "<float>deg"]))
                }
                [_, extra, ..] => {
                    return Err(ParseError::new(
                        line,
                        extra.column,
                        format!("unexpected '{}'", extra.text),
                    )
                    .expecting(&["end of line"]))
                }
            },
            other => {
                return Err(
                    ParseError::new(line, head.column, format!("unknown stage '{other}'"))
                        .expecting(
                            &STAGE_KEYWORDS
                                .iter()
                                .copied()
                                .chain(["[experiment ...]"])
                                .collect::<Vec<_>>(),
                        ),
                )
            }
        };
        stages.push(stage);
        stage_lines.push(line);
    }

    let doc = SetupDocument {
        truncation: truncation.unwrap_or(DEFAULT_TRUNCATION),
        stages,
        experiments,
    };
    if let Err(e) = doc.chain() {
        let line = e.stage().map_or(last_line, |s| stage_lines[s]);
        let message = match &e {
            Error::EmptyChain => "no crystal stage".to_string(),
            Error::Stage { source, .. } => source.to_string(),
            other => other.to_string(),
        };
        return Err(ParseError::new(line, 1, message));
    }
    Ok(doc)
}
