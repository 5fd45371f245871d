//! Stage 2: prior color naming by a static decision tree over the RGB cube.
//!
//! Every channel is first split into four fuzzy sets (L, ML, MH, H) by three
//! thresholds. Rules combine fuzzy-set memberships with spectral rules, i.e.
//! linear inequalities between channels such as `max(B,G) < 0.5*R`. Rules are
//! evaluated in file order and the first match assigns the fine color name;
//! each fine name has one fixed parent among the eleven basic colors.
//!
//! The dictionary is plain text:
//!
//! ```text
//! threshold R 64 128 192
//! mode first-match
//! rule 14 bright_dominant_red red := max(B,G) < 0.5*R & FS(R,H)
//! palette 14 230 20 30
//! ```

use std::fmt;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{QnqError, Result};
use crate::raster::{RasterImage, TileScheme, BANDS};

/// Fine levels: 49 named categories plus "unknown".
pub const FINE_LEVELS: usize = 50;
pub const FINE_UNKNOWN: u8 = 49;
/// Coarse levels: 11 basic colors plus "unknown".
pub const COARSE_LEVELS: usize = 12;
pub const COARSE_UNKNOWN: u8 = 11;

pub const BASIC_COLORS: [&str; 11] = [
    "black", "white", "gray", "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown",
];

/// Pseudocolors of the coarse level, indexed by coarse code.
pub const COARSE_PALETTE: [[u8; 3]; COARSE_LEVELS] = [
    [0, 0, 0],
    [255, 255, 255],
    [128, 128, 128],
    [220, 20, 30],
    [250, 140, 20],
    [250, 230, 30],
    [30, 170, 50],
    [30, 60, 220],
    [130, 40, 170],
    [250, 150, 190],
    [120, 70, 30],
    [255, 0, 255],
];

pub const DEFAULT_DICTIONARY_TEXT: &str = include_str!("default_dictionary.txt");

const CHANNEL_NAMES: [char; 3] = ['R', 'G', 'B'];

/// Fuzzy-set label of one channel value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FsLabel {
    L,
    ML,
    MH,
    H,
}

impl FsLabel {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "L" => Some(Self::L),
            "ML" => Some(Self::ML),
            "MH" => Some(Self::MH),
            "H" => Some(Self::H),
            _ => None,
        }
    }
}

impl fmt::Display for FsLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::L => "L",
            Self::ML => "ML",
            Self::MH => "MH",
            Self::H => "H",
        })
    }
}

/// Thresholds `t1 < t2 < t3` splitting `0..=255` into `[0,t1)`, `[t1,t2)`,
/// `[t2,t3)` and `[t3,255]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelPartition {
    pub thresholds: [u8; 3],
}

impl Default for ChannelPartition {
    fn default() -> Self {
        Self {
            thresholds: [64, 128, 192],
        }
    }
}

impl ChannelPartition {
    pub fn new(t1: u8, t2: u8, t3: u8) -> Result<Self> {
        if !(1 <= t1 && t1 < t2 && t2 < t3 && t3 <= 254) {
            return Err(QnqError::invalid(format!(
                "fuzzy thresholds must satisfy 1 <= t1 < t2 < t3 <= 254, got {t1} {t2} {t3}"
            )));
        }
        Ok(Self {
            thresholds: [t1, t2, t3],
        })
    }
}

/// Label of `value` under a channel partition.
pub fn membership(value: u8, partition: &ChannelPartition) -> FsLabel {
    let [t1, t2, t3] = partition.thresholds;
    if value < t1 {
        FsLabel::L
    } else if value < t2 {
        FsLabel::ML
    } else if value < t3 {
        FsLabel::MH
    } else {
        FsLabel::H
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FuzzyPartition {
    pub channels: [ChannelPartition; BANDS],
}

/// Operand of a spectral rule: a channel, or the max/min over a channel set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Atom {
    Channel(usize),
    Max(u8),
    Min(u8),
}

impl Atom {
    #[inline]
    fn eval(self, rgb: [u8; 3]) -> i64 {
        match self {
            Atom::Channel(c) => i64::from(rgb[c]),
            Atom::Max(mask) => (0..3)
                .filter(|c| mask & (1 << c) != 0)
                .map(|c| i64::from(rgb[c]))
                .max()
                .unwrap_or(0),
            Atom::Min(mask) => (0..3)
                .filter(|c| mask & (1 << c) != 0)
                .map(|c| i64::from(rgb[c]))
                .min()
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Lt,
    Le,
    Gt,
    Ge,
}

/// `sum(coef * atom) + constant <op> 0` with integer coefficients, i.e. a
/// linear inequality with rational coefficients scaled to a common denominator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearInequality {
    pub terms: Vec<(i64, Atom)>,
    pub constant: i64,
    pub op: Comparison,
}

impl LinearInequality {
    #[inline]
    pub fn holds(&self, rgb: [u8; 3]) -> bool {
        let s = self
            .terms
            .iter()
            .fold(self.constant, |acc, &(c, a)| acc + c * a.eval(rgb));
        match self.op {
            Comparison::Lt => s < 0,
            Comparison::Le => s <= 0,
            Comparison::Gt => s > 0,
            Comparison::Ge => s >= 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConjunctKind {
    Always,
    Fuzzy { channel: usize, label: FsLabel },
    Spectral(LinearInequality),
}

/// One `&`-separated term of a rule, with its normalized source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conjunct {
    pub kind: ConjunctKind,
    pub source: String,
}

/// A named polyhedron of the RGB cube assigned to one fine category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpectralRule {
    pub fine_id: u8,
    pub name: String,
    pub conjuncts: Vec<Conjunct>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColorName {
    pub fine_id: u8,
    pub name: String,
    pub parent_id: u8,
}

/// Static RGB-cube partition: fuzzy sets, ordered rules and the parent map.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorDictionary {
    pub partition: FuzzyPartition,
    pub rules: Vec<SpectralRule>,
    /// Indexed by fine code, `FINE_LEVELS` entries.
    pub names: Vec<ColorName>,
    /// When set, rules are claimed to be mutually exclusive regardless of order.
    pub order_independent: bool,
    pub palette: Vec<[u8; 3]>,
    fs_lut: [[FsLabel; 256]; BANDS],
}

impl ColorDictionary {
    /// The shipped default, parsed once.
    pub fn builtin() -> &'static ColorDictionary {
        static DICT: OnceLock<ColorDictionary> = OnceLock::new();
        DICT.get_or_init(|| {
            ColorDictionary::parse(DEFAULT_DICTIONARY_TEXT).expect("embedded dictionary parses")
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut partition = FuzzyPartition::default();
        let mut order_independent = false;
        let mut rules = Vec::new();
        let mut names: Vec<Option<(String, u8)>> = vec![None; FINE_LEVELS - 1];
        let mut palette: Vec<Option<[u8; 3]>> = vec![None; FINE_LEVELS];

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| QnqError::format(format!("dictionary line {}: {msg}", lineno + 1));
            let mut words = line.split_whitespace();
            match words.next() {
                Some("threshold") => {
                    let ch = words
                        .next()
                        .and_then(parse_channel)
                        .ok_or_else(|| err("expected channel R, G or B".into()))?;
                    let ts: Vec<u8> = words
                        .map(|w| w.parse::<u8>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| err(format!("bad threshold: {e}")))?;
                    if ts.len() != 3 {
                        return Err(err("threshold needs exactly three values".into()));
                    }
                    partition.channels[ch] =
                        ChannelPartition::new(ts[0], ts[1], ts[2]).map_err(|e| err(e.to_string()))?;
                }
                Some("mode") => match words.next() {
                    Some("first-match") => order_independent = false,
                    Some("order-independent") => order_independent = true,
                    other => return Err(err(format!("unknown mode {other:?}"))),
                },
                Some("palette") => {
                    let vals: Vec<u8> = words
                        .map(|w| w.parse::<u8>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| err(format!("bad palette entry: {e}")))?;
                    if vals.len() != 4 || usize::from(vals[0]) >= FINE_LEVELS {
                        return Err(err("palette needs <fine_id> <r> <g> <b>".into()));
                    }
                    palette[usize::from(vals[0])] = Some([vals[1], vals[2], vals[3]]);
                }
                Some("rule") => {
                    let (head, body) = line
                        .split_once(":=")
                        .ok_or_else(|| err("rule is missing ':='".into()))?;
                    let head: Vec<&str> = head.split_whitespace().collect();
                    if head.len() != 4 {
                        return Err(err("rule header must be 'rule <fine_id> <name> <parent>'".into()));
                    }
                    let fine_id: u8 = head[1]
                        .parse()
                        .ok()
                        .filter(|&id| id < FINE_UNKNOWN)
                        .ok_or_else(|| err(format!("fine id must be in 0..49, got {}", head[1])))?;
                    let name = head[2].to_string();
                    let parent = parse_parent(head[3])
                        .ok_or_else(|| err(format!("unknown parent color {}", head[3])))?;
                    match &names[usize::from(fine_id)] {
                        Some((n, p)) if *n != name || *p != parent => {
                            return Err(err(format!(
                                "fine id {fine_id} already declared as {n} with parent {p}"
                            )))
                        }
                        _ => {}
                    }
                    if names
                        .iter()
                        .enumerate()
                        .any(|(i, e)| i != usize::from(fine_id) && matches!(e, Some((n, _)) if *n == name))
                    {
                        return Err(err(format!("name {name} is used by two fine ids")));
                    }
                    names[usize::from(fine_id)] = Some((name.clone(), parent));
                    let conjuncts = body
                        .split('&')
                        .map(|c| parse_conjunct(c.trim()).map_err(|m| err(m)))
                        .collect::<Result<Vec<_>>>()?;
                    if conjuncts.is_empty() {
                        return Err(err("rule has no conjuncts".into()));
                    }
                    rules.push(SpectralRule {
                        fine_id,
                        name,
                        conjuncts,
                    });
                }
                Some(other) => return Err(err(format!("unknown directive {other}"))),
                None => {}
            }
        }

        let mut color_names: Vec<ColorName> = names
            .into_iter()
            .enumerate()
            .map(|(id, entry)| {
                let (name, parent_id) =
                    entry.unwrap_or_else(|| (format!("unused_{id}"), COARSE_UNKNOWN));
                ColorName {
                    fine_id: id as u8,
                    name,
                    parent_id,
                }
            })
            .collect();
        color_names.push(ColorName {
            fine_id: FINE_UNKNOWN,
            name: "unknown".into(),
            parent_id: COARSE_UNKNOWN,
        });
        let palette = palette
            .into_iter()
            .enumerate()
            .map(|(id, p)| p.unwrap_or(COARSE_PALETTE[usize::from(color_names[id].parent_id)]))
            .collect();
        Ok(Self::assemble(partition, rules, color_names, order_independent, palette))
    }

    fn assemble(
        partition: FuzzyPartition,
        rules: Vec<SpectralRule>,
        names: Vec<ColorName>,
        order_independent: bool,
        palette: Vec<[u8; 3]>,
    ) -> Self {
        let mut fs_lut = [[FsLabel::L; 256]; BANDS];
        for (c, lut) in fs_lut.iter_mut().enumerate() {
            for (v, slot) in lut.iter_mut().enumerate() {
                *slot = membership(v as u8, &partition.channels[c]);
            }
        }
        Self {
            partition,
            rules,
            names,
            order_independent,
            palette,
            fs_lut,
        }
    }

    /// A copy with the rules at `indices` removed.
    pub fn without_rules(&self, indices: &[usize]) -> Self {
        let rules = self
            .rules
            .iter()
            .enumerate()
            .filter(|(i, _)| !indices.contains(i))
            .map(|(_, r)| r.clone())
            .collect();
        Self::assemble(
            self.partition,
            rules,
            self.names.clone(),
            self.order_independent,
            self.palette.clone(),
        )
    }

    pub fn with_order_independence(&self, claim: bool) -> Self {
        let mut d = self.clone();
        d.order_independent = claim;
        d
    }

    pub fn parent(&self, fine: u8) -> u8 {
        self.names
            .get(usize::from(fine))
            .map_or(COARSE_UNKNOWN, |n| n.parent_id)
    }

    pub fn name(&self, fine: u8) -> &str {
        self.names.get(usize::from(fine)).map_or("?", |n| &n.name)
    }

    /// Fine → coarse lookup table.
    pub fn parent_map(&self) -> [u8; FINE_LEVELS] {
        let mut map = [COARSE_UNKNOWN; FINE_LEVELS];
        for (i, slot) in map.iter_mut().enumerate() {
            *slot = self.parent(i as u8);
        }
        map
    }

    #[inline]
    pub fn fs_label(&self, channel: usize, value: u8) -> FsLabel {
        self.fs_lut[channel][value as usize]
    }

    /// Canonical text form; parsing it yields an equal dictionary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (c, p) in self.partition.channels.iter().enumerate() {
            let [a, b, d] = p.thresholds;
            out.push_str(&format!("threshold {} {a} {b} {d}\n", CHANNEL_NAMES[c]));
        }
        out.push_str(if self.order_independent {
            "mode order-independent\n"
        } else {
            "mode first-match\n"
        });
        for rule in &self.rules {
            let parent = self.parent(rule.fine_id);
            let parent_name = BASIC_COLORS
                .get(usize::from(parent))
                .copied()
                .unwrap_or("unknown");
            let body: Vec<&str> = rule.conjuncts.iter().map(|c| c.source.as_str()).collect();
            out.push_str(&format!(
                "rule {} {} {} := {}\n",
                rule.fine_id,
                rule.name,
                parent_name,
                body.join(" & ")
            ));
        }
        for (id, [r, g, b]) in self.palette.iter().enumerate() {
            out.push_str(&format!("palette {id} {r} {g} {b}\n"));
        }
        out
    }
}

fn parse_channel(s: &str) -> Option<usize> {
    match s {
        "R" => Some(0),
        "G" => Some(1),
        "B" => Some(2),
        _ => None,
    }
}

fn parse_parent(s: &str) -> Option<u8> {
    if let Ok(id) = s.parse::<u8>() {
        return (usize::from(id) < COARSE_LEVELS).then_some(id);
    }
    if s == "unknown" {
        return Some(COARSE_UNKNOWN);
    }
    BASIC_COLORS.iter().position(|&n| n == s).map(|i| i as u8)
}

fn parse_conjunct(text: &str) -> std::result::Result<Conjunct, String> {
    let source: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if source == "true" {
        return Ok(Conjunct {
            kind: ConjunctKind::Always,
            source,
        });
    }
    let compact: String = source.chars().filter(|c| !c.is_whitespace()).collect();
    if let Some(inner) = compact.strip_prefix("FS(").and_then(|r| r.strip_suffix(')')) {
        let (ch, label) = inner
            .split_once(',')
            .ok_or_else(|| format!("malformed fuzzy-set term {source}"))?;
        let channel = parse_channel(ch).ok_or_else(|| format!("unknown channel {ch}"))?;
        let label = FsLabel::parse(label).ok_or_else(|| format!("unknown fuzzy set {label}"))?;
        return Ok(Conjunct {
            kind: ConjunctKind::Fuzzy { channel, label },
            source: format!("FS({ch},{label})"),
        });
    }
    let (pos, op, len) = ["<=", ">=", "<", ">"]
        .iter()
        .filter_map(|op| compact.find(op).map(|p| (p, *op, op.len())))
        .min_by_key(|&(p, _, len)| (p, std::cmp::Reverse(len)))
        .ok_or_else(|| format!("no comparison operator in {source}"))?;
    let op = match op {
        "<" => Comparison::Lt,
        "<=" => Comparison::Le,
        ">" => Comparison::Gt,
        _ => Comparison::Ge,
    };
    let lhs = parse_expr(&compact[..pos])?;
    let rhs = parse_expr(&compact[pos + len..])?;
    Ok(Conjunct {
        kind: ConjunctKind::Spectral(lhs.minus(rhs).into_inequality(op)),
        source,
    })
}

/// Decimal rational `num / 10^scale`.
#[derive(Debug, Clone, Copy)]
struct Decimal {
    num: i64,
    scale: u32,
}

impl Decimal {
    fn rescale(self, scale: u32) -> i64 {
        self.num * 10i64.pow(scale - self.scale)
    }
}

#[derive(Debug, Default)]
struct LinearForm {
    terms: Vec<(Decimal, Atom)>,
    constant: Vec<Decimal>,
}

impl LinearForm {
    fn minus(mut self, other: LinearForm) -> LinearForm {
        for (c, a) in other.terms {
            self.terms.push((Decimal { num: -c.num, ..c }, a));
        }
        for c in other.constant {
            self.constant.push(Decimal { num: -c.num, ..c });
        }
        self
    }

    fn into_inequality(self, op: Comparison) -> LinearInequality {
        let scale = self
            .terms
            .iter()
            .map(|(d, _)| d.scale)
            .chain(self.constant.iter().map(|d| d.scale))
            .max()
            .unwrap_or(0);
        let mut terms: Vec<(i64, Atom)> = Vec::new();
        for (d, atom) in self.terms {
            let c = d.rescale(scale);
            match terms.iter_mut().find(|(_, a)| *a == atom) {
                Some(slot) => slot.0 += c,
                None => terms.push((c, atom)),
            }
        }
        terms.retain(|(c, _)| *c != 0);
        let constant = self.constant.iter().map(|d| d.rescale(scale)).sum();
        LinearInequality {
            terms,
            constant,
            op,
        }
    }
}

fn parse_expr(s: &str) -> std::result::Result<LinearForm, String> {
    if s.is_empty() {
        return Err("empty side of comparison".into());
    }
    let mut form = LinearForm::default();
    let bytes = s.as_bytes();
    let mut i = 0;
    let mut first = true;
    while i < bytes.len() {
        let mut sign = 1;
        if bytes[i] == b'+' || bytes[i] == b'-' {
            if bytes[i] == b'-' {
                sign = -1;
            }
            i += 1;
        } else if !first {
            return Err(format!("expected '+' or '-' in {s}"));
        }
        first = false;
        let end = term_end(bytes, i);
        let term = &s[i..end];
        if term.is_empty() {
            return Err(format!("dangling sign in {s}"));
        }
        let (coef, atom) = parse_term(term)?;
        let coef = Decimal {
            num: coef.num * sign,
            ..coef
        };
        match atom {
            Some(a) => form.terms.push((coef, a)),
            None => form.constant.push(coef),
        }
        i = end;
    }
    Ok(form)
}

fn term_end(bytes: &[u8], start: usize) -> usize {
    let mut depth = 0;
    let mut i = start;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => depth += 1,
            b')' => depth -= 1,
            b'+' | b'-' if depth == 0 => break,
            _ => {}
        }
        i += 1;
    }
    i
}

fn parse_term(term: &str) -> std::result::Result<(Decimal, Option<Atom>), String> {
    let factors: Vec<&str> = term.split('*').collect();
    let mut coef = Decimal { num: 1, scale: 0 };
    let mut atom = None;
    for f in factors {
        if let Some(d) = parse_decimal(f) {
            coef = Decimal {
                num: coef.num * d.num,
                scale: coef.scale + d.scale,
            };
        } else {
            if atom.is_some() {
                return Err(format!("product of two channel terms in {term} is not linear"));
            }
            atom = Some(parse_atom(f)?);
        }
    }
    Ok((coef, atom))
}

fn parse_decimal(s: &str) -> Option<Decimal> {
    if s.is_empty() || !s.chars().all(|c| c.is_ascii_digit() || c == '.') {
        return None;
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.len() > 6 || (int.is_empty() && frac.is_empty()) {
        return None;
    }
    let digits = format!("{int}{frac}");
    Some(Decimal {
        num: digits.parse().ok()?,
        scale: frac.len() as u32,
    })
}

fn parse_atom(s: &str) -> std::result::Result<Atom, String> {
    if let Some(c) = parse_channel(s) {
        return Ok(Atom::Channel(c));
    }
    let (kind, inner) = if let Some(r) = s.strip_prefix("max(") {
        ("max", r)
    } else if let Some(r) = s.strip_prefix("min(") {
        ("min", r)
    } else {
        return Err(format!("unknown operand {s}"));
    };
    let inner = inner
        .strip_suffix(')')
        .ok_or_else(|| format!("unclosed {kind}( in {s}"))?;
    let mut mask = 0u8;
    for ch in inner.split(',') {
        let c = parse_channel(ch).ok_or_else(|| format!("unknown channel {ch} in {s}"))?;
        mask |= 1 << c;
    }
    Ok(if kind == "max" {
        Atom::Max(mask)
    } else {
        Atom::Min(mask)
    })
}

/// Truth value of one conjunct for an RGB triple.
#[inline]
fn eval_conjunct(conjunct: &Conjunct, rgb: [u8; 3], dict: &ColorDictionary) -> bool {
    match &conjunct.kind {
        ConjunctKind::Always => true,
        ConjunctKind::Fuzzy { channel, label } => dict.fs_label(*channel, rgb[*channel]) == *label,
        ConjunctKind::Spectral(ineq) => ineq.holds(rgb),
    }
}

/// Truth value of a rule's conjunction under the dictionary's fuzzy partition.
pub fn eval_rule(rule: &SpectralRule, rgb: [u8; 3], dict: &ColorDictionary) -> bool {
    rule.conjuncts.iter().all(|c| eval_conjunct(c, rgb, dict))
}

/// First matching rule's fine code, or [`FINE_UNKNOWN`].
#[inline]
pub fn quantize_pixel(rgb: [u8; 3], dict: &ColorDictionary) -> u8 {
    dict.rules
        .iter()
        .find(|r| eval_rule(r, rgb, dict))
        .map_or(FINE_UNKNOWN, |r| r.fine_id)
}

/// Per-pixel nominal map with `levels` codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorMap {
    width: usize,
    height: usize,
    levels: usize,
    codes: Vec<u8>,
}

impl ColorMap {
    pub fn new(width: usize, height: usize, levels: usize, codes: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(QnqError::invalid("color map dimensions must be positive"));
        }
        if !(1..=256).contains(&levels) {
            return Err(QnqError::invalid(format!("color map levels {levels} not in 1..=256")));
        }
        if codes.len() != width * height {
            return Err(QnqError::format(format!(
                "expected {} codes, got {}",
                width * height,
                codes.len()
            )));
        }
        if let Some(bad) = codes.iter().find(|&&c| usize::from(c) >= levels) {
            return Err(QnqError::integrity(format!("code {bad} >= levels {levels}")));
        }
        Ok(Self {
            width,
            height,
            levels,
            codes,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    /// Mutable access for tests and tools; callers keep codes below `levels`.
    pub fn codes_mut(&mut self) -> &mut [u8] {
        &mut self.codes
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.codes[y * self.width + x]
    }

    /// RGB rendering through a palette indexed by code.
    pub fn render(&self, palette: &[[u8; 3]]) -> Result<RasterImage> {
        let mut samples = Vec::with_capacity(self.codes.len() * BANDS);
        for &c in &self.codes {
            let rgb = palette
                .get(usize::from(c))
                .ok_or_else(|| QnqError::integrity(format!("no palette entry for code {c}")))?;
            samples.extend_from_slice(rgb);
        }
        RasterImage::new(self.width, self.height, samples)
    }
}

pub fn quantize_image(image: &RasterImage, dict: &ColorDictionary) -> ColorMap {
    quantize_image_streamed(image, dict, &TileScheme::whole(image.height()))
}

/// Fine color map, one pass over row stripes.
pub fn quantize_image_streamed(
    image: &RasterImage,
    dict: &ColorDictionary,
    scheme: &TileScheme,
) -> ColorMap {
    let width = image.width();
    let mut codes = vec![0u8; image.pixel_count()];
    let rows = scheme.tile_height.max(1);
    codes
        .par_chunks_mut(rows * width)
        .zip(image.samples().par_chunks(rows * width * BANDS))
        .for_each(|(out, px)| {
            for (o, p) in out.iter_mut().zip(px.chunks_exact(BANDS)) {
                *o = quantize_pixel([p[0], p[1], p[2]], dict);
            }
        });
    ColorMap {
        width,
        height: image.height(),
        levels: FINE_LEVELS,
        codes,
    }
}

/// Fine (50-level) map to coarse (12-level) map through the parent table.
pub fn coarsen(fine: &ColorMap, dict: &ColorDictionary) -> Result<ColorMap> {
    if fine.levels != FINE_LEVELS {
        return Err(QnqError::invalid(format!(
            "coarsening needs a {FINE_LEVELS}-level map, got {} levels",
            fine.levels
        )));
    }
    let parents = dict.parent_map();
    let codes = fine
        .codes
        .iter()
        .map(|&c| {
            parents
                .get(usize::from(c))
                .copied()
                .ok_or_else(|| QnqError::integrity(format!("corrupted fine map: code {c} >= 50")))
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(ColorMap {
        width: fine.width,
        height: fine.height,
        levels: COARSE_LEVELS,
        codes,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub exhaustive: bool,
    pub exclusive: bool,
    pub unknown_count: u64,
    /// Triples matched by more than one category when order is ignored.
    pub overlap_count: u64,
    /// Triples per fine code, `FINE_LEVELS` entries.
    pub category_counts: Vec<u64>,
}

/// Sweeps all 2^24 RGB triples.
///
/// Under first-match semantics exclusivity holds by construction. When the
/// dictionary claims order independence, every rule is evaluated and a
/// triple matching two distinct categories makes the report non-exclusive.
pub fn validate_dictionary(dict: &ColorDictionary) -> ValidationReport {
    struct Tally {
        counts: [u64; FINE_LEVELS],
        overlaps: u64,
        out_of_range: u64,
    }
    let tallies: Vec<Tally> = (0..=255u8)
        .into_par_iter()
        .map(|r| {
            let mut t = Tally {
                counts: [0; FINE_LEVELS],
                overlaps: 0,
                out_of_range: 0,
            };
            for g in 0..=255u8 {
                for b in 0..=255u8 {
                    let rgb = [r, g, b];
                    let code = quantize_pixel(rgb, dict);
                    match t.counts.get_mut(usize::from(code)) {
                        Some(c) => *c += 1,
                        None => t.out_of_range += 1,
                    }
                    if dict.order_independent {
                        let mut matched = 0u64;
                        for rule in &dict.rules {
                            if eval_rule(rule, rgb, dict) {
                                matched |= 1 << rule.fine_id;
                            }
                        }
                        if matched.count_ones() > 1 {
                            t.overlaps += 1;
                        }
                    }
                }
            }
            t
        })
        .collect();

    let mut counts = vec![0u64; FINE_LEVELS];
    let mut overlaps = 0;
    let mut out_of_range = 0;
    for t in &tallies {
        for (a, b) in counts.iter_mut().zip(t.counts.iter()) {
            *a += b;
        }
        overlaps += t.overlaps;
        out_of_range += t.out_of_range;
    }
    ValidationReport {
        exhaustive: out_of_range == 0 && counts.iter().sum::<u64>() == 1 << 24,
        exclusive: overlaps == 0,
        unknown_count: counts[usize::from(FINE_UNKNOWN)],
        overlap_count: overlaps,
        category_counts: counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dict() -> &'static ColorDictionary {
        ColorDictionary::builtin()
    }

    fn sr1() -> SpectralRule {
        ColorDictionary::parse("rule 0 sr1 red := max(B,G) < 0.5*R")
            .unwrap()
            .rules
            .remove(0)
    }

    #[test]
    fn membership_default_thresholds() {
        let p = ChannelPartition::default();
        assert_eq!(membership(0, &p), FsLabel::L);
        assert_eq!(membership(255, &p), FsLabel::H);
        assert_eq!(membership(100, &p), FsLabel::ML);
        assert_eq!(membership(192, &p), FsLabel::H);
        assert_eq!(membership(191, &p), FsLabel::MH);
        assert_eq!(membership(64, &p), FsLabel::ML);
        assert_eq!(membership(63, &p), FsLabel::L);
    }

    #[test]
    fn partition_rejects_unordered_thresholds() {
        assert!(ChannelPartition::new(64, 64, 192).is_err());
        assert!(ChannelPartition::new(0, 64, 192).is_err());
        assert!(ChannelPartition::new(10, 64, 255).is_err());
    }

    #[test]
    fn sr1_truth_table() {
        let d = dict();
        let rule = sr1();
        assert!(eval_rule(&rule, [200, 40, 60], d));
        assert!(!eval_rule(&rule, [100, 90, 90], d));
        assert!(!eval_rule(&rule, [0, 0, 0], d));
    }

    #[test]
    fn anchor_pixels() {
        let d = dict();
        let red = quantize_pixel([200, 40, 60], d);
        assert_eq!(d.name(red), "bright_dominant_red");
        assert_eq!(BASIC_COLORS[usize::from(d.parent(red))], "red");
        assert_eq!(BASIC_COLORS[usize::from(d.parent(quantize_pixel([0, 0, 0], d)))], "black");
        assert_eq!(
            BASIC_COLORS[usize::from(d.parent(quantize_pixel([255, 255, 255], d)))],
            "white"
        );
    }

    #[test]
    fn builtin_has_49_named_categories_over_11_parents() {
        let d = dict();
        assert_eq!(d.names.len(), FINE_LEVELS);
        let mut parents = std::collections::BTreeSet::new();
        for n in &d.names[..49] {
            assert!(!n.name.starts_with("unused_"), "{} unused", n.fine_id);
            assert!(n.parent_id < COARSE_UNKNOWN);
            parents.insert(n.parent_id);
        }
        assert_eq!(parents.len(), 11);
        assert_eq!(d.parent(FINE_UNKNOWN), COARSE_UNKNOWN);
        assert_eq!(d.palette.len(), FINE_LEVELS);
    }

    #[test]
    fn text_round_trip() {
        let d = dict();
        let again = ColorDictionary::parse(&d.to_text()).unwrap();
        assert_eq!(&again, d);
    }

    #[test]
    fn rational_coefficients_are_exact() {
        let d = ColorDictionary::parse("rule 0 a red := 0.333*R + 1.5 >= G - 0.25*B").unwrap();
        let ConjunctKind::Spectral(ineq) = &d.rules[0].conjuncts[0].kind else {
            panic!("expected spectral")
        };
        // 333 R + 1500 - 1000 G + 250 B >= 0
        assert_eq!(ineq.constant, 1500);
        assert!(ineq.terms.contains(&(333, Atom::Channel(0))));
        assert!(ineq.terms.contains(&(-1000, Atom::Channel(1))));
        assert!(ineq.terms.contains(&(250, Atom::Channel(2))));
        assert!(eval_rule(&d.rules[0], [3, 2, 0], &d));
        assert!(!eval_rule(&d.rules[0], [0, 2, 0], &d));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ColorDictionary::parse("threshold R 64 128\n").unwrap_err();
        assert!(err.to_string().contains("line 1"));
        assert!(ColorDictionary::parse("rule 50 x red := true").is_err());
        assert!(ColorDictionary::parse("rule 1 x mauve := true").is_err());
        assert!(ColorDictionary::parse("rule 1 x red := R * G < 3").is_err());
        assert!(ColorDictionary::parse("rule 1 x red := R + G").is_err());
        assert!(ColorDictionary::parse("rule 1 x red := true\nrule 1 y red := true").is_err());
        assert!(ColorDictionary::parse("bogus").is_err());
    }

    #[test]
    fn constant_image_gives_constant_map() {
        let img = RasterImage::filled(5, 4, [30, 200, 90]).unwrap();
        let map = quantize_image(&img, dict());
        let first = map.codes()[0];
        assert!(map.codes().iter().all(|&c| c == first));
    }

    #[test]
    fn coarsen_uses_parent_table() {
        let d = dict();
        let red = quantize_pixel([200, 40, 60], d);
        let fine = ColorMap::new(2, 1, FINE_LEVELS, vec![red, FINE_UNKNOWN]).unwrap();
        let coarse = coarsen(&fine, d).unwrap();
        assert_eq!(coarse.levels(), COARSE_LEVELS);
        assert_eq!(coarse.codes(), &[3, COARSE_UNKNOWN]);
    }

    #[test]
    fn coarsen_rejects_corrupted_codes() {
        let mut fine = ColorMap::new(2, 1, FINE_LEVELS, vec![0, 0]).unwrap();
        fine.codes_mut()[1] = 50;
        assert!(matches!(coarsen(&fine, dict()), Err(QnqError::Integrity(_))));
        let coarse = ColorMap::new(1, 1, COARSE_LEVELS, vec![0]).unwrap();
        assert!(coarsen(&coarse, dict()).is_err());
    }

    #[test]
    fn color_map_checks_codes() {
        assert!(ColorMap::new(1, 1, 12, vec![12]).is_err());
        assert!(ColorMap::new(2, 1, 12, vec![1]).is_err());
    }
}
