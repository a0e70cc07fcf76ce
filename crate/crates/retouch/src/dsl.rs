//! The edit-program text DSL: typed ops, validation, canonical
//! serialization, and a parser with positioned errors.
//!
//! A program is a brace-wrapped, semicolon-separated list of
//! `key=value` adjustments, e.g. `{exposure=+0.9; contrast=-30}`.
//! Keys are dotted lowercase identifiers; whitespace between tokens is
//! insignificant. Values are plain signed decimals, a tone-curve point
//! list `[(x,y),(x,y)]`, or a mask tuple `(a,b,c,d)`.
//!
//! Canonical form, produced by [`serialize_program`]: ops in pipeline
//! order, `"; "` between ops, no other spaces, scalar values in the
//! shortest decimal form that round-trips with an explicit `+` on
//! positive adjustments, curve and mask tuples unsigned. [`EditProgram`]
//! itself stores ops in canonical order, so parse and serialize are
//! exact inverses on every valid program.
//!
//! Key inventory: ten global scalars (`exposure` in EV, the rest on a
//! -100..100 slider scale), `tone_curve`, `hsl.<band>.<field>` for eight
//! bands x `hue|sat|lum`, and up to four local groups
//! `localN.mask.radial=(cx,cy,r,feather)` /
//! `localN.mask.linear=(x0,y0,x1,y1)` with nested `localN.exposure`,
//! `localN.saturation`, `localN.temperature`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_LOCAL_OPS: usize = 4;
pub const CURVE_MIN_POINTS: usize = 2;
pub const CURVE_MAX_POINTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScalarParam {
    Exposure,
    Contrast,
    Highlights,
    Shadows,
    Whites,
    Blacks,
    Vibrance,
    Saturation,
    Temperature,
    Tint,
}

impl ScalarParam {
    pub const ALL: [ScalarParam; 10] = [
        ScalarParam::Exposure,
        ScalarParam::Contrast,
        ScalarParam::Highlights,
        ScalarParam::Shadows,
        ScalarParam::Whites,
        ScalarParam::Blacks,
        ScalarParam::Vibrance,
        ScalarParam::Saturation,
        ScalarParam::Temperature,
        ScalarParam::Tint,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ScalarParam::Exposure => "exposure",
            ScalarParam::Contrast => "contrast",
            ScalarParam::Highlights => "highlights",
            ScalarParam::Shadows => "shadows",
            ScalarParam::Whites => "whites",
            ScalarParam::Blacks => "blacks",
            ScalarParam::Vibrance => "vibrance",
            ScalarParam::Saturation => "saturation",
            ScalarParam::Temperature => "temperature",
            ScalarParam::Tint => "tint",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.key() == key)
    }

    /// Inclusive value range: exposure is in EV, everything else on the
    /// -100..100 slider scale.
    pub fn range(self) -> (f64, f64) {
        match self {
            ScalarParam::Exposure => (-5.0, 5.0),
            _ => (-100.0, 100.0),
        }
    }

    /// Position of the op in the execution pipeline (and therefore in
    /// canonical serialization order).
    fn rank(self) -> u32 {
        match self {
            ScalarParam::Temperature => 0,
            ScalarParam::Tint => 1,
            ScalarParam::Exposure => 2,
            ScalarParam::Contrast => 3,
            ScalarParam::Highlights => 4,
            ScalarParam::Shadows => 5,
            ScalarParam::Whites => 6,
            ScalarParam::Blacks => 7,
            ScalarParam::Vibrance => 200,
            ScalarParam::Saturation => 201,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HslBand {
    Red,
    Orange,
    Yellow,
    Green,
    Aqua,
    Blue,
    Purple,
    Magenta,
}

impl HslBand {
    pub const ALL: [HslBand; 8] = [
        HslBand::Red,
        HslBand::Orange,
        HslBand::Yellow,
        HslBand::Green,
        HslBand::Aqua,
        HslBand::Blue,
        HslBand::Purple,
        HslBand::Magenta,
    ];

    pub fn key(self) -> &'static str {
        match self {
            HslBand::Red => "red",
            HslBand::Orange => "orange",
            HslBand::Yellow => "yellow",
            HslBand::Green => "green",
            HslBand::Aqua => "aqua",
            HslBand::Blue => "blue",
            HslBand::Purple => "purple",
            HslBand::Magenta => "magenta",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.key() == key)
    }

    /// Band center hue in degrees.
    pub fn center_deg(self) -> f64 {
        match self {
            HslBand::Red => 0.0,
            HslBand::Orange => 30.0,
            HslBand::Yellow => 60.0,
            HslBand::Green => 120.0,
            HslBand::Aqua => 180.0,
            HslBand::Blue => 240.0,
            HslBand::Purple => 280.0,
            HslBand::Magenta => 320.0,
        }
    }

    fn index(self) -> u32 {
        Self::ALL.iter().position(|b| *b == self).unwrap() as u32
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HslField {
    Hue,
    Sat,
    Lum,
}

impl HslField {
    pub fn key(self) -> &'static str {
        match self {
            HslField::Hue => "hue",
            HslField::Sat => "sat",
            HslField::Lum => "lum",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        match key {
            "hue" => Some(HslField::Hue),
            "sat" => Some(HslField::Sat),
            "lum" => Some(HslField::Lum),
            _ => None,
        }
    }

    fn index(self) -> u32 {
        match self {
            HslField::Hue => 0,
            HslField::Sat => 1,
            HslField::Lum => 2,
        }
    }
}

/// Parameters a local op may adjust, in its execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LocalParam {
    Temperature,
    Exposure,
    Saturation,
}

impl LocalParam {
    pub const ALL: [LocalParam; 3] = [
        LocalParam::Temperature,
        LocalParam::Exposure,
        LocalParam::Saturation,
    ];

    pub fn key(self) -> &'static str {
        match self {
            LocalParam::Temperature => "temperature",
            LocalParam::Exposure => "exposure",
            LocalParam::Saturation => "saturation",
        }
    }

    pub fn range(self) -> (f64, f64) {
        match self {
            LocalParam::Exposure => (-5.0, 5.0),
            _ => (-100.0, 100.0),
        }
    }

    fn rank(self) -> u32 {
        match self {
            LocalParam::Temperature => 0,
            LocalParam::Exposure => 1,
            LocalParam::Saturation => 2,
        }
    }
}

/// Spatial weight mask for a local op, in normalized image coordinates
/// (x right, y down, both in [0, 1]).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MaskSpec {
    /// Weight 1 inside radius*(1-feather), smoothstep falloff to 0 at
    /// radius.
    Radial { cx: f64, cy: f64, radius: f64, feather: f64 },
    /// Clamped linear ramp: 0 at the start point, 1 at the end point.
    Linear { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl MaskSpec {
    /// Bounds check; the message names the offending field.
    pub fn check(&self) -> Result<(), String> {
        match *self {
            MaskSpec::Radial { cx, cy, radius, feather } => {
                if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
                    return Err(format!("radial center ({cx}, {cy}) outside [0,1]^2"));
                }
                if !(radius > 0.0 && radius <= 1.0) {
                    return Err(format!("radial radius {radius} outside (0,1]"));
                }
                if !(0.0..=1.0).contains(&feather) {
                    return Err(format!("radial feather {feather} outside [0,1]"));
                }
                Ok(())
            }
            MaskSpec::Linear { x0, y0, x1, y1 } => {
                for (name, v) in [("x0", x0), ("y0", y0), ("x1", x1), ("y1", y1)] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(format!("linear mask {name}={v} outside [0,1]"));
                    }
                }
                if x0 == x1 && y0 == y1 {
                    return Err("linear mask start equals end".into());
                }
                Ok(())
            }
        }
    }
}

/// One adjustment. A local group (mask plus its nested scalars) is a
/// single op.
#[derive(Clone, Debug, PartialEq)]
pub enum EditOp {
    Scalar {
        param: ScalarParam,
        value: f64,
    },
    /// Control points with strictly increasing x; implicit (0,0) and
    /// (1,1) endpoints are added by the engine when absent.
    ToneCurve {
        points: Vec<(f64, f64)>,
    },
    Hsl {
        band: HslBand,
        field: HslField,
        value: f64,
    },
    Local {
        index: u8,
        mask: MaskSpec,
        params: Vec<(LocalParam, f64)>,
    },
}

impl EditOp {
    fn rank(&self) -> u32 {
        match self {
            EditOp::Scalar { param, .. } => param.rank(),
            EditOp::ToneCurve { .. } => 8,
            EditOp::Hsl { band, field, .. } => 100 + band.index() * 3 + field.index(),
            EditOp::Local { index, .. } => 300 + u32::from(*index),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    Range,
    Duplicate,
    CurveShape,
    MaskBounds,
    Structure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, message: String) {
        self.violations.push(Violation { kind, message });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_valid() {
            return write!(f, "valid");
        }
        let lines: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("{:?}: {}", v.kind, v.message))
            .collect();
        write!(f, "{}", lines.join("; "))
    }
}

/// Checks an arbitrary op list against every program invariant: finite
/// values in range, no duplicate keys, well-shaped curves, mask bounds,
/// and the local-op budget.
pub fn validate_ops(ops: &[EditOp]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut scalar_seen = HashSet::new();
    let mut hsl_seen = HashSet::new();
    let mut curve_seen = false;
    let mut local_seen = HashSet::new();
    let mut local_count = 0usize;

    for op in ops {
        match op {
            EditOp::Scalar { param, value } => {
                if !scalar_seen.insert(*param) {
                    report.push(
                        ViolationKind::Duplicate,
                        format!("`{}` appears more than once", param.key()),
                    );
                }
                check_range(&mut report, param.key(), *value, param.range());
            }
            EditOp::ToneCurve { points } => {
                if curve_seen {
                    report.push(
                        ViolationKind::Duplicate,
                        "`tone_curve` appears more than once".into(),
                    );
                }
                curve_seen = true;
                check_curve(&mut report, points);
            }
            EditOp::Hsl { band, field, value } => {
                if !hsl_seen.insert((*band, *field)) {
                    report.push(
                        ViolationKind::Duplicate,
                        format!("`hsl.{}.{}` appears more than once", band.key(), field.key()),
                    );
                }
                check_range(
                    &mut report,
                    &format!("hsl.{}.{}", band.key(), field.key()),
                    *value,
                    (-100.0, 100.0),
                );
            }
            EditOp::Local { index, mask, params } => {
                local_count += 1;
                if !(1..=MAX_LOCAL_OPS as u8).contains(index) {
                    report.push(
                        ViolationKind::Structure,
                        format!("local index {index} outside 1..={MAX_LOCAL_OPS}"),
                    );
                }
                if !local_seen.insert(*index) {
                    report.push(
                        ViolationKind::Duplicate,
                        format!("`local{index}` appears more than once"),
                    );
                }
                if let Err(msg) = mask.check() {
                    report.push(ViolationKind::MaskBounds, msg);
                }
                let mut param_seen = HashSet::new();
                for (param, value) in params {
                    if !param_seen.insert(*param) {
                        report.push(
                            ViolationKind::Duplicate,
                            format!("`local{index}.{}` appears more than once", param.key()),
                        );
                    }
                    check_range(
                        &mut report,
                        &format!("local{index}.{}", param.key()),
                        *value,
                        param.range(),
                    );
                }
            }
        }
    }
    if local_count > MAX_LOCAL_OPS {
        report.push(
            ViolationKind::Structure,
            format!("{local_count} local ops (at most {MAX_LOCAL_OPS})"),
        );
    }
    report
}

fn check_range(report: &mut ValidationReport, key: &str, value: f64, (min, max): (f64, f64)) {
    if !value.is_finite() || value < min || value > max {
        report.push(
            ViolationKind::Range,
            format!("`{key}` value {value} outside [{min}, {max}]"),
        );
    }
}

fn check_curve(report: &mut ValidationReport, points: &[(f64, f64)]) {
    if points.len() < CURVE_MIN_POINTS || points.len() > CURVE_MAX_POINTS {
        report.push(
            ViolationKind::CurveShape,
            format!(
                "{} control points (need {CURVE_MIN_POINTS}..={CURVE_MAX_POINTS})",
                points.len()
            ),
        );
    }
    for &(x, y) in points {
        if !x.is_finite() || !y.is_finite() || !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y)
        {
            report.push(
                ViolationKind::CurveShape,
                format!("control point ({x}, {y}) outside the unit square"),
            );
        }
    }
    for pair in points.windows(2) {
        if pair[1].0 <= pair[0].0 {
            report.push(
                ViolationKind::CurveShape,
                format!("x must be strictly increasing ({} then {})", pair[0].0, pair[1].0),
            );
        }
    }
}

/// A validated edit program. Ops are held in canonical (pipeline) order
/// regardless of how they were supplied, so equal programs compare equal
/// and serialization is a bijection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EditProgram {
    ops: Vec<EditOp>,
}

impl EditProgram {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates and canonicalizes an op list.
    pub fn from_ops(ops: Vec<EditOp>) -> Result<Self, ValidationReport> {
        let report = validate_ops(&ops);
        if !report.is_valid() {
            return Err(report);
        }
        Ok(Self::from_validated(ops))
    }

    /// Canonicalizes ops already known to satisfy the program invariants.
    pub(crate) fn from_validated(mut ops: Vec<EditOp>) -> Self {
        debug_assert!(validate_ops(&ops).is_valid());
        for op in &mut ops {
            if let EditOp::Local { params, .. } = op {
                params.sort_by_key(|(p, _)| p.rank());
            }
        }
        ops.sort_by_key(EditOp::rank);
        Self { ops }
    }

    pub fn ops(&self) -> &[EditOp] {
        &self.ops
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }
}

/// Shortest decimal form that round-trips, with an explicit sign on
/// positive values.
fn fmt_signed(v: f64) -> String {
    if v > 0.0 {
        format!("+{v}")
    } else {
        format!("{v}")
    }
}

/// Canonical text for a program. `parse_program` inverts this exactly.
pub fn serialize_program(program: &EditProgram) -> String {
    let mut parts: Vec<String> = Vec::new();
    for op in &program.ops {
        match op {
            EditOp::Scalar { param, value } => {
                parts.push(format!("{}={}", param.key(), fmt_signed(*value)));
            }
            EditOp::ToneCurve { points } => {
                let mut s = String::from("tone_curve=[");
                for (i, (x, y)) in points.iter().enumerate() {
                    if i > 0 {
                        s.push(',');
                    }
                    let _ = write!(s, "({x},{y})");
                }
                s.push(']');
                parts.push(s);
            }
            EditOp::Hsl { band, field, value } => {
                parts.push(format!(
                    "hsl.{}.{}={}",
                    band.key(),
                    field.key(),
                    fmt_signed(*value)
                ));
            }
            EditOp::Local { index, mask, params } => {
                match mask {
                    MaskSpec::Radial { cx, cy, radius, feather } => {
                        parts.push(format!(
                            "local{index}.mask.radial=({cx},{cy},{radius},{feather})"
                        ));
                    }
                    MaskSpec::Linear { x0, y0, x1, y1 } => {
                        parts.push(format!("local{index}.mask.linear=({x0},{y0},{x1},{y1})"));
                    }
                }
                for (param, value) in params {
                    parts.push(format!(
                        "local{index}.{}={}",
                        param.key(),
                        fmt_signed(*value)
                    ));
                }
            }
        }
    }
    format!("{{{}}}", parts.join("; "))
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown key `{key}` at byte {pos}")]
    UnknownKey { key: String, pos: usize },
    #[error("`{key}` value {value} outside [{min}, {max}]")]
    OutOfRange {
        key: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("duplicate key `{key}`")]
    DuplicateKey { key: String },
    #[error("malformed tone curve: {msg}")]
    MalformedCurve { msg: String },
    #[error("malformed mask `{key}`: {msg}")]
    MalformedMask { key: String, msg: String },
    #[error("local op {index} has adjustments but no mask")]
    MissingMask { index: u8 },
}

struct Scanner<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }

    fn bytes(&self) -> &'a [u8] {
        self.text.as_bytes()
    }

    fn peek(&self) -> Option<u8> {
        self.bytes().get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, ch: u8) -> Result<(), ParseError> {
        if self.peek() == Some(ch) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(format!(
                "expected `{}`{}",
                ch as char,
                match self.peek() {
                    Some(b) => format!(", found `{}`", b as char),
                    None => ", found end of input".into(),
                }
            )))
        }
    }

    fn syntax(&self, msg: String) -> ParseError {
        ParseError::Syntax { pos: self.pos, msg }
    }

    /// Dotted lowercase identifier: `[a-z][a-z0-9_.]*`.
    fn scan_key(&mut self) -> Result<(&'a str, usize), ParseError> {
        let start = self.pos;
        if !matches!(self.peek(), Some(b) if b.is_ascii_lowercase()) {
            return Err(self.syntax("expected a key".into()));
        }
        while matches!(self.peek(), Some(b) if b.is_ascii_lowercase()
            || b.is_ascii_digit()
            || b == b'_'
            || b == b'.')
        {
            self.pos += 1;
        }
        Ok((&self.text[start..self.pos], start))
    }

    /// Signed decimal. Exponent suffixes are tolerated so that the
    /// shortest round-trip form of any in-range f64 parses back.
    fn scan_number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        if matches!(self.peek(), Some(b'+') | Some(b'-')) {
            self.pos += 1;
        }
        let mut digits = 0;
        while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
            digits += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
                self.pos += 1;
                digits += 1;
            }
        }
        if digits == 0 {
            self.pos = start;
            return Err(self.syntax("expected a number".into()));
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            let mut exp_digits = 0;
            while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
                self.pos += 1;
                exp_digits += 1;
            }
            if exp_digits == 0 {
                self.pos = mark;
            }
        }
        self.text[start..self.pos]
            .parse()
            .map_err(|_| ParseError::Syntax {
                pos: start,
                msg: format!("bad number `{}`", &self.text[start..self.pos]),
            })
    }
}

#[derive(Default)]
struct LocalDraft {
    mask: Option<MaskSpec>,
    params: Vec<(LocalParam, f64)>,
}

/// Parses program text into a validated, canonicalized [`EditProgram`].
pub fn parse_program(text: &str) -> Result<EditProgram, ParseError> {
    let mut sc = Scanner::new(text);
    let mut seen: HashSet<String> = HashSet::new();
    let mut ops: Vec<EditOp> = Vec::new();
    let mut locals: BTreeMap<u8, LocalDraft> = BTreeMap::new();

    sc.skip_ws();
    sc.expect(b'{')?;
    sc.skip_ws();
    if sc.peek() == Some(b'}') {
        sc.pos += 1;
    } else {
        loop {
            parse_op(&mut sc, &mut seen, &mut ops, &mut locals)?;
            sc.skip_ws();
            match sc.peek() {
                Some(b';') => {
                    sc.pos += 1;
                    sc.skip_ws();
                }
                Some(b'}') => {
                    sc.pos += 1;
                    break;
                }
                _ => return Err(sc.syntax("expected `;` or `}`".into())),
            }
        }
    }
    sc.skip_ws();
    if sc.pos != sc.text.len() {
        return Err(sc.syntax("trailing input after `}`".into()));
    }

    for (index, draft) in locals {
        match draft.mask {
            Some(mask) => ops.push(EditOp::Local {
                index,
                mask,
                params: draft.params,
            }),
            None => return Err(ParseError::MissingMask { index }),
        }
    }
    Ok(EditProgram::from_validated(ops))
}

fn parse_op(
    sc: &mut Scanner,
    seen: &mut HashSet<String>,
    ops: &mut Vec<EditOp>,
    locals: &mut BTreeMap<u8, LocalDraft>,
) -> Result<(), ParseError> {
    let (key, key_pos) = sc.scan_key()?;
    sc.skip_ws();
    sc.expect(b'=')?;
    sc.skip_ws();

    let mut mark_seen = |dedup_key: String| -> Result<(), ParseError> {
        if seen.insert(dedup_key.clone()) {
            Ok(())
        } else {
            Err(ParseError::DuplicateKey { key: dedup_key })
        }
    };

    if let Some(param) = ScalarParam::from_key(key) {
        mark_seen(key.to_string())?;
        let value = sc.scan_number()?;
        check_scalar_range(key, value, param.range())?;
        ops.push(EditOp::Scalar { param, value });
        return Ok(());
    }

    if key == "tone_curve" {
        mark_seen(key.to_string())?;
        let points = parse_curve_value(sc)?;
        ops.push(EditOp::ToneCurve { points });
        return Ok(());
    }

    if let Some(rest) = key.strip_prefix("hsl.") {
        let (band_key, field_key) = rest
            .split_once('.')
            .ok_or_else(|| ParseError::UnknownKey {
                key: key.to_string(),
                pos: key_pos,
            })?;
        let (band, field) = match (HslBand::from_key(band_key), HslField::from_key(field_key)) {
            (Some(b), Some(f)) => (b, f),
            _ => {
                return Err(ParseError::UnknownKey {
                    key: key.to_string(),
                    pos: key_pos,
                })
            }
        };
        mark_seen(key.to_string())?;
        let value = sc.scan_number()?;
        check_scalar_range(key, value, (-100.0, 100.0))?;
        ops.push(EditOp::Hsl { band, field, value });
        return Ok(());
    }

    if let Some(rest) = key.strip_prefix("local") {
        if let Some((index, sub)) = rest.split_once('.') {
            let index: u8 = match index.parse() {
                Ok(i) if (1..=MAX_LOCAL_OPS as u8).contains(&i) => i,
                _ => {
                    return Err(ParseError::UnknownKey {
                        key: key.to_string(),
                        pos: key_pos,
                    })
                }
            };
            if sub == "mask.radial" || sub == "mask.linear" {
                mark_seen(format!("local{index}.mask"))?;
                let vals = parse_tuple4(sc)?;
                let mask = if sub == "mask.radial" {
                    MaskSpec::Radial {
                        cx: vals[0],
                        cy: vals[1],
                        radius: vals[2],
                        feather: vals[3],
                    }
                } else {
                    MaskSpec::Linear {
                        x0: vals[0],
                        y0: vals[1],
                        x1: vals[2],
                        y1: vals[3],
                    }
                };
                if let Err(msg) = mask.check() {
                    return Err(ParseError::MalformedMask {
                        key: key.to_string(),
                        msg,
                    });
                }
                locals.entry(index).or_default().mask = Some(mask);
                return Ok(());
            }
            if let Some(param) = LocalParam::ALL.into_iter().find(|p| p.key() == sub) {
                mark_seen(key.to_string())?;
                let value = sc.scan_number()?;
                check_scalar_range(key, value, param.range())?;
                locals.entry(index).or_default().params.push((param, value));
                return Ok(());
            }
        }
        return Err(ParseError::UnknownKey {
            key: key.to_string(),
            pos: key_pos,
        });
    }

    Err(ParseError::UnknownKey {
        key: key.to_string(),
        pos: key_pos,
    })
}

fn check_scalar_range(key: &str, value: f64, (min, max): (f64, f64)) -> Result<(), ParseError> {
    if !value.is_finite() || value < min || value > max {
        return Err(ParseError::OutOfRange {
            key: key.to_string(),
            value,
            min,
            max,
        });
    }
    Ok(())
}

fn parse_curve_value(sc: &mut Scanner) -> Result<Vec<(f64, f64)>, ParseError> {
    sc.expect(b'[')?;
    let mut points = Vec::new();
    loop {
        sc.skip_ws();
        sc.expect(b'(')?;
        sc.skip_ws();
        let x = sc.scan_number()?;
        sc.skip_ws();
        sc.expect(b',')?;
        sc.skip_ws();
        let y = sc.scan_number()?;
        sc.skip_ws();
        sc.expect(b')')?;
        points.push((x, y));
        sc.skip_ws();
        match sc.peek() {
            Some(b',') => sc.pos += 1,
            Some(b']') => {
                sc.pos += 1;
                break;
            }
            _ => return Err(sc.syntax("expected `,` or `]` in curve".into())),
        }
    }
    let mut report = ValidationReport::default();
    check_curve(&mut report, &points);
    if let Some(first) = report.violations.first() {
        return Err(ParseError::MalformedCurve {
            msg: first.message.clone(),
        });
    }
    Ok(points)
}

fn parse_tuple4(sc: &mut Scanner) -> Result<[f64; 4], ParseError> {
    sc.expect(b'(')?;
    let mut vals = [0.0; 4];
    for (i, v) in vals.iter_mut().enumerate() {
        sc.skip_ws();
        if i > 0 {
            sc.expect(b',')?;
            sc.skip_ws();
        }
        *v = sc.scan_number()?;
    }
    sc.skip_ws();
    sc.expect(b')')?;
    Ok(vals)
}
