//! Bijective numbering of pipeline configurations.
//!
//! Three primitives map tuples of naturals onto single naturals:
//!
//! * [`pair`] / [`unpair`]: `2^x (2y + 1) - 1`, inverted by counting the
//!   factors of two in `z + 1`.
//! * [`encode_triple`] / [`decode_triple`]: two nested pairings over
//!   arguments shifted down by one, so the domain is `N+ x N+ x N+`.
//! * [`encode_seq`] / [`decode_seq`]: a finite sequence becomes the set
//!   bits of `t + 1`, each element being the gap before the next bit.
//!
//! A full configuration is encoded phase by phase with the sequence
//! code, and the three phase codes are then folded with the triple code
//! (each shifted up by one). Decoding arbitrary integers frequently yields
//! the wrong arity for a phase; that outcome is reported as
//! [`Decoded::Infeasible`] rather than as an error.

use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Unbounded non-negative integer; the code space of every encoding here.
pub type Natural = BigUint;

/// Largest bit position a code may occupy.
///
/// Pairing puts its first argument in the exponent, so nested codes grow
/// doubly exponentially. Anything above this bound (16 MiB per integer)
/// is refused instead of exhausting memory.
pub const MAX_CODE_BITS: u64 = 1 << 27;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("argument {position} of a triple code must be at least 1")]
    ZeroTripleArgument { position: usize },
    #[error("cannot encode an empty sequence")]
    EmptySequence,
    #[error("code would need bit position {exponent}, above the {MAX_CODE_BITS}-bit limit")]
    TooLarge { exponent: String },
    #[error("settings hold {found} indices but the phase shares declare {expected}")]
    ShapeMismatch { expected: usize, found: usize },
}

fn bit_position(exponent: &Natural) -> Result<u64, CodecError> {
    match exponent.to_u64() {
        Some(e) if e <= MAX_CODE_BITS => Ok(e),
        _ => Err(CodecError::TooLarge {
            exponent: exponent.to_string(),
        }),
    }
}

/// `2^x (2y + 1) - 1`.
pub fn pair(x: &Natural, y: &Natural) -> Result<Natural, CodecError> {
    let shift = bit_position(x)?;
    let odd = (y << 1u32) + 1u32;
    Ok((odd << shift) - 1u32)
}

/// Inverse of [`pair`]; total on the naturals.
pub fn unpair(z: &Natural) -> (Natural, Natural) {
    let successor = z + 1u32;
    // z + 1 >= 1, so a set bit always exists.
    let x = successor.trailing_zeros().unwrap_or(0);
    let y = (successor >> x) >> 1u32;
    (Natural::from(x), y)
}

/// Triple code over positive arguments: `pair(pair(m - 1, n - 1), q - 1)`.
pub fn encode_triple(m: &Natural, n: &Natural, q: &Natural) -> Result<Natural, CodecError> {
    let shifted = |v: &Natural, position| {
        if v.is_zero() {
            Err(CodecError::ZeroTripleArgument { position })
        } else {
            Ok(v - 1u32)
        }
    };
    let (m, n, q) = (shifted(m, 1)?, shifted(n, 2)?, shifted(q, 3)?);
    pair(&pair(&m, &n)?, &q)
}

/// Inverse of [`encode_triple`]; every component is at least 1.
pub fn decode_triple(z: &Natural) -> (Natural, Natural, Natural) {
    let (inner, q) = unpair(z);
    let (m, n) = unpair(&inner);
    (m + 1u32, n + 1u32, q + 1u32)
}

/// Sequence code: bit `a1 + ... + ai + (i - 1)` is set for each `i`, minus one.
pub fn encode_seq(items: &[u64]) -> Result<Natural, CodecError> {
    if items.is_empty() {
        return Err(CodecError::EmptySequence);
    }
    let mut code = Natural::zero();
    let mut position: u64 = 0;
    for (i, &gap) in items.iter().enumerate() {
        position = if i == 0 {
            Some(gap)
        } else {
            position.checked_add(gap).and_then(|p| p.checked_add(1))
        }
        .filter(|&p| p <= MAX_CODE_BITS)
        .ok_or_else(|| CodecError::TooLarge {
            exponent: items[..=i]
                .iter()
                .fold(Natural::from(i), |acc, &g| acc + g)
                .to_string(),
        })?;
        code.set_bit(position, true);
    }
    Ok(code - 1u32)
}

/// Inverse of [`encode_seq`]. The result has `popcount(t + 1)` elements.
pub fn decode_seq(t: &Natural) -> Vec<u64> {
    let successor = t + 1u32;
    let mut items = Vec::with_capacity(successor.count_ones() as usize);
    let mut previous: Option<u64> = None;
    for (word_index, mut word) in successor.iter_u64_digits().enumerate() {
        while word != 0 {
            let bit = word.trailing_zeros() as u64;
            word &= word - 1;
            let position = word_index as u64 * 64 + bit;
            items.push(match previous {
                None => position,
                Some(p) => position - p - 1,
            });
            previous = Some(position);
        }
    }
    items
}

/// Quantization grid for one parameter: index `i` stands for `min + i * step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSchema {
    pub name: String,
    pub min: f64,
    pub step: f64,
    pub count: u64,
}

impl ParamSchema {
    pub fn new(name: impl Into<String>, min: f64, step: f64, count: u64) -> Self {
        Self {
            name: name.into(),
            min,
            step,
            count,
        }
    }

    pub fn value(&self, index: u64) -> f64 {
        self.min + index as f64 * self.step
    }

    pub fn contains(&self, index: u64) -> bool {
        index < self.count
    }

    /// Every problem with the grid declaration, empty when it is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.name.trim().is_empty() {
            problems.push("parameter name is empty".to_owned());
        }
        if !self.min.is_finite() {
            problems.push(format!("parameter `{}`: min must be finite", self.name));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            problems.push(format!(
                "parameter `{}`: step must be a positive finite number, got {}",
                self.name, self.step
            ));
        }
        if self.count == 0 {
            problems.push(format!(
                "parameter `{}`: count must be at least 1",
                self.name
            ));
        }
        problems
    }
}

/// The three phases of a pipeline, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Veni,
    Vidi,
    Vici,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Veni, Phase::Vidi, Phase::Vici];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Veni => "veni",
            Phase::Vidi => "vidi",
            Phase::Vici => "vici",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How many of the parameters belong to each phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhaseShares {
    pub a: usize,
    pub b: usize,
    pub c: usize,
}

impl PhaseShares {
    pub const fn new(a: usize, b: usize, c: usize) -> Self {
        Self { a, b, c }
    }

    pub const fn total(&self) -> usize {
        self.a + self.b + self.c
    }

    pub const fn share(&self, phase: Phase) -> usize {
        match phase {
            Phase::Veni => self.a,
            Phase::Vidi => self.b,
            Phase::Vici => self.c,
        }
    }

    /// Index range of `phase` within a flat settings list.
    pub fn range(&self, phase: Phase) -> std::ops::Range<usize> {
        match phase {
            Phase::Veni => 0..self.a,
            Phase::Vidi => self.a..self.a + self.b,
            Phase::Vici => self.a + self.b..self.total(),
        }
    }
}

impl fmt::Display for PhaseShares {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.a, self.b, self.c)
    }
}

/// One grid index per declared parameter, Veni first, then Vidi, then Vici.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Settings(Vec<u64>);

impl Settings {
    pub fn new(indices: Vec<u64>) -> Self {
        Self(indices)
    }

    pub fn indices(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The indices belonging to `phase`. Panics if `shares` does not fit.
    pub fn phase(&self, shares: &PhaseShares, phase: Phase) -> &[u64] {
        &self.0[shares.range(phase)]
    }

    /// Parameter values on their grids.
    pub fn values(&self, schemas: &[ParamSchema]) -> Vec<f64> {
        self.0
            .iter()
            .zip(schemas)
            .map(|(&i, schema)| schema.value(i))
            .collect()
    }

    /// First index that falls outside its grid, if any.
    pub fn out_of_grid(&self, schemas: &[ParamSchema]) -> Option<Infeasibility> {
        self.0
            .iter()
            .zip(schemas)
            .enumerate()
            .find(|(_, (&index, schema))| !schema.contains(index))
            .map(|(param, (&index, schema))| Infeasibility::OutOfGrid {
                param,
                index,
                count: schema.count,
            })
    }
}

impl From<Vec<u64>> for Settings {
    fn from(indices: Vec<u64>) -> Self {
        Self(indices)
    }
}

impl fmt::Display for Settings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, index) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{index}")?;
        }
        Ok(())
    }
}

/// Why a code does not name a usable configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Infeasibility {
    /// The code decodes to the wrong number of parameters.
    Length { expected: usize, found: usize },
    /// The phase code decodes to a sequence of the wrong length.
    Arity {
        phase: Phase,
        expected: usize,
        found: usize,
    },
    /// Parameter `param` (position in the flat settings) is off its grid.
    OutOfGrid {
        param: usize,
        index: u64,
        count: u64,
    },
    /// A phase without parameters must carry phase code 0.
    NonzeroEmptySlot { phase: Phase },
}

impl fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Infeasibility::Length { expected, found } => {
                write!(f, "decodes to {found} parameters, expected {expected}")
            }
            Infeasibility::Arity {
                phase,
                expected,
                found,
            } => write!(
                f,
                "{phase} decodes to {found} parameters, expected {expected}"
            ),
            Infeasibility::OutOfGrid {
                param,
                index,
                count,
            } => write!(
                f,
                "parameter {param} decodes to index {index}, grid has {count} points"
            ),
            Infeasibility::NonzeroEmptySlot { phase } => {
                write!(f, "{phase} has no parameters but a nonzero phase code")
            }
        }
    }
}

/// Result of decoding an arbitrary code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Feasible(Settings),
    Infeasible(Infeasibility),
}

impl Decoded {
    pub fn settings(&self) -> Option<&Settings> {
        match self {
            Decoded::Feasible(s) => Some(s),
            Decoded::Infeasible(_) => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Decoded::Feasible(_))
    }
}

/// How a configuration is folded into one code.
///
/// `Flat` sequence-codes all indices in order (Veni, Vidi, Vici), so a
/// code is about `2^(sum of indices + n)`. `Nested` sequence-codes each
/// phase and triple-codes the three phase codes; the Veni and Vidi phase
/// codes then sit in an exponent, and only configurations with small
/// Veni and Vidi indices fit under [`MAX_CODE_BITS`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeScheme {
    #[default]
    Flat,
    Nested,
}

impl CodeScheme {
    pub fn encode(self, settings: &Settings, shares: &PhaseShares) -> Result<Natural, CodecError> {
        match self {
            CodeScheme::Flat => encode_config(settings, shares),
            CodeScheme::Nested => encode_config_nested(settings, shares),
        }
    }

    pub fn decode_shape(self, code: &Natural, shares: &PhaseShares) -> Decoded {
        match self {
            CodeScheme::Flat => decode_shape(code, shares),
            CodeScheme::Nested => decode_shape_nested(code, shares),
        }
    }

    /// Decodes and checks every index against its grid.
    pub fn decode(self, code: &Natural, shares: &PhaseShares, schemas: &[ParamSchema]) -> Decoded {
        debug_assert_eq!(schemas.len(), shares.total());
        match self.decode_shape(code, shares) {
            Decoded::Feasible(settings) => match settings.out_of_grid(schemas) {
                Some(reason) => Decoded::Infeasible(reason),
                None => Decoded::Feasible(settings),
            },
            infeasible => infeasible,
        }
    }
}

impl fmt::Display for CodeScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodeScheme::Flat => "flat",
            CodeScheme::Nested => "nested",
        })
    }
}

fn check_shape(settings: &Settings, shares: &PhaseShares) -> Result<(), CodecError> {
    if settings.len() == shares.total() {
        Ok(())
    } else {
        Err(CodecError::ShapeMismatch {
            expected: shares.total(),
            found: settings.len(),
        })
    }
}

/// Encodes a configuration as the sequence code of all its indices.
/// A configuration without parameters is code 0.
pub fn encode_config(settings: &Settings, shares: &PhaseShares) -> Result<Natural, CodecError> {
    check_shape(settings, shares)?;
    if settings.is_empty() {
        return Ok(Natural::zero());
    }
    encode_seq(settings.indices())
}

/// Inverse of [`encode_config`] up to grid bounds: a code is shaped
/// correctly when `code + 1` has exactly `n` set bits.
pub fn decode_shape(code: &Natural, shares: &PhaseShares) -> Decoded {
    let expected = shares.total();
    let found = if expected == 0 && code.is_zero() {
        0
    } else {
        (code + 1u32).count_ones() as usize
    };
    if found != expected {
        return Decoded::Infeasible(Infeasibility::Length { expected, found });
    }
    if expected == 0 {
        return Decoded::Feasible(Settings(Vec::new()));
    }
    Decoded::Feasible(Settings(decode_seq(code)))
}

/// Inverse of [`encode_config`], checking every index against its grid.
/// `schemas` lists one grid per parameter.
pub fn decode_config(code: &Natural, shares: &PhaseShares, schemas: &[ParamSchema]) -> Decoded {
    CodeScheme::Flat.decode(code, shares, schemas)
}

/// Encodes each phase's indices with the sequence code (a phase without
/// parameters contributes 0) and triple-codes the three phase codes,
/// each plus one.
pub fn encode_config_nested(
    settings: &Settings,
    shares: &PhaseShares,
) -> Result<Natural, CodecError> {
    check_shape(settings, shares)?;
    let mut slots = Vec::with_capacity(3);
    for phase in Phase::ALL {
        let indices = settings.phase(shares, phase);
        let code = if indices.is_empty() {
            Natural::zero()
        } else {
            encode_seq(indices)?
        };
        slots.push(code + 1u32);
    }
    encode_triple(&slots[0], &slots[1], &slots[2])
}

/// Inverse of [`encode_config_nested`], ignoring grid bounds.
pub fn decode_shape_nested(code: &Natural, shares: &PhaseShares) -> Decoded {
    let (m, n, q) = decode_triple(code);
    let mut indices = Vec::with_capacity(shares.total());
    for (phase, slot) in Phase::ALL.into_iter().zip([m, n, q]) {
        let slot = slot - 1u32;
        let expected = shares.share(phase);
        if expected == 0 {
            if !slot.is_zero() {
                return Decoded::Infeasible(Infeasibility::NonzeroEmptySlot { phase });
            }
            continue;
        }
        let found = (&slot + Natural::one()).count_ones() as usize;
        if found != expected {
            return Decoded::Infeasible(Infeasibility::Arity {
                phase,
                expected,
                found,
            });
        }
        indices.extend(decode_seq(&slot));
    }
    Decoded::Feasible(Settings(indices))
}

/// Inverse of [`encode_config_nested`], checking grid bounds.
pub fn decode_config_nested(
    code: &Natural,
    shares: &PhaseShares,
    schemas: &[ParamSchema],
) -> Decoded {
    CodeScheme::Nested.decode(code, shares, schemas)
}

/// Parses a decimal code of any length.
pub fn parse_code(text: &str) -> Option<Natural> {
    let text = text.trim();
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    text.parse().ok()
}
