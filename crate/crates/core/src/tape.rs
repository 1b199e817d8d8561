//! Reverse-mode automatic differentiation over scalar elementary operations.
//!
//! A forward pass records every operation whose result depends on a tape
//! input into a linear Wengert list. Values that depend on no input stay plain
//! constants and are never recorded, so geometry built only from constants
//! can be shared between forward passes without re-recording.
//!
//! Recording happens into a thread-local buffer installed by [`Recorder`];
//! [`Var`] arithmetic appends to that buffer. One recording may be active per
//! thread at a time.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Slot marker for values that are not on the tape.
const NO_SLOT: u32 = u32::MAX;

/// One elementary operation. Operand fields are tape slots; `f64` fields are
/// constants folded into the operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Input,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    AddConst(u32, f64),
    MulConst(u32, f64),
    /// `c - a`
    ConstSub(f64, u32),
    /// `a / c`
    DivConst(u32, f64),
    /// `c / a`
    ConstDiv(f64, u32),
    Neg(u32),
    Sin(u32),
    Cos(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub op: Op,
    pub value: f64,
}

thread_local! {
    static ACTIVE: RefCell<Option<Vec<Entry>>> = const { RefCell::new(None) };
}

fn push(op: Op, value: f64) -> u32 {
    ACTIVE.with(|cell| {
        let mut guard = cell.borrow_mut();
        let entries = guard
            .as_mut()
            .expect("tape operation on a variable outside an active recording");
        let slot = entries.len() as u32;
        entries.push(Entry { op, value });
        slot
    })
}

#[derive(Debug, thiserror::Error)]
#[error("a tape recording is already active on this thread")]
pub struct RecordingActive;

/// Scoped ownership of the thread's recording buffer.
///
/// Dropping a recorder without calling [`Recorder::finish`] discards the
/// partial tape, which keeps the thread usable after an evaluation error.
pub struct Recorder {
    inputs: Vec<u32>,
    finished: bool,
}

impl Recorder {
    pub fn begin(capacity: usize) -> Result<Self, RecordingActive> {
        ACTIVE.with(|cell| {
            let mut guard = cell.borrow_mut();
            if guard.is_some() {
                return Err(RecordingActive);
            }
            *guard = Some(Vec::with_capacity(capacity));
            Ok(Recorder {
                inputs: Vec::new(),
                finished: false,
            })
        })
    }

    /// Registers a new independent variable.
    pub fn input(&mut self, value: f64) -> Var {
        let slot = push(Op::Input, value);
        self.inputs.push(slot);
        Var { value, slot }
    }

    pub fn finish(mut self) -> Tape {
        self.finished = true;
        let entries = ACTIVE.with(|cell| cell.borrow_mut().take()).unwrap_or_default();
        Tape {
            entries,
            inputs: std::mem::take(&mut self.inputs),
        }
    }
}

impl Drop for Recorder {
    fn drop(&mut self) {
        if !self.finished {
            ACTIVE.with(|cell| cell.borrow_mut().take());
        }
    }
}

/// A finished recording.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tape {
    entries: Vec<Entry>,
    inputs: Vec<u32>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Input slots in registration order.
    pub fn inputs(&self) -> &[u32] {
        &self.inputs
    }

    pub fn value(&self, slot: u32) -> f64 {
        self.entries[slot as usize].value
    }

    /// Re-executes the recorded operations with new input values (given in
    /// registration order) and returns every slot's value.
    pub fn replay(&self, inputs: &[f64]) -> Vec<f64> {
        assert_eq!(inputs.len(), self.inputs.len(), "input count mismatch");
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut next_input = inputs.iter();
        for entry in &self.entries {
            let v = |s: u32| values[s as usize];
            let value = match entry.op {
                Op::Input => *next_input.next().expect("input count checked above"),
                Op::Add(a, b) => v(a) + v(b),
                Op::Sub(a, b) => v(a) - v(b),
                Op::Mul(a, b) => v(a) * v(b),
                Op::Div(a, b) => v(a) / v(b),
                Op::AddConst(a, c) => v(a) + c,
                Op::MulConst(a, c) => v(a) * c,
                Op::ConstSub(c, a) => c - v(a),
                Op::DivConst(a, c) => v(a) / c,
                Op::ConstDiv(c, a) => c / v(a),
                Op::Neg(a) => -v(a),
                Op::Sin(a) => v(a).sin(),
                Op::Cos(a) => v(a).cos(),
            };
            values.push(value);
        }
        values
    }

    /// Local partial derivatives of one entry with respect to its operands.
    fn partials(&self, entry: &Entry) -> [(u32, f64); 2] {
        let v = |s: u32| self.entries[s as usize].value;
        match entry.op {
            Op::Input => [(NO_SLOT, 0.0); 2],
            Op::Add(a, b) => [(a, 1.0), (b, 1.0)],
            Op::Sub(a, b) => [(a, 1.0), (b, -1.0)],
            Op::Mul(a, b) => [(a, v(b)), (b, v(a))],
            Op::Div(a, b) => {
                let d = v(b);
                [(a, 1.0 / d), (b, -v(a) / (d * d))]
            }
            Op::AddConst(a, _) => [(a, 1.0), (NO_SLOT, 0.0)],
            Op::MulConst(a, c) => [(a, c), (NO_SLOT, 0.0)],
            Op::ConstSub(_, a) => [(a, -1.0), (NO_SLOT, 0.0)],
            Op::DivConst(a, c) => [(a, 1.0 / c), (NO_SLOT, 0.0)],
            Op::ConstDiv(c, a) => {
                let d = v(a);
                [(a, -c / (d * d)), (NO_SLOT, 0.0)]
            }
            Op::Neg(a) => [(a, -1.0), (NO_SLOT, 0.0)],
            Op::Sin(a) => [(a, v(a).cos()), (NO_SLOT, 0.0)],
            Op::Cos(a) => [(a, -v(a).sin()), (NO_SLOT, 0.0)],
        }
    }

    /// First slot whose local partials are not finite, if any.
    ///
    /// Only divisions can produce a non-finite partial from finite values, so
    /// other operations are checked through their value alone.
    pub fn first_nonfinite_partial(&self) -> Option<u32> {
        self.entries.iter().enumerate().find_map(|(i, e)| {
            let bad = !e.value.is_finite()
                || (matches!(e.op, Op::Div(..) | Op::DivConst(..) | Op::ConstDiv(..))
                    && self
                        .partials(e)
                        .iter()
                        .any(|(s, d)| *s != NO_SLOT && !d.is_finite()));
            bad.then_some(i as u32)
        })
    }

    /// Reverse sweep. `seeds` are (slot, adjoint) pairs, accumulated when a
    /// slot repeats. Returns the adjoint of every slot.
    pub fn adjoints(&self, seeds: impl IntoIterator<Item = (u32, f64)>) -> Vec<f64> {
        let mut adj = vec![0.0; self.entries.len()];
        for (slot, g) in seeds {
            adj[slot as usize] += g;
        }
        for i in (0..self.entries.len()).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            for (s, d) in self.partials(&self.entries[i]) {
                if s != NO_SLOT {
                    adj[s as usize] += g * d;
                }
            }
        }
        adj
    }
}

/// Scalar arithmetic shared by plain `f64` evaluation and taped evaluation.
pub trait Scalar:
    Copy
    + fmt::Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn is_constant(self) -> bool;

    /// Values below `lo` become the constant `lo` (zero derivative).
    fn clamp_min(self, lo: f64) -> Self {
        if self.value() < lo {
            Self::constant(lo)
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn is_constant(self) -> bool {
        true
    }
}

/// A scalar that is either a constant or a slot on the active tape.
#[derive(Clone, Copy, PartialEq)]
pub struct Var {
    value: f64,
    slot: u32,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot() {
            Some(s) => write!(f, "Var({} @{})", self.value, s),
            None => write!(f, "Const({})", self.value),
        }
    }
}

impl Var {
    pub fn slot(self) -> Option<u32> {
        (self.slot != NO_SLOT).then_some(self.slot)
    }

    fn record(op: Op, value: f64) -> Var {
        Var {
            value,
            slot: push(op, value),
        }
    }
}

impl Scalar for Var {
    fn constant(value: f64) -> Self {
        Var {
            value,
            slot: NO_SLOT,
        }
    }
    fn value(self) -> f64 {
        self.value
    }
    fn sin(self) -> Self {
        let value = self.value.sin();
        match self.slot() {
            None => Var::constant(value),
            Some(a) => Var::record(Op::Sin(a), value),
        }
    }
    fn cos(self) -> Self {
        let value = self.value.cos();
        match self.slot() {
            None => Var::constant(value),
            Some(a) => Var::record(Op::Cos(a), value),
        }
    }
    fn is_constant(self) -> bool {
        self.slot == NO_SLOT
    }
}

// Shortcuts below skip recording only when the result is the operand itself
// bit for bit, or a constant with zero derivative.

impl Add for Var {
    type Output = Var;
    fn add(self, rhs: Var) -> Var {
        let value = self.value + rhs.value;
        match (self.slot(), rhs.slot()) {
            (None, None) => Var::constant(value),
            (Some(a), None) => {
                if value.to_bits() == self.value.to_bits() {
                    self
                } else {
                    Var::record(Op::AddConst(a, rhs.value), value)
                }
            }
            (None, Some(b)) => {
                if value.to_bits() == rhs.value.to_bits() {
                    rhs
                } else {
                    Var::record(Op::AddConst(b, self.value), value)
                }
            }
            (Some(a), Some(b)) => Var::record(Op::Add(a, b), value),
        }
    }
}

impl Sub for Var {
    type Output = Var;
    fn sub(self, rhs: Var) -> Var {
        let value = self.value - rhs.value;
        match (self.slot(), rhs.slot()) {
            (None, None) => Var::constant(value),
            (Some(a), None) => {
                if value.to_bits() == self.value.to_bits() {
                    self
                } else {
                    Var::record(Op::AddConst(a, -rhs.value), value)
                }
            }
            (None, Some(b)) => Var::record(Op::ConstSub(self.value, b), value),
            (Some(a), Some(b)) => Var::record(Op::Sub(a, b), value),
        }
    }
}

impl Mul for Var {
    type Output = Var;
    fn mul(self, rhs: Var) -> Var {
        let value = self.value * rhs.value;
        match (self.slot(), rhs.slot()) {
            (None, None) => Var::constant(value),
            (Some(a), None) => mul_const(self, a, rhs.value, value),
            (None, Some(b)) => mul_const(rhs, b, self.value, value),
            (Some(a), Some(b)) => Var::record(Op::Mul(a, b), value),
        }
    }
}

fn mul_const(var: Var, slot: u32, c: f64, value: f64) -> Var {
    if c == 0.0 {
        Var::constant(value)
    } else if c == 1.0 {
        var
    } else {
        Var::record(Op::MulConst(slot, c), value)
    }
}

impl Div for Var {
    type Output = Var;
    fn div(self, rhs: Var) -> Var {
        let value = self.value / rhs.value;
        match (self.slot(), rhs.slot()) {
            (None, None) => Var::constant(value),
            (Some(a), None) => {
                if rhs.value == 1.0 {
                    self
                } else {
                    Var::record(Op::DivConst(a, rhs.value), value)
                }
            }
            (None, Some(b)) => {
                if self.value == 0.0 {
                    Var::constant(value)
                } else {
                    Var::record(Op::ConstDiv(self.value, b), value)
                }
            }
            (Some(a), Some(b)) => Var::record(Op::Div(a, b), value),
        }
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        match self.slot() {
            None => Var::constant(-self.value),
            Some(a) => Var::record(Op::Neg(a), -self.value),
        }
    }
}
