//! Derivative bookkeeping for the input variables `(x1, x2, t)`.
//!
//! Partial derivatives are addressed by *slots*: each slot is a sorted
//! multi-index over the variables (0 = x1, 1 = x2, 2 = t). Mixed partials are
//! stored once, so `∂x1∂t` and `∂t∂x1` share a slot by construction.
//!
//! A [`JetPlan`] selects which slots a forward pass propagates. Plans must be
//! closed under taking sub-multi-indices, because the chain rule for a slot
//! only involves the slots of its sub-blocks.

use crate::error::{Error, Result};

/// Number of distinct partial-derivative slots up to third order that the
/// engine knows about.
pub const NSLOTS: usize = 19;

/// Sorted multi-index of every slot. Third-order slots cover `∂x_ℓ` of every
/// second-order slot, `ℓ ∈ {x1, x2}`.
pub const SLOT_INDEX: [&[u8]; NSLOTS] = [
    &[],
    &[0],
    &[1],
    &[2],
    &[0, 0],
    &[1, 1],
    &[2, 2],
    &[0, 2],
    &[1, 2],
    &[0, 1],
    &[0, 0, 0],
    &[0, 0, 1],
    &[0, 1, 1],
    &[1, 1, 1],
    &[0, 0, 2],
    &[0, 1, 2],
    &[1, 1, 2],
    &[0, 2, 2],
    &[1, 2, 2],
];

/// Named slot indices.
pub mod slot {
    pub const VALUE: usize = 0;
    pub const X1: usize = 1;
    pub const X2: usize = 2;
    pub const T: usize = 3;
    pub const X1X1: usize = 4;
    pub const X2X2: usize = 5;
    pub const TT: usize = 6;
    pub const X1T: usize = 7;
    pub const X2T: usize = 8;
    pub const X1X2: usize = 9;
    pub const X1X1X1: usize = 10;
    pub const X1X1X2: usize = 11;
    pub const X1X2X2: usize = 12;
    pub const X2X2X2: usize = 13;
    pub const X1X1T: usize = 14;
    pub const X1X2T: usize = 15;
    pub const X2X2T: usize = 16;
    pub const X1TT: usize = 17;
    pub const X2TT: usize = 18;
}

/// Order of each `d2` entry in [`Jet`]: x1x1, x2x2, tt, x1t, x2t, x1x2.
pub const D2_SLOTS: [usize; 6] = [
    slot::X1X1,
    slot::X2X2,
    slot::TT,
    slot::X1T,
    slot::X2T,
    slot::X1X2,
];

pub(crate) fn slot_of(index: &[u8]) -> Option<usize> {
    let mut sorted = [0u8; 3];
    let n = index.len();
    if n > 3 {
        return None;
    }
    sorted[..n].copy_from_slice(index);
    sorted[..n].sort_unstable();
    SLOT_INDEX.iter().position(|s| *s == &sorted[..n])
}

/// Slot of `∂x_ℓ` applied to slot `s` (ℓ = 0 for x1, 1 for x2).
pub fn spatial_derivative_slot(s: usize, axis: usize) -> Option<usize> {
    let base = SLOT_INDEX[s];
    let mut idx = base.to_vec();
    idx.push(axis as u8);
    slot_of(&idx)
}

/// A scalar value with its partials with respect to `(x1, x2, t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    /// `∂x1, ∂x2, ∂t`.
    pub d1: [f64; 3],
    /// `∂²x1, ∂²x2, ∂²t, ∂x1∂t, ∂x2∂t, ∂x1∂x2`; zero when `order < 2`.
    pub d2: [f64; 6],
    /// `d3[ℓ][k]` is `∂x_ℓ` of `d2[k]`. Present iff the jet has order 3.
    pub d3: Option<[[f64; 6]; 2]>,
    pub order: usize,
}

impl Jet {
    pub fn constant(value: f64, order: usize) -> Self {
        Jet::from_slots(&Slots::constant(value), order)
    }

    /// Builds a jet from slot storage, keeping components up to `order`.
    pub fn from_slots(s: &Slots, order: usize) -> Self {
        let d1 = if order >= 1 {
            [s[slot::X1], s[slot::X2], s[slot::T]]
        } else {
            [0.0; 3]
        };
        let d2 = if order >= 2 {
            D2_SLOTS.map(|k| s[k])
        } else {
            [0.0; 6]
        };
        let d3 = (order >= 3).then(|| {
            let mut out = [[0.0; 6]; 2];
            for (axis, row) in out.iter_mut().enumerate() {
                for (k, &d2_slot) in D2_SLOTS.iter().enumerate() {
                    let s3 = spatial_derivative_slot(d2_slot, axis).expect("closed slot table");
                    row[k] = s[s3];
                }
            }
            out
        });
        Jet {
            value: s[slot::VALUE],
            d1,
            d2,
            d3,
            order,
        }
    }

    pub fn to_slots(&self) -> Slots {
        let mut s = Slots::constant(self.value);
        s[slot::X1] = self.d1[0];
        s[slot::X2] = self.d1[1];
        s[slot::T] = self.d1[2];
        for (k, &d2_slot) in D2_SLOTS.iter().enumerate() {
            s[d2_slot] = self.d2[k];
        }
        if let Some(d3) = &self.d3 {
            for (axis, row) in d3.iter().enumerate() {
                for (k, &d2_slot) in D2_SLOTS.iter().enumerate() {
                    let s3 = spatial_derivative_slot(d2_slot, axis).expect("closed slot table");
                    s[s3] = row[k];
                }
            }
        }
        s
    }

    /// Look up a partial by its multi-index over `(x1, x2, t)`.
    pub fn partial(&self, index: &[u8]) -> Option<f64> {
        let s = slot_of(index)?;
        if index.len() > self.order {
            return None;
        }
        Some(self.to_slots()[s])
    }
}

/// Dense slot storage for one scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slots(pub [f64; NSLOTS]);

impl Slots {
    pub fn zero() -> Self {
        Slots([0.0; NSLOTS])
    }

    pub fn constant(value: f64) -> Self {
        let mut s = [0.0; NSLOTS];
        s[0] = value;
        Slots(s)
    }
}

impl std::ops::Index<usize> for Slots {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Slots {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// One Faà di Bruno term: `σ^(order)(z) · Π z[blocks]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Term {
    pub order: usize,
    pub blocks: [usize; 3],
    pub nblocks: usize,
}

/// Set partitions of `{0}`, `{0,1}`, `{0,1,2}` (positions in a multi-index).
const PARTITIONS_1: &[&[&[usize]]] = &[&[&[0]]];
const PARTITIONS_2: &[&[&[usize]]] = &[&[&[0, 1]], &[&[0], &[1]]];
const PARTITIONS_3: &[&[&[usize]]] = &[
    &[&[0, 1, 2]],
    &[&[0, 1], &[2]],
    &[&[0, 2], &[1]],
    &[&[1, 2], &[0]],
    &[&[0], &[1], &[2]],
];

/// Which derivative slots a forward pass propagates, in channel order.
#[derive(Clone, Debug)]
pub struct JetPlan {
    slots: Vec<usize>,
    channel_of: [Option<usize>; NSLOTS],
    terms: Vec<Vec<Term>>,
    max_order: usize,
}

impl JetPlan {
    /// Builds a plan from a slot list. The value slot is always channel 0.
    pub fn from_slots(requested: &[usize]) -> Result<Self> {
        let mut slots = vec![slot::VALUE];
        for &s in requested {
            if s >= NSLOTS {
                return Err(Error::Invalid(format!("unknown derivative slot {s}")));
            }
            if !slots.contains(&s) {
                slots.push(s);
            }
        }
        let mut channel_of = [None; NSLOTS];
        for (c, &s) in slots.iter().enumerate() {
            channel_of[s] = Some(c);
        }
        let mut terms = Vec::with_capacity(slots.len());
        let mut max_order = 0;
        for &s in &slots {
            let index = SLOT_INDEX[s];
            max_order = max_order.max(index.len());
            let partitions: &[&[&[usize]]] = match index.len() {
                0 => &[],
                1 => PARTITIONS_1,
                2 => PARTITIONS_2,
                _ => PARTITIONS_3,
            };
            let mut slot_terms = Vec::with_capacity(partitions.len());
            for partition in partitions {
                let mut blocks = [0usize; 3];
                for (b, positions) in partition.iter().enumerate() {
                    let sub: Vec<u8> = positions.iter().map(|&p| index[p]).collect();
                    let sub_slot = slot_of(&sub).expect("sub-index of a known slot");
                    blocks[b] = channel_of[sub_slot].ok_or_else(|| {
                        Error::Invalid(format!(
                            "derivative plan is not closed: slot {s} needs slot {sub_slot}"
                        ))
                    })?;
                }
                slot_terms.push(Term {
                    order: partition.len(),
                    blocks,
                    nblocks: partition.len(),
                });
            }
            terms.push(slot_terms);
        }
        Ok(JetPlan {
            slots,
            channel_of,
            terms,
            max_order,
        })
    }

    /// Value only.
    pub fn value() -> Self {
        Self::from_slots(&[]).expect("value plan")
    }

    /// Every slot up to `order` (1, 2 or 3).
    pub fn full(order: usize) -> Result<Self> {
        let n = match order {
            0 => 1,
            1 => 4,
            2 => 10,
            3 => NSLOTS,
            _ => {
                return Err(Error::UnsupportedOrder {
                    requested: order,
                    max: 3,
                })
            }
        };
        Self::from_slots(&(0..n).collect::<Vec<_>>())
    }

    pub fn channels(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    pub fn channel_of(&self, s: usize) -> Option<usize> {
        self.channel_of[s]
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub(crate) fn terms(&self, channel: usize) -> &[Term] {
        &self.terms[channel]
    }

    /// True when every slot of `other` is propagated by `self`.
    pub fn covers(&self, other: &[usize]) -> bool {
        other.iter().all(|&s| self.channel_of[s].is_some())
    }
}
