//! Fermionic operator-ordering conventions as signed relabelings of the Fock basis.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{BasisLabel, FockVector, ModeIndex, ModeTable, Species, Statistics, Wedge};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OrderingConvention {
    /// Blocks `(c_{σ,I}, d_{-σ,II}, d_{σ,I}, c_{-σ,II})` for descending σ.
    Spin,
    /// All right pairs `(c_{σ,I}, d_{-σ,II})`, then all left pairs `(d_{σ,I}, c_{-σ,II})`,
    /// each for descending σ.
    Canonical,
    /// Every region I mode before every region II mode.
    Physical,
}

impl OrderingConvention {
    pub const ALL: [OrderingConvention; 3] =
        [OrderingConvention::Spin, OrderingConvention::Canonical, OrderingConvention::Physical];

    pub fn name(self) -> &'static str {
        match self {
            OrderingConvention::Spin => "spin",
            OrderingConvention::Canonical => "canonical",
            OrderingConvention::Physical => "physical",
        }
    }
}

impl fmt::Display for OrderingConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrderingConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spin" => Ok(OrderingConvention::Spin),
            "canonical" => Ok(OrderingConvention::Canonical),
            "physical" => Ok(OrderingConvention::Physical),
            other => Err(Error::InvalidParameter(format!("unknown ordering '{other}'"))),
        }
    }
}

/// `perm[i]` is the new position of the mode stored at position `i`.
pub type Permutation = Vec<usize>;

fn is_right_pair_mode(m: &ModeIndex) -> bool {
    // c_{σ,I} and d_{-σ,II} form the right Unruh pair; d_{σ,I} and c_{-σ,II} the left one.
    matches!((m.wedge, m.species), (Wedge::I, Species::Particle) | (Wedge::II, Species::Antiparticle))
}

fn from_new_order(table: &ModeTable, new_order: &[usize]) -> Permutation {
    let mut perm = vec![0; table.len()];
    for (new_pos, &old_pos) in new_order.iter().enumerate() {
        perm[old_pos] = new_pos;
    }
    perm
}

/// Target positions for `conv`, relative to a table in spin order. Bosonic tables get
/// the identity, since bosonic operators commute.
pub fn permutation_for(conv: OrderingConvention, table: &ModeTable) -> Result<Permutation> {
    permutation_variant(conv, table, false)
}

/// As [`permutation_for`]; with `reverse_within_wedge`, the physical ordering lists
/// each wedge's modes in reverse. Both variants keep region I first.
pub fn permutation_variant(conv: OrderingConvention, table: &ModeTable, reverse_within_wedge: bool) -> Result<Permutation> {
    let n = table.len();
    if table.statistics() == Statistics::Bose {
        return Ok((0..n).collect());
    }
    if !table.is_spin_ordered() {
        return Err(Error::InvalidParameter("ordering conventions are defined relative to the spin ordering".into()));
    }
    if reverse_within_wedge && conv != OrderingConvention::Physical {
        return Err(Error::InvalidParameter(format!("intra-wedge variant only applies to the physical ordering, not {conv}")));
    }
    let modes = table.modes();
    let new_order: Vec<usize> = match conv {
        OrderingConvention::Spin => (0..n).collect(),
        OrderingConvention::Canonical => {
            let right = (0..n).filter(|&i| is_right_pair_mode(&modes[i]));
            let left = (0..n).filter(|&i| !is_right_pair_mode(&modes[i]));
            right.chain(left).collect()
        }
        OrderingConvention::Physical => {
            let mut first: Vec<usize> = (0..n).filter(|&i| modes[i].wedge == Wedge::I).collect();
            let mut second: Vec<usize> = (0..n).filter(|&i| modes[i].wedge == Wedge::II).collect();
            if reverse_within_wedge {
                first.reverse();
                second.reverse();
            }
            first.into_iter().chain(second).collect()
        }
    };
    Ok(from_new_order(table, &new_order))
}

fn check_permutation(perm: &[usize], len: usize) -> Result<()> {
    if perm.len() != len {
        return Err(Error::PermutationLength { expected: len, got: perm.len() });
    }
    let mut seen = vec![false; len];
    for &p in perm {
        if p >= len || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidParameter(format!("{perm:?} is not a permutation")));
        }
    }
    Ok(())
}

pub fn inverse(perm: &[usize]) -> Permutation {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `q ∘ p`: first move by `p`, then by `q`.
pub fn compose(q: &[usize], p: &[usize]) -> Permutation {
    p.iter().map(|&i| q[i]).collect()
}

pub fn permuted_table(table: &ModeTable, perm: &[usize]) -> Result<ModeTable> {
    check_permutation(perm, table.len())?;
    let mut modes = table.modes().to_vec();
    for (i, &p) in perm.iter().enumerate() {
        modes[p] = table.modes()[i];
    }
    ModeTable::from_modes(table.field(), modes)
}

/// Parity of the number of inversions of `seq`.
fn inversion_parity(seq: &[usize]) -> bool {
    let mut odd = false;
    for i in 0..seq.len() {
        for j in i + 1..seq.len() {
            if seq[i] > seq[j] {
                odd = !odd;
            }
        }
    }
    odd
}

/// Expresses `v` in the basis whose creation operators are applied in the permuted
/// order. Each fermionic amplitude picks up the sign of reordering its occupied modes.
pub fn relabel_with_signs(v: &FockVector, perm: &[usize]) -> Result<FockVector> {
    let table = Arc::new(permuted_table(v.table(), perm)?);
    let fermionic = v.statistics() == Statistics::Fermi;
    let mut amps = BTreeMap::new();
    let mut occupied = Vec::new();
    for (label, amp) in v.iter() {
        let mut new = BasisLabel::zeros(label.len());
        occupied.clear();
        for (i, &n) in label.occupations().iter().enumerate() {
            new.0[perm[i]] = n;
            if n != 0 {
                occupied.push(perm[i]);
            }
        }
        let sign = if fermionic && inversion_parity(&occupied) { -1.0 } else { 1.0 };
        amps.insert(new, amp * Complex64::new(sign, 0.0));
    }
    Ok(FockVector::relabeled_raw(table, v.raw_cutoff(), amps, v.truncation_loss()))
}

/// Relabels a spin-ordered vector into `conv`.
pub fn to_convention(v: &FockVector, conv: OrderingConvention) -> Result<FockVector> {
    relabel_with_signs(v, &permutation_for(conv, v.table())?)
}
