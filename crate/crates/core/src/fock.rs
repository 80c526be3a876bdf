//! Occupation-number Fock space for a single Unruh frequency sector.
//!
//! Modes are stored in a [`ModeTable`]; a basis state is the product of the
//! creation operators of its occupied modes applied to the Rindler vacuum *in
//! table order*. Fermionic signs therefore follow the prefix-parity rule: acting
//! on position `i` picks up `(-1)^(occupied modes before i)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Amplitudes smaller than this are dropped after every operation.
pub const PRUNE_THRESHOLD: f64 = 1e-15;

/// A half-integer stored as twice its value (`3/2` is `HalfInt(3)`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const ZERO: HalfInt = HalfInt(0);

    pub const fn from_twice(twice: i32) -> Self {
        HalfInt(twice)
    }

    pub const fn twice(self) -> i32 {
        self.0
    }

    pub fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }
}

impl std::ops::Neg for HalfInt {
    type Output = HalfInt;
    fn neg(self) -> HalfInt {
        HalfInt(-self.0)
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

impl FromStr for HalfInt {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidParameter(format!("'{s}' is not an integer or half-integer"));
        if let Some((num, den)) = s.split_once('/') {
            let num: i32 = num.trim().parse().map_err(|_| bad())?;
            match den.trim() {
                "2" => Ok(HalfInt(num)),
                "1" => Ok(HalfInt(2 * num)),
                _ => Err(bad()),
            }
        } else if let Ok(n) = s.parse::<i32>() {
            Ok(HalfInt(2 * n))
        } else {
            let x: f64 = s.parse().map_err(|_| bad())?;
            let twice = 2.0 * x;
            if (twice - twice.round()).abs() > 1e-12 {
                return Err(bad());
            }
            Ok(HalfInt(twice.round() as i32))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Statistics {
    Fermi,
    Bose,
}

impl fmt::Display for Statistics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Statistics::Fermi => "fermi",
            Statistics::Bose => "bose",
        })
    }
}

impl FromStr for Statistics {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fermi" | "fermion" | "fermionic" => Ok(Statistics::Fermi),
            "bose" | "boson" | "bosonic" => Ok(Statistics::Bose),
            other => Err(Error::InvalidParameter(format!("unknown statistics '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Wedge {
    I,
    II,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Species {
    Particle,
    Antiparticle,
}

/// Spin and statistics of the field.
///
/// Fermionic fields need a half-odd spin, except spin 0 which is accepted as
/// the Grassmann scalar (a single four-mode sector). Bosonic fields need an
/// integer spin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Field {
    pub spin: HalfInt,
    pub statistics: Statistics,
}

impl Field {
    pub fn new(statistics: Statistics, spin: HalfInt) -> Result<Self> {
        let ok = spin.twice() >= 0
            && match statistics {
                Statistics::Fermi => !spin.is_integer() || spin == HalfInt::ZERO,
                Statistics::Bose => spin.is_integer(),
            };
        if !ok {
            return Err(Error::SpinStatistics {
                spin: spin.to_string(),
                statistics: statistics.to_string(),
            });
        }
        Ok(Field { spin, statistics })
    }

    pub fn fermi(spin: HalfInt) -> Result<Self> {
        Field::new(Statistics::Fermi, spin)
    }

    pub fn bose(spin: HalfInt) -> Result<Self> {
        Field::new(Statistics::Bose, spin)
    }

    /// Spin projections in descending order.
    pub fn sigmas(&self) -> Vec<HalfInt> {
        (0..=self.spin.twice())
            .map(|k| HalfInt(self.spin.twice() - 2 * k))
            .collect()
    }

    pub fn has_sigma(&self, sigma: HalfInt) -> bool {
        sigma.twice().abs() <= self.spin.twice() && (self.spin.twice() - sigma.twice()) % 2 == 0
    }

    pub fn check_sigma(&self, sigma: HalfInt) -> Result<()> {
        if self.has_sigma(sigma) {
            Ok(())
        } else {
            Err(Error::InvalidSigma {
                sigma: sigma.to_string(),
                spin: self.spin.to_string(),
            })
        }
    }

    /// Number of modes in one spin sector.
    pub fn sector_size(&self) -> usize {
        match self.statistics {
            Statistics::Fermi => 4,
            Statistics::Bose => 2,
        }
    }

    pub fn num_sectors(&self) -> usize {
        self.spin.twice() as usize + 1
    }

    /// Index of the block holding `sigma` in the spin ordering.
    pub fn sector_index(&self, sigma: HalfInt) -> Result<usize> {
        self.check_sigma(sigma)?;
        Ok(((self.spin.twice() - sigma.twice()) / 2) as usize)
    }
}

/// One Rindler mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeIndex {
    pub wedge: Wedge,
    pub species: Species,
    pub sigma: HalfInt,
    pub statistics: Statistics,
}

impl ModeIndex {
    /// Fermionic particle mode `c_{sigma,wedge}`.
    pub fn c(sigma: HalfInt, wedge: Wedge) -> Self {
        ModeIndex { wedge, species: Species::Particle, sigma, statistics: Statistics::Fermi }
    }

    /// Fermionic antiparticle mode `d_{sigma,wedge}`.
    pub fn d(sigma: HalfInt, wedge: Wedge) -> Self {
        ModeIndex { wedge, species: Species::Antiparticle, sigma, statistics: Statistics::Fermi }
    }

    /// Bosonic mode `a_{sigma,wedge}`.
    pub fn a(sigma: HalfInt, wedge: Wedge) -> Self {
        ModeIndex { wedge, species: Species::Particle, sigma, statistics: Statistics::Bose }
    }
}

impl fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match (self.statistics, self.species) {
            (Statistics::Bose, _) => "a",
            (Statistics::Fermi, Species::Particle) => "c",
            (Statistics::Fermi, Species::Antiparticle) => "d",
        };
        let wedge = match self.wedge {
            Wedge::I => "I",
            Wedge::II => "II",
        };
        write!(f, "{name}[{},{wedge}]", self.sigma)
    }
}

/// Ordered list of modes; the order fixes storage positions and fermionic signs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModeTable {
    field: Field,
    modes: Vec<ModeIndex>,
}

impl ModeTable {
    /// Arbitrary table over modes of `field`. Rejects duplicates and foreign modes.
    pub fn from_modes(field: Field, modes: Vec<ModeIndex>) -> Result<Self> {
        for (i, m) in modes.iter().enumerate() {
            if m.statistics != field.statistics || !field.has_sigma(m.sigma) {
                return Err(Error::UnknownMode(m.to_string()));
            }
            if field.statistics == Statistics::Bose && m.species != Species::Particle {
                return Err(Error::UnknownMode(m.to_string()));
            }
            if modes[..i].contains(m) {
                return Err(Error::DuplicateMode(m.to_string()));
            }
        }
        Ok(ModeTable { field, modes })
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn statistics(&self) -> Statistics {
        self.field.statistics
    }

    pub fn modes(&self) -> &[ModeIndex] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn position(&self, mode: &ModeIndex) -> Option<usize> {
        self.modes.iter().position(|m| m == mode)
    }

    pub fn require_position(&self, mode: &ModeIndex) -> Result<usize> {
        self.position(mode).ok_or_else(|| Error::UnknownMode(mode.to_string()))
    }

    /// The modes of the spin-`sigma` block, in spin ordering.
    pub fn sector_modes(field: Field, sigma: HalfInt) -> Result<Vec<ModeIndex>> {
        field.check_sigma(sigma)?;
        Ok(match field.statistics {
            Statistics::Fermi => vec![
                ModeIndex::c(sigma, Wedge::I),
                ModeIndex::d(-sigma, Wedge::II),
                ModeIndex::d(sigma, Wedge::I),
                ModeIndex::c(-sigma, Wedge::II),
            ],
            Statistics::Bose => vec![ModeIndex::a(sigma, Wedge::I), ModeIndex::a(-sigma, Wedge::II)],
        })
    }

    /// Table holding only the spin-`sigma` block.
    pub fn sector(field: Field, sigma: HalfInt) -> Result<Self> {
        ModeTable::from_modes(field, ModeTable::sector_modes(field, sigma)?)
    }

    pub fn is_spin_ordered(&self) -> bool {
        build_mode_table(self.field).map(|t| t == *self).unwrap_or(false)
    }
}

/// Full mode table of `field` in the spin ordering: for each sigma (descending)
/// the block `(c_{σ,I}, d_{-σ,II}, d_{σ,I}, c_{-σ,II})`, or `(a_{σ,I}, a_{-σ,II})`
/// for bosons.
pub fn build_mode_table(field: Field) -> Result<ModeTable> {
    let field = Field::new(field.statistics, field.spin)?;
    let mut modes = Vec::with_capacity(field.num_sectors() * field.sector_size());
    for sigma in field.sigmas() {
        modes.extend(ModeTable::sector_modes(field, sigma)?);
    }
    ModeTable::from_modes(field, modes)
}

/// Occupation numbers, one entry per table position.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BasisLabel(pub SmallVec<[u16; 16]>);

impl BasisLabel {
    pub fn zeros(len: usize) -> Self {
        BasisLabel(SmallVec::from_elem(0, len))
    }

    pub fn from_slice(occ: &[u16]) -> Self {
        BasisLabel(SmallVec::from_slice(occ))
    }

    /// Parses a fermionic bitstring such as `"0110"`.
    pub fn from_bits(bits: &str) -> Result<Self> {
        bits.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(Error::InvalidLabel(bits.to_string())),
            })
            .collect::<Result<SmallVec<_>>>()
            .map(BasisLabel)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn occupations(&self) -> &[u16] {
        &self.0
    }

    pub fn total(&self) -> u32 {
        self.0.iter().map(|&n| n as u32).sum()
    }

    pub fn concat(&self, other: &BasisLabel) -> BasisLabel {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        BasisLabel(v)
    }

    pub fn select(&self, positions: &[usize]) -> BasisLabel {
        BasisLabel(positions.iter().map(|&p| self.0[p]).collect())
    }

    /// Bitstring for fermions, comma-separated occupations for bosons.
    pub fn render(&self, statistics: Statistics) -> String {
        match statistics {
            Statistics::Fermi => self.0.iter().map(|n| char::from(b'0' + *n as u8)).collect(),
            Statistics::Bose => self.0.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
        }
    }
}

/// Sparse state vector over the occupation basis of a mode table.
#[derive(Clone, Debug)]
pub struct FockVector {
    table: Arc<ModeTable>,
    cutoff: Option<u16>,
    amps: BTreeMap<BasisLabel, Complex64>,
    truncation_loss: f64,
}

impl FockVector {
    /// Zero vector. `cutoff` is the per-mode occupation bound and is ignored for fermions.
    pub fn zero(table: Arc<ModeTable>, cutoff: Option<usize>) -> Result<Self> {
        let cutoff = match table.statistics() {
            Statistics::Fermi => None,
            Statistics::Bose => {
                let c = cutoff.ok_or_else(|| {
                    Error::InvalidParameter("bosonic vectors need an occupation cutoff".into())
                })?;
                if c == 0 || c > u16::MAX as usize - 1 {
                    return Err(Error::InvalidParameter(format!("cutoff {c} out of range")));
                }
                Some(c as u16)
            }
        };
        Ok(FockVector { table, cutoff, amps: BTreeMap::new(), truncation_loss: 0.0 })
    }

    /// Single basis vector.
    pub fn basis(table: Arc<ModeTable>, label: BasisLabel, cutoff: Option<usize>) -> Result<Self> {
        let mut v = FockVector::zero(table, cutoff)?;
        v.check_label(&label)?;
        v.amps.insert(label, Complex64::new(1.0, 0.0));
        Ok(v)
    }

    /// The Rindler vacuum (all modes empty).
    pub fn rindler_vacuum(table: Arc<ModeTable>, cutoff: Option<usize>) -> Result<Self> {
        let n = table.len();
        FockVector::basis(table, BasisLabel::zeros(n), cutoff)
    }

    /// Builds a vector from `(label, amplitude)` pairs, summing repeated labels.
    pub fn from_terms<I>(table: Arc<ModeTable>, cutoff: Option<usize>, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (BasisLabel, Complex64)>,
    {
        let mut v = FockVector::zero(table, cutoff)?;
        for (label, amp) in terms {
            v.check_label(&label)?;
            *v.amps.entry(label).or_default() += amp;
        }
        v.prune();
        Ok(v)
    }

    fn check_label(&self, label: &BasisLabel) -> Result<()> {
        if label.len() != self.table.len() {
            return Err(Error::InvalidLabel(format!(
                "label has {} entries, table has {} modes",
                label.len(),
                self.table.len()
            )));
        }
        let max = match self.cutoff {
            Some(c) => c,
            None => 1,
        };
        if label.0.iter().any(|&n| n > max) {
            return Err(Error::InvalidLabel(format!("occupation above {max}")));
        }
        Ok(())
    }

    pub fn table(&self) -> &Arc<ModeTable> {
        &self.table
    }

    pub fn statistics(&self) -> Statistics {
        self.table.statistics()
    }

    pub fn cutoff(&self) -> Option<usize> {
        self.cutoff.map(|c| c as usize)
    }

    /// Squared norm discarded by creation operators at the cutoff.
    pub fn truncation_loss(&self) -> f64 {
        self.truncation_loss
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_zero(&self) -> bool {
        self.amps.is_empty()
    }

    /// Terms in ascending label order.
    pub fn iter(&self) -> impl Iterator<Item = (&BasisLabel, &Complex64)> {
        self.amps.iter()
    }

    pub fn amplitude(&self, label: &BasisLabel) -> Complex64 {
        self.amps.get(label).copied().unwrap_or_default()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scaled(&self, factor: Complex64) -> FockVector {
        let mut out = self.clone();
        for a in out.amps.values_mut() {
            *a *= factor;
        }
        out.truncation_loss *= factor.norm_sqr();
        out.prune();
        out
    }

    pub fn normalized(&self) -> Result<FockVector> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroState);
        }
        Ok(self.scaled(Complex64::new(1.0 / n, 0.0)))
    }

    fn prune(&mut self) {
        self.amps.retain(|_, a| a.norm() >= PRUNE_THRESHOLD);
    }

    fn same_space(&self, other: &FockVector) -> Result<()> {
        if !(Arc::ptr_eq(&self.table, &other.table) || self.table == other.table)
            || self.cutoff != other.cutoff
        {
            return Err(Error::TableMismatch);
        }
        Ok(())
    }

    /// `<self|other>`, conjugate-linear in `self`.
    pub fn inner_product(&self, other: &FockVector) -> Result<Complex64> {
        self.same_space(other)?;
        let (small, large, flip) = if self.len() <= other.len() {
            (self, other, false)
        } else {
            (other, self, true)
        };
        let mut acc = Complex64::default();
        for (label, a) in &small.amps {
            if let Some(b) = large.amps.get(label) {
                acc += if flip { b.conj() * a } else { a.conj() * b };
            }
        }
        Ok(acc)
    }

    /// `alpha * self + other`.
    pub fn axpy(&self, alpha: Complex64, other: &FockVector) -> Result<FockVector> {
        self.same_space(other)?;
        let mut out = other.clone();
        for (label, a) in &self.amps {
            *out.amps.entry(label.clone()).or_default() += alpha * a;
        }
        out.truncation_loss += alpha.norm_sqr() * self.truncation_loss;
        out.prune();
        Ok(out)
    }

    pub fn add(&self, other: &FockVector) -> Result<FockVector> {
        self.axpy(Complex64::new(1.0, 0.0), other)
    }

    /// Largest termwise amplitude difference.
    pub fn max_abs_diff(&self, other: &FockVector) -> Result<f64> {
        Ok(self
            .axpy(Complex64::new(-1.0, 0.0), other)?
            .amps
            .values()
            .map(|a| a.norm())
            .fold(0.0, f64::max))
    }

    /// `min over phases |e^{iφ} self - other|`.
    pub fn distance_up_to_phase(&self, other: &FockVector) -> Result<f64> {
        let overlap = self.inner_product(other)?;
        let phase = if overlap.norm() > 0.0 { overlap.conj() / overlap.norm() } else { Complex64::new(1.0, 0.0) };
        Ok(other.scaled(phase).axpy(Complex64::new(-1.0, 0.0), self)?.norm())
    }

    pub fn apply_creation(&self, mode: &ModeIndex) -> Result<FockVector> {
        let pos = self.table.require_position(mode)?;
        let mut out = FockVector { amps: BTreeMap::new(), truncation_loss: self.truncation_loss, ..self.clone_shell() };
        for (label, amp) in &self.amps {
            let n = label.0[pos];
            match self.cutoff {
                None => {
                    if n == 1 {
                        continue;
                    }
                    let mut new = label.clone();
                    new.0[pos] = 1;
                    let sign = prefix_sign(label, pos);
                    *out.amps.entry(new).or_default() += amp * sign;
                }
                Some(cut) => {
                    let factor = ((n as f64) + 1.0).sqrt();
                    if n >= cut {
                        out.truncation_loss += amp.norm_sqr() * factor * factor;
                        continue;
                    }
                    let mut new = label.clone();
                    new.0[pos] = n + 1;
                    *out.amps.entry(new).or_default() += amp * factor;
                }
            }
        }
        out.prune();
        Ok(out)
    }

    pub fn apply_annihilation(&self, mode: &ModeIndex) -> Result<FockVector> {
        let pos = self.table.require_position(mode)?;
        let mut out = FockVector { amps: BTreeMap::new(), truncation_loss: self.truncation_loss, ..self.clone_shell() };
        for (label, amp) in &self.amps {
            let n = label.0[pos];
            if n == 0 {
                continue;
            }
            let mut new = label.clone();
            new.0[pos] = n - 1;
            let factor = match self.cutoff {
                None => prefix_sign(label, pos),
                Some(_) => (n as f64).sqrt(),
            };
            *out.amps.entry(new).or_default() += amp * factor;
        }
        out.prune();
        Ok(out)
    }

    fn clone_shell(&self) -> FockVector {
        FockVector {
            table: self.table.clone(),
            cutoff: self.cutoff,
            amps: BTreeMap::new(),
            truncation_loss: 0.0,
        }
    }

    /// `self ⊗ other` with `self`'s modes placed before `other`'s.
    pub fn tensor_concat(&self, other: &FockVector) -> Result<FockVector> {
        if self.table.field() != other.table.field() || self.cutoff != other.cutoff {
            return Err(Error::TableMismatch);
        }
        if let Some(m) = self.table.modes().iter().find(|m| other.table.position(m).is_some()) {
            return Err(Error::OverlappingBlocks(m.to_string()));
        }
        let mut modes = self.table.modes().to_vec();
        modes.extend_from_slice(other.table.modes());
        let table = Arc::new(ModeTable::from_modes(self.table.field(), modes)?);
        let mut amps = BTreeMap::new();
        for (la, a) in &self.amps {
            for (lb, b) in &other.amps {
                amps.insert(la.concat(lb), a * b);
            }
        }
        let mut out = FockVector {
            table,
            cutoff: self.cutoff,
            amps,
            truncation_loss: self.truncation_loss * other.norm_sqr()
                + other.truncation_loss * self.norm_sqr(),
        };
        out.prune();
        Ok(out)
    }

    /// Same amplitudes viewed over an equal-content table (e.g. to share an `Arc`).
    pub fn with_table(&self, table: Arc<ModeTable>) -> Result<FockVector> {
        if *table != *self.table {
            return Err(Error::TableMismatch);
        }
        Ok(FockVector { table, ..self.clone() })
    }

    /// Drops bosonic terms with any occupation above `cutoff`; returns the dropped weight.
    pub fn truncate_to(&self, cutoff: usize) -> Result<(FockVector, f64)> {
        let mut out = FockVector::zero(self.table.clone(), Some(cutoff))?;
        let mut dropped = 0.0;
        for (label, a) in &self.amps {
            if label.0.iter().all(|&n| n as usize <= cutoff) {
                out.amps.insert(label.clone(), *a);
            } else {
                dropped += a.norm_sqr();
            }
        }
        out.truncation_loss = self.truncation_loss + dropped;
        Ok((out, dropped))
    }

    /// Reinterprets the vector on a table of the same length, moving no amplitudes.
    pub(crate) fn relabeled_raw(
        table: Arc<ModeTable>,
        cutoff: Option<u16>,
        amps: BTreeMap<BasisLabel, Complex64>,
        truncation_loss: f64,
    ) -> FockVector {
        let mut v = FockVector { table, cutoff, amps, truncation_loss };
        v.prune();
        v
    }

    pub(crate) fn raw_cutoff(&self) -> Option<u16> {
        self.cutoff
    }
}

/// `(-1)^(number of occupied modes strictly before pos)`.
fn prefix_sign(label: &BasisLabel, pos: usize) -> f64 {
    let occupied = label.0[..pos].iter().filter(|&&n| n != 0).count();
    if occupied % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn half() -> HalfInt {
        HalfInt::from_twice(1)
    }

    fn spin_half_sector() -> Arc<ModeTable> {
        Arc::new(ModeTable::sector(Field::fermi(half()).unwrap(), half()).unwrap())
    }

    fn ket(table: &Arc<ModeTable>, bits: &str) -> FockVector {
        FockVector::basis(table.clone(), BasisLabel::from_bits(bits).unwrap(), None).unwrap()
    }

    #[test]
    fn half_int_parsing_and_display() {
        assert_eq!("3/2".parse::<HalfInt>().unwrap(), HalfInt::from_twice(3));
        assert_eq!("-1/2".parse::<HalfInt>().unwrap(), HalfInt::from_twice(-1));
        assert_eq!("1".parse::<HalfInt>().unwrap(), HalfInt::from_twice(2));
        assert_eq!("0.5".parse::<HalfInt>().unwrap(), HalfInt::from_twice(1));
        assert!("1/3".parse::<HalfInt>().is_err());
        assert_eq!(HalfInt::from_twice(-3).to_string(), "-3/2");
        assert_eq!(HalfInt::from_twice(2).to_string(), "1");
    }

    #[test]
    fn spin_half_table_matches_block_order() {
        let t = build_mode_table(Field::fermi(half()).unwrap()).unwrap();
        assert_eq!(t.len(), 8);
        let up = half();
        assert_eq!(
            &t.modes()[..4],
            &[
                ModeIndex::c(up, Wedge::I),
                ModeIndex::d(-up, Wedge::II),
                ModeIndex::d(up, Wedge::I),
                ModeIndex::c(-up, Wedge::II)
            ]
        );
        assert_eq!(t.modes()[4], ModeIndex::c(-up, Wedge::I));
    }

    #[test]
    fn scalar_boson_table() {
        let t = build_mode_table(Field::bose(HalfInt::ZERO).unwrap()).unwrap();
        assert_eq!(t.modes(), &[ModeIndex::a(HalfInt::ZERO, Wedge::I), ModeIndex::a(HalfInt::ZERO, Wedge::II)]);
    }

    #[test]
    fn mode_counts() {
        let t = build_mode_table(Field::fermi(HalfInt::from_twice(3)).unwrap()).unwrap();
        assert_eq!(t.len(), 16);
        let t = build_mode_table(Field::bose(HalfInt::from_twice(2)).unwrap()).unwrap();
        assert_eq!(t.len(), 6);
    }

    #[test]
    fn spin_statistics_mismatch_rejected() {
        assert!(Field::fermi(HalfInt::from_twice(2)).is_err());
        assert!(Field::bose(HalfInt::from_twice(1)).is_err());
        assert!(Field::bose(HalfInt::from_twice(-2)).is_err());
    }

    #[test]
    fn fermionic_creation_signs() {
        let t = spin_half_sector();
        let m0 = t.modes()[0];
        let m1 = t.modes()[1];
        let out = ket(&t, "0000").apply_creation(&m0).unwrap();
        assert_eq!(out.amplitude(&BasisLabel::from_bits("1000").unwrap()), Complex64::new(1.0, 0.0));
        let out = ket(&t, "1000").apply_creation(&m1).unwrap();
        assert_eq!(out.amplitude(&BasisLabel::from_bits("1100").unwrap()), Complex64::new(-1.0, 0.0));
        assert!(ket(&t, "1000").apply_creation(&m0).unwrap().is_zero());
    }

    #[test]
    fn fermionic_annihilation() {
        let t = spin_half_sector();
        let m0 = t.modes()[0];
        let out = ket(&t, "1000").apply_annihilation(&m0).unwrap();
        assert_eq!(out.amplitude(&BasisLabel::from_bits("0000").unwrap()), Complex64::new(1.0, 0.0));
        assert!(ket(&t, "0000").apply_annihilation(&m0).unwrap().is_zero());
    }

    #[test]
    fn bosonic_ladder() {
        let f = Field::bose(HalfInt::ZERO).unwrap();
        let t = Arc::new(build_mode_table(f).unwrap());
        let v = FockVector::basis(t.clone(), BasisLabel::from_slice(&[3, 0]), Some(5)).unwrap();
        let out = v.apply_annihilation(&t.modes()[0]).unwrap();
        let amp = out.amplitude(&BasisLabel::from_slice(&[2, 0]));
        assert!((amp.re - 3f64.sqrt()).abs() < 1e-15);

        let top = FockVector::basis(t.clone(), BasisLabel::from_slice(&[5, 0]), Some(5)).unwrap();
        let out = top.apply_creation(&t.modes()[0]).unwrap();
        assert!(out.is_zero());
        assert!((out.truncation_loss() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_mode_rejected() {
        let t = spin_half_sector();
        let foreign = ModeIndex::c(-half(), Wedge::I);
        assert!(matches!(ket(&t, "0000").apply_creation(&foreign), Err(Error::UnknownMode(_))));
    }

    #[test]
    fn concat_and_inner_products() {
        let f = Field::fermi(half()).unwrap();
        let modes = ModeTable::sector_modes(f, half()).unwrap();
        let right = Arc::new(ModeTable::from_modes(f, modes[..2].to_vec()).unwrap());
        let left = Arc::new(ModeTable::from_modes(f, modes[2..].to_vec()).unwrap());
        let u = ket(&right, "10");
        let v = ket(&left, "01");
        let w = u.tensor_concat(&v).unwrap();
        assert_eq!(w.amplitude(&BasisLabel::from_bits("1001").unwrap()), Complex64::new(1.0, 0.0));

        let a = Complex64::new(0.6, 0.0);
        let b = Complex64::new(0.0, 0.8);
        let sup = ket(&right, "00").scaled(a).add(&ket(&right, "11").scaled(b)).unwrap();
        let w = sup.tensor_concat(&ket(&left, "00")).unwrap();
        assert_eq!(w.amplitude(&BasisLabel::from_bits("0000").unwrap()), a);
        assert_eq!(w.amplitude(&BasisLabel::from_bits("1100").unwrap()), b);
        assert!((w.norm() - 1.0).abs() < 1e-15);

        assert!(matches!(u.tensor_concat(&u), Err(Error::OverlappingBlocks(_))));

        let x = ket(&right, "01");
        assert_eq!(x.inner_product(&x).unwrap(), Complex64::new(1.0, 0.0));
        assert_eq!(x.inner_product(&ket(&right, "10")).unwrap(), Complex64::default());
        assert!(matches!(x.inner_product(&v), Err(Error::TableMismatch)));

        for r in [0.0, 0.3, 1.1, 2.9] {
            let s = ket(&right, "00")
                .scaled(Complex64::new(f64::cos(r), 0.0))
                .add(&ket(&right, "11").scaled(Complex64::new(f64::sin(r), 0.0)))
                .unwrap();
            assert!((s.norm() - 1.0).abs() < 1e-15);
        }
    }

    fn all_bitstrings(n: usize) -> Vec<BasisLabel> {
        (0..1u32 << n)
            .map(|k| BasisLabel((0..n).map(|i| ((k >> (n - 1 - i)) & 1) as u16).collect()))
            .collect()
    }

    fn check_anticommutation(table: Arc<ModeTable>, labels: &[BasisLabel]) {
        let modes = table.modes().to_vec();
        for label in labels {
            let b = FockVector::basis(table.clone(), label.clone(), None).unwrap();
            for (i, mi) in modes.iter().enumerate() {
                for (j, mj) in modes.iter().enumerate() {
                    let ab = b.apply_creation(mj).unwrap().apply_annihilation(mi).unwrap();
                    let ba = b.apply_annihilation(mi).unwrap().apply_creation(mj).unwrap();
                    let sum = ab.add(&ba).unwrap();
                    let expected = if i == j { b.clone() } else { b.scaled(Complex64::default()) };
                    assert_eq!(sum.max_abs_diff(&expected).unwrap(), 0.0);

                    let cc = b.apply_creation(mj).unwrap().apply_creation(mi).unwrap();
                    let cc2 = b.apply_creation(mi).unwrap().apply_creation(mj).unwrap();
                    assert!(cc.add(&cc2).unwrap().is_zero());
                }
            }
        }
    }

    #[test]
    fn canonical_anticommutation_spin_half() {
        let t = Arc::new(build_mode_table(Field::fermi(half()).unwrap()).unwrap());
        check_anticommutation(t, &all_bitstrings(8));
    }

    #[test]
    fn canonical_anticommutation_spin_three_halves() {
        // 2^16 basis vectors times 256 mode pairs is slow; a fixed pseudo-random
        // sample of 512 labels over the full table exercises every prefix length.
        let t = Arc::new(build_mode_table(Field::fermi(HalfInt::from_twice(3)).unwrap()).unwrap());
        let labels: Vec<BasisLabel> = (0u32..512)
            .map(|k| {
                let x = (k.wrapping_mul(40503).wrapping_add(17)) & 0xffff;
                BasisLabel((0..16).map(|i| ((x >> (15 - i)) & 1) as u16).collect())
            })
            .collect();
        check_anticommutation(t, &labels);
    }

    #[test]
    fn bosonic_commutation_below_cutoff() {
        let f = Field::bose(HalfInt::from_twice(2)).unwrap();
        let t = Arc::new(ModeTable::from_modes(f, build_mode_table(f).unwrap().modes()[..3].to_vec()).unwrap());
        let cutoff = 4;
        for n0 in 0..cutoff {
            for n1 in 0..cutoff {
                for n2 in 0..cutoff {
                    let b = FockVector::basis(t.clone(), BasisLabel::from_slice(&[n0, n1, n2]), Some(cutoff as usize)).unwrap();
                    for (i, mi) in t.modes().iter().enumerate() {
                        for (j, mj) in t.modes().iter().enumerate() {
                            let ab = b.apply_creation(mj).unwrap().apply_annihilation(mi).unwrap();
                            let ba = b.apply_annihilation(mi).unwrap().apply_creation(mj).unwrap();
                            let comm = ba.axpy(Complex64::new(-1.0, 0.0), &ab).unwrap();
                            let expected = if i == j { b.clone() } else { b.scaled(Complex64::default()) };
                            assert!(comm.max_abs_diff(&expected).unwrap() < 1e-14);
                        }
                    }
                }
            }
        }
    }

    fn arb_sector_vector() -> impl Strategy<Value = Vec<(u8, f64, f64)>> {
        prop::collection::vec((0u8..16, -1.0..1.0f64, -1.0..1.0f64), 1..8)
    }

    fn build(t: &Arc<ModeTable>, terms: &[(u8, f64, f64)]) -> FockVector {
        FockVector::from_terms(
            t.clone(),
            None,
            terms.iter().map(|&(k, re, im)| {
                let bits = format!("{k:04b}");
                (BasisLabel::from_bits(&bits).unwrap(), Complex64::new(re, im))
            }),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn double_creation_vanishes(terms in arb_sector_vector(), pos in 0usize..4) {
            let t = spin_half_sector();
            let v = build(&t, &terms);
            let m = t.modes()[pos];
            prop_assert!(v.apply_creation(&m).unwrap().apply_creation(&m).unwrap().is_zero());
        }

        #[test]
        fn concat_is_associative_and_norm_multiplicative(
            a in arb_sector_vector(), b in arb_sector_vector(), c in arb_sector_vector()
        ) {
            let f = Field::fermi(HalfInt::from_twice(3)).unwrap();
            let full = build_mode_table(f).unwrap();
            let tables: Vec<Arc<ModeTable>> = full.modes().chunks(4).take(3)
                .map(|ch| Arc::new(ModeTable::from_modes(f, ch.to_vec()).unwrap())).collect();
            let (u, v, w) = (build(&tables[0], &a), build(&tables[1], &b), build(&tables[2], &c));
            let left = u.tensor_concat(&v).unwrap().tensor_concat(&w).unwrap();
            let right = u.tensor_concat(&v.tensor_concat(&w).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-14);
            let expected = u.norm() * v.norm() * w.norm();
            prop_assert!((left.norm() - expected).abs() < 1e-12 * expected.max(1.0));
        }
    }
}
